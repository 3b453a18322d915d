//! k-means (k-means++ seeding, Lloyd iterations, best of several restarts),
//! elbow-based choice of k, and relabelling of clusters by mean IR.

use std::io::Write;

use ndarray::{Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::GeoUnitId;
use crate::seed;
use crate::stats::FiveNumber;
use crate::target::TargetVector;

#[derive(Debug, Error, PartialEq)]
pub enum ClusterError {
    #[error("k={k} exceeds the number of units ({units})")]
    KExceedsUnits { k: usize, units: usize },
    #[error("k must be positive")]
    ZeroK,
    #[error("input contains non-finite values")]
    NonFinite,
    #[error("k range needs at least 3 ascending values, got {0:?}")]
    RangeTooShort(Vec<usize>),
    #[error("k range must be strictly ascending: {0:?}")]
    RangeNotSorted(Vec<usize>),
    #[error("cluster assignment and target cover different units")]
    UnitMismatch,
    #[error("cluster {0} has no members")]
    EmptyCluster(usize),
}

pub type Result<T> = std::result::Result<T, ClusterError>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KMeansOptions {
    pub n_init: usize,
    pub max_iter: usize,
    /// Stop when no centroid moves farther than this.
    pub tol: f64,
    pub seed: u64,
}

impl Default for KMeansOptions {
    fn default() -> Self {
        Self {
            n_init: 10,
            max_iter: 300,
            tol: 1e-8,
            seed: 0,
        }
    }
}

/// Result of a k-means fit before relabelling.
#[derive(Debug, Clone, PartialEq)]
pub struct KMeansFit {
    pub k: usize,
    pub centroids: Array2<f64>,
    pub assignment: Vec<usize>,
    pub wcss: f64,
    pub iterations: usize,
    pub converged: bool,
    /// WCSS after every assignment step of the winning run.
    pub wcss_trace: Vec<f64>,
    /// Index of the restart that produced this fit.
    pub run: usize,
}

fn sq_dist(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum()
}

// Closest centroid per row; on a distance tie the previous assignment is kept,
// otherwise the lowest index wins.
fn nearest(x: ArrayView2<f64>, centroids: &Array2<f64>, previous: Option<&[usize]>) -> Vec<usize> {
    x.axis_iter(Axis(0))
        .enumerate()
        .map(|(i, row)| {
            let mut best = 0;
            let mut best_d = f64::INFINITY;
            for (c, cent) in centroids.axis_iter(Axis(0)).enumerate() {
                let d = sq_dist(row, cent);
                if d < best_d {
                    best_d = d;
                    best = c;
                }
            }
            if let Some(prev) = previous {
                if sq_dist(row, centroids.row(prev[i])) == best_d {
                    best = prev[i];
                }
            }
            best
        })
        .collect()
}

/// Sum of squared distances from each point to its assigned centroid.
pub fn wcss(x: ArrayView2<f64>, centroids: &Array2<f64>, assignment: &[usize]) -> f64 {
    x.axis_iter(Axis(0))
        .zip(assignment)
        .map(|(row, &c)| sq_dist(row, centroids.row(c)))
        .sum()
}

fn plus_plus_init<R: Rng>(x: ArrayView2<f64>, k: usize, rng: &mut R) -> Array2<f64> {
    let n = x.nrows();
    let mut centroids = Array2::zeros((k, x.ncols()));
    let first = rng.random_range(0..n);
    centroids.row_mut(0).assign(&x.row(first));
    let mut d2: Vec<f64> = x.axis_iter(Axis(0)).map(|r| sq_dist(r, x.row(first))).collect();
    for c in 1..k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut pick = n - 1;
            for (i, &d) in d2.iter().enumerate() {
                acc += d;
                if acc > target && d > 0.0 {
                    pick = i;
                    break;
                }
            }
            pick
        } else {
            rng.random_range(0..n)
        };
        centroids.row_mut(c).assign(&x.row(pick));
        for (i, row) in x.axis_iter(Axis(0)).enumerate() {
            d2[i] = d2[i].min(sq_dist(row, x.row(pick)));
        }
    }
    centroids
}

// Means of the assigned points. An empty cluster takes over the point
// farthest from its current centroid among clusters with more than one member.
fn update_centroids(x: ArrayView2<f64>, centroids: &Array2<f64>, assignment: &mut [usize]) -> Array2<f64> {
    let k = centroids.nrows();
    let mut counts = vec![0usize; k];
    for &a in assignment.iter() {
        counts[a] += 1;
    }
    for empty in 0..k {
        if counts[empty] > 0 {
            continue;
        }
        let donor = (0..x.nrows())
            .filter(|&i| counts[assignment[i]] > 1)
            .map(|i| (i, sq_dist(x.row(i), centroids.row(assignment[i]))))
            .fold(None::<(usize, f64)>, |best, (i, d)| match best {
                Some((_, bd)) if bd >= d => best,
                _ => Some((i, d)),
            });
        if let Some((i, _)) = donor {
            counts[assignment[i]] -= 1;
            assignment[i] = empty;
            counts[empty] = 1;
        }
    }
    let mut sums = Array2::<f64>::zeros(centroids.dim());
    for (row, &a) in x.axis_iter(Axis(0)).zip(assignment.iter()) {
        let mut s = sums.row_mut(a);
        s += &row;
    }
    for (c, mut s) in sums.axis_iter_mut(Axis(0)).enumerate() {
        s /= counts[c] as f64;
    }
    sums
}

fn lloyd(x: ArrayView2<f64>, k: usize, opts: &KMeansOptions, run: usize) -> KMeansFit {
    let mut rng = seed::rng(seed::derive_indexed(opts.seed, run));
    let mut centroids = plus_plus_init(x, k, &mut rng);
    let mut assignment = nearest(x, &centroids, None);
    let mut trace = vec![wcss(x, &centroids, &assignment)];
    let mut converged = false;
    let mut iterations = 0;
    while iterations < opts.max_iter {
        iterations += 1;
        let updated = update_centroids(x, &centroids, &mut assignment);
        let shift = centroids
            .axis_iter(Axis(0))
            .zip(updated.axis_iter(Axis(0)))
            .map(|(a, b)| sq_dist(a, b).sqrt())
            .fold(0.0, f64::max);
        centroids = updated;
        let next = nearest(x, &centroids, Some(&assignment));
        let changed = next != assignment;
        assignment = next;
        trace.push(wcss(x, &centroids, &assignment));
        if shift < opts.tol && !changed {
            converged = true;
            break;
        }
    }
    KMeansFit {
        k,
        wcss: *trace.last().expect("trace is non-empty"),
        centroids,
        assignment,
        iterations,
        converged,
        wcss_trace: trace,
        run,
    }
}

/// Best of `n_init` seeded runs by WCSS (ties go to the lowest run index).
pub fn kmeans(x: ArrayView2<f64>, k: usize, opts: &KMeansOptions) -> Result<KMeansFit> {
    let n = x.nrows();
    if k == 0 {
        return Err(ClusterError::ZeroK);
    }
    if k > n {
        return Err(ClusterError::KExceedsUnits { k, units: n });
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(ClusterError::NonFinite);
    }
    let runs: Vec<KMeansFit> = (0..opts.n_init.max(1))
        .into_par_iter()
        .map(|run| lloyd(x, k, opts, run))
        .collect();
    Ok(runs
        .into_iter()
        .reduce(|best, f| if f.wcss < best.wcss { f } else { best })
        .expect("at least one run"))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ElbowResult {
    pub k: usize,
    pub ks: Vec<usize>,
    pub wcss: Vec<f64>,
    pub fits: Vec<KMeansFit>,
}

impl ElbowResult {
    pub fn chosen_fit(&self) -> &KMeansFit {
        let i = self.ks.iter().position(|&k| k == self.k).expect("chosen k is in range");
        &self.fits[i]
    }
}

/// Index of the knee: the interior point with the largest perpendicular
/// distance below the chord joining the first and last points. Ties, and
/// curves with no point below the chord, resolve to the earliest interior
/// point.
pub fn knee_index(ks: &[usize], wcss: &[f64]) -> usize {
    let last = ks.len() - 1;
    let (k0, w0) = (ks[0] as f64, wcss[0]);
    let (k1, w1) = (ks[last] as f64, wcss[last]);
    let norm = (k1 - k0).hypot(w0 - w1);
    let dist = |i: usize| ((k1 - k0) * (w0 - wcss[i]) - (ks[i] as f64 - k0) * (w0 - w1)) / norm;
    let mut best = 1;
    let mut best_d = dist(1);
    for i in 2..last {
        let d = dist(i);
        if d > best_d {
            best = i;
            best_d = d;
        }
    }
    best
}

pub fn elbow_select_k(x: ArrayView2<f64>, k_range: &[usize], opts: &KMeansOptions) -> Result<ElbowResult> {
    if k_range.len() < 3 {
        return Err(ClusterError::RangeTooShort(k_range.to_vec()));
    }
    if k_range.windows(2).any(|w| w[1] <= w[0]) {
        return Err(ClusterError::RangeNotSorted(k_range.to_vec()));
    }
    let fits = k_range
        .par_iter()
        .map(|&k| {
            let o = KMeansOptions {
                seed: seed::derive_indexed(opts.seed, k),
                ..*opts
            };
            kmeans(x, k, &o)
        })
        .collect::<Result<Vec<_>>>()?;
    let wcss: Vec<f64> = fits.iter().map(|f| f.wcss).collect();
    let k = k_range[knee_index(k_range, &wcss)];
    Ok(ElbowResult {
        k,
        ks: k_range.to_vec(),
        wcss,
        fits,
    })
}

/// Clusters with IDs ordered by mean IR: cluster `k - 1` has the highest mean.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterModel {
    pub k: usize,
    pub features: Vec<String>,
    pub units: Vec<GeoUnitId>,
    pub centroids: Vec<Vec<f64>>,
    pub assignment: Vec<usize>,
    pub wcss: f64,
    pub cluster_ir_mean: Vec<f64>,
    /// `relabel[raw_id]` is the ID a raw k-means cluster received.
    pub relabel: Vec<usize>,
}

impl ClusterModel {
    pub fn sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &a in &self.assignment {
            sizes[a] += 1;
        }
        sizes
    }

    pub fn centroid_matrix(&self) -> Array2<f64> {
        let d = self.centroids.first().map_or(0, Vec::len);
        Array2::from_shape_fn((self.k, d), |(c, j)| self.centroids[c][j])
    }

    pub fn write_csv<W: Write>(&self, target: &TargetVector, writer: W) -> std::result::Result<(), csv::Error> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["unit", "cluster_id", "ir"])?;
        for ((u, c), ir) in self.units.iter().zip(&self.assignment).zip(&target.ir) {
            w.write_record([u.as_str(), &c.to_string(), &ir.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Renumbers clusters so mean IR is non-decreasing in cluster ID; equal
/// means keep their raw index order.
pub fn relabel_by_ir(fit: &KMeansFit, units: &[GeoUnitId], features: &[String], target: &TargetVector) -> Result<ClusterModel> {
    if units != target.units.as_slice() || fit.assignment.len() != units.len() {
        return Err(ClusterError::UnitMismatch);
    }
    let k = fit.k;
    let mut sums = vec![0.0; k];
    let mut counts = vec![0usize; k];
    for (&a, &ir) in fit.assignment.iter().zip(&target.ir) {
        sums[a] += ir;
        counts[a] += 1;
    }
    if let Some(c) = counts.iter().position(|&c| c == 0) {
        return Err(ClusterError::EmptyCluster(c));
    }
    let means: Vec<f64> = sums.iter().zip(&counts).map(|(s, &c)| s / c as f64).collect();
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| means[a].total_cmp(&means[b]).then(a.cmp(&b)));
    let mut relabel = vec![0; k];
    for (new, &old) in order.iter().enumerate() {
        relabel[old] = new;
    }
    Ok(ClusterModel {
        k,
        features: features.to_vec(),
        units: units.to_vec(),
        centroids: order.iter().map(|&old| fit.centroids.row(old).to_vec()).collect(),
        assignment: fit.assignment.iter().map(|&a| relabel[a]).collect(),
        wcss: fit.wcss,
        cluster_ir_mean: order.iter().map(|&old| means[old]).collect(),
        relabel,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterSummary {
    pub cluster_id: usize,
    pub size: usize,
    pub ir: FiveNumber,
    pub members: Vec<GeoUnitId>,
}

/// Per-cluster IR boxplot summary and membership.
pub fn cluster_report(model: &ClusterModel, target: &TargetVector) -> Result<Vec<ClusterSummary>> {
    if model.units != target.units {
        return Err(ClusterError::UnitMismatch);
    }
    (0..model.k)
        .map(|c| {
            let idx: Vec<usize> = (0..model.units.len()).filter(|&i| model.assignment[i] == c).collect();
            let irs: Vec<f64> = idx.iter().map(|&i| target.ir[i]).collect();
            Ok(ClusterSummary {
                cluster_id: c,
                size: idx.len(),
                ir: FiveNumber::of(&irs).ok_or(ClusterError::EmptyCluster(c))?,
                members: idx.iter().map(|&i| model.units[i].clone()).collect(),
            })
        })
        .collect()
}
