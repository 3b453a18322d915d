//! RReliefF relevance estimation for a continuous target.
//!
//! For each sampled instance `R` and each of its `k` nearest neighbours `I`
//! (Euclidean distance, rank `r` = 1..k) with weight
//! `d(r) = exp(-(r/sigma)^2) / sum_l exp(-(l/sigma)^2)`:
//!
//! ```text
//! N_dC       += diff(y, R, I) * d
//! N_dA[f]    += diff(f, R, I) * d
//! N_dCdA[f]  += diff(y, R, I) * diff(f, R, I) * d
//! W[f] = N_dCdA[f] / N_dC - (N_dA[f] - N_dCdA[f]) / (m - N_dC)
//! ```
//!
//! `diff` is the absolute difference scaled by the observed range of the
//! attribute (zero for a constant attribute).

use ndarray::{ArrayView2, Axis};
use rand::seq::index;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{Result, SelectError};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RelieffOptions {
    pub k_neighbors: usize,
    /// Number of sampled instances; all units when unset.
    pub m_samples: Option<usize>,
    pub sigma: f64,
    pub seed: u64,
}

impl Default for RelieffOptions {
    fn default() -> Self {
        Self {
            k_neighbors: 10,
            m_samples: None,
            sigma: 20.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RelieffResult {
    pub weights: Vec<f64>,
    pub m_samples: usize,
    pub degenerate_target: bool,
}

struct Accum {
    ndc: f64,
    nda: Vec<f64>,
    ndcda: Vec<f64>,
}

pub fn rrelieff_weights(x: ArrayView2<f64>, y: &[f64], opts: &RelieffOptions) -> Result<RelieffResult> {
    let (n, p) = x.dim();
    if n != y.len() {
        return Err(SelectError::DimensionMismatch(format!("{n} rows vs {} targets", y.len())));
    }
    let k = opts.k_neighbors;
    if k == 0 || k >= n {
        return Err(SelectError::KTooLarge { k, units: n });
    }
    let m = opts.m_samples.unwrap_or(n);
    if m == 0 || m > n {
        return Err(SelectError::InvalidSampleCount { m, units: n });
    }

    let (ymin, ymax) = min_max(y.iter().copied());
    let y_range = ymax - ymin;
    if y_range == 0.0 {
        return Ok(RelieffResult {
            weights: vec![0.0; p],
            m_samples: m,
            degenerate_target: true,
        });
    }
    let ranges: Vec<f64> = x
        .axis_iter(Axis(1))
        .map(|c| {
            let (lo, hi) = min_max(c.iter().copied());
            hi - lo
        })
        .collect();

    let raw: Vec<f64> = (1..=k).map(|r| (-(r as f64 / opts.sigma).powi(2)).exp()).collect();
    let total: f64 = raw.iter().sum();
    let rank_weight: Vec<f64> = raw.iter().map(|w| w / total).collect();

    let samples: Vec<usize> = if m == n {
        (0..n).collect()
    } else {
        let mut s = index::sample(&mut seed::rng(opts.seed), n, m).into_vec();
        s.sort_unstable();
        s
    };

    let parts: Vec<Accum> = samples
        .par_iter()
        .map(|&i| {
            let row_i = x.row(i);
            let mut dist: Vec<(f64, usize)> = (0..n)
                .filter(|&j| j != i)
                .map(|j| {
                    let d2: f64 = row_i.iter().zip(x.row(j)).map(|(a, b)| (a - b) * (a - b)).sum();
                    (d2, j)
                })
                .collect();
            dist.select_nth_unstable_by(k - 1, |a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            let mut nearest = dist[..k].to_vec();
            nearest.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));

            let mut acc = Accum {
                ndc: 0.0,
                nda: vec![0.0; p],
                ndcda: vec![0.0; p],
            };
            for (rank, &(_, j)) in nearest.iter().enumerate() {
                let d = rank_weight[rank];
                let dy = (y[i] - y[j]).abs() / y_range;
                acc.ndc += dy * d;
                let row_j = x.row(j);
                for f in 0..p {
                    if ranges[f] == 0.0 {
                        continue;
                    }
                    let da = (row_i[f] - row_j[f]).abs() / ranges[f];
                    acc.nda[f] += da * d;
                    acc.ndcda[f] += dy * da * d;
                }
            }
            acc
        })
        .collect();

    let mut ndc = 0.0;
    let mut nda = vec![0.0; p];
    let mut ndcda = vec![0.0; p];
    for part in &parts {
        ndc += part.ndc;
        for f in 0..p {
            nda[f] += part.nda[f];
            ndcda[f] += part.ndcda[f];
        }
    }
    let m_f = m as f64;
    let weights = (0..p)
        .map(|f| {
            let hit = if ndc > 0.0 { ndcda[f] / ndc } else { 0.0 };
            let miss = if m_f - ndc > 0.0 {
                (nda[f] - ndcda[f]) / (m_f - ndc)
            } else {
                0.0
            };
            hit - miss
        })
        .collect();
    Ok(RelieffResult {
        weights,
        m_samples: m,
        degenerate_target: false,
    })
}

fn min_max(values: impl Iterator<Item = f64>) -> (f64, f64) {
    values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)))
}

/// Features whose weight exceeds `threshold`, in column order.
pub fn rrelieff_select(names: &[String], weights: &[f64], threshold: f64) -> Vec<String> {
    names
        .iter()
        .zip(weights)
        .filter(|(_, w)| **w > threshold)
        .map(|(n, _)| n.clone())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn planted(seed: u64, n: usize) -> (Array2<f64>, Vec<f64>) {
        let mut rng = seed::rng(seed);
        let x = Array2::from_shape_fn((n, 3), |(_, j)| if j == 2 { 4.0 } else { rng.sample(StandardNormal) });
        let y = (0..n)
            .map(|i| x[[i, 0]] + 0.05 * rng.sample::<f64, _>(StandardNormal))
            .collect();
        (x, y)
    }

    #[test]
    fn constant_feature_weighs_zero() {
        let (x, y) = planted(1, 50);
        let r = rrelieff_weights(x.view(), &y, &RelieffOptions::default()).unwrap();
        assert_eq!(r.weights[2], 0.0);
    }

    #[test]
    fn planted_feature_beats_noise_every_seed() {
        for s in 0..20 {
            let (x, y) = planted(100 + s, 80);
            let opts = RelieffOptions {
                seed: s,
                ..Default::default()
            };
            let r = rrelieff_weights(x.view(), &y, &opts).unwrap();
            assert!(r.weights[0] > r.weights[1], "seed {s}: {:?}", r.weights);
        }
    }

    #[test]
    fn degenerate_target_all_zero() {
        let (x, _) = planted(2, 20);
        let r = rrelieff_weights(x.view(), &[1.5; 20], &RelieffOptions::default()).unwrap();
        assert!(r.degenerate_target);
        assert!(r.weights.iter().all(|&w| w == 0.0));
    }

    #[test]
    fn weights_bounded_and_seeded_subsample_reproducible() {
        let mut rng = seed::rng(4);
        let x = Array2::from_shape_fn((40, 6), |_| rng.sample::<f64, _>(StandardNormal));
        let y: Vec<f64> = (0..40).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let opts = RelieffOptions {
            m_samples: Some(15),
            seed: 77,
            ..Default::default()
        };
        let a = rrelieff_weights(x.view(), &y, &opts).unwrap();
        let b = rrelieff_weights(x.view(), &y, &opts).unwrap();
        assert_eq!(a, b);
        assert!(a.weights.iter().all(|w| (-1.0..=1.0).contains(w)));
    }

    #[test]
    fn parameter_errors() {
        let (x, y) = planted(3, 10);
        let k = RelieffOptions {
            k_neighbors: 10,
            ..Default::default()
        };
        assert_eq!(
            rrelieff_weights(x.view(), &y, &k),
            Err(SelectError::KTooLarge { k: 10, units: 10 })
        );
        let m = RelieffOptions {
            k_neighbors: 3,
            m_samples: Some(11),
            ..Default::default()
        };
        assert_eq!(
            rrelieff_weights(x.view(), &y, &m),
            Err(SelectError::InvalidSampleCount { m: 11, units: 10 })
        );
    }

    #[test]
    fn threshold_selection() {
        let names = vec!["A".to_string(), "B".to_string()];
        assert_eq!(rrelieff_select(&names, &[0.3, -0.1], 0.0), vec!["A".to_string()]);
        assert!(rrelieff_select(&names, &[-0.3, -0.1], 0.0).is_empty());
    }
}
