//! Lasso by cyclic coordinate descent.
//!
//! Minimises `(1/2n) ||y - X b||^2 + lambda ||b||_1` with `X` and `y`
//! centred internally (the intercept is implicit). Columns that are constant
//! or exact copies of an earlier column are pinned at zero, so among
//! duplicated features the first in column order carries the weight.

use std::collections::HashMap;

use ndarray::{ArrayView2, Axis};
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{Result, SelectError, StandardizedMatrix};
use crate::seed;
use crate::stats::exact_sum;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LassoOptions {
    /// Stop once the largest coefficient change in a sweep is below this.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for LassoOptions {
    fn default() -> Self {
        Self {
            tol: 1e-9,
            max_iter: 10_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LassoCvOptions {
    pub folds: usize,
    pub grid_size: usize,
    pub min_ratio: f64,
    pub seed: u64,
    #[serde(flatten)]
    pub fit: LassoOptions,
}

impl Default for LassoCvOptions {
    fn default() -> Self {
        Self {
            folds: 5,
            grid_size: 50,
            min_ratio: 1e-3,
            seed: 0,
            fit: LassoOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LassoFit {
    pub coefs: Vec<f64>,
    pub intercept: f64,
    pub lambda: f64,
    pub sweeps: usize,
    pub converged: bool,
    /// Objective at the start and after every sweep.
    pub objective: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LassoSelection {
    pub selected: Vec<String>,
    pub lambda: f64,
    pub fit: LassoFit,
    pub grid: Vec<f64>,
    /// Mean validation error per grid value; empty for a single-value grid.
    pub cv_mse: Vec<f64>,
}

pub fn soft_threshold(value: f64, lambda: f64) -> f64 {
    if value > lambda {
        value - lambda
    } else if value < -lambda {
        value + lambda
    } else {
        0.0
    }
}

/// Centred design stored column-major.
struct Design {
    n: usize,
    p: usize,
    cols: Vec<f64>,
    x_mean: Vec<f64>,
    /// `x_j' x_j / n` of the centred column.
    sq: Vec<f64>,
    /// Constant or duplicate columns, held at zero.
    pinned: Vec<bool>,
}

impl Design {
    fn new(x: ArrayView2<f64>) -> Self {
        let (n, p) = x.dim();
        let mut cols = Vec::with_capacity(n * p);
        let mut x_mean = Vec::with_capacity(p);
        let mut sq = Vec::with_capacity(p);
        let mut pinned = Vec::with_capacity(p);
        let mut seen: HashMap<Vec<u64>, usize> = HashMap::new();
        for (j, col) in x.axis_iter(Axis(1)).enumerate() {
            let mean = col.sum() / n as f64;
            let start = cols.len();
            cols.extend(col.iter().map(|v| v - mean));
            let c = &cols[start..];
            let s = c.iter().map(|v| v * v).sum::<f64>() / n as f64;
            let bits: Vec<u64> = c.iter().map(|v| (v + 0.0).to_bits()).collect();
            let duplicate = seen.contains_key(&bits);
            seen.entry(bits).or_insert(j);
            x_mean.push(mean);
            sq.push(s);
            pinned.push(duplicate || s == 0.0);
        }
        Self {
            n,
            p,
            cols,
            x_mean,
            sq,
            pinned,
        }
    }

    fn col(&self, j: usize) -> &[f64] {
        &self.cols[j * self.n..(j + 1) * self.n]
    }

    fn scaled_dot(&self, j: usize, r: &[f64]) -> f64 {
        dot(self.col(j), r) / self.n as f64
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn centred(y: &[f64]) -> (Vec<f64>, f64) {
    let m = y.iter().sum::<f64>() / y.len() as f64;
    (y.iter().map(|v| v - m).collect(), m)
}

fn objective(r: &[f64], beta: &[f64], lambda: f64) -> f64 {
    let n = r.len() as f64;
    exact_sum(r.iter().map(|v| v * v)) / (2.0 * n) + lambda * exact_sum(beta.iter().map(|b| b.abs()))
}

/// Lasso objective of `beta` on the centred problem, for tests and diagnostics.
pub fn lasso_objective(x: ArrayView2<f64>, y: &[f64], beta: &[f64], lambda: f64) -> f64 {
    let d = Design::new(x);
    let (mut r, _) = centred(y);
    for j in 0..d.p {
        for (ri, xi) in r.iter_mut().zip(d.col(j)) {
            *ri -= xi * beta[j];
        }
    }
    objective(&r, beta, lambda)
}

/// Smallest penalty at which every coefficient is zero: `max_j |x_j' y| / n`.
pub fn lambda_max(x: ArrayView2<f64>, y: &[f64]) -> Result<f64> {
    check_dims(x, y)?;
    let d = Design::new(x);
    let (yc, _) = centred(y);
    Ok(lambda_max_design(&d, &yc))
}

fn lambda_max_design(d: &Design, yc: &[f64]) -> f64 {
    (0..d.p)
        .filter(|&j| !d.pinned[j])
        .map(|j| d.scaled_dot(j, yc).abs())
        .fold(0.0, f64::max)
}

fn check_dims(x: ArrayView2<f64>, y: &[f64]) -> Result<()> {
    if x.nrows() != y.len() {
        return Err(SelectError::DimensionMismatch(format!(
            "{} rows vs {} targets",
            x.nrows(),
            y.len()
        )));
    }
    if y.len() < 2 {
        return Err(SelectError::TooFewRows(y.len()));
    }
    Ok(())
}

fn descend(d: &Design, yc: &[f64], y_mean: f64, lambda: f64, opts: &LassoOptions, warm: Option<&[f64]>) -> LassoFit {
    let mut beta = warm.map_or_else(|| vec![0.0; d.p], <[f64]>::to_vec);
    let mut r = yc.to_vec();
    for j in 0..d.p {
        if beta[j] != 0.0 {
            for (ri, xi) in r.iter_mut().zip(d.col(j)) {
                *ri -= xi * beta[j];
            }
        }
    }
    let mut trace = vec![objective(&r, &beta, lambda)];
    let mut converged = false;
    let mut sweeps = 0;
    while sweeps < opts.max_iter {
        sweeps += 1;
        let prev_beta = beta.clone();
        let mut max_delta: f64 = 0.0;
        for j in 0..d.p {
            if d.pinned[j] {
                continue;
            }
            let old = beta[j];
            let rho = d.scaled_dot(j, &r) + d.sq[j] * old;
            let new = soft_threshold(rho, lambda) / d.sq[j];
            if new != old {
                let delta = new - old;
                for (ri, xi) in r.iter_mut().zip(d.col(j)) {
                    *ri -= xi * delta;
                }
                beta[j] = new;
                max_delta = max_delta.max(delta.abs());
            }
        }
        let obj = objective(&r, &beta, lambda);
        // Exact coordinate minimisation cannot raise the objective, so a rise
        // is rounding noise: keep the previous iterate and stop.
        if obj > *trace.last().expect("trace starts non-empty") {
            beta = prev_beta;
            converged = true;
            break;
        }
        trace.push(obj);
        if max_delta < opts.tol {
            converged = true;
            break;
        }
    }
    let intercept = y_mean - beta.iter().zip(&d.x_mean).map(|(b, m)| b * m).sum::<f64>();
    LassoFit {
        coefs: beta,
        intercept,
        lambda,
        sweeps,
        converged,
        objective: trace,
    }
}

pub fn lasso_fit(x: ArrayView2<f64>, y: &[f64], lambda: f64, opts: &LassoOptions) -> Result<LassoFit> {
    check_dims(x, y)?;
    let d = Design::new(x);
    let (yc, y_mean) = centred(y);
    Ok(descend(&d, &yc, y_mean, lambda, opts, None))
}

/// Log-spaced grid of `size` penalties from `lambda_max` down to
/// `min_ratio * lambda_max`.
pub fn default_grid(lambda_max: f64, size: usize, min_ratio: f64) -> Vec<f64> {
    if size <= 1 || lambda_max <= 0.0 {
        return vec![lambda_max.max(0.0)];
    }
    let step = min_ratio.ln() / (size - 1) as f64;
    (0..size)
        .map(|i| if i == 0 { lambda_max } else { lambda_max * (step * i as f64).exp() })
        .collect()
}

// Warm-started fits along a descending grid.
fn path(d: &Design, yc: &[f64], y_mean: f64, grid: &[f64], opts: &LassoOptions) -> Vec<LassoFit> {
    let mut out: Vec<LassoFit> = Vec::with_capacity(grid.len());
    for &lambda in grid {
        let warm = out.last().map(|f| f.coefs.as_slice());
        out.push(descend(d, yc, y_mean, lambda, opts, warm));
    }
    out
}

/// Chooses the penalty with the lowest mean k-fold validation error (ties go
/// to the larger penalty), refits on all units, and selects the features with
/// nonzero coefficients.
pub fn lasso_select(x: &StandardizedMatrix, y: &[f64], grid: &[f64], opts: &LassoCvOptions) -> Result<LassoSelection> {
    let z = x.z().view();
    check_dims(z, y)?;
    if grid.is_empty() {
        return Err(SelectError::GridEmpty);
    }
    if grid.iter().any(|l| !(*l >= 0.0)) || grid.windows(2).any(|w| w[1] > w[0]) {
        return Err(SelectError::InvalidGrid);
    }
    let n = y.len();
    if opts.folds < 2 || opts.folds > n {
        return Err(SelectError::TooFewUnitsForFolds {
            folds: opts.folds,
            units: n,
        });
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut seed::rng(opts.seed));
    let mut fold_of = vec![0; n];
    for (pos, &i) in order.iter().enumerate() {
        fold_of[i] = pos % opts.folds;
    }

    let cv_mse = if grid.len() == 1 {
        Vec::new()
    } else {
        let per_fold: Vec<Vec<f64>> = (0..opts.folds)
            .into_par_iter()
            .map(|f| {
                let train: Vec<usize> = (0..n).filter(|&i| fold_of[i] != f).collect();
                let test: Vec<usize> = (0..n).filter(|&i| fold_of[i] == f).collect();
                let xt = z.select(Axis(0), &train);
                let yt: Vec<f64> = train.iter().map(|&i| y[i]).collect();
                let d = Design::new(xt.view());
                let (yc, ym) = centred(&yt);
                path(&d, &yc, ym, grid, &opts.fit)
                    .iter()
                    .map(|fit| {
                        test.iter()
                            .map(|&i| {
                                let pred = fit.intercept + fit.coefs.iter().zip(z.row(i)).map(|(b, v)| b * v).sum::<f64>();
                                (y[i] - pred).powi(2)
                            })
                            .sum::<f64>()
                            / test.len() as f64
                    })
                    .collect()
            })
            .collect();
        (0..grid.len())
            .map(|g| per_fold.iter().map(|f| f[g]).sum::<f64>() / opts.folds as f64)
            .collect()
    };

    let best = if grid.len() == 1 {
        0
    } else {
        cv_mse
            .iter()
            .enumerate()
            .fold(0, |best, (g, &e)| if e < cv_mse[best] { g } else { best })
    };

    let d = Design::new(z);
    let (yc, ym) = centred(y);
    let fit = path(&d, &yc, ym, &grid[..=best], &opts.fit)
        .pop()
        .expect("grid is non-empty");
    let selected = x
        .feature_names()
        .iter()
        .zip(&fit.coefs)
        .filter(|(_, c)| c.abs() > 0.0)
        .map(|(n, _)| n.clone())
        .collect();
    Ok(LassoSelection {
        selected,
        lambda: grid[best],
        fit,
        grid: grid.to_vec(),
        cv_mse,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{FeatureTable, GeoUnitId};
    use crate::select::standardize;
    use ndarray::{array, Array2};
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn standardized(values: Array2<f64>) -> StandardizedMatrix {
        let (n, p) = values.dim();
        let t = FeatureTable::new(
            (0..n).map(|i| GeoUnitId::new(format!("u{i}")).unwrap()).collect(),
            (0..p).map(|j| format!("f{j}")).collect(),
            values,
        )
        .unwrap();
        standardize(&t).unwrap()
    }

    #[test]
    fn soft_threshold_cases() {
        assert_eq!(soft_threshold(3.0, 1.0), 2.0);
        assert_eq!(soft_threshold(-3.0, 1.0), -2.0);
        assert_eq!(soft_threshold(0.5, 1.0), 0.0);
        assert_eq!(soft_threshold(-1.0, 1.0), 0.0);
    }

    #[test]
    fn zero_penalty_matches_least_squares() {
        let x = array![[1.0], [2.0], [4.0], [7.0]];
        let y: Vec<f64> = x.column(0).iter().map(|v| 2.0 * v).collect();
        let fit = lasso_fit(x.view(), &y, 0.0, &LassoOptions::default()).unwrap();
        // Normal equations on centred data: b = sxy / sxx.
        let xm = 3.5;
        let ym = 7.0;
        let sxy: f64 = x.column(0).iter().zip(&y).map(|(a, b)| (a - xm) * (b - ym)).sum();
        let sxx: f64 = x.column(0).iter().map(|a| (a - xm).powi(2)).sum();
        assert!((fit.coefs[0] - sxy / sxx).abs() < 1e-12);
        assert!((fit.coefs[0] - 2.0).abs() < 1e-12);
        assert!(fit.intercept.abs() < 1e-12);
        assert!(fit.converged);
    }

    #[test]
    fn at_lambda_max_everything_is_zero() {
        let mut rng = crate::seed::rng(3);
        let v = Array2::from_shape_fn((30, 6), |_| rng.sample::<f64, _>(StandardNormal));
        let x = standardized(v);
        let y: Vec<f64> = (0..30).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let lmax = lambda_max(x.z().view(), &y).unwrap();
        let fit = lasso_fit(x.z().view(), &y, lmax, &LassoOptions::default()).unwrap();
        assert!(fit.coefs.iter().all(|&c| c == 0.0));
        let below = lasso_fit(x.z().view(), &y, lmax * 0.9, &LassoOptions::default()).unwrap();
        assert!(below.coefs.iter().any(|&c| c != 0.0));
    }

    #[test]
    fn duplicate_columns_first_wins() {
        let mut rng = crate::seed::rng(5);
        let n = 40;
        let a: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        let b: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        let v = Array2::from_shape_fn((n, 3), |(i, j)| if j == 2 { b[i] } else { a[i] });
        let x = standardized(v);
        let y: Vec<f64> = (0..n).map(|i| 3.0 * a[i] + 0.5 * b[i]).collect();
        let lmax = lambda_max(x.z().view(), &y).unwrap();
        let fit = lasso_fit(x.z().view(), &y, 0.2 * lmax, &LassoOptions::default()).unwrap();
        assert!(fit.coefs[0] != 0.0);
        assert_eq!(fit.coefs[1], 0.0);
    }

    #[test]
    fn planted_signal_selected() {
        let mut rng = crate::seed::rng(9);
        let n = 60;
        let v = Array2::from_shape_fn((n, 8), |_| rng.sample::<f64, _>(StandardNormal));
        let y: Vec<f64> = (0..n).map(|i| 2.0 * v[[i, 3]] + 0.05 * rng.sample::<f64, _>(StandardNormal)).collect();
        let x = standardized(v);
        let lmax = lambda_max(x.z().view(), &y).unwrap();
        let grid = default_grid(lmax, 20, 1e-3);
        let sel = lasso_select(&x, &y, &grid, &LassoCvOptions::default()).unwrap();
        assert!(sel.selected.contains(&"f3".to_string()));
        assert!(sel.lambda < lmax);
    }

    #[test]
    fn noise_at_lambda_max_selects_nothing() {
        let mut rng = crate::seed::rng(10);
        let v = Array2::from_shape_fn((25, 5), |_| rng.sample::<f64, _>(StandardNormal));
        let y: Vec<f64> = (0..25).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let x = standardized(v);
        let lmax = lambda_max(x.z().view(), &y).unwrap();
        let sel = lasso_select(&x, &y, &[lmax], &LassoCvOptions::default()).unwrap();
        assert!(sel.selected.is_empty());
    }

    #[test]
    fn grid_and_fold_errors() {
        let x = standardized(array![[1.0], [2.0], [3.0]]);
        let y = [1.0, 2.0, 3.0];
        let opts = LassoCvOptions::default();
        assert_eq!(lasso_select(&x, &y, &[], &opts), Err(SelectError::GridEmpty));
        assert_eq!(lasso_select(&x, &y, &[0.1, 0.2], &opts), Err(SelectError::InvalidGrid));
        assert_eq!(
            lasso_select(&x, &y, &[0.1], &opts),
            Err(SelectError::TooFewUnitsForFolds { folds: 5, units: 3 })
        );
        assert!(matches!(
            lasso_fit(x.z().view(), &[1.0, 2.0], 0.0, &LassoOptions::default()),
            Err(SelectError::DimensionMismatch(_))
        ));
    }

    #[test]
    fn grid_shape() {
        let g = default_grid(2.0, 50, 1e-3);
        assert_eq!(g.len(), 50);
        assert_eq!(g[0], 2.0);
        assert!((g[49] - 2e-3).abs() < 1e-15);
        assert!(g.windows(2).all(|w| w[1] < w[0]));
        assert_eq!(default_grid(0.0, 50, 1e-3), vec![0.0]);
    }
}
