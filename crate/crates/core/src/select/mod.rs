//! Feature selection against the IR target: an L1-penalised regression
//! (Lasso, cyclic coordinate descent) and the RReliefF neighbour-based
//! relevance estimator, combined by set union.

mod lasso;
mod relieff;
mod standardize;

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::diag::{codes, Warning};
use crate::target::TargetVector;

pub use lasso::{
    default_grid, lambda_max, lasso_fit, lasso_objective, lasso_select, soft_threshold, LassoCvOptions, LassoFit,
    LassoOptions, LassoSelection,
};
pub use relieff::{rrelieff_select, rrelieff_weights, RelieffOptions, RelieffResult};
pub use standardize::{standardize, StandardizedMatrix};

#[derive(Debug, Error, PartialEq)]
pub enum SelectError {
    #[error("need at least 2 rows, got {0}")]
    TooFewRows(usize),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("lambda grid is empty")]
    GridEmpty,
    #[error("lambda grid must be non-negative and sorted descending")]
    InvalidGrid,
    #[error("{folds} folds requested for {units} units")]
    TooFewUnitsForFolds { folds: usize, units: usize },
    #[error("k_neighbors={k} must be in 1..{units}")]
    KTooLarge { k: usize, units: usize },
    #[error("m_samples={m} must be in 1..={units}")]
    InvalidSampleCount { m: usize, units: usize },
    #[error("unknown feature name {0}")]
    UnknownFeatureName(String),
}

pub type Result<T> = std::result::Result<T, SelectError>;

/// Set union of two selections, ordered by original column order.
pub fn union_select(lasso: &[String], relieff: &[String], original_order: &[String]) -> Result<Vec<String>> {
    let known: BTreeSet<&str> = original_order.iter().map(String::as_str).collect();
    let mut wanted = BTreeSet::new();
    for name in lasso.iter().chain(relieff) {
        if !known.contains(name.as_str()) {
            return Err(SelectError::UnknownFeatureName(name.clone()));
        }
        wanted.insert(name.as_str());
    }
    Ok(original_order
        .iter()
        .filter(|n| wanted.contains(n.as_str()))
        .cloned()
        .collect())
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct SelectOptions {
    pub lasso: LassoCvOptions,
    pub relieff: RelieffOptions,
    /// Fixed penalty; skips cross-validation when set.
    pub lambda: Option<f64>,
    pub relieff_threshold: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SelectedBy {
    Lasso,
    Relieff,
    Both,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureScore {
    pub name: String,
    pub lasso_coef: f64,
    pub relieff_weight: f64,
    pub selected_by: Option<SelectedBy>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LassoDiagnostics {
    pub lambda: f64,
    pub lambda_max: f64,
    pub grid: Vec<f64>,
    pub cv_mse: Vec<f64>,
    pub folds: usize,
    pub sweeps: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelieffDiagnostics {
    pub k_neighbors: usize,
    pub m_samples: usize,
    pub sigma: f64,
    pub threshold: f64,
    pub degenerate_target: bool,
}

/// Scores and selections of both selectors plus their union. Serialises as
/// the selection report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionResult {
    pub features: Vec<FeatureScore>,
    pub lasso_selected: Vec<String>,
    pub relieff_selected: Vec<String>,
    pub union_selected: Vec<String>,
    pub lasso: LassoDiagnostics,
    pub relieff: RelieffDiagnostics,
}

impl SelectionResult {
    pub fn lasso_coefs(&self) -> Vec<f64> {
        self.features.iter().map(|f| f.lasso_coef).collect()
    }

    pub fn relieff_weights(&self) -> Vec<f64> {
        self.features.iter().map(|f| f.relieff_weight).collect()
    }
}

/// Runs both selectors on the standardized design and takes the union.
pub fn select_features(
    x: &StandardizedMatrix,
    y: &TargetVector,
    opts: &SelectOptions,
) -> Result<(SelectionResult, Vec<Warning>)> {
    if x.units() != y.units.as_slice() {
        return Err(SelectError::DimensionMismatch(
            "feature rows and target units differ".into(),
        ));
    }
    let names = x.feature_names();
    let mut warnings = Vec::new();

    let lmax = lambda_max(x.z().view(), &y.ir)?;
    let lasso = match opts.lambda {
        Some(l) => lasso_select(x, &y.ir, &[l], &opts.lasso)?,
        None => {
            let grid = default_grid(lmax, opts.lasso.grid_size, opts.lasso.min_ratio);
            lasso_select(x, &y.ir, &grid, &opts.lasso)?
        }
    };
    if !lasso.fit.converged {
        warnings.push(Warning::global(
            codes::NON_CONVERGENCE,
            format!("lasso stopped after {} sweeps at lambda={}", lasso.fit.sweeps, lasso.lambda),
        ));
    }

    let rel = rrelieff_weights(x.z().view(), &y.ir, &opts.relieff)?;
    if rel.degenerate_target {
        warnings.push(Warning::global(
            codes::DEGENERATE_TARGET,
            "all target values are equal; relieff weights set to 0",
        ));
    }
    let relieff_selected = rrelieff_select(names, &rel.weights, opts.relieff_threshold);
    let union_selected = union_select(&lasso.selected, &relieff_selected, names)?;

    let in_lasso: BTreeSet<&str> = lasso.selected.iter().map(String::as_str).collect();
    let in_rel: BTreeSet<&str> = relieff_selected.iter().map(String::as_str).collect();
    let features = names
        .iter()
        .enumerate()
        .map(|(j, name)| FeatureScore {
            name: name.clone(),
            lasso_coef: lasso.fit.coefs[j],
            relieff_weight: rel.weights[j],
            selected_by: match (in_lasso.contains(name.as_str()), in_rel.contains(name.as_str())) {
                (true, true) => Some(SelectedBy::Both),
                (true, false) => Some(SelectedBy::Lasso),
                (false, true) => Some(SelectedBy::Relieff),
                (false, false) => None,
            },
        })
        .collect();

    let result = SelectionResult {
        features,
        lasso_selected: lasso.selected.clone(),
        relieff_selected,
        union_selected,
        lasso: LassoDiagnostics {
            lambda: lasso.lambda,
            lambda_max: lmax,
            grid: lasso.grid.clone(),
            cv_mse: lasso.cv_mse.clone(),
            folds: opts.lasso.folds,
            sweeps: lasso.fit.sweeps,
            converged: lasso.fit.converged,
        },
        relieff: RelieffDiagnostics {
            k_neighbors: opts.relieff.k_neighbors,
            m_samples: rel.m_samples,
            sigma: opts.relieff.sigma,
            threshold: opts.relieff_threshold,
            degenerate_target: rel.degenerate_target,
        },
    };
    Ok((result, warnings))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn names(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn union_examples() {
        let order = names(&["A", "B", "C", "D"]);
        assert_eq!(
            union_select(&names(&["B", "A"]), &names(&["C", "B"]), &order).unwrap(),
            names(&["A", "B", "C"])
        );
        assert!(union_select(&[], &[], &order).unwrap().is_empty());
        assert_eq!(
            union_select(&names(&["Z"]), &[], &order),
            Err(SelectError::UnknownFeatureName("Z".into()))
        );
    }

    #[test]
    fn disjoint_union_of_ninety_and_sixty() {
        let order: Vec<String> = (0..245).map(|j| format!("f{j}")).collect();
        let a: Vec<String> = order[..90].to_vec();
        let b: Vec<String> = order[100..160].to_vec();
        assert_eq!(union_select(&a, &b, &order).unwrap().len(), 150);
    }

    proptest! {
        #[test]
        fn union_is_least_superset(
            a in prop::collection::btree_set(0usize..30, 0..30),
            b in prop::collection::btree_set(0usize..30, 0..30),
        ) {
            let order: Vec<String> = (0..30).map(|j| format!("f{j:02}")).collect();
            let sa: Vec<String> = a.iter().map(|&j| order[j].clone()).collect();
            let sb: Vec<String> = b.iter().map(|&j| order[j].clone()).collect();
            let u = union_select(&sa, &sb, &order).unwrap();
            for n in sa.iter().chain(&sb) {
                prop_assert!(u.contains(n));
            }
            for n in &u {
                prop_assert!(sa.contains(n) || sb.contains(n));
            }
            prop_assert_eq!(u.len(), a.union(&b).count());
            let mut sorted = u.clone();
            sorted.sort();
            prop_assert_eq!(u, sorted);
        }
    }
}
