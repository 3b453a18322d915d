use ndarray::{Array2, Axis};

use super::{Result, SelectError};
use crate::ingest::{FeatureTable, GeoUnitId};

/// Column-wise z-scores (population standard deviation). Constant columns are
/// flagged and carried as all-zero columns.
#[derive(Debug, Clone, PartialEq)]
pub struct StandardizedMatrix {
    units: Vec<GeoUnitId>,
    feature_names: Vec<String>,
    means: Vec<f64>,
    stds: Vec<f64>,
    constant: Vec<bool>,
    z: Array2<f64>,
}

pub fn standardize(table: &FeatureTable) -> Result<StandardizedMatrix> {
    let n = table.n_units();
    if n < 2 {
        return Err(SelectError::TooFewRows(n));
    }
    let values = table.values();
    let p = table.n_features();
    let mut means = Vec::with_capacity(p);
    let mut stds = Vec::with_capacity(p);
    let mut constant = Vec::with_capacity(p);
    let mut z = Array2::zeros((n, p));
    for (j, col) in values.axis_iter(Axis(1)).enumerate() {
        let mean = col.sum() / n as f64;
        let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
        let std = var.sqrt();
        let first = col[0];
        let is_const = col.iter().all(|&v| v == first);
        means.push(mean);
        stds.push(std);
        constant.push(is_const);
        if !is_const {
            z.column_mut(j).assign(&col.mapv(|v| (v - mean) / std));
        }
    }
    Ok(StandardizedMatrix {
        units: table.units().to_vec(),
        feature_names: table.feature_names().to_vec(),
        means,
        stds,
        constant,
        z,
    })
}

impl StandardizedMatrix {
    pub fn units(&self) -> &[GeoUnitId] {
        &self.units
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn means(&self) -> &[f64] {
        &self.means
    }

    pub fn stds(&self) -> &[f64] {
        &self.stds
    }

    pub fn constant(&self) -> &[bool] {
        &self.constant
    }

    pub fn z(&self) -> &Array2<f64> {
        &self.z
    }

    /// The same standardized values with rows reordered / filtered to `indices`.
    pub fn select_rows(&self, indices: &[usize]) -> StandardizedMatrix {
        StandardizedMatrix {
            units: indices.iter().map(|&i| self.units[i].clone()).collect(),
            feature_names: self.feature_names.clone(),
            means: self.means.clone(),
            stds: self.stds.clone(),
            constant: self.constant.clone(),
            z: self.z.select(Axis(0), indices),
        }
    }

    /// z-columns for `names`, in the order given.
    pub fn columns(&self, names: &[String]) -> Result<Array2<f64>> {
        let idx = names
            .iter()
            .map(|n| {
                self.feature_names
                    .iter()
                    .position(|f| f == n)
                    .ok_or_else(|| SelectError::UnknownFeatureName(n.clone()))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(self.z.select(Axis(1), &idx))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::Rng;

    fn table(values: Array2<f64>) -> FeatureTable {
        let n = values.nrows();
        let p = values.ncols();
        FeatureTable::new(
            (0..n).map(|i| GeoUnitId::new(format!("u{i}")).unwrap()).collect(),
            (0..p).map(|j| format!("f{j}")).collect(),
            values,
        )
        .unwrap()
    }

    #[test]
    fn two_point_column() {
        let s = standardize(&table(array![[1.0], [3.0]])).unwrap();
        assert_eq!(s.z().column(0).to_vec(), vec![-1.0, 1.0]);
        assert_eq!(s.means(), [2.0]);
        assert_eq!(s.stds(), [1.0]);
    }

    #[test]
    fn constant_column_flagged() {
        let s = standardize(&table(array![[7.0, 1.0], [7.0, 2.0], [7.0, 4.0]])).unwrap();
        assert_eq!(s.constant(), [true, false]);
        assert_eq!(s.z().column(0).to_vec(), vec![0.0; 3]);
    }

    #[test]
    fn too_few_rows() {
        assert_eq!(standardize(&table(array![[1.0]])), Err(SelectError::TooFewRows(1)));
    }

    #[test]
    fn random_moments() {
        let mut rng = crate::seed::rng(11);
        for _ in 0..20 {
            let v = Array2::from_shape_fn((10, 4), |_| rng.random_range(-50.0..50.0) * 3.0);
            let s = standardize(&table(v)).unwrap();
            for col in s.z().axis_iter(Axis(1)) {
                // Moment oracle computed independently of the implementation.
                let m: f64 = col.iter().sum::<f64>() / 10.0;
                let sd = (col.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / 10.0).sqrt();
                assert!(m.abs() < 1e-9);
                assert!((sd - 1.0).abs() < 1e-9);
            }
        }
    }
}
