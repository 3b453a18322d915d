use std::io::Write;

use ndarray::Axis;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{tsne_1d, CategoryMap, EmbedError, Result, TsneOptions};
use crate::cluster::ClusterModel;
use crate::diag::{codes, Warning};
use crate::ingest::GeoUnitId;
use crate::seed;
use crate::select::StandardizedMatrix;
use crate::stats::FiveNumber;

pub const LEVEL_CAVEAT: &str = "Factor levels are 1-D t-SNE coordinates of the features in each category. \
Sign, offset and scale are arbitrary and the levels are not feature weights; compare units and clusters, \
not magnitudes across categories.";

/// One-dimensional factor level per unit for a category.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorEmbedding {
    pub category: String,
    pub features: Vec<String>,
    pub units: Vec<GeoUnitId>,
    pub levels: Vec<f64>,
    pub kl_initial: f64,
    pub kl_final: f64,
    pub seed: u64,
}

/// Embeds every non-empty category. Rows are processed in ascending unit-code
/// order so the result does not depend on the row order of `x`; each
/// category's seed is derived from `master_seed` and the category name.
/// A failing category is reported as a warning and skipped.
pub fn embed_all(
    x: &StandardizedMatrix,
    cmap: &CategoryMap,
    opts: &TsneOptions,
    master_seed: u64,
) -> (Vec<FactorEmbedding>, Vec<Warning>) {
    let units = x.units();
    let mut canonical: Vec<usize> = (0..units.len()).collect();
    canonical.sort_by(|&a, &b| units[a].cmp(&units[b]));

    let results: Vec<(String, Result<FactorEmbedding>)> = cmap
        .categories
        .par_iter()
        .filter(|(_, feats)| !feats.is_empty())
        .map(|(category, feats)| {
            let seed = seed::derive(master_seed, &format!("embed/{category}"));
            let run = || -> Result<FactorEmbedding> {
                let cols = x.columns(feats)?;
                let sorted = cols.select(Axis(0), &canonical);
                let o = TsneOptions { seed, ..*opts };
                let r = tsne_1d(sorted.view(), &o)?;
                let mut levels = vec![0.0; units.len()];
                for (k, &i) in canonical.iter().enumerate() {
                    levels[i] = r.coords[k];
                }
                Ok(FactorEmbedding {
                    category: category.clone(),
                    features: feats.clone(),
                    units: units.to_vec(),
                    levels,
                    kl_initial: r.kl_initial,
                    kl_final: r.kl_final,
                    seed,
                })
            };
            (category.clone(), run())
        })
        .collect();

    let mut warnings: Vec<Warning> = cmap
        .categories
        .iter()
        .filter(|(_, f)| f.is_empty())
        .map(|(c, _)| Warning::global(codes::EMPTY_CATEGORY, format!("category {c} has no selected features")))
        .collect();
    let mut out = Vec::new();
    for (category, r) in results {
        match r {
            Ok(e) => out.push(e),
            Err(e) => warnings.push(Warning::global(codes::EMBED_FAILED, format!("{category}: {e}"))),
        }
    }
    (out, warnings)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorSummary {
    pub category: String,
    pub cluster_id: usize,
    pub size: usize,
    pub levels: FiveNumber,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorReport {
    pub caveat: String,
    pub summaries: Vec<FactorSummary>,
    pub embeddings: Vec<FactorEmbedding>,
}

/// Five-number summary of levels for every category × cluster pair.
pub fn factor_report(embeddings: &[FactorEmbedding], model: &ClusterModel) -> Result<FactorReport> {
    let mut summaries = Vec::new();
    for e in embeddings {
        if e.units != model.units || e.levels.len() != model.assignment.len() {
            return Err(EmbedError::UnitMismatch);
        }
        for c in 0..model.k {
            let vals: Vec<f64> = e
                .levels
                .iter()
                .zip(&model.assignment)
                .filter(|(_, &a)| a == c)
                .map(|(v, _)| *v)
                .collect();
            if let Some(levels) = FiveNumber::of(&vals) {
                summaries.push(FactorSummary {
                    category: e.category.clone(),
                    cluster_id: c,
                    size: vals.len(),
                    levels,
                });
            }
        }
    }
    Ok(FactorReport {
        caveat: LEVEL_CAVEAT.to_string(),
        summaries,
        embeddings: embeddings.to_vec(),
    })
}

impl FactorReport {
    pub fn write_csv<W: Write>(&self, writer: W) -> std::result::Result<(), csv::Error> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["category", "cluster_id", "size", "min", "q1", "median", "q3", "max", "mean"])?;
        for s in &self.summaries {
            let l = &s.levels;
            w.write_record([
                s.category.clone(),
                s.cluster_id.to_string(),
                s.size.to_string(),
                l.min.to_string(),
                l.q1.to_string(),
                l.median.to_string(),
                l.q3.to_string(),
                l.max.to_string(),
                l.mean.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embed::parse_category_map;
    use crate::ingest::FeatureTable;
    use crate::select::standardize;
    use ndarray::Array2;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn uid(i: usize) -> GeoUnitId {
        GeoUnitId::new(format!("{:05}", 10001 + i)).unwrap()
    }

    fn model(assignment: Vec<usize>, k: usize) -> ClusterModel {
        ClusterModel {
            k,
            features: vec![],
            units: (0..assignment.len()).map(uid).collect(),
            centroids: vec![vec![]; k],
            assignment,
            wcss: 0.0,
            cluster_ir_mean: vec![0.0; k],
            relabel: (0..k).collect(),
        }
    }

    fn embedding(levels: Vec<f64>) -> FactorEmbedding {
        FactorEmbedding {
            category: "Race".into(),
            features: vec![],
            units: (0..levels.len()).map(uid).collect(),
            levels,
            kl_initial: 1.0,
            kl_final: 0.5,
            seed: 0,
        }
    }

    #[test]
    fn single_cluster_median() {
        let r = factor_report(&[embedding(vec![2.0, 0.0, 1.0])], &model(vec![0, 0, 0], 1)).unwrap();
        assert_eq!(r.summaries.len(), 1);
        assert_eq!(r.summaries[0].levels.median, 1.0);
        assert_eq!(r.caveat, LEVEL_CAVEAT);
    }

    #[test]
    fn reflection_keeps_dispersion() {
        let levels: Vec<f64> = (0..12).map(|i| ((i * 7) % 5) as f64 * 1.3 - 2.0).collect();
        let assignment: Vec<usize> = (0..12).map(|i| i % 3).collect();
        let m = model(assignment, 3);
        let a = factor_report(&[embedding(levels.clone())], &m).unwrap();
        let b = factor_report(&[embedding(levels.iter().map(|v| -v).collect())], &m).unwrap();
        for (x, y) in a.summaries.iter().zip(&b.summaries) {
            assert!((x.levels.range() - y.levels.range()).abs() < 1e-12);
            assert!((x.levels.iqr() - y.levels.iqr()).abs() < 1e-12);
        }
    }

    #[test]
    fn unit_mismatch() {
        let r = factor_report(&[embedding(vec![1.0, 2.0])], &model(vec![0, 0, 0], 1));
        assert!(matches!(r, Err(EmbedError::UnitMismatch)));
    }

    fn small_matrix(seed: u64, n: usize) -> StandardizedMatrix {
        let mut rng = seed::rng(seed);
        let names = ["white_pop", "black_pop", "median_income", "x_noise"];
        let v = Array2::from_shape_fn((n, 4), |_| rng.sample::<f64, _>(StandardNormal));
        let t = FeatureTable::new((0..n).map(uid).collect(), names.iter().map(|s| s.to_string()).collect(), v).unwrap();
        standardize(&t).unwrap()
    }

    #[test]
    fn empty_category_warns_and_others_embed() {
        let x = small_matrix(1, 24);
        let (cmap, _) = parse_category_map(
            r#"{"Race": ["white_pop", "black_pop"], "Income": ["median_income"], "Family": ["married"]}"#,
            x.feature_names(),
        )
        .unwrap();
        let opts = TsneOptions {
            perplexity: 5.0,
            iters: 100,
            ..Default::default()
        };
        let (emb, warnings) = embed_all(&x, &cmap, &opts, 9);
        assert_eq!(emb.len(), 2);
        assert_eq!(emb[0].category, "Race");
        assert_eq!(emb[1].category, "Income");
        // 7 of the 9 categories are empty.
        assert_eq!(warnings.iter().filter(|w| w.code == codes::EMPTY_CATEGORY).count(), 7);
        assert_ne!(emb[0].seed, emb[1].seed);
    }

    #[test]
    fn row_permutation_is_conjugated_exactly() {
        let x = small_matrix(2, 30);
        let (cmap, _) = parse_category_map(r#"{"Race": ["white_pop", "black_pop"]}"#, x.feature_names()).unwrap();
        let opts = TsneOptions {
            perplexity: 5.0,
            iters: 200,
            ..Default::default()
        };
        let (base, _) = embed_all(&x, &cmap, &opts, 4);

        let perm: Vec<usize> = (0..30).map(|i| (i * 7) % 30).collect();
        let xp = x.select_rows(&perm);
        let (permuted, _) = embed_all(&xp, &cmap, &opts, 4);
        for (k, &i) in perm.iter().enumerate() {
            assert_eq!(permuted[0].levels[k], base[0].levels[i]);
        }
    }
}
