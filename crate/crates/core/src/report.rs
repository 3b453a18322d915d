//! Report documents and writers: sorted-key JSON and the GeoJSON choropleth.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::value::RawValue;
use serde_json::{Map, Value};
use thiserror::Error;

use crate::cluster::{ClusterModel, ClusterSummary};
use crate::diag::{codes, Warning};
use crate::embed::{category_slug, FactorEmbedding, CATEGORIES};
use crate::target::TargetVector;

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("malformed GeoJSON: {0}")]
    MalformedGeoJson(String),
    #[error("boundary feature {index} has no {property:?} property")]
    MissingUnitProperty { index: usize, property: String },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, ReportError>;

/// Pretty-printed JSON with object keys in sorted order and a trailing newline.
pub fn to_sorted_json<T: Serialize>(value: &T) -> serde_json::Result<String> {
    // `Value` objects are ordered maps, so the round trip sorts every level.
    let v = serde_json::to_value(value)?;
    let mut s = serde_json::to_string_pretty(&v)?;
    s.push('\n');
    Ok(s)
}

pub fn write_sorted_json<T: Serialize>(path: &Path, value: &T) -> std::io::Result<()> {
    let s = to_sorted_json(value).map_err(std::io::Error::other)?;
    std::fs::write(path, s)
}

/// Elbow curve as written to the cluster report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ElbowCurve {
    pub ks: Vec<usize>,
    pub wcss: Vec<f64>,
    pub chosen_k: usize,
    /// True when k was fixed by configuration and no curve was searched.
    pub fixed: bool,
}

pub const QUARTILE_RULE: &str = "quartiles interpolate linearly between order statistics at position q*(n-1) of the sorted sample";

/// Contents of `clusters.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterDocument {
    pub model: ClusterModel,
    pub elbow: ElbowCurve,
    pub summaries: Vec<ClusterSummary>,
    pub quartile_rule: String,
    pub iterations: usize,
    pub converged: bool,
}

/// Contents of `factors.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorDocument {
    pub caveat: String,
    pub quartile_rule: String,
    pub categories: Vec<CategoryEntry>,
    pub uncategorized: Vec<String>,
    pub unselected_mapped: Vec<String>,
    pub summaries: Vec<crate::embed::FactorSummary>,
    pub embeddings: Vec<FactorEmbedding>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryEntry {
    pub category: String,
    pub features: Vec<String>,
    pub embedded: bool,
}

// Field order is alphabetical so that direct serialisation matches the
// sorted-key convention of the other reports. `geometry` stays raw so its
// bytes pass through unchanged.
#[derive(Debug, Serialize, Deserialize)]
struct Feature {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    bbox: Option<Value>,
    geometry: Box<RawValue>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    id: Option<Value>,
    #[serde(default)]
    properties: Option<Map<String, Value>>,
    #[serde(rename = "type")]
    kind: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct FeatureCollection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    bbox: Option<Value>,
    features: Vec<Feature>,
    #[serde(rename = "type")]
    kind: String,
}

/// Property name carrying a category's level, e.g. `factor_age_and_gender`.
pub fn factor_property(category: &str) -> String {
    format!("factor_{}", category_slug(category))
}

/// Adds `cluster_id`, `ir` and one `factor_<category>` property per category
/// to every boundary feature; geometry text is copied verbatim. Boundaries
/// with no modelled unit get nulls and a warning, as do categories that were
/// not embedded. Modelled units without a boundary are reported.
pub fn emit_choropleth(
    boundaries: &str,
    unit_property: &str,
    model: &ClusterModel,
    embeddings: &[FactorEmbedding],
    target: &TargetVector,
) -> Result<(String, Vec<Warning>)> {
    let mut fc: FeatureCollection =
        serde_json::from_str(boundaries).map_err(|e| ReportError::MalformedGeoJson(e.to_string()))?;
    if fc.kind != "FeatureCollection" {
        return Err(ReportError::MalformedGeoJson(format!(
            "top-level type is {:?}, expected \"FeatureCollection\"",
            fc.kind
        )));
    }

    let index: HashMap<&str, usize> = model.units.iter().enumerate().map(|(i, u)| (u.as_str(), i)).collect();
    let ir_of: HashMap<&str, f64> = target.units.iter().map(|u| u.as_str()).zip(target.ir.iter().copied()).collect();
    let by_category: BTreeMap<&str, &FactorEmbedding> = embeddings.iter().map(|e| (e.category.as_str(), e)).collect();

    let mut warnings = Vec::new();
    let mut seen = vec![false; model.units.len()];
    for (n, feature) in fc.features.iter_mut().enumerate() {
        if feature.kind != "Feature" {
            return Err(ReportError::MalformedGeoJson(format!(
                "feature {n} has type {:?}, expected \"Feature\"",
                feature.kind
            )));
        }
        let props = feature.properties.get_or_insert_with(Map::new);
        let code = match props.get(unit_property) {
            Some(Value::String(s)) => s.trim().to_string(),
            Some(Value::Number(x)) => x.to_string(),
            _ => {
                return Err(ReportError::MissingUnitProperty {
                    index: n,
                    property: unit_property.to_string(),
                })
            }
        };
        let row = index.get(code.as_str()).copied();
        if let Some(i) = row {
            seen[i] = true;
        } else {
            warnings.push(Warning::new(
                codes::UNMODELED_BOUNDARY,
                Some(&code),
                "boundary has no modelled unit; properties set to null",
            ));
        }
        props.insert(
            "cluster_id".into(),
            row.map_or(Value::Null, |i| Value::from(model.assignment[i])),
        );
        props.insert(
            "ir".into(),
            row.and_then(|_| ir_of.get(code.as_str()))
                .map_or(Value::Null, |&v| Value::from(v)),
        );
        for cat in CATEGORIES {
            let level = row.and_then(|i| by_category.get(cat).map(|e| e.levels[i]));
            props.insert(factor_property(cat), level.map_or(Value::Null, Value::from));
        }
    }
    for (i, s) in seen.iter().enumerate() {
        if !s {
            warnings.push(Warning::new(
                codes::MISSING_BOUNDARY,
                Some(model.units[i].as_str()),
                "modelled unit has no boundary feature",
            ));
        }
    }
    for cat in CATEGORIES {
        if !by_category.contains_key(cat) {
            warnings.push(Warning::global(
                codes::EMPTY_CATEGORY,
                format!("{} is null: category was not embedded", factor_property(cat)),
            ));
        }
    }
    let mut out = serde_json::to_string_pretty(&fc)?;
    out.push('\n');
    Ok((out, warnings))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::GeoUnitId;

    fn uid(s: &str) -> GeoUnitId {
        GeoUnitId::new(s).unwrap()
    }

    fn fixture() -> (ClusterModel, Vec<FactorEmbedding>, TargetVector) {
        let units = vec![uid("10001"), uid("10002"), uid("10003")];
        let model = ClusterModel {
            k: 2,
            features: vec!["a".into()],
            units: units.clone(),
            centroids: vec![vec![0.0], vec![1.0]],
            assignment: vec![0, 1, 1],
            wcss: 0.5,
            cluster_ir_mean: vec![0.1, 0.4],
            relabel: vec![0, 1],
        };
        let embeddings = CATEGORIES
            .iter()
            .map(|c| FactorEmbedding {
                category: c.to_string(),
                features: vec!["a".into()],
                units: units.clone(),
                levels: vec![1.0, 2.0, 3.0],
                kl_initial: 1.0,
                kl_final: 0.5,
                seed: 1,
            })
            .collect();
        let target = TargetVector {
            units,
            ir: vec![0.1, 0.3, 0.5],
            n_days: 46,
        };
        (model, embeddings, target)
    }

    const BOUNDARIES: &str = r#"{"type":"FeatureCollection","features":[
 {"type":"Feature","properties":{"zipcode":"10001","name":"a"},"geometry":{"type":"Polygon","coordinates":[[[0,0],[1,0],[1,1],[0,0]]]}},
 {"type":"Feature","properties":{"zipcode":10002},"geometry":{ "type" : "Point", "coordinates" : [0.50, 1e0] }},
 {"type":"Feature","properties":{"zipcode":"10003"},"geometry":null}
]}"#;

    #[test]
    fn adds_eleven_properties_and_keeps_geometry_bytes() {
        let (m, e, t) = fixture();
        let (out, warnings) = emit_choropleth(BOUNDARIES, "zipcode", &m, &e, &t).unwrap();
        assert!(warnings.is_empty(), "{warnings:?}");
        let v: Value = serde_json::from_str(&out).unwrap();
        assert_eq!(v["type"], "FeatureCollection");
        let feats = v["features"].as_array().unwrap();
        assert_eq!(feats.len(), 3);
        for f in feats {
            let p = f["properties"].as_object().unwrap();
            assert!(p.contains_key("cluster_id") && p.contains_key("ir"));
            assert_eq!(p.keys().filter(|k| k.starts_with("factor_")).count(), 9);
        }
        assert_eq!(feats[1]["properties"]["cluster_id"], 1);
        assert_eq!(feats[2]["properties"]["factor_general_demographics"], 3.0);
        assert!(out.contains(r#"{ "type" : "Point", "coordinates" : [0.50, 1e0] }"#));
        assert!(out.contains(r#""geometry": null"#));
    }

    #[test]
    fn unmodelled_boundary_gets_nulls() {
        let (m, e, t) = fixture();
        let b = BOUNDARIES.replace("\"10003\"", "\"99999\"");
        let (out, warnings) = emit_choropleth(&b, "zipcode", &m, &e, &t).unwrap();
        let v: Value = serde_json::from_str(&out).unwrap();
        assert_eq!(v["features"][2]["properties"]["cluster_id"], Value::Null);
        assert_eq!(v["features"][2]["properties"]["factor_race"], Value::Null);
        let codes: Vec<&str> = warnings.iter().map(|w| w.code.as_str()).collect();
        assert_eq!(codes, [codes::UNMODELED_BOUNDARY, codes::MISSING_BOUNDARY]);
    }

    #[test]
    fn missing_category_is_null_with_warning() {
        let (m, mut e, t) = fixture();
        e.retain(|x| x.category != "Family");
        let (out, warnings) = emit_choropleth(BOUNDARIES, "zipcode", &m, &e, &t).unwrap();
        let v: Value = serde_json::from_str(&out).unwrap();
        assert_eq!(v["features"][0]["properties"]["factor_family"], Value::Null);
        assert_eq!(warnings.len(), 1);
    }

    #[test]
    fn errors() {
        let (m, e, t) = fixture();
        assert!(matches!(
            emit_choropleth("[1, 2", "zipcode", &m, &e, &t),
            Err(ReportError::MalformedGeoJson(_))
        ));
        assert!(matches!(
            emit_choropleth(r#"{"type":"Feature","features":[]}"#, "zipcode", &m, &e, &t),
            Err(ReportError::MalformedGeoJson(_))
        ));
        assert!(matches!(
            emit_choropleth(BOUNDARIES, "zcta", &m, &e, &t),
            Err(ReportError::MissingUnitProperty { index: 0, .. })
        ));
    }

    #[test]
    fn sorted_json_keys() {
        #[derive(Serialize)]
        struct S {
            zeta: u8,
            alpha: u8,
        }
        assert_eq!(to_sorted_json(&S { zeta: 1, alpha: 2 }).unwrap(), "{\n  \"alpha\": 2,\n  \"zeta\": 1\n}\n");
    }
}
