//! Synthetic census-like inputs with planted structure.
//!
//! Units fall into `blobs` latent groups. The planted features are Gaussian
//! around per-blob centres; the IR of a unit is a noisy linear function of its
//! planted features, realised as a linear trend in daily new cases. Every
//! other feature is independent noise. The blob centres are close to
//! equidistant and their projections on the IR direction are evenly spaced,
//! which makes the per-blob IR means distinct.

use std::collections::BTreeMap;
use std::path::Path;

use chrono::NaiveDate;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use crate::embed::{CATEGORIES, DEFAULT_CATEGORY_MAP};
use crate::ingest::POPULATION_DENSITY;
use crate::report::to_sorted_json;
use crate::seed;

/// Columns outside the census file: two subway, two bike-share, density.
const NON_CENSUS: usize = 5;
const SUBWAY: [&str; 2] = ["station_count", "average_riders"];
const CITIBIKE: [&str; 2] = ["inbound_trips", "outbound_trips"];
const POPULATION: &str = "total_population";
const LAND_AREA: &str = "land_area";
const MISSING_RATE: f64 = 0.01;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid dimensions: {0}")]
    InvalidDimensions(String),
    #[error("cannot write {path}: {source}")]
    Io {
        path: std::path::PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, SynthError>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthParams {
    pub units: usize,
    /// Total merged width: census columns plus subway, bike-share and density.
    pub features: usize,
    pub days: usize,
    pub planted: usize,
    pub blobs: usize,
    /// Minimum distance between blob centres, in within-blob standard deviations.
    pub separation: f64,
    pub seed: u64,
}

impl Default for SynthParams {
    fn default() -> Self {
        Self {
            units: 177,
            features: 245,
            days: 46,
            planted: 18,
            blobs: 6,
            separation: 10.0,
            seed: 2020,
        }
    }
}

/// Construction record written next to the data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub params: SynthParams,
    pub start_date: NaiveDate,
    pub blob_labels: BTreeMap<String, usize>,
    pub relevant_features: Vec<String>,
    /// Coefficient of each relevant feature's latent value in the IR.
    pub ir_weights: Vec<f64>,
    /// IR implied by each blob centre (noise-free).
    pub blob_ir_means: Vec<f64>,
    pub blob_centers: Vec<Vec<f64>>,
}

/// File contents of one synthetic dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthData {
    pub census_csv: String,
    pub subway_csv: String,
    pub citibike_csv: String,
    pub cases_csv: String,
    pub boundaries_geojson: String,
    pub config_json: String,
    pub truth: GroundTruth,
}

pub const START_DATE: (i32, u32, u32) = (2020, 4, 4);

fn named_by_category() -> Vec<Vec<String>> {
    let map: BTreeMap<String, Vec<String>> =
        serde_json::from_str(DEFAULT_CATEGORY_MAP).expect("bundled category map is valid");
    // General Demographics first so population density is the first planted feature.
    let mut order: Vec<&str> = vec!["General Demographics"];
    order.extend(CATEGORIES.iter().filter(|c| **c != "General Demographics"));
    order.iter().map(|c| map.get(*c).cloned().unwrap_or_default()).collect()
}

fn planted_names(planted: usize, fillers: &[String]) -> Vec<String> {
    let groups = named_by_category();
    let mut out = Vec::new();
    let mut round = 0;
    while out.len() < planted && groups.iter().any(|g| g.len() > round) {
        for g in &groups {
            if out.len() < planted {
                if let Some(f) = g.get(round) {
                    out.push(f.clone());
                }
            }
        }
        round += 1;
    }
    out.extend(fillers.iter().take(planted - out.len()).cloned());
    out
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

fn unit_vector(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    let v: Vec<f64> = (0..dim)
        .map(|_| {
            let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
            sign * rng.random_range(0.5..1.0)
        })
        .collect();
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / norm).collect()
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Spacing of the blob levels along the IR direction, relative to the separation.
const LEVEL_SPACING: f64 = 1.0 / 6.0;

// Centres `level_b * beta + r * u_b` with the `u_b` orthonormal to each other
// (when the dimension allows) and to `beta`, so blobs are close to equidistant.
// `r` grows until every pair is at least `sep` apart.
fn blob_centers(rng: &mut ChaCha8Rng, beta: &[f64], blobs: usize, sep: f64) -> Vec<Vec<f64>> {
    let dim = beta.len();
    let spacing = sep * LEVEL_SPACING;
    let levels: Vec<f64> = (0..blobs)
        .map(|b| spacing * (b as f64 - (blobs as f64 - 1.0) / 2.0))
        .collect();
    let mut basis: Vec<Vec<f64>> = vec![beta.to_vec()];
    let dirs: Vec<Vec<f64>> = (0..blobs)
        .map(|_| {
            let mut u: Vec<f64> = (0..dim).map(|_| normal(rng)).collect();
            let orthogonal = basis.len() < dim;
            let against = if orthogonal { &basis[..] } else { &basis[..1] };
            for b in against {
                let proj: f64 = u.iter().zip(b).map(|(a, c)| a * c).sum();
                for (x, c) in u.iter_mut().zip(b) {
                    *x -= proj * c;
                }
            }
            let norm = u.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
            let u: Vec<f64> = u.into_iter().map(|x| x / norm).collect();
            if orthogonal {
                basis.push(u.clone());
            }
            u
        })
        .collect();
    let mut r = (((sep * sep) - spacing * spacing) / 2.0).max(0.0).sqrt();
    loop {
        let centers: Vec<Vec<f64>> = (0..blobs)
            .map(|b| (0..dim).map(|j| levels[b] * beta[j] + r * dirs[b][j]).collect())
            .collect();
        let ok = (0..blobs).all(|a| ((a + 1)..blobs).all(|b| dist(&centers[a], &centers[b]) >= sep));
        if ok || dim < 2 || r > 1e3 * sep {
            return centers;
        }
        r *= 1.05;
    }
}

fn fmt(v: f64) -> String {
    format!("{v:.4}")
}

/// Generates a dataset in memory. Identical parameters give identical bytes.
pub fn synthesize(p: &SynthParams) -> Result<SynthData> {
    let invalid = |m: String| Err(SynthError::InvalidDimensions(m));
    let named_census: usize = named_by_category().iter().map(Vec::len).sum::<usize>() - SUBWAY.len() - CITIBIKE.len() - 1;
    let min_features = NON_CENSUS + 2 + named_census;
    if p.features < min_features {
        return invalid(format!("features must be at least {min_features}, got {}", p.features));
    }
    if p.blobs == 0 {
        return invalid("blob count must be at least 1".into());
    }
    if p.units < 2 * p.blobs || p.units > 89_999 {
        return invalid(format!("units must be between {} and 89999, got {}", 2 * p.blobs, p.units));
    }
    if p.days < 2 {
        return invalid(format!("days must be at least 2, got {}", p.days));
    }
    if p.planted > p.features - 2 {
        return invalid(format!(
            "planted features ({}) exceed the {} plantable columns",
            p.planted,
            p.features - 2
        ));
    }
    if !(p.separation > 0.0) {
        return invalid("separation must be positive".into());
    }

    let mut rng = seed::rng(seed::derive(p.seed, "synth"));
    let n = p.units;
    let census_width = p.features - NON_CENSUS;
    let n_fillers = census_width - 2 - named_census;
    let fillers: Vec<String> = (1..=n_fillers).map(|i| format!("census_var_{i:03}")).collect();
    let relevant = planted_names(p.planted, &fillers);

    let units: Vec<String> = (0..n).map(|i| format!("{:05}", 10001 + i)).collect();
    let mut labels: Vec<usize> = (0..n).map(|i| i * p.blobs / n).collect();
    labels.shuffle(&mut rng);

    // Latent values of the planted features and the IR.
    let dim = relevant.len();
    let beta = if dim > 0 { unit_vector(&mut rng, dim) } else { Vec::new() };
    let centers = blob_centers(&mut rng, &beta, p.blobs, p.separation);
    let ir_base = 0.5;
    let ir_scale = 0.15;
    let ir_noise = 0.05;
    let spacing = p.separation * LEVEL_SPACING;
    let blob_level = |b: usize| spacing * (b as f64 - (p.blobs as f64 - 1.0) / 2.0);
    let latent: Vec<Vec<f64>> = labels
        .iter()
        .map(|&b| centers[b].iter().map(|c| c + normal(&mut rng)).collect())
        .collect();
    let ir: Vec<f64> = (0..n)
        .map(|i| {
            let t = if dim > 0 {
                latent[i].iter().zip(&beta).map(|(z, b)| z * b).sum()
            } else {
                blob_level(labels[i])
            };
            ir_base + ir_scale * t + ir_noise * normal(&mut rng)
        })
        .collect();
    let blob_ir_means: Vec<f64> = (0..p.blobs).map(|b| ir_base + ir_scale * blob_level(b)).collect();

    // Every named or filler feature gets a column of values.
    let mut columns: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    let all_named: Vec<String> = named_by_category().into_iter().flatten().collect();
    for name in all_named.iter().chain(&fillers) {
        let scale = rng.random_range(1.0..50.0);
        let offset = scale * 20.0;
        let col = match relevant.iter().position(|r| r == name) {
            Some(j) if name == POPULATION_DENSITY => {
                (0..n).map(|i| (20000.0 + 1500.0 * latent[i][j]).max(50.0)).collect()
            }
            Some(j) => (0..n).map(|i| offset + scale * latent[i][j]).collect(),
            None if name == POPULATION_DENSITY => (0..n).map(|_| (20000.0 + 1500.0 * normal(&mut rng)).max(50.0)).collect(),
            None => (0..n).map(|_| offset + scale * normal(&mut rng)).collect(),
        };
        columns.insert(name.clone(), col);
    }
    let land_area: Vec<f64> = (0..n).map(|_| rng.random_range(0.2..3.0)).collect();
    let density = columns.remove(POPULATION_DENSITY).expect("density is a named feature");
    let population: Vec<f64> = density.iter().zip(&land_area).map(|(d, a)| d * a).collect();

    // Census file: key, borough (non-numeric), population, area, named, fillers.
    let census_named: Vec<&String> = all_named
        .iter()
        .filter(|f| *f != POPULATION_DENSITY && !SUBWAY.contains(&f.as_str()) && !CITIBIKE.contains(&f.as_str()))
        .collect();
    let mut census = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["geo_id".to_string(), "borough".into(), POPULATION.into(), LAND_AREA.into()];
    header.extend(census_named.iter().map(|s| s.to_string()));
    header.extend(fillers.iter().cloned());
    census.write_record(&header).expect("in-memory write");
    let boroughs = ["Manhattan", "Bronx", "Brooklyn", "Queens", "Staten Island"];
    for i in 0..n {
        let mut row = vec![units[i].clone(), boroughs[i % boroughs.len()].to_string(), fmt(population[i]), fmt(land_area[i])];
        for f in &census_named {
            row.push(fmt(columns[*f][i]));
        }
        for f in &fillers {
            let missing = rng.random::<f64>() < MISSING_RATE && !relevant.contains(f);
            row.push(if missing { String::new() } else { fmt(columns[f][i]) });
        }
        census.write_record(&row).expect("in-memory write");
    }

    let side_table = |names: &[&str], reverse: bool| -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut h = vec!["zip_code"];
        h.extend(names);
        w.write_record(&h).expect("in-memory write");
        let order: Vec<usize> = if reverse { (0..n).rev().collect() } else { (0..n).collect() };
        for i in order {
            let mut row = vec![units[i].clone()];
            row.extend(names.iter().map(|f| fmt(columns[*f][i])));
            w.write_record(&row).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("flush")).expect("utf-8")
    };
    let subway_csv = side_table(&SUBWAY, true);
    let citibike_csv = side_table(&CITIBIKE, false);

    // Daily new cases with a linear trend whose telescoped IR is the target.
    let start = NaiveDate::from_ymd_opt(START_DATE.0, START_DATE.1, START_DATE.2).expect("valid date");
    let nd = p.days as f64;
    let mut cases = csv::Writer::from_writer(Vec::new());
    cases.write_record(["zipcode", "date", "cumulative_cases"]).expect("in-memory write");
    for i in 0..n {
        let slope = if p.days > 1 { ir[i] * nd / (nd - 1.0) } else { 0.0 };
        let base = rng.random_range(60.0..100.0) + (-slope).max(0.0) * (nd - 1.0);
        let mut total = 0.0;
        for d in 0..p.days {
            let daily = (base + slope * d as f64 + 1.5 * normal(&mut rng)).round().max(0.0);
            total += daily;
            let date = start + chrono::Duration::days(d as i64);
            cases
                .write_record([units[i].as_str(), &date.format("%Y-%m-%d").to_string(), &format!("{total}")])
                .expect("in-memory write");
        }
    }

    // Unit squares on a grid, roughly over New York City.
    let cols = (n as f64).sqrt().ceil() as usize;
    let round5 = |v: f64| (v * 1e5).round() / 1e5;
    let features: Vec<serde_json::Value> = (0..n)
        .map(|i| {
            let (x, y) = ((i % cols) as f64, (i / cols) as f64);
            let (lon, lat) = (-74.25 + 0.02 * x, 40.5 + 0.02 * y);
            let ring: Vec<[f64; 2]> = [(0.0, 0.0), (0.02, 0.0), (0.02, 0.02), (0.0, 0.02), (0.0, 0.0)]
                .iter()
                .map(|(dx, dy)| [round5(lon + dx), round5(lat + dy)])
                .collect();
            json!({
                "type": "Feature",
                "properties": {"zipcode": units[i], "borough": boroughs[i % boroughs.len()]},
                "geometry": {"type": "Polygon", "coordinates": [ring]},
            })
        })
        .collect();
    let boundaries_geojson = to_sorted_json(&json!({"type": "FeatureCollection", "features": features}))?;

    let config = json!({
        "seed": p.seed,
        "output_dir": "out",
        "features": [
            {"path": "census.csv", "schema": "census"},
            {"path": "subway.csv", "schema": "subway"},
            {"path": "citibike.csv", "schema": "citibike"},
        ],
        "density": {"population_column": POPULATION, "land_area_column": LAND_AREA},
        "cases": {"path": "cases.csv", "mode": "cumulative"},
        "boundaries": {"path": "boundaries.geojson", "unit_property": "zipcode"},
    });

    let truth = GroundTruth {
        params: *p,
        start_date: start,
        blob_labels: units.iter().cloned().zip(labels.iter().copied()).collect(),
        relevant_features: relevant.clone(),
        ir_weights: beta.iter().map(|b| ir_scale * b).collect(),
        blob_ir_means,
        blob_centers: centers,
    };
    let text = |w: csv::Writer<Vec<u8>>| String::from_utf8(w.into_inner().expect("flush")).expect("utf-8");
    Ok(SynthData {
        census_csv: text(census),
        subway_csv,
        citibike_csv,
        cases_csv: text(cases),
        boundaries_geojson,
        config_json: to_sorted_json(&config)?,
        truth,
    })
}

pub const CONFIG_FILE: &str = "config.json";

pub const FILES: [&str; 7] = [
    "census.csv",
    "subway.csv",
    "citibike.csv",
    "cases.csv",
    "boundaries.geojson",
    "ground_truth.json",
    CONFIG_FILE,
];

/// Writes the dataset into `dir` (created if needed) and returns the ground truth.
pub fn generate_synthetic(p: &SynthParams, dir: &Path) -> Result<GroundTruth> {
    let data = synthesize(p)?;
    let io = |path: &Path| {
        let path = path.to_path_buf();
        move |source| SynthError::Io { path, source }
    };
    std::fs::create_dir_all(dir).map_err(io(dir))?;
    let contents = [
        data.census_csv,
        data.subway_csv,
        data.citibike_csv,
        data.cases_csv,
        data.boundaries_geojson,
        to_sorted_json(&data.truth)?,
        data.config_json,
    ];
    for (name, body) in FILES.iter().zip(contents) {
        let path = dir.join(name);
        std::fs::write(&path, body).map_err(io(&path))?;
    }
    Ok(data.truth)
}
