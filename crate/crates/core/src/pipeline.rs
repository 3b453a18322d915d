//! End-to-end driver: JSON config, stage functions, output files and the run
//! manifest.
//!
//! Stage seeds are derived from the master seed with [`seed::derive`] using
//! the names `select/lasso`, `select/relieff`, `cluster` and
//! `embed/<category>`; seeds written inside the nested option blocks of a
//! config are ignored.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::cluster::{cluster_report, elbow_select_k, kmeans, relabel_by_ir, KMeansOptions};
use crate::diag::{codes, Warning};
use crate::embed::{embed_all, factor_report, load_category_map, TsneOptions, LEVEL_CAVEAT};
use crate::ingest::{
    add_population_density, impute_missing, load_case_series, load_feature_csv, merge_tables, CaseMode, FeatureTable,
    GeoUnitId, ImputePolicy, Schema,
};
use crate::report::{
    emit_choropleth, to_sorted_json, CategoryEntry, ClusterDocument, ElbowCurve, FactorDocument, QUARTILE_RULE,
};
use crate::select::{select_features, standardize, SelectOptions, SelectionResult, StandardizedMatrix};
use crate::target::{compute_target, TargetVector};
use crate::seed;

pub const SELECTION_JSON: &str = "selection.json";
pub const CLUSTERS_CSV: &str = "clusters.csv";
pub const CLUSTERS_JSON: &str = "clusters.json";
pub const FACTORS_CSV: &str = "factors.csv";
pub const FACTORS_JSON: &str = "factors.json";
pub const CHOROPLETH: &str = "choropleth.geojson";
pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Config,
    Ingest,
    Target,
    Select,
    Cluster,
    Embed,
    Report,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Stage::Config => "config",
            Stage::Ingest => "ingest",
            Stage::Target => "target",
            Stage::Select => "select",
            Stage::Cluster => "cluster",
            Stage::Embed => "embed",
            Stage::Report => "report",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("[config] {0}")]
    Config(String),
    #[error("[{stage}] {message}")]
    Data { stage: Stage, message: String },
    #[error("[{stage}] did not converge: {detail}")]
    NonConvergence { stage: Stage, detail: String },
    #[error("[{stage}] cannot write {path}: {source}")]
    Output {
        stage: Stage,
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl PipelineError {
    /// Process exit status: 2 for configuration problems, 3 for data errors,
    /// 4 for non-convergence under `strict`, 1 for output failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_) => 2,
            PipelineError::Data { .. } => 3,
            PipelineError::NonConvergence { .. } => 4,
            PipelineError::Output { .. } => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, PipelineError>;

fn data<E: fmt::Display>(stage: Stage) -> impl Fn(E) -> PipelineError {
    move |e| PipelineError::Data {
        stage,
        message: e.to_string(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeatureInput {
    pub path: PathBuf,
    pub schema: Schema,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CaseInput {
    pub path: PathBuf,
    #[serde(default)]
    pub mode: CaseMode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DensityColumns {
    pub population_column: String,
    pub land_area_column: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundaryInput {
    pub path: PathBuf,
    #[serde(default = "default_unit_property")]
    pub unit_property: String,
}

fn default_unit_property() -> String {
    "zipcode".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClusterConfig {
    /// Fixed k; the elbow search over `k_range` runs when unset.
    pub k: Option<usize>,
    pub k_range: Vec<usize>,
    pub kmeans: KMeansOptions,
}

impl Default for ClusterConfig {
    fn default() -> Self {
        Self {
            k: None,
            k_range: (1..=12).collect(),
            kmeans: KMeansOptions::default(),
        }
    }
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

/// Pipeline configuration. Relative paths resolve against the directory of
/// the config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    pub features: Vec<FeatureInput>,
    #[serde(default)]
    pub density: Option<DensityColumns>,
    pub cases: CaseInput,
    #[serde(default)]
    pub boundaries: Option<BoundaryInput>,
    #[serde(default)]
    pub category_map: Option<PathBuf>,
    #[serde(default)]
    pub impute: ImputePolicy,
    #[serde(default)]
    pub select: SelectOptions,
    #[serde(default)]
    pub cluster: ClusterConfig,
    #[serde(default)]
    pub tsne: TsneOptions,
    /// Turn non-convergence warnings into a failure (exit code 4).
    #[serde(default)]
    pub strict: bool,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

/// Command-line overrides applied on top of a loaded config.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub k: Option<usize>,
    pub seed: Option<u64>,
    pub lambda: Option<f64>,
    pub perplexity: Option<f64>,
    pub output_dir: Option<PathBuf>,
    pub strict: bool,
}

impl PipelineConfig {
    pub fn from_json(text: &str, base_dir: &Path) -> Result<Self> {
        let mut cfg: PipelineConfig =
            serde_json::from_str(text).map_err(|e| PipelineError::Config(format!("invalid config: {e}")))?;
        cfg.base_dir = base_dir.to_path_buf();
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| PipelineError::Config(format!("cannot read {}: {e}", path.display())))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::from_json(&text, &base)
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(k) = o.k {
            self.cluster.k = Some(k);
        }
        if let Some(s) = o.seed {
            self.seed = s;
        }
        if let Some(l) = o.lambda {
            self.select.lambda = Some(l);
        }
        if let Some(p) = o.perplexity {
            self.tsne.perplexity = p;
        }
        if let Some(d) = &o.output_dir {
            // Given on the command line, so relative to the working directory.
            self.output_dir = std::path::absolute(d).unwrap_or_else(|_| d.clone());
        }
        self.strict |= o.strict;
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn output_path(&self, name: &str) -> PathBuf {
        self.resolve(&self.output_dir).join(name)
    }

    /// Checks everything that can be checked without reading the data.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(PipelineError::Config(m));
        if self.features.is_empty() {
            return bad("at least one feature table is required".into());
        }
        let mut inputs: Vec<&Path> = self.features.iter().map(|f| f.path.as_path()).collect();
        inputs.push(&self.cases.path);
        if let Some(b) = &self.boundaries {
            inputs.push(&b.path);
        }
        if let Some(m) = &self.category_map {
            inputs.push(m);
        }
        for p in inputs {
            if !self.resolve(p).is_file() {
                return bad(format!("input file {} does not exist", self.resolve(p).display()));
            }
        }
        match self.cluster.k {
            Some(0) => return bad("cluster.k must be positive".into()),
            Some(_) => {}
            None => {
                let r = &self.cluster.k_range;
                if r.len() < 3 || r.windows(2).any(|w| w[1] <= w[0]) || r[0] == 0 {
                    return bad(format!("cluster.k_range must hold at least 3 ascending positive values, got {r:?}"));
                }
            }
        }
        if !(self.tsne.perplexity > 0.0) {
            return bad(format!("tsne.perplexity must be positive, got {}", self.tsne.perplexity));
        }
        if let Some(l) = self.select.lambda {
            if !(l >= 0.0) {
                return bad(format!("select.lambda must be non-negative, got {l}"));
            }
        }
        Ok(())
    }

    /// SHA-256 of the effective configuration in sorted-key JSON.
    pub fn hash(&self) -> String {
        let text = to_sorted_json(self).expect("config serialises");
        hex::encode(Sha256::digest(text.as_bytes()))
    }
}

/// Merged, imputed feature table with its z-scores and the IR target, all
/// over the same units.
#[derive(Debug, Clone)]
pub struct Inputs {
    pub table: FeatureTable,
    pub z: StandardizedMatrix,
    pub target: TargetVector,
}

/// Collects warnings, echoing each one to stderr as it arrives.
#[derive(Debug, Default)]
pub struct Diagnostics {
    pub warnings: Vec<Warning>,
    pub quiet: bool,
}

impl Diagnostics {
    pub fn extend(&mut self, ws: impl IntoIterator<Item = Warning>) {
        for w in ws {
            if !self.quiet {
                eprintln!("{w}");
            }
            self.warnings.push(w);
        }
    }
}

pub fn load_inputs(cfg: &PipelineConfig, diag: &mut Diagnostics) -> Result<Inputs> {
    let mut tables = Vec::new();
    for f in &cfg.features {
        let (t, w) = load_feature_csv(&cfg.resolve(&f.path), f.schema).map_err(data(Stage::Ingest))?;
        diag.extend(w);
        tables.push(t);
    }
    let merged = merge_tables(&tables).map_err(data(Stage::Ingest))?;
    let kept: BTreeSet<&GeoUnitId> = merged.units().iter().collect();
    let dropped: BTreeSet<&GeoUnitId> = tables.iter().flat_map(|t| t.units()).filter(|u| !kept.contains(u)).collect();
    for u in dropped {
        diag.extend([Warning::new(codes::DROPPED_UNIT, Some(u.as_str()), "unit is missing from a feature table")]);
    }
    let mut table = impute_missing(&merged, cfg.impute).map_err(data(Stage::Ingest))?;
    for u in merged.units().iter().filter(|u| !table.units().contains(u)) {
        diag.extend([Warning::new(codes::DROPPED_UNIT, Some(u.as_str()), "unit has missing values")]);
    }
    if let Some(d) = &cfg.density {
        table = add_population_density(&table, &d.population_column, &d.land_area_column).map_err(data(Stage::Ingest))?;
    }

    let (series, w) = load_case_series(&cfg.resolve(&cfg.cases.path), cfg.cases.mode).map_err(data(Stage::Ingest))?;
    diag.extend(w);
    let keep: Vec<usize> = (0..table.n_units())
        .filter(|&i| {
            let u = &table.units()[i];
            let present = series.contains_key(u);
            if !present {
                diag.extend([Warning::new(codes::DROPPED_UNIT, Some(u.as_str()), "unit has no case series")]);
            }
            present
        })
        .collect();
    if keep.len() < table.n_units() {
        table = table.select_rows(&keep);
    }
    let target = compute_target(&series, table.units()).map_err(data(Stage::Target))?;
    if target.ir.iter().all(|&v| v == target.ir[0]) {
        diag.extend([Warning::global(codes::DEGENERATE_TARGET, "every unit has the same IR")]);
    }
    let z = standardize(&table).map_err(data(Stage::Select))?;
    Ok(Inputs { table, z, target })
}

pub fn run_select(cfg: &PipelineConfig, inputs: &Inputs, diag: &mut Diagnostics) -> Result<SelectionResult> {
    let mut opts = cfg.select.clone();
    opts.lasso.seed = seed::derive(cfg.seed, "select/lasso");
    opts.relieff.seed = seed::derive(cfg.seed, "select/relieff");
    let (sel, w) = select_features(&inputs.z, &inputs.target, &opts).map_err(data(Stage::Select))?;
    if cfg.strict && !sel.lasso.converged {
        return Err(PipelineError::NonConvergence {
            stage: Stage::Select,
            detail: format!("lasso stopped after {} sweeps at lambda={}", sel.lasso.sweeps, sel.lasso.lambda),
        });
    }
    diag.extend(w);
    Ok(sel)
}

pub fn run_cluster(
    cfg: &PipelineConfig,
    inputs: &Inputs,
    selection: &SelectionResult,
    diag: &mut Diagnostics,
) -> Result<ClusterDocument> {
    let features = &selection.union_selected;
    if features.is_empty() {
        return Err(PipelineError::Data {
            stage: Stage::Cluster,
            message: "no features were selected".into(),
        });
    }
    let x = inputs.z.columns(features).map_err(data(Stage::Cluster))?;
    let opts = KMeansOptions {
        seed: seed::derive(cfg.seed, "cluster"),
        ..cfg.cluster.kmeans
    };
    let n = x.nrows();
    let (fit, elbow) = match cfg.cluster.k {
        Some(k) => {
            let fit = kmeans(x.view(), k, &opts).map_err(data(Stage::Cluster))?;
            let curve = ElbowCurve {
                ks: vec![k],
                wcss: vec![fit.wcss],
                chosen_k: k,
                fixed: true,
            };
            (fit, curve)
        }
        None => {
            let range: Vec<usize> = cfg.cluster.k_range.iter().copied().filter(|&k| k <= n).collect();
            let e = elbow_select_k(x.view(), &range, &opts).map_err(data(Stage::Cluster))?;
            let fit = e.chosen_fit().clone();
            let curve = ElbowCurve {
                ks: e.ks,
                wcss: e.wcss,
                chosen_k: e.k,
                fixed: false,
            };
            (fit, curve)
        }
    };
    if !fit.converged {
        let detail = format!("k-means with k={} stopped after {} iterations", fit.k, fit.iterations);
        if cfg.strict {
            return Err(PipelineError::NonConvergence {
                stage: Stage::Cluster,
                detail,
            });
        }
        diag.extend([Warning::global(codes::NON_CONVERGENCE, detail)]);
    }
    let model = relabel_by_ir(&fit, inputs.z.units(), features, &inputs.target).map_err(data(Stage::Cluster))?;
    let summaries = cluster_report(&model, &inputs.target).map_err(data(Stage::Cluster))?;
    Ok(ClusterDocument {
        model,
        elbow,
        summaries,
        quartile_rule: QUARTILE_RULE.to_string(),
        iterations: fit.iterations,
        converged: fit.converged,
    })
}

pub fn run_embed(
    cfg: &PipelineConfig,
    inputs: &Inputs,
    selection: &SelectionResult,
    clusters: &ClusterDocument,
    diag: &mut Diagnostics,
) -> Result<FactorDocument> {
    let map_path = cfg.category_map.as_ref().map(|p| cfg.resolve(p));
    let (cmap, w) = load_category_map(map_path.as_deref(), &selection.union_selected).map_err(data(Stage::Embed))?;
    diag.extend(w);
    let (embeddings, w) = embed_all(&inputs.z, &cmap, &cfg.tsne, cfg.seed);
    diag.extend(w);
    let report = factor_report(&embeddings, &clusters.model).map_err(data(Stage::Embed))?;
    Ok(FactorDocument {
        caveat: LEVEL_CAVEAT.to_string(),
        quartile_rule: QUARTILE_RULE.to_string(),
        categories: cmap
            .categories
            .iter()
            .map(|(c, f)| CategoryEntry {
                category: c.clone(),
                features: f.clone(),
                embedded: embeddings.iter().any(|e| &e.category == c),
            })
            .collect(),
        uncategorized: cmap.uncategorized.clone(),
        unselected_mapped: cmap.unselected.clone(),
        summaries: report.summaries,
        embeddings: report.embeddings,
    })
}

/// Builds the choropleth when boundaries are configured.
pub fn run_report(
    cfg: &PipelineConfig,
    inputs: &Inputs,
    clusters: &ClusterDocument,
    factors: &FactorDocument,
    diag: &mut Diagnostics,
) -> Result<Option<String>> {
    let Some(b) = &cfg.boundaries else {
        return Ok(None);
    };
    let text = std::fs::read_to_string(cfg.resolve(&b.path)).map_err(data(Stage::Report))?;
    let (out, w) = emit_choropleth(&text, &b.unit_property, &clusters.model, &factors.embeddings, &inputs.target)
        .map_err(data(Stage::Report))?;
    diag.extend(w);
    Ok(Some(out))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileRecord {
    pub name: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub config_hash: String,
    pub seed: u64,
    pub units: usize,
    pub features: usize,
    /// Wall-clock milliseconds per stage; the only non-reproducible field.
    pub stage_timings_ms: BTreeMap<String, f64>,
    pub warnings: Vec<Warning>,
    /// Every data file written by the run. The manifest cannot carry its own
    /// checksum and is therefore not listed.
    pub files: Vec<FileRecord>,
}

/// Writes one output file, returning its record.
pub fn write_output(cfg: &PipelineConfig, stage: Stage, name: &str, body: &[u8]) -> Result<FileRecord> {
    let dir = cfg.resolve(&cfg.output_dir);
    let io = |path: PathBuf| move |source| PipelineError::Output { stage, path, source };
    std::fs::create_dir_all(&dir).map_err(io(dir.clone()))?;
    let path = dir.join(name);
    std::fs::write(&path, body).map_err(io(path.clone()))?;
    Ok(FileRecord {
        name: name.to_string(),
        sha256: hex::encode(Sha256::digest(body)),
        bytes: body.len() as u64,
    })
}

fn json_bytes<T: Serialize>(stage: Stage, value: &T) -> Result<Vec<u8>> {
    to_sorted_json(value).map(String::into_bytes).map_err(data(stage))
}

fn csv_bytes(stage: Stage, f: impl FnOnce(&mut Vec<u8>) -> std::result::Result<(), csv::Error>) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    f(&mut buf).map_err(data(stage))?;
    Ok(buf)
}

pub fn write_selection(cfg: &PipelineConfig, sel: &SelectionResult) -> Result<Vec<FileRecord>> {
    Ok(vec![write_output(cfg, Stage::Select, SELECTION_JSON, &json_bytes(Stage::Select, sel)?)?])
}

pub fn write_clusters(cfg: &PipelineConfig, inputs: &Inputs, doc: &ClusterDocument) -> Result<Vec<FileRecord>> {
    let csv = csv_bytes(Stage::Cluster, |b| doc.model.write_csv(&inputs.target, b))?;
    Ok(vec![
        write_output(cfg, Stage::Cluster, CLUSTERS_CSV, &csv)?,
        write_output(cfg, Stage::Cluster, CLUSTERS_JSON, &json_bytes(Stage::Cluster, doc)?)?,
    ])
}

pub fn write_factors(cfg: &PipelineConfig, doc: &FactorDocument) -> Result<Vec<FileRecord>> {
    let report = crate::embed::FactorReport {
        caveat: doc.caveat.clone(),
        summaries: doc.summaries.clone(),
        embeddings: Vec::new(),
    };
    let csv = csv_bytes(Stage::Embed, |b| report.write_csv(b))?;
    Ok(vec![
        write_output(cfg, Stage::Embed, FACTORS_CSV, &csv)?,
        write_output(cfg, Stage::Embed, FACTORS_JSON, &json_bytes(Stage::Embed, doc)?)?,
    ])
}

pub fn write_choropleth(cfg: &PipelineConfig, geojson: Option<&str>) -> Result<Vec<FileRecord>> {
    Ok(match geojson {
        Some(g) => vec![write_output(cfg, Stage::Report, CHOROPLETH, g.as_bytes())?],
        None => Vec::new(),
    })
}

/// Reads a JSON document written by an earlier stage from the output directory.
pub fn read_stage_output<T: for<'de> Deserialize<'de>>(cfg: &PipelineConfig, name: &str) -> Result<T> {
    let path = cfg.output_path(name);
    let text = std::fs::read_to_string(&path).map_err(|e| {
        PipelineError::Config(format!("cannot read {} (run the earlier stage first): {e}", path.display()))
    })?;
    serde_json::from_str(&text).map_err(|e| PipelineError::Data {
        stage: Stage::Config,
        message: format!("{}: {e}", path.display()),
    })
}

/// Runs every stage, writes all outputs and the manifest.
pub fn run_pipeline(cfg: &PipelineConfig, diag: &mut Diagnostics) -> Result<RunManifest> {
    cfg.validate()?;
    let mut timings = BTreeMap::new();
    let mut files = Vec::new();
    let mut clock = Instant::now();
    let mut lap = |name: &str, timings: &mut BTreeMap<String, f64>| {
        timings.insert(name.to_string(), clock.elapsed().as_secs_f64() * 1e3);
        clock = Instant::now();
    };

    let inputs = load_inputs(cfg, diag)?;
    lap("ingest", &mut timings);
    let sel = run_select(cfg, &inputs, diag)?;
    files.extend(write_selection(cfg, &sel)?);
    lap("select", &mut timings);
    let clusters = run_cluster(cfg, &inputs, &sel, diag)?;
    files.extend(write_clusters(cfg, &inputs, &clusters)?);
    lap("cluster", &mut timings);
    let factors = run_embed(cfg, &inputs, &sel, &clusters, diag)?;
    files.extend(write_factors(cfg, &factors)?);
    lap("embed", &mut timings);
    let geo = run_report(cfg, &inputs, &clusters, &factors, diag)?;
    files.extend(write_choropleth(cfg, geo.as_deref())?);
    lap("report", &mut timings);

    let manifest = RunManifest {
        tool: env!("CARGO_PKG_NAME").to_string(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        config_hash: cfg.hash(),
        seed: cfg.seed,
        units: inputs.table.n_units(),
        features: inputs.table.n_features(),
        stage_timings_ms: timings,
        warnings: diag.warnings.clone(),
        files,
    };
    write_output(cfg, Stage::Report, MANIFEST, &json_bytes(Stage::Report, &manifest)?)?;
    Ok(manifest)
}
