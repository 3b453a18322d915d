use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use geofactor::pipeline::{
    self, Diagnostics, Overrides, PipelineConfig, PipelineError, CLUSTERS_JSON, FACTORS_JSON, SELECTION_JSON,
};
use geofactor::report::{ClusterDocument, FactorDocument};
use geofactor::synth::{generate_synthetic, SynthError, SynthParams};
use geofactor::SelectionResult;

#[derive(Parser)]
#[command(name = "geofactor", version, about = "Feature selection, clustering and factor levels for geo-units")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Pipeline config (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Use this number of clusters instead of the elbow search.
    #[arg(long)]
    k: Option<usize>,
    /// Master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Fixed Lasso penalty (skips cross-validation).
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    perplexity: Option<f64>,
    /// Output directory (default: the config's `output_dir`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Fail with exit code 4 when an iterative fit does not converge.
    #[arg(long)]
    strict: bool,
    /// Do not echo warnings to stderr.
    #[arg(long, short)]
    quiet: bool,
}

#[derive(Args)]
struct SynthArgs {
    /// Where to write the generated config; data files go next to it.
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    units: Option<usize>,
    #[arg(long)]
    features: Option<usize>,
    #[arg(long)]
    days: Option<usize>,
    #[arg(long)]
    planted: Option<usize>,
    #[arg(long)]
    blobs: Option<usize>,
    #[arg(long)]
    separation: Option<f64>,
}

#[derive(Subcommand)]
enum Command {
    /// Run every stage and write all reports plus the manifest.
    Run(Common),
    /// Generate a synthetic dataset and a config that runs on it.
    Synth(SynthArgs),
    /// Feature selection only; writes selection.json.
    Select(Common),
    /// Clustering from selection.json; writes clusters.csv and clusters.json.
    Cluster(Common),
    /// Factor levels from selection.json and clusters.json; writes factors.csv and factors.json.
    Embed(Common),
    /// Choropleth from clusters.json and factors.json.
    Report(Common),
}

fn load(c: &Common) -> Result<(PipelineConfig, Diagnostics)> {
    let mut cfg = PipelineConfig::load(&c.config)?;
    cfg.apply(&Overrides {
        k: c.k,
        seed: c.seed,
        lambda: c.lambda,
        perplexity: c.perplexity,
        output_dir: c.out.clone(),
        strict: c.strict,
    });
    cfg.validate()?;
    let diag = Diagnostics {
        quiet: c.quiet,
        ..Default::default()
    };
    Ok((cfg, diag))
}

fn synth(a: &SynthArgs) -> Result<()> {
    let d = SynthParams::default();
    let p = SynthParams {
        units: a.units.unwrap_or(d.units),
        features: a.features.unwrap_or(d.features),
        days: a.days.unwrap_or(d.days),
        planted: a.planted.unwrap_or(d.planted),
        blobs: a.blobs.unwrap_or(d.blobs),
        separation: a.separation.unwrap_or(d.separation),
        seed: a.seed.unwrap_or(d.seed),
    };
    let dir = a.config.parent().map(PathBuf::from).unwrap_or_default();
    generate_synthetic(&p, &dir).map_err(|e| match e {
        SynthError::InvalidDimensions(_) => anyhow::Error::new(PipelineError::Config(e.to_string())),
        other => anyhow::Error::new(other),
    })?;
    let written = dir.join(geofactor::synth::CONFIG_FILE);
    if written != a.config {
        std::fs::rename(&written, &a.config).with_context(|| format!("moving config to {}", a.config.display()))?;
    }
    println!("wrote synthetic data and {}", a.config.display());
    Ok(())
}

fn execute(cmd: &Command) -> Result<()> {
    match cmd {
        Command::Synth(a) => synth(a),
        Command::Run(c) => {
            let (cfg, mut diag) = load(c)?;
            let m = pipeline::run_pipeline(&cfg, &mut diag)?;
            println!(
                "wrote {} files to {} ({} warnings)",
                m.files.len() + 1,
                cfg.resolve(&cfg.output_dir).display(),
                m.warnings.len()
            );
            Ok(())
        }
        Command::Select(c) => {
            let (cfg, mut diag) = load(c)?;
            let inputs = pipeline::load_inputs(&cfg, &mut diag)?;
            let sel = pipeline::run_select(&cfg, &inputs, &mut diag)?;
            pipeline::write_selection(&cfg, &sel)?;
            println!("selected {} of {} features", sel.union_selected.len(), sel.features.len());
            Ok(())
        }
        Command::Cluster(c) => {
            let (cfg, mut diag) = load(c)?;
            let inputs = pipeline::load_inputs(&cfg, &mut diag)?;
            let sel: SelectionResult = pipeline::read_stage_output(&cfg, SELECTION_JSON)?;
            let doc = pipeline::run_cluster(&cfg, &inputs, &sel, &mut diag)?;
            pipeline::write_clusters(&cfg, &inputs, &doc)?;
            println!("k = {}", doc.model.k);
            Ok(())
        }
        Command::Embed(c) => {
            let (cfg, mut diag) = load(c)?;
            let inputs = pipeline::load_inputs(&cfg, &mut diag)?;
            let sel: SelectionResult = pipeline::read_stage_output(&cfg, SELECTION_JSON)?;
            let clusters: ClusterDocument = pipeline::read_stage_output(&cfg, CLUSTERS_JSON)?;
            let doc = pipeline::run_embed(&cfg, &inputs, &sel, &clusters, &mut diag)?;
            pipeline::write_factors(&cfg, &doc)?;
            println!("embedded {} categories", doc.embeddings.len());
            Ok(())
        }
        Command::Report(c) => {
            let (cfg, mut diag) = load(c)?;
            let inputs = pipeline::load_inputs(&cfg, &mut diag)?;
            let clusters: ClusterDocument = pipeline::read_stage_output(&cfg, CLUSTERS_JSON)?;
            let factors: FactorDocument = pipeline::read_stage_output(&cfg, FACTORS_JSON)?;
            match pipeline::run_report(&cfg, &inputs, &clusters, &factors, &mut diag)? {
                Some(g) => {
                    pipeline::write_choropleth(&cfg, Some(&g))?;
                    println!("wrote {}", pipeline::CHOROPLETH);
                }
                None => println!("no boundaries configured; nothing to do"),
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            let code = e.downcast_ref::<PipelineError>().map_or(1, PipelineError::exit_code);
            ExitCode::from(code as u8)
        }
    }
}
