//! Command-line verbs.
//!
//! Exit codes: 0 success, 1 validation failure (bad input, configuration,
//! failed asset checks, parse errors), 2 internal error (I/O and the like).

use std::fmt;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use polyflam_core::assets::{self, Assets};
use polyflam_core::bundle::{self, BundleError, PredictError, StructureInput, TrainedBundle};
use polyflam_core::copula;
use polyflam_core::dataset::{self, FeatureTable, IngestError};
use polyflam_core::descriptors::{self, DescriptorCatalog, DescriptorError};
use polyflam_core::forest::Hyperparams;
use polyflam_core::pipeline::{self, ExperimentConfig, PipelineError, RepeatedEvaluation, Target, TargetRun};

use crate::http;

const DEFAULT_BUNDLE: &str = "polyflam-bundle.json";

#[derive(Debug, Parser)]
#[command(name = "polyflam", version, about = "Polymer flammability prediction")]
pub struct Cli {
    /// Asset directory (defaults to $POLYFLAM_ASSETS or the shipped copy).
    #[arg(long, global = true)]
    pub assets: Option<PathBuf>,
    /// Descriptor catalog manifest (defaults to the built-in CHEM-1).
    #[arg(long, global = true)]
    pub catalog: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Clone)]
pub struct ExperimentArgs {
    /// Experiment file (TOML); defaults apply to anything omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Overrides the configured master seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Directory for reports and sweep curves.
    #[arg(long, default_value = "out")]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args, Clone)]
pub struct BundleArg {
    /// Model bundle path.
    #[arg(long, env = bundle::BUNDLE_ENV, default_value = DEFAULT_BUNDLE)]
    pub bundle: PathBuf,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Verify the shipped assets and report the outlier filter.
    Ingest,
    /// Compute catalog descriptors for SMILES strings.
    Descriptors {
        /// A repeat-unit SMILES (repeatable).
        #[arg(long)]
        smiles: Vec<String>,
        /// CSV with `name` and `smiles` columns.
        #[arg(long)]
        input: Option<PathBuf>,
        /// Output CSV (stdout if omitted).
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Fit a copula to a feature CSV and sample synthetic rows.
    Synth {
        /// Feature CSV to fit (a `name` column is ignored).
        #[arg(long)]
        input: PathBuf,
        /// Number of rows to sample.
        #[arg(long, short = 'n', default_value_t = 1000)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output CSV (stdout if omitted).
        #[arg(long)]
        output: Option<PathBuf>,
        /// Also write the fitted copula model (JSON).
        #[arg(long)]
        model_out: Option<PathBuf>,
    },
    /// Run the full pipeline and write a model bundle.
    Train {
        #[command(flatten)]
        experiment: ExperimentArgs,
        #[command(flatten)]
        bundle: BundleArg,
    },
    /// Write synthetic-size and top-k sweep curves without training a bundle.
    Sweep {
        #[command(flatten)]
        experiment: ExperimentArgs,
    },
    /// Repeated evaluation of a bundle's model settings.
    Eval {
        #[command(flatten)]
        experiment: ExperimentArgs,
        #[command(flatten)]
        bundle: BundleArg,
    },
    /// Predict all five metrics for one structure (JSON on stdout).
    Predict {
        #[arg(long, conflicts_with = "pdb", required_unless_present = "pdb")]
        smiles: Option<String>,
        /// PDB file.
        #[arg(long)]
        pdb: Option<PathBuf>,
        #[command(flatten)]
        bundle: BundleArg,
    },
    /// Start the HTTP service.
    Serve {
        #[command(flatten)]
        bundle: BundleArg,
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
    },
}

#[derive(Debug)]
pub enum CliError {
    Validation(String),
    Internal(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Internal(_) => 2,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Validation(m) | CliError::Internal(m) => f.write_str(m),
        }
    }
}

impl std::error::Error for CliError {}

fn internal(e: impl fmt::Display) -> CliError {
    CliError::Internal(e.to_string())
}

fn validation(e: impl fmt::Display) -> CliError {
    CliError::Validation(e.to_string())
}

impl From<IngestError> for CliError {
    fn from(e: IngestError) -> Self {
        match e {
            IngestError::Io { .. } => internal(e),
            _ => validation(e),
        }
    }
}

impl From<PipelineError> for CliError {
    fn from(e: PipelineError) -> Self {
        match e {
            PipelineError::Io { .. } => internal(e),
            PipelineError::Ingest(i) => i.into(),
            _ => validation(e),
        }
    }
}

impl From<BundleError> for CliError {
    fn from(e: BundleError) -> Self {
        match e {
            BundleError::Io { .. } => internal(e),
            _ => validation(e),
        }
    }
}

impl From<PredictError> for CliError {
    fn from(e: PredictError) -> Self {
        validation(e)
    }
}

impl From<DescriptorError> for CliError {
    fn from(e: DescriptorError) -> Self {
        validation(e)
    }
}

impl From<assets::AssetError> for CliError {
    fn from(e: assets::AssetError) -> Self {
        match e {
            assets::AssetError::Read { .. } => internal(e),
            _ => validation(e),
        }
    }
}

struct Context {
    assets_dir: PathBuf,
    catalog: DescriptorCatalog,
}

impl Context {
    fn assets(&self) -> Result<Assets, CliError> {
        Ok(Assets::load(&self.assets_dir)?)
    }
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    let catalog = match &cli.catalog {
        None => DescriptorCatalog::chem1(),
        Some(p) => DescriptorCatalog::load_manifest(p).map_err(validation)?,
    };
    let ctx = Context {
        assets_dir: cli.assets.clone().unwrap_or_else(assets::default_assets_dir),
        catalog,
    };
    match cli.command {
        Command::Ingest => ingest(&ctx),
        Command::Descriptors {
            smiles,
            input,
            output,
        } => descriptors_cmd(&ctx, smiles, input, output),
        Command::Synth {
            input,
            n,
            seed,
            output,
            model_out,
        } => synth(&input, n, seed, output, model_out),
        Command::Train { experiment, bundle } => train(&ctx, &experiment, &bundle.bundle),
        Command::Sweep { experiment } => sweep(&ctx, &experiment),
        Command::Eval { experiment, bundle } => eval(&ctx, &experiment, &bundle.bundle),
        Command::Predict { smiles, pdb, bundle } => predict(smiles, pdb, &bundle.bundle),
        Command::Serve { bundle, port, host } => serve(&ctx, &bundle.bundle, &host, port),
    }
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| internal(format!("{}: {e}", dir.display())))?;
    }
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| internal(format!("{}: {e}", path.display())))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value).map_err(internal)?;
    writeln!(w).and_then(|_| w.flush()).map_err(internal)
}

fn write_table(table: &FeatureTable, output: Option<&Path>) -> Result<(), CliError> {
    match output {
        Some(p) => Ok(table.write_csv(create(p)?)?),
        None => Ok(table.write_csv(std::io::stdout().lock())?),
    }
}

fn ingest(ctx: &Context) -> Result<(), CliError> {
    let report = assets::check_assets(&ctx.assets_dir)?;
    print!("{report}");
    if !report.passed() {
        return Err(CliError::Validation(format!(
            "asset verification failed: {}",
            report.failures().join("; ")
        )));
    }
    let assets = ctx.assets()?;
    let outcome = pipeline::filter_fi_table(&assets, &ctx.catalog)?;
    println!(
        "outlier filter: {} kept, {} removed",
        outcome.kept.len(),
        outcome.removed.len()
    );
    for d in outcome.decisions.iter().filter(|d| d.removed) {
        println!("  removed {} (FI {}, label {})", d.name, d.fi, d.label);
    }
    Ok(())
}

fn descriptors_cmd(
    ctx: &Context,
    smiles: Vec<String>,
    input: Option<PathBuf>,
    output: Option<PathBuf>,
) -> Result<(), CliError> {
    let (names, smiles): (Vec<String>, Vec<String>) = match input {
        Some(path) => {
            let mut rdr = csv::ReaderBuilder::new()
                .trim(csv::Trim::All)
                .from_path(&path)
                .map_err(|e| internal(format!("{}: {e}", path.display())))?;
            let header = rdr.headers().map_err(validation)?.clone();
            let col = |c: &str| {
                header
                    .iter()
                    .position(|h| h == c)
                    .ok_or_else(|| validation(format!("{}: missing column `{c}`", path.display())))
            };
            let (ni, si) = (col("name")?, col("smiles")?);
            let mut pairs = Vec::new();
            for rec in rdr.records() {
                let rec = rec.map_err(validation)?;
                pairs.push((rec[ni].to_string(), rec[si].to_string()));
            }
            pairs.into_iter().unzip()
        }
        None if !smiles.is_empty() => (smiles.clone(), smiles),
        None => return Err(validation("give --smiles or --input")),
    };
    let mut table = descriptors::descriptor_table_from_smiles(&smiles, &ctx.catalog)?;
    table.row_names = Some(names);
    write_table(&table, output.as_deref())
}

fn synth(
    input: &Path,
    n: usize,
    seed: u64,
    output: Option<PathBuf>,
    model_out: Option<PathBuf>,
) -> Result<(), CliError> {
    let table = dataset::load_feature_table(input, None)?;
    let model = copula::fit(&table).map_err(validation)?;
    if let Some(p) = model_out {
        model.save(&p).map_err(internal)?;
    }
    let sample = copula::sample(&model, n, seed).map_err(validation)?;
    write_table(&sample, output.as_deref())
}

fn load_config(args: &ExperimentArgs) -> Result<ExperimentConfig, CliError> {
    let mut cfg = match &args.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn write_sweeps(
    dir: &Path,
    target: Target,
    run_size: &pipeline::SweepResult,
    top_k: &pipeline::TopKSweep,
) -> Result<(), CliError> {
    let stem = target.column().to_ascii_lowercase();
    run_size.write_csv(create(&dir.join(format!("{stem}_size_sweep.csv")))?)?;
    top_k
        .sweep
        .write_csv(create(&dir.join(format!("{stem}_topk_sweep.csv")))?)?;
    let mut w = csv::Writer::from_writer(create(&dir.join(format!("{stem}_ranking.csv")))?);
    w.write_record(["rank", "descriptor"]).map_err(internal)?;
    for (i, name) in top_k.ranking.iter().enumerate() {
        w.write_record([(i + 1).to_string(), name.clone()])
            .map_err(internal)?;
    }
    w.flush().map_err(internal)
}

/// Per-target part of `train_report.json`.
#[derive(Serialize)]
struct TrainEntry<'a> {
    report: &'a pipeline::EvaluationReport,
    hyperparams: &'a Hyperparams,
    feature_names: &'a [String],
    size_sweep: &'a pipeline::SweepResult,
    top_k_sweep: &'a pipeline::SweepResult,
    cv_mean_scores: Option<&'a [f64]>,
}

#[derive(Serialize)]
struct TrainReport<'a> {
    seed: u64,
    catalog_id: &'a str,
    retained_fi_polymers: &'a [String],
    targets: Vec<TrainEntry<'a>>,
}

fn train(ctx: &Context, args: &ExperimentArgs, bundle_path: &Path) -> Result<(), CliError> {
    let cfg = load_config(args)?;
    let assets = ctx.assets()?;
    let (bundle, runs) = bundle::train_bundle(&cfg, &assets, &ctx.catalog)?;
    for run in &runs {
        write_sweeps(&args.out_dir, run.model.target, &run.size_sweep, &run.top_k_sweep)?;
    }
    let report = TrainReport {
        seed: cfg.seed,
        catalog_id: bundle.catalog_id(),
        retained_fi_polymers: &bundle.metadata.retained_fi_polymers,
        targets: runs.iter().map(train_entry).collect(),
    };
    write_json(&args.out_dir.join("train_report.json"), &report)?;
    bundle::save_bundle(&bundle, bundle_path)?;
    for run in &runs {
        let r = &run.report;
        println!(
            "{:5} n_synthetic={:5} top_k={:3} r2_train_synth={:.4} r2_test_real={:.4}",
            r.target.column(),
            r.n_synthetic,
            r.top_k.to_string(),
            r.r2_train_synth,
            r.r2_test_real
        );
    }
    println!("bundle written to {}", bundle_path.display());
    Ok(())
}

fn train_entry(run: &TargetRun) -> TrainEntry<'_> {
    TrainEntry {
        report: &run.report,
        hyperparams: &run.model.forest.hyperparams,
        feature_names: &run.model.feature_names,
        size_sweep: &run.size_sweep,
        top_k_sweep: &run.top_k_sweep.sweep,
        cv_mean_scores: run.cv_scores.as_deref(),
    }
}

fn sweep(ctx: &Context, args: &ExperimentArgs) -> Result<(), CliError> {
    let cfg = load_config(args)?;
    let assets = ctx.assets()?;
    let retained: Vec<String> = pipeline::filter_fi_table(&assets, &ctx.catalog)?
        .kept
        .into_iter()
        .map(|r| r.name)
        .collect();
    for &target in &cfg.targets {
        let real = pipeline::real_table(&assets, target, &ctx.catalog, &retained)?;
        let (sizes, top_k) = pipeline::run_sweeps(&real, &cfg)?;
        write_sweeps(&args.out_dir, target, &sizes, &top_k)?;
        println!(
            "{:5} best n_synthetic={} best top_k={}",
            target.column(),
            sizes.best,
            top_k.sweep.best
        );
    }
    Ok(())
}

fn eval(ctx: &Context, args: &ExperimentArgs, bundle_path: &Path) -> Result<(), CliError> {
    let cfg = load_config(args)?;
    let assets = ctx.assets()?;
    let bundle = bundle::load_bundle(bundle_path)?;
    let results = bundle::evaluate_bundle(&cfg, &assets, &bundle)?;
    write_json(&args.out_dir.join("eval_report.json"), &results)?;
    write_eval_csv(&args.out_dir.join("eval_repeats.csv"), &results)?;
    for r in &results {
        let a = &r.average;
        println!(
            "{:5} repeats={} r2_train_synth={:.4} r2_test_synth={:.4} r2_test_real={:.4}",
            a.target.column(),
            r.repeats.len(),
            a.r2_train_synth,
            a.r2_test_synth.unwrap_or(f64::NAN),
            a.r2_test_real
        );
    }
    Ok(())
}

fn write_eval_csv(path: &Path, results: &[RepeatedEvaluation]) -> Result<(), CliError> {
    let mut w = csv::Writer::from_writer(create(path)?);
    w.write_record([
        "target",
        "repeat",
        "seed",
        "r2_train_synth",
        "r2_test_synth",
        "r2_test_real",
    ])
    .map_err(internal)?;
    for r in results {
        for (i, rep) in r.repeats.iter().enumerate() {
            w.write_record([
                rep.target.column().to_string(),
                i.to_string(),
                rep.seed.to_string(),
                rep.r2_train_synth.to_string(),
                rep.r2_test_synth.map(|v| v.to_string()).unwrap_or_default(),
                rep.r2_test_real.to_string(),
            ])
            .map_err(internal)?;
        }
    }
    w.flush().map_err(internal)
}

fn predict(smiles: Option<String>, pdb: Option<PathBuf>, bundle_path: &Path) -> Result<(), CliError> {
    let bundle: TrainedBundle = bundle::load_bundle(bundle_path)?;
    let input = match (smiles, pdb) {
        (Some(s), _) => StructureInput::Smiles(s),
        (None, Some(p)) => {
            StructureInput::Pdb(std::fs::read(&p).map_err(|e| internal(format!("{}: {e}", p.display())))?)
        }
        (None, None) => return Err(validation("give --smiles or --pdb")),
    };
    let prediction = bundle::predict_all(&input, &bundle)?;
    let mut out = std::io::stdout().lock();
    serde_json::to_writer_pretty(&mut out, &prediction).map_err(internal)?;
    writeln!(out).map_err(internal)
}

fn serve(ctx: &Context, bundle_path: &Path, host: &str, port: u16) -> Result<(), CliError> {
    let state = http::AppState {
        bundle: Arc::new(bundle::load_bundle(bundle_path)?),
        assets: Arc::new(ctx.assets()?),
    };
    let runtime = tokio::runtime::Runtime::new().map_err(internal)?;
    runtime.block_on(http::serve(state, host, port)).map_err(internal)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cli_definition_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }

    #[test]
    fn exit_codes() {
        assert_eq!(validation("x").exit_code(), 1);
        assert_eq!(internal("x").exit_code(), 2);
        let e: CliError = BundleError::Corrupt("eof".into()).into();
        assert_eq!(e.exit_code(), 1);
    }
}
