//! Command-line interface.
//!
//! Exit statuses: 0 success, 2 configuration error, 3 data or dimension
//! error, 4 solver failure.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::error::{exit, io_err, json_err, Error, Result};
use crate::features::{cache_features, FeatureStore, DEFAULT_STUB_KEY};
use crate::hierclass::{TrainOptions, TrainedClassifier};
use crate::ingest::{split, summarize, SplitSpec};
use crate::metrics::write_report_json;
use crate::pipeline::{
    build_report, cover_outputs, finalize_dir, load_dataset, load_tree, make_backend, predict_points, read_predictions, resolve_created_at, run_pipeline, score_predictions, train_strategy, write_manifest, write_predictions, BackendKind, RunConfig,
    CACHE_ENV,
};
use crate::svm::TrainConfig;
use crate::synth;
use crate::taxonomy::KELP_NODE;

#[derive(Debug, Parser)]
#[command(name = "benthoscan", version, about = "Kelp point classification and cover estimation for benthic survey imagery")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Validate manifests against the taxonomy and summarise class counts.
    Ingest(IngestArgs),
    /// Extract and cache a feature vector for every labelled point.
    Extract(ExtractArgs),
    /// Train a classifier on the training split of cached features.
    Train(TrainArgs),
    /// Predict the test split with a trained classifier and score it.
    Evaluate(EvaluateArgs),
    /// Per-image kelp cover, regression fit and group means from predictions.
    Cover(CoverArgs),
    /// Merge strategy outputs in a run directory into summary tables.
    Report(ReportArgs),
    /// Run every stage end to end.
    Run(RunArgs),
    /// Write the synthetic 20-image survey.
    Synth(SynthArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendArg {
    Residual,
    Stub,
}

impl From<BackendArg> for BackendKind {
    fn from(b: BackendArg) -> Self {
        match b {
            BackendArg::Residual => BackendKind::Residual,
            BackendArg::Stub => BackendKind::Stub,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum StrategyArg {
    Flat,
    Inclusive,
    Sibling,
}

impl StrategyArg {
    fn name(self) -> &'static str {
        match self {
            StrategyArg::Flat => "flat",
            StrategyArg::Inclusive => "inclusive",
            StrategyArg::Sibling => "sibling",
        }
    }
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct ManifestArgs {
    #[arg(long)]
    pub images: PathBuf,
    #[arg(long)]
    pub labels: PathBuf,
    /// Taxonomy JSON; the bundled Rottnest tree when omitted.
    #[arg(long)]
    pub taxonomy: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct BackendArgs {
    #[arg(long, value_enum, default_value = "stub")]
    pub backend: BackendArg,
    /// ONNX weights for the residual backend.
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_STUB_KEY)]
    pub stub_key: u64,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct TrainingArgs {
    #[arg(long, default_value = "location:0.7:0", value_parser = parse_split)]
    pub split: SplitSpec,
    /// Comma-separated C values.
    #[arg(long, default_value = "0.01,0.1,1,10", value_parser = parse_c_grid)]
    pub c_grid: CGrid,
    #[arg(long, default_value_t = 3)]
    pub folds: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1e-4)]
    pub tolerance: f64,
    #[arg(long, default_value_t = 1000)]
    pub max_iterations: usize,
    #[arg(long, default_value = KELP_NODE)]
    pub node: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CGrid(pub Vec<f64>);

fn parse_split(s: &str) -> std::result::Result<SplitSpec, String> {
    s.parse().map_err(|e: crate::ingest::IngestError| e.to_string())
}

fn parse_c_grid(s: &str) -> std::result::Result<CGrid, String> {
    s.split(',')
        .map(|v| v.trim().parse::<f64>().map_err(|_| format!("{v:?} is not a number")))
        .collect::<std::result::Result<Vec<_>, _>>()
        .map(CGrid)
}

impl TrainingArgs {
    fn train_config(&self) -> TrainConfig {
        TrainConfig {
            c_grid: self.c_grid.0.clone(),
            folds: self.folds,
            tolerance: self.tolerance,
            max_iterations: self.max_iterations,
            seed: self.seed,
            ..TrainConfig::default()
        }
    }
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct IngestArgs {
    #[command(flatten)]
    pub manifests: ManifestArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct ExtractArgs {
    #[command(flatten)]
    pub manifests: ManifestArgs,
    #[command(flatten)]
    pub backend: BackendArgs,
    #[arg(long, env = CACHE_ENV)]
    pub cache: PathBuf,
    #[arg(long, default_value_t = 1)]
    pub workers: usize,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct TrainArgs {
    #[command(flatten)]
    pub manifests: ManifestArgs,
    #[arg(long, value_enum, default_value = "flat")]
    pub strategy: StrategyArg,
    #[command(flatten)]
    pub training: TrainingArgs,
    /// Feature cache written by `extract`.
    #[arg(long, alias = "cache", env = CACHE_ENV)]
    pub features: PathBuf,
    /// Backend whose vectors to use when the cache holds several.
    #[arg(long)]
    pub backend_id: Option<String>,
    /// Also train every other trainable tree node.
    #[arg(long)]
    pub all_nodes: bool,
    #[arg(long, default_value_t = 1)]
    pub workers: usize,
    #[arg(long)]
    pub created_at: Option<String>,
    /// Output model JSON.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct EvaluateArgs {
    #[command(flatten)]
    pub manifests: ManifestArgs,
    /// Classifier JSON written by `train`.
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long, alias = "cache", env = CACHE_ENV)]
    pub features: PathBuf,
    #[arg(long, default_value = "location:0.7:0", value_parser = parse_split)]
    pub split: SplitSpec,
    #[arg(long, default_value = KELP_NODE)]
    pub node: String,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct CoverArgs {
    /// `predictions.csv` written by `evaluate`.
    #[arg(long)]
    pub predictions: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct ReportArgs {
    /// Run directory holding one sub-directory per strategy.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub manifests: ManifestArgs,
    #[command(flatten)]
    pub backend: BackendArgs,
    /// Strategies to run (repeatable); all three when omitted.
    #[arg(long, value_enum)]
    pub strategy: Vec<StrategyArg>,
    #[command(flatten)]
    pub training: TrainingArgs,
    #[arg(long, env = CACHE_ENV)]
    pub cache: Option<PathBuf>,
    #[arg(long)]
    pub all_nodes: bool,
    #[arg(long, default_value_t = 1)]
    pub workers: usize,
    #[arg(long)]
    pub created_at: Option<String>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = synth::DEFAULT_IMAGES)]
    pub count: usize,
    #[arg(long, default_value_t = synth::DEFAULT_SEED)]
    pub seed: u64,
}

impl RunArgs {
    pub fn to_config(&self) -> RunConfig {
        let mut cfg = RunConfig::new(&self.manifests.images, &self.manifests.labels, &self.out);
        cfg.taxonomy = self.manifests.taxonomy.clone();
        cfg.model = self.backend.model.clone();
        cfg.cache = self.cache.clone();
        cfg.backend = self.backend.backend.into();
        cfg.stub_key = self.backend.stub_key;
        if !self.strategy.is_empty() {
            cfg.strategies = self.strategy.iter().map(|s| s.name().to_string()).collect();
        }
        cfg.node = self.training.node.clone();
        cfg.split = self.training.split.clone();
        cfg.train = self.training.train_config();
        cfg.seed = self.training.seed;
        cfg.workers = self.workers;
        cfg.all_nodes = self.all_nodes;
        cfg.created_at = self.created_at.clone();
        cfg
    }
}

fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value).map_err(json_err(path))?;
    s.push('\n');
    fs::write(path, s).map_err(io_err(path))
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(io_err(dir))
}

fn worker_pool(workers: usize) -> Result<rayon::ThreadPool> {
    if workers == 0 {
        return Err(Error::Config("--workers must be at least 1".into()));
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Config(format!("worker pool: {e}")))
}

fn open_store(path: &Path) -> Result<FeatureStore> {
    if !path.is_file() {
        return Err(Error::Config(format!("feature cache {} does not exist", path.display())));
    }
    Ok(FeatureStore::open(path)?)
}

fn sidecar(path: &Path) -> PathBuf {
    let mut name = path.file_stem().map(|s| s.to_os_string()).unwrap_or_default();
    name.push(".config.json");
    path.with_file_name(name)
}

fn cmd_ingest(a: &IngestArgs) -> Result<()> {
    let tree = load_tree(a.manifests.taxonomy.as_deref()).map_err(|e| e.in_stage("ingest"))?;
    let dataset = load_dataset(&a.manifests.images, &a.manifests.labels, &tree).map_err(|e| e.in_stage("ingest"))?;
    create_dir(&a.out)?;
    write_json(&summarize(&dataset.labels), &a.out.join("summary.json"))?;
    write_json(&dataset, &a.out.join("dataset.json"))?;
    finalize_dir(&a.out, a)
}

fn cmd_extract(a: &ExtractArgs) -> Result<()> {
    let tree = load_tree(a.manifests.taxonomy.as_deref())?;
    let dataset = load_dataset(&a.manifests.images, &a.manifests.labels, &tree).map_err(|e| e.in_stage("ingest"))?;
    let backend = make_backend(a.backend.backend.into(), a.backend.model.as_deref(), a.backend.stub_key)?;
    let (_, report) = worker_pool(a.workers)?
        .install(|| cache_features(&dataset, backend.as_ref(), &a.cache))
        .map_err(|e| Error::from(e).in_stage("extract"))?;
    println!(
        "{}: {} new, {} existing, {} images read",
        a.cache.display(),
        report.new_entries,
        report.existing_entries,
        report.images_processed
    );
    Ok(())
}

fn pick_backend_id(store: &FeatureStore, wanted: Option<&str>) -> Result<String> {
    let ids = store.backend_ids();
    match wanted {
        Some(w) if ids.iter().any(|i| i == w) => Ok(w.to_string()),
        Some(w) => Err(Error::Config(format!("cache holds no {w} features"))),
        None if ids.len() == 1 => Ok(ids[0].clone()),
        None if ids.is_empty() => Err(Error::Config("feature cache is empty".into())),
        None => Err(Error::Config(format!("cache holds several backends ({}); pass --backend-id", ids.join(", ")))),
    }
}

fn cmd_train(a: &TrainArgs) -> Result<()> {
    let tree = load_tree(a.manifests.taxonomy.as_deref())?;
    let dataset = load_dataset(&a.manifests.images, &a.manifests.labels, &tree).map_err(|e| e.in_stage("ingest"))?;
    let store = open_store(&a.features)?;
    let backend_id = pick_backend_id(&store, a.backend_id.as_deref())?;
    let strategy = crate::hierclass::Strategy::from_name(a.strategy.name(), &a.training.node)
        .ok_or_else(|| Error::Config("unknown strategy".into()))?;
    tree.node(&a.training.node).map_err(|e| Error::Config(e.to_string()))?;
    let cfg = a.training.train_config();
    cfg.validate().map_err(|e| Error::Config(e.to_string()))?;
    let partition = split(&dataset, &a.training.split).map_err(|e| Error::from(e).in_stage("split"))?;
    let opts = TrainOptions {
        all_nodes: a.all_nodes,
        backend_id: backend_id.clone(),
        created_at: resolve_created_at(a.created_at.as_deref()),
    };
    let clf = worker_pool(a.workers)?
        .install(|| train_strategy(&strategy, &tree, &partition.train, &store, &backend_id, &cfg, &opts))
        .map_err(|e| e.in_stage("train"))?;
    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    write_json(&clf, &a.out)?;
    write_json(a, &sidecar(&a.out))
}

fn cmd_evaluate(a: &EvaluateArgs) -> Result<()> {
    let tree = load_tree(a.manifests.taxonomy.as_deref())?;
    let dataset = load_dataset(&a.manifests.images, &a.manifests.labels, &tree).map_err(|e| e.in_stage("ingest"))?;
    if !a.model.is_file() {
        return Err(Error::Config(format!("model {} does not exist", a.model.display())));
    }
    let text = fs::read_to_string(&a.model).map_err(io_err(&a.model))?;
    let clf: TrainedClassifier = serde_json::from_str(&text).map_err(json_err(&a.model))?;
    let store = open_store(&a.features)?;
    let partition = split(&dataset, &a.split).map_err(|e| Error::from(e).in_stage("split"))?;
    let rows = predict_points(&clf, &tree, &a.node, &partition.test, &store).map_err(|e| e.in_stage("evaluate"))?;
    let kelp = match &clf {
        TrainedClassifier::LocalBinary { target, .. } => target.positive_label(),
        TrainedClassifier::Flat { .. } => tree
            .node(&a.node)
            .ok()
            .and_then(|n| n.code.clone())
            .unwrap_or_else(|| crate::taxonomy::KELP_CODE.to_string()),
    };
    let report = score_predictions(&rows, &kelp).map_err(|e| e.in_stage("evaluate"))?;
    create_dir(&a.out)?;
    write_predictions(&rows, &a.out.join("predictions.csv"))?;
    write_report_json(&report, &a.out.join("metrics.json"))?;
    finalize_dir(&a.out, a)
}

fn cmd_cover(a: &CoverArgs) -> Result<()> {
    let rows = read_predictions(&a.predictions)?;
    create_dir(&a.out)?;
    cover_outputs(&rows, &a.out).map_err(|e| e.in_stage("coverage"))?;
    finalize_dir(&a.out, a)
}

fn cmd_report(a: &ReportArgs) -> Result<()> {
    if !a.out.is_dir() {
        return Err(Error::Config(format!("{} is not a directory", a.out.display())));
    }
    build_report(&a.out).map_err(|e| e.in_stage("report"))?;
    write_manifest(&a.out)
}

fn cmd_run(a: &RunArgs) -> Result<()> {
    let summary = run_pipeline(&a.to_config())?;
    for s in &summary.report.strategies {
        if let Some(row) = &s.summary {
            println!(
                "{:<10} accuracy {:6.2}%  mean f1 {:.3}  kelp P {:6.2}%  R {:6.2}%",
                row.method, row.accuracy_pct, row.mean_f1, row.kelp_precision_pct, row.kelp_recall_pct
            );
        }
    }
    println!("{:.0} images/hour", summary.timing.images_per_hour);
    Ok(())
}

fn cmd_synth(a: &SynthArgs) -> Result<()> {
    let data = synth::generate(a.count, a.seed);
    let (images, labels) = synth::write_dataset(&data, &a.out)?;
    println!("wrote {} and {}", images.display(), labels.display());
    Ok(())
}

pub fn execute(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Ingest(a) => cmd_ingest(a),
        Command::Extract(a) => cmd_extract(a),
        Command::Train(a) => cmd_train(a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::Cover(a) => cmd_cover(a),
        Command::Report(a) => cmd_report(a),
        Command::Run(a) => cmd_run(a),
        Command::Synth(a) => cmd_synth(a),
    }
}

/// Parses `args`, runs the command and returns the process exit status.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { exit::CONFIG } else { exit::SUCCESS };
        }
    };
    match execute(&cli) {
        Ok(()) => exit::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
