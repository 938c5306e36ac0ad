//! End-to-end orchestration and the on-disk artifact layout.
//!
//! A run directory holds one sub-directory per strategy
//! (`model.json`, `metrics.json`, `predictions.csv`, cover outputs) and, at the
//! top level, `report.json`, `summary.csv`, `site_table.csv`,
//! `resolved_config.json`, `timing.json` and `manifest.sha256`. Everything
//! except `timing.json` is a pure function of the inputs and the config.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use log::{info, warn};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::coverage::{
    aggregate, estimate_cover, fit_ols, render_scatter_svg, write_coverage_csv, write_fit_json, CoverageRecord, GroupBy, GroupMean,
    ImagePredictions, RegressionFit,
};
use crate::error::{io_err, json_err, Error, Result};
use crate::features::{cache_features, FeatureBackend, FeatureStore, StubBackend, DEFAULT_STUB_KEY};
use crate::hierclass::{self, Strategy, TrainOptions, TrainedClassifier};
use crate::ingest::{parse_manifest, split, summarize, Dataset, DatasetSummary, SplitSpec};
use crate::metrics::{evaluate, paired_t_test, write_report_json, write_summary_csv, MetricsReport, SummaryRow, TTestResult};
use crate::svm::TrainConfig;
use crate::taxonomy::{load_taxonomy, TaxonomyTree, KELP_CODE, KELP_NODE};

pub const CACHE_ENV: &str = "BENTHOSCAN_CACHE";
pub const RESOLVED_CONFIG: &str = "resolved_config.json";
pub const MANIFEST: &str = "manifest.sha256";
pub const TIMING: &str = "timing.json";

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BackendKind {
    Residual,
    #[default]
    Stub,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub images: PathBuf,
    pub labels: PathBuf,
    /// `None` uses the bundled Rottnest taxonomy.
    pub taxonomy: Option<PathBuf>,
    /// ONNX weights for the residual backend.
    pub model: Option<PathBuf>,
    /// `None` falls back to `$BENTHOSCAN_CACHE`, then `<out>/features.bsfc`.
    pub cache: Option<PathBuf>,
    pub out: PathBuf,
    pub backend: BackendKind,
    pub stub_key: u64,
    /// Any of `flat`, `inclusive`, `sibling`; run in this order.
    pub strategies: Vec<String>,
    pub node: String,
    pub split: SplitSpec,
    pub train: TrainConfig,
    pub seed: u64,
    pub workers: usize,
    pub all_nodes: bool,
    /// `None` uses `SOURCE_DATE_EPOCH`, else the current time.
    pub created_at: Option<String>,
}

impl RunConfig {
    pub fn new(images: impl Into<PathBuf>, labels: impl Into<PathBuf>, out: impl Into<PathBuf>) -> Self {
        RunConfig {
            images: images.into(),
            labels: labels.into(),
            taxonomy: None,
            model: None,
            cache: None,
            out: out.into(),
            backend: BackendKind::Stub,
            stub_key: DEFAULT_STUB_KEY,
            strategies: vec!["flat".into(), "inclusive".into(), "sibling".into()],
            node: KELP_NODE.into(),
            split: SplitSpec::ByLocationFraction { fraction: 0.7, seed: 0 },
            train: TrainConfig::default(),
            seed: 0,
            workers: 1,
            all_nodes: false,
            created_at: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let missing = |what: &str, p: &Path| Error::Config(format!("{what} {} does not exist", p.display()));
        if !self.images.is_file() {
            return Err(missing("image manifest", &self.images));
        }
        if !self.labels.is_file() {
            return Err(missing("label manifest", &self.labels));
        }
        if let Some(t) = self.taxonomy.as_ref().filter(|t| !t.is_file()) {
            return Err(missing("taxonomy", t));
        }
        if self.backend == BackendKind::Residual {
            match &self.model {
                None => return Err(Error::Config("the residual backend needs --model".into())),
                Some(m) if !m.is_file() => return Err(missing("model", m)),
                _ => {}
            }
        }
        if self.workers == 0 {
            return Err(Error::Config("--workers must be at least 1".into()));
        }
        if self.strategies.is_empty() {
            return Err(Error::Config("no strategy selected".into()));
        }
        for s in &self.strategies {
            self.strategy(s)?;
        }
        self.train.validate().map_err(|e| Error::Config(e.to_string()))?;
        Ok(())
    }

    pub fn strategy(&self, name: &str) -> Result<Strategy> {
        Strategy::from_name(name, &self.node).ok_or_else(|| Error::Config(format!("unknown strategy {name:?}")))
    }

    pub fn cache_path(&self) -> PathBuf {
        resolve_cache(self.cache.as_deref(), &self.out)
    }

    /// Copy with every default filled in, as written to `resolved_config.json`.
    pub fn resolved(&self) -> RunConfig {
        let mut r = self.clone();
        r.cache = Some(self.cache_path());
        r.created_at = Some(resolve_created_at(self.created_at.as_deref()));
        r.train.seed = self.seed;
        r
    }
}

pub fn resolve_cache(explicit: Option<&Path>, out: &Path) -> PathBuf {
    explicit
        .map(Path::to_path_buf)
        .or_else(|| std::env::var_os(CACHE_ENV).map(PathBuf::from))
        .unwrap_or_else(|| out.join("features.bsfc"))
}

/// Explicit value, else `SOURCE_DATE_EPOCH` as RFC 3339 UTC, else now.
pub fn resolve_created_at(explicit: Option<&str>) -> String {
    if let Some(s) = explicit {
        return s.to_string();
    }
    let from_env = std::env::var("SOURCE_DATE_EPOCH")
        .ok()
        .and_then(|v| v.trim().parse::<i64>().ok())
        .and_then(|secs| chrono::DateTime::from_timestamp(secs, 0));
    from_env
        .unwrap_or_else(chrono::Utc::now)
        .to_rfc3339_opts(chrono::SecondsFormat::Secs, true)
}

pub fn load_tree(path: Option<&Path>) -> Result<TaxonomyTree> {
    match path {
        Some(p) => {
            if !p.is_file() {
                return Err(Error::Config(format!("taxonomy {} does not exist", p.display())));
            }
            Ok(load_taxonomy(p)?)
        }
        None => Ok(TaxonomyTree::rottnest_default()),
    }
}

pub fn load_dataset(images: &Path, labels: &Path, tree: &TaxonomyTree) -> Result<Dataset> {
    let dataset = parse_manifest(images, labels)?;
    dataset.validate(tree)?;
    Ok(dataset)
}

pub fn make_backend(kind: BackendKind, model: Option<&Path>, stub_key: u64) -> Result<Box<dyn FeatureBackend>> {
    match kind {
        BackendKind::Stub => Ok(Box::new(StubBackend::new(stub_key))),
        #[cfg(feature = "onnx")]
        BackendKind::Residual => {
            let model = model.ok_or_else(|| Error::Config("the residual backend needs --model".into()))?;
            Ok(Box::new(crate::features::ResidualBackend::load(crate::features::ResidualConfig::new(model))?))
        }
        #[cfg(not(feature = "onnx"))]
        BackendKind::Residual => {
            let _ = model;
            Err(Error::Config("built without the `onnx` feature".into()))
        }
    }
}

/// Feature rows for `dataset.labels`, looked up by point and backend.
pub fn feature_rows<'s>(store: &'s FeatureStore, dataset: &Dataset, backend_id: &str) -> Result<Vec<&'s [f32]>> {
    dataset
        .labels
        .iter()
        .map(|l| {
            store
                .get(&l.image_id, l.x_px, l.y_px, backend_id)
                .map(|fv| fv.values.as_slice())
                .ok_or_else(|| Error::MissingFeature {
                    image_id: l.image_id.clone(),
                    x: l.x_px,
                    y: l.y_px,
                    backend_id: backend_id.to_string(),
                })
        })
        .collect()
}

pub fn train_strategy(
    strategy: &Strategy,
    tree: &TaxonomyTree,
    train: &Dataset,
    store: &FeatureStore,
    backend_id: &str,
    cfg: &TrainConfig,
    opts: &TrainOptions,
) -> Result<TrainedClassifier> {
    let x = feature_rows(store, train, backend_id)?;
    let codes: Vec<&str> = train.labels.iter().map(|l| l.class_code.as_str()).collect();
    Ok(hierclass::train(strategy, tree, &x, &codes, cfg, opts)?)
}

/// One test point with its truth, prediction and kelp indicators.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRow {
    pub image_id: String,
    pub site_id: String,
    pub year: i32,
    pub x_px: u32,
    pub y_px: u32,
    pub class_code: String,
    pub truth: String,
    pub predicted: String,
    pub truth_kelp: bool,
    pub predicted_kelp: bool,
}

/// Code whose precision/recall fill the kelp columns: the node's own code
/// (falling back to MAECK) for flat, the positive label for binary models.
fn kelp_label(clf: &TrainedClassifier, tree: &TaxonomyTree, node: &str) -> String {
    match clf {
        TrainedClassifier::LocalBinary { target, .. } => target.positive_label(),
        TrainedClassifier::Flat { .. } => tree
            .node(node)
            .ok()
            .and_then(|n| n.code.clone())
            .unwrap_or_else(|| KELP_CODE.to_string()),
    }
}

pub fn predict_points(
    clf: &TrainedClassifier,
    tree: &TaxonomyTree,
    node: &str,
    test: &Dataset,
    store: &FeatureStore,
) -> Result<Vec<PredictionRow>> {
    if store.dim() != clf.dim() {
        return Err(hierclass::HierError::DimensionMismatch {
            expected: clf.dim(),
            got: store.dim(),
        }
        .into());
    }
    let node_codes: BTreeSet<String> = tree.descendants(node)?;
    let x = feature_rows(store, test, clf.backend_id())?;
    let meta: HashMap<&str, (&str, i32)> = test
        .images
        .iter()
        .map(|im| (im.image_id.as_str(), (im.site_id.as_str(), im.year)))
        .collect();
    test.labels
        .iter()
        .zip(x)
        .map(|(l, row)| {
            let predicted = clf.predict(row)?;
            let (site, year) = meta[l.image_id.as_str()];
            Ok(PredictionRow {
                image_id: l.image_id.clone(),
                site_id: site.to_string(),
                year,
                x_px: l.x_px,
                y_px: l.y_px,
                class_code: l.class_code.clone(),
                truth: clf.truth_label(&l.class_code),
                predicted_kelp: clf.is_positive(&predicted, &node_codes),
                predicted,
                truth_kelp: node_codes.contains(&l.class_code),
            })
        })
        .collect()
}

pub fn score_predictions(rows: &[PredictionRow], kelp: &str) -> Result<MetricsReport> {
    let preds: Vec<&str> = rows.iter().map(|r| r.predicted.as_str()).collect();
    let truth: Vec<&str> = rows.iter().map(|r| r.truth.as_str()).collect();
    Ok(evaluate(&preds, &truth, &[] as &[&str])?.with_kelp(kelp))
}

pub fn write_predictions(rows: &[PredictionRow], path: &Path) -> Result<()> {
    let fmt_err = |e: csv::Error| Error::Format {
        path: path.display().to_string(),
        reason: e.to_string(),
    };
    let mut w = csv::Writer::from_path(path).map_err(fmt_err)?;
    for r in rows {
        w.serialize(r).map_err(fmt_err)?;
    }
    w.flush().map_err(io_err(path))
}

pub fn read_predictions(path: &Path) -> Result<Vec<PredictionRow>> {
    let fmt_err = |e: csv::Error| Error::Format {
        path: path.display().to_string(),
        reason: e.to_string(),
    };
    let mut r = csv::Reader::from_path(path).map_err(fmt_err)?;
    r.deserialize().collect::<std::result::Result<_, _>>().map_err(fmt_err)
}

/// Groups prediction rows per image, in first-appearance order.
pub fn image_predictions(rows: &[PredictionRow]) -> Vec<ImagePredictions> {
    let mut order: Vec<ImagePredictions> = Vec::new();
    let mut pos: HashMap<&str, usize> = HashMap::new();
    for r in rows {
        let i = *pos.entry(&r.image_id).or_insert_with(|| {
            order.push(ImagePredictions {
                image_id: r.image_id.clone(),
                site_id: r.site_id.clone(),
                year: r.year,
                predicted_kelp: Vec::new(),
                truth_kelp: Vec::new(),
            });
            order.len() - 1
        });
        order[i].predicted_kelp.push(r.predicted_kelp);
        order[i].truth_kelp.push(r.truth_kelp);
    }
    order
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverSummary {
    pub fit: Option<RegressionFit>,
    pub fit_error: Option<String>,
    pub by_site: Vec<GroupMean>,
    pub by_year: Vec<GroupMean>,
    pub by_site_year: Vec<GroupMean>,
}

fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value).map_err(json_err(path))?;
    s.push('\n');
    fs::write(path, s).map_err(io_err(path))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(json_err(path))
}

/// `coverage.csv`, `fit.json`, `scatter.svg` and `cover_groups.json` in `dir`.
pub fn cover_outputs(rows: &[PredictionRow], dir: &Path) -> Result<CoverSummary> {
    let records = estimate_cover(&image_predictions(rows))?;
    write_coverage_csv(&records, &dir.join("coverage.csv"))?;
    let (fit, fit_error) = match fit_ols(&records) {
        Ok(f) => (Some(f), None),
        Err(e) => {
            warn!("no regression fit for {}: {e}", dir.display());
            (None, Some(e.to_string()))
        }
    };
    match &fit {
        Some(f) => {
            write_fit_json(f, &dir.join("fit.json"))?;
            let svg = dir.join("scatter.svg");
            fs::write(&svg, render_scatter_svg(&records, f)).map_err(io_err(&svg))?;
        }
        None => write_json(&serde_json::json!({ "error": fit_error }), &dir.join("fit.json"))?,
    }
    let summary = CoverSummary {
        fit,
        fit_error,
        by_site: aggregate(&records, GroupBy::Site),
        by_year: aggregate(&records, GroupBy::Year),
        by_site_year: aggregate(&records, GroupBy::SiteYear),
    };
    write_json(&summary, &dir.join("cover_groups.json"))?;
    Ok(summary)
}

fn read_coverage_csv(path: &Path) -> Result<Vec<CoverageRecord>> {
    let fmt_err = |e: csv::Error| Error::Format {
        path: path.display().to_string(),
        reason: e.to_string(),
    };
    let mut r = csv::Reader::from_path(path).map_err(fmt_err)?;
    r.deserialize().collect::<std::result::Result<_, _>>().map_err(fmt_err)
}

/// One row of the per-site cover table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SiteRow {
    #[serde(rename = "Strategy")]
    pub strategy: String,
    #[serde(rename = "Site")]
    pub site: String,
    #[serde(rename = "Images")]
    pub images: usize,
    #[serde(rename = "Expert Identified (%)")]
    pub expert_pct: f64,
    #[serde(rename = "Estimated (%)")]
    pub estimated_pct: f64,
    #[serde(rename = "R²")]
    pub r_squared: Option<f64>,
}

pub fn site_rows(strategy: &str, records: &[CoverageRecord]) -> Vec<SiteRow> {
    aggregate(records, GroupBy::Site)
        .into_iter()
        .map(|g| {
            let site = g.key.site.clone().unwrap_or_default();
            let members: Vec<CoverageRecord> = records.iter().filter(|r| r.site_id == site).cloned().collect();
            SiteRow {
                strategy: strategy.to_string(),
                images: g.images,
                expert_pct: g.expert_mean_pct,
                estimated_pct: g.estimated_mean_pct,
                r_squared: fit_ols(&members).ok().map(|f| f.r_squared),
                site,
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategyReport {
    pub name: String,
    pub summary: Option<SummaryRow>,
    pub classes_in_test: Option<usize>,
    pub fit: Option<RegressionFit>,
    pub sites: Vec<SiteRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairedComparison {
    pub a: String,
    pub b: String,
    pub test: TTestResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub strategies: Vec<StrategyReport>,
    /// Paired t-tests on per-point kelp correctness.
    pub comparisons: Vec<PairedComparison>,
}

/// Merges the strategy directories under `dir` (any sub-directory with a
/// `coverage.csv`) into `report.json`, `summary.csv` and `site_table.csv`.
/// Reads only files it does not write, so repeated calls are idempotent.
pub fn build_report(dir: &Path) -> Result<Report> {
    let mut subdirs: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(io_err(dir))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir() && p.join("coverage.csv").is_file())
        .collect();
    subdirs.sort();
    let mut strategies = Vec::new();
    let mut correctness: Vec<(String, Vec<(String, u32, u32)>, Vec<u8>)> = Vec::new();
    let mut site_table = Vec::new();
    for sub in &subdirs {
        let name = sub.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        let records = read_coverage_csv(&sub.join("coverage.csv"))?;
        let metrics: Option<MetricsReport> = match sub.join("metrics.json") {
            p if p.is_file() => Some(read_json(&p)?),
            _ => None,
        };
        let fit = fit_ols(&records).ok();
        let sites = site_rows(&name, &records);
        site_table.extend(sites.iter().cloned());
        let preds = sub.join("predictions.csv");
        if preds.is_file() {
            let rows = read_predictions(&preds)?;
            correctness.push((
                name.clone(),
                rows.iter().map(|r| (r.image_id.clone(), r.x_px, r.y_px)).collect(),
                rows.iter().map(|r| u8::from(r.predicted_kelp == r.truth_kelp)).collect(),
            ));
        }
        strategies.push(StrategyReport {
            summary: metrics.as_ref().map(|m| m.summary_row(&name)),
            classes_in_test: metrics.as_ref().map(|m| m.classes_in_test),
            name,
            fit,
            sites,
        });
    }
    let mut comparisons = Vec::new();
    for i in 0..correctness.len() {
        for j in i + 1..correctness.len() {
            let (a, ka, ca) = &correctness[i];
            let (b, kb, cb) = &correctness[j];
            if ka != kb {
                warn!("{a} and {b} were evaluated on different points; skipping t-test");
                continue;
            }
            if let Ok(test) = paired_t_test(ca, cb) {
                comparisons.push(PairedComparison {
                    a: a.clone(),
                    b: b.clone(),
                    test,
                });
            }
        }
    }
    let rows: Vec<SummaryRow> = strategies.iter().filter_map(|s| s.summary.clone()).collect();
    write_summary_csv(&rows, &dir.join("summary.csv"))?;
    let site_path = dir.join("site_table.csv");
    let fmt_err = |e: csv::Error| Error::Format {
        path: site_path.display().to_string(),
        reason: e.to_string(),
    };
    let mut w = csv::Writer::from_path(&site_path).map_err(fmt_err)?;
    for r in &site_table {
        w.serialize(r).map_err(fmt_err)?;
    }
    w.flush().map_err(io_err(&site_path))?;
    let report = Report { strategies, comparisons };
    write_json(&report, &dir.join("report.json"))?;
    Ok(report)
}

fn walk_files(root: &Path, dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    for entry in fs::read_dir(dir).map_err(io_err(dir))? {
        let path = entry.map_err(io_err(dir))?.path();
        if path.is_dir() {
            walk_files(root, &path, out)?;
        } else if let Ok(rel) = path.strip_prefix(root) {
            out.push(rel.to_path_buf());
        }
    }
    Ok(())
}

/// Writes `manifest.sha256` (`<hex>  <relative path>`, sorted) for every file
/// under `dir` except the manifest itself and `timing.json`.
pub fn write_manifest(dir: &Path) -> Result<()> {
    let mut files = Vec::new();
    walk_files(dir, dir, &mut files)?;
    files.retain(|f| f != Path::new(MANIFEST) && f != Path::new(TIMING));
    files.sort();
    let mut text = String::new();
    for rel in files {
        let path = dir.join(&rel);
        let bytes = fs::read(&path).map_err(io_err(&path))?;
        let digest = Sha256::digest(&bytes);
        let hex: String = digest.iter().map(|b| format!("{b:02x}")).collect();
        let rel = rel.to_string_lossy().replace('\\', "/");
        text.push_str(&format!("{hex}  {rel}\n"));
    }
    let path = dir.join(MANIFEST);
    fs::write(&path, text).map_err(io_err(&path))
}

/// Writes `resolved_config.json` and then the manifest.
pub fn finalize_dir<T: Serialize>(dir: &Path, resolved: &T) -> Result<()> {
    write_json(resolved, &dir.join(RESOLVED_CONFIG))?;
    write_manifest(dir)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub stage_seconds: BTreeMap<String, f64>,
    pub images: usize,
    pub images_per_hour: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetReport {
    pub train: DatasetSummary,
    pub test: DatasetSummary,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub report: Report,
    pub metrics: BTreeMap<String, MetricsReport>,
    pub timing: Timing,
}

fn timed<T>(timing: &mut Timing, stage: &'static str, f: impl FnOnce() -> Result<T>) -> Result<T> {
    let start = Instant::now();
    let r = f().map_err(|e| e.in_stage(stage));
    *timing.stage_seconds.entry(stage.to_string()).or_insert(0.0) += start.elapsed().as_secs_f64();
    r
}

/// ingest → extract/cache → split → train (with CV) → evaluate → coverage → report.
pub fn run_pipeline(config: &RunConfig) -> Result<RunSummary> {
    config.validate()?;
    let resolved = config.resolved();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.workers)
        .build()
        .map_err(|e| Error::Config(format!("worker pool: {e}")))?;
    pool.install(|| run_stages(&resolved))
}

fn run_stages(cfg: &RunConfig) -> Result<RunSummary> {
    let started = Instant::now();
    let mut timing = Timing::default();
    let out = cfg.out.as_path();
    fs::create_dir_all(out).map_err(io_err(out))?;
    let created_at = cfg.created_at.clone().unwrap_or_default();

    let (tree, dataset) = timed(&mut timing, "ingest", || {
        let tree = load_tree(cfg.taxonomy.as_deref())?;
        let dataset = load_dataset(&cfg.images, &cfg.labels, &tree)?;
        Ok((tree, dataset))
    })?;
    tree.node(&cfg.node).map_err(|e| Error::Config(e.to_string()))?;

    let (store, backend_id) = timed(&mut timing, "extract", || {
        let backend = make_backend(cfg.backend, cfg.model.as_deref(), cfg.stub_key)?;
        let (store, _) = cache_features(&dataset, backend.as_ref(), &cfg.cache_path())?;
        Ok((store, backend.backend_id().to_string()))
    })?;

    let partition = timed(&mut timing, "split", || Ok(split(&dataset, &cfg.split)?))?;
    write_json(
        &DatasetReport {
            train: summarize(&partition.train.labels),
            test: summarize(&partition.test.labels),
        },
        &out.join("dataset.json"),
    )?;

    let mut metrics = BTreeMap::new();
    let opts = TrainOptions {
        all_nodes: cfg.all_nodes,
        backend_id: backend_id.clone(),
        created_at,
    };
    for name in &cfg.strategies {
        let strategy = cfg.strategy(name)?;
        let dir = out.join(name);
        fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        let clf = timed(&mut timing, "train", || {
            train_strategy(&strategy, &tree, &partition.train, &store, &backend_id, &cfg.train, &opts)
        })?;
        write_json(&clf, &dir.join("model.json"))?;
        let (rows, report) = timed(&mut timing, "evaluate", || {
            let rows = predict_points(&clf, &tree, &cfg.node, &partition.test, &store)?;
            let report = score_predictions(&rows, &kelp_label(&clf, &tree, &cfg.node))?;
            Ok((rows, report))
        })?;
        write_predictions(&rows, &dir.join("predictions.csv"))?;
        write_report_json(&report, &dir.join("metrics.json"))?;
        timed(&mut timing, "coverage", || cover_outputs(&rows, &dir))?;
        info!(
            "{name}: accuracy {:.4}, mean f1 {:.4}",
            report.accuracy, report.mean_f1
        );
        metrics.insert(name.clone(), report);
    }
    let report = timed(&mut timing, "report", || build_report(out))?;

    timing.images = dataset.images.len();
    let secs = started.elapsed().as_secs_f64();
    timing.images_per_hour = if secs > 0.0 { dataset.images.len() as f64 * 3600.0 / secs } else { 0.0 };
    write_json(&timing, &out.join(TIMING))?;
    finalize_dir(out, cfg)?;
    Ok(RunSummary { report, metrics, timing })
}
