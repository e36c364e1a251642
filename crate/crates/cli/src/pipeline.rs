//! File-backed pipeline stages: generate data, train, evaluate, report.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use conceptlab::aesindy::AesindyModel;
use conceptlab::agents::AgentsModel;
use conceptlab::bvae::BvaeModel;
use conceptlab::data::{ConceptLabeledSet, LiftedSet, QASet, SindySet, StateSet};
use conceptlab::sim::{self, SystemState, TankParams};
use conceptlab::sindy::SindyModel;
use conceptlab::somvae::SomVaeModel;

use crate::config::{Dataset, Module, RunConfig};
use crate::error::CliError;
use crate::experiments::{self, Data, Evaluation, Trained};

pub const METRICS_SCHEMA: &str = "conceptlab-metrics/1";

/// File locations under one output root.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn dataset(&self, dataset: Dataset, seed: u64) -> PathBuf {
        self.root
            .join("data")
            .join(format!("{}-s{seed}.csv", dataset.name()))
    }

    pub fn checkpoint(&self, module: Module, seed: u64) -> PathBuf {
        self.root
            .join("models")
            .join(format!("{module}-s{seed}.json"))
    }

    pub fn train_summary(&self, module: Module, seed: u64) -> PathBuf {
        self.root
            .join("models")
            .join(format!("{module}-s{seed}.train.json"))
    }

    pub fn metrics(&self, module: Module, seed: u64) -> PathBuf {
        self.root
            .join("reports")
            .join(format!("{module}-s{seed}.metrics.json"))
    }

    pub fn median_metrics(&self, module: Module, first: u64, count: usize) -> PathBuf {
        self.root
            .join("reports")
            .join(format!("{module}-median-s{first}x{count}.metrics.json"))
    }

    pub fn plot(&self, module: Module, seed: u64, name: &str) -> PathBuf {
        self.root
            .join("plots")
            .join(format!("{module}-s{seed}-{name}.csv"))
    }

    pub fn report_json(&self) -> PathBuf {
        self.root.join("report.json")
    }

    pub fn report_md(&self) -> PathBuf {
        self.root.join("report.md")
    }
}

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::io(format!("{}: {e}", path.display()))
}

fn ensure_parent(path: &Path) -> Result<(), CliError> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    }
    Ok(())
}

fn temp_name(path: &Path) -> PathBuf {
    let name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    path.with_file_name(format!(".{name}.tmp-{}", std::process::id()))
}

/// Writes via a temporary file in the same directory, then renames.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    ensure_parent(path)?;
    let tmp = temp_name(path);
    std::fs::write(&tmp, bytes).map_err(|e| io_err(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| io_err(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    atomic_write(path, text.as_bytes())
}

/// Runs a writer that may create side files next to `path` inside a scratch
/// directory, then moves every produced file into place.
fn save_atomically(
    path: &Path,
    save: impl FnOnce(&Path) -> conceptlab::Result<()>,
) -> Result<(), CliError> {
    ensure_parent(path)?;
    let dir = path.parent().unwrap_or(Path::new("."));
    let scratch = temp_name(path);
    std::fs::create_dir_all(&scratch).map_err(|e| io_err(&scratch, e))?;
    let result = save(&scratch.join(path.file_name().unwrap_or_default()));
    if let Err(e) = result {
        let _ = std::fs::remove_dir_all(&scratch);
        return Err(CliError::io(e.to_string()));
    }
    let entries = std::fs::read_dir(&scratch).map_err(|e| io_err(&scratch, e))?;
    for entry in entries {
        let entry = entry.map_err(|e| io_err(&scratch, e))?;
        let target = dir.join(entry.file_name());
        std::fs::rename(entry.path(), &target).map_err(|e| io_err(&target, e))?;
    }
    std::fs::remove_dir(&scratch).map_err(|e| io_err(&scratch, e))
}

fn require(path: &Path, what: &str) -> Result<(), CliError> {
    if path.exists() {
        Ok(())
    } else {
        Err(CliError::missing(format!(
            "{what} not found at {}; run the earlier stage first",
            path.display()
        )))
    }
}

pub fn save_data(path: &Path, data: &Data) -> Result<(), CliError> {
    save_atomically(path, |p| match data {
        Data::Concepts(s) => s.save_csv(p),
        Data::Qa(s) => s.save_csv(p),
        Data::Sindy(s) => s.save_csv(p),
        Data::Lifted(s) => s.save_csv(p),
        Data::States(s) => s.save_csv(p),
    })
}

pub fn load_data(path: &Path, dataset: Dataset) -> Result<Data, CliError> {
    require(path, &format!("{} dataset", dataset.name()))?;
    Ok(match dataset {
        Dataset::Concepts => Data::Concepts(ConceptLabeledSet::load_csv(path)?),
        Dataset::Qa => Data::Qa(QASet::load_csv(path)?),
        Dataset::Sindy => Data::Sindy(SindySet::load_csv(path)?),
        Dataset::Lifted => Data::Lifted(LiftedSet::load_csv(path)?),
        Dataset::States => Data::States(StateSet::load_csv(path)?),
    })
}

pub fn save_model(path: &Path, model: &Trained) -> Result<(), CliError> {
    save_atomically(path, |p| match model {
        Trained::Bvae(m) => m.save(p),
        Trained::Agents(m) => m.save(p),
        Trained::Sindy(m) => m.save_json(p),
        Trained::Aesindy(m) => m.save(p),
        Trained::Somvae(m) => m.save(p),
    })
}

pub fn load_model(path: &Path, module: Module) -> Result<Trained, CliError> {
    require(path, &format!("{module} checkpoint"))?;
    Ok(match module {
        Module::Bvae => Trained::Bvae(BvaeModel::load(path)?),
        Module::Agents => Trained::Agents(AgentsModel::load(path)?),
        Module::Sindy => Trained::Sindy(SindyModel::load_json(path)?),
        Module::Aesindy => Trained::Aesindy(AesindyModel::load(path)?),
        Module::Somvae => Trained::Somvae(SomVaeModel::load(path)?),
    })
}

/// Scalar metrics of one evaluation with the configuration that produced them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsBundle {
    pub schema: String,
    pub module: Module,
    /// Seeds aggregated into this bundle; one entry for a single run.
    pub seeds: Vec<u64>,
    pub config: RunConfig,
    pub metrics: BTreeMap<String, f64>,
    pub details: serde_json::Value,
}

impl MetricsBundle {
    pub fn validate(&self) -> Result<(), CliError> {
        if let Some((k, v)) = self.metrics.iter().find(|(_, v)| !v.is_finite()) {
            return Err(CliError::module(format!("metric {k} is not finite ({v})")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainSummary {
    pub module: Module,
    pub seed: u64,
    pub config: RunConfig,
    pub runtime_s: f64,
    pub summary: serde_json::Value,
}

/// Simulates one constant-parameter run and writes `t,h1,h2,h3`.
pub fn simulate(
    path: &Path,
    x0: SystemState,
    params: &TankParams,
    dt: f64,
    steps: usize,
) -> Result<(), CliError> {
    let traj = sim::simulate(x0, params, dt, steps)?;
    save_atomically(path, |p| traj.write_csv(p, false))
}

pub fn gen_data(cfg: &RunConfig, layout: &Layout, dataset: Dataset) -> Result<PathBuf, CliError> {
    let data = experiments::generate(cfg, dataset)?;
    let path = layout.dataset(dataset, cfg.seed);
    save_data(&path, &data)?;
    Ok(path)
}

pub fn train(cfg: &RunConfig, layout: &Layout, module: Module) -> Result<PathBuf, CliError> {
    let data = load_data(
        &layout.dataset(module.dataset(), cfg.seed),
        module.dataset(),
    )?;
    let start = Instant::now();
    let (model, summary) = experiments::fit(cfg, module, &data)?;
    let runtime_s = start.elapsed().as_secs_f64();
    let path = layout.checkpoint(module, cfg.seed);
    save_model(&path, &model)?;
    write_json(
        &layout.train_summary(module, cfg.seed),
        &TrainSummary {
            module,
            seed: cfg.seed,
            config: cfg.clone(),
            runtime_s,
            summary,
        },
    )?;
    Ok(path)
}

pub fn evaluate(
    cfg: &RunConfig,
    layout: &Layout,
    module: Module,
) -> Result<MetricsBundle, CliError> {
    let data = load_data(
        &layout.dataset(module.dataset(), cfg.seed),
        module.dataset(),
    )?;
    let model = load_model(&layout.checkpoint(module, cfg.seed), module)?;
    let start = Instant::now();
    let Evaluation {
        mut metrics,
        details,
        plots,
    } = experiments::evaluate(cfg, &model, &data)?;
    metrics.insert("eval_runtime_s".into(), start.elapsed().as_secs_f64());
    let summary_path = layout.train_summary(module, cfg.seed);
    if let Ok(text) = std::fs::read_to_string(&summary_path) {
        if let Ok(s) = serde_json::from_str::<TrainSummary>(&text) {
            metrics.insert("train_runtime_s".into(), s.runtime_s);
        }
    }
    for p in &plots {
        atomic_write(&layout.plot(module, cfg.seed, &p.name), &p.to_csv()?)?;
    }
    let bundle = MetricsBundle {
        schema: METRICS_SCHEMA.into(),
        module,
        seeds: vec![cfg.seed],
        config: cfg.clone(),
        metrics,
        details,
    };
    bundle.validate()?;
    write_json(&layout.metrics(module, cfg.seed), &bundle)?;
    Ok(bundle)
}

/// Generates and trains whatever is missing for `seed`, then evaluates.
pub fn run_seed(
    cfg: &RunConfig,
    layout: &Layout,
    module: Module,
) -> Result<MetricsBundle, CliError> {
    if !layout.dataset(module.dataset(), cfg.seed).exists() {
        gen_data(cfg, layout, module.dataset())?;
    }
    if !layout.checkpoint(module, cfg.seed).exists() {
        train(cfg, layout, module)?;
    }
    evaluate(cfg, layout, module)
}

/// Per-key median over bundles sharing a module.
pub fn median_bundle(bundles: &[MetricsBundle]) -> Result<MetricsBundle, CliError> {
    let first = bundles
        .first()
        .ok_or_else(|| CliError::module("no runs to aggregate"))?;
    let mut metrics = BTreeMap::new();
    for key in first.metrics.keys() {
        let values: Vec<f64> = bundles
            .iter()
            .filter_map(|b| b.metrics.get(key).copied())
            .collect();
        metrics.insert(key.clone(), experiments::median(&values));
    }
    let per_seed: BTreeMap<String, &BTreeMap<String, f64>> = bundles
        .iter()
        .map(|b| (b.seeds[0].to_string(), &b.metrics))
        .collect();
    Ok(MetricsBundle {
        schema: METRICS_SCHEMA.into(),
        module: first.module,
        seeds: bundles
            .iter()
            .flat_map(|b| b.seeds.iter().copied())
            .collect(),
        config: first.config.clone(),
        metrics,
        details: serde_json::json!({ "per_seed": per_seed }),
    })
}

pub fn evaluate_seeds(
    cfg: &RunConfig,
    layout: &Layout,
    module: Module,
    count: usize,
) -> Result<MetricsBundle, CliError> {
    let mut bundles = Vec::with_capacity(count);
    for i in 0..count as u64 {
        bundles.push(run_seed(&cfg.with_seed(cfg.seed + i), layout, module)?);
    }
    let median = median_bundle(&bundles)?;
    median.validate()?;
    write_json(&layout.median_metrics(module, cfg.seed, count), &median)?;
    Ok(median)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Report {
    pub schema: String,
    pub bundles: Vec<MetricsBundle>,
}

/// Collects every metrics bundle under the root into `report.json` and a
/// Markdown summary.
pub fn report(layout: &Layout) -> Result<Report, CliError> {
    let dir = layout.root.join("reports");
    let entries = std::fs::read_dir(&dir)
        .map_err(|e| CliError::missing(format!("no reports under {}: {e}", dir.display())))?;
    let mut paths: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.to_string_lossy().ends_with(".metrics.json"))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(CliError::missing(format!(
            "no metrics files under {}",
            dir.display()
        )));
    }
    let mut bundles = Vec::with_capacity(paths.len());
    for p in &paths {
        let text = std::fs::read_to_string(p).map_err(|e| io_err(p, e))?;
        let b: MetricsBundle = serde_json::from_str(&text)
            .map_err(|e| CliError::missing(format!("{}: {e}", p.display())))?;
        bundles.push(b);
    }
    let report = Report {
        schema: "conceptlab-report/1".into(),
        bundles,
    };
    write_json(&layout.report_json(), &report)?;
    atomic_write(&layout.report_md(), render_markdown(&report).as_bytes())?;
    Ok(report)
}

pub fn render_markdown(report: &Report) -> String {
    let mut out = String::from("# Run report\n");
    for b in &report.bundles {
        let seeds: Vec<String> = b.seeds.iter().map(u64::to_string).collect();
        out.push_str(&format!(
            "\n## {} (experiment `{}`, seeds {})\n\n| metric | value |\n|---|---|\n",
            b.module,
            b.config.experiment,
            seeds.join(", ")
        ));
        for (k, v) in &b.metrics {
            out.push_str(&format!("| {k} | {v:.6} |\n"));
        }
    }
    out
}
