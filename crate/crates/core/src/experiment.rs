//! Replicated experiments: simulate datasets, run a method on every trial,
//! score against the ground truth and summarize.
//!
//! Layout of a dataset directory:
//!
//! ```text
//! manifest.json            system, sizes, base seed and per-trial seeds
//! trial_000.csv            trajectory or phase CSV
//! trial_000.truth.json     ground truth
//! ```
//!
//! An experiment writes `metrics.json` (per-trial reports and the summary),
//! `summary.csv` and one directory per trial with the GC matrix.

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::abm::{Mode, System};
use crate::baselines::{fit_linear_gc, local_te, DEFAULT_TE_BINS};
use crate::error::{Error, Result};
use crate::infer::{aggregate, binarize, effect_trace, interaction_durations, GcMatrix};
use crate::io::{self, GcFile, GroundTruth};
use crate::metrics::{evaluate, summarize, MetricReport, Summary, METRIC_NAMES};
use crate::rng::{derive_seed, Rng};
use crate::series::TrajectorySeries;
use crate::sim::boid::BoidWorld;
use crate::sim::kuramoto::KuramotoSystem;
use crate::train::{fit, TrainConfig, TrainOutcome};

pub const MANIFEST: &str = "manifest.json";
pub const METRICS: &str = "metrics.json";
pub const SUMMARY: &str = "summary.csv";
pub const DEFAULT_TRIALS: usize = 10;
/// Offset separating validation seeds from test seeds.
const VALIDATION_STREAM: u64 = 1 << 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SystemKind {
    Kuramoto,
    Boid,
}

impl SystemKind {
    pub fn name(self) -> &'static str {
        match self {
            SystemKind::Kuramoto => "kuramoto",
            SystemKind::Boid => "boid",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Abm,
    AbmNoNav,
    AbmNoTg,
    AbmNoNavNoTg,
    Gvar,
    LinearGc,
    LocalTe,
}

impl Method {
    pub const ALL: [Method; 7] =
        [Method::Abm, Method::AbmNoNav, Method::AbmNoTg, Method::AbmNoNavNoTg, Method::Gvar, Method::LinearGc, Method::LocalTe];

    pub fn name(self) -> &'static str {
        match self {
            Method::Abm => "abm",
            Method::AbmNoNav => "abm_no_nav",
            Method::AbmNoTg => "abm_no_tg",
            Method::AbmNoNavNoTg => "abm_no_nav_no_tg",
            Method::Gvar => "gvar",
            Method::LinearGc => "linear_gc",
            Method::LocalTe => "local_te",
        }
    }

    pub fn is_abm(self) -> bool {
        !matches!(self, Method::LinearGc | Method::LocalTe)
    }

    /// Apply the ablation to a training configuration. GVAR mode trains
    /// without the theory-guided term.
    pub fn configure(self, cfg: &TrainConfig) -> TrainConfig {
        let mut c = cfg.clone();
        match self {
            Method::Abm => {}
            Method::AbmNoNav => c.mode = Mode::NoNavigation,
            Method::AbmNoTg => c.theory_guided = false,
            Method::AbmNoNavNoTg => {
                c.mode = Mode::NoNavigation;
                c.theory_guided = false;
            }
            Method::Gvar => {
                c.mode = Mode::Gvar;
                c.theory_guided = false;
            }
            Method::LinearGc | Method::LocalTe => {}
        }
        c
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulationConfig {
    pub agents: usize,
    pub steps: usize,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        Self { agents: 5, steps: 200 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaselineConfig {
    /// Linear-GC order; `None` uses the system's default lag count.
    pub lags: Option<usize>,
    pub te_bins: usize,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        Self { lags: None, te_bins: DEFAULT_TE_BINS }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisConfig {
    /// Frame rate of trajectory files.
    pub fps: f64,
    pub bin_seconds: f64,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        Self { fps: 100.0, bin_seconds: 10.0 }
    }
}

/// Everything a config file can set. All sections are optional.
///
/// ```toml
/// [train]
/// epochs = 500
/// lambda = 0.1
///
/// [simulation]
/// agents = 5
/// steps = 200
///
/// [baselines]
/// te_bins = 8
///
/// [analysis]
/// fps = 30.0
/// bin_seconds = 10.0
/// ```
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub train: TrainConfig,
    pub simulation: SimulationConfig,
    pub baselines: BaselineConfig,
    pub analysis: AnalysisConfig,
}

impl Config {
    pub fn load(path: &Path) -> Result<Self> {
        let c: Config = io::read_toml(path)?;
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        if self.simulation.agents < 2 || self.simulation.steps < 2 {
            return Err(Error::Validation("simulation needs at least 2 agents and 2 steps".into()));
        }
        if self.baselines.te_bins < 2 || self.baselines.lags == Some(0) {
            return Err(Error::Validation("baselines need te_bins >= 2 and lags >= 1".into()));
        }
        if !(self.analysis.fps > 0.0 && self.analysis.bin_seconds > 0.0) {
            return Err(Error::Validation("analysis fps and bin_seconds must be positive".into()));
        }
        Ok(())
    }
}

/// Seeds and sizes of a simulated dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub system: SystemKind,
    pub base_seed: u64,
    pub agents: usize,
    pub steps: usize,
    pub dt: f64,
    pub trials: Vec<TrialEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialEntry {
    pub trial: usize,
    /// Simulation draws use `derive_seed(seed, 0)`, training `derive_seed(seed, 1)`.
    pub seed: u64,
    pub series: String,
    pub truth: String,
}

impl Manifest {
    pub fn load(dir: &Path) -> Result<Self> {
        io::read_json(&dir.join(MANIFEST))
    }

    pub fn load_trial(&self, dir: &Path, trial: usize) -> Result<(TrajectorySeries, GroundTruth)> {
        let e = self.trials.get(trial).ok_or_else(|| Error::Validation(format!("no trial {trial} in manifest")))?;
        let series = io::read_series(&dir.join(&e.series), self.dt)?;
        let truth: GroundTruth = io::read_json(&dir.join(&e.truth))?;
        let g = truth.graph()?;
        if g.agents() != series.agents() {
            return Err(Error::Dimension(format!("{}: truth has {} agents, series {}", e.truth, g.agents(), series.agents())));
        }
        Ok((series, truth))
    }
}

pub fn trial_seed(base: u64, trial: usize) -> u64 {
    derive_seed(base, trial as u64)
}

/// Simulate one trial in memory.
pub fn simulate_trial(system: SystemKind, sim: &SimulationConfig, seed: u64) -> Result<(TrajectorySeries, GroundTruth)> {
    let mut rng = Rng::new(derive_seed(seed, 0));
    match system {
        SystemKind::Kuramoto => {
            let k = KuramotoSystem::sample(sim.agents, &mut rng)?;
            let series = k.simulate(sim.steps)?;
            let g = k.ground_truth();
            Ok((series, GroundTruth::Kuramoto { p: sim.agents, edges: g.edges().to_vec(), omega: k.omega }))
        }
        SystemKind::Boid => {
            let world = BoidWorld::sample(sim.agents, &mut rng)?;
            let (series, _) = world.simulate(sim.steps)?;
            Ok((series, GroundTruth::Boid { p: sim.agents, relations: world.relations.edges().to_vec() }))
        }
    }
}

fn dt_of(system: SystemKind) -> f64 {
    match system {
        SystemKind::Kuramoto => crate::sim::kuramoto::STEP,
        SystemKind::Boid => crate::sim::boid::STEP,
    }
}

/// Write `trials` simulated trials and their manifest to `dir`.
pub fn simulate_dataset(system: SystemKind, sim: &SimulationConfig, trials: usize, base_seed: u64, dir: &Path) -> Result<Manifest> {
    if trials == 0 {
        return Err(Error::Validation("trials must be at least 1".into()));
    }
    let mut entries = Vec::with_capacity(trials);
    for trial in 0..trials {
        let seed = trial_seed(base_seed, trial);
        let (series, truth) = simulate_trial(system, sim, seed)?;
        let e = TrialEntry {
            trial,
            seed,
            series: format!("trial_{trial:03}.csv"),
            truth: format!("trial_{trial:03}.truth.json"),
        };
        io::write_series(&dir.join(&e.series), &series)?;
        io::write_json(&dir.join(&e.truth), &truth)?;
        entries.push(e);
    }
    let manifest =
        Manifest { system, base_seed, agents: sim.agents, steps: sim.steps, dt: dt_of(system), trials: entries };
    io::write_json(&dir.join(MANIFEST), &manifest)?;
    Ok(manifest)
}

/// Result of running one method on one sequence.
#[derive(Debug, Clone)]
pub struct MethodOutput {
    pub gc: GcMatrix,
    pub outcome: Option<TrainOutcome>,
}

/// Run `method` on a single sequence. `train.seed` seeds the model.
pub fn run_method(method: Method, system: &System, series: &TrajectorySeries, config: &Config) -> Result<MethodOutput> {
    match method {
        Method::LinearGc => {
            let lags = config.baselines.lags.unwrap_or_else(|| system.default_lags());
            Ok(MethodOutput { gc: fit_linear_gc(series, lags)?.1, outcome: None })
        }
        Method::LocalTe => Ok(MethodOutput { gc: local_te(series, config.baselines.te_bins)?.1, outcome: None }),
        _ => {
            let cfg = method.configure(&config.train);
            let outcome = fit(system, series, &cfg)?;
            Ok(MethodOutput { gc: aggregate(&outcome.coefficients), outcome: Some(outcome) })
        }
    }
}

/// Score a GC matrix; local TE carries no signs.
pub fn score(method: Method, gc: &GcMatrix, truth: &GroundTruth) -> Result<MetricReport> {
    let pred = binarize(gc)?;
    evaluate(gc, &pred, &truth.graph()?, truth.signed() && method != Method::LocalTe)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub trial: usize,
    pub seed: u64,
    pub metrics: Option<MetricReport>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub metric: String,
    pub summary: Option<Summary>,
}

/// Contents of `metrics.json`. Holds no timings, so equal inputs give equal
/// bytes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub system: SystemKind,
    pub method: Method,
    pub config: Config,
    pub trials: Vec<TrialRecord>,
    pub summary: Vec<SummaryRow>,
}

impl ExperimentReport {
    pub fn mean(&self, metric: &str) -> Option<f64> {
        self.summary.iter().find(|r| r.metric == metric).and_then(|r| r.summary).map(|s| s.mean)
    }

    pub fn failures(&self) -> usize {
        self.trials.iter().filter(|t| t.error.is_some()).count()
    }
}

pub fn summary_rows(reports: &[MetricReport]) -> Vec<SummaryRow> {
    METRIC_NAMES
        .iter()
        .map(|&m| SummaryRow { metric: m.to_string(), summary: summarize(reports.iter().map(|r| r.get(m))) })
        .collect()
}

/// Map `f` over `0..n` on up to `jobs` threads, keeping index order.
pub fn parallel_map<T, F>(n: usize, jobs: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync,
{
    let jobs = jobs.clamp(1, n.max(1));
    if jobs == 1 {
        return (0..n).map(f).collect();
    }
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<T>>> = Mutex::new((0..n).map(|_| None).collect());
    std::thread::scope(|s| {
        for _ in 0..jobs {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= n {
                    break;
                }
                let v = f(i);
                slots.lock().expect("worker panicked")[i] = Some(v);
            });
        }
    });
    slots.into_inner().expect("worker panicked").into_iter().map(|v| v.expect("every index computed")).collect()
}

/// Run one trial from a dataset directory, writing its GC file under `out`.
fn run_trial(manifest: &Manifest, data: &Path, trial: usize, method: Method, config: &Config, out: Option<&Path>) -> Result<MetricReport> {
    let (series, truth) = manifest.load_trial(data, trial)?;
    let mut config = config.clone();
    config.train.seed = derive_seed(manifest.trials[trial].seed, 1);
    let result = run_method(method, &truth.system(), &series, &config)?;
    let report = score(method, &result.gc, &truth)?;
    if let Some(out) = out {
        let dir = out.join(format!("trial_{trial:03}"));
        io::write_json(&dir.join("gc.json"), &GcFile::new(&result.gc, &binarize(&result.gc)?))?;
        io::write_json(&dir.join("metrics.json"), &report)?;
        if let Some(o) = &result.outcome {
            io::write_history(&dir.join("history.csv"), &o.history)?;
        }
    }
    Ok(report)
}

/// Run `method` on every trial of the dataset in `data`.
pub fn run_experiment(data: &Path, method: Method, config: &Config, jobs: usize, out: Option<&Path>) -> Result<ExperimentReport> {
    config.validate()?;
    let manifest = Manifest::load(data)?;
    if manifest.trials.is_empty() {
        return Err(Error::Validation("manifest lists no trials".into()));
    }
    let results = parallel_map(manifest.trials.len(), jobs, |t| run_trial(&manifest, data, t, method, config, out));
    let mut records = Vec::with_capacity(results.len());
    let mut reports = Vec::new();
    for (e, r) in manifest.trials.iter().zip(results) {
        match r {
            Ok(m) => {
                reports.push(m);
                records.push(TrialRecord { trial: e.trial, seed: e.seed, metrics: Some(m), error: None });
            }
            Err(err) => {
                log::error!("trial {}: {err}", e.trial);
                records.push(TrialRecord { trial: e.trial, seed: e.seed, metrics: None, error: Some(err.to_string()) });
            }
        }
    }
    let report = ExperimentReport {
        system: manifest.system,
        method,
        config: config.clone(),
        trials: records,
        summary: summary_rows(&reports),
    };
    if let Some(out) = out {
        io::write_json(&out.join(METRICS), &report)?;
        let rows: Vec<(&str, Option<Summary>)> = report.summary.iter().map(|r| (r.metric.as_str(), r.summary)).collect();
        io::write_summary(&out.join(SUMMARY), &rows)?;
    }
    Ok(report)
}

/// Candidate values searched by [`grid_search`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub lambda: Vec<f64>,
    pub beta: Vec<f64>,
    pub gamma: Vec<f64>,
}

impl Grid {
    /// Points spanning the published search ranges.
    pub fn default_for(system: SystemKind) -> Self {
        match system {
            SystemKind::Boid => Self { lambda: vec![0.01, 1.0, 100.0], beta: vec![0.0, 0.025], gamma: vec![1.0, 100.0, 10000.0] },
            SystemKind::Kuramoto => Self { lambda: vec![0.0, 0.01, 0.1], beta: vec![0.0, 0.025], gamma: vec![0.1, 10.0, 10000.0] },
        }
    }

    pub fn cells(&self) -> Vec<(f64, f64, f64)> {
        let mut v = Vec::new();
        for &l in &self.lambda {
            for &b in &self.beta {
                for &g in &self.gamma {
                    v.push((l, b, g));
                }
            }
        }
        v
    }
}

/// Metric used to rank grid cells: AUROC for oscillators (unsigned truth),
/// balanced accuracy for boids.
pub fn selection_metric(system: SystemKind) -> &'static str {
    match system {
        SystemKind::Kuramoto => "auroc",
        SystemKind::Boid => "ba",
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    pub lambda: f64,
    pub beta: f64,
    pub gamma: f64,
    pub score: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridResult {
    pub metric: String,
    pub cells: Vec<GridCell>,
    pub chosen: Config,
}

/// Seeds for validation trials, disjoint from the test stream of `base`.
pub fn validation_seed(base: u64, trial: usize) -> u64 {
    derive_seed(base ^ VALIDATION_STREAM, trial as u64)
}

/// Score every grid cell on freshly simulated validation trials and return
/// the best configuration. Ties keep the earlier cell.
pub fn grid_search(
    system: SystemKind,
    method: Method,
    base: &Config,
    grid: &Grid,
    trials: usize,
    seed: u64,
    jobs: usize,
) -> Result<GridResult> {
    base.validate()?;
    if trials == 0 || !method.is_abm() {
        return Err(Error::Validation("grid search needs an ABM method and at least one trial".into()));
    }
    let data: Vec<(TrajectorySeries, GroundTruth, u64)> = (0..trials)
        .map(|t| {
            let s = validation_seed(seed, t);
            simulate_trial(system, &base.simulation, s).map(|(a, b)| (a, b, s))
        })
        .collect::<Result<_>>()?;
    let metric = selection_metric(system);
    let cells = grid.cells();
    let jobs_total = cells.len() * trials;
    let scores: Vec<Option<f64>> = parallel_map(jobs_total, jobs, |n| {
        let (l, b, g) = cells[n / trials];
        let (series, truth, s) = &data[n % trials];
        let mut cfg = base.clone();
        cfg.train.lambda = l;
        cfg.train.beta = b;
        cfg.train.gamma = g;
        cfg.train.seed = derive_seed(*s, 1);
        run_method(method, &truth.system(), series, &cfg)
            .and_then(|r| score(method, &r.gc, truth))
            .map_err(|e| log::warn!("grid cell {l}/{b}/{g}: {e}"))
            .ok()
            .and_then(|r| r.get(metric))
    });
    let mut out = Vec::with_capacity(cells.len());
    let mut best: Option<(f64, usize)> = None;
    for (c, &(l, b, g)) in cells.iter().enumerate() {
        let s = summarize(scores[c * trials..(c + 1) * trials].iter().copied()).map(|s| s.mean);
        if let Some(v) = s {
            if best.is_none_or(|(bv, _)| v > bv) {
                best = Some((v, c));
            }
        }
        out.push(GridCell { lambda: l, beta: b, gamma: g, score: s });
    }
    let (_, c) = best.ok_or_else(|| Error::Optimization("no grid cell produced a score".into()))?;
    let mut chosen = base.clone();
    chosen.train.lambda = out[c].lambda;
    chosen.train.beta = out[c].beta;
    chosen.train.gamma = out[c].gamma;
    Ok(GridResult { metric: metric.to_string(), cells: out, chosen })
}

/// Output paths of [`analyze`].
#[derive(Debug, Clone)]
pub struct AnalysisFiles {
    pub gc: PathBuf,
    pub coefficients: PathBuf,
    pub trace: PathBuf,
    pub durations: PathBuf,
    pub history: PathBuf,
    pub model: PathBuf,
}

/// Fit the boid-style model to a trajectory CSV and write the GC matrix,
/// coefficients, effect traces and binned interaction durations.
pub fn analyze(input: &Path, config: &Config, out: &Path) -> Result<AnalysisFiles> {
    config.validate()?;
    let dt = 1.0 / config.analysis.fps;
    let series = io::read_series(input, dt)?;
    if series.kind() != crate::series::SeriesKind::Positional {
        return Err(Error::Validation("analysis expects a position trajectory (frame,agent,x,y[,z])".into()));
    }
    let outcome = fit(&System::Boid, &series, &config.train)?;
    let gc = aggregate(&outcome.coefficients);
    let trace = effect_trace(&outcome.coefficients);
    let durations = interaction_durations(&trace, config.analysis.fps, config.analysis.bin_seconds)?;
    let files = AnalysisFiles {
        gc: out.join("gc.json"),
        coefficients: out.join("coefficients.csv"),
        trace: out.join("trace.csv"),
        durations: out.join("durations.csv"),
        history: out.join("history.csv"),
        model: out.join("model.json"),
    };
    io::write_json(&files.gc, &GcFile::new(&gc, &binarize(&gc)?))?;
    io::write_coefficients(&files.coefficients, &outcome.coefficients)?;
    io::write_trace(&files.trace, &trace)?;
    io::write_durations(&files.durations, &durations)?;
    io::write_history(&files.history, &outcome.history)?;
    io::save_model(&files.model, &outcome.model)?;
    Ok(files)
}
