use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use abmgc::abm::System;
use abmgc::experiment::{self, Config, Grid, Manifest, Method, SystemKind, DEFAULT_TRIALS};
use abmgc::infer::{aggregate, binarize, effect_trace};
use abmgc::io::{self, GcFile, GroundTruth};
use abmgc::metrics::MetricReport;
use abmgc::series::SeriesKind;
use abmgc::train::{coefficients, fit};
use abmgc::{Error, Result};

#[derive(Parser)]
#[command(name = "abmgc", version, about = "Signed Granger-causal discovery for multi-agent trajectories")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a dataset of trials with known interaction graphs.
    Simulate {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = DEFAULT_TRIALS)]
        trials: usize,
        #[arg(long, value_parser = parse_system)]
        system: SystemKind,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train the model on one sequence.
    Train {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        seq: Sequence,
        #[command(flatten)]
        ablation: Ablation,
        #[arg(long, value_parser = parse_method, default_value = "abm")]
        method: Method,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Recompute coefficients, GC matrix and effect traces from a checkpoint.
    Infer {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        seq: Sequence,
        /// Model checkpoint written by `train`.
        #[arg(long)]
        model: PathBuf,
    },
    /// Score a GC file against a ground-truth file.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        gc: PathBuf,
        #[arg(long)]
        truth: PathBuf,
        /// Treat the prediction as unsigned.
        #[arg(long)]
        unsigned: bool,
    },
    /// Run a method over all trials of a dataset and summarize.
    Experiment {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_parser = parse_system)]
        system: SystemKind,
        #[arg(long, value_parser = parse_method, default_value = "abm")]
        method: Method,
        #[command(flatten)]
        ablation: Ablation,
        #[arg(long, default_value_t = DEFAULT_TRIALS)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        /// Existing dataset directory; simulated into `<out>/data` when absent.
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Grid-search lambda, beta and gamma on validation trials.
    Grid {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_parser = parse_system)]
        system: SystemKind,
        #[arg(long, value_parser = parse_method, default_value = "abm")]
        method: Method,
        #[command(flatten)]
        ablation: Ablation,
        /// Validation trials per cell.
        #[arg(long, default_value_t = 3)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Fit a trajectory CSV and write GC, traces and interaction durations.
    Analyze {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        ablation: Ablation,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        fps: Option<f64>,
        #[arg(long)]
        bin_seconds: Option<f64>,
    },
    /// Check every known output file under a directory.
    Validate {
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct Common {
    /// TOML configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct Sequence {
    /// Trajectory or phase CSV.
    #[arg(long)]
    input: PathBuf,
    /// Ground-truth JSON; required for phase data (carries the frequencies).
    #[arg(long)]
    truth: Option<PathBuf>,
    /// Frame rate; defaults to the config's analysis fps.
    #[arg(long)]
    fps: Option<f64>,
}

#[derive(Args)]
struct Ablation {
    #[arg(long)]
    no_navigation: bool,
    #[arg(long)]
    no_tg: bool,
}

impl Ablation {
    fn apply(&self, method: Method) -> Result<Method> {
        if !(self.no_navigation || self.no_tg) {
            return Ok(method);
        }
        let no_nav = self.no_navigation || matches!(method, Method::AbmNoNav | Method::AbmNoNavNoTg);
        let no_tg = self.no_tg || matches!(method, Method::AbmNoTg | Method::AbmNoNavNoTg);
        match method {
            Method::Abm | Method::AbmNoNav | Method::AbmNoTg | Method::AbmNoNavNoTg => Ok(match (no_nav, no_tg) {
                (false, false) => Method::Abm,
                (true, false) => Method::AbmNoNav,
                (false, true) => Method::AbmNoTg,
                (true, true) => Method::AbmNoNavNoTg,
            }),
            m => Err(Error::Validation(format!("ablation flags do not apply to {}", m.name()))),
        }
    }
}

fn parse_system(s: &str) -> std::result::Result<SystemKind, String> {
    match s {
        "kuramoto" => Ok(SystemKind::Kuramoto),
        "boid" => Ok(SystemKind::Boid),
        _ => Err("expected kuramoto or boid".into()),
    }
}

fn parse_method(s: &str) -> std::result::Result<Method, String> {
    Method::ALL.into_iter().find(|m| m.name() == s).ok_or_else(|| {
        let names: Vec<&str> = Method::ALL.iter().map(|m| m.name()).collect();
        format!("expected one of {}", names.join(", "))
    })
}

fn load_config(path: Option<&Path>) -> Result<Config> {
    match path {
        Some(p) => Config::load(p),
        None => Ok(Config::default()),
    }
}

fn load_sequence(seq: &Sequence, config: &Config) -> Result<(abmgc::series::TrajectorySeries, System, Option<GroundTruth>)> {
    let fps = seq.fps.unwrap_or(config.analysis.fps);
    if !(fps > 0.0) {
        return Err(Error::Validation("fps must be positive".into()));
    }
    let series = io::read_series(&seq.input, 1.0 / fps)?;
    let truth: Option<GroundTruth> = seq.truth.as_deref().map(io::read_json).transpose()?;
    let system = match (&truth, series.kind()) {
        (Some(t), _) => t.system(),
        (None, SeriesKind::Positional) => System::Boid,
        (None, SeriesKind::Phase) => return Err(Error::Validation("phase data needs --truth for the frequencies".into())),
    };
    Ok((series, system, truth))
}

fn write_gc(out: &Path, gc: &abmgc::infer::GcMatrix) -> Result<()> {
    io::write_json(&out.join("gc.json"), &GcFile::new(gc, &binarize(gc)?))
}

fn run(command: Command) -> Result<bool> {
    match command {
        Command::Simulate { common, trials, system, seed } => {
            let config = load_config(common.config.as_deref())?;
            let m = experiment::simulate_dataset(system, &config.simulation, trials, seed, &common.out)?;
            println!("wrote {} {} trials to {}", m.trials.len(), system.name(), common.out.display());
        }
        Command::Train { common, seq, ablation, method, seed } => {
            let mut config = load_config(common.config.as_deref())?;
            let method = ablation.apply(method)?;
            if !method.is_abm() {
                return Err(Error::Validation(format!("train fits the model; use experiment for {}", method.name())));
            }
            if let Some(s) = seed {
                config.train.seed = s;
            }
            let (series, system, truth) = load_sequence(&seq, &config)?;
            let outcome = fit(&system, &series, &method.configure(&config.train))?;
            let gc = aggregate(&outcome.coefficients);
            io::save_model(&common.out.join("model.json"), &outcome.model)?;
            io::write_coefficients(&common.out.join("coefficients.csv"), &outcome.coefficients)?;
            io::write_history(&common.out.join("history.csv"), &outcome.history)?;
            write_gc(&common.out, &gc)?;
            if let Some(t) = truth {
                let report = experiment::score(method, &gc, &t)?;
                io::write_json(&common.out.join("metrics.json"), &report)?;
            }
            let last = outcome.history.last().map(|l| l.total).unwrap_or(f64::NAN);
            println!("trained {} epochs, final loss {last:.6}", outcome.history.len());
        }
        Command::Infer { common, seq, model } => {
            let config = load_config(common.config.as_deref())?;
            let model = io::load_model(&model)?;
            let (series, _, _) = load_sequence(&seq, &config)?;
            let design = abmgc::abm::Design::new(&series, &model.system, model.mode, model.lags)?;
            if design.layout != model.layout {
                return Err(Error::Dimension("sequence does not match the checkpoint".into()));
            }
            let psi = coefficients(&model, &design);
            io::write_coefficients(&common.out.join("coefficients.csv"), &psi)?;
            io::write_trace(&common.out.join("trace.csv"), &effect_trace(&psi))?;
            write_gc(&common.out, &aggregate(&psi))?;
        }
        Command::Eval { common, gc, truth, unsigned } => {
            let _ = load_config(common.config.as_deref())?;
            let file: GcFile = io::read_json(&gc)?;
            let truth: GroundTruth = io::read_json(&truth)?;
            let graph = truth.graph()?;
            let report = abmgc::metrics::evaluate(&file.gc()?, &file.graph()?, &graph, truth.signed() && !unsigned)?;
            io::write_json(&common.out.join("metrics.json"), &report)?;
            print_report(&report);
        }
        Command::Experiment { common, system, method, ablation, trials, seed, jobs, data } => {
            let config = load_config(common.config.as_deref())?;
            let method = ablation.apply(method)?;
            let data = match data {
                Some(d) => {
                    let m = Manifest::load(&d)?;
                    if m.system != system {
                        return Err(Error::Validation(format!("dataset holds {} trials", m.system.name())));
                    }
                    d
                }
                None => {
                    let d = common.out.join("data");
                    experiment::simulate_dataset(system, &config.simulation, trials, seed, &d)?;
                    d
                }
            };
            let report = experiment::run_experiment(&data, method, &config, jobs, Some(&common.out))?;
            println!("{} on {}: {} trials", method.name(), system.name(), report.trials.len());
            for row in &report.summary {
                if let Some(s) = row.summary {
                    println!("  {:<7} {:.3} ± {:.3} (n = {})", row.metric, s.mean, s.sd, s.count);
                }
            }
            if report.failures() > 0 {
                eprintln!("{} trial(s) failed; see {}", report.failures(), common.out.join(experiment::METRICS).display());
                return Ok(false);
            }
        }
        Command::Grid { common, system, method, ablation, trials, seed, jobs } => {
            let config = load_config(common.config.as_deref())?;
            let method = ablation.apply(method)?;
            let grid = Grid::default_for(system);
            let r = experiment::grid_search(system, method, &config, &grid, trials, seed, jobs)?;
            io::write_json(&common.out.join("grid.json"), &r)?;
            io::write_toml(&common.out.join("config.toml"), &r.chosen)?;
            let t = &r.chosen.train;
            println!("best {}: lambda {} beta {} gamma {}", r.metric, t.lambda, t.beta, t.gamma);
        }
        Command::Analyze { common, ablation, input, fps, bin_seconds } => {
            let mut config = load_config(common.config.as_deref())?;
            config.train = ablation.apply(Method::Abm)?.configure(&config.train);
            if let Some(f) = fps {
                config.analysis.fps = f;
            }
            if let Some(b) = bin_seconds {
                config.analysis.bin_seconds = b;
            }
            let files = experiment::analyze(&input, &config, &common.out)?;
            println!("wrote {}", files.gc.display());
        }
        Command::Validate { out } => {
            let (ok, bad) = validate_tree(&out)?;
            println!("{ok} file(s) valid, {bad} invalid");
            if bad > 0 {
                return Err(Error::Validation(format!("{bad} invalid file(s) under {}", out.display())));
            }
        }
    }
    Ok(true)
}

fn print_report(r: &MetricReport) {
    let f = |v: Option<f64>| v.map(|x| format!("{x:.3}")).unwrap_or_else(|| "-".into());
    println!(
        "acc {:.3} ba {:.3} auroc {} auprc {} ba_pos {} ba_neg {}",
        r.acc,
        r.ba,
        f(r.auroc),
        f(r.auprc),
        f(r.ba_pos),
        f(r.ba_neg)
    );
}

fn check_file(path: &Path) -> Result<Option<()>> {
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or_default();
    let ext = path.extension().and_then(|e| e.to_str()).unwrap_or_default();
    match (name, ext) {
        ("manifest.json", _) => {
            let m: Manifest = io::read_json(path)?;
            let dir = path.parent().unwrap_or(Path::new("."));
            for t in 0..m.trials.len() {
                m.load_trial(dir, t)?;
            }
        }
        ("gc.json", _) => {
            let f: GcFile = io::read_json(path)?;
            f.gc()?;
            f.graph()?;
        }
        ("model.json", _) => {
            io::load_model(path)?;
        }
        ("grid.json", _) => {
            io::read_json::<experiment::GridResult>(path)?;
        }
        ("metrics.json", _) => {
            let text = io::read_text(path)?;
            if serde_json::from_str::<experiment::ExperimentReport>(&text).is_err() {
                io::read_json::<MetricReport>(path)?;
            }
        }
        (n, "json") if n.ends_with(".truth.json") => {
            io::read_json::<GroundTruth>(path)?.graph()?;
        }
        ("config.toml", _) => {
            Config::load(path)?;
        }
        (_, "csv") => {
            let header = io::csv_header(path)?;
            let known: [&[&str]; 6] = [
                &["t", "i", "k", "u", "j", "q", "value"],
                &["t", "i", "j", "value"],
                &["bin", "source", "target", "positive_seconds", "negative_seconds"],
                &["epoch", "total", "prediction", "sparsity", "theory_guided", "smoothing"],
                &["metric", "mean", "sd", "count"],
                &[],
            ];
            match known.iter().find(|h| !h.is_empty() && header.iter().map(String::as_str).eq(h.iter().copied())) {
                Some(h) => {
                    io::validate_csv(path, h)?;
                }
                None => {
                    io::read_series(path, 1.0)?;
                }
            }
        }
        _ => return Ok(None),
    }
    Ok(Some(()))
}

fn validate_tree(root: &Path) -> Result<(usize, usize)> {
    let mut stack = vec![root.to_path_buf()];
    let (mut ok, mut bad) = (0, 0);
    if root.is_file() {
        return Ok(match check_file(root) {
            Ok(_) => (1, 0),
            Err(e) => {
                eprintln!("{e}");
                (0, 1)
            }
        });
    }
    while let Some(dir) = stack.pop() {
        let mut entries: Vec<PathBuf> = std::fs::read_dir(&dir)
            .map_err(|e| Error::Io { path: dir.clone(), source: e })?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .collect();
        entries.sort();
        for p in entries {
            if p.is_dir() {
                stack.push(p);
                continue;
            }
            match check_file(&p) {
                Ok(Some(())) => ok += 1,
                Ok(None) => {}
                Err(e) => {
                    eprintln!("{e}");
                    bad += 1;
                }
            }
        }
    }
    Ok((ok, bad))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli.command) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_validation() { 1 } else { 2 })
        }
    }
}
