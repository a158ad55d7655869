use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};

use crashsample::config::Config;
use crashsample::ground_truth::{build_ground_truth, GroundTruth, LiveSimulator};
use crashsample::harness::{self, ExperimentConfig, Method, Suite};
use crashsample::par::Execution;
use crashsample::scenario::{build_grid, ScenarioGrid};
use crashsample::sim::Target;
use crashsample::stopping::StoppingRule;
use crashsample::svg;

#[derive(Parser)]
#[command(name = "crashsample", version, about = "Sampling experiments on a synthetic crash scenario grid")]
struct Cli {
    /// Run everything on the calling thread.
    #[arg(long, global = true)]
    sequential: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate every cell and write the outcome table.
    GroundTruth {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run one experiment repetition and write its trace.
    Run {
        #[command(flatten)]
        exp: ExperimentArgs,
        /// Repetition index (selects the RNG stream).
        #[arg(long, default_value_t = 0)]
        repetition: u64,
        /// Replay outcomes from this table instead of simulating.
        #[arg(long)]
        ground_truth: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Repeat an experiment and write RMSE curves.
    Evaluate {
        #[command(flatten)]
        exp: ExperimentArgs,
        #[arg(long)]
        repetitions: Option<u64>,
        #[arg(long)]
        ground_truth: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run a comparison suite and write one RMSE CSV and chart per suite.
    Compare {
        /// methods, assr, strat-no-assr, strat-assr, batch-size or all.
        #[arg(long, default_value = "all")]
        suite: String,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        repetitions: Option<u64>,
        #[arg(long)]
        budget: Option<u64>,
        #[arg(long)]
        target: Option<String>,
        #[arg(long)]
        ground_truth: Option<PathBuf>,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Render an RMSE CSV as an SVG line chart.
    Plot {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "RMSE vs simulations")]
        title: String,
    },
}

#[derive(Args)]
struct ExperimentArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: u64,
    /// density, severity or active.
    #[arg(long)]
    method: Option<String>,
    /// speed_reduction, crash_avoidance or injury_risk_reduction.
    #[arg(long)]
    target: Option<String>,
    #[arg(long)]
    assr: Option<bool>,
    #[arg(long)]
    stratified: Option<bool>,
    /// Shrink case estimates toward the grand mean (default: active sampling only).
    #[arg(long)]
    shrinkage: Option<bool>,
    #[arg(long)]
    batch_size: Option<usize>,
    /// Replaces the stopping rules with a simulation budget.
    #[arg(long)]
    budget: Option<u64>,
    /// Adds an absolute standard-error stopping rule.
    #[arg(long)]
    se_threshold: Option<f64>,
    /// Adds a confidence-interval half-width stopping rule.
    #[arg(long)]
    rope: Option<f64>,
    /// Adds a coefficient-of-variation stopping rule, in percent.
    #[arg(long)]
    cv: Option<f64>,
    #[arg(long)]
    max_iterations: Option<u64>,
}

/// Failure class, mapped to the process exit code.
enum Failure {
    Config(anyhow::Error),
    Runtime(anyhow::Error),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Config(_) => 1,
            Failure::Runtime(_) => 2,
        }
    }
}

fn classify(e: anyhow::Error) -> Failure {
    use crashsample::Error as E;
    match e.downcast_ref::<E>() {
        Some(E::Config(_) | E::Parse(_) | E::NonCrashablePrototype { .. } | E::InitializationRequired) => {
            Failure::Config(e)
        }
        _ => Failure::Runtime(e),
    }
}

fn config_err<T>(r: anyhow::Result<T>) -> Result<T, Failure> {
    r.map_err(Failure::Config)
}

fn runtime<T>(r: anyhow::Result<T>) -> Result<T, Failure> {
    r.map_err(classify)
}

fn load_config(path: Option<&Path>) -> Result<Config, Failure> {
    match path {
        Some(p) => config_err(Config::load(p).with_context(|| format!("loading {}", p.display()))),
        None => Ok(Config::default()),
    }
}

fn apply_overrides(cfg: &mut ExperimentConfig, a: &ExperimentArgs) -> anyhow::Result<()> {
    cfg.seed = a.seed;
    if let Some(m) = &a.method {
        cfg.method = m.parse::<Method>()?;
    }
    if let Some(t) = &a.target {
        cfg.target = t.parse::<Target>()?;
    }
    if let Some(v) = a.assr {
        cfg.assr = v;
    }
    if let Some(v) = a.stratified {
        cfg.stratified = v;
    }
    if a.shrinkage.is_some() {
        cfg.shrinkage = a.shrinkage;
    }
    if let Some(v) = a.batch_size {
        cfg.batch_size = v;
    }
    if let Some(b) = a.budget {
        cfg.stopping = vec![StoppingRule::Budget { max_sims: b }];
    }
    if let Some(t) = a.se_threshold {
        cfg.stopping.push(StoppingRule::AbsoluteSe { threshold: t });
    }
    if let Some(h) = a.rope {
        cfg.stopping.push(StoppingRule::Rope { half_width: h });
    }
    if let Some(p) = a.cv {
        cfg.stopping.push(StoppingRule::Cv { percent: p });
    }
    if let Some(n) = a.max_iterations {
        cfg.stopping.push(StoppingRule::MaxIterations { iterations: n });
    }
    Ok(())
}

fn grid_for(cfg: &Config) -> Result<ScenarioGrid, Failure> {
    runtime(build_grid(&cfg.grid, &cfg.simulator).map_err(Into::into))
}

/// Loads the outcome table when given, otherwise simulates the full grid.
fn ground_truth_for(
    cfg: &Config,
    grid: &ScenarioGrid,
    path: Option<&Path>,
    exec: Execution,
) -> Result<GroundTruth, Failure> {
    match path {
        Some(p) => {
            let gt = config_err(
                GroundTruth::load(p, cfg.simulator.injury).with_context(|| format!("reading {}", p.display())),
            )?;
            if gt.dims != grid.dims() {
                return Err(Failure::Config(anyhow::anyhow!(
                    "{} does not match the configured grid",
                    p.display()
                )));
            }
            Ok(gt)
        }
        None => runtime(build_ground_truth(grid, &cfg.simulator, exec).map_err(Into::into)),
    }
}

fn create(path: &Path) -> Result<BufWriter<File>, Failure> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        runtime(fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display())))?;
    }
    runtime(
        File::create(path)
            .map(BufWriter::new)
            .with_context(|| format!("creating {}", path.display())),
    )
}

fn write_rmse(rows: &[harness::RmseRow], path: &Path) -> Result<(), Failure> {
    let mut w = create(path)?;
    runtime(harness::write_rmse_csv(rows, &mut w).map_err(Into::into))?;
    runtime(w.flush().map_err(Into::into))
}

fn run(cli: Cli) -> Result<(), Failure> {
    let exec = if cli.sequential {
        Execution::Sequential
    } else {
        Execution::Parallel
    };
    match cli.command {
        Command::GroundTruth { config, out } => {
            let cfg = load_config(config.as_deref())?;
            let grid = grid_for(&cfg)?;
            let t0 = Instant::now();
            let gt = runtime(build_ground_truth(&grid, &cfg.simulator, exec).map_err(Into::into))?;
            let mut w = create(&out)?;
            runtime(gt.write_csv(&mut w).map_err(Into::into))?;
            runtime(w.flush().map_err(Into::into))?;
            eprintln!(
                "{} cells, {} simulations in {:.2?}",
                grid.n_cells(),
                gt.sims_executed,
                t0.elapsed()
            );
            for t in Target::ALL {
                println!("{}\t{}", t.name(), gt.truth(t));
            }
        }
        Command::Run {
            exp,
            repetition,
            ground_truth,
            out,
        } => {
            let mut cfg = load_config(exp.config.as_deref())?;
            config_err(apply_overrides(&mut cfg.experiment, &exp))?;
            config_err(cfg.validate().map_err(Into::into))?;
            let grid = grid_for(&cfg)?;
            let result = match ground_truth {
                Some(p) => {
                    let gt = ground_truth_for(&cfg, &grid, Some(&p), exec)?;
                    harness::run_experiment(&cfg.experiment, &grid, &gt, repetition, exec)
                }
                None => {
                    let sim = LiveSimulator::new(&grid, cfg.simulator);
                    harness::run_experiment(&cfg.experiment, &grid, &sim, repetition, exec)
                }
            };
            let result = runtime(result.map_err(Into::into))?;
            let mut w = create(&out)?;
            runtime(harness::write_trace_csv(&result, &mut w).map_err(Into::into))?;
            runtime(w.flush().map_err(Into::into))?;
            eprintln!(
                "{} iterations, {} simulations, stopped: {}",
                result.iterations, result.sims_used, result.stop
            );
        }
        Command::Evaluate {
            exp,
            repetitions,
            ground_truth,
            out,
        } => {
            let mut cfg = load_config(exp.config.as_deref())?;
            config_err(apply_overrides(&mut cfg.experiment, &exp))?;
            if let Some(r) = repetitions {
                cfg.experiment.repetitions = r;
            }
            config_err(cfg.validate().map_err(Into::into))?;
            let grid = grid_for(&cfg)?;
            let gt = ground_truth_for(&cfg, &grid, ground_truth.as_deref(), exec)?;
            let rows = runtime(harness::evaluate_rmse(&cfg.experiment, &grid, &gt, gt.grand_mean, exec).map_err(Into::into))?;
            write_rmse(&rows, &out)?;
        }
        Command::Compare {
            suite,
            config,
            seed,
            repetitions,
            budget,
            target,
            ground_truth,
            out_dir,
        } => {
            let mut cfg = load_config(config.as_deref())?;
            if let Some(s) = seed {
                cfg.experiment.seed = s;
            }
            if let Some(r) = repetitions {
                cfg.experiment.repetitions = r;
            }
            if let Some(b) = budget {
                cfg.experiment.stopping = vec![StoppingRule::Budget { max_sims: b }];
            }
            if let Some(t) = target {
                cfg.experiment.target = config_err(t.parse().map_err(anyhow::Error::from))?;
            }
            let suites: Vec<Suite> = if suite == "all" {
                Suite::ALL.to_vec()
            } else {
                vec![config_err(suite.parse().map_err(anyhow::Error::from))?]
            };
            config_err(cfg.validate().map_err(Into::into))?;
            let grid = grid_for(&cfg)?;
            let gt = ground_truth_for(&cfg, &grid, ground_truth.as_deref(), exec)?;
            for s in suites {
                let t0 = Instant::now();
                let mut rows = Vec::new();
                for c in s.configs(&cfg.experiment, grid.n_events()) {
                    rows.extend(runtime(
                        harness::evaluate_rmse(&c, &grid, &gt, gt.grand_mean, exec).map_err(Into::into),
                    )?);
                }
                write_rmse(&rows, &out_dir.join(format!("{}.csv", s.name())))?;
                let chart = svg::render_rmse_chart(&rows, s.name());
                runtime(
                    fs::write(out_dir.join(format!("{}.svg", s.name())), chart).context("writing chart"),
                )?;
                eprintln!("suite {} done in {:.1?}", s.name(), t0.elapsed());
            }
        }
        Command::Plot { input, out, title } => {
            let f = config_err(File::open(&input).with_context(|| format!("opening {}", input.display())))?;
            let rows = config_err(harness::read_rmse_csv(BufReader::new(f)).map_err(Into::into))?;
            let chart = svg::render_rmse_chart(&rows, &title);
            let mut w = create(&out)?;
            runtime(w.write_all(chart.as_bytes()).map_err(Into::into))?;
            runtime(w.flush().map_err(Into::into))?;
        }
    }
    Ok(())
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
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            let (Failure::Config(e) | Failure::Runtime(e)) = &f;
            eprintln!("error: {e:#}");
            ExitCode::from(f.code())
        }
    }
}
