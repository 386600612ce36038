use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use mixtopo::config::{self, RunConfig, PRESETS};
use mixtopo::optimizer::run_optimization;
use mixtopo::output::write_outputs;
use mixtopo::pipeline::Targets;
use mixtopo::{ConfigError, NumericalError, OutputError};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Topology optimization with projection profiles.
///
/// The worker thread count can be set with the MIXTOPO_THREADS
/// environment variable (default: all cores).
#[derive(Parser)]
#[command(name = "mixtopo", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the optimization described by a configuration file.
    Run {
        config: PathBuf,
        #[command(flatten)]
        opts: RunOpts,
    },
    /// Run a built-in benchmark preset.
    Preset {
        name: String,
        #[command(flatten)]
        opts: RunOpts,
    },
    /// Compare analytic gradients with central differences on a random design.
    CheckGradients {
        config: PathBuf,
        /// Number of sampled density variables.
        #[arg(long, default_value_t = 20)]
        sample: usize,
        /// Continuation iteration whose parameters are used.
        #[arg(long, default_value_t = 0)]
        iteration: usize,
        #[arg(long, default_value_t = 1e-6)]
        step: f64,
        #[arg(long, default_value_t = 1e-4)]
        tolerance: f64,
        #[arg(long = "override", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// List the built-in presets.
    ListPresets,
}

#[derive(Args)]
struct RunOpts {
    /// Replace a configuration value, e.g. `grid.nelx=150`.
    #[arg(long = "override", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Output directory (defaults to the configured one).
    #[arg(long)]
    output: Option<PathBuf>,
    /// Only print the final summary.
    #[arg(long)]
    quiet: bool,
}

#[derive(Debug)]
enum Failure {
    Config(ConfigError),
    Numerical(NumericalError),
    Output(OutputError),
    Gradient(String),
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Config(e)
    }
}

impl From<NumericalError> for Failure {
    fn from(e: NumericalError) -> Self {
        Failure::Numerical(e)
    }
}

impl From<OutputError> for Failure {
    fn from(e: OutputError) -> Self {
        Failure::Output(e)
    }
}

impl Failure {
    fn exit_code(&self) -> u8 {
        match self {
            Failure::Config(_) => 2,
            Failure::Numerical(_) | Failure::Gradient(_) => 3,
            Failure::Output(_) => 1,
        }
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Config(e) => write!(f, "configuration error: {e}"),
            Failure::Numerical(e) => write!(f, "numerical failure: {e}"),
            Failure::Output(e) => write!(f, "output error: {e}"),
            Failure::Gradient(s) => write!(f, "gradient check failed: {s}"),
        }
    }
}

fn configure_threads() -> Result<(), Failure> {
    let Ok(v) = std::env::var("MIXTOPO_THREADS") else {
        return Ok(());
    };
    let n: usize = v.trim().parse().map_err(|_| {
        Failure::Config(ConfigError::Invalid {
            key: "MIXTOPO_THREADS".into(),
            reason: format!("expected a thread count, got `{v}`"),
        })
    })?;
    // A pool that already exists (e.g. set by an embedding process) is kept.
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

fn run(cfg: RunConfig, opts: &RunOpts) -> Result<(), Failure> {
    let cfg = cfg.with_overrides(&opts.overrides)?;
    let (problem, settings) = cfg.build()?;
    let dir = opts.output.clone().unwrap_or_else(|| cfg.output.clone());
    let start = Instant::now();
    let quiet = opts.quiet;
    let result = run_optimization(&problem, &settings, |r, _| {
        if !quiet {
            eprintln!(
                "it {:4}  f {:12.5}  g {:+.3e}  V_int {:.4}  |drho| {:.3}  |dx| {:.4}",
                r.iter,
                r.f,
                r.max_constraint(),
                r.volume_int,
                r.max_drho,
                r.max_dx
            );
        }
    })?;
    let manifest = write_outputs(&result, problem.grid(), &cfg, &dir)?;
    println!(
        "{}: f = {:.4}, V_int = {:.4}, {} iterations in {:.1} s, results in {}",
        cfg.name,
        manifest.compliance,
        manifest.volume_int,
        cfg.iterations,
        start.elapsed().as_secs_f64(),
        dir.display()
    );
    Ok(())
}

fn check_gradients(
    path: &Path,
    overrides: &[String],
    n_sample: usize,
    iteration: usize,
    h: f64,
    tolerance: f64,
) -> Result<(), Failure> {
    let cfg = config::load_config(path)?.with_overrides(overrides)?;
    let (problem, settings) = cfg.build()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let rho: Vec<f64> = (0..problem.n_rho()).map(|_| rng.random_range(0.2..0.8)).collect();
    let x = problem.profiles().map_or_else(Vec::new, |p| p.initial());
    let n_sample = n_sample.min(problem.n_rho());
    let picks = sample(&mut rng, problem.n_rho(), n_sample).into_vec();
    let targets = Targets {
        volume: settings.dilated_factor * settings.volume,
        local_volume: cfg.local_volume.as_ref().map_or(0.0, |l| l.target),
    };
    let step = settings.schedule.at(iteration);
    let reports = problem.check_gradients(&rho, &x, &step, &targets, &picks, h, 1e-8)?;
    let mut worst: f64 = 0.0;
    for r in &reports {
        println!("{:>3}  density {:.3e}  shape {:.3e}", r.name, r.rho_error, r.shape_error);
        worst = worst.max(r.rho_error).max(r.shape_error);
    }
    if worst > tolerance {
        return Err(Failure::Gradient(format!("worst relative error {worst:.3e} exceeds {tolerance:.1e}")));
    }
    Ok(())
}

fn dispatch(cli: Cli) -> Result<(), Failure> {
    configure_threads()?;
    match cli.command {
        Command::Run { config, opts } => run(config::load_config(&config)?, &opts),
        Command::Preset { name, opts } => run(config::preset(&name)?, &opts),
        Command::CheckGradients {
            config,
            sample,
            iteration,
            step,
            tolerance,
            overrides,
        } => check_gradients(&config, &overrides, sample, iteration, step, tolerance),
        Command::ListPresets => {
            for (name, about) in PRESETS {
                println!("{name:<22} {about}");
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("mixtopo: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
