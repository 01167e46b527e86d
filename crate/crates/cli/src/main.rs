//! Command-line driver: grid runs, solver validation and ε-sweeps.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use aggalign::kinetic::{epsilon_sweep, sweep_failures, SweepRow};
use aggalign::transport::{run, Diagnostics, DensityField, RunObserver};
use aggalign::validation::{run_solver_suites, SuiteOptions};
use aggalign::{SimConfig, SweepConfig};
use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use log::info;
use serde::Serialize;

#[derive(Parser)]
#[command(name = "aggalign", version, about = "Aggregation with nonlocal alignment: grid runs and verification suites")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a grid simulation and write snapshots, diagnostics and a manifest.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Output directory; overrides `output_dir` in the config.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Double `h` and `dt`.
        #[arg(long)]
        fast: bool,
    },
    /// Run the randomized solver property suites.
    Validate {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 200)]
        configs: usize,
        /// Multiply η by 10; the dominance check must then fail.
        #[arg(long)]
        break_eta: bool,
    },
    /// Compare the kinetic system with its first-order limit over an ε-sweep.
    Convergence {
        /// Sweep config; defaults to 20 particles, 1D Morse, ε ∈ {0.2, 0.1, 0.05}.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
}

/// Failure classes mapped to distinct exit codes.
enum Failure {
    Config(anyhow::Error),
    Check(String),
    Runtime(anyhow::Error),
}

const EXIT_CHECK: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_RUNTIME: u8 = 3;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Run { config, out, fast } => cmd_run(&config, out, fast),
        Command::Validate { seed, configs, break_eta } => cmd_validate(seed, configs, break_eta),
        Command::Convergence { config, out, seed } => cmd_convergence(config.as_deref(), out, seed),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(e)) => {
            eprintln!("error: invalid configuration: {e:#}");
            ExitCode::from(EXIT_CONFIG)
        }
        Err(Failure::Check(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_CHECK)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_RUNTIME)
        }
    }
}

fn read_toml<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

/// Snapshot files named by time, plus one JSON line per diagnostics record.
struct FileObserver {
    snapshots: PathBuf,
    diagnostics: BufWriter<File>,
    written: usize,
}

impl FileObserver {
    fn create(dir: &Path) -> std::io::Result<Self> {
        let snapshots = dir.join("snapshots");
        fs::create_dir_all(&snapshots)?;
        let diagnostics = BufWriter::new(File::create(dir.join("diagnostics.jsonl"))?);
        Ok(FileObserver { snapshots, diagnostics, written: 0 })
    }
}

impl RunObserver for FileObserver {
    fn snapshot(&mut self, field: &DensityField, velocity: &[f64]) -> std::io::Result<()> {
        let path = self.snapshots.join(format!("snapshot_t{:.6}.csv", field.time));
        let mut w = BufWriter::new(File::create(path)?);
        let d = field.grid.dim();
        if d == 1 {
            writeln!(w, "x,rho,u_x")?;
        } else {
            writeln!(w, "x,y,rho,u_x,u_y")?;
        }
        for node in 0..field.grid.len() {
            let p = field.grid.position(node);
            for c in p.iter().take(d) {
                write!(w, "{c},")?;
            }
            write!(w, "{}", field.rho[node])?;
            for c in 0..d {
                write!(w, ",{}", velocity[node * d + c])?;
            }
            writeln!(w)?;
        }
        self.written += 1;
        w.flush()
    }

    fn diagnostics(&mut self, record: &Diagnostics) -> std::io::Result<()> {
        serde_json::to_writer(&mut self.diagnostics, record)?;
        writeln!(self.diagnostics)
    }
}

#[derive(Serialize)]
struct Manifest<'a, C: Serialize, S: Serialize> {
    command: &'a str,
    version: &'a str,
    wall_time_s: f64,
    config: &'a C,
    summary: S,
}

fn write_artifacts<C: Serialize, S: Serialize>(
    dir: &Path,
    command: &str,
    config: &C,
    wall_time_s: f64,
    summary: S,
) -> Result<()> {
    fs::write(dir.join("config.toml"), toml::to_string(config)?)?;
    let manifest = Manifest { command, version: env!("CARGO_PKG_VERSION"), wall_time_s, config, summary };
    fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
    Ok(())
}

fn output_dir(flag: Option<PathBuf>, configured: Option<&PathBuf>, default: &str) -> PathBuf {
    flag.or_else(|| configured.cloned()).unwrap_or_else(|| PathBuf::from(default))
}

#[derive(Serialize)]
struct RunSummaryRecord {
    steps: usize,
    snapshots: usize,
    mass_drift: f64,
    com_drift: f64,
    clamped_total: f64,
    final_error_to_target: Option<f64>,
}

fn cmd_run(path: &Path, out: Option<PathBuf>, fast: bool) -> Result<(), Failure> {
    let mut config: SimConfig = read_toml(path).map_err(Failure::Config)?;
    if fast {
        config = config.fast();
    }
    config.validate().map_err(|e| Failure::Config(e.into()))?;
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("run");
    let dir = output_dir(out, config.output_dir.as_ref(), &format!("runs/{stem}"));
    config.output_dir = Some(dir.clone());

    let runtime = |e: std::io::Error| Failure::Runtime(anyhow::Error::new(e).context(format!("writing {}", dir.display())));
    fs::create_dir_all(&dir).map_err(runtime)?;
    let mut observer = FileObserver::create(&dir).map_err(runtime)?;
    info!("running {} steps into {}", config.step_count(), dir.display());
    let start = Instant::now();
    let summary = run(&config, &mut observer).map_err(|e| Failure::Runtime(e.into()))?;
    observer.diagnostics.flush().map_err(runtime)?;
    let wall = start.elapsed().as_secs_f64();

    let last = summary.diagnostics.last().expect("run records the final state");
    let record = RunSummaryRecord {
        steps: summary.steps,
        snapshots: observer.written,
        mass_drift: summary.mass_drift(),
        com_drift: summary.com_drift(),
        clamped_total: summary.clamped_total,
        final_error_to_target: last.error_to_target,
    };
    write_artifacts(&dir, "run", &config, wall, &record).map_err(Failure::Runtime)?;
    println!(
        "t = {:.3}: mass {:.6}, support radius {:.3}, error to target {}",
        last.t,
        last.mass,
        last.support_radius,
        last.error_to_target.map_or("n/a".into(), |e| format!("{e:.4e}"))
    );
    println!("{} steps, {} snapshots in {} ({wall:.1} s)", summary.steps, observer.written, dir.display());
    Ok(())
}

fn cmd_validate(seed: u64, configs: usize, break_eta: bool) -> Result<(), Failure> {
    let opts = SuiteOptions { configs, seed, break_eta, ..SuiteOptions::default() };
    let start = Instant::now();
    let report = run_solver_suites(&opts).map_err(|e| Failure::Runtime(e.into()))?;
    println!("{:<24} {:>6} {:>6} {:>12}  result", "check", "pass", "fail", "worst");
    for c in &report.checks {
        println!(
            "{:<24} {:>6} {:>6} {:>12.3e}  {}",
            c.name,
            c.passed,
            c.failed,
            c.worst,
            if c.ok() { "PASS" } else { "FAIL" }
        );
        if let Some(why) = &c.first_failure {
            println!("    first failure: {why}");
        }
    }
    println!("{} configurations, seed {seed}, {:.1} s", report.configs, start.elapsed().as_secs_f64());
    if report.passed() {
        Ok(())
    } else {
        let failed: Vec<&str> = report.checks.iter().filter(|c| !c.ok()).map(|c| c.name).collect();
        Err(Failure::Check(format!("failed checks: {}", failed.join(", "))))
    }
}

fn write_sweep_csv(path: &Path, rows: &[SweepRow]) -> std::io::Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "epsilon,max_pos_err,max_vel_err,fluct_final,fluct_over_eps2")?;
    for r in rows {
        writeln!(w, "{},{},{},{},{}", r.epsilon, r.max_pos_err, r.max_vel_err, r.fluct_final, r.fluct_over_eps2)?;
    }
    w.flush()
}

fn cmd_convergence(path: Option<&Path>, out: Option<PathBuf>, seed: Option<u64>) -> Result<(), Failure> {
    let mut config = match path {
        Some(p) => read_toml::<SweepConfig>(p).map_err(Failure::Config)?,
        None => SweepConfig::default_morse(),
    };
    if let Some(s) = seed {
        config.seed = s;
    }
    config.validate().map_err(|e| Failure::Config(e.into()))?;
    let dir = output_dir(out, config.output_dir.as_ref(), "runs/convergence");
    config.output_dir = Some(dir.clone());

    let start = Instant::now();
    let rows = epsilon_sweep(&config).map_err(|e| Failure::Runtime(e.into()))?;
    let wall = start.elapsed().as_secs_f64();
    let runtime = |e: std::io::Error| Failure::Runtime(anyhow::Error::new(e).context(format!("writing {}", dir.display())));
    fs::create_dir_all(&dir).map_err(runtime)?;
    write_sweep_csv(&dir.join("convergence.csv"), &rows).map_err(runtime)?;
    let failures = sweep_failures(&rows, config.fluctuation_bound);
    write_artifacts(&dir, "convergence", &config, wall, &rows).map_err(Failure::Runtime)?;

    println!("{:>10} {:>12} {:>12} {:>12} {:>12}", "epsilon", "max_pos_err", "max_vel_err", "I(T)", "I(T)/eps^2");
    for r in &rows {
        println!(
            "{:>10} {:>12.4e} {:>12.4e} {:>12.4e} {:>12.4e}",
            r.epsilon, r.max_pos_err, r.max_vel_err, r.fluct_final, r.fluct_over_eps2
        );
    }
    println!("table written to {}", dir.join("convergence.csv").display());
    if failures.is_empty() {
        Ok(())
    } else {
        Err(Failure::Check(failures.join("; ")))
    }
}
