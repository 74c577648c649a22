use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use arsu_core::config::{load_scenario, ConfigError};
use arsu_core::latency::{DelayMatrix, IpuOverhead, LatencyModel};
use arsu_core::report::{emit_scenario_matrix, emit_table4, matrix_csv, matrix_text};
use arsu_core::sim::{run_with_model, SimError};
use clap::{Parser, Subcommand};
use thiserror::Error;

#[derive(Parser)]
#[command(name = "arsu", version, about = "Heterogeneous V2X relay simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario and write its report.
    Run {
        config: PathBuf,
        /// Overrides the scenario's seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Also write trace.csv, decisions.csv and mqtt.csv.
        #[arg(long)]
        trace: bool,
    },
    /// Print the composed link-delay table.
    Table4 {
        #[arg(long)]
        latency_csv: Option<PathBuf>,
        /// Directory for table4.csv.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the serviceability matrix of the ten scenarios.
    Matrix {
        /// Inclusive speed range in km/h, e.g. `0,120`.
        #[arg(long, value_parser = parse_range, default_value = "0,120")]
        speed_range: (f64, f64),
        #[arg(long)]
        latency_csv: Option<PathBuf>,
        /// Directory for matrix.csv.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check a scenario file without running it.
    ValidateConfig { config: PathBuf },
}

fn parse_range(s: &str) -> Result<(f64, f64), String> {
    let (lo, hi) = s.split_once(',').ok_or("expected lo,hi")?;
    let lo: f64 = lo.trim().parse().map_err(|e| format!("{lo}: {e}"))?;
    let hi: f64 = hi.trim().parse().map_err(|e| format!("{hi}: {e}"))?;
    Ok((lo, hi))
}

#[derive(Debug, Error)]
enum CliError {
    #[error("config error: {0}")]
    Config(ConfigError),
    #[error("i/o error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("invariant violated: {0}")]
    Invariant(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Io { .. } => 3,
            CliError::Invariant(_) => 4,
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        match e {
            ConfigError::Io { path, source } => CliError::Io { path, source },
            other => CliError::Config(other),
        }
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        match e {
            SimError::Config(c) => c.into(),
            SimError::Latency(l) => CliError::Config(ConfigError::Latency(l)),
            other => CliError::Invariant(other.to_string()),
        }
    }
}

fn load_model(csv: Option<&Path>) -> Result<LatencyModel, CliError> {
    let Some(path) = csv else {
        return Ok(LatencyModel::builtin());
    };
    let file = fs::File::open(path).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let matrix = DelayMatrix::from_csv(file).map_err(ConfigError::from)?;
    Ok(LatencyModel::from_matrix(&matrix, IpuOverhead::default()).map_err(ConfigError::from)?)
}

/// Contents are rendered before this runs, so a failure here is I/O only.
fn write_outputs(dir: &Path, files: &[(&str, String)]) -> Result<(), CliError> {
    let io = |path: &Path| {
        let path = path.to_path_buf();
        move |source| CliError::Io { path, source }
    };
    fs::create_dir_all(dir).map_err(io(dir))?;
    for (name, body) in files {
        let path = dir.join(name);
        fs::write(&path, body).map_err(io(&path))?;
    }
    Ok(())
}

fn run_and_report(config: &Path, seed: Option<u64>, out: &Path, trace: bool) -> Result<(), CliError> {
    let (scenario, model) = load_scenario(config)?;
    let seed = seed.unwrap_or(scenario.seed);
    let outcome = run_with_model(&scenario, &model, seed, trace)?;
    let report = &outcome.report;
    report
        .check_invariants()
        .map_err(|v| CliError::Invariant(v.to_string()))?;

    let mut files = vec![
        ("report.json", report.to_json()),
        ("table4.csv", report.table4_recomposition.to_csv()),
        ("matrix.csv", matrix_csv(&report.scenario_matrix)),
    ];
    if trace {
        files.push(("trace.csv", outcome.trace_csv()));
        files.push(("decisions.csv", outcome.decisions_csv.clone()));
        files.push(("mqtt.csv", outcome.mqtt_csv.clone()));
    }
    write_outputs(out, &files)?;

    let m = &report.metrics;
    println!("seed {seed}: {} BSMs sent, {} deliveries", m.bsm_transmitted, m.deliveries);
    if let Some(max) = m.max_path_latency_ms {
        println!("max path latency {max:.3} ms, max fidelity error {:.3} ms", m.max_fidelity_error_ms);
    }
    match m.coverage.mean {
        Some(c) => println!("mean coverage {c:.3}"),
        None => println!("coverage undefined: no pairs"),
    }
    println!(
        "camera confirmations {}, ghosts {}",
        report.ghosts.confirmations, report.ghosts.count
    );
    println!("wrote {}", out.display());
    Ok(())
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Run {
            config,
            seed,
            out,
            trace,
        } => run_and_report(&config, seed, &out, trace),
        Command::Table4 { latency_csv, out } => {
            let model = load_model(latency_csv.as_deref())?;
            let table = emit_table4(&model).map_err(ConfigError::from)?;
            if let Some(dir) = out {
                write_outputs(&dir, &[("table4.csv", table.to_csv())])?;
            }
            print!("{}", table.to_text());
            Ok(())
        }
        Command::Matrix {
            speed_range,
            latency_csv,
            out,
        } => {
            let model = load_model(latency_csv.as_deref())?;
            let rows = emit_scenario_matrix(&model, speed_range, &[]).map_err(ConfigError::from)?;
            if let Some(dir) = out {
                write_outputs(&dir, &[("matrix.csv", matrix_csv(&rows))])?;
            }
            print!("{}", matrix_text(&rows));
            Ok(())
        }
        Command::ValidateConfig { config } => {
            let (scenario, _) = load_scenario(&config)?;
            let users: u32 = scenario.users.iter().map(|g| g.count).sum();
            println!("ok: {} ms, {users} users", scenario.duration_ms);
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("arsu: {e}");
            ExitCode::from(e.code())
        }
    }
}
