//! `edgellm`: run, compare, calibrate and report simulated edge experiments.
//!
//! Exit codes: 0 ok, 1 usage, 2 invalid scenario, 3 I/O.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use thiserror::Error;

use edgellm_core::agentic::backend::ExternalSettings;
use edgellm_core::agentic::BackendChoice;
use edgellm_core::error::{ArtifactError, ConfigError, TraceError};
use edgellm_core::experiment::{
    aggregate, epoch_series, load_report, read_ledger, render_table, run_many, write_experiment,
    PolicyAggregate, RunSummary,
};
use edgellm_core::policy::dpp::{calibrate_dpp, CalibrationSettings};
use edgellm_core::SimConfig;

const POLICIES: [&str; 7] = ["MA", "RR", "RL", "MAL", "AL", "RF", "LL"];

#[derive(Debug, Error)]
enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Scenario(String),
    #[error("{0}")]
    Io(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Scenario(_) => 2,
            CliError::Io(_) => 3,
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        match e {
            ConfigError::Io { .. } => CliError::Io(e.to_string()),
            other => CliError::Scenario(other.to_string()),
        }
    }
}

impl From<ArtifactError> for CliError {
    fn from(e: ArtifactError) -> Self {
        match e {
            ArtifactError::Config(c) => c.into(),
            ArtifactError::Trace(TraceError::Malformed { .. }) => CliError::Scenario(e.to_string()),
            ArtifactError::Policy(_) => CliError::Usage(e.to_string()),
            _ => CliError::Io(e.to_string()),
        }
    }
}

#[derive(Parser)]
#[command(name = "edgellm", version, about = "Simulate multi-model inference on a small edge cluster")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate one policy over several seeds and write the artifacts.
    Run(RunArgs),
    /// Simulate several policies (or load finished runs) and tabulate them.
    Compare(CompareArgs),
    /// Tune the DPP weights offline and write a scenario carrying them.
    Calibrate(CalibrateArgs),
    /// Recompute summaries and the per-epoch objective from a run directory.
    Report(ReportArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Backend {
    Scripted,
    External,
}

#[derive(Args)]
struct Sweep {
    /// Scenario TOML file, or `paper_default`.
    #[arg(long, default_value = "paper_default")]
    scenario: String,
    /// Seeds as a list and/or ranges, e.g. `1,2,5-8`.
    #[arg(long, default_value = "1", value_parser = parse_seeds)]
    seeds: Seeds,
    #[arg(long, default_value_t = 30)]
    epochs: u64,
    #[arg(long, value_enum, default_value_t = Backend::Scripted)]
    backend: Backend,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    policy: String,
    #[command(flatten)]
    sweep: Sweep,
}

#[derive(Args)]
struct CompareArgs {
    /// Comma-separated policies; all seven by default.
    #[arg(long, value_delimiter = ',')]
    policy: Vec<String>,
    /// Compare these finished output directories instead of simulating.
    #[arg(long = "from")]
    from: Vec<PathBuf>,
    #[command(flatten)]
    sweep: Sweep,
}

#[derive(Args)]
struct CalibrateArgs {
    #[arg(long, default_value = "paper_default")]
    scenario: String,
    /// Only the first seed is used.
    #[arg(long, default_value = "1", value_parser = parse_seeds)]
    seeds: Seeds,
    #[arg(long, default_value_t = CalibrationSettings::default().iterations)]
    iterations: u32,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ReportArgs {
    /// Directory written by `run` or `compare`.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Debug)]
struct Seeds(Vec<u64>);

fn parse_seeds(s: &str) -> Result<Seeds, String> {
    let mut out = Vec::new();
    for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let bad = || format!("bad seed {part:?}");
        match part.split_once('-') {
            Some((a, b)) => {
                let (a, b): (u64, u64) = (a.parse().map_err(|_| bad())?, b.parse().map_err(|_| bad())?);
                if a > b {
                    return Err(bad());
                }
                out.extend(a..=b);
            }
            None => out.push(part.parse().map_err(|_| bad())?),
        }
    }
    if out.is_empty() {
        return Err("no seeds given".into());
    }
    Ok(Seeds(out))
}

fn load_scenario(arg: &str) -> Result<(String, SimConfig), CliError> {
    if arg == "paper_default" {
        return Ok((arg.to_string(), SimConfig::paper_default()));
    }
    let path = Path::new(arg);
    let config = SimConfig::load(path)?;
    let name = path.file_stem().map_or(arg.to_string(), |s| s.to_string_lossy().into_owned());
    Ok((name, config))
}

fn backend(b: Backend) -> Result<BackendChoice, CliError> {
    match b {
        Backend::Scripted => Ok(BackendChoice::Scripted),
        Backend::External => ExternalSettings::from_env()
            .map(BackendChoice::External)
            .map_err(|e| CliError::Usage(e.to_string())),
    }
}

fn check_policy(p: &str) -> Result<(), CliError> {
    if POLICIES.contains(&p) {
        Ok(())
    } else {
        Err(CliError::Usage(format!("unknown policy {p:?}; expected one of {}", POLICIES.join(", "))))
    }
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|e| CliError::Io(format!("failed to write {}: {e}", path.display())))
}

fn simulate(command: &str, sweep: &Sweep, policies: &[String]) -> Result<Vec<PolicyAggregate>, CliError> {
    let (name, config) = load_scenario(&sweep.scenario)?;
    let backend = backend(sweep.backend)?;
    let runs = run_many(&config, policies, &sweep.seeds.0, sweep.epochs, &backend)?;
    for r in &runs {
        for v in &r.violations {
            eprintln!("warning: {} seed {}: {v}", r.policy, r.seed);
        }
    }
    Ok(write_experiment(&sweep.out, command, &name, &config, &backend, &runs)?)
}

fn cmd_run(a: RunArgs) -> Result<(), CliError> {
    check_policy(&a.policy)?;
    let aggregates = simulate("run", &a.sweep, &[a.policy])?;
    print!("{}", render_table(&aggregates));
    println!("artifacts in {}", a.sweep.out.display());
    Ok(())
}

fn num(x: f64) -> String {
    if x.is_nan() {
        String::new()
    } else {
        x.to_string()
    }
}

/// Policy table plus the latency/fairness points for a scatter plot.
fn write_comparison(out: &Path, aggregates: &[PolicyAggregate]) -> Result<(), CliError> {
    let mut table = String::from("policy,runs,objective,T_norm,F_norm,mean_latency_s\n");
    let mut scatter = String::from("policy,mean_latency_s,F_norm\n");
    for a in aggregates {
        let _ = writeln!(
            table,
            "{},{},{},{},{},{}",
            a.policy,
            a.runs,
            num(a.objective.mean),
            num(a.t_norm.mean),
            num(a.f_norm.mean),
            num(a.mean_latency_s.mean)
        );
        let _ = writeln!(scatter, "{},{},{}", a.policy, num(a.mean_latency_s.mean), num(a.f_norm.mean));
    }
    fs::create_dir_all(out).map_err(|e| CliError::Io(format!("failed to create {}: {e}", out.display())))?;
    write_text(&out.join("comparison.csv"), &table)?;
    write_text(&out.join("latency_fairness.csv"), &scatter)
}

fn cmd_compare(a: CompareArgs) -> Result<(), CliError> {
    let aggregates = if a.from.is_empty() {
        let policies: Vec<String> = if a.policy.is_empty() {
            POLICIES.iter().map(|p| p.to_string()).collect()
        } else {
            a.policy.clone()
        };
        for p in &policies {
            check_policy(p)?;
        }
        if policies.len() < 2 {
            return Err(CliError::Usage("compare needs at least two policies".into()));
        }
        simulate("compare", &a.sweep, &policies)?
    } else {
        let mut runs: Vec<RunSummary> = Vec::new();
        for dir in &a.from {
            if !dir.join("manifest.json").is_file() {
                return Err(CliError::Io(format!("missing run: {} has no manifest.json", dir.display())));
            }
            runs.extend(load_report(dir)?.runs);
        }
        let aggregates = aggregate(&runs);
        if aggregates.len() < 2 {
            return Err(CliError::Usage("compare needs runs of at least two policies".into()));
        }
        aggregates
    };
    write_comparison(&a.sweep.out, &aggregates)?;
    print!("{}", render_table(&aggregates));
    Ok(())
}

fn cmd_calibrate(a: CalibrateArgs) -> Result<(), CliError> {
    let (_, mut config) = load_scenario(&a.scenario)?;
    let settings = CalibrationSettings {
        iterations: a.iterations,
        ..CalibrationSettings::default()
    };
    let cal = calibrate_dpp(&config, a.seeds.0[0], &settings);
    config.dpp = cal.params.clone();
    fs::create_dir_all(&a.out).map_err(|e| CliError::Io(format!("failed to create {}: {e}", a.out.display())))?;
    write_text(&a.out.join("scenario.toml"), &config.to_toml_string()?)?;
    let mut buf = Vec::new();
    cal.write_trajectory(&mut buf)
        .map_err(|e| CliError::Io(format!("failed to write trajectory: {e}")))?;
    write_text(&a.out.join("trajectory.csv"), &String::from_utf8_lossy(&buf))?;
    let p = &cal.params;
    println!(
        "p1 {} p2 {} lambda_churn {} kappa {} after {} iterations",
        p.p1, p.p2, p.lambda_churn, p.kappa, a.iterations
    );
    println!("calibrated scenario in {}", a.out.join("scenario.toml").display());
    Ok(())
}

fn cmd_report(a: ReportArgs) -> Result<(), CliError> {
    let report = load_report(&a.out)?;
    let config = SimConfig::load(&a.out.join("config.toml"))?;
    let epochs = report.manifest.epochs;
    let mut any = false;
    for (entry, summary) in report.manifest.runs.iter().zip(&report.runs) {
        let rows = read_ledger(&a.out.join(&entry.dir).join("ledger.csv"))?;
        if !rows.iter().any(|r| r.status.is_final()) {
            println!("{} seed {}: no data", entry.policy, entry.seed);
            continue;
        }
        any = true;
        println!(
            "{} seed {}: objective {:.4} T_norm {:.4} F_norm {:.4} mean latency {} requests {} successes {}",
            entry.policy,
            entry.seed,
            summary.objective,
            summary.t_norm,
            summary.f_norm,
            summary.mean_latency_s.map_or("n/a".to_string(), |l| format!("{l:.1} s")),
            summary.requests,
            summary.successes
        );
        println!("epoch,objective,T_norm,F_norm,no_data");
        for t in epoch_series(&rows, &config, epochs) {
            println!("{},{:.6},{:.6},{:.6},{}", t.epoch + 1, t.objective, t.t_norm, t.f_norm, t.no_data);
        }
    }
    if any {
        print!("{}", render_table(&report.aggregates));
    } else {
        println!("no data");
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = match cli.command {
        Command::Run(a) => cmd_run(a),
        Command::Compare(a) => cmd_compare(a),
        Command::Calibrate(a) => cmd_calibrate(a),
        Command::Report(a) => cmd_report(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}
