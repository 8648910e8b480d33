//! Multi-seed experiment drivers and their on-disk artifacts.
//!
//! Layout of an output directory:
//!
//! ```text
//! manifest.json  config.toml  summary.json
//! <policy>/seed-<n>/{ledger.csv, telemetry.json, events.log, summary.json}
//! ```

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::agentic::backend::BackendChoice;
use crate::config::SimConfig;
use crate::engine::{EventKind, EventLog, Simulation};
use crate::error::{ArtifactError, ConfigError};
use crate::metrics::{build_epoch_telemetry, fairness, objective_of, service_rates, EpochTelemetry, EpochWindow};
use crate::model::MacroPolicy;
use crate::policy::build_strategy;
use crate::request::{LedgerRow, Status};
use crate::stats::{mean_ci, MeanCi};
use crate::workload::WorkloadSource;

/// Everything one simulated run produced.
#[derive(Debug, Clone)]
pub struct RunResult {
    pub policy: String,
    pub seed: u64,
    pub epochs: u64,
    pub telemetry: Vec<EpochTelemetry>,
    /// Final and in-flight rows, by request id.
    pub ledger: Vec<LedgerRow>,
    pub events: EventLog,
    pub policies: Vec<Option<MacroPolicy>>,
    pub violations: Vec<String>,
    pub flips: u64,
}

pub fn run_simulation(
    config: &SimConfig,
    policy: &str,
    seed: u64,
    epochs: u64,
    backend: &BackendChoice,
) -> Result<RunResult, ArtifactError> {
    let strategy = build_strategy(policy, config, seed, backend)?;
    let workload = WorkloadSource::from_config(config, seed)?;
    let mut sim = Simulation::new(config.clone(), strategy, workload);
    sim.run(epochs);
    Ok(RunResult {
        policy: policy.to_string(),
        seed,
        epochs,
        telemetry: sim.telemetry().to_vec(),
        ledger: sim.world.ledger(),
        events: sim.world.events().clone(),
        policies: sim.policies().to_vec(),
        violations: sim.world.violations().to_vec(),
        flips: sim.world.flips(),
    })
}

/// Runs every (policy, seed) pair in parallel; results come back in
/// policy-major, seed-minor order.
pub fn run_many(
    config: &SimConfig,
    policies: &[String],
    seeds: &[u64],
    epochs: u64,
    backend: &BackendChoice,
) -> Result<Vec<RunResult>, ArtifactError> {
    let jobs: Vec<(&String, u64)> = policies
        .iter()
        .flat_map(|p| seeds.iter().map(move |s| (p, *s)))
        .collect();
    jobs.par_iter()
        .map(|(p, s)| run_simulation(config, p, *s, epochs, backend))
        .collect()
}

/// Whole-run measurements, recomputable from a ledger alone.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub policy: String,
    pub seed: u64,
    pub epochs: u64,
    pub objective: f64,
    #[serde(rename = "T_norm")]
    pub t_norm: f64,
    #[serde(rename = "F_norm")]
    pub f_norm: f64,
    pub jain: f64,
    /// Mean `T_q` of successful requests.
    pub mean_latency_s: Option<f64>,
    /// Success ratio per model name over final requests.
    pub success_ratio: BTreeMap<String, f64>,
    pub requests: u64,
    pub successes: u64,
    pub deadline_failures: u64,
    pub never_deployable: u64,
    pub in_flight: u64,
    pub off_role_ratio: f64,
}

pub fn summarize_ledger(
    rows: &[LedgerRow],
    config: &SimConfig,
    policy: &str,
    seed: u64,
    epochs: u64,
) -> RunSummary {
    let finals: Vec<&LedgerRow> = rows.iter().filter(|r| r.status.is_final()).collect();
    let o = objective_of(&finals, config.tau_seconds, config.lambda_weight);
    let f = fairness(finals.iter().copied());
    let successes: Vec<f64> = finals.iter().filter(|r| r.succeeded()).map(|r| r.t_q).collect();
    let count = |s: Status| rows.iter().filter(|r| r.status == s).count() as u64;
    let off_role = rows.iter().filter(|r| r.off_role).count();
    RunSummary {
        policy: policy.to_string(),
        seed,
        epochs,
        objective: o.objective,
        t_norm: o.t_norm,
        f_norm: o.f_norm,
        jain: f.jain,
        mean_latency_s: if successes.is_empty() {
            None
        } else {
            Some(successes.iter().sum::<f64>() / successes.len() as f64)
        },
        success_ratio: service_rates(finals.iter().copied())
            .into_iter()
            .map(|(lm, r)| (config.lm_name(lm), r))
            .collect(),
        requests: rows.len() as u64,
        successes: successes.len() as u64,
        deadline_failures: count(Status::Deadline),
        never_deployable: count(Status::NeverDeployable),
        in_flight: count(Status::InFlight),
        off_role_ratio: if rows.is_empty() {
            0.0
        } else {
            off_role as f64 / rows.len() as f64
        },
    }
}

impl RunResult {
    pub fn summary(&self, config: &SimConfig) -> RunSummary {
        summarize_ledger(&self.ledger, config, &self.policy, self.seed, self.epochs)
    }

    /// Per-epoch objective series.
    pub fn objectives(&self) -> Vec<f64> {
        self.telemetry.iter().map(|t| t.objective).collect()
    }

    pub fn planner_fallbacks(&self) -> usize {
        self.events.count(EventKind::PlannerFallback)
    }
}

/// Mean and 95% interval of each summary field across seeds.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PolicyAggregate {
    pub policy: String,
    pub runs: usize,
    pub objective: MeanCi,
    #[serde(rename = "T_norm")]
    pub t_norm: MeanCi,
    #[serde(rename = "F_norm")]
    pub f_norm: MeanCi,
    pub mean_latency_s: MeanCi,
    pub success_ratio: BTreeMap<String, MeanCi>,
}

/// Groups summaries by policy, keeping first-seen policy order.
pub fn aggregate(summaries: &[RunSummary]) -> Vec<PolicyAggregate> {
    let mut order: Vec<&str> = Vec::new();
    for s in summaries {
        if !order.contains(&s.policy.as_str()) {
            order.push(&s.policy);
        }
    }
    order
        .into_iter()
        .map(|policy| {
            let group: Vec<&RunSummary> = summaries.iter().filter(|s| s.policy == policy).collect();
            let field = |f: &dyn Fn(&RunSummary) -> Option<f64>| -> MeanCi {
                mean_ci(&group.iter().filter_map(|s| f(s)).collect::<Vec<_>>())
            };
            let mut names: Vec<&String> = group.iter().flat_map(|s| s.success_ratio.keys()).collect();
            names.sort();
            names.dedup();
            PolicyAggregate {
                policy: policy.to_string(),
                runs: group.len(),
                objective: field(&|s| Some(s.objective)),
                t_norm: field(&|s| Some(s.t_norm)),
                f_norm: field(&|s| Some(s.f_norm)),
                mean_latency_s: field(&|s| s.mean_latency_s),
                success_ratio: names
                    .into_iter()
                    .map(|n| (n.clone(), field(&|s| s.success_ratio.get(n).copied())))
                    .collect(),
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRun {
    pub policy: String,
    pub seed: u64,
    /// Relative to the output directory.
    pub dir: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub version: String,
    pub scenario: String,
    pub policies: Vec<String>,
    pub seeds: Vec<u64>,
    pub epochs: u64,
    pub backend: String,
    pub runs: Vec<ManifestRun>,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ArtifactError + '_ {
    move |source| ArtifactError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn create(path: &Path) -> Result<BufWriter<File>, ArtifactError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(io_err(parent))?;
    }
    Ok(BufWriter::new(File::create(path).map_err(io_err(path))?))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), ArtifactError> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| ArtifactError::Corrupt {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    w.write_all(b"\n").map_err(io_err(path))?;
    w.flush().map_err(io_err(path))
}

pub fn write_ledger(path: &Path, rows: &[LedgerRow]) -> Result<(), ArtifactError> {
    let mut w = csv::Writer::from_writer(create(path)?);
    for r in rows {
        w.serialize(r).map_err(|e| ArtifactError::Corrupt {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
    }
    w.flush().map_err(io_err(path))
}

pub fn read_ledger(path: &Path) -> Result<Vec<LedgerRow>, ArtifactError> {
    let f = File::open(path).map_err(io_err(path))?;
    csv::Reader::from_reader(BufReader::new(f))
        .deserialize()
        .collect::<Result<Vec<LedgerRow>, _>>()
        .map_err(|e| ArtifactError::Corrupt {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
}

pub fn run_dir(policy: &str, seed: u64) -> PathBuf {
    PathBuf::from(policy).join(format!("seed-{seed}"))
}

/// Writes one run's ledger, telemetry, event log and summary under `dir`.
pub fn write_run(dir: &Path, run: &RunResult, config: &SimConfig) -> Result<RunSummary, ArtifactError> {
    write_ledger(&dir.join("ledger.csv"), &run.ledger)?;
    write_json(&dir.join("telemetry.json"), &run.telemetry)?;
    let events_path = dir.join("events.log");
    let mut w = create(&events_path)?;
    run.events.write_to(&mut w).map_err(io_err(&events_path))?;
    w.flush().map_err(io_err(&events_path))?;
    let summary = run.summary(config);
    write_json(&dir.join("summary.json"), &summary)?;
    Ok(summary)
}

/// Writes every run plus the manifest, the config and the aggregate summary.
pub fn write_experiment(
    out: &Path,
    command: &str,
    scenario: &str,
    config: &SimConfig,
    backend: &BackendChoice,
    runs: &[RunResult],
) -> Result<Vec<PolicyAggregate>, ArtifactError> {
    fs::create_dir_all(out).map_err(io_err(out))?;
    let mut summaries = Vec::new();
    let mut entries = Vec::new();
    for r in runs {
        let rel = run_dir(&r.policy, r.seed);
        summaries.push(write_run(&out.join(&rel), r, config)?);
        entries.push(ManifestRun {
            policy: r.policy.clone(),
            seed: r.seed,
            dir: rel,
        });
    }
    let mut policies: Vec<String> = Vec::new();
    let mut seeds: Vec<u64> = Vec::new();
    for r in runs {
        if !policies.contains(&r.policy) {
            policies.push(r.policy.clone());
        }
        if !seeds.contains(&r.seed) {
            seeds.push(r.seed);
        }
    }
    let manifest = Manifest {
        command: command.to_string(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        scenario: scenario.to_string(),
        policies,
        seeds,
        epochs: runs.first().map_or(0, |r| r.epochs),
        backend: backend.name().to_string(),
        runs: entries,
    };
    write_json(&out.join("manifest.json"), &manifest)?;
    let toml_path = out.join("config.toml");
    let text = config.to_toml_string()?;
    fs::write(&toml_path, text).map_err(io_err(&toml_path))?;
    let aggregates = aggregate(&summaries);
    write_json(&out.join("summary.json"), &aggregates)?;
    Ok(aggregates)
}

/// Summaries recomputed from the ledgers of a finished experiment.
pub struct Report {
    pub manifest: Manifest,
    pub runs: Vec<RunSummary>,
    pub aggregates: Vec<PolicyAggregate>,
}

pub fn load_report(out: &Path) -> Result<Report, ArtifactError> {
    let manifest_path = out.join("manifest.json");
    let f = File::open(&manifest_path).map_err(io_err(&manifest_path))?;
    let manifest: Manifest =
        serde_json::from_reader(BufReader::new(f)).map_err(|e| ArtifactError::Corrupt {
            path: manifest_path.clone(),
            message: e.to_string(),
        })?;
    let config = SimConfig::load(&out.join("config.toml")).map_err(|e| match e {
        ConfigError::Io { .. } => ArtifactError::Corrupt {
            path: out.join("config.toml"),
            message: e.to_string(),
        },
        other => ArtifactError::Config(other),
    })?;
    let mut runs = Vec::new();
    for r in &manifest.runs {
        let rows = read_ledger(&out.join(&r.dir).join("ledger.csv"))?;
        runs.push(summarize_ledger(&rows, &config, &r.policy, r.seed, manifest.epochs));
    }
    let aggregates = aggregate(&runs);
    Ok(Report {
        manifest,
        runs,
        aggregates,
    })
}

/// Per-epoch telemetry recomputed from a ledger; backlogs are not in the
/// ledger and come back empty.
pub fn epoch_series(rows: &[LedgerRow], config: &SimConfig, epochs: u64) -> Vec<EpochTelemetry> {
    let lms = config.lm_ids();
    (0..epochs)
        .map(|epoch| {
            let window = EpochWindow {
                epoch,
                epoch_seconds: config.epoch_seconds(),
                slots_per_epoch: config.slots_per_epoch as u64,
            };
            build_epoch_telemetry(rows, window, &lms, config.tau_seconds, config.lambda_weight, BTreeMap::new())
        })
        .collect()
}

fn cell(m: &MeanCi, digits: usize) -> String {
    if m.mean.is_nan() {
        "n/a".to_string()
    } else {
        format!("{:.*} ± {:.*}", digits, m.mean, digits, m.ci95)
    }
}

/// Plain-text table of aggregates, one row per policy.
pub fn render_table(aggregates: &[PolicyAggregate]) -> String {
    let mut names: Vec<&String> = aggregates.iter().flat_map(|a| a.success_ratio.keys()).collect();
    names.sort();
    names.dedup();
    let mut header = vec![
        "policy".to_string(),
        "runs".to_string(),
        "objective".to_string(),
        "latency_s".to_string(),
        "F_norm".to_string(),
    ];
    header.extend(names.iter().map(|n| format!("rho_{n}")));
    let mut rows = vec![header];
    for a in aggregates {
        let mut row = vec![
            a.policy.clone(),
            a.runs.to_string(),
            cell(&a.objective, 3),
            cell(&a.mean_latency_s, 1),
            cell(&a.f_norm, 3),
        ];
        row.extend(names.iter().map(|n| {
            a.success_ratio
                .get(*n)
                .map_or("n/a".to_string(), |m| cell(m, 2))
        }));
        rows.push(row);
    }
    let widths: Vec<usize> = (0..rows[0].len())
        .map(|i| rows.iter().map(|r| r[i].chars().count()).max().unwrap_or(0))
        .collect();
    let mut s = String::new();
    for r in rows {
        let line: Vec<String> = r
            .iter()
            .zip(&widths)
            .map(|(c, w)| format!("{c:<w$}"))
            .collect();
        s.push_str(line.join("  ").trim_end());
        s.push('\n');
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ledger_round_trips_through_csv() {
        let dir = tempfile::tempdir().unwrap();
        let mut c = SimConfig::paper_default();
        c.slots_per_epoch = 4;
        let run = run_simulation(&c, "RL", 7, 2, &BackendChoice::Scripted).unwrap();
        assert!(!run.ledger.is_empty());
        let path = dir.path().join("ledger.csv");
        write_ledger(&path, &run.ledger).unwrap();
        assert_eq!(read_ledger(&path).unwrap(), run.ledger);
    }

    #[test]
    fn report_matches_written_summaries() {
        let dir = tempfile::tempdir().unwrap();
        let mut c = SimConfig::paper_default();
        c.slots_per_epoch = 5;
        let policies = vec!["RF".to_string(), "MA".to_string()];
        let runs = run_many(&c, &policies, &[1, 2], 2, &BackendChoice::Scripted).unwrap();
        let written =
            write_experiment(dir.path(), "compare", "test", &c, &BackendChoice::Scripted, &runs)
                .unwrap();
        let report = load_report(dir.path()).unwrap();
        assert_eq!(report.runs.len(), 4);
        assert_eq!(report.aggregates, written);
        let table = render_table(&report.aggregates);
        assert!(table.starts_with("policy"));
        assert_eq!(table.lines().count(), 3);
    }

    #[test]
    fn epoch_series_matches_live_telemetry() {
        let mut c = SimConfig::paper_default();
        c.slots_per_epoch = 6;
        let run = run_simulation(&c, "MA", 3, 3, &BackendChoice::Scripted).unwrap();
        let series = epoch_series(&run.ledger, &c, 3);
        assert_eq!(series.len(), 3);
        for (a, b) in series.iter().zip(&run.telemetry) {
            assert_eq!(a.objective, b.objective);
            assert_eq!(a.per_lm, b.per_lm);
        }
    }
}
