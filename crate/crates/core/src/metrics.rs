//! Service rates, fairness, normalized latency, the composite objective and
//! per-epoch telemetry. Everything here is a pure function of ledger rows.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::MetricsError;
use crate::model::{LmId, NodeId};
use crate::request::{LedgerRow, Status};

/// Per-type arrival and success counts over a set of final rows.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct TypeCounts {
    pub arrivals: u64,
    pub successes: u64,
}

pub fn type_counts<'a>(rows: impl IntoIterator<Item = &'a LedgerRow>) -> BTreeMap<LmId, TypeCounts> {
    let mut out: BTreeMap<LmId, TypeCounts> = BTreeMap::new();
    for r in rows {
        if !r.status.is_final() {
            continue;
        }
        let c = out.entry(r.lm).or_default();
        c.arrivals += 1;
        if r.succeeded() {
            c.successes += 1;
        }
    }
    out
}

/// `S_i / A_i` per type. Types without final rows are absent from the map.
pub fn service_rates<'a>(rows: impl IntoIterator<Item = &'a LedgerRow>) -> BTreeMap<LmId, f64> {
    type_counts(rows)
        .into_iter()
        .filter(|(_, c)| c.arrivals > 0)
        .map(|(lm, c)| (lm, c.successes as f64 / c.arrivals as f64))
        .collect()
}

/// Jain's index `(sum x)^2 / (n * sum x^2)`. An all-zero vector scores `1/n`;
/// an empty one scores 1.
pub fn jain(rho: &[f64]) -> f64 {
    if rho.is_empty() {
        return 1.0;
    }
    let n = rho.len() as f64;
    let sum: f64 = rho.iter().sum();
    let sq: f64 = rho.iter().map(|x| x * x).sum();
    if sq == 0.0 {
        return 1.0 / n;
    }
    sum * sum / (n * sq)
}

/// Rescales a Jain value from `[1/n, 1]` to `[0, 1]`. With a single type the
/// allocation is trivially fair and the result is 1.
pub fn normalize_fairness(f: f64, n: usize) -> Result<f64, MetricsError> {
    const TOL: f64 = 1e-9;
    if n == 0 {
        return Ok(1.0);
    }
    let floor = 1.0 / n as f64;
    if !(f >= floor - TOL && f <= 1.0 + TOL) {
        return Err(MetricsError::FairnessOutOfRange { value: f, count: n });
    }
    if n == 1 {
        return Ok(1.0);
    }
    Ok(((f - floor) / (1.0 - floor)).clamp(0.0, 1.0))
}

/// Mean of `T_q / tau` over successful rows.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalizedLatency {
    pub value: f64,
    /// No successful rows; `value` is then 1.
    pub no_data: bool,
}

pub fn normalized_latency<'a>(
    rows: impl IntoIterator<Item = &'a LedgerRow>,
    tau: f64,
) -> NormalizedLatency {
    let (mut sum, mut n) = (0.0, 0usize);
    for r in rows {
        if r.succeeded() {
            sum += r.t_q / tau;
            n += 1;
        }
    }
    if n == 0 {
        NormalizedLatency {
            value: 1.0,
            no_data: true,
        }
    } else {
        NormalizedLatency {
            value: sum / n as f64,
            no_data: false,
        }
    }
}

/// `lambda * T_norm + (1 - lambda) * (1 - F_norm)`; lower is better.
pub fn composite_objective(t_norm: f64, f_norm: f64, lambda: f64) -> f64 {
    lambda * t_norm + (1.0 - lambda) * (1.0 - f_norm)
}

/// Fairness of a set of final rows: raw Jain value, its normalized form and
/// the number of types that had arrivals.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Fairness {
    pub jain: f64,
    pub normalized: f64,
    pub types: usize,
}

pub fn fairness<'a>(rows: impl IntoIterator<Item = &'a LedgerRow>) -> Fairness {
    let rho: Vec<f64> = service_rates(rows).into_values().collect();
    let f = jain(&rho);
    Fairness {
        jain: f,
        // jain() always lands in [1/n, 1], so this cannot fail.
        normalized: normalize_fairness(f, rho.len()).unwrap_or(0.0),
        types: rho.len(),
    }
}

/// Objective value, normalized latency and normalized fairness of a row set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveBreakdown {
    pub objective: f64,
    #[serde(rename = "T_norm")]
    pub t_norm: f64,
    #[serde(rename = "F_norm")]
    pub f_norm: f64,
    pub no_data: bool,
}

pub fn objective_of(rows: &[&LedgerRow], tau: f64, lambda: f64) -> ObjectiveBreakdown {
    let t = normalized_latency(rows.iter().copied(), tau);
    let f = fairness(rows.iter().copied());
    ObjectiveBreakdown {
        objective: composite_objective(t.value, f.normalized, lambda),
        t_norm: t.value,
        f_norm: f.normalized,
        no_data: f.types == 0,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SlotReward {
    Ready(f64),
    NotReady,
}

/// `1 - objective` over the requests that arrived in one slot, available only
/// once every one of them is final.
pub fn slot_reward(cohort: &[LedgerRow], tau: f64, lambda: f64) -> SlotReward {
    if cohort.iter().any(|r| !r.status.is_final()) {
        return SlotReward::NotReady;
    }
    let refs: Vec<&LedgerRow> = cohort.iter().collect();
    SlotReward::Ready(1.0 - objective_of(&refs, tau, lambda).objective)
}

/// Index of the half-open window `(i * len, (i + 1) * len]` holding `t`;
/// time zero belongs to window 0.
pub fn window_index(t: f64, len: f64) -> u64 {
    if t <= 0.0 {
        return 0;
    }
    ((t / len).ceil() as u64).saturating_sub(1)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LmTelemetry {
    /// Mean `T_q` of successes, `None` without successes.
    pub success_only_mean_latency_s: Option<f64>,
    /// `None` when the type had no final requests in the window.
    pub success_ratio: Option<f64>,
    pub finished: u64,
    pub successes: u64,
    /// Requests of this type that arrived during the epoch.
    pub arrived: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochTelemetry {
    pub epoch: u64,
    pub per_lm: BTreeMap<LmId, LmTelemetry>,
    pub global_mean_latency_s: Option<f64>,
    #[serde(rename = "F_norm")]
    pub f_norm: f64,
    pub jain: f64,
    #[serde(rename = "T_norm")]
    pub t_norm: f64,
    pub objective: f64,
    pub off_role_ratio: f64,
    pub routed: u64,
    pub completed: u64,
    pub failed: u64,
    /// Prompt backlog per node and type at the end of the epoch.
    pub node_backlog: BTreeMap<NodeId, BTreeMap<LmId, u64>>,
    /// Nothing finished during the epoch.
    pub no_data: bool,
    /// No success during the epoch, so `T_norm` is the convention value 1.
    pub latency_no_data: bool,
}

impl EpochTelemetry {
    /// Share of the epoch's arrivals per type, in `lms` order.
    pub fn arrival_mix(&self, lms: &[LmId]) -> Vec<f64> {
        let total: u64 = self.per_lm.values().map(|t| t.arrived).sum();
        lms.iter()
            .map(|lm| {
                let a = self.per_lm.get(lm).map_or(0, |t| t.arrived);
                if total == 0 {
                    0.0
                } else {
                    a as f64 / total as f64
                }
            })
            .collect()
    }

    pub fn success_ratio(&self, lm: LmId) -> Option<f64> {
        self.per_lm.get(&lm).and_then(|t| t.success_ratio)
    }
}

/// Which rows belong to an epoch.
#[derive(Debug, Clone, Copy)]
pub struct EpochWindow {
    pub epoch: u64,
    pub epoch_seconds: f64,
    pub slots_per_epoch: u64,
}

impl EpochWindow {
    /// Final rows are attributed to the epoch in which they finished.
    pub fn finished_in(&self, row: &LedgerRow) -> bool {
        row.status.is_final() && window_index(row.finish_s, self.epoch_seconds) == self.epoch
    }

    pub fn arrived_in(&self, row: &LedgerRow) -> bool {
        row.slot / self.slots_per_epoch == self.epoch
    }
}

/// Telemetry of one epoch from the full ledger (final and in-flight rows).
pub fn build_epoch_telemetry(
    rows: &[LedgerRow],
    window: EpochWindow,
    lms: &[LmId],
    tau: f64,
    lambda: f64,
    node_backlog: BTreeMap<NodeId, BTreeMap<LmId, u64>>,
) -> EpochTelemetry {
    let finished: Vec<&LedgerRow> = rows.iter().filter(|r| window.finished_in(r)).collect();
    let arrived: Vec<&LedgerRow> = rows.iter().filter(|r| window.arrived_in(r)).collect();

    let mut per_lm: BTreeMap<LmId, LmTelemetry> =
        lms.iter().map(|lm| (*lm, LmTelemetry::default())).collect();
    let mut latency_sum: BTreeMap<LmId, f64> = BTreeMap::new();
    for r in &finished {
        let t = per_lm.entry(r.lm).or_default();
        t.finished += 1;
        if r.succeeded() {
            t.successes += 1;
            *latency_sum.entry(r.lm).or_default() += r.t_q;
        }
    }
    for r in &arrived {
        per_lm.entry(r.lm).or_default().arrived += 1;
    }
    for (lm, t) in per_lm.iter_mut() {
        if t.finished > 0 {
            t.success_ratio = Some(t.successes as f64 / t.finished as f64);
        }
        if t.successes > 0 {
            t.success_only_mean_latency_s = Some(latency_sum[lm] / t.successes as f64);
        }
    }

    let breakdown = objective_of(&finished, tau, lambda);
    let f = fairness(finished.iter().copied());
    let successes: Vec<f64> = finished.iter().filter(|r| r.succeeded()).map(|r| r.t_q).collect();
    let off_role = arrived.iter().filter(|r| r.off_role).count();
    EpochTelemetry {
        epoch: window.epoch,
        per_lm,
        global_mean_latency_s: if successes.is_empty() {
            None
        } else {
            Some(successes.iter().sum::<f64>() / successes.len() as f64)
        },
        f_norm: f.normalized,
        jain: f.jain,
        t_norm: breakdown.t_norm,
        objective: breakdown.objective,
        off_role_ratio: if arrived.is_empty() {
            0.0
        } else {
            off_role as f64 / arrived.len() as f64
        },
        routed: arrived.len() as u64,
        completed: successes.len() as u64,
        failed: finished.iter().filter(|r| r.status.is_failure()).count() as u64,
        node_backlog,
        no_data: finished.is_empty(),
        latency_no_data: successes.is_empty(),
    }
}

/// Counts rows by status.
pub fn status_counts<'a>(rows: impl IntoIterator<Item = &'a LedgerRow>) -> BTreeMap<Status, u64> {
    let mut out = BTreeMap::new();
    for r in rows {
        *out.entry(r.status).or_default() += 1;
    }
    out
}
