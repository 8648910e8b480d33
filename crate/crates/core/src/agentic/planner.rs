//! Epoch-level planner: role packing plus capacity-weighted routing, nudged
//! each epoch by observed fairness deficits and backlog.

use std::collections::{BTreeMap, BTreeSet};

use crate::config::{macro_policy_doc, resolve_macro_policy, SimConfig};
use crate::engine::ClusterSnapshot;
use crate::metrics::EpochTelemetry;
use crate::model::{LmId, MacroPolicy, NodeId};
use crate::policy::{PlanContext, PlanOutcome, Planner};

use super::alloc::{role_allocation, service_rate};
use super::backend::CompletionBackend;
use super::memory::EpisodicMemory;
use super::prompt::planner_prompt;
use super::validate::{roles_deployable, validate_macro_policy};

/// Utilization the role packing aims for.
const TARGET_UTILIZATION: f64 = 0.7;
/// Weight of capacity beyond demand in the packing score.
const SPARE_WEIGHT: f64 = 0.3;
/// Anchor on the best remembered epoch when the last one was this much worse.
const ANCHOR_MARGIN: f64 = 0.05;
/// Per-epoch decay of a type's remembered deficit.
const BOOST_DECAY: f64 = 0.8;
/// Routing mass at which a node should also hold the type's role.
const ROLE_MASS: f64 = 0.05;

/// Expected prompts per second of each type.
pub fn expected_demand(config: &SimConfig, epoch: u64) -> BTreeMap<LmId, f64> {
    let k = config.workload.mean_k();
    config
        .lms
        .iter()
        .map(|lm| {
            let p: f64 = config
                .worker_ids()
                .iter()
                .map(|n| config.workload.presence_probability(lm.id, *n, epoch))
                .sum();
            (lm.id, p * k / config.slot_seconds)
        })
        .collect()
}

/// Result of packing roles onto nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct Packing {
    pub roles: BTreeMap<NodeId, BTreeSet<LmId>>,
    /// Estimated prompts per second per (type, node).
    pub capacity: BTreeMap<LmId, BTreeMap<NodeId, f64>>,
}

fn node_rates(
    config: &SimConfig,
    node: NodeId,
    roles: &BTreeSet<LmId>,
) -> BTreeMap<LmId, f64> {
    let Some(spec) = config.server(node) else {
        return BTreeMap::new();
    };
    let action = role_allocation(spec, roles, &BTreeMap::new(), &config.lms);
    action
        .active()
        .filter_map(|(lm, p)| config.lm(lm).map(|l| (lm, service_rate(l, p))))
        .collect()
}

fn coverage_value(total: &BTreeMap<LmId, f64>, need: &BTreeMap<LmId, f64>) -> f64 {
    need.iter()
        .filter(|(_, n)| **n > 0.0)
        .map(|(lm, n)| {
            let c = total.get(lm).copied().unwrap_or(0.0) / n;
            c.min(1.0) + SPARE_WEIGHT * (c - 1.0).clamp(0.0, 1.0)
        })
        .sum()
}

/// Greedy packing: repeatedly adds the (type, node) role that most improves
/// how well capacity covers `need`, trying types in descending GPU hunger.
pub fn pack_roles(config: &SimConfig, need: &BTreeMap<LmId, f64>) -> Packing {
    let mut lms: Vec<_> = config.lms.iter().collect();
    lms.sort_by(|a, b| b.gpu_hunger().total_cmp(&a.gpu_hunger()).then(a.id.cmp(&b.id)));
    let mut roles: BTreeMap<NodeId, BTreeSet<LmId>> = BTreeMap::new();
    let mut rates: BTreeMap<NodeId, BTreeMap<LmId, f64>> = BTreeMap::new();
    let totals = |rates: &BTreeMap<NodeId, BTreeMap<LmId, f64>>| {
        let mut t: BTreeMap<LmId, f64> = BTreeMap::new();
        for r in rates.values() {
            for (lm, v) in r {
                *t.entry(*lm).or_default() += v;
            }
        }
        t
    };
    loop {
        let current = totals(&rates);
        let base = coverage_value(&current, need);
        let mut best: Option<(f64, NodeId, LmId, BTreeMap<LmId, f64>)> = None;
        for lm in &lms {
            if need.get(&lm.id).copied().unwrap_or(0.0) <= 0.0 {
                continue;
            }
            for node in config.feasible(lm.id) {
                let mut r = roles.get(&node).cloned().unwrap_or_default();
                if !r.insert(lm.id) {
                    continue;
                }
                let spec = config.server(node).expect("feasible node exists");
                let specs: Vec<_> = r.iter().filter_map(|l| config.lm(*l)).collect();
                if !roles_deployable(spec, &specs, &config.lms) {
                    continue;
                }
                let new_rates = node_rates(config, node, &r);
                if r.iter().any(|l| !new_rates.contains_key(l)) {
                    continue;
                }
                let mut trial = current.clone();
                for (l, v) in rates.get(&node).into_iter().flatten() {
                    *trial.entry(*l).or_default() -= v;
                }
                for (l, v) in &new_rates {
                    *trial.entry(*l).or_default() += v;
                }
                let gain = coverage_value(&trial, need) - base;
                if gain > 1e-9 && best.as_ref().is_none_or(|b| gain > b.0 + 1e-12) {
                    best = Some((gain, node, lm.id, new_rates));
                }
            }
        }
        let Some((_, node, lm, new_rates)) = best else {
            break;
        };
        roles.entry(node).or_default().insert(lm);
        rates.insert(node, new_rates);
    }
    let mut capacity: BTreeMap<LmId, BTreeMap<NodeId, f64>> = BTreeMap::new();
    for (node, r) in &rates {
        for (lm, v) in r {
            capacity.entry(*lm).or_default().insert(*node, *v);
        }
    }
    Packing { roles, capacity }
}

/// Routing proportional to estimated capacity, discounted by the wait the
/// current backlog implies. Uniform over feasible nodes without capacity.
pub fn capacity_routing(
    config: &SimConfig,
    packing: &Packing,
    snapshot: Option<&ClusterSnapshot>,
) -> BTreeMap<LmId, BTreeMap<NodeId, f64>> {
    let mut out = BTreeMap::new();
    for lm in &config.lms {
        let feasible = config.feasible(lm.id);
        if feasible.is_empty() {
            continue;
        }
        let mut w: BTreeMap<NodeId, f64> = BTreeMap::new();
        for (node, rate) in packing.capacity.get(&lm.id).into_iter().flatten() {
            if *rate <= 0.0 || !feasible.contains(node) {
                continue;
            }
            let backlog = snapshot.map_or(0.0, |s| s.backlog(*node, lm.id) as f64);
            let wait = backlog / rate;
            w.insert(*node, rate / (1.0 + wait / config.tau_seconds));
        }
        let total: f64 = w.values().sum();
        let row = if total > 0.0 {
            w.into_iter().map(|(n, v)| (n, v / total)).collect()
        } else {
            let p = 1.0 / feasible.len() as f64;
            feasible.into_iter().map(|n| (n, p)).collect()
        };
        out.insert(lm.id, row);
    }
    out
}

/// Moves at most `amount` of probability mass from `from` towards `to`.
pub fn shift_towards(
    from: &BTreeMap<NodeId, f64>,
    to: &BTreeMap<NodeId, f64>,
    amount: f64,
) -> BTreeMap<NodeId, f64> {
    let nodes: BTreeSet<NodeId> = from.keys().chain(to.keys()).copied().collect();
    let get = |m: &BTreeMap<NodeId, f64>, n: &NodeId| m.get(n).copied().unwrap_or(0.0);
    let tv: f64 = 0.5 * nodes.iter().map(|n| (get(to, n) - get(from, n)).abs()).sum::<f64>();
    let step = if tv <= amount || tv == 0.0 { 1.0 } else { amount / tv };
    let mut out: BTreeMap<NodeId, f64> = nodes
        .iter()
        .map(|n| (*n, get(from, n) + step * (get(to, n) - get(from, n))))
        .filter(|(_, v)| *v > 1e-12)
        .collect();
    let total: f64 = out.values().sum();
    for v in out.values_mut() {
        *v /= total;
    }
    out
}

/// Adds roles where routing still sends real traffic, largest mass first,
/// as long as the node's role set stays deployable.
pub fn cover_routing(
    config: &SimConfig,
    mut roles: BTreeMap<NodeId, BTreeSet<LmId>>,
    routing: &BTreeMap<LmId, BTreeMap<NodeId, f64>>,
) -> BTreeMap<NodeId, BTreeSet<LmId>> {
    let mut wanted: Vec<(f64, NodeId, LmId)> = routing
        .iter()
        .flat_map(|(lm, row)| row.iter().map(move |(n, p)| (*p, *n, *lm)))
        .filter(|(p, n, lm)| *p >= ROLE_MASS && !roles.get(n).is_some_and(|r| r.contains(lm)))
        .collect();
    wanted.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    for (_, node, lm) in wanted {
        let Some(spec) = config.server(node) else {
            continue;
        };
        let mut r = roles.get(&node).cloned().unwrap_or_default();
        r.insert(lm);
        let specs: Vec<_> = r.iter().filter_map(|l| config.lm(*l)).collect();
        if roles_deployable(spec, &specs, &config.lms) {
            roles.insert(node, r);
        }
    }
    roles
}

/// The scripted planner.
#[derive(Debug, Clone, Default)]
pub struct ScriptedPlanner {
    pub memory: EpisodicMemory,
    boost: BTreeMap<LmId, f64>,
}

impl ScriptedPlanner {
    /// Policy for the coming epoch. `previous` is the last epoch's policy and
    /// telemetry and must already be recorded in `memory`.
    pub fn propose(
        &mut self,
        config: &SimConfig,
        epoch: u64,
        previous: Option<(&MacroPolicy, &EpochTelemetry)>,
        snapshot: &ClusterSnapshot,
    ) -> MacroPolicy {
        let Some((prev_policy, prev)) = previous else {
            if let Some(doc) = &config.policy.initial_macro_policy {
                if let Ok(p) = resolve_macro_policy(doc, config) {
                    return p;
                }
            }
            let demand = expected_demand(config, epoch);
            return self.fresh(config, &demand, None);
        };

        let mut demand = expected_demand(config, epoch);
        let k = config.workload.mean_k();
        for (lm, t) in &prev.per_lm {
            let observed = t.arrived as f64 * k / config.epoch_seconds();
            let d = demand.entry(*lm).or_default();
            *d = d.max(observed);
        }
        let mut deficit: BTreeMap<LmId, f64> = BTreeMap::new();
        for lm in config.lm_ids() {
            // Slow service counts as a deficit too, before deadlines start failing.
            let miss = prev.success_ratio(lm).map_or(0.0, |r| (1.0 - r).max(0.0));
            let slow = prev
                .per_lm
                .get(&lm)
                .and_then(|t| t.success_only_mean_latency_s)
                .map_or(0.0, |l| l / config.tau_seconds);
            let d = miss.max(slow);
            deficit.insert(lm, d);
            let b = self.boost.entry(lm).or_default();
            *b = (*b * BOOST_DECAY).max(d);
        }
        let target = self.fresh(config, &demand, Some(snapshot));

        let mut base = &prev_policy.routing_probs;
        if let Some(best) = self.memory.best() {
            if prev.objective > best.objective() + ANCHOR_MARGIN {
                base = &best.policy.routing_probs;
            }
        }
        let mut routing = BTreeMap::new();
        for (lm, to) in &target.routing_probs {
            let d = deficit.get(lm).copied().unwrap_or(0.0);
            let amount = config.agents.max_routing_shift * (0.25 + 2.0 * d).min(1.0);
            let row = match base.get(lm) {
                Some(from) if !from.is_empty() => shift_towards(from, to, amount),
                _ => to.clone(),
            };
            routing.insert(*lm, row);
        }
        let node_roles = cover_routing(config, target.node_roles, &routing);
        MacroPolicy {
            routing_probs: routing,
            node_roles,
        }
    }

    fn fresh(
        &self,
        config: &SimConfig,
        demand: &BTreeMap<LmId, f64>,
        snapshot: Option<&ClusterSnapshot>,
    ) -> MacroPolicy {
        let need: BTreeMap<LmId, f64> = demand
            .iter()
            .map(|(lm, d)| {
                let boost = self.boost.get(lm).copied().unwrap_or(0.0);
                (*lm, d * (1.0 + boost) / TARGET_UTILIZATION)
            })
            .collect();
        let packing = pack_roles(config, &need);
        MacroPolicy {
            routing_probs: capacity_routing(config, &packing, snapshot),
            node_roles: packing.roles,
        }
    }
}

/// Planner that asks a completion backend, or the scripted rules when there
/// is none, and validates whatever comes back.
pub struct AgenticPlanner {
    backend: Option<Box<dyn CompletionBackend>>,
    scripted: ScriptedPlanner,
}

impl AgenticPlanner {
    pub fn new(backend: Option<Box<dyn CompletionBackend>>) -> Self {
        Self {
            backend,
            scripted: ScriptedPlanner::default(),
        }
    }
}

impl Planner for AgenticPlanner {
    fn plan(&mut self, ctx: &PlanContext<'_>) -> PlanOutcome {
        let config = ctx.config;
        if let Some((p, t)) = ctx.previous {
            self.scripted.memory.record_case(t.clone(), p.clone());
        }
        let proposal = self
            .scripted
            .propose(config, ctx.epoch, ctx.previous, ctx.snapshot);
        let mut notes = Vec::new();
        let text = match self.backend.as_mut() {
            None => serde_json::to_string(&macro_policy_doc(&proposal, config))
                .expect("policy documents serialize"),
            Some(b) => {
                let mix = ctx
                    .previous
                    .map(|(_, t)| t.arrival_mix(&config.lm_ids()))
                    .unwrap_or_default();
                let cases =
                    self.scripted
                        .memory
                        .retrieve_cases(&mix, &config.lm_ids(), config.agents.retrieval_k);
                let prompt = planner_prompt(config, ctx.epoch, ctx.previous, &cases, &proposal);
                match b.complete(&prompt) {
                    Ok(t) => t,
                    Err(e) => {
                        notes.push(format!("{} backend failed: {e}", b.name()));
                        String::new()
                    }
                }
            }
        };
        let v = validate_macro_policy(&text, config);
        if !v.accepted && !text.is_empty() {
            notes.push(format!(
                "planner output rejected, using uniform routing: {}",
                v.reasons.join("; ")
            ));
        }
        PlanOutcome {
            policy: v.policy,
            notes,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agentic::validate::macro_policy_violations;

    #[test]
    fn shift_moves_at_most_the_budget() {
        let from: BTreeMap<NodeId, f64> = [(NodeId(3), 1.0)].into();
        let to: BTreeMap<NodeId, f64> = [(NodeId(3), 0.25), (NodeId(4), 0.75)].into();
        let got = shift_towards(&from, &to, 0.15);
        assert!((got[&NodeId(3)] - 0.85).abs() < 1e-12);
        assert!((got[&NodeId(4)] - 0.15).abs() < 1e-12);
        assert_eq!(shift_towards(&from, &to, 1.0), to);
    }

    #[test]
    fn cold_start_plan_is_valid_and_covers_every_type() {
        let c = SimConfig::paper_default();
        let demand = expected_demand(&c, 0);
        let p = ScriptedPlanner::default().fresh(&c, &demand, None);
        assert!(macro_policy_violations(&p, &c).is_empty());
        for lm in c.lm_ids() {
            assert!(p.node_roles.values().any(|r| r.contains(&lm)), "{lm} has no role");
        }
        // The GPU-only type is never routed to the CPU-only node.
        assert_eq!(p.prob(LmId(4), NodeId(2)), 0.0);
    }
}
