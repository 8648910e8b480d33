use std::collections::{BTreeMap, BTreeSet};

use super::events::{EventKind, EventLog};
use super::node::{DeployReport, NodeContext, NodeRuntime, NodeSnapshot, QueuedRequest, Sink};
use crate::config::SimConfig;
use crate::latency::Topology;
use crate::model::{DeploymentAction, LmId, MacroPolicy, NodeId};
use crate::policy::{DeployContext, RouteContext, RoutingMatrix, Strategy};
use crate::request::{LedgerRow, RequestId, Status};
use crate::workload::Arrival;

/// State of the whole cluster as seen by policies at a slot boundary.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterSnapshot {
    pub time: f64,
    pub slot: u64,
    pub nodes: BTreeMap<NodeId, NodeSnapshot>,
}

impl ClusterSnapshot {
    pub fn backlog(&self, node: NodeId, lm: LmId) -> u64 {
        self.nodes.get(&node).map_or(0, |n| n.backlog_of(lm))
    }

    /// Mean backlog of `lm` over `nodes`.
    pub fn mean_backlog(&self, lm: LmId, nodes: &BTreeSet<NodeId>) -> f64 {
        if nodes.is_empty() {
            return 0.0;
        }
        nodes.iter().map(|n| self.backlog(*n, lm) as f64).sum::<f64>() / nodes.len() as f64
    }

    pub fn node_backlog(&self) -> BTreeMap<NodeId, BTreeMap<LmId, u64>> {
        self.nodes
            .iter()
            .map(|(id, n)| (*id, n.backlog.clone()))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SlotOutcome {
    pub slot: u64,
    pub arrivals: usize,
    pub completed: Vec<RequestId>,
    pub failed: Vec<(RequestId, Status)>,
    pub in_flight: usize,
    pub snapshot: ClusterSnapshot,
}

pub struct World {
    pub config: SimConfig,
    topology: Topology,
    feasible: BTreeMap<LmId, BTreeSet<NodeId>>,
    nodes: BTreeMap<NodeId, NodeRuntime>,
    rows: Vec<LedgerRow>,
    events: EventLog,
    violations: Vec<String>,
    next_request: RequestId,
    slot: u64,
    arrivals: u64,
    macro_policy: Option<MacroPolicy>,
    flips: u64,
}

impl World {
    /// `config` is expected to have passed validation.
    pub fn new(config: SimConfig) -> Self {
        let topology = Topology::from_config(&config);
        let feasible = config.lms.iter().map(|l| (l.id, config.feasible(l.id))).collect();
        let nodes = config
            .servers
            .iter()
            .filter(|s| s.hosts_inference)
            .map(|s| (s.id, NodeRuntime::new(s.clone())))
            .collect();
        Self {
            config,
            topology,
            feasible,
            nodes,
            rows: Vec::new(),
            events: EventLog::default(),
            violations: Vec::new(),
            next_request: 0,
            slot: 0,
            arrivals: 0,
            macro_policy: None,
            flips: 0,
        }
    }

    pub fn now(&self) -> f64 {
        self.slot as f64 * self.config.slot_seconds
    }

    pub fn slot(&self) -> u64 {
        self.slot
    }

    pub fn events(&self) -> &EventLog {
        &self.events
    }

    pub fn events_mut(&mut self) -> &mut EventLog {
        &mut self.events
    }

    /// Safety violations found by the per-event audit; empty in a correct run.
    pub fn violations(&self) -> &[String] {
        &self.violations
    }

    pub fn node(&self, id: NodeId) -> Option<&NodeRuntime> {
        self.nodes.get(&id)
    }

    pub fn nodes(&self) -> impl Iterator<Item = &NodeRuntime> {
        self.nodes.values()
    }

    pub fn topology(&self) -> &Topology {
        &self.topology
    }

    pub fn macro_policy(&self) -> Option<&MacroPolicy> {
        self.macro_policy.as_ref()
    }

    /// Installs a macro policy that has already been validated.
    pub fn set_macro_policy(&mut self, policy: Option<MacroPolicy>) {
        self.macro_policy = policy;
    }

    /// Total activation flips applied so far.
    pub fn flips(&self) -> u64 {
        self.flips
    }

    pub fn arrivals(&self) -> u64 {
        self.arrivals
    }

    /// Final rows in the order they were finalized.
    pub fn final_rows(&self) -> &[LedgerRow] {
        &self.rows
    }

    pub fn in_flight(&self) -> usize {
        self.nodes.values().map(NodeRuntime::in_flight).sum()
    }

    pub fn in_flight_rows(&self) -> Vec<LedgerRow> {
        self.nodes
            .values()
            .flat_map(|n| n.queued().map(QueuedRequest::in_flight_row))
            .collect()
    }

    /// Every request seen so far, final or not, ordered by request id.
    pub fn ledger(&self) -> Vec<LedgerRow> {
        let mut all = self.rows.clone();
        all.extend(self.in_flight_rows());
        all.sort_by_key(|r| r.request_id);
        all
    }

    pub fn snapshot(&self) -> ClusterSnapshot {
        ClusterSnapshot {
            time: self.now(),
            slot: self.slot,
            nodes: self
                .nodes
                .iter()
                .map(|(id, n)| (*id, n.snapshot(&self.config.lms)))
                .collect(),
        }
    }

    fn parts(&mut self) -> (NodeContext<'_>, &mut BTreeMap<NodeId, NodeRuntime>, Sink<'_>) {
        (
            NodeContext {
                lms: &self.config.lms,
                topology: &self.topology,
                tau: self.config.tau_seconds,
            },
            &mut self.nodes,
            Sink {
                rows: &mut self.rows,
                events: &mut self.events,
                violations: &mut self.violations,
            },
        )
    }

    /// Dispatches this slot's arrivals. Entries missing from `routing` fall
    /// back to the origin node.
    pub fn apply_routing(&mut self, arrivals: &[Arrival], routing: &RoutingMatrix) {
        let t0 = self.now();
        for a in arrivals {
            let id = self.next_request;
            self.next_request += 1;
            self.arrivals += 1;
            let dest = match routing.get(&(a.origin_node, a.lm_id)) {
                Some(d) => *d,
                None => {
                    self.events.push(
                        t0,
                        Some(a.origin_node),
                        EventKind::RouteFallback,
                        Some(id),
                        format!("no routing entry for lm {}; serving locally", a.lm_id),
                    );
                    a.origin_node
                }
            };
            let prompt_bytes = self.config.lm(a.lm_id).map_or(0, |l| l.prompt_bytes);
            let uplink = self
                .topology
                .delay(a.origin_node, dest, a.k_prompts as u64 * prompt_bytes);
            let off_role = self
                .macro_policy
                .as_ref()
                .is_some_and(|p| !p.node_roles.is_empty() && !p.has_role(dest, a.lm_id));
            let mut req = QueuedRequest {
                id,
                lm: a.lm_id,
                origin: a.origin_node,
                dest,
                k: a.k_prompts,
                slot: a.slot,
                arrival_s: t0,
                uplink_s: 0.0,
                enqueue_s: t0,
                off_role,
                prompts_done: 0,
                infer_s: 0.0,
            };
            let feasible = self.feasible.get(&a.lm_id).is_some_and(|s| s.contains(&dest));
            let (Ok(uplink), true, Some(node)) = (uplink, feasible, self.nodes.get_mut(&dest))
            else {
                self.events.push(
                    t0,
                    Some(dest),
                    EventKind::NeverDeployable,
                    Some(id),
                    format!("lm {} cannot be served at node {dest}", a.lm_id),
                );
                let mut row = req.in_flight_row();
                row.status = Status::NeverDeployable;
                row.finish_s = t0;
                self.rows.push(row);
                continue;
            };
            req.uplink_s = uplink;
            req.enqueue_s = t0 + uplink;
            node.enqueue(req, &mut self.events);
        }
    }

    pub fn apply_deployment(&mut self, node: NodeId, action: &DeploymentAction) -> DeployReport {
        let (ctx, nodes, mut sink) = self.parts();
        let Some(n) = nodes.get_mut(&node) else {
            return DeployReport::default();
        };
        let report = n.apply_deployment(action, &ctx, &mut sink);
        self.flips += report.flips as u64;
        report
    }

    /// Advances every node to `until`.
    pub fn advance_to(&mut self, until: f64) {
        let (ctx, nodes, mut sink) = self.parts();
        for n in nodes.values_mut() {
            n.advance(until, &ctx, &mut sink);
        }
    }

    /// One control slot: route with the end-of-previous-slot view, deploy
    /// with the post-routing view, then serve for `slot_seconds`.
    pub fn run_slot(&mut self, arrivals: &[Arrival], strategy: &mut Strategy) -> SlotOutcome {
        let t0 = self.now();
        let before = self.rows.len();
        let view = self.snapshot();
        let routing = {
            let ctx = RouteContext {
                config: &self.config,
                slot: self.slot,
                snapshot: &view,
                macro_policy: self.macro_policy.as_ref(),
            };
            strategy.router.route(&ctx, arrivals)
        };
        for note in strategy.router.take_notes() {
            self.events.push(t0, None, EventKind::Note, None, note);
        }
        let routing = routing.unwrap_or_else(|e| {
            self.events
                .push(t0, None, EventKind::PolicyFallback, None, format!("router: {e}"));
            RoutingMatrix::new()
        });
        self.apply_routing(arrivals, &routing);

        let ids: Vec<NodeId> = self.nodes.keys().copied().collect();
        for id in ids {
            let snap = self.nodes[&id].snapshot(&self.config.lms);
            let action = {
                let ctx = DeployContext {
                    config: &self.config,
                    slot: self.slot,
                    macro_policy: self.macro_policy.as_ref(),
                };
                strategy.deployer.deploy(&ctx, &snap)
            };
            for note in strategy.deployer.take_notes() {
                self.events.push(t0, Some(id), EventKind::Note, None, note);
            }
            match action {
                Ok(a) => {
                    self.apply_deployment(id, &a);
                }
                Err(e) => self.events.push(
                    t0,
                    Some(id),
                    EventKind::PolicyFallback,
                    None,
                    format!("deployer: {e}; keeping current placement"),
                ),
            }
        }

        self.advance_to(t0 + self.config.slot_seconds);
        let slot = self.slot;
        self.slot += 1;
        let mut completed = Vec::new();
        let mut failed = Vec::new();
        for r in &self.rows[before..] {
            if r.succeeded() {
                completed.push(r.request_id);
            } else {
                failed.push((r.request_id, r.status));
            }
        }
        SlotOutcome {
            slot,
            arrivals: arrivals.len(),
            completed,
            failed,
            in_flight: self.in_flight(),
            snapshot: self.snapshot(),
        }
    }
}
