//! Per-node runtime: FIFO queues per model type, replica lifecycles and the
//! prompt-level service loop with checkpointing.

use std::collections::{BTreeMap, VecDeque};

use serde::{Deserialize, Serialize};

use super::events::{EventKind, EventLog};
use crate::latency::{per_prompt_seconds, startup_delay, termination_delay, Topology};
use crate::model::{
    check_headroom, placement_allowed, DeploymentAction, LmId, LmTypeSpec, NodeId, Placement,
    PlacementMode, ResourceUsage, ServerSpec,
};
use crate::request::{LedgerRow, RequestId, Status};

/// Completion and deadline events closer than this are treated as simultaneous.
const TIME_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    /// Admitted, waiting for terminating replicas to release resources.
    Pending,
    Starting { until: f64 },
    Running,
    Terminating { until: f64 },
}

impl Phase {
    pub fn label(self) -> &'static str {
        match self {
            Phase::Pending => "pending",
            Phase::Starting { .. } => "starting",
            Phase::Running => "running",
            Phase::Terminating { .. } => "terminating",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct InService {
    request: RequestId,
    ends: f64,
    seconds: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplicaState {
    pub lm: LmId,
    pub mode: PlacementMode,
    pub phase: Phase,
    /// Placement to start once this replica has finished terminating.
    pub next: Option<PlacementMode>,
    service: Option<InService>,
}

impl ReplicaState {
    /// A start has been committed but the replica cannot serve yet.
    pub fn is_transient_start(&self) -> bool {
        match self.phase {
            Phase::Pending | Phase::Starting { .. } => true,
            Phase::Terminating { .. } => self.next.is_some(),
            Phase::Running => false,
        }
    }

    /// Placement this replica is heading towards.
    pub fn committed(&self) -> Placement {
        match self.phase {
            Phase::Terminating { .. } => self.next.map_or(Placement::Off, |m| m.placement()),
            _ => self.mode.placement(),
        }
    }

    fn holds_physically(&self) -> bool {
        !matches!(self.phase, Phase::Pending)
    }
}

/// A request waiting at (or being served by) a node.
#[derive(Debug, Clone, PartialEq)]
pub struct QueuedRequest {
    pub id: RequestId,
    pub lm: LmId,
    pub origin: NodeId,
    pub dest: NodeId,
    pub k: u32,
    pub slot: u64,
    pub arrival_s: f64,
    pub uplink_s: f64,
    pub enqueue_s: f64,
    pub off_role: bool,
    pub prompts_done: u32,
    pub infer_s: f64,
}

impl QueuedRequest {
    pub fn deadline(&self, tau: f64) -> f64 {
        self.arrival_s + tau
    }

    pub fn remaining(&self) -> u32 {
        self.k - self.prompts_done
    }

    fn row(&self, status: Status, finish_s: f64, downlink_s: f64) -> LedgerRow {
        let t_q = finish_s - self.arrival_s;
        LedgerRow {
            request_id: self.id,
            lm: self.lm,
            origin: self.origin,
            dest: self.dest,
            k: self.k,
            uplink_s: self.uplink_s,
            queue_s: t_q - self.uplink_s - self.infer_s - downlink_s,
            infer_s: self.infer_s,
            downlink_s,
            t_q,
            delta: (status == Status::Success) as u8,
            slot: self.slot,
            arrival_s: self.arrival_s,
            finish_s,
            status,
            off_role: self.off_role,
            prompts_done: self.prompts_done,
        }
    }

    /// Row describing this request while it is still in flight.
    pub fn in_flight_row(&self) -> LedgerRow {
        let mut r = self.row(Status::InFlight, self.arrival_s, 0.0);
        r.queue_s = 0.0;
        r.t_q = 0.0;
        r
    }
}

/// Read-only inputs shared by all nodes.
pub struct NodeContext<'a> {
    pub lms: &'a [LmTypeSpec],
    pub topology: &'a Topology,
    pub tau: f64,
}

impl NodeContext<'_> {
    fn lm(&self, id: LmId) -> &LmTypeSpec {
        self.lms
            .iter()
            .find(|l| l.id == id)
            .expect("model types are validated before the engine runs")
    }
}

/// Where a node reports finished requests, events and safety violations.
pub struct Sink<'a> {
    pub rows: &'a mut Vec<LedgerRow>,
    pub events: &'a mut EventLog,
    pub violations: &'a mut Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReplicaView {
    pub mode: PlacementMode,
    pub phase: Phase,
    pub next: Option<PlacementMode>,
    pub busy: bool,
}

impl ReplicaView {
    pub fn is_transient_start(&self) -> bool {
        match self.phase {
            Phase::Pending | Phase::Starting { .. } => true,
            Phase::Terminating { .. } => self.next.is_some(),
            Phase::Running => false,
        }
    }
}

/// What a deployment controller sees of a node.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeSnapshot {
    pub spec: ServerSpec,
    pub time: f64,
    /// Prompts still to be served per type, including requests in transit.
    pub backlog: BTreeMap<LmId, u64>,
    pub queued_requests: BTreeMap<LmId, usize>,
    pub replicas: BTreeMap<LmId, ReplicaView>,
    /// Placement every type is heading towards; the no-op action.
    pub committed: DeploymentAction,
    /// Resources held by replicas that are terminating.
    pub terminating: ResourceUsage,
}

impl NodeSnapshot {
    pub fn id(&self) -> NodeId {
        self.spec.id
    }

    pub fn backlog_of(&self, lm: LmId) -> u64 {
        self.backlog.get(&lm).copied().unwrap_or(0)
    }

    pub fn total_backlog(&self) -> u64 {
        self.backlog.values().sum()
    }

    /// Some replica on the node has a start in progress.
    pub fn has_transient_start(&self) -> bool {
        self.replicas.values().any(|r| r.is_transient_start())
    }

    /// Why changing `lm` to `want` would be voided, if it would.
    pub fn void_reason(&self, lm: LmId, want: Placement) -> Option<&'static str> {
        void_reason(
            self.replicas.get(&lm),
            self.has_transient_start(),
            self.committed.get(lm),
            want,
        )
    }

    /// True iff no sub-action of `action` would be voided.
    pub fn conflict_free(&self, action: &DeploymentAction, lms: &[LmTypeSpec]) -> bool {
        lms.iter()
            .all(|l| self.void_reason(l.id, action.get(l.id)).is_none())
    }
}

/// The pending-conflict rule: replicas with a start in progress cannot be
/// changed, and no new resources are granted while any start is in progress.
pub fn void_reason(
    replica: Option<&ReplicaView>,
    node_transient: bool,
    have: Placement,
    want: Placement,
) -> Option<&'static str> {
    if want == have {
        return None;
    }
    if replica.is_some_and(|r| r.is_transient_start()) {
        return Some("replica start in progress");
    }
    if want.is_active() && node_transient {
        return Some("another start pending on node");
    }
    None
}

/// Outcome of one `apply_deployment` call.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DeployReport {
    pub started: Vec<LmId>,
    pub stopped: Vec<LmId>,
    pub changed: Vec<LmId>,
    pub voided: Vec<LmId>,
    pub rejected: bool,
    /// Number of types whose active/inactive state flipped.
    pub flips: u32,
}

#[derive(Debug, Clone)]
pub struct NodeRuntime {
    pub spec: ServerSpec,
    queues: BTreeMap<LmId, VecDeque<QueuedRequest>>,
    replicas: BTreeMap<LmId, ReplicaState>,
    /// Prompts completed per request, kept across replica restarts.
    checkpoints: BTreeMap<RequestId, u32>,
    now: f64,
}

impl NodeRuntime {
    pub fn new(spec: ServerSpec) -> Self {
        Self {
            spec,
            queues: BTreeMap::new(),
            replicas: BTreeMap::new(),
            checkpoints: BTreeMap::new(),
            now: 0.0,
        }
    }

    pub fn id(&self) -> NodeId {
        self.spec.id
    }

    pub fn now(&self) -> f64 {
        self.now
    }

    pub fn replicas(&self) -> impl Iterator<Item = &ReplicaState> {
        self.replicas.values()
    }

    pub fn replica(&self, lm: LmId) -> Option<&ReplicaState> {
        self.replicas.get(&lm)
    }

    pub fn checkpoint(&self, id: RequestId) -> Option<u32> {
        self.checkpoints.get(&id).copied()
    }

    pub fn queue(&self, lm: LmId) -> impl Iterator<Item = &QueuedRequest> {
        self.queues.get(&lm).into_iter().flatten()
    }

    pub fn queued(&self) -> impl Iterator<Item = &QueuedRequest> {
        self.queues.values().flatten()
    }

    pub fn in_flight(&self) -> usize {
        self.queues.values().map(VecDeque::len).sum()
    }

    pub fn backlog(&self, lm: LmId) -> u64 {
        self.queue(lm).map(|r| r.remaining() as u64).sum()
    }

    pub fn committed_action(&self) -> DeploymentAction {
        let mut a = DeploymentAction::new();
        for (lm, r) in &self.replicas {
            a.set(*lm, r.committed());
        }
        a
    }

    pub fn has_transient_start(&self) -> bool {
        self.replicas.values().any(ReplicaState::is_transient_start)
    }

    /// Resources the node is committed to after pending transitions settle.
    pub fn committed_usage(&self, lms: &[LmTypeSpec]) -> ResourceUsage {
        crate::model::action_usage(&self.committed_action(), lms)
    }

    /// Resources physically held right now.
    pub fn physical_usage(&self, lms: &[LmTypeSpec]) -> ResourceUsage {
        let mut u = ResourceUsage::default();
        for r in self.replicas.values().filter(|r| r.holds_physically()) {
            if let Some(lm) = lms.iter().find(|l| l.id == r.lm) {
                u.add(lm, r.mode);
            }
        }
        u
    }

    fn terminating_usage(&self, lms: &[LmTypeSpec]) -> ResourceUsage {
        let mut u = ResourceUsage::default();
        for r in self.replicas.values() {
            if let (Phase::Terminating { .. }, Some(lm)) =
                (r.phase, lms.iter().find(|l| l.id == r.lm))
            {
                u.add(lm, r.mode);
            }
        }
        u
    }

    pub fn snapshot(&self, lms: &[LmTypeSpec]) -> NodeSnapshot {
        let mut backlog = BTreeMap::new();
        let mut queued_requests = BTreeMap::new();
        for lm in lms {
            backlog.insert(lm.id, self.backlog(lm.id));
            queued_requests.insert(lm.id, self.queues.get(&lm.id).map_or(0, VecDeque::len));
        }
        NodeSnapshot {
            spec: self.spec.clone(),
            time: self.now,
            backlog,
            queued_requests,
            replicas: self
                .replicas
                .iter()
                .map(|(lm, r)| {
                    (
                        *lm,
                        ReplicaView {
                            mode: r.mode,
                            phase: r.phase,
                            next: r.next,
                            busy: r.service.is_some(),
                        },
                    )
                })
                .collect(),
            committed: self.committed_action(),
            terminating: self.terminating_usage(lms),
        }
    }

    /// Checks both resource views against the node budget.
    pub fn audit(&self, lms: &[LmTypeSpec], sink: &mut Sink<'_>) {
        if !self.physical_usage(lms).fits(&self.spec) {
            sink.violations.push(format!(
                "node {} at t={:.6}: physical usage exceeds budget",
                self.id(),
                self.now
            ));
        }
        if !self.committed_usage(lms).fits(&self.spec) {
            sink.violations.push(format!(
                "node {} at t={:.6}: committed usage exceeds budget",
                self.id(),
                self.now
            ));
        }
        if self.replicas.values().any(|r| {
            matches!(r.phase, Phase::Starting { .. } | Phase::Running) && r.next.is_some()
        }) {
            sink.violations.push(format!("node {}: stray restart mark", self.id()));
        }
    }

    /// Adds a request to the FIFO of its type, ordered by enqueue time.
    pub fn enqueue(&mut self, req: QueuedRequest, events: &mut EventLog) {
        events.push(
            req.enqueue_s,
            Some(self.id()),
            EventKind::Enqueue,
            Some(req.id),
            format!("lm={} k={} origin={}", req.lm, req.k, req.origin),
        );
        let q = self.queues.entry(req.lm).or_default();
        let pos = q
            .iter()
            .rposition(|r| (r.enqueue_s, r.id) <= (req.enqueue_s, req.id))
            .map_or(0, |p| p + 1);
        q.insert(pos, req);
    }

    /// Applies a full per-type placement for this node at the current time.
    pub fn apply_deployment(
        &mut self,
        action: &DeploymentAction,
        ctx: &NodeContext<'_>,
        sink: &mut Sink<'_>,
    ) -> DeployReport {
        let mut report = DeployReport::default();
        let current = self.committed_action();
        if *action == current {
            return report;
        }
        let node = self.id();
        let now = self.now;
        let transient = self.has_transient_start();
        let mut target = current.clone();
        let mut lms: Vec<LmId> = current.placements.keys().copied().collect();
        lms.extend(action.placements.keys().copied());
        lms.sort();
        lms.dedup();
        for &lm in &lms {
            let want = action.get(lm);
            let have = current.get(lm);
            if want == have {
                continue;
            }
            let Some(spec) = ctx.lms.iter().find(|l| l.id == lm) else {
                sink.events.push(
                    now,
                    Some(node),
                    EventKind::ActionRejected,
                    None,
                    format!("unknown model type {lm}"),
                );
                report.rejected = true;
                return report;
            };
            if !placement_allowed(&self.spec, spec, want) {
                sink.events.push(
                    now,
                    Some(node),
                    EventKind::ActionRejected,
                    None,
                    format!("{}={} not allowed on this node", lm, want.label()),
                );
                report.rejected = true;
                return report;
            }
            let view = self.replicas.get(&lm).map(|r| ReplicaView {
                mode: r.mode,
                phase: r.phase,
                next: r.next,
                busy: r.service.is_some(),
            });
            if let Some(reason) = void_reason(view.as_ref(), transient, have, want) {
                sink.events.push(
                    now,
                    Some(node),
                    EventKind::ActionVoided,
                    None,
                    format!("{}: {} -> {}: {reason}", lm, have.label(), want.label()),
                );
                report.voided.push(lm);
                continue;
            }
            target.set(lm, want);
        }
        if target == current {
            return report;
        }
        if !check_headroom(&self.spec, &target, ctx.lms) {
            sink.events.push(
                now,
                Some(node),
                EventKind::ActionRejected,
                None,
                format!("{} exceeds node budget", target.label()),
            );
            report.rejected = true;
            return report;
        }

        for &lm in &lms {
            let want = target.get(lm);
            let have = current.get(lm);
            if want == have {
                continue;
            }
            if want.is_active() != have.is_active() {
                report.flips += 1;
            }
            let spec = ctx.lm(lm);
            match (self.replicas.get(&lm).map(|r| r.phase), want.mode()) {
                (Some(Phase::Running), None) => {
                    self.begin_termination(lm, None, spec, sink);
                    report.stopped.push(lm);
                }
                (Some(Phase::Running), Some(mode)) => {
                    self.begin_termination(lm, Some(mode), spec, sink);
                    report.changed.push(lm);
                }
                (Some(Phase::Terminating { .. }), Some(mode)) => {
                    let r = self.replicas.get_mut(&lm).expect("present");
                    r.next = Some(mode);
                    sink.events.push(
                        now,
                        Some(node),
                        EventKind::ReplicaPending,
                        None,
                        format!("{lm} restart as {} after termination", want.label()),
                    );
                    report.started.push(lm);
                }
                (None, Some(mode)) => {
                    self.replicas.insert(
                        lm,
                        ReplicaState {
                            lm,
                            mode,
                            phase: Phase::Pending,
                            next: None,
                            service: None,
                        },
                    );
                    sink.events.push(
                        now,
                        Some(node),
                        EventKind::ReplicaPending,
                        None,
                        format!("{lm} {}", want.label()),
                    );
                    report.started.push(lm);
                }
                // Transient replicas were filtered by the void rule above.
                _ => {}
            }
        }
        self.promote_pending(ctx, sink);
        self.audit(ctx.lms, sink);
        report
    }

    fn begin_termination(
        &mut self,
        lm: LmId,
        next: Option<PlacementMode>,
        spec: &LmTypeSpec,
        sink: &mut Sink<'_>,
    ) {
        let now = self.now;
        let node = self.id();
        let r = self.replicas.get_mut(&lm).expect("replica exists");
        if let Some(s) = r.service.take() {
            let done = self.checkpoints.get(&s.request).copied().unwrap_or(0);
            sink.events.push(
                now,
                Some(node),
                EventKind::Checkpoint,
                Some(s.request),
                format!("prompts_done={done}"),
            );
        }
        let until = now + termination_delay(spec);
        r.phase = Phase::Terminating { until };
        r.next = next;
        let detail = match next {
            Some(m) => format!("{lm} {} -> {}", r.mode.placement().label(), m.placement().label()),
            None => format!("{lm} {}", r.mode.placement().label()),
        };
        sink.events.push(now, Some(node), EventKind::ReplicaStopping, None, detail);
    }

    /// Moves pending replicas to Starting as soon as physical resources allow.
    fn promote_pending(&mut self, ctx: &NodeContext<'_>, sink: &mut Sink<'_>) {
        let pending: Vec<LmId> = self
            .replicas
            .values()
            .filter(|r| r.phase == Phase::Pending)
            .map(|r| r.lm)
            .collect();
        for lm in pending {
            let spec = ctx.lm(lm);
            let mode = self.replicas[&lm].mode;
            let mut usage = self.physical_usage(ctx.lms);
            usage.add(spec, mode);
            if !usage.fits(&self.spec) {
                continue;
            }
            let until = self.now + startup_delay(spec, mode);
            self.replicas.get_mut(&lm).expect("present").phase = Phase::Starting { until };
            sink.events.push(
                self.now,
                Some(self.id()),
                EventKind::ReplicaStarting,
                None,
                format!("{lm} {} ready_at={until:.6}", mode.placement().label()),
            );
        }
    }

    fn next_event(&self, ctx: &NodeContext<'_>) -> Option<f64> {
        let mut next: Option<f64> = None;
        let mut consider = |t: f64| {
            next = Some(next.map_or(t, |n: f64| n.min(t)));
        };
        for r in self.replicas.values() {
            match r.phase {
                Phase::Starting { until } | Phase::Terminating { until } => consider(until),
                Phase::Running => match r.service {
                    Some(s) => consider(s.ends),
                    None => {
                        if let Some(head) = self.queues.get(&r.lm).and_then(|q| q.front()) {
                            if head.enqueue_s > self.now {
                                consider(head.enqueue_s);
                            }
                        }
                    }
                },
                Phase::Pending => {}
            }
        }
        for q in self.queues.values() {
            for req in q {
                consider(req.deadline(ctx.tau));
            }
        }
        next
    }

    /// Runs the node forward to `until`, processing every event at or before it.
    pub fn advance(&mut self, until: f64, ctx: &NodeContext<'_>, sink: &mut Sink<'_>) {
        loop {
            self.start_idle(ctx, sink);
            let Some(t) = self.next_event(ctx) else { break };
            if t > until {
                break;
            }
            self.now = self.now.max(t);
            let t = self.now;
            self.finish_transitions(t, ctx, sink);
            self.finish_prompts(t, ctx, sink);
            self.expire(t, ctx, sink);
            self.audit(ctx.lms, sink);
        }
        self.now = self.now.max(until);
    }

    fn finish_transitions(&mut self, t: f64, ctx: &NodeContext<'_>, sink: &mut Sink<'_>) {
        let node = self.id();
        let mut released = false;
        let lms: Vec<LmId> = self.replicas.keys().copied().collect();
        for lm in lms {
            let r = self.replicas.get_mut(&lm).expect("present");
            match r.phase {
                Phase::Terminating { until } if until <= t => {
                    released = true;
                    sink.events.push(
                        t,
                        Some(node),
                        EventKind::ReplicaStopped,
                        None,
                        format!("{lm} {}", r.mode.placement().label()),
                    );
                    match r.next.take() {
                        Some(mode) => {
                            r.mode = mode;
                            r.phase = Phase::Pending;
                        }
                        None => {
                            self.replicas.remove(&lm);
                        }
                    }
                }
                Phase::Starting { until } if until <= t => {
                    r.phase = Phase::Running;
                    sink.events.push(
                        t,
                        Some(node),
                        EventKind::ReplicaRunning,
                        None,
                        format!("{lm} {}", r.mode.placement().label()),
                    );
                }
                _ => {}
            }
        }
        if released || self.replicas.values().any(|r| r.phase == Phase::Pending) {
            self.promote_pending(ctx, sink);
        }
    }

    fn start_idle(&mut self, ctx: &NodeContext<'_>, sink: &mut Sink<'_>) {
        let now = self.now;
        let node = self.id();
        for r in self.replicas.values_mut() {
            if r.phase != Phase::Running || r.service.is_some() {
                continue;
            }
            let Some(head) = self.queues.get(&r.lm).and_then(|q| q.front()) else {
                continue;
            };
            if head.enqueue_s > now {
                continue;
            }
            let seconds = per_prompt_seconds(ctx.lm(r.lm), r.mode)
                .expect("placements are validated against model feasibility");
            r.service = Some(InService {
                request: head.id,
                ends: now + seconds,
                seconds,
            });
            sink.events.push(
                now,
                Some(node),
                EventKind::PromptStart,
                Some(head.id),
                format!("prompt={}/{}", head.prompts_done + 1, head.k),
            );
        }
    }

    fn finish_prompts(&mut self, t: f64, ctx: &NodeContext<'_>, sink: &mut Sink<'_>) {
        let node = self.id();
        let lms: Vec<LmId> = self.replicas.keys().copied().collect();
        for lm in lms {
            let r = self.replicas.get_mut(&lm).expect("present");
            let Some(s) = r.service else { continue };
            if s.ends > t {
                continue;
            }
            r.service = None;
            let q = self.queues.get_mut(&lm).expect("served request is queued");
            let head = q.front_mut().expect("served request is queued");
            debug_assert_eq!(head.id, s.request);
            head.prompts_done += 1;
            head.infer_s += s.seconds;
            self.checkpoints.insert(head.id, head.prompts_done);
            sink.events.push(
                t,
                Some(node),
                EventKind::PromptDone,
                Some(head.id),
                format!("prompt={}/{} seconds={:.6}", head.prompts_done, head.k, s.seconds),
            );
            if head.prompts_done < head.k {
                continue;
            }
            let req = q.pop_front().expect("head exists");
            self.checkpoints.remove(&req.id);
            let spec = ctx.lm(lm);
            let downlink = ctx
                .topology
                .delay(node, req.origin, req.k as u64 * spec.result_bytes)
                .unwrap_or(0.0);
            let finish = t + downlink;
            let deadline = req.deadline(ctx.tau);
            let row = if finish <= deadline + TIME_EPS {
                sink.events.push(
                    finish,
                    Some(node),
                    EventKind::Complete,
                    Some(req.id),
                    format!("T_q={:.6}", finish - req.arrival_s),
                );
                req.row(Status::Success, finish, downlink)
            } else {
                sink.events.push(
                    deadline,
                    Some(node),
                    EventKind::Fail,
                    Some(req.id),
                    "deadline during result delivery",
                );
                req.row(Status::Deadline, deadline, 0.0)
            };
            sink.rows.push(row);
        }
    }

    fn expire(&mut self, t: f64, ctx: &NodeContext<'_>, sink: &mut Sink<'_>) {
        let node = self.id();
        for (lm, q) in self.queues.iter_mut() {
            let mut i = 0;
            while i < q.len() {
                let deadline = q[i].deadline(ctx.tau);
                if deadline > t {
                    i += 1;
                    continue;
                }
                let req = q.remove(i).expect("index in range");
                if let Some(r) = self.replicas.get_mut(lm) {
                    if r.service.is_some_and(|s| s.request == req.id) {
                        r.service = None;
                    }
                }
                self.checkpoints.remove(&req.id);
                sink.events.push(
                    deadline,
                    Some(node),
                    EventKind::Fail,
                    Some(req.id),
                    format!("deadline prompts_done={}/{}", req.prompts_done, req.k),
                );
                sink.rows.push(req.row(Status::Deadline, deadline, 0.0));
            }
        }
    }
}
