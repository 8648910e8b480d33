//! Single-node fixtures shared by the engine tests and the acceptance runner.
#![allow(dead_code)]

use edgellm_core::engine::{DeployReport, EventKind, EventLog, NodeContext, NodeRuntime, Phase, QueuedRequest, Sink};
use edgellm_core::latency::Topology;
use edgellm_core::model::{DeploymentAction, LmTypeSpec};
use edgellm_core::request::{LedgerRow, Status};
use edgellm_core::{LmId, NodeId, Placement, SimConfig};

pub struct Bench {
    pub node: NodeRuntime,
    pub lms: Vec<LmTypeSpec>,
    pub topology: Topology,
    pub tau: f64,
    pub rows: Vec<LedgerRow>,
    pub events: EventLog,
    pub violations: Vec<String>,
}

impl Bench {
    /// One node of the default testbed with the default model types.
    pub fn new(node: u32) -> Self {
        let c = SimConfig::paper_default();
        Self {
            node: NodeRuntime::new(c.server(NodeId(node)).unwrap().clone()),
            topology: Topology::from_config(&c),
            tau: c.tau_seconds,
            lms: c.lms,
            rows: Vec::new(),
            events: EventLog::default(),
            violations: Vec::new(),
        }
    }

    pub fn lm_mut(&mut self, id: u32) -> &mut LmTypeSpec {
        self.lms.iter_mut().find(|l| l.id == LmId(id)).unwrap()
    }

    pub fn deploy(&mut self, placements: &[(u32, Placement)]) -> DeployReport {
        let mut action = DeploymentAction::new();
        for (lm, p) in placements {
            action.set(LmId(*lm), *p);
        }
        let ctx = NodeContext {
            lms: &self.lms,
            topology: &self.topology,
            tau: self.tau,
        };
        let mut sink = Sink {
            rows: &mut self.rows,
            events: &mut self.events,
            violations: &mut self.violations,
        };
        self.node.apply_deployment(&action, &ctx, &mut sink)
    }

    pub fn advance(&mut self, until: f64) {
        let ctx = NodeContext {
            lms: &self.lms,
            topology: &self.topology,
            tau: self.tau,
        };
        let mut sink = Sink {
            rows: &mut self.rows,
            events: &mut self.events,
            violations: &mut self.violations,
        };
        self.node.advance(until, &ctx, &mut sink);
    }

    /// A request that originates at this node, so transfers take no time.
    pub fn enqueue(&mut self, id: u64, lm: u32, k: u32) {
        let now = self.node.now();
        let me = self.node.id();
        self.node.enqueue(
            QueuedRequest {
                id,
                lm: LmId(lm),
                origin: me,
                dest: me,
                k,
                slot: 0,
                arrival_s: now,
                uplink_s: 0.0,
                enqueue_s: now,
                off_role: false,
                prompts_done: 0,
                infer_s: 0.0,
            },
            &mut self.events,
        );
    }

    pub fn row(&self, id: u64) -> Option<&LedgerRow> {
        self.rows.iter().find(|r| r.request_id == id)
    }

    pub fn phase(&self, lm: u32) -> Option<Phase> {
        self.node.replica(LmId(lm)).map(|r| r.phase)
    }
}

fn ensure(ok: bool, what: impl Into<String>) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(what.into())
    }
}

/// A request finishing exactly at its deadline succeeds; one a hair later fails.
pub fn boundary_success() -> Result<(), String> {
    let mut b = Bench::new(3);
    b.lm_mut(1).latency.gpu_base_seconds_per_prompt = 450.0;
    b.deploy(&[(1, Placement::OnGpu { vgpus: 1 })]);
    b.advance(100.0);
    b.enqueue(1, 1, 2);
    b.advance(2000.0);
    let r = b.row(1).ok_or("request 1 never finished")?;
    ensure(r.status == Status::Success, format!("T_q = tau ended as {}", r.status))?;
    ensure(r.t_q == 900.0, format!("T_q = {} instead of 900", r.t_q))?;
    ensure(r.delta == 1, "success flag not set")?;

    let mut b = Bench::new(3);
    b.lm_mut(1).latency.gpu_base_seconds_per_prompt = 450.001;
    b.deploy(&[(1, Placement::OnGpu { vgpus: 1 })]);
    b.advance(100.0);
    b.enqueue(1, 1, 2);
    b.advance(2000.0);
    let r = b.row(1).ok_or("late request never finished")?;
    ensure(r.status == Status::Deadline, format!("late request ended as {}", r.status))?;
    ensure(r.t_q == 900.0, format!("late request T_q = {}", r.t_q))
}

/// Changes to a replica that is starting, and new starts while any start is
/// pending, are voided and logged; the committed placement is untouched.
pub fn pending_voiding() -> Result<(), String> {
    let mut b = Bench::new(3);
    let one = Placement::OnGpu { vgpus: 1 };
    b.deploy(&[(1, one)]);
    ensure(
        matches!(b.phase(1), Some(Phase::Starting { .. })),
        "LM1 should be starting",
    )?;
    let before = b.node.committed_action();
    let r = b.deploy(&[(1, Placement::OnGpu { vgpus: 2 })]);
    ensure(r.voided == vec![LmId(1)], "resize of a starting replica not voided")?;
    let r = b.deploy(&[(1, one), (3, one)]);
    ensure(r.voided == vec![LmId(3)], "second start during a pending start not voided")?;
    ensure(b.node.committed_action() == before, "voided actions changed the node")?;
    ensure(b.events.count(EventKind::ActionVoided) == 2, "voids not logged")?;
    b.advance(30.0);
    let r = b.deploy(&[(1, one), (3, one)]);
    ensure(r.voided.is_empty() && r.started == vec![LmId(3)], "start after settling refused")?;
    ensure(b.violations.is_empty(), b.violations.join("; "))
}

/// A replica restart keeps finished prompts: each prompt completes exactly
/// once and the request's inference time counts only completed prompts.
pub fn checkpoint_resume() -> Result<(), String> {
    let mut b = Bench::new(3);
    b.deploy(&[(1, Placement::OnGpu { vgpus: 1 })]);
    b.advance(30.0);
    b.enqueue(7, 1, 4);
    // 2 s per prompt at one vGPU: two done, the third half way.
    b.advance(35.0);
    ensure(b.node.checkpoint(7) == Some(2), format!("checkpoint {:?}", b.node.checkpoint(7)))?;
    b.deploy(&[(1, Placement::OnGpu { vgpus: 2 })]);
    b.advance(200.0);
    let r = b.row(7).ok_or("request 7 never finished")?;
    ensure(r.status == Status::Success, format!("ended as {}", r.status))?;
    ensure(r.prompts_done == 4, format!("prompts_done = {}", r.prompts_done))?;
    let done: Vec<&str> = b
        .events
        .of_kind(EventKind::PromptDone)
        .filter(|e| e.request == Some(7))
        .map(|e| e.detail.split_whitespace().next().unwrap_or(""))
        .collect();
    ensure(
        done == ["prompt=1/4", "prompt=2/4", "prompt=3/4", "prompt=4/4"],
        format!("prompt completions {done:?}"),
    )?;
    // Two prompts at 2 s, two at 1 s after the move to two vGPUs.
    ensure((r.infer_s - 6.0).abs() < 1e-9, format!("infer_s = {}", r.infer_s))?;
    ensure(b.events.count(EventKind::Checkpoint) == 1, "checkpoint not logged")?;
    ensure(b.violations.is_empty(), b.violations.join("; "))
}

/// Resources of a stopping replica stay taken until its termination delay
/// has passed; a replacement waits in Pending until then.
pub fn termination_holds_resources() -> Result<(), String> {
    let mut b = Bench::new(3);
    b.deploy(&[(4, Placement::OnGpu { vgpus: 2 })]);
    b.advance(60.0);
    ensure(b.phase(4) == Some(Phase::Running), "LM4 not running")?;
    let r = b.deploy(&[(3, Placement::OnGpu { vgpus: 1 })]);
    ensure(r.stopped == vec![LmId(4)] && r.started == vec![LmId(3)], "swap not accepted")?;
    let until = match b.phase(4) {
        Some(Phase::Terminating { until }) => until,
        other => return Err(format!("LM4 phase {other:?}")),
    };
    let delay = b.lms.iter().find(|l| l.id == LmId(4)).unwrap().latency.termination_seconds;
    ensure((until - 60.0 - delay).abs() < 1e-9, "termination delay not applied")?;
    ensure(b.phase(3) == Some(Phase::Pending), "replacement did not wait")?;
    b.advance(until - 1e-3);
    ensure(b.phase(3) == Some(Phase::Pending), "replacement started early")?;
    ensure(
        b.node.physical_usage(&b.lms).vgpus == 2,
        "terminating replica released its vGPUs early",
    )?;
    b.advance(until);
    ensure(b.phase(4).is_none(), "LM4 still present after termination")?;
    ensure(
        matches!(b.phase(3), Some(Phase::Starting { .. })),
        "replacement did not start once resources were free",
    )?;
    ensure(b.violations.is_empty(), b.violations.join("; "))
}
