use std::fmt::Write as _;
use std::io::{self, Write};

use crate::model::NodeId;
use crate::request::RequestId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum EventKind {
    Enqueue,
    RouteFallback,
    NeverDeployable,
    PromptStart,
    PromptDone,
    Checkpoint,
    Complete,
    Fail,
    ReplicaPending,
    ReplicaStarting,
    ReplicaRunning,
    ReplicaStopping,
    ReplicaStopped,
    ActionVoided,
    ActionRejected,
    PolicyFallback,
    PlannerFallback,
    MacroPolicy,
    Note,
}

impl EventKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EventKind::Enqueue => "enqueue",
            EventKind::RouteFallback => "route_fallback",
            EventKind::NeverDeployable => "never_deployable",
            EventKind::PromptStart => "prompt_start",
            EventKind::PromptDone => "prompt_done",
            EventKind::Checkpoint => "checkpoint",
            EventKind::Complete => "complete",
            EventKind::Fail => "fail",
            EventKind::ReplicaPending => "replica_pending",
            EventKind::ReplicaStarting => "replica_starting",
            EventKind::ReplicaRunning => "replica_running",
            EventKind::ReplicaStopping => "replica_stopping",
            EventKind::ReplicaStopped => "replica_stopped",
            EventKind::ActionVoided => "action_voided",
            EventKind::ActionRejected => "action_rejected",
            EventKind::PolicyFallback => "policy_fallback",
            EventKind::PlannerFallback => "planner_fallback",
            EventKind::MacroPolicy => "macro_policy",
            EventKind::Note => "note",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Event {
    pub time: f64,
    pub node: Option<NodeId>,
    pub kind: EventKind,
    pub request: Option<RequestId>,
    pub detail: String,
}

/// Append-only audit log, one tab-separated line per event.
#[derive(Debug, Clone, Default)]
pub struct EventLog {
    events: Vec<Event>,
}

impl EventLog {
    pub fn push(
        &mut self,
        time: f64,
        node: Option<NodeId>,
        kind: EventKind,
        request: Option<RequestId>,
        detail: impl Into<String>,
    ) {
        self.events.push(Event {
            time,
            node,
            kind,
            request,
            detail: detail.into(),
        });
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn count(&self, kind: EventKind) -> usize {
        self.events.iter().filter(|e| e.kind == kind).count()
    }

    pub fn of_kind(&self, kind: EventKind) -> impl Iterator<Item = &Event> {
        self.events.iter().filter(move |e| e.kind == kind)
    }

    pub fn write_to<W: Write>(&self, mut out: W) -> io::Result<()> {
        let mut line = String::new();
        for e in &self.events {
            line.clear();
            let _ = write!(line, "{:.6}\t", e.time);
            match e.node {
                Some(n) => {
                    let _ = write!(line, "{n}");
                }
                None => line.push('-'),
            }
            let _ = write!(line, "\t{}\t", e.kind.as_str());
            match e.request {
                Some(r) => {
                    let _ = write!(line, "{r}");
                }
                None => line.push('-'),
            }
            let _ = writeln!(line, "\t{}", e.detail);
            out.write_all(line.as_bytes())?;
        }
        Ok(())
    }
}
