use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::model::{LmId, NodeId};

pub type RequestId = u64;

/// Final (or current, for in-flight rows) state of a request.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Success,
    Deadline,
    NeverDeployable,
    InFlight,
}

impl Status {
    pub fn as_str(self) -> &'static str {
        match self {
            Status::Success => "success",
            Status::Deadline => "deadline",
            Status::NeverDeployable => "never_deployable",
            Status::InFlight => "in_flight",
        }
    }

    pub fn is_final(self) -> bool {
        self != Status::InFlight
    }

    pub fn is_failure(self) -> bool {
        matches!(self, Status::Deadline | Status::NeverDeployable)
    }
}

impl fmt::Display for Status {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Status {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "success" => Ok(Status::Success),
            "deadline" => Ok(Status::Deadline),
            "never_deployable" => Ok(Status::NeverDeployable),
            "in_flight" => Ok(Status::InFlight),
            other => Err(format!("unknown status {other:?}")),
        }
    }
}

/// One row of the per-request ledger.
///
/// `t_q = uplink_s + queue_s + infer_s + downlink_s` for every final row.
/// `queue_s` absorbs waiting time and any partial prompt work lost to an
/// interruption; `infer_s` only counts prompts that completed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LedgerRow {
    pub request_id: RequestId,
    pub lm: LmId,
    pub origin: NodeId,
    pub dest: NodeId,
    pub k: u32,
    pub uplink_s: f64,
    pub queue_s: f64,
    pub infer_s: f64,
    pub downlink_s: f64,
    #[serde(rename = "T_q")]
    pub t_q: f64,
    pub delta: u8,
    pub slot: u64,
    pub arrival_s: f64,
    pub finish_s: f64,
    pub status: Status,
    pub off_role: bool,
    pub prompts_done: u32,
}

impl LedgerRow {
    pub fn succeeded(&self) -> bool {
        self.status == Status::Success
    }
}
