use std::fmt;
use std::path::PathBuf;

use thiserror::Error;

use crate::model::{LmId, NodeId};

/// One violated invariant, naming the offending field.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub field: String,
    pub message: String,
}

impl Violation {
    pub fn new(field: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            field: field.into(),
            message: message.into(),
        }
    }

    pub fn prefixed(mut self, prefix: &str) -> Self {
        self.field = format!("{prefix}.{}", self.field);
        self
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("failed to read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("failed to parse scenario: {0}")]
    Parse(String),
    #[error("invalid scenario:\n{}", format_violations(.0))]
    Invalid(Vec<Violation>),
}

fn format_violations(v: &[Violation]) -> String {
    v.iter()
        .map(|x| format!("  - {x}"))
        .collect::<Vec<_>>()
        .join("\n")
}

#[derive(Debug, Error, PartialEq)]
pub enum LatencyError {
    #[error("model {lm} cannot run on CPU")]
    CpuInfeasible { lm: LmId },
    #[error("placement needs at least one allocation unit")]
    ZeroAllocation,
    #[error("unreachable pair {src} -> {dst}")]
    UnreachablePair { src: NodeId, dst: NodeId },
}

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("failed to read trace {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("trace line {line}: {message}")]
    Malformed { line: usize, message: String },
}

/// Failure of a policy callback; the engine substitutes a documented fallback.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum PolicyError {
    #[error("policy failed: {0}")]
    Failed(String),
}

#[derive(Debug, Error)]
pub enum BackendError {
    #[error("backend not configured: {0}")]
    NotConfigured(String),
    #[error("completion request failed: {0}")]
    Transport(String),
}

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("fairness index {value} outside [1/{count}, 1]")]
    FairnessOutOfRange { value: f64, count: usize },
}

#[derive(Debug, Error)]
pub enum ArtifactError {
    #[error("failed to access {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("corrupt file {path}: {message}")]
    Corrupt { path: PathBuf, message: String },
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Trace(#[from] TraceError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
}
