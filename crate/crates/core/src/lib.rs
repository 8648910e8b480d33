//! Simulator and policy library for fairness-aware, latency-minimizing
//! multi-model inference on a small edge cluster.

pub mod agentic;
pub mod config;
pub mod engine;
pub mod error;
pub mod experiment;
pub mod latency;
pub mod metrics;
pub mod model;
pub mod policy;
pub mod request;
pub mod stats;
pub mod workload;

pub use config::SimConfig;
pub use engine::{Simulation, World};
pub use model::{LmId, MacroPolicy, NodeId, Placement};
pub use request::{LedgerRow, Status};
