//! Discrete-time simulator: slots of routing, deployment and service, grouped
//! into planning epochs.

pub mod events;
pub mod node;
pub mod sim;
pub mod world;

pub use events::{Event, EventKind, EventLog};
pub use node::{
    void_reason, DeployReport, NodeContext, NodeRuntime, NodeSnapshot, Phase, QueuedRequest,
    ReplicaState, ReplicaView, Sink,
};
pub use sim::Simulation;
pub use world::{ClusterSnapshot, SlotOutcome, World};
