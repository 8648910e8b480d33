//! The two-tier agentic controller: an epoch planner that writes a macro
//! policy, a per-slot scheduler that follows it, and per-node deployers that
//! act on its role intent.

pub mod alloc;
pub mod backend;
pub mod deployer;
pub mod memory;
pub mod planner;
pub mod prompt;
pub mod scheduler;
pub mod validate;

pub use backend::{BackendChoice, CompletionBackend, ExternalSettings};
pub use deployer::{scripted_deployment, AgenticDeployer};
pub use memory::{EpisodicMemory, HistoryCase};
pub use planner::{AgenticPlanner, ScriptedPlanner};
pub use prompt::summarize_epoch;
pub use scheduler::PromptScheduler;
pub use validate::{macro_policy_violations, uniform_policy, validate_macro_policy, Validation};
