//! Policy interfaces and the named strategies that combine them.
//!
//! A strategy is a router (where each request goes), a deployer (what each
//! node runs) and optionally a planner (the per-epoch macro policy).

pub mod baseline;
pub mod dpp;

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::agentic::backend::BackendChoice;
use crate::agentic::{AgenticDeployer, AgenticPlanner, PromptScheduler};
use crate::config::SimConfig;
use crate::engine::{ClusterSnapshot, NodeSnapshot};
use crate::error::PolicyError;
use crate::metrics::EpochTelemetry;
use crate::model::{DeploymentAction, LmId, MacroPolicy, NodeId};
use crate::workload::Arrival;

pub use baseline::{
    AverageRouter, FullActivationDeployer, LocalRouter, RandomDeployer, RandomRouter,
};
pub use dpp::DppDeployer;

/// Strategy names accepted by the CLI and scenario files.
pub const POLICY_NAMES: [&str; 7] = ["MA", "RR", "RL", "MAL", "AL", "RF", "LL"];

/// Destination per (origin node, model type), frozen for one slot.
pub type RoutingMatrix = BTreeMap<(NodeId, LmId), NodeId>;

pub struct RouteContext<'a> {
    pub config: &'a SimConfig,
    pub slot: u64,
    /// Cluster state at the end of the previous slot.
    pub snapshot: &'a ClusterSnapshot,
    pub macro_policy: Option<&'a MacroPolicy>,
}

pub struct DeployContext<'a> {
    pub config: &'a SimConfig,
    pub slot: u64,
    pub macro_policy: Option<&'a MacroPolicy>,
}

pub struct PlanContext<'a> {
    pub config: &'a SimConfig,
    pub epoch: u64,
    /// Policy and telemetry of the previous epoch.
    pub previous: Option<(&'a MacroPolicy, &'a EpochTelemetry)>,
    pub history: &'a [EpochTelemetry],
    pub snapshot: &'a ClusterSnapshot,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlanOutcome {
    pub policy: MacroPolicy,
    /// Fallbacks taken while producing `policy`.
    pub notes: Vec<String>,
}

pub trait Router: Send {
    fn route(
        &mut self,
        ctx: &RouteContext<'_>,
        arrivals: &[Arrival],
    ) -> Result<RoutingMatrix, PolicyError>;

    /// Diagnostics produced since the last call, for the event log.
    fn take_notes(&mut self) -> Vec<String> {
        Vec::new()
    }
}

pub trait Deployer: Send {
    /// Full desired placement for `node`; types left out are switched off.
    fn deploy(
        &mut self,
        ctx: &DeployContext<'_>,
        node: &NodeSnapshot,
    ) -> Result<DeploymentAction, PolicyError>;

    fn take_notes(&mut self) -> Vec<String> {
        Vec::new()
    }
}

pub trait Planner: Send {
    fn plan(&mut self, ctx: &PlanContext<'_>) -> PlanOutcome;
}

pub struct Strategy {
    pub name: String,
    pub planner: Option<Box<dyn Planner>>,
    pub router: Box<dyn Router>,
    pub deployer: Box<dyn Deployer>,
}

/// Independent random stream for one policy component.
pub fn policy_rng(seed: u64, tag: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(u64::MAX - tag);
    rng
}

const ROUTER_STREAM: u64 = 1;
const DEPLOYER_STREAM: u64 = 2;

/// Assembles one of the named strategies.
pub fn build_strategy(
    name: &str,
    config: &SimConfig,
    seed: u64,
    backend: &BackendChoice,
) -> Result<Strategy, PolicyError> {
    let random_router = || Box::new(RandomRouter::new(policy_rng(seed, ROUTER_STREAM)));
    let dpp = || Box::new(DppDeployer::new(config.dpp.clone()));
    let planner = || -> Box<dyn Planner> {
        Box::new(AgenticPlanner::new(backend.planner(config)))
    };
    let scheduler = || Box::new(PromptScheduler::new(policy_rng(seed, ROUTER_STREAM)));
    let (planner, router, deployer): (
        Option<Box<dyn Planner>>,
        Box<dyn Router>,
        Box<dyn Deployer>,
    ) = match name {
        "RR" => (
            None,
            random_router(),
            Box::new(RandomDeployer::new(policy_rng(seed, DEPLOYER_STREAM))),
        ),
        "RL" => (None, random_router(), dpp()),
        "AL" => (None, Box::new(AverageRouter::default()), dpp()),
        "LL" => (None, Box::new(LocalRouter), dpp()),
        "RF" => (None, random_router(), Box::new(FullActivationDeployer::default())),
        "MAL" => (Some(planner()), scheduler(), dpp()),
        "MA" => (
            Some(planner()),
            scheduler(),
            Box::new(AgenticDeployer::new(backend.deployer(config))),
        ),
        other => return Err(PolicyError::Failed(format!("unknown strategy {other:?}"))),
    };
    Ok(Strategy {
        name: name.to_string(),
        planner,
        router,
        deployer,
    })
}
