//! Comparison routers and deployers.

use std::collections::BTreeMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::dpp::dpp_feasible_actions;
use super::{DeployContext, Deployer, RouteContext, Router, RoutingMatrix};
use crate::config::SimConfig;
use crate::engine::NodeSnapshot;
use crate::error::PolicyError;
use crate::model::{
    check_headroom, placement_allowed, DeploymentAction, LmId, LmTypeSpec, NodeId, Placement,
    ServerSpec,
};
use crate::workload::Arrival;

fn feasible_list(config: &SimConfig, lm: LmId) -> Vec<NodeId> {
    config.feasible(lm).into_iter().collect()
}

/// Distinct (origin, type) pairs of a slot, in arrival order.
fn pairs(arrivals: &[Arrival]) -> Vec<(NodeId, LmId)> {
    let mut out: Vec<(NodeId, LmId)> = arrivals.iter().map(|a| (a.origin_node, a.lm_id)).collect();
    out.dedup();
    out
}

/// Uniform choice among the feasible nodes of each type.
pub struct RandomRouter {
    rng: ChaCha8Rng,
    feasible: BTreeMap<LmId, Vec<NodeId>>,
}

impl RandomRouter {
    pub fn new(rng: ChaCha8Rng) -> Self {
        Self {
            rng,
            feasible: BTreeMap::new(),
        }
    }
}

impl Router for RandomRouter {
    fn route(
        &mut self,
        ctx: &RouteContext<'_>,
        arrivals: &[Arrival],
    ) -> Result<RoutingMatrix, PolicyError> {
        let mut out = RoutingMatrix::new();
        for (origin, lm) in pairs(arrivals) {
            let nodes = self
                .feasible
                .entry(lm)
                .or_insert_with(|| feasible_list(ctx.config, lm));
            if nodes.is_empty() {
                continue;
            }
            let dest = nodes[self.rng.random_range(0..nodes.len())];
            out.insert((origin, lm), dest);
        }
        Ok(out)
    }
}

/// Round-robin over the feasible nodes of each type.
#[derive(Default)]
pub struct AverageRouter {
    next: BTreeMap<LmId, usize>,
}

impl Router for AverageRouter {
    fn route(
        &mut self,
        ctx: &RouteContext<'_>,
        arrivals: &[Arrival],
    ) -> Result<RoutingMatrix, PolicyError> {
        let mut out = RoutingMatrix::new();
        for (origin, lm) in pairs(arrivals) {
            let nodes = feasible_list(ctx.config, lm);
            if nodes.is_empty() {
                continue;
            }
            let i = self.next.entry(lm).or_default();
            out.insert((origin, lm), nodes[*i % nodes.len()]);
            *i += 1;
        }
        Ok(out)
    }
}

/// Every request stays on its arrival node.
pub struct LocalRouter;

impl Router for LocalRouter {
    fn route(
        &mut self,
        _ctx: &RouteContext<'_>,
        arrivals: &[Arrival],
    ) -> Result<RoutingMatrix, PolicyError> {
        Ok(pairs(arrivals).into_iter().map(|(o, lm)| ((o, lm), o)).collect())
    }
}

/// Greedy static placement in model-id order: each type takes one vGPU if
/// one is left, otherwise an even share of the cores if it can run on CPU.
/// Nothing looks at GPU hunger, so early ids claim the vGPUs first.
pub fn full_activation(node: &ServerSpec, lms: &[LmTypeSpec]) -> DeploymentAction {
    let mut ordered: Vec<&LmTypeSpec> = lms.iter().collect();
    ordered.sort_by_key(|l| l.id);
    let cpu_types = ordered.iter().filter(|l| l.cpu_feasible).count().max(1) as u32;
    let cpu_share = (node.cpu_cores / cpu_types).max(1);
    let mut action = DeploymentAction::new();
    for lm in ordered {
        for p in [Placement::OnGpu { vgpus: 1 }, Placement::OnCpu { cores: cpu_share }] {
            if !placement_allowed(node, lm, p) {
                continue;
            }
            let candidate = action.clone().with(lm.id, p);
            if check_headroom(node, &candidate, lms) {
                action = candidate;
                break;
            }
        }
    }
    action
}

/// Activates everything that fits once and never reconfigures.
#[derive(Default)]
pub struct FullActivationDeployer {
    plans: BTreeMap<NodeId, DeploymentAction>,
}

impl Deployer for FullActivationDeployer {
    fn deploy(
        &mut self,
        ctx: &DeployContext<'_>,
        node: &NodeSnapshot,
    ) -> Result<DeploymentAction, PolicyError> {
        Ok(self
            .plans
            .entry(node.id())
            .or_insert_with(|| full_activation(&node.spec, &ctx.config.lms))
            .clone())
    }
}

/// Uniform draw from the feasible action set every slot.
pub struct RandomDeployer {
    rng: ChaCha8Rng,
}

impl RandomDeployer {
    pub fn new(rng: ChaCha8Rng) -> Self {
        Self { rng }
    }
}

impl Deployer for RandomDeployer {
    fn deploy(
        &mut self,
        ctx: &DeployContext<'_>,
        node: &NodeSnapshot,
    ) -> Result<DeploymentAction, PolicyError> {
        let actions = dpp_feasible_actions(node, &ctx.config.lms, &ctx.config.dpp);
        if actions.is_empty() {
            return Ok(node.committed.clone());
        }
        Ok(actions[self.rng.random_range(0..actions.len())].clone())
    }
}
