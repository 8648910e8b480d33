//! Per-node deployment agent driven by the node's role intent.

use std::collections::{BTreeMap, BTreeSet};

use crate::config::{AgentParams, SimConfig};
use crate::engine::NodeSnapshot;
use crate::error::PolicyError;
use crate::model::{
    check_headroom, placement_allowed, DeploymentAction, LmId, LmTypeSpec, MacroPolicy, NodeId,
    Placement,
};
use crate::policy::{DeployContext, Deployer};

use super::alloc::{gpu_first, role_allocation};
use super::backend::CompletionBackend;
use super::prompt::deployer_prompt;

fn fits(node: &NodeSnapshot, action: &DeploymentAction, lms: &[LmTypeSpec]) -> bool {
    check_headroom(&node.spec, action, lms)
}

/// The scripted placement rule for one node.
///
/// Role types are placed first (GPU for GPU-hungry types, CPU for text types
/// once vGPUs run out) and keep their running placement unless a GPU type
/// with a deep backlog can grow. Other types stay up only while they still
/// have queued work and spare resources.
pub fn scripted_deployment(
    node: &NodeSnapshot,
    roles: &BTreeSet<LmId>,
    lms: &[LmTypeSpec],
    params: &AgentParams,
) -> DeploymentAction {
    let target = role_allocation(&node.spec, roles, &node.backlog, lms);
    let deep = params.deep_backlog_prompts as u64;
    let mut action = target.clone();
    for (lm, want) in target.active() {
        let cur = node.committed.get(lm);
        if !cur.is_active() || cur.is_gpu() != want.is_gpu() {
            continue;
        }
        let grow = matches!(
            (cur, want),
            (Placement::OnGpu { vgpus: a }, Placement::OnGpu { vgpus: b }) if a < b
        ) && node.backlog_of(lm) > deep;
        if !grow {
            action.set(lm, cur);
        }
    }
    if !fits(node, &action, lms) {
        action = target;
    }

    let mut extras: Vec<&LmTypeSpec> = lms
        .iter()
        .filter(|l| !roles.contains(&l.id) && node.backlog_of(l.id) > 0)
        .collect();
    extras.sort_by(|a, b| node.backlog_of(b.id).cmp(&node.backlog_of(a.id)).then(a.id.cmp(&b.id)));
    for lm in extras {
        let cur = node.committed.get(lm.id);
        let mut options = Vec::new();
        if cur.is_active() {
            options.push(cur);
        } else {
            let used = crate::model::action_usage(&action, lms);
            let free_cores = node.spec.cpu_cores.saturating_sub(used.cores);
            if gpu_first(lm) {
                options.push(Placement::OnGpu { vgpus: 1 });
            }
            if free_cores > 0 {
                options.push(Placement::OnCpu {
                    cores: free_cores.min(4),
                });
            }
            if !gpu_first(lm) {
                options.push(Placement::OnGpu { vgpus: 1 });
            }
        }
        for p in options {
            if !placement_allowed(&node.spec, lm, p) {
                continue;
            }
            let trial = action.clone().with(lm.id, p);
            if fits(node, &trial, lms) {
                action = trial;
                break;
            }
        }
    }
    action
}

fn parse_placements(
    text: &str,
    config: &SimConfig,
    node: &NodeSnapshot,
) -> Result<DeploymentAction, String> {
    let raw: BTreeMap<String, String> =
        serde_json::from_str(text.trim()).map_err(|e| format!("not a placement object: {e}"))?;
    let mut action = DeploymentAction::new();
    for (name, label) in raw {
        let lm = config
            .lm_by_name(&name)
            .ok_or_else(|| format!("unknown model {name:?}"))?;
        let p = Placement::parse_label(&label)
            .ok_or_else(|| format!("bad placement {label:?} for {name}"))?;
        let spec = config.lm(lm).expect("resolved id");
        if p.is_active() && !placement_allowed(&node.spec, spec, p) {
            return Err(format!("{name} cannot run as {label} here"));
        }
        action.set(lm, p);
    }
    if !fits(node, &action, &config.lms) {
        return Err("placement exceeds node capacity".into());
    }
    Ok(action)
}

pub struct AgenticDeployer {
    backend: Option<Box<dyn CompletionBackend>>,
    notes: Vec<String>,
}

impl AgenticDeployer {
    pub fn new(backend: Option<Box<dyn CompletionBackend>>) -> Self {
        Self {
            backend,
            notes: Vec::new(),
        }
    }
}

fn peers(policy: Option<&MacroPolicy>, node: NodeId) -> Vec<NodeId> {
    let Some(p) = policy else {
        return Vec::new();
    };
    let mine = p.roles(node);
    p.node_roles
        .iter()
        .filter(|(n, r)| **n != node && !r.is_disjoint(&mine))
        .map(|(n, _)| *n)
        .collect()
}

impl Deployer for AgenticDeployer {
    fn deploy(
        &mut self,
        ctx: &DeployContext<'_>,
        node: &NodeSnapshot,
    ) -> Result<DeploymentAction, PolicyError> {
        let roles = ctx
            .macro_policy
            .map(|p| p.roles(node.id()))
            .unwrap_or_default();
        let proposal = scripted_deployment(node, &roles, &ctx.config.lms, &ctx.config.agents);
        let Some(b) = self.backend.as_mut() else {
            return Ok(proposal);
        };
        let prompt = deployer_prompt(
            ctx.config,
            node,
            &peers(ctx.macro_policy, node.id()),
            &proposal.label(),
            ctx.macro_policy,
        );
        let reply = b.complete(&prompt).map_err(|e| e.to_string());
        match reply.and_then(|t| parse_placements(&t, ctx.config, node)) {
            Ok(a) => Ok(a),
            Err(e) => {
                self.notes.push(format!(
                    "{}: deployer output rejected, using scripted placement: {e}",
                    node.spec.name
                ));
                Ok(proposal)
            }
        }
    }

    fn take_notes(&mut self) -> Vec<String> {
        std::mem::take(&mut self.notes)
    }
}
