//! Strict checks on macro policies coming from a planner backend.

use std::collections::BTreeMap;

use crate::config::{resolve_macro_policy, routing_violations, MacroPolicyDoc, SimConfig};
use crate::error::Violation;
use crate::model::{check_headroom, placement_allowed, DeploymentAction, LmTypeSpec, MacroPolicy, Placement, ServerSpec};

/// True iff every type in `roles` can be active on `node` at once with the
/// smallest allocation (one core or one vGPU each).
pub fn roles_deployable(node: &ServerSpec, roles: &[&LmTypeSpec], lms: &[LmTypeSpec]) -> bool {
    let n = roles.len();
    if n > 16 {
        return false;
    }
    (0u32..1 << n).any(|mask| {
        let mut action = DeploymentAction::new();
        for (i, lm) in roles.iter().enumerate() {
            let p = if mask & (1 << i) != 0 {
                Placement::OnGpu { vgpus: 1 }
            } else {
                Placement::OnCpu { cores: 1 }
            };
            if !placement_allowed(node, lm, p) {
                return false;
            }
            action.set(lm.id, p);
        }
        check_headroom(node, &action, lms)
    })
}

/// Problems with the role sets of a policy.
pub fn role_violations(policy: &MacroPolicy, config: &SimConfig) -> Vec<Violation> {
    let mut out = Vec::new();
    for (node_id, roles) in &policy.node_roles {
        let field = format!("node_role_intent.{}", config.node_name(*node_id));
        let Some(node) = config.server(*node_id) else {
            out.push(Violation::new(field, "unknown node"));
            continue;
        };
        if !node.hosts_inference && !roles.is_empty() {
            out.push(Violation::new(field, "node does not host models"));
            continue;
        }
        let mut specs = Vec::new();
        for lm in roles {
            match config.lm(*lm) {
                Some(spec) => {
                    if !config.feasible(*lm).contains(node_id) {
                        out.push(Violation::new(
                            field.clone(),
                            format!("{} can never be served on this node", spec.name),
                        ));
                    }
                    specs.push(spec);
                }
                None => out.push(Violation::new(field.clone(), format!("unknown model type {lm}"))),
            }
        }
        if !roles_deployable(node, &specs, &config.lms) {
            out.push(Violation::new(
                field,
                "role set exceeds node capacity even at minimum allocations",
            ));
        }
    }
    out
}

/// Routing and role problems of a resolved policy; empty iff acceptable.
pub fn macro_policy_violations(policy: &MacroPolicy, config: &SimConfig) -> Vec<Violation> {
    let mut v = routing_violations(policy, config);
    v.extend(role_violations(policy, config));
    v
}

/// Uniform routing over each type's feasible nodes, with no role intent.
pub fn uniform_policy(config: &SimConfig) -> MacroPolicy {
    let mut routing_probs = BTreeMap::new();
    for lm in &config.lms {
        let nodes = config.feasible(lm.id);
        if nodes.is_empty() {
            continue;
        }
        let p = 1.0 / nodes.len() as f64;
        routing_probs.insert(lm.id, nodes.into_iter().map(|n| (n, p)).collect());
    }
    MacroPolicy {
        routing_probs,
        node_roles: BTreeMap::new(),
    }
}

/// Parses a planner response (one JSON object, nothing else) into a policy.
pub fn parse_macro_policy(text: &str, config: &SimConfig) -> Result<MacroPolicy, Vec<Violation>> {
    let doc: MacroPolicyDoc = serde_json::from_str(text.trim())
        .map_err(|e| vec![Violation::new("response", format!("not a macro policy object: {e}"))])?;
    resolve_macro_policy(&doc, config)
}

/// Result of validating a candidate policy.
#[derive(Debug, Clone, PartialEq)]
pub struct Validation {
    pub policy: MacroPolicy,
    pub accepted: bool,
    pub reasons: Vec<String>,
}

impl Validation {
    fn fallback(config: &SimConfig, reasons: Vec<Violation>) -> Self {
        Self {
            policy: uniform_policy(config),
            accepted: false,
            reasons: reasons.iter().map(ToString::to_string).collect(),
        }
    }
}

/// Accepts a structurally valid policy unchanged; anything else becomes the
/// uniform baseline together with the reasons.
pub fn validate_policy(policy: MacroPolicy, config: &SimConfig) -> Validation {
    let v = macro_policy_violations(&policy, config);
    if v.is_empty() {
        Validation {
            policy,
            accepted: true,
            reasons: Vec::new(),
        }
    } else {
        Validation::fallback(config, v)
    }
}

/// Parses and validates raw planner output.
pub fn validate_macro_policy(text: &str, config: &SimConfig) -> Validation {
    match parse_macro_policy(text, config) {
        Ok(p) => validate_policy(p, config),
        Err(v) => Validation::fallback(config, v),
    }
}
