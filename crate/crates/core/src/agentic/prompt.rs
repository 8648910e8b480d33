//! Text rendered for completion backends.

use std::fmt::Write;

use crate::config::{macro_policy_doc, SimConfig};
use crate::engine::NodeSnapshot;
use crate::metrics::EpochTelemetry;
use crate::model::{MacroPolicy, NodeId};

use super::memory::HistoryCase;

fn ratio(x: Option<f64>) -> String {
    x.map_or_else(|| "n/a".to_string(), |v| format!("{v:.2}"))
}

fn secs(x: Option<f64>) -> String {
    x.map_or_else(|| "n/a".to_string(), |v| format!("{v:.1} s"))
}

/// One-paragraph digest of an epoch. Latencies carry one decimal and ratios
/// two, with `n/a` where a type had nothing to report.
pub fn summarize_epoch(t: &EpochTelemetry, policy: Option<&MacroPolicy>, config: &SimConfig) -> String {
    let lms = config.lm_ids();
    let mut s = format!("Epoch {}: ", t.epoch);
    if t.no_data {
        s.push_str("no requests finished. ");
    } else {
        let names: Vec<String> = lms.iter().map(|l| config.lm_name(*l)).collect();
        let lat: Vec<String> = lms
            .iter()
            .map(|l| secs(t.per_lm.get(l).and_then(|x| x.success_only_mean_latency_s)))
            .collect();
        let rho: Vec<String> = lms.iter().map(|l| ratio(t.success_ratio(*l))).collect();
        let _ = write!(
            s,
            "types {}; success-only mean latencies {}; success ratios {}; global mean latency {}; normalized Jain fairness {:.2}; off-role ratio {:.2}; objective {:.2}. ",
            names.join(", "),
            lat.join(", "),
            rho.join(", "),
            secs(t.global_mean_latency_s),
            t.f_norm,
            t.off_role_ratio,
            t.objective,
        );
    }
    if let Some(p) = policy {
        s.push_str("Allocation: ");
        let rows: Vec<String> = p
            .routing_probs
            .iter()
            .map(|(lm, row)| {
                let cells: Vec<String> = row
                    .iter()
                    .filter(|(_, v)| **v > 0.0)
                    .map(|(n, v)| format!("{} {v:.2}", config.node_name(*n)))
                    .collect();
                format!("{} -> {}", config.lm_name(*lm), cells.join(", "))
            })
            .collect();
        s.push_str(&rows.join("; "));
        let roles: Vec<String> = p
            .node_roles
            .iter()
            .filter(|(_, r)| !r.is_empty())
            .map(|(n, r)| {
                let names: Vec<String> = r.iter().map(|l| config.lm_name(*l)).collect();
                format!("{} {{{}}}", config.node_name(*n), names.join(", "))
            })
            .collect();
        if !roles.is_empty() {
            let _ = write!(s, ". Roles: {}", roles.join(", "));
        }
        s.push('.');
    }
    s.trim_end().to_string()
}

fn cluster_description(config: &SimConfig) -> String {
    let mut s = String::new();
    for n in config.servers.iter().filter(|n| n.hosts_inference) {
        let _ = writeln!(
            s,
            "- {}: {} cores, {:.0} GB RAM, {} vGPU units, {:.0} GB vRAM",
            n.name,
            n.cpu_cores,
            n.ram_gb,
            if n.gpu_capable { n.vgpu_units } else { 0 },
            n.vram_gb
        );
    }
    for lm in &config.lms {
        let nodes: Vec<String> = config
            .feasible(lm.id)
            .into_iter()
            .map(|n| config.node_name(n))
            .collect();
        let _ = writeln!(
            s,
            "- {} ({:?}): servable on {}",
            lm.name,
            lm.modality,
            nodes.join(", ")
        );
    }
    s
}

/// Request for the next macro policy.
pub fn planner_prompt(
    config: &SimConfig,
    epoch: u64,
    last: Option<(&MacroPolicy, &EpochTelemetry)>,
    cases: &[&HistoryCase],
    proposal: &MacroPolicy,
) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "You plan request routing for an edge cluster serving {} model types. Minimize {:.2} x normalized latency + {:.2} x (1 - normalized fairness), where latency is measured against a {:.0} s deadline and fairness is Jain's index over per-type success ratios.",
        config.lms.len(),
        config.lambda_weight,
        1.0 - config.lambda_weight,
        config.tau_seconds
    );
    let _ = writeln!(s, "\nCluster:\n{}", cluster_description(config));
    match last {
        Some((p, t)) => {
            let _ = writeln!(s, "Last epoch:\n{}\n", summarize_epoch(t, Some(p), config));
        }
        None => s.push_str("No epoch has run yet.\n\n"),
    }
    if !cases.is_empty() {
        s.push_str("Reference epochs (best, worst, most similar):\n");
        for c in cases {
            let _ = writeln!(s, "- {}", summarize_epoch(&c.telemetry, Some(&c.policy), config));
        }
        s.push('\n');
    }
    let doc = macro_policy_doc(proposal, config);
    let _ = writeln!(
        s,
        "Heuristic proposal for epoch {epoch}:\n{}\n",
        serde_json::to_string(&doc).unwrap_or_default()
    );
    s.push_str(
        "Reply with a single JSON object with keys \"routing_probabilities\" (model -> node -> probability, each row summing to 1 over servable nodes) and \"node_role_intent\" (node -> list of models). No other text.",
    );
    s
}

/// Request for one node's placement.
pub fn deployer_prompt(
    config: &SimConfig,
    node: &NodeSnapshot,
    peers: &[NodeId],
    proposal: &str,
    policy: Option<&MacroPolicy>,
) -> String {
    let spec = &node.spec;
    let mut s = format!(
        "You control model replicas on {} ({} cores, {:.0} GB RAM, {} vGPU units, {:.0} GB vRAM) at t={:.0} s.\n",
        spec.name,
        spec.cpu_cores,
        spec.ram_gb,
        if spec.gpu_capable { spec.vgpu_units } else { 0 },
        spec.vram_gb,
        node.time
    );
    for lm in &config.lms {
        let role = policy.is_some_and(|p| p.has_role(spec.id, lm.id));
        let state = node
            .replicas
            .get(&lm.id)
            .map_or("off".to_string(), |r| format!("{} {}", r.mode.placement().label(), r.phase.label()));
        let _ = writeln!(
            s,
            "- {}: backlog {} prompts, replica {}, role {}",
            lm.name,
            node.backlog_of(lm.id),
            state,
            if role { "yes" } else { "no" }
        );
    }
    if !peers.is_empty() {
        let names: Vec<String> = peers.iter().map(|n| config.node_name(*n)).collect();
        let _ = writeln!(s, "Other nodes holding the same roles: {}", names.join(", "));
    }
    let _ = writeln!(s, "Heuristic proposal: {proposal}");
    s.push_str(
        "Reply with one JSON object mapping every model to \"off\", \"cpu:<cores>\" or \"gpu:<vgpus>\". No other text.",
    );
    s
}
