//! Turning a node's role set into concrete placements. Shared by the planner
//! (to estimate capacity) and the scripted deployer (to act).

use std::collections::{BTreeMap, BTreeSet};

use crate::latency::per_prompt_seconds;
use crate::model::{
    check_headroom, placement_allowed, DeploymentAction, LmId, LmTypeSpec, Placement, ServerSpec,
    VGPUS_PER_GPU,
};

/// Types that should get GPU time before anything else.
pub fn gpu_first(lm: &LmTypeSpec) -> bool {
    !lm.cpu_feasible || lm.modality.is_image()
}

/// Could `lm` run on `node` at all.
pub fn can_host(node: &ServerSpec, lm: &LmTypeSpec) -> bool {
    placement_allowed(node, lm, Placement::OnGpu { vgpus: 1 })
        || placement_allowed(node, lm, Placement::OnCpu { cores: 1 })
}

/// Role types ordered by priority: GPU hunger, then backlog, then id.
pub fn priority_order<'a>(
    node: &ServerSpec,
    roles: &BTreeSet<LmId>,
    backlog: &BTreeMap<LmId, u64>,
    lms: &'a [LmTypeSpec],
) -> Vec<&'a LmTypeSpec> {
    let mut order: Vec<&LmTypeSpec> = lms
        .iter()
        .filter(|l| roles.contains(&l.id) && can_host(node, l))
        .collect();
    order.sort_by(|a, b| {
        b.gpu_hunger()
            .total_cmp(&a.gpu_hunger())
            .then_with(|| {
                let ba = backlog.get(&a.id).copied().unwrap_or(0);
                let bb = backlog.get(&b.id).copied().unwrap_or(0);
                bb.cmp(&ba)
            })
            .then(a.id.cmp(&b.id))
    });
    order
}

fn take_gpu(
    node: &ServerSpec,
    lm: &LmTypeSpec,
    units: &mut u32,
    vram: &mut f64,
    gpu: &mut Vec<(LmId, u32)>,
) -> bool {
    if *units >= 1
        && *vram + 1e-9 >= lm.min_vram_gb
        && placement_allowed(node, lm, Placement::OnGpu { vgpus: 1 })
    {
        *units -= 1;
        *vram -= lm.min_vram_gb;
        gpu.push((lm.id, 1));
        true
    } else {
        false
    }
}

/// Placement for an ordered list of types, ignoring RAM.
fn build(node: &ServerSpec, order: &[&LmTypeSpec]) -> DeploymentAction {
    let mut units = if node.gpu_capable { node.vgpu_units } else { 0 };
    let mut vram = node.vram_gb;
    let mut gpu: Vec<(LmId, u32)> = Vec::new();
    let mut cpu: Vec<&LmTypeSpec> = Vec::new();
    for lm in order.iter().filter(|l| gpu_first(l)) {
        if !take_gpu(node, lm, &mut units, &mut vram, &mut gpu) && lm.cpu_feasible {
            cpu.push(lm);
        }
    }
    // Second vGPU for GPU-first types before text types get any.
    for (_, u) in gpu.iter_mut() {
        if units >= 1 && *u < VGPUS_PER_GPU {
            *u += 1;
            units -= 1;
        }
    }
    for lm in order.iter().filter(|l| !gpu_first(l)) {
        if !take_gpu(node, lm, &mut units, &mut vram, &mut gpu) {
            cpu.push(lm);
        }
    }
    for (_, u) in gpu.iter_mut() {
        while units >= 1 && *u < VGPUS_PER_GPU {
            *u += 1;
            units -= 1;
        }
    }
    let mut action = DeploymentAction::new();
    for (lm, u) in gpu {
        action.set(lm, Placement::OnGpu { vgpus: u });
    }
    for (lm, cores) in split_cores(node.cpu_cores, &cpu) {
        action.set(lm, Placement::OnCpu { cores });
    }
    action
}

/// Cores shared in proportion to per-prompt CPU work, at least one each.
fn split_cores(cores: u32, lms: &[&LmTypeSpec]) -> Vec<(LmId, u32)> {
    let lms: Vec<&&LmTypeSpec> = lms.iter().take(cores as usize).collect();
    if lms.is_empty() {
        return Vec::new();
    }
    let weight: f64 = lms
        .iter()
        .map(|l| l.latency.cpu_base_seconds_per_prompt)
        .sum();
    let spare = cores - lms.len() as u32;
    let mut out: Vec<(LmId, u32)> = lms
        .iter()
        .map(|l| {
            let share = spare as f64 * l.latency.cpu_base_seconds_per_prompt / weight;
            (l.id, 1 + share.floor() as u32)
        })
        .collect();
    let used: u32 = out.iter().map(|(_, c)| c).sum();
    // Leftover from rounding goes to the heaviest type.
    if let Some(heaviest) = (0..lms.len()).max_by(|a, b| {
        lms[*a]
            .latency
            .cpu_base_seconds_per_prompt
            .total_cmp(&lms[*b].latency.cpu_base_seconds_per_prompt)
            .then(b.cmp(a))
    }) {
        out[heaviest].1 += cores - used;
    }
    out
}

/// Placement that serves as many role types as fit, in priority order,
/// using the whole node.
pub fn role_allocation(
    node: &ServerSpec,
    roles: &BTreeSet<LmId>,
    backlog: &BTreeMap<LmId, u64>,
    lms: &[LmTypeSpec],
) -> DeploymentAction {
    let mut order = priority_order(node, roles, backlog, lms);
    loop {
        let action = build(node, &order);
        if check_headroom(node, &action, lms) || order.is_empty() {
            return action;
        }
        order.pop();
    }
}

/// Prompts per second of `lm` under `placement`.
pub fn service_rate(lm: &LmTypeSpec, placement: Placement) -> f64 {
    placement
        .mode()
        .and_then(|m| per_prompt_seconds(lm, m).ok())
        .map_or(0.0, |s| 1.0 / s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::SimConfig;
    use crate::model::NodeId;

    fn roles(ids: &[u32]) -> BTreeSet<LmId> {
        ids.iter().map(|i| LmId(*i)).collect()
    }

    #[test]
    fn lone_gpu_type_with_deep_backlog_takes_both_vgpus() {
        let c = SimConfig::paper_default();
        let node = c.server(NodeId(3)).unwrap();
        let backlog = [(LmId(4), 20)].into();
        let a = role_allocation(node, &roles(&[4]), &backlog, &c.lms);
        assert_eq!(a.get(LmId(4)), Placement::OnGpu { vgpus: 2 });
    }

    #[test]
    fn image_types_get_gpu_before_text() {
        let c = SimConfig::paper_default();
        let node = c.server(NodeId(3)).unwrap();
        let a = role_allocation(node, &roles(&[1, 2, 3, 4]), &BTreeMap::new(), &c.lms);
        assert_eq!(a.get(LmId(4)), Placement::OnGpu { vgpus: 1 });
        assert_eq!(a.get(LmId(3)), Placement::OnGpu { vgpus: 1 });
        assert!(!a.get(LmId(1)).is_gpu() && a.get(LmId(1)).is_active());
        assert!(!a.get(LmId(2)).is_gpu() && a.get(LmId(2)).is_active());
        assert!(check_headroom(node, &a, &c.lms));
        let cores: u32 = a
            .active()
            .filter_map(|(_, p)| match p {
                Placement::OnCpu { cores } => Some(cores),
                _ => None,
            })
            .sum();
        assert_eq!(cores, node.cpu_cores);
    }

    #[test]
    fn cpu_node_splits_cores_by_work() {
        let c = SimConfig::paper_default();
        let node = c.server(NodeId(2)).unwrap();
        let a = role_allocation(node, &roles(&[1, 2, 4]), &BTreeMap::new(), &c.lms);
        assert_eq!(a.get(LmId(4)), Placement::Off);
        let (Placement::OnCpu { cores: c1 }, Placement::OnCpu { cores: c2 }) =
            (a.get(LmId(1)), a.get(LmId(2)))
        else {
            panic!("text types should run on CPU: {a:?}");
        };
        assert!(c2 > c1);
        assert_eq!(c1 + c2, node.cpu_cores);
    }
}
