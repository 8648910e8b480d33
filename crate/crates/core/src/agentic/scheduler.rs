//! Per-slot router that samples the macro policy and steers away from
//! overloaded nodes.

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::PolicyError;
use crate::model::{LmId, NodeId};
use crate::policy::{RouteContext, Router, RoutingMatrix};
use crate::workload::Arrival;

pub struct PromptScheduler {
    rng: ChaCha8Rng,
    notes: Vec<String>,
}

impl PromptScheduler {
    pub fn new(rng: ChaCha8Rng) -> Self {
        Self {
            rng,
            notes: Vec::new(),
        }
    }
}

fn sample(row: &BTreeMap<NodeId, f64>, u: f64) -> Option<NodeId> {
    let total: f64 = row.values().filter(|v| **v > 0.0).sum();
    if total <= 0.0 {
        return None;
    }
    let mut acc = 0.0;
    let mut last = None;
    for (n, p) in row.iter().filter(|(_, p)| **p > 0.0) {
        acc += p / total;
        last = Some(*n);
        if u < acc {
            return last;
        }
    }
    last
}

impl Router for PromptScheduler {
    fn route(
        &mut self,
        ctx: &RouteContext<'_>,
        arrivals: &[Arrival],
    ) -> Result<RoutingMatrix, PolicyError> {
        let factor = ctx.config.agents.overload_factor;
        // Backlog as this slot's earlier decisions will leave it.
        let mut backlog: BTreeMap<(NodeId, LmId), f64> = BTreeMap::new();
        let mut out = RoutingMatrix::new();
        let mut rerouted = 0usize;
        for a in arrivals {
            let u: f64 = self.rng.random();
            let feasible = ctx.config.feasible(a.lm_id);
            if feasible.is_empty() {
                continue;
            }
            let uniform: BTreeMap<NodeId, f64> = feasible.iter().map(|n| (*n, 1.0)).collect();
            let row = ctx
                .macro_policy
                .and_then(|p| p.routing_probs.get(&a.lm_id))
                .filter(|r| r.values().any(|v| *v > 0.0))
                .unwrap_or(&uniform);
            let Some(mut dest) = sample(row, u) else {
                continue;
            };
            let mut load = |n: NodeId| -> f64 {
                *backlog
                    .entry((n, a.lm_id))
                    .or_insert_with(|| ctx.snapshot.backlog(n, a.lm_id) as f64)
            };
            let mean = feasible.iter().map(|n| load(*n)).sum::<f64>() / feasible.len() as f64;
            let here = load(dest);
            if here > 0.0 && here > factor * mean {
                let role_nodes: BTreeSet<NodeId> = ctx
                    .macro_policy
                    .map(|p| {
                        feasible
                            .iter()
                            .copied()
                            .filter(|n| p.has_role(*n, a.lm_id))
                            .collect()
                    })
                    .unwrap_or_default();
                let pool = if role_nodes.is_empty() { &feasible } else { &role_nodes };
                let alt = pool
                    .iter()
                    .copied()
                    .min_by(|x, y| load(*x).total_cmp(&load(*y)).then(x.cmp(y)));
                if let Some(alt) = alt {
                    if load(alt) < here {
                        dest = alt;
                        rerouted += 1;
                    }
                }
            }
            *backlog.entry((dest, a.lm_id)).or_default() += a.k_prompts as f64;
            out.insert((a.origin_node, a.lm_id), dest);
        }
        if rerouted > 0 {
            self.notes
                .push(format!("slot {}: {rerouted} requests steered off overloaded nodes", ctx.slot));
        }
        Ok(out)
    }

    fn take_notes(&mut self) -> Vec<String> {
        std::mem::take(&mut self.notes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sampling_follows_cumulative_mass() {
        let row: BTreeMap<NodeId, f64> = [(NodeId(3), 0.25), (NodeId(4), 0.0), (NodeId(5), 0.75)].into();
        assert_eq!(sample(&row, 0.0), Some(NodeId(3)));
        assert_eq!(sample(&row, 0.2499), Some(NodeId(3)));
        assert_eq!(sample(&row, 0.25), Some(NodeId(5)));
        assert_eq!(sample(&row, 0.999_999), Some(NodeId(5)));
        assert_eq!(sample(&BTreeMap::new(), 0.5), None);
    }
}
