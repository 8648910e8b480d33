//! Seeded request arrivals and CSV trace replay.
//!
//! Every slot draws from its own ChaCha stream keyed by `(seed, slot)`, so the
//! arrivals of a slot do not depend on how many random numbers earlier slots
//! or the policies consumed.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{Read, Write};
use std::path::Path;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::{SimConfig, WorkloadSpec, MAX_PROMPTS};
use crate::error::TraceError;
use crate::model::{LmId, NodeId};

/// A request as generated, before the engine assigns it an id.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Arrival {
    pub slot: u64,
    pub origin_node: NodeId,
    pub lm_id: LmId,
    pub k_prompts: u32,
}

/// Arrivals of one slot, at most one per (origin node, model type) pair.
pub fn generate_slot_arrivals(
    spec: &WorkloadSpec,
    seed: u64,
    slot: u64,
    epoch: u64,
    nodes: &[NodeId],
    lms: &[LmId],
) -> Vec<Arrival> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(slot);
    let k_dist = WeightedIndex::new(&spec.k_weights).ok();
    let mut out = Vec::new();
    for &node in nodes {
        for &lm in lms {
            // Both draws happen unconditionally so the stream layout is fixed.
            let u: f64 = rng.random();
            let k = k_dist.as_ref().map_or(0, |d| d.sample(&mut rng)) as u32;
            if u < spec.presence_probability(lm, node, epoch) && k > 0 {
                out.push(Arrival {
                    slot,
                    origin_node: node,
                    lm_id: lm,
                    k_prompts: k.min(MAX_PROMPTS),
                });
            }
        }
    }
    out
}

/// Where a simulation gets its arrivals from.
#[derive(Debug, Clone)]
pub enum WorkloadSource {
    Generated {
        spec: WorkloadSpec,
        seed: u64,
        nodes: Vec<NodeId>,
        lms: Vec<LmId>,
        slots_per_epoch: u64,
    },
    Trace(Vec<Vec<Arrival>>),
}

impl WorkloadSource {
    pub fn generated(config: &SimConfig, seed: u64) -> Self {
        WorkloadSource::Generated {
            spec: config.workload.clone(),
            seed,
            nodes: config.worker_ids(),
            lms: config.lm_ids(),
            slots_per_epoch: config.slots_per_epoch as u64,
        }
    }

    /// Uses the configured trace if there is one, otherwise seeded generation.
    pub fn from_config(config: &SimConfig, seed: u64) -> Result<Self, TraceError> {
        match &config.workload.trace {
            Some(path) => Ok(WorkloadSource::Trace(load_trace(path, config)?)),
            None => Ok(Self::generated(config, seed)),
        }
    }

    pub fn arrivals(&self, slot: u64) -> Vec<Arrival> {
        match self {
            WorkloadSource::Generated {
                spec,
                seed,
                nodes,
                lms,
                slots_per_epoch,
            } => generate_slot_arrivals(spec, *seed, slot, slot / slots_per_epoch, nodes, lms),
            WorkloadSource::Trace(slots) => {
                slots.get(slot as usize).cloned().unwrap_or_default()
            }
        }
    }
}

/// Expected work arriving per second during `epoch`, in seconds of
/// single-vGPU service.
pub fn offered_gpu_work(config: &SimConfig, epoch: u64) -> f64 {
    let w = &config.workload;
    let mut per_slot = 0.0;
    for node in config.worker_ids() {
        for lm in &config.lms {
            per_slot += w.presence_probability(lm.id, node, epoch)
                * w.mean_k()
                * lm.latency.gpu_base_seconds_per_prompt;
        }
    }
    per_slot / config.slot_seconds
}

/// Service capacity used for load calibration: every vGPU unit of the
/// cluster serving one-vGPU work back to back. CPU capacity is left out.
pub fn gpu_capacity(config: &SimConfig) -> f64 {
    config
        .servers
        .iter()
        .filter(|s| s.hosts_inference)
        .map(|s| s.vgpu_units as f64)
        .sum()
}

/// Offered work over capacity.
pub fn load_ratio(config: &SimConfig, epoch: u64) -> f64 {
    let cap = gpu_capacity(config);
    if cap <= 0.0 {
        return f64::INFINITY;
    }
    offered_gpu_work(config, epoch) / cap
}

/// Copy of `config` whose uniform presence gives the requested load ratio.
/// Per-pair presence rules and drift are dropped.
pub fn with_load(config: &SimConfig, ratio: f64) -> SimConfig {
    let mut c = config.clone();
    c.workload.presence.clear();
    c.workload.drift.clear();
    c.workload.default_presence = 1.0;
    let full = load_ratio(&c, 0);
    c.workload.default_presence = if full > 0.0 {
        (ratio / full).clamp(0.0, 1.0)
    } else {
        0.0
    };
    c
}

#[derive(Debug, Serialize, Deserialize)]
struct TraceRow {
    slot: u64,
    origin_node: u32,
    lm_id: u32,
    k_prompts: u32,
}

/// Writes arrivals as a CSV trace with a header row.
pub fn write_trace<W: Write>(out: W, arrivals: &[Arrival]) -> std::io::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for a in arrivals {
        w.serialize(TraceRow {
            slot: a.slot,
            origin_node: a.origin_node.0,
            lm_id: a.lm_id.0,
            k_prompts: a.k_prompts,
        })
        .map_err(std::io::Error::other)?;
    }
    w.flush()
}

/// Parses a CSV trace into per-slot arrival lists. Slots with no rows are
/// empty; the list ends at the last slot that has a row.
pub fn parse_trace<R: Read>(input: R, config: &SimConfig) -> Result<Vec<Vec<Arrival>>, TraceError> {
    let nodes: BTreeSet<NodeId> = config.worker_ids().into_iter().collect();
    let lms: BTreeSet<LmId> = config.lm_ids().into_iter().collect();
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(input);
    let headers = reader
        .headers()
        .map_err(|e| TraceError::Malformed {
            line: 1,
            message: e.to_string(),
        })?
        .clone();
    let mut by_slot: BTreeMap<u64, Vec<Arrival>> = BTreeMap::new();
    let mut seen = BTreeSet::new();
    if headers.is_empty() {
        return Ok(Vec::new());
    }
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|e| TraceError::Malformed {
            line: e.position().map_or(i + 2, |p| p.line() as usize),
            message: e.to_string(),
        })?;
        let line = record.position().map_or(i + 2, |p| p.line() as usize);
        let bad = |message: String| TraceError::Malformed { line, message };
        let row: TraceRow = record
            .deserialize(Some(&headers))
            .map_err(|e| bad(e.to_string()))?;
        if !lms.contains(&LmId(row.lm_id)) {
            return Err(bad(format!("unknown model id {}", row.lm_id)));
        }
        if !nodes.contains(&NodeId(row.origin_node)) {
            return Err(bad(format!("unknown origin node {}", row.origin_node)));
        }
        if row.k_prompts == 0 || row.k_prompts > MAX_PROMPTS {
            return Err(bad(format!("k_prompts {} outside 1..=8", row.k_prompts)));
        }
        if !seen.insert((row.slot, row.origin_node, row.lm_id)) {
            return Err(bad("duplicate (slot, origin_node, lm_id)".to_string()));
        }
        by_slot.entry(row.slot).or_default().push(Arrival {
            slot: row.slot,
            origin_node: NodeId(row.origin_node),
            lm_id: LmId(row.lm_id),
            k_prompts: row.k_prompts,
        });
    }
    let Some(&last) = by_slot.keys().next_back() else {
        return Ok(Vec::new());
    };
    let mut slots = vec![Vec::new(); last as usize + 1];
    for (slot, mut arrivals) in by_slot {
        // Canonical order matches the generator: config node order, then type.
        let node_pos = |n: NodeId| config.servers.iter().position(|s| s.id == n);
        let lm_pos = |l: LmId| config.lm_index(l);
        arrivals.sort_by_key(|a| (node_pos(a.origin_node), lm_pos(a.lm_id)));
        slots[slot as usize] = arrivals;
    }
    Ok(slots)
}

pub fn load_trace(path: &Path, config: &SimConfig) -> Result<Vec<Vec<Arrival>>, TraceError> {
    let file = std::fs::File::open(path).map_err(|source| TraceError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_trace(file, config)
}
