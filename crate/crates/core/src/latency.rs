//! Parametric latency models: inference time under an allocation, link
//! transfer time, and replica start/stop delays.

use std::collections::BTreeMap;

use crate::config::{LinkParams, SimConfig};
use crate::error::LatencyError;
use crate::model::{LmTypeSpec, NodeId, PlacementMode, TopologyLink};

/// Seconds to run one prompt of `lm` under `mode`.
///
/// `base / units^exponent`, so doubling the allocation speeds things up by
/// `2^exponent`, never more than linearly.
pub fn per_prompt_seconds(lm: &LmTypeSpec, mode: PlacementMode) -> Result<f64, LatencyError> {
    let units = mode.units();
    if units == 0 {
        return Err(LatencyError::ZeroAllocation);
    }
    let (base, exponent) = match mode {
        PlacementMode::Gpu(_) => (
            lm.latency.gpu_base_seconds_per_prompt,
            lm.latency.gpu_speedup_exponent,
        ),
        PlacementMode::Cpu(_) => {
            if !lm.cpu_feasible || !lm.latency.cpu_base_seconds_per_prompt.is_finite() {
                return Err(LatencyError::CpuInfeasible { lm: lm.id });
            }
            (
                lm.latency.cpu_base_seconds_per_prompt,
                lm.latency.cpu_speedup_exponent,
            )
        }
    };
    Ok(base / (units as f64).powf(exponent))
}

/// Inference latency of a batch of `k` prompts.
pub fn inference_latency(
    lm: &LmTypeSpec,
    mode: PlacementMode,
    k: u32,
) -> Result<f64, LatencyError> {
    Ok(k as f64 * per_prompt_seconds(lm, mode)?)
}

/// `rtt + bytes / bandwidth` over one link.
pub fn link_delay(link: &LinkParams, bytes: u64) -> f64 {
    link.rtt_seconds + bytes as f64 / link.bandwidth_bytes_per_s
}

/// Transfer time of `bytes` along `link`; zero for a self-link.
pub fn transmission_delay(link: &TopologyLink, bytes: u64) -> f64 {
    if link.src == link.dst {
        return 0.0;
    }
    link_delay(
        &LinkParams {
            bandwidth_bytes_per_s: link.bandwidth_bytes_per_s,
            rtt_seconds: link.rtt_seconds,
        },
        bytes,
    )
}

/// Startup delay of a fresh replica.
pub fn startup_delay(lm: &LmTypeSpec, mode: PlacementMode) -> f64 {
    match mode {
        PlacementMode::Gpu(_) => lm.latency.startup_seconds_gpu,
        PlacementMode::Cpu(_) => lm.latency.startup_seconds_cpu,
    }
}

/// Time a stopping replica keeps holding its resources.
pub fn termination_delay(lm: &LmTypeSpec) -> f64 {
    lm.latency.termination_seconds
}

/// Directed link table. Links are mirrored unless the reverse direction is
/// configured explicitly; pairs without a link fall back to the default.
#[derive(Debug, Clone, Default)]
pub struct Topology {
    links: BTreeMap<(NodeId, NodeId), LinkParams>,
    default_link: Option<LinkParams>,
}

impl Topology {
    pub fn new(links: &[TopologyLink], default_link: Option<LinkParams>) -> Self {
        let mut table = BTreeMap::new();
        for l in links {
            table.insert(
                (l.src, l.dst),
                LinkParams {
                    bandwidth_bytes_per_s: l.bandwidth_bytes_per_s,
                    rtt_seconds: l.rtt_seconds,
                },
            );
        }
        for l in links {
            table.entry((l.dst, l.src)).or_insert(LinkParams {
                bandwidth_bytes_per_s: l.bandwidth_bytes_per_s,
                rtt_seconds: l.rtt_seconds,
            });
        }
        Self {
            links: table,
            default_link,
        }
    }

    pub fn from_config(config: &SimConfig) -> Self {
        Self::new(&config.links, config.default_link.clone())
    }

    pub fn link(&self, src: NodeId, dst: NodeId) -> Option<&LinkParams> {
        self.links.get(&(src, dst)).or(self.default_link.as_ref())
    }

    pub fn delay(&self, src: NodeId, dst: NodeId, bytes: u64) -> Result<f64, LatencyError> {
        if src == dst {
            return Ok(0.0);
        }
        self.link(src, dst)
            .map(|l| link_delay(l, bytes))
            .ok_or(LatencyError::UnreachablePair { src, dst })
    }
}
