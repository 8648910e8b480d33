//! Domain types shared by the simulator and every policy: model types,
//! servers, links, placements and macro policies, plus the two feasibility
//! predicates everything else leans on.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

/// Each physical GPU is time-sliced into this many virtual GPU units.
pub const VGPUS_PER_GPU: u32 = 2;

/// Identifier of a model (service) type.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LmId(pub u32);

impl fmt::Display for LmId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Identifier of an edge server.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub u32);

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Modality {
    TextToText,
    TextToImage,
    ImageToText,
}

impl Modality {
    /// Image-producing or image-consuming services.
    pub fn is_image(self) -> bool {
        !matches!(self, Modality::TextToText)
    }
}

/// Latency model parameters of one model type. Units are seconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyParams {
    pub gpu_base_seconds_per_prompt: f64,
    /// `inf` for models that cannot run on CPU.
    pub cpu_base_seconds_per_prompt: f64,
    pub gpu_speedup_exponent: f64,
    pub cpu_speedup_exponent: f64,
    pub startup_seconds_gpu: f64,
    pub startup_seconds_cpu: f64,
    pub termination_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LmTypeSpec {
    pub id: LmId,
    pub name: String,
    pub modality: Modality,
    pub min_ram_gb: f64,
    pub min_vram_gb: f64,
    /// Provisioned container memory; this is what counts against node RAM.
    pub deploy_ram_gb: f64,
    /// Container image size. Informational only.
    #[serde(default)]
    pub storage_gb: f64,
    pub cpu_feasible: bool,
    /// Requests of this type are only ever dispatched to GPU-capable nodes,
    /// even if the model could technically run on CPU.
    #[serde(default)]
    pub requires_gpu_node: bool,
    pub prompt_bytes: u64,
    pub result_bytes: u64,
    pub latency: LatencyParams,
}

impl LmTypeSpec {
    /// Relative benefit of GPU over CPU execution; infinite for GPU-only models.
    pub fn gpu_hunger(&self) -> f64 {
        if !self.cpu_feasible {
            return f64::INFINITY;
        }
        self.latency.cpu_base_seconds_per_prompt / self.latency.gpu_base_seconds_per_prompt
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServerSpec {
    pub id: NodeId,
    pub name: String,
    pub cpu_cores: u32,
    pub ram_gb: f64,
    pub vgpu_units: u32,
    pub vram_gb: f64,
    pub gpu_capable: bool,
    /// Control-plane nodes run the agents and never host models.
    #[serde(default = "default_true")]
    pub hosts_inference: bool,
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopologyLink {
    pub src: NodeId,
    pub dst: NodeId,
    pub bandwidth_bytes_per_s: f64,
    pub rtt_seconds: f64,
}

/// How one model type is placed on a node.
///
/// The derived ordering (`Off < OnCpu < OnGpu`, then by units) is the
/// lexicographic tie-break used when comparing whole actions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Placement {
    Off,
    OnCpu { cores: u32 },
    OnGpu { vgpus: u32 },
}

impl Placement {
    pub fn is_active(self) -> bool {
        !matches!(self, Placement::Off)
    }

    pub fn is_gpu(self) -> bool {
        matches!(self, Placement::OnGpu { .. })
    }

    pub fn mode(self) -> Option<PlacementMode> {
        match self {
            Placement::Off => None,
            Placement::OnCpu { cores } => Some(PlacementMode::Cpu(cores)),
            Placement::OnGpu { vgpus } => Some(PlacementMode::Gpu(vgpus)),
        }
    }

    /// Compact text form used in logs and agent wire formats: `off`, `cpu:4`, `gpu:2`.
    pub fn label(self) -> String {
        match self {
            Placement::Off => "off".to_string(),
            Placement::OnCpu { cores } => format!("cpu:{cores}"),
            Placement::OnGpu { vgpus } => format!("gpu:{vgpus}"),
        }
    }

    pub fn parse_label(text: &str) -> Option<Placement> {
        let text = text.trim().to_ascii_lowercase();
        if text == "off" {
            return Some(Placement::Off);
        }
        let (mode, units) = text.split_once(':')?;
        let units: u32 = units.trim().parse().ok()?;
        if units == 0 {
            return None;
        }
        match mode.trim() {
            "cpu" => Some(Placement::OnCpu { cores: units }),
            "gpu" => Some(Placement::OnGpu { vgpus: units }),
            _ => None,
        }
    }
}

/// An active placement: CPU cores or virtual GPU units, always at least one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PlacementMode {
    Cpu(u32),
    Gpu(u32),
}

impl PlacementMode {
    pub fn units(self) -> u32 {
        match self {
            PlacementMode::Cpu(n) | PlacementMode::Gpu(n) => n,
        }
    }

    pub fn placement(self) -> Placement {
        match self {
            PlacementMode::Cpu(cores) => Placement::OnCpu { cores },
            PlacementMode::Gpu(vgpus) => Placement::OnGpu { vgpus },
        }
    }
}

/// Per-model placement on one node. Model types absent from the map are off.
#[derive(Debug, Clone, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct DeploymentAction {
    pub placements: BTreeMap<LmId, Placement>,
}

impl DeploymentAction {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, lm: LmId, placement: Placement) -> Self {
        self.set(lm, placement);
        self
    }

    pub fn set(&mut self, lm: LmId, placement: Placement) {
        if placement.is_active() {
            self.placements.insert(lm, placement);
        } else {
            self.placements.remove(&lm);
        }
    }

    pub fn get(&self, lm: LmId) -> Placement {
        self.placements.get(&lm).copied().unwrap_or(Placement::Off)
    }

    pub fn active(&self) -> impl Iterator<Item = (LmId, Placement)> + '_ {
        self.placements
            .iter()
            .filter(|(_, p)| p.is_active())
            .map(|(lm, p)| (*lm, *p))
    }

    pub fn gpu_instances(&self) -> usize {
        self.active().filter(|(_, p)| p.is_gpu()).count()
    }

    /// Placement vector over `lms` in id order, used for lexicographic tie-breaks.
    pub fn key(&self, lms: &[LmTypeSpec]) -> Vec<Placement> {
        lms.iter().map(|lm| self.get(lm.id)).collect()
    }

    pub fn label(&self) -> String {
        if self.placements.is_empty() {
            return "all-off".to_string();
        }
        self.placements
            .iter()
            .map(|(lm, p)| format!("{lm}={}", p.label()))
            .collect::<Vec<_>>()
            .join(",")
    }
}

/// Resource consumption of a set of active models on one node.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ResourceUsage {
    pub vgpus: u32,
    pub cores: u32,
    pub ram_gb: f64,
    pub vram_gb: f64,
}

impl ResourceUsage {
    pub fn add(&mut self, lm: &LmTypeSpec, mode: PlacementMode) {
        self.ram_gb += lm.deploy_ram_gb;
        match mode {
            PlacementMode::Cpu(cores) => self.cores += cores,
            PlacementMode::Gpu(vgpus) => {
                self.vgpus += vgpus;
                self.vram_gb += lm.min_vram_gb;
            }
        }
    }

    /// All four per-server budget inequalities.
    pub fn fits(&self, node: &ServerSpec) -> bool {
        const EPS: f64 = 1e-9;
        self.vgpus <= node.vgpu_units
            && self.cores <= node.cpu_cores
            && self.ram_gb <= node.ram_gb + EPS
            && self.vram_gb <= node.vram_gb + EPS
    }
}

/// Resource usage of `action` on a node. Unknown model ids are ignored.
pub fn action_usage(action: &DeploymentAction, lms: &[LmTypeSpec]) -> ResourceUsage {
    let mut usage = ResourceUsage::default();
    for (lm_id, placement) in action.active() {
        if let (Some(lm), Some(mode)) = (lms.iter().find(|l| l.id == lm_id), placement.mode()) {
            usage.add(lm, mode);
        }
    }
    usage
}

/// True iff the action's total vGPU, core, RAM and vRAM demand fits the node.
pub fn check_headroom(node: &ServerSpec, action: &DeploymentAction, lms: &[LmTypeSpec]) -> bool {
    action_usage(action, lms).fits(node)
}

/// True iff `placement` of `lm` is allowed on `node` at all (ignoring budgets).
pub fn placement_allowed(node: &ServerSpec, lm: &LmTypeSpec, placement: Placement) -> bool {
    match placement {
        Placement::Off => true,
        Placement::OnCpu { cores } => cores >= 1 && lm.cpu_feasible && node.hosts_inference,
        Placement::OnGpu { vgpus } => vgpus >= 1 && node.gpu_capable && node.hosts_inference,
    }
}

/// Nodes to which requests of `lm` may ever be dispatched.
pub fn feasible_nodes(lm: &LmTypeSpec, servers: &[ServerSpec]) -> BTreeSet<NodeId> {
    servers
        .iter()
        .filter(|s| s.hosts_inference)
        .filter(|s| {
            s.gpu_capable
                || (lm.cpu_feasible && !lm.requires_gpu_node && lm.deploy_ram_gb <= s.ram_gb)
        })
        .map(|s| s.id)
        .collect()
}

/// Tier-1 output: per-type routing distributions and per-node role sets.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MacroPolicy {
    pub routing_probs: BTreeMap<LmId, BTreeMap<NodeId, f64>>,
    pub node_roles: BTreeMap<NodeId, BTreeSet<LmId>>,
}

impl MacroPolicy {
    pub fn prob(&self, lm: LmId, node: NodeId) -> f64 {
        self.routing_probs
            .get(&lm)
            .and_then(|row| row.get(&node))
            .copied()
            .unwrap_or(0.0)
    }

    pub fn has_role(&self, node: NodeId, lm: LmId) -> bool {
        self.node_roles.get(&node).is_some_and(|r| r.contains(&lm))
    }

    pub fn roles(&self, node: NodeId) -> BTreeSet<LmId> {
        self.node_roles.get(&node).cloned().unwrap_or_default()
    }
}
