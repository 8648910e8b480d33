//! Scenario configuration: the TOML schema, validation, and the built-in
//! seven-node testbed scenario.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{ConfigError, Violation};
use crate::model::{
    feasible_nodes, LatencyParams, LmId, LmTypeSpec, MacroPolicy, Modality, NodeId, ServerSpec,
    TopologyLink, VGPUS_PER_GPU,
};

/// Bandwidth and RTT applied to every node pair without an explicit link.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkParams {
    pub bandwidth_bytes_per_s: f64,
    pub rtt_seconds: f64,
}

/// Presence probability override. `None` in `lm` or `node` matches everything;
/// later rules win.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PresenceRule {
    #[serde(default)]
    pub lm: Option<LmId>,
    #[serde(default)]
    pub node: Option<NodeId>,
    pub probability: f64,
}

/// Scales presence probabilities of one type from `from_epoch` onwards.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftRule {
    pub from_epoch: u64,
    pub lm: LmId,
    pub scale: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkloadSpec {
    /// Probability that a (node, type) pair draws a request in a slot.
    #[serde(default = "default_presence")]
    pub default_presence: f64,
    #[serde(default)]
    pub presence: Vec<PresenceRule>,
    /// Weights over k = 0..=8 prompts; k = 0 means no request.
    #[serde(default = "default_k_weights")]
    pub k_weights: Vec<f64>,
    #[serde(default)]
    pub drift: Vec<DriftRule>,
    /// Replay arrivals from this CSV trace instead of sampling.
    #[serde(default)]
    pub trace: Option<PathBuf>,
}

fn default_presence() -> f64 {
    1.0
}

fn default_k_weights() -> Vec<f64> {
    vec![1.0; MAX_PROMPTS as usize + 1]
}

/// Upper bound of the per-request prompt batch size.
pub const MAX_PROMPTS: u32 = 8;

impl Default for WorkloadSpec {
    fn default() -> Self {
        Self {
            default_presence: default_presence(),
            presence: Vec::new(),
            k_weights: default_k_weights(),
            drift: Vec::new(),
            trace: None,
        }
    }
}

impl WorkloadSpec {
    /// Presence probability of `lm` at `node` during `epoch`, drift applied.
    pub fn presence_probability(&self, lm: LmId, node: NodeId, epoch: u64) -> f64 {
        let mut p = self.default_presence;
        for rule in &self.presence {
            if rule.lm.is_none_or(|l| l == lm) && rule.node.is_none_or(|n| n == node) {
                p = rule.probability;
            }
        }
        for d in &self.drift {
            if d.lm == lm && epoch >= d.from_epoch {
                p *= d.scale;
            }
        }
        p.clamp(0.0, 1.0)
    }

    pub fn mean_k(&self) -> f64 {
        let total: f64 = self.k_weights.iter().sum();
        if total <= 0.0 {
            return 0.0;
        }
        self.k_weights
            .iter()
            .enumerate()
            .map(|(k, w)| k as f64 * w)
            .sum::<f64>()
            / total
    }
}

/// Parameters of the drift-plus-penalty deployment controller.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DppParams {
    /// Backlog-versus-cost trade-off weight.
    pub v: f64,
    /// Per-type CPU weights, in the order of `SimConfig::lms`.
    pub alpha_cpu: Vec<f64>,
    pub alpha_gpu: Vec<f64>,
    pub p0: f64,
    pub p1: f64,
    pub p2: f64,
    pub lambda_churn: f64,
    pub kappa: f64,
    /// Floor of the linear smoothing function f(x) = eps + (1 - eps) x.
    pub epsilon: f64,
    pub cpu_grid: Vec<u32>,
    pub gpu_grid: Vec<u32>,
}

impl Default for DppParams {
    fn default() -> Self {
        Self {
            v: 1.0,
            alpha_cpu: vec![1.0; 4],
            alpha_gpu: vec![1.0, 1.2, 1.5, 1.5],
            p0: 0.1,
            p1: 0.25,
            p2: 0.37,
            lambda_churn: 0.08,
            kappa: 0.76,
            epsilon: 0.1,
            cpu_grid: vec![2, 4, 8],
            gpu_grid: vec![1, 2],
        }
    }
}

impl DppParams {
    pub fn alpha_cpu_for(&self, index: usize) -> f64 {
        self.alpha_cpu.get(index).copied().unwrap_or(1.0)
    }

    pub fn alpha_gpu_for(&self, index: usize) -> f64 {
        self.alpha_gpu.get(index).copied().unwrap_or(1.0)
    }
}

/// Tunables of the scripted agents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentParams {
    /// A node is overloaded for a type when its backlog exceeds this multiple
    /// of the cluster mean backlog of that type.
    pub overload_factor: f64,
    pub retrieval_k: usize,
    /// Maximum routing mass moved per type per epoch.
    pub max_routing_shift: f64,
    /// Backlog (prompts) above which a GPU-hungry type gets a larger GPU share.
    pub deep_backlog_prompts: u32,
    /// Wall-clock budget for one external completion call.
    pub external_timeout_seconds: f64,
}

impl Default for AgentParams {
    fn default() -> Self {
        Self {
            overload_factor: 1.5,
            retrieval_k: 4,
            max_routing_shift: 0.15,
            deep_backlog_prompts: 8,
            external_timeout_seconds: 20.0,
        }
    }
}

/// Macro policy as it appears on the wire and on disk, keyed by names.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MacroPolicyDoc {
    pub routing_probabilities: BTreeMap<String, BTreeMap<String, f64>>,
    pub node_role_intent: BTreeMap<String, Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyConfig {
    /// Default strategy when the command line does not pick one.
    #[serde(default = "default_policy_name")]
    pub name: String,
    /// Macro policy applied during the first epoch instead of the cold-start plan.
    #[serde(default)]
    pub initial_macro_policy: Option<MacroPolicyDoc>,
}

fn default_policy_name() -> String {
    "MA".to_string()
}

impl Default for PolicyConfig {
    fn default() -> Self {
        Self {
            name: default_policy_name(),
            initial_macro_policy: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub servers: Vec<ServerSpec>,
    pub lms: Vec<LmTypeSpec>,
    #[serde(default)]
    pub links: Vec<TopologyLink>,
    #[serde(default)]
    pub default_link: Option<LinkParams>,
    #[serde(default = "default_slot_seconds")]
    pub slot_seconds: f64,
    #[serde(default = "default_slots_per_epoch")]
    pub slots_per_epoch: u32,
    #[serde(default = "default_tau")]
    pub tau_seconds: f64,
    #[serde(default = "default_lambda")]
    pub lambda_weight: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub workload: WorkloadSpec,
    #[serde(default)]
    pub dpp: DppParams,
    #[serde(default)]
    pub agents: AgentParams,
    #[serde(default)]
    pub policy: PolicyConfig,
}

fn default_slot_seconds() -> f64 {
    30.0
}
fn default_slots_per_epoch() -> u32 {
    50
}
fn default_tau() -> f64 {
    900.0
}
fn default_lambda() -> f64 {
    0.5
}

impl SimConfig {
    pub fn lm(&self, id: LmId) -> Option<&LmTypeSpec> {
        self.lms.iter().find(|l| l.id == id)
    }

    pub fn lm_index(&self, id: LmId) -> Option<usize> {
        self.lms.iter().position(|l| l.id == id)
    }

    pub fn server(&self, id: NodeId) -> Option<&ServerSpec> {
        self.servers.iter().find(|s| s.id == id)
    }

    /// Nodes that host models, in configuration order.
    pub fn worker_ids(&self) -> Vec<NodeId> {
        self.servers
            .iter()
            .filter(|s| s.hosts_inference)
            .map(|s| s.id)
            .collect()
    }

    pub fn lm_ids(&self) -> Vec<LmId> {
        self.lms.iter().map(|l| l.id).collect()
    }

    pub fn feasible(&self, lm: LmId) -> BTreeSet<NodeId> {
        self.lm(lm)
            .map(|l| feasible_nodes(l, &self.servers))
            .unwrap_or_default()
    }

    pub fn epoch_seconds(&self) -> f64 {
        self.slot_seconds * self.slots_per_epoch as f64
    }

    pub fn lm_by_name(&self, name: &str) -> Option<LmId> {
        let name = name.trim();
        self.lms
            .iter()
            .find(|l| l.name.eq_ignore_ascii_case(name))
            .map(|l| l.id)
            .or_else(|| {
                let id: u32 = name.parse().ok()?;
                self.lm(LmId(id)).map(|l| l.id)
            })
    }

    pub fn node_by_name(&self, name: &str) -> Option<NodeId> {
        let name = name.trim();
        self.servers
            .iter()
            .find(|s| s.name.eq_ignore_ascii_case(name))
            .map(|s| s.id)
            .or_else(|| {
                let id: u32 = name.parse().ok()?;
                self.server(NodeId(id)).map(|s| s.id)
            })
    }

    pub fn lm_name(&self, id: LmId) -> String {
        self.lm(id).map(|l| l.name.clone()).unwrap_or_else(|| id.to_string())
    }

    pub fn node_name(&self, id: NodeId) -> String {
        self.server(id)
            .map(|s| s.name.clone())
            .unwrap_or_else(|| id.to_string())
    }

    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))
    }

    pub fn to_toml_string(&self) -> Result<String, ConfigError> {
        toml::to_string_pretty(self).map_err(|e| ConfigError::Parse(e.to_string()))
    }

    /// Reads and validates a scenario file. Relative trace paths are resolved
    /// against the scenario's directory.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut config = Self::from_toml_str(&text)?;
        if let (Some(trace), Some(dir)) = (config.workload.trace.as_mut(), path.parent()) {
            if trace.is_relative() {
                *trace = dir.join(&*trace);
            }
        }
        validate_config(config)
    }

    /// The seven-VM testbed with its four services (text, large text,
    /// captioning, image generation). Node 1 is the control node.
    pub fn paper_default() -> Self {
        let worker = |id: u32, cores: u32, ram: f64, gpus: u32| ServerSpec {
            id: NodeId(id),
            name: format!("VM{id}"),
            cpu_cores: cores,
            ram_gb: ram,
            vgpu_units: gpus * VGPUS_PER_GPU,
            vram_gb: 24.0 * gpus as f64,
            gpu_capable: gpus > 0,
            hosts_inference: true,
        };
        let mut control = worker(1, 8, 16.0, 0);
        control.hosts_inference = false;
        let servers = vec![
            control,
            worker(2, 24, 32.0, 0),
            worker(3, 16, 24.0, 1),
            worker(4, 16, 24.0, 1),
            worker(5, 16, 24.0, 1),
            worker(6, 16, 24.0, 1),
            worker(7, 16, 24.0, 2),
        ];

        let text_kb = 1_000;
        let image_kb = 512_000;
        let text_result = 2_000;
        let image_result = 1_000_000;
        let lm = |id: u32,
                  modality: Modality,
                  ram: (f64, f64),
                  vram: f64,
                  storage: f64,
                  gpu_base: f64,
                  cpu_mult: f64,
                  startup: (f64, f64)| {
            let cpu_feasible = cpu_mult.is_finite();
            LmTypeSpec {
                id: LmId(id),
                name: format!("LM{id}"),
                modality,
                min_ram_gb: ram.0,
                min_vram_gb: vram,
                deploy_ram_gb: ram.1,
                storage_gb: storage,
                cpu_feasible,
                requires_gpu_node: modality.is_image(),
                prompt_bytes: if modality == Modality::ImageToText { image_kb } else { text_kb },
                result_bytes: if modality == Modality::TextToImage {
                    image_result
                } else {
                    text_result
                },
                latency: LatencyParams {
                    gpu_base_seconds_per_prompt: gpu_base,
                    cpu_base_seconds_per_prompt: gpu_base * cpu_mult,
                    gpu_speedup_exponent: if modality.is_image() { 0.7 } else { 1.0 },
                    cpu_speedup_exponent: 0.6,
                    startup_seconds_gpu: startup.0,
                    startup_seconds_cpu: startup.1,
                    termination_seconds: 10.0,
                },
            }
        };
        let lms = vec![
            lm(1, Modality::TextToText, (1.2, 3.0), 4.0, 7.5, 2.0, 8.0, (20.0, 15.0)),
            lm(2, Modality::TextToText, (6.5, 9.0), 8.0, 13.0, 6.0, 8.0, (30.0, 25.0)),
            lm(3, Modality::ImageToText, (0.5, 2.5), 4.0, 10.0, 4.0, 20.0, (25.0, 20.0)),
            lm(4, Modality::TextToImage, (1.6, 3.5), 10.0, 17.5, 25.0, f64::INFINITY, (45.0, 45.0)),
        ];

        // Three sites: VM1-3 on campus, VM4-5 and VM6-7 at the two museums.
        let site = |n: u32| match n {
            1..=3 => 0,
            4 | 5 => 1,
            _ => 2,
        };
        let mut links = Vec::new();
        for a in 1..=7u32 {
            for b in (a + 1)..=7u32 {
                if site(a) != site(b) {
                    links.push(TopologyLink {
                        src: NodeId(a),
                        dst: NodeId(b),
                        bandwidth_bytes_per_s: 1.25e9,
                        rtt_seconds: 0.004,
                    });
                }
            }
        }

        SimConfig {
            servers,
            lms,
            links,
            default_link: Some(LinkParams {
                bandwidth_bytes_per_s: 1.25e10,
                rtt_seconds: 0.0005,
            }),
            slot_seconds: 30.0,
            slots_per_epoch: 50,
            tau_seconds: 900.0,
            lambda_weight: 0.5,
            seed: 0,
            workload: WorkloadSpec {
                default_presence: DEFAULT_PRESENCE,
                ..WorkloadSpec::default()
            },
            dpp: DppParams::default(),
            agents: AgentParams::default(),
            policy: PolicyConfig::default(),
        }
    }
}

/// Per-(node, type, slot) request probability of the shipped scenario.
pub const DEFAULT_PRESENCE: f64 = 0.12;

/// Structural problems of a routing table, each naming the offending row.
pub fn routing_violations(policy: &MacroPolicy, config: &SimConfig) -> Vec<Violation> {
    const TOL: f64 = 1e-6;
    let mut out = Vec::new();
    for lm in &config.lms {
        let field = format!("routing_probabilities.{}", lm.name);
        let feasible = feasible_nodes(lm, &config.servers);
        let Some(row) = policy.routing_probs.get(&lm.id) else {
            if !feasible.is_empty() {
                out.push(Violation::new(field, "missing routing row"));
            }
            continue;
        };
        let mut sum = 0.0;
        for (node, p) in row {
            if !p.is_finite() || *p < 0.0 || *p > 1.0 + TOL {
                out.push(Violation::new(
                    format!("{field}.{}", config.node_name(*node)),
                    format!("probability {p} outside [0, 1]"),
                ));
            }
            if *p > 0.0 && !feasible.contains(node) {
                out.push(Violation::new(
                    format!("{field}.{}", config.node_name(*node)),
                    "mass on a node that can never serve this type",
                ));
            }
            sum += p;
        }
        if !feasible.is_empty() && (sum - 1.0).abs() > TOL {
            out.push(Violation::new(
                field,
                format!("probabilities sum to {sum}, expected 1"),
            ));
        }
    }
    for lm in policy.routing_probs.keys() {
        if config.lm(*lm).is_none() {
            out.push(Violation::new(
                format!("routing_probabilities.{lm}"),
                "unknown model type",
            ));
        }
    }
    out
}

/// Resolves a name-keyed policy document against the configuration.
pub fn resolve_macro_policy(
    doc: &MacroPolicyDoc,
    config: &SimConfig,
) -> Result<MacroPolicy, Vec<Violation>> {
    let mut errors = Vec::new();
    let mut policy = MacroPolicy::default();
    for (lm_name, row) in &doc.routing_probabilities {
        let Some(lm) = config.lm_by_name(lm_name) else {
            errors.push(Violation::new(
                format!("routing_probabilities.{lm_name}"),
                "unknown model type",
            ));
            continue;
        };
        let entry = policy.routing_probs.entry(lm).or_default();
        for (node_name, p) in row {
            match config.node_by_name(node_name) {
                Some(node) => {
                    entry.insert(node, *p);
                }
                None => errors.push(Violation::new(
                    format!("routing_probabilities.{lm_name}.{node_name}"),
                    "unknown node",
                )),
            }
        }
    }
    for (node_name, roles) in &doc.node_role_intent {
        let Some(node) = config.node_by_name(node_name) else {
            errors.push(Violation::new(
                format!("node_role_intent.{node_name}"),
                "unknown node",
            ));
            continue;
        };
        let set = policy.node_roles.entry(node).or_default();
        for lm_name in roles {
            match config.lm_by_name(lm_name) {
                Some(lm) => {
                    set.insert(lm);
                }
                None => errors.push(Violation::new(
                    format!("node_role_intent.{node_name}"),
                    format!("unknown model type {lm_name}"),
                )),
            }
        }
    }
    if errors.is_empty() {
        Ok(policy)
    } else {
        Err(errors)
    }
}

/// Renders a policy with configuration names as keys.
pub fn macro_policy_doc(policy: &MacroPolicy, config: &SimConfig) -> MacroPolicyDoc {
    MacroPolicyDoc {
        routing_probabilities: policy
            .routing_probs
            .iter()
            .map(|(lm, row)| {
                (
                    config.lm_name(*lm),
                    row.iter().map(|(n, p)| (config.node_name(*n), *p)).collect(),
                )
            })
            .collect(),
        node_role_intent: policy
            .node_roles
            .iter()
            .map(|(n, roles)| {
                (
                    config.node_name(*n),
                    roles.iter().map(|l| config.lm_name(*l)).collect(),
                )
            })
            .collect(),
    }
}

/// Returns the configuration unchanged if every invariant holds, otherwise
/// the full list of violations.
pub fn validate_config(config: SimConfig) -> Result<SimConfig, ConfigError> {
    let mut v = Vec::new();
    let mut push = |field: String, msg: &str| v.push(Violation::new(field, msg));

    if !(config.slot_seconds > 0.0 && config.slot_seconds.is_finite()) {
        push("slot_seconds".into(), "must be positive");
    }
    if config.slots_per_epoch == 0 {
        push("slots_per_epoch".into(), "must be at least 1");
    }
    if !(config.tau_seconds >= config.slot_seconds) {
        push("tau_seconds".into(), "must be at least slot_seconds");
    }
    if !(0.0..=1.0).contains(&config.lambda_weight) {
        push("lambda_weight".into(), "must lie in [0, 1]");
    }

    let mut node_ids = BTreeSet::new();
    for (i, s) in config.servers.iter().enumerate() {
        let f = |name: &str| format!("servers[{i}].{name}");
        if !node_ids.insert(s.id) {
            push(f("id"), "duplicate node id");
        }
        if !(s.ram_gb >= 0.0) {
            push(f("ram_gb"), "negative capacity");
        }
        if !(s.vram_gb >= 0.0) {
            push(f("vram_gb"), "negative capacity");
        }
        let has_units = s.vgpu_units > 0;
        let has_vram = s.vram_gb > 0.0;
        if s.gpu_capable != has_units || s.gpu_capable != has_vram {
            push(f("gpu_capable"), "gpu capability inconsistent");
        }
        if s.vgpu_units % VGPUS_PER_GPU != 0 {
            push(f("vgpu_units"), "must be a whole number of physical GPUs");
        }
    }

    let mut lm_ids = BTreeSet::new();
    for (i, lm) in config.lms.iter().enumerate() {
        let f = |name: &str| format!("lms[{i}].{name}");
        let lat = &lm.latency;
        if !lm_ids.insert(lm.id) {
            push(f("id"), "duplicate model id");
        }
        if !(lm.min_ram_gb >= 0.0) {
            push(f("min_ram_gb"), "must be non-negative");
        }
        if !(lm.min_vram_gb > 0.0) {
            push(f("min_vram_gb"), "must be positive");
        }
        if !(lm.deploy_ram_gb >= lm.min_ram_gb) {
            push(f("deploy_ram_gb"), "must be at least min_ram_gb");
        }
        if lm.prompt_bytes == 0 {
            push(f("prompt_bytes"), "must be positive");
        }
        if lm.result_bytes == 0 {
            push(f("result_bytes"), "must be positive");
        }
        if !(lat.gpu_base_seconds_per_prompt > 0.0 && lat.gpu_base_seconds_per_prompt.is_finite())
        {
            push(f("latency.gpu_base_seconds_per_prompt"), "must be positive");
        }
        if lm.cpu_feasible {
            if !(lat.cpu_base_seconds_per_prompt > 0.0
                && lat.cpu_base_seconds_per_prompt.is_finite())
            {
                push(
                    f("latency.cpu_base_seconds_per_prompt"),
                    "must be positive and finite for CPU-feasible models",
                );
            }
        } else if lat.cpu_base_seconds_per_prompt != f64::INFINITY {
            push(
                f("latency.cpu_base_seconds_per_prompt"),
                "must be inf when cpu_feasible is false",
            );
        }
        for (name, e) in [
            ("latency.gpu_speedup_exponent", lat.gpu_speedup_exponent),
            ("latency.cpu_speedup_exponent", lat.cpu_speedup_exponent),
        ] {
            if !(e > 0.0 && e <= 1.0) {
                push(f(name), "must lie in (0, 1]");
            }
        }
        for (name, d) in [
            ("latency.startup_seconds_gpu", lat.startup_seconds_gpu),
            ("latency.startup_seconds_cpu", lat.startup_seconds_cpu),
            ("latency.termination_seconds", lat.termination_seconds),
        ] {
            if !(d >= 0.0 && d.is_finite()) {
                push(f(name), "must be non-negative");
            }
        }
    }

    for (i, link) in config.links.iter().enumerate() {
        let f = |name: &str| format!("links[{i}].{name}");
        if !node_ids.contains(&link.src) {
            push(f("src"), "unresolved node id");
        }
        if !node_ids.contains(&link.dst) {
            push(f("dst"), "unresolved node id");
        }
        if !(link.bandwidth_bytes_per_s > 0.0) {
            push(f("bandwidth_bytes_per_s"), "must be positive");
        }
        if !(link.rtt_seconds >= 0.0) {
            push(f("rtt_seconds"), "must be non-negative");
        }
    }
    if let Some(d) = &config.default_link {
        if !(d.bandwidth_bytes_per_s > 0.0) {
            push("default_link.bandwidth_bytes_per_s".into(), "must be positive");
        }
        if !(d.rtt_seconds >= 0.0) {
            push("default_link.rtt_seconds".into(), "must be non-negative");
        }
    }

    let w = &config.workload;
    if !(0.0..=1.0).contains(&w.default_presence) {
        push("workload.default_presence".into(), "must lie in [0, 1]");
    }
    for (i, rule) in w.presence.iter().enumerate() {
        if !(0.0..=1.0).contains(&rule.probability) {
            push(format!("workload.presence[{i}].probability"), "must lie in [0, 1]");
        }
        if rule.lm.is_some_and(|l| !lm_ids.contains(&l)) {
            push(format!("workload.presence[{i}].lm"), "unresolved model id");
        }
        if rule.node.is_some_and(|n| !node_ids.contains(&n)) {
            push(format!("workload.presence[{i}].node"), "unresolved node id");
        }
    }
    if w.k_weights.len() != MAX_PROMPTS as usize + 1 {
        push("workload.k_weights".into(), "must have 9 entries (k = 0..=8)");
    }
    if w.k_weights.iter().any(|x| !(*x >= 0.0)) || !(w.k_weights.iter().sum::<f64>() > 0.0) {
        push("workload.k_weights".into(), "must be non-negative with a positive sum");
    }
    for (i, d) in w.drift.iter().enumerate() {
        if !lm_ids.contains(&d.lm) {
            push(format!("workload.drift[{i}].lm"), "unresolved model id");
        }
        if !(d.scale >= 0.0) {
            push(format!("workload.drift[{i}].scale"), "must be non-negative");
        }
    }

    let d = &config.dpp;
    for (name, x) in [
        ("dpp.v", d.v),
        ("dpp.p0", d.p0),
        ("dpp.p1", d.p1),
        ("dpp.p2", d.p2),
        ("dpp.lambda_churn", d.lambda_churn),
        ("dpp.kappa", d.kappa),
    ] {
        if !(x >= 0.0 && x.is_finite()) {
            push(name.into(), "must be non-negative");
        }
    }
    if !(d.v > 0.0) {
        push("dpp.v".into(), "must be positive");
    }
    if !(d.epsilon > 0.0 && d.epsilon < 1.0) {
        push("dpp.epsilon".into(), "must lie in (0, 1)");
    }
    if d.alpha_cpu.len() != config.lms.len() || d.alpha_cpu.iter().any(|a| !(*a >= 0.0)) {
        push("dpp.alpha_cpu".into(), "needs one non-negative weight per model type");
    }
    if d.alpha_gpu.len() != config.lms.len() || d.alpha_gpu.iter().any(|a| !(*a >= 0.0)) {
        push("dpp.alpha_gpu".into(), "needs one non-negative weight per model type");
    }
    if d.cpu_grid.is_empty() || d.cpu_grid.contains(&0) {
        push("dpp.cpu_grid".into(), "must list positive core counts");
    }
    if d.gpu_grid.is_empty() || d.gpu_grid.contains(&0) {
        push("dpp.gpu_grid".into(), "must list positive vGPU counts");
    }

    let a = &config.agents;
    if !(a.overload_factor >= 1.0) {
        push("agents.overload_factor".into(), "must be at least 1");
    }
    if a.retrieval_k == 0 {
        push("agents.retrieval_k".into(), "must be at least 1");
    }
    if !(a.max_routing_shift >= 0.0 && a.max_routing_shift <= 1.0) {
        push("agents.max_routing_shift".into(), "must lie in [0, 1]");
    }
    if !(a.external_timeout_seconds > 0.0) {
        push("agents.external_timeout_seconds".into(), "must be positive");
    }

    if !crate::policy::POLICY_NAMES.contains(&config.policy.name.as_str()) {
        push("policy.name".into(), "unknown strategy name");
    }
    if let Some(doc) = &config.policy.initial_macro_policy {
        match resolve_macro_policy(doc, &config) {
            Ok(policy) => v.extend(
                routing_violations(&policy, &config)
                    .into_iter()
                    .map(|x| x.prefixed("policy.initial_macro_policy")),
            ),
            Err(errs) => v.extend(
                errs.into_iter()
                    .map(|x| x.prefixed("policy.initial_macro_policy")),
            ),
        }
    }

    if v.is_empty() {
        Ok(config)
    } else {
        Err(ConfigError::Invalid(v))
    }
}
