//! Drift-plus-penalty deployment control.
//!
//! Each slot a node picks, from a small enumerated action set, the placement
//! maximizing `sum_i Q_i * mu_i(a) - V * C(a)`, where `mu` is a smoothed
//! service proxy, `C` prices GPU instances and activation churn, and `Q_i`
//! is the prompt backlog of type `i`.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use super::{policy_rng, DeployContext, Deployer, RandomRouter, Strategy};
use crate::config::{DppParams, SimConfig};
use crate::engine::{NodeSnapshot, Simulation};
use crate::error::PolicyError;
use crate::model::{
    action_usage, placement_allowed, DeploymentAction, LmId, LmTypeSpec, Placement, ResourceUsage,
    ServerSpec,
};
use crate::workload::WorkloadSource;

/// Scores within this distance are ties.
pub const SCORE_TIE: f64 = 1e-12;

/// Placements considered for one type on one node.
pub fn candidate_placements(node: &ServerSpec, lm: &LmTypeSpec, params: &DppParams) -> Vec<Placement> {
    let mut out = vec![Placement::Off];
    for &cores in &params.cpu_grid {
        let p = Placement::OnCpu { cores };
        if cores <= node.cpu_cores && placement_allowed(node, lm, p) {
            out.push(p);
        }
    }
    for &vgpus in &params.gpu_grid {
        let p = Placement::OnGpu { vgpus };
        if vgpus <= node.vgpu_units && placement_allowed(node, lm, p) {
            out.push(p);
        }
    }
    out
}

/// Grid actions that fit the node budget and do not touch a replica whose
/// start is in progress. The current placement is always a member.
pub fn dpp_feasible_actions(
    node: &NodeSnapshot,
    lms: &[LmTypeSpec],
    params: &DppParams,
) -> Vec<DeploymentAction> {
    let options: Vec<Vec<Placement>> = lms
        .iter()
        .map(|lm| {
            let mut opts = candidate_placements(&node.spec, lm, params);
            let current = node.committed.get(lm.id);
            if !opts.contains(&current) {
                opts.push(current);
            }
            opts.retain(|p| node.void_reason(lm.id, *p).is_none());
            opts.sort();
            opts
        })
        .collect();
    let mut out = Vec::new();
    let mut current = DeploymentAction::new();
    enumerate(
        &node.spec,
        lms,
        &options,
        0,
        ResourceUsage::default(),
        &mut current,
        &mut out,
    );
    out
}

fn enumerate(
    node: &ServerSpec,
    lms: &[LmTypeSpec],
    options: &[Vec<Placement>],
    i: usize,
    usage: ResourceUsage,
    current: &mut DeploymentAction,
    out: &mut Vec<DeploymentAction>,
) {
    if i == lms.len() {
        out.push(current.clone());
        return;
    }
    for &p in &options[i] {
        let mut u = usage;
        if let Some(mode) = p.mode() {
            u.add(&lms[i], mode);
            if !u.fits(node) {
                continue;
            }
        }
        current.set(lms[i].id, p);
        enumerate(node, lms, options, i + 1, u, current, out);
        current.set(lms[i].id, Placement::Off);
    }
}

/// Normalized residual capacities of a node under some usage.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Residuals {
    pub cpu: f64,
    pub mem: f64,
    pub gpu: f64,
}

fn residual(used: f64, cap: f64) -> f64 {
    if cap <= 0.0 {
        0.0
    } else {
        (1.0 - used / cap).clamp(0.0, 1.0)
    }
}

pub fn residuals(node: &ServerSpec, usage: &ResourceUsage) -> Residuals {
    Residuals {
        cpu: residual(usage.cores as f64, node.cpu_cores as f64),
        mem: residual(usage.ram_gb, node.ram_gb),
        gpu: residual(usage.vgpus as f64, node.vgpu_units as f64),
    }
}

/// The linear smoothing `eps + (1 - eps) x`.
pub fn smooth(x: f64, eps: f64) -> f64 {
    eps + (1.0 - eps) * x
}

/// Service proxy of one placement given post-action residuals.
pub fn proxy_value(placement: Placement, r: Residuals, alpha_cpu: f64, alpha_gpu: f64, eps: f64) -> f64 {
    match placement {
        Placement::Off => 0.0,
        Placement::OnCpu { .. } => alpha_cpu * smooth(r.cpu, eps) * smooth(r.mem, eps),
        Placement::OnGpu { .. } => alpha_gpu * smooth(r.gpu, eps),
    }
}

/// Per-type service proxy of `action` on `node`.
pub fn dpp_service_proxy(
    node: &ServerSpec,
    action: &DeploymentAction,
    lms: &[LmTypeSpec],
    params: &DppParams,
) -> BTreeMap<LmId, f64> {
    let r = residuals(node, &action_usage(action, lms));
    lms.iter()
        .enumerate()
        .map(|(i, lm)| {
            (
                lm.id,
                proxy_value(
                    action.get(lm.id),
                    r,
                    params.alpha_cpu_for(i),
                    params.alpha_gpu_for(i),
                    params.epsilon,
                ),
            )
        })
        .collect()
}

/// `p0 + p1 (1 - eta_gpu) + p2 phi_img`.
pub fn gpu_price(params: &DppParams, eta_gpu: f64, phi_img: f64) -> f64 {
    params.p0 + params.p1 * (1.0 - eta_gpu) + params.p2 * phi_img
}

/// Image-type share of the node's prompt backlog.
pub fn image_share(node: &NodeSnapshot, lms: &[LmTypeSpec]) -> f64 {
    let total = node.total_backlog();
    if total == 0 {
        return 0.0;
    }
    let img: u64 = lms
        .iter()
        .filter(|l| l.modality.is_image())
        .map(|l| node.backlog_of(l.id))
        .sum();
    img as f64 / total as f64
}

/// GPU shadow price of a node from its current (pre-action) state.
pub fn dpp_gpu_price(node: &NodeSnapshot, lms: &[LmTypeSpec], params: &DppParams) -> f64 {
    let usage = action_usage(&node.committed, lms);
    let eta_gpu = if node.spec.vgpu_units == 0 {
        1.0
    } else {
        residuals(&node.spec, &usage).gpu
    };
    gpu_price(params, eta_gpu, image_share(node, lms))
}

/// Activation churn term `lambda * sum |a_i - a'_i| (1 + kappa Q_i)`.
pub fn churn(
    action: &DeploymentAction,
    prev: &DeploymentAction,
    queues: &BTreeMap<LmId, u64>,
    lms: &[LmTypeSpec],
    params: &DppParams,
) -> f64 {
    lms.iter()
        .filter(|l| action.get(l.id).is_active() != prev.get(l.id).is_active())
        .map(|l| {
            let q = queues.get(&l.id).copied().unwrap_or(0) as f64;
            params.lambda_churn * (1.0 + params.kappa * q)
        })
        .sum()
}

/// `price * N_gpu(action) + churn`.
pub fn dpp_cost(
    price: f64,
    action: &DeploymentAction,
    prev: &DeploymentAction,
    queues: &BTreeMap<LmId, u64>,
    lms: &[LmTypeSpec],
    params: &DppParams,
) -> f64 {
    price * action.gpu_instances() as f64 + churn(action, prev, queues, lms, params)
}

pub fn dpp_score(queues: &BTreeMap<LmId, u64>, proxy: &BTreeMap<LmId, f64>, v: f64, cost: f64) -> f64 {
    proxy
        .iter()
        .map(|(lm, mu)| queues.get(lm).copied().unwrap_or(0) as f64 * mu)
        .sum::<f64>()
        - v * cost
}

#[derive(Debug, Clone, PartialEq)]
pub struct DppChoice {
    pub action: DeploymentAction,
    pub score: f64,
    pub proxy: BTreeMap<LmId, f64>,
    pub cost: f64,
    pub churn: f64,
}

/// Evaluates one action against a node snapshot.
pub fn dpp_evaluate(
    node: &NodeSnapshot,
    action: &DeploymentAction,
    lms: &[LmTypeSpec],
    params: &DppParams,
    price: f64,
) -> DppChoice {
    let proxy = dpp_service_proxy(&node.spec, action, lms, params);
    let churn = churn(action, &node.committed, &node.backlog, lms, params);
    let cost = price * action.gpu_instances() as f64 + churn;
    DppChoice {
        action: action.clone(),
        score: dpp_score(&node.backlog, &proxy, params.v, cost),
        proxy,
        cost,
        churn,
    }
}

/// Tie-break order between two equally scored choices; `Less` wins.
pub fn tie_order(a: &DppChoice, b: &DppChoice, lms: &[LmTypeSpec]) -> Ordering {
    a.action
        .gpu_instances()
        .cmp(&b.action.gpu_instances())
        .then(a.churn.total_cmp(&b.churn))
        .then_with(|| a.action.key(lms).cmp(&b.action.key(lms)))
}

/// Score-maximizing feasible action; keeps the current placement if the
/// feasible set is somehow empty.
pub fn dpp_select(node: &NodeSnapshot, lms: &[LmTypeSpec], params: &DppParams) -> DppChoice {
    let price = dpp_gpu_price(node, lms, params);
    let mut best: Option<DppChoice> = None;
    for action in dpp_feasible_actions(node, lms, params) {
        let c = dpp_evaluate(node, &action, lms, params, price);
        best = match best {
            None => Some(c),
            Some(b) => {
                if c.score > b.score + SCORE_TIE
                    || ((c.score - b.score).abs() <= SCORE_TIE
                        && tie_order(&c, &b, lms) == Ordering::Less)
                {
                    Some(c)
                } else {
                    Some(b)
                }
            }
        };
    }
    best.unwrap_or_else(|| dpp_evaluate(node, &node.committed.clone(), lms, params, price))
}

pub struct DppDeployer {
    params: DppParams,
}

impl DppDeployer {
    pub fn new(params: DppParams) -> Self {
        Self { params }
    }
}

impl Deployer for DppDeployer {
    fn deploy(
        &mut self,
        ctx: &DeployContext<'_>,
        node: &NodeSnapshot,
    ) -> Result<DeploymentAction, PolicyError> {
        Ok(dpp_select(node, &ctx.config.lms, &self.params).action)
    }
}

/// Random routing with DPP deployment under the given parameters.
pub fn rl_strategy(params: DppParams, seed: u64) -> Strategy {
    Strategy {
        name: "RL".to_string(),
        planner: None,
        router: Box::new(RandomRouter::new(policy_rng(seed, 1))),
        deployer: Box::new(DppDeployer::new(params)),
    }
}

/// Measurements of one randomized-routing episode.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpisodeStats {
    pub mean_latency_s: f64,
    pub first_half_latency_s: f64,
    pub second_half_latency_s: f64,
    /// Mean vGPU residual over GPU nodes and slot boundaries.
    pub gpu_headroom: f64,
    /// Activation flips per node per simulated hour.
    pub flips_per_node_hour: f64,
}

/// Runs `slots` slots of random routing with DPP deployment.
pub fn run_episode(config: &SimConfig, params: &DppParams, seed: u64, slots: u64) -> EpisodeStats {
    let mut c = config.clone();
    c.dpp = params.clone();
    c.slots_per_epoch = slots.max(1) as u32;
    let workload = WorkloadSource::generated(&c, seed);
    let mut sim = Simulation::new(c.clone(), rl_strategy(params.clone(), seed), workload);
    let (mut headroom, mut samples) = (0.0, 0usize);
    sim.run_epoch_observed(&mut |_, out| {
        for n in out.snapshot.nodes.values().filter(|n| n.spec.vgpu_units > 0) {
            let u = action_usage(&n.committed, &c.lms);
            headroom += residuals(&n.spec, &u).gpu;
            samples += 1;
        }
    });
    let horizon = slots as f64 * c.slot_seconds;
    let mid = horizon / 2.0;
    let mean = |rows: Vec<f64>| {
        if rows.is_empty() {
            0.0
        } else {
            rows.iter().sum::<f64>() / rows.len() as f64
        }
    };
    let rows = sim.world.final_rows();
    let succ = |f: &dyn Fn(f64) -> bool| {
        mean(rows
            .iter()
            .filter(|r| r.succeeded() && f(r.arrival_s))
            .map(|r| r.t_q)
            .collect())
    };
    let nodes = c.worker_ids().len().max(1) as f64;
    EpisodeStats {
        mean_latency_s: succ(&|_| true),
        first_half_latency_s: succ(&|t| t < mid),
        second_half_latency_s: succ(&|t| t >= mid),
        gpu_headroom: if samples == 0 { 0.0 } else { headroom / samples as f64 },
        flips_per_node_hour: sim.world.flips() as f64 / nodes / (horizon / 3600.0),
    }
}

/// Knobs of the offline calibration loop.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationSettings {
    pub iterations: u32,
    /// Additive nudge applied to each adjusted parameter.
    pub step: f64,
    pub slots_per_episode: u64,
    /// Latency is "growing" when the second half exceeds the first by this factor.
    pub latency_growth: f64,
    /// GPU headroom above this counts as idle capacity.
    pub headroom_threshold: f64,
    pub max_flips_per_node_hour: f64,
}

impl Default for CalibrationSettings {
    fn default() -> Self {
        Self {
            iterations: 5,
            step: 0.02,
            slots_per_episode: 50,
            latency_growth: 1.05,
            headroom_threshold: 0.5,
            max_flips_per_node_hour: 6.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationRow {
    pub iteration: u32,
    pub p1: f64,
    pub p2: f64,
    pub lambda_churn: f64,
    pub kappa: f64,
    pub mean_latency_s: f64,
    pub gpu_headroom: f64,
    pub flips_per_node_hour: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Calibration {
    pub params: DppParams,
    pub trajectory: Vec<CalibrationRow>,
}

impl Calibration {
    pub fn write_trajectory<W: Write>(&self, out: W) -> std::io::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for row in &self.trajectory {
            w.serialize(row).map_err(std::io::Error::other)?;
        }
        w.flush()
    }
}

/// Runs randomized-routing episodes and nudges the price weights up when
/// latency grows while GPUs sit idle, and the churn weights up when
/// placements flip too often. Parameters only ever increase.
pub fn calibrate_dpp(config: &SimConfig, seed: u64, settings: &CalibrationSettings) -> Calibration {
    let mut params = config.dpp.clone();
    let mut trajectory = Vec::new();
    for iteration in 0..settings.iterations {
        let stats = run_episode(config, &params, seed, settings.slots_per_episode);
        trajectory.push(CalibrationRow {
            iteration,
            p1: params.p1,
            p2: params.p2,
            lambda_churn: params.lambda_churn,
            kappa: params.kappa,
            mean_latency_s: stats.mean_latency_s,
            gpu_headroom: stats.gpu_headroom,
            flips_per_node_hour: stats.flips_per_node_hour,
        });
        if settings.step == 0.0 {
            continue;
        }
        let growing = stats.second_half_latency_s > stats.first_half_latency_s * settings.latency_growth;
        if growing && stats.gpu_headroom > settings.headroom_threshold {
            params.p1 += settings.step;
            params.p2 += settings.step;
        }
        if stats.flips_per_node_hour > settings.max_flips_per_node_hour {
            params.lambda_churn += settings.step;
            params.kappa += settings.step;
        }
    }
    Calibration { params, trajectory }
}
