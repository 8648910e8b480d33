use super::events::EventKind;
use super::world::{SlotOutcome, World};
use crate::agentic::validate::{macro_policy_violations, uniform_policy};
use crate::config::{macro_policy_doc, SimConfig};
use crate::metrics::{build_epoch_telemetry, EpochTelemetry, EpochWindow};
use crate::model::MacroPolicy;
use crate::policy::{PlanContext, Strategy};
use crate::workload::WorkloadSource;

/// A world driven epoch by epoch by one strategy.
pub struct Simulation {
    pub world: World,
    pub strategy: Strategy,
    workload: WorkloadSource,
    telemetry: Vec<EpochTelemetry>,
    policies: Vec<Option<MacroPolicy>>,
}

impl Simulation {
    pub fn new(config: SimConfig, strategy: Strategy, workload: WorkloadSource) -> Self {
        Self {
            world: World::new(config),
            strategy,
            workload,
            telemetry: Vec::new(),
            policies: Vec::new(),
        }
    }

    pub fn config(&self) -> &SimConfig {
        &self.world.config
    }

    pub fn telemetry(&self) -> &[EpochTelemetry] {
        &self.telemetry
    }

    /// Macro policy in force during each completed epoch, if the strategy plans.
    pub fn policies(&self) -> &[Option<MacroPolicy>] {
        &self.policies
    }

    pub fn epoch(&self) -> u64 {
        self.telemetry.len() as u64
    }

    fn plan(&mut self) {
        let epoch = self.epoch();
        let Some(planner) = self.strategy.planner.as_mut() else {
            self.policies.push(None);
            return;
        };
        let now = self.world.now();
        let snapshot = self.world.snapshot();
        let previous = match (self.policies.last(), self.telemetry.last()) {
            (Some(Some(p)), Some(t)) => Some((p, t)),
            _ => None,
        };
        let outcome = planner.plan(&PlanContext {
            config: &self.world.config,
            epoch,
            previous,
            history: &self.telemetry,
            snapshot: &snapshot,
        });
        let events = self.world.events_mut();
        for note in &outcome.notes {
            events.push(now, None, EventKind::PlannerFallback, None, note.clone());
        }
        let violations = macro_policy_violations(&outcome.policy, &self.world.config);
        let policy = if violations.is_empty() {
            outcome.policy
        } else {
            let reasons: Vec<String> = violations.iter().map(ToString::to_string).collect();
            let fallback = match self.policies.last() {
                Some(Some(p)) => p.clone(),
                _ => uniform_policy(&self.world.config),
            };
            self.world.events_mut().push(
                now,
                None,
                EventKind::PlannerFallback,
                None,
                format!("engine rejected macro policy: {}", reasons.join("; ")),
            );
            fallback
        };
        let doc = macro_policy_doc(&policy, &self.world.config);
        let text = serde_json::to_string(&doc).unwrap_or_default();
        self.world
            .events_mut()
            .push(now, None, EventKind::MacroPolicy, None, format!("epoch={epoch} {text}"));
        self.world.set_macro_policy(Some(policy.clone()));
        self.policies.push(Some(policy));
    }

    /// Plans, runs one epoch of slots and records its telemetry.
    pub fn run_epoch(&mut self) -> &EpochTelemetry {
        self.run_epoch_observed(&mut |_, _| {})
    }

    /// Like `run_epoch`, calling `observe` after every slot.
    pub fn run_epoch_observed(
        &mut self,
        observe: &mut dyn FnMut(&World, &SlotOutcome),
    ) -> &EpochTelemetry {
        let epoch = self.epoch();
        self.plan();
        let spe = self.world.config.slots_per_epoch as u64;
        for s in 0..spe {
            let slot = epoch * spe + s;
            let arrivals = self.workload.arrivals(slot);
            let outcome = self.world.run_slot(&arrivals, &mut self.strategy);
            observe(&self.world, &outcome);
        }
        let c = &self.world.config;
        let window = EpochWindow {
            epoch,
            epoch_seconds: c.epoch_seconds(),
            slots_per_epoch: spe,
        };
        let telemetry = build_epoch_telemetry(
            &self.world.ledger(),
            window,
            &c.lm_ids(),
            c.tau_seconds,
            c.lambda_weight,
            self.world.snapshot().node_backlog(),
        );
        self.telemetry.push(telemetry);
        self.telemetry.last().expect("just pushed")
    }

    pub fn run(&mut self, epochs: u64) {
        for _ in 0..epochs {
            self.run_epoch();
        }
    }
}
