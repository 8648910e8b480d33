//! Episodic memory of past epochs for the planner.

use crate::metrics::EpochTelemetry;
use crate::model::{LmId, MacroPolicy};

#[derive(Debug, Clone, PartialEq)]
pub struct HistoryCase {
    pub telemetry: EpochTelemetry,
    pub policy: MacroPolicy,
}

impl HistoryCase {
    pub fn epoch(&self) -> u64 {
        self.telemetry.epoch
    }

    pub fn objective(&self) -> f64 {
        self.telemetry.objective
    }
}

#[derive(Debug, Clone, Default)]
pub struct EpisodicMemory {
    cases: Vec<HistoryCase>,
}

impl EpisodicMemory {
    pub fn record_case(&mut self, telemetry: EpochTelemetry, policy: MacroPolicy) {
        self.cases.push(HistoryCase { telemetry, policy });
    }

    pub fn len(&self) -> usize {
        self.cases.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cases.is_empty()
    }

    pub fn last(&self) -> Option<&HistoryCase> {
        self.cases.last()
    }

    /// Lowest objective seen; the most recent wins ties.
    pub fn best(&self) -> Option<&HistoryCase> {
        self.cases
            .iter()
            .rev()
            .min_by(|a, b| a.objective().total_cmp(&b.objective()))
    }

    /// Up to `k` cases: the best, the worst, then the nearest neighbours of
    /// `mix` by arrival mix. Recency breaks ties throughout.
    pub fn retrieve_cases(&self, mix: &[f64], lms: &[LmId], k: usize) -> Vec<&HistoryCase> {
        let mut picked: Vec<usize> = Vec::new();
        if k == 0 || self.cases.is_empty() {
            return Vec::new();
        }
        let newest_first: Vec<usize> = (0..self.cases.len()).rev().collect();
        let best = newest_first
            .iter()
            .copied()
            .min_by(|a, b| self.cases[*a].objective().total_cmp(&self.cases[*b].objective()));
        let worst = newest_first
            .iter()
            .copied()
            .max_by(|a, b| {
                self.cases[*a]
                    .objective()
                    .total_cmp(&self.cases[*b].objective())
                    .then(a.cmp(b))
            });
        for i in [best, worst].into_iter().flatten() {
            if picked.len() < k && !picked.contains(&i) {
                picked.push(i);
            }
        }
        let dist = |i: usize| -> f64 {
            let other = self.cases[i].telemetry.arrival_mix(lms);
            mix.iter()
                .zip(&other)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
        };
        let mut rest: Vec<usize> = newest_first
            .into_iter()
            .filter(|i| !picked.contains(i))
            .collect();
        rest.sort_by(|a, b| dist(*a).total_cmp(&dist(*b)).then(b.cmp(a)));
        for i in rest {
            if picked.len() >= k {
                break;
            }
            picked.push(i);
        }
        picked.into_iter().map(|i| &self.cases[i]).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::LmTelemetry;
    use std::collections::BTreeMap;

    fn case(epoch: u64, objective: f64, arrived: [u64; 2]) -> (EpochTelemetry, MacroPolicy) {
        let per_lm: BTreeMap<LmId, LmTelemetry> = [(LmId(1), arrived[0]), (LmId(2), arrived[1])]
            .into_iter()
            .map(|(lm, a)| {
                (
                    lm,
                    LmTelemetry {
                        arrived: a,
                        ..Default::default()
                    },
                )
            })
            .collect();
        let t = EpochTelemetry {
            epoch,
            per_lm,
            global_mean_latency_s: None,
            f_norm: 1.0,
            jain: 1.0,
            t_norm: 0.0,
            objective,
            off_role_ratio: 0.0,
            routed: 0,
            completed: 0,
            failed: 0,
            node_backlog: BTreeMap::new(),
            no_data: false,
            latency_no_data: false,
        };
        (t, MacroPolicy::default())
    }

    #[test]
    fn retrieval_order_and_ties() {
        let mut m = EpisodicMemory::default();
        for (e, o, a) in [
            (0, 0.5, [10, 10]),
            (1, 0.2, [10, 0]),
            (2, 0.9, [0, 10]),
            (3, 0.2, [5, 5]),
            (4, 0.4, [9, 1]),
        ] {
            let (t, p) = case(e, o, a);
            m.record_case(t, p);
        }
        let lms = [LmId(1), LmId(2)];
        let got: Vec<u64> = m
            .retrieve_cases(&[1.0, 0.0], &lms, 4)
            .iter()
            .map(|c| c.epoch())
            .collect();
        // Best ties between epochs 1 and 3: the newer one wins.
        assert_eq!(got, vec![3, 2, 1, 4]);
        assert_eq!(m.best().unwrap().epoch(), 3);
        assert_eq!(m.retrieve_cases(&[1.0, 0.0], &lms, 1).len(), 1);
        assert!(EpisodicMemory::default().retrieve_cases(&[], &lms, 4).is_empty());
    }
}
