//! Greedy per-delivery controller: each delivery ranks items by relevance
//! plus a bonus proportional to their group's exposure deficit so far.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::expohedron::descending_order;
use crate::expohedron::max_utility;
use crate::model::{dot, Permutation, QueryInstance};

/// Aggregated delivery history.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CtrlState {
    pub cumulative_group_exposure: Vec<f64>,
    pub deliveries_done: usize,
}

impl CtrlState {
    pub fn new(n_groups: usize) -> Self {
        CtrlState {
            cumulative_group_exposure: vec![0.0; n_groups],
            deliveries_done: 0,
        }
    }

    fn record(&mut self, instance: &QueryInstance, exposure: &[f64]) {
        for (c, e) in self
            .cumulative_group_exposure
            .iter_mut()
            .zip(instance.aggregate(exposure))
        {
            *c += e;
        }
        self.deliveries_done += 1;
    }

    /// `|cumulative / deliveries - target|`; zero before any delivery.
    pub fn unfairness(&self, instance: &QueryInstance) -> f64 {
        if self.deliveries_done == 0 {
            return 0.0;
        }
        let t = self.deliveries_done as f64;
        self.cumulative_group_exposure
            .iter()
            .zip(&instance.target_exposure)
            .map(|(c, e)| (c / t - e).powi(2))
            .sum::<f64>()
            .sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct CtrlStep {
    pub step: usize,
    pub step_utility: f64,
    pub ndcg: f64,
    pub cumulative_unfairness: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CtrlOutcome {
    /// Delivered rankings; empty unless requested.
    pub deliveries: Vec<Permutation>,
    pub trajectory: Vec<CtrlStep>,
    pub state: CtrlState,
    pub final_ndcg: f64,
    pub final_unfairness: f64,
}

/// Simulates `horizon` deliveries with gain `gain`.
pub fn ctrl_simulate(
    instance: &QueryInstance,
    gain: f64,
    horizon: usize,
    keep_deliveries: bool,
) -> Result<CtrlOutcome> {
    if horizon == 0 {
        return Err(Error::InvalidGrid("horizon must be at least 1".into()));
    }
    if gain.is_nan() || gain < 0.0 {
        return Err(Error::InvalidGrid(format!(
            "gain {gain} must be non-negative"
        )));
    }
    let gamma = instance.gamma();
    let u_prp = max_utility(&instance.relevance, gamma);
    let sizes = instance.group_sizes();
    let mut state = CtrlState::new(instance.n_groups());
    let mut deliveries = Vec::new();
    let mut trajectory = Vec::with_capacity(horizon);
    let mut ndcg_sum = 0.0;
    let mut scores = vec![0.0; instance.n()];
    for step in 1..=horizon {
        let elapsed = (step - 1) as f64;
        for (i, s) in scores.iter_mut().enumerate() {
            let g = instance.group_of[i];
            let deficit =
                instance.target_exposure[g] * elapsed - state.cumulative_group_exposure[g];
            *s = instance.relevance[i] + gain * deficit / sizes[g] as f64;
        }
        let ranking = descending_order(&scores);
        let perm = Permutation::from_ranking(&ranking)?;
        let exposure = perm.exposure(gamma);
        let u = dot(&exposure, &instance.relevance);
        let ndcg = (u / u_prp).min(1.0);
        ndcg_sum += ndcg;
        state.record(instance, &exposure);
        trajectory.push(CtrlStep {
            step,
            step_utility: u,
            ndcg,
            cumulative_unfairness: state.unfairness(instance),
        });
        if keep_deliveries {
            deliveries.push(perm);
        }
    }
    Ok(CtrlOutcome {
        deliveries,
        final_ndcg: (ndcg_sum / horizon as f64).min(1.0),
        final_unfairness: state.unfairness(instance),
        trajectory,
        state,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct TrajectoryRow {
    pub query_id: String,
    pub lambda: f64,
    pub step: usize,
    pub step_utility: f64,
    pub cumulative_unfairness: f64,
}

pub fn trajectory_rows(
    instance: &QueryInstance,
    gain: f64,
    outcome: &CtrlOutcome,
) -> Vec<TrajectoryRow> {
    outcome
        .trajectory
        .iter()
        .map(|s| TrajectoryRow {
            query_id: instance.query_id.clone(),
            lambda: gain,
            step: s.step,
            step_utility: s.step_utility,
            cumulative_unfairness: s.cumulative_unfairness,
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{norm, TargetPolicy};

    fn toy2() -> QueryInstance {
        QueryInstance::new(
            "toy2",
            vec![1.0, 0.2],
            vec![0, 1],
            vec![1.0, 0.5],
            &TargetPolicy::SizeProportional,
        )
        .unwrap()
    }

    #[test]
    fn zero_gain_is_prp() {
        let out = ctrl_simulate(&toy2(), 0.0, 50, true).unwrap();
        assert_eq!(out.final_ndcg, 1.0);
        assert!(out.deliveries.iter().all(|p| p.ranking() == vec![0, 1]));
    }

    #[test]
    fn first_delivery_is_prp() {
        let out = ctrl_simulate(&toy2(), 37.0, 1, true).unwrap();
        assert_eq!(out.deliveries[0].ranking(), vec![0, 1]);
    }

    #[test]
    fn toy2_converges_to_target() {
        let inst = toy2();
        let out = ctrl_simulate(&inst, 10.0, 1000, false).unwrap();
        assert!(out.final_unfairness <= 0.05 * norm(&inst.target_exposure));
    }

    #[test]
    fn bookkeeping_matches_recomputation() {
        let inst = QueryInstance::new(
            "q",
            vec![0.9, 0.1, 0.5, 0.7],
            vec![0, 1, 1, 0],
            crate::model::dcg_weights(4),
            &TargetPolicy::Merit,
        )
        .unwrap();
        let out = ctrl_simulate(&inst, 3.0, 200, true).unwrap();
        let mut direct = [0.0; 2];
        for p in &out.deliveries {
            for (d, e) in direct
                .iter_mut()
                .zip(inst.aggregate(&p.exposure(inst.gamma())))
            {
                *d += e;
            }
        }
        for (a, b) in direct.iter().zip(&out.state.cumulative_group_exposure) {
            assert!((a - b).abs() < 1e-9);
        }
        assert!(out.trajectory.iter().all(|s| s.ndcg <= 1.0 + 1e-12));
    }

    #[test]
    fn rejects_zero_horizon() {
        assert!(ctrl_simulate(&toy2(), 1.0, 0, false).is_err());
    }
}
