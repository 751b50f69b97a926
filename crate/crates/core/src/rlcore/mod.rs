//! Reward semantics, rollout value estimates, n-step reformulated advantages and the
//! policy-gradient surrogate.
//!
//! Rewards are terminal only and undiscounted: `r_t = 0` for `t < T` and `r_T = R(a_{1:T})`.
//! Under the deterministic transition of a decoder, the value of a state equals the state-action
//! value of the step that produced it, so a per-token advantage is a difference of two
//! state-action values. Here those values are estimated at chunk boundaries by rollouts.

mod estimate;
mod gradient;
mod nstep;
mod stats;

pub use estimate::{
    estimate_advantages, estimate_boundaries, estimate_q_exact, estimate_q_krollout,
    estimate_q_maxpro, exact_value, scst_advantages, Estimator, GreedyCompletions, QEstimate,
    RolloutConfig, RolloutReuse, DEFAULT_K,
};
pub use gradient::{policy_gradient, GradientItem, Normalization};
pub use nstep::{nstep_advantages, NStep};
pub use stats::{
    advantage_stats, advstats_table, trend_summary, AdvStatsConfig, AdvStatsRow, TrendSummary,
    ADVSTATS_COLUMNS,
};

/// Terminal-only, undiscounted reward.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RewardSpec {
    pub gamma: f64,
}

impl Default for RewardSpec {
    fn default() -> Self {
        RewardSpec { gamma: 1.0 }
    }
}

impl RewardSpec {
    /// Per-step rewards `r_1 … r_T` for a sequence whose terminal reward is `r`.
    pub fn per_step(&self, t_len: usize, r: f64) -> Vec<f64> {
        let mut v = vec![0.0; t_len];
        if let Some(last) = v.last_mut() {
            *last = r;
        }
        v
    }

    /// `Σ_t γ^{t−1} r_t` from step `from` onwards (1-based).
    pub fn return_from(&self, rewards: &[f64], from: usize) -> f64 {
        rewards
            .iter()
            .skip(from.saturating_sub(1))
            .enumerate()
            .map(|(k, r)| self.gamma.powi(k as i32) * r)
            .sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sparse_undiscounted_return_is_terminal_reward() {
        let spec = RewardSpec::default();
        let r = spec.per_step(5, 0.7);
        assert_eq!(r, vec![0.0, 0.0, 0.0, 0.0, 0.7]);
        for t in 1..=5 {
            assert_eq!(spec.return_from(&r, t), 0.7);
        }
    }
}
