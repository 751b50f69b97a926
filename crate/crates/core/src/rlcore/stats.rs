//! Per-timestep statistics of the n-step advantage under the current policy.
//!
//! For each example, `num_rollouts` multinomial trajectories are drawn. Every trajectory gets a
//! value estimate at all of its boundaries once per estimator, and the advantages for every `n`
//! are read off that shared table. At each timestep the mean and sample variance across the
//! trajectories that reach it are taken per example, then `|mean|` and the variance are averaged
//! over examples.

use serde::{Deserialize, Serialize};

use super::{estimate_boundaries, nstep_advantages, Estimator, NStep, RolloutConfig, RolloutReuse};
use crate::error::Result;
use crate::metrics::SequenceReward;
use crate::par::Exec;
use crate::policy::{Policy, Strategy};
use crate::seed;
use crate::table::{fmt_f64, CsvTable};
use crate::tapegrad::Scalar;

pub const ADVSTATS_COLUMNS: [&str; 7] = [
    "estimator",
    "n",
    "K",
    "timestep",
    "abs_mean",
    "variance",
    "num_samples",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdvStatsConfig {
    pub estimators: Vec<Estimator>,
    pub ns: Vec<NStep>,
    /// Trajectories sampled per example.
    pub num_rollouts: usize,
    pub max_len: usize,
    pub seed: u64,
    pub exec: Exec,
}

impl AdvStatsConfig {
    pub fn new(estimators: Vec<Estimator>, max_len: usize, seed: u64) -> Self {
        AdvStatsConfig {
            estimators,
            ns: vec![
                NStep::Fixed(1),
                NStep::Fixed(2),
                NStep::Fixed(4),
                NStep::Full,
            ],
            num_rollouts: 100,
            max_len,
            seed,
            exec: Exec::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdvStatsRow {
    pub estimator: Estimator,
    pub n: NStep,
    pub timestep: usize,
    /// Average over examples of `|mean advantage|`; NaN when no trajectory reaches the step.
    pub abs_mean: f64,
    /// Average over examples of the sample variance; NaN when no example has two samples.
    pub variance: f64,
    pub num_samples: usize,
}

#[derive(Debug, Clone, Copy, Default)]
struct Welford {
    n: usize,
    mean: f64,
    m2: f64,
}

impl Welford {
    fn push(&mut self, x: f64) {
        self.n += 1;
        let d = x - self.mean;
        self.mean += d / self.n as f64;
        self.m2 += d * (x - self.mean);
    }

    fn variance(&self) -> Option<f64> {
        (self.n >= 2).then(|| self.m2 / (self.n - 1) as f64)
    }
}

pub fn advantage_stats<F: Scalar, R: SequenceReward>(
    policy: &Policy<F>,
    contexts: &[&[f64]],
    rewards: &[R],
    cfg: &AdvStatsConfig,
) -> Result<Vec<AdvStatsRow>> {
    assert_eq!(contexts.len(), rewards.len(), "one reward per context");
    let (ne, nn, nt) = (cfg.estimators.len(), cfg.ns.len(), cfg.max_len);
    let cell = |ei: usize, ni: usize, t: usize| (ei * nn + ni) * nt + (t - 1);

    let per_example: Vec<Result<Vec<Welford>>> = cfg.exec.map_range(contexts.len(), |e| {
        let mut acc = vec![Welford::default(); ne * nn * nt];
        for r in 0..cfg.num_rollouts {
            let traj = policy.sample_trajectory(
                contexts[e],
                Strategy::Multinomial,
                seed::derive(cfg.seed, &[e as u64, r as u64]),
                cfg.max_len,
            )?;
            let t_len = traj.tokens.len();
            let all: Vec<usize> = (0..=t_len).collect();
            for (ei, &est) in cfg.estimators.iter().enumerate() {
                let rc = RolloutConfig {
                    estimator: est,
                    reuse: RolloutReuse::Shared,
                    max_len: cfg.max_len,
                    seed: seed::derive(cfg.seed, &[e as u64, r as u64, ei as u64, 1]),
                };
                let (q, _) = estimate_boundaries(policy, &traj, &all, &rc, &rewards[e], 0)?;
                for (ni, &n) in cfg.ns.iter().enumerate() {
                    let adv = nstep_advantages(t_len, &q, n)?;
                    for t in 1..=t_len.min(nt) {
                        acc[cell(ei, ni, t)].push(adv[t - 1]);
                    }
                }
            }
        }
        Ok(acc)
    });

    let mut sum_abs = vec![0.0; ne * nn * nt];
    let mut n_abs = vec![0usize; ne * nn * nt];
    let mut sum_var = vec![0.0; ne * nn * nt];
    let mut n_var = vec![0usize; ne * nn * nt];
    let mut samples = vec![0usize; ne * nn * nt];
    for acc in per_example {
        for (i, w) in acc?.iter().enumerate() {
            if w.n == 0 {
                continue;
            }
            samples[i] += w.n;
            sum_abs[i] += w.mean.abs();
            n_abs[i] += 1;
            if let Some(v) = w.variance() {
                sum_var[i] += v;
                n_var[i] += 1;
            }
        }
    }
    let avg = |s: f64, n: usize| if n == 0 { f64::NAN } else { s / n as f64 };
    let mut rows = Vec::with_capacity(ne * nn * nt);
    for (ei, &estimator) in cfg.estimators.iter().enumerate() {
        for (ni, &n) in cfg.ns.iter().enumerate() {
            for t in 1..=nt {
                let i = cell(ei, ni, t);
                rows.push(AdvStatsRow {
                    estimator,
                    n,
                    timestep: t,
                    abs_mean: avg(sum_abs[i], n_abs[i]),
                    variance: avg(sum_var[i], n_var[i]),
                    num_samples: samples[i],
                });
            }
        }
    }
    Ok(rows)
}

pub fn advstats_table(rows: &[AdvStatsRow], config_hash: &str) -> CsvTable {
    let mut t = CsvTable::new(config_hash, &ADVSTATS_COLUMNS);
    for r in rows {
        t.push(vec![
            r.estimator.name().to_string(),
            r.n.to_string(),
            r.estimator.k().map(|k| k.to_string()).unwrap_or_default(),
            r.timestep.to_string(),
            fmt_f64(r.abs_mean),
            fmt_f64(r.variance),
            r.num_samples.to_string(),
        ]);
    }
    t
}

/// Fraction of timesteps (among those with data for every `n`) at which `|mean|` is
/// nondecreasing and the variance nonincreasing along `ns`, for one estimator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrendSummary {
    pub timesteps: usize,
    pub mean_monotone: usize,
    pub variance_monotone: usize,
}

impl TrendSummary {
    pub fn mean_fraction(&self) -> f64 {
        self.mean_monotone as f64 / self.timesteps.max(1) as f64
    }

    pub fn variance_fraction(&self) -> f64 {
        self.variance_monotone as f64 / self.timesteps.max(1) as f64
    }
}

pub fn trend_summary(rows: &[AdvStatsRow], estimator: Estimator, ns: &[NStep]) -> TrendSummary {
    let max_t = rows.iter().map(|r| r.timestep).max().unwrap_or(0);
    let mut s = TrendSummary {
        timesteps: 0,
        mean_monotone: 0,
        variance_monotone: 0,
    };
    for t in 1..=max_t {
        let col: Option<Vec<&AdvStatsRow>> = ns
            .iter()
            .map(|&n| {
                rows.iter()
                    .find(|r| r.estimator == estimator && r.n == n && r.timestep == t)
                    .filter(|r| r.abs_mean.is_finite() && r.variance.is_finite())
            })
            .collect();
        let Some(col) = col else { continue };
        s.timesteps += 1;
        if col.windows(2).all(|w| w[1].abs_mean >= w[0].abs_mean) {
            s.mean_monotone += 1;
        }
        if col.windows(2).all(|w| w[1].variance <= w[0].variance) {
            s.variance_monotone += 1;
        }
    }
    s
}
