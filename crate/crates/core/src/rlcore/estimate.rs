//! State-action value estimates at chunk boundaries.
//!
//! Boundary `b` stands for the prefix `a_1 … a_b`. For `b < T` the value is the reward of the
//! prefix completed by a rollout, scored without EOS; for `b = T` it is the trajectory's own
//! reward scored with EOS, since only the last chunk's advantage counts the end token.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::NStep;
use crate::corpus::Token;
use crate::error::{Error, Result};
use crate::metrics::SequenceReward;
use crate::policy::{DecodingState, Policy, Strategy, Trajectory};
use crate::seed;
use crate::tapegrad::Scalar;

pub const DEFAULT_K: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Estimator {
    /// One greedy completion per boundary.
    MaxPro,
    /// Mean reward of `K` multinomial completions.
    KRollout(usize),
    /// Full enumeration of completions; only feasible for tiny vocabularies and lengths.
    Exact,
}

impl Estimator {
    pub fn k(self) -> Option<usize> {
        match self {
            Estimator::KRollout(k) => Some(k),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Estimator::MaxPro => "maxpro",
            Estimator::KRollout(_) => "krollout",
            Estimator::Exact => "exact",
        }
    }

    /// Parses `maxpro`, `krollout` (with `k`), or `exact`.
    pub fn parse(name: &str, k: usize) -> Result<Self> {
        match name.trim() {
            "maxpro" => Ok(Estimator::MaxPro),
            "krollout" | "sample" if k >= 1 => Ok(Estimator::KRollout(k)),
            "krollout" | "sample" => Err(Error::Usage("K must be at least 1".into())),
            "exact" => Ok(Estimator::Exact),
            other => Err(Error::Usage(format!(
                "unknown estimator `{other}` (expected maxpro or krollout)"
            ))),
        }
    }
}

impl fmt::Display for Estimator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Estimator::KRollout(k) => write!(f, "krollout(K={k})"),
            e => f.write_str(e.name()),
        }
    }
}

impl FromStr for Estimator {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Estimator::parse(s, DEFAULT_K)
    }
}

/// Whether a boundary value is computed once and shared by the chunks on both sides of it, or
/// recomputed with fresh rollouts for each chunk that uses it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RolloutReuse {
    #[default]
    Shared,
    FreshPerChunk,
}

/// Q̂ at boundaries `0 ..= T` of one trajectory; unset boundaries are `None`.
#[derive(Debug, Clone, PartialEq)]
pub struct QEstimate {
    pub values: Vec<Option<f64>>,
    pub estimator: Estimator,
}

impl QEstimate {
    pub fn new(t_len: usize, estimator: Estimator) -> Self {
        QEstimate {
            values: vec![None; t_len + 1],
            estimator,
        }
    }

    pub fn get(&self, b: usize) -> Option<f64> {
        self.values.get(b).copied().flatten()
    }

    pub fn set(&mut self, b: usize, v: f64) {
        self.values[b] = Some(v);
    }
}

/// Settings shared by all boundary estimates of a trajectory.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RolloutConfig {
    pub estimator: Estimator,
    pub reuse: RolloutReuse,
    pub max_len: usize,
    pub seed: u64,
}

fn joined(prefix: &[Token], completion: &[Token]) -> Vec<Token> {
    let mut v = Vec::with_capacity(prefix.len() + completion.len());
    v.extend_from_slice(prefix);
    v.extend_from_slice(completion);
    v
}

fn check_boundary<F>(traj: &Trajectory<F>, b: usize) -> Result<()> {
    if b > traj.tokens.len() {
        return Err(Error::Usage(format!(
            "boundary {b} beyond trajectory length {}",
            traj.tokens.len()
        )));
    }
    Ok(())
}

fn terminal_reward<F, R: SequenceReward + ?Sized>(traj: &Trajectory<F>, reward: &R) -> f64 {
    reward.score(&traj.tokens, true)
}

/// Mean reward of `k` multinomial completions of `a_1 … a_b`; rollout `i` is seeded from
/// `(seed, b, i)`.
pub fn estimate_q_krollout<F: Scalar, R: SequenceReward + ?Sized>(
    policy: &Policy<F>,
    traj: &Trajectory<F>,
    b: usize,
    k: usize,
    reward: &R,
    max_len: usize,
    seed: u64,
) -> Result<f64> {
    check_boundary(traj, b)?;
    if k == 0 {
        return Err(Error::Usage("K must be at least 1".into()));
    }
    if b == traj.tokens.len() {
        return Ok(terminal_reward(traj, reward));
    }
    let prefix = &traj.tokens[..b];
    let state = &traj.states[b];
    let scores: Vec<f64> = (0..k)
        .map(|i| {
            let mut rng = seed::rng(seed, &[b as u64, i as u64]);
            let tail = policy.continue_with(state, Strategy::Multinomial, &mut rng, max_len);
            reward.score(&joined(prefix, &tail), false)
        })
        .collect();
    Ok(mean(&scores))
}

pub(crate) fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Reward of `a_1 … a_b` completed greedily.
pub fn estimate_q_maxpro<F: Scalar, R: SequenceReward + ?Sized>(
    policy: &Policy<F>,
    traj: &Trajectory<F>,
    b: usize,
    reward: &R,
    max_len: usize,
) -> Result<f64> {
    check_boundary(traj, b)?;
    if b == traj.tokens.len() {
        return Ok(terminal_reward(traj, reward));
    }
    let tail = policy.continue_with(
        &traj.states[b],
        Strategy::MaxProbability,
        &mut ChaCha8Rng::seed_from_u64(0),
        max_len,
    );
    Ok(reward.score(&joined(&traj.tokens[..b], &tail), false))
}

/// Exact expected reward over all completions of `a_1 … a_b`.
pub fn estimate_q_exact<F: Scalar, R: SequenceReward + ?Sized>(
    policy: &Policy<F>,
    traj: &Trajectory<F>,
    b: usize,
    reward: &R,
    max_len: usize,
) -> Result<f64> {
    check_boundary(traj, b)?;
    if b == traj.tokens.len() {
        return Ok(terminal_reward(traj, reward));
    }
    exact_value(policy, &traj.states[b], reward, max_len, false)
}

/// `Σ_completions π(completion | state) · R(prefix ; completion)` by recursion over the tree.
pub fn exact_value<F: Scalar, R: SequenceReward + ?Sized>(
    policy: &Policy<F>,
    state: &DecodingState<F>,
    reward: &R,
    max_len: usize,
    with_eos: bool,
) -> Result<f64> {
    if state.is_terminal() || state.t() > max_len {
        return Ok(reward.score(&state.tokens()[1..], with_eos));
    }
    let dist = policy.step_distribution(state)?;
    let mut total = 0.0;
    for (j, &p) in dist.iter().enumerate().skip(1) {
        if p == 0.0 {
            continue;
        }
        let next = policy.append(state, Token(j as u32))?;
        total += p * exact_value(policy, &next, reward, max_len, with_eos)?;
    }
    Ok(total)
}

/// Greedy completions of every prefix of one trajectory, sharing work between prefixes.
///
/// If the sampled token `a_{b+1}` is also the argmax at `b`, the greedy completion from `b` is
/// `a_{b+1}` followed by the greedy completion from `b + 1`, so only the first disagreement
/// after `b` needs an actual rollout.
pub struct GreedyCompletions<'a, F> {
    policy: &'a Policy<F>,
    traj: &'a Trajectory<F>,
    max_len: usize,
    rollouts: HashMap<usize, Vec<Token>>,
}

impl<'a, F: Scalar> GreedyCompletions<'a, F> {
    pub fn new(policy: &'a Policy<F>, traj: &'a Trajectory<F>, max_len: usize) -> Self {
        GreedyCompletions {
            policy,
            traj,
            max_len,
            rollouts: HashMap::new(),
        }
    }

    /// The full greedy sequence `a_1 … a_b ; â_{b+1} …`.
    pub fn sequence(&mut self, b: usize) -> Vec<Token> {
        let t = &self.traj.tokens;
        let mut j = b;
        while j < t.len() && t[j] == self.traj.greedy[j] {
            j += 1;
        }
        let mut seq = t[..j].to_vec();
        if j < t.len() {
            let (policy, state, max_len) = (self.policy, &self.traj.states[j], self.max_len);
            let tail = self.rollouts.entry(j).or_insert_with(|| {
                policy.continue_with(
                    state,
                    Strategy::MaxProbability,
                    &mut ChaCha8Rng::seed_from_u64(0),
                    max_len,
                )
            });
            seq.extend_from_slice(tail);
        }
        seq
    }

    /// Number of rollouts actually run so far.
    pub fn rollouts(&self) -> usize {
        self.rollouts.len()
    }
}

/// Q̂ at `boundaries`. Returns the estimate and the number of rollouts performed. `tag`
/// separates the random streams of otherwise identical requests.
pub fn estimate_boundaries<F: Scalar, R: SequenceReward + ?Sized>(
    policy: &Policy<F>,
    traj: &Trajectory<F>,
    boundaries: &[usize],
    cfg: &RolloutConfig,
    reward: &R,
    tag: u64,
) -> Result<(QEstimate, usize)> {
    let t_len = traj.tokens.len();
    let mut q = QEstimate::new(t_len, cfg.estimator);
    let mut rollouts = 0;
    let mut greedy = GreedyCompletions::new(policy, traj, cfg.max_len);
    for &b in boundaries {
        check_boundary(traj, b)?;
        let v = if b == t_len {
            terminal_reward(traj, reward)
        } else {
            match cfg.estimator {
                Estimator::MaxPro => reward.score(&greedy.sequence(b), false),
                Estimator::KRollout(k) => {
                    rollouts += k;
                    estimate_q_krollout(
                        policy,
                        traj,
                        b,
                        k,
                        reward,
                        cfg.max_len,
                        seed::derive(cfg.seed, &[tag]),
                    )?
                }
                Estimator::Exact => estimate_q_exact(policy, traj, b, reward, cfg.max_len)?,
            }
        };
        q.set(b, v);
    }
    if cfg.estimator == Estimator::MaxPro {
        rollouts += greedy.rollouts();
    }
    Ok((q, rollouts))
}

/// Per-token n-step advantages for one trajectory, plus the rollout count.
pub fn estimate_advantages<F: Scalar, R: SequenceReward + ?Sized>(
    policy: &Policy<F>,
    traj: &Trajectory<F>,
    n: NStep,
    cfg: &RolloutConfig,
    reward: &R,
) -> Result<(Vec<f64>, usize)> {
    let t_len = traj.tokens.len();
    match cfg.reuse {
        RolloutReuse::Shared => {
            let (q, rollouts) =
                estimate_boundaries(policy, traj, &n.boundaries(t_len), cfg, reward, 0)?;
            Ok((super::nstep_advantages(t_len, &q, n)?, rollouts))
        }
        RolloutReuse::FreshPerChunk => {
            let mut out = vec![0.0; t_len];
            let mut rollouts = 0;
            let mut t = 1;
            let mut chunk = 0u64;
            while t <= t_len {
                let (lo, hi) = n.chunk(t, t_len);
                let (qlo, r1) =
                    estimate_boundaries(policy, traj, &[lo], cfg, reward, 2 * chunk + 1)?;
                let (qhi, r2) =
                    estimate_boundaries(policy, traj, &[hi], cfg, reward, 2 * chunk + 2)?;
                rollouts += r1 + r2;
                let a = qhi.get(hi).expect("set") - qlo.get(lo).expect("set");
                out[lo..hi].iter_mut().for_each(|x| *x = a);
                t = hi + 1;
                chunk += 1;
            }
            Ok((out, rollouts))
        }
    }
}

/// Sequence-level self-critical advantage computed directly: the sampled sequence's reward
/// (with EOS) minus the reward of a fresh greedy decode of the context (without EOS).
pub fn scst_advantages<F: Scalar, R: SequenceReward + ?Sized>(
    policy: &Policy<F>,
    context: &[f64],
    sampled: &[Token],
    reward: &R,
    max_len: usize,
) -> Result<Vec<f64>> {
    let greedy = policy.greedy_decode(context, max_len)?;
    let a = reward.score(sampled, true) - reward.score(&greedy, false);
    Ok(vec![a; sampled.len()])
}
