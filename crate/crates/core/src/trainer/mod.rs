//! Cross-entropy pretraining, n-step RL fine-tuning and evaluation.
//!
//! Both phases parallelise inside a batch only: items are split into fixed chunks of
//! `grad_chunk`, each chunk builds its own tape and gradient buffer, and the buffers are summed in
//! chunk order. Every random stream is derived from the run seed and the step and item indices,
//! so results do not depend on the thread count.

mod config;
mod eval;
mod record;

use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::Rng;

pub use config::{config_hash, NSchedule, Preset, TrainConfig};
pub use eval::{evaluate, evaluate_sequences, EvalReport};
pub use record::{mask_wallclock, Phase, RunRecord, RunRow, StepLog, RUN_COLUMNS, STEP_COLUMNS};

use crate::corpus::{Dataset, Split, Token};
use crate::error::{Error, Result};
use crate::metrics::{CiderReward, RewardIdf, SequenceReward};
use crate::par::Exec;
use crate::policy::{DecoderConfig, Policy, Strategy, TeacherBatch};
use crate::rlcore::{estimate_advantages, policy_gradient, GradientItem, NStep, RolloutConfig};
use crate::seed;
use crate::tapegrad::{adam_step, AdamState, Grads, Mode, Tape};

/// Training runs in single precision.
pub type TrainPolicy = Policy<f32>;

const TAG_INIT: u64 = 1;
const TAG_XENT_ORDER: u64 = 2;
const TAG_XENT_REF: u64 = 3;
const TAG_XENT_DROP: u64 = 4;
const TAG_RL_ORDER: u64 = 5;
const TAG_RL_SAMPLE: u64 = 6;
const TAG_RL_ROLLOUT: u64 = 7;

/// Fresh decoder sized for `data`.
pub fn init_policy(cfg: &TrainConfig, data: &Dataset) -> Result<TrainPolicy> {
    let mut dc = DecoderConfig::new(
        data.vocab.len(),
        data.context_dim(),
        cfg.embed_dim,
        cfg.hidden_dim,
    );
    dc.init_scale = cfg.init_scale;
    Policy::new(dc, seed::derive(cfg.seed, &[TAG_INIT]))
}

/// Loads a pretrained decoder, reporting a missing file as a configuration problem.
pub fn load_pretrained(path: &Path) -> Result<TrainPolicy> {
    if !path.exists() {
        return Err(Error::Config(format!(
            "pretrained checkpoint {} does not exist; run cross-entropy training first",
            path.display()
        )));
    }
    Ok(Policy::load(path)?.0)
}

/// Sums per-chunk gradients in chunk order. `f` fills the buffer for one chunk and returns its
/// loss contribution.
fn chunked_gradient<G>(
    exec: Exec,
    policy: &TrainPolicy,
    chunks: usize,
    f: G,
) -> Result<(Grads<f32>, f64)>
where
    G: Fn(usize, &mut Grads<f32>) -> Result<f64> + Sync + Send,
{
    let parts: Vec<Result<(Grads<f32>, f64)>> = exec.map_range(chunks, |c| {
        let mut g = Grads::zeros_like(&policy.params.weights);
        let loss = f(c, &mut g)?;
        Ok((g, loss))
    });
    let mut total = Grads::zeros_like(&policy.params.weights);
    let mut loss = 0.0;
    for p in parts {
        let (g, l) = p?;
        total.add_assign(&g);
        loss += l;
    }
    Ok((total, loss))
}

fn apply(
    policy: &mut TrainPolicy,
    adam: &mut AdamState<f32>,
    grads: &Grads<f32>,
    lr: f64,
    what: &str,
) -> Result<()> {
    if !grads.all_finite() {
        return Err(Error::Divergence(format!("non-finite gradient at {what}")));
    }
    policy.params.grads.add_assign(grads);
    adam_step(&mut policy.params, adam, lr);
    if !policy
        .params
        .weights
        .iter()
        .all(|(_, _, t)| t.data.iter().all(|x| x.is_finite()))
    {
        return Err(Error::Divergence(format!(
            "non-finite weights after {what}"
        )));
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct XentOutcome {
    /// Weights with the best validation CIDEr seen at an epoch end.
    pub best: TrainPolicy,
    pub last: TrainPolicy,
    pub best_val_cider: f64,
    pub record: RunRecord,
}

/// Maximum-likelihood training on one randomly chosen reference (plus EOS) per example and epoch.
pub fn train_xent(cfg: &TrainConfig, data: &Dataset) -> Result<XentOutcome> {
    cfg.validate()?;
    let train = data.split(Split::Train);
    if train.is_empty() {
        return Err(Error::Config("split `train` has no examples".into()));
    }
    let mut policy = init_policy(cfg, data)?;
    let mut adam = AdamState::new(&policy.params);
    let mut record = RunRecord::default();
    let start = Instant::now();
    let mut best = (f64::NEG_INFINITY, policy.clone());
    let mut step = 0;
    let b = cfg.xent_batch;

    for epoch in 0..cfg.xent_epochs {
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut seed::rng(cfg.seed, &[TAG_XENT_ORDER, epoch as u64]));
        let (mut loss_sum, mut loss_n) = (0.0, 0);
        for (bi, batch) in order.chunks(b).enumerate() {
            step += 1;
            let targets: Vec<Vec<Token>> = batch
                .iter()
                .map(|&i| {
                    let refs = &train[i].references;
                    let pick = seed::rng(cfg.seed, &[TAG_XENT_REF, epoch as u64, i as u64])
                        .gen_range(0..refs.len());
                    let mut t: Vec<Token> = refs[pick].iter().copied().take(data.max_len).collect();
                    t.push(Token::EOS);
                    t
                })
                .collect();
            let w = 1.0 / batch.len() as f32;
            let chunks = batch.len().div_ceil(cfg.grad_chunk);
            let (grads, loss) = chunked_gradient(cfg.exec, &policy, chunks, |c, g| {
                let lo = c * cfg.grad_chunk;
                let hi = (lo + cfg.grad_chunk).min(batch.len());
                let tb = TeacherBatch {
                    contexts: batch[lo..hi]
                        .iter()
                        .map(|&i| train[i].context.as_slice())
                        .collect(),
                    targets: targets[lo..hi].to_vec(),
                    weights: targets[lo..hi].iter().map(|t| vec![w; t.len()]).collect(),
                };
                let mut tape = Tape::new(&policy.params.weights, Mode::Train);
                let mut rng = seed::rng(
                    cfg.seed,
                    &[TAG_XENT_DROP, epoch as u64, bi as u64, c as u64],
                );
                let l = policy.teacher_forced_loss(&mut tape, &tb, cfg.dropout, &mut rng)?;
                let v = tape.value(l).data[0] as f64;
                tape.backward(l, g)?;
                Ok(v)
            })?;
            if !loss.is_finite() {
                return Err(Error::Divergence(format!(
                    "cross-entropy loss is {loss} at epoch {epoch}, step {step}"
                )));
            }
            apply(
                &mut policy,
                &mut adam,
                &grads,
                cfg.xent_lr,
                &format!("cross-entropy step {step}"),
            )?;
            loss_sum += loss;
            loss_n += 1;
            record.steps.push(StepLog {
                step,
                phase: Phase::Xent,
                n: None,
                estimator: None,
                rollouts: 0,
                reference_tokens: true,
                loss,
                mean_reward: f64::NAN,
            });
        }
        let val = evaluate(&policy, data, Split::Val, cfg.val_limit, cfg.exec)?;
        record.rows.push(RunRow {
            step,
            phase: Phase::Xent,
            n: None,
            estimator: None,
            loss: loss_sum / loss_n.max(1) as f64,
            val_cider: val.cider,
            val_bleu4: val.bleu4(),
            wallclock_s: start.elapsed().as_secs_f64(),
        });
        if val.cider > best.0 {
            best = (val.cider, policy.clone());
        }
    }
    Ok(XentOutcome {
        best: best.1,
        last: policy,
        best_val_cider: best.0,
        record,
    })
}

/// What an RL update is about to use, passed to the observer before the weights change.
#[derive(Debug)]
pub struct RlStepView<'a, R> {
    pub step: usize,
    pub epoch: usize,
    pub n: NStep,
    pub policy: &'a TrainPolicy,
    /// Train-split positions of the batch items.
    pub items: &'a [usize],
    pub tokens: &'a [Vec<Token>],
    pub advantages: &'a [Vec<f64>],
    /// Reward of each batch item.
    pub rewards: Vec<&'a R>,
}

pub type RlObserver<'o, R> = dyn FnMut(&RlStepView<'_, R>) -> Result<()> + 'o;

#[derive(Debug, Clone)]
pub struct RlOutcome {
    pub policy: TrainPolicy,
    pub record: RunRecord,
}

struct Sampled {
    tokens: Vec<Token>,
    advantages: Vec<f64>,
    rollouts: usize,
    reward: f64,
}

/// CIDEr rewards for the training split, with document frequencies frozen from its references.
pub fn train_rewards(data: &Dataset) -> Result<Vec<CiderReward>> {
    let ref_sets: Vec<Vec<Vec<Token>>> = data
        .split(Split::Train)
        .iter()
        .map(|e| e.references.clone())
        .collect();
    if ref_sets.is_empty() {
        return Err(Error::Config("split `train` has no examples".into()));
    }
    let ridf = RewardIdf::fit(&ref_sets)?;
    Ok(ref_sets.iter().map(|r| ridf.reward(r)).collect())
}

/// Policy-gradient fine-tuning from `init` with the CIDEr reward.
pub fn train_rl(
    cfg: &TrainConfig,
    data: &Dataset,
    init: &TrainPolicy,
    observer: Option<&mut RlObserver<'_, CiderReward>>,
) -> Result<RlOutcome> {
    let rewards = train_rewards(data)?;
    train_rl_with(cfg, data, init, &rewards, observer)
}

/// Policy-gradient fine-tuning from `init`. Each update samples one sequence per batch item,
/// estimates its n-step advantages with rollouts and ascends the surrogate. `rewards[i]` scores
/// the i-th training example.
pub fn train_rl_with<R: SequenceReward>(
    cfg: &TrainConfig,
    data: &Dataset,
    init: &TrainPolicy,
    rewards: &[R],
    mut observer: Option<&mut RlObserver<'_, R>>,
) -> Result<RlOutcome> {
    cfg.validate()?;
    let train = data.split(Split::Train);
    if train.is_empty() {
        return Err(Error::Config("split `train` has no examples".into()));
    }
    if rewards.len() != train.len() {
        return Err(Error::Usage(format!(
            "{} rewards for {} training examples",
            rewards.len(),
            train.len()
        )));
    }

    let mut policy = init.clone();
    let mut adam = AdamState::new(&policy.params);
    let mut record = RunRecord::default();
    let start = Instant::now();
    let b = cfg.rl_batch;
    let mut step = 0;
    let (mut loss_sum, mut loss_n) = (0.0, 0);

    let eval_row = |policy: &TrainPolicy,
                    step: usize,
                    n: NStep,
                    loss: f64,
                    record: &mut RunRecord|
     -> Result<()> {
        let val = evaluate(policy, data, Split::Val, cfg.val_limit, cfg.exec)?;
        record.rows.push(RunRow {
            step,
            phase: Phase::Rl,
            n: Some(n),
            estimator: Some(cfg.estimator),
            loss,
            val_cider: val.cider,
            val_bleu4: val.bleu4(),
            wallclock_s: start.elapsed().as_secs_f64(),
        });
        Ok(())
    };
    eval_row(
        &policy,
        0,
        cfg.n_schedule.active(0, data.max_len),
        f64::NAN,
        &mut record,
    )?;

    'epochs: for epoch in 0..cfg.n_schedule.total_epochs() {
        let n = cfg.n_schedule.active(epoch, data.max_len);
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut seed::rng(cfg.seed, &[TAG_RL_ORDER, epoch as u64]));
        for batch in order.chunks(b) {
            if cfg.rl_max_steps > 0 && step >= cfg.rl_max_steps {
                break 'epochs;
            }
            step += 1;
            let sampled: Vec<Result<Sampled>> = cfg.exec.map_range(batch.len(), |i| {
                let e = batch[i];
                let tags = [step as u64, i as u64];
                let traj = policy.sample_trajectory(
                    &train[e].context,
                    Strategy::Multinomial,
                    seed::derive(cfg.seed, &[TAG_RL_SAMPLE, tags[0], tags[1]]),
                    data.max_len,
                )?;
                let rc = RolloutConfig {
                    estimator: cfg.estimator,
                    reuse: cfg.rollout_reuse,
                    max_len: data.max_len,
                    seed: seed::derive(cfg.seed, &[TAG_RL_ROLLOUT, tags[0], tags[1]]),
                };
                let (advantages, rollouts) =
                    estimate_advantages(&policy, &traj, n, &rc, &rewards[e])?;
                let reward = rewards[e].score(&traj.tokens, true);
                Ok(Sampled {
                    tokens: traj.tokens,
                    advantages,
                    rollouts,
                    reward,
                })
            });
            let sampled = sampled.into_iter().collect::<Result<Vec<_>>>()?;
            let tokens: Vec<Vec<Token>> = sampled.iter().map(|s| s.tokens.clone()).collect();
            let advantages: Vec<Vec<f64>> = sampled.iter().map(|s| s.advantages.clone()).collect();

            if let Some(obs) = observer.as_deref_mut() {
                obs(&RlStepView {
                    step,
                    epoch,
                    n,
                    policy: &policy,
                    items: batch,
                    tokens: &tokens,
                    advantages: &advantages,
                    rewards: batch.iter().map(|&e| &rewards[e]).collect(),
                })?;
            }

            let scale = 1.0 / batch.len() as f64;
            let chunks = batch.len().div_ceil(cfg.grad_chunk);
            let (grads, loss) = chunked_gradient(cfg.exec, &policy, chunks, |c, g| {
                let lo = c * cfg.grad_chunk;
                let hi = (lo + cfg.grad_chunk).min(batch.len());
                let items: Vec<GradientItem<'_>> = (lo..hi)
                    .map(|i| GradientItem {
                        context: &train[batch[i]].context,
                        tokens: &tokens[i],
                        advantages: &advantages[i],
                    })
                    .collect();
                policy_gradient(&policy, &items, cfg.normalization, scale, g)
            })?;
            if !loss.is_finite() {
                return Err(Error::Divergence(format!(
                    "surrogate loss is {loss} at RL step {step}"
                )));
            }
            apply(
                &mut policy,
                &mut adam,
                &grads,
                cfg.rl_lr,
                &format!("RL step {step}"),
            )?;
            loss_sum += loss;
            loss_n += 1;
            record.steps.push(StepLog {
                step,
                phase: Phase::Rl,
                n: Some(n),
                estimator: Some(cfg.estimator),
                rollouts: sampled.iter().map(|s| s.rollouts).sum(),
                reference_tokens: false,
                loss,
                mean_reward: sampled.iter().map(|s| s.reward).sum::<f64>() * scale,
            });
            if step % cfg.rl_eval_every == 0 {
                eval_row(&policy, step, n, loss_sum / loss_n as f64, &mut record)?;
                (loss_sum, loss_n) = (0.0, 0);
            }
        }
    }
    if loss_n > 0 {
        let n = record.steps.last().and_then(|s| s.n).unwrap_or(NStep::Full);
        eval_row(&policy, step, n, loss_sum / loss_n as f64, &mut record)?;
    }
    Ok(RlOutcome { policy, record })
}
