use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::Token;
use crate::error::{Error, Result};
use crate::policy::{Policy, TeacherBatch};
use crate::tapegrad::{Grads, Mode, Scalar, Tape};

/// How per-token terms are weighted in the surrogate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Normalization {
    /// `−(1/T) Σ_t Â_t log π(a_t|s_t)`, the per-trajectory mean.
    #[default]
    PerToken,
    /// `−Σ_t Â_t log π(a_t|s_t)`. This is the unbiased score-function form when `T` varies.
    Sum,
}

/// One sampled sequence and its advantages.
#[derive(Debug, Clone, Copy)]
pub struct GradientItem<'a> {
    pub context: &'a [f64],
    pub tokens: &'a [Token],
    pub advantages: &'a [f64],
}

/// Accumulates `∇θ` of the surrogate `Σ_items scale · −w_T Σ_t Â_t log π(a_t|s_t)` into `grads`,
/// with advantages held constant. The forward pass is a fresh teacher-forced replay of the
/// sampled tokens without dropout. Returns the surrogate value.
pub fn policy_gradient<F: Scalar>(
    policy: &Policy<F>,
    items: &[GradientItem<'_>],
    norm: Normalization,
    scale: f64,
    grads: &mut Grads<F>,
) -> Result<f64> {
    if items.is_empty() {
        return Ok(0.0);
    }
    let mut weights = Vec::with_capacity(items.len());
    for (i, it) in items.iter().enumerate() {
        if it.advantages.len() != it.tokens.len() {
            return Err(Error::Usage(format!(
                "item {i}: {} advantages for {} tokens",
                it.advantages.len(),
                it.tokens.len()
            )));
        }
        let per = match norm {
            Normalization::PerToken => scale / it.tokens.len() as f64,
            Normalization::Sum => scale,
        };
        weights.push(it.advantages.iter().map(|&a| F::of(a * per)).collect());
    }
    let batch = TeacherBatch {
        contexts: items.iter().map(|it| it.context).collect(),
        targets: items.iter().map(|it| it.tokens.to_vec()).collect(),
        weights,
    };
    let mut tape = Tape::new(&policy.params.weights, Mode::Eval);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let loss = policy.teacher_forced_loss(&mut tape, &batch, 0.0, &mut rng)?;
    let value = tape.value(loss).data[0].f64();
    tape.backward(loss, grads)?;
    Ok(value)
}
