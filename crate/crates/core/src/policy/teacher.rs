//! Teacher-forced forward pass on a tape, batched over sequences of unequal length.

use rand::Rng;

use super::{column, Policy};
use crate::corpus::Token;
use crate::error::{Error, Result};
use crate::tapegrad::{Matrix, Scalar, Tape, Var};

/// Sequences to score. `targets[r]` is `a_1 … a_T` for row `r`; the inputs are BOS followed by
/// all but the last target. `weights[r][t]` multiplies the negative log-likelihood of
/// `targets[r][t]`.
#[derive(Debug, Clone)]
pub struct TeacherBatch<'a, F> {
    pub contexts: Vec<&'a [f64]>,
    pub targets: Vec<Vec<Token>>,
    pub weights: Vec<Vec<F>>,
}

impl<'a, F: Scalar> TeacherBatch<'a, F> {
    /// Unit weight on every token.
    pub fn uniform(contexts: Vec<&'a [f64]>, targets: Vec<Vec<Token>>) -> Self {
        let weights = targets.iter().map(|t| vec![F::one(); t.len()]).collect();
        TeacherBatch {
            contexts,
            targets,
            weights,
        }
    }

    fn validate(&self, context_dim: usize, vocab: usize) -> Result<()> {
        let b = self.contexts.len();
        if b == 0 || self.targets.len() != b || self.weights.len() != b {
            return Err(Error::dim(
                "teacher_forced_loss",
                format!(
                    "{} contexts, {} target rows, {} weight rows",
                    b,
                    self.targets.len(),
                    self.weights.len()
                ),
            ));
        }
        for r in 0..b {
            if self.contexts[r].len() != context_dim {
                return Err(Error::dim(
                    "teacher_forced_loss",
                    format!(
                        "context {r} has {} entries, expected {context_dim}",
                        self.contexts[r].len()
                    ),
                ));
            }
            if self.targets[r].len() != self.weights[r].len() {
                return Err(Error::dim(
                    "teacher_forced_loss",
                    format!(
                        "{} targets but {} weights in row {r}",
                        self.targets[r].len(),
                        self.weights[r].len()
                    ),
                ));
            }
            if let Some(bad) = self.targets[r]
                .iter()
                .find(|t| **t == Token::BOS || t.idx() >= vocab)
            {
                return Err(Error::Usage(format!(
                    "target token {bad} cannot be predicted"
                )));
            }
        }
        Ok(())
    }
}

impl<F: Scalar> Policy<F> {
    /// Records `Σ_r Σ_t w_{r,t} · (−log π(a_t | a_{<t}, context_r))` on `tape`. In training mode,
    /// inverted dropout at rate `dropout` is applied to the word embedding and to the hidden state
    /// feeding the output layer.
    pub fn teacher_forced_loss<R: Rng>(
        &self,
        tape: &mut Tape<'_, F>,
        batch: &TeacherBatch<'_, F>,
        dropout: f64,
        rng: &mut R,
    ) -> Result<Var> {
        let cfg = &self.config;
        batch.validate(cfg.context_dim, cfg.vocab_size)?;
        let b = batch.contexts.len();
        let hd = cfg.hidden_dim;
        let ids = &self.ids;

        let ctx_data = batch
            .contexts
            .iter()
            .flat_map(|c| c.iter().map(|&x| F::of(x)))
            .collect();
        let ctx = tape.constant(Matrix::from_vec(b, cfg.context_dim, ctx_data));
        let embed = tape.param(ids.embed);
        let wx = tape.param(ids.lstm_wx);
        let wh = tape.param(ids.lstm_wh);
        let out_w = tape.param(ids.out_w);
        let out_b = tape.param(ids.out_b);

        let affine_tanh = |tape: &mut Tape<'_, F>, x: Var, w, bias| -> Result<Var> {
            let w = tape.param(w);
            let bias = tape.param(bias);
            let z = tape.matmul(x, w)?;
            let z = tape.add_row(z, bias)?;
            tape.tanh(z)
        };
        let ctxp = affine_tanh(tape, ctx, ids.ctx_w, ids.ctx_b)?;
        let wc = tape.param(ids.lstm_wc);
        let lb = tape.param(ids.lstm_b);
        let ctx_gate = tape.matmul(ctxp, wc)?;
        let ctx_gate = tape.add_row(ctx_gate, lb)?;
        let mut h = affine_tanh(tape, ctx, ids.init_h_w, ids.init_h_b)?;
        let mut c = affine_tanh(tape, ctx, ids.init_c_w, ids.init_c_b)?;

        let steps = batch.targets.iter().map(Vec::len).max().unwrap_or(0);
        let mut total: Option<Var> = None;
        for t in 0..steps {
            let inputs: Vec<usize> = batch
                .targets
                .iter()
                .map(|tg| match t {
                    0 => Token::BOS.idx(),
                    _ => tg.get(t - 1).copied().unwrap_or(Token::EOS).idx(),
                })
                .collect();
            let x = tape.embed(embed, &inputs)?;
            let x = tape.dropout(x, dropout, rng)?;
            let zx = tape.matmul(x, wx)?;
            let zh = tape.matmul(h, wh)?;
            let z = tape.add(zx, zh)?;
            let z = tape.add(z, ctx_gate)?;
            let i = tape.slice_cols(z, 0, hd)?;
            let i = tape.sigmoid(i)?;
            let f = tape.slice_cols(z, hd, hd)?;
            let f = tape.sigmoid(f)?;
            let o = tape.slice_cols(z, 2 * hd, hd)?;
            let o = tape.sigmoid(o)?;
            let g = tape.slice_cols(z, 3 * hd, hd)?;
            let g = tape.tanh(g)?;
            let fc = tape.mul(f, c)?;
            let ig = tape.mul(i, g)?;
            c = tape.add(fc, ig)?;
            let tc = tape.tanh(c)?;
            h = tape.mul(o, tc)?;
            let hdrop = tape.dropout(h, dropout, rng)?;
            let logits = tape.matmul(hdrop, out_w)?;
            let logits = tape.add_row(logits, out_b)?;

            let mut cols = Vec::with_capacity(b);
            let mut wts = Vec::with_capacity(b);
            for r in 0..b {
                match batch.targets[r].get(t) {
                    Some(&tok) => {
                        cols.push(column(tok));
                        wts.push(batch.weights[r][t]);
                    }
                    None => {
                        cols.push(0);
                        wts.push(F::zero());
                    }
                }
            }
            let loss = tape.softmax_xent(logits, &cols, Some(&wts))?;
            total = Some(match total {
                None => loss,
                Some(acc) => tape.add(acc, loss)?,
            });
        }
        total.ok_or_else(|| Error::Usage("teacher-forced batch has no tokens".into()))
    }
}
