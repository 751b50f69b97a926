//! Tape-free decoding. Every value here is produced by the same kernels, in the same order, as
//! the teacher-forced tape forward, so the two agree bit for bit.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{column, token_of, Policy};
use crate::corpus::Token;
use crate::error::{Error, Result};
use crate::tapegrad::matrix::{log_sum_exp, matmul, sigmoid};
use crate::tapegrad::{Matrix, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Strategy {
    Multinomial,
    MaxProbability,
}

/// The prefix `{context, a_0 = BOS, a_1, …, a_t}` together with the recurrent state after
/// consuming it.
#[derive(Debug, Clone, PartialEq)]
pub struct DecodingState<F> {
    tokens: Vec<Token>,
    h: Matrix<F>,
    c: Matrix<F>,
    ctx_gate: Arc<Matrix<F>>,
    terminal: bool,
}

impl<F: Scalar> DecodingState<F> {
    /// Number of tokens after BOS.
    pub fn t(&self) -> usize {
        self.tokens.len() - 1
    }

    /// `a_0 … a_t`, starting with BOS.
    pub fn tokens(&self) -> &[Token] {
        &self.tokens
    }

    pub fn hidden(&self) -> &[F] {
        &self.h.data
    }

    pub fn cell(&self) -> &[F] {
        &self.c.data
    }

    pub fn is_terminal(&self) -> bool {
        self.terminal
    }
}

/// A sampled sequence `a_1 … a_T`, ending in EOS unless truncated.
#[derive(Debug, Clone)]
pub struct Trajectory<F> {
    pub tokens: Vec<Token>,
    /// `log π(a_t | s_{t−1})` for each token.
    pub logprobs: Vec<f64>,
    /// The argmax token at each visited state, `greedy[b]` being the choice after `a_1 … a_b`.
    pub greedy: Vec<Token>,
    /// `states[b]` is the state after `a_1 … a_b`, for `b = 0 … T`.
    pub states: Vec<DecodingState<F>>,
    pub truncated: bool,
    pub strategy: Strategy,
    pub seed: u64,
}

impl<F: Scalar> Trajectory<F> {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn ends_with_eos(&self) -> bool {
        self.tokens.last() == Some(&Token::EOS)
    }
}

fn add_row_in_place<F: Scalar>(m: &mut Matrix<F>, bias: &Matrix<F>) {
    for r in 0..m.rows {
        for (x, &b) in m.row_mut(r).iter_mut().zip(&bias.data) {
            *x += b;
        }
    }
}

fn affine_tanh<F: Scalar>(x: &Matrix<F>, w: &Matrix<F>, b: &Matrix<F>) -> Matrix<F> {
    let mut z = matmul(x, w);
    add_row_in_place(&mut z, b);
    for v in &mut z.data {
        *v = v.tanh();
    }
    z
}

/// First index of the maximum, so ties go to the lowest token id.
fn argmax<F: Scalar>(row: &[F]) -> usize {
    let mut best = 0;
    for (j, &x) in row.iter().enumerate().skip(1) {
        if x > row[best] {
            best = j;
        }
    }
    best
}

impl<F: Scalar> Policy<F> {
    pub fn init_state(&self, context: &[f64]) -> Result<DecodingState<F>> {
        if context.len() != self.config.context_dim {
            return Err(Error::dim(
                "init_state",
                format!(
                    "context has {} entries, expected {}",
                    context.len(),
                    self.config.context_dim
                ),
            ));
        }
        let w = &self.params.weights;
        let ids = &self.ids;
        let ctx = Matrix::row_vector(context.iter().map(|&x| F::of(x)).collect());
        let ctxp = affine_tanh(&ctx, w.get(ids.ctx_w), w.get(ids.ctx_b));
        let mut ctx_gate = matmul(&ctxp, w.get(ids.lstm_wc));
        add_row_in_place(&mut ctx_gate, w.get(ids.lstm_b));
        let h = affine_tanh(&ctx, w.get(ids.init_h_w), w.get(ids.init_h_b));
        let c = affine_tanh(&ctx, w.get(ids.init_c_w), w.get(ids.init_c_b));
        let mut state = DecodingState {
            tokens: Vec::new(),
            h,
            c,
            ctx_gate: Arc::new(ctx_gate),
            terminal: false,
        };
        self.lstm_step(&mut state, Token::BOS);
        state.tokens.push(Token::BOS);
        Ok(state)
    }

    fn lstm_step(&self, state: &mut DecodingState<F>, tok: Token) {
        let w = &self.params.weights;
        let hd = self.config.hidden_dim;
        let x = Matrix::row_vector(w.get(self.ids.embed).row(tok.idx()).to_vec());
        let zx = matmul(&x, w.get(self.ids.lstm_wx));
        let zh = matmul(&state.h, w.get(self.ids.lstm_wh));
        let z: Vec<F> = zx
            .data
            .iter()
            .zip(&zh.data)
            .zip(&state.ctx_gate.data)
            .map(|((&a, &b), &g)| (a + b) + g)
            .collect();
        for k in 0..hd {
            let i = sigmoid(z[k]);
            let f = sigmoid(z[hd + k]);
            let o = sigmoid(z[2 * hd + k]);
            let g = z[3 * hd + k].tanh();
            let c = f * state.c.data[k] + i * g;
            state.c.data[k] = c;
            state.h.data[k] = o * c.tanh();
        }
    }

    /// Unnormalised scores for every token but BOS.
    pub fn logits(&self, state: &DecodingState<F>) -> Matrix<F> {
        let w = &self.params.weights;
        let mut z = matmul(&state.h, w.get(self.ids.out_w));
        add_row_in_place(&mut z, w.get(self.ids.out_b));
        z
    }

    /// `π(· | state)` over the full vocabulary; the BOS entry is always 0.
    pub fn step_distribution(&self, state: &DecodingState<F>) -> Result<Vec<f64>> {
        if state.terminal {
            return Err(Error::Usage("step_distribution on a terminal state".into()));
        }
        let z = self.logits(state);
        let lse = log_sum_exp(&z.data);
        let mut p = vec![0.0; self.config.vocab_size];
        for (j, &x) in z.data.iter().enumerate() {
            p[j + 1] = (x - lse).exp().f64();
        }
        Ok(p)
    }

    /// The unique successor state. Appending EOS makes the state terminal.
    pub fn append(&self, state: &DecodingState<F>, tok: Token) -> Result<DecodingState<F>> {
        let mut next = state.clone();
        self.advance(&mut next, tok)?;
        Ok(next)
    }

    pub fn advance(&self, state: &mut DecodingState<F>, tok: Token) -> Result<()> {
        if state.terminal {
            return Err(Error::Usage("cannot extend a terminal state".into()));
        }
        if tok == Token::BOS || tok.idx() >= self.config.vocab_size {
            return Err(Error::Usage(format!("token {tok} cannot be appended")));
        }
        if tok == Token::EOS {
            state.terminal = true;
        } else {
            self.lstm_step(state, tok);
        }
        state.tokens.push(tok);
        Ok(())
    }

    /// Picks the next token. Returns `(token, log-prob, argmax token)`.
    fn choose<R: Rng>(
        &self,
        state: &DecodingState<F>,
        strategy: Strategy,
        rng: &mut R,
    ) -> (Token, f64, Token) {
        let z = self.logits(state);
        let row = &z.data;
        let lse = log_sum_exp(row);
        let best = argmax(row);
        let pick = match strategy {
            Strategy::MaxProbability => best,
            Strategy::Multinomial => {
                let u: f64 = rng.gen();
                let mut acc = 0.0;
                let mut pick = row.len() - 1;
                for (j, &x) in row.iter().enumerate() {
                    acc += (x - lse).exp().f64();
                    if u < acc {
                        pick = j;
                        break;
                    }
                }
                pick
            }
        };
        (token_of(pick), (row[pick] - lse).f64(), token_of(best))
    }

    /// Samples `a_1 … a_T` with at most `max_len` words before EOS; a sequence that reaches
    /// `max_len + 1` tokens without EOS is cut there and flagged as truncated.
    pub fn sample_trajectory(
        &self,
        context: &[f64],
        strategy: Strategy,
        seed: u64,
        max_len: usize,
    ) -> Result<Trajectory<F>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut state = self.init_state(context)?;
        let mut tokens = Vec::new();
        let mut logprobs = Vec::new();
        let mut greedy = Vec::new();
        let mut states = vec![state.clone()];
        while !state.terminal && state.t() <= max_len {
            let (tok, lp, best) = self.choose(&state, strategy, &mut rng);
            self.advance(&mut state, tok)?;
            tokens.push(tok);
            logprobs.push(lp);
            greedy.push(best);
            states.push(state.clone());
        }
        Ok(Trajectory {
            truncated: !state.terminal,
            tokens,
            logprobs,
            greedy,
            states,
            strategy,
            seed,
        })
    }

    /// Completion of `state` under `strategy`, respecting the same length limit as
    /// [`Policy::sample_trajectory`]. Empty for terminal states.
    pub fn continue_from(
        &self,
        state: &DecodingState<F>,
        strategy: Strategy,
        seed: u64,
        max_len: usize,
    ) -> Vec<Token> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        self.continue_with(state, strategy, &mut rng, max_len)
    }

    pub fn continue_with<R: Rng>(
        &self,
        state: &DecodingState<F>,
        strategy: Strategy,
        rng: &mut R,
        max_len: usize,
    ) -> Vec<Token> {
        let mut out = Vec::new();
        if state.terminal || state.t() > max_len {
            return out;
        }
        let mut state = state.clone();
        while !state.terminal && state.t() <= max_len {
            let (tok, _, _) = self.choose(&state, strategy, rng);
            self.advance(&mut state, tok)
                .expect("sampled token is appendable");
            out.push(tok);
        }
        out
    }

    /// Greedy decode from the context alone.
    pub fn greedy_decode(&self, context: &[f64], max_len: usize) -> Result<Vec<Token>> {
        let state = self.init_state(context)?;
        Ok(self.continue_from(&state, Strategy::MaxProbability, 0, max_len))
    }

    /// `log π(tokens | context)` summed over steps; tokens must not extend a terminal state.
    pub fn sequence_logprob(&self, context: &[f64], tokens: &[Token]) -> Result<f64> {
        let mut state = self.init_state(context)?;
        let mut total = 0.0;
        for &tok in tokens {
            if state.terminal {
                return Err(Error::Usage("token after EOS".into()));
            }
            let z = self.logits(&state);
            total += (z.data[column(tok)] - log_sum_exp(&z.data)).f64();
            self.advance(&mut state, tok)?;
        }
        Ok(total)
    }
}
