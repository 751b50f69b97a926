//! Shared fixtures: a tiny enumerable decoding MDP and brute-force oracles over it.
#![allow(dead_code)]

use seqcritic::corpus::Token;
use seqcritic::policy::{DecoderConfig, DecodingState, Policy, Strategy, Trajectory};

/// Vocabulary {BOS, EOS, UNK, x}: three actions per step, at most three steps.
pub const TOY_VOCAB: usize = 4;
/// Word limit; sequences hold at most `TOY_MAX_LEN + 1` tokens.
pub const TOY_MAX_LEN: usize = 2;
pub const TOY_CONTEXT: [f64; 2] = [0.4, -0.7];

pub fn toy_policy(seed: u64) -> Policy<f64> {
    let mut cfg = DecoderConfig::new(TOY_VOCAB, 2, 3, 3);
    cfg.init_scale = 0.9;
    Policy::new(cfg, seed).unwrap()
}

/// A fixed pseudo-random reward per token string; EOS handling is deliberately ignored so that
/// every boundary uses the same reward function.
pub fn toy_reward(tokens: &[Token], _with_eos: bool) -> f64 {
    let mut code = 1u64;
    for t in tokens {
        code = code * 5 + t.0 as u64;
    }
    0.5 + 0.5 * ((code as f64) * 1.618).sin()
}

/// Every complete sequence with its probability, by explicit tree walk.
pub fn enumerate(policy: &Policy<f64>, context: &[f64], max_len: usize) -> Vec<(Vec<Token>, f64)> {
    fn walk(
        policy: &Policy<f64>,
        state: &DecodingState<f64>,
        p: f64,
        max_len: usize,
        out: &mut Vec<(Vec<Token>, f64)>,
    ) {
        if state.is_terminal() || state.t() > max_len {
            out.push((state.tokens()[1..].to_vec(), p));
            return;
        }
        let dist = policy.step_distribution(state).unwrap();
        for (j, &q) in dist.iter().enumerate().skip(1) {
            let next = policy.append(state, Token(j as u32)).unwrap();
            walk(policy, &next, p * q, max_len, out);
        }
    }
    let mut out = Vec::new();
    walk(
        policy,
        &policy.init_state(context).unwrap(),
        1.0,
        max_len,
        &mut out,
    );
    out
}

pub fn expected_reward(policy: &Policy<f64>, context: &[f64]) -> f64 {
    enumerate(policy, context, TOY_MAX_LEN)
        .iter()
        .map(|(s, p)| p * toy_reward(s, true))
        .sum()
}

/// `Q(prefix)`: the mean reward of complete sequences extending `prefix`, weighted by their
/// probability, from the global table.
pub fn conditional_value(table: &[(Vec<Token>, f64)], prefix: &[Token]) -> f64 {
    let (mut num, mut den) = (0.0, 0.0);
    for (s, p) in table {
        if s.starts_with(prefix) {
            num += p * toy_reward(s, true);
            den += p;
        }
    }
    num / den
}

/// Central differences of `E[r]` with respect to every weight.
pub fn expected_reward_gradient(policy: &Policy<f64>, context: &[f64]) -> Vec<f64> {
    let h = 1e-6;
    let mut q = policy.clone();
    (0..policy.params.weights.num_scalars())
        .map(|k| {
            let orig = *q.params.weights.scalar_mut(k);
            *q.params.weights.scalar_mut(k) = orig + h;
            let up = expected_reward(&q, context);
            *q.params.weights.scalar_mut(k) = orig - h;
            let down = expected_reward(&q, context);
            *q.params.weights.scalar_mut(k) = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Rebuilds the trajectory record of a given token sequence.
pub fn trajectory_of(policy: &Policy<f64>, context: &[f64], tokens: &[Token]) -> Trajectory<f64> {
    let mut states = vec![policy.init_state(context).unwrap()];
    let mut logprobs = Vec::new();
    let mut greedy = Vec::new();
    for &tok in tokens {
        let s = states.last().unwrap();
        let d = policy.step_distribution(s).unwrap();
        logprobs.push(d[tok.idx()].ln());
        let mut best = 1;
        for j in 2..d.len() {
            if d[j] > d[best] {
                best = j;
            }
        }
        greedy.push(Token(best as u32));
        states.push(policy.append(s, tok).unwrap());
    }
    Trajectory {
        tokens: tokens.to_vec(),
        logprobs,
        greedy,
        states,
        truncated: tokens.last() != Some(&Token::EOS),
        strategy: Strategy::Multinomial,
        seed: 0,
    }
}
