//! Exact n-gram text metrics. CIDEr is the RL reward; BLEU is evaluation-only.

mod bleu;
mod cider;
mod ngram;
mod reward;

pub use bleu::{bleu, BleuStats};
pub use cider::{cider, CiderTarget, CorpusIdf, CIDER_SCALE};
pub use ngram::{NGramStats, MAX_ORDER};
pub use reward::{reward, CiderReward, RewardIdf, SequenceReward};

use crate::corpus::Token;

/// Tokens to be scored. `includes_eos` marks whether a trailing EOS participates in n-gram
/// counting; when it is false a trailing EOS is ignored.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenSequence {
    pub tokens: Vec<Token>,
    pub includes_eos: bool,
}

impl TokenSequence {
    pub fn new(tokens: Vec<Token>) -> Self {
        TokenSequence {
            tokens,
            includes_eos: false,
        }
    }

    pub fn with_eos(tokens: Vec<Token>) -> Self {
        TokenSequence {
            tokens,
            includes_eos: true,
        }
    }

    pub fn scored(&self) -> &[Token] {
        match self.tokens.last() {
            Some(&Token::EOS) if !self.includes_eos => &self.tokens[..self.tokens.len() - 1],
            _ => &self.tokens,
        }
    }
}

impl AsRef<[Token]> for TokenSequence {
    fn as_ref(&self) -> &[Token] {
        self.scored()
    }
}
