use std::sync::Arc;

use super::cider::{CiderTarget, CorpusIdf};
use super::TokenSequence;
use crate::corpus::Token;
use crate::error::Result;

/// Terminal sequence reward. `tokens` may end with EOS; `with_eos` decides whether it is scored.
pub trait SequenceReward: Sync {
    fn score(&self, tokens: &[Token], with_eos: bool) -> f64;
}

impl<F> SequenceReward for F
where
    F: Fn(&[Token], bool) -> f64 + Sync,
{
    fn score(&self, tokens: &[Token], with_eos: bool) -> f64 {
        self(tokens, with_eos)
    }
}

fn scored_view(tokens: &[Token], with_eos: bool) -> &[Token] {
    match tokens.last() {
        Some(&Token::EOS) if !with_eos => &tokens[..tokens.len() - 1],
        _ => tokens,
    }
}

/// CIDEr against one image's references under a frozen IDF table.
///
/// When built with [`RewardIdf`], scoring with EOS compares the candidate (EOS included) against
/// EOS-terminated references under an IDF fitted on terminated references, so the end token is
/// an ordinary word on both sides.
#[derive(Debug, Clone)]
pub struct CiderReward {
    target: Arc<CiderTarget>,
    idf: Arc<CorpusIdf>,
    terminated: Option<(Arc<CiderTarget>, Arc<CorpusIdf>)>,
}

impl CiderReward {
    pub fn new<R: AsRef<[Token]>>(refs: &[R], idf: Arc<CorpusIdf>) -> Self {
        CiderReward {
            target: Arc::new(CiderTarget::new(refs, &idf)),
            idf,
            terminated: None,
        }
    }
}

impl SequenceReward for CiderReward {
    fn score(&self, tokens: &[Token], with_eos: bool) -> f64 {
        match (&self.terminated, with_eos) {
            (Some((target, idf)), true) => target.score(tokens, idf),
            _ => self.target.score(scored_view(tokens, with_eos), &self.idf),
        }
    }
}

fn terminated<R: AsRef<[Token]>>(refs: &[R]) -> Vec<Vec<Token>> {
    refs.iter()
        .map(|r| {
            let mut v = r.as_ref().to_vec();
            v.push(Token::EOS);
            v
        })
        .collect()
}

/// Frozen document frequencies for the reward: one table over the plain references and one over
/// the same references with EOS appended.
#[derive(Debug, Clone)]
pub struct RewardIdf {
    pub plain: Arc<CorpusIdf>,
    pub terminated: Arc<CorpusIdf>,
}

impl RewardIdf {
    pub fn fit<R: AsRef<[Token]>>(reference_sets: &[Vec<R>]) -> Result<Self> {
        let term: Vec<Vec<Vec<Token>>> = reference_sets.iter().map(|s| terminated(s)).collect();
        Ok(RewardIdf {
            plain: Arc::new(CorpusIdf::fit(reference_sets)?),
            terminated: Arc::new(CorpusIdf::fit(&term)?),
        })
    }

    pub fn reward<R: AsRef<[Token]>>(&self, refs: &[R]) -> CiderReward {
        let mut r = CiderReward::new(refs, self.plain.clone());
        r.terminated = Some((
            Arc::new(CiderTarget::new(&terminated(refs), &self.terminated)),
            self.terminated.clone(),
        ));
        r
    }
}

/// Scores a finished (or truncated) trajectory; EOS participates only when `with_eos` is set.
pub fn reward<R: AsRef<[Token]>>(
    trajectory_tokens: &TokenSequence,
    refs: &[R],
    idf: &CorpusIdf,
    with_eos: bool,
) -> f64 {
    let view = scored_view(&trajectory_tokens.tokens, with_eos);
    super::cider(view, refs, idf)
}
