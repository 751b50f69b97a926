use serde::{Deserialize, Serialize};

use crate::corpus::{Dataset, Example, Split, Token};
use crate::error::{Error, Result};
use crate::metrics::{BleuStats, CiderTarget, CorpusIdf};
use crate::par::Exec;
use crate::policy::Policy;
use crate::tapegrad::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub split: Split,
    pub num_examples: usize,
    pub cider: f64,
    /// Corpus BLEU-1 … BLEU-4.
    pub bleu: Vec<f64>,
}

impl EvalReport {
    pub fn bleu4(&self) -> f64 {
        self.bleu[3]
    }
}

fn strip_eos(tokens: &[Token]) -> &[Token] {
    match tokens.last() {
        Some(&Token::EOS) => &tokens[..tokens.len() - 1],
        _ => tokens,
    }
}

/// Scores one candidate per example: mean CIDEr with document frequencies from the evaluated
/// examples' references, and corpus-level BLEU.
pub fn evaluate_sequences(
    split: Split,
    examples: &[&Example],
    candidates: &[Vec<Token>],
    exec: Exec,
) -> Result<EvalReport> {
    if examples.is_empty() {
        return Err(Error::Config(format!(
            "split `{split}` has no examples to evaluate"
        )));
    }
    if examples.len() != candidates.len() {
        return Err(Error::Usage(format!(
            "{} candidates for {} examples",
            candidates.len(),
            examples.len()
        )));
    }
    let ref_sets: Vec<&[Vec<Token>]> = examples.iter().map(|e| e.references.as_slice()).collect();
    let idf = CorpusIdf::fit(&ref_sets.iter().map(|r| r.to_vec()).collect::<Vec<_>>())?;
    let per: Vec<(f64, BleuStats)> = exec.map_range(examples.len(), |i| {
        let cand = strip_eos(&candidates[i]);
        let c = CiderTarget::new(ref_sets[i], &idf).score(cand, &idf);
        (c, BleuStats::sentence(cand, ref_sets[i]))
    });
    let mut total = BleuStats::default();
    let mut cider = 0.0;
    for (c, b) in &per {
        cider += c;
        total.add(b);
    }
    Ok(EvalReport {
        split,
        num_examples: examples.len(),
        cider: cider / examples.len() as f64,
        bleu: total.scores(4),
    })
}

/// Greedy-decodes the first `limit` examples of `split` (all when `limit` is 0) and scores them.
pub fn evaluate<F: Scalar>(
    policy: &Policy<F>,
    data: &Dataset,
    split: Split,
    limit: usize,
    exec: Exec,
) -> Result<EvalReport> {
    let mut examples = data.split(split);
    if limit > 0 {
        examples.truncate(limit);
    }
    let decoded: Vec<Result<Vec<Token>>> = exec.map(&examples, |e| {
        policy.greedy_decode(&e.context, data.max_len)
    });
    let candidates = decoded.into_iter().collect::<Result<Vec<_>>>()?;
    evaluate_sequences(split, &examples, &candidates, exec)
}
