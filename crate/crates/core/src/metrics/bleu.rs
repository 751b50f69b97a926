//! BLEU with clipped n-gram precision and brevity penalty, no smoothing.

use super::ngram::{NGramStats, MAX_ORDER};
use crate::corpus::Token;

/// Sufficient statistics for BLEU; add sentences together for corpus-level scores.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct BleuStats {
    pub matches: [u64; MAX_ORDER],
    pub totals: [u64; MAX_ORDER],
    pub cand_len: u64,
    pub ref_len: u64,
}

impl BleuStats {
    pub fn sentence<R: AsRef<[Token]>>(candidate: &[Token], refs: &[R]) -> Self {
        let cand = NGramStats::new(candidate);
        let ref_stats: Vec<NGramStats> = refs.iter().map(|r| NGramStats::new(r.as_ref())).collect();
        let mut s = BleuStats {
            cand_len: candidate.len() as u64,
            ..Default::default()
        };
        for k in 1..=MAX_ORDER {
            for &(g, c) in cand.order(k) {
                let max_ref = ref_stats
                    .iter()
                    .map(|r| {
                        let run = r.order(k);
                        run.binary_search_by_key(&g, |e| e.0)
                            .map(|i| run[i].1)
                            .unwrap_or(0)
                    })
                    .max()
                    .unwrap_or(0);
                s.matches[k - 1] += c.min(max_ref) as u64;
                s.totals[k - 1] += c as u64;
            }
        }
        // closest reference length, ties resolved towards the shorter reference
        s.ref_len = refs
            .iter()
            .map(|r| r.as_ref().len() as u64)
            .min_by_key(|&l| (l.abs_diff(s.cand_len), l))
            .unwrap_or(0);
        s
    }

    pub fn add(&mut self, other: &BleuStats) {
        for k in 0..MAX_ORDER {
            self.matches[k] += other.matches[k];
            self.totals[k] += other.totals[k];
        }
        self.cand_len += other.cand_len;
        self.ref_len += other.ref_len;
    }

    pub fn brevity_penalty(&self) -> f64 {
        if self.cand_len == 0 {
            0.0
        } else if self.cand_len > self.ref_len {
            1.0
        } else {
            (1.0 - self.ref_len as f64 / self.cand_len as f64).exp()
        }
    }

    pub fn precision(&self, order: usize) -> f64 {
        let total = self.totals[order - 1];
        if total == 0 {
            0.0
        } else {
            self.matches[order - 1] as f64 / total as f64
        }
    }

    /// BLEU-1 ..= BLEU-`max_order`.
    pub fn scores(&self, max_order: usize) -> Vec<f64> {
        let max_order = max_order.min(MAX_ORDER);
        let bp = self.brevity_penalty();
        let mut log_sum = 0.0;
        let mut out = Vec::with_capacity(max_order);
        for k in 1..=max_order {
            let p = self.precision(k);
            if p == 0.0 || log_sum == f64::NEG_INFINITY {
                log_sum = f64::NEG_INFINITY;
                out.push(0.0);
                continue;
            }
            log_sum += p.ln();
            out.push(bp * (log_sum / k as f64).exp());
        }
        out
    }
}

pub fn bleu<R: AsRef<[Token]>>(candidate: &[Token], refs: &[R], max_order: usize) -> Vec<f64> {
    BleuStats::sentence(candidate, refs).scores(max_order)
}
