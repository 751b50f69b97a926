//! Plain CIDEr: per-order TF-IDF cosine between candidate and each reference, averaged over
//! references and over orders 1..4, scaled by 10.
//!
//! Term frequencies are raw counts. Document frequency counts reference *sets* (images), not
//! individual references. An n-gram absent from the fitted corpus is weighted as if its document
//! frequency were 1. A cosine with an all-zero side is 0.

use std::collections::HashMap;

use super::ngram::{key, NGramKey, NGramStats, MAX_ORDER};
use crate::corpus::Token;
use crate::error::{Error, Result};

pub const CIDER_SCALE: f64 = 10.0;

#[derive(Debug, Clone, Default)]
pub struct CorpusIdf {
    df: [HashMap<NGramKey, u32>; MAX_ORDER],
    num_images: usize,
}

impl CorpusIdf {
    /// One entry of `reference_sets` per image.
    pub fn fit<R: AsRef<[Token]>>(reference_sets: &[Vec<R>]) -> Result<Self> {
        if reference_sets.is_empty() {
            return Err(Error::Config("cannot fit IDF on an empty corpus".into()));
        }
        let mut df: [HashMap<NGramKey, u32>; MAX_ORDER] = Default::default();
        for (i, set) in reference_sets.iter().enumerate() {
            if set.is_empty() {
                return Err(Error::Config(format!("reference set {i} is empty")));
            }
            for (k, table) in df.iter_mut().enumerate() {
                let n = k + 1;
                let mut seen: Vec<NGramKey> = set
                    .iter()
                    .flat_map(|r| r.as_ref().windows(n).map(key))
                    .collect();
                seen.sort_unstable();
                seen.dedup();
                for g in seen {
                    *table.entry(g).or_insert(0) += 1;
                }
            }
        }
        Ok(CorpusIdf {
            df,
            num_images: reference_sets.len(),
        })
    }

    pub fn num_images(&self) -> usize {
        self.num_images
    }

    /// Document frequency of `gram` (0 if unseen).
    pub fn df(&self, gram: &[Token]) -> u32 {
        if gram.is_empty() || gram.len() > MAX_ORDER {
            return 0;
        }
        self.df_key(gram.len(), key(gram))
    }

    fn df_key(&self, order: usize, k: NGramKey) -> u32 {
        self.df[order - 1].get(&k).copied().unwrap_or(0)
    }

    pub(crate) fn idf_key(&self, order: usize, k: NGramKey) -> f64 {
        let df = self.df_key(order, k).max(1) as f64;
        (self.num_images as f64 / df).ln()
    }

    pub fn idf(&self, gram: &[Token]) -> f64 {
        self.idf_key(gram.len(), key(gram))
    }

    /// Iterates `(order, key, df)` over every stored entry.
    pub fn entries(&self) -> impl Iterator<Item = (usize, NGramKey, u32)> + '_ {
        self.df
            .iter()
            .enumerate()
            .flat_map(|(k, t)| t.iter().map(move |(&g, &d)| (k + 1, g, d)))
    }
}

/// Sorted sparse TF-IDF vector plus its Euclidean norm, for one order.
#[derive(Debug, Clone, Default)]
struct WeightedGrams {
    entries: Vec<(NGramKey, f64)>,
    norm: f64,
}

fn weigh(stats: &NGramStats, idf: &CorpusIdf) -> [WeightedGrams; MAX_ORDER] {
    std::array::from_fn(|k| {
        let entries: Vec<(NGramKey, f64)> = stats
            .order(k + 1)
            .iter()
            .map(|&(g, c)| (g, c as f64 * idf.idf_key(k + 1, g)))
            .collect();
        let norm = entries.iter().map(|e| e.1 * e.1).sum::<f64>().sqrt();
        WeightedGrams { entries, norm }
    })
}

fn cosine(a: &WeightedGrams, b: &WeightedGrams) -> f64 {
    if a.norm == 0.0 || b.norm == 0.0 {
        return 0.0;
    }
    let (mut i, mut j, mut dot) = (0, 0, 0.0);
    while i < a.entries.len() && j < b.entries.len() {
        let (ka, va) = a.entries[i];
        let (kb, vb) = b.entries[j];
        match ka.cmp(&kb) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                dot += va * vb;
                i += 1;
                j += 1;
            }
        }
    }
    dot / (a.norm * b.norm)
}

/// References of one image with TF-IDF vectors precomputed against a fixed IDF table.
#[derive(Debug, Clone)]
pub struct CiderTarget {
    refs: Vec<[WeightedGrams; MAX_ORDER]>,
}

impl CiderTarget {
    pub fn new<R: AsRef<[Token]>>(refs: &[R], idf: &CorpusIdf) -> Self {
        CiderTarget {
            refs: refs
                .iter()
                .map(|r| weigh(&NGramStats::new(r.as_ref()), idf))
                .collect(),
        }
    }

    /// `idf` must be the table the target was built with.
    pub fn score(&self, candidate: &[Token], idf: &CorpusIdf) -> f64 {
        if self.refs.is_empty() {
            return 0.0;
        }
        let cand = weigh(&NGramStats::new(candidate), idf);
        let mut total = 0.0;
        for k in 0..MAX_ORDER {
            let sum: f64 = self.refs.iter().map(|r| cosine(&cand[k], &r[k])).sum();
            total += sum / self.refs.len() as f64;
        }
        CIDER_SCALE * total / MAX_ORDER as f64
    }
}

pub fn cider<R: AsRef<[Token]>>(candidate: &[Token], refs: &[R], idf: &CorpusIdf) -> f64 {
    CiderTarget::new(refs, idf).score(candidate, idf)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(ids: &[u32]) -> Vec<Token> {
        ids.iter().copied().map(Token).collect()
    }

    // words: a=3 b=4 c=5
    #[test]
    fn df_counts_images_not_references() {
        let idf = CorpusIdf::fit(&[vec![t(&[3, 4]), t(&[3, 4])], vec![t(&[3, 5])]]).unwrap();
        assert_eq!(idf.num_images(), 2);
        assert_eq!(idf.df(&t(&[3])), 2);
        assert_eq!(idf.df(&t(&[4])), 1);
        assert_eq!(idf.df(&t(&[5])), 1);
        assert_eq!(idf.df(&t(&[3, 4])), 1);
        assert_eq!(idf.df(&t(&[4, 3])), 0);
    }

    #[test]
    fn fit_rejects_empty() {
        assert!(matches!(
            CorpusIdf::fit::<Vec<Token>>(&[]),
            Err(Error::Config(_))
        ));
        assert!(CorpusIdf::fit::<Vec<Token>>(&[vec![]]).is_err());
    }

    #[test]
    fn single_image_idf_is_zero() {
        let refs = vec![t(&[3, 4, 5]), t(&[3, 5])];
        let idf = CorpusIdf::fit(std::slice::from_ref(&refs)).unwrap();
        for (_, g, d) in idf.entries() {
            assert_eq!(d, 1);
            let _ = g;
        }
        assert_eq!(idf.idf(&t(&[3])), 0.0);
        assert_eq!(cider(&t(&[3, 4, 5]), &refs, &idf), 0.0);
    }

    #[test]
    fn degenerate_inputs() {
        let idf = CorpusIdf::fit(&[vec![t(&[3, 4])], vec![t(&[5])]]).unwrap();
        assert_eq!(cider(&[], &[t(&[3, 4])], &idf), 0.0);
        assert_eq!(cider(&t(&[6, 7]), &[t(&[3, 4])], &idf), 0.0);
        assert_eq!(cider::<Vec<Token>>(&t(&[3]), &[], &idf), 0.0);
    }
}
