use crate::corpus::Token;

pub const MAX_ORDER: usize = 4;

/// Packed n-gram key: each token occupies 32 bits, most recent token lowest.
pub type NGramKey = u128;

pub fn key(gram: &[Token]) -> NGramKey {
    gram.iter().fold(0u128, |k, t| (k << 32) | t.0 as u128)
}

/// Per-order n-gram multisets of one sequence, stored as key-sorted `(key, count)` runs.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct NGramStats {
    orders: [Vec<(NGramKey, u32)>; MAX_ORDER],
}

impl NGramStats {
    pub fn new(tokens: &[Token]) -> Self {
        let mut orders: [Vec<(NGramKey, u32)>; MAX_ORDER] = Default::default();
        for (k, slot) in orders.iter_mut().enumerate() {
            let n = k + 1;
            if tokens.len() < n {
                continue;
            }
            let mut keys: Vec<NGramKey> = tokens.windows(n).map(key).collect();
            keys.sort_unstable();
            for g in keys {
                match slot.last_mut() {
                    Some((last, c)) if *last == g => *c += 1,
                    _ => slot.push((g, 1)),
                }
            }
        }
        NGramStats { orders }
    }

    /// `order` is 1-based.
    pub fn order(&self, order: usize) -> &[(NGramKey, u32)] {
        &self.orders[order - 1]
    }

    pub fn count(&self, order: usize, gram: &[Token]) -> u32 {
        let k = key(gram);
        let run = self.order(order);
        run.binary_search_by_key(&k, |e| e.0)
            .map(|i| run[i].1)
            .unwrap_or(0)
    }

    pub fn total(&self, order: usize) -> u32 {
        self.order(order).iter().map(|e| e.1).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn toks(ids: &[u32]) -> Vec<Token> {
        ids.iter().copied().map(Token).collect()
    }

    #[test]
    fn counts() {
        let s = NGramStats::new(&toks(&[3, 4, 3, 4]));
        assert_eq!(s.count(1, &toks(&[3])), 2);
        assert_eq!(s.count(2, &toks(&[3, 4])), 2);
        assert_eq!(s.count(2, &toks(&[4, 3])), 1);
        assert_eq!(s.count(4, &toks(&[3, 4, 3, 4])), 1);
        assert_eq!(s.count(3, &toks(&[4, 4, 4])), 0);
    }

    proptest! {
        #[test]
        fn order_totals(ids in proptest::collection::vec(0u32..6, 0..24)) {
            let s = NGramStats::new(&toks(&ids));
            for k in 1..=MAX_ORDER {
                prop_assert_eq!(s.total(k) as usize, (ids.len() + 1).saturating_sub(k));
            }
        }
    }
}
