use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::QEstimate;
use crate::error::{Error, Result};

/// Chunk size for the n-step advantage. `Full` is the sequence-level (T-step) case.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum NStep {
    Fixed(usize),
    Full,
}

impl NStep {
    /// Effective chunk size for a trajectory of length `t_len`.
    pub fn resolve(self, t_len: usize) -> usize {
        match self {
            NStep::Fixed(n) => n.clamp(1, t_len.max(1)),
            NStep::Full => t_len.max(1),
        }
    }

    /// `0, n, 2n, …` followed by `T`.
    pub fn boundaries(self, t_len: usize) -> Vec<usize> {
        let n = self.resolve(t_len);
        let mut b: Vec<usize> = (0..t_len).step_by(n).collect();
        b.push(t_len);
        b
    }

    /// `(τ, upper)` for token `t` in `1..=T`: `τ = ⌊(t−1)/n⌋·n`, `upper = min(τ + n, T)`.
    pub fn chunk(self, t: usize, t_len: usize) -> (usize, usize) {
        debug_assert!(t >= 1 && t <= t_len);
        let n = self.resolve(t_len);
        let tau = (t - 1) / n * n;
        (tau, (tau + n).min(t_len))
    }

    pub fn num_chunks(self, t_len: usize) -> usize {
        t_len.div_ceil(self.resolve(t_len))
    }

    /// The fixed chunk size, or `None` for the sequence-level case.
    pub fn fixed(self) -> Option<usize> {
        match self {
            NStep::Fixed(n) => Some(n),
            NStep::Full => None,
        }
    }
}

impl fmt::Display for NStep {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NStep::Fixed(n) => write!(f, "{n}"),
            NStep::Full => f.write_str("T"),
        }
    }
}

impl FromStr for NStep {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s.eq_ignore_ascii_case("t") {
            return Ok(NStep::Full);
        }
        match s.parse::<usize>() {
            Ok(n) if n >= 1 => Ok(NStep::Fixed(n)),
            _ => Err(Error::Usage(format!(
                "invalid n `{s}`: expected a positive integer or T"
            ))),
        }
    }
}

/// `Â_t = Q̂(upper) − Q̂(τ)` for every token of a length-`t_len` trajectory.
pub fn nstep_advantages(t_len: usize, q: &QEstimate, n: NStep) -> Result<Vec<f64>> {
    let get = |b: usize| {
        q.get(b)
            .ok_or_else(|| Error::Internal(format!("no Q estimate at boundary {b}")))
    };
    let mut out = Vec::with_capacity(t_len);
    for t in 1..=t_len {
        let (lo, hi) = n.chunk(t, t_len);
        out.push(get(hi)? - get(lo)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rlcore::Estimator;
    use proptest::prelude::*;

    fn q(vals: &[(usize, f64)], t_len: usize) -> QEstimate {
        let mut q = QEstimate::new(t_len, Estimator::MaxPro);
        for &(b, v) in vals {
            q.set(b, v);
        }
        q
    }

    #[test]
    fn worked_example() {
        let q = q(&[(0, 0.2), (2, 0.5), (4, 0.4)], 4);
        let a = nstep_advantages(4, &q, NStep::Fixed(2)).unwrap();
        let expect = [0.5 - 0.2, 0.5 - 0.2, 0.4 - 0.5, 0.4 - 0.5];
        assert_eq!(a, expect);
        assert!((a[0] - 0.3).abs() < 1e-12 && (a[2] + 0.1).abs() < 1e-12);
    }

    #[test]
    fn missing_boundary_is_internal_error() {
        let q = q(&[(0, 0.2), (4, 0.4)], 4);
        assert!(matches!(
            nstep_advantages(4, &q, NStep::Fixed(2)),
            Err(Error::Internal(_))
        ));
    }

    #[test]
    fn final_chunk_clamps() {
        assert_eq!(NStep::Fixed(4).boundaries(6), vec![0, 4, 6]);
        assert_eq!(NStep::Fixed(4).chunk(5, 6), (4, 6));
        assert_eq!(NStep::Fixed(16).boundaries(5), vec![0, 5]);
        assert_eq!(NStep::Full.chunk(3, 5), (0, 5));
    }

    #[test]
    fn parse() {
        assert_eq!("T".parse::<NStep>().unwrap(), NStep::Full);
        assert_eq!("3".parse::<NStep>().unwrap(), NStep::Fixed(3));
        assert!("0".parse::<NStep>().is_err());
        assert!("x".parse::<NStep>().is_err());
    }

    proptest! {
        #[test]
        fn chunks_tile_and_are_constant(
            vals in proptest::collection::vec(-5.0f64..5.0, 2..20),
            n in 1usize..8,
        ) {
            let t_len = vals.len() - 1;
            let mut qe = QEstimate::new(t_len, Estimator::MaxPro);
            for (b, &v) in vals.iter().enumerate() {
                qe.set(b, v);
            }
            let ns = NStep::Fixed(n);
            let a = nstep_advantages(t_len, &qe, ns).unwrap();
            prop_assert_eq!(a.len(), t_len);
            let chunks: Vec<_> = (1..=t_len).map(|t| ns.chunk(t, t_len)).collect();
            let mut distinct = chunks.clone();
            distinct.dedup();
            prop_assert_eq!(distinct.len(), ns.num_chunks(t_len));
            for w in distinct.windows(2) {
                prop_assert_eq!(w[0].1, w[1].0);
            }
            for t in 1..t_len {
                if chunks[t - 1] == chunks[t] {
                    prop_assert_eq!(a[t - 1], a[t]);
                }
            }
            if n == 1 {
                for t in 1..=t_len {
                    prop_assert_eq!(a[t - 1], vals[t] - vals[t - 1]);
                }
            }
            // Telescoping: the chunk advantages sum to Q(T) − Q(0).
            let per_chunk: f64 = distinct.iter().map(|&(lo, hi)| vals[hi] - vals[lo]).sum();
            prop_assert!((per_chunk - (vals[t_len] - vals[0])).abs() < 1e-9);
        }
    }
}
