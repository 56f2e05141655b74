//! Explicit finite distributions over token sequences.
//!
//! Small enough to enumerate, so posteriors, entropies and sample-quality
//! metrics can be computed exactly.

use std::collections::HashMap;
use std::path::Path;

use ndarray::Array2;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{CandiError, Result};
use crate::kernel::TokenSequence;
use crate::rng::Rng;

#[derive(Debug, Clone, PartialEq)]
pub struct ToyDistribution {
    vocab: usize,
    len: usize,
    support: Vec<(TokenSequence, f64)>,
    index: HashMap<TokenSequence, usize>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SupportEntry {
    tokens: Vec<usize>,
    prob: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DistributionFile {
    vocab: usize,
    len: usize,
    support: Vec<SupportEntry>,
}

impl ToyDistribution {
    pub fn new(vocab: usize, len: usize, support: Vec<(Vec<usize>, f64)>) -> Result<Self> {
        if vocab < 2 || len == 0 {
            return Err(CandiError::Config(format!("distribution needs vocab >= 2 and len >= 1, got {vocab} and {len}")));
        }
        if support.is_empty() {
            return Err(CandiError::Config("distribution support is empty".into()));
        }
        let mut index = HashMap::with_capacity(support.len());
        let mut entries = Vec::with_capacity(support.len());
        let mut total = 0.0;
        for (k, (tokens, p)) in support.into_iter().enumerate() {
            if tokens.len() != len {
                return Err(CandiError::Config(format!("support entry {k} has length {} instead of {len}", tokens.len())));
            }
            let seq = TokenSequence::new(tokens, vocab)?;
            if !(p > 0.0 && p.is_finite()) {
                return Err(CandiError::Config(format!("support entry {k} has non-positive probability {p}")));
            }
            if index.insert(seq.clone(), k).is_some() {
                return Err(CandiError::Config(format!("support entry {k} repeats an earlier sequence")));
            }
            total += p;
            entries.push((seq, p));
        }
        if (total - 1.0).abs() > 1e-12 {
            return Err(CandiError::Config(format!("support probabilities sum to {total}, not 1")));
        }
        Ok(Self { vocab, len, support: entries, index })
    }

    /// Builds a distribution from unnormalised positive weights.
    pub fn from_weights(vocab: usize, len: usize, support: Vec<(Vec<usize>, f64)>) -> Result<Self> {
        let total: f64 = support.iter().map(|(_, w)| w).sum();
        Self::new(vocab, len, support.into_iter().map(|(s, w)| (s, w / total)).collect())
    }

    pub fn vocab(&self) -> usize {
        self.vocab
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn support(&self) -> &[(TokenSequence, f64)] {
        &self.support
    }

    pub fn probability(&self, seq: &TokenSequence) -> f64 {
        self.index.get(seq).map_or(0.0, |&k| self.support[k].1)
    }

    /// Per-position marginals, `L × v`.
    pub fn marginals(&self) -> Array2<f64> {
        let mut m = Array2::zeros((self.len, self.vocab));
        for (seq, p) in &self.support {
            for (i, &t) in seq.tokens().iter().enumerate() {
                m[[i, t]] += p;
            }
        }
        m
    }

    /// Shannon entropy in nats.
    pub fn entropy(&self) -> f64 {
        -self.support.iter().map(|(_, p)| p * p.ln()).sum::<f64>()
    }

    pub fn sample(&self, rng: &mut Rng) -> TokenSequence {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (seq, p) in &self.support {
            acc += p;
            if u < acc {
                return seq.clone();
            }
        }
        self.support.last().map(|(s, _)| s.clone()).expect("support is non-empty")
    }

    /// Relabels every token `k` as `perm[k]`.
    pub fn permute_labels(&self, perm: &[usize]) -> Result<Self> {
        check_permutation(perm, self.vocab)?;
        Self::new(
            self.vocab,
            self.len,
            self.support.iter().map(|(s, p)| (s.tokens().iter().map(|&t| perm[t]).collect(), *p)).collect(),
        )
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let file: DistributionFile = serde_json::from_str(text).map_err(|e| CandiError::Parse(format!("distribution: {e}")))?;
        Self::new(file.vocab, file.len, file.support.into_iter().map(|e| (e.tokens, e.prob)).collect())
    }

    pub fn to_json_string(&self) -> String {
        let file = DistributionFile {
            vocab: self.vocab,
            len: self.len,
            support: self.support.iter().map(|(s, p)| SupportEntry { tokens: s.0.clone(), prob: *p }).collect(),
        };
        serde_json::to_string_pretty(&file).expect("distribution serialises")
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json_str(&std::fs::read_to_string(path)?)
    }
}

pub(crate) fn check_permutation(perm: &[usize], vocab: usize) -> Result<()> {
    let mut seen = vec![false; vocab];
    if perm.len() != vocab {
        return Err(CandiError::Shape(format!("permutation of length {} for vocabulary {vocab}", perm.len())));
    }
    for &p in perm {
        if p >= vocab || std::mem::replace(&mut seen[p], true) {
            return Err(CandiError::Domain("not a permutation".into()));
        }
    }
    Ok(())
}

/// Reference distributions used by the tests, the acceptance suite and the
/// CLI demos.
pub mod fixtures {
    use super::ToyDistribution;

    /// Five sequences over 3 tokens, length 2.
    pub fn reference_five() -> ToyDistribution {
        ToyDistribution::new(
            3,
            2,
            vec![(vec![0, 0], 0.3), (vec![1, 1], 0.25), (vec![2, 2], 0.2), (vec![0, 1], 0.15), (vec![2, 0], 0.1)],
        )
        .expect("valid fixture")
    }

    /// Eight sequences over 8 tokens, length 4; the first token determines
    /// the rest.
    pub fn reference_eight() -> ToyDistribution {
        ToyDistribution::from_weights(
            8,
            4,
            (0..8).map(|k| (vec![k, (k + 1) % 8, (k + 3) % 8, (5 * k) % 8], (k + 1) as f64)).collect(),
        )
        .expect("valid fixture")
    }

    /// Four length-2 sequences over tokens spread evenly across a
    /// vocabulary of size `vocab`; the same shape at every vocabulary size.
    pub fn corner_pairs(vocab: usize) -> ToyDistribution {
        assert!(vocab >= 4, "corner_pairs needs at least 4 tokens");
        let tok = |k: usize| k * (vocab / 4);
        ToyDistribution::new(
            vocab,
            2,
            vec![
                (vec![tok(0), tok(1)], 0.4),
                (vec![tok(1), tok(2)], 0.3),
                (vec![tok(2), tok(3)], 0.2),
                (vec![tok(3), tok(0)], 0.1),
            ],
        )
        .expect("valid fixture")
    }

    /// Every position carries the same token, drawn uniformly.
    pub fn repeated_token(vocab: usize, len: usize) -> ToyDistribution {
        ToyDistribution::from_weights(vocab, len, (0..vocab).map(|k| (vec![k; len], 1.0)).collect()).expect("valid fixture")
    }

    /// Four tokens, length 2; sequences starting with token 0 or 1 form the
    /// target class (total mass 0.3).
    pub fn two_class() -> ToyDistribution {
        ToyDistribution::new(
            4,
            2,
            vec![(vec![0, 0], 0.1), (vec![1, 2], 0.2), (vec![2, 3], 0.4), (vec![3, 1], 0.3)],
        )
        .expect("valid fixture")
    }

    pub fn single(vocab: usize, tokens: Vec<usize>) -> ToyDistribution {
        let len = tokens.len();
        ToyDistribution::new(vocab, len, vec![(tokens, 1.0)]).expect("valid fixture")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    #[test]
    fn rejects_invalid_supports() {
        assert!(ToyDistribution::new(3, 2, vec![(vec![0, 0], 0.5), (vec![1, 1], 0.4)]).is_err());
        assert!(ToyDistribution::new(3, 2, vec![(vec![0, 3], 1.0)]).is_err());
        assert!(ToyDistribution::new(3, 2, vec![(vec![0], 1.0)]).is_err());
        assert!(ToyDistribution::new(3, 2, vec![(vec![0, 1], 0.5), (vec![0, 1], 0.5)]).is_err());
        assert!(ToyDistribution::new(3, 2, vec![(vec![0, 1], 1.0), (vec![1, 1], 0.0)]).is_err());
    }

    #[test]
    fn json_roundtrip_and_strictness() {
        let d = fixtures::reference_five();
        let back = ToyDistribution::from_json_str(&d.to_json_string()).unwrap();
        assert_eq!(back, d);
        let extra = r#"{"vocab":2,"len":1,"support":[{"tokens":[0],"prob":1.0}],"colour":"red"}"#;
        assert!(ToyDistribution::from_json_str(extra).is_err());
    }

    #[test]
    fn marginals_and_entropy() {
        let d = fixtures::reference_five();
        let m = d.marginals();
        assert!((m[[0, 0]] - 0.45).abs() < 1e-15);
        assert!((m[[1, 1]] - 0.4).abs() < 1e-15);
        let h: f64 = -[0.3f64, 0.25, 0.2, 0.15, 0.1].iter().map(|p| p * p.ln()).sum::<f64>();
        assert!((d.entropy() - h).abs() < 1e-15);
    }

    #[test]
    fn sampling_frequencies() {
        let d = fixtures::reference_five();
        let mut rng = seeded(4);
        let n = 20_000;
        let hits = (0..n).filter(|_| d.sample(&mut rng).0 == vec![0, 0]).count() as f64 / n as f64;
        assert!((hits - 0.3).abs() < 4.0 * (0.3f64 * 0.7 / n as f64).sqrt());
    }

    #[test]
    fn permuting_labels() {
        let d = fixtures::reference_five();
        let p = d.permute_labels(&[2, 0, 1]).unwrap();
        assert_eq!(p.probability(&TokenSequence(vec![2, 2])), 0.3);
        assert!(d.permute_labels(&[0, 0, 1]).is_err());
    }

    #[test]
    fn fixtures_are_valid() {
        assert_eq!(fixtures::reference_eight().support().len(), 8);
        assert_eq!(fixtures::corner_pairs(512).support()[1].0 .0, vec![128, 256]);
        assert_eq!(fixtures::repeated_token(4, 4).support().len(), 4);
        assert_eq!(fixtures::two_class().len(), 2);
    }
}
