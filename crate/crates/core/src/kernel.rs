//! The structured forward corruption: Bernoulli position masking combined
//! with Gaussian noise on the one-hot lattice of the masked positions.
//!
//! Both corruption axes are linear in time: the fraction of masked positions
//! is `1 − α(t) = t`, and the rank degradation of the noisy rows is the
//! linear target `r*(t)`, reached by choosing `σ(t)` through the inverse of
//! `r(σ)`.

use ndarray::{Array2, ArrayView1};
use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::analytics::{sigma_for_rank, NoiseLevel};
use crate::error::{domain, CandiError, Result};
use crate::rng::{seeded, Rng};

/// Smallest time on the sampler grid.
pub const T_EPSILON: f64 = 1e-3;

pub const DEFAULT_RANK_MIN: f64 = 0.01;
pub const DEFAULT_RANK_MAX: f64 = 0.49;

fn check_time(t: f64) -> Result<()> {
    if (0.0..=1.0).contains(&t) {
        Ok(())
    } else {
        domain(format!("time must lie in [0, 1], got {t}"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelConfig {
    pub rank_min: f64,
    pub rank_max: f64,
    pub vocab: usize,
    pub seq_len: usize,
}

impl KernelConfig {
    pub fn new(vocab: usize, seq_len: usize) -> Result<Self> {
        Self::with_ranks(vocab, seq_len, DEFAULT_RANK_MIN, DEFAULT_RANK_MAX)
    }

    pub fn with_ranks(vocab: usize, seq_len: usize, rank_min: f64, rank_max: f64) -> Result<Self> {
        let cfg = Self { rank_min, rank_max, vocab, seq_len };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rank_min > 0.0 && self.rank_min < self.rank_max && self.rank_max < 0.5) {
            return Err(CandiError::Config(format!(
                "rank_min and rank_max must satisfy 0 < rank_min < rank_max < 0.5, got rank_min = {}, rank_max = {}",
                self.rank_min, self.rank_max
            )));
        }
        if self.vocab < 2 {
            return Err(CandiError::Config(format!("vocab must be at least 2, got {}", self.vocab)));
        }
        if self.seq_len == 0 {
            return Err(CandiError::Config("seq_len must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TokenSequence(pub Vec<usize>);

impl TokenSequence {
    pub fn new(tokens: Vec<usize>, vocab: usize) -> Result<Self> {
        if let Some(&bad) = tokens.iter().find(|&&t| t >= vocab) {
            return domain(format!("token {bad} out of range for vocabulary of size {vocab}"));
        }
        Ok(Self(tokens))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn tokens(&self) -> &[usize] {
        &self.0
    }

    /// `L × v` matrix of one-hot rows.
    pub fn one_hot(&self, vocab: usize) -> Array2<f64> {
        let mut m = Array2::zeros((self.len(), vocab));
        for (i, &t) in self.0.iter().enumerate() {
            m[[i, t]] = 1.0;
        }
        m
    }
}

/// `true` marks a clean (kept) position, `false` a corrupted one.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MaskVector(pub Vec<bool>);

impl MaskVector {
    pub fn all(len: usize, clean: bool) -> Self {
        Self(vec![clean; len])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn is_clean(&self, i: usize) -> bool {
        self.0[i]
    }

    pub fn count_clean(&self) -> usize {
        self.0.iter().filter(|&&b| b).count()
    }

    pub fn or(&self, other: &MaskVector) -> MaskVector {
        MaskVector(self.0.iter().zip(&other.0).map(|(a, b)| *a || *b).collect())
    }
}

/// Real-valued `L × v` lattice, one row per position.
pub type Lattice = Array2<f64>;

/// Joint latent of the hybrid process: lattice, mask and time.
#[derive(Debug, Clone, PartialEq)]
pub struct HybridState {
    pub lattice: Lattice,
    pub mask: MaskVector,
    pub t: f64,
}

impl HybridState {
    /// Fully clean state for `x0` at time 0.
    pub fn clean(x0: &TokenSequence, vocab: usize) -> Self {
        Self { lattice: x0.one_hot(vocab), mask: MaskVector::all(x0.len(), true), t: 0.0 }
    }

    pub fn seq_len(&self) -> usize {
        self.lattice.nrows()
    }

    pub fn vocab(&self) -> usize {
        self.lattice.ncols()
    }

    /// Token carried by a clean row.
    pub fn clean_token(&self, i: usize) -> Option<usize> {
        if self.mask.is_clean(i) {
            Some(argmax(self.lattice.row(i)))
        } else {
            None
        }
    }

    /// Clean rows are exact one-hots, all entries finite, shapes agree.
    pub fn validate(&self) -> Result<()> {
        if self.mask.len() != self.seq_len() {
            return Err(CandiError::Shape(format!(
                "mask has {} entries for {} lattice rows",
                self.mask.len(),
                self.seq_len()
            )));
        }
        if self.lattice.iter().any(|x| !x.is_finite()) {
            return domain("lattice has non-finite entries");
        }
        for (i, row) in self.lattice.rows().into_iter().enumerate() {
            if self.mask.is_clean(i) {
                let ones = row.iter().filter(|&&x| x == 1.0).count();
                let zeros = row.iter().filter(|&&x| x == 0.0).count();
                if ones != 1 || zeros != row.len() - 1 {
                    return domain(format!("clean row {i} is not an exact one-hot"));
                }
            }
        }
        check_time(self.t)
    }

    /// Per-position tokens: clean rows give their token, noisy rows their
    /// argmax.
    pub fn discretize(&self) -> TokenSequence {
        TokenSequence(self.lattice.rows().into_iter().map(argmax).collect())
    }
}

/// Index of the largest entry; the first one wins ties.
pub fn argmax(row: ArrayView1<f64>) -> usize {
    let mut best = 0;
    for (k, &x) in row.iter().enumerate() {
        if x > row[best] {
            best = k;
        }
    }
    best
}

/// Keep rate `α(t) = 1 − t`.
pub fn alpha(t: f64) -> Result<f64> {
    check_time(t)?;
    Ok(1.0 - t)
}

/// Target rank degradation `r*(t) = (r_max − r_min)·t + r_min`.
pub fn target_rank(t: f64, cfg: &KernelConfig) -> Result<f64> {
    check_time(t)?;
    if t == 1.0 {
        return Ok(cfg.rank_max);
    }
    Ok((cfg.rank_max - cfg.rank_min) * t + cfg.rank_min)
}

/// Noise level whose rank degradation equals `r*(t)`.
pub fn sigma_of_t(t: f64, cfg: &KernelConfig) -> Result<NoiseLevel> {
    sigma_for_rank(target_rank(t, cfg)?)
}

/// Uniform sampler grid `1 = t_0 > t_1 > … > t_nfe = ε`.
pub fn time_grid(nfe: usize) -> Result<Vec<f64>> {
    if nfe == 0 {
        return domain("number of function evaluations must be positive");
    }
    Ok((0..=nfe).map(|k| 1.0 - (1.0 - T_EPSILON) * k as f64 / nfe as f64).collect())
}

fn check_sequence(x0: &TokenSequence, cfg: &KernelConfig) -> Result<()> {
    if x0.len() != cfg.seq_len {
        return Err(CandiError::Shape(format!("sequence length {} but config expects {}", x0.len(), cfg.seq_len)));
    }
    TokenSequence::new(x0.0.clone(), cfg.vocab).map(|_| ())
}

/// Draws `(X_t, M_t) ~ q_t(· | x0)`.
pub fn forward_corrupt_with(x0: &TokenSequence, t: f64, cfg: &KernelConfig, rng: &mut Rng) -> Result<HybridState> {
    check_sequence(x0, cfg)?;
    let keep = alpha(t)?;
    let sigma = sigma_of_t(t, cfg)?.get();
    let mut lattice = x0.one_hot(cfg.vocab);
    let mut mask = Vec::with_capacity(cfg.seq_len);
    for mut row in lattice.rows_mut() {
        let clean = rng.random::<f64>() < keep;
        mask.push(clean);
        if !clean {
            row.mapv_inplace(|x| x + sigma * rng.sample::<f64, _>(StandardNormal));
        }
    }
    Ok(HybridState { lattice, mask: MaskVector(mask), t })
}

pub fn forward_corrupt(x0: &TokenSequence, t: f64, cfg: &KernelConfig, seed: u64) -> Result<HybridState> {
    forward_corrupt_with(x0, t, cfg, &mut seeded(seed))
}

/// Carry-over masking step from time `s` to a later time `t`: corrupted
/// positions stay corrupted, clean ones survive with probability α(t)/α(s).
pub fn forward_mask_transition_with(m_s: &MaskVector, s: f64, t: f64, rng: &mut Rng) -> Result<MaskVector> {
    let (a_s, a_t) = (alpha(s)?, alpha(t)?);
    if s >= t {
        return domain(format!("forward mask transition needs s < t, got s = {s}, t = {t}"));
    }
    if a_s == 0.0 {
        return domain("forward mask transition from a fully corrupted time");
    }
    let survive = a_t / a_s;
    Ok(MaskVector(
        m_s.0.iter().map(|&clean| {
            let u = rng.random::<f64>();
            clean && u < survive
        }).collect(),
    ))
}

pub fn forward_mask_transition(m_s: &MaskVector, s: f64, t: f64, seed: u64) -> Result<MaskVector> {
    forward_mask_transition_with(m_s, s, t, &mut seeded(seed))
}

fn check_reverse_times(s: f64, t: f64) -> Result<(f64, f64)> {
    let (a_s, a_t) = (alpha(s)?, alpha(t)?);
    if s >= t {
        return domain(format!("reverse step needs s < t, got s = {s}, t = {t}"));
    }
    Ok((a_s, a_t))
}

/// Probability that a corrupted position at time `t` is clean at `s < t`.
pub fn unmask_probability(s: f64, t: f64) -> Result<f64> {
    let (a_s, a_t) = check_reverse_times(s, t)?;
    Ok((a_s - a_t) / (1.0 - a_t))
}

/// Branch weights of the reverse transition for a corrupted position:
/// `(p_unmask, p_stay_noisy)`.
pub fn reverse_branch_probabilities(s: f64, t: f64) -> Result<(f64, f64)> {
    let (a_s, a_t) = check_reverse_times(s, t)?;
    Ok(((a_s - a_t) / (1.0 - a_t), (1.0 - a_s) / (1.0 - a_t)))
}

/// Token sequence of the masked-diffusion baseline. Masked positions hold
/// the reserved symbol `vocab`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskedSequence {
    pub tokens: Vec<usize>,
    pub vocab: usize,
}

impl MaskedSequence {
    pub fn fully_masked(len: usize, vocab: usize) -> Self {
        Self { tokens: vec![vocab; len], vocab }
    }

    pub fn mask_symbol(&self) -> usize {
        self.vocab
    }

    pub fn is_masked(&self, i: usize) -> bool {
        self.tokens[i] == self.vocab
    }

    pub fn token(&self, i: usize) -> Option<usize> {
        (!self.is_masked(i)).then_some(self.tokens[i])
    }

    pub fn count_masked(&self) -> usize {
        self.tokens.iter().filter(|&&t| t == self.vocab).count()
    }
}

/// Baseline absorbing-state corruption: each token becomes the mask symbol
/// with probability `1 − α(t)`.
pub fn masked_forward_corrupt_with(x0: &TokenSequence, vocab: usize, t: f64, rng: &mut Rng) -> Result<MaskedSequence> {
    let keep = alpha(t)?;
    TokenSequence::new(x0.0.clone(), vocab)?;
    let tokens = x0.0.iter().map(|&tok| if rng.random::<f64>() < keep { tok } else { vocab }).collect();
    Ok(MaskedSequence { tokens, vocab })
}

pub fn masked_forward_corrupt(x0: &TokenSequence, vocab: usize, t: f64, seed: u64) -> Result<MaskedSequence> {
    masked_forward_corrupt_with(x0, vocab, t, &mut seeded(seed))
}
