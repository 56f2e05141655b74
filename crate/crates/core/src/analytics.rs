//! Discrete identity corruption and continuous rank degradation of noisy
//! one-hot (and embedded) tokens, in closed form and by Monte Carlo.
//!
//! For a one-hot row `e_i` perturbed by `N(0, σ²I)`:
//!
//! * identity corruption `ρ(σ, v)` is the probability that the argmax of the
//!   noisy row is no longer `i`;
//! * rank degradation `r(σ) = Φ(−1/(σ√2))` is the expected fraction of the
//!   `v − 1` wrong coordinates that exceed the correct one.
//!
//! `ρ` depends strongly on the vocabulary size while `r` does not at all.

use ndarray::{Array2, ArrayView1};
use rand::Rng as _;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;
use std::f64::consts::SQRT_2;

use crate::error::{domain, CandiError, Result};
use crate::quadrature;
use crate::rng::stream_rng;
use crate::special::{log_std_normal_cdf, normal_pdf, std_normal_cdf, std_normal_quantile};

/// Half-width of the integration window, in standard deviations.
const WINDOW: f64 = 12.0;
/// Samples per independent RNG stream in the Monte Carlo estimators.
const MC_CHUNK: usize = 1024;

/// Standard deviation of the Gaussian noise on the lattice.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize)]
pub struct NoiseLevel(f64);

impl NoiseLevel {
    pub fn new(sigma: f64) -> Result<Self> {
        if sigma.is_finite() && sigma > 0.0 {
            Ok(Self(sigma))
        } else {
            domain(format!("noise level must be positive and finite, got {sigma}"))
        }
    }

    pub fn get(self) -> f64 {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub struct VocabSize(usize);

impl VocabSize {
    pub fn new(v: usize) -> Result<Self> {
        if v >= 2 {
            Ok(Self(v))
        } else {
            domain(format!("vocabulary needs at least 2 categories, got {v}"))
        }
    }

    pub fn get(self) -> usize {
        self.0
    }
}

/// Both corruption measures at one noise level.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CorruptionPoint {
    pub sigma: NoiseLevel,
    pub vocab: VocabSize,
    pub rho: f64,
    pub rank: f64,
}

impl CorruptionPoint {
    pub fn evaluate(sigma: NoiseLevel, vocab: VocabSize) -> Result<Self> {
        Ok(Self {
            sigma,
            vocab,
            rho: identity_corruption(sigma, vocab)?,
            rank: rank_degradation(sigma),
        })
    }
}

/// Monte Carlo mean with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct McEstimate {
    pub mean: f64,
    pub std_err: f64,
    pub n_samples: usize,
    pub seed: u64,
}

impl McEstimate {
    fn from_sums(sum: f64, sum_sq: f64, n: usize, seed: u64) -> Self {
        let nf = n as f64;
        let mean = sum / nf;
        let var = if n > 1 { ((sum_sq - nf * mean * mean) / (nf - 1.0)).max(0.0) } else { 0.0 };
        Self { mean, std_err: (var / nf).sqrt(), n_samples: n, seed }
    }

    /// |mean − target| in units of standard error. A zero standard error
    /// counts as agreement only for an exact match.
    pub fn z_score(&self, target: f64) -> f64 {
        let diff = (self.mean - target).abs();
        if self.std_err > 0.0 {
            diff / self.std_err
        } else if diff < 1e-12 {
            0.0
        } else {
            f64::INFINITY
        }
    }
}

/// `r(σ) = Φ(−1/(σ√2))`.
pub fn rank_degradation(sigma: NoiseLevel) -> f64 {
    std_normal_cdf(-1.0 / (sigma.get() * SQRT_2))
}

/// Inverse of [`rank_degradation`]: the σ at which `r(σ) = rank`.
pub fn sigma_for_rank(rank: f64) -> Result<NoiseLevel> {
    if !(rank > 0.0 && rank < 0.5) {
        return domain(format!("target rank must lie in (0, 0.5), got {rank}"));
    }
    let z = std_normal_quantile(rank)?;
    NoiseLevel::new(-1.0 / (z * SQRT_2))
}

/// `ρ(σ, v) = ∫ (1 − Φ(s/σ)^{v−1}) N(s; 1, σ²) ds`.
///
/// The power is evaluated as `−expm1((v−1)·ln Φ)` so it neither underflows
/// at large `v` nor cancels when `Φ ≈ 1`.
pub fn identity_corruption(sigma: NoiseLevel, vocab: VocabSize) -> Result<f64> {
    let s = sigma.get();
    let competitors = (vocab.get() - 1) as f64;
    let rho = quadrature::integrate(
        |x| -(competitors * log_std_normal_cdf(x / s)).exp_m1() * normal_pdf(x, 1.0, s),
        1.0 - WINDOW * s,
        1.0 + WINDOW * s,
    )?;
    Ok(rho.clamp(0.0, 1.0 - 1.0 / vocab.get() as f64))
}

/// Identity corruption of a row that is already off the simplex corners:
/// the probability that the argmax of `row + N(0, σ²I)` is not
/// `correct_index`.
pub fn identity_corruption_state(row: ArrayView1<f64>, correct_index: usize, sigma: NoiseLevel) -> Result<f64> {
    let v = row.len();
    if v < 2 {
        return domain("lattice row needs at least 2 entries");
    }
    if correct_index >= v {
        return domain(format!("correct index {correct_index} out of range for row of length {v}"));
    }
    if row.iter().any(|x| !x.is_finite()) {
        return domain("lattice row has non-finite entries");
    }
    let s = sigma.get();
    let centre = row[correct_index];
    let rho = quadrature::integrate(
        |x| {
            let log_all_below: f64 = row
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != correct_index)
                .map(|(_, &xj)| log_std_normal_cdf((x - xj) / s))
                .sum();
            -log_all_below.exp_m1() * normal_pdf(x, centre, s)
        },
        centre - WINDOW * s,
        centre + WINDOW * s,
    )?;
    Ok(rho.clamp(0.0, 1.0))
}

#[derive(Default, Clone, Copy)]
struct Moments {
    sum: f64,
    sum_sq: f64,
}

impl Moments {
    fn push(&mut self, x: f64) {
        self.sum += x;
        self.sum_sq += x * x;
    }

    fn merge(self, other: Self) -> Self {
        Self { sum: self.sum + other.sum, sum_sq: self.sum_sq + other.sum_sq }
    }
}

/// Runs `n` draws split into fixed-size chunks, each with its own stream.
/// Chunk results are merged in index order, so the answer does not depend
/// on the thread count.
fn chunked_mc<const K: usize, F>(n: usize, seed: u64, draw: F) -> [Moments; K]
where
    F: Fn(&mut crate::rng::Rng) -> [f64; K] + Sync,
{
    let chunks = n.div_ceil(MC_CHUNK);
    let partial: Vec<[Moments; K]> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = stream_rng(seed, c as u64);
            let mut acc = [Moments::default(); K];
            let len = MC_CHUNK.min(n - c * MC_CHUNK);
            for _ in 0..len {
                let vals = draw(&mut rng);
                for (a, v) in acc.iter_mut().zip(vals) {
                    a.push(v);
                }
            }
            acc
        })
        .collect();
    partial.into_iter().fold([Moments::default(); K], |mut tot, part| {
        for (t, p) in tot.iter_mut().zip(part) {
            *t = t.merge(p);
        }
        tot
    })
}

/// Empirical argmax-flip rate and mean exceed-fraction of `N(e_0, σ²I)`.
pub fn mc_corruption(sigma: NoiseLevel, vocab: VocabSize, n_samples: usize, seed: u64) -> Result<(McEstimate, McEstimate)> {
    if n_samples < 100 {
        return domain(format!("Monte Carlo needs at least 100 samples, got {n_samples}"));
    }
    let s = sigma.get();
    let v = vocab.get();
    let [flip, exceed] = chunked_mc::<2, _>(n_samples, seed, |rng| {
        let correct = 1.0 + s * rng.sample::<f64, _>(StandardNormal);
        let mut above = 0usize;
        for _ in 1..v {
            if s * rng.sample::<f64, _>(StandardNormal) > correct {
                above += 1;
            }
        }
        [if above > 0 { 1.0 } else { 0.0 }, above as f64 / (v - 1) as f64]
    });
    Ok((
        McEstimate::from_sums(flip.sum, flip.sum_sq, n_samples, seed),
        McEstimate::from_sums(exceed.sum, exceed.sum_sq, n_samples, seed),
    ))
}

/// A table of `v` token embeddings of common dimension `d`, one per row.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    vectors: Array2<f64>,
}

impl EmbeddingTable {
    pub fn new(vectors: Array2<f64>) -> Result<Self> {
        if vectors.nrows() < 2 || vectors.ncols() == 0 {
            return domain("embedding table needs at least 2 vectors of positive dimension");
        }
        if vectors.iter().any(|x| !x.is_finite()) {
            return domain("embedding table has non-finite entries");
        }
        Ok(Self { vectors })
    }

    /// The simplex corners: token `k` embeds as the `k`-th one-hot vector.
    pub fn one_hot(v: usize) -> Result<Self> {
        Self::new(Array2::eye(v))
    }

    pub fn vocab(&self) -> usize {
        self.vectors.nrows()
    }

    pub fn dim(&self) -> usize {
        self.vectors.ncols()
    }

    pub fn vectors(&self) -> &Array2<f64> {
        &self.vectors
    }

    fn check_index(&self, i: usize) -> Result<()> {
        if i < self.vocab() {
            Ok(())
        } else {
            domain(format!("token index {i} out of range for {} embeddings", self.vocab()))
        }
    }
}

/// How a noisy embedding is decoded back to a token.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WinMetric {
    /// Largest inner product.
    Dot,
    /// Smallest Euclidean distance.
    L2,
}

/// Probability that token `i`'s noisy embedding `e_i + σε` still prefers
/// `e_i` over `e_j`.
///
/// * dot: `Φ((‖e_i‖² − e_i·e_j) / (σ‖e_j − e_i‖))`
/// * l2:  `Φ(‖e_j − e_i‖ / (2σ))`
pub fn embed_win_rate(table: &EmbeddingTable, i: usize, j: usize, sigma: NoiseLevel, metric: WinMetric) -> Result<f64> {
    table.check_index(i)?;
    table.check_index(j)?;
    if i == j {
        return domain("win rate needs two distinct tokens");
    }
    let ei = table.vectors.row(i);
    let ej = table.vectors.row(j);
    let diff = &ej - &ei;
    let dist = diff.dot(&diff).sqrt();
    if dist == 0.0 {
        return Err(CandiError::Degenerate(format!("tokens {i} and {j} share an embedding")));
    }
    let s = sigma.get();
    Ok(match metric {
        WinMetric::Dot => std_normal_cdf((ei.dot(&ei) - ei.dot(&ej)) / (s * dist)),
        WinMetric::L2 => std_normal_cdf(dist / (2.0 * s)),
    })
}

/// `r_ω(i) = 1 − mean_{j≠i} ω(i, j)`.
pub fn embed_rank_degradation(table: &EmbeddingTable, i: usize, sigma: NoiseLevel, metric: WinMetric) -> Result<f64> {
    table.check_index(i)?;
    let v = table.vocab();
    let mut total = 0.0;
    for j in (0..v).filter(|&j| j != i) {
        total += embed_win_rate(table, i, j, sigma, metric)?;
    }
    Ok(1.0 - total / (v - 1) as f64)
}

/// Frequency with which some other embedding beats `e_i` under noise
/// `N(e_i, σ²I)`.
pub fn embed_identity_corruption_mc(
    table: &EmbeddingTable,
    i: usize,
    sigma: NoiseLevel,
    metric: WinMetric,
    n_samples: usize,
    seed: u64,
) -> Result<McEstimate> {
    table.check_index(i)?;
    if n_samples < 100 {
        return domain(format!("Monte Carlo needs at least 100 samples, got {n_samples}"));
    }
    let s = sigma.get();
    let w = &table.vectors;
    let [flip] = chunked_mc::<1, _>(n_samples, seed, |rng| {
        let y: Vec<f64> = w.row(i).iter().map(|&m| m + s * rng.sample::<f64, _>(StandardNormal)).collect();
        let y = ArrayView1::from(&y);
        let score = |k: usize| match metric {
            WinMetric::Dot => y.dot(&w.row(k)),
            WinMetric::L2 => {
                let d = &y - &w.row(k);
                -d.dot(&d)
            }
        };
        let own = score(i);
        let beaten = (0..w.nrows()).any(|k| k != i && score(k) > own);
        [if beaten { 1.0 } else { 0.0 }]
    });
    Ok(McEstimate::from_sums(flip.sum, flip.sum_sq, n_samples, seed))
}
