use ndarray::Array2;

use super::{Denoiser, PosteriorGrid};
use crate::error::{CandiError, Result};
use crate::kernel::{argmax, sigma_of_t, HybridState, KernelConfig, MaskVector};
use crate::toy::ToyDistribution;

fn check_dims(dist: &ToyDistribution, rows: usize, cols: usize) -> Result<()> {
    if rows != dist.len() || cols != dist.vocab() {
        return Err(CandiError::Shape(format!(
            "state is {rows}x{cols} but distribution is over length {} and vocabulary {}",
            dist.len(),
            dist.vocab()
        )));
    }
    Ok(())
}

/// Posterior marginals, or `None` when the clean tokens rule out every
/// support sequence.
///
/// Each noisy row contributes `N(row; one-hot(x₀[i]), σ²I)`; up to factors
/// shared by all candidates that is `exp(row[x₀[i]] / σ²)`.
fn enumerate(dist: &ToyDistribution, lattice: &Array2<f64>, mask: &MaskVector, sigma: f64) -> Option<Array2<f64>> {
    let inv_var = 1.0 / (sigma * sigma);
    let clean: Vec<Option<usize>> =
        (0..lattice.nrows()).map(|i| mask.is_clean(i).then(|| argmax(lattice.row(i)))).collect();
    let mut logw = Vec::with_capacity(dist.support().len());
    for (k, (seq, p)) in dist.support().iter().enumerate() {
        let mut lw = p.ln();
        let mut compatible = true;
        for (i, &tok) in seq.tokens().iter().enumerate() {
            match clean[i] {
                Some(c) if c != tok => {
                    compatible = false;
                    break;
                }
                Some(_) => {}
                None => lw += lattice[[i, tok]] * inv_var,
            }
        }
        if compatible {
            logw.push((k, lw));
        }
    }
    let max = logw.iter().map(|&(_, w)| w).fold(f64::NEG_INFINITY, f64::max);
    if logw.is_empty() || !max.is_finite() {
        return None;
    }
    let mut probs = Array2::zeros(lattice.dim());
    let mut total = 0.0;
    for &(k, lw) in &logw {
        let w = (lw - max).exp();
        total += w;
        for (i, &tok) in dist.support()[k].0.tokens().iter().enumerate() {
            probs[[i, tok]] += w;
        }
    }
    probs /= total;
    Some(probs)
}

/// Independent per-position posterior under a uniform prior: clean rows are
/// their own token, noisy rows `softmax(row / σ²)`.
fn uniform_prior_posterior(lattice: &Array2<f64>, mask: &MaskVector, sigma: f64) -> Array2<f64> {
    let inv_var = 1.0 / (sigma * sigma);
    let mut probs = Array2::zeros(lattice.dim());
    for (i, mut out) in probs.rows_mut().into_iter().enumerate() {
        let row = lattice.row(i);
        if mask.is_clean(i) {
            out[argmax(row)] = 1.0;
        } else {
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            out.assign(&row.mapv(|x| ((x - max) * inv_var).exp()));
            let total = out.sum();
            out /= total;
        }
    }
    probs
}

/// Exact `P(x₀[i] | X_t, M_t)` by enumerating the support of `dist`.
pub fn exact_bayes_posterior(dist: &ToyDistribution, state: &HybridState, cfg: &KernelConfig) -> Result<PosteriorGrid> {
    check_dims(dist, state.seq_len(), state.vocab())?;
    let sigma = sigma_of_t(state.t, cfg)?.get();
    enumerate(dist, &state.lattice, &state.mask, sigma)
        .map(PosteriorGrid::new_unchecked)
        .ok_or(CandiError::ImpossibleEvidence)
}

/// The enumeration oracle as a [`Denoiser`].
///
/// Samplers can reach clean configurations the distribution never produces
/// (several positions unmasked independently in one step). With
/// `fallback` set, such states get the uniform-prior posterior instead of
/// an error.
#[derive(Debug, Clone)]
pub struct ExactBayesDenoiser {
    dist: ToyDistribution,
    fallback: bool,
}

impl ExactBayesDenoiser {
    pub fn new(dist: ToyDistribution) -> Self {
        Self { dist, fallback: true }
    }

    pub fn strict(dist: ToyDistribution) -> Self {
        Self { dist, fallback: false }
    }

    pub fn distribution(&self) -> &ToyDistribution {
        &self.dist
    }

    fn solve(&self, lattice: &Array2<f64>, mask: &MaskVector, t: f64, cfg: &KernelConfig) -> Result<PosteriorGrid> {
        check_dims(&self.dist, lattice.nrows(), lattice.ncols())?;
        if mask.len() != lattice.nrows() {
            return Err(CandiError::Shape(format!("mask of length {} for {} rows", mask.len(), lattice.nrows())));
        }
        let sigma = sigma_of_t(t, cfg)?.get();
        match enumerate(&self.dist, lattice, mask, sigma) {
            Some(p) => Ok(PosteriorGrid::new_unchecked(p)),
            None if self.fallback => Ok(PosteriorGrid::new_unchecked(uniform_prior_posterior(lattice, mask, sigma))),
            None => Err(CandiError::ImpossibleEvidence),
        }
    }
}

impl Denoiser for ExactBayesDenoiser {
    fn vocab(&self) -> usize {
        self.dist.vocab()
    }

    fn seq_len(&self) -> usize {
        self.dist.len()
    }

    fn posterior(&self, state: &HybridState, cfg: &KernelConfig) -> Result<PosteriorGrid> {
        self.solve(&state.lattice, &state.mask, state.t, cfg)
    }

    fn embedding_table(&self) -> Array2<f64> {
        Array2::eye(self.dist.vocab())
    }

    fn posterior_from_embeddings(&self, y: &Array2<f64>, mask: &MaskVector, t: f64, cfg: &KernelConfig) -> Result<PosteriorGrid> {
        self.solve(y, mask, t, cfg)
    }
}
