//! Posterior models `P(X₀ | X_t, M_t)`: an exact enumeration oracle over a
//! [`ToyDistribution`](crate::toy::ToyDistribution) and a small trainable
//! network.

mod exact;
mod network;

pub use exact::{exact_bayes_posterior, ExactBayesDenoiser};
pub use network::{
    denoiser_forward, denoiser_loss, forward_embedded, loss, loss_and_gradient, loss_gradient, network_inputs,
    sample_batch, train, train_with_history, weighted_cross_entropy, DenoiserParams, NetworkDenoiser, NetworkShape,
    TrainConfig, TrainOutcome, TrainingExample, LOG_FLOOR,
};

use ndarray::Array2;

use crate::analytics::NoiseLevel;
use crate::error::{domain, CandiError, Result};
use crate::kernel::{HybridState, KernelConfig, Lattice, MaskVector, MaskedSequence};

/// One categorical distribution over the vocabulary per position.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorGrid(Array2<f64>);

impl PosteriorGrid {
    pub fn new(probs: Array2<f64>) -> Result<Self> {
        for (i, row) in probs.rows().into_iter().enumerate() {
            if row.iter().any(|&p| !(p >= 0.0) || !p.is_finite()) {
                return Err(CandiError::Numeric(format!("posterior row {i} has negative or non-finite entries")));
            }
            let total = row.sum();
            if (total - 1.0).abs() > 1e-9 {
                return Err(CandiError::Numeric(format!("posterior row {i} sums to {total}")));
            }
        }
        Ok(Self(probs))
    }

    pub(crate) fn new_unchecked(probs: Array2<f64>) -> Self {
        Self(probs)
    }

    pub fn probs(&self) -> &Array2<f64> {
        &self.0
    }

    pub fn into_inner(self) -> Array2<f64> {
        self.0
    }

    pub fn seq_len(&self) -> usize {
        self.0.nrows()
    }

    pub fn vocab(&self) -> usize {
        self.0.ncols()
    }
}

/// Anything that maps a hybrid state to per-position posteriors.
///
/// Denoisers see the lattice through an embedding table `W` (`v × d`,
/// `Y = X·W`). Working in embedding space directly is what the approximate
/// sampler needs; the exact oracle uses the identity table.
pub trait Denoiser: Sync {
    fn vocab(&self) -> usize;

    fn seq_len(&self) -> usize;

    fn posterior(&self, state: &HybridState, cfg: &KernelConfig) -> Result<PosteriorGrid>;

    fn embedding_table(&self) -> Array2<f64>;

    /// Posterior given already-embedded rows `Y` (`L × d`).
    fn posterior_from_embeddings(&self, y: &Array2<f64>, mask: &MaskVector, t: f64, cfg: &KernelConfig)
        -> Result<PosteriorGrid>;

    /// Posterior for a masked-diffusion input. Masked positions are fed as
    /// all-zero rows, which sit at equal distance from every one-hot and so
    /// carry no token information.
    fn posterior_masked(&self, seq: &MaskedSequence, t: f64, cfg: &KernelConfig) -> Result<PosteriorGrid> {
        let w = self.embedding_table();
        let mut y = Array2::zeros((seq.tokens.len(), w.ncols()));
        let mut mask = Vec::with_capacity(seq.tokens.len());
        for (i, mut row) in y.rows_mut().into_iter().enumerate() {
            match seq.token(i) {
                Some(tok) => {
                    row.assign(&w.row(tok));
                    mask.push(true);
                }
                None => mask.push(false),
            }
        }
        self.posterior_from_embeddings(&y, &MaskVector(mask), t, cfg)
    }
}

/// `∇ log p_t = −(X_t − E[X₀ | X_t]) / σ²` on noisy rows; clean rows get 0.
pub fn score_from_posterior(state: &HybridState, posterior: &PosteriorGrid, sigma: NoiseLevel) -> Result<Lattice> {
    if state.lattice.dim() != posterior.probs().dim() {
        return Err(CandiError::Shape(format!(
            "lattice {:?} vs posterior {:?}",
            state.lattice.dim(),
            posterior.probs().dim()
        )));
    }
    let inv_var = 1.0 / (sigma.get() * sigma.get());
    let mut score = Array2::zeros(state.lattice.dim());
    for (i, mut row) in score.rows_mut().into_iter().enumerate() {
        if !state.mask.is_clean(i) {
            let diff = &state.lattice.row(i) - &posterior.probs().row(i);
            row.assign(&(diff * -inv_var));
        }
    }
    Ok(score)
}

/// Scales noisy embedding rows by `1/√(σ² + 1)`; clean rows pass through.
pub fn precondition(embeddings: &Array2<f64>, mask: &MaskVector, sigma: f64) -> Result<Array2<f64>> {
    if embeddings.nrows() != mask.len() {
        return Err(CandiError::Shape(format!("{} embedding rows for mask of length {}", embeddings.nrows(), mask.len())));
    }
    if !(sigma >= 0.0) {
        return domain(format!("preconditioning needs sigma >= 0, got {sigma}"));
    }
    let scale = 1.0 / (sigma * sigma + 1.0).sqrt();
    let mut out = embeddings.clone();
    for (i, mut row) in out.rows_mut().into_iter().enumerate() {
        if !mask.is_clean(i) {
            row *= scale;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn state(lattice: Array2<f64>, mask: Vec<bool>) -> HybridState {
        HybridState { lattice, mask: MaskVector(mask), t: 0.5 }
    }

    #[test]
    fn posterior_grid_validation() {
        assert!(PosteriorGrid::new(array![[0.5, 0.5], [1.0, 0.0]]).is_ok());
        assert!(PosteriorGrid::new(array![[0.5, 0.6]]).is_err());
        assert!(PosteriorGrid::new(array![[1.5, -0.5]]).is_err());
    }

    #[test]
    fn score_fixed_points() {
        let lat = array![[0.2, 0.3, 0.5], [0.0, 1.0, 0.0]];
        let s = state(lat.clone(), vec![false, false]);
        let post = PosteriorGrid::new(lat).unwrap();
        let score = score_from_posterior(&s, &post, NoiseLevel::new(0.7).unwrap()).unwrap();
        assert!(score.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn score_zero_on_clean_rows() {
        let s = state(array![[1.0, 0.0], [3.0, -1.0]], vec![true, false]);
        let post = PosteriorGrid::new(array![[0.5, 0.5], [0.5, 0.5]]).unwrap();
        let score = score_from_posterior(&s, &post, NoiseLevel::new(2.0).unwrap()).unwrap();
        assert_eq!(score.row(0).to_vec(), vec![0.0, 0.0]);
        assert_eq!(score.row(1).to_vec(), vec![-2.5 / 4.0, 1.5 / 4.0]);
        let bad = PosteriorGrid::new(array![[1.0, 0.0, 0.0]]).unwrap();
        assert!(score_from_posterior(&s, &bad, NoiseLevel::new(2.0).unwrap()).is_err());
    }

    #[test]
    fn precondition_cases() {
        let e = array![[2.0, -4.0], [1.0, 1.0]];
        let noisy = MaskVector(vec![false, true]);
        assert_eq!(precondition(&e, &noisy, 0.0).unwrap(), e);
        assert_eq!(precondition(&e, &MaskVector::all(2, true), 5.0).unwrap(), e);
        let halved = precondition(&e, &noisy, 3f64.sqrt()).unwrap();
        assert!((halved[[0, 0]] - 1.0).abs() < 1e-15 && (halved[[0, 1]] + 2.0).abs() < 1e-15);
        assert_eq!(halved.row(1), e.row(1));
        assert!(precondition(&e, &MaskVector::all(3, true), 1.0).is_err());
    }
}
