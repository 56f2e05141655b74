//! Python module `candi_lab`. Arrays cross the boundary as nested lists.

use std::path::Path;

use candi_core::analytics::{self, NoiseLevel, VocabSize};
use candi_core::cli::resolve_distribution;
use candi_core::denoise::{self, Denoiser, DenoiserParams, ExactBayesDenoiser, NetworkDenoiser, TrainConfig};
use candi_core::frontier::{self, Frontier, SampleSet};
use candi_core::kernel::{self, HybridState, KernelConfig, MaskVector, TokenSequence};
use candi_core::sampler::{Sampler, SamplerConfig, SamplerMode};
use candi_core::toy;
use candi_core::CandiError;
use ndarray::Array2;
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

fn err(e: CandiError) -> PyErr {
    PyValueError::new_err(format!("{}: {e}", e.kind()))
}

fn to_rows(a: &Array2<f64>) -> Vec<Vec<f64>> {
    a.rows().into_iter().map(|r| r.to_vec()).collect()
}

fn from_rows(rows: Vec<Vec<f64>>) -> PyResult<Array2<f64>> {
    let cols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != cols) {
        return Err(PyValueError::new_err("rows must all have the same length"));
    }
    Array2::from_shape_vec((rows.len(), cols), rows.concat()).map_err(|e| PyValueError::new_err(e.to_string()))
}

/// A finite distribution over token sequences.
#[pyclass(name = "ToyDistribution", frozen, skip_from_py_object)]
struct PyToyDistribution {
    inner: toy::ToyDistribution,
}

#[pymethods]
impl PyToyDistribution {
    #[new]
    fn new(vocab: usize, length: usize, support: Vec<(Vec<usize>, f64)>) -> PyResult<Self> {
        toy::ToyDistribution::new(vocab, length, support).map(|inner| Self { inner }).map_err(err)
    }

    /// `builtin:NAME[:ARGS]` or a JSON file path.
    #[staticmethod]
    fn load(spec: &str) -> PyResult<Self> {
        resolve_distribution(spec).map(|inner| Self { inner }).map_err(err)
    }

    #[getter]
    fn vocab(&self) -> usize {
        self.inner.vocab()
    }

    #[getter]
    fn length(&self) -> usize {
        self.inner.len()
    }

    fn support(&self) -> Vec<(Vec<usize>, f64)> {
        self.inner.support().iter().map(|(s, p)| (s.0.clone(), *p)).collect()
    }

    fn probability(&self, tokens: Vec<usize>) -> f64 {
        self.inner.probability(&TokenSequence(tokens))
    }

    fn marginals(&self) -> Vec<Vec<f64>> {
        to_rows(&self.inner.marginals())
    }

    fn to_json(&self) -> String {
        self.inner.to_json_string()
    }

    fn __repr__(&self) -> String {
        format!("ToyDistribution(vocab={}, length={}, support={})", self.inner.vocab(), self.inner.len(), self.inner.support().len())
    }
}

fn kernel_for(d: &toy::ToyDistribution, rank_min: f64, rank_max: f64) -> PyResult<KernelConfig> {
    KernelConfig::with_ranks(d.vocab(), d.len(), rank_min, rank_max).map_err(err)
}

#[pyfunction]
fn rank_degradation(sigma: f64) -> PyResult<f64> {
    Ok(analytics::rank_degradation(NoiseLevel::new(sigma).map_err(err)?))
}

#[pyfunction]
fn sigma_for_rank(rank: f64) -> PyResult<f64> {
    analytics::sigma_for_rank(rank).map(NoiseLevel::get).map_err(err)
}

#[pyfunction]
fn identity_corruption(sigma: f64, vocab: usize) -> PyResult<f64> {
    analytics::identity_corruption(NoiseLevel::new(sigma).map_err(err)?, VocabSize::new(vocab).map_err(err)?).map_err(err)
}

/// Returns `((rho_mean, rho_se), (rank_mean, rank_se))`.
#[pyfunction]
fn mc_corruption(sigma: f64, vocab: usize, n_samples: usize, seed: u64) -> PyResult<((f64, f64), (f64, f64))> {
    let (rho, rank) = analytics::mc_corruption(NoiseLevel::new(sigma).map_err(err)?, VocabSize::new(vocab).map_err(err)?, n_samples, seed)
        .map_err(err)?;
    Ok(((rho.mean, rho.std_err), (rank.mean, rank.std_err)))
}

/// Corrupts `tokens` to time `t`; returns `(lattice, clean_mask)`.
#[pyfunction]
#[pyo3(signature = (tokens, vocab, t, seed, rank_min = kernel::DEFAULT_RANK_MIN, rank_max = kernel::DEFAULT_RANK_MAX))]
fn forward_corrupt(tokens: Vec<usize>, vocab: usize, t: f64, seed: u64, rank_min: f64, rank_max: f64) -> PyResult<(Vec<Vec<f64>>, Vec<bool>)> {
    let cfg = KernelConfig::with_ranks(vocab, tokens.len(), rank_min, rank_max).map_err(err)?;
    let x0 = TokenSequence::new(tokens, vocab).map_err(err)?;
    let s = kernel::forward_corrupt(&x0, t, &cfg, seed).map_err(err)?;
    Ok((to_rows(&s.lattice), s.mask.0))
}

#[pyfunction]
fn sigma_of_t(t: f64, vocab: usize, length: usize) -> PyResult<f64> {
    let cfg = KernelConfig::new(vocab, length).map_err(err)?;
    kernel::sigma_of_t(t, &cfg).map(NoiseLevel::get).map_err(err)
}

#[pyfunction]
fn exact_posterior(dist: &PyToyDistribution, lattice: Vec<Vec<f64>>, mask: Vec<bool>, t: f64) -> PyResult<Vec<Vec<f64>>> {
    let cfg = KernelConfig::new(dist.inner.vocab(), dist.inner.len()).map_err(err)?;
    let state = HybridState { lattice: from_rows(lattice)?, mask: MaskVector(mask), t };
    state.validate().map_err(err)?;
    let post = denoise::exact_bayes_posterior(&dist.inner, &state, &cfg).map_err(err)?;
    Ok(to_rows(post.probs()))
}

/// Trains the network denoiser and returns the checkpoint as JSON.
#[pyfunction]
#[pyo3(signature = (dist, steps = 4000, learning_rate = 0.05, batch_size = 32, lambda_ = 0.5, dim = 16, hidden = 32, seed = 0))]
#[allow(clippy::too_many_arguments)]
fn train(dist: &PyToyDistribution, steps: usize, learning_rate: f64, batch_size: usize, lambda_: f64, dim: usize, hidden: usize, seed: u64) -> PyResult<String> {
    let tc = TrainConfig { learning_rate, steps, batch_size, seed, lambda: lambda_, dim, hidden };
    let cfg = KernelConfig::new(dist.inner.vocab(), dist.inner.len()).map_err(err)?;
    denoise::train(&dist.inner, &tc, &cfg).map(|p| p.to_json_string()).map_err(err)
}

/// Draws sequences. Uses the exact posterior unless `checkpoint` (a JSON
/// string) is given.
#[pyfunction]
#[pyo3(signature = (dist, mode = "hybrid_exact", nfe = 64, num_samples = 1000, seed = 0, temperature = 1.0, checkpoint = None))]
fn sample(dist: &PyToyDistribution, mode: &str, nfe: usize, num_samples: usize, seed: u64, temperature: f64, checkpoint: Option<&str>) -> PyResult<Vec<Vec<usize>>> {
    let mode: SamplerMode = mode.parse().map_err(err)?;
    let kc = kernel_for(&dist.inner, kernel::DEFAULT_RANK_MIN, kernel::DEFAULT_RANK_MAX)?;
    let den: Box<dyn Denoiser> = match checkpoint {
        Some(text) => Box::new(NetworkDenoiser::new(DenoiserParams::from_json_str(text).map_err(err)?).map_err(err)?),
        None => Box::new(ExactBayesDenoiser::new(dist.inner.clone())),
    };
    let cfg = SamplerConfig::new(mode, nfe, kc).with_seed(seed).with_temperature(temperature);
    let out = Sampler::new(den.as_ref(), cfg).and_then(|s| s.sample_many(num_samples)).map_err(err)?;
    Ok(out.into_iter().map(|s| s.0).collect())
}

#[pyfunction]
fn tv_distance(dist: &PyToyDistribution, samples: Vec<Vec<usize>>) -> PyResult<f64> {
    let set = SampleSet::new(samples.into_iter().map(TokenSequence).collect(), None).map_err(err)?;
    Ok(frontier::tv_distance(&set, &dist.inner))
}

/// Compares two frontier CSV files; returns "a", "b" or "incomparable".
#[pyfunction]
fn dominates(a_csv: &str, b_csv: &str) -> PyResult<String> {
    let a = Frontier::load(Path::new(a_csv)).map_err(err)?;
    let b = Frontier::load(Path::new(b_csv)).map_err(err)?;
    frontier::dominates(&a, &b).map(|d| d.to_string()).map_err(err)
}

#[pymodule]
fn candi_lab(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyToyDistribution>()?;
    m.add_function(wrap_pyfunction!(rank_degradation, m)?)?;
    m.add_function(wrap_pyfunction!(sigma_for_rank, m)?)?;
    m.add_function(wrap_pyfunction!(identity_corruption, m)?)?;
    m.add_function(wrap_pyfunction!(mc_corruption, m)?)?;
    m.add_function(wrap_pyfunction!(forward_corrupt, m)?)?;
    m.add_function(wrap_pyfunction!(sigma_of_t, m)?)?;
    m.add_function(wrap_pyfunction!(exact_posterior, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(sample, m)?)?;
    m.add_function(wrap_pyfunction!(tv_distance, m)?)?;
    m.add_function(wrap_pyfunction!(dominates, m)?)?;
    m.add("SAMPLER_MODES", SamplerMode::ALL.iter().map(|m| m.as_str()).collect::<Vec<_>>())?;
    Ok(())
}
