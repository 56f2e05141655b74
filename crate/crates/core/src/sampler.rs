//! Reverse-process samplers.
//!
//! All four modes walk the same uniform grid `1 = t_0 > … > t_nfe = ε` and
//! make exactly one denoiser call per step. On the last step every position
//! that is still corrupted is resolved, so `nfe = 1` is one-shot
//! per-position sampling from the posterior at `t = 1`.

use std::fmt;
use std::str::FromStr;

use ndarray::Array2;
use rand::Rng as _;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::denoise::{Denoiser, PosteriorGrid};
use crate::error::{domain, CandiError, Result};
use crate::kernel::{
    argmax, sigma_of_t, time_grid, unmask_probability, HybridState, KernelConfig, Lattice, MaskVector, MaskedSequence,
    TokenSequence,
};
use crate::rng::{stream_rng, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplerMode {
    HybridExact,
    HybridApprox,
    Masked,
    GaussianOde,
}

impl SamplerMode {
    pub const ALL: [SamplerMode; 4] = [Self::HybridExact, Self::HybridApprox, Self::Masked, Self::GaussianOde];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::HybridExact => "hybrid_exact",
            Self::HybridApprox => "hybrid_approx",
            Self::Masked => "masked",
            Self::GaussianOde => "gaussian_ode",
        }
    }
}

impl fmt::Display for SamplerMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SamplerMode {
    type Err = CandiError;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| CandiError::Config(format!("unknown sampler mode {s:?}")))
    }
}

/// Direction of the probability-flow step.
///
/// `Contracting` moves noisy rows toward the posterior mean. `Literal`
/// flips the sign of the score term, which moves them away.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OdeSign {
    #[default]
    Contracting,
    Literal,
}

impl OdeSign {
    fn factor(self) -> f64 {
        match self {
            Self::Contracting => 1.0,
            Self::Literal => -1.0,
        }
    }
}

/// Discretisation of the probability-flow ODE `dx = −σ·score·dσ`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OdeIntegrator {
    /// Euler in `σ²`: step `½(σ_t² − σ_s²)·score`.
    #[default]
    EulerVariance,
    /// Euler in `σ`: step `σ_t(σ_t − σ_s)·score`. With the score of a fixed
    /// posterior mean `μ` this is `μ + (σ_s/σ_t)(x − μ)`, the exact flow.
    Exponential,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OdeOptions {
    pub sign: OdeSign,
    pub integrator: OdeIntegrator,
}

impl OdeOptions {
    /// Multiplier of the score in one step from `σ_t` down to `σ_s`.
    pub fn coefficient(self, sigma_s: f64, sigma_t: f64) -> f64 {
        let c = match self.integrator {
            OdeIntegrator::EulerVariance => 0.5 * (sigma_t * sigma_t - sigma_s * sigma_s),
            OdeIntegrator::Exponential => sigma_t * (sigma_t - sigma_s),
        };
        c * self.sign.factor()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub nfe: usize,
    pub temperature: f64,
    pub guidance_weight: f64,
    pub mode: SamplerMode,
    pub seed: u64,
    pub kernel: KernelConfig,
    pub ode: OdeOptions,
}

impl SamplerConfig {
    pub fn new(mode: SamplerMode, nfe: usize, kernel: KernelConfig) -> Self {
        Self { nfe, temperature: 1.0, guidance_weight: 0.0, mode, seed: 0, kernel, ode: OdeOptions::default() }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_temperature(mut self, temperature: f64) -> Self {
        self.temperature = temperature;
        self
    }

    pub fn with_guidance(mut self, weight: f64) -> Self {
        self.guidance_weight = weight;
        self
    }

    pub fn with_ode(mut self, ode: OdeOptions) -> Self {
        self.ode = ode;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.nfe == 0 {
            return Err(CandiError::Config("nfe must be at least 1".into()));
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(CandiError::Config(format!("temperature must be positive, got {}", self.temperature)));
        }
        if !self.guidance_weight.is_finite() {
            return Err(CandiError::Config("guidance_weight must be finite".into()));
        }
        self.kernel.validate()
    }
}

/// Ordered `(t, state)` snapshots of one reverse trajectory, starting at the
/// prior draw and ending after the last step.
///
/// Masked-mode snapshots carry one-hot rows for unmasked positions and zero
/// rows elsewhere; approximate-mode snapshots carry the embedding-space
/// rows `Y` in place of the lattice.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Trajectory {
    pub snapshots: Vec<HybridState>,
}

/// Differentiable log-score over `L × v` lattices.
pub trait ClassifierFn: Sync {
    fn log_score(&self, x: &Array2<f64>) -> f64;

    fn gradient(&self, x: &Array2<f64>) -> Array2<f64>;
}

/// `f(x) = ⟨c, x⟩`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearClassifier {
    pub weights: Array2<f64>,
}

impl ClassifierFn for LinearClassifier {
    fn log_score(&self, x: &Array2<f64>) -> f64 {
        (&self.weights * x).sum()
    }

    fn gradient(&self, _x: &Array2<f64>) -> Array2<f64> {
        self.weights.clone()
    }
}

/// `f(x) = log sigmoid(⟨c, x⟩ + b)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LogisticClassifier {
    pub weights: Array2<f64>,
    pub bias: f64,
}

impl LogisticClassifier {
    fn logit(&self, x: &Array2<f64>) -> f64 {
        (&self.weights * x).sum() + self.bias
    }
}

impl ClassifierFn for LogisticClassifier {
    fn log_score(&self, x: &Array2<f64>) -> f64 {
        let z = self.logit(x);
        // −softplus(−z)
        -((-z).max(0.0) + (-z.abs()).exp().ln_1p())
    }

    fn gradient(&self, x: &Array2<f64>) -> Array2<f64> {
        let z = self.logit(x);
        let sig_neg = if z >= 0.0 { (-z).exp() / (1.0 + (-z).exp()) } else { 1.0 / (1.0 + z.exp()) };
        &self.weights * sig_neg
    }
}

/// Relabels a classifier's weights so token `k` becomes `perm[k]`.
pub fn permute_classifier_weights(weights: &Array2<f64>, perm: &[usize]) -> Result<Array2<f64>> {
    crate::toy::check_permutation(perm, weights.ncols())?;
    let mut out = Array2::zeros(weights.dim());
    for (k, &pk) in perm.iter().enumerate() {
        out.column_mut(pk).assign(&weights.column(k));
    }
    Ok(out)
}

/// Each row raised to `1/τ` and renormalised.
pub fn temper(posterior: &PosteriorGrid, tau: f64) -> Result<PosteriorGrid> {
    if !(tau > 0.0 && tau.is_finite()) {
        return domain(format!("temperature must be positive, got {tau}"));
    }
    let mut out = posterior.probs().clone();
    if tau == 1.0 {
        return Ok(PosteriorGrid::new_unchecked(out));
    }
    for (i, mut row) in out.rows_mut().into_iter().enumerate() {
        let max = row.iter().cloned().fold(0.0, f64::max);
        if !(max > 0.0) {
            return Err(CandiError::Degenerate(format!("posterior row {i} has no positive entry")));
        }
        let log_max = max.ln();
        row.mapv_inplace(|p| if p > 0.0 { ((p.ln() - log_max) / tau).exp() } else { 0.0 });
        let total = row.sum();
        row /= total;
    }
    Ok(PosteriorGrid::new_unchecked(out))
}

/// Moves noisy rows by `c·score`, `c = ½(σ_t² − σ_s²)` for the default
/// options. Clean rows are untouched.
pub fn ode_update(
    lattice: &Lattice,
    mask: &MaskVector,
    sigma_s: f64,
    sigma_t: f64,
    score: &Lattice,
    ode: OdeOptions,
) -> Result<Lattice> {
    if lattice.dim() != score.dim() || mask.len() != lattice.nrows() {
        return Err(CandiError::Shape(format!("lattice {:?}, score {:?}, mask {}", lattice.dim(), score.dim(), mask.len())));
    }
    let step = ode.coefficient(sigma_s, sigma_t);
    let mut out = lattice.clone();
    for (i, mut row) in out.rows_mut().into_iter().enumerate() {
        if !mask.is_clean(i) {
            row.scaled_add(step, &score.row(i));
        }
    }
    Ok(out)
}

fn check_step_times(s: f64, t: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&s) || !(0.0..=1.0).contains(&t) || s >= t {
        return domain(format!("reverse step needs 0 <= s < t <= 1, got s = {s}, t = {t}"));
    }
    Ok(())
}

/// One Euler step of the probability-flow ODE from `t` down to `s`.
pub fn ode_step(state: &HybridState, s: f64, t: f64, score: &Lattice, cfg: &KernelConfig) -> Result<Lattice> {
    ode_step_with(state, s, t, score, cfg, OdeOptions::default())
}

pub fn ode_step_with(state: &HybridState, s: f64, t: f64, score: &Lattice, cfg: &KernelConfig, ode: OdeOptions) -> Result<Lattice> {
    check_step_times(s, t)?;
    let (sigma_s, sigma_t) = (sigma_of_t(s, cfg)?.get(), sigma_of_t(t, cfg)?.get());
    ode_update(&state.lattice, &state.mask, sigma_s, sigma_t, score, ode)
}

/// One-hot of the per-row argmax.
pub fn straight_through(lattice: &Lattice) -> Lattice {
    let mut out = Array2::zeros(lattice.dim());
    for (i, row) in lattice.rows().into_iter().enumerate() {
        out[[i, argmax(row)]] = 1.0;
    }
    out
}

/// [`ode_step`] with `w·∇f` added to the score, the gradient taken at the
/// argmax one-hot of the lattice.
pub fn guided_ode_step(
    state: &HybridState,
    s: f64,
    t: f64,
    score: &Lattice,
    classifier: &dyn ClassifierFn,
    w: f64,
    cfg: &KernelConfig,
) -> Result<Lattice> {
    guided_ode_step_with(state, s, t, score, classifier, w, cfg, OdeOptions::default())
}

#[allow(clippy::too_many_arguments)]
pub fn guided_ode_step_with(
    state: &HybridState,
    s: f64,
    t: f64,
    score: &Lattice,
    classifier: &dyn ClassifierFn,
    w: f64,
    cfg: &KernelConfig,
    ode: OdeOptions,
) -> Result<Lattice> {
    if w == 0.0 {
        return ode_step_with(state, s, t, score, cfg, ode);
    }
    let grad = classifier.gradient(&straight_through(&state.lattice));
    if grad.dim() != score.dim() {
        return Err(CandiError::Shape(format!("classifier gradient {:?} for score {:?}", grad.dim(), score.dim())));
    }
    ode_step_with(state, s, t, &(score + &(grad * w)), cfg, ode)
}

/// Merges one reverse step: previously clean rows are copied, newly
/// unmasked rows become one-hots of `tokens`, the rest take `ode_rows`.
pub fn combine_update(
    prev: &HybridState,
    tokens: &TokenSequence,
    ode_rows: &Lattice,
    m_new: &MaskVector,
    s: f64,
) -> Result<HybridState> {
    let (l, v) = prev.lattice.dim();
    if ode_rows.dim() != (l, v) || tokens.len() != l || m_new.len() != l || prev.mask.len() != l {
        return Err(CandiError::Shape("combine_update inputs disagree in shape".into()));
    }
    let mut lattice = ode_rows.clone();
    for i in 0..l {
        if prev.mask.is_clean(i) {
            lattice.row_mut(i).assign(&prev.lattice.row(i));
        } else if m_new.is_clean(i) {
            let tok = tokens.0[i];
            if tok >= v {
                return domain(format!("token {tok} outside vocabulary {v}"));
            }
            lattice.row_mut(i).fill(0.0);
            lattice[[i, tok]] = 1.0;
        }
    }
    Ok(HybridState { lattice, mask: prev.mask.or(m_new), t: s })
}

fn sample_categorical(row: ndarray::ArrayView1<f64>, rng: &mut Rng) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last = 0;
    for (k, &p) in row.iter().enumerate() {
        if p > 0.0 {
            acc += p;
            last = k;
            if u < acc {
                return k;
            }
        }
    }
    last
}

fn prior_lattice(l: usize, v: usize, sigma: f64, rng: &mut Rng) -> Lattice {
    Array2::from_shape_simple_fn((l, v), || sigma * rng.sample::<f64, _>(StandardNormal))
}

fn step_unmask_probability(k: usize, grid: &[f64]) -> Result<f64> {
    if k + 2 == grid.len() {
        Ok(1.0)
    } else {
        unmask_probability(grid[k + 1], grid[k])
    }
}

fn check_denoiser(den: &dyn Denoiser, cfg: &SamplerConfig) -> Result<()> {
    cfg.validate()?;
    if den.vocab() != cfg.kernel.vocab || den.seq_len() != cfg.kernel.seq_len {
        return Err(CandiError::Shape(format!(
            "denoiser is {}x{} but kernel config is {}x{}",
            den.seq_len(),
            den.vocab(),
            cfg.kernel.seq_len,
            cfg.kernel.vocab
        )));
    }
    Ok(())
}

/// A denoiser, an optional guidance classifier and a configuration.
#[derive(Clone, Copy)]
pub struct Sampler<'a> {
    pub denoiser: &'a dyn Denoiser,
    pub classifier: Option<&'a dyn ClassifierFn>,
    pub cfg: SamplerConfig,
}

impl<'a> Sampler<'a> {
    pub fn new(denoiser: &'a dyn Denoiser, cfg: SamplerConfig) -> Result<Self> {
        check_denoiser(denoiser, &cfg)?;
        Ok(Self { denoiser, classifier: None, cfg })
    }

    pub fn with_classifier(mut self, classifier: &'a dyn ClassifierFn) -> Self {
        self.classifier = Some(classifier);
        self
    }

    /// Sample number `index`; stream `index` of the configured seed.
    pub fn sample(&self, index: u64) -> Result<TokenSequence> {
        self.run(&mut stream_rng(self.cfg.seed, index), None)
    }

    pub fn trajectory(&self, index: u64) -> Result<(TokenSequence, Trajectory)> {
        let mut traj = Trajectory::default();
        let out = self.run(&mut stream_rng(self.cfg.seed, index), Some(&mut traj))?;
        Ok((out, traj))
    }

    /// Samples `0..n` in parallel; the result does not depend on scheduling.
    pub fn sample_many(&self, n: usize) -> Result<Vec<TokenSequence>> {
        (0..n as u64).into_par_iter().map(|i| self.sample(i)).collect()
    }

    pub fn run(&self, rng: &mut Rng, traj: Option<&mut Trajectory>) -> Result<TokenSequence> {
        match self.cfg.mode {
            SamplerMode::HybridExact => self.hybrid_exact(rng, traj),
            SamplerMode::HybridApprox => self.hybrid_approx(rng, traj),
            SamplerMode::Masked => self.masked(rng, traj),
            SamplerMode::GaussianOde => self.gaussian_ode(rng, traj),
        }
    }

    fn guidance(&self) -> Option<(&'a dyn ClassifierFn, f64)> {
        match self.classifier {
            Some(c) if self.cfg.guidance_weight != 0.0 => Some((c, self.cfg.guidance_weight)),
            _ => None,
        }
    }

    fn score(&self, state: &HybridState, post: &PosteriorGrid, sigma_t: f64) -> Result<Lattice> {
        crate::denoise::score_from_posterior(state, post, crate::analytics::NoiseLevel::new(sigma_t)?)
    }

    fn flow(&self, state: &HybridState, s: f64, t: f64, score: &Lattice) -> Result<Lattice> {
        let kc = &self.cfg.kernel;
        match self.guidance() {
            Some((c, w)) => guided_ode_step_with(state, s, t, score, c, w, kc, self.cfg.ode),
            None => ode_step_with(state, s, t, score, kc, self.cfg.ode),
        }
    }

    fn hybrid_exact(&self, rng: &mut Rng, mut traj: Option<&mut Trajectory>) -> Result<TokenSequence> {
        let kc = &self.cfg.kernel;
        let (l, v) = (kc.seq_len, kc.vocab);
        let grid = time_grid(self.cfg.nfe)?;
        let mut state =
            HybridState { lattice: prior_lattice(l, v, sigma_of_t(1.0, kc)?.get(), rng), mask: MaskVector::all(l, false), t: 1.0 };
        record(&mut traj, &state);
        for k in 0..self.cfg.nfe {
            let (t, s) = (grid[k], grid[k + 1]);
            let p_unmask = step_unmask_probability(k, &grid)?;
            let post = self.denoiser.posterior(&state, kc)?;
            let tempered = temper(&post, self.cfg.temperature)?;
            let mut m_new = vec![false; l];
            let mut tokens = vec![0; l];
            for i in 0..l {
                if !state.mask.is_clean(i) && rng.random::<f64>() < p_unmask {
                    m_new[i] = true;
                    tokens[i] = sample_categorical(tempered.probs().row(i), rng);
                }
            }
            let ode_rows = if p_unmask < 1.0 {
                let score = self.score(&state, &post, sigma_of_t(t, kc)?.get())?;
                self.flow(&state, s, t, &score)?
            } else {
                state.lattice.clone()
            };
            state = combine_update(&state, &TokenSequence(tokens), &ode_rows, &MaskVector(m_new), s)?;
            record(&mut traj, &state);
        }
        Ok(state.discretize())
    }

    fn hybrid_approx(&self, rng: &mut Rng, mut traj: Option<&mut Trajectory>) -> Result<TokenSequence> {
        let kc = &self.cfg.kernel;
        let (l, v) = (kc.seq_len, kc.vocab);
        let w = self.denoiser.embedding_table();
        if w.nrows() != v {
            return Err(CandiError::Shape(format!("embedding table has {} rows for vocabulary {v}", w.nrows())));
        }
        let grid = time_grid(self.cfg.nfe)?;
        let mut y = prior_lattice(l, v, sigma_of_t(1.0, kc)?.get(), rng).dot(&w);
        let mut mask = MaskVector::all(l, false);
        let mut tokens = vec![0usize; l];
        record(&mut traj, &HybridState { lattice: y.clone(), mask: mask.clone(), t: 1.0 });
        for k in 0..self.cfg.nfe {
            let (t, s) = (grid[k], grid[k + 1]);
            let p_unmask = step_unmask_probability(k, &grid)?;
            let post = self.denoiser.posterior_from_embeddings(&y, &mask, t, kc)?;
            let tempered = temper(&post, self.cfg.temperature)?;
            let (sigma_s, sigma_t) = (sigma_of_t(s, kc)?.get(), sigma_of_t(t, kc)?.get());
            let step = self.cfg.ode.coefficient(sigma_s, sigma_t);

            let mut m_new = mask.clone();
            let mut estimate = tokens.clone();
            for i in 0..l {
                if mask.is_clean(i) {
                    continue;
                }
                if rng.random::<f64>() < p_unmask {
                    m_new.0[i] = true;
                    tokens[i] = sample_categorical(tempered.probs().row(i), rng);
                    estimate[i] = tokens[i];
                } else {
                    // single-sample stand-in for E[Y₀ | Y_t]
                    estimate[i] = sample_categorical(post.probs().row(i), rng);
                }
            }
            let guide = self.guidance().map(|(c, gw)| c.gradient(&TokenSequence(estimate.clone()).one_hot(v)).dot(&w) * gw);
            for i in 0..l {
                if mask.is_clean(i) {
                    continue;
                }
                if m_new.is_clean(i) {
                    y.row_mut(i).assign(&w.row(tokens[i]));
                } else {
                    let score = (&w.row(estimate[i]) - &y.row(i)) / (sigma_t * sigma_t);
                    y.row_mut(i).scaled_add(step, &score);
                    if let Some(g) = &guide {
                        y.row_mut(i).scaled_add(step, &g.row(i));
                    }
                }
            }
            mask = m_new;
            record(&mut traj, &HybridState { lattice: y.clone(), mask: mask.clone(), t: s });
        }
        // Rows left noisy by a custom grid would fall back to the nearest
        // embedding; with the terminal rule every row is clean here.
        let out = (0..l)
            .map(|i| if mask.is_clean(i) { tokens[i] } else { nearest_row(&w, y.row(i)) })
            .collect();
        Ok(TokenSequence(out))
    }

    fn masked(&self, rng: &mut Rng, mut traj: Option<&mut Trajectory>) -> Result<TokenSequence> {
        let kc = &self.cfg.kernel;
        let (l, v) = (kc.seq_len, kc.vocab);
        let grid = time_grid(self.cfg.nfe)?;
        let mut seq = MaskedSequence::fully_masked(l, v);
        record(&mut traj, &masked_snapshot(&seq, 1.0));
        for k in 0..self.cfg.nfe {
            let (t, s) = (grid[k], grid[k + 1]);
            let p_unmask = step_unmask_probability(k, &grid)?;
            let post = temper(&self.denoiser.posterior_masked(&seq, t, kc)?, self.cfg.temperature)?;
            for i in 0..l {
                if seq.is_masked(i) && rng.random::<f64>() < p_unmask {
                    seq.tokens[i] = sample_categorical(post.probs().row(i), rng);
                }
            }
            record(&mut traj, &masked_snapshot(&seq, s));
        }
        Ok(TokenSequence(seq.tokens))
    }

    fn gaussian_ode(&self, rng: &mut Rng, mut traj: Option<&mut Trajectory>) -> Result<TokenSequence> {
        let kc = &self.cfg.kernel;
        let (l, v) = (kc.seq_len, kc.vocab);
        let grid = time_grid(self.cfg.nfe)?;
        let mut state =
            HybridState { lattice: prior_lattice(l, v, sigma_of_t(1.0, kc)?.get(), rng), mask: MaskVector::all(l, false), t: 1.0 };
        record(&mut traj, &state);
        for k in 0..self.cfg.nfe {
            let (t, s) = (grid[k], grid[k + 1]);
            let post = self.denoiser.posterior(&state, kc)?;
            let score = self.score(&state, &post, sigma_of_t(t, kc)?.get())?;
            state = HybridState { lattice: self.flow(&state, s, t, &score)?, mask: state.mask, t: s };
            record(&mut traj, &state);
        }
        Ok(state.discretize())
    }
}

fn record(traj: &mut Option<&mut Trajectory>, state: &HybridState) {
    if let Some(t) = traj {
        t.snapshots.push(state.clone());
    }
}

fn masked_snapshot(seq: &MaskedSequence, t: f64) -> HybridState {
    let l = seq.tokens.len();
    let mut lattice = Array2::zeros((l, seq.vocab));
    let mut mask = vec![false; l];
    for i in 0..l {
        if let Some(tok) = seq.token(i) {
            lattice[[i, tok]] = 1.0;
            mask[i] = true;
        }
    }
    HybridState { lattice, mask: MaskVector(mask), t }
}

fn nearest_row(w: &Array2<f64>, y: ndarray::ArrayView1<f64>) -> usize {
    let mut best = (0, f64::INFINITY);
    for (k, row) in w.rows().into_iter().enumerate() {
        let d: f64 = row.iter().zip(y.iter()).map(|(a, b)| (a - b) * (a - b)).sum();
        if d < best.1 {
            best = (k, d);
        }
    }
    best.0
}

pub fn sample_hybrid_exact(denoiser: &dyn Denoiser, cfg: &SamplerConfig) -> Result<TokenSequence> {
    Sampler::new(denoiser, SamplerConfig { mode: SamplerMode::HybridExact, ..*cfg })?.sample(0)
}

pub fn sample_hybrid_approx(denoiser: &dyn Denoiser, cfg: &SamplerConfig) -> Result<TokenSequence> {
    Sampler::new(denoiser, SamplerConfig { mode: SamplerMode::HybridApprox, ..*cfg })?.sample(0)
}

pub fn sample_masked(denoiser: &dyn Denoiser, cfg: &SamplerConfig) -> Result<TokenSequence> {
    Sampler::new(denoiser, SamplerConfig { mode: SamplerMode::Masked, ..*cfg })?.sample(0)
}

pub fn sample_gaussian_ode(denoiser: &dyn Denoiser, cfg: &SamplerConfig) -> Result<TokenSequence> {
    Sampler::new(denoiser, SamplerConfig { mode: SamplerMode::GaussianOde, ..*cfg })?.sample(0)
}
