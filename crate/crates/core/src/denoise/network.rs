//! A small trainable denoiser with hand-written backpropagation.
//!
//! Per example, with `κ = 1/√(σ² + 1)` and `s = ln σ`:
//!
//! ```text
//! Y   = X·W                                   (L × d)
//! E_i = Y_i                      if clean
//!     = κ((1 − λ)Y_i + λb)       if noisy
//! H_i = tanh(E_i·A_i + a_i + s·g_i)           (L × h)
//! Z   = H + P·H                               (P is L × L)
//! p_i = softmax(Z_i·U_i + c_i)
//! ```
//!
//! Each position has its own feed-forward weights; `P` is the only path by
//! which positions see each other. `λ` is fixed during training.

use std::path::Path;

use ndarray::{Array1, Array2, Array3, ArrayView1, ArrayViewMut2, Axis};
use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{Denoiser, PosteriorGrid};
use crate::error::{CandiError, Result};
use crate::kernel::{forward_corrupt_with, sigma_of_t, HybridState, KernelConfig, MaskVector, TokenSequence, T_EPSILON};
use crate::rng::{seeded, Rng};
use crate::toy::ToyDistribution;

/// Floor applied to posterior entries before taking logs.
pub const LOG_FLOOR: f64 = 1e-30;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkShape {
    pub v: usize,
    pub d: usize,
    pub h: usize,
    #[serde(rename = "L")]
    pub l: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenoiserParams {
    /// Embedding table, `v × d`.
    pub embedding: Array2<f64>,
    /// Corruption bias mixed into noisy rows, `d`.
    pub corruption_bias: Array1<f64>,
    pub lambda: f64,
    /// `L × d × h`.
    pub hidden_weight: Array3<f64>,
    /// `L × h`.
    pub hidden_bias: Array2<f64>,
    /// `L × h`, multiplies the time feature `ln σ(t)`.
    pub time_weight: Array2<f64>,
    /// Position mixing, `L × L`.
    pub mixing: Array2<f64>,
    /// `L × h × v`.
    pub output_weight: Array3<f64>,
    /// `L × v`.
    pub output_bias: Array2<f64>,
}

impl DenoiserParams {
    pub fn zeros(shape: NetworkShape, lambda: f64) -> Self {
        let NetworkShape { v, d, h, l } = shape;
        Self {
            embedding: Array2::zeros((v, d)),
            corruption_bias: Array1::zeros(d),
            lambda,
            hidden_weight: Array3::zeros((l, d, h)),
            hidden_bias: Array2::zeros((l, h)),
            time_weight: Array2::zeros((l, h)),
            mixing: Array2::zeros((l, l)),
            output_weight: Array3::zeros((l, h, v)),
            output_bias: Array2::zeros((l, v)),
        }
    }

    /// Gaussian initialisation; biases and the mixing map start at zero.
    pub fn init(shape: NetworkShape, lambda: f64, rng: &mut Rng) -> Result<Self> {
        let mut p = Self::zeros(shape, lambda);
        fn fill<'a>(it: impl Iterator<Item = &'a mut f64>, scale: f64, rng: &mut Rng) {
            for x in it {
                *x = scale * rng.sample::<f64, _>(StandardNormal);
            }
        }
        fill(p.embedding.iter_mut(), 1.0, rng);
        fill(p.corruption_bias.iter_mut(), 1.0, rng);
        fill(p.hidden_weight.iter_mut(), 1.0 / (shape.d as f64).sqrt(), rng);
        fill(p.output_weight.iter_mut(), 1.0 / (shape.h as f64).sqrt(), rng);
        p.validate()?;
        Ok(p)
    }

    pub fn shape(&self) -> NetworkShape {
        let (v, d) = self.embedding.dim();
        let (l, _, h) = self.hidden_weight.dim();
        NetworkShape { v, d, h, l }
    }

    pub fn vocab(&self) -> usize {
        self.embedding.nrows()
    }

    pub fn seq_len(&self) -> usize {
        self.mixing.nrows()
    }

    pub fn validate(&self) -> Result<()> {
        let NetworkShape { v, d, h, l } = self.shape();
        let ok = self.corruption_bias.len() == d
            && self.hidden_weight.dim() == (l, d, h)
            && self.hidden_bias.dim() == (l, h)
            && self.time_weight.dim() == (l, h)
            && self.mixing.dim() == (l, l)
            && self.output_weight.dim() == (l, h, v)
            && self.output_bias.dim() == (l, v);
        if !ok || v < 2 || d == 0 || h == 0 || l == 0 {
            return Err(CandiError::Shape(format!("inconsistent denoiser parameter shapes for {:?}", self.shape())));
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(CandiError::Config(format!("lambda must lie in [0, 1], got {}", self.lambda)));
        }
        if self.flat().iter().any(|x| !x.is_finite()) {
            return Err(CandiError::Numeric("denoiser parameters are not finite".into()));
        }
        Ok(())
    }

    /// All trainable entries in a fixed order.
    pub fn flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        out.extend(self.embedding.iter());
        out.extend(self.corruption_bias.iter());
        out.extend(self.hidden_weight.iter());
        out.extend(self.hidden_bias.iter());
        out.extend(self.time_weight.iter());
        out.extend(self.mixing.iter());
        out.extend(self.output_weight.iter());
        out.extend(self.output_bias.iter());
        out
    }

    fn entries_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.embedding
            .iter_mut()
            .chain(self.corruption_bias.iter_mut())
            .chain(self.hidden_weight.iter_mut())
            .chain(self.hidden_bias.iter_mut())
            .chain(self.time_weight.iter_mut())
            .chain(self.mixing.iter_mut())
            .chain(self.output_weight.iter_mut())
            .chain(self.output_bias.iter_mut())
    }

    pub fn set_flat(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.num_params() {
            return Err(CandiError::Shape(format!("{} values for {} parameters", values.len(), self.num_params())));
        }
        for (x, &v) in self.entries_mut().zip(values) {
            *x = v;
        }
        Ok(())
    }

    pub fn num_params(&self) -> usize {
        self.embedding.len()
            + self.corruption_bias.len()
            + self.hidden_weight.len()
            + self.hidden_bias.len()
            + self.time_weight.len()
            + self.mixing.len()
            + self.output_weight.len()
            + self.output_bias.len()
    }

    /// `self += scale · other`, entrywise.
    pub fn add_scaled(&mut self, scale: f64, other: &DenoiserParams) {
        for (x, y) in self.entries_mut().zip(other.flat()) {
            *x += scale * y;
        }
    }

    pub fn to_json_string(&self) -> String {
        let ck = Checkpoint {
            version: 1,
            shape: self.shape(),
            lambda: self.lambda,
            tensors: Tensors {
                embedding: nest2(&self.embedding),
                corruption_bias: self.corruption_bias.to_vec(),
                hidden_weight: self.hidden_weight.outer_iter().map(|m| nest2(&m.to_owned())).collect(),
                hidden_bias: nest2(&self.hidden_bias),
                time_weight: nest2(&self.time_weight),
                mixing: nest2(&self.mixing),
                output_weight: self.output_weight.outer_iter().map(|m| nest2(&m.to_owned())).collect(),
                output_bias: nest2(&self.output_bias),
            },
        };
        serde_json::to_string(&ck).expect("checkpoint serialises")
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let ck: Checkpoint = serde_json::from_str(text).map_err(|e| CandiError::Parse(format!("checkpoint: {e}")))?;
        if ck.version != 1 {
            return Err(CandiError::Parse(format!("unsupported checkpoint version {}", ck.version)));
        }
        let NetworkShape { v, d, h, l } = ck.shape;
        let t = ck.tensors;
        let p = Self {
            embedding: unnest2(t.embedding, (v, d), "embedding")?,
            corruption_bias: {
                if t.corruption_bias.len() != d {
                    return Err(CandiError::Shape("corruption_bias has the wrong length".into()));
                }
                Array1::from(t.corruption_bias)
            },
            lambda: ck.lambda,
            hidden_weight: unnest3(t.hidden_weight, (l, d, h), "hidden_weight")?,
            hidden_bias: unnest2(t.hidden_bias, (l, h), "hidden_bias")?,
            time_weight: unnest2(t.time_weight, (l, h), "time_weight")?,
            mixing: unnest2(t.mixing, (l, l), "mixing")?,
            output_weight: unnest3(t.output_weight, (l, h, v), "output_weight")?,
            output_bias: unnest2(t.output_bias, (l, v), "output_bias")?,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json_str(&std::fs::read_to_string(path)?)
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Checkpoint {
    version: u32,
    shape: NetworkShape,
    lambda: f64,
    tensors: Tensors,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Tensors {
    embedding: Vec<Vec<f64>>,
    corruption_bias: Vec<f64>,
    hidden_weight: Vec<Vec<Vec<f64>>>,
    hidden_bias: Vec<Vec<f64>>,
    time_weight: Vec<Vec<f64>>,
    mixing: Vec<Vec<f64>>,
    output_weight: Vec<Vec<Vec<f64>>>,
    output_bias: Vec<Vec<f64>>,
}

fn nest2(a: &Array2<f64>) -> Vec<Vec<f64>> {
    a.outer_iter().map(|r| r.to_vec()).collect()
}

fn unnest2(rows: Vec<Vec<f64>>, dim: (usize, usize), name: &str) -> Result<Array2<f64>> {
    if rows.len() != dim.0 || rows.iter().any(|r| r.len() != dim.1) {
        return Err(CandiError::Shape(format!("{name} does not have shape {dim:?}")));
    }
    Array2::from_shape_vec(dim, rows.concat()).map_err(|e| CandiError::Shape(format!("{name}: {e}")))
}

fn unnest3(blocks: Vec<Vec<Vec<f64>>>, dim: (usize, usize, usize), name: &str) -> Result<Array3<f64>> {
    if blocks.len() != dim.0 {
        return Err(CandiError::Shape(format!("{name} does not have shape {dim:?}")));
    }
    let mut flat = Vec::with_capacity(dim.0 * dim.1 * dim.2);
    for b in blocks {
        flat.extend(unnest2(b, (dim.1, dim.2), name)?.iter());
    }
    Array3::from_shape_vec(dim, flat).map_err(|e| CandiError::Shape(format!("{name}: {e}")))
}

struct Activations {
    e: Array2<f64>,
    h: Array2<f64>,
    z: Array2<f64>,
    probs: Array2<f64>,
    kappa: f64,
    s: f64,
}

/// Network input rows `E` for embedded rows `Y`.
pub fn network_inputs(params: &DenoiserParams, y: &Array2<f64>, mask: &MaskVector, sigma: f64) -> Array2<f64> {
    let kappa = 1.0 / (sigma * sigma + 1.0).sqrt();
    let mut e = y.clone();
    for (i, mut row) in e.rows_mut().into_iter().enumerate() {
        if !mask.is_clean(i) {
            row.zip_mut_with(&params.corruption_bias, |x, &b| *x = kappa * ((1.0 - params.lambda) * *x + params.lambda * b));
        }
    }
    e
}

fn softmax_row(mut row: ndarray::ArrayViewMut1<f64>) {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    row.mapv_inplace(|x| (x - max).exp());
    let total = row.sum();
    row /= total;
}

fn check_input(params: &DenoiserParams, y: &Array2<f64>, mask: &MaskVector) -> Result<()> {
    let NetworkShape { d, l, .. } = params.shape();
    if y.dim() != (l, d) || mask.len() != l {
        return Err(CandiError::Shape(format!(
            "network expects {l} rows of width {d}, got {:?} with a mask of length {}",
            y.dim(),
            mask.len()
        )));
    }
    Ok(())
}

fn activations(params: &DenoiserParams, y: &Array2<f64>, mask: &MaskVector, sigma: f64) -> Result<Activations> {
    check_input(params, y, mask)?;
    let NetworkShape { v, h, l, .. } = params.shape();
    let kappa = 1.0 / (sigma * sigma + 1.0).sqrt();
    let s = sigma.ln();
    let e = network_inputs(params, y, mask, sigma);
    let mut hid = Array2::zeros((l, h));
    for i in 0..l {
        let pre = e.row(i).dot(&params.hidden_weight.index_axis(Axis(0), i))
            + &params.hidden_bias.row(i)
            + &(&params.time_weight.row(i) * s);
        hid.row_mut(i).assign(&pre.mapv(f64::tanh));
    }
    let z = &hid + &params.mixing.dot(&hid);
    let mut probs = Array2::zeros((l, v));
    for i in 0..l {
        let logits = z.row(i).dot(&params.output_weight.index_axis(Axis(0), i)) + &params.output_bias.row(i);
        probs.row_mut(i).assign(&logits);
        softmax_row(probs.row_mut(i));
    }
    Ok(Activations { e, h: hid, z, probs, kappa, s })
}

/// Posterior for already-embedded rows.
pub fn forward_embedded(params: &DenoiserParams, y: &Array2<f64>, mask: &MaskVector, sigma: f64) -> Result<PosteriorGrid> {
    let act = activations(params, y, mask, sigma)?;
    if act.probs.iter().any(|p| !p.is_finite()) {
        return Err(CandiError::Numeric("network produced a non-finite posterior".into()));
    }
    Ok(PosteriorGrid::new_unchecked(act.probs))
}

pub fn denoiser_forward(params: &DenoiserParams, state: &HybridState, cfg: &KernelConfig) -> Result<PosteriorGrid> {
    if state.vocab() != params.vocab() {
        return Err(CandiError::Shape(format!("lattice width {} for vocabulary {}", state.vocab(), params.vocab())));
    }
    let sigma = sigma_of_t(state.t, cfg)?.get();
    forward_embedded(params, &state.lattice.dot(&params.embedding), &state.mask, sigma)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingExample {
    pub x0: TokenSequence,
    pub state: HybridState,
}

/// Weight `1/(1 − α(t)) = 1/t` of one example.
fn example_weight(state: &HybridState) -> Result<f64> {
    let noisy = state.mask.len() - state.mask.count_clean();
    if noisy == 0 {
        return Ok(0.0);
    }
    if !(state.t > 0.0) {
        return Err(CandiError::Numeric("noisy positions at t = 0 have infinite loss weight".into()));
    }
    Ok(1.0 / state.t)
}

/// Weighted cross entropy of one posterior against its clean sequence.
pub fn weighted_cross_entropy(posterior: &PosteriorGrid, example: &TrainingExample) -> Result<f64> {
    let w = example_weight(&example.state)?;
    if w == 0.0 {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for (i, &tok) in example.x0.tokens().iter().enumerate() {
        if !example.state.mask.is_clean(i) {
            total -= posterior.probs()[[i, tok]].max(LOG_FLOOR).ln();
        }
    }
    Ok(w * total)
}

fn check_batch(batch: &[TrainingExample]) -> Result<()> {
    if batch.is_empty() {
        return Err(CandiError::Config("empty training batch".into()));
    }
    Ok(())
}

/// Mean weighted cross entropy of any denoiser over a batch.
pub fn denoiser_loss<D: Denoiser + ?Sized>(denoiser: &D, batch: &[TrainingExample], cfg: &KernelConfig) -> Result<f64> {
    check_batch(batch)?;
    let mut total = 0.0;
    for ex in batch {
        total += weighted_cross_entropy(&denoiser.posterior(&ex.state, cfg)?, ex)?;
    }
    Ok(total / batch.len() as f64)
}

pub fn loss(params: &DenoiserParams, batch: &[TrainingExample], cfg: &KernelConfig) -> Result<f64> {
    check_batch(batch)?;
    let mut total = 0.0;
    for ex in batch {
        total += weighted_cross_entropy(&denoiser_forward(params, &ex.state, cfg)?, ex)?;
    }
    let mean = total / batch.len() as f64;
    if !mean.is_finite() {
        return Err(CandiError::Numeric(format!("loss is {mean}")));
    }
    Ok(mean)
}

fn add_outer(mut target: ArrayViewMut2<f64>, a: ArrayView1<f64>, b: ArrayView1<f64>) {
    for (mut row, &ai) in target.rows_mut().into_iter().zip(a.iter()) {
        if ai != 0.0 {
            row.scaled_add(ai, &b);
        }
    }
}

/// Loss and its exact gradient.
pub fn loss_and_gradient(params: &DenoiserParams, batch: &[TrainingExample], cfg: &KernelConfig) -> Result<(f64, DenoiserParams)> {
    check_batch(batch)?;
    let shape = params.shape();
    let NetworkShape { v, l, .. } = shape;
    let n = batch.len() as f64;
    let mut grad = DenoiserParams::zeros(shape, params.lambda);
    let mut total = 0.0;
    for ex in batch {
        let st = &ex.state;
        if st.vocab() != v {
            return Err(CandiError::Shape(format!("lattice width {} for vocabulary {v}", st.vocab())));
        }
        let weight = example_weight(st)?;
        if weight == 0.0 {
            continue;
        }
        let sigma = sigma_of_t(st.t, cfg)?.get();
        let act = activations(params, &st.lattice.dot(&params.embedding), &st.mask, sigma)?;

        let mut dlogits = Array2::<f64>::zeros((l, v));
        for (i, &tok) in ex.x0.tokens().iter().enumerate() {
            if st.mask.is_clean(i) {
                continue;
            }
            let p = act.probs[[i, tok]];
            total -= weight * p.max(LOG_FLOOR).ln();
            if p >= LOG_FLOOR {
                let mut row = dlogits.row_mut(i);
                row.assign(&act.probs.row(i));
                row[tok] -= 1.0;
                row *= weight / n;
            }
        }

        let mut dz = Array2::<f64>::zeros(act.z.dim());
        for i in 0..l {
            let u = params.output_weight.index_axis(Axis(0), i);
            add_outer(grad.output_weight.index_axis_mut(Axis(0), i), act.z.row(i), dlogits.row(i));
            grad.output_bias.row_mut(i).scaled_add(1.0, &dlogits.row(i));
            dz.row_mut(i).assign(&u.dot(&dlogits.row(i)));
        }
        // Z = H + P·H
        grad.mixing += &dz.dot(&act.h.t());
        let dh = &dz + &params.mixing.t().dot(&dz);
        let dpre = &dh * &act.h.mapv(|x| 1.0 - x * x);

        let mut dy = Array2::<f64>::zeros(act.e.dim());
        for i in 0..l {
            add_outer(grad.hidden_weight.index_axis_mut(Axis(0), i), act.e.row(i), dpre.row(i));
            grad.hidden_bias.row_mut(i).scaled_add(1.0, &dpre.row(i));
            grad.time_weight.row_mut(i).scaled_add(act.s, &dpre.row(i));
            let de = params.hidden_weight.index_axis(Axis(0), i).dot(&dpre.row(i));
            if st.mask.is_clean(i) {
                dy.row_mut(i).assign(&de);
            } else {
                dy.row_mut(i).assign(&(&de * ((1.0 - params.lambda) * act.kappa)));
                grad.corruption_bias.scaled_add(params.lambda * act.kappa, &de);
            }
        }
        grad.embedding += &st.lattice.t().dot(&dy);
    }
    let mean = total / n;
    if !mean.is_finite() {
        return Err(CandiError::Numeric(format!("loss is {mean}")));
    }
    Ok((mean, grad))
}

pub fn loss_gradient(params: &DenoiserParams, batch: &[TrainingExample], cfg: &KernelConfig) -> Result<DenoiserParams> {
    loss_and_gradient(params, batch, cfg).map(|(_, g)| g)
}

/// Draws `x0 ~ dist`, `t ~ U(ε, 1)` and a forward-corrupted state.
pub fn sample_batch(dist: &ToyDistribution, n: usize, cfg: &KernelConfig, rng: &mut Rng) -> Result<Vec<TrainingExample>> {
    (0..n)
        .map(|_| {
            let x0 = dist.sample(rng);
            let t = T_EPSILON + (1.0 - T_EPSILON) * rng.random::<f64>();
            let state = forward_corrupt_with(&x0, t, cfg, rng)?;
            Ok(TrainingExample { x0, state })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub steps: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub lambda: f64,
    pub dim: usize,
    pub hidden: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { learning_rate: 0.05, steps: 4000, batch_size: 32, seed: 0, lambda: 0.5, dim: 16, hidden: 32 }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(CandiError::Config(format!("learning_rate must be positive, got {}", self.learning_rate)));
        }
        if self.steps == 0 || self.batch_size == 0 || self.dim == 0 || self.hidden == 0 {
            return Err(CandiError::Config("steps, batch_size, dim and hidden must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(CandiError::Config(format!("lambda must lie in [0, 1], got {}", self.lambda)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub params: DenoiserParams,
    /// Mini-batch loss before each step.
    pub losses: Vec<f64>,
}

/// Plain gradient descent on freshly drawn batches.
pub fn train_with_history(dist: &ToyDistribution, tc: &TrainConfig, cfg: &KernelConfig) -> Result<TrainOutcome> {
    tc.validate()?;
    if dist.vocab() != cfg.vocab || dist.len() != cfg.seq_len {
        return Err(CandiError::Shape("distribution and kernel config disagree on dimensions".into()));
    }
    let mut rng = seeded(tc.seed);
    let shape = NetworkShape { v: cfg.vocab, d: tc.dim, h: tc.hidden, l: cfg.seq_len };
    let mut params = DenoiserParams::init(shape, tc.lambda, &mut rng)?;
    let mut losses = Vec::with_capacity(tc.steps);
    for step in 0..tc.steps {
        let batch = sample_batch(dist, tc.batch_size, cfg, &mut rng)?;
        let (l, grad) = loss_and_gradient(&params, &batch, cfg).map_err(|_| CandiError::Divergence { step, loss: f64::NAN })?;
        if !l.is_finite() {
            return Err(CandiError::Divergence { step, loss: l });
        }
        losses.push(l);
        params.add_scaled(-tc.learning_rate, &grad);
        if params.flat().iter().any(|x| !x.is_finite()) {
            return Err(CandiError::Divergence { step, loss: l });
        }
    }
    Ok(TrainOutcome { params, losses })
}

pub fn train(dist: &ToyDistribution, tc: &TrainConfig, cfg: &KernelConfig) -> Result<DenoiserParams> {
    train_with_history(dist, tc, cfg).map(|o| o.params)
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkDenoiser {
    pub params: DenoiserParams,
}

impl NetworkDenoiser {
    pub fn new(params: DenoiserParams) -> Result<Self> {
        params.validate()?;
        Ok(Self { params })
    }
}

impl Denoiser for NetworkDenoiser {
    fn vocab(&self) -> usize {
        self.params.vocab()
    }

    fn seq_len(&self) -> usize {
        self.params.seq_len()
    }

    fn posterior(&self, state: &HybridState, cfg: &KernelConfig) -> Result<PosteriorGrid> {
        denoiser_forward(&self.params, state, cfg)
    }

    fn embedding_table(&self) -> Array2<f64> {
        self.params.embedding.clone()
    }

    fn posterior_from_embeddings(&self, y: &Array2<f64>, mask: &MaskVector, t: f64, cfg: &KernelConfig) -> Result<PosteriorGrid> {
        forward_embedded(&self.params, y, mask, sigma_of_t(t, cfg)?.get())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::forward_corrupt;
    use crate::rng::seeded;
    use crate::toy::fixtures;

    fn shape() -> NetworkShape {
        NetworkShape { v: 5, d: 4, h: 6, l: 3 }
    }

    fn random_params(seed: u64, lambda: f64) -> DenoiserParams {
        let mut rng = seeded(seed);
        let mut p = DenoiserParams::init(shape(), lambda, &mut rng).unwrap();
        // exercise the zero-initialised tensors too
        let noise: Vec<f64> = p.flat().iter().map(|&x| x + 0.3 * rng.sample::<f64, _>(StandardNormal)).collect();
        p.set_flat(&noise).unwrap();
        p
    }

    fn batch(seed: u64, n: usize) -> (Vec<TrainingExample>, KernelConfig) {
        let cfg = KernelConfig::new(5, 3).unwrap();
        let dist = ToyDistribution::from_weights(5, 3, vec![(vec![0, 1, 2], 1.0), (vec![3, 4, 0], 2.0), (vec![2, 2, 1], 1.5)]).unwrap();
        (sample_batch(&dist, n, &cfg, &mut seeded(seed)).unwrap(), cfg)
    }

    #[test]
    fn rows_sum_to_one() {
        let (b, cfg) = batch(1, 10);
        for (k, ex) in b.iter().enumerate() {
            let post = denoiser_forward(&random_params(k as u64, 0.5), &ex.state, &cfg).unwrap();
            PosteriorGrid::new(post.into_inner()).unwrap();
        }
    }

    #[test]
    fn lambda_one_erases_noisy_contents() {
        let mut p = random_params(3, 1.0);
        let cfg = KernelConfig::new(5, 3).unwrap();
        let mask = MaskVector(vec![false, true, false]);
        let lat = ndarray::array![[0.3, -1.0, 2.0, 0.1, 0.0], [0.0, 0.0, 1.0, 0.0, 0.0], [5.0, 1.0, -2.0, 0.7, 0.2]];
        let sigma = sigma_of_t(0.4, &cfg).unwrap().get();
        let e = network_inputs(&p, &lat.dot(&p.embedding), &mask, sigma);
        assert_eq!(e.row(0), e.row(2));
        // Without mixing and with tied per-position weights, noisy rows agree.
        p.mixing.fill(0.0);
        for i in 1..3 {
            let (hw, hb, tw) = (p.hidden_weight.index_axis(Axis(0), 0).to_owned(), p.hidden_bias.row(0).to_owned(), p.time_weight.row(0).to_owned());
            let (ow, ob) = (p.output_weight.index_axis(Axis(0), 0).to_owned(), p.output_bias.row(0).to_owned());
            p.hidden_weight.index_axis_mut(Axis(0), i).assign(&hw);
            p.hidden_bias.row_mut(i).assign(&hb);
            p.time_weight.row_mut(i).assign(&tw);
            p.output_weight.index_axis_mut(Axis(0), i).assign(&ow);
            p.output_bias.row_mut(i).assign(&ob);
        }
        let post = denoiser_forward(&p, &HybridState { lattice: lat, mask, t: 0.4 }, &cfg).unwrap();
        assert_eq!(post.probs().row(0), post.probs().row(2));
        assert_ne!(post.probs().row(0), post.probs().row(1));
    }

    #[test]
    fn uniform_posterior_loss_closed_form() {
        let p = DenoiserParams::zeros(shape(), 0.5);
        let cfg = KernelConfig::new(5, 3).unwrap();
        let x0 = TokenSequence(vec![1, 2, 3]);
        let mut state = forward_corrupt(&x0, 0.5, &cfg, 0).unwrap();
        state.mask = MaskVector(vec![true, false, true]);
        state.lattice.row_mut(0).assign(&x0.one_hot(5).row(0));
        state.lattice.row_mut(2).assign(&x0.one_hot(5).row(2));
        let l = loss(&p, &[TrainingExample { x0, state }], &cfg).unwrap();
        assert!((l - 2.0 * 5f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn loss_matches_scalar_recomputation() {
        let (b, cfg) = batch(5, 6);
        let p = random_params(9, 0.5);
        let mut want = 0.0;
        for ex in &b {
            let post = denoiser_forward(&p, &ex.state, &cfg).unwrap();
            let mut s = 0.0;
            for i in 0..3 {
                if !ex.state.mask.is_clean(i) {
                    s += -post.probs()[[i, ex.x0.0[i]]].ln() / ex.state.t;
                }
            }
            want += s;
        }
        want /= b.len() as f64;
        assert!((loss(&p, &b, &cfg).unwrap() - want).abs() < 1e-12);
    }

    #[test]
    fn loss_is_order_invariant() {
        let (mut b, cfg) = batch(2, 8);
        let p = random_params(1, 0.5);
        let a = loss(&p, &b, &cfg).unwrap();
        b.reverse();
        assert!((loss(&p, &b, &cfg).unwrap() - a).abs() < 1e-12);
    }

    #[test]
    fn gradient_matches_central_differences() {
        let (b, cfg) = batch(11, 5);
        let p = random_params(4, 0.5);
        let grad = loss_gradient(&p, &b, &cfg).unwrap().flat();
        let base = p.flat();
        let mut rng = seeded(99);
        let h = 1e-5;
        for _ in 0..20 {
            let k = rng.random_range(0..base.len());
            let mut plus = p.clone();
            let mut minus = p.clone();
            let mut v = base.clone();
            v[k] += h;
            plus.set_flat(&v).unwrap();
            v[k] -= 2.0 * h;
            minus.set_flat(&v).unwrap();
            let fd = (loss(&plus, &b, &cfg).unwrap() - loss(&minus, &b, &cfg).unwrap()) / (2.0 * h);
            let err = (fd - grad[k]).abs() / fd.abs().max(grad[k].abs()).max(1e-6);
            assert!(err < 1e-4, "coordinate {k}: fd {fd} vs analytic {}", grad[k]);
        }
    }

    #[test]
    fn dead_embedding_rows_get_no_gradient_at_lambda_one() {
        let cfg = KernelConfig::new(5, 3).unwrap();
        let x0 = TokenSequence(vec![1, 2, 3]);
        let mut state = forward_corrupt(&x0, 0.6, &cfg, 3).unwrap();
        state.mask = MaskVector(vec![true, false, false]);
        state.lattice.row_mut(0).assign(&x0.one_hot(5).row(0));
        let g = loss_gradient(&random_params(2, 1.0), &[TrainingExample { x0, state }], &cfg).unwrap();
        for k in [0, 2, 3, 4] {
            assert!(g.embedding.row(k).iter().all(|&x| x == 0.0));
        }
        assert!(g.embedding.row(1).iter().any(|&x| x != 0.0));
    }

    #[test]
    fn zero_loss_batch_has_zero_gradient() {
        let cfg = KernelConfig::new(5, 3).unwrap();
        let x0 = TokenSequence(vec![1, 2, 3]);
        let ex = TrainingExample { state: HybridState::clean(&x0, 5), x0 };
        let g = loss_gradient(&random_params(2, 0.5), &[ex], &cfg).unwrap();
        assert!(g.flat().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn checkpoint_roundtrip_is_exact() {
        let p = random_params(8, 0.25);
        let back = DenoiserParams::from_json_str(&p.to_json_string()).unwrap();
        assert_eq!(back, p);
        let text = p.to_json_string().replace("\"version\":1", "\"version\":2");
        assert!(DenoiserParams::from_json_str(&text).is_err());
    }

    #[test]
    fn training_is_deterministic_and_learns_a_point_mass() {
        let dist = fixtures::single(4, vec![2, 0, 3]);
        let cfg = KernelConfig::new(4, 3).unwrap();
        let tc = TrainConfig { steps: 300, batch_size: 16, seed: 5, learning_rate: 0.1, ..TrainConfig::default() };
        let a = train_with_history(&dist, &tc, &cfg).unwrap();
        let b = train_with_history(&dist, &tc, &cfg).unwrap();
        assert_eq!(a, b);
        assert!(a.losses.last().unwrap() < &a.losses[0]);
        let den = NetworkDenoiser::new(a.params).unwrap();
        for seed in 0..20 {
            let s = forward_corrupt(&TokenSequence(vec![2, 0, 3]), 0.05 * seed as f64, &cfg, seed).unwrap();
            let post = den.posterior(&s, &cfg).unwrap();
            let arg: Vec<usize> = post.probs().rows().into_iter().map(crate::kernel::argmax).collect();
            assert_eq!(arg, vec![2, 0, 3]);
        }
    }

    #[test]
    fn divergence_is_reported() {
        let dist = fixtures::reference_five();
        let cfg = KernelConfig::new(3, 2).unwrap();
        let tc = TrainConfig { steps: 50, learning_rate: 1e200, ..TrainConfig::default() };
        assert!(matches!(train(&dist, &tc, &cfg), Err(CandiError::Divergence { .. })));
    }
}
