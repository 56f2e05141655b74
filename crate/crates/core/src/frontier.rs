//! Diversity–coherence frontiers.
//!
//! Diversity is the pooled unigram entropy of a sample set; coherence is the
//! mean negative log-likelihood under the known toy distribution (lower is
//! better). A frontier is one point per sampling temperature.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use crate::error::{CandiError, Result};
use crate::kernel::TokenSequence;
use crate::rng::derive_seed;
use crate::sampler::{Sampler, SamplerConfig};
use crate::toy::ToyDistribution;

/// Probability assigned to sequences outside the support.
pub const COHERENCE_FLOOR: f64 = 1e-12;

pub const CSV_HEADER: &str = "temperature,diversity,coherence,tv";

#[derive(Debug, Clone, PartialEq)]
pub struct SampleSet {
    samples: Vec<TokenSequence>,
    config: Option<SamplerConfig>,
}

impl SampleSet {
    pub fn new(samples: Vec<TokenSequence>, config: Option<SamplerConfig>) -> Result<Self> {
        let Some(first) = samples.first() else {
            return Err(CandiError::Config("sample set is empty".into()));
        };
        if samples.iter().any(|s| s.len() != first.len()) {
            return Err(CandiError::Shape("samples have different lengths".into()));
        }
        Ok(Self { samples, config })
    }

    pub fn samples(&self) -> &[TokenSequence] {
        &self.samples
    }

    pub fn config(&self) -> Option<&SamplerConfig> {
        self.config.as_ref()
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Empirical sequence frequencies.
    pub fn frequencies(&self) -> BTreeMap<&TokenSequence, f64> {
        let mut counts = BTreeMap::new();
        for s in &self.samples {
            *counts.entry(s).or_insert(0.0) += 1.0;
        }
        let n = self.samples.len() as f64;
        counts.values_mut().for_each(|c| *c /= n);
        counts
    }
}

/// Entropy in nats of the token counts pooled over all samples and
/// positions.
pub fn unigram_entropy(samples: &SampleSet) -> f64 {
    let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
    let mut total = 0usize;
    for s in samples.samples() {
        for &t in s.tokens() {
            *counts.entry(t).or_default() += 1;
            total += 1;
        }
    }
    let n = total as f64;
    counts
        .values()
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .sum::<f64>()
        .max(0.0)
}

/// Mean `−ln P(x)`; sequences outside the support count as probability
/// [`COHERENCE_FLOOR`].
pub fn oracle_coherence(samples: &SampleSet, dist: &ToyDistribution) -> f64 {
    let total: f64 = samples.samples().iter().map(|s| -dist.probability(s).max(COHERENCE_FLOOR).ln()).sum();
    total / samples.len() as f64
}

/// `½ Σ |freq(x) − P(x)|` over observed sequences and the support.
pub fn tv_distance(samples: &SampleSet, dist: &ToyDistribution) -> f64 {
    let freq = samples.frequencies();
    let mut tv = 0.0;
    for (seq, f) in &freq {
        tv += (f - dist.probability(seq)).abs();
    }
    for (seq, p) in dist.support() {
        if !freq.contains_key(seq) {
            tv += p;
        }
    }
    (0.5 * tv).min(1.0)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrontierPoint {
    pub temperature: f64,
    pub diversity: f64,
    pub coherence: f64,
    pub tv: f64,
}

impl FrontierPoint {
    pub fn measure(temperature: f64, samples: &SampleSet, dist: &ToyDistribution) -> Self {
        Self {
            temperature,
            diversity: unigram_entropy(samples),
            coherence: oracle_coherence(samples, dist),
            tv: tv_distance(samples, dist),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Frontier {
    points: Vec<FrontierPoint>,
}

impl Frontier {
    pub fn new(points: Vec<FrontierPoint>) -> Result<Self> {
        if points.is_empty() {
            return Err(CandiError::Config("frontier has no points".into()));
        }
        for p in &points {
            if ![p.temperature, p.diversity, p.coherence, p.tv].iter().all(|x| x.is_finite()) {
                return Err(CandiError::Numeric(format!("frontier point at temperature {} is not finite", p.temperature)));
            }
        }
        if points.windows(2).any(|w| w[1].temperature <= w[0].temperature) {
            return Err(CandiError::Config("frontier temperatures must be strictly increasing".into()));
        }
        Ok(Self { points })
    }

    pub fn points(&self) -> &[FrontierPoint] {
        &self.points
    }

    pub fn point_at(&self, temperature: f64) -> Option<&FrontierPoint> {
        self.points.iter().find(|p| p.temperature == temperature)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(CSV_HEADER);
        out.push('\n');
        for p in &self.points {
            out.push_str(&format!("{},{},{},{}\n", p.temperature, p.diversity, p.coherence, p.tv));
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        match lines.next() {
            Some((_, h)) if h.trim() == CSV_HEADER => {}
            Some((_, h)) => return Err(CandiError::Parse(format!("frontier CSV header is {h:?}, expected {CSV_HEADER:?}"))),
            None => return Err(CandiError::Parse("frontier CSV is empty".into())),
        }
        let mut points = Vec::new();
        for (n, line) in lines {
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            if fields.len() != 4 {
                return Err(CandiError::Parse(format!("line {}: expected 4 fields, found {}", n + 1, fields.len())));
            }
            let mut v = [0.0; 4];
            for (slot, f) in v.iter_mut().zip(&fields) {
                *slot = f.parse().map_err(|_| CandiError::Parse(format!("line {}: {f:?} is not a number", n + 1)))?;
            }
            points.push(FrontierPoint { temperature: v[0], diversity: v[1], coherence: v[2], tv: v[3] });
        }
        Self::new(points)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_csv(&std::fs::read_to_string(path)?)
    }
}

/// One frontier point per temperature, each from `num_samples` fresh
/// samples. Temperature `j` samples under seed `derive_seed(seed, j)`.
pub fn sweep(sampler: &Sampler<'_>, temperatures: &[f64], num_samples: usize, dist: &ToyDistribution, seed: u64) -> Result<Frontier> {
    if temperatures.is_empty() || temperatures.iter().any(|&t| !(t > 0.0 && t.is_finite())) {
        return Err(CandiError::Config("sweep temperatures must be positive and finite".into()));
    }
    if temperatures.windows(2).any(|w| w[1] <= w[0]) {
        return Err(CandiError::Config("sweep temperatures must be strictly increasing".into()));
    }
    if num_samples == 0 {
        return Err(CandiError::Config("num_samples must be positive".into()));
    }
    let mut points = Vec::with_capacity(temperatures.len());
    for (j, &tau) in temperatures.iter().enumerate() {
        let cfg = SamplerConfig { temperature: tau, seed: derive_seed(seed, j as u64), ..sampler.cfg };
        let s = Sampler { cfg, ..*sampler };
        let set = SampleSet::new(s.sample_many(num_samples)?, Some(cfg))?;
        points.push(FrontierPoint::measure(tau, &set, dist));
    }
    Frontier::new(points)
}

/// Verdict of a frontier comparison.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dominance {
    /// The first frontier is at least as coherent everywhere on the shared
    /// diversity range and strictly better somewhere.
    A,
    B,
    Incomparable,
}

impl fmt::Display for Dominance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::A => "a",
            Self::B => "b",
            Self::Incomparable => "incomparable",
        })
    }
}

const DOMINANCE_TOL: f64 = 1e-12;

/// Coherence-vs-diversity curve sorted by diversity.
fn curve(f: &Frontier) -> Result<Vec<(f64, f64)>> {
    if f.points.len() < 2 {
        return Err(CandiError::Degenerate("dominance needs at least two points per frontier".into()));
    }
    let mut pts: Vec<(f64, f64)> = f.points.iter().map(|p| (p.diversity, p.coherence)).collect();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    if pts.last().unwrap().0 - pts[0].0 <= 0.0 {
        return Err(CandiError::Degenerate("frontier has zero diversity range".into()));
    }
    Ok(pts)
}

/// Linear interpolation; at a repeated diversity the first point wins.
fn interpolate(pts: &[(f64, f64)], x: f64) -> f64 {
    let k = pts.partition_point(|p| p.0 < x);
    if k == 0 {
        return pts[0].1;
    }
    if k == pts.len() {
        return pts[k - 1].1;
    }
    let (x0, y0) = pts[k - 1];
    let (x1, y1) = pts[k];
    if x1 == x {
        return y1;
    }
    y0 + (y1 - y0) * (x - x0) / (x1 - x0)
}

pub fn dominates(a: &Frontier, b: &Frontier) -> Result<Dominance> {
    let (ca, cb) = (curve(a)?, curve(b)?);
    let lo = ca[0].0.max(cb[0].0);
    let hi = ca.last().unwrap().0.min(cb.last().unwrap().0);
    if !(hi > lo) {
        return Ok(Dominance::Incomparable);
    }
    // Both curves are linear between consecutive breakpoints of the union,
    // so checking the breakpoints covers the whole overlap.
    let mut xs: Vec<f64> = ca.iter().chain(&cb).map(|p| p.0).filter(|&x| x > lo && x < hi).collect();
    xs.extend([lo, hi]);
    xs.sort_by(f64::total_cmp);
    xs.dedup();
    let (mut a_better, mut b_better) = (false, false);
    for x in xs {
        let d = interpolate(&ca, x) - interpolate(&cb, x);
        a_better |= d < -DOMINANCE_TOL;
        b_better |= d > DOMINANCE_TOL;
    }
    Ok(match (a_better, b_better) {
        (true, false) => Dominance::A,
        (false, true) => Dominance::B,
        _ => Dominance::Incomparable,
    })
}

/// Compares coherence at one shared temperature, the way a single-point
/// benchmark would. `Less` means `a` looks better.
pub fn compare_at_temperature(a: &Frontier, b: &Frontier, temperature: f64) -> Option<Ordering> {
    let (pa, pb) = (a.point_at(temperature)?, b.point_at(temperature)?);
    pa.coherence.partial_cmp(&pb.coherence)
}

/// Constructed frontier pairs with known verdicts.
pub mod fixtures {
    use super::{Frontier, FrontierPoint};

    fn frontier(rows: &[(f64, f64, f64)]) -> Frontier {
        Frontier::new(rows.iter().map(|&(temperature, diversity, coherence)| FrontierPoint { temperature, diversity, coherence, tv: 0.0 }).collect())
            .expect("valid fixture")
    }

    /// `a` is one nat more coherent than `b` at every diversity.
    pub fn dominating_pair() -> (Frontier, Frontier) {
        let base = [(0.7, 1.0, 3.0), (0.8, 1.4, 3.5), (0.9, 1.8, 4.2), (1.0, 2.2, 5.0)];
        let better: Vec<_> = base.iter().map(|&(t, d, c)| (t, d, c - 1.0)).collect();
        (frontier(&better), frontier(&base))
    }

    /// Curves that cross once in the middle of the shared range.
    pub fn crossing_pair() -> (Frontier, Frontier) {
        (
            frontier(&[(0.7, 1.0, 2.0), (0.85, 1.6, 3.5), (1.0, 2.2, 5.0)]),
            frontier(&[(0.7, 1.0, 2.6), (0.85, 1.6, 3.4), (1.0, 2.2, 4.2)]),
        )
    }

    /// `a` is more coherent at temperature 0.7 and `b` at 1.0, but only
    /// because they sit at different diversities.
    pub fn temperature_trap() -> (Frontier, Frontier) {
        (
            frontier(&[(0.7, 1.0, 2.0), (1.0, 2.0, 4.0)]),
            frontier(&[(0.7, 1.4, 3.0), (1.0, 2.4, 3.6)]),
        )
    }
}
