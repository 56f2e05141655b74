//! The `candi-lab` command line.
//!
//! Every subcommand resolves its settings in the order flag, `--config`
//! document, built-in default, and derives all randomness from one root
//! seed. Primary output goes to `--out` (or stdout); a run manifest with
//! the resolved settings and SHA-256 checksums of the outputs goes to
//! `--manifest` (or stderr).

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::analytics::{identity_corruption, mc_corruption, rank_degradation, NoiseLevel, VocabSize};
use crate::denoise::{denoiser_loss, sample_batch, train_with_history, Denoiser, DenoiserParams, ExactBayesDenoiser, NetworkDenoiser, TrainConfig};
use crate::error::{CandiError, Result};
use crate::frontier::{dominates, sweep, tv_distance, Frontier, SampleSet};
use crate::kernel::{
    alpha, argmax, forward_corrupt_with, sigma_of_t, target_rank, KernelConfig, TokenSequence, DEFAULT_RANK_MAX, DEFAULT_RANK_MIN,
    T_EPSILON,
};
use crate::rng::{derive_seed, seeded, stream_rng};
use crate::sampler::{ClassifierFn, LinearClassifier, LogisticClassifier, OdeIntegrator, OdeOptions, Sampler, SamplerConfig, SamplerMode};
use crate::toy::{fixtures, ToyDistribution};

pub const THREADS_ENV: &str = "CANDI_LAB_THREADS";

pub const EXIT_OK: i32 = 0;
pub const EXIT_RUNTIME: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RankSettings {
    pub rank_min: f64,
    pub rank_max: f64,
}

impl Default for RankSettings {
    fn default() -> Self {
        Self { rank_min: DEFAULT_RANK_MIN, rank_max: DEFAULT_RANK_MAX }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSettings {
    pub learning_rate: f64,
    pub steps: usize,
    pub batch_size: usize,
    pub lambda: f64,
    pub dim: usize,
    pub hidden: usize,
}

impl Default for TrainSettings {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self { learning_rate: t.learning_rate, steps: t.steps, batch_size: t.batch_size, lambda: t.lambda, dim: t.dim, hidden: t.hidden }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplerSettings {
    pub mode: SamplerMode,
    pub nfe: usize,
    pub temperature: f64,
    pub guidance_weight: f64,
    pub num_samples: usize,
    pub temperatures: Vec<f64>,
    pub ode: OdeOptions,
}

impl Default for SamplerSettings {
    fn default() -> Self {
        Self {
            mode: SamplerMode::HybridExact,
            nfe: 64,
            temperature: 1.0,
            guidance_weight: 0.0,
            num_samples: 1000,
            temperatures: vec![0.7, 0.8, 0.9, 1.0],
            ode: OdeOptions::default(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PathSettings {
    /// File path, or `builtin:NAME[:ARGS]` for a fixture.
    pub distribution: Option<String>,
    pub checkpoint: Option<PathBuf>,
    pub classifier: Option<PathBuf>,
}

/// Settings shared by all subcommands, loadable from a JSON document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub version: u32,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub kernel: RankSettings,
    #[serde(default)]
    pub train: TrainSettings,
    #[serde(default)]
    pub sampler: SamplerSettings,
    #[serde(default)]
    pub paths: PathSettings,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            version: 1,
            seed: 0,
            kernel: RankSettings::default(),
            train: TrainSettings::default(),
            sampler: SamplerSettings::default(),
            paths: PathSettings::default(),
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.version != 1 {
            return Err(CandiError::Config(format!("version must be 1, got {}", self.version)));
        }
        KernelConfig::with_ranks(2, 1, self.kernel.rank_min, self.kernel.rank_max)?;
        self.train_config().validate()?;
        let s = &self.sampler;
        if s.nfe == 0 {
            return Err(CandiError::Config("sampler.nfe must be at least 1".into()));
        }
        if !(s.temperature > 0.0 && s.temperature.is_finite()) {
            return Err(CandiError::Config(format!("sampler.temperature must be positive, got {}", s.temperature)));
        }
        if !s.guidance_weight.is_finite() {
            return Err(CandiError::Config("sampler.guidance_weight must be finite".into()));
        }
        if s.num_samples == 0 {
            return Err(CandiError::Config("sampler.num_samples must be positive".into()));
        }
        if s.temperatures.is_empty() || s.temperatures.iter().any(|&t| !(t > 0.0 && t.is_finite())) || s.temperatures.windows(2).any(|w| w[1] <= w[0]) {
            return Err(CandiError::Config("sampler.temperatures must be positive and strictly increasing".into()));
        }
        Ok(())
    }

    pub fn train_config(&self) -> TrainConfig {
        let t = &self.train;
        TrainConfig {
            learning_rate: t.learning_rate,
            steps: t.steps,
            batch_size: t.batch_size,
            seed: self.seed,
            lambda: t.lambda,
            dim: t.dim,
            hidden: t.hidden,
        }
    }

    pub fn kernel_config(&self, dist: &ToyDistribution) -> Result<KernelConfig> {
        KernelConfig::with_ranks(dist.vocab(), dist.len(), self.kernel.rank_min, self.kernel.rank_max)
    }
}

/// Strict parse of a run configuration document.
pub fn load_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path)?;
    parse_config(&text)
}

pub fn parse_config(text: &str) -> Result<RunConfig> {
    let cfg: RunConfig = serde_json::from_str(text).map_err(|e| CandiError::Parse(format!("config: {e}")))?;
    cfg.validate()?;
    Ok(cfg)
}

/// Loads a distribution file, or a fixture named `builtin:NAME[:ARGS]`.
pub fn resolve_distribution(spec: &str) -> Result<ToyDistribution> {
    let Some(rest) = spec.strip_prefix("builtin:") else {
        return ToyDistribution::load(Path::new(spec));
    };
    let parts: Vec<&str> = rest.split(':').collect();
    let num = |k: usize| -> Result<usize> {
        parts
            .get(k)
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| CandiError::Config(format!("builtin distribution {spec:?} needs numeric argument {k}")))
    };
    match parts[0] {
        "reference_five" => Ok(fixtures::reference_five()),
        "reference_eight" => Ok(fixtures::reference_eight()),
        "two_class" => Ok(fixtures::two_class()),
        "corner_pairs" => {
            let v = num(1)?;
            if v < 4 {
                return Err(CandiError::Config("corner_pairs needs at least 4 tokens".into()));
            }
            Ok(fixtures::corner_pairs(v))
        }
        "repeated_token" => {
            let (v, l) = (num(1)?, num(2)?);
            if v < 2 || l == 0 {
                return Err(CandiError::Config("repeated_token needs vocab >= 2 and len >= 1".into()));
            }
            Ok(fixtures::repeated_token(v, l))
        }
        other => Err(CandiError::Config(format!("unknown builtin distribution {other:?}"))),
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "snake_case")]
enum ClassifierKind {
    Linear,
    Logistic,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ClassifierFile {
    kind: ClassifierKind,
    weights: Vec<Vec<f64>>,
    #[serde(default)]
    bias: f64,
}

/// Reads `{"kind": "linear"|"logistic", "weights": [[…]], "bias": b}`.
pub fn load_classifier(path: &Path) -> Result<Box<dyn ClassifierFn>> {
    let file: ClassifierFile =
        serde_json::from_str(&std::fs::read_to_string(path)?).map_err(|e| CandiError::Parse(format!("classifier: {e}")))?;
    let rows = file.weights.len();
    let cols = file.weights.first().map_or(0, Vec::len);
    if rows == 0 || file.weights.iter().any(|r| r.len() != cols) {
        return Err(CandiError::Shape("classifier weights must be a non-empty rectangular matrix".into()));
    }
    let weights = Array2::from_shape_vec((rows, cols), file.weights.concat()).map_err(|e| CandiError::Shape(e.to_string()))?;
    Ok(match file.kind {
        ClassifierKind::Linear => Box::new(LinearClassifier { weights }),
        ClassifierKind::Logistic => Box::new(LogisticClassifier { weights, bias: file.bias }),
    })
}

#[derive(Debug, Parser)]
#[command(name = "candi-lab", version, about = "Hybrid continuous/discrete diffusion experiments on small categorical toys")]
struct Cli {
    /// JSON run configuration (version 1).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Where to write the run manifest; defaults to stderr.
    #[arg(long, global = true)]
    manifest: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Monte Carlo check of the identity-corruption and rank formulas.
    ValidateFormulas(ValidateArgs),
    /// Forward-corruption statistics at a few times.
    CorruptDemo(CorruptArgs),
    /// Train the small network denoiser and write a checkpoint.
    Train(TrainArgs),
    /// Draw sequences with one of the reverse samplers (JSON lines).
    Sample(SampleArgs),
    /// Temperature sweep written as a frontier CSV.
    Frontier(FrontierArgs),
    /// Compare two frontier CSVs.
    Compare(CompareArgs),
    /// Target-class fraction as a function of guidance weight.
    GuideDemo(GuideArgs),
    /// Gaussian-ODE versus hybrid sampling at small and large vocabularies.
    DissonanceDemo(DissonanceArgs),
}

#[derive(Debug, Args)]
struct SeedOut {
    #[arg(long)]
    seed: Option<u64>,
    /// Output file; defaults to stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ValidateArgs {
    #[arg(long, value_delimiter = ',', default_value = "5,50,500")]
    vocab_list: Vec<usize>,
    #[arg(long, default_value_t = 8)]
    grid_points: usize,
    #[arg(long, default_value_t = 5000)]
    samples: usize,
    /// Smallest noise level; the default puts σ² at 0.1.
    #[arg(long, default_value_t = 0.1f64.sqrt())]
    sigma_min: f64,
    /// Largest noise level; the default puts σ² at 10.
    #[arg(long, default_value_t = 10f64.sqrt())]
    sigma_max: f64,
    #[command(flatten)]
    io: SeedOut,
}

#[derive(Debug, Args)]
struct CorruptArgs {
    #[arg(long, default_value_t = 8)]
    vocab: usize,
    #[arg(long, default_value_t = 16)]
    seq_len: usize,
    #[arg(long, value_delimiter = ',', default_value = "0.1,0.25,0.5,0.75,0.9")]
    times: Vec<f64>,
    #[arg(long, default_value_t = 2000)]
    num_draws: usize,
    #[command(flatten)]
    io: SeedOut,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long)]
    distribution: Option<String>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    hidden: Option<usize>,
    /// Held-out examples used for the reported losses.
    #[arg(long, default_value_t = 2000)]
    heldout: usize,
    #[command(flatten)]
    io: SeedOut,
}

#[derive(Debug, Args)]
struct SamplerArgs {
    #[arg(long)]
    mode: Option<SamplerMode>,
    #[arg(long)]
    nfe: Option<usize>,
    #[arg(long)]
    num_samples: Option<usize>,
    #[arg(long)]
    distribution: Option<String>,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    integrator: Option<OdeIntegrator>,
}

#[derive(Debug, Args)]
struct SampleArgs {
    #[command(flatten)]
    sampler: SamplerArgs,
    #[arg(long)]
    temperature: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    guidance_weight: Option<f64>,
    #[arg(long)]
    classifier: Option<PathBuf>,
    #[command(flatten)]
    io: SeedOut,
}

#[derive(Debug, Args)]
struct FrontierArgs {
    #[command(flatten)]
    sampler: SamplerArgs,
    /// Comma-separated, strictly increasing.
    #[arg(long, value_delimiter = ',')]
    temps: Option<Vec<f64>>,
    #[command(flatten)]
    io: SeedOut,
}

#[derive(Debug, Args)]
struct CompareArgs {
    a: PathBuf,
    b: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct GuideArgs {
    #[command(flatten)]
    sampler: SamplerArgs,
    #[arg(long, value_delimiter = ',', default_value = "0,1,2,4")]
    weights: Vec<f64>,
    /// Tokens that mark the target class at `--position`.
    #[arg(long, value_delimiter = ',', default_value = "0,1")]
    target_tokens: Vec<usize>,
    #[arg(long, default_value_t = 0)]
    position: usize,
    /// Magnitude of the logistic classifier's weights.
    #[arg(long, default_value_t = 0.01)]
    scale: f64,
    #[command(flatten)]
    io: SeedOut,
}

#[derive(Debug, Args)]
struct DissonanceArgs {
    #[arg(long, value_delimiter = ',', default_value = "4,512")]
    vocab_list: Vec<usize>,
    #[arg(long)]
    nfe: Option<usize>,
    #[arg(long)]
    num_samples: Option<usize>,
    #[arg(long)]
    integrator: Option<OdeIntegrator>,
    #[command(flatten)]
    io: SeedOut,
}

impl std::str::FromStr for OdeIntegrator {
    type Err = CandiError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "euler_variance" => Ok(Self::EulerVariance),
            "exponential" => Ok(Self::Exponential),
            _ => Err(CandiError::Config(format!("unknown integrator {s:?}; expected euler_variance or exponential"))),
        }
    }
}

#[derive(Debug, Serialize)]
struct Artifact {
    path: String,
    bytes: usize,
    sha256: String,
}

#[derive(Debug, Serialize)]
struct Manifest {
    tool: &'static str,
    version: &'static str,
    command: &'static str,
    seed: u64,
    config: Value,
    duration_seconds: f64,
    artifacts: Vec<Artifact>,
    #[serde(skip_serializing_if = "Option::is_none")]
    summary: Option<Value>,
}

/// What a subcommand produced.
struct Outcome {
    command: &'static str,
    seed: u64,
    config: Value,
    /// `(destination, bytes)`; `None` means stdout.
    outputs: Vec<(Option<PathBuf>, Vec<u8>)>,
    summary: Option<Value>,
}

enum Failure {
    Usage(String),
    Runtime(CandiError),
}

impl From<CandiError> for Failure {
    fn from(e: CandiError) -> Self {
        Failure::Runtime(e)
    }
}

type CliResult<T> = std::result::Result<T, Failure>;

/// Runs one invocation and returns its exit code.
pub fn run<I, T>(argv: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let target: &mut dyn Write = if e.use_stderr() { stderr } else { stdout };
            let _ = write!(target, "{}", e.render());
            return code;
        }
    };
    if let Err(msg) = configure_threads() {
        let _ = writeln!(stderr, "{msg}");
        return EXIT_USAGE;
    }
    let started = Instant::now();
    let result = load_base(&cli).and_then(|base| dispatch(&cli.command, base));
    match result.and_then(|outcome| finish(outcome, cli.manifest.as_deref(), started, stdout, stderr)) {
        Ok(()) => EXIT_OK,
        Err(Failure::Usage(msg)) => {
            let _ = writeln!(stderr, "error: {msg}");
            EXIT_USAGE
        }
        Err(Failure::Runtime(e)) => {
            let record = json!({ "error": e.kind(), "message": e.to_string() });
            let _ = writeln!(stderr, "{record}");
            EXIT_RUNTIME
        }
    }
}

fn configure_threads() -> std::result::Result<(), String> {
    let Ok(raw) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = raw.trim().parse().ok().filter(|&n| n > 0).ok_or_else(|| format!("error: {THREADS_ENV} must be a positive integer, got {raw:?}"))?;
    // A pool built earlier in the same process wins; that only matters in tests.
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

fn load_base(cli: &Cli) -> CliResult<RunConfig> {
    match &cli.config {
        Some(p) => Ok(load_config(p)?),
        None => Ok(RunConfig::default()),
    }
}

fn finish(outcome: Outcome, manifest_path: Option<&Path>, started: Instant, stdout: &mut dyn Write, stderr: &mut dyn Write) -> CliResult<()> {
    let mut artifacts = Vec::new();
    for (dest, bytes) in &outcome.outputs {
        match dest {
            Some(p) => std::fs::write(p, bytes).map_err(CandiError::from)?,
            None => stdout.write_all(bytes).map_err(CandiError::from)?,
        }
        artifacts.push(Artifact {
            path: dest.as_ref().map_or_else(|| "-".to_string(), |p| p.display().to_string()),
            bytes: bytes.len(),
            sha256: hex::encode(Sha256::digest(bytes)),
        });
    }
    let manifest = Manifest {
        tool: "candi-lab",
        version: env!("CARGO_PKG_VERSION"),
        command: outcome.command,
        seed: outcome.seed,
        config: outcome.config,
        duration_seconds: started.elapsed().as_secs_f64(),
        artifacts,
        summary: outcome.summary,
    };
    let text = serde_json::to_string(&manifest).expect("manifest serialises");
    match manifest_path {
        Some(p) => std::fs::write(p, format!("{text}\n")).map_err(CandiError::from)?,
        None => writeln!(stderr, "{text}").map_err(CandiError::from)?,
    }
    Ok(())
}

fn dispatch(cmd: &Command, base: RunConfig) -> CliResult<Outcome> {
    match cmd {
        Command::ValidateFormulas(a) => validate_formulas(a, base),
        Command::CorruptDemo(a) => corrupt_demo(a, base),
        Command::Train(a) => train_cmd(a, base),
        Command::Sample(a) => sample_cmd(a, base),
        Command::Frontier(a) => frontier_cmd(a, base),
        Command::Compare(a) => compare_cmd(a, base),
        Command::GuideDemo(a) => guide_demo(a, base),
        Command::DissonanceDemo(a) => dissonance_demo(a, base),
    }
}

fn to_value<T: Serialize>(x: &T) -> Value {
    serde_json::to_value(x).expect("settings serialise")
}

fn validate_formulas(a: &ValidateArgs, mut cfg: RunConfig) -> CliResult<Outcome> {
    cfg.seed = a.io.seed.unwrap_or(cfg.seed);
    if a.grid_points == 0 || a.vocab_list.is_empty() {
        return Err(Failure::Usage("--grid-points and --vocab-list must be non-empty".into()));
    }
    if !(a.sigma_min > 0.0 && a.sigma_max >= a.sigma_min && a.sigma_max.is_finite()) {
        return Err(Failure::Usage("need 0 < --sigma-min <= --sigma-max".into()));
    }
    let vocabs = a.vocab_list.iter().map(|&v| VocabSize::new(v)).collect::<Result<Vec<_>>>()?;
    let sigmas = log_grid(a.sigma_min, a.sigma_max, a.grid_points);
    let jobs: Vec<(usize, VocabSize, f64)> =
        vocabs.iter().flat_map(|&v| sigmas.iter().map(move |&s| (v, s))).enumerate().map(|(k, (v, s))| (k, v, s)).collect();
    let seed = cfg.seed;
    let rows = jobs
        .par_iter()
        .map(|&(k, v, s)| {
            let sigma = NoiseLevel::new(s)?;
            let rho = identity_corruption(sigma, v)?;
            let rank = rank_degradation(sigma);
            let (rho_mc, rank_mc) = mc_corruption(sigma, v, a.samples, derive_seed(seed, k as u64))?;
            let agree = rho_mc.z_score(rho) <= 3.0 && rank_mc.z_score(rank) <= 3.0;
            Ok((
                format!(
                    "{},{s},{rho},{},{},{rank},{},{}\n",
                    v.get(),
                    rho_mc.mean,
                    rho_mc.std_err,
                    rank_mc.mean,
                    rank_mc.std_err
                ),
                agree,
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    let agreeing = rows.iter().filter(|r| r.1).count();
    let mut csv = String::from("vocab,sigma,rho_analytic,rho_mc,rho_se,rank_analytic,rank_mc,rank_se\n");
    rows.iter().for_each(|r| csv.push_str(&r.0));
    Ok(Outcome {
        command: "validate-formulas",
        seed,
        config: json!({
            "vocab_list": a.vocab_list, "grid_points": a.grid_points, "samples": a.samples,
            "sigma_min": a.sigma_min, "sigma_max": a.sigma_max, "seed": seed,
        }),
        outputs: vec![(a.io.out.clone(), csv.into_bytes())],
        summary: Some(json!({ "points": rows.len(), "within_3se": agreeing, "fraction": agreeing as f64 / rows.len() as f64 })),
    })
}

/// `n` log-spaced points from `lo` to `hi` inclusive.
pub fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    let (a, b) = (lo.ln(), hi.ln());
    (0..n).map(|k| (a + (b - a) * k as f64 / (n - 1) as f64).exp()).collect()
}

fn corrupt_demo(a: &CorruptArgs, mut cfg: RunConfig) -> CliResult<Outcome> {
    cfg.seed = a.io.seed.unwrap_or(cfg.seed);
    let kc = KernelConfig::with_ranks(a.vocab, a.seq_len, cfg.kernel.rank_min, cfg.kernel.rank_max)?;
    if a.num_draws == 0 || a.times.is_empty() {
        return Err(Failure::Usage("--num-draws and --times must be non-empty".into()));
    }
    let x0 = TokenSequence((0..a.seq_len).map(|i| i % a.vocab).collect());
    let mut lines = String::new();
    for (j, &t) in a.times.iter().enumerate() {
        let sigma = sigma_of_t(t, &kc)?;
        let seed = derive_seed(cfg.seed, j as u64);
        // per draw: (clean rows, noisy rows, exceed fraction sum, argmax flips)
        let stats = (0..a.num_draws as u64)
            .into_par_iter()
            .map(|d| {
                let s = forward_corrupt_with(&x0, t, &kc, &mut stream_rng(seed, d))?;
                let mut acc = [0.0; 4];
                for (i, row) in s.lattice.rows().into_iter().enumerate() {
                    if s.mask.is_clean(i) {
                        acc[0] += 1.0;
                        continue;
                    }
                    let tok = x0.0[i];
                    acc[1] += 1.0;
                    acc[2] += row.iter().enumerate().filter(|&(k, &x)| k != tok && x > row[tok]).count() as f64 / (a.vocab - 1) as f64;
                    acc[3] += f64::from(argmax(row) != tok);
                }
                Ok(acc)
            })
            .collect::<Result<Vec<_>>>()?
            .into_iter()
            .fold([0.0; 4], |mut tot, x| {
                tot.iter_mut().zip(x).for_each(|(a, b)| *a += b);
                tot
            });
        let total = (a.num_draws * a.seq_len) as f64;
        let noisy = stats[1].max(1.0);
        let record = json!({
            "t": t,
            "alpha": alpha(t)?,
            "sigma": sigma.get(),
            "empirical_keep_fraction": stats[0] / total,
            "empirical_rank": stats[2] / noisy,
            "target_rank": target_rank(t, &kc)?,
            "empirical_identity_corruption": stats[3] / noisy,
            "identity_corruption": identity_corruption(sigma, VocabSize::new(a.vocab)?)?,
        });
        lines.push_str(&record.to_string());
        lines.push('\n');
    }
    Ok(Outcome {
        command: "corrupt-demo",
        seed: cfg.seed,
        config: json!({ "vocab": a.vocab, "seq_len": a.seq_len, "times": a.times, "num_draws": a.num_draws, "kernel": to_value(&cfg.kernel), "seed": cfg.seed }),
        outputs: vec![(a.io.out.clone(), lines.into_bytes())],
        summary: None,
    })
}

fn require_distribution(flag: &Option<String>, cfg: &mut RunConfig) -> CliResult<ToyDistribution> {
    if let Some(d) = flag {
        cfg.paths.distribution = Some(d.clone());
    }
    match &cfg.paths.distribution {
        Some(spec) => Ok(resolve_distribution(spec)?),
        None => Err(Failure::Usage("a distribution is required (--distribution PATH or builtin:NAME)".into())),
    }
}

fn train_cmd(a: &TrainArgs, mut cfg: RunConfig) -> CliResult<Outcome> {
    cfg.seed = a.io.seed.unwrap_or(cfg.seed);
    let t = &mut cfg.train;
    t.steps = a.steps.unwrap_or(t.steps);
    t.learning_rate = a.learning_rate.unwrap_or(t.learning_rate);
    t.batch_size = a.batch_size.unwrap_or(t.batch_size);
    t.lambda = a.lambda.unwrap_or(t.lambda);
    t.dim = a.dim.unwrap_or(t.dim);
    t.hidden = a.hidden.unwrap_or(t.hidden);
    cfg.validate()?;
    let Some(out) = a.io.out.clone() else {
        return Err(Failure::Usage("train needs --out for the checkpoint".into()));
    };
    if a.heldout == 0 {
        return Err(Failure::Usage("--heldout must be positive".into()));
    }
    let dist = require_distribution(&a.distribution, &mut cfg)?;
    let kc = cfg.kernel_config(&dist)?;
    let outcome = train_with_history(&dist, &cfg.train_config(), &kc)?;
    let heldout = sample_batch(&dist, a.heldout, &kc, &mut seeded(derive_seed(cfg.seed, 1)))?;
    let net = NetworkDenoiser::new(outcome.params)?;
    let summary = json!({
        "first_batch_loss": outcome.losses.first(),
        "last_batch_loss": outcome.losses.last(),
        "heldout_loss": denoiser_loss(&net, &heldout, &kc)?,
        "oracle_heldout_loss": denoiser_loss(&ExactBayesDenoiser::new(dist.clone()), &heldout, &kc)?,
    });
    let mut report = summary.to_string();
    report.push('\n');
    Ok(Outcome {
        command: "train",
        seed: cfg.seed,
        config: to_value(&cfg),
        outputs: vec![(Some(out), net.params.to_json_string().into_bytes()), (None, report.into_bytes())],
        summary: Some(summary),
    })
}

fn apply_sampler_args(s: &SamplerArgs, cfg: &mut RunConfig) {
    let sc = &mut cfg.sampler;
    sc.mode = s.mode.unwrap_or(sc.mode);
    sc.nfe = s.nfe.unwrap_or(sc.nfe);
    sc.num_samples = s.num_samples.unwrap_or(sc.num_samples);
    if let Some(i) = s.integrator {
        sc.ode.integrator = i;
    }
    if let Some(c) = &s.checkpoint {
        cfg.paths.checkpoint = Some(c.clone());
    }
}

fn build_denoiser(cfg: &RunConfig, dist: &ToyDistribution) -> CliResult<Box<dyn Denoiser>> {
    match &cfg.paths.checkpoint {
        Some(p) => {
            let params = DenoiserParams::load(p)?;
            if params.vocab() != dist.vocab() || params.seq_len() != dist.len() {
                return Err(CandiError::Shape("checkpoint and distribution disagree on dimensions".into()).into());
            }
            Ok(Box::new(NetworkDenoiser::new(params)?))
        }
        None => Ok(Box::new(ExactBayesDenoiser::new(dist.clone()))),
    }
}

fn sampler_config(cfg: &RunConfig, kc: KernelConfig) -> SamplerConfig {
    let s = &cfg.sampler;
    SamplerConfig::new(s.mode, s.nfe, kc)
        .with_seed(cfg.seed)
        .with_temperature(s.temperature)
        .with_guidance(s.guidance_weight)
        .with_ode(s.ode)
}

fn sample_cmd(a: &SampleArgs, mut cfg: RunConfig) -> CliResult<Outcome> {
    cfg.seed = a.io.seed.unwrap_or(cfg.seed);
    apply_sampler_args(&a.sampler, &mut cfg);
    cfg.sampler.temperature = a.temperature.unwrap_or(cfg.sampler.temperature);
    cfg.sampler.guidance_weight = a.guidance_weight.unwrap_or(cfg.sampler.guidance_weight);
    if let Some(c) = &a.classifier {
        cfg.paths.classifier = Some(c.clone());
    }
    cfg.validate()?;
    let dist = require_distribution(&a.sampler.distribution, &mut cfg)?;
    let kc = cfg.kernel_config(&dist)?;
    let den = build_denoiser(&cfg, &dist)?;
    let classifier = match &cfg.paths.classifier {
        Some(p) => Some(load_classifier(p)?),
        None if cfg.sampler.guidance_weight != 0.0 => {
            return Err(Failure::Usage("a non-zero --guidance-weight needs --classifier".into()));
        }
        None => None,
    };
    let sc = sampler_config(&cfg, kc);
    let mut sampler = Sampler::new(den.as_ref(), sc)?;
    if let Some(c) = &classifier {
        sampler = sampler.with_classifier(c.as_ref());
    }
    let samples = sampler.sample_many(cfg.sampler.num_samples)?;
    let mut lines = String::new();
    for s in &samples {
        let rec = json!({ "tokens": s.0, "mode": sc.mode, "nfe": sc.nfe, "temperature": sc.temperature, "seed": sc.seed });
        lines.push_str(&rec.to_string());
        lines.push('\n');
    }
    let set = SampleSet::new(samples, Some(sc))?;
    Ok(Outcome {
        command: "sample",
        seed: cfg.seed,
        config: to_value(&cfg),
        outputs: vec![(a.io.out.clone(), lines.into_bytes())],
        summary: Some(json!({ "tv": tv_distance(&set, &dist) })),
    })
}

fn frontier_cmd(a: &FrontierArgs, mut cfg: RunConfig) -> CliResult<Outcome> {
    cfg.seed = a.io.seed.unwrap_or(cfg.seed);
    apply_sampler_args(&a.sampler, &mut cfg);
    if let Some(t) = &a.temps {
        cfg.sampler.temperatures = t.clone();
    }
    cfg.validate()?;
    let dist = require_distribution(&a.sampler.distribution, &mut cfg)?;
    let kc = cfg.kernel_config(&dist)?;
    let den = build_denoiser(&cfg, &dist)?;
    let sampler = Sampler::new(den.as_ref(), sampler_config(&cfg, kc))?;
    let frontier = sweep(&sampler, &cfg.sampler.temperatures, cfg.sampler.num_samples, &dist, cfg.seed)?;
    Ok(Outcome {
        command: "frontier",
        seed: cfg.seed,
        config: to_value(&cfg),
        outputs: vec![(a.io.out.clone(), frontier.to_csv().into_bytes())],
        summary: None,
    })
}

fn compare_cmd(a: &CompareArgs, cfg: RunConfig) -> CliResult<Outcome> {
    let (fa, fb) = (Frontier::load(&a.a)?, Frontier::load(&a.b)?);
    let verdict = dominates(&fa, &fb)?;
    Ok(Outcome {
        command: "compare",
        seed: cfg.seed,
        config: json!({ "a": a.a.display().to_string(), "b": a.b.display().to_string() }),
        outputs: vec![(a.out.clone(), format!("dominates: {verdict}\n").into_bytes())],
        summary: None,
    })
}

/// Logistic classifier scoring `scale` for target tokens at `position` and
/// `−scale` for the others.
pub fn target_classifier(seq_len: usize, vocab: usize, position: usize, targets: &[usize], scale: f64) -> Result<LogisticClassifier> {
    if position >= seq_len || targets.iter().any(|&t| t >= vocab) {
        return Err(CandiError::Config("target position or tokens out of range".into()));
    }
    let mut weights = Array2::zeros((seq_len, vocab));
    for k in 0..vocab {
        weights[[position, k]] = if targets.contains(&k) { scale } else { -scale };
    }
    Ok(LogisticClassifier { weights, bias: 0.0 })
}

fn guide_demo(a: &GuideArgs, mut cfg: RunConfig) -> CliResult<Outcome> {
    cfg.seed = a.io.seed.unwrap_or(cfg.seed);
    if a.sampler.distribution.is_none() && cfg.paths.distribution.is_none() {
        cfg.paths.distribution = Some("builtin:two_class".into());
    }
    if a.sampler.nfe.is_none() {
        cfg.sampler.nfe = 16;
    }
    apply_sampler_args(&a.sampler, &mut cfg);
    cfg.validate()?;
    if a.weights.is_empty() || a.weights.iter().any(|w| !w.is_finite()) {
        return Err(Failure::Usage("--weights must be a non-empty list of finite numbers".into()));
    }
    let dist = require_distribution(&a.sampler.distribution, &mut cfg)?;
    let kc = cfg.kernel_config(&dist)?;
    let den = build_denoiser(&cfg, &dist)?;
    let clf = target_classifier(dist.len(), dist.vocab(), a.position, &a.target_tokens, a.scale)?;
    let n = cfg.sampler.num_samples;
    let mut csv = String::from("guidance_weight,target_fraction,std_err\n");
    for &w in &a.weights {
        let sc = SamplerConfig { guidance_weight: w, ..sampler_config(&cfg, kc) };
        let samples = Sampler::new(den.as_ref(), sc)?.with_classifier(&clf).sample_many(n)?;
        let p = samples.iter().filter(|s| a.target_tokens.contains(&s.0[a.position])).count() as f64 / n as f64;
        csv.push_str(&format!("{w},{p},{}\n", (p * (1.0 - p) / n as f64).sqrt()));
    }
    Ok(Outcome {
        command: "guide-demo",
        seed: cfg.seed,
        config: json!({
            "run": to_value(&cfg), "weights": a.weights, "target_tokens": a.target_tokens,
            "position": a.position, "scale": a.scale,
        }),
        outputs: vec![(a.io.out.clone(), csv.into_bytes())],
        summary: None,
    })
}

fn dissonance_demo(a: &DissonanceArgs, mut cfg: RunConfig) -> CliResult<Outcome> {
    cfg.seed = a.io.seed.unwrap_or(cfg.seed);
    cfg.sampler.nfe = a.nfe.unwrap_or(cfg.sampler.nfe);
    cfg.sampler.num_samples = a.num_samples.unwrap_or(cfg.sampler.num_samples);
    if let Some(i) = a.integrator {
        cfg.sampler.ode.integrator = i;
    }
    cfg.validate()?;
    if a.vocab_list.is_empty() || a.vocab_list.iter().any(|&v| v < 4) {
        return Err(Failure::Usage("--vocab-list entries must be at least 4".into()));
    }
    let mut csv = String::from("vocab,mode,tv,identity_corruption_at_end\n");
    let mut summary = Vec::new();
    for (j, &v) in a.vocab_list.iter().enumerate() {
        let dist = fixtures::corner_pairs(v);
        let kc = cfg.kernel_config(&dist)?;
        let den = ExactBayesDenoiser::new(dist.clone());
        let rho_end = identity_corruption(sigma_of_t(T_EPSILON, &kc)?, VocabSize::new(v)?)?;
        for mode in [SamplerMode::GaussianOde, SamplerMode::HybridExact] {
            let sc = SamplerConfig { mode, seed: derive_seed(cfg.seed, j as u64), ..sampler_config(&cfg, kc) };
            let samples = Sampler::new(&den, sc)?.sample_many(cfg.sampler.num_samples)?;
            let tv = tv_distance(&SampleSet::new(samples, Some(sc))?, &dist);
            csv.push_str(&format!("{v},{mode},{tv},{rho_end}\n"));
            summary.push(json!({ "vocab": v, "mode": mode, "tv": tv }));
        }
    }
    Ok(Outcome {
        command: "dissonance-demo",
        seed: cfg.seed,
        config: json!({ "run": to_value(&cfg), "vocab_list": a.vocab_list }),
        outputs: vec![(a.io.out.clone(), csv.into_bytes())],
        summary: Some(Value::Array(summary)),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run_capture(args: &[&str]) -> (i32, String, String) {
        let mut out = Vec::new();
        let mut err = Vec::new();
        let code = run(std::iter::once("candi-lab").chain(args.iter().copied()), &mut out, &mut err);
        (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
    }

    #[test]
    fn minimal_config_gets_defaults() {
        let cfg = parse_config(r#"{"version": 1}"#).unwrap();
        assert_eq!(cfg, RunConfig::default());
        assert_eq!(cfg.kernel.rank_min, 0.01);
        assert_eq!(cfg.train.lambda, 0.5);
    }

    #[test]
    fn config_errors_name_the_field() {
        let e = parse_config(r#"{"version": 1, "kernel": {"rank_min": 0.3, "rank_max": 0.2}}"#).unwrap_err().to_string();
        assert!(e.contains("rank_min") && e.contains("rank_max"), "{e}");
        let e = parse_config(r#"{"version": 1, "sampler": {"nfe": 4, "colour": 1}}"#).unwrap_err().to_string();
        assert!(e.contains("colour") && e.contains("line"), "{e}");
        let e = parse_config(r#"{"version": 2}"#).unwrap_err().to_string();
        assert!(e.contains("version"), "{e}");
        assert!(parse_config(r#"{"seed": 3}"#).is_err());
    }

    #[test]
    fn builtin_distributions() {
        assert_eq!(resolve_distribution("builtin:reference_five").unwrap(), fixtures::reference_five());
        assert_eq!(resolve_distribution("builtin:repeated_token:4:3").unwrap().len(), 3);
        assert!(resolve_distribution("builtin:corner_pairs").is_err());
        assert!(resolve_distribution("builtin:nope").is_err());
    }

    #[test]
    fn usage_errors_exit_two() {
        assert_eq!(run_capture(&["frobnicate"]).0, EXIT_USAGE);
        assert_eq!(run_capture(&["sample", "--nfe", "many"]).0, EXIT_USAGE);
        assert_eq!(run_capture(&["sample", "--num-samples", "2"]).0, EXIT_USAGE);
        assert_eq!(run_capture(&["--help"]).0, EXIT_OK);
    }

    #[test]
    fn runtime_errors_are_json() {
        let (code, _, err) = run_capture(&["sample", "--distribution", "/nonexistent/dist.json"]);
        assert_eq!(code, EXIT_RUNTIME);
        let rec: Value = serde_json::from_str(err.trim()).unwrap();
        assert_eq!(rec["error"], "io");
        let (code, _, err) = run_capture(&["sample", "--distribution", "builtin:reference_five", "--temperature", "0"]);
        assert_eq!(code, EXIT_RUNTIME);
        assert!(err.contains("\"config\""));
    }

    #[test]
    fn sample_emits_json_lines() {
        let (code, out, err) = run_capture(&[
            "sample", "--mode", "hybrid_exact", "--nfe", "1", "--num-samples", "3", "--seed", "1", "--distribution", "builtin:reference_five",
        ]);
        assert_eq!(code, 0, "{err}");
        let lines: Vec<Value> = out.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
        assert_eq!(lines.len(), 3);
        assert_eq!(lines[0]["mode"], "hybrid_exact");
        assert_eq!(lines[0]["nfe"], 1);
        assert_eq!(lines[0]["tokens"].as_array().unwrap().len(), 2);
        let manifest: Value = serde_json::from_str(err.trim()).unwrap();
        assert_eq!(manifest["command"], "sample");
        assert_eq!(manifest["artifacts"][0]["sha256"].as_str().unwrap().len(), 64);
    }

    #[test]
    fn validate_formulas_rows() {
        let (code, out, _) = run_capture(&["validate-formulas", "--vocab-list", "5,50", "--grid-points", "4", "--samples", "1000", "--seed", "7"]);
        assert_eq!(code, 0);
        assert_eq!(out.lines().count(), 9);
        assert_eq!(out, run_capture(&["validate-formulas", "--vocab-list", "5,50", "--grid-points", "4", "--samples", "1000", "--seed", "7"]).1);
    }

    #[test]
    fn log_grid_endpoints() {
        let g = log_grid(0.1, 10.0, 8);
        assert_eq!(g.len(), 8);
        assert!((g[0] - 0.1).abs() < 1e-15 && (g[7] - 10.0).abs() < 1e-12);
        assert!(g.windows(2).all(|w| (w[1] / w[0] - (100f64).powf(1.0 / 7.0)).abs() < 1e-12));
    }
}
