//! Acceptance checks. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails.

use std::cmp::Ordering;
use std::time::Instant;

use candi_core::analytics::{identity_corruption, mc_corruption, rank_degradation, sigma_for_rank, NoiseLevel, VocabSize};
use candi_core::cli::{self, log_grid, target_classifier};
use candi_core::denoise::{
    denoiser_loss, loss, loss_gradient, sample_batch, train, Denoiser, DenoiserParams, ExactBayesDenoiser, NetworkDenoiser, NetworkShape,
    TrainConfig,
};
use candi_core::frontier::{compare_at_temperature, dominates, fixtures as frontiers, tv_distance, Dominance, SampleSet};
use candi_core::kernel::{argmax, KernelConfig};
use candi_core::rng::{derive_seed, seeded};
use candi_core::sampler::{ClassifierFn, OdeIntegrator, OdeOptions, Sampler, SamplerConfig, SamplerMode};
use candi_core::toy::{fixtures, ToyDistribution};
use rand::Rng;

type Check = (bool, String);

fn kernel(d: &ToyDistribution) -> KernelConfig {
    KernelConfig::new(d.vocab(), d.len()).unwrap()
}

fn sampled_tv(d: &ToyDistribution, mode: SamplerMode, nfe: usize, n: usize, seed: u64, ode: OdeOptions) -> f64 {
    let den = ExactBayesDenoiser::new(d.clone());
    let cfg = SamplerConfig::new(mode, nfe, kernel(d)).with_seed(seed).with_ode(ode);
    let samples = Sampler::new(&den, cfg).unwrap().sample_many(n).unwrap();
    tv_distance(&SampleSet::new(samples, None).unwrap(), d)
}

fn formula_validation() -> Check {
    let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let start = Instant::now();
    let (agree, total) = pool.install(|| {
        let mut agree = 0;
        let mut total = 0;
        for v in [5, 50, 500] {
            for s2 in log_grid(0.1, 10.0, 8) {
                let sigma = NoiseLevel::new(s2.sqrt()).unwrap();
                let vs = VocabSize::new(v).unwrap();
                let (rho, rank) = mc_corruption(sigma, vs, 5000, derive_seed(11, total)).unwrap();
                let ok = rho.z_score(identity_corruption(sigma, vs).unwrap()) <= 3.0 && rank.z_score(rank_degradation(sigma)) <= 3.0;
                agree += usize::from(ok);
                total += 1;
            }
        }
        (agree, total as usize)
    });
    let secs = start.elapsed().as_secs_f64();
    let frac = agree as f64 / total as f64;
    (frac >= 0.95 && secs < 60.0, format!("{agree}/{total} grid points within 3 SE ({frac:.3}), {secs:.1} s on one thread"))
}

fn closed_form_identities() -> Check {
    const PHI_MINUS_ONE: f64 = 0.158_655_253_931_457_05;
    let r = rank_degradation(NoiseLevel::new(std::f64::consts::FRAC_1_SQRT_2).unwrap());
    let e1 = (r - PHI_MINUS_ONE).abs();
    let e2 = log_grid(0.05, 20.0, 100)
        .into_iter()
        .map(|s| (sigma_for_rank(rank_degradation(NoiseLevel::new(s).unwrap())).unwrap().get() - s).abs() / s)
        .fold(0.0, f64::max);
    let e3 = log_grid(0.05, 20.0, 20)
        .into_iter()
        .map(|s| {
            let sigma = NoiseLevel::new(s).unwrap();
            (identity_corruption(sigma, VocabSize::new(2).unwrap()).unwrap() - rank_degradation(sigma)).abs()
        })
        .fold(0.0, f64::max);
    (e1 < 1e-9 && e2 < 1e-9 && e3 < 1e-6, format!("|r(1/sqrt2) - Phi(-1)| = {e1:.1e}, round-trip rel {e2:.1e}, |rho(s,2) - r(s)| = {e3:.1e}"))
}

fn temporal_dissonance() -> Check {
    let exp = OdeOptions { integrator: OdeIntegrator::Exponential, ..OdeOptions::default() };
    let (small, large) = (fixtures::corner_pairs(4), fixtures::corner_pairs(512));
    let ode4 = sampled_tv(&small, SamplerMode::GaussianOde, 64, 10_000, 31, exp);
    let ode512 = sampled_tv(&large, SamplerMode::GaussianOde, 64, 10_000, 32, exp);
    let hyb512 = sampled_tv(&large, SamplerMode::HybridExact, 64, 10_000, 33, exp);
    let euler4 = sampled_tv(&small, SamplerMode::GaussianOde, 64, 10_000, 31, OdeOptions::default());
    (
        ode4 < 0.1 && ode512 >= 3.0 * hyb512,
        format!("exponential step: ode TV v=4 {ode4:.4}, v=512 {ode512:.4}, hybrid v=512 {hyb512:.4} (ratio {:.1}); euler step ode v=4 {euler4:.4}", ode512 / hyb512),
    )
}

fn hybrid_correctness() -> Check {
    let d = fixtures::reference_five();
    let opts = OdeOptions::default();
    let exact = sampled_tv(&d, SamplerMode::HybridExact, 64, 100_000, 41, opts);
    let approx = sampled_tv(&d, SamplerMode::HybridApprox, 64, 100_000, 42, opts);
    (exact < 0.05 && (approx - exact).abs() <= 0.03, format!("hybrid_exact TV {exact:.4}, hybrid_approx TV {approx:.4}"))
}

fn gradient_correctness() -> Check {
    let mut worst: f64 = 0.0;
    for inst in 0..5u64 {
        let d = fixtures::reference_eight();
        let cfg = kernel(&d);
        let mut rng = seeded(derive_seed(51, inst));
        let batch = sample_batch(&d, 6, &cfg, &mut rng).unwrap();
        let shape = NetworkShape { v: 8, d: 6, h: 7, l: 4 };
        let mut p = DenoiserParams::init(shape, rng.random_range(0.1..0.9), &mut rng).unwrap();
        // perturb the zero-initialised tensors so every block is exercised
        let noisy: Vec<f64> = p.flat().iter().map(|x| x + 0.3 * (rng.random::<f64>() - 0.5)).collect();
        p.set_flat(&noisy).unwrap();
        let grad = loss_gradient(&p, &batch, &cfg).unwrap().flat();
        let base = p.flat();
        let h = 1e-5;
        for _ in 0..20 {
            let k = rng.random_range(0..base.len());
            let mut v = base.clone();
            v[k] = base[k] + h;
            let mut plus = p.clone();
            plus.set_flat(&v).unwrap();
            v[k] = base[k] - h;
            let mut minus = p.clone();
            minus.set_flat(&v).unwrap();
            let fd = (loss(&plus, &batch, &cfg).unwrap() - loss(&minus, &batch, &cfg).unwrap()) / (2.0 * h);
            worst = worst.max((fd - grad[k]).abs() / fd.abs().max(grad[k].abs()).max(1e-6));
        }
    }
    (worst < 1e-4, format!("worst relative error {worst:.2e} over 100 coordinates"))
}

fn training_signal() -> Check {
    let d = fixtures::reference_eight();
    let cfg = kernel(&d);
    let tc = TrainConfig { learning_rate: 0.1, steps: 10_000, lambda: 0.8, seed: 61, ..TrainConfig::default() };
    let net = NetworkDenoiser::new(train(&d, &tc, &cfg).unwrap()).unwrap();
    let held = sample_batch(&d, 4000, &cfg, &mut seeded(62)).unwrap();
    let net_loss = denoiser_loss(&net, &held, &cfg).unwrap();
    let oracle = denoiser_loss(&ExactBayesDenoiser::new(d), &held, &cfg).unwrap();
    let ratio = net_loss / oracle;

    let single = fixtures::single(8, vec![3, 1, 4, 1]);
    let scfg = kernel(&single);
    let snet = NetworkDenoiser::new(train(&single, &TrainConfig { seed: 63, steps: 2000, ..TrainConfig::default() }, &scfg).unwrap()).unwrap();
    let sheld = sample_batch(&single, 1000, &scfg, &mut seeded(64)).unwrap();
    let (mut hit, mut all) = (0, 0);
    for ex in &sheld {
        let post = snet.posterior(&ex.state, &scfg).unwrap();
        for (i, row) in post.probs().rows().into_iter().enumerate() {
            hit += usize::from(argmax(row) == ex.x0.0[i]);
            all += 1;
        }
    }
    let acc = hit as f64 / all as f64;
    (
        ratio <= 1.2 && hit == all,
        format!("held-out loss {net_loss:.4} vs oracle {oracle:.4} (ratio {ratio:.3}); single-sequence argmax accuracy {acc:.4}"),
    )
}

fn guidance_monotonicity() -> Check {
    let d = fixtures::two_class();
    let cfg = kernel(&d);
    let den = ExactBayesDenoiser::new(d);
    let clf = target_classifier(2, 4, 0, &[0, 1], 0.01).unwrap();
    let n = 10_000;
    let frac = |w: f64, seed: u64, guided: bool| {
        let sc = SamplerConfig::new(SamplerMode::HybridExact, 16, cfg).with_seed(seed).with_guidance(w);
        let mut s = Sampler::new(&den, sc).unwrap();
        if guided {
            s = s.with_classifier(&clf as &dyn ClassifierFn);
        }
        s.sample_many(n).unwrap().iter().filter(|x| x.0[0] < 2).count() as f64 / n as f64
    };
    let ps: Vec<f64> = [0.0, 1.0, 2.0, 4.0].iter().map(|&w| frac(w, 71, true)).collect();
    let monotone = ps.windows(2).all(|w| {
        let pool = (w[0] + w[1]) / 2.0;
        w[1] >= w[0] - (pool * (1.0 - pool) * 2.0 / n as f64).sqrt()
    });
    let unguided = frac(0.0, 72, false);
    let pool = (ps[0] + unguided) / 2.0;
    let z = (ps[0] - unguided) / (pool * (1.0 - pool) * 2.0 / n as f64).sqrt();
    (
        monotone && z.abs() < 2.5758,
        format!("fractions {:.4} {:.4} {:.4} {:.4}; w=0 vs unguided {unguided:.4}, z = {z:.2}", ps[0], ps[1], ps[2], ps[3]),
    )
}

fn low_nfe_ordering() -> Check {
    let d = fixtures::repeated_token(4, 4);
    let opts = OdeOptions::default();
    let mut wins = 0;
    let mut detail = Vec::new();
    for (j, nfe) in [1, 2, 4].into_iter().enumerate() {
        let h = sampled_tv(&d, SamplerMode::HybridExact, nfe, 10_000, derive_seed(81, j as u64), opts);
        let m = sampled_tv(&d, SamplerMode::Masked, nfe, 10_000, derive_seed(82, j as u64), opts);
        wins += usize::from(h <= m);
        detail.push(format!("nfe {nfe}: hybrid {h:.4} masked {m:.4}"));
    }
    (wins >= 2, format!("{wins}/3 settings; {}", detail.join(", ")))
}

fn frontier_machinery() -> Check {
    let (a, b) = frontiers::dominating_pair();
    let dom = (dominates(&a, &b).unwrap(), dominates(&b, &a).unwrap());
    let (c, e) = frontiers::crossing_pair();
    let cross = dominates(&c, &e).unwrap();
    let (x, y) = frontiers::temperature_trap();
    let trap = dominates(&x, &y).unwrap();
    let lo = compare_at_temperature(&x, &y, 0.7);
    let hi = compare_at_temperature(&x, &y, 1.0);
    let ok = dom == (Dominance::A, Dominance::B)
        && cross == Dominance::Incomparable
        && trap == Dominance::Incomparable
        && lo == Some(Ordering::Less)
        && hi == Some(Ordering::Greater);
    (ok, format!("dominating {}/{}, crossing {cross}, trap {trap} with point orders {lo:?} at 0.7 and {hi:?} at 1.0", dom.0, dom.1))
}

/// Runs one CLI invocation; returns stdout, the `--out` file and the
/// manifest without its wall-clock field.
fn cli_run(args: &[String], out: &std::path::Path, manifest: &std::path::Path) -> Result<Vec<u8>, String> {
    let _ = std::fs::remove_file(out);
    let mut stdout = Vec::new();
    let mut stderr = Vec::new();
    let argv = ["candi-lab".to_string(), "--manifest".into(), manifest.display().to_string()].into_iter().chain(args.iter().cloned());
    let code = cli::run(argv, &mut stdout, &mut stderr);
    if code != 0 {
        return Err(format!("exit {code}: {}", String::from_utf8_lossy(&stderr)));
    }
    let mut m: serde_json::Value = serde_json::from_slice(&std::fs::read(manifest).unwrap()).unwrap();
    m.as_object_mut().unwrap().remove("duration_seconds");
    let mut all = stdout;
    all.extend(std::fs::read(out).unwrap_or_default());
    all.extend(m.to_string().into_bytes());
    Ok(all)
}

fn determinism() -> Check {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let manifest = dir.path().join("manifest.json");
    let ckpt = dir.path().join("ckpt.json");
    let fa = dir.path().join("a.csv");
    let fb = dir.path().join("b.csv");
    let s = |v: &[&str]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>();
    let p = |x: &std::path::Path| x.display().to_string();
    std::fs::write(&fa, frontiers::crossing_pair().0.to_csv()).unwrap();
    std::fs::write(&fb, frontiers::crossing_pair().1.to_csv()).unwrap();
    std::fs::write(&ckpt, {
        let d = fixtures::reference_five();
        train(&d, &TrainConfig { steps: 50, ..TrainConfig::default() }, &kernel(&d)).unwrap().to_json_string()
    })
    .unwrap();
    let o = p(&out);
    let runs: Vec<(&str, Vec<String>)> = vec![
        ("validate-formulas", s(&["validate-formulas", "--vocab-list", "5,50", "--grid-points", "3", "--samples", "500", "--seed", "3", "--out", &o])),
        ("corrupt-demo", s(&["corrupt-demo", "--num-draws", "200", "--seed", "3", "--out", &o])),
        ("train", s(&["train", "--distribution", "builtin:reference_five", "--steps", "100", "--heldout", "100", "--seed", "3", "--out", &o])),
        ("sample", s(&["sample", "--distribution", "builtin:reference_five", "--nfe", "8", "--num-samples", "300", "--seed", "3", "--out", &o])),
        (
            "sample (network)",
            s(&["sample", "--distribution", "builtin:reference_five", "--checkpoint", &p(&ckpt), "--mode", "hybrid_approx", "--nfe", "8", "--num-samples", "100", "--seed", "3"]),
        ),
        ("frontier", s(&["frontier", "--distribution", "builtin:reference_eight", "--nfe", "4", "--num-samples", "300", "--seed", "3", "--out", &o])),
        ("compare", s(&["compare", &p(&fa), &p(&fb), "--out", &o])),
        ("guide-demo", s(&["guide-demo", "--num-samples", "300", "--seed", "3", "--out", &o])),
        ("dissonance-demo", s(&["dissonance-demo", "--vocab-list", "4,64", "--nfe", "8", "--num-samples", "300", "--seed", "3", "--out", &o])),
    ];
    let mut bad = Vec::new();
    for (name, args) in &runs {
        match (cli_run(args, &out, &manifest), cli_run(args, &out, &manifest)) {
            (Ok(a), Ok(b)) if a == b && !a.is_empty() => {}
            (Err(e), _) | (_, Err(e)) => bad.push(format!("{name}: {e}")),
            _ => bad.push(format!("{name}: outputs differ")),
        }
    }
    (bad.is_empty(), if bad.is_empty() { format!("{} invocations byte-identical across reruns", runs.len()) } else { bad.join("; ") })
}

fn main() {
    let criteria: [(&str, fn() -> Check); 10] = [
        ("formula validation", formula_validation),
        ("closed-form identities", closed_form_identities),
        ("temporal dissonance", temporal_dissonance),
        ("hybrid sampling correctness", hybrid_correctness),
        ("gradient correctness", gradient_correctness),
        ("training signal", training_signal),
        ("guidance monotonicity", guidance_monotonicity),
        ("low-nfe ordering", low_nfe_ordering),
        ("frontier machinery", frontier_machinery),
        ("determinism", determinism),
    ];
    let mut failed = 0;
    for (k, (name, check)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let (ok, detail) = check();
        failed += usize::from(!ok);
        println!("criterion {:>2} {:<28} {} ({:.1} s): {detail}", k + 1, name, if ok { "PASS" } else { "FAIL" }, start.elapsed().as_secs_f64());
    }
    println!("acceptance: {}/{} passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
