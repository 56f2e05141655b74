//! Composite Gauss–Legendre quadrature with panel doubling.

use std::f64::consts::PI;
use std::sync::OnceLock;

use crate::error::{CandiError, Result};

const ORDER: usize = 20;
const INITIAL_PANELS: usize = 4;
const MAX_PANELS: usize = 1 << 14;

/// Convergence threshold between successive panel doublings.
pub const CONVERGENCE: f64 = 1e-8;
/// Largest change still accepted as a result once the panel budget runs out.
pub const TOLERANCE: f64 = 1e-6;

/// Nodes and weights on [-1, 1], by Newton iteration on P_n.
fn rule() -> &'static [(f64, f64)] {
    static RULE: OnceLock<Vec<(f64, f64)>> = OnceLock::new();
    RULE.get_or_init(|| {
        let n = ORDER;
        let mut out = Vec::with_capacity(n);
        for i in 0..n {
            let mut x = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
            let mut dp = 0.0;
            for _ in 0..100 {
                let (mut p0, mut p1) = (1.0, x);
                for k in 2..=n {
                    let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                    p0 = p1;
                    p1 = p2;
                }
                dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
                let dx = p1 / dp;
                x -= dx;
                if dx.abs() < 1e-16 {
                    break;
                }
            }
            out.push((x, 2.0 / ((1.0 - x * x) * dp * dp)));
        }
        out
    })
}

fn composite<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, panels: usize) -> f64 {
    let nodes = rule();
    let h = (b - a) / panels as f64;
    (0..panels)
        .map(|p| {
            let mid = a + (p as f64 + 0.5) * h;
            nodes.iter().map(|&(x, w)| w * f(mid + 0.5 * h * x)).sum::<f64>() * 0.5 * h
        })
        .sum()
}

/// Integrates `f` over `[a, b]`, doubling the panel count until two
/// successive estimates agree to [`CONVERGENCE`].
pub fn integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64) -> Result<f64> {
    let mut panels = INITIAL_PANELS;
    let mut prev = composite(&f, a, b, panels);
    let mut change = f64::INFINITY;
    while panels < MAX_PANELS {
        panels *= 2;
        let next = composite(&f, a, b, panels);
        change = (next - prev).abs();
        prev = next;
        if change < CONVERGENCE {
            return Ok(next);
        }
    }
    if change < TOLERANCE {
        Ok(prev)
    } else {
        Err(CandiError::Quadrature { change, tolerance: TOLERANCE })
    }
}
