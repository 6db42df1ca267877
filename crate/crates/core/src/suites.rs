//! Randomised checks of the deterministic inequalities behind the moment bounds.

use crate::bounds::c_beta;
use crate::error::Result;
use crate::moments::{check_binomial_bounds, check_convolution, MomentVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

#[derive(Debug, Clone, Serialize)]
pub struct SuiteOutcome {
    pub name: String,
    pub cases: usize,
    pub violations: usize,
    /// Smallest normalised slack seen (negative on a violation); `None` when only pass/fail is known.
    pub worst_slack: Option<f64>,
    pub tolerance: f64,
}

impl SuiteOutcome {
    fn new(name: impl Into<String>, tolerance: f64) -> Self {
        SuiteOutcome {
            name: name.into(),
            cases: 0,
            violations: 0,
            worst_slack: None,
            tolerance,
        }
    }

    fn record(&mut self, slack: Option<f64>, ok: bool) {
        self.cases += 1;
        if !ok {
            self.violations += 1;
        }
        if let Some(s) = slack {
            self.worst_slack = Some(self.worst_slack.map_or(s, |w: f64| w.min(s)));
        }
    }

    pub fn passed(&self) -> bool {
        self.violations == 0 && self.cases > 0
    }
}

/// Log-uniform over roughly `[e^-10, e^10]`, with occasional exact zeros.
fn random_sequence<R: Rng + ?Sized>(rng: &mut R, len: usize) -> Vec<f64> {
    (0..len)
        .map(|_| if rng.gen_bool(0.05) { 0.0 } else { (rng.gen_range(-10.0..10.0f64)).exp() })
        .collect()
}

/// `Σ (z^p/p!) S_{s,p} ≤ 2 E^n I^n` on random nonnegative sequences, at each `z`.
pub fn convolution_suite<R: Rng + ?Sized>(rng: &mut R, cases: usize, n: usize, zs: &[f64]) -> Result<SuiteOutcome> {
    let mut out = SuiteOutcome::new(format!("convolution n={n}"), 1e-12);
    for _ in 0..cases {
        let s = [0.5, 1.0, 2.0][rng.gen_range(0..3)];
        let beta = rng.gen_range(0.05..=s);
        let m = random_sequence(rng, n + 2);
        let shifted = random_sequence(rng, n + 1);
        let mv = MomentVector::new(s, beta, m, Some(shifted), 0.0)?;
        let p0 = crate::bounds::min_admissible_p0(s).min(n);
        for &z in zs {
            let c = check_convolution(&mv, z, p0, n)?;
            let slack = if c.rhs > 0.0 { c.slack / c.rhs } else { 0.0 };
            out.record(Some(slack), c.holds);
        }
    }
    Ok(out)
}

/// Partial binomial sums bracketing `(x+y)^p - x^p - y^p` for `p ∈ (1, 40)`.
pub fn binomial_suite<R: Rng + ?Sized>(rng: &mut R, cases: usize) -> Result<SuiteOutcome> {
    let mut out = SuiteOutcome::new("binomial bracket", 1e-12);
    for _ in 0..cases {
        let x = rng.gen_range(-6.0..6.0f64).exp();
        let y = rng.gen_range(-6.0..6.0f64).exp();
        let p = rng.gen_range(1.0..40.0f64).max(1.0 + 1e-9);
        let (lo, hi) = check_binomial_bounds(x, y, p)?;
        out.record(None, lo && hi);
    }
    Ok(out)
}

/// `C_β|v|^β - |v*|^β ≤ |v - v*|^β ≤ 2|v|^β + 2|v*|^β` on random pairs, per `β`.
pub fn kernel_inequality_suite<R: Rng + ?Sized>(rng: &mut R, d: usize, pairs: usize, betas: &[f64]) -> Vec<SuiteOutcome> {
    betas
        .iter()
        .map(|&beta| {
            let mut out = SuiteOutcome::new(format!("kernel inequalities beta={beta}"), 1e-12);
            let cb = c_beta(beta);
            for _ in 0..pairs {
                let sa = rng.gen_range(-4.0..4.0f64).exp();
                let sb = rng.gen_range(-4.0..4.0f64).exp();
                let v: Vec<f64> = (0..d).map(|_| sa * rng.sample::<f64, _>(StandardNormal)).collect();
                let w: Vec<f64> = (0..d).map(|_| sb * rng.sample::<f64, _>(StandardNormal)).collect();
                let norm = |x: &[f64]| x.iter().map(|a| a * a).sum::<f64>().sqrt();
                let g = v.iter().zip(&w).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt().powf(beta);
                let (a, b) = (norm(&v).powf(beta), norm(&w).powf(beta));
                let scale = a + b;
                let lower = (g - (cb * a - b)) / scale;
                let upper = (2.0 * a + 2.0 * b - g) / scale;
                out.record(Some(lower.min(upper)), lower >= -1e-12 && upper >= -1e-12);
            }
            out
        })
        .collect()
}
