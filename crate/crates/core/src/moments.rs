//! Algebra on moment sequences `m_{sp} = ∫ f |v|^{sp} dv`.

use crate::error::{invalid, Error, Result};
use crate::sum::CompensatedSum;
use serde::Serialize;
use statrs::function::gamma::ln_gamma;
use std::io::Write;

/// Moments on the order grid `sp`, `p = 0..=n+1`, plus the shifted moments
/// `m_{sp+β}` for `p = 0..=n`.
#[derive(Debug, Clone, Serialize)]
pub struct MomentVector {
    pub s: f64,
    pub beta: f64,
    pub n: usize,
    pub m: Vec<f64>,
    /// `m_{sp+β}`; `None` when `β = s`, where it is `m[p + 1]`.
    pub shifted: Option<Vec<f64>>,
    pub time: f64,
    pub stderr: Option<Vec<f64>>,
    pub shifted_stderr: Option<Vec<f64>>,
}

fn grid_aligned(s: f64, beta: f64) -> bool {
    (s - beta).abs() <= 1e-14 * s
}

impl MomentVector {
    pub fn new(s: f64, beta: f64, m: Vec<f64>, shifted: Option<Vec<f64>>, time: f64) -> Result<Self> {
        if !(s > 0.0 && s <= 2.0) {
            return Err(invalid("s", format!("{s} not in (0, 2]")));
        }
        if !(beta >= 0.0 && beta <= 2.0) {
            return Err(invalid("beta", format!("{beta} not in [0, 2]")));
        }
        if m.len() < 2 {
            return Err(invalid("m", "need at least orders 0 and s"));
        }
        let n = m.len() - 2;
        if m.iter().any(|x| !(*x >= 0.0) || !x.is_finite()) {
            return Err(invalid("m", "moments must be finite and nonnegative"));
        }
        let shifted = match shifted {
            Some(v) => {
                if v.len() < n + 1 || v.iter().any(|x| !(*x >= 0.0) || !x.is_finite()) {
                    return Err(invalid("shifted", format!("need n + 1 = {} finite nonnegative values", n + 1)));
                }
                Some(v[..=n].to_vec())
            }
            None if grid_aligned(s, beta) => None,
            None => return Err(invalid("shifted", "shifted moments are required when beta != s")),
        };
        Ok(MomentVector {
            s,
            beta,
            n,
            m,
            shifted,
            time,
            stderr: None,
            shifted_stderr: None,
        })
    }

    /// Moments of `Σ_i mass_i δ(|v| = speed_i)`, exact on every order.
    pub fn from_atoms(s: f64, beta: f64, n: usize, atoms: &[(f64, f64)]) -> Result<Self> {
        Self::from_moment_fn(s, beta, n, |q| {
            crate::sum::sum(atoms.iter().map(|&(w, r)| if q == 0.0 { w } else { w * r.powf(q) }))
        })
    }

    /// Fills every order from a closed-form moment function `q ↦ m_q`.
    pub fn from_moment_fn(s: f64, beta: f64, n: usize, f: impl Fn(f64) -> f64) -> Result<Self> {
        let m: Vec<f64> = (0..=n + 1).map(|p| f(s * p as f64)).collect();
        let shifted = (!grid_aligned(s, beta)).then(|| (0..=n).map(|p| f(s * p as f64 + beta)).collect());
        Self::new(s, beta, m, shifted, 0.0)
    }

    pub fn m0(&self) -> f64 {
        self.m[0]
    }

    /// `m_{sp}` for `p = 0..=n+1`.
    pub fn m_sp(&self, p: usize) -> Result<f64> {
        self.m
            .get(p)
            .copied()
            .ok_or(Error::OrderExceedsTruncation { p, n: self.n })
    }

    /// `m_{sp+β}` for `p = 0..=n`.
    pub fn m_shift(&self, p: usize) -> Result<f64> {
        if p > self.n {
            return Err(Error::OrderExceedsTruncation { p, n: self.n });
        }
        Ok(match &self.shifted {
            Some(v) => v[p],
            None => self.m[p + 1],
        })
    }

    /// `m_β`.
    pub fn m_beta(&self) -> f64 {
        self.m_shift(0).expect("order 0 always present")
    }

    /// Orders `p ∈ 1..=n` where `m_{sp}² > m_{s(p-1)} m_{s(p+1)} (1 + rel_tol)`.
    pub fn log_convexity_violations(&self, rel_tol: f64) -> Vec<usize> {
        (1..=self.n)
            .filter(|&p| self.m[p] * self.m[p] > self.m[p - 1] * self.m[p + 1] * (1.0 + rel_tol))
            .collect()
    }

    /// Columns `p, order, m_sp, m_sp_plus_beta, stderr`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["p", "order", "m_sp", "m_sp_plus_beta", "stderr"])?;
        for p in 0..=self.n + 1 {
            let shifted = self.m_shift(p).map(|x| format!("{x:.12e}")).unwrap_or_default();
            let se = self
                .stderr
                .as_ref()
                .and_then(|v| v.get(p))
                .map(|x| format!("{x:.6e}"))
                .unwrap_or_default();
            w.write_record([
                p.to_string(),
                format!("{}", self.s * p as f64),
                format!("{:.12e}", self.m[p]),
                shifted,
                se,
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Generalised binomial coefficient `Γ(p+1) / (Γ(k+1) Γ(p-k+1))` for `k < p + 1`.
pub fn binomial(p: f64, k: usize) -> f64 {
    let k = k as f64;
    debug_assert!(p - k + 1.0 > 0.0);
    (ln_gamma(p + 1.0) - ln_gamma(k + 1.0) - ln_gamma(p - k + 1.0)).exp()
}

/// `k_p`, the integer part of `(p + 1) / 2`.
pub fn k_p(p: f64) -> usize {
    ((p + 1.0) / 2.0).floor() as usize
}

/// `S_{s,p} = Σ_{k=1}^{k_p} C(p,k) (m_{sk+β} m_{s(p-k)} + m_{sk} m_{s(p-k)+β})`.
pub fn s_term(mv: &MomentVector, p: usize) -> Result<f64> {
    if p == 0 || p > mv.n {
        return Err(Error::OrderExceedsTruncation { p, n: mv.n });
    }
    let mut acc = CompensatedSum::new();
    for k in 1..=k_p(p as f64) {
        let c = binomial(p as f64, k);
        acc.add(c * mv.m_shift(k)? * mv.m[p - k]);
        acc.add(c * mv.m[k] * mv.m_shift(p - k)?);
    }
    Ok(acc.value())
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct ExpMomentSeries {
    pub z: f64,
    pub e_n: f64,
    pub i_n: f64,
    pub n: usize,
    pub p0: usize,
}

/// Weights `z^p / p!` for `p = 0..=n` by forward recurrence.
fn taylor_weights(z: f64, n: usize) -> Vec<f64> {
    let mut w = Vec::with_capacity(n + 1);
    let mut c = 1.0;
    w.push(c);
    for p in 1..=n {
        c *= z / p as f64;
        w.push(c);
    }
    w
}

/// `E^n = Σ_{p=0}^n m_{sp} z^p/p!` and `I^n = Σ_{p=0}^n m_{sp+β} z^p/p!`.
pub fn exp_partial_sums(mv: &MomentVector, z: f64, n: usize) -> Result<ExpMomentSeries> {
    exp_tail_sums(mv, z, 0, n)
}

/// Partial sums restricted to `p0 ≤ p ≤ n`.
pub fn exp_tail_sums(mv: &MomentVector, z: f64, p0: usize, n: usize) -> Result<ExpMomentSeries> {
    if !(z >= 0.0) || !z.is_finite() {
        return Err(invalid("z", format!("{z} must be finite and ≥ 0")));
    }
    if n > mv.n {
        return Err(Error::OrderExceedsTruncation { p: n, n: mv.n });
    }
    let w = taylor_weights(z, n);
    let (mut e, mut i) = (CompensatedSum::new(), CompensatedSum::new());
    for p in p0..=n {
        e.add(mv.m[p] * w[p]);
        i.add(mv.m_shift(p)? * w[p]);
        if !(e.value().is_finite() && i.value().is_finite()) {
            return Err(Error::NonFiniteSeries { order: p, z });
        }
    }
    Ok(ExpMomentSeries {
        z,
        e_n: e.value(),
        i_n: i.value(),
        n,
        p0,
    })
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct ConvolutionSlack {
    pub lhs: f64,
    pub rhs: f64,
    pub slack: f64,
    pub holds: bool,
}

/// `Σ_{p=p0}^n (z^p/p!) S_{s,p} ≤ 2 E^n I^n`.
pub fn check_convolution(mv: &MomentVector, z: f64, p0: usize, n: usize) -> Result<ConvolutionSlack> {
    if p0 == 0 || (p0 as f64) < 2.0 / mv.s - 1e-12 {
        return Err(invalid("p0", format!("{p0} < 2/s")));
    }
    if n < p0 {
        return Err(invalid("n", format!("n = {n} < p0 = {p0}")));
    }
    let series = exp_partial_sums(mv, z, n)?;
    let w = taylor_weights(z, n);
    let mut lhs = CompensatedSum::new();
    for p in p0..=n {
        lhs.add(w[p] * s_term(mv, p)?);
    }
    let lhs = lhs.value();
    let rhs = 2.0 * series.e_n * series.i_n;
    Ok(ConvolutionSlack {
        lhs,
        rhs,
        slack: rhs - lhs,
        holds: lhs <= rhs * (1.0 + 1e-12),
    })
}

/// `(x+y)^p - x^p - y^p` without cancellation for `x ≪ y`.
fn binomial_middle(x: f64, y: f64, p: f64) -> f64 {
    let (lo, hi) = if x <= y { (x, y) } else { (y, x) };
    hi.powf(p) * (p * (lo / hi).ln_1p()).exp_m1() - lo.powf(p)
}

/// Two-sided bounds on `(x+y)^p - x^p - y^p` by partial binomial sums.
/// Returns `(lower_holds, upper_holds)`.
pub fn check_binomial_bounds(x: f64, y: f64, p: f64) -> Result<(bool, bool)> {
    if !(x > 0.0 && y > 0.0) {
        return Err(invalid("x, y", "must be positive"));
    }
    if !(p > 1.0) {
        return Err(invalid("p", format!("{p} must exceed 1")));
    }
    let kp = k_p(p);
    let term = |k: usize| binomial(p, k) * (x.powi(k as i32) * y.powf(p - k as f64) + x.powf(p - k as f64) * y.powi(k as i32));
    let lower = crate::sum::sum((1..kp).map(term));
    let upper = crate::sum::sum((1..=kp).map(term));
    let middle = binomial_middle(x, y, p);
    let tol = 1e-12 * (x + y).powf(p);
    Ok((lower <= middle + tol, middle <= upper + tol))
}

/// `m_0^{-β/(sp)} m_{sp}^{1 + β/(sp)}`, a lower bound for `m_{sp+β}`.
pub fn holder_interpolation_floor(mv: &MomentVector, p: usize) -> Result<f64> {
    let m0 = mv.m0();
    if !(m0 > 0.0) {
        return Err(invalid("m0", "zero mass"));
    }
    if p == 0 {
        return Err(invalid("p", "order must be ≥ 1"));
    }
    let q = mv.s * p as f64;
    let r = mv.beta / q;
    Ok(m0.powf(-r) * mv.m_sp(p)?.powf(1.0 + r))
}

/// Lower bounds on `I^n` from `E^n` used when propagating exponential moments.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct PropagationLowerBound {
    pub i_n: f64,
    /// `E^n - m_0 e^z`, valid for every nonnegative measure.
    pub pointwise: f64,
    /// `(E^n - m_0)/z - e^z`, which needs `β = s` or large `z`.
    pub rescaled: f64,
}

pub fn propagation_lower_bound(mv: &MomentVector, z: f64, n: usize) -> Result<PropagationLowerBound> {
    if !(z > 0.0) {
        return Err(invalid("z", "must be positive"));
    }
    let series = exp_partial_sums(mv, z, n)?;
    let m0 = mv.m0();
    Ok(PropagationLowerBound {
        i_n: series.i_n,
        pointwise: series.e_n - m0 * z.exp(),
        rescaled: (series.e_n - m0) / z - z.exp(),
    })
}
