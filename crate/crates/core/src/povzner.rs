//! Angular averaging constants `γ_p`.
//!
//! `γ_p` is the sharp constant in
//! `∫ (|v'|^{2p} + |v'*|^{2p}) b(cos θ) dσ ≤ γ_p (|v|² + |v*|²)^p`,
//! obtained by maximising the normalised left side over configurations.
//! Both sides are homogeneous of degree `2p` and rotation invariant, so the
//! search runs over `|v|² + |v*|² = 1`, `r = |v*| ∈ [0, 1/√2]` and the angle
//! `φ ∈ [0, π]` between `v` and `v*`.

use crate::error::{invalid, Error, Result};
use crate::kernel::AngularKernel;
use crate::quadrature::{self, Rule};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;
use std::f64::consts::{FRAC_1_SQRT_2, PI};
use std::io::Write;

/// Azimuthal nodes for the component of σ transverse to the relative velocity.
pub const AZIMUTHAL_NODES: usize = 128;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum GammaMethod {
    SupSearch,
    SymmetricFormula,
    /// Values supplied by the caller (closed forms, external tables).
    Supplied,
}

impl GammaMethod {
    pub fn as_str(&self) -> &'static str {
        match self {
            GammaMethod::SupSearch => "sup-search",
            GammaMethod::SymmetricFormula => "symmetric-formula",
            GammaMethod::Supplied => "supplied",
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct GammaTable {
    pub orders: Vec<f64>,
    pub gamma: Vec<f64>,
    pub method: GammaMethod,
    pub kernel_id: String,
    pub tolerance: f64,
}

impl GammaTable {
    /// Wraps caller-supplied values after checking the table invariants.
    pub fn from_values(orders: Vec<f64>, gamma: Vec<f64>, kernel_id: impl Into<String>) -> Result<Self> {
        let table = GammaTable {
            orders,
            gamma,
            method: GammaMethod::Supplied,
            kernel_id: kernel_id.into(),
            tolerance: 1e-12,
        };
        table.check_invariants()?;
        Ok(table)
    }

    pub fn max_order(&self) -> f64 {
        *self.orders.last().unwrap_or(&1.0)
    }

    pub fn min_order(&self) -> f64 {
        *self.orders.first().unwrap_or(&1.0)
    }

    fn check_invariants(&self) -> Result<()> {
        if self.orders.len() != self.gamma.len() || self.orders.is_empty() {
            return Err(invalid("gamma", "orders and values must be non-empty and equally long"));
        }
        if self.orders.windows(2).any(|w| w[1] <= w[0]) || self.orders[0] < 1.0 {
            return Err(invalid("orders", "orders must be ascending and ≥ 1"));
        }
        let tol = self.tolerance;
        for (i, &g) in self.gamma.iter().enumerate() {
            if !(g > 0.0 && g <= 1.0 + tol) {
                return Err(invalid("gamma", format!("gamma({}) = {g} outside (0, 1]", self.orders[i])));
            }
        }
        for i in 1..self.gamma.len() {
            let (lo, hi) = (self.gamma[i - 1], self.gamma[i]);
            if hi >= lo * (1.0 + tol) || (hi >= lo && tol == 0.0) {
                return Err(Error::NonMonotoneGamma {
                    p_lo: self.orders[i - 1],
                    g_lo: lo,
                    p_hi: self.orders[i],
                    g_hi: hi,
                });
            }
        }
        if (self.orders[0] - 1.0).abs() < 1e-12 && (self.gamma[0] - 1.0).abs() > tol.max(1e-6) {
            return Err(invalid("gamma", format!("gamma(1) = {} differs from 1", self.gamma[0])));
        }
        Ok(())
    }

    /// `γ_p` at a real order by monotone piecewise-cubic (Fritsch–Carlson)
    /// interpolation between tabulated orders.
    pub fn at(&self, p: f64) -> Result<f64> {
        let xs = &self.orders;
        let ys = &self.gamma;
        let (lo, hi) = (xs[0], xs[xs.len() - 1]);
        if !(p >= lo - 1e-12 && p <= hi + 1e-12) {
            return Err(Error::OrderOutOfRange { order: p, lo, hi });
        }
        let p = p.clamp(lo, hi);
        if let Some(i) = xs.iter().position(|&x| (x - p).abs() < 1e-12) {
            return Ok(ys[i]);
        }
        let n = xs.len();
        if n == 1 {
            return Ok(ys[0]);
        }
        let i = (xs.partition_point(|&x| x <= p) - 1).min(n - 2);
        let slope = |k: usize| (ys[k + 1] - ys[k]) / (xs[k + 1] - xs[k]);
        let end_tangent = |h0: f64, h1: f64, s0: f64, s1: f64| -> f64 {
            let d = ((2.0 * h0 + h1) * s0 - h0 * s1) / (h0 + h1);
            if d * s0 <= 0.0 {
                0.0
            } else if s0 * s1 <= 0.0 && d.abs() > 3.0 * s0.abs() {
                3.0 * s0
            } else {
                d
            }
        };
        let tangent = |k: usize| -> f64 {
            if n == 2 {
                return slope(0);
            }
            if k == 0 {
                return end_tangent(xs[1] - xs[0], xs[2] - xs[1], slope(0), slope(1));
            }
            if k == n - 1 {
                return end_tangent(
                    xs[n - 1] - xs[n - 2],
                    xs[n - 2] - xs[n - 3],
                    slope(n - 2),
                    slope(n - 3),
                );
            }
            let (s0, s1) = (slope(k - 1), slope(k));
            if s0 * s1 <= 0.0 {
                return 0.0;
            }
            let (h0, h1) = (xs[k] - xs[k - 1], xs[k + 1] - xs[k]);
            let w1 = 2.0 * h1 + h0;
            let w2 = h1 + 2.0 * h0;
            (w1 + w2) / (w1 / s0 + w2 / s1)
        };
        let h = xs[i + 1] - xs[i];
        let t = (p - xs[i]) / h;
        let (m0, m1) = (tangent(i), tangent(i + 1));
        let h00 = (1.0 + 2.0 * t) * (1.0 - t) * (1.0 - t);
        let h10 = t * (1.0 - t) * (1.0 - t);
        let h01 = t * t * (3.0 - 2.0 * t);
        let h11 = t * t * (t - 1.0);
        Ok(h00 * ys[i] + h10 * h * m0 + h01 * ys[i + 1] + h11 * h * m1)
    }

    /// Writes `p,gamma_p,method,slack`; slack comes from a verification report when given.
    pub fn write_csv<W: Write>(&self, out: W, report: Option<&PovznerReport>) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["p", "gamma_p", "method", "slack"])?;
        for (&p, &g) in self.orders.iter().zip(&self.gamma) {
            let slack = report
                .and_then(|r| r.per_order.iter().find(|o| o.order == p))
                .and_then(|o| o.worst_slack)
                .map(|s| format!("{s:.6e}"))
                .unwrap_or_default();
            w.write_record([format!("{p}"), format!("{g:.12e}"), self.method.as_str().into(), slack])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Geometry of a collision configuration, reduced to what the angular
/// integrand depends on (all lengths scaled by `|v|² + |v*|²`).
#[derive(Debug, Clone, Copy)]
struct Config {
    /// `2h / E` with `h = |v - v*| / 2`.
    scale: f64,
    c_par: f64,
    c_perp: f64,
}

impl Config {
    fn from_velocities(v: &[f64], v_star: &[f64]) -> Option<Self> {
        let e: f64 = v.iter().chain(v_star).map(|x| x * x).sum();
        if e == 0.0 {
            return None;
        }
        let u: Vec<f64> = v.iter().zip(v_star).map(|(a, b)| a - b).collect();
        let c: Vec<f64> = v.iter().zip(v_star).map(|(a, b)| 0.5 * (a + b)).collect();
        let g = u.iter().map(|x| x * x).sum::<f64>().sqrt();
        if g == 0.0 {
            return Some(Config {
                scale: 0.0,
                c_par: 0.0,
                c_perp: 0.0,
            });
        }
        let c_par: f64 = c.iter().zip(&u).map(|(a, b)| a * b).sum::<f64>() / g;
        let c2: f64 = c.iter().map(|x| x * x).sum();
        let c_perp = (c2 - c_par * c_par).max(0.0).sqrt();
        Some(Config {
            scale: g / e,
            c_par,
            c_perp,
        })
    }

    /// Reduced family: `v = (√(1-r²), 0)`, `v* = r (cos φ, sin φ)`.
    fn reduced(r: f64, phi: f64) -> Self {
        let a = (1.0 - r * r).max(0.0).sqrt();
        let v = [a, 0.0];
        let w = [r * phi.cos(), r * phi.sin()];
        Config::from_velocities(&v, &w).expect("nonzero by construction")
    }
}

/// Evaluates `x^{p_k}` for an ascending order list, using a running product
/// when the orders are equally spaced.
#[derive(Debug, Clone)]
struct OrderLadder {
    orders: Vec<f64>,
    uniform_step: Option<f64>,
}

impl OrderLadder {
    fn new(orders: &[f64]) -> Self {
        let uniform_step = if orders.len() >= 2 {
            let step = orders[1] - orders[0];
            let uniform = orders
                .windows(2)
                .all(|w| ((w[1] - w[0]) - step).abs() < 1e-12 * step.max(1.0));
            uniform.then_some(step)
        } else {
            None
        };
        OrderLadder {
            orders: orders.to_vec(),
            uniform_step,
        }
    }

    #[inline]
    fn accumulate(&self, x: f64, weight: f64, acc: &mut [f64]) {
        if x <= 0.0 {
            return;
        }
        match self.uniform_step {
            Some(step) => {
                let mut pw = x.powf(self.orders[0]);
                let mult = if step == 1.0 { x } else { x.powf(step) };
                for a in acc.iter_mut() {
                    *a += weight * pw;
                    pw *= mult;
                }
            }
            None => {
                let lx = x.ln();
                for (a, &p) in acc.iter_mut().zip(&self.orders) {
                    *a += weight * (p * lx).exp();
                }
            }
        }
    }
}

/// Precomputed angular quadrature for a kernel.
#[derive(Debug, Clone)]
pub struct AngularQuadrature {
    polar: Rule,
    transverse: Rule,
}

impl AngularQuadrature {
    pub fn new(kernel: &AngularKernel) -> Self {
        let d = kernel.dimension();
        let transverse = match d {
            2 => Rule {
                nodes: vec![-1.0, 1.0],
                weights: vec![0.5, 0.5],
            },
            3 => quadrature::gauss_chebyshev(AZIMUTHAL_NODES).normalized(),
            _ => {
                let e = (d as f64 - 4.0) / 2.0;
                quadrature::gauss_jacobi(AZIMUTHAL_NODES, e, e).normalized()
            }
        };
        AngularQuadrature {
            polar: kernel.polar_rule().clone(),
            transverse,
        }
    }

    /// `G_p` for each order of `ladder`, normalised by the quadrature's own
    /// angular mass so that `G_1 = 1` to rounding.
    fn averages(&self, cfg: Config, ladder: &OrderLadder) -> Vec<f64> {
        let mut acc = vec![0.0; ladder.orders.len()];
        let axisymmetric = cfg.c_perp * cfg.scale == 0.0;
        for (&z, &wz) in self.polar.nodes.iter().zip(&self.polar.weights) {
            let s = (1.0 - z * z).max(0.0).sqrt();
            let base = cfg.scale * cfg.c_par * z;
            if axisymmetric {
                ladder.accumulate(0.5 + base, wz, &mut acc);
                ladder.accumulate(0.5 - base, wz, &mut acc);
                continue;
            }
            let tr = cfg.scale * cfg.c_perp * s;
            for (&t, &wt) in self.transverse.nodes.iter().zip(&self.transverse.weights) {
                let shift = base + tr * t;
                let w = wz * wt;
                ladder.accumulate(0.5 + shift, w, &mut acc);
                ladder.accumulate(0.5 - shift, w, &mut acc);
            }
        }
        acc
    }
}

/// `G_p(v, v*) = ∫ (|v'|^{2p} + |v'*|^{2p}) b dσ / (|v|² + |v*|²)^p`.
pub fn angular_average(kernel: &AngularKernel, v: &[f64], v_star: &[f64], p: f64) -> Result<f64> {
    let quad = AngularQuadrature::new(kernel);
    angular_average_with(&quad, v, v_star, p)
}

/// [`angular_average`] reusing a precomputed quadrature.
pub fn angular_average_with(quad: &AngularQuadrature, v: &[f64], v_star: &[f64], p: f64) -> Result<f64> {
    if !(p >= 1.0) {
        return Err(invalid("p", format!("order {p} < 1")));
    }
    let cfg = Config::from_velocities(v, v_star)
        .ok_or_else(|| invalid("v", "both velocities are zero"))?;
    Ok(quad.averages(cfg, &OrderLadder::new(&[p]))[0])
}

/// Sup-search for `γ_p` over the reduced configuration family.
pub fn gamma_table(kernel: &AngularKernel, orders: &[f64], search_budget: usize) -> Result<GammaTable> {
    if orders.is_empty() {
        return Err(invalid("orders", "empty order list"));
    }
    if orders.windows(2).any(|w| w[1] <= w[0]) || orders[0] < 1.0 {
        return Err(invalid("orders", "orders must be ascending and ≥ 1"));
    }
    const LEVELS: usize = 3;
    const SUB: usize = 5;
    let refine_cost = orders.len() * LEVELS * SUB * SUB;
    let side = (((search_budget.saturating_sub(refine_cost)) as f64).sqrt() as usize).clamp(8, 64);

    let quad = AngularQuadrature::new(kernel);
    let ladder = OrderLadder::new(orders);
    let r_max = FRAC_1_SQRT_2;
    let dr = r_max / (side - 1) as f64;
    let dphi = PI / (side - 1) as f64;
    let grid: Vec<(f64, f64)> = (0..side)
        .flat_map(|i| (0..side).map(move |j| (i as f64 * dr, j as f64 * dphi)))
        .collect();
    let values: Vec<Vec<f64>> = grid
        .par_iter()
        .map(|&(r, phi)| quad.averages(Config::reduced(r, phi), &ladder))
        .collect();

    let gamma: Vec<f64> = (0..orders.len())
        .into_par_iter()
        .map(|k| {
            let (mut best, mut at) = (f64::NEG_INFINITY, (0.0, 0.0));
            for (vals, &pt) in values.iter().zip(&grid) {
                if vals[k] > best {
                    best = vals[k];
                    at = pt;
                }
            }
            let single = OrderLadder::new(&orders[k..=k]);
            let (mut hr, mut hphi) = (dr, dphi);
            for _ in 0..LEVELS {
                let (cr, cphi) = at;
                for a in 0..SUB {
                    for b in 0..SUB {
                        let r = (cr - hr + 2.0 * hr * a as f64 / (SUB - 1) as f64).clamp(0.0, r_max);
                        let phi = (cphi - hphi + 2.0 * hphi * b as f64 / (SUB - 1) as f64).clamp(0.0, PI);
                        let val = quad.averages(Config::reduced(r, phi), &single)[0];
                        if val > best {
                            best = val;
                            at = (r, phi);
                        }
                    }
                }
                hr *= 0.5;
                hphi *= 0.5;
            }
            best
        })
        .collect();

    let table = GammaTable {
        orders: orders.to_vec(),
        gamma,
        method: GammaMethod::SupSearch,
        kernel_id: kernel.id(),
        tolerance: 1e-6,
    };
    table.check_invariants()?;
    Ok(table)
}

/// Checks that `z ↦ b(z) + b(-z)` is nondecreasing on `[0, 1)`.
pub fn symmetrization_is_monotone(kernel: &AngularKernel) -> bool {
    let n = 2000;
    let mut prev = f64::NEG_INFINITY;
    for i in 0..n {
        let z = (i as f64 / n as f64).min(1.0 - 1e-9);
        let v = kernel.b(z) + kernel.b(-z);
        if v < prev * (1.0 - 1e-12) {
            return false;
        }
        prev = v;
    }
    true
}

/// `2|S^{d-2}| ∫ b(z) ((1+z)/2)^p (1-z²)^{(d-3)/2} dz`, calibrated so that the
/// value at `p = 1` is one for symmetric `b`. A relative cross-check only.
pub fn gamma_symmetric_formula(kernel: &AngularKernel, p: f64) -> Result<f64> {
    if !(p >= 1.0) {
        return Err(invalid("p", format!("order {p} < 1")));
    }
    if !symmetrization_is_monotone(kernel) {
        return Err(Error::Kernel(
            "symmetrised angular function is not nondecreasing on [0, 1]".into(),
        ));
    }
    let rule = kernel.polar_rule();
    Ok(2.0 * rule.integrate(|z| ((1.0 + z) / 2.0).powf(p)))
}

/// Table built from [`gamma_symmetric_formula`].
pub fn gamma_symmetric_table(kernel: &AngularKernel, orders: &[f64]) -> Result<GammaTable> {
    let gamma = orders
        .iter()
        .map(|&p| gamma_symmetric_formula(kernel, p))
        .collect::<Result<Vec<_>>>()?;
    Ok(GammaTable {
        orders: orders.to_vec(),
        gamma,
        method: GammaMethod::SymmetricFormula,
        kernel_id: kernel.id(),
        tolerance: 1e-6,
    })
}

/// `min{1, 16π b* / (p + 1)}` for bounded `b`.
pub fn bounded_kernel_envelope(kernel: &AngularKernel, p: f64) -> Option<f64> {
    kernel.b_sup().map(|b| (16.0 * PI * b / (p + 1.0)).min(1.0))
}

/// Polynomial decay envelope `min{1, C p^{-1/q'}}` fitted to a table.
#[derive(Debug, Clone, Serialize)]
pub struct DecayFit {
    pub q: f64,
    pub q_dual: f64,
    pub constant: f64,
    /// `true` when the fitted envelope is nonincreasing and dominates every row.
    pub envelope_ok: bool,
}

pub fn fit_decay_envelope(table: &GammaTable, q: f64) -> DecayFit {
    let q_dual = if q.is_infinite() { 1.0 } else { q / (q - 1.0) };
    let constant = table
        .orders
        .iter()
        .zip(&table.gamma)
        .filter(|(&p, _)| p > 1.0)
        .map(|(&p, &g)| g * p.powf(1.0 / q_dual))
        .fold(0.0, f64::max);
    let env = |p: f64| (constant * p.powf(-1.0 / q_dual)).min(1.0);
    let dominates = table
        .orders
        .iter()
        .zip(&table.gamma)
        .filter(|(&p, _)| p > 1.0)
        .all(|(&p, &g)| g <= env(p) * (1.0 + 1e-12));
    let nonincreasing = table.orders.windows(2).all(|w| env(w[1]) <= env(w[0]));
    DecayFit {
        q,
        q_dual,
        constant,
        envelope_ok: dominates && nonincreasing,
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct OrderSlack {
    pub order: f64,
    pub trials: usize,
    /// `min (γ_p - G_p) / γ_p` over the trials of this order.
    pub worst_slack: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct PovznerReport {
    pub trials: usize,
    pub tolerance: f64,
    pub per_order: Vec<OrderSlack>,
    pub failing_orders: Vec<f64>,
    pub passed: bool,
}

impl PovznerReport {
    pub fn worst_slack(&self) -> f64 {
        self.per_order
            .iter()
            .filter_map(|o| o.worst_slack)
            .fold(f64::INFINITY, f64::min)
    }
}

/// Random-configuration check of the angular averaging inequality against a table.
pub fn verify_povzner<R: Rng + ?Sized>(
    kernel: &AngularKernel,
    table: &GammaTable,
    trials: usize,
    tolerance: f64,
    rng: &mut R,
) -> PovznerReport {
    let quad = AngularQuadrature::new(kernel);
    let d = kernel.dimension();
    let mut per_order: Vec<OrderSlack> = table
        .orders
        .iter()
        .map(|&order| OrderSlack {
            order,
            trials: 0,
            worst_slack: None,
        })
        .collect();
    for _ in 0..trials {
        let k = rng.gen_range(0..table.orders.len());
        let scale_a = (0.7 * rng.sample::<f64, _>(StandardNormal)).exp();
        let scale_b = (0.7 * rng.sample::<f64, _>(StandardNormal)).exp();
        let v: Vec<f64> = (0..d).map(|_| scale_a * rng.sample::<f64, _>(StandardNormal)).collect();
        let w: Vec<f64> = (0..d).map(|_| scale_b * rng.sample::<f64, _>(StandardNormal)).collect();
        let Some(cfg) = Config::from_velocities(&v, &w) else {
            continue;
        };
        let g = quad.averages(cfg, &OrderLadder::new(&[table.orders[k]]))[0];
        let gamma = table.gamma[k];
        let slack = (gamma - g) / gamma;
        let row = &mut per_order[k];
        row.trials += 1;
        row.worst_slack = Some(row.worst_slack.map_or(slack, |s: f64| s.min(slack)));
    }
    let failing_orders: Vec<f64> = per_order
        .iter()
        .filter(|o| o.worst_slack.is_some_and(|s| s < -tolerance))
        .map(|o| o.order)
        .collect();
    PovznerReport {
        trials,
        tolerance,
        passed: failing_orders.is_empty(),
        per_order,
        failing_orders,
    }
}
