//! Comparison ODEs for the moment hierarchy and the constants of the
//! exponential-moment creation and propagation estimates.
//!
//! Every constant that can overflow a double (small-moment sums grow like
//! `2^{p²}`) is carried in log form next to its value.

use crate::error::{invalid, Error, Result};
use crate::kernel::AngularKernel;
use crate::moments::{binomial, k_p, MomentVector};
use crate::povzner::GammaTable;
use serde::Serialize;
use statrs::function::gamma::ln_gamma;
use std::io::Write;

/// Which lower bound on `∫ f(v*) |v - v*|^β dv*` feeds the dissipation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Branch {
    /// `|v - v*|^β ≥ C_β |v|^β - |v*|^β`, any `β ∈ (0, 2]`, with `K2 = 2 m_β`.
    Elementary,
    /// `∫ f0(v*) |v - v*|^β dv* ≥ C̄_β m0 (1 + |v|^β)` fitted on the initial data, `β ≤ 1`, `K2 = 0`.
    Fitted,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Creation,
    Propagation,
}

/// Threshold used to pick `p0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum P0Rule {
    /// `γ_{s p0/2} < (32 + 2^{1-β})^{-1}`.
    Elementary,
    /// `16 γ m0 ≤ K1 / 4` with `K1 = 2(1-γ) C̄ m0`.
    FittedCreation { cbar: f64 },
    /// `γ < (32 + C̄)^{-1}`, the closed form quoted next to the primitive one.
    FittedCreationQuoted { cbar: f64 },
    /// `16 γ m0 ≤ K1 / 2`.
    FittedPropagation { cbar: f64 },
}

impl P0Rule {
    fn admits(&self, gamma: f64, beta: f64) -> bool {
        match *self {
            P0Rule::Elementary => gamma < 1.0 / (32.0 + 2f64.powf(1.0 - beta)),
            P0Rule::FittedCreation { cbar } => 16.0 * gamma <= (1.0 - gamma) * cbar / 2.0,
            P0Rule::FittedCreationQuoted { cbar } => gamma < 1.0 / (32.0 + cbar),
            P0Rule::FittedPropagation { cbar } => 16.0 * gamma <= (1.0 - gamma) * cbar,
        }
    }
}

/// Smallest integer strictly above `2/s`.
pub fn min_admissible_p0(s: f64) -> usize {
    (2.0 / s).floor() as usize + 1
}

/// Smallest integer `p0 > 2/s` passing `rule` at order `s p0 / 2`.
pub fn choose_p0(gamma: &GammaTable, s: f64, beta: f64, rule: P0Rule) -> Result<usize> {
    if !(s > 0.0 && s <= 2.0) {
        return Err(invalid("s", format!("{s} not in (0, 2]")));
    }
    let mut p0 = min_admissible_p0(s);
    loop {
        let order = s * p0 as f64 / 2.0;
        if order > gamma.max_order() + 1e-12 {
            return Err(Error::TableExhausted {
                max_order: gamma.max_order(),
            });
        }
        if rule.admits(gamma.at(order)?, beta) {
            return Ok(p0);
        }
        p0 += 1;
    }
}

/// `min{1, 2^{1-β}}`.
pub fn c_beta(beta: f64) -> f64 {
    2f64.powf(1.0 - beta).min(1.0)
}

/// Fitted constant in `∫ f0(v*) |v - v*|^β dv* ≥ C̄ m0 (1 + |v|^β)`.
#[derive(Debug, Clone, Serialize)]
pub struct CbarFit {
    pub value: f64,
    pub r_max: f64,
    pub radii: usize,
    pub directions: usize,
    pub argmin_r: f64,
}

/// Weighted mean of `|v - v_i|^β` over an equal-weight sample (`d` columns).
pub fn sample_convolution(velocities: &[f64], d: usize, v: &[f64], beta: f64) -> f64 {
    let n = velocities.len() / d;
    let acc: crate::sum::CompensatedSum = velocities
        .chunks_exact(d)
        .map(|w| {
            let g2: f64 = w.iter().zip(v).map(|(a, b)| (a - b) * (a - b)).sum();
            if beta == 1.0 {
                g2.sqrt()
            } else {
                g2.powf(beta / 2.0)
            }
        })
        .collect();
    acc.value() / n as f64
}

/// Minimum of the convolution over `(1 + r^β)` on `r ∈ [0, 10 √(m2/m0)]`,
/// along the `2d` coordinate directions.
pub fn fit_cbar(velocities: &[f64], d: usize, beta: f64, m0: f64, m2: f64) -> Result<CbarFit> {
    if velocities.len() < 2 * d || velocities.len() % d != 0 {
        return Err(invalid("ensemble", "need at least two particles"));
    }
    const RADII: usize = 64;
    let r_max = 10.0 * (m2 / m0).sqrt();
    let mut best = (f64::INFINITY, 0.0);
    for i in 0..RADII {
        let r = r_max * i as f64 / (RADII - 1) as f64;
        for axis in 0..d {
            for sign in [1.0, -1.0] {
                let mut v = vec![0.0; d];
                v[axis] = sign * r;
                let ratio = sample_convolution(velocities, d, &v, beta) / (1.0 + r.powf(beta));
                if ratio < best.0 {
                    best = (ratio, r);
                }
            }
            if i == 0 {
                break;
            }
        }
    }
    Ok(CbarFit {
        value: best.0,
        r_max,
        radii: RADII,
        directions: 2 * d,
        argmin_r: best.1,
    })
}

/// What the caller knows about the data when building the proof constants.
#[derive(Debug, Clone)]
pub struct ParamRequest<'a> {
    pub s: f64,
    pub m0: f64,
    pub m2: f64,
    pub branch: Branch,
    pub mode: Mode,
    /// Initial velocities (row-major, `d` columns) for the fitted branch.
    pub ensemble0: Option<&'a [f64]>,
    /// Hypothesis `∫ f0 exp(a0 |v|^s) ≤ C0` for propagation.
    pub a0: f64,
    pub c0: f64,
}

/// Coefficients of the scalar comparison ODE `m' = C' m - K m^{1+γ}`.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct ScalarCoefficients {
    pub p: f64,
    pub c_prime: f64,
    pub k: f64,
    /// `β / (sp)`.
    pub exponent: f64,
    /// Log-convexity constant `2 Σ_{k ≤ k_p} C(p,k)` in `S_{s,p} ≤ C_S m_β m_{sp}`.
    pub c_s: f64,
    pub k1: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct HierarchyParams {
    pub d: usize,
    pub s: f64,
    pub beta: f64,
    pub mode: Mode,
    pub branch: Branch,
    pub p0: usize,
    /// `p0` from the quoted closed-form threshold, logged next to `p0` on the fitted creation branch.
    pub p0_quoted: Option<usize>,
    pub gamma_p0: f64,
    pub k1: f64,
    pub k2: f64,
    pub k3: f64,
    pub c_beta: f64,
    pub cbar_beta: Option<f64>,
    pub cbar_fit: Option<CbarFit>,
    #[serde(skip)]
    pub gamma: GammaTable,
    pub m0: f64,
    pub m2: f64,
    pub m_beta: f64,
    pub a: f64,
    pub a0: f64,
    pub c0: f64,
    pub t_final: f64,
    /// Ceiling `C` on the truncated exponential moment.
    pub c_bound: f64,
    pub c_p0: f64,
    pub ln_c_p0: f64,
    pub c_prime: f64,
    pub k_holder: f64,
    pub diagnostics: Vec<String>,
}

fn log_sum_exp(xs: &[f64]) -> f64 {
    let hi = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !hi.is_finite() {
        return hi;
    }
    hi + xs.iter().map(|x| (x - hi).exp()).sum::<f64>().ln()
}

impl HierarchyParams {
    /// Lower constant multiplying `m0 |v|^β` in the dissipation.
    fn lower_constant(&self) -> f64 {
        match self.branch {
            Branch::Elementary => self.c_beta,
            Branch::Fitted => self.cbar_beta.unwrap_or(self.c_beta),
        }
    }

    /// `K1` evaluated with `γ_{sp/2}`; `None` when `sp ≤ 2`.
    pub fn k1_at(&self, p: f64) -> Result<Option<f64>> {
        let order = self.s * p / 2.0;
        if order <= 1.0 + 1e-12 {
            return Ok(None);
        }
        let g = self.gamma.at(order)?;
        Ok(Some(2.0 * (1.0 - g) * self.lower_constant() * self.m0))
    }

    /// Scalar ODE coefficients at order `sp`; rejects `K ≤ 0`.
    pub fn scalar_coefficients(&self, p: f64) -> Result<ScalarCoefficients> {
        let k1 = self
            .k1_at(p)?
            .filter(|k| *k > 0.0)
            .ok_or_else(|| invalid("K", format!("non-positive dissipation at p = {p} (need sp > 2)")))?;
        let g = self.gamma.at(self.s * p / 2.0)?;
        let c_s = 2.0 * (1..=k_p(p)).map(|k| binomial(p, k)).sum::<f64>();
        let exponent = self.beta / (self.s * p);
        Ok(ScalarCoefficients {
            p,
            c_prime: 2.0 * g * c_s * self.m_beta + self.k2,
            k: k1 * self.m0.powf(-exponent),
            exponent,
            c_s,
            k1,
        })
    }

    /// `m0^{1 - sp/2} m2^{sp/2}`, valid for `sp ≤ 2`.
    pub fn interpolation_bound(&self, p: f64) -> f64 {
        let q = self.s * p / 2.0;
        self.m0.powf(1.0 - q) * self.m2.powf(q)
    }

    /// Writes `name,value` rows for every scalar field.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["name", "value"])?;
        let opt = |x: Option<f64>| x.map(|v| format!("{v:e}")).unwrap_or_default();
        let rows: Vec<(&str, String)> = vec![
            ("d", self.d.to_string()),
            ("s", format!("{}", self.s)),
            ("beta", format!("{}", self.beta)),
            ("mode", format!("{:?}", self.mode).to_lowercase()),
            ("branch", format!("{:?}", self.branch).to_lowercase()),
            ("p0", self.p0.to_string()),
            ("p0_quoted", self.p0_quoted.map(|p| p.to_string()).unwrap_or_default()),
            ("gamma_p0", format!("{:e}", self.gamma_p0)),
            ("gamma_method", self.gamma.method.as_str().to_string()),
            ("gamma_kernel", self.gamma.kernel_id.clone()),
            ("K1", format!("{:e}", self.k1)),
            ("K2", format!("{:e}", self.k2)),
            ("K3", format!("{:e}", self.k3)),
            ("C_beta", format!("{:e}", self.c_beta)),
            ("Cbar_beta", opt(self.cbar_beta)),
            ("m0", format!("{:e}", self.m0)),
            ("m2", format!("{:e}", self.m2)),
            ("m_beta", format!("{:e}", self.m_beta)),
            ("a", format!("{:e}", self.a)),
            ("a0", format!("{:e}", self.a0)),
            ("C0", format!("{:e}", self.c0)),
            ("T", format!("{:e}", self.t_final)),
            ("C", format!("{:e}", self.c_bound)),
            ("C_p0", format!("{:e}", self.c_p0)),
            ("ln_C_p0", format!("{:e}", self.ln_c_p0)),
            ("C_prime", format!("{:e}", self.c_prime)),
            ("K_holder", format!("{:e}", self.k_holder)),
        ];
        for (k, v) in rows {
            w.write_record([k, v.as_str()])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Fills every field of [`HierarchyParams`], including `(a, T, C)` for the mode.
pub fn build_params(kernel: &AngularKernel, gamma: &GammaTable, req: &ParamRequest) -> Result<HierarchyParams> {
    let beta = kernel.beta();
    let s = req.s;
    if !(req.m0 > 0.0 && req.m2 > 0.0) {
        return Err(invalid("m0, m2", "mass and energy must be positive"));
    }
    if !(beta > 0.0) {
        return Err(invalid("beta", "the moment theory needs beta > 0"));
    }
    if !(s > 0.0 && s <= 2.0) {
        return Err(invalid("s", format!("{s} not in (0, 2]")));
    }
    if req.mode == Mode::Creation && (s - beta).abs() > 1e-12 {
        return Err(invalid("s", "creation requires s = beta"));
    }
    if beta > s + 1e-12 {
        return Err(invalid("beta", "beta must not exceed s"));
    }
    let d = kernel.dimension();
    let mut diagnostics = Vec::new();
    let cbar_fit = match req.branch {
        Branch::Elementary => None,
        Branch::Fitted => {
            if beta > 1.0 {
                return Err(invalid("branch", "the fitted lower bound needs beta <= 1"));
            }
            let vel = req
                .ensemble0
                .ok_or_else(|| invalid("ensemble0", "the fitted branch needs initial data"))?;
            Some(fit_cbar(vel, d, beta, req.m0, req.m2)?)
        }
    };
    let cbar = cbar_fit.as_ref().map(|f| f.value / req.m0);
    let rule = match (req.branch, req.mode) {
        (Branch::Elementary, _) => P0Rule::Elementary,
        (Branch::Fitted, Mode::Creation) => P0Rule::FittedCreation { cbar: cbar.unwrap() },
        (Branch::Fitted, Mode::Propagation) => P0Rule::FittedPropagation { cbar: cbar.unwrap() },
    };
    let p0 = choose_p0(gamma, s, beta, rule)?;
    let p0_quoted = match (req.branch, req.mode) {
        (Branch::Fitted, Mode::Creation) => {
            choose_p0(gamma, s, beta, P0Rule::FittedCreationQuoted { cbar: cbar.unwrap() }).ok()
        }
        _ => None,
    };
    let gamma_p0 = gamma.at(s * p0 as f64 / 2.0)?;
    let m_beta = req.m0.powf(1.0 - beta / 2.0) * req.m2.powf(beta / 2.0);
    let cb = c_beta(beta);
    let k1 = 2.0 * (1.0 - gamma_p0) * cbar.unwrap_or(cb) * req.m0;
    let k2 = if req.branch == Branch::Elementary { 2.0 * m_beta } else { 0.0 };
    let mut params = HierarchyParams {
        d,
        s,
        beta,
        mode: req.mode,
        branch: req.branch,
        p0,
        p0_quoted,
        gamma_p0,
        k1,
        k2,
        k3: 4.0 * k2 * req.m0,
        c_beta: cb,
        cbar_beta: cbar,
        cbar_fit,
        gamma: gamma.clone(),
        m0: req.m0,
        m2: req.m2,
        m_beta,
        a: 0.0,
        a0: req.a0,
        c0: req.c0,
        t_final: 1.0,
        c_bound: 0.0,
        c_p0: 0.0,
        ln_c_p0: 0.0,
        c_prime: 0.0,
        k_holder: 0.0,
        diagnostics: Vec::new(),
    };
    let at_p0 = params.scalar_coefficients(p0 as f64)?;
    params.k_holder = at_p0.k;
    match req.mode {
        Mode::Creation => {
            params.c_prime = at_p0.c_prime;
            let ln = small_moment_constant_creation(&params)?;
            params.ln_c_p0 = ln;
            params.c_p0 = ln.exp();
            let cc = creation_constants_ln(&params, ln);
            params.a = cc.a;
            params.t_final = cc.t_final;
            params.c_bound = cc.c;
        }
        Mode::Propagation => {
            if !(req.a0 > 0.0 && req.c0 > 0.0) {
                return Err(invalid("a0, C0", "propagation needs the exponential-moment hypothesis"));
            }
            let mut c_prime: f64 = 0.0;
            for p in 1..p0 {
                if s * p as f64 > 2.0 {
                    c_prime = c_prime.max(params.scalar_coefficients(p as f64)?.c_prime);
                }
            }
            params.c_prime = c_prime;
            let ln = small_moment_constant_propagation(&params)?;
            params.ln_c_p0 = ln;
            params.c_p0 = ln.exp();
            let pc = propagation_constants(&params, params.c_p0);
            if let Some(msg) = &pc.diagnostic {
                diagnostics.push(msg.clone());
            }
            params.a = pc.a;
            params.t_final = f64::INFINITY;
            params.c_bound = pc.c;
        }
    }
    if params.a == 0.0 || params.a < 1e-100 {
        diagnostics.push(format!(
            "a = {:e}: ln C_p0 = {:.3e} makes the admissible coefficient vanish in double precision",
            params.a, params.ln_c_p0
        ));
    }
    params.diagnostics = diagnostics;
    Ok(params)
}

/// `ln Σ_{p ≤ p0} sup_{t ∈ (0,1]} M_p(t) t^p` from the scalar creation envelopes.
fn small_moment_constant_creation(params: &HierarchyParams) -> Result<f64> {
    let mut terms = Vec::with_capacity(params.p0 + 1);
    for p in 0..=params.p0 {
        let pf = p as f64;
        if params.s * pf <= 2.0 {
            terms.push(params.interpolation_bound(pf).ln());
        } else {
            let c = params.scalar_coefficients(pf)?;
            terms.push(ln_creation_constant(&c));
        }
    }
    Ok(log_sum_exp(&terms))
}

/// `ln Σ_{p ≤ p0} sup_t m_{sp}(t)` with `m_{sp}(0) ≤ C0 p! / a0^p`.
fn small_moment_constant_propagation(params: &HierarchyParams) -> Result<f64> {
    let mut terms = Vec::with_capacity(params.p0 + 1);
    for p in 0..=params.p0 {
        let pf = p as f64;
        if params.s * pf <= 2.0 {
            terms.push(params.interpolation_bound(pf).ln());
        } else {
            let c = params.scalar_coefficients(pf)?;
            let ln_init = params.c0.ln() + ln_gamma(pf + 1.0) - pf * params.a0.ln();
            let ln_fixed = (c.c_prime / c.k).ln() / c.exponent;
            terms.push(ln_init.max(ln_fixed));
        }
    }
    Ok(log_sum_exp(&terms))
}

/// `φ(x) = (1 - e^{-x}) / x`, `φ(0) = 1`.
fn phi(x: f64) -> f64 {
    if x.abs() < 1e-12 {
        1.0 - x / 2.0
    } else {
        -(-x).exp_m1() / x
    }
}

/// `ln C_{sp} = -(1/γ) ln(γ K φ(γ C'))`, the creation constant at `t = 1`.
pub fn ln_creation_constant(c: &ScalarCoefficients) -> f64 {
    let g = c.exponent;
    -(g * c.k * phi(g * c.c_prime)).ln() / g
}

/// Initial value for the scalar comparison ODE.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum InitialMoment {
    /// `m(0+) = +∞`, resolved analytically.
    Infinite,
    Finite(f64),
}

/// Exact Bernoulli solution of `m' = C' m - K m^{1+γ}` at time `t`, via
/// `u = m^{-γ}`, `u(t) = u0 e^{-γC't} + γ K t φ(γ C' t)`.
pub fn bernoulli_solution(c_prime: f64, k: f64, gamma: f64, init: InitialMoment, t: f64) -> f64 {
    let u0 = match init {
        InitialMoment::Infinite => 0.0,
        InitialMoment::Finite(m) => m.powf(-gamma),
    };
    let x = gamma * c_prime * t;
    let u = u0 * (-x).exp() + gamma * k * t * phi(x);
    u.powf(-1.0 / gamma)
}

#[derive(Debug, Clone, Serialize)]
pub struct ScalarEnvelope {
    pub p: f64,
    pub coefficients: ScalarCoefficients,
    pub init: InitialMoment,
    pub times: Vec<f64>,
    pub values: Vec<f64>,
    /// Creation: `sup_{t ∈ (0,1]} m(t) min{1, t^{sp/β}}`; propagation: `max{m_init, (C'/K)^{1/γ}}`.
    pub c_sp: f64,
    pub ln_c_sp: f64,
}

pub fn scalar_upper_solution(
    p: f64,
    params: &HierarchyParams,
    init: InitialMoment,
    t_grid: &[f64],
) -> Result<ScalarEnvelope> {
    let c = params.scalar_coefficients(p)?;
    scalar_envelope_from(c, init, t_grid)
}

/// [`scalar_upper_solution`] for explicit coefficients.
pub fn scalar_envelope_from(c: ScalarCoefficients, init: InitialMoment, t_grid: &[f64]) -> Result<ScalarEnvelope> {
    if !(c.k > 0.0) {
        return Err(invalid("K", "must be positive"));
    }
    if let InitialMoment::Finite(m) = init {
        if !(m >= 0.0) {
            return Err(invalid("m_init", "must be nonnegative"));
        }
    }
    let values = t_grid
        .iter()
        .map(|&t| {
            if t == 0.0 {
                match init {
                    InitialMoment::Infinite => f64::INFINITY,
                    InitialMoment::Finite(m) => m,
                }
            } else {
                bernoulli_solution(c.c_prime, c.k, c.exponent, init, t)
            }
        })
        .collect();
    let ln_c_sp = match init {
        InitialMoment::Infinite => ln_creation_constant(&c),
        InitialMoment::Finite(m) => m.ln().max((c.c_prime / c.k).ln() / c.exponent),
    };
    Ok(ScalarEnvelope {
        p: c.p,
        coefficients: c,
        init,
        times: t_grid.to_vec(),
        values,
        c_sp: ln_c_sp.exp(),
        ln_c_sp,
    })
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct CreationConstants {
    pub a: f64,
    pub t_final: f64,
    pub c: f64,
}

/// `a = min{1, K1/2, m0/(6 C_p0)}`, `T` and the ceiling `C` for the branch.
pub fn creation_constants(params: &HierarchyParams, c_p0: f64) -> CreationConstants {
    creation_constants_ln(params, c_p0.ln())
}

fn creation_constants_ln(params: &HierarchyParams, ln_c_p0: f64) -> CreationConstants {
    let m0 = params.m0;
    let small = (m0.ln() - 6f64.ln() - ln_c_p0).exp();
    let a = 1f64.min(params.k1 / 2.0).min(small);
    let (t_final, c) = match params.branch {
        Branch::Fitted => (1.0, 19.0 / 6.0 * m0),
        Branch::Elementary => {
            let t = if params.k3 > 0.0 { 1f64.min(m0 / (2.0 * params.k3)) } else { 1.0 };
            (t, 19.0 / 6.0 * m0 + params.k3 * t)
        }
    };
    CreationConstants { a, t_final, c }
}

#[derive(Debug, Clone, Serialize)]
pub struct PropagationConstants {
    pub a: f64,
    pub c: f64,
    pub diagnostic: Option<String>,
}

/// Largest `a` (bisection) meeting every propagation restriction, with
/// `e^a` replaced by `e`; `C = 4 m0`.
pub fn propagation_constants(params: &HierarchyParams, c_sp0: f64) -> PropagationConstants {
    let (m0, k1, k2, cp) = (params.m0, params.k1, params.k2, params.c_prime);
    let e = std::f64::consts::E;
    let (cap, ok): (f64, Box<dyn Fn(f64) -> bool>) = match params.branch {
        Branch::Fitted => (
            1f64.min(params.a0).min(k1 / 2.0),
            Box::new(move |a| m0 + 2.0 * a * ((1.0 + cp / k1) * c_sp0 + e) < 4.0 * m0),
        ),
        Branch::Elementary => (
            1f64.min(params.a0).min(if k2 > 0.0 { k1 / (8.0 * k2) } else { f64::INFINITY }),
            Box::new(move |a| 2.0 * m0 + 4.0 * a * ((1.0 + k2 / k1 + cp / k1) * c_sp0 + e) < 4.0 * m0),
        ),
    };
    let c = 4.0 * m0;
    if !(cap > 0.0) || !c_sp0.is_finite() || !ok(cap * 1e-300) {
        return PropagationConstants {
            a: 0.0,
            c,
            diagnostic: Some(format!(
                "no positive a: C_sp0 = {c_sp0:e} leaves no room below the 4 m0 ceiling"
            )),
        };
    }
    if ok(cap) {
        return PropagationConstants { a: cap, c, diagnostic: None };
    }
    let (mut lo, mut hi) = (0.0, cap);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if ok(mid) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    PropagationConstants { a: lo, c, diagnostic: None }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Scalar,
    Hierarchy,
}

#[derive(Debug, Clone, Serialize)]
pub struct EnvelopeTrajectory {
    pub s: f64,
    pub p0: usize,
    pub t_grid: Vec<f64>,
    /// `values[i][p]` is `M_p(t_i)`, `p = 0..=n`.
    pub values: Vec<Vec<f64>>,
    pub provenance: Provenance,
}

impl EnvelopeTrajectory {
    pub fn n(&self) -> usize {
        self.values.first().map_or(0, |v| v.len().saturating_sub(1))
    }

    /// Rows `t,p,M_p`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["t", "p", "M_p"])?;
        for (t, row) in self.t_grid.iter().zip(&self.values) {
            for (p, m) in row.iter().enumerate() {
                w.write_record([format!("{t}"), p.to_string(), format!("{m:.12e}")])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Starting data for [`integrate_hierarchy`].
#[derive(Debug, Clone)]
pub enum HierarchyStart {
    Moments(MomentVector),
    /// Only mass and energy finite: start at [`CREATION_START`] from the scalar envelopes.
    FromEnergy,
}

pub const CREATION_START: f64 = 1e-6;

/// The coupled upper system for orders `p0..=n` with `β = s`.
pub struct HierarchySystem {
    n: usize,
    p0: usize,
    low: Vec<f64>,
    gain: Vec<f64>,
    k: Vec<f64>,
    k2: f64,
    binom: Vec<Vec<f64>>,
}

impl HierarchySystem {
    pub fn new(params: &HierarchyParams, n: usize) -> Result<Self> {
        if (params.s - params.beta).abs() > 1e-12 {
            return Err(invalid("beta", "the coupled envelope needs beta = s"));
        }
        let p0 = min_admissible_p0(params.s);
        if n < p0 {
            return Err(invalid("n", format!("n = {n} below p0 = {p0}")));
        }
        let low = (0..p0).map(|p| params.interpolation_bound(p as f64)).collect();
        let mut gain = vec![0.0; n + 1];
        let mut k = vec![0.0; n + 1];
        let mut binom = vec![Vec::new(); n + 1];
        for p in p0..=n {
            let c = params.scalar_coefficients(p as f64)?;
            gain[p] = 2.0 * params.gamma.at(params.s * p as f64 / 2.0)?;
            k[p] = c.k;
            binom[p] = (0..=k_p(p as f64)).map(|j| binomial(p as f64, j)).collect();
        }
        Ok(HierarchySystem {
            n,
            p0,
            low,
            gain,
            k,
            k2: params.k2,
            binom,
        })
    }

    pub fn p0(&self) -> usize {
        self.p0
    }

    /// Full order vector `M_0..M_n` from the coupled unknowns.
    fn assemble(&self, y: &[f64], out: &mut Vec<f64>) {
        out.clear();
        out.extend_from_slice(&self.low);
        out.extend_from_slice(y);
    }

    /// `dM_p/dt` for the coupled orders, given the full vector.
    pub fn rhs_full(&self, m: &[f64], out: &mut [f64]) {
        for p in self.p0..=self.n {
            let mut s = 0.0;
            for (j, &c) in self.binom[p].iter().enumerate().skip(1) {
                s += c * (m[j + 1] * m[p - j] + m[j] * m[p - j + 1]);
            }
            let mp = m[p];
            let loss = self.k[p] * mp * mp.powf(1.0 / p as f64);
            out[p - self.p0] = self.gain[p] * s - loss + self.k2 * mp;
        }
    }
}

const DP_A: [[f64; 6]; 7] = [
    [0.0; 6],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
const DP_B: [f64; 7] = [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0, 0.0];
const DP_E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];

/// Adaptive Dormand–Prince integration of the coupled unknowns from `t0` to `t1`.
fn advance(sys: &HierarchySystem, y: &mut Vec<f64>, t0: f64, t1: f64, h: &mut f64) -> Result<()> {
    const RTOL: f64 = 1e-9;
    let dim = y.len();
    let mut t = t0;
    let mut full = Vec::with_capacity(sys.n + 1);
    let mut k = vec![vec![0.0; dim]; 7];
    let mut stage = vec![0.0; dim];
    let mut y_new = vec![0.0; dim];
    let eval = |state: &[f64], out: &mut [f64], full: &mut Vec<f64>| {
        sys.assemble(state, full);
        sys.rhs_full(full, out);
    };
    while t < t1 {
        let step = h.min(t1 - t);
        if !(step > 1e-14 * t.max(1e-12)) {
            return Err(Error::BlowUp { time: t });
        }
        eval(y, &mut k[0], &mut full);
        for i in 1..7 {
            for j in 0..dim {
                let mut acc = y[j];
                for (l, kl) in k.iter().enumerate().take(i) {
                    acc += step * DP_A[i][l] * kl[j];
                }
                stage[j] = acc;
            }
            eval(&stage, &mut k[i], &mut full);
        }
        let mut err: f64 = 0.0;
        let mut finite = true;
        let mut negative = false;
        for j in 0..dim {
            let mut acc = y[j];
            let mut e = 0.0;
            for l in 0..7 {
                acc += step * DP_B[l] * k[l][j];
                e += step * DP_E[l] * k[l][j];
            }
            y_new[j] = acc;
            finite &= acc.is_finite();
            negative |= acc < 0.0;
            let scale = RTOL * y[j].abs().max(acc.abs()) + 1e-300;
            err = err.max(e.abs() / scale);
        }
        if !finite {
            if step < 1e-10 * t.max(1e-12) {
                return Err(Error::BlowUp { time: t });
            }
            *h = step * 0.25;
            continue;
        }
        if negative || err > 1.0 {
            *h = step * (0.9 * err.powf(-0.2)).clamp(0.1, 0.5);
            continue;
        }
        t += step;
        y.copy_from_slice(&y_new);
        let grow = if err == 0.0 { 5.0 } else { (0.9 * err.powf(-0.2)).clamp(0.2, 5.0) };
        *h = step * grow;
    }
    Ok(())
}

/// Upper envelope of the moments `m_{sp}`, `p = 0..=n`, on `t_grid`.
pub fn integrate_hierarchy(
    params: &HierarchyParams,
    start: &HierarchyStart,
    n: usize,
    t_grid: &[f64],
) -> Result<EnvelopeTrajectory> {
    if t_grid.windows(2).any(|w| w[1] < w[0]) {
        return Err(invalid("t_grid", "times must be ascending"));
    }
    let sys = HierarchySystem::new(params, n)?;
    let p0 = sys.p0;
    let mut values = Vec::with_capacity(t_grid.len());
    let (mut y, mut t) = match start {
        HierarchyStart::Moments(mv) => {
            if mv.n + 1 < n {
                return Err(Error::OrderExceedsTruncation { p: n, n: mv.n + 1 });
            }
            (mv.m[p0..=n].to_vec(), 0.0)
        }
        HierarchyStart::FromEnergy => {
            let y = (p0..=n)
                .map(|p| {
                    let c = params.scalar_coefficients(p as f64)?;
                    Ok(bernoulli_solution(c.c_prime, c.k, c.exponent, InitialMoment::Infinite, CREATION_START))
                })
                .collect::<Result<Vec<f64>>>()?;
            (y, CREATION_START)
        }
    };
    let mut h = (t.max(1e-3)) * 1e-3;
    let mut full = Vec::new();
    for &tg in t_grid {
        if tg < t {
            // before the creation start: scalar envelopes (infinite at t = 0)
            let mut row = sys.low.clone();
            for p in p0..=n {
                let c = params.scalar_coefficients(p as f64)?;
                row.push(if tg == 0.0 {
                    f64::INFINITY
                } else {
                    bernoulli_solution(c.c_prime, c.k, c.exponent, InitialMoment::Infinite, tg)
                });
            }
            values.push(row);
            continue;
        }
        advance(&sys, &mut y, t, tg, &mut h)?;
        t = tg;
        sys.assemble(&y, &mut full);
        values.push(full.clone());
    }
    Ok(EnvelopeTrajectory {
        s: params.s,
        p0,
        t_grid: t_grid.to_vec(),
        values,
        provenance: Provenance::Hierarchy,
    })
}

/// Envelope from the scalar solutions alone (any `β ≤ s`).
pub fn scalar_trajectory(
    params: &HierarchyParams,
    init: &[InitialMoment],
    t_grid: &[f64],
) -> Result<EnvelopeTrajectory> {
    let n = init.len().saturating_sub(1);
    let mut cols = Vec::with_capacity(n + 1);
    for (p, &m) in init.iter().enumerate() {
        let pf = p as f64;
        if params.s * pf <= 2.0 {
            cols.push(vec![params.interpolation_bound(pf); t_grid.len()]);
        } else {
            cols.push(scalar_upper_solution(pf, params, m, t_grid)?.values);
        }
    }
    let values = (0..t_grid.len()).map(|i| cols.iter().map(|c| c[i]).collect()).collect();
    Ok(EnvelopeTrajectory {
        s: params.s,
        p0: min_admissible_p0(params.s),
        t_grid: t_grid.to_vec(),
        values,
        provenance: Provenance::Scalar,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct MechanismReport {
    pub a: f64,
    pub p0: usize,
    pub checked: usize,
    /// Grid times where `E^n(t, at) ≥ 2 m0`.
    pub active: usize,
    pub max_derivative: f64,
    pub ceiling: f64,
    pub holds: bool,
}

/// Along a hierarchy envelope with `z = a t`: wherever `E^n ≥ 2 m0`, the
/// derivative of `Σ_{p ≥ p0} M_p (at)^p / p!` stays below `0` (fitted) or `K3`.
pub fn creation_mechanism_check(
    params: &HierarchyParams,
    traj: &EnvelopeTrajectory,
    a: f64,
    p0: usize,
) -> Result<MechanismReport> {
    let n = traj.n();
    let sys = HierarchySystem::new(params, n)?;
    let ceiling = match params.branch {
        Branch::Fitted => 0.0,
        Branch::Elementary => params.k3,
    };
    let mut report = MechanismReport {
        a,
        p0,
        checked: 0,
        active: 0,
        max_derivative: f64::NEG_INFINITY,
        ceiling,
        holds: true,
    };
    let mut dm = vec![0.0; n + 1 - sys.p0];
    for (&t, row) in traj.t_grid.iter().zip(&traj.values) {
        if t <= 0.0 || row.iter().any(|x| !x.is_finite()) {
            continue;
        }
        report.checked += 1;
        let z = a * t.min(1.0);
        let mut e = 0.0;
        let mut w = 1.0;
        for (p, &m) in row.iter().enumerate() {
            if p > 0 {
                w *= z / p as f64;
            }
            e += m * w;
        }
        if e < 2.0 * params.m0 {
            continue;
        }
        report.active += 1;
        sys.rhs_full(row, &mut dm);
        let mut deriv = 0.0;
        let mut w = 1.0;
        for p in 1..=n {
            let prev = w;
            w *= z / p as f64;
            if p < p0.max(sys.p0) {
                continue;
            }
            // d/dt [M_p (at)^p/p!] = M_p' (at)^p/p! + M_p a (at)^{p-1}/(p-1)!
            deriv += dm[p - sys.p0] * w + row[p] * a * prev;
        }
        report.max_derivative = report.max_derivative.max(deriv);
        if deriv > ceiling {
            report.holds = false;
        }
    }
    Ok(report)
}

#[derive(Debug, Clone, Serialize)]
pub struct RateCheck {
    pub alpha: f64,
    pub times: Vec<f64>,
    /// Largest coefficient `a` with `a t^α ≤ C t`, i.e. `C t^{1-α}`.
    pub admissible: Vec<f64>,
    pub infimum: f64,
}

/// For `∂_t f = -C (1 + |v|^β) f`, `f(t) = f0 e^{-Ct(1+|v|^β)}`, so a weight
/// `exp(a t^α |v|^β)` stays integrable against polynomial tails only while
/// `a t^α ≤ C t`. Returns the admissible coefficient along `times`.
pub fn subsolution_rate_check(c: f64, alpha: f64, times: &[f64]) -> RateCheck {
    let admissible: Vec<f64> = times.iter().map(|&t| c * t.powf(1.0 - alpha)).collect();
    let infimum = admissible.iter().copied().fold(f64::INFINITY, f64::min);
    RateCheck {
        alpha,
        times: times.to_vec(),
        admissible,
        infimum,
    }
}

/// `∫_{|v| ≤ R} f0(v) e^{-Ct(1+|v|^β)} e^{z|v|^β} dv` for the heavy-tail `f0 ∝ (1+|v|²)^{-(d+2+δ)/2}`
/// (unnormalised), by composite Gauss–Legendre on the radius.
pub fn subsolution_exp_moment(c: f64, beta: f64, z: f64, t: f64, d: usize, delta: f64, r_max: f64) -> f64 {
    let rule = crate::quadrature::gauss_legendre(16);
    let panels = (r_max.ceil() as usize).max(8) * 4;
    let e = -(d as f64 + 2.0 + delta) / 2.0;
    crate::quadrature::composite(&rule, 0.0, r_max, panels, |r| {
        let rb = r.powf(beta);
        let log = e * (1.0 + r * r).ln() + (d as f64 - 1.0) * r.ln() - c * t * (1.0 + rb) + z * rb;
        if r == 0.0 { 0.0 } else { log.exp() }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::{make_kernel, AngularProfile};

    fn analytic_table(max: usize) -> GammaTable {
        let orders: Vec<f64> = (2..=2 * max).map(|k| k as f64 / 2.0).collect();
        let gamma = orders.iter().map(|p| 2.0 / (p + 1.0)).collect();
        GammaTable::from_values(orders, gamma, "analytic").unwrap()
    }

    fn kernel(beta: f64) -> AngularKernel {
        make_kernel(3, beta, AngularProfile::Constant).unwrap()
    }

    fn elementary(mode: Mode, s: f64, beta: f64) -> HierarchyParams {
        build_params(
            &kernel(beta),
            &analytic_table(80),
            &ParamRequest {
                s,
                m0: 1.0,
                m2: 3.0,
                branch: Branch::Elementary,
                mode,
                ensemble0: None,
                a0: 0.25,
                c0: 3.0,
            },
        )
        .unwrap()
    }

    #[test]
    fn p0_elementary_is_131() {
        let t = analytic_table(80);
        assert_eq!(choose_p0(&t, 1.0, 1.0, P0Rule::Elementary).unwrap(), 131);
        let short = analytic_table(30);
        assert!(matches!(
            choose_p0(&short, 1.0, 1.0, P0Rule::Elementary),
            Err(Error::TableExhausted { .. })
        ));
    }

    #[test]
    fn p0_respects_domain_for_s_two() {
        let t = GammaTable::from_values(vec![1.0, 2.0, 3.0], vec![1.0, 0.001, 0.0005], "x").unwrap();
        assert_eq!(choose_p0(&t, 2.0, 1.0, P0Rule::Elementary).unwrap(), 2);
    }

    #[test]
    fn p0_propagation_by_scan() {
        let t = analytic_table(80);
        let cbar = 0.9;
        let p0 = choose_p0(&t, 2.0, 1.0, P0Rule::FittedPropagation { cbar }).unwrap();
        let k1 = |p: usize| 2.0 * (1.0 - 2.0 / (p as f64 + 1.0)) * cbar;
        let ok = |p: usize| 16.0 * 2.0 / (p as f64 + 1.0) <= k1(p) / 2.0;
        assert!(ok(p0) && !ok(p0 - 1));
    }

    #[test]
    fn constants_and_c_beta() {
        assert_eq!(c_beta(1.0), 1.0);
        assert_eq!(c_beta(2.0), 0.5);
        assert_eq!(c_beta(0.5), 1.0);
        let p = elementary(Mode::Creation, 1.0, 1.0);
        assert!((p.k1 - 2.0 * (1.0 - p.gamma_p0) * p.m0).abs() < 1e-14);
        assert_eq!(p.k2, 2.0 * p.m_beta);
        assert_eq!(p.k3, 4.0 * p.k2 * p.m0);
        assert!((p.m_beta - 3f64.sqrt()).abs() < 1e-14);
    }

    #[test]
    fn k1_example() {
        let gamma_p0: f64 = 0.02;
        assert!((2.0 * (1.0 - gamma_p0) * c_beta(1.0) * 1.0 - 1.96).abs() < 1e-14);
    }

    #[test]
    fn creation_constant_examples() {
        let mut p = elementary(Mode::Creation, 1.0, 1.0);
        p.branch = Branch::Fitted;
        p.k1 = 0.5;
        p.k3 = 0.0;
        let c = creation_constants(&p, 10.0);
        assert!((c.a - 1.0 / 60.0).abs() < 1e-15);
        assert_eq!(c.t_final, 1.0);
        assert!((c.c - 19.0 / 6.0).abs() < 1e-15);
        p.branch = Branch::Elementary;
        p.k2 = 6.0;
        p.k3 = 4.0 * p.k2 * p.m0;
        let c = creation_constants(&p, 10.0);
        assert_eq!(p.k3, 24.0);
        assert!((c.t_final - 1.0 / 48.0).abs() < 1e-15);
        assert!((c.c - (19.0 / 6.0 + 24.0 / 48.0)).abs() < 1e-14);
    }

    #[test]
    fn theorem_constants_are_vacuous_in_double_precision() {
        let p = elementary(Mode::Creation, 1.0, 1.0);
        assert_eq!(p.p0, 131);
        assert!(p.ln_c_p0 > 700.0);
        assert!(p.a < 1e-100);
        assert!(!p.diagnostics.is_empty());
    }

    #[test]
    fn propagation_example() {
        let mut p = elementary(Mode::Propagation, 2.0, 1.0);
        p.branch = Branch::Fitted;
        p.a0 = 1.0;
        p.k1 = 2.0;
        p.k2 = 0.0;
        p.c_prime = 1.0;
        let r = propagation_constants(&p, 5.0);
        let e = std::f64::consts::E;
        assert!((r.a - 3.0 / (15.0 + 2.0 * e)).abs() < 1e-12, "{}", r.a);
        assert_eq!(r.c, 4.0);
        assert!(r.a <= p.a0);
        let inf = propagation_constants(&p, f64::INFINITY);
        assert_eq!(inf.a, 0.0);
        assert!(inf.diagnostic.is_some());
    }

    #[test]
    fn elementary_propagation_limit_as_k2_vanishes() {
        let mut p = elementary(Mode::Propagation, 2.0, 1.0);
        p.a0 = 1.0;
        p.k1 = 2.0;
        p.c_prime = 1.0;
        let e = std::f64::consts::E;
        let mut prev = 0.0;
        for k2 in [1.0, 0.1, 1e-3, 1e-9] {
            p.k2 = k2;
            let a = propagation_constants(&p, 5.0).a;
            assert!(a >= prev && a <= p.a0);
            prev = a;
        }
        // limit of the elementary restriction, a third of the fitted one
        assert!((prev - 1.0 / (2.0 * (7.5 + e))).abs() < 1e-8);
    }

    #[test]
    fn scalar_fixed_point_and_creation_rate() {
        let p = elementary(Mode::Creation, 1.0, 1.0);
        let c = p.scalar_coefficients(4.0).unwrap();
        let fixed = (c.c_prime / c.k).powf(1.0 / c.exponent);
        let env = scalar_upper_solution(4.0, &p, InitialMoment::Finite(fixed), &[0.1, 1.0, 5.0]).unwrap();
        for v in env.values {
            assert!((v - fixed).abs() < 1e-9 * fixed);
        }
        // C' = 0: m(t) = (γ K t)^{-1/γ}
        let c0 = ScalarCoefficients { c_prime: 0.0, ..c };
        let env = scalar_envelope_from(c0, InitialMoment::Infinite, &[1e-3, 0.5, 1.0]).unwrap();
        for (&t, &v) in env.times.iter().zip(&env.values) {
            let exact = (c.exponent * c.k * t).powf(-1.0 / c.exponent);
            assert!((v - exact).abs() < 1e-12 * exact);
        }
        assert!((env.ln_c_sp - (-(c.exponent * c.k).ln() / c.exponent)).abs() < 1e-12);
        assert!(p.scalar_coefficients(2.0).is_err());
    }

    /// RK4 on `y = ln m`: `y' = C' - K e^{γ y}`.
    fn rk4_log(c: &ScalarCoefficients, y0: f64, t0: f64, t1: f64, steps: usize) -> f64 {
        let f = |y: f64| c.c_prime - c.k * (c.exponent * y).exp();
        let h = (t1 - t0) / steps as f64;
        let mut y = y0;
        for _ in 0..steps {
            let k1 = f(y);
            let k2 = f(y + 0.5 * h * k1);
            let k3 = f(y + 0.5 * h * k2);
            let k4 = f(y + h * k3);
            y += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        }
        y
    }

    #[test]
    fn closed_form_matches_numerical_integration() {
        let p = elementary(Mode::Creation, 1.0, 1.0);
        let c = p.scalar_coefficients(4.0).unwrap();
        let c0 = ScalarCoefficients { c_prime: 0.0, ..c };
        let eps = 1e-8;
        let y0 = bernoulli_solution(0.0, c.k, c.exponent, InitialMoment::Infinite, eps).ln();
        // geometric substeps through the initial layer
        let mut y = y0;
        let mut t = eps;
        while t < 1.0 {
            let t1 = (t * 1.5).min(1.0);
            y = rk4_log(&c0, y, t, t1, 200);
            t = t1;
        }
        let exact = bernoulli_solution(0.0, c.k, c.exponent, InitialMoment::Infinite, 1.0);
        assert!((y.exp() - exact).abs() < 1e-7 * exact);

        let fixed = (c.c_prime / c.k).powf(1.0 / c.exponent);
        let m_init = fixed * 1e-3;
        let ts = [0.0, 0.01, 0.1, 0.5, 2.0];
        let env = scalar_upper_solution(4.0, &p, InitialMoment::Finite(m_init), &ts).unwrap();
        let mut y = m_init.ln();
        for i in 1..ts.len() {
            y = rk4_log(&c, y, ts[i - 1], ts[i], 4000);
            assert!((y.exp() - env.values[i]).abs() < 1e-6 * env.values[i]);
            assert!(env.values[i] >= env.values[i - 1] && env.values[i] <= fixed * (1.0 + 1e-12));
        }
    }

    #[test]
    fn point_mass_at_origin_is_stationary() {
        let p = elementary(Mode::Creation, 1.0, 1.0);
        let mut pp = p.clone();
        pp.m2 = 0.0;
        let mv = MomentVector::from_atoms(1.0, 1.0, 12, &[(1.0, 0.0)]).unwrap();
        let tr = integrate_hierarchy(&pp, &HierarchyStart::Moments(mv), 12, &[0.0, 0.5, 1.0]).unwrap();
        for row in &tr.values {
            assert_eq!(row[0], 1.0);
            assert!(row[1..].iter().all(|&x| x == 0.0));
        }
    }

    #[test]
    fn creation_envelope_consistent_with_scalar_rate() {
        let p = elementary(Mode::Creation, 1.0, 1.0);
        let ts = [0.0, 1e-3, 0.01, 0.1, 0.5, 1.0];
        let tr = integrate_hierarchy(&p, &HierarchyStart::FromEnergy, 12, &ts).unwrap();
        let c4 = scalar_upper_solution(4.0, &p, InitialMoment::Infinite, &ts).unwrap();
        for (i, &t) in ts.iter().enumerate().skip(1) {
            assert!(tr.values[i].iter().all(|x| x.is_finite() && *x >= 0.0));
            assert!(tr.values[i][4] * t.powi(4) <= c4.c_sp * 1e6, "t={t}");
        }
        assert!(tr.values[0][4].is_infinite());
    }

    #[test]
    fn maxwellian_envelope_grows_from_initial_moments() {
        let p = elementary(Mode::Creation, 1.0, 1.0);
        let m = |q: f64| (q / 2.0 * std::f64::consts::LN_2 + ln_gamma((q + 3.0) / 2.0) - ln_gamma(1.5)).exp();
        let mv = MomentVector::from_moment_fn(1.0, 1.0, 12, m).unwrap();
        let tr = integrate_hierarchy(&p, &HierarchyStart::Moments(mv.clone()), 12, &[0.0, 1.0, 10.0]).unwrap();
        for row in &tr.values {
            for q in 3..=12 {
                assert!(row[q] >= mv.m[q] * (1.0 - 1e-9), "order {q}");
            }
        }
    }

    #[test]
    fn subsolution_rate_is_linear() {
        let times = [1e-6, 1e-4, 1e-2, 1.0];
        let lin = subsolution_rate_check(2.0, 1.0, &times);
        assert!(lin.admissible.iter().all(|&a| (a - 2.0).abs() < 1e-14));
        let sub = subsolution_rate_check(2.0, 0.5, &times);
        assert!(sub.infimum < 1e-2);
        // the weight diverges once z exceeds C t, converges below it
        let t = 0.5;
        let below: Vec<f64> = [60.0, 120.0].iter().map(|&r| subsolution_exp_moment(2.0, 1.0, 0.9, t, 3, 0.5, r)).collect();
        assert!((below[1] - below[0]).abs() < 1e-6 * below[0]);
        let above: Vec<f64> = [60.0, 120.0].iter().map(|&r| subsolution_exp_moment(2.0, 1.0, 1.5, t, 3, 0.5, r)).collect();
        assert!(above[1] > 2.0 * above[0]);
    }

    #[test]
    fn cbar_for_point_mass() {
        let v = vec![0.0; 3 * 10];
        let fit = fit_cbar(&v, 3, 1.0, 1.0, 1.0).unwrap();
        // r/(1+r) is smallest at r = 0
        assert_eq!(fit.value, 0.0);
        assert!((sample_convolution(&v, 3, &[2.0, 0.0, 0.0], 1.0) / 3.0 - 2.0 / 3.0).abs() < 1e-15);
    }
}
