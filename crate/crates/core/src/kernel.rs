//! Collision kernels `B(|v - v*|, cos θ) = |v - v*|^β b(cos θ)` with an
//! integrable angular part, normalised so that `∫_{S^{d-1}} b(σ·û) dσ = 1`.

use crate::error::{Error, Result};
use crate::quadrature::{self, jacobi_mass, sphere_area, Rule};
use rand::Rng;
use rand_distr::StandardNormal;
use std::f64::consts::PI;
use std::path::Path;

/// Polar nodes used for angular averages.
pub const POLAR_NODES: usize = 256;
const CDF_CELLS: usize = 8192;

/// Unnormalised angular profile `b`.
#[derive(Debug, Clone, PartialEq)]
pub enum AngularProfile {
    /// Isotropic scattering.
    Constant,
    /// `b(z) ∝ (1 - z)^{-nu}`: integrable but unbounded for `nu > 0`.
    Power { nu: f64 },
    /// Piecewise-linear samples on an ascending grid spanning `[-1, 1]`.
    Table { z: Vec<f64>, b: Vec<f64> },
}

impl AngularProfile {
    /// Reads a two-column whitespace or comma separated `(z, b(z))` file.
    pub fn read_table(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path.as_ref())?;
        let mut z = Vec::new();
        let mut b = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let cols: Vec<&str> = line
                .split(|c: char| c == ',' || c.is_whitespace())
                .filter(|s| !s.is_empty())
                .collect();
            let parse = |s: &str| {
                s.parse::<f64>().map_err(|_| {
                    Error::Kernel(format!("table line {}: cannot parse `{s}`", lineno + 1))
                })
            };
            if cols.len() != 2 {
                return Err(Error::Kernel(format!(
                    "table line {}: expected two columns",
                    lineno + 1
                )));
            }
            z.push(parse(cols[0])?);
            b.push(parse(cols[1])?);
        }
        Ok(AngularProfile::Table { z, b })
    }

    fn raw(&self, z: f64) -> f64 {
        match self {
            AngularProfile::Constant => 1.0,
            AngularProfile::Power { nu } => (1.0 - z).max(0.0).powf(-nu),
            AngularProfile::Table { z: zs, b } => interp_linear(zs, b, z),
        }
    }
}

fn interp_linear(xs: &[f64], ys: &[f64], x: f64) -> f64 {
    if x <= xs[0] {
        return ys[0];
    }
    let last = xs.len() - 1;
    if x >= xs[last] {
        return ys[last];
    }
    let i = xs.partition_point(|&v| v <= x) - 1;
    let t = (x - xs[i]) / (xs[i + 1] - xs[i]);
    ys[i] + t * (ys[i + 1] - ys[i])
}

#[derive(Debug, Clone)]
enum Sampler {
    /// σ uniform on the sphere.
    Isotropic,
    /// Closed-form inverse CDF for the power family in d = 3.
    PowerInverse { exponent: f64 },
    /// Inverse of a cumulative table over the polar angle.
    Tabulated { phi: Vec<f64>, cdf: Vec<f64> },
}

/// A normalised hard-potential cutoff kernel.
#[derive(Debug, Clone)]
pub struct AngularKernel {
    d: usize,
    beta: f64,
    profile: AngularProfile,
    norm_constant: f64,
    b_sup: Option<f64>,
    q_integrability: f64,
    polar: Rule,
    sampler: Sampler,
}

/// Builds a kernel with `β ∈ (0, 2]`.
pub fn make_kernel(d: usize, beta: f64, profile: AngularProfile) -> Result<AngularKernel> {
    if !(beta > 0.0 && beta <= 2.0) {
        return Err(Error::Kernel(format!("beta = {beta} outside (0, 2]")));
    }
    AngularKernel::build(d, beta, profile)
}

/// Maxwell-molecule kernel (`β = 0`), used only to validate the particle solver.
pub fn make_maxwell_kernel(d: usize, profile: AngularProfile) -> Result<AngularKernel> {
    AngularKernel::build(d, 0.0, profile)
}

impl AngularKernel {
    fn build(d: usize, beta: f64, profile: AngularProfile) -> Result<Self> {
        if d < 2 {
            return Err(Error::Kernel(format!("dimension {d} < 2")));
        }
        let alpha = (d as f64 - 3.0) / 2.0;
        let s_dm2 = sphere_area(d - 2);
        let (mass, b_sup_raw, q, polar) = match &profile {
            AngularProfile::Constant => {
                let rule = quadrature::gauss_jacobi(POLAR_NODES, alpha, alpha);
                (jacobi_mass(alpha, alpha), Some(1.0), f64::INFINITY, rule)
            }
            AngularProfile::Power { nu } => {
                let nu = *nu;
                if !nu.is_finite() || alpha - nu <= -1.0 {
                    return Err(Error::Kernel(format!(
                        "power profile nu = {nu} is not integrable in dimension {d}"
                    )));
                }
                let rule = quadrature::gauss_jacobi(POLAR_NODES, alpha - nu, alpha);
                let critical = (alpha + 1.0) / nu;
                let (sup, q) = if nu <= 0.0 {
                    (Some(2f64.powf(-nu)), f64::INFINITY)
                } else {
                    (None, 0.5 * (1.0 + critical))
                };
                (jacobi_mass(alpha - nu, alpha), sup, q, rule)
            }
            AngularProfile::Table { z, b } => {
                validate_table(z, b)?;
                let mass = if d == 3 {
                    trapezoid(z, b)
                } else {
                    polar_integral(&profile, d, 0.0, PI)
                };
                let mut rule = quadrature::gauss_jacobi(POLAR_NODES, alpha, alpha);
                for (w, &x) in rule.weights.iter_mut().zip(&rule.nodes) {
                    *w *= profile.raw(x);
                }
                let sup = b.iter().copied().fold(0.0, f64::max);
                (mass, Some(sup), f64::INFINITY, rule)
            }
        };
        if !(mass.is_finite() && mass > 0.0) {
            return Err(Error::Kernel(format!(
                "normalisation integral {mass} is not finite and positive"
            )));
        }
        let norm_constant = 1.0 / (s_dm2 * mass);
        let sampler = match &profile {
            AngularProfile::Constant => Sampler::Isotropic,
            AngularProfile::Power { nu } if d == 3 => Sampler::PowerInverse {
                exponent: 1.0 / (1.0 - nu),
            },
            _ => build_cdf(&profile, d)?,
        };
        Ok(AngularKernel {
            d,
            beta,
            b_sup: b_sup_raw.map(|s| s * norm_constant),
            profile,
            norm_constant,
            q_integrability: q,
            polar: polar.normalized(),
            sampler,
        })
    }

    pub fn dimension(&self) -> usize {
        self.d
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn profile(&self) -> &AngularProfile {
        &self.profile
    }

    pub fn norm_constant(&self) -> f64 {
        self.norm_constant
    }

    /// `max b`, or `None` when `b` is unbounded.
    pub fn b_sup(&self) -> Option<f64> {
        self.b_sup
    }

    pub fn q_integrability(&self) -> f64 {
        self.q_integrability
    }

    /// Normalised angular function `b(z)`.
    pub fn b(&self, z: f64) -> f64 {
        self.norm_constant * self.profile.raw(z)
    }

    /// `∫_{-1}^{1} b(z) (1 - z²)^{(d-3)/2} dz`, evaluated independently of the
    /// construction path; equals `1/|S^{d-2}|` for a normalised kernel.
    pub fn normalization_integral(&self) -> f64 {
        self.norm_constant * polar_integral(&self.profile, self.d, 0.0, PI)
    }

    /// Rule for expectations over `z = cos θ` under the normalised angular density.
    pub fn polar_rule(&self) -> &Rule {
        &self.polar
    }

    /// Short identifier used in reports.
    pub fn id(&self) -> String {
        let b = match &self.profile {
            AngularProfile::Constant => "constant".to_string(),
            AngularProfile::Power { nu } => format!("power({nu})"),
            AngularProfile::Table { z, .. } => format!("table[{}]", z.len()),
        };
        format!("d={},beta={},b={}", self.d, self.beta, b)
    }

    /// Collision rate factor `|v - v*|^β` (the angular part integrates to one).
    pub fn eval_rate(&self, v: &[f64], v_star: &[f64]) -> f64 {
        let g2: f64 = v.iter().zip(v_star).map(|(a, b)| (a - b) * (a - b)).sum();
        if self.beta == 0.0 {
            1.0
        } else {
            g2.powf(0.5 * self.beta)
        }
    }

    /// Draws `cos θ` from the normalised angular density.
    pub fn sample_cos_theta<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match &self.sampler {
            Sampler::Isotropic => {
                // marginal of one coordinate of a uniform point on S^{d-1}
                let mut sq = 0.0;
                let mut first = 0.0;
                for k in 0..self.d {
                    let g: f64 = rng.sample(StandardNormal);
                    if k == 0 {
                        first = g;
                    }
                    sq += g * g;
                }
                first / sq.sqrt()
            }
            Sampler::PowerInverse { exponent } => {
                let u: f64 = rng.gen();
                1.0 - 2.0 * (1.0 - u).powf(*exponent)
            }
            Sampler::Tabulated { phi, cdf } => {
                let u: f64 = rng.gen::<f64>() * cdf[cdf.len() - 1];
                let i = cdf.partition_point(|&c| c <= u).clamp(1, cdf.len() - 1);
                let (c0, c1) = (cdf[i - 1], cdf[i]);
                let t = if c1 > c0 { (u - c0) / (c1 - c0) } else { 0.5 };
                (phi[i - 1] + t * (phi[i] - phi[i - 1])).cos()
            }
        }
    }

    /// Samples a post-collision direction σ around the unit relative velocity `u_hat`.
    pub fn sample_sigma_into<R: Rng + ?Sized>(&self, u_hat: &[f64], rng: &mut R, out: &mut [f64]) {
        let d = self.d;
        debug_assert_eq!(u_hat.len(), d);
        if let Sampler::Isotropic = self.sampler {
            loop {
                let mut sq = 0.0;
                for o in out.iter_mut().take(d) {
                    let g: f64 = rng.sample(StandardNormal);
                    *o = g;
                    sq += g * g;
                }
                if sq > 1e-300 {
                    let inv = sq.sqrt().recip();
                    out.iter_mut().take(d).for_each(|o| *o *= inv);
                    return;
                }
            }
        }
        let z = self.sample_cos_theta(rng).clamp(-1.0, 1.0);
        let s = (1.0 - z * z).max(0.0).sqrt();
        // ω: uniform unit vector orthogonal to û
        loop {
            let mut dot = 0.0;
            for (o, &u) in out.iter_mut().zip(u_hat).take(d) {
                let g: f64 = rng.sample(StandardNormal);
                *o = g;
                dot += g * u;
            }
            let mut sq = 0.0;
            for (o, &u) in out.iter_mut().zip(u_hat).take(d) {
                *o -= dot * u;
                sq += *o * *o;
            }
            if sq > 1e-20 {
                let inv = sq.sqrt().recip();
                for (o, &u) in out.iter_mut().zip(u_hat).take(d) {
                    *o = z * u + s * *o * inv;
                }
                return;
            }
        }
    }

    pub fn sample_sigma<R: Rng + ?Sized>(&self, u_hat: &[f64], rng: &mut R) -> Vec<f64> {
        let mut out = vec![0.0; self.d];
        self.sample_sigma_into(u_hat, rng, &mut out);
        out
    }
}

fn validate_table(z: &[f64], b: &[f64]) -> Result<()> {
    if z.len() < 2 || z.len() != b.len() {
        return Err(Error::Kernel("table needs at least two (z, b) rows".into()));
    }
    if (z[0] + 1.0).abs() > 1e-12 || (z[z.len() - 1] - 1.0).abs() > 1e-12 {
        return Err(Error::Kernel("table must span z ∈ [-1, 1]".into()));
    }
    if z.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Kernel("table z column must be strictly ascending".into()));
    }
    if b.iter().any(|&v| !(v >= 0.0 && v.is_finite())) {
        return Err(Error::Kernel("table b column must be finite and nonnegative".into()));
    }
    if b.iter().all(|&v| v == 0.0) {
        return Err(Error::DegenerateTable);
    }
    Ok(())
}

fn trapezoid(z: &[f64], b: &[f64]) -> f64 {
    crate::sum::sum(z.windows(2).zip(b.windows(2)).map(|(zw, bw)| 0.5 * (zw[1] - zw[0]) * (bw[0] + bw[1])))
}

/// `∫_{φ0}^{φ1} b_raw(cos φ) sin^{d-2} φ dφ` by composite Gauss–Legendre.
fn polar_integral(profile: &AngularProfile, d: usize, phi0: f64, phi1: f64) -> f64 {
    let rule = quadrature::gauss_legendre(8);
    let f = |phi: f64| {
        let b = match profile {
            // 1 - cos φ = 2 sin²(φ/2) keeps the singular factor finite near φ = 0
            AngularProfile::Power { nu } => (2.0 * (0.5 * phi).sin().powi(2)).powf(-nu),
            _ => profile.raw(phi.cos()),
        };
        b * phi.sin().powi(d as i32 - 2)
    };
    match profile {
        // graded panels absorb the φ^{-2ν} endpoint singularity at φ = 0
        AngularProfile::Power { nu } if *nu > 0.0 && phi0 == 0.0 => {
            let mut acc = crate::sum::CompensatedSum::new();
            let mut hi = phi1;
            for _ in 0..60 {
                let lo = hi * 0.5;
                acc.add(quadrature::composite(&rule, lo, hi, 4, f));
                hi = lo;
            }
            acc.value()
        }
        _ => quadrature::composite(&rule, phi0, phi1, 1024, f),
    }
}

fn build_cdf(profile: &AngularProfile, d: usize) -> Result<Sampler> {
    let rule = quadrature::gauss_legendre(4);
    let f = |phi: f64| profile.raw(phi.cos()) * phi.sin().powi(d as i32 - 2);
    let mut phi = Vec::with_capacity(CDF_CELLS + 1);
    let mut cdf = Vec::with_capacity(CDF_CELLS + 1);
    phi.push(0.0);
    cdf.push(0.0);
    let mut acc = crate::sum::CompensatedSum::new();
    for j in 0..CDF_CELLS {
        let a = PI * j as f64 / CDF_CELLS as f64;
        let b = PI * (j + 1) as f64 / CDF_CELLS as f64;
        let cell = if j == 0 {
            polar_integral(profile, d, 0.0, b)
        } else {
            quadrature::composite(&rule, a, b, 1, f)
        };
        acc.add(cell);
        phi.push(b);
        cdf.push(acc.value());
    }
    if !(acc.value() > 0.0 && acc.value().is_finite()) {
        return Err(Error::DegenerateTable);
    }
    Ok(Sampler::Tabulated { phi, cdf })
}

/// Post-collision velocities of an elastic collision.
#[derive(Debug, Clone, PartialEq)]
pub struct CollisionOutcome {
    pub v_prime: Vec<f64>,
    pub v_star_prime: Vec<f64>,
}

/// `v' = (v + v*)/2 + |v - v*|/2 σ`, `v'* = (v + v*)/2 - |v - v*|/2 σ`.
pub fn post_collide(v: &[f64], v_star: &[f64], sigma: &[f64]) -> CollisionOutcome {
    let mut a = v.to_vec();
    let mut b = v_star.to_vec();
    collide_in_place(&mut a, &mut b, sigma);
    CollisionOutcome {
        v_prime: a,
        v_star_prime: b,
    }
}

/// In-place form of [`post_collide`]; a zero relative velocity leaves both unchanged.
#[inline]
pub fn collide_in_place(v: &mut [f64], v_star: &mut [f64], sigma: &[f64]) {
    let g2: f64 = v.iter().zip(v_star.iter()).map(|(a, b)| (a - b) * (a - b)).sum();
    if g2 == 0.0 {
        return;
    }
    let half_g = 0.5 * g2.sqrt();
    for ((a, b), &s) in v.iter_mut().zip(v_star.iter_mut()).zip(sigma) {
        let c = 0.5 * (*a + *b);
        *a = c + half_g * s;
        *b = c - half_g * s;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn constant_kernel_d3_is_one_over_four_pi() {
        let k = make_kernel(3, 1.0, AngularProfile::Constant).unwrap();
        assert!((k.b(0.3) - 1.0 / (4.0 * PI)).abs() < 1e-15);
        assert!((k.normalization_integral() - 1.0 / (2.0 * PI)).abs() < 1e-10);
    }

    #[test]
    fn constant_kernel_d2() {
        let k = make_kernel(2, 2.0, AngularProfile::Constant).unwrap();
        assert!((k.b(0.0) - 1.0 / (2.0 * PI)).abs() < 1e-14);
        assert!((k.normalization_integral() - 0.5).abs() < 1e-10);
    }

    #[test]
    fn rejects_bad_beta_and_nonintegrable_power() {
        assert!(make_kernel(3, 0.0, AngularProfile::Constant).is_err());
        assert!(make_kernel(3, 2.5, AngularProfile::Constant).is_err());
        assert!(make_kernel(3, 1.0, AngularProfile::Power { nu: 1.0 }).is_err());
        assert!(make_kernel(3, 1.0, AngularProfile::Power { nu: 1.3 }).is_err());
        assert!(make_kernel(1, 1.0, AngularProfile::Constant).is_err());
    }

    #[test]
    fn table_validation() {
        let bad = AngularProfile::Table {
            z: vec![-1.0, 1.0],
            b: vec![0.0, 0.0],
        };
        assert!(matches!(make_kernel(3, 1.0, bad), Err(Error::DegenerateTable)));
        let short = AngularProfile::Table {
            z: vec![-0.5, 1.0],
            b: vec![1.0, 1.0],
        };
        assert!(make_kernel(3, 1.0, short).is_err());
    }

    #[test]
    fn table_normalisation_d3_and_d4() {
        let z: Vec<f64> = (0..=40).map(|i| -1.0 + i as f64 / 20.0).collect();
        let b: Vec<f64> = z.iter().map(|x| 1.0 + x * x).collect();
        for d in [3usize, 4] {
            let k = make_kernel(d, 1.0, AngularProfile::Table { z: z.clone(), b: b.clone() }).unwrap();
            let target = 1.0 / sphere_area(d - 2);
            let rel = (k.normalization_integral() - target).abs() / target;
            assert!(rel < 1e-6, "d={d} rel={rel}");
        }
    }

    #[test]
    fn rate_examples() {
        let k1 = make_kernel(3, 1.0, AngularProfile::Constant).unwrap();
        assert_eq!(k1.eval_rate(&[1.0, 0.0, 0.0], &[0.0, 0.0, 0.0]), 1.0);
        let k2 = make_kernel(3, 2.0, AngularProfile::Constant).unwrap();
        assert!((k2.eval_rate(&[1.0, 1.0, 0.0], &[-1.0, -1.0, 0.0]) - 8.0).abs() < 1e-14);
        let kh = make_kernel(3, 0.5, AngularProfile::Constant).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let v: Vec<f64> = (0..3).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let w: Vec<f64> = (0..3).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let g2 = (v[0] - w[0]).powi(2) + (v[1] - w[1]).powi(2) + (v[2] - w[2]).powi(2);
            let oracle = g2.sqrt().sqrt();
            assert!((kh.eval_rate(&v, &w) - oracle).abs() <= 1e-14 * oracle.max(1.0));
        }
    }

    #[test]
    fn post_collide_examples() {
        let out = post_collide(&[1.0, 0.0, 0.0], &[-1.0, 0.0, 0.0], &[0.0, 1.0, 0.0]);
        assert_eq!(out.v_prime, vec![0.0, 1.0, 0.0]);
        assert_eq!(out.v_star_prime, vec![0.0, -1.0, 0.0]);

        let same = post_collide(&[2.0, 0.0, 0.0], &[2.0, 0.0, 0.0], &[0.0, 0.0, 1.0]);
        assert_eq!(same.v_prime, vec![2.0, 0.0, 0.0]);
        assert_eq!(same.v_star_prime, vec![2.0, 0.0, 0.0]);

        let out = post_collide(&[1.0, 1.0, 0.0], &[0.0, 0.0, 0.0], &[1.0, 0.0, 0.0]);
        let h = 2f64.sqrt() / 2.0;
        assert!((out.v_prime[0] - (0.5 + h)).abs() < 1e-15);
        assert!((out.v_prime[1] - 0.5).abs() < 1e-15);
        assert!((out.v_star_prime[0] - (0.5 - h)).abs() < 1e-15);
        let e: f64 = out.v_prime.iter().chain(&out.v_star_prime).map(|x| x * x).sum();
        assert!((e - 2.0).abs() < 1e-14);
    }

    #[test]
    fn sigma_is_unit_and_cos_theta_matches_mean() {
        let k = make_kernel(3, 1.0, AngularProfile::Power { nu: 0.5 }).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let u = [0.0, 0.6, 0.8];
        let n = 100_000;
        let mut stats = crate::sum::MeanVar::default();
        for _ in 0..n {
            let s = k.sample_sigma(&u, &mut rng);
            let norm: f64 = s.iter().map(|x| x * x).sum();
            assert!((norm - 1.0).abs() < 1e-12);
            stats.push(s.iter().zip(&u).map(|(a, b)| a * b).sum());
        }
        // quadrature oracle: ∫ z (1-z)^{-1/2} dz / ∫ (1-z)^{-1/2} dz on [-1, 1]
        let g = quadrature::gauss_legendre(64);
        let sub = |f: &dyn Fn(f64) -> f64| {
            // z = 1 - w², dz = 2w dw, (1-z)^{-1/2} = 1/w, w ∈ [0, √2]
            quadrature::composite(&g, 0.0, 2f64.sqrt(), 4, |w| 2.0 * f(1.0 - w * w))
        };
        let expected = sub(&|z| z) / sub(&|_| 1.0);
        assert!((expected - 1.0 / 3.0).abs() < 1e-12);
        assert!((stats.mean() - expected).abs() < 3.0 * stats.stderr());
    }

    #[test]
    fn power_normalisation_matches_substitution_oracle() {
        let k = make_kernel(3, 1.0, AngularProfile::Power { nu: 0.5 }).unwrap();
        let g = quadrature::gauss_legendre(64);
        let raw = quadrature::composite(&g, 0.0, 2f64.sqrt(), 4, |_| 2.0);
        let integral = k.norm_constant() * raw;
        assert!((integral - 1.0 / (2.0 * PI)).abs() < 1e-10 / (2.0 * PI));
        assert!(k.b_sup().is_none());
        assert!((k.q_integrability() - 1.5).abs() < 1e-12);
    }
}
