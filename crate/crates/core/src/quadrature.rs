//! Gauss–Jacobi rules and a few special functions used by the angular code.

use nalgebra::{DMatrix, SymmetricEigen};
use statrs::function::gamma::ln_gamma;
use std::f64::consts::PI;

/// Nodes and weights of an n-point rule on [-1, 1].
#[derive(Debug, Clone)]
pub struct Rule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl Rule {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn integrate(&self, f: impl Fn(f64) -> f64) -> f64 {
        crate::sum::sum(self.nodes.iter().zip(&self.weights).map(|(&x, &w)| w * f(x)))
    }

    /// Rescales weights so they sum to one.
    pub fn normalized(mut self) -> Self {
        let total = crate::sum::sum(self.weights.iter().copied());
        for w in &mut self.weights {
            *w /= total;
        }
        self
    }
}

/// `ln B(a, b)`.
pub fn ln_beta(a: f64, b: f64) -> f64 {
    ln_gamma(a) + ln_gamma(b) - ln_gamma(a + b)
}

/// `∫_{-1}^{1} (1-x)^a (1+x)^b dx`, requires `a, b > -1`.
pub fn jacobi_mass(a: f64, b: f64) -> f64 {
    ((a + b + 1.0) * std::f64::consts::LN_2 + ln_beta(a + 1.0, b + 1.0)).exp()
}

/// Surface area of the unit sphere `S^k ⊂ R^{k+1}`; `|S^0| = 2`.
pub fn sphere_area(k: usize) -> f64 {
    let h = (k as f64 + 1.0) / 2.0;
    2.0 * (h * PI.ln() - ln_gamma(h)).exp()
}

/// Gauss–Jacobi rule for the weight `(1-x)^a (1+x)^b` (Golub–Welsch).
pub fn gauss_jacobi(n: usize, a: f64, b: f64) -> Rule {
    assert!(n >= 1, "rule needs at least one node");
    assert!(a > -1.0 && b > -1.0, "Jacobi exponents must exceed -1");
    let ab = a + b;
    let mut diag = vec![0.0; n];
    let mut off = vec![0.0; n.saturating_sub(1)];
    for (k, d) in diag.iter_mut().enumerate() {
        let kf = k as f64;
        let s = 2.0 * kf + ab;
        *d = if k == 0 {
            (b - a) / (ab + 2.0)
        } else {
            (b * b - a * a) / (s * (s + 2.0))
        };
    }
    for (k, o) in off.iter_mut().enumerate() {
        let m = (k + 1) as f64;
        let s = 2.0 * m + ab;
        let beta = if k == 0 {
            4.0 * (1.0 + a) * (1.0 + b) / ((2.0 + ab).powi(2) * (3.0 + ab))
        } else {
            4.0 * m * (m + a) * (m + b) * (m + ab) / (s * s * (s + 1.0) * (s - 1.0))
        };
        *o = beta.sqrt();
    }
    let mut jm = DMatrix::<f64>::zeros(n, n);
    for i in 0..n {
        jm[(i, i)] = diag[i];
        if i + 1 < n {
            jm[(i, i + 1)] = off[i];
            jm[(i + 1, i)] = off[i];
        }
    }
    let eig = SymmetricEigen::new(jm);
    let mu0 = jacobi_mass(a, b);
    let mut pairs: Vec<(f64, f64)> = (0..n)
        .map(|i| {
            let v0 = eig.eigenvectors[(0, i)];
            (eig.eigenvalues[i], mu0 * v0 * v0)
        })
        .collect();
    pairs.sort_by(|x, y| x.0.total_cmp(&y.0));
    Rule {
        nodes: pairs.iter().map(|p| p.0).collect(),
        weights: pairs.iter().map(|p| p.1).collect(),
    }
}

pub fn gauss_legendre(n: usize) -> Rule {
    gauss_jacobi(n, 0.0, 0.0)
}

/// Gauss–Chebyshev (first kind) rule: weight `(1-x^2)^{-1/2}`.
pub fn gauss_chebyshev(n: usize) -> Rule {
    let nodes: Vec<f64> = (1..=n)
        .rev()
        .map(|j| ((2 * j - 1) as f64 * PI / (2 * n) as f64).cos())
        .collect();
    Rule {
        nodes,
        weights: vec![PI / n as f64; n],
    }
}

/// Composite Gauss–Legendre on `[lo, hi]` split into `panels` equal pieces.
pub fn composite(rule: &Rule, lo: f64, hi: f64, panels: usize, f: impl Fn(f64) -> f64) -> f64 {
    let h = (hi - lo) / panels as f64;
    let mut acc = crate::sum::CompensatedSum::new();
    for k in 0..panels {
        let a = lo + k as f64 * h;
        let mid = a + 0.5 * h;
        for (&x, &w) in rule.nodes.iter().zip(&rule.weights) {
            acc.add(0.5 * h * w * f(mid + 0.5 * h * x));
        }
    }
    acc.value()
}
