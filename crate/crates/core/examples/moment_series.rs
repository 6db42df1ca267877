//! Polynomial and exponential moments of a Maxwellian: truncated series,
//! the convolution inequality and binomial brackets.

use boltzmann_moments::moments::{check_binomial_bounds, check_convolution, exp_partial_sums, MomentVector};
use statrs::function::gamma::ln_gamma;

fn main() -> boltzmann_moments::Result<()> {
    // d = 3, T = 1: m_q = 2^{q/2} Γ((q+3)/2) / Γ(3/2)
    let m = |q: f64| (q / 2.0 * 2f64.ln() + ln_gamma((q + 3.0) / 2.0) - ln_gamma(1.5)).exp();
    let (s, beta) = (2.0, 1.0);
    let mv = MomentVector::from_moment_fn(s, beta, 30, m)?;
    for z in [0.05, 0.1, 0.2] {
        let e = exp_partial_sums(&mv, z, 30)?;
        println!("z = {z}: E^30 = {:.10}, closed form {:.10}", e.e_n, (1.0 - 2.0 * z).powf(-1.5));
    }
    let c = check_convolution(&mv, 0.2, 2, 30)?;
    println!("Σ z^p/p! S_p = {:.6} ≤ 2 E I = {:.6}: {}", c.lhs, c.rhs, c.holds);
    println!("log-convexity violations: {:?}", mv.log_convexity_violations(1e-12));
    let (lo, hi) = check_binomial_bounds(0.3, 2.0, 7.5)?;
    println!("binomial bracket at (0.3, 2, 7.5): lower {lo}, upper {hi}");
    Ok(())
}
