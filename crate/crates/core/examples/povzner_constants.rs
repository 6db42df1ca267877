//! Povzner constants γ_p: sup-search against the symmetric formula, random
//! verification, and the decay envelope for an unbounded kernel.

use boltzmann_moments::povzner::{
    bounded_kernel_envelope, fit_decay_envelope, gamma_symmetric_formula, verify_povzner,
};
use boltzmann_moments::{gamma_table, make_kernel, AngularProfile};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> boltzmann_moments::Result<()> {
    let k = make_kernel(3, 1.0, AngularProfile::Constant)?;
    let orders: Vec<f64> = (1..=12).map(|p| p as f64).collect();
    let table = gamma_table(&k, &orders, 1024)?;
    println!("{:>4} {:>12} {:>12} {:>12}", "p", "sup-search", "2/(p+1)", "16πb*/(p+1)");
    for (&p, &g) in table.orders.iter().zip(&table.gamma) {
        println!(
            "{p:>4} {g:>12.8} {:>12.8} {:>12.8}",
            gamma_symmetric_formula(&k, p)?,
            bounded_kernel_envelope(&k, p).unwrap()
        );
    }
    println!("γ(2.5) by interpolation: {:.6}", table.at(2.5)?);

    let report = verify_povzner(&k, &table, 2000, 1e-6, &mut ChaCha8Rng::seed_from_u64(7));
    println!("{} random configurations, worst slack {:.2e}, passed: {}", report.trials, report.worst_slack(), report.passed);

    let power = make_kernel(3, 1.0, AngularProfile::Power { nu: 0.5 })?;
    let t = gamma_table(&power, &orders, 1024)?;
    let fit = fit_decay_envelope(&t, power.q_integrability());
    println!("power(0.5) kernel: γ_12 = {:.5}, fitted decay {fit:?}", t.gamma[11]);
    Ok(())
}
