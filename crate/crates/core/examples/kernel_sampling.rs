//! Angular kernels: normalisation, sampled scattering angles and one collision.

use boltzmann_moments::kernel::post_collide;
use boltzmann_moments::quadrature::sphere_area;
use boltzmann_moments::{make_kernel, AngularProfile};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> boltzmann_moments::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for profile in [AngularProfile::Constant, AngularProfile::Power { nu: 0.5 }] {
        let k = make_kernel(3, 1.0, profile)?;
        let n = 200_000;
        let mean: f64 = (0..n).map(|_| k.sample_cos_theta(&mut rng)).sum::<f64>() / n as f64;
        println!(
            "{:<28} ∫b dσ = {:.12}  q = {}  mean cosθ = {mean:+.4}",
            k.id(),
            k.normalization_integral() * sphere_area(1),
            k.q_integrability()
        );
    }

    let k = make_kernel(3, 1.0, AngularProfile::Constant)?;
    let (v, w) = ([1.0, 0.0, 0.0], [-1.0, 0.5, 0.0]);
    let u: Vec<f64> = {
        let g: Vec<f64> = v.iter().zip(&w).map(|(a, b)| a - b).collect();
        let n = g.iter().map(|x| x * x).sum::<f64>().sqrt();
        g.iter().map(|x| x / n).collect()
    };
    let sigma = k.sample_sigma(&u, &mut rng);
    let out = post_collide(&v, &w, &sigma);
    println!("rate |v - v*|^β = {:.4}", k.eval_rate(&v, &w));
    println!("v' = {:?}\nv*' = {:?}", out.v_prime, out.v_star_prime);
    Ok(())
}
