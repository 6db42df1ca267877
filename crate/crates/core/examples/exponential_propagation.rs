//! Exponential moments of Maxwellian data under hard spheres: proof constants
//! against what the particle run supports.

use boltzmann_moments::bounds::{build_params, Branch, Mode, ParamRequest};
use boltzmann_moments::dsmc::{run, InitialDataSpec, RunConfig, ZSchedule};
use boltzmann_moments::harness::largest_safe_a;
use boltzmann_moments::povzner::gamma_symmetric_table;
use boltzmann_moments::{make_kernel, AngularProfile};

fn main() -> boltzmann_moments::Result<()> {
    let k = make_kernel(3, 1.0, AngularProfile::Constant)?;
    let gamma = gamma_symmetric_table(&k, &(1..=80).map(f64::from).collect::<Vec<_>>())?;
    // ∫ M exp(|v|²/4) = 2^{3/2}
    let req = ParamRequest {
        s: 2.0,
        m0: 1.0,
        m2: 3.0,
        branch: Branch::Elementary,
        mode: Mode::Propagation,
        ensemble0: None,
        a0: 0.25,
        c0: 2f64.powf(1.5),
    };
    let params = build_params(&k, &gamma, &req)?;
    println!("p0 = {}, ln C_sp0 = {:.1}, proven a = {:e}", params.p0, params.ln_c_p0, params.a);

    let z = 0.1;
    let mut cfg = RunConfig::new(3, 20_000, 4, 5, InitialDataSpec::maxwellian(3, 1.0), vec![0.0, 1.0, 3.0, 10.0]);
    cfg.s = 2.0;
    cfg.n = 12;
    cfg.series_n = 12;
    cfg.z_schedule = ZSchedule::Propagation { a: z };
    let traj = run(&k, &cfg)?;
    for r in &traj.exp {
        println!(
            "t = {:<4} E(z = {z}) direct {:.5} ± {:.1e}, series {:.5}, closed form {:.5}",
            r.time,
            r.direct,
            r.direct_stderr,
            r.series,
            (1.0 - 2.0 * z).powf(-1.5)
        );
    }
    println!("largest a keeping the series below 4 m0: {:.4}", largest_safe_a(&traj, 4.0, 12, false));
    Ok(())
}
