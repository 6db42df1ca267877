//! Proof constants and moment envelopes for hard spheres: scalar Bernoulli
//! solutions and the coupled hierarchy started from finite energy only.

use boltzmann_moments::bounds::{
    build_params, integrate_hierarchy, scalar_upper_solution, Branch, HierarchyStart, InitialMoment, Mode, ParamRequest,
};
use boltzmann_moments::povzner::gamma_symmetric_table;
use boltzmann_moments::{make_kernel, AngularProfile};

fn main() -> boltzmann_moments::Result<()> {
    let k = make_kernel(3, 1.0, AngularProfile::Constant)?;
    let orders: Vec<f64> = (1..=80).map(|p| p as f64).collect();
    let gamma = gamma_symmetric_table(&k, &orders)?;
    let req = ParamRequest {
        s: 1.0,
        m0: 1.0,
        m2: 3.0,
        branch: Branch::Elementary,
        mode: Mode::Creation,
        ensemble0: None,
        a0: 0.0,
        c0: 0.0,
    };
    let params = build_params(&k, &gamma, &req)?;
    println!("p0 = {}, γ_p0 = {:.4e}, K1 = {:.4}, K2 = {:.4}", params.p0, params.gamma_p0, params.k1, params.k2);
    println!("ln C_p0 = {:.1}, a = {:e}, T = {:.4}, C = {:.4}", params.ln_c_p0, params.a, params.t_final, params.c_bound);
    for d in &params.diagnostics {
        println!("diagnostic: {d}");
    }

    let times = [0.01, 0.1, 1.0, 10.0];
    let m4 = scalar_upper_solution(4.0, &params, InitialMoment::Infinite, &times)?;
    println!("scalar m_4 envelope {:?}, C_s,4 = {:.3e}", m4.values, m4.c_sp);

    let env = integrate_hierarchy(&params, &HierarchyStart::FromEnergy, 8, &times)?;
    for (t, row) in env.t_grid.iter().zip(&env.values) {
        let cols: Vec<String> = row[3..].iter().map(|m| format!("{m:.3e}")).collect();
        println!("t = {t:<5} M_3..M_8 = {}", cols.join(" "));
    }
    Ok(())
}
