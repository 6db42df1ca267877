//! Maxwell molecules (β = 0): isotropic data relaxes m_4 exactly like
//! m_4' = -(m0/3) m_4 + (2/3) m_2² - (1/3)|P|², which stays closed.

use boltzmann_moments::dsmc::{run, InitialDataSpec, InitialKind, RunConfig};
use boltzmann_moments::{make_maxwell_kernel, AngularProfile};

fn main() -> boltzmann_moments::Result<()> {
    let k = make_maxwell_kernel(3, AngularProfile::Constant)?;
    // mixture of two temperatures: isotropic, not Maxwellian
    let spec = InitialDataSpec {
        kind: InitialKind::BiMaxwellian { t1: 0.4, t2: 1.6, separation: 0.0 },
        m0: 1.0,
    };
    let times: Vec<f64> = (0..=8).map(|i| 0.5 * i as f64).collect();
    let mut cfg = RunConfig::new(3, 20_000, 8, 3, spec, times.clone());
    cfg.s = 2.0;
    cfg.n = 2;
    cfg.series_n = 2;
    cfg.dt_max = 0.005;
    let traj = run(&k, &cfg)?;
    // isotropic P = (m2/3) I gives |P|² = m2²/3, so m_4 relaxes at rate 1/3 to (5/3) m2²
    let m2: f64 = 3.0;
    let m4_inf = 5.0 / 3.0 * m2 * m2;
    let (m40, _) = traj.moment(0, 2);
    for (i, &t) in times.iter().enumerate() {
        let (m, se) = traj.moment(i, 2);
        let ode = m4_inf + (m40 - m4_inf) * (-t / 3.0f64).exp();
        println!("t = {t:<4} m_4 = {m:.4} ± {se:.4}  ODE {ode:.4}");
    }
    Ok(())
}
