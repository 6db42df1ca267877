//! Two cold beams relaxing to a Maxwellian under hard-sphere collisions.

use boltzmann_moments::dsmc::{excess_kurtosis, sample_initial, InitialDataSpec, InitialKind};
use boltzmann_moments::{make_kernel, AngularProfile};

fn main() -> boltzmann_moments::Result<()> {
    let k = make_kernel(3, 1.0, AngularProfile::Constant)?;
    let spec = InitialDataSpec {
        kind: InitialKind::BiMaxwellian { t1: 0.1, t2: 0.1, separation: 3.0 },
        m0: 1.0,
    };
    let mut e = sample_initial(&spec, 3, 50_000, 42, 0)?;
    let (j0, e0) = (e.momentum(), e.energy());
    println!("{:>5} {:>10} {:>10} {:>10} {:>9}", "t", "kurt_x", "kurt_y", "m_4", "collisions");
    for t in [0.0, 0.25, 0.5, 1.0, 2.0, 4.0] {
        e.advance_to(&k, t, 0.01, 0.1)?;
        let kurt = excess_kurtosis(&e);
        let m4 = e.moments(2.0, 1.0, 2)?.m[2];
        println!("{t:>5} {:>10.4} {:>10.4} {m4:>10.4} {:>9}", kurt[0], kurt[1], e.collisions);
    }
    let dj: f64 = e.momentum().iter().zip(&j0).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    println!("energy drift {:.1e}, momentum drift {dj:.1e}", (e.energy() - e0).abs() / e0);
    Ok(())
}
