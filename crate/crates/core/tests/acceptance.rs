//! End-to-end acceptance run: one line per criterion, nonzero exit on any failure.

use boltzmann_moments::bounds::{
    build_params, scalar_upper_solution, Branch, HierarchyParams, InitialMoment, Mode, ParamRequest,
};
use boltzmann_moments::dsmc::{self, ConvolutionProbe, InitialDataSpec, InitialKind, RunConfig, Trajectory, ZSchedule};
use boltzmann_moments::harness::{comparison_slack, envelope_for, largest_safe_a};
use boltzmann_moments::povzner::{gamma_symmetric_table, gamma_table, verify_povzner, GammaTable};
use boltzmann_moments::sum::MeanVar;
use boltzmann_moments::{make_kernel, make_maxwell_kernel, suites, AngularKernel, AngularProfile};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::time::{Duration, Instant};

const SEED: u64 = 20_240_601;

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        passed,
        detail: detail.into(),
    }
}

fn hard_spheres() -> AngularKernel {
    make_kernel(3, 1.0, AngularProfile::Constant).unwrap()
}

fn within(elapsed: Duration, limit_s: u64) -> bool {
    elapsed <= Duration::from_secs(limit_s)
}

/// Constant b in d = 3 makes the polar cosine uniform, so the symmetric
/// reduction is `∫_{-1}^{1} ((1+z)/2)^p dz`; composite Simpson.
fn reduced_gamma(p: f64) -> f64 {
    let n = 20_000;
    let h = 2.0 / n as f64;
    let f = |z: f64| ((1.0 + z) / 2.0).powf(p);
    let mut acc = f(-1.0) + f(1.0);
    for i in 1..n {
        let z = -1.0 + i as f64 * h;
        acc += if i % 2 == 1 { 4.0 } else { 2.0 } * f(z);
    }
    acc * h / 3.0
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let k = hard_spheres();
    let orders: Vec<f64> = (1..=40).map(|p| p as f64).collect();
    let table = gamma_table(&k, &orders, 4096).unwrap();
    let mut worst_closed: f64 = 0.0;
    let mut worst_reduced: f64 = 0.0;
    for (&p, &g) in orders.iter().zip(&table.gamma) {
        worst_closed = worst_closed.max((g / (2.0 / (p + 1.0)) - 1.0).abs());
        worst_reduced = worst_reduced.max((g / reduced_gamma(p) - 1.0).abs());
    }
    let g1 = (table.gamma[0] - 1.0).abs();
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let report = verify_povzner(&k, &table, 10_000, 1e-6, &mut rng);
    let elapsed = start.elapsed();
    let passed = worst_closed <= 0.02 && worst_reduced <= 0.02 && g1 <= 1e-6 && report.passed && within(elapsed, 120);
    outcome(
        passed,
        format!(
            "Povzner constants p=1..40: max rel dev vs 2/(p+1) {worst_closed:.2e}, vs 1D reduction {worst_reduced:.2e} (tol 2e-2); |gamma_1-1| = {g1:.1e}; {} trials, worst slack {:.2e} (tol 1e-6); {:.1}s",
            report.trials,
            report.worst_slack(),
            elapsed.as_secs_f64()
        ),
    )
}

fn criterion_2() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(SEED + 2);
    let conv = suites::convolution_suite(&mut rng, 1000, 30, &[0.1, 1.0, 5.0]).unwrap();
    let binom = suites::binomial_suite(&mut rng, 10_000).unwrap();
    let kern = suites::kernel_inequality_suite(&mut rng, 3, 100_000, &[0.25, 0.5, 1.0, 1.5, 2.0]);
    let kern_violations: usize = kern.iter().map(|o| o.violations).sum();
    let kern_cases: usize = kern.iter().map(|o| o.cases).sum();
    let elapsed = start.elapsed();
    let passed = conv.passed() && binom.passed() && kern.iter().all(|o| o.passed()) && within(elapsed, 60);
    outcome(
        passed,
        format!(
            "inequalities: convolution {}/{} violations, binomial bracket {}/{}, kernel bounds {kern_violations}/{kern_cases}; {:.1}s",
            conv.violations,
            conv.cases,
            binom.violations,
            binom.cases,
            elapsed.as_secs_f64()
        ),
    )
}

fn criterion_3() -> Outcome {
    let start = Instant::now();
    let mut cfg = RunConfig::new(3, 100_000, 1, SEED + 3, InitialDataSpec::maxwellian(3, 1.0), (0..=10).map(f64::from).collect());
    cfg.n = 2;
    cfg.series_n = 2;
    let traj = dsmc::run(&hard_spheres(), &cfg).unwrap();
    let elapsed = start.elapsed();
    let (de, dj) = (traj.max_energy_drift(), traj.max_momentum_drift());
    let collisions = traj.replicas[0].collisions;
    outcome(
        de < 1e-9 && dj < 1e-10 && within(elapsed, 300),
        format!(
            "conservation N=1e5, t in [0,10], {collisions} collisions: energy drift {de:.2e} (tol 1e-9), momentum drift {dj:.2e} (tol 1e-10); {:.1}s",
            elapsed.as_secs_f64()
        ),
    )
}

/// Maxwellian hard-sphere run shared by criteria 4 and 9 (`s = 1`, orders `0..=12`).
fn maxwellian_run() -> Trajectory {
    let mut cfg = RunConfig::new(3, 20_000, 16, SEED + 4, InitialDataSpec::maxwellian(3, 1.0), (0..=5).map(f64::from).collect());
    cfg.s = 1.0;
    cfg.n = 12;
    cfg.series_n = 12;
    dsmc::run(&hard_spheres(), &cfg).unwrap()
}

fn criterion_4(traj: &Trajectory) -> Outcome {
    // m_{2k} = (2T)^k Γ(k + 3/2) / Γ(3/2) with T = 1: 3, 15, 105
    let exact = [(2usize, 3.0), (4, 15.0), (6, 105.0)];
    let mut worst: f64 = 0.0;
    for ti in 0..traj.times.len() {
        for &(p, e) in &exact {
            let (m, se) = traj.moment(ti, p);
            worst = worst.max((m - e).abs() / se);
        }
    }
    outcome(
        worst <= 3.0,
        format!(
            "Maxwellian equilibrium, R=16: max |m_k - exact| / stderr over k in {{2,4,6}} and {} times = {worst:.2} (tol 3)",
            traj.times.len()
        ),
    )
}

/// Closed moment system for constant-b Maxwell molecules in d = 3:
/// `m4' = -(m0/3) m4 + (2/3) m2² - (1/3)|P|²`, `P' = ½[-m0 P + J⊗J + (m0 m2 - |J|²)/3 I]`.
fn maxwell_rhs(m0: f64, m2: f64, j: &[f64], y: &[f64; 10]) -> [f64; 10] {
    let p = &y[1..];
    let pf2: f64 = p.iter().map(|x| x * x).sum();
    let j2: f64 = j.iter().map(|x| x * x).sum();
    let mut out = [0.0; 10];
    out[0] = -m0 / 3.0 * y[0] + 2.0 / 3.0 * m2 * m2 - pf2 / 3.0;
    for a in 0..3 {
        for b in 0..3 {
            let iso = if a == b { (m0 * m2 - j2) / 3.0 } else { 0.0 };
            out[1 + 3 * a + b] = 0.5 * (-m0 * p[3 * a + b] + j[a] * j[b] + iso);
        }
    }
    out
}

fn rk4_maxwell(m0: f64, m2: f64, j: &[f64], y0: [f64; 10], t: f64) -> [f64; 10] {
    let steps = ((t / 1e-3).ceil() as usize).max(1);
    let h = t / steps as f64;
    let mut y = y0;
    let add = |y: &[f64; 10], k: &[f64; 10], c: f64| {
        let mut o = *y;
        for i in 0..10 {
            o[i] += c * k[i];
        }
        o
    };
    for _ in 0..steps {
        let k1 = maxwell_rhs(m0, m2, j, &y);
        let k2 = maxwell_rhs(m0, m2, j, &add(&y, &k1, h / 2.0));
        let k3 = maxwell_rhs(m0, m2, j, &add(&y, &k2, h / 2.0));
        let k4 = maxwell_rhs(m0, m2, j, &add(&y, &k3, h));
        for i in 0..10 {
            y[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
    }
    y
}

fn criterion_5() -> Outcome {
    let k = make_maxwell_kernel(3, AngularProfile::Constant).unwrap();
    let initial = InitialDataSpec {
        kind: InitialKind::BiMaxwellian {
            t1: 0.5,
            t2: 1.5,
            separation: 2.0,
        },
        m0: 1.0,
    };
    let times: Vec<f64> = (0..=6).map(|i| 0.5 * i as f64).collect();
    let mut cfg = RunConfig::new(3, 20_000, 16, SEED + 5, initial, times.clone());
    cfg.s = 2.0;
    cfg.n = 2;
    cfg.series_n = 2;
    cfg.dt_max = 0.005;
    let traj = dsmc::run(&k, &cfg).unwrap();
    let mut worst: f64 = 0.0;
    let mut rel: f64 = 0.0;
    for (ti, &t) in times.iter().enumerate().skip(1) {
        let mut diff = MeanVar::default();
        let mut oracle = MeanVar::default();
        for r in &traj.replicas {
            let m0 = r.moments[0].m0();
            let mut y0 = [0.0; 10];
            y0[0] = r.moments[0].m[2];
            y0[1..].copy_from_slice(&r.tensor[0]);
            let y = rk4_maxwell(m0, r.energy[0], &r.momentum[0], y0, t);
            diff.push(r.moments[ti].m[2] - y[0]);
            oracle.push(y[0]);
        }
        worst = worst.max(diff.mean().abs() / diff.stderr());
        rel = rel.max((diff.mean() / oracle.mean()).abs());
    }
    outcome(
        worst <= 3.0,
        format!("Maxwell molecules, bi-Maxwellian start: max |m_4 - ODE| / stderr = {worst:.2} (tol 3), max relative gap {rel:.1e}"),
    )
}

fn heavy_tail_config(dt_scale: f64, t_grid: Vec<f64>, a: f64) -> RunConfig {
    let mut cfg = RunConfig::new(3, 20_000, 16, SEED + 6, InitialDataSpec::heavy_tail(0.5), t_grid);
    cfg.s = 1.0;
    cfg.n = 12;
    cfg.series_n = 20;
    cfg.dt_max *= dt_scale;
    cfg.accept_cap *= dt_scale;
    cfg.z_schedule = ZSchedule::Creation { a };
    cfg.convolution = Some(ConvolutionProbe {
        s_values: vec![0.5, 1.0],
        radii: (0..=10).map(f64::from).collect(),
        directions: 4,
    });
    cfg
}

fn creation_grid(with_tail: bool) -> Vec<f64> {
    let mut g = vec![0.0];
    g.extend((0..=12).map(|i| 1e-3 * 10f64.powf(i as f64 / 4.0)));
    if with_tail {
        g.extend([2.0, 5.0, 10.0]);
    }
    g
}

fn creation_params(table: &GammaTable, m2: f64) -> HierarchyParams {
    build_params(
        &hard_spheres(),
        table,
        &ParamRequest {
            s: 1.0,
            m0: 1.0,
            m2,
            branch: Branch::Elementary,
            mode: Mode::Creation,
            ensemble0: None,
            a0: 0.0,
            c0: 0.0,
        },
    )
    .unwrap()
}

fn max_energy(traj: &Trajectory) -> f64 {
    traj.replicas.iter().map(|r| r.energy[0]).fold(0.0, f64::max)
}

/// Per-time outcome of `(m_4 - 3σ) t^4 ≤ C_{s,4}` on `[1e-3, 1]`, and the largest raw `m_4 t^4`.
fn m4_checks(traj: &Trajectory, c4: f64) -> (Vec<bool>, f64) {
    let mut out = Vec::new();
    let mut raw: f64 = 0.0;
    for (ti, &t) in traj.times.iter().enumerate() {
        if !(1e-3..=1.0).contains(&t) {
            continue;
        }
        let (m, se) = traj.moment(ti, 4);
        out.push((m - 3.0 * se) * t.powi(4) <= c4);
        raw = raw.max(m * t.powi(4));
    }
    (out, raw)
}

fn exp_checks(traj: &Trajectory, c: f64) -> Vec<bool> {
    traj.exp
        .iter()
        .map(|r| r.direct - 3.0 * r.direct_stderr <= c && r.series - 3.0 * r.series_stderr <= c)
        .collect()
}

struct CreationRuns {
    table: GammaTable,
    traj: Trajectory,
    params: HierarchyParams,
    a: f64,
    elapsed: Duration,
    halved: Trajectory,
    halved_params: HierarchyParams,
}

fn creation_runs() -> CreationRuns {
    let start = Instant::now();
    let k = hard_spheres();
    let orders: Vec<f64> = (1..=80).map(|p| p as f64).collect();
    let table = gamma_symmetric_table(&k, &orders).unwrap();
    let a = creation_params(&table, 6.0).a;
    let traj = dsmc::run(&k, &heavy_tail_config(1.0, creation_grid(true), a)).unwrap();
    let params = creation_params(&table, max_energy(&traj).max(6.0));
    let halved = dsmc::run(&k, &heavy_tail_config(0.5, creation_grid(false), a)).unwrap();
    let halved_params = creation_params(&table, max_energy(&halved).max(6.0));
    CreationRuns {
        table,
        traj,
        params,
        a,
        elapsed: start.elapsed(),
        halved,
        halved_params,
    }
}

fn criterion_6(c: &CreationRuns) -> Outcome {
    let c4 = scalar_upper_solution(4.0, &c.params, InitialMoment::Infinite, &[1.0]).unwrap().c_sp;
    let c4_half = scalar_upper_solution(4.0, &c.halved_params, InitialMoment::Infinite, &[1.0]).unwrap().c_sp;
    let (full, raw) = m4_checks(&c.traj, c4);
    let (half, raw_half) = m4_checks(&c.halved, c4_half);
    let finite = c.traj.moments.iter().skip(1).all(|mv| mv.m[4].is_finite());
    let consistent = full == half;
    let passed = finite && full.iter().all(|&x| x) && consistent && within(c.elapsed, 900);
    outcome(
        passed,
        format!(
            "moment creation, heavy tail delta=0.5: sup m_4 t^4 = {raw:.3e} (halved dt {raw_half:.3e}) vs C_s,4 = {c4:.3e}; {}/{} times pass, dt-halving agrees: {consistent}; {:.1}s",
            full.iter().filter(|&&x| x).count(),
            full.len(),
            c.elapsed.as_secs_f64()
        ),
    )
}

fn criterion_7(c: &CreationRuns) -> Outcome {
    let ceiling = c.params.c_bound;
    let checks = exp_checks(&c.traj, ceiling);
    let worst = c.traj.exp.iter().map(|r| r.direct.max(r.series)).fold(0.0, f64::max);
    let safe = largest_safe_a(&c.traj, ceiling, 20, true);
    outcome(
        checks.iter().all(|&x| x) && !checks.is_empty(),
        format!(
            "exponential creation: a = {:.3e}, T = {:.3e}, C = {ceiling:.4}; max E over {} times {worst:.4} (direct and n=20 series); ln C_p0 = {:.3e}; largest empirically safe a on this run {safe:.3e}",
            c.a,
            c.params.t_final,
            checks.len(),
            c.params.ln_c_p0
        ),
    )
}

fn criterion_8(table: &GammaTable) -> Outcome {
    let k = hard_spheres();
    let (a0, c0) = (0.25, 0.5f64.powf(-1.5));
    let params = build_params(
        &k,
        table,
        &ParamRequest {
            s: 2.0,
            m0: 1.0,
            m2: 3.0,
            branch: Branch::Elementary,
            mode: Mode::Propagation,
            ensemble0: None,
            a0,
            c0,
        },
    )
    .unwrap();
    let mut cfg = RunConfig::new(3, 20_000, 16, SEED + 8, InitialDataSpec::maxwellian(3, 1.0), (0..=10).map(f64::from).collect());
    cfg.s = 2.0;
    cfg.n = 12;
    cfg.series_n = 12;
    cfg.z_schedule = ZSchedule::Propagation { a: params.a };
    let traj = dsmc::run(&k, &cfg).unwrap();
    let ceiling = 4.0 * params.m0;
    let checks = exp_checks(&traj, ceiling);
    let worst = traj.exp.iter().map(|r| r.direct.max(r.series)).fold(0.0, f64::max);
    let safe = largest_safe_a(&traj, ceiling, 12, false);
    outcome(
        checks.iter().all(|&x| x) && (params.c_bound - ceiling).abs() < 1e-12,
        format!(
            "exponential propagation, Maxwellian s=2: a = {:.3e}, max E over {} times {worst:.4} vs 4 m0; largest empirically safe a on this run {safe:.3e}",
            params.a,
            checks.len()
        ),
    )
}

fn criterion_9(maxwellian: &Trajectory, c: &CreationRuns) -> Outcome {
    let env_m = envelope_for(&creation_params(&c.table, max_energy(maxwellian).max(3.0)), 12, &maxwellian.times).unwrap();
    let env_h = envelope_for(&c.params, 12, &c.traj.times).unwrap();
    let (sm, vm) = comparison_slack(maxwellian, &env_m, 12);
    let (sh, vh) = comparison_slack(&c.traj, &env_h, 12);
    outcome(
        vm == 0 && vh == 0,
        format!("comparison principle p<=12: Maxwellian run {vm} violations (min rel slack {sm:.3}), heavy-tail run {vh} violations (min rel slack {sh:.3})"),
    )
}

fn criterion_10(c: &CreationRuns) -> Outcome {
    let mut parts = Vec::new();
    let mut passed = true;
    for s in [0.5, 1.0] {
        let lb = dsmc::lower_convolution_check(&c.traj, s).unwrap();
        passed &= lb.c_fit > 1e-3 && lb.c_f0_s > 1e-3;
        parts.push(format!("s={s}: c_s = {:.3e}, C_f0,s = {:.3e}", lb.c_fit, lb.c_f0_s));
    }
    outcome(passed, format!("lower convolution bound over t in [0,10]: {} (tol > 1e-3)", parts.join("; ")))
}

fn main() {
    let start = Instant::now();
    let mut results: Vec<(usize, Outcome)> = Vec::new();
    let mut report = |i: usize, o: Outcome| {
        println!("criterion {i:>2}: {} | {}", if o.passed { "PASS" } else { "FAIL" }, o.detail);
        results.push((i, o));
    };
    report(1, criterion_1());
    report(2, criterion_2());
    report(3, criterion_3());
    let maxwellian = maxwellian_run();
    report(4, criterion_4(&maxwellian));
    report(5, criterion_5());
    let creation = creation_runs();
    report(6, criterion_6(&creation));
    report(7, criterion_7(&creation));
    report(8, criterion_8(&creation.table));
    report(9, criterion_9(&maxwellian, &creation));
    report(10, criterion_10(&creation));
    let failed: Vec<usize> = results.iter().filter(|(_, o)| !o.passed).map(|(i, _)| *i).collect();
    println!(
        "acceptance: {}/{} criteria pass in {:.0}s",
        results.len() - failed.len(),
        results.len(),
        start.elapsed().as_secs_f64()
    );
    if !failed.is_empty() {
        println!("failed criteria: {failed:?}");
        std::process::exit(1);
    }
}
