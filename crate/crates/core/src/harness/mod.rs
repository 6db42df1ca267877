//! Configuration, experiment orchestration and reports behind the `bmlab` tool.

mod config;
mod plot;

pub use config::{
    parse_grid, parse_override, BoundsBlock, ExperimentConfig, ExperimentMode, GammaBlock, GammaMethodChoice, KernelBlock,
    RunBlock,
};
pub use plot::{emit_plots, PlotOutcome};

use crate::bounds::{
    build_params, integrate_hierarchy, scalar_trajectory, scalar_upper_solution, Branch, EnvelopeTrajectory,
    HierarchyParams, HierarchyStart, InitialMoment, Mode, ParamRequest,
};
use crate::dsmc::{self, ConvolutionProbe, InitialDataSpec, RunConfig, Trajectory, ZSchedule};
use crate::error::{Error, Result};
use crate::kernel::AngularKernel;
use crate::moments::exp_partial_sums;
use crate::povzner::{gamma_symmetric_table, gamma_table, symmetrization_is_monotone, verify_povzner, GammaTable};
use crate::suites;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use statrs::function::gamma::ln_gamma;
use std::fs::File;
use std::io::BufWriter;
use std::path::PathBuf;

/// One checked inequality `measured ≤ limit` (or a pass/fail count).
#[derive(Debug, Clone, Serialize)]
pub struct Assertion {
    pub name: String,
    pub passed: bool,
    pub measured: f64,
    pub limit: f64,
    pub tolerance: String,
    /// `limit - measured`, signed; negative means failed.
    pub slack: f64,
}

impl Assertion {
    pub fn at_most(name: impl Into<String>, measured: f64, limit: f64, tolerance: impl Into<String>) -> Self {
        Assertion {
            name: name.into(),
            passed: measured <= limit,
            measured,
            limit,
            tolerance: tolerance.into(),
            slack: limit - measured,
        }
    }

    pub fn at_least(name: impl Into<String>, measured: f64, limit: f64, tolerance: impl Into<String>) -> Self {
        Assertion {
            name: name.into(),
            passed: measured >= limit,
            measured,
            limit,
            tolerance: tolerance.into(),
            slack: measured - limit,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct RunReport {
    pub mode: ExperimentMode,
    pub config_echo: String,
    pub config_hash: String,
    pub constants: Option<HierarchyParams>,
    pub assertions: Vec<Assertion>,
    pub notes: Vec<String>,
    pub manifest: Vec<String>,
    pub error: Option<String>,
}

impl RunReport {
    fn new(cfg: &ExperimentConfig) -> Self {
        RunReport {
            mode: cfg.mode,
            config_echo: cfg.echo(),
            config_hash: cfg.content_hash(),
            constants: None,
            assertions: Vec::new(),
            notes: Vec::new(),
            manifest: Vec::new(),
            error: None,
        }
    }

    pub fn passed(&self) -> bool {
        self.error.is_none() && self.assertions.iter().all(|a| a.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &Assertion> {
        self.assertions.iter().filter(|a| !a.passed)
    }

    /// Human-readable summary, one line per assertion.
    pub fn summary(&self) -> String {
        let mut s = format!("mode {} (config {})\n", self.mode.as_str(), &self.config_hash[..12]);
        for a in &self.assertions {
            s += &format!(
                "  [{}] {}: measured {:.6e}, limit {:.6e}, slack {:.3e} ({})\n",
                if a.passed { "pass" } else { "FAIL" },
                a.name,
                a.measured,
                a.limit,
                a.slack,
                a.tolerance
            );
        }
        for n in &self.notes {
            s += &format!("  note: {n}\n");
        }
        if let Some(e) = &self.error {
            s += &format!("  error: {e}\n");
        }
        s
    }
}

struct Ctx<'a> {
    cfg: &'a ExperimentConfig,
    dir: PathBuf,
    report: RunReport,
}

impl Ctx<'_> {
    fn create(&mut self, name: &str) -> Result<BufWriter<File>> {
        self.report.manifest.push(name.to_string());
        Ok(BufWriter::new(File::create(self.dir.join(name))?))
    }

    fn rng(&self, stream: u64) -> ChaCha8Rng {
        dsmc::replica_rng(self.cfg.seed, u64::MAX - stream)
    }

    fn push(&mut self, a: Assertion) {
        self.report.assertions.push(a);
    }
}

/// Runs `cfg` and writes its CSVs plus `report.json` into `cfg.out`.
///
/// Invalid configurations and unwritable outputs are returned as errors;
/// failures inside a module are embedded in the report instead.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunReport> {
    cfg.validate()?;
    let kernel = cfg.kernel.build()?;
    std::fs::create_dir_all(&cfg.out)?;
    let mut ctx = Ctx {
        cfg,
        dir: cfg.out.clone(),
        report: RunReport::new(cfg),
    };
    std::fs::write(ctx.dir.join("config.ini"), cfg.echo())?;
    ctx.report.manifest.push("config.ini".into());
    let outcome = match cfg.mode {
        ExperimentMode::Gamma => gamma_mode(&mut ctx, &kernel),
        ExperimentMode::Bounds => bounds_mode(&mut ctx, &kernel),
        ExperimentMode::Simulate => simulate_mode(&mut ctx, &kernel).map(|_| ()),
        ExperimentMode::Verify => verify_mode(&mut ctx, &kernel),
        ExperimentMode::Creation => creation_mode(&mut ctx, &kernel),
        ExperimentMode::Propagation => propagation_mode(&mut ctx, &kernel),
    };
    match outcome {
        Err(e @ Error::Io(_)) => return Err(e),
        Err(e) => ctx.report.error = Some(e.to_string()),
        Ok(()) => {}
    }
    ctx.report.manifest.push("report.json".into());
    let mut report = ctx.report;
    report.manifest.sort();
    report.manifest.dedup();
    serde_json::to_writer_pretty(BufWriter::new(File::create(cfg.out.join("report.json"))?), &report)?;
    Ok(report)
}

/// Integer orders `1..=max_order` by the configured method.
pub fn build_gamma(kernel: &AngularKernel, block: &GammaBlock) -> Result<GammaTable> {
    let orders: Vec<f64> = (1..=block.max_order).map(|p| p as f64).collect();
    let symmetric = match block.method {
        GammaMethodChoice::Auto => symmetrization_is_monotone(kernel),
        GammaMethodChoice::Search => false,
        GammaMethodChoice::Symmetric => true,
    };
    if symmetric {
        gamma_symmetric_table(kernel, &orders)
    } else {
        gamma_table(kernel, &orders, block.budget)
    }
}

fn gamma_mode(ctx: &mut Ctx, kernel: &AngularKernel) -> Result<()> {
    let block = &ctx.cfg.gamma;
    let orders: Vec<f64> = (1..=block.max_order).map(|p| p as f64).collect();
    let table = gamma_table(kernel, &orders, block.budget)?;
    let mut rng = ctx.rng(1);
    let report = verify_povzner(kernel, &table, block.trials, block.tolerance, &mut rng);
    table.write_csv(ctx.create("gamma.csv")?, Some(&report))?;
    ctx.push(Assertion::at_most(
        "gamma_1 = 1",
        (table.gamma[0] - 1.0).abs(),
        1e-6,
        "absolute 1e-6",
    ));
    ctx.push(Assertion::at_least(
        format!("random configurations below gamma_p ({} trials)", report.trials),
        report.worst_slack(),
        -block.tolerance,
        format!("relative {:e}", block.tolerance),
    ));
    if symmetrization_is_monotone(kernel) {
        let oracle = gamma_symmetric_table(kernel, &orders)?;
        let worst = table
            .gamma
            .iter()
            .zip(&oracle.gamma)
            .map(|(g, o)| ((g - o) / o).abs())
            .fold(0.0, f64::max);
        ctx.push(Assertion::at_most("sup-search vs symmetric reduction", worst, 0.02, "relative 2%"));
    }
    Ok(())
}

/// Mass and energy of the data the bounds are built for.
fn mass_energy(spec: &InitialDataSpec, d: usize) -> (f64, f64) {
    (spec.m0, spec.m2(d))
}

fn request<'a>(cfg: &ExperimentConfig, mode: Mode, m0: f64, m2: f64, ensemble0: Option<&'a [f64]>) -> ParamRequest<'a> {
    ParamRequest {
        s: cfg.run.s,
        m0,
        m2,
        branch: cfg.bounds.branch,
        mode,
        ensemble0,
        a0: cfg.bounds.a0.unwrap_or(0.0),
        c0: cfg.bounds.c0.unwrap_or(0.0),
    }
}

/// `C0 p! / a0^p` for `sp > 2`, the interpolation bound below.
fn hypothesis_moments(params: &HierarchyParams, n: usize) -> Vec<InitialMoment> {
    (0..=n)
        .map(|p| {
            let pf = p as f64;
            if params.s * pf <= 2.0 {
                InitialMoment::Finite(params.interpolation_bound(pf))
            } else {
                InitialMoment::Finite((params.c0.ln() + ln_gamma(pf + 1.0) - pf * params.a0.ln()).exp())
            }
        })
        .collect()
}

/// Creation envelopes come from the coupled hierarchy; propagation from the scalar solutions.
pub fn envelope_for(params: &HierarchyParams, n: usize, t_grid: &[f64]) -> Result<EnvelopeTrajectory> {
    match params.mode {
        Mode::Creation => integrate_hierarchy(params, &HierarchyStart::FromEnergy, n, t_grid),
        Mode::Propagation => scalar_trajectory(params, &hypothesis_moments(params, n), t_grid),
    }
}

fn fitted_sample(cfg: &ExperimentConfig) -> Result<Option<Vec<f64>>> {
    if cfg.bounds.branch != Branch::Fitted {
        return Ok(None);
    }
    let ens = dsmc::sample_initial(&cfg.initial, cfg.kernel.dimension, cfg.run.particles, cfg.seed, 0)?;
    Ok(Some(ens.velocities))
}

fn bounds_mode(ctx: &mut Ctx, kernel: &AngularKernel) -> Result<()> {
    let cfg = ctx.cfg;
    let table = build_gamma(kernel, &cfg.gamma)?;
    table.write_csv(ctx.create("gamma.csv")?, None)?;
    let mode = if (cfg.run.s - kernel.beta()).abs() <= 1e-12 && cfg.bounds.a0.is_none() {
        Mode::Creation
    } else {
        Mode::Propagation
    };
    let (m0, m2) = mass_energy(&cfg.initial, cfg.kernel.dimension);
    let sample = fitted_sample(cfg)?;
    let params = build_params(kernel, &table, &request(cfg, mode, m0, m2, sample.as_deref()))?;
    params.write_csv(ctx.create("constants.csv")?)?;
    let env = envelope_for(&params, cfg.run.n, &cfg.run.t_grid)?;
    env.write_csv(ctx.create("envelope.csv")?)?;
    let bad = env
        .t_grid
        .iter()
        .zip(&env.values)
        .filter(|(t, row)| **t > 0.0 && row.iter().any(|m| !(m.is_finite() && *m >= 0.0)))
        .count();
    ctx.push(Assertion::at_most("envelope finite and nonnegative for t > 0", bad as f64, 0.0, "exact"));
    ctx.report.notes.extend(params.diagnostics.iter().cloned());
    ctx.report.constants = Some(params);
    Ok(())
}

fn run_config(cfg: &ExperimentConfig, z: ZSchedule, probe: bool) -> RunConfig {
    let r = &cfg.run;
    let mut rc = RunConfig::new(
        cfg.kernel.dimension,
        r.particles,
        r.replicas,
        cfg.seed,
        cfg.initial.clone(),
        r.t_grid.clone(),
    );
    rc.dt_max = r.dt_max;
    rc.accept_cap = r.accept_cap;
    rc.s = r.s;
    rc.n = r.n;
    rc.series_n = r.series_n;
    rc.z_schedule = z;
    rc.keep_final = r.snapshot;
    if probe {
        rc.convolution = Some(ConvolutionProbe {
            s_values: vec![0.5, 1.0],
            radii: (0..=20).map(|i| 0.5 * i as f64).collect(),
            directions: 6,
        });
    }
    rc
}

fn write_trajectory(ctx: &mut Ctx, traj: &Trajectory) -> Result<()> {
    traj.write_csv(ctx.create("trajectory.csv")?)?;
    traj.write_conservation_csv(ctx.create("conservation.csv")?)?;
    for r in &traj.replicas {
        if let Some(ens) = &r.final_state {
            let name = format!("snapshot_r{}.bin", r.replica_id);
            dsmc::write_snapshot(ctx.dir.join(&name), ens)?;
            ctx.report.manifest.push(name);
        }
    }
    Ok(())
}

fn conservation_assertions(ctx: &mut Ctx, traj: &Trajectory) {
    ctx.push(Assertion::at_most("energy relative drift", traj.max_energy_drift(), 1e-9, "1e-9"));
    ctx.push(Assertion::at_most("momentum drift per component", traj.max_momentum_drift(), 1e-10, "1e-10, normalised by sqrt(m0 m2)"));
}

fn simulate_mode(ctx: &mut Ctx, kernel: &AngularKernel) -> Result<Trajectory> {
    let traj = dsmc::run(kernel, &run_config(ctx.cfg, ZSchedule::None, false))?;
    write_trajectory(ctx, &traj)?;
    conservation_assertions(ctx, &traj);
    Ok(traj)
}

fn verify_mode(ctx: &mut Ctx, kernel: &AngularKernel) -> Result<()> {
    let block = &ctx.cfg.gamma;
    let orders: Vec<f64> = (1..=block.max_order.min(40)).map(|p| p as f64).collect();
    let table = gamma_table(kernel, &orders, block.budget)?;
    let mut rng = ctx.rng(2);
    let pov = verify_povzner(kernel, &table, block.trials, block.tolerance, &mut rng);
    table.write_csv(ctx.create("gamma.csv")?, Some(&pov))?;
    let mut outcomes = vec![
        suites::convolution_suite(&mut rng, 1000, 30, &[0.1, 1.0, 5.0])?,
        suites::binomial_suite(&mut rng, 10_000)?,
    ];
    outcomes.extend(suites::kernel_inequality_suite(&mut rng, kernel.dimension(), 100_000, &[0.25, 0.5, 1.0, 1.5, 2.0]));
    let mut w = csv::Writer::from_writer(ctx.create("verify.csv")?);
    w.write_record(["suite", "cases", "violations", "worst_slack", "tolerance"])?;
    w.write_record([
        "povzner".to_string(),
        pov.trials.to_string(),
        pov.failing_orders.len().to_string(),
        format!("{:e}", pov.worst_slack()),
        format!("{:e}", pov.tolerance),
    ])?;
    for o in &outcomes {
        w.write_record([
            o.name.clone(),
            o.cases.to_string(),
            o.violations.to_string(),
            o.worst_slack.map_or("".into(), |s| format!("{s:e}")),
            format!("{:e}", o.tolerance),
        ])?;
    }
    w.flush()?;
    ctx.push(Assertion::at_least("povzner", pov.worst_slack(), -block.tolerance, format!("relative {:e}", block.tolerance)));
    for o in outcomes {
        ctx.push(Assertion::at_most(
            format!("{} ({} cases)", o.name, o.cases),
            o.violations as f64,
            0.0,
            format!("relative {:e}", o.tolerance),
        ));
    }
    Ok(())
}

/// Largest `E` estimate minus `k` standard errors, compared against `ceiling` at every time.
fn exp_assertions(ctx: &mut Ctx, traj: &Trajectory, ceiling: f64, label: &str) {
    for (name, pick) in [("direct", 0usize), ("series", 1)] {
        let mut worst = f64::NEG_INFINITY;
        let mut flagged = 0;
        for r in &traj.exp {
            let (v, se) = if pick == 0 { (r.direct, r.direct_stderr) } else { (r.series, r.series_stderr) };
            if !v.is_finite() {
                flagged += 1;
                continue;
            }
            worst = worst.max(v - 3.0 * se);
        }
        if flagged > 0 {
            ctx.report.notes.push(format!("{flagged} {name} exponential-moment estimates overflowed"));
        }
        ctx.push(Assertion::at_most(format!("{label} ({name} estimator)"), worst, ceiling, "3 sigma"));
    }
}

/// Empirical moments minus `3σ` never exceed the envelope, orders `1 ≤ p ≤ n`, times `t > 0`.
/// Returns the smallest relative slack and the number of violations.
pub fn comparison_slack(traj: &Trajectory, env: &EnvelopeTrajectory, n: usize) -> (f64, usize) {
    let mut worst = f64::INFINITY;
    let mut violations = 0;
    for (ti, &t) in traj.times.iter().enumerate() {
        if t <= 0.0 {
            continue;
        }
        let Some(ei) = env.t_grid.iter().position(|&x| x == t) else { continue };
        for p in 1..=n.min(env.n()) {
            let (m, se) = traj.moment(ti, p);
            let bound = env.values[ei][p];
            let slack = (bound - (m - 3.0 * se)) / bound.max(f64::MIN_POSITIVE);
            if slack < 0.0 {
                violations += 1;
            }
            worst = worst.min(slack);
        }
    }
    (worst, violations)
}

/// Largest replica energy: the bounds for every replica hold with it.
fn empirical_m2(traj: &Trajectory) -> f64 {
    traj.replicas.iter().map(|r| r.energy[0]).fold(0.0, f64::max)
}

/// Largest `a` on a doubling grid with `E^n(t, a min{t,1}) ≤ ceiling` along the mean moments.
pub fn largest_safe_a(traj: &Trajectory, ceiling: f64, n: usize, creation: bool) -> f64 {
    let ok = |a: f64| {
        traj.moments.iter().all(|mv| {
            let z = if creation { a * mv.time.min(1.0) } else { a };
            exp_partial_sums(mv, z, n.min(mv.n)).map_or(false, |e| e.e_n <= ceiling)
        })
    };
    let (mut lo, mut hi) = (0.0, 1e-6);
    while ok(hi) && hi < 1e6 {
        lo = hi;
        hi *= 2.0;
    }
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if ok(mid) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    lo
}

fn creation_mode(ctx: &mut Ctx, kernel: &AngularKernel) -> Result<()> {
    let cfg = ctx.cfg;
    let table = build_gamma(kernel, &cfg.gamma)?;
    table.write_csv(ctx.create("gamma.csv")?, None)?;
    let (m0, m2_law) = mass_energy(&cfg.initial, cfg.kernel.dimension);
    // a is needed before the run; it depends on the data only through m0 and m2
    let sample = fitted_sample(cfg)?;
    let pre = build_params(kernel, &table, &request(cfg, Mode::Creation, m0, m2_law, sample.as_deref()))?;
    let traj = dsmc::run(kernel, &run_config(cfg, ZSchedule::Creation { a: pre.a }, true))?;
    write_trajectory(ctx, &traj)?;
    let m2 = empirical_m2(&traj).max(m2_law);
    let params = build_params(kernel, &table, &request(cfg, Mode::Creation, m0, m2, sample.as_deref()))?;
    params.write_csv(ctx.create("constants.csv")?)?;
    let env = envelope_for(&params, cfg.run.n, &cfg.run.t_grid)?;
    env.write_csv(ctx.create("envelope.csv")?)?;
    ctx.report.notes.push(format!(
        "a = {:e}, T = {}, C = {}; envelopes use m2 = {m2} (larger of the largest replica energy and the law value {m2_law})",
        pre.a, params.t_final, params.c_bound
    ));
    exp_assertions(ctx, &traj, params.c_bound, "E^n(t, a min{t,1}) <= C");
    ctx.report.notes.push(format!(
        "largest a with the mean series below C on this run: {:.4e}",
        largest_safe_a(&traj, params.c_bound, cfg.run.series_n, true)
    ));
    // polynomial creation at order 4
    let p4 = (4.0 / params.s).round() as usize;
    if (params.s * p4 as f64 - 4.0).abs() < 1e-9 && p4 <= cfg.run.n {
        let c4 = scalar_upper_solution(p4 as f64, &params, InitialMoment::Infinite, &[1.0])?.c_sp;
        let mut worst = f64::NEG_INFINITY;
        let mut raw = f64::NEG_INFINITY;
        for (ti, &t) in traj.times.iter().enumerate() {
            if !(1e-3..=1.0).contains(&t) {
                continue;
            }
            let (m, se) = traj.moment(ti, p4);
            let w = t.min(1.0).powf(4.0 / params.beta);
            worst = worst.max(w * (m - 3.0 * se));
            raw = raw.max(w * m);
        }
        ctx.report.notes.push(format!("sup m_4(t) t^(4/beta) = {raw:.4e} against C_s,4 = {c4:.4e}"));
        ctx.push(Assertion::at_most("m_4(t) t^{4/beta} <= C_{s,4} on [1e-3, 1]", worst, c4, "3 sigma"));
    }
    let (slack, violations) = comparison_slack(&traj, &env, cfg.run.n);
    ctx.push(Assertion::at_least(
        format!("hierarchy envelope dominates moments p <= {} ({violations} violations)", cfg.run.n),
        slack,
        0.0,
        "3 sigma, relative slack",
    ));
    for s in [0.5, 1.0] {
        let lb = dsmc::lower_convolution_check(&traj, s)?;
        ctx.push(Assertion::at_least(format!("fitted c_s > 1e-3, s = {s}"), lb.c_fit, 1e-3, "strict"));
        ctx.push(Assertion::at_least(format!("fitted C_f0,s > 1e-3, s = {s}"), lb.c_f0_s, 1e-3, "strict"));
        ctx.report.notes.extend(lb.warnings);
    }
    ctx.report.notes.extend(params.diagnostics.iter().cloned());
    ctx.report.constants = Some(params);
    Ok(())
}

fn propagation_mode(ctx: &mut Ctx, kernel: &AngularKernel) -> Result<()> {
    let cfg = ctx.cfg;
    let table = build_gamma(kernel, &cfg.gamma)?;
    table.write_csv(ctx.create("gamma.csv")?, None)?;
    let (m0, m2) = mass_energy(&cfg.initial, cfg.kernel.dimension);
    let sample = fitted_sample(cfg)?;
    let params = build_params(kernel, &table, &request(cfg, Mode::Propagation, m0, m2, sample.as_deref()))?;
    params.write_csv(ctx.create("constants.csv")?)?;
    // hypothesis on the sampled initial data
    let (a0, c0) = (params.a0, params.c0);
    let mut init = crate::sum::MeanVar::default();
    for r in 0..cfg.run.replicas as u64 {
        let ens = dsmc::sample_initial(&cfg.initial, cfg.kernel.dimension, cfg.run.particles, cfg.seed, r)?;
        init.push(dsmc::empirical_exp_moment(&ens, params.s, a0)?.0);
    }
    ctx.push(Assertion::at_most(
        "initial data: exp(a0 |v|^s) moment <= C0",
        init.mean() - 3.0 * init.stderr(),
        c0,
        "3 sigma",
    ));
    let traj = dsmc::run(kernel, &run_config(cfg, ZSchedule::Propagation { a: params.a }, false))?;
    write_trajectory(ctx, &traj)?;
    let env = envelope_for(&params, cfg.run.n, &cfg.run.t_grid)?;
    env.write_csv(ctx.create("envelope.csv")?)?;
    exp_assertions(ctx, &traj, params.c_bound, "E_s(t, a) <= 4 m0");
    ctx.report.notes.push(format!(
        "a = {:e}; largest a with the mean series below 4 m0 on this run: {:.4e}",
        params.a,
        largest_safe_a(&traj, params.c_bound, cfg.run.series_n, false)
    ));
    let (slack, violations) = comparison_slack(&traj, &env, cfg.run.n);
    ctx.push(Assertion::at_least(
        format!("scalar envelopes dominate moments p <= {} ({violations} violations)", cfg.run.n),
        slack,
        0.0,
        "3 sigma, relative slack",
    ));
    ctx.report.notes.extend(params.diagnostics.iter().cloned());
    ctx.report.constants = Some(params);
    Ok(())
}
