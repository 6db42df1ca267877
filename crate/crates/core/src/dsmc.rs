//! Nanbu–Babovsky particle solver for the homogeneous Boltzmann equation
//! and the moment estimators used to test the bounds against it.

use crate::error::{invalid, Error, Result};
use crate::kernel::{collide_in_place, AngularKernel};
use crate::moments::{exp_partial_sums, MomentVector};
use crate::sum::{CompensatedSum, MeanVar};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;
use std::io::{Read, Write};
use std::path::Path;

/// Law of the initial velocities.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum InitialKind {
    Maxwellian { temperature: f64, mean: Vec<f64> },
    /// Equal mixture of Maxwellians centred at `±separation/2 · e1`.
    BiMaxwellian { t1: f64, t2: f64, separation: f64 },
    /// Density `∝ (1 + |v|²)^{-(d+2+δ)/2}`.
    HeavyTail { delta: f64 },
    /// Atoms `(mass fraction, velocity)`.
    PointMixture { atoms: Vec<(f64, Vec<f64>)> },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InitialDataSpec {
    pub kind: InitialKind,
    pub m0: f64,
}

impl InitialDataSpec {
    pub fn maxwellian(d: usize, temperature: f64) -> Self {
        InitialDataSpec {
            kind: InitialKind::Maxwellian {
                temperature,
                mean: vec![0.0; d],
            },
            m0: 1.0,
        }
    }

    pub fn heavy_tail(delta: f64) -> Self {
        InitialDataSpec {
            kind: InitialKind::HeavyTail { delta },
            m0: 1.0,
        }
    }

    /// Analytic `m_2 = ∫ f0 |v|²`.
    pub fn m2(&self, d: usize) -> f64 {
        let df = d as f64;
        let per_mass = match &self.kind {
            InitialKind::Maxwellian { temperature, mean } => {
                df * temperature + mean.iter().map(|x| x * x).sum::<f64>()
            }
            InitialKind::BiMaxwellian { t1, t2, separation } => {
                0.5 * df * (t1 + t2) + 0.25 * separation * separation
            }
            InitialKind::HeavyTail { delta } => df / delta,
            InitialKind::PointMixture { atoms } => {
                let total: f64 = atoms.iter().map(|a| a.0).sum();
                atoms.iter().map(|(w, v)| w * v.iter().map(|x| x * x).sum::<f64>()).sum::<f64>() / total
            }
        };
        self.m0 * per_mass
    }

    fn validate(&self, d: usize) -> Result<()> {
        if !(self.m0 > 0.0) {
            return Err(invalid("m0", "mass must be positive"));
        }
        match &self.kind {
            InitialKind::Maxwellian { temperature, mean } => {
                if !(*temperature > 0.0) || mean.len() != d {
                    return Err(invalid("initial", "maxwellian needs T > 0 and a d-vector mean"));
                }
            }
            InitialKind::BiMaxwellian { t1, t2, .. } => {
                if !(*t1 > 0.0 && *t2 > 0.0) {
                    return Err(invalid("initial", "bi-maxwellian temperatures must be positive"));
                }
            }
            InitialKind::HeavyTail { delta } => {
                if !(*delta > 0.0) {
                    return Err(invalid("delta", "heavy-tail data needs delta > 0"));
                }
            }
            InitialKind::PointMixture { atoms } => {
                if atoms.is_empty() || atoms.iter().any(|(w, v)| !(*w > 0.0) || v.len() != d) {
                    return Err(invalid("initial", "point mixture needs positive masses and d-vectors"));
                }
            }
        }
        Ok(())
    }
}

/// Stream for `(seed, replica)`.
pub fn replica_rng(seed: u64, replica_id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(replica_id);
    rng
}

#[derive(Debug, Clone)]
pub struct ParticleEnsemble {
    pub d: usize,
    /// Row-major `N × d`.
    pub velocities: Vec<f64>,
    pub particle_weight: f64,
    pub time: f64,
    pub replica_id: u64,
    pub rng: ChaCha8Rng,
    /// Majorant `V` on pairwise relative speeds.
    pub majorant: f64,
    /// Largest relative speed met by a pair since the last majorant reset.
    pub max_seen: f64,
    pub collisions: u64,
    pub rollbacks: u64,
    pub steps: u64,
    order: Vec<u32>,
    undo: Vec<(u32, u32, [f64; 8])>,
}

impl ParticleEnsemble {
    pub fn from_velocities(d: usize, velocities: Vec<f64>, m0: f64, seed: u64, replica_id: u64) -> Result<Self> {
        if d == 0 || d > 4 || velocities.len() % d != 0 {
            return Err(invalid("d", "dimension must be 1..=4 and divide the velocity array"));
        }
        let n = velocities.len() / d;
        if n < 2 {
            return Err(invalid("N", "need at least two particles"));
        }
        if !(m0 > 0.0) {
            return Err(invalid("m0", "mass must be positive"));
        }
        let mut e = ParticleEnsemble {
            d,
            velocities,
            particle_weight: m0 / n as f64,
            time: 0.0,
            replica_id,
            rng: replica_rng(seed, replica_id),
            majorant: 0.0,
            max_seen: 0.0,
            collisions: 0,
            rollbacks: 0,
            steps: 0,
            order: (0..n as u32).collect(),
            undo: Vec::new(),
        };
        e.majorant = e.speed_bound();
        Ok(e)
    }

    pub fn len(&self) -> usize {
        self.velocities.len() / self.d
    }

    pub fn is_empty(&self) -> bool {
        self.velocities.is_empty()
    }

    pub fn m0(&self) -> f64 {
        self.particle_weight * self.len() as f64
    }

    pub fn velocity(&self, i: usize) -> &[f64] {
        &self.velocities[i * self.d..(i + 1) * self.d]
    }

    /// `2 max_i |v_i - v̄|`, an upper bound on every pairwise relative speed.
    fn speed_bound(&self) -> f64 {
        let d = self.d;
        let n = self.len() as f64;
        let mut mean = [0.0; 4];
        for v in self.velocities.chunks_exact(d) {
            for k in 0..d {
                mean[k] += v[k] / n;
            }
        }
        let r = self
            .velocities
            .chunks_exact(d)
            .map(|v| (0..d).map(|k| (v[k] - mean[k]).powi(2)).sum::<f64>())
            .fold(0.0, f64::max)
            .sqrt();
        (2.0 * r).max(1e-300)
    }

    /// `Σ_i w v_i` (compensated per component).
    pub fn momentum(&self) -> Vec<f64> {
        (0..self.d)
            .map(|k| self.particle_weight * crate::sum::sum(self.velocities.iter().skip(k).step_by(self.d).copied()))
            .collect()
    }

    /// `Σ_i w |v_i|²`.
    pub fn energy(&self) -> f64 {
        self.particle_weight * crate::sum::sum(self.velocities.iter().map(|x| x * x))
    }

    /// `∫ f v ⊗ v` as a row-major `d × d` matrix.
    pub fn second_moment_tensor(&self) -> Vec<f64> {
        let d = self.d;
        let mut acc = vec![CompensatedSum::new(); d * d];
        for v in self.velocities.chunks_exact(d) {
            for a in 0..d {
                for b in 0..d {
                    acc[a * d + b].add(v[a] * v[b]);
                }
            }
        }
        acc.iter().map(|c| self.particle_weight * c.value()).collect()
    }

    /// Moments `m_{sp}`, `p = 0..=n+1`, and shifted `m_{sp+β}`, `p = 0..=n`.
    pub fn moments(&self, s: f64, beta: f64, n: usize) -> Result<MomentVector> {
        let orders = n + 2;
        let mut m = vec![CompensatedSum::new(); orders];
        let mut sh = vec![CompensatedSum::new(); n + 1];
        let aligned = (s - beta).abs() <= 1e-14 * s;
        for v in self.velocities.chunks_exact(self.d) {
            let r2: f64 = v.iter().map(|x| x * x).sum();
            let r = r2.sqrt();
            let rs = if s == 2.0 { r2 } else { r.powf(s) };
            let rb = if beta == 0.0 { 1.0 } else { r.powf(beta) };
            let mut pw = 1.0;
            for (p, acc) in m.iter_mut().enumerate() {
                acc.add(pw);
                if !aligned && p <= n {
                    sh[p].add(pw * rb);
                }
                pw *= rs;
            }
        }
        let w = self.particle_weight;
        let mv: Vec<f64> = m.iter().map(|c| w * c.value()).collect();
        let shifted = (!aligned).then(|| sh.iter().map(|c| w * c.value()).collect());
        if mv.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFiniteSeries { order: n + 1, z: 0.0 });
        }
        MomentVector::new(s, beta, mv, shifted, self.time)
    }

    /// Largest `dt ≤ dt_max` keeping the majorant acceptance probability at or below `cap`.
    pub fn admissible_dt(&self, kernel: &AngularKernel, dt_max: f64, cap: f64) -> f64 {
        let rate = self.m0() * if kernel.beta() == 0.0 { 1.0 } else { self.majorant.powf(kernel.beta()) };
        dt_max.min(cap / rate)
    }

    /// Sets the majorant to `factor` times the largest relative speed seen since the last reset.
    pub fn relax_majorant(&mut self, factor: f64) {
        if self.max_seen > 0.0 {
            self.majorant = factor * self.max_seen;
        }
        self.max_seen = 0.0;
    }

    fn rollback(&mut self) {
        let d = self.d;
        while let Some((i, j, old)) = self.undo.pop() {
            let (i, j) = (i as usize, j as usize);
            self.velocities[i * d..(i + 1) * d].copy_from_slice(&old[..d]);
            self.velocities[j * d..(j + 1) * d].copy_from_slice(&old[d..2 * d]);
            self.collisions -= 1;
        }
    }

    /// One Nanbu–Babovsky step of length at most `dt_max`; returns the step taken.
    /// A pair faster than the majorant undoes the step, grows the majorant and retries.
    pub fn step(&mut self, kernel: &AngularKernel, dt_max: f64, cap: f64) -> Result<f64> {
        if kernel.dimension() != self.d {
            return Err(invalid("kernel", "dimension mismatch"));
        }
        let d = self.d;
        let beta = kernel.beta();
        let m0 = self.m0();
        'retry: loop {
            let dt = self.admissible_dt(kernel, dt_max, cap);
            self.order.shuffle(&mut self.rng);
            self.undo.clear();
            let v_max = self.majorant;
            let mut sigma = [0.0; 4];
            let mut u_hat = [0.0; 4];
            for pair in 0..self.order.len() / 2 {
                let i = self.order[2 * pair] as usize;
                let j = self.order[2 * pair + 1] as usize;
                let (vi, vj) = (&self.velocities[i * d..(i + 1) * d], &self.velocities[j * d..(j + 1) * d]);
                let mut g2 = 0.0;
                for k in 0..d {
                    let du = vi[k] - vj[k];
                    u_hat[k] = du;
                    g2 += du * du;
                }
                let g = g2.sqrt();
                if g > self.max_seen {
                    self.max_seen = g;
                }
                if g > v_max {
                    self.rollback();
                    self.rollbacks += 1;
                    while self.majorant < g {
                        self.majorant *= 1.5;
                    }
                    continue 'retry;
                }
                let rate = if beta == 0.0 {
                    1.0
                } else if beta == 1.0 {
                    g
                } else {
                    g.powf(beta)
                };
                let u: f64 = self.rng.gen();
                if u >= m0 * dt * rate || g == 0.0 {
                    continue;
                }
                for x in u_hat.iter_mut().take(d) {
                    *x /= g;
                }
                kernel.sample_sigma_into(&u_hat[..d], &mut self.rng, &mut sigma[..d]);
                let mut old = [0.0; 8];
                old[..d].copy_from_slice(&self.velocities[i * d..(i + 1) * d]);
                old[d..2 * d].copy_from_slice(&self.velocities[j * d..(j + 1) * d]);
                self.undo.push((i as u32, j as u32, old));
                let (lo, hi) = (i.min(j), i.max(j));
                let (head, tail) = self.velocities.split_at_mut(hi * d);
                let a = &mut head[lo * d..(lo + 1) * d];
                let b = &mut tail[..d];
                if i < j {
                    collide_in_place(a, b, &sigma[..d]);
                } else {
                    collide_in_place(b, a, &sigma[..d]);
                }
                self.collisions += 1;
            }
            self.undo.clear();
            self.time += dt;
            self.steps += 1;
            return Ok(dt);
        }
    }

    /// Advances to exactly `t_end`.
    pub fn advance_to(&mut self, kernel: &AngularKernel, t_end: f64, dt_max: f64, cap: f64) -> Result<()> {
        while self.time < t_end {
            let remaining = t_end - self.time;
            if remaining <= 1e-13 * t_end.max(1.0) {
                break;
            }
            self.step(kernel, dt_max.min(remaining), cap)?;
        }
        self.time = t_end;
        Ok(())
    }
}

/// I.i.d. velocities from `spec`, on stream `(seed, replica_id)`.
pub fn sample_initial(spec: &InitialDataSpec, d: usize, n: usize, seed: u64, replica_id: u64) -> Result<ParticleEnsemble> {
    if n < 2 {
        return Err(invalid("N", "need at least two particles"));
    }
    spec.validate(d)?;
    let mut rng = replica_rng(seed ^ 0x9e37_79b9_7f4a_7c15, replica_id);
    let mut v = vec![0.0; n * d];
    let gauss = |rng: &mut ChaCha8Rng| -> f64 { rng.sample(StandardNormal) };
    match &spec.kind {
        InitialKind::Maxwellian { temperature, mean } => {
            let sd = temperature.sqrt();
            for row in v.chunks_exact_mut(d) {
                for k in 0..d {
                    row[k] = mean[k] + sd * gauss(&mut rng);
                }
            }
        }
        InitialKind::BiMaxwellian { t1, t2, separation } => {
            for row in v.chunks_exact_mut(d) {
                let (sd, shift) = if rng.gen::<bool>() {
                    (t1.sqrt(), 0.5 * separation)
                } else {
                    (t2.sqrt(), -0.5 * separation)
                };
                for k in 0..d {
                    row[k] = sd * gauss(&mut rng);
                }
                row[0] += shift;
            }
        }
        InitialKind::HeavyTail { delta } => {
            let law = Beta::new(d as f64 / 2.0, 1.0 + delta / 2.0).map_err(|e| invalid("delta", e.to_string()))?;
            for row in v.chunks_exact_mut(d) {
                let u: f64 = law.sample(&mut rng);
                let r = (u / (1.0 - u)).sqrt();
                let mut sq = 0.0;
                while sq < 1e-20 {
                    sq = 0.0;
                    for x in row.iter_mut() {
                        *x = gauss(&mut rng);
                        sq += *x * *x;
                    }
                }
                let scale = r / sq.sqrt();
                row.iter_mut().for_each(|x| *x *= scale);
            }
        }
        InitialKind::PointMixture { atoms } => {
            let total: f64 = atoms.iter().map(|a| a.0).sum();
            for row in v.chunks_exact_mut(d) {
                let mut u = rng.gen::<f64>() * total;
                let mut pick = &atoms[atoms.len() - 1].1;
                for (w, a) in atoms {
                    if u < *w {
                        pick = a;
                        break;
                    }
                    u -= w;
                }
                row.copy_from_slice(pick);
            }
        }
    }
    ParticleEnsemble::from_velocities(d, v, spec.m0, seed, replica_id)
}

/// `w Σ_i exp(z |v_i|^s)` and its single-ensemble standard error.
pub fn empirical_exp_moment(ensemble: &ParticleEnsemble, s: f64, z: f64) -> Result<(f64, f64)> {
    if !(z >= 0.0) {
        return Err(invalid("z", "must be nonnegative"));
    }
    if z == 0.0 {
        return Ok((ensemble.m0(), 0.0));
    }
    let mut mv = MeanVar::default();
    for v in ensemble.velocities.chunks_exact(ensemble.d) {
        let r = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        let x = z * r.powf(s);
        if x > 700.0 {
            return Err(Error::ExpOverflow { speed: r });
        }
        mv.push(x.exp());
    }
    let m0 = ensemble.m0();
    Ok((m0 * mv.mean(), m0 * mv.stderr()))
}

/// Weight `z(t)` for the exponential moment recorded at time `t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ZSchedule {
    None,
    /// `z = a min{t, 1}`.
    Creation { a: f64 },
    /// `z = a`.
    Propagation { a: f64 },
}

impl ZSchedule {
    pub fn z(&self, t: f64) -> Option<f64> {
        match *self {
            ZSchedule::None => None,
            ZSchedule::Creation { a } => Some(a * t.min(1.0)),
            ZSchedule::Propagation { a } => Some(a),
        }
    }
}

/// Radii and exponents at which `∫ f(v*) |r e - v*|^s dv*` is recorded.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvolutionProbe {
    pub s_values: Vec<f64>,
    pub radii: Vec<f64>,
    /// Directions averaged per radius: 1 uses `e1`, otherwise up to `2d` signed axes then diagonals.
    pub directions: usize,
}

fn probe_directions(d: usize, count: usize) -> Vec<Vec<f64>> {
    let mut dirs = Vec::new();
    for k in 0..d {
        for sign in [1.0, -1.0] {
            let mut e = vec![0.0; d];
            e[k] = sign;
            dirs.push(e);
        }
    }
    let inv = 1.0 / (d as f64).sqrt();
    for mask in 0..(1usize << d) {
        dirs.push((0..d).map(|k| if mask >> k & 1 == 1 { -inv } else { inv }).collect());
    }
    dirs.truncate(count.max(1));
    dirs
}

#[derive(Debug, Clone, Serialize)]
pub struct RunConfig {
    pub d: usize,
    pub particles: usize,
    pub replicas: usize,
    pub seed: u64,
    pub initial: InitialDataSpec,
    pub t_grid: Vec<f64>,
    pub dt_max: f64,
    /// Upper bound on the majorant acceptance probability per pair and step.
    pub accept_cap: f64,
    pub s: f64,
    pub n: usize,
    pub z_schedule: ZSchedule,
    pub series_n: usize,
    pub convolution: Option<ConvolutionProbe>,
    pub keep_final: bool,
}

impl RunConfig {
    pub fn new(d: usize, particles: usize, replicas: usize, seed: u64, initial: InitialDataSpec, t_grid: Vec<f64>) -> Self {
        RunConfig {
            d,
            particles,
            replicas,
            seed,
            initial,
            t_grid,
            dt_max: 0.01,
            accept_cap: 0.1,
            s: 1.0,
            n: 12,
            z_schedule: ZSchedule::None,
            series_n: 20,
            convolution: None,
            keep_final: false,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.replicas == 0 {
            return Err(invalid("replicas", "need at least one replica"));
        }
        if self.t_grid.is_empty() || self.t_grid.windows(2).any(|w| w[1] < w[0]) || self.t_grid[0] < 0.0 {
            return Err(invalid("t_grid", "times must be nonnegative and ascending"));
        }
        if !(self.dt_max > 0.0) || !(self.accept_cap > 0.0 && self.accept_cap <= 1.0) {
            return Err(invalid("dt", "dt_max > 0 and accept_cap in (0, 1] required"));
        }
        if !(self.s > 0.0 && self.s <= 2.0) {
            return Err(invalid("s", "must lie in (0, 2]"));
        }
        Ok(())
    }
}

/// Everything recorded for one replica.
#[derive(Debug, Clone, Serialize)]
pub struct ReplicaTrace {
    pub replica_id: u64,
    pub moments: Vec<MomentVector>,
    pub exp_direct: Vec<Option<f64>>,
    pub exp_series: Vec<Option<f64>>,
    pub energy: Vec<f64>,
    pub momentum: Vec<Vec<f64>>,
    pub tensor: Vec<Vec<f64>>,
    /// `[time][s index][radius]`, averaged over probe directions.
    pub convolution: Vec<Vec<Vec<f64>>>,
    pub steps: u64,
    pub collisions: u64,
    pub rollbacks: u64,
    #[serde(skip)]
    pub final_state: Option<ParticleEnsemble>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ExpRecord {
    pub time: f64,
    pub z: f64,
    pub direct: f64,
    pub direct_stderr: f64,
    pub series: f64,
    pub series_stderr: f64,
    pub flagged: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct ConservationRecord {
    pub time: f64,
    pub replica: u64,
    pub energy_rel_drift: f64,
    /// `max_k |J_k(t) - J_k(0)| / √(m0 m2)`.
    pub momentum_drift: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct Trajectory {
    pub config: RunConfig,
    pub beta: f64,
    pub times: Vec<f64>,
    /// Across-replica mean moments with standard errors.
    pub moments: Vec<MomentVector>,
    pub exp: Vec<ExpRecord>,
    pub conservation: Vec<ConservationRecord>,
    pub replicas: Vec<ReplicaTrace>,
}

fn run_replica(kernel: &AngularKernel, cfg: &RunConfig, replica: u64) -> ReplicaTrace {
    let mut trace = ReplicaTrace {
        replica_id: replica,
        moments: Vec::new(),
        exp_direct: Vec::new(),
        exp_series: Vec::new(),
        energy: Vec::new(),
        momentum: Vec::new(),
        tensor: Vec::new(),
        convolution: Vec::new(),
        steps: 0,
        collisions: 0,
        rollbacks: 0,
        final_state: None,
        error: None,
    };
    let result = (|| -> Result<ParticleEnsemble> {
        let mut ens = sample_initial(&cfg.initial, cfg.d, cfg.particles, cfg.seed, replica)?;
        let dirs = cfg.convolution.as_ref().map(|c| probe_directions(cfg.d, c.directions));
        for &t in &cfg.t_grid {
            ens.advance_to(kernel, t, cfg.dt_max, cfg.accept_cap)?;
            ens.relax_majorant(1.5);
            let mv = ens.moments(cfg.s, kernel.beta(), cfg.n.max(cfg.series_n))?;
            match cfg.z_schedule.z(t) {
                Some(z) => {
                    trace.exp_direct.push(empirical_exp_moment(&ens, cfg.s, z).ok().map(|x| x.0));
                    trace.exp_series.push(exp_partial_sums(&mv, z, cfg.series_n).ok().map(|x| x.e_n));
                }
                None => {
                    trace.exp_direct.push(None);
                    trace.exp_series.push(None);
                }
            }
            trace.moments.push(mv);
            trace.energy.push(ens.energy());
            trace.momentum.push(ens.momentum());
            trace.tensor.push(ens.second_moment_tensor());
            if let (Some(probe), Some(dirs)) = (&cfg.convolution, &dirs) {
                let rows = probe
                    .s_values
                    .iter()
                    .map(|&s| {
                        probe
                            .radii
                            .iter()
                            .map(|&r| {
                                let total: f64 = dirs
                                    .iter()
                                    .map(|e| {
                                        let v: Vec<f64> = e.iter().map(|x| r * x).collect();
                                        crate::bounds::sample_convolution(&ens.velocities, cfg.d, &v, s)
                                    })
                                    .sum();
                                ens.m0() * total / dirs.len() as f64
                            })
                            .collect()
                    })
                    .collect();
                trace.convolution.push(rows);
            }
        }
        Ok(ens)
    })();
    match result {
        Ok(ens) => {
            trace.steps = ens.steps;
            trace.collisions = ens.collisions;
            trace.rollbacks = ens.rollbacks;
            if cfg.keep_final {
                trace.final_state = Some(ens);
            }
        }
        Err(e) => trace.error = Some(e.to_string()),
    }
    trace
}

/// Runs every replica (in parallel) and aggregates across replicas.
pub fn run(kernel: &AngularKernel, cfg: &RunConfig) -> Result<Trajectory> {
    cfg.validate()?;
    if kernel.dimension() != cfg.d {
        return Err(invalid("d", "kernel and run dimensions differ"));
    }
    let replicas: Vec<ReplicaTrace> = (0..cfg.replicas as u64)
        .into_par_iter()
        .map(|r| run_replica(kernel, cfg, r))
        .collect();
    if let Some(e) = replicas.iter().find_map(|r| r.error.clone()) {
        return Err(invalid("dsmc", e));
    }
    let times = cfg.t_grid.clone();
    let mut moments = Vec::with_capacity(times.len());
    let mut exp = Vec::new();
    for (ti, &t) in times.iter().enumerate() {
        let first = &replicas[0].moments[ti];
        let orders = first.m.len();
        let stats: Vec<MeanVar> = (0..orders)
            .map(|p| replicas.iter().map(|r| r.moments[ti].m[p]).collect())
            .collect();
        let shifted_stats: Option<Vec<MeanVar>> = first.shifted.as_ref().map(|sh| {
            (0..sh.len())
                .map(|p| replicas.iter().map(|r| r.moments[ti].shifted.as_ref().unwrap()[p]).collect())
                .collect()
        });
        let mut mv = MomentVector::new(
            first.s,
            first.beta,
            stats.iter().map(|s| s.mean()).collect(),
            shifted_stats.as_ref().map(|v| v.iter().map(|s| s.mean()).collect()),
            t,
        )?;
        mv.stderr = Some(stats.iter().map(|s| s.stderr()).collect());
        mv.shifted_stderr = shifted_stats.map(|v| v.iter().map(|s| s.stderr()).collect());
        moments.push(mv);
        if let Some(z) = cfg.z_schedule.z(t) {
            let direct: Vec<Option<f64>> = replicas.iter().map(|r| r.exp_direct[ti]).collect();
            let series: Vec<Option<f64>> = replicas.iter().map(|r| r.exp_series[ti]).collect();
            let flagged = direct.iter().chain(&series).any(|x| x.is_none());
            let d: MeanVar = direct.iter().flatten().copied().collect();
            let s: MeanVar = series.iter().flatten().copied().collect();
            exp.push(ExpRecord {
                time: t,
                z,
                direct: if d.count() > 0 { d.mean() } else { f64::NAN },
                direct_stderr: d.stderr(),
                series: if s.count() > 0 { s.mean() } else { f64::NAN },
                series_stderr: s.stderr(),
                flagged,
            });
        }
    }
    let mut conservation = Vec::new();
    for r in &replicas {
        let e0 = r.energy[0];
        let j0 = &r.momentum[0];
        let norm = (r.moments[0].m0() * e0).sqrt().max(f64::MIN_POSITIVE);
        for (ti, &t) in times.iter().enumerate() {
            let de = if e0 > 0.0 { (r.energy[ti] - e0).abs() / e0 } else { r.energy[ti].abs() };
            let dj = r.momentum[ti].iter().zip(j0).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max) / norm;
            conservation.push(ConservationRecord {
                time: t,
                replica: r.replica_id,
                energy_rel_drift: de,
                momentum_drift: dj,
            });
        }
    }
    Ok(Trajectory {
        config: cfg.clone(),
        beta: kernel.beta(),
        times,
        moments,
        exp,
        conservation,
        replicas,
    })
}

impl Trajectory {
    /// Rows `time,order,estimate,stderr` for moments, then the exponential moments.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["time", "order", "estimate", "stderr"])?;
        for mv in &self.moments {
            let se = mv.stderr.as_ref();
            for (p, &m) in mv.m.iter().enumerate() {
                let e = se.map(|v| v[p]).unwrap_or(0.0);
                w.write_record([
                    format!("{}", mv.time),
                    format!("{}", mv.s * p as f64),
                    format!("{m:.12e}"),
                    format!("{e:.6e}"),
                ])?;
            }
        }
        for r in &self.exp {
            w.write_record([format!("{}", r.time), "E_direct".into(), format!("{:.12e}", r.direct), format!("{:.6e}", r.direct_stderr)])?;
            w.write_record([format!("{}", r.time), "E_series".into(), format!("{:.12e}", r.series), format!("{:.6e}", r.series_stderr)])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_conservation_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["time", "replica", "energy_rel_drift", "momentum_drift"])?;
        for c in &self.conservation {
            w.write_record([
                format!("{}", c.time),
                c.replica.to_string(),
                format!("{:.6e}", c.energy_rel_drift),
                format!("{:.6e}", c.momentum_drift),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn max_energy_drift(&self) -> f64 {
        self.conservation.iter().map(|c| c.energy_rel_drift).fold(0.0, f64::max)
    }

    pub fn max_momentum_drift(&self) -> f64 {
        self.conservation.iter().map(|c| c.momentum_drift).fold(0.0, f64::max)
    }

    /// Mean and standard error of `m_{sp}` across replicas at time index `ti`.
    pub fn moment(&self, ti: usize, p: usize) -> (f64, f64) {
        let mv = &self.moments[ti];
        (mv.m[p], mv.stderr.as_ref().map_or(0.0, |s| s[p]))
    }
}

/// Output of [`lower_convolution_check`].
#[derive(Debug, Clone, Serialize)]
pub struct LowerBoundReport {
    pub s: f64,
    pub v_grid: Vec<f64>,
    pub times: Vec<f64>,
    /// `[time][radius]` values of `conv(r) / (1 + r^s)`.
    pub ratios: Vec<Vec<f64>>,
    /// `min_{t,r} conv_t(r) / conv_0(r)`.
    pub c_fit: f64,
    /// `min_{t,r} conv_t(r) / (1 + r^s)`.
    pub c_f0_s: f64,
    pub positive: bool,
    pub warnings: Vec<String>,
}

/// Lower convolution bound along a trajectory recorded with a [`ConvolutionProbe`].
pub fn lower_convolution_check(traj: &Trajectory, s: f64) -> Result<LowerBoundReport> {
    let probe = traj
        .config
        .convolution
        .as_ref()
        .ok_or_else(|| invalid("convolution", "trajectory was recorded without a probe"))?;
    let si = probe
        .s_values
        .iter()
        .position(|&x| (x - s).abs() < 1e-12)
        .ok_or_else(|| invalid("s", format!("exponent {s} was not probed")))?;
    if !(s > 0.0 && s <= 1.0) {
        return Err(invalid("s", "must lie in (0, 1]"));
    }
    let nt = traj.times.len();
    let mean_at = |ti: usize, ri: usize| -> f64 {
        traj.replicas.iter().map(|r| r.convolution[ti][si][ri]).sum::<f64>() / traj.replicas.len() as f64
    };
    let mut ratios = Vec::with_capacity(nt);
    let mut c_fit = f64::INFINITY;
    let mut c_f0_s = f64::INFINITY;
    for ti in 0..nt {
        let mut row = Vec::with_capacity(probe.radii.len());
        for (ri, &r) in probe.radii.iter().enumerate() {
            let c = mean_at(ti, ri);
            let ratio = c / (1.0 + r.powf(s));
            row.push(ratio);
            c_f0_s = c_f0_s.min(ratio);
            c_fit = c_fit.min(c / mean_at(0, ri));
        }
        ratios.push(row);
    }
    let mut warnings = Vec::new();
    for (name, v) in [("c_s", c_fit), ("C_f0_s", c_f0_s)] {
        if v < 1e-3 {
            warnings.push(format!("fitted {name} = {v:e} is close to zero"));
        }
    }
    Ok(LowerBoundReport {
        s,
        v_grid: probe.radii.clone(),
        times: traj.times.clone(),
        ratios,
        c_fit,
        c_f0_s,
        positive: c_fit > 0.0 && c_f0_s > 0.0,
        warnings,
    })
}

/// Excess kurtosis `E[(v_k - v̄_k)^4] / Var^2 - 3` of each velocity component.
pub fn excess_kurtosis(ensemble: &ParticleEnsemble) -> Vec<f64> {
    let d = ensemble.d;
    let n = ensemble.len() as f64;
    (0..d)
        .map(|k| {
            let col = || ensemble.velocities.iter().skip(k).step_by(d).copied();
            let mean = crate::sum::sum(col()) / n;
            let m2 = crate::sum::sum(col().map(|x| (x - mean).powi(2))) / n;
            let m4 = crate::sum::sum(col().map(|x| (x - mean).powi(4))) / n;
            m4 / (m2 * m2) - 3.0
        })
        .collect()
}

/// Flat binary snapshot: `u64 N`, `u64 d`, `f64 time`, then row-major velocities (little endian).
pub fn write_snapshot(path: impl AsRef<Path>, ensemble: &ParticleEnsemble) -> Result<()> {
    let mut buf = Vec::with_capacity(24 + 8 * ensemble.velocities.len());
    buf.extend_from_slice(&(ensemble.len() as u64).to_le_bytes());
    buf.extend_from_slice(&(ensemble.d as u64).to_le_bytes());
    buf.extend_from_slice(&ensemble.time.to_le_bytes());
    for v in &ensemble.velocities {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    std::fs::File::create(path)?.write_all(&buf)?;
    Ok(())
}

/// Reads a snapshot back as `(d, time, velocities)`.
pub fn read_snapshot(path: impl AsRef<Path>) -> Result<(usize, f64, Vec<f64>)> {
    let mut buf = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut buf)?;
    if buf.len() < 24 {
        return Err(invalid("snapshot", "truncated header"));
    }
    let word = |i: usize| <[u8; 8]>::try_from(&buf[8 * i..8 * i + 8]).unwrap();
    let n = u64::from_le_bytes(word(0)) as usize;
    let d = u64::from_le_bytes(word(1)) as usize;
    let time = f64::from_le_bytes(word(2));
    if buf.len() != 24 + 8 * n * d {
        return Err(invalid("snapshot", "size does not match header"));
    }
    let v = (0..n * d).map(|i| f64::from_le_bytes(word(3 + i))).collect();
    Ok((d, time, v))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::{make_kernel, post_collide, AngularProfile};

    fn hs() -> AngularKernel {
        make_kernel(3, 1.0, AngularProfile::Constant).unwrap()
    }

    #[test]
    fn maxwellian_energy_within_three_sigma() {
        let e = sample_initial(&InitialDataSpec::maxwellian(3, 1.0), 3, 100_000, 1, 0).unwrap();
        let per: MeanVar = e.velocities.chunks_exact(3).map(|v| v.iter().map(|x| x * x).sum::<f64>()).collect();
        assert!((per.mean() - 3.0).abs() < 3.0 * per.stderr());
    }

    #[test]
    fn point_mixture_at_origin() {
        let spec = InitialDataSpec {
            kind: InitialKind::PointMixture {
                atoms: vec![(1.0, vec![0.0; 3])],
            },
            m0: 2.0,
        };
        let e = sample_initial(&spec, 3, 50, 3, 0).unwrap();
        assert!(e.velocities.iter().all(|&x| x == 0.0));
        assert_eq!(e.m0(), 2.0);
    }

    #[test]
    fn heavy_tail_energy_matches_radial_quadrature() {
        let delta = 0.5;
        // radial oracle: ∫ r^4 (1+r²)^{-(5+δ)/2} / ∫ r^2 (1+r²)^{-(5+δ)/2}, via r = tan θ
        let rule = crate::quadrature::gauss_legendre(64);
        let e = -(5.0 + delta) / 2.0;
        let f = |q: i32| {
            crate::quadrature::composite(&rule, 0.0, std::f64::consts::FRAC_PI_2, 64, |th| {
                let r = th.tan();
                r.powi(q) * (1.0 + r * r).powf(e) / th.cos().powi(2)
            })
        };
        // the r^{-3/2} tail makes the energy quadrature converge slowly
        assert!((f(4) / f(2) - 6.0).abs() < 1e-2);
        assert!((InitialDataSpec::heavy_tail(delta).m2(3) - 6.0).abs() < 1e-15);
        let mean_speed = f(3) / f(2);
        let ens = sample_initial(&InitialDataSpec::heavy_tail(delta), 3, 200_000, 9, 0).unwrap();
        let speeds: MeanVar = ens.velocities.chunks_exact(3).map(|v| v.iter().map(|x| x * x).sum::<f64>().sqrt()).collect();
        assert!((speeds.mean() - mean_speed).abs() < 4.0 * speeds.stderr(), "{} vs {mean_speed}", speeds.mean());
        assert!(sample_initial(&InitialDataSpec::heavy_tail(0.0), 3, 10, 0, 0).is_err());
    }

    #[test]
    fn single_forced_collision() {
        let out = post_collide(&[1.0, 0.0, 0.0], &[-1.0, 0.0, 0.0], &[0.0, 1.0, 0.0]);
        assert_eq!(out.v_prime, vec![0.0, 1.0, 0.0]);
        assert_eq!(out.v_star_prime, vec![0.0, -1.0, 0.0]);
        // through the ensemble step: acceptance probability m0 dt g = 1 with cap 1
        let mut e = ParticleEnsemble::from_velocities(3, vec![1.0, 0.0, 0.0, -1.0, 0.0, 0.0], 1.0, 1, 0).unwrap();
        let k = hs();
        assert_eq!(e.majorant, 2.0);
        let dt = e.step(&k, 1.0, 1.0).unwrap();
        assert_eq!(dt, 0.5);
        assert_eq!(e.collisions, 1);
        assert!((e.energy() - 1.0).abs() < 1e-15);
        assert!(e.momentum().iter().all(|x| x.abs() < 1e-15));
    }

    #[test]
    fn overflow_rolls_back_and_grows() {
        let k = hs();
        let mut e = sample_initial(&InitialDataSpec::maxwellian(3, 1.0), 3, 2000, 5, 0).unwrap();
        e.majorant = 0.5;
        let before = e.energy();
        e.step(&k, 0.01, 0.1).unwrap();
        assert!(e.rollbacks > 0);
        assert!(e.majorant >= e.max_seen);
        assert!((e.energy() - before).abs() < 1e-12 * before);
    }

    #[test]
    fn equal_velocities_never_change() {
        let v: Vec<f64> = (0..50).flat_map(|_| [0.3, -1.0, 2.0]).collect();
        let mut e = ParticleEnsemble::from_velocities(3, v.clone(), 1.0, 1, 0).unwrap();
        e.advance_to(&hs(), 1.0, 0.01, 0.1).unwrap();
        assert_eq!(e.velocities, v);
    }

    #[test]
    fn exp_moment_examples() {
        let e = sample_initial(&InitialDataSpec::maxwellian(3, 1.0), 3, 10, 1, 0).unwrap();
        assert_eq!(empirical_exp_moment(&e, 2.0, 0.0).unwrap().0, 1.0);
        let atom = ParticleEnsemble::from_velocities(3, vec![0.0, 1.0, 0.0, 1.0, 0.0, 0.0], 1.0, 1, 0).unwrap();
        let (v, _) = empirical_exp_moment(&atom, 1.0, 2.0).unwrap();
        assert!((v - 2f64.exp()).abs() < 1e-14);
        let far = ParticleEnsemble::from_velocities(1, vec![1e3, -1e3], 1.0, 1, 0).unwrap();
        assert!(matches!(empirical_exp_moment(&far, 2.0, 1.0), Err(Error::ExpOverflow { .. })));
    }

    #[test]
    fn maxwellian_exp_moment_closed_form() {
        // z = 0.1 keeps the estimator variance finite: (1-2z)^{-3/2}
        let e = sample_initial(&InitialDataSpec::maxwellian(3, 1.0), 3, 200_000, 2, 0).unwrap();
        let (v, se) = empirical_exp_moment(&e, 2.0, 0.1).unwrap();
        let exact = 0.8f64.powf(-1.5);
        assert!((v - exact).abs() < 3.0 * se, "{v} vs {exact} ± {se}");
    }

    #[test]
    fn snapshot_round_trip() {
        let e = sample_initial(&InitialDataSpec::maxwellian(3, 1.0), 3, 17, 1, 0).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("snap.bin");
        write_snapshot(&path, &e).unwrap();
        let (d, t, v) = read_snapshot(&path).unwrap();
        assert_eq!((d, t), (3, 0.0));
        assert_eq!(v, e.velocities);
        assert_eq!(std::fs::metadata(&path).unwrap().len(), 24 + 8 * 51);
    }

    #[test]
    fn deterministic_replicas() {
        let k = hs();
        let mut cfg = RunConfig::new(3, 500, 2, 42, InitialDataSpec::maxwellian(3, 1.0), vec![0.0, 0.5]);
        cfg.n = 4;
        cfg.series_n = 4;
        let a = run(&k, &cfg).unwrap();
        let b = run(&k, &cfg).unwrap();
        assert_eq!(a.moments[1].m, b.moments[1].m);
        assert_ne!(a.replicas[0].moments[1].m, a.replicas[1].moments[1].m);
    }

    #[test]
    fn probe_directions_are_unit() {
        for v in probe_directions(3, 8) {
            assert!((v.iter().map(|x| x * x).sum::<f64>() - 1.0).abs() < 1e-15);
        }
        assert_eq!(probe_directions(3, 8).len(), 8);
    }
}
