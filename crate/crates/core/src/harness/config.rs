//! INI experiment configuration with `section.key=value` overrides.

use crate::bounds::Branch;
use crate::dsmc::{InitialDataSpec, InitialKind};
use crate::error::{Error, Result};
use crate::kernel::{make_kernel, make_maxwell_kernel, AngularKernel, AngularProfile};
use ini::Ini;
use serde::Serialize;
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ExperimentMode {
    Gamma,
    Bounds,
    Simulate,
    Verify,
    Creation,
    Propagation,
}

impl ExperimentMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            ExperimentMode::Gamma => "gamma",
            ExperimentMode::Bounds => "bounds",
            ExperimentMode::Simulate => "simulate",
            ExperimentMode::Verify => "verify",
            ExperimentMode::Creation => "creation",
            ExperimentMode::Propagation => "propagation",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "gamma" => ExperimentMode::Gamma,
            "bounds" => ExperimentMode::Bounds,
            "simulate" => ExperimentMode::Simulate,
            "verify" => ExperimentMode::Verify,
            "creation" => ExperimentMode::Creation,
            "propagation" => ExperimentMode::Propagation,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KernelBlock {
    pub dimension: usize,
    pub beta: f64,
    /// `constant`, `power(nu)` or `table(path)`.
    pub angular: String,
}

impl KernelBlock {
    pub fn profile(&self) -> Result<AngularProfile> {
        let a = self.angular.trim();
        let arg = |prefix: &str| a.strip_prefix(prefix).and_then(|r| r.strip_suffix(')')).map(str::trim);
        if a == "constant" {
            Ok(AngularProfile::Constant)
        } else if a == "power" {
            Ok(AngularProfile::Power { nu: 0.5 })
        } else if let Some(nu) = arg("power(") {
            let nu = nu.parse().map_err(|_| config_err("kernel.angular", format!("bad exponent `{nu}`")))?;
            Ok(AngularProfile::Power { nu })
        } else if let Some(path) = arg("table(") {
            AngularProfile::read_table(path)
        } else {
            Err(config_err("kernel.angular", format!("expected constant, power(nu) or table(path), got `{a}`")))
        }
    }

    pub fn build(&self) -> Result<AngularKernel> {
        let profile = self.profile()?;
        if self.beta == 0.0 {
            make_maxwell_kernel(self.dimension, profile)
        } else {
            make_kernel(self.dimension, self.beta, profile)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunBlock {
    pub particles: usize,
    pub replicas: usize,
    pub dt_max: f64,
    pub accept_cap: f64,
    pub t_grid: Vec<f64>,
    /// Highest moment index `p` (order `sp`) recorded and enveloped.
    pub n: usize,
    pub s: f64,
    pub series_n: usize,
    pub snapshot: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum GammaMethodChoice {
    /// Symmetric closed form when `b(z) + b(-z)` is monotone, sup-search otherwise.
    Auto,
    Search,
    Symmetric,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GammaBlock {
    pub max_order: usize,
    pub budget: usize,
    pub trials: usize,
    pub tolerance: f64,
    pub method: GammaMethodChoice,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundsBlock {
    pub branch: Branch,
    pub a0: Option<f64>,
    pub c0: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentConfig {
    pub mode: ExperimentMode,
    pub seed: u64,
    pub out: PathBuf,
    pub kernel: KernelBlock,
    pub initial: InitialDataSpec,
    pub run: RunBlock,
    pub gamma: GammaBlock,
    pub bounds: BoundsBlock,
}

pub(crate) fn config_err(field: &str, reason: impl Into<String>) -> Error {
    Error::Config {
        field: field.to_string(),
        reason: reason.into(),
    }
}

const KNOWN: &[(&str, &[&str])] = &[
    ("experiment", &["mode", "seed", "out"]),
    ("kernel", &["dimension", "beta", "angular"]),
    (
        "initial",
        &["kind", "m0", "temperature", "mean", "t1", "t2", "separation", "delta", "atoms"],
    ),
    (
        "run",
        &["particles", "replicas", "dt_max", "accept_cap", "t_grid", "n", "s", "series_n", "snapshot"],
    ),
    ("gamma", &["max_order", "budget", "trials", "tolerance", "method"]),
    ("bounds", &["branch", "a0", "c0"]),
];

/// Flattened `section.key → value` view with typed getters.
struct Table(BTreeMap<String, String>);

impl Table {
    fn raw(&self, key: &str) -> Option<&str> {
        self.0.get(key).map(|s| s.trim())
    }

    fn get<T: std::str::FromStr>(&self, key: &str, default: T) -> Result<T> {
        match self.raw(key) {
            None | Some("") => Ok(default),
            Some(v) => v.parse().map_err(|_| config_err(key, format!("cannot parse `{v}`"))),
        }
    }

    fn opt<T: std::str::FromStr>(&self, key: &str) -> Result<Option<T>> {
        match self.raw(key) {
            None | Some("") => Ok(None),
            Some(v) => v.parse().map(Some).map_err(|_| config_err(key, format!("cannot parse `{v}`"))),
        }
    }
}

fn parse_list(key: &str, text: &str) -> Result<Vec<f64>> {
    text.split(|c: char| c == ',' || c.is_whitespace())
        .filter(|t| !t.is_empty())
        .map(|t| t.parse().map_err(|_| config_err(key, format!("cannot parse `{t}`"))))
        .collect()
}

/// `a, b, c`, `lin(lo, hi, n)` or `log(lo, hi, n)`; `log` grids are prefixed with `0`.
pub fn parse_grid(key: &str, text: &str) -> Result<Vec<f64>> {
    let t = text.trim();
    for (name, log) in [("lin(", false), ("log(", true)] {
        if let Some(body) = t.strip_prefix(name).and_then(|r| r.strip_suffix(')')) {
            let v = parse_list(key, body)?;
            if v.len() != 3 || v[2] < 2.0 || v[2].fract() != 0.0 {
                return Err(config_err(key, "expected (lo, hi, count) with count ≥ 2"));
            }
            let (lo, hi, n) = (v[0], v[1], v[2] as usize);
            if log && !(lo > 0.0 && hi > lo) {
                return Err(config_err(key, "log grid needs 0 < lo < hi"));
            }
            let mut out = if log { vec![0.0] } else { Vec::new() };
            for i in 0..n {
                let f = i as f64 / (n - 1) as f64;
                out.push(if log { lo * (hi / lo).powf(f) } else { lo + (hi - lo) * f });
            }
            return Ok(out);
        }
    }
    parse_list(key, t)
}

fn parse_atoms(text: &str) -> Result<Vec<(f64, Vec<f64>)>> {
    text.split(';')
        .filter(|a| !a.trim().is_empty())
        .map(|a| {
            let (w, v) = a
                .split_once('@')
                .ok_or_else(|| config_err("initial.atoms", "atoms look like `mass@v1,v2,v3; ...`"))?;
            let w = w.trim().parse().map_err(|_| config_err("initial.atoms", format!("bad mass `{w}`")))?;
            Ok((w, parse_list("initial.atoms", v)?))
        })
        .collect()
}

fn join(v: &[f64]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(", ")
}

impl ExperimentConfig {
    /// Parses INI text, then applies `section.key=value` overrides in order.
    pub fn from_ini_str(text: &str, overrides: &[(String, String)]) -> Result<Self> {
        let ini = Ini::load_from_str(text).map_err(|e| config_err("config", e.to_string()))?;
        let mut map = BTreeMap::new();
        for (section, props) in ini.iter() {
            let section = section.unwrap_or("experiment");
            for (k, v) in props.iter() {
                map.insert(format!("{section}.{k}"), v.to_string());
            }
        }
        for (k, v) in overrides {
            map.insert(k.clone(), v.clone());
        }
        for key in map.keys() {
            let (section, name) = key.split_once('.').unwrap_or(("", key));
            let ok = KNOWN.iter().any(|(s, keys)| *s == section && keys.contains(&name));
            if !ok {
                return Err(config_err(key, "unknown key"));
            }
        }
        Self::from_table(&Table(map))
    }

    pub fn load(path: impl AsRef<Path>, overrides: &[(String, String)]) -> Result<Self> {
        let text = std::fs::read_to_string(path.as_ref())
            .map_err(|e| config_err("--config", format!("{}: {e}", path.as_ref().display())))?;
        Self::from_ini_str(&text, overrides)
    }

    /// Defaults only (hard spheres, `d = 3`, Maxwellian data).
    pub fn default_for(mode: ExperimentMode) -> Self {
        let mut cfg = Self::from_ini_str("", &[]).expect("defaults parse");
        cfg.mode = mode;
        cfg
    }

    fn from_table(t: &Table) -> Result<Self> {
        let mode_text: String = t.get("experiment.mode", "verify".to_string())?;
        let mode = ExperimentMode::parse(&mode_text)
            .ok_or_else(|| config_err("experiment.mode", format!("unknown mode `{mode_text}`")))?;
        let d: usize = t.get("kernel.dimension", 3)?;
        let kernel = KernelBlock {
            dimension: d,
            beta: t.get("kernel.beta", 1.0)?,
            angular: t.get("kernel.angular", "constant".to_string())?,
        };
        let kind_text: String = t.get("initial.kind", "maxwellian".to_string())?;
        let kind = match kind_text.as_str() {
            "maxwellian" => InitialKind::Maxwellian {
                temperature: t.get("initial.temperature", 1.0)?,
                mean: match t.raw("initial.mean") {
                    Some(m) if !m.is_empty() => parse_list("initial.mean", m)?,
                    _ => vec![0.0; d],
                },
            },
            "bimaxwellian" => InitialKind::BiMaxwellian {
                t1: t.get("initial.t1", 0.5)?,
                t2: t.get("initial.t2", 1.5)?,
                separation: t.get("initial.separation", 2.0)?,
            },
            "heavy-tail" => InitialKind::HeavyTail {
                delta: t.get("initial.delta", 0.5)?,
            },
            "point" => InitialKind::PointMixture {
                atoms: parse_atoms(t.raw("initial.atoms").unwrap_or(""))?,
            },
            other => {
                return Err(config_err(
                    "initial.kind",
                    format!("expected maxwellian, bimaxwellian, heavy-tail or point, got `{other}`"),
                ))
            }
        };
        let initial = InitialDataSpec {
            kind,
            m0: t.get("initial.m0", 1.0)?,
        };
        let run = RunBlock {
            particles: t.get("run.particles", 20_000)?,
            replicas: t.get("run.replicas", 8)?,
            dt_max: t.get("run.dt_max", 0.01)?,
            accept_cap: t.get("run.accept_cap", 0.1)?,
            t_grid: parse_grid("run.t_grid", t.raw("run.t_grid").unwrap_or("log(1e-3, 1, 13)"))?,
            n: t.get("run.n", 12)?,
            s: t.get("run.s", 1.0)?,
            series_n: t.get("run.series_n", 20)?,
            snapshot: t.get("run.snapshot", false)?,
        };
        let method_text: String = t.get("gamma.method", "auto".to_string())?;
        let gamma = GammaBlock {
            max_order: t.get("gamma.max_order", 80)?,
            budget: t.get("gamma.budget", 4096)?,
            trials: t.get("gamma.trials", 10_000)?,
            tolerance: t.get("gamma.tolerance", 1e-6)?,
            method: match method_text.as_str() {
                "auto" => GammaMethodChoice::Auto,
                "search" => GammaMethodChoice::Search,
                "symmetric" => GammaMethodChoice::Symmetric,
                other => return Err(config_err("gamma.method", format!("expected auto, search or symmetric, got `{other}`"))),
            },
        };
        let branch_text: String = t.get("bounds.branch", "elementary".to_string())?;
        let bounds = BoundsBlock {
            branch: match branch_text.as_str() {
                "elementary" => Branch::Elementary,
                "fitted" => Branch::Fitted,
                other => return Err(config_err("bounds.branch", format!("expected elementary or fitted, got `{other}`"))),
            },
            a0: t.opt("bounds.a0")?,
            c0: t.opt("bounds.c0")?,
        };
        Ok(ExperimentConfig {
            mode,
            seed: t.get("experiment.seed", 20_240_601)?,
            out: PathBuf::from(t.get("experiment.out", "out".to_string())?),
            kernel,
            initial,
            run,
            gamma,
            bounds,
        })
    }

    /// Mode-specific completeness; errors name the offending field.
    pub fn validate(&self) -> Result<()> {
        let k = &self.kernel;
        if !(1..=4).contains(&k.dimension) {
            return Err(config_err("kernel.dimension", "must be 1..=4"));
        }
        if !(k.beta >= 0.0 && k.beta <= 2.0) {
            return Err(config_err("kernel.beta", "must lie in [0, 2]"));
        }
        let r = &self.run;
        if r.t_grid.is_empty() || r.t_grid.windows(2).any(|w| w[1] < w[0]) || r.t_grid[0] < 0.0 {
            return Err(config_err("run.t_grid", "times must be nonnegative and ascending"));
        }
        if !(r.s > 0.0 && r.s <= 2.0) {
            return Err(config_err("run.s", "must lie in (0, 2]"));
        }
        if r.particles < 2 || r.replicas == 0 {
            return Err(config_err("run.particles", "need ≥ 2 particles and ≥ 1 replica"));
        }
        if self.gamma.max_order == 0 {
            return Err(config_err("gamma.max_order", "must be ≥ 1"));
        }
        let needs_theory = matches!(
            self.mode,
            ExperimentMode::Bounds | ExperimentMode::Creation | ExperimentMode::Propagation
        );
        if needs_theory && k.beta == 0.0 {
            return Err(config_err("kernel.beta", "moment bounds need beta > 0"));
        }
        if needs_theory && k.beta > r.s + 1e-12 {
            return Err(config_err("run.s", "moment bounds need beta ≤ s"));
        }
        match self.mode {
            ExperimentMode::Creation => {
                if (r.s - k.beta).abs() > 1e-12 {
                    return Err(config_err("run.s", format!("creation requires s = beta ({} ≠ {})", r.s, k.beta)));
                }
            }
            ExperimentMode::Propagation => {
                if self.bounds.a0.is_none() {
                    return Err(config_err("bounds.a0", "propagation requires a0"));
                }
                if self.bounds.c0.is_none() {
                    return Err(config_err("bounds.c0", "propagation requires C0"));
                }
                if let InitialKind::HeavyTail { .. } = self.initial.kind {
                    return Err(config_err("initial.kind", "propagation needs data with a finite exponential moment"));
                }
                if matches!(self.initial.kind, InitialKind::Maxwellian { .. } | InitialKind::BiMaxwellian { .. }) && r.s > 2.0 {
                    return Err(config_err("run.s", "Gaussian tails only carry exponential moments with s ≤ 2"));
                }
            }
            _ => {}
        }
        Ok(())
    }

    /// Canonical INI text; parsing it reproduces `self`.
    pub fn echo(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "[experiment]\nmode = {}\nseed = {}\nout = {}", self.mode.as_str(), self.seed, self.out.display());
        let k = &self.kernel;
        let _ = writeln!(s, "\n[kernel]\ndimension = {}\nbeta = {}\nangular = {}", k.dimension, k.beta, k.angular);
        let _ = writeln!(s, "\n[initial]\nm0 = {}", self.initial.m0);
        match &self.initial.kind {
            InitialKind::Maxwellian { temperature, mean } => {
                let _ = writeln!(s, "kind = maxwellian\ntemperature = {temperature}\nmean = {}", join(mean));
            }
            InitialKind::BiMaxwellian { t1, t2, separation } => {
                let _ = writeln!(s, "kind = bimaxwellian\nt1 = {t1}\nt2 = {t2}\nseparation = {separation}");
            }
            InitialKind::HeavyTail { delta } => {
                let _ = writeln!(s, "kind = heavy-tail\ndelta = {delta}");
            }
            InitialKind::PointMixture { atoms } => {
                let a: Vec<String> = atoms.iter().map(|(w, v)| format!("{w}@{}", join(v))).collect();
                let _ = writeln!(s, "kind = point\natoms = {}", a.join("; "));
            }
        }
        let r = &self.run;
        let _ = writeln!(
            s,
            "\n[run]\nparticles = {}\nreplicas = {}\ndt_max = {}\naccept_cap = {}\nt_grid = {}\nn = {}\ns = {}\nseries_n = {}\nsnapshot = {}",
            r.particles,
            r.replicas,
            r.dt_max,
            r.accept_cap,
            join(&r.t_grid),
            r.n,
            r.s,
            r.series_n,
            r.snapshot
        );
        let g = &self.gamma;
        let method = match g.method {
            GammaMethodChoice::Auto => "auto",
            GammaMethodChoice::Search => "search",
            GammaMethodChoice::Symmetric => "symmetric",
        };
        let _ = writeln!(
            s,
            "\n[gamma]\nmax_order = {}\nbudget = {}\ntrials = {}\ntolerance = {}\nmethod = {method}",
            g.max_order, g.budget, g.trials, g.tolerance
        );
        let b = &self.bounds;
        let branch = match b.branch {
            Branch::Elementary => "elementary",
            Branch::Fitted => "fitted",
        };
        let _ = writeln!(s, "\n[bounds]\nbranch = {branch}");
        if let Some(a0) = b.a0 {
            let _ = writeln!(s, "a0 = {a0}");
        }
        if let Some(c0) = b.c0 {
            let _ = writeln!(s, "c0 = {c0}");
        }
        s
    }

    /// SHA-256 of the echo and the crate version.
    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.echo().as_bytes());
        h.update(b"\nversion=");
        h.update(env!("CARGO_PKG_VERSION").as_bytes());
        format!("{:x}", h.finalize())
    }
}

/// Splits `section.key=value`.
pub fn parse_override(text: &str) -> Result<(String, String)> {
    let (k, v) = text
        .split_once('=')
        .ok_or_else(|| config_err("--set", format!("expected section.key=value, got `{text}`")))?;
    let k = k.trim();
    if !k.contains('.') {
        return Err(config_err("--set", format!("key `{k}` needs a section prefix")));
    }
    Ok((k.to_string(), v.trim().to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn echo_round_trips() {
        let text = "[experiment]\nmode = creation\nseed = 7\n[initial]\nkind = heavy-tail\ndelta = 0.5\n[run]\nt_grid = log(1e-3, 1, 4)\n";
        let cfg = ExperimentConfig::from_ini_str(text, &[]).unwrap();
        assert_eq!(cfg.run.t_grid.len(), 5);
        let again = ExperimentConfig::from_ini_str(&cfg.echo(), &[]).unwrap();
        assert_eq!(cfg, again);
        assert_eq!(cfg.content_hash(), again.content_hash());
    }

    #[test]
    fn overrides_apply_and_change_hash() {
        let base = ExperimentConfig::from_ini_str("", &[]).unwrap();
        let o = vec![parse_override("run.particles=123").unwrap()];
        let cfg = ExperimentConfig::from_ini_str("", &o).unwrap();
        assert_eq!(cfg.run.particles, 123);
        assert_ne!(base.content_hash(), cfg.content_hash());
    }

    #[test]
    fn creation_with_mismatched_s_names_field() {
        let o = vec![
            parse_override("experiment.mode=creation").unwrap(),
            parse_override("run.s=2").unwrap(),
        ];
        let cfg = ExperimentConfig::from_ini_str("", &o).unwrap();
        match cfg.validate() {
            Err(Error::Config { field, .. }) => assert_eq!(field, "run.s"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn unknown_keys_and_bad_values_rejected() {
        assert!(matches!(
            ExperimentConfig::from_ini_str("[run]\nparticle = 3\n", &[]),
            Err(Error::Config { field, .. }) if field == "run.particle"
        ));
        assert!(ExperimentConfig::from_ini_str("[kernel]\nangular = wobbly\n", &[]).unwrap().kernel.build().is_err());
        assert!(parse_override("nodot=1").is_err());
    }

    #[test]
    fn grids() {
        assert_eq!(parse_grid("g", "lin(0, 1, 3)").unwrap(), vec![0.0, 0.5, 1.0]);
        assert_eq!(parse_grid("g", "0, 2,3").unwrap(), vec![0.0, 2.0, 3.0]);
        let g = parse_grid("g", "log(0.01, 1, 3)").unwrap();
        assert!((g[2] - 0.1).abs() < 1e-15 && g[0] == 0.0);
    }
}
