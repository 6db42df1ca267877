//! Driving the harness from INI text, as `bmlab` does, then plotting.

use boltzmann_moments::harness::{emit_plots, parse_override, run_experiment, ExperimentConfig};

const CONFIG: &str = "
[experiment]
mode = creation
seed = 11

[kernel]
dimension = 3
beta = 1
angular = constant

[initial]
kind = heavy-tail
delta = 0.5

[run]
particles = 4000
replicas = 4
t_grid = log(1e-2, 1, 5)
";

fn main() -> boltzmann_moments::Result<()> {
    let dir = std::env::temp_dir().join("bmlab-example");
    let overrides = vec![parse_override(&format!("experiment.out={}", dir.display()))?];
    let cfg = ExperimentConfig::from_ini_str(CONFIG, &overrides)?;
    println!("config hash {}", cfg.content_hash());
    let report = run_experiment(&cfg)?;
    print!("{}", report.summary());
    let plots = emit_plots(&cfg.out)?;
    for f in plots.files {
        println!("wrote {}", f.display());
    }
    Ok(())
}
