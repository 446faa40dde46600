//! The staged harness: quench, reconstruct, measure and figure tables in a temporary directory.

use nongauss::config::RunConfig;
use nongauss::harness::{Figure, Harness};

fn main() -> nongauss::Result<()> {
    let dir = std::env::temp_dir().join("nongauss-example");
    let mut cfg = RunConfig::from_toml(
        r#"
subsystem_sites = 2
times = [0.0, 0.1, 1.0, 10.0]
interactions = [0.01, 0.1]
output_dir = "unused"

[model]
sites = 4

[ensemble]
count = 3
master_seed = 5
particles = 3

[measurement]
shots = 2000
"#,
    )?;
    cfg.output_dir = dir.clone();
    let h = Harness::new(cfg, None)?;
    for m in [h.quench()?, h.reconstruct()?, h.measure()?, h.figures(&Figure::ALL)?] {
        println!("{:<12} {} files", m.stage, m.files.len());
    }
    let fit = std::fs::read_to_string(dir.join("figures/fig2_theta_fit.csv")).map_err(|source| nongauss::Error::Io { path: dir.clone(), source })?;
    print!("{fit}");
    Ok(())
}
