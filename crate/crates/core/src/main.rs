use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use nongauss::config::RunConfig;
use nongauss::harness::{Figure, Harness};
use nongauss::{validate, Result};

#[derive(Parser)]
#[command(name = "nongauss", version, about = "Quench, reconstruct and analyse non-Gaussian fermionic states")]
struct Cli {
    /// TOML run configuration; built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (overrides `output_dir`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Master seed (overrides `ensemble.master_seed`).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; all cores when omitted.
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Evolution tolerance, and the residual bound for `validate`.
    #[arg(long, global = true)]
    tol: Option<f64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Evolve the initial-state ensemble and store states and correlations.
    Quench,
    /// Reconstruct every stored snapshot from its correlations.
    Reconstruct,
    /// Simulate the rotation-and-imaging measurement protocol.
    Measure,
    /// Write figure tables as CSV.
    Figures {
        #[arg(value_enum, default_values_t = vec![Which::Fig2, Which::Fig3, Which::Fig4])]
        which: Vec<Which>,
    },
    /// Run the oracle self-checks.
    Validate,
    /// Print the resolved configuration.
    Config,
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum Which {
    Fig2,
    Fig3,
    Fig4,
}

fn resolve(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(out) = &cli.out {
        cfg.output_dir = out.clone();
    }
    if let Some(seed) = cli.seed {
        cfg.ensemble.master_seed = seed;
    }
    if let Some(tol) = cli.tol {
        cfg.reconstruction.evolution_tol = tol;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<bool> {
    if let Command::Validate = cli.command {
        let mut ok = true;
        for c in validate::run_suite(cli.tol.unwrap_or(1e-10)) {
            println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
            ok &= c.passed;
        }
        return Ok(ok);
    }
    let cfg = resolve(&cli)?;
    if let Command::Config = cli.command {
        print!("{}", cfg.to_toml()?);
        return Ok(true);
    }
    let h = Harness::new(cfg, cli.workers)?;
    let manifest = match cli.command {
        Command::Quench => h.quench()?,
        Command::Reconstruct => h.reconstruct()?,
        Command::Measure => h.measure()?,
        Command::Figures { which } => {
            let figs: Vec<Figure> = which
                .iter()
                .map(|w| match w {
                    Which::Fig2 => Figure::Fig2,
                    Which::Fig3 => Figure::Fig3,
                    Which::Fig4 => Figure::Fig4,
                })
                .collect();
            h.figures(&figs)?
        }
        Command::Validate | Command::Config => unreachable!(),
    };
    println!("{}: {} files under {}", manifest.stage, manifest.files.len(), h.root().display());
    Ok(true)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
