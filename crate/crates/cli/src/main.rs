use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

mod config;
mod pipeline;
mod report;

use config::JobConfig;
use pipeline::Verb;
use report::{RunReport, Timings};

#[derive(Parser)]
#[command(name = "catenet", version, about = "Glue catenoidal necks along geodesic networks in H2 x R")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Job configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory; overrides `output.dir`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads.
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Mesh spacing; overrides `mesh.h`.
    #[arg(long, global = true)]
    resolution: Option<f64>,
    /// Seed for the eigensolver start vectors; overrides `seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
}

#[derive(Subcommand, Clone, Copy, PartialEq, Eq)]
enum Command {
    /// Check the network against the gluing hypotheses.
    Validate,
    /// Assemble the approximate surface.
    Build,
    /// Assemble and solve for the minimal correction.
    Solve,
    /// Lowest eigenvalues of the Jacobi operator.
    Spectrum,
    /// Killing fluxes across the neck of a catenoid.
    Flux,
    /// Run every value of the `[sweep]` table.
    Sweep,
    /// Print the summary of an existing report in the output directory.
    Report,
}

fn execute(cli: &Cli) -> Result<bool> {
    if let Some(w) = cli.workers {
        rayon::ThreadPoolBuilder::new().num_threads(w.max(1)).build_global().context("cannot start worker pool")?;
    }
    if cli.command == Command::Report {
        let out = match (&cli.out, &cli.config) {
            (Some(o), _) => o.clone(),
            (None, Some(p)) => JobConfig::load(p)?.output.dir,
            (None, None) => anyhow::bail!("report needs --out or --config"),
        };
        let r = RunReport::read(&out)?;
        print!("{}", r.summary());
        return Ok(r.passed);
    }
    let path = cli.config.as_ref().context("missing --config")?;
    let mut cfg = JobConfig::load(path)?;
    if let Some(h) = cli.resolution {
        cfg.mesh.h = h;
    }
    let out = cli.out.clone().unwrap_or_else(|| cfg.output.dir.clone());
    let seed = cli.seed.or(cfg.seed).unwrap_or(0);
    std::fs::create_dir_all(&out).with_context(|| format!("cannot create {}", out.display()))?;
    let mut timings = Timings::default();
    let report = match cli.command {
        Command::Sweep => pipeline::sweep(&cfg, seed, Some(&out), &mut timings)?,
        c => {
            let verb = match c {
                Command::Validate => Verb::Validate,
                Command::Build => Verb::Build,
                Command::Solve => Verb::Solve,
                Command::Spectrum => Verb::Spectrum,
                _ => Verb::Flux,
            };
            pipeline::run(&cfg, verb, seed, Some(&out), &mut timings)?
        }
    };
    report.write(&out)?;
    timings.write(&out)?;
    print!("{}", report.summary());
    Ok(report.passed)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
