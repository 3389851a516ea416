use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use nelsonlab::scenario::{run_scenario, RunOptions, RunReport, ScenarioConfig, ScenarioError, ScenarioName};
use nelsonlab::Execution;

#[derive(Parser)]
#[command(name = "nelsonlab", version, about = "Stochastic mechanics and Wigner phase-space scenarios")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Worker threads for data-parallel loops (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Run data-parallel loops on the calling thread.
    #[arg(long, global = true)]
    sequential: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario config.
    Run {
        config: PathBuf,
        #[arg(long)]
        output_dir: Option<PathBuf>,
        /// Override the ensemble seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        no_plots: bool,
    },
    /// List built-in scenario kinds and the configs found in a directory.
    ListScenarios {
        #[arg(long, default_value = "scenarios")]
        dir: PathBuf,
    },
    /// Parse and check a config without running it.
    Validate {
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
}

fn load(path: &Path, seed: Option<u64>) -> Result<ScenarioConfig> {
    let mut config = ScenarioConfig::load(path)?;
    if let Some(seed) = seed {
        match config.ensemble.as_mut() {
            Some(e) => e.seed = seed,
            None => log::warn!("--seed ignored: {} has no ensemble", path.display()),
        }
    }
    config.validate()?;
    Ok(config)
}

fn configure_threads(threads: Option<usize>) -> Result<()> {
    let Some(n) = threads else { return Ok(()) };
    #[cfg(feature = "parallel")]
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .context("configuring the worker pool")?;
    #[cfg(not(feature = "parallel"))]
    log::warn!("--threads {n} ignored: built without the parallel feature");
    Ok(())
}

fn print_report(report: &RunReport, dir: &Path) {
    println!("scenario {} (config {})", report.scenario, &report.provenance.config_sha256[..12]);
    for a in &report.analyses {
        println!("[{}]", a.name);
        for m in &a.metrics {
            let verdict = match m.passed {
                Some(true) => "pass",
                Some(false) => "FAIL",
                None => "-",
            };
            println!("  {:<28} {:>14.6e}  {verdict}", m.name, m.value);
        }
    }
    println!("outputs in {}", dir.display());
}

fn run(cli: Cli) -> Result<()> {
    configure_threads(cli.threads)?;
    let exec = if cli.sequential {
        Execution::Sequential
    } else {
        Execution::default()
    };
    match cli.command {
        Command::Run {
            config,
            output_dir,
            seed,
            no_plots,
        } => {
            let cfg = load(&config, seed)?;
            let dir = output_dir
                .clone()
                .or_else(|| cfg.output_dir.clone())
                .unwrap_or_else(|| PathBuf::from("out").join(cfg.scenario.as_str()));
            let options = RunOptions {
                output_dir: Some(dir.clone()),
                no_plots,
                exec,
            };
            let start = std::time::Instant::now();
            let report = run_scenario(&cfg, &options).with_context(|| format!("running {}", config.display()))?;
            log::info!("finished in {:.2?}", start.elapsed());
            print_report(&report, &dir);
            let failures = report.failures();
            if !failures.is_empty() {
                let names: Vec<&str> = failures.iter().map(|m| m.name.as_str()).collect();
                return Err(ScenarioError::Checks {
                    failed: failures.len(),
                    names: names.join(", "),
                }
                .into());
            }
        }
        Command::ListScenarios { dir } => {
            for name in ScenarioName::ALL {
                println!("{:<24} {}", name.as_str(), name.summary());
            }
            if dir.is_dir() {
                let mut paths: Vec<PathBuf> = std::fs::read_dir(&dir)
                    .with_context(|| format!("reading {}", dir.display()))?
                    .filter_map(|e| e.ok().map(|e| e.path()))
                    .filter(|p| p.extension().is_some_and(|x| x == "toml"))
                    .collect();
                paths.sort();
                println!();
                for p in paths {
                    match ScenarioConfig::load(&p) {
                        Ok(c) => println!("{:<40} {}", p.display(), c.scenario),
                        Err(e) => println!("{:<40} invalid: {e}", p.display()),
                    }
                }
            }
        }
        Command::Validate { config, seed } => {
            let cfg = load(&config, seed)?;
            println!("{}: ok ({}, sha256 {})", config.display(), cfg.scenario, cfg.hash()?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            let code = err
                .chain()
                .find_map(|e| e.downcast_ref::<ScenarioError>())
                .map_or(1, ScenarioError::exit_code);
            ExitCode::from(code as u8)
        }
    }
}
