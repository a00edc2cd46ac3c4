use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};
use log::{info, warn};

use rotor_recon::gradients::ParamBlock;
use rotor_recon::pgd::IterationRecord;
use rotor_recon::scenario::{
    gradcheck, presets, reconstruct, simulate, GradcheckOptions, GroundTruth, ReconstructOptions,
    ScenarioConfig, GRADCHECK_TOLERANCE,
};

const EXIT_INPUT: u8 = 3;
const EXIT_NUMERICAL: u8 = 4;

#[derive(Parser, Debug)]
#[command(name = "rotor-recon", version, about = "Simulate and reconstruct laser-kicked rotor ensembles")]
struct Cli {
    /// Worker threads (default: all cores). Results do not depend on it.
    #[arg(long, global = true, value_name = "N")]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
#[group(required = true, multiple = false)]
struct Source {
    /// Scenario config (JSON).
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Built-in scenario by name.
    #[arg(long, value_name = "NAME")]
    preset: Option<String>,
}

impl Source {
    fn load(&self) -> anyhow::Result<ScenarioConfig> {
        match (&self.config, &self.preset) {
            (Some(p), _) => Ok(ScenarioConfig::load(p)?),
            (None, Some(name)) => presets::by_name(name).ok_or_else(|| {
                let names: Vec<String> = presets::all().into_iter().map(|c| c.name).collect();
                anyhow!(rotor_recon::Error::Input(format!(
                    "unknown preset '{name}' (available: {})",
                    names.join(", ")
                )))
            }),
            (None, None) => unreachable!("clap enforces one source"),
        }
    }
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Forward-simulate the configured observables.
    Simulate {
        #[command(flatten)]
        source: Source,
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
        /// Noise seed (overrides the config).
        #[arg(long, value_name = "N")]
        seed: Option<u64>,
    },
    /// Fit the configured unknowns to reference trajectories.
    Reconstruct {
        #[command(flatten)]
        source: Source,
        /// Directory with reference trajectories (overrides the config's `data`).
        #[arg(long, value_name = "DIR")]
        data: Option<PathBuf>,
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
        /// Optimizer seed (overrides the config).
        #[arg(long, value_name = "N")]
        seed: Option<u64>,
        /// Ground-truth file for error metrics; never read otherwise.
        #[arg(long, value_name = "FILE")]
        truth: Option<PathBuf>,
        /// Print every k-th iteration (default: about 20 rows).
        #[arg(long, value_name = "K")]
        every: Option<usize>,
    },
    /// Compare analytic gradients with central differences.
    Gradcheck {
        #[command(flatten)]
        source: Source,
        #[arg(long, value_name = "DIR")]
        data: Option<PathBuf>,
        /// Blocks to check: a, b, p, P, I, T (default: all).
        #[arg(long = "block", value_name = "BLOCK", value_parser = parse_block)]
        blocks: Vec<ParamBlock>,
        /// Evaluation-point seed.
        #[arg(long, value_name = "N", default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = GRADCHECK_TOLERANCE)]
        tolerance: f64,
        /// Write the report as JSON here.
        #[arg(long, value_name = "DIR")]
        out: Option<PathBuf>,
        #[arg(long, hide = true, value_parser = parse_block)]
        corrupt: Option<ParamBlock>,
    },
    /// List the built-in scenarios, or write them as JSON configs.
    Presets {
        #[arg(long, value_name = "DIR")]
        out: Option<PathBuf>,
    },
}

fn parse_block(s: &str) -> Result<ParamBlock, String> {
    ParamBlock::parse(s).ok_or_else(|| format!("unknown block '{s}' (use a, b, p, P, I or T)"))
}

fn exit_for(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<rotor_recon::Error>() {
        Some(rotor_recon::Error::Numerical(_)) => EXIT_NUMERICAL,
        _ => EXIT_INPUT,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_INPUT } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    if let Err(e) = configure_threads(cli.threads) {
        eprintln!("error: {e:#}");
        return ExitCode::from(EXIT_INPUT);
    }
    match run(cli.command) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_for(&e))
        }
    }
}

#[cfg(feature = "parallel")]
fn configure_threads(threads: Option<usize>) -> anyhow::Result<()> {
    if let Some(n) = threads {
        if n == 0 {
            return Err(anyhow!("--threads must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring the thread pool")?;
    }
    Ok(())
}

#[cfg(not(feature = "parallel"))]
fn configure_threads(threads: Option<usize>) -> anyhow::Result<()> {
    if threads.is_some_and(|n| n > 1) {
        warn!("built without the `parallel` feature; --threads is ignored");
    }
    Ok(())
}

fn run(command: Command) -> anyhow::Result<u8> {
    match command {
        Command::Simulate { source, out, seed } => {
            let cfg = source.load()?;
            let sim = simulate(&cfg, seed, Some(&out))?;
            for f in &sim.files {
                println!("{}", f.display());
            }
            Ok(0)
        }
        Command::Reconstruct {
            source,
            data,
            out,
            seed,
            truth,
            every,
        } => {
            let cfg = source.load()?;
            let truth = truth.as_deref().map(GroundTruth::load).transpose()?;
            let rec = reconstruct(
                &cfg,
                ReconstructOptions {
                    data,
                    truth,
                    seed,
                    ..Default::default()
                },
            )?;
            rec.write(&out)?;
            print_table(&rec.outcome.trace.initial, &rec.outcome.trace.records, every);
            let b = &rec.bundle;
            println!(
                "status {:?} after {} iterations, E = {:.6e}, target error = {:.6e}",
                b.status, b.iterations, b.objective, b.target_error
            );
            if let Some(m) = &b.metrics {
                println!("metrics {}", serde_json::to_string(m)?);
            }
            println!("wrote {}", out.join("result.json").display());
            if b.exit_code != 0 {
                warn!("reconstruction did not converge ({:?})", b.status);
            }
            Ok(b.exit_code as u8)
        }
        Command::Gradcheck {
            source,
            data,
            blocks,
            seed,
            tolerance,
            out,
            corrupt,
        } => {
            let cfg = source.load()?;
            let mut report = gradcheck(
                &cfg,
                &GradcheckOptions {
                    data,
                    seed,
                    tolerance,
                    corrupt,
                },
            )?;
            if !blocks.is_empty() {
                report.rows.retain(|r| blocks.iter().any(|b| b.label() == r.block));
                report.passed = report.rows.iter().all(|r| r.passed);
            }
            println!("{:<6} {:>6} {:>14} {:>12}  result", "block", "n", "rel. error", "step");
            for r in &report.rows {
                match r.relative_error {
                    Some(e) => println!(
                        "{:<6} {:>6} {:>14.3e} {:>12.3e}  {}",
                        r.block,
                        r.components,
                        e,
                        r.step.unwrap_or(0.0),
                        if r.passed { "ok" } else { "FAIL" }
                    ),
                    None => println!("{:<6} {:>6} {:>14} {:>12}  n/a", r.block, r.components, "-", "-"),
                }
            }
            if let Some(dir) = out {
                std::fs::create_dir_all(&dir)?;
                let path = dir.join("gradcheck.json");
                std::fs::write(&path, serde_json::to_string_pretty(&report)? + "\n")?;
                info!("wrote {}", path.display());
            }
            Ok(if report.passed { 0 } else { EXIT_NUMERICAL })
        }
        Command::Presets { out } => {
            for cfg in presets::all() {
                match &out {
                    Some(dir) => {
                        let path = write_preset(dir, &cfg)?;
                        println!("{}", path.display());
                    }
                    None => println!("{:<6}  {}", cfg.name, cfg.description),
                }
            }
            Ok(0)
        }
    }
}

fn write_preset(dir: &Path, cfg: &ScenarioConfig) -> anyhow::Result<PathBuf> {
    std::fs::create_dir_all(dir)?;
    let path = dir.join(format!("{}.json", cfg.name));
    std::fs::write(&path, cfg.to_json()).with_context(|| format!("writing {}", path.display()))?;
    Ok(path)
}

fn print_table(initial: &IterationRecord, records: &[IterationRecord], every: Option<usize>) {
    let every = every.unwrap_or_else(|| records.len().div_ceil(20).max(1)).max(1);
    println!(
        "{:>6} {:>13} {:>13} {:>11} {:>10} {:>3}  extra",
        "iter", "E", "target err", "|proj g|", "step", "bt"
    );
    let rows = std::iter::once(initial).chain(
        records
            .iter()
            .enumerate()
            .filter(|(k, _)| (k + 1) % every == 0 || k + 1 == records.len())
            .map(|(_, r)| r),
    );
    for r in rows {
        let mut extra = Vec::new();
        if !r.strengths.is_empty() {
            extra.push(format!("P={:?}", r.strengths));
        }
        extra.push(format!("I={:.6}", r.inertia));
        if let Some(t) = r.temperature {
            extra.push(format!("T={t:.4}"));
        }
        for (k, v) in &r.metrics {
            extra.push(format!("{k}={v:.3e}"));
        }
        println!(
            "{:>6} {:>13.6e} {:>13.6e} {:>11.3e} {:>10.3e} {:>3}  {}",
            r.iteration,
            r.value,
            r.target_error,
            r.projected_grad_norm,
            r.step,
            r.backtracks,
            extra.join(" ")
        );
    }
}
