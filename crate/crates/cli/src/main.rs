use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use obil_cli::config::ExperimentConfig;
use obil_cli::pipeline;
use obil_cli::{CliError, Result};

#[derive(Parser)]
#[command(name = "obil", version, about = "Prior-shift robust likelihood-ratio classification experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic CSV from the gaussian data source.
    Gen(Common),
    /// Fit and serialize an ensemble; also writes the splits.
    Train(Common),
    /// Fit a temperature and report ECE before/after with the gate verdict.
    Calibrate(Common),
    /// Run the adapter over the scenario and emit its trace.
    Simulate(Common),
    /// Run the regret experiment and emit the ledger.
    Regret(Common),
    /// Evaluate a serialized ensemble on a CSV file.
    Evaluate(Common),
    /// Full pipeline for every configured seed.
    Run(Common),
}

#[derive(clap::Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    /// Output directory (overrides `output_dir` in the config).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Run only this seed instead of the configured list.
    #[arg(long)]
    seed: Option<u64>,
}

struct Resolved {
    cfg: ExperimentConfig,
    out: Option<PathBuf>,
    seed: u64,
}

fn resolve(c: &Common) -> Result<Resolved> {
    let mut cfg = ExperimentConfig::load(&c.config)?;
    if let Some(s) = c.seed {
        cfg.seeds = vec![s];
    }
    if c.out.is_some() {
        cfg.output_dir = c.out.clone();
    }
    Ok(Resolved { seed: cfg.seeds[0], out: cfg.output_dir.clone(), cfg })
}

fn need_out(out: &Option<PathBuf>) -> Result<&Path> {
    out.as_deref().ok_or_else(|| CliError::Config("no output directory (use --out or output_dir)".into()))
}

/// Writes `name` under `out`, or to stdout without an output directory.
fn emit(out: &Option<PathBuf>, name: &str, bytes: &[u8]) -> Result<()> {
    match out {
        Some(dir) => {
            std::fs::create_dir_all(dir).map_err(|e| CliError::Io { path: dir.clone(), source: e })?;
            let path = dir.join(name);
            std::fs::write(&path, bytes).map_err(|e| CliError::Io { path, source: e })
        }
        None => std::io::stdout()
            .write_all(bytes)
            .map_err(|e| CliError::Io { path: PathBuf::from("<stdout>"), source: e }),
    }
}

fn execute(command: Command) -> Result<bool> {
    obil_cli::configure_threads()?;
    match command {
        Command::Gen(c) => {
            let r = resolve(&c)?;
            emit(&r.out, "data.csv", &pipeline::gen_csv(&r.cfg, r.seed)?)?;
        }
        Command::Train(c) => {
            let r = resolve(&c)?;
            let s = pipeline::train(&r.cfg, r.seed, need_out(&r.out)?)?;
            eprintln!("trained {} members on {} samples (Q_P = {:.3})", s.member_training_qps.len(), s.train_counts.0 + s.train_counts.1, s.native_qp);
        }
        Command::Calibrate(c) => {
            let r = resolve(&c)?;
            let rep = pipeline::calibrate(&r.cfg, r.seed, need_out(&r.out)?)?;
            println!(
                "ECE before {:.4} after {:.4} (T = {:.4}); gate < {}: {}",
                rep.ece_before,
                rep.ece_after,
                rep.temperature,
                rep.gate,
                if rep.gate_passed { "PASS" } else { "FAIL" }
            );
        }
        Command::Simulate(c) => {
            let r = resolve(&c)?;
            let trace = pipeline::simulate(&r.cfg, r.seed)?;
            let text: String = trace.iter().map(|s| s.to_json_line() + "\n").collect();
            emit(&r.out, "trace.jsonl", text.as_bytes())?;
        }
        Command::Regret(c) => {
            let r = resolve(&c)?;
            let run = pipeline::regret(&r.cfg, r.seed)?;
            emit(&r.out, "regret.csv", run.ledger.to_csv().as_bytes())?;
        }
        Command::Evaluate(c) => {
            let r = resolve(&c)?;
            let rep = pipeline::evaluate(&r.cfg, r.seed, need_out(&r.out)?)?;
            println!("{}", serde_json::to_string(&rep.metrics).expect("metrics serialize"));
        }
        Command::Run(c) => {
            let r = resolve(&c)?;
            let rep = pipeline::run_experiment(&r.cfg, need_out(&r.out)?)?;
            for f in &rep.failures {
                eprintln!("seed {} failed in stage '{}': {}", f.seed, f.stage, f.message);
            }
            return Ok(rep.failures.is_empty());
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(3),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
