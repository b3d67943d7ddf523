use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use dign::commands;
use dign::config::ExperimentConfig;
use dign::{CliError, Result};

#[derive(Parser)]
#[command(name = "dign", version, about = "Diverse Gaussian noise consistency training and evaluation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one model per seed.
    Train(Common),
    /// Score trained models on clean and corrupted test data.
    Eval(WithModel),
    /// Check the curvature identities on a model.
    Verify(WithModel),
    /// Train and score over a hyperparameter grid.
    Sweep(Common),
    /// Collect histories and evaluation reports into one record.
    Report(Common),
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory; overrides `output_dir` from the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Run this seed only.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_name = "NAME")]
    preset: Option<String>,
}

#[derive(Args)]
struct WithModel {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    model: Option<PathBuf>,
}

fn resolve(c: &Common) -> Result<(ExperimentConfig, PathBuf)> {
    let mut config = match &c.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(p) = &c.preset {
        config.apply_preset(p)?;
    }
    if let Some(s) = c.seed {
        config.seeds = vec![s];
    }
    let out = c
        .out
        .clone()
        .or_else(|| config.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from("runs"));
    config.validate()?;
    Ok((config, out))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train(c) => {
            let (config, out) = resolve(&c)?;
            for r in commands::cmd_train(&config, &out)? {
                let best = r.history.selected_epoch.map(|e| r.history.epochs[e].val_accuracy);
                println!("seed {}: selected epoch {:?}, val accuracy {:?}", r.seed, r.history.selected_epoch, best);
            }
        }
        Command::Eval(m) => {
            let (config, out) = resolve(&m.common)?;
            let rec = commands::cmd_eval(&config, &out, m.model.as_deref())?;
            for a in &rec.aggregate {
                println!("{:<10} {:.4} +- {:.4} (n={})", a.metric, a.mean, a.std, a.n);
            }
        }
        Command::Verify(m) => {
            let (config, out) = resolve(&m.common)?;
            let v = commands::cmd_verify(&config, &out, m.model.as_deref())?;
            for c in &v.checks {
                let tag = if c.passed { "PASS" } else { "FAIL" };
                println!("{tag} {:<32} {:e} (tol {:e}) {}", c.check, c.measured, c.tolerance, c.detail);
            }
            if v.failures() > 0 {
                return Err(CliError::CheckFailed(v.failures()));
            }
        }
        Command::Sweep(c) => {
            let (config, out) = resolve(&c)?;
            let rows = commands::cmd_sweep(&config, &out)?;
            println!("{} rows written to {}", rows.len(), out.join("sweep.csv").display());
        }
        Command::Report(c) => {
            let (config, out) = resolve(&c)?;
            let r = commands::cmd_report(&config, &out)?;
            for a in &r.aggregate {
                println!("{:<10} {:.4} +- {:.4} (n={})", a.metric, a.mean, a.std, a.n);
            }
            println!("{}", Path::new(&out).join("run_record.json").display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
