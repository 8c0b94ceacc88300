use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use s2r2::config::ExperimentConfig;
use s2r2::experiment::{self, CHECKPOINT_FILE};

#[derive(Parser)]
#[command(name = "s2r2", version, about = "Self-supervised representation learning by ranking")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// TOML experiment config; defaults apply to every missing key.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Root seed; overrides the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; overrides the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Single-threaded, bit-reproducible execution.
    #[arg(long)]
    deterministic: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Train an encoder and write metrics.jsonl, checkpoint.bin and config.echo.
    Train(Common),
    /// Run the batch-shape grid from the [ablation] section and write grid.csv.
    Ablate(Common),
    /// Train the ranking and contrastive objectives on identical batches.
    Compare(Common),
    /// Linear-probe an existing checkpoint.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Checkpoint to evaluate; defaults to <out>/checkpoint.bin.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Check exact AP and every analytic gradient against independent references.
    Selftest {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn load(common: &Common) -> Result<ExperimentConfig> {
    let mut cfg = match &common.config {
        Some(path) => ExperimentConfig::from_file(path).with_context(|| format!("loading {}", path.display()))?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &common.out {
        cfg.output_dir = out.clone();
    }
    if common.deterministic {
        cfg.deterministic = true;
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Train(common) => {
            let cfg = load(&common)?;
            let out = experiment::run_experiment(&cfg)?;
            let last = out.final_record();
            println!(
                "step {} loss {:.6} probe_top1 {:.4} retrieval_map {}",
                last.step,
                last.train_loss,
                out.final_probe_top1(),
                last.retrieval_map.map_or("n/a".to_string(), |m| format!("{m:.4}"))
            );
        }
        Command::Ablate(common) => {
            let cfg = load(&common)?;
            let rows = experiment::run_ablation_grid(&cfg, &cfg.ablation.b_values, &cfg.ablation.k_values)?;
            for r in &rows {
                match r.probe_top1 {
                    Some(acc) => println!("B={:<4} K={:<3} BK={:<5} probe_top1={acc:.4}", r.b, r.k, r.bk),
                    None => println!("B={:<4} K={:<3} BK={:<5} {}", r.b, r.k, r.bk, r.status),
                }
            }
        }
        Command::Compare(common) => {
            let cfg = load(&common)?;
            let report = experiment::compare_losses(&cfg)?;
            println!(
                "s2r2 {:.4}  infonce {:.4}  delta {:+.4}",
                report.s2r2.final_probe_top1, report.infonce.final_probe_top1, report.delta_probe_top1
            );
        }
        Command::Eval { common, checkpoint } => {
            let cfg = load(&common)?;
            let path = checkpoint.unwrap_or_else(|| cfg.output_dir.join(CHECKPOINT_FILE));
            let report = experiment::evaluate_checkpoint(&cfg, &path)?;
            println!("{}", serde_json::to_string(&report)?);
        }
        Command::Selftest { seed } => {
            let outcomes = s2r2::selftest::run_all(seed);
            let mut ok = true;
            for c in &outcomes {
                println!("[{}] {} ({})", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
                ok &= c.passed;
            }
            return Ok(ok);
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
