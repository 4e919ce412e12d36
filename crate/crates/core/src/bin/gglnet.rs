use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use gglnet::cli::{self, Overrides};
use gglnet::error::{Error, Result};
use gglnet::metrics::MetricsReport;

/// Infrared small-target segmentation: data, training, evaluation.
#[derive(Parser)]
#[command(name = "gglnet", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic dataset to --out.
    Synth(Flags),
    /// Train the configured variant.
    Train(Flags),
    /// Evaluate a checkpoint on the test split.
    Eval(Flags),
    /// Train and evaluate every configured variant.
    Ablate(Flags),
    /// Threshold sweep on the test split: CSVs and plots.
    Roc(Flags),
    /// Gradient-magnitude PNGs for an image or directory (--data).
    Preprocess(Flags),
}

#[derive(Args)]
struct Flags {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    step: Option<f64>,
    #[arg(long)]
    threshold: Option<f32>,
}

impl From<Flags> for Overrides {
    fn from(f: Flags) -> Self {
        Overrides {
            config: f.config,
            checkpoint: f.checkpoint,
            data: f.data,
            out: f.out,
            seed: f.seed,
            epochs: f.epochs,
            step: f.step,
            threshold: f.threshold,
        }
    }
}

fn print_report(r: &MetricsReport) {
    println!("{r}");
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Synth(f) => {
            let cfg = Overrides::from(f).resolve()?;
            let n = cli::cmd_synth(&cfg)?;
            println!("wrote {n} samples to {}", cfg.out.display());
        }
        Command::Train(f) => {
            let cfg = Overrides::from(f).resolve()?;
            let s = cli::cmd_train(&cfg)?;
            let best = &s.history[s.best_epoch - 1];
            println!("{} parameters, best nIoU at epoch {}", s.parameters, s.best_epoch);
            print_report(&best.metrics);
            println!("checkpoint {}", s.checkpoint.display());
        }
        Command::Eval(f) => {
            let o = Overrides::from(f);
            let cfg = o.resolve()?;
            print_report(&cli::cmd_eval(&cfg, &o.checkpoint_path(&cfg))?);
        }
        Command::Ablate(f) => {
            let cfg = Overrides::from(f).resolve()?;
            println!("{:<30} {:>10} {:>8} {:>8}", "scheme", "params", "IoU", "nIoU");
            for r in cli::cmd_ablate(&cfg)? {
                println!(
                    "{:<30} {:>10} {:>8.4} {:>8.4}",
                    r.variant.scheme, r.parameters, r.metrics.iou, r.metrics.niou
                );
            }
        }
        Command::Roc(f) => {
            let o = Overrides::from(f);
            let cfg = o.resolve()?;
            let curve = cli::cmd_roc(&cfg, &o.checkpoint_path(&cfg))?;
            println!("{} thresholds written to {}", curve.points.len(), cfg.out.display());
        }
        Command::Preprocess(f) => {
            let input = f
                .data
                .clone()
                .ok_or_else(|| Error::Config("preprocess needs --data <image or dir>".into()))?;
            let out = f.out.clone().unwrap_or_else(|| PathBuf::from("gradients"));
            let n = cli::cmd_preprocess(&input, &out)?;
            println!("wrote {n} gradient images to {}", out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let parsed = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(parsed.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(cli::exit_code(&e) as u8)
        }
    }
}
