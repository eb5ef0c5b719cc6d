use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use securepose::evalkit::{
    run_bench, run_detect, run_eval, run_localize, run_simulate, run_train_detector,
    run_train_pose, PipelineConfig,
};

/// Cross-modal video forgery detection from Wi-Fi CSI.
#[derive(Parser)]
#[command(name = "securepose", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build the synthetic dataset and its manifest.
    Simulate(Common),
    /// Train CSI2Pose on authentic training GOPs.
    TrainPose(Common),
    /// Train the forgery detector on compacted JHM pairs.
    TrainDetector(Common),
    /// Score every GOP and write decisions.csv.
    Detect(Common),
    /// Localize abnormal persons in GOPs flagged as forged.
    Localize(Common),
    /// Compute detection and localization metrics on the test split.
    Eval(Common),
    /// Time each inference stage with frozen models.
    Bench(Common),
}

#[derive(Args)]
struct Common {
    /// JSON pipeline config; defaults are used when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Artifact directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Number of GOPs to simulate.
    #[arg(long)]
    gops: Option<usize>,
    /// Fixed number of people per scene.
    #[arg(long)]
    people: Option<usize>,
}

impl Common {
    fn resolve(&self) -> Result<PipelineConfig> {
        let mut cfg = match &self.config {
            Some(path) => {
                PipelineConfig::load(path).with_context(|| format!("loading {}", path.display()))?
            }
            None => PipelineConfig::default(),
        };
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(out) = &self.out {
            cfg.out_dir = out.clone();
        }
        if let Some(gops) = self.gops {
            cfg.dataset.gops = gops;
        }
        if let Some(people) = self.people {
            cfg.dataset.min_people = people;
            cfg.dataset.max_people = people;
        }
        cfg.harmonize();
        cfg.validate().context("invalid config")?;
        Ok(cfg)
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate(c) => {
            let cfg = c.resolve()?;
            let manifest = run_simulate(&cfg)?;
            println!("wrote {}", manifest.display());
        }
        Command::TrainPose(c) => {
            let cfg = c.resolve()?;
            run_train_pose(&cfg, |e| {
                eprintln!(
                    "epoch {:>2}  lr {:.2e}  loss {:.2}  {:.1}s",
                    e.epoch, e.learning_rate, e.mean_loss, e.seconds
                )
            })?;
            println!("wrote {}", cfg.pose_model_path().display());
        }
        Command::TrainDetector(c) => {
            let cfg = c.resolve()?;
            run_train_detector(&cfg, |e| {
                eprintln!("epoch {:>2}  loss {:.4}", e.epoch, e.mean_loss)
            })?;
            println!("wrote {}", cfg.detector_model_path().display());
        }
        Command::Detect(c) => {
            let cfg = c.resolve()?;
            let rows = run_detect(&cfg)?;
            let forged = rows.iter().filter(|r| r.label == 1).count();
            println!(
                "{} GOPs, {forged} flagged; wrote {}",
                rows.len(),
                cfg.decisions_path().display()
            );
        }
        Command::Localize(c) => {
            let cfg = c.resolve()?;
            let reports = run_localize(&cfg)?;
            println!(
                "{} GOPs localized; wrote {}",
                reports.len(),
                cfg.localization_path().display()
            );
        }
        Command::Eval(c) => {
            let cfg = c.resolve()?;
            let metrics = run_eval(&cfg)?;
            println!("{}", serde_json::to_string_pretty(&metrics)?);
        }
        Command::Bench(c) => {
            let cfg = c.resolve()?;
            let report = run_bench(&cfg)?;
            print!("{}", report.table());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
