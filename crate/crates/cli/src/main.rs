use std::net::SocketAddr;
use std::path::PathBuf;

use anyhow::Context;
use clap::{Parser, Subcommand, ValueEnum};
use probseg_cli::stages::{self, CheckpointChoice};
use probseg_cli::{Layout, PipelineConfig, Profile};
use probseg_core::Plane;

#[derive(Parser)]
#[command(name = "probseg", version, about = "Slice-sequence PET/CT tumor segmentation pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// TOML configuration; fields not given fall back to the profile.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    #[arg(long, global = true, value_enum, default_value_t = PlaneArg::All)]
    plane: PlaneArg,

    /// Overrides the configured global seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Overrides the configured scale profile.
    #[arg(long, global = true, value_enum)]
    profile: Option<Profile>,

    /// Overrides the configured data directory.
    #[arg(long, global = true)]
    data_root: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum PlaneArg {
    Axial,
    Coronal,
    Sagittal,
    All,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic patients.
    Phantom {
        #[arg(long)]
        n_patients: Option<usize>,
    },
    /// Brain-anchored ROI crop and intensity normalisation.
    Preprocess,
    /// Test hold-out and cross-validation folds.
    Split,
    /// Train one model per plane and fold.
    Train,
    /// Predict every sequence of the test patients.
    Predict {
        #[arg(long, value_enum)]
        checkpoint: Option<CheckpointArg>,
    },
    /// Average overlapping sequence predictions per slice.
    Reconstruct,
    /// Average fold models.
    Ensemble,
    /// Threshold sweep against the ground truth.
    Evaluate,
    /// Cohort summary, figure data and the per-plane table.
    Report,
    /// Every stage in order.
    Run,
    /// Read-only HTTP API.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: SocketAddr,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum CheckpointArg {
    Last,
    BestVal,
    SecondBest,
}

fn load_config(cli: &Cli) -> anyhow::Result<PipelineConfig> {
    let mut cfg = match &cli.config {
        Some(path) => PipelineConfig::load(path).with_context(|| format!("loading {}", path.display()))?,
        None => PipelineConfig::profile(cli.profile.unwrap_or(Profile::Desk)),
    };
    if let (Some(p), Some(_)) = (cli.profile, &cli.config) {
        if p != cfg.profile {
            anyhow::bail!("--profile {p:?} conflicts with the profile in the configuration file");
        }
    }
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(root) = &cli.data_root {
        cfg.data_root = root.clone();
    }
    if !matches!(cli.plane, PlaneArg::All) {
        cfg.planes = planes(cli.plane);
    }
    cfg.validate()?;
    Ok(cfg)
}

fn planes(p: PlaneArg) -> Vec<Plane> {
    match p {
        PlaneArg::Axial => vec![Plane::Axial],
        PlaneArg::Coronal => vec![Plane::Coronal],
        PlaneArg::Sagittal => vec![Plane::Sagittal],
        PlaneArg::All => Plane::ALL.to_vec(),
    }
}

fn main() -> anyhow::Result<()> {
    let cli = Cli::parse();
    let mut cfg = load_config(&cli)?;
    let planes = cfg.planes.clone();
    match cli.command {
        Command::Phantom { n_patients } => {
            if let Some(n) = n_patients {
                cfg.n_patients = n;
            }
            let m = stages::cmd_phantom(&cfg)?;
            println!("wrote {} patients to {}", m.patients.len(), cfg.data_root.display());
        }
        Command::Preprocess => {
            for line in stages::cmd_preprocess(&cfg)? {
                println!("{} {:?} threshold {}", line.id, line.status, line.threshold);
            }
        }
        Command::Split => {
            let splits = stages::cmd_split(&cfg, &planes)?;
            if let Some(s) = splits.first() {
                println!("test: {}", s.test.join(" "));
                for (i, f) in s.folds.iter().enumerate() {
                    println!("fold {i}: {}", f.join(" "));
                }
            }
        }
        Command::Train => {
            for s in stages::cmd_train(&cfg, &planes)? {
                println!(
                    "{} fold {}: {} train / {} val sequences, best val DSC {:.3} at epoch {}",
                    s.plane, s.fold, s.train_sequences, s.val_sequences, s.best_val_dsc, s.best_val_epoch
                );
            }
        }
        Command::Predict { checkpoint } => {
            let choice = match checkpoint {
                None => cfg.predict_checkpoint,
                Some(CheckpointArg::Last) => CheckpointChoice::Last,
                Some(CheckpointArg::BestVal) => CheckpointChoice::BestVal,
                Some(CheckpointArg::SecondBest) => CheckpointChoice::SecondBest,
            };
            stages::cmd_predict(&cfg, &planes, choice)?;
        }
        Command::Reconstruct => stages::cmd_reconstruct(&cfg, &planes)?,
        Command::Ensemble => stages::cmd_ensemble(&cfg, &planes)?,
        Command::Evaluate => {
            let rows = stages::cmd_evaluate(&cfg, &planes)?;
            println!("{} sweep rows", rows.len());
        }
        Command::Report => print!("{}", stages::cmd_report(&cfg)?.table(0.9)),
        Command::Run => print!("{}", stages::run_all(&cfg, &planes)?.table(0.9)),
        Command::Serve { addr } => {
            let rt = tokio::runtime::Runtime::new()?;
            println!("serving {} on http://{addr}", cfg.data_root.display());
            rt.block_on(probseg_cli::server::serve(Layout::new(&cfg.data_root), addr))?;
        }
    }
    Ok(())
}
