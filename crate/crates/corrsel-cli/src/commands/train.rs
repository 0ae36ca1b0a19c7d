use std::path::PathBuf;

use clap::Args;

use corrsel::net::{save_checkpoint, train, Architecture, Mining, TrainConfig};

use crate::commands::load_scenes;
use crate::config::FileConfig;
use crate::error::CliError;

#[derive(Args)]
pub struct TrainArgs {
    /// Labeled dataset file
    #[arg(long)]
    pub data: PathBuf,
    /// Output checkpoint file
    #[arg(long)]
    pub out: PathBuf,
    /// Config file with `key = value` lines; flags override it
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Neighbor mining: compatibility or spatial [default: compatibility]
    #[arg(long)]
    pub mining: Option<Mining>,
    /// Training epochs [default: 10]
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Scenes per optimization step [default: 16]
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Adam learning rate [default: 0.001]
    #[arg(long)]
    pub learning_rate: Option<f64>,
    /// Neighborhood size [default: 8]
    #[arg(long)]
    pub k: Option<usize>,
    /// Compatibility kernel bandwidth λ [default: 0.001]
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Seed for init and batch order [default: 0]
    #[arg(long)]
    pub seed: Option<u64>,
    /// Held-out fraction for the per-epoch validation log [default: 0.1]
    #[arg(long)]
    pub val_fraction: Option<f64>,
    /// Architecture: 'standard', 'tiny', or a full layer string [default: standard]
    #[arg(long)]
    pub arch: Option<String>,
    /// Maximum correspondences per scene for the score matrix [default: 4000]
    #[arg(long)]
    pub max_set_size: Option<usize>,
}

pub fn parse_arch(raw: &str) -> Result<Architecture, CliError> {
    match raw {
        "standard" => Ok(Architecture::standard()),
        "tiny" => Ok(Architecture::tiny()),
        custom => Architecture::parse(custom)
            .map_err(|e| CliError::usage(format!("--arch: {e}"))),
    }
}

pub fn run(args: TrainArgs) -> Result<(), CliError> {
    let file = FileConfig::load(args.config.as_deref())?;
    let config = TrainConfig {
        learning_rate: file.resolve(args.learning_rate, "learning_rate", 1e-3)?,
        batch_size: file.resolve(args.batch_size, "batch_size", 16)?,
        epochs: file.resolve(args.epochs, "epochs", 10)?,
        k: file.resolve(args.k, "k", 8)?,
        lambda: file.resolve(args.lambda, "lambda", 1e-3)?,
        seed: file.resolve(args.seed, "seed", 0)?,
        mining: file.resolve(args.mining, "mining", Mining::Compatibility)?,
        arch: parse_arch(&file.resolve(args.arch, "arch", "standard".to_string())?)?,
        val_fraction: file.resolve(args.val_fraction, "val_fraction", 0.1)?,
        max_set_size: file.resolve(args.max_set_size, "max_set_size", 4000)?,
    };
    let scenes = load_scenes(&args.data)?;

    let outcome = train(&scenes, &config)?;
    for e in &outcome.log {
        println!(
            "epoch {:>3}  loss {:.6}  val P {:.4}  R {:.4}  F {:.4}",
            e.epoch, e.train_loss, e.val_precision, e.val_recall, e.val_f_measure
        );
    }
    save_checkpoint(
        &args.out,
        &outcome.model,
        &outcome.params,
        config.k,
        config.lambda,
        config.mining,
        config.seed,
    )?;
    println!("wrote checkpoint to {}", args.out.display());
    Ok(())
}
