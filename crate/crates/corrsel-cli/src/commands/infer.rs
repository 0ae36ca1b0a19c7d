use std::path::PathBuf;

use clap::Args;
use serde::Serialize;

use corrsel::net::{infer, load_checkpoint, mine_graph};

use crate::commands::{load_scenes, write_lines};
use crate::config::FileConfig;
use crate::error::CliError;

#[derive(Args)]
pub struct InferArgs {
    /// Dataset file to classify
    #[arg(long)]
    pub data: PathBuf,
    /// Trained checkpoint
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Output labels file (one scene per line)
    #[arg(long)]
    pub out: PathBuf,
    /// Config file with `key = value` lines; flags override it
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Neighborhood size; must match the checkpoint when given
    #[arg(long)]
    pub k: Option<usize>,
    /// Maximum correspondences per scene for the score matrix [default: 4000]
    #[arg(long)]
    pub max_set_size: Option<usize>,
}

#[derive(Serialize)]
struct InferRecord {
    scene: usize,
    probabilities: Vec<f64>,
    labels: Vec<u8>,
}

pub fn run(args: InferArgs) -> Result<(), CliError> {
    let file = FileConfig::load(args.config.as_deref())?;
    let max_set_size = file.resolve(args.max_set_size, "max_set_size", 4000)?;
    let checkpoint = load_checkpoint(&args.checkpoint)
        .map_err(|e| CliError::data(format!("{}: {e}", args.checkpoint.display())))?;
    if let Some(k) = file.get(args.k, "k")? {
        if k != checkpoint.k {
            return Err(CliError::data(format!(
                "--k {} does not match the checkpoint's k = {}",
                k, checkpoint.k
            )));
        }
    }
    let scenes = load_scenes(&args.data)?;

    let mut lines = Vec::with_capacity(scenes.len());
    for (idx, scene) in scenes.iter().enumerate() {
        let graph = mine_graph(
            &scene.correspondences,
            checkpoint.mining,
            checkpoint.k,
            checkpoint.lambda,
            max_set_size,
        )?;
        let (probabilities, labels) = infer(
            &checkpoint.model,
            &checkpoint.params,
            &scene.correspondences,
            &graph,
        )?;
        let record = InferRecord {
            scene: idx,
            probabilities,
            labels: labels.to_u8(),
        };
        lines.push(
            serde_json::to_string(&record)
                .map_err(|e| CliError::runtime(format!("serialize: {e}")))?,
        );
    }
    write_lines(&args.out, &lines)?;
    println!("wrote {} scenes to {}", lines.len(), args.out.display());
    Ok(())
}
