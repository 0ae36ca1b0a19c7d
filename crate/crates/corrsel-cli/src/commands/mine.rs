use std::path::PathBuf;

use clap::Args;
use serde::Serialize;

use corrsel::net::{mine_graph, Mining};

use crate::commands::{load_scenes, write_lines};
use crate::config::FileConfig;
use crate::error::CliError;

#[derive(Args)]
pub struct MineArgs {
    /// Labeled dataset file
    #[arg(long)]
    pub data: PathBuf,
    /// Output graphs file (one scene per line)
    #[arg(long)]
    pub out: PathBuf,
    /// Config file with `key = value` lines; flags override it
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Neighborhood size [default: 8]
    #[arg(long)]
    pub k: Option<usize>,
    /// Miner: compatibility or spatial [default: compatibility]
    #[arg(long)]
    pub miner: Option<Mining>,
    /// Compatibility kernel bandwidth λ [default: 0.001]
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Store the query itself at position 0 of each list [default: true]
    #[arg(long)]
    pub include_self: Option<bool>,
    /// Maximum correspondences per scene for the score matrix [default: 4000]
    #[arg(long)]
    pub max_set_size: Option<usize>,
}

#[derive(Serialize)]
struct GraphRecord {
    scene: usize,
    miner: String,
    k: usize,
    include_self: bool,
    nodes: Vec<Vec<usize>>,
    scores: Vec<Vec<f64>>,
}

pub fn run(args: MineArgs) -> Result<(), CliError> {
    let file = FileConfig::load(args.config.as_deref())?;
    let k = file.resolve(args.k, "k", 8)?;
    let miner = file.resolve(args.miner, "miner", Mining::Compatibility)?;
    let lambda = file.resolve(args.lambda, "lambda", 1e-3)?;
    let include_self = file.resolve(args.include_self, "include_self", true)?;
    let max_set_size = file.resolve(args.max_set_size, "max_set_size", 4000)?;
    let scenes = load_scenes(&args.data)?;

    let mut lines = Vec::with_capacity(scenes.len());
    for (idx, scene) in scenes.iter().enumerate() {
        let graph = if include_self {
            mine_graph(&scene.correspondences, miner, k, lambda, max_set_size)?
        } else {
            match miner {
                Mining::Compatibility => {
                    let matrix = corrsel::compat::score_matrix_with_cap(
                        &scene.correspondences,
                        lambda,
                        max_set_size,
                    )?;
                    corrsel::compat::mine_cs_knn(&matrix, k, false)?
                }
                Mining::Spatial => {
                    corrsel::compat::mine_spatial_knn(&scene.correspondences, k, false)?
                }
            }
        };
        let record = GraphRecord {
            scene: idx,
            miner: miner.to_string(),
            k,
            include_self,
            nodes: (0..graph.n()).map(|i| graph.neighbors(i).to_vec()).collect(),
            scores: (0..graph.n()).map(|i| graph.scores_of(i).to_vec()).collect(),
        };
        lines.push(
            serde_json::to_string(&record)
                .map_err(|e| CliError::runtime(format!("serialize graph: {e}")))?,
        );
    }
    write_lines(&args.out, &lines)?;
    println!("wrote {} graphs to {}", lines.len(), args.out.display());
    Ok(())
}
