use std::path::PathBuf;

use clap::Args;

use corrsel::compat::{
    mine_cs_knn, mine_spatial_knn, neighbor_inlier_ratio, score_matrix_with_cap, NeighborStats,
    RatioBucket,
};

use crate::commands::{load_scenes, parse_ks};
use crate::config::FileConfig;
use crate::error::CliError;

#[derive(Args)]
pub struct StatsArgs {
    /// Labeled dataset file
    #[arg(long)]
    pub data: PathBuf,
    /// Config file with `key = value` lines; flags override it
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Comma-separated neighborhood sizes [default: 4,8,16,32]
    #[arg(long)]
    pub ks: Option<String>,
    /// Compatibility kernel bandwidth λ [default: 0.001]
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Maximum correspondences per scene for the score matrix [default: 4000]
    #[arg(long)]
    pub max_set_size: Option<usize>,
    /// Also write the table to this file
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn run(args: StatsArgs) -> Result<(), CliError> {
    let file = FileConfig::load(args.config.as_deref())?;
    let ks = parse_ks(&file.resolve(args.ks, "ks", "4,8,16,32".to_string())?)?;
    let lambda = file.resolve(args.lambda, "lambda", 1e-3)?;
    let max_set_size = file.resolve(args.max_set_size, "max_set_size", 4000)?;
    let scenes = load_scenes(&args.data)?;

    let mut cs_stats = NeighborStats::new();
    let mut sp_stats = NeighborStats::new();
    for (idx, scene) in scenes.iter().enumerate() {
        let bucket = RatioBucket::from_ratio(scene.inlier_ratio());
        let matrix = match score_matrix_with_cap(&scene.correspondences, lambda, max_set_size) {
            Ok(m) => m,
            Err(e) => {
                eprintln!("scene {idx}: {e}");
                continue;
            }
        };
        for &k in &ks {
            let cs = match mine_cs_knn(&matrix, k, false) {
                Ok(g) => g,
                Err(e) => {
                    eprintln!("scene {idx} (k = {k}): {e}");
                    continue;
                }
            };
            let sp = match mine_spatial_knn(&scene.correspondences, k, false) {
                Ok(g) => g,
                Err(e) => {
                    eprintln!("scene {idx} (k = {k}): {e}");
                    continue;
                }
            };
            match (
                neighbor_inlier_ratio(&cs, &scene.labels_gt),
                neighbor_inlier_ratio(&sp, &scene.labels_gt),
            ) {
                (Ok(cs_ratio), Ok(sp_ratio)) => {
                    cs_stats.record(bucket, k, cs_ratio);
                    sp_stats.record(bucket, k, sp_ratio);
                }
                (Err(e), _) | (_, Err(e)) => eprintln!("scene {idx} (k = {k}): {e}"),
            }
        }
    }

    let mut table = String::new();
    table.push_str("neighbor inlier ratio of inliers (mean over scenes)\n");
    table.push_str(&format!(
        "{:<8} {:>4} {:>8} {:>10} {:>10}\n",
        "bucket", "k", "scenes", "cs-knn", "sp-knn"
    ));
    for bucket in RatioBucket::ALL {
        for &k in &ks {
            let count = cs_stats.scene_count(bucket, k);
            let fmt = |v: Option<f64>| match v {
                Some(x) => format!("{x:.4}"),
                None => "n/a".to_string(),
            };
            table.push_str(&format!(
                "{:<8} {:>4} {:>8} {:>10} {:>10}\n",
                bucket.label(),
                k,
                count,
                fmt(cs_stats.mean(bucket, k)),
                fmt(sp_stats.mean(bucket, k)),
            ));
        }
    }
    print!("{table}");
    if let Some(out) = &args.out {
        std::fs::write(out, table)
            .map_err(|e| CliError::runtime(format!("{}: {e}", out.display())))?;
    }
    Ok(())
}
