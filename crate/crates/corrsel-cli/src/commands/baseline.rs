use std::path::PathBuf;

use clap::Args;
use serde::Serialize;

use corrsel::baseline::{ransac, BaselineError, RansacConfig};
use corrsel::eval::prf;

use crate::commands::{load_scenes, write_lines};
use crate::config::FileConfig;
use crate::error::CliError;

#[derive(Args)]
pub struct BaselineArgs {
    /// Labeled dataset file
    #[arg(long)]
    pub data: PathBuf,
    /// Output labels file (one scene per line)
    #[arg(long)]
    pub out: PathBuf,
    /// Config file with `key = value` lines; flags override it
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// RANSAC iterations [default: 2000]
    #[arg(long)]
    pub iterations: Option<usize>,
    /// Inlier threshold on the symmetric epipolar distance [default: 0.0001]
    #[arg(long)]
    pub threshold: Option<f64>,
    /// RANSAC sampling seed [default: 0]
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Serialize)]
struct BaselineRecord {
    scene: usize,
    labels: Vec<u8>,
    /// Row-major estimated essential matrix; absent when no consensus.
    e_est: Option<[f64; 9]>,
    flag: Option<String>,
}

pub fn run(args: BaselineArgs) -> Result<(), CliError> {
    let file = FileConfig::load(args.config.as_deref())?;
    let config = RansacConfig {
        iterations: file.resolve(args.iterations, "iterations", 2000)?,
        inlier_threshold: file.resolve(args.threshold, "threshold", 1e-4)?,
        seed: file.resolve(args.seed, "seed", 0)?,
    };
    config.validate().map_err(CliError::from)?;
    let scenes = load_scenes(&args.data)?;

    let mut lines = Vec::with_capacity(scenes.len());
    let mut f_sum = 0.0;
    let mut failures = 0usize;
    for (idx, scene) in scenes.iter().enumerate() {
        let record = match ransac(&scene.correspondences, &config) {
            Ok((e_est, labels)) => {
                f_sum += prf(&labels, &scene.labels_gt)?.f_measure;
                BaselineRecord {
                    scene: idx,
                    labels: labels.to_u8(),
                    e_est: Some(e_est.as_mat3().0),
                    flag: None,
                }
            }
            Err(BaselineError::NoConsensus) => {
                failures += 1;
                BaselineRecord {
                    scene: idx,
                    labels: vec![0; scene.len()],
                    e_est: None,
                    flag: Some("no_consensus".to_string()),
                }
            }
            Err(e) => return Err(e.into()),
        };
        lines.push(
            serde_json::to_string(&record)
                .map_err(|e| CliError::runtime(format!("serialize: {e}")))?,
        );
    }
    write_lines(&args.out, &lines)?;
    println!(
        "wrote {} scenes to {} (mean F {:.4}, {} without consensus)",
        lines.len(),
        args.out.display(),
        f_sum / scenes.len() as f64,
        failures
    );
    Ok(())
}
