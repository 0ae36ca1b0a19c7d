use std::path::PathBuf;

use clap::Args;

use corrsel::baseline::RansacConfig;
use corrsel::eval::{evaluate_pipeline, Selector};
use corrsel::net::{load_checkpoint, Checkpoint, Mining};

use crate::commands::{load_scenes, write_lines};
use crate::config::FileConfig;
use crate::error::CliError;

#[derive(Args)]
pub struct EvalArgs {
    /// Labeled dataset file
    #[arg(long)]
    pub data: PathBuf,
    /// Comma-separated selectors: nmnet, nmnet_sp, score_sum, ransac
    /// [default: ransac]
    #[arg(long)]
    pub selectors: Option<String>,
    /// Checkpoint for the nmnet selector (compatibility mining)
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Checkpoint for the nmnet_sp selector (spatial mining)
    #[arg(long)]
    pub checkpoint_sp: Option<PathBuf>,
    /// Config file with `key = value` lines; flags override it
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// score_sum decision threshold [default: 7]
    #[arg(long)]
    pub score_threshold: Option<f64>,
    /// Neighborhood size for score_sum [default: 8]
    #[arg(long)]
    pub k: Option<usize>,
    /// Compatibility kernel bandwidth λ for score_sum [default: 0.001]
    #[arg(long)]
    pub lambda: Option<f64>,
    /// RANSAC iterations [default: 2000]
    #[arg(long)]
    pub iterations: Option<usize>,
    /// RANSAC inlier threshold [default: 0.0001]
    #[arg(long)]
    pub threshold: Option<f64>,
    /// RANSAC sampling seed [default: 0]
    #[arg(long)]
    pub seed: Option<u64>,
    /// Maximum correspondences per scene for the score matrix [default: 4000]
    #[arg(long)]
    pub max_set_size: Option<usize>,
    /// Write the per-scene rows and aggregates to this file
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn load_ckpt(path: &Option<PathBuf>, selector: &str, mining: Mining) -> Result<Checkpoint, CliError> {
    let path = path.as_ref().ok_or_else(|| {
        CliError::usage(format!(
            "selector '{selector}' needs --{}",
            if mining == Mining::Compatibility {
                "checkpoint"
            } else {
                "checkpoint-sp"
            }
        ))
    })?;
    let ckpt = load_checkpoint(path)
        .map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
    if ckpt.mining != mining {
        return Err(CliError::data(format!(
            "selector '{selector}' expects a {mining}-mined checkpoint, {} was trained with {}",
            path.display(),
            ckpt.mining
        )));
    }
    Ok(ckpt)
}

pub fn run(args: EvalArgs) -> Result<(), CliError> {
    let file = FileConfig::load(args.config.as_deref())?;
    let selector_list = file.resolve(args.selectors, "selectors", "ransac".to_string())?;
    let score_threshold = file.resolve(args.score_threshold, "score_threshold", 7.0)?;
    let k = file.resolve(args.k, "k", 8)?;
    let lambda = file.resolve(args.lambda, "lambda", 1e-3)?;
    let max_set_size = file.resolve(args.max_set_size, "max_set_size", 4000)?;
    let ransac_config = RansacConfig {
        iterations: file.resolve(args.iterations, "iterations", 2000)?,
        inlier_threshold: file.resolve(args.threshold, "threshold", 1e-4)?,
        seed: file.resolve(args.seed, "seed", 0)?,
    };
    let scenes = load_scenes(&args.data)?;

    let names: Vec<String> = selector_list
        .split(',')
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty())
        .collect();
    if names.is_empty() {
        return Err(CliError::usage("--selectors lists no selectors"));
    }

    let mut nmnet_ckpt = None;
    let mut nmnet_sp_ckpt = None;
    for name in &names {
        match name.as_str() {
            "nmnet" if nmnet_ckpt.is_none() => {
                nmnet_ckpt = Some(load_ckpt(&args.checkpoint, name, Mining::Compatibility)?);
            }
            "nmnet_sp" if nmnet_sp_ckpt.is_none() => {
                nmnet_sp_ckpt = Some(load_ckpt(&args.checkpoint_sp, name, Mining::Spatial)?);
            }
            "nmnet" | "nmnet_sp" | "score_sum" | "ransac" => {}
            other => {
                return Err(CliError::usage(format!(
                    "unknown selector '{other}' (expected nmnet, nmnet_sp, score_sum, ransac)"
                )))
            }
        }
    }

    let mut selectors = Vec::new();
    for name in &names {
        match name.as_str() {
            "nmnet" => {
                let ckpt = nmnet_ckpt.as_ref().expect("loaded above");
                selectors.push(Selector::NmNet {
                    model: &ckpt.model,
                    params: &ckpt.params,
                    k: ckpt.k,
                    lambda: ckpt.lambda,
                });
            }
            "nmnet_sp" => {
                let ckpt = nmnet_sp_ckpt.as_ref().expect("loaded above");
                selectors.push(Selector::NmNetSp {
                    model: &ckpt.model,
                    params: &ckpt.params,
                    k: ckpt.k,
                });
            }
            "score_sum" => selectors.push(Selector::ScoreSum {
                k,
                lambda,
                threshold: score_threshold,
            }),
            "ransac" => selectors.push(Selector::Ransac(ransac_config.clone())),
            _ => unreachable!("validated above"),
        }
    }

    let report = evaluate_pipeline(&scenes, &selectors, max_set_size)?;
    print!("{}", report.table());

    if let Some(out) = &args.out {
        let mut lines = Vec::with_capacity(report.rows.len() + report.aggregates.len());
        for row in &report.rows {
            let mut value = serde_json::to_value(row)
                .map_err(|e| CliError::runtime(format!("serialize: {e}")))?;
            value["type"] = "scene".into();
            lines.push(value.to_string());
        }
        for agg in &report.aggregates {
            let mut value = serde_json::to_value(agg)
                .map_err(|e| CliError::runtime(format!("serialize: {e}")))?;
            value["type"] = "aggregate".into();
            lines.push(value.to_string());
        }
        write_lines(out, &lines)?;
        println!("wrote report to {}", out.display());
    }
    Ok(())
}
