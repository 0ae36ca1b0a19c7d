pub mod baseline;
pub mod eval;
pub mod infer;
pub mod mine;
pub mod stats;
pub mod synth;
pub mod train;

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use corrsel::synth::{read_dataset, ScenePair};

use crate::error::CliError;

#[derive(Parser)]
#[command(
    name = "corrsel",
    about = "Correspondence selection experiments: synthetic two-view data, \
             compatibility-mined neighbor graphs, a learned classifier, and baselines",
    version
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand)]
pub enum Command {
    /// Generate a synthetic labeled dataset
    Synth(synth::SynthArgs),
    /// Neighbor-consistency statistics per inlier-ratio bucket
    Stats(stats::StatsArgs),
    /// Mine neighbor graphs and write them to a file
    Mine(mine::MineArgs),
    /// Train the classifier on a labeled dataset
    Train(train::TrainArgs),
    /// Classify correspondences with a trained checkpoint
    Infer(infer::InferArgs),
    /// Run the RANSAC baseline over a dataset
    Baseline(baseline::BaselineArgs),
    /// Compare selectors on a labeled dataset and write a report
    Eval(eval::EvalArgs),
}

pub fn load_scenes(path: &Path) -> Result<Vec<ScenePair>, CliError> {
    let scenes = read_dataset(path)
        .map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
    if scenes.is_empty() {
        return Err(CliError::data(format!(
            "{}: dataset contains no scenes",
            path.display()
        )));
    }
    Ok(scenes)
}

pub fn write_lines(path: &PathBuf, lines: &[String]) -> Result<(), CliError> {
    use std::io::Write;
    let file = std::fs::File::create(path)
        .map_err(|e| CliError::runtime(format!("{}: {e}", path.display())))?;
    let mut w = std::io::BufWriter::new(file);
    for line in lines {
        w.write_all(line.as_bytes())?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn parse_ks(raw: &str) -> Result<Vec<usize>, CliError> {
    let ks: Result<Vec<usize>, _> = raw.split(',').map(|s| s.trim().parse::<usize>()).collect();
    let ks = ks.map_err(|e| CliError::usage(format!("--ks: {e}")))?;
    if ks.is_empty() || ks.iter().any(|&k| k == 0) {
        return Err(CliError::usage("--ks must list positive integers"));
    }
    Ok(ks)
}
