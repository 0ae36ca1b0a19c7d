//! Loss, training loop, inference, and gradient verification.

use rand::prelude::*;
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::compat::{mine_cs_knn, mine_spatial_knn, score_matrix_with_cap, NeighborGraph};
use crate::eval::prf;
use crate::geom::{Correspondence, LabelVector};
use crate::synth::ScenePair;

use super::params::{adam_step, AdamState, Gradients, ModelParams};
use super::{Architecture, Mode, Model, NetError};

/// Logits are clamped to ±this before the logistic, keeping the
/// cross-entropy finite.
pub const LOGIT_CLAMP: f64 = 30.0;

/// Which neighborhoods feed the grouping stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Mining {
    #[serde(rename = "compatibility")]
    Compatibility,
    #[serde(rename = "spatial")]
    Spatial,
}

impl std::fmt::Display for Mining {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Mining::Compatibility => write!(f, "compatibility"),
            Mining::Spatial => write!(f, "spatial"),
        }
    }
}

impl std::str::FromStr for Mining {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "compatibility" => Ok(Mining::Compatibility),
            "spatial" => Ok(Mining::Spatial),
            other => Err(format!(
                "unknown mining mode '{other}' (expected compatibility|spatial)"
            )),
        }
    }
}

/// Training hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    /// Scenes per optimization step.
    pub batch_size: usize,
    pub epochs: usize,
    /// Neighborhood size for the grouping stage.
    pub k: usize,
    /// Compatibility kernel bandwidth.
    pub lambda: f64,
    pub seed: u64,
    pub mining: Mining,
    pub arch: Architecture,
    /// Fraction of the dataset held out for the per-epoch validation log;
    /// when it rounds to zero scenes, validation runs on the training set.
    pub val_fraction: f64,
    /// Cap forwarded to the compatibility score matrix.
    pub max_set_size: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            batch_size: 16,
            epochs: 10,
            k: 8,
            lambda: 1e-3,
            seed: 0,
            mining: Mining::Compatibility,
            arch: Architecture::standard(),
            val_fraction: 0.1,
            max_set_size: crate::compat::DEFAULT_MAX_SET_SIZE,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), NetError> {
        if self.learning_rate <= 0.0 {
            return Err(NetError::Config("learning_rate must be > 0".into()));
        }
        if self.batch_size == 0 || self.epochs == 0 || self.k == 0 {
            return Err(NetError::Config(
                "batch_size, epochs, and k must be positive".into(),
            ));
        }
        if self.lambda <= 0.0 {
            return Err(NetError::Config("lambda must be > 0".into()));
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return Err(NetError::Config("val_fraction must be in [0, 1)".into()));
        }
        Ok(())
    }
}

/// One line of the training log.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_precision: f64,
    pub val_recall: f64,
    pub val_f_measure: f64,
}

pub struct TrainOutcome {
    pub model: Model,
    pub params: ModelParams,
    pub log: Vec<EpochStats>,
}

/// Mines the grouping graph for one scene (query at position 0, then the
/// top-(k−1) neighbors).
pub fn mine_graph(
    corrs: &[Correspondence],
    mining: Mining,
    k: usize,
    lambda: f64,
    max_set_size: usize,
) -> Result<NeighborGraph, NetError> {
    let graph = match mining {
        Mining::Compatibility => {
            let matrix = score_matrix_with_cap(corrs, lambda, max_set_size)?;
            mine_cs_knn(&matrix, k, true)?
        }
        Mining::Spatial => mine_spatial_knn(corrs, k, true)?,
    };
    Ok(graph)
}

fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Per-scene class weights: N/(2·N_pos) for positives, N/(2·N_neg) for
/// negatives, so the weights average to 1; unweighted when one class is
/// absent.
fn class_weights(labels: &LabelVector) -> (f64, f64) {
    let n = labels.len() as f64;
    let n_pos = labels.count_positives() as f64;
    let n_neg = n - n_pos;
    if n_pos > 0.0 && n_neg > 0.0 {
        (n / (2.0 * n_pos), n / (2.0 * n_neg))
    } else {
        (1.0, 1.0)
    }
}

/// Weighted binary cross-entropy of the logistic over clamped logits,
/// averaged over the scene.
pub fn loss(logits: &[f64], labels: &LabelVector) -> f64 {
    assert_eq!(logits.len(), labels.len(), "logits/labels length mismatch");
    let (w_pos, w_neg) = class_weights(labels);
    let n = logits.len() as f64;
    let mut total = 0.0;
    for (&g, &y) in logits.iter().zip(labels.as_slice()) {
        let g = g.clamp(-LOGIT_CLAMP, LOGIT_CLAMP);
        // H(y, σ(g)) = y·softplus(−g) + (1−y)·softplus(g).
        let h = if y { softplus(-g) } else { softplus(g) };
        total += if y { w_pos } else { w_neg } * h;
    }
    total / n
}

/// Loss plus its gradient with respect to the (unclamped) logits.
pub(crate) fn loss_and_dlogits(logits: &[f64], labels: &LabelVector) -> (f64, Vec<f64>) {
    let (w_pos, w_neg) = class_weights(labels);
    let n = logits.len() as f64;
    let mut total = 0.0;
    let mut dlogits = Vec::with_capacity(logits.len());
    for (&g_raw, &y) in logits.iter().zip(labels.as_slice()) {
        let g = g_raw.clamp(-LOGIT_CLAMP, LOGIT_CLAMP);
        let (h, w) = if y {
            (softplus(-g), w_pos)
        } else {
            (softplus(g), w_neg)
        };
        total += w * h;
        let inside = g_raw.abs() <= LOGIT_CLAMP;
        let target = if y { 1.0 } else { 0.0 };
        dlogits.push(if inside {
            w * (sigmoid(g) - target) / n
        } else {
            0.0
        });
    }
    (total / n, dlogits)
}

/// Inference-mode logits for one scene.
pub fn forward(
    model: &Model,
    params: &ModelParams,
    corrs: &[Correspondence],
    graph: &NeighborGraph,
) -> Result<Vec<f64>, NetError> {
    let input = Model::scene_input(corrs);
    model.forward_logits(params, &input, graph)
}

/// Single-scene training-mode forward + loss + exact analytic gradients.
/// Graph indices are constants: no gradient flows through neighbor mining.
pub fn backward(
    model: &Model,
    params: &ModelParams,
    corrs: &[Correspondence],
    graph: &NeighborGraph,
    labels: &LabelVector,
) -> Result<(f64, Gradients), NetError> {
    let input = Model::scene_input(corrs);
    let run = model.run_batch(
        params,
        std::slice::from_ref(&input),
        &[graph],
        Mode::Train,
        true,
    )?;
    let (loss_value, dlogits) = loss_and_dlogits(&run.logits[0], labels);
    let tape = run.tape.expect("tape requested");
    let grads = model.backward_batch(params, &tape, &[graph], &[dlogits])?;
    Ok((loss_value, grads))
}

/// Probabilities and hard labels for one scene: probability = σ(logit),
/// label 1 iff probability > 0.5.
pub fn infer(
    model: &Model,
    params: &ModelParams,
    corrs: &[Correspondence],
    graph: &NeighborGraph,
) -> Result<(Vec<f64>, LabelVector), NetError> {
    let logits = forward(model, params, corrs, graph)?;
    let probs: Vec<f64> = logits
        .iter()
        .map(|&g| sigmoid(g.clamp(-LOGIT_CLAMP, LOGIT_CLAMP)))
        .collect();
    let labels = LabelVector(probs.iter().map(|&p| p > 0.5).collect());
    Ok((probs, labels))
}

struct PreparedScene {
    input: super::FeatureMap,
    graph: NeighborGraph,
    labels: LabelVector,
}

fn prepare_scenes(
    scenes: &[ScenePair],
    config: &TrainConfig,
) -> Result<Vec<PreparedScene>, NetError> {
    let prepared: Vec<Result<PreparedScene, NetError>> = scenes
        .par_iter()
        .map(|scene| {
            let graph = mine_graph(
                &scene.correspondences,
                config.mining,
                config.k,
                config.lambda,
                config.max_set_size,
            )?;
            Ok(PreparedScene {
                input: Model::scene_input(&scene.correspondences),
                graph,
                labels: scene.labels_gt.clone(),
            })
        })
        .collect();
    prepared.into_iter().collect()
}

/// Trains on a labeled dataset. Deterministic given the seed: parameter
/// initialization, batch order, and gradient accumulation order are all
/// fixed by it.
pub fn train(scenes: &[ScenePair], config: &TrainConfig) -> Result<TrainOutcome, NetError> {
    config.validate()?;
    if scenes.is_empty() {
        return Err(NetError::EmptyDataset);
    }
    let model = Model::new(config.arch.clone())?;
    let mut params = model.init_params(config.seed);
    let mut adam = AdamState::new(&params);

    let n_val = ((scenes.len() as f64) * config.val_fraction).floor() as usize;
    let n_train = scenes.len() - n_val;
    let train_scenes = prepare_scenes(&scenes[..n_train], config)?;
    let val_scenes = if n_val > 0 {
        prepare_scenes(&scenes[n_train..], config)?
    } else {
        Vec::new()
    };

    let mut shuffle_rng = ChaCha20Rng::seed_from_u64(config.seed ^ 0x5EED_BA7C_4E55_0001);
    let mut log = Vec::with_capacity(config.epochs);

    for epoch in 1..=config.epochs {
        let mut order: Vec<usize> = (0..train_scenes.len()).collect();
        order.shuffle(&mut shuffle_rng);

        let mut epoch_loss = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(config.batch_size) {
            let inputs: Vec<super::FeatureMap> = chunk
                .iter()
                .map(|&i| train_scenes[i].input.clone())
                .collect();
            let graphs: Vec<&NeighborGraph> =
                chunk.iter().map(|&i| &train_scenes[i].graph).collect();
            let run = model.run_batch(&params, &inputs, &graphs, Mode::Train, true)?;

            let mut batch_loss = 0.0;
            let mut dlogits = Vec::with_capacity(chunk.len());
            for (scene_logits, &i) in run.logits.iter().zip(chunk) {
                let (l, mut d) = loss_and_dlogits(scene_logits, &train_scenes[i].labels);
                batch_loss += l;
                // The batch loss is the mean of scene losses.
                for v in &mut d {
                    *v /= chunk.len() as f64;
                }
                dlogits.push(d);
            }
            batch_loss /= chunk.len() as f64;

            let tape = run.tape.expect("tape requested");
            let grads = model.backward_batch(&params, &tape, &graphs, &dlogits)?;
            adam_step(&mut params, &grads, &mut adam, config.learning_rate);
            for (idx, values) in run.buffer_updates {
                params.buffer_mut(idx).copy_from_slice(&values);
            }

            epoch_loss += batch_loss;
            batches += 1;
        }

        let eval_set = if val_scenes.is_empty() {
            &train_scenes
        } else {
            &val_scenes
        };
        let (p, r, f) = evaluate_prepared(&model, &params, eval_set)?;
        log.push(EpochStats {
            epoch,
            train_loss: epoch_loss / batches.max(1) as f64,
            val_precision: p,
            val_recall: r,
            val_f_measure: f,
        });
    }

    Ok(TrainOutcome { model, params, log })
}

fn evaluate_prepared(
    model: &Model,
    params: &ModelParams,
    scenes: &[PreparedScene],
) -> Result<(f64, f64, f64), NetError> {
    let metrics: Vec<Result<(f64, f64, f64), NetError>> = scenes
        .par_iter()
        .map(|scene| {
            let logits = model.forward_logits(params, &scene.input, &scene.graph)?;
            let pred = LabelVector(logits.iter().map(|&g| sigmoid(g) > 0.5).collect());
            let m = prf(&pred, &scene.labels).map_err(|e| NetError::Config(e.to_string()))?;
            Ok((m.precision, m.recall, m.f_measure))
        })
        .collect();
    let mut sums = (0.0, 0.0, 0.0);
    let mut count = 0usize;
    for m in metrics {
        let (p, r, f) = m?;
        sums.0 += p;
        sums.1 += r;
        sums.2 += f;
        count += 1;
    }
    let n = count.max(1) as f64;
    Ok((sums.0 / n, sums.1 / n, sums.2 / n))
}

/// Outcome of the finite-difference check for one parameter block.
#[derive(Debug, Clone)]
pub struct BlockCheck {
    pub layer: usize,
    pub name: String,
    pub max_rel_err: f64,
}

/// Compares analytic gradients against central finite differences of the
/// loss for every coordinate of every parameter block. The numeric side uses
/// only forward passes, so it is independent of the backward implementation.
pub fn finite_difference_check(
    model: &Model,
    params: &ModelParams,
    corrs: &[Correspondence],
    graph: &NeighborGraph,
    labels: &LabelVector,
    step: f64,
) -> Result<Vec<BlockCheck>, NetError> {
    let (_, analytic) = backward(model, params, corrs, graph, labels)?;
    let input = Model::scene_input(corrs);

    let loss_with = |p: &ModelParams| -> Result<f64, NetError> {
        let run = p_run(model, p, &input, graph)?;
        Ok(loss(&run, labels))
    };

    let mut working = params.clone();
    let mut results = Vec::with_capacity(params.block_count());
    for b in 0..params.block_count() {
        let mut max_rel = 0.0f64;
        for i in 0..params.block(b).len() {
            let original = params.block(b)[i];
            working.block_mut(b)[i] = original + step;
            let plus = loss_with(&working)?;
            working.block_mut(b)[i] = original - step;
            let minus = loss_with(&working)?;
            working.block_mut(b)[i] = original;
            let numeric = (plus - minus) / (2.0 * step);
            let a = analytic.blocks[b][i];
            let rel = (a - numeric).abs() / (a.abs() + numeric.abs()).max(1e-6);
            max_rel = max_rel.max(rel);
        }
        let spec = params.spec(b);
        results.push(BlockCheck {
            layer: spec.layer,
            name: spec.name.clone(),
            max_rel_err: max_rel,
        });
    }
    Ok(results)
}

fn p_run(
    model: &Model,
    params: &ModelParams,
    input: &super::FeatureMap,
    graph: &NeighborGraph,
) -> Result<Vec<f64>, NetError> {
    let run = model.run_batch(
        params,
        std::slice::from_ref(input),
        &[graph],
        Mode::Train,
        false,
    )?;
    Ok(run.logits.into_iter().next().expect("one scene"))
}
