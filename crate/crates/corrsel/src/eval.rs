//! Selection metrics, essential-matrix deviation statistics, and experiment
//! reports comparing selectors over a labeled dataset.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::baseline::{eight_point, ransac, RansacConfig};
use crate::compat::{mine_cs_knn, score_matrix_with_cap, score_sum_classifier};
use crate::geom::{EssentialMatrix, LabelVector};
use crate::net::{infer, mine_graph, Mining, Model, ModelParams};
use crate::synth::ScenePair;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("label vectors have different lengths: {pred} vs {gt}")]
    LengthMismatch { pred: usize, gt: usize },
    #[error("empty input")]
    EmptyInput,
    #[error("selector failed: {0}")]
    Selector(String),
}

/// Precision/recall/F-measure with the underlying confusion counts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SelectionMetrics {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub tn: usize,
    pub precision: f64,
    pub recall: f64,
    pub f_measure: f64,
}

/// Precision = TP/(TP+FP) (0 when nothing is predicted positive),
/// recall = TP/(TP+FN) (0 when nothing is positive), F their harmonic mean.
pub fn prf(pred: &LabelVector, gt: &LabelVector) -> Result<SelectionMetrics, EvalError> {
    if pred.len() != gt.len() {
        return Err(EvalError::LengthMismatch {
            pred: pred.len(),
            gt: gt.len(),
        });
    }
    let (mut tp, mut fp, mut fn_, mut tn) = (0usize, 0usize, 0usize, 0usize);
    for (&p, &g) in pred.as_slice().iter().zip(gt.as_slice()) {
        match (p, g) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => tn += 1,
        }
    }
    let precision = if tp + fp > 0 {
        tp as f64 / (tp + fp) as f64
    } else {
        0.0
    };
    let recall = if tp + fn_ > 0 {
        tp as f64 / (tp + fn_) as f64
    } else {
        0.0
    };
    let f_measure = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    Ok(SelectionMetrics {
        tp,
        fp,
        fn_,
        tn,
        precision,
        recall,
        f_measure,
    })
}

/// Sign-ambiguity-resolved Frobenius deviation between two unit-norm
/// essential matrices: min(‖A − B‖_F, ‖A + B‖_F).
pub fn essential_deviation(e_est: &EssentialMatrix, e_gt: &EssentialMatrix) -> f64 {
    let a = e_est.as_mat3();
    let b = e_gt.as_mat3();
    let mut minus = 0.0;
    let mut plus = 0.0;
    for (x, y) in a.0.iter().zip(b.0.iter()) {
        minus += (x - y) * (x - y);
        plus += (x + y) * (x + y);
    }
    minus.sqrt().min(plus.sqrt())
}

/// MSE, MAE, median, max, min of a list of deviations. The median of an
/// even-length list is the lower-middle element.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EDeviationStats {
    pub mse: f64,
    pub mae: f64,
    pub median: f64,
    pub max: f64,
    pub min: f64,
}

pub fn aggregate_deviation(values: &[f64]) -> Result<EDeviationStats, EvalError> {
    if values.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    let n = values.len() as f64;
    let mse = values.iter().map(|v| v * v).sum::<f64>() / n;
    let mae = values.iter().map(|v| v.abs()).sum::<f64>() / n;
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let median = sorted[(sorted.len() - 1) / 2];
    Ok(EDeviationStats {
        mse,
        mae,
        median,
        max: *sorted.last().unwrap(),
        min: sorted[0],
    })
}

/// A correspondence selector to evaluate.
pub enum Selector<'a> {
    /// The trained classifier with compatibility-mined neighborhoods.
    NmNet {
        model: &'a Model,
        params: &'a ModelParams,
        k: usize,
        lambda: f64,
    },
    /// The spatial-kNN ablation of the classifier.
    NmNetSp {
        model: &'a Model,
        params: &'a ModelParams,
        k: usize,
    },
    /// Hand-crafted score-sum thresholding over the mined graph.
    ScoreSum {
        k: usize,
        lambda: f64,
        threshold: f64,
    },
    /// RANSAC with eight-point essential estimation.
    Ransac(RansacConfig),
}

impl Selector<'_> {
    pub fn name(&self) -> &'static str {
        match self {
            Selector::NmNet { .. } => "nmnet",
            Selector::NmNetSp { .. } => "nmnet_sp",
            Selector::ScoreSum { .. } => "score_sum",
            Selector::Ransac(_) => "ransac",
        }
    }

    fn select(&self, scene: &ScenePair, max_set_size: usize) -> Result<LabelVector, EvalError> {
        match self {
            Selector::NmNet {
                model,
                params,
                k,
                lambda,
            } => {
                let graph = mine_graph(
                    &scene.correspondences,
                    Mining::Compatibility,
                    *k,
                    *lambda,
                    max_set_size,
                )
                .map_err(|e| EvalError::Selector(e.to_string()))?;
                let (_, labels) = infer(model, params, &scene.correspondences, &graph)
                    .map_err(|e| EvalError::Selector(e.to_string()))?;
                Ok(labels)
            }
            Selector::NmNetSp { model, params, k } => {
                let graph = mine_graph(
                    &scene.correspondences,
                    Mining::Spatial,
                    *k,
                    1.0,
                    max_set_size,
                )
                .map_err(|e| EvalError::Selector(e.to_string()))?;
                let (_, labels) = infer(model, params, &scene.correspondences, &graph)
                    .map_err(|e| EvalError::Selector(e.to_string()))?;
                Ok(labels)
            }
            Selector::ScoreSum {
                k,
                lambda,
                threshold,
            } => {
                let matrix =
                    score_matrix_with_cap(&scene.correspondences, *lambda, max_set_size)
                        .map_err(|e| EvalError::Selector(e.to_string()))?;
                let graph = mine_cs_knn(&matrix, *k, false)
                    .map_err(|e| EvalError::Selector(e.to_string()))?;
                Ok(score_sum_classifier(&graph, &matrix, *threshold))
            }
            Selector::Ransac(config) => {
                let (_, labels) = ransac(&scene.correspondences, config)
                    .map_err(|e| EvalError::Selector(e.to_string()))?;
                Ok(labels)
            }
        }
    }
}

/// One evaluated scene for one selector.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SceneRow {
    pub scene: usize,
    pub selector: String,
    pub metrics: SelectionMetrics,
    /// Essential deviation of the eight-point fit on the selected inliers;
    /// `None` when estimation was flagged.
    pub deviation: Option<f64>,
    /// Set when the scene could not produce an estimate (fewer than 8
    /// selected correspondences or a degenerate fit).
    pub flag: Option<String>,
}

/// Aggregate over all scenes for one selector.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AggregateRow {
    pub selector: String,
    pub scenes: usize,
    pub no_estimate: usize,
    pub mean_precision: f64,
    pub mean_recall: f64,
    pub mean_f_measure: f64,
    /// Deviation statistics over the scenes with an estimate.
    pub deviation: Option<EDeviationStats>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Report {
    pub rows: Vec<SceneRow>,
    pub aggregates: Vec<AggregateRow>,
}

/// Runs every selector over the dataset: per scene, selection metrics
/// against ground truth plus the deviation of the essential matrix estimated
/// (eight-point) from the selected correspondences. Scenes where estimation
/// fails are flagged and excluded from deviation aggregates but still
/// counted.
pub fn evaluate_pipeline(
    scenes: &[ScenePair],
    selectors: &[Selector<'_>],
    max_set_size: usize,
) -> Result<Report, EvalError> {
    if scenes.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    let mut rows = Vec::with_capacity(scenes.len() * selectors.len());
    let mut aggregates = Vec::with_capacity(selectors.len());
    for selector in selectors {
        let mut deviations = Vec::new();
        let mut no_estimate = 0usize;
        let mut sums = (0.0, 0.0, 0.0);
        for (idx, scene) in scenes.iter().enumerate() {
            // Selector failures are per-scene events, not fatal: the scene
            // counts with an empty selection and a flag.
            let (pred, selector_flag) = match selector.select(scene, max_set_size) {
                Ok(pred) => (pred, None),
                Err(e) => (
                    LabelVector(vec![false; scene.len()]),
                    Some(format!("selector_failed: {e}")),
                ),
            };
            let metrics = prf(&pred, &scene.labels_gt)?;
            let selected: Vec<_> = scene
                .correspondences
                .iter()
                .zip(pred.as_slice())
                .filter_map(|(c, &keep)| keep.then_some(*c))
                .collect();
            let (deviation, flag) = if let Some(flag) = selector_flag {
                (None, Some(flag))
            } else if selected.len() < 8 {
                (None, Some("no_estimate".to_string()))
            } else {
                match eight_point(&selected) {
                    Ok(e_est) => (Some(essential_deviation(&e_est, &scene.e_gt)), None),
                    Err(_) => (None, Some("no_estimate".to_string())),
                }
            };
            if let Some(d) = deviation {
                deviations.push(d);
            } else {
                no_estimate += 1;
            }
            sums.0 += metrics.precision;
            sums.1 += metrics.recall;
            sums.2 += metrics.f_measure;
            rows.push(SceneRow {
                scene: idx,
                selector: selector.name().to_string(),
                metrics,
                deviation,
                flag,
            });
        }
        let n = scenes.len() as f64;
        aggregates.push(AggregateRow {
            selector: selector.name().to_string(),
            scenes: scenes.len(),
            no_estimate,
            mean_precision: sums.0 / n,
            mean_recall: sums.1 / n,
            mean_f_measure: sums.2 / n,
            deviation: aggregate_deviation(&deviations).ok(),
        });
    }
    Ok(Report { rows, aggregates })
}

impl Report {
    /// Plain-text aligned table of the aggregate block.
    pub fn table(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "{:<10} {:>7} {:>7} {:>9} {:>9} {:>9} {:>11} {:>11} {:>11} {:>11} {:>11}\n",
            "selector",
            "scenes",
            "noest",
            "precision",
            "recall",
            "f-measure",
            "dev-mse",
            "dev-mae",
            "dev-median",
            "dev-max",
            "dev-min"
        ));
        for agg in &self.aggregates {
            let dev = agg.deviation.as_ref();
            let fmt = |v: Option<f64>| match v {
                Some(x) => format!("{x:.6}"),
                None => "n/a".to_string(),
            };
            out.push_str(&format!(
                "{:<10} {:>7} {:>7} {:>9.4} {:>9.4} {:>9.4} {:>11} {:>11} {:>11} {:>11} {:>11}\n",
                agg.selector,
                agg.scenes,
                agg.no_estimate,
                agg.mean_precision,
                agg.mean_recall,
                agg.mean_f_measure,
                fmt(dev.map(|d| d.mse)),
                fmt(dev.map(|d| d.mae)),
                fmt(dev.map(|d| d.median)),
                fmt(dev.map(|d| d.max)),
                fmt(dev.map(|d| d.min)),
            ));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn labels(bits: &[u8]) -> LabelVector {
        LabelVector::from_u8(bits)
    }

    #[test]
    fn prf_perfect_prediction() {
        let gt = labels(&[1, 0, 1, 1, 0]);
        let m = prf(&gt, &gt).unwrap();
        assert_eq!((m.precision, m.recall, m.f_measure), (1.0, 1.0, 1.0));
        assert_eq!((m.tp, m.fp, m.fn_, m.tn), (3, 0, 0, 2));
    }

    #[test]
    fn prf_all_negative_prediction() {
        let pred = labels(&[0, 0, 0]);
        let gt = labels(&[1, 0, 1]);
        let m = prf(&pred, &gt).unwrap();
        assert_eq!((m.precision, m.recall, m.f_measure), (0.0, 0.0, 0.0));
    }

    #[test]
    fn prf_harmonic_mean_identity() {
        // P = 0.5 (1 of 2 predicted correct), R = 0.5 (1 of 2 gt found).
        let pred = labels(&[1, 1, 0, 0]);
        let gt = labels(&[1, 0, 1, 0]);
        let m = prf(&pred, &gt).unwrap();
        assert_abs_diff_eq!(m.precision, 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(m.recall, 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(m.f_measure, 0.5, epsilon = 1e-15);
    }

    #[test]
    fn prf_invariant_under_joint_permutation() {
        let pred = labels(&[1, 0, 1, 1, 0, 0, 1]);
        let gt = labels(&[0, 0, 1, 1, 1, 0, 1]);
        let m1 = prf(&pred, &gt).unwrap();
        let perm = [3usize, 6, 0, 5, 2, 1, 4];
        let pred_p = LabelVector(perm.iter().map(|&i| pred.as_slice()[i]).collect());
        let gt_p = LabelVector(perm.iter().map(|&i| gt.as_slice()[i]).collect());
        let m2 = prf(&pred_p, &gt_p).unwrap();
        assert_eq!(m1, m2);
    }

    fn sample_essential(seed: f64) -> EssentialMatrix {
        let (s, c) = (seed.sin(), seed.cos());
        let rot = crate::geom::Mat3([c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c]);
        EssentialMatrix::from_pose(&rot, &[1.0, seed * 0.1, 0.3]).unwrap()
    }

    #[test]
    fn essential_deviation_zero_for_same_and_negated() {
        let e = sample_essential(0.4);
        assert_eq!(essential_deviation(&e, &e), 0.0);
        let neg = EssentialMatrix::from_raw_validated(e.as_mat3().scale(-1.0)).unwrap();
        assert_eq!(essential_deviation(&neg, &e), 0.0);
    }

    #[test]
    fn essential_deviation_matches_two_branch_oracle() {
        let a = sample_essential(0.4);
        let b = sample_essential(1.3);
        let d = essential_deviation(&a, &b);
        let frob = |s: f64| {
            a.as_mat3()
                .0
                .iter()
                .zip(b.as_mat3().0.iter())
                .map(|(x, y)| (x + s * y) * (x + s * y))
                .sum::<f64>()
                .sqrt()
        };
        assert_abs_diff_eq!(d, frob(-1.0).min(frob(1.0)), epsilon = 1e-15);
        assert_abs_diff_eq!(
            d,
            essential_deviation(&b, &a),
            epsilon = 1e-15
        );
        assert!(d >= 0.0 && d <= 2.0);
    }

    #[test]
    fn aggregate_deviation_cases() {
        let s = aggregate_deviation(&[0.0, 0.0, 0.0]).unwrap();
        assert_eq!((s.mse, s.mae, s.median, s.max, s.min), (0.0, 0.0, 0.0, 0.0, 0.0));

        let s = aggregate_deviation(&[1.0, 2.0, 3.0]).unwrap();
        assert_abs_diff_eq!(s.mse, 14.0 / 3.0, epsilon = 1e-15);
        assert_abs_diff_eq!(s.mae, 2.0, epsilon = 1e-15);
        assert_eq!((s.median, s.max, s.min), (2.0, 3.0, 1.0));

        // Even length: lower-middle median.
        let s = aggregate_deviation(&[4.0, 1.0, 3.0, 2.0]).unwrap();
        assert_eq!(s.median, 2.0);

        assert!(matches!(
            aggregate_deviation(&[]).unwrap_err(),
            EvalError::EmptyInput
        ));
        let vals = [0.3, 0.1, 0.7, 0.2];
        let s = aggregate_deviation(&vals).unwrap();
        assert!(s.min <= s.median && s.median <= s.max);
    }
}
