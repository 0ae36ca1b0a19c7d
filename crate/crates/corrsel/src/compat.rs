//! Pairwise compatibility scoring and neighbor mining.
//!
//! Two correspondences are compatible when their local transforms predict
//! each other's keypoints well. The score is a Gaussian kernel over the sum
//! of mutual reprojection errors, so it lives in (0, 1] with 1 meaning
//! identical local transforms. Per-correspondence neighborhoods are mined
//! either by this score (compatibility-specific kNN) or by plain Euclidean
//! distance in the concatenated 4D point space (spatial kNN).

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::{local_transform, project, Correspondence, LabelVector};

/// Default kernel bandwidth λ.
pub const DEFAULT_LAMBDA: f64 = 1e-3;

/// Default cap on the correspondence-set size for the O(N²) score matrix.
pub const DEFAULT_MAX_SET_SIZE: usize = 4000;

/// Surrogate score for pairs whose reprojection errors are undefined.
pub const DEGENERATE_SCORE: f64 = 1e-300;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CompatError {
    #[error("need at least 2 correspondences, got {0}")]
    SetTooSmall(usize),
    #[error("set size {n} exceeds the configured cap {cap}")]
    SetTooLarge { n: usize, cap: usize },
    #[error("k = {k} exceeds the {available} available neighbors")]
    InsufficientCorrespondences { k: usize, available: usize },
    #[error("invalid lambda {0} (must be > 0)")]
    InvalidLambda(f64),
    #[error("no inliers in the labeled set")]
    EmptyBucket,
    #[error("graph covers {graph} nodes but labels cover {labels}")]
    LengthMismatch { graph: usize, labels: usize },
    #[error("invalid neighbor graph: {0}")]
    InvalidGraph(String),
}

/// Compatibility score s(c_i, c_j) = exp(−λ (e_j(c_i) + e_i(c_j))).
///
/// Symmetric in its arguments and equal to 1 exactly when both reprojection
/// errors vanish. Pairs with undefined reprojection errors score
/// [`DEGENERATE_SCORE`]; [`score_matrix`] additionally flags them.
pub fn pair_score(c_i: &Correspondence, c_j: &Correspondence, lambda: f64) -> f64 {
    match error_sum(c_i, c_j) {
        Some(sum) => {
            // exp underflows to 0 for enormous error sums; the score range
            // contract is (0, 1], so clamp to the smallest surrogate.
            (-lambda * sum).exp().max(DEGENERATE_SCORE)
        }
        None => DEGENERATE_SCORE,
    }
}

/// e_j(c_i) + e_i(c_j), computed with the local transforms taken once.
fn error_sum(c_i: &Correspondence, c_j: &Correspondence) -> Option<f64> {
    let h_i = local_transform(c_i).ok()?;
    let h_j = local_transform(c_j).ok()?;
    let pi_own = project(&h_i, &c_i.kp).ok()?;
    let pi_other = project(&h_j, &c_i.kp).ok()?;
    let pj_own = project(&h_j, &c_j.kp).ok()?;
    let pj_other = project(&h_i, &c_j.kp).ok()?;
    Some(pi_other.distance(&pi_own) + pj_other.distance(&pj_own))
}

/// N×N symmetric compatibility scores over a correspondence set.
///
/// Alongside each score the raw reprojection-error sum is kept: it is the
/// λ-free ranking key used by the miners, which makes neighbor rankings
/// independent of λ even when distinct sums round to equal scores.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScoreMatrix {
    n: usize,
    lambda: f64,
    scores: Vec<f64>,
    error_sums: Vec<f64>,
    /// Lexicographic tie-breaking key per node: (x, y, x', y').
    keys: Vec<[f64; 4]>,
    /// Pairs whose errors were undefined and scored the surrogate minimum.
    flagged: Vec<(usize, usize)>,
}

impl ScoreMatrix {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.scores[i * self.n + j]
    }

    pub fn error_sum(&self, i: usize, j: usize) -> f64 {
        self.error_sums[i * self.n + j]
    }

    pub fn flagged(&self) -> &[(usize, usize)] {
        &self.flagged
    }

    /// Builds a matrix from raw scores (row-major, n×n). Intended for tests
    /// and tools that start from a hand-built matrix; error sums are derived
    /// as −ln(s)/λ and tie-breaking keys fall back to the node index.
    pub fn from_scores(scores: Vec<f64>, n: usize, lambda: f64) -> Result<Self, CompatError> {
        if lambda <= 0.0 {
            return Err(CompatError::InvalidLambda(lambda));
        }
        assert_eq!(scores.len(), n * n, "scores must be n*n");
        let error_sums = scores.iter().map(|s| -s.ln() / lambda).collect();
        let keys = (0..n).map(|i| [i as f64, 0.0, 0.0, 0.0]).collect();
        Ok(Self {
            n,
            lambda,
            scores,
            error_sums,
            keys,
            flagged: Vec::new(),
        })
    }
}

/// Computes the full score matrix with the default set-size cap.
pub fn score_matrix(set: &[Correspondence], lambda: f64) -> Result<ScoreMatrix, CompatError> {
    score_matrix_with_cap(set, lambda, DEFAULT_MAX_SET_SIZE)
}

/// Computes the full score matrix; `cap` bounds N to keep the O(N²) matrix
/// within desk-scale memory.
pub fn score_matrix_with_cap(
    set: &[Correspondence],
    lambda: f64,
    cap: usize,
) -> Result<ScoreMatrix, CompatError> {
    let n = set.len();
    if n < 2 {
        return Err(CompatError::SetTooSmall(n));
    }
    if n > cap {
        return Err(CompatError::SetTooLarge { n, cap });
    }
    if lambda <= 0.0 {
        return Err(CompatError::InvalidLambda(lambda));
    }

    // Precompute each node's local transform and self-projection once;
    // e_j(c_i) then costs a single matrix-vector product.
    let transforms: Vec<Option<crate::geom::Mat3>> =
        set.iter().map(|c| local_transform(c).ok()).collect();
    let own_proj: Vec<Option<crate::geom::Point2>> = set
        .iter()
        .zip(&transforms)
        .map(|(c, h)| h.as_ref().and_then(|h| project(h, &c.kp).ok()))
        .collect();

    // Upper triangle, rows in parallel; entries are independent so the
    // result does not depend on the schedule.
    let rows: Vec<Vec<(f64, f64, bool)>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut row = Vec::with_capacity(n - i - 1);
            for j in (i + 1)..n {
                let detail = match (&transforms[i], &transforms[j], &own_proj[i], &own_proj[j]) {
                    (Some(h_i), Some(h_j), Some(p_i), Some(p_j)) => {
                        let at_i = project(h_j, &set[i].kp).ok();
                        let at_j = project(h_i, &set[j].kp).ok();
                        match (at_i, at_j) {
                            (Some(at_i), Some(at_j)) => {
                                let sum = at_i.distance(p_i) + at_j.distance(p_j);
                                let s = (-lambda * sum).exp().max(DEGENERATE_SCORE);
                                (s, sum, false)
                            }
                            _ => (DEGENERATE_SCORE, f64::INFINITY, true),
                        }
                    }
                    _ => (DEGENERATE_SCORE, f64::INFINITY, true),
                };
                row.push(detail);
            }
            row
        })
        .collect();

    let mut scores = vec![0.0; n * n];
    let mut error_sums = vec![0.0; n * n];
    let mut flagged = Vec::new();
    for i in 0..n {
        scores[i * n + i] = 1.0;
        error_sums[i * n + i] = 0.0;
        for (off, &(s, sum, bad)) in rows[i].iter().enumerate() {
            let j = i + 1 + off;
            scores[i * n + j] = s;
            scores[j * n + i] = s;
            error_sums[i * n + j] = sum;
            error_sums[j * n + i] = sum;
            if bad {
                flagged.push((i, j));
            }
        }
    }
    let keys = set.iter().map(|c| c.as_vec4()).collect();
    Ok(ScoreMatrix {
        n,
        lambda,
        scores,
        error_sums,
        keys,
        flagged,
    })
}

/// Per-correspondence ordered neighborhood: `k` node indices with their
/// scores, non-increasing along each list. When the graph includes the query
/// itself it sits at position 0 with score 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeighborGraph {
    n: usize,
    k: usize,
    include_self: bool,
    nodes: Vec<usize>,
    scores: Vec<f64>,
}

impl NeighborGraph {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn include_self(&self) -> bool {
        self.include_self
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.nodes[i * self.k..(i + 1) * self.k]
    }

    pub fn scores_of(&self, i: usize) -> &[f64] {
        &self.scores[i * self.k..(i + 1) * self.k]
    }

    /// Builds a graph from explicit per-query lists (row-major n×k), checking
    /// the ordering invariants.
    pub fn from_parts(
        n: usize,
        k: usize,
        include_self: bool,
        nodes: Vec<usize>,
        scores: Vec<f64>,
    ) -> Result<Self, CompatError> {
        if k == 0 || nodes.len() != n * k || scores.len() != n * k {
            return Err(CompatError::InvalidGraph(format!(
                "need n*k = {} nodes and scores, got {} and {}",
                n * k,
                nodes.len(),
                scores.len()
            )));
        }
        let graph = NeighborGraph {
            n,
            k,
            include_self,
            nodes,
            scores,
        };
        for i in 0..n {
            if graph.neighbors(i).iter().any(|&j| j >= n) {
                return Err(CompatError::InvalidGraph(format!(
                    "query {i} references a node outside 0..{n}"
                )));
            }
            if include_self && (graph.neighbors(i)[0] != i || graph.scores_of(i)[0] != 1.0) {
                return Err(CompatError::InvalidGraph(format!(
                    "query {i} must store itself at position 0 with score 1"
                )));
            }
            if graph.scores_of(i).windows(2).any(|w| w[0] < w[1]) {
                return Err(CompatError::InvalidGraph(format!(
                    "query {i} scores are not non-increasing"
                )));
            }
        }
        Ok(graph)
    }

    /// The same graph cut down to the first `new_k` entries per query. A
    /// prefix of a mined list is exactly what mining with the smaller k
    /// returns.
    pub fn truncated(&self, new_k: usize) -> Result<NeighborGraph, CompatError> {
        if new_k == 0 || new_k > self.k {
            return Err(CompatError::InsufficientCorrespondences {
                k: new_k,
                available: self.k,
            });
        }
        let mut nodes = Vec::with_capacity(self.n * new_k);
        let mut scores = Vec::with_capacity(self.n * new_k);
        for i in 0..self.n {
            nodes.extend_from_slice(&self.neighbors(i)[..new_k]);
            scores.extend_from_slice(&self.scores_of(i)[..new_k]);
        }
        Ok(NeighborGraph {
            n: self.n,
            k: new_k,
            include_self: self.include_self,
            nodes,
            scores,
        })
    }
}

fn lex_cmp(a: &[f64; 4], b: &[f64; 4]) -> std::cmp::Ordering {
    for (x, y) in a.iter().zip(b) {
        match x.partial_cmp(y) {
            Some(std::cmp::Ordering::Equal) | None => continue,
            Some(o) => return o,
        }
    }
    std::cmp::Ordering::Equal
}

/// Shared top-k extraction. Candidates are ranked by `(rank_key asc,
/// lexicographic 4-vector asc, index asc)`; for compatibility mining the rank
/// key is the reprojection-error sum (ascending error sum == descending
/// score, and independent of λ), for spatial mining the 4D distance.
fn mine_by_key(
    n: usize,
    k: usize,
    include_self: bool,
    keys: &[[f64; 4]],
    rank_key: impl Fn(usize, usize) -> f64 + Sync,
    score_of: impl Fn(usize, usize) -> f64 + Sync,
) -> Result<NeighborGraph, CompatError> {
    let available = if include_self { n } else { n.saturating_sub(1) };
    if k == 0 || k > available {
        return Err(CompatError::InsufficientCorrespondences { k, available });
    }

    let per_query: Vec<(Vec<usize>, Vec<f64>)> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut order: Vec<usize> = (0..n).filter(|&j| j != i).collect();
            order.sort_by(|&a, &b| {
                rank_key(i, a)
                    .partial_cmp(&rank_key(i, b))
                    .unwrap_or(std::cmp::Ordering::Equal)
                    .then_with(|| lex_cmp(&keys[a], &keys[b]))
                    .then_with(|| a.cmp(&b))
            });
            let mut nodes = Vec::with_capacity(k);
            let mut scores = Vec::with_capacity(k);
            if include_self {
                nodes.push(i);
                scores.push(1.0);
            }
            for &j in order.iter().take(k - nodes.len()) {
                nodes.push(j);
                scores.push(score_of(i, j));
            }
            (nodes, scores)
        })
        .collect();

    let mut nodes = Vec::with_capacity(n * k);
    let mut scores = Vec::with_capacity(n * k);
    for (nd, sc) in per_query {
        nodes.extend(nd);
        scores.extend(sc);
    }
    Ok(NeighborGraph {
        n,
        k,
        include_self,
        nodes,
        scores,
    })
}

/// Mines the top-k most compatible neighbors of every correspondence.
pub fn mine_cs_knn(
    matrix: &ScoreMatrix,
    k: usize,
    include_self: bool,
) -> Result<NeighborGraph, CompatError> {
    mine_by_key(
        matrix.n,
        k,
        include_self,
        &matrix.keys,
        |i, j| matrix.error_sums[i * matrix.n + j],
        |i, j| matrix.scores[i * matrix.n + j],
    )
}

/// Mines the spatially k-nearest neighbors in the concatenated 4D space
/// (x, y, x', y'). Graph scores are exp(−distance) so the ordering contract
/// (non-increasing, self = 1) holds for spatial graphs too.
pub fn mine_spatial_knn(
    set: &[Correspondence],
    k: usize,
    include_self: bool,
) -> Result<NeighborGraph, CompatError> {
    let n = set.len();
    if n < 2 {
        return Err(CompatError::SetTooSmall(n));
    }
    let keys: Vec<[f64; 4]> = set.iter().map(|c| c.as_vec4()).collect();
    let dist = move |i: usize, j: usize, keys: &[[f64; 4]]| -> f64 {
        let (a, b) = (&keys[i], &keys[j]);
        let mut s = 0.0;
        for d in 0..4 {
            let t = a[d] - b[d];
            s += t * t;
        }
        s.sqrt()
    };
    mine_by_key(
        n,
        k,
        include_self,
        &keys,
        |i, j| dist(i, j, &keys),
        |i, j| (-dist(i, j, &keys)).exp(),
    )
}

/// Inlier-ratio buckets used by the neighbor-consistency report.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RatioBucket {
    Below20,
    From20To35,
    From35To50,
    Above50,
}

impl RatioBucket {
    pub const ALL: [RatioBucket; 4] = [
        RatioBucket::Below20,
        RatioBucket::From20To35,
        RatioBucket::From35To50,
        RatioBucket::Above50,
    ];

    pub fn from_ratio(r: f64) -> RatioBucket {
        if r < 0.20 {
            RatioBucket::Below20
        } else if r < 0.35 {
            RatioBucket::From20To35
        } else if r < 0.50 {
            RatioBucket::From35To50
        } else {
            RatioBucket::Above50
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            RatioBucket::Below20 => "<20%",
            RatioBucket::From20To35 => "20-35%",
            RatioBucket::From35To50 => "35-50%",
            RatioBucket::Above50 => ">50%",
        }
    }
}

/// Mean inlier ratio of the mined neighbors of inliers, for one scene.
///
/// The query itself never counts toward its own neighbor ratio, whether or
/// not the graph stores it.
pub fn neighbor_inlier_ratio(
    graph: &NeighborGraph,
    labels: &LabelVector,
) -> Result<f64, CompatError> {
    if graph.n() != labels.len() {
        return Err(CompatError::LengthMismatch {
            graph: graph.n(),
            labels: labels.len(),
        });
    }
    let mut total = 0.0;
    let mut inliers = 0usize;
    for i in 0..graph.n() {
        if !labels.as_slice()[i] {
            continue;
        }
        inliers += 1;
        let mut good = 0usize;
        let mut count = 0usize;
        for &j in graph.neighbors(i) {
            if j == i {
                continue;
            }
            count += 1;
            if labels.as_slice()[j] {
                good += 1;
            }
        }
        if count > 0 {
            total += good as f64 / count as f64;
        }
    }
    if inliers == 0 {
        return Err(CompatError::EmptyBucket);
    }
    Ok(total / inliers as f64)
}

/// Accumulates per-scene neighbor inlier ratios into (bucket, k) cells.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct NeighborStats {
    cells: std::collections::BTreeMap<(u8, usize), (f64, usize)>,
}

impl NeighborStats {
    pub fn new() -> Self {
        Self::default()
    }

    fn bucket_index(bucket: RatioBucket) -> u8 {
        match bucket {
            RatioBucket::Below20 => 0,
            RatioBucket::From20To35 => 1,
            RatioBucket::From35To50 => 2,
            RatioBucket::Above50 => 3,
        }
    }

    pub fn record(&mut self, bucket: RatioBucket, k: usize, ratio: f64) {
        let cell = self
            .cells
            .entry((Self::bucket_index(bucket), k))
            .or_insert((0.0, 0));
        cell.0 += ratio;
        cell.1 += 1;
    }

    /// Mean ratio in a cell, or `None` when the bucket is empty.
    pub fn mean(&self, bucket: RatioBucket, k: usize) -> Option<f64> {
        self.cells
            .get(&(Self::bucket_index(bucket), k))
            .map(|(sum, count)| sum / *count as f64)
    }

    pub fn scene_count(&self, bucket: RatioBucket, k: usize) -> usize {
        self.cells
            .get(&(Self::bucket_index(bucket), k))
            .map_or(0, |c| c.1)
    }
}

/// Hand-crafted classifier: a correspondence is an inlier when the sum of
/// its graph neighbors' compatibility scores exceeds the threshold.
pub fn score_sum_classifier(
    graph: &NeighborGraph,
    matrix: &ScoreMatrix,
    threshold: f64,
) -> LabelVector {
    LabelVector(
        (0..graph.n())
            .map(|i| {
                let sum: f64 = graph.neighbors(i).iter().map(|&j| matrix.get(i, j)).sum();
                sum > threshold
            })
            .collect(),
    )
}

/// The per-graph score sums behind [`score_sum_classifier`], exposed for
/// threshold sweeps.
pub fn score_sums(graph: &NeighborGraph, matrix: &ScoreMatrix) -> Vec<f64> {
    (0..graph.n())
        .map(|i| graph.neighbors(i).iter().map(|&j| matrix.get(i, j)).sum())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::{AffineFrame, Point2};
    use approx::assert_abs_diff_eq;

    fn corr(k: (f64, f64), a: [f64; 4], kp: (f64, f64), ap: [f64; 4]) -> Correspondence {
        Correspondence::new(
            Point2::new(k.0, k.1),
            AffineFrame::new(a[0], a[1], a[2], a[3]),
            Point2::new(kp.0, kp.1),
            AffineFrame::new(ap[0], ap[1], ap[2], ap[3]),
        )
    }

    const I: [f64; 4] = [1.0, 0.0, 0.0, 1.0];

    fn pseudo_random_set(n: usize) -> Vec<Correspondence> {
        (0..n)
            .map(|i| {
                let t = i as f64;
                corr(
                    ((t * 0.7).sin() * 0.4, (t * 1.3).cos() * 0.4),
                    [1.0 + 0.1 * (t * 0.9).sin(), 0.05 * t.cos(), -0.04 * t.sin(), 0.9],
                    ((t * 2.1).sin() * 0.4, (t * 0.3).cos() * 0.4),
                    [0.8, 0.1 * (t * 1.7).cos(), 0.02 * t.sin(), 1.1 + 0.1 * t.cos()],
                )
            })
            .collect()
    }

    #[test]
    fn pair_score_identical_is_one() {
        let c = corr((0.1, 0.2), I, (0.3, 0.4), [2.0, 0.0, 0.0, 2.0]);
        assert_eq!(pair_score(&c, &c, DEFAULT_LAMBDA), 1.0);
    }

    #[test]
    fn pair_score_affine_consistent_pair_is_one() {
        let c_i = corr((0.0, 0.0), I, (1.0, 1.0), [2.0, 0.0, 0.0, 2.0]);
        let c_j = corr((1.0, 0.0), I, (3.0, 1.0), [2.0, 0.0, 0.0, 2.0]);
        assert_abs_diff_eq!(pair_score(&c_i, &c_j, DEFAULT_LAMBDA), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn pair_score_inconsistent_pair_hand_value() {
        let c_i = corr((0.0, 0.0), I, (1.0, 1.0), [2.0, 0.0, 0.0, 2.0]);
        let c_j = corr((1.0, 0.0), I, (0.0, 0.0), I);
        // Errors are √5 and √10 (geom hand oracle).
        let want = (-1e-3 * (5.0_f64.sqrt() + 10.0_f64.sqrt())).exp();
        let got = pair_score(&c_i, &c_j, 1e-3);
        assert_abs_diff_eq!(got, want, epsilon = 1e-15);
        assert_abs_diff_eq!(got, 0.994616, epsilon = 1e-6);
    }

    #[test]
    fn pair_score_symmetric_and_in_range() {
        let set = pseudo_random_set(20);
        for i in 0..set.len() {
            for j in 0..set.len() {
                let a = pair_score(&set[i], &set[j], DEFAULT_LAMBDA);
                let b = pair_score(&set[j], &set[i], DEFAULT_LAMBDA);
                assert!((a - b).abs() < 1e-12);
                assert!(a > 0.0 && a <= 1.0);
            }
        }
    }

    #[test]
    fn score_matrix_identical_pair_all_ones() {
        let c = corr((0.1, 0.2), I, (0.3, 0.4), [2.0, 0.0, 0.0, 2.0]);
        let m = score_matrix(&[c, c], DEFAULT_LAMBDA).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                assert_eq!(m.get(i, j), 1.0);
            }
        }
    }

    #[test]
    fn score_matrix_global_affine_all_ones() {
        // Three correspondences generated by H = [[2I, (1,1)],[0,1]].
        let mk = |x: f64, y: f64| {
            corr((x, y), I, (2.0 * x + 1.0, 2.0 * y + 1.0), [2.0, 0.0, 0.0, 2.0])
        };
        let set = [mk(0.0, 0.0), mk(1.0, 0.0), mk(-0.5, 0.7)];
        let m = score_matrix(&set, DEFAULT_LAMBDA).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                assert_abs_diff_eq!(m.get(i, j), 1.0, epsilon = 1e-10);
            }
        }
    }

    #[test]
    fn score_matrix_matches_double_loop() {
        let set = pseudo_random_set(5);
        let m = score_matrix(&set, DEFAULT_LAMBDA).unwrap();
        for i in 0..5 {
            for j in 0..5 {
                let want = if i == j {
                    1.0
                } else {
                    pair_score(&set[i], &set[j], DEFAULT_LAMBDA)
                };
                assert_abs_diff_eq!(m.get(i, j), want, epsilon = 1e-15);
            }
        }
    }

    #[test]
    fn score_matrix_respects_cap() {
        let set = pseudo_random_set(5);
        let err = score_matrix_with_cap(&set, DEFAULT_LAMBDA, 4).unwrap_err();
        assert!(matches!(err, CompatError::SetTooLarge { n: 5, cap: 4 }));
    }

    fn hand_matrix() -> ScoreMatrix {
        ScoreMatrix::from_scores(
            vec![
                1.0, 0.9, 0.2, 0.1, //
                0.9, 1.0, 0.3, 0.2, //
                0.2, 0.3, 1.0, 0.8, //
                0.1, 0.2, 0.8, 1.0,
            ],
            4,
            DEFAULT_LAMBDA,
        )
        .unwrap()
    }

    #[test]
    fn mine_cs_knn_hand_matrix() {
        let m = hand_matrix();
        let g = mine_cs_knn(&m, 2, false).unwrap();
        assert_eq!(g.neighbors(0), &[1, 2]);
        assert_eq!(g.neighbors(1), &[0, 2]);
        assert_eq!(g.neighbors(2), &[3, 1]);
        assert_eq!(g.neighbors(3), &[2, 1]);

        let g1 = mine_cs_knn(&m, 1, false).unwrap();
        assert_eq!(g1.neighbors(0), &[1]);
        assert_eq!(g1.neighbors(1), &[0]);
        assert_eq!(g1.neighbors(2), &[3]);
        assert_eq!(g1.neighbors(3), &[2]);
    }

    #[test]
    fn mine_cs_knn_full_k_with_self() {
        let m = hand_matrix();
        let g = mine_cs_knn(&m, 4, true).unwrap();
        for i in 0..4 {
            assert_eq!(g.neighbors(i)[0], i);
            assert_eq!(g.scores_of(i)[0], 1.0);
            let mut seen: Vec<usize> = g.neighbors(i).to_vec();
            seen.sort_unstable();
            assert_eq!(seen, vec![0, 1, 2, 3]);
            for w in g.scores_of(i).windows(2) {
                assert!(w[0] >= w[1], "scores must be non-increasing");
            }
        }
    }

    #[test]
    fn mine_cs_knn_k_too_large() {
        let m = hand_matrix();
        assert!(matches!(
            mine_cs_knn(&m, 5, true).unwrap_err(),
            CompatError::InsufficientCorrespondences { .. }
        ));
        assert!(matches!(
            mine_cs_knn(&m, 4, false).unwrap_err(),
            CompatError::InsufficientCorrespondences { .. }
        ));
    }

    #[test]
    fn mine_spatial_collinear_points() {
        // Evenly spaced along a line; nearest neighbor is an adjacent point.
        let set: Vec<Correspondence> = (0..5)
            .map(|i| corr((i as f64, 0.0), I, (i as f64, 0.0), I))
            .collect();
        let g = mine_spatial_knn(&set, 1, false).unwrap();
        assert_eq!(g.neighbors(0), &[1]);
        assert_eq!(g.neighbors(4), &[3]);
        for i in 1..4 {
            let n = g.neighbors(i)[0];
            assert!(n == i - 1 || n == i + 1);
        }
    }

    #[test]
    fn mine_spatial_matches_brute_force() {
        let set = pseudo_random_set(6);
        let g = mine_spatial_knn(&set, 3, false).unwrap();
        for i in 0..6 {
            let mut order: Vec<usize> = (0..6).filter(|&j| j != i).collect();
            let d = |a: usize, b: usize| {
                let (u, v) = (set[a].as_vec4(), set[b].as_vec4());
                (0..4).map(|t| (u[t] - v[t]).powi(2)).sum::<f64>()
            };
            order.sort_by(|&a, &b| d(i, a).partial_cmp(&d(i, b)).unwrap());
            assert_eq!(g.neighbors(i), &order[..3]);
        }
    }

    #[test]
    fn mine_spatial_duplicate_first() {
        let mut set = pseudo_random_set(5);
        set.push(set[2]);
        let g = mine_spatial_knn(&set, 1, false).unwrap();
        assert_eq!(g.neighbors(2), &[5]);
        assert_eq!(g.neighbors(5), &[2]);
    }

    #[test]
    fn lambda_does_not_change_rankings() {
        let set = pseudo_random_set(12);
        let graphs: Vec<NeighborGraph> = [1e-4, 1e-3, 1e-1]
            .iter()
            .map(|&l| {
                let m = score_matrix(&set, l).unwrap();
                mine_cs_knn(&m, 4, false).unwrap()
            })
            .collect();
        for g in &graphs[1..] {
            assert_eq!(g.nodes, graphs[0].nodes);
        }
    }

    #[test]
    fn permutation_covariance() {
        let set = pseudo_random_set(10);
        let m = score_matrix(&set, DEFAULT_LAMBDA).unwrap();
        let g = mine_cs_knn(&m, 3, true).unwrap();

        // Reverse the set; old index p maps to new index 9 - p.
        let perm: Vec<usize> = (0..10).rev().collect();
        let permuted: Vec<Correspondence> = perm.iter().map(|&p| set[p]).collect();
        let mp = score_matrix(&permuted, DEFAULT_LAMBDA).unwrap();
        let gp = mine_cs_knn(&mp, 3, true).unwrap();

        for new_i in 0..10 {
            let old_i = perm[new_i];
            let want: Vec<usize> = g
                .neighbors(old_i)
                .iter()
                .map(|&j| perm.iter().position(|&p| p == j).unwrap())
                .collect();
            assert_eq!(gp.neighbors(new_i), &want[..]);
        }
    }

    #[test]
    fn neighbor_ratio_all_inliers() {
        let set = pseudo_random_set(6);
        let g = mine_spatial_knn(&set, 2, false).unwrap();
        let labels = LabelVector(vec![true; 6]);
        assert_eq!(neighbor_inlier_ratio(&g, &labels).unwrap(), 1.0);
    }

    #[test]
    fn neighbor_ratio_all_outlier_neighbors() {
        // Two inliers far apart; each inlier's nearest neighbors are the
        // outliers clustered next to it.
        let set = vec![
            corr((0.0, 0.0), I, (0.0, 0.0), I),
            corr((100.0, 0.0), I, (100.0, 0.0), I),
            corr((0.1, 0.0), I, (0.1, 0.0), I),
            corr((0.0, 0.1), I, (0.0, 0.1), I),
            corr((100.1, 0.0), I, (100.1, 0.0), I),
            corr((100.0, 0.1), I, (100.0, 0.1), I),
        ];
        let labels = LabelVector(vec![true, true, false, false, false, false]);
        let g = mine_spatial_knn(&set, 2, false).unwrap();
        assert_eq!(neighbor_inlier_ratio(&g, &labels).unwrap(), 0.0);
    }

    #[test]
    fn neighbor_ratio_hand_counted() {
        let m = ScoreMatrix::from_scores(
            vec![
                1.0, 0.9, 0.8, 0.1, 0.2, //
                0.9, 1.0, 0.7, 0.2, 0.1, //
                0.8, 0.7, 1.0, 0.6, 0.1, //
                0.1, 0.2, 0.6, 1.0, 0.5, //
                0.2, 0.1, 0.1, 0.5, 1.0,
            ],
            5,
            DEFAULT_LAMBDA,
        )
        .unwrap();
        let g = mine_cs_knn(&m, 2, false).unwrap();
        // Neighbors: 0→{1,2}, 1→{0,2}, 2→{0,1}, 3→{2,4}, 4→{3,0}.
        let labels = LabelVector(vec![true, true, false, true, false]);
        // Inliers: 0 (neighbors 1✓,2✗ → 1/2), 1 (0✓,2✗ → 1/2), 3 (2✗,4✗ → 0).
        let want = (0.5 + 0.5 + 0.0) / 3.0;
        assert_abs_diff_eq!(
            neighbor_inlier_ratio(&g, &labels).unwrap(),
            want,
            epsilon = 1e-15
        );
    }

    #[test]
    fn neighbor_ratio_no_inliers() {
        let set = pseudo_random_set(4);
        let g = mine_spatial_knn(&set, 2, false).unwrap();
        let labels = LabelVector(vec![false; 4]);
        assert!(matches!(
            neighbor_inlier_ratio(&g, &labels).unwrap_err(),
            CompatError::EmptyBucket
        ));
    }

    #[test]
    fn score_sum_trivial_cases() {
        // All scores 1, k = 8, threshold 7.9: sum 8 → inlier.
        let n = 9;
        let m = ScoreMatrix::from_scores(vec![1.0; n * n], n, DEFAULT_LAMBDA).unwrap();
        let g = mine_cs_knn(&m, 8, false).unwrap();
        let labels = score_sum_classifier(&g, &m, 7.9);
        assert!(labels.as_slice().iter().all(|&b| b));

        // All scores 0.5 off-diagonal, k = 8, threshold 5: sum 4 → outlier.
        let mut scores = vec![0.5; n * n];
        for i in 0..n {
            scores[i * n + i] = 1.0;
        }
        let m = ScoreMatrix::from_scores(scores, n, DEFAULT_LAMBDA).unwrap();
        let g = mine_cs_knn(&m, 8, false).unwrap();
        let labels = score_sum_classifier(&g, &m, 5.0);
        assert!(labels.as_slice().iter().all(|&b| !b));
    }

    #[test]
    fn score_sum_hand_matrix() {
        let m = hand_matrix();
        let g = mine_cs_knn(&m, 2, false).unwrap();
        // Sums: 0: 0.9+0.2=1.1, 1: 0.9+0.3=1.2, 2: 0.8+0.3=1.1, 3: 0.8+0.2=1.0.
        let labels = score_sum_classifier(&g, &m, 1.5);
        assert_eq!(labels.as_slice(), &[false, false, false, false]);
        let labels = score_sum_classifier(&g, &m, 1.05);
        assert_eq!(labels.as_slice(), &[true, true, true, false]);
    }

    #[test]
    fn bucket_boundaries() {
        assert_eq!(RatioBucket::from_ratio(0.1), RatioBucket::Below20);
        assert_eq!(RatioBucket::from_ratio(0.20), RatioBucket::From20To35);
        assert_eq!(RatioBucket::from_ratio(0.349), RatioBucket::From20To35);
        assert_eq!(RatioBucket::from_ratio(0.42), RatioBucket::From35To50);
        assert_eq!(RatioBucket::from_ratio(0.50), RatioBucket::Above50);
    }

    #[test]
    fn truncated_graph_matches_smaller_k_mining() {
        let set = pseudo_random_set(15);
        let m = score_matrix(&set, DEFAULT_LAMBDA).unwrap();
        let big = mine_cs_knn(&m, 8, true).unwrap();
        for k in [1usize, 3, 8] {
            let direct = mine_cs_knn(&m, k, true).unwrap();
            assert_eq!(big.truncated(k).unwrap(), direct);
        }
        assert!(big.truncated(9).is_err());
    }

    #[test]
    fn from_parts_validates_invariants() {
        assert!(NeighborGraph::from_parts(2, 1, true, vec![0, 1], vec![1.0, 1.0]).is_ok());
        // Self missing at position 0.
        assert!(NeighborGraph::from_parts(2, 1, true, vec![1, 0], vec![1.0, 1.0]).is_err());
        // Increasing scores.
        assert!(
            NeighborGraph::from_parts(1, 2, false, vec![0, 0], vec![0.1, 0.9]).is_err()
        );
        // Out-of-range node.
        assert!(NeighborGraph::from_parts(1, 1, false, vec![3], vec![1.0]).is_err());
    }

    #[test]
    fn stats_accumulator() {
        let mut stats = NeighborStats::new();
        stats.record(RatioBucket::Below20, 8, 0.4);
        stats.record(RatioBucket::Below20, 8, 0.6);
        assert_abs_diff_eq!(
            stats.mean(RatioBucket::Below20, 8).unwrap(),
            0.5,
            epsilon = 1e-15
        );
        assert_eq!(stats.scene_count(RatioBucket::Below20, 8), 2);
        assert!(stats.mean(RatioBucket::Above50, 8).is_none());
    }
}
