//! Correspondence selection toolkit.
//!
//! Given a set of putative keypoint correspondences between two views, this
//! crate separates inliers from outliers. The pieces:
//!
//! - [`geom`]: two-view geometry — local affine transforms, reprojection
//!   errors, epipolar distances, ground-truth labeling.
//! - [`compat`]: pairwise compatibility scores, compatibility-specific and
//!   spatial k-nearest-neighbor mining, neighbor-consistency statistics,
//!   and a score-sum hand-crafted classifier.
//! - [`synth`]: synthetic two-view scene generation with exact ground truth,
//!   plus a line-delimited dataset format.
//! - [`net`]: a small graph classifier over mined neighborhoods, trained
//!   with manual backpropagation and Adam.
//! - [`baseline`]: normalized eight-point essential estimation inside RANSAC.
//! - [`eval`]: precision/recall/F-measure, essential-matrix deviation
//!   statistics, and experiment reports.

pub mod baseline;
pub mod compat;
pub mod eval;
pub mod geom;
pub mod net;
pub mod synth;

pub use compat::{mine_cs_knn, mine_spatial_knn, pair_score, score_matrix, NeighborGraph, ScoreMatrix};
pub use geom::{AffineFrame, Correspondence, EssentialMatrix, LabelVector, Mat3, Point2};
pub use synth::{generate, GeneratorConfig, SceneKind, ScenePair};
