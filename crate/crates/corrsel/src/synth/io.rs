//! Line-delimited dataset files: one scene per line as a JSON object
//!
//! ```text
//! {"version":1,"seed":…,"kind":"two-view-3d","e_gt":[9 row-major],
//!  "corrs":[[x,y,a11,a12,a21,a22,xp,yp,b11,b12,b21,b22],…],"labels":[0,1,…]}
//! ```
//!
//! Numbers are serialized with full round-trip precision, so
//! `read(write(x)) == x` bit-exactly for every numeric field, and rewriting
//! the same scenes produces byte-identical files.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::geom::{AffineFrame, Correspondence, EssentialMatrix, LabelVector, Mat3, Point2};

use super::{SceneKind, SceneMeta, ScenePair, SynthError};

/// Current dataset format version.
pub const DATASET_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct SceneRecord {
    version: u32,
    seed: u64,
    kind: SceneKind,
    e_gt: [f64; 9],
    corrs: Vec<[f64; 12]>,
    labels: Vec<u8>,
}

impl SceneRecord {
    fn from_scene(scene: &ScenePair) -> Self {
        SceneRecord {
            version: DATASET_VERSION,
            seed: scene.meta.seed,
            kind: scene.meta.kind,
            e_gt: scene.e_gt.as_mat3().0,
            corrs: scene
                .correspondences
                .iter()
                .map(|c| {
                    [
                        c.kp.x,
                        c.kp.y,
                        c.frame.a11,
                        c.frame.a12,
                        c.frame.a21,
                        c.frame.a22,
                        c.kp_prime.x,
                        c.kp_prime.y,
                        c.frame_prime.a11,
                        c.frame_prime.a12,
                        c.frame_prime.a21,
                        c.frame_prime.a22,
                    ]
                })
                .collect(),
            labels: scene.labels_gt.to_u8(),
        }
    }

    fn into_scene(self, line: usize) -> Result<ScenePair, SynthError> {
        if self.labels.len() != self.corrs.len() {
            return Err(SynthError::Parse {
                line,
                msg: format!(
                    "{} labels for {} correspondences",
                    self.labels.len(),
                    self.corrs.len()
                ),
            });
        }
        let e_gt = EssentialMatrix::from_raw_validated(Mat3(self.e_gt)).map_err(|e| {
            SynthError::Parse {
                line,
                msg: e.to_string(),
            }
        })?;
        let correspondences = self
            .corrs
            .iter()
            .map(|v| {
                Correspondence::new(
                    Point2::new(v[0], v[1]),
                    AffineFrame::new(v[2], v[3], v[4], v[5]),
                    Point2::new(v[6], v[7]),
                    AffineFrame::new(v[8], v[9], v[10], v[11]),
                )
            })
            .collect();
        Ok(ScenePair {
            correspondences,
            labels_gt: LabelVector::from_u8(&self.labels),
            e_gt,
            meta: SceneMeta {
                seed: self.seed,
                kind: self.kind,
                config: None,
            },
        })
    }
}

/// Writes scenes to a line-delimited dataset file.
pub fn write_dataset<P: AsRef<Path>>(path: P, scenes: &[ScenePair]) -> Result<(), SynthError> {
    let file = File::create(path)?;
    let mut w = BufWriter::new(file);
    for scene in scenes {
        let record = SceneRecord::from_scene(scene);
        let line = serde_json::to_string(&record)
            .map_err(|e| SynthError::GenerationFailed(format!("serialize: {e}")))?;
        w.write_all(line.as_bytes())?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// Reads scenes back from a dataset file.
pub fn read_dataset<P: AsRef<Path>>(path: P) -> Result<Vec<ScenePair>, SynthError> {
    let file = File::open(path)?;
    let reader = BufReader::new(file);
    let mut scenes = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let text = line?;
        if text.trim().is_empty() {
            continue;
        }
        let record: SceneRecord =
            serde_json::from_str(&text).map_err(|e| SynthError::Parse {
                line: line_no,
                msg: e.to_string(),
            })?;
        if record.version != DATASET_VERSION {
            return Err(SynthError::Version {
                line: line_no,
                found: record.version,
            });
        }
        scenes.push(record.into_scene(line_no)?);
    }
    Ok(scenes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate, GeneratorConfig};

    fn scenes(n: usize) -> Vec<ScenePair> {
        (0..n)
            .map(|i| {
                generate(&GeneratorConfig {
                    n_correspondences: 30,
                    seed: i as u64,
                    ..GeneratorConfig::default()
                })
                .unwrap()
            })
            .collect()
    }

    #[test]
    fn empty_file_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("empty.jsonl");
        write_dataset(&path, &[]).unwrap();
        assert_eq!(read_dataset(&path).unwrap(), vec![]);
    }

    #[test]
    fn single_scene_round_trip_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("one.jsonl");
        let original = scenes(1);
        write_dataset(&path, &original).unwrap();
        let back = read_dataset(&path).unwrap();
        assert_eq!(back.len(), 1);
        assert_eq!(back[0].correspondences, original[0].correspondences);
        assert_eq!(back[0].labels_gt, original[0].labels_gt);
        assert_eq!(back[0].e_gt.as_mat3().0, original[0].e_gt.as_mat3().0);
        assert_eq!(back[0].meta.seed, original[0].meta.seed);
        assert_eq!(back[0].meta.kind, original[0].meta.kind);
    }

    #[test]
    fn rewrite_is_byte_stable() {
        let dir = tempfile::tempdir().unwrap();
        let p1 = dir.path().join("a.jsonl");
        let p2 = dir.path().join("b.jsonl");
        let original = scenes(100);
        write_dataset(&p1, &original).unwrap();
        let back = read_dataset(&p1).unwrap();
        write_dataset(&p2, &back).unwrap();
        let b1 = std::fs::read(&p1).unwrap();
        let b2 = std::fs::read(&p2).unwrap();
        assert_eq!(b1, b2);
        assert!(!b1.is_empty());
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.jsonl");
        let good = serde_json::to_string(&SceneRecord::from_scene(&scenes(1)[0])).unwrap();
        std::fs::write(&path, format!("{good}\n{{not json\n")).unwrap();
        match read_dataset(&path).unwrap_err() {
            SynthError::Parse { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn version_mismatch_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("v9.jsonl");
        let mut record = SceneRecord::from_scene(&scenes(1)[0]);
        record.version = 9;
        std::fs::write(&path, format!("{}\n", serde_json::to_string(&record).unwrap())).unwrap();
        match read_dataset(&path).unwrap_err() {
            SynthError::Version { line, found } => {
                assert_eq!(line, 1);
                assert_eq!(found, 9);
            }
            other => panic!("unexpected error {other:?}"),
        }
    }
}
