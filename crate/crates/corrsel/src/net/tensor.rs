//! The rank-3 feature map flowing through the network.

use serde::{Deserialize, Serialize};

use super::NetError;

/// (N correspondences × W neighbor-width × C channels), dense row-major with
/// the channel axis contiguous.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMap {
    n: usize,
    w: usize,
    c: usize,
    data: Vec<f64>,
}

impl FeatureMap {
    pub fn zeros(n: usize, w: usize, c: usize) -> Self {
        FeatureMap {
            n,
            w,
            c,
            data: vec![0.0; n * w * c],
        }
    }

    pub fn from_vec(n: usize, w: usize, c: usize, data: Vec<f64>) -> Result<Self, NetError> {
        if data.len() != n * w * c {
            return Err(NetError::Shape(format!(
                "feature map data length {} != {n}×{w}×{c}",
                data.len()
            )));
        }
        if n == 0 || w == 0 || c == 0 {
            return Err(NetError::Shape("feature map dims must be positive".into()));
        }
        Ok(FeatureMap { n, w, c, data })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn w(&self) -> usize {
        self.w
    }

    pub fn c(&self) -> usize {
        self.c
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn get(&self, i: usize, x: usize, ch: usize) -> f64 {
        self.data[(i * self.w + x) * self.c + ch]
    }

    #[inline]
    pub fn set(&mut self, i: usize, x: usize, ch: usize, v: f64) {
        self.data[(i * self.w + x) * self.c + ch] = v;
    }

    /// The C-length channel vector at (i, x).
    #[inline]
    pub fn slot(&self, i: usize, x: usize) -> &[f64] {
        let base = (i * self.w + x) * self.c;
        &self.data[base..base + self.c]
    }

    #[inline]
    pub fn slot_mut(&mut self, i: usize, x: usize) -> &mut [f64] {
        let base = (i * self.w + x) * self.c;
        &mut self.data[base..base + self.c]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}
