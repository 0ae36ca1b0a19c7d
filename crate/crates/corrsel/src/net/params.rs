//! Learnable parameter blocks, initialization, and the Adam update.

use rand::prelude::*;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Normal};

use super::arch::{BufferSpec, CompiledPlan, ParamSpec};
use super::NetError;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// All learnable blocks plus the batch-norm running buffers, in plan order.
/// Blocks are addressable by index or by (layer, name).
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub(crate) specs: Vec<ParamSpec>,
    pub(crate) blocks: Vec<Vec<f64>>,
    pub(crate) buffer_specs: Vec<BufferSpec>,
    pub(crate) buffers: Vec<Vec<f64>>,
}

impl ModelParams {
    /// Seeded initialization: He-normal conv kernels, zero biases, unit
    /// normalization scales, zero shifts, unit running variance.
    pub fn init(plan: &CompiledPlan, seed: u64) -> Self {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let blocks = plan
            .params
            .iter()
            .map(|spec| init_block(plan, spec, &mut rng))
            .collect();
        let buffers = plan
            .buffer_specs()
            .iter()
            .map(|spec| {
                if spec.name == "running_var" {
                    vec![1.0; spec.len]
                } else {
                    vec![0.0; spec.len]
                }
            })
            .collect();
        ModelParams {
            specs: plan.params.clone(),
            blocks,
            buffer_specs: plan.buffers.clone(),
            buffers,
        }
    }

    pub fn block_count(&self) -> usize {
        self.blocks.len()
    }

    pub fn spec(&self, idx: usize) -> &ParamSpec {
        &self.specs[idx]
    }

    pub fn block(&self, idx: usize) -> &[f64] {
        &self.blocks[idx]
    }

    pub fn block_mut(&mut self, idx: usize) -> &mut [f64] {
        &mut self.blocks[idx]
    }

    /// Looks a block up by (op index, name), the stable address of every
    /// parameter block.
    pub fn block_by_address(&self, layer: usize, name: &str) -> Option<&[f64]> {
        self.specs
            .iter()
            .position(|s| s.layer == layer && s.name == name)
            .map(|i| self.blocks[i].as_slice())
    }

    pub fn buffer(&self, idx: usize) -> &[f64] {
        &self.buffers[idx]
    }

    pub fn buffer_mut(&mut self, idx: usize) -> &mut [f64] {
        &mut self.buffers[idx]
    }

    pub fn total_parameters(&self) -> usize {
        self.blocks.iter().map(Vec::len).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.blocks
            .iter()
            .chain(self.buffers.iter())
            .all(|b| b.iter().all(|v| v.is_finite()))
    }

    /// Shape-checks against a plan (e.g. after loading a checkpoint).
    pub fn validate_against(&self, plan: &CompiledPlan) -> Result<(), NetError> {
        if self.specs != plan.params || self.buffer_specs != plan.buffers {
            return Err(NetError::Shape(
                "parameter layout does not match the architecture".into(),
            ));
        }
        for (spec, block) in self.specs.iter().zip(&self.blocks) {
            if spec.len() != block.len() {
                return Err(NetError::Shape(format!(
                    "block {}.{} has {} values, expected {}",
                    spec.layer,
                    spec.name,
                    block.len(),
                    spec.len()
                )));
            }
        }
        Ok(())
    }
}

impl CompiledPlan {
    fn buffer_specs(&self) -> &[BufferSpec] {
        &self.buffers
    }
}

fn init_block(plan: &CompiledPlan, spec: &ParamSpec, rng: &mut ChaCha20Rng) -> Vec<f64> {
    match spec.name.as_str() {
        "kernel" | "skip_kernel" => {
            // shape = [out_c, width, in_c]; He fan-in = width · in_c.
            let fan_in = (spec.shape[1] * spec.shape[2]) as f64;
            let normal = Normal::new(0.0, (2.0 / fan_in).sqrt()).unwrap();
            (0..spec.len()).map(|_| normal.sample(rng)).collect()
        }
        "bias" | "skip_bias" | "beta" => vec![0.0; spec.len()],
        "gamma" => vec![1.0; spec.len()],
        other => {
            debug_assert!(false, "unknown block name {other}");
            let _ = &plan.ops;
            vec![0.0; spec.len()]
        }
    }
}

/// Gradients mirror the parameter blocks one-to-one.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub blocks: Vec<Vec<f64>>,
}

impl Gradients {
    pub fn zeros_like(params: &ModelParams) -> Self {
        Gradients {
            blocks: params.blocks.iter().map(|b| vec![0.0; b.len()]).collect(),
        }
    }

    pub fn add_scaled(&mut self, other: &Gradients, scale: f64) {
        for (a, b) in self.blocks.iter_mut().zip(&other.blocks) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += scale * y;
            }
        }
    }

    pub fn scale(&mut self, s: f64) {
        for b in &mut self.blocks {
            for v in b.iter_mut() {
                *v *= s;
            }
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.blocks
            .iter()
            .flat_map(|b| b.iter())
            .fold(0.0f64, |m, v| m.max(v.abs()))
    }

    pub fn norm(&self) -> f64 {
        self.blocks
            .iter()
            .flat_map(|b| b.iter())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }
}

/// First/second-moment state for Adam, one entry per parameter block.
#[derive(Debug, Clone)]
pub struct AdamState {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    step: u64,
}

impl AdamState {
    pub fn new(params: &ModelParams) -> Self {
        AdamState {
            m: params.blocks.iter().map(|b| vec![0.0; b.len()]).collect(),
            v: params.blocks.iter().map(|b| vec![0.0; b.len()]).collect(),
            step: 0,
        }
    }

    pub fn step(&self) -> u64 {
        self.step
    }
}

/// One bias-corrected Adam update in place.
pub fn adam_step(params: &mut ModelParams, grads: &Gradients, state: &mut AdamState, lr: f64) {
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - ADAM_BETA1.powi(t);
    let bc2 = 1.0 - ADAM_BETA2.powi(t);
    for (b, (g, (m, v))) in params
        .blocks
        .iter_mut()
        .zip(grads.blocks.iter().zip(state.m.iter_mut().zip(state.v.iter_mut())))
    {
        for i in 0..b.len() {
            m[i] = ADAM_BETA1 * m[i] + (1.0 - ADAM_BETA1) * g[i];
            v[i] = ADAM_BETA2 * v[i] + (1.0 - ADAM_BETA2) * g[i] * g[i];
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            b[i] -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
        }
    }
}
