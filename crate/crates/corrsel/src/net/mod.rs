//! A hierarchical classifier over mined correspondence neighborhoods.
//!
//! Each correspondence enters as its raw 4-vector (width 4, one channel). A
//! first convolution embeds it, the grouping stage gathers every
//! correspondence's mined neighbors into a width-k row, and a stack of
//! residual blocks with width-shrinking max aggregations reduces the
//! neighborhood back to a single logit per correspondence. Instance
//! normalization injects whole-scene context; batch normalization runs over
//! the scenes of a training batch and uses frozen running averages at
//! inference. Training is plain backpropagation (exact analytic gradients,
//! verified against finite differences) with Adam.

pub mod arch;
mod checkpoint;
mod layers;
mod params;
mod tensor;
mod train;

pub use arch::Architecture;
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_VERSION};
pub use layers::{conv_over_width, group_features, instance_norm, ConvKernel, Padding, NORM_EPS};
pub use params::{adam_step, AdamState, Gradients, ModelParams};
pub use tensor::FeatureMap;
pub use train::{
    backward, finite_difference_check, forward, infer, loss, mine_graph, train, BlockCheck,
    EpochStats, Mining, TrainConfig, TrainOutcome, LOGIT_CLAMP,
};

use rayon::prelude::*;
use thiserror::Error;

use crate::compat::NeighborGraph;
use crate::geom::Correspondence;

use arch::{compile, CompiledPlan, Op};
use layers::{
    batch_norm_backward, batch_norm_forward_eval, batch_norm_forward_train, collapse_width_max,
    conv_backward, conv_forward, group_backward, halve_width_max, instance_norm_backward,
    instance_norm_forward, pool_backward, relu_backward, relu_forward, BatchNormCache, NormCache,
    PoolCache,
};

/// Momentum of the batch-norm running-average update.
pub const BN_MOMENTUM: f64 = 0.9;

#[derive(Debug, Error)]
pub enum NetError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("architecture parse error: {0}")]
    ArchParse(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("empty dataset")]
    EmptyDataset,
    #[error("mining failed: {0}")]
    Mining(#[from] crate::compat::CompatError),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// A compiled network: the op sequence plus parameter/buffer layout for one
/// architecture. Parameters live separately in [`ModelParams`].
#[derive(Debug)]
pub struct Model {
    arch: Architecture,
    plan: CompiledPlan,
}

/// Whether batch statistics are computed (training) or frozen running
/// averages are used (inference).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

enum Record {
    Conv { inputs: Vec<FeatureMap> },
    InstanceNorm { caches: Vec<NormCache> },
    BatchNorm { cache: BatchNormCache },
    Relu { inputs: Vec<FeatureMap> },
    Group,
    Pool { caches: Vec<PoolCache> },
    ResBegin,
    ResEnd { skip_inputs: Option<Vec<FeatureMap>> },
}

pub(crate) struct Tape {
    records: Vec<Record>,
}

pub(crate) struct BatchRun {
    pub logits: Vec<Vec<f64>>,
    pub tape: Option<Tape>,
    /// (buffer index, new values) pairs from training-mode batch norm.
    pub buffer_updates: Vec<(usize, Vec<f64>)>,
}

/// Maps per-scene closures, in parallel for real batches, keeping output
/// order (and therefore every downstream reduction) deterministic.
fn map_scenes<T: Send, U: Send + Sync>(items: &[U], f: impl Fn(&U) -> T + Sync + Send) -> Vec<T> {
    if items.len() <= 1 {
        items.iter().map(f).collect()
    } else {
        items.par_iter().map(f).collect()
    }
}

impl Model {
    pub fn new(arch: Architecture) -> Result<Self, NetError> {
        let plan = compile(&arch, 1)?;
        Ok(Model { arch, plan })
    }

    pub fn architecture(&self) -> &Architecture {
        &self.arch
    }

    pub(crate) fn plan(&self) -> &CompiledPlan {
        &self.plan
    }

    pub fn init_params(&self, seed: u64) -> ModelParams {
        ModelParams::init(&self.plan, seed)
    }

    /// Converts a correspondence set into the network input: the raw
    /// 4-vector per correspondence as a width-4, one-channel map.
    pub fn scene_input(corrs: &[Correspondence]) -> FeatureMap {
        let mut data = Vec::with_capacity(corrs.len() * 4);
        for c in corrs {
            data.extend_from_slice(&c.as_vec4());
        }
        FeatureMap::from_vec(corrs.len(), 4, 1, data).expect("4n values")
    }

    /// Inference-mode logits for one scene.
    pub fn forward_logits(
        &self,
        params: &ModelParams,
        input: &FeatureMap,
        graph: &NeighborGraph,
    ) -> Result<Vec<f64>, NetError> {
        let run = self.run_batch(
            params,
            std::slice::from_ref(input),
            &[graph],
            Mode::Eval,
            false,
        )?;
        Ok(run.logits.into_iter().next().expect("one scene"))
    }

    pub(crate) fn run_batch(
        &self,
        params: &ModelParams,
        inputs: &[FeatureMap],
        graphs: &[&NeighborGraph],
        mode: Mode,
        want_tape: bool,
    ) -> Result<BatchRun, NetError> {
        if inputs.is_empty() {
            return Err(NetError::EmptyDataset);
        }
        if graphs.len() != inputs.len() {
            return Err(NetError::Shape(format!(
                "{} graphs for {} scenes",
                graphs.len(),
                inputs.len()
            )));
        }
        for (input, graph) in inputs.iter().zip(graphs) {
            if graph.n() != input.n() {
                return Err(NetError::Shape(format!(
                    "graph over {} nodes, scene has {}",
                    graph.n(),
                    input.n()
                )));
            }
            if input.c() != self.plan.input_channels || input.w() == 0 {
                return Err(NetError::Shape("bad input feature map".into()));
            }
        }

        let mut current: Vec<FeatureMap> = inputs.to_vec();
        let mut records: Vec<Record> = Vec::with_capacity(self.plan.ops.len());
        let mut res_stack: Vec<Vec<FeatureMap>> = Vec::new();
        let mut buffer_updates = Vec::new();

        for op in &self.plan.ops {
            match op {
                Op::Conv {
                    param,
                    in_c,
                    out_c,
                    width,
                    padded,
                } => {
                    let kernel = ConvKernel {
                        out_c: *out_c,
                        in_c: *in_c,
                        width: *width,
                        weights: params.block(*param).to_vec(),
                    };
                    let bias = params.block(param + 1);
                    let padding = if *padded { Padding::Same } else { Padding::Valid };
                    for map in &current {
                        if map.c() != *in_c {
                            return Err(NetError::Shape(format!(
                                "conv expects {in_c} channels, got {}",
                                map.c()
                            )));
                        }
                        if map.w() < *width && !*padded {
                            return Err(NetError::Shape(format!(
                                "conv width {width} exceeds map width {}",
                                map.w()
                            )));
                        }
                    }
                    let inputs_taken = std::mem::take(&mut current);
                    current =
                        map_scenes(&inputs_taken, |m| conv_forward(m, &kernel, bias, padding));
                    if want_tape {
                        records.push(Record::Conv {
                            inputs: inputs_taken,
                        });
                    }
                }
                Op::InstanceNorm { param, c: _ } => {
                    let gamma = params.block(*param);
                    let beta = params.block(param + 1);
                    let inputs_taken = std::mem::take(&mut current);
                    let results =
                        map_scenes(&inputs_taken, |m| instance_norm_forward(m, gamma, beta));
                    let mut caches = Vec::with_capacity(results.len());
                    current = results
                        .into_iter()
                        .map(|(out, cache)| {
                            caches.push(cache);
                            out
                        })
                        .collect();
                    if want_tape {
                        records.push(Record::InstanceNorm { caches });
                    }
                }
                Op::BatchNorm { param, buffer, c } => {
                    let gamma = params.block(*param);
                    let beta = params.block(param + 1);
                    match mode {
                        Mode::Train => {
                            let (outs, cache) = batch_norm_forward_train(&current, gamma, beta);
                            let mut new_mean = params.buffer(*buffer).to_vec();
                            let mut new_var = params.buffer(buffer + 1).to_vec();
                            for ch in 0..*c {
                                new_mean[ch] = BN_MOMENTUM * new_mean[ch]
                                    + (1.0 - BN_MOMENTUM) * cache.batch_mean[ch];
                                new_var[ch] = BN_MOMENTUM * new_var[ch]
                                    + (1.0 - BN_MOMENTUM) * cache.batch_var[ch];
                            }
                            buffer_updates.push((*buffer, new_mean));
                            buffer_updates.push((buffer + 1, new_var));
                            current = outs;
                            if want_tape {
                                records.push(Record::BatchNorm { cache });
                            }
                        }
                        Mode::Eval => {
                            let mean = params.buffer(*buffer);
                            let var = params.buffer(buffer + 1);
                            current = map_scenes(&current, |m| {
                                batch_norm_forward_eval(m, gamma, beta, mean, var)
                            });
                            if want_tape {
                                return Err(NetError::Config(
                                    "cannot record a tape in eval mode".into(),
                                ));
                            }
                        }
                    }
                }
                Op::Relu => {
                    let inputs_taken = std::mem::take(&mut current);
                    current = map_scenes(&inputs_taken, relu_forward);
                    if want_tape {
                        records.push(Record::Relu {
                            inputs: inputs_taken,
                        });
                    }
                }
                Op::Group => {
                    let mut next = Vec::with_capacity(current.len());
                    for (map, graph) in current.iter().zip(graphs) {
                        next.push(group_features(map, graph)?);
                    }
                    current = next;
                    if want_tape {
                        records.push(Record::Group);
                    }
                }
                Op::HalveWidthMax | Op::CollapseWidthMax => {
                    let collapse = matches!(op, Op::CollapseWidthMax);
                    let results = map_scenes(&current, |m| {
                        if collapse {
                            collapse_width_max(m)
                        } else {
                            halve_width_max(m)
                        }
                    });
                    let mut caches = Vec::with_capacity(results.len());
                    current = results
                        .into_iter()
                        .map(|(out, cache)| {
                            caches.push(cache);
                            out
                        })
                        .collect();
                    if want_tape {
                        records.push(Record::Pool { caches });
                    }
                }
                Op::ResBegin => {
                    res_stack.push(current.clone());
                    if want_tape {
                        records.push(Record::ResBegin);
                    }
                }
                Op::ResEnd { proj, in_c, out_c } => {
                    let skips = res_stack.pop().ok_or_else(|| {
                        NetError::Shape("residual end without matching begin".into())
                    })?;
                    match proj {
                        Some(p) => {
                            let kernel = ConvKernel {
                                out_c: *out_c,
                                in_c: *in_c,
                                width: 1,
                                weights: params.block(*p).to_vec(),
                            };
                            let bias = params.block(p + 1);
                            let projected = map_scenes(&skips, |m| {
                                conv_forward(m, &kernel, bias, Padding::Same)
                            });
                            for (cur, proj_map) in current.iter_mut().zip(&projected) {
                                for (a, b) in
                                    cur.as_mut_slice().iter_mut().zip(proj_map.as_slice())
                                {
                                    *a += b;
                                }
                            }
                            if want_tape {
                                records.push(Record::ResEnd {
                                    skip_inputs: Some(skips),
                                });
                            }
                        }
                        None => {
                            for (cur, skip) in current.iter_mut().zip(&skips) {
                                for (a, b) in cur.as_mut_slice().iter_mut().zip(skip.as_slice()) {
                                    *a += b;
                                }
                            }
                            if want_tape {
                                records.push(Record::ResEnd { skip_inputs: None });
                            }
                        }
                    }
                }
            }
        }

        let logits = current
            .iter()
            .map(|map| {
                if map.w() != 1 || map.c() != 1 {
                    return Err(NetError::Shape(format!(
                        "network output has shape ({}, {}, {}), expected (N, 1, 1)",
                        map.n(),
                        map.w(),
                        map.c()
                    )));
                }
                Ok(map.as_slice().to_vec())
            })
            .collect::<Result<Vec<_>, _>>()?;

        Ok(BatchRun {
            logits,
            tape: want_tape.then_some(Tape { records }),
            buffer_updates,
        })
    }

    /// Backpropagates dL/dlogits through the tape; returns parameter
    /// gradients summed over the batch in scene order.
    pub(crate) fn backward_batch(
        &self,
        params: &ModelParams,
        tape: &Tape,
        graphs: &[&NeighborGraph],
        dlogits: &[Vec<f64>],
    ) -> Result<Gradients, NetError> {
        let mut grads: Vec<FeatureMap> = dlogits
            .iter()
            .map(|d| FeatureMap::from_vec(d.len(), 1, 1, d.clone()))
            .collect::<Result<Vec<_>, _>>()?;
        let mut param_grads = Gradients::zeros_like(params);
        let mut res_grad_stack: Vec<Vec<FeatureMap>> = Vec::new();

        let mut record_iter = tape.records.iter().rev();
        for op in self.plan.ops.iter().rev() {
            let record = record_iter
                .next()
                .ok_or_else(|| NetError::Shape("tape shorter than plan".into()))?;
            match (op, record) {
                (
                    Op::Conv {
                        param,
                        in_c,
                        out_c,
                        width,
                        padded,
                    },
                    Record::Conv { inputs },
                ) => {
                    let kernel = ConvKernel {
                        out_c: *out_c,
                        in_c: *in_c,
                        width: *width,
                        weights: params.block(*param).to_vec(),
                    };
                    let padding = if *padded { Padding::Same } else { Padding::Valid };
                    let pairs: Vec<(&FeatureMap, &FeatureMap)> =
                        inputs.iter().zip(grads.iter()).collect();
                    let results = map_scenes(&pairs, |(input, grad_out)| {
                        conv_backward(input, &kernel, padding, grad_out)
                    });
                    let mut next = Vec::with_capacity(results.len());
                    for r in results {
                        for (a, b) in param_grads.blocks[*param].iter_mut().zip(&r.grad_kernel) {
                            *a += b;
                        }
                        for (a, b) in param_grads.blocks[param + 1].iter_mut().zip(&r.grad_bias) {
                            *a += b;
                        }
                        next.push(r.grad_in);
                    }
                    grads = next;
                }
                (Op::InstanceNorm { param, .. }, Record::InstanceNorm { caches }) => {
                    let gamma = params.block(*param);
                    let pairs: Vec<(&NormCache, &FeatureMap)> =
                        caches.iter().zip(grads.iter()).collect();
                    let results = map_scenes(&pairs, |(cache, grad_out)| {
                        instance_norm_backward(cache, gamma, grad_out)
                    });
                    let mut next = Vec::with_capacity(results.len());
                    for r in results {
                        for (a, b) in param_grads.blocks[*param].iter_mut().zip(&r.grad_gamma) {
                            *a += b;
                        }
                        for (a, b) in param_grads.blocks[param + 1].iter_mut().zip(&r.grad_beta) {
                            *a += b;
                        }
                        next.push(r.grad_in);
                    }
                    grads = next;
                }
                (Op::BatchNorm { param, .. }, Record::BatchNorm { cache }) => {
                    let gamma = params.block(*param);
                    let (grad_ins, grad_gamma, grad_beta) =
                        batch_norm_backward(cache, gamma, &grads);
                    for (a, b) in param_grads.blocks[*param].iter_mut().zip(&grad_gamma) {
                        *a += b;
                    }
                    for (a, b) in param_grads.blocks[param + 1].iter_mut().zip(&grad_beta) {
                        *a += b;
                    }
                    grads = grad_ins;
                }
                (Op::Relu, Record::Relu { inputs }) => {
                    let pairs: Vec<(&FeatureMap, &FeatureMap)> =
                        inputs.iter().zip(grads.iter()).collect();
                    grads = map_scenes(&pairs, |(input, grad_out)| relu_backward(input, grad_out));
                }
                (Op::Group, Record::Group) => {
                    let mut next = Vec::with_capacity(grads.len());
                    for (grad_out, graph) in grads.iter().zip(graphs) {
                        next.push(group_backward(graph, graph.n(), grad_out.c(), grad_out));
                    }
                    grads = next;
                }
                (Op::HalveWidthMax | Op::CollapseWidthMax, Record::Pool { caches }) => {
                    let pairs: Vec<(&PoolCache, &FeatureMap)> =
                        caches.iter().zip(grads.iter()).collect();
                    grads = map_scenes(&pairs, |(cache, grad_out)| {
                        pool_backward(cache, grad_out.n(), grad_out.c(), grad_out)
                    });
                }
                (Op::ResEnd { proj, in_c, out_c }, Record::ResEnd { skip_inputs }) => {
                    match (proj, skip_inputs) {
                        (Some(p), Some(skips)) => {
                            let kernel = ConvKernel {
                                out_c: *out_c,
                                in_c: *in_c,
                                width: 1,
                                weights: params.block(*p).to_vec(),
                            };
                            let pairs: Vec<(&FeatureMap, &FeatureMap)> =
                                skips.iter().zip(grads.iter()).collect();
                            let results = map_scenes(&pairs, |(input, grad_out)| {
                                conv_backward(input, &kernel, Padding::Same, grad_out)
                            });
                            let mut skip_grads = Vec::with_capacity(results.len());
                            for r in results {
                                for (a, b) in
                                    param_grads.blocks[*p].iter_mut().zip(&r.grad_kernel)
                                {
                                    *a += b;
                                }
                                for (a, b) in
                                    param_grads.blocks[p + 1].iter_mut().zip(&r.grad_bias)
                                {
                                    *a += b;
                                }
                                skip_grads.push(r.grad_in);
                            }
                            res_grad_stack.push(skip_grads);
                        }
                        (None, None) => {
                            res_grad_stack.push(grads.clone());
                        }
                        _ => {
                            return Err(NetError::Shape(
                                "residual tape does not match the plan".into(),
                            ))
                        }
                    }
                }
                (Op::ResBegin, Record::ResBegin) => {
                    let skip_grads = res_grad_stack
                        .pop()
                        .ok_or_else(|| NetError::Shape("unbalanced residual stack".into()))?;
                    for (g, s) in grads.iter_mut().zip(&skip_grads) {
                        for (a, b) in g.as_mut_slice().iter_mut().zip(s.as_slice()) {
                            *a += b;
                        }
                    }
                }
                _ => {
                    return Err(NetError::Shape(
                        "tape record does not match the plan op".into(),
                    ))
                }
            }
        }
        Ok(param_grads)
    }
}
