//! Layer kernels: forward passes and their exact analytic backward passes.
//!
//! Nothing here mixes information across the correspondence axis except the
//! normalizations (whose statistics are permutation-invariant) and the
//! grouping gather (whose graph is re-mined per scene), which is what keeps
//! the whole network equivariant to the order of correspondences.

use crate::compat::NeighborGraph;

use super::tensor::FeatureMap;
use super::NetError;

/// Epsilon inside every normalization denominator.
pub const NORM_EPS: f64 = 1e-5;

#[inline]
fn axpy(acc: &mut [f64], scale: f64, x: &[f64]) {
    for (a, v) in acc.iter_mut().zip(x) {
        *a += scale * v;
    }
}

/// A convolution kernel over the neighbor axis: weights laid out as
/// `[out_c][width][in_c]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvKernel {
    pub out_c: usize,
    pub in_c: usize,
    pub width: usize,
    pub weights: Vec<f64>,
}

impl ConvKernel {
    pub fn new(out_c: usize, in_c: usize, width: usize, weights: Vec<f64>) -> Result<Self, NetError> {
        if weights.len() != out_c * in_c * width {
            return Err(NetError::Shape(format!(
                "kernel has {} weights, expected {out_c}×{width}×{in_c}",
                weights.len()
            )));
        }
        Ok(ConvKernel {
            out_c,
            in_c,
            width,
            weights,
        })
    }
}

/// Whether a convolution preserves the neighbor width with symmetric zero
/// padding or consumes it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Padding {
    Same,
    Valid,
}

/// Convolution over the neighbor axis: per correspondence and output
/// channel, a weighted sum over a width-`d` window and all input channels
/// plus a bias. Never mixes across the correspondence axis.
pub fn conv_over_width(
    input: &FeatureMap,
    kernel: &ConvKernel,
    bias: &[f64],
    padding: Padding,
) -> Result<FeatureMap, NetError> {
    if kernel.in_c != input.c() {
        return Err(NetError::Shape(format!(
            "kernel expects {} input channels, feature map has {}",
            kernel.in_c,
            input.c()
        )));
    }
    if bias.len() != kernel.out_c {
        return Err(NetError::Shape(format!(
            "bias length {} != {} output channels",
            bias.len(),
            kernel.out_c
        )));
    }
    if kernel.width > input.w() {
        return Err(NetError::Shape(format!(
            "kernel width {} exceeds input width {}",
            kernel.width,
            input.w()
        )));
    }
    Ok(conv_forward(input, kernel, bias, padding))
}

fn conv_geometry(w_in: usize, width: usize, padding: Padding) -> (usize, usize) {
    match padding {
        Padding::Same => (w_in, (width - 1) / 2),
        Padding::Valid => (w_in - width + 1, 0),
    }
}

/// C[m×n] += A[m×k] · B[k×n] with explicit strides (row, col) per operand.
#[allow(clippy::too_many_arguments)]
fn gemm_acc(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    rsa: isize,
    csa: isize,
    b: &[f64],
    rsb: isize,
    csb: isize,
    beta: f64,
    c: &mut [f64],
    rsc: isize,
    csc: isize,
) {
    if m == 0 || n == 0 {
        return;
    }
    // In-bounds by construction: every stride/extent pair is derived from
    // the owning slice's layout.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            rsc,
            csc,
        );
    }
}

/// Unrolls the conv input into an (n·w_out) × (width·in_c) matrix so the
/// whole convolution becomes one matrix product.
fn im2col(input: &FeatureMap, width: usize, pad: usize, w_out: usize) -> Vec<f64> {
    let (n, w_in, in_c) = (input.n(), input.w(), input.c());
    let row_len = width * in_c;
    let mut cols = vec![0.0; n * w_out * row_len];
    for i in 0..n {
        for xo in 0..w_out {
            let row = &mut cols[(i * w_out + xo) * row_len..][..row_len];
            for dx in 0..width {
                let xi = (xo + dx) as isize - pad as isize;
                if xi < 0 || xi >= w_in as isize {
                    continue;
                }
                row[dx * in_c..][..in_c].copy_from_slice(input.slot(i, xi as usize));
            }
        }
    }
    cols
}

fn col2im(cols: &[f64], n: usize, w_in: usize, in_c: usize, width: usize, pad: usize, w_out: usize) -> FeatureMap {
    let row_len = width * in_c;
    let mut out = FeatureMap::zeros(n, w_in, in_c);
    for i in 0..n {
        for xo in 0..w_out {
            let row = &cols[(i * w_out + xo) * row_len..][..row_len];
            for dx in 0..width {
                let xi = (xo + dx) as isize - pad as isize;
                if xi < 0 || xi >= w_in as isize {
                    continue;
                }
                axpy(out.slot_mut(i, xi as usize), 1.0, &row[dx * in_c..][..in_c]);
            }
        }
    }
    out
}

/// The kernel is trivial (width 1) or the map is a single padded column:
/// either way only the center tap is live and the input doubles as its own
/// column matrix.
fn center_tap_only(input: &FeatureMap, width: usize, pad: usize, w_out: usize) -> bool {
    width == 1 || (input.w() == 1 && w_out == 1 && pad < width)
}

pub(crate) fn conv_forward(
    input: &FeatureMap,
    kernel: &ConvKernel,
    bias: &[f64],
    padding: Padding,
) -> FeatureMap {
    let (n, in_c) = (input.n(), input.c());
    let (out_c, width) = (kernel.out_c, kernel.width);
    let (w_out, pad) = conv_geometry(input.w(), width, padding);
    let rows = n * w_out;
    let mut out = FeatureMap::zeros(n, w_out, out_c);
    for r in 0..rows {
        out.as_mut_slice()[r * out_c..][..out_c].copy_from_slice(bias);
    }
    if center_tap_only(input, width, pad, w_out) {
        // out += X · W_centerᵀ; W rows are strided by width·in_c.
        gemm_acc(
            rows,
            in_c,
            out_c,
            input.as_slice(),
            in_c as isize,
            1,
            &kernel.weights[pad * in_c..],
            1,
            (width * in_c) as isize,
            1.0,
            out.as_mut_slice(),
            out_c as isize,
            1,
        );
    } else {
        let cols = im2col(input, width, pad, w_out);
        let row_len = width * in_c;
        gemm_acc(
            rows,
            row_len,
            out_c,
            &cols,
            row_len as isize,
            1,
            &kernel.weights,
            1,
            row_len as isize,
            1.0,
            out.as_mut_slice(),
            out_c as isize,
            1,
        );
    }
    out
}

pub(crate) struct ConvGrads {
    pub grad_in: FeatureMap,
    pub grad_kernel: Vec<f64>,
    pub grad_bias: Vec<f64>,
}

pub(crate) fn conv_backward(
    input: &FeatureMap,
    kernel: &ConvKernel,
    padding: Padding,
    grad_out: &FeatureMap,
) -> ConvGrads {
    let (n, w_in, in_c) = (input.n(), input.w(), input.c());
    let (out_c, width) = (kernel.out_c, kernel.width);
    let (w_out, pad) = conv_geometry(w_in, width, padding);
    let rows = n * w_out;
    let row_len = width * in_c;
    let mut grad_kernel = vec![0.0; kernel.weights.len()];
    let mut grad_bias = vec![0.0; out_c];
    for r in 0..rows {
        let dy = &grad_out.as_slice()[r * out_c..][..out_c];
        axpy(&mut grad_bias, 1.0, dy);
    }

    if center_tap_only(input, width, pad, w_out) {
        // dK_center = Xᵀ · dY, written into the strided center-tap plane.
        gemm_acc(
            in_c,
            rows,
            out_c,
            input.as_slice(),
            1,
            in_c as isize,
            grad_out.as_slice(),
            out_c as isize,
            1,
            0.0,
            &mut grad_kernel[pad * in_c..],
            1,
            (width * in_c) as isize,
        );
        // dX = dY · W_center.
        let mut grad_in = FeatureMap::zeros(n, w_in, in_c);
        gemm_acc(
            rows,
            out_c,
            in_c,
            grad_out.as_slice(),
            out_c as isize,
            1,
            &kernel.weights[pad * in_c..],
            (width * in_c) as isize,
            1,
            0.0,
            grad_in.as_mut_slice(),
            in_c as isize,
            1,
        );
        ConvGrads {
            grad_in,
            grad_kernel,
            grad_bias,
        }
    } else {
        let cols = im2col(input, width, pad, w_out);
        // dK = colsᵀ · dY, laid out [(dx,ic)][oc] then transposed by strides
        // into the [oc][dx][ic] kernel layout.
        gemm_acc(
            row_len,
            rows,
            out_c,
            &cols,
            1,
            row_len as isize,
            grad_out.as_slice(),
            out_c as isize,
            1,
            0.0,
            &mut grad_kernel,
            1,
            row_len as isize,
        );
        // dCols = dY · W, then fold the columns back onto the input.
        let mut dcols = vec![0.0; rows * row_len];
        gemm_acc(
            rows,
            out_c,
            row_len,
            grad_out.as_slice(),
            out_c as isize,
            1,
            &kernel.weights,
            row_len as isize,
            1,
            0.0,
            &mut dcols,
            row_len as isize,
            1,
        );
        let grad_in = col2im(&dcols, n, w_in, in_c, width, pad, w_out);
        ConvGrads {
            grad_in,
            grad_kernel,
            grad_bias,
        }
    }
}

pub(crate) struct NormCache {
    pub xhat: FeatureMap,
    pub inv_std: Vec<f64>,
}

/// Per-channel normalization over the (N, W) axes of one scene, followed by
/// the learned scale/shift.
pub fn instance_norm(
    input: &FeatureMap,
    gamma: &[f64],
    beta: &[f64],
) -> Result<FeatureMap, NetError> {
    if gamma.len() != input.c() || beta.len() != input.c() {
        return Err(NetError::Shape(format!(
            "scale/shift length {}/{} != {} channels",
            gamma.len(),
            beta.len(),
            input.c()
        )));
    }
    Ok(instance_norm_forward(input, gamma, beta).0)
}

pub(crate) fn instance_norm_forward(
    input: &FeatureMap,
    gamma: &[f64],
    beta: &[f64],
) -> (FeatureMap, NormCache) {
    let c = input.c();
    let m = (input.n() * input.w()) as f64;
    let mut sum = vec![0.0; c];
    let mut sumsq = vec![0.0; c];
    for i in 0..input.n() {
        for x in 0..input.w() {
            let slot = input.slot(i, x);
            for ch in 0..c {
                sum[ch] += slot[ch];
                sumsq[ch] += slot[ch] * slot[ch];
            }
        }
    }
    let mean: Vec<f64> = sum.iter().map(|s| s / m).collect();
    let inv_std: Vec<f64> = sumsq
        .iter()
        .zip(&mean)
        .map(|(sq, mu)| {
            let var = (sq / m - mu * mu).max(0.0);
            1.0 / (var + NORM_EPS).sqrt()
        })
        .collect();

    let mut xhat = FeatureMap::zeros(input.n(), input.w(), c);
    let mut out = FeatureMap::zeros(input.n(), input.w(), c);
    for i in 0..input.n() {
        for x in 0..input.w() {
            let slot = input.slot(i, x);
            let xh = xhat.slot_mut(i, x);
            for ch in 0..c {
                xh[ch] = (slot[ch] - mean[ch]) * inv_std[ch];
            }
            let o = out.slot_mut(i, x);
            for ch in 0..c {
                o[ch] = gamma[ch] * xh[ch] + beta[ch];
            }
        }
    }
    (out, NormCache { xhat, inv_std })
}

pub(crate) struct NormGrads {
    pub grad_in: FeatureMap,
    pub grad_gamma: Vec<f64>,
    pub grad_beta: Vec<f64>,
}

pub(crate) fn instance_norm_backward(
    cache: &NormCache,
    gamma: &[f64],
    grad_out: &FeatureMap,
) -> NormGrads {
    let c = grad_out.c();
    let m = (grad_out.n() * grad_out.w()) as f64;
    let mut grad_gamma = vec![0.0; c];
    let mut grad_beta = vec![0.0; c];
    let mut sum_dxhat = vec![0.0; c];
    let mut sum_dxhat_xhat = vec![0.0; c];
    for i in 0..grad_out.n() {
        for x in 0..grad_out.w() {
            let g = grad_out.slot(i, x);
            let xh = cache.xhat.slot(i, x);
            for ch in 0..c {
                grad_gamma[ch] += g[ch] * xh[ch];
                grad_beta[ch] += g[ch];
                let dxhat = g[ch] * gamma[ch];
                sum_dxhat[ch] += dxhat;
                sum_dxhat_xhat[ch] += dxhat * xh[ch];
            }
        }
    }
    let mut grad_in = FeatureMap::zeros(grad_out.n(), grad_out.w(), c);
    for i in 0..grad_out.n() {
        for x in 0..grad_out.w() {
            let g = grad_out.slot(i, x);
            let xh = cache.xhat.slot(i, x);
            let gi = grad_in.slot_mut(i, x);
            for ch in 0..c {
                let dxhat = g[ch] * gamma[ch];
                gi[ch] = cache.inv_std[ch]
                    * (dxhat - sum_dxhat[ch] / m - xh[ch] * sum_dxhat_xhat[ch] / m);
            }
        }
    }
    NormGrads {
        grad_in,
        grad_gamma,
        grad_beta,
    }
}

/// Batch statistics shared by every scene in a batch.
pub(crate) struct BatchNormCache {
    pub xhat: Vec<FeatureMap>,
    pub inv_std: Vec<f64>,
    pub batch_mean: Vec<f64>,
    pub batch_var: Vec<f64>,
    pub m: f64,
}

/// Training-mode batch norm across all scenes of a batch; returns the
/// normalized maps and the statistics needed for backward and for the
/// running-buffer update.
pub(crate) fn batch_norm_forward_train(
    inputs: &[FeatureMap],
    gamma: &[f64],
    beta: &[f64],
) -> (Vec<FeatureMap>, BatchNormCache) {
    let c = inputs[0].c();
    let mut sum = vec![0.0; c];
    let mut sumsq = vec![0.0; c];
    let mut m = 0.0f64;
    for map in inputs {
        m += (map.n() * map.w()) as f64;
        for i in 0..map.n() {
            for x in 0..map.w() {
                let slot = map.slot(i, x);
                for ch in 0..c {
                    sum[ch] += slot[ch];
                    sumsq[ch] += slot[ch] * slot[ch];
                }
            }
        }
    }
    let mean: Vec<f64> = sum.iter().map(|s| s / m).collect();
    let var: Vec<f64> = sumsq
        .iter()
        .zip(&mean)
        .map(|(sq, mu)| (sq / m - mu * mu).max(0.0))
        .collect();
    let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + NORM_EPS).sqrt()).collect();

    let mut outs = Vec::with_capacity(inputs.len());
    let mut xhats = Vec::with_capacity(inputs.len());
    for map in inputs {
        let mut xhat = FeatureMap::zeros(map.n(), map.w(), c);
        let mut out = FeatureMap::zeros(map.n(), map.w(), c);
        for i in 0..map.n() {
            for x in 0..map.w() {
                let slot = map.slot(i, x);
                let xh = xhat.slot_mut(i, x);
                for ch in 0..c {
                    xh[ch] = (slot[ch] - mean[ch]) * inv_std[ch];
                }
                let o = out.slot_mut(i, x);
                for ch in 0..c {
                    o[ch] = gamma[ch] * xh[ch] + beta[ch];
                }
            }
        }
        outs.push(out);
        xhats.push(xhat);
    }
    (
        outs,
        BatchNormCache {
            xhat: xhats,
            inv_std,
            batch_mean: mean,
            batch_var: var,
            m,
        },
    )
}

/// Inference-mode batch norm using frozen running statistics.
pub(crate) fn batch_norm_forward_eval(
    input: &FeatureMap,
    gamma: &[f64],
    beta: &[f64],
    running_mean: &[f64],
    running_var: &[f64],
) -> FeatureMap {
    let c = input.c();
    let inv_std: Vec<f64> = running_var
        .iter()
        .map(|v| 1.0 / (v + NORM_EPS).sqrt())
        .collect();
    let mut out = FeatureMap::zeros(input.n(), input.w(), c);
    for i in 0..input.n() {
        for x in 0..input.w() {
            let slot = input.slot(i, x);
            let o = out.slot_mut(i, x);
            for ch in 0..c {
                o[ch] = gamma[ch] * (slot[ch] - running_mean[ch]) * inv_std[ch] + beta[ch];
            }
        }
    }
    out
}

pub(crate) fn batch_norm_backward(
    cache: &BatchNormCache,
    gamma: &[f64],
    grad_outs: &[FeatureMap],
) -> (Vec<FeatureMap>, Vec<f64>, Vec<f64>) {
    let c = gamma.len();
    let m = cache.m;
    let mut grad_gamma = vec![0.0; c];
    let mut grad_beta = vec![0.0; c];
    let mut sum_dxhat = vec![0.0; c];
    let mut sum_dxhat_xhat = vec![0.0; c];
    for (g_map, xh_map) in grad_outs.iter().zip(&cache.xhat) {
        for i in 0..g_map.n() {
            for x in 0..g_map.w() {
                let g = g_map.slot(i, x);
                let xh = xh_map.slot(i, x);
                for ch in 0..c {
                    grad_gamma[ch] += g[ch] * xh[ch];
                    grad_beta[ch] += g[ch];
                    let dxhat = g[ch] * gamma[ch];
                    sum_dxhat[ch] += dxhat;
                    sum_dxhat_xhat[ch] += dxhat * xh[ch];
                }
            }
        }
    }
    let mut grad_ins = Vec::with_capacity(grad_outs.len());
    for (g_map, xh_map) in grad_outs.iter().zip(&cache.xhat) {
        let mut grad_in = FeatureMap::zeros(g_map.n(), g_map.w(), c);
        for i in 0..g_map.n() {
            for x in 0..g_map.w() {
                let g = g_map.slot(i, x);
                let xh = xh_map.slot(i, x);
                let gi = grad_in.slot_mut(i, x);
                for ch in 0..c {
                    let dxhat = g[ch] * gamma[ch];
                    gi[ch] = cache.inv_std[ch]
                        * (dxhat - sum_dxhat[ch] / m - xh[ch] * sum_dxhat_xhat[ch] / m);
                }
            }
        }
        grad_ins.push(grad_in);
    }
    (grad_ins, grad_gamma, grad_beta)
}

pub(crate) fn relu_forward(input: &FeatureMap) -> FeatureMap {
    let mut out = input.clone();
    for v in out.as_mut_slice() {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
    out
}

pub(crate) fn relu_backward(input: &FeatureMap, grad_out: &FeatureMap) -> FeatureMap {
    let mut grad_in = grad_out.clone();
    for (g, &x) in grad_in.as_mut_slice().iter_mut().zip(input.as_slice()) {
        if x <= 0.0 {
            *g = 0.0;
        }
    }
    grad_in
}

/// Gathers each correspondence's graph-neighbor features into a width-k row,
/// in graph order (query first when the graph stores it, then by descending
/// score).
pub fn group_features(
    features: &FeatureMap,
    graph: &NeighborGraph,
) -> Result<FeatureMap, NetError> {
    if features.w() != 1 {
        return Err(NetError::Shape(format!(
            "grouping expects width-1 features, got width {}",
            features.w()
        )));
    }
    if graph.n() != features.n() {
        return Err(NetError::Shape(format!(
            "graph over {} nodes, features over {}",
            graph.n(),
            features.n()
        )));
    }
    let (n, c, k) = (features.n(), features.c(), graph.k());
    let mut out = FeatureMap::zeros(n, k, c);
    for i in 0..n {
        for (slot, &j) in graph.neighbors(i).iter().enumerate() {
            if j >= n {
                return Err(NetError::Shape(format!(
                    "graph index {j} out of range for {n} correspondences"
                )));
            }
            out.slot_mut(i, slot).copy_from_slice(features.slot(j, 0));
        }
    }
    Ok(out)
}

pub(crate) fn group_backward(
    graph: &NeighborGraph,
    n: usize,
    c: usize,
    grad_out: &FeatureMap,
) -> FeatureMap {
    let mut grad_in = FeatureMap::zeros(n, 1, c);
    for i in 0..n {
        for (slot, &j) in graph.neighbors(i).iter().enumerate() {
            let g = grad_out.slot(i, slot);
            axpy(grad_in.slot_mut(j, 0), 1.0, g);
        }
    }
    grad_in
}

pub(crate) struct PoolCache {
    /// For each output element, the input width index its value came from.
    pub argmax: Vec<u32>,
    pub in_w: usize,
}

/// Max over adjacent width pairs (ceil(w/2) outputs); identity at width 1.
pub(crate) fn halve_width_max(input: &FeatureMap) -> (FeatureMap, PoolCache) {
    let (n, w, c) = (input.n(), input.w(), input.c());
    let w_out = w.div_ceil(2);
    let mut out = FeatureMap::zeros(n, w_out, c);
    let mut argmax = vec![0u32; n * w_out * c];
    for i in 0..n {
        for xo in 0..w_out {
            let x0 = 2 * xo;
            let first = input.slot(i, x0);
            let o = out.slot_mut(i, xo);
            o.copy_from_slice(first);
            let base = (i * w_out + xo) * c;
            for ch in 0..c {
                argmax[base + ch] = x0 as u32;
            }
            if x0 + 1 < w {
                let second = input.slot(i, x0 + 1);
                for ch in 0..c {
                    if second[ch] > o[ch] {
                        o[ch] = second[ch];
                        argmax[base + ch] = (x0 + 1) as u32;
                    }
                }
            }
        }
    }
    (out, PoolCache { argmax, in_w: w })
}

/// Max over the whole width (one output); identity at width 1.
pub(crate) fn collapse_width_max(input: &FeatureMap) -> (FeatureMap, PoolCache) {
    let (n, w, c) = (input.n(), input.w(), input.c());
    let mut out = FeatureMap::zeros(n, 1, c);
    let mut argmax = vec![0u32; n * c];
    for i in 0..n {
        let o = out.slot_mut(i, 0);
        o.copy_from_slice(input.slot(i, 0));
        for x in 1..w {
            let slot = input.slot(i, x);
            for ch in 0..c {
                if slot[ch] > o[ch] {
                    o[ch] = slot[ch];
                    argmax[i * c + ch] = x as u32;
                }
            }
        }
    }
    (out, PoolCache { argmax, in_w: w })
}

pub(crate) fn pool_backward(cache: &PoolCache, n: usize, c: usize, grad_out: &FeatureMap) -> FeatureMap {
    let mut grad_in = FeatureMap::zeros(n, cache.in_w, c);
    let w_out = grad_out.w();
    for i in 0..n {
        for xo in 0..w_out {
            let g = grad_out.slot(i, xo);
            let base = (i * w_out + xo) * c;
            for ch in 0..c {
                let xi = cache.argmax[base + ch] as usize;
                *grad_in
                    .slot_mut(i, xi)
                    .get_mut(ch)
                    .expect("channel in range") += g[ch];
            }
        }
    }
    grad_in
}
