//! Forward-backward interpretability.
//!
//! The class indicator is pushed from the output back to the pixels through
//! per-layer "adjoints" (transposes after bias removal, ReLU mapped to
//! itself). After every weight adjoint, entries are kept only where their
//! product with the forward activation at the same representation exceeds
//! `tau`. At the top convolutional block only the strongest backward feature
//! maps survive, and max-pooling is undone by replicating each value across
//! its window and clipping against the forward pool input.
//!
//! Per layer the walk is: weight adjoint, then mask, then (when entering a
//! layer with a ReLU) the ReLU adjoint. Raw pixels are never masked.

use crate::error::{shape_mismatch, Error, Result};
use crate::model::{Activation, ActivationTrace, LayerKind, Model};
use crate::ops::{self, ConvGeometry, PoolGeometry};
use crate::saliency::{BackwardStep, Method, ReluRule, SaliencyMap, UnpoolRule};
use crate::tensor::{Shape, Tensor};

pub const DEFAULT_TAU: f32 = 10.0;
pub const DEFAULT_TOP_FRACTION: f32 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FbiConfig {
    tau: f32,
    top_fraction: f32,
    subtract_conv_bias: bool,
}

impl Default for FbiConfig {
    fn default() -> Self {
        FbiConfig {
            tau: DEFAULT_TAU,
            top_fraction: DEFAULT_TOP_FRACTION,
            subtract_conv_bias: true,
        }
    }
}

impl FbiConfig {
    pub fn new(tau: f32, top_fraction: f32) -> Result<Self> {
        if tau.is_nan() || tau < 0.0 {
            return Err(Error::Config(format!("tau must be >= 0, got {tau}")));
        }
        if !(top_fraction > 0.0 && top_fraction <= 1.0) {
            return Err(Error::Config(format!(
                "top fraction must be in (0, 1], got {top_fraction}"
            )));
        }
        Ok(FbiConfig {
            tau,
            top_fraction,
            subtract_conv_bias: true,
        })
    }

    /// Disables bias subtraction before the flipped-filter transpose.
    pub fn without_conv_bias(mut self) -> Self {
        self.subtract_conv_bias = false;
        self
    }

    pub fn tau(&self) -> f32 {
        self.tau
    }

    pub fn top_fraction(&self) -> f32 {
        self.top_fraction
    }

    pub fn subtract_conv_bias(&self) -> bool {
        self.subtract_conv_bias
    }
}

/// Class `c` receives `max(z)`, every other class `min(z)`.
pub fn softmax_adjoint(z: &[f32], class: usize) -> Result<Vec<f32>> {
    if class >= z.len() {
        return Err(Error::ClassOutOfRange {
            class,
            classes: z.len(),
        });
    }
    let max = z.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    let min = z.iter().copied().fold(f32::INFINITY, f32::min);
    Ok((0..z.len()).map(|i| if i == class { max } else { min }).collect())
}

pub fn relu_adjoint(backward: &Tensor) -> Tensor {
    ops::relu(backward)
}

/// `Wᵀ (ẑ - b)`, each output summed over rows in row order.
///
/// The bias is removed only where `ẑ` is nonzero: entries already cut from
/// the backward flow stay cut.
pub fn dense_adjoint(weight: &Tensor, bias: &[f32], backward: &[f32]) -> Result<Vec<f32>> {
    let (rows, cols) = match weight.dims() {
        &[r, c] => (r, c),
        d => return Err(shape_mismatch("dense_adjoint weight", &[bias.len(), 0], d)),
    };
    if rows != bias.len() || rows != backward.len() {
        return Err(shape_mismatch("dense_adjoint", &[rows], &[backward.len()]));
    }
    let mut out = vec![0.0f32; cols];
    for (row, (&g, &b)) in weight.data().chunks_exact(cols).zip(backward.iter().zip(bias)) {
        if g == 0.0 {
            continue;
        }
        let d = g - b;
        for (acc, &w) in out.iter_mut().zip(row) {
            *acc += w * d;
        }
    }
    Ok(out)
}

/// Keeps `backward[i]` where `forward[i] * backward[i] > tau`, zero elsewhere.
pub fn fb_mask(forward: &Tensor, backward: &Tensor, tau: f32) -> Result<Tensor> {
    if forward.shape() != backward.shape() {
        return Err(shape_mismatch("fb_mask", forward.dims(), backward.dims()));
    }
    let data = forward
        .data()
        .iter()
        .zip(backward.data())
        .map(|(&a, &g)| if a * g > tau { g } else { 0.0 })
        .collect();
    Ok(Tensor::from_parts(backward.shape().clone(), data))
}

pub fn flatten_adjoint(backward: &Tensor, target: &Shape) -> Result<Tensor> {
    if backward.len() != target.numel() {
        return Err(shape_mismatch("flatten_adjoint", target.dims(), backward.dims()));
    }
    backward.reshape(target.clone())
}

/// `ceil(fraction * channels)`, clamped to `1..=channels`.
///
/// Products within 1e-6 of an integer count as that integer, so an `f32`
/// fraction such as `0.1` on ten channels keeps one map, not two.
pub fn top_map_count(fraction: f32, channels: usize) -> usize {
    let x = fraction as f64 * channels as f64;
    let k = if (x - x.round()).abs() < 1e-6 {
        x.round()
    } else {
        x.ceil()
    };
    (k as usize).clamp(1, channels.max(1))
}

/// Keeps the `ceil(fraction * C)` channels with the largest plain sum, zeroing
/// the rest. Ties go to the lower channel index.
pub fn select_top_maps(backward: &Tensor, fraction: f32) -> Result<Tensor> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::Config(format!(
            "top fraction must be in (0, 1], got {fraction}"
        )));
    }
    let (c, h, w) = backward.expect_chw("select_top_maps")?;
    let plane = h * w;
    let data = backward.data();
    let totals: Vec<f32> = data
        .chunks_exact(plane)
        .map(|m| m.iter().fold(0.0f32, |acc, &v| acc + v))
        .collect();
    let mut order: Vec<usize> = (0..c).collect();
    order.sort_by(|&a, &b| totals[b].total_cmp(&totals[a]).then(a.cmp(&b)));
    let k = top_map_count(fraction, c);
    let mut keep = vec![false; c];
    for &ch in &order[..k] {
        keep[ch] = true;
    }
    let mut out = vec![0.0f32; data.len()];
    for ch in (0..c).filter(|&ch| keep[ch]) {
        out[ch * plane..(ch + 1) * plane].copy_from_slice(&data[ch * plane..(ch + 1) * plane]);
    }
    Ok(Tensor::from_parts(backward.shape().clone(), out))
}

/// Replicates every pooled backward value across its window, averaging where
/// windows overlap (positions covered by no window get 0).
///
/// Contributions are summed in row-major pooled order, then divided by the
/// number of covering windows.
pub fn replicate_mean(pooled: &Tensor, input_shape: &Shape, geom: &PoolGeometry) -> Result<Tensor> {
    let (c, h, w) = input_shape
        .chw()
        .ok_or_else(|| shape_mismatch("unpool", &[0, 0, 0], input_shape.dims()))?;
    let (oh, ow) = geom.output_extent(h, w)?;
    if pooled.dims() != [c, oh, ow] {
        return Err(shape_mismatch("unpool", &[c, oh, ow], pooled.dims()));
    }
    let (kh, kw) = geom.kernel;
    let (sh, sw) = geom.stride;
    let g = pooled.data();
    let mut sum = vec![0.0f32; c * h * w];
    let mut count = vec![0u32; h * w];
    for y in 0..oh {
        for x in 0..ow {
            for u in 0..kh {
                for v in 0..kw {
                    count[(y * sh + u) * w + x * sw + v] += 1;
                }
            }
        }
    }
    for ch in 0..c {
        let dst = &mut sum[ch * h * w..(ch + 1) * h * w];
        for y in 0..oh {
            for x in 0..ow {
                let val = g[(ch * oh + y) * ow + x];
                for u in 0..kh {
                    for v in 0..kw {
                        dst[(y * sh + u) * w + x * sw + v] += val;
                    }
                }
            }
        }
        for (s, &n) in dst.iter_mut().zip(&count) {
            if n > 0 {
                *s /= n as f32;
            }
        }
    }
    Ok(Tensor::from_parts(input_shape.clone(), sum))
}

/// Max-pool adjoint: `min(pool_input, replicated)` entrywise.
///
/// The output never exceeds the pool input. A negative pool input (only
/// possible without a ReLU in front of the pool) therefore passes through even
/// where the replicated backward value is zero.
pub fn unpool_adjoint(pool_input: &Tensor, pooled_backward: &Tensor, geom: &PoolGeometry) -> Result<Tensor> {
    let replicated = replicate_mean(pooled_backward, pool_input.shape(), geom)?;
    let data = pool_input
        .data()
        .iter()
        .zip(replicated.data())
        .map(|(&a, &r)| a.min(r))
        .collect();
    Ok(Tensor::from_parts(pool_input.shape().clone(), data))
}

/// Subtracts the per-channel bias on the nonzero entries of `backward`, then
/// applies the flipped-filter transpose.
pub fn deconv_adjoint(
    weight: &Tensor,
    bias: &[f32],
    backward: &Tensor,
    geom: &ConvGeometry,
    out_shape: &Shape,
) -> Result<Tensor> {
    let (c, h, w) = backward.expect_chw("deconv_adjoint")?;
    if bias.len() != c {
        return Err(shape_mismatch("deconv_adjoint bias", &[c], &[bias.len()]));
    }
    let plane = h * w;
    let shifted: Vec<f32> = backward
        .data()
        .iter()
        .enumerate()
        .map(|(i, &g)| if g == 0.0 { 0.0 } else { g - bias[i / plane] })
        .collect();
    let shifted = Tensor::from_parts(backward.shape().clone(), shifted);
    ops::conv2d_transpose_flipped(&shifted, weight, geom, out_shape)
}

pub(crate) fn check_class(model: &Model, class: usize) -> Result<()> {
    let classes = model.arch().num_classes();
    if class >= classes {
        return Err(Error::ClassOutOfRange { class, classes });
    }
    Ok(())
}

pub fn explain_fbi(model: &Model, trace: &ActivationTrace, class: usize, cfg: &FbiConfig) -> Result<SaliencyMap> {
    explain_fbi_logged(model, trace, class, cfg).map(|(s, _)| s)
}

/// [`explain_fbi`] that also returns the sequence of operators applied.
pub fn explain_fbi_logged(
    model: &Model,
    trace: &ActivationTrace,
    class: usize,
    cfg: &FbiConfig,
) -> Result<(SaliencyMap, Vec<BackwardStep>)> {
    let arch = model.arch();
    trace.check_against(arch)?;
    check_class(model, class)?;

    let mut log = vec![BackwardStep::SoftmaxAdjoint { class }];
    let seed = softmax_adjoint(trace.logits(), class)?;
    let mut signal = Tensor::from_parts(arch.output_shape(arch.layers().len() - 1).clone(), seed);

    // Representations up to and including the first weighted layer's input
    // are (reshaped or pooled) pixels, not activations.
    let first_weighted = arch
        .layers()
        .iter()
        .position(|s| s.parameter_dims().is_some())
        .unwrap_or(0);

    for (l, spec) in arch.layers().iter().enumerate().rev() {
        if l + 1 != arch.layers().len() && spec.activation == Activation::Relu {
            signal = relu_adjoint(&signal);
            log.push(BackwardStep::Relu {
                layer: l,
                rule: ReluRule::Deconvnet,
            });
        }
        let in_shape = arch.input_shape_of(l);
        match spec.kind {
            LayerKind::Dense { .. } => {
                let (w, b) = model.params(l);
                let back = dense_adjoint(w, b, signal.data())?;
                signal = Tensor::from_parts(in_shape.clone(), back);
                log.push(BackwardStep::DenseTranspose {
                    layer: l,
                    subtract_bias: true,
                });
            }
            LayerKind::Conv2d { geometry, .. } => {
                let (w, b) = model.params(l);
                signal = if cfg.subtract_conv_bias {
                    deconv_adjoint(w, b, &signal, &geometry, in_shape)?
                } else {
                    ops::conv2d_transpose_flipped(&signal, w, &geometry, in_shape)?
                };
                log.push(BackwardStep::ConvTranspose {
                    layer: l,
                    subtract_bias: cfg.subtract_conv_bias,
                });
            }
            LayerKind::MaxPool { geometry } => {
                signal = unpool_adjoint(trace.layer_input(l), &signal, &geometry)?;
                log.push(BackwardStep::Unpool {
                    layer: l,
                    rule: UnpoolRule::ReplicateMin,
                });
            }
            LayerKind::Flatten => {
                signal = flatten_adjoint(&signal, in_shape)?;
                log.push(BackwardStep::Reshape { layer: l });
                signal = select_top_maps(&signal, cfg.top_fraction)?;
                let total = in_shape.dims()[0];
                log.push(BackwardStep::TopMaps {
                    layer: l,
                    kept: top_map_count(cfg.top_fraction, total),
                    total,
                });
            }
        }
        let weighted = matches!(spec.kind, LayerKind::Dense { .. } | LayerKind::Conv2d { .. });
        if weighted && l > first_weighted {
            signal = fb_mask(trace.layer_input(l), &signal, cfg.tau)?;
            log.push(BackwardStep::Mask { layer: l, tau: cfg.tau });
        }
    }
    Ok((SaliencyMap::new(signal, Method::Fbi, class), log))
}
