//! Gradient-style backward passes: plain backpropagation, guided
//! backpropagation and DeconvNet. They share one traversal and differ only in
//! the gate applied at ReLU sites.
//!
//! The walk is seeded at the pre-softmax score of the explained class. Dense
//! layers back-propagate through `Wᵀ`, convolutions through the flipped-filter
//! transpose without any bias term, and max-pooling routes each value to its
//! recorded argmax.

use crate::error::{shape_mismatch, Result};
use crate::fbi::check_class;
use crate::model::{Activation, ActivationTrace, LayerKind, Model};
use crate::ops::{self, Switches};
use crate::saliency::{BackwardStep, Method, ReluRule, SaliencyMap, UnpoolRule};
use crate::tensor::{Shape, Tensor};

/// Whether a ReLU site passes the backward signal `g` given forward pre-activation `z`.
pub fn relu_gate(rule: ReluRule, z: f32, g: f32) -> bool {
    match rule {
        ReluRule::Plain => z > 0.0,
        ReluRule::Deconvnet => g > 0.0,
        ReluRule::Guided => z > 0.0 && g > 0.0,
    }
}

fn apply_gate(rule: ReluRule, z: &Tensor, g: &Tensor) -> Result<Tensor> {
    if z.shape() != g.shape() {
        return Err(shape_mismatch("relu backward", z.dims(), g.dims()));
    }
    let data = z
        .data()
        .iter()
        .zip(g.data())
        .map(|(&zv, &gv)| if relu_gate(rule, zv, gv) { gv } else { 0.0 })
        .collect();
    Ok(Tensor::from_parts(g.shape().clone(), data))
}

/// Sends each pooled backward value to the input position that won its window.
/// Overlapping windows that share a winner accumulate in pooled row-major order.
pub fn unpool_switches(pooled_backward: &Tensor, switches: &Switches, input_shape: &Shape) -> Result<Tensor> {
    if pooled_backward.shape() != &switches.shape {
        return Err(shape_mismatch(
            "unpool_switches",
            switches.shape.dims(),
            pooled_backward.dims(),
        ));
    }
    let (c, h, w) = input_shape
        .chw()
        .ok_or_else(|| shape_mismatch("unpool_switches", &[c_of(&switches.shape), 0, 0], input_shape.dims()))?;
    let per_channel = switches.shape.numel() / c;
    let mut out = vec![0.0f32; c * h * w];
    for (i, (&g, &idx)) in pooled_backward.data().iter().zip(&switches.indices).enumerate() {
        let ch = i / per_channel;
        out[ch * h * w + idx] += g;
    }
    Ok(Tensor::from_parts(input_shape.clone(), out))
}

fn c_of(s: &Shape) -> usize {
    s.dims()[0]
}

/// Full traversal from an arbitrary seed at the final layer's pre-activation.
///
/// `hook(l, signal)` runs after the backward step of layer `l` and may edit
/// the signal before it moves further down.
pub fn backward_pass_with(
    model: &Model,
    trace: &ActivationTrace,
    seed: &[f32],
    rule: ReluRule,
    mut hook: impl FnMut(usize, &mut Tensor),
) -> Result<(Tensor, Vec<BackwardStep>)> {
    let arch = model.arch();
    trace.check_against(arch)?;
    let last = arch.layers().len() - 1;
    let out_shape = arch.output_shape(last);
    if seed.len() != out_shape.numel() {
        return Err(shape_mismatch("backward seed", out_shape.dims(), &[seed.len()]));
    }
    let mut signal = Tensor::from_parts(out_shape.clone(), seed.to_vec());
    let mut log = Vec::new();

    for (l, spec) in arch.layers().iter().enumerate().rev() {
        if l != last && spec.activation == Activation::Relu {
            signal = apply_gate(rule, &trace.layers[l].z, &signal)?;
            log.push(BackwardStep::Relu { layer: l, rule });
        }
        let in_shape = arch.input_shape_of(l);
        match spec.kind {
            LayerKind::Dense { inputs, .. } => {
                let (w, _) = model.params(l);
                let mut back = vec![0.0f32; inputs];
                for (row, &g) in w.data().chunks_exact(inputs).zip(signal.data()) {
                    for (acc, &wv) in back.iter_mut().zip(row) {
                        *acc += wv * g;
                    }
                }
                signal = Tensor::from_parts(in_shape.clone(), back);
                log.push(BackwardStep::DenseTranspose {
                    layer: l,
                    subtract_bias: false,
                });
            }
            LayerKind::Conv2d { geometry, .. } => {
                let (w, _) = model.params(l);
                signal = ops::conv2d_transpose_flipped(&signal, w, &geometry, in_shape)?;
                log.push(BackwardStep::ConvTranspose {
                    layer: l,
                    subtract_bias: false,
                });
            }
            LayerKind::MaxPool { .. } => {
                let switches = trace.layers[l]
                    .switches
                    .as_ref()
                    .expect("checked trace records switches for pooling layers");
                signal = unpool_switches(&signal, switches, in_shape)?;
                log.push(BackwardStep::Unpool {
                    layer: l,
                    rule: UnpoolRule::Switches,
                });
            }
            LayerKind::Flatten => {
                signal = signal.reshape(in_shape.clone())?;
                log.push(BackwardStep::Reshape { layer: l });
            }
        }
        hook(l, &mut signal);
    }
    Ok((signal, log))
}

/// Backward pass seeded with the one-hot score of `class`.
pub fn backward_pass(model: &Model, trace: &ActivationTrace, class: usize, rule: ReluRule) -> Result<SaliencyMap> {
    backward_pass_logged(model, trace, class, rule).map(|(s, _)| s)
}

pub fn backward_pass_logged(
    model: &Model,
    trace: &ActivationTrace,
    class: usize,
    rule: ReluRule,
) -> Result<(SaliencyMap, Vec<BackwardStep>)> {
    check_class(model, class)?;
    let mut seed = vec![0.0f32; model.arch().num_classes()];
    seed[class] = 1.0;
    let (values, steps) = backward_pass_with(model, trace, &seed, rule, |_, _| {})?;
    let mut log = vec![BackwardStep::OneHotSeed { class }];
    log.extend(steps);
    let method = match rule {
        ReluRule::Plain => Method::Gradient,
        ReluRule::Guided => Method::Guided,
        ReluRule::Deconvnet => Method::Deconvnet,
    };
    Ok((SaliencyMap::new(values, method, class), log))
}

pub fn explain_guided(model: &Model, trace: &ActivationTrace, class: usize) -> Result<SaliencyMap> {
    backward_pass(model, trace, class, ReluRule::Guided)
}

pub fn explain_deconvnet(model: &Model, trace: &ActivationTrace, class: usize) -> Result<SaliencyMap> {
    backward_pass(model, trace, class, ReluRule::Deconvnet)
}
