use crate::error::{shape_mismatch, Error, Result};
use crate::model::arch::{Activation, Architecture, LayerKind};
use crate::model::weights::WeightArchive;
use crate::ops::{self, Switches};
use crate::tensor::{Shape, Tensor};

/// Checks that every weighted layer has `<name>.weight` and `<name>.bias`
/// entries of exactly the expected shapes.
pub fn validate(arch: &Architecture, weights: &WeightArchive) -> Result<()> {
    for layer in arch.layers() {
        let Some((wdims, bdims)) = layer.parameter_dims() else {
            continue;
        };
        for (key, expected) in [(layer.weight_key(), wdims), (layer.bias_key(), bdims)] {
            let t = weights.get(&key).ok_or_else(|| Error::MissingEntry {
                layer: layer.name.clone(),
                entry: key.clone(),
            })?;
            if t.dims() != expected.as_slice() {
                return Err(Error::WeightShape {
                    layer: layer.name.clone(),
                    entry: key,
                    expected: expected.as_slice().into(),
                    actual: t.dims().into(),
                });
            }
        }
    }
    Ok(())
}

/// An architecture paired with weights that passed [`validate`].
#[derive(Debug, Clone)]
pub struct Model {
    arch: Architecture,
    weights: WeightArchive,
}

impl Model {
    pub fn new(arch: Architecture, weights: WeightArchive) -> Result<Self> {
        validate(&arch, &weights)?;
        Ok(Model { arch, weights })
    }

    pub fn arch(&self) -> &Architecture {
        &self.arch
    }

    pub fn weights(&self) -> &WeightArchive {
        &self.weights
    }

    /// Weight tensor and bias vector of layer `l`. Panics on weight-free layers.
    pub fn params(&self, l: usize) -> (&Tensor, &[f32]) {
        let layer = &self.arch.layers()[l];
        let w = self
            .weights
            .get(&layer.weight_key())
            .expect("validated model has weights for every weighted layer");
        let b = self
            .weights
            .get(&layer.bias_key())
            .expect("validated model has biases for every weighted layer");
        (w, b.data())
    }
}

/// Forward intermediates of one layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerTrace {
    /// Pre-activation output.
    pub z: Tensor,
    /// Post-activation output; equals `z` for layers without activation.
    pub a: Tensor,
    /// Argmax positions, for max-pooling layers only.
    pub switches: Option<Switches>,
}

/// Everything computed by one forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationTrace {
    pub input: Tensor,
    pub layers: Vec<LayerTrace>,
}

impl ActivationTrace {
    /// The tensor entering layer `l`; for a pooling layer this is its pool input.
    pub fn layer_input(&self, l: usize) -> &Tensor {
        if l == 0 {
            &self.input
        } else {
            &self.layers[l - 1].a
        }
    }

    /// Pre-softmax scores of the final layer.
    pub fn logits(&self) -> &[f32] {
        self.layers.last().map_or(&[], |t| t.z.data())
    }

    /// Softmax output.
    pub fn probabilities(&self) -> &[f32] {
        self.layers.last().map_or(&[], |t| t.a.data())
    }

    /// Confirms the trace has one record per layer with the static shapes of `arch`.
    pub fn check_against(&self, arch: &Architecture) -> Result<()> {
        if self.input.shape() != arch.input_shape() {
            return Err(Error::TraceMismatch(format!(
                "input shape {} vs architecture {}",
                self.input.shape(),
                arch.input_shape()
            )));
        }
        if self.layers.len() != arch.layers().len() {
            return Err(Error::TraceMismatch(format!(
                "{} layer records for {} layers",
                self.layers.len(),
                arch.layers().len()
            )));
        }
        for (l, (rec, spec)) in self.layers.iter().zip(arch.layers()).enumerate() {
            let want = arch.output_shape(l);
            if rec.z.shape() != want || rec.a.shape() != want {
                return Err(Error::TraceMismatch(format!(
                    "layer `{}` recorded {} but architecture expects {}",
                    spec.name,
                    rec.z.shape(),
                    want
                )));
            }
            let is_pool = matches!(spec.kind, LayerKind::MaxPool { .. });
            if is_pool != rec.switches.is_some() {
                return Err(Error::TraceMismatch(format!(
                    "layer `{}` switch record does not match its kind",
                    spec.name
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub probabilities: Vec<f32>,
    /// Argmax of `probabilities`, lowest index on ties.
    pub top_class: usize,
}

impl Prediction {
    pub fn from_probabilities(probabilities: Vec<f32>) -> Self {
        let top_class = argmax(&probabilities);
        Prediction {
            probabilities,
            top_class,
        }
    }

    /// Class indices ordered by descending probability, ties by index.
    pub fn ranked(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.probabilities.len()).collect();
        idx.sort_by(|&a, &b| {
            self.probabilities[b]
                .total_cmp(&self.probabilities[a])
                .then(a.cmp(&b))
        });
        idx
    }
}

fn argmax(v: &[f32]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

fn activate(z: &Tensor, activation: Activation) -> Result<Tensor> {
    Ok(match activation {
        Activation::None => z.clone(),
        Activation::Relu => ops::relu(z),
        Activation::Softmax => Tensor::from_parts(z.shape().clone(), ops::softmax(z.data())?),
    })
}

/// Runs the model on one `[C, H, W]` input, recording every intermediate.
pub fn forward_trace(model: &Model, input: &Tensor) -> Result<(ActivationTrace, Prediction)> {
    let arch = model.arch();
    if input.shape() != arch.input_shape() {
        return Err(shape_mismatch(
            "forward_trace input",
            arch.input_shape().dims(),
            input.dims(),
        ));
    }
    let mut layers: Vec<LayerTrace> = Vec::with_capacity(arch.layers().len());
    for (l, spec) in arch.layers().iter().enumerate() {
        let x = layers.last().map_or(input, |t| &t.a);
        let mut switches = None;
        let z = match spec.kind {
            LayerKind::Conv2d { geometry, .. } => {
                let (w, b) = model.params(l);
                ops::conv2d(x, w, b, &geometry)?
            }
            LayerKind::MaxPool { geometry } => {
                let (pooled, sw) = ops::maxpool2d(x, &geometry)?;
                switches = Some(sw);
                pooled
            }
            LayerKind::Flatten => x.flatten(),
            LayerKind::Dense { outputs, .. } => {
                let (w, b) = model.params(l);
                Tensor::from_parts(Shape::new(vec![outputs])?, ops::affine(w, b, x.data())?)
            }
        };
        let a = activate(&z, spec.activation)?;
        layers.push(LayerTrace { z, a, switches });
    }
    let trace = ActivationTrace {
        input: input.clone(),
        layers,
    };
    let prediction = Prediction::from_probabilities(trace.probabilities().to_vec());
    Ok((trace, prediction))
}
