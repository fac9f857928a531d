//! Sequential architecture description and its JSON text form.

use std::collections::HashSet;

use serde::Deserialize;

use crate::error::{Error, Result};
use crate::ops::{ConvGeometry, PoolGeometry};
use crate::tensor::Shape;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    None,
    Relu,
    Softmax,
}

#[derive(Debug, Clone, PartialEq)]
pub enum LayerKind {
    Conv2d {
        in_channels: usize,
        out_channels: usize,
        geometry: ConvGeometry,
    },
    MaxPool {
        geometry: PoolGeometry,
    },
    Flatten,
    Dense {
        inputs: usize,
        outputs: usize,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerSpec {
    pub name: String,
    pub activation: Activation,
    pub kind: LayerKind,
}

impl LayerSpec {
    pub fn conv2d(
        name: &str,
        activation: Activation,
        in_channels: usize,
        out_channels: usize,
        geometry: ConvGeometry,
    ) -> Self {
        LayerSpec {
            name: name.to_string(),
            activation,
            kind: LayerKind::Conv2d {
                in_channels,
                out_channels,
                geometry,
            },
        }
    }

    pub fn maxpool(name: &str, geometry: PoolGeometry) -> Self {
        LayerSpec {
            name: name.to_string(),
            activation: Activation::None,
            kind: LayerKind::MaxPool { geometry },
        }
    }

    pub fn flatten(name: &str) -> Self {
        LayerSpec {
            name: name.to_string(),
            activation: Activation::None,
            kind: LayerKind::Flatten,
        }
    }

    pub fn dense(name: &str, activation: Activation, inputs: usize, outputs: usize) -> Self {
        LayerSpec {
            name: name.to_string(),
            activation,
            kind: LayerKind::Dense { inputs, outputs },
        }
    }

    /// Expected `(weight, bias)` dimensions, or `None` for weight-free layers.
    pub fn parameter_dims(&self) -> Option<(Vec<usize>, Vec<usize>)> {
        match self.kind {
            LayerKind::Conv2d {
                in_channels,
                out_channels,
                geometry,
            } => Some((
                vec![out_channels, in_channels, geometry.kernel.0, geometry.kernel.1],
                vec![out_channels],
            )),
            LayerKind::Dense { inputs, outputs } => Some((vec![outputs, inputs], vec![outputs])),
            LayerKind::MaxPool { .. } | LayerKind::Flatten => None,
        }
    }

    pub fn weight_key(&self) -> String {
        format!("{}.weight", self.name)
    }

    pub fn bias_key(&self) -> String {
        format!("{}.bias", self.name)
    }
}

/// A validated layer list together with its static shape chain.
#[derive(Debug, Clone, PartialEq)]
pub struct Architecture {
    input_shape: Shape,
    layers: Vec<LayerSpec>,
    output_shapes: Vec<Shape>,
}

impl Architecture {
    pub fn new(input_shape: Shape, layers: Vec<LayerSpec>) -> Result<Self> {
        if input_shape.rank() != 3 {
            return Err(Error::Architecture {
                layer: "<input>".into(),
                message: format!("input_shape must be [C, H, W], got {input_shape}"),
            });
        }
        if layers.is_empty() {
            return Err(Error::Architecture {
                layer: "<none>".into(),
                message: "layer list is empty".into(),
            });
        }
        let mut seen = HashSet::new();
        for l in &layers {
            if !seen.insert(l.name.as_str()) {
                return Err(arch_err(l, "duplicate layer name"));
            }
        }
        let last = layers.len() - 1;
        for (i, l) in layers.iter().enumerate() {
            if l.activation == Activation::Softmax && i != last {
                return Err(arch_err(l, "softmax is only allowed on the final layer"));
            }
            if matches!(l.kind, LayerKind::MaxPool { .. } | LayerKind::Flatten)
                && l.activation != Activation::None
            {
                return Err(arch_err(l, "maxpool and flatten layers take no activation"));
            }
        }
        let final_layer = &layers[last];
        if !matches!(final_layer.kind, LayerKind::Dense { .. })
            || final_layer.activation != Activation::Softmax
        {
            return Err(arch_err(final_layer, "final layer must be dense with softmax"));
        }

        let mut output_shapes = Vec::with_capacity(layers.len());
        let mut current = input_shape.clone();
        for l in &layers {
            current = layer_output_shape(l, &current)?;
            output_shapes.push(current.clone());
        }
        Ok(Architecture {
            input_shape,
            layers,
            output_shapes,
        })
    }

    pub fn input_shape(&self) -> &Shape {
        &self.input_shape
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    /// Output shape of layer `l`.
    pub fn output_shape(&self, l: usize) -> &Shape {
        &self.output_shapes[l]
    }

    /// Shape entering layer `l` (the model input for `l == 0`).
    pub fn input_shape_of(&self, l: usize) -> &Shape {
        if l == 0 {
            &self.input_shape
        } else {
            &self.output_shapes[l - 1]
        }
    }

    pub fn num_classes(&self) -> usize {
        self.output_shapes.last().map_or(0, |s| s.numel())
    }
}

fn arch_err(l: &LayerSpec, message: &str) -> Error {
    Error::Architecture {
        layer: l.name.clone(),
        message: message.to_string(),
    }
}

fn layer_output_shape(l: &LayerSpec, input: &Shape) -> Result<Shape> {
    let need_chw = || {
        input.chw().ok_or_else(|| {
            arch_err(l, &format!("expects a [C, H, W] input, got {input}"))
        })
    };
    match l.kind {
        LayerKind::Conv2d {
            in_channels,
            out_channels,
            geometry,
        } => {
            let (c, h, w) = need_chw()?;
            if c != in_channels {
                return Err(arch_err(
                    l,
                    &format!("in_channels {in_channels} does not match incoming {c} channels"),
                ));
            }
            if out_channels == 0 {
                return Err(arch_err(l, "out_channels must be >= 1"));
            }
            let (oh, ow) = geometry
                .output_extent(h, w)
                .map_err(|e| arch_err(l, &e.to_string()))?;
            Shape::new(vec![out_channels, oh, ow])
        }
        LayerKind::MaxPool { geometry } => {
            let (c, h, w) = need_chw()?;
            let (oh, ow) = geometry
                .output_extent(h, w)
                .map_err(|e| arch_err(l, &e.to_string()))?;
            Shape::new(vec![c, oh, ow])
        }
        LayerKind::Flatten => {
            need_chw()?;
            Shape::new(vec![input.numel()])
        }
        LayerKind::Dense { inputs, outputs } => {
            if input.rank() != 1 {
                return Err(arch_err(
                    l,
                    &format!("dense layer needs a flat input, got {input} (missing flatten?)"),
                ));
            }
            if input.numel() != inputs {
                return Err(arch_err(
                    l,
                    &format!("in {inputs} does not match incoming length {}", input.numel()),
                ));
            }
            if outputs == 0 {
                return Err(arch_err(l, "out must be >= 1"));
            }
            Shape::new(vec![outputs])
        }
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawArchitecture {
    input_shape: Vec<usize>,
    layers: Vec<RawLayer>,
}

#[derive(Deserialize)]
#[serde(tag = "type", rename_all = "lowercase", deny_unknown_fields)]
enum RawLayer {
    Conv2d {
        name: String,
        #[serde(default)]
        activation: Activation,
        in_channels: usize,
        out_channels: usize,
        kernel: [usize; 2],
        #[serde(default = "unit_pair")]
        stride: [usize; 2],
        #[serde(default)]
        padding: [usize; 2],
    },
    Maxpool {
        name: String,
        #[serde(default)]
        activation: Activation,
        kernel: [usize; 2],
        stride: [usize; 2],
    },
    Flatten {
        name: String,
        #[serde(default)]
        activation: Activation,
    },
    Dense {
        name: String,
        #[serde(default)]
        activation: Activation,
        #[serde(rename = "in")]
        inputs: usize,
        #[serde(rename = "out")]
        outputs: usize,
    },
}

fn unit_pair() -> [usize; 2] {
    [1, 1]
}

impl RawLayer {
    fn into_spec(self) -> Result<LayerSpec> {
        let geom_err = |name: &str, e: Error| Error::Architecture {
            layer: name.to_string(),
            message: e.to_string(),
        };
        Ok(match self {
            RawLayer::Conv2d {
                name,
                activation,
                in_channels,
                out_channels,
                kernel,
                stride,
                padding,
            } => {
                let geometry = ConvGeometry::new(
                    (kernel[0], kernel[1]),
                    (stride[0], stride[1]),
                    (padding[0], padding[1]),
                )
                .map_err(|e| geom_err(&name, e))?;
                LayerSpec::conv2d(&name, activation, in_channels, out_channels, geometry)
            }
            RawLayer::Maxpool {
                name,
                activation,
                kernel,
                stride,
            } => {
                let geometry = PoolGeometry::new((kernel[0], kernel[1]), (stride[0], stride[1]))
                    .map_err(|e| geom_err(&name, e))?;
                LayerSpec {
                    activation,
                    ..LayerSpec::maxpool(&name, geometry)
                }
            }
            RawLayer::Flatten { name, activation } => LayerSpec {
                activation,
                ..LayerSpec::flatten(&name)
            },
            RawLayer::Dense {
                name,
                activation,
                inputs,
                outputs,
            } => LayerSpec::dense(&name, activation, inputs, outputs),
        })
    }
}

/// Parses and shape-checks an architecture document.
///
/// ```json
/// { "input_shape": [1, 8, 8],
///   "layers": [
///     {"type": "conv2d", "name": "conv1", "activation": "relu",
///      "in_channels": 1, "out_channels": 4, "kernel": [3, 3],
///      "stride": [1, 1], "padding": [1, 1]},
///     {"type": "maxpool", "name": "pool1", "kernel": [2, 2], "stride": [2, 2]},
///     {"type": "flatten", "name": "flat"},
///     {"type": "dense", "name": "fc", "activation": "softmax", "in": 64, "out": 3}
///   ] }
/// ```
///
/// `stride` defaults to `[1, 1]` and `padding` to `[0, 0]` for convolutions;
/// `activation` defaults to `none`. Unknown keys are rejected.
pub fn load_architecture(text: &[u8]) -> Result<Architecture> {
    let raw: RawArchitecture = serde_json::from_slice(text).map_err(|e| Error::ArchitectureParse {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    let input_shape = Shape::new(raw.input_shape).map_err(|e| Error::Architecture {
        layer: "<input>".into(),
        message: e.to_string(),
    })?;
    let layers = raw
        .layers
        .into_iter()
        .map(RawLayer::into_spec)
        .collect::<Result<Vec<_>>>()?;
    Architecture::new(input_shape, layers)
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
        "input_shape": [1, 4, 4],
        "layers": [
            {"type": "conv2d", "name": "conv1", "activation": "relu",
             "in_channels": 1, "out_channels": 2, "kernel": [3, 3], "padding": [1, 1]},
            {"type": "flatten", "name": "flat"},
            {"type": "dense", "name": "fc", "activation": "softmax", "in": 32, "out": 3}
        ]
    }"#;

    #[test]
    fn parses_minimal() {
        let a = load_architecture(MINIMAL.as_bytes()).unwrap();
        assert_eq!(a.layers().len(), 3);
        assert_eq!(a.output_shape(0).dims(), &[2, 4, 4]);
        assert_eq!(a.output_shape(1).dims(), &[32]);
        assert_eq!(a.num_classes(), 3);
        match a.layers()[0].kind {
            LayerKind::Conv2d { geometry, .. } => assert_eq!(geometry.stride, (1, 1)),
            _ => panic!("expected conv"),
        }
    }

    #[test]
    fn dense_before_flatten_is_shape_error() {
        let text = r#"{"input_shape": [1, 2, 2], "layers": [
            {"type": "dense", "name": "fc", "activation": "softmax", "in": 4, "out": 2}]}"#;
        match load_architecture(text.as_bytes()) {
            Err(Error::Architecture { layer, .. }) => assert_eq!(layer, "fc"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn empty_layers_rejected() {
        let text = r#"{"input_shape": [1, 2, 2], "layers": []}"#;
        assert!(matches!(
            load_architecture(text.as_bytes()),
            Err(Error::Architecture { .. })
        ));
    }

    #[test]
    fn unknown_key_reports_position() {
        let text = "{\"input_shape\": [1, 2, 2],\n \"layers\": [\n {\"type\": \"flatten\", \"name\": \"f\", \"colour\": 1}]}";
        match load_architecture(text.as_bytes()) {
            Err(Error::ArchitectureParse { line, message, .. }) => {
                assert_eq!(line, 3);
                assert!(message.contains("colour"), "{message}");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn softmax_only_last() {
        let text = r#"{"input_shape": [1, 1, 1], "layers": [
            {"type": "flatten", "name": "f"},
            {"type": "dense", "name": "a", "activation": "softmax", "in": 1, "out": 2},
            {"type": "dense", "name": "b", "activation": "softmax", "in": 2, "out": 2}]}"#;
        match load_architecture(text.as_bytes()) {
            Err(Error::Architecture { layer, message }) => {
                assert_eq!(layer, "a");
                assert!(message.contains("softmax"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn final_layer_must_be_softmax_dense() {
        let text = r#"{"input_shape": [1, 1, 1], "layers": [
            {"type": "flatten", "name": "f"},
            {"type": "dense", "name": "a", "activation": "relu", "in": 1, "out": 2}]}"#;
        assert!(load_architecture(text.as_bytes()).is_err());
    }

    #[test]
    fn duplicate_names_rejected() {
        let text = r#"{"input_shape": [1, 1, 1], "layers": [
            {"type": "flatten", "name": "a"},
            {"type": "dense", "name": "a", "activation": "softmax", "in": 1, "out": 2}]}"#;
        assert!(load_architecture(text.as_bytes()).is_err());
    }

    #[test]
    fn channel_mismatch_names_layer() {
        let text = r#"{"input_shape": [3, 4, 4], "layers": [
            {"type": "conv2d", "name": "c", "in_channels": 1, "out_channels": 2, "kernel": [1, 1]},
            {"type": "flatten", "name": "f"},
            {"type": "dense", "name": "d", "activation": "softmax", "in": 32, "out": 2}]}"#;
        match load_architecture(text.as_bytes()) {
            Err(Error::Architecture { layer, .. }) => assert_eq!(layer, "c"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn pool_with_activation_rejected() {
        let text = r#"{"input_shape": [1, 2, 2], "layers": [
            {"type": "maxpool", "name": "p", "activation": "relu", "kernel": [2, 2], "stride": [2, 2]},
            {"type": "flatten", "name": "f"},
            {"type": "dense", "name": "d", "activation": "softmax", "in": 1, "out": 2}]}"#;
        assert!(load_architecture(text.as_bytes()).is_err());
    }
}
