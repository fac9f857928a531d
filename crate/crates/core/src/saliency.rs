use std::fmt;

use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Method {
    Fbi,
    Guided,
    Deconvnet,
    /// Plain gradient of the class score.
    Gradient,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Fbi => "fbi",
            Method::Guided => "guided",
            Method::Deconvnet => "deconvnet",
            Method::Gradient => "gradient",
        })
    }
}

/// Signed input-shaped attribution and its nonzero support.
#[derive(Debug, Clone, PartialEq)]
pub struct SaliencyMap {
    pub values: Tensor,
    pub support: Vec<bool>,
    pub method: Method,
    pub class_index: usize,
}

impl SaliencyMap {
    pub fn new(values: Tensor, method: Method, class_index: usize) -> Self {
        let support = values.data().iter().map(|&v| v != 0.0).collect();
        SaliencyMap {
            values,
            support,
            method,
            class_index,
        }
    }

    pub fn support_size(&self) -> usize {
        self.support.iter().filter(|&&s| s).count()
    }
}

/// Gate used at a ReLU site during a backward walk.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ReluRule {
    /// Pass where the forward pre-activation is positive (true gradient).
    Plain,
    /// Pass where both the forward pre-activation and the backward signal are positive.
    Guided,
    /// Pass where the backward signal is positive.
    Deconvnet,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum UnpoolRule {
    /// Replicate across the window, mean over overlaps, min with the pool input.
    ReplicateMin,
    /// Route to the recorded argmax only.
    Switches,
}

/// One operator applied during a backward walk; layer indices refer to the
/// architecture.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BackwardStep {
    SoftmaxAdjoint { class: usize },
    OneHotSeed { class: usize },
    DenseTranspose { layer: usize, subtract_bias: bool },
    ConvTranspose { layer: usize, subtract_bias: bool },
    /// Forward-backward mask against the activation entering `layer`.
    Mask { layer: usize, tau: f32 },
    Relu { layer: usize, rule: ReluRule },
    Reshape { layer: usize },
    TopMaps { layer: usize, kept: usize, total: usize },
    Unpool { layer: usize, rule: UnpoolRule },
}
