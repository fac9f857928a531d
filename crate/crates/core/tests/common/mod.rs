#![allow(dead_code)]

use std::path::PathBuf;

use fbi_core::{load_architecture, load_weights, Model, Shape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn fixtures_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

pub fn square16() -> Model {
    let dir = fixtures_dir();
    let arch = load_architecture(&std::fs::read(dir.join("square16.arch.json")).unwrap()).unwrap();
    let weights = load_weights(&std::fs::read(dir.join("square16.fbiw")).unwrap()).unwrap();
    Model::new(arch, weights).unwrap()
}

/// `tau_scale` from the fixture metadata.
pub fn square16_tau_scale() -> f32 {
    let meta: serde_json::Value =
        serde_json::from_slice(&std::fs::read(fixtures_dir().join("square16.meta.json")).unwrap()).unwrap();
    meta["tau_scale"].as_f64().unwrap() as f32
}

pub struct SquareImage {
    pub tensor: Tensor,
    /// Top-left (row, col) of the 4x4 square.
    pub top_left: (usize, usize),
}

/// Held-out draw from the fixture's training distribution: noise in
/// 0..=160 with a 4x4 square of values in 200..=255.
pub fn square_image(rng: &mut ChaCha8Rng) -> SquareImage {
    let mut px: Vec<f32> = (0..256).map(|_| rng.gen_range(0..=160u32) as f32).collect();
    let r = rng.gen_range(0..=12usize);
    let c = rng.gen_range(0..=12usize);
    for y in r..r + 4 {
        for x in c..c + 4 {
            px[y * 16 + x] = rng.gen_range(200..=255u32) as f32;
        }
    }
    SquareImage {
        tensor: Tensor::new(Shape::new(vec![1, 16, 16]).unwrap(), px).unwrap(),
        top_left: (r, c),
    }
}

pub fn held_out_squares(seed: u64, n: usize) -> Vec<SquareImage> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| square_image(&mut rng)).collect()
}

use fbi_core::model::{Activation, Architecture, LayerKind, LayerSpec, WeightArchive};
use fbi_core::ops::{ConvGeometry, PoolGeometry};

pub fn uniform_tensor(rng: &mut ChaCha8Rng, dims: &[usize], lo: f32, hi: f32) -> Tensor {
    let n: usize = dims.iter().product();
    Tensor::from_vec(dims.to_vec(), (0..n).map(|_| rng.gen_range(lo..hi)).collect()).unwrap()
}

/// Random small network: two padded 3x3 convs, a 2x2 pool and two dense
/// layers on a 1x8x8 input.
pub fn random_tiny_model(seed: u64) -> Model {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let c1 = rng.gen_range(2..=4);
    let c2 = rng.gen_range(2..=4);
    let hidden = rng.gen_range(4..=8);
    let classes = rng.gen_range(2..=4);
    let g3 = ConvGeometry::new((3, 3), (1, 1), (1, 1)).unwrap();
    let arch = Architecture::new(
        Shape::new(vec![1, 8, 8]).unwrap(),
        vec![
            LayerSpec::conv2d("conv1", Activation::Relu, 1, c1, g3),
            LayerSpec::conv2d("conv2", Activation::Relu, c1, c2, g3),
            LayerSpec::maxpool("pool", PoolGeometry::new((2, 2), (2, 2)).unwrap()),
            LayerSpec::flatten("flat"),
            LayerSpec::dense("fc1", Activation::Relu, c2 * 16, hidden),
            LayerSpec::dense("fc2", Activation::Softmax, hidden, classes),
        ],
    )
    .unwrap();
    let mut w = WeightArchive::new();
    for spec in arch.layers() {
        if let Some((wd, bd)) = spec.parameter_dims() {
            let fan_in: usize = wd[1..].iter().product();
            let s = (3.0 / fan_in as f32).sqrt();
            w.insert(spec.weight_key(), uniform_tensor(&mut rng, &wd, -s, s));
            w.insert(spec.bias_key(), uniform_tensor(&mut rng, &bd, -0.1, 0.1));
        }
    }
    Model::new(arch, w).unwrap()
}

pub fn random_input(model: &Model, seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    uniform_tensor(&mut rng, model.arch().input_shape().dims(), -1.0, 1.0)
}

/// Forward pass in f64 written with plain index loops, independent of the
/// library kernels. Returns the final pre-softmax scores plus every ReLU sign
/// and pool argmax, so callers can tell when a perturbation crossed a kink.
pub struct OracleForward {
    pub logits: Vec<f64>,
    /// Post-activation output of every layer.
    pub activations: Vec<Vec<f64>>,
    pub pattern: Vec<u32>,
}

pub fn oracle_forward(model: &Model, input: &[f64]) -> OracleForward {
    let arch = model.arch();
    let mut x = input.to_vec();
    let mut pattern = Vec::new();
    let mut activations = Vec::new();
    let mut logits = Vec::new();
    for (l, spec) in arch.layers().iter().enumerate() {
        let ind = arch.input_shape_of(l).dims().to_vec();
        let outd = arch.output_shape(l).dims().to_vec();
        let mut z = match spec.kind {
            LayerKind::Conv2d { in_channels, out_channels, geometry } => {
                let (w, b) = model.params(l);
                let w = w.data();
                let (h, wd) = (ind[1] as isize, ind[2] as isize);
                let (oh, ow) = (outd[1], outd[2]);
                let (kh, kw) = geometry.kernel;
                let mut out = vec![0.0f64; out_channels * oh * ow];
                for o in 0..out_channels {
                    for y in 0..oh {
                        for xo in 0..ow {
                            let mut acc = b[o] as f64;
                            for i in 0..in_channels {
                                for u in 0..kh {
                                    for v in 0..kw {
                                        let iy = (y * geometry.stride.0 + u) as isize - geometry.padding.0 as isize;
                                        let ix = (xo * geometry.stride.1 + v) as isize - geometry.padding.1 as isize;
                                        if iy >= 0 && iy < h && ix >= 0 && ix < wd {
                                            acc += x[(i * h as usize + iy as usize) * wd as usize + ix as usize]
                                                * w[((o * in_channels + i) * kh + u) * kw + v] as f64;
                                        }
                                    }
                                }
                            }
                            out[(o * oh + y) * ow + xo] = acc;
                        }
                    }
                }
                out
            }
            LayerKind::MaxPool { geometry } => {
                let (c, h, wd) = (ind[0], ind[1], ind[2]);
                let (oh, ow) = (outd[1], outd[2]);
                let mut out = Vec::new();
                for ch in 0..c {
                    for y in 0..oh {
                        for xo in 0..ow {
                            let mut best = f64::NEG_INFINITY;
                            let mut arg = 0;
                            for u in 0..geometry.kernel.0 {
                                for v in 0..geometry.kernel.1 {
                                    let idx = (y * geometry.stride.0 + u) * wd + xo * geometry.stride.1 + v;
                                    let val = x[ch * h * wd + idx];
                                    if val > best {
                                        best = val;
                                        arg = idx;
                                    }
                                }
                            }
                            out.push(best);
                            pattern.push(arg as u32);
                        }
                    }
                }
                out
            }
            LayerKind::Flatten => x.clone(),
            LayerKind::Dense { inputs, outputs } => {
                let (w, b) = model.params(l);
                (0..outputs)
                    .map(|o| b[o] as f64 + (0..inputs).map(|i| w.data()[o * inputs + i] as f64 * x[i]).sum::<f64>())
                    .collect()
            }
        };
        match spec.activation {
            Activation::Relu => {
                for v in z.iter_mut() {
                    pattern.push((*v > 0.0) as u32);
                    *v = v.max(0.0);
                }
            }
            Activation::Softmax => {
                logits = z.clone();
                let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let s: f64 = z.iter().map(|v| (v - m).exp()).sum();
                z = z.iter().map(|v| (v - m).exp() / s).collect();
            }
            Activation::None => {}
        }
        activations.push(z.clone());
        x = z;
    }
    OracleForward { logits, activations, pattern }
}

pub fn to_f64(t: &Tensor) -> Vec<f64> {
    t.data().iter().map(|&v| v as f64).collect()
}

/// Central differences of logit `class` with step `h`. Entries whose
/// perturbation flips a ReLU or a pool argmax are `None`.
pub fn finite_difference(model: &Model, input: &Tensor, class: usize, h: f64) -> Vec<Option<f64>> {
    let x0 = to_f64(input);
    let base = oracle_forward(model, &x0).pattern;
    (0..x0.len())
        .map(|p| {
            let mut xp = x0.clone();
            xp[p] += h;
            let mut xm = x0.clone();
            xm[p] -= h;
            let fp = oracle_forward(model, &xp);
            let fm = oracle_forward(model, &xm);
            if fp.pattern != base || fm.pattern != base {
                return None;
            }
            Some((fp.logits[class] - fm.logits[class]) / (2.0 * h))
        })
        .collect()
}

/// Cosine similarity accumulated in f64.
pub fn cosine(a: &[f32], b: &[f32]) -> f64 {
    let (mut d, mut na, mut nb) = (0.0f64, 0.0f64, 0.0f64);
    for (&x, &y) in a.iter().zip(b) {
        let (x, y) = (x as f64, y as f64);
        d += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    d / (na.sqrt() * nb.sqrt())
}

pub fn dot_f64(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| x as f64 * y as f64).sum()
}
