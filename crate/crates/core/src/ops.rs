//! Deterministic tensor kernels.
//!
//! Every reduction runs in a fixed, documented order so repeated runs are
//! bit-identical. Work is split across output channels only; the order of
//! additions into any single output element never depends on scheduling.

use rayon::prelude::*;

use crate::error::{shape_mismatch, Error, Result};
use crate::tensor::{Shape, Tensor};

/// Kernel, stride and symmetric zero padding of a 2-D convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    pub kernel: (usize, usize),
    pub stride: (usize, usize),
    pub padding: (usize, usize),
}

impl ConvGeometry {
    pub fn new(kernel: (usize, usize), stride: (usize, usize), padding: (usize, usize)) -> Result<Self> {
        if kernel.0 == 0 || kernel.1 == 0 || stride.0 == 0 || stride.1 == 0 {
            return Err(Error::Geometry(format!(
                "kernel {kernel:?} and stride {stride:?} must be >= 1"
            )));
        }
        Ok(ConvGeometry {
            kernel,
            stride,
            padding,
        })
    }

    /// Output `(H', W')` for an input plane of `(h, w)`.
    ///
    /// The padded extent minus the kernel must be a non-negative multiple of
    /// the stride; partial windows are rejected rather than dropped.
    pub fn output_extent(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        let oh = axis_extent(h, self.kernel.0, self.stride.0, self.padding.0, "height")?;
        let ow = axis_extent(w, self.kernel.1, self.stride.1, self.padding.1, "width")?;
        Ok((oh, ow))
    }
}

fn axis_extent(n: usize, k: usize, s: usize, p: usize, axis: &str) -> Result<usize> {
    let padded = n + 2 * p;
    if padded < k || !(padded - k).is_multiple_of(s) {
        return Err(Error::Geometry(format!(
            "{axis} {n} with kernel {k}, stride {s}, padding {p} gives a non-integral output extent"
        )));
    }
    Ok((padded - k) / s + 1)
}

/// Kernel and stride of an unpadded max-pooling window.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PoolGeometry {
    pub kernel: (usize, usize),
    pub stride: (usize, usize),
}

impl PoolGeometry {
    pub fn new(kernel: (usize, usize), stride: (usize, usize)) -> Result<Self> {
        ConvGeometry::new(kernel, stride, (0, 0))?;
        Ok(PoolGeometry { kernel, stride })
    }

    pub fn output_extent(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        ConvGeometry {
            kernel: self.kernel,
            stride: self.stride,
            padding: (0, 0),
        }
        .output_extent(h, w)
    }
}

/// Argmax positions recorded by [`maxpool2d`].
///
/// `indices[c*H''*W'' + y*W'' + x]` is the flat `h*W + w` offset, within
/// channel `c` of the pooling input, of the entry that won that window.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Switches {
    pub shape: Shape,
    pub indices: Vec<usize>,
}

fn conv_weight_dims(weight: &Tensor) -> Result<(usize, usize, usize, usize)> {
    match weight.dims() {
        &[o, i, kh, kw] => Ok((o, i, kh, kw)),
        d => Err(shape_mismatch("conv weight", &[0, 0, 0, 0], d)),
    }
}

fn check_conv(
    op: &'static str,
    in_shape: (usize, usize, usize),
    weight: &Tensor,
    geom: &ConvGeometry,
) -> Result<(usize, usize, usize)> {
    let (c_out, c_in, kh, kw) = conv_weight_dims(weight)?;
    let (c, h, w) = in_shape;
    if c_in != c || (kh, kw) != geom.kernel {
        return Err(shape_mismatch(
            op,
            &[c_out, c, geom.kernel.0, geom.kernel.1],
            weight.dims(),
        ));
    }
    let (oh, ow) = geom.output_extent(h, w)?;
    Ok((c_out, oh, ow))
}

/// 2-D cross-correlation with zero padding.
///
/// Each output element accumulates from `0.0` over input channel, then
/// kernel row, then kernel column; the bias is added last. Taps that land in
/// the padding are skipped.
pub fn conv2d(input: &Tensor, weight: &Tensor, bias: &[f32], geom: &ConvGeometry) -> Result<Tensor> {
    let (c_in, h, w) = input.expect_chw("conv2d")?;
    let (c_out, oh, ow) = check_conv("conv2d", (c_in, h, w), weight, geom)?;
    if bias.len() != c_out {
        return Err(shape_mismatch("conv2d bias", &[c_out], &[bias.len()]));
    }
    let (kh, kw) = geom.kernel;
    let (sh, sw) = geom.stride;
    let (ph, pw) = geom.padding;
    let x = input.data();
    let wt = weight.data();

    let mut out = vec![0.0f32; c_out * oh * ow];
    out.par_chunks_mut(oh * ow).enumerate().for_each(|(o, plane)| {
        for i in 0..c_in {
            let src = &x[i * h * w..(i + 1) * h * w];
            for u in 0..kh {
                for v in 0..kw {
                    let k = wt[((o * c_in + i) * kh + u) * kw + v];
                    for y in 0..oh {
                        let iy = (y * sh + u) as isize - ph as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let row = &src[iy as usize * w..(iy as usize + 1) * w];
                        let dst = &mut plane[y * ow..(y + 1) * ow];
                        for (xo, acc) in dst.iter_mut().enumerate() {
                            let ix = (xo * sw + v) as isize - pw as isize;
                            if ix >= 0 && ix < w as isize {
                                *acc += row[ix as usize] * k;
                            }
                        }
                    }
                }
            }
        }
        let b = bias[o];
        for acc in plane.iter_mut() {
            *acc += b;
        }
    });
    Ok(Tensor::from_parts(Shape::new(vec![c_out, oh, ow])?, out))
}

/// Exact adjoint of the bias-free [`conv2d`]: transposed convolution with
/// the flipped filters, computed as a scatter.
///
/// For each input channel `i`, backward entries are visited in
/// `(o, y', x', u, v)` order and scattered to `(y'*sh + u - ph, x'*sw + v - pw)`.
pub fn conv2d_transpose_flipped(
    backward: &Tensor,
    weight: &Tensor,
    geom: &ConvGeometry,
    out_shape: &Shape,
) -> Result<Tensor> {
    let (c_in, h, w) = out_shape.chw().ok_or_else(|| {
        shape_mismatch("conv2d_transpose_flipped", &[0, 0, 0], out_shape.dims())
    })?;
    let (c_out, oh, ow) = check_conv("conv2d_transpose_flipped", (c_in, h, w), weight, geom)?;
    if backward.dims() != [c_out, oh, ow] {
        return Err(shape_mismatch(
            "conv2d_transpose_flipped",
            &[c_out, oh, ow],
            backward.dims(),
        ));
    }
    let (kh, kw) = geom.kernel;
    let (sh, sw) = geom.stride;
    let (ph, pw) = geom.padding;
    let g = backward.data();
    let wt = weight.data();

    let mut out = vec![0.0f32; c_in * h * w];
    out.par_chunks_mut(h * w).enumerate().for_each(|(i, plane)| {
        for o in 0..c_out {
            let filter = &wt[(o * c_in + i) * kh * kw..(o * c_in + i + 1) * kh * kw];
            for yb in 0..oh {
                for xb in 0..ow {
                    let gv = g[(o * oh + yb) * ow + xb];
                    for u in 0..kh {
                        let y = (yb * sh + u) as isize - ph as isize;
                        if y < 0 || y >= h as isize {
                            continue;
                        }
                        for v in 0..kw {
                            let x = (xb * sw + v) as isize - pw as isize;
                            if x >= 0 && x < w as isize {
                                plane[y as usize * w + x as usize] += gv * filter[u * kw + v];
                            }
                        }
                    }
                }
            }
        }
    });
    Ok(Tensor::from_parts(out_shape.clone(), out))
}

/// Max pooling without padding. Ties go to the first entry in row-major
/// window order.
pub fn maxpool2d(input: &Tensor, geom: &PoolGeometry) -> Result<(Tensor, Switches)> {
    let (c, h, w) = input.expect_chw("maxpool2d")?;
    let (oh, ow) = geom.output_extent(h, w)?;
    let (kh, kw) = geom.kernel;
    let (sh, sw) = geom.stride;
    let x = input.data();
    let mut pooled = Vec::with_capacity(c * oh * ow);
    let mut indices = Vec::with_capacity(c * oh * ow);
    for ch in 0..c {
        let plane = &x[ch * h * w..(ch + 1) * h * w];
        for y in 0..oh {
            for xo in 0..ow {
                let mut best = y * sh * w + xo * sw;
                for u in 0..kh {
                    for v in 0..kw {
                        let idx = (y * sh + u) * w + xo * sw + v;
                        if plane[idx] > plane[best] {
                            best = idx;
                        }
                    }
                }
                pooled.push(plane[best]);
                indices.push(best);
            }
        }
    }
    let shape = Shape::new(vec![c, oh, ow])?;
    Ok((
        Tensor::from_parts(shape.clone(), pooled),
        Switches { shape, indices },
    ))
}

/// `W x + b`, each row summed in input-index order from `0.0`, bias last.
pub fn affine(weight: &Tensor, bias: &[f32], x: &[f32]) -> Result<Vec<f32>> {
    let (rows, cols) = match weight.dims() {
        &[r, c] => (r, c),
        d => return Err(shape_mismatch("affine weight", &[bias.len(), x.len()], d)),
    };
    if cols != x.len() || rows != bias.len() {
        return Err(shape_mismatch("affine", &[bias.len(), x.len()], weight.dims()));
    }
    Ok(weight
        .data()
        .chunks_exact(cols)
        .zip(bias)
        .map(|(row, &b)| row.iter().zip(x).fold(0.0f32, |acc, (&w, &v)| acc + w * v) + b)
        .collect())
}

pub fn relu(x: &Tensor) -> Tensor {
    x.map(|v| v.max(0.0))
}

/// Max-shifted softmax.
pub fn softmax(x: &[f32]) -> Result<Vec<f32>> {
    if x.is_empty() {
        return Err(Error::Config("softmax of an empty vector".into()));
    }
    let m = x.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    let e: Vec<f32> = x.iter().map(|&v| (v - m).exp()).collect();
    let sum: f32 = e.iter().sum();
    Ok(e.into_iter().map(|v| v / sum).collect())
}
