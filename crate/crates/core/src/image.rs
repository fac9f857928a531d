//! Binary PGM/PPM input and saliency rendering.
//!
//! All rounding is half-up.

use crate::error::{Error, Result};
use crate::saliency::SaliencyMap;
use crate::tensor::{Shape, Tensor};

/// 8-bit image, row-major with interleaved samples.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImageU8 {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub pixels: Vec<u8>,
}

impl ImageU8 {
    pub fn new(width: usize, height: usize, channels: usize, pixels: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Image(format!("empty image {width}x{height}")));
        }
        if channels != 1 && channels != 3 {
            return Err(Error::Image(format!("unsupported channel count {channels}")));
        }
        if pixels.len() != width * height * channels {
            return Err(Error::Image(format!(
                "{} samples for a {width}x{height}x{channels} image",
                pixels.len()
            )));
        }
        Ok(ImageU8 {
            width,
            height,
            channels,
            pixels,
        })
    }

    /// ITU-R 601 luma per pixel; grayscale images are returned as is.
    pub fn luma(&self) -> Vec<u8> {
        if self.channels == 1 {
            return self.pixels.clone();
        }
        self.pixels
            .chunks_exact(3)
            .map(|p| {
                let y = 299 * p[0] as u32 + 587 * p[1] as u32 + 114 * p[2] as u32;
                ((y + 500) / 1000) as u8
            })
            .collect()
    }
}

struct HeaderReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl HeaderReader<'_> {
    fn skip_space_and_comments(&mut self) {
        while let Some(&b) = self.bytes.get(self.pos) {
            if b == b'#' {
                while let Some(&c) = self.bytes.get(self.pos) {
                    self.pos += 1;
                    if c == b'\n' || c == b'\r' {
                        break;
                    }
                }
            } else if b.is_ascii_whitespace() {
                self.pos += 1;
            } else {
                break;
            }
        }
    }

    fn number(&mut self, what: &str) -> Result<usize> {
        self.skip_space_and_comments();
        let start = self.pos;
        while self.bytes.get(self.pos).is_some_and(u8::is_ascii_digit) {
            self.pos += 1;
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::Image(format!("bad or missing {what} in PNM header")))
    }
}

/// Decodes binary PGM (`P5`) or PPM (`P6`) with maxval 255.
pub fn load_pnm(bytes: &[u8]) -> Result<ImageU8> {
    let channels = match bytes.get(..2) {
        Some(b"P5") => 1,
        Some(b"P6") => 3,
        _ => return Err(Error::Image("bad magic: expected P5 or P6".into())),
    };
    let mut r = HeaderReader { bytes, pos: 2 };
    let width = r.number("width")?;
    let height = r.number("height")?;
    let maxval = r.number("maxval")?;
    if maxval != 255 {
        return Err(Error::Image(format!("unsupported maxval {maxval} (only 255)")));
    }
    match bytes.get(r.pos) {
        Some(b) if b.is_ascii_whitespace() => r.pos += 1,
        _ => return Err(Error::Image("missing whitespace after maxval".into())),
    }
    let n = width * height * channels;
    let raster = bytes.get(r.pos..r.pos + n).ok_or_else(|| {
        Error::Image(format!(
            "truncated raster: need {n} bytes, have {}",
            bytes.len() - r.pos
        ))
    })?;
    ImageU8::new(width, height, channels, raster.to_vec())
}

/// Canonical encoding: magic, `\n`, `W H`, `\n`, `255`, `\n`, raster.
pub fn save_pnm(img: &ImageU8) -> Vec<u8> {
    let magic = if img.channels == 1 { "P5" } else { "P6" };
    let mut out = format!("{magic}\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend_from_slice(&img.pixels);
    out
}

/// Channel-first tensor of `pixel - mean[channel]`. No resizing is done.
pub fn preprocess(img: &ImageU8, mean: &[f32], expected: &Shape) -> Result<Tensor> {
    let (c, h, w) = expected
        .chw()
        .ok_or_else(|| Error::Image(format!("model input {expected} is not [C, H, W]")))?;
    if (img.channels, img.height, img.width) != (c, h, w) {
        return Err(Error::Image(format!(
            "image is {}x{} with {} channel(s); model expects {w}x{h} with {c}",
            img.width, img.height, img.channels
        )));
    }
    if mean.len() != c {
        return Err(Error::Image(format!("{} mean values for {c} channels", mean.len())));
    }
    let mut data = vec![0.0f32; c * h * w];
    for (p, px) in img.pixels.chunks_exact(c).enumerate() {
        for (ch, &v) in px.iter().enumerate() {
            data[ch * h * w + p] = v as f32 - mean[ch];
        }
    }
    Tensor::new(expected.clone(), data)
}

fn round_half_up(x: f64) -> u8 {
    (x + 0.5).floor().clamp(0.0, 255.0) as u8
}

/// Per-pixel max over channels of `|value|`, scaled so the largest maps to 255.
pub fn render_grayscale(s: &SaliencyMap) -> ImageU8 {
    let dims = s.values.dims();
    let (c, h, w) = match *dims {
        [c, h, w] => (c, h, w),
        _ => (1, 1, s.values.len()),
    };
    let v = s.values.data();
    let magnitude: Vec<f32> = (0..h * w)
        .map(|p| (0..c).map(|ch| v[ch * h * w + p].abs()).fold(0.0f32, f32::max))
        .collect();
    let m = magnitude.iter().copied().fold(0.0f32, f32::max);
    let pixels = if m == 0.0 {
        vec![0u8; h * w]
    } else {
        magnitude
            .iter()
            .map(|&x| round_half_up(255.0 * x as f64 / m as f64))
            .collect()
    };
    ImageU8 {
        width: w,
        height: h,
        channels: 1,
        pixels,
    }
}

/// Saliency in red over a dimmed grayscale copy of `base`:
/// red = 0.3·luma + 0.7·saliency, green = blue = 0.3·luma.
pub fn render_overlay(s: &SaliencyMap, base: &ImageU8) -> Result<ImageU8> {
    let gray = render_grayscale(s);
    if (gray.width, gray.height) != (base.width, base.height) {
        return Err(Error::Image(format!(
            "overlay base is {}x{}, saliency is {}x{}",
            base.width, base.height, gray.width, gray.height
        )));
    }
    let luma = base.luma();
    let mut pixels = Vec::with_capacity(luma.len() * 3);
    for (&g, &n) in luma.iter().zip(&gray.pixels) {
        let (g, n) = (g as u32, n as u32);
        let red = ((3 * g + 7 * n + 5) / 10).min(255) as u8;
        let dim = ((3 * g + 5) / 10) as u8;
        pixels.extend_from_slice(&[red, dim, dim]);
    }
    ImageU8::new(base.width, base.height, 3, pixels)
}
