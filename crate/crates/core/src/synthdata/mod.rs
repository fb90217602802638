//! Procedural clean images, additive Gaussian noise, crops and sample storage.

mod archive;
mod pnm;

pub use archive::{read_archive, write_archive, ArchiveHeader, ArchiveReader, ARCHIVE_VERSION};
pub use pnm::{parse_pnm, read_pnm, to_bytes_u8, write_pnm};

use std::f64::consts::TAU;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::ndgrad::{Rng, Tensor};

/// Family of synthetic content.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ImageKind {
    Gradient,
    Shapes,
    Sinusoid,
    Mixed,
}

impl FromStr for ImageKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "gradient" => ImageKind::Gradient,
            "shapes" => ImageKind::Shapes,
            "sinusoid" => ImageKind::Sinusoid,
            "mixed" => ImageKind::Mixed,
            _ => return Err(Error::Config(format!("unknown image kind {s:?}"))),
        })
    }
}

impl ImageKind {
    pub fn name(self) -> &'static str {
        match self {
            ImageKind::Gradient => "gradient",
            ImageKind::Shapes => "shapes",
            ImageKind::Sinusoid => "sinusoid",
            ImageKind::Mixed => "mixed",
        }
    }
}

/// A clean/noisy pair with its provenance.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainSample {
    /// `[C,H,W]` in [0,1].
    pub clean: Tensor<f32>,
    pub noisy: Tensor<f32>,
    /// Noise standard deviation on the [0,1] scale.
    pub sigma: f32,
    pub seed: u64,
}

/// Smooth ramp in a random direction.
const SHAPE_CONTRAST: f64 = 0.4;
const SHAPE_EDGE: f64 = 0.25;
const MAX_EXTRA_SHAPES: usize = 16;

fn gradient_plane(rng: &mut Rng, size: usize) -> Vec<f64> {
    let theta = rng.uniform_range(0.0, TAU);
    let (lo, hi) = (rng.uniform_range(0.05, 0.5), rng.uniform_range(0.5, 0.95));
    let (c, s) = (theta.cos(), theta.sin());
    let n = size as f64;
    let mut out = Vec::with_capacity(size * size);
    for i in 0..size {
        for j in 0..size {
            // projection onto the direction, normalized to [0,1] over the square
            let u = ((j as f64 + 0.5) / n - 0.5) * c + ((i as f64 + 0.5) / n - 0.5) * s;
            let t = (u / std::f64::consts::SQRT_2 + 0.5).clamp(0.0, 1.0);
            out.push(lo + (hi - lo) * t);
        }
    }
    out
}

/// Sum of a few low-frequency sinusoids scaled into [0,1].
fn sinusoid_plane(rng: &mut Rng, size: usize) -> Vec<f64> {
    let waves: Vec<(f64, f64, f64, f64)> = (0..3)
        .map(|_| {
            // periods between 6 and 24 pixels
            let period = rng.uniform_range(6.0, 24.0);
            let theta = rng.uniform_range(0.0, TAU);
            let phase = rng.uniform_range(0.0, TAU);
            let amp = rng.uniform_range(0.3, 1.0);
            (
                TAU / period * theta.cos(),
                TAU / period * theta.sin(),
                phase,
                amp,
            )
        })
        .collect();
    let total: f64 = waves.iter().map(|w| w.3).sum();
    let (mid, span) = (rng.uniform_range(0.35, 0.65), rng.uniform_range(0.2, 0.35));
    let mut out = Vec::with_capacity(size * size);
    for i in 0..size {
        for j in 0..size {
            let v: f64 = waves
                .iter()
                .map(|&(kx, ky, ph, a)| a * (kx * j as f64 + ky * i as f64 + ph).sin())
                .sum();
            out.push((mid + span * v / total).clamp(0.0, 1.0));
        }
    }
    out
}

/// Anti-aliased circles and rectangles composited over `base`.
/// Maps `u` in [0,1) onto the levels at least `SHAPE_CONTRAST` away from
/// `under`, leaving `u` alone when it already is.
fn contrasting_level(u: f64, under: f64) -> f64 {
    if (u - under).abs() >= SHAPE_CONTRAST {
        return u;
    }
    let below = (under - SHAPE_CONTRAST).max(0.0);
    let above = (1.0 - under - SHAPE_CONTRAST).max(0.0);
    let t = u * (below + above);
    if t < below {
        t
    } else {
        under + SHAPE_CONTRAST + (t - below)
    }
}

fn draw_shapes(rng: &mut Rng, size: usize, base: &mut [f64]) {
    let count = 3 + rng.below(4);
    for _ in 0..count {
        draw_shape(rng, size, base);
    }
    // overlaps can bury every boundary; keep stacking until one shows
    for _ in 0..MAX_EXTRA_SHAPES {
        if size < 2 || max_step(base, size) >= SHAPE_EDGE {
            break;
        }
        draw_shape(rng, size, base);
    }
}

fn draw_shape(rng: &mut Rng, size: usize, base: &mut [f64]) {
    let n = size as f64;
    let u = rng.uniform_range(0.0, 1.0);
    let circle = rng.below(2) == 0;
    let (cx, cy) = (
        rng.uniform_range(0.1, 0.9) * n,
        rng.uniform_range(0.1, 0.9) * n,
    );
    let under = base[(cy as usize).min(size - 1) * size + (cx as usize).min(size - 1)];
    let level = contrasting_level(u, under);
    let r = rng.uniform_range(0.08, 0.3) * n;
    let (hw, hh) = (
        rng.uniform_range(0.06, 0.3) * n,
        rng.uniform_range(0.06, 0.3) * n,
    );
    for i in 0..size {
        for j in 0..size {
            let (px, py) = (j as f64 + 0.5, i as f64 + 0.5);
            // signed distance in pixels, negative inside
            let sd = if circle {
                ((px - cx).powi(2) + (py - cy).powi(2)).sqrt() - r
            } else {
                ((px - cx).abs() - hw).max((py - cy).abs() - hh)
            };
            let cover = (0.5 - sd).clamp(0.0, 1.0);
            let v = &mut base[i * size + j];
            *v = *v * (1.0 - cover) + level * cover;
        }
    }
}

/// Largest absolute difference between horizontally or vertically adjacent pixels.
fn max_step(p: &[f64], size: usize) -> f64 {
    let mut m = 0f64;
    for i in 0..size {
        for j in 0..size {
            let v = p[i * size + j];
            if j + 1 < size {
                m = m.max((p[i * size + j + 1] - v).abs());
            }
            if i + 1 < size {
                m = m.max((p[(i + 1) * size + j] - v).abs());
            }
        }
    }
    m
}

fn plane(rng: &mut Rng, kind: ImageKind, size: usize) -> Vec<f64> {
    match kind {
        ImageKind::Gradient => gradient_plane(rng, size),
        ImageKind::Sinusoid => sinusoid_plane(rng, size),
        ImageKind::Shapes => {
            let mut p = gradient_plane(rng, size);
            draw_shapes(rng, size, &mut p);
            p
        }
        ImageKind::Mixed => {
            let mut p = gradient_plane(rng, size);
            draw_shapes(rng, size, &mut p);
            let tex = sinusoid_plane(rng, size);
            let w = rng.uniform_range(0.1, 0.3);
            p.iter_mut()
                .zip(tex)
                .for_each(|(a, t)| *a = (1.0 - w) * *a + w * t);
            p
        }
    }
}

/// Deterministic `[channels,size,size]` image in [0,1]; each channel is drawn
/// independently.
pub fn gen_clean_image(
    seed: u64,
    kind: ImageKind,
    channels: usize,
    size: usize,
) -> Result<Tensor<f32>> {
    if channels == 0 || size == 0 {
        return Err(Error::Invalid(
            "image needs positive channels and size".into(),
        ));
    }
    let mut data = Vec::with_capacity(channels * size * size);
    for c in 0..channels {
        let mut rng = Rng::derive(seed, 0xC0DE + c as u64);
        data.extend(
            plane(&mut rng, kind, size)
                .into_iter()
                .map(|v| v.clamp(0.0, 1.0) as f32),
        );
    }
    Tensor::new(&[channels, size, size], data)
}

/// `clean + n` with `n ~ N(0, (σ/255)²)`, unclipped.
pub fn add_awgn(clean: &Tensor<f32>, sigma_255: f64, rng: &mut Rng) -> Tensor<f32> {
    let s = sigma_255 / 255.0;
    let mut out = clean.clone();
    if s == 0.0 {
        return out;
    }
    for v in out.data_mut() {
        *v = (*v as f64 + s * rng.normal()) as f32;
    }
    out
}

/// `size×size` window of a `[C,H,W]` image at (`top`, `left`).
pub fn crop_patch(img: &Tensor<f32>, top: usize, left: usize, size: usize) -> Result<Tensor<f32>> {
    let s = img.shape();
    if s.len() != 3 || size == 0 || top + size > s[1] || left + size > s[2] {
        return Err(Error::dim(format!(
            "crop ({top},{left}) size {size} outside image {s:?}"
        )));
    }
    let (c, h, w) = (s[0], s[1], s[2]);
    let mut data = Vec::with_capacity(c * size * size);
    for ch in 0..c {
        for i in top..top + size {
            let row = &img.data()[ch * h * w + i * w..ch * h * w + (i + 1) * w];
            data.extend_from_slice(&row[left..left + size]);
        }
    }
    Tensor::new(&[c, size, size], data)
}

/// Random crop position for a `size` window; the same coordinates are used
/// for both images of a pair.
pub fn random_crop_origin(shape: &[usize], size: usize, rng: &mut Rng) -> Result<(usize, usize)> {
    if shape.len() != 3 || size > shape[1] || size > shape[2] || size == 0 {
        return Err(Error::dim(format!(
            "crop size {size} does not fit {shape:?}"
        )));
    }
    Ok((
        rng.below(shape[1] - size + 1),
        rng.below(shape[2] - size + 1),
    ))
}

/// Crop a pair at the same random position.
pub fn random_crop_pair(
    sample: &TrainSample,
    size: usize,
    rng: &mut Rng,
) -> Result<(Tensor<f32>, Tensor<f32>)> {
    let (t, l) = random_crop_origin(sample.clean.shape(), size, rng)?;
    Ok((
        crop_patch(&sample.clean, t, l, size)?,
        crop_patch(&sample.noisy, t, l, size)?,
    ))
}

/// One pair of the given kind, σ (0–255 scale) drawn uniformly from `sigmas`.
pub fn make_sample(
    seed: u64,
    kind: ImageKind,
    channels: usize,
    size: usize,
    sigmas: &[f64],
) -> Result<TrainSample> {
    if sigmas.is_empty() {
        return Err(Error::Config("empty sigma list".into()));
    }
    let clean = gen_clean_image(seed, kind, channels, size)?;
    let mut rng = Rng::derive(seed, 0x0A11);
    let sigma = sigmas[rng.below(sigmas.len())];
    let noisy = add_awgn(&clean, sigma, &mut rng);
    Ok(TrainSample {
        clean,
        noisy,
        sigma: (sigma / 255.0) as f32,
        seed,
    })
}

/// Dataset sizes and content.
#[derive(Clone, Debug, PartialEq)]
pub struct DataConfig {
    pub train_count: usize,
    pub val_count: usize,
    pub image_size: usize,
    pub channels: usize,
    pub kind: ImageKind,
    pub sigmas: Vec<f64>,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            train_count: 2048,
            val_count: 128,
            image_size: 48,
            channels: 1,
            kind: ImageKind::Mixed,
            sigmas: vec![25.0],
        }
    }
}

/// Seed of training sample `i`; validation seeds live in a disjoint range.
pub fn sample_seed(base: u64, i: usize, validation: bool) -> u64 {
    let tag = if validation {
        (1u64 << 40) + i as u64
    } else {
        i as u64
    };
    Rng::derive(base, tag).next_u64()
}

/// Training and validation sets, a pure function of `(cfg, seed)`.
pub fn build_dataset(cfg: &DataConfig, seed: u64) -> Result<(Vec<TrainSample>, Vec<TrainSample>)> {
    let make = |n: usize, val: bool| -> Result<Vec<TrainSample>> {
        (0..n)
            .map(|i| {
                make_sample(
                    sample_seed(seed, i, val),
                    cfg.kind,
                    cfg.channels,
                    cfg.image_size,
                    &cfg.sigmas,
                )
            })
            .collect()
    };
    Ok((make(cfg.train_count, false)?, make(cfg.val_count, true)?))
}
