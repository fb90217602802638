//! Image quality metrics and the style-space experiments: mixing sweeps,
//! class projections and feature-difference statistics.

mod metrics;
mod stats;

pub use metrics::{mse, psnr, ssim, PSNR_CAP, SSIM_K1, SSIM_K2, SSIM_SIGMA, SSIM_WINDOW};
pub use stats::{
    class_report, cosine, cosine_sq, nearest_centroid, pca_project_styles, spearman, ClassStats,
    Projection, SeparationReport,
};

use std::io::Write;
use std::path::Path;

use crate::binio::{create, write_all};
use crate::error::{Error, Result};
use crate::ndgrad::{Rng, Scalar, Tape, Tensor};
use crate::sdidnet::{MaskMode, Model, StyleKind, StyleVector};

/// `λ·s_nf + (1−λ)·s_n`.
pub fn mix_styles(s_nf: &StyleVector, s_n: &StyleVector, lambda: f64) -> Result<StyleVector> {
    if s_nf.values.len() != s_n.values.len() {
        return Err(Error::dim(format!(
            "style lengths {} and {}",
            s_nf.values.len(),
            s_n.values.len()
        )));
    }
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::Invalid(format!(
            "mixing weight {lambda} outside [0,1]"
        )));
    }
    let values = s_nf
        .values
        .iter()
        .zip(&s_n.values)
        .map(|(a, b)| lambda * a + (1.0 - lambda) * b)
        .collect();
    StyleVector::new(values, StyleKind::Mixed)
}

/// One λ of a mixing sweep.
#[derive(Clone, Debug, PartialEq)]
pub struct MixSweepRow {
    pub lambda: f64,
    pub cos_sq: f64,
    /// Against the clean image.
    pub psnr: f64,
    pub ssim: f64,
    /// Against the noisy input.
    pub psnr_input: f64,
}

fn batch1<T: Scalar>(img: &Tensor<f32>) -> Result<Tensor<T>> {
    let s = img.shape();
    if s.len() != 3 {
        return Err(Error::dim(format!("image must be [C,H,W], got {s:?}")));
    }
    img.cast::<T>().reshape(&[1, s[0], s[1], s[2]])
}

/// Styles of one image through the extractor.
pub fn extract_style<T: Scalar>(
    model: &Model<T>,
    img: &Tensor<f32>,
    kind: StyleKind,
) -> Result<StyleVector> {
    let tape = Tape::new();
    let p = model.params.bind_frozen(&tape);
    let s = model
        .net
        .extract(&p, tape.constant(batch1::<T>(img)?))?
        .value();
    Ok(StyleVector::from_batch(&s, kind)?.remove(0))
}

/// Generator styles for `n` latent draws.
pub fn sample_styles<T: Scalar>(
    model: &Model<T>,
    n: usize,
    rng: &mut Rng,
) -> Result<Vec<StyleVector>> {
    let tape = Tape::new();
    let p = model.params.bind_frozen(&tape);
    let z = tape.constant(model.net.sample_latent::<T>(rng, n));
    StyleVector::from_batch(&model.net.generate(&p, z)?.value(), StyleKind::Sampled)
}

/// Denoise one `[C,H,W]` image with an explicit style.
pub fn denoise_with_style<T: Scalar>(
    model: &Model<T>,
    x: &Tensor<f32>,
    style: &StyleVector,
) -> Result<Tensor<f32>> {
    let s = StyleVector::to_batch::<T>(std::slice::from_ref(style))?;
    let mut rng = Rng::new(0);
    let out = model
        .net
        .denoise_tensor(&model.params, &batch1::<T>(x)?, Some(&s), &mut rng)?;
    out.cast::<f32>().reshape(x.shape())
}

/// `dec(enc(x))`, skipping style conversion.
pub fn autoencode<T: Scalar>(model: &Model<T>, x: &Tensor<f32>) -> Result<Tensor<f32>> {
    let tape = Tape::new();
    let p = model.params.bind_frozen(&tape);
    let f = model.net.encode(&p, tape.constant(batch1::<T>(x)?))?;
    model
        .net
        .decode(&p, f)?
        .value()
        .cast::<f32>()
        .reshape(x.shape())
}

/// Denoise `x` with styles mixed between `ext(y)` and `ext(x)` for each λ.
pub fn mix_sweep<T: Scalar>(
    model: &Model<T>,
    x: &Tensor<f32>,
    y: &Tensor<f32>,
    lambdas: &[f64],
) -> Result<(Vec<MixSweepRow>, Vec<Tensor<f32>>)> {
    let s_n = extract_style(model, x, StyleKind::Noise)?;
    let s_nf = extract_style(model, y, StyleKind::NoiseFree)?;
    let mut rows = Vec::with_capacity(lambdas.len());
    let mut images = Vec::with_capacity(lambdas.len());
    for &lambda in lambdas {
        let mixed = mix_styles(&s_nf, &s_n, lambda)?;
        let out = denoise_with_style(model, x, &mixed)?;
        rows.push(MixSweepRow {
            lambda,
            cos_sq: cosine_sq(&mixed.values, &s_nf.values)?,
            psnr: psnr(&out, y, 1.0)?,
            ssim: ssim(&out, y, 1.0)?,
            psnr_input: psnr(&out, x, 1.0)?,
        });
        images.push(out);
    }
    Ok((rows, images))
}

/// Histogram and moment fit of one channel's feature differences.
#[derive(Clone, Debug, PartialEq)]
pub struct ChannelDiffStats {
    pub channel: usize,
    /// `bins + 1` edges spanning `[−r, r]`.
    pub edges: Vec<f64>,
    pub counts: Vec<u64>,
    pub mean: f64,
    pub std: f64,
    /// L1 distance between the histogram's bin masses and the fitted
    /// Gaussian's density at bin centers times bin width.
    pub residual: f64,
}

pub const DIFF_BINS: usize = 64;

/// Histogram `values` over `[−r, r]` (r = max |value|) and fit a Gaussian by moments.
pub fn diff_histogram(channel: usize, values: &[f64], bins: usize) -> Result<ChannelDiffStats> {
    if values.is_empty() || bins == 0 {
        return Err(Error::Invalid("histogram needs values and bins".into()));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
    let r = values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    // an all-zero channel collapses to one central bin of unit width
    let r = if r > 0.0 { r } else { 0.5 };
    let width = 2.0 * r / bins as f64;
    let edges: Vec<f64> = (0..=bins).map(|i| -r + i as f64 * width).collect();
    let mut counts = vec![0u64; bins];
    for v in values {
        let b = (((v + r) / width).floor() as isize).clamp(0, bins as isize - 1) as usize;
        counts[b] += 1;
    }
    let residual = counts
        .iter()
        .enumerate()
        .map(|(i, &c)| {
            let centre = -r + (i as f64 + 0.5) * width;
            let fit = if std > 0.0 {
                (-(centre - mean).powi(2) / (2.0 * std * std)).exp()
                    / (std * (2.0 * std::f64::consts::PI).sqrt())
                    * width
            } else if (centre - mean).abs() <= width / 2.0 {
                1.0
            } else {
                0.0
            };
            (c as f64 / n - fit).abs()
        })
        .sum();
    Ok(ChannelDiffStats {
        channel,
        edges,
        counts,
        mean,
        std,
        residual,
    })
}

/// Images encoded per tape in [`feature_diff_stats`].
const DIFF_CHUNK: usize = 8;

/// Per-channel statistics of `F_sc − F_e` pooled over `images`, where `F_e` is
/// the encoder output and `F_sc` the style-converted feature under the
/// matching entry of `styles`.
pub fn feature_diff_stats<T: Scalar>(
    model: &Model<T>,
    images: &[Tensor<f32>],
    styles: &[StyleVector],
    bins: usize,
) -> Result<Vec<ChannelDiffStats>> {
    if images.is_empty() || images.len() != styles.len() {
        return Err(Error::Invalid(format!(
            "{} images with {} styles",
            images.len(),
            styles.len()
        )));
    }
    let c = model.cfg().bottleneck_channels();
    let mut per_channel: Vec<Vec<f64>> = vec![Vec::new(); c];
    for (imgs, sts) in images.chunks(DIFF_CHUNK).zip(styles.chunks(DIFF_CHUNK)) {
        let x = Tensor::stack(imgs)?.cast::<T>();
        let tape = Tape::new();
        let p = model.params.bind_frozen(&tape);
        let fe = model.net.encode(&p, tape.constant(x))?;
        let st = tape.constant(StyleVector::to_batch::<T>(sts)?);
        let fsc = model.net.convert_parts(&p, fe, st, MaskMode::Learned)?.out;
        let (a, b) = (fe.value(), fsc.value());
        let s = a.shape().to_vec();
        let hw = s[2] * s[3];
        for i in 0..s[0] {
            for (ch, vals) in per_channel.iter_mut().enumerate() {
                let o = (i * c + ch) * hw;
                vals.extend((o..o + hw).map(|k| b.data()[k].f64() - a.data()[k].f64()));
            }
        }
    }
    per_channel
        .iter()
        .enumerate()
        .map(|(ch, vals)| diff_histogram(ch, vals, bins))
        .collect()
}

/// Class labels used by [`style_analysis`].
pub const CLASS_NOISE_FREE: &str = "noise_free";
pub const CLASS_NOISE: &str = "noise";
pub const CLASS_SAMPLED: &str = "sampled";

/// Style-space structure and feature-difference statistics of a model on
/// paired images.
#[derive(Clone, Debug)]
pub struct StyleAnalysis {
    pub report: SeparationReport,
    pub projection: Projection,
    /// Class whose centroid is nearest the sampled-style centroid.
    pub sampled_nearest: String,
    /// `F_sc − F_e` under sampled styles, per bottleneck channel.
    pub diffs: Vec<ChannelDiffStats>,
}

impl StyleAnalysis {
    /// Channels whose moment-fit residual is at most `tol`.
    pub fn gaussian_channels(&self, tol: f64) -> usize {
        self.diffs.iter().filter(|d| d.residual <= tol).count()
    }

    /// Channels with `|mean| ≤ 0.1·std`.
    pub fn centered_channels(&self) -> usize {
        self.diffs
            .iter()
            .filter(|d| d.mean.abs() <= 0.1 * d.std)
            .count()
    }

    pub fn render(&self) -> String {
        let n = self.diffs.len();
        format!(
            "{}sampled centroid nearest: {}
feature diffs: {}/{n} channels with residual <= 0.05, {}/{n} with |mean| <= 0.1 std
",
            self.report.render(),
            self.sampled_nearest,
            self.gaussian_channels(0.05),
            self.centered_channels()
        )
    }
}

/// Noise-free styles of `clean`, noise styles of `noisy`, as many generator
/// samples (drawn from `seed`), their separation and projection, and the
/// feature differences those samples induce on `noisy`.
pub fn style_analysis<T: Scalar>(
    model: &Model<T>,
    noisy: &[Tensor<f32>],
    clean: &[Tensor<f32>],
    seed: u64,
) -> Result<StyleAnalysis> {
    if noisy.len() != clean.len() {
        return Err(Error::Invalid(format!(
            "{} noisy and {} clean images",
            noisy.len(),
            clean.len()
        )));
    }
    let styles = |imgs: &[Tensor<f32>], kind| -> Result<Vec<StyleVector>> {
        imgs.iter().map(|x| extract_style(model, x, kind)).collect()
    };
    let nf = styles(clean, StyleKind::NoiseFree)?;
    let n = styles(noisy, StyleKind::Noise)?;
    let sampled = sample_styles(model, noisy.len(), &mut Rng::derive(seed, 0x5A))?;
    let values = |v: &[StyleVector]| v.iter().map(|s| s.values.clone()).collect::<Vec<_>>();
    let classes = vec![
        (CLASS_NOISE_FREE.to_string(), values(&nf)),
        (CLASS_NOISE.to_string(), values(&n)),
        (CLASS_SAMPLED.to_string(), values(&sampled)),
    ];
    let report = class_report(&classes)?;
    let projection = pca_project_styles(&classes)?;
    let nearest = nearest_centroid(&report, 2, &[0, 1]).expect("two candidates");
    let diffs = feature_diff_stats(model, noisy, &sampled, DIFF_BINS)?;
    Ok(StyleAnalysis {
        sampled_nearest: report.classes[nearest].name.clone(),
        report,
        projection,
        diffs,
    })
}

fn write_csv(path: &Path, header: &str, lines: impl Iterator<Item = String>) -> Result<()> {
    let mut w = create(path)?;
    write_all(&mut w, format!("{header}\n").as_bytes(), path)?;
    for l in lines {
        write_all(&mut w, format!("{l}\n").as_bytes(), path)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_mix_csv(path: &Path, rows: &[MixSweepRow]) -> Result<()> {
    write_csv(
        path,
        "lambda,cos_sq,psnr,ssim",
        rows.iter()
            .map(|r| format!("{},{:.6},{:.4},{:.6}", r.lambda, r.cos_sq, r.psnr, r.ssim)),
    )
}

pub fn write_proj_csv(path: &Path, proj: &Projection) -> Result<()> {
    write_csv(
        path,
        "class,x,y",
        proj.points
            .iter()
            .map(|(c, x, y)| format!("{},{x:.6},{y:.6}", proj.class_names[*c])),
    )
}

pub fn write_feat_csv(path: &Path, stats: &[ChannelDiffStats]) -> Result<()> {
    write_csv(
        path,
        "channel,mean,std",
        stats
            .iter()
            .map(|s| format!("{},{:.6e},{:.6e}", s.channel, s.mean, s.std)),
    )
}
