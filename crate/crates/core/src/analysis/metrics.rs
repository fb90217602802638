use crate::error::{Error, Result};
use crate::ndgrad::{Scalar, Tensor};

/// Cap for identical images.
pub const PSNR_CAP: f64 = 99.0;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;
pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;

fn same_shape<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<()> {
    if a.shape() != b.shape() || a.is_empty() {
        return Err(Error::dim(format!(
            "cannot compare {:?} with {:?}",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

pub fn mse<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<f64> {
    same_shape(a, b)?;
    let s: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x.f64() - y.f64()).powi(2))
        .sum();
    Ok(s / a.len() as f64)
}

/// `10·log10(peak²/MSE)` over all elements, [`PSNR_CAP`] when the images agree.
pub fn psnr<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, peak: f64) -> Result<f64> {
    let e = mse(a, b)?;
    if e == 0.0 {
        return Ok(PSNR_CAP);
    }
    Ok((10.0 * (peak * peak / e).log10()).min(PSNR_CAP))
}

fn gaussian_window() -> Vec<f64> {
    let r = (SSIM_WINDOW / 2) as f64;
    let g: Vec<f64> = (0..SSIM_WINDOW)
        .map(|i| (-(i as f64 - r).powi(2) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp())
        .collect();
    let s: f64 = g.iter().sum();
    g.into_iter().map(|v| v / s).collect()
}

/// Separable weighted sum of `plane` over every valid window position.
fn filter_valid(plane: &[f64], h: usize, w: usize, g: &[f64]) -> Vec<f64> {
    let k = g.len();
    let (oh, ow) = (h + 1 - k, w + 1 - k);
    let mut rows = vec![0.0; h * ow];
    for i in 0..h {
        for j in 0..ow {
            rows[i * ow + j] = (0..k).map(|t| g[t] * plane[i * w + j + t]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for i in 0..oh {
        for j in 0..ow {
            out[i * ow + j] = (0..k).map(|t| g[t] * rows[(i + t) * ow + j]).sum();
        }
    }
    out
}

/// Mean SSIM with an 11×11 Gaussian window (σ=1.5) over valid positions,
/// averaged across channels. Accepts `[H,W]`, `[C,H,W]` or `[1,C,H,W]`.
pub fn ssim<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, peak: f64) -> Result<f64> {
    same_shape(a, b)?;
    let s = a.shape();
    let (c, h, w) = match *s {
        [h, w] => (1, h, w),
        [c, h, w] => (c, h, w),
        [1, c, h, w] => (c, h, w),
        _ => return Err(Error::dim(format!("SSIM expects an image, got {s:?}"))),
    };
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::dim(format!(
            "SSIM needs at least {SSIM_WINDOW}×{SSIM_WINDOW}, got {h}×{w}"
        )));
    }
    let g = gaussian_window();
    let c1 = (SSIM_K1 * peak).powi(2);
    let c2 = (SSIM_K2 * peak).powi(2);
    let (av, bv) = (a.to_f64_vec(), b.to_f64_vec());
    let mut total = 0.0;
    let mut count = 0usize;
    for ch in 0..c {
        let x = &av[ch * h * w..(ch + 1) * h * w];
        let y = &bv[ch * h * w..(ch + 1) * h * w];
        let prod = |f: &dyn Fn(f64, f64) -> f64| -> Vec<f64> {
            x.iter().zip(y).map(|(p, q)| f(*p, *q)).collect()
        };
        let mx = filter_valid(x, h, w, &g);
        let my = filter_valid(y, h, w, &g);
        let mxx = filter_valid(&prod(&|p, _| p * p), h, w, &g);
        let myy = filter_valid(&prod(&|_, q| q * q), h, w, &g);
        let mxy = filter_valid(&prod(&|p, q| p * q), h, w, &g);
        for i in 0..mx.len() {
            let (ux, uy) = (mx[i], my[i]);
            let vx = mxx[i] - ux * ux;
            let vy = myy[i] - uy * uy;
            let cov = mxy[i] - ux * uy;
            total += ((2.0 * ux * uy + c1) * (2.0 * cov + c2))
                / ((ux * ux + uy * uy + c1) * (vx + vy + c2));
        }
        count += mx.len();
    }
    Ok(total / count as f64)
}
