//! Image denoiser that separates a learned noise style from content.
//!
//! An encoder built from windowed-attention blocks maps a noisy image to
//! bottleneck features; a style conversion stage re-normalizes those features
//! with a style vector (AdaIN) and fuses them back through a learned mask; a
//! decoder reconstructs the image. Styles come from a shared extractor (noisy
//! or clean images) or from a generator fed with Gaussian noise, which is all
//! inference needs.

pub mod analysis;
mod binio;
pub mod cli;
pub mod error;
pub mod ndgrad;
pub mod nn;
pub mod objective;
pub mod sdidnet;
pub mod swin;
pub mod synthdata;

pub use error::{Error, Result};
