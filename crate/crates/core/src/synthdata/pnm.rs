use std::io::Write;
use std::path::Path;

use crate::binio::{create, write_all};
use crate::error::{Error, Result};
use crate::ndgrad::Tensor;

/// Clamp to [0,1] and quantize to 8 bits, round to nearest; output is
/// interleaved (HWC) for multi-channel images.
pub fn to_bytes_u8(img: &Tensor<f32>) -> Result<Vec<u8>> {
    let s = img.shape();
    if s.len() != 3 {
        return Err(Error::dim(format!("image must be [C,H,W], got {s:?}")));
    }
    let (c, hw) = (s[0], s[1] * s[2]);
    let q = |v: f32| (v.clamp(0.0, 1.0) * 255.0).round() as u8;
    Ok((0..hw)
        .flat_map(|p| (0..c).map(move |ch| q(img.data()[ch * hw + p])))
        .collect())
}

/// Binary PGM (one channel) or PPM (three channels).
pub fn write_pnm(path: &Path, img: &Tensor<f32>) -> Result<()> {
    let s = img.shape();
    let magic = match s.first() {
        Some(1) => "P5",
        Some(3) => "P6",
        _ => {
            return Err(Error::dim(format!(
                "PGM/PPM needs 1 or 3 channels, got {s:?}"
            )))
        }
    };
    let mut w = create(path)?;
    write_all(
        &mut w,
        format!("{magic}\n{} {}\n255\n", s[2], s[1]).as_bytes(),
        path,
    )?;
    write_all(&mut w, &to_bytes_u8(img)?, path)?;
    w.flush().map_err(|e| Error::io(path, e))
}

fn header_token(bytes: &[u8], pos: &mut usize) -> Result<String> {
    loop {
        match bytes.get(*pos) {
            Some(b'#') => {
                while bytes.get(*pos).is_some_and(|&b| b != b'\n') {
                    *pos += 1;
                }
            }
            Some(b) if b.is_ascii_whitespace() => *pos += 1,
            Some(_) => break,
            None => return Err(Error::Format("truncated PGM/PPM header".into())),
        }
    }
    let start = *pos;
    while bytes.get(*pos).is_some_and(|b| !b.is_ascii_whitespace()) {
        *pos += 1;
    }
    Ok(String::from_utf8_lossy(&bytes[start..*pos]).into_owned())
}

/// Parse P5/P6 bytes into a `[C,H,W]` image in [0,1].
pub fn parse_pnm(bytes: &[u8]) -> Result<Tensor<f32>> {
    let mut pos = 0;
    let channels = match header_token(bytes, &mut pos)?.as_str() {
        "P5" => 1,
        "P6" => 3,
        m => return Err(Error::Format(format!("unsupported image magic {m:?}"))),
    };
    let mut num = |what: &str| -> Result<usize> {
        header_token(bytes, &mut pos)?
            .parse()
            .map_err(|_| Error::Format(format!("bad {what} in image header")))
    };
    let (w, h, maxval) = (num("width")?, num("height")?, num("maxval")?);
    if w == 0 || h == 0 || maxval == 0 || maxval > 255 {
        return Err(Error::Format(format!(
            "unsupported image geometry {w}x{h} maxval {maxval}"
        )));
    }
    // exactly one whitespace byte separates header and raster
    pos += 1;
    let n = channels * w * h;
    let raster = bytes
        .get(pos..pos + n)
        .ok_or_else(|| Error::Format("truncated image raster".into()))?;
    let scale = 1.0 / maxval as f32;
    let hw = w * h;
    let mut data = vec![0f32; n];
    for p in 0..hw {
        for ch in 0..channels {
            data[ch * hw + p] = raster[p * channels + ch] as f32 * scale;
        }
    }
    Tensor::new(&[channels, h, w], data)
}

pub fn read_pnm(path: &Path) -> Result<Tensor<f32>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_pnm(&bytes)
}
