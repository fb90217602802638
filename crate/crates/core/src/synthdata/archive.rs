use std::io::{Read, Write};
use std::path::Path;

use super::TrainSample;
use crate::binio::{create, open, read_exact, read_u32, read_u64, read_vec, write_all};
use crate::error::{Error, Result};
use crate::ndgrad::Tensor;

pub const ARCHIVE_VERSION: u32 = 1;
const MAGIC: &[u8; 4] = b"SDAT";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ArchiveHeader {
    pub version: u32,
    pub count: u32,
    pub channels: u32,
    pub height: u32,
    pub width: u32,
}

impl ArchiveHeader {
    fn pixels(&self) -> usize {
        self.channels as usize * self.height as usize * self.width as usize
    }
}

fn u32_of(v: usize, what: &str) -> Result<u32> {
    u32::try_from(v)
        .map_err(|_| Error::Invalid(format!("{what} {v} too large for the archive format")))
}

/// Write samples of one common shape.
pub fn write_archive(path: &Path, samples: &[TrainSample]) -> Result<()> {
    let shape = samples
        .first()
        .map(|s| s.clean.shape().to_vec())
        .unwrap_or_else(|| vec![1, 1, 1]);
    if shape.len() != 3 {
        return Err(Error::dim(format!(
            "samples must be [C,H,W], got {shape:?}"
        )));
    }
    for s in samples {
        if s.clean.shape() != shape.as_slice() || s.noisy.shape() != shape.as_slice() {
            return Err(Error::dim("archive samples must share one shape"));
        }
    }
    let mut w = create(path)?;
    let mut head = Vec::with_capacity(24);
    head.extend_from_slice(MAGIC);
    for v in [ARCHIVE_VERSION, u32_of(samples.len(), "sample count")?] {
        head.extend_from_slice(&v.to_le_bytes());
    }
    for d in &shape {
        head.extend_from_slice(&u32_of(*d, "dimension")?.to_le_bytes());
    }
    write_all(&mut w, &head, path)?;
    let mut buf = Vec::new();
    for s in samples {
        buf.clear();
        buf.extend_from_slice(&s.seed.to_le_bytes());
        buf.extend_from_slice(&s.sigma.to_le_bytes());
        for v in s.clean.data().iter().chain(s.noisy.data()) {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        write_all(&mut w, &buf, path)?;
    }
    w.flush().map_err(|e| crate::error::Error::io(path, e))
}

/// Streaming reader yielding one sample at a time.
pub struct ArchiveReader<R> {
    inner: R,
    header: ArchiveHeader,
    next: u32,
}

impl ArchiveReader<std::io::BufReader<std::fs::File>> {
    pub fn open(path: &Path) -> Result<Self> {
        Self::new(open(path)?)
    }
}

impl<R: Read> ArchiveReader<R> {
    pub fn new(mut inner: R) -> Result<Self> {
        let magic = read_vec(&mut inner, 4, "archive magic")?;
        if magic != MAGIC {
            return Err(Error::Format(format!("bad archive magic {magic:?}")));
        }
        let version = read_u32(&mut inner, "archive version")?;
        if version != ARCHIVE_VERSION {
            return Err(Error::Format(format!(
                "unsupported archive version {version}"
            )));
        }
        let count = read_u32(&mut inner, "sample count")?;
        let channels = read_u32(&mut inner, "channels")?;
        let height = read_u32(&mut inner, "height")?;
        let width = read_u32(&mut inner, "width")?;
        if channels == 0 || height == 0 || width == 0 {
            return Err(Error::Format("archive header has a zero dimension".into()));
        }
        Ok(ArchiveReader {
            inner,
            header: ArchiveHeader {
                version,
                count,
                channels,
                height,
                width,
            },
            next: 0,
        })
    }

    pub fn header(&self) -> ArchiveHeader {
        self.header
    }

    fn read_one(&mut self) -> Result<TrainSample> {
        let h = self.header;
        let seed = read_u64(&mut self.inner, "sample seed")?;
        let mut sb = [0u8; 4];
        read_exact(&mut self.inner, &mut sb, "sample sigma")?;
        let sigma = f32::from_le_bytes(sb);
        let n = h.pixels();
        let shape = [h.channels as usize, h.height as usize, h.width as usize];
        let mut plane = || -> Result<Tensor<f32>> {
            let bytes = read_vec(&mut self.inner, 4 * n, "sample payload")?;
            Tensor::new(
                &shape,
                bytes
                    .chunks_exact(4)
                    .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
                    .collect(),
            )
        };
        let clean = plane()?;
        let noisy = plane()?;
        Ok(TrainSample {
            clean,
            noisy,
            sigma,
            seed,
        })
    }
}

impl<R: Read> Iterator for ArchiveReader<R> {
    type Item = Result<TrainSample>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.next >= self.header.count {
            return None;
        }
        self.next += 1;
        let r = self.read_one();
        if r.is_err() {
            self.next = self.header.count;
        }
        Some(r)
    }
}

pub fn read_archive(path: &Path) -> Result<Vec<TrainSample>> {
    ArchiveReader::open(path)?.collect()
}
