use std::io::{Read, Write};
use std::path::Path;

use crate::binio::{create, open, read_u32, read_u8, read_vec, write_all};
use crate::error::{Error, Result};
use crate::ndgrad::{Scalar, Tensor};

pub const CHECKPOINT_VERSION: u32 = 1;
const MAGIC: &[u8; 4] = b"SDID";
const DTYPE_RAW: u8 = 2;
const CONFIG_KEY: &str = "__config__";

/// One stored value.
#[derive(Clone, Debug, PartialEq)]
pub enum Entry {
    F32(Tensor<f32>),
    F64(Tensor<f64>),
    Raw(Vec<u8>),
}

impl Entry {
    pub fn from_tensor<T: Scalar>(t: &Tensor<T>) -> Entry {
        match T::DTYPE {
            0 => Entry::F32(t.cast()),
            _ => Entry::F64(t.cast()),
        }
    }

    fn dtype(&self) -> u8 {
        match self {
            Entry::F32(_) => 0,
            Entry::F64(_) => 1,
            Entry::Raw(_) => DTYPE_RAW,
        }
    }
}

/// Named tensors plus raw blobs, in insertion order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Checkpoint {
    pub entries: Vec<(String, Entry)>,
}

impl Checkpoint {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: impl Into<String>, entry: Entry) {
        self.entries.push((name.into(), entry));
    }

    pub fn get(&self, name: &str) -> Option<&Entry> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, e)| e)
    }

    /// Tensor entry converted to `T`.
    pub fn tensor<T: Scalar>(&self, name: &str) -> Result<Tensor<T>> {
        match self.get(name) {
            Some(Entry::F32(t)) => Ok(t.cast()),
            Some(Entry::F64(t)) => Ok(t.cast()),
            Some(Entry::Raw(_)) => Err(Error::Format(format!(
                "{name} holds raw bytes, not a tensor"
            ))),
            None => Err(Error::Format(format!("checkpoint has no entry {name}"))),
        }
    }

    pub fn raw(&self, name: &str) -> Option<&[u8]> {
        match self.get(name) {
            Some(Entry::Raw(b)) => Some(b),
            _ => None,
        }
    }

    pub fn set_config(&mut self, text: &str) {
        self.entries.retain(|(n, _)| n != CONFIG_KEY);
        self.entries.insert(
            0,
            (CONFIG_KEY.to_string(), Entry::Raw(text.as_bytes().to_vec())),
        );
    }

    pub fn config(&self) -> Result<&str> {
        let raw = self
            .raw(CONFIG_KEY)
            .ok_or_else(|| Error::Format("checkpoint has no embedded config".into()))?;
        std::str::from_utf8(raw).map_err(|_| Error::Format("embedded config is not UTF-8".into()))
    }

    /// Total scalars across float entries.
    pub fn tensor_numel(&self) -> usize {
        self.entries
            .iter()
            .map(|(_, e)| match e {
                Entry::F32(t) => t.len(),
                Entry::F64(t) => t.len(),
                Entry::Raw(_) => 0,
            })
            .sum()
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(
            &u32::try_from(self.entries.len())
                .map_err(|_| too_big())?
                .to_le_bytes(),
        );
        for (name, e) in &self.entries {
            out.extend_from_slice(
                &u32::try_from(name.len())
                    .map_err(|_| too_big())?
                    .to_le_bytes(),
            );
            out.extend_from_slice(name.as_bytes());
            out.push(e.dtype());
            let dims: Vec<usize> = match e {
                Entry::F32(t) => t.shape().to_vec(),
                Entry::F64(t) => t.shape().to_vec(),
                Entry::Raw(b) => vec![b.len()],
            };
            out.push(u8::try_from(dims.len()).map_err(|_| too_big())?);
            for d in dims {
                out.extend_from_slice(&u32::try_from(d).map_err(|_| too_big())?.to_le_bytes());
            }
            match e {
                Entry::F32(t) => t.data().iter().for_each(|v| v.write_le(&mut out)),
                Entry::F64(t) => t.data().iter().for_each(|v| v.write_le(&mut out)),
                Entry::Raw(b) => out.extend_from_slice(b),
            }
        }
        Ok(out)
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        let magic = read_vec(r, 4, "magic")?;
        if magic != MAGIC {
            return Err(Error::Format(format!("bad checkpoint magic {magic:?}")));
        }
        let version = read_u32(r, "version")?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Format(format!(
                "unsupported checkpoint version {version}"
            )));
        }
        let count = read_u32(r, "tensor count")?;
        let mut ck = Checkpoint::new();
        for _ in 0..count {
            let nlen = read_u32(r, "name length")? as usize;
            let name = String::from_utf8(read_vec(r, nlen, "name")?)
                .map_err(|_| Error::Format("tensor name is not UTF-8".into()))?;
            let dtype = read_u8(r, "dtype")?;
            let ndim = read_u8(r, "ndim")? as usize;
            let dims = (0..ndim)
                .map(|_| read_u32(r, "dims").map(|d| d as usize))
                .collect::<Result<Vec<_>>>()?;
            let n = dims
                .iter()
                .try_fold(1usize, |a, &d| a.checked_mul(d))
                .ok_or_else(too_big)?;
            let entry = match dtype {
                0 => Entry::F32(read_tensor(r, &dims, n, &name)?),
                1 => Entry::F64(read_tensor(r, &dims, n, &name)?),
                DTYPE_RAW => {
                    if ndim != 1 {
                        return Err(Error::Format(format!("raw entry {name} must be 1-D")));
                    }
                    Entry::Raw(read_vec(r, n, &name)?)
                }
                d => return Err(Error::Format(format!("unknown dtype {d} for {name}"))),
            };
            ck.entries.push((name, entry));
        }
        let mut rest = [0u8; 1];
        if r.read(&mut rest)
            .map_err(|e| Error::Format(e.to_string()))?
            != 0
        {
            return Err(Error::Format("trailing bytes after checkpoint".into()));
        }
        Ok(ck)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = create(path)?;
        write_all(&mut w, &self.to_bytes()?, path)?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read_from(&mut open(path)?)
    }
}

fn read_tensor<R: Read, T: Scalar>(
    r: &mut R,
    dims: &[usize],
    n: usize,
    name: &str,
) -> Result<Tensor<T>> {
    let bytes = read_vec(r, n.checked_mul(T::BYTES).ok_or_else(too_big)?, name)?;
    let data = bytes.chunks_exact(T::BYTES).map(T::read_le).collect();
    Tensor::new(dims, data).map_err(|e| Error::Format(format!("{name}: {e}")))
}

fn too_big() -> Error {
    Error::Format("size does not fit the checkpoint format".into())
}
