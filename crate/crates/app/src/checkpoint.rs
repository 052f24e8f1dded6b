//! Versioned binary array container used for checkpoints and tensor dumps.
//!
//! ```text
//! "DECO" | version u32 | step u64 | count u32 |
//!   count × ( name_len u32 | name | dtype u8 | rank u32 | dims u64×rank |
//!             byte_len u64 | raw little-endian elements )
//! ```

use std::io::Write;
use std::path::Path;

use deco_core::{DType, Scalar, Tensor};

pub const MAGIC: &[u8; 4] = b"DECO";
pub const VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("not a checkpoint (bad magic bytes)")]
    NotACheckpoint,
    #[error("unsupported checkpoint version {found} (expected {VERSION})")]
    UnsupportedVersion { found: u32 },
    #[error("checkpoint truncated while reading {0}")]
    Truncated(String),
    #[error("array `{name}`: {msg}")]
    BadArray { name: String, msg: String },
    #[error("array `{0}` not found")]
    Missing(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct NamedArray {
    pub name: String,
    pub dtype: DType,
    pub shape: Vec<usize>,
    pub bytes: Vec<u8>,
}

impl NamedArray {
    pub fn from_tensor<T: Scalar>(name: impl Into<String>, t: &Tensor<T>) -> Self {
        let mut bytes = Vec::with_capacity(t.len() * T::DTYPE.size_of());
        for &v in t.data() {
            v.write_le(&mut bytes);
        }
        NamedArray {
            name: name.into(),
            dtype: T::DTYPE,
            shape: t.shape().to_vec(),
            bytes,
        }
    }

    /// Decodes the array; its stored type must be `T`.
    pub fn to_tensor<T: Scalar>(&self) -> Result<Tensor<T>, CheckpointError> {
        if self.dtype != T::DTYPE {
            return Err(CheckpointError::BadArray {
                name: self.name.clone(),
                msg: format!("stored as {}, requested {}", self.dtype.name(), T::DTYPE.name()),
            });
        }
        let data = self.bytes.chunks_exact(T::DTYPE.size_of()).map(T::read_le).collect();
        Tensor::new(self.shape.clone(), data).map_err(|e| CheckpointError::BadArray {
            name: self.name.clone(),
            msg: e.to_string(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Checkpoint {
    pub step: u64,
    pub arrays: Vec<NamedArray>,
}

fn dtype_code(d: DType) -> u8 {
    match d {
        DType::F32 => 0,
        DType::F64 => 1,
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8], CheckpointError> {
        if self.buf.len() - self.pos < n {
            return Err(CheckpointError::Truncated(what.to_string()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
}

impl Checkpoint {
    pub fn new(step: u64) -> Self {
        Checkpoint { step, arrays: Vec::new() }
    }

    pub fn push<T: Scalar>(&mut self, name: impl Into<String>, t: &Tensor<T>) {
        self.arrays.push(NamedArray::from_tensor(name, t));
    }

    pub fn get(&self, name: &str) -> Option<&NamedArray> {
        self.arrays.iter().find(|a| a.name == name)
    }

    pub fn tensor<T: Scalar>(&self, name: &str) -> Result<Tensor<T>, CheckpointError> {
        self.get(name)
            .ok_or_else(|| CheckpointError::Missing(name.to_string()))?
            .to_tensor()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&self.step.to_le_bytes());
        out.extend_from_slice(&(self.arrays.len() as u32).to_le_bytes());
        for a in &self.arrays {
            out.extend_from_slice(&(a.name.len() as u32).to_le_bytes());
            out.extend_from_slice(a.name.as_bytes());
            out.push(dtype_code(a.dtype));
            out.extend_from_slice(&(a.shape.len() as u32).to_le_bytes());
            for &d in &a.shape {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            out.extend_from_slice(&(a.bytes.len() as u64).to_le_bytes());
            out.extend_from_slice(&a.bytes);
        }
        out
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self, CheckpointError> {
        if buf.len() < 4 || &buf[..4] != MAGIC {
            return Err(CheckpointError::NotACheckpoint);
        }
        let mut r = Reader { buf, pos: 4 };
        let version = r.u32("version")?;
        if version != VERSION {
            return Err(CheckpointError::UnsupportedVersion { found: version });
        }
        let step = r.u64("step")?;
        let count = r.u32("array count")?;
        let mut arrays = Vec::with_capacity(count as usize);
        for i in 0..count {
            let len = r.u32(&format!("name length of array {i}"))? as usize;
            let name = String::from_utf8(r.take(len, &format!("name of array {i}"))?.to_vec()).map_err(|_| CheckpointError::BadArray {
                name: format!("#{i}"),
                msg: "name is not UTF-8".into(),
            })?;
            let dtype = match r.take(1, &format!("dtype of `{name}`"))?[0] {
                0 => DType::F32,
                1 => DType::F64,
                other => {
                    return Err(CheckpointError::BadArray {
                        name,
                        msg: format!("unknown dtype code {other}"),
                    })
                }
            };
            let rank = r.u32(&format!("rank of `{name}`"))? as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(r.u64(&format!("shape of `{name}`"))? as usize);
            }
            let byte_len = r.u64(&format!("byte length of `{name}`"))? as usize;
            let expected = shape.iter().product::<usize>() * dtype.size_of();
            if byte_len != expected {
                return Err(CheckpointError::BadArray {
                    name,
                    msg: format!("{byte_len} bytes recorded, shape {shape:?} needs {expected}"),
                });
            }
            let bytes = r.take(byte_len, &format!("data of `{name}`"))?.to_vec();
            arrays.push(NamedArray { name, dtype, shape, bytes });
        }
        Ok(Checkpoint { step, arrays })
    }

    /// Writes through a temporary file and renames, so readers never see a
    /// partial checkpoint.
    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir)?;
        }
        let tmp = path.with_extension("tmp");
        {
            let mut f = std::fs::File::create(&tmp)?;
            f.write_all(&self.to_bytes())?;
            f.sync_all()?;
        }
        std::fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}
