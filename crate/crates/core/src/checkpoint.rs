//! TLCP: the binary checkpoint format.
//!
//! Little-endian throughout: `"TLCP"`, u32 version, u32 metadata length, TOML
//! metadata, u32 tensor count, then per tensor u16 name length, name, u8 dtype
//! (0 = f32, 1 = f64), u8 rank, rank × u32 dims, raw row-major data.

use std::path::Path;

use crate::error::{CheckpointError, Error, Result};
use crate::nn::{ParamStore, prefix_matches};
use crate::tensor::Tensor;

pub const MAGIC: [u8; 4] = *b"TLCP";
pub const VERSION: u32 = 1;

const DTYPE_F32: u8 = 0;
const DTYPE_F64: u8 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Dtype {
    F32,
    F64,
}

/// Named tensors plus a metadata document (config echo, config hash, seed, step).
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub meta: toml::Table,
    pub tensors: ParamStore,
}

impl Checkpoint {
    pub fn new(meta: toml::Table, tensors: ParamStore) -> Self {
        Self { meta, tensors }
    }

    pub fn meta_str(&self, key: &str) -> Option<&str> {
        self.meta.get(key).and_then(toml::Value::as_str)
    }

    pub fn meta_int(&self, key: &str) -> Option<i64> {
        self.meta.get(key).and_then(toml::Value::as_integer)
    }

    pub fn kind(&self) -> Option<&str> {
        self.meta_str("kind")
    }

    pub fn config_hash(&self) -> Option<&str> {
        self.meta_str("config_hash")
    }

    /// Fails unless the metadata records `key = expected`.
    pub fn expect_str(&self, key: &str, expected: &str) -> Result<(), CheckpointError> {
        match self.meta_str(key) {
            Some(found) if found == expected => Ok(()),
            Some(found) => Err(CheckpointError::ConfigMismatch(format!(
                "{key}: checkpoint has `{found}`, expected `{expected}`"
            ))),
            None => Err(CheckpointError::ConfigMismatch(format!(
                "{key}: missing from checkpoint metadata"
            ))),
        }
    }

    /// Copies tensors `src_prefix.*` of this checkpoint into every entry of
    /// `dst` under `dst_prefix`. Every destination entry must be present with
    /// the same shape; values are copied, frozen flags are left alone.
    pub fn restore(
        &self,
        dst: &mut ParamStore,
        dst_prefix: &str,
        src_prefix: &str,
    ) -> Result<usize, CheckpointError> {
        let ids = dst.ids_with_prefix(dst_prefix);
        for &id in &ids {
            let full = dst.name(id).to_string();
            let rest = strip(&full, dst_prefix);
            let src_name = crate::nn::join(src_prefix, rest);
            let src = self
                .tensors
                .by_name(&src_name)
                .ok_or_else(|| CheckpointError::MissingTensor(src_name.clone()))?;
            let slot = &mut dst.get_mut(id).tensor;
            if slot.shape() != src.tensor.shape() {
                return Err(CheckpointError::TensorShape {
                    name: src_name,
                    expected: slot.shape().to_vec(),
                    found: src.tensor.shape().to_vec(),
                });
            }
            *slot = src.tensor.clone();
        }
        Ok(ids.len())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        self.to_bytes_as(Dtype::F64)
    }

    /// Serializes with every tensor stored as `dtype`. f32 output is lossy.
    pub fn to_bytes_as(&self, dtype: Dtype) -> Result<Vec<u8>> {
        let meta = toml::to_string(&self.meta)
            .map_err(|e| Error::Config(format!("checkpoint metadata: {e}")))?;
        let mut out = Vec::new();
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&u32_len(meta.len(), "metadata")?.to_le_bytes());
        out.extend_from_slice(meta.as_bytes());
        out.extend_from_slice(&u32_len(self.tensors.len(), "tensor count")?.to_le_bytes());
        for (_, name, p) in self.tensors.iter() {
            let name_len = u16::try_from(name.len())
                .map_err(|_| Error::contract(format!("tensor name too long: {name}")))?;
            out.extend_from_slice(&name_len.to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            let shape = p.tensor.shape();
            let rank = u8::try_from(shape.len())
                .map_err(|_| Error::contract(format!("rank too large for {name}")))?;
            match dtype {
                Dtype::F32 => out.push(DTYPE_F32),
                Dtype::F64 => out.push(DTYPE_F64),
            }
            out.push(rank);
            for &d in shape {
                out.extend_from_slice(&u32_len(d, "dimension")?.to_le_bytes());
            }
            match dtype {
                Dtype::F32 => p
                    .tensor
                    .data()
                    .iter()
                    .for_each(|&v| out.extend_from_slice(&(v as f32).to_le_bytes())),
                Dtype::F64 => p
                    .tensor
                    .data()
                    .iter()
                    .for_each(|&v| out.extend_from_slice(&v.to_le_bytes())),
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CheckpointError> {
        let mut r = Reader { bytes, pos: 0 };
        let magic: [u8; 4] = r.take(4, "magic")?.try_into().expect("4 bytes");
        if magic != MAGIC {
            return Err(CheckpointError::BadMagic(magic));
        }
        let version = r.u32("version")?;
        if version != VERSION {
            return Err(CheckpointError::Version(version));
        }
        let meta_len = r.u32("metadata length")? as usize;
        let meta_text = std::str::from_utf8(r.take(meta_len, "metadata")?)
            .map_err(|e| CheckpointError::Malformed(format!("metadata is not UTF-8: {e}")))?;
        let meta: toml::Table = meta_text
            .parse()
            .map_err(|e| CheckpointError::Malformed(format!("metadata: {e}")))?;
        let count = r.u32("tensor count")?;
        let mut tensors = ParamStore::new();
        for _ in 0..count {
            let name_len = r.u16("tensor name length")? as usize;
            let name = std::str::from_utf8(r.take(name_len, "tensor name")?)
                .map_err(|e| CheckpointError::Malformed(format!("tensor name: {e}")))?
                .to_string();
            let dtype = r.u8("tensor dtype")?;
            let width = match dtype {
                DTYPE_F32 => 4,
                DTYPE_F64 => 8,
                other => {
                    return Err(CheckpointError::Malformed(format!(
                        "tensor `{name}` has unknown dtype {other}"
                    )))
                }
            };
            let rank = r.u8("tensor rank")? as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(r.u32("tensor dims")? as usize);
            }
            let numel = shape
                .iter()
                .try_fold(1usize, |acc, &d| acc.checked_mul(d))
                .ok_or_else(|| CheckpointError::Malformed(format!("tensor `{name}` too large")))?;
            let nbytes = numel
                .checked_mul(width)
                .ok_or_else(|| CheckpointError::Malformed(format!("tensor `{name}` too large")))?;
            let raw = r.take(nbytes, "tensor data")?;
            let data: Vec<f64> = if width == 8 {
                raw.chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                    .collect()
            } else {
                raw.chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
                    .collect()
            };
            let tensor = Tensor::new(shape, data)
                .map_err(|e| CheckpointError::Malformed(format!("tensor `{name}`: {e}")))?;
            tensors
                .insert(name.clone(), tensor, false)
                .map_err(|_| CheckpointError::Malformed(format!("duplicate tensor `{name}`")))?;
        }
        if r.pos != bytes.len() {
            return Err(CheckpointError::Malformed(format!(
                "{} trailing bytes",
                bytes.len() - r.pos
            )));
        }
        Ok(Self { meta, tensors })
    }

    /// Writes through a temporary file in the same directory, then renames.
    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        let tmp = path.with_extension("tlcp.partial");
        std::fs::write(&tmp, &bytes).map_err(|e| Error::io(&tmp, e))?;
        std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => CheckpointError::NotFound(path.display().to_string()).into(),
            _ => Error::io(path, e),
        })?;
        Ok(Self::from_bytes(&bytes)?)
    }
}

fn strip<'a>(name: &'a str, prefix: &str) -> &'a str {
    if prefix.is_empty() {
        return name;
    }
    debug_assert!(prefix_matches(name, prefix));
    name[prefix.len()..].trim_start_matches('.')
}

fn u32_len(n: usize, what: &str) -> Result<u32> {
    u32::try_from(n).map_err(|_| Error::contract(format!("{what} {n} does not fit in u32")))
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &'static str) -> Result<&'a [u8], CheckpointError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or(CheckpointError::Truncated(what))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u8(&mut self, what: &'static str) -> Result<u8, CheckpointError> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &'static str) -> Result<u16, CheckpointError> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self, what: &'static str) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }
}
