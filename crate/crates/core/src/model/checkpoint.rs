//! Checkpoint container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "DSMCL1\n"
//! u32 length, TrainConfig as TOML
//! u32 parameter count
//! per parameter: u32 name length, name, u32 rank, rank x u64 dims
//! per parameter: product(dims) x f64 values, row-major
//! ```

use std::fs;
use std::path::Path;

use crate::autodiff::Tensor;
use crate::config::TrainConfig;
use crate::model::{param_layout, ModelError, ModelParams};
use crate::scalar::Scalar;

pub const CHECKPOINT_MAGIC: &[u8] = b"DSMCL1\n";

fn put_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&(v as u32).to_le_bytes());
}

pub fn write_checkpoint<T: Scalar>(params: &ModelParams<T>) -> Vec<u8> {
    let mut out = CHECKPOINT_MAGIC.to_vec();
    let config = params.config.to_toml();
    put_u32(&mut out, config.len());
    out.extend_from_slice(config.as_bytes());
    let named = params.named_tensors();
    put_u32(&mut out, named.len());
    for (name, t) in &named {
        put_u32(&mut out, name.len());
        out.extend_from_slice(name.as_bytes());
        put_u32(&mut out, t.shape().len());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
    }
    for (_, t) in &named {
        for &v in t.data() {
            out.extend_from_slice(&v.as_f64().to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], ModelError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| ModelError::Checkpoint("truncated file".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize, ModelError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")) as usize)
    }

    fn u64(&mut self) -> Result<u64, ModelError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn text(&mut self) -> Result<&'a str, ModelError> {
        let n = self.u32()?;
        std::str::from_utf8(self.take(n)?).map_err(|e| ModelError::Checkpoint(e.to_string()))
    }
}

/// Parses a checkpoint, checking every stored shape against the layout the
/// embedded config implies.
pub fn read_checkpoint<T: Scalar>(bytes: &[u8]) -> Result<ModelParams<T>, ModelError> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(CHECKPOINT_MAGIC.len())? != CHECKPOINT_MAGIC {
        return Err(ModelError::Checkpoint("bad magic, not a DSMCL1 checkpoint".into()));
    }
    let config = TrainConfig::from_toml(r.text()?)?;
    let layout = param_layout(&config);
    let count = r.u32()?;
    if count != layout.len() {
        return Err(ModelError::ParamCount {
            expected: layout.len(),
            found: count,
        });
    }
    let mut shapes = Vec::with_capacity(count);
    for (name, expected) in &layout {
        let stored = r.text()?;
        if stored != name {
            return Err(ModelError::Checkpoint(format!("expected parameter `{name}`, found `{stored}`")));
        }
        let rank = r.u32()?;
        let dims = (0..rank).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>, _>>()?;
        if &dims != expected {
            return Err(ModelError::Shape {
                name: name.clone(),
                expected: expected.clone(),
                found: dims,
            });
        }
        shapes.push(dims);
    }
    let mut tensors = Vec::with_capacity(count);
    for shape in shapes {
        let len = shape.iter().product();
        let data = (0..len)
            .map(|_| r.take(8).map(|b| T::of(f64::from_le_bytes(b.try_into().expect("8 bytes")))))
            .collect::<Result<Vec<T>, _>>()?;
        tensors.push(Tensor::new(shape, data)?);
    }
    if r.pos != bytes.len() {
        return Err(ModelError::Checkpoint(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    ModelParams::from_tensors(config, tensors)
}

pub fn save_checkpoint<T: Scalar>(params: &ModelParams<T>, path: &Path) -> Result<(), ModelError> {
    fs::write(path, write_checkpoint(params)).map_err(|source| ModelError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn load_checkpoint<T: Scalar>(path: &Path) -> Result<ModelParams<T>, ModelError> {
    let bytes = fs::read(path).map_err(|source| ModelError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    read_checkpoint(&bytes)
}
