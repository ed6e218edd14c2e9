//! Single-file binary checkpoints.
//!
//! Layout, little-endian: magic `TFGCKPT\0`, `u32` format version, the
//! 64-byte hex config hash, `u32`-length-prefixed config JSON, `u32` tensor
//! count, then per tensor a length-prefixed UTF-8 name, `u32` rank, `u64`
//! dims and raw `f64` values.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use tfgc_autograd::Tensor;

use crate::config::RunConfig;
use crate::error::{io_err, Error, Result};
use crate::model::{Detector, Preprocessor};

pub const MAGIC: &[u8; 8] = b"TFGCKPT\0";
pub const FORMAT_VERSION: u32 = 1;

fn put_u32(buf: &mut Vec<u8>, v: u32) {
    buf.extend_from_slice(&v.to_le_bytes());
}

fn put_bytes(buf: &mut Vec<u8>, b: &[u8]) {
    put_u32(buf, b.len() as u32);
    buf.extend_from_slice(b);
}

pub fn encode(model: &Detector) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    put_u32(&mut buf, FORMAT_VERSION);
    buf.extend_from_slice(model.config.hash().as_bytes());
    put_bytes(&mut buf, serde_json::to_string(&model.config)?.as_bytes());
    put_u32(&mut buf, model.store.len() as u32);
    for (name, value) in model.store.names().iter().zip(model.store.values()) {
        put_bytes(&mut buf, name.as_bytes());
        put_u32(&mut buf, value.ndim() as u32);
        for &d in value.shape() {
            buf.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for &v in value.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(buf)
}

/// Writes atomically via a sibling temporary file.
pub fn save(model: &Detector, path: &Path) -> Result<()> {
    let bytes = encode(model)?;
    let tmp = path.with_extension("tmp");
    let mut f = fs::File::create(&tmp).map_err(io_err(&tmp))?;
    f.write_all(&bytes).map_err(io_err(&tmp))?;
    f.sync_all().map_err(io_err(&tmp))?;
    fs::rename(&tmp, path).map_err(io_err(path))
}

struct Cursor<'a> {
    data: &'a [u8],
}

impl Cursor<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        if self.data.len() < n {
            return Err(Error::Schema("truncated checkpoint".into()));
        }
        let (head, rest) = self.data.split_at(n);
        self.data = rest;
        Ok(head)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::Schema("non-UTF-8 string in checkpoint".into()))
    }
}

/// Parses a checkpoint into its config and named tensors.
pub fn decode(bytes: &[u8]) -> Result<(RunConfig, Vec<(String, Tensor)>)> {
    let mut c = Cursor { data: bytes };
    if c.take(8)? != MAGIC {
        return Err(Error::Schema("not a checkpoint file".into()));
    }
    let version = c.u32()?;
    if version != FORMAT_VERSION {
        return Err(Error::Schema(format!("checkpoint format {version}, expected {FORMAT_VERSION}")));
    }
    let hash = String::from_utf8_lossy(c.take(64)?).into_owned();
    let config: RunConfig = serde_json::from_str(&c.string()?)?;
    if config.hash() != hash {
        return Err(Error::Schema("config hash does not match embedded config".into()));
    }
    let count = c.u32()? as usize;
    let mut tensors = Vec::with_capacity(count);
    for _ in 0..count {
        let name = c.string()?;
        let rank = c.u32()? as usize;
        let shape = (0..rank).map(|_| c.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let n: usize = shape.iter().product();
        let raw = c.take(n * 8)?;
        let data = raw
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
            .collect();
        tensors.push((name, Tensor::new(&shape, data)?));
    }
    if !c.data.is_empty() {
        return Err(Error::Schema("trailing bytes after checkpoint".into()));
    }
    Ok((config, tensors))
}

/// Rebuilds the detector described by a checkpoint.
pub fn load(path: &Path) -> Result<(Detector, Preprocessor)> {
    let mut bytes = Vec::new();
    fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(io_err(path))?;
    restore(&bytes)
}

pub fn restore(bytes: &[u8]) -> Result<(Detector, Preprocessor)> {
    let (config, tensors) = decode(bytes)?;
    let pre = Preprocessor::from_config(&config)?;
    let mut model = Detector::new(&config, pre.feature_dim())?;
    if tensors.len() != model.store.len() {
        return Err(Error::Schema(format!(
            "checkpoint holds {} tensors, model has {}",
            tensors.len(),
            model.store.len()
        )));
    }
    for (name, value) in tensors {
        let id = model
            .store
            .find(&name)
            .ok_or_else(|| Error::Schema(format!("unknown parameter {name}")))?;
        if model.store.get(id).shape() != value.shape() {
            return Err(Error::Schema(format!(
                "{name}: checkpoint shape {:?}, model shape {:?}",
                value.shape(),
                model.store.get(id).shape()
            )));
        }
        model.store.set(id, value);
    }
    Ok((model, pre))
}
