//! Binary weight container.
//!
//! ```text
//! "CGNA"  u32 version  u32 n  <n bytes of JSON ModelConfig>
//! u32 tensor_count
//! per tensor: u32 name_len, name, u32 ndim, u32 dims[ndim], f32 data
//! ```
//! All integers and floats little-endian.

use std::io::{Read, Write};
use std::path::Path;

use super::config::ModelConfig;
use super::params::ParamSet;
use super::FusionModel;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

const MAGIC: &[u8; 4] = b"CGNA";
pub const CHECKPOINT_VERSION: u32 = 1;

pub fn write_checkpoint(model: &FusionModel<f32>, out: &mut impl Write) -> std::io::Result<()> {
    let config = serde_json::to_vec(model.config()).expect("config serializes");
    out.write_all(MAGIC)?;
    out.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    out.write_all(&(config.len() as u32).to_le_bytes())?;
    out.write_all(&config)?;
    out.write_all(&(model.params().len() as u32).to_le_bytes())?;
    for (name, t) in model.params().iter() {
        out.write_all(&(name.len() as u32).to_le_bytes())?;
        out.write_all(name.as_bytes())?;
        out.write_all(&(t.shape().len() as u32).to_le_bytes())?;
        for &d in t.shape() {
            out.write_all(&(d as u32).to_le_bytes())?;
        }
        let mut buf = Vec::with_capacity(t.numel() * 4);
        for v in t.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        out.write_all(&buf)?;
    }
    Ok(())
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    origin: &'a str,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::format(
                self.origin,
                format!("truncated at byte {} while reading {what}", self.pos),
            ));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }
}

/// Decodes a checkpoint and validates it against the layout its config
/// implies. `origin` names the source in error messages.
pub fn read_checkpoint(bytes: &[u8], origin: &str) -> Result<FusionModel<f32>> {
    let mut c = Cursor { bytes, pos: 0, origin };
    if c.take(4, "magic")? != MAGIC {
        return Err(Error::format(origin, "not a checkpoint (bad magic)"));
    }
    let version = c.u32("version")?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::format(
            origin,
            format!("unsupported checkpoint version {version}"),
        ));
    }
    let n = c.u32("config length")? as usize;
    let config: ModelConfig = serde_json::from_slice(c.take(n, "config")?).map_err(|e| Error::Json {
        path: origin.to_string(),
        source: e,
    })?;
    let count = c.u32("tensor count")? as usize;
    let mut params = ParamSet::default();
    for _ in 0..count {
        let len = c.u32("name length")? as usize;
        let name = std::str::from_utf8(c.take(len, "name")?)
            .map_err(|_| Error::format(origin, "tensor name is not UTF-8"))?
            .to_string();
        let ndim = c.u32("rank")? as usize;
        let shape = (0..ndim)
            .map(|_| c.u32("dimension").map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let numel: usize = shape.iter().product();
        let raw = c.take(numel * 4, &name)?;
        let data = raw
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")))
            .collect();
        params.push(name, Tensor::new(shape, data)?);
    }
    if c.pos != bytes.len() {
        return Err(Error::format(
            origin,
            format!("{} trailing bytes after the last tensor", bytes.len() - c.pos),
        ));
    }
    FusionModel::from_params(config, params)
}

pub fn save_checkpoint(model: &FusionModel<f32>, path: &Path) -> Result<()> {
    let mut buf = Vec::new();
    write_checkpoint(model, &mut buf).map_err(|e| Error::io(path, e))?;
    std::fs::write(path, buf).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<FusionModel<f32>> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    read_checkpoint(&bytes, &path.display().to_string())
}
