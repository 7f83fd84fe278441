use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use super::{ModelConfig, ModelParams, Param};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"MEFS";
pub const CHECKPOINT_VERSION: u32 = 1;

fn put_u32(buf: &mut Vec<u8>, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::Checkpoint(format!("{v} does not fit in u32")))?;
    buf.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

pub fn encode(params: &ModelParams, config: &ModelConfig) -> Result<Vec<u8>> {
    let mut buf = Vec::with_capacity(64 + 8 * params.count_values());
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    put_u32(&mut buf, config.growth)?;
    put_u32(&mut buf, config.blocks)?;
    put_u32(&mut buf, config.attention_reduction)?;
    for (name, p) in params.iter() {
        put_u32(&mut buf, name.len())?;
        buf.extend_from_slice(name.as_bytes());
        put_u32(&mut buf, p.dims().len())?;
        for &d in p.dims() {
            put_u32(&mut buf, d)?;
        }
        for v in p.values() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(buf)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end =
            end.ok_or_else(|| Error::Checkpoint(format!("truncated at byte {}", self.pos)))?;
        let out = &self.buf[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<usize> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize)
    }
}

/// Parses a checkpoint. When `expect` is given, the stored configuration must
/// produce the same parameter names.
pub fn decode(bytes: &[u8], expect: Option<&ModelConfig>) -> Result<(ModelParams, ModelConfig)> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(4)? != CHECKPOINT_MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION as usize {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let config = ModelConfig {
        growth: r.u32()?,
        blocks: r.u32()?,
        attention_reduction: r.u32()?,
        ..ModelConfig::default()
    };
    config
        .validate()
        .map_err(|e| Error::Checkpoint(e.to_string()))?;
    let mut map = BTreeMap::new();
    while r.pos < bytes.len() {
        let len = r.u32()?;
        let name = std::str::from_utf8(r.take(len)?)
            .map_err(|_| Error::Checkpoint("parameter name is not UTF-8".into()))?
            .to_string();
        let rank = r.u32()?;
        if rank > 4 {
            return Err(Error::Checkpoint(format!("{name}: rank {rank}")));
        }
        let dims = (0..rank).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
        let count = dims.iter().try_fold(1usize, |a, &d| a.checked_mul(d));
        let count = count
            .filter(|&c| c <= bytes.len() / 8)
            .ok_or_else(|| Error::Checkpoint(format!("{name}: implausible dims {dims:?}")))?;
        let raw = r.take(8 * count)?;
        let values = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        if map
            .insert(name.clone(), Param::new(dims, values)?)
            .is_some()
        {
            return Err(Error::Checkpoint(format!("duplicate parameter {name}")));
        }
    }
    let target = expect.copied().unwrap_or(config);
    if target != config {
        // the names still decide compatibility
        ModelParams::from_map(&target, map.clone())?;
    }
    let params = ModelParams::from_map(&config, map)?;
    Ok((params, config))
}

pub fn save_checkpoint(params: &ModelParams, config: &ModelConfig, path: &Path) -> Result<()> {
    let bytes = encode(params, config)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<(ModelParams, ModelConfig)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes, None)
}

/// Loads a checkpoint that must match `config`.
pub fn load_checkpoint_for(path: &Path, config: &ModelConfig) -> Result<ModelParams> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes, Some(config)).map(|(p, _)| p)
}
