//! `QVIT1` parameter checkpoints.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! b"QVIT1"
//! u32 config_len, config_len bytes of JSON-encoded ModelConfig
//! u32 param_count
//! param_count x { u32 name_len, name (UTF-8), u64 rows, u64 cols, rows*cols f64 }
//! ```

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use super::{Model, ModelConfig, ModelError, Param, ParamStore, Result};

pub const MAGIC: &[u8; 5] = b"QVIT1";

pub fn write_checkpoint<W: Write>(model: &Model, mut w: W) -> Result<()> {
    w.write_all(MAGIC)?;
    let cfg = serde_json::to_vec(&model.config)
        .map_err(|e| ModelError::Format(format!("serialising config: {e}")))?;
    write_u32(&mut w, cfg.len())?;
    w.write_all(&cfg)?;
    write_u32(&mut w, model.params.len())?;
    for p in model.params.iter() {
        write_u32(&mut w, p.name.len())?;
        w.write_all(p.name.as_bytes())?;
        w.write_all(&(p.rows as u64).to_le_bytes())?;
        w.write_all(&(p.cols as u64).to_le_bytes())?;
        for v in &p.values {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<Model> {
    let mut magic = [0u8; 5];
    r.read_exact(&mut magic).map_err(truncated)?;
    if &magic != MAGIC {
        return Err(ModelError::Format(format!("bad magic {magic:?}")));
    }
    let cfg_len = read_u32(&mut r)? as usize;
    let cfg_bytes = read_vec(&mut r, cfg_len)?;
    let config: ModelConfig = serde_json::from_slice(&cfg_bytes)
        .map_err(|e| ModelError::Format(format!("config: {e}")))?;
    let count = read_u32(&mut r)? as usize;
    if count > 10_000 {
        return Err(ModelError::Format(format!("implausible parameter count {count}")));
    }
    let mut params = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = read_u32(&mut r)? as usize;
        let name = String::from_utf8(read_vec(&mut r, name_len)?)
            .map_err(|_| ModelError::Format("parameter name is not UTF-8".into()))?;
        let rows = read_u64(&mut r)? as usize;
        let cols = read_u64(&mut r)? as usize;
        let len = rows
            .checked_mul(cols)
            .filter(|l| *l <= 1 << 28)
            .ok_or_else(|| ModelError::Format(format!("{name}: implausible shape")))?;
        let raw = read_vec(&mut r, len * 8)?;
        let values = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        params.push(Param { name, rows, cols, values });
    }
    let mut rest = [0u8; 1];
    if r.read(&mut rest)? != 0 {
        return Err(ModelError::Format("trailing bytes after last parameter".into()));
    }
    Model::from_parts(config, ParamStore::new(params))
}

pub fn save(model: &Model, path: &Path) -> Result<()> {
    let mut buf = Vec::new();
    write_checkpoint(model, &mut buf)?;
    fs::write(path, buf)?;
    Ok(())
}

pub fn load(path: &Path) -> Result<Model> {
    let bytes = fs::read(path)?;
    read_checkpoint(bytes.as_slice())
}

fn truncated(e: std::io::Error) -> ModelError {
    if e.kind() == std::io::ErrorKind::UnexpectedEof {
        ModelError::Format("truncated checkpoint".into())
    } else {
        e.into()
    }
}

fn write_u32<W: Write>(w: &mut W, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| ModelError::Format("length exceeds u32".into()))?;
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(truncated)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b).map_err(truncated)?;
    Ok(u64::from_le_bytes(b))
}

fn read_vec<R: Read>(r: &mut R, len: usize) -> Result<Vec<u8>> {
    let mut v = vec![0u8; len];
    r.read_exact(&mut v).map_err(truncated)?;
    Ok(v)
}
