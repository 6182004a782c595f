//! Per-head cluster models in one indexed container, and assignment records.
//!
//! ```text
//! "APCL" | version u16 | reserved u16 | count u32
//! { layer u16 | head u16 | offset u64 | len u64 }*   index
//! { JSON model }*
//! ```

use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use super::model::{ClusterAssignment, ClusterModel};
use crate::error::{Error, Result};
use crate::io::{write_atomic, AtomicFile};

const MAGIC: &[u8; 4] = b"APCL";
const VERSION: u16 = 1;

pub fn encode_models(models: &[ClusterModel]) -> Result<Vec<u8>> {
    let blobs = models
        .iter()
        .map(serde_json::to_vec)
        .collect::<std::result::Result<Vec<_>, _>>()?;
    let header_len = 12 + 20 * models.len();
    let mut out = Vec::with_capacity(header_len + blobs.iter().map(Vec::len).sum::<usize>());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&0u16.to_le_bytes());
    out.extend_from_slice(&(models.len() as u32).to_le_bytes());
    let mut offset = header_len as u64;
    for (m, b) in models.iter().zip(&blobs) {
        out.extend_from_slice(&m.head.layer.to_le_bytes());
        out.extend_from_slice(&m.head.head.to_le_bytes());
        out.extend_from_slice(&offset.to_le_bytes());
        out.extend_from_slice(&(b.len() as u64).to_le_bytes());
        offset += b.len() as u64;
    }
    for b in blobs {
        out.extend_from_slice(&b);
    }
    Ok(out)
}

pub fn decode_models(buf: &[u8]) -> Result<Vec<ClusterModel>> {
    if buf.len() < 12 || &buf[..4] != MAGIC {
        return Err(Error::format(0, "not a cluster model container"));
    }
    let version = u16::from_le_bytes([buf[4], buf[5]]);
    if version != VERSION {
        return Err(Error::format(4, format!("unsupported version {version}")));
    }
    let count = u32::from_le_bytes(buf[8..12].try_into().unwrap()) as usize;
    if buf.len() < 12 + 20 * count {
        return Err(Error::format(12, "truncated index"));
    }
    let mut out = Vec::with_capacity(count);
    for i in 0..count {
        let e = &buf[12 + 20 * i..12 + 20 * (i + 1)];
        let offset = u64::from_le_bytes(e[4..12].try_into().unwrap()) as usize;
        let len = u64::from_le_bytes(e[12..20].try_into().unwrap()) as usize;
        let blob = buf
            .get(offset..offset + len)
            .ok_or_else(|| Error::format(offset as u64, format!("model {i} extends past end of file")))?;
        out.push(serde_json::from_slice(blob)?);
    }
    Ok(out)
}

pub fn save_models(path: impl AsRef<Path>, models: &[ClusterModel]) -> Result<()> {
    write_atomic(path, &encode_models(models)?)
}

pub fn load_models(path: impl AsRef<Path>) -> Result<Vec<ClusterModel>> {
    let path = path.as_ref();
    let buf = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_models(&buf)
}

pub fn write_assignments(path: impl AsRef<Path>, rows: &[ClusterAssignment]) -> Result<()> {
    let path = path.as_ref();
    let mut f = AtomicFile::create(path)?;
    for r in rows {
        serde_json::to_writer(&mut f, r)?;
        f.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    f.commit()
}

pub fn read_assignments(path: impl AsRef<Path>) -> Result<Vec<ClusterAssignment>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if !line.trim().is_empty() {
            out.push(
                serde_json::from_str(&line).map_err(|e| Error::Data(format!("{}:{}: {e}", path.display(), n + 1)))?,
            );
        }
    }
    Ok(out)
}
