//! Parameter checkpoints: a JSON config block followed by a named tensor table.
//!
//! ```text
//! "APCK" | version u16 | dtype u8 | reserved u8 | config_len u32 | config JSON
//! tensor_count u32 | { name_len u16 | name | rank u8 | dims u32 x rank | data }*
//! ```

use std::io::Write;
use std::path::Path;

use serde_json::Value;

use super::{ParamSet, Real, Tensor};
use crate::error::{Error, Result};
use crate::io::AtomicFile;

const MAGIC: &[u8; 4] = b"APCK";
const VERSION: u16 = 1;

pub fn encode<T: Real, P: ParamSet<T>>(config: &Value, params: &P) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.push(T::DTYPE);
    out.push(0);
    let cfg = serde_json::to_vec(config)?;
    out.extend_from_slice(&(cfg.len() as u32).to_le_bytes());
    out.extend_from_slice(&cfg);
    let mut count = 0u32;
    params.visit(&mut |_, _| count += 1);
    out.extend_from_slice(&count.to_le_bytes());
    params.visit(&mut |name, t| {
        out.extend_from_slice(&(name.len() as u16).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(t.shape.len() as u8);
        for &d in &t.shape {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &x in &t.data {
            x.write_le(&mut out);
        }
    });
    Ok(out)
}

pub fn save<T: Real, P: ParamSet<T>>(path: impl AsRef<Path>, config: &Value, params: &P) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode(config, params)?;
    let mut f = AtomicFile::create(path)?;
    f.write_all(&bytes).map_err(|e| Error::io(path, e))?;
    f.commit()
}

/// A decoded checkpoint prior to binding onto a concrete parameter set.
#[derive(Debug, Clone)]
pub struct Checkpoint<T> {
    pub config: Value,
    pub tensors: Vec<(String, Tensor<T>)>,
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::format(self.pos as u64, format!("truncated {what}")));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
}

pub fn decode<T: Real>(buf: &[u8]) -> Result<Checkpoint<T>> {
    let mut c = Cursor { buf, pos: 0 };
    if c.take(4, "magic")? != MAGIC {
        return Err(Error::format(0, "bad magic, expected APCK"));
    }
    let version = u16::from_le_bytes(c.take(2, "version")?.try_into().unwrap());
    if version != VERSION {
        return Err(Error::format(4, format!("unsupported version {version}")));
    }
    let dtype = c.take(2, "dtype")?[0];
    if dtype != T::DTYPE {
        return Err(Error::format(6, format!("dtype tag {dtype}, expected {}", T::DTYPE)));
    }
    let cfg_len = c.u32("config length")? as usize;
    let cfg_at = c.pos;
    let config: Value = serde_json::from_slice(c.take(cfg_len, "config")?)
        .map_err(|e| Error::format(cfg_at as u64, format!("config block: {e}")))?;
    let count = c.u32("tensor count")?;
    let mut tensors = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let at = c.pos;
        let name_len = u16::from_le_bytes(c.take(2, "name length")?.try_into().unwrap()) as usize;
        let name = std::str::from_utf8(c.take(name_len, "name")?)
            .map_err(|_| Error::format(at as u64, "tensor name is not UTF-8"))?
            .to_string();
        let rank = c.take(1, "rank")?[0] as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(c.u32("dimension")? as usize);
        }
        let n: usize = shape.iter().product();
        let raw = c.take(n * T::BYTES, "tensor data")?;
        let data = raw.chunks_exact(T::BYTES).map(T::read_le).collect();
        tensors.push((name, Tensor { shape, data }));
    }
    if c.pos != buf.len() {
        return Err(Error::format(c.pos as u64, "trailing bytes after tensor table"));
    }
    Ok(Checkpoint { config, tensors })
}

pub fn load<T: Real>(path: impl AsRef<Path>) -> Result<Checkpoint<T>> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}

impl<T: Real> Checkpoint<T> {
    /// Copies tensors onto `params`, requiring identical names and shapes.
    pub fn bind<P: ParamSet<T>>(&self, params: &mut P) -> Result<()> {
        let mut idx = 0;
        let mut err = None;
        params.visit_mut(&mut |name, t| {
            if err.is_some() {
                return;
            }
            match self.tensors.get(idx) {
                Some((n, src)) if n == name && src.shape == t.shape => t.data.copy_from_slice(&src.data),
                Some((n, src)) => {
                    err = Some(Error::Config(format!(
                        "checkpoint tensor {n} {:?} does not match {name} {:?}",
                        src.shape, t.shape
                    )))
                }
                None => err = Some(Error::Config(format!("checkpoint lacks tensor {name}"))),
            }
            idx += 1;
        });
        if let Some(e) = err {
            return Err(e);
        }
        if idx != self.tensors.len() {
            return Err(Error::Config(format!(
                "checkpoint has {} tensors, model has {idx}",
                self.tensors.len()
            )));
        }
        Ok(())
    }
}
