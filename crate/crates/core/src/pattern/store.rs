//! APTN: a little-endian, fixed-record binary store of attention patterns.
//!
//! ```text
//! header (24 bytes): "APTN" | version u16 | n u16 | eps f64 | count u64
//! record:            model_id [u8; 16] | layer u16 | head u16 | task u8 |
//!                    correct u8 (0, 1, 2 = absent) | scaled u8 | reserved u8 |
//!                    sample_id u64 | n(n+1)/2 x f32
//! ```

use std::fs::File;
use std::io::{BufReader, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use super::{tri_len, AttentionPattern, PatternMeta, DEFAULT_EPS};
use crate::error::{Error, Result};
use crate::io::AtomicFile;
use crate::miner::TaskKind;

pub const MAGIC: &[u8; 4] = b"APTN";
pub const VERSION: u16 = 1;
pub const HEADER_LEN: u64 = 24;
const META_LEN: usize = 32;
const MODEL_ID_LEN: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StoreHeader {
    pub n: usize,
    pub eps: f64,
    pub count: u64,
}

impl StoreHeader {
    pub fn record_len(&self) -> u64 {
        (META_LEN + 4 * tri_len(self.n)) as u64
    }

    fn encode(&self) -> [u8; HEADER_LEN as usize] {
        let mut buf = [0u8; HEADER_LEN as usize];
        buf[0..4].copy_from_slice(MAGIC);
        buf[4..6].copy_from_slice(&VERSION.to_le_bytes());
        buf[6..8].copy_from_slice(&(self.n as u16).to_le_bytes());
        buf[8..16].copy_from_slice(&self.eps.to_le_bytes());
        buf[16..24].copy_from_slice(&self.count.to_le_bytes());
        buf
    }

    fn decode(buf: &[u8; HEADER_LEN as usize]) -> Result<Self> {
        if &buf[0..4] != MAGIC {
            return Err(Error::format(0, "bad magic, expected APTN"));
        }
        let version = u16::from_le_bytes([buf[4], buf[5]]);
        if version != VERSION {
            return Err(Error::format(4, format!("unsupported version {version}")));
        }
        let n = u16::from_le_bytes([buf[6], buf[7]]) as usize;
        if n == 0 {
            return Err(Error::format(6, "pattern size 0"));
        }
        let eps = f64::from_le_bytes(buf[8..16].try_into().unwrap());
        let count = u64::from_le_bytes(buf[16..24].try_into().unwrap());
        Ok(StoreHeader { n, eps, count })
    }
}

/// Streaming writer; the record count is patched into the header on `finish`.
pub struct StoreWriter {
    file: AtomicFile,
    header: StoreHeader,
    path: PathBuf,
    buf: Vec<u8>,
}

impl StoreWriter {
    pub fn create(path: impl AsRef<Path>, n: usize, eps: f64) -> Result<Self> {
        if n == 0 || n > u16::MAX as usize {
            return Err(Error::Config(format!("pattern size {n} not representable")));
        }
        let path = path.as_ref().to_path_buf();
        let mut file = AtomicFile::create(&path)?;
        let header = StoreHeader { n, eps, count: 0 };
        file.write_all(&header.encode())
            .map_err(|e| Error::io(&path, e))?;
        Ok(StoreWriter {
            file,
            header,
            path,
            buf: Vec::new(),
        })
    }

    pub fn append(&mut self, p: &AttentionPattern) -> Result<()> {
        if p.n != self.header.n {
            return Err(Error::Contract(format!(
                "store holds size {} patterns, got size {}",
                self.header.n, p.n
            )));
        }
        let id = p.model_id.as_bytes();
        if id.len() > MODEL_ID_LEN {
            return Err(Error::Contract(format!(
                "model id '{}' longer than {MODEL_ID_LEN} bytes",
                p.model_id
            )));
        }
        self.buf.clear();
        let mut id_block = [0u8; MODEL_ID_LEN];
        id_block[..id.len()].copy_from_slice(id);
        self.buf.extend_from_slice(&id_block);
        self.buf.extend_from_slice(&p.layer.to_le_bytes());
        self.buf.extend_from_slice(&p.head.to_le_bytes());
        self.buf.push(p.meta.task.code());
        self.buf.push(match p.meta.correct {
            Some(false) => 0,
            Some(true) => 1,
            None => 2,
        });
        self.buf.push(p.meta.scaled as u8);
        self.buf.push(0);
        self.buf.extend_from_slice(&p.meta.sample_id.to_le_bytes());
        for v in &p.values {
            self.buf.extend_from_slice(&v.to_le_bytes());
        }
        self.file
            .write_all(&self.buf)
            .map_err(|e| Error::io(&self.path, e))?;
        self.header.count += 1;
        Ok(())
    }

    pub fn count(&self) -> u64 {
        self.header.count
    }

    pub fn finish(mut self) -> Result<u64> {
        let count = self.header.count;
        let header = self.header.encode();
        let path = self.path.clone();
        let w = self.file.writer();
        w.flush().map_err(|e| Error::io(&path, e))?;
        w.seek(SeekFrom::Start(0)).map_err(|e| Error::io(&path, e))?;
        w.write_all(&header).map_err(|e| Error::io(&path, e))?;
        self.file.commit()?;
        Ok(count)
    }
}

/// Streaming reader over an APTN file; also supports random access.
pub struct StoreReader {
    reader: BufReader<File>,
    header: StoreHeader,
    next: u64,
    payload: Vec<u8>,
}

impl StoreReader {
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let len = file.metadata().map_err(|e| Error::io(path, e))?.len();
        let mut reader = BufReader::new(file);
        let mut head = [0u8; HEADER_LEN as usize];
        if len < HEADER_LEN {
            return Err(Error::format(len, "truncated header"));
        }
        reader.read_exact(&mut head).map_err(|e| Error::io(path, e))?;
        let header = StoreHeader::decode(&head)?;
        let expected = HEADER_LEN + header.count * header.record_len();
        if len < expected {
            let whole = (len - HEADER_LEN) / header.record_len();
            let offset = HEADER_LEN + whole * header.record_len();
            return Err(Error::format(
                offset,
                format!("truncated record {whole} of {}", header.count),
            ));
        }
        if len > expected {
            return Err(Error::format(expected, "trailing bytes after last record"));
        }
        Ok(StoreReader {
            reader,
            header,
            next: 0,
            payload: Vec::new(),
        })
    }

    pub fn header(&self) -> StoreHeader {
        self.header
    }

    pub fn len(&self) -> u64 {
        self.header.count
    }

    pub fn is_empty(&self) -> bool {
        self.header.count == 0
    }

    /// Reads record `index` directly.
    pub fn read_at(&mut self, index: u64) -> Result<AttentionPattern> {
        if index >= self.header.count {
            return Err(Error::Data(format!(
                "record {index} out of range ({} records)",
                self.header.count
            )));
        }
        let offset = HEADER_LEN + index * self.header.record_len();
        self.reader
            .seek(SeekFrom::Start(offset))
            .map_err(|e| Error::format(offset, e.to_string()))?;
        self.next = index;
        self.read_next()
    }

    fn read_next(&mut self) -> Result<AttentionPattern> {
        let offset = HEADER_LEN + self.next * self.header.record_len();
        let mut meta = [0u8; META_LEN];
        self.reader
            .read_exact(&mut meta)
            .map_err(|e| Error::format(offset, format!("record header: {e}")))?;
        let cells = tri_len(self.header.n);
        self.payload.resize(cells * 4, 0);
        self.reader
            .read_exact(&mut self.payload)
            .map_err(|e| Error::format(offset + META_LEN as u64, format!("payload: {e}")))?;
        self.next += 1;

        let id_end = meta[..MODEL_ID_LEN]
            .iter()
            .position(|&b| b == 0)
            .unwrap_or(MODEL_ID_LEN);
        let model_id = std::str::from_utf8(&meta[..id_end])
            .map_err(|_| Error::format(offset, "model id is not UTF-8"))?
            .to_string();
        let layer = u16::from_le_bytes([meta[16], meta[17]]);
        let head = u16::from_le_bytes([meta[18], meta[19]]);
        let task = TaskKind::from_code(meta[20])
            .ok_or_else(|| Error::format(offset + 20, format!("unknown task code {}", meta[20])))?;
        let correct = match meta[21] {
            0 => Some(false),
            1 => Some(true),
            2 => None,
            other => return Err(Error::format(offset + 21, format!("bad correct flag {other}"))),
        };
        let scaled = match meta[22] {
            0 => false,
            1 => true,
            other => return Err(Error::format(offset + 22, format!("bad scaled flag {other}"))),
        };
        let sample_id = u64::from_le_bytes(meta[24..32].try_into().unwrap());
        let values: Vec<f32> = self
            .payload
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        let meta = PatternMeta {
            task,
            sample_id,
            correct,
            scaled,
        };
        AttentionPattern::new(model_id, layer, head, self.header.n, values, meta).map_err(|e| {
            Error::format(offset + META_LEN as u64, format!("invalid payload: {e}"))
        })
    }
}

impl Iterator for StoreReader {
    type Item = Result<AttentionPattern>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.next >= self.header.count {
            return None;
        }
        Some(self.read_next())
    }
}

/// Writes all patterns (which must share one size) and returns the count.
pub fn write_store(patterns: &[AttentionPattern], path: impl AsRef<Path>) -> Result<u64> {
    write_store_with_eps(patterns, path, DEFAULT_EPS)
}

pub fn write_store_with_eps(
    patterns: &[AttentionPattern],
    path: impl AsRef<Path>,
    eps: f64,
) -> Result<u64> {
    let n = patterns.first().map(|p| p.n).unwrap_or(1);
    let mut w = StoreWriter::create(path, n, eps)?;
    for p in patterns {
        w.append(p)?;
    }
    w.finish()
}

pub fn read_store(path: impl AsRef<Path>) -> Result<Vec<AttentionPattern>> {
    StoreReader::open(path)?.collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pattern(n: usize, seed: u64, task: TaskKind) -> AttentionPattern {
        let mut x = seed | 1;
        let values = (0..tri_len(n))
            .map(|_| {
                x ^= x << 13;
                x ^= x >> 7;
                x ^= x << 17;
                (x >> 40) as f32 / (1u64 << 24) as f32
            })
            .collect();
        let meta = PatternMeta::new(task, seed, Some(seed.is_multiple_of(2)));
        AttentionPattern::new(format!("lm-{}", seed % 7), (seed % 5) as u16, 3, n, values, meta)
            .unwrap()
    }

    #[test]
    fn three_patterns_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.aptn");
        let pats: Vec<_> = (0..3).map(|s| pattern(8, s, TaskKind::EndOfLine)).collect();
        assert_eq!(write_store(&pats, &path).unwrap(), 3);
        assert_eq!(read_store(&path).unwrap(), pats);
        let mut r = StoreReader::open(&path).unwrap();
        assert_eq!(r.read_at(2).unwrap(), pats[2]);
        assert_eq!(r.read_at(0).unwrap(), pats[0]);
    }

    #[test]
    fn empty_store_is_header_only() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("e.aptn");
        assert_eq!(write_store(&[], &path).unwrap(), 0);
        assert_eq!(std::fs::metadata(&path).unwrap().len(), HEADER_LEN);
        assert!(read_store(&path).unwrap().is_empty());
    }

    #[test]
    fn noise_meta_survives() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("n.aptn");
        let p = pattern(4, 9, TaskKind::Noise);
        assert_eq!(p.meta.correct, None);
        write_store(std::slice::from_ref(&p), &path).unwrap();
        assert_eq!(read_store(&path).unwrap()[0], p);
    }

    #[test]
    fn corrupt_magic_and_truncation() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.aptn");
        let pats: Vec<_> = (0..2).map(|s| pattern(8, s, TaskKind::Identifier)).collect();
        write_store(&pats, &path).unwrap();
        let good = std::fs::read(&path).unwrap();

        let mut bad = good.clone();
        bad[0] = b'X';
        std::fs::write(&path, &bad).unwrap();
        match StoreReader::open(&path) {
            Err(Error::Format { offset, .. }) => assert_eq!(offset, 0),
            other => panic!("expected format error, got {:?}", other.map(|_| ())),
        }

        let record = HEADER_LEN as usize + META_LEN + 4 * tri_len(8);
        std::fs::write(&path, &good[..record + 10]).unwrap();
        match StoreReader::open(&path) {
            Err(Error::Format { offset, message }) => {
                assert_eq!(offset, record as u64);
                assert!(message.contains("truncated"));
            }
            other => panic!("expected format error, got {:?}", other.map(|_| ())),
        }

        std::fs::write(&path, &good[..10]).unwrap();
        assert!(matches!(StoreReader::open(&path), Err(Error::Format { .. })));
    }

    #[test]
    fn rejects_mixed_sizes() {
        let dir = tempfile::tempdir().unwrap();
        let pats = vec![pattern(4, 1, TaskKind::Identifier), pattern(8, 2, TaskKind::Identifier)];
        assert!(write_store(&pats, dir.path().join("m.aptn")).is_err());
        assert!(!dir.path().join("m.aptn").exists());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]
        #[test]
        fn random_stores_round_trip(seed in any::<u64>(), count in 0usize..6, n in 1usize..12) {
            let dir = tempfile::tempdir().unwrap();
            let path = dir.path().join("p.aptn");
            let pats: Vec<_> = (0..count)
                .map(|k| pattern(n, seed.wrapping_add(k as u64), TaskKind::ALL[k % 11]))
                .collect();
            write_store(&pats, &path).unwrap();
            let back = read_store(&path).unwrap();
            prop_assert_eq!(back.len(), pats.len());
            for (a, b) in back.iter().zip(&pats) {
                prop_assert_eq!(&a.meta, &b.meta);
                prop_assert_eq!(&a.model_id, &b.model_id);
                prop_assert!(a.values.iter().zip(&b.values).all(|(x, y)| x.to_bits() == y.to_bits()));
            }
        }
    }
}
