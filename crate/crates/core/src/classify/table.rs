//! Categorical feature tables: one row per sample, one column per head.
//!
//! ```text
//! "APFT" | version u16 | reserved u16 | header_len u32 | JSON header
//! sample_id u64 * rows | label u8 * rows | { cell i32 * rows } * columns
//! ```

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cluster::ClusterAssignment;
use crate::error::{Error, Result};
use crate::io::write_atomic;
use crate::lm::HeadKey;

/// Cell value for a head that was not sampled for a row.
pub const MISSING: i32 = i32::MIN;

const MAGIC: &[u8; 4] = b"APFT";
const VERSION: u16 = 1;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FeatureTable {
    pub heads: Vec<HeadKey>,
    pub sample_ids: Vec<u64>,
    /// Column-major: `columns[c][r]`.
    pub columns: Vec<Vec<i32>>,
    pub labels: Vec<bool>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    heads: Vec<HeadKey>,
    rows: u64,
}

impl FeatureTable {
    pub fn new(heads: Vec<HeadKey>, sample_ids: Vec<u64>, columns: Vec<Vec<i32>>, labels: Vec<bool>) -> Result<Self> {
        if columns.len() != heads.len() {
            return Err(Error::Domain(format!("{} columns for {} heads", columns.len(), heads.len())));
        }
        if sample_ids.len() != labels.len() || columns.iter().any(|c| c.len() != labels.len()) {
            return Err(Error::Domain("ragged feature table".into()));
        }
        Ok(FeatureTable {
            heads,
            sample_ids,
            columns,
            labels,
        })
    }

    /// Pivots cluster assignments into rows for every sample with a known
    /// outcome. Rows are ordered by sample id, columns by head.
    pub fn from_assignments(assignments: &[ClusterAssignment], outcomes: &BTreeMap<u64, bool>) -> Result<Self> {
        let heads: Vec<HeadKey> = assignments
            .iter()
            .map(|a| a.head)
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        let rows: Vec<u64> = assignments
            .iter()
            .map(|a| a.sample_id)
            .filter(|id| outcomes.contains_key(id))
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        let col_of: BTreeMap<HeadKey, usize> = heads.iter().enumerate().map(|(i, h)| (*h, i)).collect();
        let row_of: BTreeMap<u64, usize> = rows.iter().enumerate().map(|(i, s)| (*s, i)).collect();
        let mut columns = vec![vec![MISSING; rows.len()]; heads.len()];
        for a in assignments {
            if let Some(&r) = row_of.get(&a.sample_id) {
                columns[col_of[&a.head]][r] = a.label;
            }
        }
        let labels = rows.iter().map(|s| outcomes[s]).collect();
        FeatureTable::new(heads, rows, columns, labels)
    }

    pub fn rows(&self) -> usize {
        self.labels.len()
    }

    pub fn cols(&self) -> usize {
        self.heads.len()
    }

    pub fn row(&self, r: usize) -> Vec<i32> {
        self.columns.iter().map(|c| c[r]).collect()
    }

    pub fn positives(&self) -> usize {
        self.labels.iter().filter(|&&l| l).count()
    }

    pub fn subset(&self, rows: &[usize]) -> FeatureTable {
        FeatureTable {
            heads: self.heads.clone(),
            sample_ids: rows.iter().map(|&r| self.sample_ids[r]).collect(),
            columns: self.columns.iter().map(|c| rows.iter().map(|&r| c[r]).collect()).collect(),
            labels: rows.iter().map(|&r| self.labels[r]).collect(),
        }
    }

    /// Downsamples the majority class to the minority size. Kept rows stay
    /// in their original order.
    pub fn balanced(&self, seed: u64) -> FeatureTable {
        let (mut pos, mut neg): (Vec<usize>, Vec<usize>) = (0..self.rows()).partition(|&r| self.labels[r]);
        let keep = pos.len().min(neg.len());
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        pos.shuffle(&mut rng);
        neg.shuffle(&mut rng);
        pos.truncate(keep);
        neg.truncate(keep);
        let mut rows: Vec<usize> = pos.into_iter().chain(neg).collect();
        rows.sort_unstable();
        self.subset(&rows)
    }

    pub fn encode(&self) -> Result<Vec<u8>> {
        let header = serde_json::to_vec(&Header {
            heads: self.heads.clone(),
            rows: self.rows() as u64,
        })?;
        let n = self.rows();
        let mut out = Vec::with_capacity(12 + header.len() + n * (9 + 4 * self.cols()));
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&0u16.to_le_bytes());
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(&header);
        for s in &self.sample_ids {
            out.extend_from_slice(&s.to_le_bytes());
        }
        out.extend(self.labels.iter().map(|&l| l as u8));
        for c in &self.columns {
            for v in c {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn decode(buf: &[u8]) -> Result<Self> {
        if buf.len() < 12 || &buf[..4] != MAGIC {
            return Err(Error::format(0, "not a feature table"));
        }
        let version = u16::from_le_bytes([buf[4], buf[5]]);
        if version != VERSION {
            return Err(Error::format(4, format!("unsupported version {version}")));
        }
        let hlen = u32::from_le_bytes(buf[8..12].try_into().unwrap()) as usize;
        let body = 12 + hlen;
        if buf.len() < body {
            return Err(Error::format(12, "truncated header"));
        }
        let header: Header = serde_json::from_slice(&buf[12..body]).map_err(|e| Error::format(12, e.to_string()))?;
        let n = header.rows as usize;
        let cols = header.heads.len();
        let expected = body + n * 9 + n * 4 * cols;
        if buf.len() != expected {
            return Err(Error::format(
                body as u64,
                format!("expected {expected} bytes, found {}", buf.len()),
            ));
        }
        let ids = &buf[body..body + 8 * n];
        let sample_ids = ids.chunks_exact(8).map(|b| u64::from_le_bytes(b.try_into().unwrap())).collect();
        let lab = &buf[body + 8 * n..body + 9 * n];
        let mut labels = Vec::with_capacity(n);
        for (i, &b) in lab.iter().enumerate() {
            match b {
                0 | 1 => labels.push(b == 1),
                _ => return Err(Error::format((body + 8 * n + i) as u64, format!("bad label byte {b}"))),
            }
        }
        let cells = &buf[body + 9 * n..];
        let columns = (0..cols)
            .map(|c| {
                cells[c * 4 * n..(c + 1) * 4 * n]
                    .chunks_exact(4)
                    .map(|b| i32::from_le_bytes(b.try_into().unwrap()))
                    .collect()
            })
            .collect();
        FeatureTable::new(header.heads, sample_ids, columns, labels)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_atomic(path, &self.encode()?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let buf = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        FeatureTable::decode(&buf)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn assignment(layer: usize, head: usize, sample_id: u64, label: i32) -> ClusterAssignment {
        ClusterAssignment {
            head: HeadKey::new(layer, head),
            sample_id,
            label,
        }
    }

    #[test]
    fn pivot_fills_missing_cells() {
        let a = vec![
            assignment(0, 1, 7, 2),
            assignment(0, 0, 7, -1),
            assignment(0, 0, 3, 1),
            assignment(1, 0, 9, 0),
        ];
        let outcomes = BTreeMap::from([(3, true), (7, false)]);
        let t = FeatureTable::from_assignments(&a, &outcomes).unwrap();
        assert_eq!(t.heads, vec![HeadKey::new(0, 0), HeadKey::new(0, 1), HeadKey::new(1, 0)]);
        assert_eq!(t.sample_ids, vec![3, 7]);
        assert_eq!(t.columns, vec![vec![1, -1], vec![MISSING, 2], vec![MISSING, MISSING]]);
        assert_eq!(t.labels, vec![true, false]);
        assert_eq!(t.row(1), vec![-1, 2, MISSING]);
    }

    #[test]
    fn balancing_equalises_classes() {
        let labels: Vec<bool> = (0..30).map(|i| i % 3 != 0).collect();
        let t = FeatureTable::new(vec![HeadKey::new(0, 0)], (0..30).collect(), vec![(0..30).collect()], labels).unwrap();
        let b = t.balanced(4);
        assert_eq!(b.rows(), 20);
        assert_eq!(b.positives(), 10);
        assert!(b.sample_ids.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(b, t.balanced(4));
    }

    #[test]
    fn binary_round_trip_and_corruption() {
        let t = FeatureTable::new(
            vec![HeadKey::new(0, 0), HeadKey::new(2, 1)],
            vec![5, 6, 8],
            vec![vec![0, -1, MISSING], vec![3, 3, 4]],
            vec![true, false, true],
        )
        .unwrap();
        let bytes = t.encode().unwrap();
        assert_eq!(FeatureTable::decode(&bytes).unwrap(), t);
        assert!(FeatureTable::decode(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(FeatureTable::decode(&bad), Err(Error::Format { offset: 0, .. })));
        let dir = tempfile::tempdir().unwrap();
        t.save(dir.path().join("t.apft")).unwrap();
        assert_eq!(FeatureTable::load(dir.path().join("t.apft")).unwrap(), t);
    }

    #[test]
    fn ragged_input_is_rejected() {
        assert!(FeatureTable::new(vec![HeadKey::new(0, 0)], vec![1], vec![vec![1, 2]], vec![true]).is_err());
        assert!(FeatureTable::new(vec![], vec![1], vec![vec![1]], vec![true]).is_err());
    }
}
