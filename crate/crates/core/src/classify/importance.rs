//! Head importance from grouped Shapley means, and head selection for
//! intervention.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::cv::CvReport;
use super::shap::shap_values;
use super::table::{FeatureTable, MISSING};
use crate::error::{Error, Result};
use crate::lm::HeadKey;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelMean {
    pub head: HeadKey,
    pub label: i32,
    pub mean: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadImportance {
    pub head: HeadKey,
    /// Largest minus smallest group mean; 0 with fewer than two groups.
    pub importance: f64,
    pub max_mean: f64,
    pub min_mean: f64,
    pub labels: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapSummary {
    pub groups: Vec<LabelMean>,
    pub heads: Vec<HeadImportance>,
}

impl ShapSummary {
    /// Groups each row's contribution at a head by the row's cluster label
    /// there. Cells of unsampled heads are left out.
    pub fn from_rows(heads: &[HeadKey], cells: &[Vec<i32>], contributions: &[Vec<f64>]) -> Result<Self> {
        if cells.len() != contributions.len() {
            return Err(Error::Domain("cells and contributions differ in length".into()));
        }
        let mut acc: Vec<BTreeMap<i32, (f64, usize)>> = vec![BTreeMap::new(); heads.len()];
        for (row, phi) in cells.iter().zip(contributions) {
            if row.len() != heads.len() || phi.len() != heads.len() {
                return Err(Error::Domain("row width does not match heads".into()));
            }
            for (h, (&label, &v)) in row.iter().zip(phi).enumerate() {
                if label != MISSING {
                    let e = acc[h].entry(label).or_insert((0.0, 0));
                    e.0 += v;
                    e.1 += 1;
                }
            }
        }
        let mut groups = Vec::new();
        let mut out = Vec::with_capacity(heads.len());
        for (h, a) in heads.iter().zip(acc) {
            let means: Vec<f64> = a.values().map(|&(s, c)| s / c as f64).collect();
            for ((&label, &(_, count)), &mean) in a.iter().zip(&means) {
                groups.push(LabelMean {
                    head: *h,
                    label,
                    mean,
                    count,
                });
            }
            let (max_mean, min_mean) = if means.is_empty() {
                (0.0, 0.0)
            } else {
                (
                    means.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
                    means.iter().cloned().fold(f64::INFINITY, f64::min),
                )
            };
            out.push(HeadImportance {
                head: *h,
                importance: max_mean - min_mean,
                max_mean,
                min_mean,
                labels: means.len(),
            });
        }
        Ok(ShapSummary { groups, heads: out })
    }

    /// Heads ordered by descending importance, ties by head.
    pub fn ranked(&self) -> Vec<&HeadImportance> {
        let mut v: Vec<&HeadImportance> = self.heads.iter().collect();
        v.sort_by(|a, b| b.importance.total_cmp(&a.importance).then(a.head.cmp(&b.head)));
        v
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("layer,head,label,mean_shap\n");
        for g in &self.groups {
            out.push_str(&format!("{},{},{},{:.9}\n", g.head.layer, g.head.head, g.label, g.mean));
        }
        out
    }

    pub fn importance_csv(&self) -> String {
        let mut out = String::from("layer,head,importance,max_mean,min_mean,labels\n");
        for h in &self.heads {
            out.push_str(&format!(
                "{},{},{:.9},{:.9},{:.9},{}\n",
                h.head.layer, h.head.head, h.importance, h.max_mean, h.min_mean, h.labels
            ));
        }
        out
    }
}

/// Explains every fold's held-out rows with that fold's model.
pub fn head_importance(report: &CvReport, table: &FeatureTable) -> Result<ShapSummary> {
    let (cells, phis) = explain_folds(report, table)?;
    ShapSummary::from_rows(&table.heads, &cells, &phis)
}

/// Raw per-row contributions and model scores for the held-out rows of
/// every fold, in fold order.
pub fn explain_folds(report: &CvReport, table: &FeatureTable) -> Result<(Vec<Vec<i32>>, Vec<Vec<f64>>)> {
    let jobs: Vec<(usize, usize)> = report
        .folds
        .iter()
        .enumerate()
        .flat_map(|(i, f)| f.test_rows.iter().map(move |&r| (i, r)))
        .collect();
    let phis = jobs
        .par_iter()
        .map(|&(i, r)| shap_values(&report.folds[i].model, &table.row(r)).map(|e| e.values))
        .collect::<Result<Vec<_>>>()?;
    let cells = jobs.iter().map(|&(_, r)| table.row(r)).collect();
    Ok((cells, phis))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionMode {
    Positive,
    Negative,
    Neutral,
    Random,
}

impl SelectionMode {
    pub const ALL: [SelectionMode; 4] = [
        SelectionMode::Positive,
        SelectionMode::Negative,
        SelectionMode::Neutral,
        SelectionMode::Random,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SelectionMode::Positive => "positive",
            SelectionMode::Negative => "negative",
            SelectionMode::Neutral => "neutral",
            SelectionMode::Random => "random",
        }
    }
}

impl fmt::Display for SelectionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SelectionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        SelectionMode::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown selection mode {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Selection {
    pub heads: Vec<HeadKey>,
    /// Set when fewer heads were available than requested.
    pub shortfall: bool,
}

pub fn select_heads(summary: &ShapSummary, mode: SelectionMode, k: usize, seed: u64) -> Selection {
    let mut pool: Vec<&HeadImportance> = summary.heads.iter().collect();
    match mode {
        SelectionMode::Positive => {
            pool.retain(|h| h.importance > 0.0);
            pool.sort_by(|a, b| b.max_mean.total_cmp(&a.max_mean).then(a.head.cmp(&b.head)));
        }
        SelectionMode::Negative => {
            pool.retain(|h| h.importance > 0.0);
            pool.sort_by(|a, b| a.min_mean.total_cmp(&b.min_mean).then(a.head.cmp(&b.head)));
        }
        SelectionMode::Neutral => {
            pool.sort_by(|a, b| a.importance.total_cmp(&b.importance).then(a.head.cmp(&b.head)));
        }
        SelectionMode::Random => {
            pool.sort_by_key(|h| h.head);
            pool.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        }
    }
    let shortfall = k > pool.len();
    Selection {
        heads: pool.into_iter().take(k).map(|h| h.head).collect(),
        shortfall,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn keys(n: usize) -> Vec<HeadKey> {
        (0..n).map(|h| HeadKey::new(0, h)).collect()
    }

    #[test]
    fn importance_is_max_minus_min_group_mean() {
        let cells = vec![vec![0, 5], vec![1, 5], vec![1, 5], vec![MISSING, 5]];
        let phis = vec![vec![0.2, 1.0], vec![-0.2, 2.0], vec![-0.4, 3.0], vec![9.0, 4.0]];
        let s = ShapSummary::from_rows(&keys(2), &cells, &phis).unwrap();
        assert!((s.heads[0].importance - 0.5).abs() < 1e-12);
        assert!((s.heads[0].max_mean - 0.2).abs() < 1e-12);
        assert!((s.heads[0].min_mean + 0.3).abs() < 1e-12);
        assert_eq!(s.heads[1].importance, 0.0);
        assert_eq!(s.heads[1].labels, 1);
        assert_eq!(s.groups.len(), 3);
        assert!(s.to_csv().starts_with("layer,head,label,mean_shap\n0,0,0,0.200000000\n0,0,1,-0.300000000\n"));
    }

    #[test]
    fn selection_modes() {
        let s = ShapSummary {
            groups: vec![],
            heads: vec![
                HeadImportance { head: HeadKey::new(0, 0), importance: 0.5, max_mean: 0.4, min_mean: -0.1, labels: 2 },
                HeadImportance { head: HeadKey::new(0, 1), importance: 0.0, max_mean: 0.0, min_mean: 0.0, labels: 1 },
                HeadImportance { head: HeadKey::new(0, 2), importance: 0.3, max_mean: 0.1, min_mean: -0.2, labels: 3 },
                HeadImportance { head: HeadKey::new(1, 0), importance: 0.2, max_mean: 0.15, min_mean: -0.05, labels: 2 },
            ],
        };
        let pos = select_heads(&s, SelectionMode::Positive, 10, 0);
        assert_eq!(pos.heads, vec![HeadKey::new(0, 0), HeadKey::new(1, 0), HeadKey::new(0, 2)]);
        assert!(pos.shortfall);
        let neg = select_heads(&s, SelectionMode::Negative, 2, 0);
        assert_eq!(neg.heads, vec![HeadKey::new(0, 2), HeadKey::new(0, 0)]);
        assert!(!neg.shortfall);
        let neu = select_heads(&s, SelectionMode::Neutral, 2, 0);
        assert_eq!(neu.heads, vec![HeadKey::new(0, 1), HeadKey::new(1, 0)]);
        assert!(select_heads(&s, SelectionMode::Positive, 0, 0).heads.is_empty());
        let r1 = select_heads(&s, SelectionMode::Random, 4, 7);
        assert_eq!(r1, select_heads(&s, SelectionMode::Random, 4, 7));
        let mut sorted = r1.heads.clone();
        sorted.sort();
        assert_eq!(sorted.len(), 4);
        sorted.dedup();
        assert_eq!(sorted.len(), 4);
    }

    #[test]
    fn all_zero_summary_has_empty_signed_pools() {
        let cells = vec![vec![1, 1]; 3];
        let s = ShapSummary::from_rows(&keys(2), &cells, &vec![vec![0.0, 0.0]; 3]).unwrap();
        let sel = select_heads(&s, SelectionMode::Positive, 1, 0);
        assert!(sel.heads.is_empty() && sel.shortfall);
    }

    #[test]
    fn mode_names_round_trip() {
        for m in SelectionMode::ALL {
            assert_eq!(m.name().parse::<SelectionMode>().unwrap(), m);
        }
        assert!("loud".parse::<SelectionMode>().is_err());
    }
}
