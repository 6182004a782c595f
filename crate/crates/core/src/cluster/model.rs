use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::hdbscan::{hdbscan, NOISE};
use super::pca::{reduce, Reducer};
use crate::error::{Error, Result};
use crate::lm::HeadKey;

pub const REDUCED_DIM: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClusterConfig {
    pub out_dim: usize,
    /// Explicit minimum cluster size; derived from the sample count when absent.
    pub min_cluster_size: Option<usize>,
    pub min_size_floor: usize,
    pub min_size_frac: f64,
}

impl Default for ClusterConfig {
    fn default() -> Self {
        ClusterConfig {
            out_dim: REDUCED_DIM,
            min_cluster_size: None,
            min_size_floor: 25,
            min_size_frac: 0.01,
        }
    }
}

impl ClusterConfig {
    pub fn min_size_for(&self, samples: usize) -> usize {
        self.min_cluster_size
            .unwrap_or_else(|| ((samples as f64 * self.min_size_frac).round() as usize).max(self.min_size_floor))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterModel {
    pub head: HeadKey,
    pub reducer: Reducer,
    /// Centroids in reduced space, indexed by label.
    pub centroids: Vec<Vec<f64>>,
    /// Largest member distance to the centroid, per label.
    pub radii: Vec<f64>,
    pub min_cluster_size: usize,
    pub samples: usize,
}

impl ClusterModel {
    pub fn num_clusters(&self) -> usize {
        self.centroids.len()
    }

    /// Nearest centroid in reduced space, or `NOISE` beyond that cluster's radius.
    pub fn assign(&self, embedding: &[f32]) -> i32 {
        let y = self.reducer.project(embedding);
        self.assign_reduced(&y)
    }

    pub fn assign_reduced(&self, y: &[f64]) -> i32 {
        let mut best: Option<(usize, f64)> = None;
        for (k, c) in self.centroids.iter().enumerate() {
            let d = c.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
            if best.is_none_or(|(_, bd)| d < bd) {
                best = Some((k, d));
            }
        }
        match best {
            Some((k, d)) if d <= self.radii[k] * (1.0 + 1e-9) + 1e-12 => k as i32,
            _ => NOISE,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClusterAssignment {
    pub head: HeadKey,
    pub sample_id: u64,
    pub label: i32,
}

/// Reduces and clusters one head's embeddings. Samples are processed in
/// ascending `sample_id` order so labels do not depend on input order.
pub fn fit_head(
    head: HeadKey,
    sample_ids: &[u64],
    embeddings: &[Vec<f32>],
    config: &ClusterConfig,
) -> Result<(ClusterModel, Vec<ClusterAssignment>)> {
    if sample_ids.len() != embeddings.len() {
        return Err(Error::Contract("one sample id per embedding required".into()));
    }
    let mut order: Vec<usize> = (0..sample_ids.len()).collect();
    order.sort_by_key(|&i| (sample_ids[i], i));
    let sorted: Vec<Vec<f32>> = order.iter().map(|&i| embeddings[i].clone()).collect();
    let (reducer, reduced) = reduce(&sorted, config.out_dim)?;
    let min_size = config.min_size_for(sorted.len());
    let labels = hdbscan(&reduced, min_size, min_size);
    let k = labels.iter().copied().max().unwrap_or(NOISE).max(-1) + 1;
    let mut centroids = vec![vec![0.0; config.out_dim]; k as usize];
    let mut counts = vec![0usize; k as usize];
    for (y, &l) in reduced.iter().zip(&labels) {
        if l >= 0 {
            counts[l as usize] += 1;
            for (c, v) in centroids[l as usize].iter_mut().zip(y) {
                *c += v;
            }
        }
    }
    for (c, &n) in centroids.iter_mut().zip(&counts) {
        c.iter_mut().for_each(|v| *v /= n as f64);
    }
    let mut radii = vec![0.0f64; k as usize];
    for (y, &l) in reduced.iter().zip(&labels) {
        if l >= 0 {
            let d = centroids[l as usize].iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
            radii[l as usize] = radii[l as usize].max(d);
        }
    }
    let model = ClusterModel {
        head,
        reducer,
        centroids,
        radii,
        min_cluster_size: min_size,
        samples: sorted.len(),
    };
    let mut assignments: Vec<ClusterAssignment> = order
        .iter()
        .zip(&labels)
        .map(|(&i, &label)| ClusterAssignment {
            head,
            sample_id: sample_ids[i],
            label,
        })
        .collect();
    assignments.sort_by_key(|a| a.sample_id);
    Ok((model, assignments))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterStats {
    /// `(layer, head, cluster count)` per model, NOISE excluded.
    pub rows: Vec<(u16, u16, usize)>,
    /// Number of heads per cluster count.
    pub histogram: BTreeMap<usize, usize>,
}

impl ClusterStats {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("layer,head,clusters\n");
        for (l, h, c) in &self.rows {
            out.push_str(&format!("{l},{h},{c}\n"));
        }
        out
    }

    pub fn histogram_csv(&self) -> String {
        let mut out = String::from("clusters,heads\n");
        for (c, n) in &self.histogram {
            out.push_str(&format!("{c},{n}\n"));
        }
        out
    }
}

pub fn cluster_stats(models: &[ClusterModel]) -> ClusterStats {
    let mut rows: Vec<(u16, u16, usize)> = models
        .iter()
        .map(|m| (m.head.layer, m.head.head, m.num_clusters()))
        .collect();
    rows.sort();
    let mut histogram = BTreeMap::new();
    for r in &rows {
        *histogram.entry(r.2).or_insert(0) += 1;
    }
    ClusterStats { rows, histogram }
}

/// Cluster count of a label set, NOISE excluded.
pub fn count_clusters(labels: &[i32]) -> usize {
    let mut seen: Vec<i32> = labels.iter().copied().filter(|&l| l != NOISE).collect();
    seen.sort_unstable();
    seen.dedup();
    seen.len()
}
