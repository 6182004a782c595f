//! Per-head clustering of pattern embeddings: principal-axis reduction,
//! hierarchical density clustering with a noise label, and statistics.

mod hdbscan;
mod model;
mod pca;
mod store;

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use hdbscan::{adjusted_rand_index, canonical, hdbscan, NOISE};
pub use model::{
    cluster_stats, count_clusters, fit_head, ClusterAssignment, ClusterConfig, ClusterModel, ClusterStats, REDUCED_DIM,
};
pub use pca::{reduce, Reducer};
pub use store::{decode_models, encode_models, load_models, read_assignments, save_models, write_assignments};

use crate::error::Result;
use crate::lm::HeadKey;

/// One embedded pattern: the head it came from and its sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadSample {
    pub head: HeadKey,
    pub sample_id: u64,
    pub embedding: Vec<f32>,
}

/// Fits one model per head, in parallel. Output is ordered by head, and
/// assignments by (head, sample_id).
pub fn cluster_heads(samples: &[HeadSample], config: &ClusterConfig) -> Result<(Vec<ClusterModel>, Vec<ClusterAssignment>)> {
    let mut by_head: BTreeMap<HeadKey, (Vec<u64>, Vec<Vec<f32>>)> = BTreeMap::new();
    for s in samples {
        let e = by_head.entry(s.head).or_default();
        e.0.push(s.sample_id);
        e.1.push(s.embedding.clone());
    }
    let fitted: Vec<_> = by_head
        .into_par_iter()
        .map(|(head, (ids, embs))| fit_head(head, &ids, &embs, config))
        .collect::<Result<Vec<_>>>()?;
    let mut models = Vec::with_capacity(fitted.len());
    let mut assignments = Vec::new();
    for (m, a) in fitted {
        models.push(m);
        assignments.extend(a);
    }
    Ok((models, assignments))
}
