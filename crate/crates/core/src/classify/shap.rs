//! Exact path-dependent Shapley values for tree ensembles.

use serde::{Deserialize, Serialize};

use super::gbdt::{GbdtModel, Tree};
use crate::error::Result;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Explanation {
    /// Expected raw score over the training cover.
    pub base: f64,
    /// One contribution per input column.
    pub values: Vec<f64>,
}

impl Explanation {
    pub fn total(&self) -> f64 {
        self.base + self.values.iter().sum::<f64>()
    }
}

#[derive(Clone, Copy, Debug)]
struct PathElem {
    feature: Option<u32>,
    zero: f64,
    one: f64,
    weight: f64,
}

fn extend(path: &mut Vec<PathElem>, zero: f64, one: f64, feature: Option<u32>) {
    let depth = path.len();
    path.push(PathElem {
        feature,
        zero,
        one,
        weight: if depth == 0 { 1.0 } else { 0.0 },
    });
    let d1 = (depth + 1) as f64;
    for i in (0..depth).rev() {
        path[i + 1].weight += one * path[i].weight * (i + 1) as f64 / d1;
        path[i].weight = zero * path[i].weight * (depth - i) as f64 / d1;
    }
}

fn unwind(path: &mut Vec<PathElem>, index: usize) {
    let depth = path.len() - 1;
    let PathElem { one, zero, .. } = path[index];
    let d1 = (depth + 1) as f64;
    let mut next = path[depth].weight;
    for i in (0..depth).rev() {
        if one != 0.0 {
            let tmp = path[i].weight;
            path[i].weight = next * d1 / ((i + 1) as f64 * one);
            next = tmp - path[i].weight * zero * (depth - i) as f64 / d1;
        } else {
            path[i].weight = path[i].weight * d1 / (zero * (depth - i) as f64);
        }
    }
    for i in index..depth {
        path[i].feature = path[i + 1].feature;
        path[i].zero = path[i + 1].zero;
        path[i].one = path[i + 1].one;
    }
    path.pop();
}

fn unwound_sum(path: &[PathElem], index: usize) -> f64 {
    let depth = path.len() - 1;
    let PathElem { one, zero, .. } = path[index];
    let d1 = (depth + 1) as f64;
    let mut next = path[depth].weight;
    let mut total = 0.0;
    for i in (0..depth).rev() {
        if one != 0.0 {
            let tmp = next * d1 / ((i + 1) as f64 * one);
            total += tmp;
            next = path[i].weight - tmp * zero * (depth - i) as f64 / d1;
        } else if zero != 0.0 {
            total += path[i].weight / zero * d1 / (depth - i) as f64;
        }
    }
    total
}

#[allow(clippy::too_many_arguments)]
fn recurse(
    tree: &Tree,
    x: &[f64],
    phi: &mut [f64],
    node: usize,
    parent: &[PathElem],
    zero: f64,
    one: f64,
    feature: Option<u32>,
) {
    let mut path = parent.to_vec();
    extend(&mut path, zero, one, feature);
    let n = &tree.nodes[node];
    let Some(split) = n.feature else {
        for i in 1..path.len() {
            let w = unwound_sum(&path, i);
            let e = path[i];
            phi[e.feature.unwrap() as usize] += w * (e.one - e.zero) * n.value;
        }
        return;
    };
    let (hot, cold) = if x[split as usize] <= n.threshold {
        (n.left, n.right)
    } else {
        (n.right, n.left)
    };
    let (hot, cold) = (hot as usize, cold as usize);
    let (mut in_zero, mut in_one) = (1.0, 1.0);
    if let Some(k) = (1..path.len()).find(|&k| path[k].feature == Some(split)) {
        in_zero = path[k].zero;
        in_one = path[k].one;
        unwind(&mut path, k);
    }
    let hz = tree.nodes[hot].cover / n.cover;
    let cz = tree.nodes[cold].cover / n.cover;
    recurse(tree, x, phi, hot, &path, hz * in_zero, in_one, Some(split));
    recurse(tree, x, phi, cold, &path, cz * in_zero, 0.0, Some(split));
}

/// Shapley values of one tree over encoded features.
pub fn tree_shap(tree: &Tree, codes: &[f64], phi: &mut [f64]) {
    recurse(tree, codes, phi, 0, &[], 1.0, 1.0, None);
}

/// Explains one categorical row. Contributions of folded duplicate columns
/// are split evenly between them.
pub fn shap_values(model: &GbdtModel, row: &[i32]) -> Result<Explanation> {
    let codes = model.encode(row)?;
    let mut phi = vec![0.0; model.representatives.len()];
    for t in &model.trees {
        tree_shap(t, &codes, &mut phi);
    }
    let base = model.base + model.trees.iter().map(Tree::expected).sum::<f64>();
    let mut share = vec![0usize; phi.len()];
    for &a in &model.alias {
        share[a] += 1;
    }
    let values = model.alias.iter().map(|&a| phi[a] / share[a] as f64).collect();
    Ok(Explanation { base, values })
}
