//! Gradient-boosted regression trees on log-loss over encoded categorical
//! features, with early stopping on a validation split.

use serde::{Deserialize, Serialize};

use super::encode::{ordered_encode, CategoryEncoder, PRIOR};
use super::table::FeatureTable;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GbdtConfig {
    pub trees: usize,
    pub depth: usize,
    pub shrinkage: f64,
    pub patience: usize,
    pub bins: usize,
    pub l2: f64,
    pub min_leaf: usize,
    pub prior: f64,
    pub seed: u64,
}

impl Default for GbdtConfig {
    fn default() -> Self {
        GbdtConfig {
            trees: 200,
            depth: 6,
            shrinkage: 0.1,
            patience: 20,
            bins: 32,
            l2: 1.0,
            min_leaf: 5,
            prior: PRIOR,
            seed: 0,
        }
    }
}

impl GbdtConfig {
    pub fn validate(&self) -> Result<()> {
        if self.depth == 0 || self.depth > 16 {
            return Err(Error::Config(format!("tree depth {} outside 1..=16", self.depth)));
        }
        if !(2..=256).contains(&self.bins) {
            return Err(Error::Config(format!("bins {} outside 2..=256", self.bins)));
        }
        if !(self.shrinkage > 0.0) || !(self.l2 >= 0.0) || self.min_leaf == 0 {
            return Err(Error::Config("shrinkage, l2 and min_leaf must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Node {
    /// Encoded feature index, or `None` for a leaf.
    pub feature: Option<u32>,
    /// Rows with `code <= threshold` go left.
    pub threshold: f64,
    pub left: u32,
    pub right: u32,
    pub value: f64,
    /// Training rows that reached the node.
    pub cover: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    pub fn predict(&self, codes: &[f64]) -> f64 {
        let mut i = 0;
        loop {
            let n = &self.nodes[i];
            match n.feature {
                None => return n.value,
                Some(f) => i = if codes[f as usize] <= n.threshold { n.left } else { n.right } as usize,
            }
        }
    }

    /// Cover-weighted mean leaf value.
    pub fn expected(&self) -> f64 {
        let root = self.nodes[0].cover;
        self.nodes
            .iter()
            .filter(|n| n.feature.is_none())
            .map(|n| n.value * n.cover / root)
            .sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GbdtModel {
    pub config: GbdtConfig,
    /// Number of categorical input columns.
    pub inputs: usize,
    /// Input columns that the trees actually read; columns identical to an
    /// earlier one on the training rows are folded into it.
    pub representatives: Vec<usize>,
    /// For each input column, its index into `representatives`.
    pub alias: Vec<usize>,
    pub encoder: CategoryEncoder,
    /// Log-odds of the training positive rate.
    pub base: f64,
    pub trees: Vec<Tree>,
}

impl GbdtModel {
    pub fn encode(&self, row: &[i32]) -> Result<Vec<f64>> {
        if row.len() != self.inputs {
            return Err(Error::Domain(format!(
                "row has {} features, model expects {}",
                row.len(),
                self.inputs
            )));
        }
        let reps: Vec<i32> = self.representatives.iter().map(|&c| row[c]).collect();
        self.encoder.encode_row(&reps)
    }

    pub fn raw_score(&self, row: &[i32]) -> Result<f64> {
        let codes = self.encode(row)?;
        Ok(self.base + self.trees.iter().map(|t| t.predict(&codes)).sum::<f64>())
    }

    pub fn probability(&self, row: &[i32]) -> Result<f64> {
        self.raw_score(row).map(sigmoid)
    }

    pub fn predict(&self, row: &[i32]) -> Result<bool> {
        self.raw_score(row).map(|s| s > 0.0)
    }

    pub fn accuracy(&self, table: &FeatureTable) -> Result<f64> {
        if table.rows() == 0 {
            return Err(Error::Data("no rows to score".into()));
        }
        let mut hit = 0usize;
        for r in 0..table.rows() {
            hit += (self.predict(&table.row(r))? == table.labels[r]) as usize;
        }
        Ok(hit as f64 / table.rows() as f64)
    }

    pub fn log_loss(&self, table: &FeatureTable) -> Result<f64> {
        let mut total = 0.0;
        for r in 0..table.rows() {
            total += log_loss(self.raw_score(&table.row(r))?, table.labels[r]);
        }
        Ok(total / table.rows().max(1) as f64)
    }
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn log_loss(score: f64, label: bool) -> f64 {
    // log(1 + e^-z) for the signed margin z, computed stably.
    let z = if label { score } else { -score };
    if z > 0.0 {
        (-z).exp().ln_1p()
    } else {
        -z + z.exp().ln_1p()
    }
}

/// Groups identical columns; returns (representatives, alias).
fn alias_columns(table: &FeatureTable) -> (Vec<usize>, Vec<usize>) {
    let mut reps: Vec<usize> = Vec::new();
    let mut alias = Vec::with_capacity(table.cols());
    for c in 0..table.cols() {
        match reps.iter().position(|&r| table.columns[r] == table.columns[c]) {
            Some(i) => alias.push(i),
            None => {
                alias.push(reps.len());
                reps.push(c);
            }
        }
    }
    (reps, alias)
}

/// Bin upper edges from the training codes of one feature.
fn bin_edges(codes: &[f64], bins: usize) -> Vec<f64> {
    let mut sorted = codes.to_vec();
    sorted.sort_by(f64::total_cmp);
    sorted.dedup();
    if sorted.len() <= bins {
        sorted.pop();
        return sorted;
    }
    let mut edges: Vec<f64> = (1..bins).map(|k| sorted[k * sorted.len() / bins - 1]).collect();
    edges.dedup();
    edges
}

struct Binned {
    /// Row-major bin index per (row, feature).
    bins: Vec<u8>,
    features: usize,
    edges: Vec<Vec<f64>>,
}

/// Columns holding one category get no edges: their ordered codes vary only
/// with permutation position.
fn bin_features(codes: &[Vec<f64>], constant: &[bool], rows: usize, bins: usize) -> Binned {
    let edges: Vec<Vec<f64>> = codes
        .iter()
        .zip(constant)
        .map(|(c, &k)| if k { Vec::new() } else { bin_edges(c, bins) })
        .collect();
    let features = codes.len();
    let mut out = vec![0u8; rows * features];
    for (f, (c, e)) in codes.iter().zip(&edges).enumerate() {
        for r in 0..rows {
            out[r * features + f] = e.partition_point(|&x| x < c[r]) as u8;
        }
    }
    Binned {
        bins: out,
        features,
        edges,
    }
}

#[derive(Clone, Copy, Default)]
struct Acc {
    g: f64,
    h: f64,
    n: usize,
}

impl Acc {
    fn add(&mut self, g: f64, h: f64) {
        self.g += g;
        self.h += h;
        self.n += 1;
    }

    fn score(&self, l2: f64) -> f64 {
        self.g * self.g / (self.h + l2)
    }
}

fn grow_tree(data: &Binned, grad: &[f64], hess: &[f64], cfg: &GbdtConfig) -> Tree {
    let rows: Vec<usize> = (0..grad.len()).collect();
    let mut nodes = Vec::new();
    grow_node(data, grad, hess, cfg, rows, 0, &mut nodes);
    Tree { nodes }
}

fn grow_node(
    data: &Binned,
    grad: &[f64],
    hess: &[f64],
    cfg: &GbdtConfig,
    rows: Vec<usize>,
    depth: usize,
    nodes: &mut Vec<Node>,
) -> u32 {
    let mut total = Acc::default();
    for &r in &rows {
        total.add(grad[r], hess[r]);
    }
    let id = nodes.len();
    nodes.push(Node {
        feature: None,
        threshold: 0.0,
        left: 0,
        right: 0,
        value: -cfg.shrinkage * total.g / (total.h + cfg.l2),
        cover: rows.len() as f64,
    });
    if depth >= cfg.depth || rows.len() < 2 * cfg.min_leaf {
        return id as u32;
    }
    let f = data.features;
    let width = cfg.bins;
    let mut hist = vec![Acc::default(); f * width];
    for &r in &rows {
        let row = &data.bins[r * f..(r + 1) * f];
        for (j, &b) in row.iter().enumerate() {
            hist[j * width + b as usize].add(grad[r], hess[r]);
        }
    }
    let parent = total.score(cfg.l2);
    let mut best: Option<(f64, usize, usize)> = None;
    for j in 0..f {
        let nb = data.edges[j].len();
        let mut left = Acc::default();
        for b in 0..nb {
            let h = hist[j * width + b];
            left.g += h.g;
            left.h += h.h;
            left.n += h.n;
            let right = Acc {
                g: total.g - left.g,
                h: total.h - left.h,
                n: total.n - left.n,
            };
            if left.n < cfg.min_leaf || right.n < cfg.min_leaf {
                continue;
            }
            let gain = left.score(cfg.l2) + right.score(cfg.l2) - parent;
            if gain > 1e-12 && best.is_none_or(|(g, _, _)| gain > g) {
                best = Some((gain, j, b));
            }
        }
    }
    let Some((_, feature, bin)) = best else {
        return id as u32;
    };
    let (l, r): (Vec<usize>, Vec<usize>) = rows.into_iter().partition(|&r| data.bins[r * f + feature] as usize <= bin);
    let left = grow_node(data, grad, hess, cfg, l, depth + 1, nodes);
    let right = grow_node(data, grad, hess, cfg, r, depth + 1, nodes);
    let node = &mut nodes[id];
    node.feature = Some(feature as u32);
    node.threshold = data.edges[feature][bin];
    node.left = left;
    node.right = right;
    id as u32
}

/// Boosts trees on `train`, keeping the prefix with the lowest log-loss on
/// `valid`. Stops once `patience` trees pass without improvement.
pub fn train_gbdt(train: &FeatureTable, valid: &FeatureTable, config: &GbdtConfig) -> Result<GbdtModel> {
    config.validate()?;
    if train.heads != valid.heads {
        return Err(Error::Domain("training and validation columns differ".into()));
    }
    let pos = train.positives();
    if pos == 0 || pos == train.rows() {
        return Err(Error::Data("training rows carry a single label".into()));
    }
    let (representatives, alias) = alias_columns(train);
    let cols: Vec<&[i32]> = representatives.iter().map(|&c| train.columns[c].as_slice()).collect();
    let (encoder, codes) = ordered_encode(&cols, &train.labels, config.prior, config.seed);
    let constant: Vec<bool> = cols.iter().map(|c| c.iter().all(|&v| v == c[0])).collect();
    let data = bin_features(&codes, &constant, train.rows(), config.bins);

    let rate = pos as f64 / train.rows() as f64;
    let base = (rate / (1.0 - rate)).ln();
    let mut model = GbdtModel {
        config: config.clone(),
        inputs: train.cols(),
        representatives,
        alias,
        encoder,
        base,
        trees: Vec::new(),
    };
    let valid_codes: Vec<Vec<f64>> = (0..valid.rows())
        .map(|r| model.encode(&valid.row(r)))
        .collect::<Result<_>>()?;
    let y: Vec<f64> = train.labels.iter().map(|&l| l as u8 as f64).collect();
    let mut score = vec![base; train.rows()];
    let mut vscore = vec![base; valid.rows()];
    let vloss = |s: &[f64]| s.iter().zip(&valid.labels).map(|(&s, &l)| log_loss(s, l)).sum::<f64>() / s.len().max(1) as f64;
    let mut best = (vloss(&vscore), 0usize);
    let train_rows: Vec<Vec<f64>> = (0..train.rows()).map(|r| codes.iter().map(|c| c[r]).collect()).collect();
    let mut grad = vec![0.0; train.rows()];
    let mut hess = vec![0.0; train.rows()];
    for t in 0..config.trees {
        for r in 0..train.rows() {
            let p = sigmoid(score[r]);
            grad[r] = p - y[r];
            hess[r] = (p * (1.0 - p)).max(1e-16);
        }
        let tree = grow_tree(&data, &grad, &hess, config);
        for (s, c) in score.iter_mut().zip(&train_rows) {
            *s += tree.predict(c);
        }
        for (s, c) in vscore.iter_mut().zip(&valid_codes) {
            *s += tree.predict(c);
        }
        model.trees.push(tree);
        let loss = vloss(&vscore);
        if !loss.is_finite() {
            return Err(Error::Numerical(format!("non-finite validation loss at tree {t}")));
        }
        if loss < best.0 {
            best = (loss, t + 1);
        } else if t + 1 - best.1 >= config.patience {
            break;
        }
    }
    model.trees.truncate(best.1);
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lm::HeadKey;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn planted(rows: usize, heads: usize, planted: usize, fidelity: f64, seed: u64) -> FeatureTable {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let labels: Vec<bool> = (0..rows).map(|i| i % 2 == 0).collect();
        let columns = (0..heads)
            .map(|h| {
                labels
                    .iter()
                    .map(|&l| {
                        if h == planted {
                            let agree = rng.gen_bool(fidelity);
                            if l == agree {
                                rng.gen_range(0..2)
                            } else {
                                rng.gen_range(2..4)
                            }
                        } else {
                            rng.gen_range(-1..4)
                        }
                    })
                    .collect()
            })
            .collect();
        let keys = (0..heads).map(|h| HeadKey::new(h / 8, h % 8)).collect();
        FeatureTable::new(keys, (0..rows as u64).collect(), columns, labels).unwrap()
    }

    #[test]
    fn edges_cover_few_and_many_values() {
        assert_eq!(bin_edges(&[0.3, 0.1, 0.3, 0.2], 32), vec![0.1, 0.2]);
        assert!(bin_edges(&[1.0, 1.0], 32).is_empty());
        let many: Vec<f64> = (0..1000).map(|i| i as f64).collect();
        let e = bin_edges(&many, 32);
        assert_eq!(e.len(), 31);
        assert!(e.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn learns_a_planted_feature() {
        let t = planted(2000, 8, 3, 0.8, 1);
        let train = t.subset(&(0..1600).collect::<Vec<_>>());
        let valid = t.subset(&(1600..1800).collect::<Vec<_>>());
        let test = t.subset(&(1800..2000).collect::<Vec<_>>());
        let m = train_gbdt(&train, &valid, &GbdtConfig::default()).unwrap();
        assert!(!m.trees.is_empty());
        let acc = m.accuracy(&test).unwrap();
        assert!(acc > 0.72, "accuracy {acc}");
        assert_eq!(m, train_gbdt(&train, &valid, &GbdtConfig::default()).unwrap());
    }

    #[test]
    fn uninformative_features_stop_early() {
        let mut t = planted(1000, 4, 0, 0.5, 2);
        t.columns[0] = vec![0; 1000];
        let train = t.subset(&(0..800).collect::<Vec<_>>());
        let valid = t.subset(&(800..1000).collect::<Vec<_>>());
        let m = train_gbdt(&train, &valid, &GbdtConfig::default()).unwrap();
        assert!(m.trees.len() < 200);
        // Constant column never splits.
        assert!(m.trees.iter().all(|t| t.nodes.iter().all(|n| n.feature != Some(0))));
    }

    #[test]
    fn identical_columns_share_one_feature() {
        let mut t = planted(400, 5, 1, 0.9, 3);
        t.columns[4] = t.columns[1].clone();
        let train = t.subset(&(0..300).collect::<Vec<_>>());
        let valid = t.subset(&(300..400).collect::<Vec<_>>());
        let m = train_gbdt(&train, &valid, &GbdtConfig::default()).unwrap();
        assert_eq!(m.representatives, vec![0, 1, 2, 3]);
        assert_eq!(m.alias, vec![0, 1, 2, 3, 1]);
    }

    #[test]
    fn rejects_single_label_and_bad_config() {
        let mut t = planted(100, 2, 0, 0.8, 4);
        t.labels = vec![true; 100];
        assert!(matches!(train_gbdt(&t, &t, &GbdtConfig::default()), Err(Error::Data(_))));
        let cfg = GbdtConfig {
            depth: 0,
            ..GbdtConfig::default()
        };
        assert!(matches!(train_gbdt(&t, &t, &cfg), Err(Error::Config(_))));
    }

    #[test]
    fn log_loss_is_stable() {
        assert!((log_loss(0.0, true) - 2f64.ln()).abs() < 1e-15);
        assert!(log_loss(800.0, false).is_finite());
        assert!(log_loss(-800.0, false) < 1e-300);
    }
}
