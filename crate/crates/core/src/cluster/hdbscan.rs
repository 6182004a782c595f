//! Hierarchical density clustering: mutual-reachability minimum spanning
//! tree, condensed cluster tree and excess-of-mass cluster selection.

pub const NOISE: i32 = -1;

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Distance to the `k`-th nearest point, counting the point itself.
fn core_distances(points: &[Vec<f64>], k: usize) -> Vec<f64> {
    let n = points.len();
    let mut row = vec![0.0; n];
    (0..n)
        .map(|i| {
            for j in 0..n {
                row[j] = dist(&points[i], &points[j]);
            }
            let k = k.clamp(1, n) - 1;
            *row.select_nth_unstable_by(k, f64::total_cmp).1
        })
        .collect()
}

/// Prim's algorithm on the dense mutual-reachability graph.
fn mst(points: &[Vec<f64>], core: &[f64]) -> Vec<(usize, usize, f64)> {
    let n = points.len();
    let mut in_tree = vec![false; n];
    let mut best = vec![f64::INFINITY; n];
    let mut from = vec![0usize; n];
    let mut edges = Vec::with_capacity(n.saturating_sub(1));
    let mut current = 0;
    in_tree[0] = true;
    for _ in 1..n {
        for j in 0..n {
            if in_tree[j] {
                continue;
            }
            let d = dist(&points[current], &points[j]).max(core[current]).max(core[j]);
            if d < best[j] {
                best[j] = d;
                from[j] = current;
            }
        }
        let mut next = usize::MAX;
        for j in 0..n {
            if !in_tree[j] && (next == usize::MAX || best[j] < best[next]) {
                next = j;
            }
        }
        in_tree[next] = true;
        edges.push((from[next], next, best[next]));
        current = next;
    }
    edges
}

struct Dendrogram {
    /// Internal node `n + i` merges `children[i]` at `heights[i]`.
    children: Vec<(usize, usize)>,
    heights: Vec<f64>,
    sizes: Vec<usize>,
}

fn single_linkage(n: usize, mut edges: Vec<(usize, usize, f64)>) -> Dendrogram {
    edges.sort_by(|a, b| a.2.total_cmp(&b.2).then(a.0.min(a.1).cmp(&b.0.min(b.1))));
    let mut parent: Vec<usize> = (0..2 * n).collect();
    fn find(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    let mut d = Dendrogram {
        children: Vec::with_capacity(n - 1),
        heights: Vec::with_capacity(n - 1),
        sizes: vec![1; n],
    };
    for (a, b, w) in edges {
        let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
        let node = n + d.children.len();
        parent[ra] = node;
        parent[rb] = node;
        d.children.push((ra, rb));
        d.heights.push(w);
        let size = d.sizes[ra] + d.sizes[rb];
        d.sizes.push(size);
    }
    d
}

/// Edge of the condensed tree: `child` is a cluster id (>= n) or a point.
struct Condensed {
    parent: usize,
    child: usize,
    lambda: f64,
    size: usize,
}

fn leaves(d: &Dendrogram, n: usize, node: usize, out: &mut Vec<usize>) {
    let mut stack = vec![node];
    while let Some(x) = stack.pop() {
        if x < n {
            out.push(x);
        } else {
            let (a, b) = d.children[x - n];
            stack.push(b);
            stack.push(a);
        }
    }
}

fn condense(d: &Dendrogram, n: usize, min_size: usize) -> Vec<Condensed> {
    let root = 2 * n - 2;
    let mut out = Vec::new();
    let mut next_label = n + 1;
    // (dendrogram node, condensed label)
    let mut stack = vec![(root, n)];
    let mut pts = Vec::new();
    while let Some((node, label)) = stack.pop() {
        let (a, b) = d.children[node - n];
        let lambda = 1.0 / d.heights[node - n].max(1e-12);
        let (sa, sb) = (d.sizes[a], d.sizes[b]);
        if sa >= min_size && sb >= min_size {
            for (c, s) in [(a, sa), (b, sb)] {
                out.push(Condensed {
                    parent: label,
                    child: next_label,
                    lambda,
                    size: s,
                });
                stack.push((c, next_label));
                next_label += 1;
            }
        } else {
            for (c, s) in [(a, sa), (b, sb)] {
                if s >= min_size {
                    stack.push((c, label));
                } else {
                    pts.clear();
                    leaves(d, n, c, &mut pts);
                    for &p in &pts {
                        out.push(Condensed {
                            parent: label,
                            child: p,
                            lambda,
                            size: 1,
                        });
                    }
                }
            }
        }
    }
    out
}

/// Labels in input order: `NOISE` or a cluster index numbered by first member.
pub fn hdbscan(points: &[Vec<f64>], min_cluster_size: usize, min_samples: usize) -> Vec<i32> {
    let n = points.len();
    let min_size = min_cluster_size.max(2);
    if n < min_size {
        return vec![NOISE; n];
    }
    if points.iter().all(|p| p == &points[0]) {
        return vec![0; n];
    }
    let core = core_distances(points, min_samples);
    let dendro = single_linkage(n, mst(points, &core));
    let tree = condense(&dendro, n, min_size);

    let root = n;
    let max_label = tree.iter().map(|e| e.child).filter(|&c| c >= n).max().unwrap_or(root);
    let clusters = max_label - n + 1;
    let mut birth = vec![0.0f64; clusters];
    let mut cluster_parent = vec![usize::MAX; clusters];
    for e in &tree {
        if e.child >= n {
            birth[e.child - n] = e.lambda;
            cluster_parent[e.child - n] = e.parent;
        }
    }
    let mut stability = vec![0.0f64; clusters];
    for e in &tree {
        stability[e.parent - n] += (e.lambda - birth[e.parent - n]) * e.size as f64;
    }

    // Children carry larger labels than their parents, so a reverse sweep is bottom-up.
    let mut selected = vec![true; clusters];
    selected[0] = false;
    let mut subtree = stability.clone();
    let mut child_sum = vec![0.0f64; clusters];
    for c in (1..clusters).rev() {
        let own = stability[c];
        let kids = child_sum[c];
        if kids > own {
            selected[c] = false;
            subtree[c] = kids;
        } else {
            subtree[c] = own;
        }
        child_sum[cluster_parent[c] - n] += subtree[c];
    }
    // A selected cluster shadows every descendant.
    for c in 1..clusters {
        let mut p = cluster_parent[c];
        while p != root {
            if selected[p - n] {
                selected[c] = false;
                break;
            }
            p = cluster_parent[p - n];
        }
    }

    let mut raw = vec![NOISE; n];
    for e in &tree {
        if e.child < n {
            let mut c = e.parent;
            loop {
                if c != root && selected[c - n] {
                    raw[e.child] = c as i32;
                    break;
                }
                if c == root {
                    break;
                }
                c = cluster_parent[c - n];
            }
        }
    }
    canonical(&raw)
}

/// Renumbers non-noise labels 0, 1, ... by first appearance.
pub fn canonical(labels: &[i32]) -> Vec<i32> {
    let mut map = std::collections::HashMap::new();
    labels
        .iter()
        .map(|&l| {
            if l == NOISE {
                NOISE
            } else {
                let next = map.len() as i32;
                *map.entry(l).or_insert(next)
            }
        })
        .collect()
}

/// Adjusted Rand index between two labelings; noise counts as its own label.
pub fn adjusted_rand_index(a: &[i32], b: &[i32]) -> f64 {
    use std::collections::HashMap;
    assert_eq!(a.len(), b.len());
    let n = a.len() as f64;
    let c2 = |x: f64| x * (x - 1.0) / 2.0;
    let mut table: HashMap<(i32, i32), f64> = HashMap::new();
    let mut ra: HashMap<i32, f64> = HashMap::new();
    let mut rb: HashMap<i32, f64> = HashMap::new();
    for (&x, &y) in a.iter().zip(b) {
        *table.entry((x, y)).or_default() += 1.0;
        *ra.entry(x).or_default() += 1.0;
        *rb.entry(y).or_default() += 1.0;
    }
    let index: f64 = table.values().map(|&v| c2(v)).sum();
    let sa: f64 = ra.values().map(|&v| c2(v)).sum();
    let sb: f64 = rb.values().map(|&v| c2(v)).sum();
    let expected = sa * sb / c2(n);
    let max = 0.5 * (sa + sb);
    if (max - expected).abs() < 1e-12 {
        return 1.0;
    }
    (index - expected) / (max - expected)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn blobs(centers: &[[f64; 2]], per: usize, sigma: f64, seed: u64) -> (Vec<Vec<f64>>, Vec<i32>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noise = Normal::new(0.0, sigma).unwrap();
        let mut pts = Vec::new();
        let mut labels = Vec::new();
        for i in 0..per {
            for (k, c) in centers.iter().enumerate() {
                let _ = i;
                pts.push(vec![c[0] + noise.sample(&mut rng), c[1] + noise.sample(&mut rng)]);
                labels.push(k as i32);
            }
        }
        (pts, labels)
    }

    #[test]
    fn planted_blobs_are_recovered() {
        let (pts, truth) = blobs(&[[0.0, 0.0], [1.5, 0.0], [0.0, 1.5]], 100, 0.1, 1);
        let labels = hdbscan(&pts, 25, 25);
        let k = labels.iter().filter(|&&l| l >= 0).max().unwrap() + 1;
        assert_eq!(k, 3);
        assert!(adjusted_rand_index(&labels, &truth) >= 0.9);
    }

    #[test]
    fn uniform_cube_is_mostly_noise() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for dim in [2usize, 3, 8] {
            let pts: Vec<Vec<f64>> = (0..500).map(|_| (0..dim).map(|_| rng.gen::<f64>()).collect()).collect();
            let labels = hdbscan(&pts, 50, 50);
            let noise = labels.iter().filter(|&&l| l == NOISE).count();
            assert!(noise >= 250, "dim {dim}: {noise} noise");
        }
    }

    #[test]
    fn small_and_degenerate_inputs() {
        let pts = vec![vec![0.0, 1.0]; 10];
        assert_eq!(hdbscan(&pts, 25, 25), vec![NOISE; 10]);
        let pts = vec![vec![0.5, 1.0]; 40];
        assert_eq!(hdbscan(&pts, 25, 25), vec![0; 40]);
    }

    #[test]
    fn labels_are_deterministic_and_canonical() {
        let (pts, _) = blobs(&[[0.0, 0.0], [3.0, 3.0]], 60, 0.2, 2);
        let a = hdbscan(&pts, 25, 25);
        assert_eq!(a, hdbscan(&pts, 25, 25));
        let first = a.iter().find(|&&l| l >= 0).unwrap();
        assert_eq!(*first, 0);
    }

    #[test]
    fn ari_oracle_values() {
        assert_eq!(adjusted_rand_index(&[0, 0, 1, 1], &[1, 1, 0, 0]), 1.0);
        // Hand-computed: contingency [[1,1],[0,2]] for n=4.
        let ari = adjusted_rand_index(&[0, 0, 1, 1], &[0, 1, 1, 1]);
        let (index, sa, sb) = (1.0, 2.0, 3.0);
        let expected = sa * sb / 6.0;
        assert!((ari - (index - expected) / (0.5 * (sa + sb) - expected)).abs() < 1e-12);
    }
}
