//! Retrieval and clustering metrics computed against true labels.

use std::collections::BTreeMap;

use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::domain::EmbeddingState;
use crate::error::{Error, Result};
use crate::rng::{self, streams, Rng};

pub const DEFAULT_KMEANS_RESTARTS: usize = 10;
const MAX_LLOYD_ITERATIONS: usize = 100;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub recall_at: BTreeMap<usize, f64>,
    pub nmi: f64,
    pub kmeans_inertia: f64,
}

impl EvalReport {
    pub fn recall(&self, k: usize) -> Option<f64> {
        self.recall_at.get(&k).copied()
    }
}

fn check_labels(emb: &EmbeddingState, labels: &[usize]) -> Result<()> {
    if emb.n() != labels.len() {
        return Err(Error::DimensionMismatch {
            expected: emb.n(),
            got: labels.len(),
        });
    }
    Ok(())
}

/// Rank (0-based) of the nearest same-class neighbour of `q`, with ties in
/// distance broken by index. `None` when `q` has no same-class neighbour.
fn first_hit_rank(emb: &EmbeddingState, labels: &[usize], q: usize) -> Option<usize> {
    let mut order: Vec<(f64, usize)> = (0..emb.n()).filter(|&j| j != q).map(|j| (emb.dist(q, j), j)).collect();
    order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    order.iter().position(|&(_, j)| labels[j] == labels[q])
}

/// Recall@k for each `k`: fraction of queries with a same-class sample among
/// their `k` nearest other samples.
pub fn recall_at_k(emb: &EmbeddingState, labels: &[usize], ks: &[usize]) -> Result<BTreeMap<usize, f64>> {
    check_labels(emb, labels)?;
    let n = emb.n();
    for &k in ks {
        if k == 0 || k >= n {
            return Err(Error::invalid("k", format!("need 1 <= k < n = {n}, got {k}")));
        }
    }
    let ranks: Vec<Option<usize>> = (0..n).into_par_iter().map(|q| first_hit_rank(emb, labels, q)).collect();
    Ok(ks
        .iter()
        .map(|&k| {
            let hits = ranks.iter().filter(|r| matches!(r, Some(r) if *r < k)).count();
            (k, hits as f64 / n as f64)
        })
        .collect())
}

#[derive(Clone, Debug, PartialEq)]
pub struct KMeansResult {
    pub assignment: Vec<usize>,
    pub centroids: Vec<Vec<f64>>,
    pub inertia: f64,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(x: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, mu) in centroids.iter().enumerate() {
        let d = sq_dist(x, mu);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

fn plus_plus_seeds(emb: &EmbeddingState, k: usize, rng: &mut Rng) -> Vec<Vec<f64>> {
    let n = emb.n();
    let mut centroids = vec![emb.vector(rng.random_range(0..n)).to_vec()];
    let mut d2: Vec<f64> = (0..n).map(|i| sq_dist(emb.vector(i), &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut u = rng.random::<f64>() * total;
            let mut chosen = n - 1;
            for (i, &w) in d2.iter().enumerate() {
                if u < w {
                    chosen = i;
                    break;
                }
                u -= w;
            }
            chosen
        } else {
            rng.random_range(0..n)
        };
        let c = emb.vector(pick).to_vec();
        for (i, d) in d2.iter_mut().enumerate() {
            *d = d.min(sq_dist(emb.vector(i), &c));
        }
        centroids.push(c);
    }
    centroids
}

fn lloyd(emb: &EmbeddingState, mut centroids: Vec<Vec<f64>>) -> KMeansResult {
    let n = emb.n();
    let k = centroids.len();
    let dim = emb.dim();
    let mut assignment = vec![usize::MAX; n];
    for _ in 0..MAX_LLOYD_ITERATIONS {
        let mut changed = false;
        for (i, a) in assignment.iter_mut().enumerate() {
            let (c, _) = nearest(emb.vector(i), &centroids);
            if *a != c {
                *a = c;
                changed = true;
            }
        }
        if !changed {
            break;
        }
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (i, &c) in assignment.iter().enumerate() {
            counts[c] += 1;
            for (s, x) in sums[c].iter_mut().zip(emb.vector(i)) {
                *s += x;
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                centroids[c] = sums[c].iter().map(|s| s / counts[c] as f64).collect();
            }
        }
        for c in 0..k {
            if counts[c] == 0 {
                // reseed from the point farthest from its own centroid
                let far = (0..n)
                    .max_by(|&a, &b| {
                        sq_dist(emb.vector(a), &centroids[assignment[a]])
                            .total_cmp(&sq_dist(emb.vector(b), &centroids[assignment[b]]))
                            .then(b.cmp(&a))
                    })
                    .unwrap_or(0);
                centroids[c] = emb.vector(far).to_vec();
                counts[assignment[far]] -= 1;
                assignment[far] = c;
                counts[c] = 1;
            }
        }
    }
    let inertia = (0..n).map(|i| sq_dist(emb.vector(i), &centroids[assignment[i]])).sum();
    KMeansResult {
        assignment,
        centroids,
        inertia,
    }
}

/// Lloyd's algorithm from k-means++ seeds; the best of `restarts` runs by inertia.
pub fn kmeans(emb: &EmbeddingState, k: usize, restarts: usize, seed: u64) -> Result<KMeansResult> {
    let n = emb.n();
    if k == 0 || k > n {
        return Err(Error::invalid("k", format!("need 1 <= k <= n = {n}, got {k}")));
    }
    let mut rng = rng::stream(seed, streams::KMEANS);
    let mut best: Option<KMeansResult> = None;
    for _ in 0..restarts.max(1) {
        let run = lloyd(emb, plus_plus_seeds(emb, k, &mut rng));
        if best.as_ref().is_none_or(|b| run.inertia < b.inertia) {
            best = Some(run);
        }
    }
    Ok(best.expect("at least one restart"))
}

fn entropy(counts: impl Iterator<Item = usize>, n: f64) -> f64 {
    counts
        .filter(|&c| c > 0)
        .map(|c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .sum()
}

/// Normalised mutual information `I / sqrt(H(assignment) H(labels))`.
pub fn nmi(assignment: &[usize], labels: &[usize]) -> Result<f64> {
    if assignment.len() != labels.len() {
        return Err(Error::DimensionMismatch {
            expected: labels.len(),
            got: assignment.len(),
        });
    }
    if labels.is_empty() {
        return Err(Error::Empty("label sequence"));
    }
    let n = labels.len() as f64;
    let mut joint: BTreeMap<(usize, usize), usize> = BTreeMap::new();
    let mut rows: BTreeMap<usize, usize> = BTreeMap::new();
    let mut cols: BTreeMap<usize, usize> = BTreeMap::new();
    for (&a, &y) in assignment.iter().zip(labels) {
        *joint.entry((a, y)).or_default() += 1;
        *rows.entry(a).or_default() += 1;
        *cols.entry(y).or_default() += 1;
    }
    let h_a = entropy(rows.values().copied(), n);
    let h_y = entropy(cols.values().copied(), n);
    if h_a == 0.0 && h_y == 0.0 {
        return Ok(1.0);
    }
    if h_a == 0.0 || h_y == 0.0 {
        return Ok(0.0);
    }
    let mi: f64 = joint
        .iter()
        .map(|(&(a, y), &c)| {
            let pxy = c as f64 / n;
            let px = rows[&a] as f64 / n;
            let py = cols[&y] as f64 / n;
            pxy * (pxy / (px * py)).ln()
        })
        .sum();
    Ok((mi / (h_a * h_y).sqrt()).clamp(0.0, 1.0))
}

/// Recall@k for each `k`, plus NMI of a k-means clustering with one cluster per class.
pub fn evaluate(
    emb: &EmbeddingState,
    labels: &[usize],
    num_classes: usize,
    ks: &[usize],
    restarts: usize,
    seed: u64,
) -> Result<EvalReport> {
    let recall_at = recall_at_k(emb, labels, ks)?;
    let clusters = kmeans(emb, num_classes.min(emb.n()), restarts, seed)?;
    Ok(EvalReport {
        recall_at,
        nmi: nmi(&clusters.assignment, labels)?,
        kmeans_inertia: clusters.inertia.max(0.0),
    })
}
