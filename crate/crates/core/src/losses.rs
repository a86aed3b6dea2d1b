//! Pair and triplet losses on the hypersphere, hinged and unhinged, with
//! analytic gradients with respect to the embedding vectors.

use crate::domain::{dot, euclidean, EmbeddingState, LossConfig, LossFamily, Pair, PairLabel, Triplet, D_MAX};

/// Distances below this are treated as a collapsed pair with no usable gradient.
pub const DEGENERATE_DISTANCE: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PairLossValue {
    pub value: f64,
    /// Whether the hinge is open (the loss is strictly positive).
    pub active: bool,
}

fn hinge(x: f64) -> PairLossValue {
    if x > 0.0 {
        PairLossValue {
            value: x,
            active: true,
        }
    } else {
        PairLossValue {
            value: 0.0,
            active: false,
        }
    }
}

/// `[(d - beta) t + alpha]_+`
pub fn marginal_loss(d_ij: f64, t: PairLabel, cfg: &LossConfig) -> PairLossValue {
    hinge((d_ij - cfg.beta) * t.sign() + cfg.alpha)
}

/// `[d_ap - d_an + alpha]_+`
pub fn triplet_loss(d_ap: f64, d_an: f64, cfg: &LossConfig) -> PairLossValue {
    hinge(d_ap - d_an + cfg.alpha)
}

/// `d` for positive pairs, `D_MAX - d` for negative pairs, so that
/// `l(-t) = D_MAX - l(t)`.
pub fn auxiliary_pair_loss(d_ij: f64, t: PairLabel) -> f64 {
    match t {
        PairLabel::Positive => d_ij,
        PairLabel::Negative => D_MAX - d_ij,
    }
}

/// `D_MAX + d_ap - d_an + alpha`
pub fn unhinged_triplet_loss(d_ap: f64, d_an: f64, cfg: &LossConfig) -> f64 {
    D_MAX + d_ap - d_an + cfg.alpha
}

/// `D_MAX + (d - beta) t + alpha`
pub fn unhinged_marginal_loss(d_ij: f64, t: PairLabel, cfg: &LossConfig) -> f64 {
    D_MAX + (d_ij - cfg.beta) * t.sign() + cfg.alpha
}

/// Anything that can hand out a vector per sample index. Lets the gradient code
/// run both on unit-norm embeddings and on raw perturbed vectors.
pub trait Vectors {
    fn vector(&self, i: usize) -> &[f64];
}

impl Vectors for EmbeddingState {
    fn vector(&self, i: usize) -> &[f64] {
        EmbeddingState::vector(self, i)
    }
}

impl Vectors for [Vec<f64>] {
    fn vector(&self, i: usize) -> &[f64] {
        &self[i]
    }
}

impl Vectors for Vec<Vec<f64>> {
    fn vector(&self, i: usize) -> &[f64] {
        &self[i]
    }
}

/// A unit of loss: a labelled pair or a triplet.
///
/// Under a marginal config a triplet stands for its 1-1 pair of pairs
/// `(a, p, +1)` and `(a, n, -1)`; under a triplet config a lone pair is scored
/// with the auxiliary pair-wise loss.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum LossItem {
    Pair(Pair),
    Triplet(Triplet),
}

/// Gradient of one item's loss, sparse over the samples it touches.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct GradientContribution {
    pub entries: Vec<(usize, Vec<f64>)>,
    pub loss: f64,
    pub active: bool,
    /// Set when an open hinge sat on a zero distance; the gradient was dropped.
    pub degenerate: bool,
}

impl GradientContribution {
    fn add(&mut self, index: usize, scale: f64, direction: &[f64]) {
        if let Some((_, g)) = self.entries.iter_mut().find(|(i, _)| *i == index) {
            for (gi, di) in g.iter_mut().zip(direction) {
                *gi += scale * di;
            }
        } else {
            self.entries
                .push((index, direction.iter().map(|d| scale * d).collect()));
        }
    }

    /// Removes the radial component of every entry so it is tangent to the sphere.
    pub fn project_tangent<V: Vectors + ?Sized>(&mut self, vectors: &V) {
        for (i, g) in &mut self.entries {
            project_tangent(vectors.vector(*i), g);
        }
    }
}

/// `g <- g - (g . x) x` for unit `x`.
pub fn project_tangent(x: &[f64], g: &mut [f64]) {
    let radial = dot(g, x);
    for (gi, xi) in g.iter_mut().zip(x) {
        *gi -= radial * xi;
    }
}

/// Unit direction `(x_i - x_j) / d_ij`, the gradient of `d_ij` w.r.t. `x_i`.
fn distance_direction(xi: &[f64], xj: &[f64], d: f64) -> Vec<f64> {
    xi.iter().zip(xj).map(|(a, b)| (a - b) / d).collect()
}

fn pair_loss(d: f64, label: PairLabel, cfg: &LossConfig) -> (f64, bool, f64) {
    // (value, active, d value / d distance)
    match (cfg.family, cfg.hinged) {
        (LossFamily::Marginal, true) => {
            let l = marginal_loss(d, label, cfg);
            (l.value, l.active, if l.active { label.sign() } else { 0.0 })
        }
        (LossFamily::Marginal, false) => (unhinged_marginal_loss(d, label, cfg), true, label.sign()),
        (LossFamily::Triplet, _) => (auxiliary_pair_loss(d, label), true, label.sign()),
    }
}

/// Loss value of one item under `cfg`.
pub fn item_loss<V: Vectors + ?Sized>(vectors: &V, item: &LossItem, cfg: &LossConfig) -> f64 {
    let dist = |i: usize, j: usize| euclidean(vectors.vector(i), vectors.vector(j));
    match *item {
        LossItem::Pair(pair) => pair_loss(dist(pair.i, pair.j), pair.label, cfg).0,
        LossItem::Triplet(t) => {
            let d_ap = dist(t.anchor, t.positive);
            let d_an = dist(t.anchor, t.negative);
            match (cfg.family, cfg.hinged) {
                (LossFamily::Triplet, true) => triplet_loss(d_ap, d_an, cfg).value,
                (LossFamily::Triplet, false) => unhinged_triplet_loss(d_ap, d_an, cfg),
                (LossFamily::Marginal, _) => {
                    pair_loss(d_ap, PairLabel::Positive, cfg).0 + pair_loss(d_an, PairLabel::Negative, cfg).0
                }
            }
        }
    }
}

/// Euclidean gradient of [`item_loss`] w.r.t. the vectors of the samples involved.
///
/// Closed hinges give an all-zero contribution. An open hinge on a zero
/// distance has no gradient; that term is dropped and `degenerate` is set.
pub fn loss_gradient<V: Vectors + ?Sized>(vectors: &V, item: &LossItem, cfg: &LossConfig) -> GradientContribution {
    let mut out = GradientContribution::default();
    let pair_term = |out: &mut GradientContribution, i: usize, j: usize, slope: f64| {
        if slope == 0.0 {
            return;
        }
        let (xi, xj) = (vectors.vector(i), vectors.vector(j));
        let d = euclidean(xi, xj);
        if d < DEGENERATE_DISTANCE {
            out.degenerate = true;
            return;
        }
        let dir = distance_direction(xi, xj, d);
        out.add(i, slope, &dir);
        out.add(j, -slope, &dir);
    };
    let dist = |i: usize, j: usize| euclidean(vectors.vector(i), vectors.vector(j));

    match *item {
        LossItem::Pair(pair) => {
            let (value, active, slope) = pair_loss(dist(pair.i, pair.j), pair.label, cfg);
            out.loss = value;
            out.active = active;
            pair_term(&mut out, pair.i, pair.j, slope);
        }
        LossItem::Triplet(t) => {
            let d_ap = dist(t.anchor, t.positive);
            let d_an = dist(t.anchor, t.negative);
            let (value, slope_ap, slope_an) = match (cfg.family, cfg.hinged) {
                (LossFamily::Triplet, true) => {
                    let l = triplet_loss(d_ap, d_an, cfg);
                    let s = if l.active { 1.0 } else { 0.0 };
                    (l.value, s, -s)
                }
                (LossFamily::Triplet, false) => (unhinged_triplet_loss(d_ap, d_an, cfg), 1.0, -1.0),
                (LossFamily::Marginal, _) => {
                    let (lp, _, sp) = pair_loss(d_ap, PairLabel::Positive, cfg);
                    let (ln, _, sn) = pair_loss(d_an, PairLabel::Negative, cfg);
                    (lp + ln, sp, sn)
                }
            };
            out.loss = value;
            out.active = slope_ap != 0.0 || slope_an != 0.0;
            pair_term(&mut out, t.anchor, t.positive, slope_ap);
            pair_term(&mut out, t.anchor, t.negative, slope_an);
        }
    }
    if out.degenerate {
        out.entries.clear();
    }
    out
}
