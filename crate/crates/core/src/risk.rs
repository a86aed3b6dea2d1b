//! Empirical risk, the affine relation between clean and noisy pair risk, the
//! Q multiplier, and exact noise-tolerance bounds.
//!
//! With the auxiliary pair-wise loss, the expected weighted loss of a pair
//! under label noise is `M_t * w_t * l + w_{-t} * q_t * D_MAX`, where
//! `M_t = 1 - q_t - q_t * w_{-t} / w_t`. A clean minimiser stays a noisy
//! minimiser as long as `Q = min_t M_t >= 0`.

use serde::{Deserialize, Serialize};

use crate::domain::{EmbeddingState, LabeledPointSet, LabelChannel, LossConfig, PairLabel, D_MAX};
use crate::error::{Error, Result};
use crate::losses::{auxiliary_pair_loss, item_loss, marginal_loss, LossItem, Vectors};
use crate::noise::{pair_noise_rates_at, PairNoiseRates};
use crate::sampling::SkewEstimate;

/// Pair weights that depend only on the pair label.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightScheme {
    pub w_pos: f64,
    pub w_neg: f64,
}

impl WeightScheme {
    pub fn new(w_pos: f64, w_neg: f64) -> Result<Self> {
        if !(w_pos > 0.0 && w_neg > 0.0) {
            return Err(Error::invalid("weights", format!("both must be > 0, got ({w_pos}, {w_neg})")));
        }
        Ok(WeightScheme { w_pos, w_neg })
    }

    /// Weights induced by 1-1 sampling with `K` balanced classes: `(1, 1/K)`.
    pub fn one_to_one(num_classes: usize) -> Self {
        WeightScheme {
            w_pos: 1.0,
            w_neg: 1.0 / num_classes as f64,
        }
    }

    pub fn for_label(&self, t: PairLabel) -> f64 {
        match t {
            PairLabel::Positive => self.w_pos,
            PairLabel::Negative => self.w_neg,
        }
    }
}

/// `1 - q_t - q_t * w_{-t} / w_t`
pub fn channel_multiplier(t: PairLabel, weights: &WeightScheme, rates: &PairNoiseRates) -> f64 {
    let q = rates.for_label(t);
    1.0 - q - q * weights.for_label(t.flipped()) / weights.for_label(t)
}

/// Smallest channel multiplier.
pub fn q_multiplier(weights: &WeightScheme, rates: &PairNoiseRates) -> f64 {
    channel_multiplier(PairLabel::Positive, weights, rates).min(channel_multiplier(PairLabel::Negative, weights, rates))
}

/// Expected weighted noisy loss of one pair, computed two ways.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NoisyPairRisk {
    /// `scale * l_clean + offset`
    pub affine: f64,
    /// `(1 - q) w_t l(t) + q w_{-t} l(-t)`
    pub two_branch: f64,
    pub scale: f64,
    pub offset: f64,
}

pub fn expected_noisy_pair_risk(
    l_clean: f64,
    t: PairLabel,
    weights: &WeightScheme,
    rates: &PairNoiseRates,
) -> NoisyPairRisk {
    let q = rates.for_label(t);
    let w = weights.for_label(t);
    let w_flip = weights.for_label(t.flipped());
    let scale = channel_multiplier(t, weights, rates) * w;
    let offset = w_flip * q * D_MAX;
    NoisyPairRisk {
        affine: scale * l_clean + offset,
        two_branch: (1.0 - q) * w * l_clean + q * w_flip * (D_MAX - l_clean),
        scale,
        offset,
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WeightedItem {
    pub item: LossItem,
    pub weight: f64,
}

/// Weighted mean loss `sum w l / sum w`.
pub fn empirical_risk<V: Vectors + ?Sized>(items: &[WeightedItem], vectors: &V, cfg: &LossConfig) -> Result<f64> {
    if items.is_empty() {
        return Err(Error::Empty("risk item set"));
    }
    let total_weight: f64 = items.iter().map(|w| w.weight).sum();
    if !(total_weight > 0.0) {
        return Err(Error::invalid("weights", "total weight must be positive"));
    }
    let sum: f64 = items
        .iter()
        .map(|w| w.weight * item_loss(vectors, &w.item, cfg))
        .sum();
    Ok(sum / total_weight)
}

/// Per-channel sums of the auxiliary loss over all pairs of a labelling.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ChannelSums {
    pub positive: f64,
    pub negative: f64,
    pub positive_pairs: usize,
    pub negative_pairs: usize,
}

pub fn channel_sums(emb: &EmbeddingState, labels: &[usize]) -> ChannelSums {
    let mut sums = ChannelSums::default();
    for i in 0..labels.len() {
        for j in i + 1..labels.len() {
            let t = PairLabel::from_labels(labels[i], labels[j]);
            let l = auxiliary_pair_loss(emb.dist(i, j), t);
            match t {
                PairLabel::Positive => {
                    sums.positive += l;
                    sums.positive_pairs += 1;
                }
                PairLabel::Negative => {
                    sums.negative += l;
                    sums.negative_pairs += 1;
                }
            }
        }
    }
    sums
}

/// Clean and expected noisy weighted auxiliary risk over every pair.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RiskReport {
    pub clean_risk: f64,
    pub noisy_risk_expected: f64,
    pub q: f64,
    pub scale_pos: f64,
    pub scale_neg: f64,
    pub offset: f64,
    /// Normaliser: total clean weight.
    pub z: f64,
    pub sums: ChannelSums,
}

pub fn risk_report(emb: &EmbeddingState, labels: &[usize], weights: &WeightScheme, rates: &PairNoiseRates) -> RiskReport {
    let sums = channel_sums(emb, labels);
    let z = weights.w_pos * sums.positive_pairs as f64 + weights.w_neg * sums.negative_pairs as f64;
    let pos = expected_noisy_pair_risk(0.0, PairLabel::Positive, weights, rates);
    let neg = expected_noisy_pair_risk(0.0, PairLabel::Negative, weights, rates);
    let offset = pos.offset * sums.positive_pairs as f64 + neg.offset * sums.negative_pairs as f64;
    let clean = weights.w_pos * sums.positive + weights.w_neg * sums.negative;
    let noisy = pos.scale * sums.positive + neg.scale * sums.negative + offset;
    RiskReport {
        clean_risk: clean / z,
        noisy_risk_expected: noisy / z,
        q: q_multiplier(weights, rates),
        scale_pos: pos.scale,
        scale_neg: neg.scale,
        offset: offset / z,
        z,
        sums,
    }
}

/// Expected noisy risk summed pair by pair from the two-branch expectation.
pub fn expected_noisy_risk_direct(emb: &EmbeddingState, labels: &[usize], weights: &WeightScheme, rates: &PairNoiseRates) -> f64 {
    let mut total = 0.0;
    let mut z = 0.0;
    for i in 0..labels.len() {
        for j in i + 1..labels.len() {
            let t = PairLabel::from_labels(labels[i], labels[j]);
            let l = auxiliary_pair_loss(emb.dist(i, j), t);
            total += expected_noisy_pair_risk(l, t, weights, rates).two_branch;
            z += weights.for_label(t);
        }
    }
    total / z
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OrderingReport {
    /// `S+(theta*) - S+(theta)`
    pub s_plus: f64,
    /// `S-(theta*) - S-(theta)`
    pub s_minus: f64,
    pub precondition_holds: bool,
    pub failing_channels: Vec<PairLabel>,
    pub q: f64,
    pub clean_diff: f64,
    pub noisy_diff: f64,
    /// `(1/Z) (M+ w+ S+ + M- w- S-)`, which must equal `noisy_diff`.
    pub noisy_diff_from_sums: f64,
    /// `Q * clean_diff`
    pub upper_bound: f64,
    /// `noisy_diff <= Q * clean_diff <= 0`
    pub chain_holds: bool,
}

/// Checks `R^(theta*) - R^(theta) <= Q (R(theta*) - R(theta)) <= 0` on a
/// concrete pair of embeddings. Precondition failures are reported, not raised.
pub fn verify_risk_ordering(
    emb_star: &EmbeddingState,
    emb_other: &EmbeddingState,
    labels: &[usize],
    weights: &WeightScheme,
    rates: &PairNoiseRates,
) -> Result<OrderingReport> {
    if emb_star.n() != labels.len() || emb_other.n() != labels.len() {
        return Err(Error::DimensionMismatch {
            expected: labels.len(),
            got: emb_star.n().min(emb_other.n()),
        });
    }
    let star = risk_report(emb_star, labels, weights, rates);
    let other = risk_report(emb_other, labels, weights, rates);
    let s_plus = star.sums.positive - other.sums.positive;
    let s_minus = star.sums.negative - other.sums.negative;
    let mut failing = Vec::new();
    if s_plus > 0.0 {
        failing.push(PairLabel::Positive);
    }
    if s_minus > 0.0 {
        failing.push(PairLabel::Negative);
    }
    let clean_diff = star.clean_risk - other.clean_risk;
    let noisy_diff = star.noisy_risk_expected - other.noisy_risk_expected;
    let noisy_diff_from_sums = (star.scale_pos * s_plus + star.scale_neg * s_minus) / star.z;
    let q = star.q;
    let upper_bound = q * clean_diff;
    let tol = 1e-12 * (1.0 + star.noisy_risk_expected.abs());
    let chain_holds = noisy_diff <= upper_bound + tol && upper_bound <= tol;
    Ok(OrderingReport {
        s_plus,
        s_minus,
        precondition_holds: failing.is_empty(),
        failing_channels: failing,
        q,
        clean_diff,
        noisy_diff,
        noisy_diff_from_sums,
        upper_bound,
        chain_holds,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundMethod {
    /// Bisection on a validated monotone bracket.
    Bisection,
    /// Last grid point satisfying the condition; used when monotonicity fails.
    GridScan,
    /// Large-K closed form only.
    Asymptotic,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundResult {
    pub p_star: f64,
    pub asymptotic: f64,
    pub exact: bool,
    pub method: BoundMethod,
    pub eta_or_gamma: f64,
    pub diagnostic: Option<String>,
}

/// Worst-case condition for hinged triplet mining with skew `eta`.
///
/// Negative pairs carry weight `eta/K` (harder) or `1/(eta K)` (easier). Each
/// channel takes the weight that minimises its multiplier.
pub fn triplet_condition(p: f64, num_classes: usize, eta: f64) -> Result<f64> {
    let rates = pair_noise_rates_at(p, num_classes)?;
    let k = num_classes as f64;
    let pos = channel_multiplier(PairLabel::Positive, &WeightScheme { w_pos: 1.0, w_neg: eta / k }, &rates);
    let neg = channel_multiplier(PairLabel::Negative, &WeightScheme { w_pos: 1.0, w_neg: 1.0 / (eta * k) }, &rates);
    Ok(pos.min(neg))
}

/// Condition for hinged marginal mining: positive weight `eta+`, negative `eta-/K`.
pub fn marginal_condition(p: f64, num_classes: usize, gamma: f64) -> Result<f64> {
    let rates = pair_noise_rates_at(p, num_classes)?;
    let weights = WeightScheme {
        w_pos: 1.0,
        w_neg: gamma / num_classes as f64,
    };
    Ok(q_multiplier(&weights, &rates))
}

pub fn triplet_asymptotic_bound(eta: f64) -> f64 {
    1.0 - (1.0 - 1.0 / eta).sqrt()
}

pub fn marginal_asymptotic_bound(gamma: f64) -> f64 {
    1.0 - (1.0 - gamma).sqrt()
}

const GRID_POINTS: usize = 4000;
const MONOTONE_SLACK: f64 = 1e-12;

/// Largest `p` such that `condition >= 0` on all of `[0, p]`.
fn solve_condition(condition: impl Fn(f64) -> Result<f64>) -> Result<(f64, BoundMethod, Option<String>)> {
    let grid: Vec<f64> = (0..GRID_POINTS).map(|i| i as f64 / GRID_POINTS as f64).collect();
    let values = grid.iter().map(|&p| condition(p)).collect::<Result<Vec<f64>>>()?;
    if values[0] < 0.0 {
        return Ok((0.0, BoundMethod::GridScan, Some("condition fails at p = 0".into())));
    }
    let Some(first_bad) = values.iter().position(|&v| v < 0.0) else {
        return Ok((1.0, BoundMethod::GridScan, Some("condition holds on the whole grid".into())));
    };
    if let Some(w) = values[..=first_bad].windows(2).position(|w| w[1] > w[0] + MONOTONE_SLACK) {
        let err = Error::NonMonotone(format!("condition increases between p = {} and p = {}", grid[w], grid[w + 1]));
        return Ok((grid[first_bad - 1], BoundMethod::GridScan, Some(err.to_string())));
    }
    let (mut lo, mut hi) = (grid[first_bad - 1], grid[first_bad]);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if condition(mid)? >= 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok((lo, BoundMethod::Bisection, None))
}

fn check_bound_inputs(num_classes: usize) -> Result<()> {
    if num_classes < 3 {
        return Err(Error::invalid("K", format!("bounds need K >= 3, got {num_classes}")));
    }
    Ok(())
}

/// Maximal tolerated sample noise rate for hinged triplet loss with skew `eta`.
pub fn solve_triplet_bound(num_classes: usize, eta: f64) -> Result<BoundResult> {
    check_bound_inputs(num_classes)?;
    if !(eta >= 1.0 && eta.is_finite()) {
        return Err(Error::invalid("eta", format!("must be >= 1, got {eta}")));
    }
    let (p_star, method, diagnostic) = solve_condition(|p| triplet_condition(p, num_classes, eta))?;
    Ok(BoundResult {
        p_star,
        asymptotic: triplet_asymptotic_bound(eta),
        exact: method == BoundMethod::Bisection,
        method,
        eta_or_gamma: eta,
        diagnostic,
    })
}

/// Maximal tolerated sample noise rate for hinged marginal loss with `gamma = eta-/eta+`.
pub fn solve_marginal_bound(num_classes: usize, gamma: f64) -> Result<BoundResult> {
    check_bound_inputs(num_classes)?;
    if !(gamma > 0.0 && gamma <= 1.0) {
        return Err(Error::invalid("gamma", format!("must lie in (0, 1], got {gamma}")));
    }
    let (p_star, method, diagnostic) = solve_condition(|p| marginal_condition(p, num_classes, gamma))?;
    Ok(BoundResult {
        p_star,
        asymptotic: marginal_asymptotic_bound(gamma),
        exact: method == BoundMethod::Bisection,
        method,
        eta_or_gamma: gamma,
        diagnostic,
    })
}

/// Pairs whose marginal hinge is open under the clean labels, the noisy labels, or both.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MarginalPartition {
    /// Active clean, inactive noisy.
    pub plus: Vec<(usize, usize)>,
    /// Inactive clean, active noisy.
    pub minus: Vec<(usize, usize)>,
    /// Active in both.
    pub both: Vec<(usize, usize)>,
}

impl MarginalPartition {
    pub fn active_count(&self) -> usize {
        self.plus.len() + self.minus.len() + self.both.len()
    }
}

pub fn marginal_partition(
    set: &LabeledPointSet,
    pairs: &[(usize, usize)],
    emb: &EmbeddingState,
    cfg: &LossConfig,
) -> MarginalPartition {
    let truth = set.labels(LabelChannel::True);
    let observed = set.labels(LabelChannel::Observed);
    let mut part = MarginalPartition::default();
    for &(i, j) in pairs {
        let d = emb.dist(i, j);
        let clean = marginal_loss(d, PairLabel::from_labels(truth[i], truth[j]), cfg).active;
        let noisy = marginal_loss(d, PairLabel::from_labels(observed[i], observed[j]), cfg).active;
        match (clean, noisy) {
            (true, false) => part.plus.push((i, j)),
            (false, true) => part.minus.push((i, j)),
            (true, true) => part.both.push((i, j)),
            (false, false) => {}
        }
    }
    part
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ZEstimate {
    /// `1 / (eta+/eta- - 1)`; infinite when `gamma = 1`.
    pub z: f64,
    pub unbounded: bool,
}

pub fn residual_z_estimate(skew: &SkewEstimate) -> ZEstimate {
    let ratio = 1.0 / skew.gamma;
    if ratio - 1.0 <= 0.0 {
        ZEstimate {
            z: f64::INFINITY,
            unbounded: true,
        }
    } else {
        ZEstimate {
            z: 1.0 / (ratio - 1.0),
            unbounded: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResidualReport {
    pub z: ZEstimate,
    pub plus_count: usize,
    pub minus_count: usize,
    pub both_count: usize,
    /// `z |T+| > |T-|`
    pub z_condition_holds: bool,
    pub residual: f64,
    pub residual_negative: bool,
}

/// Assembles the marginal-loss residual between a reference embedding and
/// another one, using the partition computed at the reference.
#[allow(clippy::too_many_arguments)]
pub fn marginal_residual(
    set: &LabeledPointSet,
    pairs: &[(usize, usize)],
    emb_star: &EmbeddingState,
    emb_other: &EmbeddingState,
    cfg: &LossConfig,
    weights: &WeightScheme,
    rates: &PairNoiseRates,
    skew: &SkewEstimate,
) -> ResidualReport {
    let part = marginal_partition(set, pairs, emb_star, cfg);
    let q = q_multiplier(weights, rates);
    let truth = set.true_labels();
    let observed = set.observed_labels();
    let loss = |emb: &EmbeddingState, i: usize, j: usize, t: PairLabel| marginal_loss(emb.dist(i, j), t, cfg).value;
    let mut residual = 0.0;
    for &(i, j) in &part.plus {
        let t = PairLabel::from_labels(truth[i], truth[j]);
        let m = 1.0 - rates.for_label(t) - q;
        residual += m * weights.for_label(t) * (loss(emb_star, i, j, t) - loss(emb_other, i, j, t));
    }
    for &(i, j) in &part.minus {
        let t = PairLabel::from_labels(truth[i], truth[j]);
        let t_hat = PairLabel::from_labels(observed[i], observed[j]);
        residual += rates.for_label(t)
            * weights.for_label(t_hat)
            * (loss(emb_star, i, j, t.flipped()) - loss(emb_other, i, j, t.flipped()));
    }
    residual /= pairs.len().max(1) as f64;
    let z = residual_z_estimate(skew);
    let z_condition_holds = if z.unbounded {
        !part.plus.is_empty() || part.minus.is_empty()
    } else {
        z.z * part.plus.len() as f64 > part.minus.len() as f64
    };
    ResidualReport {
        z,
        plus_count: part.plus.len(),
        minus_count: part.minus.len(),
        both_count: part.both.len(),
        z_condition_holds,
        residual,
        residual_negative: residual < 0.0,
    }
}

/// All unordered pairs `(i, j)`, `i < j`.
pub fn all_pairs(n: usize) -> Vec<(usize, usize)> {
    (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect()
}
