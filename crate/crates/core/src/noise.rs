//! Uniform label noise and its propagation from sample labels to pair labels.
//!
//! Each observed label is kept with probability `1 - p` and otherwise replaced
//! by one of the other `K - 1` classes, chosen uniformly. A pair label then
//! flips with a probability that depends only on whether the pair was
//! positive or negative.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::domain::LabeledPointSet;
use crate::error::{Error, Result};
use crate::rng::{self, streams, Rng};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub p: f64,
    pub num_classes: usize,
    pub seed: u64,
}

impl NoiseSpec {
    pub fn new(p: f64, num_classes: usize, seed: u64) -> Result<Self> {
        let spec = NoiseSpec {
            p,
            num_classes,
            seed,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.p) {
            return Err(Error::invalid("p", format!("noise rate must lie in [0, 1), got {}", self.p)));
        }
        validate_classes(self.num_classes)
    }
}

fn validate_classes(k: usize) -> Result<()> {
    if k < 2 {
        return Err(Error::invalid("K", format!("need at least 2 classes, got {k}")));
    }
    Ok(())
}

/// Flip probabilities of pair labels.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairNoiseRates {
    /// Probability that a negative pair is observed as positive.
    pub q_neg: f64,
    /// Probability that a positive pair is observed as negative.
    pub q_pos: f64,
}

impl PairNoiseRates {
    pub const NONE: PairNoiseRates = PairNoiseRates {
        q_neg: 0.0,
        q_pos: 0.0,
    };

    pub fn for_label(&self, label: crate::domain::PairLabel) -> f64 {
        match label {
            crate::domain::PairLabel::Positive => self.q_pos,
            crate::domain::PairLabel::Negative => self.q_neg,
        }
    }
}

/// Draws the observed label for a sample whose true label is `y`.
pub fn corrupt_label(y: usize, p: f64, num_classes: usize, rng: &mut Rng) -> usize {
    if p > 0.0 && rng.random_bool(p) {
        let u = rng.random_range(0..num_classes - 1);
        if u >= y {
            u + 1
        } else {
            u
        }
    } else {
        y
    }
}

/// Corrupts the observed labels of a clean set. True labels are untouched.
pub fn inject_noise(set: &LabeledPointSet, spec: &NoiseSpec) -> Result<LabeledPointSet> {
    spec.validate()?;
    if spec.num_classes != set.num_classes() {
        return Err(Error::invalid(
            "K",
            format!("noise spec has K = {}, dataset has K = {}", spec.num_classes, set.num_classes()),
        ));
    }
    if !set.is_clean() {
        return Err(Error::invalid("observed_labels", "noise must be injected into a clean set"));
    }
    let mut rng = rng::stream(spec.seed, streams::NOISE);
    let observed = set
        .true_labels()
        .iter()
        .map(|&y| corrupt_label(y, spec.p, spec.num_classes, &mut rng))
        .collect();
    set.with_observed_labels(observed)
}

/// Closed-form pair flip rates.
pub fn pair_noise_rates(spec: &NoiseSpec) -> Result<PairNoiseRates> {
    spec.validate()?;
    pair_noise_rates_at(spec.p, spec.num_classes)
}

/// Closed-form pair flip rates for any `p` in `[0, 1]`.
///
/// Negative pair: one label moves onto the other (`2p(1-p)/(K-1)`), or both
/// move onto a common third class (`p^2 (K-2)/(K-1)^2`).
/// Positive pair: exactly one label moves (`2p(1-p)`), or both move to
/// different classes (`p^2 (1 - 1/(K-1))`).
pub fn pair_noise_rates_at(p: f64, num_classes: usize) -> Result<PairNoiseRates> {
    validate_classes(num_classes)?;
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::invalid("p", format!("must lie in [0, 1], got {p}")));
    }
    let k1 = (num_classes - 1) as f64;
    let k2 = (num_classes - 2) as f64;
    let q_neg = 2.0 * p * (1.0 - p) / k1 + p * p * k2 / (k1 * k1);
    let q_pos = 2.0 * p * (1.0 - p) + p * p * (1.0 - 1.0 / k1);
    Ok(PairNoiseRates { q_neg, q_pos })
}

/// Probability of observing `observed` for a sample whose true label is `truth`.
pub fn label_transition_probability(truth: usize, observed: usize, p: f64, num_classes: usize) -> f64 {
    if truth == observed {
        1.0 - p
    } else {
        p / (num_classes - 1) as f64
    }
}

/// Pair flip rates by summing over all `K^2` joint corruptions of a pair.
pub fn enumerate_pair_noise_rates(p: f64, num_classes: usize) -> Result<PairNoiseRates> {
    validate_classes(num_classes)?;
    let k = num_classes;
    let mut q_pos = 0.0;
    let mut q_neg = 0.0;
    for u in 0..k {
        for v in 0..k {
            // positive pair with true labels (0, 0)
            if u != v {
                q_pos += label_transition_probability(0, u, p, k) * label_transition_probability(0, v, p, k);
            }
            // negative pair with true labels (0, 1)
            if u == v {
                q_neg += label_transition_probability(0, u, p, k) * label_transition_probability(1, v, p, k);
            }
        }
    }
    Ok(PairNoiseRates { q_neg, q_pos })
}

/// Empirical flip rates from `trials` simulated positive and negative pairs.
pub fn monte_carlo_pair_noise(spec: &NoiseSpec, trials: u64) -> Result<PairNoiseRates> {
    spec.validate()?;
    if trials == 0 {
        return Err(Error::invalid("trials", "need at least one trial"));
    }
    let k = spec.num_classes;
    let mut rng = rng::stream(spec.seed, streams::MONTE_CARLO);
    let mut pos_flips = 0u64;
    let mut neg_flips = 0u64;
    for _ in 0..trials {
        let a = corrupt_label(0, spec.p, k, &mut rng);
        let b = corrupt_label(0, spec.p, k, &mut rng);
        pos_flips += u64::from(a != b);
        let a = corrupt_label(0, spec.p, k, &mut rng);
        let b = corrupt_label(1, spec.p, k, &mut rng);
        neg_flips += u64::from(a == b);
    }
    Ok(PairNoiseRates {
        q_neg: neg_flips as f64 / trials as f64,
        q_pos: pos_flips as f64 / trials as f64,
    })
}

/// Binomial standard error of an empirical rate `q` over `trials` draws.
pub fn standard_error(q: f64, trials: u64) -> f64 {
    (q * (1.0 - q) / trials as f64).sqrt()
}
