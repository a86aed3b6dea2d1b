//! Synthetic clustered datasets on the unit sphere.

use rand::seq::{IndexedRandom, SliceRandom};
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::domain::{euclidean, LabeledPointSet};
use crate::error::{Error, Result};
use crate::optimizer::random_unit_vector;
use crate::rng::{self, streams};

const MIN_CENTER_ANGLE: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    #[serde(rename = "K")]
    pub num_classes: usize,
    pub per_class: usize,
    pub d: usize,
    /// Larger values give tighter classes. Per-coordinate noise has standard
    /// deviation `1 / (spread * sqrt(d))`.
    pub spread: f64,
    #[serde(default)]
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            num_classes: 10,
            per_class: 50,
            d: 16,
            spread: 1.0,
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(Error::invalid("K", format!("need K >= 2, got {}", self.num_classes)));
        }
        if self.per_class < 2 {
            return Err(Error::invalid("per_class", format!("need >= 2, got {}", self.per_class)));
        }
        if self.d < 2 {
            return Err(Error::invalid("d", format!("need d >= 2, got {}", self.d)));
        }
        if !(self.spread > 0.0 && self.spread.is_finite()) {
            return Err(Error::invalid("spread", format!("must be > 0, got {}", self.spread)));
        }
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.num_classes * self.per_class
    }
}

/// Class directions drawn uniformly on the sphere; each sample is its class
/// direction plus isotropic Gaussian noise, renormalised. Samples are ordered
/// class by class and stored as features.
pub fn generate(spec: &SynthSpec) -> Result<LabeledPointSet> {
    spec.validate()?;
    let mut rng = rng::stream(spec.seed, streams::DATA);
    let min_chord = 2.0 * (MIN_CENTER_ANGLE / 2.0).sin();
    let mut centers: Vec<Vec<f64>> = Vec::with_capacity(spec.num_classes);
    while centers.len() < spec.num_classes {
        let c = random_unit_vector(spec.d, &mut rng);
        if centers.iter().all(|o| euclidean(o, &c) > min_chord) {
            centers.push(c);
        }
    }
    let noise = Normal::new(0.0, 1.0 / (spec.spread * (spec.d as f64).sqrt()))
        .map_err(|e| Error::invalid("spread", e.to_string()))?;
    let mut features = Vec::with_capacity(spec.n());
    let mut labels = Vec::with_capacity(spec.n());
    for (y, center) in centers.iter().enumerate() {
        for _ in 0..spec.per_class {
            let v: Vec<f64> = loop {
                let v: Vec<f64> = center.iter().map(|c| c + noise.sample(&mut rng)).collect();
                let len = crate::domain::norm(&v);
                if len > 1e-12 {
                    break v.into_iter().map(|x| x / len).collect();
                }
            };
            features.push(v);
            labels.push(y);
        }
    }
    LabeledPointSet::clean(spec.num_classes, labels)?.with_features(features)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Subsample {
    pub set: LabeledPointSet,
    /// Rows of the source set that were kept, ascending.
    pub indices: Vec<usize>,
    /// Classes that would have lost every sample and kept one instead.
    pub rescued_classes: usize,
}

/// Keeps `ceil(fraction * n)` samples chosen uniformly at random, labelled
/// with their true labels. Stratified mode allots each class its share by
/// largest remainder.
pub fn subsample_clean(set: &LabeledPointSet, fraction: f64, seed: u64, stratified: bool) -> Result<Subsample> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::invalid("fraction", format!("must lie in (0, 1], got {fraction}")));
    }
    let n = set.n();
    let target = ((fraction * n as f64).ceil() as usize).min(n);
    let mut rng = rng::stream(seed, streams::SUBSAMPLE);
    let k = set.num_classes();
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); k];
    for (i, &y) in set.true_labels().iter().enumerate() {
        by_class[y].push(i);
    }

    let mut keep: Vec<Vec<usize>> = vec![Vec::new(); k];
    if stratified {
        let shares: Vec<f64> = by_class.iter().map(|m| fraction * m.len() as f64).collect();
        let mut quota: Vec<usize> = shares.iter().map(|s| s.floor() as usize).collect();
        let mut order: Vec<usize> = (0..k).collect();
        order.sort_by(|&a, &b| {
            (shares[b] - shares[b].floor())
                .total_cmp(&(shares[a] - shares[a].floor()))
                .then(a.cmp(&b))
        });
        let mut missing = target - quota.iter().sum::<usize>();
        for &c in order.iter().cycle().take(2 * k) {
            if missing == 0 {
                break;
            }
            if quota[c] < by_class[c].len() {
                quota[c] += 1;
                missing -= 1;
            }
        }
        for c in 0..k {
            let mut members = by_class[c].clone();
            members.shuffle(&mut rng);
            members.truncate(quota[c]);
            keep[c] = members;
        }
    } else {
        let mut all: Vec<usize> = (0..n).collect();
        all.shuffle(&mut rng);
        for &i in all.iter().take(target) {
            keep[set.true_labels()[i]].push(i);
        }
    }

    let mut rescued = 0;
    for c in 0..k {
        if keep[c].is_empty() && !by_class[c].is_empty() {
            let pick = *by_class[c].choose(&mut rng).expect("non-empty class");
            keep[c].push(pick);
            rescued += 1;
        }
    }
    let mut indices: Vec<usize> = keep.into_iter().flatten().collect();
    indices.sort_unstable();
    let sub = set.subset(&indices)?;
    let clean = LabeledPointSet::clean(k, sub.true_labels().to_vec())?;
    let clean = match sub.features() {
        Some(f) => clean.with_features(f.to_vec())?,
        None => clean,
    };
    Ok(Subsample {
        set: clean,
        indices,
        rescued_classes: rescued,
    })
}
