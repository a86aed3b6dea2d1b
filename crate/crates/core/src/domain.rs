//! Datasets, embeddings, pair labels and loss configuration.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest distance between two points on the unit hypersphere.
pub const D_MAX: f64 = 2.0;

/// Tolerance on `| ||v|| - 1 |` for vectors that must live on the sphere.
pub const UNIT_NORM_TOL: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelChannel {
    True,
    Observed,
}

/// Samples with their true labels, observed (possibly corrupted) labels and
/// optional feature vectors. Labels are dense class ids in `[0, K)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(into = "PointSetDocument", try_from = "PointSetDocument")]
pub struct LabeledPointSet {
    num_classes: usize,
    true_labels: Vec<usize>,
    observed_labels: Vec<usize>,
    features: Option<Vec<Vec<f64>>>,
}

/// On-disk layout of a [`LabeledPointSet`].
#[derive(Clone, Debug, Serialize, Deserialize)]
#[allow(non_snake_case)]
struct PointSetDocument {
    n: usize,
    K: usize,
    true_labels: Vec<usize>,
    observed_labels: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    d: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    vectors: Option<Vec<Vec<f64>>>,
}

impl From<LabeledPointSet> for PointSetDocument {
    fn from(set: LabeledPointSet) -> Self {
        let d = set
            .features
            .as_ref()
            .map(|v| v.first().map_or(0, Vec::len));
        PointSetDocument {
            n: set.true_labels.len(),
            K: set.num_classes,
            true_labels: set.true_labels,
            observed_labels: set.observed_labels,
            d,
            vectors: set.features,
        }
    }
}

impl TryFrom<PointSetDocument> for LabeledPointSet {
    type Error = Error;

    fn try_from(doc: PointSetDocument) -> Result<Self> {
        if doc.true_labels.len() != doc.n {
            return Err(Error::DimensionMismatch {
                expected: doc.n,
                got: doc.true_labels.len(),
            });
        }
        let set = LabeledPointSet::new(doc.K, doc.true_labels, doc.observed_labels)?;
        match doc.vectors {
            Some(vectors) => {
                if let (Some(d), Some(first)) = (doc.d, vectors.first()) {
                    if first.len() != d {
                        return Err(Error::DimensionMismatch {
                            expected: d,
                            got: first.len(),
                        });
                    }
                }
                set.with_features(vectors)
            }
            None => Ok(set),
        }
    }
}

impl LabeledPointSet {
    pub fn new(
        num_classes: usize,
        true_labels: Vec<usize>,
        observed_labels: Vec<usize>,
    ) -> Result<Self> {
        if num_classes < 2 {
            return Err(Error::invalid("K", format!("need at least 2 classes, got {num_classes}")));
        }
        if true_labels.len() != observed_labels.len() {
            return Err(Error::DimensionMismatch {
                expected: true_labels.len(),
                got: observed_labels.len(),
            });
        }
        if let Some(&bad) = true_labels
            .iter()
            .chain(observed_labels.iter())
            .find(|&&y| y >= num_classes)
        {
            return Err(Error::invalid(
                "labels",
                format!("label {bad} outside [0, {num_classes})"),
            ));
        }
        Ok(LabeledPointSet {
            num_classes,
            true_labels,
            observed_labels,
            features: None,
        })
    }

    /// A noise-free set: observed labels are a copy of the true labels.
    pub fn clean(num_classes: usize, labels: Vec<usize>) -> Result<Self> {
        let observed = labels.clone();
        Self::new(num_classes, labels, observed)
    }

    pub fn with_features(mut self, features: Vec<Vec<f64>>) -> Result<Self> {
        if features.len() != self.n() {
            return Err(Error::DimensionMismatch {
                expected: self.n(),
                got: features.len(),
            });
        }
        if let Some(first) = features.first() {
            let d = first.len();
            if let Some(bad) = features.iter().find(|v| v.len() != d) {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    got: bad.len(),
                });
            }
        }
        self.features = Some(features);
        Ok(self)
    }

    pub fn without_features(mut self) -> Self {
        self.features = None;
        self
    }

    pub fn n(&self) -> usize {
        self.true_labels.len()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn true_labels(&self) -> &[usize] {
        &self.true_labels
    }

    pub fn observed_labels(&self) -> &[usize] {
        &self.observed_labels
    }

    pub fn labels(&self, channel: LabelChannel) -> &[usize] {
        match channel {
            LabelChannel::True => &self.true_labels,
            LabelChannel::Observed => &self.observed_labels,
        }
    }

    pub fn features(&self) -> Option<&[Vec<f64>]> {
        self.features.as_deref()
    }

    pub fn is_clean(&self) -> bool {
        self.true_labels == self.observed_labels
    }

    /// Replaces the observed channel, keeping true labels and features.
    pub fn with_observed_labels(&self, observed: Vec<usize>) -> Result<Self> {
        let mut out = Self::new(self.num_classes, self.true_labels.clone(), observed)?;
        out.features = self.features.clone();
        Ok(out)
    }

    /// The rows at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        if let Some(&bad) = indices.iter().find(|&&i| i >= self.n()) {
            return Err(Error::IndexOutOfRange {
                index: bad,
                len: self.n(),
            });
        }
        Ok(LabeledPointSet {
            num_classes: self.num_classes,
            true_labels: indices.iter().map(|&i| self.true_labels[i]).collect(),
            observed_labels: indices.iter().map(|&i| self.observed_labels[i]).collect(),
            features: self
                .features
                .as_ref()
                .map(|f| indices.iter().map(|&i| f[i].clone()).collect()),
        })
    }

    /// What the trainer is allowed to see: observed labels only.
    pub fn training_view(&self) -> TrainingView<'_> {
        TrainingView {
            labels: &self.observed_labels,
            num_classes: self.num_classes,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn read_json(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }
}

/// Label-only view handed to the optimizer; true labels are unreachable from it.
#[derive(Clone, Copy, Debug)]
pub struct TrainingView<'a> {
    labels: &'a [usize],
    num_classes: usize,
}

impl<'a> TrainingView<'a> {
    pub fn new(labels: &'a [usize], num_classes: usize) -> Self {
        TrainingView {
            labels,
            num_classes,
        }
    }

    pub fn n(&self) -> usize {
        self.labels.len()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    pub fn labels(&self) -> &'a [usize] {
        self.labels
    }

    /// Sample indices grouped by label; classes with no members give empty lists.
    pub fn members_by_class(&self) -> Vec<Vec<usize>> {
        let mut groups = vec![Vec::new(); self.num_classes];
        for (i, &y) in self.labels.iter().enumerate() {
            groups[y].push(i);
        }
        groups
    }
}

/// Unit-norm embedding vectors, one per sample, stored row-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(into = "EmbeddingDocument", try_from = "EmbeddingDocument")]
pub struct EmbeddingState {
    dim: usize,
    data: Vec<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct EmbeddingDocument {
    n: usize,
    d: usize,
    vectors: Vec<Vec<f64>>,
}

impl From<EmbeddingState> for EmbeddingDocument {
    fn from(emb: EmbeddingState) -> Self {
        EmbeddingDocument {
            n: emb.n(),
            d: emb.dim,
            vectors: emb.to_vecs(),
        }
    }
}

impl TryFrom<EmbeddingDocument> for EmbeddingState {
    type Error = Error;

    fn try_from(doc: EmbeddingDocument) -> Result<Self> {
        if doc.vectors.len() != doc.n {
            return Err(Error::DimensionMismatch {
                expected: doc.n,
                got: doc.vectors.len(),
            });
        }
        let emb = EmbeddingState::new(doc.vectors)?;
        if emb.dim != doc.d {
            return Err(Error::DimensionMismatch {
                expected: doc.d,
                got: emb.dim,
            });
        }
        Ok(emb)
    }
}

impl EmbeddingState {
    /// Wraps vectors that must already be unit norm.
    pub fn new(vectors: Vec<Vec<f64>>) -> Result<Self> {
        let dim = vectors.first().map(Vec::len).ok_or(Error::Empty("embedding"))?;
        let mut data = Vec::with_capacity(vectors.len() * dim);
        for v in &vectors {
            if v.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: v.len(),
                });
            }
            data.extend_from_slice(v);
        }
        Self::from_flat(dim, data)
    }

    pub fn from_flat(dim: usize, data: Vec<f64>) -> Result<Self> {
        if dim == 0 || !data.len().is_multiple_of(dim) {
            return Err(Error::invalid("dim", format!("{} values do not split into rows of {dim}", data.len())));
        }
        let emb = EmbeddingState { dim, data };
        for i in 0..emb.n() {
            let norm = norm(emb.vector(i));
            if (norm - 1.0).abs() > UNIT_NORM_TOL {
                return Err(Error::NotUnitNorm { index: i, norm });
            }
        }
        Ok(emb)
    }

    /// Projects arbitrary non-zero vectors onto the sphere.
    pub fn normalized(vectors: &[Vec<f64>]) -> Result<Self> {
        let dim = vectors.first().map(Vec::len).ok_or(Error::Empty("embedding"))?;
        let mut data = Vec::with_capacity(vectors.len() * dim);
        for (i, v) in vectors.iter().enumerate() {
            if v.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: v.len(),
                });
            }
            let len = norm(v);
            if !(len > 0.0 && len.is_finite()) {
                return Err(Error::NotUnitNorm { index: i, norm: len });
            }
            data.extend(v.iter().map(|x| x / len));
        }
        Ok(EmbeddingState { dim, data })
    }

    pub fn n(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn vector(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn to_vecs(&self) -> Vec<Vec<f64>> {
        self.data.chunks(self.dim).map(<[f64]>::to_vec).collect()
    }

    /// Euclidean distance with index checking.
    pub fn distance(&self, i: usize, j: usize) -> Result<f64> {
        let n = self.n();
        for index in [i, j] {
            if index >= n {
                return Err(Error::IndexOutOfRange { index, len: n });
            }
        }
        Ok(self.dist(i, j))
    }

    /// Euclidean distance, clamped to `D_MAX` against rounding. Panics on bad indices.
    pub fn dist(&self, i: usize, j: usize) -> f64 {
        euclidean(self.vector(i), self.vector(j)).min(D_MAX)
    }

    pub fn select(&self, indices: &[usize]) -> Self {
        let mut data = Vec::with_capacity(indices.len() * self.dim);
        for &i in indices {
            data.extend_from_slice(self.vector(i));
        }
        EmbeddingState {
            dim: self.dim,
            data,
        }
    }

    /// Moves vector `i` by `-step * direction` and projects it back onto the sphere.
    pub(crate) fn retract(&mut self, i: usize, direction: &[f64], step: f64) {
        let row = &mut self.data[i * self.dim..(i + 1) * self.dim];
        for (x, g) in row.iter_mut().zip(direction) {
            *x -= step * g;
        }
        let len = norm(row);
        for x in row.iter_mut() {
            *x /= len;
        }
    }

    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn read_json(path: impl AsRef<Path>) -> Result<Self> {
        Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
    }

    /// Largest `| ||v|| - 1 |` over all rows.
    pub fn max_norm_deviation(&self) -> f64 {
        (0..self.n())
            .map(|i| (norm(self.vector(i)) - 1.0).abs())
            .fold(0.0, f64::max)
    }
}

pub fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

pub fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn pairwise_distance(emb: &EmbeddingState, i: usize, j: usize) -> Result<f64> {
    emb.distance(i, j)
}

/// +1 for samples of the same class, -1 otherwise.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PairLabel {
    Positive,
    Negative,
}

impl PairLabel {
    pub fn from_labels(a: usize, b: usize) -> Self {
        if a == b {
            PairLabel::Positive
        } else {
            PairLabel::Negative
        }
    }

    pub fn value(self) -> i8 {
        match self {
            PairLabel::Positive => 1,
            PairLabel::Negative => -1,
        }
    }

    pub fn sign(self) -> f64 {
        f64::from(self.value())
    }

    pub fn flipped(self) -> Self {
        match self {
            PairLabel::Positive => PairLabel::Negative,
            PairLabel::Negative => PairLabel::Positive,
        }
    }
}

pub fn pair_label(
    set: &LabeledPointSet,
    i: usize,
    j: usize,
    channel: LabelChannel,
) -> Result<PairLabel> {
    let n = set.n();
    for index in [i, j] {
        if index >= n {
            return Err(Error::IndexOutOfRange { index, len: n });
        }
    }
    if i == j {
        return Err(Error::SelfPair(i));
    }
    let labels = set.labels(channel);
    Ok(PairLabel::from_labels(labels[i], labels[j]))
}

/// An unordered sample pair with a pair label.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Pair {
    pub i: usize,
    pub j: usize,
    pub label: PairLabel,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Triplet {
    pub anchor: usize,
    pub positive: usize,
    pub negative: usize,
}

impl Triplet {
    /// Checks the anchor/positive/negative contract against a label vector.
    pub fn is_valid_for(&self, labels: &[usize]) -> bool {
        self.anchor != self.positive
            && labels[self.anchor] == labels[self.positive]
            && labels[self.anchor] != labels[self.negative]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossFamily {
    Triplet,
    Marginal,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mining {
    RandomSemiHard,
    FixedSemiHard,
    Exhaustive,
}

pub const DEFAULT_ALPHA: f64 = 0.2;
pub const DEFAULT_BETA: f64 = 1.4;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub family: LossFamily,
    #[serde(default = "default_true")]
    pub hinged: bool,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_beta")]
    pub beta: f64,
    pub mining: Mining,
}

fn default_true() -> bool {
    true
}
fn default_alpha() -> f64 {
    DEFAULT_ALPHA
}
fn default_beta() -> f64 {
    DEFAULT_BETA
}

impl LossConfig {
    pub fn triplet(mining: Mining) -> Self {
        LossConfig {
            family: LossFamily::Triplet,
            hinged: true,
            alpha: DEFAULT_ALPHA,
            beta: DEFAULT_BETA,
            mining,
        }
    }

    pub fn marginal(mining: Mining) -> Self {
        LossConfig {
            family: LossFamily::Marginal,
            ..Self::triplet(mining)
        }
    }

    pub fn unhinged(mut self) -> Self {
        self.hinged = false;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0) {
            return Err(Error::invalid("alpha", format!("must be > 0, got {}", self.alpha)));
        }
        if self.family == LossFamily::Marginal {
            if !(self.beta > 0.0 && self.beta < D_MAX) {
                return Err(Error::invalid("beta", format!("must lie in (0, 2), got {}", self.beta)));
            }
            if !(self.beta - self.alpha > 0.0) {
                return Err(Error::invalid("beta", "beta - alpha must be positive"));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn basis(d: usize, k: usize, sign: f64) -> Vec<f64> {
        let mut v = vec![0.0; d];
        v[k] = sign;
        v
    }

    #[test]
    fn distance_examples() {
        let emb = EmbeddingState::new(vec![basis(3, 0, 1.0), basis(3, 0, 1.0), basis(3, 0, -1.0), basis(3, 1, 1.0)])
            .unwrap();
        assert_eq!(pairwise_distance(&emb, 0, 1).unwrap(), 0.0);
        assert_eq!(pairwise_distance(&emb, 0, 2).unwrap(), 2.0);
        assert!((pairwise_distance(&emb, 0, 3).unwrap() - std::f64::consts::SQRT_2).abs() < 1e-12);
        assert_eq!(emb.distance(0, 3).unwrap(), emb.distance(3, 0).unwrap());
        assert!(matches!(emb.distance(0, 9), Err(Error::IndexOutOfRange { index: 9, len: 4 })));
    }

    #[test]
    fn rejects_non_unit_vectors() {
        let err = EmbeddingState::new(vec![vec![1.0, 1.0]]).unwrap_err();
        assert!(matches!(err, Error::NotUnitNorm { index: 0, .. }));
        let emb = EmbeddingState::normalized(&[vec![3.0, 4.0]]).unwrap();
        assert!(emb.max_norm_deviation() < 1e-15);
    }

    #[test]
    fn pair_label_examples() {
        let set = LabeledPointSet::new(6, vec![3, 3, 3], vec![3, 3, 5]).unwrap();
        assert_eq!(pair_label(&set, 0, 1, LabelChannel::True).unwrap(), PairLabel::Positive);
        assert_eq!(pair_label(&set, 0, 2, LabelChannel::True).unwrap(), PairLabel::Positive);
        assert_eq!(pair_label(&set, 0, 2, LabelChannel::Observed).unwrap(), PairLabel::Negative);
        assert!(matches!(pair_label(&set, 1, 1, LabelChannel::True), Err(Error::SelfPair(1))));
        let other = LabeledPointSet::clean(6, vec![3, 5]).unwrap();
        assert_eq!(pair_label(&other, 0, 1, LabelChannel::True).unwrap(), PairLabel::Negative);
    }

    #[test]
    fn point_set_validation() {
        assert!(LabeledPointSet::new(1, vec![0], vec![0]).is_err());
        assert!(LabeledPointSet::new(2, vec![0, 2], vec![0, 1]).is_err());
        assert!(LabeledPointSet::new(2, vec![0, 1], vec![0]).is_err());
    }

    #[test]
    fn json_document_uses_expected_field_names() {
        let set = LabeledPointSet::new(2, vec![0, 1], vec![1, 1])
            .unwrap()
            .with_features(vec![vec![1.0, 0.0], vec![0.0, 1.0]])
            .unwrap();
        let value: serde_json::Value = serde_json::from_str(&set.to_json().unwrap()).unwrap();
        for key in ["n", "K", "true_labels", "observed_labels", "d", "vectors"] {
            assert!(value.get(key).is_some(), "missing {key}");
        }
        assert_eq!(value["n"], 2);
        assert_eq!(value["d"], 2);
        let back = LabeledPointSet::from_json(&set.to_json().unwrap()).unwrap();
        assert_eq!(back, set);

        let bare = LabeledPointSet::clean(3, vec![0, 1, 2]).unwrap();
        let value: serde_json::Value = serde_json::from_str(&bare.to_json().unwrap()).unwrap();
        assert!(value.get("vectors").is_none());
        assert!(LabeledPointSet::from_json(r#"{"n":3,"K":2,"true_labels":[0,1],"observed_labels":[0,1]}"#).is_err());
    }

    #[test]
    fn embedding_json_round_trip() {
        let emb = EmbeddingState::normalized(&[vec![3.0, 4.0], vec![0.0, -2.0]]).unwrap();
        let text = serde_json::to_string(&emb).unwrap();
        let value: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert_eq!(value["n"], 2);
        assert_eq!(value["d"], 2);
        let back: EmbeddingState = serde_json::from_str(&text).unwrap();
        assert_eq!(back, emb);
        assert!(serde_json::from_str::<EmbeddingState>(r#"{"n":1,"d":2,"vectors":[[1.0,1.0]]}"#).is_err());
        assert!(serde_json::from_str::<EmbeddingState>(r#"{"n":2,"d":2,"vectors":[[1.0,0.0]]}"#).is_err());
    }

    #[test]
    fn loss_config_validation() {
        assert!(LossConfig::marginal(Mining::RandomSemiHard).validate().is_ok());
        let mut bad = LossConfig::marginal(Mining::RandomSemiHard);
        bad.beta = 0.1;
        assert!(bad.validate().is_err());
        bad = LossConfig::triplet(Mining::FixedSemiHard);
        bad.alpha = 0.0;
        assert!(bad.validate().is_err());
    }

    #[test]
    fn triplet_validity() {
        let labels = [0, 0, 1];
        assert!(Triplet { anchor: 0, positive: 1, negative: 2 }.is_valid_for(&labels));
        assert!(!Triplet { anchor: 0, positive: 0, negative: 2 }.is_valid_for(&labels));
        assert!(!Triplet { anchor: 0, positive: 2, negative: 1 }.is_valid_for(&labels));
    }
}
