//! Pair and triplet construction under the observed labels.
//!
//! Minibatches are drawn class-first. Inside a batch every positive pair gets
//! at most one negative from the configured miner, which makes both semi-hard
//! miners 1-1 sampling schemes. Mining logs record which negative pairs were
//! picked and how often a uniform pick would have chosen them, which is what
//! the skew estimator compares.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::domain::{EmbeddingState, LabelChannel, LabeledPointSet, LossConfig, LossFamily, Mining, Triplet, TrainingView};
use crate::error::{Error, Result};
use crate::rng::{self, streams, Rng};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MinibatchSpec {
    pub classes_per_batch: usize,
    pub samples_per_class: usize,
    #[serde(default)]
    pub seed: u64,
}

impl Default for MinibatchSpec {
    /// 12 classes x 5 samples.
    fn default() -> Self {
        MinibatchSpec {
            classes_per_batch: 12,
            samples_per_class: 5,
            seed: 0,
        }
    }
}

impl MinibatchSpec {
    pub fn validate(&self, n: usize) -> Result<()> {
        if self.classes_per_batch < 2 || self.samples_per_class < 2 {
            return Err(Error::invalid(
                "minibatch",
                "classes_per_batch and samples_per_class must both be >= 2",
            ));
        }
        if self.classes_per_batch * self.samples_per_class > n {
            return Err(Error::invalid(
                "minibatch",
                format!(
                    "{} x {} samples exceed the dataset size {n}",
                    self.classes_per_batch, self.samples_per_class
                ),
            ));
        }
        Ok(())
    }
}

/// All unordered same-label pairs `(i, j)` with `i < j`.
pub fn enumerate_positive_pairs(set: &LabeledPointSet, channel: LabelChannel) -> Vec<(usize, usize)> {
    let labels = set.labels(channel);
    let mut pairs = Vec::new();
    for i in 0..labels.len() {
        for j in i + 1..labels.len() {
            if labels[i] == labels[j] {
                pairs.push((i, j));
            }
        }
    }
    pairs
}

/// Uniform pick among candidates violating the margin: `d_ap - d_an + alpha > 0`.
pub fn random_semi_hard_negative(
    emb: &EmbeddingState,
    anchor: usize,
    positive: usize,
    candidates: &[usize],
    cfg: &LossConfig,
    rng: &mut Rng,
) -> Option<usize> {
    let d_ap = emb.dist(anchor, positive);
    let violators: Vec<usize> = candidates
        .iter()
        .copied()
        .filter(|&n| d_ap - emb.dist(anchor, n) + cfg.alpha > 0.0)
        .collect();
    violators.choose(rng).copied()
}

/// The closest candidate strictly farther than the positive; ties go to the lower index.
pub fn fixed_semi_hard_negative(
    emb: &EmbeddingState,
    anchor: usize,
    positive: usize,
    candidates: &[usize],
) -> Option<usize> {
    let d_ap = emb.dist(anchor, positive);
    let mut best: Option<(f64, usize)> = None;
    for &n in candidates {
        let d_an = emb.dist(anchor, n);
        if d_an <= d_ap {
            continue;
        }
        best = match best {
            Some((d, i)) if d < d_an || (d == d_an && i < n) => Some((d, i)),
            _ => Some((d_an, n)),
        };
    }
    best.map(|(_, n)| n)
}

/// Selection counts per ordered pair, plus the counts a uniform choice among
/// the same candidate pools would have produced in expectation.
///
/// Both maps merge by addition, so logs from separate batches or workers
/// combine in any order to the same result.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SelectionLog {
    pub selected: BTreeMap<(usize, usize), u64>,
    pub baseline: BTreeMap<(usize, usize), f64>,
}

impl SelectionLog {
    /// One uniform draw of a single element from `pool`, seen from `anchor`.
    pub fn record_opportunity(&mut self, anchor: usize, pool: &[usize]) {
        if pool.is_empty() {
            return;
        }
        let share = 1.0 / pool.len() as f64;
        for &c in pool {
            *self.baseline.entry((anchor, c)).or_insert(0.0) += share;
        }
    }

    pub fn record_selection(&mut self, anchor: usize, chosen: usize) {
        *self.selected.entry((anchor, chosen)).or_insert(0) += 1;
    }

    pub fn merge(&mut self, other: &SelectionLog) {
        for (k, v) in &other.selected {
            *self.selected.entry(*k).or_insert(0) += v;
        }
        for (k, v) in &other.baseline {
            *self.baseline.entry(*k).or_insert(0.0) += v;
        }
    }

    pub fn total_selected(&self) -> u64 {
        self.selected.values().sum()
    }

    pub fn is_empty(&self) -> bool {
        self.baseline.is_empty()
    }

    /// Observed over uniform selection frequency for every pair with a baseline.
    /// The baseline is rescaled to the realised number of selections so that a
    /// miner that sometimes picks nothing is still compared like for like.
    pub fn frequency_ratios(&self) -> Vec<((usize, usize), f64)> {
        let total_selected = self.total_selected() as f64;
        let total_baseline: f64 = self.baseline.values().sum();
        if total_selected == 0.0 || total_baseline == 0.0 {
            return Vec::new();
        }
        let scale = total_selected / total_baseline;
        self.baseline
            .iter()
            .filter(|(_, &b)| b > 0.0)
            .map(|(k, &b)| {
                let s = self.selected.get(k).copied().unwrap_or(0) as f64;
                (*k, s / (b * scale))
            })
            .collect()
    }

    /// Writes `anchor,negative,count` rows.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["anchor", "negative", "count"])?;
        for (&(a, n), &c) in &self.selected {
            w.serialize((a, n, c))?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads selection counts; the baseline is not part of the file.
    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut r = csv::Reader::from_reader(reader);
        let mut log = SelectionLog::default();
        for row in r.deserialize() {
            let (a, n, c): (usize, usize, u64) = row?;
            *log.selected.entry((a, n)).or_insert(0) += c;
        }
        Ok(log)
    }
}

/// Logs kept while mining: negatives picked per anchor, and positive pairs
/// that contributed a term.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct MiningLogs {
    pub negatives: SelectionLog,
    pub positives: SelectionLog,
}

impl MiningLogs {
    pub fn merge(&mut self, other: &MiningLogs) {
        self.negatives.merge(&other.negatives);
        self.positives.merge(&other.positives);
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Minibatch {
    /// Member indices grouped by class, each group without duplicates.
    pub groups: Vec<Vec<usize>>,
    /// Classes that had fewer members than requested and were sampled with replacement.
    pub short_classes: usize,
}

impl Minibatch {
    pub fn members(&self) -> impl Iterator<Item = usize> + '_ {
        self.groups.iter().flatten().copied()
    }
}

/// Draws `classes_per_batch` observed classes and `samples_per_class` members of each.
///
/// If fewer non-empty classes exist than requested, all of them are used.
pub fn sample_minibatch(view: &TrainingView<'_>, spec: &MinibatchSpec, rng: &mut Rng) -> Minibatch {
    let by_class = view.members_by_class();
    let mut classes: Vec<usize> = (0..by_class.len()).filter(|&c| !by_class[c].is_empty()).collect();
    classes.shuffle(rng);
    classes.truncate(spec.classes_per_batch);
    let mut batch = Minibatch::default();
    for c in classes {
        let members = &by_class[c];
        let group = if members.len() >= spec.samples_per_class {
            members.choose_multiple(rng, spec.samples_per_class).copied().collect()
        } else {
            batch.short_classes += 1;
            let mut group: Vec<usize> = Vec::with_capacity(spec.samples_per_class);
            for _ in 0..spec.samples_per_class {
                let pick = members[rng.random_range(0..members.len())];
                if !group.contains(&pick) {
                    group.push(pick);
                }
            }
            group
        };
        batch.groups.push(group);
    }
    batch
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct MinedBatch {
    pub triplets: Vec<Triplet>,
    /// Positive pairs present in the batch.
    pub positive_pairs: usize,
    /// Positive pairs for which the miner found no valid negative.
    pub skipped_pairs: usize,
    pub short_classes: usize,
}

/// Mines one minibatch. Each in-batch positive pair `(a, p)` (anchor is the
/// member drawn first) gets negatives from the other in-batch classes.
pub fn mine_minibatch(
    view: &TrainingView<'_>,
    emb: &EmbeddingState,
    spec: &MinibatchSpec,
    cfg: &LossConfig,
    rng: &mut Rng,
    mut logs: Option<&mut MiningLogs>,
) -> MinedBatch {
    let batch = sample_minibatch(view, spec, rng);
    let mut out = MinedBatch {
        short_classes: batch.short_classes,
        ..MinedBatch::default()
    };
    let positive_threshold = cfg.beta - cfg.alpha;
    for (g, group) in batch.groups.iter().enumerate() {
        let candidates: Vec<usize> = batch
            .groups
            .iter()
            .enumerate()
            .filter(|&(h, _)| h != g)
            .flat_map(|(_, members)| members.iter().copied())
            .collect();
        for x in 0..group.len() {
            for y in x + 1..group.len() {
                let (a, p) = (group[x], group[y]);
                out.positive_pairs += 1;
                if let Some(logs) = logs.as_deref_mut() {
                    logs.negatives.record_opportunity(a, &candidates);
                    logs.positives.record_opportunity(a, &[p]);
                }
                let picks: Vec<usize> = match cfg.mining {
                    Mining::RandomSemiHard => random_semi_hard_negative(emb, a, p, &candidates, cfg, rng)
                        .into_iter()
                        .collect(),
                    Mining::FixedSemiHard => fixed_semi_hard_negative(emb, a, p, &candidates).into_iter().collect(),
                    Mining::Exhaustive => candidates.clone(),
                };
                if picks.is_empty() {
                    out.skipped_pairs += 1;
                }
                if let Some(logs) = logs.as_deref_mut() {
                    for &n in &picks {
                        logs.negatives.record_selection(a, n);
                    }
                    let contributes = match cfg.family {
                        LossFamily::Marginal => !cfg.hinged || emb.dist(a, p) > positive_threshold,
                        LossFamily::Triplet => !picks.is_empty(),
                    };
                    if contributes {
                        logs.positives.record_selection(a, p);
                    }
                }
                out.triplets.extend(picks.into_iter().map(|n| Triplet {
                    anchor: a,
                    positive: p,
                    negative: n,
                }));
            }
        }
    }
    out
}

/// Mines a single minibatch drawn with `spec.seed`.
pub fn build_minibatch_triplets(
    set: &LabeledPointSet,
    emb: &EmbeddingState,
    spec: &MinibatchSpec,
    cfg: &LossConfig,
) -> Result<MinedBatch> {
    spec.validate(set.n())?;
    cfg.validate()?;
    if emb.n() != set.n() {
        return Err(Error::DimensionMismatch {
            expected: set.n(),
            got: emb.n(),
        });
    }
    let mut rng = rng::stream(spec.seed, streams::TRAIN);
    Ok(mine_minibatch(&set.training_view(), emb, spec, cfg, &mut rng, None))
}

/// Quantile used in place of the maximum frequency ratio.
pub const SKEW_QUANTILE: f64 = 0.95;
/// Lower quantile used for the least-favoured active negative pairs.
pub const SKEW_LOWER_QUANTILE: f64 = 0.05;

/// Skew of pair selection relative to a uniform pick.
///
/// For triplet mining only `eta` is measured; `gamma` is reported as `1/eta`,
/// the value that gives the same tolerance condition in the marginal form.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SkewEstimate {
    pub eta: f64,
    pub eta_plus: f64,
    pub eta_minus: f64,
    pub gamma: f64,
}

impl SkewEstimate {
    pub fn from_eta(eta: f64) -> Self {
        let eta = eta.max(1.0);
        SkewEstimate {
            eta,
            eta_plus: eta,
            eta_minus: 1.0,
            gamma: 1.0 / eta,
        }
    }
}

/// Nearest-rank quantile of an unsorted sample.
pub fn quantile(values: &[f64], q: f64) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let rank = ((q * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len());
    Some(sorted[rank - 1])
}

/// Upper-tail skew of negative-pair selection. A log with opportunities but
/// no selection at all counts as unskewed.
pub fn estimate_skew(log: &SelectionLog) -> Result<SkewEstimate> {
    if log.is_empty() {
        return Err(Error::Empty("selection log"));
    }
    let ratios: Vec<f64> = log.frequency_ratios().into_iter().map(|(_, r)| r).collect();
    Ok(SkewEstimate::from_eta(quantile(&ratios, SKEW_QUANTILE).unwrap_or(1.0)))
}

/// Positive- and negative-pair skews for marginal mining.
///
/// `eta_plus` is the upper-tail ratio over positive pairs; `eta_minus` the
/// lower-tail ratio over negative pairs that were selected at least once. A
/// channel with opportunities but no selection at all counts as unskewed.
pub fn estimate_marginal_skew(logs: &MiningLogs) -> Result<SkewEstimate> {
    if logs.positives.is_empty() {
        return Err(Error::Empty("positive selection log"));
    }
    if logs.negatives.is_empty() {
        return Err(Error::Empty("negative selection log"));
    }
    let pos: Vec<f64> = logs.positives.frequency_ratios().into_iter().map(|(_, r)| r).collect();
    let neg: Vec<f64> = logs
        .negatives
        .frequency_ratios()
        .into_iter()
        .filter(|(_, r)| *r > 0.0)
        .map(|(_, r)| r)
        .collect();
    let eta_plus = quantile(&pos, SKEW_QUANTILE).unwrap_or(1.0).max(1.0);
    let eta_minus = quantile(&neg, SKEW_LOWER_QUANTILE).unwrap_or(1.0);
    let gamma = (eta_minus / eta_plus).clamp(f64::MIN_POSITIVE, 1.0);
    Ok(SkewEstimate {
        eta: 1.0 / gamma,
        eta_plus,
        eta_minus,
        gamma,
    })
}

/// Mines `rounds` minibatches on a frozen embedding and estimates the skew of
/// the configured miner.
pub fn measure_skew(
    view: &TrainingView<'_>,
    emb: &EmbeddingState,
    spec: &MinibatchSpec,
    cfg: &LossConfig,
    rounds: usize,
    seed: u64,
) -> Result<(MiningLogs, SkewEstimate)> {
    let mut rng = rng::stream(seed, streams::SKEW);
    let mut logs = MiningLogs::default();
    for _ in 0..rounds {
        mine_minibatch(view, emb, spec, cfg, &mut rng, Some(&mut logs));
    }
    let skew = match cfg.family {
        LossFamily::Triplet => estimate_skew(&logs.negatives)?,
        LossFamily::Marginal => estimate_marginal_skew(&logs)?,
    };
    Ok((logs, skew))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line_embedding(angles: &[f64]) -> EmbeddingState {
        EmbeddingState::new(angles.iter().map(|t| vec![t.cos(), t.sin()]).collect()).unwrap()
    }

    /// Point at angle theta has chord distance 2 sin(theta/2) to angle 0.
    fn angle_for_distance(d: f64) -> f64 {
        2.0 * (d / 2.0).asin()
    }

    #[test]
    fn positive_pair_enumeration() {
        let one = LabeledPointSet::clean(2, vec![0, 0, 0]).unwrap();
        assert_eq!(enumerate_positive_pairs(&one, LabelChannel::True).len(), 3);
        let singles = LabeledPointSet::clean(4, vec![0, 1, 2, 3]).unwrap();
        assert!(enumerate_positive_pairs(&singles, LabelChannel::True).is_empty());
        let two = LabeledPointSet::clean(2, (0..10).map(|i| i % 2).collect()).unwrap();
        let pairs = enumerate_positive_pairs(&two, LabelChannel::True);
        assert_eq!(pairs.len(), 20);
        let mut dedup = pairs.clone();
        dedup.sort();
        dedup.dedup();
        assert_eq!(dedup.len(), 20);
    }

    #[test]
    fn random_miner_examples() {
        let cfg = LossConfig::triplet(Mining::RandomSemiHard);
        let mut rng = rng::stream(1, 0);
        // anchor and positive coincide, negatives antipodal
        let emb = EmbeddingState::new(vec![vec![1.0, 0.0], vec![1.0, 0.0], vec![-1.0, 0.0], vec![-1.0, 0.0]]).unwrap();
        assert_eq!(random_semi_hard_negative(&emb, 0, 1, &[2, 3], &cfg, &mut rng), None);

        // only candidate 3 violates the margin
        let emb = line_embedding(&[0.0, angle_for_distance(0.5), angle_for_distance(1.5), angle_for_distance(0.6)]);
        for _ in 0..100 {
            assert_eq!(random_semi_hard_negative(&emb, 0, 1, &[2, 3], &cfg, &mut rng), Some(3));
        }

        // two violators are picked evenly
        let emb = line_embedding(&[0.0, angle_for_distance(0.5), angle_for_distance(0.4), angle_for_distance(0.6)]);
        let mut hits = 0;
        for _ in 0..20_000 {
            if random_semi_hard_negative(&emb, 0, 1, &[2, 3], &cfg, &mut rng) == Some(2) {
                hits += 1;
            }
        }
        assert!((hits as i64 - 10_000).abs() <= 300, "{hits}");
    }

    #[test]
    fn fixed_miner_examples() {
        let emb = line_embedding(&[
            0.0,
            angle_for_distance(0.5),
            angle_for_distance(0.4),
            angle_for_distance(0.9),
            angle_for_distance(1.5),
        ]);
        assert_eq!(fixed_semi_hard_negative(&emb, 0, 1, &[2, 3, 4]), Some(3));
        assert_eq!(fixed_semi_hard_negative(&emb, 0, 1, &[2]), None);

        // 2 and 4 tie at the minimal valid distance
        let emb = line_embedding(&[0.0, 0.3, 0.8, 1.2, -0.8]);
        assert_eq!(fixed_semi_hard_negative(&emb, 0, 1, &[4, 3, 2]), Some(2));
    }

    fn clustered(k: usize, per_class: usize, seed: u64) -> (LabeledPointSet, EmbeddingState) {
        let mut rng = rng::stream(seed, 0);
        let labels: Vec<usize> = (0..k * per_class).map(|i| i / per_class).collect();
        let vecs: Vec<Vec<f64>> = labels
            .iter()
            .map(|&y| {
                let theta = y as f64 * std::f64::consts::TAU / k as f64 + rng.random::<f64>() * 0.3;
                vec![theta.cos(), theta.sin(), rng.random::<f64>() * 0.1]
            })
            .collect();
        (LabeledPointSet::clean(k, labels).unwrap(), EmbeddingState::normalized(&vecs).unwrap())
    }

    #[test]
    fn minibatch_bounds_and_contracts() {
        let (set, emb) = clustered(12, 8, 5);
        let spec = MinibatchSpec {
            seed: 3,
            ..MinibatchSpec::default()
        };
        for mining in [Mining::RandomSemiHard, Mining::FixedSemiHard] {
            let cfg = LossConfig::triplet(mining);
            let batch = build_minibatch_triplets(&set, &emb, &spec, &cfg).unwrap();
            assert_eq!(batch.positive_pairs, 120);
            assert!(batch.triplets.len() <= 120);
            assert_eq!(batch.triplets.len() + batch.skipped_pairs, 120);
            let mut seen = std::collections::HashSet::new();
            for t in &batch.triplets {
                assert!(t.is_valid_for(set.observed_labels()));
                assert!(seen.insert((t.anchor, t.positive)), "positive pair reused");
                let (d_ap, d_an) = (emb.dist(t.anchor, t.positive), emb.dist(t.anchor, t.negative));
                match mining {
                    Mining::RandomSemiHard => assert!(d_ap - d_an + cfg.alpha > 0.0),
                    _ => assert!(d_an > d_ap),
                }
            }
            assert_eq!(batch, build_minibatch_triplets(&set, &emb, &spec, &cfg).unwrap());
        }
    }

    #[test]
    fn no_valid_negative_gives_empty_batch() {
        // each class collapsed to a point, classes antipodal: nothing violates the margin
        let labels: Vec<usize> = (0..20).map(|i| i / 10).collect();
        let vecs = labels.iter().map(|&y| vec![if y == 0 { 1.0 } else { -1.0 }, 0.0]).collect();
        let set = LabeledPointSet::clean(2, labels).unwrap();
        let emb = EmbeddingState::new(vecs).unwrap();
        let spec = MinibatchSpec {
            classes_per_batch: 2,
            samples_per_class: 5,
            seed: 0,
        };
        let batch = build_minibatch_triplets(&set, &emb, &spec, &LossConfig::triplet(Mining::RandomSemiHard)).unwrap();
        assert!(batch.triplets.is_empty());
        assert_eq!(batch.skipped_pairs, 20);
    }

    #[test]
    fn short_classes_are_sampled_with_replacement() {
        let labels = vec![0, 0, 0, 0, 0, 0, 1, 1, 1];
        let set = LabeledPointSet::clean(2, labels).unwrap();
        let spec = MinibatchSpec {
            classes_per_batch: 2,
            samples_per_class: 4,
            seed: 0,
        };
        let mut rng = rng::stream(0, 0);
        let batch = sample_minibatch(&set.training_view(), &spec, &mut rng);
        assert_eq!(batch.short_classes, 1);
        for g in &batch.groups {
            let mut d = g.clone();
            d.sort();
            d.dedup();
            assert_eq!(d.len(), g.len());
        }
        assert!(spec.validate(9).is_ok());
        assert!(MinibatchSpec { classes_per_batch: 1, ..spec }.validate(9).is_err());
        assert!(MinibatchSpec::default().validate(59).is_err());
    }

    #[test]
    fn uniform_log_has_unit_skew() {
        let mut log = SelectionLog::default();
        for a in 0..4 {
            log.record_opportunity(a, &[10, 11]);
            log.record_opportunity(a, &[10, 11]);
            log.record_selection(a, 10);
            log.record_selection(a, 11);
        }
        let skew = estimate_skew(&log).unwrap();
        assert!((skew.eta - 1.0).abs() < 1e-12);
        assert!((skew.gamma - 1.0).abs() < 1e-12);
    }

    #[test]
    fn doubled_pair_gives_skew_two() {
        let mut log = SelectionLog::default();
        for n in 0..10 {
            log.baseline.insert((0, n), 1.0);
            let count = match n {
                0 => 2,
                1 => 0,
                _ => 1,
            };
            log.selected.insert((0, n), count);
        }
        assert_eq!(estimate_skew(&log).unwrap().eta, 2.0);
        assert!(estimate_skew(&SelectionLog::default()).is_err());
        let mut idle = SelectionLog::default();
        idle.record_opportunity(0, &[1, 2, 3]);
        assert_eq!(estimate_skew(&idle).unwrap().eta, 1.0);
    }

    #[test]
    fn fixed_miner_is_more_skewed_than_random() {
        let (set, emb) = clustered(10, 10, 8);
        let spec = MinibatchSpec {
            classes_per_batch: 6,
            samples_per_class: 5,
            seed: 0,
        };
        let view = set.training_view();
        let (_, rand) = measure_skew(&view, &emb, &spec, &LossConfig::triplet(Mining::RandomSemiHard), 400, 1).unwrap();
        let (_, fixed) = measure_skew(&view, &emb, &spec, &LossConfig::triplet(Mining::FixedSemiHard), 400, 1).unwrap();
        assert!(fixed.eta > rand.eta, "fixed {} rand {}", fixed.eta, rand.eta);
    }

    #[test]
    fn logs_merge_and_round_trip_through_csv() {
        let mut a = SelectionLog::default();
        a.record_opportunity(0, &[1, 2]);
        a.record_selection(0, 1);
        let mut b = SelectionLog::default();
        b.record_opportunity(0, &[1]);
        b.record_selection(0, 1);
        b.record_selection(3, 4);
        let mut ab = a.clone();
        ab.merge(&b);
        let mut ba = b.clone();
        ba.merge(&a);
        assert_eq!(ab, ba);
        assert_eq!(ab.selected[&(0, 1)], 2);

        let mut buf = Vec::new();
        ab.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("anchor,negative,count\n"));
        let back = SelectionLog::read_csv(&buf[..]).unwrap();
        assert_eq!(back.selected, ab.selected);
    }

    #[test]
    fn quantile_is_nearest_rank() {
        let v: Vec<f64> = (1..=20).map(f64::from).collect();
        assert_eq!(quantile(&v, 0.95), Some(19.0));
        assert_eq!(quantile(&v, 1.0), Some(20.0));
        assert_eq!(quantile(&v, 0.0), Some(1.0));
        assert_eq!(quantile(&[], 0.5), None);
    }
}
