//! Projected SGD over a free table of unit-norm embeddings.

use std::collections::BTreeMap;
use std::io::Write;

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::domain::{norm, EmbeddingState, LossConfig, PairLabel, TrainingView};
use crate::error::{Error, Result};
use crate::losses::{loss_gradient, project_tangent, LossItem};
use crate::risk::WeightScheme;
use crate::rng::{self, streams, Rng};
use crate::sampling::{mine_minibatch, MinibatchSpec, MiningLogs};

pub const DEFAULT_LEARNING_RATE: f64 = 0.05;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub steps: usize,
    #[serde(default = "default_learning_rate")]
    pub learning_rate: f64,
    #[serde(default)]
    pub minibatch: MinibatchSpec,
    pub loss: LossConfig,
    #[serde(default)]
    pub seed: u64,
    /// 0 disables snapshots.
    #[serde(default)]
    pub snapshot_every: usize,
    /// Keep per-pair miner selection counts.
    #[serde(default = "default_true")]
    pub record_selections: bool,
}

fn default_learning_rate() -> f64 {
    DEFAULT_LEARNING_RATE
}

fn default_true() -> bool {
    true
}

impl TrainConfig {
    pub fn new(steps: usize, loss: LossConfig, seed: u64) -> Self {
        TrainConfig {
            steps,
            learning_rate: DEFAULT_LEARNING_RATE,
            minibatch: MinibatchSpec::default(),
            loss,
            seed,
            snapshot_every: 0,
            record_selections: true,
        }
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid("learning_rate", format!("must be > 0, got {}", self.learning_rate)));
        }
        self.minibatch.validate(n)?;
        self.loss.validate()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    /// Mean item loss over the mined batch, 0 when nothing was mined.
    pub risk: f64,
    pub active_items: usize,
    pub skipped_pairs: usize,
    pub degenerate_items: usize,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainLog {
    pub steps: Vec<StepRecord>,
    pub mining: MiningLogs,
    pub snapshots: Vec<(usize, EmbeddingState)>,
}

impl TrainLog {
    /// CSV with columns `step,risk,active_items,skipped_pairs`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["step", "risk", "active_items", "skipped_pairs"])?;
        for r in &self.steps {
            w.write_record([
                r.step.to_string(),
                r.risk.to_string(),
                r.active_items.to_string(),
                r.skipped_pairs.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn degenerate_items(&self) -> usize {
        self.steps.iter().map(|s| s.degenerate_items).sum()
    }
}

/// Trains the embedding table on the observed labels in `view`.
///
/// Each step mines one minibatch, sums gradient contributions per touched
/// vector, averages them by the number of contributing items, projects onto
/// the tangent space, steps, and renormalises.
pub fn train(view: &TrainingView<'_>, init: &EmbeddingState, cfg: &TrainConfig) -> Result<(EmbeddingState, TrainLog)> {
    if init.n() != view.n() {
        return Err(Error::DimensionMismatch {
            expected: view.n(),
            got: init.n(),
        });
    }
    let deviation = init.max_norm_deviation();
    if deviation > crate::domain::UNIT_NORM_TOL {
        return Err(Error::NotUnitNorm {
            index: 0,
            norm: 1.0 + deviation,
        });
    }
    let mut emb = init.clone();
    let mut log = TrainLog::default();
    if cfg.steps == 0 {
        return Ok((emb, log));
    }
    cfg.validate(view.n())?;
    let mut rng = rng::stream(cfg.seed, streams::TRAIN);
    for step in 1..=cfg.steps {
        let record = train_step(view, &mut emb, cfg, step, &mut rng, &mut log)?;
        log.steps.push(record);
        if cfg.snapshot_every > 0 && step % cfg.snapshot_every == 0 {
            log.snapshots.push((step, emb.clone()));
        }
    }
    Ok((emb, log))
}

fn train_step(
    view: &TrainingView<'_>,
    emb: &mut EmbeddingState,
    cfg: &TrainConfig,
    step: usize,
    rng: &mut Rng,
    log: &mut TrainLog,
) -> Result<StepRecord> {
    let logs = if cfg.record_selections { Some(&mut log.mining) } else { None };
    let batch = mine_minibatch(view, emb, &cfg.minibatch, &cfg.loss, rng, logs);
    let mut grads: BTreeMap<usize, (Vec<f64>, usize)> = BTreeMap::new();
    let mut total_loss = 0.0;
    let mut active = 0;
    let mut degenerate = 0;
    for t in &batch.triplets {
        let g = loss_gradient(emb, &LossItem::Triplet(*t), &cfg.loss);
        total_loss += g.loss;
        active += usize::from(g.active);
        degenerate += usize::from(g.degenerate);
        for (i, v) in g.entries {
            let slot = grads.entry(i).or_insert_with(|| (vec![0.0; emb.dim()], 0));
            for (a, b) in slot.0.iter_mut().zip(&v) {
                *a += b;
            }
            slot.1 += 1;
        }
    }
    for (i, (mut g, count)) in grads {
        if g.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFiniteGradient { step });
        }
        let scale = 1.0 / count as f64;
        g.iter_mut().for_each(|x| *x *= scale);
        project_tangent(emb.vector(i), &mut g);
        emb.retract(i, &g, cfg.learning_rate);
    }
    Ok(StepRecord {
        step,
        risk: if batch.triplets.is_empty() {
            0.0
        } else {
            total_loss / batch.triplets.len() as f64
        },
        active_items: active,
        skipped_pairs: batch.skipped_pairs,
        degenerate_items: degenerate,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum InitMode {
    RandomSphere,
    /// Normalised features mixed with a random direction by weight `lambda`.
    FromFeatures { lambda: f64 },
}

pub fn random_unit_vector(dim: usize, rng: &mut Rng) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
        let len = norm(&v);
        if len > 1e-12 {
            return v.into_iter().map(|x| x / len).collect();
        }
    }
}

pub fn initialize_embeddings(
    n: usize,
    dim: usize,
    mode: InitMode,
    features: Option<&[Vec<f64>]>,
    seed: u64,
) -> Result<EmbeddingState> {
    if dim < 2 {
        return Err(Error::invalid("d", format!("need d >= 2, got {dim}")));
    }
    let mut rng = rng::stream(seed, streams::INIT);
    let vectors: Vec<Vec<f64>> = match mode {
        InitMode::RandomSphere => (0..n).map(|_| random_unit_vector(dim, &mut rng)).collect(),
        InitMode::FromFeatures { lambda } => {
            if !(0.0..=1.0).contains(&lambda) {
                return Err(Error::invalid("lambda", format!("must lie in [0, 1], got {lambda}")));
            }
            let features = features.ok_or(Error::MissingFeatures)?;
            if features.len() != n {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    got: features.len(),
                });
            }
            let mut out = Vec::with_capacity(n);
            for f in features {
                if f.len() != dim {
                    return Err(Error::DimensionMismatch {
                        expected: dim,
                        got: f.len(),
                    });
                }
                let len = norm(f);
                if len == 0.0 {
                    return Err(Error::invalid("features", "zero feature vector"));
                }
                if lambda == 0.0 {
                    out.push(f.clone());
                    continue;
                }
                let r = random_unit_vector(dim, &mut rng);
                let mixed: Vec<f64> = f.iter().zip(&r).map(|(x, y)| (1.0 - lambda) * x / len + lambda * y).collect();
                let m = norm(&mixed);
                out.push(if m > 1e-12 { mixed.into_iter().map(|x| x / m).collect() } else { r });
            }
            out
        }
    };
    EmbeddingState::normalized(&vectors)
}

/// Full-batch projected gradient descent on the weighted auxiliary pair risk
/// over every pair of `labels`.
pub fn minimize_pair_risk(
    labels: &[usize],
    init: &EmbeddingState,
    weights: &WeightScheme,
    steps: usize,
    learning_rate: f64,
) -> Result<EmbeddingState> {
    if init.n() != labels.len() {
        return Err(Error::DimensionMismatch {
            expected: labels.len(),
            got: init.n(),
        });
    }
    let n = labels.len();
    let dim = init.dim();
    let mut emb = init.clone();
    let z: f64 = (0..n)
        .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
        .map(|(i, j)| weights.for_label(PairLabel::from_labels(labels[i], labels[j])))
        .sum();
    for step in 1..=steps {
        let mut grads = vec![vec![0.0; dim]; n];
        for i in 0..n {
            for j in i + 1..n {
                let t = PairLabel::from_labels(labels[i], labels[j]);
                let (xi, xj) = (emb.vector(i), emb.vector(j));
                let d = crate::domain::euclidean(xi, xj);
                if d < crate::losses::DEGENERATE_DISTANCE {
                    continue;
                }
                let slope = weights.for_label(t) * t.sign() / (z * d);
                for k in 0..dim {
                    let g = slope * (xi[k] - xj[k]);
                    grads[i][k] += g;
                    grads[j][k] -= g;
                }
            }
        }
        for (i, mut g) in grads.into_iter().enumerate() {
            if g.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFiniteGradient { step });
            }
            project_tangent(emb.vector(i), &mut g);
            emb.retract(i, &g, learning_rate);
        }
    }
    Ok(emb)
}
