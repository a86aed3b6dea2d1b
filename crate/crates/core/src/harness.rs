//! Noise-rate sweeps: noisy training against a clean topline on a `1 - p`
//! subsample, evaluated on true labels, with measured mining skew and the
//! resulting tolerance bound.

use std::collections::BTreeMap;
use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datagen::{generate, subsample_clean, SynthSpec};
use crate::domain::{LabeledPointSet, LossConfig, LossFamily, Mining};
use crate::error::{Error, Result};
use crate::metrics::{evaluate, EvalReport, DEFAULT_KMEANS_RESTARTS};
use crate::noise::{inject_noise, NoiseSpec};
use crate::optimizer::{initialize_embeddings, train, InitMode, TrainConfig};
use crate::risk::{solve_marginal_bound, solve_triplet_bound};
use crate::rng::derive_seed;
use crate::sampling::{measure_skew, SkewEstimate};

/// Environment variable holding the number of sweep workers.
pub const WORKERS_ENV: &str = "EMBEDDING_NOISE_WORKERS";

/// Training steps used by the standard sweep.
pub const DEFAULT_SWEEP_STEPS: usize = 2000;

/// Random mixing weight of the feature initialisation in the standard sweep.
pub const DEFAULT_FEATURE_LAMBDA: f64 = 0.2;

/// Ratio below which a noise rate counts as a breakpoint.
pub const BREAKPOINT_RATIO: f64 = 0.9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MethodSpec {
    pub name: String,
    pub loss: LossConfig,
    #[serde(default = "default_init")]
    pub init: InitMode,
}

fn default_init() -> InitMode {
    InitMode::RandomSphere
}

impl MethodSpec {
    pub fn new(name: &str, loss: LossConfig, init: InitMode) -> Self {
        MethodSpec {
            name: name.to_string(),
            loss,
            init,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    #[serde(default = "default_noise_rates")]
    pub noise_rates: Vec<f64>,
    pub methods: Vec<MethodSpec>,
    #[serde(default = "default_repeats")]
    pub repeats: usize,
    #[serde(default)]
    pub seed: u64,
    /// Shared training settings; each method substitutes its own loss.
    pub train: TrainConfig,
    #[serde(default)]
    pub data: SynthSpec,
    #[serde(default = "default_eval_ks")]
    pub eval_ks: Vec<usize>,
    /// Minibatches mined on the trained embedding to estimate skew.
    #[serde(default = "default_skew_rounds")]
    pub skew_rounds: usize,
    #[serde(default = "default_restarts")]
    pub kmeans_restarts: usize,
    #[serde(default = "default_true")]
    pub stratified_topline: bool,
}

fn default_noise_rates() -> Vec<f64> {
    vec![0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6]
}
fn default_repeats() -> usize {
    5
}
fn default_eval_ks() -> Vec<usize> {
    vec![1, 10]
}
fn default_skew_rounds() -> usize {
    2000
}
fn default_restarts() -> usize {
    DEFAULT_KMEANS_RESTARTS
}
fn default_true() -> bool {
    true
}

impl SweepConfig {
    /// Default grid and methods on the default synthetic data.
    pub fn standard(steps: usize) -> Self {
        let mut train = TrainConfig::new(steps, LossConfig::triplet(Mining::RandomSemiHard), 0);
        train.record_selections = false;
        SweepConfig {
            noise_rates: default_noise_rates(),
            methods: standard_methods(),
            repeats: default_repeats(),
            seed: 0,
            train,
            data: SynthSpec::default(),
            eval_ks: default_eval_ks(),
            skew_rounds: default_skew_rounds(),
            kmeans_restarts: default_restarts(),
            stratified_topline: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(&p) = self.noise_rates.iter().find(|p| !(0.0..1.0).contains(*p)) {
            return Err(Error::invalid("noise_rates", format!("p = {p} outside [0, 1)")));
        }
        if self.repeats == 0 {
            return Err(Error::invalid("repeats", "need at least one seed per cell"));
        }
        if self.methods.is_empty() {
            return Err(Error::invalid("methods", "need at least one method"));
        }
        let mut names: Vec<&str> = self.methods.iter().map(|m| m.name.as_str()).collect();
        names.sort_unstable();
        if names.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::invalid("methods", "method names must be unique"));
        }
        for m in &self.methods {
            m.loss.validate()?;
        }
        if self.eval_ks.is_empty() {
            return Err(Error::invalid("eval_ks", "need at least one k"));
        }
        self.data.validate()
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn read_json(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }
}

/// Triplet loss under both semi-hard miners and marginal loss, all from a
/// feature initialisation, plus marginal loss from a random initialisation.
pub fn standard_methods() -> Vec<MethodSpec> {
    let features = InitMode::FromFeatures { lambda: DEFAULT_FEATURE_LAMBDA };
    vec![
        MethodSpec::new("triplet_random", LossConfig::triplet(Mining::RandomSemiHard), features),
        MethodSpec::new("triplet_fixed", LossConfig::triplet(Mining::FixedSemiHard), features),
        MethodSpec::new("marginal_random", LossConfig::marginal(Mining::RandomSemiHard), features),
        MethodSpec::new("marginal_random_sphere", LossConfig::marginal(Mining::RandomSemiHard), InitMode::RandomSphere),
    ]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub method: String,
    pub p: f64,
    pub seed: u64,
    pub noisy: EvalReport,
    pub topline: EvalReport,
    /// Noisy Rec@1 over topline Rec@1; absent when the topline is 0.
    pub ratio: Option<f64>,
    pub skew: SkewEstimate,
    pub p_star: f64,
    pub rescued_classes: usize,
    pub degenerate_items: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FailedCell {
    pub method: String,
    pub p: f64,
    pub seed: u64,
    pub error: String,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub cells: Vec<CellResult>,
    pub failed: Vec<FailedCell>,
}

#[derive(Clone, Copy, Debug)]
struct CellKey {
    method: usize,
    p_index: usize,
    repeat: usize,
}

/// Seed for repeat `r`; shared by every method and noise rate.
pub fn repeat_seed(cfg: &SweepConfig, repeat: usize) -> u64 {
    derive_seed(cfg.seed, repeat as u64)
}

fn noise_seed(seed: u64, p: f64) -> u64 {
    derive_seed(seed, p.to_bits())
}

fn run_cell(cfg: &SweepConfig, base: &LabeledPointSet, key: CellKey) -> Result<CellResult> {
    let method = &cfg.methods[key.method];
    let p = cfg.noise_rates[key.p_index];
    let seed = repeat_seed(cfg, key.repeat);
    let k = base.num_classes();

    let noisy = inject_noise(base, &NoiseSpec::new(p, k, noise_seed(seed, p))?)?;
    let init = initialize_embeddings(base.n(), cfg.data.d, method.init, base.features(), seed)?;
    let train_cfg = TrainConfig {
        loss: method.loss,
        seed,
        ..cfg.train.clone()
    };
    let (emb, log) = train(&noisy.training_view(), &init, &train_cfg)?;
    let noisy_eval = evaluate(&emb, base.true_labels(), k, &cfg.eval_ks, cfg.kmeans_restarts, seed)?;

    let sub = subsample_clean(base, 1.0 - p, noise_seed(seed, p), cfg.stratified_topline)?;
    let sub_init = init.select(&sub.indices);
    let (sub_emb, sub_log) = train(&sub.set.training_view(), &sub_init, &train_cfg)?;
    let top_eval = evaluate(&sub_emb, sub.set.true_labels(), k, &cfg.eval_ks, cfg.kmeans_restarts, seed)?;

    let (_, skew) = measure_skew(&noisy.training_view(), &emb, &train_cfg.minibatch, &method.loss, cfg.skew_rounds, seed)?;
    let bound = match method.loss.family {
        LossFamily::Triplet => solve_triplet_bound(k, skew.eta)?,
        LossFamily::Marginal => solve_marginal_bound(k, skew.gamma)?,
    };
    let ratio = match (noisy_eval.recall(1), top_eval.recall(1)) {
        (Some(a), Some(b)) if b > 0.0 => Some(a / b),
        _ => None,
    };
    Ok(CellResult {
        method: method.name.clone(),
        p,
        seed,
        noisy: noisy_eval,
        topline: top_eval,
        ratio,
        skew,
        p_star: bound.p_star,
        rescued_classes: sub.rescued_classes,
        degenerate_items: log.degenerate_items() + sub_log.degenerate_items(),
    })
}

fn worker_count() -> Option<usize> {
    std::env::var(WORKERS_ENV).ok()?.parse().ok().filter(|&n| n > 0)
}

/// Runs every (method, p, repeat) cell. Cells run in parallel; results come
/// back in config order. A failing cell is recorded and the sweep goes on.
pub fn run_sweep(cfg: &SweepConfig) -> Result<SweepReport> {
    cfg.validate()?;
    let bases = (0..cfg.repeats)
        .map(|r| {
            generate(&SynthSpec {
                seed: repeat_seed(cfg, r),
                ..cfg.data
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut keys = Vec::new();
    for method in 0..cfg.methods.len() {
        for p_index in 0..cfg.noise_rates.len() {
            for repeat in 0..cfg.repeats {
                keys.push(CellKey { method, p_index, repeat });
            }
        }
    }
    let run = || -> Vec<std::result::Result<CellResult, FailedCell>> {
        keys.par_iter()
            .map(|&key| {
                run_cell(cfg, &bases[key.repeat], key).map_err(|e| FailedCell {
                    method: cfg.methods[key.method].name.clone(),
                    p: cfg.noise_rates[key.p_index],
                    seed: repeat_seed(cfg, key.repeat),
                    error: e.to_string(),
                })
            })
            .collect()
    };
    let outcomes = match worker_count() {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::invalid("workers", e.to_string()))?
            .install(run),
        None => run(),
    };
    let mut report = SweepReport::default();
    for outcome in outcomes {
        match outcome {
            Ok(cell) => report.cells.push(cell),
            Err(failed) => report.failed.push(failed),
        }
    }
    Ok(report)
}

/// One raw CSV row.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CsvRow {
    pub method: String,
    pub p: f64,
    pub seed: u64,
    #[serde(rename = "rec@1")]
    pub rec_1: Option<f64>,
    #[serde(rename = "rec@10")]
    pub rec_10: Option<f64>,
    pub nmi: f64,
    #[serde(rename = "topline_rec@1")]
    pub topline_rec_1: Option<f64>,
    pub ratio: Option<f64>,
    pub eta: f64,
    pub p_star: f64,
}

pub const CSV_HEADER: [&str; 10] = [
    "method",
    "p",
    "seed",
    "rec@1",
    "rec@10",
    "nmi",
    "topline_rec@1",
    "ratio",
    "eta",
    "p_star",
];

impl From<&CellResult> for CsvRow {
    fn from(c: &CellResult) -> Self {
        CsvRow {
            method: c.method.clone(),
            p: c.p,
            seed: c.seed,
            rec_1: c.noisy.recall(1),
            rec_10: c.noisy.recall(10),
            nmi: c.noisy.nmi,
            topline_rec_1: c.topline.recall(1),
            ratio: c.ratio,
            eta: c.skew.eta,
            p_star: c.p_star,
        }
    }
}

impl SweepReport {
    pub fn rows(&self) -> Vec<CsvRow> {
        self.cells.iter().map(CsvRow::from).collect()
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(writer);
        w.write_record(CSV_HEADER)?;
        for row in self.rows() {
            w.serialize(row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn cells_for(&self, method: &str, p: f64) -> impl Iterator<Item = &CellResult> {
        let method = method.to_string();
        self.cells.iter().filter(move |c| c.method == method && c.p == p)
    }

    pub fn summary(&self) -> SweepSummary {
        let mut groups: BTreeMap<(String, u64), Vec<&CellResult>> = BTreeMap::new();
        let mut order: Vec<(String, u64)> = Vec::new();
        for c in &self.cells {
            let key = (c.method.clone(), c.p.to_bits());
            if !groups.contains_key(&key) {
                order.push(key.clone());
            }
            groups.entry(key).or_default().push(c);
        }
        let rows: Vec<SummaryRow> = order
            .iter()
            .map(|key| {
                let cells = &groups[key];
                let stat = |f: &dyn Fn(&CellResult) -> Option<f64>| MeanSe::of(cells.iter().filter_map(|c| f(c)));
                SummaryRow {
                    method: key.0.clone(),
                    p: f64::from_bits(key.1),
                    cells: cells.len(),
                    rec_1: stat(&|c| c.noisy.recall(1)),
                    topline_rec_1: stat(&|c| c.topline.recall(1)),
                    ratio: stat(&|c| c.ratio),
                    nmi: stat(&|c| Some(c.noisy.nmi)),
                    eta: stat(&|c| Some(c.skew.eta)),
                    gamma: stat(&|c| Some(c.skew.gamma)),
                    p_star: stat(&|c| Some(c.p_star)),
                }
            })
            .collect();
        let mut breakpoints: BTreeMap<String, Option<f64>> = BTreeMap::new();
        for row in &rows {
            let entry = breakpoints.entry(row.method.clone()).or_insert(None);
            if let Some(mean) = row.ratio.mean {
                if mean < BREAKPOINT_RATIO && entry.is_none_or(|p| row.p < p) {
                    *entry = Some(row.p);
                }
            }
        }
        SweepSummary {
            rows,
            breakpoints,
            failed: self.failed.clone(),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MeanSe {
    pub mean: Option<f64>,
    /// Standard error of the mean; absent with fewer than two values.
    pub se: Option<f64>,
    pub count: usize,
}

impl MeanSe {
    pub fn of(values: impl Iterator<Item = f64>) -> Self {
        let v: Vec<f64> = values.collect();
        let n = v.len();
        if n == 0 {
            return MeanSe::default();
        }
        let mean = v.iter().sum::<f64>() / n as f64;
        let se = (n > 1).then(|| {
            let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            (var / n as f64).sqrt()
        });
        MeanSe {
            mean: Some(mean),
            se,
            count: n,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub method: String,
    pub p: f64,
    pub cells: usize,
    #[serde(rename = "rec@1")]
    pub rec_1: MeanSe,
    #[serde(rename = "topline_rec@1")]
    pub topline_rec_1: MeanSe,
    pub ratio: MeanSe,
    pub nmi: MeanSe,
    pub eta: MeanSe,
    pub gamma: MeanSe,
    pub p_star: MeanSe,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepSummary {
    pub rows: Vec<SummaryRow>,
    /// First noise rate whose mean ratio drops below 0.9, per method.
    pub breakpoints: BTreeMap<String, Option<f64>>,
    pub failed: Vec<FailedCell>,
}

pub const CELLS_FILE: &str = "cells.csv";
pub const SUMMARY_FILE: &str = "summary.json";

/// Writes `cells.csv` and `summary.json` into `dir`, creating it if needed.
pub fn emit_report(report: &SweepReport, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    report.write_csv(fs::File::create(dir.join(CELLS_FILE))?)?;
    fs::write(dir.join(SUMMARY_FILE), serde_json::to_string_pretty(&report.summary())?)?;
    Ok(())
}

pub fn read_csv_rows<R: Read>(reader: R) -> Result<Vec<CsvRow>> {
    let mut r = csv::Reader::from_reader(reader);
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if header != CSV_HEADER {
        return Err(Error::invalid("csv", format!("unexpected header {header:?}")));
    }
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampling::MinibatchSpec;

    fn tiny_config() -> SweepConfig {
        let mut cfg = SweepConfig::standard(40);
        cfg.data = SynthSpec {
            num_classes: 4,
            per_class: 8,
            d: 4,
            spread: 2.0,
            seed: 0,
        };
        cfg.train.minibatch = MinibatchSpec {
            classes_per_batch: 3,
            samples_per_class: 3,
            seed: 0,
        };
        cfg.eval_ks = vec![1, 10];
        cfg.skew_rounds = 5;
        cfg.kmeans_restarts = 2;
        cfg
    }

    #[test]
    fn zero_noise_ratio_is_one() {
        let mut cfg = tiny_config();
        cfg.noise_rates = vec![0.0];
        cfg.repeats = 2;
        let report = run_sweep(&cfg).unwrap();
        assert!(report.failed.is_empty(), "{:?}", report.failed);
        assert_eq!(report.cells.len(), cfg.methods.len() * 2);
        for c in &report.cells {
            assert_eq!(c.ratio, Some(1.0), "{}", c.method);
            assert_eq!(c.noisy, c.topline);
        }
    }

    #[test]
    fn shape_and_summary() {
        let mut cfg = tiny_config();
        cfg.methods.truncate(2);
        cfg.noise_rates = vec![0.0, 0.2, 0.4];
        cfg.repeats = 2;
        let report = run_sweep(&cfg).unwrap();
        assert_eq!(report.cells.len(), 12);
        let seeds: Vec<u64> = report.cells.iter().take(2).map(|c| c.seed).collect();
        assert_ne!(seeds[0], seeds[1]);
        let summary = report.summary();
        assert_eq!(summary.rows.len(), 6);
        assert!(summary.rows.iter().all(|r| r.cells == 2 && r.ratio.se.is_some()));
        assert_eq!(summary.breakpoints.len(), 2);
    }

    #[test]
    fn csv_round_trip_and_cardinality() {
        let mut cfg = tiny_config();
        cfg.methods.truncate(2);
        cfg.noise_rates = vec![0.1, 0.3, 0.5];
        cfg.repeats = 2;
        let report = run_sweep(&cfg).unwrap();
        let mut buf = Vec::new();
        report.write_csv(&mut buf).unwrap();
        let rows = read_csv_rows(buf.as_slice()).unwrap();
        assert_eq!(rows.len(), 12);
        assert_eq!(rows, report.rows());
    }

    #[test]
    fn empty_report_is_header_only() {
        let mut buf = Vec::new();
        SweepReport::default().write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), format!("{}\n", CSV_HEADER.join(",")));
    }

    #[test]
    fn failed_cells_are_recorded() {
        let mut cfg = tiny_config();
        cfg.noise_rates = vec![0.0];
        cfg.repeats = 1;
        cfg.methods.truncate(1);
        cfg.methods.push(MethodSpec::new(
            "bad_init",
            LossConfig::triplet(Mining::RandomSemiHard),
            InitMode::FromFeatures { lambda: 2.0 },
        ));
        let report = run_sweep(&cfg).unwrap();
        assert_eq!(report.cells.len(), 1);
        assert_eq!(report.failed.len(), 1);
        assert_eq!(report.failed[0].method, "bad_init");
    }

    #[test]
    fn config_validation_and_json() {
        let cfg = tiny_config();
        let back = SweepConfig::from_json(&serde_json::to_string(&cfg).unwrap()).unwrap();
        assert_eq!(back, cfg);
        let mut bad = cfg.clone();
        bad.noise_rates = vec![1.0];
        assert!(run_sweep(&bad).is_err());
        let mut bad = cfg;
        bad.repeats = 0;
        assert!(bad.validate().is_err());
    }

    #[test]
    fn mean_and_standard_error() {
        let m = MeanSe::of([1.0, 2.0, 3.0].into_iter());
        assert_eq!(m.mean, Some(2.0));
        assert!((m.se.unwrap() - (1.0f64 / 3.0).sqrt()).abs() < 1e-15);
        assert_eq!(MeanSe::of(std::iter::empty()).mean, None);
    }
}
