//! Self-check suite: exhaustive oracles, decomposition identities, gradient
//! checks, bound checks, and risk-ordering instances, gathered in one report.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::domain::{EmbeddingState, LabeledPointSet, LossConfig, Mining, PairLabel, Triplet, D_MAX};
use crate::losses::{
    auxiliary_pair_loss, item_loss, loss_gradient, marginal_loss, unhinged_marginal_loss,
    unhinged_triplet_loss, LossItem,
};
use crate::noise::{
    enumerate_pair_noise_rates, inject_noise, label_transition_probability, monte_carlo_pair_noise,
    pair_noise_rates_at, standard_error, NoiseSpec, PairNoiseRates,
};
use crate::optimizer::{initialize_embeddings, minimize_pair_risk, random_unit_vector, InitMode};
use crate::risk::{
    all_pairs, expected_noisy_pair_risk, expected_noisy_risk_direct, marginal_condition, marginal_partition,
    marginal_residual, residual_z_estimate, solve_marginal_bound, solve_triplet_bound, triplet_asymptotic_bound,
    triplet_condition, verify_risk_ordering, WeightScheme,
};
use crate::rng::{self, derive_seed, streams, Rng};
use crate::sampling::SkewEstimate;

/// Which closed form of the positive-pair flip rate the checks compare against.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PositiveFlipFormula {
    #[default]
    Corrected,
    /// `2p(1-p) + p^2 (1 - 2/(K-1))`, kept as a known-wrong mutant.
    Mutant,
}

pub fn closed_form_rates(p: f64, num_classes: usize, formula: PositiveFlipFormula) -> crate::Result<PairNoiseRates> {
    let mut rates = pair_noise_rates_at(p, num_classes)?;
    if formula == PositiveFlipFormula::Mutant {
        let k1 = (num_classes - 1) as f64;
        rates.q_pos = 2.0 * p * (1.0 - p) + p * p * (1.0 - 2.0 / k1);
    }
    Ok(rates)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    /// Worst measured discrepancy, or the checked quantity.
    pub measured: f64,
    pub tolerance: f64,
    pub detail: String,
}

impl CheckResult {
    fn at_most(name: &str, measured: f64, tolerance: f64, detail: String) -> Self {
        CheckResult {
            name: name.to_string(),
            passed: measured <= tolerance,
            measured,
            tolerance,
            detail,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub seed: u64,
    pub formula: PositiveFlipFormula,
    pub checks: Vec<CheckResult>,
    pub all_passed: bool,
}

impl VerifyReport {
    pub fn check(&self, name: &str) -> Option<&CheckResult> {
        self.checks.iter().find(|c| c.name == name)
    }
}

pub const CHECK_NAMES: [&str; 12] = [
    "pair_flip_enumeration",
    "pair_flip_monte_carlo",
    "noisy_risk_exhaustive",
    "auxiliary_reflection",
    "unhinged_triplet_decomposition",
    "unhinged_marginal_reflection",
    "affine_noisy_risk",
    "gradient_finite_difference",
    "bound_solver",
    "risk_ordering",
    "marginal_partition",
    "residual_z",
];

pub fn run_all(seed: u64) -> VerifyReport {
    run_all_with(seed, PositiveFlipFormula::Corrected)
}

pub fn run_all_with(seed: u64, formula: PositiveFlipFormula) -> VerifyReport {
    let checks = vec![
        check_pair_flip_enumeration(formula),
        check_pair_flip_monte_carlo(seed, formula, MONTE_CARLO_TRIALS),
        check_noisy_risk_exhaustive(seed),
        check_auxiliary_reflection(seed, IDENTITY_SAMPLES),
        check_unhinged_triplet(seed, IDENTITY_SAMPLES),
        check_unhinged_marginal(seed, IDENTITY_SAMPLES),
        check_affine_noisy_risk(seed, IDENTITY_SAMPLES),
        check_gradients(seed, GRADIENT_CONFIGS),
        check_bound_solver(),
        check_risk_ordering(seed, ORDERING_INSTANCES, ORDERING_PERTURBATIONS),
        check_marginal_partition(seed),
        check_residual_z(),
    ];
    let all_passed = checks.iter().all(|c| c.passed);
    VerifyReport {
        seed,
        formula,
        checks,
        all_passed,
    }
}

pub const MONTE_CARLO_TRIALS: u64 = 200_000;
pub const MONTE_CARLO_SIGMAS: f64 = 4.0;
pub const IDENTITY_SAMPLES: usize = 10_000;
pub const IDENTITY_TOL: f64 = 1e-12;
pub const GRADIENT_CONFIGS: usize = 100;
pub const GRADIENT_STEP: f64 = 1e-5;
pub const GRADIENT_TOL: f64 = 1e-4;
pub const ORDERING_INSTANCES: usize = 5;
pub const ORDERING_PERTURBATIONS: usize = 100;

const NOISE_GRID_P: [f64; 3] = [0.1, 0.3, 0.5];
const NOISE_GRID_K: [usize; 4] = [3, 5, 10, 50];

fn rng_for(seed: u64, check: u64) -> Rng {
    rng::stream(derive_seed(seed, check), streams::VERIFY)
}

/// Closed form against the sum over all `K^2` joint corruptions, `K <= 4`.
pub fn check_pair_flip_enumeration(formula: PositiveFlipFormula) -> CheckResult {
    let mut worst: f64 = 0.0;
    for k in [2, 3, 4] {
        for step in 0..=20 {
            let p = step as f64 / 20.0;
            let (Ok(closed), Ok(exact)) = (closed_form_rates(p, k, formula), enumerate_pair_noise_rates(p, k)) else {
                continue;
            };
            worst = worst.max((closed.q_pos - exact.q_pos).abs()).max((closed.q_neg - exact.q_neg).abs());
        }
    }
    CheckResult::at_most(
        "pair_flip_enumeration",
        worst,
        IDENTITY_TOL,
        "max |closed - enumerated| over K in {2,3,4}, p on a 0.05 grid".into(),
    )
}

/// Simulated pair flips against the closed form, in standard errors.
pub fn check_pair_flip_monte_carlo(seed: u64, formula: PositiveFlipFormula, trials: u64) -> CheckResult {
    let mut worst: f64 = 0.0;
    let mut where_ = String::new();
    for (pi, &p) in NOISE_GRID_P.iter().enumerate() {
        for (ki, &k) in NOISE_GRID_K.iter().enumerate() {
            let spec = NoiseSpec {
                p,
                num_classes: k,
                seed: derive_seed(seed, (pi * 16 + ki) as u64),
            };
            let (Ok(mc), Ok(closed)) = (monte_carlo_pair_noise(&spec, trials), closed_form_rates(p, k, formula)) else {
                continue;
            };
            for (name, m, c) in [("q_pos", mc.q_pos, closed.q_pos), ("q_neg", mc.q_neg, closed.q_neg)] {
                let se = standard_error(c.clamp(1e-12, 1.0 - 1e-12), trials);
                let z = (m - c).abs() / se;
                if z > worst {
                    worst = z;
                    where_ = format!("{name} at p={p} K={k}: simulated {m}, closed {c}");
                }
            }
        }
    }
    CheckResult::at_most(
        "pair_flip_monte_carlo",
        worst,
        MONTE_CARLO_SIGMAS,
        format!("worst deviation in standard errors ({trials} trials): {where_}"),
    )
}

/// Expected weighted pair risk of a whole small set by enumerating every joint
/// corruption of its labels, against the per-pair affine form.
pub fn check_noisy_risk_exhaustive(seed: u64) -> CheckResult {
    let mut rng = rng_for(seed, 3);
    let mut worst: f64 = 0.0;
    for (k, n) in [(3usize, 7usize), (4, 8)] {
        let labels: Vec<usize> = (0..n).map(|i| i % k).collect();
        let emb = EmbeddingState::new((0..n).map(|_| random_unit_vector(3, &mut rng)).collect()).expect("unit vectors");
        let w = WeightScheme::one_to_one(k);
        let pairs = all_pairs(n);
        for p in [0.15, 0.4] {
            let rates = pair_noise_rates_at(p, k).expect("valid rate");
            let affine: f64 = pairs
                .iter()
                .map(|&(i, j)| {
                    let t = PairLabel::from_labels(labels[i], labels[j]);
                    expected_noisy_pair_risk(auxiliary_pair_loss(emb.dist(i, j), t), t, &w, &rates).affine
                })
                .sum();
            let mut expected = 0.0;
            let mut observed = vec![0usize; n];
            let states = k.pow(n as u32);
            for code in 0..states {
                let mut c = code;
                let mut prob = 1.0;
                for (i, o) in observed.iter_mut().enumerate() {
                    *o = c % k;
                    c /= k;
                    prob *= label_transition_probability(labels[i], *o, p, k);
                }
                let total: f64 = pairs
                    .iter()
                    .map(|&(i, j)| {
                        let t_hat = PairLabel::from_labels(observed[i], observed[j]);
                        w.for_label(t_hat) * auxiliary_pair_loss(emb.dist(i, j), t_hat)
                    })
                    .sum();
                expected += prob * total;
            }
            worst = worst.max((expected - affine).abs() / affine.abs().max(1.0));
        }
    }
    CheckResult::at_most(
        "noisy_risk_exhaustive",
        worst,
        IDENTITY_TOL,
        "relative gap between enumerated expectation and summed affine form (K=3,n=7; K=4,n=8)".into(),
    )
}

fn random_distance(rng: &mut Rng) -> f64 {
    rng.random_range(0.0..=D_MAX)
}

fn random_label(rng: &mut Rng) -> PairLabel {
    if rng.random_bool(0.5) {
        PairLabel::Positive
    } else {
        PairLabel::Negative
    }
}

/// `l(-t) = D_MAX - l(t)` for the auxiliary pair loss.
pub fn check_auxiliary_reflection(seed: u64, samples: usize) -> CheckResult {
    let mut rng = rng_for(seed, 4);
    let worst = (0..samples)
        .map(|_| {
            let d = random_distance(&mut rng);
            let t = random_label(&mut rng);
            (auxiliary_pair_loss(d, t.flipped()) - (D_MAX - auxiliary_pair_loss(d, t))).abs()
        })
        .fold(0.0, f64::max);
    CheckResult::at_most("auxiliary_reflection", worst, IDENTITY_TOL, format!("{samples} random (d, t)"))
}

/// Unhinged triplet loss equals `l(a,p,+) + l(a,n,-) + alpha`.
pub fn check_unhinged_triplet(seed: u64, samples: usize) -> CheckResult {
    let mut rng = rng_for(seed, 5);
    let cfg = LossConfig::triplet(Mining::RandomSemiHard);
    let worst = (0..samples)
        .map(|_| {
            let (d_ap, d_an) = (random_distance(&mut rng), random_distance(&mut rng));
            let split = auxiliary_pair_loss(d_ap, PairLabel::Positive)
                + auxiliary_pair_loss(d_an, PairLabel::Negative)
                + cfg.alpha;
            (unhinged_triplet_loss(d_ap, d_an, &cfg) - split).abs()
        })
        .fold(0.0, f64::max);
    CheckResult::at_most(
        "unhinged_triplet_decomposition",
        worst,
        IDENTITY_TOL,
        format!("{samples} random (d_ap, d_an)"),
    )
}

/// Unhinged marginal loss under both labels sums to `2 D_MAX + 2 alpha`.
pub fn check_unhinged_marginal(seed: u64, samples: usize) -> CheckResult {
    let mut rng = rng_for(seed, 6);
    let worst = (0..samples)
        .map(|_| {
            let mut cfg = LossConfig::marginal(Mining::RandomSemiHard);
            cfg.alpha = rng.random_range(0.01..0.5);
            cfg.beta = rng.random_range(0.6..1.9);
            let d = random_distance(&mut rng);
            let sum = unhinged_marginal_loss(d, PairLabel::Positive, &cfg) + unhinged_marginal_loss(d, PairLabel::Negative, &cfg);
            (sum - (2.0 * D_MAX + 2.0 * cfg.alpha)).abs()
        })
        .fold(0.0, f64::max);
    CheckResult::at_most(
        "unhinged_marginal_reflection",
        worst,
        IDENTITY_TOL,
        format!("{samples} random (d, alpha, beta)"),
    )
}

/// The affine noisy risk form against the two-branch expectation.
pub fn check_affine_noisy_risk(seed: u64, samples: usize) -> CheckResult {
    let mut rng = rng_for(seed, 7);
    let worst = (0..samples)
        .map(|_| {
            let k = rng.random_range(2..60);
            let p = rng.random_range(0.0..0.99);
            let rates = pair_noise_rates_at(p, k).expect("valid rate");
            let w = WeightScheme {
                w_pos: rng.random_range(0.01..5.0),
                w_neg: rng.random_range(0.01..5.0),
            };
            let t = random_label(&mut rng);
            let l = auxiliary_pair_loss(random_distance(&mut rng), t);
            let r = expected_noisy_pair_risk(l, t, &w, &rates);
            (r.affine - r.two_branch).abs()
        })
        .fold(0.0, f64::max);
    CheckResult::at_most("affine_noisy_risk", worst, IDENTITY_TOL, format!("{samples} random (l, t, p, K, w)"))
}

/// Central finite differences of one item's loss w.r.t. raw coordinates.
pub fn finite_difference_gradient(vectors: &[Vec<f64>], item: &LossItem, cfg: &LossConfig, h: f64) -> Vec<Vec<f64>> {
    let mut work = vectors.to_vec();
    let mut out = vec![vec![0.0; vectors[0].len()]; vectors.len()];
    for i in 0..vectors.len() {
        for c in 0..vectors[0].len() {
            let x = work[i][c];
            work[i][c] = x + h;
            let up = item_loss(&work, item, cfg);
            work[i][c] = x - h;
            let down = item_loss(&work, item, cfg);
            work[i][c] = x;
            out[i][c] = (up - down) / (2.0 * h);
        }
    }
    out
}

fn dense_gradient(vectors: &[Vec<f64>], item: &LossItem, cfg: &LossConfig) -> Vec<Vec<f64>> {
    let mut out = vec![vec![0.0; vectors[0].len()]; vectors.len()];
    for (i, g) in loss_gradient(vectors, item, cfg).entries {
        for (o, v) in out[i].iter_mut().zip(g) {
            *o += v;
        }
    }
    out
}

const KINK_CLEARANCE: f64 = 1e-3;

/// Random triplet whose distances and hinge arguments stay clear of kinks.
fn non_degenerate_triplet(rng: &mut Rng, dim: usize, cfg: &LossConfig) -> Vec<Vec<f64>> {
    loop {
        let vs: Vec<Vec<f64>> = (0..3).map(|_| random_unit_vector(dim, rng)).collect();
        let d_ap = crate::domain::euclidean(&vs[0], &vs[1]);
        let d_an = crate::domain::euclidean(&vs[0], &vs[2]);
        if d_ap < KINK_CLEARANCE || d_an < KINK_CLEARANCE {
            continue;
        }
        let clear = match cfg.family {
            crate::domain::LossFamily::Triplet => {
                let arg = d_ap - d_an + cfg.alpha;
                arg > KINK_CLEARANCE
            }
            crate::domain::LossFamily::Marginal => {
                let pos = (d_ap - cfg.beta) + cfg.alpha;
                let neg = -(d_an - cfg.beta) + cfg.alpha;
                pos.abs() > KINK_CLEARANCE && neg.abs() > KINK_CLEARANCE && (pos > 0.0 || neg > 0.0)
            }
        };
        if clear {
            return vs;
        }
    }
}

/// Worst relative error of analytic against finite-difference gradients.
pub fn gradient_check(seed: u64, configs: usize, cfg: &LossConfig) -> f64 {
    let mut rng = rng_for(seed, 8 + cfg.family as u64);
    let item = LossItem::Triplet(Triplet {
        anchor: 0,
        positive: 1,
        negative: 2,
    });
    let mut worst: f64 = 0.0;
    for _ in 0..configs {
        let vs = non_degenerate_triplet(&mut rng, 5, cfg);
        let analytic = dense_gradient(&vs, &item, cfg);
        let numeric = finite_difference_gradient(&vs, &item, cfg, GRADIENT_STEP);
        let diff: f64 = analytic
            .iter()
            .flatten()
            .zip(numeric.iter().flatten())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        let scale = analytic.iter().flatten().map(|a| a * a).sum::<f64>().sqrt().max(1e-8);
        worst = worst.max(diff / scale);
    }
    worst
}

pub fn check_gradients(seed: u64, configs: usize) -> CheckResult {
    let triplet = gradient_check(seed, configs, &LossConfig::triplet(Mining::RandomSemiHard));
    let marginal = gradient_check(seed, configs, &LossConfig::marginal(Mining::RandomSemiHard));
    CheckResult::at_most(
        "gradient_finite_difference",
        triplet.max(marginal),
        GRADIENT_TOL,
        format!("{configs} configurations each; triplet {triplet:.3e}, marginal {marginal:.3e}"),
    )
}

pub fn check_bound_solver() -> CheckResult {
    let mut problems = Vec::new();
    let mut worst_q: f64 = 0.0;
    if triplet_asymptotic_bound(1.0) != 1.0 {
        problems.push("triplet asymptote at eta = 1 is not 1".to_string());
    }
    if (triplet_asymptotic_bound(2.0) - (1.0 - 0.5f64.sqrt())).abs() > IDENTITY_TOL {
        problems.push("triplet asymptote at eta = 2".to_string());
    }
    if crate::risk::marginal_asymptotic_bound(0.75) != 0.5 {
        problems.push("marginal asymptote at gamma = 0.75 is not 0.5".to_string());
    }
    for k in [50, 100, 500] {
        for eta in [1.0, 1.5, 2.0, 4.0] {
            match solve_triplet_bound(k, eta) {
                Ok(r) => {
                    let q = triplet_condition(r.p_star, k, eta).unwrap_or(f64::NAN);
                    worst_q = worst_q.max(q.abs());
                    if !r.exact || r.p_star > r.asymptotic + 0.05 {
                        problems.push(format!("triplet K={k} eta={eta}: {r:?}"));
                    }
                }
                Err(e) => problems.push(e.to_string()),
            }
        }
        for gamma in [0.25, 0.75, 1.0] {
            match solve_marginal_bound(k, gamma) {
                Ok(r) => {
                    let q = marginal_condition(r.p_star, k, gamma).unwrap_or(f64::NAN);
                    worst_q = worst_q.max(q.abs());
                    if !r.exact || r.p_star > r.asymptotic + 0.05 {
                        problems.push(format!("marginal K={k} gamma={gamma}: {r:?}"));
                    }
                }
                Err(e) => problems.push(e.to_string()),
            }
        }
    }
    let mut c = CheckResult::at_most("bound_solver", worst_q, 1e-9, "max |Q(p_star)| over K >= 50".into());
    if !problems.is_empty() {
        c.passed = false;
        c.detail = problems.join("; ");
    }
    c
}

/// Outcome of the risk-ordering experiment on seeded small instances.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct OrderingSummary {
    pub instances: usize,
    pub perturbations: usize,
    /// Perturbations for which the precondition held and `Q >= 0`.
    pub applicable: usize,
    pub chain_violations: usize,
    pub noisy_not_lower: usize,
    pub max_identity_gap: f64,
    pub q: f64,
}

pub const ORDERING_NOISE_RATE: f64 = 0.2;

/// For each instance: minimise the clean pair risk, then compare against
/// random perturbations of the minimiser.
pub fn risk_ordering_experiment(seed: u64, instances: usize, perturbations: usize) -> crate::Result<OrderingSummary> {
    let (k, n, dim) = (4, 20, 4);
    let labels: Vec<usize> = (0..n).map(|i| i % k).collect();
    let w = WeightScheme::one_to_one(k);
    let rates = pair_noise_rates_at(ORDERING_NOISE_RATE, k)?;
    let mut out = OrderingSummary {
        instances,
        perturbations: instances * perturbations,
        q: crate::risk::q_multiplier(&w, &rates),
        ..OrderingSummary::default()
    };
    for inst in 0..instances {
        let s = derive_seed(seed, 100 + inst as u64);
        let init = initialize_embeddings(n, dim, InitMode::RandomSphere, None, s)?;
        let star = minimize_pair_risk(&labels, &init, &w, 400, 1.0)?;
        let mut rng = rng_for(s, 10);
        for _ in 0..perturbations {
            let sigma = rng.random_range(0.05..1.0);
            let moved: Vec<Vec<f64>> = (0..n)
                .map(|i| {
                    let r = random_unit_vector(dim, &mut rng);
                    star.vector(i).iter().zip(&r).map(|(x, y)| x + sigma * y).collect()
                })
                .collect();
            let other = EmbeddingState::normalized(&moved)?;
            let report = verify_risk_ordering(&star, &other, &labels, &w, &rates)?;
            let direct = expected_noisy_risk_direct(&star, &labels, &w, &rates)
                - expected_noisy_risk_direct(&other, &labels, &w, &rates);
            out.max_identity_gap = out
                .max_identity_gap
                .max((direct - report.noisy_diff).abs())
                .max((report.noisy_diff_from_sums - report.noisy_diff).abs());
            if report.precondition_holds && report.q >= 0.0 {
                out.applicable += 1;
                out.chain_violations += usize::from(!report.chain_holds);
                out.noisy_not_lower += usize::from(report.noisy_diff > IDENTITY_TOL);
            }
        }
    }
    Ok(out)
}

pub fn check_risk_ordering(seed: u64, instances: usize, perturbations: usize) -> CheckResult {
    match risk_ordering_experiment(seed, instances, perturbations) {
        Ok(s) => CheckResult {
            name: "risk_ordering".into(),
            passed: s.applicable > 0
                && s.chain_violations == 0
                && s.noisy_not_lower == 0
                && s.max_identity_gap <= IDENTITY_TOL,
            measured: (s.chain_violations + s.noisy_not_lower) as f64,
            tolerance: 0.0,
            detail: format!(
                "{} of {} perturbations applicable (Q = {:.4}); identity gap {:.2e}",
                s.applicable, s.perturbations, s.q, s.max_identity_gap
            ),
        },
        Err(e) => CheckResult {
            name: "risk_ordering".into(),
            passed: false,
            measured: f64::NAN,
            tolerance: 0.0,
            detail: e.to_string(),
        },
    }
}

/// Partition sanity: nothing moves between channels without noise, and with
/// noise every active pair lands in exactly one part.
pub fn check_marginal_partition(seed: u64) -> CheckResult {
    let run = || -> crate::Result<(bool, String)> {
        let k = 4;
        let n = 24;
        let labels: Vec<usize> = (0..n).map(|i| i % k).collect();
        let clean = LabeledPointSet::clean(k, labels)?;
        let mut rng = rng_for(seed, 11);
        let emb = EmbeddingState::new((0..n).map(|_| random_unit_vector(3, &mut rng)).collect())?;
        let other = EmbeddingState::new((0..n).map(|_| random_unit_vector(3, &mut rng)).collect())?;
        let cfg = LossConfig::marginal(Mining::RandomSemiHard);
        let pairs = all_pairs(n);
        let none = marginal_partition(&clean, &pairs, &emb, &cfg);
        let noisy = inject_noise(&clean, &NoiseSpec::new(0.3, k, derive_seed(seed, 12))?)?;
        let part = marginal_partition(&noisy, &pairs, &emb, &cfg);
        let active_any = pairs
            .iter()
            .filter(|&&(i, j)| {
                let d = emb.dist(i, j);
                let t = PairLabel::from_labels(noisy.true_labels()[i], noisy.true_labels()[j]);
                let th = PairLabel::from_labels(noisy.observed_labels()[i], noisy.observed_labels()[j]);
                marginal_loss(d, t, &cfg).active || marginal_loss(d, th, &cfg).active
            })
            .count();
        let rates = pair_noise_rates_at(0.3, k)?;
        let skew = SkewEstimate {
            eta: 2.0,
            eta_plus: 2.0,
            eta_minus: 1.0,
            gamma: 0.5,
        };
        let res = marginal_residual(&noisy, &pairs, &emb, &other, &cfg, &WeightScheme::one_to_one(k), &rates, &skew);
        let ok = none.plus.is_empty() && none.minus.is_empty() && part.active_count() == active_any && res.residual.is_finite();
        Ok((
            ok,
            format!(
                "|T+|={} |T-|={} |T|={} z={} z|T+|>|T-|: {} residual={:.4e}",
                res.plus_count, res.minus_count, res.both_count, res.z.z, res.z_condition_holds, res.residual
            ),
        ))
    };
    match run() {
        Ok((passed, detail)) => CheckResult {
            name: "marginal_partition".into(),
            passed,
            measured: f64::from(u8::from(passed)),
            tolerance: 1.0,
            detail,
        },
        Err(e) => CheckResult {
            name: "marginal_partition".into(),
            passed: false,
            measured: f64::NAN,
            tolerance: 1.0,
            detail: e.to_string(),
        },
    }
}

pub fn check_residual_z() -> CheckResult {
    let at = |gamma: f64| {
        residual_z_estimate(&SkewEstimate {
            eta: 1.0 / gamma,
            eta_plus: 1.0 / gamma,
            eta_minus: 1.0,
            gamma,
        })
    };
    let err = (at(0.5).z - 1.0).abs().max((at(0.8).z - 4.0).abs());
    let mut c = CheckResult::at_most("residual_z", err, IDENTITY_TOL, "z at eta+/eta- = 2 and 1.25; unbounded at 1".into());
    if !at(1.0).unbounded {
        c.passed = false;
    }
    c
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_seed_passes_every_check() {
        let report = run_all(0);
        for c in &report.checks {
            assert!(c.passed, "{c:?}");
        }
        assert!(report.all_passed);
        let names: Vec<&str> = report.checks.iter().map(|c| c.name.as_str()).collect();
        assert_eq!(names, CHECK_NAMES);
    }

    #[test]
    fn mutant_flip_rate_is_caught() {
        let mc = check_pair_flip_monte_carlo(0, PositiveFlipFormula::Mutant, MONTE_CARLO_TRIALS);
        assert!(!mc.passed, "{mc:?}");
        assert!(!check_pair_flip_enumeration(PositiveFlipFormula::Mutant).passed);
    }

    #[test]
    fn report_serialises() {
        let report = VerifyReport {
            seed: 1,
            formula: PositiveFlipFormula::Corrected,
            checks: vec![check_residual_z(), check_bound_solver()],
            all_passed: true,
        };
        let value = serde_json::to_value(&report).unwrap();
        for c in value["checks"].as_array().unwrap() {
            for key in ["name", "passed", "measured", "tolerance", "detail"] {
                assert!(c.get(key).is_some());
            }
        }
        let back: VerifyReport = serde_json::from_value(value).unwrap();
        assert_eq!(back, report);
    }

    #[test]
    fn verification_is_deterministic() {
        assert_eq!(check_risk_ordering(3, 2, 10), check_risk_ordering(3, 2, 10));
        assert_eq!(check_gradients(3, 10), check_gradients(3, 10));
    }
}
