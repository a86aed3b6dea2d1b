//! Acceptance criteria. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any fails.

use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;

use embedding_noise::harness::{run_sweep, SweepConfig, SweepReport, DEFAULT_SWEEP_STEPS};
use embedding_noise::metrics::{nmi, recall_at_k};
use embedding_noise::optimizer::{initialize_embeddings, InitMode};
use embedding_noise::rng;
use embedding_noise::verify::{self, CheckResult, PositiveFlipFormula};
use embedding_noise::EmbeddingState;

const SEED: u64 = 0;

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        passed,
        detail: detail.into(),
    }
}

fn within(elapsed: Duration, budget: Duration) -> Outcome {
    outcome(elapsed < budget, format!("{:.1}s of {:.0}s", elapsed.as_secs_f64(), budget.as_secs_f64()))
}

fn combine(parts: Vec<Outcome>) -> Outcome {
    outcome(
        parts.iter().all(|o| o.passed),
        parts.iter().map(|o| o.detail.as_str()).collect::<Vec<_>>().join("; "),
    )
}

fn from_check(c: &CheckResult) -> Outcome {
    outcome(c.passed, format!("{} = {:.3e} (tol {:.0e})", c.name, c.measured, c.tolerance))
}

fn noise_propagation() -> Outcome {
    let start = Instant::now();
    let mc = verify::check_pair_flip_monte_carlo(SEED, PositiveFlipFormula::Corrected, verify::MONTE_CARLO_TRIALS);
    let en = verify::check_pair_flip_enumeration(PositiveFlipFormula::Corrected);
    combine(vec![from_check(&mc), from_check(&en), within(start.elapsed(), Duration::from_secs(30))])
}

fn decomposition_identities() -> Outcome {
    let start = Instant::now();
    let n = verify::IDENTITY_SAMPLES;
    let mut parts: Vec<Outcome> = [
        verify::check_auxiliary_reflection(SEED, n),
        verify::check_unhinged_triplet(SEED, n),
        verify::check_unhinged_marginal(SEED, n),
        verify::check_affine_noisy_risk(SEED, n),
    ]
    .iter()
    .map(from_check)
    .collect();
    parts.push(within(start.elapsed(), Duration::from_secs(5)));
    combine(parts)
}

fn gradients() -> Outcome {
    let start = Instant::now();
    let c = verify::check_gradients(SEED, verify::GRADIENT_CONFIGS);
    combine(vec![from_check(&c), within(start.elapsed(), Duration::from_secs(5))])
}

fn bound_solver() -> Outcome {
    let c = verify::check_bound_solver();
    outcome(c.passed, format!("{}: {}", from_check(&c).detail, c.detail))
}

fn risk_ordering() -> Outcome {
    let start = Instant::now();
    let c = verify::check_risk_ordering(SEED, verify::ORDERING_INSTANCES, verify::ORDERING_PERTURBATIONS);
    combine(vec![
        outcome(c.passed, format!("{} violations; {}", c.measured, c.detail)),
        within(start.elapsed(), Duration::from_secs(120)),
    ])
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn ratios(report: &SweepReport, method: &str, p: f64) -> Vec<f64> {
    report.cells_for(method, p).filter_map(|c| c.ratio).collect()
}

fn sweep_ordering(report: &SweepReport, elapsed: Duration) -> Outcome {
    let low_rand = mean(&ratios(report, "triplet_random", 0.1));
    let low_fixed = mean(&ratios(report, "triplet_fixed", 0.1));
    let high_rand = mean(&ratios(report, "triplet_random", 0.4));
    let high_fixed = mean(&ratios(report, "triplet_fixed", 0.4));
    combine(vec![
        outcome(
            low_rand > 0.9 && low_fixed > 0.9,
            format!("p=0.1 ratio random {low_rand:.4}, fixed {low_fixed:.4} (need > 0.9)"),
        ),
        outcome(
            high_rand > high_fixed,
            format!("p=0.4 ratio random {high_rand:.4} vs fixed {high_fixed:.4} (need random > fixed)"),
        ),
        within(elapsed, Duration::from_secs(600)),
    ])
}

fn skew_ordering(report: &SweepReport, cfg: &SweepConfig) -> Outcome {
    let mut wins = 0;
    let mut total = 0;
    let (mut fixed, mut random) = (Vec::new(), Vec::new());
    for &p in &cfg.noise_rates {
        let f = report.cells_for("triplet_fixed", p);
        let r = report.cells_for("triplet_random", p);
        for (a, b) in f.zip(r) {
            assert_eq!(a.seed, b.seed);
            total += 1;
            wins += usize::from(a.skew.eta > b.skew.eta);
            fixed.push(a.skew.eta);
            random.push(b.skew.eta);
        }
    }
    let (mf, mr) = (mean(&fixed), mean(&random));
    outcome(
        total > 0 && 2 * wins > total && mf > mr,
        format!("eta_fixed > eta_rand in {wins} of {total} paired cells; mean {mf:.3} vs {mr:.3}"),
    )
}

fn initialization_effect(report: &SweepReport) -> Outcome {
    let features = mean(&ratios(report, "marginal_random", 0.3));
    let sphere = mean(&ratios(report, "marginal_random_sphere", 0.3));
    outcome(
        features > sphere,
        format!("p=0.3 marginal ratio from features {features:.4} vs random {sphere:.4}"),
    )
}

fn metrics_sanity(report: &SweepReport) -> Outcome {
    let mut parts = Vec::new();

    let labels: Vec<usize> = (0..200).map(|i| i % 7).collect();
    let same = nmi(&labels, &labels).unwrap();
    parts.push(outcome((same - 1.0).abs() < 1e-12, format!("NMI on identical partitions {same}")));

    let init = initialize_embeddings(100, 8, InitMode::RandomSphere, None, 1).unwrap();
    let doubled: Vec<Vec<f64>> = (0..200).map(|i| init.vector(i / 2).to_vec()).collect();
    let pair_labels: Vec<usize> = (0..200).map(|i| (i / 2) % 10).collect();
    let r = recall_at_k(&EmbeddingState::new(doubled).unwrap(), &pair_labels, &[1]).unwrap()[&1];
    parts.push(outcome(r == 1.0, format!("Rec@1 with duplicated points {r}")));

    let (n, k) = (1000, 10);
    let emb = initialize_embeddings(n, 8, InitMode::RandomSphere, None, 2).unwrap();
    let mut shuffled: Vec<usize> = (0..n).map(|i| i % k).collect();
    shuffled.shuffle(&mut rng::stream(3, 0));
    let r = recall_at_k(&emb, &shuffled, &[1]).unwrap()[&1];
    let chance = (n / k - 1) as f64 / (n - 1) as f64;
    let sigma = (chance * (1.0 - chance) / n as f64).sqrt();
    parts.push(outcome(
        (r - chance).abs() <= 3.0 * sigma,
        format!("shuffled Rec@1 {r:.4} vs chance {chance:.4} +/- {:.4}", 3.0 * sigma),
    ));

    let monotone = report.cells.iter().all(|c| {
        [&c.noisy, &c.topline]
            .iter()
            .all(|e| e.recall_at.values().zip(e.recall_at.values().skip(1)).all(|(a, b)| a <= b))
    });
    parts.push(outcome(monotone, format!("Recall@K nondecreasing over {} sweep cells", report.cells.len())));
    combine(parts)
}

fn determinism() -> Outcome {
    let mut cfg = SweepConfig::standard(100);
    cfg.noise_rates = vec![0.0, 0.3];
    cfg.repeats = 2;
    cfg.skew_rounds = 50;
    cfg.methods.truncate(2);
    let render = || {
        let mut buf = Vec::new();
        run_sweep(&cfg).unwrap().write_csv(&mut buf).unwrap();
        buf
    };
    let (a, b) = (render(), render());
    outcome(a == b && !a.is_empty(), format!("{} CSV bytes, identical: {}", a.len(), a == b))
}

fn main() -> ExitCode {
    let mut results: Vec<(u32, &str, Outcome)> = vec![
        (1, "noise propagation oracle", noise_propagation()),
        (2, "decomposition identities", decomposition_identities()),
        (3, "gradient correctness", gradients()),
        (4, "bound solver", bound_solver()),
        (5, "risk ordering on converged instances", risk_ordering()),
    ];

    let mut cfg = SweepConfig::standard(DEFAULT_SWEEP_STEPS);
    cfg.noise_rates = vec![0.1, 0.3, 0.4];
    cfg.seed = SEED;
    let start = Instant::now();
    let report = run_sweep(&cfg).expect("standard sweep");
    let elapsed = start.elapsed();
    assert!(report.failed.is_empty(), "failed cells: {:?}", report.failed);

    results.push((6, "sweep ordering", sweep_ordering(&report, elapsed)));
    results.push((7, "mining skew ordering", skew_ordering(&report, &cfg)));
    results.push((8, "initialization effect", initialization_effect(&report)));
    results.push((9, "metrics sanity", metrics_sanity(&report)));
    results.push((10, "sweep determinism", determinism()));

    results.sort_by_key(|r| r.0);
    let mut failures = 0;
    for (id, name, o) in &results {
        println!("{} criterion {id} ({name}): {}", if o.passed { "PASS" } else { "FAIL" }, o.detail);
        failures += usize::from(!o.passed);
    }
    println!("{} of {} criteria passed", results.len() - failures, results.len());
    if failures == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
