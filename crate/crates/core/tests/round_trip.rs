use embedding_noise::datagen::{generate, SynthSpec};
use embedding_noise::harness::{emit_report, read_csv_rows, run_sweep, SweepConfig, CELLS_FILE};
use embedding_noise::optimizer::{initialize_embeddings, train, InitMode, TrainConfig};
use embedding_noise::sampling::{MinibatchSpec, SelectionLog};
use embedding_noise::{inject_noise, EmbeddingState, LabeledPointSet, LossConfig, Mining, NoiseSpec};

fn small_spec(seed: u64) -> SynthSpec {
    SynthSpec {
        num_classes: 5,
        per_class: 8,
        d: 4,
        spread: 2.0,
        seed,
    }
}

fn small_sweep() -> SweepConfig {
    let mut cfg = SweepConfig::standard(30);
    cfg.noise_rates = vec![0.0, 0.3];
    cfg.repeats = 2;
    cfg.data = small_spec(0);
    cfg.train.minibatch = MinibatchSpec {
        classes_per_batch: 4,
        samples_per_class: 4,
        seed: 0,
    };
    cfg.skew_rounds = 10;
    cfg.kmeans_restarts = 2;
    cfg
}

#[test]
fn dataset_json_round_trip() {
    let set = inject_noise(&generate(&small_spec(3)).unwrap(), &NoiseSpec::new(0.4, 5, 1).unwrap()).unwrap();
    let back = LabeledPointSet::from_json(&set.to_json().unwrap()).unwrap();
    assert_eq!(back, set);

    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("set.json");
    set.write_json(&file).unwrap();
    assert_eq!(LabeledPointSet::read_json(&file).unwrap(), set);
}

#[test]
fn embedding_json_round_trip_is_exact() {
    let emb = initialize_embeddings(30, 7, InitMode::RandomSphere, None, 11).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("emb.json");
    emb.write_json(&file).unwrap();
    assert_eq!(EmbeddingState::read_json(&file).unwrap(), emb);
}

#[test]
fn selection_log_csv_round_trip() {
    let set = generate(&small_spec(5)).unwrap();
    let init = initialize_embeddings(set.n(), 4, InitMode::RandomSphere, None, 5).unwrap();
    let mut cfg = TrainConfig::new(20, LossConfig::triplet(Mining::RandomSemiHard), 5);
    cfg.minibatch = MinibatchSpec {
        classes_per_batch: 4,
        samples_per_class: 4,
        seed: 5,
    };
    let (_, log) = train(&set.training_view(), &init, &cfg).unwrap();
    assert!(log.mining.negatives.total_selected() > 0);
    let mut buf = Vec::new();
    log.mining.negatives.write_csv(&mut buf).unwrap();
    let back = SelectionLog::read_csv(buf.as_slice()).unwrap();
    assert_eq!(back.selected, log.mining.negatives.selected);
}

#[test]
fn sweep_csv_round_trip_and_determinism() {
    let cfg = small_sweep();
    let report = run_sweep(&cfg).unwrap();
    assert!(report.failed.is_empty());

    let dir = tempfile::tempdir().unwrap();
    emit_report(&report, dir.path().join("a")).unwrap();
    emit_report(&run_sweep(&cfg).unwrap(), dir.path().join("b")).unwrap();
    let a = std::fs::read(dir.path().join("a").join(CELLS_FILE)).unwrap();
    let b = std::fs::read(dir.path().join("b").join(CELLS_FILE)).unwrap();
    assert_eq!(a, b);

    let rows = read_csv_rows(a.as_slice()).unwrap();
    assert_eq!(rows, report.rows());

    let json = serde_json::to_string(&cfg).unwrap();
    assert_eq!(SweepConfig::from_json(&json).unwrap(), cfg);
}

#[test]
fn sweep_is_independent_of_worker_count() {
    let cfg = small_sweep();
    let serial = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap().install(|| run_sweep(&cfg).unwrap());
    let parallel = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap().install(|| run_sweep(&cfg).unwrap());
    assert_eq!(serial, parallel);
}

#[test]
fn training_is_deterministic_and_ignores_true_labels() {
    let clean = generate(&small_spec(8)).unwrap();
    let noisy = inject_noise(&clean, &NoiseSpec::new(0.3, 5, 2).unwrap()).unwrap();
    let relabelled = LabeledPointSet::new(5, vec![0; noisy.n()], noisy.observed_labels().to_vec()).unwrap();
    let init = initialize_embeddings(noisy.n(), 4, InitMode::FromFeatures { lambda: 0.2 }, clean.features(), 1).unwrap();
    let mut cfg = TrainConfig::new(40, LossConfig::marginal(Mining::FixedSemiHard), 9);
    cfg.minibatch = MinibatchSpec {
        classes_per_batch: 4,
        samples_per_class: 4,
        seed: 9,
    };
    let (a, _) = train(&noisy.training_view(), &init, &cfg).unwrap();
    let (b, _) = train(&noisy.training_view(), &init, &cfg).unwrap();
    let (c, _) = train(&relabelled.training_view(), &init, &cfg).unwrap();
    assert_eq!(a, b);
    assert_eq!(a, c);
}
