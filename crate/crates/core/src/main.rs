use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde_json::json;

use embedding_noise::datagen::{generate, SynthSpec};
use embedding_noise::harness::{emit_report, run_sweep, SweepConfig, DEFAULT_SWEEP_STEPS};
use embedding_noise::metrics::{evaluate, DEFAULT_KMEANS_RESTARTS};
use embedding_noise::noise::{monte_carlo_pair_noise, pair_noise_rates, standard_error};
use embedding_noise::optimizer::{initialize_embeddings, train, InitMode, TrainConfig, DEFAULT_LEARNING_RATE};
use embedding_noise::risk::{marginal_asymptotic_bound, solve_marginal_bound, solve_triplet_bound, triplet_asymptotic_bound};
use embedding_noise::sampling::MinibatchSpec;
use embedding_noise::verify::run_all;
use embedding_noise::{inject_noise, EmbeddingState, LabeledPointSet, LossConfig, Mining, NoiseSpec, Result};

#[derive(Parser)]
#[command(name = "embedding-noise", version, about = "Label noise in triplet and marginal embedding losses")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum LossArg {
    Triplet,
    Marginal,
}

#[derive(Clone, Copy, ValueEnum)]
enum MiningArg {
    Random,
    Fixed,
    Exhaustive,
}

#[derive(Clone, Copy, ValueEnum)]
enum InitArg {
    Random,
    Features,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic clustered dataset.
    Gen {
        #[arg(long = "K", default_value_t = 10)]
        num_classes: usize,
        #[arg(long, default_value_t = 50)]
        per_class: usize,
        #[arg(long, default_value_t = 16)]
        d: usize,
        #[arg(long, default_value_t = 1.0)]
        spread: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Inject uniform label noise at this rate.
        #[arg(long, default_value_t = 0.0)]
        p: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Pair flip rates for a sample noise rate.
    NoiseCalc {
        #[arg(long)]
        p: f64,
        #[arg(long = "K")]
        num_classes: usize,
        /// Also simulate this many positive and negative pairs.
        #[arg(long)]
        trials: Option<u64>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Largest tolerated noise rate for a mining skew.
    Bound {
        #[arg(long, value_enum)]
        loss: LossArg,
        #[arg(long = "K")]
        num_classes: usize,
        #[arg(long, default_value_t = 1.0)]
        eta: f64,
        #[arg(long, default_value_t = 1.0)]
        gamma: f64,
        /// Solve the finite-K condition instead of reporting the large-K limit.
        #[arg(long)]
        exact: bool,
    },
    /// Train embeddings on a dataset's observed labels.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum, default_value = "triplet")]
        loss: LossArg,
        #[arg(long, value_enum, default_value = "random")]
        mining: MiningArg,
        #[arg(long, value_enum, default_value = "random")]
        init: InitArg,
        #[arg(long, default_value_t = 0.2)]
        lambda: f64,
        #[arg(long, default_value_t = 16)]
        d: usize,
        #[arg(long, default_value_t = DEFAULT_SWEEP_STEPS)]
        steps: usize,
        #[arg(long, default_value_t = DEFAULT_LEARNING_RATE)]
        lr: f64,
        #[arg(long, default_value_t = 12)]
        classes_per_batch: usize,
        #[arg(long, default_value_t = 5)]
        samples_per_class: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Per-step training log as CSV.
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Evaluate an embedding against a dataset's true labels.
    Eval {
        #[arg(long)]
        embedding: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "1,10")]
        ks: Vec<usize>,
        #[arg(long, default_value_t = DEFAULT_KMEANS_RESTARTS)]
        restarts: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Print the standard sweep config as JSON.
    DefaultConfig,
    /// Run a noise-rate sweep from a JSON config.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the self-check suite.
    Verify {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn print_json(value: &impl serde::Serialize) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Gen {
            num_classes,
            per_class,
            d,
            spread,
            seed,
            p,
            out,
        } => {
            let mut set = generate(&SynthSpec {
                num_classes,
                per_class,
                d,
                spread,
                seed,
            })?;
            if p > 0.0 {
                set = inject_noise(&set, &NoiseSpec::new(p, num_classes, seed)?)?;
            }
            match out {
                Some(path) => set.write_json(path)?,
                None => println!("{}", set.to_json()?),
            }
        }
        Command::NoiseCalc {
            p,
            num_classes,
            trials,
            seed,
        } => {
            let spec = NoiseSpec::new(p, num_classes, seed)?;
            let closed = pair_noise_rates(&spec)?;
            let mut out = json!({ "p": p, "K": num_classes, "q_neg": closed.q_neg, "q_pos": closed.q_pos });
            if let Some(trials) = trials {
                let mc = monte_carlo_pair_noise(&spec, trials)?;
                out["monte_carlo"] = json!({
                    "trials": trials,
                    "q_neg": mc.q_neg,
                    "q_pos": mc.q_pos,
                    "q_neg_se": standard_error(mc.q_neg, trials),
                    "q_pos_se": standard_error(mc.q_pos, trials),
                });
            }
            print_json(&out)?;
        }
        Command::Bound {
            loss,
            num_classes,
            eta,
            gamma,
            exact,
        } => {
            let out = match (loss, exact) {
                (LossArg::Triplet, true) => {
                    let r = solve_triplet_bound(num_classes, eta)?;
                    json!({ "p_star": r.p_star, "asymptotic": r.asymptotic, "exact": r.exact, "method": r.method, "diagnostic": r.diagnostic })
                }
                (LossArg::Marginal, true) => {
                    let r = solve_marginal_bound(num_classes, gamma)?;
                    json!({ "p_star": r.p_star, "asymptotic": r.asymptotic, "exact": r.exact, "method": r.method, "diagnostic": r.diagnostic })
                }
                (LossArg::Triplet, false) => {
                    let a = triplet_asymptotic_bound(eta);
                    json!({ "p_star": a, "asymptotic": a, "exact": false })
                }
                (LossArg::Marginal, false) => {
                    let a = marginal_asymptotic_bound(gamma);
                    json!({ "p_star": a, "asymptotic": a, "exact": false })
                }
            };
            print_json(&out)?;
        }
        Command::Train {
            data,
            loss,
            mining,
            init,
            lambda,
            d,
            steps,
            lr,
            classes_per_batch,
            samples_per_class,
            seed,
            out,
            log,
        } => {
            let set = LabeledPointSet::read_json(data)?;
            let mining = match mining {
                MiningArg::Random => Mining::RandomSemiHard,
                MiningArg::Fixed => Mining::FixedSemiHard,
                MiningArg::Exhaustive => Mining::Exhaustive,
            };
            let loss = match loss {
                LossArg::Triplet => LossConfig::triplet(mining),
                LossArg::Marginal => LossConfig::marginal(mining),
            };
            let mode = match init {
                InitArg::Random => InitMode::RandomSphere,
                InitArg::Features => InitMode::FromFeatures { lambda },
            };
            let d = set.features().and_then(|f| f.first()).map_or(d, Vec::len);
            let start = initialize_embeddings(set.n(), d, mode, set.features(), seed)?;
            let cfg = TrainConfig {
                learning_rate: lr,
                minibatch: MinibatchSpec {
                    classes_per_batch,
                    samples_per_class,
                    seed,
                },
                ..TrainConfig::new(steps, loss, seed)
            };
            let (emb, train_log) = train(&set.training_view(), &start, &cfg)?;
            emb.write_json(out)?;
            if let Some(path) = log {
                train_log.write_csv(fs::File::create(path)?)?;
            }
        }
        Command::Eval {
            embedding,
            data,
            ks,
            restarts,
            seed,
        } => {
            let emb = EmbeddingState::read_json(embedding)?;
            let set = LabeledPointSet::read_json(data)?;
            print_json(&evaluate(&emb, set.true_labels(), set.num_classes(), &ks, restarts, seed)?)?;
        }
        Command::DefaultConfig => print_json(&SweepConfig::standard(DEFAULT_SWEEP_STEPS))?,
        Command::Sweep { config, out } => {
            let cfg = SweepConfig::read_json(config)?;
            let report = run_sweep(&cfg)?;
            emit_report(&report, &out)?;
            for f in &report.failed {
                eprintln!("cell failed: {} p={} seed={}: {}", f.method, f.p, f.seed, f.error);
            }
            if !report.failed.is_empty() {
                return Ok(ExitCode::FAILURE);
            }
        }
        Command::Verify { seed, out } => {
            let report = run_all(seed);
            let text = serde_json::to_string_pretty(&report)?;
            match out {
                Some(path) => fs::write(path, text)?,
                None => println!("{text}"),
            }
            if !report.all_passed {
                return Ok(ExitCode::FAILURE);
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
