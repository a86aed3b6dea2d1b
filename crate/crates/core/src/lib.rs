//! Deep metric learning under sample label noise: pair-wise noise rates,
//! risk decompositions, noise-tolerance bounds, semi-hard mining, and an
//! experiment harness on free unit-norm embeddings.

pub mod datagen;
pub mod domain;
pub mod error;
pub mod harness;
pub mod losses;
pub mod metrics;
pub mod noise;
pub mod optimizer;
pub mod risk;
pub mod rng;
pub mod sampling;
pub mod verify;

pub use domain::{
    EmbeddingState, LabelChannel, LabeledPointSet, LossConfig, LossFamily, Mining, Pair, PairLabel, Triplet,
    TrainingView, D_MAX,
};
pub use error::{Error, Result};
pub use noise::{inject_noise, pair_noise_rates, NoiseSpec, PairNoiseRates};
