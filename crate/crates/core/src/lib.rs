//! Online continual learning for streaming sensor time-series.
//!
//! A feature extractor is pre-trained on base activity classes with a joint
//! cross-entropy and supervised contrastive objective, then frozen. During
//! streaming, a small relation-module classifier is retrained from a
//! timestamp-sparse replay buffer of embeddings whenever a new class shows up
//! or a quarter of one class's replay entries has been replaced.
//!
//! Module map:
//!
//! - [`datasets`]: recordings, cleansing, windowing, normalization, scenario
//!   splits, native dataset loaders and the synthetic generator.
//! - [`augment`]: SMOTE balancing and the four time-series augmentations.
//! - [`fe`]: the LSTM-CNN feature extractor, its losses and trainer.
//! - [`relation`]: relation module, episodes, relation loss, classification
//!   and the three-layer MLP ablation classifier.
//! - [`replay`]: the per-class embedding replay buffer.
//! - [`streaming`]: stream plans, the streaming engine, metrics and PCA.
//! - [`config`], [`pipeline`], [`plot`]: the glue behind the command line.

pub mod augment;
pub mod config;
pub mod datasets;
mod error;
pub mod fe;
pub mod nn;
pub mod pipeline;
pub mod plot;
pub mod relation;
pub mod replay;
pub mod streaming;

pub use error::{Error, Result};

/// Activity class identifier.
pub type ClassId = u32;

/// Subject (participant) identifier.
pub type SubjectId = u32;

/// Deterministic RNG used everywhere a seed is accepted.
pub type SeededRng = rand_chacha::ChaCha8Rng;

/// Builds the crate's RNG from a seed.
pub fn seeded_rng(seed: u64) -> SeededRng {
    use rand::SeedableRng;
    SeededRng::seed_from_u64(seed)
}

/// Derives an independent stream seed from a base seed and a salt.
pub(crate) fn derive_seed(seed: u64, salt: u64) -> u64 {
    // splitmix64 finalizer
    let mut z = seed ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
