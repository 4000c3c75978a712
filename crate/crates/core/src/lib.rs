//! One-step diffusion super-resolution whose generation strength is steered
//! by a discrete timestep chosen from a latent degradation metric.
//!
//! The crate is organised bottom-up:
//!
//! * [`numerics`]: dense tensors and a tape-based reverse-mode differentiator.
//! * [`schedule`]: the variance schedule, forward noising, ancestral and
//!   one-step restoration.
//! * [`image`]: pixel-domain images.
//! * [`codec`]: an exactly invertible pixel ↔ latent mapping.
//! * [`grouping`]: latent metric, metric → timestep bucketing and the
//!   degradation-aware regularizer timestep sampler.
//! * [`degrade`]: synthetic degradation pipeline, corpus synthesis and
//!   PGM/PPM I/O.
//! * [`models`]: denoiser, visual prompt encoder, metric estimator.
//! * [`trainer`]: optimizer, training loops and checkpoints.
//! * [`quality`]: PSNR, SSIM, sharpness and Spearman correlation.
//! * [`inference`]: realism selection and batch evaluation.
//! * [`cli`]: the `rcod` command line.

pub mod cli;
pub mod codec;
pub mod degrade;
pub mod error;
pub mod grouping;
pub mod image;
pub mod inference;
pub mod models;
pub mod numerics;
pub mod par;
pub mod quality;
pub mod schedule;
pub mod trainer;

pub use error::{Error, Result};
pub use numerics::{Graph, ParamStore, Scalar, Tensor, Var};

/// Deterministic RNG used everywhere in the crate.
pub type Rng = rand_chacha::ChaCha8Rng;

/// Builds the crate RNG from a 64-bit seed.
pub fn rng_from_seed(seed: u64) -> Rng {
    use rand::SeedableRng;
    Rng::seed_from_u64(seed)
}

/// SplitMix64 finalizer, used to derive independent per-item seeds.
pub fn mix_seed(a: u64, b: u64) -> u64 {
    let mut z = a ^ b.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(0x632B_E59B_D9B4_E019);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
