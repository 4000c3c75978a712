//! Synthetic degradation pipeline, corpus synthesis and image file I/O.
//!
//! The pipeline is first-order: blur → area downsample → additive Gaussian
//! noise → optional 8-bit quantization → bilinear upsample back onto the HR
//! grid → clip.

mod corpus;
mod filters;
mod pnm;
pub mod texture;

use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

pub use corpus::{
    load_corpus, read_manifest, synth_corpus, synth_item, synth_pairs, CorpusPair, ManifestRecord, MANIFEST_NAME,
};
pub use filters::{gaussian_blur, gaussian_kernel, resample, Direction};
pub use pnm::{decode_pnm, encode_pnm, load_image, save_image};

use crate::image::Image;
use crate::{rng_from_seed, Error, Result, Rng};

pub const BLUR_RANGE: (f64, f64) = (0.2, 3.0);
pub const NOISE_MAX: f64 = 25.0 / 255.0;
pub const DEFAULT_SCALE: usize = 4;
pub const DEFAULT_PATCH: usize = 32;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DegradationParams {
    pub blur_sigma: f64,
    pub noise_sigma: f64,
    pub scale: usize,
    pub quantize: bool,
}

impl DegradationParams {
    /// Mildest settings of the sampled ranges.
    pub fn minimal(scale: usize) -> Self {
        Self {
            blur_sigma: BLUR_RANGE.0,
            noise_sigma: 0.0,
            scale,
            quantize: false,
        }
    }

    /// Harshest settings of the sampled ranges.
    pub fn maximal(scale: usize) -> Self {
        Self {
            blur_sigma: BLUR_RANGE.1,
            noise_sigma: NOISE_MAX,
            scale,
            quantize: true,
        }
    }

    /// Independent uniform draws over the declared ranges.
    pub fn sample(scale: usize, rng: &mut Rng) -> Self {
        Self {
            blur_sigma: rng.random_range(BLUR_RANGE.0..=BLUR_RANGE.1),
            noise_sigma: rng.random_range(0.0..=NOISE_MAX),
            scale,
            quantize: rng.random_bool(0.5),
        }
    }

    /// Blur 0 (no blur) is accepted alongside the sampled range.
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=BLUR_RANGE.1).contains(&self.blur_sigma) {
            return Err(Error::Config(format!("blur_sigma {} outside [0, 3]", self.blur_sigma)));
        }
        if !(0.0..=NOISE_MAX + 1e-12).contains(&self.noise_sigma) {
            return Err(Error::Config(format!(
                "noise_sigma {} outside [0, 25/255]",
                self.noise_sigma
            )));
        }
        if self.scale == 0 {
            return Err(Error::Config("scale must be positive".into()));
        }
        Ok(())
    }
}

/// HR image with its degraded counterpart on the HR grid.
#[derive(Clone, Debug, PartialEq)]
pub struct PairedSample {
    pub hr: Image,
    pub lr_up: Image,
    pub params: DegradationParams,
    pub seed: u64,
}

/// Runs the degradation pipeline; bit-reproducible for a fixed seed.
pub fn degrade(hr: &Image, params: DegradationParams, seed: u64) -> Result<PairedSample> {
    params.validate()?;
    let (h, w, _) = hr.dims();
    if h % params.scale != 0 || w % params.scale != 0 {
        return Err(Error::Dimension(format!(
            "{h}×{w} image not divisible by scale {}",
            params.scale
        )));
    }
    let mut rng = rng_from_seed(seed);
    let blurred = gaussian_blur(hr, params.blur_sigma);
    let mut lr = resample(&blurred, params.scale, Direction::Down)?;
    if params.noise_sigma > 0.0 {
        for v in lr.data_mut() {
            let n: f64 = rng.sample(StandardNormal);
            *v += (n * params.noise_sigma) as f32;
        }
    }
    if params.quantize {
        lr = lr.map(|v| (v.clamp(0.0, 1.0) * 255.0).round() / 255.0);
    }
    let lr_up = resample(&lr, params.scale, Direction::Up)?.clip_unit();
    Ok(PairedSample {
        hr: hr.clone(),
        lr_up,
        params,
        seed,
    })
}
