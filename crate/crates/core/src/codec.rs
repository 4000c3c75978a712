//! Lossless pixel ↔ latent codec.
//!
//! Encoding is a space-to-depth rearrangement (each `r×r` block of an image
//! channel becomes `r²` latent channels) followed by per-latent-channel
//! standardization `(x − mean) / std`. `mean` is a multiple of `2⁻¹²` and
//! `std` a power of two, so on the `2⁻²⁴` pixel grid (see [`crate::image`])
//! both directions are exact.

use crate::image::Image;
use crate::numerics::{Graph, ParamStore, Scalar, Tensor, Var};
use crate::{Error, Result};

/// Latent features, `(C·r²)×(H/r)×(W/r)`.
pub type Latent<T = f32> = Tensor<T>;

pub const DEFAULT_FACTOR: usize = 2;

#[derive(Clone, Debug, PartialEq)]
pub struct LatentCodec {
    factor: usize,
    image_channels: usize,
    mean: Vec<f32>,
    std: Vec<f32>,
}

impl LatentCodec {
    /// Pure rearrangement (`mean = 0`, `std = 1`).
    pub fn identity(image_channels: usize, factor: usize) -> Result<Self> {
        let n = Self::check_dims(image_channels, factor)?;
        Ok(Self {
            factor,
            image_channels,
            mean: vec![0.0; n],
            std: vec![1.0; n],
        })
    }

    /// Explicit constants; `mean` is rounded to a multiple of `2⁻¹²` and
    /// `std` to the nearest power of two.
    pub fn with_stats(image_channels: usize, factor: usize, mean: &[f64], std: &[f64]) -> Result<Self> {
        let n = Self::check_dims(image_channels, factor)?;
        if mean.len() != n || std.len() != n {
            return Err(Error::Dimension(format!(
                "codec needs {n} channel statistics, got {}/{}",
                mean.len(),
                std.len()
            )));
        }
        if std.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
            return Err(Error::Config("codec std must be positive".into()));
        }
        Ok(Self {
            factor,
            image_channels,
            mean: mean.iter().map(|&m| round_mean(m)).collect(),
            std: std.iter().map(|&s| round_pow2(s)).collect(),
        })
    }

    /// Per-latent-channel statistics over a set of images.
    pub fn fit<'i>(images: impl IntoIterator<Item = &'i Image>, factor: usize) -> Result<Self> {
        let mut sums: Vec<(f64, f64, usize)> = Vec::new();
        let mut channels = None;
        let ident = |c| Self::identity(c, factor);
        let mut codec: Option<LatentCodec> = None;
        for img in images {
            if channels.is_none() {
                channels = Some(img.channels());
                codec = Some(ident(img.channels())?);
                sums = vec![(0.0, 0.0, 0); img.channels() * factor * factor];
            }
            let z = codec.as_ref().expect("set above").encode(img)?;
            let plane = z.numel() / sums.len();
            for (ch, vals) in z.data().chunks(plane).enumerate() {
                for &v in vals {
                    let v = v as f64;
                    sums[ch].0 += v;
                    sums[ch].1 += v * v;
                    sums[ch].2 += 1;
                }
            }
        }
        let Some(channels) = channels else {
            return Err(Error::Degenerate("cannot fit codec on an empty image set".into()));
        };
        let mean: Vec<f64> = sums.iter().map(|s| s.0 / s.2 as f64).collect();
        let std: Vec<f64> = sums
            .iter()
            .zip(&mean)
            .map(|(s, m)| (s.1 / s.2 as f64 - m * m).max(0.0).sqrt().max(1.0 / 256.0))
            .collect();
        Self::with_stats(channels, factor, &mean, &std)
    }

    fn check_dims(image_channels: usize, factor: usize) -> Result<usize> {
        if image_channels == 0 || factor == 0 {
            return Err(Error::Config(format!(
                "codec needs positive channels and factor, got {image_channels}/{factor}"
            )));
        }
        Ok(image_channels * factor * factor)
    }

    pub fn factor(&self) -> usize {
        self.factor
    }

    pub fn image_channels(&self) -> usize {
        self.image_channels
    }

    pub fn latent_channels(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &[f32] {
        &self.mean
    }

    pub fn std(&self) -> &[f32] {
        &self.std
    }

    /// Latent shape for an `h×w` image.
    pub fn latent_shape(&self, h: usize, w: usize) -> [usize; 3] {
        [self.latent_channels(), h / self.factor, w / self.factor]
    }

    pub fn encode(&self, x: &Image) -> Result<Latent> {
        let (h, w, c) = x.dims();
        let r = self.factor;
        if h % r != 0 || w % r != 0 {
            return Err(Error::Dimension(format!("{h}×{w} image not divisible by codec factor {r}")));
        }
        if c != self.image_channels {
            return Err(Error::Dimension(format!(
                "codec expects {} image channels, got {c}",
                self.image_channels
            )));
        }
        let (lh, lw) = (h / r, w / r);
        let mut out = vec![0.0f32; h * w * c];
        for ch in 0..c {
            for dy in 0..r {
                for dx in 0..r {
                    let lc = (ch * r + dy) * r + dx;
                    let (m, inv) = (self.mean[lc], 1.0 / self.std[lc]);
                    for i in 0..lh {
                        for j in 0..lw {
                            out[(lc * lh + i) * lw + j] = (x.get(i * r + dy, j * r + dx, ch) - m) * inv;
                        }
                    }
                }
            }
        }
        Tensor::new([c * r * r, lh, lw], out)
    }

    pub fn decode(&self, z: &Latent) -> Result<Image> {
        let r = self.factor;
        let &[lc_n, lh, lw] = z.shape() else {
            return Err(Error::Dimension(format!("latent must be C×H×W, got {:?}", z.shape())));
        };
        if lc_n % (r * r) != 0 || lc_n != self.latent_channels() {
            return Err(Error::Dimension(format!(
                "latent has {lc_n} channels, codec expects {}",
                self.latent_channels()
            )));
        }
        let c = self.image_channels;
        let mut img = Image::filled(lh * r, lw * r, c, 0.0);
        let d = z.data();
        for ch in 0..c {
            for dy in 0..r {
                for dx in 0..r {
                    let lc = (ch * r + dy) * r + dx;
                    let (m, s) = (self.mean[lc], self.std[lc]);
                    for i in 0..lh {
                        for j in 0..lw {
                            img.set(i * r + dy, j * r + dx, ch, d[(lc * lh + i) * lw + j] * s + m);
                        }
                    }
                }
            }
        }
        Ok(img)
    }

    /// Differentiable decode to a `C×H×W` image tensor.
    pub fn decode_var<T: Scalar>(&self, g: &mut Graph<'_, T>, z: Var) -> Result<Var> {
        let scale = Tensor::from_fn([self.latent_channels()], |i| T::of(self.std[i] as f64 - 1.0));
        let shift = Tensor::from_fn([self.latent_channels()], |i| T::of(self.mean[i] as f64));
        let scale = g.input(scale);
        let shift = g.input(shift);
        let y = g.film(z, scale, shift)?;
        g.depth_to_space(y, self.factor)
    }

    /// Stores the codec under `prefix` (`factor`, `channels`, `mean`, `std`).
    pub fn write_params(&self, prefix: &str, store: &mut ParamStore<f32>) {
        store.insert(format!("{prefix}factor"), Tensor::scalar(self.factor as f32));
        store.insert(format!("{prefix}channels"), Tensor::scalar(self.image_channels as f32));
        store.insert(
            format!("{prefix}mean"),
            Tensor::new([self.mean.len()], self.mean.clone()).expect("non-empty"),
        );
        store.insert(
            format!("{prefix}std"),
            Tensor::new([self.std.len()], self.std.clone()).expect("non-empty"),
        );
    }

    pub fn read_params(prefix: &str, store: &ParamStore<f32>) -> Result<Self> {
        let factor = store.get(&format!("{prefix}factor"))?.item()? as usize;
        let channels = store.get(&format!("{prefix}channels"))?.item()? as usize;
        let n = Self::check_dims(channels, factor)?;
        let mean = store.get(&format!("{prefix}mean"))?.data().to_vec();
        let std = store.get(&format!("{prefix}std"))?.data().to_vec();
        if mean.len() != n || std.len() != n {
            return Err(Error::Dimension("stored codec statistics have the wrong length".into()));
        }
        Ok(Self {
            factor,
            image_channels: channels,
            mean,
            std,
        })
    }
}

fn round_mean(m: f64) -> f32 {
    ((m.clamp(0.0, 1.0) * 4096.0).round() / 4096.0) as f32
}

fn round_pow2(s: f64) -> f32 {
    2f64.powi(s.log2().round().clamp(-12.0, 12.0) as i32) as f32
}
