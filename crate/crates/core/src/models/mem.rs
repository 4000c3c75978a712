//! Metric estimation MLP: predicts the latent degradation metric from the
//! LR latent alone.

use serde::{Deserialize, Serialize};

use super::layers::{init_linear, init_zero_linear, Bind, GAIN_RELU};
use crate::numerics::{Graph, ParamStore, Scalar, Tensor, Var};
use crate::{Error, Result, Rng};

/// Which inputs the MLP reads.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MemFeatures {
    /// Statistics of the LR latent: per-channel mean and standard deviation
    /// plus the channel-averaged latent pooled to `pool×pool`.
    LatentStats,
    /// [`MemFeatures::LatentStats`] followed by per-channel mean absolute
    /// horizontal and vertical differences of the latent.
    LatentStatsGradients,
    /// Per-channel mean and standard deviation plus log power in `bands`
    /// radial frequency bands of the pixel grid unfolded from the latent.
    #[default]
    LatentSpectrum,
    /// Per-channel means of the denoiser bottleneck activations.
    DenoiserBottleneck,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MemConfig {
    pub features: MemFeatures,
    pub latent_channels: usize,
    pub pool: usize,
    /// Space-to-depth factor used to unfold the latent for spectral features.
    pub factor: usize,
    pub bands: usize,
    /// Width of the bottleneck when `features` reads the denoiser.
    pub bottleneck_channels: usize,
    pub hidden: [usize; 2],
}

impl Default for MemConfig {
    fn default() -> Self {
        Self {
            features: MemFeatures::default(),
            latent_channels: 4,
            pool: 8,
            factor: 2,
            bands: 8,
            bottleneck_channels: 64,
            hidden: [128, 64],
        }
    }
}

impl MemConfig {
    pub fn input_dim(&self) -> usize {
        let stats = 2 * self.latent_channels + self.pool * self.pool;
        match self.features {
            MemFeatures::LatentStats => stats,
            MemFeatures::LatentStatsGradients => stats + 2 * self.latent_channels,
            MemFeatures::LatentSpectrum => 2 * self.latent_channels + self.bands,
            MemFeatures::DenoiserBottleneck => self.bottleneck_channels,
        }
    }

    pub fn init(&self, prefix: &str, rng: &mut Rng) -> Result<ParamStore<f32>> {
        self.check()?;
        let [h1, h2] = self.hidden;
        let mut s = ParamStore::new();
        init_linear(&mut s, &format!("{prefix}.l1"), self.input_dim(), h1, GAIN_RELU, rng);
        init_linear(&mut s, &format!("{prefix}.l2"), h1, h2, GAIN_RELU, rng);
        init_linear(&mut s, &format!("{prefix}.l3"), h2, 1, 1.0, rng);
        Ok(s)
    }

    /// All-zero parameters; the network outputs exactly 0.
    pub fn init_zero(&self, prefix: &str) -> Result<ParamStore<f32>> {
        self.check()?;
        let [h1, h2] = self.hidden;
        let mut s = ParamStore::new();
        init_zero_linear(&mut s, &format!("{prefix}.l1"), self.input_dim(), h1);
        init_zero_linear(&mut s, &format!("{prefix}.l2"), h1, h2);
        init_zero_linear(&mut s, &format!("{prefix}.l3"), h2, 1);
        Ok(s)
    }

    fn check(&self) -> Result<()> {
        if self.latent_channels == 0 || self.pool == 0 || self.hidden.contains(&0) || self.bottleneck_channels == 0 {
            return Err(Error::Config("MEM sizes must be positive".into()));
        }
        if self.features == MemFeatures::LatentSpectrum
            && (self.bands == 0 || self.factor == 0 || self.latent_channels % (self.factor * self.factor) != 0)
        {
            return Err(Error::Config(format!(
                "spectral MEM features need bands > 0 and {} latent channels divisible by factor² = {}",
                self.latent_channels,
                self.factor * self.factor
            )));
        }
        Ok(())
    }

    /// Latent feature vector `1×input_dim` for the latent-statistics modes.
    pub fn latent_features<T: Scalar>(&self, z: &Tensor<T>) -> Result<Tensor<T>> {
        let &[c, h, w] = z.shape() else {
            return Err(Error::Dimension(format!("MEM expects a C×H×W latent, got {:?}", z.shape())));
        };
        let pooled = matches!(self.features, MemFeatures::LatentStats | MemFeatures::LatentStatsGradients);
        if c != self.latent_channels || (pooled && (h % self.pool != 0 || w % self.pool != 0)) {
            return Err(Error::Dimension(format!(
                "MEM expects {}×H×W with H, W divisible by {}, got {:?}",
                self.latent_channels,
                self.pool,
                z.shape()
            )));
        }
        if self.features == MemFeatures::DenoiserBottleneck {
            return Err(Error::Contract("bottleneck features come from the denoiser".into()));
        }
        let zd: Vec<f64> = z.data().iter().map(|v| v.as_f64()).collect();
        let plane = h * w;
        let mut f = Vec::with_capacity(self.input_dim());
        let mut stds = Vec::with_capacity(c);
        for ch in 0..c {
            let s = &zd[ch * plane..(ch + 1) * plane];
            let mean = s.iter().sum::<f64>() / plane as f64;
            let var = s.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / plane as f64;
            f.push(mean);
            stds.push(var.sqrt());
        }
        f.extend(stds);
        if self.features == MemFeatures::LatentSpectrum {
            f.extend(band_log_power(&zd, [c, h, w], self.factor, self.bands));
            return Tensor::new([1, f.len()], f.into_iter().map(T::of).collect());
        }
        let (ph, pw) = (h / self.pool, w / self.pool);
        let norm = (c * ph * pw) as f64;
        for by in 0..self.pool {
            for bx in 0..self.pool {
                let mut acc = 0.0;
                for ch in 0..c {
                    for y in by * ph..(by + 1) * ph {
                        for x in bx * pw..(bx + 1) * pw {
                            acc += zd[ch * plane + y * w + x];
                        }
                    }
                }
                f.push(acc / norm);
            }
        }
        if self.features == MemFeatures::LatentStatsGradients {
            for ch in 0..c {
                let s = &zd[ch * plane..(ch + 1) * plane];
                let dx: f64 = (0..h)
                    .flat_map(|y| (0..w - 1).map(move |x| (y, x)))
                    .map(|(y, x)| (s[y * w + x + 1] - s[y * w + x]).abs())
                    .sum::<f64>();
                let dy: f64 = (0..h - 1)
                    .flat_map(|y| (0..w).map(move |x| (y, x)))
                    .map(|(y, x)| (s[(y + 1) * w + x] - s[y * w + x]).abs())
                    .sum::<f64>();
                f.push(dx / plane as f64);
                f.push(dy / plane as f64);
            }
        }
        Tensor::new([1, f.len()], f.into_iter().map(T::of).collect())
    }

    /// Per-channel means of bottleneck activations as a `1×C` row.
    pub fn bottleneck_features<T: Scalar>(&self, g: &mut Graph<'_, T>, bottleneck: Var) -> Result<Var> {
        let shape = g.shape(bottleneck).to_vec();
        if shape.len() != 3 || shape[0] != self.bottleneck_channels {
            return Err(Error::Dimension(format!("bottleneck {shape:?}")));
        }
        let pooled = g.avg_pool(bottleneck, shape[1], shape[2])?;
        g.reshape(pooled, &[1, shape[0]])
    }

    /// Unclamped MLP output (`1×1`) for a feature row; training regresses
    /// this value.
    pub fn forward<'a, T: Scalar>(&self, g: &mut Graph<'a, T>, bind: Bind<'a, T>, prefix: &str, features: Var) -> Result<Var> {
        if g.shape(features) != [1, self.input_dim()] {
            return Err(Error::Dimension(format!(
                "MEM features {:?}, expected [1, {}]",
                g.shape(features),
                self.input_dim()
            )));
        }
        let x = bind.linear(g, &format!("{prefix}.l1"), features)?;
        let x = g.silu(x)?;
        let x = bind.linear(g, &format!("{prefix}.l2"), x)?;
        let x = g.silu(x)?;
        bind.linear(g, &format!("{prefix}.l3"), x)
    }

    /// Estimated metric, clamped to `[−1, 1]`.
    pub fn predict(&self, params: &ParamStore<f32>, prefix: &str, features: Tensor<f32>) -> Result<f64> {
        let mut g = Graph::<f32>::new();
        let x = g.input(features);
        let y = self.forward(&mut g, Bind::frozen(params), prefix, x)?;
        let v = g.value(y).data()[0] as f64;
        if !v.is_finite() {
            return Err(Error::NonFinite("MEM prediction".into()));
        }
        Ok(v.clamp(-1.0, 1.0))
    }
}

/// Unfolds a space-to-depth latent back to its `r·h × r·w` planes.
pub(crate) fn unfold(z: &[f64], [c, h, w]: [usize; 3], r: usize) -> Vec<Vec<f64>> {
    let (ih, iw) = (h * r, w * r);
    (0..c / (r * r))
        .map(|ch| {
            let mut plane = vec![0.0; ih * iw];
            for dy in 0..r {
                for dx in 0..r {
                    let lc = (ch * r + dy) * r + dx;
                    for i in 0..h {
                        for j in 0..w {
                            plane[(i * r + dy) * iw + j * r + dx] = z[(lc * h + i) * w + j];
                        }
                    }
                }
            }
            plane
        })
        .collect()
}

/// Squared DFT magnitudes of a mean-removed `h×w` plane, divided by `h·w`.
pub(crate) fn power_spectrum(plane: &[f64], h: usize, w: usize) -> Vec<f64> {
    let mean = plane.iter().sum::<f64>() / plane.len() as f64;
    let twiddle = |n: usize| -> Vec<(f64, f64)> {
        (0..n)
            .map(|k| {
                let a = -std::f64::consts::TAU * k as f64 / n as f64;
                (a.cos(), a.sin())
            })
            .collect()
    };
    let (tw, th) = (twiddle(w), twiddle(h));
    // rows first, then columns
    let mut rows = vec![(0.0, 0.0); h * w];
    for y in 0..h {
        for u in 0..w {
            let (mut re, mut im) = (0.0, 0.0);
            for x in 0..w {
                let (cr, ci) = tw[(u * x) % w];
                let v = plane[y * w + x] - mean;
                re += v * cr;
                im += v * ci;
            }
            rows[y * w + u] = (re, im);
        }
    }
    let mut power = vec![0.0; h * w];
    for v in 0..h {
        for u in 0..w {
            let (mut re, mut im) = (0.0, 0.0);
            for y in 0..h {
                let (cr, ci) = th[(v * y) % h];
                let (a, b) = rows[y * w + u];
                re += a * cr - b * ci;
                im += a * ci + b * cr;
            }
            power[v * w + u] = (re * re + im * im) / (h * w) as f64;
        }
    }
    power
}

/// Signed DFT frequency of index `k` on an `n`-point grid, in cycles per
/// sample.
fn signed_frequency(k: usize, n: usize) -> f64 {
    let k = if k <= (n - 1) / 2 { k as f64 } else { k as f64 - n as f64 };
    k / n as f64
}

/// Log mean power in `bands` equal-width radial bands spanning
/// `(0, √½]` cycles per pixel, averaged over image channels. DC is skipped.
pub(crate) fn band_log_power(z: &[f64], shape: [usize; 3], r: usize, bands: usize) -> Vec<f64> {
    let [_, h, w] = shape;
    let (ih, iw) = (h * r, w * r);
    let top = 0.5f64.sqrt();
    let mut sums = vec![0.0; bands];
    let mut counts = vec![0usize; bands];
    for plane in unfold(z, shape, r) {
        let p = power_spectrum(&plane, ih, iw);
        for v in 0..ih {
            for u in 0..iw {
                if u == 0 && v == 0 {
                    continue;
                }
                let f = signed_frequency(v, ih).hypot(signed_frequency(u, iw));
                let b = ((f / top * bands as f64) as usize).min(bands - 1);
                sums[b] += p[v * iw + u];
                counts[b] += 1;
            }
        }
    }
    sums.iter()
        .zip(&counts)
        .map(|(s, &n)| (if n == 0 { 0.0 } else { s / n as f64 } + 1e-8).ln())
        .collect()
}
