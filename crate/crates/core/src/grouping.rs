//! Latent degradation metric, metric → timestep bucketing and the
//! degradation-aware sampler for the regularizer timestep.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::numerics::{Scalar, Tensor};
use crate::schedule::Timestep;
use crate::{Error, Result, Rng};

/// Lowest and highest regularizer timesteps the sampler may return.
pub const DAS_MIN: Timestep = 20;
pub const DAS_MAX: Timestep = 980;

/// Upper clamp of the normalized metric is `1 − CLAMP_EPS`, so the cleanest
/// inputs map to the first group instead of the degenerate `t = 0`.
pub const CLAMP_EPS: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum MetricKind {
    #[default]
    Cosine,
    L1,
    Mse,
}

impl MetricKind {
    /// Sign-adjusts a metric so that larger always means cleaner: cosine is
    /// kept, L1 and MSE distances are negated.
    pub fn orient(self, m: MetricValue) -> MetricValue {
        match self {
            MetricKind::Cosine => m,
            MetricKind::L1 | MetricKind::Mse => MetricValue(-m.0),
        }
    }
}

/// Scalar degradation metric between two latents.
#[derive(Clone, Copy, Debug, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MetricValue(pub f64);

impl MetricValue {
    pub fn value(self) -> f64 {
        self.0
    }
}

/// How the metric bounds are taken from the corpus.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode")]
pub enum BoundsMode {
    /// Exact corpus minimum and maximum.
    Extremes,
    /// Linear-interpolated percentiles, e.g. `(1.0, 99.0)`.
    Percentile { low: f64, high: f64 },
}

impl Default for BoundsMode {
    fn default() -> Self {
        BoundsMode::Percentile { low: 1.0, high: 99.0 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroupingConfig {
    /// Number of groups, `1..=4`.
    pub n: usize,
    /// Timestep interval between groups.
    pub k: usize,
    pub m_min: f64,
    pub m_max: f64,
}

impl Default for GroupingConfig {
    fn default() -> Self {
        Self {
            n: 3,
            k: 250,
            m_min: 0.0,
            m_max: 1.0,
        }
    }
}

impl GroupingConfig {
    pub fn new(n: usize, k: usize, m_min: f64, m_max: f64) -> Result<Self> {
        let cfg = Self { n, k, m_min, m_max };
        cfg.validate(crate::schedule::DEFAULT_STEPS)?;
        Ok(cfg)
    }

    pub fn with_bounds(self, (m_min, m_max): (f64, f64)) -> Self {
        Self { m_min, m_max, ..self }
    }

    pub fn validate(&self, steps: usize) -> Result<()> {
        if !(1..=4).contains(&self.n) {
            return Err(Error::Config(format!("group count n = {} outside 1..=4", self.n)));
        }
        if self.k == 0 || self.k * self.n > steps {
            return Err(Error::Config(format!(
                "interval k = {} with n = {} does not fit T = {steps}",
                self.k, self.n
            )));
        }
        if !(self.m_min.is_finite() && self.m_max.is_finite() && self.m_min < self.m_max) {
            return Err(Error::Config(format!(
                "metric bounds [{}, {}] are not increasing",
                self.m_min, self.m_max
            )));
        }
        Ok(())
    }

    /// All timesteps the bucketing can produce, ascending.
    pub fn timesteps(&self) -> Vec<Timestep> {
        (1..=self.n).map(|i| i * self.k).collect()
    }
}

/// Degradation metric between LR and HR latents.
///
/// Cosine is taken over all elements flattened; L1 and MSE are mean
/// absolute / squared differences.
pub fn latent_metric<T: Scalar>(z_l: &Tensor<T>, z_h: &Tensor<T>, kind: MetricKind) -> Result<MetricValue> {
    z_l.expect_same_shape(z_h)?;
    let pairs = z_l.data().iter().zip(z_h.data()).map(|(a, b)| (a.as_f64(), b.as_f64()));
    let n = z_l.numel() as f64;
    let v = match kind {
        MetricKind::Cosine => {
            let (mut dot, mut nl, mut nh) = (0.0, 0.0, 0.0);
            for (a, b) in pairs {
                dot += a * b;
                nl += a * a;
                nh += b * b;
            }
            let (nl, nh) = (nl.sqrt(), nh.sqrt());
            if nl <= 1e-12 || nh <= 1e-12 {
                return Err(Error::Degenerate("cosine metric of a zero-norm latent".into()));
            }
            (dot / (nl * nh)).clamp(-1.0, 1.0)
        }
        MetricKind::L1 => pairs.map(|(a, b)| (a - b).abs()).sum::<f64>() / n,
        MetricKind::Mse => pairs.map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / n,
    };
    Ok(MetricValue(v))
}

/// Maps a metric to its group timestep `k·(n − ⌊n·u⌋)` with
/// `u = (m − m_min)/(m_max − m_min)` clamped to `[0, 1 − ε]`.
pub fn assign_timestep(m: MetricValue, cfg: &GroupingConfig) -> Timestep {
    let u = (m.0 - cfg.m_min) / (cfg.m_max - cfg.m_min);
    let u = if u.is_nan() { 0.0 } else { u.clamp(0.0, 1.0 - CLAMP_EPS) };
    let group = (cfg.n as f64 * u).floor() as usize;
    cfg.k * (cfg.n - group.min(cfg.n - 1))
}

/// Inclusive regularizer window `[max(20, t−k), min(980, t+k)]`.
pub fn das_window(t: Timestep, k: usize) -> (Timestep, Timestep) {
    let lo = t.saturating_sub(k).max(DAS_MIN).min(DAS_MAX);
    let hi = (t + k).min(DAS_MAX).max(DAS_MIN);
    (lo, hi)
}

/// Uniform integer over [`das_window`].
pub fn das_sample(t: Timestep, k: usize, rng: &mut Rng) -> Timestep {
    let (lo, hi) = das_window(t, k);
    rng.random_range(lo..=hi)
}

/// Robust corpus bounds of the metric.
pub fn fit_bounds(metrics: &[MetricValue], mode: BoundsMode) -> Result<(f64, f64)> {
    if metrics.len() < 2 {
        return Err(Error::Degenerate(format!(
            "need at least 2 metric values to fit bounds, got {}",
            metrics.len()
        )));
    }
    let mut v: Vec<f64> = metrics.iter().map(|m| m.0).collect();
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("metric corpus contains a non-finite value".into()));
    }
    v.sort_by(f64::total_cmp);
    let (lo, hi) = match mode {
        BoundsMode::Extremes => (v[0], v[v.len() - 1]),
        BoundsMode::Percentile { low, high } => {
            if !(0.0..=100.0).contains(&low) || !(0.0..=100.0).contains(&high) || low >= high {
                return Err(Error::Config(format!("bad percentile pair ({low}, {high})")));
            }
            (percentile(&v, low), percentile(&v, high))
        }
    };
    if lo >= hi {
        return Err(Error::Degenerate(format!(
            "metric corpus is constant (bounds {lo} .. {hi}); cannot form groups"
        )));
    }
    Ok((lo, hi))
}

/// Linear-interpolated percentile of sorted data.
fn percentile(sorted: &[f64], p: f64) -> f64 {
    let pos = p / 100.0 * (sorted.len() - 1) as f64;
    let i = pos.floor() as usize;
    let frac = pos - i as f64;
    if i + 1 >= sorted.len() {
        sorted[sorted.len() - 1]
    } else {
        sorted[i] + frac * (sorted[i + 1] - sorted[i])
    }
}
