//! Variance schedule, forward noising and the reverse/one-step restorations.
//!
//! `alpha(t)` is the cumulative product `∏_{s≤t} √(1−β_s)` (the square root
//! of the usual ᾱ), and `sigma(t) = √(1 − alpha(t)²)`, so that
//! `z_t = alpha(t)·z_0 + sigma(t)·ε`.

use rand::Rng as _;
use rand_distr::StandardNormal;

use crate::numerics::{Scalar, Tensor};
use crate::{Error, Result, Rng};

pub const DEFAULT_STEPS: usize = 1000;
pub const DEFAULT_BETA_START: f64 = 1e-4;
pub const DEFAULT_BETA_END: f64 = 0.02;

/// Discrete timestep in `1..=T`.
pub type Timestep = usize;

/// Per-timestep tables, indexed by `t ∈ 1..=T`. Index 0 holds the clean
/// state (`alpha = 1`, `sigma = 0`).
#[derive(Clone, Debug)]
pub struct Schedule {
    steps: usize,
    beta: Vec<f64>,
    alpha: Vec<f64>,
    sigma: Vec<f64>,
}

/// Output of [`Schedule::forward_diffuse`].
#[derive(Clone, Debug)]
pub struct NoisySample<T: Scalar = f32> {
    pub z_t: Tensor<T>,
    pub t: Timestep,
    pub eps: Tensor<T>,
}

impl Default for Schedule {
    fn default() -> Self {
        Self::linear(DEFAULT_STEPS, DEFAULT_BETA_START, DEFAULT_BETA_END)
            .expect("default schedule is valid")
    }
}

impl Schedule {
    /// Linear β from `beta_start` to `beta_end` over `steps` timesteps.
    pub fn linear(steps: usize, beta_start: f64, beta_end: f64) -> Result<Self> {
        if steps < 2 {
            return Err(Error::Config(format!("schedule needs T ≥ 2, got {steps}")));
        }
        if !(0.0 < beta_start && beta_start <= beta_end && beta_end < 1.0) {
            return Err(Error::Config(format!(
                "schedule needs 0 < beta_start ≤ beta_end < 1, got [{beta_start}, {beta_end}]"
            )));
        }
        let mut beta = vec![0.0; steps + 1];
        let mut alpha = vec![1.0; steps + 1];
        let mut sigma = vec![0.0; steps + 1];
        for t in 1..=steps {
            let frac = (t - 1) as f64 / (steps - 1) as f64;
            beta[t] = beta_start + (beta_end - beta_start) * frac;
            alpha[t] = alpha[t - 1] * (1.0 - beta[t]).sqrt();
            sigma[t] = (1.0 - alpha[t] * alpha[t]).sqrt();
        }
        let s = Self {
            steps,
            beta,
            alpha,
            sigma,
        };
        s.validate()?;
        Ok(s)
    }

    fn validate(&self) -> Result<()> {
        for t in 1..=self.steps {
            let b = self.beta[t];
            if !(b > 0.0 && b < 1.0) {
                return Err(Error::Config(format!("beta[{t}] = {b} outside (0, 1)")));
            }
            if t > 1 {
                if b < self.beta[t - 1] {
                    return Err(Error::Config(format!("beta decreases at t = {t}")));
                }
                if self.alpha[t] >= self.alpha[t - 1] || self.sigma[t] <= self.sigma[t - 1] {
                    return Err(Error::Config(format!("alpha/sigma not strictly monotone at t = {t}")));
                }
            }
            let id = self.alpha[t].powi(2) + self.sigma[t].powi(2);
            if (id - 1.0).abs() > 1e-6 {
                return Err(Error::Config(format!("alpha² + sigma² = {id} at t = {t}")));
            }
        }
        Ok(())
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn check_t(&self, t: Timestep) -> Result<()> {
        if t == 0 || t > self.steps {
            return Err(Error::Contract(format!("timestep {t} outside [1, {}]", self.steps)));
        }
        Ok(())
    }

    pub fn beta(&self, t: Timestep) -> f64 {
        self.beta[t]
    }

    pub fn alpha(&self, t: Timestep) -> f64 {
        self.alpha[t]
    }

    pub fn sigma(&self, t: Timestep) -> f64 {
        self.sigma[t]
    }

    /// One Markov step `√(1−β_t)·z_{t−1} + √β_t·ξ`.
    pub fn forward_step<T: Scalar>(&self, z_prev: &Tensor<T>, t: Timestep, rng: &mut Rng) -> Result<Tensor<T>> {
        self.check_t(t)?;
        let keep = T::of((1.0 - self.beta[t]).sqrt());
        let noise = T::of(self.beta[t].sqrt());
        Ok(z_prev.map(|z| {
            let xi: f64 = rng.sample(StandardNormal);
            keep * z + noise * T::of(xi)
        }))
    }

    /// Closed-form marginal `z_t = alpha(t)·z_0 + sigma(t)·ε` with fresh ε.
    pub fn forward_diffuse<T: Scalar>(&self, z0: &Tensor<T>, t: Timestep, rng: &mut Rng) -> Result<NoisySample<T>> {
        self.check_t(t)?;
        let eps = Tensor::randn(z0.shape().to_vec(), 1.0, rng);
        let z_t = self.diffuse_with(z0, &eps, t)?;
        Ok(NoisySample { z_t, t, eps })
    }

    /// `alpha(t)·z_0 + sigma(t)·eps` for a given noise tensor.
    pub fn diffuse_with<T: Scalar>(&self, z0: &Tensor<T>, eps: &Tensor<T>, t: Timestep) -> Result<Tensor<T>> {
        self.check_t(t)?;
        let (a, s) = (T::of(self.alpha[t]), T::of(self.sigma[t]));
        z0.zip_map(eps, |z, e| a * z + s * e)
    }

    /// DDPM ancestral step from `z_t` to `z_{t−1}` given predicted noise.
    /// The final step (`t = 1`) adds no noise.
    pub fn reverse_step<T: Scalar>(
        &self,
        z_t: &Tensor<T>,
        eps_pred: &Tensor<T>,
        t: Timestep,
        rng: &mut Rng,
    ) -> Result<Tensor<T>> {
        self.check_t(t)?;
        let b = self.beta[t];
        let coef = T::of(b / self.sigma[t]);
        let inv_keep = T::of(1.0 / (1.0 - b).sqrt());
        let mut mean = z_t.zip_map(eps_pred, |z, e| (z - coef * e) * inv_keep)?;
        if t > 1 {
            let post_var = self.sigma[t - 1].powi(2) / self.sigma[t].powi(2) * b;
            let std = post_var.sqrt();
            for v in mean.data_mut() {
                let xi: f64 = rng.sample(StandardNormal);
                *v += T::of(std * xi);
            }
        }
        Ok(mean)
    }

    /// Single-step restoration `(z_in − sigma(t)·ε̂) / alpha(t)`.
    pub fn one_step_restore<T: Scalar>(&self, z_in: &Tensor<T>, eps_pred: &Tensor<T>, t: Timestep) -> Result<Tensor<T>> {
        self.check_t(t)?;
        let (a, s) = self.restore_coefficients(t)?;
        let (a, s) = (T::of(a), T::of(s));
        z_in.zip_map(eps_pred, |z, e| (z - s * e) / a)
    }

    /// `(alpha(t), sigma(t))`, rejecting timesteps whose alpha vanishes.
    pub fn restore_coefficients(&self, t: Timestep) -> Result<(f64, f64)> {
        self.check_t(t)?;
        let a = self.alpha[t];
        if a <= 1e-6 {
            return Err(Error::NumericRange(format!("alpha({t}) = {a:e} is too small to invert")));
        }
        Ok((a, self.sigma[t]))
    }
}
