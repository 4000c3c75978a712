//! Neural components: the prompt-conditioned student denoiser, the teacher
//! used by the distillation regularizer, and the metric estimator.

mod denoiser;
pub mod embed;
pub mod layers;
mod mem;
mod prompt;

use serde::{Deserialize, Serialize};

pub use denoiser::{DenoiserConfig, DenoiserOutput, GN_EPS};
pub use layers::Bind;
pub use mem::{MemConfig, MemFeatures};
pub use prompt::PromptConfig;

use crate::numerics::{Graph, ParamStore, Scalar, Var};
use crate::schedule::{Schedule, Timestep};
use crate::{Error, Result, Rng};

pub const STUDENT_PREFIX: &str = "den";
pub const PROMPT_PREFIX: &str = "prompt";
pub const TEACHER_PREFIX: &str = "teacher";
pub const MEM_PREFIX: &str = "mem";

/// Denoiser with cross-attention plus the prompt encoder feeding it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StudentConfig {
    pub denoiser: DenoiserConfig,
    pub prompt: PromptConfig,
    /// Adds `(1 − α_t)/σ_t · z_in` to the network output so that a zero
    /// network restores to the input unchanged.
    pub input_skip: bool,
}

impl Default for StudentConfig {
    fn default() -> Self {
        Self {
            denoiser: DenoiserConfig::default(),
            prompt: PromptConfig::default(),
            input_skip: true,
        }
    }
}

/// Graph handles produced by [`StudentConfig::forward`].
#[derive(Clone, Copy, Debug)]
pub struct StudentOutput {
    pub eps: Var,
    pub z_hat: Var,
    pub tokens: Var,
    pub bottleneck: Var,
}

impl StudentConfig {
    pub fn validate(&self) -> Result<()> {
        self.denoiser.validate()?;
        if !self.denoiser.attention {
            return Err(Error::Config("the student denoiser needs attention".into()));
        }
        if self.prompt.token_dim != self.denoiser.token_dim {
            return Err(Error::Config(format!(
                "prompt token dim {} differs from denoiser token dim {}",
                self.prompt.token_dim, self.denoiser.token_dim
            )));
        }
        Ok(())
    }

    pub fn init(&self, rng: &mut Rng) -> Result<ParamStore<f32>> {
        self.validate()?;
        let mut s = self.denoiser.init(STUDENT_PREFIX, rng)?;
        for (k, v) in self.prompt.init(PROMPT_PREFIX, rng)?.iter() {
            s.insert(k, v.clone());
        }
        Ok(s)
    }

    /// Records ε̂ and the one-step restoration
    /// `ẑ_H = (z_in − σ_t·ε̂)/α_t` for a single latent and its LR image.
    pub fn forward<'a, T: Scalar>(
        &self,
        g: &mut Graph<'a, T>,
        bind: Bind<'a, T>,
        schedule: &Schedule,
        z_in: Var,
        lr_image: Var,
        t: Timestep,
    ) -> Result<StudentOutput> {
        let (alpha, sigma) = schedule.restore_coefficients(t)?;
        let tokens = self.prompt.forward(g, bind, PROMPT_PREFIX, lr_image)?;
        let out = self.denoiser.forward(g, bind, STUDENT_PREFIX, z_in, t, Some(tokens))?;
        let (z_hat, eps) = if self.input_skip {
            // ε̂ = net + c·z_in with c = (1 − α)/σ, so ẑ = z_in − (σ/α)·net.
            let c = g.scale(z_in, T::of((1.0 - alpha) / sigma))?;
            let eps = g.add(out.eps, c)?;
            let step = g.scale(out.eps, T::of(sigma / alpha))?;
            (g.sub(z_in, step)?, eps)
        } else {
            let scaled_in = g.scale(z_in, T::of(1.0 / alpha))?;
            let step = g.scale(out.eps, T::of(sigma / alpha))?;
            (g.sub(scaled_in, step)?, out.eps)
        };
        Ok(StudentOutput {
            eps,
            z_hat,
            tokens,
            bottleneck: out.bottleneck,
        })
    }
}

/// Teacher: the student's denoiser layout without prompt attention.
pub fn teacher_config(student: &DenoiserConfig) -> DenoiserConfig {
    DenoiserConfig {
        attention: false,
        ..student.clone()
    }
}

/// ε̂ from the teacher for a noisy latent.
pub fn teacher_forward<'a, T: Scalar>(
    cfg: &DenoiserConfig,
    g: &mut Graph<'a, T>,
    bind: Bind<'a, T>,
    z_t: Var,
    t: Timestep,
) -> Result<Var> {
    Ok(cfg.forward(g, bind, TEACHER_PREFIX, z_t, t, None)?.eps)
}

#[cfg(test)]
mod tests;
