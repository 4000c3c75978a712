//! Visual prompt encoder: three convolutions, spatial pooling to `K` tokens
//! and a linear projection to the token width.

use serde::{Deserialize, Serialize};

use super::layers::{init_conv, init_linear, Bind, GAIN_RELU};
use crate::numerics::{Graph, ParamStore, Scalar, Var};
use crate::{Error, Result, Rng};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PromptConfig {
    pub image_channels: usize,
    pub channels: [usize; 3],
    pub tokens_h: usize,
    pub tokens_w: usize,
    pub token_dim: usize,
}

impl Default for PromptConfig {
    fn default() -> Self {
        Self {
            image_channels: 1,
            channels: [8, 16, 32],
            tokens_h: 2,
            tokens_w: 4,
            token_dim: 64,
        }
    }
}

impl PromptConfig {
    pub fn tokens(&self) -> usize {
        self.tokens_h * self.tokens_w
    }

    pub fn init(&self, prefix: &str, rng: &mut Rng) -> Result<ParamStore<f32>> {
        if self.image_channels == 0 || self.channels.contains(&0) || self.tokens() == 0 || self.token_dim == 0 {
            return Err(Error::Config("prompt encoder sizes must be positive".into()));
        }
        let p = |s: &str| format!("{prefix}.{s}");
        let [c1, c2, c3] = self.channels;
        let mut s = ParamStore::new();
        init_conv(&mut s, &p("c1"), self.image_channels, c1, 3, GAIN_RELU, rng);
        init_conv(&mut s, &p("c2"), c1, c2, 3, GAIN_RELU, rng);
        init_conv(&mut s, &p("c3"), c2, c3, 3, GAIN_RELU, rng);
        init_linear(&mut s, &p("proj"), c3, self.token_dim, 1.0, rng);
        Ok(s)
    }

    /// `K×D` tokens from an image `C×H×W` with H, W divisible by
    /// `4·tokens_h` and `4·tokens_w`.
    pub fn forward<'a, T: Scalar>(&self, g: &mut Graph<'a, T>, bind: Bind<'a, T>, prefix: &str, image: Var) -> Result<Var> {
        let shape = g.shape(image).to_vec();
        if shape.len() != 3
            || shape[0] != self.image_channels
            || shape[1] % (4 * self.tokens_h) != 0
            || shape[2] % (4 * self.tokens_w) != 0
        {
            return Err(Error::Dimension(format!(
                "prompt encoder got {shape:?}; needs {}×H×W with H divisible by {} and W by {}",
                self.image_channels,
                4 * self.tokens_h,
                4 * self.tokens_w
            )));
        }
        let p = |s: &str| format!("{prefix}.{s}");
        let x = bind.conv(g, &p("c1"), image, 2)?;
        let x = g.silu(x)?;
        let x = bind.conv(g, &p("c2"), x, 2)?;
        let x = g.silu(x)?;
        let x = bind.conv(g, &p("c3"), x, 1)?;
        let x = g.silu(x)?;
        let (h, w) = (shape[1] / 4, shape[2] / 4);
        let x = g.avg_pool(x, h / self.tokens_h, w / self.tokens_w)?;
        let c = self.channels[2];
        let x = g.reshape(x, &[c, self.tokens()])?;
        let x = g.transpose(x)?;
        bind.linear(g, &p("proj"), x)
    }
}
