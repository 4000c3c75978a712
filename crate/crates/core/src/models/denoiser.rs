//! Timestep-conditioned two-level encoder–decoder that predicts noise in
//! latent space.
//!
//! Layout for the default widths (16, 32, 64) on a `4×16×16` latent:
//!
//! ```text
//! in conv → block@16 ─────────────────────────────┐ skip
//!   ↓ s2 conv → block@8 ─────────────────┐ skip   │
//!     ↓ s2 conv → block@4 → [cross-attn] │        │
//!       ↑ up + 1×1 conv ─────────── add ─┘ block  │
//!         ↑ up + 1×1 conv ──────────────── add ───┘ block
//!           → norm → SiLU → out conv
//! ```
//!
//! Every block is `x + SiLU(FiLM(GroupNorm(conv3(x))))`, with FiLM scale and
//! shift projected from the shared timestep embedding. The optional
//! cross-attention reads prompt tokens at the bottleneck.

use serde::{Deserialize, Serialize};

use super::embed::sinusoid;
use super::layers::{init_conv, init_linear, init_zero_conv, init_zero_linear, Bind, GAIN_RELU};
use crate::numerics::{Graph, ParamStore, Scalar, Var};
use crate::schedule::Timestep;
use crate::{Error, Result, Rng};

pub const GN_EPS: f64 = 1e-5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DenoiserConfig {
    pub latent_channels: usize,
    pub widths: [usize; 3],
    /// Channels per normalization group.
    pub group_size: usize,
    pub temb_dim: usize,
    pub temb_hidden: usize,
    /// Bottleneck cross-attention over prompt tokens.
    pub attention: bool,
    pub token_dim: usize,
    pub steps: usize,
}

impl Default for DenoiserConfig {
    fn default() -> Self {
        Self {
            latent_channels: 4,
            widths: [16, 32, 64],
            group_size: 4,
            temb_dim: 64,
            temb_hidden: 128,
            attention: true,
            token_dim: 64,
            steps: crate::schedule::DEFAULT_STEPS,
        }
    }
}

/// Outputs of one forward pass.
#[derive(Clone, Copy, Debug)]
pub struct DenoiserOutput {
    pub eps: Var,
    /// Bottleneck activations `widths[2]×h/4×w/4`, after attention.
    pub bottleneck: Var,
}

const BLOCKS: [(&str, usize); 5] = [("b1", 0), ("b2", 1), ("b3", 2), ("b4", 1), ("b5", 0)];

impl DenoiserConfig {
    pub fn validate(&self) -> Result<()> {
        if self.latent_channels == 0 || self.widths.contains(&0) || self.group_size == 0 {
            return Err(Error::Config("denoiser sizes must be positive".into()));
        }
        if let Some(w) = self.widths.iter().find(|&&w| w % self.group_size != 0) {
            return Err(Error::Config(format!(
                "width {w} is not a multiple of group size {}",
                self.group_size
            )));
        }
        if self.temb_dim == 0 || self.temb_dim % 2 != 0 || self.temb_hidden == 0 {
            return Err(Error::Config("timestep embedding dim must be positive and even".into()));
        }
        if self.attention && self.token_dim == 0 {
            return Err(Error::Config("token_dim must be positive".into()));
        }
        Ok(())
    }

    /// Fresh parameters under `prefix`. The output convolution, the FiLM
    /// projections and the attention output start at zero.
    pub fn init(&self, prefix: &str, rng: &mut Rng) -> Result<ParamStore<f32>> {
        self.validate()?;
        let p = |s: &str| format!("{prefix}.{s}");
        let [w0, w1, w2] = self.widths;
        let mut s = ParamStore::new();
        init_linear(&mut s, &p("t1"), self.temb_dim, self.temb_hidden, GAIN_RELU, rng);
        init_linear(&mut s, &p("t2"), self.temb_hidden, self.temb_hidden, GAIN_RELU, rng);
        init_conv(&mut s, &p("in"), self.latent_channels, w0, 3, 1.0, rng);
        for (name, level) in BLOCKS {
            let c = self.widths[level];
            init_conv(&mut s, &p(&format!("{name}.conv")), c, c, 3, GAIN_RELU, rng);
            init_zero_linear(&mut s, &p(&format!("{name}.fs")), self.temb_hidden, c);
            init_zero_linear(&mut s, &p(&format!("{name}.fb")), self.temb_hidden, c);
        }
        init_conv(&mut s, &p("down1"), w0, w1, 3, 1.0, rng);
        init_conv(&mut s, &p("down2"), w1, w2, 3, 1.0, rng);
        init_conv(&mut s, &p("up2"), w2, w1, 1, 1.0, rng);
        init_conv(&mut s, &p("up1"), w1, w0, 1, 1.0, rng);
        if self.attention {
            init_linear(&mut s, &p("attn.q"), w2, w2, 1.0, rng);
            init_linear(&mut s, &p("attn.k"), self.token_dim, w2, 1.0, rng);
            init_linear(&mut s, &p("attn.v"), self.token_dim, w2, 1.0, rng);
            init_zero_linear(&mut s, &p("attn.o"), w2, w2);
        }
        init_zero_conv(&mut s, &p("out"), w0, self.latent_channels, 3);
        Ok(s)
    }

    /// Records ε̂ for `z: C×H×W` (H, W divisible by 4). `tokens` (`K×D`) is
    /// required exactly when attention is enabled.
    pub fn forward<'a, T: Scalar>(
        &self,
        g: &mut Graph<'a, T>,
        bind: Bind<'a, T>,
        prefix: &str,
        z: Var,
        t: Timestep,
        tokens: Option<Var>,
    ) -> Result<DenoiserOutput> {
        let shape = g.shape(z).to_vec();
        if shape.len() != 3 || shape[0] != self.latent_channels || shape[1] % 4 != 0 || shape[2] % 4 != 0 {
            return Err(Error::Dimension(format!(
                "denoiser expects {}×H×W latents with H, W divisible by 4, got {shape:?}",
                self.latent_channels
            )));
        }
        let p = |s: &str| format!("{prefix}.{s}");
        let raw = g.input(sinusoid(t, self.temb_dim, self.steps)?);
        let h = bind.linear(g, &p("t1"), raw)?;
        let h = g.silu(h)?;
        let h = bind.linear(g, &p("t2"), h)?;
        let temb = g.silu(h)?;

        let block = |g: &mut Graph<'a, T>, name: &str, x: Var| -> Result<Var> {
            let c = g.shape(x)[0];
            let h = bind.conv(g, &p(&format!("{name}.conv")), x, 1)?;
            let h = g.group_norm(h, c / self.group_size, GN_EPS)?;
            let sc = bind.linear(g, &p(&format!("{name}.fs")), temb)?;
            let sc = g.reshape(sc, &[c])?;
            let sh = bind.linear(g, &p(&format!("{name}.fb")), temb)?;
            let sh = g.reshape(sh, &[c])?;
            let h = g.film(h, sc, sh)?;
            let h = g.silu(h)?;
            g.add(x, h)
        };

        let x = bind.conv(g, &p("in"), z, 1)?;
        let skip1 = block(g, "b1", x)?;
        let x = bind.conv(g, &p("down1"), skip1, 2)?;
        let skip2 = block(g, "b2", x)?;
        let x = bind.conv(g, &p("down2"), skip2, 2)?;
        let mut x = block(g, "b3", x)?;
        match (self.attention, tokens) {
            (true, Some(tok)) => x = self.cross_attention(g, bind, prefix, x, tok)?,
            (false, None) => {}
            (true, None) => return Err(Error::Contract("attention denoiser needs prompt tokens".into())),
            (false, Some(_)) => return Err(Error::Contract("denoiser without attention got prompt tokens".into())),
        }
        let bottleneck = x;
        let x = g.upsample2(x)?;
        let x = bind.conv(g, &p("up2"), x, 1)?;
        let x = g.add(x, skip2)?;
        let x = block(g, "b4", x)?;
        let x = g.upsample2(x)?;
        let x = bind.conv(g, &p("up1"), x, 1)?;
        let x = g.add(x, skip1)?;
        let x = block(g, "b5", x)?;
        let c = g.shape(x)[0];
        let x = g.group_norm(x, c / self.group_size, GN_EPS)?;
        let x = g.silu(x)?;
        let eps = bind.conv(g, &p("out"), x, 1)?;
        Ok(DenoiserOutput { eps, bottleneck })
    }

    /// Single-head attention: queries from normalized spatial features,
    /// keys and values from tokens, residual output.
    fn cross_attention<'a, T: Scalar>(
        &self,
        g: &mut Graph<'a, T>,
        bind: Bind<'a, T>,
        prefix: &str,
        x: Var,
        tokens: Var,
    ) -> Result<Var> {
        let shape = g.shape(x).to_vec();
        let (c, n) = (shape[0], shape[1] * shape[2]);
        let tshape = g.shape(tokens);
        if tshape.len() != 2 || tshape[1] != self.token_dim {
            return Err(Error::Dimension(format!(
                "prompt tokens {tshape:?}, expected K×{}",
                self.token_dim
            )));
        }
        let p = |s: &str| format!("{prefix}.attn.{s}");
        let h = g.group_norm(x, c / self.group_size, GN_EPS)?;
        let h = g.reshape(h, &[c, n])?;
        let h = g.transpose(h)?;
        let q = bind.linear(g, &p("q"), h)?;
        let k = bind.linear(g, &p("k"), tokens)?;
        let v = bind.linear(g, &p("v"), tokens)?;
        let kt = g.transpose(k)?;
        let scores = g.matmul(q, kt)?;
        let scores = g.scale(scores, T::of(1.0 / (c as f64).sqrt()))?;
        let attn = g.softmax_rows(scores)?;
        let out = g.matmul(attn, v)?;
        let out = bind.linear(g, &p("o"), out)?;
        let out = g.transpose(out)?;
        let out = g.reshape(out, &shape)?;
        g.add(x, out)
    }
}
