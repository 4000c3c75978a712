//! Parameter binding and the small layer vocabulary shared by the models.

use crate::numerics::{Graph, ParamStore, Scalar, Tensor, Var};
use crate::{Result, Rng};

/// Attaches tensors from a store to a graph, either as trainable
/// parameters or as frozen constants.
#[derive(Clone, Copy)]
pub struct Bind<'a, T: Scalar> {
    store: &'a ParamStore<T>,
    trainable: bool,
}

impl<'a, T: Scalar> Bind<'a, T> {
    pub fn trainable(store: &'a ParamStore<T>) -> Self {
        Self { store, trainable: true }
    }

    pub fn frozen(store: &'a ParamStore<T>) -> Self {
        Self { store, trainable: false }
    }

    pub fn store(&self) -> &'a ParamStore<T> {
        self.store
    }

    pub fn get(&self, g: &mut Graph<'a, T>, name: &str) -> Result<Var> {
        let t = self.store.get(name)?;
        Ok(if self.trainable { g.param(name, t) } else { g.constant(t) })
    }

    /// `x·W + b` for a row batch `x: m×in`.
    pub fn linear(&self, g: &mut Graph<'a, T>, name: &str, x: Var) -> Result<Var> {
        let w = self.get(g, &format!("{name}.w"))?;
        let b = self.get(g, &format!("{name}.b"))?;
        let y = g.matmul(x, w)?;
        g.add_row(y, b)
    }

    /// Convolution with per-channel bias; padding keeps the size for odd
    /// kernels at stride 1.
    pub fn conv(&self, g: &mut Graph<'a, T>, name: &str, x: Var, stride: usize) -> Result<Var> {
        let w = self.get(g, &format!("{name}.w"))?;
        let pad = g.shape(w)[2] / 2;
        let y = g.conv2d(x, w, stride, pad)?;
        let b = self.get(g, &format!("{name}.b"))?;
        g.add_channel(y, b)
    }
}

/// Fan-in scaled normal weights and zero bias for a linear layer.
pub fn init_linear(store: &mut ParamStore<f32>, name: &str, fan_in: usize, fan_out: usize, gain: f64, rng: &mut Rng) {
    let std = gain / (fan_in as f64).sqrt();
    store.insert(format!("{name}.w"), Tensor::randn([fan_in, fan_out], std, rng));
    store.insert(format!("{name}.b"), Tensor::zeros([fan_out]));
}

/// Fan-in scaled normal weights and zero bias for a `k×k` convolution.
pub fn init_conv(store: &mut ParamStore<f32>, name: &str, cin: usize, cout: usize, k: usize, gain: f64, rng: &mut Rng) {
    let std = gain / ((cin * k * k) as f64).sqrt();
    store.insert(format!("{name}.w"), Tensor::randn([cout, cin, k, k], std, rng));
    store.insert(format!("{name}.b"), Tensor::zeros([cout]));
}

/// Zero weights and bias; the layer starts as the constant 0.
pub fn init_zero_linear(store: &mut ParamStore<f32>, name: &str, fan_in: usize, fan_out: usize) {
    store.insert(format!("{name}.w"), Tensor::zeros([fan_in, fan_out]));
    store.insert(format!("{name}.b"), Tensor::zeros([fan_out]));
}

pub fn init_zero_conv(store: &mut ParamStore<f32>, name: &str, cin: usize, cout: usize, k: usize) {
    store.insert(format!("{name}.w"), Tensor::zeros([cout, cin, k, k]));
    store.insert(format!("{name}.b"), Tensor::zeros([cout]));
}

/// He gain for SiLU-like activations.
pub const GAIN_RELU: f64 = std::f64::consts::SQRT_2;
