//! Adaptive moment estimation.

use crate::numerics::{ParamStore, Tensor};
use crate::Result;

#[derive(Clone, Debug)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: ParamStore<f32>,
    v: ParamStore<f32>,
}

impl Adam {
    pub fn new(lr: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        Self {
            lr,
            beta1,
            beta2,
            eps,
            step: 0,
            m: ParamStore::new(),
            v: ParamStore::new(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Applies one bias-corrected update to every parameter that has a
    /// gradient entry.
    pub fn step(&mut self, params: &mut ParamStore<f32>, grads: &ParamStore<f32>) -> Result<()> {
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step as i32);
        let c2 = 1.0 - self.beta2.powi(self.step as i32);
        for (name, g) in grads.iter() {
            let p = params.get_mut(name)?;
            p.expect_same_shape(g)?;
            if !self.m.contains(name) {
                self.m.insert(name, Tensor::zeros(g.shape().to_vec()));
                self.v.insert(name, Tensor::zeros(g.shape().to_vec()));
            }
            let m = self.m.get_mut(name)?.data_mut();
            let v = self.v.get_mut(name)?.data_mut();
            for (((pi, &gi), mi), vi) in p.data_mut().iter_mut().zip(g.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
                let gi = gi as f64;
                let mn = self.beta1 * *mi as f64 + (1.0 - self.beta1) * gi;
                let vn = self.beta2 * *vi as f64 + (1.0 - self.beta2) * gi * gi;
                *mi = mn as f32;
                *vi = vn as f32;
                let update = self.lr * (mn / c1) / ((vn / c2).sqrt() + self.eps);
                *pi = (*pi as f64 - update) as f32;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_lr_times_sign() {
        let mut p = ParamStore::new();
        p.insert("w", Tensor::new([3], vec![1.0f32, 1.0, 1.0]).unwrap());
        let mut g = ParamStore::new();
        g.insert("w", Tensor::new([3], vec![0.5f32, -2.0, 0.0]).unwrap());
        let mut opt = Adam::new(0.1, 0.9, 0.999, 1e-8);
        opt.step(&mut p, &g).unwrap();
        let w = p.get("w").unwrap().data();
        assert!((w[0] - 0.9).abs() < 1e-6);
        assert!((w[1] - 1.1).abs() < 1e-6);
        assert_eq!(w[2], 1.0);
    }

    #[test]
    fn minimizes_a_quadratic() {
        let mut p = ParamStore::new();
        p.insert("x", Tensor::new([2], vec![3.0f32, -4.0]).unwrap());
        let mut opt = Adam::new(0.05, 0.9, 0.999, 1e-8);
        for _ in 0..2000 {
            let x = p.get("x").unwrap().clone();
            let mut g = ParamStore::new();
            g.insert("x", x.map(|v| 2.0 * (v - 1.0)));
            opt.step(&mut p, &g).unwrap();
        }
        for &v in p.get("x").unwrap().data() {
            assert!((v - 1.0).abs() < 1e-2);
        }
    }
}
