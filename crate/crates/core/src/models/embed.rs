//! Sinusoidal timestep features.

use crate::numerics::{Scalar, Tensor};
use crate::schedule::Timestep;
use crate::{Error, Result};

/// Frequency of pair `i` out of `half`, geometric from 1 down to 1e-4.
pub fn frequency(i: usize, half: usize) -> f64 {
    if half <= 1 {
        return 1.0;
    }
    (-(1e4f64.ln()) * i as f64 / (half - 1) as f64).exp()
}

/// `[sin(t·ω_0) … sin(t·ω_{h−1}), cos(t·ω_0) … cos(t·ω_{h−1})]` as a `1×dim`
/// row. The learned projection is applied by the denoiser.
pub fn sinusoid<T: Scalar>(t: Timestep, dim: usize, steps: usize) -> Result<Tensor<T>> {
    if t == 0 || t > steps {
        return Err(Error::Contract(format!("timestep {t} outside [1, {steps}]")));
    }
    if dim == 0 || dim % 2 != 0 {
        return Err(Error::Config(format!("embedding dim {dim} must be positive and even")));
    }
    let half = dim / 2;
    Tensor::new(
        [1, dim],
        (0..dim)
            .map(|j| {
                let phase = t as f64 * frequency(j % half, half);
                T::of(if j < half { phase.sin() } else { phase.cos() })
            })
            .collect(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn distinct_and_bounded() {
        let e: Vec<Tensor<f64>> = [250, 500, 750].iter().map(|&t| sinusoid(t, 64, 1000).unwrap()).collect();
        for i in 0..3 {
            assert!(e[i].data().iter().all(|v| (-1.0..=1.0).contains(v)));
            for j in i + 1..3 {
                assert!(e[i].max_abs_diff(&e[j]) > 0.0);
            }
        }
    }

    #[test]
    fn matches_direct_formula() {
        for t in [1, 37, 500, 1000] {
            let e = sinusoid::<f32>(t, 16, 1000).unwrap();
            for i in 0..8 {
                let w = 10000f64.powf(-(i as f64) / 7.0);
                assert!((e.data()[i] as f64 - (t as f64 * w).sin()).abs() < 1e-6);
                assert!((e.data()[8 + i] as f64 - (t as f64 * w).cos()).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn range_and_dim_checks() {
        assert!(matches!(sinusoid::<f32>(0, 8, 1000), Err(Error::Contract(_))));
        assert!(matches!(sinusoid::<f32>(1001, 8, 1000), Err(Error::Contract(_))));
        assert!(matches!(sinusoid::<f32>(5, 7, 1000), Err(Error::Config(_))));
    }
}
