//! Eager (untaped) versions of the heavier primitives.

use super::kernels::{self, ConvGeom};
use super::{Scalar, Tensor};
use crate::{Error, Result};

/// Matrix product of `a: m×k` and `b: k×n`.
pub fn matmul<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (m, k, n) = matmul_dims(a.shape(), b.shape())?;
    let mut out = vec![T::zero(); m * n];
    kernels::gemm_acc(a.data(), b.data(), &mut out, m, k, n);
    Tensor::new([m, n], out)
}

pub(crate) fn matmul_dims(a: &[usize], b: &[usize]) -> Result<(usize, usize, usize)> {
    match (a, b) {
        ([m, k], [k2, n]) if k == k2 => Ok((*m, *k, *n)),
        _ => Err(Error::Dimension(format!("matmul of {a:?} by {b:?}"))),
    }
}

/// Zero-padded cross-correlation of `x: C×H×W` with `w: O×C×kh×kw`.
pub fn conv2d<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>, stride: usize, pad: usize) -> Result<Tensor<T>> {
    let g = conv_geom(x.shape(), w.shape(), stride, pad)?;
    let o = w.shape()[0];
    let mut cols = vec![T::zero(); g.col_rows() * g.col_cols()];
    kernels::im2col(x.data(), &g, &mut cols);
    let mut out = vec![T::zero(); o * g.col_cols()];
    kernels::gemm_acc(w.data(), &cols, &mut out, o, g.col_rows(), g.col_cols());
    Tensor::new([o, g.ho, g.wo], out)
}

pub(crate) fn conv_geom(x: &[usize], w: &[usize], stride: usize, pad: usize) -> Result<ConvGeom> {
    let ([c, h, wd], [_, c2, kh, kw]) = (x, w) else {
        return Err(Error::Dimension(format!("conv2d of {x:?} with kernel {w:?}")));
    };
    if c != c2 {
        return Err(Error::Dimension(format!(
            "conv2d input has {c} channels, kernel expects {c2}"
        )));
    }
    if kh % 2 == 0 || kw % 2 == 0 {
        return Err(Error::Dimension(format!("conv2d kernel {kh}×{kw} must be odd")));
    }
    ConvGeom::new(*c, *h, *wd, *kh, *kw, stride, pad).ok_or_else(|| {
        Error::Dimension(format!(
            "conv2d output of {x:?} with kernel {w:?}, stride {stride}, pad {pad} is empty"
        ))
    })
}

/// Row-wise softmax of a matrix, stabilised by subtracting each row maximum.
pub fn softmax_rows<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let [_, n] = x.shape() else {
        return Err(Error::Dimension(format!("softmax_rows of {:?}", x.shape())));
    };
    let mut out = vec![T::zero(); x.numel()];
    kernels::softmax_rows_into(x.data(), &mut out, *n);
    Tensor::new(x.shape().to_vec(), out)
}
