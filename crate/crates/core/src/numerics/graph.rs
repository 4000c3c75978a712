use std::borrow::Cow;
use std::collections::HashMap;

use super::kernels::{self, ConvGeom};
use super::ops::{conv_geom, matmul_dims};
use super::{ParamStore, Scalar, Tensor};
use crate::{Error, Result};

/// Handle to a node recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    Conv2d { x: Var, w: Var, geom: ConvGeom, cols: Vec<T> },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    AddChannel(Var, Var),
    AddRow(Var, Var),
    Film { x: Var, scale: Var, shift: Var },
    Silu(Var),
    GroupNorm { x: Var, groups: usize, xhat: Vec<T>, rstd: Vec<T> },
    SoftmaxRows(Var),
    Reshape(Var),
    ConcatChannels(Var, Var),
    Upsample2(Var),
    AvgPool { x: Var, fh: usize, fw: usize },
    DepthToSpace { x: Var, r: usize },
    Sum(Var),
    Mean(Var),
    Mse(Var, Var),
}

struct Node<'a, T: Scalar> {
    value: Cow<'a, Tensor<T>>,
    op: Op<T>,
    requires_grad: bool,
}

/// Tape of one forward pass.
///
/// Nodes are appended in evaluation order, so the node list is already a
/// topological order and the backward sweep is a single reverse pass.
/// Parameters are borrowed, not copied.
pub struct Graph<'a, T: Scalar = f32> {
    nodes: Vec<Node<'a, T>>,
    params: Vec<(String, Var)>,
    param_index: HashMap<String, Var>,
}

impl<T: Scalar> Default for Graph<'_, T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<'a, T: Scalar> Graph<'a, T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            params: Vec::new(),
            param_index: HashMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Owned constant (no gradient).
    pub fn input(&mut self, t: Tensor<T>) -> Var {
        self.push_leaf(Cow::Owned(t), false)
    }

    /// Borrowed constant (no gradient).
    pub fn constant(&mut self, t: &'a Tensor<T>) -> Var {
        self.push_leaf(Cow::Borrowed(t), false)
    }

    /// Owned unnamed leaf that receives a gradient.
    pub fn variable(&mut self, t: Tensor<T>) -> Var {
        self.push_leaf(Cow::Owned(t), true)
    }

    /// Named trainable parameter. Registering the same name twice returns
    /// the same node.
    pub fn param(&mut self, name: &str, t: &'a Tensor<T>) -> Var {
        if let Some(&v) = self.param_index.get(name) {
            return v;
        }
        let v = self.push_leaf(Cow::Borrowed(t), true);
        self.params.push((name.to_string(), v));
        self.param_index.insert(name.to_string(), v);
        v
    }

    fn push_leaf(&mut self, value: Cow<'a, Tensor<T>>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, parents: &[Var]) -> Var {
        let requires_grad = parents.iter().any(|p| self.nodes[p.0].requires_grad);
        self.nodes.push(Node {
            value: Cow::Owned(value),
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::Dimension(format!(
                "{what}: {:?} vs {:?}",
                self.shape(a),
                self.shape(b)
            )));
        }
        Ok(())
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k, n) = matmul_dims(self.shape(a), self.shape(b))?;
        let mut out = vec![T::zero(); m * n];
        kernels::gemm_acc(self.value(a).data(), self.value(b).data(), &mut out, m, k, n);
        Ok(self.push(Tensor::new([m, n], out)?, Op::MatMul(a, b), &[a, b]))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let &[m, n] = self.shape(a) else {
            return Err(Error::Dimension(format!("transpose of {:?}", self.shape(a))));
        };
        let out = transpose_data(self.value(a).data(), m, n);
        Ok(self.push(Tensor::new([n, m], out)?, Op::Transpose(a), &[a]))
    }

    /// Cross-correlation of `x: C×H×W` with `w: O×C×kh×kw` (no bias).
    pub fn conv2d(&mut self, x: Var, w: Var, stride: usize, pad: usize) -> Result<Var> {
        let geom = conv_geom(self.shape(x), self.shape(w), stride, pad)?;
        let o = self.shape(w)[0];
        let mut cols = vec![T::zero(); geom.col_rows() * geom.col_cols()];
        kernels::im2col(self.value(x).data(), &geom, &mut cols);
        let mut out = vec![T::zero(); o * geom.col_cols()];
        kernels::gemm_acc(self.value(w).data(), &cols, &mut out, o, geom.col_rows(), geom.col_cols());
        let y = Tensor::new([o, geom.ho, geom.wo], out)?;
        Ok(self.push(y, Op::Conv2d { x, w, geom, cols }, &[x, w]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let y = self.value(a).zip_map(self.value(b), |x, y| x + y)?;
        Ok(self.push(y, Op::Add(a, b), &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "sub")?;
        let y = self.value(a).zip_map(self.value(b), |x, y| x - y)?;
        Ok(self.push(y, Op::Sub(a, b), &[a, b]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        let y = self.value(a).zip_map(self.value(b), |x, y| x * y)?;
        Ok(self.push(y, Op::Mul(a, b), &[a, b]))
    }

    pub fn scale(&mut self, a: Var, c: T) -> Result<Var> {
        let y = self.value(a).map(|x| x * c);
        Ok(self.push(y, Op::Scale(a, c), &[a]))
    }

    /// Adds `b[c]` to every element of channel `c` of `x: C×…`.
    pub fn add_channel(&mut self, x: Var, b: Var) -> Result<Var> {
        let c = self.shape(x)[0];
        if self.value(b).numel() != c {
            return Err(Error::Dimension(format!(
                "channel bias of {} entries for {:?}",
                self.value(b).numel(),
                self.shape(x)
            )));
        }
        let mut y = self.value(x).clone();
        let block = y.numel() / c;
        let bd = self.value(b).data();
        for (ch, chunk) in y.data_mut().chunks_mut(block).enumerate() {
            for v in chunk {
                *v += bd[ch];
            }
        }
        Ok(self.push(y, Op::AddChannel(x, b), &[x, b]))
    }

    /// Adds the row vector `b[n]` to every row of `x: m×n`.
    pub fn add_row(&mut self, x: Var, b: Var) -> Result<Var> {
        let &[_, n] = self.shape(x) else {
            return Err(Error::Dimension(format!("add_row on {:?}", self.shape(x))));
        };
        if self.value(b).numel() != n {
            return Err(Error::Dimension(format!(
                "row bias of {} entries for {:?}",
                self.value(b).numel(),
                self.shape(x)
            )));
        }
        let mut y = self.value(x).clone();
        let bd = self.value(b).data();
        for row in y.data_mut().chunks_mut(n) {
            for (v, &bv) in row.iter_mut().zip(bd) {
                *v += bv;
            }
        }
        Ok(self.push(y, Op::AddRow(x, b), &[x, b]))
    }

    /// Feature-wise modulation `x·(1 + scale[c]) + shift[c]` on `x: C×…`.
    pub fn film(&mut self, x: Var, scale: Var, shift: Var) -> Result<Var> {
        let c = self.shape(x)[0];
        if self.value(scale).numel() != c || self.value(shift).numel() != c {
            return Err(Error::Dimension(format!(
                "film with {}/{} modulation entries for {:?}",
                self.value(scale).numel(),
                self.value(shift).numel(),
                self.shape(x)
            )));
        }
        let mut y = self.value(x).clone();
        let block = y.numel() / c;
        let (sd, bd) = (self.value(scale).data(), self.value(shift).data());
        for (ch, chunk) in y.data_mut().chunks_mut(block).enumerate() {
            let gain = T::one() + sd[ch];
            for v in chunk {
                *v = *v * gain + bd[ch];
            }
        }
        Ok(self.push(y, Op::Film { x, scale, shift }, &[x, scale, shift]))
    }

    /// `x·sigmoid(x)`.
    pub fn silu(&mut self, x: Var) -> Result<Var> {
        let y = self.value(x).map(|v| v * sigmoid(v));
        Ok(self.push(y, Op::Silu(x), &[x]))
    }

    /// Group normalization over `x: C×…` without affine terms.
    pub fn group_norm(&mut self, x: Var, groups: usize, eps: f64) -> Result<Var> {
        let c = self.shape(x)[0];
        if groups == 0 || c % groups != 0 {
            return Err(Error::Dimension(format!("{c} channels into {groups} groups")));
        }
        let xv = self.value(x).data();
        let gsize = xv.len() / groups;
        let mut xhat = vec![T::zero(); xv.len()];
        let mut rstd = vec![T::zero(); groups];
        let inv_n = T::one() / T::of(gsize as f64);
        for g in 0..groups {
            let seg = &xv[g * gsize..(g + 1) * gsize];
            let mean = seg.iter().copied().sum::<T>() * inv_n;
            let var = seg.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() * inv_n;
            let r = T::one() / (var + T::of(eps)).sqrt();
            rstd[g] = r;
            for (o, &v) in xhat[g * gsize..(g + 1) * gsize].iter_mut().zip(seg) {
                *o = (v - mean) * r;
            }
        }
        let y = Tensor::new(self.shape(x).to_vec(), xhat.clone())?;
        Ok(self.push(y, Op::GroupNorm { x, groups, xhat, rstd }, &[x]))
    }

    pub fn softmax_rows(&mut self, x: Var) -> Result<Var> {
        let y = super::softmax_rows(self.value(x))?;
        Ok(self.push(y, Op::SoftmaxRows(x), &[x]))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let y = self.value(x).clone().reshape(shape.to_vec())?;
        Ok(self.push(y, Op::Reshape(x), &[x]))
    }

    /// Concatenates along the leading (channel) axis.
    pub fn concat_channels(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != sb.len() || sa[1..] != sb[1..] {
            return Err(Error::Dimension(format!("concat of {sa:?} and {sb:?}")));
        }
        let mut shape = sa.to_vec();
        shape[0] += sb[0];
        let mut data = self.value(a).data().to_vec();
        data.extend_from_slice(self.value(b).data());
        Ok(self.push(Tensor::new(shape, data)?, Op::ConcatChannels(a, b), &[a, b]))
    }

    /// Nearest-neighbour 2× upsampling of `x: C×H×W`.
    pub fn upsample2(&mut self, x: Var) -> Result<Var> {
        let &[c, h, w] = self.shape(x) else {
            return Err(Error::Dimension(format!("upsample2 of {:?}", self.shape(x))));
        };
        let xv = self.value(x).data();
        let (h2, w2) = (2 * h, 2 * w);
        let mut out = vec![T::zero(); c * h2 * w2];
        for ch in 0..c {
            for i in 0..h2 {
                for j in 0..w2 {
                    out[(ch * h2 + i) * w2 + j] = xv[(ch * h + i / 2) * w + j / 2];
                }
            }
        }
        Ok(self.push(Tensor::new([c, h2, w2], out)?, Op::Upsample2(x), &[x]))
    }

    /// Mean over non-overlapping `fh×fw` blocks of `x: C×H×W`.
    pub fn avg_pool(&mut self, x: Var, fh: usize, fw: usize) -> Result<Var> {
        let &[c, h, w] = self.shape(x) else {
            return Err(Error::Dimension(format!("avg_pool of {:?}", self.shape(x))));
        };
        if fh == 0 || fw == 0 || h % fh != 0 || w % fw != 0 {
            return Err(Error::Dimension(format!("avg_pool {fh}×{fw} of {h}×{w}")));
        }
        let (ho, wo) = (h / fh, w / fw);
        let xv = self.value(x).data();
        let inv = T::one() / T::of((fh * fw) as f64);
        let mut out = vec![T::zero(); c * ho * wo];
        for ch in 0..c {
            for i in 0..h {
                for j in 0..w {
                    out[(ch * ho + i / fh) * wo + j / fw] += xv[(ch * h + i) * w + j] * inv;
                }
            }
        }
        Ok(self.push(Tensor::new([c, ho, wo], out)?, Op::AvgPool { x, fh, fw }, &[x]))
    }

    /// Rearranges `x: (C·r²)×h×w` into `C×(h·r)×(w·r)`.
    pub fn depth_to_space(&mut self, x: Var, r: usize) -> Result<Var> {
        let &[cr, h, w] = self.shape(x) else {
            return Err(Error::Dimension(format!("depth_to_space of {:?}", self.shape(x))));
        };
        if r == 0 || cr % (r * r) != 0 {
            return Err(Error::Dimension(format!("{cr} channels not divisible by {r}²")));
        }
        let c = cr / (r * r);
        let mut out = vec![T::zero(); cr * h * w];
        depth_to_space_data(self.value(x).data(), &mut out, c, h, w, r, false);
        Ok(self.push(
            Tensor::new([c, h * r, w * r], out)?,
            Op::DepthToSpace { x, r },
            &[x],
        ))
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let y = Tensor::scalar(self.value(x).sum());
        Ok(self.push(y, Op::Sum(x), &[x]))
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let n = T::of(self.value(x).numel() as f64);
        let y = Tensor::scalar(self.value(x).sum() / n);
        Ok(self.push(y, Op::Mean(x), &[x]))
    }

    /// Mean squared difference, a scalar.
    pub fn mse(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mse")?;
        let (av, bv) = (self.value(a).data(), self.value(b).data());
        let s: T = av.iter().zip(bv).map(|(&x, &y)| (x - y) * (x - y)).sum();
        let y = Tensor::scalar(s / T::of(av.len() as f64));
        Ok(self.push(y, Op::Mse(a, b), &[a, b]))
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        if self.value(loss).numel() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(self.shape(loss).to_vec(), T::one()));
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                grads[i] = None;
                continue;
            }
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(gy) = grads[i].take() else {
                continue;
            };
            self.backprop_node(node, &gy, &mut grads)?;
        }
        let params = self
            .params
            .iter()
            .map(|(name, v)| {
                let g = grads[v.0]
                    .clone()
                    .unwrap_or_else(|| Tensor::zeros(self.shape(*v).to_vec()));
                (name.clone(), g)
            })
            .collect();
        Ok(Gradients { nodes: grads, params })
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn backprop_node(&self, node: &Node<'a, T>, gy: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) -> Result<()> {
        let g = gy.data();
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k, n) = matmul_dims(self.shape(*a), self.shape(*b))?;
                if self.rg(*a) {
                    let mut da = vec![T::zero(); m * k];
                    kernels::gemm_nt_acc(g, self.value(*b).data(), &mut da, m, n, k);
                    accumulate(grads, *a, self.shape(*a), da)?;
                }
                if self.rg(*b) {
                    let mut db = vec![T::zero(); k * n];
                    kernels::gemm_tn_acc(self.value(*a).data(), g, &mut db, k, m, n);
                    accumulate(grads, *b, self.shape(*b), db)?;
                }
            }
            Op::Transpose(a) => {
                let &[m, n] = self.shape(*a) else { unreachable!() };
                accumulate(grads, *a, self.shape(*a), transpose_data(g, n, m))?;
            }
            Op::Conv2d { x, w, geom, cols } => {
                let o = self.shape(*w)[0];
                let (rows, p) = (geom.col_rows(), geom.col_cols());
                if self.rg(*w) {
                    let mut dw = vec![T::zero(); o * rows];
                    kernels::gemm_nt_acc(g, cols, &mut dw, o, p, rows);
                    accumulate(grads, *w, self.shape(*w), dw)?;
                }
                if self.rg(*x) {
                    let mut dcols = vec![T::zero(); rows * p];
                    kernels::gemm_tn_acc(self.value(*w).data(), g, &mut dcols, rows, o, p);
                    let mut dx = vec![T::zero(); self.value(*x).numel()];
                    kernels::col2im_acc(&dcols, geom, &mut dx);
                    accumulate(grads, *x, self.shape(*x), dx)?;
                }
            }
            Op::Add(a, b) => {
                if self.rg(*a) {
                    accumulate(grads, *a, gy.shape(), g.to_vec())?;
                }
                if self.rg(*b) {
                    accumulate(grads, *b, gy.shape(), g.to_vec())?;
                }
            }
            Op::Sub(a, b) => {
                if self.rg(*a) {
                    accumulate(grads, *a, gy.shape(), g.to_vec())?;
                }
                if self.rg(*b) {
                    accumulate(grads, *b, gy.shape(), g.iter().map(|&v| -v).collect())?;
                }
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                if self.rg(*a) {
                    accumulate(grads, *a, gy.shape(), g.iter().zip(bv).map(|(&d, &y)| d * y).collect())?;
                }
                if self.rg(*b) {
                    accumulate(grads, *b, gy.shape(), g.iter().zip(av).map(|(&d, &x)| d * x).collect())?;
                }
            }
            Op::Scale(a, c) => {
                accumulate(grads, *a, gy.shape(), g.iter().map(|&v| v * *c).collect())?;
            }
            Op::AddChannel(x, b) => {
                if self.rg(*x) {
                    accumulate(grads, *x, gy.shape(), g.to_vec())?;
                }
                if self.rg(*b) {
                    let c = self.shape(*x)[0];
                    let db = g.chunks(g.len() / c).map(|ch| ch.iter().copied().sum()).collect();
                    accumulate(grads, *b, self.shape(*b), db)?;
                }
            }
            Op::AddRow(x, b) => {
                if self.rg(*x) {
                    accumulate(grads, *x, gy.shape(), g.to_vec())?;
                }
                if self.rg(*b) {
                    let n = self.shape(*x)[1];
                    let mut db = vec![T::zero(); n];
                    for row in g.chunks(n) {
                        for (d, &v) in db.iter_mut().zip(row) {
                            *d += v;
                        }
                    }
                    accumulate(grads, *b, self.shape(*b), db)?;
                }
            }
            Op::Film { x, scale, shift } => {
                let c = self.shape(*x)[0];
                let block = g.len() / c;
                let xv = self.value(*x).data();
                let sv = self.value(*scale).data();
                if self.rg(*x) {
                    let dx = g
                        .iter()
                        .enumerate()
                        .map(|(i, &d)| d * (T::one() + sv[i / block]))
                        .collect();
                    accumulate(grads, *x, gy.shape(), dx)?;
                }
                if self.rg(*scale) {
                    let ds = (0..c)
                        .map(|ch| {
                            let r = ch * block..(ch + 1) * block;
                            g[r.clone()].iter().zip(&xv[r]).map(|(&d, &v)| d * v).sum()
                        })
                        .collect();
                    accumulate(grads, *scale, self.shape(*scale), ds)?;
                }
                if self.rg(*shift) {
                    let db = g.chunks(block).map(|ch| ch.iter().copied().sum()).collect();
                    accumulate(grads, *shift, self.shape(*shift), db)?;
                }
            }
            Op::Silu(x) => {
                let xv = self.value(*x).data();
                let dx = g
                    .iter()
                    .zip(xv)
                    .map(|(&d, &v)| {
                        let s = sigmoid(v);
                        d * s * (T::one() + v * (T::one() - s))
                    })
                    .collect();
                accumulate(grads, *x, gy.shape(), dx)?;
            }
            Op::GroupNorm { x, groups, xhat, rstd } => {
                let gsize = g.len() / groups;
                let inv_n = T::one() / T::of(gsize as f64);
                let mut dx = vec![T::zero(); g.len()];
                for gi in 0..*groups {
                    let r = gi * gsize..(gi + 1) * gsize;
                    let (gs, xs) = (&g[r.clone()], &xhat[r.clone()]);
                    let mean_g = gs.iter().copied().sum::<T>() * inv_n;
                    let mean_gx = gs.iter().zip(xs).map(|(&a, &b)| a * b).sum::<T>() * inv_n;
                    for ((o, &d), &xh) in dx[r].iter_mut().zip(gs).zip(xs) {
                        *o = rstd[gi] * (d - mean_g - xh * mean_gx);
                    }
                }
                accumulate(grads, *x, gy.shape(), dx)?;
            }
            Op::SoftmaxRows(x) => {
                let n = self.shape(*x)[1];
                let y = node.value.data();
                let mut dx = vec![T::zero(); g.len()];
                for ((dr, yr), gr) in dx.chunks_mut(n).zip(y.chunks(n)).zip(g.chunks(n)) {
                    let s: T = yr.iter().zip(gr).map(|(&a, &b)| a * b).sum();
                    for ((o, &yv), &gv) in dr.iter_mut().zip(yr).zip(gr) {
                        *o = yv * (gv - s);
                    }
                }
                accumulate(grads, *x, self.shape(*x), dx)?;
            }
            Op::Reshape(x) => {
                accumulate(grads, *x, self.shape(*x), g.to_vec())?;
            }
            Op::ConcatChannels(a, b) => {
                let na = self.value(*a).numel();
                if self.rg(*a) {
                    accumulate(grads, *a, self.shape(*a), g[..na].to_vec())?;
                }
                if self.rg(*b) {
                    accumulate(grads, *b, self.shape(*b), g[na..].to_vec())?;
                }
            }
            Op::Upsample2(x) => {
                let &[c, h, w] = self.shape(*x) else { unreachable!() };
                let (h2, w2) = (2 * h, 2 * w);
                let mut dx = vec![T::zero(); c * h * w];
                for ch in 0..c {
                    for i in 0..h2 {
                        for j in 0..w2 {
                            dx[(ch * h + i / 2) * w + j / 2] += g[(ch * h2 + i) * w2 + j];
                        }
                    }
                }
                accumulate(grads, *x, self.shape(*x), dx)?;
            }
            Op::AvgPool { x, fh, fw } => {
                let &[c, h, w] = self.shape(*x) else { unreachable!() };
                let (ho, wo) = (h / fh, w / fw);
                let inv = T::one() / T::of((fh * fw) as f64);
                let mut dx = vec![T::zero(); c * h * w];
                for ch in 0..c {
                    for i in 0..h {
                        for j in 0..w {
                            dx[(ch * h + i) * w + j] = g[(ch * ho + i / fh) * wo + j / fw] * inv;
                        }
                    }
                }
                accumulate(grads, *x, self.shape(*x), dx)?;
            }
            Op::DepthToSpace { x, r } => {
                let &[cr, h, w] = self.shape(*x) else { unreachable!() };
                let mut dx = vec![T::zero(); g.len()];
                depth_to_space_data(g, &mut dx, cr / (r * r), h, w, *r, true);
                accumulate(grads, *x, self.shape(*x), dx)?;
            }
            Op::Sum(x) => {
                let n = self.value(*x).numel();
                accumulate(grads, *x, self.shape(*x), vec![g[0]; n])?;
            }
            Op::Mean(x) => {
                let n = self.value(*x).numel();
                accumulate(grads, *x, self.shape(*x), vec![g[0] / T::of(n as f64); n])?;
            }
            Op::Mse(a, b) => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                let k = g[0] * T::of(2.0 / av.len() as f64);
                let da: Vec<T> = av.iter().zip(bv).map(|(&x, &y)| (x - y) * k).collect();
                if self.rg(*b) {
                    accumulate(grads, *b, self.shape(*b), da.iter().map(|&v| -v).collect())?;
                }
                if self.rg(*a) {
                    accumulate(grads, *a, self.shape(*a), da)?;
                }
            }
        }
        Ok(())
    }
}

/// Result of [`Graph::backward`].
pub struct Gradients<T: Scalar> {
    nodes: Vec<Option<Tensor<T>>>,
    params: ParamStore<T>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient with respect to a leaf, if it was reached.
    pub fn wrt(&self, v: Var) -> Option<&Tensor<T>> {
        self.nodes.get(v.0).and_then(Option::as_ref)
    }

    /// Gradients of every named parameter (zeros where unreached).
    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    pub fn into_params(self) -> ParamStore<T> {
        self.params
    }
}

fn accumulate<T: Scalar>(grads: &mut [Option<Tensor<T>>], v: Var, shape: &[usize], data: Vec<T>) -> Result<()> {
    match &mut grads[v.0] {
        Some(existing) => {
            for (e, d) in existing.data_mut().iter_mut().zip(data) {
                *e += d;
            }
        }
        slot @ None => *slot = Some(Tensor::new(shape.to_vec(), data)?),
    }
    Ok(())
}

#[inline]
fn sigmoid<T: Scalar>(v: T) -> T {
    T::one() / (T::one() + (-v).exp())
}

fn transpose_data<T: Scalar>(a: &[T], m: usize, n: usize) -> Vec<T> {
    let mut out = vec![T::zero(); m * n];
    for i in 0..m {
        for j in 0..n {
            out[j * m + i] = a[i * n + j];
        }
    }
    out
}

/// Forward (`inverse == false`): `src` is `(C·r²)×h×w`, `dst` is `C×(hr)×(wr)`.
/// Inverse swaps the roles.
pub(crate) fn depth_to_space_data<T: Copy>(
    src: &[T],
    dst: &mut [T],
    c: usize,
    h: usize,
    w: usize,
    r: usize,
    inverse: bool,
) {
    let (hr, wr) = (h * r, w * r);
    for ch in 0..c {
        for dy in 0..r {
            for dx in 0..r {
                let lc = (ch * r + dy) * r + dx;
                for i in 0..h {
                    for j in 0..w {
                        let li = (lc * h + i) * w + j;
                        let pi = (ch * hr + i * r + dy) * wr + j * r + dx;
                        if inverse {
                            dst[li] = src[pi];
                        } else {
                            dst[pi] = src[li];
                        }
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::gradcheck::check_params;
    use crate::rng_from_seed;

    fn store(entries: &[(&str, &[usize])], seed: u64) -> ParamStore<f64> {
        let mut rng = rng_from_seed(seed);
        let mut p = ParamStore::new();
        for (name, shape) in entries {
            p.insert(*name, Tensor::randn(shape.to_vec(), 1.0, &mut rng));
        }
        p
    }

    fn assert_grads<F>(entries: &[(&str, &[usize])], build: F)
    where
        F: for<'a> Fn(&'a ParamStore<f64>) -> Result<(Graph<'a, f64>, Var)>,
    {
        for seed in 0..10 {
            let p = store(entries, seed);
            let r = check_params(&p, 1e-4, None, &build).unwrap();
            assert!(r.max_rel_err < 1e-4, "seed {seed}: {} ({})", r.max_rel_err, r.worst);
        }
    }

    // Projects a tensor onto a fixed random direction so the loss exercises
    // every output element with a distinct weight.
    fn probe<'a>(g: &mut Graph<'a, f64>, y: Var) -> Result<Var> {
        let shape = g.shape(y).to_vec();
        let mut rng = rng_from_seed(999);
        let dir = g.input(Tensor::randn(shape, 1.0, &mut rng));
        let prod = g.mul(y, dir)?;
        g.sum(prod)
    }

    #[test]
    fn linear_and_quadratic_losses() {
        let p = store(&[("p", &[3, 4])], 1);
        let mut g = Graph::new();
        let v = g.param("p", p.get("p").unwrap());
        let s = g.sum(v).unwrap();
        let grads = g.backward(s).unwrap();
        assert!(grads.params().get("p").unwrap().data().iter().all(|&x| x == 1.0));

        let mut g = Graph::new();
        let v = g.param("p", p.get("p").unwrap());
        let sq = g.mul(v, v).unwrap();
        let s = g.sum(sq).unwrap();
        let half = g.scale(s, 0.5).unwrap();
        let grads = g.backward(half).unwrap();
        assert_eq!(grads.params().get("p").unwrap(), p.get("p").unwrap());
    }

    #[test]
    fn backward_requires_scalar() {
        let p = store(&[("p", &[2, 2])], 1);
        let mut g = Graph::new();
        let v = g.param("p", p.get("p").unwrap());
        assert!(matches!(g.backward(v), Err(Error::Contract(_))));
    }

    #[test]
    fn constants_get_no_gradient() {
        let p = store(&[("p", &[2, 2])], 1);
        let c = Tensor::<f64>::full([2, 2], 3.0);
        let mut g = Graph::new();
        let v = g.param("p", p.get("p").unwrap());
        let k = g.constant(&c);
        assert!(!g.requires_grad(k));
        let m = g.mul(v, k).unwrap();
        let s = g.sum(m).unwrap();
        let grads = g.backward(s).unwrap();
        assert!(grads.wrt(k).is_none());
        assert!(grads.params().get("p").unwrap().data().iter().all(|&x| x == 3.0));
    }

    #[test]
    fn gradcheck_matmul_transpose_row_bias() {
        assert_grads(&[("a", &[3, 5]), ("b", &[4, 5]), ("c", &[4])], |p| {
            let mut g = Graph::new();
            let a = g.param("a", p.get("a")?);
            let b = g.param("b", p.get("b")?);
            let c = g.param("c", p.get("c")?);
            let bt = g.transpose(b)?;
            let y = g.matmul(a, bt)?;
            let y = g.add_row(y, c)?;
            let l = probe(&mut g, y)?;
            Ok((g, l))
        });
    }

    #[test]
    fn gradcheck_conv_with_channel_bias() {
        for (stride, pad) in [(1, 1), (2, 1), (1, 0)] {
            assert_grads(&[("x", &[3, 6, 6]), ("w", &[4, 3, 3, 3]), ("b", &[4])], move |p| {
                let mut g = Graph::new();
                let x = g.param("x", p.get("x")?);
                let w = g.param("w", p.get("w")?);
                let b = g.param("b", p.get("b")?);
                let y = g.conv2d(x, w, stride, pad)?;
                let y = g.add_channel(y, b)?;
                let l = probe(&mut g, y)?;
                Ok((g, l))
            });
        }
    }

    #[test]
    fn gradcheck_group_norm_film_silu() {
        assert_grads(&[("x", &[8, 3, 3]), ("s", &[8]), ("t", &[8])], |p| {
            let mut g = Graph::new();
            let x = g.param("x", p.get("x")?);
            let s = g.param("s", p.get("s")?);
            let t = g.param("t", p.get("t")?);
            let y = g.group_norm(x, 2, 1e-5)?;
            let y = g.film(y, s, t)?;
            let y = g.silu(y)?;
            let l = probe(&mut g, y)?;
            Ok((g, l))
        });
    }

    #[test]
    fn gradcheck_attention() {
        assert_grads(&[("x", &[6, 4]), ("tok", &[3, 4]), ("wq", &[4, 4]), ("wk", &[4, 4]), ("wv", &[4, 4])], |p| {
            let mut g = Graph::new();
            let x = g.param("x", p.get("x")?);
            let tok = g.param("tok", p.get("tok")?);
            let wq = g.param("wq", p.get("wq")?);
            let wk = g.param("wk", p.get("wk")?);
            let wv = g.param("wv", p.get("wv")?);
            let q = g.matmul(x, wq)?;
            let k = g.matmul(tok, wk)?;
            let v = g.matmul(tok, wv)?;
            let kt = g.transpose(k)?;
            let s = g.matmul(q, kt)?;
            let s = g.scale(s, 0.5)?;
            let a = g.softmax_rows(s)?;
            let o = g.matmul(a, v)?;
            let l = probe(&mut g, o)?;
            Ok((g, l))
        });
    }

    #[test]
    fn gradcheck_resampling_and_layout_ops() {
        assert_grads(&[("a", &[4, 4, 4]), ("b", &[2, 8, 8])], |p| {
            let mut g = Graph::new();
            let a = g.param("a", p.get("a")?);
            let b = g.param("b", p.get("b")?);
            let up = g.upsample2(a)?;
            let bp = g.avg_pool(b, 2, 2)?;
            let bu = g.upsample2(bp)?;
            let cat = g.concat_channels(up, bu)?;
            let d2s = g.depth_to_space(a, 2)?;
            let r = g.reshape(d2s, &[8, 8])?;
            let l1 = probe(&mut g, cat)?;
            let l2 = probe(&mut g, r)?;
            let l = g.add(l1, l2)?;
            Ok((g, l))
        });
    }

    #[test]
    fn gradcheck_losses() {
        assert_grads(&[("a", &[3, 5]), ("b", &[3, 5])], |p| {
            let mut g = Graph::new();
            let a = g.param("a", p.get("a")?);
            let b = g.param("b", p.get("b")?);
            let m = g.mse(a, b)?;
            let d = g.sub(a, b)?;
            let mu = g.mean(d)?;
            let sq = g.mul(mu, mu)?;
            let l = g.add(m, sq)?;
            Ok((g, l))
        });
    }

    #[test]
    fn depth_to_space_layout() {
        let x = Tensor::<f64>::new([4, 1, 1], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let mut g = Graph::new();
        let v = g.constant(&x);
        let y = g.depth_to_space(v, 2).unwrap();
        assert_eq!(g.shape(y), &[1, 2, 2]);
        assert_eq!(g.value(y).data(), &[1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn repeated_runs_are_bit_identical() {
        let p = store(&[("x", &[3, 6, 6]), ("w", &[4, 3, 3, 3])], 4).cast::<f32>();
        let run = || {
            let mut g = Graph::new();
            let x = g.param("x", p.get("x").unwrap());
            let w = g.param("w", p.get("w").unwrap());
            let y = g.conv2d(x, w, 1, 1).unwrap();
            let y = g.silu(y).unwrap();
            let s = g.sum(y).unwrap();
            let gr = g.backward(s).unwrap();
            (g.value(y).clone(), gr.into_params())
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn large_magnitude_inputs_stay_finite() {
        let x = Tensor::<f32>::from_fn([4, 2, 2], |i| if i % 2 == 0 { 1e4 } else { -1e4 });
        let mut g = Graph::new();
        let v = g.variable(x);
        let y = g.silu(v).unwrap();
        let n = g.group_norm(y, 1, 1e-5).unwrap();
        let r = g.reshape(n, &[4, 4]).unwrap();
        let s = g.softmax_rows(r).unwrap();
        let l = g.sum(s).unwrap();
        assert!(g.value(s).is_finite());
        let gr = g.backward(l).unwrap();
        assert!(gr.wrt(v).unwrap().is_finite());
    }
}
