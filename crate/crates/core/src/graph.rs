//! Tape-based reverse-mode automatic differentiation.
//!
//! A [`Graph`] records every operation eagerly: values are computed as soon
//! as an op is pushed, and the op itself is kept so [`Graph::backward`] can
//! walk the tape in reverse. Handles are plain indices ([`Var`]), so a graph
//! is cheap to build per batch and drop afterwards.
//!
//! Non-smooth points (`|x|` at zero, ReLU at zero, a Euclidean norm of a zero
//! vector) take subgradient 0.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::kernels::{self, ConvGeom};
use crate::real::Real;
use crate::tensor::Tensor;

/// Handle to a node recorded on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    MatMul {
        a: Var,
        b: Var,
        batch: usize,
        p: usize,
        q: usize,
        r: usize,
        shared_rhs: bool,
    },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddBias {
        x: Var,
        bias: Var,
    },
    Scale {
        x: Var,
        factor: T,
    },
    Conv2d {
        input: Var,
        kernel: Var,
        bias: Var,
        geom: ConvGeom,
        batch: usize,
        cout: usize,
    },
    AvgPool {
        input: Var,
        out: usize,
    },
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        normalized: Vec<T>,
        rstd: Vec<T>,
    },
    Gelu(Var),
    Relu(Var),
    TransposeLast2(Var),
    Reshape(Var),
    Concat {
        inputs: Vec<Var>,
        axis: usize,
    },
    MeanAll(Var),
    MeanLeading(Var),
    L1 {
        pred: Var,
        target: Var,
    },
    FeatureL2 {
        a: Vec<Var>,
        b: Vec<Var>,
        squared: bool,
    },
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Gradients of leaf nodes, indexed by [`Var`].
#[derive(Debug, Clone)]
pub struct Gradients<T = f32> {
    grads: Vec<Option<Vec<T>>>,
}

impl<T: Real> Default for Gradients<T> {
    fn default() -> Self {
        Gradients { grads: Vec::new() }
    }
}

impl<T: Real> Gradients<T> {
    pub fn new() -> Self {
        Self::default()
    }

    /// Gradient of a leaf, or `None` when the leaf was off the loss path.
    pub fn get(&self, var: Var) -> Option<&[T]> {
        self.grads.get(var.0).and_then(|g| g.as_deref())
    }

    pub fn take(&mut self, var: Var) -> Option<Vec<T>> {
        self.grads.get_mut(var.0).and_then(|g| g.take())
    }
}

/// Recorded computation.
#[derive(Debug)]
pub struct Graph<T = f32> {
    nodes: Vec<Node<T>>,
}

impl<T: Real> Default for Graph<T> {
    fn default() -> Self {
        Graph { nodes: Vec::new() }
    }
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Drops every node recorded after the first `len`, invalidating their vars.
    pub fn truncate(&mut self, len: usize) {
        self.nodes.truncate(len);
    }

    pub fn value(&self, var: Var) -> &Tensor<T> {
        &self.nodes[var.0].value
    }

    pub fn shape(&self, var: Var) -> &[usize] {
        self.nodes[var.0].value.shape()
    }

    pub fn requires_grad(&self, var: Var) -> bool {
        self.nodes[var.0].requires_grad
    }

    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// A trainable leaf.
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, true)
    }

    /// A leaf that never receives gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    fn push(&mut self, op_name: &'static str, value: Tensor<T>, op: Op<T>, inputs: &[Var]) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite { op: op_name });
        }
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Matrix product over the last two axes.
    ///
    /// Leading axes of `a` and `b` must be equal; alternatively `b` may be a
    /// plain rank-2 matrix applied to every leading slice of `a`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let sa = self.shape(a).to_vec();
        let sb = self.shape(b).to_vec();
        if sa.len() < 2 || sb.len() < 2 {
            return Err(Error::shape("matmul", "operands must have rank >= 2", &[&sa, &sb]));
        }
        let (p, q) = (sa[sa.len() - 2], sa[sa.len() - 1]);
        let (qb, r) = (sb[sb.len() - 2], sb[sb.len() - 1]);
        if q != qb {
            return Err(Error::shape("matmul", "inner dimensions differ", &[&sa, &sb]));
        }
        let lead_a = &sa[..sa.len() - 2];
        let lead_b = &sb[..sb.len() - 2];
        let shared_rhs = lead_b.is_empty();
        if !shared_rhs && lead_a != lead_b {
            return Err(Error::shape("matmul", "leading dimensions differ", &[&sa, &sb]));
        }
        let batch: usize = lead_a.iter().product();
        let mut out = vec![T::ZERO; batch * p * r];
        {
            let av = self.value(a).data();
            let bv = self.value(b).data();
            for n in 0..batch {
                let b_off = if shared_rhs { 0 } else { n * q * r };
                kernels::matmul_acc(
                    &av[n * p * q..(n + 1) * p * q],
                    &bv[b_off..b_off + q * r],
                    &mut out[n * p * r..(n + 1) * p * r],
                    p,
                    q,
                    r,
                );
            }
        }
        let mut shape = lead_a.to_vec();
        shape.extend_from_slice(&[p, r]);
        self.push(
            "matmul",
            Tensor::from_parts(shape, out),
            Op::MatMul {
                a,
                b,
                batch,
                p,
                q,
                r,
                shared_rhs,
            },
            &[a, b],
        )
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape(op, "operand shapes differ", &[self.shape(a), self.shape(b)]));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let data = zip_map(self.value(a).data(), self.value(b).data(), |x, y| x + y);
        let shape = self.shape(a).to_vec();
        self.push("add", Tensor::from_parts(shape, data), Op::Add(a, b), &[a, b])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let data = zip_map(self.value(a).data(), self.value(b).data(), |x, y| x - y);
        let shape = self.shape(a).to_vec();
        self.push("sub", Tensor::from_parts(shape, data), Op::Sub(a, b), &[a, b])
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let data = zip_map(self.value(a).data(), self.value(b).data(), |x, y| x * y);
        let shape = self.shape(a).to_vec();
        self.push("mul", Tensor::from_parts(shape, data), Op::Mul(a, b), &[a, b])
    }

    /// Adds a vector along the last axis of `x`.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let sx = self.shape(x);
        let sb = self.shape(bias);
        let d = *sx.last().unwrap();
        if sb.len() != 1 || sb[0] != d {
            return Err(Error::shape("add_bias", "bias must match the last axis", &[sx, sb]));
        }
        let bv = self.value(bias).data();
        let mut data = self.value(x).data().to_vec();
        for row in data.chunks_mut(d) {
            kernels::add_into(row, bv);
        }
        let shape = sx.to_vec();
        self.push("add_bias", Tensor::from_parts(shape, data), Op::AddBias { x, bias }, &[x, bias])
    }

    pub fn scale(&mut self, x: Var, factor: T) -> Result<Var> {
        let data = self.value(x).data().iter().map(|&v| v * factor).collect();
        let shape = self.shape(x).to_vec();
        self.push("scale", Tensor::from_parts(shape, data), Op::Scale { x, factor }, &[x])
    }

    /// `x · w + b` with `w: [in, out]`, `b: [out]`, applied to every row of `x`.
    pub fn linear(&mut self, x: Var, weight: Var, bias: Var) -> Result<Var> {
        let y = self.matmul(x, weight)?;
        self.add_bias(y, bias)
    }

    /// 2-D cross-correlation over `[B, Cin, H, W]` with kernel `[Cout, Cin, kH, kW]`.
    pub fn conv2d(&mut self, input: Var, kernel: Var, bias: Var, stride: usize, padding: usize) -> Result<Var> {
        let si = self.shape(input).to_vec();
        let sk = self.shape(kernel).to_vec();
        let sb = self.shape(bias).to_vec();
        if si.len() != 4 || sk.len() != 4 {
            return Err(Error::shape("conv2d", "input and kernel must be rank 4", &[&si, &sk]));
        }
        if stride == 0 {
            return Err(Error::shape("conv2d", "stride must be positive", &[&si, &sk]));
        }
        let (batch, cin, h, w) = (si[0], si[1], si[2], si[3]);
        let (cout, kcin, kh, kw) = (sk[0], sk[1], sk[2], sk[3]);
        if kcin != cin {
            return Err(Error::shape("conv2d", "kernel input channels differ from input", &[&si, &sk]));
        }
        if sb != [cout] {
            return Err(Error::shape("conv2d", "bias must have one entry per output channel", &[&sk, &sb]));
        }
        if h + 2 * padding < kh || w + 2 * padding < kw {
            return Err(Error::shape("conv2d", "kernel larger than padded input", &[&si, &sk]));
        }
        let geom = ConvGeom {
            cin,
            h,
            w,
            kh,
            kw,
            stride,
            padding,
            ho: (h + 2 * padding - kh) / stride + 1,
            wo: (w + 2 * padding - kw) / stride + 1,
        };
        let (rows, cols) = (geom.col_rows(), geom.col_cols());
        let mut col = vec![T::ZERO; rows * cols];
        let mut out = vec![T::ZERO; batch * cout * cols];
        {
            let iv = self.value(input).data();
            let kv = self.value(kernel).data();
            let bv = self.value(bias).data();
            for n in 0..batch {
                kernels::im2col(&iv[n * cin * h * w..(n + 1) * cin * h * w], &geom, &mut col);
                let o = &mut out[n * cout * cols..(n + 1) * cout * cols];
                for (c, plane) in o.chunks_mut(cols).enumerate() {
                    plane.fill(bv[c]);
                }
                kernels::matmul_acc(kv, &col, o, cout, rows, cols);
            }
        }
        self.push(
            "conv2d",
            Tensor::from_parts(vec![batch, cout, geom.ho, geom.wo], out),
            Op::Conv2d {
                input,
                kernel,
                bias,
                geom,
                batch,
                cout,
            },
            &[input, kernel, bias],
        )
    }

    /// Averages `[B, C, H, W]` onto an `out × out` grid of contiguous windows.
    pub fn adaptive_avg_pool2d(&mut self, input: Var, out: usize) -> Result<Var> {
        let si = self.shape(input).to_vec();
        if si.len() != 4 {
            return Err(Error::shape("adaptive_avg_pool2d", "input must be rank 4", &[&si]));
        }
        let (planes, h, w) = (si[0] * si[1], si[2], si[3]);
        if out == 0 || out > h || out > w {
            return Err(Error::shape(
                "adaptive_avg_pool2d",
                format!("cannot pool {h}x{w} onto {out}x{out}"),
                &[&si],
            ));
        }
        let iv = self.value(input).data();
        let mut data = vec![T::ZERO; planes * out * out];
        for pl in 0..planes {
            let src = &iv[pl * h * w..(pl + 1) * h * w];
            for oy in 0..out {
                let (y0, y1) = kernels::pool_window(oy, h, out);
                for ox in 0..out {
                    let (x0, x1) = kernels::pool_window(ox, w, out);
                    let mut acc = T::ZERO;
                    for y in y0..y1 {
                        for x in x0..x1 {
                            acc += src[y * w + x];
                        }
                    }
                    data[pl * out * out + oy * out + ox] = acc / T::from_usize((y1 - y0) * (x1 - x0));
                }
            }
        }
        self.push(
            "adaptive_avg_pool2d",
            Tensor::from_parts(vec![si[0], si[1], out, out], data),
            Op::AvgPool { input, out },
            &[input],
        )
    }

    /// Normalises every slice along the last axis, then applies `gamma`/`beta`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: T) -> Result<Var> {
        let sx = self.shape(x).to_vec();
        let d = *sx.last().unwrap();
        if self.shape(gamma) != [d] || self.shape(beta) != [d] {
            return Err(Error::shape(
                "layer_norm",
                "gamma and beta must match the last axis",
                &[&sx, self.shape(gamma), self.shape(beta)],
            ));
        }
        let xv = self.value(x).data();
        let gv = self.value(gamma).data();
        let bv = self.value(beta).data();
        let rows = xv.len() / d;
        let mut normalized = vec![T::ZERO; xv.len()];
        let mut rstd = vec![T::ZERO; rows];
        let mut out = vec![T::ZERO; xv.len()];
        for r in 0..rows {
            let row = &xv[r * d..(r + 1) * d];
            let mean = row.iter().copied().sum::<T>() / T::from_usize(d);
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / T::from_usize(d);
            let rs = T::ONE / (var + eps).sqrt();
            rstd[r] = rs;
            for i in 0..d {
                let n = (row[i] - mean) * rs;
                normalized[r * d + i] = n;
                out[r * d + i] = n * gv[i] + bv[i];
            }
        }
        self.push(
            "layer_norm",
            Tensor::from_parts(sx, out),
            Op::LayerNorm {
                x,
                gamma,
                beta,
                normalized,
                rstd,
            },
            &[x, gamma, beta],
        )
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, x: Var) -> Result<Var> {
        let data = self.value(x).data().iter().map(|&v| kernels::gelu(v)).collect();
        let shape = self.shape(x).to_vec();
        self.push("gelu", Tensor::from_parts(shape, data), Op::Gelu(x), &[x])
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let data = self.value(x).data().iter().map(|&v| v.max(T::ZERO)).collect();
        let shape = self.shape(x).to_vec();
        self.push("relu", Tensor::from_parts(shape, data), Op::Relu(x), &[x])
    }

    /// Swaps the last two axes.
    pub fn transpose_last2(&mut self, x: Var) -> Result<Var> {
        let sx = self.shape(x).to_vec();
        if sx.len() < 2 {
            return Err(Error::shape("transpose_last2", "rank must be >= 2", &[&sx]));
        }
        let (r, c) = (sx[sx.len() - 2], sx[sx.len() - 1]);
        let data = transpose_batched(self.value(x).data(), r, c);
        let mut shape = sx;
        let n = shape.len();
        shape.swap(n - 2, n - 1);
        self.push("transpose_last2", Tensor::from_parts(shape, data), Op::TransposeLast2(x), &[x])
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(x).reshape(shape)?;
        self.push("reshape", value, Op::Reshape(x), &[x])
    }

    /// Joins tensors along `axis`; all other axes must agree.
    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        let Some(&first) = inputs.first() else {
            return Err(Error::shape("concat", "no inputs", &[]));
        };
        let s0 = self.shape(first).to_vec();
        if axis >= s0.len() {
            return Err(Error::shape("concat", format!("axis {axis} out of range"), &[&s0]));
        }
        let mut joined = 0;
        for &v in inputs {
            let s = self.shape(v);
            let compatible = s.len() == s0.len()
                && s.iter().zip(&s0).enumerate().all(|(i, (a, b))| i == axis || a == b);
            if !compatible {
                let shapes: Vec<&[usize]> = inputs.iter().map(|&v| self.shape(v)).collect();
                return Err(Error::shape("concat", "non-join dimensions differ", &shapes));
            }
            joined += s[axis];
        }
        let outer: usize = s0[..axis].iter().product();
        let inner: usize = s0[axis + 1..].iter().product();
        let mut data = Vec::with_capacity(outer * joined * inner);
        for o in 0..outer {
            for &v in inputs {
                let len = self.shape(v)[axis] * inner;
                data.extend_from_slice(&self.value(v).data()[o * len..(o + 1) * len]);
            }
        }
        let mut shape = s0;
        shape[axis] = joined;
        self.push(
            "concat",
            Tensor::from_parts(shape, data),
            Op::Concat {
                inputs: inputs.to_vec(),
                axis,
            },
            inputs,
        )
    }

    /// Mean of every element, as a `[1]` tensor.
    pub fn mean_all(&mut self, x: Var) -> Result<Var> {
        let v = self.value(x);
        let mean = v.data().iter().copied().sum::<T>() / T::from_usize(v.numel());
        self.push("mean_all", Tensor::scalar(mean), Op::MeanAll(x), &[x])
    }

    /// Mean over every axis except the last: `[..., D] -> [D]`.
    pub fn mean_leading(&mut self, x: Var) -> Result<Var> {
        let d = *self.shape(x).last().unwrap();
        let xv = self.value(x).data();
        let rows = xv.len() / d;
        let mut out = vec![T::ZERO; d];
        for row in xv.chunks(d) {
            kernels::add_into(&mut out, row);
        }
        for v in &mut out {
            *v /= T::from_usize(rows);
        }
        self.push("mean_leading", Tensor::from_parts(vec![d], out), Op::MeanLeading(x), &[x])
    }

    /// `(1/B)·Σ|pred − target|` over rank-1 tensors of length `B`.
    pub fn l1_loss(&mut self, pred: Var, target: Var) -> Result<Var> {
        let sp = self.shape(pred);
        let st = self.shape(target);
        if sp.len() != 1 || sp != st {
            return Err(Error::shape("l1_loss", "pred and target must be equal-length vectors", &[sp, st]));
        }
        let pv = self.value(pred).data();
        let tv = self.value(target).data();
        let loss = pv.iter().zip(tv).map(|(&p, &t)| (p - t).abs()).sum::<T>() / T::from_usize(pv.len());
        self.push("l1_loss", Tensor::scalar(loss), Op::L1 { pred, target }, &[pred, target])
    }

    /// Layer-paired feature distance.
    ///
    /// Each tensor's leading axis is the batch axis. For every sample and
    /// layer the flattened difference contributes its Euclidean norm (or
    /// squared norm when `squared`); contributions are summed over layers
    /// and averaged over the batch.
    pub fn feature_l2_loss(&mut self, fa: &[Var], fb: &[Var], squared: bool) -> Result<Var> {
        if fa.len() != fb.len() {
            return Err(Error::DistillationWiring {
                layer: fa.len().min(fb.len()),
                detail: format!("{} features against {}", fa.len(), fb.len()),
            });
        }
        if fa.is_empty() {
            return Err(Error::EmptyBatch { op: "feature_l2_loss" });
        }
        let batch = self.shape(fa[0])[0];
        let mut total = T::ZERO;
        for (j, (&a, &b)) in fa.iter().zip(fb).enumerate() {
            if self.shape(a) != self.shape(b) || self.shape(a)[0] != batch {
                return Err(Error::DistillationWiring {
                    layer: j,
                    detail: format!("shapes {:?} and {:?}", self.shape(a), self.shape(b)),
                });
            }
            let av = self.value(a).data();
            let bv = self.value(b).data();
            let per = av.len() / batch;
            for i in 0..batch {
                let sq: T = av[i * per..(i + 1) * per]
                    .iter()
                    .zip(&bv[i * per..(i + 1) * per])
                    .map(|(&x, &y)| (x - y) * (x - y))
                    .sum();
                total += if squared { sq } else { sq.sqrt() };
            }
        }
        let mut inputs = fa.to_vec();
        inputs.extend_from_slice(fb);
        self.push(
            "feature_l2_loss",
            Tensor::scalar(total / T::from_usize(batch)),
            Op::FeatureL2 {
                a: fa.to_vec(),
                b: fb.to_vec(),
                squared,
            },
            &inputs,
        )
    }

    /// Reverse pass from a scalar loss; returns gradients of all trainable leaves.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let mut grads = Gradients::new();
        self.backward_into(loss, &mut grads)?;
        Ok(grads)
    }

    /// Like [`backward`](Self::backward) but adds into an existing gradient map,
    /// so repeated calls accumulate.
    pub fn backward_into(&self, loss: Var, acc: &mut Gradients<T>) -> Result<()> {
        if self.value(loss).numel() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Vec<T>>> = Vec::new();
        grads.resize_with(loss.0 + 1, || None);
        grads[loss.0] = Some(vec![T::ONE]);

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            if matches!(node.op, Op::Leaf) {
                grads[idx] = Some(g);
                continue;
            }
            self.propagate(idx, &g, &mut grads)?;
        }

        if acc.grads.len() < grads.len() {
            acc.grads.resize_with(grads.len(), || None);
        }
        for (idx, g) in grads.into_iter().enumerate() {
            let Some(g) = g else { continue };
            if g.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite { op: "backward" });
            }
            match &mut acc.grads[idx] {
                Some(existing) => kernels::add_into(existing, &g),
                slot @ None => *slot = Some(g),
            }
        }
        Ok(())
    }

    fn propagate(&self, idx: usize, g: &[T], grads: &mut [Option<Vec<T>>]) -> Result<()> {
        let node = &self.nodes[idx];
        match &node.op {
            Op::Leaf => {}
            Op::MatMul {
                a,
                b,
                batch,
                p,
                q,
                r,
                shared_rhs,
            } => {
                let (p, q, r) = (*p, *q, *r);
                let av = self.value(*a).data();
                let bv = self.value(*b).data();
                if self.requires_grad(*a) {
                    let ga = self.grad_slot(grads, *a);
                    for n in 0..*batch {
                        let b_off = if *shared_rhs { 0 } else { n * q * r };
                        kernels::matmul_acc_bt(
                            &g[n * p * r..(n + 1) * p * r],
                            &bv[b_off..b_off + q * r],
                            &mut ga[n * p * q..(n + 1) * p * q],
                            p,
                            q,
                            r,
                        );
                    }
                }
                if self.requires_grad(*b) {
                    let gb = self.grad_slot(grads, *b);
                    for n in 0..*batch {
                        let b_off = if *shared_rhs { 0 } else { n * q * r };
                        kernels::matmul_acc_at(
                            &av[n * p * q..(n + 1) * p * q],
                            &g[n * p * r..(n + 1) * p * r],
                            &mut gb[b_off..b_off + q * r],
                            p,
                            q,
                            r,
                        );
                    }
                }
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g);
                self.accumulate(grads, *b, g);
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, g);
                if self.requires_grad(*b) {
                    let gb = self.grad_slot(grads, *b);
                    for (d, &s) in gb.iter_mut().zip(g) {
                        *d -= s;
                    }
                }
            }
            Op::Mul(a, b) => {
                for (this, other) in [(*a, *b), (*b, *a)] {
                    if self.requires_grad(this) {
                        let ov = self.value(other).data();
                        let gt = self.grad_slot(grads, this);
                        for i in 0..g.len() {
                            gt[i] += g[i] * ov[i];
                        }
                    }
                }
            }
            Op::AddBias { x, bias } => {
                self.accumulate(grads, *x, g);
                if self.requires_grad(*bias) {
                    let d = self.shape(*bias)[0];
                    let gb = self.grad_slot(grads, *bias);
                    for row in g.chunks(d) {
                        kernels::add_into(gb, row);
                    }
                }
            }
            Op::Scale { x, factor } => {
                if self.requires_grad(*x) {
                    let gx = self.grad_slot(grads, *x);
                    kernels::axpy(*factor, g, gx);
                }
            }
            Op::Conv2d {
                input,
                kernel,
                bias,
                geom,
                batch,
                cout,
            } => {
                let (rows, cols) = (geom.col_rows(), geom.col_cols());
                let plane = geom.cin * geom.h * geom.w;
                let iv = self.value(*input).data();
                let kv = self.value(*kernel).data();
                let need_input = self.requires_grad(*input);
                let need_kernel = self.requires_grad(*kernel);
                if self.requires_grad(*bias) {
                    let gb = self.grad_slot(grads, *bias);
                    for n in 0..*batch {
                        for c in 0..*cout {
                            let start = (n * cout + c) * cols;
                            gb[c] += g[start..start + cols].iter().copied().sum::<T>();
                        }
                    }
                }
                if need_input || need_kernel {
                    let mut col = vec![T::ZERO; rows * cols];
                    let mut gcol = vec![T::ZERO; rows * cols];
                    let mut gk = if need_kernel { vec![T::ZERO; kv.len()] } else { Vec::new() };
                    let mut gi = if need_input { vec![T::ZERO; iv.len()] } else { Vec::new() };
                    for n in 0..*batch {
                        let go = &g[n * cout * cols..(n + 1) * cout * cols];
                        if need_kernel {
                            kernels::im2col(&iv[n * plane..(n + 1) * plane], geom, &mut col);
                            kernels::matmul_acc_bt(go, &col, &mut gk, *cout, rows, cols);
                        }
                        if need_input {
                            gcol.fill(T::ZERO);
                            kernels::matmul_acc_at(kv, go, &mut gcol, *cout, rows, cols);
                            kernels::col2im_acc(&gcol, geom, &mut gi[n * plane..(n + 1) * plane]);
                        }
                    }
                    if need_kernel {
                        self.accumulate(grads, *kernel, &gk);
                    }
                    if need_input {
                        self.accumulate(grads, *input, &gi);
                    }
                }
            }
            Op::AvgPool { input, out } => {
                if self.requires_grad(*input) {
                    let si = self.shape(*input);
                    let (planes, h, w) = (si[0] * si[1], si[2], si[3]);
                    let out = *out;
                    let gi = self.grad_slot(grads, *input);
                    for pl in 0..planes {
                        for oy in 0..out {
                            let (y0, y1) = kernels::pool_window(oy, h, out);
                            for ox in 0..out {
                                let (x0, x1) = kernels::pool_window(ox, w, out);
                                let share = g[pl * out * out + oy * out + ox] / T::from_usize((y1 - y0) * (x1 - x0));
                                for y in y0..y1 {
                                    for x in x0..x1 {
                                        gi[pl * h * w + y * w + x] += share;
                                    }
                                }
                            }
                        }
                    }
                }
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                normalized,
                rstd,
            } => {
                let d = self.shape(*gamma)[0];
                let gv = self.value(*gamma).data();
                if self.requires_grad(*gamma) {
                    let gg = self.grad_slot(grads, *gamma);
                    for (grow, nrow) in g.chunks(d).zip(normalized.chunks(d)) {
                        for i in 0..d {
                            gg[i] += grow[i] * nrow[i];
                        }
                    }
                }
                if self.requires_grad(*beta) {
                    let gb = self.grad_slot(grads, *beta);
                    for grow in g.chunks(d) {
                        kernels::add_into(gb, grow);
                    }
                }
                if self.requires_grad(*x) {
                    let gx = self.grad_slot(grads, *x);
                    let mut dxhat = vec![T::ZERO; d];
                    for (r, (grow, nrow)) in g.chunks(d).zip(normalized.chunks(d)).enumerate() {
                        let mut mean_d = T::ZERO;
                        let mut mean_dn = T::ZERO;
                        for i in 0..d {
                            dxhat[i] = grow[i] * gv[i];
                            mean_d += dxhat[i];
                            mean_dn += dxhat[i] * nrow[i];
                        }
                        mean_d /= T::from_usize(d);
                        mean_dn /= T::from_usize(d);
                        let out = &mut gx[r * d..(r + 1) * d];
                        for i in 0..d {
                            out[i] += rstd[r] * (dxhat[i] - mean_d - nrow[i] * mean_dn);
                        }
                    }
                }
            }
            Op::Gelu(x) => {
                if self.requires_grad(*x) {
                    let xv = self.value(*x).data();
                    let gx = self.grad_slot(grads, *x);
                    for i in 0..g.len() {
                        gx[i] += g[i] * kernels::gelu_grad(xv[i]);
                    }
                }
            }
            Op::Relu(x) => {
                if self.requires_grad(*x) {
                    let xv = self.value(*x).data();
                    let gx = self.grad_slot(grads, *x);
                    for i in 0..g.len() {
                        if xv[i] > T::ZERO {
                            gx[i] += g[i];
                        }
                    }
                }
            }
            Op::TransposeLast2(x) => {
                if self.requires_grad(*x) {
                    let s = node.value.shape();
                    let (r, c) = (s[s.len() - 2], s[s.len() - 1]);
                    let back = transpose_batched(g, r, c);
                    self.accumulate(grads, *x, &back);
                }
            }
            Op::Reshape(x) => self.accumulate(grads, *x, g),
            Op::Concat { inputs, axis } => {
                let s = node.value.shape();
                let outer: usize = s[..*axis].iter().product();
                let inner: usize = s[axis + 1..].iter().product();
                let total = s[*axis] * inner;
                let mut offset = 0;
                for &v in inputs {
                    let len = self.shape(v)[*axis] * inner;
                    if self.requires_grad(v) {
                        let gv = self.grad_slot(grads, v);
                        for o in 0..outer {
                            kernels::add_into(
                                &mut gv[o * len..(o + 1) * len],
                                &g[o * total + offset..o * total + offset + len],
                            );
                        }
                    }
                    offset += len;
                }
            }
            Op::MeanAll(x) => {
                if self.requires_grad(*x) {
                    let share = g[0] / T::from_usize(self.value(*x).numel());
                    for v in self.grad_slot(grads, *x).iter_mut() {
                        *v += share;
                    }
                }
            }
            Op::MeanLeading(x) => {
                if self.requires_grad(*x) {
                    let d = g.len();
                    let gx = self.grad_slot(grads, *x);
                    let rows = gx.len() / d;
                    for row in gx.chunks_mut(d) {
                        for i in 0..d {
                            row[i] += g[i] / T::from_usize(rows);
                        }
                    }
                }
            }
            Op::L1 { pred, target } => {
                let pv = self.value(*pred).data();
                let tv = self.value(*target).data();
                let n = T::from_usize(pv.len());
                let signs: Vec<T> = pv
                    .iter()
                    .zip(tv)
                    .map(|(&p, &t)| {
                        let d = p - t;
                        if d > T::ZERO {
                            g[0] / n
                        } else if d < T::ZERO {
                            -g[0] / n
                        } else {
                            T::ZERO
                        }
                    })
                    .collect();
                self.accumulate(grads, *pred, &signs);
                if self.requires_grad(*target) {
                    let gt = self.grad_slot(grads, *target);
                    for (d, &s) in gt.iter_mut().zip(&signs) {
                        *d -= s;
                    }
                }
            }
            Op::FeatureL2 { a, b, squared } => {
                for (&fa, &fb) in a.iter().zip(b) {
                    let av = self.value(fa).data();
                    let bv = self.value(fb).data();
                    let batch = self.shape(fa)[0];
                    let per = av.len() / batch;
                    let mut ga = vec![T::ZERO; av.len()];
                    for i in 0..batch {
                        let ra = &av[i * per..(i + 1) * per];
                        let rb = &bv[i * per..(i + 1) * per];
                        let nb = T::from_usize(batch);
                        let coef = if *squared {
                            T::from_f64(2.0) * g[0] / nb
                        } else {
                            let norm = ra.iter().zip(rb).map(|(&x, &y)| (x - y) * (x - y)).sum::<T>().sqrt();
                            if norm > T::ZERO {
                                g[0] / (nb * norm)
                            } else {
                                T::ZERO
                            }
                        };
                        for k in 0..per {
                            ga[i * per + k] = coef * (ra[k] - rb[k]);
                        }
                    }
                    self.accumulate(grads, fa, &ga);
                    if self.requires_grad(fb) {
                        let gb = self.grad_slot(grads, fb);
                        for (d, &s) in gb.iter_mut().zip(&ga) {
                            *d -= s;
                        }
                    }
                }
            }
        }
        Ok(())
    }

    fn grad_slot<'g>(&self, grads: &'g mut [Option<Vec<T>>], var: Var) -> &'g mut Vec<T> {
        let n = self.value(var).numel();
        grads[var.0].get_or_insert_with(|| vec![T::ZERO; n])
    }

    fn accumulate(&self, grads: &mut [Option<Vec<T>>], var: Var, g: &[T]) {
        if self.requires_grad(var) {
            kernels::add_into(self.grad_slot(grads, var), g);
        }
    }
}

fn zip_map<T: Real>(a: &[T], b: &[T], f: impl Fn(T, T) -> T) -> Vec<T> {
    a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect()
}

fn transpose_batched<T: Real>(src: &[T], r: usize, c: usize) -> Vec<T> {
    let mut out = vec![T::ZERO; src.len()];
    for (s, d) in src.chunks(r * c).zip(out.chunks_mut(r * c)) {
        for i in 0..r {
            for j in 0..c {
                d[j * r + i] = s[i * c + j];
            }
        }
    }
    out
}
