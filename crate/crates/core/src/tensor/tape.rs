//! Computation tape and the operations recorded on it.
//!
//! Every operation evaluates eagerly and pushes a node holding its value and
//! whatever it needs for the backward sweep. [`Tape::backward`] walks the nodes
//! in reverse insertion order, which is a valid topological order because a
//! node can only refer to nodes created before it.

use super::kernels::{self, TimeConvGeom};
use super::{Scalar, Tensor};
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Stride, dilation and padding of a temporal convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvSpec {
    pub stride: usize,
    pub dilation: usize,
    /// Pad `(K - 1) * dilation / 2` zeros on both ends of the time axis.
    pub same_pad: bool,
}

impl ConvSpec {
    pub fn same(stride: usize, dilation: usize) -> Self {
        Self { stride, dilation, same_pad: true }
    }
}

impl Default for ConvSpec {
    fn default() -> Self {
        Self::same(1, 1)
    }
}

/// Per-channel batch statistics produced by a training-mode batch norm.
#[derive(Clone, Debug, PartialEq)]
pub struct BnStats<T> {
    pub mean: Vec<T>,
    /// Unbiased variance estimate, as used for running statistics.
    pub var: Vec<T>,
}

enum Op<T> {
    Leaf,
    Add(Var, Var),
    AddBroadcast(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    Sum(Var),
    Relu(Var),
    Reshape(Var),
    Permute(Var, Vec<usize>),
    Concat(Vec<Var>),
    SliceChannels {
        x: Var,
        start: usize,
    },
    MatMul(Var, Var),
    Conv {
        x: Var,
        w: Var,
        b: Option<Var>,
        geom: TimeConvGeom,
        c_out: usize,
        /// Per-sample column matrices, kept when the kernel needs a gradient.
        cols: Option<Vec<T>>,
    },
    JointMix {
        x: Var,
        mix: Var,
        per_sample: bool,
        aggregate: bool,
    },
    Gram(Var, Var),
    SoftmaxRows(Var),
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<T>,
        inv_std: Vec<T>,
        train: bool,
    },
    MaxPoolTime {
        x: Var,
        argmax: Vec<usize>,
    },
    GlobalAvgPool {
        x: Var,
        persons: usize,
    },
    CrossEntropy {
        logits: Var,
        labels: Vec<usize>,
        probs: Vec<T>,
    },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
    grad: Option<Tensor<T>>,
}

/// Records a forward computation so it can be differentiated.
pub struct Tape<T: Scalar = f32> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Adds an input tensor. Gradients are only tracked when `requires_grad`.
    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op: Op::Leaf, requires_grad, grad: None });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
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

    /// Accumulated gradient of a leaf, present once a backward pass reached it.
    pub fn grad(&self, v: Var) -> Option<&Tensor<T>> {
        self.nodes[v.0].grad.as_ref()
    }

    pub fn zero_grads(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node { value, op, requires_grad, grad: None });
        Var(self.nodes.len() - 1)
    }

    fn data(&self, v: Var) -> &[T] {
        self.nodes[v.0].value.data()
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::dim(format!(
                "add: shapes {:?} and {:?} differ",
                self.shape(a),
                self.shape(b)
            )));
        }
        let data = self.data(a).iter().zip(self.data(b)).map(|(&x, &y)| x + y).collect();
        let value = Tensor::new(self.shape(a).to_vec(), data)?;
        Ok(self.push(value, Op::Add(a, b), &[a, b]))
    }

    /// `a + b` where the shape of `b` is a trailing suffix of the shape of `a`.
    pub fn add_broadcast(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sb.len() > sa.len() || sa[sa.len() - sb.len()..] != *sb {
            return Err(Error::dim(format!("add_broadcast: {sb:?} is not a suffix of {sa:?}")));
        }
        let bd = self.data(b);
        let n = bd.len();
        let data = self.data(a).iter().enumerate().map(|(i, &x)| x + bd[i % n]).collect();
        let value = Tensor::new(sa.to_vec(), data)?;
        Ok(self.push(value, Op::AddBroadcast(a, b), &[a, b]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::dim(format!(
                "mul: shapes {:?} and {:?} differ",
                self.shape(a),
                self.shape(b)
            )));
        }
        let data = self.data(a).iter().zip(self.data(b)).map(|(&x, &y)| x * y).collect();
        let value = Tensor::new(self.shape(a).to_vec(), data)?;
        Ok(self.push(value, Op::Mul(a, b), &[a, b]))
    }

    pub fn scale(&mut self, a: Var, c: T) -> Var {
        let data = self.data(a).iter().map(|&x| x * c).collect();
        let value = Tensor::new(self.shape(a).to_vec(), data).expect("same shape");
        self.push(value, Op::Scale(a, c), &[a])
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.data(a).iter().copied().sum();
        self.push(Tensor::scalar(s), Op::Sum(a), &[a])
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let data = self.data(a).iter().map(|&x| if x > T::zero() { x } else { T::zero() }).collect();
        let value = Tensor::new(self.shape(a).to_vec(), data).expect("same shape");
        self.push(value, Op::Relu(a), &[a])
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(a).clone().reshape(shape)?;
        Ok(self.push(value, Op::Reshape(a), &[a]))
    }

    /// Reorders axes: output axis `i` is input axis `perm[i]`.
    pub fn permute(&mut self, a: Var, perm: &[usize]) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        let mut seen = vec![false; shape.len()];
        if perm.len() != shape.len() || perm.iter().any(|&p| p >= shape.len() || std::mem::replace(&mut seen[p], true)) {
            return Err(Error::dim(format!("permute: {perm:?} is not a permutation of rank {}", shape.len())));
        }
        let (out_shape, data) = permute_data(self.data(a), &shape, perm);
        let value = Tensor::new(out_shape, data)?;
        Ok(self.push(value, Op::Permute(a, perm.to_vec()), &[a]))
    }

    /// Concatenates `[B, C_i, ...]` tensors along axis 1.
    pub fn concat_channels(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts.first().ok_or_else(|| Error::dim("concat of zero tensors"))?;
        let s0 = self.shape(*first).to_vec();
        if s0.len() < 2 {
            return Err(Error::dim("concat_channels needs rank >= 2"));
        }
        let mut channels = 0;
        for p in parts {
            let s = self.shape(*p);
            if s.len() != s0.len() || s[0] != s0[0] || s[2..] != s0[2..] {
                return Err(Error::dim(format!("concat_channels: {s:?} incompatible with {s0:?}")));
            }
            channels += s[1];
        }
        let inner: usize = s0[2..].iter().product();
        let batch = s0[0];
        let mut data = Vec::with_capacity(batch * channels * inner);
        for b in 0..batch {
            for p in parts {
                let c = self.shape(*p)[1];
                data.extend_from_slice(&self.data(*p)[b * c * inner..(b + 1) * c * inner]);
            }
        }
        let mut shape = s0.clone();
        shape[1] = channels;
        let value = Tensor::new(shape, data)?;
        Ok(self.push(value, Op::Concat(parts.to_vec()), parts))
    }

    /// Channels `start..start + len` of `x: [B, C, ...]`.
    pub fn slice_channels(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let sx = self.shape(x).to_vec();
        if sx.len() < 2 || len == 0 || start + len > sx[1] {
            return Err(Error::dim(format!("slice_channels: {start}..{} of {sx:?}", start + len)));
        }
        let inner: usize = sx[2..].iter().product();
        let mut data = Vec::with_capacity(sx[0] * len * inner);
        for b in 0..sx[0] {
            let base = (b * sx[1] + start) * inner;
            data.extend_from_slice(&self.data(x)[base..base + len * inner]);
        }
        let mut shape = sx;
        shape[1] = len;
        let value = Tensor::new(shape, data)?;
        Ok(self.push(value, Op::SliceChannels { x, start }, &[x]))
    }

    /// Plain `[m, k] x [k, n]` matrix product.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::dim(format!("matmul: {sa:?} x {sb:?}")));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![T::zero(); m * n];
        kernels::matmul(m, k, n, self.data(a), self.data(b), &mut out, T::zero());
        let value = Tensor::new(vec![m, n], out)?;
        Ok(self.push(value, Op::MatMul(a, b), &[a, b]))
    }

    /// Temporal convolution of `x: [B, C_in, T, N]` with `w: [C_out, C_in, K, 1]`.
    ///
    /// Cross-correlation along time only; the joint axis is untouched.
    pub fn temporal_conv(&mut self, x: Var, w: Var, b: Option<Var>, spec: ConvSpec) -> Result<Var> {
        let sw = self.shape(w).to_vec();
        if sw.len() != 4 || sw[3] != 1 {
            return Err(Error::dim(format!("temporal_conv: kernel shape {sw:?} must be [C_out, C_in, K, 1]")));
        }
        self.conv(x, w, b, sw[0], sw[1], sw[2], spec)
    }

    /// Channel mixing `w: [C_out, C_in]` applied independently at every frame and joint.
    pub fn pointwise(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let sw = self.shape(w).to_vec();
        if sw.len() != 2 {
            return Err(Error::dim(format!("pointwise: weight shape {sw:?} must be [C_out, C_in]")));
        }
        self.conv(x, w, b, sw[0], sw[1], 1, ConvSpec::same(1, 1))
    }

    /// Strided 1x1 convolution, used for residual projections.
    pub fn pointwise_strided(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize) -> Result<Var> {
        let sw = self.shape(w).to_vec();
        if sw.len() != 2 {
            return Err(Error::dim(format!("pointwise: weight shape {sw:?} must be [C_out, C_in]")));
        }
        self.conv(x, w, b, sw[0], sw[1], 1, ConvSpec::same(stride, 1))
    }

    #[allow(clippy::too_many_arguments)]
    fn conv(
        &mut self,
        x: Var,
        w: Var,
        b: Option<Var>,
        c_out: usize,
        c_in: usize,
        kernel: usize,
        spec: ConvSpec,
    ) -> Result<Var> {
        let sx = self.shape(x).to_vec();
        if sx.len() != 4 {
            return Err(Error::dim(format!("convolution input {sx:?} must be [B, C, T, N]")));
        }
        if sx[1] != c_in {
            return Err(Error::dim(format!(
                "convolution expects {c_in} input channels, got {}",
                sx[1]
            )));
        }
        if kernel % 2 == 0 {
            return Err(Error::contract(format!("temporal kernel size {kernel} must be odd")));
        }
        if spec.stride == 0 || spec.dilation == 0 {
            return Err(Error::contract("stride and dilation must be >= 1"));
        }
        if let Some(b) = b {
            if self.shape(b) != [c_out] {
                return Err(Error::dim(format!("bias shape {:?} must be [{c_out}]", self.shape(b))));
            }
        }
        let (batch, t_in, joints) = (sx[0], sx[2], sx[3]);
        let pad = if spec.same_pad { (kernel - 1) * spec.dilation / 2 } else { 0 };
        let span = (kernel - 1) * spec.dilation + 1;
        if t_in + 2 * pad < span {
            return Err(Error::dim(format!("sequence of {t_in} frames shorter than kernel span {span}")));
        }
        let t_out = (t_in + 2 * pad - span) / spec.stride + 1;
        let geom = TimeConvGeom { c_in, t_in, joints, kernel, stride: spec.stride, dilation: spec.dilation, pad, t_out };

        let in_len = c_in * t_in * joints;
        let out_len = c_out * t_out * joints;
        let mut out = vec![T::zero(); batch * out_len];
        let xd = self.data(x);
        let wd = self.data(w);
        let bias = b.map(|b| self.data(b));
        let col_len = geom.col_rows() * geom.col_cols();
        let keep = !geom.is_identity_layout() && self.requires_grad(w);
        let mut cols = if keep { vec![T::zero(); batch * col_len] } else { Vec::new() };
        let mut col = if geom.is_identity_layout() || keep { Vec::new() } else { vec![T::zero(); col_len] };
        for (s, dst) in out.chunks_mut(out_len).enumerate() {
            let xs = &xd[s * in_len..(s + 1) * in_len];
            let src: &[T] = if geom.is_identity_layout() {
                xs
            } else if keep {
                let c = &mut cols[s * col_len..(s + 1) * col_len];
                kernels::im2col(&geom, xs, c);
                c
            } else {
                kernels::im2col(&geom, xs, &mut col);
                &col
            };
            kernels::matmul(c_out, geom.col_rows(), geom.col_cols(), wd, src, dst, T::zero());
            if let Some(bias) = bias {
                let cols = geom.col_cols();
                for (row, &bv) in dst.chunks_mut(cols).zip(bias) {
                    row.iter_mut().for_each(|v| *v = *v + bv);
                }
            }
        }
        let value = Tensor::new(vec![batch, c_out, t_out, joints], out)?;
        let mut inputs = vec![x, w];
        inputs.extend(b);
        let cols = keep.then_some(cols);
        Ok(self.push(value, Op::Conv { x, w, b, geom, c_out, cols }, &inputs))
    }

    /// `out[b, c, t, i] = sum_j x[b, c, t, j] * mix[j, i]`.
    ///
    /// `mix` is either `[N, N]` shared across the batch or `[B, N, N]`.
    pub fn joint_contract(&mut self, x: Var, mix: Var) -> Result<Var> {
        self.joint_mix(x, mix, false)
    }

    /// `out[b, c, t, i] = sum_j mix[i, j] * x[b, c, t, j]`: row `i` of `mix`
    /// holds the weights joint `i` gathers from its neighbours.
    pub fn joint_aggregate(&mut self, x: Var, mix: Var) -> Result<Var> {
        self.joint_mix(x, mix, true)
    }

    fn joint_mix(&mut self, x: Var, mix: Var, aggregate: bool) -> Result<Var> {
        let sx = self.shape(x).to_vec();
        let sm = self.shape(mix).to_vec();
        if sx.len() < 2 {
            return Err(Error::dim("joint mixing needs rank >= 2 input"));
        }
        let n = *sx.last().unwrap();
        let batch = sx[0];
        let per_sample = match sm.as_slice() {
            [a, b] if *a == n && *b == n => false,
            [bb, a, b] if *bb == batch && *a == n && *b == n => true,
            _ => {
                return Err(Error::dim(format!(
                    "joint mixing matrix {sm:?} incompatible with input {sx:?}"
                )))
            }
        };
        let total_rows = self.value(x).len() / n;
        let mut out = vec![T::zero(); self.value(x).len()];
        let xd = self.data(x);
        let md = self.data(mix);
        let (rs, cs) = mix_strides(n, aggregate);
        if per_sample {
            let rows = total_rows / batch;
            for s in 0..batch {
                let xs = &xd[s * rows * n..(s + 1) * rows * n];
                let ms = &md[s * n * n..(s + 1) * n * n];
                let os = &mut out[s * rows * n..(s + 1) * rows * n];
                T::gemm(rows, n, n, T::one(), xs, n as isize, 1, ms, rs, cs, T::zero(), os, n as isize, 1);
            }
        } else {
            T::gemm(total_rows, n, n, T::one(), xd, n as isize, 1, md, rs, cs, T::zero(), &mut out, n as isize, 1);
        }
        let value = Tensor::new(sx, out)?;
        Ok(self.push(value, Op::JointMix { x, mix, per_sample, aggregate }, &[x, mix]))
    }

    /// Per-sample similarity `out[b, i, j] = sum_{c,t} a[b, c, t, i] * c[b, c, t, j]`.
    pub fn gram(&mut self, a: Var, b: Var) -> Result<Var> {
        let sa = self.shape(a).to_vec();
        if sa != self.shape(b) || sa.len() < 2 {
            return Err(Error::dim(format!("gram: shapes {:?} and {:?}", sa, self.shape(b))));
        }
        let batch = sa[0];
        let n = *sa.last().unwrap();
        let rows = self.value(a).len() / (batch * n);
        let mut out = vec![T::zero(); batch * n * n];
        let (ad, bd) = (self.data(a), self.data(b));
        for s in 0..batch {
            let r = s * rows * n..(s + 1) * rows * n;
            kernels::matmul_at_b(n, rows, n, &ad[r.clone()], &bd[r], &mut out[s * n * n..(s + 1) * n * n]);
        }
        let value = Tensor::new(vec![batch, n, n], out)?;
        Ok(self.push(value, Op::Gram(a, b), &[a, b]))
    }

    /// Softmax over the last axis, stabilised by subtracting the row maximum.
    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let shape = self.shape(a).to_vec();
        let n = *shape.last().unwrap();
        let mut out = self.data(a).to_vec();
        for row in out.chunks_mut(n) {
            softmax_in_place(row);
        }
        let value = Tensor::new(shape, out).expect("same shape");
        self.push(value, Op::SoftmaxRows(a), &[a])
    }

    /// Batch normalisation over axis 1 of `x: [B, C, ...]` using the batch's own
    /// statistics. Returns the batch statistics for running-average updates.
    pub fn batch_norm_train(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<(Var, BnStats<T>)> {
        let (batch, channels, inner) = self.bn_geometry(x, gamma, beta)?;
        let count = batch * inner;
        if count < 2 {
            return Err(Error::contract(format!(
                "training-mode batch norm needs more than one value per channel, got {count}"
            )));
        }
        let xd = self.data(x);
        let mut mean = vec![0f64; channels];
        let mut var = vec![0f64; channels];
        for s in 0..batch {
            for c in 0..channels {
                let base = (s * channels + c) * inner;
                mean[c] += xd[base..base + inner].iter().map(|v| v.as_f64()).sum::<f64>();
            }
        }
        mean.iter_mut().for_each(|m| *m /= count as f64);
        for s in 0..batch {
            for c in 0..channels {
                let base = (s * channels + c) * inner;
                var[c] += xd[base..base + inner].iter().map(|v| (v.as_f64() - mean[c]).powi(2)).sum::<f64>();
            }
        }
        var.iter_mut().for_each(|v| *v /= count as f64);
        let inv_std: Vec<T> = var.iter().map(|&v| T::of(1.0 / (v + eps).sqrt())).collect();
        let mean_t: Vec<T> = mean.iter().map(|&m| T::of(m)).collect();
        let stats = BnStats {
            mean: mean_t.clone(),
            var: var.iter().map(|&v| T::of(v * count as f64 / (count - 1) as f64)).collect(),
        };
        let v = self.bn_apply(x, gamma, beta, &mean_t, inv_std, true, batch, channels, inner)?;
        Ok((v, stats))
    }

    /// Batch normalisation with fixed statistics (inference / frozen layers).
    pub fn batch_norm_infer(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        running_mean: &[T],
        running_var: &[T],
        eps: f64,
    ) -> Result<Var> {
        let (batch, channels, inner) = self.bn_geometry(x, gamma, beta)?;
        if running_mean.len() != channels || running_var.len() != channels {
            return Err(Error::dim("running statistics length differs from channel count"));
        }
        let inv_std = running_var.iter().map(|&v| T::of(1.0 / (v.as_f64() + eps).sqrt())).collect();
        self.bn_apply(x, gamma, beta, running_mean, inv_std, false, batch, channels, inner)
    }

    fn bn_geometry(&self, x: Var, gamma: Var, beta: Var) -> Result<(usize, usize, usize)> {
        let sx = self.shape(x);
        if sx.len() < 2 {
            return Err(Error::dim("batch norm needs rank >= 2 input"));
        }
        let channels = sx[1];
        if self.shape(gamma) != [channels] || self.shape(beta) != [channels] {
            return Err(Error::dim(format!(
                "batch norm affine parameters must be [{channels}], got {:?} and {:?}",
                self.shape(gamma),
                self.shape(beta)
            )));
        }
        Ok((sx[0], channels, sx[2..].iter().product()))
    }

    #[allow(clippy::too_many_arguments)]
    fn bn_apply(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        mean: &[T],
        inv_std: Vec<T>,
        train: bool,
        batch: usize,
        channels: usize,
        inner: usize,
    ) -> Result<Var> {
        let xd = self.data(x);
        let (g, bt) = (self.data(gamma), self.data(beta));
        let mut xhat = vec![T::zero(); xd.len()];
        let mut out = vec![T::zero(); xd.len()];
        for s in 0..batch {
            for c in 0..channels {
                let base = (s * channels + c) * inner;
                for i in base..base + inner {
                    let h = (xd[i] - mean[c]) * inv_std[c];
                    xhat[i] = h;
                    out[i] = g[c] * h + bt[c];
                }
            }
        }
        let value = Tensor::new(self.shape(x).to_vec(), out)?;
        Ok(self.push(value, Op::BatchNorm { x, gamma, beta, xhat, inv_std, train }, &[x, gamma, beta]))
    }

    /// Max pooling over time with a 3-frame window and one frame of implicit
    /// `-inf` padding on each end.
    pub fn max_pool_time(&mut self, x: Var, stride: usize) -> Result<Var> {
        let sx = self.shape(x).to_vec();
        if sx.len() != 4 {
            return Err(Error::dim(format!("max_pool_time input {sx:?} must be [B, C, T, N]")));
        }
        if stride == 0 {
            return Err(Error::contract("pool stride must be >= 1"));
        }
        let (bc, t_in, n) = (sx[0] * sx[1], sx[2], sx[3]);
        let t_out = (t_in - 1) / stride + 1;
        let xd = self.data(x);
        let mut out = Vec::with_capacity(bc * t_out * n);
        let mut argmax = Vec::with_capacity(bc * t_out * n);
        for p in 0..bc {
            for to in 0..t_out {
                let centre = (to * stride) as isize;
                for j in 0..n {
                    let mut best = None::<(usize, T)>;
                    for t in (centre - 1)..=(centre + 1) {
                        if t < 0 || t as usize >= t_in {
                            continue;
                        }
                        let idx = (p * t_in + t as usize) * n + j;
                        if best.is_none_or(|(_, v)| xd[idx] > v) {
                            best = Some((idx, xd[idx]));
                        }
                    }
                    let (idx, v) = best.expect("window always overlaps the sequence");
                    out.push(v);
                    argmax.push(idx);
                }
            }
        }
        let value = Tensor::new(vec![sx[0], sx[1], t_out, n], out)?;
        Ok(self.push(value, Op::MaxPoolTime { x, argmax }, &[x]))
    }

    /// Mean over frames, joints and the `persons` consecutive batch rows of each
    /// sample: `[B * M, C, T, N] -> [B, C]`.
    pub fn global_avg_pool(&mut self, x: Var, persons: usize) -> Result<Var> {
        let sx = self.shape(x).to_vec();
        if sx.len() < 2 || persons == 0 || sx[0] % persons != 0 {
            return Err(Error::dim(format!("global_avg_pool: {sx:?} with {persons} persons")));
        }
        let batch = sx[0] / persons;
        let channels = sx[1];
        let inner: usize = sx[2..].iter().product();
        let scale = 1.0 / (persons * inner) as f64;
        let xd = self.data(x);
        let mut out = vec![T::zero(); batch * channels];
        for b in 0..batch {
            for c in 0..channels {
                let mut acc = 0f64;
                for m in 0..persons {
                    let base = ((b * persons + m) * channels + c) * inner;
                    acc += xd[base..base + inner].iter().map(|v| v.as_f64()).sum::<f64>();
                }
                out[b * channels + c] = T::of(acc * scale);
            }
        }
        let value = Tensor::new(vec![batch, channels], out)?;
        Ok(self.push(value, Op::GlobalAvgPool { x, persons }, &[x]))
    }

    /// Mean negative log-likelihood of `labels` under `softmax(logits)`.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let sl = self.shape(logits).to_vec();
        if sl.len() != 2 || sl[0] != labels.len() {
            return Err(Error::dim(format!("cross_entropy: logits {sl:?} for {} labels", labels.len())));
        }
        let k = sl[1];
        if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
            return Err(Error::contract(format!("label {bad} out of range for {k} classes")));
        }
        let mut probs = self.data(logits).to_vec();
        let mut loss = 0f64;
        for (row, &label) in probs.chunks_mut(k).zip(labels) {
            let max = row.iter().fold(f64::NEG_INFINITY, |m, v| m.max(v.as_f64()));
            let lse = max + row.iter().map(|v| (v.as_f64() - max).exp()).sum::<f64>().ln();
            loss += lse - row[label].as_f64();
            softmax_in_place(row);
        }
        let value = Tensor::scalar(T::of(loss / labels.len() as f64));
        Ok(self.push(value, Op::CrossEntropy { logits, labels: labels.to_vec(), probs }, &[logits]))
    }

    /// Reverse sweep from the scalar `loss`. Gradients are added to whatever the
    /// leaves already hold, so two calls without [`Tape::zero_grads`] double them.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).len() != 1 {
            return Err(Error::contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        if !self.nodes[loss.0].requires_grad {
            return Ok(());
        }
        grads[loss.0] = Some(vec![T::one()]);
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if !self.nodes[i].requires_grad {
                continue;
            }
            if matches!(self.nodes[i].op, Op::Leaf) {
                grads[i] = Some(g);
                continue;
            }
            self.backprop_node(i, &g, &mut grads);
        }
        for (node, g) in self.nodes.iter_mut().zip(grads) {
            if let (Op::Leaf, true, Some(g)) = (&node.op, node.requires_grad, g) {
                match &mut node.grad {
                    Some(existing) => kernels::add_into(existing.data_mut(), &g),
                    None => node.grad = Some(Tensor::new(node.value.shape().to_vec(), g).expect("leaf shape")),
                }
            }
        }
        Ok(())
    }

    fn backprop_node(&self, i: usize, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let node = &self.nodes[i];
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.accumulate_copy(grads, *a, g);
                self.accumulate_copy(grads, *b, g);
            }
            Op::AddBroadcast(a, b) => {
                self.accumulate_copy(grads, *a, g);
                self.accumulate(grads, *b, |gb| {
                    for chunk in g.chunks(gb.len()) {
                        kernels::add_into(gb, chunk);
                    }
                });
            }
            Op::Mul(a, b) => {
                let (ad, bd) = (self.data(*a), self.data(*b));
                self.accumulate(grads, *a, |ga| {
                    for ((d, &gv), &bv) in ga.iter_mut().zip(g).zip(bd) {
                        *d = *d + gv * bv;
                    }
                });
                self.accumulate(grads, *b, |gb| {
                    for ((d, &gv), &av) in gb.iter_mut().zip(g).zip(ad) {
                        *d = *d + gv * av;
                    }
                });
            }
            Op::Scale(a, c) => {
                self.accumulate(grads, *a, |ga| {
                    for (d, &gv) in ga.iter_mut().zip(g) {
                        *d = *d + gv * *c;
                    }
                });
            }
            Op::Sum(a) => {
                self.accumulate(grads, *a, |ga| ga.iter_mut().for_each(|d| *d = *d + g[0]));
            }
            Op::Relu(a) => {
                let ad = self.data(*a);
                self.accumulate(grads, *a, |ga| {
                    for ((d, &gv), &av) in ga.iter_mut().zip(g).zip(ad) {
                        if av > T::zero() {
                            *d = *d + gv;
                        }
                    }
                });
            }
            Op::Reshape(a) => self.accumulate_copy(grads, *a, g),
            Op::Permute(a, perm) => {
                let mut inverse = vec![0; perm.len()];
                for (i, &p) in perm.iter().enumerate() {
                    inverse[p] = i;
                }
                let (_, back) = permute_data(g, node.value.shape(), &inverse);
                self.accumulate(grads, *a, |ga| kernels::add_into(ga, &back));
            }
            Op::Concat(parts) => {
                let shape = node.value.shape();
                let inner: usize = shape[2..].iter().product();
                let total_c = shape[1];
                let mut offset = 0;
                for p in parts {
                    let c = self.shape(*p)[1];
                    self.accumulate(grads, *p, |gp| {
                        for b in 0..shape[0] {
                            let src = (b * total_c + offset) * inner;
                            kernels::add_into(&mut gp[b * c * inner..(b + 1) * c * inner], &g[src..src + c * inner]);
                        }
                    });
                    offset += c;
                }
            }
            Op::SliceChannels { x, start } => {
                let sx = self.shape(*x);
                let inner: usize = sx[2..].iter().product();
                let (total_c, len) = (sx[1], node.value.shape()[1]);
                self.accumulate(grads, *x, |gx| {
                    for (b, gs) in g.chunks(len * inner).enumerate() {
                        let base = (b * total_c + start) * inner;
                        kernels::add_into(&mut gx[base..base + len * inner], gs);
                    }
                });
            }
            Op::MatMul(a, b) => {
                let (sa, sb) = (self.shape(*a), self.shape(*b));
                let (m, k, n) = (sa[0], sa[1], sb[1]);
                let (ad, bd) = (self.data(*a), self.data(*b));
                self.accumulate(grads, *a, |ga| kernels::matmul_a_bt(m, n, k, g, bd, ga));
                self.accumulate(grads, *b, |gb| kernels::matmul_at_b(k, m, n, ad, g, gb));
            }
            Op::Conv { x, w, b, geom, c_out, cols } => {
                self.backprop_conv(*x, *w, *b, geom, *c_out, cols.as_deref(), g, grads)
            }
            Op::JointMix { x, mix, per_sample, aggregate } => {
                let sx = self.shape(*x);
                let n = *sx.last().unwrap();
                let batch = sx[0];
                let total_rows = self.value(*x).len() / n;
                let (xd, md) = (self.data(*x), self.data(*mix));
                // out = X * E with E = mix or mix^T
                let (rs, cs) = mix_strides(n, *aggregate);
                let ni = n as isize;
                let samples = if *per_sample { batch } else { 1 };
                let rows = total_rows / samples;
                self.accumulate(grads, *x, |gx| {
                    for s in 0..samples {
                        let r = s * rows * n..(s + 1) * rows * n;
                        let ms = if *per_sample { &md[s * n * n..(s + 1) * n * n] } else { md };
                        // dX = G * E^T
                        T::gemm(rows, n, n, T::one(), &g[r.clone()], ni, 1, ms, cs, rs, T::one(), &mut gx[r], ni, 1);
                    }
                });
                self.accumulate(grads, *mix, |gm| {
                    for s in 0..samples {
                        let r = s * rows * n..(s + 1) * rows * n;
                        let gms = if *per_sample { &mut gm[s * n * n..(s + 1) * n * n] } else { &mut gm[..] };
                        // dE = X^T * G, written through E's layout.
                        T::gemm(n, rows, n, T::one(), &xd[r.clone()], 1, ni, &g[r], ni, 1, T::one(), gms, rs, cs);
                    }
                });
            }
            Op::Gram(a, b) => {
                let sa = self.shape(*a);
                let batch = sa[0];
                let n = *sa.last().unwrap();
                let rows = self.value(*a).len() / (batch * n);
                let (ad, bd) = (self.data(*a), self.data(*b));
                self.accumulate(grads, *a, |ga| {
                    for s in 0..batch {
                        let r = s * rows * n..(s + 1) * rows * n;
                        kernels::matmul_a_bt(rows, n, n, &bd[r.clone()], &g[s * n * n..(s + 1) * n * n], &mut ga[r]);
                    }
                });
                self.accumulate(grads, *b, |gb| {
                    for s in 0..batch {
                        let r = s * rows * n..(s + 1) * rows * n;
                        // dB = A * G, A stored rows x n
                        T::gemm(rows, n, n, T::one(), &ad[r.clone()], n as isize, 1, &g[s * n * n..(s + 1) * n * n], n as isize, 1, T::one(), &mut gb[r], n as isize, 1);
                    }
                });
            }
            Op::SoftmaxRows(a) => {
                let n = *node.value.shape().last().unwrap();
                let y = node.value.data();
                self.accumulate(grads, *a, |ga| {
                    for ((gar, gr), yr) in ga.chunks_mut(n).zip(g.chunks(n)).zip(y.chunks(n)) {
                        let dot: T = gr.iter().zip(yr).map(|(&gv, &yv)| gv * yv).sum();
                        for ((d, &gv), &yv) in gar.iter_mut().zip(gr).zip(yr) {
                            *d = *d + yv * (gv - dot);
                        }
                    }
                });
            }
            Op::BatchNorm { x, gamma, beta, xhat, inv_std, train } => {
                let sx = self.shape(*x);
                let (batch, channels) = (sx[0], sx[1]);
                let inner: usize = sx[2..].iter().product();
                let count = (batch * inner) as f64;
                let mut sum_g = vec![0f64; channels];
                let mut sum_gx = vec![0f64; channels];
                for s in 0..batch {
                    for c in 0..channels {
                        let base = (s * channels + c) * inner;
                        for i in base..base + inner {
                            sum_g[c] += g[i].as_f64();
                            sum_gx[c] += (g[i] * xhat[i]).as_f64();
                        }
                    }
                }
                self.accumulate(grads, *beta, |gb| {
                    for (d, &s) in gb.iter_mut().zip(&sum_g) {
                        *d = *d + T::of(s);
                    }
                });
                self.accumulate(grads, *gamma, |gg| {
                    for (d, &s) in gg.iter_mut().zip(&sum_gx) {
                        *d = *d + T::of(s);
                    }
                });
                let gamma_d = self.data(*gamma);
                self.accumulate(grads, *x, |gx| {
                    for s in 0..batch {
                        for c in 0..channels {
                            let base = (s * channels + c) * inner;
                            let k = gamma_d[c] * inv_std[c];
                            if *train {
                                let mg = T::of(sum_g[c] / count);
                                let mgx = T::of(sum_gx[c] / count);
                                for i in base..base + inner {
                                    gx[i] = gx[i] + k * (g[i] - mg - xhat[i] * mgx);
                                }
                            } else {
                                for i in base..base + inner {
                                    gx[i] = gx[i] + k * g[i];
                                }
                            }
                        }
                    }
                });
            }
            Op::MaxPoolTime { x, argmax } => {
                self.accumulate(grads, *x, |gx| {
                    for (&idx, &gv) in argmax.iter().zip(g) {
                        gx[idx] = gx[idx] + gv;
                    }
                });
            }
            Op::GlobalAvgPool { x, persons } => {
                let sx = self.shape(*x);
                let channels = sx[1];
                let inner: usize = sx[2..].iter().product();
                let scale = T::of(1.0 / (*persons * inner) as f64);
                self.accumulate(grads, *x, |gx| {
                    for (row, chunk) in gx.chunks_mut(inner).enumerate() {
                        let sample = row / channels / persons;
                        let c = row % channels;
                        let gv = g[sample * channels + c] * scale;
                        chunk.iter_mut().for_each(|d| *d = *d + gv);
                    }
                });
            }
            Op::CrossEntropy { logits, labels, probs } => {
                let k = self.shape(*logits)[1];
                let scale = g[0] / T::of(labels.len() as f64);
                self.accumulate(grads, *logits, |gl| {
                    for (b, &label) in labels.iter().enumerate() {
                        for j in 0..k {
                            let target = if j == label { T::one() } else { T::zero() };
                            gl[b * k + j] = gl[b * k + j] + scale * (probs[b * k + j] - target);
                        }
                    }
                });
            }
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn backprop_conv(
        &self,
        x: Var,
        w: Var,
        b: Option<Var>,
        geom: &TimeConvGeom,
        c_out: usize,
        cached: Option<&[T]>,
        g: &[T],
        grads: &mut [Option<Vec<T>>],
    ) {
        let batch = self.shape(x)[0];
        let in_len = geom.c_in * geom.t_in * geom.joints;
        let out_len = c_out * geom.col_cols();
        let (rows, cols) = (geom.col_rows(), geom.col_cols());
        let xd = self.data(x);
        let wd = self.data(w);
        if let Some(b) = b {
            self.accumulate(grads, b, |gb| {
                for gs in g.chunks(out_len) {
                    for (d, row) in gb.iter_mut().zip(gs.chunks(cols)) {
                        *d = *d + row.iter().copied().sum();
                    }
                }
            });
        }
        let need_w = self.requires_grad(w);
        let need_x = self.requires_grad(x);
        if !need_w && !need_x {
            return;
        }
        let mut col = if geom.is_identity_layout() || cached.is_some() { Vec::new() } else { vec![T::zero(); rows * cols] };
        let mut gw = need_w.then(|| grads[w.0].take().unwrap_or_else(|| vec![T::zero(); wd.len()]));
        let mut gx = need_x.then(|| grads[x.0].take().unwrap_or_else(|| vec![T::zero(); xd.len()]));
        let mut dcol = if need_x && !geom.is_identity_layout() { vec![T::zero(); rows * cols] } else { Vec::new() };
        for s in 0..batch {
            let gs = &g[s * out_len..(s + 1) * out_len];
            let xs = &xd[s * in_len..(s + 1) * in_len];
            if let Some(gw) = gw.as_mut() {
                let src: &[T] = if geom.is_identity_layout() {
                    xs
                } else if let Some(c) = cached {
                    &c[s * rows * cols..(s + 1) * rows * cols]
                } else {
                    kernels::im2col(geom, xs, &mut col);
                    &col
                };
                kernels::matmul_a_bt(c_out, cols, rows, gs, src, gw);
            }
            if let Some(gx) = gx.as_mut() {
                let dst = &mut gx[s * in_len..(s + 1) * in_len];
                if geom.is_identity_layout() {
                    kernels::matmul_at_b(rows, c_out, cols, wd, gs, dst);
                } else {
                    T::gemm(rows, c_out, cols, T::one(), wd, 1, rows as isize, gs, cols as isize, 1, T::zero(), &mut dcol, cols as isize, 1);
                    kernels::col2im_add(geom, &dcol, dst);
                }
            }
        }
        if let Some(gw) = gw {
            grads[w.0] = Some(gw);
        }
        if let Some(gx) = gx {
            grads[x.0] = Some(gx);
        }
    }

    /// Adds `g`, which has the shape of `v`, to the gradient of `v`.
    fn accumulate_copy(&self, grads: &mut [Option<Vec<T>>], v: Var, g: &[T]) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(buf) => kernels::add_into(buf, g),
            slot => *slot = Some(g.to_vec()),
        }
    }

    fn accumulate(&self, grads: &mut [Option<Vec<T>>], v: Var, f: impl FnOnce(&mut [T])) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        let len = self.nodes[v.0].value.len();
        let buf = grads[v.0].get_or_insert_with(|| vec![T::zero(); len]);
        f(buf);
    }
}

/// Strides (row, column) of the effective right-hand matrix in joint mixing:
/// `mix` itself for contraction, `mix^T` for aggregation.
fn mix_strides(n: usize, aggregate: bool) -> (isize, isize) {
    if aggregate {
        (1, n as isize)
    } else {
        (n as isize, 1)
    }
}

fn softmax_in_place<T: Scalar>(row: &mut [T]) {
    let max = row.iter().fold(T::neg_infinity(), |m, &v| if v > m { v } else { m });
    let mut total = T::zero();
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        total = total + *v;
    }
    for v in row.iter_mut() {
        *v = *v / total;
    }
}

fn permute_data<T: Scalar>(data: &[T], shape: &[usize], perm: &[usize]) -> (Vec<usize>, Vec<T>) {
    let rank = shape.len();
    let mut strides = vec![1usize; rank];
    for i in (0..rank.saturating_sub(1)).rev() {
        strides[i] = strides[i + 1] * shape[i + 1];
    }
    let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
    let src_strides: Vec<usize> = perm.iter().map(|&p| strides[p]).collect();
    let mut out = Vec::with_capacity(data.len());
    let mut idx = vec![0usize; rank];
    let mut offset = 0usize;
    for _ in 0..data.len() {
        out.push(data[offset]);
        for ax in (0..rank).rev() {
            idx[ax] += 1;
            offset += src_strides[ax];
            if idx[ax] < out_shape[ax] {
                break;
            }
            offset -= src_strides[ax] * out_shape[ax];
            idx[ax] = 0;
        }
    }
    (out_shape, out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor<f64> {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn identity_loss_has_unit_gradient() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::scalar(3.0), true);
        tape.backward(x).unwrap();
        assert_eq!(tape.grad(x).unwrap().data(), &[1.0]);
    }

    #[test]
    fn sum_of_squares_gradient() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(t(&[2], &[1.0, 2.0]), true);
        let sq = tape.mul(x, x).unwrap();
        let loss = tape.sum(sq);
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(x).unwrap().data(), &[2.0, 4.0]);
    }

    #[test]
    fn repeated_backward_accumulates() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(t(&[2], &[1.0, 2.0]), true);
        let sq = tape.mul(x, x).unwrap();
        let loss = tape.sum(sq);
        tape.backward(loss).unwrap();
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(x).unwrap().data(), &[4.0, 8.0]);
        tape.zero_grads();
        assert!(tape.grad(x).is_none());
    }

    #[test]
    fn detached_leaf_gets_no_gradient() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(t(&[2], &[1.0, 2.0]), true);
        let c = tape.constant(t(&[2], &[5.0, 6.0]));
        let p = tape.mul(x, c).unwrap();
        let loss = tape.sum(p);
        tape.backward(loss).unwrap();
        assert!(tape.grad(c).is_none());
        assert_eq!(tape.grad(x).unwrap().data(), &[5.0, 6.0]);
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(t(&[2], &[1.0, 2.0]), true);
        assert!(matches!(tape.backward(x), Err(Error::Contract(_))));
    }

    fn conv1d(input: &[f64], kernel: &[f64], spec: ConvSpec) -> Vec<f64> {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(t(&[1, 1, input.len(), 1], input), false);
        let w = tape.leaf(t(&[1, 1, kernel.len(), 1], kernel), false);
        let y = tape.temporal_conv(x, w, None, spec).unwrap();
        tape.value(y).data().to_vec()
    }

    #[test]
    fn temporal_conv_delta_kernel_is_identity() {
        assert_eq!(conv1d(&[1.0, 2.0, 3.0], &[0.0, 1.0, 0.0], ConvSpec::same(1, 1)), vec![1.0, 2.0, 3.0]);
    }

    #[test]
    fn temporal_conv_box_kernel_sums_padded_window() {
        // sliding sum over [0, 1, 2, 3, 0]
        assert_eq!(conv1d(&[1.0, 2.0, 3.0], &[1.0, 1.0, 1.0], ConvSpec::same(1, 1)), vec![3.0, 6.0, 5.0]);
    }

    #[test]
    fn temporal_conv_stride_halves_length() {
        let input: Vec<f64> = (0..40).map(|v| v as f64).collect();
        assert_eq!(conv1d(&input, &[0.0, 1.0, 0.0], ConvSpec::same(2, 1)).len(), 20);
        assert_eq!(conv1d(&input[..39], &[0.0, 1.0, 0.0], ConvSpec::same(2, 1)).len(), 20);
    }

    #[test]
    fn temporal_conv_dilation_widens_receptive_field() {
        // kernel [1, 0, 1] with dilation 2 reads t-2 and t+2
        let out = conv1d(&[1.0, 2.0, 3.0, 4.0, 5.0], &[1.0, 0.0, 1.0], ConvSpec::same(1, 2));
        assert_eq!(out, vec![3.0, 4.0, 6.0, 2.0, 3.0]);
    }

    #[test]
    fn temporal_conv_channel_mismatch_is_dimension_error() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::zeros(&[1, 2, 4, 3]), false);
        let w = tape.leaf(Tensor::zeros(&[1, 3, 3, 1]), false);
        assert!(matches!(tape.temporal_conv(x, w, None, ConvSpec::default()), Err(Error::Dimension(_))));
    }

    #[test]
    fn joint_contract_swaps_with_permutation_matrix() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(t(&[1, 1, 1, 2], &[1.0, 2.0]), false);
        let m = tape.leaf(t(&[2, 2], &[0.0, 1.0, 1.0, 0.0]), false);
        let y = tape.joint_contract(x, m).unwrap();
        assert_eq!(tape.value(y).data(), &[2.0, 1.0]);
    }

    #[test]
    fn joint_aggregate_uses_rows_as_gather_weights() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(t(&[1, 1, 1, 2], &[1.0, 10.0]), false);
        // joint 0 gathers 2*x1, joint 1 gathers 3*x0
        let m = tape.leaf(t(&[2, 2], &[0.0, 2.0, 3.0, 0.0]), false);
        let agg = tape.joint_aggregate(x, m).unwrap();
        assert_eq!(tape.value(agg).data(), &[20.0, 3.0]);
        let con = tape.joint_contract(x, m).unwrap();
        assert_eq!(tape.value(con).data(), &[30.0, 2.0]);
    }

    #[test]
    fn joint_contract_rejects_wrong_size() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::zeros(&[1, 1, 1, 3]), false);
        let m = tape.leaf(Tensor::zeros(&[2, 2]), false);
        assert!(matches!(tape.joint_contract(x, m), Err(Error::Dimension(_))));
    }

    #[test]
    fn pointwise_dot_product_and_bias() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(t(&[1, 2, 1, 1], &[1.0, 1.0]), false);
        let w = tape.leaf(t(&[1, 2], &[1.0, 1.0]), false);
        let b = tape.leaf(t(&[1], &[0.0]), false);
        let y = tape.pointwise(x, w, Some(b)).unwrap();
        assert_eq!(tape.value(y).data(), &[2.0]);

        let wz = tape.leaf(Tensor::zeros(&[3, 2]), false);
        let bz = tape.leaf(t(&[3], &[4.0, 4.0, 4.0]), false);
        let x2 = tape.leaf(Tensor::from_fn(&[2, 2, 3, 2], |i| i as f64), false);
        let y2 = tape.pointwise(x2, wz, Some(bz)).unwrap();
        assert!(tape.value(y2).data().iter().all(|&v| v == 4.0));
    }

    #[test]
    fn softmax_closed_forms() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(t(&[2, 2], &[0.0, 2f64.ln(), 7.0, 7.0]), false);
        let y = tape.softmax_rows(x);
        let d = tape.value(y).data();
        assert!((d[0] - 1.0 / 3.0).abs() < 1e-12);
        assert!((d[1] - 2.0 / 3.0).abs() < 1e-12);
        assert!((d[2] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn relu_and_pooling() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(t(&[3], &[-1.0, 0.0, 2.0]), false);
        let y = tape.relu(x);
        assert_eq!(tape.value(y).data(), &[0.0, 0.0, 2.0]);

        let c = tape.leaf(Tensor::full(&[2, 3, 4, 5], 1.5), false);
        let p = tape.global_avg_pool(c, 2).unwrap();
        assert_eq!(tape.shape(p), &[1, 3]);
        assert!(tape.value(p).data().iter().all(|&v| (v - 1.5).abs() < 1e-12));

        let two = tape.leaf(t(&[1, 1, 2, 1], &[1.0, 3.0]), false);
        let p2 = tape.global_avg_pool(two, 1).unwrap();
        assert_eq!(tape.value(p2).data(), &[2.0]);
    }

    #[test]
    fn max_pool_keeps_length_and_picks_window_maximum() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(t(&[1, 1, 5, 1], &[1.0, 5.0, 2.0, 0.0, 3.0]), false);
        let y = tape.max_pool_time(x, 1).unwrap();
        assert_eq!(tape.value(y).data(), &[5.0, 5.0, 5.0, 3.0, 3.0]);
        let y2 = tape.max_pool_time(x, 2).unwrap();
        assert_eq!(tape.value(y2).data(), &[5.0, 5.0, 3.0]);
    }

    #[test]
    fn batch_norm_train_normalises_channels() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::from_fn(&[2, 2, 3, 2], |i| ((i * 7919) % 13) as f64), false);
        let g = tape.leaf(Tensor::full(&[2], 1.0), false);
        let b = tape.leaf(Tensor::zeros(&[2]), false);
        let (y, stats) = tape.batch_norm_train(x, g, b, 1e-5).unwrap();
        let yd = tape.value(y);
        for c in 0..2 {
            let vals: Vec<f64> = (0..2)
                .flat_map(|s| (0..6).map(move |i| (s, i)))
                .map(|(s, i)| yd.data()[(s * 2 + c) * 6 + i])
                .collect();
            let mean = vals.iter().sum::<f64>() / 12.0;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 12.0;
            assert!(mean.abs() < 1e-9);
            assert!((var - 1.0).abs() < 1e-4);
        }
        assert_eq!(stats.mean.len(), 2);
    }

    #[test]
    fn batch_norm_constant_output_from_beta() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::from_fn(&[2, 1, 4, 1], |i| i as f64), false);
        let g = tape.leaf(Tensor::zeros(&[1]), false);
        let b = tape.leaf(Tensor::full(&[1], 5.0), false);
        let (y, _) = tape.batch_norm_train(x, g, b, 1e-5).unwrap();
        assert!(tape.value(y).data().iter().all(|&v| v == 5.0));
    }

    #[test]
    fn batch_norm_train_rejects_single_value() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::zeros(&[1, 1, 1, 1]), false);
        let g = tape.leaf(Tensor::full(&[1], 1.0), false);
        let b = tape.leaf(Tensor::zeros(&[1]), false);
        assert!(tape.batch_norm_train(x, g, b, 1e-5).is_err());
    }

    #[test]
    fn cross_entropy_closed_forms() {
        let mut tape = Tape::<f64>::new();
        let uniform = tape.leaf(Tensor::zeros(&[3, 27]), false);
        let loss = tape.cross_entropy(uniform, &[0, 5, 26]).unwrap();
        assert!((tape.value(loss).data()[0] - 27f64.ln()).abs() < 1e-12);

        let l = tape.leaf(t(&[1, 2], &[0.0, 3f64.ln()]), false);
        let loss = tape.cross_entropy(l, &[1]).unwrap();
        assert!((tape.value(loss).data()[0] - 0.287_682_072_451_780_9).abs() < 1e-12);

        let confident = tape.leaf(t(&[1, 3], &[50.0, 0.0, 0.0]), false);
        let loss = tape.cross_entropy(confident, &[0]).unwrap();
        assert!(tape.value(loss).data()[0] < 1e-20);

        assert!(matches!(tape.cross_entropy(l, &[2]), Err(Error::Contract(_))));
    }

    #[test]
    fn permute_round_trip() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::from_fn(&[2, 3, 4], |i| i as f64), false);
        let y = tape.permute(x, &[2, 0, 1]).unwrap();
        assert_eq!(tape.shape(y), &[4, 2, 3]);
        assert_eq!(tape.value(y).at(&[3, 1, 2]), tape.value(x).at(&[1, 2, 3]));
        let z = tape.permute(y, &[1, 2, 0]).unwrap();
        assert_eq!(tape.value(z), tape.value(x));
    }
}
