use rayon::prelude::*;

use super::kernels::{col2im_add, gemm, im2col, ConvGeom, Mat};
use super::Tensor;
use crate::error::{dim_err, Error, Result};

pub const BN_EPS: f64 = 1e-5;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Conv2dSpec {
    pub stride_t: usize,
    pub pad_t: usize,
    pub pad_v: usize,
}

impl Conv2dSpec {
    pub fn unit() -> Self {
        Conv2dSpec {
            stride_t: 1,
            pad_t: 0,
            pad_v: 0,
        }
    }
}

/// Statistics selection for [`Tape::batch_norm`].
#[derive(Clone, Copy, Debug)]
pub enum BatchNormMode<'a> {
    /// Normalize with the batch's own statistics.
    Train,
    /// Normalize with stored running statistics.
    Eval { mean: &'a [f64], var: &'a [f64] },
}

/// Per-channel batch statistics observed by a training-mode batch norm.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    /// Biased (population) variance, the one used for normalization.
    pub var: Vec<f64>,
    /// Number of elements reduced per channel.
    pub count: usize,
}

impl BatchStats {
    pub fn unbiased_var(&self) -> Vec<f64> {
        let m = self.count as f64;
        let scale = if self.count > 1 { m / (m - 1.0) } else { 1.0 };
        self.var.iter().map(|v| v * scale).collect()
    }
}

enum Op {
    Leaf,
    MatMul {
        a: Var,
        b: Var,
    },
    Conv2d {
        x: Var,
        w: Var,
        geom: ConvGeom,
        n: usize,
        c_out: usize,
    },
    ChannelBias {
        x: Var,
        b: Var,
    },
    Add {
        a: Var,
        b: Var,
    },
    MulConst {
        a: Var,
        c: Tensor,
    },
    GraphMix {
        x: Var,
        a: Var,
    },
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
        train: bool,
    },
    Relu {
        x: Var,
    },
    GlobalAvgPool {
        x: Var,
    },
    GroupMean {
        x: Var,
        group: usize,
    },
    SoftmaxCe {
        logits: Var,
        probs: Vec<f64>,
        labels: Vec<usize>,
    },
    DotConst {
        x: Var,
        c: Tensor,
    },
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Records a forward computation for reverse-mode differentiation.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of a scalar with respect to every recorded value that needed one.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}

fn accumulate(slot: &mut Option<Tensor>, shape: &[usize], f: impl FnOnce(&mut [f64])) {
    let g = slot.get_or_insert_with(|| Tensor::zeros(shape));
    f(g.data_mut());
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// A differentiable input (parameter or probe).
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// A value that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(dim_err(format!("matmul: cannot multiply {sa:?} by {sb:?}")));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = Tensor::zeros(&[m, n]);
        gemm(
            m,
            k,
            n,
            Mat::row_major(self.value(a).data(), k),
            Mat::row_major(self.value(b).data(), n),
            out.data_mut(),
            false,
        );
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::MatMul { a, b }, rg))
    }

    /// Cross-correlation over the (time, joint) plane of an N×C×T×V input
    /// with a C'×C×kt×kv kernel.
    pub fn conv2d(&mut self, x: Var, w: Var, spec: Conv2dSpec) -> Result<Var> {
        let (sx, sw) = (self.shape(x).to_vec(), self.shape(w).to_vec());
        if sx.len() != 4 || sw.len() != 4 || sx[1] != sw[1] {
            return Err(dim_err(format!(
                "conv2d: input {sx:?} incompatible with kernel {sw:?}"
            )));
        }
        if spec.stride_t == 0 {
            return Err(dim_err("conv2d: stride must be positive"));
        }
        let (n, c, t, v) = (sx[0], sx[1], sx[2], sx[3]);
        let (c_out, kt, kv) = (sw[0], sw[2], sw[3]);
        let (tp, vp) = (t + 2 * spec.pad_t, v + 2 * spec.pad_v);
        if kt > tp || kv > vp {
            return Err(dim_err(format!(
                "conv2d: kernel {kt}×{kv} larger than padded input {tp}×{vp}"
            )));
        }
        let geom = ConvGeom {
            c,
            t,
            v,
            kt,
            kv,
            stride_t: spec.stride_t,
            pad_t: spec.pad_t,
            pad_v: spec.pad_v,
            t_out: (tp - kt) / spec.stride_t + 1,
            v_out: vp - kv + 1,
        };
        let (rows, cols) = (geom.col_rows(), geom.col_cols());
        let mut out = Tensor::zeros(&[n, c_out, geom.t_out, geom.v_out]);
        {
            let xd = self.value(x).data();
            let wd = self.value(w).data();
            let in_len = c * t * v;
            out.data_mut()
                .par_chunks_mut(c_out * cols)
                .enumerate()
                .for_each(|(i, o)| {
                    let xs = &xd[i * in_len..(i + 1) * in_len];
                    if geom.is_pointwise() {
                        gemm(c_out, rows, cols, Mat::row_major(wd, rows), Mat::row_major(xs, cols), o, false);
                    } else {
                        let mut buf = vec![0.0; rows * cols];
                        im2col(xs, &geom, &mut buf);
                        gemm(c_out, rows, cols, Mat::row_major(wd, rows), Mat::row_major(&buf, cols), o, false);
                    }
                });
        }
        let rg = self.rg(x) || self.rg(w);
        Ok(self.push(out, Op::Conv2d { x, w, geom, n, c_out }, rg))
    }

    /// Adds `b[c]` to every element of channel `c` of an N×C×… tensor.
    pub fn channel_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let (sx, sb) = (self.shape(x), self.shape(b));
        if sx.len() < 2 || sb.len() != 1 || sb[0] != sx[1] {
            return Err(dim_err(format!("channel_bias: bias {sb:?} does not fit {sx:?}")));
        }
        let c = sx[1];
        let inner: usize = sx[2..].iter().product();
        let mut out = self.value(x).clone();
        let bd = self.value(b).data();
        for (i, chunk) in out.data_mut().chunks_mut(inner).enumerate() {
            let bias = bd[i % c];
            chunk.iter_mut().for_each(|v| *v += bias);
        }
        let rg = self.rg(x) || self.rg(b);
        Ok(self.push(out, Op::ChannelBias { x, b }, rg))
    }

    /// `a + b` where `b`'s shape equals `a`'s or a trailing suffix of it.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sb.len() > sa.len() || sa[sa.len() - sb.len()..] != *sb {
            return Err(dim_err(format!("add: cannot broadcast {sb:?} onto {sa:?}")));
        }
        let inner = self.value(b).numel();
        let mut out = self.value(a).clone();
        let bd = self.value(b).data();
        for chunk in out.data_mut().chunks_mut(inner) {
            chunk.iter_mut().zip(bd).for_each(|(o, v)| *o += v);
        }
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Add { a, b }, rg))
    }

    /// Elementwise product with a constant of identical shape.
    pub fn mul_const(&mut self, a: Var, c: &Tensor) -> Result<Var> {
        if self.shape(a) != c.shape() {
            return Err(dim_err(format!(
                "mul_const: shapes {:?} and {:?} differ",
                self.shape(a),
                c.shape()
            )));
        }
        let mut out = self.value(a).clone();
        out.data_mut()
            .iter_mut()
            .zip(c.data())
            .for_each(|(o, k)| *o *= k);
        let rg = self.rg(a);
        Ok(self.push(out, Op::MulConst { a, c: c.clone() }, rg))
    }

    /// Node mixing along the last axis: `out[.., i] = Σ_j a[i, j] · x[.., j]`.
    pub fn graph_mix(&mut self, x: Var, a: Var) -> Result<Var> {
        let (sx, sa) = (self.shape(x), self.shape(a));
        let v = *sx.last().unwrap();
        if sa.len() != 2 || sa[0] != v || sa[1] != v {
            return Err(dim_err(format!(
                "graph_mix: adjacency {sa:?} does not match joint axis of {sx:?}"
            )));
        }
        let r = self.value(x).numel() / v;
        let mut out = Tensor::zeros(sx);
        gemm(
            r,
            v,
            v,
            Mat::row_major(self.value(x).data(), v),
            Mat::row_major(self.value(a).data(), v).t(),
            out.data_mut(),
            false,
        );
        let rg = self.rg(x) || self.rg(a);
        Ok(self.push(out, Op::GraphMix { x, a }, rg))
    }

    /// Per-channel normalization of an N×C×… tensor followed by `γ·x̂ + β`.
    ///
    /// In training mode the batch statistics are returned so the caller can
    /// fold them into its running estimates.
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        mode: BatchNormMode<'_>,
    ) -> Result<(Var, Option<BatchStats>)> {
        let sx = self.shape(x).to_vec();
        if sx.len() < 2 {
            return Err(dim_err(format!("batch_norm: input {sx:?} has no channel axis")));
        }
        let (n, c) = (sx[0], sx[1]);
        let inner: usize = sx[2..].iter().product();
        for (what, s) in [("gamma", self.shape(gamma)), ("beta", self.shape(beta))] {
            if s != [c] {
                return Err(dim_err(format!("batch_norm: {what} {s:?} vs {c} channels")));
            }
        }
        let xd = self.value(x).data();
        let count = n * inner;
        let (mean, var, train) = match mode {
            BatchNormMode::Train => {
                let mut mean = vec![0.0; c];
                let mut var = vec![0.0; c];
                for ch in 0..c {
                    let mut s = 0.0;
                    for b in 0..n {
                        s += xd[(b * c + ch) * inner..(b * c + ch + 1) * inner].iter().sum::<f64>();
                    }
                    let mu = s / count as f64;
                    let mut q = 0.0;
                    for b in 0..n {
                        q += xd[(b * c + ch) * inner..(b * c + ch + 1) * inner]
                            .iter()
                            .map(|v| (v - mu) * (v - mu))
                            .sum::<f64>();
                    }
                    mean[ch] = mu;
                    var[ch] = q / count as f64;
                }
                (mean, var, true)
            }
            BatchNormMode::Eval { mean, var } => {
                if mean.len() != c || var.len() != c {
                    return Err(dim_err(format!(
                        "batch_norm: running stats of width {} vs {c} channels",
                        mean.len()
                    )));
                }
                (mean.to_vec(), var.to_vec(), false)
            }
        };
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
        let gd = self.value(gamma).data();
        let bd = self.value(beta).data();
        let mut xhat = vec![0.0; xd.len()];
        let mut out = Tensor::zeros(&sx);
        for (i, (chunk, hat)) in xd.chunks(inner).zip(xhat.chunks_mut(inner)).enumerate() {
            let ch = i % c;
            let o = &mut out.data_mut()[i * inner..(i + 1) * inner];
            for ((h, y), v) in hat.iter_mut().zip(o.iter_mut()).zip(chunk) {
                *h = (v - mean[ch]) * inv_std[ch];
                *y = gd[ch] * *h + bd[ch];
            }
        }
        let rg = self.rg(x) || self.rg(gamma) || self.rg(beta);
        let stats = train.then(|| BatchStats {
            mean,
            var,
            count,
        });
        let node = self.push(
            out,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                train,
            },
            rg,
        );
        Ok((node, stats))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let mut out = self.value(x).clone();
        out.data_mut().iter_mut().for_each(|v| *v = v.max(0.0));
        let rg = self.rg(x);
        self.push(out, Op::Relu { x }, rg)
    }

    /// Mean over every axis after the channel axis: N×C×… → N×C.
    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let sx = self.shape(x);
        if sx.len() < 3 {
            return Err(dim_err(format!("global_avg_pool: input {sx:?} has no spatial axes")));
        }
        let (n, c) = (sx[0], sx[1]);
        let inner: usize = sx[2..].iter().product();
        let data: Vec<f64> = self
            .value(x)
            .data()
            .chunks(inner)
            .map(|ch| ch.iter().sum::<f64>() / inner as f64)
            .collect();
        let out = Tensor::new(vec![n, c], data)?;
        let rg = self.rg(x);
        Ok(self.push(out, Op::GlobalAvgPool { x }, rg))
    }

    /// Averages consecutive groups of `group` rows: (N·group)×C → N×C.
    pub fn group_mean(&mut self, x: Var, group: usize) -> Result<Var> {
        let sx = self.shape(x);
        if sx.len() != 2 || group == 0 || sx[0] % group != 0 {
            return Err(dim_err(format!("group_mean: {sx:?} not divisible into groups of {group}")));
        }
        let (rows, c) = (sx[0], sx[1]);
        let xd = self.value(x).data();
        let mut out = Tensor::zeros(&[rows / group, c]);
        for (r, row) in xd.chunks(c).enumerate() {
            let o = &mut out.data_mut()[(r / group) * c..(r / group + 1) * c];
            o.iter_mut().zip(row).for_each(|(a, b)| *a += b / group as f64);
        }
        let rg = self.rg(x);
        Ok(self.push(out, Op::GroupMean { x, group }, rg))
    }

    /// `x·W + b` for x: N×C, W: C×K, b: K.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let y = self.matmul(x, w)?;
        self.add(y, b)
    }

    /// Mean negative log-likelihood of `labels` under softmax(`logits`).
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let sl = self.shape(logits);
        if sl.len() != 2 || sl[0] != labels.len() {
            return Err(dim_err(format!(
                "softmax_cross_entropy: logits {sl:?} vs {} labels",
                labels.len()
            )));
        }
        let (n, k) = (sl[0], sl[1]);
        if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
            return Err(Error::Label(format!("label {bad} outside [0, {k})")));
        }
        let ld = self.value(logits).data();
        let mut probs = vec![0.0; n * k];
        let mut loss = 0.0;
        for (i, (row, p)) in ld.chunks(k).zip(probs.chunks_mut(k)).enumerate() {
            let (arg, max) = row
                .iter()
                .cloned()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |acc, (j, r)| if r > acc.1 { (j, r) } else { acc });
            // log-sum-exp as ln(1 + rest) keeps tiny losses exact
            let mut rest = 0.0;
            for (j, (pi, &r)) in p.iter_mut().zip(row).enumerate() {
                *pi = (r - max).exp();
                if j != arg {
                    rest += *pi;
                }
            }
            let z = 1.0 + rest;
            p.iter_mut().for_each(|v| *v /= z);
            loss += rest.ln_1p() - (row[labels[i]] - max);
        }
        let rg = self.rg(logits);
        Ok(self.push(
            Tensor::scalar(loss / n as f64),
            Op::SoftmaxCe {
                logits,
                probs,
                labels: labels.to_vec(),
            },
            rg,
        ))
    }

    /// `Σ x ⊙ c`, a scalar probe used to reduce any output to a loss.
    pub fn dot_const(&mut self, x: Var, c: &Tensor) -> Result<Var> {
        if self.shape(x) != c.shape() {
            return Err(dim_err(format!(
                "dot_const: shapes {:?} and {:?} differ",
                self.shape(x),
                c.shape()
            )));
        }
        let s: f64 = self.value(x).data().iter().zip(c.data()).map(|(a, b)| a * b).sum();
        let rg = self.rg(x);
        Ok(self.push(Tensor::scalar(s), Op::DotConst { x, c: c.clone() }, rg))
    }

    /// Reverse sweep from a scalar output.
    pub fn backward(&self, output: Var) -> Result<Gradients> {
        if self.value(output).numel() != 1 {
            return Err(dim_err(format!(
                "backward: output {:?} is not a scalar",
                self.shape(output)
            )));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[output.0] = Some(Tensor::full(self.shape(output), 1.0));
        for id in (0..=output.0).rev() {
            let node = &self.nodes[id];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            self.backprop(node, &g, &mut grads);
            grads[id] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn backprop(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let gd = g.data();
        match &node.op {
            Op::Leaf => {}
            Op::MatMul { a, b } => {
                let (m, k) = (self.shape(*a)[0], self.shape(*a)[1]);
                let n = self.shape(*b)[1];
                if self.rg(*a) {
                    let bd = self.value(*b).data();
                    accumulate(&mut grads[a.0], &[m, k], |da| {
                        gemm(m, n, k, Mat::row_major(gd, n), Mat::row_major(bd, n).t(), da, true)
                    });
                }
                if self.rg(*b) {
                    let ad = self.value(*a).data();
                    accumulate(&mut grads[b.0], &[k, n], |db| {
                        gemm(k, m, n, Mat::row_major(ad, k).t(), Mat::row_major(gd, n), db, true)
                    });
                }
            }
            Op::Conv2d {
                x,
                w,
                geom,
                n,
                c_out,
            } => {
                let (rows, cols) = (geom.col_rows(), geom.col_cols());
                let in_len = geom.c * geom.t * geom.v;
                let out_len = c_out * cols;
                let xd = self.value(*x).data();
                let wd = self.value(*w).data();
                if self.rg(*w) {
                    let shape = self.shape(*w).to_vec();
                    accumulate(&mut grads[w.0], &shape, |dw| {
                        let mut buf = vec![0.0; if geom.is_pointwise() { 0 } else { rows * cols }];
                        for i in 0..*n {
                            let xs = &xd[i * in_len..(i + 1) * in_len];
                            let gs = &gd[i * out_len..(i + 1) * out_len];
                            let colm = if geom.is_pointwise() {
                                xs
                            } else {
                                im2col(xs, geom, &mut buf);
                                &buf
                            };
                            gemm(*c_out, cols, rows, Mat::row_major(gs, cols), Mat::row_major(colm, cols).t(), dw, true);
                        }
                    });
                }
                if self.rg(*x) {
                    let shape = self.shape(*x).to_vec();
                    accumulate(&mut grads[x.0], &shape, |dx| {
                        dx.par_chunks_mut(in_len).enumerate().for_each(|(i, dxs)| {
                            let gs = &gd[i * out_len..(i + 1) * out_len];
                            if geom.is_pointwise() {
                                gemm(rows, *c_out, cols, Mat::row_major(wd, rows).t(), Mat::row_major(gs, cols), dxs, true);
                            } else {
                                let mut dcols = vec![0.0; rows * cols];
                                gemm(rows, *c_out, cols, Mat::row_major(wd, rows).t(), Mat::row_major(gs, cols), &mut dcols, false);
                                col2im_add(&dcols, geom, dxs);
                            }
                        });
                    });
                }
            }
            Op::ChannelBias { x, b } => {
                if self.rg(*x) {
                    accumulate(&mut grads[x.0], g.shape(), |dx| {
                        dx.iter_mut().zip(gd).for_each(|(d, v)| *d += v)
                    });
                }
                if self.rg(*b) {
                    let c = g.shape()[1];
                    let inner: usize = g.shape()[2..].iter().product();
                    accumulate(&mut grads[b.0], &[c], |db| {
                        for (i, chunk) in gd.chunks(inner).enumerate() {
                            db[i % c] += chunk.iter().sum::<f64>();
                        }
                    });
                }
            }
            Op::Add { a, b } => {
                if self.rg(*a) {
                    accumulate(&mut grads[a.0], g.shape(), |da| {
                        da.iter_mut().zip(gd).for_each(|(d, v)| *d += v)
                    });
                }
                if self.rg(*b) {
                    let shape = self.shape(*b).to_vec();
                    let inner: usize = shape.iter().product();
                    accumulate(&mut grads[b.0], &shape, |db| {
                        for chunk in gd.chunks(inner) {
                            db.iter_mut().zip(chunk).for_each(|(d, v)| *d += v);
                        }
                    });
                }
            }
            Op::MulConst { a, c } => {
                accumulate(&mut grads[a.0], g.shape(), |da| {
                    for ((d, v), k) in da.iter_mut().zip(gd).zip(c.data()) {
                        *d += v * k;
                    }
                });
            }
            Op::GraphMix { x, a } => {
                let v = *g.shape().last().unwrap();
                let r = g.numel() / v;
                if self.rg(*x) {
                    let ad = self.value(*a).data();
                    accumulate(&mut grads[x.0], g.shape(), |dx| {
                        gemm(r, v, v, Mat::row_major(gd, v), Mat::row_major(ad, v), dx, true)
                    });
                }
                if self.rg(*a) {
                    let xd = self.value(*x).data();
                    accumulate(&mut grads[a.0], &[v, v], |da| {
                        gemm(v, r, v, Mat::row_major(gd, v).t(), Mat::row_major(xd, v), da, true)
                    });
                }
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                train,
            } => {
                let c = g.shape()[1];
                let inner: usize = g.shape()[2..].iter().product();
                let mut sum_g = vec![0.0; c];
                let mut sum_gx = vec![0.0; c];
                for (i, (gc, hc)) in gd.chunks(inner).zip(xhat.chunks(inner)).enumerate() {
                    let ch = i % c;
                    for (gv, hv) in gc.iter().zip(hc) {
                        sum_g[ch] += gv;
                        sum_gx[ch] += gv * hv;
                    }
                }
                if self.rg(*gamma) {
                    accumulate(&mut grads[gamma.0], &[c], |d| {
                        d.iter_mut().zip(&sum_gx).for_each(|(a, b)| *a += b)
                    });
                }
                if self.rg(*beta) {
                    accumulate(&mut grads[beta.0], &[c], |d| {
                        d.iter_mut().zip(&sum_g).for_each(|(a, b)| *a += b)
                    });
                }
                if self.rg(*x) {
                    let gam = self.value(*gamma).data();
                    let m = (g.numel() / c) as f64;
                    accumulate(&mut grads[x.0], g.shape(), |dx| {
                        for (i, ((dc, gc), hc)) in dx
                            .chunks_mut(inner)
                            .zip(gd.chunks(inner))
                            .zip(xhat.chunks(inner))
                            .enumerate()
                        {
                            let ch = i % c;
                            let k = gam[ch] * inv_std[ch];
                            if *train {
                                let (mg, mgx) = (sum_g[ch] / m, sum_gx[ch] / m);
                                for ((d, gv), hv) in dc.iter_mut().zip(gc).zip(hc) {
                                    *d += k * (gv - mg - hv * mgx);
                                }
                            } else {
                                dc.iter_mut().zip(gc).for_each(|(d, gv)| *d += k * gv);
                            }
                        }
                    });
                }
            }
            Op::Relu { x } => {
                let out = node.value.data();
                accumulate(&mut grads[x.0], g.shape(), |dx| {
                    for ((d, gv), o) in dx.iter_mut().zip(gd).zip(out) {
                        if *o > 0.0 {
                            *d += gv;
                        }
                    }
                });
            }
            Op::GlobalAvgPool { x } => {
                let shape = self.shape(*x).to_vec();
                let inner: usize = shape[2..].iter().product();
                accumulate(&mut grads[x.0], &shape, |dx| {
                    for (chunk, gv) in dx.chunks_mut(inner).zip(gd) {
                        let s = gv / inner as f64;
                        chunk.iter_mut().for_each(|d| *d += s);
                    }
                });
            }
            Op::GroupMean { x, group } => {
                let shape = self.shape(*x).to_vec();
                let c = shape[1];
                accumulate(&mut grads[x.0], &shape, |dx| {
                    for (r, row) in dx.chunks_mut(c).enumerate() {
                        let src = &gd[(r / group) * c..(r / group + 1) * c];
                        row.iter_mut().zip(src).for_each(|(d, v)| *d += v / *group as f64);
                    }
                });
            }
            Op::SoftmaxCe {
                logits,
                probs,
                labels,
            } => {
                let shape = self.shape(*logits).to_vec();
                let (n, k) = (shape[0], shape[1]);
                let s = gd[0] / n as f64;
                accumulate(&mut grads[logits.0], &shape, |dl| {
                    for i in 0..n {
                        for j in 0..k {
                            let onehot = if labels[i] == j { 1.0 } else { 0.0 };
                            dl[i * k + j] += s * (probs[i * k + j] - onehot);
                        }
                    }
                });
            }
            Op::DotConst { x, c } => {
                let s = gd[0];
                accumulate(&mut grads[x.0], c.shape(), |dx| {
                    dx.iter_mut().zip(c.data()).for_each(|(d, k)| *d += s * k)
                });
            }
        }
    }
}
