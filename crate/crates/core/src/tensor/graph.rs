use super::conv::{self, ConvGeom};
use super::{Element, Shape4, Tensor4};
use crate::error::{Error, Result};

/// Handle to a node on a [`Graph`] tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Per-channel running statistics of a batch-norm layer.
#[derive(Debug, Clone, PartialEq)]
pub struct RunningStats<T> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
    pub momentum: f64,
    pub eps: f64,
}

impl<T: Element> RunningStats<T> {
    pub fn new(channels: usize) -> Self {
        RunningStats {
            mean: vec![T::zero(); channels],
            var: vec![T::one(); channels],
            momentum: 0.1,
            eps: 1e-5,
        }
    }
}

pub enum BnMode<'a, T> {
    /// Normalize by batch statistics and fold them into the running stats.
    Train(&'a mut RunningStats<T>),
    /// Normalize by the running stats.
    Eval(&'a RunningStats<T>),
}

enum Op<T> {
    Leaf,
    Conv {
        x: Var,
        w: Var,
        b: Option<Var>,
        geom: ConvGeom,
    },
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<T>,
        inv_std: Vec<T>,
        batch_stats: bool,
    },
    Relu {
        x: Var,
    },
    MaxPool {
        x: Var,
        argmax: Vec<usize>,
    },
    Upsample {
        x: Var,
    },
    Concat {
        a: Var,
        b: Var,
    },
    Slice {
        x: Var,
        start: usize,
    },
    Add {
        a: Var,
        b: Var,
    },
    CrossEntropy {
        logits: Var,
        probs: Vec<T>,
        target: Vec<u8>,
        ignore: Option<u8>,
        count: usize,
    },
}

struct Node<T> {
    value: Tensor4<T>,
    op: Op<T>,
}

/// Reverse-mode autodiff tape. Nodes are appended in evaluation order, so
/// a reverse sweep over the tape is a valid topological order for backward.
pub struct Graph<T = f32> {
    nodes: Vec<Node<T>>,
}

impl<T: Element> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Element> Graph<T> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Adds an input tensor. Gradients are tracked iff `t.requires_grad`.
    pub fn leaf(&mut self, t: Tensor4<T>) -> Var {
        self.push(t, Op::Leaf)
    }

    pub fn value(&self, v: Var) -> &Tensor4<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> Shape4 {
        self.nodes[v.0].value.shape()
    }

    /// Gradient of the last backward target with respect to `v`.
    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.nodes[v.0].value.grad()
    }

    pub fn take_value(&mut self, v: Var) -> Tensor4<T> {
        std::mem::replace(&mut self.nodes[v.0].value, Tensor4::zeros(Shape4::new(0, 0, 0, 0)))
    }

    fn tracks(&self, v: Var) -> bool {
        self.nodes[v.0].value.requires_grad
    }

    fn push(&mut self, value: Tensor4<T>, op: Op<T>) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    fn push_op(&mut self, data: Vec<T>, shape: Shape4, op: Op<T>, inputs: &[Var]) -> Var {
        let mut t = Tensor4::from_vec(shape, data).expect("op output matches its shape");
        t.requires_grad = inputs.iter().any(|&v| self.tracks(v));
        self.push(t, op)
    }

    pub fn conv2d(
        &mut self,
        x: Var,
        weight: Var,
        bias: Option<Var>,
        stride: usize,
        pad: usize,
    ) -> Result<Var> {
        let xs = self.shape(x);
        let ws = self.shape(weight);
        if ws.h != ws.w {
            return Err(Error::input(format!("conv2d: kernel {ws} is not square")));
        }
        if ws.c != xs.c {
            return Err(Error::input(format!(
                "conv2d: input has {} channels, weight {ws} expects {}",
                xs.c, ws.c
            )));
        }
        if stride == 0 {
            return Err(Error::input("conv2d: stride must be at least 1"));
        }
        if let Some(b) = bias {
            if self.shape(b).len() != ws.n {
                return Err(Error::input(format!(
                    "conv2d: bias of {} elements for {} output channels",
                    self.shape(b).len(),
                    ws.n
                )));
            }
        }
        let geom = ConvGeom::new(xs, ws.n, ws.h, stride, pad).ok_or_else(|| {
            Error::input(format!(
                "conv2d: {}×{} kernel with pad {pad} does not fit input {xs}",
                ws.h, ws.w
            ))
        })?;
        let out = conv::forward(
            &geom,
            xs.n,
            self.value(x).data(),
            self.value(weight).data(),
            bias.map(|b| self.value(b).data()),
        );
        let shape = Shape4::new(xs.n, ws.n, geom.oh, geom.ow);
        let mut inputs = vec![x, weight];
        inputs.extend(bias);
        Ok(self.push_op(
            out,
            shape,
            Op::Conv {
                x,
                w: weight,
                b: bias,
                geom,
            },
            &inputs,
        ))
    }

    pub fn batchnorm2d(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        mode: BnMode<'_, T>,
    ) -> Result<Var> {
        let s = self.shape(x);
        let stats_len = match &mode {
            BnMode::Train(r) => r.mean.len().min(r.var.len()),
            BnMode::Eval(r) => r.mean.len().min(r.var.len()),
        };
        for (name, len) in [
            ("gamma", self.shape(gamma).len()),
            ("beta", self.shape(beta).len()),
            ("running stats", stats_len),
        ] {
            if len != s.c {
                return Err(Error::input(format!(
                    "batchnorm2d: {name} has {len} entries for {} channels",
                    s.c
                )));
            }
        }
        let plane = s.plane();
        let count = s.n * plane;
        let xd = self.value(x).data();
        let g = self.value(gamma).data();
        let b = self.value(beta).data();
        let mut mean = vec![T::zero(); s.c];
        let mut var = vec![T::zero(); s.c];
        let batch_stats = matches!(mode, BnMode::Train(_));
        let eps;
        match mode {
            BnMode::Train(running) => {
                if count == 0 {
                    return Err(Error::input("batchnorm2d: empty batch in train mode"));
                }
                eps = T::of(running.eps);
                let m = T::of(running.momentum);
                let cnt = T::of(count as f64);
                for c in 0..s.c {
                    let mut sum = T::zero();
                    for n in 0..s.n {
                        let base = (n * s.c + c) * plane;
                        sum = sum + xd[base..base + plane].iter().copied().sum::<T>();
                    }
                    let mu = sum / cnt;
                    let mut sq = T::zero();
                    for n in 0..s.n {
                        let base = (n * s.c + c) * plane;
                        sq = sq
                            + xd[base..base + plane]
                                .iter()
                                .map(|&v| (v - mu) * (v - mu))
                                .sum::<T>();
                    }
                    mean[c] = mu;
                    var[c] = sq / cnt;
                    let unbiased = if count > 1 {
                        sq / T::of((count - 1) as f64)
                    } else {
                        var[c]
                    };
                    running.mean[c] = (T::one() - m) * running.mean[c] + m * mu;
                    running.var[c] = (T::one() - m) * running.var[c] + m * unbiased;
                }
            }
            BnMode::Eval(running) => {
                eps = T::of(running.eps);
                mean.copy_from_slice(&running.mean);
                var.copy_from_slice(&running.var);
            }
        }
        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        let mut xhat = vec![T::zero(); s.len()];
        let mut out = vec![T::zero(); s.len()];
        for n in 0..s.n {
            for c in 0..s.c {
                let base = (n * s.c + c) * plane;
                for i in base..base + plane {
                    let h = (xd[i] - mean[c]) * inv_std[c];
                    xhat[i] = h;
                    out[i] = g[c] * h + b[c];
                }
            }
        }
        Ok(self.push_op(
            out,
            s,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                batch_stats,
            },
            &[x, gamma, beta],
        ))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let s = self.shape(x);
        let out = self
            .value(x)
            .data()
            .iter()
            .map(|&v| if v > T::zero() { v } else { T::zero() })
            .collect();
        self.push_op(out, s, Op::Relu { x }, &[x])
    }

    /// Window max over `k×k` windows; padded positions never win.
    pub fn maxpool2d(&mut self, x: Var, k: usize, stride: usize, pad: usize) -> Result<Var> {
        let s = self.shape(x);
        if k == 0 || stride == 0 || pad >= k {
            return Err(Error::input(format!(
                "maxpool2d: invalid window k={k} stride={stride} pad={pad}"
            )));
        }
        let oh = conv::out_dim(s.h, k, stride, pad)
            .ok_or_else(|| Error::input(format!("maxpool2d: window {k} exceeds input {s}")))?;
        let ow = conv::out_dim(s.w, k, stride, pad)
            .ok_or_else(|| Error::input(format!("maxpool2d: window {k} exceeds input {s}")))?;
        let xd = self.value(x).data();
        let shape = Shape4::new(s.n, s.c, oh, ow);
        let mut out = Vec::with_capacity(shape.len());
        let mut argmax = Vec::with_capacity(shape.len());
        for nc in 0..s.n * s.c {
            let base = nc * s.plane();
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = T::neg_infinity();
                    let mut best_i = usize::MAX;
                    for ky in 0..k {
                        let iy = (oy * stride + ky) as isize - pad as isize;
                        if iy < 0 || iy >= s.h as isize {
                            continue;
                        }
                        for kx in 0..k {
                            let ix = (ox * stride + kx) as isize - pad as isize;
                            if ix < 0 || ix >= s.w as isize {
                                continue;
                            }
                            let i = base + iy as usize * s.w + ix as usize;
                            if best_i == usize::MAX || xd[i] > best {
                                best = xd[i];
                                best_i = i;
                            }
                        }
                    }
                    out.push(best);
                    argmax.push(best_i);
                }
            }
        }
        Ok(self.push_op(out, shape, Op::MaxPool { x, argmax }, &[x]))
    }

    /// Bilinear 2× upsampling with half-pixel centers (corners not aligned).
    pub fn upsample_bilinear2x(&mut self, x: Var) -> Var {
        let s = self.shape(x);
        let shape = Shape4::new(s.n, s.c, s.h * 2, s.w * 2);
        let rows = upsample_taps(s.h);
        let cols = upsample_taps(s.w);
        let xd = self.value(x).data();
        let mut out = vec![T::zero(); shape.len()];
        for nc in 0..s.n * s.c {
            let src = &xd[nc * s.plane()..(nc + 1) * s.plane()];
            let dst = &mut out[nc * shape.plane()..(nc + 1) * shape.plane()];
            for (oy, &(y0, y1, fy)) in rows.iter().enumerate() {
                let fy = T::of(fy);
                for (ox, &(x0, x1, fx)) in cols.iter().enumerate() {
                    let fx = T::of(fx);
                    let top = src[y0 * s.w + x0] * (T::one() - fx) + src[y0 * s.w + x1] * fx;
                    let bot = src[y1 * s.w + x0] * (T::one() - fx) + src[y1 * s.w + x1] * fx;
                    dst[oy * shape.w + ox] = top * (T::one() - fy) + bot * fy;
                }
            }
        }
        self.push_op(out, shape, Op::Upsample { x }, &[x])
    }

    /// Stacks channels of `a` then `b`.
    pub fn concat_channels(&mut self, a: Var, b: Var) -> Result<Var> {
        let sa = self.shape(a);
        let sb = self.shape(b);
        if (sa.n, sa.h, sa.w) != (sb.n, sb.h, sb.w) {
            return Err(Error::input(format!(
                "concat_channels: {sa} and {sb} differ outside the channel axis"
            )));
        }
        let shape = Shape4::new(sa.n, sa.c + sb.c, sa.h, sa.w);
        let mut out = Vec::with_capacity(shape.len());
        for n in 0..sa.n {
            out.extend_from_slice(&self.value(a).data()[n * sa.item()..(n + 1) * sa.item()]);
            out.extend_from_slice(&self.value(b).data()[n * sb.item()..(n + 1) * sb.item()]);
        }
        Ok(self.push_op(out, shape, Op::Concat { a, b }, &[a, b]))
    }

    /// Channels `start..start + len`.
    pub fn slice_channels(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let s = self.shape(x);
        if start + len > s.c {
            return Err(Error::input(format!(
                "slice_channels: {start}..{} out of {} channels",
                start + len,
                s.c
            )));
        }
        let shape = Shape4::new(s.n, len, s.h, s.w);
        let mut out = Vec::with_capacity(shape.len());
        for n in 0..s.n {
            let base = n * s.item() + start * s.plane();
            out.extend_from_slice(&self.value(x).data()[base..base + len * s.plane()]);
        }
        Ok(self.push_op(out, shape, Op::Slice { x, start }, &[x]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let s = self.shape(a);
        if s != self.shape(b) {
            return Err(Error::input(format!(
                "add: shapes {s} and {} differ",
                self.shape(b)
            )));
        }
        let out = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| x + y)
            .collect();
        Ok(self.push_op(out, s, Op::Add { a, b }, &[a, b]))
    }

    /// Mean two-class softmax cross-entropy over pixels whose target is not
    /// `ignore`. `target` holds one label per (n, y, x). Yields a 1×1×1×1 scalar.
    pub fn softmax_cross_entropy(
        &mut self,
        logits: Var,
        target: &[u8],
        ignore: Option<u8>,
    ) -> Result<Var> {
        let s = self.shape(logits);
        if s.c != 2 {
            return Err(Error::input(format!(
                "softmax_cross_entropy: expected 2 logit channels, got {}",
                s.c
            )));
        }
        if target.len() != s.n * s.plane() {
            return Err(Error::input(format!(
                "softmax_cross_entropy: {} target labels for logits {s}",
                target.len()
            )));
        }
        if let Some(&bad) = target
            .iter()
            .find(|&&t| t > 1 && Some(t) != ignore)
        {
            return Err(Error::input(format!(
                "softmax_cross_entropy: target label {bad} outside {{0, 1}}"
            )));
        }
        let ld = self.value(logits).data();
        let plane = s.plane();
        let mut probs = vec![T::zero(); s.len()];
        let mut total = T::zero();
        let mut count = 0usize;
        for n in 0..s.n {
            for p in 0..plane {
                let i0 = n * 2 * plane + p;
                let i1 = i0 + plane;
                let (z0, z1) = (ld[i0], ld[i1]);
                let hi = z0.max(z1);
                let lse = hi + ((z0 - hi).exp() + (z1 - hi).exp()).ln();
                probs[i0] = (z0 - lse).exp();
                probs[i1] = (z1 - lse).exp();
                let t = target[n * plane + p];
                if Some(t) == ignore {
                    continue;
                }
                total = total + lse - if t == 0 { z0 } else { z1 };
                count += 1;
            }
        }
        let loss = if count == 0 {
            T::zero()
        } else {
            total / T::of(count as f64)
        };
        Ok(self.push_op(
            vec![loss],
            Shape4::new(1, 1, 1, 1),
            Op::CrossEntropy {
                logits,
                probs,
                target: target.to_vec(),
                ignore,
                count,
            },
            &[logits],
        ))
    }

    /// Backpropagates from a scalar node.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.shape(loss).len() != 1 {
            return Err(Error::input(format!(
                "backward: target {} is not a scalar",
                self.shape(loss)
            )));
        }
        self.backward_with(loss, vec![T::one()])
    }

    /// Backpropagates `seed` as the gradient of some objective with respect to `root`.
    pub fn backward_with(&mut self, root: Var, seed: Vec<T>) -> Result<()> {
        if seed.len() != self.shape(root).len() {
            return Err(Error::input(format!(
                "backward: seed of {} elements for node {}",
                seed.len(),
                self.shape(root)
            )));
        }
        for node in &mut self.nodes {
            node.value.clear_grad();
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(seed);
        for i in (0..=root.0).rev() {
            let Some(dy) = grads[i].take() else { continue };
            if !self.nodes[i].value.requires_grad {
                continue;
            }
            self.propagate(i, &dy, &mut grads);
            self.nodes[i].value.set_grad(dy)?;
        }
        Ok(())
    }

    fn propagate(&self, i: usize, dy: &[T], grads: &mut [Option<Vec<T>>]) {
        let node = &self.nodes[i];
        match &node.op {
            Op::Leaf => {}
            Op::Conv { x, w, b, geom } => {
                let xs = self.shape(*x);
                let need_dx = self.tracks(*x);
                let cg = conv::backward(
                    geom,
                    xs.n,
                    self.value(*x).data(),
                    self.value(*w).data(),
                    dy,
                    need_dx,
                );
                if let Some(dx) = cg.dx {
                    accumulate(grads, *x, dx);
                }
                if self.tracks(*w) {
                    accumulate(grads, *w, cg.dw);
                }
                if let Some(b) = b {
                    if self.tracks(*b) {
                        accumulate(grads, *b, cg.db);
                    }
                }
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                batch_stats,
            } => {
                let s = self.shape(*x);
                let plane = s.plane();
                let g = self.value(*gamma).data();
                let mut dgamma = vec![T::zero(); s.c];
                let mut dbeta = vec![T::zero(); s.c];
                for n in 0..s.n {
                    for c in 0..s.c {
                        let base = (n * s.c + c) * plane;
                        for j in base..base + plane {
                            dgamma[c] = dgamma[c] + dy[j] * xhat[j];
                            dbeta[c] = dbeta[c] + dy[j];
                        }
                    }
                }
                if self.tracks(*x) {
                    let mut dx = vec![T::zero(); s.len()];
                    let m = T::of((s.n * plane) as f64);
                    for c in 0..s.c {
                        // dxhat = dy·γ; with batch statistics the mean and
                        // variance paths contribute the two centering terms.
                        let scale = g[c] * inv_std[c];
                        let (mean_dy, mean_dy_xhat) = if *batch_stats {
                            (dbeta[c] / m, dgamma[c] / m)
                        } else {
                            (T::zero(), T::zero())
                        };
                        for n in 0..s.n {
                            let base = (n * s.c + c) * plane;
                            for j in base..base + plane {
                                dx[j] = scale * (dy[j] - mean_dy - xhat[j] * mean_dy_xhat);
                            }
                        }
                    }
                    accumulate(grads, *x, dx);
                }
                if self.tracks(*gamma) {
                    accumulate(grads, *gamma, dgamma);
                }
                if self.tracks(*beta) {
                    accumulate(grads, *beta, dbeta);
                }
            }
            Op::Relu { x } => {
                let dx = self
                    .value(*x)
                    .data()
                    .iter()
                    .zip(dy)
                    .map(|(&v, &d)| if v > T::zero() { d } else { T::zero() })
                    .collect();
                accumulate(grads, *x, dx);
            }
            Op::MaxPool { x, argmax } => {
                let mut dx = vec![T::zero(); self.shape(*x).len()];
                for (&src, &d) in argmax.iter().zip(dy) {
                    dx[src] = dx[src] + d;
                }
                accumulate(grads, *x, dx);
            }
            Op::Upsample { x } => {
                let s = self.shape(*x);
                let (oh, ow) = (s.h * 2, s.w * 2);
                let rows = upsample_taps(s.h);
                let cols = upsample_taps(s.w);
                let mut dx = vec![T::zero(); s.len()];
                for nc in 0..s.n * s.c {
                    let g = &dy[nc * oh * ow..(nc + 1) * oh * ow];
                    let dst = &mut dx[nc * s.plane()..(nc + 1) * s.plane()];
                    for (oy, &(y0, y1, fy)) in rows.iter().enumerate() {
                        let fy = T::of(fy);
                        for (ox, &(x0, x1, fx)) in cols.iter().enumerate() {
                            let fx = T::of(fx);
                            let d = g[oy * ow + ox];
                            let top = d * (T::one() - fy);
                            let bot = d * fy;
                            dst[y0 * s.w + x0] = dst[y0 * s.w + x0] + top * (T::one() - fx);
                            dst[y0 * s.w + x1] = dst[y0 * s.w + x1] + top * fx;
                            dst[y1 * s.w + x0] = dst[y1 * s.w + x0] + bot * (T::one() - fx);
                            dst[y1 * s.w + x1] = dst[y1 * s.w + x1] + bot * fx;
                        }
                    }
                }
                accumulate(grads, *x, dx);
            }
            Op::Concat { a, b } => {
                let sa = self.shape(*a);
                let sb = self.shape(*b);
                let item = sa.item() + sb.item();
                if self.tracks(*a) {
                    let mut da = Vec::with_capacity(sa.len());
                    for n in 0..sa.n {
                        da.extend_from_slice(&dy[n * item..n * item + sa.item()]);
                    }
                    accumulate(grads, *a, da);
                }
                if self.tracks(*b) {
                    let mut db = Vec::with_capacity(sb.len());
                    for n in 0..sb.n {
                        db.extend_from_slice(&dy[n * item + sa.item()..(n + 1) * item]);
                    }
                    accumulate(grads, *b, db);
                }
            }
            Op::Slice { x, start } => {
                let s = self.shape(*x);
                let out = node.value.shape();
                let mut dx = vec![T::zero(); s.len()];
                for n in 0..s.n {
                    let base = n * s.item() + start * s.plane();
                    dx[base..base + out.item()]
                        .copy_from_slice(&dy[n * out.item()..(n + 1) * out.item()]);
                }
                accumulate(grads, *x, dx);
            }
            Op::Add { a, b } => {
                if self.tracks(*a) {
                    accumulate(grads, *a, dy.to_vec());
                }
                if self.tracks(*b) {
                    accumulate(grads, *b, dy.to_vec());
                }
            }
            Op::CrossEntropy {
                logits,
                probs,
                target,
                ignore,
                count,
            } => {
                let s = self.shape(*logits);
                let plane = s.plane();
                let mut dx = vec![T::zero(); s.len()];
                if *count > 0 {
                    let scale = dy[0] / T::of(*count as f64);
                    for n in 0..s.n {
                        for p in 0..plane {
                            let t = target[n * plane + p];
                            if Some(t) == *ignore {
                                continue;
                            }
                            let i0 = n * 2 * plane + p;
                            let i1 = i0 + plane;
                            let (y0, y1) = if t == 0 {
                                (T::one(), T::zero())
                            } else {
                                (T::zero(), T::one())
                            };
                            dx[i0] = (probs[i0] - y0) * scale;
                            dx[i1] = (probs[i1] - y1) * scale;
                        }
                    }
                }
                accumulate(grads, *logits, dx);
            }
        }
    }
}

fn accumulate<T: Element>(grads: &mut [Option<Vec<T>>], v: Var, g: Vec<T>) {
    match &mut grads[v.0] {
        Some(acc) => {
            for (a, b) in acc.iter_mut().zip(g) {
                *a = *a + b;
            }
        }
        slot @ None => *slot = Some(g),
    }
}

/// Source taps `(i0, i1, frac)` for each output index of a 2× bilinear resize
/// of an axis of length `n`.
fn upsample_taps(n: usize) -> Vec<(usize, usize, f64)> {
    (0..2 * n)
        .map(|o| {
            let src = ((o as f64 + 0.5) / 2.0 - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(n - 1);
            let i1 = (i0 + 1).min(n - 1);
            (i0, i1, src - i0 as f64)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: Shape4, data: Vec<f64>) -> Tensor4<f64> {
        Tensor4::from_vec(shape, data).unwrap()
    }

    #[test]
    fn identity_kernel_reproduces_input() {
        let mut g = Graph::<f64>::new();
        let data: Vec<f64> = (0..9).map(|i| i as f64 - 4.0).collect();
        let x = g.leaf(t(Shape4::new(1, 1, 3, 3), data.clone()));
        let w = g.leaf(t(Shape4::new(1, 1, 1, 1), vec![1.0]));
        let y = g.conv2d(x, w, None, 1, 0).unwrap();
        assert_eq!(g.value(y).data(), &data[..]);
    }

    #[test]
    fn all_ones_kernel_sums_window() {
        let mut g = Graph::<f64>::new();
        let x = g.leaf(t(Shape4::new(1, 1, 2, 2), vec![1.0, 2.0, 3.0, 4.0]));
        let w = g.leaf(t(Shape4::new(1, 1, 2, 2), vec![1.0; 4]));
        let y = g.conv2d(x, w, None, 1, 0).unwrap();
        assert_eq!(g.shape(y), Shape4::new(1, 1, 1, 1));
        assert_eq!(g.value(y).data(), &[10.0]);
    }

    #[test]
    fn centered_delta_is_identity_with_same_padding() {
        for k in [3usize, 5] {
            let mut g = Graph::<f64>::new();
            let data: Vec<f64> = (0..2 * 36).map(|i| (i as f64 * 0.7).sin()).collect();
            let x = g.leaf(t(Shape4::new(1, 2, 6, 6), data.clone()));
            let mut wd = vec![0.0; 2 * 2 * k * k];
            for c in 0..2 {
                wd[(c * 2 + c) * k * k + (k / 2) * k + k / 2] = 1.0;
            }
            let w = g.leaf(t(Shape4::new(2, 2, k, k), wd));
            let y = g.conv2d(x, w, None, 1, (k - 1) / 2).unwrap();
            assert_eq!(g.value(y).data(), &data[..]);
        }
    }

    #[test]
    fn conv_rejects_channel_mismatch() {
        let mut g = Graph::<f32>::new();
        let x = g.leaf(Tensor4::zeros(Shape4::new(1, 3, 4, 4)));
        let w = g.leaf(Tensor4::zeros(Shape4::new(2, 2, 3, 3)));
        assert!(matches!(
            g.conv2d(x, w, None, 1, 1),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn batchnorm_constant_channel_normalizes_to_zero() {
        let mut g = Graph::<f32>::new();
        let mut data = vec![3.0f32; 2 * 2 * 4];
        data[16..].fill(-1.5);
        let x = g.leaf(Tensor4::from_vec(Shape4::new(2, 2, 2, 2), data).unwrap());
        let gamma = g.leaf(Tensor4::full(Shape4::new(1, 2, 1, 1), 1.0));
        let beta = g.leaf(Tensor4::zeros(Shape4::new(1, 2, 1, 1)));
        let mut rs = RunningStats::new(2);
        let y = g
            .batchnorm2d(x, gamma, beta, BnMode::Train(&mut rs))
            .unwrap();
        assert!(g.value(y).data().iter().all(|v| v.abs() < 1e-3));
    }

    #[test]
    fn batchnorm_zero_gamma_outputs_beta() {
        let mut g = Graph::<f32>::new();
        let data: Vec<f32> = (0..16).map(|i| i as f32 * 0.3 - 2.0).collect();
        let x = g.leaf(Tensor4::from_vec(Shape4::new(2, 2, 2, 2), data).unwrap());
        let gamma = g.leaf(Tensor4::zeros(Shape4::new(1, 2, 1, 1)));
        let beta =
            g.leaf(Tensor4::from_vec(Shape4::new(1, 2, 1, 1), vec![0.25, -4.0]).unwrap());
        for train in [true, false] {
            let mut rs = RunningStats::new(2);
            let mode = if train {
                BnMode::Train(&mut rs)
            } else {
                BnMode::Eval(&rs)
            };
            let y = g.batchnorm2d(x, gamma, beta, mode).unwrap();
            let out = g.value(y);
            for n in 0..2 {
                assert!(out.plane(n, 0).iter().all(|&v| v == 0.25));
                assert!(out.plane(n, 1).iter().all(|&v| v == -4.0));
            }
        }
    }

    #[test]
    fn batchnorm_updates_running_stats_with_momentum() {
        let mut g = Graph::<f64>::new();
        let x = g.leaf(t(Shape4::new(1, 1, 1, 4), vec![1.0, 2.0, 3.0, 4.0]));
        let gamma = g.leaf(t(Shape4::new(1, 1, 1, 1), vec![1.0]));
        let beta = g.leaf(t(Shape4::new(1, 1, 1, 1), vec![0.0]));
        let mut rs = RunningStats::<f64>::new(1);
        g.batchnorm2d(x, gamma, beta, BnMode::Train(&mut rs)).unwrap();
        // batch mean 2.5, unbiased variance 5/3
        assert!((rs.mean[0] - 0.25).abs() < 1e-12);
        assert!((rs.var[0] - (0.9 + 0.1 * 5.0 / 3.0)).abs() < 1e-12);
    }

    #[test]
    fn batchnorm_rejects_channel_mismatch() {
        let mut g = Graph::<f32>::new();
        let x = g.leaf(Tensor4::zeros(Shape4::new(1, 3, 2, 2)));
        let gamma = g.leaf(Tensor4::zeros(Shape4::new(1, 2, 1, 1)));
        let beta = g.leaf(Tensor4::zeros(Shape4::new(1, 2, 1, 1)));
        let rs = RunningStats::new(3);
        assert!(g.batchnorm2d(x, gamma, beta, BnMode::Eval(&rs)).is_err());
    }

    #[test]
    fn relu_clamps_negatives() {
        let mut g = Graph::<f32>::new();
        let x = g.leaf(Tensor4::from_vec(Shape4::new(1, 1, 1, 3), vec![-1.0, 0.0, 2.0]).unwrap());
        let y = g.relu(x);
        assert_eq!(g.value(y).data(), &[0.0, 0.0, 2.0]);
    }

    #[test]
    fn maxpool_picks_window_max() {
        let mut g = Graph::<f32>::new();
        let data: Vec<f32> = (0..16).map(|i| i as f32).collect();
        let x = g.leaf(Tensor4::from_vec(Shape4::new(1, 1, 4, 4), data).unwrap());
        let y = g.maxpool2d(x, 2, 2, 0).unwrap();
        assert_eq!(g.value(y).data(), &[5.0, 7.0, 13.0, 15.0]);
        let z = g.maxpool2d(x, 3, 2, 1).unwrap();
        assert_eq!(g.shape(z), Shape4::new(1, 1, 2, 2));
        assert_eq!(g.value(z).data(), &[5.0, 7.0, 13.0, 15.0]);
    }

    #[test]
    fn upsample_constant_map_stays_constant() {
        let mut g = Graph::<f32>::new();
        let x = g.leaf(Tensor4::full(Shape4::new(2, 3, 3, 5), 0.7));
        let y = g.upsample_bilinear2x(x);
        assert_eq!(g.shape(y), Shape4::new(2, 3, 6, 10));
        assert!(g.value(y).data().iter().all(|&v| (v - 0.7).abs() < 1e-6));
    }

    #[test]
    fn upsample_uses_half_pixel_centers() {
        // 1-D ramp [0, 1]: outputs sit at source coords -0.25, 0.25, 0.75, 1.25.
        let mut g = Graph::<f64>::new();
        let x = g.leaf(t(Shape4::new(1, 1, 1, 2), vec![0.0, 1.0]));
        let y = g.upsample_bilinear2x(x);
        assert_eq!(g.value(y).data()[..4], [0.0, 0.25, 0.75, 1.0]);
    }

    #[test]
    fn concat_places_first_operand_first() {
        let mut g = Graph::<f32>::new();
        let a = g.leaf(Tensor4::full(Shape4::new(1, 2, 4, 4), 1.0));
        let b = g.leaf(Tensor4::full(Shape4::new(1, 3, 4, 4), 2.0));
        let y = g.concat_channels(a, b).unwrap();
        let out = g.value(y);
        assert_eq!(out.shape(), Shape4::new(1, 5, 4, 4));
        assert!(out.plane(0, 0).iter().chain(out.plane(0, 1)).all(|&v| v == 1.0));
        assert!((2..5).all(|c| out.plane(0, c).iter().all(|&v| v == 2.0)));
    }

    #[test]
    fn concat_rejects_spatial_mismatch() {
        let mut g = Graph::<f32>::new();
        let a = g.leaf(Tensor4::zeros(Shape4::new(1, 2, 4, 4)));
        let b = g.leaf(Tensor4::zeros(Shape4::new(1, 2, 4, 5)));
        assert!(g.concat_channels(a, b).is_err());
    }

    #[test]
    fn cross_entropy_uniform_logits_is_ln2() {
        let mut g = Graph::<f64>::new();
        let x = g.leaf(Tensor4::zeros(Shape4::new(1, 2, 3, 3)));
        let target = [0, 1, 1, 0, 0, 1, 0, 1, 1];
        let loss = g.softmax_cross_entropy(x, &target, None).unwrap();
        assert!((g.value(loss).data()[0] - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn cross_entropy_saturated_correct_is_zero() {
        let mut g = Graph::<f64>::new();
        let x = g.leaf(t(Shape4::new(1, 2, 1, 1), vec![20.0, -20.0]));
        let loss = g.softmax_cross_entropy(x, &[0], None).unwrap();
        assert!(g.value(loss).data()[0] < 1e-15);
    }

    #[test]
    fn cross_entropy_skips_ignored_pixels() {
        let mut g = Graph::<f64>::new();
        let x = g.leaf(t(Shape4::new(1, 2, 1, 2), vec![20.0, 0.0, -20.0, 0.0]));
        let loss = g.softmax_cross_entropy(x, &[0, 255], Some(255)).unwrap();
        assert!(g.value(loss).data()[0] < 1e-15);
        assert!(g.softmax_cross_entropy(x, &[0, 2], Some(255)).is_err());
        assert!(g.softmax_cross_entropy(x, &[0, 2], None).is_err());
    }

    #[test]
    fn backward_requires_scalar_root() {
        let mut g = Graph::<f32>::new();
        let x = g.leaf(Tensor4::zeros(Shape4::new(1, 1, 2, 2)).with_grad());
        let y = g.relu(x);
        assert!(g.backward(y).is_err());
    }

    #[test]
    fn residual_add_sums_gradients() {
        let mut g = Graph::<f64>::new();
        let x = g.leaf(t(Shape4::new(1, 1, 1, 2), vec![1.0, -1.0]).with_grad());
        let y = g.add(x, x).unwrap();
        g.backward_with(y, vec![1.0, 3.0]).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[2.0, 6.0]);
    }
}
