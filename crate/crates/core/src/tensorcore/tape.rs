use super::kernels::{self, ConvAlgo, ConvGeom};
use super::tensor::{Element, Tensor};
use crate::error::{Error, Result};

pub const BN_EPSILON: f64 = 1e-5;
/// Fraction of the previous running statistic kept on each update.
pub const BN_MOMENTUM: f64 = 0.9;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BnMode {
    Train,
    Eval,
}

/// Per-channel running mean/variance of a batch-norm layer.
#[derive(Clone, Debug, PartialEq)]
pub struct RunningStats<E = f32> {
    pub mean: Vec<E>,
    pub var: Vec<E>,
}

impl<E: Element> RunningStats<E> {
    pub fn new(channels: usize) -> Self {
        Self {
            mean: vec![E::zero(); channels],
            var: vec![E::one(); channels],
        }
    }
}

/// A multiply-accumulate carrying operation that ran on a tape.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum LinearOp {
    Conv2d {
        input: Vec<usize>,
        weight: Vec<usize>,
        stride: usize,
        pad: usize,
    },
    Depthwise {
        input: Vec<usize>,
        weight: Vec<usize>,
        stride: usize,
        pad: usize,
    },
    Dense {
        input: Vec<usize>,
        weight: Vec<usize>,
    },
}

#[derive(Debug)]
enum Op<E> {
    Leaf,
    Conv2d {
        x: Var,
        w: Var,
        geom: ConvGeom,
    },
    Depthwise {
        x: Var,
        w: Var,
        geom: ConvGeom,
    },
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<E>,
        inv_std: Vec<E>,
        mode: BnMode,
    },
    Relu(Var),
    Silu(Var),
    Sigmoid(Var),
    GlobalAvgPool(Var),
    Reshape(Var),
    Dense {
        x: Var,
        w: Var,
        b: Option<Var>,
    },
    Add {
        a: Var,
        b: Var,
        broadcast: bool,
    },
    Mul {
        a: Var,
        b: Var,
        broadcast: bool,
    },
    Scale(Var, E),
    Sum(Var),
    SoftmaxCe {
        logits: Var,
        labels: Vec<usize>,
        probs: Vec<E>,
    },
}

#[derive(Debug)]
struct Node<E> {
    value: Tensor<E>,
    requires_grad: bool,
    op: Op<E>,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients<E = f32> {
    grads: Vec<Option<Tensor<E>>>,
}

impl<E: Element> Gradients<E> {
    pub fn get(&self, v: Var) -> Option<&Tensor<E>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<E>> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

/// Append-only record of executed operations. Values are immutable once
/// recorded; [`Tape::backward`] replays the record in reverse.
#[derive(Debug, Default)]
pub struct Tape<E = f32> {
    nodes: Vec<Node<E>>,
    conv_algo: ConvAlgo,
}

/// Shape relation of the second operand of `add`/`mul`.
fn broadcast_kind(a: &[usize], b: &[usize], op: &'static str) -> Result<bool> {
    if a == b {
        return Ok(false);
    }
    match (a, b) {
        ([n, c, _, _], [bn, bc, 1, 1]) if n == bn && c == bc => Ok(true),
        _ => Err(Error::shape(op, format!("cannot combine {a:?} with {b:?}"))),
    }
}

impl<E: Element> Tape<E> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            conv_algo: ConvAlgo::default(),
        }
    }

    pub fn with_conv_algo(mut self, algo: ConvAlgo) -> Self {
        self.conv_algo = algo;
        self
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn leaf(&mut self, value: Tensor<E>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            requires_grad,
            op: Op::Leaf,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor<E> {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, name: &'static str, value: Tensor<E>, inputs: &[Var], op: Op<E>) -> Result<Var> {
        if !value.all_finite() {
            return Err(Error::NonFinite(name));
        }
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            requires_grad,
            op,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    pub fn conv2d(&mut self, x: Var, w: Var, stride: usize, pad: usize) -> Result<Var> {
        let xs = self.value(x).dims4("conv2d")?;
        let (cout, wcin, kh, kw) = self.value(w).dims4("conv2d")?;
        if wcin != xs.1 || kh != kw {
            return Err(Error::shape(
                "conv2d",
                format!("input {:?} vs weight {:?}", self.value(x).shape(), self.value(w).shape()),
            ));
        }
        let geom = ConvGeom::new(xs, cout, kh, stride, pad)?;
        let out = kernels::conv2d_forward(&geom, self.value(x).data(), self.value(w).data(), self.conv_algo);
        let value = Tensor::new(vec![geom.n, cout, geom.hout, geom.wout], out)?;
        self.push("conv2d", value, &[x, w], Op::Conv2d { x, w, geom })
    }

    pub fn depthwise_conv2d(&mut self, x: Var, w: Var, stride: usize, pad: usize) -> Result<Var> {
        let xs = self.value(x).dims4("depthwise_conv2d")?;
        let (c, one, kh, kw) = self.value(w).dims4("depthwise_conv2d")?;
        if c != xs.1 || one != 1 || kh != kw {
            return Err(Error::shape(
                "depthwise_conv2d",
                format!("input {:?} vs weight {:?}", self.value(x).shape(), self.value(w).shape()),
            ));
        }
        let geom = ConvGeom::new(xs, c, kh, stride, pad)?;
        let out = kernels::depthwise_forward(&geom, self.value(x).data(), self.value(w).data());
        let value = Tensor::new(vec![geom.n, c, geom.hout, geom.wout], out)?;
        self.push("depthwise_conv2d", value, &[x, w], Op::Depthwise { x, w, geom })
    }

    /// Batch normalization over `(N, H, W)` per channel. In train mode the
    /// batch moments normalize and `stats` is updated in place; in eval mode
    /// `stats` normalizes and is left untouched.
    pub fn batchnorm2d(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        stats: &mut RunningStats<E>,
        mode: BnMode,
    ) -> Result<Var> {
        let (n, c, h, w) = self.value(x).dims4("batchnorm2d")?;
        if self.value(gamma).numel() != c || self.value(beta).numel() != c || stats.mean.len() != c {
            return Err(Error::shape("batchnorm2d", format!("{c} channels vs gamma/beta/stats")));
        }
        let m = n * h * w;
        if m == 0 {
            return Err(Error::InvalidArgument("batchnorm2d on an empty batch".into()));
        }
        let plane = h * w;
        let eps = E::from_f64(BN_EPSILON);
        let xd = self.value(x).data();
        let (mean, var) = match mode {
            BnMode::Train => {
                let mut mean = vec![E::zero(); c];
                let mut var = vec![E::zero(); c];
                let mf = E::from_f64(m as f64);
                for ch in 0..c {
                    let mut s = E::zero();
                    for b in 0..n {
                        for v in &xd[(b * c + ch) * plane..][..plane] {
                            s = s + *v;
                        }
                    }
                    let mu = s / mf;
                    let mut q = E::zero();
                    for b in 0..n {
                        for v in &xd[(b * c + ch) * plane..][..plane] {
                            q = q + (*v - mu) * (*v - mu);
                        }
                    }
                    mean[ch] = mu;
                    var[ch] = q / mf;
                }
                (mean, var)
            }
            BnMode::Eval => (stats.mean.clone(), stats.var.clone()),
        };
        let inv_std: Vec<E> = var.iter().map(|v| E::one() / (*v + eps).sqrt()).collect();
        let g = self.value(gamma).data();
        let bt = self.value(beta).data();
        let mut xhat = vec![E::zero(); xd.len()];
        let mut out = vec![E::zero(); xd.len()];
        for b in 0..n {
            for ch in 0..c {
                let base = (b * c + ch) * plane;
                for i in base..base + plane {
                    xhat[i] = (xd[i] - mean[ch]) * inv_std[ch];
                    out[i] = g[ch] * xhat[i] + bt[ch];
                }
            }
        }
        if mode == BnMode::Train {
            let keep = E::from_f64(BN_MOMENTUM);
            let take = E::one() - keep;
            let unbias = if m > 1 {
                E::from_f64(m as f64 / (m as f64 - 1.0))
            } else {
                E::one()
            };
            for ch in 0..c {
                stats.mean[ch] = keep * stats.mean[ch] + take * mean[ch];
                stats.var[ch] = keep * stats.var[ch] + take * var[ch] * unbias;
            }
        }
        let value = Tensor::new(vec![n, c, h, w], out)?;
        self.push(
            "batchnorm2d",
            value,
            &[x, gamma, beta],
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                mode,
            },
        )
    }

    fn map(&mut self, name: &'static str, x: Var, f: impl Fn(E) -> E, op: Op<E>) -> Result<Var> {
        let src = self.value(x);
        let value = Tensor::new(src.shape().to_vec(), src.data().iter().map(|v| f(*v)).collect())?;
        self.push(name, value, &[x], op)
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.map("relu", x, |v| if v > E::zero() { v } else { E::zero() }, Op::Relu(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.map("sigmoid", x, sigmoid, Op::Sigmoid(x))
    }

    pub fn silu(&mut self, x: Var) -> Result<Var> {
        self.map("silu", x, |v| v * sigmoid(v), Op::Silu(x))
    }

    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let (n, c, h, w) = self.value(x).dims4("global_avg_pool")?;
        let plane = h * w;
        let denom = E::from_f64(plane as f64);
        let data = self.value(x).data();
        let out = (0..n * c)
            .map(|i| data[i * plane..(i + 1) * plane].iter().fold(E::zero(), |a, v| a + *v) / denom)
            .collect();
        let value = Tensor::new(vec![n, c, 1, 1], out)?;
        self.push("global_avg_pool", value, &[x], Op::GlobalAvgPool(x))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(x).clone().reshape(shape)?;
        self.push("reshape", value, &[x], Op::Reshape(x))
    }

    /// `y = x · wᵀ + b` with `x: [N, F]`, `w: [G, F]`, `b: [G]`.
    pub fn dense(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let (n, f) = self.value(x).dims2("dense")?;
        let (g, wf) = self.value(w).dims2("dense")?;
        if wf != f {
            return Err(Error::shape("dense", format!("input width {f} vs weight {:?}", [g, wf])));
        }
        let mut out = vec![E::zero(); n * g];
        if let Some(b) = b {
            let bias = self.value(b).data();
            if bias.len() != g {
                return Err(Error::shape("dense", format!("bias length {} vs {g}", bias.len())));
            }
            for row in out.chunks_mut(g) {
                row.copy_from_slice(bias);
            }
        }
        E::gemm(n, f, g, self.value(x).data(), false, self.value(w).data(), true, &mut out, b.is_some());
        let value = Tensor::new(vec![n, g], out)?;
        let inputs: Vec<Var> = [Some(x), Some(w), b].into_iter().flatten().collect();
        self.push("dense", value, &inputs, Op::Dense { x, w, b })
    }

    fn binary(&mut self, name: &'static str, a: Var, b: Var, f: impl Fn(E, E) -> E) -> Result<(Tensor<E>, bool)> {
        let av = self.value(a);
        let bv = self.value(b);
        let broadcast = broadcast_kind(av.shape(), bv.shape(), name)?;
        let out = if broadcast {
            let (_, _, h, w) = av.dims4(name)?;
            let plane = h * w;
            av.data()
                .iter()
                .enumerate()
                .map(|(i, x)| f(*x, bv.data()[i / plane]))
                .collect()
        } else {
            av.data().iter().zip(bv.data()).map(|(x, y)| f(*x, *y)).collect()
        };
        Ok((Tensor::new(av.shape().to_vec(), out)?, broadcast))
    }

    /// Elementwise sum; `b` may be `[N, C, 1, 1]` against `a: [N, C, H, W]`.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (value, broadcast) = self.binary("add", a, b, |x, y| x + y)?;
        self.push("add", value, &[a, b], Op::Add { a, b, broadcast })
    }

    /// Elementwise product with the same broadcast rule as [`Tape::add`].
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (value, broadcast) = self.binary("mul", a, b, |x, y| x * y)?;
        self.push("mul", value, &[a, b], Op::Mul { a, b, broadcast })
    }

    pub fn scale(&mut self, x: Var, factor: E) -> Result<Var> {
        self.map("scale", x, |v| v * factor, Op::Scale(x, factor))
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).data().iter().fold(E::zero(), |a, v| a + *v);
        self.push("sum", Tensor::scalar(s), &[x], Op::Sum(x))
    }

    /// Mean softmax cross-entropy over the batch. Returns the scalar loss
    /// and the row-wise probabilities.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<(Var, Tensor<E>)> {
        let (n, k) = self.value(logits).dims2("softmax_cross_entropy")?;
        if labels.len() != n {
            return Err(Error::shape(
                "softmax_cross_entropy",
                format!("{n} rows vs {} labels", labels.len()),
            ));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
            return Err(Error::IndexOutOfRange {
                level: "label",
                index: bad,
                size: k,
            });
        }
        let data = self.value(logits).data();
        let mut probs = vec![E::zero(); n * k];
        let mut loss = E::zero();
        for (r, &label) in labels.iter().enumerate() {
            let row = &data[r * k..(r + 1) * k];
            let max = row.iter().fold(E::neg_infinity(), |a, v| a.max(*v));
            let denom = row.iter().fold(E::zero(), |a, v| a + (*v - max).exp());
            for (p, v) in probs[r * k..(r + 1) * k].iter_mut().zip(row) {
                *p = (*v - max).exp() / denom;
            }
            loss = loss + denom.ln() - (row[label] - max);
        }
        loss = loss / E::from_f64(n as f64);
        let probs_t = Tensor::new(vec![n, k], probs.clone())?;
        let var = self.push(
            "softmax_cross_entropy",
            Tensor::scalar(loss),
            &[logits],
            Op::SoftmaxCe {
                logits,
                labels: labels.to_vec(),
                probs,
            },
        )?;
        Ok((var, probs_t))
    }

    /// Convolutions and dense layers in execution order.
    pub fn linear_ops(&self) -> Vec<LinearOp> {
        let shape = |v: &Var| self.nodes[v.0].value.shape().to_vec();
        self.nodes
            .iter()
            .filter_map(|node| match &node.op {
                Op::Conv2d { x, w, geom } => Some(LinearOp::Conv2d {
                    input: shape(x),
                    weight: shape(w),
                    stride: geom.stride,
                    pad: geom.pad,
                }),
                Op::Depthwise { x, w, geom } => Some(LinearOp::Depthwise {
                    input: shape(x),
                    weight: shape(w),
                    stride: geom.stride,
                    pad: geom.pad,
                }),
                Op::Dense { x, w, .. } => Some(LinearOp::Dense {
                    input: shape(x),
                    weight: shape(w),
                }),
                _ => None,
            })
            .collect()
    }

    /// Activation pattern (`input > 0`) of every ReLU on the tape, in order.
    pub fn relu_pattern(&self) -> Vec<bool> {
        self.nodes
            .iter()
            .filter_map(|node| match node.op {
                Op::Relu(x) => Some(x),
                _ => None,
            })
            .flat_map(|x| self.nodes[x.0].value.data().iter().map(|v| *v > E::zero()))
            .collect()
    }

    /// Reverse-mode accumulation from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<E>> {
        let root = &self.nodes[loss.0];
        if !root.value.is_scalar() {
            return Err(Error::Backward("loss is not a scalar"));
        }
        if !root.requires_grad {
            return Err(Error::Backward("loss is detached from every tracked tensor"));
        }
        let mut grads: Vec<Option<Vec<E>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![E::one()]);

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(dy) = grads[idx].take() else { continue };
            self.propagate(node, &dy, &mut grads);
            grads[idx] = Some(dy);
        }

        let grads = grads
            .into_iter()
            .zip(&self.nodes)
            .map(|(g, node)| {
                g.filter(|_| node.requires_grad)
                    .map(|g| Tensor::new(node.value.shape().to_vec(), g).expect("gradient shape"))
            })
            .collect();
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Vec<E>>], v: Var, g: Vec<E>) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(acc) => acc.iter_mut().zip(g).for_each(|(a, b)| *a = *a + b),
            slot @ None => *slot = Some(g),
        }
    }

    fn accumulate_with(&self, grads: &mut [Option<Vec<E>>], v: Var, f: impl FnOnce() -> Vec<E>) {
        if self.nodes[v.0].requires_grad {
            let g = f();
            self.accumulate(grads, v, g);
        }
    }

    fn propagate(&self, node: &Node<E>, dy: &[E], grads: &mut [Option<Vec<E>>]) {
        match &node.op {
            Op::Leaf => {}
            Op::Conv2d { x, w, geom } => {
                let (dx, dw) = kernels::conv2d_backward(
                    geom,
                    self.value(*x).data(),
                    self.value(*w).data(),
                    dy,
                    self.requires_grad(*x),
                    self.requires_grad(*w),
                );
                if let Some(dx) = dx {
                    self.accumulate(grads, *x, dx);
                }
                if let Some(dw) = dw {
                    self.accumulate(grads, *w, dw);
                }
            }
            Op::Depthwise { x, w, geom } => {
                let (dx, dw) = kernels::depthwise_backward(geom, self.value(*x).data(), self.value(*w).data(), dy);
                self.accumulate(grads, *x, dx);
                self.accumulate(grads, *w, dw);
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                mode,
            } => {
                let (n, c, h, w) = node.value.dims4("batchnorm2d").expect("4-D");
                let plane = h * w;
                let g = self.value(*gamma).data();
                let mut dgamma = vec![E::zero(); c];
                let mut dbeta = vec![E::zero(); c];
                for b in 0..n {
                    for ch in 0..c {
                        let base = (b * c + ch) * plane;
                        for i in base..base + plane {
                            dgamma[ch] = dgamma[ch] + dy[i] * xhat[i];
                            dbeta[ch] = dbeta[ch] + dy[i];
                        }
                    }
                }
                self.accumulate_with(grads, *x, || {
                    let mut dx = vec![E::zero(); dy.len()];
                    match mode {
                        BnMode::Eval => {
                            for b in 0..n {
                                for ch in 0..c {
                                    let base = (b * c + ch) * plane;
                                    for i in base..base + plane {
                                        dx[i] = dy[i] * g[ch] * inv_std[ch];
                                    }
                                }
                            }
                        }
                        BnMode::Train => {
                            let m = E::from_f64((n * plane) as f64);
                            for ch in 0..c {
                                // dxhat = dy * gamma; its sums reuse dbeta/dgamma.
                                let sum_dxhat = dbeta[ch] * g[ch];
                                let sum_dxhat_xhat = dgamma[ch] * g[ch];
                                let k = inv_std[ch] / m;
                                for b in 0..n {
                                    let base = (b * c + ch) * plane;
                                    for i in base..base + plane {
                                        let dxhat = dy[i] * g[ch];
                                        dx[i] = k * (m * dxhat - sum_dxhat - xhat[i] * sum_dxhat_xhat);
                                    }
                                }
                            }
                        }
                    }
                    dx
                });
                self.accumulate(grads, *gamma, dgamma);
                self.accumulate(grads, *beta, dbeta);
            }
            Op::Relu(x) => {
                let xv = self.value(*x).data();
                self.accumulate_with(grads, *x, || {
                    dy.iter()
                        .zip(xv)
                        .map(|(d, v)| if *v > E::zero() { *d } else { E::zero() })
                        .collect()
                });
            }
            Op::Sigmoid(x) => {
                let yv = node.value.data();
                self.accumulate_with(grads, *x, || {
                    dy.iter().zip(yv).map(|(d, y)| *d * *y * (E::one() - *y)).collect()
                });
            }
            Op::Silu(x) => {
                let xv = self.value(*x).data();
                self.accumulate_with(grads, *x, || {
                    dy.iter()
                        .zip(xv)
                        .map(|(d, v)| {
                            let s = sigmoid(*v);
                            *d * s * (E::one() + *v * (E::one() - s))
                        })
                        .collect()
                });
            }
            Op::GlobalAvgPool(x) => {
                let (_, _, h, w) = self.value(*x).dims4("global_avg_pool").expect("4-D");
                let plane = h * w;
                let inv = E::one() / E::from_f64(plane as f64);
                self.accumulate_with(grads, *x, || {
                    dy.iter().flat_map(|d| std::iter::repeat_n(*d * inv, plane)).collect()
                });
            }
            Op::Reshape(x) => self.accumulate(grads, *x, dy.to_vec()),
            Op::Dense { x, w, b } => {
                let (n, f) = self.value(*x).dims2("dense").expect("2-D");
                let (g, _) = self.value(*w).dims2("dense").expect("2-D");
                let wv = self.value(*w).data();
                let xv = self.value(*x).data();
                self.accumulate_with(grads, *x, || {
                    let mut dx = vec![E::zero(); n * f];
                    E::gemm(n, g, f, dy, false, wv, false, &mut dx, false);
                    dx
                });
                self.accumulate_with(grads, *w, || {
                    let mut dw = vec![E::zero(); g * f];
                    E::gemm(g, n, f, dy, true, xv, false, &mut dw, false);
                    dw
                });
                if let Some(b) = b {
                    self.accumulate_with(grads, *b, || {
                        let mut db = vec![E::zero(); g];
                        for row in dy.chunks(g) {
                            db.iter_mut().zip(row).for_each(|(a, d)| *a = *a + *d);
                        }
                        db
                    });
                }
            }
            Op::Add { a, b, broadcast } => {
                self.accumulate(grads, *a, dy.to_vec());
                self.accumulate_with(grads, *b, || {
                    if *broadcast {
                        reduce_planes(dy, self.value(*b).numel())
                    } else {
                        dy.to_vec()
                    }
                });
            }
            Op::Mul { a, b, broadcast } => {
                let av = self.value(*a).data();
                let bv = self.value(*b).data();
                if *broadcast {
                    let plane = av.len() / bv.len();
                    self.accumulate_with(grads, *a, || {
                        dy.iter().enumerate().map(|(i, d)| *d * bv[i / plane]).collect()
                    });
                    self.accumulate_with(grads, *b, || {
                        let prod: Vec<E> = dy.iter().zip(av).map(|(d, x)| *d * *x).collect();
                        reduce_planes(&prod, bv.len())
                    });
                } else {
                    self.accumulate_with(grads, *a, || dy.iter().zip(bv).map(|(d, y)| *d * *y).collect());
                    self.accumulate_with(grads, *b, || dy.iter().zip(av).map(|(d, x)| *d * *x).collect());
                }
            }
            Op::Scale(x, factor) => {
                self.accumulate_with(grads, *x, || dy.iter().map(|d| *d * *factor).collect());
            }
            Op::Sum(x) => {
                let n = self.value(*x).numel();
                self.accumulate(grads, *x, vec![dy[0]; n]);
            }
            Op::SoftmaxCe { logits, labels, probs } => {
                let k = probs.len() / labels.len();
                let scale = dy[0] / E::from_f64(labels.len() as f64);
                self.accumulate_with(grads, *logits, || {
                    let mut g: Vec<E> = probs.iter().map(|p| *p * scale).collect();
                    for (r, &l) in labels.iter().enumerate() {
                        g[r * k + l] = g[r * k + l] - scale;
                    }
                    g
                });
            }
        }
    }
}

fn sigmoid<E: Element>(v: E) -> E {
    if v >= E::zero() {
        E::one() / (E::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (E::one() + e)
    }
}

/// Sums each contiguous plane of `data` into `groups` values.
fn reduce_planes<E: Element>(data: &[E], groups: usize) -> Vec<E> {
    let plane = data.len() / groups;
    data.chunks(plane)
        .map(|c| c.iter().fold(E::zero(), |a, v| a + *v))
        .collect()
}
