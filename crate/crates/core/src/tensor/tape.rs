//! The recording tape and every differentiable op.

use super::params::{ParamId, ParamStore};
use super::{gemm, lit, Scalar, Tensor, TensorError};

pub const BN_EPS: f64 = 1e-5;
/// Weight kept on the previous running statistic at each update.
pub const BN_MOMENTUM: f64 = 0.9;
const CE_EPS: f64 = 1e-12;

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BnMode {
    Train,
    Eval,
}

/// Per-channel running mean/variance used by batch norm in eval mode.
#[derive(Debug, Clone, PartialEq)]
pub struct RunningStats<T> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
}

impl<T: Scalar> RunningStats<T> {
    pub fn new(channels: usize) -> Self {
        Self {
            mean: vec![T::zero(); channels],
            var: vec![T::one(); channels],
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct ConvGeom {
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    o: usize,
    k: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
}

impl ConvGeom {
    fn col_rows(&self) -> usize {
        self.c * self.k * self.k
    }

    fn col_cols(&self) -> usize {
        self.ho * self.wo
    }
}

enum Op<T> {
    Leaf,
    Param(ParamId),
    Conv2d {
        input: Var,
        kernel: Var,
        bias: Option<Var>,
        cols: Vec<T>,
        geom: ConvGeom,
    },
    BatchNorm {
        input: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<T>,
        inv_std: Vec<T>,
        mode: BnMode,
    },
    AvgPool2 {
        input: Var,
    },
    Upsample2 {
        input: Var,
    },
    Matmul {
        input: Var,
        weights: Var,
    },
    Relu {
        input: Var,
    },
    Softmax {
        input: Var,
        axis: usize,
    },
    Add(Var, Var),
    Mul(Var, Var),
    Scale {
        input: Var,
        factor: T,
    },
    Concat {
        inputs: Vec<Var>,
        axis: usize,
    },
    Reshape {
        input: Var,
    },
    Slice0 {
        input: Var,
        start: usize,
    },
    Sum {
        input: Var,
    },
    WeightedCe {
        probs: Var,
        target: Vec<T>,
        class_weights: Vec<T>,
        scale: T,
    },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
}

/// Records a forward computation so it can be differentiated.
///
/// Nodes are appended in execution order, so the node list is already a
/// topological order; [`Tape::backward`] walks it in exact reverse.
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn shape_err(msg: impl Into<String>) -> TensorError {
    TensorError::Shape(msg.into())
}

/// (outer, len, inner) when viewing `shape` around `axis`.
fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

fn dims4(shape: &[usize], what: &str) -> Result<(usize, usize, usize, usize), TensorError> {
    match *shape {
        [n, c, h, w] => Ok((n, c, h, w)),
        _ => Err(shape_err(format!("{what} expects [N, C, H, W], got {shape:?}"))),
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

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    /// A constant input (no gradient is propagated past it).
    pub fn leaf(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf)
    }

    /// Records the current value of a parameter.
    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Var {
        self.push(store.value(id).clone(), Op::Param(id))
    }

    /// 2-D cross-correlation with zero padding `kernel/2` on each side; at
    /// stride 1 spatial dims are preserved. Kernel is `[O, C, K, K]`, K odd.
    pub fn conv2d(&mut self, input: Var, kernel: Var, bias: Option<Var>, stride: usize) -> Result<Var, TensorError> {
        let (n, c, h, w) = dims4(self.shape(input), "conv2d input")?;
        let (o, kc, k, k2) = dims4(self.shape(kernel), "conv2d kernel")?;
        if kc != c || k != k2 || k % 2 == 0 || stride == 0 {
            return Err(shape_err(format!(
                "conv2d: input {:?} incompatible with kernel {:?} (stride {stride})",
                self.shape(input),
                self.shape(kernel)
            )));
        }
        if let Some(b) = bias {
            if self.shape(b) != [o] {
                return Err(shape_err(format!("conv2d bias must be [{o}], got {:?}", self.shape(b))));
            }
        }
        let pad = k / 2;
        let geom = ConvGeom {
            n,
            c,
            h,
            w,
            o,
            k,
            stride,
            pad,
            ho: (h + 2 * pad - k) / stride + 1,
            wo: (w + 2 * pad - k) / stride + 1,
        };
        let (rows, cols_n) = (geom.col_rows(), geom.col_cols());
        let x = self.value(input).data();
        let mut cols = vec![T::zero(); n * rows * cols_n];
        for s in 0..n {
            im2col(&geom, &x[s * c * h * w..(s + 1) * c * h * w], &mut cols[s * rows * cols_n..(s + 1) * rows * cols_n]);
        }
        let weights = self.value(kernel).data();
        let mut out = vec![T::zero(); n * o * cols_n];
        for s in 0..n {
            gemm(
                false,
                false,
                o,
                cols_n,
                rows,
                weights,
                &cols[s * rows * cols_n..(s + 1) * rows * cols_n],
                T::zero(),
                &mut out[s * o * cols_n..(s + 1) * o * cols_n],
            );
        }
        if let Some(b) = bias {
            let bias = self.value(b).data();
            for plane in out.chunks_exact_mut(cols_n).enumerate() {
                let bv = bias[plane.0 % o];
                plane.1.iter_mut().for_each(|v| *v = *v + bv);
            }
        }
        let value = Tensor::new(vec![n, o, geom.ho, geom.wo], out)?;
        Ok(self.push(
            value,
            Op::Conv2d {
                input,
                kernel,
                bias,
                cols,
                geom,
            },
        ))
    }

    /// Batch normalization over `[N, C, H, W]` with per-channel statistics
    /// over batch and spatial dims. Train mode normalizes with batch
    /// statistics and updates `stats`; eval mode uses `stats`.
    pub fn batch_norm(
        &mut self,
        input: Var,
        gamma: Var,
        beta: Var,
        stats: &mut RunningStats<T>,
        mode: BnMode,
    ) -> Result<Var, TensorError> {
        let (n, c, h, w) = dims4(self.shape(input), "batch_norm")?;
        if self.shape(gamma) != [c] || self.shape(beta) != [c] || stats.mean.len() != c {
            return Err(shape_err(format!("batch_norm: parameters must be [{c}]")));
        }
        let hw = h * w;
        let m = n * hw;
        let x = self.value(input).data();
        let eps: T = lit(BN_EPS);
        let mut mean = vec![T::zero(); c];
        let mut var = vec![T::zero(); c];
        match mode {
            BnMode::Train => {
                if m < 2 {
                    return Err(shape_err("batch_norm in train mode needs at least 2 values per channel"));
                }
                let mf: T = lit(m as f64);
                for ch in 0..c {
                    let mut acc = T::zero();
                    for s in 0..n {
                        acc = acc + x[(s * c + ch) * hw..(s * c + ch + 1) * hw].iter().copied().sum::<T>();
                    }
                    mean[ch] = acc / mf;
                    let mut acc = T::zero();
                    for s in 0..n {
                        for &v in &x[(s * c + ch) * hw..(s * c + ch + 1) * hw] {
                            let d = v - mean[ch];
                            acc = acc + d * d;
                        }
                    }
                    var[ch] = acc / mf;
                }
                let mom: T = lit(BN_MOMENTUM);
                let unbias: T = lit(m as f64 / (m as f64 - 1.0));
                for ch in 0..c {
                    stats.mean[ch] = mom * stats.mean[ch] + (T::one() - mom) * mean[ch];
                    stats.var[ch] = mom * stats.var[ch] + (T::one() - mom) * var[ch] * unbias;
                }
            }
            BnMode::Eval => {
                mean.copy_from_slice(&stats.mean);
                var.copy_from_slice(&stats.var);
            }
        }
        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        let g = self.value(gamma).data();
        let b = self.value(beta).data();
        let mut xhat = vec![T::zero(); x.len()];
        let mut out = vec![T::zero(); x.len()];
        for s in 0..n {
            for ch in 0..c {
                let base = (s * c + ch) * hw;
                for i in base..base + hw {
                    let xh = (x[i] - mean[ch]) * inv_std[ch];
                    xhat[i] = xh;
                    out[i] = g[ch] * xh + b[ch];
                }
            }
        }
        let value = Tensor::new(vec![n, c, h, w], out)?;
        Ok(self.push(
            value,
            Op::BatchNorm {
                input,
                gamma,
                beta,
                xhat,
                inv_std,
                mode,
            },
        ))
    }

    /// Non-overlapping 2×2 mean pooling over the last two dims.
    pub fn avg_pool2d(&mut self, input: Var) -> Result<Var, TensorError> {
        let shape = self.shape(input).to_vec();
        if shape.len() < 2 {
            return Err(shape_err("avg_pool2d needs at least 2 dims"));
        }
        let (h, w) = (shape[shape.len() - 2], shape[shape.len() - 1]);
        if h % 2 != 0 || w % 2 != 0 {
            return Err(shape_err(format!("avg_pool2d: spatial dims {h}x{w} not divisible by 2")));
        }
        let planes = shape[..shape.len() - 2].iter().product::<usize>();
        let (ho, wo) = (h / 2, w / 2);
        let x = self.value(input).data();
        let quarter: T = lit(0.25);
        let mut out = vec![T::zero(); planes * ho * wo];
        for p in 0..planes {
            let src = &x[p * h * w..];
            let dst = &mut out[p * ho * wo..];
            for r in 0..ho {
                for c in 0..wo {
                    let i = 2 * r * w + 2 * c;
                    dst[r * wo + c] = (src[i] + src[i + 1] + src[i + w] + src[i + w + 1]) * quarter;
                }
            }
        }
        let mut oshape = shape;
        let len = oshape.len();
        oshape[len - 2] = ho;
        oshape[len - 1] = wo;
        let value = Tensor::new(oshape, out)?;
        Ok(self.push(value, Op::AvgPool2 { input }))
    }

    /// Nearest-neighbour 2× upsampling over the last two dims.
    pub fn upsample2d(&mut self, input: Var) -> Result<Var, TensorError> {
        let shape = self.shape(input).to_vec();
        if shape.len() < 2 {
            return Err(shape_err("upsample2d needs at least 2 dims"));
        }
        let (h, w) = (shape[shape.len() - 2], shape[shape.len() - 1]);
        let planes = shape[..shape.len() - 2].iter().product::<usize>();
        let (ho, wo) = (2 * h, 2 * w);
        let x = self.value(input).data();
        let mut out = vec![T::zero(); planes * ho * wo];
        for p in 0..planes {
            for r in 0..ho {
                for c in 0..wo {
                    out[p * ho * wo + r * wo + c] = x[p * h * w + (r / 2) * w + c / 2];
                }
            }
        }
        let mut oshape = shape;
        let len = oshape.len();
        oshape[len - 2] = ho;
        oshape[len - 1] = wo;
        let value = Tensor::new(oshape, out)?;
        Ok(self.push(value, Op::Upsample2 { input }))
    }

    /// `[M, K] × [K, N] → [M, N]`, no bias.
    pub fn dense_unbiased(&mut self, input: Var, weights: Var) -> Result<Var, TensorError> {
        let (m, k) = match *self.shape(input) {
            [m, k] => (m, k),
            ref s => return Err(shape_err(format!("dense input must be 2-D, got {s:?}"))),
        };
        let n = match *self.shape(weights) {
            [k2, n] if k2 == k => n,
            ref s => return Err(shape_err(format!("dense weights {s:?} incompatible with input width {k}"))),
        };
        let mut out = vec![T::zero(); m * n];
        gemm(false, false, m, n, k, self.value(input).data(), self.value(weights).data(), T::zero(), &mut out);
        let value = Tensor::new(vec![m, n], out)?;
        Ok(self.push(value, Op::Matmul { input, weights }))
    }

    /// NaN passes through so that a blown-up forward pass stays visible.
    pub fn relu(&mut self, input: Var) -> Var {
        let x = self.value(input);
        let data = x.data().iter().map(|&v| if v > T::zero() || v.is_nan() { v } else { T::zero() }).collect();
        let value = Tensor::new(x.shape().to_vec(), data).expect("same shape");
        self.push(value, Op::Relu { input })
    }

    /// Softmax along `axis`.
    pub fn softmax(&mut self, input: Var, axis: usize) -> Result<Var, TensorError> {
        let shape = self.shape(input).to_vec();
        if axis >= shape.len() {
            return Err(shape_err(format!("softmax axis {axis} out of range for {shape:?}")));
        }
        let (outer, len, inner) = split_axis(&shape, axis);
        let x = self.value(input).data();
        let mut out = vec![T::zero(); x.len()];
        for o in 0..outer {
            for i in 0..inner {
                let at = |j: usize| (o * len + j) * inner + i;
                let mut mx = T::neg_infinity();
                for j in 0..len {
                    mx = mx.max(x[at(j)]);
                }
                let mut total = T::zero();
                for j in 0..len {
                    let e = (x[at(j)] - mx).exp();
                    out[at(j)] = e;
                    total = total + e;
                }
                for j in 0..len {
                    out[at(j)] = out[at(j)] / total;
                }
            }
        }
        let value = Tensor::new(shape, out)?;
        Ok(self.push(value, Op::Softmax { input, axis }))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        if self.shape(a) != self.shape(b) {
            return Err(shape_err(format!("add: {:?} vs {:?}", self.shape(a), self.shape(b))));
        }
        let data = self.value(a).data().iter().zip(self.value(b).data()).map(|(&x, &y)| x + y).collect();
        let value = Tensor::new(self.shape(a).to_vec(), data)?;
        Ok(self.push(value, Op::Add(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        if self.shape(a) != self.shape(b) {
            return Err(shape_err(format!("mul: {:?} vs {:?}", self.shape(a), self.shape(b))));
        }
        let data = self.value(a).data().iter().zip(self.value(b).data()).map(|(&x, &y)| x * y).collect();
        let value = Tensor::new(self.shape(a).to_vec(), data)?;
        Ok(self.push(value, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, input: Var, factor: T) -> Var {
        let x = self.value(input);
        let data = x.data().iter().map(|&v| v * factor).collect();
        let value = Tensor::new(x.shape().to_vec(), data).expect("same shape");
        self.push(value, Op::Scale { input, factor })
    }

    /// Concatenates along `axis`; all other dims must agree.
    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var, TensorError> {
        let first = inputs.first().ok_or_else(|| shape_err("concat of nothing"))?;
        let base = self.shape(*first).to_vec();
        if axis >= base.len() {
            return Err(shape_err(format!("concat axis {axis} out of range for {base:?}")));
        }
        let mut total = 0;
        for v in inputs {
            let s = self.shape(*v);
            let compatible = s.len() == base.len() && s.iter().zip(&base).enumerate().all(|(i, (a, b))| i == axis || a == b);
            if !compatible {
                return Err(shape_err(format!("concat: {s:?} incompatible with {base:?} on axis {axis}")));
            }
            total += s[axis];
        }
        let (outer, _, inner) = split_axis(&base, axis);
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for v in inputs {
                let len = self.shape(*v)[axis];
                let chunk = len * inner;
                out.extend_from_slice(&self.value(*v).data()[o * chunk..(o + 1) * chunk]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        let value = Tensor::new(shape, out)?;
        Ok(self.push(
            value,
            Op::Concat {
                inputs: inputs.to_vec(),
                axis,
            },
        ))
    }

    pub fn reshape(&mut self, input: Var, shape: Vec<usize>) -> Result<Var, TensorError> {
        let value = self.value(input).clone().reshaped(shape)?;
        Ok(self.push(value, Op::Reshape { input }))
    }

    /// Rows `start..start + len` along axis 0.
    pub fn slice0(&mut self, input: Var, start: usize, len: usize) -> Result<Var, TensorError> {
        let shape = self.shape(input).to_vec();
        if shape.is_empty() || start + len > shape[0] {
            return Err(shape_err(format!("slice {start}..{} out of range for {shape:?}", start + len)));
        }
        let row: usize = shape[1..].iter().product();
        let data = self.value(input).data()[start * row..(start + len) * row].to_vec();
        let mut oshape = shape;
        oshape[0] = len;
        let value = Tensor::new(oshape, data)?;
        Ok(self.push(value, Op::Slice0 { input, start }))
    }

    pub fn sum(&mut self, input: Var) -> Var {
        let total = self.value(input).data().iter().copied().sum::<T>();
        self.push(Tensor::scalar(total), Op::Sum { input })
    }

    /// `-scale · Σ k_c · p · ln(q + 1e-12)` over all elements.
    ///
    /// `probs` and `target` are `[N, G·C, ...]` where the channel axis
    /// interleaves `G` groups (horizons) of `C = class_weights.len()`
    /// classes; element class is `channel % C`.
    pub fn weighted_cross_entropy(
        &mut self,
        probs: Var,
        target: &[T],
        class_weights: &[T],
        scale: T,
    ) -> Result<Var, TensorError> {
        let shape = self.shape(probs).to_vec();
        let nc = class_weights.len();
        if shape.len() < 2 || nc == 0 || !shape[1].is_multiple_of(nc) || target.len() != self.value(probs).numel() {
            return Err(shape_err(format!(
                "cross entropy: probs {shape:?}, {} targets, {nc} classes",
                target.len()
            )));
        }
        let inner: usize = shape[2..].iter().product();
        let channels = shape[1];
        let q = self.value(probs).data();
        let eps: T = lit(CE_EPS);
        let mut total = T::zero();
        for (i, (&p, &qv)) in target.iter().zip(q).enumerate() {
            if p != T::zero() {
                let k = class_weights[(i / inner) % channels % nc];
                total = total + k * p * (qv + eps).ln();
            }
        }
        let value = Tensor::scalar(-scale * total);
        Ok(self.push(
            value,
            Op::WeightedCe {
                probs,
                target: target.to_vec(),
                class_weights: class_weights.to_vec(),
                scale,
            },
        ))
    }

    /// Reverse pass from a scalar `loss`. The tape is left intact, so the
    /// call can be repeated.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>, TensorError> {
        let node = self.nodes.get(loss.0).ok_or(TensorError::BackwardBeforeForward(loss))?;
        if node.value.numel() != 1 {
            return Err(TensorError::NotScalar(node.value.shape().to_vec()));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            self.backward_node(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }
        let mut params = Vec::new();
        for (idx, node) in self.nodes.iter().enumerate() {
            if let (Op::Param(id), Some(g)) = (&node.op, &grads[idx]) {
                params.push((*id, g.clone()));
            }
        }
        Ok(Gradients { nodes: grads, params })
    }

    fn backward_node(&self, idx: usize, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let node = &self.nodes[idx];
        match &node.op {
            Op::Leaf | Op::Param(_) => {}
            Op::Conv2d {
                input,
                kernel,
                bias,
                cols,
                geom,
            } => {
                let (rows, cn) = (geom.col_rows(), geom.col_cols());
                let weights = self.value(*kernel).data();
                let mut dw = vec![T::zero(); geom.o * rows];
                let mut dx = vec![T::zero(); geom.n * geom.c * geom.h * geom.w];
                let mut dcols = vec![T::zero(); rows * cn];
                let plane = geom.c * geom.h * geom.w;
                for s in 0..geom.n {
                    let gs = &g[s * geom.o * cn..(s + 1) * geom.o * cn];
                    gemm(false, true, geom.o, rows, cn, gs, &cols[s * rows * cn..(s + 1) * rows * cn], T::one(), &mut dw);
                    gemm(true, false, rows, cn, geom.o, weights, gs, T::zero(), &mut dcols);
                    col2im(geom, &dcols, &mut dx[s * plane..(s + 1) * plane]);
                }
                accumulate(grads, *kernel, &dw);
                accumulate(grads, *input, &dx);
                if let Some(b) = bias {
                    let mut db = vec![T::zero(); geom.o];
                    for (i, chunk) in g.chunks_exact(cn).enumerate() {
                        db[i % geom.o] = db[i % geom.o] + chunk.iter().copied().sum::<T>();
                    }
                    accumulate(grads, *b, &db);
                }
            }
            Op::BatchNorm {
                input,
                gamma,
                beta,
                xhat,
                inv_std,
                mode,
            } => {
                let (n, c, h, w) = dims4(node.value.shape(), "batch_norm").expect("recorded shape");
                let hw = h * w;
                let gam = self.value(*gamma).data();
                let mut dgamma = vec![T::zero(); c];
                let mut dbeta = vec![T::zero(); c];
                for s in 0..n {
                    for ch in 0..c {
                        let base = (s * c + ch) * hw;
                        for i in base..base + hw {
                            dgamma[ch] = dgamma[ch] + g[i] * xhat[i];
                            dbeta[ch] = dbeta[ch] + g[i];
                        }
                    }
                }
                let mut dx = vec![T::zero(); g.len()];
                match mode {
                    BnMode::Train => {
                        // dx = γ·σ⁻¹/M · (M·dy − Σdy − x̂·Σ(dy·x̂))
                        let m: T = lit((n * hw) as f64);
                        for ch in 0..c {
                            let coef = gam[ch] * inv_std[ch] / m;
                            for s in 0..n {
                                let base = (s * c + ch) * hw;
                                for i in base..base + hw {
                                    dx[i] = coef * (m * g[i] - dbeta[ch] - xhat[i] * dgamma[ch]);
                                }
                            }
                        }
                    }
                    BnMode::Eval => {
                        for s in 0..n {
                            for ch in 0..c {
                                let base = (s * c + ch) * hw;
                                for i in base..base + hw {
                                    dx[i] = g[i] * gam[ch] * inv_std[ch];
                                }
                            }
                        }
                    }
                }
                accumulate(grads, *input, &dx);
                accumulate(grads, *gamma, &dgamma);
                accumulate(grads, *beta, &dbeta);
            }
            Op::AvgPool2 { input } => {
                let shape = self.shape(*input);
                let (h, w) = (shape[shape.len() - 2], shape[shape.len() - 1]);
                let (ho, wo) = (h / 2, w / 2);
                let planes = g.len() / (ho * wo);
                let quarter: T = lit(0.25);
                let mut dx = vec![T::zero(); planes * h * w];
                for p in 0..planes {
                    for r in 0..ho {
                        for c in 0..wo {
                            let v = g[p * ho * wo + r * wo + c] * quarter;
                            let i = p * h * w + 2 * r * w + 2 * c;
                            dx[i] = v;
                            dx[i + 1] = v;
                            dx[i + w] = v;
                            dx[i + w + 1] = v;
                        }
                    }
                }
                accumulate(grads, *input, &dx);
            }
            Op::Upsample2 { input } => {
                let shape = self.shape(*input);
                let (h, w) = (shape[shape.len() - 2], shape[shape.len() - 1]);
                let (ho, wo) = (2 * h, 2 * w);
                let planes = g.len() / (ho * wo);
                let mut dx = vec![T::zero(); planes * h * w];
                for p in 0..planes {
                    for r in 0..ho {
                        for c in 0..wo {
                            let i = p * h * w + (r / 2) * w + c / 2;
                            dx[i] = dx[i] + g[p * ho * wo + r * wo + c];
                        }
                    }
                }
                accumulate(grads, *input, &dx);
            }
            Op::Matmul { input, weights } => {
                let (m, k) = (self.shape(*input)[0], self.shape(*input)[1]);
                let n = self.shape(*weights)[1];
                let mut dx = vec![T::zero(); m * k];
                gemm(false, true, m, k, n, g, self.value(*weights).data(), T::zero(), &mut dx);
                let mut dw = vec![T::zero(); k * n];
                gemm(true, false, k, n, m, self.value(*input).data(), g, T::zero(), &mut dw);
                accumulate(grads, *input, &dx);
                accumulate(grads, *weights, &dw);
            }
            Op::Relu { input } => {
                let x = self.value(*input).data();
                let dx: Vec<T> = g.iter().zip(x).map(|(&gv, &xv)| if xv > T::zero() { gv } else { T::zero() }).collect();
                accumulate(grads, *input, &dx);
            }
            Op::Softmax { input, axis } => {
                let (outer, len, inner) = split_axis(node.value.shape(), *axis);
                let y = node.value.data();
                let mut dx = vec![T::zero(); y.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let at = |j: usize| (o * len + j) * inner + i;
                        let mut dot = T::zero();
                        for j in 0..len {
                            dot = dot + g[at(j)] * y[at(j)];
                        }
                        for j in 0..len {
                            dx[at(j)] = y[at(j)] * (g[at(j)] - dot);
                        }
                    }
                }
                accumulate(grads, *input, &dx);
            }
            Op::Add(a, b) => {
                accumulate(grads, *a, g);
                accumulate(grads, *b, g);
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                let da: Vec<T> = g.iter().zip(bv).map(|(&x, &y)| x * y).collect();
                let db: Vec<T> = g.iter().zip(av).map(|(&x, &y)| x * y).collect();
                accumulate(grads, *a, &da);
                accumulate(grads, *b, &db);
            }
            Op::Scale { input, factor } => {
                let dx: Vec<T> = g.iter().map(|&v| v * *factor).collect();
                accumulate(grads, *input, &dx);
            }
            Op::Concat { inputs, axis } => {
                let (outer, total, inner) = split_axis(node.value.shape(), *axis);
                let mut offset = 0;
                for v in inputs {
                    let len = self.shape(*v)[*axis];
                    let mut dx = Vec::with_capacity(outer * len * inner);
                    for o in 0..outer {
                        let start = (o * total + offset) * inner;
                        dx.extend_from_slice(&g[start..start + len * inner]);
                    }
                    accumulate(grads, *v, &dx);
                    offset += len;
                }
            }
            Op::Reshape { input } => accumulate(grads, *input, g),
            Op::Slice0 { input, start } => {
                let shape = self.shape(*input);
                let row: usize = shape[1..].iter().product();
                let mut dx = vec![T::zero(); self.value(*input).numel()];
                dx[start * row..start * row + g.len()].copy_from_slice(g);
                accumulate(grads, *input, &dx);
            }
            Op::Sum { input } => {
                let dx = vec![g[0]; self.value(*input).numel()];
                accumulate(grads, *input, &dx);
            }
            Op::WeightedCe {
                probs,
                target,
                class_weights,
                scale,
            } => {
                let shape = self.shape(*probs);
                let inner: usize = shape[2..].iter().product();
                let channels = shape[1];
                let nc = class_weights.len();
                let q = self.value(*probs).data();
                let eps: T = lit(CE_EPS);
                let coef = -*scale * g[0];
                let dq: Vec<T> = target
                    .iter()
                    .zip(q)
                    .enumerate()
                    .map(|(i, (&p, &qv))| {
                        if p == T::zero() {
                            T::zero()
                        } else {
                            let k = class_weights[(i / inner) % channels % nc];
                            coef * k * p / (qv + eps)
                        }
                    })
                    .collect();
                accumulate(grads, *probs, &dq);
            }
        }
    }
}

fn accumulate<T: Scalar>(grads: &mut [Option<Vec<T>>], v: Var, delta: &[T]) {
    match &mut grads[v.0] {
        Some(existing) => existing.iter_mut().zip(delta).for_each(|(a, &b)| *a = *a + b),
        slot @ None => *slot = Some(delta.to_vec()),
    }
}

fn im2col<T: Scalar>(g: &ConvGeom, x: &[T], cols: &mut [T]) {
    let cn = g.col_cols();
    for c in 0..g.c {
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = (c * g.k + ky) * g.k + kx;
                let dst = &mut cols[row * cn..(row + 1) * cn];
                for oy in 0..g.ho {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    let drow = &mut dst[oy * g.wo..(oy + 1) * g.wo];
                    if iy < 0 || iy >= g.h as isize {
                        drow.iter_mut().for_each(|v| *v = T::zero());
                        continue;
                    }
                    let src = &x[(c * g.h + iy as usize) * g.w..(c * g.h + iy as usize + 1) * g.w];
                    for (ox, d) in drow.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        *d = if ix < 0 || ix >= g.w as isize { T::zero() } else { src[ix as usize] };
                    }
                }
            }
        }
    }
}

fn col2im<T: Scalar>(g: &ConvGeom, cols: &[T], dx: &mut [T]) {
    let cn = g.col_cols();
    for c in 0..g.c {
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = (c * g.k + ky) * g.k + kx;
                let src = &cols[row * cn..(row + 1) * cn];
                for oy in 0..g.ho {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let drow = &mut dx[(c * g.h + iy as usize) * g.w..(c * g.h + iy as usize + 1) * g.w];
                    for ox in 0..g.wo {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        if ix >= 0 && ix < g.w as isize {
                            drow[ix as usize] = drow[ix as usize] + src[oy * g.wo + ox];
                        }
                    }
                }
            }
        }
    }
}

/// Result of a reverse pass.
pub struct Gradients<T> {
    nodes: Vec<Option<Vec<T>>>,
    params: Vec<(ParamId, Vec<T>)>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient with respect to any recorded value (`None` if it does not
    /// influence the loss).
    pub fn wrt(&self, v: Var) -> Option<&[T]> {
        self.nodes.get(v.0).and_then(|g| g.as_deref())
    }

    /// Gradients of every parameter recorded on the tape, in recording order.
    /// A parameter recorded more than once appears once per use.
    pub fn params(&self) -> &[(ParamId, Vec<T>)] {
        &self.params
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor<f64> {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn identity_kernel_is_identity() {
        let mut tape = Tape::<f64>::new();
        let data: Vec<f64> = (0..25).map(|i| i as f64 * 0.5 - 3.0).collect();
        let x = tape.leaf(t(&[1, 1, 5, 5], &data));
        let mut k = vec![0.0; 9];
        k[4] = 1.0;
        let kv = tape.leaf(t(&[1, 1, 3, 3], &k));
        let y = tape.conv2d(x, kv, None, 1).unwrap();
        assert_eq!(tape.value(y).data(), &data[..]);
    }

    #[test]
    fn ones_kernel_counts_neighbors() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::full(&[1, 1, 5, 5], 1.0));
        let k = tape.leaf(Tensor::full(&[1, 1, 3, 3], 1.0));
        let y = tape.conv2d(x, k, None, 1).unwrap();
        let out = tape.value(y).data();
        assert_eq!(out[2 * 5 + 2], 9.0);
        assert_eq!(out[0], 4.0);
        assert_eq!(out[24], 4.0);
        assert_eq!(out[2], 6.0);
    }

    #[test]
    fn conv_rejects_mismatched_channels() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::zeros(&[1, 2, 4, 4]));
        let k = tape.leaf(Tensor::zeros(&[1, 3, 3, 3]));
        assert!(matches!(tape.conv2d(x, k, None, 1), Err(TensorError::Shape(_))));
    }

    #[test]
    fn batch_norm_train_normalizes() {
        let mut tape = Tape::<f64>::new();
        let data: Vec<f64> = (0..2 * 2 * 3 * 3).map(|i| ((i * 7) % 11) as f64 * 1.3 + (i / 18) as f64).collect();
        let x = tape.leaf(t(&[2, 2, 3, 3], &data));
        let g = tape.leaf(Tensor::full(&[2], 1.0));
        let b = tape.leaf(Tensor::zeros(&[2]));
        let mut stats = RunningStats::new(2);
        let y = tape.batch_norm(x, g, b, &mut stats, BnMode::Train).unwrap();
        let out = tape.value(y).data();
        for ch in 0..2 {
            let vals: Vec<f64> = (0..2).flat_map(|s| out[(s * 2 + ch) * 9..(s * 2 + ch + 1) * 9].to_vec()).collect();
            let mean = vals.iter().sum::<f64>() / 18.0;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 18.0;
            assert!(mean.abs() < 1e-5);
            assert!((var - 1.0).abs() < 1e-5);
        }
        // Running stats moved 10% of the way toward the batch statistics.
        assert!(stats.mean[0] > 0.0 && stats.mean[0] < 2.0);
    }

    #[test]
    fn batch_norm_on_normalized_input_is_near_identity() {
        let mut tape = Tape::<f64>::new();
        let data = [-1.0, 1.0, -1.0, 1.0, 1.0, -1.0, 1.0, -1.0];
        let x = tape.leaf(t(&[2, 1, 2, 2], &data));
        let g = tape.leaf(Tensor::full(&[1], 1.0));
        let b = tape.leaf(Tensor::zeros(&[1]));
        let mut stats = RunningStats::new(1);
        let y = tape.batch_norm(x, g, b, &mut stats, BnMode::Train).unwrap();
        for (a, b) in tape.value(y).data().iter().zip(data) {
            assert!((a - b).abs() < 1e-5);
        }
    }

    #[test]
    fn pool_and_upsample() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(t(&[1, 1, 2, 2], &[1.0, 2.0, 3.0, 4.0]));
        let p = tape.avg_pool2d(x).unwrap();
        assert_eq!(tape.value(p).data(), &[2.5]);
        let u = tape.upsample2d(p).unwrap();
        assert_eq!(tape.value(u).data(), &[2.5; 4]);
        let s = tape.sum(p);
        let g = tape.backward(s).unwrap();
        assert_eq!(g.wrt(x).unwrap(), &[0.25; 4]);

        let odd = tape.leaf(Tensor::zeros(&[1, 1, 3, 2]));
        assert!(tape.avg_pool2d(odd).is_err());

        // Block-constant input survives pool then upsample.
        let block = t(&[1, 1, 2, 4], &[5.0, 5.0, 7.0, 7.0, 5.0, 5.0, 7.0, 7.0]);
        let xb = tape.leaf(block.clone());
        let pb = tape.avg_pool2d(xb).unwrap();
        let ub = tape.upsample2d(pb).unwrap();
        assert_eq!(tape.value(ub), &block);
    }

    #[test]
    fn upsample_gradient_sums_replicas() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(t(&[1, 1, 1, 1], &[3.0]));
        let u = tape.upsample2d(x).unwrap();
        let w = tape.leaf(t(&[1, 1, 2, 2], &[1.0, 2.0, 3.0, 4.0]));
        let m = tape.mul(u, w).unwrap();
        let s = tape.sum(m);
        let g = tape.backward(s).unwrap();
        assert_eq!(g.wrt(x).unwrap(), &[10.0]);
    }

    #[test]
    fn dense_examples() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(t(&[1, 2], &[1.0, 2.0]));
        let w = tape.leaf(t(&[2, 2], &[1.0, 0.0, 0.0, 2.0]));
        let y = tape.dense_unbiased(x, w).unwrap();
        assert_eq!(tape.value(y).data(), &[1.0, 4.0]);
        let bad = tape.leaf(Tensor::zeros(&[3, 2]));
        assert!(tape.dense_unbiased(x, bad).is_err());
    }

    #[test]
    fn softmax_and_relu() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::zeros(&[1, 3]));
        let y = tape.softmax(x, 1).unwrap();
        for v in tape.value(y).data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
        let x = tape.leaf(t(&[4], &[-1.0, 2.0, 0.0, 3.0]));
        let r = tape.relu(x);
        let s = tape.sum(r);
        let g = tape.backward(s).unwrap();
        assert_eq!(g.wrt(x).unwrap(), &[0.0, 1.0, 0.0, 1.0]);
    }

    #[test]
    fn backward_basic_losses() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(t(&[2], &[1.0, 2.0]));
        let s = tape.sum(x);
        assert_eq!(tape.backward(s).unwrap().wrt(x).unwrap(), &[1.0, 1.0]);
        let sq = tape.mul(x, x).unwrap();
        let s2 = tape.sum(sq);
        let g = tape.backward(s2).unwrap();
        assert_eq!(g.wrt(x).unwrap(), &[2.0, 4.0]);
        // Repeatable.
        assert_eq!(tape.backward(s2).unwrap().wrt(x).unwrap(), &[2.0, 4.0]);
    }

    #[test]
    fn backward_errors() {
        let tape = Tape::<f64>::new();
        assert!(matches!(tape.backward(Var(0)), Err(TensorError::BackwardBeforeForward(_))));
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::zeros(&[2]));
        assert!(matches!(tape.backward(x), Err(TensorError::NotScalar(_))));
    }

    #[test]
    fn concat_and_slice_round_trip() {
        let mut tape = Tape::<f64>::new();
        let a = tape.leaf(t(&[1, 1, 1, 2], &[1.0, 2.0]));
        let b = tape.leaf(t(&[1, 2, 1, 2], &[3.0, 4.0, 5.0, 6.0]));
        let c = tape.concat(&[a, b], 1).unwrap();
        assert_eq!(tape.shape(c), &[1, 3, 1, 2]);
        assert_eq!(tape.value(c).data(), &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let s = tape.slice0(c, 0, 1).unwrap();
        assert_eq!(tape.value(s).data(), tape.value(c).data());
        assert!(tape.slice0(c, 1, 1).is_err());
    }
}
