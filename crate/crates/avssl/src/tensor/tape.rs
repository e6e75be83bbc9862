//! Computation tape for reverse-mode differentiation.
//!
//! Operations record onto the tape only when some input requires a gradient.
//! [`Tape::backward`] replays records in exact reverse recording order and
//! accumulates gradients into every reachable leaf with `requires_grad`.
//! One tape serves one training step and is confined to one thread.

use super::{Tensor, TensorError};

/// Handle to a tensor stored on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BnMode {
    Train,
    Eval,
}

/// Per-channel running statistics for batch normalization.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNormState {
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
}

impl BatchNormState {
    pub fn new(channels: usize) -> Self {
        BatchNormState {
            running_mean: vec![0.0; channels],
            running_var: vec![1.0; channels],
        }
    }
}

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Debug)]
enum Op {
    Add,
    Sub,
    Mul,
    Div,
    /// `[N, F] + [F]`, bias broadcast over rows.
    AddBias,
    /// `[N, C, H, W] + [C]`, bias broadcast per channel.
    AddChannelBias,
    Scale(f64),
    Matmul,
    /// `a @ b^T` where `a: [M, K]`, `b: [N, K]`.
    MatmulNT,
    Conv2d {
        stride: (usize, usize),
        pad: (usize, usize),
    },
    Relu,
    Log,
    Exp,
    SoftmaxRows,
    SumAll,
    MeanAll,
    RowSum,
    Reshape,
    Concat {
        axis: usize,
        sizes: Vec<usize>,
    },
    L2Normalize {
        norm: f64,
    },
    L2NormalizeRows {
        norms: Vec<f64>,
    },
    MaxPool2d {
        argmax: Vec<usize>,
    },
    AvgPool2d {
        kernel: (usize, usize),
        stride: (usize, usize),
    },
    SpatialMean,
    TemporalMax {
        argmax: Vec<usize>,
    },
    LogSumExpRowsMasked {
        mask: Tensor,
    },
    BatchNorm {
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
        channels: usize,
        inner: usize,
        mode: BnMode,
    },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Add => "add",
            Op::Sub => "sub",
            Op::Mul => "mul",
            Op::Div => "div",
            Op::AddBias => "add_bias",
            Op::AddChannelBias => "add_channel_bias",
            Op::Scale(_) => "scale",
            Op::Matmul => "matmul",
            Op::MatmulNT => "matmul_nt",
            Op::Conv2d { .. } => "conv2d",
            Op::Relu => "relu",
            Op::Log => "log",
            Op::Exp => "exp",
            Op::SoftmaxRows => "softmax_rows",
            Op::SumAll => "sum_all",
            Op::MeanAll => "mean_all",
            Op::RowSum => "row_sum",
            Op::Reshape => "reshape",
            Op::Concat { .. } => "concat",
            Op::L2Normalize { .. } => "l2_normalize",
            Op::L2NormalizeRows { .. } => "l2_normalize_rows",
            Op::MaxPool2d { .. } => "max_pool2d",
            Op::AvgPool2d { .. } => "avg_pool2d",
            Op::SpatialMean => "spatial_mean",
            Op::TemporalMax { .. } => "temporal_max",
            Op::LogSumExpRowsMasked { .. } => "log_sum_exp_rows_masked",
            Op::BatchNorm { .. } => "batch_norm",
        }
    }
}

struct Record {
    op: Op,
    inputs: Vec<Var>,
    output: Var,
}

/// Ordered record of primitive operations plus the tensors they touched.
pub struct Tape {
    values: Vec<Tensor>,
    requires: Vec<bool>,
    grads: Vec<Option<Vec<f64>>>,
    records: Vec<Record>,
    consumed: bool,
    warnings: Vec<String>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            values: Vec::new(),
            requires: Vec::new(),
            grads: Vec::new(),
            records: Vec::new(),
            consumed: false,
            warnings: Vec::new(),
        }
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push(value, requires_grad)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, false)
    }

    fn push(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.values.push(value);
        self.requires.push(requires_grad);
        self.grads.push(None);
        Var(self.values.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.values[v.0]
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.requires[v.0]
    }

    /// Gradient of the last `backward` call w.r.t. `v`, if one was populated.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.grads[v.0].as_deref()
    }

    pub fn num_records(&self) -> usize {
        self.records.len()
    }

    /// Operation names in recording order.
    pub fn record_ops(&self) -> Vec<&'static str> {
        self.records.iter().map(|r| r.op.name()).collect()
    }

    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    /// Drops all records, gradients, and stored tensors. Outstanding `Var`
    /// handles become invalid.
    pub fn clear(&mut self) {
        self.values.clear();
        self.requires.clear();
        self.grads.clear();
        self.records.clear();
        self.consumed = false;
        self.warnings.clear();
    }

    /// Forward value equals the input; no gradient flows back through the result.
    pub fn stop_gradient(&mut self, x: Var) -> Var {
        let value = self.values[x.0].clone();
        self.push(value, false)
    }

    fn record_unary(&mut self, op: Op, x: Var, out: Tensor) -> Var {
        let rg = self.requires[x.0];
        let v = self.push(out, rg);
        if rg {
            self.records.push(Record {
                op,
                inputs: vec![x],
                output: v,
            });
        }
        v
    }

    fn record_binary(&mut self, op: Op, a: Var, b: Var, out: Tensor) -> Var {
        let rg = self.requires[a.0] || self.requires[b.0];
        let v = self.push(out, rg);
        if rg {
            self.records.push(Record {
                op,
                inputs: vec![a, b],
                output: v,
            });
        }
        v
    }

    // ---- elementwise ----

    fn elementwise(
        &mut self,
        op: Op,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Var, TensorError> {
        let (ta, tb) = (&self.values[a.0], &self.values[b.0]);
        if ta.shape() != tb.shape() {
            return Err(TensorError::ShapeMismatch {
                op: op.name(),
                lhs: ta.shape().to_vec(),
                rhs: tb.shape().to_vec(),
            });
        }
        let data: Vec<f64> = ta
            .data()
            .iter()
            .zip(tb.data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let out = Tensor::new(ta.shape().to_vec(), data).expect("elementwise shape");
        Ok(self.record_binary(op, a, b, out))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.elementwise(Op::Add, a, b, |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.elementwise(Op::Sub, a, b, |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.elementwise(Op::Mul, a, b, |x, y| x * y)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.elementwise(Op::Div, a, b, |x, y| x / y)
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let t = &self.values[x.0];
        let out = Tensor::new(t.shape().to_vec(), t.data().iter().map(|&v| v * c).collect())
            .expect("scale shape");
        self.record_unary(Op::Scale(c), x, out)
    }

    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var, TensorError> {
        let (tx, tb) = (&self.values[x.0], &self.values[bias.0]);
        if tx.rank() != 2 || tb.rank() != 1 || tx.shape()[1] != tb.shape()[0] {
            return Err(TensorError::ShapeMismatch {
                op: "add_bias",
                lhs: tx.shape().to_vec(),
                rhs: tb.shape().to_vec(),
            });
        }
        let f = tx.shape()[1];
        let mut data = tx.data().to_vec();
        for row in data.chunks_mut(f) {
            for (v, &b) in row.iter_mut().zip(tb.data()) {
                *v += b;
            }
        }
        let out = Tensor::new(tx.shape().to_vec(), data).expect("add_bias shape");
        Ok(self.record_binary(Op::AddBias, x, bias, out))
    }

    pub fn add_channel_bias(&mut self, x: Var, bias: Var) -> Result<Var, TensorError> {
        let (tx, tb) = (&self.values[x.0], &self.values[bias.0]);
        if tx.rank() != 4 || tb.rank() != 1 || tx.shape()[1] != tb.shape()[0] {
            return Err(TensorError::ShapeMismatch {
                op: "add_channel_bias",
                lhs: tx.shape().to_vec(),
                rhs: tb.shape().to_vec(),
            });
        }
        let (c, hw) = (tx.shape()[1], tx.shape()[2] * tx.shape()[3]);
        let mut data = tx.data().to_vec();
        for image in data.chunks_mut(c * hw) {
            for (ch, plane) in image.chunks_mut(hw).enumerate() {
                let b = tb.data()[ch];
                for v in plane.iter_mut() {
                    *v += b;
                }
            }
        }
        let out = Tensor::new(tx.shape().to_vec(), data).expect("add_channel_bias shape");
        Ok(self.record_binary(Op::AddChannelBias, x, bias, out))
    }

    // ---- matrix products ----

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (ta, tb) = (&self.values[a.0], &self.values[b.0]);
        if ta.rank() != 2 || tb.rank() != 2 || ta.shape()[1] != tb.shape()[0] {
            return Err(TensorError::ShapeMismatch {
                op: "matmul",
                lhs: ta.shape().to_vec(),
                rhs: tb.shape().to_vec(),
            });
        }
        let (m, k, n) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
        let mut data = vec![0.0; m * n];
        for i in 0..m {
            let a_row = &ta.data()[i * k..(i + 1) * k];
            let out_row = &mut data[i * n..(i + 1) * n];
            for (kk, &aik) in a_row.iter().enumerate() {
                let b_row = &tb.data()[kk * n..(kk + 1) * n];
                for (o, &bv) in out_row.iter_mut().zip(b_row) {
                    *o += aik * bv;
                }
            }
        }
        let out = Tensor::new(vec![m, n], data).expect("matmul shape");
        Ok(self.record_binary(Op::Matmul, a, b, out))
    }

    /// `a @ b^T`: rows of `a` dotted with rows of `b`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (ta, tb) = (&self.values[a.0], &self.values[b.0]);
        if ta.rank() != 2 || tb.rank() != 2 || ta.shape()[1] != tb.shape()[1] {
            return Err(TensorError::ShapeMismatch {
                op: "matmul_nt",
                lhs: ta.shape().to_vec(),
                rhs: tb.shape().to_vec(),
            });
        }
        let (m, k, n) = (ta.shape()[0], ta.shape()[1], tb.shape()[0]);
        let mut data = vec![0.0; m * n];
        for i in 0..m {
            let a_row = &ta.data()[i * k..(i + 1) * k];
            for j in 0..n {
                let b_row = &tb.data()[j * k..(j + 1) * k];
                data[i * n + j] = a_row.iter().zip(b_row).map(|(&x, &y)| x * y).sum();
            }
        }
        let out = Tensor::new(vec![m, n], data).expect("matmul_nt shape");
        Ok(self.record_binary(Op::MatmulNT, a, b, out))
    }

    // ---- convolution and pooling ----

    /// 2-D convolution with zero padding. `x: [N, Ci, H, W]`, `w: [Co, Ci, kh, kw]`.
    pub fn conv2d(
        &mut self,
        x: Var,
        w: Var,
        stride: (usize, usize),
        pad: (usize, usize),
    ) -> Result<Var, TensorError> {
        let (tx, tw) = (&self.values[x.0], &self.values[w.0]);
        if tx.rank() != 4 || tw.rank() != 4 || tx.shape()[1] != tw.shape()[1] {
            return Err(TensorError::ShapeMismatch {
                op: "conv2d",
                lhs: tx.shape().to_vec(),
                rhs: tw.shape().to_vec(),
            });
        }
        let (n, ci, h, wd) = (tx.shape()[0], tx.shape()[1], tx.shape()[2], tx.shape()[3]);
        let (co, kh, kw) = (tw.shape()[0], tw.shape()[2], tw.shape()[3]);
        let (sh, sw) = stride;
        if sh == 0 || sw == 0 {
            return Err(TensorError::BadArgument {
                op: "conv2d",
                msg: "stride must be positive".into(),
            });
        }
        if h + 2 * pad.0 < kh || wd + 2 * pad.1 < kw {
            return Err(TensorError::ShapeMismatch {
                op: "conv2d",
                lhs: tx.shape().to_vec(),
                rhs: tw.shape().to_vec(),
            });
        }
        let oh = (h + 2 * pad.0 - kh) / sh + 1;
        let ow = (wd + 2 * pad.1 - kw) / sw + 1;
        let mut data = vec![0.0; n * co * oh * ow];
        let xd = tx.data();
        let wdat = tw.data();
        for in_ in 0..n {
            for c_out in 0..co {
                for oy in 0..oh {
                    let iy0 = (oy * sh) as isize - pad.0 as isize;
                    for ox in 0..ow {
                        let ix0 = (ox * sw) as isize - pad.1 as isize;
                        let mut acc = 0.0;
                        for c_in in 0..ci {
                            let x_base = ((in_ * ci) + c_in) * h * wd;
                            let w_base = ((c_out * ci) + c_in) * kh * kw;
                            for ky in 0..kh {
                                let iy = iy0 + ky as isize;
                                if iy < 0 || iy >= h as isize {
                                    continue;
                                }
                                let kx_lo = (-ix0).max(0) as usize;
                                let kx_hi = ((wd as isize - ix0).min(kw as isize)).max(0) as usize;
                                if kx_lo >= kx_hi {
                                    continue;
                                }
                                let x_row = &xd[x_base + iy as usize * wd..];
                                let w_row = &wdat[w_base + ky * kw..w_base + ky * kw + kw];
                                let ix_start = (ix0 + kx_lo as isize) as usize;
                                let xs = &x_row[ix_start..ix_start + (kx_hi - kx_lo)];
                                let ws = &w_row[kx_lo..kx_hi];
                                acc += xs.iter().zip(ws).map(|(&a, &b)| a * b).sum::<f64>();
                            }
                        }
                        data[(((in_ * co) + c_out) * oh + oy) * ow + ox] = acc;
                    }
                }
            }
        }
        let out = Tensor::new(vec![n, co, oh, ow], data).expect("conv2d shape");
        Ok(self.record_binary(Op::Conv2d { stride, pad }, x, w, out))
    }

    /// Max pooling over the two trailing spatial axes, floor semantics, no padding.
    pub fn max_pool2d(
        &mut self,
        x: Var,
        kernel: (usize, usize),
        stride: (usize, usize),
    ) -> Result<Var, TensorError> {
        let tx = &self.values[x.0];
        if tx.rank() != 4 {
            return Err(TensorError::BadRank {
                op: "max_pool2d",
                expected: 4,
                shape: tx.shape().to_vec(),
            });
        }
        let (n, c, h, w) = (tx.shape()[0], tx.shape()[1], tx.shape()[2], tx.shape()[3]);
        let (kh, kw) = kernel;
        let (sh, sw) = stride;
        if kh == 0 || kw == 0 || sh == 0 || sw == 0 || kh > h || kw > w {
            return Err(TensorError::BadArgument {
                op: "max_pool2d",
                msg: format!("kernel {kernel:?} stride {stride:?} on shape {:?}", tx.shape()),
            });
        }
        let oh = (h - kh) / sh + 1;
        let ow = (w - kw) / sw + 1;
        let mut data = vec![0.0; n * c * oh * ow];
        let mut argmax = vec![0usize; n * c * oh * ow];
        let xd = tx.data();
        for nc in 0..n * c {
            let base = nc * h * w;
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = f64::NEG_INFINITY;
                    let mut best_idx = 0;
                    for ky in 0..kh {
                        let iy = oy * sh + ky;
                        for kx in 0..kw {
                            let ix = ox * sw + kx;
                            let idx = base + iy * w + ix;
                            if xd[idx] > best {
                                best = xd[idx];
                                best_idx = idx;
                            }
                        }
                    }
                    let o = (nc * oh + oy) * ow + ox;
                    data[o] = best;
                    argmax[o] = best_idx;
                }
            }
        }
        let out = Tensor::new(vec![n, c, oh, ow], data).expect("max_pool2d shape");
        Ok(self.record_unary(Op::MaxPool2d { argmax }, x, out))
    }

    /// Average pooling over the two trailing spatial axes, floor semantics.
    pub fn avg_pool2d(
        &mut self,
        x: Var,
        kernel: (usize, usize),
        stride: (usize, usize),
    ) -> Result<Var, TensorError> {
        let tx = &self.values[x.0];
        if tx.rank() != 4 {
            return Err(TensorError::BadRank {
                op: "avg_pool2d",
                expected: 4,
                shape: tx.shape().to_vec(),
            });
        }
        let (n, c, h, w) = (tx.shape()[0], tx.shape()[1], tx.shape()[2], tx.shape()[3]);
        let (kh, kw) = kernel;
        let (sh, sw) = stride;
        if kh == 0 || kw == 0 || sh == 0 || sw == 0 || kh > h || kw > w {
            return Err(TensorError::BadArgument {
                op: "avg_pool2d",
                msg: format!("kernel {kernel:?} stride {stride:?} on shape {:?}", tx.shape()),
            });
        }
        let oh = (h - kh) / sh + 1;
        let ow = (w - kw) / sw + 1;
        let inv = 1.0 / (kh * kw) as f64;
        let mut data = vec![0.0; n * c * oh * ow];
        let xd = tx.data();
        for nc in 0..n * c {
            let base = nc * h * w;
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = 0.0;
                    for ky in 0..kh {
                        let iy = oy * sh + ky;
                        for kx in 0..kw {
                            acc += xd[base + iy * w + ox * sw + kx];
                        }
                    }
                    data[(nc * oh + oy) * ow + ox] = acc * inv;
                }
            }
        }
        let out = Tensor::new(vec![n, c, oh, ow], data).expect("avg_pool2d shape");
        Ok(self.record_unary(Op::AvgPool2d { kernel, stride }, x, out))
    }

    /// Global mean over the spatial axes: `[N, C, H, W] -> [N, C]`.
    pub fn spatial_mean(&mut self, x: Var) -> Result<Var, TensorError> {
        let tx = &self.values[x.0];
        if tx.rank() != 4 {
            return Err(TensorError::BadRank {
                op: "spatial_mean",
                expected: 4,
                shape: tx.shape().to_vec(),
            });
        }
        let (n, c, hw) = (tx.shape()[0], tx.shape()[1], tx.shape()[2] * tx.shape()[3]);
        let inv = 1.0 / hw as f64;
        let mut data = vec![0.0; n * c];
        for (i, plane) in tx.data().chunks(hw).enumerate() {
            data[i] = plane.iter().sum::<f64>() * inv;
        }
        let out = Tensor::new(vec![n, c], data).expect("spatial_mean shape");
        Ok(self.record_unary(Op::SpatialMean, x, out))
    }

    /// Max over the time axis of `[N, T, C] -> [N, C]`. Ties keep the earliest step.
    pub fn temporal_max(&mut self, x: Var) -> Result<Var, TensorError> {
        let tx = &self.values[x.0];
        if tx.rank() != 3 {
            return Err(TensorError::BadRank {
                op: "temporal_max",
                expected: 3,
                shape: tx.shape().to_vec(),
            });
        }
        let (n, t, c) = (tx.shape()[0], tx.shape()[1], tx.shape()[2]);
        let mut data = vec![f64::NEG_INFINITY; n * c];
        let mut argmax = vec![0usize; n * c];
        let xd = tx.data();
        for i in 0..n {
            for tt in 0..t {
                let row = &xd[(i * t + tt) * c..(i * t + tt + 1) * c];
                for (ch, &v) in row.iter().enumerate() {
                    let o = i * c + ch;
                    if v > data[o] {
                        data[o] = v;
                        argmax[o] = tt;
                    }
                }
            }
        }
        let out = Tensor::new(vec![n, c], data).expect("temporal_max shape");
        Ok(self.record_unary(Op::TemporalMax { argmax }, x, out))
    }

    // ---- activations and pointwise math ----

    pub fn relu(&mut self, x: Var) -> Var {
        let t = &self.values[x.0];
        let out = Tensor::new(
            t.shape().to_vec(),
            t.data().iter().map(|&v| v.max(0.0)).collect(),
        )
        .expect("relu shape");
        self.record_unary(Op::Relu, x, out)
    }

    pub fn log(&mut self, x: Var) -> Var {
        let t = &self.values[x.0];
        let out = Tensor::new(t.shape().to_vec(), t.data().iter().map(|&v| v.ln()).collect())
            .expect("log shape");
        self.record_unary(Op::Log, x, out)
    }

    pub fn exp(&mut self, x: Var) -> Var {
        let t = &self.values[x.0];
        let out = Tensor::new(t.shape().to_vec(), t.data().iter().map(|&v| v.exp()).collect())
            .expect("exp shape");
        self.record_unary(Op::Exp, x, out)
    }

    /// Row-wise softmax of a `[N, M]` tensor, max-shifted for stability.
    pub fn softmax_rows(&mut self, x: Var) -> Result<Var, TensorError> {
        let t = &self.values[x.0];
        if t.rank() != 2 {
            return Err(TensorError::BadRank {
                op: "softmax_rows",
                expected: 2,
                shape: t.shape().to_vec(),
            });
        }
        let m = t.shape()[1];
        let mut data = Vec::with_capacity(t.len());
        for row in t.data().chunks(m) {
            let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = row.iter().map(|&v| (v - mx).exp()).collect();
            let sum: f64 = exps.iter().sum();
            data.extend(exps.into_iter().map(|e| e / sum));
        }
        let out = Tensor::new(t.shape().to_vec(), data).expect("softmax shape");
        Ok(self.record_unary(Op::SoftmaxRows, x, out))
    }

    // ---- reductions ----

    pub fn sum_all(&mut self, x: Var) -> Var {
        let s: f64 = self.values[x.0].data().iter().sum();
        self.record_unary(Op::SumAll, x, Tensor::scalar(s))
    }

    pub fn mean_all(&mut self, x: Var) -> Var {
        let t = &self.values[x.0];
        let s: f64 = t.data().iter().sum::<f64>() / t.len() as f64;
        self.record_unary(Op::MeanAll, x, Tensor::scalar(s))
    }

    /// Sum along rows of `[N, M] -> [N]`.
    pub fn row_sum(&mut self, x: Var) -> Result<Var, TensorError> {
        let t = &self.values[x.0];
        if t.rank() != 2 {
            return Err(TensorError::BadRank {
                op: "row_sum",
                expected: 2,
                shape: t.shape().to_vec(),
            });
        }
        let m = t.shape()[1];
        let data: Vec<f64> = t.data().chunks(m).map(|r| r.iter().sum()).collect();
        let out = Tensor::new(vec![t.shape()[0]], data).expect("row_sum shape");
        Ok(self.record_unary(Op::RowSum, x, out))
    }

    /// `out[i] = log Σ_j mask[i,j]·exp(x[i,j])`, max-shifted. `mask` is a
    /// constant; each row needs at least one nonzero mask entry.
    pub fn log_sum_exp_rows_masked(&mut self, x: Var, mask: &Tensor) -> Result<Var, TensorError> {
        let t = &self.values[x.0];
        if t.rank() != 2 || t.shape() != mask.shape() {
            return Err(TensorError::ShapeMismatch {
                op: "log_sum_exp_rows_masked",
                lhs: t.shape().to_vec(),
                rhs: mask.shape().to_vec(),
            });
        }
        let m = t.shape()[1];
        let mut data = Vec::with_capacity(t.shape()[0]);
        for (row, mrow) in t.data().chunks(m).zip(mask.data().chunks(m)) {
            let mx = row
                .iter()
                .zip(mrow)
                .filter(|(_, &mk)| mk != 0.0)
                .map(|(&v, _)| v)
                .fold(f64::NEG_INFINITY, f64::max);
            if mx == f64::NEG_INFINITY {
                return Err(TensorError::BadArgument {
                    op: "log_sum_exp_rows_masked",
                    msg: "a row has an all-zero mask".into(),
                });
            }
            let sum: f64 = row
                .iter()
                .zip(mrow)
                .map(|(&v, &mk)| if mk != 0.0 { mk * (v - mx).exp() } else { 0.0 })
                .sum();
            data.push(mx + sum.ln());
        }
        let out = Tensor::new(vec![t.shape()[0]], data).expect("lse shape");
        Ok(self.record_unary(
            Op::LogSumExpRowsMasked { mask: mask.clone() },
            x,
            out,
        ))
    }

    // ---- shape ops ----

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var, TensorError> {
        let out = self.values[x.0].reshape(shape)?;
        Ok(self.record_unary(Op::Reshape, x, out))
    }

    /// Concatenate along `axis`; all inputs share rank and non-axis extents.
    pub fn concat(&mut self, axis: usize, parts: &[Var]) -> Result<Var, TensorError> {
        if parts.is_empty() {
            return Err(TensorError::BadArgument {
                op: "concat",
                msg: "no inputs".into(),
            });
        }
        let first = self.values[parts[0].0].shape().to_vec();
        if axis >= first.len() {
            return Err(TensorError::BadArgument {
                op: "concat",
                msg: format!("axis {axis} out of range for rank {}", first.len()),
            });
        }
        let mut sizes = Vec::with_capacity(parts.len());
        let mut total_axis = 0;
        for &p in parts {
            let s = self.values[p.0].shape();
            if s.len() != first.len()
                || s.iter()
                    .zip(&first)
                    .enumerate()
                    .any(|(i, (a, b))| i != axis && a != b)
            {
                return Err(TensorError::ShapeMismatch {
                    op: "concat",
                    lhs: first.clone(),
                    rhs: s.to_vec(),
                });
            }
            sizes.push(s[axis]);
            total_axis += s[axis];
        }
        let mut out_shape = first.clone();
        out_shape[axis] = total_axis;
        let outer: usize = first[..axis].iter().product();
        let inner: usize = first[axis + 1..].iter().product();
        let mut data = vec![0.0; outer * total_axis * inner];
        let mut offset = 0;
        for (&p, &sz) in parts.iter().zip(&sizes) {
            let src = self.values[p.0].data();
            for o in 0..outer {
                let dst_base = (o * total_axis + offset) * inner;
                let src_base = o * sz * inner;
                data[dst_base..dst_base + sz * inner]
                    .copy_from_slice(&src[src_base..src_base + sz * inner]);
            }
            offset += sz;
        }
        let rg = parts.iter().any(|&p| self.requires[p.0]);
        let out = Tensor::new(out_shape, data).expect("concat shape");
        let v = self.push(out, rg);
        if rg {
            self.records.push(Record {
                op: Op::Concat { axis, sizes },
                inputs: parts.to_vec(),
                output: v,
            });
        }
        Ok(v)
    }

    // ---- normalization ----

    /// ℓ2-normalize a rank-1 tensor. The zero vector normalizes to itself and
    /// records a tape warning instead of producing NaN.
    pub fn l2_normalize(&mut self, x: Var) -> Result<Var, TensorError> {
        let t = &self.values[x.0];
        if t.rank() != 1 {
            return Err(TensorError::BadRank {
                op: "l2_normalize",
                expected: 1,
                shape: t.shape().to_vec(),
            });
        }
        let norm = t.data().iter().map(|&v| v * v).sum::<f64>().sqrt();
        let out = if norm == 0.0 {
            self.warnings
                .push("l2_normalize: zero vector left unnormalized".into());
            t.clone()
        } else {
            Tensor::new(
                t.shape().to_vec(),
                t.data().iter().map(|&v| v / norm).collect(),
            )
            .expect("l2_normalize shape")
        };
        Ok(self.record_unary(Op::L2Normalize { norm }, x, out))
    }

    /// ℓ2-normalize each row of a `[N, M]` tensor.
    pub fn l2_normalize_rows(&mut self, x: Var) -> Result<Var, TensorError> {
        let t = &self.values[x.0];
        if t.rank() != 2 {
            return Err(TensorError::BadRank {
                op: "l2_normalize_rows",
                expected: 2,
                shape: t.shape().to_vec(),
            });
        }
        let m = t.shape()[1];
        let mut norms = Vec::with_capacity(t.shape()[0]);
        let mut data = Vec::with_capacity(t.len());
        let mut saw_zero = false;
        for row in t.data().chunks(m) {
            let norm = row.iter().map(|&v| v * v).sum::<f64>().sqrt();
            norms.push(norm);
            if norm == 0.0 {
                saw_zero = true;
                data.extend_from_slice(row);
            } else {
                data.extend(row.iter().map(|&v| v / norm));
            }
        }
        if saw_zero {
            self.warnings
                .push("l2_normalize_rows: zero row left unnormalized".into());
        }
        let out = Tensor::new(t.shape().to_vec(), data).expect("l2_normalize_rows shape");
        Ok(self.record_unary(Op::L2NormalizeRows { norms }, x, out))
    }

    /// Batch normalization. `x` is `[N, F]` (per-feature) or `[N, C, H, W]`
    /// (per-channel over batch and spatial positions). Train mode normalizes
    /// by batch statistics (biased variance) and updates `state` by EMA;
    /// eval mode applies the running statistics.
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        state: &mut BatchNormState,
        mode: BnMode,
    ) -> Result<Var, TensorError> {
        let tx = &self.values[x.0];
        let (channels, inner) = match tx.rank() {
            2 => (tx.shape()[1], 1usize),
            4 => (tx.shape()[1], tx.shape()[2] * tx.shape()[3]),
            _ => {
                return Err(TensorError::BadRank {
                    op: "batch_norm",
                    expected: 2,
                    shape: tx.shape().to_vec(),
                })
            }
        };
        let n = tx.shape()[0];
        let tg = &self.values[gamma.0];
        let tb = &self.values[beta.0];
        if tg.shape() != [channels] || tb.shape() != [channels] {
            return Err(TensorError::ShapeMismatch {
                op: "batch_norm",
                lhs: tx.shape().to_vec(),
                rhs: tg.shape().to_vec(),
            });
        }
        if state.running_mean.len() != channels {
            return Err(TensorError::BadArgument {
                op: "batch_norm",
                msg: format!(
                    "state has {} channels, input has {channels}",
                    state.running_mean.len()
                ),
            });
        }
        if mode == BnMode::Train && n < 2 {
            return Err(TensorError::DegenerateBatch { batch: n });
        }

        let count = n * inner;
        let (mean, var) = match mode {
            BnMode::Train => {
                let mut mean = vec![0.0; channels];
                let mut var = vec![0.0; channels];
                for c in 0..channels {
                    let mut s = 0.0;
                    for i in 0..n {
                        let base = (i * channels + c) * inner;
                        s += tx.data()[base..base + inner].iter().sum::<f64>();
                    }
                    let mu = s / count as f64;
                    let mut sq = 0.0;
                    for i in 0..n {
                        let base = (i * channels + c) * inner;
                        sq += tx.data()[base..base + inner]
                            .iter()
                            .map(|&v| (v - mu) * (v - mu))
                            .sum::<f64>();
                    }
                    mean[c] = mu;
                    var[c] = sq / count as f64;
                }
                for c in 0..channels {
                    state.running_mean[c] =
                        (1.0 - BN_MOMENTUM) * state.running_mean[c] + BN_MOMENTUM * mean[c];
                    state.running_var[c] =
                        (1.0 - BN_MOMENTUM) * state.running_var[c] + BN_MOMENTUM * var[c];
                }
                (mean, var)
            }
            BnMode::Eval => (state.running_mean.clone(), state.running_var.clone()),
        };

        let inv_std: Vec<f64> = var.iter().map(|&v| 1.0 / (v + BN_EPS).sqrt()).collect();
        let mut xhat = vec![0.0; tx.len()];
        let mut data = vec![0.0; tx.len()];
        for i in 0..n {
            for c in 0..channels {
                let base = (i * channels + c) * inner;
                let (mu, is, g, b) = (mean[c], inv_std[c], tg.data()[c], tb.data()[c]);
                for k in 0..inner {
                    let xh = (tx.data()[base + k] - mu) * is;
                    xhat[base + k] = xh;
                    data[base + k] = g * xh + b;
                }
            }
        }
        let rg =
            self.requires[x.0] || self.requires[gamma.0] || self.requires[beta.0];
        let out = Tensor::new(tx.shape().to_vec(), data).expect("batch_norm shape");
        let v = self.push(out, rg);
        if rg {
            self.records.push(Record {
                op: Op::BatchNorm {
                    xhat,
                    inv_std,
                    channels,
                    inner,
                    mode,
                },
                inputs: vec![x, gamma, beta],
                output: v,
            });
        }
        Ok(v)
    }

    // ---- backward ----

    /// Populates gradients of `loss` w.r.t. every reachable leaf that
    /// requires a gradient. Replays records in exact reverse recording order.
    pub fn backward(&mut self, loss: Var) -> Result<(), TensorError> {
        if self.consumed {
            return Err(TensorError::DoubleBackward);
        }
        let lt = &self.values[loss.0];
        if !lt.is_scalar() {
            return Err(TensorError::NonScalarLoss {
                shape: lt.shape().to_vec(),
            });
        }
        if self.records.is_empty() || !self.requires[loss.0] {
            return Err(TensorError::EmptyTape);
        }
        self.consumed = true;
        self.grads[loss.0] = Some(vec![1.0]);

        let Tape {
            values,
            requires,
            grads,
            records,
            ..
        } = self;
        for rec in records.iter().rev() {
            let out_grad = match grads[rec.output.0].take() {
                Some(g) => g,
                None => continue,
            };
            backprop_record(rec, values, requires, grads, &out_grad);
            grads[rec.output.0] = Some(out_grad);
        }
        Ok(())
    }
}

fn accumulate(grads: &mut [Option<Vec<f64>>], var: Var, len: usize) -> &mut Vec<f64> {
    grads[var.0].get_or_insert_with(|| vec![0.0; len])
}

fn backprop_record(
    rec: &Record,
    values: &[Tensor],
    requires: &[bool],
    grads: &mut [Option<Vec<f64>>],
    g: &[f64],
) {
    // Inputs that do not require a gradient cannot reach any trainable leaf,
    // so their contributions are skipped entirely.
    let needs = |v: Var| requires[v.0];
    match &rec.op {
        Op::Add => {
            for &inp in &rec.inputs {
                if !needs(inp) {
                    continue;
                }
                let acc = accumulate(grads, inp, g.len());
                for (a, &gv) in acc.iter_mut().zip(g) {
                    *a += gv;
                }
            }
        }
        Op::Sub => {
            let (a, b) = (rec.inputs[0], rec.inputs[1]);
            if needs(a) {
                let acc = accumulate(grads, a, g.len());
                for (x, &gv) in acc.iter_mut().zip(g) {
                    *x += gv;
                }
            }
            if needs(b) {
                let acc = accumulate(grads, b, g.len());
                for (x, &gv) in acc.iter_mut().zip(g) {
                    *x -= gv;
                }
            }
        }
        Op::Mul => {
            let (a, b) = (rec.inputs[0], rec.inputs[1]);
            if needs(a) {
                let vb = values[b.0].data().to_vec();
                let acc = accumulate(grads, a, g.len());
                for i in 0..g.len() {
                    acc[i] += g[i] * vb[i];
                }
            }
            if needs(b) {
                let va = values[a.0].data().to_vec();
                let acc = accumulate(grads, b, g.len());
                for i in 0..g.len() {
                    acc[i] += g[i] * va[i];
                }
            }
        }
        Op::Div => {
            let (a, b) = (rec.inputs[0], rec.inputs[1]);
            let vb = values[b.0].data().to_vec();
            if needs(a) {
                let acc = accumulate(grads, a, g.len());
                for i in 0..g.len() {
                    acc[i] += g[i] / vb[i];
                }
            }
            if needs(b) {
                let va = values[a.0].data().to_vec();
                let acc = accumulate(grads, b, g.len());
                for i in 0..g.len() {
                    acc[i] -= g[i] * va[i] / (vb[i] * vb[i]);
                }
            }
        }
        Op::AddBias => {
            let (x, bias) = (rec.inputs[0], rec.inputs[1]);
            if needs(x) {
                let acc = accumulate(grads, x, g.len());
                for (a, &gv) in acc.iter_mut().zip(g) {
                    *a += gv;
                }
            }
            if needs(bias) {
                let f = values[bias.0].len();
                let acc = accumulate(grads, bias, f);
                for row in g.chunks(f) {
                    for (a, &gv) in acc.iter_mut().zip(row) {
                        *a += gv;
                    }
                }
            }
        }
        Op::AddChannelBias => {
            let (x, bias) = (rec.inputs[0], rec.inputs[1]);
            if needs(x) {
                let acc = accumulate(grads, x, g.len());
                for (a, &gv) in acc.iter_mut().zip(g) {
                    *a += gv;
                }
            }
            if needs(bias) {
                let c = values[bias.0].len();
                let hw = g.len() / values[x.0].shape()[0] / c;
                let acc = accumulate(grads, bias, c);
                for image in g.chunks(c * hw) {
                    for (ch, plane) in image.chunks(hw).enumerate() {
                        acc[ch] += plane.iter().sum::<f64>();
                    }
                }
            }
        }
        Op::Scale(c) => {
            if needs(rec.inputs[0]) {
                let acc = accumulate(grads, rec.inputs[0], g.len());
                for (a, &gv) in acc.iter_mut().zip(g) {
                    *a += gv * c;
                }
            }
        }
        Op::Matmul => {
            let (a, b) = (rec.inputs[0], rec.inputs[1]);
            let (m, k) = (values[a.0].shape()[0], values[a.0].shape()[1]);
            let n = values[b.0].shape()[1];
            if needs(a) {
                // dA[i,k] = Σ_j g[i,j]·B[k,j]
                let vb = values[b.0].data().to_vec();
                let acc = accumulate(grads, a, m * k);
                for i in 0..m {
                    let g_row = &g[i * n..(i + 1) * n];
                    for kk in 0..k {
                        let b_row = &vb[kk * n..(kk + 1) * n];
                        acc[i * k + kk] +=
                            g_row.iter().zip(b_row).map(|(&x, &y)| x * y).sum::<f64>();
                    }
                }
            }
            if needs(b) {
                // dB[k,j] = Σ_i A[i,k]·g[i,j]
                let va = values[a.0].data().to_vec();
                let acc = accumulate(grads, b, k * n);
                for i in 0..m {
                    let g_row = &g[i * n..(i + 1) * n];
                    for kk in 0..k {
                        let aik = va[i * k + kk];
                        if aik == 0.0 {
                            continue;
                        }
                        let b_row = &mut acc[kk * n..(kk + 1) * n];
                        for (bg, &gv) in b_row.iter_mut().zip(g_row) {
                            *bg += aik * gv;
                        }
                    }
                }
            }
        }
        Op::MatmulNT => {
            let (a, b) = (rec.inputs[0], rec.inputs[1]);
            let (m, k) = (values[a.0].shape()[0], values[a.0].shape()[1]);
            let n = values[b.0].shape()[0];
            if needs(a) {
                // dA[i,:] = Σ_j g[i,j]·B[j,:]
                let vb = values[b.0].data().to_vec();
                let acc = accumulate(grads, a, m * k);
                for i in 0..m {
                    let a_row = &mut acc[i * k..(i + 1) * k];
                    for j in 0..n {
                        let gv = g[i * n + j];
                        if gv == 0.0 {
                            continue;
                        }
                        let b_row = &vb[j * k..(j + 1) * k];
                        for (ag, &bv) in a_row.iter_mut().zip(b_row) {
                            *ag += gv * bv;
                        }
                    }
                }
            }
            if needs(b) {
                // dB[j,:] = Σ_i g[i,j]·A[i,:]
                let va = values[a.0].data().to_vec();
                let acc = accumulate(grads, b, n * k);
                for i in 0..m {
                    let a_row = &va[i * k..(i + 1) * k];
                    for j in 0..n {
                        let gv = g[i * n + j];
                        if gv == 0.0 {
                            continue;
                        }
                        let b_row = &mut acc[j * k..(j + 1) * k];
                        for (bg, &av) in b_row.iter_mut().zip(a_row) {
                            *bg += gv * av;
                        }
                    }
                }
            }
        }
        Op::Conv2d { stride, pad } => {
            conv2d_backward(rec, values, requires, grads, g, *stride, *pad);
        }
        Op::Relu => {
            let x = rec.inputs[0];
            if needs(x) {
                let vx = values[x.0].data().to_vec();
                let acc = accumulate(grads, x, g.len());
                for i in 0..g.len() {
                    if vx[i] > 0.0 {
                        acc[i] += g[i];
                    }
                }
            }
        }
        Op::Log => {
            let x = rec.inputs[0];
            if needs(x) {
                let vx = values[x.0].data().to_vec();
                let acc = accumulate(grads, x, g.len());
                for i in 0..g.len() {
                    acc[i] += g[i] / vx[i];
                }
            }
        }
        Op::Exp => {
            if needs(rec.inputs[0]) {
                let out = values[rec.output.0].data().to_vec();
                let acc = accumulate(grads, rec.inputs[0], g.len());
                for i in 0..g.len() {
                    acc[i] += g[i] * out[i];
                }
            }
        }
        Op::SoftmaxRows => {
            if needs(rec.inputs[0]) {
                let s = values[rec.output.0].data().to_vec();
                let m = values[rec.output.0].shape()[1];
                let acc = accumulate(grads, rec.inputs[0], g.len());
                for (r, (s_row, g_row)) in s.chunks(m).zip(g.chunks(m)).enumerate() {
                    let dot: f64 = s_row.iter().zip(g_row).map(|(&a, &b)| a * b).sum();
                    let out_row = &mut acc[r * m..(r + 1) * m];
                    for i in 0..m {
                        out_row[i] += s_row[i] * (g_row[i] - dot);
                    }
                }
            }
        }
        Op::SumAll => {
            let x = rec.inputs[0];
            if needs(x) {
                let len = values[x.0].len();
                let acc = accumulate(grads, x, len);
                for a in acc.iter_mut() {
                    *a += g[0];
                }
            }
        }
        Op::MeanAll => {
            let x = rec.inputs[0];
            if needs(x) {
                let len = values[x.0].len();
                let gv = g[0] / len as f64;
                let acc = accumulate(grads, x, len);
                for a in acc.iter_mut() {
                    *a += gv;
                }
            }
        }
        Op::RowSum => {
            let x = rec.inputs[0];
            if needs(x) {
                let m = values[x.0].shape()[1];
                let acc = accumulate(grads, x, values[x.0].len());
                for (row, &gv) in acc.chunks_mut(m).zip(g) {
                    for a in row.iter_mut() {
                        *a += gv;
                    }
                }
            }
        }
        Op::Reshape => {
            if needs(rec.inputs[0]) {
                let acc = accumulate(grads, rec.inputs[0], g.len());
                for (a, &gv) in acc.iter_mut().zip(g) {
                    *a += gv;
                }
            }
        }
        Op::Concat { axis, sizes } => {
            let first = values[rec.inputs[0].0].shape();
            let outer: usize = first[..*axis].iter().product();
            let inner: usize = first[*axis + 1..].iter().product();
            let total: usize = sizes.iter().sum();
            let mut offset = 0;
            for (&inp, &sz) in rec.inputs.iter().zip(sizes) {
                if needs(inp) {
                    let len = values[inp.0].len();
                    let acc = accumulate(grads, inp, len);
                    for o in 0..outer {
                        let src_base = (o * total + offset) * inner;
                        let dst_base = o * sz * inner;
                        for i in 0..sz * inner {
                            acc[dst_base + i] += g[src_base + i];
                        }
                    }
                }
                offset += sz;
            }
        }
        Op::L2Normalize { norm } => {
            if !needs(rec.inputs[0]) || *norm == 0.0 {
                return;
            }
            let y = values[rec.output.0].data().to_vec();
            let acc = accumulate(grads, rec.inputs[0], g.len());
            let dot: f64 = y.iter().zip(g).map(|(&a, &b)| a * b).sum();
            for i in 0..g.len() {
                acc[i] += (g[i] - y[i] * dot) / norm;
            }
        }
        Op::L2NormalizeRows { norms } => {
            if !needs(rec.inputs[0]) {
                return;
            }
            let y = values[rec.output.0].data().to_vec();
            let m = values[rec.output.0].shape()[1];
            let acc = accumulate(grads, rec.inputs[0], g.len());
            for (r, norm) in norms.iter().enumerate() {
                if *norm == 0.0 {
                    continue;
                }
                let y_row = &y[r * m..(r + 1) * m];
                let g_row = &g[r * m..(r + 1) * m];
                let dot: f64 = y_row.iter().zip(g_row).map(|(&a, &b)| a * b).sum();
                let a_row = &mut acc[r * m..(r + 1) * m];
                for i in 0..m {
                    a_row[i] += (g_row[i] - y_row[i] * dot) / norm;
                }
            }
        }
        Op::MaxPool2d { argmax } => {
            let x = rec.inputs[0];
            if needs(x) {
                let acc = accumulate(grads, x, values[x.0].len());
                for (o, &src) in argmax.iter().enumerate() {
                    acc[src] += g[o];
                }
            }
        }
        Op::AvgPool2d { kernel, stride } => {
            let x = rec.inputs[0];
            if !needs(x) {
                return;
            }
            let shape = values[x.0].shape().to_vec();
            let (n, c, h, w) = (shape[0], shape[1], shape[2], shape[3]);
            let (kh, kw) = *kernel;
            let (sh, sw) = *stride;
            let oh = (h - kh) / sh + 1;
            let ow = (w - kw) / sw + 1;
            let inv = 1.0 / (kh * kw) as f64;
            let acc = accumulate(grads, x, n * c * h * w);
            for nc in 0..n * c {
                let base = nc * h * w;
                for oy in 0..oh {
                    for ox in 0..ow {
                        let gv = g[(nc * oh + oy) * ow + ox] * inv;
                        for ky in 0..kh {
                            let iy = oy * sh + ky;
                            for kx in 0..kw {
                                acc[base + iy * w + ox * sw + kx] += gv;
                            }
                        }
                    }
                }
            }
        }
        Op::SpatialMean => {
            let x = rec.inputs[0];
            if !needs(x) {
                return;
            }
            let shape = values[x.0].shape().to_vec();
            let hw = shape[2] * shape[3];
            let inv = 1.0 / hw as f64;
            let acc = accumulate(grads, x, values[x.0].len());
            for (plane, &gv) in acc.chunks_mut(hw).zip(g) {
                for a in plane.iter_mut() {
                    *a += gv * inv;
                }
            }
        }
        Op::TemporalMax { argmax } => {
            let x = rec.inputs[0];
            if !needs(x) {
                return;
            }
            let shape = values[x.0].shape().to_vec();
            let (t, c) = (shape[1], shape[2]);
            let acc = accumulate(grads, x, values[x.0].len());
            for (o, &tt) in argmax.iter().enumerate() {
                let (i, ch) = (o / c, o % c);
                acc[(i * t + tt) * c + ch] += g[o];
            }
        }
        Op::LogSumExpRowsMasked { mask } => {
            let x = rec.inputs[0];
            if !needs(x) {
                return;
            }
            let out = values[rec.output.0].data().to_vec();
            let vx = values[x.0].data().to_vec();
            let m = values[x.0].shape()[1];
            let acc = accumulate(grads, x, vx.len());
            for r in 0..out.len() {
                let o = out[r];
                let gr = g[r];
                if gr == 0.0 {
                    continue;
                }
                let x_row = &vx[r * m..(r + 1) * m];
                let m_row = &mask.data()[r * m..(r + 1) * m];
                let a_row = &mut acc[r * m..(r + 1) * m];
                for i in 0..m {
                    if m_row[i] != 0.0 {
                        a_row[i] += gr * m_row[i] * (x_row[i] - o).exp();
                    }
                }
            }
        }
        Op::BatchNorm {
            xhat,
            inv_std,
            channels,
            inner,
            mode,
        } => {
            bn_backward(
                rec, values, requires, grads, g, xhat, inv_std, *channels, *inner, *mode,
            );
        }
    }
}

fn conv2d_backward(
    rec: &Record,
    values: &[Tensor],
    requires: &[bool],
    grads: &mut [Option<Vec<f64>>],
    g: &[f64],
    stride: (usize, usize),
    pad: (usize, usize),
) {
    let (x, w) = (rec.inputs[0], rec.inputs[1]);
    let xs = values[x.0].shape().to_vec();
    let ws = values[w.0].shape().to_vec();
    let (n, ci, h, wd) = (xs[0], xs[1], xs[2], xs[3]);
    let (co, kh, kw) = (ws[0], ws[2], ws[3]);
    let (sh, sw) = stride;
    let oh = (h + 2 * pad.0 - kh) / sh + 1;
    let ow = (wd + 2 * pad.1 - kw) / sw + 1;
    let xd = values[x.0].data().to_vec();
    let wdat = values[w.0].data().to_vec();

    let need_x = requires[x.0];
    let need_w = requires[w.0];
    let mut dx = vec![0.0; if need_x { n * ci * h * wd } else { 0 }];
    let mut dw = vec![0.0; if need_w { co * ci * kh * kw } else { 0 }];

    for in_ in 0..n {
        for c_out in 0..co {
            for oy in 0..oh {
                let iy0 = (oy * sh) as isize - pad.0 as isize;
                for ox in 0..ow {
                    let gv = g[(((in_ * co) + c_out) * oh + oy) * ow + ox];
                    if gv == 0.0 {
                        continue;
                    }
                    let ix0 = (ox * sw) as isize - pad.1 as isize;
                    for c_in in 0..ci {
                        let x_base = ((in_ * ci) + c_in) * h * wd;
                        let w_base = ((c_out * ci) + c_in) * kh * kw;
                        for ky in 0..kh {
                            let iy = iy0 + ky as isize;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            let kx_lo = (-ix0).max(0) as usize;
                            let kx_hi = ((wd as isize - ix0).min(kw as isize)).max(0) as usize;
                            if kx_lo >= kx_hi {
                                continue;
                            }
                            let row_base = x_base + iy as usize * wd;
                            let ix_start = (ix0 + kx_lo as isize) as usize;
                            let span = kx_hi - kx_lo;
                            if need_x {
                                let w_row =
                                    &wdat[w_base + ky * kw + kx_lo..w_base + ky * kw + kx_hi];
                                let dx_row =
                                    &mut dx[row_base + ix_start..row_base + ix_start + span];
                                for (a, &wv) in dx_row.iter_mut().zip(w_row) {
                                    *a += gv * wv;
                                }
                            }
                            if need_w {
                                let x_row = &xd[row_base + ix_start..row_base + ix_start + span];
                                let dw_row =
                                    &mut dw[w_base + ky * kw + kx_lo..w_base + ky * kw + kx_hi];
                                for (a, &xv) in dw_row.iter_mut().zip(x_row) {
                                    *a += gv * xv;
                                }
                            }
                        }
                    }
                }
            }
        }
    }

    if need_x {
        let acc = accumulate(grads, x, dx.len());
        for (a, v) in acc.iter_mut().zip(dx) {
            *a += v;
        }
    }
    if need_w {
        let acc = accumulate(grads, w, dw.len());
        for (a, v) in acc.iter_mut().zip(dw) {
            *a += v;
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn bn_backward(
    rec: &Record,
    values: &[Tensor],
    requires: &[bool],
    grads: &mut [Option<Vec<f64>>],
    g: &[f64],
    xhat: &[f64],
    inv_std: &[f64],
    channels: usize,
    inner: usize,
    mode: BnMode,
) {
    let (x, gamma, beta) = (rec.inputs[0], rec.inputs[1], rec.inputs[2]);
    let n = values[x.0].shape()[0];
    let count = (n * inner) as f64;
    let gamma_v = values[gamma.0].data().to_vec();

    // dgamma, dbeta per channel
    let mut dgamma = vec![0.0; channels];
    let mut dbeta = vec![0.0; channels];
    for i in 0..n {
        for c in 0..channels {
            let base = (i * channels + c) * inner;
            for k in 0..inner {
                dgamma[c] += g[base + k] * xhat[base + k];
                dbeta[c] += g[base + k];
            }
        }
    }

    if requires[x.0] {
        let acc = accumulate(grads, x, values[x.0].len());
        match mode {
            BnMode::Train => {
                // dx = γ·istd·(g − mean(g) − xhat·mean(g·xhat)), means over batch
                for c in 0..channels {
                    let mean_g = dbeta[c] / count;
                    let mean_gx = dgamma[c] / count;
                    let coeff = gamma_v[c] * inv_std[c];
                    for i in 0..n {
                        let base = (i * channels + c) * inner;
                        for k in 0..inner {
                            acc[base + k] +=
                                coeff * (g[base + k] - mean_g - xhat[base + k] * mean_gx);
                        }
                    }
                }
            }
            BnMode::Eval => {
                for c in 0..channels {
                    let coeff = gamma_v[c] * inv_std[c];
                    for i in 0..n {
                        let base = (i * channels + c) * inner;
                        for k in 0..inner {
                            acc[base + k] += coeff * g[base + k];
                        }
                    }
                }
            }
        }
    }
    if requires[gamma.0] {
        let acc = accumulate(grads, gamma, channels);
        for (a, v) in acc.iter_mut().zip(dgamma) {
            *a += v;
        }
    }
    if requires[beta.0] {
        let acc = accumulate(grads, beta, channels);
        for (a, v) in acc.iter_mut().zip(dbeta) {
            *a += v;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::check::{finite_difference, grads_close, DEFAULT_FD_STEP};
    use rand::Rng;

    fn rand_tensor(shape: &[usize], rng: &mut impl Rng) -> Tensor {
        let n: usize = shape.iter().product();
        Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-1.5..1.5)).collect()).unwrap()
    }

    fn rng() -> rand_chacha::ChaCha8Rng {
        crate::rng::substream(0xA5A5, 0xFF, 0, 0)
    }

    /// Gradient-check a graph builder against central differences.
    fn gradcheck(
        build: impl Fn(&mut Tape, &[Var]) -> Var,
        inputs: &[Tensor],
    ) {
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone(), true)).collect();
        let loss = build(&mut tape, &vars);
        assert!(tape.value(loss).is_scalar(), "gradcheck loss must be scalar");
        tape.backward(loss).unwrap();

        let numeric = finite_difference(
            |xs: &[Tensor]| {
                let mut t = Tape::new();
                let vs: Vec<Var> = xs.iter().map(|x| t.leaf(x.clone(), false)).collect();
                let out = build(&mut t, &vs);
                t.value(out).item()
            },
            inputs,
            DEFAULT_FD_STEP,
        );
        for (v, num) in vars.iter().zip(&numeric) {
            let analytic = tape.grad(*v).expect("missing gradient");
            assert!(
                grads_close(analytic, num.data(), 1e-4, 1e-7),
                "gradient mismatch: analytic {:?} numeric {:?}",
                &analytic[..analytic.len().min(8)],
                &num.data()[..num.len().min(8)]
            );
        }
    }

    #[test]
    fn add_elementwise_example() {
        let mut t = Tape::new();
        let a = t.constant(Tensor::from_vec(vec![1.0, 2.0]));
        let b = t.constant(Tensor::from_vec(vec![3.0, 4.0]));
        let c = t.add(a, b).unwrap();
        assert_eq!(t.value(c).data(), &[4.0, 6.0]);
    }

    #[test]
    fn add_shape_mismatch_names_op() {
        let mut t = Tape::new();
        let a = t.constant(Tensor::from_vec(vec![1.0, 2.0]));
        let b = t.constant(Tensor::from_vec(vec![3.0]));
        match t.add(a, b) {
            Err(TensorError::ShapeMismatch { op, lhs, rhs }) => {
                assert_eq!(op, "add");
                assert_eq!(lhs, vec![2]);
                assert_eq!(rhs, vec![1]);
            }
            other => panic!("expected shape mismatch, got {other:?}"),
        }
    }

    #[test]
    fn l2_normalize_three_four_five() {
        let mut t = Tape::new();
        let x = t.constant(Tensor::from_vec(vec![3.0, 4.0]));
        let y = t.l2_normalize(x).unwrap();
        assert_eq!(t.value(y).data(), &[0.6, 0.8]);
    }

    #[test]
    fn l2_normalize_unit_norm_property() {
        let mut r = rng();
        for _ in 0..50 {
            let x = rand_tensor(&[7], &mut r);
            if x.data().iter().all(|&v| v == 0.0) {
                continue;
            }
            let mut t = Tape::new();
            let v = t.constant(x);
            let y = t.l2_normalize(v).unwrap();
            let norm: f64 = t.value(y).data().iter().map(|&a| a * a).sum::<f64>().sqrt();
            assert!((norm - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn l2_normalize_zero_vector_warns() {
        let mut t = Tape::new();
        let x = t.constant(Tensor::from_vec(vec![0.0, 0.0]));
        let y = t.l2_normalize(x).unwrap();
        assert_eq!(t.value(y).data(), &[0.0, 0.0]);
        assert!(!t.warnings().is_empty());
    }

    #[test]
    fn matmul_ones_example() {
        let mut t = Tape::new();
        let a = t.constant(Tensor::ones(&[2, 3]));
        let b = t.constant(Tensor::ones(&[3, 2]));
        let c = t.matmul(a, b).unwrap();
        assert_eq!(t.value(c).shape(), &[2, 2]);
        assert!(t.value(c).data().iter().all(|&v| v == 3.0));
    }

    #[test]
    fn sum_of_squares_gradient() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::from_vec(vec![1.0, 2.0, 3.0]), true);
        let sq = t.mul(x, x).unwrap();
        let loss = t.sum_all(sq);
        t.backward(loss).unwrap();
        assert_eq!(t.grad(x).unwrap(), &[2.0, 4.0, 6.0]);
    }

    #[test]
    fn backward_errors() {
        // constant loss: nothing recorded
        let mut t = Tape::new();
        let c = t.constant(Tensor::scalar(5.0));
        match t.backward(c) {
            Err(TensorError::EmptyTape) => {}
            other => panic!("expected EmptyTape, got {other:?}"),
        }

        // non-scalar loss
        let mut t = Tape::new();
        let x = t.leaf(Tensor::from_vec(vec![1.0, 2.0]), true);
        let y = t.mul(x, x).unwrap();
        match t.backward(y) {
            Err(TensorError::NonScalarLoss { .. }) => {}
            other => panic!("expected NonScalarLoss, got {other:?}"),
        }

        // double backward
        let mut t = Tape::new();
        let x = t.leaf(Tensor::from_vec(vec![1.0, 2.0]), true);
        let y = t.mul(x, x).unwrap();
        let loss = t.sum_all(y);
        t.backward(loss).unwrap();
        match t.backward(loss) {
            Err(TensorError::DoubleBackward) => {}
            other => panic!("expected DoubleBackward, got {other:?}"),
        }
    }

    #[test]
    fn stop_gradient_blocks_flow() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::from_vec(vec![1.0, 2.0]), true);
        let y = t.leaf(Tensor::from_vec(vec![3.0, 4.0]), true);
        let sx = t.stop_gradient(x);
        assert_eq!(t.value(sx).data(), t.value(x).data());
        let prod = t.mul(sx, y).unwrap();
        let loss = t.sum_all(prod);
        t.backward(loss).unwrap();
        assert!(t.grad(x).is_none());
        assert_eq!(t.grad(y).unwrap(), &[1.0, 2.0]);
    }

    #[test]
    fn record_order_and_clear() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::from_vec(vec![1.0, 2.0]), true);
        let a = t.relu(x);
        let b = t.exp(a);
        let loss = t.sum_all(b);
        assert_eq!(t.record_ops(), vec!["relu", "exp", "sum_all"]);
        t.backward(loss).unwrap();
        t.clear();
        assert_eq!(t.num_records(), 0);
        assert!(t.record_ops().is_empty());
    }

    #[test]
    fn constants_do_not_record() {
        let mut t = Tape::new();
        let a = t.constant(Tensor::from_vec(vec![1.0, 2.0]));
        let b = t.constant(Tensor::from_vec(vec![3.0, 4.0]));
        let _ = t.add(a, b).unwrap();
        assert_eq!(t.num_records(), 0);
    }

    #[test]
    fn batch_norm_train_example() {
        let mut t = Tape::new();
        let x = t.constant(Tensor::new(vec![2, 1], vec![1.0, 3.0]).unwrap());
        let gamma = t.constant(Tensor::from_vec(vec![1.0]));
        let beta = t.constant(Tensor::from_vec(vec![0.0]));
        let mut state = BatchNormState::new(1);
        let y = t
            .batch_norm(x, gamma, beta, &mut state, BnMode::Train)
            .unwrap();
        // mean 2, biased var 1, eps-adjusted
        let expected = 1.0 / (1.0f64 + BN_EPS).sqrt();
        assert!((t.value(y).data()[0] + expected).abs() < 1e-12);
        assert!((t.value(y).data()[1] - expected).abs() < 1e-12);
        // running stats moved toward batch stats
        assert!((state.running_mean[0] - 0.2).abs() < 1e-12);
        assert!((state.running_var[0] - (0.9 + 0.1)).abs() < 1e-12);
    }

    #[test]
    fn batch_norm_eval_identity_stats() {
        let mut t = Tape::new();
        let x = t.constant(Tensor::new(vec![2, 2], vec![0.3, -0.7, 1.1, 0.4]).unwrap());
        let gamma = t.constant(Tensor::from_vec(vec![1.0, 1.0]));
        let beta = t.constant(Tensor::from_vec(vec![0.0, 0.0]));
        let mut state = BatchNormState::new(2);
        let y = t
            .batch_norm(x, gamma, beta, &mut state, BnMode::Eval)
            .unwrap();
        for (a, b) in t.value(y).data().iter().zip([0.3, -0.7, 1.1, 0.4]) {
            assert!((a - b).abs() < 1e-5);
        }
    }

    #[test]
    fn batch_norm_zero_gamma_gives_beta() {
        let mut t = Tape::new();
        let x = t.constant(Tensor::new(vec![3, 1], vec![1.0, 2.0, 3.0]).unwrap());
        let gamma = t.constant(Tensor::from_vec(vec![0.0]));
        let beta = t.constant(Tensor::from_vec(vec![0.25]));
        let mut state = BatchNormState::new(1);
        let y = t
            .batch_norm(x, gamma, beta, &mut state, BnMode::Train)
            .unwrap();
        assert!(t.value(y).data().iter().all(|&v| v == 0.25));
    }

    #[test]
    fn batch_norm_degenerate_batch() {
        let mut t = Tape::new();
        let x = t.constant(Tensor::new(vec![1, 2], vec![1.0, 2.0]).unwrap());
        let gamma = t.constant(Tensor::from_vec(vec![1.0, 1.0]));
        let beta = t.constant(Tensor::from_vec(vec![0.0, 0.0]));
        let mut state = BatchNormState::new(2);
        match t.batch_norm(x, gamma, beta, &mut state, BnMode::Train) {
            Err(TensorError::DegenerateBatch { batch: 1 }) => {}
            other => panic!("expected DegenerateBatch, got {other:?}"),
        }
    }

    #[test]
    fn forward_is_bitwise_deterministic() {
        let mut r = rng();
        let x = rand_tensor(&[3, 4, 5, 6], &mut r);
        let w = rand_tensor(&[2, 4, 3, 3], &mut r);
        let run = || {
            let mut t = Tape::new();
            let xv = t.constant(x.clone());
            let wv = t.constant(w.clone());
            let c = t.conv2d(xv, wv, (2, 2), (1, 1)).unwrap();
            let m = t.spatial_mean(c).unwrap();
            let s = t.sum_all(m);
            t.value(s).item()
        };
        assert_eq!(run().to_bits(), run().to_bits());
    }

    // ---- per-primitive gradient checks against central differences ----

    #[test]
    fn grad_elementwise_ops() {
        let mut r = rng();
        let a = rand_tensor(&[2, 3], &mut r);
        let b = rand_tensor(&[2, 3], &mut r);
        gradcheck(|t, v| { let c = t.add(v[0], v[1]).unwrap(); t.sum_all(c) }, &[a.clone(), b.clone()]);
        gradcheck(|t, v| { let c = t.sub(v[0], v[1]).unwrap(); t.sum_all(c) }, &[a.clone(), b.clone()]);
        gradcheck(|t, v| { let c = t.mul(v[0], v[1]).unwrap(); t.mean_all(c) }, &[a.clone(), b.clone()]);
        // keep divisors away from zero
        let denom = Tensor::new(vec![2, 3], b.data().iter().map(|&v| v + 3.0).collect()).unwrap();
        gradcheck(|t, v| { let c = t.div(v[0], v[1]).unwrap(); t.sum_all(c) }, &[a, denom]);
    }

    #[test]
    fn grad_matmul_ops() {
        let mut r = rng();
        let a = rand_tensor(&[3, 4], &mut r);
        let b = rand_tensor(&[4, 2], &mut r);
        gradcheck(|t, v| { let c = t.matmul(v[0], v[1]).unwrap(); t.sum_all(c) }, &[a, b]);
        let a = rand_tensor(&[3, 4], &mut r);
        let b = rand_tensor(&[4, 2], &mut r);
        gradcheck(
            |t, v| { let c = t.matmul(v[0], v[1]).unwrap(); let e = t.exp(c); t.sum_all(e) },
            &[a, b],
        );
        let a = rand_tensor(&[3, 4], &mut r);
        let b = rand_tensor(&[5, 4], &mut r);
        gradcheck(
            |t, v| { let c = t.matmul_nt(v[0], v[1]).unwrap(); let e = t.mul(c, c).unwrap(); t.sum_all(e) },
            &[a, b],
        );
    }

    #[test]
    fn grad_bias_ops() {
        let mut r = rng();
        let x = rand_tensor(&[4, 3], &mut r);
        let b = rand_tensor(&[3], &mut r);
        gradcheck(|t, v| { let c = t.add_bias(v[0], v[1]).unwrap(); let e = t.exp(c); t.sum_all(e) }, &[x, b]);
        let x = rand_tensor(&[2, 3, 2, 2], &mut r);
        let b = rand_tensor(&[3], &mut r);
        gradcheck(
            |t, v| { let c = t.add_channel_bias(v[0], v[1]).unwrap(); let e = t.mul(c, c).unwrap(); t.sum_all(e) },
            &[x, b],
        );
    }

    #[test]
    fn grad_conv2d() {
        let mut r = rng();
        for (stride, pad) in [((1, 1), (0, 0)), ((2, 2), (1, 1)), ((1, 2), (1, 0))] {
            let x = rand_tensor(&[2, 3, 5, 6], &mut r);
            let w = rand_tensor(&[4, 3, 3, 3], &mut r);
            gradcheck(
                |t, v| { let c = t.conv2d(v[0], v[1], stride, pad).unwrap(); t.sum_all(c) },
                &[x, w],
            );
        }
    }

    #[test]
    fn grad_pooling() {
        let mut r = rng();
        let x = rand_tensor(&[2, 3, 5, 6], &mut r);
        gradcheck(|t, v| { let c = t.max_pool2d(v[0], (2, 2), (2, 2)).unwrap(); t.sum_all(c) }, &[x]);
        let x = rand_tensor(&[2, 3, 5, 6], &mut r);
        gradcheck(|t, v| { let c = t.avg_pool2d(v[0], (3, 2), (1, 2)).unwrap(); t.mean_all(c) }, &[x]);
        let x = rand_tensor(&[2, 2, 4, 3], &mut r);
        gradcheck(|t, v| { let c = t.spatial_mean(v[0]).unwrap(); let e = t.exp(c); t.sum_all(e) }, &[x]);
        let x = rand_tensor(&[2, 5, 3], &mut r);
        gradcheck(|t, v| { let c = t.temporal_max(v[0]).unwrap(); t.sum_all(c) }, &[x]);
    }

    #[test]
    fn grad_activations_and_pointwise() {
        let mut r = rng();
        // relu: keep entries away from the kink at 0
        let x = Tensor::new(vec![6], vec![-1.2, -0.4, 0.3, 0.9, 1.7, -2.0]).unwrap();
        gradcheck(|t, v| { let c = t.relu(v[0]); t.sum_all(c) }, &[x]);
        let x = Tensor::new(
            vec![5],
            (0..5).map(|_| r.gen_range(0.2..2.0)).collect(),
        )
        .unwrap();
        gradcheck(|t, v| { let c = t.log(v[0]); t.sum_all(c) }, &[x]);
        let x = rand_tensor(&[5], &mut r);
        gradcheck(|t, v| { let c = t.exp(v[0]); t.sum_all(c) }, &[x]);
        let x = rand_tensor(&[3], &mut r);
        gradcheck(|t, v| t.scale(v[0], -2.5), &[Tensor::scalar(1.3)]);
        let _ = x;
    }

    #[test]
    fn grad_softmax_and_lse() {
        let mut r = rng();
        let x = rand_tensor(&[3, 4], &mut r);
        let w = rand_tensor(&[3, 4], &mut r);
        gradcheck(
            |t, v| {
                let s = t.softmax_rows(v[0]).unwrap();
                let p = t.mul(s, v[1]).unwrap();
                t.sum_all(p)
            },
            &[x, w],
        );
        let x = rand_tensor(&[3, 4], &mut r);
        let mut mask = Tensor::ones(&[3, 4]);
        mask.data_mut()[0] = 0.0;
        mask.data_mut()[5] = 0.0;
        gradcheck(
            |t, v| {
                let l = t.log_sum_exp_rows_masked(v[0], &mask).unwrap();
                t.sum_all(l)
            },
            &[x],
        );
    }

    #[test]
    fn grad_reductions_shapes_concat() {
        let mut r = rng();
        let x = rand_tensor(&[3, 4], &mut r);
        gradcheck(|t, v| { let c = t.row_sum(v[0]).unwrap(); let e = t.exp(c); t.sum_all(e) }, &[x]);
        let x = rand_tensor(&[2, 6], &mut r);
        gradcheck(
            |t, v| { let c = t.reshape(v[0], &[3, 4]).unwrap(); let e = t.mul(c, c).unwrap(); t.mean_all(e) },
            &[x],
        );
        let a = rand_tensor(&[2, 3], &mut r);
        let b = rand_tensor(&[2, 2], &mut r);
        gradcheck(
            |t, v| {
                let c = t.concat(1, &[v[0], v[1]]).unwrap();
                let e = t.exp(c);
                t.sum_all(e)
            },
            &[a, b],
        );
        let a = rand_tensor(&[2, 3], &mut r);
        let b = rand_tensor(&[4, 3], &mut r);
        gradcheck(
            |t, v| {
                let c = t.concat(0, &[v[0], v[1]]).unwrap();
                let e = t.mul(c, c).unwrap();
                t.sum_all(e)
            },
            &[a, b],
        );
    }

    #[test]
    fn grad_l2_normalize() {
        let mut r = rng();
        let x = Tensor::new(vec![5], (0..5).map(|_| r.gen_range(0.3..1.5)).collect()).unwrap();
        let w = rand_tensor(&[5], &mut r);
        gradcheck(
            |t, v| {
                let n = t.l2_normalize(v[0]).unwrap();
                let p = t.mul(n, v[1]).unwrap();
                t.sum_all(p)
            },
            &[x, w],
        );
        let x = rand_tensor(&[3, 4], &mut r);
        let w = rand_tensor(&[3, 4], &mut r);
        gradcheck(
            |t, v| {
                let n = t.l2_normalize_rows(v[0]).unwrap();
                let p = t.mul(n, v[1]).unwrap();
                t.sum_all(p)
            },
            &[x, w],
        );
    }

    #[test]
    fn grad_batch_norm_train_and_eval() {
        let mut r = rng();
        for mode in [BnMode::Train, BnMode::Eval] {
            let x = rand_tensor(&[4, 3], &mut r);
            let gamma = Tensor::new(vec![3], vec![1.1, 0.9, 1.3]).unwrap();
            let beta = Tensor::new(vec![3], vec![0.1, -0.2, 0.05]).unwrap();
            gradcheck(
                |t, v| {
                    let mut state = BatchNormState {
                        running_mean: vec![0.1, -0.3, 0.2],
                        running_var: vec![1.2, 0.8, 1.0],
                    };
                    let y = t.batch_norm(v[0], v[1], v[2], &mut state, mode).unwrap();
                    let e = t.mul(y, y).unwrap();
                    t.sum_all(e)
                },
                &[x, gamma, beta],
            );
        }
        // 4-D per-channel path
        let mut r = rng();
        let x = rand_tensor(&[3, 2, 2, 2], &mut r);
        let gamma = Tensor::new(vec![2], vec![1.2, 0.7]).unwrap();
        let beta = Tensor::new(vec![2], vec![0.0, 0.3]).unwrap();
        gradcheck(
            |t, v| {
                let mut state = BatchNormState::new(2);
                let y = t
                    .batch_norm(v[0], v[1], v[2], &mut state, BnMode::Train)
                    .unwrap();
                let e = t.exp(y);
                t.mean_all(e)
            },
            &[x, gamma, beta],
        );
    }

    #[test]
    fn grad_composite_graph() {
        // a little encoder-shaped graph exercising chained records
        let mut r = rng();
        let x = rand_tensor(&[2, 2, 4, 4], &mut r);
        let w = rand_tensor(&[3, 2, 3, 3], &mut r);
        let p = rand_tensor(&[3, 4], &mut r);
        gradcheck(
            |t, v| {
                let c = t.conv2d(v[0], v[1], (1, 1), (1, 1)).unwrap();
                let a = t.relu(c);
                let m = t.spatial_mean(a).unwrap();
                let h = t.matmul(m, v[2]).unwrap();
                let n = t.l2_normalize_rows(h).unwrap();
                let s = t.mul(n, n).unwrap();
                t.mean_all(s)
            },
            &[x, w, p],
        );
    }
}
