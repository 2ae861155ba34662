//! Minimal reverse-mode automatic differentiation on flat tensors.
//!
//! A [`Tape`] records every primitive applied during a forward pass in
//! topological order. [`Tape::backward`] replays the record once, in
//! reverse, accumulating vector-Jacobian products into the leaves that
//! were created with `requires_grad`. Gradients over fan-out are additive.
//!
//! The op set is deliberately small and auditable: elementwise math,
//! matmul, 2-D (de)convolution, softmax, standardization, slicing,
//! concatenation and reductions. There is no broadcasting beyond the
//! per-channel bias/gain pattern and scalar-times-tensor; any other
//! shape mismatch panics at the call site.
//!
//! Every rule here is covered by a central-difference oracle in the
//! test suite (see [`check::finite_difference_check`]).

mod conv;
pub mod check;

pub use check::finite_difference_check;
pub use conv::{Conv2dSpec, ConvT2dSpec};

use std::sync::Arc;

use thiserror::Error;

use crate::num::{magnitude_floor, Real};

/// Handle to a tensor recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TensorId(pub(crate) usize);

#[derive(Debug, Error)]
pub enum AutodiffError {
    #[error("loss must be a scalar, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("tensor id {0} does not belong to this tape")]
    DanglingTensor(usize),
    #[error("finite-difference step {0} outside [1e-7, 1e-3]")]
    BadEpsilon(f64),
    #[error("function under test must return a scalar, got shape {0:?}")]
    NonScalarFunction(Vec<usize>),
}

/// Hand-written forward/backward pair registered on the tape as a single
/// node. Used for structured linear maps (e.g. windowed overlap-add
/// synthesis) whose adjoint is cheaper to state directly than to compose
/// from primitives.
pub trait CustomOp<R: Real>: Send + Sync {
    fn name(&self) -> &'static str;

    /// Accumulate the vector-Jacobian product into `grad_inputs[i]`
    /// (already zero-filled at the input's size).
    fn backward(
        &self,
        grad_out: &[R],
        inputs: &[(&[usize], &[R])],
        out_value: &[R],
        grad_inputs: &mut [Vec<R>],
    );
}

/// One recorded tensor: value, shape, and the primitive that produced it.
pub struct DiffTensor<R: Real> {
    pub shape: Vec<usize>,
    pub values: Vec<R>,
    pub requires_grad: bool,
    pub grad: Option<Vec<R>>,
    op: Op<R>,
    /// True when any `requires_grad` leaf is reachable below this node.
    needs_grad: bool,
}

impl<R: Real> DiffTensor<R> {
    pub fn numel(&self) -> usize {
        self.values.len()
    }
}

#[derive(Clone)]
enum Op<R: Real> {
    Leaf,
    Add(TensorId, TensorId),
    Sub(TensorId, TensorId),
    Mul(TensorId, TensorId),
    Neg(TensorId),
    Scale(TensorId, R),
    AddConst(TensorId, R),
    MulScalar { a: TensorId, s: TensorId },
    Recip(TensorId),
    Sqrt(TensorId),
    Exp(TensorId),
    Ln(TensorId),
    Abs(TensorId),
    Sigmoid(TensorId),
    Tanh(TensorId),
    Elu(TensorId),
    Cos(TensorId),
    Sin(TensorId),
    Atan2 { y: TensorId, x: TensorId },
    Clamp { a: TensorId, lo: R, hi: R },
    Matmul { a: TensorId, b: TensorId, m: usize, k: usize, n: usize },
    Transpose2d { a: TensorId, rows: usize, cols: usize },
    SoftmaxRows { a: TensorId, rows: usize, cols: usize },
    NormRows { a: TensorId, rows: usize, cols: usize, inv_std: Vec<R> },
    NormChannels { a: TensorId, channels: usize, inv_std: Vec<R> },
    AddBias { a: TensorId, bias: TensorId },
    MulChannels { a: TensorId, gamma: TensorId },
    Sum(TensorId),
    Mean(TensorId),
    SliceAxis { a: TensorId, axis: usize, from: usize, to: usize },
    ConcatAxis { parts: Vec<TensorId>, axis: usize },
    Reshape(TensorId),
    SwapTF { a: TensorId, t: usize, f: usize, c: usize },
    Conv2d { x: TensorId, w: TensorId, spec: Conv2dSpec, in_size: (usize, usize) },
    ConvT2d { x: TensorId, w: TensorId, spec: ConvT2dSpec, in_size: (usize, usize) },
    Custom { op: Arc<dyn CustomOp<R>>, inputs: Vec<TensorId> },
}

/// Record of one forward pass. Confined to a single session; create a
/// fresh tape per training step.
pub struct Tape<R: Real> {
    nodes: Vec<DiffTensor<R>>,
}

impl<R: Real> Default for Tape<R> {
    fn default() -> Self {
        Self::new()
    }
}

fn product(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl<R: Real> Tape<R> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Register an input tensor. `requires_grad` leaves receive gradients
    /// from [`Tape::backward`].
    pub fn leaf(&mut self, values: Vec<R>, shape: &[usize], requires_grad: bool) -> TensorId {
        assert_eq!(
            product(shape),
            values.len(),
            "leaf shape {:?} does not match {} values",
            shape,
            values.len()
        );
        assert!(shape.iter().all(|&d| d > 0), "zero-sized dimension in {shape:?}");
        self.push(values, shape.to_vec(), requires_grad, Op::Leaf, requires_grad)
    }

    /// Non-differentiable input (targets, precomputed features).
    pub fn constant(&mut self, values: Vec<R>, shape: &[usize]) -> TensorId {
        self.leaf(values, shape, false)
    }

    pub fn scalar(&mut self, v: R) -> TensorId {
        self.leaf(vec![v], &[1], false)
    }

    pub fn value(&self, id: TensorId) -> &[R] {
        &self.nodes[id.0].values
    }

    pub fn shape(&self, id: TensorId) -> &[usize] {
        &self.nodes[id.0].shape
    }

    pub fn numel(&self, id: TensorId) -> usize {
        self.nodes[id.0].values.len()
    }

    /// Gradient for a `requires_grad` leaf, available after `backward`.
    pub fn grad(&self, id: TensorId) -> Option<&[R]> {
        self.nodes[id.0].grad.as_deref()
    }

    fn push(
        &mut self,
        values: Vec<R>,
        shape: Vec<usize>,
        requires_grad: bool,
        op: Op<R>,
        needs_grad: bool,
    ) -> TensorId {
        #[cfg(debug_assertions)]
        {
            if !matches!(op, Op::Leaf) {
                for (i, v) in values.iter().enumerate() {
                    assert!(
                        v.is_finite(),
                        "non-finite value {v:?} at element {i} produced by {}",
                        op_name(&op)
                    );
                }
            }
        }
        let id = TensorId(self.nodes.len());
        self.nodes.push(DiffTensor { shape, values, requires_grad, grad: None, op, needs_grad });
        id
    }

    fn needs(&self, id: TensorId) -> bool {
        self.nodes[id.0].needs_grad
    }

    fn unary(&mut self, a: TensorId, values: Vec<R>, op: Op<R>) -> TensorId {
        let shape = self.nodes[a.0].shape.clone();
        let needs = self.needs(a);
        self.push(values, shape, false, op, needs)
    }

    // ── elementwise ──────────────────────────────────────────────────

    pub fn add(&mut self, a: TensorId, b: TensorId) -> TensorId {
        self.zip_same_shape("add", a, b);
        let values =
            self.value(a).iter().zip(self.value(b)).map(|(&x, &y)| x + y).collect();
        let needs = self.needs(a) || self.needs(b);
        let shape = self.nodes[a.0].shape.clone();
        self.push(values, shape, false, Op::Add(a, b), needs)
    }

    pub fn sub(&mut self, a: TensorId, b: TensorId) -> TensorId {
        self.zip_same_shape("sub", a, b);
        let values =
            self.value(a).iter().zip(self.value(b)).map(|(&x, &y)| x - y).collect();
        let needs = self.needs(a) || self.needs(b);
        let shape = self.nodes[a.0].shape.clone();
        self.push(values, shape, false, Op::Sub(a, b), needs)
    }

    pub fn mul(&mut self, a: TensorId, b: TensorId) -> TensorId {
        self.zip_same_shape("mul", a, b);
        let values =
            self.value(a).iter().zip(self.value(b)).map(|(&x, &y)| x * y).collect();
        let needs = self.needs(a) || self.needs(b);
        let shape = self.nodes[a.0].shape.clone();
        self.push(values, shape, false, Op::Mul(a, b), needs)
    }

    pub fn square(&mut self, a: TensorId) -> TensorId {
        self.mul(a, a)
    }

    pub fn neg(&mut self, a: TensorId) -> TensorId {
        let values = self.value(a).iter().map(|&x| -x).collect();
        self.unary(a, values, Op::Neg(a))
    }

    pub fn scale(&mut self, a: TensorId, c: R) -> TensorId {
        let values = self.value(a).iter().map(|&x| c * x).collect();
        self.unary(a, values, Op::Scale(a, c))
    }

    pub fn add_const(&mut self, a: TensorId, c: R) -> TensorId {
        let values = self.value(a).iter().map(|&x| x + c).collect();
        self.unary(a, values, Op::AddConst(a, c))
    }

    /// Scalar `[1]` tensor times arbitrary tensor.
    pub fn mul_scalar(&mut self, a: TensorId, s: TensorId) -> TensorId {
        assert_eq!(self.numel(s), 1, "mul_scalar: scale operand must be a scalar");
        let sv = self.value(s)[0];
        let values = self.value(a).iter().map(|&x| sv * x).collect();
        let needs = self.needs(a) || self.needs(s);
        let shape = self.nodes[a.0].shape.clone();
        self.push(values, shape, false, Op::MulScalar { a, s }, needs)
    }

    pub fn recip(&mut self, a: TensorId) -> TensorId {
        let values = self.value(a).iter().map(|&x| x.recip()).collect();
        self.unary(a, values, Op::Recip(a))
    }

    /// Square root with the silent-bin rule: the derivative is taken as 0
    /// where the output magnitude is below 1e-12.
    pub fn sqrt(&mut self, a: TensorId) -> TensorId {
        let values = self.value(a).iter().map(|&x| x.sqrt()).collect();
        self.unary(a, values, Op::Sqrt(a))
    }

    pub fn exp(&mut self, a: TensorId) -> TensorId {
        let values = self.value(a).iter().map(|&x| x.exp()).collect();
        self.unary(a, values, Op::Exp(a))
    }

    pub fn ln(&mut self, a: TensorId) -> TensorId {
        let values = self.value(a).iter().map(|&x| x.ln()).collect();
        self.unary(a, values, Op::Ln(a))
    }

    pub fn abs(&mut self, a: TensorId) -> TensorId {
        let values = self.value(a).iter().map(|&x| x.abs()).collect();
        self.unary(a, values, Op::Abs(a))
    }

    pub fn sigmoid(&mut self, a: TensorId) -> TensorId {
        let values = self.value(a).iter().map(|&x| sigmoid(x)).collect();
        self.unary(a, values, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: TensorId) -> TensorId {
        let values = self.value(a).iter().map(|&x| x.tanh()).collect();
        self.unary(a, values, Op::Tanh(a))
    }

    pub fn elu(&mut self, a: TensorId) -> TensorId {
        let one = R::one();
        let values = self
            .value(a)
            .iter()
            .map(|&x| if x > R::zero() { x } else { x.exp() - one })
            .collect();
        self.unary(a, values, Op::Elu(a))
    }

    pub fn cos(&mut self, a: TensorId) -> TensorId {
        let values = self.value(a).iter().map(|&x| x.cos()).collect();
        self.unary(a, values, Op::Cos(a))
    }

    pub fn sin(&mut self, a: TensorId) -> TensorId {
        let values = self.value(a).iter().map(|&x| x.sin()).collect();
        self.unary(a, values, Op::Sin(a))
    }

    /// Four-quadrant angle of the pair `(x, y)` read as `x + j·y`, i.e.
    /// `atan2(y, x)` elementwise. Gradient is 0 where the magnitude is
    /// below 1e-12 (silent bins).
    pub fn atan2(&mut self, y: TensorId, x: TensorId) -> TensorId {
        self.zip_same_shape("atan2", y, x);
        let values = self
            .value(y)
            .iter()
            .zip(self.value(x))
            .map(|(&yy, &xx)| yy.atan2(xx))
            .collect();
        let needs = self.needs(y) || self.needs(x);
        let shape = self.nodes[y.0].shape.clone();
        self.push(values, shape, false, Op::Atan2 { y, x }, needs)
    }

    pub fn clamp(&mut self, a: TensorId, lo: R, hi: R) -> TensorId {
        let values = self
            .value(a)
            .iter()
            .map(|&x| if x < lo { lo } else if x > hi { hi } else { x })
            .collect();
        self.unary(a, values, Op::Clamp { a, lo, hi })
    }

    // ── linear algebra ───────────────────────────────────────────────

    pub fn matmul(&mut self, a: TensorId, b: TensorId) -> TensorId {
        let (sa, sb) = (self.shape(a), self.shape(b));
        assert!(sa.len() == 2 && sb.len() == 2, "matmul expects 2-D operands");
        let (m, k) = (sa[0], sa[1]);
        let (k2, n) = (sb[0], sb[1]);
        assert_eq!(k, k2, "matmul inner dims {k} vs {k2}");
        let mut out = vec![R::zero(); m * n];
        matmul_into(self.value(a), self.value(b), &mut out, m, k, n);
        let needs = self.needs(a) || self.needs(b);
        self.push(out, vec![m, n], false, Op::Matmul { a, b, m, k, n }, needs)
    }

    pub fn transpose2d(&mut self, a: TensorId) -> TensorId {
        let s = self.shape(a);
        assert_eq!(s.len(), 2, "transpose2d expects a 2-D tensor");
        let (rows, cols) = (s[0], s[1]);
        let x = self.value(a);
        let mut out = vec![R::zero(); rows * cols];
        for r in 0..rows {
            for c in 0..cols {
                out[c * rows + r] = x[r * cols + c];
            }
        }
        let needs = self.needs(a);
        self.push(out, vec![cols, rows], false, Op::Transpose2d { a, rows, cols }, needs)
    }

    /// Row-wise softmax of a 2-D tensor; every output row sums to 1.
    pub fn softmax_rows(&mut self, a: TensorId) -> TensorId {
        let s = self.shape(a);
        assert_eq!(s.len(), 2, "softmax_rows expects a 2-D tensor");
        let (rows, cols) = (s[0], s[1]);
        let x = self.value(a);
        let mut out = vec![R::zero(); rows * cols];
        for r in 0..rows {
            let row = &x[r * cols..(r + 1) * cols];
            let max = row.iter().cloned().fold(R::neg_infinity(), R::max);
            let mut sum = R::zero();
            for c in 0..cols {
                let e = (row[c] - max).exp();
                out[r * cols + c] = e;
                sum += e;
            }
            for c in 0..cols {
                out[r * cols + c] /= sum;
            }
        }
        let needs = self.needs(a);
        self.push(out, vec![rows, cols], false, Op::SoftmaxRows { a, rows, cols }, needs)
    }

    /// Standardize each row of a 2-D tensor to zero mean and unit
    /// variance (biased variance, `eps` inside the square root).
    pub fn norm_rows(&mut self, a: TensorId, eps: R) -> TensorId {
        let s = self.shape(a);
        assert_eq!(s.len(), 2, "norm_rows expects a 2-D tensor");
        let (rows, cols) = (s[0], s[1]);
        let x = self.value(a);
        let n = R::of(cols as f64);
        let mut out = vec![R::zero(); rows * cols];
        let mut inv_std = vec![R::zero(); rows];
        for r in 0..rows {
            let row = &x[r * cols..(r + 1) * cols];
            let mean = row.iter().cloned().sum::<R>() / n;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<R>() / n;
            let is = (var + eps).sqrt().recip();
            inv_std[r] = is;
            for c in 0..cols {
                out[r * cols + c] = (row[c] - mean) * is;
            }
        }
        let needs = self.needs(a);
        self.push(out, vec![rows, cols], false, Op::NormRows { a, rows, cols, inv_std }, needs)
    }

    /// Standardize per channel (last axis) over all leading positions.
    /// Returns the standardized tensor; the batch statistics used are
    /// recoverable from the input values by the caller.
    pub fn norm_channels(&mut self, a: TensorId, eps: R) -> TensorId {
        let shape = self.shape(a).to_vec();
        let channels = *shape.last().expect("norm_channels needs >= 1 axis");
        let rows = product(&shape) / channels;
        assert!(rows > 0);
        let x = self.value(a);
        let n = R::of(rows as f64);
        let mut mean = vec![R::zero(); channels];
        for r in 0..rows {
            for c in 0..channels {
                mean[c] += x[r * channels + c];
            }
        }
        for m in mean.iter_mut() {
            *m /= n;
        }
        let mut var = vec![R::zero(); channels];
        for r in 0..rows {
            for c in 0..channels {
                let d = x[r * channels + c] - mean[c];
                var[c] += d * d;
            }
        }
        let mut inv_std = vec![R::zero(); channels];
        for c in 0..channels {
            inv_std[c] = (var[c] / n + eps).sqrt().recip();
        }
        let mut out = vec![R::zero(); rows * channels];
        for r in 0..rows {
            for c in 0..channels {
                out[r * channels + c] = (x[r * channels + c] - mean[c]) * inv_std[c];
            }
        }
        let needs = self.needs(a);
        self.push(out, shape, false, Op::NormChannels { a, channels, inv_std }, needs)
    }

    /// Per-channel batch statistics of a tensor, `(mean, var)` over all
    /// leading positions. Plain values, not recorded on the tape.
    pub fn channel_stats(&self, a: TensorId) -> (Vec<R>, Vec<R>) {
        let shape = self.shape(a);
        let channels = *shape.last().expect("channel_stats needs >= 1 axis");
        let rows = product(shape) / channels;
        let x = self.value(a);
        let n = R::of(rows as f64);
        let mut mean = vec![R::zero(); channels];
        for r in 0..rows {
            for c in 0..channels {
                mean[c] += x[r * channels + c];
            }
        }
        for m in mean.iter_mut() {
            *m /= n;
        }
        let mut var = vec![R::zero(); channels];
        for r in 0..rows {
            for c in 0..channels {
                let d = x[r * channels + c] - mean[c];
                var[c] += d * d;
            }
        }
        for v in var.iter_mut() {
            *v /= n;
        }
        (mean, var)
    }

    /// `y[..., c] = x[..., c] + bias[c]` (the one blessed broadcast).
    pub fn add_bias(&mut self, a: TensorId, bias: TensorId) -> TensorId {
        let shape = self.shape(a).to_vec();
        let channels = *shape.last().unwrap();
        assert_eq!(self.shape(bias), &[channels], "add_bias: bias must be [{channels}]");
        let x = self.value(a);
        let b = self.value(bias);
        let mut out = vec![R::zero(); x.len()];
        for (r, chunk) in x.chunks_exact(channels).enumerate() {
            for c in 0..channels {
                out[r * channels + c] = chunk[c] + b[c];
            }
        }
        let needs = self.needs(a) || self.needs(bias);
        self.push(out, shape, false, Op::AddBias { a, bias }, needs)
    }

    /// `y[..., c] = x[..., c] * gamma[c]`.
    pub fn mul_channels(&mut self, a: TensorId, gamma: TensorId) -> TensorId {
        let shape = self.shape(a).to_vec();
        let channels = *shape.last().unwrap();
        assert_eq!(self.shape(gamma), &[channels], "mul_channels: gain must be [{channels}]");
        let x = self.value(a);
        let g = self.value(gamma);
        let mut out = vec![R::zero(); x.len()];
        for (r, chunk) in x.chunks_exact(channels).enumerate() {
            for c in 0..channels {
                out[r * channels + c] = chunk[c] * g[c];
            }
        }
        let needs = self.needs(a) || self.needs(gamma);
        self.push(out, shape, false, Op::MulChannels { a, gamma }, needs)
    }

    // ── reductions ───────────────────────────────────────────────────

    pub fn sum(&mut self, a: TensorId) -> TensorId {
        let total = self.value(a).iter().cloned().sum::<R>();
        let needs = self.needs(a);
        self.push(vec![total], vec![1], false, Op::Sum(a), needs)
    }

    pub fn mean(&mut self, a: TensorId) -> TensorId {
        let n = R::of(self.numel(a) as f64);
        let total = self.value(a).iter().cloned().sum::<R>() / n;
        let needs = self.needs(a);
        self.push(vec![total], vec![1], false, Op::Mean(a), needs)
    }

    pub fn dot(&mut self, a: TensorId, b: TensorId) -> TensorId {
        let p = self.mul(a, b);
        self.sum(p)
    }

    // ── shape ops ────────────────────────────────────────────────────

    pub fn reshape(&mut self, a: TensorId, new_shape: &[usize]) -> TensorId {
        assert_eq!(
            product(new_shape),
            self.numel(a),
            "reshape {:?} -> {:?} changes element count",
            self.shape(a),
            new_shape
        );
        let values = self.value(a).to_vec();
        let needs = self.needs(a);
        self.push(values, new_shape.to_vec(), false, Op::Reshape(a), needs)
    }

    /// Slice `[from, to)` along `axis`, keeping all other axes.
    pub fn slice_axis(&mut self, a: TensorId, axis: usize, from: usize, to: usize) -> TensorId {
        let shape = self.shape(a).to_vec();
        assert!(axis < shape.len(), "slice_axis: axis {axis} out of rank {}", shape.len());
        assert!(from < to && to <= shape[axis], "slice_axis: bad range {from}..{to} on {shape:?}");
        let outer: usize = shape[..axis].iter().product();
        let inner: usize = shape[axis + 1..].iter().product();
        let len = shape[axis];
        let x = self.value(a);
        let mut out = Vec::with_capacity(outer * (to - from) * inner);
        for o in 0..outer {
            let base = o * len * inner;
            out.extend_from_slice(&x[base + from * inner..base + to * inner]);
        }
        let mut new_shape = shape;
        new_shape[axis] = to - from;
        let needs = self.needs(a);
        self.push(out, new_shape, false, Op::SliceAxis { a, axis, from, to }, needs)
    }

    /// Concatenate along `axis`; all other axes must agree.
    pub fn concat_axis(&mut self, parts: &[TensorId], axis: usize) -> TensorId {
        assert!(!parts.is_empty(), "concat_axis: no parts");
        let first = self.shape(parts[0]).to_vec();
        assert!(axis < first.len());
        let mut total_axis = 0usize;
        for &p in parts {
            let s = self.shape(p);
            assert_eq!(s.len(), first.len(), "concat_axis: rank mismatch");
            for (d, (&a_, &b_)) in s.iter().zip(&first).enumerate() {
                if d != axis {
                    assert_eq!(a_, b_, "concat_axis: shape mismatch off-axis");
                }
            }
            total_axis += s[axis];
        }
        let outer: usize = first[..axis].iter().product();
        let inner: usize = first[axis + 1..].iter().product();
        let mut out = vec![R::zero(); outer * total_axis * inner];
        let mut offset = 0usize;
        for &p in parts {
            let alen = self.shape(p)[axis];
            let x = self.value(p);
            for o in 0..outer {
                let src = o * alen * inner;
                let dst = (o * total_axis + offset) * inner;
                out[dst..dst + alen * inner].copy_from_slice(&x[src..src + alen * inner]);
            }
            offset += alen;
        }
        let mut new_shape = first;
        new_shape[axis] = total_axis;
        let needs = parts.iter().any(|&p| self.needs(p));
        self.push(out, new_shape, false, Op::ConcatAxis { parts: parts.to_vec(), axis }, needs)
    }

    /// `[T, F, C] -> [F, T, C]`, used to lay the frequency axis out as a
    /// sequence for attention.
    pub fn swap_tf(&mut self, a: TensorId) -> TensorId {
        let s = self.shape(a);
        assert_eq!(s.len(), 3, "swap_tf expects [T, F, C]");
        let (t, f, c) = (s[0], s[1], s[2]);
        let x = self.value(a);
        let mut out = vec![R::zero(); t * f * c];
        for ti in 0..t {
            for fi in 0..f {
                let src = (ti * f + fi) * c;
                let dst = (fi * t + ti) * c;
                out[dst..dst + c].copy_from_slice(&x[src..src + c]);
            }
        }
        let needs = self.needs(a);
        self.push(out, vec![f, t, c], false, Op::SwapTF { a, t, f, c }, needs)
    }

    // ── convolution ──────────────────────────────────────────────────

    /// 2-D cross-correlation over a `[T, F, Cin]` map with weight layout
    /// `[Cout, kt, kf, Cin]`; bias is applied separately via `add_bias`.
    pub fn conv2d(&mut self, x: TensorId, w: TensorId, spec: &Conv2dSpec) -> TensorId {
        let xs = self.shape(x);
        assert_eq!(xs.len(), 3, "conv2d input must be [T, F, C]");
        let in_size = (xs[0], xs[1]);
        assert_eq!(xs[2], spec.in_channels, "conv2d: input channels");
        assert_eq!(
            self.shape(w),
            &[spec.out_channels, spec.kernel.0, spec.kernel.1, spec.in_channels],
            "conv2d: weight shape"
        );
        let (ot, of) = spec.out_size(in_size).expect("conv2d: invalid geometry");
        let mut out = vec![R::zero(); ot * of * spec.out_channels];
        conv::conv2d_forward(self.value(x), self.value(w), &mut out, spec, in_size, (ot, of));
        let needs = self.needs(x) || self.needs(w);
        self.push(
            out,
            vec![ot, of, spec.out_channels],
            false,
            Op::Conv2d { x, w, spec: spec.clone(), in_size },
            needs,
        )
    }

    /// Transposed 2-D convolution (exact shape inverse of a matching
    /// forward conv); weight layout `[Cout, kt, kf, Cin]`.
    pub fn conv_t2d(&mut self, x: TensorId, w: TensorId, spec: &ConvT2dSpec) -> TensorId {
        let xs = self.shape(x);
        assert_eq!(xs.len(), 3, "conv_t2d input must be [T, F, C]");
        let in_size = (xs[0], xs[1]);
        assert_eq!(xs[2], spec.in_channels, "conv_t2d: input channels");
        assert_eq!(
            self.shape(w),
            &[spec.out_channels, spec.kernel.0, spec.kernel.1, spec.in_channels],
            "conv_t2d: weight shape"
        );
        let (ot, of) = spec.out_size(in_size).expect("conv_t2d: invalid geometry");
        let mut out = vec![R::zero(); ot * of * spec.out_channels];
        conv::conv_t2d_forward(self.value(x), self.value(w), &mut out, spec, in_size, (ot, of));
        let needs = self.needs(x) || self.needs(w);
        self.push(
            out,
            vec![ot, of, spec.out_channels],
            false,
            Op::ConvT2d { x, w, spec: spec.clone(), in_size },
            needs,
        )
    }

    // ── custom ───────────────────────────────────────────────────────

    /// Register a hand-written op. The caller computes the forward value;
    /// `op.backward` supplies the exact adjoint.
    pub fn custom(
        &mut self,
        op: Arc<dyn CustomOp<R>>,
        inputs: &[TensorId],
        out_values: Vec<R>,
        out_shape: &[usize],
    ) -> TensorId {
        assert_eq!(product(out_shape), out_values.len(), "custom: shape/value mismatch");
        let needs = inputs.iter().any(|&i| self.needs(i));
        self.push(
            out_values,
            out_shape.to_vec(),
            false,
            Op::Custom { op, inputs: inputs.to_vec() },
            needs,
        )
    }

    // ── backward ─────────────────────────────────────────────────────

    /// Reverse sweep from a scalar loss. Populates `grad` on every
    /// `requires_grad` leaf (zeros where no gradient flowed).
    pub fn backward(&mut self, loss: TensorId) -> Result<(), AutodiffError> {
        if loss.0 >= self.nodes.len() {
            return Err(AutodiffError::DanglingTensor(loss.0));
        }
        if self.nodes[loss.0].numel() != 1 {
            return Err(AutodiffError::NonScalarLoss(self.nodes[loss.0].shape.clone()));
        }
        let n = self.nodes.len();
        let mut grads: Vec<Option<Vec<R>>> = vec![None; n];
        grads[loss.0] = Some(vec![R::one()]);

        for i in (0..n).rev() {
            if !self.nodes[i].needs_grad {
                grads[i] = None;
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            let op = self.nodes[i].op.clone();
            self.backward_op(i, &op, &g, &mut grads);
            if self.nodes[i].requires_grad {
                grads[i] = Some(g);
            }
        }

        for i in 0..n {
            if self.nodes[i].requires_grad {
                let g = grads[i].take().unwrap_or_else(|| vec![R::zero(); self.nodes[i].numel()]);
                self.nodes[i].grad = Some(g);
            }
        }
        Ok(())
    }

    fn backward_op(&self, out: usize, op: &Op<R>, g: &[R], grads: &mut [Option<Vec<R>>]) {
        match op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.accum(grads, *a, |d| d.iter_mut().zip(g).for_each(|(x, &gg)| *x += gg));
                self.accum(grads, *b, |d| d.iter_mut().zip(g).for_each(|(x, &gg)| *x += gg));
            }
            Op::Sub(a, b) => {
                self.accum(grads, *a, |d| d.iter_mut().zip(g).for_each(|(x, &gg)| *x += gg));
                self.accum(grads, *b, |d| d.iter_mut().zip(g).for_each(|(x, &gg)| *x -= gg));
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                self.accum(grads, *a, |d| {
                    for ((x, &gg), &bb) in d.iter_mut().zip(g).zip(bv) {
                        *x += gg * bb;
                    }
                });
                self.accum(grads, *b, |d| {
                    for ((x, &gg), &aa) in d.iter_mut().zip(g).zip(av) {
                        *x += gg * aa;
                    }
                });
            }
            Op::Neg(a) => {
                self.accum(grads, *a, |d| d.iter_mut().zip(g).for_each(|(x, &gg)| *x -= gg));
            }
            Op::Scale(a, c) => {
                let c = *c;
                self.accum(grads, *a, |d| d.iter_mut().zip(g).for_each(|(x, &gg)| *x += c * gg));
            }
            Op::AddConst(a, _) => {
                self.accum(grads, *a, |d| d.iter_mut().zip(g).for_each(|(x, &gg)| *x += gg));
            }
            Op::MulScalar { a, s } => {
                let sv = self.value(*s)[0];
                let av = self.value(*a);
                self.accum(grads, *a, |d| {
                    d.iter_mut().zip(g).for_each(|(x, &gg)| *x += sv * gg)
                });
                self.accum(grads, *s, |d| {
                    let mut acc = R::zero();
                    for (&gg, &aa) in g.iter().zip(av) {
                        acc += gg * aa;
                    }
                    d[0] += acc;
                });
            }
            Op::Recip(a) => {
                let y = &self.nodes[out].values;
                self.accum(grads, *a, |d| {
                    for ((x, &gg), &yy) in d.iter_mut().zip(g).zip(y) {
                        *x -= gg * yy * yy;
                    }
                });
            }
            Op::Sqrt(a) => {
                let y = &self.nodes[out].values;
                let floor = magnitude_floor::<R>();
                let half = R::of(0.5);
                self.accum(grads, *a, |d| {
                    for ((x, &gg), &yy) in d.iter_mut().zip(g).zip(y) {
                        if yy >= floor {
                            *x += gg * half / yy;
                        }
                    }
                });
            }
            Op::Exp(a) => {
                let y = &self.nodes[out].values;
                self.accum(grads, *a, |d| {
                    for ((x, &gg), &yy) in d.iter_mut().zip(g).zip(y) {
                        *x += gg * yy;
                    }
                });
            }
            Op::Ln(a) => {
                let av = self.value(*a);
                self.accum(grads, *a, |d| {
                    for ((x, &gg), &aa) in d.iter_mut().zip(g).zip(av) {
                        *x += gg / aa;
                    }
                });
            }
            Op::Abs(a) => {
                let av = self.value(*a);
                self.accum(grads, *a, |d| {
                    for ((x, &gg), &aa) in d.iter_mut().zip(g).zip(av) {
                        if aa > R::zero() {
                            *x += gg;
                        } else if aa < R::zero() {
                            *x -= gg;
                        }
                    }
                });
            }
            Op::Sigmoid(a) => {
                let y = &self.nodes[out].values;
                let one = R::one();
                self.accum(grads, *a, |d| {
                    for ((x, &gg), &yy) in d.iter_mut().zip(g).zip(y) {
                        *x += gg * yy * (one - yy);
                    }
                });
            }
            Op::Tanh(a) => {
                let y = &self.nodes[out].values;
                let one = R::one();
                self.accum(grads, *a, |d| {
                    for ((x, &gg), &yy) in d.iter_mut().zip(g).zip(y) {
                        *x += gg * (one - yy * yy);
                    }
                });
            }
            Op::Elu(a) => {
                let av = self.value(*a);
                let one = R::one();
                let y = &self.nodes[out].values;
                self.accum(grads, *a, |d| {
                    for (((x, &gg), &aa), &yy) in d.iter_mut().zip(g).zip(av).zip(y) {
                        *x += if aa > R::zero() { gg } else { gg * (yy + one) };
                    }
                });
            }
            Op::Cos(a) => {
                let av = self.value(*a);
                self.accum(grads, *a, |d| {
                    for ((x, &gg), &aa) in d.iter_mut().zip(g).zip(av) {
                        *x -= gg * aa.sin();
                    }
                });
            }
            Op::Sin(a) => {
                let av = self.value(*a);
                self.accum(grads, *a, |d| {
                    for ((x, &gg), &aa) in d.iter_mut().zip(g).zip(av) {
                        *x += gg * aa.cos();
                    }
                });
            }
            Op::Atan2 { y, x } => {
                let (yv, xv) = (self.value(*y), self.value(*x));
                let floor2 = magnitude_floor::<R>() * magnitude_floor::<R>();
                self.accum(grads, *y, |d| {
                    for (((dst, &gg), &yy), &xx) in d.iter_mut().zip(g).zip(yv).zip(xv) {
                        let r2 = xx * xx + yy * yy;
                        if r2 >= floor2 {
                            *dst += gg * xx / r2;
                        }
                    }
                });
                self.accum(grads, *x, |d| {
                    for (((dst, &gg), &yy), &xx) in d.iter_mut().zip(g).zip(yv).zip(xv) {
                        let r2 = xx * xx + yy * yy;
                        if r2 >= floor2 {
                            *dst -= gg * yy / r2;
                        }
                    }
                });
            }
            Op::Clamp { a, lo, hi } => {
                let av = self.value(*a);
                let (lo, hi) = (*lo, *hi);
                self.accum(grads, *a, |d| {
                    for ((x, &gg), &aa) in d.iter_mut().zip(g).zip(av) {
                        if aa > lo && aa < hi {
                            *x += gg;
                        }
                    }
                });
            }
            Op::Matmul { a, b, m, k, n } => {
                let (m, k, n) = (*m, *k, *n);
                let (av, bv) = (self.value(*a), self.value(*b));
                // dA = g @ B^T
                self.accum(grads, *a, |d| {
                    for i in 0..m {
                        for j in 0..n {
                            let gg = g[i * n + j];
                            if gg != R::zero() {
                                let brow = &bv[..];
                                for p in 0..k {
                                    d[i * k + p] += gg * brow[p * n + j];
                                }
                            }
                        }
                    }
                });
                // dB = A^T @ g
                self.accum(grads, *b, |d| {
                    for i in 0..m {
                        let arow = &av[i * k..(i + 1) * k];
                        let grow = &g[i * n..(i + 1) * n];
                        for p in 0..k {
                            let ap = arow[p];
                            if ap != R::zero() {
                                let drow = &mut d[p * n..(p + 1) * n];
                                for j in 0..n {
                                    drow[j] += ap * grow[j];
                                }
                            }
                        }
                    }
                });
            }
            Op::Transpose2d { a, rows, cols } => {
                let (rows, cols) = (*rows, *cols);
                self.accum(grads, *a, |d| {
                    for r in 0..rows {
                        for c in 0..cols {
                            d[r * cols + c] += g[c * rows + r];
                        }
                    }
                });
            }
            Op::SoftmaxRows { a, rows, cols } => {
                let (rows, cols) = (*rows, *cols);
                let y = &self.nodes[out].values;
                self.accum(grads, *a, |d| {
                    for r in 0..rows {
                        let base = r * cols;
                        let mut dot = R::zero();
                        for c in 0..cols {
                            dot += g[base + c] * y[base + c];
                        }
                        for c in 0..cols {
                            d[base + c] += y[base + c] * (g[base + c] - dot);
                        }
                    }
                });
            }
            Op::NormRows { a, rows, cols, inv_std } => {
                let (rows, cols) = (*rows, *cols);
                let y = &self.nodes[out].values;
                let n = R::of(cols as f64);
                self.accum(grads, *a, |d| {
                    for r in 0..rows {
                        let base = r * cols;
                        let mut gmean = R::zero();
                        let mut gydot = R::zero();
                        for c in 0..cols {
                            gmean += g[base + c];
                            gydot += g[base + c] * y[base + c];
                        }
                        gmean /= n;
                        gydot /= n;
                        let is = inv_std[r];
                        for c in 0..cols {
                            d[base + c] += is * (g[base + c] - gmean - y[base + c] * gydot);
                        }
                    }
                });
            }
            Op::NormChannels { a, channels, inv_std } => {
                let channels = *channels;
                let y = &self.nodes[out].values;
                let rows = y.len() / channels;
                let n = R::of(rows as f64);
                self.accum(grads, *a, |d| {
                    let mut gmean = vec![R::zero(); channels];
                    let mut gydot = vec![R::zero(); channels];
                    for r in 0..rows {
                        for c in 0..channels {
                            gmean[c] += g[r * channels + c];
                            gydot[c] += g[r * channels + c] * y[r * channels + c];
                        }
                    }
                    for c in 0..channels {
                        gmean[c] /= n;
                        gydot[c] /= n;
                    }
                    for r in 0..rows {
                        for c in 0..channels {
                            let i = r * channels + c;
                            d[i] += inv_std[c] * (g[i] - gmean[c] - y[i] * gydot[c]);
                        }
                    }
                });
            }
            Op::AddBias { a, bias } => {
                let channels = self.numel(*bias);
                self.accum(grads, *a, |d| d.iter_mut().zip(g).for_each(|(x, &gg)| *x += gg));
                self.accum(grads, *bias, |d| {
                    for chunk in g.chunks_exact(channels) {
                        for c in 0..channels {
                            d[c] += chunk[c];
                        }
                    }
                });
            }
            Op::MulChannels { a, gamma } => {
                let channels = self.numel(*gamma);
                let gv = self.value(*gamma);
                let av = self.value(*a);
                self.accum(grads, *a, |d| {
                    for (r, chunk) in g.chunks_exact(channels).enumerate() {
                        for c in 0..channels {
                            d[r * channels + c] += chunk[c] * gv[c];
                        }
                    }
                });
                self.accum(grads, *gamma, |d| {
                    for (r, chunk) in g.chunks_exact(channels).enumerate() {
                        for c in 0..channels {
                            d[c] += chunk[c] * av[r * channels + c];
                        }
                    }
                });
            }
            Op::Sum(a) => {
                let gg = g[0];
                self.accum(grads, *a, |d| d.iter_mut().for_each(|x| *x += gg));
            }
            Op::Mean(a) => {
                let gg = g[0] / R::of(self.numel(*a) as f64);
                self.accum(grads, *a, |d| d.iter_mut().for_each(|x| *x += gg));
            }
            Op::SliceAxis { a, axis, from, to } => {
                let shape = self.shape(*a);
                let outer: usize = shape[..*axis].iter().product();
                let inner: usize = shape[*axis + 1..].iter().product();
                let len = shape[*axis];
                let span = (to - from) * inner;
                self.accum(grads, *a, |d| {
                    for o in 0..outer {
                        let dst = o * len * inner + from * inner;
                        let src = o * span;
                        for j in 0..span {
                            d[dst + j] += g[src + j];
                        }
                    }
                });
            }
            Op::ConcatAxis { parts, axis } => {
                let out_shape = &self.nodes[out].shape;
                let outer: usize = out_shape[..*axis].iter().product();
                let inner: usize = out_shape[*axis + 1..].iter().product();
                let total = out_shape[*axis];
                let mut offset = 0usize;
                for &p in parts {
                    let alen = self.shape(p)[*axis];
                    self.accum(grads, p, |d| {
                        for o in 0..outer {
                            let src = (o * total + offset) * inner;
                            let dst = o * alen * inner;
                            for j in 0..alen * inner {
                                d[dst + j] += g[src + j];
                            }
                        }
                    });
                    offset += alen;
                }
            }
            Op::Reshape(a) => {
                self.accum(grads, *a, |d| d.iter_mut().zip(g).for_each(|(x, &gg)| *x += gg));
            }
            Op::SwapTF { a, t, f, c } => {
                let (t, f, c) = (*t, *f, *c);
                self.accum(grads, *a, |d| {
                    for ti in 0..t {
                        for fi in 0..f {
                            let src = (fi * t + ti) * c;
                            let dst = (ti * f + fi) * c;
                            for ci in 0..c {
                                d[dst + ci] += g[src + ci];
                            }
                        }
                    }
                });
            }
            Op::Conv2d { x, w, spec, in_size } => {
                let out_size = {
                    let s = &self.nodes[out].shape;
                    (s[0], s[1])
                };
                let wv = self.value(*w);
                let xv = self.value(*x);
                self.accum(grads, *x, |d| {
                    conv::conv2d_backward_input(g, wv, d, spec, *in_size, out_size);
                });
                self.accum(grads, *w, |d| {
                    conv::conv2d_backward_weight(g, xv, d, spec, *in_size, out_size);
                });
            }
            Op::ConvT2d { x, w, spec, in_size } => {
                let out_size = {
                    let s = &self.nodes[out].shape;
                    (s[0], s[1])
                };
                let wv = self.value(*w);
                let xv = self.value(*x);
                self.accum(grads, *x, |d| {
                    conv::conv_t2d_backward_input(g, wv, d, spec, *in_size, out_size);
                });
                self.accum(grads, *w, |d| {
                    conv::conv_t2d_backward_weight(g, xv, d, spec, *in_size, out_size);
                });
            }
            Op::Custom { op, inputs } => {
                let in_meta: Vec<(&[usize], &[R])> =
                    inputs.iter().map(|&i| (self.shape(i), self.value(i))).collect();
                let mut gin: Vec<Vec<R>> =
                    inputs.iter().map(|&i| vec![R::zero(); self.numel(i)]).collect();
                op.backward(g, &in_meta, &self.nodes[out].values, &mut gin);
                for (&i, gi) in inputs.iter().zip(gin) {
                    self.accum(grads, i, |d| {
                        d.iter_mut().zip(&gi).for_each(|(x, &gg)| *x += gg)
                    });
                }
            }
        }
    }

    fn accum<F: FnOnce(&mut [R])>(&self, grads: &mut [Option<Vec<R>>], id: TensorId, f: F) {
        if !self.nodes[id.0].needs_grad {
            return;
        }
        let slot = &mut grads[id.0];
        if slot.is_none() {
            *slot = Some(vec![R::zero(); self.nodes[id.0].numel()]);
        }
        f(slot.as_mut().unwrap());
    }
}

fn op_name<R: Real>(op: &Op<R>) -> &'static str {
    match op {
        Op::Leaf => "leaf",
        Op::Add(..) => "add",
        Op::Sub(..) => "sub",
        Op::Mul(..) => "mul",
        Op::Neg(..) => "neg",
        Op::Scale(..) => "scale",
        Op::AddConst(..) => "add_const",
        Op::MulScalar { .. } => "mul_scalar",
        Op::Recip(..) => "recip",
        Op::Sqrt(..) => "sqrt",
        Op::Exp(..) => "exp",
        Op::Ln(..) => "ln",
        Op::Abs(..) => "abs",
        Op::Sigmoid(..) => "sigmoid",
        Op::Tanh(..) => "tanh",
        Op::Elu(..) => "elu",
        Op::Cos(..) => "cos",
        Op::Sin(..) => "sin",
        Op::Atan2 { .. } => "atan2",
        Op::Clamp { .. } => "clamp",
        Op::Matmul { .. } => "matmul",
        Op::Transpose2d { .. } => "transpose2d",
        Op::SoftmaxRows { .. } => "softmax_rows",
        Op::NormRows { .. } => "norm_rows",
        Op::NormChannels { .. } => "norm_channels",
        Op::AddBias { .. } => "add_bias",
        Op::MulChannels { .. } => "mul_channels",
        Op::Sum(..) => "sum",
        Op::Mean(..) => "mean",
        Op::SliceAxis { .. } => "slice_axis",
        Op::ConcatAxis { .. } => "concat_axis",
        Op::Reshape(..) => "reshape",
        Op::SwapTF { .. } => "swap_tf",
        Op::Conv2d { .. } => "conv2d",
        Op::ConvT2d { .. } => "conv_t2d",
        Op::Custom { .. } => "custom",
    }
}

impl<R: Real> Tape<R> {
    fn zip_same_shape(&self, what: &str, a: TensorId, b: TensorId) {
        assert_eq!(
            self.shape(a),
            self.shape(b),
            "{what}: shape mismatch {:?} vs {:?}",
            self.shape(a),
            self.shape(b)
        );
    }
}

pub(crate) fn sigmoid<R: Real>(x: R) -> R {
    let one = R::one();
    if x >= R::zero() {
        one / (one + (-x).exp())
    } else {
        let e = x.exp();
        e / (one + e)
    }
}

pub(crate) fn matmul_into<R: Real>(a: &[R], b: &[R], out: &mut [R], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let orow = &mut out[i * n..(i + 1) * n];
        for (p, &ap) in arow.iter().enumerate() {
            if ap != R::zero() {
                let brow = &b[p * n..(p + 1) * n];
                for (o, &bb) in orow.iter_mut().zip(brow) {
                    *o += ap * bb;
                }
            }
        }
    }
}
