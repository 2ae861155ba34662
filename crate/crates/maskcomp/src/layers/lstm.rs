//! Forward-only LSTM over a `[T, D]` sequence.

use super::params::{ParamBuilder, ParamId, Session};
use super::LayerError;
use crate::autodiff::TensorId;
use crate::num::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LstmSpec {
    pub input_dim: usize,
    pub hidden_dim: usize,
}

/// Standard cell, gates packed `[input, forget, cell, output]` along the
/// last axis of the combined projection. Initial hidden and cell state
/// are zero.
pub struct Lstm {
    pub spec: LstmSpec,
    w_input: ParamId,  // [D, 4H]
    w_hidden: ParamId, // [H, 4H]
    bias: ParamId,     // [4H]
}

impl Lstm {
    pub fn new<R: Real>(pb: &mut ParamBuilder<R>, name: &str, spec: LstmSpec) -> Self {
        assert!(spec.input_dim > 0 && spec.hidden_dim > 0);
        let (d, h) = (spec.input_dim, spec.hidden_dim);
        let w_input = pb.uniform(format!("{name}.w_input"), &[d, 4 * h], d);
        let w_hidden = pb.uniform(format!("{name}.w_hidden"), &[h, 4 * h], h);
        let bias = pb.zeros(format!("{name}.bias"), &[4 * h]);
        Lstm { spec, w_input, w_hidden, bias }
    }

    /// `x` is `[T, D]`; returns all hidden states `[T, H]`.
    pub fn forward<R: Real>(
        &self,
        sess: &mut Session<R>,
        x: TensorId,
    ) -> Result<TensorId, LayerError> {
        let shape = sess.tape.shape(x).to_vec();
        assert_eq!(shape.len(), 2, "lstm expects [T, D]");
        let (steps, d) = (shape[0], shape[1]);
        if d != self.spec.input_dim {
            return Err(LayerError::DimMismatch {
                what: "lstm input",
                expected: self.spec.input_dim,
                got: d,
            });
        }
        let h = self.spec.hidden_dim;
        let wx = sess.param(self.w_input);
        let wh = sess.param(self.w_hidden);
        let b = sess.param(self.bias);

        let mut hidden = sess.tape.constant(vec![R::zero(); h], &[1, h]);
        let mut cell = sess.tape.constant(vec![R::zero(); h], &[1, h]);
        let mut outputs = Vec::with_capacity(steps);
        for t in 0..steps {
            let xt = sess.tape.slice_axis(x, 0, t, t + 1); // [1, D]
            let zx = sess.tape.matmul(xt, wx);
            let zh = sess.tape.matmul(hidden, wh);
            let z = sess.tape.add(zx, zh);
            let z = sess.tape.add_bias(z, b); // [1, 4H]

            let gi = sess.tape.slice_axis(z, 1, 0, h);
            let gf = sess.tape.slice_axis(z, 1, h, 2 * h);
            let gc = sess.tape.slice_axis(z, 1, 2 * h, 3 * h);
            let go = sess.tape.slice_axis(z, 1, 3 * h, 4 * h);

            let i = sess.tape.sigmoid(gi);
            let f = sess.tape.sigmoid(gf);
            let g = sess.tape.tanh(gc);
            let o = sess.tape.sigmoid(go);

            let keep = sess.tape.mul(f, cell);
            let write = sess.tape.mul(i, g);
            cell = sess.tape.add(keep, write);
            let ct = sess.tape.tanh(cell);
            hidden = sess.tape.mul(o, ct);
            outputs.push(hidden);
        }
        Ok(sess.tape.concat_axis(&outputs, 0))
    }
}
