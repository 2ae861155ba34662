//! Layer and batch normalization.

use super::params::{ParamBuilder, ParamId, Session};
use super::LayerError;
use crate::autodiff::TensorId;
use crate::num::Real;

const NORM_EPS: f64 = 1e-5;

/// Per-position normalization over the channel axis with learned affine.
pub struct LayerNorm {
    gain: ParamId,
    bias: ParamId,
    pub channels: usize,
}

impl LayerNorm {
    pub fn new<R: Real>(pb: &mut ParamBuilder<R>, name: &str, channels: usize) -> Self {
        let gain = pb.ones(format!("{name}.gain"), &[channels]);
        let bias = pb.zeros(format!("{name}.bias"), &[channels]);
        LayerNorm { gain, bias, channels }
    }

    /// `x` is `[.., C]`; every position's channel vector is standardized
    /// then scaled/shifted.
    pub fn forward<R: Real>(&self, sess: &mut Session<R>, x: TensorId) -> TensorId {
        let shape = sess.tape.shape(x).to_vec();
        let channels = *shape.last().unwrap();
        assert_eq!(channels, self.channels, "layer_norm channel count");
        let rows: usize = shape.iter().product::<usize>() / channels;
        let flat = sess.tape.reshape(x, &[rows, channels]);
        let normed = sess.tape.norm_rows(flat, R::of(NORM_EPS));
        let back = sess.tape.reshape(normed, &shape);
        let g = sess.param(self.gain);
        let b = sess.param(self.bias);
        let scaled = sess.tape.mul_channels(back, g);
        sess.tape.add_bias(scaled, b)
    }
}

/// How batch-norm running statistics start out.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StatsInit {
    /// mean 0 / var 1 from construction; inference works immediately
    /// (this is what the model uses, so a freshly initialized checkpoint
    /// can run enhancement).
    Identity,
    /// no statistics until the first training batch; inference before
    /// that is an error.
    Deferred,
}

/// Batch normalization over all positions per channel, with running
/// statistics for inference. The running buffers are non-trainable
/// parameters so they persist in checkpoints.
pub struct BatchNorm {
    name: String,
    gain: ParamId,
    bias: ParamId,
    running_mean: ParamId,
    running_var: ParamId,
    /// 1-element flag: statistics present?
    seen: ParamId,
    momentum: f64,
    pub channels: usize,
}

impl BatchNorm {
    pub fn new<R: Real>(
        pb: &mut ParamBuilder<R>,
        name: &str,
        channels: usize,
        init: StatsInit,
    ) -> Self {
        let gain = pb.ones(format!("{name}.gain"), &[channels]);
        let bias = pb.zeros(format!("{name}.bias"), &[channels]);
        let running_mean = pb.state(format!("{name}.running_mean"), &[channels], vec![R::zero(); channels]);
        let running_var = pb.state(format!("{name}.running_var"), &[channels], vec![R::one(); channels]);
        let seen_val = match init {
            StatsInit::Identity => R::one(),
            StatsInit::Deferred => R::zero(),
        };
        let seen = pb.state(format!("{name}.stats_seen"), &[1], vec![seen_val]);
        BatchNorm {
            name: name.to_string(),
            gain,
            bias,
            running_mean,
            running_var,
            seen,
            momentum: 0.1,
            channels,
        }
    }

    pub fn forward<R: Real>(
        &self,
        sess: &mut Session<R>,
        x: TensorId,
    ) -> Result<TensorId, LayerError> {
        let channels = *sess.tape.shape(x).last().unwrap();
        assert_eq!(channels, self.channels, "batch_norm channel count");
        let normed = if sess.training {
            let (mean, var) = sess.tape.channel_stats(x);
            let m = R::of(self.momentum);
            let keep = R::one() - m;
            let old_mean = sess.store().values(self.running_mean);
            let old_var = sess.store().values(self.running_var);
            let new_mean: Vec<R> =
                old_mean.iter().zip(&mean).map(|(&o, &b)| keep * o + m * b).collect();
            let new_var: Vec<R> =
                old_var.iter().zip(&var).map(|(&o, &b)| keep * o + m * b).collect();
            sess.queue_state_update(self.running_mean, new_mean);
            sess.queue_state_update(self.running_var, new_var);
            sess.queue_state_update(self.seen, vec![R::one()]);
            sess.tape.norm_channels(x, R::of(NORM_EPS))
        } else {
            if sess.store().values(self.seen)[0] == R::zero() {
                return Err(LayerError::StatsMissing(self.name.clone()));
            }
            // (x - rm) / sqrt(rv + eps) as constant per-channel affine
            let rm = sess.store().values(self.running_mean).to_vec();
            let rv = sess.store().values(self.running_var);
            let inv: Vec<R> =
                rv.iter().map(|&v| (v + R::of(NORM_EPS)).sqrt().recip()).collect();
            let shift: Vec<R> = rm.iter().zip(&inv).map(|(&m, &i)| -m * i).collect();
            let inv_t = sess.tape.constant(inv, &[channels]);
            let shift_t = sess.tape.constant(shift, &[channels]);
            let scaled = sess.tape.mul_channels(x, inv_t);
            sess.tape.add_bias(scaled, shift_t)
        };
        let g = sess.param(self.gain);
        let b = sess.param(self.bias);
        let out = sess.tape.mul_channels(normed, g);
        Ok(sess.tape.add_bias(out, b))
    }
}
