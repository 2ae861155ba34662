//! Gated residual units: the convolutional residual modules stacked in
//! the middle of the mask and complex paths. (The acronym follows the
//! architecture's usage — these are not recurrent cells.)
//!
//! Both variants share the shape: a kernel-5 gated convolution over
//! time, a context module, a kernel-1 convolution, and a residual
//! connection from the unit input. The mask-path variant's context is
//! the sum of time-axis and frequency-axis self-attention; the
//! complex-path variant replaces that pair with a dilated temporal
//! convolution.

use crate::autodiff::{Conv2dSpec, TensorId};
use crate::layers::{
    glu, AttnAxis, Conv2dLayer, Mhsa, MhsaConfig, ParamBuilder, Session,
};
use crate::num::Real;

use super::config::ModelConfig;

fn left_conv<R: Real>(
    pb: &mut ParamBuilder<R>,
    name: &str,
    channels: usize,
    kernel: usize,
) -> Conv2dLayer {
    let spec =
        Conv2dSpec::new(channels, 2 * channels, (kernel, 1), (1, 1), (1, 1), (kernel / 2, 0))
            .unwrap();
    Conv2dLayer::new(pb, name, spec)
}

fn right_conv<R: Real>(
    pb: &mut ParamBuilder<R>,
    name: &str,
    channels: usize,
    kernel: usize,
) -> Conv2dLayer {
    let spec =
        Conv2dSpec::new(channels, channels, (kernel, 1), (1, 1), (1, 1), (kernel / 2, 0))
            .unwrap();
    Conv2dLayer::new(pb, name, spec)
}

/// Mask-path unit: gated conv, dual-axis attention, kernel-1 conv,
/// residual.
pub struct GruAttention {
    left: Conv2dLayer,
    attn_time: Mhsa,
    attn_freq: Mhsa,
    right: Conv2dLayer,
}

impl GruAttention {
    pub fn new<R: Real>(pb: &mut ParamBuilder<R>, name: &str, cfg: &ModelConfig) -> Self {
        let c = cfg.mb.channels;
        let time_cfg = MhsaConfig::new(cfg.mb.heads, c, AttnAxis::Time)
            .expect("validated config")
            .with_scale(cfg.attn_scale);
        let freq_cfg = MhsaConfig::new(cfg.mb.heads, c, AttnAxis::Frequency)
            .expect("validated config")
            .with_scale(cfg.attn_scale);
        GruAttention {
            left: left_conv(pb, &format!("{name}.left"), c, cfg.mb.left_kernel),
            attn_time: Mhsa::new(pb, &format!("{name}.attn_time"), time_cfg),
            attn_freq: Mhsa::new(pb, &format!("{name}.attn_freq"), freq_cfg),
            right: right_conv(pb, &format!("{name}.right"), c, cfg.mb.right_kernel),
        }
    }

    /// The two attention maps over the gated features, before they are
    /// summed. Exposed for term-wise verification.
    pub fn attention_terms<R: Real>(
        &self,
        sess: &mut Session<R>,
        x: TensorId,
    ) -> (TensorId, TensorId, TensorId) {
        let gated = {
            let y = self.left.forward(sess, x);
            glu(sess, y).expect("left conv emits even channels")
        };
        let at = self.attn_time.forward_map(sess, gated).expect("channel dims fixed");
        let af = self.attn_freq.forward_map(sess, gated).expect("channel dims fixed");
        (gated, at, af)
    }

    pub fn forward<R: Real>(&self, sess: &mut Session<R>, x: TensorId) -> TensorId {
        let (_, at, af) = self.attention_terms(sess, x);
        let summed = sess.tape.add(at, af);
        let out = self.right.forward(sess, summed);
        sess.tape.add(x, out)
    }
}

/// Complex-path unit: gated conv, dilated temporal conv, kernel-1 conv,
/// residual.
pub struct GruDilated {
    left: Conv2dLayer,
    mid: Conv2dLayer,
    right: Conv2dLayer,
    pub dilation: usize,
}

impl GruDilated {
    pub fn new<R: Real>(
        pb: &mut ParamBuilder<R>,
        name: &str,
        cfg: &ModelConfig,
        dilation: usize,
    ) -> Self {
        let c = cfg.comeb.channels;
        let k = cfg.comeb.left_kernel;
        let mid_spec = Conv2dSpec::new(
            c,
            c,
            (k, 1),
            (1, 1),
            (dilation, 1),
            (dilation * (k - 1) / 2, 0),
        )
        .unwrap();
        GruDilated {
            left: left_conv(pb, &format!("{name}.left"), c, cfg.comeb.left_kernel),
            mid: Conv2dLayer::new(pb, &format!("{name}.dilated"), mid_spec),
            right: right_conv(pb, &format!("{name}.right"), c, cfg.comeb.right_kernel),
            dilation,
        }
    }

    /// Half-width of this unit's temporal receptive field in frames.
    pub fn receptive_half_width(&self, left_kernel: usize, mid_kernel: usize) -> usize {
        left_kernel / 2 + self.dilation * (mid_kernel - 1) / 2
    }

    pub fn forward<R: Real>(&self, sess: &mut Session<R>, x: TensorId) -> TensorId {
        let gated = {
            let y = self.left.forward(sess, x);
            glu(sess, y).expect("left conv emits even channels")
        };
        let ctx = self.mid.forward(sess, gated);
        let out = self.right.forward(sess, ctx);
        sess.tape.add(x, out)
    }
}
