//! Feature extraction front end: gated 2-D convolution plus a U-block
//! on a residual branch, `y = GLU(x) + U_block(GLU(x))`, stacked twice.
//! Layer norm and ELU sit between the gate and the U-block.

use crate::autodiff::{Conv2dSpec, TensorId};
use crate::layers::{glu, Conv2dLayer, LayerNorm, ParamBuilder, Session};
use crate::num::Real;

use super::config::ModelConfig;
use super::ublock::UBlock;

struct FebStage {
    gate_conv: Conv2dLayer,
    norm: LayerNorm,
    ublock: UBlock,
}

pub struct Feb {
    stages: Vec<FebStage>,
    pub out_channels: usize,
}

impl Feb {
    pub fn new<R: Real>(pb: &mut ParamBuilder<R>, name: &str, cfg: &ModelConfig) -> Self {
        let c = cfg.feb.channels;
        let k = cfg.feb.glu_kernel;
        let pad = k / 2;
        let mut stages = Vec::with_capacity(cfg.feb.u_blocks);
        for i in 0..cfg.feb.u_blocks {
            let in_ch = if i == 0 { 2 } else { c };
            let spec = Conv2dSpec::new(in_ch, 2 * c, (k, k), (1, 1), (1, 1), (pad, pad)).unwrap();
            stages.push(FebStage {
                gate_conv: Conv2dLayer::new(pb, &format!("{name}.stage{i}.glu_conv"), spec),
                norm: LayerNorm::new(pb, &format!("{name}.stage{i}.norm"), c),
                ublock: UBlock::new(pb, &format!("{name}.stage{i}.ublock"), cfg),
            });
        }
        Feb { stages, out_channels: c }
    }

    /// One stage: gate, then the U-block branch, then the residual sum.
    /// Exposed so the composition can be recomputed term by term.
    pub fn stage_forward<R: Real>(
        &self,
        sess: &mut Session<R>,
        stage: usize,
        x: TensorId,
    ) -> (TensorId, TensorId) {
        let st = &self.stages[stage];
        let gated = {
            let y = st.gate_conv.forward(sess, x);
            glu(sess, y).expect("gate conv emits an even channel count")
        };
        let branch = {
            let n = st.norm.forward(sess, gated);
            let e = sess.tape.elu(n);
            st.ublock.forward(sess, e)
        };
        (gated, branch)
    }

    /// `x` is the noisy spectrogram `[T, F, 2]`; output `[T, F, C]`.
    pub fn forward<R: Real>(&self, sess: &mut Session<R>, x: TensorId) -> TensorId {
        let mut h = x;
        for i in 0..self.stages.len() {
            let (gated, branch) = self.stage_forward(sess, i, h);
            h = sess.tape.add(gated, branch);
        }
        h
    }
}
