//! Mask path: 5-layer strided encoder, two groups of attention units,
//! 5-layer transposed decoder with additive skips from the matching
//! encoder stages, and a 1x1 convolution squashed to a `(0,1)` mask.

use crate::autodiff::{Conv2dSpec, ConvT2dSpec, TensorId};
use crate::layers::{BatchNorm, Conv2dLayer, ConvT2dLayer, ParamBuilder, Session, StatsInit};
use crate::num::Real;

use super::config::ModelConfig;
use super::gru::GruAttention;

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum MaskError {
    #[error("mask entry at bin {0} is outside (0, 1): {1}")]
    OutOfRange(usize, f64),
    #[error("mask length {got} does not match {frames} x {bins}")]
    ShapeMismatch { got: usize, frames: usize, bins: usize },
}

/// `T x F` array of suppression gains, every entry strictly inside
/// `(0, 1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Mask<R: Real> {
    pub frames: usize,
    pub bins: usize,
    values: Vec<R>,
}

impl<R: Real> Mask<R> {
    pub fn new(frames: usize, bins: usize, values: Vec<R>) -> Result<Self, MaskError> {
        if values.len() != frames * bins {
            return Err(MaskError::ShapeMismatch { got: values.len(), frames, bins });
        }
        for (i, v) in values.iter().enumerate() {
            if !(*v > R::zero() && *v < R::one()) {
                return Err(MaskError::OutOfRange(i, v.as_f64()));
            }
        }
        Ok(Mask { frames, bins, values })
    }

    pub fn values(&self) -> &[R] {
        &self.values
    }
}

struct EncStage {
    conv: Conv2dLayer,
    norm: BatchNorm,
}

struct DecStage {
    conv: ConvT2dLayer,
    norm: BatchNorm,
}

pub(crate) struct EncDec {
    enc: Vec<EncStage>,
    dec: Vec<DecStage>,
}

impl EncDec {
    /// Shared encoder/decoder trunk of the mask and complex paths:
    /// kernel-8 stride-2 convolutions down the frequency axis with batch
    /// norm and ELU, mirrored by exact-inverse transposed stages.
    pub(crate) fn new<R: Real>(
        pb: &mut ParamBuilder<R>,
        name: &str,
        cfg: &ModelConfig,
        in_channels: usize,
        channels: usize,
        kernel: usize,
        layers: usize,
    ) -> Self {
        let chain = cfg.encdec_chain(kernel, layers).expect("validated config");
        let pad = (kernel / 2).saturating_sub(1);
        let mut enc = Vec::with_capacity(layers);
        for i in 0..layers {
            let cin = if i == 0 { in_channels } else { channels };
            let spec =
                Conv2dSpec::new(cin, channels, (1, kernel), (1, 2), (1, 1), (0, pad)).unwrap();
            enc.push(EncStage {
                conv: Conv2dLayer::new(pb, &format!("{name}.enc{i}"), spec),
                norm: BatchNorm::new(pb, &format!("{name}.enc{i}.bn"), channels, StatsInit::Identity),
            });
        }
        let mut dec = Vec::with_capacity(layers);
        for i in 0..layers {
            let enc_idx = layers - 1 - i;
            let fwd =
                Conv2dSpec::new(channels, channels, (1, kernel), (1, 2), (1, 1), (0, pad))
                    .unwrap();
            let spec = ConvT2dSpec::inverting(&fwd, (1, chain[enc_idx])).unwrap();
            dec.push(DecStage {
                conv: ConvT2dLayer::new(pb, &format!("{name}.dec{i}"), spec),
                norm: BatchNorm::new(pb, &format!("{name}.dec{i}.bn"), channels, StatsInit::Identity),
            });
        }
        EncDec { enc, dec }
    }

    /// Encoder sweep; returns the stage outputs (last one is the
    /// bottleneck).
    pub(crate) fn encode<R: Real>(&self, sess: &mut Session<R>, x: TensorId) -> Vec<TensorId> {
        let mut outs = Vec::with_capacity(self.enc.len());
        let mut h = x;
        for stage in &self.enc {
            let y = stage.conv.forward(sess, h);
            let n = stage.norm.forward(sess, y).expect("identity-seeded stats");
            h = sess.tape.elu(n);
            outs.push(h);
        }
        outs
    }

    /// Decoder sweep with additive skips from the encoder outputs.
    pub(crate) fn decode<R: Real>(
        &self,
        sess: &mut Session<R>,
        bottleneck: TensorId,
        enc_outs: &[TensorId],
    ) -> TensorId {
        let n = self.dec.len();
        let mut h = bottleneck;
        for (i, stage) in self.dec.iter().enumerate() {
            let y = stage.conv.forward(sess, h);
            let normed = stage.norm.forward(sess, y).expect("identity-seeded stats");
            let with_skip = if i + 1 < n {
                let skip = enc_outs[n - 2 - i];
                sess.tape.add(normed, skip)
            } else {
                normed
            };
            h = sess.tape.elu(with_skip);
        }
        h
    }
}

pub struct MaskBlock {
    trunk: EncDec,
    groups: Vec<Vec<GruAttention>>,
    out_conv: Conv2dLayer,
    pub bins: usize,
}

impl MaskBlock {
    pub fn new<R: Real>(pb: &mut ParamBuilder<R>, name: &str, cfg: &ModelConfig) -> Self {
        let c = cfg.mb.channels;
        let trunk = EncDec::new(
            pb,
            name,
            cfg,
            cfg.feb.channels,
            c,
            cfg.mb.kernel,
            cfg.mb.encdec_layers,
        );
        let mut groups = Vec::with_capacity(cfg.mb.gru_groups);
        for g in 0..cfg.mb.gru_groups {
            let mut units = Vec::with_capacity(cfg.mb.grus_per_group);
            for u in 0..cfg.mb.grus_per_group {
                units.push(GruAttention::new(pb, &format!("{name}.group{g}.gru{u}"), cfg));
            }
            groups.push(units);
        }
        let out_spec = Conv2dSpec::new(c, 1, (1, 1), (1, 1), (1, 1), (0, 0)).unwrap();
        let out_conv = Conv2dLayer::new(pb, &format!("{name}.out"), out_spec);
        MaskBlock { trunk, groups, out_conv, bins: cfg.bins() }
    }

    /// Features `[T, F, C]` from the front end to logits, sigmoid, and a
    /// `[T, F]` mask tensor. The logits are clamped so the sigmoid stays
    /// strictly inside `(0, 1)` at this precision.
    pub fn forward<R: Real>(&self, sess: &mut Session<R>, features: TensorId) -> TensorId {
        let shape = sess.tape.shape(features).to_vec();
        let (t, f) = (shape[0], shape[1]);
        assert_eq!(f, self.bins, "mask block frequency size");

        let enc_outs = self.trunk.encode(sess, features);
        let mut h = *enc_outs.last().unwrap();
        for group in &self.groups {
            for unit in group {
                h = unit.forward(sess, h);
            }
        }
        let decoded = self.trunk.decode(sess, h, &enc_outs);
        let logits = self.out_conv.forward(sess, decoded); // [T, F, 1]
        let limit = R::sigmoid_logit_limit();
        let clamped = sess.tape.clamp(logits, -limit, limit);
        let squashed = sess.tape.sigmoid(clamped);
        sess.tape.reshape(squashed, &[t, f])
    }

    /// Validated mask from computed values.
    pub fn to_mask<R: Real>(
        sess: &Session<R>,
        mask_tensor: TensorId,
    ) -> Result<Mask<R>, MaskError> {
        let shape = sess.tape.shape(mask_tensor);
        Mask::new(shape[0], shape[1], sess.tape.value(mask_tensor).to_vec())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tape;
    use crate::layers::ParamStore;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn small_cfg() -> ModelConfig {
        let mut cfg = ModelConfig::toy();
        cfg.feb.channels = 2;
        cfg.mb.channels = 2;
        cfg
    }

    fn build(seed: u64) -> (ParamStore<f64>, MaskBlock, ModelConfig) {
        let cfg = small_cfg();
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut pb = ParamBuilder::new(&mut store, &mut rng);
        let mb = MaskBlock::new(&mut pb, "mb", &cfg);
        (store, mb, cfg)
    }

    #[test]
    fn mask_is_tf_shaped_and_in_open_interval() {
        let (store, mb, _) = build(1);
        let mut r = ChaCha8Rng::seed_from_u64(2);
        for trial in 0..3 {
            let t = 2 + trial;
            let x: Vec<f64> = (0..t * 33 * 2).map(|_| r.gen_range(-1.0..1.0)).collect();
            let mut tape = Tape::new();
            let mut sess = Session::new(&mut tape, &store, true);
            let xt = sess.tape.leaf(x, &[t, 33, 2], false);
            let m = mb.forward(&mut sess, xt);
            assert_eq!(sess.tape.shape(m), &[t, 33]);
            let mask = MaskBlock::to_mask(&sess, m).expect("strictly inside (0,1)");
            assert_eq!(mask.values().len(), t * 33);
        }
    }

    #[test]
    fn saturated_bias_pushes_mask_to_one() {
        let (mut store, mb, _) = build(3);
        // zero every weight, then drive the output bias high
        let ids: Vec<_> = store.iter().map(|(id, e)| (id, e.name.clone(), e.values.len())).collect();
        for (id, name, n) in ids {
            if name.ends_with(".weight") || name.ends_with(".w_query") || name.ends_with(".w_key")
                || name.ends_with(".w_value") || name.ends_with(".w_out")
            {
                store.set_values(id, vec![0.0; n]);
            }
        }
        let bias = store.find("mb.out.bias").unwrap();
        store.set_values(bias, vec![20.0]);

        let mut tape = Tape::new();
        let mut sess = Session::new(&mut tape, &store, true);
        let x = sess.tape.leaf(vec![0.2; 2 * 33 * 2], &[2, 33, 2], false);
        let m = mb.forward(&mut sess, x);
        for &v in sess.tape.value(m) {
            assert!(v >= 1.0 - 1e-8, "sigmoid(20) floor, got {v}");
            assert!(v < 1.0, "must stay strictly below one");
        }
    }

    #[test]
    fn mask_type_rejects_out_of_range() {
        assert!(matches!(
            Mask::new(1, 2, vec![0.5, 1.0]),
            Err(MaskError::OutOfRange(1, _))
        ));
        assert!(matches!(
            Mask::new(1, 2, vec![0.5]),
            Err(MaskError::ShapeMismatch { got: 1, frames: 1, bins: 2 })
        ));
        assert!(Mask::new(1, 2, vec![0.5, 0.25]).is_ok());
    }
}
