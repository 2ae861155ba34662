//! U-shaped encoder/decoder with an LSTM bottleneck, embedded as a
//! feature-extraction layer. Five stride-2 stages down the frequency
//! axis, an LSTM over time on the flattened bottleneck, five transposed
//! stages back up with additive skips from the matching encoder stages.
//! Output shape equals input shape.

use crate::autodiff::{Conv2dSpec, ConvT2dSpec, TensorId};
use crate::layers::{Conv2dLayer, ConvT2dLayer, Lstm, LstmSpec, ParamBuilder, Session};
use crate::num::Real;

use super::config::ModelConfig;

pub struct UBlock {
    encoder: Vec<Conv2dLayer>,
    decoder: Vec<ConvT2dLayer>,
    lstm: Lstm,
    pub chain: Vec<usize>,
    channels: usize,
}

impl UBlock {
    pub fn new<R: Real>(pb: &mut ParamBuilder<R>, name: &str, cfg: &ModelConfig) -> Self {
        let c = cfg.feb.channels;
        let chain = cfg.ublock_chain().expect("validated config");
        let (kt, kf) = cfg.feb.ub_kernel;
        let (st, sf) = cfg.feb.ub_stride;
        let pad = (kt / 2, kf / 2);

        let mut encoder = Vec::with_capacity(cfg.feb.encdec_layers);
        for i in 0..cfg.feb.encdec_layers {
            let spec = Conv2dSpec::new(c, c, (kt, kf), (st, sf), (1, 1), pad).unwrap();
            encoder.push(Conv2dLayer::new(pb, &format!("{name}.enc{i}"), spec));
        }
        let mut decoder = Vec::with_capacity(cfg.feb.encdec_layers);
        for i in 0..cfg.feb.encdec_layers {
            // decoder stage i inverts encoder stage (layers-1-i); the
            // output padding is pinned by the config-fixed chain
            let enc_idx = cfg.feb.encdec_layers - 1 - i;
            let fwd = Conv2dSpec::new(c, c, (kt, kf), (st, sf), (1, 1), pad).unwrap();
            let spec = ConvT2dSpec::inverting(&fwd, (1, chain[enc_idx])).unwrap();
            decoder.push(ConvT2dLayer::new(pb, &format!("{name}.dec{i}"), spec));
        }
        let bottleneck = *chain.last().unwrap();
        let lstm = Lstm::new(
            pb,
            &format!("{name}.lstm"),
            LstmSpec { input_dim: bottleneck * c, hidden_dim: bottleneck * c },
        );
        UBlock { encoder, decoder, lstm, chain, channels: c }
    }

    /// `x` is `[T, F, C]` with `F` equal to the configured full
    /// resolution; returns the same shape.
    pub fn forward<R: Real>(&self, sess: &mut Session<R>, x: TensorId) -> TensorId {
        let shape = sess.tape.shape(x).to_vec();
        assert_eq!(shape[1], self.chain[0], "u-block frequency size");
        assert_eq!(shape[2], self.channels, "u-block channels");
        let t = shape[0];

        let mut skips = Vec::with_capacity(self.encoder.len());
        let mut h = x;
        for enc in &self.encoder {
            let y = enc.forward(sess, h);
            h = sess.tape.elu(y);
            skips.push(h);
        }

        let fb = *self.chain.last().unwrap();
        let flat = sess.tape.reshape(h, &[t, fb * self.channels]);
        let seq = self.lstm.forward(sess, flat).expect("bottleneck dims fixed at build");
        h = sess.tape.reshape(seq, &[t, fb, self.channels]);

        let n = self.decoder.len();
        for (i, dec) in self.decoder.iter().enumerate() {
            let y = dec.forward(sess, h);
            if i + 1 < n {
                // skip from the encoder stage that produced this size
                let skip = skips[n - 2 - i];
                let added = sess.tape.add(y, skip);
                h = sess.tape.elu(added);
            } else {
                h = y; // final stage is linear, back at full resolution
            }
        }
        h
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{finite_difference_check, Tape};
    use crate::layers::ParamStore;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn small_cfg() -> ModelConfig {
        let mut cfg = ModelConfig::toy();
        cfg.feb.channels = 2;
        cfg.mb.channels = 2;
        cfg.comeb.channels = 2;
        cfg
    }

    fn build(cfg: &ModelConfig, seed: u64) -> (ParamStore<f64>, UBlock) {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut pb = ParamBuilder::new(&mut store, &mut rng);
        let ub = UBlock::new(&mut pb, "ub", cfg);
        (store, ub)
    }

    #[test]
    fn output_shape_equals_input_shape() {
        let cfg = ModelConfig::desk();
        let (store, ub) = build(&cfg, 1);
        let mut tape = Tape::new();
        let mut sess = Session::new(&mut tape, &store, true);
        let x = sess.tape.leaf(vec![0.01; 3 * 257 * 8], &[3, 257, 8], false);
        let y = ub.forward(&mut sess, x);
        assert_eq!(sess.tape.shape(y), &[3, 257, 8]);
    }

    #[test]
    fn zero_input_zero_biases_gives_zero_output() {
        let cfg = small_cfg();
        let (store, ub) = build(&cfg, 2);
        // biases are zero-initialized already; zero input must map to zero
        let mut tape = Tape::new();
        let mut sess = Session::new(&mut tape, &store, true);
        let x = sess.tape.leaf(vec![0.0; 2 * 33 * 2], &[2, 33, 2], false);
        let y = ub.forward(&mut sess, x);
        assert!(sess.tape.value(y).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn matches_stage_by_stage_recomputation() {
        // compose the stages independently on a second tape and compare
        let cfg = small_cfg();
        let (store, ub) = build(&cfg, 3);
        let mut r = ChaCha8Rng::seed_from_u64(4);
        let x0: Vec<f64> = (0..2 * 33 * 2).map(|_| r.gen_range(-0.5..0.5)).collect();

        let mut tape = Tape::new();
        let mut sess = Session::new(&mut tape, &store, true);
        let x = sess.tape.leaf(x0.clone(), &[2, 33, 2], false);
        let y = ub.forward(&mut sess, x);
        let got = sess.tape.value(y).to_vec();

        let mut tape2 = Tape::new();
        let mut sess2 = Session::new(&mut tape2, &store, true);
        let x2 = sess2.tape.leaf(x0, &[2, 33, 2], false);
        let mut skips = Vec::new();
        let mut h = x2;
        for enc in &ub.encoder {
            let y = enc.forward(&mut sess2, h);
            h = sess2.tape.elu(y);
            skips.push(h);
        }
        let fb = *ub.chain.last().unwrap();
        let flat = sess2.tape.reshape(h, &[2, fb * 2]);
        let seq = ub.lstm.forward(&mut sess2, flat).unwrap();
        h = sess2.tape.reshape(seq, &[2, fb, 2]);
        for (i, dec) in ub.decoder.iter().enumerate() {
            let y = dec.forward(&mut sess2, h);
            h = if i + 1 < ub.decoder.len() {
                let s = skips[ub.decoder.len() - 2 - i];
                let a = sess2.tape.add(y, s);
                sess2.tape.elu(a)
            } else {
                y
            };
        }
        let want = sess2.tape.value(h).to_vec();
        for (a, b) in got.iter().zip(&want) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn gradients_flow_end_to_end() {
        let cfg = small_cfg();
        let (store, ub) = build(&cfg, 5);
        let mut r = ChaCha8Rng::seed_from_u64(6);
        let x: Vec<f64> = (0..33 * 2).map(|_| r.gen_range(-0.5..0.5)).collect();
        let err = finite_difference_check(
            |t, l| {
                let mut sess = Session::new(t, &store, true);
                let y = ub.forward(&mut sess, l);
                let sq = sess.tape.mul(y, y);
                sess.tape.sum(sq)
            },
            &x,
            &[1, 33, 2],
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-6, "u-block input grad {err:.2e}");
    }
}
