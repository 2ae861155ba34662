//! Complex-domain path: the noisy real/imaginary input concatenated
//! with a 1x1 projection of the front-end features, run through the
//! strided trunk with groups of dilated units, out to two channels
//! (refined real and imaginary parts).

use crate::autodiff::{Conv2dSpec, TensorId};
use crate::layers::{Conv2dLayer, ParamBuilder, Session};
use crate::num::Real;

use super::config::ModelConfig;
use super::gru::GruDilated;
use super::mask_block::EncDec;

pub struct Comeb {
    feb_proj: Conv2dLayer,
    trunk: EncDec,
    groups: Vec<Vec<GruDilated>>,
    out_conv: Conv2dLayer,
    pub bins: usize,
    left_kernel: usize,
}

impl Comeb {
    pub fn new<R: Real>(pb: &mut ParamBuilder<R>, name: &str, cfg: &ModelConfig) -> Self {
        let c = cfg.comeb.channels;
        let proj_spec = Conv2dSpec::new(
            cfg.feb.channels,
            cfg.comeb.feb_proj_channels,
            (1, 1),
            (1, 1),
            (1, 1),
            (0, 0),
        )
        .unwrap();
        let feb_proj = Conv2dLayer::new(pb, &format!("{name}.feb_proj"), proj_spec);
        let trunk = EncDec::new(
            pb,
            name,
            cfg,
            2 + cfg.comeb.feb_proj_channels,
            c,
            cfg.comeb.kernel,
            cfg.comeb.encdec_layers,
        );
        let mut groups = Vec::with_capacity(cfg.comeb.gru_groups);
        for g in 0..cfg.comeb.gru_groups {
            let mut units = Vec::with_capacity(cfg.comeb.grus_per_group);
            for (u, &d) in cfg.comeb.dilations.iter().enumerate() {
                units.push(GruDilated::new(pb, &format!("{name}.group{g}.gru{u}"), cfg, d));
            }
            groups.push(units);
        }
        let out_spec = Conv2dSpec::new(c, 2, (1, 1), (1, 1), (1, 1), (0, 0)).unwrap();
        let out_conv = Conv2dLayer::new(pb, &format!("{name}.out"), out_spec);
        Comeb { feb_proj, trunk, groups, out_conv, bins: cfg.bins(), left_kernel: cfg.comeb.left_kernel }
    }

    /// Analytic half-width of the temporal receptive field contributed
    /// by the dilated stack (the trunk convolutions have kernel 1 on
    /// time and add nothing).
    pub fn receptive_half_width(&self) -> usize {
        self.groups
            .iter()
            .flatten()
            .map(|u| u.receptive_half_width(self.left_kernel, self.left_kernel))
            .sum()
    }

    /// `noisy` is the `[T, F, 2]` input spectrogram, `features` the
    /// `[T, F, C]` front-end output; returns refined `[T, F, 2]`.
    pub fn forward<R: Real>(
        &self,
        sess: &mut Session<R>,
        noisy: TensorId,
        features: TensorId,
    ) -> TensorId {
        let shape = sess.tape.shape(noisy).to_vec();
        assert_eq!(shape[1], self.bins, "complex path frequency size");
        assert_eq!(shape[2], 2, "noisy input must be [T, F, 2]");

        let proj = self.feb_proj.forward(sess, features);
        let x = sess.tape.concat_axis(&[noisy, proj], 2);
        let enc_outs = self.trunk.encode(sess, x);
        let mut h = *enc_outs.last().unwrap();
        for group in &self.groups {
            for unit in group {
                h = unit.forward(sess, h);
            }
        }
        let decoded = self.trunk.decode(sess, h, &enc_outs);
        self.out_conv.forward(sess, decoded)
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
        cfg.comeb.channels = 2;
        // two groups of short dilations keep the receptive field probe
        // inside a manageable clip
        cfg.comeb.gru_groups = 2;
        cfg.comeb.grus_per_group = 2;
        cfg.comeb.dilations = vec![1, 2];
        cfg
    }

    fn build(cfg: &ModelConfig, seed: u64) -> (ParamStore<f64>, Comeb) {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut pb = ParamBuilder::new(&mut store, &mut rng);
        let c = Comeb::new(&mut pb, "comeb", cfg);
        (store, c)
    }

    #[test]
    fn output_is_t_f_2() {
        let cfg = small_cfg();
        let (store, comeb) = build(&cfg, 1);
        let mut r = ChaCha8Rng::seed_from_u64(2);
        let t = 3usize;
        let noisy: Vec<f64> = (0..t * 33 * 2).map(|_| r.gen_range(-1.0..1.0)).collect();
        let feats: Vec<f64> = (0..t * 33 * 2).map(|_| r.gen_range(-1.0..1.0)).collect();
        let mut tape = Tape::new();
        let mut sess = Session::new(&mut tape, &store, true);
        let n = sess.tape.leaf(noisy, &[t, 33, 2], false);
        let f = sess.tape.leaf(feats, &[t, 33, 2], false);
        let y = comeb.forward(&mut sess, n, f);
        assert_eq!(sess.tape.shape(y), &[t, 33, 2]);
    }

    #[test]
    fn zero_input_zero_biases_gives_zero() {
        let cfg = small_cfg();
        let (store, comeb) = build(&cfg, 3);
        let mut tape = Tape::new();
        let mut sess = Session::new(&mut tape, &store, true);
        let n = sess.tape.leaf(vec![0.0; 2 * 33 * 2], &[2, 33, 2], false);
        let f = sess.tape.leaf(vec![0.0; 2 * 33 * 2], &[2, 33, 2], false);
        let y = comeb.forward(&mut sess, n, f);
        assert!(sess.tape.value(y).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn perturbation_respects_analytic_receptive_field() {
        let cfg = small_cfg();
        let (store, comeb) = build(&cfg, 5);
        // per unit: left k5 (+-2) plus dilated k5 with d in {1,2}
        // group: (2+2) + (2+4) = 10; two groups -> 20 frames half-width
        assert_eq!(comeb.receptive_half_width(), 20);
        let rf = comeb.receptive_half_width();

        let t = 64usize;
        let mut r = ChaCha8Rng::seed_from_u64(6);
        let base_noisy: Vec<f64> = (0..t * 33 * 2).map(|_| r.gen_range(-0.5..0.5)).collect();
        let features = vec![0.0f64; t * 33 * 2];

        // inference mode: batch statistics would couple every frame, but
        // the architecture's temporal reach is what's under test here
        let run = |noisy: Vec<f64>| {
            let mut tape = Tape::new();
            let mut sess = Session::new(&mut tape, &store, false);
            let n = sess.tape.leaf(noisy, &[t, 33, 2], false);
            let f = sess.tape.leaf(features.clone(), &[t, 33, 2], false);
            let y = comeb.forward(&mut sess, n, f);
            sess.tape.value(y).to_vec()
        };
        let base_out = run(base_noisy.clone());

        // poke one frame in the middle and look at which output frames move
        let probe_frame = t / 2;
        let mut poked = base_noisy;
        for i in 0..33 * 2 {
            poked[probe_frame * 33 * 2 + i] += 0.25;
        }
        let poked_out = run(poked);

        let frame_delta: Vec<f64> = (0..t)
            .map(|ti| {
                (0..33 * 2)
                    .map(|i| (poked_out[ti * 33 * 2 + i] - base_out[ti * 33 * 2 + i]).abs())
                    .fold(0.0, f64::max)
            })
            .collect();

        let inside_max = frame_delta[probe_frame.saturating_sub(2)..=probe_frame + 2]
            .iter()
            .cloned()
            .fold(0.0, f64::max);
        assert!(inside_max > 1e-6, "probe must move its own frame");
        for (ti, &d) in frame_delta.iter().enumerate() {
            let dist = ti.abs_diff(probe_frame);
            if dist > rf {
                assert_eq!(d, 0.0, "frame {ti} at distance {dist} is beyond the field {rf}");
            } else if dist <= 2 {
                assert!(d > 0.0, "frame {ti} inside the field must respond");
            }
        }
    }
}
