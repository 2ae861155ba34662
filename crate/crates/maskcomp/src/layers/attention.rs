//! Multi-head self-attention along the time or frequency axis of a
//! `[T, F, C]` map. The channel vector at each position is the model
//! dimension; the chosen axis is the sequence.

use super::params::{ParamBuilder, ParamId, Session};
use super::LayerError;
use crate::autodiff::TensorId;
use crate::num::Real;

/// Attention logit scaling. `HeadDim` is the conventional
/// `1/sqrt(d_k)`; `SeqLen` divides by `sqrt(L)` instead, which ties the
/// attention temperature to the clip length (kept available for fidelity
/// experiments, off by default).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AttnScale {
    #[default]
    HeadDim,
    SeqLen,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AttnAxis {
    Time,
    Frequency,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MhsaConfig {
    pub heads: usize,
    pub model_dim: usize,
    pub axis: AttnAxis,
    pub scale: AttnScale,
}

impl MhsaConfig {
    pub fn new(heads: usize, model_dim: usize, axis: AttnAxis) -> Result<Self, LayerError> {
        if heads == 0 || model_dim % heads != 0 {
            return Err(LayerError::HeadsDontDivide { dim: model_dim, heads });
        }
        Ok(MhsaConfig { heads, model_dim, axis, scale: AttnScale::default() })
    }

    pub fn with_scale(mut self, scale: AttnScale) -> Self {
        self.scale = scale;
        self
    }
}

pub struct Mhsa {
    pub cfg: MhsaConfig,
    w_query: ParamId,
    w_key: ParamId,
    w_value: ParamId,
    w_out: ParamId,
}

impl Mhsa {
    pub fn new<R: Real>(pb: &mut ParamBuilder<R>, name: &str, cfg: MhsaConfig) -> Self {
        let d = cfg.model_dim;
        Mhsa {
            cfg,
            w_query: pb.uniform(format!("{name}.w_query"), &[d, d], d),
            w_key: pb.uniform(format!("{name}.w_key"), &[d, d], d),
            w_value: pb.uniform(format!("{name}.w_value"), &[d, d], d),
            w_out: pb.uniform(format!("{name}.w_out"), &[d, d], d),
        }
    }

    /// Self-attention over a `[S, D]` sequence. Also returns the per-head
    /// attention maps (each `[S, S]`, rows summing to 1) for inspection.
    pub fn forward_seq_detailed<R: Real>(
        &self,
        sess: &mut Session<R>,
        x: TensorId,
    ) -> Result<(TensorId, Vec<TensorId>), LayerError> {
        let shape = sess.tape.shape(x).to_vec();
        assert_eq!(shape.len(), 2, "mhsa expects [S, D]");
        let (s, d) = (shape[0], shape[1]);
        if d != self.cfg.model_dim {
            return Err(LayerError::DimMismatch {
                what: "mhsa input",
                expected: self.cfg.model_dim,
                got: d,
            });
        }
        let dh = d / self.cfg.heads;
        let scale_denom = match self.cfg.scale {
            AttnScale::HeadDim => (dh as f64).sqrt(),
            AttnScale::SeqLen => (s as f64).sqrt(),
        };
        let inv_scale = R::of(1.0 / scale_denom);

        let wq = sess.param(self.w_query);
        let wk = sess.param(self.w_key);
        let wv = sess.param(self.w_value);
        let wo = sess.param(self.w_out);
        let q = sess.tape.matmul(x, wq);
        let k = sess.tape.matmul(x, wk);
        let v = sess.tape.matmul(x, wv);

        let mut heads = Vec::with_capacity(self.cfg.heads);
        let mut maps = Vec::with_capacity(self.cfg.heads);
        for h in 0..self.cfg.heads {
            let (lo, hi) = (h * dh, (h + 1) * dh);
            let qh = sess.tape.slice_axis(q, 1, lo, hi);
            let kh = sess.tape.slice_axis(k, 1, lo, hi);
            let vh = sess.tape.slice_axis(v, 1, lo, hi);
            let kt = sess.tape.transpose2d(kh);
            let scores = sess.tape.matmul(qh, kt);
            let scaled = sess.tape.scale(scores, inv_scale);
            let attn = sess.tape.softmax_rows(scaled);
            maps.push(attn);
            heads.push(sess.tape.matmul(attn, vh));
        }
        let merged = sess.tape.concat_axis(&heads, 1);
        Ok((sess.tape.matmul(merged, wo), maps))
    }

    pub fn forward_seq<R: Real>(
        &self,
        sess: &mut Session<R>,
        x: TensorId,
    ) -> Result<TensorId, LayerError> {
        self.forward_seq_detailed(sess, x).map(|(y, _)| y)
    }

    /// Apply along the configured axis of a `[T, F, C]` map: one
    /// sequence per position of the other axis, channels as features.
    /// The frequency variant works on the transposed view.
    pub fn forward_map<R: Real>(
        &self,
        sess: &mut Session<R>,
        x: TensorId,
    ) -> Result<TensorId, LayerError> {
        let shape = sess.tape.shape(x).to_vec();
        assert_eq!(shape.len(), 3, "mhsa map expects [T, F, C]");
        let (t, f, c) = (shape[0], shape[1], shape[2]);
        match self.cfg.axis {
            AttnAxis::Time => {
                let swapped = sess.tape.swap_tf(x); // [F, T, C]
                let mut rows = Vec::with_capacity(f);
                for fi in 0..f {
                    let row = sess.tape.slice_axis(swapped, 0, fi, fi + 1);
                    let seq = sess.tape.reshape(row, &[t, c]);
                    let y = self.forward_seq(sess, seq)?;
                    rows.push(sess.tape.reshape(y, &[1, t, c]));
                }
                let stacked = sess.tape.concat_axis(&rows, 0); // [F, T, C]
                Ok(sess.tape.swap_tf(stacked))
            }
            AttnAxis::Frequency => {
                let mut rows = Vec::with_capacity(t);
                for ti in 0..t {
                    let row = sess.tape.slice_axis(x, 0, ti, ti + 1);
                    let seq = sess.tape.reshape(row, &[f, c]);
                    let y = self.forward_seq(sess, seq)?;
                    rows.push(sess.tape.reshape(y, &[1, f, c]));
                }
                Ok(sess.tape.concat_axis(&rows, 0))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{finite_difference_check, Tape};
    use crate::layers::ParamStore;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn fixture(heads: usize, dim: usize, axis: AttnAxis, seed: u64) -> (ParamStore<f64>, Mhsa) {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut pb = ParamBuilder::new(&mut store, &mut rng);
        let cfg = MhsaConfig::new(heads, dim, axis).unwrap();
        let mhsa = Mhsa::new(&mut pb, "attn", cfg);
        (store, mhsa)
    }

    fn set_identity(store: &mut ParamStore<f64>, name: &str, d: usize) {
        let id = store.find(name).unwrap();
        let mut eye = vec![0.0; d * d];
        for i in 0..d {
            eye[i * d + i] = 1.0;
        }
        store.set_values(id, eye);
    }

    #[test]
    fn config_rejects_indivisible_heads() {
        assert_eq!(
            MhsaConfig::new(3, 4, AttnAxis::Time).unwrap_err(),
            LayerError::HeadsDontDivide { dim: 4, heads: 3 }
        );
    }

    #[test]
    fn length_one_sequence_is_projection_only() {
        // softmax over a single key is 1, so y = x W^V W^out
        let (store, mhsa) = fixture(2, 4, AttnAxis::Time, 3);
        let x0 = vec![0.4, -0.2, 0.9, 0.1];

        let mut tape = Tape::new();
        let mut sess = Session::new(&mut tape, &store, true);
        let x = sess.tape.leaf(x0.clone(), &[1, 4], false);
        let y = mhsa.forward_seq(&mut sess, x).unwrap();
        let got = sess.tape.value(y).to_vec();

        let wv = store.values(store.find("attn.w_value").unwrap());
        let wo = store.values(store.find("attn.w_out").unwrap());
        let mut xv = [0.0f64; 4];
        for j in 0..4 {
            for i in 0..4 {
                xv[j] += x0[i] * wv[i * 4 + j];
            }
        }
        let mut expect = [0.0f64; 4];
        for j in 0..4 {
            for i in 0..4 {
                expect[j] += xv[i] * wo[i * 4 + j];
            }
        }
        for (a, e) in got.iter().zip(&expect) {
            assert!((a - e).abs() < 1e-12);
        }
    }

    #[test]
    fn equal_rows_give_uniform_attention_and_equal_outputs() {
        let (store, mhsa) = fixture(2, 4, AttnAxis::Time, 5);
        let row = [0.3, -0.8, 0.5, 0.2];
        let x0: Vec<f64> = row.iter().cloned().cycle().take(12).collect();

        let mut tape = Tape::new();
        let mut sess = Session::new(&mut tape, &store, true);
        let x = sess.tape.leaf(x0, &[3, 4], false);
        let (y, maps) = mhsa.forward_seq_detailed(&mut sess, x).unwrap();
        for &m in &maps {
            for w in sess.tape.value(m) {
                assert!((w - 1.0 / 3.0).abs() < 1e-12, "uniform weights");
            }
        }
        let out = sess.tape.value(y);
        for r in 1..3 {
            for c in 0..4 {
                assert!((out[c] - out[r * 4 + c]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn attention_rows_sum_to_one() {
        let (store, mhsa) = fixture(2, 4, AttnAxis::Time, 7);
        let mut r = ChaCha8Rng::seed_from_u64(8);
        let x0: Vec<f64> = (0..20).map(|_| r.gen_range(-2.0..2.0)).collect();
        let mut tape = Tape::new();
        let mut sess = Session::new(&mut tape, &store, true);
        let x = sess.tape.leaf(x0, &[5, 4], false);
        let (_, maps) = mhsa.forward_seq_detailed(&mut sess, x).unwrap();
        assert_eq!(maps.len(), 2);
        for &m in &maps {
            for row in sess.tape.value(m).chunks(5) {
                let s: f64 = row.iter().sum();
                assert!((s - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn two_by_two_identity_weights_match_hand_computation() {
        // one head, D=2, all projections identity, scale sqrt(2)
        // (head-dim and the sequence-length variant agree here: d_k=L=2)
        let (mut store, mhsa) = fixture(1, 2, AttnAxis::Time, 9);
        for name in ["attn.w_query", "attn.w_key", "attn.w_value", "attn.w_out"] {
            set_identity(&mut store, name, 2);
        }
        let x0 = vec![1.0, 0.0, 0.0, 1.0];

        let mut tape = Tape::new();
        let mut sess = Session::new(&mut tape, &store, true);
        let x = sess.tape.leaf(x0, &[2, 2], false);
        let y = mhsa.forward_seq(&mut sess, x).unwrap();
        let got = sess.tape.value(y).to_vec();

        // scores = X X^T / sqrt(2) = [[1,0],[0,1]]/sqrt(2)
        let s = 1.0 / 2.0f64.sqrt();
        let e = s.exp();
        let e0 = 1.0f64; // exp(0)
        let a_same = e / (e + e0);
        let a_other = e0 / (e + e0);
        // row 0 attends [a_same, a_other] over V = I rows
        let expect = [a_same, a_other, a_other, a_same];
        for (g, w) in got.iter().zip(&expect) {
            assert!((g - w).abs() < 1e-12, "{g} vs {w}");
        }

        // the paper-literal sqrt(L) scale gives the same numbers here
        let cfg = MhsaConfig::new(1, 2, AttnAxis::Time).unwrap().with_scale(AttnScale::SeqLen);
        let mut store2 = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut pb = ParamBuilder::new(&mut store2, &mut rng);
        let mhsa2 = Mhsa::new(&mut pb, "attn", cfg);
        for name in ["attn.w_query", "attn.w_key", "attn.w_value", "attn.w_out"] {
            set_identity(&mut store2, name, 2);
        }
        let mut tape2 = Tape::new();
        let mut sess2 = Session::new(&mut tape2, &store2, true);
        let x2 = sess2.tape.leaf(vec![1.0, 0.0, 0.0, 1.0], &[2, 2], false);
        let y2 = mhsa2.forward_seq(&mut sess2, x2).unwrap();
        assert_eq!(sess2.tape.value(y2), got.as_slice());
    }

    #[test]
    fn permutation_equivariance_along_sequence() {
        let (store, mhsa) = fixture(2, 4, AttnAxis::Time, 21);
        let mut r = ChaCha8Rng::seed_from_u64(22);
        let x0: Vec<f64> = (0..16).map(|_| r.gen_range(-1.0..1.0)).collect();
        let perm = [2usize, 0, 3, 1];
        let permuted: Vec<f64> =
            perm.iter().flat_map(|&p| x0[p * 4..(p + 1) * 4].to_vec()).collect();

        let run = |data: Vec<f64>| {
            let mut tape = Tape::new();
            let mut sess = Session::new(&mut tape, &store, true);
            let x = sess.tape.leaf(data, &[4, 4], false);
            let y = mhsa.forward_seq(&mut sess, x).unwrap();
            sess.tape.value(y).to_vec()
        };
        let base = run(x0);
        let shuffled = run(permuted);
        for (row, &p) in perm.iter().enumerate() {
            for c in 0..4 {
                assert!(
                    (shuffled[row * 4 + c] - base[p * 4 + c]).abs() < 1e-12,
                    "row {row} must equal original row {p}"
                );
            }
        }
    }

    #[test]
    fn time_and_frequency_views_agree_on_single_position_map() {
        // a 1x1 map has identical time and frequency sequences
        let (store, time) = fixture(2, 4, AttnAxis::Time, 31);
        let mut store2 = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let mut pb = ParamBuilder::new(&mut store2, &mut rng);
        let freq = Mhsa::new(&mut pb, "attn", MhsaConfig::new(2, 4, AttnAxis::Frequency).unwrap());

        let x0 = vec![0.2, -0.4, 0.6, 0.8];
        let run = |store: &ParamStore<f64>, m: &Mhsa| {
            let mut tape = Tape::new();
            let mut sess = Session::new(&mut tape, store, true);
            let x = sess.tape.leaf(x0.clone(), &[1, 1, 4], false);
            let y = m.forward_map(&mut sess, x).unwrap();
            sess.tape.value(y).to_vec()
        };
        assert_eq!(run(&store, &time), run(&store2, &freq));
    }

    #[test]
    fn map_attention_gradients_match_oracle() {
        let (store, mhsa) = fixture(2, 4, AttnAxis::Time, 41);
        let mut r = ChaCha8Rng::seed_from_u64(42);
        let x: Vec<f64> = (0..24).map(|_| r.gen_range(-1.0..1.0)).collect();

        let err = finite_difference_check(
            |t, l| {
                let mut sess = Session::new(t, &store, true);
                let y = mhsa.forward_map(&mut sess, l).unwrap();
                let sq = sess.tape.mul(y, y);
                sess.tape.sum(sq)
            },
            &x,
            &[3, 2, 4],
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-6, "mhsa map input grad {err:.2e}");

        let wid = store.find("attn.w_query").unwrap();
        let w0 = store.values(wid).to_vec();
        let xc = x.clone();
        let err = finite_difference_check(
            |t, l| {
                let input = t.constant(xc.clone(), &[3, 2, 4]);
                let mut sess = Session::new(t, &store, true);
                sess.substitute(wid, l);
                let y = mhsa.forward_map(&mut sess, input).unwrap();
                let sq = sess.tape.mul(y, y);
                sess.tape.sum(sq)
            },
            &w0,
            &[4, 4],
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-6, "mhsa query weight grad {err:.2e}");
    }
}
