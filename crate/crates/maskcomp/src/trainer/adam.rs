//! Bias-corrected Adam over a parameter store.

use crate::layers::{ParamId, ParamStore};
use crate::num::Real;

use super::TrainError;

#[derive(Debug, Clone, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// First/second moment accumulators, one pair per parameter entry
/// (empty for non-trainable state).
#[derive(Debug, Clone)]
pub struct OptimState<R: Real> {
    pub cfg: AdamConfig,
    pub step: u64,
    pub m: Vec<Vec<R>>,
    pub v: Vec<Vec<R>>,
}

impl<R: Real> OptimState<R> {
    pub fn new(store: &ParamStore<R>, cfg: AdamConfig) -> Self {
        let mut m = Vec::with_capacity(store.len());
        let mut v = Vec::with_capacity(store.len());
        for (_, e) in store.iter() {
            let n = if e.trainable { e.values.len() } else { 0 };
            m.push(vec![R::zero(); n]);
            v.push(vec![R::zero(); n]);
        }
        OptimState { cfg, step: 0, m, v }
    }

    /// One update over `(param, gradient)` pairs. Rejects non-finite
    /// gradients before touching any parameter, so a poisoned step never
    /// half-applies.
    pub fn apply(
        &mut self,
        store: &mut ParamStore<R>,
        grads: &[(ParamId, Vec<R>)],
        lr: f64,
    ) -> Result<(), TrainError> {
        for (id, g) in grads {
            let e = store.entry(*id);
            if g.len() != e.values.len() {
                return Err(TrainError::GradShape {
                    param: e.name.clone(),
                    got: g.len(),
                    want: e.values.len(),
                });
            }
            if let Some(i) = g.iter().position(|v| !v.is_finite()) {
                return Err(TrainError::NonFiniteGrad { param: e.name.clone(), index: i });
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let b1 = R::of(self.cfg.beta1);
        let b2 = R::of(self.cfg.beta2);
        let one = R::one();
        let bc1 = one - b1.powi(t);
        let bc2 = one - b2.powi(t);
        let lr = R::of(lr);
        let eps = R::of(self.cfg.eps);
        for (id, g) in grads {
            let m = &mut self.m[id.0];
            let v = &mut self.v[id.0];
            debug_assert_eq!(m.len(), g.len(), "optimizer state shape");
            let params = store.values_mut(*id);
            for i in 0..g.len() {
                m[i] = b1 * m[i] + (one - b1) * g[i];
                v[i] = b2 * v[i] + (one - b2) * g[i] * g[i];
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                params[i] = params[i] - lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// Scale gradients in place so their global L2 norm does not exceed
/// `max_norm`. Returns the pre-clip norm.
pub fn clip_global_norm<R: Real>(grads: &mut [(ParamId, Vec<R>)], max_norm: f64) -> f64 {
    let total: f64 = grads
        .iter()
        .flat_map(|(_, g)| g.iter())
        .map(|v| v.as_f64() * v.as_f64())
        .sum();
    let norm = total.sqrt();
    if norm > max_norm && norm > 0.0 {
        let scale = R::of(max_norm / norm);
        for (_, g) in grads.iter_mut() {
            for v in g.iter_mut() {
                *v *= scale;
            }
        }
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_store(p0: f64) -> (ParamStore<f64>, ParamId) {
        let mut store = ParamStore::new();
        let id = store.add("p".into(), vec![1], vec![p0], true);
        (store, id)
    }

    #[test]
    fn zero_gradient_keeps_parameters_but_advances_step() {
        let (mut store, id) = scalar_store(0.7);
        let mut opt = OptimState::new(&store, AdamConfig::default());
        opt.apply(&mut store, &[(id, vec![0.0])], 0.001).unwrap();
        assert_eq!(store.values(id), &[0.7]);
        assert_eq!(opt.step, 1);
    }

    #[test]
    fn first_step_moves_by_about_lr() {
        // bias correction makes the very first update ~lr for unit grads
        let (mut store, id) = scalar_store(0.0);
        let mut opt = OptimState::new(&store, AdamConfig::default());
        opt.apply(&mut store, &[(id, vec![1.0])], 0.001).unwrap();
        let p = store.values(id)[0];
        assert!((p + 0.001).abs() < 1e-6, "p = {p}");
    }

    #[test]
    fn two_steps_match_hand_rolled_recurrence() {
        let (mut store, id) = scalar_store(0.5);
        let mut opt = OptimState::new(&store, AdamConfig::default());
        let grads = [0.3f64, -0.2];
        for g in grads {
            opt.apply(&mut store, &[(id, vec![g])], 0.01).unwrap();
        }

        // hand roll
        let (b1, b2, eps, lr) = (0.9f64, 0.999, 1e-8, 0.01);
        let mut p = 0.5f64;
        let (mut m, mut v) = (0.0f64, 0.0f64);
        for (t, g) in grads.iter().enumerate() {
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            let mh = m / (1.0 - b1.powi(t as i32 + 1));
            let vh = v / (1.0 - b2.powi(t as i32 + 1));
            p -= lr * mh / (vh.sqrt() + eps);
        }
        assert!((store.values(id)[0] - p).abs() < 1e-12);
    }

    #[test]
    fn non_finite_gradient_aborts_without_touching_params() {
        let mut store = ParamStore::new();
        let a = store.add("a".into(), vec![1], vec![1.0], true);
        let b = store.add("b".into(), vec![1], vec![2.0], true);
        let mut opt = OptimState::new(&store, AdamConfig::default());
        let err = opt
            .apply(&mut store, &[(a, vec![0.5]), (b, vec![f64::NAN])], 0.001)
            .unwrap_err();
        assert!(matches!(err, TrainError::NonFiniteGrad { index: 0, .. }));
        assert_eq!(store.values(a), &[1.0], "no partial application");
        assert_eq!(opt.step, 0);
    }

    #[test]
    fn grad_shape_mismatch_rejected() {
        let (mut store, id) = scalar_store(0.0);
        let mut opt = OptimState::new(&store, AdamConfig::default());
        assert!(matches!(
            opt.apply(&mut store, &[(id, vec![0.1, 0.2])], 0.001),
            Err(TrainError::GradShape { .. })
        ));
    }

    #[test]
    fn global_norm_clip() {
        let mut store = ParamStore::new();
        let a = store.add("a".into(), vec![2], vec![0.0; 2], true);
        let mut grads = vec![(a, vec![3.0f64, 4.0])];
        let norm = clip_global_norm(&mut grads, 5.0);
        assert_eq!(norm, 5.0);
        assert_eq!(grads[0].1, vec![3.0, 4.0], "at the limit nothing changes");

        let mut grads = vec![(a, vec![6.0f64, 8.0])];
        let norm = clip_global_norm(&mut grads, 5.0);
        assert_eq!(norm, 10.0);
        let clipped: f64 = grads[0].1.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((clipped - 5.0).abs() < 1e-12);
    }
}
