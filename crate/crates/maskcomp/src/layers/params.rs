//! Named parameter storage and the per-forward session.
//!
//! Parameters live in a [`ParamStore`] owned by the model across steps.
//! Each forward pass opens a [`Session`] over a fresh tape; parameters
//! are registered as differentiable leaves on first use and memoized for
//! the rest of the pass. A session can substitute one parameter with an
//! externally provided leaf, which is how the finite-difference harness
//! probes individual weight tensors.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Tape, TensorId};
use crate::num::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamId(pub(crate) usize);

#[derive(Debug, Clone)]
pub struct ParamEntry<R: Real> {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<R>,
    /// Trainable entries receive optimizer updates; the rest is layer
    /// state (e.g. batch-norm running statistics) that still rides along
    /// in checkpoints.
    pub trainable: bool,
}

#[derive(Debug, Clone, Default)]
pub struct ParamStore<R: Real> {
    entries: Vec<ParamEntry<R>>,
}

impl<R: Real> ParamStore<R> {
    pub fn new() -> Self {
        ParamStore { entries: Vec::new() }
    }

    pub fn add(
        &mut self,
        name: String,
        shape: Vec<usize>,
        values: Vec<R>,
        trainable: bool,
    ) -> ParamId {
        assert_eq!(shape.iter().product::<usize>(), values.len(), "param {name}: shape/values");
        self.add_entry(name, shape, values, trainable)
    }

    /// Shape-only entry (no storage); used for parameter accounting at
    /// scales too large to materialize.
    pub fn add_shape(&mut self, name: String, shape: Vec<usize>, trainable: bool) -> ParamId {
        self.add_entry(name, shape, Vec::new(), trainable)
    }

    fn add_entry(
        &mut self,
        name: String,
        shape: Vec<usize>,
        values: Vec<R>,
        trainable: bool,
    ) -> ParamId {
        assert!(
            self.entries.iter().all(|e| e.name != name),
            "duplicate parameter name {name}"
        );
        let id = ParamId(self.entries.len());
        self.entries.push(ParamEntry { name, shape, values, trainable });
        id
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entry(&self, id: ParamId) -> &ParamEntry<R> {
        &self.entries[id.0]
    }

    pub fn values(&self, id: ParamId) -> &[R] {
        &self.entries[id.0].values
    }

    pub fn set_values(&mut self, id: ParamId, values: Vec<R>) {
        assert_eq!(values.len(), self.entries[id.0].values.len());
        self.entries[id.0].values = values;
    }

    pub fn values_mut(&mut self, id: ParamId) -> &mut [R] {
        &mut self.entries[id.0].values
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &ParamEntry<R>)> {
        self.entries.iter().enumerate().map(|(i, e)| (ParamId(i), e))
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.entries.iter().position(|e| e.name == name).map(ParamId)
    }

    /// Total number of trainable scalars (from shapes, so this also
    /// works on shape-only stores).
    pub fn trainable_count(&self) -> usize {
        self.entries
            .iter()
            .filter(|e| e.trainable)
            .map(|e| e.shape.iter().product::<usize>())
            .sum()
    }
}

/// Creates parameters with the crate's init scheme: weights uniform in
/// +-sqrt(1/fan_in), biases and norm shifts zero, norm gains one. All
/// draws come from one seeded stream, so construction order fixes the
/// initialization bit for bit.
pub struct ParamBuilder<'a, R: Real> {
    pub store: &'a mut ParamStore<R>,
    pub rng: &'a mut ChaCha8Rng,
    materialize: bool,
}

impl<'a, R: Real> ParamBuilder<'a, R> {
    pub fn new(store: &'a mut ParamStore<R>, rng: &'a mut ChaCha8Rng) -> Self {
        ParamBuilder { store, rng, materialize: true }
    }

    /// Records names and shapes only. Lets callers enumerate parameters
    /// of configurations far too large to allocate.
    pub fn shape_only(store: &'a mut ParamStore<R>, rng: &'a mut ChaCha8Rng) -> Self {
        ParamBuilder { store, rng, materialize: false }
    }

    pub fn uniform(&mut self, name: String, shape: &[usize], fan_in: usize) -> ParamId {
        if !self.materialize {
            return self.store.add_shape(name, shape.to_vec(), true);
        }
        let bound = (1.0 / fan_in as f64).sqrt();
        let n: usize = shape.iter().product();
        let values = (0..n).map(|_| R::of(self.rng.gen_range(-bound..bound))).collect();
        self.store.add(name, shape.to_vec(), values, true)
    }

    pub fn zeros(&mut self, name: String, shape: &[usize]) -> ParamId {
        if !self.materialize {
            return self.store.add_shape(name, shape.to_vec(), true);
        }
        let n: usize = shape.iter().product();
        self.store.add(name, shape.to_vec(), vec![R::zero(); n], true)
    }

    pub fn ones(&mut self, name: String, shape: &[usize]) -> ParamId {
        if !self.materialize {
            return self.store.add_shape(name, shape.to_vec(), true);
        }
        let n: usize = shape.iter().product();
        self.store.add(name, shape.to_vec(), vec![R::one(); n], true)
    }

    /// Non-trainable layer state.
    pub fn state(&mut self, name: String, shape: &[usize], values: Vec<R>) -> ParamId {
        if !self.materialize {
            return self.store.add_shape(name, shape.to_vec(), false);
        }
        self.store.add(name, shape.to_vec(), values, false)
    }
}

/// One forward pass: a tape plus lazy parameter registration.
pub struct Session<'a, 'p, R: Real> {
    pub tape: &'a mut Tape<R>,
    store: &'p ParamStore<R>,
    registered: Vec<Option<TensorId>>,
    substituted: Option<(ParamId, TensorId)>,
    pub training: bool,
    state_updates: Vec<(ParamId, Vec<R>)>,
}

impl<'a, 'p, R: Real> Session<'a, 'p, R> {
    pub fn new(tape: &'a mut Tape<R>, store: &'p ParamStore<R>, training: bool) -> Self {
        Session {
            tape,
            store,
            registered: vec![None; store.len()],
            substituted: None,
            training,
            state_updates: Vec::new(),
        }
    }

    /// Route one parameter to an existing leaf instead of the store
    /// (finite-difference probing).
    pub fn substitute(&mut self, id: ParamId, leaf: TensorId) {
        assert_eq!(
            self.tape.numel(leaf),
            self.store.values(id).len(),
            "substitute: size mismatch for {}",
            self.store.entry(id).name
        );
        self.substituted = Some((id, leaf));
    }

    /// Tape leaf for a parameter, registering it on first use.
    pub fn param(&mut self, id: ParamId) -> TensorId {
        if let Some((pid, leaf)) = self.substituted {
            if pid == id {
                return leaf;
            }
        }
        if let Some(t) = self.registered[id.0] {
            return t;
        }
        let e = self.store.entry(id);
        let t = self.tape.leaf(e.values.clone(), &e.shape, e.trainable);
        self.registered[id.0] = Some(t);
        t
    }

    pub fn store(&self) -> &ParamStore<R> {
        self.store
    }

    /// Queue a state write (running statistics); applied by the caller
    /// after the pass so that forward stays pure.
    pub fn queue_state_update(&mut self, id: ParamId, values: Vec<R>) {
        self.state_updates.push((id, values));
    }

    pub fn take_state_updates(&mut self) -> Vec<(ParamId, Vec<R>)> {
        std::mem::take(&mut self.state_updates)
    }

    /// Gradient of a parameter after `backward`, zeros if it never
    /// entered the graph.
    pub fn param_grad(&self, id: ParamId) -> Vec<R> {
        match self.registered[id.0] {
            Some(t) => self
                .tape
                .grad(t)
                .map(|g| g.to_vec())
                .unwrap_or_else(|| vec![R::zero(); self.store.values(id).len()]),
            None => vec![R::zero(); self.store.values(id).len()],
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn init_is_seed_deterministic() {
        let build = || {
            let mut store = ParamStore::<f64>::new();
            let mut rng = ChaCha8Rng::seed_from_u64(42);
            let mut pb = ParamBuilder::new(&mut store, &mut rng);
            pb.uniform("w".into(), &[4, 4], 4);
            pb.zeros("b".into(), &[4]);
            store
        };
        let a = build();
        let b = build();
        assert_eq!(a.values(ParamId(0)), b.values(ParamId(0)));
        assert!(a.values(ParamId(1)).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn uniform_respects_fan_in_bound() {
        let mut store = ParamStore::<f64>::new();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut pb = ParamBuilder::new(&mut store, &mut rng);
        let w = pb.uniform("w".into(), &[100], 25);
        let bound = (1.0 / 25.0f64).sqrt();
        assert!(store.values(w).iter().all(|v| v.abs() < bound));
    }

    #[test]
    fn session_memoizes_and_substitutes() {
        let mut store = ParamStore::<f64>::new();
        let w = store.add("w".into(), vec![2], vec![1.0, 2.0], true);
        let mut tape = Tape::new();
        let mut sess = Session::new(&mut tape, &store, true);
        let a = sess.param(w);
        let b = sess.param(w);
        assert_eq!(a, b, "same leaf on repeated access");

        let mut tape2 = Tape::new();
        let leaf = tape2.leaf(vec![5.0, 6.0], &[2], true);
        let mut sess2 = Session::new(&mut tape2, &store, true);
        sess2.substitute(w, leaf);
        let got = sess2.param(w);
        assert_eq!(got, leaf);
    }

    #[test]
    fn trainable_count_skips_state() {
        let mut store = ParamStore::<f64>::new();
        store.add("w".into(), vec![3], vec![0.0; 3], true);
        store.add("rm".into(), vec![4], vec![0.0; 4], false);
        assert_eq!(store.trainable_count(), 3);
    }
}
