//! Optimization loop: per-step joint loss over seeded crops, Adam
//! updates with gradient clipping, learning rate halved after every
//! epoch, checkpointable at epoch boundaries.

mod adam;
mod checkpoint;

pub use adam::{clip_global_norm, AdamConfig, OptimState};
pub use checkpoint::{Checkpoint, CheckpointError, FORMAT_VERSION};

use std::collections::HashMap;
use std::path::PathBuf;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::autodiff::{AutodiffError, Tape};
use crate::blocks::{ConfigError, Model, ModelConfig};
use crate::data::{mix_at_snr, read_wav, Manifest, ManifestEntry, MixError, Split, WavError};
use crate::dsp::{istft_graph, stft, DspError, Waveform, SAMPLE_RATE};
use crate::layers::{ParamId, ParamStore, Session};
use crate::losses::{joint_loss_graph, LossConfig, LossError};
use crate::num::Real;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("train split is empty")]
    EmptySplit,
    #[error("gradient for `{param}` is non-finite at element {index}; step aborted")]
    NonFiniteGrad { param: String, index: usize },
    #[error("gradient shape for `{param}`: {got} values, parameter has {want}")]
    GradShape { param: String, got: usize, want: usize },
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Wav(#[from] WavError),
    #[error(transparent)]
    Mix(#[from] MixError),
    #[error(transparent)]
    Dsp(#[from] DspError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    /// Steps per epoch; `None` means one pass over the train split.
    pub steps_per_epoch: Option<usize>,
    pub seed: u64,
    /// Fixed-length training crops, in seconds.
    pub crop_seconds: f64,
    /// Initial learning rate; halved after every epoch.
    pub lr0: f64,
    /// Global-norm gradient clip; `None` disables.
    pub grad_clip: Option<f64>,
    pub loss: LossConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 1,
            steps_per_epoch: None,
            seed: 0,
            crop_seconds: 2.0,
            lr0: 0.001,
            grad_clip: Some(5.0),
            loss: LossConfig::default(),
        }
    }
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq)]
pub struct StepLog {
    pub epoch: u64,
    pub step_in_epoch: usize,
    pub global_step: u64,
    pub lr: f64,
    pub loss: f64,
}

/// A training run: model, parameters, optimizer, and schedule position.
pub struct TrainSession<R: Real> {
    pub model: Model,
    pub store: ParamStore<R>,
    pub optim: OptimState<R>,
    /// Completed epochs.
    pub epoch: u64,
    pub global_step: u64,
    pub seed: u64,
    lr0: f64,
    wave_cache: HashMap<PathBuf, Waveform<R>>,
}

impl<R: Real> TrainSession<R> {
    pub fn new(cfg: &ModelConfig, tcfg: &TrainConfig) -> Result<Self, TrainError> {
        tcfg.loss.validate()?;
        let (model, store) = Model::build::<R>(cfg, tcfg.seed)?;
        let optim = OptimState::new(&store, AdamConfig::default());
        Ok(TrainSession {
            model,
            store,
            optim,
            epoch: 0,
            global_step: 0,
            seed: tcfg.seed,
            lr0: tcfg.lr0,
            wave_cache: HashMap::new(),
        })
    }

    /// Resume from a checkpoint; the model config must reproduce the
    /// stored parameter set.
    pub fn resume(cfg: &ModelConfig, tcfg: &TrainConfig, ck: Checkpoint<R>) -> Result<Self, TrainError> {
        tcfg.loss.validate()?;
        let (model, fresh) = Model::build::<R>(cfg, ck.seed)?;
        ck.check_matches(&fresh)?;
        let optim = ck.optim_state(AdamConfig::default());
        Ok(TrainSession {
            model,
            store: ck.store,
            optim,
            epoch: ck.epoch,
            global_step: ck.step,
            seed: ck.seed,
            lr0: tcfg.lr0,
            wave_cache: HashMap::new(),
        })
    }

    /// `lr0 * 2^-epoch`, exact in binary floating point.
    pub fn current_lr(&self) -> f64 {
        self.lr0 * 0.5f64.powi(self.epoch as i32)
    }

    fn cached_wave(&mut self, path: &PathBuf) -> Result<Waveform<R>, TrainError> {
        if let Some(w) = self.wave_cache.get(path) {
            return Ok(w.clone());
        }
        let w = read_wav::<R>(path)?;
        self.wave_cache.insert(path.clone(), w.clone());
        Ok(w)
    }

    /// Deterministic per-step generator: a pure function of the base
    /// seed and the (epoch, step) position, so resumed runs replay the
    /// identical sequence.
    fn step_rng(&self, step_in_epoch: usize) -> ChaCha8Rng {
        let mixed = self
            .seed
            .wrapping_mul(0x9E37_79B9_7F4A_7C15)
            .wrapping_add(self.epoch.wrapping_mul(0x85EB_CA6B))
            .wrapping_add(step_in_epoch as u64);
        ChaCha8Rng::seed_from_u64(mixed)
    }

    /// One optimization step on one manifest entry. Returns the loss.
    pub fn train_step(
        &mut self,
        entry: &ManifestEntry,
        tcfg: &TrainConfig,
        step_in_epoch: usize,
    ) -> Result<f64, TrainError> {
        let clean_full = self.cached_wave(&entry.clean)?;
        let noise_full = self.cached_wave(&entry.noise)?;
        let mix = mix_at_snr(&clean_full, &noise_full, entry.snr_db, entry.seed)?;

        // fixed-length crop, seeded by the schedule position
        let crop_len = ((tcfg.crop_seconds * SAMPLE_RATE as f64) as usize)
            .min(mix.noisy.len())
            .max(self.model.config.stft.fft_size);
        let mut rng = self.step_rng(step_in_epoch);
        let max_off = mix.noisy.len() - crop_len;
        let off = if max_off > 0 { rng.gen_range(0..=max_off) } else { 0 };
        let noisy = Waveform::new(
            mix.noisy.samples[off..off + crop_len].to_vec(),
            SAMPLE_RATE,
        )?;
        let clean = Waveform::new(
            mix.clean.samples[off..off + crop_len].to_vec(),
            SAMPLE_RATE,
        )?;

        let stft_cfg = &self.model.config.stft;
        let noisy_spec = stft(&noisy, stft_cfg)?;
        let clean_spec = stft(&clean, stft_cfg)?;

        let lr = self.current_lr();
        let mut tape = Tape::<R>::new();
        let mut sess = Session::new(&mut tape, &self.store, true);
        let x = sess.tape.constant(noisy_spec.data.clone(), &[noisy_spec.frames, noisy_spec.bins, 2]);
        let est_spec = self.model.forward(&mut sess, x);
        let est_wave = istft_graph(sess.tape, est_spec, stft_cfg, crop_len)?;
        let loss = joint_loss_graph(
            sess.tape,
            est_spec,
            &clean_spec,
            est_wave,
            &clean.samples,
            &tcfg.loss,
        )?;
        let loss_value = sess.tape.value(loss)[0].as_f64();
        sess.tape.backward(loss)?;

        let trainable: Vec<ParamId> = self
            .store
            .iter()
            .filter(|(_, e)| e.trainable)
            .map(|(id, _)| id)
            .collect();
        let mut grads: Vec<(ParamId, Vec<R>)> =
            trainable.iter().map(|&id| (id, sess.param_grad(id))).collect();
        let state_updates = sess.take_state_updates();
        drop(sess);
        drop(tape);

        for (id, values) in state_updates {
            self.store.set_values(id, values);
        }
        if let Some(max_norm) = tcfg.grad_clip {
            clip_global_norm(&mut grads, max_norm);
        }
        self.optim.apply(&mut self.store, &grads, lr)?;
        self.global_step += 1;
        Ok(loss_value)
    }

    /// One epoch over the train split (or `steps_per_epoch` steps,
    /// cycling through the split). The learning rate is halved when the
    /// epoch completes.
    pub fn run_epoch(
        &mut self,
        manifest: &Manifest,
        tcfg: &TrainConfig,
        mut on_step: impl FnMut(&StepLog),
    ) -> Result<Vec<StepLog>, TrainError> {
        let entries = manifest.split(Split::Train);
        if entries.is_empty() {
            return Err(TrainError::EmptySplit);
        }
        let steps = tcfg.steps_per_epoch.unwrap_or(entries.len());
        let lr = self.current_lr();
        let mut logs = Vec::with_capacity(steps);
        for s in 0..steps {
            let entry = entries[s % entries.len()];
            let loss = self.train_step(entry, tcfg, s)?;
            let log = StepLog {
                epoch: self.epoch,
                step_in_epoch: s,
                global_step: self.global_step,
                lr,
                loss,
            };
            on_step(&log);
            logs.push(log);
        }
        self.epoch += 1;
        Ok(logs)
    }

    /// Snapshot for [`Checkpoint::save`].
    pub fn checkpoint(&self, config_text: String) -> Checkpoint<R> {
        Checkpoint::capture(
            &self.store,
            &self.optim,
            self.epoch,
            self.global_step,
            self.current_lr(),
            self.seed,
            config_text,
        )
    }
}
