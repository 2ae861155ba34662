//! Single-file checkpoint container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//!   magic   b"MCPK"
//!   version u32                      (currently 1)
//!   width   u8                       scalar byte width (4 = f32, 8 = f64)
//!   epoch   u64
//!   step    u64                      global optimizer step
//!   lr      f64                      learning rate entering the next epoch
//!   seed    u64                      base RNG seed of the run
//!   config  u32 length + utf-8 text  (key = value echo of the run config)
//!   params  u32 count, then per entry:
//!             u16 name length + name bytes
//!             u8  trainable flag
//!             u8  rank, u32 per dimension
//!             raw scalar data (numel * width bytes)
//!   adam    u64 step, then per *trainable* entry in file order:
//!             raw m data, raw v data
//! ```

use std::fs;
use std::path::Path;

use thiserror::Error;

use crate::layers::ParamStore;
use crate::num::Real;

use super::adam::{AdamConfig, OptimState};

const MAGIC: &[u8; 4] = b"MCPK";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("not a checkpoint file (bad magic)")]
    BadMagic,
    #[error("checkpoint version {got}, this build reads {want}")]
    Version { got: u32, want: u32 },
    #[error("checkpoint stores {got}-byte scalars, this build uses {want}-byte")]
    ScalarWidth { got: usize, want: usize },
    #[error("corrupt checkpoint: {0}")]
    Corrupt(&'static str),
    #[error("checkpoint parameter set does not match the model: {0}")]
    ParamMismatch(String),
}

#[derive(Debug, Clone)]
pub struct Checkpoint<R: Real> {
    pub epoch: u64,
    pub step: u64,
    pub lr: f64,
    pub seed: u64,
    pub config_text: String,
    pub store: ParamStore<R>,
    pub adam_step: u64,
    pub adam_m: Vec<Vec<R>>,
    pub adam_v: Vec<Vec<R>>,
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        if self.pos + n > self.buf.len() {
            return Err(CheckpointError::Corrupt("unexpected end of file"));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, CheckpointError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, CheckpointError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64, CheckpointError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn scalars<R: Real>(&mut self, n: usize) -> Result<Vec<R>, CheckpointError> {
        let bytes = self.take(n * R::BYTE_WIDTH)?;
        Ok(bytes.chunks_exact(R::BYTE_WIDTH).map(R::from_le_slice).collect())
    }
}

impl<R: Real> Checkpoint<R> {
    pub fn capture(
        store: &ParamStore<R>,
        optim: &OptimState<R>,
        epoch: u64,
        step: u64,
        lr: f64,
        seed: u64,
        config_text: String,
    ) -> Self {
        Checkpoint {
            epoch,
            step,
            lr,
            seed,
            config_text,
            store: store.clone(),
            adam_step: optim.step,
            adam_m: optim.m.clone(),
            adam_v: optim.v.clone(),
        }
    }

    /// Rebuild an optimizer state bound to this checkpoint's store.
    pub fn optim_state(&self, cfg: AdamConfig) -> OptimState<R> {
        OptimState { cfg, step: self.adam_step, m: self.adam_m.clone(), v: self.adam_v.clone() }
    }

    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.push(R::BYTE_WIDTH as u8);
        out.extend_from_slice(&self.epoch.to_le_bytes());
        out.extend_from_slice(&self.step.to_le_bytes());
        out.extend_from_slice(&self.lr.to_le_bytes());
        out.extend_from_slice(&self.seed.to_le_bytes());
        let cfg = self.config_text.as_bytes();
        out.extend_from_slice(&(cfg.len() as u32).to_le_bytes());
        out.extend_from_slice(cfg);

        out.extend_from_slice(&(self.store.len() as u32).to_le_bytes());
        for (_, e) in self.store.iter() {
            out.extend_from_slice(&(e.name.len() as u16).to_le_bytes());
            out.extend_from_slice(e.name.as_bytes());
            out.push(e.trainable as u8);
            out.push(e.shape.len() as u8);
            for &d in &e.shape {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for &v in &e.values {
                out.extend_from_slice(&v.to_le_bytes_vec());
            }
        }
        out.extend_from_slice(&self.adam_step.to_le_bytes());
        for (i, (_, e)) in self.store.iter().enumerate() {
            if e.trainable {
                for &v in &self.adam_m[i] {
                    out.extend_from_slice(&v.to_le_bytes_vec());
                }
                for &v in &self.adam_v[i] {
                    out.extend_from_slice(&v.to_le_bytes_vec());
                }
            }
        }
        fs::write(path, out)
            .map_err(|source| CheckpointError::Io { path: path.display().to_string(), source })
    }

    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
        let buf = fs::read(path)
            .map_err(|source| CheckpointError::Io { path: path.display().to_string(), source })?;
        let mut r = Reader { buf: &buf, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(CheckpointError::BadMagic);
        }
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(CheckpointError::Version { got: version, want: FORMAT_VERSION });
        }
        let width = r.u8()? as usize;
        if width != R::BYTE_WIDTH {
            return Err(CheckpointError::ScalarWidth { got: width, want: R::BYTE_WIDTH });
        }
        let epoch = r.u64()?;
        let step = r.u64()?;
        let lr = r.f64()?;
        let seed = r.u64()?;
        let cfg_len = r.u32()? as usize;
        let config_text = String::from_utf8(r.take(cfg_len)?.to_vec())
            .map_err(|_| CheckpointError::Corrupt("config text is not utf-8"))?;

        let n_params = r.u32()? as usize;
        let mut store = ParamStore::new();
        for _ in 0..n_params {
            let name_len = r.u16()? as usize;
            let name = String::from_utf8(r.take(name_len)?.to_vec())
                .map_err(|_| CheckpointError::Corrupt("param name is not utf-8"))?;
            let trainable = r.u8()? != 0;
            let rank = r.u8()? as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(r.u32()? as usize);
            }
            let numel: usize = shape.iter().product();
            let values = r.scalars::<R>(numel)?;
            store.add(name, shape, values, trainable);
        }
        let adam_step = r.u64()?;
        let mut adam_m = Vec::with_capacity(n_params);
        let mut adam_v = Vec::with_capacity(n_params);
        for (_, e) in store.iter() {
            if e.trainable {
                adam_m.push(r.scalars::<R>(e.values.len())?);
                adam_v.push(r.scalars::<R>(e.values.len())?);
            } else {
                adam_m.push(Vec::new());
                adam_v.push(Vec::new());
            }
        }
        if r.pos != buf.len() {
            return Err(CheckpointError::Corrupt("trailing bytes"));
        }
        Ok(Checkpoint { epoch, step, lr, seed, config_text, store, adam_step, adam_m, adam_v })
    }

    /// Verify that the checkpoint's parameter set matches a freshly
    /// built model (same names, shapes, and flags, in order).
    pub fn check_matches(&self, fresh: &ParamStore<R>) -> Result<(), CheckpointError> {
        if fresh.len() != self.store.len() {
            return Err(CheckpointError::ParamMismatch(format!(
                "{} entries in file, model has {}",
                self.store.len(),
                fresh.len()
            )));
        }
        for ((_, a), (_, b)) in self.store.iter().zip(fresh.iter()) {
            if a.name != b.name || a.shape != b.shape || a.trainable != b.trainable {
                return Err(CheckpointError::ParamMismatch(format!(
                    "`{}` {:?} vs `{}` {:?}",
                    a.name, a.shape, b.name, b.shape
                )));
            }
        }
        Ok(())
    }
}
