//! The assembled network: front end feeding the mask and complex paths
//! in parallel, fused by the compensation block.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::TensorId;
use crate::layers::{ParamBuilder, ParamStore, Session};
use crate::num::Real;

use super::comeb::Comeb;
use super::compensation::compensate_graph;
use super::config::{ConfigError, ModelConfig};
use super::feb::Feb;
use super::mask_block::MaskBlock;

pub struct Model {
    pub config: ModelConfig,
    pub feb: Feb,
    pub mask_block: MaskBlock,
    pub comeb: Comeb,
}

/// Intermediate tensors of one forward pass, for inspection and
/// term-wise verification.
pub struct ModelParts {
    pub features: TensorId,
    pub mask: TensorId,
    pub refined: TensorId,
    pub output: TensorId,
}

impl Model {
    /// Construct the model and its parameter store. Initialization is
    /// fully determined by (config, seed).
    pub fn build<R: Real>(
        cfg: &ModelConfig,
        seed: u64,
    ) -> Result<(Model, ParamStore<R>), ConfigError> {
        cfg.validate()?;
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut pb = ParamBuilder::new(&mut store, &mut rng);
        let model = Self::wire(cfg, &mut pb);
        Ok((model, store))
    }

    /// Shapes-only twin of [`Model::build`]: same parameter names and
    /// shapes, no storage. Supports accounting at full scale.
    pub fn skeleton(cfg: &ModelConfig) -> Result<(Model, ParamStore<f64>), ConfigError> {
        cfg.validate()?;
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut pb = ParamBuilder::shape_only(&mut store, &mut rng);
        let model = Self::wire(cfg, &mut pb);
        Ok((model, store))
    }

    fn wire<R: Real>(cfg: &ModelConfig, pb: &mut ParamBuilder<R>) -> Model {
        let feb = Feb::new(pb, "feb", cfg);
        let mask_block = MaskBlock::new(pb, "mb", cfg);
        let comeb = Comeb::new(pb, "comeb", cfg);
        Model { config: cfg.clone(), feb, mask_block, comeb }
    }

    /// Full forward pass over a `[T, F, 2]` spectrogram tensor.
    pub fn forward_parts<R: Real>(&self, sess: &mut Session<R>, x: TensorId) -> ModelParts {
        let shape = sess.tape.shape(x).to_vec();
        assert_eq!(shape.len(), 3, "model input must be [T, F, 2]");
        assert_eq!(shape[1], self.config.bins(), "frequency bins");
        assert_eq!(shape[2], 2, "real/imaginary channels");

        let features = self.feb.forward(sess, x);
        let mask = self.mask_block.forward(sess, features);
        let refined = self.comeb.forward(sess, x, features);
        let output = compensate_graph(sess.tape, refined, mask);
        ModelParts { features, mask, refined, output }
    }

    pub fn forward<R: Real>(&self, sess: &mut Session<R>, x: TensorId) -> TensorId {
        self.forward_parts(sess, x).output
    }
}

/// Exact count of trainable scalars for a configuration.
pub fn param_count(cfg: &ModelConfig) -> Result<usize, ConfigError> {
    let (_, store) = Model::skeleton(cfg)?;
    Ok(store.trainable_count())
}

/// Human-readable layer/shape table: the frequency chains and every
/// parameter with its shape.
pub fn shape_table(cfg: &ModelConfig) -> Result<String, ConfigError> {
    let (_, store) = Model::skeleton(cfg)?;
    let mut out = String::new();
    out.push_str(&format!(
        "stft: fft_size {} hop {} -> {} bins\n",
        cfg.stft.fft_size,
        cfg.stft.hop,
        cfg.bins()
    ));
    out.push_str(&format!("u-block frequency chain: {:?}\n", cfg.ublock_chain()?));
    out.push_str(&format!(
        "mask path frequency chain: {:?}\n",
        cfg.encdec_chain(cfg.mb.kernel, cfg.mb.encdec_layers)?
    ));
    out.push_str(&format!(
        "complex path frequency chain: {:?}\n",
        cfg.encdec_chain(cfg.comeb.kernel, cfg.comeb.encdec_layers)?
    ));
    out.push('\n');
    out.push_str(&format!("{:<40} {:>20} {:>12}\n", "parameter", "shape", "scalars"));
    let mut total_train = 0usize;
    let mut total_state = 0usize;
    for (_, e) in store.iter() {
        let n: usize = e.shape.iter().product();
        if e.trainable {
            total_train += n;
        } else {
            total_state += n;
        }
        let mark = if e.trainable { "" } else { " (state)" };
        out.push_str(&format!("{:<40} {:>20} {:>12}{}\n", e.name, format!("{:?}", e.shape), n, mark));
    }
    out.push_str(&format!("\ntrainable scalars: {total_train}\n"));
    out.push_str(&format!("state scalars: {total_state}\n"));
    Ok(out)
}
