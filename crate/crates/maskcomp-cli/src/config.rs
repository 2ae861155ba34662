//! Run configuration: a diff-friendly `key = value` text format mapping
//! onto the model, loss, and trainer settings. Command-line flags
//! override file values; the fully resolved config is echoed into every
//! checkpoint so enhancement can rebuild the exact model.
//!
//! Recognized keys (defaults in parentheses):
//!
//! ```text
//!   scale                 desk | paper        (desk)
//!   seed                  u64                 (0)
//!   fft_size              power of two        (512)
//!   hop                   divides fft_size    (256)
//!   attn_scale            head_dim | seq_len  (head_dim)
//!   feb.channels          usize
//!   feb.u_blocks          usize
//!   feb.glu_kernel        usize
//!   feb.encdec_layers     usize
//!   mb.channels           usize
//!   mb.kernel             usize
//!   mb.gru_groups         usize
//!   mb.grus_per_group     usize
//!   mb.heads              usize
//!   mb.left_kernel        usize
//!   mb.right_kernel       usize
//!   comeb.channels        usize
//!   comeb.kernel          usize
//!   comeb.gru_groups      usize
//!   comeb.grus_per_group  usize
//!   comeb.dilations       comma list, e.g. 1,2,4,8,16
//!   comeb.left_kernel     usize
//!   comeb.right_kernel    usize
//!   comeb.feb_proj_channels usize
//!   epochs                usize               (1)
//!   steps_per_epoch       usize | empty       (one pass)
//!   crop_seconds          f64                 (2.0)
//!   lr0                   f64                 (0.001)
//!   grad_clip             f64 | none          (5.0)
//!   sisdr_epsilon         f64                 (1e-8)
//!   w_mae                 f64                 (1.0)
//!   w_sisdr               f64                 (1.0)
//! ```

use maskcomp::blocks::{ModelConfig, ModelScale};
use maskcomp::dsp::StftConfig;
use maskcomp::layers::AttnScale;
use maskcomp::trainer::TrainConfig;

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig { model: ModelConfig::desk(), train: TrainConfig::default() }
    }
}

pub fn parse_config(text: &str) -> Result<RunConfig, String> {
    // the scale key picks the base; everything else overrides it
    let mut scale = ModelScale::Desk;
    for (k, v) in pairs(text)? {
        if k == "scale" {
            scale = match v.as_str() {
                "desk" => ModelScale::Desk,
                "paper" => ModelScale::Paper,
                other => return Err(format!("unknown scale `{other}` (desk|paper)")),
            };
        }
    }
    let mut cfg = RunConfig {
        model: match scale {
            ModelScale::Desk => ModelConfig::desk(),
            ModelScale::Paper => ModelConfig::paper(),
        },
        train: TrainConfig::default(),
    };
    for (k, v) in pairs(text)? {
        apply(&mut cfg, &k, &v)?;
    }
    cfg.model.validate().map_err(|e| e.to_string())?;
    cfg.train.loss.validate().map_err(|e| e.to_string())?;
    Ok(cfg)
}

fn pairs(text: &str) -> Result<Vec<(String, String)>, String> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(format!("line {}: expected `key = value`, got `{line}`", i + 1));
        };
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

fn apply(cfg: &mut RunConfig, key: &str, value: &str) -> Result<(), String> {
    let bad = |what: &str| format!("bad value `{value}` for {what}");
    let as_usize = || value.parse::<usize>().map_err(|_| bad(key));
    let as_f64 = || value.parse::<f64>().map_err(|_| bad(key));
    match key {
        "scale" => {} // handled during base selection
        "seed" => cfg.train.seed = value.parse().map_err(|_| bad(key))?,
        "fft_size" => {
            cfg.model.stft =
                StftConfig::new(as_usize()?, cfg.model.stft.hop).map_err(|e| e.to_string())?
        }
        "hop" => {
            cfg.model.stft = StftConfig::new(cfg.model.stft.fft_size, as_usize()?)
                .map_err(|e| e.to_string())?
        }
        "attn_scale" => {
            cfg.model.attn_scale = match value {
                "head_dim" => AttnScale::HeadDim,
                "seq_len" => AttnScale::SeqLen,
                other => return Err(format!("unknown attn_scale `{other}`")),
            }
        }
        "feb.channels" => cfg.model.feb.channels = as_usize()?,
        "feb.u_blocks" => cfg.model.feb.u_blocks = as_usize()?,
        "feb.glu_kernel" => cfg.model.feb.glu_kernel = as_usize()?,
        "feb.encdec_layers" => cfg.model.feb.encdec_layers = as_usize()?,
        "mb.channels" => cfg.model.mb.channels = as_usize()?,
        "mb.kernel" => cfg.model.mb.kernel = as_usize()?,
        "mb.gru_groups" => cfg.model.mb.gru_groups = as_usize()?,
        "mb.grus_per_group" => cfg.model.mb.grus_per_group = as_usize()?,
        "mb.heads" => cfg.model.mb.heads = as_usize()?,
        "mb.left_kernel" => cfg.model.mb.left_kernel = as_usize()?,
        "mb.right_kernel" => cfg.model.mb.right_kernel = as_usize()?,
        "comeb.channels" => cfg.model.comeb.channels = as_usize()?,
        "comeb.kernel" => cfg.model.comeb.kernel = as_usize()?,
        "comeb.gru_groups" => cfg.model.comeb.gru_groups = as_usize()?,
        "comeb.grus_per_group" => cfg.model.comeb.grus_per_group = as_usize()?,
        "comeb.dilations" => {
            let parsed: Result<Vec<usize>, _> =
                value.split(',').map(|s| s.trim().parse::<usize>()).collect();
            cfg.model.comeb.dilations = parsed.map_err(|_| bad(key))?;
        }
        "comeb.left_kernel" => cfg.model.comeb.left_kernel = as_usize()?,
        "comeb.right_kernel" => cfg.model.comeb.right_kernel = as_usize()?,
        "comeb.feb_proj_channels" => cfg.model.comeb.feb_proj_channels = as_usize()?,
        "epochs" => cfg.train.epochs = as_usize()?,
        "steps_per_epoch" => {
            cfg.train.steps_per_epoch =
                if value.is_empty() { None } else { Some(as_usize()?) }
        }
        "crop_seconds" => cfg.train.crop_seconds = as_f64()?,
        "lr0" => cfg.train.lr0 = as_f64()?,
        "grad_clip" => {
            cfg.train.grad_clip = if value == "none" { None } else { Some(as_f64()?) }
        }
        "sisdr_epsilon" => cfg.train.loss.sisdr_epsilon = as_f64()?,
        "w_mae" => cfg.train.loss.w_mae = as_f64()?,
        "w_sisdr" => cfg.train.loss.w_sisdr = as_f64()?,
        other => return Err(format!("unknown config key `{other}`")),
    }
    Ok(())
}

/// Serialize the resolved configuration; `parse_config` of the result
/// reproduces it.
pub fn render_config(cfg: &RunConfig) -> String {
    let m = &cfg.model;
    let t = &cfg.train;
    let scale = match m.scale {
        ModelScale::Desk => "desk",
        ModelScale::Paper => "paper",
    };
    let attn = match m.attn_scale {
        AttnScale::HeadDim => "head_dim",
        AttnScale::SeqLen => "seq_len",
    };
    let dil = m
        .comeb
        .dilations
        .iter()
        .map(|d| d.to_string())
        .collect::<Vec<_>>()
        .join(",");
    let spe = t.steps_per_epoch.map(|v| v.to_string()).unwrap_or_default();
    let clip = t.grad_clip.map(|v| v.to_string()).unwrap_or_else(|| "none".into());
    format!(
        "scale = {scale}\nseed = {}\nfft_size = {}\nhop = {}\nattn_scale = {attn}\n\
         feb.channels = {}\nfeb.u_blocks = {}\nfeb.glu_kernel = {}\nfeb.encdec_layers = {}\n\
         mb.channels = {}\nmb.kernel = {}\nmb.gru_groups = {}\nmb.grus_per_group = {}\n\
         mb.heads = {}\nmb.left_kernel = {}\nmb.right_kernel = {}\n\
         comeb.channels = {}\ncomeb.kernel = {}\ncomeb.gru_groups = {}\n\
         comeb.grus_per_group = {}\ncomeb.dilations = {dil}\ncomeb.left_kernel = {}\n\
         comeb.right_kernel = {}\ncomeb.feb_proj_channels = {}\n\
         epochs = {}\nsteps_per_epoch = {spe}\ncrop_seconds = {}\nlr0 = {}\ngrad_clip = {clip}\n\
         sisdr_epsilon = {}\nw_mae = {}\nw_sisdr = {}\n",
        t.seed,
        m.stft.fft_size,
        m.stft.hop,
        m.feb.channels,
        m.feb.u_blocks,
        m.feb.glu_kernel,
        m.feb.encdec_layers,
        m.mb.channels,
        m.mb.kernel,
        m.mb.gru_groups,
        m.mb.grus_per_group,
        m.mb.heads,
        m.mb.left_kernel,
        m.mb.right_kernel,
        m.comeb.channels,
        m.comeb.kernel,
        m.comeb.gru_groups,
        m.comeb.grus_per_group,
        m.comeb.left_kernel,
        m.comeb.right_kernel,
        m.comeb.feb_proj_channels,
        t.epochs,
        t.crop_seconds,
        t.lr0,
        t.loss.sisdr_epsilon,
        t.loss.w_mae,
        t.loss.w_sisdr,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_render_and_round_trip() {
        let cfg = RunConfig::default();
        let text = render_config(&cfg);
        let back = parse_config(&text).unwrap();
        assert_eq!(back.model, cfg.model);
        assert_eq!(back.train, cfg.train);
    }

    #[test]
    fn overrides_apply_in_order() {
        let text = "scale = desk\nmb.channels = 4\ncomeb.dilations = 1,2\ncomeb.grus_per_group = 2\ngrad_clip = none\n";
        let cfg = parse_config(text).unwrap();
        assert_eq!(cfg.model.mb.channels, 4);
        assert_eq!(cfg.model.comeb.dilations, vec![1, 2]);
        assert_eq!(cfg.train.grad_clip, None);
    }

    #[test]
    fn unknown_keys_and_bad_values_are_errors() {
        assert!(parse_config("mystery = 1\n").is_err());
        assert!(parse_config("mb.channels = lots\n").is_err());
        assert!(parse_config("just a line\n").is_err());
        // validation catches structurally bad configs
        assert!(parse_config("mb.channels = 99\n").is_err()); // desk cap
    }
}
