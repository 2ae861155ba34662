//! Model hyperparameters and the frequency-axis shape chains.

use thiserror::Error;

use crate::autodiff::Conv2dSpec;
use crate::dsp::{DspError, StftConfig};
use crate::layers::AttnScale;

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error(transparent)]
    Stft(#[from] DspError),
    #[error("desk scale caps channels at 16, got {0}")]
    DeskChannelsTooLarge(usize),
    #[error("paper scale fixes channels at {expected}, got {got} for {what}")]
    PaperChannels { what: &'static str, expected: usize, got: usize },
    #[error("{what} must be positive")]
    ZeroField { what: &'static str },
    #[error("channels {channels} not divisible by {heads} attention heads")]
    HeadsDontDivideChannels { channels: usize, heads: usize },
    #[error("dilation schedule has {got} entries for {want} units per group")]
    DilationCount { got: usize, want: usize },
    #[error("frequency chain failed at stage {stage}: size {size} too small for the kernel")]
    ChainBreaks { stage: usize, size: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelScale {
    /// Small channels (<= 16), same topology; runs on a desk CPU.
    Desk,
    /// Full-size channel counts (256 / 256 / 512).
    Paper,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FebConfig {
    /// Square kernel of the gating convolutions.
    pub glu_kernel: usize,
    pub channels: usize,
    pub u_blocks: usize,
    pub ub_kernel: (usize, usize),
    pub ub_stride: (usize, usize),
    pub encdec_layers: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MbConfig {
    pub encdec_layers: usize,
    /// Frequency-axis kernel of the encoder/decoder convolutions.
    pub kernel: usize,
    pub channels: usize,
    pub gru_groups: usize,
    pub grus_per_group: usize,
    pub heads: usize,
    pub left_kernel: usize,
    pub right_kernel: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComebConfig {
    pub encdec_layers: usize,
    pub kernel: usize,
    pub channels: usize,
    pub gru_groups: usize,
    pub grus_per_group: usize,
    /// Per-group dilation schedule for the temporal convolutions.
    pub dilations: Vec<usize>,
    pub left_kernel: usize,
    pub right_kernel: usize,
    /// Channel count of the 1x1 projection of front-end features that is
    /// concatenated with the noisy real/imaginary input.
    pub feb_proj_channels: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub stft: StftConfig,
    pub scale: ModelScale,
    pub feb: FebConfig,
    pub mb: MbConfig,
    pub comeb: ComebConfig,
    pub attn_scale: AttnScale,
}

impl ModelConfig {
    /// Desk-scale defaults: full topology, 8 channels everywhere.
    pub fn desk() -> Self {
        ModelConfig {
            stft: StftConfig::default(),
            scale: ModelScale::Desk,
            feb: FebConfig {
                glu_kernel: 3,
                channels: 8,
                u_blocks: 2,
                ub_kernel: (1, 3),
                ub_stride: (1, 2),
                encdec_layers: 5,
            },
            mb: MbConfig {
                encdec_layers: 5,
                kernel: 8,
                channels: 8,
                gru_groups: 2,
                grus_per_group: 5,
                heads: 2,
                left_kernel: 5,
                right_kernel: 1,
            },
            comeb: ComebConfig {
                encdec_layers: 5,
                kernel: 8,
                channels: 8,
                gru_groups: 4,
                grus_per_group: 5,
                dilations: vec![1, 2, 4, 8, 16],
                left_kernel: 5,
                right_kernel: 1,
                feb_proj_channels: 2,
            },
            attn_scale: AttnScale::HeadDim,
        }
    }

    /// Full-size channel counts. Far too large to train here; used for
    /// parameter accounting and shape reports.
    pub fn paper() -> Self {
        let mut cfg = Self::desk();
        cfg.scale = ModelScale::Paper;
        cfg.feb.channels = 256;
        cfg.mb.channels = 256;
        cfg.comeb.channels = 512;
        cfg
    }

    /// Tiny variant for gradient checking: short FFT (33 bins) and very
    /// few channels keep the finite-difference sweep affordable.
    pub fn toy() -> Self {
        let mut cfg = Self::desk();
        cfg.stft = StftConfig::new(64, 32).expect("valid toy stft");
        cfg.feb.channels = 4;
        cfg.mb.channels = 4;
        cfg.comeb.channels = 4;
        cfg
    }

    pub fn bins(&self) -> usize {
        self.stft.bins()
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        StftConfig::new(self.stft.fft_size, self.stft.hop)?;
        for (what, v) in [
            ("feb.glu_kernel", self.feb.glu_kernel),
            ("feb.channels", self.feb.channels),
            ("feb.u_blocks", self.feb.u_blocks),
            ("feb.encdec_layers", self.feb.encdec_layers),
            ("mb.encdec_layers", self.mb.encdec_layers),
            ("mb.kernel", self.mb.kernel),
            ("mb.channels", self.mb.channels),
            ("mb.gru_groups", self.mb.gru_groups),
            ("mb.grus_per_group", self.mb.grus_per_group),
            ("mb.heads", self.mb.heads),
            ("mb.left_kernel", self.mb.left_kernel),
            ("mb.right_kernel", self.mb.right_kernel),
            ("comeb.encdec_layers", self.comeb.encdec_layers),
            ("comeb.kernel", self.comeb.kernel),
            ("comeb.channels", self.comeb.channels),
            ("comeb.gru_groups", self.comeb.gru_groups),
            ("comeb.grus_per_group", self.comeb.grus_per_group),
            ("comeb.left_kernel", self.comeb.left_kernel),
            ("comeb.right_kernel", self.comeb.right_kernel),
            ("comeb.feb_proj_channels", self.comeb.feb_proj_channels),
        ] {
            if v == 0 {
                return Err(ConfigError::ZeroField { what });
            }
        }
        match self.scale {
            ModelScale::Desk => {
                for c in [self.feb.channels, self.mb.channels, self.comeb.channels] {
                    if c > 16 {
                        return Err(ConfigError::DeskChannelsTooLarge(c));
                    }
                }
            }
            ModelScale::Paper => {
                if self.feb.channels != 256 {
                    return Err(ConfigError::PaperChannels {
                        what: "feb",
                        expected: 256,
                        got: self.feb.channels,
                    });
                }
                if self.mb.channels != 256 {
                    return Err(ConfigError::PaperChannels {
                        what: "mb",
                        expected: 256,
                        got: self.mb.channels,
                    });
                }
                if self.comeb.channels != 512 {
                    return Err(ConfigError::PaperChannels {
                        what: "comeb",
                        expected: 512,
                        got: self.comeb.channels,
                    });
                }
            }
        }
        if self.mb.channels % self.mb.heads != 0 {
            return Err(ConfigError::HeadsDontDivideChannels {
                channels: self.mb.channels,
                heads: self.mb.heads,
            });
        }
        if self.comeb.dilations.len() != self.comeb.grus_per_group {
            return Err(ConfigError::DilationCount {
                got: self.comeb.dilations.len(),
                want: self.comeb.grus_per_group,
            });
        }
        // both frequency chains must survive their stage count
        self.ublock_chain()?;
        self.encdec_chain(self.mb.kernel, self.mb.encdec_layers)?;
        self.encdec_chain(self.comeb.kernel, self.comeb.encdec_layers)?;
        Ok(())
    }

    /// Frequency sizes down the U-block encoder, starting at full
    /// resolution: e.g. 257 -> 129 -> 65 -> 33 -> 17 -> 9.
    pub fn ublock_chain(&self) -> Result<Vec<usize>, ConfigError> {
        let pad = self.feb.ub_kernel.1 / 2;
        self.chain(self.feb.ub_kernel.1, self.feb.ub_stride.1, pad, self.feb.encdec_layers)
    }

    /// Frequency sizes down a mask/complex-path encoder:
    /// 257 -> 128 -> 64 -> 32 -> 16 -> 8 for kernel 8.
    pub fn encdec_chain(&self, kernel: usize, layers: usize) -> Result<Vec<usize>, ConfigError> {
        self.chain(kernel, 2, (kernel / 2).saturating_sub(1), layers)
    }

    fn chain(
        &self,
        kernel: usize,
        stride: usize,
        pad: usize,
        layers: usize,
    ) -> Result<Vec<usize>, ConfigError> {
        let mut sizes = vec![self.bins()];
        for stage in 0..layers {
            let cur = *sizes.last().unwrap();
            let spec = Conv2dSpec::new(1, 1, (1, kernel), (1, stride), (1, 1), (0, pad))
                .map_err(|_| ConfigError::ChainBreaks { stage, size: cur })?;
            let (_, next) = spec
                .out_size((1, cur))
                .map_err(|_| ConfigError::ChainBreaks { stage, size: cur })?;
            sizes.push(next);
        }
        Ok(sizes)
    }
}
