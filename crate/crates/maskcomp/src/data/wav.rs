//! Minimal RIFF/WAVE reader and writer for the one format the pipeline
//! speaks: 16-bit PCM, mono, 16 kHz. Anything else is rejected loudly —
//! no silent resampling or channel mixing of corpus files.

use std::fs;
use std::io::Write;
use std::path::Path;

use thiserror::Error;

use crate::dsp::{Waveform, SAMPLE_RATE};
use crate::num::Real;

#[derive(Debug, Error)]
pub enum WavError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}: not a RIFF/WAVE file")]
    NotRiff(String),
    #[error("{0}: malformed header ({1})")]
    Malformed(String, &'static str),
    #[error("{path}: unsupported format ({what}: got {got}, need {need})")]
    Unsupported { path: String, what: &'static str, got: u32, need: u32 },
    #[error("{0}: missing data chunk")]
    NoData(String),
}

fn u16_at(b: &[u8], i: usize) -> u16 {
    u16::from_le_bytes([b[i], b[i + 1]])
}

fn u32_at(b: &[u8], i: usize) -> u32 {
    u32::from_le_bytes([b[i], b[i + 1], b[i + 2], b[i + 3]])
}

/// Read a 16-bit PCM mono 16 kHz file; samples are normalized to
/// [-1, 1) by 1/32768.
pub fn read_wav<R: Real>(path: &Path) -> Result<Waveform<R>, WavError> {
    let name = path.display().to_string();
    let bytes = fs::read(path).map_err(|source| WavError::Io { path: name.clone(), source })?;
    if bytes.len() < 12 || &bytes[0..4] != b"RIFF" || &bytes[8..12] != b"WAVE" {
        return Err(WavError::NotRiff(name));
    }

    let mut pos = 12usize;
    let mut fmt: Option<(u16, u16, u32, u16)> = None; // tag, channels, rate, bits
    let mut data: Option<&[u8]> = None;
    while pos + 8 <= bytes.len() {
        let id = &bytes[pos..pos + 4];
        let size = u32_at(&bytes, pos + 4) as usize;
        let body_start = pos + 8;
        if body_start + size > bytes.len() {
            return Err(WavError::Malformed(name, "chunk overruns file"));
        }
        let body = &bytes[body_start..body_start + size];
        match id {
            b"fmt " => {
                if size < 16 {
                    return Err(WavError::Malformed(name, "fmt chunk too small"));
                }
                fmt = Some((u16_at(body, 0), u16_at(body, 2), u32_at(body, 4), u16_at(body, 14)));
            }
            b"data" => data = Some(body),
            _ => {}
        }
        pos = body_start + size + (size & 1); // chunks are word-aligned
    }

    let (tag, channels, rate, bits) = fmt.ok_or(WavError::Malformed(name.clone(), "no fmt chunk"))?;
    if tag != 1 {
        return Err(WavError::Unsupported { path: name, what: "codec", got: tag as u32, need: 1 });
    }
    if channels != 1 {
        return Err(WavError::Unsupported {
            path: name,
            what: "channels",
            got: channels as u32,
            need: 1,
        });
    }
    if rate != SAMPLE_RATE {
        return Err(WavError::Unsupported { path: name, what: "sample rate", got: rate, need: SAMPLE_RATE });
    }
    if bits != 16 {
        return Err(WavError::Unsupported { path: name, what: "bit depth", got: bits as u32, need: 16 });
    }
    let data = data.ok_or(WavError::NoData(name.clone()))?;
    if data.len() % 2 != 0 {
        return Err(WavError::Malformed(name, "odd data size"));
    }
    let scale = R::of(1.0 / 32768.0);
    let samples = data
        .chunks_exact(2)
        .map(|c| R::of(i16::from_le_bytes([c[0], c[1]]) as f64) * scale)
        .collect();
    Ok(Waveform { samples, sample_rate: SAMPLE_RATE })
}

/// Result of a write: how many samples had to be clipped into the
/// representable range.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WriteReport {
    pub clipped: usize,
}

/// Write 16-bit PCM mono 16 kHz; amplitudes are quantized by 32768 with
/// saturation.
pub fn write_wav<R: Real>(path: &Path, w: &Waveform<R>) -> Result<WriteReport, WavError> {
    let name = path.display().to_string();
    let n = w.samples.len();
    let data_size = (n * 2) as u32;
    let mut out = Vec::with_capacity(44 + n * 2);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&(36 + data_size).to_le_bytes());
    out.extend_from_slice(b"WAVE");
    out.extend_from_slice(b"fmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes()); // PCM
    out.extend_from_slice(&1u16.to_le_bytes()); // mono
    out.extend_from_slice(&SAMPLE_RATE.to_le_bytes());
    out.extend_from_slice(&(SAMPLE_RATE * 2).to_le_bytes()); // byte rate
    out.extend_from_slice(&2u16.to_le_bytes()); // block align
    out.extend_from_slice(&16u16.to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&data_size.to_le_bytes());

    let mut clipped = 0usize;
    for &s in &w.samples {
        let scaled = (s.as_f64() * 32768.0).round();
        let q = if scaled > i16::MAX as f64 {
            clipped += 1;
            i16::MAX
        } else if scaled < i16::MIN as f64 {
            clipped += 1;
            i16::MIN
        } else {
            scaled as i16
        };
        out.extend_from_slice(&q.to_le_bytes());
    }

    let mut f = fs::File::create(path).map_err(|source| WavError::Io { path: name.clone(), source })?;
    f.write_all(&out).map_err(|source| WavError::Io { path: name, source })?;
    Ok(WriteReport { clipped })
}
