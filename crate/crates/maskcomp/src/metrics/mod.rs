//! Evaluation measures (SI-SDR and ESTOI) and the per-utterance report.

mod estoi;
mod resample;

pub use estoi::{estoi, EstoiError};
pub use resample::resample_rational;

use thiserror::Error;

use crate::dsp::Waveform;
use crate::losses::{si_sdr, LossError};
use crate::num::Real;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("no utterances to evaluate")]
    Empty,
    #[error("utterance {id}: {source}")]
    Estoi {
        id: String,
        #[source]
        source: EstoiError,
    },
    #[error("utterance {id}: {source}")]
    SiSdr {
        id: String,
        #[source]
        source: LossError,
    },
}

/// One aligned (clean, noisy, enhanced) triple to score.
pub struct EvalInput<R: Real> {
    pub id: String,
    pub snr_db: f64,
    pub clean: Waveform<R>,
    pub noisy: Waveform<R>,
    pub enhanced: Waveform<R>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalRow {
    pub id: String,
    pub snr_db: f64,
    pub si_sdr_in: f64,
    pub si_sdr_out: f64,
    pub estoi_in: f64,
    pub estoi_out: f64,
}

/// Mean metrics across the rows of one SNR bucket.
#[derive(Debug, Clone, PartialEq)]
pub struct SnrMeans {
    pub snr_db: f64,
    pub rows: usize,
    pub si_sdr_in: f64,
    pub si_sdr_out: f64,
    pub estoi_in: f64,
    pub estoi_out: f64,
}

#[derive(Debug, Clone, Default)]
pub struct EvalReport {
    pub rows: Vec<EvalRow>,
    pub per_snr: Vec<SnrMeans>,
}

const SISDR_EPS: f64 = 1e-8;

/// Score every triple and aggregate means per SNR bucket. Rows keep
/// their input order; buckets are sorted by SNR.
pub fn evaluate<R: Real>(inputs: &[EvalInput<R>]) -> Result<EvalReport, MetricsError> {
    if inputs.is_empty() {
        return Err(MetricsError::Empty);
    }
    let mut rows = Vec::with_capacity(inputs.len());
    for inp in inputs {
        let si_in = si_sdr(&inp.noisy, &inp.clean, SISDR_EPS)
            .map_err(|source| MetricsError::SiSdr { id: inp.id.clone(), source })?;
        let si_out = si_sdr(&inp.enhanced, &inp.clean, SISDR_EPS)
            .map_err(|source| MetricsError::SiSdr { id: inp.id.clone(), source })?;
        let es_in = estoi(&inp.clean, &inp.noisy)
            .map_err(|source| MetricsError::Estoi { id: inp.id.clone(), source })?;
        let es_out = estoi(&inp.clean, &inp.enhanced)
            .map_err(|source| MetricsError::Estoi { id: inp.id.clone(), source })?;
        rows.push(EvalRow {
            id: inp.id.clone(),
            snr_db: inp.snr_db,
            si_sdr_in: si_in.as_f64(),
            si_sdr_out: si_out.as_f64(),
            estoi_in: es_in,
            estoi_out: es_out,
        });
    }

    let mut buckets: Vec<f64> = rows.iter().map(|r| r.snr_db).collect();
    buckets.sort_by(|a, b| a.partial_cmp(b).unwrap());
    buckets.dedup();
    let per_snr = buckets
        .into_iter()
        .map(|snr| {
            let group: Vec<&EvalRow> = rows.iter().filter(|r| r.snr_db == snr).collect();
            let n = group.len() as f64;
            SnrMeans {
                snr_db: snr,
                rows: group.len(),
                si_sdr_in: group.iter().map(|r| r.si_sdr_in).sum::<f64>() / n,
                si_sdr_out: group.iter().map(|r| r.si_sdr_out).sum::<f64>() / n,
                estoi_in: group.iter().map(|r| r.estoi_in).sum::<f64>() / n,
                estoi_out: group.iter().map(|r| r.estoi_out).sum::<f64>() / n,
            }
        })
        .collect();
    Ok(EvalReport { rows, per_snr })
}

impl EvalReport {
    /// Machine-readable form. Header documents the columns; ESTOI is the
    /// raw [-1, 1] value.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("id,snr_db,si_sdr_in,si_sdr_out,estoi_in,estoi_out\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{:.6},{:.6},{:.6},{:.6}\n",
                r.id, r.snr_db, r.si_sdr_in, r.si_sdr_out, r.estoi_in, r.estoi_out
            ));
        }
        out
    }

    /// Table view; ESTOI rendered as percent.
    pub fn render_table(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "{:<16} {:>7} {:>12} {:>12} {:>10} {:>10}\n",
            "utterance", "snr", "si-sdr in", "si-sdr out", "estoi in", "estoi out"
        ));
        for r in &self.rows {
            out.push_str(&format!(
                "{:<16} {:>7.1} {:>12.2} {:>12.2} {:>9.2}% {:>9.2}%\n",
                r.id,
                r.snr_db,
                r.si_sdr_in,
                r.si_sdr_out,
                r.estoi_in * 100.0,
                r.estoi_out * 100.0
            ));
        }
        out.push('\n');
        out.push_str(&format!(
            "{:<16} {:>7} {:>12} {:>12} {:>10} {:>10}\n",
            "mean per snr", "snr", "si-sdr in", "si-sdr out", "estoi in", "estoi out"
        ));
        for m in &self.per_snr {
            out.push_str(&format!(
                "{:<16} {:>7.1} {:>12.2} {:>12.2} {:>9.2}% {:>9.2}%\n",
                format!("({} rows)", m.rows),
                m.snr_db,
                m.si_sdr_in,
                m.si_sdr_out,
                m.estoi_in * 100.0,
                m.estoi_out * 100.0
            ));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{speech_like, synth_noise, NoiseKind};
    use crate::dsp::SAMPLE_RATE;

    fn mixed(seed: u64, snr_db: f64) -> (Waveform<f64>, Waveform<f64>) {
        let clean = speech_like::<f64>(2 * SAMPLE_RATE as usize, seed);
        let noise = synth_noise::<f64>(NoiseKind::White, clean.len(), seed + 100);
        let px: f64 = clean.samples.iter().map(|v| v * v).sum();
        let pn: f64 = noise.samples.iter().map(|v| v * v).sum();
        let g = (px / (pn * 10f64.powf(snr_db / 10.0))).sqrt();
        let noisy = Waveform::new(
            clean.samples.iter().zip(&noise.samples).map(|(a, b)| a + g * b).collect(),
            SAMPLE_RATE,
        )
        .unwrap();
        (clean, noisy)
    }

    #[test]
    fn perfect_enhancement_scores_cap_and_one() {
        let (clean, noisy) = mixed(1, 0.0);
        let report = evaluate(&[EvalInput {
            id: "utt0".into(),
            snr_db: 0.0,
            clean: clean.clone(),
            noisy,
            enhanced: clean,
        }])
        .unwrap();
        assert!((report.rows[0].estoi_out - 1.0).abs() < 1e-6);
        assert!(report.rows[0].si_sdr_out >= 80.0);
    }

    #[test]
    fn identity_enhancement_copies_input_columns() {
        let (clean, noisy) = mixed(2, 5.0);
        let report = evaluate(&[EvalInput {
            id: "utt0".into(),
            snr_db: 5.0,
            clean,
            noisy: noisy.clone(),
            enhanced: noisy,
        }])
        .unwrap();
        let r = &report.rows[0];
        assert_eq!(r.si_sdr_in, r.si_sdr_out);
        assert_eq!(r.estoi_in, r.estoi_out);
    }

    #[test]
    fn means_are_exact_row_averages() {
        let mut inputs = Vec::new();
        for (i, seed) in [3u64, 4, 5].iter().enumerate() {
            let (clean, noisy) = mixed(*seed, 0.0);
            inputs.push(EvalInput {
                id: format!("utt{i}"),
                snr_db: 0.0,
                clean: clean.clone(),
                noisy: noisy.clone(),
                enhanced: noisy,
            });
        }
        let report = evaluate(&inputs).unwrap();
        assert_eq!(report.per_snr.len(), 1);
        let m = &report.per_snr[0];
        let mean_by_hand: f64 =
            report.rows.iter().map(|r| r.estoi_out).sum::<f64>() / report.rows.len() as f64;
        assert_eq!(m.estoi_out, mean_by_hand);
        assert_eq!(m.rows, 3);
    }

    #[test]
    fn empty_input_is_an_error() {
        assert!(matches!(evaluate::<f64>(&[]), Err(MetricsError::Empty)));
    }

    #[test]
    fn csv_and_table_have_documented_shape() {
        let (clean, noisy) = mixed(6, -3.0);
        let report = evaluate(&[EvalInput {
            id: "utt0".into(),
            snr_db: -3.0,
            clean: clean.clone(),
            noisy,
            enhanced: clean,
        }])
        .unwrap();
        let csv = report.to_csv();
        assert!(csv.starts_with("id,snr_db,si_sdr_in,si_sdr_out,estoi_in,estoi_out\n"));
        assert_eq!(csv.lines().count(), 2);
        let table = report.render_table();
        assert!(table.contains('%'), "table view renders estoi as percent");
    }
}
