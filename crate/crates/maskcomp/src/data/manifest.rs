//! Dataset manifests: a line-oriented text format binding clean and
//! noise files to mixing parameters.
//!
//! One entry per line, five tab-separated columns:
//!
//! ```text
//!   split    train | val | test
//!   snr_db   target mixing SNR in dB (finite decimal)
//!   seed     per-entry mixing seed (unsigned integer)
//!   clean    path to the clean 16 kHz PCM16 mono WAV
//!   noise    path to the noise WAV (at least as long as clean)
//! ```
//!
//! Blank lines and lines starting with `#` are skipped. Relative paths
//! are resolved against the manifest's directory. All referenced paths
//! must exist at load time.

use std::fmt;
use std::path::{Path, PathBuf};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ManifestError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{file}:{line}: expected 5 tab-separated columns, got {got}")]
    ColumnCount { file: String, line: usize, got: usize },
    #[error("{file}:{line}: unknown split `{got}` (train|val|test)")]
    BadSplit { file: String, line: usize, got: String },
    #[error("{file}:{line}: bad {what}: `{got}`")]
    BadField { file: String, line: usize, what: &'static str, got: String },
    #[error("{file}:{line}: referenced path does not exist: {path}")]
    MissingPath { file: String, line: usize, path: String },
    #[error("manifest {0} has no entries")]
    Empty(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        })
    }
}

#[derive(Debug, Clone)]
pub struct ManifestEntry {
    pub split: Split,
    pub snr_db: f64,
    pub seed: u64,
    pub clean: PathBuf,
    pub noise: PathBuf,
}

#[derive(Debug, Clone, Default)]
pub struct Manifest {
    pub entries: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn load(path: &Path) -> Result<Manifest, ManifestError> {
        let file = path.display().to_string();
        let text = std::fs::read_to_string(path)
            .map_err(|source| ManifestError::Io { path: file.clone(), source })?;
        let base = path.parent().unwrap_or(Path::new("."));
        let mut entries = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let trimmed = raw.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let cols: Vec<&str> = raw.split('\t').collect();
            if cols.len() != 5 {
                return Err(ManifestError::ColumnCount { file, line, got: cols.len() });
            }
            let split = match cols[0].trim() {
                "train" => Split::Train,
                "val" => Split::Val,
                "test" => Split::Test,
                other => {
                    return Err(ManifestError::BadSplit { file, line, got: other.to_string() })
                }
            };
            let snr_db: f64 = cols[1].trim().parse().map_err(|_| ManifestError::BadField {
                file: file.clone(),
                line,
                what: "snr_db",
                got: cols[1].to_string(),
            })?;
            if !snr_db.is_finite() {
                return Err(ManifestError::BadField {
                    file,
                    line,
                    what: "snr_db",
                    got: cols[1].to_string(),
                });
            }
            let seed: u64 = cols[2].trim().parse().map_err(|_| ManifestError::BadField {
                file: file.clone(),
                line,
                what: "seed",
                got: cols[2].to_string(),
            })?;
            let resolve = |p: &str| {
                let pb = PathBuf::from(p);
                if pb.is_absolute() {
                    pb
                } else {
                    base.join(pb)
                }
            };
            let clean = resolve(cols[3].trim());
            let noise = resolve(cols[4].trim());
            for p in [&clean, &noise] {
                if !p.exists() {
                    return Err(ManifestError::MissingPath {
                        file,
                        line,
                        path: p.display().to_string(),
                    });
                }
            }
            entries.push(ManifestEntry { split, snr_db, seed, clean, noise });
        }
        if entries.is_empty() {
            return Err(ManifestError::Empty(file));
        }
        Ok(Manifest { entries })
    }

    pub fn save(&self, path: &Path) -> Result<(), ManifestError> {
        let mut text = String::from("# split\tsnr_db\tseed\tclean\tnoise\n");
        for e in &self.entries {
            text.push_str(&format!(
                "{}\t{}\t{}\t{}\t{}\n",
                e.split,
                e.snr_db,
                e.seed,
                e.clean.display(),
                e.noise.display()
            ));
        }
        std::fs::write(path, text)
            .map_err(|source| ManifestError::Io { path: path.display().to_string(), source })
    }

    pub fn split(&self, split: Split) -> Vec<&ManifestEntry> {
        self.entries.iter().filter(|e| e.split == split).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synth::speech_like;
    use crate::data::wav::write_wav;
    use tempfile::tempdir;

    #[test]
    fn save_load_round_trip_with_relative_paths() {
        let dir = tempdir().unwrap();
        let clean = dir.path().join("clean.wav");
        let noise = dir.path().join("noise.wav");
        write_wav(&clean, &speech_like::<f64>(1000, 1)).unwrap();
        write_wav(&noise, &speech_like::<f64>(1000, 2)).unwrap();

        let text = "# comment line\n\ntrain\t0\t42\tclean.wav\tnoise.wav\ntest\t-5.5\t7\tclean.wav\tnoise.wav\n";
        let mpath = dir.path().join("set.tsv");
        std::fs::write(&mpath, text).unwrap();

        let m = Manifest::load(&mpath).unwrap();
        assert_eq!(m.entries.len(), 2);
        assert_eq!(m.split(Split::Train).len(), 1);
        assert_eq!(m.split(Split::Test)[0].snr_db, -5.5);
        assert!(m.entries[0].clean.is_absolute() || m.entries[0].clean.exists());

        let out = dir.path().join("copy.tsv");
        m.save(&out).unwrap();
        let again = Manifest::load(&out).unwrap();
        assert_eq!(again.entries.len(), 2);
    }

    #[test]
    fn missing_file_is_an_error() {
        let dir = tempdir().unwrap();
        let mpath = dir.path().join("bad.tsv");
        std::fs::write(&mpath, "train\t0\t1\tnope.wav\talso_nope.wav\n").unwrap();
        assert!(matches!(Manifest::load(&mpath), Err(ManifestError::MissingPath { line: 1, .. })));
    }

    #[test]
    fn bad_split_and_fields_are_errors() {
        let dir = tempdir().unwrap();
        let clean = dir.path().join("c.wav");
        write_wav(&clean, &speech_like::<f64>(100, 1)).unwrap();

        let mpath = dir.path().join("m1.tsv");
        std::fs::write(&mpath, "eval\t0\t1\tc.wav\tc.wav\n").unwrap();
        assert!(matches!(Manifest::load(&mpath), Err(ManifestError::BadSplit { .. })));

        let mpath = dir.path().join("m2.tsv");
        std::fs::write(&mpath, "train\tabc\t1\tc.wav\tc.wav\n").unwrap();
        assert!(matches!(
            Manifest::load(&mpath),
            Err(ManifestError::BadField { what: "snr_db", .. })
        ));

        let mpath = dir.path().join("m3.tsv");
        std::fs::write(&mpath, "train\t0\t1\tc.wav\n").unwrap();
        assert!(matches!(Manifest::load(&mpath), Err(ManifestError::ColumnCount { got: 4, .. })));
    }
}
