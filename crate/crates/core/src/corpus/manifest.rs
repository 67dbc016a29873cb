//! On-disk corpus layout: `manifest.json` plus one feature file per utterance.
//!
//! Feature files are a 16-byte header — 8-byte magic, frame count `T` as
//! u32, channel count (80) as u32 — followed by `T × 80` little-endian f64.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, CorpusConfig, Utterance};
use crate::error::{Error, Result};
use crate::frontend::{LogMelSpectrogram, N_MELS};
use crate::model::TokenSequence;
use crate::numerics::Tensor;

pub const SCHEMA_VERSION: u32 = 1;
pub const FEATURE_MAGIC: &[u8; 8] = b"LMELF64\0";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub language: usize,
    pub duration_s: f64,
    /// Relative to the manifest's directory.
    pub feature_path: String,
    pub transcript: TokenSequence,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema_version: u32,
    pub seed: u64,
    pub language_count: usize,
    pub duration_buckets: Vec<f64>,
    pub generator: CorpusConfig,
    pub train: Vec<ManifestEntry>,
    pub valid: Vec<ManifestEntry>,
    pub test: Vec<ManifestEntry>,
}

pub fn write_features(path: &Path, mel: &LogMelSpectrogram) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(FEATURE_MAGIC)?;
    w.write_all(&(mel.num_frames() as u32).to_le_bytes())?;
    w.write_all(&(N_MELS as u32).to_le_bytes())?;
    for v in mel.frames().data() {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_features(path: &Path) -> Result<LogMelSpectrogram> {
    let bad = |reason: String| Error::Format {
        path: path.to_path_buf(),
        reason,
    };
    let mut bytes = Vec::new();
    BufReader::new(File::open(path)?).read_to_end(&mut bytes)?;
    if bytes.len() < 16 || &bytes[..8] != FEATURE_MAGIC {
        return Err(bad("not a feature file (bad magic)".into()));
    }
    let t = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
    let c = u32::from_le_bytes(bytes[12..16].try_into().expect("4 bytes")) as usize;
    if c != N_MELS {
        return Err(bad(format!("expected {N_MELS} channels, found {c}")));
    }
    if bytes.len() != 16 + t * c * 8 {
        return Err(bad(format!(
            "payload holds {} bytes, header promises {}",
            bytes.len() - 16,
            t * c * 8
        )));
    }
    let data = bytes[16..]
        .chunks_exact(8)
        .map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes")))
        .collect();
    LogMelSpectrogram::new(Tensor::new(vec![t, c], data)?).map_err(|e| bad(e.to_string()))
}

impl Corpus {
    /// Writes features under `dir/features/` and the manifest at
    /// `dir/manifest.json`; returns the manifest path.
    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        let feat_dir = dir.join("features");
        fs::create_dir_all(&feat_dir)?;
        let entries = |split: &[Utterance]| -> Result<Vec<ManifestEntry>> {
            split
                .iter()
                .map(|u| {
                    let rel = format!("features/{}.feat", u.id);
                    write_features(&dir.join(&rel), &u.features)?;
                    Ok(ManifestEntry {
                        id: u.id.clone(),
                        language: u.language,
                        duration_s: u.duration_s,
                        feature_path: rel,
                        transcript: u.transcript.clone(),
                    })
                })
                .collect()
        };
        let manifest = Manifest {
            schema_version: SCHEMA_VERSION,
            seed: self.config.seed,
            language_count: self.config.languages,
            duration_buckets: self.config.buckets.clone(),
            generator: self.config.clone(),
            train: entries(&self.train)?,
            valid: entries(&self.valid)?,
            test: entries(&self.test)?,
        };
        let path = dir.join(MANIFEST_FILE);
        let mut text = serde_json::to_string_pretty(&manifest)?;
        text.push('\n');
        fs::write(&path, text)?;
        Ok(path)
    }

    /// Loads a manifest and all feature files it references.
    pub fn load(manifest_path: &Path) -> Result<Corpus> {
        let manifest = Manifest::read(manifest_path)?;
        let base = manifest_path.parent().unwrap_or(Path::new("."));
        let load = |entries: &[ManifestEntry]| -> Result<Vec<Utterance>> {
            entries
                .iter()
                .map(|e| {
                    Ok(Utterance {
                        id: e.id.clone(),
                        language: e.language,
                        transcript: e.transcript.clone(),
                        features: read_features(&base.join(&e.feature_path))?,
                        duration_s: e.duration_s,
                    })
                })
                .collect()
        };
        let mut config = manifest.generator.clone();
        config.buckets = manifest.duration_buckets.clone();
        Ok(Corpus {
            config,
            train: load(&manifest.train)?,
            valid: load(&manifest.valid)?,
            test: load(&manifest.test)?,
        })
    }
}

impl Manifest {
    pub fn read(path: &Path) -> Result<Manifest> {
        let text = fs::read_to_string(path)?;
        let manifest: Manifest = serde_json::from_str(&text).map_err(|e| Error::Format {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
        if manifest.schema_version != SCHEMA_VERSION {
            return Err(Error::Format {
                path: path.to_path_buf(),
                reason: format!("unsupported schema_version {}", manifest.schema_version),
            });
        }
        manifest.validate()?;
        Ok(manifest)
    }

    pub fn validate(&self) -> Result<()> {
        let mut ids = std::collections::HashSet::new();
        for e in self.train.iter().chain(&self.valid).chain(&self.test) {
            if !ids.insert(e.id.as_str()) {
                return Err(Error::Data(format!(
                    "utterance `{}` appears in more than one place",
                    e.id
                )));
            }
            if e.language >= self.language_count {
                return Err(Error::Data(format!(
                    "utterance `{}` has language {} but the corpus has {}",
                    e.id, e.language, self.language_count
                )));
            }
            if e.transcript.is_empty() {
                return Err(Error::Data(format!("utterance `{}` has an empty transcript", e.id)));
            }
        }
        Ok(())
    }
}
