//! On-disk dataset format.
//!
//! A dataset is a directory holding two files:
//!
//! * `manifest.jsonl` — one JSON header line, then one JSON record per pair
//!   (ids, raw text, word ids, subject, mode, and the blob offset/length);
//! * `features.bin` — per-pair feature blobs, each a format-version byte,
//!   the `(words × channels × bands)` array as little-endian `f32`, and a
//!   trailing CRC32 of the float bytes.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::io::crc32;

use super::{EegRecording, FeatureMode, PairedDataset, Split, TextSample};

/// Version byte written in front of every feature blob and echoed in the
/// manifest header.
pub const DATASET_FORMAT_VERSION: u8 = 1;

#[derive(Debug, thiserror::Error)]
pub enum DatasetIoError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("manifest malformed: {0}")]
    Manifest(#[from] serde_json::Error),
    #[error("manifest is empty")]
    EmptyManifest,
    #[error("unsupported dataset format version {found} (this build reads {expected})")]
    Version { found: u8, expected: u8 },
    #[error("feature blob for sentence {sentence_id} is truncated")]
    Truncated { sentence_id: u64 },
    #[error("feature blob for sentence {sentence_id} failed its checksum")]
    Checksum { sentence_id: u64 },
    #[error("manifest record for sentence {sentence_id} is inconsistent: {reason}")]
    Malformed { sentence_id: u64, reason: String },
}

/// Dataset-level metadata from the first manifest line.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetHeader {
    pub kind: String,
    pub format_version: u8,
    pub seed: u64,
    pub split: Split,
    pub config_hash: String,
    pub count: usize,
    pub vocab: Vec<String>,
}

#[derive(Debug, Serialize, Deserialize)]
struct PairRecord {
    sentence_id: u64,
    raw_text: String,
    words: Vec<usize>,
    subject_id: u32,
    mode: FeatureMode,
    w: usize,
    c: usize,
    b: usize,
    offset: u64,
    length: u64,
}

/// Write `dataset` under the directory `path` (created if missing).
pub fn save_dataset(
    dataset: &PairedDataset,
    path: &Path,
    config_hash: &str,
) -> Result<(), DatasetIoError> {
    std::fs::create_dir_all(path)?;
    let mut blob = Vec::new();
    let mut records = Vec::with_capacity(dataset.pairs.len());
    for (rec, text) in &dataset.pairs {
        let offset = blob.len() as u64;
        blob.push(DATASET_FORMAT_VERSION);
        let float_start = blob.len();
        for &v in &rec.features {
            blob.extend_from_slice(&v.to_le_bytes());
        }
        let crc = crc32(&blob[float_start..]);
        blob.extend_from_slice(&crc.to_le_bytes());
        records.push(PairRecord {
            sentence_id: text.sentence_id,
            raw_text: text.raw_text.clone(),
            words: text.words.clone(),
            subject_id: rec.subject_id,
            mode: rec.mode,
            w: rec.words,
            c: rec.channels,
            b: rec.bands,
            offset,
            length: blob.len() as u64 - offset,
        });
    }

    let header = DatasetHeader {
        kind: "paired-dataset".into(),
        format_version: DATASET_FORMAT_VERSION,
        seed: dataset.synthesis_seed,
        split: dataset.split,
        config_hash: config_hash.into(),
        count: dataset.pairs.len(),
        vocab: dataset.vocab.clone(),
    };
    let mut manifest = Vec::new();
    serde_json::to_writer(&mut manifest, &header)?;
    manifest.push(b'\n');
    for record in &records {
        serde_json::to_writer(&mut manifest, record)?;
        manifest.push(b'\n');
    }

    std::fs::File::create(path.join("manifest.jsonl"))?.write_all(&manifest)?;
    std::fs::File::create(path.join("features.bin"))?.write_all(&blob)?;
    Ok(())
}

/// Load a dataset saved by [`save_dataset`]. The round trip is lossless.
pub fn load_dataset(path: &Path) -> Result<(PairedDataset, DatasetHeader), DatasetIoError> {
    let manifest = std::fs::read_to_string(path.join("manifest.jsonl"))?;
    let blob = std::fs::read(path.join("features.bin"))?;
    let mut lines = manifest.lines();
    let header: DatasetHeader =
        serde_json::from_str(lines.next().ok_or(DatasetIoError::EmptyManifest)?)?;
    if header.format_version != DATASET_FORMAT_VERSION {
        return Err(DatasetIoError::Version {
            found: header.format_version,
            expected: DATASET_FORMAT_VERSION,
        });
    }

    let mut pairs = Vec::with_capacity(header.count);
    for line in lines {
        if line.trim().is_empty() {
            continue;
        }
        let record: PairRecord = serde_json::from_str(line)?;
        let sentence_id = record.sentence_id;
        let n_floats = record.w * record.c * record.b;
        let expected_len = 1 + 4 * n_floats as u64 + 4;
        if record.length != expected_len {
            return Err(DatasetIoError::Malformed {
                sentence_id,
                reason: format!(
                    "blob length {} does not match shape ({},{},{})",
                    record.length, record.w, record.c, record.b
                ),
            });
        }
        let start = record.offset as usize;
        let end = start + record.length as usize;
        if end > blob.len() {
            return Err(DatasetIoError::Truncated { sentence_id });
        }
        let version = blob[start];
        if version != DATASET_FORMAT_VERSION {
            return Err(DatasetIoError::Version {
                found: version,
                expected: DATASET_FORMAT_VERSION,
            });
        }
        let float_bytes = &blob[start + 1..end - 4];
        let stored_crc = u32::from_le_bytes(blob[end - 4..end].try_into().unwrap());
        if crc32(float_bytes) != stored_crc {
            return Err(DatasetIoError::Checksum { sentence_id });
        }
        let features: Vec<f32> = float_bytes
            .chunks_exact(4)
            .map(|chunk| f32::from_le_bytes(chunk.try_into().unwrap()))
            .collect();
        pairs.push((
            EegRecording {
                sentence_id,
                subject_id: record.subject_id,
                mode: record.mode,
                words: record.w,
                channels: record.c,
                bands: record.b,
                features,
            },
            TextSample {
                sentence_id,
                words: record.words,
                raw_text: record.raw_text,
            },
        ));
    }
    let dataset = PairedDataset {
        pairs,
        split: header.split,
        synthesis_seed: header.seed,
        vocab: header.vocab.clone(),
    };
    Ok((dataset, header))
}
