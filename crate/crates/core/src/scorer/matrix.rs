//! Score manifest (JSON) and the `KPTS` binary matrix.
//!
//! Matrix layout, all little-endian:
//!
//! | bytes | field |
//! |-------|-------|
//! | 4     | magic `KPTS` |
//! | 4     | u32 version = 1 |
//! | 8     | u64 n_instances |
//! | 8     | u64 total_pieces |
//! | 4·n·m | f32 payload, row-major by instance |

use std::collections::{HashMap, HashSet};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{KptError, Result};

pub const MAGIC: &[u8; 4] = b"KPTS";
pub const FORMAT_VERSION: u32 = 1;
const HEADER_LEN: usize = 24;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestWord {
    pub surface: String,
    pub piece_count: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawManifest", into = "RawManifest")]
pub struct ScoreManifest {
    pub dataset_id: String,
    pub template_id: String,
    pub n_instances: usize,
    words: Vec<ManifestWord>,
    total_pieces: usize,
}

#[derive(Serialize, Deserialize)]
struct RawManifest {
    format_version: u32,
    dataset_id: String,
    template_id: String,
    n_instances: usize,
    words: Vec<ManifestWord>,
}

impl TryFrom<RawManifest> for ScoreManifest {
    type Error = KptError;

    fn try_from(raw: RawManifest) -> Result<Self> {
        if raw.format_version != FORMAT_VERSION {
            return Err(KptError::UnsupportedVersion(raw.format_version));
        }
        ScoreManifest::new(&raw.dataset_id, &raw.template_id, raw.n_instances, raw.words)
    }
}

impl From<ScoreManifest> for RawManifest {
    fn from(m: ScoreManifest) -> Self {
        RawManifest {
            format_version: FORMAT_VERSION,
            dataset_id: m.dataset_id,
            template_id: m.template_id,
            n_instances: m.n_instances,
            words: m.words,
        }
    }
}

impl ScoreManifest {
    pub fn new(dataset_id: &str, template_id: &str, n_instances: usize, words: Vec<ManifestWord>) -> Result<Self> {
        let mut seen = HashSet::new();
        for w in &words {
            if w.piece_count == 0 {
                return Err(KptError::InvalidManifest(format!(
                    "word {:?} has zero pieces",
                    w.surface
                )));
            }
            if !seen.insert(w.surface.as_str()) {
                return Err(KptError::InvalidManifest(format!("word {:?} listed twice", w.surface)));
            }
        }
        let total_pieces = words.iter().map(|w| w.piece_count).sum();
        Ok(Self {
            dataset_id: dataset_id.to_string(),
            template_id: template_id.to_string(),
            n_instances,
            words,
            total_pieces,
        })
    }

    pub fn words(&self) -> &[ManifestWord] {
        &self.words
    }

    pub fn total_pieces(&self) -> usize {
        self.total_pieces
    }

    /// Surface to `(first column, piece_count)`.
    pub fn column_index(&self) -> HashMap<&str, (usize, usize)> {
        let mut col = 0;
        self.words
            .iter()
            .map(|w| {
                let entry = (w.surface.as_str(), (col, w.piece_count));
                col += w.piece_count;
                entry
            })
            .collect()
    }

    pub fn piece_count(&self, surface: &str) -> Option<usize> {
        self.words.iter().find(|w| w.surface == surface).map(|w| w.piece_count)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

/// Per-piece masked-position probabilities, `n_instances × total_pieces`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMatrix {
    manifest: ScoreManifest,
    values: Vec<f32>,
}

fn check_range(values: &[f32], width: usize) -> Result<()> {
    match values.iter().position(|v| !(*v > 0.0 && *v <= 1.0)) {
        Some(i) => Err(KptError::OutOfRange(i / width, i % width)),
        None => Ok(()),
    }
}

impl ScoreMatrix {
    pub fn new(manifest: ScoreManifest, values: Vec<f32>) -> Result<Self> {
        let expected = manifest.n_instances * manifest.total_pieces;
        if values.len() != expected {
            return Err(KptError::DimensionMismatch(format!(
                "manifest implies {} values, got {}",
                expected,
                values.len()
            )));
        }
        check_range(&values, manifest.total_pieces.max(1))?;
        Ok(Self { manifest, values })
    }

    pub fn manifest(&self) -> &ScoreManifest {
        &self.manifest
    }

    pub fn n_rows(&self) -> usize {
        self.manifest.n_instances
    }

    pub fn n_cols(&self) -> usize {
        self.manifest.total_pieces
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn row(&self, i: usize) -> &[f32] {
        let w = self.n_cols();
        &self.values[i * w..(i + 1) * w]
    }

    /// Rows `indices` in the given order, with the manifest's instance count updated.
    pub fn select_rows(&self, indices: &[usize]) -> ScoreMatrix {
        let mut values = Vec::with_capacity(indices.len() * self.n_cols());
        for &i in indices {
            values.extend_from_slice(self.row(i));
        }
        let mut manifest = self.manifest.clone();
        manifest.n_instances = indices.len();
        ScoreMatrix { manifest, values }
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + 4 * self.values.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.n_rows() as u64).to_le_bytes());
        out.extend_from_slice(&(self.n_cols() as u64).to_le_bytes());
        for v in &self.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn decode(bytes: &[u8], manifest: ScoreManifest) -> Result<Self> {
        if bytes.len() < 4 || &bytes[..4] != MAGIC {
            return Err(KptError::BadMagic);
        }
        if bytes.len() < HEADER_LEN {
            return Err(KptError::DimensionMismatch(format!(
                "header needs {HEADER_LEN} bytes, file has {}",
                bytes.len()
            )));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if version != FORMAT_VERSION {
            return Err(KptError::UnsupportedVersion(version));
        }
        let n = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        let m = u64::from_le_bytes(bytes[16..24].try_into().unwrap()) as usize;
        if n != manifest.n_instances || m != manifest.total_pieces {
            return Err(KptError::DimensionMismatch(format!(
                "header is {n}x{m}, manifest is {}x{}",
                manifest.n_instances, manifest.total_pieces
            )));
        }
        let payload = &bytes[HEADER_LEN..];
        let expected = n
            .checked_mul(m)
            .ok_or_else(|| KptError::DimensionMismatch("header dimensions overflow".into()))?;
        let found = payload.len() / 4;
        if found < expected {
            return Err(KptError::TruncatedPayload { expected, found });
        }
        if payload.len() > expected * 4 {
            return Err(KptError::TrailingBytes(payload.len() - expected * 4));
        }
        let values: Vec<f32> = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        check_range(&values, m.max(1))?;
        Ok(Self { manifest, values })
    }

    pub fn write(&self, manifest_path: impl AsRef<Path>, matrix_path: impl AsRef<Path>) -> Result<()> {
        let (mp, xp) = (manifest_path.as_ref(), matrix_path.as_ref());
        fs::write(mp, self.manifest.to_json()).map_err(|e| KptError::io(mp, e))?;
        fs::write(xp, self.encode()).map_err(|e| KptError::io(xp, e))
    }
}

pub fn load_score_matrix(manifest_path: impl AsRef<Path>, matrix_path: impl AsRef<Path>) -> Result<ScoreMatrix> {
    let (mp, xp) = (manifest_path.as_ref(), matrix_path.as_ref());
    let manifest_text = fs::read_to_string(mp).map_err(|e| KptError::io(mp, e))?;
    let manifest = ScoreManifest::from_json(&manifest_text)?;
    let bytes = fs::read(xp).map_err(|e| KptError::io(xp, e))?;
    ScoreMatrix::decode(&bytes, manifest)
}
