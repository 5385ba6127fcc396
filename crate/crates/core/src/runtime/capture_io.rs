//! Capture interchange format.
//!
//! A capture is a JSON header plus a raw blob. The blob holds the hidden
//! states in `(layer, token, dim)` row-major order followed by the
//! final-position logits, all little-endian f32. Any producer that writes
//! this format (including external exporters) can feed the analysis
//! commands. A directory of captures is indexed by `manifest.json`.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::CaptureSet;
use crate::error::{Error, Result};

pub const FORMAT_NAME: &str = "tomprobe-capture";
pub const FORMAT_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaptureHeader {
    #[serde(default = "default_format")]
    pub format: String,
    #[serde(default = "default_version")]
    pub version: u32,
    pub trial_id: String,
    #[serde(rename = "L")]
    pub n_layers: usize,
    #[serde(rename = "T")]
    pub n_tokens: usize,
    #[serde(rename = "d")]
    pub d_model: usize,
    #[serde(rename = "V")]
    pub vocab_size: usize,
    pub question_span: (usize, usize),
    pub dtype: String,
    pub byte_order: String,
    /// Blob file name, relative to the header's directory.
    pub blob: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub token_ids: Vec<u32>,
    /// Which question produced the capture (`belief` or `fact`).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub question: Option<String>,
}

fn default_format() -> String {
    FORMAT_NAME.to_string()
}

fn default_version() -> u32 {
    FORMAT_VERSION
}

impl CaptureHeader {
    pub fn hidden_len(&self) -> usize {
        (self.n_layers + 1) * self.n_tokens * self.d_model
    }

    pub fn blob_bytes(&self) -> usize {
        4 * (self.hidden_len() + self.vocab_size)
    }

    /// Checks the header fields against the format contract.
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::CaptureFormat(format!("`{}`: {msg}", self.trial_id)));
        if self.format != FORMAT_NAME {
            return bad(format!("unknown format `{}`", self.format));
        }
        if self.version != FORMAT_VERSION {
            return bad(format!("unsupported version {}", self.version));
        }
        if self.dtype != "f32" {
            return bad(format!("dtype must be \"f32\", got `{}`", self.dtype));
        }
        if self.byte_order != "little" {
            return bad(format!("byte_order must be \"little\", got `{}`", self.byte_order));
        }
        if self.trial_id.is_empty() {
            return bad("empty trial_id".into());
        }
        if self.n_tokens == 0 || self.d_model == 0 || self.vocab_size == 0 {
            return bad("T, d and V must be positive".into());
        }
        let (start, end) = self.question_span;
        if start >= end || end > self.n_tokens {
            return bad(format!("question_span ({start}, {end}) outside [0, {}]", self.n_tokens));
        }
        if !self.token_ids.is_empty() && self.token_ids.len() != self.n_tokens {
            return bad(format!("{} token_ids for T = {}", self.token_ids.len(), self.n_tokens));
        }
        if self.blob.is_empty() || self.blob.contains('/') || self.blob.contains('\\') {
            return bad(format!("blob must be a bare file name, got `{}`", self.blob));
        }
        Ok(())
    }
}

/// Index of the captures in one directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub model: String,
    #[serde(default)]
    pub n_params: Option<usize>,
    pub condition: String,
    #[serde(default)]
    pub seed: Option<u64>,
    pub corpus_fingerprint: String,
    /// Producer configuration, echoed verbatim.
    #[serde(default)]
    pub config: serde_json::Value,
    pub config_hash: String,
    pub captures: Vec<ManifestEntry>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub trial_id: String,
    pub header: String,
    pub blob: String,
}

/// File stem for a capture of `trial_id` under `question`.
pub fn capture_stem(trial_id: &str, question: &str) -> String {
    format!("{trial_id}.{question}")
}

/// Writes header and blob into `dir`; returns the manifest entry.
pub fn write_capture(dir: &Path, capture: &CaptureSet, question: &str) -> Result<ManifestEntry> {
    if !capture.has_hidden() {
        return Err(Error::CaptureFormat(format!(
            "`{}` was run without hidden-state capture",
            capture.trial_id
        )));
    }
    capture.validate()?;
    let stem = capture_stem(&capture.trial_id, question);
    let header = CaptureHeader {
        format: default_format(),
        version: FORMAT_VERSION,
        trial_id: capture.trial_id.clone(),
        n_layers: capture.n_layers,
        n_tokens: capture.n_tokens,
        d_model: capture.d_model,
        vocab_size: capture.vocab_size(),
        question_span: capture.question_span,
        dtype: "f32".into(),
        byte_order: "little".into(),
        blob: format!("{stem}.bin"),
        token_ids: capture.token_ids.clone(),
        question: Some(question.to_string()),
    };
    let mut blob = Vec::with_capacity(header.blob_bytes());
    for v in capture.hidden.iter().chain(&capture.final_logits) {
        blob.extend_from_slice(&v.to_le_bytes());
    }
    let blob_path = dir.join(&header.blob);
    std::fs::write(&blob_path, blob).map_err(|e| Error::io(&blob_path, e))?;
    let header_name = format!("{stem}.json");
    let header_path = dir.join(&header_name);
    write_json(&header_path, &header)?;
    Ok(ManifestEntry {
        trial_id: capture.trial_id.clone(),
        header: header_name,
        blob: header.blob,
    })
}

pub fn read_header(path: &Path) -> Result<CaptureHeader> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let header: CaptureHeader = serde_json::from_str(&text).map_err(|e| Error::json(path, e))?;
    header.validate()?;
    Ok(header)
}

/// Reads and validates a capture from its header path.
pub fn read_capture(header_path: &Path) -> Result<CaptureSet> {
    let header = read_header(header_path)?;
    let blob_path = header_path
        .parent()
        .unwrap_or_else(|| Path::new("."))
        .join(&header.blob);
    let bytes = std::fs::read(&blob_path).map_err(|e| Error::io(&blob_path, e))?;
    if bytes.len() != header.blob_bytes() {
        return Err(Error::CaptureFormat(format!(
            "{}: blob has {} bytes, header implies {}",
            blob_path.display(),
            bytes.len(),
            header.blob_bytes()
        )));
    }
    let mut values: Vec<f32> = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    let final_logits = values.split_off(header.hidden_len());
    let capture = CaptureSet {
        trial_id: header.trial_id,
        n_layers: header.n_layers,
        n_tokens: header.n_tokens,
        d_model: header.d_model,
        hidden: values,
        final_logits,
        token_ids: header.token_ids,
        question_span: header.question_span,
    };
    capture.validate()?;
    Ok(capture)
}

pub fn write_manifest(dir: &Path, manifest: &Manifest) -> Result<PathBuf> {
    let path = dir.join(MANIFEST_FILE);
    write_json(&path, manifest)?;
    Ok(path)
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    let path = dir.join(MANIFEST_FILE);
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::json(&path, e))
}

/// Loads every capture listed in the manifest of `dir`, in manifest order.
pub fn read_capture_dir(dir: &Path) -> Result<(Manifest, Vec<CaptureSet>)> {
    let manifest = read_manifest(dir)?;
    let captures = manifest
        .captures
        .iter()
        .map(|entry| {
            let capture = read_capture(&dir.join(&entry.header))?;
            if capture.trial_id != entry.trial_id {
                return Err(Error::CaptureFormat(format!(
                    "manifest lists `{}` but {} holds `{}`",
                    entry.trial_id, entry.header, capture.trial_id
                )));
            }
            Ok(capture)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((manifest, captures))
}

/// Pretty JSON with a trailing newline.
pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::json(path, e))?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> CaptureSet {
        let (l, t, d, v) = (2, 3, 4, 5);
        CaptureSet {
            trial_id: "t1".into(),
            n_layers: l,
            n_tokens: t,
            d_model: d,
            hidden: (0..(l + 1) * t * d).map(|i| i as f32 * 0.5 - 3.0).collect(),
            final_logits: (0..v).map(|i| i as f32).collect(),
            token_ids: vec![11, 12, 13],
            question_span: (1, 3),
        }
    }

    #[test]
    fn round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let c = sample();
        let entry = write_capture(dir.path(), &c, "belief").unwrap();
        assert_eq!(entry.header, "t1.belief.json");
        let back = read_capture(&dir.path().join(&entry.header)).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.hidden_at(2, 1), &c.hidden[(2 * 3 + 1) * 4..][..4]);
    }

    #[test]
    fn blob_layout_is_layer_token_dim_then_logits() {
        let dir = tempfile::tempdir().unwrap();
        let c = sample();
        write_capture(dir.path(), &c, "belief").unwrap();
        let raw = std::fs::read(dir.path().join("t1.belief.bin")).unwrap();
        assert_eq!(raw.len(), 4 * (36 + 5));
        let at = |i: usize| f32::from_le_bytes(raw[4 * i..4 * i + 4].try_into().unwrap());
        // layer 1, token 2, dim 3
        assert_eq!(at((3 + 2) * 4 + 3), c.hidden_at(1, 2)[3]);
        assert_eq!(at(36 + 4), 4.0);
    }

    #[test]
    fn header_rules() {
        let dir = tempfile::tempdir().unwrap();
        write_capture(dir.path(), &sample(), "belief").unwrap();
        let path = dir.path().join("t1.belief.json");
        let good = read_header(&path).unwrap();
        assert_eq!(good.dtype, "f32");

        let mut h = good.clone();
        h.dtype = "f16".into();
        assert!(h.validate().is_err());
        let mut h = good.clone();
        h.byte_order = "big".into();
        assert!(h.validate().is_err());
        let mut h = good.clone();
        h.question_span = (2, 4);
        assert!(h.validate().is_err());
        let mut h = good.clone();
        h.question_span = (3, 3);
        assert!(h.validate().is_err());
        let mut h = good;
        h.blob = "../x.bin".into();
        assert!(h.validate().is_err());
    }

    #[test]
    fn truncated_blob_rejected() {
        let dir = tempfile::tempdir().unwrap();
        write_capture(dir.path(), &sample(), "belief").unwrap();
        let blob = dir.path().join("t1.belief.bin");
        let raw = std::fs::read(&blob).unwrap();
        std::fs::write(&blob, &raw[..raw.len() - 4]).unwrap();
        let err = read_capture(&dir.path().join("t1.belief.json")).unwrap_err();
        assert!(matches!(err, Error::CaptureFormat(_)), "{err}");
    }

    #[test]
    fn header_uses_documented_keys() {
        let dir = tempfile::tempdir().unwrap();
        write_capture(dir.path(), &sample(), "belief").unwrap();
        let v: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(dir.path().join("t1.belief.json")).unwrap()).unwrap();
        for key in ["trial_id", "L", "T", "d", "V", "question_span", "dtype", "byte_order"] {
            assert!(v.get(key).is_some(), "missing {key}");
        }
        assert_eq!(v["question_span"], serde_json::json!([1, 3]));
    }
}
