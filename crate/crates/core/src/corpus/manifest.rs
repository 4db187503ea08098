use std::collections::HashSet;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{read_features, CorpusError, FeatureSequence};

/// Sidecar class index of a blank (non-emitting) frame.
pub const BLANK_CLASS: i32 = -1;

/// One manifest record.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Utterance {
    pub id: String,
    #[serde(rename = "features")]
    pub feature_ref: String,
    pub weak_label: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub anchor_label: Option<String>,
    pub precise: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ground_truth: Option<String>,
    #[serde(default, rename = "frame_classes", skip_serializing_if = "Option::is_none")]
    pub frame_classes_ref: Option<String>,
}

pub fn read_manifest(path: impl AsRef<Path>) -> Result<Vec<Utterance>, CorpusError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| CorpusError::io(path, e))?;
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let utt: Utterance = serde_json::from_str(line).map_err(|e| CorpusError::Malformed {
            path: path.to_path_buf(),
            line: line_no,
            message: e.to_string(),
        })?;
        if utt.id.is_empty() {
            return Err(CorpusError::Malformed {
                path: path.to_path_buf(),
                line: line_no,
                message: "empty id".into(),
            });
        }
        if !seen.insert(utt.id.clone()) {
            return Err(CorpusError::DuplicateId {
                path: path.to_path_buf(),
                line: line_no,
                id: utt.id,
            });
        }
        out.push(utt);
    }
    Ok(out)
}

pub fn manifest_string(utterances: &[Utterance]) -> String {
    let mut s = String::new();
    for u in utterances {
        s.push_str(&serde_json::to_string(u).expect("utterance serializes"));
        s.push('\n');
    }
    s
}

pub fn write_manifest(utterances: &[Utterance], path: impl AsRef<Path>) -> Result<(), CorpusError> {
    let path = path.as_ref();
    let mut seen = HashSet::new();
    for (i, u) in utterances.iter().enumerate() {
        if !seen.insert(u.id.as_str()) {
            return Err(CorpusError::DuplicateId {
                path: path.to_path_buf(),
                line: i + 1,
                id: u.id.clone(),
            });
        }
    }
    fs::write(path, manifest_string(utterances)).map_err(|e| CorpusError::io(path, e))
}

pub fn read_frame_classes(path: impl AsRef<Path>) -> Result<Vec<i32>, CorpusError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| CorpusError::io(path, e))?;
    text.lines()
        .enumerate()
        .map(|(i, l)| {
            let v: i32 = l.trim().parse().map_err(|e: std::num::ParseIntError| CorpusError::Malformed {
                path: path.to_path_buf(),
                line: i + 1,
                message: e.to_string(),
            })?;
            if v < BLANK_CLASS {
                return Err(CorpusError::Malformed {
                    path: path.to_path_buf(),
                    line: i + 1,
                    message: format!("class index {v} below -1"),
                });
            }
            Ok(v)
        })
        .collect()
}

pub fn write_frame_classes(classes: &[i32], path: impl AsRef<Path>) -> Result<(), CorpusError> {
    let path = path.as_ref();
    let file = fs::File::create(path).map_err(|e| CorpusError::io(path, e))?;
    let mut out = BufWriter::new(file);
    for c in classes {
        writeln!(out, "{c}").map_err(|e| CorpusError::io(path, e))?;
    }
    out.flush().map_err(|e| CorpusError::io(path, e))
}

/// A manifest plus the directory its relative paths resolve against.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub manifest: PathBuf,
    pub base: PathBuf,
    pub utterances: Vec<Utterance>,
}

impl Dataset {
    pub fn open(manifest: impl AsRef<Path>) -> Result<Self, CorpusError> {
        let manifest = manifest.as_ref().to_path_buf();
        let utterances = read_manifest(&manifest)?;
        let base = manifest
            .parent()
            .map(Path::to_path_buf)
            .unwrap_or_else(|| PathBuf::from("."));
        Ok(Self {
            manifest,
            base,
            utterances,
        })
    }

    pub fn resolve(&self, reference: &str) -> PathBuf {
        let p = Path::new(reference);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base.join(p)
        }
    }

    pub fn features(&self, utt: &Utterance) -> Result<FeatureSequence, CorpusError> {
        read_features(self.resolve(&utt.feature_ref))
    }

    /// Frame classes for `utt`, checked against `frames` frames.
    pub fn frame_classes(&self, utt: &Utterance, frames: usize) -> Result<Option<Vec<i32>>, CorpusError> {
        let Some(r) = &utt.frame_classes_ref else {
            return Ok(None);
        };
        let path = self.resolve(r);
        let classes = read_frame_classes(&path)?;
        if classes.len() != frames {
            return Err(CorpusError::SidecarLength {
                path,
                expected: frames,
                found: classes.len(),
            });
        }
        Ok(Some(classes))
    }

    /// Absolute form of a reference, for manifests written elsewhere.
    pub fn absolute(&self, reference: &str) -> String {
        let p = self.resolve(reference);
        let p = if p.is_absolute() {
            p
        } else {
            std::env::current_dir().map(|d| d.join(&p)).unwrap_or(p)
        };
        p.to_string_lossy().into_owned()
    }
}
