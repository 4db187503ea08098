//! A trainable toy transcriber.
//!
//! [`CentroidModel`] classifies each frame by cosine similarity against `K`
//! class centroids and one blank centroid, collapses runs of identical
//! classes, drops blanks, and emits one letter per remaining run. Frames pass
//! through a per-dimension affine map (`scale·v + shift`) first; that map is
//! the only thing [`recalibrate`] touches.

mod modes;
mod oracle;
mod train;

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{read_features, write_features, CorpusError, FeatureSequence, BLANK_CLASS};
use crate::refine::{BoxError, Transcriber, TrainingExample};

pub use modes::{compare_modes, EvalItem, ModeReport};
pub use oracle::NoisyOracle;
pub use train::{load_labeled, recalibrate, train_from_scratch, LabeledFrames, RecalDiagnostics};

#[derive(Debug, Error)]
pub enum ToyError {
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error("utterance {0} has no frame-class sidecar")]
    MissingSidecar(String),
    #[error("no training frames for class {0}")]
    EmptyClass(i32),
    #[error("class index {class} outside alphabet of size {size}")]
    ClassOutOfRange { class: i32, size: usize },
    #[error("dimension mismatch: model {model}, features {features}")]
    DimMismatch { model: usize, features: usize },
    #[error("invalid model: {0}")]
    Invalid(String),
    #[error("recalibration subset is empty")]
    EmptySubset,
    #[error("no ground truth for utterance {0}")]
    MissingTruth(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

/// Desk-scale analog of the three ways compression plugs into a model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainMode {
    /// Retrain every centroid on pruned frames.
    FromScratch,
    /// Keep centroids, refit only the per-dimension affine input map.
    Recalibrate,
    /// Feed pruned frames to the unchanged model.
    None,
}

const ZERO_NORM: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct CentroidModel {
    alphabet: Vec<char>,
    /// `K` class rows followed by the blank row.
    centroids: Vec<Vec<f32>>,
    scale: Vec<f64>,
    shift: Vec<f64>,
}

/// Text header stored next to the centroid feature file.
#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelHeader {
    alphabet: String,
    dim: usize,
    centroids: String,
    scale: Vec<f64>,
    shift: Vec<f64>,
}

impl CentroidModel {
    pub fn new(alphabet: Vec<char>, classes: Vec<Vec<f32>>, blank: Vec<f32>) -> Result<Self, ToyError> {
        let dim = blank.len();
        if dim == 0 {
            return Err(ToyError::Invalid("zero dimension".into()));
        }
        if alphabet.len() != classes.len() || alphabet.is_empty() {
            return Err(ToyError::Invalid(format!(
                "{} letters for {} class centroids",
                alphabet.len(),
                classes.len()
            )));
        }
        if let Some(c) = classes.iter().find(|c| c.len() != dim) {
            return Err(ToyError::DimMismatch {
                model: dim,
                features: c.len(),
            });
        }
        let mut centroids = classes;
        centroids.push(blank);
        Ok(Self {
            alphabet,
            centroids,
            scale: vec![1.0; dim],
            shift: vec![0.0; dim],
        })
    }

    /// Builds a model from a `(K+1)×D` centroid table, blank last.
    pub fn from_table(alphabet: Vec<char>, table: &FeatureSequence) -> Result<Self, ToyError> {
        if table.len() < 2 {
            return Err(ToyError::Invalid("centroid table needs at least two rows".into()));
        }
        let k = table.len() - 1;
        let classes = (0..k).map(|i| table.frame(i).to_vec()).collect();
        Self::new(alphabet, classes, table.frame(k).to_vec())
    }

    pub fn dim(&self) -> usize {
        self.scale.len()
    }

    pub fn alphabet(&self) -> &[char] {
        &self.alphabet
    }

    pub fn num_classes(&self) -> usize {
        self.alphabet.len()
    }

    pub fn centroid(&self, class: i32) -> &[f32] {
        if class == BLANK_CLASS {
            &self.centroids[self.num_classes()]
        } else {
            &self.centroids[class as usize]
        }
    }

    pub fn scale(&self) -> &[f64] {
        &self.scale
    }

    pub fn shift(&self) -> &[f64] {
        &self.shift
    }

    pub fn table(&self) -> FeatureSequence {
        FeatureSequence::from_frames(self.dim(), &self.centroids).expect("centroids share one dimension")
    }

    pub(crate) fn with_affine(&self, scale: Vec<f64>, shift: Vec<f64>) -> Self {
        Self {
            scale,
            shift,
            ..self.clone()
        }
    }

    pub(crate) fn with_centroids(&self, centroids: Vec<Vec<f32>>) -> Self {
        Self {
            centroids,
            ..self.clone()
        }
    }

    pub fn letter_class(&self, ch: char) -> Option<i32> {
        self.alphabet.iter().position(|&c| c == ch).map(|i| i as i32)
    }

    /// Frame after the affine input map.
    pub fn map_frame(&self, frame: &[f32]) -> Vec<f64> {
        frame
            .iter()
            .zip(self.scale.iter().zip(&self.shift))
            .map(|(&v, (s, b))| s * v as f64 + b)
            .collect()
    }

    /// Nearest class by cosine; ties go to the lowest class index and the
    /// blank only wins strictly.
    pub fn classify(&self, frame: &[f32]) -> i32 {
        let x = self.map_frame(frame);
        let xn = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        let sim = |c: &[f32]| {
            let (mut dot, mut cc) = (0.0, 0.0);
            for (&a, &b) in x.iter().zip(c) {
                let b = b as f64;
                dot += a * b;
                cc += b * b;
            }
            let cn = cc.sqrt();
            if xn < ZERO_NORM || cn < ZERO_NORM {
                0.0
            } else {
                dot / (xn * cn)
            }
        };
        let k = self.num_classes();
        let mut best = (0i32, sim(&self.centroids[0]));
        for i in 1..k {
            let s = sim(&self.centroids[i]);
            if s > best.1 {
                best = (i as i32, s);
            }
        }
        if sim(&self.centroids[k]) > best.1 {
            return BLANK_CLASS;
        }
        best.0
    }

    fn check_dim(&self, seq: &FeatureSequence) -> Result<(), ToyError> {
        if seq.dim() != self.dim() {
            return Err(ToyError::DimMismatch {
                model: self.dim(),
                features: seq.dim(),
            });
        }
        Ok(())
    }

    pub fn classify_frames(&self, seq: &FeatureSequence) -> Result<Vec<i32>, ToyError> {
        self.check_dim(seq)?;
        Ok(seq.frames().map(|f| self.classify(f)).collect())
    }

    pub fn transcribe(&self, seq: &FeatureSequence) -> Result<String, ToyError> {
        let classes = self.classify_frames(seq)?;
        Ok(collapse(&classes).into_iter().map(|c| self.alphabet[c as usize]).collect())
    }

    /// Writes `path` (JSON header) and a sibling `.efea` centroid table.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), ToyError> {
        let path = path.as_ref();
        let table_path = path.with_extension("efea");
        write_features(&self.table(), &table_path)?;
        let header = ModelHeader {
            alphabet: self.alphabet.iter().collect(),
            dim: self.dim(),
            centroids: table_path
                .file_name()
                .map(|f| f.to_string_lossy().into_owned())
                .unwrap_or_default(),
            scale: self.scale.clone(),
            shift: self.shift.clone(),
        };
        let json = serde_json::to_string_pretty(&header).expect("header serializes");
        fs::write(path, json + "\n").map_err(|source| ToyError::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ToyError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|source| ToyError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let header: ModelHeader = serde_json::from_str(&text).map_err(|source| ToyError::Json {
            path: path.to_path_buf(),
            source,
        })?;
        let table_path = path.parent().unwrap_or(Path::new(".")).join(&header.centroids);
        let table = read_features(table_path)?;
        if table.dim() != header.dim || header.scale.len() != header.dim || header.shift.len() != header.dim {
            return Err(ToyError::Invalid(format!("{}: inconsistent dimensions", path.display())));
        }
        let model = Self::from_table(header.alphabet.chars().collect(), &table)?;
        Ok(model.with_affine(header.scale, header.shift))
    }
}

/// Collapses consecutive identical classes and removes blanks.
pub fn collapse(classes: &[i32]) -> Vec<i32> {
    let mut out = Vec::new();
    let mut prev = None;
    for &c in classes {
        if prev != Some(c) && c != BLANK_CLASS {
            out.push(c);
        }
        prev = Some(c);
    }
    out
}

impl Transcriber for CentroidModel {
    type Snapshot = CentroidModel;

    /// Self-aligned centroid update: frames are segmented with the current
    /// model, and when the number of emitted runs matches the label length,
    /// run `i` is credited to letter `i`. Utterances that do not line up are
    /// skipped. Classes that receive no frames keep their centroid.
    fn train(&mut self, examples: &[TrainingExample<'_>]) -> Result<(), BoxError> {
        let updated = train::align_and_update(self, examples)?;
        *self = updated;
        Ok(())
    }

    fn transcribe(&self, _id: &str, features: &FeatureSequence) -> Result<String, BoxError> {
        Ok(CentroidModel::transcribe(self, features)?)
    }

    fn snapshot(&self) -> Self::Snapshot {
        self.clone()
    }

    fn restore(&mut self, snapshot: Self::Snapshot) {
        *self = snapshot;
    }

    fn checkpoint(&self, dir: &Path) -> Result<(), BoxError> {
        Ok(self.save(dir.join("model.json"))?)
    }
}
