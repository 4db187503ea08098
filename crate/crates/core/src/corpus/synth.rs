use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{write_features, write_frame_classes, write_manifest, CorpusError, FeatureSequence, Utterance, BLANK_CLASS};

pub const MANIFEST_FILE: &str = "manifest";
pub const CENTROIDS_FILE: &str = "centroids.efea";
const SPEC_FILE: &str = "synth_spec.json";
const MAX_CENTROID_ATTEMPTS: usize = 200_000;

/// Parameters of a synthetic corpus. Integer ranges are inclusive `[lo, hi]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSpec {
    pub alphabet_size: usize,
    pub dim: usize,
    pub utterances: usize,
    pub tokens_per_utterance: [usize; 2],
    pub frames_per_token: [usize; 2],
    pub blank_frames_between_tokens: [usize; 2],
    pub noise_sigma: f64,
    pub centroid_similarity_band: [f64; 2],
    pub weak_label_error_rate: f64,
    pub anchor_error_rate: f64,
    /// Share of utterances flagged precise; their weak label is the truth.
    pub precise_fraction: f64,
    /// Weight of the previous segment's centroid mixed into the first frame
    /// of every segment (coarticulation). 0 disables it.
    pub onset_blend: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            alphabet_size: 8,
            dim: 32,
            utterances: 200,
            tokens_per_utterance: [20, 40],
            frames_per_token: [4, 8],
            blank_frames_between_tokens: [1, 3],
            noise_sigma: 0.03,
            centroid_similarity_band: [0.3, 0.7],
            weak_label_error_rate: 0.3,
            anchor_error_rate: 0.1,
            precise_fraction: 0.1,
            onset_blend: 0.0,
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<(), CorpusError> {
        let bad = |m: &str| Err(CorpusError::InvalidSpec(m.to_string()));
        if !(2..=26).contains(&self.alphabet_size) {
            return bad("alphabet_size must be in [2, 26]");
        }
        if self.dim < 2 {
            return bad("dim must be at least 2");
        }
        for (name, [lo, hi]) in [
            ("tokens_per_utterance", self.tokens_per_utterance),
            ("frames_per_token", self.frames_per_token),
            ("blank_frames_between_tokens", self.blank_frames_between_tokens),
        ] {
            if lo > hi {
                return Err(CorpusError::InvalidSpec(format!("{name}: empty range [{lo}, {hi}]")));
            }
        }
        if self.tokens_per_utterance[0] == 0 || self.frames_per_token[0] == 0 {
            return bad("tokens_per_utterance and frames_per_token must start at 1 or more");
        }
        if !(self.noise_sigma.is_finite() && self.noise_sigma >= 0.0) {
            return bad("noise_sigma must be finite and non-negative");
        }
        let [lo, hi] = self.centroid_similarity_band;
        if !(-1.0..=1.0).contains(&lo) || !(-1.0..=1.0).contains(&hi) || lo > hi {
            return bad("centroid_similarity_band must satisfy -1 <= lo <= hi <= 1");
        }
        for (name, p) in [
            ("weak_label_error_rate", self.weak_label_error_rate),
            ("anchor_error_rate", self.anchor_error_rate),
            ("precise_fraction", self.precise_fraction),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(CorpusError::InvalidSpec(format!("{name} must be a probability")));
            }
        }
        if !(0.0..1.0).contains(&self.onset_blend) {
            return bad("onset_blend must be in [0, 1)");
        }

        Ok(())
    }
}

/// The first `size` letters of `a..z`.
pub fn alphabet(size: usize) -> Vec<char> {
    (b'a'..=b'z').take(size).map(char::from).collect()
}

/// Independently substitutes, deletes, or inserts around each character,
/// each at `rate / 3`.
pub fn corrupt_label<R: Rng + ?Sized>(label: &str, rate: f64, alphabet: &[char], rng: &mut R) -> String {
    let mut out = String::with_capacity(label.len() + 4);
    for ch in label.chars() {
        let u: f64 = rng.random();
        if u < rate / 3.0 {
            out.push(substitute(ch, alphabet, rng));
        } else if u < 2.0 * rate / 3.0 {
            // deletion
        } else if u < rate {
            out.push(alphabet[rng.random_range(0..alphabet.len())]);
            out.push(ch);
        } else {
            out.push(ch);
        }
    }
    out
}

fn substitute<R: Rng + ?Sized>(ch: char, alphabet: &[char], rng: &mut R) -> char {
    let others: Vec<char> = alphabet.iter().copied().filter(|&c| c != ch).collect();
    if others.is_empty() {
        return ch;
    }
    others[rng.random_range(0..others.len())]
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn normalize(v: &mut [f64]) {
    let n = dot(v, v).sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
}

fn gaussian_vec(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| StandardNormal.sample(rng)).collect()
}

/// `count` unit vectors with every pairwise cosine inside `[lo, hi]`.
///
/// Candidates are drawn around a shared random direction, scaled so the
/// expected pairwise cosine sits mid-band, and rejected individually.
fn sample_centroids(rng: &mut ChaCha8Rng, count: usize, dim: usize, [lo, hi]: [f64; 2]) -> Result<Vec<Vec<f64>>, CorpusError> {
    let mut common = gaussian_vec(rng, dim);
    normalize(&mut common);
    let mid = ((lo + hi) / 2.0).clamp(0.0, 0.999);
    let pull = (mid / (1.0 - mid)).sqrt();
    let spread = 1.0 / (dim as f64).sqrt();

    let mut accepted: Vec<Vec<f64>> = Vec::with_capacity(count);
    let mut attempts = 0;
    while accepted.len() < count {
        if attempts >= MAX_CENTROID_ATTEMPTS {
            return Err(CorpusError::InfeasibleBand {
                wanted: count,
                lo,
                hi,
                dim,
                attempts,
            });
        }
        attempts += 1;
        let mut cand: Vec<f64> = gaussian_vec(rng, dim)
            .into_iter()
            .zip(&common)
            .map(|(g, m)| pull * m + spread * g)
            .collect();
        normalize(&mut cand);
        if accepted.iter().all(|c| {
            let s = dot(c, &cand);
            s >= lo && s <= hi
        }) {
            accepted.push(cand);
        }
    }
    Ok(accepted)
}

fn utterance_id(index: usize) -> String {
    format!("utt{index:05}")
}

/// Generates a corpus under `out_dir` and returns the manifest path.
///
/// Writes `manifest`, `centroids.efea` (`K` class rows then the blank row),
/// `synth_spec.json`, and `feats/<id>.efea` plus `feats/<id>.cls` per
/// utterance. Output bytes depend only on `spec`.
pub fn generate_corpus(spec: &SynthSpec, out_dir: impl AsRef<Path>) -> Result<PathBuf, CorpusError> {
    spec.validate()?;
    let out_dir = out_dir.as_ref();
    let feats_dir = out_dir.join("feats");
    fs::create_dir_all(&feats_dir).map_err(|e| CorpusError::io(&feats_dir, e))?;

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let k = spec.alphabet_size;
    let dim = spec.dim;
    let letters = alphabet(k);

    let centroids: Vec<Vec<f32>> = sample_centroids(&mut rng, k + 1, dim, spec.centroid_similarity_band)?
        .into_iter()
        .map(|c| c.into_iter().map(|v| v as f32).collect())
        .collect();
    let centroid_of = |class: i32| -> &[f32] {
        if class == BLANK_CLASS {
            &centroids[k]
        } else {
            &centroids[class as usize]
        }
    };
    write_features(&FeatureSequence::from_frames(dim, &centroids)?, out_dir.join(CENTROIDS_FILE))?;

    let noise = Normal::new(0.0, spec.noise_sigma).map_err(|e| CorpusError::InvalidSpec(e.to_string()))?;
    let range = |rng: &mut ChaCha8Rng, [lo, hi]: [usize; 2]| rng.random_range(lo..=hi);

    let mut utterances = Vec::with_capacity(spec.utterances);
    for index in 0..spec.utterances {
        let id = utterance_id(index);
        let n_tokens = range(&mut rng, spec.tokens_per_utterance);
        let tokens: Vec<usize> = (0..n_tokens).map(|_| rng.random_range(0..k)).collect();
        let truth: String = tokens.iter().map(|&t| letters[t]).collect();

        // Segment plan: (class, frame count) alternating token and blank runs.
        let mut segments: Vec<(i32, usize)> = Vec::new();
        for (i, &t) in tokens.iter().enumerate() {
            if i > 0 {
                let blanks = range(&mut rng, spec.blank_frames_between_tokens);
                if blanks > 0 {
                    segments.push((BLANK_CLASS, blanks));
                }
            }
            segments.push((t as i32, range(&mut rng, spec.frames_per_token)));
        }

        let mut data = Vec::new();
        let mut classes = Vec::new();
        let mut prev_class: Option<i32> = None;
        for &(class, len) in &segments {
            let c = centroid_of(class);
            for f in 0..len {
                let blend = match (f, prev_class) {
                    (0, Some(p)) if spec.onset_blend > 0.0 => Some(centroid_of(p)),
                    _ => None,
                };
                for d in 0..dim {
                    let mut v = c[d] as f64;
                    if let Some(p) = blend {
                        v = (1.0 - spec.onset_blend) * v + spec.onset_blend * p[d] as f64;
                    }
                    if spec.noise_sigma > 0.0 {
                        v += noise.sample(&mut rng);
                    }
                    data.push(v as f32);
                }
                classes.push(class);
            }
            prev_class = Some(class);
        }

        let precise = rng.random::<f64>() < spec.precise_fraction;
        let weak_label = if precise {
            truth.clone()
        } else {
            corrupt_label(&truth, spec.weak_label_error_rate, &letters, &mut rng)
        };
        let anchor_label = corrupt_label(&truth, spec.anchor_error_rate, &letters, &mut rng);

        let feature_ref = format!("feats/{id}.efea");
        let classes_ref = format!("feats/{id}.cls");
        write_features(&FeatureSequence::new(dim, data)?, out_dir.join(&feature_ref))?;
        write_frame_classes(&classes, out_dir.join(&classes_ref))?;
        utterances.push(Utterance {
            id,
            feature_ref,
            weak_label,
            anchor_label: Some(anchor_label),
            precise,
            ground_truth: Some(truth),
            frame_classes_ref: Some(classes_ref),
        });
    }

    let spec_path = out_dir.join(SPEC_FILE);
    let spec_json = serde_json::to_string_pretty(spec).expect("spec serializes");
    fs::write(&spec_path, spec_json + "\n").map_err(|e| CorpusError::io(&spec_path, e))?;
    let manifest = out_dir.join(MANIFEST_FILE);
    write_manifest(&utterances, &manifest)?;
    Ok(manifest)
}
