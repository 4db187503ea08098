use rayon::prelude::*;
use serde::Serialize;

use super::{collapse, CentroidModel, ToyError};
use crate::compress::{prune_indices, PruneConfig};
use crate::corpus::{Dataset, FeatureSequence, BLANK_CLASS};
use crate::refine::TrainingExample;

/// Frames with their per-frame class supervision.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledFrames {
    pub id: String,
    pub features: FeatureSequence,
    pub classes: Vec<i32>,
}

impl LabeledFrames {
    /// Pruned copy; the sidecar is subset along with the frames.
    pub fn pruned(&self, cfg: &PruneConfig) -> LabeledFrames {
        let r = prune_indices(&self.features, cfg);
        LabeledFrames {
            id: self.id.clone(),
            features: self.features.select(&r.kept_indices).expect("indices come from features"),
            classes: r.kept_indices.iter().map(|&i| self.classes[i]).collect(),
        }
    }
}

/// Loads every utterance of `dataset` with its sidecar, sorted by id.
pub fn load_labeled(dataset: &Dataset) -> Result<Vec<LabeledFrames>, ToyError> {
    let mut out = dataset
        .utterances
        .par_iter()
        .map(|u| {
            let features = dataset.features(u)?;
            let classes = dataset
                .frame_classes(u, features.len())?
                .ok_or_else(|| ToyError::MissingSidecar(u.id.clone()))?;
            Ok(LabeledFrames {
                id: u.id.clone(),
                features,
                classes,
            })
        })
        .collect::<Result<Vec<_>, ToyError>>()?;
    out.sort_by(|a, b| a.id.cmp(&b.id));
    Ok(out)
}

/// Running per-class sums in f64.
struct Accumulator {
    sums: Vec<Vec<f64>>,
    counts: Vec<usize>,
    k: usize,
}

impl Accumulator {
    fn new(k: usize, dim: usize) -> Self {
        Self {
            sums: vec![vec![0.0; dim]; k + 1],
            counts: vec![0; k + 1],
            k,
        }
    }

    fn row(&self, class: i32) -> usize {
        if class == BLANK_CLASS {
            self.k
        } else {
            class as usize
        }
    }

    fn add<I: IntoIterator<Item = f64>>(&mut self, class: i32, frame: I) {
        let r = self.row(class);
        for (s, v) in self.sums[r].iter_mut().zip(frame) {
            *s += v;
        }
        self.counts[r] += 1;
    }

    fn mean(&self, row: usize) -> Option<Vec<f32>> {
        let n = self.counts[row];
        (n > 0).then(|| self.sums[row].iter().map(|s| (s / n as f64) as f32).collect())
    }
}

fn check_class(class: i32, k: usize) -> Result<(), ToyError> {
    if class < BLANK_CLASS || class >= k as i32 {
        return Err(ToyError::ClassOutOfRange { class, size: k });
    }
    Ok(())
}

/// Centroid of every class (and the blank) as the mean of its frames,
/// optionally after pruning. The affine map is left at identity.
pub fn train_from_scratch(data: &[LabeledFrames], alphabet: Vec<char>, prune: Option<&PruneConfig>) -> Result<CentroidModel, ToyError> {
    let dim = data
        .first()
        .map(|d| d.features.dim())
        .ok_or(ToyError::EmptyClass(0))?;
    let k = alphabet.len();
    let mut acc = Accumulator::new(k, dim);
    for item in data {
        if item.features.dim() != dim {
            return Err(ToyError::DimMismatch {
                model: dim,
                features: item.features.dim(),
            });
        }
        let owned;
        let item = match prune {
            Some(cfg) => {
                owned = item.pruned(cfg);
                &owned
            }
            None => item,
        };
        for (frame, &class) in item.features.frames().zip(&item.classes) {
            check_class(class, k)?;
            acc.add(class, frame.iter().map(|&v| v as f64));
        }
    }
    let mut classes = Vec::with_capacity(k);
    for c in 0..k {
        classes.push(acc.mean(c).ok_or(ToyError::EmptyClass(c as i32))?);
    }
    let blank = acc.mean(k).ok_or(ToyError::EmptyClass(BLANK_CLASS))?;
    CentroidModel::new(alphabet, classes, blank)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RecalDiagnostics {
    pub frames_used: usize,
    pub parameters_updated: usize,
    /// Dimensions whose inputs had no variance; these got scale 1 and a
    /// mean-residual shift.
    pub degenerate_dims: Vec<usize>,
}

/// Fits the per-dimension affine input map by ordinary least squares from
/// pruned frame components to the frozen centroid of each frame's class.
pub fn recalibrate(model: &CentroidModel, subset: &[LabeledFrames], prune: &PruneConfig) -> Result<(CentroidModel, RecalDiagnostics), ToyError> {
    let dim = model.dim();
    let k = model.num_classes();
    let mut n = 0usize;
    let (mut sx, mut sy, mut sxx, mut sxy) = (vec![0.0; dim], vec![0.0; dim], vec![0.0; dim], vec![0.0; dim]);
    for item in subset {
        if item.features.dim() != dim {
            return Err(ToyError::DimMismatch {
                model: dim,
                features: item.features.dim(),
            });
        }
        let pruned = item.pruned(prune);
        for (frame, &class) in pruned.features.frames().zip(&pruned.classes) {
            check_class(class, k)?;
            let target = model.centroid(class);
            for d in 0..dim {
                let (x, y) = (frame[d] as f64, target[d] as f64);
                sx[d] += x;
                sy[d] += y;
                sxx[d] += x * x;
                sxy[d] += x * y;
            }
            n += 1;
        }
    }
    if n == 0 {
        return Err(ToyError::EmptySubset);
    }
    let nf = n as f64;
    let mut scale = vec![1.0; dim];
    let mut shift = vec![0.0; dim];
    let mut degenerate = Vec::new();
    for d in 0..dim {
        let (mx, my) = (sx[d] / nf, sy[d] / nf);
        let var = sxx[d] / nf - mx * mx;
        let cov = sxy[d] / nf - mx * my;
        if var <= 1e-12 * (sxx[d] / nf).max(1e-300) {
            degenerate.push(d);
            shift[d] = my - mx;
        } else {
            scale[d] = cov / var;
            shift[d] = my - scale[d] * mx;
        }
    }
    Ok((
        model.with_affine(scale, shift),
        RecalDiagnostics {
            frames_used: n,
            parameters_updated: 2 * dim,
            degenerate_dims: degenerate,
        },
    ))
}

/// One self-aligned centroid update over labelled examples.
pub(super) fn align_and_update(model: &CentroidModel, examples: &[TrainingExample<'_>]) -> Result<CentroidModel, ToyError> {
    let dim = model.dim();
    let k = model.num_classes();
    let per_example: Vec<Option<Vec<(i32, Vec<f64>)>>> = examples
        .par_iter()
        .map(|ex| {
            if ex.features.dim() != dim {
                return Err(ToyError::DimMismatch {
                    model: dim,
                    features: ex.features.dim(),
                });
            }
            let target: Option<Vec<i32>> = ex.label.chars().map(|c| model.letter_class(c)).collect();
            let Some(target) = target else {
                return Ok(None);
            };
            let decoded = model.classify_frames(ex.features)?;
            if collapse(&decoded).len() != target.len() {
                return Ok(None);
            }
            let mut run = 0usize;
            let mut prev = None;
            let mut assigned = Vec::with_capacity(decoded.len());
            for (frame, &c) in ex.features.frames().zip(&decoded) {
                let class = if c == BLANK_CLASS {
                    BLANK_CLASS
                } else {
                    if prev != Some(c) {
                        run += 1;
                    }
                    target[run - 1]
                };
                prev = Some(c);
                assigned.push((class, model.map_frame(frame)));
            }
            Ok(Some(assigned))
        })
        .collect::<Result<_, ToyError>>()?;

    let mut acc = Accumulator::new(k, dim);
    for assigned in per_example.into_iter().flatten() {
        for (class, frame) in assigned {
            acc.add(class, frame);
        }
    }
    let centroids = (0..=k)
        .map(|row| acc.mean(row).unwrap_or_else(|| model.centroids[row].clone()))
        .collect();
    Ok(model.with_centroids(centroids))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::compress::PrunePolicy;
    use crate::corpus::{generate_corpus, read_features, SynthSpec, CENTROIDS_FILE};

    fn noise_free(dir: &std::path::Path) -> (Vec<LabeledFrames>, FeatureSequence, Dataset) {
        let spec = SynthSpec {
            alphabet_size: 4,
            dim: 12,
            utterances: 20,
            tokens_per_utterance: [4, 8],
            frames_per_token: [2, 5],
            noise_sigma: 0.0,
            seed: 9,
            ..SynthSpec::default()
        };
        let m = generate_corpus(&spec, dir).unwrap();
        let ds = Dataset::open(m).unwrap();
        (load_labeled(&ds).unwrap(), read_features(dir.join(CENTROIDS_FILE)).unwrap(), ds)
    }

    #[test]
    fn noise_free_recovers_true_centroids() {
        let dir = tempfile::tempdir().unwrap();
        let (data, truth, _) = noise_free(dir.path());
        let m = train_from_scratch(&data, crate::corpus::alphabet(4), None).unwrap();
        assert_eq!(m.table(), truth);
        let cfg = PruneConfig::new(0.999, PrunePolicy::OriginalAdjacent).unwrap();
        let pruned = train_from_scratch(&data, crate::corpus::alphabet(4), Some(&cfg)).unwrap();
        assert_eq!(pruned.table(), truth);
    }

    #[test]
    fn noise_free_decode_matches_truth() {
        let dir = tempfile::tempdir().unwrap();
        let (data, _, ds) = noise_free(dir.path());
        let m = train_from_scratch(&data, crate::corpus::alphabet(4), None).unwrap();
        for (item, u) in data.iter().zip(&ds.utterances) {
            assert_eq!(item.id, u.id);
            assert_eq!(Some(m.transcribe(&item.features).unwrap()), u.ground_truth);
        }
    }

    #[test]
    fn missing_class_is_an_error() {
        let f = FeatureSequence::new(2, vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let data = vec![LabeledFrames {
            id: "x".into(),
            features: f,
            classes: vec![0, BLANK_CLASS],
        }];
        assert!(matches!(
            train_from_scratch(&data, vec!['a', 'b', 'c'], None),
            Err(ToyError::EmptyClass(1))
        ));
        let bad = vec![LabeledFrames {
            classes: vec![0, 7],
            ..data[0].clone()
        }];
        assert!(matches!(train_from_scratch(&bad, vec!['a'], None), Err(ToyError::ClassOutOfRange { .. })));
    }

    fn transformed(data: &[LabeledFrames], f: impl Fn(f32) -> f32) -> Vec<LabeledFrames> {
        data.iter()
            .map(|d| LabeledFrames {
                features: FeatureSequence::new(d.features.dim(), d.features.as_slice().iter().map(|&v| f(v)).collect()).unwrap(),
                ..d.clone()
            })
            .collect()
    }

    #[test]
    fn recalibration_identity_shift_and_scale() {
        let dir = tempfile::tempdir().unwrap();
        let (data, _, _) = noise_free(dir.path());
        let model = train_from_scratch(&data, crate::corpus::alphabet(4), None).unwrap();
        let keep_all = PruneConfig::new(1.0, PrunePolicy::OriginalAdjacent).unwrap();

        let (m, diag) = recalibrate(&model, &data, &keep_all).unwrap();
        assert_eq!(diag.parameters_updated, 2 * model.dim());
        assert!(diag.degenerate_dims.is_empty());
        assert!(m.scale().iter().all(|s| (s - 1.0).abs() < 1e-9));
        assert!(m.shift().iter().all(|b| b.abs() < 1e-9));

        let (m, _) = recalibrate(&model, &transformed(&data, |v| v + 0.5), &keep_all).unwrap();
        assert!(m.scale().iter().all(|s| (s - 1.0).abs() < 1e-6), "{:?}", m.scale());
        assert!(m.shift().iter().all(|b| (b + 0.5).abs() < 1e-6), "{:?}", m.shift());

        let (m, _) = recalibrate(&model, &transformed(&data, |v| 2.0 * v), &keep_all).unwrap();
        assert!(m.scale().iter().all(|s| (s - 0.5).abs() < 1e-6));
        assert!(m.shift().iter().all(|b| b.abs() < 1e-6));
        assert_eq!(m.table(), model.table());

        let pruned = PruneConfig::new(0.5, PrunePolicy::OriginalAdjacent).unwrap();
        let (m, _) = recalibrate(&model, &transformed(&data, |v| 3.0 * v - 0.25), &pruned).unwrap();
        for (s, b) in m.scale().iter().zip(m.shift()) {
            assert!((s - 1.0 / 3.0).abs() < 1e-6 && (b - 0.25 / 3.0).abs() < 1e-6);
        }
    }

    #[test]
    fn recalibration_degenerate_dimension() {
        // Dimension 1 is constant in the inputs.
        let f = FeatureSequence::new(2, vec![1.0, 0.5, 0.0, 0.5, 0.5, 0.5]).unwrap();
        let model = CentroidModel::new(vec!['a', 'b'], vec![vec![1.0, 0.0], vec![0.0, 1.0]], vec![0.5, 0.5]).unwrap();
        let data = vec![LabeledFrames {
            id: "x".into(),
            features: f,
            classes: vec![0, 1, BLANK_CLASS],
        }];
        let keep_all = PruneConfig::new(1.0, PrunePolicy::OriginalAdjacent).unwrap();
        let (m, diag) = recalibrate(&model, &data, &keep_all).unwrap();
        assert_eq!(diag.degenerate_dims, vec![1]);
        assert_eq!(m.scale()[1], 1.0);
        // targets 0, 1, 0.5 against constant 0.5: mean residual 0
        assert!(m.shift()[1].abs() < 1e-12);
        assert!(matches!(recalibrate(&model, &[], &keep_all), Err(ToyError::EmptySubset)));
    }

    #[test]
    fn aligned_training_is_stable_on_clean_labels() {
        let dir = tempfile::tempdir().unwrap();
        let (data, truth, ds) = noise_free(dir.path());
        let model = train_from_scratch(&data, crate::corpus::alphabet(4), None).unwrap();
        let examples: Vec<TrainingExample<'_>> = data
            .iter()
            .zip(&ds.utterances)
            .map(|(d, u)| TrainingExample {
                id: &d.id,
                features: &d.features,
                label: u.ground_truth.as_deref().unwrap(),
            })
            .collect();
        let updated = align_and_update(&model, &examples).unwrap();
        assert_eq!(updated.table(), truth);
    }

    #[test]
    fn aligned_training_skips_mismatched_lengths() {
        let model = CentroidModel::new(vec!['a', 'b'], vec![vec![1.0, 0.0], vec![0.0, 1.0]], vec![0.7, 0.7]).unwrap();
        let f = FeatureSequence::new(2, vec![0.9, 0.1, 0.8, 0.2]).unwrap();
        let ex = [TrainingExample {
            id: "x",
            features: &f,
            label: "ab",
        }];
        assert_eq!(align_and_update(&model, &ex).unwrap(), model);
        let ex = [TrainingExample {
            id: "x",
            features: &f,
            label: "b",
        }];
        let m = align_and_update(&model, &ex).unwrap();
        assert!((m.centroid(1)[0] - 0.85).abs() < 1e-6);
        assert_eq!(m.centroid(0), model.centroid(0));
    }
}
