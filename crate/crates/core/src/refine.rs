//! Self-evolving label refinement.
//!
//! Each iteration trains the transcriber on the current refined set, relabels
//! every weakly labelled utterance of the original dataset, and keeps the
//! hypotheses that agree with the fixed anchor labels to within `tau` edits.
//! Precise utterances pass through untouched unless `bypass_precise` is off.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{manifest_string, CorpusError, Dataset, FeatureSequence, Utterance};
use crate::metrics::{corpus_cer, edit_distance};

pub type BoxError = Box<dyn std::error::Error + Send + Sync + 'static>;

/// Features plus the label a transcriber may learn from. Ground truth and
/// frame-class sidecars are deliberately absent.
#[derive(Debug, Clone, Copy)]
pub struct TrainingExample<'a> {
    pub id: &'a str,
    pub features: &'a FeatureSequence,
    pub label: &'a str,
}

/// Anything that can be trained on labelled features and transcribe them.
pub trait Transcriber {
    type Snapshot: Clone;

    fn train(&mut self, examples: &[TrainingExample<'_>]) -> Result<(), BoxError>;

    /// Must be deterministic for a fixed internal state.
    fn transcribe(&self, id: &str, features: &FeatureSequence) -> Result<String, BoxError>;

    fn snapshot(&self) -> Self::Snapshot;

    fn restore(&mut self, snapshot: Self::Snapshot);

    /// Persist the current state under `dir`. No-op by default.
    fn checkpoint(&self, _dir: &Path) -> Result<(), BoxError> {
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RefineConfig {
    /// Maximum edit distance (or distance per anchor character when
    /// `normalize_distance` is set) between hypothesis and anchor.
    pub tau: f64,
    pub iterations: usize,
    #[serde(default)]
    pub normalize_distance: bool,
    #[serde(default = "yes")]
    pub bypass_precise: bool,
}

fn yes() -> bool {
    true
}

impl Default for RefineConfig {
    fn default() -> Self {
        Self {
            tau: 10.0,
            iterations: 3,
            normalize_distance: false,
            bypass_precise: true,
        }
    }
}

impl RefineConfig {
    pub fn validate(&self) -> Result<(), RefineError> {
        if !(self.tau >= 0.0) {
            return Err(RefineError::Config(format!("tau must be non-negative, got {}", self.tau)));
        }
        if self.iterations == 0 {
            return Err(RefineError::Config("iterations must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationStats {
    pub iteration: usize,
    pub input_count: usize,
    pub retained_count: usize,
    /// Non-precise entries dropped because they carry no anchor label.
    pub missing_anchor_count: usize,
    pub mean_edit_distance_to_anchor: f64,
    pub relabeled_count: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub hidden_truth_cer: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct RefineOutput<S> {
    pub manifests: Vec<PathBuf>,
    pub stats: Vec<IterationStats>,
    pub refined: Vec<Utterance>,
    pub final_model: S,
}

#[derive(Debug, Error)]
pub enum RefineError {
    #[error("invalid refine config: {0}")]
    Config(String),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error("utterance {id}: {source}")]
    Utterance {
        id: String,
        #[source]
        source: BoxError,
    },
    #[error("training failed at iteration {iteration}: {source}")]
    Train {
        iteration: usize,
        #[source]
        source: BoxError,
    },
    #[error("refinement collapsed: refined set is empty at iteration {iteration}")]
    Collapsed { iteration: usize },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// A loaded utterance: manifest record plus its frames.
#[derive(Debug, Clone)]
pub struct Loaded {
    pub utterance: Utterance,
    pub features: FeatureSequence,
}

/// Reads every feature file of `dataset`, in id order.
pub fn load_dataset(dataset: &Dataset) -> Result<Vec<Loaded>, RefineError> {
    let mut loaded = dataset
        .utterances
        .par_iter()
        .map(|u| {
            let features = dataset.features(u).map_err(|e| RefineError::Utterance {
                id: u.id.clone(),
                source: Box::new(e),
            })?;
            Ok(Loaded {
                utterance: u.clone(),
                features,
            })
        })
        .collect::<Result<Vec<_>, RefineError>>()?;
    loaded.sort_by(|a, b| a.utterance.id.cmp(&b.utterance.id));
    Ok(loaded)
}

/// One hypothesis per utterance, ordered by id.
pub fn label_pass<M>(model: &M, utterances: &[&Loaded]) -> Result<Vec<(String, String)>, RefineError>
where
    M: Transcriber + Sync,
{
    let mut out = utterances
        .par_iter()
        .map(|l| {
            let id = &l.utterance.id;
            model
                .transcribe(id, &l.features)
                .map(|hyp| (id.clone(), hyp))
                .map_err(|source| RefineError::Utterance { id: id.clone(), source })
        })
        .collect::<Result<Vec<_>, _>>()?;
    out.sort_by(|a, b| a.0.cmp(&b.0));
    Ok(out)
}

/// Outcome of [`agreement_filter`].
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Filtered {
    /// Retained utterances, relabelled with their hypothesis.
    pub retained: Vec<Utterance>,
    pub missing_anchor: usize,
}

fn within_tau(distance: usize, anchor: &str, tau: f64, normalize: bool) -> bool {
    if normalize {
        let len = anchor.chars().count();
        if len == 0 {
            return distance == 0;
        }
        distance as f64 / len as f64 <= tau
    } else {
        distance as f64 <= tau
    }
}

/// Keeps `(x, ŷ)` pairs whose hypothesis is within `tau` of the anchor.
///
/// `hypotheses` pairs utterance ids with hypotheses; utterances without a
/// hypothesis are ignored.
pub fn agreement_filter(hypotheses: &[(String, String)], utterances: &[&Utterance], tau: f64, normalize: bool) -> Filtered {
    let by_id: std::collections::HashMap<&str, &Utterance> = utterances.iter().map(|u| (u.id.as_str(), *u)).collect();
    let mut out = Filtered::default();
    for (id, hyp) in hypotheses {
        let Some(u) = by_id.get(id.as_str()) else {
            continue;
        };
        let Some(anchor) = &u.anchor_label else {
            out.missing_anchor += 1;
            continue;
        };
        if within_tau(edit_distance(hyp, anchor), anchor, tau, normalize) {
            let mut kept = (*u).clone();
            kept.weak_label = hyp.clone();
            out.retained.push(kept);
        }
    }
    out
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> RefineError + '_ {
    move |source| RefineError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn stats_for(iteration: usize, input_count: usize, refined: &[Utterance], originals: &[Loaded], missing_anchor: usize) -> IterationStats {
    let original_label = |id: &str| {
        originals
            .binary_search_by(|l| l.utterance.id.as_str().cmp(id))
            .map(|i| originals[i].utterance.weak_label.as_str())
            .ok()
    };
    let distances: Vec<usize> = refined
        .iter()
        .filter_map(|u| u.anchor_label.as_ref().map(|a| edit_distance(&u.weak_label, a)))
        .collect();
    let mean_edit_distance_to_anchor = if distances.is_empty() {
        0.0
    } else {
        distances.iter().sum::<usize>() as f64 / distances.len() as f64
    };
    let relabeled_count = refined
        .iter()
        .filter(|u| original_label(&u.id).is_some_and(|orig| orig != u.weak_label))
        .count();
    let hidden_truth_cer = corpus_cer(
        refined
            .iter()
            .filter_map(|u| u.ground_truth.as_deref().map(|t| (u.weak_label.as_str(), t))),
    )
    .ok();
    IterationStats {
        iteration,
        input_count,
        retained_count: refined.len(),
        missing_anchor_count: missing_anchor,
        mean_edit_distance_to_anchor,
        relabeled_count,
        hidden_truth_cer,
    }
}

/// Rewrites relative paths so the manifest stays valid from another directory.
fn relocate(dataset: &Dataset, u: &Utterance) -> Utterance {
    let mut u = u.clone();
    u.feature_ref = dataset.absolute(&u.feature_ref);
    if let Some(r) = &u.frame_classes_ref {
        u.frame_classes_ref = Some(dataset.absolute(r));
    }
    u
}

/// Runs `cfg.iterations` rounds of train → relabel → filter.
///
/// Writes `<out>/iter_<k>/manifest` for k = 0..=n (k = 0 is the unfiltered
/// hybrid dataset), `<out>/stats` with one JSON record per iteration, and
/// a transcriber checkpoint under each `iter_<k>` for k ≥ 1.
pub fn refine_loop<M>(dataset: &Dataset, model: &mut M, cfg: &RefineConfig, out_dir: &Path) -> Result<RefineOutput<M::Snapshot>, RefineError>
where
    M: Transcriber + Sync,
{
    cfg.validate()?;
    let loaded = load_dataset(dataset)?;
    fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;

    let mut manifests = Vec::new();
    let mut stats = Vec::new();
    let stats_path = out_dir.join("stats");
    let mut stats_file = fs::File::create(&stats_path).map_err(io_err(&stats_path))?;

    let persist = |k: usize, refined: &[Utterance], stats: &IterationStats, stats_file: &mut fs::File| -> Result<PathBuf, RefineError> {
        let dir = out_dir.join(format!("iter_{k}"));
        fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        let path = dir.join("manifest");
        let rows: Vec<Utterance> = refined.iter().map(|u| relocate(dataset, u)).collect();
        fs::write(&path, manifest_string(&rows)).map_err(io_err(&path))?;
        let line = serde_json::to_string(stats).expect("stats serialize");
        writeln!(stats_file, "{line}").map_err(io_err(&stats_path))?;
        Ok(path)
    };

    // R_0 is the full hybrid dataset.
    let mut refined: Vec<Utterance> = loaded.iter().map(|l| l.utterance.clone()).collect();
    if refined.is_empty() {
        return Err(RefineError::Collapsed { iteration: 0 });
    }
    let s0 = stats_for(0, loaded.len(), &refined, &loaded, 0);
    manifests.push(persist(0, &refined, &s0, &mut stats_file)?);
    stats.push(s0);

    let feature_of = |id: &str| -> &FeatureSequence {
        let i = loaded
            .binary_search_by(|l| l.utterance.id.as_str().cmp(id))
            .expect("refined ids come from the dataset");
        &loaded[i].features
    };

    for iteration in 1..=cfg.iterations {
        let examples: Vec<TrainingExample<'_>> = refined
            .iter()
            .map(|u| TrainingExample {
                id: &u.id,
                features: feature_of(&u.id),
                label: &u.weak_label,
            })
            .collect();
        model
            .train(&examples)
            .map_err(|source| RefineError::Train { iteration, source })?;

        let (verbatim, candidates): (Vec<&Loaded>, Vec<&Loaded>) =
            loaded.iter().partition(|l| cfg.bypass_precise && l.utterance.precise);
        let hypotheses = label_pass(model, &candidates)?;
        let candidate_utts: Vec<&Utterance> = candidates.iter().map(|l| &l.utterance).collect();
        let filtered = agreement_filter(&hypotheses, &candidate_utts, cfg.tau, cfg.normalize_distance);

        let mut next: Vec<Utterance> = verbatim.iter().map(|l| l.utterance.clone()).collect();
        next.extend(filtered.retained);
        next.sort_by(|a, b| a.id.cmp(&b.id));
        if next.is_empty() {
            return Err(RefineError::Collapsed { iteration });
        }
        refined = next;

        let s = stats_for(iteration, loaded.len(), &refined, &loaded, filtered.missing_anchor);
        manifests.push(persist(iteration, &refined, &s, &mut stats_file)?);
        stats.push(s);
        let dir = out_dir.join(format!("iter_{iteration}"));
        model
            .checkpoint(&dir)
            .map_err(|source| RefineError::Train { iteration, source })?;
    }

    Ok(RefineOutput {
        manifests,
        stats,
        refined,
        final_model: model.snapshot(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::write_features;

    /// Returns whatever weak label the dataset carried for the id.
    struct Echo {
        labels: std::collections::HashMap<String, String>,
        trained: usize,
    }

    impl Transcriber for Echo {
        type Snapshot = usize;
        fn train(&mut self, _: &[TrainingExample<'_>]) -> Result<(), BoxError> {
            self.trained += 1;
            Ok(())
        }
        fn transcribe(&self, id: &str, _: &FeatureSequence) -> Result<String, BoxError> {
            self.labels.get(id).cloned().ok_or_else(|| format!("no label for {id}").into())
        }
        fn snapshot(&self) -> usize {
            self.trained
        }
        fn restore(&mut self, s: usize) {
            self.trained = s;
        }
    }

    fn utt(id: &str, weak: &str, anchor: Option<&str>, precise: bool) -> Utterance {
        Utterance {
            id: id.into(),
            feature_ref: format!("{id}.efea"),
            weak_label: weak.into(),
            anchor_label: anchor.map(String::from),
            precise,
            ground_truth: None,
            frame_classes_ref: None,
        }
    }

    fn dataset(dir: &Path, utts: &[Utterance]) -> Dataset {
        for u in utts {
            write_features(&FeatureSequence::new(2, vec![1.0, 0.0]).unwrap(), dir.join(&u.feature_ref)).unwrap();
        }
        let m = dir.join("manifest");
        crate::corpus::write_manifest(utts, &m).unwrap();
        Dataset::open(m).unwrap()
    }

    fn echo(utts: &[Utterance]) -> Echo {
        Echo {
            labels: utts.iter().map(|u| (u.id.clone(), u.weak_label.clone())).collect(),
            trained: 0,
        }
    }

    #[test]
    fn filter_examples() {
        // distances 2, 10, 11 against the anchor "aaaaaaaaaaa" (11 chars)
        let anchor = "a".repeat(11);
        let hyps = vec![
            ("x".to_string(), format!("bb{}", "a".repeat(9))),
            ("y".to_string(), format!("{}a", "b".repeat(10))),
            ("z".to_string(), "b".repeat(11)),
        ];
        assert_eq!(edit_distance(&hyps[0].1, &anchor), 2);
        assert_eq!(edit_distance(&hyps[1].1, &anchor), 10);
        assert_eq!(edit_distance(&hyps[2].1, &anchor), 11);
        let us = [utt("x", "w", Some(&anchor), false), utt("y", "w", Some(&anchor), false), utt("z", "w", Some(&anchor), false)];
        let refs: Vec<&Utterance> = us.iter().collect();
        let f = agreement_filter(&hyps, &refs, 10.0, false);
        let ids: Vec<_> = f.retained.iter().map(|u| u.id.as_str()).collect();
        assert_eq!(ids, ["x", "y"]);
        assert_eq!(f.retained[0].weak_label, hyps[0].1);
        assert_eq!(f.retained[0].anchor_label.as_deref(), Some(anchor.as_str()));

        let f = agreement_filter(&hyps, &refs, 100.0, false);
        assert_eq!(f.retained.len(), 3);
        assert!(f.retained.iter().zip(&hyps).all(|(u, (_, h))| &u.weak_label == h));

        let same: Vec<(String, String)> = us.iter().map(|u| (u.id.clone(), anchor.clone())).collect();
        assert_eq!(agreement_filter(&same, &refs, 0.0, false).retained.len(), 3);

        // normalized: 10/11 <= 0.95 < 11/11
        let f = agreement_filter(&hyps, &refs, 0.95, true);
        assert_eq!(f.retained.len(), 2);
    }

    #[test]
    fn missing_anchor_counted() {
        let us = [utt("a", "x", None, false), utt("b", "x", Some("x"), false)];
        let refs: Vec<&Utterance> = us.iter().collect();
        let hyps = vec![("a".to_string(), "x".to_string()), ("b".to_string(), "x".to_string())];
        let f = agreement_filter(&hyps, &refs, 0.0, false);
        assert_eq!(f.missing_anchor, 1);
        assert_eq!(f.retained.len(), 1);
    }

    #[test]
    fn label_pass_identity_and_empty() {
        let dir = tempfile::tempdir().unwrap();
        let us = vec![utt("b", "two", Some("two"), false), utt("a", "one", Some("one"), false)];
        let ds = dataset(dir.path(), &us);
        let loaded = load_dataset(&ds).unwrap();
        let refs: Vec<&Loaded> = loaded.iter().collect();
        let hyps = label_pass(&echo(&us), &refs).unwrap();
        assert_eq!(hyps, vec![("a".into(), "one".into()), ("b".into(), "two".into())]);
        assert!(label_pass(&echo(&us), &[]).unwrap().is_empty());
    }

    #[test]
    fn unreadable_features_name_the_utterance() {
        let dir = tempfile::tempdir().unwrap();
        let us = vec![utt("a", "x", Some("x"), false)];
        crate::corpus::write_manifest(&us, dir.path().join("manifest")).unwrap();
        let ds = Dataset::open(dir.path().join("manifest")).unwrap();
        match load_dataset(&ds).unwrap_err() {
            RefineError::Utterance { id, .. } => assert_eq!(id, "a"),
            e => panic!("{e}"),
        }
    }

    #[test]
    fn identity_transcriber_is_a_fixed_point() {
        let dir = tempfile::tempdir().unwrap();
        let us = vec![
            utt("a", "abc", Some("xyz"), false),
            utt("b", "hello", Some("help"), false),
            utt("c", "p", Some("p"), true),
        ];
        let ds = dataset(dir.path(), &us);
        let mut m = echo(&us);
        let cfg = RefineConfig {
            tau: f64::INFINITY,
            iterations: 1,
            ..RefineConfig::default()
        };
        let out = refine_loop(&ds, &mut m, &cfg, &dir.path().join("out")).unwrap();
        assert_eq!(out.manifests.len(), 2);
        assert_eq!(out.stats.len(), 2);
        assert_eq!(out.final_model, 1);
        let labels: Vec<_> = out.refined.iter().map(|u| (u.id.as_str(), u.weak_label.as_str())).collect();
        assert_eq!(labels, [("a", "abc"), ("b", "hello"), ("c", "p")]);
        assert_eq!(out.stats[1].relabeled_count, 0);
        let stats = fs::read_to_string(dir.path().join("out/stats")).unwrap();
        assert_eq!(stats.lines().count(), 2);
        let back = crate::corpus::read_manifest(dir.path().join("out/iter_1/manifest")).unwrap();
        assert_eq!(back.len(), 3);
        assert!(Path::new(&back[0].feature_ref).is_absolute());
    }

    #[test]
    fn precise_bypass_and_collapse() {
        let dir = tempfile::tempdir().unwrap();
        let us = vec![utt("a", "abc", Some("zzzzzz"), false), utt("p", "keep", Some("zz"), true)];
        let ds = dataset(dir.path(), &us);
        let cfg = RefineConfig {
            tau: 0.0,
            iterations: 2,
            ..RefineConfig::default()
        };
        let out = refine_loop(&ds, &mut echo(&us), &cfg, &dir.path().join("o1")).unwrap();
        for k in 0..=2 {
            let m = crate::corpus::read_manifest(&out.manifests[k]).unwrap();
            let p = m.iter().find(|u| u.id == "p").unwrap();
            assert_eq!(p.weak_label, "keep");
        }
        assert_eq!(out.stats[1].retained_count, 1);

        let no_bypass = RefineConfig {
            bypass_precise: false,
            ..cfg
        };
        match refine_loop(&ds, &mut echo(&us), &no_bypass, &dir.path().join("o2")).unwrap_err() {
            RefineError::Collapsed { iteration } => assert_eq!(iteration, 1),
            e => panic!("{e}"),
        }
    }

    #[test]
    fn config_validation() {
        assert!(RefineConfig { iterations: 0, ..Default::default() }.validate().is_err());
        assert!(RefineConfig { tau: -1.0, ..Default::default() }.validate().is_err());
        assert!(RefineConfig::default().validate().is_ok());
    }
}
