//! Subcommand bodies. Each takes its resolved configuration; the caller has
//! already created the output directory and written the config record.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;

use super::bench::{time_batch, Timing};
use super::report::{read_sweep_csv, render_svg};
use super::{BenchRunConfig, CliError, EvalRunConfig, GenConfig, PruneRunConfig, RefineRunConfig, ReportRunConfig, SweepRunConfig};
use crate::compress::{pooled_kept_fraction, prune_indices, sweep as run_sweep, Evaluation, PruneConfig, PruneResult, SweepError};
use crate::corpus::{alphabet, generate_corpus, write_features, write_frame_classes, write_manifest, Dataset, FeatureSequence, Utterance};
use crate::metrics::{corpus_cer, predicted_sr, CostModel};
use crate::refine::refine_loop;
use crate::toyasr::{train_from_scratch, CentroidModel, LabeledFrames};

pub const SWEEP_CSV: &str = "sweep.csv";
pub const BENCH_CSV: &str = "bench.csv";
pub const EVAL_CSV: &str = "eval.csv";
pub const REPORT_SVG: &str = "report.svg";
pub const PRUNE_RECORDS: &str = "prune.jsonl";
pub const MODEL_FILE: &str = "model.json";

/// Six significant digits, shortest form.
pub fn sig6(x: f64) -> String {
    if x.is_nan() {
        return "nan".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    let rounded: f64 = format!("{x:.5e}").parse().expect("formatted float parses");
    format!("{rounded}")
}

fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| CliError::data(path, e))?;
    w.write_record(header).map_err(|e| CliError::data(path, e))?;
    for r in rows {
        w.write_record(r).map_err(|e| CliError::data(path, e))?;
    }
    w.flush().map_err(|e| CliError::data(path, e))
}

fn create_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::data(dir, e))
}

fn check_reps(reps: usize) -> Result<(), CliError> {
    if reps < 3 {
        return Err(CliError::Usage(format!("--reps must be at least 3, got {reps}")));
    }
    Ok(())
}

fn load_sequences(dataset: &Dataset) -> Result<Vec<(String, FeatureSequence)>, CliError> {
    let mut seqs = dataset
        .utterances
        .par_iter()
        .map(|u| Ok((u.id.clone(), dataset.features(u)?)))
        .collect::<Result<Vec<_>, CliError>>()?;
    seqs.sort_by(|a, b| a.0.cmp(&b.0));
    Ok(seqs)
}

/// Frames plus sidecar classes for the utterances accepted by `keep`.
fn labeled_subset(dataset: &Dataset, keep: impl Fn(&Utterance) -> bool + Sync) -> Result<Vec<LabeledFrames>, CliError> {
    let mut out = dataset
        .utterances
        .par_iter()
        .filter(|u| keep(u))
        .map(|u| {
            let features = dataset.features(u)?;
            let classes = dataset
                .frame_classes(u, features.len())?
                .ok_or_else(|| CliError::Data(format!("{}: utterance {} has no frame_classes sidecar", dataset.manifest.display(), u.id)))?;
            Ok(LabeledFrames {
                id: u.id.clone(),
                features,
                classes,
            })
        })
        .collect::<Result<Vec<_>, CliError>>()?;
    out.sort_by(|a, b| a.id.cmp(&b.id));
    Ok(out)
}

fn infer_alphabet(data: &[LabeledFrames], explicit: Option<usize>) -> Vec<char> {
    let size = explicit.unwrap_or_else(|| {
        data.iter()
            .flat_map(|d| d.classes.iter().copied())
            .max()
            .map_or(0, |m| (m + 1).max(0) as usize)
    });
    alphabet(size)
}

fn train_model(dataset: &Dataset, alphabet_size: Option<usize>, precise_only: bool) -> Result<CentroidModel, CliError> {
    let data = labeled_subset(dataset, |u| !precise_only || u.precise)?;
    if data.is_empty() {
        let what = if precise_only { "precise utterances" } else { "utterances" };
        return Err(CliError::Data(format!(
            "{}: no {what} to train a starting model from; pass --model",
            dataset.manifest.display()
        )));
    }
    Ok(train_from_scratch(&data, infer_alphabet(&data, alphabet_size), None)?)
}

pub fn gen(c: &GenConfig) -> Result<(), CliError> {
    generate_corpus(&c.spec, &c.out)?;
    Ok(())
}

pub fn refine(c: &RefineRunConfig) -> Result<(), CliError> {
    let dataset = Dataset::open(&c.manifest)?;
    let mut model = match &c.model {
        Some(p) => CentroidModel::load(p)?,
        None => train_model(&dataset, c.alphabet_size, true)?,
    };
    let output = refine_loop(&dataset, &mut model, &c.refine, &c.out)?;
    output.final_model.save(c.out.join(MODEL_FILE))?;
    Ok(())
}

#[derive(Serialize)]
struct PruneRecord<'a> {
    id: &'a str,
    #[serde(flatten)]
    result: &'a PruneResult,
}

pub fn prune(c: &PruneRunConfig) -> Result<(), CliError> {
    let cfg = PruneConfig::new(c.theta, c.policy)?;
    let dataset = Dataset::open(&c.manifest)?;
    let feats = c.out.join("feats");
    create_dir(&feats)?;
    let mut done = dataset
        .utterances
        .par_iter()
        .map(|u| {
            let seq = dataset.features(u)?;
            let result = prune_indices(&seq, &cfg);
            let file = format!("{}.efea", u.id);
            write_features(&seq.select(&result.kept_indices)?, feats.join(&file))?;
            let mut row = u.clone();
            row.feature_ref = format!("feats/{file}");
            if let Some(classes) = dataset.frame_classes(u, seq.len())? {
                let side = format!("{}.cls", u.id);
                let kept: Vec<i32> = result.kept_indices.iter().map(|&i| classes[i]).collect();
                write_frame_classes(&kept, feats.join(&side))?;
                row.frame_classes_ref = Some(format!("feats/{side}"));
            }
            Ok((row, result))
        })
        .collect::<Result<Vec<_>, CliError>>()?;
    done.sort_by(|a, b| a.0.id.cmp(&b.0.id));

    let rows: Vec<Utterance> = done.iter().map(|(u, _)| u.clone()).collect();
    write_manifest(&rows, c.out.join("manifest"))?;
    let mut jsonl = String::new();
    for (u, r) in &done {
        jsonl.push_str(&serde_json::to_string(&PruneRecord { id: &u.id, result: r }).expect("record serializes"));
        jsonl.push('\n');
    }
    let path = c.out.join(PRUNE_RECORDS);
    fs::write(&path, jsonl).map_err(|e| CliError::data(&path, e))
}

fn reference_of(u: &Utterance) -> &str {
    u.ground_truth.as_deref().unwrap_or(&u.weak_label)
}

pub fn sweep(c: &SweepRunConfig) -> Result<(), CliError> {
    check_reps(c.reps)?;
    c.cost.validate()?;
    let template = PruneConfig::new(1.0, c.policy)?;
    let dataset = Dataset::open(&c.manifest)?;
    let sequences = load_sequences(&dataset)?;
    let references: HashMap<&str, &str> = dataset.utterances.iter().map(|u| (u.id.as_str(), reference_of(u))).collect();
    let model = match &c.model {
        Some(p) => CentroidModel::load(p)?,
        None => {
            let m = train_model(&dataset, c.alphabet_size, false)?;
            m.save(c.out.join(MODEL_FILE))?;
            m
        }
    };

    let rows = run_sweep(&sequences, &c.thetas, &template, &c.cost, |_, pruned| {
        let hyps = pruned
            .par_iter()
            .map(|p| model.transcribe(&p.features))
            .collect::<Result<Vec<_>, _>>()
            .map_err(CliError::from)?;
        let cer = corpus_cer(hyps.iter().zip(pruned).map(|(h, p)| (h.as_str(), references[p.id])))?;
        let lengths: Vec<usize> = pruned.iter().map(|p| p.features.len()).collect();
        let timing = time_batch(&c.cost, &lengths, c.reps);
        Ok::<_, CliError>(Evaluation {
            cer,
            seconds: timing.median,
        })
    })
    .map_err(|e| match e {
        SweepError::Unsorted | SweepError::Config(_) => CliError::Usage(e.to_string()),
        SweepError::Evaluator { source, .. } => source,
        SweepError::Metrics(m) => m.into(),
    })?;

    let table: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            [r.theta, r.kept_fraction, r.cer, r.cer_retention, r.sr_measured, r.sr_predicted]
                .into_iter()
                .map(sig6)
                .collect()
        })
        .collect();
    write_csv(
        &c.out.join(SWEEP_CSV),
        &["theta", "kept_fraction", "cer", "cer_retention", "sr_measured", "sr_predicted"],
        &table,
    )
}

pub fn eval(c: &EvalRunConfig) -> Result<(), CliError> {
    let prune_cfg = PruneConfig::new(c.theta, c.policy)?;
    let model = c.model.as_ref().map(CentroidModel::load).transpose()?;
    let mut table = Vec::new();
    for manifest in &c.manifests {
        let dataset = Dataset::open(manifest)?;
        let sequences = load_sequences(&dataset)?;
        let results: Vec<PruneResult> = sequences.par_iter().map(|(_, s)| prune_indices(s, &prune_cfg)).collect();
        let kept = pooled_kept_fraction(results.iter());
        let truths: HashMap<&str, &str> = dataset
            .utterances
            .iter()
            .filter_map(|u| u.ground_truth.as_deref().map(|t| (u.id.as_str(), t)))
            .collect();
        let scored = |pairs: Vec<(&str, &str)>| -> Result<String, CliError> {
            if pairs.is_empty() {
                return Ok(String::new());
            }
            Ok(sig6(corpus_cer(pairs)?))
        };
        let mut by_id: Vec<&Utterance> = dataset.utterances.iter().collect();
        by_id.sort_by(|a, b| a.id.cmp(&b.id));
        let label_cer = scored(
            by_id
                .iter()
                .filter_map(|u| truths.get(u.id.as_str()).map(|t| (u.weak_label.as_str(), *t)))
                .collect(),
        )?;
        let anchor_cer = scored(
            by_id
                .iter()
                .filter_map(|u| Some((u.anchor_label.as_deref()?, *truths.get(u.id.as_str())?)))
                .collect(),
        )?;
        let model_cer = match &model {
            None => String::new(),
            Some(m) => {
                let hyps = sequences
                    .par_iter()
                    .zip(&results)
                    .map(|((_, s), r)| m.transcribe(&s.select(&r.kept_indices)?))
                    .collect::<Result<Vec<_>, _>>()?;
                let refs: HashMap<&str, &str> = dataset.utterances.iter().map(|u| (u.id.as_str(), reference_of(u))).collect();
                scored(
                    sequences
                        .iter()
                        .zip(&hyps)
                        .map(|((id, _), h)| (h.as_str(), refs[id.as_str()]))
                        .collect(),
                )?
            }
        };
        table.push(vec![
            manifest.display().to_string(),
            dataset.utterances.len().to_string(),
            sig6(kept),
            label_cer,
            anchor_cer,
            model_cer,
        ]);
    }
    write_csv(
        &c.out.join(EVAL_CSV),
        &["manifest", "utterances", "kept_fraction", "label_cer", "anchor_cer", "model_cer"],
        &table,
    )
}

/// One operating point of a benchmark.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchRow {
    pub theta: Option<f64>,
    pub kept_fraction: f64,
    pub frames_original: usize,
    pub frames_accelerated: usize,
    pub t_original: f64,
    pub accelerated: Timing,
    pub sr_measured: f64,
    pub sr_predicted: f64,
}

/// Times `batch` sequences of `length` frames against the same batch cut to
/// each kept fraction.
pub fn bench_kept(cost: &CostModel, length: usize, kept: &[f64], batch: usize, reps: usize) -> Result<Vec<BenchRow>, CliError> {
    cost.validate()?;
    let mut kept = kept.to_vec();
    kept.sort_by(f64::total_cmp);
    let predictions = kept
        .iter()
        .map(|&r| predicted_sr(cost, length, r))
        .collect::<Result<Vec<_>, _>>()?;
    let batch = batch.max(1);
    let original = vec![length; batch];
    let t_original = time_batch(cost, &original, reps);
    Ok(kept
        .iter()
        .zip(predictions)
        .map(|(&r, sr_predicted)| {
            let short = vec![CostModel::compressed_length(length, r); batch];
            let t = time_batch(cost, &short, reps);
            BenchRow {
                theta: None,
                kept_fraction: r,
                frames_original: length * batch,
                frames_accelerated: short.iter().sum(),
                t_original: t_original.median,
                accelerated: t,
                sr_measured: t_original.median / t.median,
                sr_predicted,
            }
        })
        .collect())
}

fn bench_manifest(c: &BenchRunConfig, manifest: &PathBuf) -> Result<Vec<BenchRow>, CliError> {
    let dataset = Dataset::open(manifest)?;
    let sequences = load_sequences(&dataset)?;
    let lengths: Vec<usize> = sequences.iter().map(|(_, s)| s.len()).collect();
    let full_cost: f64 = lengths.iter().map(|&l| c.cost.cost(l)).sum();
    let t_original = time_batch(&c.cost, &lengths, c.reps);
    let mut thetas = c.thetas.clone();
    thetas.sort_by(|a, b| b.total_cmp(a));
    let mut rows = Vec::new();
    for theta in thetas {
        let cfg = PruneConfig::new(theta, c.policy)?;
        let results: Vec<PruneResult> = sequences.par_iter().map(|(_, s)| prune_indices(s, &cfg)).collect();
        let short: Vec<usize> = results.iter().map(|r| r.kept_indices.len()).collect();
        let short_cost: f64 = short.iter().map(|&l| c.cost.cost(l)).sum();
        let t = time_batch(&c.cost, &short, c.reps);
        rows.push(BenchRow {
            theta: Some(theta),
            kept_fraction: pooled_kept_fraction(results.iter()),
            frames_original: lengths.iter().sum(),
            frames_accelerated: short.iter().sum(),
            t_original: t_original.median,
            accelerated: t,
            sr_measured: t_original.median / t.median,
            sr_predicted: if short_cost > 0.0 { full_cost / short_cost } else { 1.0 },
        });
    }
    Ok(rows)
}

pub fn bench(c: &BenchRunConfig) -> Result<(), CliError> {
    check_reps(c.reps)?;
    c.cost.validate()?;
    let rows = match &c.manifest {
        Some(m) => {
            if c.thetas.is_empty() {
                return Err(CliError::Usage("bench with --manifest needs --thetas".into()));
            }
            bench_manifest(c, m)?
        }
        None => {
            if c.length == 0 {
                return Err(CliError::Usage("--length must be positive".into()));
            }
            bench_kept(&c.cost, c.length, &c.kept, c.batch, c.reps)?
        }
    };
    let table: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                r.theta.map(sig6).unwrap_or_default(),
                sig6(r.kept_fraction),
                r.frames_original.to_string(),
                r.frames_accelerated.to_string(),
                sig6(r.t_original),
                sig6(r.accelerated.median),
                sig6(r.accelerated.min),
                sig6(r.accelerated.max),
                sig6(r.sr_measured),
                sig6(r.sr_predicted),
                r.accelerated.reps.to_string(),
            ]
        })
        .collect();
    write_csv(
        &c.out.join(BENCH_CSV),
        &[
            "theta",
            "kept_fraction",
            "frames_original",
            "frames_accelerated",
            "t_original",
            "t_accelerated",
            "t_accelerated_min",
            "t_accelerated_max",
            "sr_measured",
            "sr_predicted",
            "reps",
        ],
        &table,
    )
}

pub fn report(c: &ReportRunConfig) -> Result<(), CliError> {
    let points = read_sweep_csv(&c.input)?;
    let path = c.out.join(REPORT_SVG);
    fs::write(&path, render_svg(&points)).map_err(|e| CliError::data(&path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn six_significant_digits() {
        assert_eq!(sig6(0.123456789), "0.123457");
        assert_eq!(sig6(1.0), "1");
        assert_eq!(sig6(1234567.0), "1234570");
        assert_eq!(sig6(f64::INFINITY), "inf");
        assert_eq!(sig6(0.0), "0");
    }
}
