//! Adjacent-frame redundancy removal.
//!
//! A frame is dropped when its cosine similarity to a reference frame
//! strictly exceeds the threshold θ. Under [`PrunePolicy::OriginalAdjacent`]
//! the reference is always the original predecessor `x[j-1]`, so the kept set
//! only grows as θ rises. Under [`PrunePolicy::LastKept`] it is the most
//! recent surviving frame, which stops slow drift from being erased.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::FeatureSequence;
use crate::metrics::{cer_retention, speedup_ratio, CostModel, MetricsError};

pub const DEFAULT_ZERO_NORM_EPSILON: f64 = 1e-12;

#[derive(Debug, Error, PartialEq)]
pub enum CompressError {
    #[error("dimension mismatch: {left} vs {right}")]
    DimMismatch { left: usize, right: usize },
    #[error("threshold {0} outside [-1, 1]")]
    Theta(f64),
    #[error("zero-norm epsilon must be positive, got {0}")]
    Epsilon(f64),
    #[error("kept index {index} out of range for {count} frames")]
    IndexOutOfRange { index: usize, count: usize },
    #[error("prune result was computed for {expected} frames, sequence has {found}")]
    LengthMismatch { expected: usize, found: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum PrunePolicy {
    #[default]
    OriginalAdjacent,
    LastKept,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PruneConfig {
    pub theta: f64,
    #[serde(default)]
    pub policy: PrunePolicy,
    #[serde(default = "default_epsilon")]
    pub zero_norm_epsilon: f64,
}

fn default_epsilon() -> f64 {
    DEFAULT_ZERO_NORM_EPSILON
}

impl PruneConfig {
    pub fn new(theta: f64, policy: PrunePolicy) -> Result<Self, CompressError> {
        let cfg = Self {
            theta,
            policy,
            zero_norm_epsilon: DEFAULT_ZERO_NORM_EPSILON,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CompressError> {
        if !(-1.0..=1.0).contains(&self.theta) {
            return Err(CompressError::Theta(self.theta));
        }
        if !(self.zero_norm_epsilon > 0.0) {
            return Err(CompressError::Epsilon(self.zero_norm_epsilon));
        }
        Ok(())
    }
}

/// Kept frame indices for one sequence at one threshold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PruneResult {
    pub kept_indices: Vec<usize>,
    pub kept_fraction: f64,
    pub original_count: usize,
}

impl PruneResult {
    pub fn keep_all(count: usize) -> Self {
        Self::from_indices((0..count).collect(), count)
    }

    fn from_indices(kept_indices: Vec<usize>, original_count: usize) -> Self {
        let kept_fraction = if original_count == 0 {
            1.0
        } else {
            kept_indices.len() as f64 / original_count as f64
        };
        Self {
            kept_indices,
            kept_fraction,
            original_count,
        }
    }
}

/// Cosine similarity of two frames, computed in f64.
///
/// Returns 0.0 when either norm is below `epsilon`. The result is clamped to
/// `[-1, 1]`.
pub fn cosine_sim(x: &[f32], y: &[f32], epsilon: f64) -> Result<f64, CompressError> {
    if x.len() != y.len() {
        return Err(CompressError::DimMismatch {
            left: x.len(),
            right: y.len(),
        });
    }
    Ok(cosine_unchecked(x, y, epsilon))
}

fn cosine_unchecked(x: &[f32], y: &[f32], epsilon: f64) -> f64 {
    let (mut xy, mut xx, mut yy) = (0.0f64, 0.0f64, 0.0f64);
    for (&a, &b) in x.iter().zip(y) {
        let (a, b) = (a as f64, b as f64);
        xy += a * b;
        xx += a * a;
        yy += b * b;
    }
    if xx.sqrt() < epsilon || yy.sqrt() < epsilon {
        return 0.0;
    }
    // sqrt(xx * yy) keeps sim(v, v) == 1 exactly.
    (xy / (xx * yy).sqrt()).clamp(-1.0, 1.0)
}

pub fn prune_indices(seq: &FeatureSequence, cfg: &PruneConfig) -> PruneResult {
    let n = seq.len();
    if n == 0 {
        return PruneResult::keep_all(0);
    }
    let eps = cfg.zero_norm_epsilon;
    let mut kept = vec![0];
    let mut anchor = 0;
    for j in 1..n {
        let reference = match cfg.policy {
            PrunePolicy::OriginalAdjacent => j - 1,
            PrunePolicy::LastKept => anchor,
        };
        if cosine_unchecked(seq.frame(reference), seq.frame(j), eps) <= cfg.theta {
            kept.push(j);
            anchor = j;
        }
    }
    PruneResult::from_indices(kept, n)
}

pub fn apply_prune(seq: &FeatureSequence, result: &PruneResult) -> Result<FeatureSequence, CompressError> {
    if result.original_count != seq.len() {
        return Err(CompressError::LengthMismatch {
            expected: result.original_count,
            found: seq.len(),
        });
    }
    seq.select(&result.kept_indices).map_err(|_| {
        let index = result.kept_indices.iter().copied().find(|&i| i >= seq.len()).unwrap_or(0);
        CompressError::IndexOutOfRange {
            index,
            count: seq.len(),
        }
    })
}

/// Frame-weighted kept fraction over many results; 1.0 when there are no frames.
pub fn pooled_kept_fraction<'a>(results: impl IntoIterator<Item = &'a PruneResult>) -> f64 {
    let (kept, total) = results
        .into_iter()
        .fold((0usize, 0usize), |(k, t), r| (k + r.kept_indices.len(), t + r.original_count));
    if total == 0 {
        1.0
    } else {
        kept as f64 / total as f64
    }
}

/// Threshold whose pooled kept fraction under `ORIGINAL_ADJACENT` is closest
/// to `target`.
pub fn theta_for_kept_fraction(sequences: &[FeatureSequence], target: f64, epsilon: f64) -> f64 {
    // The kept fraction only changes when θ crosses an adjacent similarity,
    // so those values (plus -1) are the only candidates worth checking.
    let mut all: Vec<f64> = sequences
        .par_iter()
        .flat_map_iter(|s| (1..s.len()).map(move |j| cosine_unchecked(s.frame(j - 1), s.frame(j), epsilon)))
        .collect();
    all.sort_by(f64::total_cmp);
    let total: usize = sequences.iter().map(|s| s.len()).sum();
    if total == 0 || all.is_empty() {
        return 1.0;
    }
    let firsts = sequences.iter().filter(|s| !s.is_empty()).count();
    let fraction_at = |theta: f64| {
        let below = all.partition_point(|&v| v <= theta);
        (firsts + below) as f64 / total as f64
    };
    let mut sims = all.clone();
    sims.dedup();
    let mut best = (f64::INFINITY, 1.0);
    for &theta in sims.iter().chain(std::iter::once(&-1.0)) {
        let err = (fraction_at(theta) - target).abs();
        if err < best.0 {
            best = (err, theta);
        }
    }
    best.1
}

/// One row of a threshold sweep.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub theta: f64,
    pub kept_fraction: f64,
    pub cer: f64,
    pub cer_retention: f64,
    pub sr_measured: f64,
    pub sr_predicted: f64,
}

/// What an evaluator reports for one threshold.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evaluation {
    pub cer: f64,
    pub seconds: f64,
}

/// A sequence after pruning, handed to sweep evaluators.
#[derive(Debug, Clone)]
pub struct PrunedUtterance<'a> {
    pub id: &'a str,
    pub result: PruneResult,
    pub features: FeatureSequence,
}

#[derive(Debug, Error)]
pub enum SweepError<E: std::error::Error + 'static> {
    #[error("thresholds must be sorted in descending order")]
    Unsorted,
    #[error("invalid threshold: {0}")]
    Config(#[from] CompressError),
    #[error("evaluator failed at theta = {theta}: {source}")]
    Evaluator {
        theta: f64,
        #[source]
        source: E,
    },
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

pub fn prune_corpus<'a>(sequences: &'a [(String, FeatureSequence)], cfg: &PruneConfig) -> Vec<PrunedUtterance<'a>> {
    let mut out: Vec<PrunedUtterance<'a>> = sequences
        .par_iter()
        .map(|(id, seq)| {
            let result = prune_indices(seq, cfg);
            let features = seq.select(&result.kept_indices).expect("indices come from seq");
            PrunedUtterance {
                id: id.as_str(),
                result,
                features,
            }
        })
        .collect();
    out.sort_by(|a, b| a.id.cmp(b.id));
    out
}

/// Runs `evaluator` at each threshold and relates every row to θ = 1.0.
///
/// The θ = 1.0 reference is evaluated first (reused when it heads the list).
/// Retention is reported as infinity when pruning removes every error of a
/// non-zero baseline.
pub fn sweep<E, F>(
    sequences: &[(String, FeatureSequence)],
    thresholds: &[f64],
    template: &PruneConfig,
    cost: &CostModel,
    mut evaluator: F,
) -> Result<Vec<SweepRow>, SweepError<E>>
where
    E: std::error::Error + 'static,
    F: FnMut(f64, &[PrunedUtterance<'_>]) -> Result<Evaluation, E>,
{
    if thresholds.windows(2).any(|w| w[0] < w[1]) {
        return Err(SweepError::Unsorted);
    }
    let mut configs = Vec::with_capacity(thresholds.len());
    for &theta in thresholds {
        let cfg = PruneConfig { theta, ..*template };
        cfg.validate()?;
        configs.push(cfg);
    }
    let full_cost: f64 = sequences.iter().map(|(_, s)| cost.cost(s.len())).sum();

    let mut run = |cfg: &PruneConfig| -> Result<(f64, Evaluation, f64), SweepError<E>> {
        let pruned = prune_corpus(sequences, cfg);
        let kept = pooled_kept_fraction(pruned.iter().map(|p| &p.result));
        let eval = evaluator(cfg.theta, &pruned).map_err(|source| SweepError::Evaluator {
            theta: cfg.theta,
            source,
        })?;
        let short_cost: f64 = pruned.iter().map(|p| cost.cost(p.features.len())).sum();
        let predicted = if short_cost > 0.0 { full_cost / short_cost } else { 1.0 };
        Ok((kept, eval, predicted))
    };

    let reference_cfg = PruneConfig { theta: 1.0, ..*template };
    let mut cached = None;
    let baseline = match configs.first() {
        Some(c) if c.theta == 1.0 => {
            let r = run(c)?;
            cached = Some(r);
            r.1
        }
        _ => run(&reference_cfg)?.1,
    };

    let mut rows = Vec::with_capacity(configs.len());
    for (i, cfg) in configs.iter().enumerate() {
        let (kept, eval, predicted) = match (i, cached) {
            (0, Some(r)) => r,
            _ => run(cfg)?,
        };
        let retention = match cer_retention(baseline.cer, eval.cer) {
            Ok(r) => r,
            Err(MetricsError::ZeroCompressedCer(_)) => f64::INFINITY,
            Err(e) => return Err(e.into()),
        };
        rows.push(SweepRow {
            theta: cfg.theta,
            kept_fraction: kept,
            cer: eval.cer,
            cer_retention: retention,
            sr_measured: speedup_ratio(baseline.seconds, eval.seconds)?,
            sr_predicted: predicted,
        });
    }
    Ok(rows)
}
