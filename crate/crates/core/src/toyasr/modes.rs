use rayon::prelude::*;
use serde::Serialize;

use super::{recalibrate, train_from_scratch, CentroidModel, LabeledFrames, RecalDiagnostics, ToyError, TrainMode};
use crate::compress::{pooled_kept_fraction, prune_indices, PruneConfig};
use crate::corpus::FeatureSequence;
use crate::metrics::corpus_cer;

/// A held-out utterance and its reference transcript.
#[derive(Debug, Clone)]
pub struct EvalItem {
    pub features: FeatureSequence,
    pub reference: String,
}

/// Corpus CER of each integration mode at one pruning threshold.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModeReport {
    pub theta: f64,
    pub kept_fraction: f64,
    /// Unpruned model on unpruned input.
    pub full_token: f64,
    pub from_scratch: f64,
    pub recalibrate: f64,
    pub inference_only: f64,
    pub recalibration: RecalDiagnostics,
}

impl ModeReport {
    pub fn cer(&self, mode: TrainMode) -> f64 {
        match mode {
            TrainMode::FromScratch => self.from_scratch,
            TrainMode::Recalibrate => self.recalibrate,
            TrainMode::None => self.inference_only,
        }
    }
}

fn evaluate(model: &CentroidModel, items: &[EvalItem], prune: Option<&PruneConfig>) -> Result<f64, ToyError> {
    let hyps = items
        .par_iter()
        .map(|it| match prune {
            Some(cfg) => {
                let r = prune_indices(&it.features, cfg);
                model.transcribe(&it.features.select(&r.kept_indices)?)
            }
            None => model.transcribe(&it.features),
        })
        .collect::<Result<Vec<_>, _>>()?;
    corpus_cer(hyps.iter().zip(items).map(|(h, it)| (h.as_str(), it.reference.as_str())))
        .map_err(|e| ToyError::Invalid(e.to_string()))
}

/// Trains the full-token baseline on `train`, then scores every mode on
/// `eval` pruned with `prune`. Recalibration fits on `recal_subset` only.
pub fn compare_modes(
    train: &[LabeledFrames],
    recal_subset: &[LabeledFrames],
    eval: &[EvalItem],
    alphabet: Vec<char>,
    prune: &PruneConfig,
) -> Result<ModeReport, ToyError> {
    let baseline = train_from_scratch(train, alphabet.clone(), None)?;
    let scratch = train_from_scratch(train, alphabet, Some(prune))?;
    let (recal, diagnostics) = recalibrate(&baseline, recal_subset, prune)?;
    let kept = pooled_kept_fraction(eval.iter().map(|it| prune_indices(&it.features, prune)).collect::<Vec<_>>().iter());
    Ok(ModeReport {
        theta: prune.theta,
        kept_fraction: kept,
        full_token: evaluate(&baseline, eval, None)?,
        from_scratch: evaluate(&scratch, eval, Some(prune))?,
        recalibrate: evaluate(&recal, eval, Some(prune))?,
        inference_only: evaluate(&baseline, eval, Some(prune))?,
        recalibration: diagnostics,
    })
}
