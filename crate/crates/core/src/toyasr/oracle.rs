use std::collections::HashMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::ToyError;
use crate::corpus::{corrupt_label, FeatureSequence};
use crate::metrics::cer;
use crate::refine::{BoxError, Transcriber, TrainingExample};

/// Test double that knows the hidden truth and returns it corrupted at
/// `error_rate`. Training on cleaner labels lowers the rate:
/// `p ← p·(1 − α·q)` with `q = 1 − mean CER` of the training labels.
#[derive(Debug, Clone, PartialEq)]
pub struct NoisyOracle {
    pub error_rate: f64,
    pub improvement: f64,
    pub seed: u64,
    alphabet: Vec<char>,
    truth: HashMap<String, String>,
}

fn fnv1a(s: &str) -> u64 {
    s.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3))
}

impl NoisyOracle {
    pub fn new(error_rate: f64, improvement: f64, seed: u64, alphabet: Vec<char>, truth: HashMap<String, String>) -> Self {
        Self {
            error_rate: error_rate.clamp(0.0, 1.0),
            improvement: improvement.clamp(0.0, 1.0),
            seed,
            alphabet,
            truth,
        }
    }

    fn truth_of(&self, id: &str) -> Result<&str, ToyError> {
        self.truth
            .get(id)
            .map(String::as_str)
            .ok_or_else(|| ToyError::MissingTruth(id.to_string()))
    }

    pub fn oracle_transcribe(&self, id: &str) -> Result<String, ToyError> {
        let truth = self.truth_of(id)?;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ fnv1a(id) ^ self.error_rate.to_bits());
        Ok(corrupt_label(truth, self.error_rate, &self.alphabet, &mut rng))
    }

    pub fn oracle_train<'a, I>(&mut self, labels: I) -> Result<(), ToyError>
    where
        I: IntoIterator<Item = (&'a str, &'a str)>,
    {
        let mut total = 0.0;
        let mut n = 0usize;
        for (id, label) in labels {
            let truth = self.truth_of(id)?;
            if let Ok(c) = cer(label, truth) {
                total += c;
                n += 1;
            }
        }
        if n == 0 {
            return Ok(());
        }
        let q = (1.0 - total / n as f64).clamp(0.0, 1.0);
        self.error_rate = (self.error_rate * (1.0 - self.improvement * q)).clamp(0.0, 1.0);
        Ok(())
    }
}

impl Transcriber for NoisyOracle {
    type Snapshot = f64;

    fn train(&mut self, examples: &[TrainingExample<'_>]) -> Result<(), BoxError> {
        Ok(self.oracle_train(examples.iter().map(|e| (e.id, e.label)))?)
    }

    fn transcribe(&self, id: &str, _features: &FeatureSequence) -> Result<String, BoxError> {
        Ok(self.oracle_transcribe(id)?)
    }

    fn snapshot(&self) -> f64 {
        self.error_rate
    }

    fn restore(&mut self, snapshot: f64) {
        self.error_rate = snapshot;
    }
}
