//! Accuracy and acceleration metrics.
//!
//! Edit distance is unit-cost Levenshtein at character granularity unless a
//! caller hands in pre-split token slices. CER is distance over reference
//! length and may exceed 1. Speedup ratio is the plain time ratio; the
//! [`CostModel`] predicts it from sequence lengths.

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("CER is undefined for an empty reference")]
    EmptyReference,
    #[error("CER retention is undefined: compressed CER is 0 while baseline CER is {0}")]
    ZeroCompressedCer(f64),
    #[error("times must be strictly positive (original {original}, accelerated {accelerated})")]
    NonPositiveTime { original: f64, accelerated: f64 },
    #[error("kept fraction {0} outside (0, 1]")]
    KeptFraction(f64),
    #[error("sequence length must be at least 1")]
    ZeroLength,
    #[error("cost model needs at least one strictly positive, finite, non-negative coefficient")]
    DegenerateCostModel,
}

/// Levenshtein distance over arbitrary token slices.
pub fn edit_distance_tokens<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    if a.is_empty() {
        return b.len();
    }
    if b.is_empty() {
        return a.len();
    }
    // Single rolling row indexed by position in `b`.
    let mut row: Vec<usize> = (0..=b.len()).collect();
    for (i, x) in a.iter().enumerate() {
        let mut diag = row[0];
        row[0] = i + 1;
        for (j, y) in b.iter().enumerate() {
            let above = row[j + 1];
            let best = (diag + usize::from(x != y)).min(above + 1).min(row[j] + 1);
            diag = above;
            row[j + 1] = best;
        }
    }
    row[b.len()]
}

/// Character-level edit distance between two strings.
pub fn edit_distance(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    edit_distance_tokens(&a, &b)
}

/// Character error rate of `hyp` against `reference`.
pub fn cer(hyp: &str, reference: &str) -> Result<f64, MetricsError> {
    let ref_len = reference.chars().count();
    if ref_len == 0 {
        return Err(MetricsError::EmptyReference);
    }
    Ok(edit_distance(hyp, reference) as f64 / ref_len as f64)
}

/// Corpus-level CER: total edits over total reference characters.
///
/// Pairs are `(hypothesis, reference)`. Returns [`MetricsError::EmptyReference`]
/// when the references hold no characters at all.
pub fn corpus_cer<'a, I>(pairs: I) -> Result<f64, MetricsError>
where
    I: IntoIterator<Item = (&'a str, &'a str)>,
{
    let (edits, chars) = pairs.into_iter().fold((0usize, 0usize), |(e, c), (hyp, r)| {
        (e + edit_distance(hyp, r), c + r.chars().count())
    });
    if chars == 0 {
        return Err(MetricsError::EmptyReference);
    }
    Ok(edits as f64 / chars as f64)
}

/// Ratio of baseline CER to compressed CER. 1.0 means no degradation.
pub fn cer_retention(cer_baseline: f64, cer_compressed: f64) -> Result<f64, MetricsError> {
    if cer_compressed == 0.0 {
        return if cer_baseline == 0.0 {
            Ok(1.0)
        } else {
            Err(MetricsError::ZeroCompressedCer(cer_baseline))
        };
    }
    Ok(cer_baseline / cer_compressed)
}

pub fn speedup_ratio(t_original: f64, t_accelerated: f64) -> Result<f64, MetricsError> {
    if !(t_original > 0.0 && t_accelerated > 0.0) {
        return Err(MetricsError::NonPositiveTime {
            original: t_original,
            accelerated: t_accelerated,
        });
    }
    Ok(t_original / t_accelerated)
}

/// Measured speedup for one operating point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpeedupReport {
    pub t_original: f64,
    pub t_accelerated: f64,
    pub sr: f64,
}

impl SpeedupReport {
    pub fn new(t_original: f64, t_accelerated: f64) -> Result<Self, MetricsError> {
        let sr = speedup_ratio(t_original, t_accelerated)?;
        Ok(Self {
            t_original,
            t_accelerated,
            sr,
        })
    }
}

/// Per-sequence decode cost `quad·L² + lin·L + constant`.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct CostModel {
    pub quad: f64,
    pub lin: f64,
    #[serde(rename = "const")]
    pub constant: f64,
}

impl Default for CostModel {
    fn default() -> Self {
        Self {
            quad: 1.0,
            lin: 0.0,
            constant: 0.0,
        }
    }
}

impl CostModel {
    pub fn new(quad: f64, lin: f64, constant: f64) -> Result<Self, MetricsError> {
        let model = Self {
            quad,
            lin,
            constant,
        };
        model.validate()?;
        Ok(model)
    }

    pub fn validate(&self) -> Result<(), MetricsError> {
        let coeffs = [self.quad, self.lin, self.constant];
        let ok = coeffs.iter().all(|c| c.is_finite() && *c >= 0.0) && coeffs.iter().any(|c| *c > 0.0);
        if ok {
            Ok(())
        } else {
            Err(MetricsError::DegenerateCostModel)
        }
    }

    pub fn cost(&self, length: usize) -> f64 {
        let l = length as f64;
        self.quad * l * l + self.lin * l + self.constant
    }

    /// Length after keeping fraction `kept` of `length` frames.
    pub fn compressed_length(length: usize, kept: f64) -> usize {
        ((kept * length as f64).round() as usize).max(1)
    }
}

/// Speedup predicted by `model` when a length-`length` sequence is cut to
/// `max(1, round(kept·length))` frames.
pub fn predicted_sr(model: &CostModel, length: usize, kept: f64) -> Result<f64, MetricsError> {
    if length == 0 {
        return Err(MetricsError::ZeroLength);
    }
    if !(kept > 0.0 && kept <= 1.0) {
        return Err(MetricsError::KeptFraction(kept));
    }
    model.validate()?;
    let short = CostModel::compressed_length(length, kept);
    Ok(model.cost(length) / model.cost(short))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Exponential-time recursive definition of Levenshtein distance.
    fn brute(a: &[u8], b: &[u8]) -> usize {
        match (a.split_first(), b.split_first()) {
            (None, _) => b.len(),
            (_, None) => a.len(),
            (Some((x, ra)), Some((y, rb))) => {
                let sub = brute(ra, rb) + usize::from(x != y);
                let del = brute(ra, b) + 1;
                let ins = brute(a, rb) + 1;
                sub.min(del).min(ins)
            }
        }
    }

    #[test]
    fn distance_examples() {
        assert_eq!(edit_distance("", "abc"), 3);
        assert_eq!(edit_distance("abc", ""), 3);
        assert_eq!(brute(b"kitten", b"sitting"), 3);
        assert_eq!(edit_distance("kitten", "sitting"), 3);
        assert_eq!(edit_distance("same", "same"), 0);
    }

    #[test]
    fn distance_counts_unicode_scalars() {
        assert_eq!(edit_distance("กขค", "กค"), 1);
    }

    #[test]
    fn cer_examples() {
        assert_eq!(cer("abc", "abc").unwrap(), 0.0);
        assert_eq!(brute(b"abcd", b"abc"), 1);
        assert!((cer("abcd", "abc").unwrap() - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(cer("", "abc").unwrap(), 1.0);
        assert!(cer("abcdef", "a").unwrap() > 1.0);
        assert_eq!(cer("a", ""), Err(MetricsError::EmptyReference));
    }

    #[test]
    fn corpus_cer_pools_characters() {
        let v = corpus_cer([("ab", "abcd"), ("x", "y")]).unwrap();
        assert!((v - 3.0 / 5.0).abs() < 1e-15);
        assert!(corpus_cer(std::iter::empty()).is_err());
    }

    #[test]
    fn retention_examples() {
        assert_eq!(cer_retention(0.10, 0.10).unwrap(), 1.0);
        assert_eq!(cer_retention(0.0, 0.0).unwrap(), 1.0);
        let r = cer_retention(11.67, 11.92).unwrap();
        assert!((r - 0.979).abs() < 5e-4, "{r}");
        assert!(cer_retention(0.1, 0.0).is_err());
    }

    #[test]
    fn speedup_examples() {
        assert_eq!(speedup_ratio(10.0, 5.0).unwrap(), 2.0);
        assert!((speedup_ratio(2.1, 1.0).unwrap() - 2.1).abs() < 1e-15);
        assert_eq!(speedup_ratio(3.5, 3.5).unwrap(), 1.0);
        assert!(speedup_ratio(0.0, 1.0).is_err());
        assert!(speedup_ratio(1.0, -1.0).is_err());
        let rep = SpeedupReport::new(4.0, 2.0).unwrap();
        assert_eq!(rep.sr, 2.0);
    }

    #[test]
    fn predicted_sr_examples() {
        let quad = CostModel::new(1.0, 0.0, 0.0).unwrap();
        assert_eq!(predicted_sr(&quad, 100, 0.5).unwrap(), 4.0);
        let lin = CostModel::new(0.0, 1.0, 0.0).unwrap();
        assert_eq!(predicted_sr(&lin, 100, 0.5).unwrap(), 2.0);
        let mixed = CostModel::new(0.3, 2.0, 7.0).unwrap();
        assert_eq!(predicted_sr(&mixed, 37, 1.0).unwrap(), 1.0);
        assert!(predicted_sr(&quad, 0, 0.5).is_err());
        assert!(predicted_sr(&quad, 10, 0.0).is_err());
        assert!(predicted_sr(&quad, 10, 1.5).is_err());
        // rounds down to a single frame rather than zero
        assert_eq!(predicted_sr(&quad, 3, 0.1).unwrap(), 9.0);
        assert!(CostModel::new(0.0, 0.0, 0.0).is_err());
        assert!(CostModel::new(-1.0, 1.0, 0.0).is_err());
    }

    fn short_string() -> impl Strategy<Value = String> {
        proptest::collection::vec(prop_oneof![Just('a'), Just('b'), Just('c')], 0..8)
            .prop_map(|v| v.into_iter().collect())
    }

    proptest! {
        #[test]
        fn matches_brute_force(a in short_string(), b in short_string()) {
            prop_assert_eq!(edit_distance(&a, &b), brute(a.as_bytes(), b.as_bytes()));
        }

        #[test]
        fn metric_axioms(a in short_string(), b in short_string(), c in short_string()) {
            let ab = edit_distance(&a, &b);
            prop_assert_eq!(ab, edit_distance(&b, &a));
            prop_assert_eq!(ab == 0, a == b);
            prop_assert!(edit_distance(&a, &c) <= ab + edit_distance(&b, &c));
            let (la, lb) = (a.len(), b.len());
            prop_assert!(la.abs_diff(lb) <= ab && ab <= la.max(lb));
        }

        #[test]
        fn predicted_sr_non_increasing(quad in 0.0f64..5.0, lin in 0.0f64..5.0, k in 0.0f64..5.0,
                                       len in 1usize..400, r1 in 0.001f64..1.0, r2 in 0.001f64..1.0) {
            prop_assume!(quad + lin + k > 0.0);
            let m = CostModel::new(quad, lin, k).unwrap();
            let (lo, hi) = if r1 <= r2 { (r1, r2) } else { (r2, r1) };
            prop_assert!(predicted_sr(&m, len, lo).unwrap() >= predicted_sr(&m, len, hi).unwrap());
        }

        #[test]
        fn speedup_reciprocal(a in 1e-6f64..1e6, b in 1e-6f64..1e6) {
            let p = speedup_ratio(a, b).unwrap() * speedup_ratio(b, a).unwrap();
            prop_assert!((p - 1.0).abs() <= 1e-12);
        }
    }
}
