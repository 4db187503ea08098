use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use super::CorpusError;

pub const FEATURE_MAGIC: [u8; 4] = *b"EFEA";
pub const FEATURE_VERSION: u32 = 1;
const HEADER_LEN: usize = 16;

/// An utterance's frames: `len()` vectors of dimension `dim()`, stored
/// row-major in one buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSequence {
    dim: usize,
    data: Vec<f32>,
}

impl FeatureSequence {
    pub fn new(dim: usize, data: Vec<f32>) -> Result<Self, CorpusError> {
        if dim == 0 {
            return Err(CorpusError::ZeroDim);
        }
        if !data.len().is_multiple_of(dim) {
            return Err(CorpusError::Ragged {
                len: data.len(),
                dim,
            });
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(CorpusError::NonFinite {
                frame: pos / dim,
                component: pos % dim,
            });
        }
        Ok(Self { dim, data })
    }

    pub fn empty(dim: usize) -> Result<Self, CorpusError> {
        Self::new(dim, Vec::new())
    }

    pub fn from_frames<F: AsRef<[f32]>>(dim: usize, frames: &[F]) -> Result<Self, CorpusError> {
        let mut data = Vec::with_capacity(frames.len() * dim);
        for f in frames {
            let f = f.as_ref();
            if f.len() != dim {
                return Err(CorpusError::DimMismatch {
                    expected: dim,
                    found: f.len(),
                });
            }
            data.extend_from_slice(f);
        }
        Self::new(dim, data)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of frames.
    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn frame(&self, index: usize) -> &[f32] {
        &self.data[index * self.dim..(index + 1) * self.dim]
    }

    pub fn frames(&self) -> std::slice::ChunksExact<'_, f32> {
        self.data.chunks_exact(self.dim)
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    /// Subsequence at `indices`, in the order given.
    pub fn select(&self, indices: &[usize]) -> Result<Self, CorpusError> {
        let count = self.len();
        let mut data = Vec::with_capacity(indices.len() * self.dim);
        for &i in indices {
            if i >= count {
                return Err(CorpusError::IndexOutOfRange { index: i, count });
            }
            data.extend_from_slice(self.frame(i));
        }
        Ok(Self {
            dim: self.dim,
            data,
        })
    }
}

pub fn encode_features(seq: &FeatureSequence) -> Vec<u8> {
    let mut buf = Vec::with_capacity(HEADER_LEN + seq.data.len() * 4);
    buf.extend_from_slice(&FEATURE_MAGIC);
    buf.extend_from_slice(&FEATURE_VERSION.to_le_bytes());
    buf.extend_from_slice(&(seq.len() as u32).to_le_bytes());
    buf.extend_from_slice(&(seq.dim as u32).to_le_bytes());
    for v in &seq.data {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    buf
}

pub fn decode_features(path: &Path, bytes: &[u8]) -> Result<FeatureSequence, CorpusError> {
    if bytes.len() < HEADER_LEN {
        if bytes.len() >= 4 && bytes[..4] != FEATURE_MAGIC {
            return Err(bad_magic(path, bytes));
        }
        return Err(CorpusError::Truncated {
            path: path.to_path_buf(),
            expected: HEADER_LEN as u64,
            actual: bytes.len() as u64,
        });
    }
    if bytes[..4] != FEATURE_MAGIC {
        return Err(bad_magic(path, bytes));
    }
    let word = |at: usize| u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap());
    let version = word(4);
    if version != FEATURE_VERSION {
        return Err(CorpusError::VersionMismatch {
            path: path.to_path_buf(),
            found: version,
        });
    }
    let count = word(8) as u64;
    let dim = word(12) as u64;
    if dim == 0 {
        return Err(CorpusError::ZeroDim);
    }
    let expected = HEADER_LEN as u64 + count * dim * 4;
    let actual = bytes.len() as u64;
    if actual < expected {
        return Err(CorpusError::Truncated {
            path: path.to_path_buf(),
            expected,
            actual,
        });
    }
    if actual > expected {
        return Err(CorpusError::TrailingBytes {
            path: path.to_path_buf(),
            extra: actual - expected,
        });
    }
    let data = bytes[HEADER_LEN..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    FeatureSequence::new(dim as usize, data)
}

fn bad_magic(path: &Path, bytes: &[u8]) -> CorpusError {
    CorpusError::BadMagic {
        path: path.to_path_buf(),
        found: bytes[..4].try_into().unwrap(),
    }
}

pub fn write_features(seq: &FeatureSequence, path: impl AsRef<Path>) -> Result<(), CorpusError> {
    let path = path.as_ref();
    let file = fs::File::create(path).map_err(|e| CorpusError::io(path, e))?;
    let mut out = BufWriter::new(file);
    out.write_all(&encode_features(seq))
        .and_then(|_| out.flush())
        .map_err(|e| CorpusError::io(path, e))
}

pub fn read_features(path: impl AsRef<Path>) -> Result<FeatureSequence, CorpusError> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| CorpusError::io(path, e))?;
    decode_features(path, &bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn empty_sequence_is_header_only() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("e.efea");
        let seq = FeatureSequence::empty(4).unwrap();
        write_features(&seq, &path).unwrap();
        assert_eq!(fs::metadata(&path).unwrap().len(), 16);
        let back = read_features(&path).unwrap();
        assert_eq!(back.len(), 0);
        assert_eq!(back.dim(), 4);
    }

    #[test]
    fn two_frames_round_trip_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.efea");
        let seq = FeatureSequence::new(3, vec![1.0, 2.0, 3.0, -0.5, 1e-30, f32::MAX]).unwrap();
        write_features(&seq, &path).unwrap();
        let bytes = fs::read(&path).unwrap();
        assert_eq!(bytes.len(), 16 + 24);
        assert_eq!(&bytes[..4], b"EFEA");
        assert_eq!(&bytes[4..8], &1u32.to_le_bytes());
        assert_eq!(&bytes[8..12], &2u32.to_le_bytes());
        assert_eq!(&bytes[12..16], &3u32.to_le_bytes());
        assert_eq!(&bytes[16..20], &1.0f32.to_le_bytes());
        let back = read_features(&path).unwrap();
        assert_eq!(back, seq);
        assert_eq!(encode_features(&back), bytes);
    }

    #[test]
    fn rejects_bad_magic() {
        let mut bytes = encode_features(&FeatureSequence::new(2, vec![1.0, 2.0]).unwrap());
        bytes[0] = b'X';
        let err = decode_features(Path::new("x"), &bytes).unwrap_err();
        assert!(matches!(err, CorpusError::BadMagic { .. }), "{err}");
        assert!(err.to_string().contains("bad magic"));
    }

    #[test]
    fn rejects_truncated_payload() {
        let bytes = encode_features(&FeatureSequence::new(2, vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        let short = &bytes[..bytes.len() - 4];
        match decode_features(Path::new("x"), short).unwrap_err() {
            CorpusError::Truncated {
                expected, actual, ..
            } => {
                assert_eq!(expected, 32);
                assert_eq!(actual, 28);
            }
            other => panic!("unexpected {other}"),
        }
        assert!(matches!(
            decode_features(Path::new("x"), &bytes[..10]).unwrap_err(),
            CorpusError::Truncated { .. }
        ));
    }

    #[test]
    fn rejects_version_mismatch() {
        let mut bytes = encode_features(&FeatureSequence::empty(2).unwrap());
        bytes[4..8].copy_from_slice(&7u32.to_le_bytes());
        assert!(matches!(
            decode_features(Path::new("x"), &bytes).unwrap_err(),
            CorpusError::VersionMismatch { found: 7, .. }
        ));
    }

    #[test]
    fn rejects_zero_dim_and_non_finite() {
        assert!(matches!(FeatureSequence::empty(0), Err(CorpusError::ZeroDim)));
        assert!(matches!(
            FeatureSequence::new(2, vec![1.0, f32::NAN]),
            Err(CorpusError::NonFinite { frame: 0, component: 1 })
        ));
        assert!(matches!(FeatureSequence::new(2, vec![1.0]), Err(CorpusError::Ragged { .. })));
    }

    #[test]
    fn select_checks_range() {
        let seq = FeatureSequence::new(1, vec![0.0, 1.0, 2.0]).unwrap();
        assert_eq!(seq.select(&[2, 0]).unwrap().as_slice(), &[2.0, 0.0]);
        assert!(seq.select(&[3]).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(200))]
        #[test]
        fn round_trip_is_exact(dim in 1usize..=64, n in 0usize..=100, seed in any::<u64>()) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let data: Vec<f32> = (0..n * dim).map(|_| rng.random_range(-1e6f32..1e6)).collect();
            let seq = FeatureSequence::new(dim, data).unwrap();
            let bytes = encode_features(&seq);
            let back = decode_features(Path::new("p"), &bytes).unwrap();
            prop_assert_eq!(encode_features(&back), bytes);
            prop_assert_eq!(back, seq);
        }
    }
}
