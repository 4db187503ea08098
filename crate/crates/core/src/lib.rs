//! Frame-level sequence compression and weak-label refinement for ASR
//! pipelines.
//!
//! The crate is organised around five library modules and a CLI front end:
//!
//! - [`corpus`]: feature files, line-delimited manifests, and a seeded
//!   synthetic corpus generator with hidden ground truth.
//! - [`metrics`]: edit distance, CER, CER retention, speedup ratio and an
//!   analytic decode-cost model.
//! - [`compress`]: adjacent-frame cosine similarity pruning and threshold
//!   sweeps.
//! - [`refine`]: the iterative train / relabel / agreement-filter loop over
//!   an abstract [`refine::Transcriber`].
//! - [`toyasr`]: a nearest-centroid frame classifier with run-collapse
//!   decoding, its training modes, and a noisy oracle test double.
//! - [`cli`]: subcommand implementations behind the `seqprune` binary.

pub mod cli;
pub mod compress;
pub mod corpus;
pub mod metrics;
pub mod refine;
pub mod toyasr;

pub use compress::{cosine_sim, prune_indices, PruneConfig, PrunePolicy, PruneResult};
pub use corpus::{FeatureSequence, SynthSpec, Utterance};
pub use metrics::{cer, edit_distance, CostModel};
pub use refine::{RefineConfig, Transcriber};
pub use toyasr::{CentroidModel, NoisyOracle, TrainMode};
