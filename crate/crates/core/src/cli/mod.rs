//! The `seqprune` command line: argument parsing, resolved-config records
//! and exit-code mapping. Subcommand bodies live in [`commands`].
//!
//! Parameters come from flags, or wholesale from `--config <file>` when one
//! is given (a `resolved_config.json` written by an earlier run works as
//! is). `--out` and `--workers` may still be passed alongside a config to
//! redirect output or change the parallelism level.

use std::ffi::OsString;
use std::fmt::Display;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::compress::{CompressError, PrunePolicy};
use crate::corpus::{CorpusError, SynthSpec};
use crate::metrics::{CostModel, MetricsError};
use crate::refine::{RefineConfig, RefineError};
use crate::toyasr::ToyError;

pub mod bench;
pub mod commands;
pub mod report;

pub const RESOLVED_CONFIG_FILE: &str = "resolved_config.json";

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_COLLAPSED: i32 = 3;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    Collapsed(String),
}

impl CliError {
    pub fn data(path: &Path, e: impl Display) -> Self {
        CliError::Data(format!("{}: {e}", path.display()))
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Data(_) => EXIT_DATA,
            CliError::Collapsed(_) => EXIT_COLLAPSED,
        }
    }
}

impl From<CorpusError> for CliError {
    fn from(e: CorpusError) -> Self {
        match e {
            CorpusError::InvalidSpec(_) | CorpusError::InfeasibleBand { .. } => CliError::Usage(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<ToyError> for CliError {
    fn from(e: ToyError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<CompressError> for CliError {
    fn from(e: CompressError) -> Self {
        CliError::Usage(e.to_string())
    }
}

impl From<MetricsError> for CliError {
    fn from(e: MetricsError) -> Self {
        match e {
            MetricsError::DegenerateCostModel | MetricsError::KeptFraction(_) | MetricsError::ZeroLength => {
                CliError::Usage(e.to_string())
            }
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<RefineError> for CliError {
    fn from(e: RefineError) -> Self {
        match e {
            RefineError::Collapsed { .. } => CliError::Collapsed(e.to_string()),
            RefineError::Config(_) => CliError::Usage(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "seqprune", version, about = "Frame pruning, weak-label refinement and speedup evaluation")]
pub struct Cli {
    /// Worker threads for per-utterance work (0 = all cores).
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a seeded synthetic corpus.
    Gen(GenArgs),
    /// Run iterative weak-label refinement with the centroid transcriber.
    Refine(RefineArgs),
    /// Prune every utterance of a manifest at one threshold.
    Prune(PruneArgs),
    /// Sweep thresholds and report kept fraction, CER, retention and speedup.
    Sweep(SweepArgs),
    /// CER table for one or more manifests.
    Eval(EvalArgs),
    /// Time the mock decoder against the cost model.
    Bench(BenchArgs),
    /// Render a sweep CSV as an SVG chart.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct CostArgs {
    #[arg(long, default_value_t = 1.0)]
    pub cost_quad: f64,
    #[arg(long, default_value_t = 0.0)]
    pub cost_lin: f64,
    #[arg(long, default_value_t = 0.0)]
    pub cost_const: f64,
}

impl CostArgs {
    fn model(&self) -> CostModel {
        CostModel {
            quad: self.cost_quad,
            lin: self.cost_lin,
            constant: self.cost_const,
        }
    }
}

#[derive(Debug, Args)]
pub struct GenArgs {
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub utterances: Option<usize>,
    #[arg(long)]
    pub alphabet_size: Option<usize>,
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long)]
    pub noise_sigma: Option<f64>,
    #[arg(long)]
    pub weak_error: Option<f64>,
    #[arg(long)]
    pub anchor_error: Option<f64>,
    #[arg(long)]
    pub precise_fraction: Option<f64>,
    #[arg(long)]
    pub onset_blend: Option<f64>,
}

#[derive(Debug, Args)]
pub struct RefineArgs {
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value_t = 10.0)]
    pub tau: f64,
    #[arg(long, default_value_t = 3)]
    pub iters: usize,
    /// Compare distance per anchor character against tau.
    #[arg(long)]
    pub normalize: bool,
    /// Run precise entries through the label pass like any other.
    #[arg(long)]
    pub no_bypass_precise: bool,
    /// Starting model; bootstrapped from the precise subset when absent.
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub alphabet_size: Option<usize>,
}

#[derive(Debug, Args)]
pub struct PruneArgs {
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value_t = 0.95)]
    pub theta: f64,
    #[arg(long, value_enum, default_value_t = PrunePolicy::OriginalAdjacent)]
    pub policy: PrunePolicy,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', default_value = "0.99,0.95,0.9,0.85,0.8,0.7,0.6,0.5")]
    pub thetas: Vec<f64>,
    #[arg(long, value_enum, default_value_t = PrunePolicy::OriginalAdjacent)]
    pub policy: PrunePolicy,
    #[command(flatten)]
    pub cost: CostArgs,
    #[arg(long, default_value_t = 5)]
    pub reps: usize,
    /// Model to evaluate; trained on the manifest's sidecars when absent.
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub alphabet_size: Option<usize>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Manifest to score; repeat for several.
    #[arg(long)]
    pub manifest: Vec<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long, default_value_t = 1.0)]
    pub theta: f64,
    #[arg(long, value_enum, default_value_t = PrunePolicy::OriginalAdjacent)]
    pub policy: PrunePolicy,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub cost: CostArgs,
    #[arg(long, default_value_t = 5)]
    pub reps: usize,
    /// Sequence length for the kept-fraction grid.
    #[arg(long, default_value_t = 100)]
    pub length: usize,
    #[arg(long, value_delimiter = ',', default_value = "0.25,0.5,0.75")]
    pub kept: Vec<f64>,
    /// Sequences per timed batch.
    #[arg(long, default_value_t = 200)]
    pub batch: usize,
    /// Time real pruned lengths from a manifest at `--thetas` instead.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    pub thetas: Vec<f64>,
    #[arg(long, value_enum, default_value_t = PrunePolicy::OriginalAdjacent)]
    pub policy: PrunePolicy,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Sweep CSV to plot.
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenConfig {
    pub out: PathBuf,
    pub spec: SynthSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RefineRunConfig {
    pub manifest: PathBuf,
    pub out: PathBuf,
    pub refine: RefineConfig,
    #[serde(default)]
    pub model: Option<PathBuf>,
    #[serde(default)]
    pub alphabet_size: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PruneRunConfig {
    pub manifest: PathBuf,
    pub out: PathBuf,
    pub theta: f64,
    #[serde(default)]
    pub policy: PrunePolicy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepRunConfig {
    pub manifest: PathBuf,
    pub out: PathBuf,
    pub thetas: Vec<f64>,
    #[serde(default)]
    pub policy: PrunePolicy,
    #[serde(default)]
    pub cost: CostModel,
    pub reps: usize,
    #[serde(default)]
    pub model: Option<PathBuf>,
    #[serde(default)]
    pub alphabet_size: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalRunConfig {
    pub manifests: Vec<PathBuf>,
    pub out: PathBuf,
    #[serde(default)]
    pub model: Option<PathBuf>,
    pub theta: f64,
    #[serde(default)]
    pub policy: PrunePolicy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchRunConfig {
    pub out: PathBuf,
    #[serde(default)]
    pub cost: CostModel,
    pub reps: usize,
    pub length: usize,
    pub kept: Vec<f64>,
    pub batch: usize,
    #[serde(default)]
    pub manifest: Option<PathBuf>,
    #[serde(default)]
    pub thetas: Vec<f64>,
    #[serde(default)]
    pub policy: PrunePolicy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReportRunConfig {
    pub input: PathBuf,
    pub out: PathBuf,
}

/// The record every subcommand persists as `<out>/resolved_config.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "snake_case")]
pub enum ResolvedConfig {
    Gen(GenConfig),
    Refine(RefineRunConfig),
    Prune(PruneRunConfig),
    Sweep(SweepRunConfig),
    Eval(EvalRunConfig),
    Bench(BenchRunConfig),
    Report(ReportRunConfig),
}

impl ResolvedConfig {
    pub fn name(&self) -> &'static str {
        match self {
            ResolvedConfig::Gen(_) => "gen",
            ResolvedConfig::Refine(_) => "refine",
            ResolvedConfig::Prune(_) => "prune",
            ResolvedConfig::Sweep(_) => "sweep",
            ResolvedConfig::Eval(_) => "eval",
            ResolvedConfig::Bench(_) => "bench",
            ResolvedConfig::Report(_) => "report",
        }
    }

    pub fn out(&self) -> &Path {
        match self {
            ResolvedConfig::Gen(c) => &c.out,
            ResolvedConfig::Refine(c) => &c.out,
            ResolvedConfig::Prune(c) => &c.out,
            ResolvedConfig::Sweep(c) => &c.out,
            ResolvedConfig::Eval(c) => &c.out,
            ResolvedConfig::Bench(c) => &c.out,
            ResolvedConfig::Report(c) => &c.out,
        }
    }

    fn set_out(&mut self, out: PathBuf) {
        match self {
            ResolvedConfig::Gen(c) => c.out = out,
            ResolvedConfig::Refine(c) => c.out = out,
            ResolvedConfig::Prune(c) => c.out = out,
            ResolvedConfig::Sweep(c) => c.out = out,
            ResolvedConfig::Eval(c) => c.out = out,
            ResolvedConfig::Bench(c) => c.out = out,
            ResolvedConfig::Report(c) => c.out = out,
        }
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text)
            .map_err(|e| CliError::Usage(format!("{}:{}: {e}", path.display(), e.line())))
    }

    pub fn save(&self, dir: &Path) -> Result<(), CliError> {
        fs::create_dir_all(dir).map_err(|e| CliError::data(dir, e))?;
        let path = dir.join(RESOLVED_CONFIG_FILE);
        let mut text = serde_json::to_string_pretty(self).expect("config serializes");
        text.push('\n');
        fs::write(&path, text).map_err(|e| CliError::data(&path, e))
    }
}

fn required<T>(value: Option<T>, flag: &str) -> Result<T, CliError> {
    value.ok_or_else(|| CliError::Usage(format!("missing required flag --{flag} (or --config)")))
}

/// Loads `--config` if given and checks it belongs to `command`; `out`
/// replaces the recorded output directory.
fn from_file(path: &Path, command: &str, out: Option<PathBuf>) -> Result<ResolvedConfig, CliError> {
    let mut cfg = ResolvedConfig::load(path)?;
    if cfg.name() != command {
        return Err(CliError::Usage(format!(
            "{}: config is for `{}`, not `{command}`",
            path.display(),
            cfg.name()
        )));
    }
    if let Some(out) = out {
        cfg.set_out(out);
    }
    Ok(cfg)
}

/// Turns parsed arguments into the effective configuration.
pub fn resolve(command: Command) -> Result<ResolvedConfig, CliError> {
    Ok(match command {
        Command::Gen(a) => {
            if let Some(p) = &a.config {
                return from_file(p, "gen", a.out);
            }
            let mut spec = SynthSpec {
                seed: a.seed,
                ..SynthSpec::default()
            };
            if let Some(v) = a.utterances {
                spec.utterances = v;
            }
            if let Some(v) = a.alphabet_size {
                spec.alphabet_size = v;
            }
            if let Some(v) = a.dim {
                spec.dim = v;
            }
            if let Some(v) = a.noise_sigma {
                spec.noise_sigma = v;
            }
            if let Some(v) = a.weak_error {
                spec.weak_label_error_rate = v;
            }
            if let Some(v) = a.anchor_error {
                spec.anchor_error_rate = v;
            }
            if let Some(v) = a.precise_fraction {
                spec.precise_fraction = v;
            }
            if let Some(v) = a.onset_blend {
                spec.onset_blend = v;
            }
            ResolvedConfig::Gen(GenConfig {
                out: required(a.out, "out")?,
                spec,
            })
        }
        Command::Refine(a) => {
            if let Some(p) = &a.config {
                return from_file(p, "refine", a.out);
            }
            ResolvedConfig::Refine(RefineRunConfig {
                manifest: required(a.manifest, "manifest")?,
                out: required(a.out, "out")?,
                refine: RefineConfig {
                    tau: a.tau,
                    iterations: a.iters,
                    normalize_distance: a.normalize,
                    bypass_precise: !a.no_bypass_precise,
                },
                model: a.model,
                alphabet_size: a.alphabet_size,
            })
        }
        Command::Prune(a) => {
            if let Some(p) = &a.config {
                return from_file(p, "prune", a.out);
            }
            ResolvedConfig::Prune(PruneRunConfig {
                manifest: required(a.manifest, "manifest")?,
                out: required(a.out, "out")?,
                theta: a.theta,
                policy: a.policy,
            })
        }
        Command::Sweep(a) => {
            if let Some(p) = &a.config {
                return from_file(p, "sweep", a.out);
            }
            ResolvedConfig::Sweep(SweepRunConfig {
                manifest: required(a.manifest, "manifest")?,
                out: required(a.out, "out")?,
                thetas: a.thetas,
                policy: a.policy,
                cost: a.cost.model(),
                reps: a.reps,
                model: a.model,
                alphabet_size: a.alphabet_size,
            })
        }
        Command::Eval(a) => {
            if let Some(p) = &a.config {
                return from_file(p, "eval", a.out);
            }
            if a.manifest.is_empty() {
                return Err(CliError::Usage("missing required flag --manifest (or --config)".into()));
            }
            ResolvedConfig::Eval(EvalRunConfig {
                manifests: a.manifest,
                out: required(a.out, "out")?,
                model: a.model,
                theta: a.theta,
                policy: a.policy,
            })
        }
        Command::Bench(a) => {
            if let Some(p) = &a.config {
                return from_file(p, "bench", a.out);
            }
            ResolvedConfig::Bench(BenchRunConfig {
                out: required(a.out, "out")?,
                cost: a.cost.model(),
                reps: a.reps,
                length: a.length,
                kept: a.kept,
                batch: a.batch,
                manifest: a.manifest,
                thetas: a.thetas,
                policy: a.policy,
            })
        }
        Command::Report(a) => {
            if let Some(p) = &a.config {
                return from_file(p, "report", a.out);
            }
            ResolvedConfig::Report(ReportRunConfig {
                input: required(a.input, "input")?,
                out: required(a.out, "out")?,
            })
        }
    })
}

/// Executes a resolved configuration on a pool of `workers` threads.
pub fn execute(cfg: &ResolvedConfig, workers: Option<usize>) -> Result<(), CliError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.unwrap_or(0))
        .build()
        .map_err(|e| CliError::Usage(format!("cannot start {} workers: {e}", workers.unwrap_or(0))))?;
    pool.install(|| {
        cfg.save(cfg.out())?;
        match cfg {
            ResolvedConfig::Gen(c) => commands::gen(c),
            ResolvedConfig::Refine(c) => commands::refine(c),
            ResolvedConfig::Prune(c) => commands::prune(c),
            ResolvedConfig::Sweep(c) => commands::sweep(c),
            ResolvedConfig::Eval(c) => commands::eval(c),
            ResolvedConfig::Bench(c) => commands::bench(c),
            ResolvedConfig::Report(c) => commands::report(c),
        }
    })
}

/// Parses `args` (including the program name), runs the subcommand and
/// returns the process exit code. Errors are reported on stderr.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let result = resolve(cli.command).and_then(|cfg| execute(&cfg, cli.workers));
    match result {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn resolved_config_round_trips() {
        let cfg = ResolvedConfig::Sweep(SweepRunConfig {
            manifest: "m".into(),
            out: "o".into(),
            thetas: vec![0.9, 0.5],
            policy: PrunePolicy::LastKept,
            cost: CostModel::new(1.0, 2.0, 3.0).unwrap(),
            reps: 3,
            model: None,
            alphabet_size: Some(4),
        });
        let text = serde_json::to_string(&cfg).unwrap();
        assert!(text.contains(r#""command":"sweep""#));
        assert!(text.contains(r#""policy":"last_kept""#));
        assert_eq!(serde_json::from_str::<ResolvedConfig>(&text).unwrap(), cfg);
    }

    #[test]
    fn flags_resolve() {
        let cli = Cli::try_parse_from(["seqprune", "prune", "--manifest", "m", "--out", "o", "--theta", "0.8"]).unwrap();
        let cfg = resolve(cli.command).unwrap();
        assert_eq!(
            cfg,
            ResolvedConfig::Prune(PruneRunConfig {
                manifest: "m".into(),
                out: "o".into(),
                theta: 0.8,
                policy: PrunePolicy::OriginalAdjacent,
            })
        );
    }

    #[test]
    fn missing_flag_is_usage_error() {
        let cli = Cli::try_parse_from(["seqprune", "sweep", "--out", "o"]).unwrap();
        assert_eq!(resolve(cli.command).unwrap_err().exit_code(), EXIT_USAGE);
        assert_eq!(run(["seqprune", "frobnicate"]), EXIT_USAGE);
        assert_eq!(run(["seqprune", "--help"]), EXIT_OK);
    }

    #[test]
    fn error_classes() {
        let collapsed: CliError = RefineError::Collapsed { iteration: 2 }.into();
        assert_eq!(collapsed.exit_code(), EXIT_COLLAPSED);
        let data: CliError = CorpusError::ZeroDim.into();
        assert_eq!(data.exit_code(), EXIT_DATA);
        let usage: CliError = CompressError::Theta(2.0).into();
        assert_eq!(usage.exit_code(), EXIT_USAGE);
    }
}
