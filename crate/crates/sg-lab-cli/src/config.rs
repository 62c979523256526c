//! Experiment configuration: JSON in, validated structs out.
//!
//! Configs are strict — unknown fields are rejected so a typo cannot
//! silently fall back to a default — and everything that controls the run
//! (horizon, exponent, noise law, seed) lives in the file, so a config plus
//! a binary is a complete description of an experiment.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use sg_lab::model::{ArmaxSystem, NoiseKind, NoiseModel};
use sg_lab::spectral::Matrix;

/// Errors split by exit code: configuration problems exit with 2, runtime
/// failures with 1.
#[derive(Debug)]
pub enum CliError {
    /// Malformed or inconsistent configuration / usage.
    Config(String),
    /// Failure while running a well-formed experiment.
    Runtime(String),
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(msg) => write!(f, "configuration error: {msg}"),
            CliError::Runtime(msg) => write!(f, "runtime error: {msg}"),
        }
    }
}

impl std::error::Error for CliError {}

impl CliError {
    /// Process exit code the error maps to.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

impl From<sg_lab::Error> for CliError {
    fn from(e: sg_lab::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(format!("io: {e}"))
    }
}

pub type CliResult<T> = Result<T, CliError>;

/// Where the regressors come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunMode {
    /// Designed (or persistently exciting) regressors feed a linear
    /// regression channel directly.
    Direct,
    /// A simulated ARMAX system generates the data and the estimator forms
    /// its own regressors from outputs, inputs, and residuals.
    Armax,
}

impl RunMode {
    pub fn label(&self) -> &'static str {
        match self {
            RunMode::Direct => "direct",
            RunMode::Armax => "armax",
        }
    }
}

/// Excitation source for direct mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ExcitationSource {
    /// The deficit allocator with the configured conditioning exponent.
    #[default]
    Designed,
    /// Persistently exciting iid regressors (random signs on every axis),
    /// the classical benign baseline.
    PersistentlyExciting,
}

/// Noise configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "snake_case")]
pub struct NoiseConfig {
    /// `gaussian`, `bounded`, or `zero`.
    pub kind: String,
    /// Base conditional variance `c0` (total over components).
    #[serde(default = "default_c0")]
    pub c0: f64,
    /// Growth exponent: conditional variance scales like `c0 r_n^epsilon`.
    #[serde(default)]
    pub epsilon: f64,
}

fn default_c0() -> f64 {
    1.0
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self {
            kind: "zero".to_string(),
            c0: 1.0,
            epsilon: 0.0,
        }
    }
}

impl NoiseConfig {
    /// Builds the noise model for a given seed stream.
    pub fn model(&self, seed: u64) -> CliResult<NoiseModel> {
        let kind = match self.kind.as_str() {
            "gaussian" => NoiseKind::Gaussian,
            "bounded" => NoiseKind::BoundedUniform,
            "zero" => NoiseKind::Zero,
            other => {
                return Err(CliError::Config(format!(
                    "unknown noise kind {other:?}; expected gaussian, bounded, or zero"
                )))
            }
        };
        NoiseModel::new(self.c0, self.epsilon, kind, seed).map_err(Into::into)
    }
}

/// ARMAX system coefficients: `a[i]`, `b[j]`, `c[k]` are the lag matrices in
/// row-major nested arrays.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemConfig {
    /// Output dimension.
    pub d: usize,
    /// Input dimension.
    pub l: usize,
    /// Output-lag matrices, each `d x d`.
    #[serde(default)]
    pub a: Vec<Vec<Vec<f64>>>,
    /// Input-lag matrices, each `d x l`.
    #[serde(default)]
    pub b: Vec<Vec<Vec<f64>>>,
    /// Noise-lag matrices, each `d x d`.
    #[serde(default)]
    pub c: Vec<Vec<Vec<f64>>>,
}

impl SystemConfig {
    pub fn build(&self) -> CliResult<ArmaxSystem> {
        let lift = |mats: &[Vec<Vec<f64>>], rows: usize, cols: usize| -> CliResult<Vec<Matrix>> {
            mats.iter()
                .map(|m| {
                    Matrix::new(rows, cols, m.iter().flatten().copied().collect())
                        .map_err(|e| CliError::Config(e.to_string()))
                })
                .collect()
        };
        let a = lift(&self.a, self.d, self.d)?;
        let b = lift(&self.b, self.d, self.l)?;
        let c = lift(&self.c, self.d, self.d)?;
        ArmaxSystem::new(self.d, self.l, a, b, c).map_err(|e| CliError::Config(e.to_string()))
    }
}

/// Input signal for ARMAX mode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputConfig {
    /// Only `white` (iid uniform on `[-amplitude, amplitude]`) is supported.
    pub kind: String,
    #[serde(default = "default_amplitude")]
    pub amplitude: f64,
}

fn default_amplitude() -> f64 {
    1.0
}

/// One experiment, fully described.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Human-readable tag used in output names and comparison tables.
    #[serde(default)]
    pub label: Option<String>,
    pub mode: RunMode,
    /// Regressor dimension (direct mode).
    #[serde(default)]
    pub dim: Option<usize>,
    /// Conditioning exponent for designed excitation and for normalizing
    /// the measured profile.
    #[serde(default)]
    pub alpha: f64,
    /// Number of steps.
    pub horizon: usize,
    /// Energy per designed step.
    #[serde(default = "default_step_energy")]
    pub step_energy: f64,
    #[serde(default)]
    pub seed: u64,
    /// Sampling stride for time-series outputs; defaults to `horizon/1000`.
    #[serde(default)]
    pub stride: Option<usize>,
    #[serde(default)]
    pub excitation: ExcitationSource,
    #[serde(default)]
    pub noise: NoiseConfig,
    /// True parameter vector for direct mode (length `dim`); defaults to an
    /// alternating geometric pattern.
    #[serde(default)]
    pub truth: Option<Vec<f64>>,
    /// System description (ARMAX mode).
    #[serde(default)]
    pub system: Option<SystemConfig>,
    /// Input signal (ARMAX mode).
    #[serde(default)]
    pub input: Option<InputConfig>,
}

fn default_step_energy() -> f64 {
    1.0
}

impl ExperimentConfig {
    /// Parses and validates a config file. Parse failures are configuration
    /// errors (exit 2) and nothing is written.
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        let cfg: ExperimentConfig = serde_json::from_str(&text)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Cross-field validation.
    pub fn validate(&self) -> CliResult<()> {
        if self.horizon < 100 {
            return Err(CliError::Config(format!(
                "horizon must be at least 100, got {}",
                self.horizon
            )));
        }
        if self.alpha < 0.0 || !self.alpha.is_finite() {
            return Err(CliError::Config(format!(
                "alpha must be finite and >= 0, got {}",
                self.alpha
            )));
        }
        if self.step_energy <= 0.0 || !self.step_energy.is_finite() {
            return Err(CliError::Config(format!(
                "step_energy must be positive, got {}",
                self.step_energy
            )));
        }
        if let Some(stride) = self.stride {
            if stride == 0 {
                return Err(CliError::Config("stride must be positive".into()));
            }
        }
        match self.mode {
            RunMode::Direct => {
                let dim = self
                    .dim
                    .ok_or_else(|| CliError::Config("direct mode requires dim".into()))?;
                if dim == 0 {
                    return Err(CliError::Config("dim must be positive".into()));
                }
                if let Some(truth) = &self.truth {
                    if truth.len() != dim {
                        return Err(CliError::Config(format!(
                            "truth has {} entries but dim is {dim}",
                            truth.len()
                        )));
                    }
                    if !truth.iter().all(|v| v.is_finite()) {
                        return Err(CliError::Config("truth entries must be finite".into()));
                    }
                }
                if self.system.is_some() || self.input.is_some() {
                    return Err(CliError::Config(
                        "direct mode does not take system/input sections".into(),
                    ));
                }
            }
            RunMode::Armax => {
                let sys = self
                    .system
                    .as_ref()
                    .ok_or_else(|| CliError::Config("armax mode requires a system section".into()))?;
                sys.build()?;
                if let Some(input) = &self.input {
                    if input.kind != "white" {
                        return Err(CliError::Config(format!(
                            "unknown input kind {:?}; only white is supported",
                            input.kind
                        )));
                    }
                    if input.amplitude <= 0.0 || !input.amplitude.is_finite() {
                        return Err(CliError::Config("input amplitude must be positive".into()));
                    }
                }
                if self.dim.is_some() || self.truth.is_some() {
                    return Err(CliError::Config(
                        "armax mode derives dim and truth from the system section".into(),
                    ));
                }
                if self.excitation != ExcitationSource::Designed {
                    return Err(CliError::Config(
                        "the excitation field applies to direct mode only".into(),
                    ));
                }
            }
        }
        // Validate the noise kind eagerly so a bad config never runs.
        self.noise.model(0)?;
        Ok(())
    }

    /// Label used in file names and tables.
    pub fn label(&self) -> String {
        self.label.clone().unwrap_or_else(|| {
            format!("{}-alpha{}", self.mode.label(), self.alpha)
        })
    }

    /// Effective sampling stride.
    pub fn effective_stride(&self) -> usize {
        self.stride.unwrap_or_else(|| (self.horizon / 1000).max(1))
    }

    /// Direct-mode true parameter vector; the default is an alternating
    /// geometric pattern so no axis is degenerate.
    pub fn truth_vector(&self, dim: usize) -> Vec<f64> {
        self.truth
            .clone()
            .unwrap_or_else(|| (0..dim).map(|i| (-0.5_f64).powi(i as i32)).collect())
    }
}

/// Configuration for the randomized bound-verification sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifyConfig {
    /// Randomized window-bound instances.
    #[serde(default = "default_instances")]
    pub instances: usize,
    /// Certificate replays.
    #[serde(default = "default_certificates")]
    pub certificates: usize,
    /// Integral-estimate instances.
    #[serde(default = "default_estimates")]
    pub estimates: usize,
    /// Largest regressor dimension drawn.
    #[serde(default = "default_max_dim")]
    pub max_dim: usize,
    /// Largest window length for bound/estimate instances.
    #[serde(default = "default_max_len")]
    pub max_len: usize,
    /// Largest window length for certificate replays.
    #[serde(default = "default_cert_len")]
    pub cert_max_len: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_instances() -> usize {
    1000
}
fn default_certificates() -> usize {
    500
}
fn default_estimates() -> usize {
    500
}
fn default_max_dim() -> usize {
    5
}
fn default_max_len() -> usize {
    200
}
fn default_cert_len() -> usize {
    60
}

impl Default for VerifyConfig {
    fn default() -> Self {
        serde_json::from_str("{}").unwrap()
    }
}

impl VerifyConfig {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        let cfg: VerifyConfig = serde_json::from_str(&text)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> CliResult<()> {
        if self.max_dim == 0 || self.max_len == 0 || self.cert_max_len == 0 {
            return Err(CliError::Config(
                "max_dim, max_len, and cert_max_len must be positive".into(),
            ));
        }
        Ok(())
    }
}
