//! Subcommand configuration files. Relative paths inside a config resolve
//! against the config file's directory.

use std::path::{Path, PathBuf};

use coefmon_core::baseline::OutputChannel;
use coefmon_core::conformal::CalibrationSettings;
use coefmon_core::dihrnn::{MiningConfig, ModelTemplate};
use coefmon_core::stl::StlFormula;
use coefmon_core::LinearOdeSystem;
use serde::de::DeserializeOwned;
use serde::Deserialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{file}: {path}: {msg}")]
    Config { file: PathBuf, path: String, msg: String },
    #[error("{file}: {source}")]
    Io { file: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Core(#[from] coefmon_core::Error),
    #[error("mining failed on window {window}: {source}")]
    DetectMining { window: usize, source: coefmon_core::Error },
}

pub type CliResult<T> = Result<T, CliError>;

pub fn read_text(path: &Path) -> CliResult<String> {
    std::fs::read_to_string(path).map_err(|source| CliError::Io { file: path.to_path_buf(), source })
}

/// Deserialize with the failing JSON path in the error message.
pub fn parse_json<T: DeserializeOwned>(path: &Path, text: &str) -> CliResult<T> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| CliError::Config {
        file: path.to_path_buf(),
        path: e.path().to_string(),
        msg: e.inner().to_string(),
    })
}

pub fn load_json<T: DeserializeOwned>(path: &Path) -> CliResult<T> {
    parse_json(path, &read_text(path)?)
}

/// A config file with its directory, for resolving the paths it mentions.
pub struct Loaded<T> {
    pub value: T,
    pub dir: PathBuf,
}

impl<T: DeserializeOwned> Loaded<T> {
    pub fn load(path: &Path) -> CliResult<Self> {
        let value = load_json(path)?;
        let dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(Self { value, dir })
    }
}

impl<T> Loaded<T> {
    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.dir.join(p)
        }
    }
}

/// Where the model template comes from.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "snake_case")]
pub enum ModelSource {
    /// A system JSON, optionally with `learnable` masks and `basal_state`.
    File(PathBuf),
    /// The nominal template of a scenario file.
    Scenario(PathBuf),
}

impl ModelSource {
    pub fn template<T>(&self, cfg: &Loaded<T>) -> CliResult<ModelTemplate> {
        match self {
            ModelSource::File(p) => {
                let path = cfg.resolve(p);
                let text = read_text(&path)?;
                // parse once for a path-qualified message, then with the extensions
                parse_json::<LinearOdeSystem>(&path, &text)?;
                Ok(ModelTemplate::from_json(&text)?)
            }
            ModelSource::Scenario(p) => {
                let path = cfg.resolve(p);
                let s: coefmon_core::cases::Scenario = load_json(&path)?;
                Ok(s.template()?)
            }
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MineConfig {
    pub model: ModelSource,
    pub mining: MiningConfig,
    pub trace: PathBuf,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrateConfig {
    pub model: ModelSource,
    pub mining: MiningConfig,
    #[serde(default)]
    pub settings: CalibrationSettings,
    /// Error-free traces, one window each.
    pub traces: Vec<PathBuf>,
    #[serde(default)]
    pub split_seed: u64,
}

#[derive(Debug, Clone, Copy, Default, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum NonConvergencePolicy {
    /// Stop with exit code 3.
    #[default]
    Fail,
    /// Score the best estimate found and log a warning.
    UseBest,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectConfig {
    pub model: ModelSource,
    pub mining: MiningConfig,
    pub profile: PathBuf,
    pub trace: PathBuf,
    #[serde(default)]
    pub on_nonconvergence: NonConvergencePolicy,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BaselineConfig {
    pub model: ModelSource,
    pub safety: StlFormula,
    pub channels: Vec<OutputChannel>,
    #[serde(default)]
    pub settings: CalibrationSettings,
    /// Error-free traces used for calibration.
    pub clean: Vec<PathBuf>,
    /// Operational trace to score.
    pub trace: PathBuf,
    /// Samples per scored window; the whole trace when absent.
    #[serde(default)]
    pub window_len: Option<usize>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReportScenario {
    pub name: String,
    pub faulty: bool,
    /// Verdict CSV of the coefficient method.
    pub coefficient: PathBuf,
    /// Verdict CSV of the output baseline.
    #[serde(default)]
    pub baseline: Option<PathBuf>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReportConfig {
    #[serde(default)]
    pub scenarios: Vec<ReportScenario>,
    /// Also write one SVG residue plot per scenario next to the report.
    #[serde(default)]
    pub plots: bool,
}
