//! Resolved command configurations. Each command turns its flags into one
//! of these structs, runs from it, and writes it back out as the run
//! manifest, so a manifest alone reproduces the run.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use ahb_core::data::DataSchema;
use ahb_core::estimation::IteVariant;
use ahb_core::inference::IntervalMethod;
use ahb_core::predictor::EnsembleConfig;
use ahb_core::solver::fast::FastParams;
use ahb_core::solver::{Preprocess, SolverKind, SolverParams};

use crate::error::CliError;

/// Where predictions come from: a model fit in-process on the training
/// split, the true surfaces of a scenario file, or precomputed values.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum PredictorSpec {
    Builtin,
    Oracle,
    External(PathBuf),
}

impl fmt::Display for PredictorSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PredictorSpec::Builtin => f.write_str("builtin"),
            PredictorSpec::Oracle => f.write_str("oracle"),
            PredictorSpec::External(path) => write!(f, "external:{}", path.display()),
        }
    }
}

impl FromStr for PredictorSpec {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "builtin" => Ok(PredictorSpec::Builtin),
            "oracle" => Ok(PredictorSpec::Oracle),
            other => match other.strip_prefix("external:") {
                Some(path) if !path.is_empty() => Ok(PredictorSpec::External(path.into())),
                _ => Err(format!(
                    "unknown predictor `{other}`; use builtin, oracle, or external:<file>"
                )),
            },
        }
    }
}

impl From<PredictorSpec> for String {
    fn from(spec: PredictorSpec) -> String {
        spec.to_string()
    }
}

impl TryFrom<String> for PredictorSpec {
    type Error = String;

    fn try_from(s: String) -> Result<Self, String> {
        s.parse()
    }
}

/// Effect variant to estimate, or `none` to stop after box construction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VariantSpec {
    TauA,
    TauB,
    None,
}

impl VariantSpec {
    pub fn ite_variant(self) -> Option<IteVariant> {
        match self {
            VariantSpec::TauA => Some(IteVariant::TauA),
            VariantSpec::TauB => Some(IteVariant::TauB),
            VariantSpec::None => None,
        }
    }
}

impl fmt::Display for VariantSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            VariantSpec::TauA => "tau_a",
            VariantSpec::TauB => "tau_b",
            VariantSpec::None => "none",
        })
    }
}

impl FromStr for VariantSpec {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "tau_a" => Ok(VariantSpec::TauA),
            "tau_b" => Ok(VariantSpec::TauB),
            "none" => Ok(VariantSpec::None),
            other => Err(format!(
                "unknown variant `{other}`; use tau_a, tau_b, or none"
            )),
        }
    }
}

pub fn parse_solver(s: &str) -> Result<SolverKind, String> {
    match s {
        "mip" => Ok(SolverKind::Mip),
        "fast" => Ok(SolverKind::Fast),
        other => Err(format!("unknown solver `{other}`; use mip or fast")),
    }
}

/// `none`, `sort:<d>`, `threshold_cost:<eps>`, or `threshold_coord:<eps>`.
pub fn parse_preprocess(s: &str) -> Result<Preprocess, String> {
    if s == "none" {
        return Ok(Preprocess::None);
    }
    let (mode, value) = s
        .split_once(':')
        .ok_or_else(|| format!("preprocess `{s}` is missing its `:value` part"))?;
    match mode {
        "sort" => value
            .parse::<usize>()
            .map(|d| Preprocess::SortClosest { d })
            .map_err(|_| format!("sort depth `{value}` is not a count")),
        "threshold_cost" => value
            .parse::<f64>()
            .map(|eps| Preprocess::ThresholdCost { eps })
            .map_err(|_| format!("cost threshold `{value}` is not a number")),
        "threshold_coord" => value
            .parse::<f64>()
            .map(|eps| Preprocess::ThresholdCoord { eps })
            .map_err(|_| format!("coordinate threshold `{value}` is not a number")),
        other => Err(format!(
            "unknown preprocess `{other}`; use none, sort:<d>, threshold_cost:<eps>, or threshold_coord:<eps>"
        )),
    }
}

pub fn parse_interval_method(s: &str) -> Result<IntervalMethod, String> {
    s.parse()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchConfig {
    pub data: PathBuf,
    pub schema: DataSchema,
    pub solver: SolverKind,
    pub predictor: PredictorSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scenario: Option<PathBuf>,
    pub params: SolverParams,
    pub fast: FastParams,
    pub variant: VariantSpec,
    pub train_fraction: f64,
    pub ensemble: EnsembleConfig,
    pub seed: u64,
    pub workers: usize,
    pub verify_oracle: bool,
    pub trace: bool,
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SimMethod {
    Mip,
    Fast,
    Naive,
    MahalNn,
    PrognosticNn,
    BestCf,
}

impl fmt::Display for SimMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SimMethod::Mip => "mip",
            SimMethod::Fast => "fast",
            SimMethod::Naive => "naive",
            SimMethod::MahalNn => "mahal_nn",
            SimMethod::PrognosticNn => "prognostic_nn",
            SimMethod::BestCf => "best_cf",
        })
    }
}

impl FromStr for SimMethod {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "mip" => Ok(SimMethod::Mip),
            "fast" => Ok(SimMethod::Fast),
            "naive" => Ok(SimMethod::Naive),
            "mahal_nn" => Ok(SimMethod::MahalNn),
            "prognostic_nn" => Ok(SimMethod::PrognosticNn),
            "best_cf" => Ok(SimMethod::BestCf),
            other => Err(format!(
                "unknown method `{other}`; use mip, fast, naive, mahal_nn, prognostic_nn, or best_cf"
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulateConfig {
    pub scenarios: Vec<PathBuf>,
    pub methods: Vec<SimMethod>,
    pub replicates: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub variant: VariantSpec,
    pub predictor: PredictorSpec,
    pub params: SolverParams,
    pub fast: FastParams,
    pub train_fraction: f64,
    pub ensemble: EnsembleConfig,
    pub k_grid: Vec<usize>,
    pub emit_data: bool,
    pub workers: usize,
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuneConfig {
    pub data: PathBuf,
    pub schema: DataSchema,
    pub grid_file: PathBuf,
    pub predictor: PredictorSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scenario: Option<PathBuf>,
    pub train_fraction: f64,
    pub validation_fraction: f64,
    pub ensemble: EnsembleConfig,
    pub seed: u64,
    pub workers: usize,
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageSpec {
    pub truth: PathBuf,
    pub setting: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntervalsConfig {
    pub data: PathBuf,
    pub schema: DataSchema,
    pub solver: SolverKind,
    pub predictor: PredictorSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scenario: Option<PathBuf>,
    pub params: SolverParams,
    pub fast: FastParams,
    pub variant: VariantSpec,
    pub methods: Vec<IntervalMethod>,
    pub level: f64,
    pub resamples: usize,
    pub subsample_fraction: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub true_variance: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coverage: Option<CoverageSpec>,
    pub train_fraction: f64,
    pub ensemble: EnsembleConfig,
    pub seed: u64,
    pub workers: usize,
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportConfig {
    pub estimates: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub schema: Option<DataSchema>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub by: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub equal: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bin: Option<[f64; 2]>,
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "snake_case")]
pub enum CommandConfig {
    Match(MatchConfig),
    Simulate(SimulateConfig),
    Tune(TuneConfig),
    Intervals(IntervalsConfig),
    Report(ReportConfig),
}

/// Best grid entry found by a tune run, echoed into its manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuneBest {
    pub index: usize,
    pub setting: ahb_core::tuning::TuneSetting,
    pub loss: f64,
    pub n_infeasible: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    #[serde(flatten)]
    pub command: CommandConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub oracle_agreement: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub best: Option<TuneBest>,
}

impl Manifest {
    pub fn new(command: CommandConfig) -> Self {
        Manifest {
            tool: "ahb".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command,
            oracle_agreement: None,
            best: None,
        }
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::io(format!("manifest {}: {e}", path.display())))?;
        serde_json::from_str(&text)
            .map_err(|e| CliError::config(format!("manifest {}: {e}", path.display())))
    }

    pub fn write(&self, out_dir: &Path) -> Result<(), CliError> {
        let path = out_dir.join("run-manifest.json");
        let text = serde_json::to_string_pretty(self)
            .map_err(|e| CliError::config(format!("manifest serialization: {e}")))?;
        fs::write(&path, text + "\n")
            .map_err(|e| CliError::io(format!("{}: {e}", path.display())))
    }
}

/// Reads a JSON file into any deserializable config value.
pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::io(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::config(format!("{}: {e}", path.display())))
}
