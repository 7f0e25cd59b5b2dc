//! Outcome surrogates: the pluggable pair (f̂₀, f̂₁) both solvers score
//! boxes against. Three implementations: a bagged-tree ensemble fit on the
//! training split, an oracle backed by known simulation surfaces, and a
//! file of externally computed predictions keyed by unit id.

mod bagged;
mod tree;

pub use bagged::{fit_builtin, BaggedTrees, EnsembleConfig};

use std::collections::HashMap;
use std::io::Read;
use std::path::Path;
use std::sync::Arc;

use thiserror::Error;

use crate::data::Dataset;

#[derive(Debug, Error)]
pub enum PredictorError {
    #[error("training data has no outcomes")]
    MissingOutcomes,
    #[error("{arm} arm has {n} training units; at least 2 required")]
    TooFewUnits { arm: Arm, n: usize },
    #[error("model has no ensemble capability")]
    NoEnsemble,
    #[error("no prediction for unit id `{0}`")]
    UnknownUnit(String),
    #[error("model answers by unit id only and cannot score arbitrary points")]
    PointQueriesUnsupported,
    #[error("predictions file: {0}")]
    BadFile(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Treatment arm whose outcome surface is being queried.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Arm {
    Control,
    Treated,
}

impl Arm {
    pub fn from_indicator(t: bool) -> Self {
        if t {
            Arm::Treated
        } else {
            Arm::Control
        }
    }
}

impl std::fmt::Display for Arm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Arm::Control => write!(f, "control"),
            Arm::Treated => write!(f, "treated"),
        }
    }
}

/// A fitted predictor pair. `predict` must be deterministic; models with an
/// ensemble expose per-member predictions whose mean equals `predict`.
pub trait OutcomeModel: Send + Sync {
    /// Point estimate of the arm's outcome surface at covariates `x`.
    fn predict(&self, x: &[f64], arm: Arm) -> Result<f64, PredictorError>;

    /// Prediction for a known unit. Models fitted on covariates ignore the
    /// id; file-backed models use it as the lookup key.
    fn predict_unit(&self, _id: &str, x: &[f64], arm: Arm) -> Result<f64, PredictorError> {
        self.predict(x, arm)
    }

    /// Per-member predictions, present iff `has_ensemble`.
    fn ensemble_predict(&self, _x: &[f64], _arm: Arm) -> Result<Vec<f64>, PredictorError> {
        Err(PredictorError::NoEnsemble)
    }

    fn ensemble_unit(&self, _id: &str, x: &[f64], arm: Arm) -> Result<Vec<f64>, PredictorError> {
        self.ensemble_predict(x, arm)
    }

    fn has_ensemble(&self) -> bool {
        false
    }

    /// False for id-keyed models, which cannot score arbitrary points (and
    /// so cannot drive the grid-scored fast solver).
    fn supports_point_queries(&self) -> bool {
        true
    }
}

/// Both surfaces evaluated once per unit of a dataset. Solvers and
/// estimators index into this instead of re-querying the model.
#[derive(Debug, Clone, PartialEq)]
pub struct Predictions {
    f0: Vec<f64>,
    f1: Vec<f64>,
}

impl Predictions {
    pub fn compute(model: &dyn OutcomeModel, data: &Dataset) -> Result<Self, PredictorError> {
        let mut f0 = Vec::with_capacity(data.n());
        let mut f1 = Vec::with_capacity(data.n());
        for i in 0..data.n() {
            let (id, x) = (data.id(i), data.row(i));
            f0.push(model.predict_unit(id, x, Arm::Control)?);
            f1.push(model.predict_unit(id, x, Arm::Treated)?);
        }
        Ok(Predictions { f0, f1 })
    }

    pub fn from_vecs(f0: Vec<f64>, f1: Vec<f64>) -> Self {
        assert_eq!(f0.len(), f1.len());
        Predictions { f0, f1 }
    }

    pub fn f0(&self, i: usize) -> f64 {
        self.f0[i]
    }

    pub fn f1(&self, i: usize) -> f64 {
        self.f1[i]
    }

    pub fn f0s(&self) -> &[f64] {
        &self.f0
    }

    pub fn f1s(&self) -> &[f64] {
        &self.f1
    }

    pub fn len(&self) -> usize {
        self.f0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.f0.is_empty()
    }
}

type Surface = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

/// Test-only surrogate returning the true surfaces: f₀ = g, f₁ = g + h.
/// Isolates solver behavior from predictor quality in simulations.
#[derive(Clone)]
pub struct OracleModel {
    g: Surface,
    h: Surface,
}

impl OracleModel {
    pub fn new<G, H>(g: G, h: H) -> Self
    where
        G: Fn(&[f64]) -> f64 + Send + Sync + 'static,
        H: Fn(&[f64]) -> f64 + Send + Sync + 'static,
    {
        OracleModel {
            g: Arc::new(g),
            h: Arc::new(h),
        }
    }
}

impl OutcomeModel for OracleModel {
    fn predict(&self, x: &[f64], arm: Arm) -> Result<f64, PredictorError> {
        Ok(match arm {
            Arm::Control => (self.g)(x),
            Arm::Treated => (self.g)(x) + (self.h)(x),
        })
    }
}

#[derive(Debug)]
struct UnitPrediction {
    f0: f64,
    f1: f64,
    draws0: Vec<f64>,
    draws1: Vec<f64>,
}

/// Predictions supplied by an external model (BART or anything else) as a
/// CSV keyed by unit id: columns id, f0, f1, optional f0_draw_1..B and
/// f1_draw_1..B posterior draws.
#[derive(Debug)]
pub struct ExternalPredictions {
    units: HashMap<String, UnitPrediction>,
    n_draws: usize,
}

impl ExternalPredictions {
    pub fn from_csv_reader<R: Read>(reader: R) -> Result<Self, PredictorError> {
        let mut rdr = csv::Reader::from_reader(reader);
        let headers: Vec<String> = rdr.headers()?.iter().map(|h| h.trim().to_string()).collect();
        let col = |name: &str| -> Result<usize, PredictorError> {
            headers
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| PredictorError::BadFile(format!("missing column `{name}`")))
        };
        let id_col = col("id")?;
        let f0_col = col("f0")?;
        let f1_col = col("f1")?;
        let draw_cols = |prefix: &str| -> Result<Vec<usize>, PredictorError> {
            let mut found: Vec<(usize, usize)> = Vec::new();
            for (j, h) in headers.iter().enumerate() {
                if let Some(suffix) = h.strip_prefix(prefix) {
                    let k: usize = suffix.parse().map_err(|_| {
                        PredictorError::BadFile(format!("bad draw column name `{h}`"))
                    })?;
                    found.push((k, j));
                }
            }
            found.sort_unstable();
            for (expect, &(k, _)) in (1..).zip(&found) {
                if k != expect {
                    return Err(PredictorError::BadFile(format!(
                        "draw columns {prefix}1..{prefix}{} must be contiguous",
                        found.len()
                    )));
                }
            }
            Ok(found.into_iter().map(|(_, j)| j).collect())
        };
        let draws0_cols = draw_cols("f0_draw_")?;
        let draws1_cols = draw_cols("f1_draw_")?;
        if draws0_cols.len() != draws1_cols.len() {
            return Err(PredictorError::BadFile(format!(
                "{} f0 draw columns vs {} f1 draw columns",
                draws0_cols.len(),
                draws1_cols.len()
            )));
        }
        let n_draws = draws0_cols.len();

        let mut units = HashMap::new();
        for (idx, record) in rdr.records().enumerate() {
            let record = record?;
            let row = idx + 1;
            let cell = |j: usize| -> Result<f64, PredictorError> {
                record
                    .get(j)
                    .and_then(|c| c.trim().parse::<f64>().ok())
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| {
                        PredictorError::BadFile(format!(
                            "row {row}: cannot parse `{}` in column `{}`",
                            record.get(j).unwrap_or(""),
                            headers[j]
                        ))
                    })
            };
            let id = record
                .get(id_col)
                .map(|c| c.trim().to_string())
                .filter(|c| !c.is_empty())
                .ok_or_else(|| PredictorError::BadFile(format!("row {row}: empty id")))?;
            let unit = UnitPrediction {
                f0: cell(f0_col)?,
                f1: cell(f1_col)?,
                draws0: draws0_cols.iter().map(|&j| cell(j)).collect::<Result<_, _>>()?,
                draws1: draws1_cols.iter().map(|&j| cell(j)).collect::<Result<_, _>>()?,
            };
            if units.insert(id.clone(), unit).is_some() {
                return Err(PredictorError::BadFile(format!("duplicate unit id `{id}`")));
            }
        }
        if units.is_empty() {
            return Err(PredictorError::BadFile("no prediction rows".into()));
        }
        Ok(ExternalPredictions { units, n_draws })
    }

    pub fn from_csv_path(path: impl AsRef<Path>) -> Result<Self, PredictorError> {
        let file = std::fs::File::open(path)?;
        Self::from_csv_reader(file)
    }

    pub fn n_draws(&self) -> usize {
        self.n_draws
    }

    fn lookup(&self, id: &str) -> Result<&UnitPrediction, PredictorError> {
        self.units
            .get(id)
            .ok_or_else(|| PredictorError::UnknownUnit(id.to_string()))
    }
}

impl OutcomeModel for ExternalPredictions {
    fn predict(&self, _x: &[f64], _arm: Arm) -> Result<f64, PredictorError> {
        Err(PredictorError::PointQueriesUnsupported)
    }

    fn predict_unit(&self, id: &str, _x: &[f64], arm: Arm) -> Result<f64, PredictorError> {
        let unit = self.lookup(id)?;
        Ok(match arm {
            Arm::Control => unit.f0,
            Arm::Treated => unit.f1,
        })
    }

    fn ensemble_unit(&self, id: &str, _x: &[f64], arm: Arm) -> Result<Vec<f64>, PredictorError> {
        if self.n_draws == 0 {
            return Err(PredictorError::NoEnsemble);
        }
        let unit = self.lookup(id)?;
        Ok(match arm {
            Arm::Control => unit.draws0.clone(),
            Arm::Treated => unit.draws1.clone(),
        })
    }

    fn has_ensemble(&self) -> bool {
        self.n_draws > 0
    }

    fn supports_point_queries(&self) -> bool {
        false
    }
}
