//! Hyperparameter selection: γ normalization against prediction spread, and
//! grid search scored by how well each setting's boxes reconstruct the
//! validation units' own observed outcomes.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::Dataset;
use crate::predictor::{OutcomeModel, Predictions, PredictorError};
use crate::solver::exact::solve_all;
use crate::solver::fast::{fast_all_with, FastParams};
use crate::solver::{BoxSolution, SolveError, SolverKind, SolverParams};

#[derive(Debug, Error)]
pub enum TuneError {
    #[error(
        "|f̂{surface}| is constant over the matched units, so its variance cannot scale γ{surface}; \
         disable normalization for constant predictions"
    )]
    ZeroVariance { surface: u8 },
    #[error("normalization needs at least 2 units, got {0}")]
    TooFewUnits(usize),
    #[error("validation data has no outcome column")]
    MissingOutcomes,
    #[error("every validation unit was infeasible under this setting")]
    AllInfeasible,
    #[error("tuning grid is empty")]
    EmptyGrid,
    #[error(transparent)]
    Predictor(#[from] PredictorError),
    #[error(transparent)]
    Solve(Box<SolveError>),
}

impl From<SolveError> for TuneError {
    fn from(e: SolveError) -> Self {
        TuneError::Solve(Box::new(e))
    }
}

fn sample_variance(values: impl Iterator<Item = f64> + Clone) -> (usize, f64) {
    let n = values.clone().count();
    if n < 2 {
        return (n, 0.0);
    }
    let mean = values.clone().sum::<f64>() / n as f64;
    let ss = values.map(|v| (v - mean).powi(2)).sum::<f64>();
    (n, ss / (n - 1) as f64)
}

/// Rescales each γ by the sample variance of the matching units' absolute
/// predictions on its surface, making the two weights comparable when the
/// surfaces live on different scales.
pub fn normalize_gammas(
    gamma0: f64,
    gamma1: f64,
    preds: &Predictions,
) -> Result<(f64, f64), TuneError> {
    let scale = |gamma: f64, values: &[f64], surface: u8| -> Result<f64, TuneError> {
        let (n, var) = sample_variance(values.iter().map(|v| v.abs()));
        if n < 2 {
            return Err(TuneError::TooFewUnits(n));
        }
        // Well above float accumulation noise, well below any real spread.
        let mean_sq = values.iter().map(|v| v * v).sum::<f64>() / n as f64;
        if var <= 1e-24 * (1.0 + mean_sq) {
            return Err(TuneError::ZeroVariance { surface });
        }
        Ok(gamma / var)
    };
    Ok((
        scale(gamma0, preds.f0s(), 0)?,
        scale(gamma1, preds.f1s(), 1)?,
    ))
}

/// One grid point: which solver to run and with what parameters. The fast
/// fields are ignored by the exact solver.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TuneSetting {
    pub solver: SolverKind,
    pub params: SolverParams,
    pub fast: FastParams,
}

impl Default for TuneSetting {
    fn default() -> Self {
        TuneSetting {
            solver: SolverKind::Mip,
            params: SolverParams::default(),
            fast: FastParams::default(),
        }
    }
}

/// Loss of one setting over the validation units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ValidationLoss {
    pub loss: f64,
    pub n_infeasible: usize,
}

#[derive(Debug, Clone)]
pub struct TuneReport {
    pub best_index: usize,
    pub best: TuneSetting,
    pub losses: Vec<ValidationLoss>,
}

fn arm_mean_outcome(data: &Dataset, treated: bool) -> f64 {
    let ys = data.outcomes().expect("checked before calling");
    let mut sum = 0.0;
    let mut n = 0usize;
    for (k, &y) in ys.iter().enumerate() {
        if data.is_treated(k) == treated {
            sum += y;
            n += 1;
        }
    }
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

fn own_arm_estimate(data: &Dataset, i: usize, solution: &BoxSolution) -> f64 {
    let ys = data.outcomes().expect("checked before calling");
    let treated = data.is_treated(i);
    let members: Vec<usize> = if treated {
        solution.group.treated_members(data).collect()
    } else {
        solution.group.control_members(data).collect()
    };
    let sum: f64 = members.iter().map(|&k| ys[k]).sum();
    sum / members.len() as f64
}

/// Squared error of reconstructing each validation unit's observed outcome
/// from its own arm's group members. Infeasible units contribute the
/// squared deviation from their arm's overall mean outcome instead.
pub fn validation_loss(
    setting: &TuneSetting,
    validation: &Dataset,
    model: &dyn OutcomeModel,
    workers: usize,
) -> Result<ValidationLoss, TuneError> {
    let ys = validation.outcomes().ok_or(TuneError::MissingOutcomes)?;
    let preds = Predictions::compute(model, validation)?;
    let units: Vec<usize> = (0..validation.n()).collect();
    let results = match setting.solver {
        SolverKind::Mip => solve_all(validation, &preds, &setting.params, &units, workers)?,
        SolverKind::Fast => fast_all_with(
            validation,
            model,
            &preds,
            &setting.params,
            &setting.fast,
            &units,
            workers,
        )?,
    };

    let fallback_control = arm_mean_outcome(validation, false);
    let fallback_treated = arm_mean_outcome(validation, true);
    let mut residuals = Vec::with_capacity(validation.n());
    let mut n_infeasible = 0usize;
    for (i, result) in results {
        let estimate = match result {
            Ok(solution) => own_arm_estimate(validation, i, &solution),
            Err(SolveError::Infeasible { .. }) | Err(SolveError::NoOppositeArm { .. }) => {
                n_infeasible += 1;
                if validation.is_treated(i) {
                    fallback_treated
                } else {
                    fallback_control
                }
            }
            Err(e) => return Err(e.into()),
        };
        residuals.push((ys[i] - estimate).powi(2));
    }
    if n_infeasible == validation.n() {
        return Err(TuneError::AllInfeasible);
    }
    // Summing in sorted order makes the loss independent of row order.
    residuals.sort_by(|a, b| a.partial_cmp(b).unwrap());
    Ok(ValidationLoss {
        loss: residuals.iter().sum(),
        n_infeasible,
    })
}

/// Evaluates every grid point on the validation data and returns the
/// argmin; ties keep the earliest grid entry.
pub fn tune(
    grid: &[TuneSetting],
    validation: &Dataset,
    model: &dyn OutcomeModel,
    workers: usize,
) -> Result<TuneReport, TuneError> {
    if grid.is_empty() {
        return Err(TuneError::EmptyGrid);
    }
    let mut losses = Vec::with_capacity(grid.len());
    for setting in grid {
        losses.push(validation_loss(setting, validation, model, workers)?);
    }
    let mut best_index = 0;
    for (idx, candidate) in losses.iter().enumerate().skip(1) {
        if candidate.loss < losses[best_index].loss {
            best_index = idx;
        }
    }
    Ok(TuneReport {
        best_index,
        best: grid[best_index],
        losses,
    })
}
