//! Steps shared by the data-driven commands: schema resolution, dataset
//! loading, predictor setup with its honest split, and batch solving.

use std::path::Path;

use ahb_core::data::{
    self, CovariateKind, CovariateSpec, DataSchema, Dataset, OutcomeSpec, SplitSpec,
};
use ahb_core::predictor::{fit_builtin, EnsembleConfig, ExternalPredictions, OutcomeModel, Predictions};
use ahb_core::seeds;
use ahb_core::simulation::{self, DgpConfig};
use ahb_core::solver::exact::solve_all;
use ahb_core::solver::fast::{fast_all_with, FastParams};
use ahb_core::solver::{BoxSolution, SolveError, SolverKind, SolverParams, UnitResults};

use crate::config::PredictorSpec;
use crate::error::CliError;

/// Builds the ingestion schema from a JSON file or from the inline flags
/// (`--covariates name:kind,...` plus `--treatment`).
pub fn resolve_schema(
    schema_path: Option<&Path>,
    covariates: Option<&str>,
    treatment: Option<&str>,
    outcome: Option<&str>,
    id: Option<&str>,
) -> Result<DataSchema, CliError> {
    if let Some(path) = schema_path {
        return crate::config::read_json(path);
    }
    let (Some(covariates), Some(treatment)) = (covariates, treatment) else {
        return Err(CliError::config(
            "provide --schema, or --covariates together with --treatment",
        ));
    };
    let mut specs = Vec::new();
    for entry in covariates.split(',') {
        let entry = entry.trim();
        let (name, kind) = entry
            .split_once(':')
            .ok_or_else(|| CliError::config(format!("covariate `{entry}` is missing its :kind")))?;
        let kind = match kind {
            "continuous" => CovariateKind::Continuous,
            "binary" => CovariateKind::Binary,
            other => match other.strip_prefix("categorical=") {
                Some(levels) => CovariateKind::Categorical {
                    levels: levels.split('|').map(str::to_string).collect(),
                },
                None => {
                    return Err(CliError::config(format!(
                        "covariate `{name}` has unknown kind `{other}`; use continuous, binary, or categorical=a|b|c"
                    )))
                }
            },
        };
        specs.push(CovariateSpec {
            name: name.to_string(),
            kind,
        });
    }
    Ok(DataSchema {
        covariates: specs,
        treatment: treatment.to_string(),
        outcome: outcome.map(|name| OutcomeSpec {
            name: name.to_string(),
            required: false,
        }),
        id: id.map(str::to_string),
    })
}

pub fn load_dataset(path: &Path, schema: &DataSchema) -> Result<Dataset, CliError> {
    Dataset::from_csv_path(path, schema).map_err(|e| match CliError::from(e) {
        CliError::Io(msg) => CliError::Io(format!("{}: {msg}", path.display())),
        other => other,
    })
}

/// A model plus the units it is allowed to match: the held-out split for
/// the built-in predictor, the full dataset otherwise.
pub struct Prepared {
    pub estimation: Dataset,
    pub validation: Option<Dataset>,
    pub model: Box<dyn OutcomeModel>,
}

pub fn prepare_model(
    data: Dataset,
    predictor: &PredictorSpec,
    scenario: Option<&Path>,
    train_fraction: f64,
    validation_fraction: f64,
    ensemble: &EnsembleConfig,
    seed: u64,
) -> Result<Prepared, CliError> {
    match predictor {
        PredictorSpec::Builtin => {
            let split = data::split(
                &data,
                &SplitSpec {
                    train_fraction,
                    validation_fraction,
                    seed: seeds::derive(seed, "split"),
                },
            )?;
            let fit_config = EnsembleConfig {
                seed: seeds::derive(seed, "predictor"),
                ..*ensemble
            };
            let model = fit_builtin(&split.train, &fit_config)?;
            Ok(Prepared {
                estimation: split.test,
                validation: split.validation,
                model: Box::new(model),
            })
        }
        PredictorSpec::Oracle => {
            let path = scenario.ok_or_else(|| {
                CliError::config("the oracle predictor needs --scenario to define its surfaces")
            })?;
            let config: DgpConfig = crate::config::read_json(path)?;
            let layout = config.layout()?;
            if layout.columns.len() != data.p() {
                return Err(CliError::config(format!(
                    "scenario describes {} covariates, dataset has {}",
                    layout.columns.len(),
                    data.p()
                )));
            }
            let model = simulation::oracle_model(&config)?;
            Ok(Prepared {
                estimation: data,
                validation: None,
                model: Box::new(model),
            })
        }
        PredictorSpec::External(path) => {
            let model =
                ExternalPredictions::from_csv_path(path).map_err(|e| match CliError::from(e) {
                    CliError::Io(msg) => CliError::Io(format!("{}: {msg}", path.display())),
                    other => other,
                })?;
            Ok(Prepared {
                estimation: data,
                validation: None,
                model: Box::new(model),
            })
        }
    }
}

/// Solves the listed units with the chosen solver. Per-unit infeasibility
/// stays in the result list; configuration-level failures abort.
#[allow(clippy::too_many_arguments)]
pub fn solve_units(
    data: &Dataset,
    model: &dyn OutcomeModel,
    preds: &Predictions,
    solver: SolverKind,
    params: &SolverParams,
    fast: &FastParams,
    units: &[usize],
    workers: usize,
) -> Result<UnitResults, CliError> {
    match solver {
        SolverKind::Mip => solve_all(data, preds, params, units, workers)
            .map_err(|e| CliError::config(e.to_string())),
        SolverKind::Fast => {
            if !model.supports_point_queries() {
                return Err(CliError::config(
                    "the fast solver scores interior grid points; use a predictor that can \
                     answer them (builtin or oracle)",
                ));
            }
            fast_all_with(data, model, preds, params, fast, units, workers)
                .map_err(|e| CliError::config(e.to_string()))
        }
    }
}

/// Splits solve results into successes and failures, keeping unit order.
#[allow(clippy::type_complexity)]
pub fn partition_solutions(
    results: UnitResults,
) -> (Vec<(usize, BoxSolution)>, Vec<(usize, SolveError)>) {
    let mut ok = Vec::new();
    let mut failed = Vec::new();
    for (unit, result) in results {
        match result {
            Ok(solution) => ok.push((unit, solution)),
            Err(e) => failed.push((unit, e)),
        }
    }
    (ok, failed)
}

/// Prints one line per failed unit and enforces the all-failed exit code.
pub fn report_failures(
    data: &Dataset,
    n_ok: usize,
    failures: &[(usize, SolveError)],
) -> Result<(), CliError> {
    for (unit, e) in failures {
        eprintln!("unit {}: {e}", data.id(*unit));
    }
    if n_ok == 0 {
        return Err(CliError::AllInfeasible(format!(
            "no unit admits a feasible box ({} attempted)",
            failures.len()
        )));
    }
    Ok(())
}
