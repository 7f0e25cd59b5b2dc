//! CSV and JSON artifact writers. All writers emit rows in a fixed order
//! derived from unit indices and input ordering, never from scheduling, so
//! outputs are byte-identical across worker counts.

use std::path::Path;

use ahb_core::data::Dataset;
use ahb_core::estimation::EffectEstimate;
use ahb_core::inference::IntervalEstimate;
use ahb_core::solver::fast::TraceStep;
use ahb_core::solver::BoxSolution;
use ahb_core::tuning::{TuneSetting, ValidationLoss};

use crate::error::CliError;

fn writer(path: &Path) -> Result<csv::Writer<std::fs::File>, CliError> {
    csv::Writer::from_path(path).map_err(|e| CliError::io(format!("{}: {e}", path.display())))
}

fn finish(mut w: csv::Writer<std::fs::File>, path: &Path) -> Result<(), CliError> {
    w.flush()
        .map_err(|e| CliError::io(format!("{}: {e}", path.display())))
}

fn row_err(path: &Path, e: csv::Error) -> CliError {
    CliError::io(format!("{}: {e}", path.display()))
}

fn num(v: f64) -> String {
    format!("{v}")
}

fn opt(v: Option<f64>) -> String {
    v.map(num).unwrap_or_default()
}

/// One row per covariate per solved unit: the box bounds.
pub fn write_boxes_csv(
    path: &Path,
    data: &Dataset,
    solutions: &[(usize, BoxSolution)],
) -> Result<(), CliError> {
    let mut w = writer(path)?;
    w.write_record(["owner_id", "covariate_name", "lower", "upper"])
        .map_err(|e| row_err(path, e))?;
    for (unit, solution) in solutions {
        let hb = &solution.hyperbox;
        for (j, col) in data.columns().iter().enumerate() {
            w.write_record([
                data.id(*unit),
                col.name.as_str(),
                &num(hb.lower()[j]),
                &num(hb.upper()[j]),
            ])
            .map_err(|e| row_err(path, e))?;
        }
    }
    finish(w, path)
}

/// One row per solved unit: objective and group composition counts.
pub fn write_groups_csv(
    path: &Path,
    data: &Dataset,
    solutions: &[(usize, BoxSolution)],
) -> Result<(), CliError> {
    let mut w = writer(path)?;
    w.write_record(["owner_id", "objective", "n_members", "n_controls"])
        .map_err(|e| row_err(path, e))?;
    for (unit, solution) in solutions {
        w.write_record([
            data.id(*unit),
            &num(solution.objective),
            &solution.group.members().len().to_string(),
            &solution.group.n_control().to_string(),
        ])
        .map_err(|e| row_err(path, e))?;
    }
    finish(w, path)
}

/// One row per group member, with its arm and pair cost to the owner.
pub fn write_members_csv(
    path: &Path,
    data: &Dataset,
    solutions: &[(usize, BoxSolution)],
) -> Result<(), CliError> {
    let mut w = writer(path)?;
    w.write_record(["owner_id", "member_id", "arm", "pair_cost"])
        .map_err(|e| row_err(path, e))?;
    for (unit, solution) in solutions {
        for (&member, &cost) in &solution.per_unit_costs {
            let arm = if data.is_treated(member) {
                "treated"
            } else {
                "control"
            };
            w.write_record([data.id(*unit), data.id(member), arm, &num(cost)])
                .map_err(|e| row_err(path, e))?;
        }
    }
    finish(w, path)
}

pub fn write_estimates_csv(
    path: &Path,
    estimates: &[EffectEstimate],
    solver_label: &str,
) -> Result<(), CliError> {
    let mut w = writer(path)?;
    w.write_record([
        "unit_id", "variant", "ite", "y0_hat", "y1_hat", "n_c", "n_t", "solver",
    ])
    .map_err(|e| row_err(path, e))?;
    for est in estimates {
        w.write_record([
            est.unit_id.as_str(),
            &est.variant.to_string(),
            &num(est.ite),
            &opt(est.y0_hat),
            &opt(est.y1_hat),
            &est.n_c.to_string(),
            &est.n_t.to_string(),
            solver_label,
        ])
        .map_err(|e| row_err(path, e))?;
    }
    finish(w, path)
}

/// Fast-solver growth log; box bounds are `;`-joined coordinate vectors.
pub fn write_trace_csv(
    path: &Path,
    data: &Dataset,
    traces: &[(usize, Vec<TraceStep>)],
) -> Result<(), CliError> {
    let join = |v: &[f64]| {
        v.iter()
            .map(|x| format!("{x}"))
            .collect::<Vec<_>>()
            .join(";")
    };
    let mut w = writer(path)?;
    w.write_record(["owner_id", "step", "axis", "variation", "lower", "upper"])
        .map_err(|e| row_err(path, e))?;
    for (unit, steps) in traces {
        for s in steps {
            w.write_record([
                data.id(*unit),
                &s.step.to_string(),
                &s.axis.to_string(),
                &num(s.variation),
                &join(&s.lower),
                &join(&s.upper),
            ])
            .map_err(|e| row_err(path, e))?;
        }
    }
    finish(w, path)
}

pub fn write_intervals_csv(path: &Path, intervals: &[IntervalEstimate]) -> Result<(), CliError> {
    let mut w = writer(path)?;
    w.write_record(["unit_id", "method", "level", "lower", "upper"])
        .map_err(|e| row_err(path, e))?;
    for iv in intervals {
        w.write_record([
            iv.unit_id.as_str(),
            &iv.method.to_string(),
            &num(iv.level),
            &num(iv.lower),
            &num(iv.upper),
        ])
        .map_err(|e| row_err(path, e))?;
    }
    finish(w, path)
}

pub struct CoverageRow {
    pub setting: String,
    pub method: String,
    pub coverage: f64,
    pub mean_width: f64,
}

pub fn write_coverage_csv(path: &Path, rows: &[CoverageRow]) -> Result<(), CliError> {
    let mut w = writer(path)?;
    w.write_record(["setting", "method", "coverage", "mean_width"])
        .map_err(|e| row_err(path, e))?;
    for row in rows {
        w.write_record([
            row.setting.as_str(),
            row.method.as_str(),
            &num(row.coverage),
            &num(row.mean_width),
        ])
        .map_err(|e| row_err(path, e))?;
    }
    finish(w, path)
}

/// One row per grid point, the setting embedded as its JSON serialization.
pub fn write_tuning_csv(
    path: &Path,
    grid: &[TuneSetting],
    losses: &[ValidationLoss],
) -> Result<(), CliError> {
    let mut w = writer(path)?;
    w.write_record(["lambda_json", "loss", "n_infeasible"])
        .map_err(|e| row_err(path, e))?;
    for (setting, loss) in grid.iter().zip(losses) {
        let lambda = serde_json::to_string(setting)
            .map_err(|e| CliError::config(format!("grid serialization: {e}")))?;
        w.write_record([
            lambda.as_str(),
            &num(loss.loss),
            &loss.n_infeasible.to_string(),
        ])
        .map_err(|e| row_err(path, e))?;
    }
    finish(w, path)
}

pub struct ResultRow {
    pub scenario: String,
    pub method: String,
    pub replicate: usize,
    pub k: Option<usize>,
    pub n_estimated: usize,
    pub n_failed: usize,
    pub mae: Option<f64>,
    pub true_att: Option<f64>,
    pub mae_over_att: Option<f64>,
}

pub fn write_results_csv(path: &Path, rows: &[ResultRow]) -> Result<(), CliError> {
    let mut w = writer(path)?;
    w.write_record([
        "scenario",
        "method",
        "replicate",
        "k",
        "n_estimated",
        "n_failed",
        "mae",
        "true_att",
        "mae_over_att",
    ])
    .map_err(|e| row_err(path, e))?;
    for row in rows {
        w.write_record([
            row.scenario.as_str(),
            row.method.as_str(),
            &row.replicate.to_string(),
            &row.k.map(|k| k.to_string()).unwrap_or_default(),
            &row.n_estimated.to_string(),
            &row.n_failed.to_string(),
            &opt(row.mae),
            &opt(row.true_att),
            &opt(row.mae_over_att),
        ])
        .map_err(|e| row_err(path, e))?;
    }
    finish(w, path)
}

pub struct SummaryRow {
    pub scenario: String,
    pub method: String,
    pub replicates: usize,
    pub mean_mae_over_att: f64,
    pub sd_mae_over_att: Option<f64>,
}

pub fn write_summary_csv(path: &Path, rows: &[SummaryRow]) -> Result<(), CliError> {
    let mut w = writer(path)?;
    w.write_record([
        "scenario",
        "method",
        "replicates",
        "mean_mae_over_att",
        "sd_mae_over_att",
    ])
    .map_err(|e| row_err(path, e))?;
    for row in rows {
        w.write_record([
            row.scenario.as_str(),
            row.method.as_str(),
            &row.replicates.to_string(),
            &num(row.mean_mae_over_att),
            &opt(row.sd_mae_over_att),
        ])
        .map_err(|e| row_err(path, e))?;
    }
    finish(w, path)
}

/// A generated dataset as ingestible CSV: id, covariates, z, and y.
pub fn write_dataset_csv(path: &Path, data: &Dataset) -> Result<(), CliError> {
    let mut w = writer(path)?;
    let mut header = vec!["id".to_string()];
    header.extend(data.columns().iter().map(|c| c.name.clone()));
    header.push("z".into());
    header.push("y".into());
    w.write_record(&header).map_err(|e| row_err(path, e))?;
    let ys = data.outcomes();
    for i in 0..data.n() {
        let mut record = vec![data.id(i).to_string()];
        record.extend(data.row(i).iter().map(|v| num(*v)));
        record.push(data.treatments()[i].to_string());
        record.push(ys.map(|y| num(y[i])).unwrap_or_default());
        w.write_record(&record).map_err(|e| row_err(path, e))?;
    }
    finish(w, path)
}
