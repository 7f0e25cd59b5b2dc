use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use clap::Args;
use serde::Serialize;

use ahb_core::estimation::{att, cate_by_value, CovariateSlice, EffectEstimate, IteVariant};

use crate::config::{CommandConfig, Manifest, ReportConfig};
use crate::error::CliError;
use crate::pipeline;

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Re-run a previous invocation from its run-manifest.json.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// estimates.csv from a match run.
    #[arg(long)]
    pub estimates: Option<PathBuf>,
    /// Dataset and schema, needed only for --by slices.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub schema: Option<PathBuf>,
    #[arg(long)]
    pub covariates: Option<String>,
    #[arg(long)]
    pub treatment: Option<String>,
    #[arg(long)]
    pub outcome: Option<String>,
    #[arg(long)]
    pub id: Option<String>,
    /// Covariate column to slice the conditional effect by.
    #[arg(long)]
    pub by: Option<String>,
    /// Keep units whose column equals this value exactly.
    #[arg(long)]
    pub equal: Option<f64>,
    /// Keep units whose column falls in [lo, hi), written lo:hi.
    #[arg(long)]
    pub bin: Option<String>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

fn resolve_config(args: ReportArgs) -> Result<ReportConfig, CliError> {
    if let Some(path) = &args.manifest {
        let manifest = Manifest::load(path)?;
        let CommandConfig::Report(mut config) = manifest.command else {
            return Err(CliError::config("manifest does not describe a report run"));
        };
        if let Some(out_dir) = args.out_dir {
            config.out_dir = out_dir;
        }
        return Ok(config);
    }
    let estimates = args
        .estimates
        .ok_or_else(|| CliError::config("--estimates is required"))?;
    let out_dir = args
        .out_dir
        .ok_or_else(|| CliError::config("--out-dir is required"))?;
    let bin = match &args.bin {
        None => None,
        Some(text) => {
            let (lo, hi) = text
                .split_once(':')
                .ok_or_else(|| CliError::config(format!("bin `{text}` must be written lo:hi")))?;
            let parse = |s: &str| {
                s.parse::<f64>()
                    .map_err(|_| CliError::config(format!("bin bound `{s}` is not a number")))
            };
            Some([parse(lo)?, parse(hi)?])
        }
    };
    let schema = if args.by.is_some() {
        Some(pipeline::resolve_schema(
            args.schema.as_deref(),
            args.covariates.as_deref(),
            args.treatment.as_deref(),
            args.outcome.as_deref(),
            args.id.as_deref(),
        )?)
    } else {
        None
    };
    Ok(ReportConfig {
        estimates,
        data: args.data,
        schema,
        by: args.by,
        equal: args.equal,
        bin,
        out_dir,
    })
}

/// estimates.csv rows read back; `unit` is the row number until a dataset
/// re-keys it by id.
fn read_estimates(path: &Path) -> Result<Vec<EffectEstimate>, CliError> {
    let mut rdr =
        csv::Reader::from_path(path).map_err(|e| CliError::io(format!("{}: {e}", path.display())))?;
    let headers: Vec<String> = rdr
        .headers()
        .map_err(|e| CliError::config(format!("{}: {e}", path.display())))?
        .iter()
        .map(str::to_string)
        .collect();
    let col = |name: &str| -> Result<usize, CliError> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| CliError::config(format!("{}: missing column `{name}`", path.display())))
    };
    let (id_col, variant_col, ite_col) = (col("unit_id")?, col("variant")?, col("ite")?);
    let (y0_col, y1_col, nc_col, nt_col) = (col("y0_hat")?, col("y1_hat")?, col("n_c")?, col("n_t")?);

    let mut estimates = Vec::new();
    for (row_idx, record) in rdr.records().enumerate() {
        let record = record.map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
        let cell = |j: usize| record.get(j).unwrap_or("").trim().to_string();
        let number = |j: usize| -> Result<f64, CliError> {
            cell(j).parse::<f64>().map_err(|_| {
                CliError::config(format!(
                    "{}: row {}: `{}` is not a number",
                    path.display(),
                    row_idx + 1,
                    cell(j)
                ))
            })
        };
        let optional = |j: usize| -> Result<Option<f64>, CliError> {
            let text = cell(j);
            if text.is_empty() {
                Ok(None)
            } else {
                number(j).map(Some)
            }
        };
        let count = |j: usize| -> Result<usize, CliError> {
            cell(j).parse::<usize>().map_err(|_| {
                CliError::config(format!(
                    "{}: row {}: `{}` is not a count",
                    path.display(),
                    row_idx + 1,
                    cell(j)
                ))
            })
        };
        let variant: IteVariant = cell(variant_col)
            .parse()
            .map_err(|e: String| CliError::config(format!("{}: {e}", path.display())))?;
        let (n_c, n_t) = (count(nc_col)?, count(nt_col)?);
        estimates.push(EffectEstimate {
            unit: row_idx,
            unit_id: cell(id_col),
            y0_hat: optional(y0_col)?,
            y1_hat: optional(y1_col)?,
            ite: number(ite_col)?,
            variant,
            group_size: n_c + n_t,
            n_c,
            n_t,
        });
    }
    Ok(estimates)
}

#[derive(Serialize)]
struct AttReport {
    att: f64,
    n_used: usize,
    n_excluded: usize,
}

#[derive(Serialize)]
struct CateReport {
    column: String,
    slice: String,
    cate: f64,
    n: usize,
}

#[derive(Serialize)]
struct Report {
    att: AttReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    cate: Option<CateReport>,
}

pub fn run(args: ReportArgs) -> Result<(), CliError> {
    let config = resolve_config(args)?;
    execute(&config)
}

pub fn execute(config: &ReportConfig) -> Result<(), CliError> {
    let mut estimates = read_estimates(&config.estimates)?;
    let dataset = match (&config.data, &config.schema) {
        (Some(path), Some(schema)) => Some(pipeline::load_dataset(path, schema)?),
        (None, None) => None,
        _ => {
            return Err(CliError::config(
                "--data and a schema (--schema or inline flags) go together",
            ))
        }
    };
    if let Some(data) = &dataset {
        let by_id: HashMap<&str, usize> = (0..data.n()).map(|i| (data.id(i), i)).collect();
        for est in &mut estimates {
            est.unit = *by_id.get(est.unit_id.as_str()).ok_or_else(|| {
                CliError::config(format!("dataset has no unit `{}`", est.unit_id))
            })?;
        }
    }

    // tau_a files cover every unit; the dataset tells the treated apart.
    // tau_b files already hold treated units only.
    let att_input: Vec<EffectEstimate> = match &dataset {
        Some(data) => estimates
            .iter()
            .filter(|e| data.is_treated(e.unit))
            .cloned()
            .collect(),
        None => estimates.clone(),
    };
    let att_estimate = att(&att_input, 0).map_err(|e| CliError::config(e.to_string()))?;

    let cate = match &config.by {
        None => None,
        Some(column) => {
            let data = dataset.as_ref().ok_or_else(|| {
                CliError::config("--by needs --data and a schema")
            })?;
            let column_index = data
                .columns()
                .iter()
                .position(|c| c.name == *column)
                .ok_or_else(|| {
                    CliError::config(format!("dataset has no covariate column `{column}`"))
                })?;
            let (slice, label) = match (config.equal, config.bin) {
                (Some(v), None) => (CovariateSlice::Equal(v), format!("={v}")),
                (None, Some([lo, hi])) => {
                    (CovariateSlice::Bin { lo, hi }, format!("[{lo},{hi})"))
                }
                _ => {
                    return Err(CliError::config(
                        "--by needs exactly one of --equal or --bin",
                    ))
                }
            };
            let cate = cate_by_value(&estimates, data, column_index, slice)
                .map_err(|e| CliError::config(e.to_string()))?;
            Some(CateReport {
                column: column.clone(),
                slice: label,
                cate: cate.cate,
                n: cate.n,
            })
        }
    };

    let report = Report {
        att: AttReport {
            att: att_estimate.att,
            n_used: att_estimate.n_used,
            n_excluded: att_estimate.n_excluded,
        },
        cate,
    };
    let text = serde_json::to_string_pretty(&report)
        .map_err(|e| CliError::config(format!("report serialization: {e}")))?;
    fs::create_dir_all(&config.out_dir)
        .map_err(|e| CliError::io(format!("{}: {e}", config.out_dir.display())))?;
    let path = config.out_dir.join("report.json");
    fs::write(&path, text.clone() + "\n")
        .map_err(|e| CliError::io(format!("{}: {e}", path.display())))?;
    Manifest::new(CommandConfig::Report(config.clone())).write(&config.out_dir)?;
    println!("{text}");
    Ok(())
}
