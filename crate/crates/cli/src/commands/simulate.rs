use std::fs;
use std::path::PathBuf;

use clap::Args;

use ahb_core::data::{self, ColumnKind, CovariateKind, CovariateSpec, DataSchema, Dataset, OutcomeSpec, SplitSpec};
use ahb_core::estimation::{ite, EffectEstimate};
use ahb_core::predictor::{fit_builtin, EnsembleConfig, OutcomeModel, Predictions};
use ahb_core::seeds;
use ahb_core::simulation::{
    baseline, baseline_best_k, evaluate_mae_att, generate, oracle_model, subset_truth,
    BaselineMethod, DgpConfig, SimTruth,
};
use ahb_core::solver::fast::FastParams;
use ahb_core::solver::{CostParams, Preprocess, SolverKind, SolverParams};

use crate::artifacts::{self, ResultRow, SummaryRow};
use crate::config::{
    parse_preprocess, read_json, CommandConfig, Manifest, PredictorSpec, SimMethod,
    SimulateConfig, VariantSpec,
};
use crate::error::CliError;
use crate::pipeline;

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Re-run a previous invocation from its run-manifest.json.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Scenario JSON files; repeat the flag to run several.
    #[arg(long = "scenario")]
    pub scenarios: Vec<PathBuf>,
    /// Comma-separated methods: mip, fast, naive, mahal_nn, prognostic_nn,
    /// best_cf.
    #[arg(long, value_delimiter = ',')]
    pub methods: Vec<SimMethod>,
    #[arg(long, default_value_t = 10)]
    pub replicates: usize,
    /// Override the scenario's unit count.
    #[arg(long)]
    pub n: Option<usize>,
    /// Base seed; the scenario file's seed is used when absent.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, default_value = "tau_a")]
    pub variant: VariantSpec,
    /// builtin or oracle.
    #[arg(long, default_value = "builtin")]
    pub predictor: PredictorSpec,
    #[arg(long, default_value_t = 1)]
    pub m: usize,
    #[arg(long, default_value_t = 1.0)]
    pub gamma0: f64,
    #[arg(long, default_value_t = 1.0)]
    pub gamma1: f64,
    #[arg(long, default_value_t = 1.0)]
    pub beta: f64,
    #[arg(long)]
    pub normalize: bool,
    #[arg(long, default_value = "none", value_parser = parse_preprocess)]
    pub preprocess: Preprocess,
    #[arg(long)]
    pub controls_only: bool,
    #[arg(long, default_value_t = 2.0)]
    pub c: f64,
    #[arg(long, default_value_t = 5)]
    pub grid: usize,
    #[arg(long, default_value_t = 2.0 / 3.0)]
    pub train_fraction: f64,
    #[arg(long, default_value_t = 100)]
    pub trees: usize,
    #[arg(long, default_value_t = 6)]
    pub max_depth: usize,
    #[arg(long, default_value_t = 5)]
    pub min_leaf: usize,
    /// Neighbor counts swept by the nearest-neighbor baselines.
    #[arg(long, value_delimiter = ',', default_values_t = [1usize, 3, 5, 7, 10])]
    pub k_grid: Vec<usize>,
    /// Also write each replicate's dataset and truth to the output dir.
    #[arg(long)]
    pub emit_data: bool,
    #[arg(long)]
    pub workers: Option<usize>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

fn resolve_config(args: SimulateArgs) -> Result<SimulateConfig, CliError> {
    if let Some(path) = &args.manifest {
        let manifest = Manifest::load(path)?;
        let CommandConfig::Simulate(mut config) = manifest.command else {
            return Err(CliError::config("manifest does not describe a simulate run"));
        };
        if let Some(workers) = args.workers {
            config.workers = workers;
        }
        if let Some(out_dir) = args.out_dir {
            config.out_dir = out_dir;
        }
        return Ok(config);
    }
    if args.scenarios.is_empty() {
        return Err(CliError::config("at least one --scenario file is required"));
    }
    if args.methods.is_empty() {
        return Err(CliError::config("--methods is required"));
    }
    let out_dir = args
        .out_dir
        .ok_or_else(|| CliError::config("--out-dir is required"))?;
    Ok(SimulateConfig {
        scenarios: args.scenarios,
        methods: args.methods,
        replicates: args.replicates,
        n: args.n,
        seed: args.seed,
        variant: args.variant,
        predictor: args.predictor,
        params: SolverParams {
            cost: CostParams {
                gamma0: args.gamma0,
                gamma1: args.gamma1,
                beta: args.beta,
            },
            m: args.m,
            normalize: args.normalize,
            preprocess: args.preprocess,
            controls_only: args.controls_only,
        },
        fast: FastParams {
            c: args.c,
            grid_points: args.grid,
            ..FastParams::default()
        },
        train_fraction: args.train_fraction,
        ensemble: EnsembleConfig {
            n_trees: args.trees,
            max_depth: args.max_depth,
            min_leaf: args.min_leaf,
            seed: 0,
        },
        k_grid: args.k_grid,
        emit_data: args.emit_data,
        workers: args.workers.unwrap_or(0),
        out_dir,
    })
}

fn scenario_name(path: &std::path::Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}

fn emitted_schema(data: &Dataset) -> DataSchema {
    DataSchema {
        covariates: data
            .columns()
            .iter()
            .map(|col| CovariateSpec {
                name: col.name.clone(),
                kind: match col.kind {
                    ColumnKind::Continuous => CovariateKind::Continuous,
                    ColumnKind::Binary => CovariateKind::Binary,
                },
            })
            .collect(),
        treatment: "z".into(),
        outcome: Some(OutcomeSpec {
            name: "y".into(),
            required: false,
        }),
        id: Some("id".into()),
    }
}

fn write_truth_json(path: &std::path::Path, truth: &SimTruth, data: &Dataset) -> Result<(), CliError> {
    let ites: std::collections::BTreeMap<String, f64> = (0..data.n())
        .map(|i| (data.id(i).to_string(), truth.h[i]))
        .collect();
    let body = serde_json::json!({ "ites": ites });
    let text = serde_json::to_string_pretty(&body)
        .map_err(|e| CliError::config(format!("truth serialization: {e}")))?;
    fs::write(path, text + "\n").map_err(|e| CliError::io(format!("{}: {e}", path.display())))
}

struct MethodOutcome {
    k: Option<usize>,
    n_estimated: usize,
    n_failed: usize,
    mae: Option<f64>,
    true_att: Option<f64>,
    mae_over_att: Option<f64>,
}

fn score(
    estimates: &[EffectEstimate],
    n_failed: usize,
    k: Option<usize>,
    truth: &SimTruth,
    data: &Dataset,
) -> Result<MethodOutcome, CliError> {
    if estimates.is_empty() {
        return Ok(MethodOutcome {
            k,
            n_estimated: 0,
            n_failed,
            mae: None,
            true_att: None,
            mae_over_att: None,
        });
    }
    let metric = evaluate_mae_att(estimates, truth, data)?;
    Ok(MethodOutcome {
        k,
        n_estimated: estimates.len(),
        n_failed,
        mae: Some(metric.mae),
        true_att: Some(metric.true_att),
        mae_over_att: metric.proportion,
    })
}

fn run_ahb(
    solver: SolverKind,
    est: &Dataset,
    truth: &SimTruth,
    model: &dyn OutcomeModel,
    config: &SimulateConfig,
) -> Result<MethodOutcome, CliError> {
    let preds = Predictions::compute(model, est)?;
    let treated = est.treated_indices();
    let results = pipeline::solve_units(
        est,
        model,
        &preds,
        solver,
        &config.params,
        &config.fast,
        &treated,
        config.workers,
    )?;
    let (solutions, failures) = pipeline::partition_solutions(results);
    let variant = config
        .variant
        .ite_variant()
        .expect("validated before running");
    let mut estimates = Vec::with_capacity(solutions.len());
    let mut n_failed = failures.len();
    for (unit, solution) in &solutions {
        match ite(*unit, &solution.group, est, variant) {
            Ok(estimate) => estimates.push(estimate),
            Err(_) => n_failed += 1,
        }
    }
    score(&estimates, n_failed, None, truth, est)
}

fn run_baseline(
    method: SimMethod,
    est: &Dataset,
    truth: &SimTruth,
    model: &dyn OutcomeModel,
    config: &SimulateConfig,
) -> Result<MethodOutcome, CliError> {
    match method {
        SimMethod::Naive => {
            let estimates = baseline(BaselineMethod::Naive, est, 1, None, None)?;
            score(&estimates, 0, None, truth, est)
        }
        SimMethod::MahalNn | SimMethod::PrognosticNn | SimMethod::BestCf => {
            let (bm, model_arg): (BaselineMethod, Option<&dyn OutcomeModel>) = match method {
                SimMethod::MahalNn => (BaselineMethod::MahalNn, None),
                SimMethod::PrognosticNn => (BaselineMethod::PrognosticNn, Some(model)),
                _ => (BaselineMethod::BestCf, None),
            };
            let (k, estimates, _) = baseline_best_k(bm, est, &config.k_grid, model_arg, truth)?;
            score(&estimates, 0, Some(k), truth, est)
        }
        SimMethod::Mip | SimMethod::Fast => unreachable!("solver methods handled separately"),
    }
}

pub fn run(args: SimulateArgs) -> Result<(), CliError> {
    let config = resolve_config(args)?;
    execute(&config)
}

pub fn execute(config: &SimulateConfig) -> Result<(), CliError> {
    if config.replicates == 0 {
        return Err(CliError::config("--replicates must be at least 1"));
    }
    if config.variant == VariantSpec::None {
        return Err(CliError::config("simulate needs an effect variant"));
    }
    if matches!(config.predictor, PredictorSpec::External(_)) {
        return Err(CliError::config(
            "simulated datasets have no external predictions; use builtin or oracle",
        ));
    }
    if config.k_grid.is_empty() {
        return Err(CliError::config("--k-grid must name at least one k"));
    }

    fs::create_dir_all(&config.out_dir)
        .map_err(|e| CliError::io(format!("{}: {e}", config.out_dir.display())))?;

    let mut rows: Vec<ResultRow> = Vec::new();
    for scenario_path in &config.scenarios {
        let name = scenario_name(scenario_path);
        let scenario: DgpConfig = read_json(scenario_path)?;
        for replicate in 0..config.replicates {
            let mut dgp = scenario.clone();
            if let Some(n) = config.n {
                dgp.n = n;
            }
            let base = config.seed.unwrap_or(scenario.seed);
            dgp.seed = seeds::derive(base, "simulation").wrapping_add(replicate as u64);
            let (data, truth) = generate(&dgp)?;

            if config.emit_data {
                if replicate == 0 {
                    let schema_path = config.out_dir.join(format!("schema-{name}.json"));
                    let text = serde_json::to_string_pretty(&emitted_schema(&data))
                        .map_err(|e| CliError::config(format!("schema serialization: {e}")))?;
                    fs::write(&schema_path, text + "\n")
                        .map_err(|e| CliError::io(format!("{}: {e}", schema_path.display())))?;
                }
                artifacts::write_dataset_csv(
                    &config.out_dir.join(format!("data-{name}-rep{replicate}.csv")),
                    &data,
                )?;
                write_truth_json(
                    &config.out_dir.join(format!("truth-{name}-rep{replicate}.json")),
                    &truth,
                    &data,
                )?;
            }

            let (est, est_truth, model): (Dataset, SimTruth, Box<dyn OutcomeModel>) =
                match &config.predictor {
                    PredictorSpec::Builtin => {
                        let split = data::split(
                            &data,
                            &SplitSpec {
                                train_fraction: config.train_fraction,
                                validation_fraction: 0.0,
                                seed: seeds::derive(dgp.seed, "split"),
                            },
                        )?;
                        let fit_config = EnsembleConfig {
                            seed: seeds::derive(dgp.seed, "predictor"),
                            ..config.ensemble
                        };
                        let model = fit_builtin(&split.train, &fit_config)?;
                        let est_truth = subset_truth(&truth, &split.test)?;
                        (split.test, est_truth, Box::new(model))
                    }
                    PredictorSpec::Oracle => {
                        let model = oracle_model(&dgp)?;
                        (data, truth, Box::new(model))
                    }
                    PredictorSpec::External(_) => unreachable!("rejected above"),
                };

            for &method in &config.methods {
                let outcome = match method {
                    SimMethod::Mip => {
                        run_ahb(SolverKind::Mip, &est, &est_truth, model.as_ref(), config)?
                    }
                    SimMethod::Fast => {
                        run_ahb(SolverKind::Fast, &est, &est_truth, model.as_ref(), config)?
                    }
                    _ => run_baseline(method, &est, &est_truth, model.as_ref(), config)?,
                };
                rows.push(ResultRow {
                    scenario: name.clone(),
                    method: method.to_string(),
                    replicate,
                    k: outcome.k,
                    n_estimated: outcome.n_estimated,
                    n_failed: outcome.n_failed,
                    mae: outcome.mae,
                    true_att: outcome.true_att,
                    mae_over_att: outcome.mae_over_att,
                });
            }
        }
    }

    let summary = summarize(&rows);
    artifacts::write_results_csv(&config.out_dir.join("results.csv"), &rows)?;
    artifacts::write_summary_csv(&config.out_dir.join("summary.csv"), &summary)?;
    Manifest::new(CommandConfig::Simulate(config.clone())).write(&config.out_dir)?;
    println!(
        "{} result rows over {} scenario(s); artifacts in {}",
        rows.len(),
        config.scenarios.len(),
        config.out_dir.display()
    );
    Ok(())
}

/// Per (scenario, method) mean and sample standard deviation of the error
/// metric, in first-appearance order. Replicates with a zero true ATT fall
/// back to their raw MAE.
fn summarize(rows: &[ResultRow]) -> Vec<SummaryRow> {
    let mut order: Vec<(String, String)> = Vec::new();
    for row in rows {
        let key = (row.scenario.clone(), row.method.clone());
        if !order.contains(&key) {
            order.push(key);
        }
    }
    order
        .into_iter()
        .map(|(scenario, method)| {
            let values: Vec<f64> = rows
                .iter()
                .filter(|r| r.scenario == scenario && r.method == method)
                .filter_map(|r| r.mae_over_att.or(r.mae))
                .collect();
            let n = values.len();
            let mean = values.iter().sum::<f64>() / n.max(1) as f64;
            let sd = (n >= 2).then(|| {
                (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
            });
            SummaryRow {
                scenario,
                method,
                replicates: n,
                mean_mae_over_att: mean,
                sd_mae_over_att: sd,
            }
        })
        .collect()
}
