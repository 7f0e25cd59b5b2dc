use std::collections::BTreeMap;
use std::fs;
use std::path::PathBuf;

use clap::Args;
use serde::Deserialize;

use ahb_core::estimation::ite;
use ahb_core::inference::{interval, IntervalEstimate, IntervalMethod, ResampleConfig};
use ahb_core::predictor::{EnsembleConfig, Predictions};
use ahb_core::seeds;
use ahb_core::solver::fast::FastParams;
use ahb_core::solver::{CostParams, Preprocess, SolverKind, SolverParams};

use crate::artifacts::{self, CoverageRow};
use crate::commands::match_cmd::solver_label;
use crate::config::{
    parse_interval_method, parse_preprocess, parse_solver, read_json, CommandConfig, CoverageSpec,
    IntervalsConfig, Manifest, PredictorSpec, VariantSpec,
};
use crate::error::CliError;
use crate::pipeline;

#[derive(Debug, Args)]
pub struct IntervalsArgs {
    /// Re-run a previous invocation from its run-manifest.json.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
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
    #[arg(long, default_value = "mip", value_parser = parse_solver)]
    pub solver: SolverKind,
    #[arg(long, default_value = "builtin")]
    pub predictor: PredictorSpec,
    #[arg(long)]
    pub scenario: Option<PathBuf>,
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
    /// tau_a or tau_b.
    #[arg(long, default_value = "tau_a")]
    pub variant: VariantSpec,
    /// Comma-separated interval constructions: na_ensemble, na_true,
    /// na_conservative, bootstrap, subsample, posterior.
    #[arg(long = "method", value_delimiter = ',', value_parser = parse_interval_method)]
    pub methods: Vec<IntervalMethod>,
    #[arg(long, default_value_t = 0.95)]
    pub level: f64,
    #[arg(long, default_value_t = 1000)]
    pub resamples: usize,
    #[arg(long, default_value_t = 0.7)]
    pub subsample_fraction: f64,
    /// Known noise variance, for --method na_true.
    #[arg(long)]
    pub true_variance: Option<f64>,
    /// Compare intervals against a truth file and emit coverage.csv.
    #[arg(long)]
    pub coverage: bool,
    /// Truth JSON ({"ites": {unit_id: effect}}) for --coverage.
    #[arg(long)]
    pub truth: Option<PathBuf>,
    /// Label for the coverage report's setting column.
    #[arg(long, default_value = "default")]
    pub setting: String,
    #[arg(long, default_value_t = 0.5)]
    pub train_fraction: f64,
    #[arg(long, default_value_t = 100)]
    pub trees: usize,
    #[arg(long, default_value_t = 6)]
    pub max_depth: usize,
    #[arg(long, default_value_t = 5)]
    pub min_leaf: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub workers: Option<usize>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

fn resolve_config(args: IntervalsArgs) -> Result<IntervalsConfig, CliError> {
    if let Some(path) = &args.manifest {
        let manifest = Manifest::load(path)?;
        let CommandConfig::Intervals(mut config) = manifest.command else {
            return Err(CliError::config(
                "manifest does not describe an intervals run",
            ));
        };
        if let Some(workers) = args.workers {
            config.workers = workers;
        }
        if let Some(out_dir) = args.out_dir {
            config.out_dir = out_dir;
        }
        return Ok(config);
    }
    let data = args
        .data
        .ok_or_else(|| CliError::config("--data is required"))?;
    let out_dir = args
        .out_dir
        .ok_or_else(|| CliError::config("--out-dir is required"))?;
    if args.methods.is_empty() {
        return Err(CliError::config("--method is required"));
    }
    let coverage = if args.coverage {
        let truth = args
            .truth
            .ok_or_else(|| CliError::config("--coverage needs --truth"))?;
        Some(CoverageSpec {
            truth,
            setting: args.setting,
        })
    } else {
        None
    };
    let schema = pipeline::resolve_schema(
        args.schema.as_deref(),
        args.covariates.as_deref(),
        args.treatment.as_deref(),
        args.outcome.as_deref(),
        args.id.as_deref(),
    )?;
    Ok(IntervalsConfig {
        data,
        schema,
        solver: args.solver,
        predictor: args.predictor,
        scenario: args.scenario,
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
        variant: args.variant,
        methods: args.methods,
        level: args.level,
        resamples: args.resamples,
        subsample_fraction: args.subsample_fraction,
        true_variance: args.true_variance,
        coverage,
        train_fraction: args.train_fraction,
        ensemble: EnsembleConfig {
            n_trees: args.trees,
            max_depth: args.max_depth,
            min_leaf: args.min_leaf,
            seed: 0,
        },
        seed: args.seed,
        workers: args.workers.unwrap_or(0),
        out_dir,
    })
}

#[derive(Debug, Deserialize)]
struct TruthFile {
    ites: BTreeMap<String, f64>,
}

pub fn run(args: IntervalsArgs) -> Result<(), CliError> {
    let config = resolve_config(args)?;
    execute(&config)
}

pub fn execute(config: &IntervalsConfig) -> Result<(), CliError> {
    let variant = config.variant.ite_variant().ok_or_else(|| {
        CliError::config("intervals need an effect variant; use tau_a or tau_b")
    })?;
    if config.methods.is_empty() {
        return Err(CliError::config("--method is required"));
    }
    let needs_truth_var = config.methods.contains(&IntervalMethod::NaTrue);
    if needs_truth_var && config.true_variance.is_none() {
        return Err(CliError::config("--method na_true needs --true-variance"));
    }

    let data = pipeline::load_dataset(&config.data, &config.schema)?;
    let prepared = pipeline::prepare_model(
        data,
        &config.predictor,
        config.scenario.as_deref(),
        config.train_fraction,
        0.0,
        &config.ensemble,
        config.seed,
    )?;
    let est = &prepared.estimation;
    let model = prepared.model.as_ref();

    let ensemble_methods = [IntervalMethod::NaEnsemble, IntervalMethod::Posterior];
    if config.methods.iter().any(|m| ensemble_methods.contains(m)) && !model.has_ensemble() {
        return Err(CliError::config(
            "na_ensemble and posterior need an ensemble predictor (builtin, or external \
             predictions with draw columns)",
        ));
    }
    let outcome_free = config
        .methods
        .iter()
        .all(|m| *m == IntervalMethod::Posterior);
    if !outcome_free && est.outcomes().is_none() {
        return Err(CliError::config(
            "these interval methods need an outcome column",
        ));
    }
    if config.variant == VariantSpec::TauB && est.n_treated() == 0 {
        return Err(CliError::config(
            "tau_b intervals cover treated units only, and the dataset has none",
        ));
    }

    let preds = Predictions::compute(model, est)?;
    let units: Vec<usize> = if config.variant == VariantSpec::TauB {
        est.treated_indices()
    } else {
        (0..est.n()).collect()
    };
    let results = pipeline::solve_units(
        est,
        model,
        &preds,
        config.solver,
        &config.params,
        &config.fast,
        &units,
        config.workers,
    )?;
    let (solutions, failures) = pipeline::partition_solutions(results);

    let resample = ResampleConfig {
        n_resamples: config.resamples,
        subsample_fraction: config.subsample_fraction,
        seed: seeds::derive(config.seed, "resampling"),
    };
    let mut intervals: Vec<IntervalEstimate> = Vec::new();
    let mut interval_failures: Vec<String> = Vec::new();
    let mut estimates = Vec::new();
    for (unit, solution) in &solutions {
        if !outcome_free {
            match ite(*unit, &solution.group, est, variant) {
                Ok(estimate) => estimates.push(estimate),
                Err(e) => {
                    interval_failures.push(format!("unit {}: {e}", est.id(*unit)));
                    continue;
                }
            }
        }
        for &method in &config.methods {
            match interval(
                *unit,
                &solution.group,
                est,
                model,
                variant,
                method,
                config.level,
                &resample,
                config.true_variance,
            ) {
                Ok(iv) => intervals.push(iv),
                Err(e) => {
                    interval_failures.push(format!("unit {} ({method}): {e}", est.id(*unit)))
                }
            }
        }
    }

    fs::create_dir_all(&config.out_dir)
        .map_err(|e| CliError::io(format!("{}: {e}", config.out_dir.display())))?;
    artifacts::write_intervals_csv(&config.out_dir.join("intervals.csv"), &intervals)?;
    if !outcome_free {
        artifacts::write_estimates_csv(
            &config.out_dir.join("estimates.csv"),
            &estimates,
            &solver_label(config.solver),
        )?;
    }
    if let Some(coverage) = &config.coverage {
        let truth: TruthFile = read_json(&coverage.truth)?;
        let rows = coverage_rows(&coverage.setting, &config.methods, &intervals, &truth)?;
        artifacts::write_coverage_csv(&config.out_dir.join("coverage.csv"), &rows)?;
    }
    Manifest::new(CommandConfig::Intervals(config.clone())).write(&config.out_dir)?;

    for line in &interval_failures {
        eprintln!("{line}");
    }
    pipeline::report_failures(est, solutions.len(), &failures)?;
    println!(
        "{} intervals over {} units; artifacts in {}",
        intervals.len(),
        solutions.len(),
        config.out_dir.display()
    );
    Ok(())
}

fn coverage_rows(
    setting: &str,
    methods: &[IntervalMethod],
    intervals: &[IntervalEstimate],
    truth: &TruthFile,
) -> Result<Vec<CoverageRow>, CliError> {
    let mut rows = Vec::new();
    for &method in methods {
        let of_method: Vec<&IntervalEstimate> =
            intervals.iter().filter(|iv| iv.method == method).collect();
        if of_method.is_empty() {
            continue;
        }
        let mut covered = 0usize;
        let mut width = 0.0;
        for iv in &of_method {
            let true_ite = truth.ites.get(&iv.unit_id).ok_or_else(|| {
                CliError::config(format!("truth file has no entry for unit `{}`", iv.unit_id))
            })?;
            if iv.lower <= *true_ite && *true_ite <= iv.upper {
                covered += 1;
            }
            width += iv.upper - iv.lower;
        }
        rows.push(CoverageRow {
            setting: setting.to_string(),
            method: method.to_string(),
            coverage: covered as f64 / of_method.len() as f64,
            mean_width: width / of_method.len() as f64,
        });
    }
    Ok(rows)
}
