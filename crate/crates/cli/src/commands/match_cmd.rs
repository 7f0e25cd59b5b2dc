use std::fs;
use std::path::PathBuf;

use clap::Args;

use ahb_core::estimation::{ite, EffectEstimate};
use ahb_core::predictor::{EnsembleConfig, Predictions};
use ahb_core::solver::exact::brute_force_oracle;
use ahb_core::solver::fast::{fast_box_traced, FastParams, TraceStep};
use ahb_core::solver::{
    BoxSolution, CostParams, Preprocess, SolverKind, SolverParams, UnitResults,
};

use crate::artifacts;
use crate::config::{
    parse_preprocess, parse_solver, CommandConfig, Manifest, MatchConfig, PredictorSpec,
    VariantSpec,
};
use crate::error::CliError;
use crate::pipeline;

#[derive(Debug, Args)]
pub struct MatchArgs {
    /// Re-run a previous invocation from its run-manifest.json.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Input dataset (CSV with header).
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Column-role schema (JSON file).
    #[arg(long)]
    pub schema: Option<PathBuf>,
    /// Inline schema: comma-separated name:kind pairs (continuous, binary,
    /// or categorical=a|b|c), as an alternative to --schema.
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
    /// builtin, oracle, or external:<predictions.csv>.
    #[arg(long, default_value = "builtin")]
    pub predictor: PredictorSpec,
    /// Scenario JSON defining the oracle predictor's surfaces.
    #[arg(long)]
    pub scenario: Option<PathBuf>,
    /// Minimum control members per box.
    #[arg(long, default_value_t = 1)]
    pub m: usize,
    #[arg(long, default_value_t = 1.0)]
    pub gamma0: f64,
    #[arg(long, default_value_t = 1.0)]
    pub gamma1: f64,
    #[arg(long, default_value_t = 1.0)]
    pub beta: f64,
    /// Rescale gamma weights by prediction variance.
    #[arg(long)]
    pub normalize: bool,
    /// none, sort:<d>, threshold_cost:<eps>, or threshold_coord:<eps>.
    #[arg(long, default_value = "none", value_parser = parse_preprocess)]
    pub preprocess: Preprocess,
    /// Keep only the owner and control units in matched groups.
    #[arg(long)]
    pub controls_only: bool,
    /// Fast-solver stopping multiplier.
    #[arg(long, default_value_t = 2.0)]
    pub c: f64,
    /// Fast-solver grid resolution per axis.
    #[arg(long, default_value_t = 5)]
    pub grid: usize,
    /// tau_a, tau_b, or none to skip estimation.
    #[arg(long, default_value = "tau_a")]
    pub variant: VariantSpec,
    /// Training share of the honest split (builtin predictor only).
    #[arg(long, default_value_t = 0.5)]
    pub train_fraction: f64,
    /// Built-in ensemble size.
    #[arg(long, default_value_t = 100)]
    pub trees: usize,
    #[arg(long, default_value_t = 6)]
    pub max_depth: usize,
    #[arg(long, default_value_t = 5)]
    pub min_leaf: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Worker threads for per-unit solving; 0 uses the global pool.
    #[arg(long)]
    pub workers: Option<usize>,
    /// Cross-check every exact solution against exhaustive enumeration.
    #[arg(long)]
    pub verify_oracle: bool,
    /// Emit the fast solver's per-step growth log.
    #[arg(long)]
    pub trace: bool,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

fn resolve_config(args: MatchArgs) -> Result<MatchConfig, CliError> {
    if let Some(path) = &args.manifest {
        let manifest = Manifest::load(path)?;
        let CommandConfig::Match(mut config) = manifest.command else {
            return Err(CliError::config("manifest does not describe a match run"));
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
    let schema = pipeline::resolve_schema(
        args.schema.as_deref(),
        args.covariates.as_deref(),
        args.treatment.as_deref(),
        args.outcome.as_deref(),
        args.id.as_deref(),
    )?;
    Ok(MatchConfig {
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
        train_fraction: args.train_fraction,
        ensemble: EnsembleConfig {
            n_trees: args.trees,
            max_depth: args.max_depth,
            min_leaf: args.min_leaf,
            seed: 0,
        },
        seed: args.seed,
        workers: args.workers.unwrap_or(0),
        verify_oracle: args.verify_oracle,
        trace: args.trace,
        out_dir,
    })
}

#[allow(clippy::type_complexity)]
fn solve_traced(
    data: &ahb_core::data::Dataset,
    model: &dyn ahb_core::predictor::OutcomeModel,
    preds: &Predictions,
    config: &MatchConfig,
    units: &[usize],
) -> Result<(UnitResults, Vec<(usize, Vec<TraceStep>)>), CliError> {
    let resolved = config
        .params
        .resolve(preds)
        .map_err(|e| CliError::config(e.to_string()))?;
    let cost = CostParams {
        gamma0: resolved.gamma0,
        gamma1: resolved.gamma1,
        beta: resolved.beta,
    };
    let fast = FastParams {
        m: config.params.m,
        controls_only: config.params.controls_only,
        ..config.fast
    };
    let mut results = Vec::with_capacity(units.len());
    let mut traces = Vec::new();
    for &unit in units {
        match fast_box_traced(unit, data, model, preds, &fast, &cost) {
            Ok((solution, trace)) => {
                traces.push((unit, trace));
                results.push((unit, Ok(solution)));
            }
            Err(e) => results.push((unit, Err(e))),
        }
    }
    Ok((results, traces))
}

fn verify_against_oracle(
    data: &ahb_core::data::Dataset,
    preds: &Predictions,
    params: &SolverParams,
    solutions: &[(usize, BoxSolution)],
) -> Result<bool, CliError> {
    for (unit, solution) in solutions {
        let reference = brute_force_oracle(*unit, data, preds, params)
            .map_err(|e| CliError::config(format!("oracle verification: {e}")))?;
        if reference.objective.to_bits() != solution.objective.to_bits()
            || reference.group.members() != solution.group.members()
        {
            return Ok(false);
        }
    }
    Ok(true)
}

pub fn run(args: MatchArgs) -> Result<(), CliError> {
    let config = resolve_config(args)?;
    execute(&config)
}

pub fn execute(config: &MatchConfig) -> Result<(), CliError> {
    if config.verify_oracle && config.solver != SolverKind::Mip {
        return Err(CliError::config("--verify-oracle needs --solver mip"));
    }
    if config.trace && config.solver != SolverKind::Fast {
        return Err(CliError::config("--trace needs --solver fast"));
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
    let estimation = &prepared.estimation;

    if config.variant == VariantSpec::TauB && estimation.n_treated() == 0 {
        return Err(CliError::config(
            "tau_b estimates treated units only, and the dataset has none",
        ));
    }
    if config.variant != VariantSpec::None && estimation.outcomes().is_none() {
        return Err(CliError::config(
            "effect estimation needs an outcome column; pass --variant none to only build boxes",
        ));
    }

    let preds = Predictions::compute(prepared.model.as_ref(), estimation)?;
    let units: Vec<usize> = (0..estimation.n()).collect();

    let (results, traces) = if config.trace {
        solve_traced(estimation, prepared.model.as_ref(), &preds, config, &units)?
    } else {
        let results = pipeline::solve_units(
            estimation,
            prepared.model.as_ref(),
            &preds,
            config.solver,
            &config.params,
            &config.fast,
            &units,
            config.workers,
        )?;
        (results, Vec::new())
    };
    let (solutions, failures) = pipeline::partition_solutions(results);

    let mut manifest = Manifest::new(CommandConfig::Match(config.clone()));
    if config.verify_oracle {
        manifest.oracle_agreement = Some(verify_against_oracle(
            estimation,
            &preds,
            &config.params,
            &solutions,
        )?);
    }

    let mut estimates: Vec<EffectEstimate> = Vec::new();
    let mut estimate_failures: Vec<String> = Vec::new();
    if let Some(variant) = config.variant.ite_variant() {
        for (unit, solution) in &solutions {
            if config.variant == VariantSpec::TauB && !estimation.is_treated(*unit) {
                continue;
            }
            match ite(*unit, &solution.group, estimation, variant) {
                Ok(est) => estimates.push(est),
                Err(e) => estimate_failures.push(format!("unit {}: {e}", estimation.id(*unit))),
            }
        }
    }

    fs::create_dir_all(&config.out_dir)
        .map_err(|e| CliError::io(format!("{}: {e}", config.out_dir.display())))?;
    artifacts::write_boxes_csv(&config.out_dir.join("boxes.csv"), estimation, &solutions)?;
    artifacts::write_groups_csv(&config.out_dir.join("groups.csv"), estimation, &solutions)?;
    artifacts::write_members_csv(&config.out_dir.join("members.csv"), estimation, &solutions)?;
    if config.variant != VariantSpec::None {
        artifacts::write_estimates_csv(
            &config.out_dir.join("estimates.csv"),
            &estimates,
            &solver_label(config.solver),
        )?;
    }
    if config.trace {
        artifacts::write_trace_csv(&config.out_dir.join("trace.csv"), estimation, &traces)?;
    }
    manifest.write(&config.out_dir)?;

    for line in &estimate_failures {
        eprintln!("{line}");
    }
    pipeline::report_failures(estimation, solutions.len(), &failures)?;
    println!(
        "solved {}/{} units; artifacts in {}",
        solutions.len(),
        units.len(),
        config.out_dir.display()
    );
    Ok(())
}

pub fn solver_label(kind: SolverKind) -> String {
    match kind {
        SolverKind::Mip => "mip".into(),
        SolverKind::Fast => "fast".into(),
    }
}
