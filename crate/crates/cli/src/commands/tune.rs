use std::fs;
use std::path::PathBuf;

use clap::Args;

use ahb_core::predictor::EnsembleConfig;
use ahb_core::tuning::{tune, TuneError, TuneSetting};

use crate::artifacts;
use crate::config::{read_json, CommandConfig, Manifest, PredictorSpec, TuneBest, TuneConfig};
use crate::error::CliError;
use crate::pipeline;

#[derive(Debug, Args)]
pub struct TuneArgs {
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
    /// JSON array of candidate settings (solver, params, fast).
    #[arg(long)]
    pub grid_file: Option<PathBuf>,
    #[arg(long, default_value = "builtin")]
    pub predictor: PredictorSpec,
    #[arg(long)]
    pub scenario: Option<PathBuf>,
    #[arg(long, default_value_t = 0.5)]
    pub train_fraction: f64,
    /// Share of units scored by the grid search (builtin predictor).
    #[arg(long, default_value_t = 0.25)]
    pub validation_fraction: f64,
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

fn resolve_config(args: TuneArgs) -> Result<TuneConfig, CliError> {
    if let Some(path) = &args.manifest {
        let manifest = Manifest::load(path)?;
        let CommandConfig::Tune(mut config) = manifest.command else {
            return Err(CliError::config("manifest does not describe a tune run"));
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
    let grid_file = args
        .grid_file
        .ok_or_else(|| CliError::config("--grid-file is required"))?;
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
    Ok(TuneConfig {
        data,
        schema,
        grid_file,
        predictor: args.predictor,
        scenario: args.scenario,
        train_fraction: args.train_fraction,
        validation_fraction: args.validation_fraction,
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

pub fn run(args: TuneArgs) -> Result<(), CliError> {
    let config = resolve_config(args)?;
    execute(&config)
}

pub fn execute(config: &TuneConfig) -> Result<(), CliError> {
    let grid: Vec<TuneSetting> = read_json(&config.grid_file)?;
    let data = pipeline::load_dataset(&config.data, &config.schema)?;
    let prepared = pipeline::prepare_model(
        data,
        &config.predictor,
        config.scenario.as_deref(),
        config.train_fraction,
        config.validation_fraction,
        &config.ensemble,
        config.seed,
    )?;
    let validation = match (&prepared.validation, &config.predictor) {
        (Some(v), _) => v,
        (None, PredictorSpec::Builtin) => {
            return Err(CliError::config(
                "tuning with the builtin predictor needs --validation-fraction above zero",
            ))
        }
        // Id-keyed and oracle predictors never saw these outcomes, so the
        // whole dataset can serve as validation.
        (None, _) => &prepared.estimation,
    };

    let report = tune(&grid, validation, prepared.model.as_ref(), config.workers).map_err(
        |e| match e {
            TuneError::AllInfeasible => {
                CliError::AllInfeasible("every grid setting left all validation units unsolved".into())
            }
            other => CliError::config(other.to_string()),
        },
    )?;

    fs::create_dir_all(&config.out_dir)
        .map_err(|e| CliError::io(format!("{}: {e}", config.out_dir.display())))?;
    artifacts::write_tuning_csv(&config.out_dir.join("tuning.csv"), &grid, &report.losses)?;
    let mut manifest = Manifest::new(CommandConfig::Tune(config.clone()));
    manifest.best = Some(TuneBest {
        index: report.best_index,
        setting: report.best,
        loss: report.losses[report.best_index].loss,
        n_infeasible: report.losses[report.best_index].n_infeasible,
    });
    manifest.write(&config.out_dir)?;
    println!(
        "best grid entry {} of {}: loss {}; artifacts in {}",
        report.best_index,
        grid.len(),
        report.losses[report.best_index].loss,
        config.out_dir.display()
    );
    Ok(())
}
