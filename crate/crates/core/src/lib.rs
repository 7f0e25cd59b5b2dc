//! Adaptive hyper-box matching for observational causal inference.
//!
//! Each unit to be matched gets its own axis-aligned box in covariate space,
//! learned so that the outcome surfaces predicted by a surrogate model stay
//! nearly constant inside it. All units falling in the box form the unit's
//! matched group, from which individual and average treatment effects are
//! estimated. Two solvers are provided: an exact per-unit optimizer over
//! data-coordinate box edges and a fast greedy expansion that scores each
//! candidate expansion by predicted-outcome variation on a grid.
//!
//! The crate is organized around the pipeline:
//!
//! * [`data`] — datasets, CSV ingestion, categorical binarization, splits
//! * [`predictor`] — outcome surrogates: bagged trees, oracle, external files
//! * [`boxes`] — hyper-boxes, matched groups, error/variance diagnostics
//! * [`solver`] — exact and fast per-unit box construction
//! * [`estimation`] — counterfactual means, ITE/ATT/CATE estimators
//! * [`inference`] — per-unit confidence intervals
//! * [`tuning`] — loss normalization and validation-loss grid search
//! * [`simulation`] — synthetic data generation, truth tracking, baselines

pub mod boxes;
pub mod data;
pub mod estimation;
pub mod inference;
pub mod predictor;
pub mod seeds;
pub mod simulation;
pub mod solver;
pub mod tuning;
