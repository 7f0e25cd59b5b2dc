//! Per-unit box construction. `exact` searches data-coordinate box edges
//! for the true optimum of the matching objective; `fast` grows a box
//! greedily, scoring candidate expansions by predicted-outcome variation.
//! This module holds what both share: pair costs, the objective, candidate
//! preprocessing, solution records, and the parallel driver.

pub mod exact;
pub mod fast;

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::boxes::{BoxError, HyperBox, MatchedGroup};
use crate::data::Dataset;
use crate::predictor::{Predictions, PredictorError};
use crate::tuning::{normalize_gammas, TuneError};

#[derive(Debug, Error)]
pub enum SolveError {
    #[error("unit `{unit}`: {available} control candidates available, {required} required")]
    Infeasible {
        unit: String,
        available: usize,
        required: usize,
    },
    #[error("unit `{unit}`: no opposite-arm unit available to match against")]
    NoOppositeArm { unit: String },
    #[error(
        "instance too large for brute force: {candidates} candidates with {p} covariates \
         (limits: 25 candidates, 3 covariates)"
    )]
    TooLarge { candidates: usize, p: usize },
    #[error("sort preprocessing keeps {d} per arm but {m} controls are required; set d >= m")]
    SortTooNarrow { d: usize, m: usize },
    #[error(transparent)]
    Predictor(#[from] PredictorError),
    #[error(transparent)]
    Normalize(#[from] TuneError),
    #[error(transparent)]
    Box(#[from] BoxError),
}

/// Weights of the three objective components: γ₁ and γ₀ price prediction
/// drift between the owner and a member on the treated and control
/// surfaces; β rewards each member captured.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CostParams {
    pub gamma0: f64,
    pub gamma1: f64,
    pub beta: f64,
}

impl Default for CostParams {
    fn default() -> Self {
        CostParams {
            gamma0: 1.0,
            gamma1: 1.0,
            beta: 1.0,
        }
    }
}

/// Candidate reduction applied before the exact search.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum Preprocess {
    /// Every unit is a candidate.
    None,
    /// Keep the d treated and d control candidates cheapest by pair cost.
    SortClosest { d: usize },
    /// Keep candidates with pair cost at most eps.
    ThresholdCost { eps: f64 },
    /// Keep candidates within eps of the owner on every coordinate.
    ThresholdCoord { eps: f64 },
}

/// Which algorithm builds the boxes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverKind {
    /// Exact optimization of the box objective.
    Mip,
    /// Greedy variation-guided growth.
    Fast,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverParams {
    pub cost: CostParams,
    /// Minimum control members per box. A control owner counts toward it.
    pub m: usize,
    /// Rescale γ₀, γ₁ by the prediction-magnitude variances over the units
    /// being matched, so the weights are comparable across surfaces.
    pub normalize: bool,
    pub preprocess: Preprocess,
    /// Restrict groups to the owner plus control units: other treated
    /// units neither enter the loss nor the reported group.
    pub controls_only: bool,
}

impl Default for SolverParams {
    fn default() -> Self {
        SolverParams {
            cost: CostParams::default(),
            m: 1,
            normalize: false,
            preprocess: Preprocess::None,
            controls_only: false,
        }
    }
}

/// Cost weights after normalization has been applied once per dataset.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResolvedCosts {
    pub gamma0: f64,
    pub gamma1: f64,
    pub beta: f64,
}

impl From<CostParams> for ResolvedCosts {
    fn from(cost: CostParams) -> Self {
        ResolvedCosts {
            gamma0: cost.gamma0,
            gamma1: cost.gamma1,
            beta: cost.beta,
        }
    }
}

impl SolverParams {
    /// Applies γ normalization (when requested) against the predictions of
    /// the units being matched. Call once per dataset, not per unit.
    pub fn resolve(&self, preds: &Predictions) -> Result<ResolvedCosts, SolveError> {
        if let Preprocess::SortClosest { d } = self.preprocess {
            if d < self.m {
                return Err(SolveError::SortTooNarrow { d, m: self.m });
            }
        }
        let (gamma0, gamma1) = if self.normalize {
            normalize_gammas(self.cost.gamma0, self.cost.gamma1, preds)?
        } else {
            (self.cost.gamma0, self.cost.gamma1)
        };
        Ok(ResolvedCosts {
            gamma0,
            gamma1,
            beta: self.cost.beta,
        })
    }
}

/// γ₁|f̂₁(xᵢ)−f̂₁(x_k)| + γ₀|f̂₀(xᵢ)−f̂₀(x_k)|: the loss of admitting k
/// into i's box.
pub fn unit_cost(i: usize, k: usize, preds: &Predictions, gamma0: f64, gamma1: f64) -> f64 {
    gamma1 * (preds.f1(i) - preds.f1(k)).abs() + gamma0 * (preds.f0(i) - preds.f0(k)).abs()
}

/// All pair costs for one owner, indexed by unit.
pub(crate) fn cost_vector(
    i: usize,
    n: usize,
    preds: &Predictions,
    costs: &ResolvedCosts,
) -> Vec<f64> {
    (0..n)
        .map(|k| unit_cost(i, k, preds, costs.gamma0, costs.gamma1))
        .collect()
}

/// Σ member costs − β·|group|. Summed in ascending member order: both the
/// exact solver and the brute-force oracle evaluate candidates through this
/// one path, so equal member sets give bitwise-equal objectives.
pub fn group_objective(members: &[usize], cost_of: &[f64], beta: f64) -> f64 {
    let total: f64 = members.iter().map(|&k| cost_of[k]).sum();
    total - beta * members.len() as f64
}

/// One unit's solved box. `optimal` is true only for the exact solver.
#[derive(Debug, Clone)]
pub struct BoxSolution {
    pub hyperbox: HyperBox,
    pub group: MatchedGroup,
    pub objective: f64,
    pub optimal: bool,
    /// Pair cost of every member, keyed by unit index.
    pub per_unit_costs: BTreeMap<usize, f64>,
}

/// Batch solve output: one entry per requested unit, in request order.
/// Infeasible units keep their error instead of aborting the batch.
pub type UnitResults = Vec<(usize, Result<BoxSolution, SolveError>)>;

impl BoxSolution {
    pub(crate) fn assemble(
        hyperbox: HyperBox,
        group: MatchedGroup,
        cost_of: &[f64],
        beta: f64,
        optimal: bool,
    ) -> Self {
        let objective = group_objective(group.members(), cost_of, beta);
        let per_unit_costs = group.members().iter().map(|&k| (k, cost_of[k])).collect();
        BoxSolution {
            hyperbox,
            group,
            objective,
            optimal,
            per_unit_costs,
        }
    }
}

/// Candidate units for owner `i`'s box, ascending, owner always included.
/// Controls among the survivors must number at least m or the unit is
/// reported infeasible before any solving.
pub fn preprocess_candidates(
    i: usize,
    data: &Dataset,
    preds: &Predictions,
    params: &SolverParams,
    costs: &ResolvedCosts,
) -> Result<Vec<usize>, SolveError> {
    let n = data.n();
    let eligible = |k: usize| -> bool {
        k == i || !params.controls_only || !data.is_treated(k)
    };
    let mut kept: Vec<usize> = match params.preprocess {
        Preprocess::None => (0..n).filter(|&k| eligible(k)).collect(),
        Preprocess::SortClosest { d } => {
            let mut treated: Vec<(f64, usize)> = Vec::new();
            let mut control: Vec<(f64, usize)> = Vec::new();
            for k in (0..n).filter(|&k| k != i && eligible(k)) {
                let cost = unit_cost(i, k, preds, costs.gamma0, costs.gamma1);
                if data.is_treated(k) {
                    treated.push((cost, k));
                } else {
                    control.push((cost, k));
                }
            }
            let take = |mut v: Vec<(f64, usize)>| -> Vec<usize> {
                v.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
                v.truncate(d);
                v.into_iter().map(|(_, k)| k).collect()
            };
            let mut kept = take(treated);
            kept.extend(take(control));
            kept.push(i);
            kept
        }
        Preprocess::ThresholdCost { eps } => (0..n)
            .filter(|&k| {
                eligible(k)
                    && (k == i || unit_cost(i, k, preds, costs.gamma0, costs.gamma1) <= eps)
            })
            .collect(),
        Preprocess::ThresholdCoord { eps } => {
            let xi = data.row(i);
            (0..n)
                .filter(|&k| {
                    eligible(k)
                        && (k == i
                            || data
                                .row(k)
                                .iter()
                                .zip(xi)
                                .all(|(&xk, &x)| (xk - x).abs() <= eps))
                })
                .collect()
        }
    };
    kept.sort_unstable();
    kept.dedup();

    let controls = kept.iter().filter(|&&k| !data.is_treated(k)).count();
    if controls < params.m {
        return Err(SolveError::Infeasible {
            unit: data.id(i).to_string(),
            available: controls,
            required: params.m,
        });
    }
    Ok(kept)
}

/// Runs `solve_one` for every listed unit, in parallel when `workers` != 1,
/// preserving unit order. `workers` = 0 uses the process-wide pool.
/// Per-unit results are independent of worker count.
pub fn solve_each<F>(
    units: &[usize],
    workers: usize,
    solve_one: F,
) -> Vec<(usize, Result<BoxSolution, SolveError>)>
where
    F: Fn(usize) -> Result<BoxSolution, SolveError> + Sync,
{
    let run = || {
        units
            .par_iter()
            .map(|&i| (i, solve_one(i)))
            .collect::<Vec<_>>()
    };
    if workers == 0 {
        run()
    } else {
        rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build()
            .expect("building a rayon pool cannot fail with these options")
            .install(run)
    }
}
