//! Greedy box growth. Starting from the owner's point, each step proposes
//! a one-axis expansion to the nearest outside unit per axis, scores every
//! proposal by predicted-outcome variation over the newly added slab, and
//! takes the calmest one. Growth stops once the group is satisfied and the
//! best available variation jumps past c times the previous step's.

use serde::{Deserialize, Serialize};

use super::{
    cost_vector, solve_each, BoxSolution, CostParams, ResolvedCosts, SolveError, SolverParams, UnitResults,
};
use crate::boxes::{HyperBox, MatchedGroup};
use crate::data::Dataset;
use crate::predictor::{Arm, OutcomeModel, Predictions, PredictorError};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FastParams {
    /// Stopping multiplier: growth continues while the step variation stays
    /// within c times the previous one (plus `eps_abs`). At least 1.
    pub c: f64,
    /// Grid resolution per axis when scoring a proposed slab. At least 2.
    pub grid_points: usize,
    /// Minimum control members, as in the exact solver.
    pub m: usize,
    /// Additive slack in the stopping rule so zero-variation regions keep
    /// expanding. `None` derives 1e−12·(prediction range)² from the data.
    pub eps_abs: Option<f64>,
    /// Restrict reported groups to the owner plus controls.
    pub controls_only: bool,
}

impl Default for FastParams {
    fn default() -> Self {
        FastParams {
            c: 2.0,
            grid_points: 5,
            m: 1,
            eps_abs: None,
            controls_only: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Down,
    Up,
}

/// One growth step for `--trace` style inspection.
#[derive(Debug, Clone)]
pub struct TraceStep {
    pub step: usize,
    pub axis: usize,
    pub variation: f64,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

/// The unit whose `axis` coordinate is nearest outside the box: the smaller
/// of the below/above gaps wins, ties toward below, then the lowest unit
/// index. `None` when no unit lies outside the box along this axis.
pub fn nearest_expansion_target(
    bbox: &HyperBox,
    axis: usize,
    data: &Dataset,
) -> Option<(usize, Direction)> {
    let (lo, hi) = (bbox.lower()[axis], bbox.upper()[axis]);
    let mut down: Option<(f64, usize)> = None;
    let mut up: Option<(f64, usize)> = None;
    for k in 0..data.n() {
        let v = data.value(k, axis);
        if v < lo {
            let gap = lo - v;
            if down.is_none_or(|(g, u)| gap < g || (gap == g && k < u)) {
                down = Some((gap, k));
            }
        } else if v > hi {
            let gap = v - hi;
            if up.is_none_or(|(g, u)| gap < g || (gap == g && k < u)) {
                up = Some((gap, k));
            }
        }
    }
    match (down, up) {
        (None, None) => None,
        (Some((_, k)), None) => Some((k, Direction::Down)),
        (None, Some((_, k))) => Some((k, Direction::Up)),
        (Some((gd, kd)), Some((gu, ku))) => {
            if gd <= gu {
                Some((kd, Direction::Down))
            } else {
                Some((ku, Direction::Up))
            }
        }
    }
}

fn population_variance(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n
}

/// Variation score of a proposed one-bound expansion: a regular grid of
/// `grid_points` per axis is laid over the added slab (the grown axis spans
/// only the new interval, the others their full box range), and the
/// population variances of f̂₀ and f̂₁ over the grid are summed. Zero-width
/// axes collapse to a single grid point; uniform replication would not
/// change the variance.
pub fn grid_variation(
    old: &HyperBox,
    proposed: &HyperBox,
    model: &dyn OutcomeModel,
    grid_points: usize,
) -> Result<f64, SolveError> {
    assert!(grid_points >= 2, "grid needs at least 2 points per axis");
    let p = old.p();
    assert_eq!(p, proposed.p());
    let mut grown: Option<(usize, f64, f64)> = None;
    for j in 0..p {
        let grew_down = proposed.lower()[j] < old.lower()[j];
        let grew_up = proposed.upper()[j] > old.upper()[j];
        if grew_down || grew_up {
            assert!(
                grown.is_none() && !(grew_down && grew_up),
                "proposed box must differ from the old one in exactly one bound"
            );
            grown = Some(if grew_down {
                (j, proposed.lower()[j], old.lower()[j])
            } else {
                (j, old.upper()[j], proposed.upper()[j])
            });
        }
    }
    let (grown_axis, slab_lo, slab_hi) = match grown {
        Some(g) => g,
        None => return Ok(0.0),
    };
    if slab_hi - slab_lo == 0.0 {
        return Ok(0.0);
    }

    let axes: Vec<Vec<f64>> = (0..p)
        .map(|j| {
            let (a, b) = if j == grown_axis {
                (slab_lo, slab_hi)
            } else {
                (proposed.lower()[j], proposed.upper()[j])
            };
            if b - a == 0.0 {
                vec![a]
            } else {
                (0..grid_points)
                    .map(|t| a + (b - a) * t as f64 / (grid_points - 1) as f64)
                    .collect()
            }
        })
        .collect();

    let mut f0s = Vec::new();
    let mut f1s = Vec::new();
    let mut idx = vec![0usize; p];
    let mut point = vec![0.0; p];
    'grid: loop {
        for j in 0..p {
            point[j] = axes[j][idx[j]];
        }
        f0s.push(model.predict(&point, Arm::Control)?);
        f1s.push(model.predict(&point, Arm::Treated)?);
        let mut j = 0;
        loop {
            if j == p {
                break 'grid;
            }
            idx[j] += 1;
            if idx[j] < axes[j].len() {
                break;
            }
            idx[j] = 0;
            j += 1;
        }
    }
    Ok(population_variance(&f0s) + population_variance(&f1s))
}

fn restricted_group(
    bbox: &HyperBox,
    data: &Dataset,
    controls_only: bool,
    owner: usize,
) -> MatchedGroup {
    if !controls_only {
        return bbox.mmg(data);
    }
    let members: Vec<usize> = (0..data.n())
        .filter(|&k| (k == owner || !data.is_treated(k)) && bbox.contains(data.row(k)))
        .collect();
    MatchedGroup::from_members(members, data)
}

fn is_satisfied(group: &MatchedGroup, owner_treated: bool, m: usize) -> bool {
    let opposite = if owner_treated {
        group.n_control() >= 1
    } else {
        group.n_treated() >= 1
    };
    group.n_control() >= m && opposite
}

fn auto_eps(preds: &Predictions) -> f64 {
    let range = |vals: &[f64]| -> f64 {
        let lo = vals.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        hi - lo
    };
    let r = range(preds.f0s()).max(range(preds.f1s()));
    1e-12 * r * r
}

fn grow(
    i: usize,
    data: &Dataset,
    model: &dyn OutcomeModel,
    preds: &Predictions,
    params: &FastParams,
    cost: &CostParams,
    mut trace: Option<&mut Vec<TraceStep>>,
) -> Result<BoxSolution, SolveError> {
    assert!(params.c >= 1.0, "stopping multiplier must be at least 1");
    assert!(params.m >= 1, "at least one control member is required");
    if !model.supports_point_queries() {
        return Err(PredictorError::PointQueriesUnsupported.into());
    }
    let eps = params.eps_abs.unwrap_or_else(|| auto_eps(preds));
    let owner_treated = data.is_treated(i);
    let mut bbox = HyperBox::degenerate_at(data, i);
    // Starting at zero means a box that is already satisfied, for example a
    // degenerate box sharing coordinates with enough controls, stops at the
    // first variation jump instead of being forced through one expansion.
    let mut v_prev = 0.0_f64;
    let mut step = 0usize;

    loop {
        let group = restricted_group(&bbox, data, params.controls_only, i);
        let satisfied = is_satisfied(&group, owner_treated, params.m);

        let mut best: Option<(f64, usize, usize)> = None;
        for axis in 0..data.p() {
            if let Some((target, _)) = nearest_expansion_target(&bbox, axis, data) {
                let proposed = bbox.expanded_to(axis, data.value(target, axis));
                let v = grid_variation(&bbox, &proposed, model, params.grid_points)?;
                if best.is_none_or(|(bv, _, _)| v < bv) {
                    best = Some((v, axis, target));
                }
            }
        }
        let (v_star, axis, target) = match best {
            Some(b) => b,
            None => {
                // Axes exhausted: the box already spans every unit.
                if satisfied {
                    break;
                }
                if group.n_control() < params.m {
                    return Err(SolveError::Infeasible {
                        unit: data.id(i).to_string(),
                        available: group.n_control(),
                        required: params.m,
                    });
                }
                return Err(SolveError::NoOppositeArm {
                    unit: data.id(i).to_string(),
                });
            }
        };
        if satisfied && v_star > params.c * v_prev + eps {
            break;
        }
        bbox = bbox.expanded_to(axis, data.value(target, axis));
        v_prev = v_star;
        step += 1;
        if let Some(trace) = trace.as_deref_mut() {
            trace.push(TraceStep {
                step,
                axis,
                variation: v_star,
                lower: bbox.lower().to_vec(),
                upper: bbox.upper().to_vec(),
            });
        }
    }

    let group = restricted_group(&bbox, data, params.controls_only, i);
    let resolved = ResolvedCosts::from(*cost);
    let cost_of = cost_vector(i, data.n(), preds, &resolved);
    Ok(BoxSolution::assemble(
        bbox,
        group,
        &cost_of,
        cost.beta,
        false,
    ))
}

/// Grows unit `i`'s box greedily. The returned solution is not marked
/// optimal; its objective is the same loss the exact solver reports, for
/// comparability.
pub fn fast_box(
    i: usize,
    data: &Dataset,
    model: &dyn OutcomeModel,
    preds: &Predictions,
    params: &FastParams,
    cost: &CostParams,
) -> Result<BoxSolution, SolveError> {
    grow(i, data, model, preds, params, cost, None)
}

/// Like [`fast_box`], also returning the per-step growth trace.
pub fn fast_box_traced(
    i: usize,
    data: &Dataset,
    model: &dyn OutcomeModel,
    preds: &Predictions,
    params: &FastParams,
    cost: &CostParams,
) -> Result<(BoxSolution, Vec<TraceStep>), SolveError> {
    let mut trace = Vec::new();
    let solution = grow(i, data, model, preds, params, cost, Some(&mut trace))?;
    Ok((solution, trace))
}

/// Grows boxes for every listed unit; same ordering and worker contract as
/// the exact solver's batch entry point.
pub fn fast_all(
    data: &Dataset,
    model: &dyn OutcomeModel,
    preds: &Predictions,
    params: &FastParams,
    cost: &CostParams,
    units: &[usize],
    workers: usize,
) -> UnitResults {
    solve_each(units, workers, |i| {
        fast_box(i, data, model, preds, params, cost)
    })
}

/// Fast-solver equivalent of the exact batch call with shared parameters:
/// honors the same normalization flag by resolving γ against `preds`.
pub fn fast_all_with(
    data: &Dataset,
    model: &dyn OutcomeModel,
    preds: &Predictions,
    solver_params: &SolverParams,
    fast_params: &FastParams,
    units: &[usize],
    workers: usize,
) -> Result<UnitResults, SolveError> {
    let resolved = solver_params.resolve(preds)?;
    let cost = CostParams {
        gamma0: resolved.gamma0,
        gamma1: resolved.gamma1,
        beta: resolved.beta,
    };
    let params = FastParams {
        m: solver_params.m,
        controls_only: solver_params.controls_only,
        ..*fast_params
    };
    Ok(fast_all(data, model, preds, &params, &cost, units, workers))
}
