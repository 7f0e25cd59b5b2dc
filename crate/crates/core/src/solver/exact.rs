//! Exact box optimization. Any optimal box can be shrunk to data
//! coordinates without changing membership, so searching windows whose
//! edges sit on candidate coordinates — each containing the owner — covers
//! the full problem. The search enumerates windows axis by axis, pruning
//! subtrees that cannot beat the incumbent; every candidate it keeps is
//! re-evaluated through the same canonical objective path the brute-force
//! oracle uses, so the two agree exactly, ties included.

use super::{
    cost_vector, group_objective, preprocess_candidates, solve_each, BoxSolution, ResolvedCosts,
    SolveError, SolverParams, UnitResults,
};
use crate::boxes::{HyperBox, MatchedGroup};
use crate::data::Dataset;
use crate::predictor::Predictions;

/// Winner so far, ordered by (objective, tightened volume, lexicographic
/// bounds). Equal member sets produce bitwise-equal objectives because both
/// solver and oracle sum costs in ascending member order.
struct Incumbent {
    objective: f64,
    volume: f64,
    hyperbox: HyperBox,
    members: Vec<usize>,
}

fn lex_less(a: &[f64], b: &[f64]) -> bool {
    for (x, y) in a.iter().zip(b) {
        if x < y {
            return true;
        }
        if x > y {
            return false;
        }
    }
    false
}

impl Incumbent {
    fn better_than(&self, other: &Incumbent) -> bool {
        if self.objective != other.objective {
            return self.objective < other.objective;
        }
        if self.volume != other.volume {
            return self.volume < other.volume;
        }
        if self.hyperbox.lower() != other.hyperbox.lower() {
            return lex_less(self.hyperbox.lower(), other.hyperbox.lower());
        }
        lex_less(self.hyperbox.upper(), other.hyperbox.upper())
    }
}

/// Canonical evaluation of one member set: recomputed objective and the
/// tightened (bounding-box) representation used for tie-breaking.
fn evaluate(
    owner: usize,
    data: &Dataset,
    members: &[usize],
    cost_of: &[f64],
    beta: f64,
) -> Incumbent {
    let objective = group_objective(members, cost_of, beta);
    let degenerate = HyperBox::degenerate_at(data, owner);
    let hyperbox = degenerate.tightened(data, members);
    Incumbent {
        objective,
        volume: hyperbox.volume(),
        hyperbox,
        members: members.to_vec(),
    }
}

fn challenge(best: &mut Option<Incumbent>, candidate: Incumbent) {
    match best {
        Some(cur) if !candidate.better_than(cur) => {}
        _ => *best = Some(candidate),
    }
}

/// Units of `active` grouped by their coordinate on `axis`, ascending.
/// Returns distinct values, unit groups per value, and the owner's group.
fn group_by_axis(
    data: &Dataset,
    active: &[usize],
    axis: usize,
    owner: usize,
) -> (Vec<f64>, Vec<Vec<usize>>, usize) {
    let mut order = active.to_vec();
    order.sort_by(|&a, &b| {
        data.value(a, axis)
            .partial_cmp(&data.value(b, axis))
            .unwrap()
            .then(a.cmp(&b))
    });
    let mut values: Vec<f64> = Vec::new();
    let mut groups: Vec<Vec<usize>> = Vec::new();
    for k in order {
        let v = data.value(k, axis);
        if values.last() != Some(&v) {
            values.push(v);
            groups.push(Vec::new());
        }
        groups.last_mut().unwrap().push(k);
    }
    let owner_value = data.value(owner, axis);
    let owner_group = values
        .iter()
        .position(|&v| v == owner_value)
        .expect("owner is always in the active set");
    (values, groups, owner_group)
}

struct Search<'a> {
    data: &'a Dataset,
    owner: usize,
    cost_of: &'a [f64],
    score_of: Vec<f64>,
    beta: f64,
    m: usize,
    /// Pruning margin: subtrees are cut only when provably worse than the
    /// incumbent by more than accumulated float error, so exact ties are
    /// never lost.
    slack: f64,
    best: Option<Incumbent>,
}

impl Search<'_> {
    fn best_score(&self) -> f64 {
        // Score form of the objective: maximizing Σ (β − cost) over members
        // is minimizing the objective.
        self.best.as_ref().map_or(f64::NEG_INFINITY, |b| -b.objective)
    }

    fn recurse(&mut self, axis: usize, active: &[usize]) {
        if axis + 1 == self.data.p() {
            self.scan_last_axis(active, axis);
            return;
        }
        let (_, groups, o) = group_by_axis(self.data, active, axis, self.owner);
        let r = groups.len();
        // Per value-group: positive-score mass (owner excluded) and control
        // count, so window totals update in O(group) as windows extend.
        let group_stats: Vec<(f64, usize)> = groups
            .iter()
            .map(|g| {
                let pos: f64 = g
                    .iter()
                    .filter(|&&k| k != self.owner)
                    .map(|&k| self.score_of[k].max(0.0))
                    .sum();
                let ctrl = g.iter().filter(|&&k| !self.data.is_treated(k)).count();
                (pos, ctrl)
            })
            .collect();
        let mut base: Vec<usize> = Vec::new();
        let mut base_pos = 0.0;
        let mut base_ctrl = 0usize;
        for lo in (0..=o).rev() {
            base.extend_from_slice(&groups[lo]);
            base_pos += group_stats[lo].0;
            base_ctrl += group_stats[lo].1;
            let mut win = base.clone();
            let mut pos = base_pos;
            let mut ctrl = base_ctrl;
            self.descend(axis, &win, pos, ctrl);
            for hi in o + 1..r {
                win.extend_from_slice(&groups[hi]);
                pos += group_stats[hi].0;
                ctrl += group_stats[hi].1;
                self.descend(axis, &win, pos, ctrl);
            }
        }
    }

    fn descend(&mut self, axis: usize, window: &[usize], pos_sum: f64, ctrl: usize) {
        if ctrl < self.m {
            // No sub-window on later axes can regain controls.
            return;
        }
        // Upper bound on any achievable score inside this window: the owner
        // plus every positive-score unit.
        let bound = self.score_of[self.owner] + pos_sum;
        if bound < self.best_score() - self.slack {
            return;
        }
        self.recurse(axis + 1, window);
    }

    #[allow(clippy::needless_range_loop)]
    fn scan_last_axis(&mut self, active: &[usize], axis: usize) {
        let (_, groups, o) = group_by_axis(self.data, active, axis, self.owner);
        let r = groups.len();
        let group_stats: Vec<(f64, usize)> = groups
            .iter()
            .map(|g| {
                let s: f64 = g.iter().map(|&k| self.score_of[k]).sum();
                let c = g.iter().filter(|&&k| !self.data.is_treated(k)).count();
                (s, c)
            })
            .collect();
        let mut base_s = 0.0;
        let mut base_ctrl = 0usize;
        for lo in (0..=o).rev() {
            base_s += group_stats[lo].0;
            base_ctrl += group_stats[lo].1;
            let mut s = base_s;
            let mut ctrl = base_ctrl;
            self.take_window(&groups, lo, o, s, ctrl);
            for hi in o + 1..r {
                s += group_stats[hi].0;
                ctrl += group_stats[hi].1;
                self.take_window(&groups, lo, hi, s, ctrl);
            }
        }
    }

    fn take_window(
        &mut self,
        groups: &[Vec<usize>],
        lo: usize,
        hi: usize,
        score: f64,
        ctrl: usize,
    ) {
        if ctrl < self.m || score < self.best_score() - self.slack {
            return;
        }
        let mut members: Vec<usize> = groups[lo..=hi].iter().flatten().copied().collect();
        members.sort_unstable();
        let candidate = evaluate(self.owner, self.data, &members, self.cost_of, self.beta);
        challenge(&mut self.best, candidate);
    }
}

fn solve_unit(
    i: usize,
    data: &Dataset,
    preds: &Predictions,
    params: &SolverParams,
    costs: &ResolvedCosts,
) -> Result<BoxSolution, SolveError> {
    let candidates = preprocess_candidates(i, data, preds, params, costs)?;
    let cost_of = cost_vector(i, data.n(), preds, costs);
    let score_of: Vec<f64> = cost_of.iter().map(|&c| costs.beta - c).collect();
    let scale: f64 = candidates.iter().map(|&k| score_of[k].abs()).sum();
    let mut search = Search {
        data,
        owner: i,
        cost_of: &cost_of,
        score_of,
        beta: costs.beta,
        m: params.m,
        slack: 1e-9 * (1.0 + scale),
        best: None,
    };
    search.recurse(0, &candidates);
    let best = search
        .best
        .expect("the all-candidates window is feasible after preprocessing");
    let group = MatchedGroup::from_members(best.members, data);
    Ok(BoxSolution::assemble(
        best.hyperbox,
        group,
        &cost_of,
        costs.beta,
        true,
    ))
}

/// Globally optimal box for unit `i` over the preprocessed candidate set.
/// Ties in objective go to the smaller tightened volume, then to the
/// lexicographically smallest bounds.
pub fn solve_exact(
    i: usize,
    data: &Dataset,
    preds: &Predictions,
    params: &SolverParams,
) -> Result<BoxSolution, SolveError> {
    let costs = params.resolve(preds)?;
    solve_unit(i, data, preds, params, &costs)
}

/// Solves every listed unit. Infeasible units are reported in place without
/// aborting the rest; results are identical for any worker count.
pub fn solve_all(
    data: &Dataset,
    preds: &Predictions,
    params: &SolverParams,
    units: &[usize],
    workers: usize,
) -> Result<UnitResults, SolveError> {
    let costs = params.resolve(preds)?;
    Ok(solve_each(units, workers, |i| {
        solve_unit(i, data, preds, params, &costs)
    }))
}

/// Exhaustive reference: enumerates every box with bounds at candidate
/// coordinates and picks the best under the same tie-break. Test and
/// verification use only; refuses instances big enough to blow up.
pub fn brute_force_oracle(
    i: usize,
    data: &Dataset,
    preds: &Predictions,
    params: &SolverParams,
) -> Result<BoxSolution, SolveError> {
    let costs = params.resolve(preds)?;
    let candidates = preprocess_candidates(i, data, preds, params, &costs)?;
    if candidates.len() > 25 || data.p() > 3 {
        return Err(SolveError::TooLarge {
            candidates: candidates.len(),
            p: data.p(),
        });
    }
    let cost_of = cost_vector(i, data.n(), preds, &costs);
    let p = data.p();

    let mut axis_values: Vec<Vec<f64>> = Vec::with_capacity(p);
    let mut owner_pos: Vec<usize> = Vec::with_capacity(p);
    for j in 0..p {
        let mut values: Vec<f64> = candidates.iter().map(|&k| data.value(k, j)).collect();
        values.sort_by(|a, b| a.partial_cmp(b).unwrap());
        values.dedup();
        owner_pos.push(
            values
                .iter()
                .position(|&v| v == data.value(i, j))
                .expect("owner coordinate is a candidate coordinate"),
        );
        axis_values.push(values);
    }

    // Odometer over per-axis windows (lo <= owner <= hi).
    let mut lo = owner_pos.clone();
    let mut hi = owner_pos.clone();
    let mut best: Option<Incumbent> = None;
    loop {
        let inside = |k: usize| -> bool {
            (0..p).all(|j| {
                let v = data.value(k, j);
                axis_values[j][lo[j]] <= v && v <= axis_values[j][hi[j]]
            })
        };
        let members: Vec<usize> = candidates.iter().copied().filter(|&k| inside(k)).collect();
        let ctrl = members.iter().filter(|&&k| !data.is_treated(k)).count();
        if ctrl >= params.m {
            let candidate = evaluate(i, data, &members, &cost_of, costs.beta);
            challenge(&mut best, candidate);
        }

        // Advance: hi sweeps up, then lo sweeps down, axis by axis.
        let mut axis = 0;
        loop {
            if axis == p {
                let best = best.expect("full window is feasible after preprocessing");
                let group = MatchedGroup::from_members(best.members, data);
                return Ok(BoxSolution::assemble(
                    best.hyperbox,
                    group,
                    &cost_of,
                    costs.beta,
                    true,
                ));
            }
            if hi[axis] + 1 < axis_values[axis].len() {
                hi[axis] += 1;
                break;
            }
            if lo[axis] > 0 {
                lo[axis] -= 1;
                hi[axis] = owner_pos[axis];
                break;
            }
            lo[axis] = owner_pos[axis];
            hi[axis] = owner_pos[axis];
            axis += 1;
        }
    }
}

/// Runs both the search and the oracle and reports whether they returned
/// the same objective and matched group. Small instances only.
pub fn agrees_with_oracle(
    i: usize,
    data: &Dataset,
    preds: &Predictions,
    params: &SolverParams,
) -> Result<bool, SolveError> {
    let fast_path = solve_exact(i, data, preds, params)?;
    let reference = brute_force_oracle(i, data, preds, params)?;
    Ok(fast_path.objective == reference.objective && fast_path.group == reference.group)
}
