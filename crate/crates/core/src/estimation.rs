//! Effect estimators over matched groups: counterfactual means, per-unit
//! effects in both variants, ATT, CATE slices, and the mutual-membership
//! overlap diagnostic.

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::boxes::MatchedGroup;
use crate::data::Dataset;

#[derive(Debug, Error)]
pub enum EstimationError {
    #[error("dataset has no outcome column; nothing to average")]
    MissingOutcomes,
    #[error("unit `{unit}`: no control members to estimate the untreated outcome")]
    NoControls { unit: String },
    #[error("unit `{unit}`: no treated members to estimate the treated outcome")]
    NoTreated { unit: String },
    #[error("unit `{unit}` is untreated; the observed-outcome variant needs a treated unit")]
    NotTreated { unit: String },
    #[error("no estimates to average")]
    Empty,
    #[error("no estimates fall in the requested `{covariate}` slice")]
    EmptySlice { covariate: String },
}

/// How a unit's effect is formed: `TauA` differences the two group means,
/// `TauB` differences the treated unit's own outcome against the control
/// mean.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IteVariant {
    TauA,
    TauB,
}

impl fmt::Display for IteVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            IteVariant::TauA => "tau_a",
            IteVariant::TauB => "tau_b",
        })
    }
}

impl FromStr for IteVariant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "tau_a" => Ok(IteVariant::TauA),
            "tau_b" => Ok(IteVariant::TauB),
            other => Err(format!("unknown effect variant `{other}`; use tau_a or tau_b")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EffectEstimate {
    pub unit: usize,
    pub unit_id: String,
    /// Mean control-member outcome; absent when the group has no controls.
    pub y0_hat: Option<f64>,
    /// Mean treated-member outcome; absent when the group has no treated.
    pub y1_hat: Option<f64>,
    pub ite: f64,
    pub variant: IteVariant,
    pub group_size: usize,
    pub n_c: usize,
    pub n_t: usize,
}

fn arm_mean(members: impl Iterator<Item = usize>, ys: &[f64]) -> Option<f64> {
    let mut sum = 0.0;
    let mut n = 0usize;
    for k in members {
        sum += ys[k];
        n += 1;
    }
    (n > 0).then(|| sum / n as f64)
}

/// Mean observed outcome of the group's control members and of its treated
/// members (the owner included). A side with no members comes back absent
/// rather than defaulted.
pub fn estimate_counterfactuals(
    group: &MatchedGroup,
    data: &Dataset,
) -> Result<(Option<f64>, Option<f64>), EstimationError> {
    let ys = data.outcomes().ok_or(EstimationError::MissingOutcomes)?;
    let y0 = arm_mean(group.control_members(data), ys);
    let y1 = arm_mean(group.treated_members(data), ys);
    Ok((y0, y1))
}

/// Per-unit effect from `unit`'s matched group.
pub fn ite(
    unit: usize,
    group: &MatchedGroup,
    data: &Dataset,
    variant: IteVariant,
) -> Result<EffectEstimate, EstimationError> {
    let ys = data.outcomes().ok_or(EstimationError::MissingOutcomes)?;
    let (y0_hat, y1_hat) = estimate_counterfactuals(group, data)?;
    let unit_id = data.id(unit).to_string();
    let y0 = y0_hat.ok_or_else(|| EstimationError::NoControls {
        unit: unit_id.clone(),
    })?;
    let ite = match variant {
        IteVariant::TauA => {
            let y1 = y1_hat.ok_or_else(|| EstimationError::NoTreated {
                unit: unit_id.clone(),
            })?;
            y1 - y0
        }
        IteVariant::TauB => {
            if !data.is_treated(unit) {
                return Err(EstimationError::NotTreated { unit: unit_id });
            }
            ys[unit] - y0
        }
    };
    Ok(EffectEstimate {
        unit,
        unit_id,
        y0_hat,
        y1_hat,
        ite,
        variant,
        group_size: group.len(),
        n_c: group.n_control(),
        n_t: group.n_treated(),
    })
}

/// Average effect on the treated, with the number of treated units whose
/// solve failed carried alongside.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AttEstimate {
    pub att: f64,
    pub n_used: usize,
    pub n_excluded: usize,
}

/// Mean effect over successfully estimated treated units. `n_excluded`
/// counts treated units dropped for infeasibility.
pub fn att(estimates: &[EffectEstimate], n_excluded: usize) -> Result<AttEstimate, EstimationError> {
    if estimates.is_empty() {
        return Err(EstimationError::Empty);
    }
    let sum: f64 = estimates.iter().map(|e| e.ite).sum();
    Ok(AttEstimate {
        att: sum / estimates.len() as f64,
        n_used: estimates.len(),
        n_excluded,
    })
}

/// Which covariate values a CATE slice keeps: exact equality for discrete
/// columns, a half-open bin [lo, hi) for continuous ones.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CovariateSlice {
    Equal(f64),
    Bin { lo: f64, hi: f64 },
}

impl CovariateSlice {
    fn keeps(&self, v: f64) -> bool {
        match *self {
            CovariateSlice::Equal(value) => v == value,
            CovariateSlice::Bin { lo, hi } => lo <= v && v < hi,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CateEstimate {
    pub cate: f64,
    pub n: usize,
}

/// Mean effect over the estimates whose unit's `column` value falls in the
/// slice.
pub fn cate_by_value(
    estimates: &[EffectEstimate],
    data: &Dataset,
    column: usize,
    slice: CovariateSlice,
) -> Result<CateEstimate, EstimationError> {
    let kept: Vec<f64> = estimates
        .iter()
        .filter(|e| slice.keeps(data.value(e.unit, column)))
        .map(|e| e.ite)
        .collect();
    if kept.is_empty() {
        return Err(EstimationError::EmptySlice {
            covariate: data.columns()[column].name.clone(),
        });
    }
    Ok(CateEstimate {
        cate: kept.iter().sum::<f64>() / kept.len() as f64,
        n: kept.len(),
    })
}

/// Overlap between two groups for the same owner: the larger of the two
/// containment proportions, 1 when either contains the other.
pub fn mutual_membership_rate(a: &MatchedGroup, b: &MatchedGroup) -> f64 {
    debug_assert!(!a.is_empty() && !b.is_empty());
    let shared = a.members().iter().filter(|&&k| b.contains(k)).count() as f64;
    (shared / a.len() as f64).max(shared / b.len() as f64)
}
