//! Synthetic data generation with recorded ground truth, the MAE/ATT
//! evaluation metric, and the nearest-neighbor baseline estimators used for
//! comparison studies.

use std::fmt;
use std::str::FromStr;

use rand::distributions::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::Normal;
use thiserror::Error;

use crate::data::{ColumnMeta, DataError, Dataset};
use crate::estimation::{EffectEstimate, EstimationError, IteVariant};
use crate::predictor::{Arm, OracleModel, OutcomeModel, PredictorError};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("covariate roles sum to {got}, but there are {expected} covariates")]
    RoleMismatch { expected: usize, got: usize },
    #[error("function kind `{kind}` takes no covariates, but {got} were assigned to it")]
    TakesNoCovariates { kind: String, got: usize },
    #[error("function kind `{kind}` needs at least one covariate")]
    NeedsCovariates { kind: String },
    #[error("binary function kind works on exactly 1 covariate, got {got}")]
    BinaryTakesOne { got: usize },
    #[error("mixed function kind needs an even covariate count of at least 2, got {got}")]
    MixedNeedsPairs { got: usize },
    #[error("not enough {kind} covariates: {needed} needed, {available} left")]
    NotEnoughOfKind {
        kind: String,
        needed: usize,
        available: usize,
    },
    #[error("gamma has {got} entries, but there are {expected} covariates")]
    BadGammaLength { expected: usize, got: usize },
    #[error("gamma entries must be finite, got {0}")]
    BadGamma(f64),
    #[error("noise standard deviation must be finite and nonnegative, got {0}")]
    BadSigma(f64),
    #[error("{got} covariates requested; the generator caps out at {max}")]
    TooManyCovariates { got: usize, max: usize },
    #[error("cannot simulate 0 units")]
    Empty,
    #[error("method needs an outcome model")]
    NeedsModel,
    #[error("method needs the simulation ground truth")]
    NeedsTruth,
    #[error("dataset has no outcome column")]
    MissingOutcomes,
    #[error("unit id `{0}` does not name a simulated unit")]
    UnknownSimUnit(String),
    #[error("{available} controls available, {needed} needed")]
    TooFewControls { available: usize, needed: usize },
    #[error("covariate covariance stayed singular after regularization")]
    SingularCovariance,
    #[error(transparent)]
    Estimation(#[from] EstimationError),
    #[error(transparent)]
    Predictor(#[from] PredictorError),
    #[error(transparent)]
    Data(#[from] DataError),
}

/// The function library for confounding (g) and treatment-effect (h)
/// surfaces. Each kind applies to its designated covariates only.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FunctionKind {
    /// 0 everywhere; takes no covariates.
    None,
    /// 1 everywhere; takes no covariates.
    Const,
    /// Count of designated continuous covariates above 0.5.
    Box,
    /// Sum of designated continuous covariates.
    Linear,
    /// Sum of squared designated continuous covariates.
    Quad,
    /// The one designated binary covariate.
    Binary,
    /// Sum over designated continuous/binary covariate pairs.
    Mixed,
}

impl FunctionKind {
    /// Evaluates the kind over its designated covariate values.
    pub fn eval(&self, values: &[f64]) -> f64 {
        match self {
            FunctionKind::None => 0.0,
            FunctionKind::Const => 1.0,
            FunctionKind::Box => values.iter().filter(|&&v| 0.5 < v).count() as f64,
            FunctionKind::Linear | FunctionKind::Mixed => values.iter().sum(),
            FunctionKind::Quad => values.iter().map(|v| v * v).sum(),
            FunctionKind::Binary => values[0],
        }
    }
}

impl fmt::Display for FunctionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FunctionKind::None => "none",
            FunctionKind::Const => "const",
            FunctionKind::Box => "box",
            FunctionKind::Linear => "linear",
            FunctionKind::Quad => "quad",
            FunctionKind::Binary => "binary",
            FunctionKind::Mixed => "mixed",
        })
    }
}

impl FromStr for FunctionKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "none" => Ok(FunctionKind::None),
            "const" => Ok(FunctionKind::Const),
            "box" => Ok(FunctionKind::Box),
            "linear" => Ok(FunctionKind::Linear),
            "quad" => Ok(FunctionKind::Quad),
            "binary" => Ok(FunctionKind::Binary),
            "mixed" => Ok(FunctionKind::Mixed),
            other => Err(format!("unknown function kind `{other}`")),
        }
    }
}

/// How the covariates split into the ones feeding g, the ones feeding h,
/// and distractors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoleSplit {
    pub confounding: usize,
    pub treatment: usize,
    pub irrelevant: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DgpConfig {
    /// Continuous covariates, drawn U(0,1), named x1, x2, ...
    pub p_c: usize,
    /// Binary covariates, drawn Bernoulli(0.5), named w1, w2, ...
    pub p_d: usize,
    pub roles: RoleSplit,
    pub g: FunctionKind,
    pub h: FunctionKind,
    /// Propensity coefficients over all covariates. Absent means 1 on the
    /// confounding covariates and 0 elsewhere.
    #[serde(default)]
    pub gamma: Option<Vec<f64>>,
    /// Outcome noise standard deviation.
    #[serde(default = "default_sigma")]
    pub sigma: f64,
    pub n: usize,
    pub seed: u64,
}

fn default_sigma() -> f64 {
    1.0
}

/// Per-unit ground truth recorded at generation time. Potential outcomes
/// share one noise draw, so the true effect h is noise-free.
#[derive(Debug, Clone, PartialEq)]
pub struct SimTruth {
    pub g: Vec<f64>,
    pub h: Vec<f64>,
    pub propensity: Vec<f64>,
    pub y0: Vec<f64>,
    pub y1: Vec<f64>,
}

impl SimTruth {
    pub fn ite(&self, unit: usize) -> f64 {
        self.h[unit]
    }

    /// Mean true effect over the treated units.
    pub fn true_att(&self, data: &Dataset) -> f64 {
        let treated = data.treated_indices();
        treated.iter().map(|&i| self.h[i]).sum::<f64>() / treated.len() as f64
    }
}

/// Ground truth re-indexed to a subset of the generated units, recovered
/// through their ids ("1".."n" at generation time). Split datasets keep
/// those ids, so truth follows them.
pub fn subset_truth(truth: &SimTruth, data: &Dataset) -> Result<SimTruth, SimError> {
    let mut indices = Vec::with_capacity(data.n());
    for i in 0..data.n() {
        let id = data.id(i);
        let orig = id
            .parse::<usize>()
            .ok()
            .and_then(|v| v.checked_sub(1))
            .filter(|&v| v < truth.g.len())
            .ok_or_else(|| SimError::UnknownSimUnit(id.to_string()))?;
        indices.push(orig);
    }
    let take = |v: &[f64]| indices.iter().map(|&k| v[k]).collect();
    Ok(SimTruth {
        g: take(&truth.g),
        h: take(&truth.h),
        propensity: take(&truth.propensity),
        y0: take(&truth.y0),
        y1: take(&truth.y1),
    })
}

/// Which covariate columns feed each surface, plus the column layout:
/// continuous columns first, then binary.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    pub columns: Vec<ColumnMeta>,
    pub g_cols: Vec<usize>,
    pub h_cols: Vec<usize>,
}

/// Upper bound on simulated covariates; keeps arithmetic on untrusted
/// configs away from overflow and absurd allocations.
const MAX_COVARIATES: usize = 4096;

impl DgpConfig {
    fn validate(&self) -> Result<(), SimError> {
        if self.n == 0 {
            return Err(SimError::Empty);
        }
        if !self.sigma.is_finite() || self.sigma < 0.0 {
            return Err(SimError::BadSigma(self.sigma));
        }
        let p = self.p_c.saturating_add(self.p_d);
        if p > MAX_COVARIATES {
            return Err(SimError::TooManyCovariates {
                got: p,
                max: MAX_COVARIATES,
            });
        }
        let claimed = self
            .roles
            .confounding
            .saturating_add(self.roles.treatment)
            .saturating_add(self.roles.irrelevant);
        if claimed != p {
            return Err(SimError::RoleMismatch {
                expected: p,
                got: claimed,
            });
        }
        if let Some(gamma) = &self.gamma {
            if gamma.len() != p {
                return Err(SimError::BadGammaLength {
                    expected: p,
                    got: gamma.len(),
                });
            }
            if let Some(&bad) = gamma.iter().find(|v| !v.is_finite()) {
                return Err(SimError::BadGamma(bad));
            }
        }
        Ok(())
    }

    /// Assigns covariate columns to the two surfaces: g draws from the
    /// front of each kind's pool, h continues after it.
    pub fn layout(&self) -> Result<Layout, SimError> {
        self.validate()?;
        let mut columns = Vec::with_capacity(self.p_c + self.p_d);
        for j in 0..self.p_c {
            columns.push(ColumnMeta::continuous(format!("x{}", j + 1)));
        }
        for j in 0..self.p_d {
            columns.push(ColumnMeta::binary(format!("w{}", j + 1)));
        }
        let mut next_continuous = 0usize;
        let mut next_binary = self.p_c;

        let mut allocate = |kind: FunctionKind, count: usize| -> Result<Vec<usize>, SimError> {
            let take_continuous =
                |cursor: &mut usize, want: usize| -> Result<Vec<usize>, SimError> {
                    if *cursor + want > self.p_c {
                        return Err(SimError::NotEnoughOfKind {
                            kind: "continuous".into(),
                            needed: want,
                            available: self.p_c - *cursor,
                        });
                    }
                    let cols = (*cursor..*cursor + want).collect();
                    *cursor += want;
                    Ok(cols)
                };
            let take_binary = |cursor: &mut usize, want: usize| -> Result<Vec<usize>, SimError> {
                if *cursor + want > self.p_c + self.p_d {
                    return Err(SimError::NotEnoughOfKind {
                        kind: "binary".into(),
                        needed: want,
                        available: self.p_c + self.p_d - *cursor,
                    });
                }
                let cols = (*cursor..*cursor + want).collect();
                *cursor += want;
                Ok(cols)
            };
            match kind {
                FunctionKind::None | FunctionKind::Const => {
                    if count != 0 {
                        return Err(SimError::TakesNoCovariates {
                            kind: kind.to_string(),
                            got: count,
                        });
                    }
                    Ok(Vec::new())
                }
                FunctionKind::Box | FunctionKind::Linear | FunctionKind::Quad => {
                    if count == 0 {
                        return Err(SimError::NeedsCovariates {
                            kind: kind.to_string(),
                        });
                    }
                    take_continuous(&mut next_continuous, count)
                }
                FunctionKind::Binary => {
                    if count != 1 {
                        return Err(SimError::BinaryTakesOne { got: count });
                    }
                    take_binary(&mut next_binary, 1)
                }
                FunctionKind::Mixed => {
                    if count < 2 || !count.is_multiple_of(2) {
                        return Err(SimError::MixedNeedsPairs { got: count });
                    }
                    let mut cols = take_continuous(&mut next_continuous, count / 2)?;
                    cols.extend(take_binary(&mut next_binary, count / 2)?);
                    Ok(cols)
                }
            }
        };

        let g_cols = allocate(self.g, self.roles.confounding)?;
        let h_cols = allocate(self.h, self.roles.treatment)?;
        Ok(Layout {
            columns,
            g_cols,
            h_cols,
        })
    }

    fn effective_gamma(&self, layout: &Layout) -> Vec<f64> {
        match &self.gamma {
            Some(g) => g.clone(),
            None => {
                let mut gamma = vec![0.0; self.columns_len()];
                for &j in &layout.g_cols {
                    gamma[j] = 1.0;
                }
                gamma
            }
        }
    }

    fn columns_len(&self) -> usize {
        self.p_c + self.p_d
    }
}

fn expit(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

fn pick(row: &[f64], cols: &[usize]) -> Vec<f64> {
    cols.iter().map(|&j| row[j]).collect()
}

/// Draws a dataset from the configured process and records its truth.
/// Covariates, treatment, and noise come from separate streams derived
/// from the seed, so the same seed reproduces everything bit for bit.
pub fn generate(config: &DgpConfig) -> Result<(Dataset, SimTruth), SimError> {
    let layout = config.layout()?;
    let p = config.columns_len();
    let n = config.n;
    let gamma = config.effective_gamma(&layout);

    let mut cov_rng = ChaCha8Rng::seed_from_u64(crate::seeds::derive(config.seed, "covariates"));
    let mut x = Vec::with_capacity(n * p);
    for _ in 0..n {
        for col in &layout.columns {
            let v = match col.kind {
                crate::data::ColumnKind::Continuous => cov_rng.gen::<f64>(),
                crate::data::ColumnKind::Binary => f64::from(cov_rng.gen_bool(0.5)),
            };
            x.push(v);
        }
    }

    let mut g_vals = Vec::with_capacity(n);
    let mut h_vals = Vec::with_capacity(n);
    let mut propensity = Vec::with_capacity(n);
    for i in 0..n {
        let row = &x[i * p..(i + 1) * p];
        g_vals.push(config.g.eval(&pick(row, &layout.g_cols)));
        h_vals.push(config.h.eval(&pick(row, &layout.h_cols)));
        let z: f64 = row.iter().zip(&gamma).map(|(v, g)| v * g).sum();
        propensity.push(expit(z));
    }

    let mut treat_rng = ChaCha8Rng::seed_from_u64(crate::seeds::derive(config.seed, "treatment"));
    let t: Vec<u8> = propensity
        .iter()
        .map(|&e| u8::from(treat_rng.gen_bool(e)))
        .collect();

    let mut noise_rng = ChaCha8Rng::seed_from_u64(crate::seeds::derive(config.seed, "noise"));
    let eps: Vec<f64> = if config.sigma > 0.0 {
        let normal = Normal::new(0.0, config.sigma).expect("positive sigma checked");
        (0..n).map(|_| normal.sample(&mut noise_rng)).collect()
    } else {
        vec![0.0; n]
    };

    let y0: Vec<f64> = (0..n).map(|i| g_vals[i] + eps[i]).collect();
    let y1: Vec<f64> = (0..n).map(|i| g_vals[i] + h_vals[i] + eps[i]).collect();
    let y: Vec<f64> = (0..n)
        .map(|i| if t[i] == 1 { y1[i] } else { y0[i] })
        .collect();

    let ids = (1..=n).map(|i| i.to_string()).collect();
    let data = Dataset::from_parts(x, t, Some(y), layout.columns.clone(), ids)?;
    Ok((
        data,
        SimTruth {
            g: g_vals,
            h: h_vals,
            propensity,
            y0,
            y1,
        },
    ))
}

/// The noiseless outcome surfaces of a configured process, for solver runs
/// that should see the truth instead of a fitted model.
pub fn oracle_model(config: &DgpConfig) -> Result<OracleModel, SimError> {
    let layout = config.layout()?;
    let (g_kind, g_cols) = (config.g, layout.g_cols);
    let (h_kind, h_cols) = (config.h, layout.h_cols);
    Ok(OracleModel::new(
        move |x: &[f64]| g_kind.eval(&pick(x, &g_cols)),
        move |x: &[f64]| h_kind.eval(&pick(x, &h_cols)),
    ))
}

/// Mean absolute effect error over the supplied estimates, and the same
/// error as a proportion of the true ATT. The proportion is absent when
/// the true ATT is zero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MaeAtt {
    pub mae: f64,
    pub true_att: f64,
    pub proportion: Option<f64>,
}

pub fn evaluate_mae_att(
    estimates: &[EffectEstimate],
    truth: &SimTruth,
    data: &Dataset,
) -> Result<MaeAtt, SimError> {
    if estimates.is_empty() {
        return Err(EstimationError::Empty.into());
    }
    let mae = estimates
        .iter()
        .map(|e| (e.ite - truth.h[e.unit]).abs())
        .sum::<f64>()
        / estimates.len() as f64;
    let true_att = truth.true_att(data);
    let proportion = (true_att != 0.0).then(|| mae / true_att.abs());
    Ok(MaeAtt {
        mae,
        true_att,
        proportion,
    })
}

/// The comparison estimators: each matches every treated unit to controls
/// and differences the unit's outcome against their mean.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BaselineMethod {
    /// All controls; the global difference of means.
    Naive,
    /// k nearest controls by Mahalanobis covariate distance.
    MahalNn,
    /// k nearest controls by control-surface prediction.
    PrognosticNn,
    /// k controls whose outcomes are closest to the unit's true
    /// counterfactual. Needs ground truth; a ceiling, not a method.
    BestCf,
}

impl fmt::Display for BaselineMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BaselineMethod::Naive => "naive",
            BaselineMethod::MahalNn => "mahal_nn",
            BaselineMethod::PrognosticNn => "prognostic_nn",
            BaselineMethod::BestCf => "best_cf",
        })
    }
}

#[allow(clippy::needless_range_loop)]
fn cholesky(a: &[Vec<f64>]) -> Option<Vec<Vec<f64>>> {
    let p = a.len();
    let mut l = vec![vec![0.0; p]; p];
    for i in 0..p {
        for j in 0..=i {
            let mut sum = a[i][j];
            for k in 0..j {
                sum -= l[i][k] * l[j][k];
            }
            if i == j {
                if sum <= 0.0 {
                    return None;
                }
                l[i][j] = sum.sqrt();
            } else {
                l[i][j] = sum / l[j][j];
            }
        }
    }
    Some(l)
}

fn chol_solve(l: &[Vec<f64>], b: &[f64]) -> Vec<f64> {
    let p = l.len();
    let mut y = vec![0.0; p];
    for i in 0..p {
        let mut sum = b[i];
        for k in 0..i {
            sum -= l[i][k] * y[k];
        }
        y[i] = sum / l[i][i];
    }
    let mut z = vec![0.0; p];
    for i in (0..p).rev() {
        let mut sum = y[i];
        for k in i + 1..p {
            sum -= l[k][i] * z[k];
        }
        z[i] = sum / l[i][i];
    }
    z
}

/// Sample covariance of the covariates, diagonally loaded until it admits a
/// Cholesky factor.
#[allow(clippy::needless_range_loop)]
fn regularized_covariance_factor(data: &Dataset) -> Result<Vec<Vec<f64>>, SimError> {
    let (n, p) = (data.n(), data.p());
    let mut means = vec![0.0; p];
    for i in 0..n {
        for (j, m) in means.iter_mut().enumerate() {
            *m += data.value(i, j);
        }
    }
    for m in &mut means {
        *m /= n as f64;
    }
    let mut cov = vec![vec![0.0; p]; p];
    let denom = if n > 1 { (n - 1) as f64 } else { 1.0 };
    for i in 0..n {
        for a in 0..p {
            let da = data.value(i, a) - means[a];
            for b in 0..=a {
                cov[a][b] += da * (data.value(i, b) - means[b]) / denom;
            }
        }
    }
    for a in 0..p {
        for b in 0..a {
            cov[b][a] = cov[a][b];
        }
    }
    let trace_mean = (0..p).map(|j| cov[j][j]).sum::<f64>() / p as f64;
    let mut jitter = 1e-8 * (1.0 + trace_mean);
    for _ in 0..10 {
        if let Some(l) = cholesky(&cov) {
            return Ok(l);
        }
        for (j, row) in cov.iter_mut().enumerate() {
            row[j] += jitter;
        }
        jitter *= 10.0;
    }
    Err(SimError::SingularCovariance)
}

fn k_nearest_mean(
    distances: &mut Vec<(f64, usize)>,
    k: usize,
    ys: &[f64],
) -> (f64, Vec<usize>) {
    distances.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
    distances.truncate(k);
    let picked: Vec<usize> = distances.iter().map(|&(_, c)| c).collect();
    let mean = picked.iter().map(|&c| ys[c]).sum::<f64>() / k as f64;
    (mean, picked)
}

/// Effect estimates for every treated unit under a comparison method.
/// Matching is 1:k with replacement across treated units; `model` feeds the
/// prognostic method, `truth` the counterfactual-cheating one.
pub fn baseline(
    method: BaselineMethod,
    data: &Dataset,
    k: usize,
    model: Option<&dyn OutcomeModel>,
    truth: Option<&SimTruth>,
) -> Result<Vec<EffectEstimate>, SimError> {
    let ys = data.outcomes().ok_or(SimError::MissingOutcomes)?;
    let controls = data.control_indices();
    let treated = data.treated_indices();
    let needed = if method == BaselineMethod::Naive { 1 } else { k };
    if controls.len() < needed {
        return Err(SimError::TooFewControls {
            available: controls.len(),
            needed,
        });
    }

    let chol = if method == BaselineMethod::MahalNn {
        Some(regularized_covariance_factor(data)?)
    } else {
        None
    };
    let prognostic = match method {
        BaselineMethod::PrognosticNn => {
            let model = model.ok_or(SimError::NeedsModel)?;
            let mut scores = Vec::with_capacity(data.n());
            for i in 0..data.n() {
                scores.push(model.predict_unit(data.id(i), data.row(i), Arm::Control)?);
            }
            Some(scores)
        }
        _ => None,
    };
    if method == BaselineMethod::BestCf && truth.is_none() {
        return Err(SimError::NeedsTruth);
    }

    let naive_mean = controls.iter().map(|&c| ys[c]).sum::<f64>() / controls.len() as f64;
    let mut estimates = Vec::with_capacity(treated.len());
    for &i in &treated {
        let (y0_hat, n_c) = match method {
            BaselineMethod::Naive => (naive_mean, controls.len()),
            BaselineMethod::MahalNn => {
                let l = chol.as_ref().expect("factor built for this method");
                let xi = data.row(i);
                let mut dists: Vec<(f64, usize)> = controls
                    .iter()
                    .map(|&c| {
                        let d: Vec<f64> = data
                            .row(c)
                            .iter()
                            .zip(xi)
                            .map(|(a, b)| a - b)
                            .collect();
                        let z = chol_solve(l, &d);
                        (d.iter().zip(&z).map(|(a, b)| a * b).sum::<f64>(), c)
                    })
                    .collect();
                let (mean, picked) = k_nearest_mean(&mut dists, k, ys);
                (mean, picked.len())
            }
            BaselineMethod::PrognosticNn => {
                let scores = prognostic.as_ref().expect("scores built for this method");
                let mut dists: Vec<(f64, usize)> = controls
                    .iter()
                    .map(|&c| ((scores[c] - scores[i]).abs(), c))
                    .collect();
                let (mean, picked) = k_nearest_mean(&mut dists, k, ys);
                (mean, picked.len())
            }
            BaselineMethod::BestCf => {
                let target = truth.expect("checked above").y0[i];
                let mut dists: Vec<(f64, usize)> = controls
                    .iter()
                    .map(|&c| ((ys[c] - target).abs(), c))
                    .collect();
                let (mean, picked) = k_nearest_mean(&mut dists, k, ys);
                (mean, picked.len())
            }
        };
        estimates.push(EffectEstimate {
            unit: i,
            unit_id: data.id(i).to_string(),
            y0_hat: Some(y0_hat),
            y1_hat: Some(ys[i]),
            ite: ys[i] - y0_hat,
            variant: IteVariant::TauB,
            group_size: n_c + 1,
            n_c,
            n_t: 1,
        });
    }
    Ok(estimates)
}

/// Runs a 1:k baseline over several k and keeps the best scoring one by
/// MAE/ATT (raw MAE when the true ATT is zero). Ties keep the earliest k;
/// k values larger than the control pool are skipped, and only an empty
/// sweep is an error.
pub fn baseline_best_k(
    method: BaselineMethod,
    data: &Dataset,
    ks: &[usize],
    model: Option<&dyn OutcomeModel>,
    truth: &SimTruth,
) -> Result<(usize, Vec<EffectEstimate>, MaeAtt), SimError> {
    let n_controls = data.control_indices().len();
    let mut best: Option<(usize, Vec<EffectEstimate>, MaeAtt)> = None;
    for &k in ks {
        let needed = if method == BaselineMethod::Naive { 1 } else { k };
        if n_controls < needed {
            continue;
        }
        let estimates = baseline(method, data, k, model, Some(truth))?;
        let score = evaluate_mae_att(&estimates, truth, data)?;
        let value = score.proportion.unwrap_or(score.mae);
        let beats = match &best {
            None => true,
            Some((_, _, incumbent)) => value < incumbent.proportion.unwrap_or(incumbent.mae),
        };
        if beats {
            best = Some((k, estimates, score));
        }
    }
    best.ok_or(SimError::TooFewControls {
        available: n_controls,
        needed: ks.iter().copied().min().unwrap_or(1),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn roles(confounding: usize, treatment: usize, irrelevant: usize) -> RoleSplit {
        RoleSplit {
            confounding,
            treatment,
            irrelevant,
        }
    }

    fn none_const_config() -> DgpConfig {
        DgpConfig {
            p_c: 2,
            p_d: 0,
            roles: roles(0, 0, 2),
            g: FunctionKind::None,
            h: FunctionKind::Const,
            gamma: None,
            sigma: 0.0,
            n: 200,
            seed: 7,
        }
    }

    #[test]
    fn function_kinds_evaluate_per_their_definitions() {
        assert_eq!(FunctionKind::None.eval(&[]), 0.0);
        assert_eq!(FunctionKind::Const.eval(&[]), 1.0);
        assert_eq!(FunctionKind::Box.eval(&[0.6, 0.4]), 1.0);
        assert_eq!(FunctionKind::Linear.eval(&[0.25, 0.5]), 0.75);
        assert_eq!(FunctionKind::Quad.eval(&[1.0, 1.0]), 2.0);
        assert_eq!(FunctionKind::Binary.eval(&[1.0]), 1.0);
        assert_eq!(FunctionKind::Mixed.eval(&[0.25, 1.0]), 1.25);
    }

    #[test]
    fn noiseless_pure_effect_outcome_is_the_indicator() {
        let (data, truth) = generate(&none_const_config()).unwrap();
        let ys = data.outcomes().unwrap();
        for (i, &y) in ys.iter().enumerate() {
            assert_eq!(y, f64::from(data.treatments()[i]));
            assert_eq!(truth.ite(i), 1.0);
            assert_eq!(truth.propensity[i], 0.5);
        }
    }

    #[test]
    fn no_confounders_means_a_balanced_design() {
        let mut config = none_const_config();
        config.n = 600;
        let (data, _) = generate(&config).unwrap();
        // Binomial(600, 0.5): 3 standard deviations is about 37.
        let treated = data.n_treated() as i64;
        assert!((treated - 300).abs() <= 37, "treated count {treated}");
    }

    #[test]
    fn confounding_tilts_the_propensity() {
        let config = DgpConfig {
            p_c: 2,
            p_d: 0,
            roles: roles(2, 0, 0),
            g: FunctionKind::Linear,
            h: FunctionKind::Const,
            gamma: None,
            sigma: 0.0,
            n: 600,
            seed: 11,
        };
        let (data, truth) = generate(&config).unwrap();
        // e = expit(x1 + x2) ∈ (0.5, 0.88) on the unit square.
        assert!(truth.propensity.iter().all(|&e| e > 0.5));
        assert!(data.n_treated() > data.n() / 2);
    }

    #[test]
    fn same_seed_reproduces_everything() {
        let config = DgpConfig {
            p_c: 1,
            p_d: 1,
            roles: roles(2, 0, 0),
            g: FunctionKind::Mixed,
            h: FunctionKind::Const,
            gamma: None,
            sigma: 1.0,
            n: 50,
            seed: 3,
        };
        let (a, ta) = generate(&config).unwrap();
        let (b, tb) = generate(&config).unwrap();
        assert_eq!(a.treatments(), b.treatments());
        assert_eq!(a.outcomes().unwrap(), b.outcomes().unwrap());
        for i in 0..a.n() {
            assert_eq!(a.row(i), b.row(i));
        }
        assert_eq!(ta, tb);
    }

    #[test]
    fn layout_rejects_inconsistent_configs() {
        let mut config = none_const_config();
        config.roles = roles(0, 0, 3);
        assert!(matches!(
            generate(&config).unwrap_err(),
            SimError::RoleMismatch { expected: 2, got: 3 }
        ));

        let binary_without_binaries = DgpConfig {
            p_c: 1,
            p_d: 0,
            roles: roles(1, 0, 0),
            g: FunctionKind::Binary,
            h: FunctionKind::Const,
            gamma: None,
            sigma: 1.0,
            n: 10,
            seed: 0,
        };
        assert!(matches!(
            generate(&binary_without_binaries).unwrap_err(),
            SimError::NotEnoughOfKind { .. }
        ));

        let mut bad_gamma = none_const_config();
        bad_gamma.gamma = Some(vec![1.0]);
        assert!(matches!(
            generate(&bad_gamma).unwrap_err(),
            SimError::BadGammaLength { expected: 2, got: 1 }
        ));

        let mut nan_gamma = none_const_config();
        nan_gamma.gamma = Some(vec![1.0, f64::NAN]);
        assert!(matches!(
            generate(&nan_gamma).unwrap_err(),
            SimError::BadGamma(_)
        ));

        for sigma in [f64::NAN, f64::INFINITY, -1.0] {
            let mut bad_sigma = none_const_config();
            bad_sigma.sigma = sigma;
            assert!(matches!(
                generate(&bad_sigma).unwrap_err(),
                SimError::BadSigma(_)
            ));
        }

        let mut oversized = none_const_config();
        oversized.p_c = usize::MAX;
        oversized.roles.confounding = usize::MAX;
        assert!(matches!(
            generate(&oversized).unwrap_err(),
            SimError::TooManyCovariates { .. }
        ));
    }

    #[test]
    fn oracle_surfaces_match_recorded_truth() {
        let config = DgpConfig {
            p_c: 2,
            p_d: 0,
            roles: roles(1, 1, 0),
            g: FunctionKind::Box,
            h: FunctionKind::Box,
            gamma: None,
            sigma: 0.5,
            n: 40,
            seed: 5,
        };
        let (data, truth) = generate(&config).unwrap();
        let model = oracle_model(&config).unwrap();
        for i in 0..data.n() {
            let f0 = model.predict(data.row(i), Arm::Control).unwrap();
            let f1 = model.predict(data.row(i), Arm::Treated).unwrap();
            assert_eq!(f0, truth.g[i]);
            assert_eq!(f1, truth.g[i] + truth.h[i]);
        }
    }

    #[test]
    fn irrelevant_covariates_never_touch_the_surfaces() {
        let config = DgpConfig {
            p_c: 2,
            p_d: 0,
            roles: roles(1, 0, 1),
            g: FunctionKind::Quad,
            h: FunctionKind::Const,
            gamma: None,
            sigma: 0.0,
            n: 10,
            seed: 9,
        };
        let (data, _) = generate(&config).unwrap();
        let model = oracle_model(&config).unwrap();
        for i in 0..data.n() {
            let mut perturbed = data.row(i).to_vec();
            perturbed[1] = 1.0 - perturbed[1];
            assert_eq!(
                model.predict(data.row(i), Arm::Control).unwrap(),
                model.predict(&perturbed, Arm::Control).unwrap(),
            );
        }
    }

    fn mk_estimate(unit: usize, ite: f64) -> EffectEstimate {
        EffectEstimate {
            unit,
            unit_id: format!("{}", unit + 1),
            y0_hat: Some(0.0),
            y1_hat: Some(ite),
            ite,
            variant: IteVariant::TauB,
            group_size: 2,
            n_c: 1,
            n_t: 1,
        }
    }

    #[test]
    fn perfect_estimates_score_zero() {
        let (data, truth) = generate(&none_const_config()).unwrap();
        let estimates: Vec<EffectEstimate> = data
            .treated_indices()
            .into_iter()
            .map(|i| mk_estimate(i, truth.h[i]))
            .collect();
        let score = evaluate_mae_att(&estimates, &truth, &data).unwrap();
        assert_eq!(score.mae, 0.0);
        assert_eq!(score.proportion, Some(0.0));
    }

    #[test]
    fn uniform_offset_by_the_att_scores_one() {
        let (data, truth) = generate(&none_const_config()).unwrap();
        let estimates: Vec<EffectEstimate> = data
            .treated_indices()
            .into_iter()
            .map(|i| mk_estimate(i, truth.h[i] + truth.true_att(&data)))
            .collect();
        let score = evaluate_mae_att(&estimates, &truth, &data).unwrap();
        assert_eq!(score.proportion, Some(1.0));
    }

    #[test]
    fn zero_att_reports_raw_error_without_a_proportion() {
        let mut config = none_const_config();
        config.h = FunctionKind::None;
        let (data, truth) = generate(&config).unwrap();
        let estimates: Vec<EffectEstimate> = data
            .treated_indices()
            .into_iter()
            .map(|i| mk_estimate(i, 0.25))
            .collect();
        let score = evaluate_mae_att(&estimates, &truth, &data).unwrap();
        assert_eq!(score.mae, 0.25);
        assert_eq!(score.proportion, None);
    }

    #[test]
    fn naive_is_exact_without_confounding_or_noise() {
        let (data, truth) = generate(&none_const_config()).unwrap();
        let estimates = baseline(BaselineMethod::Naive, &data, 1, None, None).unwrap();
        for est in &estimates {
            assert_eq!(est.ite, 1.0);
        }
        let score = evaluate_mae_att(&estimates, &truth, &data).unwrap();
        assert_eq!(score.proportion, Some(0.0));
    }

    #[test]
    fn cheating_baseline_picks_the_outcome_nearest_the_counterfactual() {
        let config = DgpConfig {
            p_c: 2,
            p_d: 0,
            roles: roles(2, 0, 0),
            g: FunctionKind::Linear,
            h: FunctionKind::Const,
            gamma: None,
            sigma: 0.0,
            n: 40,
            seed: 13,
        };
        let (data, truth) = generate(&config).unwrap();
        let ys = data.outcomes().unwrap();
        let estimates = baseline(BaselineMethod::BestCf, &data, 1, None, Some(&truth)).unwrap();
        for est in &estimates {
            let expected = data
                .control_indices()
                .into_iter()
                .map(|c| ys[c])
                .min_by(|a, b| {
                    (a - truth.y0[est.unit])
                        .abs()
                        .partial_cmp(&(b - truth.y0[est.unit]).abs())
                        .unwrap()
                })
                .unwrap();
            assert_eq!(est.y0_hat, Some(expected));
        }
    }

    #[test]
    fn twin_controls_make_mahalanobis_exact() {
        // Three treated units, each with an identical control twin, plus
        // two spare controls. 1:1 matching lands on the twin.
        let x = vec![
            0.2, 0.8, // treated 0
            0.2, 0.8, // its twin
            0.4, 0.3, // treated 1
            0.4, 0.3, // its twin
            0.7, 0.6, // treated 2
            0.7, 0.6, // its twin
            0.9, 0.1, 0.1, 0.9, // spare controls
        ];
        let t = vec![1, 0, 1, 0, 1, 0, 0, 0];
        let y = vec![5.0, 2.0, 6.0, 3.0, 7.0, 4.0, 0.0, 1.0];
        let data = Dataset::from_parts(
            x,
            t,
            Some(y),
            vec![ColumnMeta::continuous("x1"), ColumnMeta::continuous("x2")],
            (0..8).map(|i| format!("u{i}")).collect(),
        )
        .unwrap();
        let estimates = baseline(BaselineMethod::MahalNn, &data, 1, None, None).unwrap();
        assert_eq!(estimates.len(), 3);
        for (est, expected) in estimates.iter().zip([3.0, 3.0, 3.0]) {
            assert_eq!(est.ite, expected);
        }
    }

    #[test]
    fn prognostic_matches_on_the_control_surface() {
        let x = vec![0.5, 0.45, 0.1];
        let t = vec![1, 0, 0];
        let y = vec![9.0, 7.0, 1.0];
        let data = Dataset::from_parts(
            x,
            t,
            Some(y),
            vec![ColumnMeta::continuous("x1")],
            vec!["a".into(), "b".into(), "c".into()],
        )
        .unwrap();
        let model = OracleModel::new(|x: &[f64]| x[0], |_| 0.0);
        let estimates =
            baseline(BaselineMethod::PrognosticNn, &data, 1, Some(&model), None).unwrap();
        assert_eq!(estimates[0].y0_hat, Some(7.0));
        assert_eq!(estimates[0].ite, 2.0);
    }

    #[test]
    fn too_few_controls_is_reported() {
        let (data, _) = generate(&none_const_config()).unwrap();
        let err = baseline(BaselineMethod::MahalNn, &data, data.n(), None, None).unwrap_err();
        assert!(matches!(err, SimError::TooFewControls { .. }));
    }

    #[test]
    fn missing_model_and_truth_are_distinct_errors() {
        let (data, truth) = generate(&none_const_config()).unwrap();
        assert!(matches!(
            baseline(BaselineMethod::PrognosticNn, &data, 1, None, Some(&truth)).unwrap_err(),
            SimError::NeedsModel
        ));
        assert!(matches!(
            baseline(BaselineMethod::BestCf, &data, 1, None, None).unwrap_err(),
            SimError::NeedsTruth
        ));
    }

    #[test]
    fn sweeping_k_keeps_the_best_score() {
        let config = DgpConfig {
            p_c: 2,
            p_d: 0,
            roles: roles(2, 0, 0),
            g: FunctionKind::Quad,
            h: FunctionKind::Const,
            gamma: None,
            sigma: 0.1,
            n: 120,
            seed: 21,
        };
        let (data, truth) = generate(&config).unwrap();
        let (best_k, _, best_score) = baseline_best_k(
            BaselineMethod::MahalNn,
            &data,
            &[1, 3, 5],
            None,
            &truth,
        )
        .unwrap();
        for k in [1, 3, 5] {
            let estimates = baseline(BaselineMethod::MahalNn, &data, k, None, None).unwrap();
            let score = evaluate_mae_att(&estimates, &truth, &data).unwrap();
            assert!(
                best_score.proportion.unwrap() <= score.proportion.unwrap() + 1e-15,
                "k={k} beat the reported best {best_k}"
            );
        }
    }

    #[test]
    fn oversized_k_values_are_skipped_in_the_sweep() {
        let config = DgpConfig {
            p_c: 2,
            p_d: 0,
            roles: roles(2, 0, 0),
            g: FunctionKind::Quad,
            h: FunctionKind::Const,
            gamma: None,
            sigma: 0.1,
            n: 30,
            seed: 21,
        };
        let (data, truth) = generate(&config).unwrap();
        let n_controls = data.control_indices().len();
        let (best_k, _, _) = baseline_best_k(
            BaselineMethod::MahalNn,
            &data,
            &[1, n_controls + 5],
            None,
            &truth,
        )
        .unwrap();
        assert_eq!(best_k, 1);

        let err = baseline_best_k(
            BaselineMethod::MahalNn,
            &data,
            &[n_controls + 5],
            None,
            &truth,
        )
        .unwrap_err();
        assert!(matches!(err, SimError::TooFewControls { .. }));
    }

    #[test]
    fn truth_follows_units_through_a_split() {
        let mut config = none_const_config();
        config.sigma = 1.0;
        let (data, truth) = generate(&config).unwrap();
        let split = crate::data::split(
            &data,
            &crate::data::SplitSpec {
                train_fraction: 0.5,
                validation_fraction: 0.0,
                seed: 4,
            },
        )
        .unwrap();
        let test_truth = subset_truth(&truth, &split.test).unwrap();
        let ys = split.test.outcomes().unwrap();
        for (i, &y) in ys.iter().enumerate() {
            let expected = if split.test.treatments()[i] == 1 {
                test_truth.y1[i]
            } else {
                test_truth.y0[i]
            };
            assert_eq!(y, expected);
        }

        let foreign = Dataset::from_parts(
            vec![0.5],
            vec![0],
            None,
            vec![ColumnMeta::continuous("x1")],
            vec!["not-a-number".into()],
        )
        .unwrap();
        assert!(matches!(
            subset_truth(&truth, &foreign).unwrap_err(),
            SimError::UnknownSimUnit(_)
        ));
    }

    #[test]
    fn scenario_files_round_trip() {
        let config = DgpConfig {
            p_c: 1,
            p_d: 1,
            roles: roles(1, 1, 0),
            g: FunctionKind::Quad,
            h: FunctionKind::Binary,
            gamma: Some(vec![0.5, -0.5]),
            sigma: 0.25,
            n: 300,
            seed: 42,
        };
        let json = serde_json::to_string(&config).unwrap();
        let back: DgpConfig = serde_json::from_str(&json).unwrap();
        assert_eq!(back, config);
    }
}
