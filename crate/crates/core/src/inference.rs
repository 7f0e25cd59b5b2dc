//! Per-unit interval estimates for matched-group effects: three normal
//! constructions with different variance sources, two resampling
//! constructions over the fixed group, and an ensemble-quantile interval.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};
use thiserror::Error;

use crate::boxes::MatchedGroup;
use crate::data::Dataset;
use crate::estimation::{ite, EstimationError, IteVariant};
use crate::predictor::{Arm, OutcomeModel, PredictorError};
use crate::seeds;

#[derive(Debug, Error)]
pub enum InferenceError {
    #[error("interval level must lie strictly between 0 and 1, got {0}")]
    BadLevel(f64),
    #[error("method `{method}` is unavailable here: {reason}")]
    MethodUnavailable { method: String, reason: String },
    #[error(
        "unit `{unit}`: the {arm} arm of its group has {available} members, \
         {required} required for this interval"
    )]
    DegenerateGroup {
        unit: String,
        arm: String,
        available: usize,
        required: usize,
    },
    #[error("resampling needs at least 1 draw")]
    NoResamples,
    #[error(transparent)]
    Estimation(#[from] EstimationError),
    #[error(transparent)]
    Predictor(#[from] PredictorError),
}

/// The six interval constructions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IntervalMethod {
    /// Normal interval, variance proxied by the ensemble spread at the
    /// unit's point.
    NaEnsemble,
    /// Normal interval with the noise variance supplied (simulation only).
    NaTrue,
    /// Normal interval with max(2·var_c, 2·var_t, var_c + var_t) of the
    /// group's outcomes.
    NaConservative,
    /// Percentile interval; group fixed, members resampled with
    /// replacement per arm.
    Bootstrap,
    /// Percentile interval over per-arm subsamples of ⌈fraction·n⌉
    /// members without replacement.
    Subsample,
    /// Quantiles of the paired ensemble draws f̂₁(xᵢ) − f̂₀(xᵢ).
    Posterior,
}

impl IntervalMethod {
    pub const ALL: [IntervalMethod; 6] = [
        IntervalMethod::NaEnsemble,
        IntervalMethod::NaTrue,
        IntervalMethod::NaConservative,
        IntervalMethod::Bootstrap,
        IntervalMethod::Subsample,
        IntervalMethod::Posterior,
    ];
}

impl fmt::Display for IntervalMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            IntervalMethod::NaEnsemble => "na_ensemble",
            IntervalMethod::NaTrue => "na_true",
            IntervalMethod::NaConservative => "na_conservative",
            IntervalMethod::Bootstrap => "bootstrap",
            IntervalMethod::Subsample => "subsample",
            IntervalMethod::Posterior => "posterior",
        })
    }
}

impl FromStr for IntervalMethod {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "na_ensemble" => Ok(IntervalMethod::NaEnsemble),
            "na_true" => Ok(IntervalMethod::NaTrue),
            "na_conservative" => Ok(IntervalMethod::NaConservative),
            "bootstrap" => Ok(IntervalMethod::Bootstrap),
            "subsample" => Ok(IntervalMethod::Subsample),
            "posterior" => Ok(IntervalMethod::Posterior),
            other => Err(format!("unknown interval method `{other}`")),
        }
    }
}

/// Resampling knobs shared by the bootstrap and subsample intervals.
/// Per-unit streams are derived from `seed`, so results do not depend on
/// how units are scheduled across workers.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResampleConfig {
    pub n_resamples: usize,
    pub subsample_fraction: f64,
    pub seed: u64,
}

impl Default for ResampleConfig {
    fn default() -> Self {
        ResampleConfig {
            n_resamples: 1000,
            subsample_fraction: 0.7,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IntervalEstimate {
    pub unit: usize,
    pub unit_id: String,
    pub method: IntervalMethod,
    pub level: f64,
    pub lower: f64,
    pub upper: f64,
    pub n_resamples: Option<usize>,
}

fn sample_variance(values: &[f64]) -> f64 {
    let n = values.len();
    debug_assert!(n >= 2);
    let mean = values.iter().sum::<f64>() / n as f64;
    values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64
}

/// Linear-interpolation quantile of an ascending slice.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * q;
    let lo = h.floor() as usize;
    let frac = h - lo as f64;
    if frac == 0.0 {
        sorted[lo]
    } else {
        sorted[lo] + frac * (sorted[lo + 1] - sorted[lo])
    }
}

fn percentile_interval(mut draws: Vec<f64>, level: f64) -> (f64, f64) {
    draws.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let alpha = 1.0 - level;
    (
        quantile(&draws, alpha / 2.0),
        quantile(&draws, 1.0 - alpha / 2.0),
    )
}

fn arm_outcomes(group: &MatchedGroup, data: &Dataset, arm: Arm) -> Vec<f64> {
    let ys = data.outcomes().expect("outcome presence checked upstream");
    let members: Vec<usize> = match arm {
        Arm::Control => group.control_members(data).collect(),
        Arm::Treated => group.treated_members(data).collect(),
    };
    members.into_iter().map(|k| ys[k]).collect()
}

fn require_arm(
    values: &[f64],
    arm: Arm,
    required: usize,
    unit_id: &str,
) -> Result<(), InferenceError> {
    if values.len() < required {
        return Err(InferenceError::DegenerateGroup {
            unit: unit_id.to_string(),
            arm: arm.to_string(),
            available: values.len(),
            required,
        });
    }
    Ok(())
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

fn unavailable(method: IntervalMethod, reason: &str) -> InferenceError {
    InferenceError::MethodUnavailable {
        method: method.to_string(),
        reason: reason.to_string(),
    }
}

/// Interval for `unit`'s effect over its fixed matched group.
/// `true_variance` feeds `NaTrue` only; `model` is consulted only by the
/// ensemble-based methods.
#[allow(clippy::too_many_arguments)]
pub fn interval(
    unit: usize,
    group: &MatchedGroup,
    data: &Dataset,
    model: &dyn OutcomeModel,
    variant: IteVariant,
    method: IntervalMethod,
    level: f64,
    cfg: &ResampleConfig,
    true_variance: Option<f64>,
) -> Result<IntervalEstimate, InferenceError> {
    if !(0.0 < level && level < 1.0) {
        return Err(InferenceError::BadLevel(level));
    }
    let unit_id = data.id(unit).to_string();

    // Quantile interval over paired ensemble draws; no outcomes involved.
    if method == IntervalMethod::Posterior {
        if !model.has_ensemble() {
            return Err(unavailable(method, "the predictor has no ensemble"));
        }
        let x = data.row(unit);
        let draws0 = model.ensemble_unit(&unit_id, x, Arm::Control)?;
        let draws1 = model.ensemble_unit(&unit_id, x, Arm::Treated)?;
        let diffs: Vec<f64> = draws1.iter().zip(&draws0).map(|(a, b)| a - b).collect();
        let (lower, upper) = percentile_interval(diffs, level);
        return Ok(IntervalEstimate {
            unit,
            unit_id,
            method,
            level,
            lower,
            upper,
            n_resamples: None,
        });
    }

    let point = ite(unit, group, data, variant)?.ite;
    let controls = arm_outcomes(group, data, Arm::Control);
    let treated = arm_outcomes(group, data, Arm::Treated);

    let normal_interval = |variance: f64| -> (f64, f64) {
        let scaled = match variant {
            IteVariant::TauB => variance / controls.len() as f64,
            IteVariant::TauA => {
                variance * (1.0 / treated.len() as f64 + 1.0 / controls.len() as f64)
            }
        };
        let z = Normal::new(0.0, 1.0)
            .expect("standard normal parameters are valid")
            .inverse_cdf(1.0 - (1.0 - level) / 2.0);
        let half = z * scaled.sqrt();
        (point - half, point + half)
    };

    let (lower, upper, n_resamples) = match method {
        IntervalMethod::NaTrue => {
            let variance =
                true_variance.ok_or_else(|| unavailable(method, "no true variance supplied"))?;
            let (lo, hi) = normal_interval(variance);
            (lo, hi, None)
        }
        IntervalMethod::NaEnsemble => {
            if !model.has_ensemble() {
                return Err(unavailable(method, "the predictor has no ensemble"));
            }
            let x = data.row(unit);
            let var0 = sample_variance(&model.ensemble_unit(&unit_id, x, Arm::Control)?);
            let variance = match variant {
                IteVariant::TauB => var0,
                IteVariant::TauA => {
                    let var1 = sample_variance(&model.ensemble_unit(&unit_id, x, Arm::Treated)?);
                    (var0 + var1) / 2.0
                }
            };
            let (lo, hi) = normal_interval(variance);
            (lo, hi, None)
        }
        IntervalMethod::NaConservative => {
            require_arm(&controls, Arm::Control, 2, &unit_id)?;
            let var_c = sample_variance(&controls);
            let variance = if treated.len() >= 2 {
                let var_t = sample_variance(&treated);
                (2.0 * var_c).max(2.0 * var_t).max(var_c + var_t)
            } else {
                2.0 * var_c
            };
            let (lo, hi) = normal_interval(variance);
            (lo, hi, None)
        }
        IntervalMethod::Bootstrap | IntervalMethod::Subsample => {
            if cfg.n_resamples == 0 {
                return Err(InferenceError::NoResamples);
            }
            require_arm(&controls, Arm::Control, 2, &unit_id)?;
            if variant == IteVariant::TauA {
                require_arm(&treated, Arm::Treated, 2, &unit_id)?;
            }
            let label = if method == IntervalMethod::Bootstrap {
                "bootstrap"
            } else {
                "subsample"
            };
            let mut rng =
                ChaCha8Rng::seed_from_u64(seeds::derive_indexed(cfg.seed, label, unit as u64));
            let ys = data.outcomes().expect("checked by the point estimate");
            let own_y = ys[unit];

            let mut draws = Vec::with_capacity(cfg.n_resamples);
            for _ in 0..cfg.n_resamples {
                let resample = |arm: &[f64], rng: &mut ChaCha8Rng| -> f64 {
                    if method == IntervalMethod::Bootstrap {
                        let sum: f64 = (0..arm.len())
                            .map(|_| arm[rng.gen_range(0..arm.len())])
                            .sum();
                        sum / arm.len() as f64
                    } else {
                        let k = (cfg.subsample_fraction * arm.len() as f64).ceil() as usize;
                        let k = k.clamp(1, arm.len());
                        let picked: Vec<f64> =
                            arm.choose_multiple(rng, k).copied().collect();
                        mean(&picked)
                    }
                };
                let y0 = resample(&controls, &mut rng);
                let draw = match variant {
                    IteVariant::TauB => own_y - y0,
                    IteVariant::TauA => resample(&treated, &mut rng) - y0,
                };
                draws.push(draw);
            }
            let (lo, hi) = percentile_interval(draws, level);
            (lo, hi, Some(cfg.n_resamples))
        }
        IntervalMethod::Posterior => unreachable!("handled above"),
    };

    Ok(IntervalEstimate {
        unit,
        unit_id,
        method,
        level,
        lower,
        upper,
        n_resamples,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::ColumnMeta;
    use crate::predictor::{ExternalPredictions, OracleModel};

    fn line_dataset(xs: &[f64], t: &[u8], y: &[f64]) -> Dataset {
        Dataset::from_parts(
            xs.to_vec(),
            t.to_vec(),
            Some(y.to_vec()),
            vec![ColumnMeta::continuous("x1")],
            (0..xs.len()).map(|i| format!("u{i}")).collect(),
        )
        .unwrap()
    }

    fn full_group(data: &Dataset) -> MatchedGroup {
        MatchedGroup::from_members((0..data.n()).collect(), data)
    }

    fn no_model() -> OracleModel {
        OracleModel::new(|_| 0.0, |_| 0.0)
    }

    /// n_c = 4 controls with outcomes 1..4, n_t = 2 treated with 5, 9.
    fn six_unit_data() -> Dataset {
        line_dataset(
            &[0.1, 0.2, 0.3, 0.4, 0.5, 0.6],
            &[0, 0, 0, 0, 1, 1],
            &[1.0, 2.0, 3.0, 4.0, 5.0, 9.0],
        )
    }

    #[test]
    fn level_outside_unit_interval_is_rejected() {
        let data = six_unit_data();
        let group = full_group(&data);
        let err = interval(
            4,
            &group,
            &data,
            &no_model(),
            IteVariant::TauB,
            IntervalMethod::NaTrue,
            1.0,
            &ResampleConfig::default(),
            Some(1.0),
        )
        .unwrap_err();
        assert!(matches!(err, InferenceError::BadLevel(_)));
    }

    #[test]
    fn zero_true_variance_collapses_to_the_point() {
        let data = six_unit_data();
        let group = full_group(&data);
        let est = interval(
            4,
            &group,
            &data,
            &no_model(),
            IteVariant::TauB,
            IntervalMethod::NaTrue,
            0.95,
            &ResampleConfig::default(),
            Some(0.0),
        )
        .unwrap();
        // point = 5 − mean{1..4} = 2.5
        assert_eq!(est.lower, 2.5);
        assert_eq!(est.upper, 2.5);
    }

    #[test]
    fn true_variance_scales_by_the_variant_effective_n() {
        let data = six_unit_data();
        let group = full_group(&data);
        let z = Normal::new(0.0, 1.0).unwrap().inverse_cdf(0.975);
        let cfg = ResampleConfig::default();

        let b = interval(
            4, &group, &data, &no_model(),
            IteVariant::TauB, IntervalMethod::NaTrue, 0.95, &cfg, Some(1.0),
        )
        .unwrap();
        let half_b = (b.upper - b.lower) / 2.0;
        assert!((half_b - z * (1.0f64 / 4.0).sqrt()).abs() < 1e-12);

        let a = interval(
            4, &group, &data, &no_model(),
            IteVariant::TauA, IntervalMethod::NaTrue, 0.95, &cfg, Some(1.0),
        )
        .unwrap();
        let half_a = (a.upper - a.lower) / 2.0;
        assert!((half_a - z * (1.0f64 / 2.0 + 1.0 / 4.0).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn missing_true_variance_is_flagged() {
        let data = six_unit_data();
        let group = full_group(&data);
        let err = interval(
            4,
            &group,
            &data,
            &no_model(),
            IteVariant::TauB,
            IntervalMethod::NaTrue,
            0.95,
            &ResampleConfig::default(),
            None,
        )
        .unwrap_err();
        assert!(matches!(err, InferenceError::MethodUnavailable { .. }));
    }

    #[test]
    fn conservative_variance_takes_the_worst_combination() {
        // var_c over {1,2,3,4} = 5/3; var_t over {5,9} = 8.
        // max(10/3, 16, 5/3 + 8) = 16.
        let data = six_unit_data();
        let group = full_group(&data);
        let est = interval(
            4,
            &group,
            &data,
            &no_model(),
            IteVariant::TauB,
            IntervalMethod::NaConservative,
            0.95,
            &ResampleConfig::default(),
            None,
        )
        .unwrap();
        let z = Normal::new(0.0, 1.0).unwrap().inverse_cdf(0.975);
        let half = (est.upper - est.lower) / 2.0;
        assert!((half - z * (16.0f64 / 4.0).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn conservative_beats_true_when_noise_is_smaller() {
        let data = six_unit_data();
        let group = full_group(&data);
        let cfg = ResampleConfig::default();
        let cons = interval(
            4, &group, &data, &no_model(),
            IteVariant::TauB, IntervalMethod::NaConservative, 0.95, &cfg, None,
        )
        .unwrap();
        let truth = interval(
            4, &group, &data, &no_model(),
            IteVariant::TauB, IntervalMethod::NaTrue, 0.95, &cfg, Some(1.0),
        )
        .unwrap();
        assert!(cons.upper - cons.lower >= truth.upper - truth.lower);
    }

    #[test]
    fn constant_arms_give_a_degenerate_bootstrap_interval() {
        let data = line_dataset(
            &[0.1, 0.2, 0.3, 0.4],
            &[0, 0, 1, 1],
            &[4.0, 4.0, 9.0, 9.0],
        );
        let group = full_group(&data);
        let est = interval(
            2,
            &group,
            &data,
            &no_model(),
            IteVariant::TauA,
            IntervalMethod::Bootstrap,
            0.95,
            &ResampleConfig::default(),
            None,
        )
        .unwrap();
        assert_eq!((est.lower, est.upper), (5.0, 5.0));
        assert_eq!(est.n_resamples, Some(1000));
    }

    #[test]
    fn intervals_nest_across_levels() {
        let data = six_unit_data();
        let group = full_group(&data);
        let cfg = ResampleConfig::default();
        for method in [
            IntervalMethod::NaTrue,
            IntervalMethod::NaConservative,
            IntervalMethod::Bootstrap,
            IntervalMethod::Subsample,
        ] {
            let wide = interval(
                4, &group, &data, &no_model(),
                IteVariant::TauB, method, 0.99, &cfg, Some(1.0),
            )
            .unwrap();
            let narrow = interval(
                4, &group, &data, &no_model(),
                IteVariant::TauB, method, 0.95, &cfg, Some(1.0),
            )
            .unwrap();
            assert!(wide.lower <= narrow.lower, "{method}");
            assert!(wide.upper >= narrow.upper, "{method}");
        }
    }

    #[test]
    fn big_bootstraps_agree_across_seeds() {
        let data = six_unit_data();
        let group = full_group(&data);
        let mk = |seed: u64| {
            interval(
                4,
                &group,
                &data,
                &no_model(),
                IteVariant::TauA,
                IntervalMethod::Bootstrap,
                0.95,
                &ResampleConfig {
                    n_resamples: 2000,
                    seed,
                    ..ResampleConfig::default()
                },
                None,
            )
            .unwrap()
        };
        let a = mk(1);
        let b = mk(2);
        let width = a.upper - a.lower;
        assert!((a.lower - b.lower).abs() <= 0.1 * width);
        assert!((a.upper - b.upper).abs() <= 0.1 * width);
    }

    #[test]
    fn same_seed_is_bitwise_reproducible() {
        let data = six_unit_data();
        let group = full_group(&data);
        let cfg = ResampleConfig::default();
        for method in [IntervalMethod::Bootstrap, IntervalMethod::Subsample] {
            let a = interval(
                4, &group, &data, &no_model(),
                IteVariant::TauB, method, 0.95, &cfg, None,
            )
            .unwrap();
            let b = interval(
                4, &group, &data, &no_model(),
                IteVariant::TauB, method, 0.95, &cfg, None,
            )
            .unwrap();
            assert_eq!(a.lower.to_bits(), b.lower.to_bits());
            assert_eq!(a.upper.to_bits(), b.upper.to_bits());
        }
    }

    #[test]
    fn single_control_cannot_be_resampled() {
        let data = line_dataset(&[0.1, 0.2], &[0, 1], &[1.0, 5.0]);
        let group = full_group(&data);
        let err = interval(
            1,
            &group,
            &data,
            &no_model(),
            IteVariant::TauB,
            IntervalMethod::Bootstrap,
            0.95,
            &ResampleConfig::default(),
            None,
        )
        .unwrap_err();
        assert!(matches!(
            err,
            InferenceError::DegenerateGroup { available: 1, required: 2, .. }
        ));
    }

    #[test]
    fn ensemble_methods_need_an_ensemble() {
        let data = six_unit_data();
        let group = full_group(&data);
        for method in [IntervalMethod::NaEnsemble, IntervalMethod::Posterior] {
            let err = interval(
                4,
                &group,
                &data,
                &no_model(),
                IteVariant::TauB,
                method,
                0.95,
                &ResampleConfig::default(),
                None,
            )
            .unwrap_err();
            assert!(matches!(err, InferenceError::MethodUnavailable { .. }), "{method}");
        }
    }

    fn drawn_model() -> ExternalPredictions {
        // Four paired draws per surface: differences {1, 2, 3, 4}.
        let csv = "id,f0,f1,f0_draw_1,f0_draw_2,f0_draw_3,f0_draw_4,\
                   f1_draw_1,f1_draw_2,f1_draw_3,f1_draw_4\n\
                   u4,2.5,5.0,1,2,3,4,2,4,6,8\n\
                   u0,1.0,1.0,1,1,1,1,1,1,1,1\n\
                   u1,2.0,2.0,1,1,1,1,1,1,1,1\n\
                   u2,3.0,3.0,1,1,1,1,1,1,1,1\n\
                   u3,4.0,4.0,1,1,1,1,1,1,1,1\n\
                   u5,9.0,9.0,1,1,1,1,1,1,1,1\n";
        ExternalPredictions::from_csv_reader(csv.as_bytes()).unwrap()
    }

    #[test]
    fn posterior_interval_takes_paired_draw_quantiles() {
        let data = six_unit_data();
        let group = full_group(&data);
        let est = interval(
            4,
            &group,
            &data,
            &drawn_model(),
            IteVariant::TauA,
            IntervalMethod::Posterior,
            0.5,
            &ResampleConfig::default(),
            None,
        )
        .unwrap();
        // Differences {1,2,3,4}: interpolated quartiles 1.75 and 3.25.
        assert_eq!((est.lower, est.upper), (1.75, 3.25));
    }

    #[test]
    fn ensemble_spread_drives_the_normal_proxy() {
        let data = six_unit_data();
        let group = full_group(&data);
        let est = interval(
            4,
            &group,
            &data,
            &drawn_model(),
            IteVariant::TauB,
            IntervalMethod::NaEnsemble,
            0.95,
            &ResampleConfig::default(),
            None,
        )
        .unwrap();
        // Control draws {1,2,3,4}: sample variance 5/3, scaled by n_c = 4.
        let z = Normal::new(0.0, 1.0).unwrap().inverse_cdf(0.975);
        let half = (est.upper - est.lower) / 2.0;
        assert!((half - z * (5.0f64 / 3.0 / 4.0).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn method_names_round_trip() {
        for method in IntervalMethod::ALL {
            let parsed: IntervalMethod = method.to_string().parse().unwrap();
            assert_eq!(parsed, method);
        }
        assert!("waldo".parse::<IntervalMethod>().is_err());
    }
}
