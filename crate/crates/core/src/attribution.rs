//! Convergence studies that decide whether the secular eccentricity trend
//! is physical or a numerical artifact.
//!
//! A study re-runs one configuration at successively tighter tolerances,
//! measures the per-orbit drift of the baseline eccentricity at each level,
//! and extrapolates the drift linearly in the tolerance to the
//! zero-tolerance limit.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::diagnostics::median_of;
use crate::integrator::{run_with, FaultInjection, RunOptions};
use crate::model::{validate_config, SimulationConfig};

/// Minimum per-decade shrink factor of the drift for an artifact verdict.
pub const ARTIFACT_DECAY_PER_DECADE: f64 = 4.0;
/// Number of standard errors within which a limit counts as zero.
pub const ZERO_TEST_SIGMAS: f64 = 2.0;
/// Per-decade drift ratio band that counts as tolerance-invariant.
pub const INVARIANT_RATIO_BAND: (f64, f64) = (0.5, 2.0);

#[derive(Debug, Error, PartialEq)]
pub enum AttributionError {
    #[error("series spans {orbits:.2} orbital periods, at least 3 are needed")]
    SeriesTooShort { orbits: f64 },
    #[error("orbit {0} has no bound samples")]
    EmptyOrbit(usize),
    #[error("orbital period must be positive and finite")]
    BadPeriod,
    #[error("a study needs at least 2 tolerance levels, got {0}")]
    TooFewLevels(usize),
    #[error("tolerance divisors must be positive and strictly increasing")]
    BadDivisors,
    #[error("invalid base configuration: {0}")]
    InvalidConfig(String),
    #[error("only {succeeded} of {total} levels succeeded; at least 2 are needed")]
    InsufficientLevels { succeeded: usize, total: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DriftEstimate {
    /// Eccentricity change per orbital period.
    pub per_orbit: f64,
    pub std_error: f64,
    pub orbits: usize,
}

/// Least-squares slope of the per-orbit median eccentricity.
///
/// The series is cut into consecutive whole orbital periods from its first
/// sample; the median of each period is robust to the single periapsis
/// spike it contains. A trailing partial period is ignored.
pub fn secular_drift(
    series: &[(f64, f64)],
    orbital_period: f64,
) -> Result<DriftEstimate, AttributionError> {
    if !(orbital_period > 0.0 && orbital_period.is_finite()) {
        return Err(AttributionError::BadPeriod);
    }
    let (t0, t1) = match (series.first(), series.last()) {
        (Some(a), Some(b)) => (a.0, b.0),
        _ => return Err(AttributionError::SeriesTooShort { orbits: 0.0 }),
    };
    let span = (t1 - t0) / orbital_period;
    // sample grids rarely land exactly on the period boundary
    let orbits = (span + 1e-9).floor() as usize;
    if orbits < 3 {
        return Err(AttributionError::SeriesTooShort { orbits: span });
    }
    let mut medians = Vec::with_capacity(orbits);
    for k in 0..orbits {
        let lo = t0 + k as f64 * orbital_period;
        let hi = lo + orbital_period;
        let bin: Vec<f64> = series
            .iter()
            .filter(|(t, e)| *t >= lo && *t < hi && e.is_finite())
            .map(|p| p.1)
            .collect();
        if bin.is_empty() {
            return Err(AttributionError::EmptyOrbit(k));
        }
        medians.push(median_of(&bin));
    }
    let xs: Vec<f64> = (0..orbits).map(|k| k as f64).collect();
    let fit = least_squares(&xs, &medians, None);
    Ok(DriftEstimate {
        per_orbit: fit.slope,
        std_error: fit.slope_se,
        orbits,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct LineFit {
    intercept: f64,
    slope: f64,
    slope_se: f64,
    /// Residual-based variance of the intercept (zero with two points).
    intercept_var_resid: f64,
    /// `intercept = sum(w_i y_i)`; used to propagate per-point errors.
    weights_sq_sum: Option<f64>,
}

fn least_squares(xs: &[f64], ys: &[f64], point_se: Option<&[f64]>) -> LineFit {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ssr: f64 = xs
        .iter()
        .zip(ys)
        .map(|(x, y)| (y - intercept - slope * x).powi(2))
        .sum();
    let dof = xs.len().saturating_sub(2);
    let sigma2 = if dof > 0 { ssr / dof as f64 } else { 0.0 };
    let slope_se = (sigma2 / sxx).sqrt();
    let intercept_var_resid = sigma2 * (1.0 / n + mx * mx / sxx);
    // intercept weights: w_i = 1/n - mx (x_i - mx) / sxx
    let weights_sq_sum = point_se.map(|se| {
        xs.iter()
            .zip(se)
            .map(|(x, s)| (1.0 / n - mx * (x - mx) / sxx).powi(2) * s * s)
            .sum()
    });
    LineFit {
        intercept,
        slope,
        slope_se,
        intercept_var_resid,
        weights_sq_sum,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelRun {
    pub series: Vec<(f64, f64)>,
    pub drift: DriftEstimate,
    pub accepted_steps: usize,
    pub rejected_steps: usize,
    /// Ground-truth drift per orbit put in by fault injection.
    pub injected_drift_per_orbit: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyLevel {
    pub divisor: f64,
    pub tolerance: f64,
    /// `Err` holds the reason the level failed.
    pub outcome: Result<LevelRun, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceStudy {
    pub base: SimulationConfig,
    pub orbital_period: f64,
    pub fault: Option<FaultInjection>,
    pub levels: Vec<StudyLevel>,
}

impl ConvergenceStudy {
    /// Builds a study from precomputed drifts, one per tolerance level, for
    /// classification without running simulations.
    pub fn from_drifts(
        base: SimulationConfig,
        orbital_period: f64,
        levels: &[(f64, DriftEstimate)],
    ) -> Self {
        let levels = levels
            .iter()
            .map(|&(divisor, drift)| StudyLevel {
                divisor,
                tolerance: base.tolerance / divisor,
                outcome: Ok(LevelRun {
                    series: Vec::new(),
                    drift,
                    accepted_steps: 0,
                    rejected_steps: 0,
                    injected_drift_per_orbit: None,
                }),
            })
            .collect();
        Self {
            base,
            orbital_period,
            fault: None,
            levels,
        }
    }

    pub fn successful(&self) -> impl Iterator<Item = (&StudyLevel, &LevelRun)> {
        self.levels
            .iter()
            .filter_map(|l| l.outcome.as_ref().ok().map(|r| (l, r)))
    }
}

/// Runs the configuration once per tolerance divisor, in parallel.
///
/// With fault injection the perturbation magnitude is divided by the same
/// divisor as the tolerance, so the injected error behaves like a
/// discretization error that vanishes as the tolerance goes to zero.
pub fn run_study(
    config: &SimulationConfig,
    divisors: &[f64],
    fault: Option<FaultInjection>,
) -> Result<ConvergenceStudy, AttributionError> {
    if divisors.len() < 2 {
        return Err(AttributionError::TooFewLevels(divisors.len()));
    }
    let increasing = divisors.windows(2).all(|w| w[0] < w[1]);
    if !increasing || divisors.iter().any(|d| !(*d > 0.0 && d.is_finite())) {
        return Err(AttributionError::BadDivisors);
    }
    validate_config(config).map_err(|v| {
        AttributionError::InvalidConfig(
            v.iter().map(ToString::to_string).collect::<Vec<_>>().join("; "),
        )
    })?;
    let period = config.orbital_period();

    let levels: Vec<StudyLevel> = divisors
        .par_iter()
        .map(|&divisor| {
            let level_config = SimulationConfig {
                tolerance: config.tolerance / divisor,
                ..config.clone()
            };
            let options = RunOptions {
                fault: fault.map(|f| FaultInjection {
                    magnitude: f.magnitude / divisor,
                }),
            };
            let outcome = run_with(&level_config, &options)
                .map_err(|e| e.to_string())
                .and_then(|trajectory| {
                    let series = trajectory.eccentricity_series();
                    let drift = secular_drift(&series, period).map_err(|e| e.to_string())?;
                    let orbits = config.total_simulation_time / period;
                    Ok(LevelRun {
                        injected_drift_per_orbit: trajectory
                            .fault
                            .map(|_| trajectory.injected_eccentricity_change / orbits),
                        accepted_steps: trajectory.accepted_steps(),
                        rejected_steps: trajectory.rejected_steps(),
                        drift,
                        series,
                    })
                });
            StudyLevel {
                divisor,
                tolerance: level_config.tolerance,
                outcome,
            }
        })
        .collect();

    let succeeded = levels.iter().filter(|l| l.outcome.is_ok()).count();
    if succeeded < 2 {
        return Err(AttributionError::InsufficientLevels {
            succeeded,
            total: levels.len(),
        });
    }
    Ok(ConvergenceStudy {
        base: config.clone(),
        orbital_period: period,
        fault,
        levels,
    })
}

/// Injected drift recovered at one tolerance level.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InjectionRecovery {
    pub tolerance: f64,
    /// Faulted drift minus clean drift, per orbit.
    pub recovered: f64,
    /// Drift the fault actually put in, per orbit.
    pub injected: f64,
}

impl InjectionRecovery {
    pub fn relative_error(&self) -> f64 {
        ((self.recovered - self.injected) / self.injected).abs()
    }
}

/// Separates the injected drift from the integrator's own drift.
///
/// The clean and faulted studies share every setting except the fault, so
/// at each tolerance level the two runs take the same steps and the drift
/// difference isolates what the fault contributed. Levels that failed in
/// either study, or that carry no injection record, are skipped.
pub fn recover_injected_drift(
    faulted: &ConvergenceStudy,
    clean: &ConvergenceStudy,
) -> Vec<InjectionRecovery> {
    faulted
        .successful()
        .filter_map(|(level, run)| {
            let injected = run.injected_drift_per_orbit?;
            let reference = clean
                .successful()
                .find(|(l, _)| l.tolerance == level.tolerance)?
                .1;
            Some(InjectionRecovery {
                tolerance: level.tolerance,
                recovered: run.drift.per_orbit - reference.drift.per_orbit,
                injected,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Verdict {
    Physical,
    NumericalArtifact,
    Mixed,
    Undetermined,
}

impl std::fmt::Display for Verdict {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Physical => "Physical",
            Self::NumericalArtifact => "NumericalArtifact",
            Self::Mixed => "Mixed",
            Self::Undetermined => "Undetermined",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureClassification {
    pub verdict: Verdict,
    /// Drift extrapolated to zero tolerance, per orbit.
    pub converged_drift: f64,
    pub converged_std_error: f64,
    /// Tolerance-dependent part of the drift at the loosest level.
    pub numerical_component: f64,
    /// Drift shrink factor per tolerance decade between consecutive levels.
    pub decade_ratios: Vec<f64>,
    pub levels_used: usize,
}

pub fn classify_trend(study: &ConvergenceStudy) -> FeatureClassification {
    let points: Vec<(f64, DriftEstimate)> = study
        .successful()
        .map(|(level, run)| (level.tolerance, run.drift))
        .collect();
    classify_points(&points)
}

fn classify_points(points: &[(f64, DriftEstimate)]) -> FeatureClassification {
    let undetermined = |levels_used| FeatureClassification {
        verdict: Verdict::Undetermined,
        converged_drift: f64::NAN,
        converged_std_error: f64::NAN,
        numerical_component: f64::NAN,
        decade_ratios: Vec::new(),
        levels_used,
    };
    if points.len() < 2 {
        return undetermined(points.len());
    }
    let tolerances: Vec<f64> = points.iter().map(|p| p.0).collect();
    let drifts: Vec<f64> = points.iter().map(|p| p.1.per_orbit).collect();
    let ses: Vec<f64> = points.iter().map(|p| p.1.std_error).collect();

    let fit = least_squares(&tolerances, &drifts, Some(&ses));
    let scale = drifts.iter().fold(0.0f64, |m, d| m.max(d.abs()));
    // floor at accumulated rounding of the fit itself
    let se = (fit.intercept_var_resid + fit.weights_sq_sum.unwrap_or(0.0))
        .sqrt()
        .max(1e3 * f64::EPSILON * scale);
    let limit = fit.intercept;

    let decade_ratios: Vec<f64> = points
        .windows(2)
        .map(|w| {
            let decades = (w[0].0 / w[1].0).log10();
            (w[0].1.per_orbit.abs() / w[1].1.per_orbit.abs()).powf(1.0 / decades)
        })
        .collect();

    let limit_is_zero = limit.abs() <= ZERO_TEST_SIGMAS * se;
    let shrinking = decade_ratios.iter().all(|r| *r >= ARTIFACT_DECAY_PER_DECADE);
    let invariant = decade_ratios
        .iter()
        .all(|r| (INVARIANT_RATIO_BAND.0..=INVARIANT_RATIO_BAND.1).contains(r));
    let numerical_component = drifts[0] - limit;
    let loosest_se = ses[0].max(se);
    let dependent = numerical_component.abs() > ZERO_TEST_SIGMAS * loosest_se;

    let verdict = if scale == 0.0 {
        Verdict::Undetermined
    } else if limit_is_zero && shrinking {
        Verdict::NumericalArtifact
    } else if invariant && !limit_is_zero {
        Verdict::Physical
    } else if !limit_is_zero && dependent {
        Verdict::Mixed
    } else {
        Verdict::Undetermined
    };
    FeatureClassification {
        verdict,
        converged_drift: limit,
        converged_std_error: se,
        numerical_component,
        decade_ratios,
        levels_used: points.len(),
    }
}
