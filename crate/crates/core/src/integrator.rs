//! Classical four-stage Runge-Kutta with step-doubling error control.
//!
//! Every attempt takes two steps of `h` and one step of `2h` from the same
//! state and compares positions. If the largest coordinate difference is
//! within the tolerance the two-step result is kept and the step length is
//! doubled, otherwise the attempt is discarded and the step halved.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::diagnostics::{diagnose, orbital_elements, relative_state, OrbitalDiagnostics};
use crate::forces::{total_acceleration, ForceError, ForceLaw};
use crate::model::{
    build_initial_state, BodyState, InvalidConfig, SimulationConfig, Spring, SystemState, Vec3,
};

pub const DEFAULT_MIN_STEP: f64 = 1e-6;
/// Default upper bound on the step as a fraction of the run length.
pub const DEFAULT_MAX_STEP_FRACTION: f64 = 0.01;

#[derive(Debug, Error)]
pub enum IntegrationError {
    #[error(transparent)]
    Force(#[from] ForceError),
    #[error("step underflow at t = {time} s: step {step} s cannot be halved below the minimum")]
    StepUnderflow { time: f64, step: f64 },
    #[error("non-finite state at t = {time} s")]
    NonFinite { time: f64 },
    #[error("invalid step controller: {0}")]
    InvalidController(String),
    #[error(transparent)]
    Config(#[from] InvalidConfig),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepController {
    pub current_step: f64,
    pub tolerance: f64,
    pub min_step: f64,
    pub max_step: f64,
    pub accepted_count: u64,
    pub rejected_count: u64,
}

impl StepController {
    pub fn new(
        current_step: f64,
        tolerance: f64,
        min_step: f64,
        max_step: f64,
    ) -> Result<Self, IntegrationError> {
        let c = Self {
            current_step,
            tolerance,
            min_step,
            max_step,
            accepted_count: 0,
            rejected_count: 0,
        };
        c.check()?;
        Ok(c)
    }

    pub fn for_config(config: &SimulationConfig) -> Result<Self, IntegrationError> {
        let max_step = DEFAULT_MAX_STEP_FRACTION * config.total_simulation_time;
        let min_step = DEFAULT_MIN_STEP.min(max_step);
        Self::new(
            config.initial_time_step.clamp(min_step, max_step),
            config.tolerance,
            min_step,
            max_step,
        )
    }

    fn check(&self) -> Result<(), IntegrationError> {
        let ok = self.tolerance > 0.0
            && self.min_step > 0.0
            && self.min_step <= self.current_step
            && self.current_step <= self.max_step
            && self.max_step.is_finite();
        if ok {
            Ok(())
        } else {
            Err(IntegrationError::InvalidController(format!("{self:?}")))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepOutcome {
    pub accepted: bool,
    /// Largest absolute positional difference between the two routes, m.
    pub error_estimate: f64,
    pub new_step: f64,
}

fn offset(state: &SystemState, dx: &[Vec3], dv: &[Vec3], h: f64) -> SystemState {
    SystemState {
        time: state.time + h,
        bodies: state
            .bodies
            .iter()
            .zip(dx.iter().zip(dv))
            .map(|(b, (x, v))| BodyState {
                position: b.position + x * h,
                velocity: b.velocity + v * h,
                mass: b.mass,
            })
            .collect(),
    }
}

/// One classical RK4 step of length `h` for positions and velocities.
pub fn rk4_step<F>(state: &SystemState, h: f64, acceleration: F) -> Result<SystemState, IntegrationError>
where
    F: Fn(&SystemState) -> Result<Vec<Vec3>, ForceError>,
{
    let vel = |s: &SystemState| s.bodies.iter().map(|b| b.velocity).collect::<Vec<_>>();

    let v1 = vel(state);
    let a1 = acceleration(state)?;
    let s2 = offset(state, &v1, &a1, 0.5 * h);
    let v2 = vel(&s2);
    let a2 = acceleration(&s2)?;
    let s3 = offset(state, &v2, &a2, 0.5 * h);
    let v3 = vel(&s3);
    let a3 = acceleration(&s3)?;
    let s4 = offset(state, &v3, &a3, h);
    let v4 = vel(&s4);
    let a4 = acceleration(&s4)?;

    let sixth = h / 6.0;
    let bodies = state
        .bodies
        .iter()
        .enumerate()
        .map(|(i, b)| BodyState {
            position: b.position + (v1[i] + (v2[i] + v3[i]) * 2.0 + v4[i]) * sixth,
            velocity: b.velocity + (a1[i] + (a2[i] + a3[i]) * 2.0 + a4[i]) * sixth,
            mass: b.mass,
        })
        .collect();
    let next = SystemState {
        time: state.time + h,
        bodies,
    };
    if !next.is_finite() {
        return Err(IntegrationError::NonFinite { time: state.time });
    }
    Ok(next)
}

fn max_position_difference(a: &SystemState, b: &SystemState) -> f64 {
    a.bodies
        .iter()
        .zip(&b.bodies)
        .flat_map(|(x, y)| (x.position - y.position).iter().map(|d| d.abs()).collect::<Vec<_>>())
        .fold(0.0, f64::max)
}

/// One step-doubling attempt. On rejection the original state is returned
/// unchanged.
pub fn adaptive_advance<F>(
    state: &SystemState,
    controller: &StepController,
    acceleration: F,
) -> Result<(SystemState, StepOutcome, StepController), IntegrationError>
where
    F: Fn(&SystemState) -> Result<Vec<Vec3>, ForceError>,
{
    controller.check()?;
    let h = controller.current_step;
    let half = rk4_step(state, h, &acceleration)?;
    let two_small = rk4_step(&half, h, &acceleration)?;
    let one_big = rk4_step(state, 2.0 * h, &acceleration)?;
    let error_estimate = max_position_difference(&two_small, &one_big);

    let mut next = *controller;
    if error_estimate <= controller.tolerance {
        next.current_step = (2.0 * h).min(controller.max_step);
        next.accepted_count += 1;
        let outcome = StepOutcome {
            accepted: true,
            error_estimate,
            new_step: next.current_step,
        };
        Ok((two_small, outcome, next))
    } else {
        if h <= controller.min_step {
            return Err(IntegrationError::StepUnderflow {
                time: state.time,
                step: h,
            });
        }
        next.current_step = (0.5 * h).max(controller.min_step);
        next.rejected_count += 1;
        let outcome = StepOutcome {
            accepted: false,
            error_estimate,
            new_step: next.current_step,
        };
        Ok((state.clone(), outcome, next))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub time: f64,
    pub step: f64,
    pub accepted: bool,
    pub error_estimate: f64,
}

/// Deliberate positional error added after every accepted step, used to
/// validate artifact attribution against a known cause.
///
/// The satellite is moved rigidly by `magnitude` metres in the direction
/// that lowers the osculating eccentricity fastest.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FaultInjection {
    pub magnitude: f64,
}

pub const DEFAULT_FAULT_MAGNITUDE: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RunOptions {
    pub fault: Option<FaultInjection>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub config: SimulationConfig,
    pub springs: Vec<Spring>,
    pub states: Vec<SystemState>,
    pub diagnostics: Vec<OrbitalDiagnostics>,
    pub steps: Vec<StepRecord>,
    pub fault: Option<FaultInjection>,
    /// Net eccentricity change applied by fault injection over the run.
    pub injected_eccentricity_change: f64,
}

impl Trajectory {
    pub fn accepted_steps(&self) -> usize {
        self.steps.iter().filter(|s| s.accepted).count()
    }

    pub fn rejected_steps(&self) -> usize {
        self.steps.len() - self.accepted_steps()
    }

    pub fn final_state(&self) -> &SystemState {
        self.states.last().expect("trajectory always holds the initial state")
    }

    pub fn eccentricity_series(&self) -> Vec<(f64, f64)> {
        self.diagnostics.iter().map(|d| (d.time, d.eccentricity())).collect()
    }

    pub fn distance_series(&self) -> Vec<(f64, f64)> {
        self.diagnostics.iter().map(|d| (d.time, d.elements.distance)).collect()
    }
}

/// Gradient of the osculating eccentricity with respect to the relative
/// position at fixed velocity.
fn eccentricity_position_gradient(r: &Vec3, v: &Vec3, mu: f64) -> Option<Vec3> {
    let rn = r.norm();
    let e_vec = (r * (v.norm_squared() - mu / rn) - v * r.dot(v)) / mu;
    let e = e_vec.norm();
    if e == 0.0 {
        return None;
    }
    let u = e_vec / e;
    let grad = (u * (v.norm_squared() - mu / rn) + r * (mu * u.dot(r) / rn.powi(3)) - v * u.dot(v)) / mu;
    Some(grad)
}

fn inject_fault(state: &mut SystemState, fault: &FaultInjection, config: &SimulationConfig) -> f64 {
    let total_mass: f64 = state.bodies.iter().map(|b| b.mass).sum();
    let mu = config.constants.gravitational_constant * total_mass;
    let (r, v) = relative_state(state);
    let before = orbital_elements(&r, &v, total_mass, &config.constants).eccentricity;
    let Some(grad) = eccentricity_position_gradient(&r, &v, mu) else {
        return 0.0;
    };
    let norm = grad.norm();
    if norm == 0.0 || !norm.is_finite() {
        return 0.0;
    }
    let shift = -grad / norm * fault.magnitude;
    let n = state.bodies.len();
    for body in &mut state.bodies[..n - 1] {
        body.position += shift;
    }
    let (r, v) = relative_state(state);
    let after = orbital_elements(&r, &v, total_mass, &config.constants).eccentricity;
    match (before, after) {
        (Some(b), Some(a)) => a - b,
        _ => 0.0,
    }
}

pub fn run(config: &SimulationConfig) -> Result<Trajectory, IntegrationError> {
    run_with(config, &RunOptions::default())
}

/// Integrates from the initial state to `total_simulation_time`, landing
/// exactly on every multiple of `output_interval` (and on the final time)
/// to take a sample.
pub fn run_with(config: &SimulationConfig, options: &RunOptions) -> Result<Trajectory, IntegrationError> {
    let (initial, springs) = build_initial_state(config)?;
    let law = ForceLaw::gravity(&config.constants);
    let accel = |s: &SystemState| total_acceleration(s, &springs, &law);

    let mut trajectory = Trajectory {
        config: config.clone(),
        springs: springs.clone(),
        diagnostics: vec![diagnose(&initial, &springs, &config.constants)],
        states: vec![initial.clone()],
        steps: Vec::new(),
        fault: options.fault,
        injected_eccentricity_change: 0.0,
    };
    let total = config.total_simulation_time;
    if total <= 0.0 {
        return Ok(trajectory);
    }

    let mut controller = StepController::for_config(config)?;
    let mut state = initial;
    let mut sample_index: u64 = 1;
    loop {
        let target = (sample_index as f64 * config.output_interval).min(total);
        while state.time < target {
            let remaining = target - state.time;
            let nominal = controller.current_step;
            let landing = 2.0 * nominal >= remaining;
            let h = if landing { 0.5 * remaining } else { nominal };
            let attempt_ctl = StepController {
                current_step: h,
                min_step: controller.min_step.min(h),
                ..controller
            };
            let (next, outcome, after) = adaptive_advance(&state, &attempt_ctl, accel)?;
            trajectory.steps.push(StepRecord {
                time: state.time,
                step: h,
                accepted: outcome.accepted,
                error_estimate: outcome.error_estimate,
            });
            controller.accepted_count = after.accepted_count;
            controller.rejected_count = after.rejected_count;
            if outcome.accepted {
                state = next;
                if landing {
                    state.time = target;
                }
                if let Some(fault) = &options.fault {
                    trajectory.injected_eccentricity_change += inject_fault(&mut state, fault, config);
                }
                // a shortened landing step does not grow the nominal step
                if h == nominal {
                    controller.current_step = outcome.new_step;
                }
            } else {
                controller.current_step = outcome.new_step.min(nominal);
            }
        }
        trajectory
            .diagnostics
            .push(diagnose(&state, &springs, &config.constants));
        trajectory.states.push(state.clone());
        if target >= total {
            break;
        }
        sample_index += 1;
    }
    Ok(trajectory)
}
