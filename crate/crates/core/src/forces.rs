//! Spring, dissipative and long-range pair forces, and the per-body
//! accelerations they produce.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{BodyState, PhysicalConstants, Spring, SystemState, Vec3};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ForceKind {
    /// Attractive, coupling `G`, with body masses.
    InverseSquareGravity,
    /// Like charges repel; body masses are read as charges.
    InverseSquareCoulomb,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ForceLaw {
    pub kind: ForceKind,
    pub coupling: f64,
}

impl ForceLaw {
    pub fn gravity(constants: &PhysicalConstants) -> Self {
        Self {
            kind: ForceKind::InverseSquareGravity,
            coupling: constants.gravitational_constant,
        }
    }

    pub fn coulomb(coupling: f64) -> Self {
        Self {
            kind: ForceKind::InverseSquareCoulomb,
            coupling,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ForceError {
    #[error("bodies {0} and {1} coincide (singular interaction)")]
    Singularity(usize, usize),
    #[error("invalid force law coupling {0}")]
    BadCoupling(f64),
}

/// Signed axial spring force, positive when it pulls the two ends inward.
///
/// `length_rate` is positive while the spring lengthens. The damping term
/// always opposes the length change, so it removes mechanical energy:
/// `k (l' - l) + c dl'/dt` measured inward.
pub fn spring_axial_force(current_length: f64, length_rate: f64, spring: &Spring) -> f64 {
    spring.stiffness * (current_length - spring.rest_length) + spring.damping * length_rate
}

fn pair_force(xi: &Vec3, mi: f64, xj: &Vec3, mj: f64, law: &ForceLaw) -> Option<Vec3> {
    let sep = xj - xi;
    let r2 = sep.norm_squared();
    if r2 == 0.0 {
        return None;
    }
    // r³ written as (r²)^1.5
    let r3 = r2 * r2.sqrt();
    let magnitude = law.coupling * mi * mj / r3;
    Some(match law.kind {
        ForceKind::InverseSquareGravity => sep * magnitude,
        ForceKind::InverseSquareCoulomb => -sep * magnitude,
    })
}

/// Force exerted on `body_i` by `body_j`.
pub fn pairwise_long_range_force(
    body_i: &BodyState,
    body_j: &BodyState,
    law: &ForceLaw,
) -> Result<Vec3, ForceError> {
    if !law.coupling.is_finite() || law.coupling == 0.0 {
        return Err(ForceError::BadCoupling(law.coupling));
    }
    pair_force(&body_i.position, body_i.mass, &body_j.position, body_j.mass, law)
        .ok_or(ForceError::Singularity(0, 1))
}

/// Net force on every body: all-pairs long-range interaction plus the axial
/// spring/dissipative force of each spring, applied inward at both ends.
pub fn total_force(
    state: &SystemState,
    springs: &[Spring],
    law: &ForceLaw,
) -> Result<Vec<Vec3>, ForceError> {
    if !law.coupling.is_finite() || law.coupling == 0.0 {
        return Err(ForceError::BadCoupling(law.coupling));
    }
    let bodies = &state.bodies;
    let mut forces = vec![Vec3::zeros(); bodies.len()];
    for i in 0..bodies.len() {
        for j in i + 1..bodies.len() {
            let f = pair_force(
                &bodies[i].position,
                bodies[i].mass,
                &bodies[j].position,
                bodies[j].mass,
                law,
            )
            .ok_or(ForceError::Singularity(i, j))?;
            forces[i] += f;
            forces[j] -= f;
        }
    }
    for spring in springs {
        let (a, b) = (spring.endpoint_a, spring.endpoint_b);
        let dif = bodies[a].position - bodies[b].position;
        let length = dif.norm();
        if length == 0.0 {
            return Err(ForceError::Singularity(a, b));
        }
        let axis = dif / length;
        let rate = (bodies[a].velocity - bodies[b].velocity).dot(&axis);
        let f = axis * spring_axial_force(length, rate, spring);
        forces[a] -= f;
        forces[b] += f;
    }
    Ok(forces)
}

pub fn total_acceleration(
    state: &SystemState,
    springs: &[Spring],
    law: &ForceLaw,
) -> Result<Vec<Vec3>, ForceError> {
    let forces = total_force(state, springs, law)?;
    Ok(forces
        .into_iter()
        .zip(&state.bodies)
        .map(|(f, b)| f / b.mass)
        .collect())
}
