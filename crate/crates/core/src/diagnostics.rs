//! Osculating orbital elements, energies, the spin/orbit split of angular
//! momentum, and periapsis spike detection.
//!
//! The "orbit" is that of the satellite's centre of mass relative to the
//! planet. Elements use the total mass of all bodies in the gravitational
//! parameter.

use serde::{Deserialize, Serialize};

use crate::model::{PhysicalConstants, Spring, SystemState, Vec3};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OrbitalElements {
    /// R, m
    pub distance: f64,
    /// EN, J/kg
    pub specific_energy: f64,
    /// H2, m⁴/s²
    pub angular_momentum_sq: f64,
    /// `None` for unbound states (EN ≥ 0).
    pub semi_major_axis: Option<f64>,
    pub eccentricity: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OrbitalDiagnostics {
    pub time: f64,
    pub elements: OrbitalElements,
    pub orbital_angular_momentum: Vec3,
    pub spin_angular_momentum: Vec3,
    pub total_angular_momentum: Vec3,
    pub total_mechanical_energy: f64,
}

impl OrbitalDiagnostics {
    pub fn eccentricity(&self) -> f64 {
        self.elements.eccentricity.unwrap_or(f64::NAN)
    }
}

/// Centre-of-mass position and velocity of the satellite relative to the
/// planet.
pub fn relative_state(state: &SystemState) -> (Vec3, Vec3) {
    let planet = state.planet();
    let satellite = state.satellite();
    let mass: f64 = satellite.iter().map(|b| b.mass).sum();
    let pos: Vec3 = satellite.iter().map(|b| b.position * b.mass).sum::<Vec3>() / mass;
    let vel: Vec3 = satellite.iter().map(|b| b.velocity * b.mass).sum::<Vec3>() / mass;
    (pos - planet.position, vel - planet.velocity)
}

pub fn orbital_elements(
    r: &Vec3,
    v: &Vec3,
    total_mass: f64,
    constants: &PhysicalConstants,
) -> OrbitalElements {
    let mu = constants.gravitational_constant * total_mass;
    let distance = r.norm();
    let specific_energy = -mu / distance + 0.5 * v.norm_squared();
    let d = r.cross(v);
    let angular_momentum_sq = d.x * d.x + d.y * d.y + d.z * d.z;
    let (semi_major_axis, eccentricity) = if specific_energy < 0.0 {
        let a = -mu / (2.0 * specific_energy);
        let e = (1.0 - angular_momentum_sq / (mu * a)).max(0.0).sqrt();
        (Some(a), Some(e))
    } else {
        (None, None)
    };
    OrbitalElements {
        distance,
        specific_energy,
        angular_momentum_sq,
        semi_major_axis,
        eccentricity,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpinOrbit {
    /// Satellite mass times `r × v` of the relative orbit.
    pub orbital: Vec3,
    /// Angular momentum of the satellite components about their centroid.
    pub spin: Vec3,
    /// Everything else: barycentre motion and the planet's reflex share.
    /// The three parts sum to the total angular momentum.
    pub remainder: Vec3,
}

pub fn total_angular_momentum(state: &SystemState) -> Vec3 {
    state
        .bodies
        .iter()
        .map(|b| b.position.cross(&(b.velocity * b.mass)))
        .sum()
}

pub fn spin_orbit_decomposition(state: &SystemState) -> SpinOrbit {
    let satellite = state.satellite();
    let mass: f64 = satellite.iter().map(|b| b.mass).sum();
    let centroid: Vec3 = satellite.iter().map(|b| b.position * b.mass).sum::<Vec3>() / mass;
    let centroid_vel: Vec3 = satellite.iter().map(|b| b.velocity * b.mass).sum::<Vec3>() / mass;
    let spin: Vec3 = satellite
        .iter()
        .map(|b| (b.position - centroid).cross(&((b.velocity - centroid_vel) * b.mass)))
        .sum();
    let (r, v) = relative_state(state);
    let orbital = r.cross(&v) * mass;
    let remainder = total_angular_momentum(state) - orbital - spin;
    SpinOrbit {
        orbital,
        spin,
        remainder,
    }
}

/// Kinetic plus gravitational plus spring potential energy, with the
/// potential zero at infinite separation.
pub fn total_mechanical_energy(
    state: &SystemState,
    springs: &[Spring],
    constants: &PhysicalConstants,
) -> f64 {
    let bodies = &state.bodies;
    let kinetic: f64 = bodies.iter().map(|b| 0.5 * b.mass * b.velocity.norm_squared()).sum();
    let mut potential = 0.0;
    for i in 0..bodies.len() {
        for j in i + 1..bodies.len() {
            potential -= constants.gravitational_constant * bodies[i].mass * bodies[j].mass
                / (bodies[i].position - bodies[j].position).norm();
        }
    }
    let elastic: f64 = springs
        .iter()
        .map(|s| {
            let l = (bodies[s.endpoint_a].position - bodies[s.endpoint_b].position).norm();
            0.5 * s.stiffness * (l - s.rest_length).powi(2)
        })
        .sum();
    kinetic + potential + elastic
}

pub fn diagnose(
    state: &SystemState,
    springs: &[Spring],
    constants: &PhysicalConstants,
) -> OrbitalDiagnostics {
    let (r, v) = relative_state(state);
    let total_mass: f64 = state.bodies.iter().map(|b| b.mass).sum();
    let split = spin_orbit_decomposition(state);
    OrbitalDiagnostics {
        time: state.time,
        elements: orbital_elements(&r, &v, total_mass, constants),
        orbital_angular_momentum: split.orbital,
        spin_angular_momentum: split.spin,
        total_angular_momentum: split.orbital + split.spin + split.remainder,
        total_mechanical_energy: total_mechanical_energy(state, springs, constants),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpikeEvent {
    pub time: f64,
    pub peak_eccentricity: f64,
    pub baseline_eccentricity: f64,
    /// Span over which the series stays above the prominence threshold.
    pub width: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpikeDetector {
    /// Length of the running-median baseline window, normally one orbital
    /// period.
    pub window: f64,
    /// Threshold in units of the median absolute deviation of the residual.
    pub prominence_factor: f64,
}

impl SpikeDetector {
    pub fn new(window: f64) -> Self {
        Self {
            window,
            prominence_factor: 5.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SpikeDetection {
    pub events: Vec<SpikeEvent>,
    /// Set when the series is shorter than one baseline window.
    pub too_short: bool,
    pub threshold: f64,
}

fn median(values: &mut [f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

pub(crate) fn median_of(values: &[f64]) -> f64 {
    median(&mut values.to_vec())
}

/// Running median over a centred window of `window` seconds.
fn running_baseline(series: &[(f64, f64)], window: f64) -> Vec<f64> {
    let half = 0.5 * window;
    let mut lo = 0;
    let mut hi = 0;
    let mut buf = Vec::new();
    series
        .iter()
        .map(|&(t, _)| {
            while series[lo].0 < t - half {
                lo += 1;
            }
            while hi < series.len() && series[hi].0 <= t + half {
                hi += 1;
            }
            buf.clear();
            buf.extend(series[lo..hi].iter().map(|p| p.1).filter(|e| e.is_finite()));
            median(&mut buf)
        })
        .collect()
}

impl SpikeDetector {
    /// Finds local maxima that rise above the running-median baseline by
    /// more than `prominence_factor` times the median absolute deviation of
    /// the baseline residual. One event is reported per contiguous
    /// above-threshold excursion, at its highest sample.
    pub fn detect(&self, series: &[(f64, f64)]) -> SpikeDetection {
        let span = match (series.first(), series.last()) {
            (Some(a), Some(b)) => b.0 - a.0,
            _ => 0.0,
        };
        if series.len() < 3 || span < self.window {
            return SpikeDetection {
                events: Vec::new(),
                too_short: true,
                threshold: f64::NAN,
            };
        }
        let baseline = running_baseline(series, self.window);
        let residual: Vec<f64> = series.iter().zip(&baseline).map(|(p, b)| p.1 - b).collect();
        let mad = {
            let mut abs: Vec<f64> = residual
                .iter()
                .filter(|r| r.is_finite())
                .map(|r| r.abs())
                .collect();
            median(&mut abs)
        };
        let threshold = self.prominence_factor * mad;

        // NaN residuals (unbound samples) never count as above threshold
        let above = |r: f64| r > threshold;
        let mut events = Vec::new();
        let mut i = 0;
        while i < series.len() {
            if !above(residual[i]) {
                i += 1;
                continue;
            }
            let start = i;
            while i < series.len() && above(residual[i]) {
                i += 1;
            }
            let end = i; // exclusive
            let apex = (start..end)
                .max_by(|&a, &b| series[a].1.total_cmp(&series[b].1))
                .expect("non-empty excursion");
            let is_local_max = (apex == 0 || series[apex - 1].1 <= series[apex].1)
                && (apex + 1 == series.len() || series[apex + 1].1 <= series[apex].1);
            // excursions cut by either end of the series are not spikes
            if !is_local_max || start == 0 || end == series.len() {
                continue;
            }
            let width = series[end].0 - series[start - 1].0;
            events.push(SpikeEvent {
                time: series[apex].0,
                peak_eccentricity: series[apex].1,
                baseline_eccentricity: baseline[apex],
                width,
            });
        }
        SpikeDetection {
            events,
            too_short: false,
            threshold,
        }
    }
}

/// Times of the local minima of the orbital distance.
pub fn periapsis_times(samples: &[(f64, f64)]) -> Vec<f64> {
    samples
        .windows(3)
        .filter(|w| w[1].1 < w[0].1 && w[1].1 <= w[2].1)
        .map(|w| w[1].0)
        .collect()
}

/// Pearson correlation; `None` when either input has zero variance.
pub fn correlation(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len().min(y.len());
    if n < 2 {
        return None;
    }
    let mx = x[..n].iter().sum::<f64>() / n as f64;
    let my = y[..n].iter().sum::<f64>() / n as f64;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for k in 0..n {
        let (dx, dy) = (x[k] - mx, y[k] - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some(sxy / (sxx * syy).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_initial_state, BodyState, SimulationConfig};
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn reference_state() -> (SystemState, Vec<Spring>, SimulationConfig) {
        let cfg = SimulationConfig::reference();
        let (s, sp) = build_initial_state(&cfg).unwrap();
        (s, sp, cfg)
    }

    #[test]
    fn initial_distance() {
        let (state, _, _) = reference_state();
        let (r, v) = relative_state(&state);
        assert_relative_eq!(r.norm(), 1e8, max_relative = 1e-15);
        assert_eq!(r.y, 0.0);
        assert!(v.y > 0.0);
    }

    #[test]
    fn coincident_velocities_give_zero_relative_velocity() {
        let (mut state, _, _) = reference_state();
        for b in &mut state.bodies {
            b.velocity = Vec3::new(1.0, 2.0, 3.0);
        }
        assert_eq!(relative_state(&state).1, Vec3::zeros());
    }

    #[test]
    fn equal_mass_centroid_is_arithmetic_mean() {
        let (state, _, _) = reference_state();
        let mean: Vec3 = state.satellite().iter().map(|b| b.position).sum::<Vec3>() / 3.0;
        let (r, _) = relative_state(&state);
        assert_relative_eq!(r, mean, max_relative = 1e-15);
    }

    #[test]
    fn initial_elements_match_setup() {
        let (state, _, cfg) = reference_state();
        let (r, v) = relative_state(&state);
        let el = orbital_elements(&r, &v, 2e27 + 3e22, &cfg.constants);
        // EN = -G TOTM / R + v²/2 = -1.33342e9 + 0.5 * 2.30946e4²
        assert_relative_eq!(el.specific_energy, -1.06674e9, max_relative = 1e-5);
        let mu: f64 = 6.667e-11 * (2e27 + 3e22);
        assert_relative_eq!(el.specific_energy, -mu / (2.0 * 6.25e7), max_relative = 1e-13);
        assert_relative_eq!(el.semi_major_axis.unwrap(), 6.25e7, max_relative = 1e-12);
        assert_relative_eq!(el.eccentricity.unwrap(), 0.6, max_relative = 1e-6);
    }

    #[test]
    fn circular_orbit_has_zero_eccentricity() {
        let c = PhysicalConstants::default();
        let mu = c.gravitational_constant * 1e27;
        let r = Vec3::new(1e8, 0.0, 0.0);
        let v = Vec3::new(0.0, (mu / 1e8).sqrt(), 0.0);
        let el = orbital_elements(&r, &v, 1e27, &c);
        assert!(el.eccentricity.unwrap() < 1e-7);
    }

    #[test]
    fn radial_orbit_has_unit_eccentricity() {
        let c = PhysicalConstants::default();
        let r = Vec3::new(1e8, 0.0, 0.0);
        let v = Vec3::new(-3e3, 0.0, 0.0);
        let el = orbital_elements(&r, &v, 1e27, &c);
        assert_eq!(el.angular_momentum_sq, 0.0);
        assert_eq!(el.eccentricity, Some(1.0));
    }

    #[test]
    fn unbound_orbit_has_no_elements() {
        let c = PhysicalConstants::default();
        let el = orbital_elements(&Vec3::new(1e8, 0., 0.), &Vec3::new(0., 1e5, 0.), 1e27, &c);
        assert!(el.specific_energy > 0.0);
        assert_eq!(el.semi_major_axis, None);
        assert_eq!(el.eccentricity, None);
    }

    /// Eccentricity from the eccentricity vector, an independent route.
    fn eccentricity_vector_oracle(r: &Vec3, v: &Vec3, mu: f64) -> f64 {
        let e = (r * (v.norm_squared() - mu / r.norm()) - v * r.dot(v)) / mu;
        e.norm()
    }

    proptest! {
        #[test]
        fn eccentricity_matches_vector_oracle(
            rx in 5e7f64..2e8, ry in -5e7f64..5e7,
            vx in -5e3f64..5e3, vy in 1e4f64..3e4, vz in -2e3f64..2e3,
        ) {
            let c = PhysicalConstants::default();
            let total = 2e27 + 3e22;
            let r = Vec3::new(rx, ry, 0.0);
            let v = Vec3::new(vx, vy, vz);
            let el = orbital_elements(&r, &v, total, &c);
            prop_assume!(el.specific_energy < 0.0);
            let oracle = eccentricity_vector_oracle(&r, &v, c.gravitational_constant * total);
            // below this, 1 - H2/(mu a) cancels too much for a 1e-12 comparison
            prop_assume!(oracle > 0.05);
            let e = el.eccentricity.unwrap();
            prop_assert!((e - oracle).abs() <= 1e-12 * oracle, "{} vs {}", e, oracle);
        }
    }

    #[test]
    fn zero_spin_initially() {
        let (state, _, _) = reference_state();
        let split = spin_orbit_decomposition(&state);
        assert_eq!(split.spin, Vec3::zeros());
    }

    #[test]
    fn rigid_rotation_spin_is_i_omega() {
        let (mut state, _, _) = reference_state();
        let omega = 1e-3;
        let centroid: Vec3 = state.satellite().iter().map(|b| b.position).sum::<Vec3>() / 3.0;
        let w = Vec3::new(0.0, 0.0, omega);
        for b in state.bodies.iter_mut().take(3) {
            b.velocity += w.cross(&(b.position - centroid));
        }
        // I = 3 (m/3) (l/√3)² = m l² / 3 for an equilateral triangle
        let inertia: f64 = state.satellite().iter().map(|b| b.mass * (b.position - centroid).norm_squared()).sum();
        assert_relative_eq!(inertia, 3e22 * 1e12 / 3.0, max_relative = 1e-9);
        let spin = spin_orbit_decomposition(&state).spin;
        assert_relative_eq!(spin.z, inertia * omega, max_relative = 1e-9);
    }

    #[test]
    fn decomposition_sums_to_total() {
        let (mut state, _, _) = reference_state();
        state.bodies[1].velocity += Vec3::new(30.0, -12.0, 4.0);
        state.bodies[3].velocity = Vec3::new(-0.3, 0.1, 0.0);
        state.bodies[3].position = Vec3::new(1e3, -2e3, 5.0);
        let s = spin_orbit_decomposition(&state);
        let total = total_angular_momentum(&state);
        let direct: Vec3 = state.bodies.iter().map(|b| b.mass * b.position.cross(&b.velocity)).sum();
        assert_relative_eq!(s.orbital + s.spin + s.remainder, total, max_relative = 1e-14);
        assert_relative_eq!(total, direct, max_relative = 1e-14);
    }

    #[test]
    fn energy_reference_is_zero_at_infinity() {
        let state = SystemState {
            time: 0.0,
            bodies: vec![
                BodyState { position: Vec3::new(0.0, 0.0, 0.0), velocity: Vec3::zeros(), mass: 1.0 },
                BodyState { position: Vec3::new(1e300, 0.0, 0.0), velocity: Vec3::zeros(), mass: 1.0 },
            ],
        };
        assert_eq!(total_mechanical_energy(&state, &[], &PhysicalConstants::default()), 0.0);
    }

    #[test]
    fn initial_energy_has_no_spring_term() {
        let (state, springs, cfg) = reference_state();
        let with = total_mechanical_energy(&state, &springs, &cfg.constants);
        let without = total_mechanical_energy(&state, &[], &cfg.constants);
        assert_eq!(with, without);
        assert!(with < 0.0);
    }

    fn bump_series(height: f64) -> Vec<(f64, f64)> {
        (0..400)
            .map(|k| {
                let t = 10.0 * k as f64;
                // tiny deterministic texture so the MAD is nonzero
                let texture = 1e-4 * ((k * 7919 % 13) as f64 / 13.0 - 0.5);
                let bump = (height * (1.0 - (t - 2000.0).abs() / 50.0)).max(0.0);
                (t, 0.6 + texture + bump)
            })
            .collect()
    }

    #[test]
    fn constant_series_has_no_spikes() {
        let series: Vec<(f64, f64)> = (0..200).map(|k| (k as f64, 0.6)).collect();
        let d = SpikeDetector::new(50.0).detect(&series);
        assert!(!d.too_short);
        assert!(d.events.is_empty());
    }

    #[test]
    fn single_bump_is_one_spike() {
        let series = bump_series(0.0);
        let mut abs: Vec<f64> = series.iter().map(|p| (p.1 - 0.6).abs()).collect();
        let mad = median(&mut abs);
        let series = bump_series(10.0 * mad);
        let d = SpikeDetector::new(1000.0).detect(&series);
        assert_eq!(d.events.len(), 1, "{d:?}");
        assert_eq!(d.events[0].time, 2000.0);
        assert!(d.events[0].peak_eccentricity > d.events[0].baseline_eccentricity);
        assert!(d.events[0].width > 0.0);
    }

    #[test]
    fn unbound_samples_are_skipped() {
        let mut series: Vec<(f64, f64)> = (0..200).map(|k| (k as f64, 0.6)).collect();
        series[120].1 = f64::NAN;
        let d = SpikeDetector::new(50.0).detect(&series);
        assert!(d.events.is_empty());
        assert!(d.threshold.is_finite());
    }

    #[test]
    fn short_series_flags_warning() {
        let series: Vec<(f64, f64)> = (0..10).map(|k| (k as f64, 0.6)).collect();
        let d = SpikeDetector::new(100.0).detect(&series);
        assert!(d.too_short);
        assert!(d.events.is_empty());
    }

    #[test]
    fn periapsis_from_distance_minima() {
        let samples: Vec<(f64, f64)> = (0..100)
            .map(|k| (k as f64, ((k as f64) * 0.2).cos() + 2.0))
            .collect();
        let minima = periapsis_times(&samples);
        assert_eq!(minima, vec![16.0, 47.0, 79.0]);
    }

    #[test]
    fn correlation_signs() {
        let x = [1.0, 2.0, 3.0];
        assert_relative_eq!(correlation(&x, &[-1.0, -2.0, -3.0]).unwrap(), -1.0);
        assert_eq!(correlation(&x, &[1.0, 1.0, 1.0]), None);
    }
}
