//! Configuration, physical constants and the state types shared by the
//! rest of the crate.
//!
//! Body layout: the satellite components come first (bodies `1..n-1`,
//! zero-based `0..n-2`) and the planet is always the last body. The tidal
//! scenario uses four bodies (three spring-connected satellite masses plus
//! the planet); a two-body layout (point satellite plus planet, no springs)
//! is also accepted for reference runs.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type Vec3 = Vector3<f64>;

/// Default gravitational constant, m³ kg⁻¹ s⁻².
pub const DEFAULT_GRAVITATIONAL_CONSTANT: f64 = 6.667e-11;

/// Target period (s) of the two-mass spring oscillation used to pick the
/// default spring constant.
pub const DEFAULT_SPRING_PERIOD: f64 = 200.0;

/// Default damping as a fraction of `sqrt(k * m/3)`.
pub const DEFAULT_DAMPING_FRACTION: f64 = 0.01;

pub const DEFAULT_OUTPUT_INTERVAL: f64 = 200.0;

/// Largest accepted ratio of spring rest length to orbital distance.
pub const MAX_SIZE_RATIO: f64 = 0.1;

pub const TIDAL_BODY_COUNT: usize = 4;
pub const TWO_BODY_COUNT: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhysicalConstants {
    pub gravitational_constant: f64,
}

impl Default for PhysicalConstants {
    fn default() -> Self {
        Self {
            gravitational_constant: DEFAULT_GRAVITATIONAL_CONSTANT,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationConfig {
    pub number_of_bodies: usize,
    pub mass_of_planet: f64,
    pub mass_of_satellite: f64,
    pub initial_time_step: f64,
    pub total_simulation_time: f64,
    /// 1-based index of the body whose position is subtracted from written
    /// coordinates. Has no effect on the dynamics.
    pub body_chosen_as_origin: usize,
    pub tolerance: f64,
    pub initial_distance_of_satellite: f64,
    pub unstretched_length_of_spring: f64,
    pub initial_eccentricity: f64,
    pub spring_constant: f64,
    pub damping_coefficient: f64,
    pub output_interval: f64,
    pub constants: PhysicalConstants,
}

/// Spring constant giving a two-mass (each `m/3`) oscillation period of
/// [`DEFAULT_SPRING_PERIOD`].
pub fn default_spring_constant(mass_of_satellite: f64) -> f64 {
    let reduced_mass = mass_of_satellite / 6.0;
    let omega = 2.0 * std::f64::consts::PI / DEFAULT_SPRING_PERIOD;
    reduced_mass * omega * omega
}

pub fn default_damping_coefficient(spring_constant: f64, mass_of_satellite: f64) -> f64 {
    DEFAULT_DAMPING_FRACTION * (spring_constant * mass_of_satellite / 3.0).sqrt()
}

impl SimulationConfig {
    /// The standard tidal satellite, with the spring defaults filled in.
    pub fn reference() -> Self {
        let mass_of_satellite = 3e22;
        let spring_constant = default_spring_constant(mass_of_satellite);
        Self {
            number_of_bodies: TIDAL_BODY_COUNT,
            mass_of_planet: 2e27,
            mass_of_satellite,
            initial_time_step: 10.0,
            total_simulation_time: 125_000.0,
            body_chosen_as_origin: 1,
            tolerance: 100.0,
            initial_distance_of_satellite: 1e8,
            unstretched_length_of_spring: 1e6,
            initial_eccentricity: 0.6,
            spring_constant,
            damping_coefficient: default_damping_coefficient(spring_constant, mass_of_satellite),
            output_interval: DEFAULT_OUTPUT_INTERVAL,
            constants: PhysicalConstants::default(),
        }
    }

    /// Same orbit with the satellite collapsed to a single point mass.
    pub fn two_body(&self) -> Self {
        Self {
            number_of_bodies: TWO_BODY_COUNT,
            body_chosen_as_origin: self.body_chosen_as_origin.min(TWO_BODY_COUNT),
            damping_coefficient: 0.0,
            ..self.clone()
        }
    }

    pub fn is_tidal(&self) -> bool {
        self.number_of_bodies == TIDAL_BODY_COUNT
    }

    /// `G * (M + m)`.
    pub fn gravitational_parameter(&self) -> f64 {
        self.constants.gravitational_constant * (self.mass_of_planet + self.mass_of_satellite)
    }

    pub fn initial_semi_major_axis(&self) -> f64 {
        self.initial_distance_of_satellite / (1.0 + self.initial_eccentricity)
    }

    /// Keplerian period of the initial centroid orbit.
    pub fn orbital_period(&self) -> f64 {
        let a = self.initial_semi_major_axis();
        2.0 * std::f64::consts::PI * (a.powi(3) / self.gravitational_parameter()).sqrt()
    }

    pub fn planet_index(&self) -> usize {
        self.number_of_bodies - 1
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ConfigViolation {
    NotPositive(&'static str),
    NotFinite(&'static str),
    EccentricityOutOfRange,
    BodyCount(usize),
    OriginOutOfRange { origin: usize, bodies: usize },
    SpringTooLong { ratio_limit: String },
    NegativeDamping,
}

impl fmt::Display for ConfigViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::NotPositive(name) => write!(f, "{} must be positive", name.replace('_', " ")),
            Self::NotFinite(name) => write!(f, "{name} must be finite"),
            Self::EccentricityOutOfRange => write!(f, "eccentricity must be < 1 and >= 0"),
            Self::BodyCount(n) => write!(
                f,
                "number_of_bodies must be {TIDAL_BODY_COUNT} (tidal scenario) or {TWO_BODY_COUNT} (point satellite), got {n}"
            ),
            Self::OriginOutOfRange { origin, bodies } => write!(
                f,
                "body_chosen_as_origin must be between 1 and {bodies}, got {origin}"
            ),
            Self::SpringTooLong { ratio_limit } => write!(
                f,
                "unstretched_length_of_spring must be at most {ratio_limit} of initial_distance_of_satellite"
            ),
            Self::NegativeDamping => write!(f, "damping coefficient must be >= 0"),
        }
    }
}

/// Checks every configuration invariant and reports all violations.
pub fn validate_config(config: &SimulationConfig) -> Result<(), Vec<ConfigViolation>> {
    let mut violations = Vec::new();
    let positive = [
        ("mass_of_planet", config.mass_of_planet),
        ("mass_of_satellite", config.mass_of_satellite),
        ("initial_time_step", config.initial_time_step),
        ("total_simulation_time", config.total_simulation_time),
        ("tolerance", config.tolerance),
        ("initial_distance_of_satellite", config.initial_distance_of_satellite),
        ("unstretched_length_of_spring", config.unstretched_length_of_spring),
        ("spring_constant", config.spring_constant),
        ("output_interval", config.output_interval),
        ("gravitational_constant", config.constants.gravitational_constant),
    ];
    for (name, value) in positive {
        if !value.is_finite() {
            violations.push(ConfigViolation::NotFinite(name));
        } else if value <= 0.0 {
            // a zero-length run is allowed: it yields the initial state only
            if name == "total_simulation_time" && value == 0.0 {
                continue;
            }
            violations.push(ConfigViolation::NotPositive(name));
        }
    }
    let e = config.initial_eccentricity;
    if !e.is_finite() || !(0.0..1.0).contains(&e) {
        violations.push(ConfigViolation::EccentricityOutOfRange);
    }
    if !config.damping_coefficient.is_finite() {
        violations.push(ConfigViolation::NotFinite("damping_coefficient"));
    } else if config.damping_coefficient < 0.0 {
        violations.push(ConfigViolation::NegativeDamping);
    }
    let n = config.number_of_bodies;
    if n != TIDAL_BODY_COUNT && n != TWO_BODY_COUNT {
        violations.push(ConfigViolation::BodyCount(n));
    }
    if config.body_chosen_as_origin < 1 || config.body_chosen_as_origin > n {
        violations.push(ConfigViolation::OriginOutOfRange {
            origin: config.body_chosen_as_origin,
            bodies: n,
        });
    }
    if n == TIDAL_BODY_COUNT
        && config.unstretched_length_of_spring > MAX_SIZE_RATIO * config.initial_distance_of_satellite
    {
        violations.push(ConfigViolation::SpringTooLong {
            ratio_limit: MAX_SIZE_RATIO.to_string(),
        });
    }
    if violations.is_empty() {
        Ok(())
    } else {
        Err(violations)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BodyState {
    pub position: Vec3,
    pub velocity: Vec3,
    pub mass: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemState {
    pub time: f64,
    pub bodies: Vec<BodyState>,
}

impl SystemState {
    pub fn planet(&self) -> &BodyState {
        self.bodies.last().expect("state has no bodies")
    }

    pub fn satellite(&self) -> &[BodyState] {
        &self.bodies[..self.bodies.len() - 1]
    }

    pub fn total_momentum(&self) -> Vec3 {
        self.bodies.iter().map(|b| b.velocity * b.mass).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.bodies.iter().all(|b| {
            b.position.iter().all(|x| x.is_finite()) && b.velocity.iter().all(|x| x.is_finite())
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Spring {
    pub endpoint_a: usize,
    pub endpoint_b: usize,
    pub rest_length: f64,
    pub stiffness: f64,
    pub damping: f64,
}

#[derive(Debug, Error)]
#[error("invalid configuration: {}", join_violations(.0))]
pub struct InvalidConfig(pub Vec<ConfigViolation>);

fn join_violations(v: &[ConfigViolation]) -> String {
    v.iter().map(ToString::to_string).collect::<Vec<_>>().join("; ")
}

/// Places the planet at the origin at rest and the satellite at apoapsis.
///
/// The satellite triangle lies in the orbital (x-y) plane with one vertex on
/// the planet side of the planet-centroid line; all three components share
/// the centroid velocity, so the satellite starts without spin.
pub fn build_initial_state(
    config: &SimulationConfig,
) -> Result<(SystemState, Vec<Spring>), InvalidConfig> {
    validate_config(config).map_err(InvalidConfig)?;

    let r = config.initial_distance_of_satellite;
    let a = config.initial_semi_major_axis();
    let mu = config.gravitational_parameter();
    let speed = (mu * (2.0 / r - 1.0 / a)).sqrt();
    let centroid = Vec3::new(r, 0.0, 0.0);
    let velocity = Vec3::new(0.0, speed, 0.0);

    let mut bodies = Vec::with_capacity(config.number_of_bodies);
    let mut springs = Vec::new();
    if config.is_tidal() {
        let side = config.unstretched_length_of_spring;
        let circumradius = side / 3f64.sqrt();
        let offsets = [
            Vec3::new(-circumradius, 0.0, 0.0),
            Vec3::new(0.5 * circumradius, 0.5 * side, 0.0),
            Vec3::new(0.5 * circumradius, -0.5 * side, 0.0),
        ];
        for offset in offsets {
            bodies.push(BodyState {
                position: centroid + offset,
                velocity,
                mass: config.mass_of_satellite / 3.0,
            });
        }
        for (a_idx, b_idx) in [(0, 1), (1, 2), (2, 0)] {
            springs.push(Spring {
                endpoint_a: a_idx,
                endpoint_b: b_idx,
                rest_length: side,
                stiffness: config.spring_constant,
                damping: config.damping_coefficient,
            });
        }
    } else {
        bodies.push(BodyState {
            position: centroid,
            velocity,
            mass: config.mass_of_satellite,
        });
    }
    bodies.push(BodyState {
        position: Vec3::zeros(),
        velocity: Vec3::zeros(),
        mass: config.mass_of_planet,
    });

    Ok((SystemState { time: 0.0, bodies }, springs))
}

#[derive(Debug, Error)]
pub enum ConfigFileError {
    #[error("cannot read config file: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: expected `key = value`")]
    Syntax { line: usize },
    #[error("line {line}: unknown key `{key}`")]
    UnknownKey { line: usize, key: String },
    #[error("line {line}: duplicate key `{key}`")]
    DuplicateKey { line: usize, key: String },
    #[error("line {line}: invalid value for `{key}`: `{value}`")]
    BadValue { line: usize, key: String, value: String },
    #[error("missing required key `{0}`")]
    MissingKey(&'static str),
}

const REQUIRED_KEYS: [&str; 10] = [
    "number_of_bodies",
    "mass_of_planet",
    "mass_of_satellite",
    "initial_time_step",
    "total_simulation_time",
    "body_chosen_as_origin",
    "tolerance",
    "initial_distance_of_satellite",
    "unstretched_length_of_spring",
    "initial_eccentricity",
];

const OPTIONAL_KEYS: [&str; 4] = [
    "spring_constant",
    "damping_coefficient",
    "output_interval",
    "gravitational_constant",
];

impl SimulationConfig {
    /// Parses `key = value` lines. `#` starts a comment; blank lines are
    /// skipped. Optional keys fall back to their defaults.
    pub fn parse(text: &str) -> Result<Self, ConfigFileError> {
        let mut values: BTreeMap<&'static str, (usize, String)> = BTreeMap::new();
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or(ConfigFileError::Syntax { line: line_no })?;
            let key = key.trim();
            let value = value.trim();
            if key.is_empty() || value.is_empty() {
                return Err(ConfigFileError::Syntax { line: line_no });
            }
            let known = REQUIRED_KEYS
                .iter()
                .chain(OPTIONAL_KEYS.iter())
                .find(|k| **k == key)
                .ok_or_else(|| ConfigFileError::UnknownKey {
                    line: line_no,
                    key: key.to_string(),
                })?;
            if values.insert(known, (line_no, value.to_string())).is_some() {
                return Err(ConfigFileError::DuplicateKey {
                    line: line_no,
                    key: key.to_string(),
                });
            }
        }

        let real = |key: &'static str| -> Result<Option<f64>, ConfigFileError> {
            values
                .get(key)
                .map(|(line, v)| {
                    v.parse::<f64>().map_err(|_| ConfigFileError::BadValue {
                        line: *line,
                        key: key.to_string(),
                        value: v.clone(),
                    })
                })
                .transpose()
        };
        let integer = |key: &'static str| -> Result<Option<usize>, ConfigFileError> {
            values
                .get(key)
                .map(|(line, v)| {
                    v.parse::<usize>().map_err(|_| ConfigFileError::BadValue {
                        line: *line,
                        key: key.to_string(),
                        value: v.clone(),
                    })
                })
                .transpose()
        };
        let need_real = |key: &'static str| real(key)?.ok_or(ConfigFileError::MissingKey(key));
        let need_int = |key: &'static str| integer(key)?.ok_or(ConfigFileError::MissingKey(key));

        let mass_of_satellite = need_real("mass_of_satellite")?;
        let spring_constant =
            real("spring_constant")?.unwrap_or_else(|| default_spring_constant(mass_of_satellite));
        let damping_coefficient = real("damping_coefficient")?
            .unwrap_or_else(|| default_damping_coefficient(spring_constant, mass_of_satellite));
        Ok(Self {
            number_of_bodies: need_int("number_of_bodies")?,
            mass_of_planet: need_real("mass_of_planet")?,
            mass_of_satellite,
            initial_time_step: need_real("initial_time_step")?,
            total_simulation_time: need_real("total_simulation_time")?,
            body_chosen_as_origin: need_int("body_chosen_as_origin")?,
            tolerance: need_real("tolerance")?,
            initial_distance_of_satellite: need_real("initial_distance_of_satellite")?,
            unstretched_length_of_spring: need_real("unstretched_length_of_spring")?,
            initial_eccentricity: need_real("initial_eccentricity")?,
            spring_constant,
            damping_coefficient,
            output_interval: real("output_interval")?.unwrap_or(DEFAULT_OUTPUT_INTERVAL),
            constants: PhysicalConstants {
                gravitational_constant: real("gravitational_constant")?
                    .unwrap_or(DEFAULT_GRAVITATIONAL_CONSTANT),
            },
        })
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self, ConfigFileError> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    /// Renders every key, defaults included, in the format [`Self::parse`]
    /// reads. Reals are written with 17 significant digits.
    pub fn to_config_text(&self) -> String {
        let reals = [
            ("mass_of_planet", self.mass_of_planet),
            ("mass_of_satellite", self.mass_of_satellite),
            ("initial_time_step", self.initial_time_step),
            ("total_simulation_time", self.total_simulation_time),
            ("tolerance", self.tolerance),
            ("initial_distance_of_satellite", self.initial_distance_of_satellite),
            ("unstretched_length_of_spring", self.unstretched_length_of_spring),
            ("initial_eccentricity", self.initial_eccentricity),
            ("spring_constant", self.spring_constant),
            ("damping_coefficient", self.damping_coefficient),
            ("output_interval", self.output_interval),
            ("gravitational_constant", self.constants.gravitational_constant),
        ];
        let mut out = format!(
            "number_of_bodies = {}\nbody_chosen_as_origin = {}\n",
            self.number_of_bodies, self.body_chosen_as_origin
        );
        for (key, value) in reals {
            out.push_str(&format!("{key} = {value:.16e}\n"));
        }
        out
    }
}
