//! Simulation of a satellite under tidal stress: three spring-connected
//! masses orbiting a point-mass planet, integrated with step-doubling RK4.
//!
//! Around the simulator sit two analysis layers: convergence studies that
//! separate physical trends from numerical artifacts, and argument patterns
//! (schematic sentences, filling instructions, classification, comments)
//! that package an explanation of the results together with the numeric
//! evidence backing it.

pub mod attribution;
pub mod cli;
pub mod diagnostics;
pub mod explain;
pub mod forces;
pub mod integrator;
pub mod model;

pub use diagnostics::{OrbitalDiagnostics, SpikeDetector, SpikeEvent};
pub use integrator::{run, run_with, FaultInjection, RunOptions, Trajectory};
pub use model::{SimulationConfig, SystemState};
