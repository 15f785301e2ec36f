//! Command-line front end.
//!
//! Exit status is the only success channel: 0 on success, 1 when a
//! configuration is invalid, 2 on a runtime failure and 64 on malformed
//! arguments. Every output file is written to a temporary file in the
//! target directory and renamed into place only after all outputs of the
//! command have been computed.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use thiserror::Error;

use crate::attribution::{
    classify_trend, recover_injected_drift, run_study, ConvergenceStudy, FeatureClassification,
};
use crate::explain::{
    derive, render_report, satellite_pattern, ArgumentPattern, ReportFormat,
};
use crate::integrator::{run_with, FaultInjection, RunOptions, Trajectory, DEFAULT_FAULT_MAGNITUDE};
use crate::model::{validate_config, ConfigFileError, SimulationConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INVALID: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;
pub const EXIT_USAGE: i32 = 64;

pub const TRAJECTORY_COLUMNS: [&str; 10] = [
    "time_s",
    "R_m",
    "EN_J_per_kg",
    "H2",
    "a_m",
    "eccentricity",
    "L_orbital",
    "L_spin",
    "E_total_J",
    "step_s",
];

#[derive(Debug, Parser)]
#[command(name = "tidesim", version, about = "Satellite under tidal stress: simulation, attribution and explanation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum OutputFormat {
    Text,
    Json,
}

impl From<OutputFormat> for ReportFormat {
    fn from(f: OutputFormat) -> Self {
        match f {
            OutputFormat::Text => ReportFormat::PlainText,
            OutputFormat::Json => ReportFormat::Structured,
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check a configuration file and list every violation.
    Validate { config: PathBuf },
    /// Run one simulation and write the trajectory, positions, metadata and
    /// plot files.
    Simulate {
        config: PathBuf,
        #[arg(short, long)]
        out: PathBuf,
        /// Per-step positional fault in metres (default 1e-7 when given
        /// without a value).
        #[arg(long, num_args = 0..=1, default_missing_value = "1e-7")]
        fault: Option<f64>,
    },
    /// Run a convergence study over tolerance divisors and classify the
    /// secular eccentricity trend.
    Study {
        config: PathBuf,
        #[arg(short, long)]
        out: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "1,10,100")]
        divisors: Vec<f64>,
        #[arg(long, num_args = 0..=1, default_missing_value = "1e-7")]
        fault: Option<f64>,
        #[arg(long, value_enum, default_value = "text")]
        format: OutputFormat,
    },
    /// Derive the explanation report for a configuration.
    Explain {
        config: PathBuf,
        #[arg(short, long)]
        out: PathBuf,
        /// `study.json` written by the study command; a fresh study is run
        /// when omitted.
        #[arg(long)]
        study: Option<PathBuf>,
        #[arg(long, value_delimiter = ',', default_value = "1,10,100")]
        divisors: Vec<f64>,
        #[arg(long, num_args = 0..=1, default_missing_value = "1e-7")]
        fault: Option<f64>,
        /// Pattern document replacing the shipped satellite pattern.
        #[arg(long)]
        pattern: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "text")]
        format: OutputFormat,
    },
    /// Turn a trajectory CSV into an eccentricity-vs-time data file and a
    /// gnuplot script.
    Plot {
        trajectory: PathBuf,
        #[arg(short, long)]
        out: PathBuf,
    },
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(#[from] ConfigFileError),
    #[error("invalid configuration:\n  {}", .0.join("\n  "))]
    Invalid(Vec<String>),
    #[error("{0}")]
    Runtime(String),
    #[error("trajectory CSV is missing columns: {}", .0.join(", "))]
    MissingColumns(Vec<String>),
    #[error("trajectory CSV has no rows")]
    EmptyTrajectory,
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(ConfigFileError::Io(_)) => EXIT_RUNTIME,
            CliError::Config(_) | CliError::Invalid(_) => EXIT_INVALID,
            _ => EXIT_RUNTIME,
        }
    }
}

fn io_error(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Parses `args` (program name first) and runs the command.
pub fn main_with<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let text = e.render().to_string();
            let _ = if e.use_stderr() {
                write!(stderr, "{text}")
            } else {
                write!(stdout, "{text}")
            };
            return code;
        }
    };
    match execute(cli.command, stdout) {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            e.exit_code()
        }
    }
}

pub fn main() -> i32 {
    main_with(
        std::env::args_os(),
        &mut std::io::stdout().lock(),
        &mut std::io::stderr().lock(),
    )
}

fn execute(command: Command, stdout: &mut dyn Write) -> Result<i32, CliError> {
    match command {
        Command::Validate { config } => {
            let cfg = SimulationConfig::from_file(&config)?;
            match validate_config(&cfg) {
                Ok(()) => {
                    let _ = writeln!(stdout, "{}: valid", config.display());
                    Ok(EXIT_OK)
                }
                Err(violations) => {
                    for v in violations {
                        let _ = writeln!(stdout, "{}: {v}", config.display());
                    }
                    Ok(EXIT_INVALID)
                }
            }
        }
        Command::Simulate { config, out, fault } => {
            let cfg = load(&config)?;
            let fault = fault_option(fault)?;
            let trajectory = simulate(&cfg, fault)?;
            let mut files = simulation_files(&trajectory)?;
            let csv = files[0].1.clone();
            files.extend(plot_files(&csv)?);
            write_all(&out, &files)?;
            let _ = writeln!(
                stdout,
                "{} samples, {} accepted and {} rejected steps written to {}",
                trajectory.diagnostics.len(),
                trajectory.accepted_steps(),
                trajectory.rejected_steps(),
                out.display()
            );
            Ok(EXIT_OK)
        }
        Command::Study {
            config,
            out,
            divisors,
            fault,
            format,
        } => {
            let cfg = load(&config)?;
            let fault = fault_option(fault)?;
            let study = study(&cfg, &divisors, fault)?;
            let classification = classify_trend(&study);
            let clean = match fault {
                Some(_) => Some(self::study(&cfg, &divisors, None)?),
                None => None,
            };
            let mut files = level_files(&study);
            files.push((
                "study.json".into(),
                serde_json::to_string_pretty(&study).expect("study serializes") + "\n",
            ));
            let report = study_report(&study, &classification, clean.as_ref(), format);
            let name = match format {
                OutputFormat::Text => "study_report.txt",
                OutputFormat::Json => "study_report.json",
            };
            files.push((name.into(), report.clone()));
            write_all(&out, &files)?;
            let _ = write!(stdout, "{report}");
            Ok(EXIT_OK)
        }
        Command::Explain {
            config,
            out,
            study: study_path,
            divisors,
            fault,
            pattern,
            format,
        } => {
            let cfg = load(&config)?;
            let fault = fault_option(fault)?;
            let pattern = match &pattern {
                Some(path) => {
                    let text = std::fs::read_to_string(path).map_err(io_error(path))?;
                    ArgumentPattern::from_toml(&text)
                        .map_err(|e| CliError::Invalid(vec![format!("{}: {e}", path.display())]))?
                }
                None => satellite_pattern(fault.is_some()),
            };
            let trajectory = simulate(&cfg, fault)?;
            let mut artifacts = vec![format!("configuration {}", config.display())];
            let study = match &study_path {
                Some(path) => {
                    let text = std::fs::read_to_string(path).map_err(io_error(path))?;
                    let study: ConvergenceStudy = serde_json::from_str(&text)
                        .map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
                    if study.base != cfg {
                        return Err(CliError::Invalid(vec![format!(
                            "{} was produced from a different configuration",
                            path.display()
                        )]));
                    }
                    artifacts.push(format!("convergence study {}", path.display()));
                    study
                }
                None => {
                    artifacts.push(format!(
                        "convergence study over tolerance divisors {}",
                        join_numbers(&divisors)
                    ));
                    self::study(&cfg, &divisors, fault)?
                }
            };
            let mut report = derive(&pattern, &trajectory, &study)
                .map_err(|e| CliError::Invalid(vec![e.to_string()]))?;
            report.artifacts = artifacts;
            let text = render_report(&report, format.into());
            let name = match format {
                OutputFormat::Text => "explanation.txt",
                OutputFormat::Json => "explanation.json",
            };
            write_all(&out, &[(name.into(), text.clone())])?;
            let _ = write!(stdout, "{text}");
            Ok(EXIT_OK)
        }
        Command::Plot { trajectory, out } => {
            let csv = std::fs::read_to_string(&trajectory).map_err(io_error(&trajectory))?;
            write_all(&out, &plot_files(&csv)?)?;
            Ok(EXIT_OK)
        }
    }
}

fn load(path: &Path) -> Result<SimulationConfig, CliError> {
    let cfg = SimulationConfig::from_file(path)?;
    validate_config(&cfg)
        .map_err(|v| CliError::Invalid(v.iter().map(ToString::to_string).collect()))?;
    Ok(cfg)
}

fn fault_option(magnitude: Option<f64>) -> Result<Option<FaultInjection>, CliError> {
    match magnitude {
        None => Ok(None),
        Some(m) if m > 0.0 && m.is_finite() => Ok(Some(FaultInjection { magnitude: m })),
        Some(m) => Err(CliError::Invalid(vec![format!(
            "fault magnitude must be positive and finite, got {m} (default {DEFAULT_FAULT_MAGNITUDE})"
        )])),
    }
}

fn simulate(cfg: &SimulationConfig, fault: Option<FaultInjection>) -> Result<Trajectory, CliError> {
    run_with(cfg, &RunOptions { fault }).map_err(|e| CliError::Runtime(e.to_string()))
}

fn study(
    cfg: &SimulationConfig,
    divisors: &[f64],
    fault: Option<FaultInjection>,
) -> Result<ConvergenceStudy, CliError> {
    run_study(cfg, divisors, fault).map_err(|e| match e {
        crate::attribution::AttributionError::TooFewLevels(_)
        | crate::attribution::AttributionError::BadDivisors
        | crate::attribution::AttributionError::InvalidConfig(_) => CliError::Invalid(vec![e.to_string()]),
        _ => CliError::Runtime(e.to_string()),
    })
}

fn real(x: f64) -> String {
    format!("{x:.16e}")
}

fn join_numbers(values: &[f64]) -> String {
    values
        .iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join(",")
}

fn csv_text(header: &[String], rows: impl Iterator<Item = Vec<String>>) -> String {
    let mut writer = csv::Writer::from_writer(Vec::new());
    writer.write_record(header).expect("in-memory write");
    for row in rows {
        writer.write_record(&row).expect("in-memory write");
    }
    String::from_utf8(writer.into_inner().expect("in-memory flush")).expect("CSV is UTF-8")
}

/// Trajectory CSV text. Angular momenta are the components along the
/// initial total angular momentum, i.e. normal to the orbital plane.
pub fn trajectory_csv(trajectory: &Trajectory) -> String {
    let normal = trajectory.diagnostics[0]
        .total_angular_momentum
        .try_normalize(0.0)
        .unwrap_or_else(crate::model::Vec3::z);
    let mut step = trajectory.config.initial_time_step;
    let mut records = trajectory.steps.iter().filter(|s| s.accepted).peekable();
    let header: Vec<String> = TRAJECTORY_COLUMNS.iter().map(|s| s.to_string()).collect();
    let rows = trajectory.diagnostics.iter().map(|d| {
        while let Some(r) = records.next_if(|r| r.time < d.time) {
            step = r.step;
        }
        let e = &d.elements;
        vec![
            real(d.time),
            real(e.distance),
            real(e.specific_energy),
            real(e.angular_momentum_sq),
            real(e.semi_major_axis.unwrap_or(f64::NAN)),
            real(e.eccentricity.unwrap_or(f64::NAN)),
            real(d.orbital_angular_momentum.dot(&normal)),
            real(d.spin_angular_momentum.dot(&normal)),
            real(d.total_mechanical_energy),
            real(step),
        ]
    });
    csv_text(&header, rows)
}

/// Body positions relative to the configured origin body.
pub fn positions_csv(trajectory: &Trajectory) -> String {
    let origin = trajectory.config.body_chosen_as_origin - 1;
    let n = trajectory.states[0].bodies.len();
    let mut header = vec!["time_s".to_string()];
    for k in 1..=n {
        for axis in ["x", "y", "z"] {
            header.push(format!("body{k}_{axis}_m"));
        }
    }
    let rows = trajectory.states.iter().map(|s| {
        let o = s.bodies[origin].position;
        let mut row = vec![real(s.time)];
        for b in &s.bodies {
            let p = b.position - o;
            row.extend([real(p.x), real(p.y), real(p.z)]);
        }
        row
    });
    csv_text(&header, rows)
}

/// Resolved configuration followed by run notes as comments, so the file
/// is itself a valid configuration.
pub fn run_metadata(trajectory: &Trajectory) -> String {
    let mut text = trajectory.config.to_config_text();
    let notes = [
        format!("samples = {}", trajectory.diagnostics.len()),
        format!("accepted_steps = {}", trajectory.accepted_steps()),
        format!("rejected_steps = {}", trajectory.rejected_steps()),
        format!(
            "fault_magnitude_m = {}",
            trajectory
                .fault
                .map_or_else(|| "none".to_string(), |f| real(f.magnitude))
        ),
        format!(
            "injected_eccentricity_change = {}",
            real(trajectory.injected_eccentricity_change)
        ),
        format!("orbital_period_s = {}", real(trajectory.config.orbital_period())),
        "L_orbital and L_spin are components along the initial total angular momentum".to_string(),
        if trajectory.config.is_tidal() {
            "satellite triangle lies in the orbital plane, one vertex toward the planet, no initial spin"
        } else {
            "point satellite, no springs"
        }
        .to_string(),
        format!("version = {}", env!("CARGO_PKG_VERSION")),
    ];
    for note in notes {
        text.push_str("# ");
        text.push_str(&note);
        text.push('\n');
    }
    text
}

fn simulation_files(trajectory: &Trajectory) -> Result<Vec<(String, String)>, CliError> {
    Ok(vec![
        ("trajectory.csv".into(), trajectory_csv(trajectory)),
        ("positions.csv".into(), positions_csv(trajectory)),
        ("run_metadata.cfg".into(), run_metadata(trajectory)),
    ])
}

/// Eccentricity-vs-time data and a gnuplot script drawing it.
pub fn plot_files(trajectory_csv: &str) -> Result<Vec<(String, String)>, CliError> {
    let mut reader = csv::Reader::from_reader(trajectory_csv.as_bytes());
    let headers = reader
        .headers()
        .map_err(|e| CliError::Runtime(e.to_string()))?
        .clone();
    let index = |name: &str| headers.iter().position(|h| h == name);
    let (time, ecc) = match (index("time_s"), index("eccentricity")) {
        (Some(t), Some(e)) => (t, e),
        (t, e) => {
            let missing = [("time_s", t), ("eccentricity", e)]
                .iter()
                .filter(|(_, i)| i.is_none())
                .map(|(n, _)| n.to_string())
                .collect();
            return Err(CliError::MissingColumns(missing));
        }
    };
    let mut data = String::from("# time_s eccentricity\n");
    let (mut first, mut last) = (None, 0.0f64);
    for record in reader.records() {
        let record = record.map_err(|e| CliError::Runtime(e.to_string()))?;
        let field = |i: usize| -> Result<f64, CliError> {
            record
                .get(i)
                .and_then(|s| s.trim().parse().ok())
                .ok_or_else(|| CliError::Runtime(format!("bad number in row {}", record.position().map_or(0, |p| p.line()))))
        };
        let (t, e) = (field(time)?, field(ecc)?);
        first.get_or_insert(t);
        last = t;
        data.push_str(&format!("{} {}\n", real(t), real(e)));
    }
    let first = first.ok_or(CliError::EmptyTrajectory)?;
    let script = format!(
        "set xlabel \"time (s)\"\n\
         set ylabel \"eccentricity\"\n\
         set xrange [{}:{}]\n\
         set key off\n\
         plot \"eccentricity.dat\" using 1:2 with lines\n",
        first, last
    );
    Ok(vec![
        ("eccentricity.dat".into(), data),
        ("eccentricity.gp".into(), script),
    ])
}

fn level_files(study: &ConvergenceStudy) -> Vec<(String, String)> {
    study
        .successful()
        .enumerate()
        .map(|(k, (level, run))| {
            let header = vec!["time_s".to_string(), "eccentricity".to_string()];
            let rows = run.series.iter().map(|(t, e)| vec![real(*t), real(*e)]);
            (
                format!("level_{}_tolerance_{:e}.csv", k + 1, level.tolerance),
                csv_text(&header, rows),
            )
        })
        .collect()
}

fn study_report(
    study: &ConvergenceStudy,
    classification: &FeatureClassification,
    clean: Option<&ConvergenceStudy>,
    format: OutputFormat,
) -> String {
    let recoveries = clean.map(|c| recover_injected_drift(study, c)).unwrap_or_default();
    match format {
        OutputFormat::Json => {
            let finite = |v: f64| v.is_finite().then_some(v);
            let levels: Vec<_> = study
                .levels
                .iter()
                .map(|l| {
                    let mut entry = BTreeMap::new();
                    entry.insert("divisor", serde_json::json!(l.divisor));
                    entry.insert("tolerance", serde_json::json!(l.tolerance));
                    match &l.outcome {
                        Ok(run) => {
                            entry.insert("drift_per_orbit", serde_json::json!(finite(run.drift.per_orbit)));
                            entry.insert("std_error", serde_json::json!(finite(run.drift.std_error)));
                            entry.insert("accepted_steps", serde_json::json!(run.accepted_steps));
                            entry.insert("rejected_steps", serde_json::json!(run.rejected_steps));
                            entry.insert("injected_drift_per_orbit", serde_json::json!(run.injected_drift_per_orbit));
                        }
                        Err(reason) => {
                            entry.insert("failure", serde_json::json!(reason));
                        }
                    }
                    entry
                })
                .collect();
            let doc = serde_json::json!({
                "verdict": classification.verdict.to_string(),
                "converged_drift_per_orbit": finite(classification.converged_drift),
                "converged_std_error": finite(classification.converged_std_error),
                "numerical_component_per_orbit": finite(classification.numerical_component),
                "decade_ratios": classification.decade_ratios.iter().map(|r| finite(*r)).collect::<Vec<_>>(),
                "orbital_period_s": study.orbital_period,
                "fault_magnitude_m": study.fault.map(|f| f.magnitude),
                "levels": levels,
                "injection_recovery": recoveries.iter().map(|r| serde_json::json!({
                    "tolerance": r.tolerance,
                    "recovered_per_orbit": r.recovered,
                    "injected_per_orbit": r.injected,
                    "relative_error": finite(r.relative_error()),
                })).collect::<Vec<_>>(),
            });
            serde_json::to_string_pretty(&doc).expect("report serializes") + "\n"
        }
        OutputFormat::Text => {
            let mut out = String::new();
            out.push_str("Convergence study\n");
            out.push_str(&format!("orbital period: {} s\n", real(study.orbital_period)));
            if let Some(f) = study.fault {
                out.push_str(&format!(
                    "fault injection: {} m per accepted step at the base tolerance, scaled with the tolerance\n",
                    real(f.magnitude)
                ));
            }
            out.push_str("levels:\n");
            for l in &study.levels {
                match &l.outcome {
                    Ok(run) => out.push_str(&format!(
                        "  tolerance {} m: drift {} +/- {} per orbit over {} orbits, {} accepted, {} rejected steps\n",
                        real(l.tolerance),
                        real(run.drift.per_orbit),
                        real(run.drift.std_error),
                        run.drift.orbits,
                        run.accepted_steps,
                        run.rejected_steps
                    )),
                    Err(reason) => out.push_str(&format!(
                        "  tolerance {} m: failed: {reason}\n",
                        real(l.tolerance)
                    )),
                }
            }
            out.push_str(&format!("verdict: {}\n", classification.verdict));
            out.push_str(&format!(
                "converged drift per orbit: {} +/- {}\n",
                real(classification.converged_drift),
                real(classification.converged_std_error)
            ));
            out.push_str(&format!(
                "numerical component per orbit: {}\n",
                real(classification.numerical_component)
            ));
            let ratios: Vec<String> = classification.decade_ratios.iter().map(|r| format!("{r:.3}")).collect();
            out.push_str(&format!("drift shrink per tolerance decade: {}\n", ratios.join(", ")));
            for r in &recoveries {
                out.push_str(&format!(
                    "injected drift at tolerance {} m: recovered {} vs injected {} per orbit ({:.1}% off)\n",
                    real(r.tolerance),
                    real(r.recovered),
                    real(r.injected),
                    100.0 * r.relative_error()
                ));
            }
            out
        }
    }
}

/// Writes every file through a temporary sibling and renames it into
/// place, so a failed command leaves no partial file behind.
fn write_all(dir: &Path, files: &[(String, String)]) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(io_error(dir))?;
    let mut staged = Vec::with_capacity(files.len());
    for (name, contents) in files {
        let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io_error(dir))?;
        tmp.write_all(contents.as_bytes()).map_err(io_error(tmp.path()))?;
        staged.push((tmp, dir.join(name)));
    }
    for (tmp, target) in staged {
        tmp.persist(&target).map_err(|e| CliError::Io {
            path: target.clone(),
            source: e.error,
        })?;
    }
    Ok(())
}
