use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{
    instantiate, validate_classification, ArgumentPattern, CallSignature, Classification,
    Comment, CommentKind, ExplainError, Role,
};
use crate::attribution::{classify_trend, ConvergenceStudy, Verdict};
use crate::diagnostics::{correlation, periapsis_times, SpikeDetector};
use crate::integrator::{FaultInjection, Trajectory};
use crate::model::{build_initial_state, SimulationConfig, Vec3};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportSentence {
    pub id: String,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub call: Option<CallSignature>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportBinding {
    pub dummy: String,
    pub domain: String,
    pub value: String,
}

/// A named number; `None` stands for a value that is not finite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Measurement {
    pub name: String,
    pub value: Option<f64>,
}

impl Measurement {
    fn new(name: &str, value: f64) -> Self {
        Self {
            name: name.to_string(),
            value: value.is_finite().then_some(value),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvidenceCheck {
    pub label: String,
    pub claim: String,
    pub passed: bool,
    /// Sentences the check bears on.
    pub sentences: Vec<String>,
    pub measurements: Vec<Measurement>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelSummary {
    pub tolerance: f64,
    pub drift_per_orbit: Option<f64>,
    pub std_error: Option<f64>,
    pub accepted_steps: Option<usize>,
    /// Present when the level failed.
    pub failure: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributionSummary {
    pub verdict: Verdict,
    pub converged_drift: Option<f64>,
    pub converged_std_error: Option<f64>,
    pub numerical_component: Option<f64>,
    pub levels: Vec<LevelSummary>,
    pub fault_magnitude: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplanationReport {
    pub pattern_name: String,
    pub sentences: Vec<ReportSentence>,
    pub filling: Vec<ReportBinding>,
    pub classification: Classification,
    /// Sentence ids, each after every sentence it is derived from.
    pub derivation_trace: Vec<String>,
    pub comments: Vec<Comment>,
    pub evidence: Vec<EvidenceCheck>,
    pub attribution: Option<AttributionSummary>,
    /// Files or runs the evidence was drawn from.
    #[serde(default)]
    pub artifacts: Vec<String>,
}

impl ExplanationReport {
    /// Instantiates the pattern without any evidence. Every comment that is
    /// not an error term is attached.
    pub fn from_pattern(
        pattern: &ArgumentPattern,
        bindings: &BTreeMap<String, String>,
    ) -> Result<Self, ExplainError> {
        let texts = instantiate(pattern, bindings)?;
        let sentences = pattern
            .sentences
            .iter()
            .zip(texts)
            .map(|(s, text)| ReportSentence {
                id: s.id.clone(),
                text,
                call: s.call.clone(),
            })
            .collect();
        let filling = pattern
            .filling
            .0
            .iter()
            .map(|(dummy, instruction)| ReportBinding {
                dummy: dummy.clone(),
                domain: instruction.domain.clone(),
                value: bindings
                    .get(dummy)
                    .or(instruction.binding.as_ref())
                    .cloned()
                    .unwrap_or_default(),
            })
            .collect();
        Ok(Self {
            pattern_name: pattern.name.clone(),
            sentences,
            filling,
            classification: pattern.classification.clone(),
            derivation_trace: pattern.derivation_order(),
            comments: pattern
                .comments
                .iter()
                .filter(|c| c.kind != CommentKind::ErrorTerm)
                .cloned()
                .collect(),
            evidence: Vec::new(),
            attribution: None,
            artifacts: Vec::new(),
        })
    }

    /// The explanandum counts as supported only when there is evidence and
    /// every check passed.
    pub fn is_supported(&self) -> bool {
        !self.evidence.is_empty() && self.evidence.iter().all(|c| c.passed)
    }
}

fn vector_text(v: &Vec3) -> String {
    format!("({:E}, {:E}, {:E})", v.x, v.y, v.z)
}

/// Dummy bindings for the satellite pattern taken from a configuration.
///
/// Positions and velocities are those of the initial state relative to the
/// planet. A point satellite binds all three positions to its single body.
pub fn bindings_for_config(
    config: &SimulationConfig,
    fault: Option<FaultInjection>,
) -> BTreeMap<String, String> {
    let mut b = BTreeMap::new();
    let mut put = |k: &str, v: String| {
        b.insert(k.to_string(), v);
    };
    put("CM(I)", format!("{:E}", config.mass_of_planet));
    put("CM(J)", format!("{:E}", config.mass_of_satellite));
    put("A", format!("{:E}", config.initial_semi_major_axis()));
    put("E", format!("{:E}", config.initial_eccentricity));
    put("L", format!("{:E}", config.unstretched_length_of_spring));
    put("K", format!("{:E}", config.spring_constant));
    put("C", format!("{:E}", config.damping_coefficient));
    put("TOL", format!("{:E}", config.tolerance));
    put("G", format!("{:E}", config.constants.gravitational_constant));
    if let Ok((state, _)) = build_initial_state(config) {
        let planet = *state.planet();
        let satellite = state.satellite();
        for k in 0..3 {
            let body = satellite[k.min(satellite.len() - 1)];
            put(
                &format!("POS({})", k + 1),
                vector_text(&(body.position - planet.position)),
            );
            put(
                &format!("VEL({})", k + 1),
                vector_text(&(body.velocity - planet.velocity)),
            );
        }
    }
    if let Some(f) = fault {
        put("FAULT", format!("{:E} m per step", f.magnitude));
    }
    b
}

/// Builds the explanation for a run and its convergence study.
///
/// Three evidence checks are attached: spikes coincide with distance
/// minima, spin and orbital angular momentum exchange across each spike,
/// and the attribution verdict of the secular trend. A failed check leaves
/// the report marked unsupported; only an invalid classification or a
/// missing binding is an error.
pub fn derive(
    pattern: &ArgumentPattern,
    trajectory: &Trajectory,
    study: &ConvergenceStudy,
) -> Result<ExplanationReport, ExplainError> {
    let validation = validate_classification(pattern);
    if !validation.is_accepted() {
        return Err(ExplainError::InvalidPattern(
            validation.defects.into_iter().filter(|d| d.is_fatal()).collect(),
        ));
    }
    let bindings = bindings_for_config(&trajectory.config, trajectory.fault);
    let mut report = ExplanationReport::from_pattern(pattern, &bindings)?;

    let explanandum: Vec<String> = pattern
        .classification
        .explananda()
        .map(str::to_string)
        .collect();
    let period = trajectory.config.orbital_period();
    let spikes = if period.is_finite() && period > 0.0 {
        SpikeDetector::new(period)
            .detect(&trajectory.eccentricity_series())
            .events
    } else {
        Vec::new()
    };

    // (i) every spike sits within one output interval of a distance minimum
    let minima = periapsis_times(&trajectory.distance_series());
    let interval = trajectory.config.output_interval;
    let offsets: Vec<f64> = spikes
        .iter()
        .map(|s| {
            minima
                .iter()
                .map(|m| (m - s.time).abs())
                .fold(f64::INFINITY, f64::min)
        })
        .collect();
    let worst_offset = offsets.iter().copied().fold(0.0, f64::max);
    report.evidence.push(EvidenceCheck {
        label: "(i)".into(),
        claim: "every eccentricity spike coincides with a local minimum of the orbital distance"
            .into(),
        passed: !spikes.is_empty() && offsets.iter().all(|o| *o <= interval),
        sentences: with_explanandum(&["7"], &explanandum),
        measurements: vec![
            Measurement::new("spikes", spikes.len() as f64),
            Measurement::new("distance_minima", minima.len() as f64),
            Measurement::new("largest_offset_s", if spikes.is_empty() { f64::NAN } else { worst_offset }),
            Measurement::new("output_interval_s", interval),
        ],
    });

    // (ii) spin and orbital increments anticorrelate across each spike
    let correlations: Vec<Option<f64>> = spikes
        .iter()
        .map(|s| exchange_correlation(trajectory, s.time, s.width))
        .collect();
    let worst = correlations
        .iter()
        .map(|c| c.unwrap_or(f64::NAN))
        .fold(f64::NEG_INFINITY, |m, c| if c.is_nan() || m.is_nan() { f64::NAN } else { m.max(c) });
    report.evidence.push(EvidenceCheck {
        label: "(ii)".into(),
        claim: "spin and orbital angular momentum increments are anticorrelated across every spike"
            .into(),
        passed: !spikes.is_empty() && correlations.iter().all(|c| matches!(c, Some(r) if *r < 0.0)),
        sentences: with_explanandum(&["7"], &explanandum),
        measurements: vec![
            Measurement::new("spike_windows", spikes.len() as f64),
            Measurement::new("largest_correlation", if spikes.is_empty() { f64::NAN } else { worst }),
        ],
    });

    // (iii) attribution of the secular trend
    let classification = classify_trend(study);
    let mut trend_sentences: Vec<&str> = vec!["6"];
    if pattern.sentence(super::FAULT_SENTENCE_ID).is_some() {
        trend_sentences.push(super::FAULT_SENTENCE_ID);
    }
    report.evidence.push(EvidenceCheck {
        label: "(iii)".into(),
        claim: format!(
            "the secular eccentricity trend is attributed by a convergence study: {}",
            classification.verdict
        ),
        passed: classification.verdict != Verdict::Undetermined,
        sentences: with_explanandum(&trend_sentences, &explanandum),
        measurements: vec![
            Measurement::new("converged_drift_per_orbit", classification.converged_drift),
            Measurement::new("converged_std_error", classification.converged_std_error),
            Measurement::new("numerical_component_per_orbit", classification.numerical_component),
        ],
    });
    if matches!(classification.verdict, Verdict::NumericalArtifact | Verdict::Mixed) {
        report.comments.extend(
            pattern
                .comments
                .iter()
                .filter(|c| c.kind == CommentKind::ErrorTerm)
                .cloned(),
        );
    }
    let finite = |v: f64| v.is_finite().then_some(v);
    report.attribution = Some(AttributionSummary {
        verdict: classification.verdict,
        converged_drift: finite(classification.converged_drift),
        converged_std_error: finite(classification.converged_std_error),
        numerical_component: finite(classification.numerical_component),
        levels: study
            .levels
            .iter()
            .map(|l| match &l.outcome {
                Ok(run) => LevelSummary {
                    tolerance: l.tolerance,
                    drift_per_orbit: finite(run.drift.per_orbit),
                    std_error: finite(run.drift.std_error),
                    accepted_steps: Some(run.accepted_steps),
                    failure: None,
                },
                Err(reason) => LevelSummary {
                    tolerance: l.tolerance,
                    drift_per_orbit: None,
                    std_error: None,
                    accepted_steps: None,
                    failure: Some(reason.clone()),
                },
            })
            .collect(),
        fault_magnitude: study.fault.map(|f| f.magnitude),
    });
    Ok(report)
}

fn with_explanandum(ids: &[&str], explanandum: &[String]) -> Vec<String> {
    ids.iter()
        .map(|s| s.to_string())
        .chain(explanandum.iter().cloned())
        .collect()
}

/// Correlation of successive changes in the orbit-normal components of the
/// orbital and spin angular momentum over `[time - width/2, time + width/2]`.
fn exchange_correlation(trajectory: &Trajectory, time: f64, width: f64) -> Option<f64> {
    let window: Vec<_> = trajectory
        .diagnostics
        .iter()
        .filter(|d| (d.time - time).abs() <= 0.5 * width)
        .collect();
    let normal = trajectory
        .diagnostics
        .iter()
        .min_by(|a, b| (a.time - time).abs().total_cmp(&(b.time - time).abs()))?
        .total_angular_momentum
        .try_normalize(0.0)?;
    let increments = |f: &dyn Fn(usize) -> f64| -> Vec<f64> {
        (1..window.len()).map(|k| f(k) - f(k - 1)).collect()
    };
    let orbital = increments(&|k| window[k].orbital_angular_momentum.dot(&normal));
    let spin = increments(&|k| window[k].spin_angular_momentum.dot(&normal));
    correlation(&orbital, &spin)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    PlainText,
    /// JSON tree carrying the same content as the plain text.
    Structured,
}

pub fn render_report(report: &ExplanationReport, format: ReportFormat) -> String {
    match format {
        ReportFormat::Structured => {
            serde_json::to_string_pretty(report).expect("report is JSON-representable") + "\n"
        }
        ReportFormat::PlainText => render_text(report),
    }
}

pub fn parse_structured(text: &str) -> Result<ExplanationReport, ExplainError> {
    serde_json::from_str(text).map_err(|e| ExplainError::Parse(e.to_string()))
}

fn number(v: Option<f64>) -> String {
    match v {
        None => "undefined".to_string(),
        Some(x) if x.fract() == 0.0 && x.abs() < 1e15 => format!("{x}"),
        Some(x) => format!("{x:E}"),
    }
}

fn render_text(report: &ExplanationReport) -> String {
    let mut out = String::new();
    if !report.pattern_name.is_empty() {
        let _ = writeln!(out, "{}\n", report.pattern_name);
    }

    out.push_str("Schematic Sentences:\n");
    for s in &report.sentences {
        let _ = writeln!(out, "  {}. {}", s.id, s.text);
        if let Some(call) = &s.call {
            let _ = writeln!(out, "     {call}");
        }
    }

    out.push_str("\nFilling Instructions:\n");
    for b in &report.filling {
        let value = if b.value.is_empty() { "unbound" } else { &b.value };
        let _ = writeln!(out, "  {} = {}  ({})", b.dummy, value, b.domain);
    }

    out.push_str("\nClassification:\n");
    let premises: Vec<&str> = report.classification.premises().collect();
    let _ = writeln!(out, "  Premises: {}", premises.join(", "));
    for (id, role) in &report.classification.0 {
        let list = |from: &std::collections::BTreeSet<String>| {
            from.iter().map(String::as_str).collect::<Vec<_>>().join(", ")
        };
        match role {
            Role::Premise => {}
            Role::Derived { from } => {
                let _ = writeln!(out, "  {id} is derived from {}", list(from));
            }
            Role::Explanandum { from } => {
                let _ = writeln!(out, "  Explanandum {id} follows from {}", list(from));
            }
        }
    }
    let _ = writeln!(out, "  Derivation order: {}", report.derivation_trace.join(", "));

    out.push_str("\nComments:\n");
    for c in &report.comments {
        let kind = match c.kind {
            CommentKind::UsageNote => "usage note".to_string(),
            CommentKind::AlternativeInstantiation => "alternative instantiation".to_string(),
            CommentKind::ErrorTerm => match &c.error_term {
                Some(t) => format!(
                    "error term, {} O(h^{}), p = {}, constants {}",
                    t.label,
                    t.order,
                    t.method_order,
                    t.constants.join(" ")
                ),
                None => "error term".to_string(),
            },
        };
        let _ = writeln!(out, "  {}. [{}] {}", c.id, kind, c.text);
    }

    out.push_str("\nEvidence:\n");
    for check in &report.evidence {
        let _ = writeln!(
            out,
            "  {} [{}] {} (sentences {})",
            check.label,
            if check.passed { "PASS" } else { "FAIL" },
            check.claim,
            check.sentences.join(", ")
        );
        for m in &check.measurements {
            let _ = writeln!(out, "      {} = {}", m.name, number(m.value));
        }
    }

    if let Some(a) = &report.attribution {
        out.push_str("\nAttribution:\n");
        let _ = writeln!(out, "  verdict: {}", a.verdict);
        let _ = writeln!(
            out,
            "  converged drift per orbit: {} +/- {}",
            number(a.converged_drift),
            number(a.converged_std_error)
        );
        let _ = writeln!(out, "  numerical component per orbit: {}", number(a.numerical_component));
        if let Some(f) = a.fault_magnitude {
            let _ = writeln!(out, "  injected fault: {f:E} m per accepted step at the base tolerance");
        }
        for l in &a.levels {
            match &l.failure {
                None => {
                    let _ = writeln!(
                        out,
                        "  tolerance {:E} m: drift {} +/- {} per orbit, {} accepted steps",
                        l.tolerance,
                        number(l.drift_per_orbit),
                        number(l.std_error),
                        l.accepted_steps.unwrap_or(0)
                    );
                }
                Some(reason) => {
                    let _ = writeln!(out, "  tolerance {:E} m: failed ({reason})", l.tolerance);
                }
            }
        }
    }

    if !report.artifacts.is_empty() {
        out.push_str("\nArtifacts:\n");
        for a in &report.artifacts {
            let _ = writeln!(out, "  {a}");
        }
    }

    let _ = writeln!(
        out,
        "\nStatus: explanandum {}",
        if report.is_supported() { "supported" } else { "unsupported" }
    );
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::explain::satellite_pattern;

    fn bare_report() -> ExplanationReport {
        let config = SimulationConfig::reference();
        ExplanationReport::from_pattern(&satellite_pattern(false), &bindings_for_config(&config, None))
            .unwrap()
    }

    #[test]
    fn config_bindings_cover_pattern() {
        let config = SimulationConfig::reference();
        let b = bindings_for_config(&config, Some(FaultInjection { magnitude: 1e-7 }));
        let pattern = satellite_pattern(true);
        let texts = instantiate(&pattern, &b).unwrap();
        assert!(texts[1].contains("6.25E7"), "{}", texts[1]);
        assert!(texts.iter().any(|t| t.contains("6.667E-11")));
        assert!(texts.iter().any(|t| t.contains("1E-7 m per step")));
    }

    #[test]
    fn empty_evidence_keeps_every_section() {
        let text = render_report(&bare_report(), ReportFormat::PlainText);
        for section in [
            "Schematic Sentences:",
            "Filling Instructions:",
            "Classification:",
            "Comments:",
            "Evidence:",
        ] {
            assert!(text.contains(section), "missing {section}");
        }
        assert!(text.ends_with("Status: explanandum unsupported\n"));
    }

    #[test]
    fn classification_section_lists_premises() {
        let text = render_report(&bare_report(), ReportFormat::PlainText);
        assert!(text.contains("Premises: 1, 2, 3, 4, 5\n"));
        assert!(text.contains("Explanandum E follows from 6, 7, 8\n"));
        assert!(text.contains("NBODY (XT, VEL, H, TOLERANCE):XT,VEL,H"));
    }

    #[test]
    fn error_terms_withheld_without_verdict() {
        assert!(bare_report().comments.iter().all(|c| c.kind != CommentKind::ErrorTerm));
    }

    #[test]
    fn structured_round_trip() {
        let mut report = bare_report();
        report.evidence.push(EvidenceCheck {
            label: "(i)".into(),
            claim: "claim".into(),
            passed: true,
            sentences: vec!["7".into()],
            measurements: vec![
                Measurement::new("x", 0.1 + 0.2),
                Measurement::new("nan", f64::NAN),
            ],
        });
        let text = render_report(&report, ReportFormat::Structured);
        assert_eq!(parse_structured(&text).unwrap(), report);
    }
}
