//! Unificationist argument patterns: schematic sentences with dummy
//! placeholders, filling instructions, a premise/derivation classification,
//! and kind-tagged comments.
//!
//! A pattern is loaded from a TOML document with four sections
//! (`sentences`, `filling`, `classification`, `comments`). The satellite
//! pattern ships with the crate; see [`satellite_pattern`].
//!
//! "Derivation" here means reachability through the classification's
//! from-relation, backed by numeric evidence checks on a simulation run
//! (see [`derive`]). No logical inference is performed.

mod report;

pub use report::{
    bindings_for_config, derive, parse_structured, render_report, AttributionSummary,
    EvidenceCheck, ExplanationReport, LevelSummary, Measurement, ReportBinding, ReportFormat,
    ReportSentence,
};

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use num_rational::Ratio;
use petgraph::algo::{has_path_connecting, tarjan_scc};
use petgraph::graphmap::DiGraphMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Order of the Runge-Kutta method the error terms refer to.
pub const METHOD_ORDER: u32 = 4;

/// Id of the optional discretization-error premise.
pub const FAULT_SENTENCE_ID: &str = "8'";

const SATELLITE_PATTERN: &str = include_str!("satellite.toml");

#[derive(Debug, Error, PartialEq)]
pub enum PatternError {
    #[error("pattern document: {0}")]
    Syntax(String),
    #[error("sentence {sentence}: {reason}")]
    Template { sentence: String, reason: String },
    #[error("sentence {sentence}: placeholders {undeclared:?} are not declared, dummies {unused:?} do not occur")]
    DummyMismatch {
        sentence: String,
        undeclared: Vec<String>,
        unused: Vec<String>,
    },
    #[error("sentence id {0} is used twice")]
    DuplicateSentence(String),
    #[error("no filling instruction for dummies {0:?}")]
    UncoveredDummies(Vec<String>),
    #[error("comment {0} is an error term but carries no error term")]
    MissingErrorTerm(String),
    #[error("comment {comment}: method order must be {expected}, found {found}")]
    MethodOrder {
        comment: String,
        expected: u32,
        found: u32,
    },
}

#[derive(Debug, Error, PartialEq)]
pub enum ExplainError {
    #[error("missing binding for {}", .0.join(", "))]
    MissingBinding(Vec<String>),
    #[error("binding for {0} contains a brace")]
    InvalidBinding(String),
    #[error("pattern classification is invalid: {}", join_defects(.0))]
    InvalidPattern(Vec<Defect>),
    #[error("structured report: {0}")]
    Parse(String),
}

fn join_defects(defects: &[Defect]) -> String {
    defects
        .iter()
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join("; ")
}

/// Compressed subroutine form `NAME (IN1, IN2): OUT1,OUT2`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CallSignature {
    pub name: String,
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
}

impl fmt::Display for CallSignature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} ({}):{}",
            self.name,
            self.inputs.join(", "),
            self.outputs.join(",")
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SchematicSentence {
    pub id: String,
    /// Text with `{NAME}` placeholders.
    pub template: String,
    pub dummies: BTreeSet<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub call: Option<CallSignature>,
}

impl SchematicSentence {
    /// Builds a sentence whose dummies are exactly its placeholders.
    pub fn new(id: &str, template: &str) -> Result<Self, PatternError> {
        let dummies = placeholders(template).map_err(|reason| PatternError::Template {
            sentence: id.to_string(),
            reason,
        })?;
        Ok(Self {
            id: id.to_string(),
            template: template.to_string(),
            dummies: dummies.into_iter().collect(),
            call: None,
        })
    }

    fn check(&self) -> Result<(), PatternError> {
        let found: BTreeSet<String> = placeholders(&self.template)
            .map_err(|reason| PatternError::Template {
                sentence: self.id.clone(),
                reason,
            })?
            .into_iter()
            .collect();
        if found != self.dummies {
            return Err(PatternError::DummyMismatch {
                sentence: self.id.clone(),
                undeclared: found.difference(&self.dummies).cloned().collect(),
                unused: self.dummies.difference(&found).cloned().collect(),
            });
        }
        Ok(())
    }
}

/// Placeholder names in order of appearance.
fn placeholders(template: &str) -> Result<Vec<String>, String> {
    let mut names = Vec::new();
    let mut rest = template;
    while let Some(open) = rest.find(['{', '}']) {
        if rest[open..].starts_with('}') {
            return Err(format!("unmatched '}}' at byte {}", template.len() - rest.len() + open));
        }
        let after = &rest[open + 1..];
        let close = after
            .find(['{', '}'])
            .filter(|&i| after[i..].starts_with('}'))
            .ok_or_else(|| "unterminated placeholder".to_string())?;
        let name = &after[..close];
        if name.trim().is_empty() {
            return Err("empty placeholder".to_string());
        }
        names.push(name.to_string());
        rest = &after[close + 1..];
    }
    Ok(names)
}

fn fill(template: &str, values: &BTreeMap<&str, &str>) -> String {
    let mut out = String::with_capacity(template.len());
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let after = &rest[open + 1..];
        let close = after.find('}').expect("template was checked");
        out.push_str(values[&after[..close]]);
        rest = &after[close + 1..];
    }
    out.push_str(rest);
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FillingInstruction {
    /// What kind of value replaces the dummy.
    pub domain: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub binding: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FillingInstructions(pub BTreeMap<String, FillingInstruction>);

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "role", rename_all = "snake_case")]
pub enum Role {
    Premise,
    Derived { from: BTreeSet<String> },
    Explanandum { from: BTreeSet<String> },
}

impl Role {
    pub fn sources(&self) -> Option<&BTreeSet<String>> {
        match self {
            Role::Premise => None,
            Role::Derived { from } | Role::Explanandum { from } => Some(from),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Classification(pub BTreeMap<String, Role>);

impl Classification {
    pub fn premises(&self) -> impl Iterator<Item = &str> {
        self.0
            .iter()
            .filter(|(_, r)| matches!(r, Role::Premise))
            .map(|(id, _)| id.as_str())
    }

    pub fn explananda(&self) -> impl Iterator<Item = &str> {
        self.0
            .iter()
            .filter(|(_, r)| matches!(r, Role::Explanandum { .. }))
            .map(|(id, _)| id.as_str())
    }

    /// Mutable from-set of a derived sentence or explanandum.
    pub fn sources_mut(&mut self, id: &str) -> Option<&mut BTreeSet<String>> {
        match self.0.get_mut(id)? {
            Role::Premise => None,
            Role::Derived { from } | Role::Explanandum { from } => Some(from),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CommentKind {
    UsageNote,
    AlternativeInstantiation,
    ErrorTerm,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorLabel {
    LocalDiscretization,
    Accumulated,
    Roundoff,
}

impl fmt::Display for ErrorLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::LocalDiscretization => "local_discretization",
            Self::Accumulated => "accumulated",
            Self::Roundoff => "roundoff",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorTerm {
    pub label: ErrorLabel,
    /// Exponent of the step length `h`.
    #[serde(with = "ratio_text")]
    pub order: Ratio<i32>,
    pub constants: Vec<String>,
    pub method_order: u32,
}

mod ratio_text {
    use num_rational::Ratio;
    use serde::{de::Error, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(value: &Ratio<i32>, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(value)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Ratio<i32>, D::Error> {
        let text = String::deserialize(d)?;
        text.trim().parse().map_err(D::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Comment {
    pub id: String,
    pub kind: CommentKind,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error_term: Option<ErrorTerm>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArgumentPattern {
    #[serde(default)]
    pub name: String,
    pub sentences: Vec<SchematicSentence>,
    pub filling: FillingInstructions,
    pub classification: Classification,
    #[serde(default)]
    pub comments: Vec<Comment>,
}

impl ArgumentPattern {
    pub fn from_toml(text: &str) -> Result<Self, PatternError> {
        let pattern: Self = toml::from_str(text).map_err(|e| PatternError::Syntax(e.to_string()))?;
        pattern.check()?;
        Ok(pattern)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("pattern fields are TOML-representable")
    }

    /// Structural checks that do not involve the classification graph.
    pub fn check(&self) -> Result<(), PatternError> {
        let mut seen = BTreeSet::new();
        for s in &self.sentences {
            if !seen.insert(s.id.as_str()) {
                return Err(PatternError::DuplicateSentence(s.id.clone()));
            }
            s.check()?;
        }
        let uncovered: Vec<String> = self
            .dummies()
            .into_iter()
            .filter(|d| !self.filling.0.contains_key(*d))
            .map(str::to_string)
            .collect();
        if !uncovered.is_empty() {
            return Err(PatternError::UncoveredDummies(uncovered));
        }
        for c in &self.comments {
            match (&c.kind, &c.error_term) {
                (CommentKind::ErrorTerm, None) => {
                    return Err(PatternError::MissingErrorTerm(c.id.clone()))
                }
                (_, Some(t)) if t.method_order != METHOD_ORDER => {
                    return Err(PatternError::MethodOrder {
                        comment: c.id.clone(),
                        expected: METHOD_ORDER,
                        found: t.method_order,
                    })
                }
                _ => {}
            }
        }
        Ok(())
    }

    pub fn dummies(&self) -> BTreeSet<&str> {
        self.sentences
            .iter()
            .flat_map(|s| s.dummies.iter().map(String::as_str))
            .collect()
    }

    pub fn sentence(&self, id: &str) -> Option<&SchematicSentence> {
        self.sentences.iter().find(|s| s.id == id)
    }

    /// Drops a sentence together with its classification entry, every
    /// reference to it, and filling instructions no other sentence uses.
    pub fn without_sentence(mut self, id: &str) -> Self {
        self.sentences.retain(|s| s.id != id);
        self.classification.0.remove(id);
        for role in self.classification.0.values_mut() {
            if let Role::Derived { from } | Role::Explanandum { from } = role {
                from.remove(id);
            }
        }
        let used: BTreeSet<String> = self.dummies().into_iter().map(str::to_string).collect();
        self.filling.0.retain(|d, _| used.contains(d));
        self
    }

    /// Sentence ids ordered so that every sentence follows its sources.
    ///
    /// Ties go to the sentence listed first. Sentences caught in a cycle
    /// are left out.
    pub fn derivation_order(&self) -> Vec<String> {
        let ids: Vec<&str> = self.sentences.iter().map(|s| s.id.as_str()).collect();
        let position = |id: &str| ids.iter().position(|x| *x == id);
        let sources: Vec<Vec<usize>> = ids
            .iter()
            .map(|id| {
                self.classification
                    .0
                    .get(*id)
                    .and_then(Role::sources)
                    .map(|from| from.iter().filter_map(|s| position(s)).collect())
                    .unwrap_or_default()
            })
            .collect();
        let mut placed = vec![false; ids.len()];
        let mut order = Vec::with_capacity(ids.len());
        while let Some(next) =
            (0..ids.len()).find(|&i| !placed[i] && sources[i].iter().all(|&s| placed[s]))
        {
            placed[next] = true;
            order.push(ids[next].to_string());
        }
        order
    }
}

/// The shipped satellite pattern. Sentence 8' (a measured discretization
/// error) is kept only when `with_fault` is set.
pub fn satellite_pattern(with_fault: bool) -> ArgumentPattern {
    let pattern = ArgumentPattern::from_toml(SATELLITE_PATTERN).expect("shipped pattern is valid");
    if with_fault {
        pattern
    } else {
        pattern.without_sentence(FAULT_SENTENCE_ID)
    }
}

/// Text of the shipped satellite pattern document.
pub fn satellite_pattern_source() -> &'static str {
    SATELLITE_PATTERN
}

/// Replaces every placeholder. Explicit `bindings` take precedence over the
/// concrete bindings in the filling instructions.
pub fn instantiate(
    pattern: &ArgumentPattern,
    bindings: &BTreeMap<String, String>,
) -> Result<Vec<String>, ExplainError> {
    let values = resolve_bindings(pattern, bindings)?;
    Ok(pattern
        .sentences
        .iter()
        .map(|s| fill(&s.template, &values))
        .collect())
}

fn resolve_bindings<'a>(
    pattern: &'a ArgumentPattern,
    bindings: &'a BTreeMap<String, String>,
) -> Result<BTreeMap<&'a str, &'a str>, ExplainError> {
    let mut values = BTreeMap::new();
    let mut missing = Vec::new();
    for dummy in pattern.dummies() {
        let value = bindings.get(dummy).map(String::as_str).or_else(|| {
            pattern
                .filling
                .0
                .get(dummy)
                .and_then(|f| f.binding.as_deref())
        });
        match value {
            Some(v) if v.contains(['{', '}']) => {
                return Err(ExplainError::InvalidBinding(dummy.to_string()))
            }
            Some(v) => {
                values.insert(dummy, v);
            }
            None => missing.push(dummy.to_string()),
        }
    }
    if missing.is_empty() {
        Ok(values)
    } else {
        Err(ExplainError::MissingBinding(missing))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Defect {
    NoExplanandum,
    MultipleExplananda(Vec<String>),
    /// A classification entry names a sentence the pattern lacks.
    UnknownSentence(String),
    UnknownSource { sentence: String, source: String },
    /// Sentences forming one strongly connected component.
    Cycle(Vec<String>),
    /// The explanandum cannot be reached from any premise.
    Unreachable(String),
    /// A sentence has no role.
    Unclassified(String),
    /// A sentence from which the explanandum cannot be reached, so nothing
    /// in the argument rests on it.
    Unsupported(String),
}

impl Defect {
    /// Fatal defects make the classification unusable; the others flag
    /// sentences that take no part in the argument.
    pub fn is_fatal(&self) -> bool {
        !matches!(self, Defect::Unclassified(_) | Defect::Unsupported(_))
    }
}

impl fmt::Display for Defect {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Defect::NoExplanandum => write!(f, "no explanandum"),
            Defect::MultipleExplananda(ids) => {
                write!(f, "more than one explanandum: {}", ids.join(", "))
            }
            Defect::UnknownSentence(id) => write!(f, "classification names unknown sentence {id}"),
            Defect::UnknownSource { sentence, source } => {
                write!(f, "sentence {sentence} is derived from unknown sentence {source}")
            }
            Defect::Cycle(ids) => write!(f, "cycle through {}", ids.join(", ")),
            Defect::Unreachable(id) => {
                write!(f, "explanandum {id} is unreachable from the premises")
            }
            Defect::Unclassified(id) => write!(f, "sentence {id} has no role"),
            Defect::Unsupported(id) => {
                write!(f, "sentence {id} is unsupported: the explanandum does not rest on it")
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Validation {
    pub defects: Vec<Defect>,
}

impl Validation {
    /// True when no defect is fatal.
    pub fn is_accepted(&self) -> bool {
        self.defects.iter().all(|d| !d.is_fatal())
    }

    pub fn is_clean(&self) -> bool {
        self.defects.is_empty()
    }
}

pub fn validate_classification(pattern: &ArgumentPattern) -> Validation {
    let classification = &pattern.classification.0;
    let known: BTreeSet<&str> = pattern.sentences.iter().map(|s| s.id.as_str()).collect();
    let mut defects = Vec::new();

    let explananda: Vec<&str> = pattern.classification.explananda().collect();
    match explananda.len() {
        0 => defects.push(Defect::NoExplanandum),
        1 => {}
        _ => defects.push(Defect::MultipleExplananda(
            explananda.iter().map(|s| s.to_string()).collect(),
        )),
    }

    let mut graph: DiGraphMap<&str, ()> = DiGraphMap::new();
    for id in &known {
        graph.add_node(id);
    }
    for (id, role) in classification {
        if !known.contains(id.as_str()) {
            defects.push(Defect::UnknownSentence(id.clone()));
            continue;
        }
        for source in role.sources().into_iter().flatten() {
            if known.contains(source.as_str()) {
                graph.add_edge(source.as_str(), id.as_str(), ());
            } else {
                defects.push(Defect::UnknownSource {
                    sentence: id.clone(),
                    source: source.clone(),
                });
            }
        }
    }
    for id in &known {
        if !classification.contains_key(*id) {
            defects.push(Defect::Unclassified(id.to_string()));
        }
    }

    for component in tarjan_scc(&graph) {
        let looped = component.len() > 1 || graph.contains_edge(component[0], component[0]);
        if looped {
            let mut ids: Vec<String> = component.iter().map(|s| s.to_string()).collect();
            ids.sort();
            defects.push(Defect::Cycle(ids));
        }
    }

    if let [target] = explananda[..] {
        if known.contains(target) {
            let premises: Vec<&str> = pattern
                .classification
                .premises()
                .filter(|p| known.contains(p))
                .collect();
            let reachable = premises
                .iter()
                .any(|p| has_path_connecting(&graph, p, target, None));
            if !reachable {
                defects.push(Defect::Unreachable(target.to_string()));
            }
            for id in &known {
                if *id != target && !has_path_connecting(&graph, id, target, None) {
                    defects.push(Defect::Unsupported(id.to_string()));
                }
            }
        }
    }
    defects.sort();
    Validation { defects }
}
