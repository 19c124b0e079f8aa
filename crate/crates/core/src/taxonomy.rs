//! Defect taxonomy, severity scale, confidence tiers and the `Finding` record.
//!
//! Findings arrive from auditor models as loosely-typed JSON. [`validate_finding`]
//! is the single gate that turns such a record into a typed [`Finding`]; it
//! reports every problem it sees instead of stopping at the first.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use serde_json::{Map, Value};
use thiserror::Error;

use crate::hash::content_hash;

/// Confidence floor below which findings are not reported.
pub const SUPPRESSION_THRESHOLD: f64 = 0.3;

/// Top-level defect category.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Category {
    #[serde(rename = "GT")]
    GroundTruth,
    #[serde(rename = "EVAL")]
    Evaluation,
    #[serde(rename = "INST")]
    Instruction,
    #[serde(rename = "ENV")]
    Environment,
}

impl Category {
    pub const ALL: [Category; 4] = [
        Category::GroundTruth,
        Category::Evaluation,
        Category::Instruction,
        Category::Environment,
    ];

    pub fn code(self) -> &'static str {
        match self {
            Category::GroundTruth => "GT",
            Category::Evaluation => "EVAL",
            Category::Instruction => "INST",
            Category::Environment => "ENV",
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Category::GroundTruth => "Ground Truth",
            Category::Evaluation => "Evaluation",
            Category::Instruction => "Instruction",
            Category::Environment => "Environment",
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

impl FromStr for Category {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let upper = s.trim().to_ascii_uppercase();
        Category::ALL
            .into_iter()
            .find(|c| c.code() == upper)
            .ok_or_else(|| s.to_string())
    }
}

macro_rules! subcategories {
    ($( $variant:ident => $code:literal, $cat:ident, $name:literal, $desc:literal; )*) => {
        /// One of the fourteen leaf defect classes.
        #[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
        pub enum Subcategory {
            $( $variant, )*
        }

        impl Subcategory {
            /// Taxonomy order: grouped by category, as the reference table lists them.
            pub const ALL: [Subcategory; 14] = [ $( Subcategory::$variant, )* ];

            pub fn code(self) -> &'static str {
                match self { $( Subcategory::$variant => $code, )* }
            }

            pub fn category(self) -> Category {
                match self { $( Subcategory::$variant => Category::$cat, )* }
            }

            /// Short human name, e.g. "Wrong tolerance".
            pub fn name(self) -> &'static str {
                match self { $( Subcategory::$variant => $name, )* }
            }

            pub fn description(self) -> &'static str {
                match self { $( Subcategory::$variant => $desc, )* }
            }
        }
    };
}

subcategories! {
    GtLogic => "GT-LOGIC", GroundTruth, "Wrong logic / methodology",
        "Gold uses incorrect algorithm, computes wrong metric, or logical opposite";
    GtData => "GT-DATA", GroundTruth, "Wrong data handling",
        "Gold uses wrong files/columns, drops data, or covers only partial scope";
    GtFmt => "GT-FMT", GroundTruth, "Output format mismatch",
        "Gold output format does not match the specification";
    EvalJudgeBias => "EVAL-JUDGE-BIAS", Evaluation, "Judge bias / anchoring",
        "Evaluator penalizes valid functionally-equivalent alternatives";
    EvalMismatch => "EVAL-MISMATCH", Evaluation, "Spec-eval mismatch",
        "Eval checks something different from the specification";
    EvalCoverage => "EVAL-COVERAGE", Evaluation, "Incomplete output coverage",
        "Eval doesn't handle all valid output formats";
    EvalTolerance => "EVAL-TOLERANCE", Evaluation, "Wrong tolerance",
        "Numeric tolerance or thresholds are incorrect";
    EvalStochastic => "EVAL-STOCHASTIC", Evaluation, "Unhandled non-determinism",
        "Eval assumes deterministic outputs when it should not";
    InstIncomplete => "INST-INCOMPLETE", Instruction, "Underspecified requirements",
        "Essential information missing, preventing a unique solution";
    InstContradict => "INST-CONTRADICT", Instruction, "Cross-artifact misalignment",
        "Instructions conflict internally or with gold/eval";
    InstInfeasible => "INST-INFEASIBLE", Instruction, "Task infeasible as written",
        "Task cannot be solved with provided information";
    EnvDep => "ENV-DEP", Environment, "Missing/conflicting dependencies",
        "Required packages unavailable or conflict";
    EnvPath => "ENV-PATH", Environment, "Path configuration errors",
        "Hardcoded paths don't match runtime environment";
    EnvResource => "ENV-RESOURCE", Environment, "Resource constraints",
        "Task requires network, external services, or exceeds time limits";
}

/// Returns the category a subcategory belongs to.
pub fn category_of(sub: Subcategory) -> Category {
    sub.category()
}

impl fmt::Display for Subcategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

impl FromStr for Subcategory {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let upper = s.trim().to_ascii_uppercase();
        Subcategory::ALL
            .into_iter()
            .find(|c| c.code() == upper)
            .ok_or_else(|| s.to_string())
    }
}

impl Serialize for Subcategory {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(self.code())
    }
}

impl<'de> Deserialize<'de> for Subcategory {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse()
            .map_err(|v| serde::de::Error::custom(format!("unknown subcategory `{v}`")))
    }
}

/// Impact on benchmark correctness. Ordered so that `Critical` is the maximum.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Severity {
    Low,
    Medium,
    High,
    Critical,
}

impl Severity {
    pub const ALL: [Severity; 4] = [
        Severity::Critical,
        Severity::High,
        Severity::Medium,
        Severity::Low,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Severity::Critical => "Critical",
            Severity::High => "High",
            Severity::Medium => "Medium",
            Severity::Low => "Low",
        }
    }
}

impl fmt::Display for Severity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Severity {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let t = s.trim();
        Severity::ALL
            .into_iter()
            .find(|v| v.as_str().eq_ignore_ascii_case(t))
            .ok_or_else(|| s.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FindingType {
    #[serde(rename = "BUG")]
    Bug,
    #[serde(rename = "WARNING")]
    Warning,
}

impl FindingType {
    pub fn as_str(self) -> &'static str {
        match self {
            FindingType::Bug => "BUG",
            FindingType::Warning => "WARNING",
        }
    }
}

impl FromStr for FindingType {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_uppercase().as_str() {
            "BUG" => Ok(FindingType::Bug),
            "WARNING" => Ok(FindingType::Warning),
            _ => Err(s.to_string()),
        }
    }
}

/// Confidence bucket. Ordered `Suppressed < Possible < Likely < Confirmed`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConfidenceTier {
    Suppressed,
    Possible,
    Likely,
    Confirmed,
}

impl ConfidenceTier {
    /// Inclusive lower bound of the bucket.
    pub fn lower_bound(self) -> f64 {
        match self {
            ConfidenceTier::Suppressed => 0.0,
            ConfidenceTier::Possible => SUPPRESSION_THRESHOLD,
            ConfidenceTier::Likely => 0.55,
            ConfidenceTier::Confirmed => 0.8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Error)]
#[error("confidence {0} is outside [0, 1]")]
pub struct OutOfRange(pub f64);

/// Buckets a confidence score. Buckets are half-open at the upper edge,
/// except `Confirmed` which includes 1.0.
pub fn tier_of(confidence: f64) -> Result<ConfidenceTier, OutOfRange> {
    if !(0.0..=1.0).contains(&confidence) {
        return Err(OutOfRange(confidence));
    }
    Ok(if confidence >= 0.8 {
        ConfidenceTier::Confirmed
    } else if confidence >= 0.55 {
        ConfidenceTier::Likely
    } else if confidence >= SUPPRESSION_THRESHOLD {
        ConfidenceTier::Possible
    } else {
        ConfidenceTier::Suppressed
    })
}

/// 1-based inclusive line span.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LineRange {
    pub start: u32,
    pub end: u32,
}

/// Source citation backing a finding.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Evidence {
    /// Artifact path relative to the task directory, e.g. `tests/eval.py`.
    pub source: String,
    pub line_range: Option<LineRange>,
    pub snippet: String,
}

#[derive(Serialize, Deserialize)]
struct EvidenceWire {
    source: String,
    line_start: Option<u32>,
    line_end: Option<u32>,
    snippet: String,
}

impl Serialize for Evidence {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        EvidenceWire {
            source: self.source.clone(),
            line_start: self.line_range.map(|r| r.start),
            line_end: self.line_range.map(|r| r.end),
            snippet: self.snippet.clone(),
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for Evidence {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let w = EvidenceWire::deserialize(deserializer)?;
        let line_range = match (w.line_start, w.line_end) {
            (Some(start), Some(end)) => Some(LineRange { start, end }),
            (Some(start), None) => Some(LineRange { start, end: start }),
            (None, _) => None,
        };
        Ok(Evidence {
            source: w.source,
            line_range,
            snippet: w.snippet,
        })
    }
}

/// The kind of artifact an evidence source points into, derived from its path.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ArtifactKind {
    Instruction,
    Tests,
    Solution,
    Environment,
    Agent,
    Document,
    Other,
}

impl Evidence {
    pub fn artifact_kind(&self) -> ArtifactKind {
        let path = self.source.trim_start_matches("./");
        match path.split('/').next().unwrap_or("") {
            "instruction.md" => ArtifactKind::Instruction,
            "tests" => ArtifactKind::Tests,
            "solution" => ArtifactKind::Solution,
            "environment" => ArtifactKind::Environment,
            "agent" => ArtifactKind::Agent,
            "domain_knowledge.md" | "data_description.md" => ArtifactKind::Document,
            _ => ArtifactKind::Other,
        }
    }
}

/// One structured defect report against a task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Finding {
    pub task_id: String,
    pub category: Category,
    pub subcategory: Subcategory,
    pub severity: Severity,
    pub finding_type: FindingType,
    pub title: String,
    pub description: String,
    pub evidence: Vec<Evidence>,
    pub recommendation: String,
    pub confidence: f64,
    pub auditor_model: String,
}

impl Finding {
    /// Stable identity over (task, subcategory, title, first evidence snippet).
    pub fn hash(&self) -> String {
        let snippet = self.evidence.first().map(|e| e.snippet.as_str()).unwrap_or("");
        content_hash(&[&self.task_id, self.subcategory.code(), &self.title, snippet])
    }

    pub fn tier(&self) -> ConfidenceTier {
        tier_of(self.confidence).unwrap_or(ConfidenceTier::Suppressed)
    }

    pub fn is_retained(&self) -> bool {
        self.confidence >= SUPPRESSION_THRESHOLD
    }

    /// The record as an auditor model is asked to emit it (no task id or model).
    pub fn to_wire(&self) -> Value {
        let mut v = serde_json::to_value(self).expect("finding serializes");
        if let Some(obj) = v.as_object_mut() {
            obj.remove("task_id");
            obj.remove("auditor_model");
        }
        v
    }
}

#[derive(Debug, Clone, PartialEq, Error, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ValidationError {
    #[error("record is not a JSON object")]
    NotAnObject,
    #[error("missing field `{field}`")]
    MissingField { field: String },
    #[error("field `{field}` must be {expected}")]
    WrongType { field: String, expected: String },
    #[error("field `{field}` must not be empty")]
    EmptyField { field: String },
    #[error("unknown category `{value}`")]
    UnknownCategory { value: String },
    #[error("unknown subcategory `{value}`")]
    UnknownSubcategory { value: String },
    #[error("unknown severity `{value}`")]
    UnknownSeverity { value: String },
    #[error("unknown finding type `{value}`")]
    UnknownFindingType { value: String },
    #[error("category `{category}` does not match subcategory `{subcategory}`")]
    CategoryMismatch { category: String, subcategory: String },
    #[error("confidence {value} is outside [0, 1]")]
    ConfidenceOutOfRange { value: f64 },
    #[error("evidence[{index}]: {reason}")]
    InvalidEvidence { index: usize, reason: String },
}

impl ValidationError {
    pub fn is_unknown_subcategory(&self) -> bool {
        matches!(self, ValidationError::UnknownSubcategory { .. })
    }
}

/// Provenance attached to a validated finding; not part of the model's output.
#[derive(Debug, Clone, Copy)]
pub struct FindingContext<'a> {
    pub task_id: &'a str,
    pub auditor_model: &'a str,
}

struct Collector<'a> {
    obj: &'a Map<String, Value>,
    errors: Vec<ValidationError>,
}

impl<'a> Collector<'a> {
    fn get(&mut self, field: &str) -> Option<&'a Value> {
        match self.obj.get(field) {
            None | Some(Value::Null) => {
                self.errors.push(ValidationError::MissingField { field: field.into() });
                None
            }
            Some(v) => Some(v),
        }
    }

    fn string(&mut self, field: &str) -> Option<&'a str> {
        let v = self.get(field)?;
        match v.as_str() {
            Some(s) => Some(s),
            None => {
                self.errors.push(ValidationError::WrongType {
                    field: field.into(),
                    expected: "a string".into(),
                });
                None
            }
        }
    }

    fn text(&mut self, field: &str) -> Option<String> {
        let s = self.string(field)?;
        if s.trim().is_empty() {
            self.errors.push(ValidationError::EmptyField { field: field.into() });
            return None;
        }
        Some(s.to_string())
    }

    fn parsed<T: FromStr<Err = String>>(
        &mut self,
        field: &str,
        unknown: impl Fn(String) -> ValidationError,
    ) -> Option<T> {
        let s = self.string(field)?;
        match s.parse::<T>() {
            Ok(v) => Some(v),
            Err(v) => {
                self.errors.push(unknown(v));
                None
            }
        }
    }
}

fn validate_evidence(index: usize, raw: &Value) -> Result<Evidence, ValidationError> {
    let invalid = |reason: &str| ValidationError::InvalidEvidence { index, reason: reason.into() };
    let obj = raw.as_object().ok_or_else(|| invalid("not an object"))?;
    let source = obj
        .get("source")
        .and_then(Value::as_str)
        .filter(|s| !s.trim().is_empty())
        .ok_or_else(|| invalid("missing or empty `source`"))?;
    let snippet = obj
        .get("snippet")
        .and_then(Value::as_str)
        .filter(|s| !s.trim().is_empty())
        .ok_or_else(|| invalid("missing or empty `snippet`"))?;
    let line = |key: &str| -> Result<Option<u32>, ValidationError> {
        match obj.get(key) {
            None | Some(Value::Null) => Ok(None),
            Some(v) => v
                .as_u64()
                .filter(|n| *n >= 1 && *n <= u32::MAX as u64)
                .map(|n| Some(n as u32))
                .ok_or_else(|| invalid(&format!("`{key}` must be a positive integer"))),
        }
    };
    let line_range = match (line("line_start")?, line("line_end")?) {
        (Some(start), Some(end)) if start > end => {
            return Err(invalid("line_start is after line_end"));
        }
        (Some(start), Some(end)) => Some(LineRange { start, end }),
        (Some(start), None) => Some(LineRange { start, end: start }),
        (None, Some(_)) => return Err(invalid("line_end without line_start")),
        (None, None) => None,
    };
    Ok(Evidence {
        source: source.to_string(),
        line_range,
        snippet: snippet.to_string(),
    })
}

/// Validates one raw record emitted by an auditor model.
///
/// On failure the full list of problems is returned.
pub fn validate_finding(raw: &Value, ctx: FindingContext<'_>) -> Result<Finding, Vec<ValidationError>> {
    let Some(obj) = raw.as_object() else {
        return Err(vec![ValidationError::NotAnObject]);
    };
    let mut c = Collector { obj, errors: Vec::new() };

    let category: Option<Category> =
        c.parsed("category", |value| ValidationError::UnknownCategory { value });
    let subcategory: Option<Subcategory> =
        c.parsed("subcategory", |value| ValidationError::UnknownSubcategory { value });
    let severity: Option<Severity> =
        c.parsed("severity", |value| ValidationError::UnknownSeverity { value });
    let finding_type: Option<FindingType> =
        c.parsed("finding_type", |value| ValidationError::UnknownFindingType { value });
    let title = c.text("title");
    let description = c.text("description");
    let recommendation = c.string("recommendation").map(str::to_string);

    let confidence = c.get("confidence").and_then(|v| match v.as_f64() {
        Some(x) if (0.0..=1.0).contains(&x) => Some(x),
        Some(x) => {
            c.errors.push(ValidationError::ConfidenceOutOfRange { value: x });
            None
        }
        None => {
            c.errors.push(ValidationError::WrongType {
                field: "confidence".into(),
                expected: "a number".into(),
            });
            None
        }
    });

    let evidence = c.get("evidence").and_then(|v| match v.as_array() {
        Some(items) if items.is_empty() => {
            c.errors.push(ValidationError::EmptyField { field: "evidence".into() });
            None
        }
        Some(items) => {
            let mut out = Vec::with_capacity(items.len());
            for (i, item) in items.iter().enumerate() {
                match validate_evidence(i, item) {
                    Ok(e) => out.push(e),
                    Err(e) => c.errors.push(e),
                }
            }
            (out.len() == items.len()).then_some(out)
        }
        None => {
            c.errors.push(ValidationError::WrongType {
                field: "evidence".into(),
                expected: "an array".into(),
            });
            None
        }
    });

    if let (Some(cat), Some(sub)) = (category, subcategory) {
        if sub.category() != cat {
            c.errors.push(ValidationError::CategoryMismatch {
                category: cat.code().into(),
                subcategory: sub.code().into(),
            });
        }
    }

    let errors = c.errors;
    match (category, subcategory, severity, finding_type, title, description, recommendation, confidence, evidence) {
        (Some(category), Some(subcategory), Some(severity), Some(finding_type), Some(title), Some(description), Some(recommendation), Some(confidence), Some(evidence))
            if errors.is_empty() =>
        {
            Ok(Finding {
                task_id: ctx.task_id.to_string(),
                category,
                subcategory,
                severity,
                finding_type,
                title,
                description,
                evidence,
                recommendation,
                confidence,
                auditor_model: ctx.auditor_model.to_string(),
            })
        }
        _ => Err(errors),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use serde_json::json;

    const CTX: FindingContext<'static> = FindingContext { task_id: "task_001", auditor_model: "m" };

    fn valid_record() -> Value {
        json!({
            "category": "EVAL",
            "subcategory": "EVAL-MISMATCH",
            "severity": "High",
            "finding_type": "BUG",
            "title": "Evaluator checks drug names",
            "description": "Instruction asks for SMILES; eval matches names.",
            "evidence": [{"source": "tests/eval.py", "line_start": 4, "line_end": 4, "snippet": "if \"Foscarnet\" in pred[i]:"}],
            "recommendation": "Compare canonical SMILES.",
            "confidence": 0.9
        })
    }

    #[test]
    fn category_prefix_examples() {
        assert_eq!(category_of(Subcategory::EvalJudgeBias), Category::Evaluation);
        assert_eq!(category_of(Subcategory::EnvPath), Category::Environment);
        assert_eq!(category_of(Subcategory::GtFmt), Category::GroundTruth);
    }

    #[test]
    fn every_subcategory_code_starts_with_its_category() {
        for s in Subcategory::ALL {
            assert!(s.code().starts_with(&format!("{}-", s.category().code())), "{s}");
        }
        let per_cat: Vec<usize> = Category::ALL
            .iter()
            .map(|c| Subcategory::ALL.iter().filter(|s| s.category() == *c).count())
            .collect();
        assert_eq!(per_cat, vec![3, 5, 3, 3]);
    }

    #[test]
    fn tier_examples() {
        assert_eq!(tier_of(0.80).unwrap(), ConfidenceTier::Confirmed);
        assert_eq!(tier_of(0.55).unwrap(), ConfidenceTier::Likely);
        assert_eq!(tier_of(0.29).unwrap(), ConfidenceTier::Suppressed);
        assert_eq!(tier_of(0.3).unwrap(), ConfidenceTier::Possible);
        assert_eq!(tier_of(1.0).unwrap(), ConfidenceTier::Confirmed);
        assert_eq!(tier_of(0.0).unwrap(), ConfidenceTier::Suppressed);
        assert!(tier_of(1.01).is_err());
        assert!(tier_of(-0.1).is_err());
        assert!(tier_of(f64::NAN).is_err());
    }

    #[test]
    fn severity_orders_critical_highest() {
        assert!(Severity::Critical > Severity::High);
        assert!(Severity::High > Severity::Medium);
        assert!(Severity::Medium > Severity::Low);
    }

    #[test]
    fn category_mismatch_is_reported() {
        let mut r = valid_record();
        r["subcategory"] = json!("GT-LOGIC");
        let errs = validate_finding(&r, CTX).unwrap_err();
        assert_eq!(
            errs,
            vec![ValidationError::CategoryMismatch { category: "EVAL".into(), subcategory: "GT-LOGIC".into() }]
        );
    }

    #[test]
    fn misspelled_subcategory_is_unknown() {
        let mut r = valid_record();
        r["subcategory"] = json!("EVAL-JUDGEBIAS");
        let errs = validate_finding(&r, CTX).unwrap_err();
        assert_eq!(errs.len(), 1);
        assert!(errs[0].is_unknown_subcategory());
    }

    #[test]
    fn valid_record_keeps_field_values() {
        let f = validate_finding(&valid_record(), CTX).unwrap();
        assert_eq!(f.task_id, "task_001");
        assert_eq!(f.subcategory, Subcategory::EvalMismatch);
        assert_eq!(f.severity, Severity::High);
        assert_eq!(f.finding_type, FindingType::Bug);
        assert_eq!(f.confidence, 0.9);
        assert_eq!(f.evidence[0].line_range, Some(LineRange { start: 4, end: 4 }));
        assert_eq!(f.to_wire(), valid_record());
    }

    #[test]
    fn all_errors_are_collected() {
        let r = json!({
            "category": "EVAL",
            "subcategory": "NOPE",
            "severity": "urgent",
            "title": "",
            "evidence": [{"source": "a", "snippet": "x", "line_start": 5, "line_end": 2}],
            "recommendation": "r",
            "confidence": 1.5
        });
        let errs = validate_finding(&r, CTX).unwrap_err();
        assert!(errs.contains(&ValidationError::UnknownSubcategory { value: "NOPE".into() }));
        assert!(errs.contains(&ValidationError::UnknownSeverity { value: "urgent".into() }));
        assert!(errs.contains(&ValidationError::MissingField { field: "finding_type".into() }));
        assert!(errs.contains(&ValidationError::EmptyField { field: "title".into() }));
        assert!(errs.contains(&ValidationError::MissingField { field: "description".into() }));
        assert!(errs.contains(&ValidationError::ConfidenceOutOfRange { value: 1.5 }));
        assert!(errs.iter().any(|e| matches!(e, ValidationError::InvalidEvidence { index: 0, .. })));
        assert_eq!(errs.len(), 7);
    }

    #[test]
    fn non_object_rejected() {
        assert_eq!(validate_finding(&json!([1]), CTX).unwrap_err(), vec![ValidationError::NotAnObject]);
    }

    #[test]
    fn lowercase_enums_are_accepted() {
        let mut r = valid_record();
        r["severity"] = json!("critical");
        r["finding_type"] = json!("warning");
        r["category"] = json!("eval");
        let f = validate_finding(&r, CTX).unwrap();
        assert_eq!(f.severity, Severity::Critical);
        assert_eq!(f.finding_type, FindingType::Warning);
    }

    #[test]
    fn hash_depends_on_identity_fields_only() {
        let f = validate_finding(&valid_record(), CTX).unwrap();
        let mut g = f.clone();
        g.confidence = 0.4;
        g.description = "other".into();
        assert_eq!(f.hash(), g.hash());
        g.title = "different".into();
        assert_ne!(f.hash(), g.hash());
    }

    #[test]
    fn evidence_kind_from_path() {
        let e = |s: &str| Evidence { source: s.into(), line_range: None, snippet: "x".into() };
        assert_eq!(e("tests/eval.py").artifact_kind(), ArtifactKind::Tests);
        assert_eq!(e("solution/solve.sh").artifact_kind(), ArtifactKind::Solution);
        assert_eq!(e("instruction.md").artifact_kind(), ArtifactKind::Instruction);
        assert_eq!(e("foo").artifact_kind(), ArtifactKind::Other);
    }

    fn arb_finding() -> impl Strategy<Value = Finding> {
        (
            0..14usize,
            0..4usize,
            any::<bool>(),
            "[a-zA-Z][a-zA-Z0-9 ]{0,20}",
            "[a-zA-Z][a-zA-Z0-9 .]{0,40}",
            proptest::collection::vec(("[a-z]{1,8}/[a-z]{1,8}\\.py", proptest::option::of((1u32..50, 0u32..5)), "[a-z(){}=]{1,20}"), 1..3),
            0.0f64..=1.0,
        )
            .prop_map(|(s, sev, bug, title, desc, ev, conf)| {
                let sub = Subcategory::ALL[s];
                Finding {
                    task_id: "t".into(),
                    category: sub.category(),
                    subcategory: sub,
                    severity: Severity::ALL[sev],
                    finding_type: if bug { FindingType::Bug } else { FindingType::Warning },
                    title,
                    description: desc,
                    evidence: ev
                        .into_iter()
                        .map(|(source, lr, snippet)| Evidence {
                            source,
                            line_range: lr.map(|(a, d)| LineRange { start: a, end: a + d }),
                            snippet,
                        })
                        .collect(),
                    recommendation: String::new(),
                    confidence: conf,
                    auditor_model: "m".into(),
                }
            })
    }

    proptest! {
        #[test]
        fn validate_round_trips_serialized_findings(f in arb_finding()) {
            let ctx = FindingContext { task_id: &f.task_id, auditor_model: &f.auditor_model };
            let text = serde_json::to_string(&f.to_wire()).unwrap();
            let raw: Value = serde_json::from_str(&text).unwrap();
            prop_assert_eq!(validate_finding(&raw, ctx).unwrap(), f);
        }

        #[test]
        fn tier_is_monotone(a in 0.0f64..=1.0, b in 0.0f64..=1.0) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(tier_of(lo).unwrap() <= tier_of(hi).unwrap());
        }
    }
}
