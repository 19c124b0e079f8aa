//! Rendering of the definition-audit prompts.
//!
//! One consolidated call per task: the system prompt carries the auditor role,
//! the four audit areas, the quality rules, the output schema and the full
//! taxonomy; the user prompt carries the task context followed by the six
//! analysis phases.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hash::content_hash;
use crate::ingest::{AgentEvidence, Artifact, HintSet, InputTier, TaskBundle};
use crate::taxonomy::{Category, Subcategory};
use crate::template::{render, TemplateError, TemplateSet};

/// Smallest limit [`truncate_to_budget`] accepts.
pub const MIN_TRUNCATION_LIMIT: usize = 64;

pub const PHASE_HEADINGS: [&str; 6] = [
    "## Phase 1: Understand the Task",
    "## Phase 2: Ground Truth Correctness",
    "## Phase 3: Evaluation Logic",
    "## Phase 4: Task Specification",
    "## Phase 5: Environment & Infrastructure",
    "## Phase 6: Consolidate & Report",
];

const PHASE2_FULL: &str = "Trace the gold program line by line. Compare against instruction: correct metric? Correct files and columns? Right algorithm? Correct output format? List each concern as a separate bullet.";
const PHASE2_SKIPPED: &str = "[skipped — no gold program] No gold program was provided for this task. Skip this phase; ground-truth checks that require reading the gold program cannot be performed.";
const NOT_PROVIDED: &str = "NOT PROVIDED";

#[derive(Debug, Error)]
pub enum ProtocolError {
    #[error("rendered prompts are {actual} chars, above the {limit}-char budget")]
    BudgetExceeded { actual: usize, limit: usize },
    #[error("truncation limit {0} is below the minimum of {MIN_TRUNCATION_LIMIT}")]
    LimitBelowFloor(usize),
    #[error("invalid context budget: {0}")]
    InvalidBudget(String),
    #[error("prompt pair already carries agent evidence")]
    AlreadyExtended,
    #[error(transparent)]
    Template(#[from] TemplateError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContextBudget {
    pub max_chars_per_artifact: usize,
    pub max_total_chars: usize,
}

impl Default for ContextBudget {
    fn default() -> Self {
        ContextBudget { max_chars_per_artifact: 24_000, max_total_chars: 120_000 }
    }
}

impl ContextBudget {
    pub fn new(max_chars_per_artifact: usize, max_total_chars: usize) -> Result<Self, ProtocolError> {
        if max_chars_per_artifact < MIN_TRUNCATION_LIMIT {
            return Err(ProtocolError::InvalidBudget(format!(
                "per-artifact limit must be at least {MIN_TRUNCATION_LIMIT}"
            )));
        }
        if max_chars_per_artifact > max_total_chars {
            return Err(ProtocolError::InvalidBudget("per-artifact limit exceeds total limit".into()));
        }
        Ok(ContextBudget { max_chars_per_artifact, max_total_chars })
    }
}

/// A rendered system/user prompt pair plus the fingerprint that keys fixtures.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptPair {
    pub system: String,
    pub user: String,
    pub context_fingerprint: String,
    pub template_version: String,
    pub agent_extended: bool,
    pub budget: ContextBudget,
}

impl PromptPair {
    /// Builds a pair from already-rendered text (used by the alignment judge).
    pub fn new(system: String, user: String, template_version: &str, budget: ContextBudget) -> PromptPair {
        let context_fingerprint = fingerprint(template_version, &system, &user);
        PromptPair { system, user, context_fingerprint, template_version: template_version.to_string(), agent_extended: false, budget }
    }

    pub fn total_chars(&self) -> usize {
        self.system.chars().count() + self.user.chars().count()
    }
}

fn fingerprint(version: &str, system: &str, user: &str) -> String {
    content_hash(&[version, system, user])
}

/// Prefixes each line with its right-aligned 1-based number: `"a\nb"` becomes
/// `"1 | a\n2 | b"`.
pub fn number_lines(source: &str) -> String {
    if source.is_empty() {
        return String::new();
    }
    let lines: Vec<&str> = source.split('\n').collect();
    let width = lines.len().to_string().len();
    let mut out = String::with_capacity(source.len() + lines.len() * (width + 3));
    for (i, line) in lines.iter().enumerate() {
        if i > 0 {
            out.push('\n');
        }
        out.push_str(&format!("{:>width$} | ", i + 1));
        out.push_str(line);
    }
    out
}

/// Inverse of [`number_lines`].
pub fn strip_line_numbers(numbered: &str) -> String {
    if numbered.is_empty() {
        return String::new();
    }
    numbered
        .split('\n')
        .map(|l| l.split_once(" | ").map_or(l, |(_, rest)| rest))
        .collect::<Vec<_>>()
        .join("\n")
}

/// Keeps the first 70% and last 20% of `limit` chars with a single marker
/// between them that reports how many chars were removed.
pub fn truncate_to_budget(text: &str, limit: usize) -> Result<String, ProtocolError> {
    if limit < MIN_TRUNCATION_LIMIT {
        return Err(ProtocolError::LimitBelowFloor(limit));
    }
    let len = text.chars().count();
    if len <= limit {
        return Ok(text.to_string());
    }
    let head = limit * 7 / 10;
    let tail = limit * 2 / 10;
    let removed = len - head - tail;
    let head_text: String = text.chars().take(head).collect();
    let tail_text: String = text.chars().skip(len - tail).collect();
    Ok(format!("{head_text}[... TRUNCATED {removed} chars ...]{tail_text}"))
}

/// Markdown table of all fourteen subcategories grouped by category.
pub fn taxonomy_table() -> String {
    let mut out = String::from("| ID | Name | Description |\n|---|---|---|\n");
    for cat in Category::ALL {
        out.push_str(&format!("| **{} ({})** | | |\n", cat.code(), cat.label()));
        for sub in Subcategory::ALL.iter().filter(|s| s.category() == cat) {
            out.push_str(&format!("| {} | {} | {} |\n", sub.code(), sub.name(), sub.description()));
        }
    }
    out.pop();
    out
}

fn render_artifacts(artifacts: &[Artifact], budget: &ContextBudget, numbered: bool) -> Result<String, ProtocolError> {
    let mut parts = Vec::with_capacity(artifacts.len());
    for a in artifacts {
        let text = truncate_to_budget(&a.text, budget.max_chars_per_artifact)?;
        let body = if numbered { number_lines(&text) } else { text };
        parts.push(format!("### {}\n{}", a.path, body));
    }
    Ok(parts.join("\n\n"))
}

fn optional_doc(text: Option<&str>, budget: &ContextBudget) -> Result<String, ProtocolError> {
    match text {
        Some(t) if !t.trim().is_empty() => truncate_to_budget(t.trim_end(), budget.max_chars_per_artifact),
        _ => Ok(NOT_PROVIDED.to_string()),
    }
}

fn environment_info(bundle: &TaskBundle, budget: &ContextBudget) -> Result<String, ProtocolError> {
    let c = &bundle.config;
    let mut out = format!(
        "Runtime: {} | CPUs: {} | Memory: {} | Agent timeout: {}s | Verifier: {}",
        c.runtime.as_deref().unwrap_or("unspecified"),
        c.cpus,
        c.memory,
        c.agent_timeout_sec,
        serde_json::to_value(c.verifier_method).ok().and_then(|v| v.as_str().map(str::to_string)).unwrap_or_default(),
    );
    if bundle.environment_artifacts.is_empty() {
        out.push_str("\n\nNo environment files provided.");
    } else {
        out.push_str("\n\n");
        out.push_str(&render_artifacts(&bundle.environment_artifacts, budget, true)?);
    }
    Ok(out)
}

fn hints_section(hints: &HintSet) -> String {
    if hints.is_empty() {
        return String::new();
    }
    let mut out = String::from("\n## Benchmark-Specific Review Hints\n\n");
    for h in &hints.global_hints {
        out.push_str("- ");
        out.push_str(h.trim());
        out.push('\n');
    }
    out
}

fn check_budget(pair: &PromptPair) -> Result<(), ProtocolError> {
    let total = pair.total_chars();
    if total > pair.budget.max_total_chars {
        return Err(ProtocolError::BudgetExceeded { actual: total, limit: pair.budget.max_total_chars });
    }
    Ok(())
}

pub fn build_definition_prompts(bundle: &TaskBundle, hints: &HintSet, budget: ContextBudget) -> Result<PromptPair, ProtocolError> {
    build_definition_prompts_with(&TemplateSet::builtin(), bundle, hints, budget)
}

pub fn build_definition_prompts_with(
    templates: &TemplateSet,
    bundle: &TaskBundle,
    hints: &HintSet,
    budget: ContextBudget,
) -> Result<PromptPair, ProtocolError> {
    let system_vars = BTreeMap::from([("taxonomy_table", taxonomy_table())]);
    let system = render("definition_system", &templates.definition_system, &system_vars)?;

    let has_gold = !bundle.solution_artifacts.is_empty() && bundle.tier >= InputTier::Definition;
    let gold_program = if has_gold {
        render_artifacts(&bundle.solution_artifacts, &budget, true)?
    } else {
        NOT_PROVIDED.to_string()
    };
    let user_vars = BTreeMap::from([
        ("task_id", bundle.task_id.clone()),
        ("domain", bundle.config.category.clone().unwrap_or_else(|| "unspecified".into())),
        ("expected_output", bundle.config.expected_output.clone().unwrap_or_else(|| "unspecified".into())),
        ("instruction", truncate_to_budget(bundle.instruction.trim_end(), budget.max_chars_per_artifact)?),
        ("gold_program", gold_program),
        ("eval_script", render_artifacts(&bundle.test_artifacts, &budget, true)?),
        ("data_description", optional_doc(bundle.data_description.as_deref(), &budget)?),
        ("domain_knowledge", optional_doc(bundle.domain_knowledge.as_deref(), &budget)?),
        ("environment_info", environment_info(bundle, &budget)?),
        ("hints_section", hints_section(hints)),
        ("phase2_body", if has_gold { PHASE2_FULL } else { PHASE2_SKIPPED }.to_string()),
    ]);
    let user = render("definition_user", &templates.definition_user, &user_vars)?;

    let pair = PromptPair::new(system, user, &templates.version, budget);
    check_budget(&pair)?;
    Ok(pair)
}

pub fn extend_with_agent_evidence(pair: &PromptPair, evidence: &AgentEvidence) -> Result<PromptPair, ProtocolError> {
    extend_with_agent_evidence_with(&TemplateSet::builtin(), pair, evidence)
}

/// Appends the agent program (line-numbered), then its evaluation result and
/// log, as a supporting-evidence section, and augments Phase 1. The system
/// prompt is left untouched.
pub fn extend_with_agent_evidence_with(
    templates: &TemplateSet,
    pair: &PromptPair,
    evidence: &AgentEvidence,
) -> Result<PromptPair, ProtocolError> {
    if pair.agent_extended {
        return Err(ProtocolError::AlreadyExtended);
    }
    let budget = pair.budget;
    let program = render_artifacts(std::slice::from_ref(&evidence.agent_program), &budget, true)?;
    let mut sections = String::new();
    for (label, artifact) in [("Evaluation Result", &evidence.evaluation_result), ("Evaluation Log", &evidence.evaluation_log)] {
        if let Some(a) = artifact {
            let text = truncate_to_budget(a.text.trim_end(), budget.max_chars_per_artifact)?;
            sections.push_str(&format!("\n## {label} ({})\n\n{text}\n", a.path));
        }
    }
    let vars = BTreeMap::from([("agent_program", program), ("evaluation_sections", sections)]);
    let appendix = render("agent_evidence", &templates.agent_evidence, &vars)?;

    let phase2 = format!("\n\n{}", PHASE_HEADINGS[1]);
    let mut user = pair.user.clone();
    match user.rfind(&phase2) {
        Some(at) => user.insert_str(at, &format!("\n{}", templates.agent_phase1.trim_end())),
        None => {
            // custom template without a Phase 2 heading: prepend to the appendix instead
            user.push_str(&format!("\n\n{}", templates.agent_phase1.trim_end()));
        }
    }
    if !user.ends_with('\n') {
        user.push('\n');
    }
    user.push_str(&appendix);

    let mut out = PromptPair::new(pair.system.clone(), user, &pair.template_version, budget);
    out.agent_extended = true;
    check_budget(&out)?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{TaskConfig, InputTier};

    fn bundle(with_gold: bool) -> TaskBundle {
        TaskBundle {
            task_id: "task_009".into(),
            config: TaskConfig { category: Some("psychology".into()), expected_output: Some("pred.csv".into()), ..TaskConfig::default() },
            instruction: "Compute the correlation and save it to pred.csv.\n".into(),
            test_artifacts: vec![Artifact { path: "tests/test.sh".into(), text: "python eval.py\n".into() }],
            solution_artifacts: if with_gold {
                vec![Artifact { path: "solution/solve.py".into(), text: "import pandas\nr2 = x ** 2\n".into() }]
            } else {
                vec![]
            },
            environment_artifacts: vec![],
            domain_knowledge: None,
            data_description: Some("data.csv: two columns".into()),
            agent_evidence: None,
            tier: if with_gold { InputTier::Definition } else { InputTier::Minimal },
            diagnostics: vec![],
        }
    }

    fn evidence(with_log: bool) -> AgentEvidence {
        AgentEvidence {
            agent_program: Artifact { path: "agent/program.py".into(), text: "print('hi')".into() },
            evaluation_result: Some(Artifact { path: "agent/result.json".into(), text: "{\"success\": false}".into() }),
            evaluation_log: with_log.then(|| Artifact { path: "agent/log.txt".into(), text: "AssertionError".into() }),
        }
    }

    #[test]
    fn number_lines_examples() {
        assert_eq!(number_lines("a\nb"), "1 | a\n2 | b");
        assert_eq!(number_lines(""), "");
        let ten = (1..=10).map(|i| format!("l{i}")).collect::<Vec<_>>().join("\n");
        let out = number_lines(&ten);
        assert!(out.starts_with(" 1 | l1\n"));
        assert!(out.ends_with("\n10 | l10"));
    }

    #[test]
    fn truncate_examples() {
        let short = "x".repeat(100);
        assert_eq!(truncate_to_budget(&short, 200).unwrap(), short);
        let long = "y".repeat(1000);
        let out = truncate_to_budget(&long, 100).unwrap();
        let marker = "[... TRUNCATED 910 chars ...]";
        assert!(out.contains(marker));
        assert!(out.chars().count() <= 100 + marker.len());
        assert_eq!(out.matches("TRUNCATED").count(), 1);
        assert!(matches!(truncate_to_budget("abc", 10), Err(ProtocolError::LimitBelowFloor(10))));
    }

    #[test]
    fn system_prompt_lists_every_subcategory() {
        let pair = build_definition_prompts(&bundle(true), &HintSet::default(), ContextBudget::default()).unwrap();
        for s in Subcategory::ALL {
            assert!(pair.system.contains(s.code()), "{s}");
        }
        assert!(!pair.system.contains("{{"));
        assert!(!pair.user.contains("{{"));
    }

    #[test]
    fn phases_in_order_and_hints_optional() {
        let pair = build_definition_prompts(&bundle(true), &HintSet::default(), ContextBudget::default()).unwrap();
        let positions: Vec<usize> = PHASE_HEADINGS.iter().map(|h| pair.user.find(h).expect(h)).collect();
        assert!(positions.windows(2).all(|w| w[0] < w[1]));
        assert!(!pair.user.contains("Review Hints"));

        let hints = HintSet { global_hints: vec!["Input data is mounted at /data.".into()] };
        let with = build_definition_prompts(&bundle(true), &hints, ContextBudget::default()).unwrap();
        assert!(with.user.contains("## Benchmark-Specific Review Hints\n\n- Input data is mounted at /data.\n"));
        assert_ne!(with.context_fingerprint, pair.context_fingerprint);
    }

    #[test]
    fn minimal_tier_marks_phase2_skipped() {
        let pair = build_definition_prompts(&bundle(false), &HintSet::default(), ContextBudget::default()).unwrap();
        assert!(pair.user.contains("## Gold Program (with line numbers)\n\nNOT PROVIDED\n"));
        assert!(pair.user.contains("[skipped — no gold program]"));
    }

    #[test]
    fn deterministic_fingerprint() {
        let a = build_definition_prompts(&bundle(true), &HintSet::default(), ContextBudget::default()).unwrap();
        let b = build_definition_prompts(&bundle(true), &HintSet::default(), ContextBudget::default()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn budget_exceeded() {
        let budget = ContextBudget::new(64, 2000).unwrap();
        let err = build_definition_prompts(&bundle(true), &HintSet::default(), budget).unwrap_err();
        assert!(matches!(err, ProtocolError::BudgetExceeded { limit: 2000, .. }));
        assert!(ContextBudget::new(100, 50).is_err());
    }

    #[test]
    fn oversized_artifacts_are_truncated_per_artifact() {
        let mut b = bundle(true);
        b.solution_artifacts[0].text = "z".repeat(50_000);
        let pair = build_definition_prompts(&b, &HintSet::default(), ContextBudget::default()).unwrap();
        assert!(pair.user.contains("[... TRUNCATED 28400 chars ...]"));
    }

    #[test]
    fn agent_extension() {
        let base = build_definition_prompts(&bundle(true), &HintSet::default(), ContextBudget::default()).unwrap();
        let ext = extend_with_agent_evidence(&base, &evidence(true)).unwrap();
        assert_eq!(ext.system, base.system);
        assert!(ext.user.contains("Supporting Evidence Only"));
        assert!(ext.user.contains("Do NOT assume the agent is correct"));
        assert!(ext.user.contains("1 | print('hi')"));
        let phase1 = ext.user.find(PHASE_HEADINGS[0]).unwrap();
        let aug = ext.user.find("supporting evidence about one plausible interpretation").unwrap();
        let phase2 = ext.user.find(PHASE_HEADINGS[1]).unwrap();
        assert!(phase1 < aug && aug < phase2);
        let prog = ext.user.find("agent/program.py").unwrap();
        let log = ext.user.find("AssertionError").unwrap();
        assert!(prog < log);
        assert!(matches!(extend_with_agent_evidence(&ext, &evidence(false)), Err(ProtocolError::AlreadyExtended)));
        assert_ne!(ext.context_fingerprint, base.context_fingerprint);
    }

    proptest::proptest! {
        #[test]
        fn number_lines_is_reversible(s in "[a-z |\\n\\r\\t]{0,200}") {
            proptest::prop_assert_eq!(strip_line_numbers(&number_lines(&s)), s);
        }
    }
}
