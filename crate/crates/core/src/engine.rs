//! Per-task audits and whole-benchmark runs.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::path::Path;
use std::sync::OnceLock;

use rayon::prelude::*;
use regex::Regex;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::gateway::{cost_of, Cost, Gateway, GatewayError, ModelSpec, Usage};
use crate::ingest::{self, HintSet, IngestError, InputTier, LoadOptions, TaskBundle, INSTRUCTION_FILE};
use crate::protocol::{self, ContextBudget};
use crate::taxonomy::{
    validate_finding, Evidence, Finding, FindingContext, FindingType, LineRange, Severity, Subcategory, ValidationError,
};
use crate::template::TemplateSet;

pub const REPORT_SCHEMA_VERSION: u32 = 1;
pub const STATIC_AUDITOR: &str = "static";
pub const STATIC_CONFIDENCE: f64 = 0.95;
pub const NO_ARRAY_DIAGNOSTIC: &str = "no JSON array found";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TierRequest {
    #[default]
    DefinitionOnly,
    WithAgentEvidence,
}

#[derive(Debug, Clone)]
pub struct AuditRunConfig {
    pub model: ModelSpec,
    pub tier_request: TierRequest,
    pub parallelism: usize,
    pub static_checks_enabled: bool,
    pub budget: ContextBudget,
    pub templates: TemplateSet,
}

impl AuditRunConfig {
    pub fn new(model: ModelSpec) -> AuditRunConfig {
        AuditRunConfig {
            model,
            tier_request: TierRequest::DefinitionOnly,
            parallelism: 1,
            static_checks_enabled: true,
            budget: ContextBudget::default(),
            templates: TemplateSet::builtin(),
        }
    }

    /// The parts of the configuration that affect results. Parallelism is
    /// left out so reports do not depend on it.
    pub fn echo(&self) -> ConfigEcho {
        ConfigEcho {
            model: self.model.clone(),
            tier_request: self.tier_request,
            static_checks_enabled: self.static_checks_enabled,
            budget: self.budget,
            template_version: self.templates.version.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigEcho {
    pub model: ModelSpec,
    pub tier_request: TierRequest,
    pub static_checks_enabled: bool,
    pub budget: ContextBudget,
    pub template_version: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RejectedRecord {
    pub raw: Value,
    pub errors: Vec<ValidationError>,
}

#[derive(Debug, Clone, PartialEq, Error, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TaskError {
    #[error("gateway failure: {error}")]
    Gateway { error: GatewayError },
    #[error("could not load task: {message}")]
    Ingest { message: String },
    #[error("could not render prompts: {message}")]
    Protocol { message: String },
    #[error("precondition failed: {message}")]
    Precondition { message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskAuditResult {
    pub task_id: String,
    pub tier_used: InputTier,
    /// Retained findings, LLM and static, sorted.
    pub findings: Vec<Finding>,
    pub raw_record_count: usize,
    pub suppressed_count: usize,
    /// Exact content-hash duplicates dropped within this task.
    pub duplicate_count: usize,
    pub rejected_findings: Vec<RejectedRecord>,
    pub static_finding_count: usize,
    pub usage: Usage,
    pub cost: Cost,
    pub context_fingerprint: Option<String>,
    pub diagnostics: Vec<String>,
    pub error: Option<TaskError>,
}

impl TaskAuditResult {
    fn empty(task_id: &str, tier_used: InputTier) -> TaskAuditResult {
        TaskAuditResult {
            task_id: task_id.to_string(),
            tier_used,
            findings: Vec::new(),
            raw_record_count: 0,
            suppressed_count: 0,
            duplicate_count: 0,
            rejected_findings: Vec::new(),
            static_finding_count: 0,
            usage: Usage::default(),
            cost: Cost::ZERO,
            context_fingerprint: None,
            diagnostics: Vec::new(),
            error: None,
        }
    }

    pub fn failed(&self) -> bool {
        self.error.is_some()
    }
}

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("task {task_id}: agent evidence requested but the bundle has none")]
    MissingAgentEvidence { task_id: String },
    #[error("parallelism must be at least 1")]
    InvalidParallelism,
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error("building worker pool: {0}")]
    Pool(String),
}

/// Extracts the first well-formed JSON array, looking inside a single fenced
/// code block first when there is one.
pub fn parse_findings(text: &str) -> (Vec<Value>, Vec<String>) {
    let mut candidates = Vec::with_capacity(2);
    if let Some(body) = fenced_body(text) {
        candidates.push(body);
    }
    candidates.push(text);
    for candidate in candidates {
        for (at, _) in candidate.match_indices('[') {
            let mut stream = serde_json::Deserializer::from_str(&candidate[at..]).into_iter::<Value>();
            if let Some(Ok(Value::Array(items))) = stream.next() {
                return (items, Vec::new());
            }
        }
    }
    (Vec::new(), vec![NO_ARRAY_DIAGNOSTIC.to_string()])
}

fn fenced_body(text: &str) -> Option<&str> {
    let open = text.find("```")?;
    let after = &text[open + 3..];
    let body_start = after.find('\n')? + 1;
    let body = &after[body_start..];
    let close = body.find("```")?;
    Some(&body[..close])
}

/// Severity descending, confidence descending, then title and hash.
pub fn sort_findings(findings: &mut [Finding]) {
    findings.sort_by(|a, b| {
        b.severity
            .cmp(&a.severity)
            .then_with(|| b.confidence.total_cmp(&a.confidence))
            .then_with(|| a.title.cmp(&b.title))
            .then_with(|| a.hash().cmp(&b.hash()))
    });
}

fn tier_used(bundle: &TaskBundle, request: TierRequest) -> InputTier {
    match request {
        TierRequest::WithAgentEvidence => InputTier::Execution,
        TierRequest::DefinitionOnly => bundle.tier.min(InputTier::Definition),
    }
}

/// Audits one task with exactly one gateway call.
pub fn audit_task(
    bundle: &TaskBundle,
    hints: &HintSet,
    config: &AuditRunConfig,
    gateway: &Gateway,
) -> Result<TaskAuditResult, EngineError> {
    let evidence = match config.tier_request {
        TierRequest::WithAgentEvidence => Some(
            bundle
                .agent_evidence
                .as_ref()
                .ok_or_else(|| EngineError::MissingAgentEvidence { task_id: bundle.task_id.clone() })?,
        ),
        TierRequest::DefinitionOnly => None,
    };
    let mut result = TaskAuditResult::empty(&bundle.task_id, tier_used(bundle, config.tier_request));
    result.diagnostics.extend(bundle.diagnostics.iter().cloned());

    let pair = protocol::build_definition_prompts_with(&config.templates, bundle, hints, config.budget)
        .and_then(|p| match evidence {
            Some(ev) => protocol::extend_with_agent_evidence_with(&config.templates, &p, ev),
            None => Ok(p),
        });
    let pair = match pair {
        Ok(p) => p,
        Err(e) => {
            result.error = Some(TaskError::Protocol { message: e.to_string() });
            return Ok(finish(result, bundle, config));
        }
    };
    result.context_fingerprint = Some(pair.context_fingerprint.clone());

    let completion = match gateway.complete(&config.model, &pair, &bundle.task_id) {
        Ok(c) => c,
        Err(error) => {
            result.error = Some(TaskError::Gateway { error });
            return Ok(finish(result, bundle, config));
        }
    };
    result.usage = completion.usage;
    result.diagnostics.extend(completion.diagnostics);

    let (records, parse_diags) = parse_findings(&completion.text);
    result.diagnostics.extend(parse_diags);
    result.raw_record_count = records.len();
    let ctx = FindingContext { task_id: &bundle.task_id, auditor_model: &config.model.model_name };
    let mut seen = HashSet::new();
    for raw in records {
        match validate_finding(&raw, ctx) {
            Ok(f) if !f.is_retained() => result.suppressed_count += 1,
            Ok(f) => {
                if seen.insert(f.hash()) {
                    result.findings.push(f);
                } else {
                    result.duplicate_count += 1;
                }
            }
            Err(errors) => result.rejected_findings.push(RejectedRecord { raw, errors }),
        }
    }
    if config.static_checks_enabled {
        for f in static_checks(bundle) {
            if seen.insert(f.hash()) {
                result.static_finding_count += 1;
                result.findings.push(f);
            }
        }
    }
    Ok(finish(result, bundle, config))
}

fn finish(mut result: TaskAuditResult, bundle: &TaskBundle, config: &AuditRunConfig) -> TaskAuditResult {
    // static checks do not depend on the model, so they still run when the call failed
    if result.failed() && config.static_checks_enabled && result.static_finding_count == 0 {
        let statics = static_checks(bundle);
        result.static_finding_count = statics.len();
        result.findings.extend(statics);
    }
    sort_findings(&mut result.findings);
    result.cost = cost_of(result.usage, &config.model);
    result
}

const ABSOLUTE_PATH_MARKERS: [&str; 3] = ["/home/", "/Users/", "C:\\"];

const DATA_EXTENSIONS: &str = "csv|tsv|txt|json|jsonl|xlsx|xls|parquet|h5|h5ad|hdf5|npy|npz|pkl|pickle|fasta|fa|fastq|vcf|bed|gtf|gff|sdf|mol2|pdb|xyz|nc|tif|tiff|png|jpg|zip|gz|py|r|ipynb|md|yaml|yml";

fn filename_patterns() -> &'static (Regex, Regex) {
    static PATTERNS: OnceLock<(Regex, Regex)> = OnceLock::new();
    PATTERNS.get_or_init(|| {
        let quoted = Regex::new(r#"[`'"]([A-Za-z0-9_][A-Za-z0-9_\-./]*\.[A-Za-z0-9]{1,8})[`'"]"#).unwrap();
        let bare = Regex::new(&format!(r"(?i)\b([A-Za-z0-9_][A-Za-z0-9_\-./]*\.(?:{DATA_EXTENSIONS}))\b")).unwrap();
        (quoted, bare)
    })
}

/// File names mentioned in `text`, with the 1-based line of first mention.
fn referenced_files(text: &str) -> Vec<(String, usize, String)> {
    let (quoted, bare) = filename_patterns();
    let mut out: Vec<(String, usize, String)> = Vec::new();
    let mut seen = BTreeSet::new();
    for (i, line) in text.split('\n').enumerate() {
        let names = quoted
            .captures_iter(line)
            .chain(bare.captures_iter(line))
            .map(|c| c[1].trim_end_matches('.').to_string());
        for name in names {
            if seen.insert(name.clone()) {
                out.push((name, i + 1, line.trim().to_string()));
            }
        }
    }
    out
}

fn basename(path: &str) -> &str {
    path.rsplit(['/', '\\']).next().unwrap_or(path)
}

/// Deterministic checks that need no model: hard-coded absolute paths in gold
/// and evaluation sources, and instruction file references that nothing else
/// in the bundle mentions.
pub fn static_checks(bundle: &TaskBundle) -> Vec<Finding> {
    let mut out = Vec::new();
    let static_finding = |subcategory: Subcategory, title: String, description: String, evidence: Evidence, rec: &str| Finding {
        task_id: bundle.task_id.clone(),
        category: subcategory.category(),
        subcategory,
        severity: Severity::High,
        finding_type: FindingType::Bug,
        title,
        description,
        evidence: vec![evidence],
        recommendation: rec.to_string(),
        confidence: STATIC_CONFIDENCE,
        auditor_model: STATIC_AUDITOR.to_string(),
    };

    for artifact in bundle.solution_artifacts.iter().chain(&bundle.test_artifacts) {
        for (i, line) in artifact.text.split('\n').enumerate() {
            let Some(marker) = ABSOLUTE_PATH_MARKERS.iter().find(|m| line.contains(**m)) else { continue };
            let n = i as u32 + 1;
            out.push(static_finding(
                Subcategory::EnvPath,
                format!("Hard-coded absolute path in {}:{n}", artifact.path),
                format!(
                    "Line {n} of {} contains an absolute path under `{marker}` that will not exist inside the task environment.",
                    artifact.path
                ),
                Evidence { source: artifact.path.clone(), line_range: Some(LineRange { start: n, end: n }), snippet: line.trim().to_string() },
                "Replace the absolute path with a path relative to the task's input directory.",
            ));
        }
    }

    let mut corpus: Vec<&str> = Vec::new();
    corpus.extend(bundle.data_description.as_deref());
    corpus.extend(bundle.domain_knowledge.as_deref());
    corpus.extend(bundle.config.expected_output.as_deref());
    for a in bundle.test_artifacts.iter().chain(&bundle.solution_artifacts).chain(&bundle.environment_artifacts) {
        corpus.push(&a.path);
        corpus.push(&a.text);
    }
    for (name, line_no, line) in referenced_files(&bundle.instruction) {
        let base = basename(&name);
        if base.is_empty() || corpus.iter().any(|c| c.contains(base)) {
            continue;
        }
        let n = line_no as u32;
        out.push(static_finding(
            Subcategory::InstContradict,
            format!("Instruction references unknown file `{base}`"),
            format!(
                "The instruction refers to `{name}`, but no data description, gold program, evaluation script or environment file mentions it."
            ),
            Evidence { source: INSTRUCTION_FILE.to_string(), line_range: Some(LineRange { start: n, end: n }), snippet: line },
            "Point the instruction at the file the gold program and evaluation actually use.",
        ));
    }
    out
}

/// Retained finding counts by subcategory.
pub type Distribution = BTreeMap<Subcategory, usize>;

pub fn distribution<'a>(findings: impl IntoIterator<Item = &'a Finding>) -> Distribution {
    let mut d = Distribution::new();
    for f in findings {
        *d.entry(f.subcategory).or_insert(0) += 1;
    }
    d
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Totals {
    pub tasks: usize,
    pub failed_tasks: usize,
    pub findings: usize,
    pub suppressed: usize,
    pub rejected: usize,
    pub duplicates: usize,
    pub usage: Usage,
    pub cost: Cost,
    /// Gateway calls made by this run (resumed tasks excluded).
    pub gateway_calls: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskFailure {
    pub task_id: String,
    pub error: TaskError,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub schema_version: u32,
    pub tool_version: String,
    /// RFC 3339; absent unless the caller pins one, keeping reports reproducible.
    pub generated_at: Option<String>,
    pub config: ConfigEcho,
    pub tasks: Vec<TaskAuditResult>,
    pub distribution: Distribution,
    pub totals: Totals,
    pub failures: Vec<TaskFailure>,
    /// Loaded bundles, kept so downstream tools can show artifact excerpts.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub bundles: BTreeMap<String, TaskBundle>,
}

impl AuditReport {
    pub fn model_name(&self) -> &str {
        &self.config.model.model_name
    }

    pub fn findings(&self) -> impl Iterator<Item = &Finding> {
        self.tasks.iter().flat_map(|t| t.findings.iter())
    }

    pub fn task(&self, task_id: &str) -> Option<&TaskAuditResult> {
        self.tasks.iter().find(|t| t.task_id == task_id)
    }

    /// Assembles a report from per-task results, sorting by task id and
    /// recomputing the distribution and totals.
    pub fn assemble(config: ConfigEcho, mut tasks: Vec<TaskAuditResult>, gateway_calls: u64) -> AuditReport {
        tasks.sort_by(|a, b| a.task_id.cmp(&b.task_id));
        let distribution = distribution(tasks.iter().flat_map(|t| &t.findings));
        let totals = Totals {
            tasks: tasks.len(),
            failed_tasks: tasks.iter().filter(|t| t.failed()).count(),
            findings: tasks.iter().map(|t| t.findings.len()).sum(),
            suppressed: tasks.iter().map(|t| t.suppressed_count).sum(),
            rejected: tasks.iter().map(|t| t.rejected_findings.len()).sum(),
            duplicates: tasks.iter().map(|t| t.duplicate_count).sum(),
            usage: tasks.iter().map(|t| t.usage).sum(),
            cost: tasks.iter().map(|t| t.cost).sum(),
            gateway_calls,
        };
        let failures = tasks
            .iter()
            .filter_map(|t| t.error.clone().map(|error| TaskFailure { task_id: t.task_id.clone(), error }))
            .collect();
        AuditReport {
            schema_version: REPORT_SCHEMA_VERSION,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            generated_at: None,
            config,
            tasks,
            distribution,
            totals,
            failures,
            bundles: BTreeMap::new(),
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// `None` audits every task; an empty set audits none.
    pub task_filter: Option<BTreeSet<String>>,
    /// Successful results carried over; only failed or missing tasks are re-audited.
    pub resume_from: Option<AuditReport>,
    pub embed_bundles: bool,
    pub load: LoadOptions,
}

pub fn run_audit(
    root: &Path,
    config: &AuditRunConfig,
    gateway: &Gateway,
    task_filter: Option<&BTreeSet<String>>,
) -> Result<AuditReport, EngineError> {
    let opts = RunOptions { task_filter: task_filter.cloned(), ..RunOptions::default() };
    run_audit_with(root, config, gateway, &opts)
}

pub fn run_audit_with(
    root: &Path,
    config: &AuditRunConfig,
    gateway: &Gateway,
    opts: &RunOptions,
) -> Result<AuditReport, EngineError> {
    if config.parallelism == 0 {
        return Err(EngineError::InvalidParallelism);
    }
    let discovered = ingest::discover_tasks(root)?;
    let hints = ingest::load_hints(root)?;
    let ids: Vec<String> = match &opts.task_filter {
        None => discovered,
        Some(filter) => filter.iter().cloned().collect(),
    };

    let carried: BTreeMap<&str, &TaskAuditResult> = opts
        .resume_from
        .iter()
        .flat_map(|r| r.tasks.iter())
        .filter(|t| !t.failed())
        .map(|t| (t.task_id.as_str(), t))
        .collect();
    let prior_bundles = opts.resume_from.as_ref().map(|r| &r.bundles);

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.parallelism)
        .build()
        .map_err(|e| EngineError::Pool(e.to_string()))?;
    let calls_before = gateway.call_count();
    let outcomes: Vec<(TaskAuditResult, Option<TaskBundle>)> = pool.install(|| {
        ids.par_iter()
            .map(|id| {
                if let Some(prev) = carried.get(id.as_str()) {
                    let bundle = prior_bundles.and_then(|b| b.get(id)).cloned();
                    return ((*prev).clone(), bundle);
                }
                audit_one(root, id, &hints, config, gateway, opts)
            })
            .collect()
    });
    let calls = gateway.call_count() - calls_before;

    let mut bundles = BTreeMap::new();
    let mut results = Vec::with_capacity(outcomes.len());
    for (result, bundle) in outcomes {
        if let (true, Some(b)) = (opts.embed_bundles, bundle) {
            bundles.insert(b.task_id.clone(), b);
        }
        results.push(result);
    }
    let mut report = AuditReport::assemble(config.echo(), results, calls);
    report.bundles = bundles;
    Ok(report)
}

fn audit_one(
    root: &Path,
    id: &str,
    hints: &HintSet,
    config: &AuditRunConfig,
    gateway: &Gateway,
    opts: &RunOptions,
) -> (TaskAuditResult, Option<TaskBundle>) {
    let bundle = match ingest::load_task_with(root, id, &opts.load) {
        Ok(b) => b,
        Err(e) => {
            let mut r = TaskAuditResult::empty(id, InputTier::Minimal);
            r.error = Some(TaskError::Ingest { message: e.to_string() });
            r.cost = cost_of(r.usage, &config.model);
            return (r, None);
        }
    };
    let result = audit_task(&bundle, hints, config, gateway).unwrap_or_else(|e| {
        let mut r = TaskAuditResult::empty(id, bundle.tier);
        r.error = Some(TaskError::Precondition { message: e.to_string() });
        r.diagnostics.extend(bundle.diagnostics.iter().cloned());
        r
    });
    (result, Some(bundle))
}
