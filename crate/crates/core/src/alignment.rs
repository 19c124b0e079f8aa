//! Scoring findings against expert gold issues.
//!
//! Each (gold issue, finding) pair on the same task is classified by a judge
//! model as ALIGNED, PARTIAL or UNRELATED. Recall is issue-level, precision is
//! finding-level over tasks that carry gold issues.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::{Mutex, RwLock};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::gateway::{Cost, Gateway, GatewayError, ModelSpec};
use crate::hash::content_hash;
use crate::percent::Percent;
use crate::protocol::{ContextBudget, PromptPair};
use crate::taxonomy::{Category, Finding, Subcategory};
use crate::template::{render, TemplateSet};

pub const ENSEMBLE_LABEL: &str = "Ensemble (any)";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Change {
    /// Question revised.
    Q,
    /// Answer revised.
    A,
    /// Both revised.
    B,
    #[serde(rename = "NA")]
    Na,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GoldIssue {
    pub issue_id: String,
    pub task_id: String,
    pub category: Category,
    pub subcategory: Subcategory,
    pub change: Change,
    pub description: String,
    #[serde(default)]
    pub evidence: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Verdict {
    Aligned,
    Partial,
    Unrelated,
}

impl Verdict {
    pub fn is_aligned(self) -> bool {
        self == Verdict::Aligned
    }

    pub fn is_aligned_or_partial(self) -> bool {
        matches!(self, Verdict::Aligned | Verdict::Partial)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairJudgment {
    pub issue_id: String,
    pub finding_hash: String,
    pub verdict: Verdict,
    pub reasoning: String,
    pub judge_model: String,
    #[serde(default)]
    pub cached: bool,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub diagnostics: Vec<String>,
}

#[derive(Debug, Error)]
pub enum AlignmentError {
    #[error("gold issue file line {line}, column {column}: {message}")]
    MalformedGold { line: usize, column: usize, message: String },
    #[error("duplicate gold issue id `{0}`")]
    DuplicateIssue(String),
    #[error("gold issue `{0}` has an empty description")]
    EmptyDescription(String),
    #[error("gold issue `{issue_id}`: category {category} does not match subcategory {subcategory}")]
    CategoryMismatch { issue_id: String, category: Category, subcategory: Subcategory },
    #[error("the gold set is empty")]
    EmptyGoldSet,
    #[error("no retained findings on tasks that carry gold issues")]
    NoFlaggedFindings,
    #[error("metrics were computed against different gold sets")]
    GoldSetMismatch,
    #[error("vote threshold {k} must be between 1 and {models}")]
    InvalidThreshold { k: usize, models: usize },
    #[error("judging {issue_id} against {finding_hash}: {source}")]
    Gateway { issue_id: String, finding_hash: String, source: GatewayError },
    #[error("verdict cache {path}, line {line}: {message}")]
    CacheCorrupt { path: String, line: usize, message: String },
    #[error("verdict cache {path}: {source}")]
    CacheIo { path: String, source: std::io::Error },
}

pub fn parse_gold(text: &str) -> Result<Vec<GoldIssue>, AlignmentError> {
    let issues: Vec<GoldIssue> = if text.trim().is_empty() {
        Vec::new()
    } else {
        serde_yaml::from_str(text).map_err(|e| {
            let (line, column) = e.location().map_or((0, 0), |l| (l.line(), l.column()));
            AlignmentError::MalformedGold { line, column, message: e.to_string() }
        })?
    };
    let mut ids = BTreeSet::new();
    for issue in &issues {
        if !ids.insert(issue.issue_id.as_str()) {
            return Err(AlignmentError::DuplicateIssue(issue.issue_id.clone()));
        }
        if issue.description.trim().is_empty() {
            return Err(AlignmentError::EmptyDescription(issue.issue_id.clone()));
        }
        if issue.subcategory.category() != issue.category {
            return Err(AlignmentError::CategoryMismatch {
                issue_id: issue.issue_id.clone(),
                category: issue.category,
                subcategory: issue.subcategory,
            });
        }
    }
    Ok(issues)
}

pub fn load_gold(path: &Path) -> Result<Vec<GoldIssue>, AlignmentError> {
    let text = fs::read_to_string(path).map_err(|e| AlignmentError::MalformedGold { line: 0, column: 0, message: e.to_string() })?;
    parse_gold(&text)
}

#[derive(Debug, Clone, Copy)]
pub struct Pair<'a> {
    pub issue: &'a GoldIssue,
    pub finding: &'a Finding,
}

/// Same-task cartesian product, ordered by (issue_id, finding hash).
pub fn build_pairs<'a>(gold: &'a [GoldIssue], findings: &'a [Finding]) -> Vec<Pair<'a>> {
    let mut by_task: HashMap<&str, Vec<(String, &Finding)>> = HashMap::new();
    for f in findings {
        by_task.entry(f.task_id.as_str()).or_default().push((f.hash(), f));
    }
    let mut keyed = Vec::new();
    for issue in gold {
        for (hash, finding) in by_task.get(issue.task_id.as_str()).into_iter().flatten() {
            keyed.push(((issue.issue_id.as_str(), hash.clone()), Pair { issue, finding }));
        }
    }
    keyed.sort_by(|a, b| a.0.cmp(&b.0));
    keyed.into_iter().map(|(_, p)| p).collect()
}

pub fn cache_key(judge_model: &str, issue: &GoldIssue, finding: &Finding) -> String {
    content_hash(&[judge_model, &issue.description, &issue.evidence, &finding.title, &finding.description])
}

#[derive(Serialize, Deserialize)]
struct CacheLine {
    key: String,
    #[serde(flatten)]
    judgment: PairJudgment,
}

/// Append-only JSON-lines verdict store; the last line for a key wins.
pub struct VerdictCache {
    path: Option<PathBuf>,
    entries: RwLock<HashMap<String, PairJudgment>>,
    writer: Mutex<Option<File>>,
}

impl VerdictCache {
    pub fn in_memory() -> VerdictCache {
        VerdictCache { path: None, entries: RwLock::new(HashMap::new()), writer: Mutex::new(None) }
    }

    pub fn open(path: &Path) -> Result<VerdictCache, AlignmentError> {
        let io = |source| AlignmentError::CacheIo { path: path.display().to_string(), source };
        let mut entries = HashMap::new();
        if path.exists() {
            let text = fs::read_to_string(path).map_err(io)?;
            for (i, line) in text.lines().enumerate() {
                if line.trim().is_empty() {
                    continue;
                }
                let parsed: CacheLine = serde_json::from_str(line).map_err(|e| AlignmentError::CacheCorrupt {
                    path: path.display().to_string(),
                    line: i + 1,
                    message: e.to_string(),
                })?;
                entries.insert(parsed.key, parsed.judgment);
            }
        } else if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(parent).map_err(io)?;
        }
        let file = OpenOptions::new().create(true).append(true).open(path).map_err(io)?;
        Ok(VerdictCache { path: Some(path.to_path_buf()), entries: RwLock::new(entries), writer: Mutex::new(Some(file)) })
    }

    pub fn len(&self) -> usize {
        self.entries.read().expect("cache lock poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, key: &str) -> Option<PairJudgment> {
        self.entries.read().expect("cache lock poisoned").get(key).cloned()
    }

    pub fn put(&self, key: &str, judgment: &PairJudgment) -> Result<(), AlignmentError> {
        let mut stored = judgment.clone();
        stored.cached = false;
        let mut writer = self.writer.lock().expect("cache writer poisoned");
        if let Some(file) = writer.as_mut() {
            let line = serde_json::to_string(&CacheLine { key: key.to_string(), judgment: stored.clone() }).expect("judgment serializes");
            let path = self.path.as_ref().map(|p| p.display().to_string()).unwrap_or_default();
            writeln!(file, "{line}").and_then(|_| file.flush()).map_err(|source| AlignmentError::CacheIo { path, source })?;
        }
        self.entries.write().expect("cache lock poisoned").insert(key.to_string(), stored);
        Ok(())
    }
}

/// Reads `{"verdict": ..., "reasoning": ...}` from judge output, tolerating
/// surrounding prose and code fences.
pub fn parse_verdict(text: &str) -> Option<(Verdict, String)> {
    for (at, _) in text.match_indices('{') {
        let mut stream = serde_json::Deserializer::from_str(&text[at..]).into_iter::<Value>();
        let Some(Ok(Value::Object(obj))) = stream.next() else { continue };
        let Some(v) = obj.get("verdict").and_then(Value::as_str) else { continue };
        let verdict = match v.trim().to_ascii_uppercase().as_str() {
            "ALIGNED" => Verdict::Aligned,
            "PARTIAL" => Verdict::Partial,
            "UNRELATED" => Verdict::Unrelated,
            _ => continue,
        };
        let reasoning = obj.get("reasoning").and_then(Value::as_str).unwrap_or("").trim().to_string();
        return Some((verdict, reasoning));
    }
    None
}

pub struct Judge<'a> {
    pub spec: &'a ModelSpec,
    pub templates: &'a TemplateSet,
    pub gateway: &'a Gateway,
    pub cache: &'a VerdictCache,
}

impl Judge<'_> {
    pub fn prompts(&self, pair: Pair<'_>) -> PromptPair {
        let vars = BTreeMap::from([
            ("task_id", pair.issue.task_id.clone()),
            ("issue_description", pair.issue.description.clone()),
            ("issue_evidence", if pair.issue.evidence.is_empty() { "none".to_string() } else { pair.issue.evidence.clone() }),
            ("finding_title", pair.finding.title.clone()),
            ("finding_description", pair.finding.description.clone()),
            ("finding_confidence", format!("{:.2}", pair.finding.confidence)),
        ]);
        let user = render("judge_user", &self.templates.judge_user, &vars).expect("judge template placeholders are fixed");
        let system = self.templates.judge_system.clone();
        PromptPair::new(system, user, &self.templates.version, ContextBudget::default())
    }

    pub fn judge_pair(&self, pair: Pair<'_>) -> Result<PairJudgment, AlignmentError> {
        let finding_hash = pair.finding.hash();
        let key = cache_key(&self.spec.model_name, pair.issue, pair.finding);
        if let Some(mut hit) = self.cache.get(&key) {
            hit.issue_id = pair.issue.issue_id.clone();
            hit.finding_hash = finding_hash;
            hit.cached = true;
            return Ok(hit);
        }
        let prompts = self.prompts(pair);
        let tag = format!("{}::{}", pair.issue.issue_id, finding_hash);
        let completion = self.gateway.complete(self.spec, &prompts, &tag).map_err(|source| AlignmentError::Gateway {
            issue_id: pair.issue.issue_id.clone(),
            finding_hash: finding_hash.clone(),
            source,
        })?;
        let (verdict, reasoning, diagnostics) = match parse_verdict(&completion.text) {
            Some((v, r)) => (v, r, Vec::new()),
            None => (Verdict::Unrelated, String::new(), vec!["unparseable judge output; treated as UNRELATED".to_string()]),
        };
        let judgment = PairJudgment {
            issue_id: pair.issue.issue_id.clone(),
            finding_hash,
            verdict,
            reasoning,
            judge_model: self.spec.model_name.clone(),
            cached: false,
            diagnostics,
        };
        self.cache.put(&key, &judgment)?;
        Ok(judgment)
    }

    /// Judges every same-task pair. Pairs fan out over the current rayon pool;
    /// the matrix is assembled in pair order regardless.
    pub fn judge_all(&self, auditor_model: &str, gold: &[GoldIssue], findings: &[Finding]) -> Result<AlignmentMatrix, AlignmentError> {
        let pairs = build_pairs(gold, findings);
        let judgments = pairs.par_iter().map(|p| self.judge_pair(*p)).collect::<Result<Vec<_>, _>>()?;
        Ok(AlignmentMatrix {
            auditor_model: auditor_model.to_string(),
            gold: gold.to_vec(),
            findings: findings.to_vec(),
            judgments,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentMatrix {
    pub auditor_model: String,
    pub gold: Vec<GoldIssue>,
    /// Retained findings of one auditor model.
    pub findings: Vec<Finding>,
    pub judgments: Vec<PairJudgment>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Detection {
    pub aligned: BTreeSet<String>,
    pub aligned_or_partial: BTreeSet<String>,
}

impl AlignmentMatrix {
    pub fn detection(&self) -> Detection {
        let mut d = Detection::default();
        for j in &self.judgments {
            if j.verdict.is_aligned() {
                d.aligned.insert(j.issue_id.clone());
            }
            if j.verdict.is_aligned_or_partial() {
                d.aligned_or_partial.insert(j.issue_id.clone());
            }
        }
        d
    }

    fn gold_tasks(&self) -> BTreeSet<&str> {
        self.gold.iter().map(|g| g.task_id.as_str()).collect()
    }

    /// Retained findings on tasks that carry at least one gold issue.
    pub fn flagged_findings(&self) -> Vec<&Finding> {
        let tasks = self.gold_tasks();
        self.findings.iter().filter(|f| f.is_retained() && tasks.contains(f.task_id.as_str())).collect()
    }

    /// (findings with an ALIGNED judgment, findings with ALIGNED or PARTIAL).
    pub fn aligned_finding_counts(&self) -> (usize, usize) {
        self.counts_over(&self.flagged_hashes())
    }

    fn flagged_hashes(&self) -> BTreeSet<String> {
        self.flagged_findings().iter().map(|f| f.hash()).collect()
    }

    fn counts_over(&self, flagged: &BTreeSet<String>) -> (usize, usize) {
        let mut best: HashMap<&str, Verdict> = HashMap::new();
        for j in &self.judgments {
            let e = best.entry(j.finding_hash.as_str()).or_insert(j.verdict);
            *e = (*e).min(j.verdict);
        }
        let mut a = 0;
        let mut ap = 0;
        for h in flagged {
            match best.get(h.as_str()) {
                Some(Verdict::Aligned) => {
                    a += 1;
                    ap += 1;
                }
                Some(Verdict::Partial) => ap += 1,
                _ => {}
            }
        }
        (a, ap)
    }
}

pub fn compute_recall(matrix: &AlignmentMatrix) -> Result<(Percent, Percent), AlignmentError> {
    if matrix.gold.is_empty() {
        return Err(AlignmentError::EmptyGoldSet);
    }
    let d = matrix.detection();
    let n = matrix.gold.len();
    Ok((Percent::ratio(d.aligned.len(), n), Percent::ratio(d.aligned_or_partial.len(), n)))
}

pub fn compute_flagged_precision(matrix: &AlignmentMatrix) -> Result<(Percent, Percent), AlignmentError> {
    let flagged = matrix.flagged_hashes();
    let denominator = flagged.len();
    if denominator == 0 {
        return Err(AlignmentError::NoFlaggedFindings);
    }
    let (a, ap) = matrix.counts_over(&flagged);
    Ok((Percent::ratio(a, denominator), Percent::ratio(ap, denominator)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub auditor_model: String,
    pub gold_issue_ids: BTreeSet<String>,
    pub detected_a: BTreeSet<String>,
    pub detected_ap: BTreeSet<String>,
    pub recall_a: Percent,
    pub recall_ap: Percent,
    /// Absent when no retained finding falls on a gold-bearing task, and for ensembles.
    pub precision_a: Option<Percent>,
    pub precision_ap: Option<Percent>,
    pub aligned_finding_count_a: usize,
    pub aligned_finding_count_ap: usize,
    pub flagged_task_finding_count: usize,
    pub findings_total: usize,
    pub cost: Option<Cost>,
    #[serde(default)]
    pub members: Vec<String>,
}

/// `findings_total` and `cost` describe the whole audit run the matrix came from.
pub fn compute_metrics(matrix: &AlignmentMatrix, findings_total: usize, cost: Option<Cost>) -> Result<MetricsReport, AlignmentError> {
    let (recall_a, recall_ap) = compute_recall(matrix)?;
    let precision = compute_flagged_precision(matrix).ok();
    let (aligned_a, aligned_ap) = matrix.aligned_finding_counts();
    let d = matrix.detection();
    Ok(MetricsReport {
        auditor_model: matrix.auditor_model.clone(),
        gold_issue_ids: matrix.gold.iter().map(|g| g.issue_id.clone()).collect(),
        detected_a: d.aligned,
        detected_ap: d.aligned_or_partial,
        recall_a,
        recall_ap,
        precision_a: precision.map(|p| p.0),
        precision_ap: precision.map(|p| p.1),
        aligned_finding_count_a: aligned_a,
        aligned_finding_count_ap: aligned_ap,
        flagged_task_finding_count: matrix.flagged_findings().len(),
        findings_total,
        cost,
        members: Vec::new(),
    })
}

fn check_same_gold(reports: &[MetricsReport]) -> Result<&BTreeSet<String>, AlignmentError> {
    let first = reports.first().ok_or(AlignmentError::EmptyGoldSet)?;
    if first.gold_issue_ids.is_empty() {
        return Err(AlignmentError::EmptyGoldSet);
    }
    if reports.iter().any(|r| r.gold_issue_ids != first.gold_issue_ids) {
        return Err(AlignmentError::GoldSetMismatch);
    }
    Ok(&first.gold_issue_ids)
}

/// Pools independent single-model runs: detections are unioned per verdict
/// level, findings and costs are summed, precision is not defined.
pub fn ensemble_union(reports: &[MetricsReport]) -> Result<MetricsReport, AlignmentError> {
    let gold = check_same_gold(reports)?;
    let detected_a: BTreeSet<String> = reports.iter().flat_map(|r| r.detected_a.iter().cloned()).collect();
    let detected_ap: BTreeSet<String> = reports.iter().flat_map(|r| r.detected_ap.iter().cloned()).collect();
    let cost = reports.iter().map(|r| r.cost).sum::<Option<Cost>>();
    Ok(MetricsReport {
        auditor_model: ENSEMBLE_LABEL.to_string(),
        gold_issue_ids: gold.clone(),
        recall_a: Percent::ratio(detected_a.len(), gold.len()),
        recall_ap: Percent::ratio(detected_ap.len(), gold.len()),
        detected_a,
        detected_ap,
        precision_a: None,
        precision_ap: None,
        aligned_finding_count_a: reports.iter().map(|r| r.aligned_finding_count_a).sum(),
        aligned_finding_count_ap: reports.iter().map(|r| r.aligned_finding_count_ap).sum(),
        flagged_task_finding_count: reports.iter().map(|r| r.flagged_task_finding_count).sum(),
        findings_total: reports.iter().map(|r| r.findings_total).sum(),
        cost,
        members: reports.iter().map(|r| r.auditor_model.clone()).collect(),
    })
}

/// Recall when an issue counts only if at least `k` models detect it.
pub fn majority_vote(reports: &[MetricsReport], k: usize) -> Result<(Percent, Percent), AlignmentError> {
    let gold = check_same_gold(reports)?;
    if k == 0 || k > reports.len() {
        return Err(AlignmentError::InvalidThreshold { k, models: reports.len() });
    }
    let votes = |pick: fn(&MetricsReport) -> &BTreeSet<String>| {
        gold.iter().filter(|id| reports.iter().filter(|r| pick(r).contains(*id)).count() >= k).count()
    };
    let a = votes(|r| &r.detected_a);
    let ap = votes(|r| &r.detected_ap);
    Ok((Percent::ratio(a, gold.len()), Percent::ratio(ap, gold.len())))
}
