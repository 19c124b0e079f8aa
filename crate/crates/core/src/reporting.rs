//! Report artifacts: canonical JSON, Markdown summaries, distribution and
//! metrics tables, and the expert adjudication log.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::alignment::MetricsReport;
use crate::engine::AuditReport;
use crate::percent::Percent;
use crate::taxonomy::{Finding, Subcategory};

pub const NO_FINDINGS: &str = "No findings";
const DASH: &str = "---";

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("report is not valid: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("no finding with hash {0} in the loaded report")]
    UnknownFinding(String),
    #[error("adjudication log {path}, line {line}: {message}")]
    LogCorrupt { path: String, line: usize, message: String },
    #[error("adjudication log {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("writing CSV: {0}")]
    Csv(#[from] csv::Error),
}

fn canonical(v: &impl Serialize) -> String {
    // serde_json's default map is ordered by key, so a round trip through
    // Value sorts every object.
    let value = serde_json::to_value(v).expect("report serializes");
    let mut out = serde_json::to_string_pretty(&value).expect("value serializes");
    out.push('\n');
    out
}

/// Key-sorted, pretty-printed JSON. Emitting a parsed emission reproduces it.
pub fn emit_json(report: &AuditReport) -> String {
    canonical(report)
}

pub fn parse_report(text: &str) -> Result<AuditReport, ReportError> {
    Ok(serde_json::from_str(text)?)
}

pub fn emit_metrics_json(metrics: &[MetricsReport]) -> String {
    canonical(&metrics)
}

fn escape_cell(text: &str) -> String {
    text.replace('|', "\\|").replace('\n', " ")
}

fn render_finding(out: &mut String, f: &Finding) {
    let _ = writeln!(
        out,
        "### [{}] {} ({}, {}, confidence {:.2})\n",
        f.severity.as_str(),
        f.title,
        f.subcategory,
        f.finding_type.as_str(),
        f.confidence
    );
    let _ = writeln!(out, "{}\n", f.description.trim());
    for e in &f.evidence {
        let lines = e.line_range.map(|r| if r.start == r.end { format!(":{}", r.start) } else { format!(":{}-{}", r.start, r.end) });
        let _ = writeln!(out, "- `{}{}`: `{}`", e.source, lines.unwrap_or_default(), e.snippet.replace('`', "'"));
    }
    if !f.recommendation.trim().is_empty() {
        let _ = writeln!(out, "\n**Recommendation:** {}", f.recommendation.trim());
    }
    let _ = writeln!(out, "\n<sub>hash {} · auditor {}</sub>\n", f.hash(), f.auditor_model);
}

pub fn emit_markdown(report: &AuditReport) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "# Audit report: {}\n", report.model_name());
    let t = &report.totals;
    let _ = writeln!(out, "- Template version: {}", report.config.template_version);
    if let Some(ts) = &report.generated_at {
        let _ = writeln!(out, "- Generated: {ts}");
    }
    let _ = writeln!(out, "- Tasks: {} ({} failed)", t.tasks, t.failed_tasks);
    let _ = writeln!(out, "- Findings: {} retained, {} suppressed, {} rejected", t.findings, t.suppressed, t.rejected);
    let _ = writeln!(out, "- Tokens: {} in / {} out", t.usage.input_tokens, t.usage.output_tokens);
    let _ = writeln!(out, "- Cost: ${:.2}\n", t.cost);

    if t.findings == 0 {
        let _ = writeln!(out, "{NO_FINDINGS}.\n");
    } else {
        let _ = writeln!(out, "## Distribution\n");
        out.push_str(&distribution_table(&[report]));
        out.push('\n');
    }

    if !report.failures.is_empty() {
        let _ = writeln!(out, "## Failures\n");
        for f in &report.failures {
            let _ = writeln!(out, "- {}: {}", f.task_id, f.error);
        }
        out.push('\n');
    }

    for task in &report.tasks {
        let _ = writeln!(out, "## {}\n", task.task_id);
        let _ = writeln!(
            out,
            "Tier: {} · suppressed {} · rejected {} · cost ${:.4}\n",
            task.tier_used,
            task.suppressed_count,
            task.rejected_findings.len(),
            task.cost
        );
        if let Some(e) = &task.error {
            let _ = writeln!(out, "**Error:** {e}\n");
        }
        if task.findings.is_empty() {
            let _ = writeln!(out, "{NO_FINDINGS}.\n");
        }
        for f in &task.findings {
            render_finding(&mut out, f);
        }
    }
    out
}

/// Subcategory-by-model counts with a bold Total row. Rows follow taxonomy
/// order and are omitted when every model has zero.
pub fn distribution_table(reports: &[&AuditReport]) -> String {
    let mut out = String::from("| Subcategory |");
    for r in reports {
        let _ = write!(out, " {} |", escape_cell(r.model_name()));
    }
    out.push_str("\n|---|");
    out.push_str(&"---:|".repeat(reports.len()));
    out.push('\n');
    for sub in Subcategory::ALL {
        let counts: Vec<usize> = reports.iter().map(|r| r.distribution.get(&sub).copied().unwrap_or(0)).collect();
        if counts.iter().all(|c| *c == 0) {
            continue;
        }
        let _ = write!(out, "| {sub} |");
        for c in counts {
            let _ = write!(out, " {c} |");
        }
        out.push('\n');
    }
    out.push_str("| **Total** |");
    for r in reports {
        let _ = write!(out, " **{}** |", r.distribution.values().sum::<usize>());
    }
    out.push('\n');
    out
}

/// Column totals of a rendered distribution table, read back from the Total row.
pub fn distribution_totals(table: &str) -> Vec<usize> {
    table
        .lines()
        .find(|l| l.starts_with("| **Total**"))
        .map(|l| {
            l.split('|')
                .skip(2)
                .filter_map(|c| c.trim().trim_matches('*').parse().ok())
                .collect()
        })
        .unwrap_or_default()
}

/// What the Findings column counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FindingsColumn {
    /// Every retained finding of the run.
    #[default]
    Total,
    /// Retained findings on tasks carrying gold issues (the precision denominator).
    Flagged,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MetricsRow {
    pub model: String,
    pub recall_a: String,
    pub recall_ap: String,
    pub precision_a: String,
    pub precision_ap: String,
    pub cost: String,
    pub findings: String,
}

impl MetricsRow {
    fn cells(&self) -> [&str; 7] {
        [&self.model, &self.recall_a, &self.recall_ap, &self.precision_a, &self.precision_ap, &self.cost, &self.findings]
    }
}

pub const METRICS_HEADER: [&str; 7] = ["Model", "Recall_A", "Recall_AP", "Precision_A", "Precision_AP", "Cost", "Findings"];

fn pct(p: Option<Percent>) -> String {
    p.map_or_else(|| DASH.to_string(), |p| p.to_string())
}

pub fn metrics_row(m: &MetricsReport, column: FindingsColumn) -> MetricsRow {
    let findings = match column {
        FindingsColumn::Total => m.findings_total,
        FindingsColumn::Flagged => m.flagged_task_finding_count,
    };
    MetricsRow {
        model: m.auditor_model.clone(),
        recall_a: m.recall_a.to_string(),
        recall_ap: m.recall_ap.to_string(),
        precision_a: pct(m.precision_a),
        precision_ap: pct(m.precision_ap),
        cost: m.cost.map_or_else(|| DASH.to_string(), |c| format!("{c:.2}")),
        findings: findings.to_string(),
    }
}

/// One row per model, then the ensemble row when given.
pub fn metrics_rows(models: &[MetricsReport], ensemble: Option<&MetricsReport>, column: FindingsColumn) -> Vec<MetricsRow> {
    models.iter().chain(ensemble).map(|m| metrics_row(m, column)).collect()
}

pub fn emit_metrics_markdown(models: &[MetricsReport], ensemble: Option<&MetricsReport>, column: FindingsColumn) -> String {
    let mut out = format!("| {} |\n|---|{}\n", METRICS_HEADER.join(" | "), "---:|".repeat(METRICS_HEADER.len() - 1));
    for row in metrics_rows(models, ensemble, column) {
        let cells: Vec<String> = row.cells().iter().map(|c| escape_cell(c)).collect();
        let _ = writeln!(out, "| {} |", cells.join(" | "));
    }
    out
}

pub fn emit_metrics_csv(models: &[MetricsReport], ensemble: Option<&MetricsReport>, column: FindingsColumn) -> Result<String, ReportError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(METRICS_HEADER)?;
    for row in metrics_rows(models, ensemble, column) {
        w.write_record(row.cells())?;
    }
    let bytes = w.into_inner().map_err(|e| ReportError::Io { path: "<csv>".into(), source: e.into_error() })?;
    Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
}

/// One row per retained finding across the given reports.
pub fn emit_findings_csv(reports: &[&AuditReport]) -> Result<String, ReportError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "auditor_model", "task_id", "hash", "category", "subcategory", "severity", "finding_type", "confidence", "tier", "title", "source", "line_start", "line_end",
    ])?;
    for r in reports {
        for f in r.findings() {
            let ev = f.evidence.first();
            let range = ev.and_then(|e| e.line_range);
            let tier = serde_json::to_value(f.tier()).ok().and_then(|v| v.as_str().map(str::to_string)).unwrap_or_default();
            w.write_record([
                f.auditor_model.clone(),
                f.task_id.clone(),
                f.hash(),
                f.category.code().to_string(),
                f.subcategory.code().to_string(),
                f.severity.as_str().to_string(),
                f.finding_type.as_str().to_string(),
                format!("{:.2}", f.confidence),
                tier,
                f.title.clone(),
                ev.map(|e| e.source.clone()).unwrap_or_default(),
                range.map(|r| r.start.to_string()).unwrap_or_default(),
                range.map(|r| r.end.to_string()).unwrap_or_default(),
            ])?;
        }
    }
    let bytes = w.into_inner().map_err(|e| ReportError::Io { path: "<csv>".into(), source: e.into_error() })?;
    Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdjudicationState {
    Confirmed,
    Rejected,
    NeedsInfo,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AdjudicationEntry {
    pub finding_hash: String,
    pub verdict: AdjudicationState,
    #[serde(default)]
    pub note: String,
    pub reviewer: String,
    pub timestamp: String,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AdjudicationStats {
    pub confirmed: usize,
    pub rejected: usize,
    pub needs_info: usize,
    /// confirmed / (confirmed + rejected); absent before any decisive verdict.
    pub human_confirmed_precision: Option<Percent>,
}

/// Append-only JSON-lines log of expert verdicts. The latest entry per
/// finding hash is the effective one.
pub struct AdjudicationLog {
    path: Option<PathBuf>,
    writer: Option<File>,
    history: Vec<AdjudicationEntry>,
}

impl AdjudicationLog {
    pub fn in_memory() -> AdjudicationLog {
        AdjudicationLog { path: None, writer: None, history: Vec::new() }
    }

    pub fn open(path: &Path) -> Result<AdjudicationLog, ReportError> {
        let io = |source| ReportError::Io { path: path.display().to_string(), source };
        let mut history = Vec::new();
        if path.exists() {
            let text = fs::read_to_string(path).map_err(io)?;
            for (i, line) in text.lines().enumerate() {
                if line.trim().is_empty() {
                    continue;
                }
                history.push(serde_json::from_str(line).map_err(|e| ReportError::LogCorrupt {
                    path: path.display().to_string(),
                    line: i + 1,
                    message: e.to_string(),
                })?);
            }
        } else if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(parent).map_err(io)?;
        }
        let writer = OpenOptions::new().create(true).append(true).open(path).map_err(io)?;
        Ok(AdjudicationLog { path: Some(path.to_path_buf()), writer: Some(writer), history })
    }

    pub fn history(&self) -> &[AdjudicationEntry] {
        &self.history
    }

    /// Appends a verdict stamped with the current UTC time.
    pub fn record(
        &mut self,
        known: &BTreeSet<String>,
        finding_hash: &str,
        verdict: AdjudicationState,
        note: &str,
        reviewer: &str,
    ) -> Result<AdjudicationEntry, ReportError> {
        let now = chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true);
        self.record_at(known, finding_hash, verdict, note, reviewer, &now)
    }

    pub fn record_at(
        &mut self,
        known: &BTreeSet<String>,
        finding_hash: &str,
        verdict: AdjudicationState,
        note: &str,
        reviewer: &str,
        timestamp: &str,
    ) -> Result<AdjudicationEntry, ReportError> {
        if !known.contains(finding_hash) {
            return Err(ReportError::UnknownFinding(finding_hash.to_string()));
        }
        let entry = AdjudicationEntry {
            finding_hash: finding_hash.to_string(),
            verdict,
            note: note.to_string(),
            reviewer: reviewer.to_string(),
            timestamp: timestamp.to_string(),
        };
        if let Some(w) = self.writer.as_mut() {
            let line = serde_json::to_string(&entry).expect("entry serializes");
            let path = self.path.as_ref().map(|p| p.display().to_string()).unwrap_or_default();
            writeln!(w, "{line}").and_then(|_| w.flush()).map_err(|source| ReportError::Io { path, source })?;
        }
        self.history.push(entry.clone());
        Ok(entry)
    }

    pub fn effective(&self) -> BTreeMap<&str, &AdjudicationEntry> {
        effective_entries(&self.history)
    }

    pub fn stats(&self) -> AdjudicationStats {
        adjudication_stats(&self.history)
    }
}

pub fn effective_entries(history: &[AdjudicationEntry]) -> BTreeMap<&str, &AdjudicationEntry> {
    history.iter().map(|e| (e.finding_hash.as_str(), e)).collect()
}

pub fn adjudication_stats(history: &[AdjudicationEntry]) -> AdjudicationStats {
    let mut s = AdjudicationStats::default();
    for e in effective_entries(history).values() {
        match e.verdict {
            AdjudicationState::Confirmed => s.confirmed += 1,
            AdjudicationState::Rejected => s.rejected += 1,
            AdjudicationState::NeedsInfo => s.needs_info += 1,
        }
    }
    let decided = s.confirmed + s.rejected;
    s.human_confirmed_precision = (decided > 0).then(|| Percent::ratio(s.confirmed, decided));
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::{AuditRunConfig, TaskAuditResult};
    use crate::gateway::{Cost, ModelSpec, Usage};
    use crate::ingest::InputTier;
    use serde_json::Value;
    use crate::taxonomy::{Evidence, FindingType, LineRange, Severity};

    fn finding(task: &str, sub: Subcategory, title: &str) -> Finding {
        Finding {
            task_id: task.into(),
            category: sub.category(),
            subcategory: sub,
            severity: Severity::Medium,
            finding_type: FindingType::Warning,
            title: title.into(),
            description: "desc".into(),
            evidence: vec![Evidence { source: "tests/eval.py".into(), line_range: Some(LineRange { start: 3, end: 4 }), snippet: "x".into() }],
            recommendation: "fix".into(),
            confidence: 0.6,
            auditor_model: "m".into(),
        }
    }

    fn task(id: &str, findings: Vec<Finding>) -> TaskAuditResult {
        TaskAuditResult {
            task_id: id.into(),
            tier_used: InputTier::Definition,
            raw_record_count: findings.len(),
            findings,
            suppressed_count: 0,
            duplicate_count: 0,
            rejected_findings: vec![],
            static_finding_count: 0,
            usage: Usage { input_tokens: 100, output_tokens: 10 },
            cost: Cost::from_micros(1234),
            context_fingerprint: None,
            diagnostics: vec![],
            error: None,
        }
    }

    fn report(name: &str, tasks: Vec<TaskAuditResult>) -> AuditReport {
        AuditReport::assemble(AuditRunConfig::new(ModelSpec::named(name)).echo(), tasks, 0)
    }

    #[test]
    fn json_is_canonical_fixed_point() {
        let r = report("m", vec![task("b", vec![finding("b", Subcategory::GtLogic, "t")]), task("a", vec![])]);
        let once = emit_json(&r);
        let twice = emit_json(&parse_report(&once).unwrap());
        assert_eq!(once, twice);
        assert_eq!(parse_report(&once).unwrap(), r);
        let v: Value = serde_json::from_str(&once).unwrap();
        let keys: Vec<&String> = v.as_object().unwrap().keys().collect();
        let mut sorted = keys.clone();
        sorted.sort();
        assert_eq!(keys, sorted);
        assert!(once.find("\"totals\"").unwrap() > once.find("\"tasks\"").unwrap());
    }

    #[test]
    fn markdown_sentinel_and_order() {
        let empty = report("m", vec![task("a", vec![])]);
        assert!(emit_markdown(&empty).contains(NO_FINDINGS));
        let r = report("m", vec![task("b", vec![finding("b", Subcategory::GtLogic, "t")]), task("a", vec![])]);
        let md = emit_markdown(&r);
        assert!(md.find("## a\n").unwrap() < md.find("## b\n").unwrap());
        assert!(md.contains("`tests/eval.py:3-4`"));
    }

    #[test]
    fn findings_csv() {
        let r = report("m", vec![task("t", vec![finding("t", Subcategory::GtLogic, "a, b")])]);
        let csv = emit_findings_csv(&[&r]).unwrap();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 2);
        assert!(lines[1].starts_with("m,t,"));
        assert!(lines[1].contains("\"a, b\",tests/eval.py,3,4"));
    }

    #[test]
    fn distribution_table_totals() {
        let r1 = report("A", vec![task("t", vec![finding("t", Subcategory::GtLogic, "1"), finding("t", Subcategory::EnvPath, "2")])]);
        let r2 = report("B", vec![task("t", vec![finding("t", Subcategory::GtLogic, "1")])]);
        let table = distribution_table(&[&r1, &r2]);
        assert_eq!(distribution_totals(&table), vec![2, 1]);
        assert!(table.contains("| ENV-PATH | 1 | 0 |"));
        assert!(!table.contains("GT-DATA"));
    }

    fn metrics(name: &str, precision: Option<Percent>, cost: Option<Cost>) -> MetricsReport {
        MetricsReport {
            auditor_model: name.into(),
            gold_issue_ids: BTreeSet::new(),
            detected_a: BTreeSet::new(),
            detected_ap: BTreeSet::new(),
            recall_a: Percent::ratio(11, 24),
            recall_ap: Percent::ratio(23, 24),
            precision_a: precision,
            precision_ap: precision,
            aligned_finding_count_a: 0,
            aligned_finding_count_ap: 0,
            flagged_task_finding_count: 36,
            findings_total: 114,
            cost,
            members: vec![],
        }
    }

    #[test]
    fn metrics_tables() {
        let m = metrics("Flash", Some(Percent::ratio(12, 36)), Some(Cost::from_micros(530_000)));
        let md = emit_metrics_markdown(std::slice::from_ref(&m), None, FindingsColumn::Total);
        assert!(md.contains("| Flash | 45.8 | 95.8 | 33.3 | 33.3 | 0.53 | 114 |"));
        assert_eq!(md.lines().count(), 3);
        let e = metrics("Ensemble (any)", None, Some(Cost::from_micros(14_380_000)));
        let csv = emit_metrics_csv(&[m], Some(&e), FindingsColumn::Flagged).unwrap();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "Model,Recall_A,Recall_AP,Precision_A,Precision_AP,Cost,Findings");
        assert_eq!(lines[2], "Ensemble (any),45.8,95.8,---,---,14.38,36");
    }

    #[test]
    fn adjudication_log() {
        let known: BTreeSet<String> = ["h1", "h2", "h3", "h4"].iter().map(|s| s.to_string()).collect();
        let tmp = tempfile::TempDir::new().unwrap();
        let path = tmp.path().join("adjudications.jsonl");
        {
            let mut log = AdjudicationLog::open(&path).unwrap();
            for h in ["h1", "h2", "h3"] {
                log.record_at(&known, h, AdjudicationState::Confirmed, "", "rev", "2026-01-01T00:00:00Z").unwrap();
            }
            log.record_at(&known, "h4", AdjudicationState::Rejected, "not a bug", "rev", "2026-01-01T00:00:00Z").unwrap();
            assert_eq!(log.stats().human_confirmed_precision, Some(Percent::from_tenths(750)));
            assert!(matches!(
                log.record(&known, "nope", AdjudicationState::Confirmed, "", "rev"),
                Err(ReportError::UnknownFinding(_))
            ));
            log.record(&known, "h4", AdjudicationState::NeedsInfo, "", "rev").unwrap();
        }
        let log = AdjudicationLog::open(&path).unwrap();
        assert_eq!(log.history().len(), 5);
        assert_eq!(log.effective().len(), 4);
        assert_eq!(log.history().iter().filter(|e| e.finding_hash == "h4").count(), 2);
        let s = log.stats();
        assert_eq!((s.confirmed, s.rejected, s.needs_info), (3, 0, 1));
        assert_eq!(s.human_confirmed_precision, Some(Percent::HUNDRED));
        assert_eq!(adjudication_stats(log.history()), s);
    }
}
