//! Local HTTP service for reviewing an audit report and recording expert
//! verdicts.

use std::collections::{BTreeMap, BTreeSet};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use axum::extract::{Path as UrlPath, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;
use tower_http::services::ServeDir;

use benchaudit_core::alignment::MetricsReport;
use benchaudit_core::engine::AuditReport;
use benchaudit_core::reporting::{parse_report, AdjudicationEntry, AdjudicationLog, AdjudicationState, AdjudicationStats, ReportError};
use benchaudit_core::taxonomy::{Category, ConfidenceTier, Finding, Severity, Subcategory};

/// Lines of context shown around a cited range.
pub const EXCERPT_CONTEXT: u32 = 5;

#[derive(Debug, Error)]
pub enum TriageError {
    #[error("cannot read report {path}: {message}")]
    ReportUnreadable { path: String, message: String },
    #[error("cannot read metrics {path}: {message}")]
    MetricsUnreadable { path: String, message: String },
    #[error(transparent)]
    Log(#[from] ReportError),
    #[error("cannot bind {addr}: {source}")]
    BindFailure { addr: String, source: std::io::Error },
    #[error("server error: {0}")]
    Server(std::io::Error),
}

/// A loaded report, its adjudication log and optional alignment metrics.
pub struct TriageSession {
    report: AuditReport,
    known: BTreeSet<String>,
    /// hash -> (task index, finding index)
    index: BTreeMap<String, (usize, usize)>,
    log: Mutex<AdjudicationLog>,
    metrics: Option<Vec<MetricsReport>>,
}

impl TriageSession {
    pub fn new(report: AuditReport, log: AdjudicationLog, metrics: Option<Vec<MetricsReport>>) -> TriageSession {
        let mut index = BTreeMap::new();
        for (ti, task) in report.tasks.iter().enumerate() {
            for (fi, f) in task.findings.iter().enumerate() {
                index.entry(f.hash()).or_insert((ti, fi));
            }
        }
        let known = index.keys().cloned().collect();
        TriageSession { report, known, index, log: Mutex::new(log), metrics }
    }

    pub fn load(report_path: &Path, log_path: &Path, metrics_path: Option<&Path>) -> Result<TriageSession, TriageError> {
        let unreadable = |message: String| TriageError::ReportUnreadable { path: report_path.display().to_string(), message };
        let text = std::fs::read_to_string(report_path).map_err(|e| unreadable(e.to_string()))?;
        let report = parse_report(&text).map_err(|e| unreadable(e.to_string()))?;
        let metrics = match metrics_path {
            None => None,
            Some(p) => {
                let bad = |message: String| TriageError::MetricsUnreadable { path: p.display().to_string(), message };
                let text = std::fs::read_to_string(p).map_err(|e| bad(e.to_string()))?;
                Some(serde_json::from_str(&text).map_err(|e| bad(e.to_string()))?)
            }
        };
        Ok(TriageSession::new(report, AdjudicationLog::open(log_path)?, metrics))
    }

    pub fn report(&self) -> &AuditReport {
        &self.report
    }

    fn finding(&self, hash: &str) -> Option<&Finding> {
        self.index.get(hash).map(|(t, f)| &self.report.tasks[*t].findings[*f])
    }

    fn adjudications(&self) -> BTreeMap<String, AdjudicationEntry> {
        let log = self.log.lock().expect("adjudication log poisoned");
        log.effective().into_iter().map(|(k, v)| (k.to_string(), v.clone())).collect()
    }
}

#[derive(Debug, Serialize)]
pub struct FindingView {
    pub hash: String,
    #[serde(flatten)]
    pub finding: Finding,
    pub tier: ConfidenceTier,
    pub adjudication_state: Option<AdjudicationState>,
    pub adjudication: Option<AdjudicationEntry>,
}

fn view(f: &Finding, adjudications: &BTreeMap<String, AdjudicationEntry>) -> FindingView {
    let hash = f.hash();
    let adjudication = adjudications.get(&hash).cloned();
    FindingView {
        tier: f.tier(),
        adjudication_state: adjudication.as_ref().map(|a| a.verdict),
        adjudication,
        hash,
        finding: f.clone(),
    }
}

struct ApiError(StatusCode, String, String);

impl ApiError {
    fn bad_request(kind: &str, message: impl Into<String>) -> ApiError {
        ApiError(StatusCode::BAD_REQUEST, kind.to_string(), message.into())
    }

    fn not_found(message: impl Into<String>) -> ApiError {
        ApiError(StatusCode::NOT_FOUND, "NotFound".to_string(), message.into())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(json!({"error": self.1, "message": self.2}))).into_response()
    }
}

type Shared = Arc<TriageSession>;
type ApiResult<T> = Result<Json<T>, ApiError>;

#[derive(Debug, Serialize)]
struct TaskSummary {
    task_id: String,
    finding_count: usize,
    max_severity: Option<Severity>,
    tier_used: benchaudit_core::ingest::InputTier,
    failed: bool,
}

async fn list_tasks(State(s): State<Shared>) -> Json<Vec<TaskSummary>> {
    Json(
        s.report
            .tasks
            .iter()
            .map(|t| TaskSummary {
                task_id: t.task_id.clone(),
                finding_count: t.findings.len(),
                max_severity: t.findings.iter().map(|f| f.severity).max(),
                tier_used: t.tier_used,
                failed: t.failed(),
            })
            .collect(),
    )
}

async fn get_task(State(s): State<Shared>, UrlPath(id): UrlPath<String>) -> ApiResult<Value> {
    let task = s.report.task(&id).ok_or_else(|| ApiError::not_found(format!("no task {id}")))?;
    let adj = s.adjudications();
    let findings: Vec<FindingView> = task.findings.iter().map(|f| view(f, &adj)).collect();
    Ok(Json(json!({
        "task_id": task.task_id,
        "tier_used": task.tier_used,
        "findings": findings,
        "suppressed_count": task.suppressed_count,
        "rejected_count": task.rejected_findings.len(),
        "diagnostics": task.diagnostics,
        "error": task.error,
        "cost": task.cost,
    })))
}

#[derive(Debug, Default, Deserialize)]
pub struct FindingFilter {
    pub category: Option<String>,
    pub subcategory: Option<String>,
    pub severity_min: Option<String>,
    pub min_confidence: Option<f64>,
    pub task: Option<String>,
    /// `confirmed`, `rejected`, `needs_info` or `unadjudicated`.
    pub adjudication_state: Option<String>,
}

fn parse_severity(s: &str) -> Option<Severity> {
    Severity::ALL.into_iter().find(|v| v.as_str().eq_ignore_ascii_case(s.trim()))
}

fn parse_state(s: &str) -> Result<Option<AdjudicationState>, ApiError> {
    match s.trim().to_ascii_lowercase().as_str() {
        "unadjudicated" | "pending" | "none" => Ok(None),
        other => serde_json::from_value(Value::String(other.to_string()))
            .map(Some)
            .map_err(|_| ApiError::bad_request("InvalidFilter", format!("unknown adjudication_state `{s}`"))),
    }
}

async fn list_findings(State(s): State<Shared>, Query(q): Query<FindingFilter>) -> ApiResult<Vec<FindingView>> {
    let invalid = |field: &str, v: &str| ApiError::bad_request("InvalidFilter", format!("unknown {field} `{v}`"));
    let category = q.category.as_deref().map(|c| c.parse::<Category>().map_err(|_| invalid("category", c))).transpose()?;
    let subcategory = q.subcategory.as_deref().map(|c| c.parse::<Subcategory>().map_err(|_| invalid("subcategory", c))).transpose()?;
    let severity_min = q.severity_min.as_deref().map(|c| parse_severity(c).ok_or_else(|| invalid("severity", c))).transpose()?;
    let state = q.adjudication_state.as_deref().map(parse_state).transpose()?;
    if let Some(c) = q.min_confidence {
        if !(0.0..=1.0).contains(&c) {
            return Err(ApiError::bad_request("InvalidFilter", "min_confidence must be within [0, 1]"));
        }
    }
    let adj = s.adjudications();
    let mut out: Vec<FindingView> = s
        .report
        .findings()
        .filter(|f| category.is_none_or(|c| f.category == c))
        .filter(|f| subcategory.is_none_or(|c| f.subcategory == c))
        .filter(|f| severity_min.is_none_or(|m| f.severity >= m))
        .filter(|f| q.min_confidence.is_none_or(|m| f.confidence >= m))
        .filter(|f| q.task.as_deref().is_none_or(|t| f.task_id == t))
        .map(|f| view(f, &adj))
        .filter(|v| state.is_none_or(|st| v.adjudication_state == st))
        .collect();
    out.sort_by(|a, b| {
        b.finding
            .severity
            .cmp(&a.finding.severity)
            .then_with(|| b.finding.confidence.total_cmp(&a.finding.confidence))
            .then_with(|| a.finding.task_id.cmp(&b.finding.task_id))
            .then_with(|| a.finding.title.cmp(&b.finding.title))
            .then_with(|| a.hash.cmp(&b.hash))
    });
    Ok(Json(out))
}

#[derive(Debug, Serialize)]
pub struct ExcerptLine {
    pub number: u32,
    pub text: String,
    pub cited: bool,
}

#[derive(Debug, Serialize)]
pub struct Excerpt {
    pub source: String,
    pub line_start: Option<u32>,
    pub line_end: Option<u32>,
    pub snippet: String,
    /// Absent when the report carries no copy of the cited artifact.
    pub lines: Option<Vec<ExcerptLine>>,
}

/// The cited range plus `EXCERPT_CONTEXT` lines on either side; the whole
/// artifact when no range is cited.
pub fn excerpt(text: &str, start: Option<u32>, end: Option<u32>) -> Vec<ExcerptLine> {
    let lines: Vec<&str> = text.split('\n').collect();
    let total = lines.len() as u32;
    let (from, to) = match (start, end) {
        (Some(s), e) => {
            let e = e.unwrap_or(s).max(s);
            (s.saturating_sub(EXCERPT_CONTEXT).max(1), (e + EXCERPT_CONTEXT).min(total))
        }
        _ => (1, total),
    };
    (from..=to)
        .filter_map(|n| {
            let text = lines.get(n as usize - 1)?;
            let cited = match (start, end) {
                (Some(s), e) => n >= s && n <= e.unwrap_or(s),
                _ => false,
            };
            Some(ExcerptLine { number: n, text: text.to_string(), cited })
        })
        .collect()
}

async fn get_finding(State(s): State<Shared>, UrlPath(hash): UrlPath<String>) -> ApiResult<Value> {
    let f = s.finding(&hash).ok_or_else(|| ApiError::not_found(format!("no finding {hash}")))?;
    let bundle = s.report.bundles.get(&f.task_id);
    let excerpts: Vec<Excerpt> = f
        .evidence
        .iter()
        .map(|e| {
            let start = e.line_range.map(|r| r.start);
            let end = e.line_range.map(|r| r.end);
            Excerpt {
                source: e.source.clone(),
                line_start: start,
                line_end: end,
                snippet: e.snippet.clone(),
                lines: bundle.and_then(|b| b.artifact_text(&e.source)).map(|t| excerpt(t, start, end)),
            }
        })
        .collect();
    let mut body = serde_json::to_value(view(f, &s.adjudications())).expect("view serializes");
    body["excerpts"] = serde_json::to_value(excerpts).expect("excerpts serialize");
    Ok(Json(body))
}

#[derive(Debug, Deserialize)]
struct AdjudicationRequest {
    finding_hash: String,
    verdict: AdjudicationState,
    #[serde(default)]
    note: String,
    #[serde(default)]
    reviewer: Option<String>,
}

async fn post_adjudication(State(s): State<Shared>, body: axum::body::Bytes) -> Result<(StatusCode, Json<AdjudicationEntry>), ApiError> {
    let req: AdjudicationRequest =
        serde_json::from_slice(&body).map_err(|e| ApiError::bad_request("InvalidRequest", e.to_string()))?;
    let reviewer = req.reviewer.unwrap_or_else(|| "anonymous".to_string());
    let session = s.clone();
    let entry = tokio::task::spawn_blocking(move || {
        let mut log = session.log.lock().expect("adjudication log poisoned");
        log.record(&session.known, &req.finding_hash, req.verdict, &req.note, &reviewer)
    })
    .await
    .map_err(|e| ApiError(StatusCode::INTERNAL_SERVER_ERROR, "Internal".into(), e.to_string()))?;
    match entry {
        Ok(entry) => Ok((StatusCode::CREATED, Json(entry))),
        Err(ReportError::UnknownFinding(h)) => Err(ApiError::bad_request("UnknownFinding", format!("no finding with hash {h}"))),
        Err(e) => Err(ApiError(StatusCode::INTERNAL_SERVER_ERROR, "LogWriteFailed".into(), e.to_string())),
    }
}

#[derive(Debug, Serialize)]
struct Stats {
    model: String,
    tasks: usize,
    failed_tasks: usize,
    findings: usize,
    by_severity: BTreeMap<String, usize>,
    by_category: BTreeMap<String, usize>,
    by_tier: BTreeMap<String, usize>,
    adjudicated: usize,
    pending: usize,
    adjudication: AdjudicationStats,
}

async fn get_stats(State(s): State<Shared>) -> Json<Stats> {
    let mut by_severity = BTreeMap::new();
    let mut by_category = BTreeMap::new();
    let mut by_tier = BTreeMap::new();
    for f in s.report.findings() {
        *by_severity.entry(f.severity.as_str().to_string()).or_insert(0) += 1;
        *by_category.entry(f.category.code().to_string()).or_insert(0) += 1;
        let tier = serde_json::to_value(f.tier()).ok().and_then(|v| v.as_str().map(str::to_string)).unwrap_or_default();
        *by_tier.entry(tier).or_insert(0) += 1;
    }
    let (adjudication, adjudicated) = {
        let log = s.log.lock().expect("adjudication log poisoned");
        (log.stats(), log.effective().len())
    };
    let findings = s.known.len();
    Json(Stats {
        model: s.report.model_name().to_string(),
        tasks: s.report.tasks.len(),
        failed_tasks: s.report.totals.failed_tasks,
        findings,
        by_severity,
        by_category,
        by_tier,
        adjudicated,
        pending: findings.saturating_sub(adjudicated),
        adjudication,
    })
}

async fn get_metrics(State(s): State<Shared>) -> ApiResult<Vec<MetricsReport>> {
    s.metrics.clone().map(Json).ok_or_else(|| ApiError::not_found("no alignment metrics loaded"))
}

async fn api_fallback() -> ApiError {
    ApiError::not_found("no such endpoint")
}

pub fn router(session: Arc<TriageSession>, ui_dir: Option<&Path>) -> Router {
    let api = Router::new()
        .route("/tasks", get(list_tasks))
        .route("/tasks/{id}", get(get_task))
        .route("/findings", get(list_findings))
        .route("/findings/{hash}", get(get_finding))
        .route("/adjudications", post(post_adjudication))
        .route("/stats", get(get_stats))
        .route("/metrics", get(get_metrics))
        .fallback(api_fallback)
        .with_state(session);
    let app = Router::new().nest("/api", api);
    match ui_dir {
        Some(dir) => app.fallback_service(ServeDir::new(dir)),
        None => app,
    }
}

#[derive(Debug, Clone)]
pub struct ServeConfig {
    pub report: PathBuf,
    pub log: PathBuf,
    pub metrics: Option<PathBuf>,
    pub ui_dir: Option<PathBuf>,
    pub bind: SocketAddr,
}

/// Runs until Ctrl-C. `on_ready` receives the bound address.
pub async fn serve(config: ServeConfig, on_ready: impl FnOnce(SocketAddr)) -> Result<(), TriageError> {
    let session = Arc::new(TriageSession::load(&config.report, &config.log, config.metrics.as_deref())?);
    let listener = tokio::net::TcpListener::bind(config.bind)
        .await
        .map_err(|source| TriageError::BindFailure { addr: config.bind.to_string(), source })?;
    let addr = listener.local_addr().map_err(TriageError::Server)?;
    on_ready(addr);
    axum::serve(listener, router(session, config.ui_dir.as_deref()))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
        .map_err(TriageError::Server)
}
