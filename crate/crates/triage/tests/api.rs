use std::collections::BTreeMap;
use std::sync::Arc;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use benchaudit_core::engine::{AuditReport, AuditRunConfig, TaskAuditResult};
use benchaudit_core::gateway::{Cost, ModelSpec, Usage};
use benchaudit_core::ingest::{Artifact, InputTier, TaskBundle, TaskConfig};
use benchaudit_core::reporting::{emit_json, AdjudicationLog};
use benchaudit_core::taxonomy::{Evidence, Finding, FindingType, LineRange, Severity, Subcategory};
use benchaudit_triage::{excerpt, router, TriageSession};
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

fn finding(task: &str, sub: Subcategory, severity: Severity, confidence: f64, title: &str) -> Finding {
    Finding {
        task_id: task.into(),
        category: sub.category(),
        subcategory: sub,
        severity,
        finding_type: FindingType::Bug,
        title: title.into(),
        description: "d".into(),
        evidence: vec![Evidence { source: "tests/eval.py".into(), line_range: Some(LineRange { start: 8, end: 8 }), snippet: title.into() }],
        recommendation: String::new(),
        confidence,
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
        usage: Usage::default(),
        cost: Cost::ZERO,
        context_fingerprint: None,
        diagnostics: vec![],
        error: None,
    }
}

fn report() -> AuditReport {
    let t1 = task(
        "t1",
        vec![
            finding("t1", Subcategory::EvalTolerance, Severity::High, 0.9, "tolerance too tight"),
            finding("t1", Subcategory::EvalMismatch, Severity::Medium, 0.6, "checks names not SMILES"),
            finding("t1", Subcategory::GtLogic, Severity::Critical, 0.85, "squares r"),
        ],
    );
    let t2 = task("t2", vec![finding("t2", Subcategory::InstIncomplete, Severity::Low, 0.4, "threshold missing")]);
    let mut r = AuditReport::assemble(AuditRunConfig::new(ModelSpec::named("m")).echo(), vec![t1, t2], 2);
    let text = (1..=20).map(|i| format!("line {i}")).collect::<Vec<_>>().join("\n");
    r.bundles = BTreeMap::from([(
        "t1".to_string(),
        TaskBundle {
            task_id: "t1".into(),
            config: TaskConfig::default(),
            instruction: "do it".into(),
            test_artifacts: vec![Artifact { path: "tests/eval.py".into(), text }],
            solution_artifacts: vec![],
            environment_artifacts: vec![],
            domain_knowledge: None,
            data_description: None,
            agent_evidence: None,
            tier: InputTier::Minimal,
            diagnostics: vec![],
        },
    )]);
    r
}

struct Fixture {
    app: Router,
    _dir: tempfile::TempDir,
    log_path: std::path::PathBuf,
    report_path: std::path::PathBuf,
}

fn fixture() -> Fixture {
    let dir = tempfile::TempDir::new().unwrap();
    let report_path = dir.path().join("report.json");
    std::fs::write(&report_path, emit_json(&report())).unwrap();
    let log_path = dir.path().join("adjudications.jsonl");
    let session = TriageSession::load(&report_path, &log_path, None).unwrap();
    Fixture { app: router(Arc::new(session), None), _dir: dir, log_path, report_path }
}

async fn call(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let req = Request::builder().method(method).uri(uri).header("content-type", "application/json");
    let req = req.body(body.map_or_else(Body::empty, |b| Body::from(b.to_string()))).unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    (status, serde_json::from_slice(&bytes).unwrap_or(Value::Null))
}

#[tokio::test]
async fn tasks_projection() {
    let f = fixture();
    let (status, body) = call(&f.app, "GET", "/api/tasks", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body[0]["task_id"], "t1");
    assert_eq!(body[0]["finding_count"], 3);
    assert_eq!(body[0]["max_severity"], "Critical");
    assert_eq!(body[1]["max_severity"], "Low");

    let (status, body) = call(&f.app, "GET", "/api/tasks/t2", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["findings"].as_array().unwrap().len(), 1);
    let (status, body) = call(&f.app, "GET", "/api/tasks/nope", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert_eq!(body["error"], "NotFound");
}

#[tokio::test]
async fn finding_filters_compose() {
    let f = fixture();
    let (_, all) = call(&f.app, "GET", "/api/findings", None).await;
    let titles: Vec<&str> = all.as_array().unwrap().iter().map(|v| v["title"].as_str().unwrap()).collect();
    assert_eq!(titles, ["squares r", "tolerance too tight", "checks names not SMILES", "threshold missing"]);

    let (_, confirmed_eval) = call(&f.app, "GET", "/api/findings?min_confidence=0.8&category=EVAL", None).await;
    let arr = confirmed_eval.as_array().unwrap();
    assert_eq!(arr.len(), 1);
    assert_eq!(arr[0]["subcategory"], "EVAL-TOLERANCE");
    assert_eq!(arr[0]["tier"], "confirmed");

    let (_, high) = call(&f.app, "GET", "/api/findings?severity_min=high&task=t1", None).await;
    assert_eq!(high.as_array().unwrap().len(), 2);
    let (_, sub) = call(&f.app, "GET", "/api/findings?subcategory=inst-incomplete", None).await;
    assert_eq!(sub.as_array().unwrap().len(), 1);

    let (status, body) = call(&f.app, "GET", "/api/findings?category=NOPE", None).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(body["error"], "InvalidFilter");
}

#[tokio::test]
async fn finding_detail_has_excerpt() {
    let f = fixture();
    let (_, all) = call(&f.app, "GET", "/api/findings?task=t1", None).await;
    let hash = all[0]["hash"].as_str().unwrap().to_string();
    let (status, body) = call(&f.app, "GET", &format!("/api/findings/{hash}"), None).await;
    assert_eq!(status, StatusCode::OK);
    let lines = body["excerpts"][0]["lines"].as_array().unwrap();
    let numbers: Vec<u64> = lines.iter().map(|l| l["number"].as_u64().unwrap()).collect();
    assert_eq!(numbers, (3..=13).collect::<Vec<u64>>());
    assert!(lines.iter().any(|l| l["cited"] == true && l["number"] == 8));

    let (status, _) = call(&f.app, "GET", "/api/findings/deadbeef", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn adjudication_read_your_writes() {
    let f = fixture();
    let before = std::fs::read(&f.report_path).unwrap();
    let (_, all) = call(&f.app, "GET", "/api/findings", None).await;
    let hash = all[0]["hash"].as_str().unwrap().to_string();
    let (_, stats0) = call(&f.app, "GET", "/api/stats", None).await;
    assert_eq!(stats0["adjudication"]["confirmed"], 0);

    let (status, entry) = call(&f.app, "POST", "/api/adjudications", Some(json!({"finding_hash": hash, "verdict": "confirmed", "note": "agreed"}))).await;
    assert_eq!(status, StatusCode::CREATED);
    assert_eq!(entry["verdict"], "confirmed");
    let (_, stats1) = call(&f.app, "GET", "/api/stats", None).await;
    assert_eq!(stats1["adjudication"]["confirmed"], 1);
    assert_eq!(stats1["pending"], 3);

    let (_, confirmed) = call(&f.app, "GET", "/api/findings?adjudication_state=confirmed", None).await;
    assert_eq!(confirmed.as_array().unwrap().len(), 1);
    let (_, pending) = call(&f.app, "GET", "/api/findings?adjudication_state=unadjudicated", None).await;
    assert_eq!(pending.as_array().unwrap().len(), 3);

    let (status, body) = call(&f.app, "POST", "/api/adjudications", Some(json!({"finding_hash": "nope", "verdict": "rejected"}))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(body["error"], "UnknownFinding");
    let (status, body) = call(&f.app, "POST", "/api/adjudications", Some(json!({"finding_hash": hash, "verdict": "maybe"}))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(body["error"], "InvalidRequest");

    assert_eq!(std::fs::read(&f.report_path).unwrap(), before);
    assert_eq!(AdjudicationLog::open(&f.log_path).unwrap().history().len(), 1);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn concurrent_posts_do_not_interleave() {
    let f = fixture();
    let (_, all) = call(&f.app, "GET", "/api/findings", None).await;
    let hashes: Vec<String> = all.as_array().unwrap().iter().map(|v| v["hash"].as_str().unwrap().to_string()).collect();
    let mut handles = Vec::new();
    for i in 0..40 {
        let app = f.app.clone();
        let hash = hashes[i % hashes.len()].clone();
        let note = "x".repeat(500 + i);
        handles.push(tokio::spawn(async move {
            call(&app, "POST", "/api/adjudications", Some(json!({"finding_hash": hash, "verdict": "needs_info", "note": note}))).await.0
        }));
    }
    for h in handles {
        assert_eq!(h.await.unwrap(), StatusCode::CREATED);
    }
    let text = std::fs::read_to_string(&f.log_path).unwrap();
    assert_eq!(text.lines().count(), 40);
    assert!(text.lines().all(|l| serde_json::from_str::<Value>(l).is_ok()));
}

#[tokio::test]
async fn metrics_endpoint_and_unknown_routes() {
    let f = fixture();
    let (status, body) = call(&f.app, "GET", "/api/metrics", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert_eq!(body["error"], "NotFound");
    let (status, _) = call(&f.app, "GET", "/api/unknown", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);

    let dir = tempfile::TempDir::new().unwrap();
    let metrics_path = dir.path().join("metrics.json");
    std::fs::write(&metrics_path, "[]").unwrap();
    let session = TriageSession::load(&f.report_path, &dir.path().join("log.jsonl"), Some(&metrics_path)).unwrap();
    let app = router(Arc::new(session), None);
    let (status, body) = call(&app, "GET", "/api/metrics", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body, json!([]));
}

#[tokio::test]
async fn serves_static_ui() {
    let f = fixture();
    let ui = tempfile::TempDir::new().unwrap();
    std::fs::write(ui.path().join("index.html"), "<html>triage</html>").unwrap();
    let session = TriageSession::load(&f.report_path, &ui.path().join("log.jsonl"), None).unwrap();
    let app = router(Arc::new(session), Some(ui.path()));
    let resp = app.oneshot(Request::builder().uri("/index.html").body(Body::empty()).unwrap()).await.unwrap();
    assert_eq!(resp.status(), StatusCode::OK);
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    assert_eq!(&bytes[..], b"<html>triage</html>");
}

#[test]
fn unreadable_report() {
    let dir = tempfile::TempDir::new().unwrap();
    std::fs::write(dir.path().join("r.json"), "{").unwrap();
    assert!(TriageSession::load(&dir.path().join("r.json"), &dir.path().join("l"), None).is_err());
}

#[test]
fn excerpt_window_clamps() {
    let text = "a\nb\nc";
    let lines = excerpt(text, Some(1), Some(1));
    assert_eq!(lines.len(), 3);
    assert!(lines[0].cited && !lines[1].cited);
    assert_eq!(excerpt(text, None, None).len(), 3);
}
