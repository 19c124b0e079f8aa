use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{anyhow, Context};
use benchaudit_core::alignment::{self, compute_metrics, ensemble_union, majority_vote, Judge, MetricsReport, VerdictCache};
use benchaudit_core::engine::{run_audit_with, AuditReport, AuditRunConfig, RunOptions, TierRequest};
use benchaudit_core::gateway::{
    FixtureStore, Gateway, HttpTransport, ModelSpec, ReplayTransport, StubTransport, Transport, STUB_AUDIT_DEFAULT,
    STUB_JUDGE_DEFAULT,
};
use benchaudit_core::ingest::{self, InputTier};
use benchaudit_core::protocol::ContextBudget;
use benchaudit_core::reporting::{self, FindingsColumn};
use benchaudit_core::template::TemplateSet;
use benchaudit_triage::ServeConfig;
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Deserialize;

#[derive(Parser, Debug)]
#[command(name = "benchaudit", version, about = "Audit agent benchmark tasks for defects and score audits against gold issues")]
struct Cli {
    /// Emit failures as a JSON object on stderr
    #[arg(long, global = true)]
    json_errors: bool,

    /// TOML configuration file
    #[arg(long, global = true, env = "BENCHAUDIT_CONFIG", value_name = "FILE")]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Check a benchmark directory and print each task's input tier
    Validate(ValidateArgs),
    /// Audit every task with one model and write a report
    Audit(AuditArgs),
    /// Judge a report against gold issues and write metrics
    Align(AlignArgs),
    /// Combine per-model metrics into one table
    Ensemble(EnsembleArgs),
    /// Render one or more reports
    Report(ReportArgs),
    /// Serve the triage API and UI
    Serve(ServeArgs),
}

#[derive(Args, Debug)]
struct ValidateArgs {
    /// Benchmark root directory
    root: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "lowercase")]
enum TransportKind {
    Live,
    Replay,
    Stub,
}

#[derive(Args, Debug, Default)]
struct TransportArgs {
    /// Model backend
    #[arg(long, value_enum, env = "BENCHAUDIT_TRANSPORT")]
    transport: Option<TransportKind>,

    /// Fixture directory read by the replay transport
    #[arg(long, env = "BENCHAUDIT_FIXTURES", value_name = "DIR")]
    fixtures: Option<PathBuf>,

    /// Record every completion into this fixture directory
    #[arg(long, value_name = "DIR")]
    record: Option<PathBuf>,

    /// Canned responses for the stub transport (JSON)
    #[arg(long, env = "BENCHAUDIT_STUB_RESPONSES", value_name = "FILE")]
    stub_responses: Option<PathBuf>,

    /// Worker threads
    #[arg(long, env = "BENCHAUDIT_PARALLEL", value_name = "N")]
    parallel: Option<usize>,
}

#[derive(Args, Debug)]
struct AuditArgs {
    /// Benchmark root directory
    root: PathBuf,

    /// Auditor model name, optionally defined under [models.NAME] in the config file
    #[arg(long, env = "BENCHAUDIT_MODEL")]
    model: Option<String>,

    /// Extend prompts with agent programs and evaluation logs
    #[arg(long)]
    with_agent_evidence: bool,

    #[command(flatten)]
    transport: TransportArgs,

    /// Only audit these task ids (comma separated)
    #[arg(long, value_delimiter = ',', value_name = "IDS")]
    tasks: Option<Vec<String>>,

    /// Carry over successful tasks from an earlier report
    #[arg(long, value_name = "REPORT")]
    resume: Option<PathBuf>,

    /// RFC 3339 timestamp recorded in the report
    #[arg(long, env = "BENCHAUDIT_TIMESTAMP")]
    timestamp: Option<String>,

    /// Directory overriding the built-in prompt templates
    #[arg(long, value_name = "DIR")]
    templates: Option<PathBuf>,

    /// Skip the deterministic static checks
    #[arg(long)]
    no_static_checks: bool,

    /// Embed loaded task bundles so the triage service can show excerpts
    #[arg(long)]
    embed_bundles: bool,

    /// Per-artifact character limit in prompts
    #[arg(long, value_name = "CHARS")]
    max_chars_per_artifact: Option<usize>,

    /// Total prompt character limit
    #[arg(long, value_name = "CHARS")]
    max_total_chars: Option<usize>,

    /// Output report path
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct AlignArgs {
    /// Audit report to score
    #[arg(long)]
    report: PathBuf,

    /// Gold issues (YAML)
    #[arg(long)]
    gold: PathBuf,

    /// Judge model name
    #[arg(long, env = "BENCHAUDIT_JUDGE")]
    judge: Option<String>,

    /// Verdict cache (JSONL), created if missing
    #[arg(long, env = "BENCHAUDIT_CACHE")]
    cache: Option<PathBuf>,

    #[command(flatten)]
    transport: TransportArgs,

    /// Directory overriding the built-in prompt templates
    #[arg(long, value_name = "DIR")]
    templates: Option<PathBuf>,

    /// Also write the full pair-verdict matrix
    #[arg(long, value_name = "FILE")]
    matrix_out: Option<PathBuf>,

    /// Output metrics path
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum TableFormat {
    Md,
    Csv,
    Json,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ColumnArg {
    Total,
    Flagged,
}

#[derive(Args, Debug)]
struct EnsembleArgs {
    /// Metrics files written by `align`
    #[arg(long, num_args = 1.., required = true)]
    metrics: Vec<PathBuf>,

    /// Also report majority-vote recall with at least k models agreeing
    #[arg(long, value_name = "K")]
    vote: Option<usize>,

    #[arg(long, value_enum, default_value = "md")]
    format: TableFormat,

    /// Which finding count fills the Findings column
    #[arg(long, value_enum, default_value = "total")]
    findings_column: ColumnArg,

    /// Output path; stdout when omitted
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ReportArgs {
    /// Report files; several reports produce a distribution table
    #[arg(long = "in", num_args = 1.., required = true, value_name = "REPORT")]
    inputs: Vec<PathBuf>,

    #[arg(long, value_enum, default_value = "md")]
    format: TableFormat,

    /// Output path; stdout when omitted
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ServeArgs {
    /// Audit report to triage
    #[arg(long)]
    report: PathBuf,

    /// Adjudication log (JSONL), created if missing
    #[arg(long)]
    log: PathBuf,

    /// Metrics file to expose at /api/metrics
    #[arg(long)]
    metrics: Option<PathBuf>,

    /// Static UI directory
    #[arg(long, value_name = "DIR")]
    ui: Option<PathBuf>,

    /// Listen address
    #[arg(long, env = "BENCHAUDIT_BIND")]
    bind: Option<SocketAddr>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct FileConfig {
    models: BTreeMap<String, ModelSpec>,
    audit: AuditDefaults,
    align: AlignDefaults,
    serve: ServeDefaults,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct AuditDefaults {
    model: Option<String>,
    transport: Option<TransportKind>,
    fixtures: Option<PathBuf>,
    parallel: Option<usize>,
    templates: Option<PathBuf>,
    max_chars_per_artifact: Option<usize>,
    max_total_chars: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct AlignDefaults {
    judge: Option<String>,
    cache: Option<PathBuf>,
    transport: Option<TransportKind>,
    fixtures: Option<PathBuf>,
    parallel: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct ServeDefaults {
    bind: Option<SocketAddr>,
    ui: Option<PathBuf>,
}

impl FileConfig {
    fn load(path: Option<&Path>) -> Result<FileConfig, Failure> {
        let Some(path) = path else { return Ok(FileConfig::default()) };
        let text = fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))
            .class(Class::Input)?;
        toml::from_str(&text).with_context(|| format!("parsing config {}", path.display())).class(Class::Input)
    }

    fn model(&self, name: &str) -> Result<ModelSpec, Failure> {
        let mut spec = self.models.get(name).cloned().unwrap_or_else(|| ModelSpec::named(name));
        if spec.model_name.is_empty() {
            spec.model_name = name.to_string();
        }
        spec.validate().with_context(|| format!("model `{name}`")).class(Class::Input)?;
        Ok(spec)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Class {
    Validation,
    Input,
    Partial,
    Gateway,
    Io,
    Bind,
}

impl Class {
    fn code(self) -> u8 {
        match self {
            Class::Validation => 1,
            Class::Input => 3,
            Class::Partial => 4,
            Class::Gateway => 5,
            Class::Io => 6,
            Class::Bind => 7,
        }
    }

    fn name(self) -> &'static str {
        match self {
            Class::Validation => "validation",
            Class::Input => "input",
            Class::Partial => "partial",
            Class::Gateway => "gateway",
            Class::Io => "io",
            Class::Bind => "bind",
        }
    }
}

#[derive(Debug)]
struct Failure {
    class: Class,
    error: anyhow::Error,
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:#}", self.error)
    }
}

trait ClassExt<T> {
    fn class(self, class: Class) -> Result<T, Failure>;
}

impl<T, E: Into<anyhow::Error>> ClassExt<T> for Result<T, E> {
    fn class(self, class: Class) -> Result<T, Failure> {
        self.map_err(|e| Failure { class, error: e.into() })
    }
}

fn fail(class: Class, error: anyhow::Error) -> Failure {
    Failure { class, error }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let json_errors = cli.json_errors;
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            if json_errors {
                let body = serde_json::json!({ "error": f.class.name(), "code": f.class.code(), "message": f.to_string() });
                eprintln!("{body}");
            } else {
                eprintln!("error: {f}");
            }
            ExitCode::from(f.class.code())
        }
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    let config = FileConfig::load(cli.config.as_deref())?;
    match cli.command {
        Command::Validate(a) => validate(a),
        Command::Audit(a) => audit(a, &config),
        Command::Align(a) => align(a, &config),
        Command::Ensemble(a) => ensemble(a),
        Command::Report(a) => report(a),
        Command::Serve(a) => serve(a, &config),
    }
}

fn write_output(path: &Path, text: &str) -> Result<(), Failure> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display())).class(Class::Io)?;
    }
    fs::write(path, text).with_context(|| format!("writing {}", path.display())).class(Class::Io)
}

fn emit(out: Option<&Path>, text: &str) -> Result<(), Failure> {
    match out {
        Some(path) => write_output(path, text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn read_report(path: &Path) -> Result<AuditReport, Failure> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display())).class(Class::Input)?;
    reporting::parse_report(&text).with_context(|| format!("parsing {}", path.display())).class(Class::Input)
}

fn read_metrics(path: &Path) -> Result<Vec<MetricsReport>, Failure> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display())).class(Class::Input)?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display())).class(Class::Input)
}

fn validate(args: ValidateArgs) -> Result<(), Failure> {
    let ids = ingest::discover_tasks(&args.root).class(Class::Input)?;
    let mut errors = 0usize;
    if let Err(e) = ingest::load_hints(&args.root) {
        println!("{:<32} error     {e}", ingest::HINTS_FILE);
        errors += 1;
    }
    let mut tiers: BTreeMap<InputTier, usize> = BTreeMap::new();
    for id in &ids {
        match ingest::load_task(&args.root, id) {
            Ok(bundle) => {
                *tiers.entry(bundle.tier).or_default() += 1;
                println!("{id:<32} {}", bundle.tier);
                for d in &bundle.diagnostics {
                    println!("{:<32}   note: {d}", "");
                }
            }
            Err(e) => {
                errors += 1;
                println!("{id:<32} error     {e}");
            }
        }
    }
    let summary: Vec<String> = tiers.iter().map(|(t, n)| format!("{n} {t}")).collect();
    println!("{} tasks ({}), {errors} with errors", ids.len(), summary.join(", "));
    if errors > 0 {
        return Err(fail(Class::Validation, anyhow!("{errors} structural error(s) under {}", args.root.display())));
    }
    Ok(())
}

struct Resolved {
    kind: TransportKind,
    fixtures: Option<PathBuf>,
    parallel: usize,
}

fn build_gateway(args: &TransportArgs, resolved: &Resolved, stub_default: &str) -> Result<Gateway, Failure> {
    let transport: Arc<dyn Transport> = match resolved.kind {
        TransportKind::Live => Arc::new(HttpTransport::new().class(Class::Gateway)?),
        TransportKind::Replay => {
            let dir = resolved
                .fixtures
                .clone()
                .ok_or_else(|| fail(Class::Input, anyhow!("--transport replay needs --fixtures DIR")))?;
            if !dir.is_dir() {
                return Err(fail(Class::Input, anyhow!("fixture directory {} does not exist", dir.display())));
            }
            Arc::new(ReplayTransport::new(FixtureStore::new(dir)))
        }
        TransportKind::Stub => match &args.stub_responses {
            Some(path) => Arc::new(StubTransport::from_file(path, stub_default).class(Class::Input)?),
            None => Arc::new(StubTransport::new(stub_default)),
        },
    };
    let gateway = Gateway::new(transport);
    Ok(match &args.record {
        Some(dir) => gateway.recording_to(FixtureStore::new(dir.clone())),
        None => gateway,
    })
}

fn resolve_transport(args: &TransportArgs, kind: Option<TransportKind>, fixtures: Option<&PathBuf>, parallel: Option<usize>) -> Result<Resolved, Failure> {
    let parallel = args.parallel.or(parallel).unwrap_or(1);
    if parallel == 0 {
        return Err(fail(Class::Input, anyhow!("--parallel must be at least 1")));
    }
    Ok(Resolved {
        kind: args.transport.or(kind).unwrap_or(TransportKind::Live),
        fixtures: args.fixtures.clone().or_else(|| fixtures.cloned()),
        parallel,
    })
}

fn load_templates(dir: Option<&Path>) -> Result<TemplateSet, Failure> {
    match dir {
        Some(dir) => TemplateSet::from_dir(dir).class(Class::Input),
        None => Ok(TemplateSet::builtin()),
    }
}

/// Explicit value, else SOURCE_DATE_EPOCH, else the wall clock for live runs only.
fn resolve_timestamp(explicit: Option<String>, live: bool) -> Result<Option<String>, Failure> {
    if let Some(ts) = explicit {
        chrono::DateTime::parse_from_rfc3339(&ts).with_context(|| format!("timestamp `{ts}`")).class(Class::Input)?;
        return Ok(Some(ts));
    }
    if let Ok(epoch) = std::env::var("SOURCE_DATE_EPOCH") {
        let secs: i64 = epoch.trim().parse().context("SOURCE_DATE_EPOCH").class(Class::Input)?;
        let at = chrono::DateTime::from_timestamp(secs, 0).ok_or_else(|| fail(Class::Input, anyhow!("SOURCE_DATE_EPOCH out of range")))?;
        return Ok(Some(at.to_rfc3339_opts(chrono::SecondsFormat::Secs, true)));
    }
    Ok(live.then(|| chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true)))
}

fn audit(args: AuditArgs, config: &FileConfig) -> Result<(), Failure> {
    let defaults = &config.audit;
    let model_name = args
        .model
        .clone()
        .or_else(|| defaults.model.clone())
        .ok_or_else(|| fail(Class::Input, anyhow!("no auditor model given (--model or [audit] model)")))?;
    let resolved = resolve_transport(&args.transport, defaults.transport, defaults.fixtures.as_ref(), defaults.parallel)?;

    let default_budget = ContextBudget::default();
    let budget = ContextBudget::new(
        args.max_chars_per_artifact.or(defaults.max_chars_per_artifact).unwrap_or(default_budget.max_chars_per_artifact),
        args.max_total_chars.or(defaults.max_total_chars).unwrap_or(default_budget.max_total_chars),
    )
    .class(Class::Input)?;
    let run_config = AuditRunConfig {
        tier_request: if args.with_agent_evidence { TierRequest::WithAgentEvidence } else { TierRequest::DefinitionOnly },
        parallelism: resolved.parallel,
        static_checks_enabled: !args.no_static_checks,
        budget,
        templates: load_templates(args.templates.as_deref().or(defaults.templates.as_deref()))?,
        ..AuditRunConfig::new(config.model(&model_name)?)
    };
    let generated_at = resolve_timestamp(args.timestamp.clone(), resolved.kind == TransportKind::Live)?;
    let options = RunOptions {
        task_filter: args.tasks.as_ref().map(|ids| ids.iter().cloned().collect::<BTreeSet<_>>()),
        resume_from: args.resume.as_deref().map(read_report).transpose()?,
        embed_bundles: args.embed_bundles,
        ..RunOptions::default()
    };

    let gateway = build_gateway(&args.transport, &resolved, STUB_AUDIT_DEFAULT)?;
    let mut report = run_audit_with(&args.root, &run_config, &gateway, &options).class(Class::Input)?;
    report.generated_at = generated_at;
    write_output(&args.out, &reporting::emit_json(&report))?;

    let t = &report.totals;
    eprintln!(
        "audited {} tasks: {} findings, {} suppressed, {} rejected, {} failed; {} gateway calls; cost ${}",
        t.tasks, t.findings, t.suppressed, t.rejected, t.failed_tasks, t.gateway_calls, t.cost
    );
    if t.failed_tasks > 0 {
        let ids: Vec<&str> = report.failures.iter().map(|f| f.task_id.as_str()).collect();
        return Err(fail(Class::Partial, anyhow!("{} task(s) failed: {}; rerun with --resume {}", ids.len(), ids.join(", "), args.out.display())));
    }
    Ok(())
}

fn align(args: AlignArgs, config: &FileConfig) -> Result<(), Failure> {
    let defaults = &config.align;
    let judge_name = args
        .judge
        .clone()
        .or_else(|| defaults.judge.clone())
        .ok_or_else(|| fail(Class::Input, anyhow!("no judge model given (--judge or [align] judge)")))?;
    let spec = config.model(&judge_name)?;
    let resolved = resolve_transport(&args.transport, defaults.transport, defaults.fixtures.as_ref(), defaults.parallel)?;

    let report = read_report(&args.report)?;
    let gold = alignment::load_gold(&args.gold).class(Class::Input)?;
    let cache = match args.cache.as_ref().or(defaults.cache.as_ref()) {
        Some(path) => VerdictCache::open(path).class(Class::Input)?,
        None => VerdictCache::in_memory(),
    };
    let templates = load_templates(args.templates.as_deref())?;
    let gateway = build_gateway(&args.transport, &resolved, STUB_JUDGE_DEFAULT)?;
    let judge = Judge { spec: &spec, templates: &templates, gateway: &gateway, cache: &cache };

    let findings: Vec<_> = report.findings().cloned().collect();
    let pool = rayon::ThreadPoolBuilder::new().num_threads(resolved.parallel).build().class(Class::Io)?;
    let matrix = pool
        .install(|| judge.judge_all(report.model_name(), &gold, &findings))
        .map_err(|e| {
            let class = if matches!(e, alignment::AlignmentError::Gateway { .. }) { Class::Gateway } else { Class::Io };
            fail(class, e.into())
        })?;
    let metrics = compute_metrics(&matrix, report.totals.findings, Some(report.totals.cost)).class(Class::Input)?;

    write_output(&args.out, &reporting::emit_metrics_json(std::slice::from_ref(&metrics)))?;
    if let Some(path) = &args.matrix_out {
        let text = serde_json::to_string_pretty(&matrix).context("serializing matrix").class(Class::Io)?;
        write_output(path, &(text + "\n"))?;
    }

    let cached = matrix.judgments.iter().filter(|j| j.cached).count();
    eprintln!("judged {} pairs: {} gateway calls, {} cached", matrix.judgments.len(), gateway.call_count(), cached);
    let precision = |p: Option<benchaudit_core::Percent>| p.map_or("---".to_string(), |p| p.to_string());
    println!(
        "{}: Recall_A {} Recall_AP {} Precision_A {} Precision_AP {}",
        metrics.auditor_model,
        metrics.recall_a,
        metrics.recall_ap,
        precision(metrics.precision_a),
        precision(metrics.precision_ap)
    );
    Ok(())
}

fn ensemble(args: EnsembleArgs) -> Result<(), Failure> {
    let mut models = Vec::new();
    for path in &args.metrics {
        models.extend(read_metrics(path)?);
    }
    let union = if models.len() > 1 { Some(ensemble_union(&models).class(Class::Input)?) } else { None };
    let vote = args.vote.map(|k| majority_vote(&models, k).map(|r| (k, r))).transpose().class(Class::Input)?;
    let column = match args.findings_column {
        ColumnArg::Total => FindingsColumn::Total,
        ColumnArg::Flagged => FindingsColumn::Flagged,
    };

    let vote_line = vote.map(|(k, (a, ap))| format!("Majority vote (k >= {k}): Recall_A {a}, Recall_AP {ap}"));
    let text = match args.format {
        TableFormat::Md => {
            let mut t = reporting::emit_metrics_markdown(&models, union.as_ref(), column);
            if let Some(line) = &vote_line {
                t.push_str(&format!("\n{line}\n"));
            }
            t
        }
        TableFormat::Csv => reporting::emit_metrics_csv(&models, union.as_ref(), column).class(Class::Io)?,
        TableFormat::Json => {
            let body = serde_json::json!({
                "models": models,
                "ensemble": union,
                "majority_vote": vote.map(|(k, (a, ap))| serde_json::json!({ "k": k, "recall_a": a, "recall_ap": ap })),
            });
            serde_json::to_string_pretty(&body).context("serializing table").class(Class::Io)? + "\n"
        }
    };
    match &args.out {
        Some(path) => {
            write_output(path, &text)?;
            if let Some(line) = vote_line {
                println!("{line}");
            }
        }
        None => print!("{text}"),
    }
    Ok(())
}

fn report(args: ReportArgs) -> Result<(), Failure> {
    let reports = args.inputs.iter().map(|p| read_report(p)).collect::<Result<Vec<_>, _>>()?;
    let refs: Vec<&AuditReport> = reports.iter().collect();
    let text = match (args.format, refs.as_slice()) {
        (TableFormat::Md, [one]) => reporting::emit_markdown(one),
        (TableFormat::Md, many) => reporting::distribution_table(many),
        (TableFormat::Json, [one]) => reporting::emit_json(one),
        (TableFormat::Json, _) => return Err(fail(Class::Input, anyhow!("--format json takes exactly one --in report"))),
        (TableFormat::Csv, all) => reporting::emit_findings_csv(all).class(Class::Io)?,
    };
    emit(args.out.as_deref(), &text)
}

fn serve(args: ServeArgs, config: &FileConfig) -> Result<(), Failure> {
    let bind = args.bind.or(config.serve.bind).unwrap_or_else(|| SocketAddr::from(([127, 0, 0, 1], 8765)));
    let serve_config = ServeConfig {
        report: args.report,
        log: args.log,
        metrics: args.metrics,
        ui_dir: args.ui.or_else(|| config.serve.ui.clone()),
        bind,
    };
    let runtime = tokio::runtime::Builder::new_multi_thread().enable_all().build().class(Class::Io)?;
    runtime
        .block_on(benchaudit_triage::serve(serve_config, |addr| eprintln!("triage service listening on http://{addr}")))
        .map_err(|e| {
            let class = match e {
                benchaudit_triage::TriageError::BindFailure { .. } => Class::Bind,
                benchaudit_triage::TriageError::Server(_) => Class::Io,
                _ => Class::Input,
            };
            fail(class, e.into())
        })
}
