//! Discovery and loading of benchmark tasks from the standard directory layout.
//!
//! ```text
//! benchmark_root/
//!   benchguard_hints.yaml      optional benchmark-level review hints
//!   <task_id>/
//!     task.toml                required (may be empty)
//!     instruction.md           required
//!     tests/                   required; test.sh loaded first
//!     solution/                optional; solve.sh loaded first
//!     environment/             optional; Dockerfile loaded first
//!     agent/                   optional; program.*, result.*, log.*
//!     domain_knowledge.md      optional
//!     data_description.md      optional
//! ```

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::{self, Read};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

pub const TASK_CONFIG_FILE: &str = "task.toml";
pub const INSTRUCTION_FILE: &str = "instruction.md";
pub const HINTS_FILE: &str = "benchguard_hints.yaml";
pub const DOMAIN_KNOWLEDGE_FILE: &str = "domain_knowledge.md";
pub const DATA_DESCRIPTION_FILE: &str = "data_description.md";

/// Bytes inspected for a NUL when deciding whether a file is binary.
pub const BINARY_SNIFF_BYTES: usize = 8 * 1024;
pub const DEFAULT_MAX_FILE_BYTES: usize = 1024 * 1024;
pub const TRUNCATION_MARKER: &str = "[TRUNCATED]";

const DEFAULT_BINARY_EXTENSIONS: &[&str] = &[
    "png", "jpg", "jpeg", "gif", "bmp", "tif", "tiff", "webp", "ico", "svgz", "pdf", "zip", "gz",
    "tgz", "bz2", "xz", "7z", "tar", "rar", "whl", "jar", "pkl", "pickle", "npy", "npz", "h5",
    "hdf5", "parquet", "feather", "so", "dylib", "dll", "exe", "bin", "pt", "pth", "onnx", "sqlite",
    "db",
];

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("benchmark root {0} does not exist")]
    RootNotFound(PathBuf),
    #[error("benchmark root {path} is not readable: {source}")]
    RootNotReadable { path: PathBuf, source: io::Error },
    #[error("task `{0}` not found (no {TASK_CONFIG_FILE})")]
    TaskNotFound(String),
    #[error("task `{0}`: missing or empty {INSTRUCTION_FILE}")]
    MissingInstruction(String),
    #[error("task `{0}`: missing tests/ directory or no readable test files")]
    MissingTests(String),
    #[error("task `{task_id}`: malformed {TASK_CONFIG_FILE} at line {line}, column {column}: {message}")]
    MalformedConfig { task_id: String, line: usize, column: usize, message: String },
    #[error("task `{task_id}`: invalid {TASK_CONFIG_FILE} value for `{key}`: {reason}")]
    InvalidConfig { task_id: String, key: String, reason: String },
    #[error("malformed {HINTS_FILE} at line {line}, column {column}: {message}")]
    MalformedHints { line: usize, column: usize, message: String },
    #[error("reading {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
}

impl IngestError {
    fn io(path: &Path, source: io::Error) -> Self {
        IngestError::Io { path: path.to_path_buf(), source }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VerifierMethod {
    Script,
    Judge,
    Mixed,
    #[default]
    Unknown,
}

/// Contents of `task.toml`. Every field is optional in the file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskConfig {
    pub id: Option<String>,
    pub category: Option<String>,
    pub expected_output: Option<String>,
    pub benchmark_source: Option<String>,
    pub verifier_method: VerifierMethod,
    pub runtime: Option<String>,
    pub cpus: u32,
    pub memory: String,
    pub agent_timeout_sec: f64,
    /// Keys this loader does not interpret, by dotted path (`metadata.author`).
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub extra: BTreeMap<String, Value>,
}

impl Default for TaskConfig {
    fn default() -> Self {
        TaskConfig {
            id: None,
            category: None,
            expected_output: None,
            benchmark_source: None,
            verifier_method: VerifierMethod::Unknown,
            runtime: None,
            cpus: 1,
            memory: "2G".to_string(),
            agent_timeout_sec: 1800.0,
            extra: BTreeMap::new(),
        }
    }
}

fn toml_to_json(v: &toml::Value) -> Value {
    match v {
        toml::Value::String(s) => Value::String(s.clone()),
        toml::Value::Integer(i) => Value::from(*i),
        toml::Value::Float(f) => serde_json::Number::from_f64(*f).map(Value::Number).unwrap_or(Value::Null),
        toml::Value::Boolean(b) => Value::Bool(*b),
        toml::Value::Datetime(d) => Value::String(d.to_string()),
        toml::Value::Array(a) => Value::Array(a.iter().map(toml_to_json).collect()),
        toml::Value::Table(t) => Value::Object(t.iter().map(|(k, v)| (k.clone(), toml_to_json(v))).collect()),
    }
}

fn line_col(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let column = before.rsplit('\n').next().map_or(0, |l| l.chars().count()) + 1;
    (line, column)
}

impl TaskConfig {
    /// Parses `task.toml` text. `task_id` is the directory name, used for
    /// error messages and the id-consistency check.
    pub fn parse(task_id: &str, text: &str) -> Result<TaskConfig, IngestError> {
        let mut table: toml::Table = toml::from_str(text).map_err(|e| {
            let (line, column) = e.span().map_or((1, 1), |s| line_col(text, s.start));
            IngestError::MalformedConfig {
                task_id: task_id.to_string(),
                line,
                column,
                message: e.message().to_string(),
            }
        })?;
        let invalid = |key: &str, reason: &str| IngestError::InvalidConfig {
            task_id: task_id.to_string(),
            key: key.to_string(),
            reason: reason.to_string(),
        };

        let mut cfg = TaskConfig::default();
        let mut section = |name: &str| -> Result<toml::Table, IngestError> {
            match table.remove(name) {
                None => Ok(toml::Table::new()),
                Some(toml::Value::Table(t)) => Ok(t),
                Some(_) => Err(invalid(name, "expected a table")),
            }
        };
        let mut metadata = section("metadata")?;
        let mut verifier = section("verifier")?;
        let mut environment = section("environment")?;
        let mut agent = section("agent")?;

        let string = |t: &mut toml::Table, sec: &str, key: &str| -> Result<Option<String>, IngestError> {
            match t.remove(key) {
                None => Ok(None),
                Some(toml::Value::String(s)) => Ok(Some(s)),
                Some(_) => Err(invalid(&format!("{sec}.{key}"), "expected a string")),
            }
        };

        cfg.id = string(&mut metadata, "metadata", "id")?;
        cfg.category = string(&mut metadata, "metadata", "category")?;
        cfg.expected_output = string(&mut metadata, "metadata", "expected_output")?;
        cfg.benchmark_source = string(&mut metadata, "metadata", "benchmark_source")?;
        if let Some(method) = string(&mut verifier, "verifier", "method")? {
            cfg.verifier_method = match method.to_ascii_lowercase().as_str() {
                "script" => VerifierMethod::Script,
                "judge" => VerifierMethod::Judge,
                "mixed" => VerifierMethod::Mixed,
                "unknown" => VerifierMethod::Unknown,
                _ => return Err(invalid("verifier.method", "expected one of script, judge, mixed, unknown")),
            };
        }
        cfg.runtime = string(&mut environment, "environment", "runtime")?;
        match environment.remove("cpus") {
            None => {}
            Some(toml::Value::Integer(n)) if n >= 1 && n <= u32::MAX as i64 => cfg.cpus = n as u32,
            Some(_) => return Err(invalid("environment.cpus", "expected an integer >= 1")),
        }
        if let Some(memory) = string(&mut environment, "environment", "memory")? {
            cfg.memory = memory;
        }
        match agent.remove("timeout_sec") {
            None => {}
            Some(toml::Value::Float(f)) if f > 0.0 && f.is_finite() => cfg.agent_timeout_sec = f,
            Some(toml::Value::Integer(n)) if n > 0 => cfg.agent_timeout_sec = n as f64,
            Some(_) => return Err(invalid("agent.timeout_sec", "expected a positive number of seconds")),
        }

        if let Some(id) = &cfg.id {
            if id != task_id {
                return Err(invalid("metadata.id", &format!("`{id}` does not match directory name `{task_id}`")));
            }
        }

        for (name, rest) in [("metadata", metadata), ("verifier", verifier), ("environment", environment), ("agent", agent)] {
            for (k, v) in rest {
                cfg.extra.insert(format!("{name}.{k}"), toml_to_json(&v));
            }
        }
        for (k, v) in table {
            cfg.extra.insert(k, toml_to_json(&v));
        }
        Ok(cfg)
    }
}

/// Diagnostic power of the inputs available for a task.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InputTier {
    /// Instruction and tests only.
    Minimal,
    /// Adds the gold program.
    Definition,
    /// Adds agent results.
    Execution,
}

impl std::fmt::Display for InputTier {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            InputTier::Minimal => "minimal",
            InputTier::Definition => "definition",
            InputTier::Execution => "execution",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Artifact {
    /// Path relative to the task directory, `/`-separated.
    pub path: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgentEvidence {
    pub agent_program: Artifact,
    pub evaluation_result: Option<Artifact>,
    pub evaluation_log: Option<Artifact>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskBundle {
    pub task_id: String,
    pub config: TaskConfig,
    pub instruction: String,
    pub test_artifacts: Vec<Artifact>,
    pub solution_artifacts: Vec<Artifact>,
    pub environment_artifacts: Vec<Artifact>,
    pub domain_knowledge: Option<String>,
    pub data_description: Option<String>,
    pub agent_evidence: Option<AgentEvidence>,
    pub tier: InputTier,
    #[serde(default)]
    pub diagnostics: Vec<String>,
}

impl TaskBundle {
    /// Looks up the text of an artifact by its task-relative path.
    pub fn artifact_text(&self, path: &str) -> Option<&str> {
        let path = path.trim_start_matches("./");
        match path {
            INSTRUCTION_FILE => return Some(&self.instruction),
            DOMAIN_KNOWLEDGE_FILE => return self.domain_knowledge.as_deref(),
            DATA_DESCRIPTION_FILE => return self.data_description.as_deref(),
            _ => {}
        }
        let agent = self.agent_evidence.iter().flat_map(|e| {
            std::iter::once(&e.agent_program).chain(e.evaluation_result.iter()).chain(e.evaluation_log.iter())
        });
        self.test_artifacts
            .iter()
            .chain(&self.solution_artifacts)
            .chain(&self.environment_artifacts)
            .chain(agent)
            .find(|a| a.path == path)
            .map(|a| a.text.as_str())
    }
}

/// Execution iff agent evidence is present; else Definition iff a gold
/// program is present; else Minimal.
pub fn classify_tier(bundle: &TaskBundle) -> InputTier {
    if bundle.agent_evidence.is_some() {
        InputTier::Execution
    } else if !bundle.solution_artifacts.is_empty() {
        InputTier::Definition
    } else {
        InputTier::Minimal
    }
}

/// Benchmark-level review guidance injected into audit prompts.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct HintSet {
    pub global_hints: Vec<String>,
}

impl HintSet {
    pub fn is_empty(&self) -> bool {
        self.global_hints.is_empty()
    }
}

#[derive(Debug, Clone)]
pub struct LoadOptions {
    /// Lower-case extensions (without the dot) always treated as binary.
    pub binary_extensions: BTreeSet<String>,
    pub max_file_bytes: usize,
}

impl Default for LoadOptions {
    fn default() -> Self {
        LoadOptions {
            binary_extensions: DEFAULT_BINARY_EXTENSIONS.iter().map(|s| s.to_string()).collect(),
            max_file_bytes: DEFAULT_MAX_FILE_BYTES,
        }
    }
}

/// Lists task directories under `root`: immediate subdirectories containing
/// `task.toml`, sorted by name.
pub fn discover_tasks(root: &Path) -> Result<Vec<String>, IngestError> {
    if !root.exists() {
        return Err(IngestError::RootNotFound(root.to_path_buf()));
    }
    let entries = fs::read_dir(root).map_err(|source| IngestError::RootNotReadable { path: root.to_path_buf(), source })?;
    let mut ids = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|source| IngestError::RootNotReadable { path: root.to_path_buf(), source })?;
        let path = entry.path();
        if path.is_dir() && path.join(TASK_CONFIG_FILE).is_file() {
            ids.push(entry.file_name().to_string_lossy().into_owned());
        }
    }
    ids.sort();
    Ok(ids)
}

enum FileText {
    Text { text: String, truncated: bool },
    Skipped(String),
}

fn read_text_file(path: &Path, rel: &str, opts: &LoadOptions, diagnostics: &mut Vec<String>) -> Result<Option<String>, IngestError> {
    match read_text(path, opts).map_err(|e| IngestError::io(path, e))? {
        FileText::Skipped(reason) => {
            diagnostics.push(format!("skipped {rel}: {reason}"));
            Ok(None)
        }
        FileText::Text { text, truncated } => {
            if truncated {
                diagnostics.push(format!("truncated {rel} to {} bytes", opts.max_file_bytes));
            }
            Ok(Some(text))
        }
    }
}

fn read_text(path: &Path, opts: &LoadOptions) -> io::Result<FileText> {
    if let Some(ext) = path.extension().and_then(|e| e.to_str()) {
        if opts.binary_extensions.contains(&ext.to_ascii_lowercase()) {
            return Ok(FileText::Skipped(format!("binary extension .{ext}")));
        }
    }
    let mut bytes = Vec::new();
    fs::File::open(path)?.take(opts.max_file_bytes as u64 + 1).read_to_end(&mut bytes)?;
    if bytes[..bytes.len().min(BINARY_SNIFF_BYTES)].contains(&0) {
        return Ok(FileText::Skipped("binary content (NUL byte)".to_string()));
    }
    let truncated = bytes.len() > opts.max_file_bytes;
    if truncated {
        bytes.truncate(opts.max_file_bytes);
    }
    let mut text = match String::from_utf8(bytes) {
        Ok(t) => t,
        Err(e) if truncated && e.utf8_error().error_len().is_none() => {
            // cut landed inside a multi-byte character
            let valid = e.utf8_error().valid_up_to();
            let mut b = e.into_bytes();
            b.truncate(valid);
            String::from_utf8(b).expect("prefix is valid")
        }
        Err(_) => return Ok(FileText::Skipped("not valid UTF-8".to_string())),
    };
    if truncated {
        text.push('\n');
        text.push_str(TRUNCATION_MARKER);
    }
    Ok(FileText::Text { text, truncated })
}

/// Loads one of `tests/`, `solution/`, `environment/`. The privileged file
/// comes first when present, then every other text file by byte-wise path order.
fn load_artifact_dir(
    task_dir: &Path,
    dir: &str,
    privileged: &str,
    opts: &LoadOptions,
    diagnostics: &mut Vec<String>,
) -> Result<Vec<Artifact>, IngestError> {
    let base = task_dir.join(dir);
    if !base.is_dir() {
        return Ok(Vec::new());
    }
    let mut files: Vec<(String, PathBuf)> = Vec::new();
    for entry in walkdir::WalkDir::new(&base).follow_links(false) {
        let entry = entry.map_err(|e| {
            let path = e.path().unwrap_or(&base).to_path_buf();
            IngestError::Io { path, source: e.into() }
        })?;
        if !entry.file_type().is_file() {
            continue;
        }
        let rel = entry.path().strip_prefix(task_dir).expect("walk stays under task dir");
        let rel = rel.components().map(|c| c.as_os_str().to_string_lossy()).collect::<Vec<_>>().join("/");
        files.push((rel, entry.path().to_path_buf()));
    }
    let privileged_path = format!("{dir}/{privileged}");
    files.sort_by(|(a, _), (b, _)| {
        (a != &privileged_path).cmp(&(b != &privileged_path)).then_with(|| a.as_bytes().cmp(b.as_bytes()))
    });
    let mut out = Vec::with_capacity(files.len());
    for (rel, path) in files {
        if let Some(text) = read_text_file(&path, &rel, opts, diagnostics)? {
            out.push(Artifact { path: rel, text });
        }
    }
    Ok(out)
}

fn read_optional_doc(task_dir: &Path, name: &str, opts: &LoadOptions, diagnostics: &mut Vec<String>) -> Result<Option<String>, IngestError> {
    let path = task_dir.join(name);
    if !path.is_file() {
        return Ok(None);
    }
    read_text_file(&path, name, opts, diagnostics)
}

fn load_agent_evidence(task_dir: &Path, opts: &LoadOptions, diagnostics: &mut Vec<String>) -> Result<Option<AgentEvidence>, IngestError> {
    let dir = task_dir.join("agent");
    if !dir.is_dir() {
        return Ok(None);
    }
    let mut names: Vec<String> = fs::read_dir(&dir)
        .map_err(|e| IngestError::io(&dir, e))?
        .filter_map(|e| e.ok())
        .filter(|e| e.path().is_file())
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .collect();
    names.sort();
    let mut pick = |stem: &str| -> Result<Option<Artifact>, IngestError> {
        for name in names.iter().filter(|n| n.split('.').next() == Some(stem)) {
            let rel = format!("agent/{name}");
            if let Some(text) = read_text_file(&dir.join(name), &rel, opts, diagnostics)? {
                return Ok(Some(Artifact { path: rel, text }));
            }
        }
        Ok(None)
    };
    let program = pick("program")?;
    let evaluation_result = pick("result")?;
    let evaluation_log = pick("log")?;
    match program {
        Some(p) if !p.text.trim().is_empty() => Ok(Some(AgentEvidence { agent_program: p, evaluation_result, evaluation_log })),
        _ => {
            diagnostics.push("agent/ present but no non-empty program.* file; agent evidence ignored".to_string());
            Ok(None)
        }
    }
}

pub fn load_task(root: &Path, task_id: &str) -> Result<TaskBundle, IngestError> {
    load_task_with(root, task_id, &LoadOptions::default())
}

pub fn load_task_with(root: &Path, task_id: &str, opts: &LoadOptions) -> Result<TaskBundle, IngestError> {
    let task_dir = root.join(task_id);
    let config_path = task_dir.join(TASK_CONFIG_FILE);
    if !config_path.is_file() {
        return Err(IngestError::TaskNotFound(task_id.to_string()));
    }
    let config_text = fs::read_to_string(&config_path).map_err(|e| IngestError::io(&config_path, e))?;
    let config = TaskConfig::parse(task_id, &config_text)?;

    let mut diagnostics = Vec::new();
    let instruction_path = task_dir.join(INSTRUCTION_FILE);
    let instruction = if instruction_path.is_file() {
        read_text_file(&instruction_path, INSTRUCTION_FILE, opts, &mut diagnostics)?
    } else {
        None
    };
    let instruction = instruction
        .filter(|t| !t.trim().is_empty())
        .ok_or_else(|| IngestError::MissingInstruction(task_id.to_string()))?;

    let test_artifacts = load_artifact_dir(&task_dir, "tests", "test.sh", opts, &mut diagnostics)?;
    if test_artifacts.is_empty() {
        return Err(IngestError::MissingTests(task_id.to_string()));
    }
    let solution_artifacts = load_artifact_dir(&task_dir, "solution", "solve.sh", opts, &mut diagnostics)?;
    let environment_artifacts = load_artifact_dir(&task_dir, "environment", "Dockerfile", opts, &mut diagnostics)?;
    let domain_knowledge = read_optional_doc(&task_dir, DOMAIN_KNOWLEDGE_FILE, opts, &mut diagnostics)?;
    let data_description = read_optional_doc(&task_dir, DATA_DESCRIPTION_FILE, opts, &mut diagnostics)?;
    let agent_evidence = load_agent_evidence(&task_dir, opts, &mut diagnostics)?;

    let mut bundle = TaskBundle {
        task_id: task_id.to_string(),
        config,
        instruction,
        test_artifacts,
        solution_artifacts,
        environment_artifacts,
        domain_knowledge,
        data_description,
        agent_evidence,
        tier: InputTier::Minimal,
        diagnostics,
    };
    bundle.tier = classify_tier(&bundle);
    Ok(bundle)
}

#[derive(Deserialize)]
struct HintsDoc {
    #[serde(default)]
    hints: Vec<String>,
}

/// Reads `benchguard_hints.yaml` at the benchmark root; an absent file yields
/// an empty set.
pub fn load_hints(root: &Path) -> Result<HintSet, IngestError> {
    let path = root.join(HINTS_FILE);
    if !path.is_file() {
        return Ok(HintSet::default());
    }
    let text = fs::read_to_string(&path).map_err(|e| IngestError::io(&path, e))?;
    parse_hints(&text)
}

pub fn parse_hints(text: &str) -> Result<HintSet, IngestError> {
    if text.trim().is_empty() {
        return Ok(HintSet::default());
    }
    let doc: HintsDoc = serde_yaml::from_str(text).map_err(|e| {
        let (line, column) = e.location().map_or((0, 0), |l| (l.line(), l.column()));
        IngestError::MalformedHints { line, column, message: e.to_string() }
    })?;
    Ok(HintSet {
        global_hints: doc.hints.into_iter().filter(|h| !h.trim().is_empty()).collect(),
    })
}
