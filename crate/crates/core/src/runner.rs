//! Sequential evaluation protocol, agent adapters, graders and report files.
//!
//! For a sequence of `N` tasks the runner first measures every task once with
//! memory disabled (row 0 of the matrix). Then, for each step `i`:
//!
//! 1. attempt task `i` with retrieved context, giving `a[i,i]`;
//! 2. store the experience;
//! 3. re-run tasks `j < i` (every step, or only at the last one), giving `a[i,j]`;
//! 4. probe task `i + 1`, giving `a[i,i+1]`.
//!
//! Re-evaluations use the full current memory minus the task's own record.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::dataset::{ClDataset, ClTask, LearningSequence};
use crate::diff::parse_unified_diff;
use crate::drift::task_prompt;
use crate::gateway::{ChatModel, Embedder, GatewayConfig, GenerationParams};
use crate::memory::{
    format_context, CharsPerFour, ExperienceRecord, MemoryStore, Query, RetrievalConfig,
};
use crate::metrics::{
    evaluate, success_rate, AttemptTiming, MetricsError, MetricsReport, PerformanceMatrix,
    RunTimings, ScoreWeights,
};
use crate::similarity::{jaccard, tokenize};

#[derive(Debug, Error)]
pub enum RunError {
    #[error("no results for task `{task_id}`{}", .test_id.as_ref().map(|t| format!(", test `{t}`")).unwrap_or_default())]
    MissingResults {
        task_id: String,
        test_id: Option<String>,
    },
    #[error("agent infrastructure failure on `{task_id}`: {message}")]
    Infrastructure { task_id: String, message: String },
    #[error("invalid run configuration: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Memory(#[from] crate::memory::MemoryError),
    #[error("malformed results file: {0}")]
    Results(String),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> RunError + '_ {
    move |source| RunError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReevalPolicy {
    #[default]
    AfterEveryTask,
    FinalOnly,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentKind {
    /// Submits the gold patch.
    #[default]
    Gold,
    /// Submits nothing.
    Null,
    /// Asks the configured chat model for a patch.
    Llm,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GraderKind {
    IngestResults,
    /// Token-Jaccard between produced and gold patch. A smoke test, not a
    /// substitute for running the tests.
    #[default]
    PatchSimilarity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GraderConfig {
    pub kind: GraderKind,
    pub results_path: Option<PathBuf>,
    pub threshold: f64,
}

impl Default for GraderConfig {
    fn default() -> Self {
        Self {
            kind: GraderKind::PatchSimilarity,
            results_path: None,
            threshold: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub dataset: Option<PathBuf>,
    /// Repositories to run; empty runs every sequence.
    pub sequences: Vec<String>,
    pub agent: AgentKind,
    pub memory_enabled: bool,
    pub k_memories: usize,
    pub max_context_tokens: usize,
    pub retrieval: RetrievalConfig,
    pub reeval_policy: ReevalPolicy,
    pub grader: GraderConfig,
    pub gateway: GatewayConfig,
    pub output_dir: Option<PathBuf>,
    pub seed: u64,
    pub weights: ScoreWeights,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            dataset: None,
            sequences: Vec::new(),
            agent: AgentKind::Gold,
            memory_enabled: true,
            k_memories: 3,
            max_context_tokens: 2048,
            retrieval: RetrievalConfig::default(),
            reeval_policy: ReevalPolicy::AfterEveryTask,
            grader: GraderConfig::default(),
            gateway: GatewayConfig::default(),
            output_dir: None,
            seed: 0,
            weights: ScoreWeights::default(),
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), RunError> {
        if !(0.0..=1.0).contains(&self.grader.threshold) {
            return Err(RunError::Config(format!(
                "grader threshold {} is outside [0, 1]",
                self.grader.threshold
            )));
        }
        if self.grader.kind == GraderKind::IngestResults && self.grader.results_path.is_none() {
            return Err(RunError::Config(
                "ingest_results grader needs grader.results_path".into(),
            ));
        }
        self.weights
            .validate()
            .map_err(|e| RunError::Config(e.to_string()))?;
        self.gateway
            .validate()
            .map_err(|e| RunError::Config(e.to_string()))
    }

    /// SHA-256 of the configuration with file-system paths removed, so the
    /// same settings give the same digest wherever they run.
    pub fn digest(&self) -> String {
        let mut clean = self.clone();
        clean.dataset = None;
        clean.output_dir = None;
        clean.grader.results_path = None;
        crate::sha256_hex(
            serde_json::to_string(&clean)
                .expect("config serializes")
                .as_bytes(),
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    ZeroShot,
    Learn,
    Reeval,
    Probe,
}

/// Where an attempt sits in the protocol.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AttemptContext {
    /// Matrix row: 0 for zero-shot, otherwise the current step.
    pub step: usize,
    /// Matrix column: the attempted task's position.
    pub position: usize,
    pub phase: Phase,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperienceSummary {
    pub problem: String,
    pub solution: String,
    pub rationale: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Submission {
    pub patch: String,
    pub duration_seconds: f64,
    pub tool_calls: u32,
    pub summary: Option<ExperienceSummary>,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AgentError {
    /// The attempt failed; it is scored 0 and the run continues.
    #[error("{0}")]
    Attempt(String),
    /// The environment is broken; the run stops.
    #[error("{0}")]
    Infrastructure(String),
}

pub trait Agent {
    fn name(&self) -> &str;
    fn solve(
        &mut self,
        task: &ClTask,
        context: &str,
        at: AttemptContext,
    ) -> Result<Submission, AgentError>;
}

/// Deterministic stand-in for work time: proportional to patch size.
fn scripted_duration(patch: &str) -> f64 {
    1.0 + patch.lines().count() as f64 * 0.01
}

#[derive(Debug, Default)]
pub struct GoldPatchAgent;

impl Agent for GoldPatchAgent {
    fn name(&self) -> &str {
        "gold"
    }

    fn solve(&mut self, task: &ClTask, _: &str, _: AttemptContext) -> Result<Submission, AgentError> {
        Ok(Submission {
            patch: task.base.patch.clone(),
            duration_seconds: scripted_duration(&task.base.patch),
            tool_calls: 1,
            summary: None,
        })
    }
}

#[derive(Debug, Default)]
pub struct NullAgent;

impl Agent for NullAgent {
    fn name(&self) -> &str {
        "null"
    }

    fn solve(&mut self, _: &ClTask, _: &str, _: AttemptContext) -> Result<Submission, AgentError> {
        Ok(Submission {
            patch: String::new(),
            duration_seconds: scripted_duration(""),
            tool_calls: 0,
            summary: None,
        })
    }
}

/// One chat call per attempt with the patch-generation prompt.
pub struct LlmAgent<'a> {
    pub chat: &'a dyn ChatModel,
    pub params: GenerationParams,
}

/// Pulls a unified diff out of a model answer: a `<patch>` block, a fenced
/// block, or everything from the first diff header on.
pub fn extract_patch(answer: &str) -> String {
    if let Some(start) = answer.find("<patch>") {
        let body = &answer[start + "<patch>".len()..];
        let end = body.find("</patch>").unwrap_or(body.len());
        return body[..end].trim_matches('\n').to_string() + "\n";
    }
    for fence in ["```diff", "```patch", "```"] {
        if let Some(start) = answer.find(fence) {
            let body = &answer[start + fence.len()..];
            let body = body.strip_prefix('\n').unwrap_or(body);
            if let Some(end) = body.find("```") {
                return body[..end].to_string();
            }
        }
    }
    let start = ["diff --git", "--- "]
        .iter()
        .filter_map(|m| {
            if answer.starts_with(m) {
                Some(0)
            } else {
                answer.find(&format!("\n{m}")).map(|p| p + 1)
            }
        })
        .min();
    match start {
        Some(p) => answer[p..].to_string(),
        None => String::new(),
    }
}

impl Agent for LlmAgent<'_> {
    fn name(&self) -> &str {
        "llm"
    }

    fn solve(&mut self, task: &ClTask, context: &str, _: AttemptContext) -> Result<Submission, AgentError> {
        use crate::gateway::GatewayError as G;
        let prompt = task_prompt(task, context);
        match self.chat.generate(&prompt, &self.params) {
            Ok(r) => Ok(Submission {
                patch: extract_patch(&r.text),
                duration_seconds: r.latency_seconds.max(1e-6),
                tool_calls: 1,
                summary: None,
            }),
            Err(e @ (G::Auth { .. } | G::Config(_))) => Err(AgentError::Infrastructure(e.to_string())),
            Err(e) => Err(AgentError::Attempt(e.to_string())),
        }
    }
}

pub trait Grader {
    /// `(pass_count, total_count)` for one submission.
    fn grade(
        &self,
        submission: &Submission,
        task: &ClTask,
        at: AttemptContext,
    ) -> Result<(u64, u64), RunError>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TestOutcome {
    Pass,
    Fail,
}

/// Counts passes over `FAIL_TO_PASS ∪ PASS_TO_PASS` from an external results
/// file `{task_id: {test_id: "pass" | "fail"}}`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct IngestResults {
    pub results: BTreeMap<String, BTreeMap<String, TestOutcome>>,
}

impl IngestResults {
    pub fn from_json(text: &str) -> Result<Self, RunError> {
        serde_json::from_str(text).map_err(|e| RunError::Results(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, RunError> {
        Self::from_json(&fs::read_to_string(path).map_err(io_err(path))?)
    }
}

impl Grader for IngestResults {
    fn grade(&self, _: &Submission, task: &ClTask, _: AttemptContext) -> Result<(u64, u64), RunError> {
        let per_test = self
            .results
            .get(task.id())
            .ok_or_else(|| RunError::MissingResults {
                task_id: task.id().to_string(),
                test_id: None,
            })?;
        let tests: BTreeSet<&str> = task.base.all_tests().into_iter().collect();
        let mut pass = 0;
        for test in &tests {
            match per_test.get(*test) {
                Some(TestOutcome::Pass) => pass += 1,
                Some(TestOutcome::Fail) => {}
                None => {
                    return Err(RunError::MissingResults {
                        task_id: task.id().to_string(),
                        test_id: Some(test.to_string()),
                    })
                }
            }
        }
        Ok((pass, tests.len() as u64))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PatchSimilarity {
    pub threshold: f64,
}

fn normalize_patch(patch: &str) -> String {
    patch
        .replace("\r\n", "\n")
        .lines()
        .map(str::trim_end)
        .collect::<Vec<_>>()
        .join("\n")
}

impl Grader for PatchSimilarity {
    fn grade(&self, submission: &Submission, task: &ClTask, _: AttemptContext) -> Result<(u64, u64), RunError> {
        if submission.patch.trim().is_empty() {
            return Ok((0, 1));
        }
        let produced = tokenize(&normalize_patch(&submission.patch));
        let gold = tokenize(&normalize_patch(&task.base.patch));
        Ok((u64::from(jaccard(&produced, &gold) >= self.threshold), 1))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttemptResult {
    pub step: usize,
    pub phase: Phase,
    pub task_id: String,
    pub produced_patch: String,
    pub pass_count: u64,
    pub total_count: u64,
    pub success: bool,
    pub duration_seconds: f64,
    pub tool_calls: u32,
    pub retrieved: Vec<String>,
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunArtifacts {
    pub repo: String,
    pub matrix: PerformanceMatrix,
    pub timings: RunTimings,
    pub attempts: Vec<AttemptResult>,
    pub memory: Option<MemoryStore>,
    pub retrieval_calls: u64,
}

struct Runner<'a> {
    cfg: &'a RunConfig,
    repo: &'a str,
    agent: &'a mut dyn Agent,
    grader: &'a dyn Grader,
    embedder: &'a dyn Embedder,
    memory: Option<MemoryStore>,
    query_cache: BTreeMap<String, Vec<f64>>,
    retrieval_calls: u64,
    attempts: Vec<AttemptResult>,
}

/// Text embedded to look up memories for a task.
pub fn query_text(task: &ClTask) -> String {
    match task.base.hints_text.as_deref().filter(|h| !h.trim().is_empty()) {
        Some(h) => format!("{}\n\n{}", task.base.problem_statement, h),
        None => task.base.problem_statement.clone(),
    }
}

fn summary_for(task: &ClTask, result: &AttemptResult) -> ExperienceSummary {
    let problem: String = task.base.problem_statement.trim().chars().take(400).collect();
    let files = parse_unified_diff(&result.produced_patch)
        .map(|d| d.modified_files().into_iter().collect::<Vec<_>>().join(", "))
        .unwrap_or_default();
    let solution = if result.produced_patch.trim().is_empty() {
        "No patch was produced.".to_string()
    } else if files.is_empty() {
        "Produced a patch that could not be parsed.".to_string()
    } else {
        format!("Patched {files}.")
    };
    ExperienceSummary {
        problem: if problem.is_empty() { task.id().to_string() } else { problem },
        solution,
        rationale: format!(
            "{} of {} tests passed.",
            result.pass_count, result.total_count
        ),
    }
}

impl Runner<'_> {
    fn query_vector(&mut self, task: &ClTask) -> Result<Vec<f64>, RunError> {
        if let Some(v) = self.query_cache.get(task.id()) {
            return Ok(v.clone());
        }
        let v = self
            .embedder
            .embed(&query_text(task))
            .map_err(|e| RunError::Infrastructure {
                task_id: task.id().to_string(),
                message: e.to_string(),
            })?
            .vector;
        self.query_cache.insert(task.id().to_string(), v.clone());
        Ok(v)
    }

    fn context_for(&mut self, task: &ClTask, use_memory: bool) -> Result<(String, Vec<String>), RunError> {
        if !use_memory || !self.cfg.memory_enabled || self.cfg.k_memories == 0 {
            return Ok((String::new(), Vec::new()));
        }
        let v = self.query_vector(task)?;
        let Some(store) = self.memory.as_ref() else {
            return Ok((String::new(), Vec::new()));
        };
        self.retrieval_calls += 1;
        let hits = store.retrieve(&Query {
            embedding: &v,
            k: self.cfg.k_memories,
            current_sequence: self.repo,
            exclude_task: Some(task.id()),
        })?;
        let text = format_context(&hits, self.cfg.max_context_tokens, &CharsPerFour);
        let shown = text.matches("### Memory").count();
        let ids = hits.iter().take(shown).map(|h| h.record.task_id.clone()).collect();
        Ok((text, ids))
    }

    fn attempt(
        &mut self,
        task: &ClTask,
        at: AttemptContext,
    ) -> Result<(AttemptResult, Option<ExperienceSummary>), RunError> {
        let (context, retrieved) = self.context_for(task, at.phase != Phase::ZeroShot)?;
        let (result, summary) = match self.agent.solve(task, &context, at) {
            Ok(sub) => {
                let (pass_count, total_count) = self.grader.grade(&sub, task, at)?;
                (
                    AttemptResult {
                        step: at.step,
                        phase: at.phase,
                        task_id: task.id().to_string(),
                        produced_patch: sub.patch.clone(),
                        pass_count,
                        total_count,
                        success: pass_count == total_count,
                        duration_seconds: sub.duration_seconds,
                        tool_calls: sub.tool_calls,
                        retrieved,
                        note: None,
                    },
                    sub.summary,
                )
            }
            Err(AgentError::Infrastructure(message)) => {
                return Err(RunError::Infrastructure {
                    task_id: task.id().to_string(),
                    message,
                })
            }
            Err(AgentError::Attempt(message)) => {
                log::warn!("agent failed on {}: {message}", task.id());
                (
                    AttemptResult {
                        step: at.step,
                        phase: at.phase,
                        task_id: task.id().to_string(),
                        produced_patch: String::new(),
                        pass_count: 0,
                        total_count: task.base.all_tests().len().max(1) as u64,
                        success: false,
                        duration_seconds: scripted_duration(""),
                        tool_calls: 0,
                        retrieved,
                        note: Some(format!("agent failure: {message}")),
                    },
                    None,
                )
            }
        };
        self.attempts.push(result.clone());
        Ok((result, summary))
    }

    fn rate(&mut self, task: &ClTask, at: AttemptContext) -> Result<f64, RunError> {
        let (r, _) = self.attempt(task, at)?;
        Ok(success_rate(r.pass_count, r.total_count)?)
    }

    fn store(
        &mut self,
        task: &ClTask,
        step: usize,
        result: &AttemptResult,
        summary: Option<ExperienceSummary>,
    ) -> Result<(), RunError> {
        if !self.cfg.memory_enabled {
            return Ok(());
        }
        let embedding = self.query_vector(task)?;
        let summary = summary.unwrap_or_else(|| summary_for(task, result));
        let store = self.memory.get_or_insert_with(|| {
            MemoryStore::with_config(embedding.len(), self.cfg.retrieval)
        });
        store.add_experience(ExperienceRecord {
            task_id: task.id().to_string(),
            sequence_id: self.repo.to_string(),
            problem_summary: summary.problem,
            solution_summary: summary.solution,
            rationale_summary: summary.rationale,
            tool_stats: BTreeMap::from([("submit_patch".to_string(), result.tool_calls)]),
            success: result.success,
            embedding,
            created_at_step: step as u64,
        })?;
        Ok(())
    }
}

/// Runs the protocol over one sequence.
pub fn run_sequence(
    seq: &LearningSequence,
    agent: &mut dyn Agent,
    grader: &dyn Grader,
    embedder: &dyn Embedder,
    cfg: &RunConfig,
) -> Result<RunArtifacts, RunError> {
    let tasks = &seq.tasks;
    let n = tasks.len();
    let mut matrix = PerformanceMatrix::new(tasks.iter().map(|t| t.id().to_string()).collect());
    let mut runner = Runner {
        cfg,
        repo: &seq.repo,
        agent,
        grader,
        embedder,
        memory: None,
        query_cache: BTreeMap::new(),
        retrieval_calls: 0,
        attempts: Vec::new(),
    };
    let mut timings = RunTimings::default();

    for (idx, task) in tasks.iter().enumerate() {
        let at = AttemptContext { step: 0, position: idx + 1, phase: Phase::ZeroShot };
        let v = runner.rate(task, at)?;
        matrix.set_zero_shot(idx + 1, v)?;
    }

    for i in 1..=n {
        let task = &tasks[i - 1];
        let at = AttemptContext { step: i, position: i, phase: Phase::Learn };
        let (result, summary) = runner.attempt(task, at)?;
        matrix.set(i, i, success_rate(result.pass_count, result.total_count)?)?;
        timings.attempts.push(AttemptTiming {
            task_id: result.task_id.clone(),
            duration_seconds: result.duration_seconds,
            success: result.success,
            tool_calls: result.tool_calls,
        });
        runner.store(task, i, &result, summary)?;

        if cfg.reeval_policy == ReevalPolicy::AfterEveryTask || i == n {
            for j in 1..i {
                let at = AttemptContext { step: i, position: j, phase: Phase::Reeval };
                let v = runner.rate(&tasks[j - 1], at)?;
                matrix.set(i, j, v)?;
            }
        }
        if i < n {
            let at = AttemptContext { step: i, position: i + 1, phase: Phase::Probe };
            let v = runner.rate(&tasks[i], at)?;
            matrix.set(i, i + 1, v)?;
        }
    }

    if cfg.reeval_policy == ReevalPolicy::AfterEveryTask {
        matrix.validate_complete()?;
    }
    Ok(RunArtifacts {
        repo: seq.repo.clone(),
        matrix,
        timings,
        attempts: runner.attempts,
        retrieval_calls: runner.retrieval_calls,
        memory: runner.memory,
    })
}

/// Builds the configured agent and grader, then runs every selected sequence.
pub fn run_dataset(dataset: &ClDataset, cfg: &RunConfig) -> Result<Vec<RunArtifacts>, RunError> {
    cfg.validate()?;
    let selected: Vec<&LearningSequence> = if cfg.sequences.is_empty() {
        dataset.sequences.iter().collect()
    } else {
        cfg.sequences
            .iter()
            .map(|repo| {
                dataset
                    .sequence(repo)
                    .ok_or_else(|| RunError::Config(format!("no sequence for repo `{repo}`")))
            })
            .collect::<Result<_, _>>()?
    };
    let grader: Box<dyn Grader> = match cfg.grader.kind {
        GraderKind::PatchSimilarity => Box::new(PatchSimilarity {
            threshold: cfg.grader.threshold,
        }),
        GraderKind::IngestResults => Box::new(IngestResults::load(
            cfg.grader.results_path.as_deref().expect("validated"),
        )?),
    };
    let cfg_err = |e: crate::gateway::GatewayError| RunError::Config(e.to_string());
    let embedder = cfg.gateway.embedder().map_err(cfg_err)?;
    let chat = cfg.gateway.chat_model().map_err(cfg_err)?;
    let params = GenerationParams {
        seed: Some(cfg.seed),
        ..cfg.gateway.generation_params()
    };
    selected
        .into_iter()
        .map(|seq| {
            let mut agent: Box<dyn Agent + '_> = match cfg.agent {
                AgentKind::Gold => Box::new(GoldPatchAgent),
                AgentKind::Null => Box::new(NullAgent),
                AgentKind::Llm => Box::new(LlmAgent {
                    chat: chat.as_ref(),
                    params: params.clone(),
                }),
            };
            run_sequence(seq, agent.as_mut(), grader.as_ref(), embedder.as_ref(), cfg)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReportProvenance {
    pub config_digest: String,
    pub seed: u64,
}

impl ReportProvenance {
    pub fn of(cfg: &RunConfig) -> Self {
        Self {
            config_digest: cfg.digest(),
            seed: cfg.seed,
        }
    }

    pub fn comment(&self) -> String {
        format!("config_digest={} seed={}", self.config_digest, self.seed)
    }
}

fn write(path: &Path, contents: &str) -> Result<PathBuf, RunError> {
    fs::write(path, contents).map_err(io_err(path))?;
    Ok(path.to_path_buf())
}

fn with_provenance(prov: &ReportProvenance, body: Value) -> String {
    let mut obj = serde_json::Map::new();
    obj.insert("provenance".into(), json!(prov));
    match body {
        Value::Object(map) => obj.extend(map),
        other => {
            obj.insert("data".into(), other);
        }
    }
    serde_json::to_string_pretty(&Value::Object(obj)).expect("json") + "\n"
}

/// Directory-safe name for a repository.
pub fn repo_dir_name(repo: &str) -> String {
    repo.chars()
        .map(|c| if c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.') { c } else { '_' })
        .collect()
}

/// Writes one run's files into `dir`: matrix (JSON, CSV), metrics (JSON,
/// Markdown), timings, attempt log and memory snapshot.
pub fn emit_reports(
    run: &RunArtifacts,
    weights: &ScoreWeights,
    prov: &ReportProvenance,
    dir: &Path,
) -> Result<Vec<PathBuf>, RunError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let report = evaluate(&run.matrix, Some(&run.timings), weights)?;
    let mut files = vec![
        write(
            &dir.join("matrix.json"),
            &with_provenance(prov, json!(run.matrix.to_file())),
        )?,
        write(
            &dir.join("matrix.csv"),
            &format!("# {}\n{}", prov.comment(), run.matrix.to_csv()),
        )?,
        write(
            &dir.join("metrics.json"),
            &with_provenance(prov, json!({ "repo": run.repo, "metrics": report })),
        )?,
        write(
            &dir.join("metrics.md"),
            &format!(
                "<!-- {} -->\n# Continual-learning metrics: {}\n\n{}",
                prov.comment(),
                run.repo,
                report.to_markdown()
            ),
        )?,
        write(
            &dir.join("timings.json"),
            &with_provenance(prov, json!(run.timings)),
        )?,
        write(
            &dir.join("attempts.json"),
            &with_provenance(prov, json!({ "attempts": run.attempts })),
        )?,
    ];
    if let Some(store) = &run.memory {
        let snapshot: Value = serde_json::from_str(&store.to_json()).expect("store json");
        files.push(write(
            &dir.join("memory.json"),
            &with_provenance(prov, json!({ "store": snapshot })),
        )?);
    }
    Ok(files)
}

/// Per-metric mean over sequences.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub sequences: Vec<(String, MetricsReport)>,
    pub mean: BTreeMap<String, Option<f64>>,
}

pub fn summarize(runs: &[RunArtifacts], weights: &ScoreWeights) -> Result<RunSummary, RunError> {
    let mut sequences = Vec::new();
    for run in runs {
        sequences.push((run.repo.clone(), evaluate(&run.matrix, Some(&run.timings), weights)?));
    }
    type Pick = fn(&MetricsReport) -> Option<f64>;
    let pick: [(&str, Pick); 12] = [
        ("SR", |r| r.sr_mean),
        ("ACC", |r| r.acc),
        ("F", |r| r.f),
        ("FT", |r| r.ft),
        ("BWT", |r| r.bwt),
        ("AULC", |r| r.aulc),
        ("TUE", |r| r.tue),
        ("CL-P", |r| r.cl_p),
        ("CL-S", |r| r.cl_s),
        ("CL-F1", |r| r.cl_f1),
        ("CL-Fβ", |r| r.cl_f_beta),
        ("CL-Score", |r| r.cl_score),
    ];
    let mean = pick
        .iter()
        .map(|(name, f)| {
            let values: Option<Vec<f64>> = sequences.iter().map(|(_, r)| f(r)).collect();
            let m = values
                .filter(|v| !v.is_empty())
                .map(|v| crate::drift::stable_mean(&v));
            (name.to_string(), m)
        })
        .collect();
    Ok(RunSummary { sequences, mean })
}

/// Writes each run under `out/<repo>/` and `summary.json` at the top.
pub fn emit_all(runs: &[RunArtifacts], cfg: &RunConfig, out: &Path) -> Result<Vec<PathBuf>, RunError> {
    let prov = ReportProvenance::of(cfg);
    let mut files = Vec::new();
    for run in runs {
        files.extend(emit_reports(run, &cfg.weights, &prov, &out.join(repo_dir_name(&run.repo)))?);
    }
    let summary = summarize(runs, &cfg.weights)?;
    files.push(write(
        &out.join("summary.json"),
        &with_provenance(&prov, json!(summary)),
    )?);
    Ok(files)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::DifficultyTier::*;
    use crate::drift::tests::task;
    use crate::gateway::MockEmbedder;
    use crate::metrics::composite_score;

    fn seq(n: usize) -> LearningSequence {
        let tasks: Vec<ClTask> = (1..=n)
            .map(|i| {
                let mut t = task(&format!("o__r-{i}"), "o/r", Easy, &[&format!("f{i}.py")]);
                t.continual_learning.sequence_position = i - 1;
                t.base.fail_to_pass = vec![format!("test_{i}")];
                t.base.pass_to_pass = vec!["test_common".into()];
                t
            })
            .collect();
        LearningSequence {
            statistics: crate::sequence::sequence_stats("o/r", &tasks),
            repo: "o/r".into(),
            tasks,
        }
    }

    fn cfg() -> RunConfig {
        RunConfig::default()
    }

    fn run(agent: &mut dyn Agent, cfg: &RunConfig) -> RunArtifacts {
        let grader = PatchSimilarity { threshold: 0.9 };
        run_sequence(&seq(4), agent, &grader, &MockEmbedder::new(16), cfg).unwrap()
    }

    #[test]
    fn gold_agent_is_perfect() {
        let out = run(&mut GoldPatchAgent, &cfg());
        let r = composite_score(&out.matrix, Some(&out.timings), &ScoreWeights::default()).unwrap();
        assert_eq!(r.acc, Some(1.0));
        assert_eq!(r.f, Some(0.0));
        assert_eq!(r.tue, Some(1.0));
        assert!(out.matrix.validate_complete().is_ok());
        let store = out.memory.as_ref().unwrap();
        assert_eq!(store.len(), 4);
        assert_eq!(out.retrieval_calls, store.retrieval_count());
        assert!(out.retrieval_calls > 0);
    }

    #[test]
    fn null_agent_scores_zero() {
        let out = run(&mut NullAgent, &cfg());
        let r = evaluate(&out.matrix, Some(&out.timings), &ScoreWeights::default()).unwrap();
        assert_eq!(r.acc, Some(0.0));
        assert_eq!(r.ft, Some(0.0));
        assert_eq!(r.tue, None);
    }

    #[test]
    fn memory_disabled_never_retrieves() {
        let c = RunConfig {
            memory_enabled: false,
            ..cfg()
        };
        let out = run(&mut GoldPatchAgent, &c);
        assert_eq!(out.retrieval_calls, 0);
        assert!(out.memory.is_none());
        assert!(out.attempts.iter().all(|a| a.retrieved.is_empty()));
    }

    #[test]
    fn zero_shot_has_no_context_and_own_record_is_excluded() {
        struct Spy(Vec<(Phase, String, bool)>);
        impl Agent for Spy {
            fn name(&self) -> &str {
                "spy"
            }
            fn solve(&mut self, t: &ClTask, ctx: &str, at: AttemptContext) -> Result<Submission, AgentError> {
                self.0.push((at.phase, t.id().to_string(), ctx.contains(&format!("Memory 1: {}", t.id()))));
                assert!(at.phase != Phase::ZeroShot || ctx.is_empty());
                GoldPatchAgent.solve(t, ctx, at)
            }
        }
        let mut spy = Spy(Vec::new());
        let out = run(&mut spy, &cfg());
        assert!(spy.0.iter().all(|(_, _, own)| !own));
        for a in &out.attempts {
            assert!(!a.retrieved.contains(&a.task_id));
        }
        // 4 zero-shot + 4 learn + 3 probes + (0+1+2+3) re-evaluations.
        assert_eq!(spy.0.len(), 4 + 4 + 3 + 6);
    }

    #[test]
    fn final_only_leaves_forgetting_absent() {
        let c = RunConfig {
            reeval_policy: ReevalPolicy::FinalOnly,
            ..cfg()
        };
        let out = run(&mut GoldPatchAgent, &c);
        let r = evaluate(&out.matrix, Some(&out.timings), &ScoreWeights::default()).unwrap();
        assert_eq!(r.acc, Some(1.0));
        assert_eq!(r.bwt, Some(0.0));
        assert_eq!(r.ft, Some(0.0));
        assert_eq!(r.f, None);
        assert!(out.matrix.get(3, 1).is_none());
    }

    #[test]
    fn agent_failures_score_zero() {
        struct Flaky;
        impl Agent for Flaky {
            fn name(&self) -> &str {
                "flaky"
            }
            fn solve(&mut self, t: &ClTask, ctx: &str, at: AttemptContext) -> Result<Submission, AgentError> {
                if t.id().ends_with("-2") {
                    return Err(AgentError::Attempt("timeout".into()));
                }
                GoldPatchAgent.solve(t, ctx, at)
            }
        }
        let out = run(&mut Flaky, &cfg());
        assert_eq!(out.matrix.get(2, 2), Some(0.0));
        assert_eq!(out.matrix.get(1, 1), Some(1.0));
        assert!(out.attempts.iter().any(|a| a.note.as_deref() == Some("agent failure: timeout")));

        struct Broken;
        impl Agent for Broken {
            fn name(&self) -> &str {
                "broken"
            }
            fn solve(&mut self, _: &ClTask, _: &str, _: AttemptContext) -> Result<Submission, AgentError> {
                Err(AgentError::Infrastructure("no sandbox".into()))
            }
        }
        let grader = PatchSimilarity { threshold: 0.9 };
        let err = run_sequence(&seq(2), &mut Broken, &grader, &MockEmbedder::new(4), &cfg()).unwrap_err();
        assert!(matches!(err, RunError::Infrastructure { .. }));
    }

    fn sub(patch: &str) -> Submission {
        Submission {
            patch: patch.into(),
            duration_seconds: 1.0,
            tool_calls: 1,
            summary: None,
        }
    }

    const AT: AttemptContext = AttemptContext {
        step: 1,
        position: 1,
        phase: Phase::Learn,
    };

    #[test]
    fn ingest_grader() {
        let t = &seq(1).tasks[0];
        let all_pass = IngestResults::from_json(
            r#"{"o__r-1": {"test_1": "pass", "test_common": "pass", "extra": "fail"}}"#,
        )
        .unwrap();
        assert_eq!(all_pass.grade(&sub(""), t, AT).unwrap(), (2, 2));
        let partial = IngestResults::from_json(r#"{"o__r-1": {"test_1": "fail", "test_common": "pass"}}"#).unwrap();
        assert_eq!(partial.grade(&sub(""), t, AT).unwrap(), (1, 2));
        let missing = IngestResults::from_json(r#"{"o__r-1": {"test_1": "pass"}}"#).unwrap();
        match missing.grade(&sub(""), t, AT) {
            Err(RunError::MissingResults { task_id, test_id }) => {
                assert_eq!(task_id, "o__r-1");
                assert_eq!(test_id.as_deref(), Some("test_common"));
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(IngestResults::from_json(r#"{"x": {"t": "maybe"}}"#).is_err());
    }

    #[test]
    fn similarity_grader() {
        let t = &seq(1).tasks[0];
        let g = PatchSimilarity { threshold: 1.0 };
        assert_eq!(g.grade(&sub(&t.base.patch), t, AT).unwrap(), (1, 1));
        assert_eq!(g.grade(&sub(&t.base.patch.replace('\n', "\r\n")), t, AT).unwrap(), (1, 1));
        assert_eq!(g.grade(&sub(""), t, AT).unwrap(), (0, 1));
        assert_eq!(g.grade(&sub("--- a/q\n+++ b/q\n"), t, AT).unwrap(), (0, 1));
    }

    #[test]
    fn patch_extraction() {
        let d = "--- a/x\n+++ b/x\n@@ -1 +1 @@\n-a\n+b\n";
        assert_eq!(extract_patch(&format!("Sure.\n<patch>\n{d}</patch>\nDone")), d);
        assert_eq!(extract_patch(&format!("Here:\n```diff\n{d}```\n")), d);
        assert_eq!(extract_patch(&format!("Explanation\n{d}")), d);
        assert_eq!(extract_patch("no diff here"), "");
    }

    #[test]
    fn digest_ignores_paths() {
        let a = RunConfig {
            output_dir: Some("/tmp/a".into()),
            ..cfg()
        };
        let b = RunConfig {
            output_dir: Some("/tmp/b".into()),
            ..cfg()
        };
        assert_eq!(a.digest(), b.digest());
        let c = RunConfig { seed: 7, ..cfg() };
        assert_ne!(a.digest(), c.digest());
    }

    #[test]
    fn repo_dirs() {
        assert_eq!(repo_dir_name("django/django"), "django_django");
    }
}
