//! Experience memory: per-task records with embeddings, exact cosine
//! retrieval with same-sequence priority, and token-budgeted rendering.
//!
//! The store is single-writer; `retrieve` takes `&self`, so callers that need
//! concurrent readers can wrap it in an `RwLock`.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::similarity::dense_cosine;

pub const FORMAT_NAME: &str = "clkit-memory";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum MemoryError {
    #[error("embedding has dimension {got}, store expects {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("record for `{task_id}` has an empty {field}")]
    EmptySummary { task_id: String, field: &'static str },
    #[error("embedding for `{0}` contains a non-finite value")]
    NonFinite(String),
    #[error("unsupported memory file: {0}")]
    Format(String),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperienceRecord {
    pub task_id: String,
    /// Repository of the learning sequence the task belongs to.
    pub sequence_id: String,
    pub problem_summary: String,
    pub solution_summary: String,
    pub rationale_summary: String,
    pub tool_stats: BTreeMap<String, u32>,
    pub success: bool,
    pub embedding: Vec<f64>,
    pub created_at_step: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalHit {
    pub id: usize,
    pub record: ExperienceRecord,
    pub score: f64,
    pub same_sequence: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RetrievalPolicy {
    /// Fill from the current sequence first, then backfill from the rest.
    #[default]
    Partition,
    /// Single ranking with `boost` added to same-sequence scores.
    ScoreBoost { boost: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct RetrievalConfig {
    pub policy: RetrievalPolicy,
    pub successes_only: bool,
}

#[derive(Debug, Clone)]
pub struct Query<'a> {
    pub embedding: &'a [f64],
    pub k: usize,
    pub current_sequence: &'a str,
    /// Task being attempted; its own record is never returned.
    pub exclude_task: Option<&'a str>,
}

#[derive(Debug)]
pub struct MemoryStore {
    dimension: usize,
    records: Vec<ExperienceRecord>,
    config: RetrievalConfig,
    retrievals: AtomicU64,
}

impl Clone for MemoryStore {
    fn clone(&self) -> Self {
        Self {
            dimension: self.dimension,
            records: self.records.clone(),
            config: self.config,
            retrievals: AtomicU64::new(self.retrieval_count()),
        }
    }
}

/// Contents equality; the retrieval counter is ignored.
impl PartialEq for MemoryStore {
    fn eq(&self, other: &Self) -> bool {
        self.dimension == other.dimension
            && self.records == other.records
            && self.config == other.config
    }
}

#[derive(Serialize, Deserialize)]
struct StoreFile {
    format: String,
    version: u32,
    dimension: usize,
    config: RetrievalConfig,
    records: Vec<ExperienceRecord>,
}

impl MemoryStore {
    pub fn new(dimension: usize) -> Self {
        Self::with_config(dimension, RetrievalConfig::default())
    }

    pub fn with_config(dimension: usize, config: RetrievalConfig) -> Self {
        Self {
            dimension,
            records: Vec::new(),
            config,
            retrievals: AtomicU64::new(0),
        }
    }

    /// Number of `retrieve` calls made on this store.
    pub fn retrieval_count(&self) -> u64 {
        self.retrievals.load(Ordering::Relaxed)
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn config(&self) -> RetrievalConfig {
        self.config
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> &[ExperienceRecord] {
        &self.records
    }

    fn check(&self, record: &ExperienceRecord) -> Result<(), MemoryError> {
        if record.embedding.len() != self.dimension {
            return Err(MemoryError::DimensionMismatch {
                expected: self.dimension,
                got: record.embedding.len(),
            });
        }
        if record.embedding.iter().any(|x| !x.is_finite()) {
            return Err(MemoryError::NonFinite(record.task_id.clone()));
        }
        for (field, text) in [
            ("problem_summary", &record.problem_summary),
            ("solution_summary", &record.solution_summary),
            ("rationale_summary", &record.rationale_summary),
        ] {
            if text.trim().is_empty() {
                return Err(MemoryError::EmptySummary {
                    task_id: record.task_id.clone(),
                    field,
                });
            }
        }
        Ok(())
    }

    /// Appends a record and returns its id (its insertion index).
    pub fn add_experience(&mut self, record: ExperienceRecord) -> Result<usize, MemoryError> {
        self.check(&record)?;
        self.records.push(record);
        Ok(self.records.len() - 1)
    }

    fn score(&self, query: &[f64], id: usize) -> f64 {
        dense_cosine(query, &self.records[id].embedding).unwrap_or(0.0)
    }

    pub fn retrieve(&self, query: &Query<'_>) -> Result<Vec<RetrievalHit>, MemoryError> {
        self.retrievals.fetch_add(1, Ordering::Relaxed);
        if query.embedding.len() != self.dimension {
            return Err(MemoryError::DimensionMismatch {
                expected: self.dimension,
                got: query.embedding.len(),
            });
        }
        if query.k == 0 {
            return Ok(Vec::new());
        }
        let candidates: Vec<(usize, f64, bool)> = self
            .records
            .iter()
            .enumerate()
            .filter(|(_, r)| Some(r.task_id.as_str()) != query.exclude_task)
            .filter(|(_, r)| !self.config.successes_only || r.success)
            .map(|(id, r)| {
                (
                    id,
                    self.score(query.embedding, id),
                    r.sequence_id == query.current_sequence,
                )
            })
            .collect();

        // Score descending, then insertion id ascending.
        let by_rank = |a: &(usize, f64, bool), b: &(usize, f64, bool)| {
            b.1.total_cmp(&a.1).then(a.0.cmp(&b.0))
        };
        let chosen: Vec<(usize, f64, bool)> = match self.config.policy {
            RetrievalPolicy::Partition => {
                let (mut same, mut other): (Vec<_>, Vec<_>) =
                    candidates.into_iter().partition(|c| c.2);
                same.sort_by(by_rank);
                other.sort_by(by_rank);
                same.into_iter().chain(other).take(query.k).collect()
            }
            RetrievalPolicy::ScoreBoost { boost } => {
                let mut all: Vec<_> = candidates
                    .into_iter()
                    .map(|(id, s, same)| (id, if same { s + boost } else { s }, same))
                    .collect();
                all.sort_by(by_rank);
                all.into_iter()
                    .take(query.k)
                    .map(|(id, _, same)| (id, self.score(query.embedding, id), same))
                    .collect()
            }
        };
        Ok(chosen
            .into_iter()
            .map(|(id, score, same_sequence)| RetrievalHit {
                id,
                record: self.records[id].clone(),
                score,
                same_sequence,
            })
            .collect())
    }

    pub fn to_json(&self) -> String {
        let file = StoreFile {
            format: FORMAT_NAME.to_string(),
            version: FORMAT_VERSION,
            dimension: self.dimension,
            config: self.config,
            records: self.records.clone(),
        };
        serde_json::to_string_pretty(&file).expect("store serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, MemoryError> {
        let file: StoreFile = serde_json::from_str(text)?;
        if file.format != FORMAT_NAME {
            return Err(MemoryError::Format(format!("format `{}`", file.format)));
        }
        if file.version != FORMAT_VERSION {
            return Err(MemoryError::Format(format!(
                "version {} (supported: {FORMAT_VERSION})",
                file.version
            )));
        }
        let mut store = Self::with_config(file.dimension, file.config);
        for record in file.records {
            store.add_experience(record)?;
        }
        Ok(store)
    }

    pub fn save(&self, path: &Path) -> Result<(), MemoryError> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, MemoryError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

pub trait TokenEstimator {
    fn estimate(&self, text: &str) -> usize;
}

/// `ceil(chars / 4)`.
#[derive(Debug, Clone, Copy, Default)]
pub struct CharsPerFour;

impl TokenEstimator for CharsPerFour {
    fn estimate(&self, text: &str) -> usize {
        text.chars().count().div_ceil(4)
    }
}

/// One rendered memory block.
pub fn render_hit(rank: usize, hit: &RetrievalHit) -> String {
    let r = &hit.record;
    let tools = if r.tool_stats.is_empty() {
        "none".to_string()
    } else {
        r.tool_stats
            .iter()
            .map(|(t, n)| format!("{t}={n}"))
            .collect::<Vec<_>>()
            .join(", ")
    };
    format!(
        "### Memory {rank}: {task} ({seq})\n\
         success: {success}; relevance: {score:.4}\n\
         Problem: {p}\n\
         Solution: {s}\n\
         Rationale: {why}\n\
         Tools: {tools}\n",
        task = r.task_id,
        seq = r.sequence_id,
        success = r.success,
        score = hit.score,
        p = r.problem_summary.trim(),
        s = r.solution_summary.trim(),
        why = r.rationale_summary.trim(),
    )
}

/// Renders hits in rank order, keeping the longest prefix of whole blocks
/// whose joined text fits `max_context_tokens`.
pub fn format_context(
    hits: &[RetrievalHit],
    max_context_tokens: usize,
    estimator: &dyn TokenEstimator,
) -> String {
    let mut out = String::new();
    for (idx, hit) in hits.iter().enumerate() {
        let block = render_hit(idx + 1, hit);
        let candidate = if out.is_empty() {
            block
        } else {
            format!("{out}\n{block}")
        };
        if estimator.estimate(&candidate) > max_context_tokens {
            break;
        }
        out = candidate;
    }
    out
}
