//! Learning-sequence construction: group by repository, filter small
//! repositories, curriculum-order, truncate, detect file-overlap
//! dependencies and tabulate per-sequence statistics.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{
    ClContext, ClDataset, ClTask, DatasetError, LearningSequence, Provenance, SequenceStats,
    TaskRecord, TierCounts,
};
use crate::diff::{self, DiffParseError};
use crate::sha256_hex;

#[derive(Debug, Error)]
pub enum BuildError {
    #[error("no repository has at least {min} tasks")]
    EmptyDataset { min: usize },
    #[error("invalid builder config: {0}")]
    InvalidConfig(String),
    #[error("task `{id}`: {source}")]
    Patch {
        id: String,
        #[source]
        source: DiffParseError,
    },
    #[error(transparent)]
    Dataset(#[from] DatasetError),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ordering {
    /// Difficulty ascending, chronological within a tier.
    #[default]
    DifficultyThenTime,
    /// Chronological only.
    TimeOnly,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct BuilderConfig {
    pub min_tasks_per_repo: usize,
    pub max_tasks_per_sequence: Option<usize>,
    pub include_test_patch_files: bool,
    pub ordering: Ordering,
}

impl Default for BuilderConfig {
    fn default() -> Self {
        Self {
            min_tasks_per_repo: 15,
            max_tasks_per_sequence: Some(50),
            include_test_patch_files: false,
            ordering: Ordering::DifficultyThenTime,
        }
    }
}

impl BuilderConfig {
    pub fn validate(&self) -> Result<(), BuildError> {
        if self.min_tasks_per_repo < 1 {
            return Err(BuildError::InvalidConfig(
                "min_tasks_per_repo must be at least 1".into(),
            ));
        }
        if let Some(max) = self.max_tasks_per_sequence {
            if max < self.min_tasks_per_repo {
                return Err(BuildError::InvalidConfig(format!(
                    "max_tasks_per_sequence ({max}) is below min_tasks_per_repo ({})",
                    self.min_tasks_per_repo
                )));
            }
        }
        Ok(())
    }

    pub fn digest(&self) -> String {
        sha256_hex(serde_json::to_string(self).expect("config serializes").as_bytes())
    }
}

/// Sorts tasks into curriculum order. The sort is stable and fully keyed, so
/// the output is a deterministic permutation of the input.
pub fn order_curriculum(mut tasks: Vec<TaskRecord>, ordering: Ordering) -> Vec<TaskRecord> {
    match ordering {
        Ordering::DifficultyThenTime => tasks.sort_by(|a, b| {
            (a.difficulty.score(), a.created_at, &a.instance_id).cmp(&(
                b.difficulty.score(),
                b.created_at,
                &b.instance_id,
            ))
        }),
        Ordering::TimeOnly => {
            tasks.sort_by(|a, b| (a.created_at, &a.instance_id).cmp(&(b.created_at, &b.instance_id)))
        }
    }
    tasks
}

/// Files a task's gold patch touches, optionally including its test patch.
pub fn task_files(record: &TaskRecord, include_test_patch: bool) -> Result<BTreeSet<String>, BuildError> {
    let patch_err = |source| BuildError::Patch {
        id: record.instance_id.clone(),
        source,
    };
    let mut files = diff::extract_modified_files(&record.patch).map_err(patch_err)?;
    if include_test_patch {
        files.extend(diff::extract_modified_files(&record.test_patch).map_err(patch_err)?);
    }
    Ok(files)
}

/// Fills each task's dependency list: B depends on A iff A comes earlier in
/// the sequence and their modified-file sets intersect. Dependencies are
/// listed in sequence order.
pub fn detect_dependencies(tasks: &mut [ClTask]) {
    let mut touched_by: HashMap<String, Vec<usize>> = HashMap::new();
    for idx in 0..tasks.len() {
        let mut earlier = BTreeSet::new();
        for file in tasks[idx].modified_files() {
            if let Some(positions) = touched_by.get(file) {
                earlier.extend(positions.iter().copied());
            }
        }
        let deps = earlier.iter().map(|&i| tasks[i].id().to_string()).collect();
        tasks[idx].continual_learning.dependencies = deps;
        for file in tasks[idx].continual_learning.modified_files.clone() {
            touched_by.entry(file).or_default().push(idx);
        }
    }
}

fn round_percent(fraction: f64) -> u32 {
    // f64::round rounds half away from zero.
    (fraction * 100.0).round() as u32
}

pub fn sequence_stats(repo: &str, tasks: &[ClTask]) -> SequenceStats {
    let mut tiers = TierCounts::default();
    for task in tasks {
        tiers.add(task.difficulty());
    }
    let with_deps = tasks.iter().filter(|t| !t.dependencies().is_empty()).count();
    let fraction = if tasks.is_empty() {
        0.0
    } else {
        with_deps as f64 / tasks.len() as f64
    };
    SequenceStats {
        repo: repo.to_string(),
        task_count: tasks.len(),
        tier_counts: tiers,
        tasks_with_dependencies: with_deps,
        dependency_fraction: fraction,
        dependency_percent: round_percent(fraction),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub rows: Vec<SequenceStats>,
    pub total_tasks: usize,
    pub total_tiers: TierCounts,
    pub total_with_dependencies: usize,
}

/// Recomputes the statistics table from the tasks themselves.
pub fn compute_stats(dataset: &ClDataset) -> DatasetStats {
    let rows: Vec<SequenceStats> = dataset
        .sequences
        .iter()
        .map(|s| sequence_stats(&s.repo, &s.tasks))
        .collect();
    let mut total_tiers = TierCounts::default();
    for row in &rows {
        total_tiers.merge(&row.tier_counts);
    }
    DatasetStats {
        total_tasks: rows.iter().map(|r| r.task_count).sum(),
        total_with_dependencies: rows.iter().map(|r| r.tasks_with_dependencies).sum(),
        total_tiers,
        rows,
    }
}

impl DatasetStats {
    /// Markdown table with one row per sequence plus a total row.
    pub fn to_markdown(&self) -> String {
        let mut out = String::from(
            "| Repository | Tasks | Easy (<15m) | Medium (15m-1h) | Hard (1-4h) | Very Hard (>4h) | Tasks w/ Dependencies (%) |\n\
             |---|---:|---:|---:|---:|---:|---:|\n",
        );
        for row in &self.rows {
            out.push_str(&format!(
                "| {} | {} | {} | {} | {} | {} | {} ({}%) |\n",
                row.repo,
                row.task_count,
                row.tier_counts.easy,
                row.tier_counts.medium,
                row.tier_counts.hard,
                row.tier_counts.very_hard,
                row.tasks_with_dependencies,
                row.dependency_percent
            ));
        }
        let total_fraction = if self.total_tasks == 0 {
            0.0
        } else {
            self.total_with_dependencies as f64 / self.total_tasks as f64
        };
        out.push_str(&format!(
            "| **Total** | {} | {} | {} | {} | {} | {} ({}%) |\n",
            self.total_tasks,
            self.total_tiers.easy,
            self.total_tiers.medium,
            self.total_tiers.hard,
            self.total_tiers.very_hard,
            self.total_with_dependencies,
            round_percent(total_fraction)
        ));
        out
    }

    pub fn to_csv(&self) -> String {
        let mut writer = csv::Writer::from_writer(Vec::new());
        writer
            .write_record([
                "repo",
                "tasks",
                "easy",
                "medium",
                "hard",
                "very_hard",
                "tasks_with_dependencies",
                "dependency_percent",
            ])
            .expect("in-memory write");
        for row in &self.rows {
            writer
                .write_record([
                    row.repo.clone(),
                    row.task_count.to_string(),
                    row.tier_counts.easy.to_string(),
                    row.tier_counts.medium.to_string(),
                    row.tier_counts.hard.to_string(),
                    row.tier_counts.very_hard.to_string(),
                    row.tasks_with_dependencies.to_string(),
                    row.dependency_percent.to_string(),
                ])
                .expect("in-memory write");
        }
        String::from_utf8(writer.into_inner().expect("flush to Vec")).expect("csv is utf-8")
    }
}

fn build_sequence(
    repo: String,
    records: Vec<TaskRecord>,
    cfg: &BuilderConfig,
) -> Result<LearningSequence, BuildError> {
    let mut ordered = order_curriculum(records, cfg.ordering);
    if let Some(max) = cfg.max_tasks_per_sequence {
        ordered.truncate(max);
    }
    let mut tasks = ordered
        .into_iter()
        .enumerate()
        .map(|(position, record)| {
            let modified_files = task_files(&record, cfg.include_test_patch_files)?;
            Ok(ClTask {
                continual_learning: ClContext {
                    sequence_position: position,
                    difficulty_score: record.difficulty.score(),
                    dependencies: Vec::new(),
                    modified_files,
                },
                base: record,
            })
        })
        .collect::<Result<Vec<_>, BuildError>>()?;
    detect_dependencies(&mut tasks);
    let statistics = sequence_stats(&repo, &tasks);
    Ok(LearningSequence {
        repo,
        tasks,
        statistics,
    })
}

/// Builds the continual-learning dataset from validated records.
///
/// Repositories with fewer than `min_tasks_per_repo` records are dropped
/// before truncation; surviving sequences are ordered by descending task
/// count, then repository name.
pub fn build_dataset(records: &[TaskRecord], cfg: &BuilderConfig) -> Result<ClDataset, BuildError> {
    cfg.validate()?;
    let source_digest = sha256_hex(crate::dataset::serialize_corpus(records).as_bytes());

    let mut by_repo: BTreeMap<String, Vec<TaskRecord>> = BTreeMap::new();
    for record in records {
        by_repo
            .entry(record.repo.clone())
            .or_default()
            .push(record.clone());
    }
    by_repo.retain(|_, tasks| tasks.len() >= cfg.min_tasks_per_repo);
    if by_repo.is_empty() {
        return Err(BuildError::EmptyDataset {
            min: cfg.min_tasks_per_repo,
        });
    }

    let mut sequences = by_repo
        .into_iter()
        .map(|(repo, tasks)| build_sequence(repo, tasks, cfg))
        .collect::<Result<Vec<_>, _>>()?;
    sequences.sort_by(|a, b| b.len().cmp(&a.len()).then_with(|| a.repo.cmp(&b.repo)));

    let dataset = ClDataset {
        provenance: Provenance {
            source_digest,
            config_digest: cfg.digest(),
        },
        sequences,
    };
    dataset.validate()?;
    Ok(dataset)
}
