//! Task records, learning sequences and corpus ingestion.
//!
//! Source records use the verified-issue schema (`instance_id`, `repo`,
//! `base_commit`, `created_at`, `problem_statement`, `hints_text`, `patch`,
//! `test_patch`, `FAIL_TO_PASS`, `PASS_TO_PASS`, `difficulty`) and may arrive
//! as a JSON array or as JSON lines. Unknown fields are ignored.

use std::collections::{BTreeSet, HashSet};
use std::fmt;

use chrono::{DateTime, NaiveDateTime, SecondsFormat, Utc};
use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use serde_json::{Map, Value};
use thiserror::Error;

use crate::diff;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("record {index}: field `{field}` is missing or malformed: {reason}")]
    MalformedRecord {
        index: usize,
        field: String,
        reason: String,
    },
    #[error("duplicate instance_id `{0}`")]
    DuplicateInstanceId(String),
    #[error("unknown difficulty annotation `{0}`")]
    UnknownDifficulty(String),
    #[error("invalid JSON input: {0}")]
    Json(#[from] serde_json::Error),
    #[error("invalid dataset: {0}")]
    InvalidDataset(String),
}

/// Human fix-time difficulty, ordered from easiest to hardest.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum DifficultyTier {
    Easy,
    Medium,
    Hard,
    VeryHard,
}

impl DifficultyTier {
    pub const ALL: [DifficultyTier; 4] = [
        DifficultyTier::Easy,
        DifficultyTier::Medium,
        DifficultyTier::Hard,
        DifficultyTier::VeryHard,
    ];

    /// Ordinal score, 1 (easy) to 4 (very hard).
    pub fn score(self) -> u8 {
        match self {
            DifficultyTier::Easy => 1,
            DifficultyTier::Medium => 2,
            DifficultyTier::Hard => 3,
            DifficultyTier::VeryHard => 4,
        }
    }

    pub fn from_score(score: u8) -> Option<Self> {
        match score {
            1 => Some(DifficultyTier::Easy),
            2 => Some(DifficultyTier::Medium),
            3 => Some(DifficultyTier::Hard),
            4 => Some(DifficultyTier::VeryHard),
            _ => None,
        }
    }

    /// Canonical fix-time label.
    pub fn label(self) -> &'static str {
        match self {
            DifficultyTier::Easy => "<15 min",
            DifficultyTier::Medium => "15 min - 1 hr",
            DifficultyTier::Hard => "1-4 hr",
            DifficultyTier::VeryHard => ">4 hr",
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            DifficultyTier::Easy => "Easy",
            DifficultyTier::Medium => "Medium",
            DifficultyTier::Hard => "Hard",
            DifficultyTier::VeryHard => "VeryHard",
        }
    }

    pub fn index(self) -> usize {
        usize::from(self.score() - 1)
    }
}

impl fmt::Display for DifficultyTier {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl Serialize for DifficultyTier {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(self.label())
    }
}

impl<'de> Deserialize<'de> for DifficultyTier {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let value = Value::deserialize(deserializer)?;
        difficulty_from_value(&value).map_err(D::Error::custom)
    }
}

impl std::str::FromStr for DifficultyTier {
    type Err = DatasetError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        difficulty_from_annotation(s)
    }
}

/// Maps a fix-time annotation onto a tier.
///
/// Matching ignores case and whitespace. Besides the canonical labels
/// (`<15 min`, `15 min - 1 hr`, `1-4 hr`, `>4 hr`) the spelled-out forms used
/// by the verified corpus (`<15 min fix`, `15 min - 1 hour`, `1-4 hours`,
/// `>4 hours`) and the tier names themselves are accepted.
pub fn difficulty_from_annotation(label: &str) -> Result<DifficultyTier, DatasetError> {
    let mut key: String = label
        .chars()
        .filter(|c| !c.is_whitespace())
        .collect::<String>()
        .to_lowercase();
    if let Some(stripped) = key.strip_suffix("fix") {
        key = stripped.to_string();
    }
    let key = key
        .replace("hours", "hr")
        .replace("hour", "hr")
        .replace("hrs", "hr")
        .replace("minutes", "min")
        .replace("mins", "min");
    let tier = match key.as_str() {
        "<15min" | "easy" => DifficultyTier::Easy,
        "15min-1hr" | "medium" => DifficultyTier::Medium,
        "1-4hr" | "hard" => DifficultyTier::Hard,
        ">4hr" | "veryhard" | "very_hard" => DifficultyTier::VeryHard,
        _ => return Err(DatasetError::UnknownDifficulty(label.to_string())),
    };
    Ok(tier)
}

fn difficulty_from_value(value: &Value) -> Result<DifficultyTier, String> {
    match value {
        Value::String(s) => difficulty_from_annotation(s).map_err(|e| e.to_string()),
        Value::Number(n) => n
            .as_u64()
            .and_then(|s| u8::try_from(s).ok())
            .and_then(DifficultyTier::from_score)
            .ok_or_else(|| format!("difficulty score {n} outside 1..=4")),
        other => Err(format!("expected a difficulty label, found {other}")),
    }
}

/// One verified issue instance.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskRecord {
    pub instance_id: String,
    pub repo: String,
    pub base_commit: String,
    pub created_at: DateTime<Utc>,
    pub problem_statement: String,
    pub hints_text: Option<String>,
    pub patch: String,
    pub test_patch: String,
    pub fail_to_pass: Vec<String>,
    pub pass_to_pass: Vec<String>,
    pub difficulty: DifficultyTier,
}

impl TaskRecord {
    /// Union of `FAIL_TO_PASS` and `PASS_TO_PASS`, first occurrence order.
    pub fn all_tests(&self) -> Vec<&str> {
        let mut seen = HashSet::new();
        self.fail_to_pass
            .iter()
            .chain(&self.pass_to_pass)
            .map(String::as_str)
            .filter(|t| seen.insert(*t))
            .collect()
    }

    /// Parses one source object; `index` is used for error reporting only.
    pub fn from_value(value: &Value, index: usize) -> Result<Self, DatasetError> {
        let obj = value.as_object().ok_or_else(|| DatasetError::MalformedRecord {
            index,
            field: "<record>".into(),
            reason: "record is not a JSON object".into(),
        })?;
        let fields = FieldReader { obj, index };

        let record = TaskRecord {
            instance_id: fields.string("instance_id")?,
            repo: fields.string("repo")?,
            base_commit: fields.string("base_commit")?,
            created_at: fields.timestamp("created_at")?,
            problem_statement: fields.string("problem_statement")?,
            hints_text: fields.optional_string("hints_text")?,
            patch: fields.string("patch")?,
            test_patch: fields.string("test_patch")?,
            fail_to_pass: fields.string_list("FAIL_TO_PASS")?,
            pass_to_pass: fields.string_list("PASS_TO_PASS")?,
            difficulty: fields.difficulty("difficulty")?,
        };
        record.validate(index)?;
        Ok(record)
    }

    /// Checks the record-level invariants.
    pub fn validate(&self, index: usize) -> Result<(), DatasetError> {
        let malformed = |field: &str, reason: String| DatasetError::MalformedRecord {
            index,
            field: field.to_string(),
            reason,
        };
        if self.instance_id.trim().is_empty() {
            return Err(malformed("instance_id", "must be non-empty".into()));
        }
        if !is_owner_name(&self.repo) {
            return Err(malformed(
                "repo",
                format!("`{}` is not of the form owner/name", self.repo),
            ));
        }
        if !self.base_commit.chars().all(|c| c.is_ascii_hexdigit()) || self.base_commit.is_empty()
        {
            return Err(malformed("base_commit", "must be a hex string".into()));
        }
        if self.patch.trim().is_empty() {
            return Err(malformed("patch", "must be non-empty".into()));
        }
        let parsed = diff::parse_unified_diff(&self.patch)
            .map_err(|e| malformed("patch", e.to_string()))?;
        if parsed.files.is_empty() {
            return Err(malformed("patch", "diff touches no files".into()));
        }
        if self.fail_to_pass.is_empty() {
            return Err(malformed(
                "FAIL_TO_PASS",
                "at least one reproducing test is required".into(),
            ));
        }
        Ok(())
    }

    /// Serializes with the source field names.
    pub fn to_value(&self) -> Value {
        let mut obj = Map::new();
        obj.insert("instance_id".into(), self.instance_id.clone().into());
        obj.insert("repo".into(), self.repo.clone().into());
        obj.insert("base_commit".into(), self.base_commit.clone().into());
        obj.insert("created_at".into(), format_timestamp(&self.created_at).into());
        obj.insert(
            "problem_statement".into(),
            self.problem_statement.clone().into(),
        );
        obj.insert(
            "hints_text".into(),
            self.hints_text.clone().map_or(Value::Null, Value::String),
        );
        obj.insert("patch".into(), self.patch.clone().into());
        obj.insert("test_patch".into(), self.test_patch.clone().into());
        obj.insert("FAIL_TO_PASS".into(), self.fail_to_pass.clone().into());
        obj.insert("PASS_TO_PASS".into(), self.pass_to_pass.clone().into());
        obj.insert("difficulty".into(), self.difficulty.label().into());
        Value::Object(obj)
    }
}

impl Serialize for TaskRecord {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        self.to_value().serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for TaskRecord {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let value = Value::deserialize(deserializer)?;
        TaskRecord::from_value(&value, 0).map_err(D::Error::custom)
    }
}

fn is_owner_name(repo: &str) -> bool {
    let mut parts = repo.split('/');
    matches!(
        (parts.next(), parts.next(), parts.next()),
        (Some(owner), Some(name), None) if !owner.is_empty() && !name.is_empty()
    )
}

pub fn format_timestamp(ts: &DateTime<Utc>) -> String {
    ts.to_rfc3339_opts(SecondsFormat::AutoSi, true)
}

/// RFC 3339 / ISO 8601 timestamp, normalized to UTC. Timestamps without an
/// offset are taken to be UTC.
pub fn parse_timestamp(text: &str) -> Result<DateTime<Utc>, String> {
    let text = text.trim();
    if let Ok(ts) = DateTime::parse_from_rfc3339(text) {
        return Ok(ts.with_timezone(&Utc));
    }
    for fmt in [
        "%Y-%m-%dT%H:%M:%S%.f%:z",
        "%Y-%m-%d %H:%M:%S%.f%:z",
        "%Y-%m-%d %H:%M:%S%.f%z",
    ] {
        if let Ok(ts) = DateTime::parse_from_str(text, fmt) {
            return Ok(ts.with_timezone(&Utc));
        }
    }
    for fmt in ["%Y-%m-%dT%H:%M:%S%.f", "%Y-%m-%d %H:%M:%S%.f"] {
        if let Ok(ts) = NaiveDateTime::parse_from_str(text, fmt) {
            return Ok(ts.and_utc());
        }
    }
    if let Ok(date) = chrono::NaiveDate::parse_from_str(text, "%Y-%m-%d") {
        return Ok(date.and_hms_opt(0, 0, 0).expect("midnight is valid").and_utc());
    }
    Err(format!("`{text}` is not an ISO 8601 timestamp"))
}

struct FieldReader<'a> {
    obj: &'a Map<String, Value>,
    index: usize,
}

impl FieldReader<'_> {
    fn err(&self, field: &str, reason: impl Into<String>) -> DatasetError {
        DatasetError::MalformedRecord {
            index: self.index,
            field: field.to_string(),
            reason: reason.into(),
        }
    }

    fn get(&self, field: &str) -> Result<&Value, DatasetError> {
        self.obj
            .get(field)
            .ok_or_else(|| self.err(field, "field is missing"))
    }

    fn string(&self, field: &str) -> Result<String, DatasetError> {
        match self.get(field)? {
            Value::String(s) => Ok(s.clone()),
            other => Err(self.err(field, format!("expected a string, found {}", kind(other)))),
        }
    }

    fn optional_string(&self, field: &str) -> Result<Option<String>, DatasetError> {
        match self.get(field)? {
            Value::Null => Ok(None),
            Value::String(s) => Ok(Some(s.clone())),
            other => Err(self.err(field, format!("expected a string or null, found {}", kind(other)))),
        }
    }

    fn timestamp(&self, field: &str) -> Result<DateTime<Utc>, DatasetError> {
        let text = self.string(field)?;
        parse_timestamp(&text).map_err(|e| self.err(field, e))
    }

    /// Test lists arrive either as arrays or as JSON-encoded strings.
    fn string_list(&self, field: &str) -> Result<Vec<String>, DatasetError> {
        let value = self.get(field)?;
        let decoded;
        let list = match value {
            Value::Array(items) => items,
            Value::String(s) => {
                decoded = serde_json::from_str::<Value>(s)
                    .map_err(|e| self.err(field, format!("string is not a JSON list: {e}")))?;
                decoded
                    .as_array()
                    .ok_or_else(|| self.err(field, "string does not encode a JSON list"))?
            }
            other => return Err(self.err(field, format!("expected a list, found {}", kind(other)))),
        };
        list.iter()
            .map(|item| match item {
                Value::String(s) => Ok(s.clone()),
                other => Err(self.err(field, format!("list item is {}, not a string", kind(other)))),
            })
            .collect()
    }

    fn difficulty(&self, field: &str) -> Result<DifficultyTier, DatasetError> {
        let value = self.get(field)?;
        difficulty_from_value(value).map_err(|e| self.err(field, e))
    }
}

fn kind(value: &Value) -> &'static str {
    match value {
        Value::Null => "null",
        Value::Bool(_) => "a boolean",
        Value::Number(_) => "a number",
        Value::String(_) => "a string",
        Value::Array(_) => "an array",
        Value::Object(_) => "an object",
    }
}

/// Splits the input into raw JSON values: a single top-level array, or one
/// object per non-blank line.
pub fn read_json_values(input: &str) -> Result<Vec<Value>, DatasetError> {
    let trimmed = input.trim_start();
    if trimmed.is_empty() {
        return Ok(Vec::new());
    }
    if trimmed.starts_with('[') {
        let values: Vec<Value> = serde_json::from_str(trimmed)?;
        return Ok(values);
    }
    input
        .lines()
        .filter(|line| !line.trim().is_empty())
        .map(|line| serde_json::from_str(line).map_err(DatasetError::from))
        .collect()
}

/// Parses a corpus (JSON array or JSON lines) into validated records,
/// preserving order.
pub fn parse_corpus(input: &str) -> Result<Vec<TaskRecord>, DatasetError> {
    let values = read_json_values(input)?;
    let mut seen = HashSet::with_capacity(values.len());
    let mut records = Vec::with_capacity(values.len());
    for (index, value) in values.iter().enumerate() {
        let record = TaskRecord::from_value(value, index)?;
        if !seen.insert(record.instance_id.clone()) {
            return Err(DatasetError::DuplicateInstanceId(record.instance_id));
        }
        records.push(record);
    }
    Ok(records)
}

/// Inverse of [`parse_corpus`]: a pretty-printed JSON array.
pub fn serialize_corpus(records: &[TaskRecord]) -> String {
    let values: Vec<Value> = records.iter().map(TaskRecord::to_value).collect();
    serde_json::to_string_pretty(&values).expect("JSON values always serialize")
}

/// Continual-learning context attached to a task.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClContext {
    pub sequence_position: usize,
    pub difficulty_score: u8,
    pub dependencies: Vec<String>,
    pub modified_files: BTreeSet<String>,
}

/// A task placed in a learning sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClTask {
    #[serde(flatten)]
    pub base: TaskRecord,
    pub continual_learning: ClContext,
}

impl ClTask {
    pub fn id(&self) -> &str {
        &self.base.instance_id
    }

    pub fn position(&self) -> usize {
        self.continual_learning.sequence_position
    }

    pub fn difficulty(&self) -> DifficultyTier {
        self.base.difficulty
    }

    pub fn modified_files(&self) -> &BTreeSet<String> {
        &self.continual_learning.modified_files
    }

    pub fn dependencies(&self) -> &[String] {
        &self.continual_learning.dependencies
    }
}

/// Per-sequence statistics row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceStats {
    pub repo: String,
    pub task_count: usize,
    /// Counts per tier, easiest first.
    pub tier_counts: TierCounts,
    pub tasks_with_dependencies: usize,
    pub dependency_fraction: f64,
    /// `dependency_fraction` as an integer percentage, rounded half away from zero.
    pub dependency_percent: u32,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TierCounts {
    pub easy: usize,
    pub medium: usize,
    pub hard: usize,
    pub very_hard: usize,
}

impl TierCounts {
    pub fn add(&mut self, tier: DifficultyTier) {
        *self.get_mut(tier) += 1;
    }

    pub fn get(&self, tier: DifficultyTier) -> usize {
        match tier {
            DifficultyTier::Easy => self.easy,
            DifficultyTier::Medium => self.medium,
            DifficultyTier::Hard => self.hard,
            DifficultyTier::VeryHard => self.very_hard,
        }
    }

    fn get_mut(&mut self, tier: DifficultyTier) -> &mut usize {
        match tier {
            DifficultyTier::Easy => &mut self.easy,
            DifficultyTier::Medium => &mut self.medium,
            DifficultyTier::Hard => &mut self.hard,
            DifficultyTier::VeryHard => &mut self.very_hard,
        }
    }

    pub fn merge(&mut self, other: &TierCounts) {
        self.easy += other.easy;
        self.medium += other.medium;
        self.hard += other.hard;
        self.very_hard += other.very_hard;
    }

    pub fn total(&self) -> usize {
        self.easy + self.medium + self.hard + self.very_hard
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearningSequence {
    pub repo: String,
    pub tasks: Vec<ClTask>,
    pub statistics: SequenceStats,
}

impl LearningSequence {
    pub fn len(&self) -> usize {
        self.tasks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tasks.is_empty()
    }

    pub fn task(&self, id: &str) -> Option<&ClTask> {
        self.tasks.iter().find(|t| t.id() == id)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    /// SHA-256 of the source records.
    pub source_digest: String,
    /// SHA-256 of the builder configuration.
    pub config_digest: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClDataset {
    pub provenance: Provenance,
    pub sequences: Vec<LearningSequence>,
}

impl ClDataset {
    pub fn task_count(&self) -> usize {
        self.sequences.iter().map(LearningSequence::len).sum()
    }

    pub fn tasks(&self) -> impl Iterator<Item = &ClTask> {
        self.sequences.iter().flat_map(|s| s.tasks.iter())
    }

    pub fn sequence(&self, repo: &str) -> Option<&LearningSequence> {
        self.sequences.iter().find(|s| s.repo == repo)
    }

    /// Checks the structural invariants a loaded dataset must satisfy:
    /// distinct repos, gap-free positions, backward-only dependencies that
    /// resolve within the sequence.
    pub fn validate(&self) -> Result<(), DatasetError> {
        let invalid = |msg: String| DatasetError::InvalidDataset(msg);
        let mut repos = HashSet::new();
        let mut ids = HashSet::new();
        for seq in &self.sequences {
            if !repos.insert(seq.repo.as_str()) {
                return Err(invalid(format!("repo `{}` appears twice", seq.repo)));
            }
            for (pos, task) in seq.tasks.iter().enumerate() {
                if !ids.insert(task.id()) {
                    return Err(DatasetError::DuplicateInstanceId(task.id().to_string()));
                }
                if task.base.repo != seq.repo {
                    return Err(invalid(format!(
                        "task `{}` belongs to `{}`, not `{}`",
                        task.id(),
                        task.base.repo,
                        seq.repo
                    )));
                }
                if task.position() != pos {
                    return Err(invalid(format!(
                        "task `{}` has position {}, expected {pos}",
                        task.id(),
                        task.position()
                    )));
                }
                if task.continual_learning.difficulty_score != task.difficulty().score() {
                    return Err(invalid(format!(
                        "task `{}` difficulty_score disagrees with its tier",
                        task.id()
                    )));
                }
                for dep in task.dependencies() {
                    let earlier = seq.tasks[..pos].iter().any(|t| t.id() == dep);
                    if !earlier {
                        return Err(invalid(format!(
                            "task `{}` depends on `{dep}`, which is not earlier in the sequence",
                            task.id()
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self, DatasetError> {
        let dataset: ClDataset = serde_json::from_str(text)?;
        dataset.validate()?;
        Ok(dataset)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("dataset always serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    pub(crate) fn fixture_value() -> Value {
        json!({
            "instance_id": "octo__widgets-101",
            "repo": "octo/widgets",
            "base_commit": "0123abcd",
            "created_at": "2021-03-04T05:06:07Z",
            "problem_statement": "Widgets crash on empty input.",
            "hints_text": "",
            "patch": "--- a/widgets/core.py\n+++ b/widgets/core.py\n@@ -1 +1 @@\n-x\n+y\n",
            "test_patch": "",
            "FAIL_TO_PASS": "[\"tests/test_core.py::test_empty\"]",
            "PASS_TO_PASS": [],
            "difficulty": "<15 min fix",
            "version": "1.0"
        })
    }

    #[test]
    fn empty_array_is_empty() {
        assert!(parse_corpus("[]").unwrap().is_empty());
        assert!(parse_corpus("").unwrap().is_empty());
    }

    #[test]
    fn parses_one_record() {
        let input = serde_json::to_string(&vec![fixture_value()]).unwrap();
        let records = parse_corpus(&input).unwrap();
        assert_eq!(records.len(), 1);
        let r = &records[0];
        assert_eq!(r.instance_id, "octo__widgets-101");
        assert_eq!(r.repo, "octo/widgets");
        assert_eq!(r.base_commit, "0123abcd");
        assert_eq!(format_timestamp(&r.created_at), "2021-03-04T05:06:07Z");
        assert_eq!(r.hints_text.as_deref(), Some(""));
        assert_eq!(r.fail_to_pass, vec!["tests/test_core.py::test_empty"]);
        assert!(r.pass_to_pass.is_empty());
        assert_eq!(r.difficulty, DifficultyTier::Easy);
    }

    #[test]
    fn json_lines_input() {
        let mut second = fixture_value();
        second["instance_id"] = json!("octo__widgets-102");
        let input = format!("{}\n\n{}\n", fixture_value(), second);
        assert_eq!(parse_corpus(&input).unwrap().len(), 2);
    }

    #[test]
    fn missing_patch_names_field() {
        let mut value = fixture_value();
        value.as_object_mut().unwrap().remove("patch");
        let input = serde_json::to_string(&vec![value]).unwrap();
        match parse_corpus(&input) {
            Err(DatasetError::MalformedRecord { index, field, .. }) => {
                assert_eq!(index, 0);
                assert_eq!(field, "patch");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn duplicate_ids_rejected() {
        let input = serde_json::to_string(&vec![fixture_value(), fixture_value()]).unwrap();
        assert!(matches!(
            parse_corpus(&input),
            Err(DatasetError::DuplicateInstanceId(id)) if id == "octo__widgets-101"
        ));
    }

    #[test]
    fn invariant_violations() {
        let cases = [
            ("repo", json!("no-slash"), "repo"),
            ("repo", json!("a/b/c"), "repo"),
            ("instance_id", json!(""), "instance_id"),
            ("FAIL_TO_PASS", json!([]), "FAIL_TO_PASS"),
            ("patch", json!("--- a/x\n@@ broken"), "patch"),
            ("created_at", json!("yesterday"), "created_at"),
            ("difficulty", json!("5 days"), "difficulty"),
            ("PASS_TO_PASS", json!(3), "PASS_TO_PASS"),
        ];
        for (key, bad, expect) in cases {
            let mut value = fixture_value();
            value[key] = bad;
            match TaskRecord::from_value(&value, 7) {
                Err(DatasetError::MalformedRecord { index: 7, field, .. }) => {
                    assert_eq!(field, expect)
                }
                other => panic!("{key}: unexpected {other:?}"),
            }
        }
        let mut value = fixture_value();
        value.as_object_mut().unwrap().remove("difficulty");
        assert!(TaskRecord::from_value(&value, 0).is_err());
    }

    #[test]
    fn difficulty_labels() {
        assert_eq!(difficulty_from_annotation("<15 min").unwrap(), DifficultyTier::Easy);
        assert_eq!(difficulty_from_annotation("<15 min").unwrap().score(), 1);
        assert_eq!(difficulty_from_annotation(">4 hr").unwrap(), DifficultyTier::VeryHard);
        assert_eq!(difficulty_from_annotation(">4 hr").unwrap().score(), 4);
        assert_eq!(difficulty_from_annotation("15 min - 1 hr").unwrap(), DifficultyTier::Medium);
        assert_eq!(difficulty_from_annotation("1-4 hr").unwrap(), DifficultyTier::Hard);
        assert_eq!(difficulty_from_annotation("  15 MIN - 1 HOUR ").unwrap(), DifficultyTier::Medium);
        assert_eq!(difficulty_from_annotation("1-4 hours").unwrap(), DifficultyTier::Hard);
        assert!(matches!(
            difficulty_from_annotation("5 days"),
            Err(DatasetError::UnknownDifficulty(l)) if l == "5 days"
        ));
    }

    #[test]
    fn difficulty_is_order_preserving() {
        let scores: Vec<u8> = DifficultyTier::ALL
            .iter()
            .map(|t| difficulty_from_annotation(t.label()).unwrap().score())
            .collect();
        assert_eq!(scores, vec![1, 2, 3, 4]);
    }

    #[test]
    fn naive_timestamps_are_utc() {
        let a = parse_timestamp("2020-01-02T03:04:05").unwrap();
        let b = parse_timestamp("2020-01-02T03:04:05Z").unwrap();
        let c = parse_timestamp("2020-01-02T05:04:05+02:00").unwrap();
        assert_eq!(a, b);
        assert_eq!(b, c);
    }

    #[test]
    fn serialize_round_trip() {
        let input = serde_json::to_string(&vec![fixture_value()]).unwrap();
        let records = parse_corpus(&input).unwrap();
        let again = parse_corpus(&serialize_corpus(&records)).unwrap();
        assert_eq!(records, again);
    }
}
