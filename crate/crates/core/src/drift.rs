//! Prompt-poisoning drift probe.
//!
//! For a target task `B` the model answers once with the plain prompt and once
//! with an unrelated task `A` (issue and gold patch) prepended. Drift is
//! `1 - cos` between the embeddings of the two answers, aggregated per
//! `(difficulty(A), difficulty(B))` group.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};
use thiserror::Error;

use crate::dataset::{ClDataset, ClTask, DifficultyTier};
use crate::gateway::{ChatModel, Embedder, GenerationParams};
use crate::similarity::dense_cosine;

pub const PATCH_PROMPT_TEMPLATE: &str = include_str!("../templates/patch_prompt.txt");
pub const EXAMPLE_PATCH: &str = include_str!("../templates/example.patch");
pub const HIGH_DRIFT_THRESHOLD: f64 = 0.3;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DriftError {
    #[error("only {available} eligible pairs for {d_src}->{d_tgt}, {requested} requested")]
    InsufficientPairs {
        d_src: DifficultyTier,
        d_tgt: DifficultyTier,
        available: usize,
        requested: usize,
    },
    #[error("all {0} trials failed")]
    AllTrialsFailed(usize),
    #[error("invalid drift configuration: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PoisonPairSpec {
    pub d_src: DifficultyTier,
    pub d_tgt: DifficultyTier,
    pub n_pairs: usize,
    pub seed: u64,
}

/// What makes a poison task "unrelated" to its target.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Unrelatedness {
    /// Different repository, or same repository with disjoint modified files
    /// and no dependency edge in either direction.
    #[default]
    Structural,
    /// Different repository only.
    CrossRepo,
}

impl Unrelatedness {
    pub fn holds(self, a: &ClTask, b: &ClTask) -> bool {
        if a.id() == b.id() {
            return false;
        }
        if a.base.repo != b.base.repo {
            return true;
        }
        match self {
            Unrelatedness::CrossRepo => false,
            Unrelatedness::Structural => {
                a.modified_files().is_disjoint(b.modified_files())
                    && !a.dependencies().iter().any(|d| d == b.id())
                    && !b.dependencies().iter().any(|d| d == a.id())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PoisonPair {
    pub a: ClTask,
    pub b: ClTask,
}

fn tier_stream(d_src: DifficultyTier, d_tgt: DifficultyTier) -> u64 {
    (d_src.index() * 4 + d_tgt.index()) as u64
}

/// All eligible `(A, B)` pairs in dataset order, then a seeded sample of
/// `n_pairs` of them without replacement.
pub fn sample_pairs(
    dataset: &ClDataset,
    spec: &PoisonPairSpec,
    rule: Unrelatedness,
) -> Result<Vec<PoisonPair>, DriftError> {
    if spec.n_pairs == 0 {
        return Err(DriftError::Config("n_pairs must be >= 1".into()));
    }
    let tasks: Vec<&ClTask> = dataset.tasks().collect();
    let eligible: Vec<(usize, usize)> = tasks
        .iter()
        .enumerate()
        .filter(|(_, a)| a.difficulty() == spec.d_src)
        .flat_map(|(ia, a)| {
            tasks
                .iter()
                .enumerate()
                .filter(move |(_, b)| b.difficulty() == spec.d_tgt && rule.holds(a, b))
                .map(move |(ib, _)| (ia, ib))
        })
        .collect();
    if eligible.len() < spec.n_pairs {
        return Err(DriftError::InsufficientPairs {
            d_src: spec.d_src,
            d_tgt: spec.d_tgt,
            available: eligible.len(),
            requested: spec.n_pairs,
        });
    }
    let mut rng = ChaCha20Rng::seed_from_u64(spec.seed);
    rng.set_stream(tier_stream(spec.d_src, spec.d_tgt));
    let picked = rand::seq::index::sample(&mut rng, eligible.len(), spec.n_pairs);
    Ok(picked
        .into_iter()
        .map(|idx| {
            let (ia, ib) = eligible[idx];
            PoisonPair {
                a: tasks[ia].clone(),
                b: tasks[ib].clone(),
            }
        })
        .collect())
}

/// Renders the patch-generation prompt for one task.
pub fn task_prompt(task: &ClTask, retrieved_context: &str) -> String {
    let hints = task
        .base
        .hints_text
        .as_deref()
        .filter(|h| !h.trim().is_empty())
        .unwrap_or("None");
    let files = task
        .modified_files()
        .iter()
        .map(String::as_str)
        .collect::<Vec<_>>()
        .join("\n");
    // Single pass so placeholder-like text inside task fields is left alone.
    let mut out = String::with_capacity(PATCH_PROMPT_TEMPLATE.len() + task.base.problem_statement.len());
    let mut rest = PATCH_PROMPT_TEMPLATE;
    while let Some(open) = rest.find('{') {
        let Some(close) = rest[open..].find('}') else { break };
        let key = &rest[open + 1..open + close];
        let value = match key {
            "problem_statement" => task.base.problem_statement.trim_end(),
            "repo" => task.base.repo.as_str(),
            "base_commit" => task.base.base_commit.as_str(),
            "retrieved_context" => retrieved_context.trim_end(),
            "hints_text" => hints.trim_end(),
            "text_files" => files.as_str(),
            "patch_example_content" => EXAMPLE_PATCH.trim_end_matches('\n'),
            _ => {
                out.push_str(&rest[..open + 1]);
                rest = &rest[open + 1..];
                continue;
            }
        };
        out.push_str(&rest[..open]);
        out.push_str(value);
        rest = &rest[open + close + 1..];
    }
    out.push_str(rest);
    out
}

/// Clean prompt for `task`, or, with `poison`, the poison task's prompt and
/// gold patch followed by the clean prompt.
pub fn build_task_prompt(task: &ClTask, poison: Option<&ClTask>) -> String {
    let clean = task_prompt(task, "");
    match poison {
        None => clean,
        Some(a) => format!(
            "{}<patch>\n{}\n</patch>\n\n{}",
            task_prompt(a, ""),
            a.base.patch.trim_end_matches('\n'),
            clean
        ),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftRecord {
    pub task_a: String,
    pub task_b: String,
    pub d_src: DifficultyTier,
    pub d_tgt: DifficultyTier,
    pub drift: f64,
    pub clean_latency_seconds: f64,
    pub poisoned_latency_seconds: f64,
    pub model_name: String,
    pub embedding_model: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialFailure {
    pub task_a: String,
    pub task_b: String,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialOutcome {
    pub records: Vec<DriftRecord>,
    pub failures: Vec<TrialFailure>,
}

fn run_one(
    pair: &PoisonPair,
    chat: &dyn ChatModel,
    embedder: &dyn Embedder,
    params: &GenerationParams,
) -> Result<DriftRecord, String> {
    let clean = chat
        .generate(&build_task_prompt(&pair.b, None), params)
        .map_err(|e| format!("clean generation: {e}"))?;
    let poisoned = chat
        .generate(&build_task_prompt(&pair.b, Some(&pair.a)), params)
        .map_err(|e| format!("poisoned generation: {e}"))?;
    let e_clean = embedder.embed(&clean.text).map_err(|e| format!("embedding: {e}"))?;
    let e_poisoned = embedder.embed(&poisoned.text).map_err(|e| format!("embedding: {e}"))?;
    if e_clean.vector.len() != e_poisoned.vector.len() {
        return Err("embedding dimensions differ".into());
    }
    let cos = dense_cosine(&e_clean.vector, &e_poisoned.vector)
        .ok_or_else(|| "zero-norm embedding".to_string())?;
    Ok(DriftRecord {
        task_a: pair.a.id().to_string(),
        task_b: pair.b.id().to_string(),
        d_src: pair.a.difficulty(),
        d_tgt: pair.b.difficulty(),
        drift: (1.0 - cos).clamp(0.0, 2.0),
        clean_latency_seconds: clean.latency_seconds,
        poisoned_latency_seconds: poisoned.latency_seconds,
        model_name: clean.model_name,
        embedding_model: e_clean.model_name,
    })
}

/// Runs every pair with up to `max_in_flight` concurrent trials. Output order
/// follows `pairs` regardless of completion order.
pub fn run_trials(
    pairs: &[PoisonPair],
    chat: &dyn ChatModel,
    embedder: &dyn Embedder,
    params: &GenerationParams,
    max_in_flight: usize,
) -> Result<TrialOutcome, DriftError> {
    if max_in_flight == 0 {
        return Err(DriftError::Config("max_in_flight must be >= 1".into()));
    }
    let slots: Vec<Mutex<Option<Result<DriftRecord, String>>>> =
        pairs.iter().map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    std::thread::scope(|s| {
        for _ in 0..max_in_flight.min(pairs.len()) {
            s.spawn(|| loop {
                let idx = next.fetch_add(1, Ordering::Relaxed);
                let Some(pair) = pairs.get(idx) else { break };
                let result = run_one(pair, chat, embedder, params);
                *slots[idx].lock().expect("slot lock") = Some(result);
            });
        }
    });
    let mut outcome = TrialOutcome {
        records: Vec::new(),
        failures: Vec::new(),
    };
    for (pair, slot) in pairs.iter().zip(slots) {
        match slot.into_inner().expect("slot lock").expect("every slot filled") {
            Ok(r) => outcome.records.push(r),
            Err(error) => {
                log::warn!("drift trial {} -> {} failed: {error}", pair.a.id(), pair.b.id());
                outcome.failures.push(TrialFailure {
                    task_a: pair.a.id().to_string(),
                    task_b: pair.b.id().to_string(),
                    error,
                });
            }
        }
    }
    if !pairs.is_empty() && outcome.records.is_empty() {
        return Err(DriftError::AllTrialsFailed(pairs.len()));
    }
    Ok(outcome)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CiMethod {
    /// Student-t interval with `n - 1` degrees of freedom.
    #[default]
    StudentT,
    /// Percentile bootstrap of the mean.
    Bootstrap { resamples: usize, seed: u64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftGroup {
    pub d_src: DifficultyTier,
    pub d_tgt: DifficultyTier,
    pub n: usize,
    pub mean: f64,
    pub ci_low: Option<f64>,
    pub ci_high: Option<f64>,
    pub high_drift: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftReport {
    pub groups: Vec<DriftGroup>,
    pub ci_method: CiMethod,
    pub confidence: f64,
    pub high_drift_threshold: f64,
    pub warnings: Vec<String>,
}

/// Two-sided 95% Student-t interval for the mean; `None` when `n < 2`.
pub fn t_interval(values: &[f64]) -> Option<(f64, f64, f64)> {
    let n = values.len();
    if n < 2 {
        return None;
    }
    let mean = stable_mean(values);
    let mut deviations: Vec<f64> = values.iter().map(|v| (v - mean) * (v - mean)).collect();
    deviations.sort_by(f64::total_cmp);
    let var = deviations.iter().sum::<f64>() / (n - 1) as f64;
    let t = StudentsT::new(0.0, 1.0, (n - 1) as f64)
        .expect("df >= 1")
        .inverse_cdf(0.975);
    let half = t * (var / n as f64).sqrt();
    Some((mean, mean - half, mean + half))
}

/// Mean over the sorted values, so the result does not depend on input order.
pub fn stable_mean(values: &[f64]) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    sorted.iter().sum::<f64>() / sorted.len() as f64
}

fn percentile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

fn bootstrap_interval(values: &[f64], resamples: usize, seed: u64) -> Option<(f64, f64)> {
    if values.len() < 2 || resamples == 0 {
        return None;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut means: Vec<f64> = (0..resamples)
        .map(|_| {
            let sample: Vec<f64> = (0..sorted.len())
                .map(|_| sorted[rng.random_range(0..sorted.len())])
                .collect();
            stable_mean(&sample)
        })
        .collect();
    means.sort_by(f64::total_cmp);
    Some((percentile(&means, 0.025), percentile(&means, 0.975)))
}

/// Groups records by `(d_src, d_tgt)` and reports mean and 95% CI per group.
pub fn aggregate(records: &[DriftRecord], method: CiMethod) -> DriftReport {
    let mut grouped: BTreeMap<(DifficultyTier, DifficultyTier), Vec<f64>> = BTreeMap::new();
    for r in records {
        grouped.entry((r.d_src, r.d_tgt)).or_default().push(r.drift);
    }
    let groups = grouped
        .into_iter()
        .map(|((d_src, d_tgt), values)| {
            let mean = stable_mean(&values);
            let ci = match method {
                CiMethod::StudentT => t_interval(&values).map(|(_, lo, hi)| (lo, hi)),
                CiMethod::Bootstrap { resamples, seed } => {
                    bootstrap_interval(&values, resamples, seed ^ tier_stream(d_src, d_tgt))
                        .map(|(lo, hi)| (lo.min(mean), hi.max(mean)))
                }
            };
            DriftGroup {
                d_src,
                d_tgt,
                n: values.len(),
                mean,
                ci_low: ci.map(|c| c.0),
                ci_high: ci.map(|c| c.1),
                high_drift: mean >= HIGH_DRIFT_THRESHOLD,
            }
        })
        .collect();
    DriftReport {
        groups,
        ci_method: method,
        confidence: 0.95,
        high_drift_threshold: HIGH_DRIFT_THRESHOLD,
        warnings: Vec::new(),
    }
}

impl DriftReport {
    pub fn group(&self, d_src: DifficultyTier, d_tgt: DifficultyTier) -> Option<&DriftGroup> {
        self.groups.iter().find(|g| g.d_src == d_src && g.d_tgt == d_tgt)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// One row per group: `d_src,d_tgt,n,mean,ci_lo,ci_hi`.
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["d_src", "d_tgt", "n", "mean", "ci_lo", "ci_hi"])
            .expect("in-memory write");
        let opt = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
        for g in &self.groups {
            w.write_record([
                g.d_src.label().to_string(),
                g.d_tgt.label().to_string(),
                g.n.to_string(),
                g.mean.to_string(),
                opt(g.ci_low),
                opt(g.ci_high),
            ])
            .expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("flush")).expect("utf-8")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DriftConfig {
    /// Tier pairs to probe; empty means all 16 combinations.
    pub groups: Vec<(DifficultyTier, DifficultyTier)>,
    pub n_pairs: usize,
    pub seed: u64,
    pub unrelated: Unrelatedness,
    pub ci: CiMethod,
}

impl Default for DriftConfig {
    fn default() -> Self {
        Self {
            groups: Vec::new(),
            n_pairs: 10,
            seed: 0,
            unrelated: Unrelatedness::Structural,
            ci: CiMethod::StudentT,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftRun {
    pub report: DriftReport,
    pub records: Vec<DriftRecord>,
    pub failures: Vec<TrialFailure>,
}

/// Samples, runs and aggregates every configured group. Groups without
/// enough eligible pairs are skipped with a warning.
pub fn run_drift(
    dataset: &ClDataset,
    cfg: &DriftConfig,
    chat: &dyn ChatModel,
    embedder: &dyn Embedder,
    params: &GenerationParams,
    max_in_flight: usize,
) -> Result<DriftRun, DriftError> {
    let groups = if cfg.groups.is_empty() {
        DifficultyTier::ALL
            .iter()
            .flat_map(|&s| DifficultyTier::ALL.iter().map(move |&t| (s, t)))
            .collect()
    } else {
        cfg.groups.clone()
    };
    let mut warnings = Vec::new();
    let mut pairs = Vec::new();
    for (d_src, d_tgt) in groups {
        let spec = PoisonPairSpec {
            d_src,
            d_tgt,
            n_pairs: cfg.n_pairs,
            seed: cfg.seed,
        };
        match sample_pairs(dataset, &spec, cfg.unrelated) {
            Ok(mut p) => pairs.append(&mut p),
            Err(e @ DriftError::InsufficientPairs { .. }) => {
                warnings.push(format!("skipped group: {e}"))
            }
            Err(e) => return Err(e),
        }
    }
    if pairs.is_empty() {
        return Err(DriftError::Config(format!(
            "no group has enough eligible pairs ({})",
            warnings.join("; ")
        )));
    }
    let outcome = run_trials(&pairs, chat, embedder, params, max_in_flight)?;
    let mut report = aggregate(&outcome.records, cfg.ci);
    for f in &outcome.failures {
        warnings.push(format!("trial {} -> {} failed: {}", f.task_a, f.task_b, f.error));
    }
    report.warnings = warnings;
    Ok(DriftRun {
        report,
        records: outcome.records,
        failures: outcome.failures,
    })
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::dataset::{ClContext, TaskRecord};
    use crate::gateway::{EmbeddingResult, GatewayError, MockChat, MockEmbedder, Usage};
    use chrono::{TimeZone, Utc};
    use std::collections::BTreeSet;

    pub(crate) fn task(id: &str, repo: &str, tier: DifficultyTier, files: &[&str]) -> ClTask {
        ClTask {
            base: TaskRecord {
                instance_id: id.into(),
                repo: repo.into(),
                base_commit: "abc123".into(),
                created_at: Utc.with_ymd_and_hms(2023, 1, 1, 0, 0, 0).unwrap(),
                problem_statement: format!("Problem in {id}"),
                hints_text: None,
                patch: format!("--- a/{0}\n+++ b/{0}\n@@ -1 +1 @@\n-x\n+y\n", files[0]),
                test_patch: String::new(),
                fail_to_pass: vec!["t1".into()],
                pass_to_pass: vec![],
                difficulty: tier,
            },
            continual_learning: ClContext {
                sequence_position: 1,
                difficulty_score: tier.score(),
                dependencies: vec![],
                modified_files: files.iter().map(|f| f.to_string()).collect::<BTreeSet<_>>(),
            },
        }
    }

    fn r(src: DifficultyTier, tgt: DifficultyTier, drift: f64) -> DriftRecord {
        DriftRecord {
            task_a: "a".into(),
            task_b: "b".into(),
            d_src: src,
            d_tgt: tgt,
            drift,
            clean_latency_seconds: 0.0,
            poisoned_latency_seconds: 0.0,
            model_name: "m".into(),
            embedding_model: "e".into(),
        }
    }

    use DifficultyTier::*;

    #[test]
    fn unrelated_predicate() {
        let a = task("a", "r", Easy, &["x.py"]);
        let b = task("b", "r", Easy, &["x.py"]);
        let c = task("c", "r", Easy, &["y.py"]);
        let d = task("d", "q", Easy, &["x.py"]);
        let rule = Unrelatedness::Structural;
        assert!(!rule.holds(&a, &a));
        assert!(!rule.holds(&a, &b));
        assert!(rule.holds(&a, &c));
        assert!(rule.holds(&a, &d));
        assert!(!Unrelatedness::CrossRepo.holds(&a, &c));
        let mut e = task("e", "r", Easy, &["z.py"]);
        e.continual_learning.dependencies = vec!["a".into()];
        assert!(!rule.holds(&a, &e) && !rule.holds(&e, &a));
    }

    #[test]
    fn clean_prompt_contains_statement_once() {
        let t = task("t", "org/repo", Easy, &["pkg/a.py"]);
        let p = build_task_prompt(&t, None);
        assert_eq!(p.matches("Problem in t").count(), 1);
        assert!(p.contains("(org/repo at commit abc123)"));
        assert!(p.contains("pkg/a.py"));
        assert!(p.contains("a, b = b, a % b"));
        assert!(!p.contains("{problem_statement}"));
    }

    #[test]
    fn braces_in_fields_are_not_expanded() {
        let mut t = task("t", "r", Easy, &["a.py"]);
        t.base.problem_statement = "use {repo} literally".into();
        let p = build_task_prompt(&t, None);
        assert!(p.contains("use {repo} literally"));
    }

    #[test]
    fn poisoned_prompt_order() {
        let a = task("a", "r", Easy, &["a.py"]);
        let b = task("b", "q", Hard, &["b.py"]);
        let p = build_task_prompt(&b, Some(&a));
        assert!(p.starts_with(&task_prompt(&a, "")));
        assert!(p.ends_with(&task_prompt(&b, "")));
        assert!(p.contains(a.base.patch.trim_end()));
    }

    #[test]
    fn aggregate_examples() {
        let rep = aggregate(&[r(Easy, Easy, 0.3), r(Easy, Easy, 0.5)], CiMethod::StudentT);
        assert!((rep.groups[0].mean - 0.4).abs() < 1e-15);
        let constant = aggregate(&vec![r(Easy, Hard, 0.2); 4], CiMethod::StudentT);
        let g = &constant.groups[0];
        assert_eq!(g.ci_low, Some(0.2));
        assert_eq!(g.ci_high, Some(0.2));
        let single = aggregate(&[r(Hard, Easy, 0.7)], CiMethod::StudentT);
        assert_eq!(single.groups[0].ci_low, None);
        assert!(single.groups[0].high_drift);
    }

    #[test]
    fn bootstrap_brackets_mean() {
        let records: Vec<_> = [0.1, 0.4, 0.35, 0.2, 0.6].iter().map(|&d| r(Easy, Easy, d)).collect();
        let rep = aggregate(&records, CiMethod::Bootstrap { resamples: 500, seed: 3 });
        let g = &rep.groups[0];
        assert!(g.ci_low.unwrap() <= g.mean && g.mean <= g.ci_high.unwrap());
        assert_eq!(rep, aggregate(&records, CiMethod::Bootstrap { resamples: 500, seed: 3 }));
    }

    #[test]
    fn identical_answers_give_zero_drift() {
        let pairs = vec![PoisonPair {
            a: task("a", "r", Easy, &["a.py"]),
            b: task("b", "q", Easy, &["b.py"]),
        }];
        let out = run_trials(
            &pairs,
            &MockChat::Constant("same".into()),
            &MockEmbedder::new(16),
            &GenerationParams::default(),
            2,
        )
        .unwrap();
        assert!(out.records[0].drift.abs() < 1e-12);
    }

    /// Clean answers embed to e1, everything else to e2.
    struct Orthogonal;
    impl Embedder for Orthogonal {
        fn embed(&self, text: &str) -> Result<EmbeddingResult, GatewayError> {
            let clean = text == "clean";
            Ok(EmbeddingResult {
                vector: if clean { vec![1.0, 0.0] } else { vec![0.0, 1.0] },
                model_name: "orth".into(),
                usage: Usage::default(),
                latency_seconds: 0.0,
            })
        }
        fn model_name(&self) -> &str {
            "orth"
        }
    }

    struct CleanOrNot;
    impl ChatModel for CleanOrNot {
        fn generate(
            &self,
            prompt: &str,
            params: &GenerationParams,
        ) -> Result<crate::gateway::ChatResult, GatewayError> {
            let poisoned = prompt.matches("<issue>").count() > 1;
            let mut r = MockChat::Constant(if poisoned { "poisoned" } else { "clean" }.into())
                .generate(prompt, params)?;
            r.latency_seconds = 0.0;
            Ok(r)
        }
    }

    #[test]
    fn orthogonal_answers_give_unit_drift() {
        let pairs = vec![PoisonPair {
            a: task("a", "r", Easy, &["a.py"]),
            b: task("b", "q", Easy, &["b.py"]),
        }];
        let out = run_trials(&pairs, &CleanOrNot, &Orthogonal, &GenerationParams::default(), 1).unwrap();
        assert!((out.records[0].drift - 1.0).abs() < 1e-12);
    }

    struct Failing;
    impl ChatModel for Failing {
        fn generate(
            &self,
            _: &str,
            _: &GenerationParams,
        ) -> Result<crate::gateway::ChatResult, GatewayError> {
            Err(GatewayError::Transport {
                attempts: 1,
                message: "down".into(),
            })
        }
    }

    #[test]
    fn all_failed_trials_is_an_error() {
        let pairs = vec![PoisonPair {
            a: task("a", "r", Easy, &["a.py"]),
            b: task("b", "q", Easy, &["b.py"]),
        }];
        assert_eq!(
            run_trials(&pairs, &Failing, &MockEmbedder::new(4), &GenerationParams::default(), 1),
            Err(DriftError::AllTrialsFailed(1))
        );
    }

    #[test]
    fn csv_layout() {
        let rep = aggregate(&[r(Easy, Hard, 0.25), r(Easy, Hard, 0.75)], CiMethod::StudentT);
        let csv = rep.to_csv();
        let mut lines = csv.lines();
        assert_eq!(lines.next(), Some("d_src,d_tgt,n,mean,ci_lo,ci_hi"));
        assert!(lines.next().unwrap().starts_with("<15 min,1-4 hr,2,0.5,"));
    }
}
