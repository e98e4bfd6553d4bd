//! Pairwise task similarity: token-set Jaccard and TF-IDF cosine.
//!
//! Tokens are lowercase runs of alphanumeric characters or `_`. TF-IDF uses
//! raw term counts and the smoothed idf `ln((1 + N) / (1 + df)) + 1`, so every
//! vocabulary token carries a positive weight.

use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{ClDataset, ClTask, DifficultyTier};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SimilarityError {
    #[error("document has no in-vocabulary tokens")]
    ZeroVector,
}

fn is_token_char(c: char) -> bool {
    c.is_alphanumeric() || c == '_'
}

fn token_iter(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !is_token_char(c))
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
}

pub fn tokenize(text: &str) -> BTreeSet<String> {
    token_iter(text).collect()
}

pub fn token_counts(text: &str) -> BTreeMap<String, usize> {
    let mut counts = BTreeMap::new();
    for token in token_iter(text) {
        *counts.entry(token).or_insert(0) += 1;
    }
    counts
}

/// `|a ∩ b| / |a ∪ b|`; two empty sets are identical and score 1.
pub fn jaccard(a: &BTreeSet<String>, b: &BTreeSet<String>) -> f64 {
    if a.is_empty() && b.is_empty() {
        return 1.0;
    }
    let inter = a.intersection(b).count();
    let union = a.len() + b.len() - inter;
    inter as f64 / union as f64
}

/// Sparse L2-normalized tf-idf vector, sorted by vocabulary index.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseVector(Vec<(usize, f64)>);

impl SparseVector {
    pub fn entries(&self) -> &[(usize, f64)] {
        &self.0
    }

    pub fn dot(&self, other: &SparseVector) -> f64 {
        let (mut i, mut j, mut sum) = (0, 0, 0.0);
        let (a, b) = (&self.0, &other.0);
        while i < a.len() && j < b.len() {
            match a[i].0.cmp(&b[j].0) {
                std::cmp::Ordering::Less => i += 1,
                std::cmp::Ordering::Greater => j += 1,
                std::cmp::Ordering::Equal => {
                    sum += a[i].1 * b[j].1;
                    i += 1;
                    j += 1;
                }
            }
        }
        sum
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TfIdfModel {
    /// Token to dense index; indices follow lexicographic token order.
    pub vocabulary: BTreeMap<String, usize>,
    pub idf: Vec<f64>,
    pub doc_count: usize,
}

impl TfIdfModel {
    pub fn fit(documents: &[BTreeMap<String, usize>]) -> Self {
        let mut df: BTreeMap<&str, usize> = BTreeMap::new();
        for doc in documents {
            for token in doc.keys() {
                *df.entry(token.as_str()).or_insert(0) += 1;
            }
        }
        let n = documents.len() as f64;
        let mut vocabulary = BTreeMap::new();
        let mut idf = Vec::with_capacity(df.len());
        for (index, (token, count)) in df.into_iter().enumerate() {
            vocabulary.insert(token.to_string(), index);
            idf.push(((1.0 + n) / (1.0 + count as f64)).ln() + 1.0);
        }
        Self {
            vocabulary,
            idf,
            doc_count: documents.len(),
        }
    }

    pub fn fit_texts<S: AsRef<str>>(texts: &[S]) -> Self {
        let docs: Vec<_> = texts.iter().map(|t| token_counts(t.as_ref())).collect();
        Self::fit(&docs)
    }

    pub fn vectorize(&self, counts: &BTreeMap<String, usize>) -> Result<SparseVector, SimilarityError> {
        let mut entries: Vec<(usize, f64)> = counts
            .iter()
            .filter_map(|(token, &tf)| {
                self.vocabulary
                    .get(token)
                    .map(|&idx| (idx, tf as f64 * self.idf[idx]))
            })
            .collect();
        let norm = entries.iter().map(|(_, w)| w * w).sum::<f64>().sqrt();
        if entries.is_empty() || norm == 0.0 {
            return Err(SimilarityError::ZeroVector);
        }
        entries.sort_by_key(|(idx, _)| *idx);
        for (_, w) in &mut entries {
            *w /= norm;
        }
        Ok(SparseVector(entries))
    }
}

/// Cosine similarity of the two documents' tf-idf vectors, in `[0, 1]`.
pub fn tfidf_cosine(model: &TfIdfModel, doc_a: &str, doc_b: &str) -> Result<f64, SimilarityError> {
    let a = model.vectorize(&token_counts(doc_a))?;
    let b = model.vectorize(&token_counts(doc_b))?;
    Ok(clamp_unit(a.dot(&b)))
}

fn clamp_unit(x: f64) -> f64 {
    x.clamp(0.0, 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SimilarityMode {
    Jaccard,
    TfIdfCosine,
}

/// Which task text is compared.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SimilaritySource {
    #[default]
    GoldPatch,
    ProblemStatement,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimilarityOptions {
    pub source: SimilaritySource,
    /// Drop `diff --git`, `index`, `---`, `+++` and `@@` lines before tokenizing.
    pub exclude_diff_headers: bool,
    pub bin_width: f64,
    pub top_k: usize,
}

impl Default for SimilarityOptions {
    fn default() -> Self {
        Self {
            source: SimilaritySource::GoldPatch,
            exclude_diff_headers: false,
            bin_width: 0.02,
            top_k: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramBin {
    pub lower: f64,
    pub upper: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stratum {
    pub tier_a: DifficultyTier,
    pub tier_b: DifficultyTier,
    pub pairs: usize,
    pub mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredPair {
    pub id_a: String,
    pub id_b: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityReport {
    pub mode: SimilarityMode,
    pub source: SimilaritySource,
    pub pair_count: usize,
    pub mean: f64,
    pub histogram: Vec<HistogramBin>,
    /// Keyed by unordered tier pairs, easier tier first.
    pub stratified: Vec<Stratum>,
    pub top_pairs: Vec<ScoredPair>,
    /// Tasks whose text had no tokens under TF-IDF; their pairs score 0.
    pub zero_vector_tasks: Vec<String>,
}

fn task_text(task: &ClTask, opts: &SimilarityOptions) -> String {
    let raw = match opts.source {
        SimilaritySource::GoldPatch => &task.base.patch,
        SimilaritySource::ProblemStatement => &task.base.problem_statement,
    };
    if opts.exclude_diff_headers && opts.source == SimilaritySource::GoldPatch {
        strip_diff_headers(raw)
    } else {
        raw.clone()
    }
}

pub fn strip_diff_headers(patch: &str) -> String {
    patch
        .lines()
        .filter(|l| {
            !(l.starts_with("diff --git ")
                || l.starts_with("index ")
                || l.starts_with("--- ")
                || l.starts_with("+++ ")
                || l.starts_with("@@"))
        })
        .collect::<Vec<_>>()
        .join("\n")
}

/// Scores every unordered pair of tasks in the dataset.
pub fn pairwise_report(
    dataset: &ClDataset,
    mode: SimilarityMode,
    opts: &SimilarityOptions,
) -> SimilarityReport {
    let tasks: Vec<&ClTask> = dataset.tasks().collect();
    let texts: Vec<String> = tasks.iter().map(|t| task_text(t, opts)).collect();
    let mut zero_vector_tasks = Vec::new();

    let scorer: Box<dyn Fn(usize, usize) -> f64 + Sync> = match mode {
        SimilarityMode::Jaccard => {
            let sets: Vec<_> = texts.iter().map(|t| tokenize(t)).collect();
            Box::new(move |i, j| jaccard(&sets[i], &sets[j]))
        }
        SimilarityMode::TfIdfCosine => {
            let counts: Vec<_> = texts.iter().map(|t| token_counts(t)).collect();
            let model = TfIdfModel::fit(&counts);
            let vectors: Vec<Option<SparseVector>> = counts
                .iter()
                .zip(&tasks)
                .map(|(c, task)| match model.vectorize(c) {
                    Ok(v) => Some(v),
                    Err(SimilarityError::ZeroVector) => {
                        zero_vector_tasks.push(task.id().to_string());
                        None
                    }
                })
                .collect();
            Box::new(move |i, j| match (&vectors[i], &vectors[j]) {
                (Some(a), Some(b)) => clamp_unit(a.dot(b)),
                _ => 0.0,
            })
        }
    };

    let n = tasks.len();
    let scores: Vec<(usize, usize, f64)> = (0..n)
        .into_par_iter()
        .flat_map_iter(|i| {
            let scorer = &scorer;
            (i + 1..n).map(move |j| (i, j, scorer(i, j)))
        })
        .collect();

    let bins = (1.0 / opts.bin_width).round().max(1.0) as usize;
    let mut histogram: Vec<HistogramBin> = (0..bins)
        .map(|b| HistogramBin {
            lower: b as f64 * opts.bin_width,
            upper: ((b + 1) as f64 * opts.bin_width).min(1.0),
            count: 0,
        })
        .collect();
    let mut strata: BTreeMap<(DifficultyTier, DifficultyTier), (usize, f64)> = BTreeMap::new();
    let mut total = 0.0;
    for &(i, j, score) in &scores {
        total += score;
        let bin = ((score / opts.bin_width).floor() as usize).min(bins - 1);
        histogram[bin].count += 1;
        let (ta, tb) = (tasks[i].difficulty(), tasks[j].difficulty());
        let key = if ta <= tb { (ta, tb) } else { (tb, ta) };
        let entry = strata.entry(key).or_insert((0, 0.0));
        entry.0 += 1;
        entry.1 += score;
    }

    let mut ranked: Vec<&(usize, usize, f64)> = scores.iter().collect();
    ranked.sort_by(|a, b| b.2.total_cmp(&a.2).then_with(|| (a.0, a.1).cmp(&(b.0, b.1))));
    let top_pairs = ranked
        .into_iter()
        .take(opts.top_k)
        .map(|&(i, j, score)| ScoredPair {
            id_a: tasks[i].id().to_string(),
            id_b: tasks[j].id().to_string(),
            score,
        })
        .collect();

    SimilarityReport {
        mode,
        source: opts.source,
        pair_count: scores.len(),
        mean: if scores.is_empty() { 0.0 } else { total / scores.len() as f64 },
        histogram,
        stratified: strata
            .into_iter()
            .map(|((tier_a, tier_b), (pairs, sum))| Stratum {
                tier_a,
                tier_b,
                pairs,
                mean: sum / pairs as f64,
            })
            .collect(),
        top_pairs,
        zero_vector_tasks,
    }
}

impl SimilarityReport {
    pub fn stratum(&self, a: DifficultyTier, b: DifficultyTier) -> Option<&Stratum> {
        let (a, b) = if a <= b { (a, b) } else { (b, a) };
        self.stratified.iter().find(|s| s.tier_a == a && s.tier_b == b)
    }

    /// One row per histogram bin.
    pub fn histogram_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["bin_lower", "bin_upper", "count"]).expect("in-memory write");
        for bin in &self.histogram {
            w.write_record([
                format!("{:.2}", bin.lower),
                format!("{:.2}", bin.upper),
                bin.count.to_string(),
            ])
            .expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("flush")).expect("utf-8")
    }

    /// One row per difficulty stratum.
    pub fn strata_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["tier_a", "tier_b", "pairs", "mean"]).expect("in-memory write");
        for s in &self.stratified {
            w.write_record([
                s.tier_a.name().to_string(),
                s.tier_b.name().to_string(),
                s.pairs.to_string(),
                s.mean.to_string(),
            ])
            .expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("flush")).expect("utf-8")
    }
}

/// Dense cosine helper shared by memory retrieval and drift scoring.
pub fn dense_cosine(a: &[f64], b: &[f64]) -> Option<f64> {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 || !na.is_finite() || !nb.is_finite() {
        return None;
    }
    Some((dot / (na * nb)).clamp(-1.0, 1.0))
}
