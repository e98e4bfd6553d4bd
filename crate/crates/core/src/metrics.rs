//! Continual-learning metrics over a sparse performance matrix.
//!
//! `a[i,j]` is the success rate on task `j` measured after processing task
//! `i` (both 1-based); row 0 holds the zero-shot baselines. The evaluation
//! protocol fills the lower triangle, the first superdiagonal and the
//! zero-shot row, which is everything the metrics below read.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// A matrix cell; `row == 0` addresses the zero-shot row.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Cell {
    pub row: usize,
    pub col: usize,
}

impl fmt::Display for Cell {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "a[{},{}]", self.row, self.col)
    }
}

fn cell_list(cells: &[Cell]) -> String {
    cells.iter().map(Cell::to_string).collect::<Vec<_>>().join(", ")
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricsError {
    #[error("{metric}: matrix is missing {}", cell_list(.missing))]
    IncompleteMatrix {
        metric: &'static str,
        missing: Vec<Cell>,
    },
    #[error("{metric} is undefined: {reason}")]
    Undefined {
        metric: &'static str,
        reason: String,
    },
    #[error("no successful attempts; tool-use efficiency is undefined")]
    NoSuccesses,
    #[error("domain error: {0}")]
    Domain(String),
    #[error("invalid matrix file: {0}")]
    Parse(String),
}

type Result<T> = std::result::Result<T, MetricsError>;

#[derive(Debug, Clone, PartialEq)]
pub struct PerformanceMatrix {
    task_ids: Vec<String>,
    zero_shot: Vec<Option<f64>>,
    entries: BTreeMap<(usize, usize), f64>,
}

fn check_rate(value: f64) -> Result<f64> {
    if value.is_finite() && (0.0..=1.0).contains(&value) {
        Ok(value)
    } else {
        Err(MetricsError::Domain(format!(
            "success rate {value} is outside [0, 1]"
        )))
    }
}

impl PerformanceMatrix {
    pub fn new(task_ids: Vec<String>) -> Self {
        let n = task_ids.len();
        Self {
            task_ids,
            zero_shot: vec![None; n],
            entries: BTreeMap::new(),
        }
    }

    /// Matrix with generated task ids `t1..tN`.
    pub fn with_size(n: usize) -> Self {
        Self::new((1..=n).map(|i| format!("t{i}")).collect())
    }

    pub fn n(&self) -> usize {
        self.task_ids.len()
    }

    pub fn task_ids(&self) -> &[String] {
        &self.task_ids
    }

    fn check_index(&self, idx: usize, what: &str) -> Result<()> {
        if idx == 0 || idx > self.n() {
            return Err(MetricsError::Domain(format!(
                "{what} index {idx} is outside 1..={}",
                self.n()
            )));
        }
        Ok(())
    }

    pub fn set(&mut self, i: usize, j: usize, value: f64) -> Result<()> {
        self.check_index(i, "row")?;
        self.check_index(j, "column")?;
        self.entries.insert((i, j), check_rate(value)?);
        Ok(())
    }

    pub fn set_zero_shot(&mut self, j: usize, value: f64) -> Result<()> {
        self.check_index(j, "column")?;
        self.zero_shot[j - 1] = Some(check_rate(value)?);
        Ok(())
    }

    /// Cell lookup; row 0 reads the zero-shot row.
    pub fn get(&self, i: usize, j: usize) -> Option<f64> {
        if i == 0 {
            return self.zero_shot_at(j);
        }
        self.entries.get(&(i, j)).copied()
    }

    pub fn zero_shot_at(&self, j: usize) -> Option<f64> {
        j.checked_sub(1)
            .and_then(|idx| self.zero_shot.get(idx))
            .copied()
            .flatten()
    }

    pub fn entries(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        self.entries.iter().map(|(&(i, j), &v)| (i, j, v))
    }

    fn require(&self, metric: &'static str, cells: impl IntoIterator<Item = Cell>) -> Result<()> {
        let missing: Vec<Cell> = cells
            .into_iter()
            .filter(|c| self.get(c.row, c.col).is_none())
            .collect();
        if missing.is_empty() {
            Ok(())
        } else {
            Err(MetricsError::IncompleteMatrix { metric, missing })
        }
    }

    fn at(&self, i: usize, j: usize) -> f64 {
        self.get(i, j).expect("presence checked by require()")
    }

    /// The region the evaluation protocol must populate: zero-shot row, lower
    /// triangle with diagonal, and first superdiagonal.
    pub fn required_cells(&self) -> Vec<Cell> {
        let n = self.n();
        let mut cells: Vec<Cell> = (1..=n).map(|col| Cell { row: 0, col }).collect();
        for row in 1..=n {
            for col in 1..=(row + 1).min(n) {
                cells.push(Cell { row, col });
            }
        }
        cells
    }

    pub fn missing_cells(&self) -> Vec<Cell> {
        self.required_cells()
            .into_iter()
            .filter(|c| self.get(c.row, c.col).is_none())
            .collect()
    }

    pub fn validate_complete(&self) -> Result<()> {
        self.require("completeness", self.required_cells())
    }

    pub fn to_file(&self) -> MatrixFile {
        MatrixFile {
            n: self.n(),
            task_ids: self.task_ids.clone(),
            zero_shot: self.zero_shot.clone(),
            entries: self
                .entries()
                .map(|(i, j, value)| MatrixEntry { i, j, value })
                .collect(),
        }
    }

    pub fn from_file(file: &MatrixFile) -> Result<Self> {
        if file.task_ids.len() != file.n {
            return Err(MetricsError::Parse(format!(
                "n = {} but {} task ids given",
                file.n,
                file.task_ids.len()
            )));
        }
        if file.zero_shot.len() != file.n {
            return Err(MetricsError::Parse(format!(
                "n = {} but zero_shot has {} values",
                file.n,
                file.zero_shot.len()
            )));
        }
        let mut m = Self::new(file.task_ids.clone());
        for (idx, v) in file.zero_shot.iter().enumerate() {
            if let Some(v) = v {
                m.set_zero_shot(idx + 1, *v)?;
            }
        }
        for e in &file.entries {
            m.set(e.i, e.j, e.value)?;
        }
        Ok(m)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_file()).expect("matrix serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: MatrixFile =
            serde_json::from_str(text).map_err(|e| MetricsError::Parse(e.to_string()))?;
        Self::from_file(&file)
    }

    /// Dense CSV view: header `step,<task ids>`, row `0` is zero-shot, absent
    /// cells are blank.
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["step".to_string()];
        header.extend(self.task_ids.iter().cloned());
        w.write_record(&header).expect("in-memory write");
        for row in 0..=self.n() {
            let mut rec = vec![row.to_string()];
            rec.extend((1..=self.n()).map(|col| {
                self.get(row, col).map(|v| v.to_string()).unwrap_or_default()
            }));
            w.write_record(&rec).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("flush")).expect("utf-8")
    }

    /// Reads the CSV view back; `#` comment lines are skipped.
    pub fn from_csv(text: &str) -> Result<Self> {
        let parse_err = |e: csv::Error| MetricsError::Parse(e.to_string());
        let mut reader = csv::ReaderBuilder::new()
            .comment(Some(b'#'))
            .from_reader(text.as_bytes());
        let header = reader.headers().map_err(parse_err)?.clone();
        if header.get(0) != Some("step") {
            return Err(MetricsError::Parse("first column must be `step`".into()));
        }
        let task_ids: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
        let mut m = Self::new(task_ids);
        for record in reader.records() {
            let record = record.map_err(parse_err)?;
            let row: usize = record
                .get(0)
                .unwrap_or("")
                .trim()
                .parse()
                .map_err(|_| MetricsError::Parse(format!("bad step label in {record:?}")))?;
            for (col, field) in record.iter().skip(1).enumerate() {
                let field = field.trim();
                if field.is_empty() {
                    continue;
                }
                let v: f64 = field
                    .parse()
                    .map_err(|_| MetricsError::Parse(format!("bad value `{field}`")))?;
                if row == 0 {
                    m.set_zero_shot(col + 1, v)?;
                } else {
                    m.set(row, col + 1, v)?;
                }
            }
        }
        Ok(m)
    }
}

/// On-disk matrix format.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixFile {
    pub n: usize,
    pub task_ids: Vec<String>,
    pub zero_shot: Vec<Option<f64>>,
    pub entries: Vec<MatrixEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixEntry {
    pub i: usize,
    pub j: usize,
    pub value: f64,
}

fn cells(pairs: impl IntoIterator<Item = (usize, usize)>) -> Vec<Cell> {
    pairs.into_iter().map(|(row, col)| Cell { row, col }).collect()
}

fn need_two(metric: &'static str, m: &PerformanceMatrix) -> Result<usize> {
    let n = m.n();
    if n < 2 {
        return Err(MetricsError::Undefined {
            metric,
            reason: format!("needs at least 2 tasks, have {n}"),
        });
    }
    Ok(n)
}

fn need_one(metric: &'static str, m: &PerformanceMatrix) -> Result<usize> {
    if m.n() == 0 {
        return Err(MetricsError::Undefined {
            metric,
            reason: "matrix has no tasks".into(),
        });
    }
    Ok(m.n())
}

/// `pass / total`.
pub fn success_rate(pass_count: u64, total_count: u64) -> Result<f64> {
    if total_count == 0 {
        return Err(MetricsError::Domain("total_count must be at least 1".into()));
    }
    if pass_count > total_count {
        return Err(MetricsError::Domain(format!(
            "pass_count {pass_count} exceeds total_count {total_count}"
        )));
    }
    Ok(pass_count as f64 / total_count as f64)
}

/// Mean of the final row.
pub fn accuracy(m: &PerformanceMatrix) -> Result<f64> {
    let n = need_one("ACC", m)?;
    m.require("ACC", cells((1..=n).map(|j| (n, j))))?;
    Ok((1..=n).map(|j| m.at(n, j)).sum::<f64>() / n as f64)
}

/// Average forgetting over the first `N - 1` tasks.
///
/// Each task contributes its peak success rate up to and including the step
/// it was learned (`max over k <= j of a[k,j]`) minus its final success rate,
/// floored at zero: a task that ends at its best has forgotten nothing. Needs
/// the task's measured trajectory `a[j..=N, j]`.
pub fn forgetting(m: &PerformanceMatrix) -> Result<f64> {
    let n = need_two("F", m)?;
    m.require(
        "F",
        cells((1..n).flat_map(|j| (j..=n).map(move |k| (k, j)))),
    )?;
    let total: f64 = (1..n)
        .map(|j| {
            let final_rate = m.at(n, j);
            let peak = (1..=j)
                .filter_map(|k| m.get(k, j))
                .fold(final_rate, f64::max);
            peak - final_rate
        })
        .sum();
    Ok(total / (n - 1) as f64)
}

/// Mean gain of the look-ahead measurement `a[i,i+1]` over zero-shot.
pub fn forward_transfer(m: &PerformanceMatrix) -> Result<f64> {
    let n = need_two("FT", m)?;
    m.require(
        "FT",
        cells((1..n).flat_map(|i| [(i, i + 1), (0, i + 1)])),
    )?;
    let total: f64 = (1..n).map(|i| m.at(i, i + 1) - m.at(0, i + 1)).sum();
    Ok(total / (n - 1) as f64)
}

/// Mean change from `a[i,i]` to `a[N,i]` over the first `N - 1` tasks.
pub fn backward_transfer(m: &PerformanceMatrix) -> Result<f64> {
    let n = need_two("BWT", m)?;
    m.require("BWT", cells((1..n).flat_map(|i| [(n, i), (i, i)])))?;
    let total: f64 = (1..n).map(|i| m.at(n, i) - m.at(i, i)).sum();
    Ok(total / (n - 1) as f64)
}

/// Mean over steps of the running mean of the diagonal.
pub fn aulc(m: &PerformanceMatrix) -> Result<f64> {
    let n = need_one("AULC", m)?;
    m.require("AULC", cells((1..=n).map(|i| (i, i))))?;
    let mut running = 0.0;
    let mut total = 0.0;
    for i in 1..=n {
        running += m.at(i, i);
        total += running / i as f64;
    }
    Ok(total / n as f64)
}

/// Mean of the diagonal.
pub fn cl_plasticity(m: &PerformanceMatrix) -> Result<f64> {
    let n = need_one("CL-P", m)?;
    m.require("CL-P", cells((1..=n).map(|i| (i, i))))?;
    Ok((1..=n).map(|i| m.at(i, i)).sum::<f64>() / n as f64)
}

/// `1 - F`.
pub fn cl_stability(m: &PerformanceMatrix) -> Result<f64> {
    Ok(1.0 - forgetting(m)?)
}

/// Weighted harmonic mean of plasticity and stability; `beta > 1` leans
/// towards stability. Both inputs zero give zero.
pub fn cl_f_beta(plasticity: f64, stability: f64, beta: f64) -> Result<f64> {
    for (name, v) in [("plasticity", plasticity), ("stability", stability)] {
        if !(v.is_finite() && (0.0..=1.0).contains(&v)) {
            return Err(MetricsError::Domain(format!("{name} {v} is outside [0, 1]")));
        }
    }
    if !(beta.is_finite() && beta > 0.0) {
        return Err(MetricsError::Domain(format!("beta {beta} must be positive")));
    }
    let b2 = beta * beta;
    let denom = b2 * plasticity + stability;
    if denom == 0.0 {
        return Ok(0.0);
    }
    Ok((1.0 + b2) * plasticity * stability / denom)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttemptTiming {
    pub task_id: String,
    pub duration_seconds: f64,
    pub success: bool,
    pub tool_calls: u32,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunTimings {
    pub attempts: Vec<AttemptTiming>,
}

/// Median with the mean-of-middle-two convention for even counts.
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mid = sorted.len() / 2;
    Some(if sorted.len().is_multiple_of(2) {
        (sorted[mid - 1] + sorted[mid]) / 2.0
    } else {
        sorted[mid]
    })
}

/// `median(duration | success) / median(duration | all)`.
pub fn tool_use_efficiency(timings: &RunTimings) -> Result<f64> {
    if timings.attempts.is_empty() {
        return Err(MetricsError::Undefined {
            metric: "TUE",
            reason: "no attempts recorded".into(),
        });
    }
    if let Some(bad) = timings
        .attempts
        .iter()
        .find(|a| !(a.duration_seconds.is_finite() && a.duration_seconds > 0.0))
    {
        return Err(MetricsError::Domain(format!(
            "attempt on `{}` has non-positive duration {}",
            bad.task_id, bad.duration_seconds
        )));
    }
    let all: Vec<f64> = timings.attempts.iter().map(|a| a.duration_seconds).collect();
    let ok: Vec<f64> = timings
        .attempts
        .iter()
        .filter(|a| a.success)
        .map(|a| a.duration_seconds)
        .collect();
    let ok_median = median(&ok).ok_or(MetricsError::NoSuccesses)?;
    let all_median = median(&all).expect("non-empty checked above");
    Ok(ok_median / all_median)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScoreWeights {
    pub lambda_f: f64,
    pub lambda_ft: f64,
    pub lambda_bwt: f64,
    pub lambda_aulc: f64,
    /// Not part of the published composite; a non-zero value adds `λ_TUE·TUE`.
    pub lambda_tue: f64,
    pub beta: f64,
}

impl Default for ScoreWeights {
    fn default() -> Self {
        Self {
            lambda_f: 0.5,
            lambda_ft: 0.5,
            lambda_bwt: 0.5,
            lambda_aulc: 0.2,
            lambda_tue: 0.0,
            beta: 1.0,
        }
    }
}

impl ScoreWeights {
    pub fn zero() -> Self {
        Self {
            lambda_f: 0.0,
            lambda_ft: 0.0,
            lambda_bwt: 0.0,
            lambda_aulc: 0.0,
            lambda_tue: 0.0,
            beta: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let lambdas = [
            ("lambda_f", self.lambda_f),
            ("lambda_ft", self.lambda_ft),
            ("lambda_bwt", self.lambda_bwt),
            ("lambda_aulc", self.lambda_aulc),
            ("lambda_tue", self.lambda_tue),
        ];
        for (name, v) in lambdas {
            if !(v.is_finite() && v >= 0.0) {
                return Err(MetricsError::Domain(format!("{name} = {v} must be >= 0")));
            }
        }
        if !(self.beta.is_finite() && self.beta > 0.0) {
            return Err(MetricsError::Domain(format!("beta = {} must be > 0", self.beta)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AbsentMetric {
    pub metric: String,
    pub reason: String,
}

/// Every metric for one run. Metrics that cannot be computed are `None` and
/// listed in `absent` with the reason.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub n_tasks: usize,
    /// Mean of the diagonal success rates `a[i,i]`.
    pub sr_mean: Option<f64>,
    pub acc: Option<f64>,
    pub f: Option<f64>,
    pub ft: Option<f64>,
    pub bwt: Option<f64>,
    pub aulc: Option<f64>,
    pub tue: Option<f64>,
    pub cl_p: Option<f64>,
    pub cl_s: Option<f64>,
    pub cl_f1: Option<f64>,
    pub cl_f_beta: Option<f64>,
    pub cl_score: Option<f64>,
    pub weights: ScoreWeights,
    pub absent: Vec<AbsentMetric>,
}

struct Components {
    acc: f64,
    f: f64,
    ft: f64,
    bwt: f64,
    aulc: f64,
    cl_f_beta: f64,
    tue: Option<f64>,
}

fn cl_score(c: &Components, w: &ScoreWeights) -> f64 {
    let mut score = c.acc - w.lambda_f * c.f
        + w.lambda_ft * c.ft
        + w.lambda_bwt * c.bwt
        + w.lambda_aulc * c.aulc
        + c.cl_f_beta;
    if w.lambda_tue > 0.0 {
        score += w.lambda_tue * c.tue.expect("checked by caller");
    }
    score
}

/// Computes every metric, recording undefined ones as absent instead of
/// failing. Only invalid weights are an error.
pub fn evaluate(
    m: &PerformanceMatrix,
    timings: Option<&RunTimings>,
    weights: &ScoreWeights,
) -> Result<MetricsReport> {
    weights.validate()?;
    let mut absent = Vec::new();
    let mut keep = |name: &str, r: Result<f64>| -> Option<f64> {
        match r {
            Ok(v) => Some(v),
            Err(e) => {
                absent.push(AbsentMetric {
                    metric: name.to_string(),
                    reason: e.to_string(),
                });
                None
            }
        }
    };

    let acc = keep("ACC", accuracy(m));
    let f = keep("F", forgetting(m));
    let ft = keep("FT", forward_transfer(m));
    let bwt = keep("BWT", backward_transfer(m));
    let aulc = keep("AULC", aulc(m));
    let tue = match timings {
        Some(t) => keep("TUE", tool_use_efficiency(t)),
        None => keep(
            "TUE",
            Err(MetricsError::Undefined {
                metric: "TUE",
                reason: "no timings supplied".into(),
            }),
        ),
    };
    let cl_p = keep("CL-P", cl_plasticity(m));
    let cl_s = f.map(|f| 1.0 - f);
    if cl_s.is_none() {
        keep("CL-S", Err(MetricsError::Undefined { metric: "CL-S", reason: "forgetting is undefined".into() }));
    }
    let (cl_f1, cl_f_beta) = match (cl_p, cl_s) {
        (Some(p), Some(s)) => (
            keep("CL-F1", cl_f_beta(p, s, 1.0)),
            keep("CL-Fβ", cl_f_beta(p, s, weights.beta)),
        ),
        _ => {
            let why = || MetricsError::Undefined {
                metric: "CL-F",
                reason: "plasticity or stability is undefined".into(),
            };
            (keep("CL-F1", Err(why())), keep("CL-Fβ", Err(why())))
        }
    };
    let score = match (acc, f, ft, bwt, aulc, cl_f_beta) {
        (Some(acc), Some(f), Some(ft), Some(bwt), Some(aulc), Some(cl_f_beta))
            if weights.lambda_tue == 0.0 || tue.is_some() =>
        {
            Some(cl_score(
                &Components { acc, f, ft, bwt, aulc, cl_f_beta, tue },
                weights,
            ))
        }
        _ => keep(
            "CL-Score",
            Err(MetricsError::Undefined {
                metric: "CL-Score",
                reason: "a component metric is undefined".into(),
            }),
        ),
    };

    Ok(MetricsReport {
        n_tasks: m.n(),
        sr_mean: cl_p,
        acc,
        f,
        ft,
        bwt,
        aulc,
        tue,
        cl_p,
        cl_s,
        cl_f1,
        cl_f_beta,
        cl_score: score,
        weights: *weights,
        absent,
    })
}

/// Strict variant of [`evaluate`]: fails with the first component error when
/// the composite score cannot be formed.
pub fn composite_score(
    m: &PerformanceMatrix,
    timings: Option<&RunTimings>,
    weights: &ScoreWeights,
) -> Result<MetricsReport> {
    weights.validate()?;
    let acc = accuracy(m)?;
    let f = forgetting(m)?;
    let ft = forward_transfer(m)?;
    let bwt = backward_transfer(m)?;
    let aulc_v = aulc(m)?;
    let p = cl_plasticity(m)?;
    let fb = cl_f_beta(p, 1.0 - f, weights.beta)?;
    let tue = match timings {
        Some(t) if weights.lambda_tue > 0.0 => Some(tool_use_efficiency(t)?),
        None if weights.lambda_tue > 0.0 => {
            return Err(MetricsError::Undefined {
                metric: "TUE",
                reason: "lambda_tue > 0 but no timings supplied".into(),
            })
        }
        _ => None,
    };
    let score = cl_score(
        &Components { acc, f, ft, bwt, aulc: aulc_v, cl_f_beta: fb, tue },
        weights,
    );
    let mut report = evaluate(m, timings, weights)?;
    report.cl_score = Some(score);
    Ok(report)
}

impl MetricsReport {
    /// Markdown table with one row per metric.
    pub fn to_markdown(&self) -> String {
        let fmt = |v: Option<f64>| v.map_or_else(|| "n/a".to_string(), |v| format!("{v:.4}"));
        let rows = [
            ("SR", self.sr_mean, "Per-task success rate a[i,j] = passed / total tests (mean of a[i,i] shown)"),
            ("ACC", self.acc, "Average accuracy over all tasks after the last task"),
            ("F", self.f, "Average forgetting: drop from peak to final success on earlier tasks"),
            ("FT", self.ft, "Forward transfer: a[i,i+1] minus zero-shot success"),
            ("BWT", self.bwt, "Backward transfer: final minus just-learned success on earlier tasks"),
            ("AULC", self.aulc, "Area under the learning curve of a[i,i]"),
            ("TUE", self.tue, "Tool-use efficiency: median time of successes over median time of all attempts"),
            ("CL-P", self.cl_p, "Plasticity: mean of a[i,i]"),
            ("CL-S", self.cl_s, "Stability: 1 - F"),
            ("CL-F1", self.cl_f1, "Harmonic mean of CL-P and CL-S"),
            ("CL-Fβ", self.cl_f_beta, "Weighted harmonic mean of CL-P and CL-S"),
            ("CL-Score", self.cl_score, "ACC - λF·F + λFT·FT + λBWT·BWT + λAULC·AULC + CL-Fβ"),
        ];
        let mut out = String::from("| Metric | Value | Definition |\n|---|---:|---|\n");
        for (name, value, def) in rows {
            out.push_str(&format!("| {name} | {} | {def} |\n", fmt(value)));
        }
        let w = &self.weights;
        out.push_str(&format!(
            "\nWeights: λF={}, λFT={}, λBWT={}, λAULC={}, λTUE={}, β={}\n",
            w.lambda_f, w.lambda_ft, w.lambda_bwt, w.lambda_aulc, w.lambda_tue, w.beta
        ));
        if !self.absent.is_empty() {
            out.push_str("\nAbsent metrics:\n");
            for a in &self.absent {
                out.push_str(&format!("- {}: {}\n", a.metric, a.reason));
            }
        }
        out
    }
}
