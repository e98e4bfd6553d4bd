//! Synthetic corpus generator shared by the integration tests.
#![allow(dead_code)]

use chrono::{Duration, TimeZone, Utc};
use clkit_core::dataset::{DifficultyTier, TaskRecord};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const WORDS: &[&str] = &[
    "value", "index", "result", "config", "parse", "handle", "node", "item", "buffer",
    "cache", "token", "stream", "record", "field", "schema", "option", "default", "error",
    "path", "module", "frame", "axis", "unit", "scale", "format", "render", "query",
];

/// `(repo, [easy, medium, hard, very_hard])` task counts.
pub type RepoShape<'a> = (&'a str, [usize; 4]);

fn patch_for(rng: &mut ChaCha8Rng, files: &[String], repo_word: &str) -> String {
    let mut out = String::new();
    for f in files {
        let a = WORDS[rng.random_range(0..WORDS.len())];
        let b = WORDS[rng.random_range(0..WORDS.len())];
        let line = rng.random_range(1..200);
        out.push_str(&format!(
            "diff --git a/{f} b/{f}\n--- a/{f}\n+++ b/{f}\n@@ -{line},3 +{line},3 @@\n def {repo_word}_{a}(self):\n-    return self.{a}\n+    return self.{b}_{a}\n     pass\n"
        ));
    }
    out
}

/// Deterministic corpus with the given per-repository tier counts.
pub fn corpus(shape: &[RepoShape<'_>], files_per_repo: usize, seed: u64) -> Vec<TaskRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let start = Utc.with_ymd_and_hms(2019, 1, 1, 0, 0, 0).unwrap();
    let mut out = Vec::new();
    for (repo, counts) in shape {
        let word = repo.split('/').next_back().unwrap().replace('-', "_");
        let pool: Vec<String> = (0..files_per_repo)
            .map(|i| format!("{word}/mod_{i}.py"))
            .collect();
        let mut n = 0;
        for (tier, &count) in DifficultyTier::ALL.iter().zip(counts) {
            for _ in 0..count {
                n += 1;
                let k = rng.random_range(1..=2);
                let mut files: Vec<String> = (0..k)
                    .map(|_| pool[rng.random_range(0..pool.len())].clone())
                    .collect();
                files.sort();
                files.dedup();
                let id = format!("{}-{}", repo.replace('/', "__"), 1000 + n);
                out.push(TaskRecord {
                    instance_id: id.clone(),
                    repo: repo.to_string(),
                    base_commit: format!("{:08x}", rng.random::<u32>()),
                    created_at: start + Duration::hours(rng.random_range(0..40_000)),
                    problem_statement: format!(
                        "The {word} {} breaks when {} is empty ({id}).",
                        WORDS[rng.random_range(0..WORDS.len())],
                        WORDS[rng.random_range(0..WORDS.len())]
                    ),
                    hints_text: if rng.random_bool(0.3) {
                        Some(format!("Look at {}", files[0]))
                    } else {
                        None
                    },
                    patch: patch_for(&mut rng, &files, &word),
                    test_patch: String::new(),
                    fail_to_pass: vec![format!("tests/test_{word}.py::test_{n}")],
                    pass_to_pass: vec![format!("tests/test_{word}.py::test_base")],
                    difficulty: *tier,
                });
            }
        }
    }
    out
}

/// Raw per-repository tier counts shaped like the reference corpus: after
/// dropping repositories under 15 tasks and keeping the 50 earliest tasks in
/// curriculum order, the tabulated counts come out.
pub const REFERENCE_SHAPE: &[RepoShape<'static>] = &[
    ("django/django", [120, 80, 20, 1]),
    ("sympy/sympy", [25, 40, 9, 1]),
    ("sphinx-doc/sphinx", [22, 17, 4, 1]),
    ("matplotlib/matplotlib", [15, 19, 0, 0]),
    ("scikit-learn/scikit-learn", [13, 18, 1, 0]),
    ("astropy/astropy", [4, 15, 3, 0]),
    ("pydata/xarray", [5, 15, 1, 1]),
    ("pytest-dev/pytest", [8, 8, 3, 0]),
    ("psf/requests", [5, 3, 0, 0]),
    ("pylint-dev/pylint", [6, 5, 2, 1]),
];

/// `(repo, tasks, [easy, medium, hard, very_hard])` after building.
pub const REFERENCE_TABLE: &[(&str, usize, [usize; 4])] = &[
    ("django/django", 50, [50, 0, 0, 0]),
    ("sympy/sympy", 50, [25, 25, 0, 0]),
    ("sphinx-doc/sphinx", 44, [22, 17, 4, 1]),
    ("matplotlib/matplotlib", 34, [15, 19, 0, 0]),
    ("scikit-learn/scikit-learn", 32, [13, 18, 1, 0]),
    ("astropy/astropy", 22, [4, 15, 3, 0]),
    ("pydata/xarray", 22, [5, 15, 1, 1]),
    ("pytest-dev/pytest", 19, [8, 8, 3, 0]),
];
