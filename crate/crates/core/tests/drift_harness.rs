mod common;

use std::collections::BTreeSet;

use chrono::{TimeZone, Utc};
use clkit_core::dataset::{ClContext, ClTask, DifficultyTier, TaskRecord};
use clkit_core::drift::{
    aggregate, build_task_prompt, run_drift, run_trials, sample_pairs, t_interval, task_prompt,
    CiMethod, DriftConfig, PoisonPairSpec, Unrelatedness,
};
use clkit_core::gateway::{ChatModel, Embedder, GenerationParams, MockChat, MockEmbedder};
use clkit_core::sequence::{build_dataset, BuilderConfig};
use statrs::distribution::{ContinuousCDF, StudentsT};

// tests/oracles/t_interval_oracle.py
const SAMPLE: [f64; 20] = [
    0.41, 0.38, 0.52, 0.47, 0.29, 0.61, 0.44, 0.35, 0.50, 0.43, 0.39, 0.57, 0.48, 0.33, 0.46,
    0.40, 0.55, 0.37, 0.49, 0.42,
];
const T_975: [(f64, f64); 6] = [
    (1.0, 12.706204736432095),
    (2.0, 4.302652729696142),
    (5.0, 2.570581835636314),
    (9.0, 2.2621571628540993),
    (19.0, 2.093024054408263),
    (30.0, 2.0422724563012373),
];

#[test]
fn t_interval_matches_reference() {
    let (mean, lo, hi) = t_interval(&SAMPLE).unwrap();
    assert!((mean - 0.44299999999999995).abs() < 1e-12);
    assert!((lo - 0.40431405378739654).abs() < 1e-9);
    assert!((hi - 0.48168594621260336).abs() < 1e-9);
    assert!(t_interval(&SAMPLE[..1]).is_none());

    let mut reversed = SAMPLE;
    reversed.reverse();
    assert_eq!(t_interval(&reversed), t_interval(&SAMPLE));
}

#[test]
fn t_quantiles_match_reference() {
    for (df, want) in T_975 {
        let got = StudentsT::new(0.0, 1.0, df).unwrap().inverse_cdf(0.975);
        assert!((got - want).abs() < 1e-9, "df {df}: {got} vs {want}");
    }
}

fn golden_task() -> ClTask {
    ClTask {
        base: TaskRecord {
            instance_id: "django__django-11099".into(),
            repo: "django/django".into(),
            base_commit: "4c086d7da4c5cf23935a5340dbb9a8d6835cf7cc".into(),
            created_at: Utc.with_ymd_and_hms(2019, 3, 20, 0, 0, 0).unwrap(),
            problem_statement: "QuerySet.union() drops {repo} ordering when combined with values().\n"
                .into(),
            hints_text: Some("Look at compiler.get_combinator_sql".into()),
            patch: "--- a/django/db/models/query.py\n+++ b/django/db/models/query.py\n@@ -1 +1 @@\n-a\n+b\n"
                .into(),
            test_patch: String::new(),
            fail_to_pass: vec!["t".into()],
            pass_to_pass: vec![],
            difficulty: DifficultyTier::Medium,
        },
        continual_learning: ClContext {
            sequence_position: 0,
            difficulty_score: 2,
            dependencies: vec![],
            modified_files: BTreeSet::from([
                "django/db/models/query.py".to_string(),
                "django/db/models/sql/compiler.py".to_string(),
            ]),
        },
    }
}

#[test]
fn prompt_matches_golden_file() {
    let golden = include_str!("fixtures/golden_prompt.txt");
    let context = "### Memory 1: django__django-11001 (django/django)\nsuccess: true\n";
    assert_eq!(task_prompt(&golden_task(), context), golden);
}

#[test]
fn poisoned_prompt_layout() {
    let mut a = golden_task();
    a.base.instance_id = "django__django-10000".into();
    let b = golden_task();
    let poisoned = build_task_prompt(&b, Some(&a));
    let clean_a = task_prompt(&a, "");
    let clean_b = build_task_prompt(&b, None);
    assert!(poisoned.starts_with(&clean_a));
    assert!(poisoned.ends_with(&clean_b));
    let middle = &poisoned[clean_a.len()..poisoned.len() - clean_b.len()];
    assert_eq!(middle, format!("<patch>\n{}\n</patch>\n\n", a.base.patch.trim_end()));
}

fn fixture_dataset() -> clkit_core::dataset::ClDataset {
    let shape: &[common::RepoShape] = &[("o/alpha", [6, 5, 3, 1]), ("o/beta", [7, 5, 2, 1])];
    let ds = build_dataset(&common::corpus(shape, 4, 17), &BuilderConfig::default()).unwrap();
    assert_eq!(ds.task_count(), 30);
    ds
}

#[test]
fn sampled_pairs_satisfy_predicate_and_are_deterministic() {
    let ds = fixture_dataset();
    for rule in [Unrelatedness::Structural, Unrelatedness::CrossRepo] {
        for (s, t) in [
            (DifficultyTier::Easy, DifficultyTier::Easy),
            (DifficultyTier::Easy, DifficultyTier::Medium),
            (DifficultyTier::Medium, DifficultyTier::Easy),
        ] {
            let spec = PoisonPairSpec { d_src: s, d_tgt: t, n_pairs: 10, seed: 42 };
            let pairs = sample_pairs(&ds, &spec, rule).unwrap();
            assert_eq!(pairs.len(), 10);
            let mut seen = BTreeSet::new();
            for p in &pairs {
                assert_eq!((p.a.difficulty(), p.b.difficulty()), (s, t));
                let cross = p.a.base.repo != p.b.base.repo;
                let unrelated = match rule {
                    Unrelatedness::CrossRepo => cross,
                    Unrelatedness::Structural => {
                        cross
                            || (p.a.modified_files().intersection(p.b.modified_files()).count() == 0
                                && !p.a.dependencies().contains(&p.b.id().to_string())
                                && !p.b.dependencies().contains(&p.a.id().to_string()))
                    }
                };
                assert!(unrelated && p.a.id() != p.b.id());
                assert!(seen.insert((p.a.id().to_string(), p.b.id().to_string())));
            }
            assert_eq!(sample_pairs(&ds, &spec, rule).unwrap(), pairs);
            let other = PoisonPairSpec { seed: 43, ..spec };
            assert_ne!(sample_pairs(&ds, &other, rule).unwrap(), pairs);
        }
    }
    let spec = PoisonPairSpec {
        d_src: DifficultyTier::VeryHard,
        d_tgt: DifficultyTier::VeryHard,
        n_pairs: 10,
        seed: 1,
    };
    assert!(sample_pairs(&ds, &spec, Unrelatedness::Structural).is_err());
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    dot / (a.iter().map(|x| x * x).sum::<f64>().sqrt() * b.iter().map(|x| x * x).sum::<f64>().sqrt())
}

#[test]
fn mock_batch_matches_hand_aggregation() {
    let ds = fixture_dataset();
    let spec = PoisonPairSpec {
        d_src: DifficultyTier::Easy,
        d_tgt: DifficultyTier::Medium,
        n_pairs: 10,
        seed: 7,
    };
    let pairs = sample_pairs(&ds, &spec, Unrelatedness::Structural).unwrap();
    let chat = MockChat::Hashed;
    let embedder = MockEmbedder::new(64);
    let params = GenerationParams::default();

    let outcome = run_trials(&pairs, &chat, &embedder, &params, 4).unwrap();
    assert_eq!(outcome.records.len(), 10);
    assert!(outcome.failures.is_empty());

    let mut by_hand = Vec::new();
    for (p, r) in pairs.iter().zip(&outcome.records) {
        let clean = chat.generate(&build_task_prompt(&p.b, None), &params).unwrap().text;
        let poisoned = chat.generate(&build_task_prompt(&p.b, Some(&p.a)), &params).unwrap().text;
        let d = 1.0 - cosine(&embedder.embed(&clean).unwrap().vector, &embedder.embed(&poisoned).unwrap().vector);
        assert!((r.drift - d).abs() < 1e-12);
        assert_eq!((r.task_a.as_str(), r.task_b.as_str()), (p.a.id(), p.b.id()));
        by_hand.push(d);
    }
    let n = by_hand.len() as f64;
    let mean = by_hand.iter().sum::<f64>() / n;
    let var = by_hand.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let half = 2.2621571628540993 * (var / n).sqrt();

    let report = aggregate(&outcome.records, CiMethod::StudentT);
    let g = report.group(DifficultyTier::Easy, DifficultyTier::Medium).unwrap();
    assert_eq!(g.n, 10);
    assert!((g.mean - mean).abs() < 1e-12);
    assert!((g.ci_low.unwrap() - (mean - half)).abs() < 1e-9);
    assert!((g.ci_high.unwrap() - (mean + half)).abs() < 1e-9);
    assert_eq!(g.high_drift, mean >= 0.3);

    let serial = run_trials(&pairs, &chat, &embedder, &params, 1).unwrap();
    assert_eq!(serial, outcome);
    let again = aggregate(&serial.records, CiMethod::StudentT);
    assert_eq!(again.to_json(), report.to_json());
    assert_eq!(again.to_csv(), report.to_csv());
}

#[test]
fn full_run_is_reproducible_and_warns_on_sparse_groups() {
    let ds = fixture_dataset();
    let cfg = DriftConfig { n_pairs: 5, seed: 3, ..DriftConfig::default() };
    let chat = MockChat::Hashed;
    let embedder = MockEmbedder::new(32);
    let params = GenerationParams::default();
    let a = run_drift(&ds, &cfg, &chat, &embedder, &params, 3).unwrap();
    let b = run_drift(&ds, &cfg, &chat, &embedder, &params, 1).unwrap();
    assert_eq!(a, b);
    assert!(a.report.groups.len() < 16);
    assert!(!a.report.warnings.is_empty());
    assert!(a.report.groups.iter().all(|g| g.n == 5));
    assert!(a.records.iter().all(|r| (0.0..=2.0).contains(&r.drift)));

    let same = run_drift(&ds, &cfg, &MockChat::Constant("x".into()), &embedder, &params, 2).unwrap();
    assert!(same.records.iter().all(|r| r.drift.abs() < 1e-12));
}
