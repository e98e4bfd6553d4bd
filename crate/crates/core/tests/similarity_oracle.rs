mod common;

use std::collections::BTreeSet;

use clkit_core::dataset::DifficultyTier;
use clkit_core::sequence::{build_dataset, BuilderConfig};
use clkit_core::similarity::{
    jaccard, pairwise_report, tfidf_cosine, tokenize, SimilarityMode, SimilarityOptions, TfIdfModel,
};

const DOCS: [&str; 4] = [
    "def add(a, b): return a + b",
    "def add(x, y): return x + y + y",
    "class Parser: def parse(self, text): return text.split()",
    "return parse(text) if text else add(a, b)",
];

// tests/oracles/tfidf_oracle.py
const COSINES: [(usize, usize, f64); 6] = [
    (0, 1, 0.11766349244947233),
    (0, 2, 0.09894624179329423),
    (0, 3, 0.4850514050259881),
    (1, 2, 0.06489629957278809),
    (1, 3, 0.06829981947333857),
    (2, 3, 0.4568185807823911),
];

#[test]
fn tfidf_matches_reference_implementation() {
    let model = TfIdfModel::fit_texts(&DOCS);
    assert_eq!(model.vocabulary.len(), 15);
    assert!((model.idf[model.vocabulary["return"]] - 1.0).abs() < 1e-12);
    assert!((model.idf[model.vocabulary["class"]] - 1.916290731874155).abs() < 1e-12);
    for (i, j, want) in COSINES {
        let got = tfidf_cosine(&model, DOCS[i], DOCS[j]).unwrap();
        assert!((got - want).abs() < 1e-9, "({i},{j}) {got} vs {want}");
        let back = tfidf_cosine(&model, DOCS[j], DOCS[i]).unwrap();
        assert_eq!(got, back);
    }
    let self_sim = tfidf_cosine(&model, DOCS[2], DOCS[2]).unwrap();
    assert!((self_sim - 1.0).abs() < 1e-12);
}

fn brute_jaccard(a: &str, b: &str) -> f64 {
    let sa = tokenize(a);
    let sb = tokenize(b);
    let inter = sa.iter().filter(|t| sb.contains(*t)).count();
    let union: BTreeSet<&String> = sa.iter().chain(sb.iter()).collect();
    if union.is_empty() {
        1.0
    } else {
        inter as f64 / union.len() as f64
    }
}

#[test]
fn jaccard_report_matches_brute_force() {
    let shape: &[common::RepoShape] = &[("o/alpha", [8, 6, 2, 0]), ("o/beta", [10, 5, 0, 1])];
    let records = common::corpus(shape, 6, 5);
    let ds = build_dataset(&records, &BuilderConfig::default()).unwrap();
    let tasks: Vec<_> = ds.tasks().collect();
    let n = tasks.len();
    assert_eq!(n, 32);

    let opts = SimilarityOptions::default();
    let report = pairwise_report(&ds, SimilarityMode::Jaccard, &opts);
    assert_eq!(report.pair_count, n * (n - 1) / 2);

    let mut scores = Vec::new();
    let mut easy_medium = (0usize, 0.0f64);
    for i in 0..n {
        for j in i + 1..n {
            let s = brute_jaccard(&tasks[i].base.patch, &tasks[j].base.patch);
            let lib = jaccard(&tokenize(&tasks[i].base.patch), &tokenize(&tasks[j].base.patch));
            assert!((s - lib).abs() < 1e-15);
            let tiers = [tasks[i].difficulty(), tasks[j].difficulty()];
            if tiers.contains(&DifficultyTier::Easy) && tiers.contains(&DifficultyTier::Medium) {
                easy_medium.0 += 1;
                easy_medium.1 += s;
            }
            scores.push(s);
        }
    }
    let mean = scores.iter().sum::<f64>() / scores.len() as f64;
    assert!((report.mean - mean).abs() < 1e-12);
    assert_eq!(report.histogram.iter().map(|b| b.count).sum::<usize>(), scores.len());

    let stratum = report.stratum(DifficultyTier::Easy, DifficultyTier::Medium).unwrap();
    assert_eq!(stratum.pairs, easy_medium.0);
    assert!((stratum.mean - easy_medium.1 / easy_medium.0 as f64).abs() < 1e-12);

    let best = scores.iter().cloned().fold(f64::MIN, f64::max);
    assert_eq!(report.top_pairs[0].score, best);
    assert!(report.top_pairs.windows(2).all(|w| w[0].score >= w[1].score));
}

#[test]
fn tfidf_report_is_deterministic_and_bounded() {
    let shape: &[common::RepoShape] = &[("o/alpha", [9, 6, 1, 0])];
    let ds = build_dataset(&common::corpus(shape, 5, 9), &BuilderConfig::default()).unwrap();
    let opts = SimilarityOptions::default();
    let a = pairwise_report(&ds, SimilarityMode::TfIdfCosine, &opts);
    let b = pairwise_report(&ds, SimilarityMode::TfIdfCosine, &opts);
    assert_eq!(a, b);
    assert_eq!(a.pair_count, 16 * 15 / 2);
    assert!((0.0..=1.0).contains(&a.mean));
    assert!(a.zero_vector_tasks.is_empty());
}
