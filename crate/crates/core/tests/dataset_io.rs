mod common;

use std::fs;

use minoseval::dataset::{
    dataset_stats, dataset_to_jsonl, load_dataset, parse_dataset, subset_indices, subset_replicates, DatasetError,
};
use minoseval::{CandidateResponse, EvalSample, QuestionKind};
use proptest::prelude::*;

fn sample_strategy() -> impl Strategy<Value = EvalSample> {
    (
        "[a-z0-9]{1,8}",
        "\\PC{1,40}",
        proptest::collection::vec("\\PC{1,30}", 1..4),
        proptest::collection::vec("\\PC{1,30}", 1..6),
        proptest::option::of(prop_oneof![Just(QuestionKind::Factoid), Just(QuestionKind::NonFactoid)]),
        any::<bool>(),
    )
        .prop_filter("non-blank texts", |(_, q, refs, _, _, _)| {
            !q.trim().is_empty() && refs.iter().all(|r| !r.trim().is_empty())
        })
        .prop_map(|(id, question, mut refs, texts, kind, with_gold)| {
            let responses: Vec<CandidateResponse> = texts
                .into_iter()
                .enumerate()
                .map(|(i, t)| CandidateResponse::new(format!("r{i}"), "m", t))
                .collect();
            let mut s = EvalSample::new(id, question, refs.remove(0), responses);
            s.extra_references = refs;
            s.kind = kind;
            if with_gold {
                s.gold_ranking = Some(s.responses.iter().rev().map(|r| r.response_id.clone()).collect());
            }
            s
        })
}

proptest! {
    #[test]
    fn serialize_then_load_is_a_fixed_point(samples in proptest::collection::vec(sample_strategy(), 1..6)) {
        let mut seen = std::collections::HashSet::new();
        let samples: Vec<EvalSample> = samples.into_iter().filter(|s| seen.insert(s.id.clone())).collect();
        let text = dataset_to_jsonl(&samples);
        let loaded = parse_dataset(&text).unwrap();
        prop_assert_eq!(&loaded, &samples);
        prop_assert_eq!(dataset_to_jsonl(&loaded), text);
    }

    #[test]
    fn stats_ignore_sample_order(seed in any::<u64>()) {
        let samples = common::synthetic_dataset(12, 1);
        let mut shuffled = samples.clone();
        use rand::seq::SliceRandom;
        use rand::SeedableRng;
        shuffled.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
        prop_assert_eq!(dataset_stats("d", &samples).unwrap(), dataset_stats("d", &shuffled).unwrap());
    }

    #[test]
    fn subsets_are_distinct_sorted_and_in_range(n in 1usize..30, k_frac in 0.0f64..=1.0, seed in any::<u64>()) {
        let k = ((n as f64) * k_frac) as usize;
        for subset in subset_indices(n, k, 5, seed).unwrap() {
            prop_assert_eq!(subset.len(), k);
            prop_assert!(subset.windows(2).all(|w| w[0] < w[1]));
            prop_assert!(subset.iter().all(|&i| i < n));
        }
    }
}

#[test]
fn subset_golden_fixture() {
    let golden: Vec<Vec<usize>> =
        serde_json::from_str(&fs::read_to_string("tests/fixtures/subsets_k2_of_4_seed42.json").unwrap()).unwrap();
    assert_eq!(subset_indices(4, 2, 5, 42).unwrap(), golden);

    let samples = common::synthetic_dataset(4, 2);
    let replicates = subset_replicates(&samples, 2, 5, 42).unwrap();
    for (rep, idx) in replicates.iter().zip(&golden) {
        let ids: Vec<&str> = rep.iter().map(|s| s.id.as_str()).collect();
        let expected: Vec<&str> = idx.iter().map(|&i| samples[i].id.as_str()).collect();
        assert_eq!(ids, expected);
    }
}

#[test]
fn full_size_subsets_cover_everything() {
    let samples = common::synthetic_dataset(6, 2);
    for rep in subset_replicates(&samples, 6, 3, 9).unwrap() {
        assert_eq!(rep, samples);
    }
    assert!(matches!(
        subset_replicates(&samples, 7, 1, 9),
        Err(DatasetError::KTooLarge { k: 7, available: 6 })
    ));
}

#[test]
fn load_is_all_or_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.jsonl");
    let mut text = dataset_to_jsonl(&common::synthetic_dataset(5, 4));
    text.push_str("{\"id\": \"broken\"}\n");
    fs::write(&path, &text).unwrap();
    match load_dataset(&path) {
        Err(DatasetError::SchemaViolation { line: 6, field, .. }) => assert_eq!(field, "question"),
        other => panic!("{other:?}"),
    }
}

#[test]
fn table_shaped_manifest() {
    // 683 samples with 299 factoid and 384 non-factoid, six responses each.
    let mut samples = common::synthetic_dataset(683, 3);
    for (i, s) in samples.iter_mut().enumerate() {
        s.kind = Some(if i < 299 { QuestionKind::Factoid } else { QuestionKind::NonFactoid });
        while s.responses.len() < 6 {
            let id = format!("extra{}", s.responses.len());
            s.responses.push(CandidateResponse::new(id, "m", "filler"));
        }
        s.responses.truncate(6);
        s.gold_ranking = None;
    }
    let m = dataset_stats("shape", &samples).unwrap();
    assert_eq!((m.samples, m.factoid_count, m.nonfactoid_count, m.unknown_kind_count), (683, 299, 384, 0));
    assert_eq!((m.responses_per_sample.min, m.responses_per_sample.max), (6, 6));
    assert_eq!(m.language, "mixed");
}
