mod common;

use std::collections::{BTreeMap, BTreeSet};

use mtsn::data::{
    epoch_batches, filter_language, generate_corpus, load_dataset, save_dataset, subset_fraction, CorpusSpec,
    Dataset,
};
use mtsn::Error;

fn key(e: &mtsn::data::Example) -> (String, String) {
    (e.utterance_id.clone(), e.speaker_id.clone())
}

fn keys(ds: &Dataset) -> BTreeSet<(String, String)> {
    ds.examples().iter().map(key).collect()
}

#[test]
fn dataset_round_trip_is_exact() {
    let dir = tempfile::tempdir().unwrap();
    let (train, test) = generate_corpus(&CorpusSpec::preset("table1-mini").unwrap()).unwrap();
    for (ds, name) in [(&train, "train"), (&test, "test")] {
        let path = save_dataset(ds, dir.path(), name).unwrap();
        let back = load_dataset(&path).unwrap();
        assert_eq!(&back, ds);
        for (a, b) in back.examples().iter().zip(ds.examples()) {
            assert!(a.acoustic.bit_eq(&b.acoustic) && a.teacher.bit_eq(&b.teacher));
        }
    }
}

#[test]
fn out_of_range_intent_names_record() {
    let dir = tempfile::tempdir().unwrap();
    let (train, _) = generate_corpus(&CorpusSpec::preset("table1-mini").unwrap()).unwrap();
    assert_eq!(train.meta().classes, 31);
    let path = save_dataset(&train, dir.path(), "train").unwrap();
    let records = dir.path().join("train.jsonl");
    let text = std::fs::read_to_string(&records).unwrap();
    let mut lines: Vec<String> = text.lines().map(str::to_string).collect();
    let mut rec: serde_json::Value = serde_json::from_str(&lines[2]).unwrap();
    rec["intent"] = 40.into();
    lines[2] = rec.to_string();
    std::fs::write(&records, lines.join("\n") + "\n").unwrap();
    match load_dataset(&path) {
        Err(Error::Validation { record, field, .. }) => {
            assert_eq!(record, 2);
            assert_eq!(field, "intent");
        }
        other => panic!("expected a validation error, got {other:?}"),
    }
}

#[test]
fn counts_match_bookkeeping() {
    for preset in ["default", "table1-mini", "hard"] {
        let spec = CorpusSpec::preset(preset).unwrap();
        let (train, test) = generate_corpus(&spec).unwrap();
        let (l, s) = (spec.languages.len(), spec.speakers);
        assert_eq!(train.len(), l * spec.train_utterances * s);
        assert_eq!(test.len(), l * spec.test_utterances * s);
        for lang in &spec.languages {
            assert_eq!(train.language_counts()[lang], spec.train_utterances * s);
            assert_eq!(test.language_counts()[lang], spec.test_utterances * s);
        }
        // Per-intent counts in the training split: texts cycle through intents.
        let mut per_intent: BTreeMap<usize, usize> = BTreeMap::new();
        for e in train.examples() {
            *per_intent.entry(e.intent).or_default() += 1;
        }
        for k in 0..spec.classes.min(spec.train_utterances) {
            let texts = (spec.train_utterances - k).div_ceil(spec.classes);
            assert_eq!(per_intent[&k], texts * s * l, "{preset} intent {k}");
        }
    }
}

#[test]
fn splits_share_no_utterance() {
    let (train, test) = generate_corpus(&CorpusSpec::default()).unwrap();
    let a: BTreeSet<_> = train.examples().iter().map(|e| e.utterance_id.clone()).collect();
    let b: BTreeSet<_> = test.examples().iter().map(|e| e.utterance_id.clone()).collect();
    assert!(a.is_disjoint(&b));
}

#[test]
fn zero_noise_teachers_are_nearest_centroid_separable() {
    let (train, test) = generate_corpus(&CorpusSpec::preset("separable").unwrap()).unwrap();
    let d = train.meta().teacher_dim;
    let mut centroids: BTreeMap<usize, (Vec<f64>, usize)> = BTreeMap::new();
    for e in train.examples() {
        let c = centroids.entry(e.intent).or_insert((vec![0.0; d], 0));
        c.0.iter_mut().zip(e.teacher.data()).for_each(|(a, b)| *a += b);
        c.1 += 1;
    }
    for e in test.examples() {
        let nearest = centroids
            .iter()
            .map(|(k, (sum, n))| {
                let dist: f64 = sum.iter().zip(e.teacher.data()).map(|(s, t)| (s / *n as f64 - t).powi(2)).sum();
                (dist, *k)
            })
            .min_by(|a, b| a.0.total_cmp(&b.0))
            .unwrap()
            .1;
        assert_eq!(nearest, e.intent);
    }
}

#[test]
fn language_filter_partitions() {
    let (train, _) = generate_corpus(&CorpusSpec::default()).unwrap();
    let all = filter_language(&train, train.languages()).unwrap();
    assert_eq!(all, train);
    let l1 = filter_language(&train, &["L1".into()]).unwrap();
    let l2 = filter_language(&train, &["L2".into()]).unwrap();
    assert!(keys(&l1).is_disjoint(&keys(&l2)));
    let union: BTreeSet<_> = keys(&l1).union(&keys(&l2)).cloned().collect();
    assert_eq!(union, keys(&train));
    assert_eq!(l1.len() + l2.len(), train.len());
    assert!(matches!(filter_language(&train, &["L9".into()]), Err(Error::Tag(t)) if t == "L9"));
}

fn strata(ds: &Dataset) -> BTreeMap<(String, usize), usize> {
    let mut m = BTreeMap::new();
    for e in ds.examples() {
        *m.entry((e.language.clone(), e.intent)).or_default() += 1;
    }
    m
}

#[test]
fn half_of_a_balanced_hundred() {
    let spec = CorpusSpec {
        classes: 5,
        train_utterances: 10,
        speakers: 5,
        ..CorpusSpec::default()
    };
    let (train, _) = generate_corpus(&spec).unwrap();
    assert_eq!(train.len(), 100);
    let half = subset_fraction(&train, 0.5, 3).unwrap();
    assert_eq!(half.len(), 50);
    for (_, n) in half.language_counts() {
        assert!((24..=26).contains(&n));
    }
    assert_eq!(subset_fraction(&train, 1.0, 3).unwrap(), train);
}

#[test]
fn subsets_nest_and_keep_proportions() {
    let (train, _) = generate_corpus(&CorpusSpec::preset("table1-mini").unwrap()).unwrap();
    let full = strata(&train);
    for seed in 0..5 {
        let subsets: Vec<Dataset> = [0.1, 0.5, 0.7]
            .iter()
            .map(|&f| subset_fraction(&train, f, seed).unwrap())
            .collect();
        for w in subsets.windows(2) {
            assert!(keys(&w[0]).is_subset(&keys(&w[1])));
        }
        for (ds, f) in subsets.iter().zip([0.1, 0.5, 0.7]) {
            let got = strata(ds);
            for (k, &n) in &full {
                let want = f * n as f64;
                let kept = got.get(k).copied().unwrap_or(0);
                let lo = (want.floor() as usize).max(1);
                let hi = (want.ceil() as usize).max(1);
                assert!((lo..=hi).contains(&kept), "{k:?}: kept {kept} of {n} at {f}");
            }
        }
        assert_eq!(subset_fraction(&train, 0.5, seed).unwrap(), subsets[1]);
    }
}

#[test]
fn batches_cover_each_index_once() {
    let b = epoch_batches(10, 3, 5, 0);
    assert_eq!(b.iter().map(Vec::len).collect::<Vec<_>>(), [3, 3, 3, 1]);
    assert_eq!(b, epoch_batches(10, 3, 5, 0));
    assert_ne!(b, epoch_batches(10, 3, 5, 1));
    for epoch in 0..20 {
        let mut all: Vec<usize> = epoch_batches(37, 4, 9, epoch).concat();
        all.sort_unstable();
        assert_eq!(all, (0..37).collect::<Vec<_>>());
    }
}

#[test]
fn same_seed_same_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let spec = common::tiny_spec(21);
    let write = |name: &str| {
        let (train, _) = generate_corpus(&spec).unwrap();
        save_dataset(&train, dir.path(), name).unwrap();
        std::fs::read(dir.path().join(format!("{name}.jsonl"))).unwrap()
    };
    assert_eq!(write("a"), write("b"));
}
