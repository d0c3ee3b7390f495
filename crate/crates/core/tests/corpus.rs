//! Loading, filtering, splitting and augmentation against direct oracles.

mod common;

use std::collections::HashMap;

use cmgnn_core::corpus::{
    augment_sequences, filter_corpus, parse_sessions, read_examples_jsonl, split_train_test, write_examples_jsonl,
    InputFormat, SessionCorpus, SessionRecord, Vocab,
};
use cmgnn_core::Error;
use common::random_corpus;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn raw_sessions(c: &SessionCorpus) -> Vec<Vec<String>> {
    c.item_sequences()
        .map(|s| s.iter().map(|&i| c.vocab.raw_id(i).unwrap().to_string()).collect())
        .collect()
}

/// Removes one offending item or session at a time until none is left.
fn filter_oracle(mut sessions: Vec<Vec<String>>, min_len: usize, min_freq: usize) -> Vec<Vec<String>> {
    loop {
        let mut freq: HashMap<String, usize> = HashMap::new();
        for i in sessions.iter().flatten() {
            *freq.entry(i.clone()).or_default() += 1;
        }
        if let Some(rare) = sessions.iter().flatten().find(|i| freq[*i] < min_freq).cloned() {
            for s in &mut sessions {
                s.retain(|i| *i != rare);
            }
            continue;
        }
        if let Some(k) = sessions.iter().position(|s| s.len() < min_len) {
            sessions.remove(k);
            continue;
        }
        return sessions;
    }
}

#[test]
fn filter_matches_fixpoint_oracle() {
    for seed in 0..200 {
        let c = random_corpus(seed, 10, 8);
        let want = filter_oracle(raw_sessions(&c), 2, 3);
        match filter_corpus(&c, 2, 3) {
            Ok(f) => {
                assert_eq!(raw_sessions(&f), want, "seed {seed}");
                assert!(f.item_frequencies().iter().all(|&n| n >= 3));
            }
            Err(Error::EmptyAfterFilter { .. }) => assert!(want.is_empty(), "seed {seed}"),
            Err(e) => panic!("{e}"),
        }
    }
}

#[test]
fn length_one_session_dropped() {
    // [[a], [a, b]]
    let c = SessionCorpus::from_index_sessions(2, vec![vec![1], vec![1, 2]]).unwrap();
    let f = filter_corpus(&c, 2, 1).unwrap();
    assert_eq!(raw_sessions(&f), vec![vec!["1".to_string(), "2".to_string()]]);
}

#[test]
fn interleaved_rows_group_and_sort() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut rows = Vec::new();
    for k in 0..60 {
        let sid = format!("u{}", rng.random_range(0..5));
        rows.push((
            sid,
            format!("i{}", rng.random_range(0..12)),
            rng.random_range(0..20i64),
            k,
        ));
    }
    let text: String = rows.iter().map(|(s, i, t, _)| format!("{s}\t{i}\t{t}\n")).collect();
    let c = parse_sessions(text.as_bytes(), InputFormat::Tsv).unwrap();

    let mut order: Vec<String> = Vec::new();
    for (s, ..) in &rows {
        if !order.contains(s) {
            order.push(s.clone());
        }
    }
    for (rec, sid) in c.sessions.iter().zip(&order) {
        let mut mine: Vec<_> = rows.iter().filter(|r| &r.0 == sid).collect();
        mine.sort_by_key(|r| (r.2, r.3));
        let items: Vec<&str> = rec.items.iter().map(|&i| c.vocab.raw_id(i).unwrap()).collect();
        let want: Vec<&str> = mine.iter().map(|r| r.1.as_str()).collect();
        assert_eq!(&rec.session_id, sid);
        assert_eq!(items, want);
    }
    assert_eq!(c.len(), order.len());
}

#[test]
fn missing_timestamp_is_a_line_error() {
    let err = parse_sessions("a\tx\t1\nb\ty\n".as_bytes(), InputFormat::Tsv).unwrap_err();
    assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");
    assert!(matches!(
        parse_sessions("".as_bytes(), InputFormat::Tsv),
        Err(Error::EmptyCorpus)
    ));
}

#[test]
fn day_holdout_selects_last_two_days() {
    let day = 86_400;
    let sessions: Vec<SessionRecord> = (1..=10)
        .map(|k| SessionRecord {
            session_id: format!("d{k}"),
            timestamp: k * day,
            items: vec![1, 2],
        })
        .collect();
    let c = SessionCorpus {
        sessions,
        vocab: Vocab::identity(2),
    };
    let (train, test) = split_train_test(&c, 2 * day).unwrap();
    let ids: Vec<&str> = test.sessions.iter().map(|s| s.session_id.as_str()).collect();
    assert_eq!(ids, ["d9", "d10"]);
    assert_eq!(train.len(), 8);
}

#[test]
fn augment_three_sessions_gives_seven_examples() {
    let c = SessionCorpus::from_index_sessions(5, vec![vec![1, 2], vec![1, 2, 3], vec![1, 2, 3, 4, 5]]).unwrap();
    let ex = augment_sequences(&c);
    assert_eq!(ex.len(), 7);
    assert_eq!(ex[0].prefix, vec![1]);
    assert_eq!(ex[0].target, 2);
    assert_eq!(ex[6].prefix, vec![1, 2, 3, 4]);
    assert_eq!(ex[6].target, 5);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ex.jsonl");
    write_examples_jsonl(&path, &ex).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    assert_eq!(text.lines().next().unwrap(), r#"{"prefix":[1],"target":2}"#);
    assert_eq!(read_examples_jsonl(&path).unwrap(), ex);
}

proptest! {
    #[test]
    fn augment_count_is_sum_of_lengths_minus_one(seed in any::<u64>()) {
        let c = random_corpus(seed, 40, 12);
        let want: usize = c.item_sequences().map(|s| s.len() - 1).sum();
        prop_assert_eq!(augment_sequences(&c).len(), want);
    }

    #[test]
    fn filter_is_idempotent(seed in any::<u64>(), freq in 1usize..4) {
        let c = random_corpus(seed, 30, 8);
        if let Ok(once) = filter_corpus(&c, 2, freq) {
            let twice = filter_corpus(&once, 2, freq).unwrap();
            prop_assert_eq!(once, twice);
        }
    }

    #[test]
    fn test_items_are_train_items(seed in any::<u64>(), holdout in 1i64..20) {
        let c = random_corpus(seed, 30, 8);
        if let Ok((train, test)) = split_train_test(&c, holdout) {
            let seen: std::collections::HashSet<_> = train.item_sequences().flatten().copied().collect();
            prop_assert!(test.item_sequences().flatten().all(|i| seen.contains(i)));
            prop_assert!(test.item_sequences().all(|s| s.len() >= 2));
        }
    }
}
