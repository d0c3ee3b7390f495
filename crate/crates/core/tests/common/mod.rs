#![allow(dead_code)]

use std::collections::BTreeMap;

use cmgnn_core::corpus::{ItemIndex, SessionCorpus};
use cmgnn_core::graphs::RelationType;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Up to `max_sessions` sessions of length `2..=max_len` over a small
/// vocabulary, re-labeled so every index `1..=n` occurs.
pub fn random_corpus(seed: u64, max_sessions: usize, max_len: usize) -> SessionCorpus {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let universe = rng.random_range(2..=30u32);
    let count = rng.random_range(1..=max_sessions);
    let sessions: Vec<Vec<ItemIndex>> = (0..count)
        .map(|_| {
            let len = rng.random_range(2..=max_len);
            (0..len).map(|_| rng.random_range(1..=universe)).collect()
        })
        .collect();
    relabel(sessions)
}

/// Maps items to `1..=k` in order of first appearance.
pub fn relabel(sessions: Vec<Vec<ItemIndex>>) -> SessionCorpus {
    let mut map = std::collections::HashMap::new();
    let sessions: Vec<Vec<ItemIndex>> = sessions
        .into_iter()
        .map(|s| {
            s.into_iter()
                .map(|i| {
                    let next = map.len() as ItemIndex + 1;
                    *map.entry(i).or_insert(next)
                })
                .collect()
        })
        .collect();
    SessionCorpus::from_index_sessions(map.len(), sessions).unwrap()
}

pub fn assert_close(got: &[f64], want: &[f64], tol: f64) {
    assert_eq!(got.len(), want.len(), "length");
    for (k, (a, b)) in got.iter().zip(want).enumerate() {
        assert!((a - b).abs() <= tol, "entry {k}: {a} vs {b}");
    }
}

/// Typed edges by checking every ordered node pair for a transition.
pub fn local_oracle(s: &[ItemIndex]) -> (Vec<ItemIndex>, BTreeMap<(ItemIndex, ItemIndex), RelationType>) {
    let mut nodes = Vec::new();
    for &i in s {
        if !nodes.contains(&i) {
            nodes.push(i);
        }
    }
    let step = |a: ItemIndex, b: ItemIndex| (0..s.len() - 1).any(|k| s[k] == a && s[k + 1] == b);
    let mut edges = BTreeMap::new();
    for &a in &nodes {
        edges.insert((a, a), RelationType::SelfLoop);
        for &b in &nodes {
            if a == b {
                continue;
            }
            match (step(a, b), step(b, a)) {
                (true, true) => {
                    edges.insert((a, b), RelationType::InOut);
                }
                (true, false) => {
                    edges.insert((a, b), RelationType::In);
                }
                (false, true) => {
                    edges.insert((a, b), RelationType::Out);
                }
                (false, false) => {}
            }
        }
    }
    (nodes, edges)
}

/// Neighbor lists from an all-pairs scan of every session.
pub fn global_oracle(c: &SessionCorpus, eps: usize, cap: usize) -> Vec<Vec<(ItemIndex, u32)>> {
    let n = c.n_items();
    let mut w = vec![vec![0u32; n + 1]; n + 1];
    for s in c.item_sequences() {
        for p in 0..s.len() {
            for q in 0..s.len() {
                let dist = p.abs_diff(q);
                if dist >= 1 && dist <= eps && s[p] != s[q] {
                    // each unordered position pair is visited twice
                    w[s[p] as usize][s[q] as usize] += 1;
                }
            }
        }
    }
    (1..=n)
        .map(|i| {
            let mut list: Vec<(ItemIndex, u32)> = (1..=n)
                .filter(|&j| w[i][j] > 0)
                .map(|j| (j as ItemIndex, w[i][j]))
                .collect();
            list.sort_by_key(|&(j, wt)| (std::cmp::Reverse(wt), j));
            list.truncate(cap);
            list
        })
        .collect()
}

/// `n_items × sessions` 0/1 matrix.
pub fn dense_incidence(c: &SessionCorpus) -> Vec<Vec<f64>> {
    let mut h = vec![vec![0.0; c.len()]; c.n_items()];
    for (e, s) in c.item_sequences().enumerate() {
        for &i in s {
            h[i as usize - 1][e] = 1.0;
        }
    }
    h
}
