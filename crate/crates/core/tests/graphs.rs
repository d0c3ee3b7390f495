//! Graph builders against brute-force oracles.

mod common;

use std::collections::{BTreeMap, BTreeSet};

use cmgnn_core::corpus::{ItemIndex, SessionCorpus};
use cmgnn_core::graphs::{build_global_graph, build_hypergraph, build_local_graph, RelationType};
use cmgnn_core::numerics::Tensor;
use common::{assert_close, dense_incidence, global_oracle, local_oracle, random_corpus};
use proptest::prelude::*;

#[test]
fn builders_match_oracles_on_random_corpora() {
    for seed in 0..100 {
        let c = random_corpus(seed, 50, 10);
        for s in c.item_sequences() {
            let g = build_local_graph(s).unwrap();
            let (nodes, edges) = local_oracle(s);
            assert_eq!(g.nodes, nodes, "seed {seed}");
            assert_eq!(g.edges, edges, "seed {seed}");
        }
        for eps in 1..=3 {
            let g = build_global_graph(&c, eps, 12).unwrap();
            assert_eq!(g.neighbors, global_oracle(&c, eps, 12), "seed {seed} eps {eps}");
        }
        let h = build_hypergraph(&c).unwrap();
        let dense = dense_incidence(&c);
        let flat: Vec<f64> = dense.iter().flatten().copied().collect();
        assert_eq!(h.incidence().to_dense().data(), flat.as_slice(), "seed {seed}");
        let d: Vec<f64> = dense.iter().map(|r| r.iter().sum()).collect();
        let b: Vec<f64> = (0..c.len()).map(|e| dense.iter().map(|r| r[e]).sum()).collect();
        assert_eq!(h.vertex_degrees, d);
        assert_eq!(h.edge_degrees, b);
        assert!(h.edge_weights.iter().all(|&w| w == 1.0));
    }
}

#[test]
fn hyper_operator_fixes_constants() {
    for seed in 0..100 {
        let c = random_corpus(seed, 50, 10);
        let op = build_hypergraph(&c).unwrap().operator().unwrap();
        let ones = Tensor::matrix(c.n_items(), 1, vec![1.0; c.n_items()]).unwrap();
        let out = op.apply(&ones);
        assert_close(out.data(), ones.data(), 1e-12);
        let dense = op.to_dense();
        for r in 0..dense.rows() {
            assert!((dense.row(r).iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }
}

#[test]
fn hyper_worked_example() {
    // {a,b,c}, {c,d}; X0 = e_a
    let c = SessionCorpus::from_index_sessions(4, vec![vec![1, 2, 3], vec![3, 4]]).unwrap();
    let op = build_hypergraph(&c).unwrap().operator().unwrap();
    let x = Tensor::matrix(4, 1, vec![1.0, 0.0, 0.0, 0.0]).unwrap();
    assert_close(op.apply(&x).data(), &[1.0 / 3.0, 1.0 / 3.0, 1.0 / 6.0, 0.0], 1e-12);
}

#[test]
fn local_examples() {
    let g = build_local_graph(&[1, 2, 1]).unwrap();
    assert_eq!(g.edges[&(1, 2)], RelationType::InOut);
    assert_eq!(g.edges[&(2, 1)], RelationType::InOut);
    assert_eq!(g.edges.len(), 4);
    let g = build_hypergraph(&SessionCorpus::from_index_sessions(3, vec![vec![1, 2, 1, 3]]).unwrap()).unwrap();
    assert_eq!(g.hyperedges, vec![vec![1, 2, 3]]);
    assert_eq!(g.edge_degrees, vec![3.0]);
}

#[test]
fn global_thirty_sessions_eps_three() {
    let c = random_corpus(1234, 30, 10);
    let g = build_global_graph(&c, 3, usize::MAX).unwrap();
    assert_eq!(g.neighbors, global_oracle(&c, 3, usize::MAX));
}

proptest! {
    #[test]
    fn local_typing_survives_relabeling(
        session in prop::collection::vec(1u32..8, 1..12),
        perm in Just((1u32..=7).collect::<Vec<_>>()).prop_shuffle(),
    ) {
        let map = |i: ItemIndex| perm[i as usize - 1];
        let g = build_local_graph(&session).unwrap();
        let relabeled: Vec<ItemIndex> = session.iter().map(|&i| map(i)).collect();
        let h = build_local_graph(&relabeled).unwrap();
        let mapped: BTreeMap<_, _> = g.edges.iter().map(|(&(a, b), &r)| ((map(a), map(b)), r)).collect();
        prop_assert_eq!(mapped, h.edges);
    }

    #[test]
    fn global_weights_are_symmetric(seed in any::<u64>(), eps in 1usize..4) {
        let c = random_corpus(seed, 20, 8);
        let g = build_global_graph(&c, eps, usize::MAX).unwrap();
        let pairs: BTreeSet<(ItemIndex, ItemIndex, u32)> = (1..=c.n_items() as ItemIndex)
            .flat_map(|i| g.neighbors_of(i).iter().map(move |&(j, w)| (i, j, w)))
            .collect();
        for &(i, j, w) in &pairs {
            prop_assert!(pairs.contains(&(j, i, w)));
        }
    }

    #[test]
    fn hyper_degree_sums_agree(seed in any::<u64>()) {
        let c = random_corpus(seed, 30, 10);
        let h = build_hypergraph(&c).unwrap();
        let d: f64 = h.vertex_degrees.iter().sum();
        let b: f64 = h.edge_degrees.iter().sum();
        prop_assert_eq!(d, b);
        prop_assert_eq!(d as usize, h.incidence().nnz());
    }
}
