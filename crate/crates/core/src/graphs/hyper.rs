use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::corpus::{ItemIndex, SessionCorpus};
use crate::error::{Error, Result};
use crate::numerics::{CsrMatrix, Tensor};

/// Session hypergraph: one hyperedge per session over its distinct items.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HyperGraph {
    pub n_items: usize,
    /// Distinct items of each hyperedge, in order of first appearance.
    pub hyperedges: Vec<Vec<ItemIndex>>,
    /// `D[i] = Σ_e W[e]·H[i][e]`.
    pub vertex_degrees: Vec<f64>,
    /// `B[e] = Σ_i H[i][e]`.
    pub edge_degrees: Vec<f64>,
    /// Hyperedge weights, all 1.
    pub edge_weights: Vec<f64>,
}

impl HyperGraph {
    pub fn n_edges(&self) -> usize {
        self.hyperedges.len()
    }

    /// Binary incidence matrix `H` (`n_items × n_edges`), rows by item index.
    pub fn incidence(&self) -> CsrMatrix {
        let triplets: Vec<(usize, usize, f64)> = self
            .hyperedges
            .iter()
            .enumerate()
            .flat_map(|(e, items)| items.iter().map(move |&i| (i as usize - 1, e, 1.0)))
            .collect();
        CsrMatrix::from_triplets(self.n_items, self.n_edges(), &triplets)
    }

    /// Factored row-normalized propagation `D⁻¹ H W B⁻¹ Hᵀ`.
    pub fn operator(&self) -> Result<HyperOperator> {
        if let Some(i) = self.vertex_degrees.iter().position(|&d| d <= 0.0) {
            return Err(Error::Invariant(format!("item {} has zero hypergraph degree", i + 1)));
        }
        let h = self.incidence();
        let ht = h.transpose();
        let edge_scale: Vec<f64> = self
            .edge_weights
            .iter()
            .zip(&self.edge_degrees)
            .map(|(w, b)| w / b)
            .collect();
        let gather = ht.scale_rows(&edge_scale);
        let inv_d: Vec<f64> = self.vertex_degrees.iter().map(|d| 1.0 / d).collect();
        let scatter = h.scale_rows(&inv_d);
        Ok(HyperOperator {
            gather_t: gather.transpose(),
            scatter_t: scatter.transpose(),
            gather,
            scatter,
        })
    }
}

/// `D⁻¹ H W B⁻¹ Hᵀ = scatter · gather` with the transposes kept for
/// back-propagation.
#[derive(Clone, Debug, PartialEq)]
pub struct HyperOperator {
    /// `W B⁻¹ Hᵀ`, `n_edges × n_items`.
    pub gather: CsrMatrix,
    pub gather_t: CsrMatrix,
    /// `D⁻¹ H`, `n_items × n_edges`.
    pub scatter: CsrMatrix,
    pub scatter_t: CsrMatrix,
}

impl HyperOperator {
    /// One propagation step on a dense `n_items × d` matrix.
    pub fn apply(&self, x: &Tensor) -> Tensor {
        self.scatter.spmm(&self.gather.spmm(x))
    }

    /// The operator as a dense `n_items × n_items` matrix.
    pub fn to_dense(&self) -> Tensor {
        self.scatter
            .to_dense()
            .matmul(&self.gather.to_dense())
            .expect("compatible factors")
    }
}

/// One hyperedge per session; duplicate items within a session count once.
pub fn build_hypergraph(train: &SessionCorpus) -> Result<HyperGraph> {
    if train.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let n = train.n_items();
    let mut hyperedges = Vec::with_capacity(train.len());
    let mut vertex_degrees = vec![0.0; n];
    for items in train.item_sequences() {
        let mut seen = HashSet::new();
        let edge: Vec<ItemIndex> = items.iter().copied().filter(|i| seen.insert(*i)).collect();
        for &i in &edge {
            vertex_degrees[i as usize - 1] += 1.0;
        }
        hyperedges.push(edge);
    }
    let edge_degrees = hyperedges.iter().map(|e| e.len() as f64).collect();
    let edge_weights = vec![1.0; hyperedges.len()];
    Ok(HyperGraph {
        n_items: n,
        hyperedges,
        vertex_degrees,
        edge_degrees,
        edge_weights,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn worked_example_degrees() {
        // {a,b,c}, {c,d}
        let c = SessionCorpus::from_index_sessions(4, vec![vec![1, 2, 3], vec![3, 4]]).unwrap();
        let h = build_hypergraph(&c).unwrap();
        assert_eq!(h.edge_degrees, vec![3.0, 2.0]);
        assert_eq!(h.vertex_degrees, vec![1.0, 1.0, 2.0, 1.0]);
        let dense = h.incidence().to_dense();
        assert_eq!(dense.shape(), &[4, 2]);
        assert_eq!(dense.data(), &[1., 0., 1., 0., 1., 1., 0., 1.]);
    }

    #[test]
    fn minimal_hypergraph() {
        let c = SessionCorpus::from_index_sessions(2, vec![vec![1, 2]]).unwrap();
        let h = build_hypergraph(&c).unwrap();
        assert_eq!(h.incidence().to_dense().data(), &[1., 1.]);
        assert_eq!(h.vertex_degrees, vec![1.0, 1.0]);
        assert_eq!(h.edge_degrees, vec![2.0]);
    }

    #[test]
    fn duplicates_count_once() {
        let c = SessionCorpus::from_index_sessions(3, vec![vec![1, 2, 1, 3]]).unwrap();
        let h = build_hypergraph(&c).unwrap();
        assert_eq!(h.hyperedges[0], vec![1, 2, 3]);
        assert_eq!(h.edge_degrees, vec![3.0]);
    }

    #[test]
    fn propagation_of_indicator() {
        let c = SessionCorpus::from_index_sessions(4, vec![vec![1, 2, 3], vec![3, 4]]).unwrap();
        let op = build_hypergraph(&c).unwrap().operator().unwrap();
        let e_a = Tensor::matrix(4, 1, vec![1., 0., 0., 0.]).unwrap();
        let x1 = op.apply(&e_a);
        let expected = [1. / 3., 1. / 3., 1. / 6., 0.];
        for (a, b) in x1.data().iter().zip(expected) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn isolated_item_is_invariant_violation() {
        let c = SessionCorpus::from_index_sessions(3, vec![vec![1, 2]]).unwrap();
        assert!(matches!(
            build_hypergraph(&c).unwrap().operator(),
            Err(Error::Invariant(_))
        ));
    }
}
