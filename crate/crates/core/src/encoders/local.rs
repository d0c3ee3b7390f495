use super::{item_rows, ItemReps, RepLevel};
use crate::error::{Error, Result};
use crate::graphs::LocalGraph;
use crate::numerics::{Tape, Tensor, Var};

/// Relation-aware attention over each node's session neighbors (self
/// included): `a_ij = LeakyReLU(w_rᵀ(x_i ⊙ x_j))`, softmax over `j`, and
/// `x^l_i = Σ_j α_ij x_j`.
///
/// `node_reps` rows are aligned to `graph.nodes`; `relations` is `4 × d`.
pub fn local_gcn<'a>(tape: &mut Tape<'a>, graph: &LocalGraph, node_reps: Var, relations: Var, slope: f64) -> Var {
    let adjacency = graph.adjacency();
    let mut src = Vec::new();
    let mut dst = Vec::new();
    let mut rel = Vec::new();
    let mut offsets = vec![0];
    for (i, list) in adjacency.iter().enumerate() {
        for &(j, r) in list {
            src.push(i);
            dst.push(j);
            rel.push(r.index());
        }
        offsets.push(src.len());
    }
    let xi = tape.gather_rows(node_reps, src);
    let xj = tape.gather_rows(node_reps, dst);
    let wr = tape.gather_rows(relations, rel);
    let prod = tape.mul(xi, xj);
    let prod = tape.mul(prod, wr);
    let logits = tape.sum_cols(prod);
    let logits = tape.leaky_relu(logits, slope);
    let alpha = tape.segment_softmax(logits, offsets.clone());
    let weighted = tape.mul_col(xj, alpha);
    tape.segment_sum(weighted, offsets)
}

/// Value-level local encoder over a full `n × d` embedding table.
pub fn local_gcn_forward(graph: &LocalGraph, emb: &Tensor, relation_vectors: &Tensor, slope: f64) -> Result<ItemReps> {
    if relation_vectors.rows() != 4 || relation_vectors.cols() != emb.cols() {
        return Err(Error::ShapeMismatch("relation vectors must be 4 x d".into()));
    }
    if graph.nodes.iter().any(|&i| i == 0 || i as usize > emb.rows()) {
        return Err(Error::InvalidArgument("graph node outside embedding table".into()));
    }
    let mut tape = Tape::new();
    let table = tape.leaf(emb);
    let rel = tape.leaf(relation_vectors);
    let nodes = tape.gather_rows(table, item_rows(&graph.nodes));
    let out = local_gcn(&mut tape, graph, nodes, rel, slope);
    tape.check()?;
    ItemReps::new(RepLevel::Local, graph.nodes.clone(), tape.value(out).clone())
}
