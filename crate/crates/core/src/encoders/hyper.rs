use super::{ItemReps, RepLevel};
use crate::error::{Error, Result};
use crate::graphs::{HyperGraph, HyperOperator};
use crate::numerics::{Tape, Tensor, Var};

/// `X^(t+1) = D⁻¹HWB⁻¹Hᵀ X^(t)` for `layers` steps, returning the mean of
/// `X^(0) … X^(L)`.
pub fn hyper_gcn<'a>(tape: &mut Tape<'a>, op: &'a HyperOperator, emb: Var, layers: usize) -> Var {
    let mut current = emb;
    let mut total = emb;
    for _ in 0..layers {
        let edges = tape.spmm(&op.gather, &op.gather_t, current);
        current = tape.spmm(&op.scatter, &op.scatter_t, edges);
        total = tape.add(total, current);
    }
    tape.scale(total, 1.0 / (layers + 1) as f64)
}

/// Value-level hyper encoder over the full item table.
pub fn hyper_gcn_forward(graph: &HyperGraph, emb: &Tensor, num_layers: usize) -> Result<ItemReps> {
    if num_layers == 0 {
        return Err(Error::InvalidArgument("hyper encoder needs at least one layer".into()));
    }
    if emb.rows() != graph.n_items {
        return Err(Error::ShapeMismatch(format!(
            "embedding table has {} rows for {} items",
            emb.rows(),
            graph.n_items
        )));
    }
    let op = graph.operator()?;
    let mut tape = Tape::new();
    let x = tape.leaf(emb);
    let out = hyper_gcn(&mut tape, &op, x, num_layers);
    tape.check()?;
    let items = (1..=graph.n_items as u32).collect();
    ItemReps::new(RepLevel::Hyper, items, tape.value(out).clone())
}
