use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::{distinct, item_rows, ItemReps, RepLevel};
use crate::corpus::ItemIndex;
use crate::error::{Error, Result};
use crate::graphs::GlobalGraph;
use crate::numerics::params::GlobalLayerNames;
use crate::numerics::{ParamStore, Tape, Tensor, Var};

/// Source of the session summary used by the neighbor attention at layers
/// after the first.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionMean {
    /// Mean of the previous layer's representations.
    #[default]
    Previous,
    /// Mean of the layer-0 embeddings at every layer.
    Initial,
}

/// Tape handles for one global layer.
#[derive(Clone, Copy, Debug)]
pub struct GlobalLayer {
    /// `d × (d + 1)`.
    pub w1: Var,
    /// `d`.
    pub q1: Var,
    /// `d × 2d`.
    pub w2: Var,
}

/// Session-aware attention over ε-neighbors, stacked `layers.len()` times.
///
/// Per layer, with `s` the mean of the session's current representations:
/// `b_ij = q1ᵀ LeakyReLU(W1[(s ⊙ x_j) ∥ w_ij])`, softmax over `N(i)`,
/// `x_N = Σ_j b_ij x_j` and `x^g_i = ReLU(W2[x_i ∥ x_N])`. Items without
/// neighbors get `x_N = 0`. Deeper layers read the previous layer's outputs
/// for neighbors too, so the receptive field grows by one hop per layer.
///
/// Returns rows aligned to the distinct session items in order of first
/// appearance.
#[allow(clippy::too_many_arguments)]
pub fn global_gcn<'a>(
    tape: &mut Tape<'a>,
    graph: &GlobalGraph,
    session: &[ItemIndex],
    emb: Var,
    layers: &[GlobalLayer],
    slope: f64,
    mean_mode: SessionMean,
) -> Var {
    assert!(!layers.is_empty(), "global encoder needs at least one layer");
    assert!(!session.is_empty(), "global encoder needs a non-empty session");
    let d = tape.dims(emb).1;
    let depth = layers.len();

    // sets[t] holds the items whose layer-t output is needed
    let mut sets: Vec<Vec<ItemIndex>> = vec![Vec::new(); depth + 1];
    sets[depth] = distinct(session);
    for t in (1..=depth).rev() {
        let mut next = sets[t].clone();
        let mut seen: std::collections::HashSet<ItemIndex> = next.iter().copied().collect();
        for &i in &sets[t] {
            for &(j, _) in graph.neighbors_of(i) {
                if seen.insert(j) {
                    next.push(j);
                }
            }
        }
        sets[t - 1] = next;
    }

    let mut prev = tape.gather_rows(emb, item_rows(&sets[0]));
    let initial_mean = match mean_mode {
        SessionMean::Initial => {
            let occ = tape.gather_rows(emb, item_rows(session));
            Some(tape.mean_rows(occ))
        }
        SessionMean::Previous => None,
    };

    for t in 1..=depth {
        let layer = layers[t - 1];
        let pos: HashMap<ItemIndex, usize> = sets[t - 1].iter().enumerate().map(|(p, &i)| (i, p)).collect();

        let s = match initial_mean {
            Some(s) if t > 1 => s,
            _ => {
                let occ = tape.gather_rows(prev, session.iter().map(|i| pos[i]).collect());
                tape.mean_rows(occ)
            }
        };

        let mut offsets = vec![0];
        let mut edge_pos = Vec::new();
        let mut edge_w = Vec::new();
        for &i in &sets[t] {
            for &(j, w) in graph.neighbors_of(i) {
                edge_pos.push(pos[&j]);
                edge_w.push(w as f64);
            }
            offsets.push(edge_pos.len());
        }

        let width = sets[t].len();
        let neighborhood = if edge_pos.is_empty() {
            tape.constant(Tensor::zeros(&[width, d]))
        } else {
            // W1[(s ⊙ x_j) ∥ w] = (W1[:, :d] diag(s)) x_j + w · W1[:, d],
            // evaluated once per distinct neighbor
            let mut unique: Vec<usize> = edge_pos.clone();
            unique.sort_unstable();
            unique.dedup();
            let slot: HashMap<usize, usize> = unique.iter().enumerate().map(|(k, &p)| (p, k)).collect();
            let edge_slot: Vec<usize> = edge_pos.iter().map(|p| slot[p]).collect();

            let w1_left = tape.slice_cols(layer.w1, 0, d);
            let w1_last = tape.slice_cols(layer.w1, d, d + 1);
            let w1_last = tape.transpose(w1_last);
            let scaled = tape.mul_row(w1_left, s);
            let xu = tape.gather_rows(prev, unique);
            let projected = tape.matmul_nt(xu, scaled);
            let per_edge = tape.gather_rows(projected, edge_slot);
            let n_edges = edge_w.len();
            let weights = tape.constant(Tensor::from_parts(vec![n_edges, 1], edge_w));
            let weight_term = tape.matmul(weights, w1_last);
            let pre = tape.add(per_edge, weight_term);
            let act = tape.leaky_relu(pre, slope);
            let logits = tape.matmul_nt(act, layer.q1);
            let beta = tape.segment_softmax(logits, offsets.clone());
            let xj = tape.gather_rows(prev, edge_pos);
            let weighted = tape.mul_col(xj, beta);
            tape.segment_sum(weighted, offsets)
        };

        let own = tape.gather_rows(prev, sets[t].iter().map(|i| pos[i]).collect());
        let joined = tape.concat_cols(own, neighborhood);
        let out = tape.matmul_nt(joined, layer.w2);
        prev = tape.relu(out);
    }
    prev
}

/// Value-level global encoder for one session.
pub fn global_gcn_forward(
    graph: &GlobalGraph,
    session: &[ItemIndex],
    emb: &Tensor,
    params: &ParamStore,
    num_layers: usize,
    slope: f64,
) -> Result<ItemReps> {
    if num_layers == 0 {
        return Err(Error::InvalidArgument("global encoder needs at least one layer".into()));
    }
    if session.is_empty() {
        return Err(Error::InvalidArgument("empty session".into()));
    }
    if session
        .iter()
        .any(|&i| i == 0 || i as usize > graph.n_items() || i as usize > emb.rows())
    {
        return Err(Error::InvalidArgument("session item outside the global graph".into()));
    }
    let mut tape = Tape::new();
    let x = tape.leaf(emb);
    let mut layers = Vec::with_capacity(num_layers);
    for l in 0..num_layers {
        let names = GlobalLayerNames::new(l);
        layers.push(GlobalLayer {
            w1: tape.leaf(params.get(&names.w1)?),
            q1: tape.leaf(params.get(&names.q1)?),
            w2: tape.leaf(params.get(&names.w2)?),
        });
    }
    let out = global_gcn(&mut tape, graph, session, x, &layers, slope, SessionMean::Previous);
    tape.check()?;
    ItemReps::new(RepLevel::Global, distinct(session), tape.value(out).clone())
}
