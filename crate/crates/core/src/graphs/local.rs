use std::collections::{BTreeMap, HashSet};

use serde::Serialize;

use crate::corpus::ItemIndex;
use crate::error::{Error, Result};

/// Edge relation in a session graph, seen from the source node.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum RelationType {
    /// Only `v_i → v_j` occurs.
    In,
    /// Only `v_j → v_i` occurs.
    Out,
    /// Both directions occur.
    InOut,
    /// Self-loop.
    SelfLoop,
}

impl RelationType {
    pub const ALL: [RelationType; 4] = [
        RelationType::In,
        RelationType::Out,
        RelationType::InOut,
        RelationType::SelfLoop,
    ];

    /// Row of this relation in the relation-vector table.
    pub fn index(self) -> usize {
        match self {
            RelationType::In => 0,
            RelationType::Out => 1,
            RelationType::InOut => 2,
            RelationType::SelfLoop => 3,
        }
    }
}

/// Directed graph over the distinct items of one session.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct LocalGraph {
    /// Distinct items in order of first appearance.
    pub nodes: Vec<ItemIndex>,
    /// Typed edges keyed by `(source, target)`, both orientations stored.
    #[serde(serialize_with = "edge_list")]
    pub edges: BTreeMap<(ItemIndex, ItemIndex), RelationType>,
}

fn edge_list<S: serde::Serializer>(
    edges: &BTreeMap<(ItemIndex, ItemIndex), RelationType>,
    s: S,
) -> std::result::Result<S::Ok, S::Error> {
    s.collect_seq(edges.iter().map(|(&(a, b), &r)| (a, b, r)))
}

impl LocalGraph {
    /// Position of `item` in [`LocalGraph::nodes`].
    pub fn position(&self, item: ItemIndex) -> Option<usize> {
        self.nodes.iter().position(|&n| n == item)
    }

    /// Per node (by position), its neighbors as `(position, relation)`
    /// including the self-loop, ordered by neighbor position.
    pub fn adjacency(&self) -> Vec<Vec<(usize, RelationType)>> {
        let pos: BTreeMap<ItemIndex, usize> = self.nodes.iter().enumerate().map(|(p, &n)| (n, p)).collect();
        let mut adj = vec![Vec::new(); self.nodes.len()];
        for (&(a, b), &r) in &self.edges {
            adj[pos[&a]].push((pos[&b], r));
        }
        for list in &mut adj {
            list.sort_by_key(|&(p, _)| p);
        }
        adj
    }
}

/// Builds the session graph: adjacent transitions typed by direction plus a
/// self-loop on every distinct item.
pub fn build_local_graph(session: &[ItemIndex]) -> Result<LocalGraph> {
    if session.is_empty() {
        return Err(Error::InvalidArgument("local graph of an empty session".into()));
    }
    let mut nodes = Vec::new();
    let mut seen = HashSet::new();
    for &i in session {
        if seen.insert(i) {
            nodes.push(i);
        }
    }
    let transitions: HashSet<(ItemIndex, ItemIndex)> = session
        .windows(2)
        .filter(|w| w[0] != w[1])
        .map(|w| (w[0], w[1]))
        .collect();

    let mut edges = BTreeMap::new();
    for &(a, b) in &transitions {
        let forward = transitions.contains(&(a, b));
        let backward = transitions.contains(&(b, a));
        let (ab, ba) = match (forward, backward) {
            (true, true) => (RelationType::InOut, RelationType::InOut),
            _ => (RelationType::In, RelationType::Out),
        };
        edges.insert((a, b), ab);
        edges.insert((b, a), ba);
    }
    for &n in &nodes {
        edges.insert((n, n), RelationType::SelfLoop);
    }
    Ok(LocalGraph { nodes, edges })
}
