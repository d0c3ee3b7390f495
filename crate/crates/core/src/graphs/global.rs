use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::corpus::{ItemIndex, SessionCorpus};
use crate::error::{Error, Result};

/// Weighted ε-neighbor lists over all training sessions.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GlobalGraph {
    /// `neighbors[i - 1]` lists `(neighbor, weight)` for item `i`, heaviest
    /// first, ties by lower index.
    pub neighbors: Vec<Vec<(ItemIndex, u32)>>,
    pub eps: usize,
    pub max_neighbors: usize,
}

impl GlobalGraph {
    pub fn n_items(&self) -> usize {
        self.neighbors.len()
    }

    pub fn neighbors_of(&self, item: ItemIndex) -> &[(ItemIndex, u32)] {
        &self.neighbors[item as usize - 1]
    }
}

/// Symmetric co-occurrence counts within distance `eps`, before capping.
///
/// Every unordered position pair at distance `1..=eps` holding two different
/// items adds one to both `(i, j)` and `(j, i)`.
pub fn raw_cooccurrence(corpus: &SessionCorpus, eps: usize) -> BTreeMap<(ItemIndex, ItemIndex), u32> {
    let mut weights = BTreeMap::new();
    for items in corpus.item_sequences() {
        for p in 0..items.len() {
            for q in p + 1..items.len().min(p + eps + 1) {
                let (i, j) = (items[p], items[q]);
                if i == j {
                    continue;
                }
                *weights.entry((i, j)).or_insert(0) += 1;
                *weights.entry((j, i)).or_insert(0) += 1;
            }
        }
    }
    weights
}

/// Builds the global graph, keeping each item's `max_neighbors` heaviest
/// neighbors.
pub fn build_global_graph(train: &SessionCorpus, eps: usize, max_neighbors: usize) -> Result<GlobalGraph> {
    if eps == 0 || max_neighbors == 0 {
        return Err(Error::InvalidArgument("eps and max_neighbors must be >= 1".into()));
    }
    if train.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let mut neighbors = vec![Vec::new(); train.n_items()];
    for ((i, j), w) in raw_cooccurrence(train, eps) {
        neighbors[i as usize - 1].push((j, w));
    }
    for list in &mut neighbors {
        list.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
        list.truncate(max_neighbors);
    }
    Ok(GlobalGraph {
        neighbors,
        eps,
        max_neighbors,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_sessions_eps_one() {
        // a b c / b c d
        let c = SessionCorpus::from_index_sessions(4, vec![vec![1, 2, 3], vec![2, 3, 4]]).unwrap();
        let g = build_global_graph(&c, 1, 12).unwrap();
        assert_eq!(g.neighbors_of(2), &[(3, 2), (1, 1)]);
        assert_eq!(g.neighbors_of(1), &[(2, 1)]);
    }

    #[test]
    fn single_pair() {
        let c = SessionCorpus::from_index_sessions(2, vec![vec![1, 2]]).unwrap();
        for eps in 1..4 {
            let g = build_global_graph(&c, eps, 12).unwrap();
            assert_eq!(g.neighbors_of(1), &[(2, 1)]);
            assert_eq!(g.neighbors_of(2), &[(1, 1)]);
        }
    }

    #[test]
    fn repeated_pairs_accumulate_and_cap_breaks_ties_low() {
        let c = SessionCorpus::from_index_sessions(4, vec![vec![1, 2, 1, 2], vec![3, 1, 4]]).unwrap();
        let raw = raw_cooccurrence(&c, 1);
        assert_eq!(raw[&(1, 2)], 3);
        assert_eq!(raw[&(1, 3)], 1);
        let g = build_global_graph(&c, 1, 2).unwrap();
        assert_eq!(g.neighbors_of(1), &[(2, 3), (3, 1)]);
    }

    #[test]
    fn invalid_arguments() {
        let c = SessionCorpus::from_index_sessions(2, vec![vec![1, 2]]).unwrap();
        assert!(build_global_graph(&c, 0, 12).is_err());
        assert!(build_global_graph(&c, 3, 0).is_err());
        let empty = SessionCorpus::from_index_sessions(2, vec![]).unwrap();
        assert!(matches!(build_global_graph(&empty, 3, 12), Err(Error::EmptyCorpus)));
    }
}
