use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::metrics::{ranked_items, Scorer};
use crate::corpus::{ItemIndex, SessionCorpus};
use crate::error::{Error, Result};

/// Non-neural rankers.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineMethod {
    Pop,
    ItemKnn,
}

impl BaselineMethod {
    pub fn name(self) -> &'static str {
        match self {
            BaselineMethod::Pop => "pop",
            BaselineMethod::ItemKnn => "itemknn",
        }
    }
}

impl fmt::Display for BaselineMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for BaselineMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pop" => Ok(BaselineMethod::Pop),
            "itemknn" | "item_knn" => Ok(BaselineMethod::ItemKnn),
            other => Err(Error::InvalidArgument(format!("unknown baseline `{other}`"))),
        }
    }
}

/// Scores every item by its training frequency.
#[derive(Clone, Debug)]
pub struct PopScorer {
    counts: Vec<f64>,
}

impl PopScorer {
    pub fn new(train: &SessionCorpus) -> Result<Self> {
        if train.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        Ok(Self {
            counts: train.item_frequencies().into_iter().map(|c| c as f64).collect(),
        })
    }
}

impl Scorer for PopScorer {
    fn n_items(&self) -> usize {
        self.counts.len()
    }

    fn scores(&self, _prefix: &[ItemIndex]) -> Result<Vec<f64>> {
        Ok(self.counts.clone())
    }
}

/// Cosine similarity between binary item-by-session incidence vectors,
/// anchored on the last prefix item.
#[derive(Clone, Debug)]
pub struct ItemKnnScorer {
    /// Sessions containing each item (0-based item rows).
    item_sessions: Vec<Vec<usize>>,
    /// Distinct items of each session.
    session_items: Vec<Vec<ItemIndex>>,
}

impl ItemKnnScorer {
    pub fn new(train: &SessionCorpus) -> Result<Self> {
        if train.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        let mut item_sessions = vec![Vec::new(); train.n_items()];
        let mut session_items = Vec::with_capacity(train.len());
        for (e, items) in train.item_sequences().enumerate() {
            let mut distinct: Vec<ItemIndex> = items.to_vec();
            distinct.sort_unstable();
            distinct.dedup();
            for &i in &distinct {
                item_sessions[i as usize - 1].push(e);
            }
            session_items.push(distinct);
        }
        Ok(Self {
            item_sessions,
            session_items,
        })
    }

    /// `|S_a ∩ S_j| / sqrt(|S_a| · |S_j|)` for every item `j`.
    pub fn similarities(&self, anchor: ItemIndex) -> Vec<f64> {
        let n = self.item_sessions.len();
        let mut shared = vec![0usize; n];
        let a = &self.item_sessions[anchor as usize - 1];
        for &e in a {
            for &j in &self.session_items[e] {
                shared[j as usize - 1] += 1;
            }
        }
        shared
            .iter()
            .zip(&self.item_sessions)
            .map(|(&s, sj)| {
                if s == 0 {
                    0.0
                } else {
                    s as f64 / ((a.len() * sj.len()) as f64).sqrt()
                }
            })
            .collect()
    }
}

impl Scorer for ItemKnnScorer {
    fn n_items(&self) -> usize {
        self.item_sessions.len()
    }

    /// The anchor itself is pushed below every other item.
    fn scores(&self, prefix: &[ItemIndex]) -> Result<Vec<f64>> {
        let &anchor = prefix
            .last()
            .ok_or_else(|| Error::InvalidArgument("empty prefix".into()))?;
        if anchor == 0 || anchor as usize > self.n_items() {
            return Err(Error::InvalidArgument(format!("item {anchor} outside the vocabulary")));
        }
        let mut s = self.similarities(anchor);
        s[anchor as usize - 1] = -1.0;
        Ok(s)
    }
}

/// A boxed scorer for `method`.
pub fn baseline_scorer(method: BaselineMethod, train: &SessionCorpus) -> Result<Box<dyn Scorer + Sync>> {
    Ok(match method {
        BaselineMethod::Pop => Box::new(PopScorer::new(train)?),
        BaselineMethod::ItemKnn => Box::new(ItemKnnScorer::new(train)?),
    })
}

/// Every item ranked by `method` for `prefix`, best first.
pub fn baseline_rank(method: BaselineMethod, train: &SessionCorpus, prefix: &[ItemIndex]) -> Result<Vec<ItemIndex>> {
    let scorer = baseline_scorer(method, train)?;
    Ok(ranked_items(&scorer.scores(prefix)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pop_orders_by_frequency() {
        // a:5, b:3, c:1
        let c = SessionCorpus::from_index_sessions(3, vec![vec![1, 2], vec![1, 2], vec![1, 2], vec![1, 3], vec![1, 1]])
            .unwrap();
        assert_eq!(baseline_rank(BaselineMethod::Pop, &c, &[3]).unwrap(), vec![1, 2, 3]);
    }

    #[test]
    fn always_together_is_top() {
        let c = SessionCorpus::from_index_sessions(4, vec![vec![1, 2], vec![2, 1, 3], vec![4, 1, 2]]).unwrap();
        let s = ItemKnnScorer::new(&c).unwrap().similarities(1);
        assert!((s[1] - 1.0).abs() < 1e-15);
        assert_eq!(baseline_rank(BaselineMethod::ItemKnn, &c, &[3, 1]).unwrap()[0], 2);
    }

    #[test]
    fn unknown_method() {
        assert!("gru4rec".parse::<BaselineMethod>().is_err());
    }
}
