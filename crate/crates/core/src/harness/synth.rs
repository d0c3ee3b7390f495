use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{split_train_test, ItemIndex, SessionCorpus};
use crate::error::{Error, Result};

/// Settings of the planted-Markov session generator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_items: usize,
    pub n_train: usize,
    pub n_test: usize,
    /// Probability that a step jumps to a uniformly random item.
    pub noise: f64,
    pub min_len: usize,
    pub max_len: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_items: 50,
            n_train: 500,
            n_test: 100,
            noise: 0.1,
            min_len: 4,
            max_len: 12,
            seed: 7,
        }
    }
}

/// A fixed successor for every item: one random cycle through all items,
/// so no item is its own successor.
pub fn successor_table(n_items: usize, rng: &mut impl Rng) -> Vec<ItemIndex> {
    let mut order: Vec<ItemIndex> = (1..=n_items as ItemIndex).collect();
    order.shuffle(rng);
    let mut next = vec![0; n_items];
    for k in 0..n_items {
        next[order[k] as usize - 1] = order[(k + 1) % n_items];
    }
    next
}

/// Sessions that follow the successor table except for noisy jumps.
///
/// Session `k` gets timestamp `k`, so the last `n_test` sessions are the
/// newest.
pub fn planted_markov(cfg: &SynthConfig) -> Result<(SessionCorpus, Vec<ItemIndex>)> {
    if cfg.n_items < 2 || cfg.min_len < 2 || cfg.max_len < cfg.min_len || !(0.0..=1.0).contains(&cfg.noise) {
        return Err(Error::InvalidArgument(format!("bad synthetic settings: {cfg:?}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let next = successor_table(cfg.n_items, &mut rng);
    let total = cfg.n_train + cfg.n_test;
    let mut sessions = Vec::with_capacity(total);
    for _ in 0..total {
        let len = rng.random_range(cfg.min_len..=cfg.max_len);
        let mut cur: ItemIndex = rng.random_range(1..=cfg.n_items as ItemIndex);
        let mut s = vec![cur];
        while s.len() < len {
            cur = if rng.random::<f64>() < cfg.noise {
                rng.random_range(1..=cfg.n_items as ItemIndex)
            } else {
                next[cur as usize - 1]
            };
            s.push(cur);
        }
        sessions.push(s);
    }
    Ok((SessionCorpus::from_index_sessions(cfg.n_items, sessions)?, next))
}

/// Train and test corpora: the newest `n_test` sessions are held out.
pub fn planted_markov_split(cfg: &SynthConfig) -> Result<(SessionCorpus, SessionCorpus)> {
    let (corpus, _) = planted_markov(cfg)?;
    split_train_test(&corpus, cfg.n_test as i64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_sizes() {
        let (train, test) = planted_markov_split(&SynthConfig::default()).unwrap();
        assert_eq!(train.len(), 500);
        assert_eq!(test.len(), 100);
        assert_eq!(train.n_items(), 50);
    }

    #[test]
    fn mostly_follows_successor() {
        let cfg = SynthConfig::default();
        let (c, next) = planted_markov(&cfg).unwrap();
        let (mut hit, mut all) = (0usize, 0usize);
        for s in c.item_sequences() {
            for w in s.windows(2) {
                all += 1;
                hit += usize::from(next[w[0] as usize - 1] == w[1]);
            }
        }
        let rate = hit as f64 / all as f64;
        assert!((0.88..0.94).contains(&rate), "{rate}");
    }
}
