use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::corpus::{ItemIndex, LabeledExample};
use crate::error::{Error, Result};
use crate::model::Predictor;

/// Cutoffs reported by default.
pub const DEFAULT_KS: [usize; 2] = [10, 20];

/// Rounds to 6 significant digits.
pub fn round6(x: f64) -> f64 {
    if x == 0.0 || !x.is_finite() {
        return x;
    }
    format!("{x:.5e}").parse().unwrap_or(x)
}

/// Anything that scores every item for a prefix; higher is better.
pub trait Scorer {
    fn n_items(&self) -> usize;
    /// One score per item, index `i` for item `i + 1`.
    fn scores(&self, prefix: &[ItemIndex]) -> Result<Vec<f64>>;
}

impl Scorer for Predictor<'_> {
    fn n_items(&self) -> usize {
        self.model().n_items()
    }

    fn scores(&self, prefix: &[ItemIndex]) -> Result<Vec<f64>> {
        self.logits(prefix)
    }
}

/// 1-based rank of `target`: one plus the items scoring strictly higher
/// plus the equal-scoring items with a lower index.
pub fn rank_of(scores: &[f64], target: ItemIndex) -> usize {
    let t = target as usize - 1;
    let st = scores[t];
    1 + scores
        .iter()
        .enumerate()
        .filter(|&(j, &s)| s > st || (s == st && j < t))
        .count()
}

/// Items ordered best first, ties by lower index.
pub fn ranked_items(scores: &[f64]) -> Vec<ItemIndex> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    order.into_iter().map(|i| i as ItemIndex + 1).collect()
}

/// Precision and MRR at one cutoff, in percent.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CutoffMetrics {
    pub k: usize,
    pub precision: f64,
    pub mrr: f64,
}

/// P@K and MRR@K over a test set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub num_examples: usize,
    pub cutoffs: Vec<CutoffMetrics>,
}

impl MetricReport {
    /// Builds a report from 1-based target ranks.
    pub fn from_ranks(ranks: &[usize], ks: &[usize]) -> Result<Self> {
        if ranks.is_empty() {
            return Err(Error::InvalidArgument("no examples to evaluate".into()));
        }
        let n = ranks.len() as f64;
        let cutoffs = ks
            .iter()
            .map(|&k| {
                let hits = ranks.iter().filter(|&&r| r <= k).count() as f64;
                let rr: f64 = ranks.iter().filter(|&&r| r <= k).map(|&r| 1.0 / r as f64).sum();
                CutoffMetrics {
                    k,
                    precision: round6(100.0 * hits / n),
                    mrr: round6(100.0 * rr / n),
                }
            })
            .collect();
        Ok(Self {
            num_examples: ranks.len(),
            cutoffs,
        })
    }

    pub fn at(&self, k: usize) -> Option<&CutoffMetrics> {
        self.cutoffs.iter().find(|c| c.k == k)
    }

    pub fn precision(&self, k: usize) -> Option<f64> {
        self.at(k).map(|c| c.precision)
    }

    pub fn mrr(&self, k: usize) -> Option<f64> {
        self.at(k).map(|c| c.mrr)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Header names for [`MetricReport::table_row`]: every P@K then every
    /// MRR@K.
    pub fn table_header(&self) -> Vec<String> {
        let mut h: Vec<String> = self.cutoffs.iter().map(|c| format!("P@{}", c.k)).collect();
        h.extend(self.cutoffs.iter().map(|c| format!("MRR@{}", c.k)));
        h
    }

    pub fn table_row(&self) -> Vec<String> {
        let mut r: Vec<String> = self.cutoffs.iter().map(|c| format!("{:.2}", c.precision)).collect();
        r.extend(self.cutoffs.iter().map(|c| format!("{:.2}", c.mrr)));
        r
    }
}

/// Aligned text table with one labeled row per report.
pub fn format_table(rows: &[(String, &MetricReport)]) -> String {
    let Some((_, first)) = rows.first() else {
        return String::new();
    };
    let header = first.table_header();
    let label_w = rows.iter().map(|(l, _)| l.len()).max().unwrap_or(0).max("method".len());
    let col_w = header.iter().map(String::len).max().unwrap_or(0).max(7);
    let mut out = format!("{:<label_w$}", "method");
    for h in &header {
        let _ = write!(out, "  {h:>col_w$}");
    }
    out.push('\n');
    for (label, report) in rows {
        let _ = write!(out, "{label:<label_w$}");
        for v in report.table_row() {
            let _ = write!(out, "  {v:>col_w$}");
        }
        out.push('\n');
    }
    out
}

/// Ranks every example's target under `scorer`.
pub fn target_ranks(scorer: &(dyn Scorer + Sync), examples: &[LabeledExample]) -> Result<Vec<usize>> {
    let n = scorer.n_items();
    for ex in examples {
        if ex.target == 0 || ex.target as usize > n {
            return Err(Error::InvalidArgument(format!("target {} outside 1..={n}", ex.target)));
        }
    }
    crate::parallel::map_ordered(examples, |ex| {
        let scores = scorer.scores(&ex.prefix)?;
        Ok(rank_of(&scores, ex.target))
    })
}

/// P@K and MRR@K of `scorer` over `examples`.
pub fn evaluate(scorer: &(dyn Scorer + Sync), examples: &[LabeledExample], ks: &[usize]) -> Result<MetricReport> {
    if examples.is_empty() {
        return Err(Error::InvalidArgument("empty test set".into()));
    }
    MetricReport::from_ranks(&target_ranks(scorer, examples)?, ks)
}
