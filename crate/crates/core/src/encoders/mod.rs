//! Graph-convolutional encoders producing local, global and hyper-level
//! item representations.

mod global;
mod hyper;
mod local;

use serde::{Deserialize, Serialize};

use crate::corpus::ItemIndex;
use crate::error::{Error, Result};
use crate::numerics::Tensor;

pub use global::{global_gcn, global_gcn_forward, GlobalLayer, SessionMean};
pub use hyper::{hyper_gcn, hyper_gcn_forward};
pub use local::{local_gcn, local_gcn_forward};

/// Which encoder produced a set of representations.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RepLevel {
    Local,
    Global,
    Hyper,
    Fused,
}

/// Item representations aligned row-by-row to `items`.
#[derive(Clone, Debug, PartialEq)]
pub struct ItemReps {
    pub level: RepLevel,
    pub items: Vec<ItemIndex>,
    pub reps: Tensor,
}

impl ItemReps {
    pub fn new(level: RepLevel, items: Vec<ItemIndex>, reps: Tensor) -> Result<Self> {
        if reps.rows() != items.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} rows for {} items",
                reps.rows(),
                items.len()
            )));
        }
        Ok(Self { level, items, reps })
    }

    pub fn dim(&self) -> usize {
        self.reps.cols()
    }

    pub fn row_of(&self, item: ItemIndex) -> Option<&[f64]> {
        self.items.iter().position(|&i| i == item).map(|p| self.reps.row(p))
    }
}

/// Zero-based table rows for 1-based item indices.
pub(crate) fn item_rows(items: &[ItemIndex]) -> Vec<usize> {
    items.iter().map(|&i| i as usize - 1).collect()
}

/// Distinct items in order of first appearance.
pub(crate) fn distinct(items: &[ItemIndex]) -> Vec<ItemIndex> {
    let mut seen = std::collections::HashSet::new();
    items.iter().copied().filter(|i| seen.insert(*i)).collect()
}
