use serde::Serialize;

use super::config::TrainingConfig;
use super::metrics::{evaluate, DEFAULT_KS};
use super::train::{train, PreparedData};
use crate::error::{Error, Result};

/// β values of the reference sweep.
pub const DEFAULT_BETAS: [f64; 5] = [0.001, 0.01, 0.02, 0.03, 0.05];

/// Test metrics for one β.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepRow {
    pub beta: f64,
    #[serde(rename = "P@10")]
    pub p10: f64,
    #[serde(rename = "P@20")]
    pub p20: f64,
    #[serde(rename = "MRR@10")]
    pub mrr10: f64,
    #[serde(rename = "MRR@20")]
    pub mrr20: f64,
}

/// Trains and evaluates once per β, everything else fixed.
pub fn sweep_beta(cfg: &TrainingConfig, data: &PreparedData, betas: &[f64]) -> Result<Vec<SweepRow>> {
    if betas.is_empty() {
        return Err(Error::InvalidArgument("no beta values".into()));
    }
    betas
        .iter()
        .map(|&beta| {
            let cfg = TrainingConfig { beta, ..cfg.clone() };
            let outcome = train(&cfg, &data.train, &data.train_examples, &mut |_| {})?;
            let model = outcome.best.model()?;
            let report = evaluate(&model.predictor()?, &data.test_examples, &DEFAULT_KS)?;
            let get = |v: Option<f64>| v.ok_or_else(|| Error::Invariant("missing cutoff".into()));
            Ok(SweepRow {
                beta,
                p10: get(report.precision(10))?,
                p20: get(report.precision(20))?,
                mrr10: get(report.mrr(10))?,
                mrr20: get(report.mrr(20))?,
            })
        })
        .collect()
}

/// Header plus one line per row.
pub fn sweep_csv(rows: &[SweepRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::InvalidArgument(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::InvalidArgument(e.to_string()))
}
