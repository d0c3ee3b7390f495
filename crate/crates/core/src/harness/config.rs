use std::collections::BTreeSet;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::encoders::SessionMean;
use crate::error::{Error, Result};
use crate::model::{Ablation, ItemSource, ModelSpec};
use crate::readout::{ContrastiveForm, RecLoss};

/// Which test prefixes are scored.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalPrefixes {
    /// Every split prefix of every test session.
    #[default]
    All,
    /// Only the full-session prefix.
    Full,
}

/// Every knob of a training run. Keys in the flat `key=value` form match
/// the field names.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingConfig {
    pub dim: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub lr_decay: f64,
    pub decay_every: usize,
    pub l2: f64,
    /// Parameter names exempt from L2.
    pub l2_exclude: Vec<String>,
    pub eps: usize,
    pub max_neighbors: usize,
    pub hyper_layers: usize,
    pub global_layers: usize,
    pub beta: f64,
    pub epochs: usize,
    pub seed: u64,
    pub ablations: BTreeSet<Ablation>,
    pub leaky_slope: f64,
    /// Position-table rows; 0 picks the longest training prefix, capped at
    /// `max_position_cap`.
    pub max_position: usize,
    pub max_position_cap: usize,
    pub rec_loss: RecLoss,
    /// Negative-pair form of the contrastive term.
    pub contrastive: ContrastiveForm,
    pub session_mean: SessionMean,
    /// Held at 0; no dropout is applied anywhere.
    pub dropout: f64,
    pub validation_fraction: f64,
    pub eval_prefixes: EvalPrefixes,
    pub min_len: usize,
    pub min_item_freq: usize,
    /// Sessions ending within this many seconds of the newest go to test.
    pub holdout_secs: i64,
    /// Check attention normalization on every forward pass.
    pub audit: bool,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            dim: 100,
            batch_size: 256,
            lr: 0.001,
            lr_decay: 0.1,
            decay_every: 3,
            l2: 1e-5,
            l2_exclude: Vec::new(),
            eps: 3,
            max_neighbors: 12,
            hyper_layers: 1,
            global_layers: 2,
            beta: 0.001,
            epochs: 10,
            seed: 2024,
            ablations: BTreeSet::new(),
            leaky_slope: 0.2,
            max_position: 0,
            max_position_cap: 50,
            rec_loss: RecLoss::BinarySum,
            contrastive: ContrastiveForm::Printed,
            session_mean: SessionMean::Previous,
            dropout: 0.0,
            validation_fraction: 0.1,
            eval_prefixes: EvalPrefixes::All,
            min_len: 2,
            min_item_freq: 5,
            holdout_secs: 7 * 24 * 3600,
            audit: false,
        }
    }
}

fn snake<T: Serialize>(v: &T) -> String {
    match serde_json::to_value(v) {
        Ok(serde_json::Value::String(s)) => s,
        other => panic!("expected a unit variant, got {other:?}"),
    }
}

fn parse_enum<T: for<'de> Deserialize<'de>>(key: &str, value: &str) -> Result<T> {
    serde_json::from_value(serde_json::Value::String(value.to_string()))
        .map_err(|_| Error::Config(format!("bad value `{value}` for `{key}`")))
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("bad value `{value}` for `{key}`")))
}

fn parse_list(value: &str) -> Vec<String> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(String::from)
        .collect()
}

impl TrainingConfig {
    pub const KEYS: [&'static str; 28] = [
        "dim",
        "batch_size",
        "lr",
        "lr_decay",
        "decay_every",
        "l2",
        "l2_exclude",
        "eps",
        "max_neighbors",
        "hyper_layers",
        "global_layers",
        "beta",
        "epochs",
        "seed",
        "ablations",
        "leaky_slope",
        "max_position",
        "max_position_cap",
        "rec_loss",
        "contrastive",
        "session_mean",
        "dropout",
        "validation_fraction",
        "eval_prefixes",
        "min_len",
        "min_item_freq",
        "holdout_secs",
        "audit",
    ];

    /// Applies one `key=value` setting. Unknown keys are rejected.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        match key.trim() {
            "dim" => self.dim = parse_num(key, value)?,
            "batch_size" => self.batch_size = parse_num(key, value)?,
            "lr" => self.lr = parse_num(key, value)?,
            "lr_decay" => self.lr_decay = parse_num(key, value)?,
            "decay_every" => self.decay_every = parse_num(key, value)?,
            "l2" => self.l2 = parse_num(key, value)?,
            "l2_exclude" => self.l2_exclude = parse_list(value),
            "eps" => self.eps = parse_num(key, value)?,
            "max_neighbors" => self.max_neighbors = parse_num(key, value)?,
            "hyper_layers" => self.hyper_layers = parse_num(key, value)?,
            "global_layers" => self.global_layers = parse_num(key, value)?,
            "beta" => self.beta = parse_num(key, value)?,
            "epochs" => self.epochs = parse_num(key, value)?,
            "seed" => self.seed = parse_num(key, value)?,
            "ablations" => self.ablations = parse_list(value).iter().map(|s| s.parse()).collect::<Result<_>>()?,
            "leaky_slope" => self.leaky_slope = parse_num(key, value)?,
            "max_position" => self.max_position = parse_num(key, value)?,
            "max_position_cap" => self.max_position_cap = parse_num(key, value)?,
            "rec_loss" => self.rec_loss = parse_enum(key, value)?,
            "contrastive" => self.contrastive = parse_enum(key, value)?,
            "session_mean" => self.session_mean = parse_enum(key, value)?,
            "dropout" => self.dropout = parse_num(key, value)?,
            "validation_fraction" => self.validation_fraction = parse_num(key, value)?,
            "eval_prefixes" => self.eval_prefixes = parse_enum(key, value)?,
            "min_len" => self.min_len = parse_num(key, value)?,
            "min_item_freq" => self.min_item_freq = parse_num(key, value)?,
            "holdout_secs" => self.holdout_secs = parse_num(key, value)?,
            "audit" => self.audit = parse_num(key, value)?,
            other => return Err(Error::Config(format!("unknown key `{other}`"))),
        }
        Ok(())
    }

    /// Parses flat `key=value` lines over the defaults. `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.apply_text(text)?;
        Ok(cfg)
    }

    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key=value", n + 1)))?;
            self.set(k, v)
                .map_err(|e| Error::Config(format!("line {}: {e}", n + 1)))?;
        }
        Ok(())
    }

    /// Value of `key` as it would be written in a config file.
    pub fn get(&self, key: &str) -> Result<String> {
        let join = |v: &mut dyn Iterator<Item = String>| v.collect::<Vec<_>>().join(",");
        Ok(match key {
            "dim" => self.dim.to_string(),
            "batch_size" => self.batch_size.to_string(),
            "lr" => self.lr.to_string(),
            "lr_decay" => self.lr_decay.to_string(),
            "decay_every" => self.decay_every.to_string(),
            "l2" => self.l2.to_string(),
            "l2_exclude" => self.l2_exclude.join(","),
            "eps" => self.eps.to_string(),
            "max_neighbors" => self.max_neighbors.to_string(),
            "hyper_layers" => self.hyper_layers.to_string(),
            "global_layers" => self.global_layers.to_string(),
            "beta" => self.beta.to_string(),
            "epochs" => self.epochs.to_string(),
            "seed" => self.seed.to_string(),
            "ablations" => join(&mut self.ablations.iter().map(|a| a.name().to_string())),
            "leaky_slope" => self.leaky_slope.to_string(),
            "max_position" => self.max_position.to_string(),
            "max_position_cap" => self.max_position_cap.to_string(),
            "rec_loss" => snake(&self.rec_loss),
            "contrastive" => snake(&self.contrastive),
            "session_mean" => snake(&self.session_mean),
            "dropout" => self.dropout.to_string(),
            "validation_fraction" => self.validation_fraction.to_string(),
            "eval_prefixes" => snake(&self.eval_prefixes),
            "min_len" => self.min_len.to_string(),
            "min_item_freq" => self.min_item_freq.to_string(),
            "holdout_secs" => self.holdout_secs.to_string(),
            "audit" => self.audit.to_string(),
            other => return Err(Error::Config(format!("unknown key `{other}`"))),
        })
    }

    /// Every key in canonical order, one `key=value` per line.
    pub fn render(&self) -> String {
        let mut out = String::new();
        for key in Self::KEYS {
            let _ = writeln!(out, "{key}={}", self.get(key).expect("known key"));
        }
        out
    }

    /// First 16 hex digits of the SHA-256 of [`TrainingConfig::render`].
    pub fn hash(&self) -> String {
        Sha256::digest(self.render().as_bytes())
            .iter()
            .take(8)
            .map(|b| format!("{b:02x}"))
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("dim", self.dim),
            ("batch_size", self.batch_size),
            ("decay_every", self.decay_every),
            ("eps", self.eps),
            ("max_neighbors", self.max_neighbors),
            ("hyper_layers", self.hyper_layers),
            ("global_layers", self.global_layers),
            ("max_position_cap", self.max_position_cap),
        ];
        if let Some((k, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("`{k}` must be positive")));
        }
        if !self.lr.is_finite() || self.lr <= 0.0 {
            return Err(Error::Config("`lr` must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.lr_decay) || self.lr_decay == 0.0 {
            return Err(Error::Config("`lr_decay` must be in (0, 1]".into()));
        }
        if [self.l2, self.beta, self.leaky_slope]
            .iter()
            .any(|v| v.is_nan() || *v < 0.0)
        {
            return Err(Error::Config(
                "`l2`, `beta` and `leaky_slope` must be non-negative".into(),
            ));
        }
        if self.dropout != 0.0 {
            return Err(Error::Config(
                "`dropout` is a hook held at 0; other values are not supported".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return Err(Error::Config("`validation_fraction` must be in [0, 1)".into()));
        }
        if self.min_len < 2 || self.min_item_freq < 1 {
            return Err(Error::Config("`min_len` must be >= 2 and `min_item_freq` >= 1".into()));
        }
        if self.holdout_secs <= 0 {
            return Err(Error::Config("`holdout_secs` must be positive".into()));
        }
        let only: Vec<_> = self.ablations.iter().filter(|a| a.is_only()).collect();
        if !only.is_empty() && self.ablations.len() > 1 {
            return Err(Error::Config(format!(
                "`{}` cannot be combined with other ablations",
                only[0]
            )));
        }
        if self.ablations.contains(&Ablation::NoLocal) && self.ablations.contains(&Ablation::NoGlobal) {
            return Err(Error::Config(
                "`no_local` and `no_global` together leave no encoder".into(),
            ));
        }
        if self.ablations.contains(&Ablation::NoHyper) && self.ablations.contains(&Ablation::MseContrastive) {
            return Err(Error::Config(
                "`mse_contrastive` needs the hyper view that `no_hyper` removes".into(),
            ));
        }
        Ok(())
    }

    /// Position-table size for a training set whose longest prefix is
    /// `longest_prefix`.
    pub fn resolve_max_position(&self, longest_prefix: usize) -> usize {
        if self.max_position > 0 {
            self.max_position
        } else {
            longest_prefix.clamp(1, self.max_position_cap)
        }
    }

    /// Architecture with the ablations applied.
    pub fn model_spec(&self) -> ModelSpec {
        let has = |a| self.ablations.contains(&a);
        let contrastive = if has(Ablation::NoHyper) || self.ablations.iter().any(|a| a.is_only()) {
            None
        } else if has(Ablation::MseContrastive) {
            Some(ContrastiveForm::Mse)
        } else {
            Some(self.contrastive)
        };
        ModelSpec {
            dim: self.dim,
            global_layers: self.global_layers,
            hyper_layers: self.hyper_layers,
            leaky_slope: self.leaky_slope,
            session_mean: self.session_mean,
            use_local: !(has(Ablation::NoLocal) || has(Ablation::OnlyGlobal) || has(Ablation::OnlyHyper)),
            use_global: !(has(Ablation::NoGlobal) || has(Ablation::OnlyLocal) || has(Ablation::OnlyHyper)),
            item_source: if has(Ablation::OnlyHyper) {
                ItemSource::Hyper
            } else {
                ItemSource::Pairwise
            },
            attention_fusion: !has(Ablation::NoAttentionFusion),
            contrastive,
            beta: self.beta,
            rec_loss: self.rec_loss,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn render_parse_round_trip() {
        let mut cfg = TrainingConfig::default();
        cfg.set("ablations", "no_hyper,no_attention_fusion").unwrap();
        cfg.set("l2_exclude", "position_table").unwrap();
        cfg.set("contrastive", "standard").unwrap();
        let back = TrainingConfig::parse(&cfg.render()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.hash(), cfg.hash());
    }

    #[test]
    fn unknown_key_rejected() {
        assert!(TrainingConfig::parse("learning_rate=0.1").is_err());
        assert!(TrainingConfig::parse("rec_loss=hinge").is_err());
    }

    #[test]
    fn only_variants_exclusive() {
        let mut cfg = TrainingConfig::default();
        cfg.set("ablations", "only_local,no_hyper").unwrap();
        assert!(cfg.validate().is_err());
        cfg.set("ablations", "only_hyper").unwrap();
        cfg.validate().unwrap();
        let spec = cfg.model_spec();
        assert!(!spec.use_local && !spec.use_global && spec.contrastive.is_none());
    }

    #[test]
    fn defaults_match_documented_settings() {
        let cfg = TrainingConfig::default();
        assert_eq!((cfg.dim, cfg.batch_size, cfg.eps, cfg.max_neighbors), (100, 256, 3, 12));
        assert_eq!((cfg.lr, cfg.lr_decay, cfg.decay_every, cfg.l2), (0.001, 0.1, 3, 1e-5));
        assert_eq!((cfg.global_layers, cfg.hyper_layers, cfg.beta), (2, 1, 0.001));
        cfg.validate().unwrap();
    }
}
