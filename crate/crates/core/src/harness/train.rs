use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::{EvalPrefixes, TrainingConfig};
use super::metrics::{evaluate, MetricReport, DEFAULT_KS};
use crate::corpus::{
    augment_sequences, filter_corpus, full_session_examples, split_train_test, LabeledExample, SessionCorpus,
};
use crate::error::{Error, Result};
use crate::graphs::{build_global_graph, build_hypergraph, GlobalGraph, HyperGraph};
use crate::model::{Model, ModelSpec};
use crate::numerics::{adam_step, init_params, AttentionAudit, OptimizerState, ParamShapes, ParamStore, TensorArchive};

/// Corpora and labeled examples ready for training and evaluation.
#[derive(Clone, Debug)]
pub struct PreparedData {
    pub train: SessionCorpus,
    pub test: SessionCorpus,
    pub train_examples: Vec<LabeledExample>,
    pub test_examples: Vec<LabeledExample>,
}

/// Filter, time split and prefix expansion of a raw corpus.
pub fn prepare(corpus: &SessionCorpus, cfg: &TrainingConfig) -> Result<PreparedData> {
    let filtered = filter_corpus(corpus, cfg.min_len, cfg.min_item_freq)?;
    let (train, test) = split_train_test(&filtered, cfg.holdout_secs)?;
    prepare_split(train, test, cfg.eval_prefixes)
}

/// Prefix expansion of an existing train/test split.
pub fn prepare_split(train: SessionCorpus, test: SessionCorpus, eval: EvalPrefixes) -> Result<PreparedData> {
    let train_examples = augment_sequences(&train);
    let test_examples = match eval {
        EvalPrefixes::All => augment_sequences(&test),
        EvalPrefixes::Full => full_session_examples(&test),
    };
    if train_examples.is_empty() || test_examples.is_empty() {
        return Err(Error::Split("no labeled examples after expansion".into()));
    }
    Ok(PreparedData {
        train,
        test,
        train_examples,
        test_examples,
    })
}

/// Seeded split of training examples into (train, validation).
pub fn split_validation(
    examples: &[LabeledExample],
    fraction: f64,
    seed: u64,
) -> (Vec<LabeledExample>, Vec<LabeledExample>) {
    let n_val = ((examples.len() as f64) * fraction).round() as usize;
    let n_val = n_val.min(examples.len().saturating_sub(1));
    let mut idx: Vec<usize> = (0..examples.len()).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed.wrapping_add(1)));
    let mut is_val = vec![false; examples.len()];
    for &i in &idx[..n_val] {
        is_val[i] = true;
    }
    let (val, train): (Vec<_>, Vec<_>) = examples.iter().cloned().zip(is_val).partition(|(_, v)| *v);
    (
        train.into_iter().map(|(e, _)| e).collect(),
        val.into_iter().map(|(e, _)| e).collect(),
    )
}

/// Per-epoch training record.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    /// 1-based.
    pub epoch: usize,
    pub lr: f64,
    /// Example-weighted mean of the batch losses.
    pub loss: f64,
    pub rec_loss: f64,
    pub contrastive_loss: Option<f64>,
    pub batches: usize,
    pub validation: Option<MetricReport>,
    /// Attention-normalization audit, when enabled.
    pub attention: Option<AttentionAudit>,
}

/// Everything needed to resume or score a trained model.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: TrainingConfig,
    pub spec: ModelSpec,
    pub params: ParamStore,
    pub optimizer: OptimizerState,
    pub epochs_completed: usize,
    pub global: GlobalGraph,
    pub hyper: HyperGraph,
}

const PARAM_PREFIX: &str = "param/";
const FIRST_MOMENT_PREFIX: &str = "adam_m/";
const SECOND_MOMENT_PREFIX: &str = "adam_v/";

#[derive(Serialize, Deserialize)]
struct Meta {
    config: TrainingConfig,
    config_hash: String,
    spec: ModelSpec,
    epochs_completed: usize,
    adam_step: u64,
    base_lr: f64,
    decay_factor: f64,
    decay_every: usize,
    l2: f64,
    l2_exclude: Vec<String>,
    global_graph: GlobalGraph,
    hypergraph: HyperGraph,
}

impl Checkpoint {
    pub fn model(&self) -> Result<Model> {
        Model::new(
            self.spec.clone(),
            self.params.clone(),
            self.global.clone(),
            self.hyper.clone(),
        )
    }

    pub fn to_archive(&self) -> Result<TensorArchive> {
        let meta = Meta {
            config: self.config.clone(),
            config_hash: self.config.hash(),
            spec: self.spec.clone(),
            epochs_completed: self.epochs_completed,
            adam_step: self.optimizer.step,
            base_lr: self.optimizer.base_lr,
            decay_factor: self.optimizer.decay_factor,
            decay_every: self.optimizer.decay_every,
            l2: self.optimizer.l2,
            l2_exclude: self.optimizer.l2_exclude.clone(),
            global_graph: self.global.clone(),
            hypergraph: self.hyper.clone(),
        };
        let mut tensors = Vec::new();
        for (name, t) in self.params.iter() {
            tensors.push((format!("{PARAM_PREFIX}{name}"), t.clone()));
        }
        for (name, t) in &self.optimizer.first_moment {
            tensors.push((format!("{FIRST_MOMENT_PREFIX}{name}"), t.clone()));
        }
        for (name, t) in &self.optimizer.second_moment {
            tensors.push((format!("{SECOND_MOMENT_PREFIX}{name}"), t.clone()));
        }
        Ok(TensorArchive {
            meta: serde_json::to_value(meta)?,
            tensors,
        })
    }

    pub fn from_archive(archive: TensorArchive) -> Result<Self> {
        let meta: Meta = serde_json::from_value(archive.meta)?;
        if meta.config_hash != meta.config.hash() {
            return Err(Error::Checkpoint("config hash does not match stored config".into()));
        }
        let mut params = ParamStore::new();
        let mut first = std::collections::BTreeMap::new();
        let mut second = std::collections::BTreeMap::new();
        for (name, t) in archive.tensors {
            if let Some(n) = name.strip_prefix(PARAM_PREFIX) {
                params.insert(n, t);
            } else if let Some(n) = name.strip_prefix(FIRST_MOMENT_PREFIX) {
                first.insert(n.to_string(), t);
            } else if let Some(n) = name.strip_prefix(SECOND_MOMENT_PREFIX) {
                second.insert(n.to_string(), t);
            } else {
                return Err(Error::Checkpoint(format!("unexpected tensor `{name}`")));
            }
        }
        let optimizer = OptimizerState {
            first_moment: first,
            second_moment: second,
            step: meta.adam_step,
            base_lr: meta.base_lr,
            decay_factor: meta.decay_factor,
            decay_every: meta.decay_every,
            l2: meta.l2,
            l2_exclude: meta.l2_exclude,
        };
        let ckpt = Self {
            config: meta.config,
            spec: meta.spec,
            params,
            optimizer,
            epochs_completed: meta.epochs_completed,
            global: meta.global_graph,
            hyper: meta.hypergraph,
        };
        ckpt.model()?;
        Ok(ckpt)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        self.to_archive()?.to_bytes()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_archive()?.write(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_archive(TensorArchive::read(path)?)
    }
}

/// Result of a training run.
#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Checkpoint of the epoch with the best validation P@20 (the last
    /// epoch when there is no validation set).
    pub best: Checkpoint,
    pub best_epoch: usize,
    pub last: Checkpoint,
    pub history: Vec<EpochLog>,
}

/// Seed of the negative-sample corruption at optimizer step `step`.
pub fn corruption_seed(seed: u64, step: u64) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(step)
}

/// Trains on `examples` drawn from `train`, holding out a seeded
/// validation fraction. `observer` sees every epoch log as it is produced.
pub fn train(
    cfg: &TrainingConfig,
    train: &SessionCorpus,
    examples: &[LabeledExample],
    observer: &mut dyn FnMut(&EpochLog),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if examples.is_empty() {
        return Err(Error::InvalidArgument("no training examples".into()));
    }
    let global = build_global_graph(train, cfg.eps, cfg.max_neighbors)?;
    let hyper = build_hypergraph(train)?;
    let (fit, validation) = split_validation(examples, cfg.validation_fraction, cfg.seed);

    let longest = examples.iter().map(|e| e.prefix.len()).max().unwrap_or(1);
    let shapes = ParamShapes {
        n_items: train.n_items(),
        dim: cfg.dim,
        max_position: cfg.resolve_max_position(longest),
        global_layers: cfg.global_layers,
    };
    let params = init_params(&shapes, cfg.seed)?;
    let mut optimizer = OptimizerState::new(&params, cfg.lr, cfg.lr_decay, cfg.decay_every, cfg.l2);
    optimizer.l2_exclude = cfg.l2_exclude.clone();
    for name in &cfg.l2_exclude {
        params.get(name)?;
    }
    let mut model = Model::new(cfg.model_spec(), params, global, hyper)?;

    let snapshot = |model: &Model, optimizer: &OptimizerState, epochs: usize| Checkpoint {
        config: cfg.clone(),
        spec: model.spec.clone(),
        params: model.params.clone(),
        optimizer: optimizer.clone(),
        epochs_completed: epochs,
        global: model.global.clone(),
        hyper: model.hyper.clone(),
    };

    let mut best = snapshot(&model, &optimizer, 0);
    let mut best_epoch = 0;
    let mut best_score = f64::NEG_INFINITY;
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut order: Vec<usize> = (0..fit.len()).collect();
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(2));

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut shuffle_rng);
        let lr = optimizer.learning_rate(epoch);
        let mut audit = cfg.audit.then(AttentionAudit::default);
        let (mut loss, mut rec, mut contrastive, mut contrastive_n) = (0.0, 0.0, 0.0, 0usize);
        let mut batches = 0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<LabeledExample> = chunk.iter().map(|&i| fit[i].clone()).collect();
            let seed = corruption_seed(cfg.seed, optimizer.step);
            let out = model.batch_gradients(&batch, seed, cfg.audit)?;
            let w = batch.len() as f64;
            loss += out.loss.total * w;
            rec += out.loss.rec * w;
            if let Some(c) = out.loss.contrastive {
                contrastive += c * w;
                contrastive_n += batch.len();
            }
            if let (Some(acc), Some(a)) = (audit.as_mut(), out.audit.as_ref()) {
                acc.merge(a);
            }
            adam_step(&mut model.params, &out.grads, &mut optimizer, epoch)?;
            batches += 1;
        }
        let n = fit.len() as f64;
        let validation = if validation.is_empty() {
            None
        } else {
            Some(evaluate(&model.predictor()?, &validation, &DEFAULT_KS)?)
        };
        let log = EpochLog {
            epoch: epoch + 1,
            lr,
            loss: loss / n,
            rec_loss: rec / n,
            contrastive_loss: (contrastive_n > 0).then(|| contrastive / contrastive_n as f64),
            batches,
            validation,
            attention: audit,
        };
        if !log.loss.is_finite() {
            return Err(Error::NumericFault {
                primitive: "epoch loss",
            });
        }
        let score = log
            .validation
            .as_ref()
            .and_then(|v| v.precision(20))
            .unwrap_or(epoch as f64);
        if score > best_score {
            best_score = score;
            best_epoch = epoch + 1;
            best = snapshot(&model, &optimizer, epoch + 1);
        }
        observer(&log);
        history.push(log);
    }

    let last = snapshot(&model, &optimizer, cfg.epochs);
    Ok(TrainOutcome {
        best,
        best_epoch,
        last,
        history,
    })
}
