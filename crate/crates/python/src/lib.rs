//! Python bindings: corpora, graphs, configs, training, scoring and metrics.

use std::path::PathBuf;

use cmgnn_core::corpus::{
    augment_sequences, filter_corpus, load_sessions, split_train_test, InputFormat, ItemIndex, LabeledExample,
    SessionCorpus,
};
use cmgnn_core::graphs::{build_global_graph, build_hypergraph, build_local_graph, RelationType};
use cmgnn_core::harness::{
    self, baseline_rank, evaluate, gradcheck_suite, planted_markov_split, ranked_items, BaselineMethod, Checkpoint,
    EpochLog, MetricReport, SynthConfig, TrainingConfig, DEFAULT_KS,
};
use pyo3::create_exception;
use pyo3::exceptions::PyException;
use pyo3::prelude::*;

create_exception!(cmgnn, CmgnnError, PyException, "Error raised by the CM-GNN core.");

fn err(e: cmgnn_core::Error) -> PyErr {
    CmgnnError::new_err(e.to_string())
}

fn relation_name(r: RelationType) -> &'static str {
    match r {
        RelationType::In => "in",
        RelationType::Out => "out",
        RelationType::InOut => "in_out",
        RelationType::SelfLoop => "self_loop",
    }
}

fn to_examples(pairs: Vec<(Vec<ItemIndex>, ItemIndex)>) -> Vec<LabeledExample> {
    pairs
        .into_iter()
        .map(|(prefix, target)| LabeledExample { prefix, target })
        .collect()
}

/// `{k: (precision, mrr)}` in percent.
fn report_pairs(report: &MetricReport) -> Vec<(usize, f64, f64)> {
    report.cutoffs.iter().map(|c| (c.k, c.precision, c.mrr)).collect()
}

/// Sessions over a shared item vocabulary; items are 1-based indices.
#[pyclass(name = "SessionCorpus", module = "cmgnn", from_py_object)]
#[derive(Clone)]
struct PyCorpus {
    inner: SessionCorpus,
}

#[pymethods]
impl PyCorpus {
    /// Corpus over items `1..=n_items`; session `k` gets timestamp `k`.
    #[new]
    fn new(n_items: usize, sessions: Vec<Vec<ItemIndex>>) -> PyResult<Self> {
        let inner = SessionCorpus::from_index_sessions(n_items, sessions).map_err(err)?;
        Ok(Self { inner })
    }

    /// Reads a tsv, csv or jsonl session log.
    #[staticmethod]
    #[pyo3(signature = (path, format=None))]
    fn load(path: PathBuf, format: Option<&str>) -> PyResult<Self> {
        let format = match format {
            Some(f) => f.parse::<InputFormat>().map_err(err)?,
            None => InputFormat::from_path(&path),
        };
        Ok(Self {
            inner: load_sessions(&path, format).map_err(err)?,
        })
    }

    #[getter]
    fn n_items(&self) -> usize {
        self.inner.n_items()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn __repr__(&self) -> String {
        format!(
            "SessionCorpus(sessions={}, items={})",
            self.inner.len(),
            self.inner.n_items()
        )
    }

    fn sessions(&self) -> Vec<Vec<ItemIndex>> {
        self.inner.item_sequences().map(|s| s.to_vec()).collect()
    }

    fn timestamps(&self) -> Vec<i64> {
        self.inner.sessions.iter().map(|s| s.timestamp).collect()
    }

    /// Raw id of a 1-based item index.
    fn raw_id(&self, item: ItemIndex) -> Option<String> {
        self.inner.vocab.raw_id(item).map(str::to_string)
    }

    fn index_of(&self, raw: &str) -> Option<ItemIndex> {
        self.inner.vocab.get(raw)
    }

    fn filter(&self, min_len: usize, min_item_freq: usize) -> PyResult<Self> {
        Ok(Self {
            inner: filter_corpus(&self.inner, min_len, min_item_freq).map_err(err)?,
        })
    }

    /// `(train, test)` with the last `holdout_secs` seconds held out.
    fn split(&self, holdout_secs: i64) -> PyResult<(Self, Self)> {
        let (a, b) = split_train_test(&self.inner, holdout_secs).map_err(err)?;
        Ok((Self { inner: a }, Self { inner: b }))
    }

    /// Every `(prefix, next_item)` pair.
    fn examples(&self) -> Vec<(Vec<ItemIndex>, ItemIndex)> {
        augment_sequences(&self.inner)
            .into_iter()
            .map(|e| (e.prefix, e.target))
            .collect()
    }
}

/// Flat `key = value` training configuration.
#[pyclass(name = "TrainingConfig", module = "cmgnn", from_py_object)]
#[derive(Clone)]
struct PyConfig {
    inner: TrainingConfig,
}

#[pymethods]
impl PyConfig {
    #[new]
    #[pyo3(signature = (**overrides))]
    fn new(overrides: Option<std::collections::HashMap<String, Bound<'_, PyAny>>>) -> PyResult<Self> {
        let mut inner = TrainingConfig::default();
        for (k, v) in overrides.unwrap_or_default() {
            inner.set(&k, &v.str()?.to_string_lossy()).map_err(err)?;
        }
        inner.validate().map_err(err)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    fn parse(text: &str) -> PyResult<Self> {
        Ok(Self {
            inner: TrainingConfig::parse(text).map_err(err)?,
        })
    }

    #[staticmethod]
    fn keys() -> Vec<&'static str> {
        TrainingConfig::KEYS.to_vec()
    }

    fn set(&mut self, key: &str, value: &str) -> PyResult<()> {
        self.inner.set(key, value).map_err(err)
    }

    fn get(&self, key: &str) -> PyResult<String> {
        self.inner.get(key).map_err(err)
    }

    fn render(&self) -> String {
        self.inner.render()
    }

    fn hash(&self) -> String {
        self.inner.hash()
    }

    fn __repr__(&self) -> String {
        format!("TrainingConfig(hash={})", self.inner.hash())
    }
}

/// A trained CM-GNN model.
#[pyclass(name = "Model", module = "cmgnn")]
struct PyModel {
    checkpoint: Checkpoint,
    model: cmgnn_core::model::Model,
    history: Vec<EpochLog>,
}

impl PyModel {
    fn from_checkpoint(checkpoint: Checkpoint, history: Vec<EpochLog>) -> PyResult<Self> {
        let model = checkpoint.model().map_err(err)?;
        Ok(Self {
            checkpoint,
            model,
            history,
        })
    }
}

#[pymethods]
impl PyModel {
    /// Trains on every prefix of `corpus` (or on `examples` when given) and
    /// keeps the best-validation checkpoint.
    #[staticmethod]
    #[pyo3(signature = (config, corpus, examples=None))]
    fn train(
        py: Python<'_>,
        config: &PyConfig,
        corpus: &PyCorpus,
        examples: Option<Vec<(Vec<ItemIndex>, ItemIndex)>>,
    ) -> PyResult<Self> {
        let examples = match examples {
            Some(pairs) => to_examples(pairs),
            None => augment_sequences(&corpus.inner),
        };
        let cfg = config.inner.clone();
        let train_corpus = corpus.inner.clone();
        let outcome = py
            .detach(move || harness::train(&cfg, &train_corpus, &examples, &mut |_| {}))
            .map_err(err)?;
        Self::from_checkpoint(outcome.best, outcome.history)
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Self::from_checkpoint(Checkpoint::load(&path).map_err(err)?, Vec::new())
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.checkpoint.save(&path).map_err(err)
    }

    #[getter]
    fn n_items(&self) -> usize {
        self.checkpoint.global.n_items()
    }

    #[getter]
    fn epochs_completed(&self) -> usize {
        self.checkpoint.epochs_completed
    }

    #[getter]
    fn config(&self) -> PyConfig {
        PyConfig {
            inner: self.checkpoint.config.clone(),
        }
    }

    /// `(epoch, lr, loss)` per training epoch.
    #[getter]
    fn history(&self) -> Vec<(usize, f64, f64)> {
        self.history.iter().map(|l| (l.epoch, l.lr, l.loss)).collect()
    }

    /// Next-item probabilities; entry `i` is item `i + 1`.
    fn scores(&self, prefix: Vec<ItemIndex>) -> PyResult<Vec<f64>> {
        let p = self.model.predictor().map_err(err)?;
        Ok(p.scores(&prefix).map_err(err)?.probs.data().to_vec())
    }

    /// Top `k` `(item, probability)` pairs.
    #[pyo3(signature = (prefix, k=20))]
    fn recommend(&self, prefix: Vec<ItemIndex>, k: usize) -> PyResult<Vec<(ItemIndex, f64)>> {
        let scores = self.scores(prefix)?;
        Ok(ranked_items(&scores)
            .into_iter()
            .take(k)
            .map(|i| (i, scores[i as usize - 1]))
            .collect())
    }

    /// `[(k, precision, mrr)]` in percent over `(prefix, target)` pairs.
    #[pyo3(signature = (examples, ks=None))]
    fn evaluate(
        &self,
        py: Python<'_>,
        examples: Vec<(Vec<ItemIndex>, ItemIndex)>,
        ks: Option<Vec<usize>>,
    ) -> PyResult<Vec<(usize, f64, f64)>> {
        let examples = to_examples(examples);
        let ks = ks.unwrap_or_else(|| DEFAULT_KS.to_vec());
        let model = &self.model;
        let report = py
            .detach(|| evaluate(&model.predictor()?, &examples, &ks))
            .map_err(err)?;
        Ok(report_pairs(&report))
    }

    fn __repr__(&self) -> String {
        format!(
            "Model(items={}, dim={}, epochs={})",
            self.n_items(),
            self.checkpoint.config.dim,
            self.checkpoint.epochs_completed
        )
    }
}

type TypedEdge = (ItemIndex, ItemIndex, &'static str);

/// `(nodes, [(source, target, relation)])` of one session.
#[pyfunction]
fn local_graph(session: Vec<ItemIndex>) -> PyResult<(Vec<ItemIndex>, Vec<TypedEdge>)> {
    let g = build_local_graph(&session).map_err(err)?;
    let edges = g.edges.iter().map(|(&(a, b), &r)| (a, b, relation_name(r))).collect();
    Ok((g.nodes, edges))
}

/// `[(neighbor, weight)]` per item, item `i` at position `i - 1`.
#[pyfunction]
#[pyo3(signature = (corpus, eps=3, max_neighbors=12))]
fn global_graph(corpus: &PyCorpus, eps: usize, max_neighbors: usize) -> PyResult<Vec<Vec<(ItemIndex, u32)>>> {
    Ok(build_global_graph(&corpus.inner, eps, max_neighbors)
        .map_err(err)?
        .neighbors)
}

/// Dense row-stochastic hypergraph propagation matrix.
#[pyfunction]
fn hypergraph_operator(corpus: &PyCorpus) -> PyResult<Vec<Vec<f64>>> {
    let op = build_hypergraph(&corpus.inner)
        .and_then(|h| h.operator())
        .map_err(err)?
        .to_dense();
    Ok((0..op.rows()).map(|i| op.row(i).to_vec()).collect())
}

/// `[(k, precision, mrr)]` in percent from 1-based target ranks.
#[pyfunction]
#[pyo3(signature = (ranks, ks=None))]
fn metrics_from_ranks(ranks: Vec<usize>, ks: Option<Vec<usize>>) -> PyResult<Vec<(usize, f64, f64)>> {
    let ks = ks.unwrap_or_else(|| DEFAULT_KS.to_vec());
    Ok(report_pairs(&MetricReport::from_ranks(&ranks, &ks).map_err(err)?))
}

/// Items ranked by `pop` or `itemknn` for `prefix`.
#[pyfunction]
fn baseline(method: &str, corpus: &PyCorpus, prefix: Vec<ItemIndex>) -> PyResult<Vec<ItemIndex>> {
    let method: BaselineMethod = method.parse().map_err(err)?;
    baseline_rank(method, &corpus.inner, &prefix).map_err(err)
}

/// Planted-Markov `(train, test)` corpora.
#[pyfunction]
#[pyo3(signature = (n_items=50, n_train=500, n_test=100, noise=0.1, seed=7))]
fn planted_markov(
    n_items: usize,
    n_train: usize,
    n_test: usize,
    noise: f64,
    seed: u64,
) -> PyResult<(PyCorpus, PyCorpus)> {
    let cfg = SynthConfig {
        n_items,
        n_train,
        n_test,
        noise,
        seed,
        ..SynthConfig::default()
    };
    let (a, b) = planted_markov_split(&cfg).map_err(err)?;
    Ok((PyCorpus { inner: a }, PyCorpus { inner: b }))
}

/// `[(label, max_rel_error, passed)]` for the gradient-check suite.
#[pyfunction]
#[pyo3(signature = (seed=2024))]
fn gradcheck(py: Python<'_>, seed: u64) -> PyResult<Vec<(String, f64, bool)>> {
    let reports = py.detach(|| gradcheck_suite(seed)).map_err(err)?;
    Ok(reports
        .into_iter()
        .map(|r| (r.label, r.max_rel_error, r.passed))
        .collect())
}

/// The `cmgnn` extension module.
#[pymodule]
pub fn cmgnn(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("CmgnnError", m.py().get_type::<CmgnnError>())?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add_class::<PyCorpus>()?;
    m.add_class::<PyConfig>()?;
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(local_graph, m)?)?;
    m.add_function(wrap_pyfunction!(global_graph, m)?)?;
    m.add_function(wrap_pyfunction!(hypergraph_operator, m)?)?;
    m.add_function(wrap_pyfunction!(metrics_from_ranks, m)?)?;
    m.add_function(wrap_pyfunction!(baseline, m)?)?;
    m.add_function(wrap_pyfunction!(planted_markov, m)?)?;
    m.add_function(wrap_pyfunction!(gradcheck, m)?)?;
    Ok(())
}
