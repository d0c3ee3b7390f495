use serde::Serialize;

use super::config::TrainingConfig;
use crate::corpus::{augment_sequences, LabeledExample, SessionCorpus};
use crate::error::Result;
use crate::graphs::{build_global_graph, build_hypergraph};
use crate::model::Model;
use crate::numerics::{init_params, ParamShapes};

/// Finite-difference step.
pub const STEP: f64 = 1e-5;
/// Largest accepted per-entry relative error.
pub const TOLERANCE: f64 = 1e-4;
/// Denominator floor of the per-entry relative error.
pub const REL_FLOOR: f64 = 1e-6;

/// Five items, eight sessions.
pub fn toy_corpus() -> SessionCorpus {
    SessionCorpus::from_index_sessions(
        5,
        vec![
            vec![1, 2, 3],
            vec![2, 3, 4, 2],
            vec![3, 5],
            vec![1, 4, 5, 1],
            vec![5, 2, 1],
            vec![4, 3, 2, 5, 4],
            vec![2, 1],
            vec![3, 4, 1, 5],
        ],
    )
    .expect("valid toy corpus")
}

/// Agreement for one parameter tensor.
///
/// `max_entry_rel_error` uses [`relative_error`] and decides pass/fail.
/// `norm_rel_error` is `‖a − n‖ / max(‖a‖, ‖n‖)` over the whole tensor and is
/// informational: tensors whose gradients sit near the central-difference
/// roundoff floor (about `1e-10` at this step and loss scale) show a large
/// ratio there without any real error.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ParamCheck {
    pub name: String,
    pub entries: usize,
    pub norm_rel_error: f64,
    pub max_entry_rel_error: f64,
    pub max_abs_error: f64,
    pub worst_index: usize,
}

/// Agreement between analytic and finite-difference gradients.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GradcheckReport {
    pub label: String,
    pub params: Vec<ParamCheck>,
    /// Largest per-entry relative error over all parameters.
    pub max_rel_error: f64,
    pub passed: bool,
}

/// Per-entry `|a − n| / max(|a|, |n|, REL_FLOOR)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Compares every gradient entry of the joint loss on `batch` with central
/// differences.
pub fn check_model(label: &str, model: &Model, batch: &[LabeledExample], seed: u64) -> Result<GradcheckReport> {
    let analytic = model.batch_gradients(batch, seed, false)?.grads;
    let mut probe = model.clone();
    let names: Vec<String> = model.params.names().cloned().collect();
    let mut params = Vec::with_capacity(names.len());
    for name in names {
        let len = model.params.get(&name)?.len();
        let mut worst = ParamCheck {
            name: name.clone(),
            entries: len,
            norm_rel_error: 0.0,
            max_entry_rel_error: 0.0,
            max_abs_error: 0.0,
            worst_index: 0,
        };
        let (mut diff2, mut a2, mut n2) = (0.0, 0.0, 0.0);
        for k in 0..len {
            let orig = model.params.get(&name)?.data()[k];
            probe.params.get_mut(&name)?.data_mut()[k] = orig + STEP;
            let up = probe.batch_loss(batch, seed)?.total;
            probe.params.get_mut(&name)?.data_mut()[k] = orig - STEP;
            let down = probe.batch_loss(batch, seed)?.total;
            probe.params.get_mut(&name)?.data_mut()[k] = orig;
            let numeric = (up - down) / (2.0 * STEP);
            let a = analytic.get(&name)?.data()[k];
            let rel = relative_error(a, numeric);
            worst.max_abs_error = worst.max_abs_error.max((a - numeric).abs());
            if rel > worst.max_entry_rel_error {
                worst.max_entry_rel_error = rel;
                worst.worst_index = k;
            }
            diff2 += (a - numeric).powi(2);
            a2 += a * a;
            n2 += numeric * numeric;
        }
        let scale = a2.max(n2).sqrt();
        worst.norm_rel_error = if scale == 0.0 { 0.0 } else { diff2.sqrt() / scale };
        params.push(worst);
    }
    let max_rel_error = params.iter().map(|p| p.max_entry_rel_error).fold(0.0, f64::max);
    Ok(GradcheckReport {
        label: label.to_string(),
        params,
        max_rel_error,
        passed: max_rel_error < TOLERANCE,
    })
}

/// Toy-scale model built the same way training builds one.
pub fn toy_model(cfg: &TrainingConfig, corpus: &SessionCorpus) -> Result<(Model, Vec<LabeledExample>)> {
    cfg.validate()?;
    let examples = augment_sequences(corpus);
    let longest = examples.iter().map(|e| e.prefix.len()).max().unwrap_or(1);
    let shapes = ParamShapes {
        n_items: corpus.n_items(),
        dim: cfg.dim,
        max_position: cfg.resolve_max_position(longest),
        global_layers: cfg.global_layers,
    };
    let model = Model::new(
        cfg.model_spec(),
        init_params(&shapes, cfg.seed)?,
        build_global_graph(corpus, cfg.eps, cfg.max_neighbors)?,
        build_hypergraph(corpus)?,
    )?;
    Ok((model, examples))
}

/// Configurations exercised by [`gradcheck_suite`], as `(label, overrides)`.
pub const SUITE: [(&str, &str); 8] = [
    ("defaults", ""),
    ("beta=1", "beta=1"),
    ("beta=1 standard", "beta=1\ncontrastive=standard"),
    ("beta=1 mse", "beta=1\nablations=mse_contrastive"),
    ("categorical", "rec_loss=categorical\nbeta=0.5"),
    ("only_hyper", "ablations=only_hyper"),
    ("no_attention_fusion", "ablations=no_attention_fusion\nbeta=1"),
    ("initial session mean", "session_mean=initial\nbeta=1"),
];

/// Runs every [`SUITE`] entry on the toy corpus with `d = 6`.
pub fn gradcheck_suite(seed: u64) -> Result<Vec<GradcheckReport>> {
    let corpus = toy_corpus();
    SUITE
        .iter()
        .map(|(label, overrides)| {
            let mut cfg = TrainingConfig {
                dim: 6,
                seed,
                ..TrainingConfig::default()
            };
            cfg.apply_text(overrides)?;
            let (model, examples) = toy_model(&cfg, &corpus)?;
            check_model(label, &model, &examples, seed)
        })
        .collect()
}
