//! The assembled recommender: encoders, readouts and the joint objective.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corpus::{ItemIndex, LabeledExample};
use crate::encoders::{distinct, global_gcn, hyper_gcn, item_rows, local_gcn, GlobalLayer, SessionMean};
use crate::error::{Error, Result};
use crate::graphs::{build_local_graph, GlobalGraph, HyperGraph, HyperOperator};
use crate::numerics::params::{GlobalLayerNames, ITEM_EMBEDDINGS, POSITION_TABLE, RELATION_VECTORS};
use crate::numerics::{AttentionAudit, ParamStore, Tape, Tensor, Var};
use crate::readout::{
    attention_readout_tape, contrastive_loss_tape, occurrence_rows, ContrastiveForm, Corruption, ReadoutVars, RecLoss,
    ScoreVector, SessionRepr, PROB_CLAMP,
};

/// Model variants that switch off or replace one component.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ablation {
    NoLocal,
    NoGlobal,
    NoHyper,
    NoAttentionFusion,
    MseContrastive,
    OnlyLocal,
    OnlyGlobal,
    OnlyHyper,
}

impl Ablation {
    pub const ALL: [Ablation; 8] = [
        Ablation::NoLocal,
        Ablation::NoGlobal,
        Ablation::NoHyper,
        Ablation::NoAttentionFusion,
        Ablation::MseContrastive,
        Ablation::OnlyLocal,
        Ablation::OnlyGlobal,
        Ablation::OnlyHyper,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Ablation::NoLocal => "no_local",
            Ablation::NoGlobal => "no_global",
            Ablation::NoHyper => "no_hyper",
            Ablation::NoAttentionFusion => "no_attention_fusion",
            Ablation::MseContrastive => "mse_contrastive",
            Ablation::OnlyLocal => "only_local",
            Ablation::OnlyGlobal => "only_global",
            Ablation::OnlyHyper => "only_hyper",
        }
    }

    pub fn is_only(self) -> bool {
        matches!(self, Ablation::OnlyLocal | Ablation::OnlyGlobal | Ablation::OnlyHyper)
    }
}

impl fmt::Display for Ablation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Ablation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ablation::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown ablation `{s}`")))
    }
}

/// Where the item rows fed to the attention readout come from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ItemSource {
    /// Sum of the enabled local and global encoders.
    Pairwise,
    /// Hyper-level rows.
    Hyper,
}

/// Architecture and objective after ablations are resolved.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub dim: usize,
    pub global_layers: usize,
    pub hyper_layers: usize,
    pub leaky_slope: f64,
    pub session_mean: SessionMean,
    pub use_local: bool,
    pub use_global: bool,
    pub item_source: ItemSource,
    pub attention_fusion: bool,
    /// `None` drops the contrastive term and the high-order view.
    pub contrastive: Option<ContrastiveForm>,
    pub beta: f64,
    pub rec_loss: RecLoss,
}

impl ModelSpec {
    pub fn needs_hyper(&self) -> bool {
        self.contrastive.is_some() || self.item_source == ItemSource::Hyper
    }

    fn validate(&self) -> Result<()> {
        if self.item_source == ItemSource::Pairwise && !self.use_local && !self.use_global {
            return Err(Error::Config(
                "at least one of the local and global encoders must stay on".into(),
            ));
        }
        if self.dim == 0 || self.global_layers == 0 || self.hyper_layers == 0 {
            return Err(Error::Config("dim and layer counts must be positive".into()));
        }
        if self.beta.is_nan() || self.beta < 0.0 {
            return Err(Error::Config("beta must be non-negative".into()));
        }
        Ok(())
    }
}

/// Loss terms of one batch.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct LossBreakdown {
    pub total: f64,
    /// Mean next-item loss.
    pub rec: f64,
    /// Contrastive loss, absent when the term is off or the batch is a
    /// single example.
    pub contrastive: Option<f64>,
}

/// Loss, parameter gradients and optional attention audit for one batch.
#[derive(Clone, Debug)]
pub struct BatchGradients {
    pub loss: LossBreakdown,
    pub grads: ParamStore,
    pub audit: Option<AttentionAudit>,
}

/// Parameters bound to a trained graph context.
#[derive(Clone, Debug)]
pub struct Model {
    pub spec: ModelSpec,
    pub params: ParamStore,
    pub global: GlobalGraph,
    pub hyper: HyperGraph,
    hyper_op: HyperOperator,
}

struct Vars {
    emb: Var,
    relations: Var,
    layers: Vec<GlobalLayer>,
    readout: ReadoutVars,
    named: Vec<(String, Var)>,
}

fn bind<'a>(tape: &mut Tape<'a>, params: &'a ParamStore, layers: usize) -> Result<Vars> {
    let named: Vec<(String, Var)> = params.iter().map(|(k, v)| (k.clone(), tape.leaf(v))).collect();
    let find = |name: &str| {
        named
            .iter()
            .find(|(k, _)| k == name)
            .map(|&(_, v)| v)
            .ok_or_else(|| Error::InvalidArgument(format!("missing parameter `{name}`")))
    };
    let mut global = Vec::with_capacity(layers);
    for l in 0..layers {
        let names = GlobalLayerNames::new(l);
        global.push(GlobalLayer {
            w1: find(&names.w1)?,
            q1: find(&names.q1)?,
            w2: find(&names.w2)?,
        });
    }
    let readout = ReadoutVars {
        w3: find(crate::numerics::params::READOUT_W3)?,
        b3: find(crate::numerics::params::READOUT_B3)?,
        w4: find(crate::numerics::params::READOUT_W4)?,
        w5: find(crate::numerics::params::READOUT_W5)?,
        q2: find(crate::numerics::params::READOUT_Q2)?,
        b4: find(crate::numerics::params::READOUT_B4)?,
        positions: find(POSITION_TABLE)?,
    };
    Ok(Vars {
        emb: find(ITEM_EMBEDDINGS)?,
        relations: find(RELATION_VECTORS)?,
        layers: global,
        readout,
        named,
    })
}

fn add_into(dst: &mut [f64], src: &[f64], scale: f64) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += scale * s;
    }
}

impl Model {
    pub fn new(spec: ModelSpec, params: ParamStore, global: GlobalGraph, hyper: HyperGraph) -> Result<Self> {
        spec.validate()?;
        let emb = params.get(ITEM_EMBEDDINGS)?;
        if emb.cols() != spec.dim {
            return Err(Error::ShapeMismatch(format!(
                "embedding dim {} but model dim {}",
                emb.cols(),
                spec.dim
            )));
        }
        if global.n_items() != emb.rows() || hyper.n_items != emb.rows() {
            return Err(Error::ShapeMismatch(format!(
                "graphs cover {} / {} items, embeddings {}",
                global.n_items(),
                hyper.n_items,
                emb.rows()
            )));
        }
        let hyper_op = hyper.operator()?;
        Ok(Self {
            spec,
            params,
            global,
            hyper,
            hyper_op,
        })
    }

    pub fn n_items(&self) -> usize {
        self.global.n_items()
    }

    pub fn max_position(&self) -> usize {
        self.params.get(POSITION_TABLE).map(Tensor::rows).unwrap_or(0)
    }

    /// The most recent `max_position` items of `prefix`.
    pub fn window<'p>(&self, prefix: &'p [ItemIndex]) -> &'p [ItemIndex] {
        &prefix[prefix.len().saturating_sub(self.max_position())..]
    }

    fn check_items(&self, items: &[ItemIndex]) -> Result<()> {
        if items.is_empty() {
            return Err(Error::InvalidArgument("empty prefix".into()));
        }
        let n = self.n_items();
        match items.iter().find(|&&i| i == 0 || i as usize > n) {
            Some(i) => Err(Error::InvalidArgument(format!("item {i} outside 1..={n}"))),
            None => Ok(()),
        }
    }

    fn check_example(&self, ex: &LabeledExample) -> Result<()> {
        self.check_items(&ex.prefix)?;
        self.check_items(&[ex.target])
    }

    /// Hyper-level rows for every item, when the configuration uses them.
    pub fn hyper_reps(&self) -> Result<Option<Tensor>> {
        if !self.spec.needs_hyper() {
            return Ok(None);
        }
        let mut tape = Tape::new();
        let x = tape.leaf(self.params.get(ITEM_EMBEDDINGS)?);
        let xh = hyper_gcn(&mut tape, &self.hyper_op, x, self.spec.hyper_layers);
        tape.check()?;
        Ok(Some(tape.value(xh).clone()))
    }

    /// Scorer with the hyper-level rows computed once.
    pub fn predictor(&self) -> Result<Predictor<'_>> {
        Ok(Predictor {
            model: self,
            hyper: self.hyper_reps()?,
        })
    }

    /// `s_c` for `prefix` as a `1 × d` node.
    fn pairwise(&self, tape: &mut Tape<'_>, vars: &Vars, hyper: Option<Var>, prefix: &[ItemIndex]) -> Result<Var> {
        let spec = &self.spec;
        let items = distinct(prefix);
        let reps = match spec.item_source {
            ItemSource::Hyper => {
                let h = hyper.ok_or_else(|| Error::Invariant("hyper rows not bound".into()))?;
                tape.gather_rows(h, item_rows(&items))
            }
            ItemSource::Pairwise => {
                let mut fused = None;
                if spec.use_local {
                    let graph = build_local_graph(prefix)?;
                    let nodes = tape.gather_rows(vars.emb, item_rows(&graph.nodes));
                    fused = Some(local_gcn(tape, &graph, nodes, vars.relations, spec.leaky_slope));
                }
                if spec.use_global {
                    let xg = global_gcn(
                        tape,
                        &self.global,
                        prefix,
                        vars.emb,
                        &vars.layers,
                        spec.leaky_slope,
                        spec.session_mean,
                    );
                    fused = Some(match fused {
                        Some(xl) => tape.add(xl, xg),
                        None => xg,
                    });
                }
                fused.ok_or_else(|| Error::Invariant("no pairwise encoder enabled".into()))?
            }
        };
        let x = tape.gather_rows(reps, occurrence_rows(&items, prefix)?);
        Ok(if spec.attention_fusion {
            attention_readout_tape(tape, x, &vars.readout)
        } else {
            tape.mean_rows(x)
        })
    }

    fn rec_term(&self, tape: &mut Tape<'_>, vars: &Vars, sc: Var, target: ItemIndex) -> Var {
        let logits = tape.matmul_nt(sc, vars.emb);
        let probs = tape.softmax_rows(logits);
        let t = vec![target as usize - 1];
        match self.spec.rec_loss {
            RecLoss::BinarySum => tape.bce_sum(probs, t, PROB_CLAMP),
            RecLoss::Categorical => tape.nll(probs, t, PROB_CLAMP),
        }
    }

    fn high_order(&self, hyper: &Tensor, prefix: &[ItemIndex]) -> Vec<f64> {
        let mut out = vec![0.0; hyper.cols()];
        for &i in prefix {
            add_into(&mut out, hyper.row(i as usize - 1), 1.0);
        }
        let m = prefix.len() as f64;
        out.iter_mut().for_each(|v| *v /= m);
        out
    }

    fn contrastive_active(&self, batch: usize) -> Option<ContrastiveForm> {
        self.spec.contrastive.filter(|_| batch >= 2)
    }

    /// Loss values only, with the same corruption as
    /// [`Model::batch_gradients`].
    pub fn batch_loss(&self, batch: &[LabeledExample], corruption_seed: u64) -> Result<LossBreakdown> {
        if batch.is_empty() {
            return Err(Error::InvalidArgument("empty batch".into()));
        }
        let predictor = self.predictor()?;
        let d = self.spec.dim;
        let mut rec = 0.0;
        let mut sc = Vec::with_capacity(batch.len() * d);
        let mut sh = Vec::with_capacity(batch.len() * d);
        for ex in batch {
            self.check_example(ex)?;
            let prefix = self.window(&ex.prefix);
            let repr = predictor.session_repr(prefix)?;
            let mut tape = Tape::new();
            let vars = bind(&mut tape, &self.params, self.spec.global_layers)?;
            let s = tape.constant(Tensor::from_parts(vec![1, d], repr.pairwise.data().to_vec()));
            let r = self.rec_term(&mut tape, &vars, s, ex.target);
            tape.check()?;
            rec += tape.value(r).item();
            sc.extend_from_slice(repr.pairwise.data());
            sh.extend_from_slice(repr.high_order.data());
        }
        let b = batch.len();
        rec /= b as f64;
        let contrastive = match self.contrastive_active(b) {
            Some(form) => {
                let sc = Tensor::from_parts(vec![b, d], sc);
                let sh = Tensor::from_parts(vec![b, d], sh);
                let corruption = Corruption::seeded(b, d, corruption_seed);
                Some(crate::readout::contrastive_loss_with(&sc, &sh, &corruption, form)?)
            }
            None => None,
        };
        Ok(LossBreakdown {
            total: rec + self.spec.beta * contrastive.unwrap_or(0.0),
            rec,
            contrastive,
        })
    }

    /// Joint loss and exact gradients for one batch.
    ///
    /// The contrastive term couples the batch rows, so its gradient with
    /// respect to each `s_c` and `s_h` is found first from a forward-only
    /// pass. Each example is then differentiated on its own small tape with
    /// that gradient folded in as a linear term, and the hyper encoder is
    /// back-propagated once at the end.
    pub fn batch_gradients(
        &self,
        batch: &[LabeledExample],
        corruption_seed: u64,
        audit: bool,
    ) -> Result<BatchGradients> {
        if batch.is_empty() {
            return Err(Error::InvalidArgument("empty batch".into()));
        }
        for ex in batch {
            self.check_example(ex)?;
        }
        let b = batch.len();
        let d = self.spec.dim;
        let beta = self.spec.beta;
        let emb = self.params.get(ITEM_EMBEDDINGS)?;

        let mut hyper_tape = Tape::new();
        let hyper = if self.spec.needs_hyper() {
            let x = hyper_tape.leaf(emb);
            let xh = hyper_gcn(&mut hyper_tape, &self.hyper_op, x, self.spec.hyper_layers);
            hyper_tape.check()?;
            Some((x, xh))
        } else {
            None
        };
        let hyper_val = hyper.map(|(_, v)| hyper_tape.value(v));

        // contrastive gradients with respect to every row of S_c and S_h
        let mut contrastive = None;
        let mut d_sc = None;
        let mut d_sh = None;
        if let Some(form) = self.contrastive_active(b) {
            let hv = hyper_val.ok_or_else(|| Error::Invariant("hyper rows missing".into()))?;
            let rows = crate::parallel::map_ordered(batch, |ex| {
                let prefix = self.window(&ex.prefix);
                let mut tape = Tape::new();
                let vars = bind(&mut tape, &self.params, self.spec.global_layers)?;
                let h = (self.spec.item_source == ItemSource::Hyper).then(|| tape.leaf(hv));
                let s = self.pairwise(&mut tape, &vars, h, prefix)?;
                tape.check()?;
                Ok((tape.value(s).data().to_vec(), self.high_order(hv, prefix)))
            })?;
            let (sc, sh): (Vec<Vec<f64>>, Vec<Vec<f64>>) = rows.into_iter().unzip();
            let sc = sc.concat();
            let sh = sh.concat();
            let sc = Tensor::from_parts(vec![b, d], sc);
            let sh = Tensor::from_parts(vec![b, d], sh);
            let corruption = Corruption::seeded(b, d, corruption_seed);
            let mut tape = Tape::new();
            let a = tape.leaf(&sc);
            let h = tape.leaf(&sh);
            let loss = contrastive_loss_tape(&mut tape, a, h, &corruption, form);
            let g = tape.backward(loss)?;
            contrastive = Some(tape.value(loss).item());
            d_sc = Some(g.get_or_zero(a));
            d_sh = Some(g.get_or_zero(h));
        }

        let inv_b = 1.0 / b as f64;
        let indexed: Vec<(usize, &LabeledExample)> = batch.iter().enumerate().collect();
        let partials = crate::parallel::map_chunks(&indexed, |chunk| {
            let mut grads = self.params.zeros_like();
            let mut d_hyper = hyper_val.map(|h| vec![0.0; h.len()]);
            let mut merged_audit = audit.then(AttentionAudit::default);
            let mut rec_total = 0.0;
            for &(k, ex) in chunk {
                let prefix = self.window(&ex.prefix);
                let mut tape = Tape::new();
                if audit {
                    tape.enable_attention_audit();
                }
                let vars = bind(&mut tape, &self.params, self.spec.global_layers)?;
                let h = match (self.spec.item_source, hyper_val) {
                    (ItemSource::Hyper, Some(hv)) => Some(tape.leaf(hv)),
                    _ => None,
                };
                let s = self.pairwise(&mut tape, &vars, h, prefix)?;
                let r = self.rec_term(&mut tape, &vars, s, ex.target);
                tape.check()?;
                rec_total += tape.value(r).item();
                let mut loss = tape.scale(r, inv_b);
                if let Some(dsc) = &d_sc {
                    let g = tape.constant(Tensor::from_parts(vec![1, d], dsc.row(k).to_vec()));
                    let inner = tape.mul(s, g);
                    let inner = tape.sum(inner);
                    let inner = tape.scale(inner, beta);
                    loss = tape.add(loss, inner);
                }
                let g = tape.backward(loss)?;
                for (name, var) in &vars.named {
                    if let Some(raw) = g.raw(*var) {
                        add_into(grads.get_mut(name)?.data_mut(), raw, 1.0);
                    }
                }
                if let (Some(hv), Some(dh)) = (h, d_hyper.as_mut()) {
                    if let Some(raw) = g.raw(hv) {
                        add_into(dh, raw, 1.0);
                    }
                }
                if let (Some(dsh), Some(dh)) = (&d_sh, d_hyper.as_mut()) {
                    let w = beta / prefix.len() as f64;
                    for &i in prefix {
                        let row = i as usize - 1;
                        add_into(&mut dh[row * d..(row + 1) * d], dsh.row(k), w);
                    }
                }
                if let (Some(acc), Some(a)) = (merged_audit.as_mut(), tape.attention_audit()) {
                    acc.merge(&a);
                }
            }
            Ok((grads, d_hyper, rec_total, merged_audit))
        })?;

        // fixed chunking keeps this reduction order independent of threads
        let mut grads = self.params.zeros_like();
        let mut d_hyper = hyper_val.map(|h| vec![0.0; h.len()]);
        let mut merged_audit = audit.then(AttentionAudit::default);
        let mut rec_total = 0.0;
        for (g, dh, r, a) in partials {
            for (name, t) in g.iter() {
                add_into(grads.get_mut(name)?.data_mut(), t.data(), 1.0);
            }
            if let (Some(acc), Some(part)) = (d_hyper.as_mut(), dh) {
                add_into(acc, &part, 1.0);
            }
            rec_total += r;
            if let (Some(acc), Some(part)) = (merged_audit.as_mut(), a) {
                acc.merge(&part);
            }
        }

        if let (Some((x, xh)), Some(dh)) = (hyper, d_hyper) {
            let g = hyper_tape.backward_with_seed(xh, &dh)?;
            if let Some(raw) = g.raw(x) {
                add_into(grads.get_mut(ITEM_EMBEDDINGS)?.data_mut(), raw, 1.0);
            }
        }

        let rec = rec_total * inv_b;
        Ok(BatchGradients {
            loss: LossBreakdown {
                total: rec + beta * contrastive.unwrap_or(0.0),
                rec,
                contrastive,
            },
            grads,
            audit: merged_audit,
        })
    }
}

/// Forward-only scoring against a fixed model.
pub struct Predictor<'m> {
    model: &'m Model,
    hyper: Option<Tensor>,
}

impl Predictor<'_> {
    pub fn model(&self) -> &Model {
        self.model
    }

    /// Both session views for `prefix`, truncated to the position table.
    /// The high-order view is zero when the configuration does not use it.
    pub fn session_repr(&self, prefix: &[ItemIndex]) -> Result<SessionRepr> {
        let m = self.model;
        m.check_items(prefix)?;
        let prefix = m.window(prefix);
        let mut tape = Tape::new();
        let vars = bind(&mut tape, &m.params, m.spec.global_layers)?;
        let h = match (m.spec.item_source, &self.hyper) {
            (ItemSource::Hyper, Some(hv)) => Some(tape.leaf(hv)),
            _ => None,
        };
        let s = m.pairwise(&mut tape, &vars, h, prefix)?;
        tape.check()?;
        let high_order = match &self.hyper {
            Some(hv) => m.high_order(hv, prefix),
            None => vec![0.0; m.spec.dim],
        };
        Ok(SessionRepr {
            pairwise: Tensor::vector(tape.value(s).data().to_vec()),
            high_order: Tensor::vector(high_order),
        })
    }

    /// Unnormalized scores `s_c · x_i` for every item.
    pub fn logits(&self, prefix: &[ItemIndex]) -> Result<Vec<f64>> {
        let s = self.session_repr(prefix)?.pairwise;
        let emb = self.model.params.get(ITEM_EMBEDDINGS)?;
        Ok((0..emb.rows())
            .map(|i| crate::numerics::tensor::dot(s.data(), emb.row(i)))
            .collect())
    }

    pub fn scores(&self, prefix: &[ItemIndex]) -> Result<ScoreVector> {
        let s = self.session_repr(prefix)?.pairwise;
        crate::readout::score_items(&s, self.model.params.get(ITEM_EMBEDDINGS)?)
    }
}
