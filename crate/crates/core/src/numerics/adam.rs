use std::collections::BTreeMap;

use super::params::ParamStore;
use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;

/// Adam moments plus the step-decay schedule and L2 settings.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    pub first_moment: BTreeMap<String, Tensor>,
    pub second_moment: BTreeMap<String, Tensor>,
    pub step: u64,
    pub base_lr: f64,
    pub decay_factor: f64,
    pub decay_every: usize,
    pub l2: f64,
    /// Parameters exempt from the L2 term.
    pub l2_exclude: Vec<String>,
}

impl OptimizerState {
    pub fn new(params: &ParamStore, base_lr: f64, decay_factor: f64, decay_every: usize, l2: f64) -> Self {
        let zeros = |p: &ParamStore| p.iter().map(|(k, v)| (k.clone(), Tensor::zeros(v.shape()))).collect();
        Self {
            first_moment: zeros(params),
            second_moment: zeros(params),
            step: 0,
            base_lr,
            decay_factor,
            decay_every,
            l2,
            l2_exclude: Vec::new(),
        }
    }

    /// `base_lr · decay_factor^⌊epoch / decay_every⌋`.
    ///
    /// Rounded to 12 significant digits so decayed rates land on their
    /// decimal values (0.001 → 0.0001 rather than 0.00010000000000000002).
    pub fn learning_rate(&self, epoch: usize) -> f64 {
        let k = (epoch / self.decay_every.max(1)) as i32;
        let raw = self.base_lr * self.decay_factor.powi(k);
        if raw == 0.0 {
            return 0.0;
        }
        format!("{raw:.11e}").parse().unwrap_or(raw)
    }
}

/// One Adam update with gradient `g + l2·θ` at the scheduled rate for `epoch`.
pub fn adam_step(params: &mut ParamStore, grads: &ParamStore, state: &mut OptimizerState, epoch: usize) -> Result<()> {
    params.check_same_layout(grads)?;
    for (name, p) in params.iter() {
        let m = state
            .first_moment
            .get(name)
            .ok_or_else(|| Error::ShapeMismatch(format!("no moment for `{name}`")))?;
        if m.shape() != p.shape() {
            return Err(Error::ShapeMismatch(format!("moment shape for `{name}`")));
        }
    }

    state.step += 1;
    let t = state.step as i32;
    let lr = state.learning_rate(epoch);
    let bias1 = 1.0 - BETA1.powi(t);
    let bias2 = 1.0 - BETA2.powi(t);

    for (name, p) in params.iter_mut() {
        let g = grads.get(name)?;
        let m = state.first_moment.get_mut(name).expect("checked above");
        let v = state.second_moment.get_mut(name).expect("checked above");
        let l2 = if state.l2_exclude.iter().any(|e| e == name) {
            0.0
        } else {
            state.l2
        };
        for (((pv, &gv), mv), vv) in p
            .data_mut()
            .iter_mut()
            .zip(g.data())
            .zip(m.data_mut())
            .zip(v.data_mut())
        {
            let grad = gv + l2 * *pv;
            *mv = BETA1 * *mv + (1.0 - BETA1) * grad;
            *vv = BETA2 * *vv + (1.0 - BETA2) * grad * grad;
            let m_hat = *mv / bias1;
            let v_hat = *vv / bias2;
            *pv -= lr * m_hat / (v_hat.sqrt() + EPSILON);
        }
        if !p.is_finite() {
            return Err(Error::NumericFault { primitive: "adam_step" });
        }
    }
    Ok(())
}
