//! Session readouts, item scoring and the loss terms.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::ItemIndex;
use crate::encoders::{ItemReps, RepLevel};
use crate::error::{Error, Result};
use crate::numerics::params::{POSITION_TABLE, READOUT_B3, READOUT_B4, READOUT_Q2, READOUT_W3, READOUT_W4, READOUT_W5};
use crate::numerics::{ParamStore, Tape, Tensor, Var};

/// Probability clamp applied before every logarithm in the losses.
pub const PROB_CLAMP: f64 = 1e-12;

/// Form of the next-item loss.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecLoss {
    /// Binary cross-entropy summed over the whole softmax vector.
    #[default]
    BinarySum,
    /// `−log ŷ_target`.
    Categorical,
}

/// Negative-pair term of the contrastive loss.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContrastiveForm {
    /// `−log σ(1 − f(s̃_c, s_h))`.
    #[default]
    Printed,
    /// `−log σ(−f(s̃_c, s_h))`.
    Standard,
    /// `‖s_c − s_h‖² / d`, no negatives.
    Mse,
}

/// The two session views.
#[derive(Clone, Debug, PartialEq)]
pub struct SessionRepr {
    pub pairwise: Tensor,
    pub high_order: Tensor,
}

/// Next-item probabilities over all items, index `i` holding item `i + 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreVector {
    pub probs: Tensor,
}

impl ScoreVector {
    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn prob(&self, item: ItemIndex) -> f64 {
        self.probs.data()[item as usize - 1]
    }
}

/// Tape handles for the attention readout parameters.
#[derive(Clone, Copy, Debug)]
pub struct ReadoutVars {
    pub w3: Var,
    pub b3: Var,
    pub w4: Var,
    pub w5: Var,
    pub q2: Var,
    pub b4: Var,
    pub positions: Var,
}

impl ReadoutVars {
    pub fn from_params<'a>(tape: &mut Tape<'a>, params: &'a ParamStore) -> Result<Self> {
        Ok(Self {
            w3: tape.leaf(params.get(READOUT_W3)?),
            b3: tape.leaf(params.get(READOUT_B3)?),
            w4: tape.leaf(params.get(READOUT_W4)?),
            w5: tape.leaf(params.get(READOUT_W5)?),
            q2: tape.leaf(params.get(READOUT_Q2)?),
            b4: tape.leaf(params.get(READOUT_B4)?),
            positions: tape.leaf(params.get(POSITION_TABLE)?),
        })
    }
}

/// Elementwise `x^g + x^l`.
pub fn fuse_item_reps(local: &ItemReps, global: &ItemReps) -> Result<ItemReps> {
    if local.items != global.items || local.reps.shape() != global.reps.shape() {
        return Err(Error::ShapeMismatch("local and global reps are not aligned".into()));
    }
    let data = local
        .reps
        .data()
        .iter()
        .zip(global.reps.data())
        .map(|(a, b)| a + b)
        .collect();
    ItemReps::new(
        RepLevel::Fused,
        local.items.clone(),
        Tensor::new(local.reps.shape().to_vec(), data)?,
    )
}

/// Position-aware soft attention over the `t × d` prefix rows `x`.
///
/// Row `i` (0-based) is paired with position-table row `t − 1 − i`, so the
/// last item gets the first position. Returns `s_c` as a `1 × d` row.
pub fn attention_readout_tape(tape: &mut Tape<'_>, x: Var, vars: &ReadoutVars) -> Var {
    let t = tape.dims(x).0;
    let pos = tape.gather_rows(vars.positions, (0..t).rev().collect());
    let joined = tape.concat_cols(x, pos);
    let z = tape.matmul_nt(joined, vars.w3);
    let z = tape.add_row(z, vars.b3);
    let z = tape.tanh(z);
    let mean = tape.mean_rows(x);
    let session = tape.matmul_nt(mean, vars.w5);
    let session = tape.add(session, vars.b4);
    let gate = tape.matmul_nt(z, vars.w4);
    let gate = tape.add_row(gate, session);
    let gate = tape.sigmoid(gate);
    let beta = tape.matmul_nt(gate, vars.q2);
    let weighted = tape.mul_col(x, beta);
    tape.segment_sum(weighted, vec![0, t])
}

/// Expands per-item rows to one row per prefix occurrence.
pub(crate) fn occurrence_rows(items: &[ItemIndex], prefix: &[ItemIndex]) -> Result<Vec<usize>> {
    prefix
        .iter()
        .map(|i| {
            items
                .iter()
                .position(|j| j == i)
                .ok_or_else(|| Error::InvalidArgument(format!("item {i} has no representation")))
        })
        .collect()
}

/// `s_c` for `prefix`, reading each occurrence's row from `fused`.
pub fn attention_readout(fused: &ItemReps, prefix: &[ItemIndex], params: &ParamStore) -> Result<Tensor> {
    if prefix.is_empty() {
        return Err(Error::InvalidArgument("empty prefix".into()));
    }
    let max_position = params.get(POSITION_TABLE)?.rows();
    if prefix.len() > max_position {
        return Err(Error::InvalidArgument(format!(
            "prefix length {} exceeds max_position {max_position}",
            prefix.len()
        )));
    }
    let rows = occurrence_rows(&fused.items, prefix)?;
    let mut tape = Tape::new();
    let vars = ReadoutVars::from_params(&mut tape, params)?;
    let reps = tape.leaf(&fused.reps);
    let x = tape.gather_rows(reps, rows);
    let out = attention_readout_tape(&mut tape, x, &vars);
    tape.check()?;
    Ok(Tensor::vector(tape.value(out).data().to_vec()))
}

/// Mean of the hyper-level rows over every occurrence in `prefix`.
pub fn hyper_readout(hyper: &ItemReps, prefix: &[ItemIndex]) -> Result<Tensor> {
    if prefix.is_empty() {
        return Err(Error::InvalidArgument("empty prefix".into()));
    }
    let d = hyper.dim();
    let mut out = vec![0.0; d];
    for &i in prefix {
        let row = hyper
            .row_of(i)
            .ok_or_else(|| Error::InvalidArgument(format!("item {i} has no hyper representation")))?;
        for (o, v) in out.iter_mut().zip(row) {
            *o += v;
        }
    }
    let m = prefix.len() as f64;
    out.iter_mut().for_each(|v| *v /= m);
    Tensor::new(vec![d], out)
}

/// Softmax of `s_c · x_i` over the embedding table.
pub fn score_items(session: &Tensor, item_embeddings: &Tensor) -> Result<ScoreVector> {
    if session.len() != item_embeddings.cols() {
        return Err(Error::ShapeMismatch(format!(
            "session dim {} vs embedding dim {}",
            session.len(),
            item_embeddings.cols()
        )));
    }
    let logits: Vec<f64> = (0..item_embeddings.rows())
        .map(|i| crate::numerics::tensor::dot(session.data(), item_embeddings.row(i)))
        .collect();
    let probs = crate::numerics::tensor::softmax(&logits);
    Ok(ScoreVector {
        probs: Tensor::new(vec![probs.len()], probs)?,
    })
}

/// Next-item loss for one prediction.
pub fn rec_loss(scores: &ScoreVector, target: ItemIndex, form: RecLoss) -> Result<f64> {
    let n = scores.len();
    if target == 0 || target as usize > n {
        return Err(Error::InvalidArgument(format!("target {target} outside 1..={n}")));
    }
    let t = target as usize - 1;
    let p = scores.probs.data();
    Ok(match form {
        RecLoss::Categorical => -p[t].clamp(PROB_CLAMP, 1.0 - PROB_CLAMP).ln(),
        RecLoss::BinarySum => p
            .iter()
            .enumerate()
            .map(|(j, &pj)| {
                let q = pj.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
                if j == t {
                    -q.ln()
                } else {
                    -(1.0 - q).ln()
                }
            })
            .sum(),
    })
}

/// Row then column permutations used to corrupt `S_c`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Corruption {
    pub rows: Vec<usize>,
    pub cols: Vec<usize>,
}

impl Corruption {
    pub fn seeded(batch: usize, dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut rows: Vec<usize> = (0..batch).collect();
        rows.shuffle(&mut rng);
        let mut cols: Vec<usize> = (0..dim).collect();
        cols.shuffle(&mut rng);
        Self { rows, cols }
    }

    pub fn identity(batch: usize, dim: usize) -> Self {
        Self {
            rows: (0..batch).collect(),
            cols: (0..dim).collect(),
        }
    }
}

/// Batch contrastive loss on the tape, `sc` and `sh` both `B × d`.
pub fn contrastive_loss_tape(
    tape: &mut Tape<'_>,
    sc: Var,
    sh: Var,
    corruption: &Corruption,
    form: ContrastiveForm,
) -> Var {
    let (b, d) = tape.dims(sc);
    if form == ContrastiveForm::Mse {
        let diff = tape.sub(sc, sh);
        let sq = tape.mul(diff, diff);
        let per_row = tape.sum_cols(sq);
        let loss = tape.mean(per_row);
        return tape.scale(loss, 1.0 / d as f64);
    }
    let shuffled = tape.gather_rows(sc, corruption.rows.clone());
    let shuffled = tape.transpose(shuffled);
    let shuffled = tape.gather_rows(shuffled, corruption.cols.clone());
    let negatives = tape.transpose(shuffled);

    let pos = tape.mul(sc, sh);
    let pos = tape.sum_cols(pos);
    let pos = tape.log_sigmoid(pos);
    let neg = tape.mul(negatives, sh);
    let neg = tape.sum_cols(neg);
    let neg = tape.scale(neg, -1.0);
    let neg = match form {
        ContrastiveForm::Printed => {
            let ones = tape.constant(Tensor::from_parts(vec![b, 1], vec![1.0; b]));
            tape.add(ones, neg)
        }
        _ => neg,
    };
    let neg = tape.log_sigmoid(neg);
    let total = tape.add(pos, neg);
    let loss = tape.mean(total);
    tape.scale(loss, -1.0)
}

fn check_batch_pair(sc: &Tensor, sh: &Tensor) -> Result<()> {
    if sc.shape() != sh.shape() || sc.shape().len() != 2 {
        return Err(Error::ShapeMismatch("S_c and S_h must be equal-shape matrices".into()));
    }
    if sc.rows() < 2 {
        return Err(Error::InvalidArgument(
            "contrastive loss needs a batch of at least 2".into(),
        ));
    }
    Ok(())
}

/// Contrastive loss with a seeded corruption of `S_c`.
pub fn contrastive_loss(sc: &Tensor, sh: &Tensor, corruption_seed: u64, form: ContrastiveForm) -> Result<f64> {
    check_batch_pair(sc, sh)?;
    let corruption = Corruption::seeded(sc.rows(), sc.cols(), corruption_seed);
    contrastive_loss_with(sc, sh, &corruption, form)
}

/// Contrastive loss with an explicit corruption.
pub fn contrastive_loss_with(sc: &Tensor, sh: &Tensor, corruption: &Corruption, form: ContrastiveForm) -> Result<f64> {
    check_batch_pair(sc, sh)?;
    if corruption.rows.len() != sc.rows() || corruption.cols.len() != sc.cols() {
        return Err(Error::ShapeMismatch("corruption does not match batch shape".into()));
    }
    let mut tape = Tape::new();
    let a = tape.leaf(sc);
    let b = tape.leaf(sh);
    let loss = contrastive_loss_tape(&mut tape, a, b, corruption, form);
    tape.check()?;
    Ok(tape.value(loss).item())
}

/// `L_r + β · L_s`.
pub fn joint_loss(rec: f64, contrastive: f64, beta: f64) -> Result<f64> {
    if beta.is_nan() || beta < 0.0 {
        return Err(Error::InvalidArgument(format!("beta must be non-negative, got {beta}")));
    }
    Ok(rec + beta * contrastive)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn rec_loss_two_items_half_half() {
        let s = ScoreVector {
            probs: Tensor::vector(vec![0.5, 0.5]),
        };
        assert_abs_diff_eq!(
            rec_loss(&s, 1, RecLoss::BinarySum).unwrap(),
            1.3862943611198906,
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(
            rec_loss(&s, 1, RecLoss::Categorical).unwrap(),
            std::f64::consts::LN_2,
            epsilon = 1e-12
        );
    }

    #[test]
    fn contrastive_zero_dots() {
        let z = Tensor::zeros(&[3, 2]);
        let l = contrastive_loss(&z, &z, 4, ContrastiveForm::Printed).unwrap();
        assert_abs_diff_eq!(l, 1.0064, epsilon = 1e-4);
        let l = contrastive_loss(&z, &z, 4, ContrastiveForm::Standard).unwrap();
        assert_abs_diff_eq!(l, 2.0 * std::f64::consts::LN_2, epsilon = 1e-12);
    }

    #[test]
    fn contrastive_rejects_single_row() {
        let z = Tensor::zeros(&[1, 2]);
        assert!(contrastive_loss(&z, &z, 0, ContrastiveForm::Printed).is_err());
    }

    #[test]
    fn joint_loss_arithmetic() {
        assert_abs_diff_eq!(joint_loss(2.0, 3.0, 0.01).unwrap(), 2.03, epsilon = 1e-15);
        assert_eq!(joint_loss(2.0, 3.0, 0.0).unwrap(), 2.0);
        assert!(joint_loss(1.0, 1.0, -1.0).is_err());
    }

    #[test]
    fn zero_session_scores_uniformly() {
        let emb = Tensor::matrix(4, 2, vec![1.0, 2.0, -1.0, 0.5, 3.0, 3.0, 0.0, 0.1]).unwrap();
        let s = score_items(&Tensor::zeros(&[2]), &emb).unwrap();
        for p in s.probs.data() {
            assert_abs_diff_eq!(*p, 0.25, epsilon = 1e-15);
        }
    }
}
