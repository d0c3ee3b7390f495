//! Tape-based reverse-mode differentiation over dense matrices.
//!
//! Every value on the tape is viewed as a row-major matrix; rank-1 tensors
//! are row vectors. Operations are recorded in evaluation order and
//! [`Tape::backward`] walks them in reverse, accumulating vector-Jacobian
//! products. The primitive set is closed: matmul (plain and `A·Bᵀ`),
//! sparse-dense matmul, elementwise arithmetic with row/column broadcast,
//! concatenation, slicing, row gathers, the activations used by the model,
//! row and segment softmax, reductions and the fused loss terms.
//!
//! Forward operations never fail. The first non-finite result is recorded
//! and surfaced as [`Error::NumericFault`] by [`Tape::check`] and
//! [`Tape::backward`].

use std::borrow::Cow;

use super::sparse::CsrMatrix;
use super::tensor::{self, gemm_nn, gemm_nt, gemm_tn, Tensor};
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Running record of attention-normalization checks.
#[derive(Clone, Copy, Debug, Default, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct AttentionAudit {
    /// Number of softmax groups inspected.
    pub groups: usize,
    /// Largest `|Σα − 1|` seen over all groups.
    pub max_deviation: f64,
}

impl AttentionAudit {
    pub fn merge(&mut self, other: &AttentionAudit) {
        self.groups += other.groups;
        self.max_deviation = self.max_deviation.max(other.max_deviation);
    }
}

enum Op<'a> {
    Leaf,
    MatMul(Var, Var),
    MatMulNt(Var, Var),
    Transpose(Var),
    SpMm {
        lhs_t: &'a CsrMatrix,
        x: Var,
    },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    MulCol(Var, Var),
    Scale(Var, f64),
    ConcatCols(Var, Var),
    ConcatRows(Vec<Var>),
    SliceCols(Var, usize),
    GatherRows(Var, Vec<usize>),
    LeakyRelu(Var, f64),
    Relu(Var),
    Tanh(Var),
    Sigmoid(Var),
    LogSigmoid(Var),
    SoftmaxRows(Var),
    SegmentSoftmax(Var, Vec<usize>),
    SegmentSum(Var, Vec<usize>),
    SumCols(Var),
    MeanRows(Var),
    Sum(Var),
    Mean(Var),
    BceSum {
        probs: Var,
        targets: Vec<usize>,
        clamp: f64,
    },
    Nll {
        probs: Var,
        targets: Vec<usize>,
        clamp: f64,
    },
}

struct Node<'a> {
    value: Cow<'a, Tensor>,
    rows: usize,
    cols: usize,
    op: Op<'a>,
}

/// Recording of a differentiable computation.
pub struct Tape<'a> {
    nodes: Vec<Node<'a>>,
    fault: Option<&'static str>,
    audit: Option<AttentionAudit>,
}

impl Default for Tape<'_> {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients produced by one backward pass.
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient for `v`, or `None` when `v` did not influence the output.
    pub fn get(&self, v: Var) -> Option<Tensor> {
        self.grads[v.0]
            .as_ref()
            .map(|g| Tensor::from_parts(self.shapes[v.0].clone(), g.clone()))
    }

    /// Gradient for `v`, zero-filled when `v` did not influence the output.
    pub fn get_or_zero(&self, v: Var) -> Tensor {
        self.get(v).unwrap_or_else(|| Tensor::zeros(&self.shapes[v.0]))
    }

    /// Raw gradient slice, if any.
    pub fn raw(&self, v: Var) -> Option<&[f64]> {
        self.grads[v.0].as_deref()
    }
}

fn out_shape(rows: usize, cols: usize) -> Vec<usize> {
    vec![rows, cols]
}

impl<'a> Tape<'a> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            fault: None,
            audit: None,
        }
    }

    /// Turns on normalization checks for every segment softmax.
    pub fn enable_attention_audit(&mut self) {
        self.audit = Some(AttentionAudit::default());
    }

    pub fn attention_audit(&self) -> Option<AttentionAudit> {
        self.audit
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Cow<'a, Tensor>, op: Op<'a>, primitive: &'static str) -> Var {
        if self.fault.is_none() && !value.is_finite() {
            self.fault = Some(primitive);
        }
        let (rows, cols) = (value.rows(), value.cols());
        self.nodes.push(Node { value, rows, cols, op });
        Var(self.nodes.len() - 1)
    }

    fn owned(&mut self, rows: usize, cols: usize, data: Vec<f64>, op: Op<'a>, name: &'static str) -> Var {
        let value = Tensor::from_parts(out_shape(rows, cols), data);
        self.push(Cow::Owned(value), op, name)
    }

    /// Borrowed leaf, typically a parameter.
    pub fn leaf(&mut self, value: &'a Tensor) -> Var {
        self.push(Cow::Borrowed(value), Op::Leaf, "leaf")
    }

    /// Owned leaf.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(Cow::Owned(value), Op::Leaf, "constant")
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn dims(&self, v: Var) -> (usize, usize) {
        let n = &self.nodes[v.0];
        (n.rows, n.cols)
    }

    fn data(&self, v: Var) -> &[f64] {
        self.nodes[v.0].value.data()
    }

    /// Fails if any recorded value is non-finite.
    pub fn check(&self) -> Result<()> {
        match self.fault {
            Some(primitive) => Err(Error::NumericFault { primitive }),
            None => Ok(()),
        }
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (m, k) = self.dims(a);
        let (k2, n) = self.dims(b);
        assert_eq!(k, k2, "matmul {m}x{k} by {k2}x{n}");
        let mut out = vec![0.0; m * n];
        gemm_nn(self.data(a), self.data(b), &mut out, m, k, n);
        self.owned(m, n, out, Op::MatMul(a, b), "matmul")
    }

    /// `a · bᵀ`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Var {
        let (m, k) = self.dims(a);
        let (n, k2) = self.dims(b);
        assert_eq!(k, k2, "matmul_nt {m}x{k} by ({n}x{k2})ᵀ");
        let mut out = vec![0.0; m * n];
        gemm_nt(self.data(a), self.data(b), &mut out, m, k, n);
        self.owned(m, n, out, Op::MatMulNt(a, b), "matmul_nt")
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let (r, c) = self.dims(a);
        let out = tensor::transpose(self.data(a), r, c);
        self.owned(c, r, out, Op::Transpose(a), "transpose")
    }

    /// `lhs · x` for a constant sparse `lhs`; `lhs_t` must be its transpose.
    pub fn spmm(&mut self, lhs: &CsrMatrix, lhs_t: &'a CsrMatrix, x: Var) -> Var {
        let (k, n) = self.dims(x);
        assert_eq!(lhs.cols(), k, "spmm inner dimension");
        debug_assert_eq!((lhs_t.rows(), lhs_t.cols()), (lhs.cols(), lhs.rows()));
        let mut out = vec![0.0; lhs.rows() * n];
        lhs.spmm_into(self.data(x), n, &mut out);
        self.owned(lhs.rows(), n, out, Op::SpMm { lhs_t, x }, "spmm")
    }

    fn zip_same(&mut self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, op: Op<'a>, name: &'static str) -> Var {
        let (r, c) = self.dims(a);
        assert_eq!((r, c), self.dims(b), "{name} shape mismatch");
        let out = self.data(a).iter().zip(self.data(b)).map(|(&x, &y)| f(x, y)).collect();
        self.owned(r, c, out, op, name)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.zip_same(a, b, |x, y| x + y, Op::Add(a, b), "add")
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.zip_same(a, b, |x, y| x - y, Op::Sub(a, b), "sub")
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.zip_same(a, b, |x, y| x * y, Op::Mul(a, b), "mul")
    }

    fn row_broadcast(&mut self, a: Var, row: Var, f: impl Fn(f64, f64) -> f64, op: Op<'a>, name: &'static str) -> Var {
        let (r, c) = self.dims(a);
        assert_eq!(self.dims(row), (1, c), "{name}: row vector must be 1x{c}");
        let rv = self.data(row);
        let out = self
            .data(a)
            .chunks(c.max(1))
            .flat_map(|chunk| chunk.iter().zip(rv).map(|(&x, &y)| f(x, y)))
            .collect();
        self.owned(r, c, out, op, name)
    }

    /// Adds a `1×c` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        self.row_broadcast(a, row, |x, y| x + y, Op::AddRow(a, row), "add_row")
    }

    /// Multiplies every row of `a` elementwise by a `1×c` row.
    pub fn mul_row(&mut self, a: Var, row: Var) -> Var {
        self.row_broadcast(a, row, |x, y| x * y, Op::MulRow(a, row), "mul_row")
    }

    /// Scales row `i` of `a` by `col[i]` (`col` is `r×1`).
    pub fn mul_col(&mut self, a: Var, col: Var) -> Var {
        let (r, c) = self.dims(a);
        assert_eq!(self.dims(col), (r, 1), "mul_col: column must be {r}x1");
        let cv = self.data(col);
        let out = self
            .data(a)
            .chunks(c.max(1))
            .zip(cv)
            .flat_map(|(chunk, &s)| chunk.iter().map(move |&x| x * s))
            .collect();
        self.owned(r, c, out, Op::MulCol(a, col), "mul_col")
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let (r, c) = self.dims(a);
        let out = self.data(a).iter().map(|&x| x * s).collect();
        self.owned(r, c, out, Op::Scale(a, s), "scale")
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Var {
        let (r, ca) = self.dims(a);
        let (rb, cb) = self.dims(b);
        assert_eq!(r, rb, "concat_cols row mismatch");
        let mut out = Vec::with_capacity(r * (ca + cb));
        for i in 0..r {
            out.extend_from_slice(&self.data(a)[i * ca..(i + 1) * ca]);
            out.extend_from_slice(&self.data(b)[i * cb..(i + 1) * cb]);
        }
        self.owned(r, ca + cb, out, Op::ConcatCols(a, b), "concat_cols")
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "concat_rows of nothing");
        let c = self.dims(parts[0]).1;
        let mut rows = 0;
        let mut out = Vec::new();
        for &p in parts {
            let (r, pc) = self.dims(p);
            assert_eq!(pc, c, "concat_rows column mismatch");
            rows += r;
            out.extend_from_slice(self.data(p));
        }
        self.owned(rows, c, out, Op::ConcatRows(parts.to_vec()), "concat_rows")
    }

    /// Columns `start..end` of `a`.
    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Var {
        let (r, c) = self.dims(a);
        assert!(start <= end && end <= c, "slice_cols {start}..{end} of {c}");
        let w = end - start;
        let mut out = Vec::with_capacity(r * w);
        for i in 0..r {
            out.extend_from_slice(&self.data(a)[i * c + start..i * c + end]);
        }
        self.owned(r, w, out, Op::SliceCols(a, start), "slice_cols")
    }

    /// Rows of `a` selected by `indices` (repeats allowed).
    pub fn gather_rows(&mut self, a: Var, indices: Vec<usize>) -> Var {
        let (r, c) = self.dims(a);
        let mut out = Vec::with_capacity(indices.len() * c);
        for &i in &indices {
            assert!(i < r, "gather row {i} of {r}");
            out.extend_from_slice(&self.data(a)[i * c..(i + 1) * c]);
        }
        let n = indices.len();
        self.owned(n, c, out, Op::GatherRows(a, indices), "gather_rows")
    }

    fn map(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op<'a>, name: &'static str) -> Var {
        let (r, c) = self.dims(a);
        let out = self.data(a).iter().map(|&x| f(x)).collect();
        self.owned(r, c, out, op, name)
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Var {
        self.map(
            a,
            |x| if x > 0.0 { x } else { slope * x },
            Op::LeakyRelu(a, slope),
            "leaky_relu",
        )
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.map(a, |x| x.max(0.0), Op::Relu(a), "relu")
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.map(a, f64::tanh, Op::Tanh(a), "tanh")
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.map(a, tensor::sigmoid, Op::Sigmoid(a), "sigmoid")
    }

    pub fn log_sigmoid(&mut self, a: Var) -> Var {
        self.map(a, tensor::log_sigmoid, Op::LogSigmoid(a), "log_sigmoid")
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let (r, c) = self.dims(a);
        let out = self.data(a).chunks(c.max(1)).flat_map(tensor::softmax).collect();
        self.owned(r, c, out, Op::SoftmaxRows(a), "softmax_rows")
    }

    /// Softmax of an `E×1` column within each segment
    /// `offsets[s]..offsets[s + 1]`.
    pub fn segment_softmax(&mut self, a: Var, offsets: Vec<usize>) -> Var {
        let (e, c) = self.dims(a);
        assert_eq!(c, 1, "segment_softmax expects a column");
        assert_eq!(
            offsets.last().copied().unwrap_or(0),
            e,
            "segment offsets must cover input"
        );
        let x = self.data(a);
        let mut out = vec![0.0; e];
        let mut audit = AttentionAudit::default();
        for w in offsets.windows(2) {
            if w[0] == w[1] {
                continue;
            }
            let sm = tensor::softmax(&x[w[0]..w[1]]);
            let total: f64 = sm.iter().sum();
            audit.groups += 1;
            audit.max_deviation = audit.max_deviation.max((total - 1.0).abs());
            out[w[0]..w[1]].copy_from_slice(&sm);
        }
        if let Some(acc) = self.audit.as_mut() {
            acc.merge(&audit);
        }
        self.owned(e, 1, out, Op::SegmentSoftmax(a, offsets), "segment_softmax")
    }

    /// Sums the rows of `a` within each segment; empty segments give zero rows.
    pub fn segment_sum(&mut self, a: Var, offsets: Vec<usize>) -> Var {
        let (e, c) = self.dims(a);
        assert_eq!(
            offsets.last().copied().unwrap_or(0),
            e,
            "segment offsets must cover input"
        );
        let segments = offsets.len().saturating_sub(1);
        let x = self.data(a);
        let mut out = vec![0.0; segments * c];
        for (s, w) in offsets.windows(2).enumerate() {
            let dst = &mut out[s * c..(s + 1) * c];
            for r in w[0]..w[1] {
                for (o, &v) in dst.iter_mut().zip(&x[r * c..(r + 1) * c]) {
                    *o += v;
                }
            }
        }
        self.owned(segments, c, out, Op::SegmentSum(a, offsets), "segment_sum")
    }

    /// Row sums, giving an `r×1` column.
    pub fn sum_cols(&mut self, a: Var) -> Var {
        let (r, c) = self.dims(a);
        let out = self.data(a).chunks(c.max(1)).map(|ch| ch.iter().sum()).collect();
        self.owned(r, 1, out, Op::SumCols(a), "sum_cols")
    }

    /// Column means, giving a `1×c` row.
    pub fn mean_rows(&mut self, a: Var) -> Var {
        let (r, c) = self.dims(a);
        assert!(r > 0, "mean_rows of empty matrix");
        let mut out = vec![0.0; c];
        for ch in self.data(a).chunks(c.max(1)) {
            for (o, &v) in out.iter_mut().zip(ch) {
                *o += v;
            }
        }
        let inv = 1.0 / r as f64;
        out.iter_mut().for_each(|v| *v *= inv);
        self.owned(1, c, out, Op::MeanRows(a), "mean_rows")
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.data(a).iter().sum();
        self.owned(1, 1, vec![s], Op::Sum(a), "sum")
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let d = self.data(a);
        let s = d.iter().sum::<f64>() / d.len() as f64;
        self.owned(1, 1, vec![s], Op::Mean(a), "mean")
    }

    /// Per-row `−Σ_j [y_j log p_j + (1 − y_j) log(1 − p_j)]` with one-hot
    /// `y` at `targets[row]` and `p` clamped to `[clamp, 1 − clamp]`.
    pub fn bce_sum(&mut self, probs: Var, targets: Vec<usize>, clamp: f64) -> Var {
        let (r, c) = self.dims(probs);
        assert_eq!(targets.len(), r);
        let p = self.data(probs);
        let out = (0..r)
            .map(|i| {
                let row = &p[i * c..(i + 1) * c];
                row.iter()
                    .enumerate()
                    .map(|(j, &pj)| {
                        let q = pj.clamp(clamp, 1.0 - clamp);
                        if j == targets[i] {
                            -q.ln()
                        } else {
                            -(1.0 - q).ln()
                        }
                    })
                    .sum()
            })
            .collect();
        self.owned(r, 1, out, Op::BceSum { probs, targets, clamp }, "bce_sum")
    }

    /// Per-row `−log p_target` with clamping.
    pub fn nll(&mut self, probs: Var, targets: Vec<usize>, clamp: f64) -> Var {
        let (r, c) = self.dims(probs);
        assert_eq!(targets.len(), r);
        let p = self.data(probs);
        let out = (0..r)
            .map(|i| -p[i * c + targets[i]].clamp(clamp, 1.0 - clamp).ln())
            .collect();
        self.owned(r, 1, out, Op::Nll { probs, targets, clamp }, "nll")
    }

    /// Reverse pass from a `1×1` output.
    pub fn backward(&self, output: Var) -> Result<Gradients> {
        assert_eq!(self.dims(output), (1, 1), "backward needs a scalar output");
        self.backward_with_seed(output, &[1.0])
    }

    /// Reverse pass seeded with an explicit upstream gradient for `output`.
    pub fn backward_with_seed(&self, output: Var, seed: &[f64]) -> Result<Gradients> {
        self.check()?;
        let (r, c) = self.dims(output);
        assert_eq!(seed.len(), r * c, "seed shape");
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; output.0 + 1];
        grads[output.0] = Some(seed.to_vec());

        for idx in (0..=output.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(idx, &g, &mut grads)?;
            grads[idx] = Some(g);
        }
        grads.resize(self.nodes.len(), None);
        let shapes = self.nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        Ok(Gradients { grads, shapes })
    }

    fn propagate(&self, idx: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) -> Result<()> {
        let node = &self.nodes[idx];
        if g.iter().any(|v| !v.is_finite()) {
            return Err(Error::NumericFault {
                primitive: op_name(&node.op),
            });
        }
        let (rows, cols) = (node.rows, node.cols);
        let y = node.value.data();

        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = self.dims(*a);
                let n = cols;
                // dA = G·Bᵀ, dB = Aᵀ·G
                gemm_nt(g, self.data(*b), acc(grads, *a, m * k), m, n, k);
                gemm_tn(self.data(*a), g, acc(grads, *b, k * n), k, m, n);
            }
            Op::MatMulNt(a, b) => {
                let (m, k) = self.dims(*a);
                let n = cols;
                // C = A·Bᵀ: dA = G·B, dB = Gᵀ·A
                gemm_nn(g, self.data(*b), acc(grads, *a, m * k), m, n, k);
                gemm_tn(g, self.data(*a), acc(grads, *b, n * k), n, m, k);
            }
            Op::Transpose(a) => {
                let t = tensor::transpose(g, rows, cols);
                add_into(acc(grads, *a, t.len()), &t);
            }
            Op::SpMm { lhs_t, x } => {
                let (k, n) = self.dims(*x);
                lhs_t.spmm_into(g, n, acc(grads, *x, k * n));
            }
            Op::Add(a, b) => {
                add_into(acc(grads, *a, g.len()), g);
                add_into(acc(grads, *b, g.len()), g);
            }
            Op::Sub(a, b) => {
                add_into(acc(grads, *a, g.len()), g);
                let gb = acc(grads, *b, g.len());
                for (o, &v) in gb.iter_mut().zip(g) {
                    *o -= v;
                }
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.data(*a), self.data(*b));
                let ga = acc(grads, *a, g.len());
                for ((o, &gi), &x) in ga.iter_mut().zip(g).zip(bv) {
                    *o += gi * x;
                }
                let gb = acc(grads, *b, g.len());
                for ((o, &gi), &x) in gb.iter_mut().zip(g).zip(av) {
                    *o += gi * x;
                }
            }
            Op::AddRow(a, row) => {
                add_into(acc(grads, *a, g.len()), g);
                let gr = acc(grads, *row, cols);
                for ch in g.chunks(cols.max(1)) {
                    add_into(gr, ch);
                }
            }
            Op::MulRow(a, row) => {
                let (av, rv) = (self.data(*a), self.data(*row));
                let ga = acc(grads, *a, g.len());
                for (gch, och) in g.chunks(cols.max(1)).zip(ga.chunks_mut(cols.max(1))) {
                    for ((o, &gi), &r) in och.iter_mut().zip(gch).zip(rv) {
                        *o += gi * r;
                    }
                }
                let gr = acc(grads, *row, cols);
                for (gch, ach) in g.chunks(cols.max(1)).zip(av.chunks(cols.max(1))) {
                    for ((o, &gi), &x) in gr.iter_mut().zip(gch).zip(ach) {
                        *o += gi * x;
                    }
                }
            }
            Op::MulCol(a, col) => {
                let (av, cv) = (self.data(*a), self.data(*col));
                let ga = acc(grads, *a, g.len());
                for ((gch, och), &s) in g.chunks(cols.max(1)).zip(ga.chunks_mut(cols.max(1))).zip(cv) {
                    for (o, &gi) in och.iter_mut().zip(gch) {
                        *o += gi * s;
                    }
                }
                let gc = acc(grads, *col, rows);
                for (i, (gch, ach)) in g.chunks(cols.max(1)).zip(av.chunks(cols.max(1))).enumerate() {
                    gc[i] += tensor::dot(gch, ach);
                }
            }
            Op::Scale(a, s) => {
                let ga = acc(grads, *a, g.len());
                for (o, &gi) in ga.iter_mut().zip(g) {
                    *o += gi * s;
                }
            }
            Op::ConcatCols(a, b) => {
                let ca = self.dims(*a).1;
                let cb = cols - ca;
                {
                    let ga = acc(grads, *a, rows * ca);
                    for i in 0..rows {
                        add_into(&mut ga[i * ca..(i + 1) * ca], &g[i * cols..i * cols + ca]);
                    }
                }
                let gb = acc(grads, *b, rows * cb);
                for i in 0..rows {
                    add_into(&mut gb[i * cb..(i + 1) * cb], &g[i * cols + ca..(i + 1) * cols]);
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for p in parts {
                    let len = self.data(*p).len();
                    add_into(acc(grads, *p, len), &g[offset..offset + len]);
                    offset += len;
                }
            }
            Op::SliceCols(a, start) => {
                let c = self.dims(*a).1;
                let ga = acc(grads, *a, rows * c);
                for i in 0..rows {
                    add_into(
                        &mut ga[i * c + start..i * c + start + cols],
                        &g[i * cols..(i + 1) * cols],
                    );
                }
            }
            Op::GatherRows(a, indices) => {
                let (r, c) = self.dims(*a);
                let ga = acc(grads, *a, r * c);
                for (k, &i) in indices.iter().enumerate() {
                    add_into(&mut ga[i * c..(i + 1) * c], &g[k * c..(k + 1) * c]);
                }
            }
            Op::LeakyRelu(a, slope) => {
                let x = self.data(*a);
                let ga = acc(grads, *a, g.len());
                for ((o, &gi), &xi) in ga.iter_mut().zip(g).zip(x) {
                    *o += if xi > 0.0 { gi } else { slope * gi };
                }
            }
            Op::Relu(a) => {
                let x = self.data(*a);
                let ga = acc(grads, *a, g.len());
                for ((o, &gi), &xi) in ga.iter_mut().zip(g).zip(x) {
                    if xi > 0.0 {
                        *o += gi;
                    }
                }
            }
            Op::Tanh(a) => {
                let ga = acc(grads, *a, g.len());
                for ((o, &gi), &yi) in ga.iter_mut().zip(g).zip(y) {
                    *o += gi * (1.0 - yi * yi);
                }
            }
            Op::Sigmoid(a) => {
                let ga = acc(grads, *a, g.len());
                for ((o, &gi), &yi) in ga.iter_mut().zip(g).zip(y) {
                    *o += gi * yi * (1.0 - yi);
                }
            }
            Op::LogSigmoid(a) => {
                let x = self.data(*a);
                let ga = acc(grads, *a, g.len());
                for ((o, &gi), &xi) in ga.iter_mut().zip(g).zip(x) {
                    // d/dx log σ(x) = σ(−x)
                    *o += gi * tensor::sigmoid(-xi);
                }
            }
            Op::SoftmaxRows(a) => {
                let ga = acc(grads, *a, g.len());
                for ((gch, ych), och) in g
                    .chunks(cols.max(1))
                    .zip(y.chunks(cols.max(1)))
                    .zip(ga.chunks_mut(cols.max(1)))
                {
                    let inner = tensor::dot(gch, ych);
                    for ((o, &gi), &yi) in och.iter_mut().zip(gch).zip(ych) {
                        *o += yi * (gi - inner);
                    }
                }
            }
            Op::SegmentSoftmax(a, offsets) => {
                let ga = acc(grads, *a, g.len());
                for w in offsets.windows(2) {
                    let span = w[0]..w[1];
                    let inner = tensor::dot(&g[span.clone()], &y[span.clone()]);
                    for k in span {
                        ga[k] += y[k] * (g[k] - inner);
                    }
                }
            }
            Op::SegmentSum(a, offsets) => {
                let (e, c) = self.dims(*a);
                let ga = acc(grads, *a, e * c);
                for (s, w) in offsets.windows(2).enumerate() {
                    let gs = &g[s * c..(s + 1) * c];
                    for r in w[0]..w[1] {
                        add_into(&mut ga[r * c..(r + 1) * c], gs);
                    }
                }
            }
            Op::SumCols(a) => {
                let c = self.dims(*a).1;
                let ga = acc(grads, *a, rows * c);
                for (i, och) in ga.chunks_mut(c.max(1)).enumerate() {
                    och.iter_mut().for_each(|o| *o += g[i]);
                }
            }
            Op::MeanRows(a) => {
                let r = self.dims(*a).0;
                let inv = 1.0 / r as f64;
                let ga = acc(grads, *a, r * cols);
                for och in ga.chunks_mut(cols.max(1)) {
                    for (o, &gi) in och.iter_mut().zip(g) {
                        *o += gi * inv;
                    }
                }
            }
            Op::Sum(a) => {
                let len = self.data(*a).len();
                acc(grads, *a, len).iter_mut().for_each(|o| *o += g[0]);
            }
            Op::Mean(a) => {
                let len = self.data(*a).len();
                let s = g[0] / len as f64;
                acc(grads, *a, len).iter_mut().for_each(|o| *o += s);
            }
            Op::BceSum { probs, targets, clamp } => {
                let c = self.dims(*probs).1;
                let p = self.data(*probs);
                let gp = acc(grads, *probs, p.len());
                for (i, &t) in targets.iter().enumerate() {
                    for j in 0..c {
                        let pj = p[i * c + j];
                        if pj < *clamp || pj > 1.0 - clamp {
                            continue;
                        }
                        let d = if j == t { -1.0 / pj } else { 1.0 / (1.0 - pj) };
                        gp[i * c + j] += g[i] * d;
                    }
                }
            }
            Op::Nll { probs, targets, clamp } => {
                let c = self.dims(*probs).1;
                let p = self.data(*probs);
                let gp = acc(grads, *probs, p.len());
                for (i, &t) in targets.iter().enumerate() {
                    let pt = p[i * c + t];
                    if pt >= *clamp && pt <= 1.0 - clamp {
                        gp[i * c + t] -= g[i] / pt;
                    }
                }
            }
        }

        Ok(())
    }
}

fn op_name(op: &Op<'_>) -> &'static str {
    match op {
        Op::Leaf => "leaf",
        Op::MatMul(..) => "matmul",
        Op::MatMulNt(..) => "matmul_nt",
        Op::Transpose(..) => "transpose",
        Op::SpMm { .. } => "spmm",
        Op::Add(..) => "add",
        Op::Sub(..) => "sub",
        Op::Mul(..) => "mul",
        Op::AddRow(..) => "add_row",
        Op::MulRow(..) => "mul_row",
        Op::MulCol(..) => "mul_col",
        Op::Scale(..) => "scale",
        Op::ConcatCols(..) => "concat_cols",
        Op::ConcatRows(..) => "concat_rows",
        Op::SliceCols(..) => "slice_cols",
        Op::GatherRows(..) => "gather_rows",
        Op::LeakyRelu(..) => "leaky_relu",
        Op::Relu(..) => "relu",
        Op::Tanh(..) => "tanh",
        Op::Sigmoid(..) => "sigmoid",
        Op::LogSigmoid(..) => "log_sigmoid",
        Op::SoftmaxRows(..) => "softmax_rows",
        Op::SegmentSoftmax(..) => "segment_softmax",
        Op::SegmentSum(..) => "segment_sum",
        Op::SumCols(..) => "sum_cols",
        Op::MeanRows(..) => "mean_rows",
        Op::Sum(..) => "sum",
        Op::Mean(..) => "mean",
        Op::BceSum { .. } => "bce_sum",
        Op::Nll { .. } => "nll",
    }
}

fn acc(grads: &mut [Option<Vec<f64>>], v: Var, len: usize) -> &mut [f64] {
    grads[v.0].get_or_insert_with(|| vec![0.0; len])
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}
