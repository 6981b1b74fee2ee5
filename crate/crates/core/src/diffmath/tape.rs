//! Reverse-mode differentiation over matrix-valued nodes.
//!
//! A [`Tape`] records every operation of one objective evaluation. Calling
//! [`Tape::backward`] replays the record in reverse and accumulates adjoints.
//! Tapes are cheap and meant to be rebuilt for every evaluation.

use std::cell::RefCell;
use std::sync::atomic::{AtomicU64, Ordering};

use super::linalg::{cholesky_raw, tri_solve_matrix, tri_solve_upper_t_matrix};
use super::{Matrix, ParamVector};
use crate::error::{Error, Result};

static NEXT_TAPE_ID: AtomicU64 = AtomicU64::new(1);

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var {
    tape: u64,
    idx: usize,
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(usize, usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    AddRow(usize, usize),
    AddScalar(usize, usize),
    MulScalar(usize, usize),
    Scale(usize, f64),
    Offset(usize),
    Tanh(usize),
    Exp(usize),
    Ln(usize),
    Square(usize),
    Sum(usize),
    LogSumExp(usize),
    RowSum(usize),
    RowLogSumExp(usize),
    Cholesky(usize),
    TriSolve(usize, usize),
    Transpose(usize),
    Slice { src: usize, offset: usize },
    Concat(Vec<usize>),
    SqDist(usize, usize),
    SumLogDiag(usize),
}

struct Node {
    value: Matrix,
    op: Op,
    requires_grad: bool,
}

/// Recorded computation.
pub struct Tape {
    id: u64,
    nodes: RefCell<Vec<Node>>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

/// Adjoints of every node after a backward pass.
pub struct Gradients {
    tape: u64,
    grads: Vec<Option<Matrix>>,
    shapes: Vec<(usize, usize)>,
}

impl Gradients {
    /// Adjoint of the leaf `v`, zeros when `v` does not influence the output.
    pub fn wrt(&self, v: Var) -> Matrix {
        assert_eq!(v.tape, self.tape, "variable from another tape");
        match &self.grads[v.idx] {
            Some(g) => g.clone(),
            None => {
                let (r, c) = self.shapes[v.idx];
                Matrix::zeros(r, c)
            }
        }
    }
}

impl Tape {
    pub fn new() -> Self {
        Self {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            nodes: RefCell::new(Vec::with_capacity(64)),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: Matrix, op: Op, requires_grad: bool) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var {
            tape: self.id,
            idx: nodes.len() - 1,
        }
    }

    fn check(&self, v: Var) {
        assert_eq!(v.tape, self.id, "variable from another tape");
    }

    fn unary(&self, a: Var, f: impl FnOnce(&Matrix) -> Matrix, op: Op) -> Var {
        self.check(a);
        let (value, rg) = {
            let nodes = self.nodes.borrow();
            let n = &nodes[a.idx];
            (f(&n.value), n.requires_grad)
        };
        self.push(value, op, rg)
    }

    fn binary(&self, a: Var, b: Var, f: impl FnOnce(&Matrix, &Matrix) -> Matrix, op: Op) -> Var {
        self.check(a);
        self.check(b);
        let (value, rg) = {
            let nodes = self.nodes.borrow();
            let (na, nb) = (&nodes[a.idx], &nodes[b.idx]);
            (f(&na.value, &nb.value), na.requires_grad || nb.requires_grad)
        };
        self.push(value, op, rg)
    }

    /// Differentiable input.
    pub fn param(&self, value: Matrix) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Non-differentiable input.
    pub fn constant(&self, value: Matrix) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn scalar_constant(&self, value: f64) -> Var {
        self.constant(Matrix::filled(1, 1, value))
    }

    pub fn value(&self, v: Var) -> Matrix {
        self.check(v);
        self.nodes.borrow()[v.idx].value.clone()
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.check(v);
        self.nodes.borrow()[v.idx].value.shape()
    }

    /// Value of a 1×1 node.
    pub fn scalar(&self, v: Var) -> f64 {
        self.check(v);
        let nodes = self.nodes.borrow();
        let m = &nodes[v.idx].value;
        assert_eq!(m.shape(), (1, 1), "scalar() on non-scalar node");
        m[(0, 0)]
    }

    pub fn matmul(&self, a: Var, b: Var) -> Var {
        self.binary(a, b, |x, y| x.matmul(y), Op::MatMul(a.idx, b.idx))
    }

    pub fn add(&self, a: Var, b: Var) -> Var {
        self.binary(a, b, |x, y| x.zip_map(y, |p, q| p + q), Op::Add(a.idx, b.idx))
    }

    pub fn sub(&self, a: Var, b: Var) -> Var {
        self.binary(a, b, |x, y| x.zip_map(y, |p, q| p - q), Op::Sub(a.idx, b.idx))
    }

    /// Elementwise product.
    pub fn mul(&self, a: Var, b: Var) -> Var {
        self.binary(a, b, |x, y| x.zip_map(y, |p, q| p * q), Op::Mul(a.idx, b.idx))
    }

    /// Adds the `1×n` row `row` to every row of `a`.
    pub fn add_row(&self, a: Var, row: Var) -> Var {
        self.binary(
            a,
            row,
            |x, r| {
                assert_eq!(r.rows(), 1);
                assert_eq!(r.cols(), x.cols());
                let mut out = x.clone();
                for i in 0..out.rows() {
                    for (o, b) in out.row_mut(i).iter_mut().zip(r.as_slice()) {
                        *o += b;
                    }
                }
                out
            },
            Op::AddRow(a.idx, row.idx),
        )
    }

    /// Adds the `1×1` node `s` to every entry of `a`.
    pub fn add_scalar(&self, a: Var, s: Var) -> Var {
        self.binary(
            a,
            s,
            |x, s| {
                assert_eq!(s.shape(), (1, 1));
                let c = s[(0, 0)];
                x.map(|v| v + c)
            },
            Op::AddScalar(a.idx, s.idx),
        )
    }

    /// Multiplies every entry of `a` by the `1×1` node `s`.
    pub fn mul_scalar(&self, a: Var, s: Var) -> Var {
        self.binary(
            a,
            s,
            |x, s| {
                assert_eq!(s.shape(), (1, 1));
                let c = s[(0, 0)];
                x.map(|v| v * c)
            },
            Op::MulScalar(a.idx, s.idx),
        )
    }

    pub fn scale(&self, a: Var, c: f64) -> Var {
        self.unary(a, |x| x.scale(c), Op::Scale(a.idx, c))
    }

    pub fn neg(&self, a: Var) -> Var {
        self.scale(a, -1.0)
    }

    /// `a + c` for a constant `c`.
    pub fn offset(&self, a: Var, c: f64) -> Var {
        self.unary(a, |x| x.map(|v| v + c), Op::Offset(a.idx))
    }

    /// `a + c·I` for a constant `c`.
    pub fn add_diag(&self, a: Var, c: f64) -> Var {
        self.unary(
            a,
            |x| {
                let mut out = x.clone();
                for i in 0..out.rows().min(out.cols()) {
                    out[(i, i)] += c;
                }
                out
            },
            Op::Offset(a.idx),
        )
    }

    pub fn tanh(&self, a: Var) -> Var {
        self.unary(a, |x| x.map(f64::tanh), Op::Tanh(a.idx))
    }

    pub fn exp(&self, a: Var) -> Var {
        self.unary(a, |x| x.map(f64::exp), Op::Exp(a.idx))
    }

    pub fn ln(&self, a: Var) -> Var {
        self.unary(a, |x| x.map(f64::ln), Op::Ln(a.idx))
    }

    pub fn square(&self, a: Var) -> Var {
        self.unary(a, |x| x.map(|v| v * v), Op::Square(a.idx))
    }

    /// Sum of all entries, as a `1×1` node.
    pub fn sum(&self, a: Var) -> Var {
        self.unary(a, |x| Matrix::filled(1, 1, x.sum()), Op::Sum(a.idx))
    }

    /// Mean of all entries.
    pub fn mean(&self, a: Var) -> Var {
        let n = {
            let (r, c) = self.shape(a);
            (r * c) as f64
        };
        let s = self.sum(a);
        self.scale(s, 1.0 / n)
    }

    /// Log-sum-exp over all entries, as a `1×1` node.
    pub fn logsumexp(&self, a: Var) -> Var {
        self.unary(
            a,
            |x| Matrix::filled(1, 1, super::linalg::logsumexp_unchecked(x.as_slice())),
            Op::LogSumExp(a.idx),
        )
    }

    /// Per-row sums, `m×n → m×1`.
    pub fn row_sum(&self, a: Var) -> Var {
        self.unary(
            a,
            |x| Matrix::from_raw(x.rows(), 1, (0..x.rows()).map(|i| x.row(i).iter().sum()).collect()),
            Op::RowSum(a.idx),
        )
    }

    /// Per-row log-sum-exp, `m×n → m×1`.
    pub fn row_logsumexp(&self, a: Var) -> Var {
        self.unary(
            a,
            |x| {
                Matrix::from_raw(
                    x.rows(),
                    1,
                    (0..x.rows())
                        .map(|i| super::linalg::logsumexp_unchecked(x.row(i)))
                        .collect(),
                )
            },
            Op::RowLogSumExp(a.idx),
        )
    }

    /// Lower Cholesky factor of a symmetric positive definite node.
    ///
    /// Fails with `NotPositiveDefinite`; callers add jitter beforehand with
    /// [`Tape::add_diag`].
    pub fn cholesky(&self, a: Var) -> Result<Var> {
        self.check(a);
        let (value, rg) = {
            let nodes = self.nodes.borrow();
            let n = &nodes[a.idx];
            if !n.value.is_square() {
                return Err(Error::ShapeMismatch("cholesky of non-square node".into()));
            }
            match cholesky_raw(&n.value, 0.0) {
                Some(l) => (l, n.requires_grad),
                None => return Err(Error::NotPositiveDefinite { max_jitter: 0.0 }),
            }
        };
        Ok(self.push(value, Op::Cholesky(a.idx), rg))
    }

    /// Solves `L X = B` for lower-triangular `L`.
    pub fn tri_solve(&self, l: Var, b: Var) -> Result<Var> {
        self.check(l);
        self.check(b);
        {
            let nodes = self.nodes.borrow();
            let lv = &nodes[l.idx].value;
            if !lv.is_square() || lv.rows() != nodes[b.idx].value.rows() {
                return Err(Error::ShapeMismatch("tri_solve shapes".into()));
            }
            if let Some(index) = (0..lv.rows()).find(|&i| lv[(i, i)] == 0.0) {
                return Err(Error::SingularMatrix { index });
            }
        }
        Ok(self.binary(l, b, tri_solve_matrix, Op::TriSolve(l.idx, b.idx)))
    }

    pub fn transpose(&self, a: Var) -> Var {
        self.unary(a, Matrix::transpose, Op::Transpose(a.idx))
    }

    /// Reinterprets `rows·cols` consecutive entries of `src` (row-major) as a
    /// new `rows×cols` node.
    pub fn slice(&self, src: Var, offset: usize, rows: usize, cols: usize) -> Var {
        self.unary(
            src,
            |x| {
                let s = x.as_slice();
                assert!(offset + rows * cols <= s.len(), "slice out of range");
                Matrix::from_raw(rows, cols, s[offset..offset + rows * cols].to_vec())
            },
            Op::Slice { src: src.idx, offset },
        )
    }

    /// Concatenates the flattened entries of `parts` into a `1×N` row.
    pub fn concat(&self, parts: &[Var]) -> Var {
        let (value, rg) = {
            let nodes = self.nodes.borrow();
            let mut data = Vec::new();
            let mut rg = false;
            for p in parts {
                self.check(*p);
                data.extend_from_slice(nodes[p.idx].value.as_slice());
                rg |= nodes[p.idx].requires_grad;
            }
            (Matrix::from_raw(1, data.len(), data), rg)
        };
        self.push(value, Op::Concat(parts.iter().map(|p| p.idx).collect()), rg)
    }

    /// Pairwise squared Euclidean distances between the rows of `a` and `b`.
    pub fn sq_dist(&self, a: Var, b: Var) -> Var {
        self.binary(
            a,
            b,
            |x, y| {
                assert_eq!(x.cols(), y.cols());
                let mut out = Matrix::zeros(x.rows(), y.rows());
                for i in 0..x.rows() {
                    for j in 0..y.rows() {
                        out[(i, j)] = x
                            .row(i)
                            .iter()
                            .zip(y.row(j))
                            .map(|(p, q)| (p - q) * (p - q))
                            .sum();
                    }
                }
                out
            },
            Op::SqDist(a.idx, b.idx),
        )
    }

    /// `Σ ln a_ii` as a `1×1` node.
    pub fn sum_log_diag(&self, a: Var) -> Var {
        self.unary(
            a,
            |x| Matrix::filled(1, 1, (0..x.rows().min(x.cols())).map(|i| x[(i, i)].ln()).sum()),
            Op::SumLogDiag(a.idx),
        )
    }

    /// Runs the reverse sweep from a `1×1` output.
    pub fn backward(&self, output: Var) -> Result<Gradients> {
        if output.tape != self.id {
            return Err(Error::UnregisteredOperation(
                "output was not recorded on this tape".into(),
            ));
        }
        let nodes = self.nodes.borrow();
        if nodes[output.idx].value.shape() != (1, 1) {
            return Err(Error::ShapeMismatch("backward needs a scalar output".into()));
        }
        let mut grads: Vec<Option<Matrix>> = vec![None; nodes.len()];
        grads[output.idx] = Some(Matrix::filled(1, 1, 1.0));

        for idx in (0..=output.idx).rev() {
            let node = &nodes[idx];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            let val = |i: usize| &nodes[i].value;
            let mut acc = |i: usize, d: Matrix| {
                if !nodes[i].requires_grad {
                    return;
                }
                match &mut grads[i] {
                    Some(existing) => existing.add_assign(&d),
                    slot => *slot = Some(d),
                }
            };
            match &node.op {
                Op::Leaf => unreachable!(),
                Op::MatMul(a, b) => {
                    if nodes[*a].requires_grad {
                        acc(*a, g.matmul_t(val(*b)));
                    }
                    if nodes[*b].requires_grad {
                        acc(*b, val(*a).tmatmul(&g));
                    }
                }
                Op::Add(a, b) => {
                    acc(*a, g.clone());
                    acc(*b, g);
                }
                Op::Sub(a, b) => {
                    acc(*b, g.scale(-1.0));
                    acc(*a, g);
                }
                Op::Mul(a, b) => {
                    acc(*a, g.zip_map(val(*b), |p, q| p * q));
                    acc(*b, g.zip_map(val(*a), |p, q| p * q));
                }
                Op::AddRow(a, r) => {
                    let mut rg = Matrix::zeros(1, g.cols());
                    for i in 0..g.rows() {
                        for (o, v) in rg.as_mut_slice().iter_mut().zip(g.row(i)) {
                            *o += v;
                        }
                    }
                    acc(*r, rg);
                    acc(*a, g);
                }
                Op::AddScalar(a, s) => {
                    acc(*s, Matrix::filled(1, 1, g.sum()));
                    acc(*a, g);
                }
                Op::MulScalar(a, s) => {
                    let c = val(*s)[(0, 0)];
                    let ds: f64 = g.as_slice().iter().zip(val(*a).as_slice()).map(|(p, q)| p * q).sum();
                    acc(*s, Matrix::filled(1, 1, ds));
                    acc(*a, g.scale(c));
                }
                Op::Scale(a, c) => acc(*a, g.scale(*c)),
                Op::Offset(a) => acc(*a, g),
                Op::Tanh(a) => acc(*a, g.zip_map(&node.value, |p, t| p * (1.0 - t * t))),
                Op::Exp(a) => acc(*a, g.zip_map(&node.value, |p, e| p * e)),
                Op::Ln(a) => acc(*a, g.zip_map(val(*a), |p, x| p / x)),
                Op::Square(a) => acc(*a, g.zip_map(val(*a), |p, x| 2.0 * p * x)),
                Op::Sum(a) => {
                    let (r, c) = val(*a).shape();
                    acc(*a, Matrix::filled(r, c, g[(0, 0)]));
                }
                Op::LogSumExp(a) => {
                    let lse = node.value[(0, 0)];
                    let gv = g[(0, 0)];
                    acc(*a, val(*a).map(|x| gv * (x - lse).exp()));
                }
                Op::RowSum(a) => {
                    let x = val(*a);
                    let mut d = Matrix::zeros(x.rows(), x.cols());
                    for i in 0..x.rows() {
                        d.row_mut(i).fill(g[(i, 0)]);
                    }
                    acc(*a, d);
                }
                Op::RowLogSumExp(a) => {
                    let x = val(*a);
                    let mut d = Matrix::zeros(x.rows(), x.cols());
                    for i in 0..x.rows() {
                        let lse = node.value[(i, 0)];
                        for (o, v) in d.row_mut(i).iter_mut().zip(x.row(i)) {
                            *o = g[(i, 0)] * (v - lse).exp();
                        }
                    }
                    acc(*a, d);
                }
                Op::Cholesky(a) => acc(*a, cholesky_adjoint(&node.value, &g)),
                Op::TriSolve(l, b) => {
                    let lv = val(*l);
                    let b_bar = tri_solve_upper_t_matrix(lv, &g);
                    if nodes[*l].requires_grad {
                        let mut l_bar = b_bar.matmul_t(&node.value).scale(-1.0);
                        for i in 0..l_bar.rows() {
                            for j in (i + 1)..l_bar.cols() {
                                l_bar[(i, j)] = 0.0;
                            }
                        }
                        acc(*l, l_bar);
                    }
                    acc(*b, b_bar);
                }
                Op::Transpose(a) => acc(*a, g.transpose()),
                Op::Slice { src, offset } => {
                    let (r, c) = val(*src).shape();
                    let mut d = Matrix::zeros(r, c);
                    d.as_mut_slice()[*offset..*offset + g.as_slice().len()]
                        .copy_from_slice(g.as_slice());
                    acc(*src, d);
                }
                Op::Concat(parts) => {
                    let mut off = 0;
                    for &p in parts {
                        let (r, c) = val(p).shape();
                        let d = Matrix::from_raw(r, c, g.as_slice()[off..off + r * c].to_vec());
                        off += r * c;
                        acc(p, d);
                    }
                }
                Op::SqDist(a, b) => {
                    let (x, y) = (val(*a), val(*b));
                    let mut da = Matrix::zeros(x.rows(), x.cols());
                    let mut db = Matrix::zeros(y.rows(), y.cols());
                    for i in 0..x.rows() {
                        for j in 0..y.rows() {
                            let w = 2.0 * g[(i, j)];
                            if w == 0.0 {
                                continue;
                            }
                            for k in 0..x.cols() {
                                let diff = w * (x[(i, k)] - y[(j, k)]);
                                da[(i, k)] += diff;
                                db[(j, k)] -= diff;
                            }
                        }
                    }
                    acc(*a, da);
                    acc(*b, db);
                }
                Op::SumLogDiag(a) => {
                    let x = val(*a);
                    let mut d = Matrix::zeros(x.rows(), x.cols());
                    for i in 0..x.rows().min(x.cols()) {
                        d[(i, i)] = g[(0, 0)] / x[(i, i)];
                    }
                    acc(*a, d);
                }
            }
        }
        Ok(Gradients {
            tape: self.id,
            grads,
            shapes: nodes.iter().map(|n| n.value.shape()).collect(),
        })
    }
}

/// Adjoint of `A` given the factor `L` of `A = L Lᵀ` and `L̄`, returned in
/// symmetric form.
fn cholesky_adjoint(l: &Matrix, l_bar: &Matrix) -> Matrix {
    let n = l.rows();
    // P = Φ(Lᵀ L̄): lower triangle with halved diagonal
    let mut p = l.tmatmul(l_bar);
    for i in 0..n {
        p[(i, i)] *= 0.5;
        for j in (i + 1)..n {
            p[(i, j)] = 0.0;
        }
    }
    // S = L⁻ᵀ P L⁻¹
    let x = tri_solve_upper_t_matrix(l, &p);
    let s = tri_solve_upper_t_matrix(l, &x.transpose()).transpose();
    let mut out = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            out[(i, j)] = 0.5 * (s[(i, j)] + s[(j, i)]);
        }
    }
    out
}

/// Value and gradient of a scalar objective at a parameter vector.
#[derive(Clone, Debug)]
pub struct GradientEvaluation {
    pub value: f64,
    pub grad: Vec<f64>,
}

/// Evaluates `objective` at `at` and returns its exact reverse-mode gradient.
///
/// The objective receives the tape and the parameter node (a `1×N` row) and
/// must return a `1×1` node recorded on the same tape.
pub fn grad<F>(objective: F, at: &ParamVector) -> Result<GradientEvaluation>
where
    F: FnOnce(&Tape, Var) -> Result<Var>,
{
    let tape = Tape::new();
    let p = tape.param(Matrix::row_vector(at.values()));
    let out = objective(&tape, p)?;
    let grads = tape.backward(out)?;
    let value = tape.scalar(out);
    let grad = grads.wrt(p).into_vec();
    if !value.is_finite() || grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFiniteValue);
    }
    Ok(GradientEvaluation { value, grad })
}
