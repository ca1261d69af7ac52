//! Dense reverse-mode automatic differentiation over real matrices.
//!
//! A [`Tape`] owns every intermediate value of a forward computation. Each
//! operation appends one node whose inputs precede it, so the node list is
//! already in topological order and [`Tape::backward`] is a single reverse
//! sweep. Handles ([`Var`]) are plain indices and are `Copy`; the tape itself
//! is `Send`, so independent tapes can run on separate threads.
//!
//! Values are stored column-major (`nalgebra::DMatrix<f64>`).

mod loss;
mod svd;

use std::sync::atomic::{AtomicU64, Ordering};

use nalgebra::DMatrix;
use thiserror::Error;

pub use loss::AveragingSpec;
pub use svd::{svd_factors, SvdFactors};

pub type Matrix = DMatrix<f64>;

/// Relative truncation used for diagnostic SVDs.
pub const DIAGNOSTIC_REL_TOL: f64 = 1e-10;
/// Relative truncation used inside training.
pub const TRAINING_REL_TOL: f64 = 1e-8;

static NEXT_TAPE_ID: AtomicU64 = AtomicU64::new(1);

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("{op}: shape mismatch {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: (usize, usize),
        rhs: (usize, usize),
    },
    #[error("{op}: non-finite value in result")]
    NonFinite { op: &'static str },
    #[error("{op}: empty input")]
    Empty { op: &'static str },
    #[error("svd of {rows}x{cols} matrix did not converge (max |a| = {max_abs:e}, frobenius = {frobenius:e})")]
    Convergence {
        rows: usize,
        cols: usize,
        max_abs: f64,
        frobenius: f64,
    },
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("variable belongs to a different tape")]
    ForeignVar,
}

pub type Result<T> = std::result::Result<T, TensorError>;

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var {
    index: usize,
    tape_id: u64,
}

impl Var {
    pub fn index(self) -> usize {
        self.index
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum SvdPart {
    U,
    S,
    V,
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Scale(Var, f64),
    AddBias(Var, Var),
    Relu(Var),
    Square(Var),
    Hadamard(Var, Var),
    Reciprocal(Var),
    ScaleCols(Var, Var),
    Sum(Var),
    ColNorms(Var),
    Gather { src: Var, index: Vec<usize> },
    Svd { src: Var, factors: Box<SvdFactors> },
    SvdOut { svd: usize, part: SvdPart },
}

#[derive(Debug)]
struct Node {
    value: Matrix,
    op: Op,
    requires_grad: bool,
}

/// Entry-wise operations exposed through [`Tape::elementwise`].
#[derive(Debug, Clone, Copy)]
pub enum Elementwise {
    Relu,
    AddBias(Var),
    Scale(f64),
    Subtract(Var),
    Square,
}

/// Gradient record produced by [`Tape::backward`].
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Matrix>>,
    tape_id: u64,
}

impl Gradients {
    /// Gradient of the seed with respect to `var`, or `None` when `var` does
    /// not influence the seed.
    pub fn get(&self, var: Var) -> Option<&Matrix> {
        if var.tape_id != self.tape_id {
            return None;
        }
        self.grads.get(var.index).and_then(|g| g.as_ref())
    }

    /// Like [`Gradients::get`] but returns zeros of the right shape when absent.
    pub fn get_or_zeros(&self, var: Var, shape: (usize, usize)) -> Matrix {
        self.get(var)
            .cloned()
            .unwrap_or_else(|| Matrix::zeros(shape.0, shape.1))
    }
}

/// Ordered record of a forward computation.
#[derive(Debug)]
pub struct Tape {
    id: u64,
    nodes: Vec<Node>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

fn check_finite(op: &'static str, m: &Matrix) -> Result<()> {
    if m.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(TensorError::NonFinite { op })
    }
}

fn accumulate(slot: &mut Option<Matrix>, contribution: Matrix) {
    match slot {
        Some(g) => *g += contribution,
        None => *slot = Some(contribution),
    }
}

impl Tape {
    pub fn new() -> Self {
        Self {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
        }
    }

    pub fn id(&self) -> u64 {
        self.id
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Matrix, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var {
            index: self.nodes.len() - 1,
            tape_id: self.id,
        }
    }

    fn node(&self, v: Var) -> Result<&Node> {
        if v.tape_id != self.id {
            return Err(TensorError::ForeignVar);
        }
        self.nodes.get(v.index).ok_or(TensorError::ForeignVar)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.index].requires_grad
    }

    /// Records a trainable input.
    pub fn param(&mut self, value: Matrix) -> Result<Var> {
        check_finite("param", &value)?;
        Ok(self.push(value, Op::Leaf, true))
    }

    /// Records an input that is never differentiated.
    pub fn constant(&mut self, value: Matrix) -> Result<Var> {
        check_finite("constant", &value)?;
        Ok(self.push(value, Op::Leaf, false))
    }

    pub fn value(&self, v: Var) -> &Matrix {
        assert_eq!(v.tape_id, self.id, "variable belongs to a different tape");
        &self.nodes[v.index].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.value(v).shape()
    }

    /// Scalar value of a 1x1 node.
    pub fn scalar(&self, v: Var) -> f64 {
        self.value(v)[(0, 0)]
    }

    fn finish(&mut self, op_name: &'static str, value: Matrix, op: Op, rg: bool) -> Result<Var> {
        check_finite(op_name, &value)?;
        Ok(self.push(value, op, rg))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (&self.node(a)?.value, &self.node(b)?.value);
        if av.ncols() != bv.nrows() {
            return Err(TensorError::ShapeMismatch {
                op: "matmul",
                lhs: av.shape(),
                rhs: bv.shape(),
            });
        }
        let value = av * bv;
        let rg = self.rg(a) || self.rg(b);
        self.finish("matmul", value, Op::MatMul(a, b), rg)
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let value = self.node(a)?.value.transpose();
        let rg = self.rg(a);
        self.finish("transpose", value, Op::Transpose(a), rg)
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.node(a)?.value.shape(), self.node(b)?.value.shape());
        if sa != sb {
            return Err(TensorError::ShapeMismatch {
                op,
                lhs: sa,
                rhs: sb,
            });
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let value = &self.nodes[a.index].value + &self.nodes[b.index].value;
        let rg = self.rg(a) || self.rg(b);
        self.finish("add", value, Op::Add(a, b), rg)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let value = &self.nodes[a.index].value - &self.nodes[b.index].value;
        let rg = self.rg(a) || self.rg(b);
        self.finish("sub", value, Op::Sub(a, b), rg)
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Result<Var> {
        let value = &self.node(a)?.value * factor;
        let rg = self.rg(a);
        self.finish("scale", value, Op::Scale(a, factor), rg)
    }

    /// Adds the column vector `bias` to every column of `a`.
    pub fn add_bias(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (av, bv) = (&self.node(a)?.value, &self.node(bias)?.value);
        if bv.ncols() != 1 || bv.nrows() != av.nrows() {
            return Err(TensorError::ShapeMismatch {
                op: "add_bias",
                lhs: av.shape(),
                rhs: bv.shape(),
            });
        }
        let mut value = av.clone();
        let col = bv.column(0);
        for mut c in value.column_iter_mut() {
            c += col;
        }
        let rg = self.rg(a) || self.rg(bias);
        self.finish("add_bias", value, Op::AddBias(a, bias), rg)
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let value = self.node(a)?.value.map(|x| x.max(0.0));
        let rg = self.rg(a);
        self.finish("relu", value, Op::Relu(a), rg)
    }

    pub fn square(&mut self, a: Var) -> Result<Var> {
        let value = self.node(a)?.value.map(|x| x * x);
        let rg = self.rg(a);
        self.finish("square", value, Op::Square(a), rg)
    }

    pub fn hadamard(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("hadamard", a, b)?;
        let value = self.nodes[a.index]
            .value
            .component_mul(&self.nodes[b.index].value);
        let rg = self.rg(a) || self.rg(b);
        self.finish("hadamard", value, Op::Hadamard(a, b), rg)
    }

    pub fn reciprocal(&mut self, a: Var) -> Result<Var> {
        let value = self.node(a)?.value.map(|x| 1.0 / x);
        let rg = self.rg(a);
        self.finish("reciprocal", value, Op::Reciprocal(a), rg)
    }

    /// `a · diag(v)` for a column vector `v` with one entry per column of `a`.
    pub fn scale_cols(&mut self, a: Var, v: Var) -> Result<Var> {
        let (av, vv) = (&self.node(a)?.value, &self.node(v)?.value);
        if vv.ncols() != 1 || vv.nrows() != av.ncols() {
            return Err(TensorError::ShapeMismatch {
                op: "scale_cols",
                lhs: av.shape(),
                rhs: vv.shape(),
            });
        }
        let mut value = av.clone();
        for (j, mut c) in value.column_iter_mut().enumerate() {
            c *= vv[j];
        }
        let rg = self.rg(a) || self.rg(v);
        self.finish("scale_cols", value, Op::ScaleCols(a, v), rg)
    }

    /// Sum of all entries as a 1x1 node.
    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s = self.node(a)?.value.sum();
        let rg = self.rg(a);
        self.finish("sum", Matrix::from_element(1, 1, s), Op::Sum(a), rg)
    }

    /// Mean of all entries as a 1x1 node.
    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let n = self.node(a)?.value.len();
        if n == 0 {
            return Err(TensorError::Empty { op: "mean" });
        }
        let s = self.sum(a)?;
        self.scale(s, 1.0 / n as f64)
    }

    /// Euclidean norm of each column, as a 1 x ncols row.
    pub fn col_norms(&mut self, a: Var) -> Result<Var> {
        let av = &self.node(a)?.value;
        let value = Matrix::from_iterator(1, av.ncols(), av.column_iter().map(|c| c.norm()));
        let rg = self.rg(a);
        self.finish("col_norms", value, Op::ColNorms(a), rg)
    }

    /// Builds a `rows x cols` matrix whose column-major entry `i` is the
    /// column-major entry `index[i]` of `src`.
    pub fn gather(&mut self, src: Var, rows: usize, cols: usize, index: Vec<usize>) -> Result<Var> {
        let sv = &self.node(src)?.value;
        if index.len() != rows * cols {
            return Err(TensorError::Contract(format!(
                "gather: {} indices for a {rows}x{cols} output",
                index.len()
            )));
        }
        let n = sv.len();
        if let Some(bad) = index.iter().find(|&&i| i >= n) {
            return Err(TensorError::Contract(format!(
                "gather: index {bad} out of range for {n} entries"
            )));
        }
        let data = sv.as_slice();
        let value = Matrix::from_iterator(rows, cols, index.iter().map(|&i| data[i]));
        let rg = self.rg(src);
        self.finish("gather", value, Op::Gather { src, index }, rg)
    }

    /// Selects columns of `src` in the given order.
    pub fn select_cols(&mut self, src: Var, cols: &[usize]) -> Result<Var> {
        let (r, c) = self.node(src)?.value.shape();
        if let Some(bad) = cols.iter().find(|&&j| j >= c) {
            return Err(TensorError::Contract(format!(
                "select_cols: column {bad} out of range for {c} columns"
            )));
        }
        let index = cols
            .iter()
            .flat_map(|&j| (0..r).map(move |i| j * r + i))
            .collect();
        self.gather(src, r, cols.len(), index)
    }

    pub fn elementwise(&mut self, kind: Elementwise, a: Var) -> Result<Var> {
        match kind {
            Elementwise::Relu => self.relu(a),
            Elementwise::AddBias(b) => self.add_bias(a, b),
            Elementwise::Scale(f) => self.scale(a, f),
            Elementwise::Subtract(b) => self.sub(a, b),
            Elementwise::Square => self.square(a),
        }
    }

    /// Thin SVD with relative truncation. Returns handles to `U` (m x r),
    /// the singular values as an r x 1 column, and `W` (n x r), together with
    /// the factor record.
    pub fn svd(&mut self, a: Var, rel_tol: f64) -> Result<(Var, Var, Var, SvdFactors)> {
        if !(0.0..1.0).contains(&rel_tol) {
            return Err(TensorError::Contract(format!(
                "svd: rel_tol {rel_tol} outside [0, 1)"
            )));
        }
        let factors = svd_factors(&self.node(a)?.value, rel_tol)?;
        let rg = self.rg(a);
        let svd = self.push(
            Matrix::zeros(0, 0),
            Op::Svd {
                src: a,
                factors: Box::new(factors.clone()),
            },
            rg,
        );
        let u = self.push(
            factors.u.clone(),
            Op::SvdOut {
                svd: svd.index,
                part: SvdPart::U,
            },
            rg,
        );
        let s = self.push(
            Matrix::from_column_slice(factors.s.len(), 1, &factors.s),
            Op::SvdOut {
                svd: svd.index,
                part: SvdPart::S,
            },
            rg,
        );
        let w = self.push(
            factors.w.clone(),
            Op::SvdOut {
                svd: svd.index,
                part: SvdPart::V,
            },
            rg,
        );
        Ok((u, s, w, factors))
    }

    /// Truncated pseudoinverse `W Σ⁻¹ Uᵀ`, differentiable through the SVD.
    pub fn pinv(&mut self, a: Var, rel_tol: f64) -> Result<Var> {
        let (u, s, w, _) = self.svd(a, rel_tol)?;
        let s_inv = self.reciprocal(s)?;
        let ws = self.scale_cols(w, s_inv)?;
        let ut = self.transpose(u)?;
        self.matmul(ws, ut)
    }

    /// Minimum-norm least-squares solution of `a · x = b`.
    pub fn lstsq(&mut self, a: Var, b: Var, rel_tol: f64) -> Result<Var> {
        let (av, bv) = (&self.node(a)?.value, &self.node(b)?.value);
        if av.is_empty() || bv.is_empty() {
            return Err(TensorError::Empty { op: "lstsq" });
        }
        if av.nrows() != bv.nrows() {
            return Err(TensorError::ShapeMismatch {
                op: "lstsq",
                lhs: av.shape(),
                rhs: bv.shape(),
            });
        }
        let p = self.pinv(a, rel_tol)?;
        self.matmul(p, b)
    }

    /// `kⁿ · psi`. The power is formed by repeated multiplication, never by
    /// eigendecomposition, and then applied once to `psi`.
    pub fn matrix_power_apply(&mut self, k: Var, n: usize, psi: Var) -> Result<Var> {
        let (ks, ps) = (self.node(k)?.value.shape(), self.node(psi)?.value.shape());
        if ks.0 != ks.1 || ks.1 != ps.0 {
            return Err(TensorError::ShapeMismatch {
                op: "matrix_power_apply",
                lhs: ks,
                rhs: ps,
            });
        }
        if n == 0 {
            return Ok(psi);
        }
        let mut power = k;
        for _ in 1..n {
            power = self.matmul(k, power)?;
        }
        self.matmul(power, psi)
    }

    /// Reverse sweep from the 1x1 node `seed`. The tape is left untouched,
    /// so repeated calls give identical results.
    pub fn backward(&self, seed: Var) -> Result<Gradients> {
        let sv = &self.node(seed)?.value;
        if sv.shape() != (1, 1) {
            return Err(TensorError::Contract(format!(
                "backward seed must be 1x1, got {:?}",
                sv.shape()
            )));
        }
        let n = seed.index + 1;
        let mut grads: Vec<Option<Matrix>> = vec![None; n];
        let mut svd_grads: Vec<Option<[Option<Matrix>; 3]>> = (0..n).map(|_| None).collect();
        grads[seed.index] = Some(Matrix::from_element(1, 1, 1.0));

        for i in (0..n).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            if let Op::Svd { src, factors } = &node.op {
                if let Some(parts) = svd_grads[i].take() {
                    let [gu, gs, gv] = parts;
                    let ga = svd::svd_backward(factors, gu.as_ref(), gs.as_ref(), gv.as_ref());
                    if self.rg(*src) {
                        accumulate(&mut grads[src.index], ga);
                    }
                }
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            match &node.op {
                Op::Leaf => {
                    grads[i] = Some(g);
                    continue;
                }
                Op::MatMul(a, b) => {
                    let (av, bv) = (&self.nodes[a.index].value, &self.nodes[b.index].value);
                    if self.rg(*a) {
                        accumulate(&mut grads[a.index], &g * bv.transpose());
                    }
                    if self.rg(*b) {
                        accumulate(&mut grads[b.index], av.transpose() * &g);
                    }
                }
                Op::Transpose(a) => {
                    accumulate(&mut grads[a.index], g.transpose());
                }
                Op::Add(a, b) => {
                    if self.rg(*a) {
                        accumulate(&mut grads[a.index], g.clone());
                    }
                    if self.rg(*b) {
                        accumulate(&mut grads[b.index], g);
                    }
                }
                Op::Sub(a, b) => {
                    if self.rg(*a) {
                        accumulate(&mut grads[a.index], g.clone());
                    }
                    if self.rg(*b) {
                        accumulate(&mut grads[b.index], -g);
                    }
                }
                Op::Scale(a, f) => accumulate(&mut grads[a.index], g * *f),
                Op::AddBias(a, b) => {
                    if self.rg(*b) {
                        let col = g.column_sum();
                        accumulate(&mut grads[b.index], Matrix::from_column_slice(col.len(), 1, col.as_slice()));
                    }
                    if self.rg(*a) {
                        accumulate(&mut grads[a.index], g);
                    }
                }
                Op::Relu(a) => {
                    let av = &self.nodes[a.index].value;
                    let ga = g.zip_map(av, |gi, x| if x > 0.0 { gi } else { 0.0 });
                    accumulate(&mut grads[a.index], ga);
                }
                Op::Square(a) => {
                    let av = &self.nodes[a.index].value;
                    accumulate(&mut grads[a.index], g.zip_map(av, |gi, x| 2.0 * x * gi));
                }
                Op::Hadamard(a, b) => {
                    let (av, bv) = (&self.nodes[a.index].value, &self.nodes[b.index].value);
                    if self.rg(*a) {
                        accumulate(&mut grads[a.index], g.component_mul(bv));
                    }
                    if self.rg(*b) {
                        accumulate(&mut grads[b.index], g.component_mul(av));
                    }
                }
                Op::Reciprocal(a) => {
                    let out = &node.value;
                    accumulate(&mut grads[a.index], g.zip_map(out, |gi, y| -gi * y * y));
                }
                Op::ScaleCols(a, v) => {
                    let (av, vv) = (&self.nodes[a.index].value, &self.nodes[v.index].value);
                    if self.rg(*v) {
                        let gv = Matrix::from_iterator(
                            av.ncols(),
                            1,
                            g.column_iter().zip(av.column_iter()).map(|(gc, ac)| gc.dot(&ac)),
                        );
                        accumulate(&mut grads[v.index], gv);
                    }
                    if self.rg(*a) {
                        let mut ga = g;
                        for (j, mut c) in ga.column_iter_mut().enumerate() {
                            c *= vv[j];
                        }
                        accumulate(&mut grads[a.index], ga);
                    }
                }
                Op::Sum(a) => {
                    let (r, c) = self.nodes[a.index].value.shape();
                    accumulate(&mut grads[a.index], Matrix::from_element(r, c, g[(0, 0)]));
                }
                Op::ColNorms(a) => {
                    let av = &self.nodes[a.index].value;
                    let mut ga = av.clone();
                    for (j, mut c) in ga.column_iter_mut().enumerate() {
                        let norm = node.value[(0, j)];
                        // subgradient 0 at the origin
                        let f = if norm > 0.0 { g[(0, j)] / norm } else { 0.0 };
                        c *= f;
                    }
                    accumulate(&mut grads[a.index], ga);
                }
                Op::Gather { src, index } => {
                    let (r, c) = self.nodes[src.index].value.shape();
                    let mut ga = Matrix::zeros(r, c);
                    let dst = ga.as_mut_slice();
                    for (gi, &k) in g.iter().zip(index.iter()) {
                        dst[k] += gi;
                    }
                    accumulate(&mut grads[src.index], ga);
                }
                Op::SvdOut { svd, part } => {
                    let slot = svd_grads[*svd].get_or_insert([None, None, None]);
                    let k = match part {
                        SvdPart::U => 0,
                        SvdPart::S => 1,
                        SvdPart::V => 2,
                    };
                    accumulate(&mut slot[k], g);
                }
                Op::Svd { .. } => unreachable!(),
            }
        }
        Ok(Gradients {
            grads,
            tape_id: self.id,
        })
    }
}
