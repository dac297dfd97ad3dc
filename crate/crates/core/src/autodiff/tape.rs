//! Arena tape for reverse-mode differentiation.
//!
//! Every operation appends a node holding its forward value and the indices of
//! its inputs. Inputs always precede outputs in the arena, so the recorded
//! graph is acyclic and a single reverse sweep is a valid topological order.
//!
//! Retain policy: [`Tape::backward`] does not consume or clear the tape. It
//! returns a fresh [`Gradients`] each call, so the same tape can be
//! differentiated again (for a different root, say) without re-running the
//! forward pass. Drop the tape to free it.

use rand::Rng;

use super::matrix::{dot, Matrix};
use crate::error::{Error, Result};

/// Boolean attention mask; `allowed(i, j)` means row `i` may attend to column `j`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    rows: usize,
    cols: usize,
    allowed: Vec<bool>,
}

impl Mask {
    pub fn new(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            allowed: vec![false; rows * cols],
        }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut m = Self::new(rows, cols);
        for i in 0..rows {
            for j in 0..cols {
                m.allowed[i * cols + j] = f(i, j);
            }
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn allowed(&self, i: usize, j: usize) -> bool {
        self.allowed[i * self.cols + j]
    }

    pub fn allow(&mut self, i: usize, j: usize) {
        self.allowed[i * self.cols + j] = true;
    }

    /// Allows `(i, j)` and `(j, i)`.
    pub fn allow_sym(&mut self, i: usize, j: usize) {
        self.allow(i, j);
        self.allow(j, i);
    }

    pub fn allow_diagonal(&mut self) {
        for i in 0..self.rows.min(self.cols) {
            self.allow(i, i);
        }
    }

    pub fn row_count(&self, i: usize) -> usize {
        self.allowed[i * self.cols..(i + 1) * self.cols]
            .iter()
            .filter(|&&a| a)
            .count()
    }

    pub fn is_symmetric(&self) -> bool {
        self.rows == self.cols
            && (0..self.rows).all(|i| (0..i).all(|j| self.allowed(i, j) == self.allowed(j, i)))
    }

    /// Returns the mask with rows and columns reordered so that entry
    /// `(perm[i], perm[j])` of the result equals entry `(i, j)` of `self`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        assert_eq!(self.rows, self.cols);
        let mut out = Self::new(self.rows, self.cols);
        for i in 0..self.rows {
            for j in 0..self.cols {
                if self.allowed(i, j) {
                    out.allow(perm[i], perm[j]);
                }
            }
        }
        out
    }
}

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    /// Right operand has the same shape or is a `1 × cols` row broadcast over rows.
    Add(Var, Var),
    Mul(Var, Var),
    Affine(Var, f64),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceRows(Var, usize),
    GatherRows(Var, Vec<usize>),
    PairwiseSum(Var, Var),
    MaskedSoftmax(Var),
    LeakyRelu(Var, f64),
    Elu(Var),
    Sigmoid(Var),
    Exp(Var),
    Log(Var),
    Clamp(Var, f64, f64),
    MeanRows(Var),
    Sum(Var),
    CosineRows(Var, Var),
    Dropout(Var, Vec<f64>),
}

#[derive(Debug)]
struct Node {
    value: Matrix,
    op: Op,
    requires_grad: bool,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of one backward sweep, indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Matrix>>,
}

impl Gradients {
    /// Gradient of `v`, or `None` when `v` does not require gradients or does
    /// not influence the loss.
    pub fn get(&self, v: Var) -> Option<&Matrix> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient of `v`, zero-filled to `shape` when absent.
    pub fn get_or_zeros(&self, v: Var, shape: (usize, usize)) -> Matrix {
        self.get(v)
            .cloned()
            .unwrap_or_else(|| Matrix::zeros(shape.0, shape.1))
    }
}

fn mismatch(op: &'static str, lhs: &Matrix, rhs: &Matrix) -> Error {
    Error::ShapeMismatch {
        op,
        lhs: lhs.shape(),
        rhs: rhs.shape(),
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    fn push(&mut self, value: Matrix, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn push_op(&mut self, value: Matrix, op: Op, inputs: &[Var]) -> Var {
        let rg = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.push(value, op, rg)
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf, true)
    }

    pub fn constant(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.cols() != bv.rows() {
            return Err(mismatch("matmul", av, bv));
        }
        let out = av.matmul(bv);
        Ok(self.push_op(out, Op::MatMul(a, b), &[a, b]))
    }

    /// Element-wise sum; `b` may also be a single row broadcast over the rows of `a`.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        let out = if av.shape() == bv.shape() {
            av.zip_map(bv, |x, y| x + y)
        } else if bv.rows() == 1 && bv.cols() == av.cols() {
            let mut out = av.clone();
            for r in 0..out.rows() {
                for (o, &y) in out.row_mut(r).iter_mut().zip(bv.row(0)) {
                    *o += y;
                }
            }
            out
        } else {
            return Err(mismatch("add", av, bv));
        };
        Ok(self.push_op(out, Op::Add(a, b), &[a, b]))
    }

    /// Element-wise product of equally shaped tensors.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(mismatch("mul", av, bv));
        }
        let out = av.zip_map(bv, |x, y| x * y);
        Ok(self.push_op(out, Op::Mul(a, b), &[a, b]))
    }

    /// `c · a + shift`.
    pub fn affine(&mut self, a: Var, c: f64, shift: f64) -> Var {
        let out = self.value(a).map(|x| c * x + shift);
        self.push_op(out, Op::Affine(a, c), &[a])
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        self.affine(a, c, 0.0)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = self.value(*parts.first().expect("at least one part"));
        let rows = first.rows();
        for &p in &parts[1..] {
            if self.value(p).rows() != rows {
                return Err(mismatch("concat_cols", first, self.value(p)));
            }
        }
        let cols: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut out = Matrix::zeros(rows, cols);
        for r in 0..rows {
            let mut off = 0;
            for &p in parts {
                let src = self.value(p).row(r);
                out.row_mut(r)[off..off + src.len()].copy_from_slice(src);
                off += src.len();
            }
        }
        Ok(self.push_op(out, Op::ConcatCols(parts.to_vec()), parts))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = self.value(*parts.first().expect("at least one part"));
        let cols = first.cols();
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let v = self.value(p);
            if v.cols() != cols {
                return Err(mismatch("concat_rows", first, v));
            }
            data.extend_from_slice(v.data());
            rows += v.rows();
        }
        let out = Matrix::from_vec(rows, cols, data);
        Ok(self.push_op(out, Op::ConcatRows(parts.to_vec()), parts))
    }

    /// Rows `start..start + len`.
    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let av = self.value(a);
        if start + len > av.rows() {
            return Err(Error::ShapeMismatch {
                op: "slice_rows",
                lhs: av.shape(),
                rhs: (start + len, av.cols()),
            });
        }
        let out = av.slice_rows(start, len);
        Ok(self.push_op(out, Op::SliceRows(a, start), &[a]))
    }

    /// Output row `i` is row `idx[i]` of `a`.
    pub fn gather_rows(&mut self, a: Var, idx: &[usize]) -> Result<Var> {
        let av = self.value(a);
        if let Some(&bad) = idx.iter().find(|&&i| i >= av.rows()) {
            return Err(Error::ShapeMismatch {
                op: "gather_rows",
                lhs: av.shape(),
                rhs: (bad + 1, av.cols()),
            });
        }
        let mut data = Vec::with_capacity(idx.len() * av.cols());
        for &i in idx {
            data.extend_from_slice(av.row(i));
        }
        let out = Matrix::from_vec(idx.len(), av.cols(), data);
        Ok(self.push_op(out, Op::GatherRows(a, idx.to_vec()), &[a]))
    }

    /// `out[i][j] = a[i] + b[j]` for column vectors `a` (n×1) and `b` (m×1).
    pub fn pairwise_sum(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.cols() != 1 || bv.cols() != 1 {
            return Err(mismatch("pairwise_sum", av, bv));
        }
        let out = Matrix::from_vec(
            av.rows(),
            bv.rows(),
            av.data()
                .iter()
                .flat_map(|&x| bv.data().iter().map(move |&y| x + y))
                .collect(),
        );
        Ok(self.push_op(out, Op::PairwiseSum(a, b), &[a, b]))
    }

    /// Row-wise softmax over allowed entries; disallowed entries are exactly 0.
    pub fn row_softmax_masked(&mut self, s: Var, mask: &Mask) -> Result<Var> {
        let sv = self.value(s);
        if (mask.rows(), mask.cols()) != sv.shape() {
            return Err(Error::ShapeMismatch {
                op: "row_softmax_masked",
                lhs: sv.shape(),
                rhs: (mask.rows(), mask.cols()),
            });
        }
        let mut out = Matrix::zeros(sv.rows(), sv.cols());
        for i in 0..sv.rows() {
            let row = sv.row(i);
            let max = (0..sv.cols())
                .filter(|&j| mask.allowed(i, j))
                .map(|j| row[j])
                .fold(f64::NEG_INFINITY, f64::max);
            if max == f64::NEG_INFINITY {
                return Err(Error::EmptyMaskRow(i));
            }
            let orow = out.row_mut(i);
            let mut z = 0.0;
            for j in 0..row.len() {
                if mask.allowed(i, j) {
                    orow[j] = (row[j] - max).exp();
                    z += orow[j];
                }
            }
            orow.iter_mut().for_each(|x| *x /= z);
        }
        Ok(self.push_op(out, Op::MaskedSoftmax(s), &[s]))
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Var {
        let out = self.value(a).map(|x| if x > 0.0 { x } else { slope * x });
        self.push_op(out, Op::LeakyRelu(a, slope), &[a])
    }

    /// ELU with unit scale: `x` for positive inputs, `exp(x) - 1` otherwise.
    pub fn elu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| if x > 0.0 { x } else { x.exp_m1() });
        self.push_op(out, Op::Elu(a), &[a])
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.value(a).map(sigmoid);
        self.push_op(out, Op::Sigmoid(a), &[a])
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f64::exp);
        self.push_op(out, Op::Exp(a), &[a])
    }

    pub fn log(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f64::ln);
        self.push_op(out, Op::Log(a), &[a])
    }

    /// Clamps into `[lo, hi]`; the gradient is zero where clamping is active.
    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        let out = self.value(a).map(|x| x.clamp(lo, hi));
        self.push_op(out, Op::Clamp(a, lo, hi), &[a])
    }

    /// Column means as a `1 × cols` row.
    pub fn mean_rows(&mut self, a: Var) -> Var {
        let av = self.value(a);
        let mut out = Matrix::zeros(1, av.cols());
        for r in 0..av.rows() {
            for (o, &x) in out.row_mut(0).iter_mut().zip(av.row(r)) {
                *o += x;
            }
        }
        let n = av.rows().max(1) as f64;
        out.data_mut().iter_mut().for_each(|x| *x /= n);
        self.push_op(out, Op::MeanRows(a), &[a])
    }

    /// Sum of all entries as a `1 × 1` tensor.
    pub fn sum(&mut self, a: Var) -> Var {
        let out = Matrix::scalar(self.value(a).sum());
        self.push_op(out, Op::Sum(a), &[a])
    }

    /// Cosine similarity of every row of `a` with the single row `b`, as an `n × 1` column.
    /// Rows with zero norm have similarity 0.
    pub fn cosine_sim(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if bv.rows() != 1 || bv.cols() != av.cols() {
            return Err(mismatch("cosine_sim", av, bv));
        }
        let u = bv.row(0);
        let nu = dot(u, u).sqrt();
        let out = Matrix::column(
            (0..av.rows())
                .map(|i| {
                    let v = av.row(i);
                    let nv = dot(v, v).sqrt();
                    if nu == 0.0 || nv == 0.0 {
                        0.0
                    } else {
                        dot(v, u) / (nu * nv)
                    }
                })
                .collect(),
        );
        Ok(self.push_op(out, Op::CosineRows(a, b), &[a, b]))
    }

    /// Inverted dropout. Identity when `train` is false or `rate` is 0.
    pub fn dropout<R: Rng + ?Sized>(&mut self, a: Var, rate: f64, train: bool, rng: &mut R) -> Var {
        if !train || rate <= 0.0 {
            return a;
        }
        assert!(rate < 1.0, "dropout rate must be below 1");
        let keep = 1.0 - rate;
        let mask: Vec<f64> = (0..self.value(a).len())
            .map(|_| {
                if rng.random::<f64>() < keep {
                    1.0 / keep
                } else {
                    0.0
                }
            })
            .collect();
        let av = self.value(a);
        let out = Matrix::from_vec(
            av.rows(),
            av.cols(),
            av.data().iter().zip(&mask).map(|(x, m)| x * m).collect(),
        );
        self.push_op(out, Op::Dropout(a, mask), &[a])
    }

    /// Back-propagates from the scalar `loss` to every ancestor that requires gradients.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let shape = self.shape(loss);
        if shape != (1, 1) {
            return Err(Error::NonScalarLoss(shape));
        }
        let mut grads: Vec<Option<Matrix>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Matrix::scalar(1.0));

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            self.propagate(node, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Matrix>], v: Var, delta: Matrix) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(g) => g.add_assign(&delta),
            slot @ None => *slot = Some(delta),
        }
    }

    fn propagate(&self, node: &Node, g: &Matrix, grads: &mut [Option<Matrix>]) {
        let y = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                if self.requires_grad(*a) {
                    self.accumulate(grads, *a, g.matmul_t(bv));
                }
                if self.requires_grad(*b) {
                    self.accumulate(grads, *b, av.t_matmul(g));
                }
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone());
                if self.requires_grad(*b) {
                    let bshape = self.shape(*b);
                    if bshape == g.shape() {
                        self.accumulate(grads, *b, g.clone());
                    } else {
                        let mut db = Matrix::zeros(1, bshape.1);
                        for r in 0..g.rows() {
                            for (o, &x) in db.row_mut(0).iter_mut().zip(g.row(r)) {
                                *o += x;
                            }
                        }
                        self.accumulate(grads, *b, db);
                    }
                }
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                if self.requires_grad(*a) {
                    self.accumulate(grads, *a, g.zip_map(bv, |x, y| x * y));
                }
                if self.requires_grad(*b) {
                    self.accumulate(grads, *b, g.zip_map(av, |x, y| x * y));
                }
            }
            Op::Affine(a, c) => self.accumulate(grads, *a, g.map(|x| c * x)),
            Op::ConcatCols(parts) => {
                let mut off = 0;
                for &p in parts {
                    let (rows, cols) = self.shape(p);
                    if self.requires_grad(p) {
                        let mut d = Matrix::zeros(rows, cols);
                        for r in 0..rows {
                            d.row_mut(r).copy_from_slice(&g.row(r)[off..off + cols]);
                        }
                        self.accumulate(grads, p, d);
                    }
                    off += cols;
                }
            }
            Op::ConcatRows(parts) => {
                let mut off = 0;
                for &p in parts {
                    let rows = self.shape(p).0;
                    if self.requires_grad(p) {
                        self.accumulate(grads, p, g.slice_rows(off, rows));
                    }
                    off += rows;
                }
            }
            Op::SliceRows(a, start) => {
                let (rows, cols) = self.shape(*a);
                let mut d = Matrix::zeros(rows, cols);
                for r in 0..g.rows() {
                    d.row_mut(start + r).copy_from_slice(g.row(r));
                }
                self.accumulate(grads, *a, d);
            }
            Op::GatherRows(a, idx) => {
                let (rows, cols) = self.shape(*a);
                let mut d = Matrix::zeros(rows, cols);
                for (r, &src) in idx.iter().enumerate() {
                    for (o, &x) in d.row_mut(src).iter_mut().zip(g.row(r)) {
                        *o += x;
                    }
                }
                self.accumulate(grads, *a, d);
            }
            Op::PairwiseSum(a, b) => {
                if self.requires_grad(*a) {
                    let da = (0..g.rows()).map(|i| g.row(i).iter().sum()).collect();
                    self.accumulate(grads, *a, Matrix::column(da));
                }
                if self.requires_grad(*b) {
                    let mut db = vec![0.0; g.cols()];
                    for i in 0..g.rows() {
                        for (o, &x) in db.iter_mut().zip(g.row(i)) {
                            *o += x;
                        }
                    }
                    self.accumulate(grads, *b, Matrix::column(db));
                }
            }
            Op::MaskedSoftmax(s) => {
                // ds_ij = y_ij (g_ij - Σ_k y_ik g_ik); masked y are 0 so their grads vanish.
                let mut d = Matrix::zeros(y.rows(), y.cols());
                for i in 0..y.rows() {
                    let (yr, gr) = (y.row(i), g.row(i));
                    let inner = dot(yr, gr);
                    for (o, (&yy, &gg)) in d.row_mut(i).iter_mut().zip(yr.iter().zip(gr)) {
                        *o = yy * (gg - inner);
                    }
                }
                self.accumulate(grads, *s, d);
            }
            Op::LeakyRelu(a, slope) => {
                let x = self.value(*a);
                self.accumulate(
                    grads,
                    *a,
                    g.zip_map(x, |gg, xx| if xx > 0.0 { gg } else { slope * gg }),
                );
            }
            Op::Elu(a) => {
                let x = self.value(*a);
                let d = Matrix::from_vec(
                    g.rows(),
                    g.cols(),
                    g.data()
                        .iter()
                        .zip(x.data().iter().zip(y.data()))
                        .map(|(&gg, (&xx, &yy))| if xx > 0.0 { gg } else { gg * (yy + 1.0) })
                        .collect(),
                );
                self.accumulate(grads, *a, d);
            }
            Op::Sigmoid(a) => {
                self.accumulate(grads, *a, g.zip_map(y, |gg, yy| gg * yy * (1.0 - yy)));
            }
            Op::Exp(a) => self.accumulate(grads, *a, g.zip_map(y, |gg, yy| gg * yy)),
            Op::Log(a) => {
                let x = self.value(*a);
                self.accumulate(grads, *a, g.zip_map(x, |gg, xx| gg / xx));
            }
            Op::Clamp(a, lo, hi) => {
                let x = self.value(*a);
                self.accumulate(
                    grads,
                    *a,
                    g.zip_map(x, |gg, xx| if xx < *lo || xx > *hi { 0.0 } else { gg }),
                );
            }
            Op::MeanRows(a) => {
                let (rows, cols) = self.shape(*a);
                let n = rows.max(1) as f64;
                let mut d = Matrix::zeros(rows, cols);
                for r in 0..rows {
                    for (o, &x) in d.row_mut(r).iter_mut().zip(g.row(0)) {
                        *o = x / n;
                    }
                }
                self.accumulate(grads, *a, d);
            }
            Op::Sum(a) => {
                let (rows, cols) = self.shape(*a);
                self.accumulate(grads, *a, Matrix::full(rows, cols, g.get(0, 0)));
            }
            Op::CosineRows(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let u = bv.row(0);
                let nu = dot(u, u).sqrt();
                let mut da = Matrix::zeros(av.rows(), av.cols());
                let mut du = vec![0.0; u.len()];
                for i in 0..av.rows() {
                    let v = av.row(i);
                    let nv = dot(v, v).sqrt();
                    if nu == 0.0 || nv == 0.0 {
                        continue;
                    }
                    let c = y.get(i, 0);
                    let gi = g.get(i, 0);
                    for (k, o) in da.row_mut(i).iter_mut().enumerate() {
                        *o = gi * (u[k] / (nu * nv) - c * v[k] / (nv * nv));
                    }
                    for (k, o) in du.iter_mut().enumerate() {
                        *o += gi * (v[k] / (nu * nv) - c * u[k] / (nu * nu));
                    }
                }
                if self.requires_grad(*a) {
                    self.accumulate(grads, *a, da);
                }
                if self.requires_grad(*b) {
                    self.accumulate(grads, *b, Matrix::row_vector(du));
                }
            }
            Op::Dropout(a, mask) => {
                let d = Matrix::from_vec(
                    g.rows(),
                    g.cols(),
                    g.data().iter().zip(mask).map(|(x, m)| x * m).collect(),
                );
                self.accumulate(grads, *a, d);
            }
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn uniform_softmax_over_allowed() {
        let mut t = Tape::new();
        let s = t.constant(Matrix::full(1, 6, 3.0));
        let mask = Mask::from_fn(1, 6, |_, j| j < 4);
        let y = t.row_softmax_masked(s, &mask).unwrap();
        assert_eq!(t.value(y).row(0), &[0.25, 0.25, 0.25, 0.25, 0.0, 0.0]);
    }

    #[test]
    fn empty_mask_row_is_an_error() {
        let mut t = Tape::new();
        let s = t.constant(Matrix::zeros(2, 2));
        let mask = Mask::from_fn(2, 2, |i, _| i == 0);
        assert!(matches!(
            t.row_softmax_masked(s, &mask),
            Err(Error::EmptyMaskRow(1))
        ));
    }

    #[test]
    fn cosine_of_vector_with_itself() {
        let mut t = Tape::new();
        let u = t.constant(Matrix::row_vector(vec![0.3, -2.0, 5.0]));
        let c = t.cosine_sim(u, u).unwrap();
        assert!((t.value(c).get(0, 0) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn leaky_relu_negative() {
        let mut t = Tape::new();
        let x = t.constant(Matrix::scalar(-1.0));
        let y = t.leaky_relu(x, 0.2);
        assert_eq!(t.value(y).get(0, 0), -0.2);
    }

    #[test]
    fn grad_of_sum_is_ones() {
        let mut t = Tape::new();
        let w = t.param(Matrix::from_rows(&[vec![1.0, -2.0], vec![3.0, 0.5]]));
        let l = t.sum(w);
        let g = t.backward(l).unwrap();
        assert_eq!(g.get(w).unwrap(), &Matrix::full(2, 2, 1.0));
    }

    #[test]
    fn grad_of_matmul_by_hand() {
        let mut t = Tape::new();
        let a = t.param(Matrix::from_rows(&[vec![1.0, 2.0]]));
        let b = t.param(Matrix::from_rows(&[vec![3.0], vec![4.0]]));
        let ab = t.matmul(a, b).unwrap();
        let l = t.sum(ab);
        let g = t.backward(l).unwrap();
        assert_eq!(g.get(a).unwrap(), &Matrix::from_rows(&[vec![3.0, 4.0]]));
        assert_eq!(
            g.get(b).unwrap(),
            &Matrix::from_rows(&[vec![1.0], vec![2.0]])
        );
    }

    #[test]
    fn fan_out_accumulates() {
        let mut t = Tape::new();
        let w = t.param(Matrix::full(2, 3, 0.7));
        let s1 = t.sum(w);
        let s2 = t.sum(w);
        let l = t.add(s1, s2).unwrap();
        let g = t.backward(l).unwrap();
        assert_eq!(g.get(w).unwrap(), &Matrix::full(2, 3, 2.0));
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut t = Tape::new();
        let w = t.param(Matrix::zeros(2, 1));
        assert!(matches!(t.backward(w), Err(Error::NonScalarLoss((2, 1)))));
    }

    #[test]
    fn constants_get_no_gradient() {
        let mut t = Tape::new();
        let c = t.constant(Matrix::full(1, 2, 1.0));
        let w = t.param(Matrix::full(1, 2, 2.0));
        let p = t.mul(c, w).unwrap();
        let l = t.sum(p);
        let g = t.backward(l).unwrap();
        assert!(g.get(c).is_none());
        assert_eq!(g.get(w).unwrap(), &Matrix::full(1, 2, 1.0));
    }

    #[test]
    fn tape_is_reusable_after_backward() {
        let mut t = Tape::new();
        let w = t.param(Matrix::scalar(3.0));
        let sq = t.mul(w, w).unwrap();
        let g1 = t.backward(sq).unwrap();
        let g2 = t.backward(sq).unwrap();
        assert_eq!(g1.get(w), g2.get(w));
        assert_eq!(g1.get(w).unwrap().get(0, 0), 6.0);
    }

    #[test]
    fn shape_errors() {
        let mut t = Tape::new();
        let a = t.constant(Matrix::zeros(2, 3));
        let b = t.constant(Matrix::zeros(2, 3));
        assert!(matches!(
            t.matmul(a, b),
            Err(Error::ShapeMismatch { op: "matmul", .. })
        ));
        let c = t.constant(Matrix::zeros(3, 3));
        assert!(t.add(a, c).is_err());
        assert!(t.concat_cols(&[a, c]).is_err());
    }

    #[test]
    fn dropout_identity_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut t = Tape::new();
        let x = t.constant(Matrix::full(4, 4, 1.5));
        assert_eq!(t.dropout(x, 0.5, false, &mut rng), x);
        assert_eq!(t.dropout(x, 0.0, true, &mut rng), x);
    }

    #[test]
    fn dropout_preserves_expectation() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let mut total = 0.0;
        let seeds = 200;
        for _ in 0..seeds {
            let mut t = Tape::new();
            let x = t.constant(Matrix::full(8, 8, 2.0));
            let y = t.dropout(x, 0.3, true, &mut rng);
            total += t.value(y).sum() / 64.0;
        }
        let mean = total / seeds as f64;
        assert!((mean - 2.0).abs() / 2.0 < 0.05, "mean {mean}");
    }
}
