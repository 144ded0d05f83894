//! The recording tape.
//!
//! Every operation appends a node holding its value. [`Tape::grad`] walks
//! the tape backwards and, instead of producing plain numbers, records the
//! adjoint computation as new nodes on the same tape. Gradients are therefore
//! ordinary [`Var`]s and can be fed into further computation and
//! differentiated again, which is what force and stress losses need.

use std::sync::Arc;

use crate::func::{Evaluator, Func};
use crate::tensor::{matmul, Tensor};
use crate::AutodiffError;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Shared row index list used by gather/scatter operations.
pub type Index = Arc<[usize]>;

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Const,
    MatMul { a: Var, b: Var, ta: bool, tb: bool },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddRow(Var, Var),
    MulCol(Var, Var),
    Unary(Var, Func, u32),
    Gather(Var, Index),
    ScatterAdd(Var, Index, usize),
    Concat(Arc<[Var]>),
    Slice(Var, usize, usize),
    Pad(Var, usize, usize),
    SumRows(Var),
    BroadcastRows(Var, usize),
    SumCols(Var),
    BroadcastCols(Var, usize),
    SumAll(Var),
    BroadcastScalar(Var, usize, usize),
    Transpose(Var),
}

impl Op {
    fn inputs(&self, out: &mut Vec<Var>) {
        out.clear();
        match self {
            Op::Leaf | Op::Const => {}
            Op::MatMul { a, b, .. }
            | Op::Add(a, b)
            | Op::Sub(a, b)
            | Op::Mul(a, b)
            | Op::AddRow(a, b)
            | Op::MulCol(a, b) => {
                out.push(*a);
                out.push(*b);
            }
            Op::Concat(parts) => out.extend(parts.iter().copied()),
            Op::Scale(a, _)
            | Op::Unary(a, _, _)
            | Op::Gather(a, _)
            | Op::ScatterAdd(a, _, _)
            | Op::Slice(a, _, _)
            | Op::Pad(a, _, _)
            | Op::SumRows(a)
            | Op::BroadcastRows(a, _)
            | Op::SumCols(a)
            | Op::BroadcastCols(a, _)
            | Op::SumAll(a)
            | Op::BroadcastScalar(a, _, _)
            | Op::Transpose(a) => out.push(*a),
        }
    }
}

struct Node {
    value: Tensor,
    op: Op,
}

/// A single-writer recording of a computation over dense matrices.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_capacity(n: usize) -> Self {
        Self {
            nodes: Vec::with_capacity(n),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    pub fn is_leaf(&self, v: Var) -> bool {
        matches!(self.nodes[v.0].op, Op::Leaf)
    }

    fn push(&mut self, op: Op) -> Var {
        let value = self.eval(&op);
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    /// A differentiable input.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
        });
        Var(self.nodes.len() - 1)
    }

    /// A non-differentiable input.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Const,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn scalar(&mut self, value: f64) -> Var {
        self.constant(Tensor::scalar(value))
    }

    // ---- recorded operations -------------------------------------------

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        self.matmul_t(a, b, false, false)
    }

    /// `op(a)·op(b)` with optional transposition of either operand.
    pub fn matmul_t(&mut self, a: Var, b: Var, ta: bool, tb: bool) -> Var {
        self.push(Op::MatMul { a, b, ta, tb })
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.same_shape("add", a, b);
        self.push(Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.same_shape("sub", a, b);
        self.push(Op::Sub(a, b))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.same_shape("mul", a, b);
        self.push(Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        self.push(Op::Scale(a, c))
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.scale(a, -1.0)
    }

    /// Adds the `1×c` row `row` to every row of the `r×c` matrix `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let (_, c) = self.shape(a);
        assert_eq!(self.shape(row), (1, c), "add_row expects a 1x{c} row");
        self.push(Op::AddRow(a, row))
    }

    /// Scales row `i` of the `r×c` matrix `a` by `col[i]`.
    pub fn mul_col(&mut self, a: Var, col: Var) -> Var {
        let (r, _) = self.shape(a);
        assert_eq!(self.shape(col), (r, 1), "mul_col expects a {r}x1 column");
        self.push(Op::MulCol(a, col))
    }

    pub fn unary(&mut self, a: Var, f: Func) -> Var {
        self.push(Op::Unary(a, f, 0))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, Func::Exp)
    }

    pub fn cos(&mut self, a: Var) -> Var {
        self.unary(a, Func::Cos)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, Func::Sigmoid)
    }

    pub fn silu(&mut self, a: Var) -> Var {
        self.unary(a, Func::Silu)
    }

    pub fn powf(&mut self, a: Var, p: f64) -> Var {
        self.unary(a, Func::Pow(p))
    }

    pub fn sqrt(&mut self, a: Var) -> Var {
        self.powf(a, 0.5)
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.mul(a, a)
    }

    pub fn huber(&mut self, a: Var, delta: f64) -> Var {
        self.unary(a, Func::Huber(delta))
    }

    /// Row `k` of the output is row `index[k]` of `a`.
    pub fn gather(&mut self, a: Var, index: Index) -> Var {
        let rows = self.shape(a).0;
        debug_assert!(index.iter().all(|&i| i < rows), "gather index out of range");
        self.push(Op::Gather(a, index))
    }

    /// Adds row `k` of `a` into row `index[k]` of an `n×c` zero matrix.
    pub fn scatter_add(&mut self, a: Var, index: Index, n: usize) -> Var {
        assert_eq!(
            self.shape(a).0,
            index.len(),
            "scatter index length mismatch"
        );
        debug_assert!(index.iter().all(|&i| i < n), "scatter index out of range");
        self.push(Op::ScatterAdd(a, index, n))
    }

    /// Column-wise concatenation.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "concat of no parts");
        let r = self.shape(parts[0]).0;
        assert!(
            parts.iter().all(|&p| self.shape(p).0 == r),
            "concat parts have different row counts"
        );
        self.push(Op::Concat(parts.into()))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        assert!(start + len <= self.shape(a).1, "slice out of range");
        self.push(Op::Slice(a, start, len))
    }

    /// Embeds `a` into zero columns so that it starts at column `start` of a
    /// matrix with `total` columns.
    pub fn pad_cols(&mut self, a: Var, start: usize, total: usize) -> Var {
        assert!(start + self.shape(a).1 <= total, "pad out of range");
        self.push(Op::Pad(a, start, total))
    }

    /// Column sums as a `1×c` row.
    pub fn sum_rows(&mut self, a: Var) -> Var {
        self.push(Op::SumRows(a))
    }

    pub fn broadcast_rows(&mut self, a: Var, rows: usize) -> Var {
        assert_eq!(self.shape(a).0, 1, "broadcast_rows expects a row");
        self.push(Op::BroadcastRows(a, rows))
    }

    /// Row sums as an `r×1` column.
    pub fn sum_cols(&mut self, a: Var) -> Var {
        self.push(Op::SumCols(a))
    }

    pub fn broadcast_cols(&mut self, a: Var, cols: usize) -> Var {
        assert_eq!(self.shape(a).1, 1, "broadcast_cols expects a column");
        self.push(Op::BroadcastCols(a, cols))
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        self.push(Op::SumAll(a))
    }

    pub fn broadcast_scalar(&mut self, a: Var, rows: usize, cols: usize) -> Var {
        assert_eq!(self.shape(a), (1, 1), "broadcast_scalar expects a scalar");
        self.push(Op::BroadcastScalar(a, rows, cols))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        self.push(Op::Transpose(a))
    }

    fn same_shape(&self, what: &str, a: Var, b: Var) {
        assert_eq!(
            self.shape(a),
            self.shape(b),
            "{what}: operand shapes differ"
        );
    }

    // ---- evaluation ------------------------------------------------------

    fn eval(&self, op: &Op) -> Tensor {
        let v = |x: &Var| &self.nodes[x.0].value;
        match op {
            Op::Leaf | Op::Const => unreachable!("inputs are not evaluated"),
            Op::MatMul { a, b, ta, tb } => matmul(v(a), v(b), *ta, *tb),
            Op::Add(a, b) => zip(v(a), v(b), |x, y| x + y),
            Op::Sub(a, b) => zip(v(a), v(b), |x, y| x - y),
            Op::Mul(a, b) => zip(v(a), v(b), |x, y| x * y),
            Op::Scale(a, c) => v(a).map(|x| x * c),
            Op::AddRow(a, row) => {
                let mut out = v(a).clone();
                let row = v(row).data();
                let c = row.len();
                if c > 0 {
                    for chunk in out.data_mut().chunks_exact_mut(c) {
                        for (o, r) in chunk.iter_mut().zip(row) {
                            *o += r;
                        }
                    }
                }
                out
            }
            Op::MulCol(a, col) => {
                let mut out = v(a).clone();
                let col = v(col).data();
                let c = out.cols();
                if c > 0 {
                    for (chunk, s) in out.data_mut().chunks_exact_mut(c).zip(col) {
                        for o in chunk.iter_mut() {
                            *o *= s;
                        }
                    }
                }
                out
            }
            Op::Unary(a, f, order) => {
                let e = Evaluator::new(*f, *order);
                v(a).map(|x| e.eval(x))
            }
            Op::Gather(a, idx) => {
                let src = v(a);
                let c = src.cols();
                let mut data = Vec::with_capacity(idx.len() * c);
                for &i in idx.iter() {
                    data.extend_from_slice(src.row(i));
                }
                Tensor::from_vec(idx.len(), c, data).expect("gather shape")
            }
            Op::ScatterAdd(a, idx, n) => {
                let src = v(a);
                let c = src.cols();
                let mut out = Tensor::zeros(*n, c);
                for (k, &i) in idx.iter().enumerate() {
                    for (o, s) in out.row_mut(i).iter_mut().zip(src.row(k)) {
                        *o += s;
                    }
                }
                out
            }
            Op::Concat(parts) => {
                let r = v(&parts[0]).rows();
                let total: usize = parts.iter().map(|p| v(p).cols()).sum();
                let mut out = Tensor::zeros(r, total);
                let mut off = 0;
                for p in parts.iter() {
                    let t = v(p);
                    let c = t.cols();
                    for i in 0..r {
                        out.row_mut(i)[off..off + c].copy_from_slice(t.row(i));
                    }
                    off += c;
                }
                out
            }
            Op::Slice(a, start, len) => {
                let t = v(a);
                let mut data = Vec::with_capacity(t.rows() * len);
                for i in 0..t.rows() {
                    data.extend_from_slice(&t.row(i)[*start..start + len]);
                }
                Tensor::from_vec(t.rows(), *len, data).expect("slice shape")
            }
            Op::Pad(a, start, total) => {
                let t = v(a);
                let c = t.cols();
                let mut out = Tensor::zeros(t.rows(), *total);
                for i in 0..t.rows() {
                    out.row_mut(i)[*start..start + c].copy_from_slice(t.row(i));
                }
                out
            }
            Op::SumRows(a) => {
                let t = v(a);
                let mut out = Tensor::zeros(1, t.cols());
                for i in 0..t.rows() {
                    for (o, x) in out.data_mut().iter_mut().zip(t.row(i)) {
                        *o += x;
                    }
                }
                out
            }
            Op::BroadcastRows(a, rows) => {
                let t = v(a);
                let mut data = Vec::with_capacity(rows * t.cols());
                for _ in 0..*rows {
                    data.extend_from_slice(t.data());
                }
                Tensor::from_vec(*rows, t.cols(), data).expect("broadcast shape")
            }
            Op::SumCols(a) => {
                let t = v(a);
                let data = (0..t.rows()).map(|i| t.row(i).iter().sum()).collect();
                Tensor::from_vec(t.rows(), 1, data).expect("sum shape")
            }
            Op::BroadcastCols(a, cols) => {
                let t = v(a);
                let mut data = Vec::with_capacity(t.rows() * cols);
                for &x in t.data() {
                    data.extend(std::iter::repeat_n(x, *cols));
                }
                Tensor::from_vec(t.rows(), *cols, data).expect("broadcast shape")
            }
            Op::SumAll(a) => Tensor::scalar(v(a).sum()),
            Op::BroadcastScalar(a, r, c) => Tensor::filled(*r, *c, v(a).item()),
            Op::Transpose(a) => v(a).transpose(),
        }
    }

    /// Overwrites the value of a leaf or constant. Call [`Tape::replay`]
    /// afterwards to propagate the change.
    pub fn set_value(&mut self, v: Var, value: Tensor) -> Result<(), AutodiffError> {
        let node = &mut self.nodes[v.0];
        if !matches!(node.op, Op::Leaf | Op::Const) {
            return Err(AutodiffError::NotALeaf(v.0));
        }
        if node.value.shape() != value.shape() {
            return Err(AutodiffError::Shape(format!(
                "cannot replace a {:?} value with {:?}",
                node.value.shape(),
                value.shape()
            )));
        }
        node.value = value;
        Ok(())
    }

    /// Re-evaluates every recorded operation in order from the current
    /// input values.
    pub fn replay(&mut self) {
        for i in 0..self.nodes.len() {
            if matches!(self.nodes[i].op, Op::Leaf | Op::Const) {
                continue;
            }
            let op = self.nodes[i].op.clone();
            self.nodes[i].value = self.eval(&op);
        }
    }

    // ---- differentiation -------------------------------------------------

    /// Records the gradient of the scalar `output` with respect to each leaf
    /// in `wrt` and returns handles to the results.
    ///
    /// Only nodes that depend on at least one of `wrt` receive adjoints. A
    /// leaf that `output` does not depend on gets an exactly-zero gradient.
    pub fn grad(&mut self, output: Var, wrt: &[Var]) -> Result<Vec<Var>, AutodiffError> {
        let shape = self.shape(output);
        if shape != (1, 1) {
            return Err(AutodiffError::NotScalar(shape.0, shape.1));
        }
        for &w in wrt {
            if !self.is_leaf(w) {
                return Err(AutodiffError::NotALeaf(w.0));
            }
        }

        let n = output.0 + 1;
        let mut relevant = vec![false; n];
        for &w in wrt {
            if w.0 < n {
                relevant[w.0] = true;
            }
        }
        let mut inputs = Vec::new();
        for i in 0..n {
            if relevant[i] {
                continue;
            }
            self.nodes[i].op.inputs(&mut inputs);
            relevant[i] = inputs.iter().any(|x| relevant[x.0]);
        }

        let mut adj: Vec<Option<Var>> = vec![None; n];
        if relevant[output.0] {
            adj[output.0] = Some(self.scalar(1.0));
        }
        let mut contrib = Vec::new();
        for i in (0..n).rev() {
            if !relevant[i] {
                continue;
            }
            let Some(g) = adj[i] else { continue };
            let op = self.nodes[i].op.clone();
            contrib.clear();
            self.backward(&op, g, &relevant, &mut contrib);
            for &(input, c) in &contrib {
                adj[input.0] = Some(match adj[input.0] {
                    None => c,
                    Some(prev) => self.add(prev, c),
                });
            }
        }

        Ok(wrt
            .iter()
            .map(|&w| match adj.get(w.0).copied().flatten() {
                Some(g) => g,
                None => {
                    let (r, c) = self.shape(w);
                    self.constant(Tensor::zeros(r, c))
                }
            })
            .collect())
    }

    /// Appends `(input, adjoint contribution)` pairs for the inputs of `op`
    /// that are marked relevant.
    fn backward(&mut self, op: &Op, g: Var, relevant: &[bool], out: &mut Vec<(Var, Var)>) {
        let need = |x: &Var| relevant[x.0];
        match op {
            Op::Leaf | Op::Const => {}
            Op::MatMul { a, b, ta, tb } => {
                if need(a) {
                    let c = if *ta {
                        self.matmul_t(*b, g, *tb, true)
                    } else {
                        self.matmul_t(g, *b, false, !*tb)
                    };
                    out.push((*a, c));
                }
                if need(b) {
                    let c = if *tb {
                        self.matmul_t(g, *a, true, *ta)
                    } else {
                        self.matmul_t(*a, g, !*ta, false)
                    };
                    out.push((*b, c));
                }
            }
            Op::Add(a, b) => {
                if need(a) {
                    out.push((*a, g));
                }
                if need(b) {
                    out.push((*b, g));
                }
            }
            Op::Sub(a, b) => {
                if need(a) {
                    out.push((*a, g));
                }
                if need(b) {
                    let c = self.neg(g);
                    out.push((*b, c));
                }
            }
            Op::Mul(a, b) => {
                if need(a) {
                    let c = self.mul(g, *b);
                    out.push((*a, c));
                }
                if need(b) {
                    let c = self.mul(g, *a);
                    out.push((*b, c));
                }
            }
            Op::Scale(a, s) => {
                if need(a) {
                    let c = self.scale(g, *s);
                    out.push((*a, c));
                }
            }
            Op::AddRow(a, row) => {
                if need(a) {
                    out.push((*a, g));
                }
                if need(row) {
                    let c = self.sum_rows(g);
                    out.push((*row, c));
                }
            }
            Op::MulCol(a, col) => {
                if need(a) {
                    let c = self.mul_col(g, *col);
                    out.push((*a, c));
                }
                if need(col) {
                    let t = self.mul(g, *a);
                    let c = self.sum_cols(t);
                    out.push((*col, c));
                }
            }
            Op::Unary(a, f, order) => {
                if need(a) {
                    let d = self.push(Op::Unary(*a, *f, order + 1));
                    let c = self.mul(g, d);
                    out.push((*a, c));
                }
            }
            Op::Gather(a, idx) => {
                if need(a) {
                    let n = self.shape(*a).0;
                    let c = self.scatter_add(g, idx.clone(), n);
                    out.push((*a, c));
                }
            }
            Op::ScatterAdd(a, idx, _) => {
                if need(a) {
                    let c = self.gather(g, idx.clone());
                    out.push((*a, c));
                }
            }
            Op::Concat(parts) => {
                let mut off = 0;
                for p in parts.iter() {
                    let w = self.shape(*p).1;
                    if need(p) {
                        let c = self.slice_cols(g, off, w);
                        out.push((*p, c));
                    }
                    off += w;
                }
            }
            Op::Slice(a, start, _) => {
                if need(a) {
                    let total = self.shape(*a).1;
                    let c = self.pad_cols(g, *start, total);
                    out.push((*a, c));
                }
            }
            Op::Pad(a, start, _) => {
                if need(a) {
                    let w = self.shape(*a).1;
                    let c = self.slice_cols(g, *start, w);
                    out.push((*a, c));
                }
            }
            Op::SumRows(a) => {
                if need(a) {
                    let r = self.shape(*a).0;
                    let c = self.broadcast_rows(g, r);
                    out.push((*a, c));
                }
            }
            Op::BroadcastRows(a, _) => {
                if need(a) {
                    let c = self.sum_rows(g);
                    out.push((*a, c));
                }
            }
            Op::SumCols(a) => {
                if need(a) {
                    let w = self.shape(*a).1;
                    let c = self.broadcast_cols(g, w);
                    out.push((*a, c));
                }
            }
            Op::BroadcastCols(a, _) => {
                if need(a) {
                    let c = self.sum_cols(g);
                    out.push((*a, c));
                }
            }
            Op::SumAll(a) => {
                if need(a) {
                    let (r, w) = self.shape(*a);
                    let c = self.broadcast_scalar(g, r, w);
                    out.push((*a, c));
                }
            }
            Op::BroadcastScalar(a, _, _) => {
                if need(a) {
                    let c = self.sum_all(g);
                    out.push((*a, c));
                }
            }
            Op::Transpose(a) => {
                if need(a) {
                    let c = self.transpose(g);
                    out.push((*a, c));
                }
            }
        }
    }
}

fn zip(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| f(x, y))
        .collect();
    Tensor::from_vec(a.rows(), a.cols(), data).expect("zip shape")
}
