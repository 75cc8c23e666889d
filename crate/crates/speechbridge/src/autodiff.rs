//! Minimal reverse-mode differentiation over dense f64 matrices.
//!
//! A [`Tensor`] wraps an immutable value plus the provenance of the primitive
//! that produced it. Graphs are built eagerly during the forward pass and
//! swept once by [`Tensor::backward`]; afterwards they are discarded. Leaves
//! (parameters) may be shared across many graphs and accumulate gradient
//! contributions from each backward sweep, so per-sample losses in a batch
//! add up exactly like a summed loss would.
//!
//! The primitive set is exactly what the toy models in this crate need:
//! matmul, add (same shape or row broadcast), relu, row-(log-)softmax,
//! gather-rows, scalar-mul, concat (rows/cols), slice, elementwise mul,
//! sum-to-scalar and transpose. Relu's subgradient at 0 is 0.

use std::cell::{Cell, RefCell};
use std::collections::HashSet;
use std::ops::Range;
use std::rc::Rc;

use crate::error::{Error, Result};
use crate::linalg::Matrix;

#[derive(Clone)]
pub struct Tensor {
    node: Rc<Node>,
}

impl std::fmt::Debug for Tensor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.node.value.shape())
            .field("constant", &self.node.constant)
            .finish()
    }
}

struct Node {
    value: Matrix,
    grad: RefCell<Option<Matrix>>,
    op: Op,
    /// Constants never accumulate gradient and stop the backward traversal.
    constant: bool,
    /// Interior nodes are single-use: a second sweep through them is an error.
    swept: Cell<bool>,
}

enum Op {
    Leaf,
    Matmul(Tensor, Tensor),
    /// Same-shape add, or row broadcast when rhs is 1 x cols.
    Add(Tensor, Tensor),
    Relu(Tensor),
    Softmax(Tensor),
    LogSoftmax(Tensor),
    GatherRows(Tensor, Rc<Vec<usize>>),
    ScalarMul(Tensor, f64),
    ConcatCols(Vec<Tensor>),
    ConcatRows(Vec<Tensor>),
    Slice(Tensor, Range<usize>, Range<usize>),
    Mul(Tensor, Tensor),
    Sum(Tensor),
    Transpose(Tensor),
}

impl Op {
    fn inputs(&self) -> Vec<&Tensor> {
        match self {
            Op::Leaf => vec![],
            Op::Matmul(a, b) | Op::Add(a, b) | Op::Mul(a, b) => vec![a, b],
            Op::Relu(a)
            | Op::Softmax(a)
            | Op::LogSoftmax(a)
            | Op::GatherRows(a, _)
            | Op::ScalarMul(a, _)
            | Op::Slice(a, _, _)
            | Op::Sum(a)
            | Op::Transpose(a) => vec![a],
            Op::ConcatCols(parts) | Op::ConcatRows(parts) => parts.iter().collect(),
        }
    }
}

fn shape_err(op: &str, lhs: &Matrix, rhs: &Matrix) -> Error {
    Error::ShapeMismatch {
        op: op.to_string(),
        lhs: lhs.shape_str(),
        rhs: rhs.shape_str(),
    }
}

impl Tensor {
    fn new(value: Matrix, op: Op, constant: bool) -> Tensor {
        Tensor {
            node: Rc::new(Node {
                value,
                grad: RefCell::new(None),
                op,
                constant,
                swept: Cell::new(false),
            }),
        }
    }

    /// Gradient-tracking leaf.
    pub fn param(value: Matrix) -> Tensor {
        Tensor::new(value, Op::Leaf, false)
    }

    /// Non-differentiated leaf.
    pub fn constant(value: Matrix) -> Tensor {
        Tensor::new(value, Op::Leaf, true)
    }

    pub fn scalar_const(v: f64) -> Tensor {
        Tensor::constant(Matrix::scalar(v))
    }

    pub fn value(&self) -> &Matrix {
        &self.node.value
    }

    pub fn shape(&self) -> (usize, usize) {
        self.node.value.shape()
    }

    pub fn is_constant(&self) -> bool {
        self.node.constant
    }

    pub fn scalar_value(&self) -> f64 {
        debug_assert_eq!(self.shape(), (1, 1));
        self.node.value.data()[0]
    }

    /// Copy of the accumulated gradient, if any.
    pub fn grad(&self) -> Option<Matrix> {
        self.node.grad.borrow().clone()
    }

    /// Drop the accumulated gradient (used between optimizer steps).
    pub fn zero_grad(&self) {
        *self.node.grad.borrow_mut() = None;
    }

    fn result(inputs: &[&Tensor], value: Matrix, op: Op) -> Tensor {
        let constant = inputs.iter().all(|t| t.node.constant);
        Tensor::new(value, op, constant)
    }

    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        let (a, b) = (self.value(), other.value());
        if a.cols() != b.rows() {
            return Err(shape_err("matmul", a, b));
        }
        let value = a.matmul(b);
        Ok(Tensor::result(
            &[self, other],
            value,
            Op::Matmul(self.clone(), other.clone()),
        ))
    }

    /// Elementwise add; `other` may also be a 1 x cols row vector, which is
    /// broadcast over the rows of `self`.
    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        let (a, b) = (self.value(), other.value());
        let broadcast = b.rows() == 1 && a.rows() != 1 && b.cols() == a.cols();
        if !broadcast && a.shape() != b.shape() {
            return Err(shape_err("add", a, b));
        }
        let mut value = a.clone();
        if broadcast {
            for r in 0..value.rows() {
                let row = value.row_mut(r);
                for (v, &x) in row.iter_mut().zip(b.data()) {
                    *v += x;
                }
            }
        } else {
            value.add_assign_scaled(b, 1.0);
        }
        Ok(Tensor::result(
            &[self, other],
            value,
            Op::Add(self.clone(), other.clone()),
        ))
    }

    pub fn relu(&self) -> Tensor {
        let mut value = self.value().clone();
        for v in value.data_mut() {
            if *v < 0.0 {
                *v = 0.0;
            }
        }
        Tensor::result(&[self], value, Op::Relu(self.clone()))
    }

    pub fn softmax_rows(&self) -> Tensor {
        let mut value = self.value().log_softmax_rows();
        for v in value.data_mut() {
            *v = v.exp();
        }
        Tensor::result(&[self], value, Op::Softmax(self.clone()))
    }

    pub fn log_softmax_rows(&self) -> Tensor {
        let value = self.value().log_softmax_rows();
        Tensor::result(&[self], value, Op::LogSoftmax(self.clone()))
    }

    /// Select rows of `self` by index; an index may repeat.
    pub fn gather_rows(&self, indices: &[usize]) -> Result<Tensor> {
        let v = self.value();
        for &i in indices {
            if i >= v.rows() {
                return Err(Error::ShapeMismatch {
                    op: "gather-rows".to_string(),
                    lhs: v.shape_str(),
                    rhs: format!("row index {i}"),
                });
            }
        }
        let mut value = Matrix::zeros(indices.len(), v.cols());
        for (out_r, &i) in indices.iter().enumerate() {
            value.row_mut(out_r).copy_from_slice(v.row(i));
        }
        Ok(Tensor::result(
            &[self],
            value,
            Op::GatherRows(self.clone(), Rc::new(indices.to_vec())),
        ))
    }

    pub fn scalar_mul(&self, s: f64) -> Tensor {
        let mut value = self.value().clone();
        value.scale_assign(s);
        Tensor::result(&[self], value, Op::ScalarMul(self.clone(), s))
    }

    /// Concatenate along the last (column) dimension.
    pub fn concat_cols(parts: &[Tensor]) -> Result<Tensor> {
        assert!(!parts.is_empty(), "concat of nothing");
        let rows = parts[0].value().rows();
        for p in parts {
            if p.value().rows() != rows {
                return Err(shape_err("concat-last-dim", parts[0].value(), p.value()));
            }
        }
        let cols: usize = parts.iter().map(|p| p.value().cols()).sum();
        let mut value = Matrix::zeros(rows, cols);
        for r in 0..rows {
            let mut at = 0;
            let row = value.row_mut(r);
            for p in parts {
                let src = p.value().row(r);
                row[at..at + src.len()].copy_from_slice(src);
                at += src.len();
            }
        }
        let refs: Vec<&Tensor> = parts.iter().collect();
        Ok(Tensor::result(&refs, value, Op::ConcatCols(parts.to_vec())))
    }

    /// Stack along the row dimension.
    pub fn concat_rows(parts: &[Tensor]) -> Result<Tensor> {
        assert!(!parts.is_empty(), "concat of nothing");
        let cols = parts[0].value().cols();
        for p in parts {
            if p.value().cols() != cols {
                return Err(shape_err("concat-rows", parts[0].value(), p.value()));
            }
        }
        let rows: usize = parts.iter().map(|p| p.value().rows()).sum();
        let mut data = Vec::with_capacity(rows * cols);
        for p in parts {
            data.extend_from_slice(p.value().data());
        }
        let refs: Vec<&Tensor> = parts.iter().collect();
        Ok(Tensor::result(
            &refs,
            Matrix::from_vec(rows, cols, data),
            Op::ConcatRows(parts.to_vec()),
        ))
    }

    pub fn slice(&self, rows: Range<usize>, cols: Range<usize>) -> Result<Tensor> {
        let v = self.value();
        if rows.end > v.rows() || cols.end > v.cols() || rows.is_empty() || cols.is_empty() {
            return Err(Error::ShapeMismatch {
                op: "slice".to_string(),
                lhs: v.shape_str(),
                rhs: format!("rows {rows:?} cols {cols:?}"),
            });
        }
        let mut value = Matrix::zeros(rows.len(), cols.len());
        for (out_r, r) in rows.clone().enumerate() {
            value
                .row_mut(out_r)
                .copy_from_slice(&v.row(r)[cols.clone()]);
        }
        Ok(Tensor::result(
            &[self],
            value,
            Op::Slice(self.clone(), rows, cols),
        ))
    }

    /// Elementwise product of same-shape tensors.
    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        let (a, b) = (self.value(), other.value());
        if a.shape() != b.shape() {
            return Err(shape_err("mul", a, b));
        }
        let mut value = a.clone();
        for (v, &x) in value.data_mut().iter_mut().zip(b.data()) {
            *v *= x;
        }
        Ok(Tensor::result(
            &[self, other],
            value,
            Op::Mul(self.clone(), other.clone()),
        ))
    }

    /// Sum of all entries, as a 1x1 tensor.
    pub fn sum(&self) -> Tensor {
        let total: f64 = self.value().iter().sum();
        Tensor::result(&[self], Matrix::scalar(total), Op::Sum(self.clone()))
    }

    pub fn transpose(&self) -> Tensor {
        let value = self.value().transpose();
        Tensor::result(&[self], value, Op::Transpose(self.clone()))
    }

    /// Back-propagate from a scalar root, accumulating d root / d leaf into
    /// every reachable non-constant leaf.
    pub fn backward(&self) -> Result<()> {
        if self.shape() != (1, 1) {
            return Err(Error::NonScalarRoot(self.node.value.shape_str()));
        }
        self.backward_seeded(&Matrix::scalar(1.0))
    }

    /// Back-propagate with an explicit output gradient. This is how losses
    /// computed outside the graph (the CTC recursion) inject their analytic
    /// gradient at the boundary tensor.
    pub fn backward_seeded(&self, seed: &Matrix) -> Result<()> {
        if seed.shape() != self.shape() {
            return Err(Error::SeedShapeMismatch {
                seed: seed.shape_str(),
                tensor: self.node.value.shape_str(),
            });
        }
        if self.node.constant {
            return Ok(());
        }

        let order = self.topo_order()?;
        accumulate(&self.node, seed.clone());
        for node in order.iter().rev() {
            node.swept.set(true);
            let grad = match node.grad.borrow_mut().take() {
                Some(g) => g,
                None => continue, // no gradient flowed here
            };
            if let Op::Leaf = node.op {
                // Leaves keep their gradient for the caller.
                *node.grad.borrow_mut() = Some(grad);
                node.swept.set(false);
                continue;
            }
            propagate(node, &grad);
        }
        Ok(())
    }

    /// Topological order over non-constant nodes (inputs before outputs).
    fn topo_order(&self) -> Result<Vec<Rc<Node>>> {
        let mut order: Vec<Rc<Node>> = Vec::new();
        let mut seen: HashSet<*const Node> = HashSet::new();
        // Iterative post-order DFS; (node, next-input-to-visit).
        let mut stack: Vec<(Tensor, usize)> = vec![(self.clone(), 0)];
        seen.insert(Rc::as_ptr(&self.node));
        if self.node.swept.get() {
            return Err(Error::BackwardAlreadyRun);
        }
        while let Some((t, i)) = stack.pop() {
            let inputs = t.node.op.inputs();
            if i < inputs.len() {
                let next = inputs[i].clone();
                stack.push((t, i + 1));
                if !next.node.constant && seen.insert(Rc::as_ptr(&next.node)) {
                    if next.node.swept.get() {
                        return Err(Error::BackwardAlreadyRun);
                    }
                    stack.push((next, 0));
                }
            } else {
                order.push(Rc::clone(&t.node));
            }
        }
        Ok(order)
    }
}

fn accumulate(node: &Rc<Node>, g: Matrix) {
    if node.constant {
        return;
    }
    let mut slot = node.grad.borrow_mut();
    match slot.as_mut() {
        Some(acc) => acc.add_assign_scaled(&g, 1.0),
        None => *slot = Some(g),
    }
}

fn propagate(node: &Rc<Node>, g: &Matrix) {
    match &node.op {
        Op::Leaf => unreachable!("leaves handled in backward"),
        Op::Matmul(a, b) => {
            if !a.node.constant {
                accumulate(&a.node, g.matmul_transpose_b(b.value()));
            }
            if !b.node.constant {
                accumulate(&b.node, a.value().matmul_transpose_a(g));
            }
        }
        Op::Add(a, b) => {
            if !a.node.constant {
                accumulate(&a.node, g.clone());
            }
            if !b.node.constant {
                if b.value().shape() == g.shape() {
                    accumulate(&b.node, g.clone());
                } else {
                    // Row broadcast: sum gradient over rows.
                    let mut gb = Matrix::zeros(1, g.cols());
                    for r in 0..g.rows() {
                        let row = g.row(r);
                        for (acc, &v) in gb.data_mut().iter_mut().zip(row) {
                            *acc += v;
                        }
                    }
                    accumulate(&b.node, gb);
                }
            }
        }
        Op::Relu(a) => {
            if !a.node.constant {
                let mut ga = g.clone();
                for (gv, &x) in ga.data_mut().iter_mut().zip(a.value().data()) {
                    if x <= 0.0 {
                        *gv = 0.0;
                    }
                }
                accumulate(&a.node, ga);
            }
        }
        Op::Softmax(a) => {
            if !a.node.constant {
                let y = &node.value;
                let mut ga = Matrix::zeros(y.rows(), y.cols());
                for r in 0..y.rows() {
                    let yr = y.row(r);
                    let gr = g.row(r);
                    let dot: f64 = yr.iter().zip(gr).map(|(&y, &g)| y * g).sum();
                    let out = ga.row_mut(r);
                    for ((o, &y), &g) in out.iter_mut().zip(yr).zip(gr) {
                        *o = y * (g - dot);
                    }
                }
                accumulate(&a.node, ga);
            }
        }
        Op::LogSoftmax(a) => {
            if !a.node.constant {
                let y = &node.value;
                let mut ga = Matrix::zeros(y.rows(), y.cols());
                for r in 0..y.rows() {
                    let yr = y.row(r);
                    let gr = g.row(r);
                    let gsum: f64 = gr.iter().sum();
                    let out = ga.row_mut(r);
                    for ((o, &y), &g) in out.iter_mut().zip(yr).zip(gr) {
                        *o = g - y.exp() * gsum;
                    }
                }
                accumulate(&a.node, ga);
            }
        }
        Op::GatherRows(a, indices) => {
            if !a.node.constant {
                let mut ga = Matrix::zeros(a.value().rows(), a.value().cols());
                for (out_r, &i) in indices.iter().enumerate() {
                    let src = g.row(out_r);
                    let dst = ga.row_mut(i);
                    for (d, &s) in dst.iter_mut().zip(src) {
                        *d += s;
                    }
                }
                accumulate(&a.node, ga);
            }
        }
        Op::ScalarMul(a, s) => {
            if !a.node.constant {
                let mut ga = g.clone();
                ga.scale_assign(*s);
                accumulate(&a.node, ga);
            }
        }
        Op::ConcatCols(parts) => {
            let mut at = 0;
            for p in parts {
                let w = p.value().cols();
                if !p.node.constant {
                    let mut gp = Matrix::zeros(g.rows(), w);
                    for r in 0..g.rows() {
                        gp.row_mut(r).copy_from_slice(&g.row(r)[at..at + w]);
                    }
                    accumulate(&p.node, gp);
                }
                at += w;
            }
        }
        Op::ConcatRows(parts) => {
            let mut at = 0;
            for p in parts {
                let h = p.value().rows();
                if !p.node.constant {
                    let mut gp = Matrix::zeros(h, g.cols());
                    for r in 0..h {
                        gp.row_mut(r).copy_from_slice(g.row(at + r));
                    }
                    accumulate(&p.node, gp);
                }
                at += h;
            }
        }
        Op::Slice(a, rows, cols) => {
            if !a.node.constant {
                let mut ga = Matrix::zeros(a.value().rows(), a.value().cols());
                for (out_r, r) in rows.clone().enumerate() {
                    let src = g.row(out_r);
                    let dst = &mut ga.row_mut(r)[cols.clone()];
                    dst.copy_from_slice(src);
                }
                accumulate(&a.node, ga);
            }
        }
        Op::Mul(a, b) => {
            if !a.node.constant {
                let mut ga = g.clone();
                for (gv, &x) in ga.data_mut().iter_mut().zip(b.value().data()) {
                    *gv *= x;
                }
                accumulate(&a.node, ga);
            }
            if !b.node.constant {
                let mut gb = g.clone();
                for (gv, &x) in gb.data_mut().iter_mut().zip(a.value().data()) {
                    *gv *= x;
                }
                accumulate(&b.node, gb);
            }
        }
        Op::Sum(a) => {
            if !a.node.constant {
                let s = g.data()[0];
                let mut ga = Matrix::zeros(a.value().rows(), a.value().cols());
                ga.fill(s);
                accumulate(&a.node, ga);
            }
        }
        Op::Transpose(a) => {
            if !a.node.constant {
                accumulate(&a.node, g.transpose());
            }
        }
    }
}

/// Name-dispatched forward for the primitive set. Auxiliary arguments ride
/// along as constant tensors: `gather-rows` takes a 1xN index tensor,
/// `scalar-mul` a 1x1 factor and `slice` a 1x4 `[r0, r1, c0, c1]` range.
pub fn primitive_forward(op_name: &str, inputs: &[Tensor]) -> Result<Tensor> {
    let need = |n: usize| -> Result<()> {
        if inputs.len() != n {
            return Err(Error::UnknownOp(format!(
                "{op_name} expects {n} inputs, got {}",
                inputs.len()
            )));
        }
        Ok(())
    };
    match op_name {
        "matmul" => {
            need(2)?;
            inputs[0].matmul(&inputs[1])
        }
        "add" => {
            need(2)?;
            inputs[0].add(&inputs[1])
        }
        "relu" => {
            need(1)?;
            Ok(inputs[0].relu())
        }
        "row-softmax" => {
            need(1)?;
            Ok(inputs[0].softmax_rows())
        }
        "row-log-softmax" => {
            need(1)?;
            Ok(inputs[0].log_softmax_rows())
        }
        "gather-rows" => {
            need(2)?;
            let idx: Vec<usize> = inputs[1].value().iter().map(|&v| v as usize).collect();
            inputs[0].gather_rows(&idx)
        }
        "scalar-mul" => {
            need(2)?;
            Ok(inputs[0].scalar_mul(inputs[1].scalar_value()))
        }
        "concat-last-dim" => Tensor::concat_cols(inputs),
        "concat-rows" => Tensor::concat_rows(inputs),
        "slice" => {
            need(2)?;
            let r = inputs[1].value().data();
            if r.len() != 4 {
                return Err(Error::UnknownOp("slice range must be 1x4".to_string()));
            }
            inputs[0].slice(r[0] as usize..r[1] as usize, r[2] as usize..r[3] as usize)
        }
        "mul" => {
            need(2)?;
            inputs[0].mul(&inputs[1])
        }
        "sum" => {
            need(1)?;
            Ok(inputs[0].sum())
        }
        "transpose" => {
            need(1)?;
            Ok(inputs[0].transpose())
        }
        other => Err(Error::UnknownOp(other.to_string())),
    }
}

/// Plain SGD: fold a leaf's accumulated gradient into its backing matrix and
/// clear it. No-op when no gradient flowed.
pub fn sgd_update(param: &Tensor, value: &mut Matrix, lr: f64) {
    if let Some(g) = param.grad() {
        value.add_assign_scaled(&g, -lr);
        param.zero_grad();
    }
}

/// Compares the analytic gradient of `f` at `point` against central finite
/// differences, returning the max over coordinates of
/// `|analytic - numeric| / (|numeric| + 1e-12)`.
pub fn grad_check<F>(f: F, point: &[Matrix], eps: f64) -> Result<f64>
where
    F: Fn(&[Tensor]) -> Result<Tensor>,
{
    assert!(eps > 0.0, "eps must be positive");
    let params: Vec<Tensor> = point.iter().map(|m| Tensor::param(m.clone())).collect();
    let out = f(&params)?;
    if out.shape() != (1, 1) {
        return Err(Error::NonScalarRoot(out.value().shape_str()));
    }
    out.backward()?;

    let eval = |mats: &[Matrix]| -> Result<f64> {
        let consts: Vec<Tensor> = mats.iter().map(|m| Tensor::constant(m.clone())).collect();
        Ok(f(&consts)?.scalar_value())
    };

    let mut worst: f64 = 0.0;
    let mut mats: Vec<Matrix> = point.to_vec();
    for (pi, p) in params.iter().enumerate() {
        let analytic = p
            .grad()
            .unwrap_or_else(|| Matrix::zeros(point[pi].rows(), point[pi].cols()));
        for ci in 0..point[pi].len() {
            let orig = mats[pi].data()[ci];
            mats[pi].data_mut()[ci] = orig + eps;
            let up = eval(&mats)?;
            mats[pi].data_mut()[ci] = orig - eps;
            let down = eval(&mats)?;
            mats[pi].data_mut()[ci] = orig;
            let numeric = (up - down) / (2.0 * eps);
            let a = analytic.data()[ci];
            if !numeric.is_finite() || !a.is_finite() {
                return Err(Error::NonFinite { param: pi, coord: ci });
            }
            let rel = (a - numeric).abs() / (numeric.abs() + 1e-12);
            worst = worst.max(rel);
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn relu_forward() {
        let x = Tensor::param(Matrix::from_vec(1, 3, vec![-1.0, 0.0, 2.0]));
        assert_eq!(x.relu().value().data(), &[0.0, 0.0, 2.0]);
    }

    #[test]
    fn softmax_symmetry() {
        let x = Tensor::param(Matrix::from_vec(1, 2, vec![0.0, 0.0]));
        let y = x.softmax_rows();
        assert!((y.value().data()[0] - 0.5).abs() < 1e-15);
        assert!((y.value().data()[1] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn relu_subgradient_at_zero_is_zero() {
        let x = Tensor::param(Matrix::from_vec(1, 2, vec![-1.0, 0.0]));
        let y = x.relu().sum();
        y.backward().unwrap();
        assert_eq!(x.grad().unwrap().data(), &[0.0, 0.0]);
    }

    #[test]
    fn sum_relu_gradient() {
        let x = Tensor::param(Matrix::from_vec(1, 2, vec![-1.0, 2.0]));
        let y = x.relu().sum();
        y.backward().unwrap();
        assert_eq!(x.grad().unwrap().data(), &[0.0, 1.0]);
    }

    #[test]
    fn matmul_gradient_linearity() {
        let x = Tensor::param(Matrix::from_vec(1, 2, vec![1.0, 2.0]));
        let w = Tensor::constant(Matrix::from_vec(2, 1, vec![3.0, 4.0]));
        let y = x.matmul(&w).unwrap();
        y.backward().unwrap();
        assert_eq!(x.grad().unwrap().data(), &[3.0, 4.0]);
    }

    #[test]
    fn backward_twice_is_an_error() {
        let x = Tensor::param(Matrix::scalar(2.0));
        let y = x.scalar_mul(3.0);
        y.backward().unwrap();
        assert!(matches!(y.backward(), Err(Error::BackwardAlreadyRun)));
    }

    #[test]
    fn backward_rejects_non_scalar_root() {
        let x = Tensor::param(Matrix::from_vec(1, 2, vec![1.0, 2.0]));
        let y = x.relu();
        assert!(matches!(y.backward(), Err(Error::NonScalarRoot(_))));
    }

    #[test]
    fn constants_never_accumulate_grad() {
        let x = Tensor::constant(Matrix::from_vec(1, 2, vec![1.0, 2.0]));
        let w = Tensor::param(Matrix::from_vec(2, 1, vec![1.0, 1.0]));
        let y = x.matmul(&w).unwrap();
        y.backward().unwrap();
        assert!(x.grad().is_none());
        assert!(w.grad().is_some());
    }

    #[test]
    fn accumulation_linearity_across_separate_backwards() {
        let make = |x: &Tensor| -> (Tensor, Tensor) {
            let a = x.scalar_mul(2.0).sum();
            let b = x.mul(x).unwrap().sum();
            (a, b)
        };

        let x1 = Tensor::param(Matrix::from_vec(1, 3, vec![1.0, -2.0, 0.5]));
        let (a, b) = make(&x1);
        let joint = a.add(&b).unwrap();
        joint.backward().unwrap();
        let g_joint = x1.grad().unwrap();

        let x2 = Tensor::param(Matrix::from_vec(1, 3, vec![1.0, -2.0, 0.5]));
        let (a, b) = make(&x2);
        a.backward().unwrap();
        b.backward().unwrap();
        let g_sep = x2.grad().unwrap();

        assert_eq!(g_joint, g_sep);
    }

    /// A composite of every primitive, reduced to a scalar.
    fn composite(params: &[Tensor]) -> Result<Tensor> {
        let x = &params[0]; // 3x4
        let w = &params[1]; // 4x3
        let b = &params[2]; // 1x3
        let h = x.matmul(w)?.add(b)?; // 3x3
        let r = h.relu();
        let s = r.softmax_rows();
        let l = h.log_softmax_rows();
        let g = h.gather_rows(&[0, 2, 2])?;
        let cat = Tensor::concat_cols(&[s.clone(), l.clone()])?; // 3x6
        let catr = Tensor::concat_rows(&[cat.clone(), cat])?; // 6x6
        let sl = catr.slice(1..4, 2..5)?; // 3x3
        let m = sl.mul(&g)?;
        let t = m.transpose();
        Ok(t.scalar_mul(0.7).sum())
    }

    #[test]
    fn composite_matches_finite_differences_over_seeds() {
        for seed in 0..100u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            // Keep entries away from relu kinks.
            let jitter = |m: &mut Matrix| {
                for v in m.data_mut() {
                    if v.abs() < 1e-4 {
                        *v += 0.01;
                    }
                }
            };
            let mut x = Matrix::randn(3, 4, 1.0, &mut rng);
            let mut w = Matrix::randn(4, 3, 1.0, &mut rng);
            let mut b = Matrix::randn(1, 3, 1.0, &mut rng);
            jitter(&mut x);
            jitter(&mut w);
            jitter(&mut b);
            let err = grad_check(composite, &[x, w, b], 1e-6).unwrap();
            assert!(err < 1e-5, "seed {seed}: rel err {err}");
        }
    }

    #[test]
    fn grad_check_quadratic() {
        let f = |p: &[Tensor]| -> Result<Tensor> { Ok(p[0].mul(&p[0])?.sum()) };
        let x = Matrix::from_vec(1, 3, vec![1.0, 2.0, 3.0]);
        let err = grad_check(f, &[x], 1e-6).unwrap();
        assert!(err < 1e-7, "rel err {err}");
    }

    #[test]
    fn primitive_forward_dispatch() {
        let a = Tensor::param(Matrix::from_vec(2, 2, vec![1.0, 2.0, 3.0, 4.0]));
        let b = Tensor::param(Matrix::from_vec(2, 1, vec![1.0, 1.0]));
        let y = primitive_forward("matmul", &[a, b]).unwrap();
        assert_eq!(y.value().data(), &[3.0, 7.0]);
        assert!(matches!(
            primitive_forward("conv2d", &[]),
            Err(Error::UnknownOp(_))
        ));
        let x = Tensor::param(Matrix::from_vec(2, 3, vec![1., 2., 3., 4., 5., 6.]));
        let mismatch = primitive_forward("mul", &[x.clone(), Tensor::param(Matrix::zeros(3, 2))]);
        match mismatch {
            Err(Error::ShapeMismatch { op, lhs, rhs }) => {
                assert_eq!(op, "mul");
                assert_eq!(lhs, "2x3");
                assert_eq!(rhs, "3x2");
            }
            other => panic!("expected shape mismatch, got {other:?}"),
        }
    }
}
