//! Taped reverse-mode differentiation over [`Matrix`] values.
//!
//! A [`Tape`] records every operation in evaluation order; [`Tape::backward`]
//! walks it in reverse and accumulates adjoints. Node ids are topologically
//! sorted by construction, so no explicit graph sort is needed.

use std::cell::RefCell;
use std::rc::Rc;

use crate::error::{Error, Result};
use crate::tensor::{softmax_in_place, Matrix};

/// Probabilities are clamped to `[PROB_CLAMP, 1 - PROB_CLAMP]` before logs.
pub const PROB_CLAMP: f64 = 1e-12;

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(usize, usize),
    MatMulT(usize, usize),
    Add(usize, usize),
    AddRow(usize, usize),
    Relu(usize),
    Sigmoid(usize),
    SoftmaxRows(usize),
    Scale(usize, f64),
    Mask(usize, Rc<Matrix>),
    VStack(Vec<usize>),
    HStack(Vec<usize>),
    SliceRows(usize, usize),
    SliceCols(usize, usize),
    Gather(usize, Vec<usize>),
    RepeatRow(usize),
    Sum(usize),
    Bce(usize, Rc<Vec<f64>>),
}

struct Node {
    value: Rc<Matrix>,
    op: Op,
}

#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var#{} {:?}", self.id, self.value())
    }
}

pub struct Gradients {
    grads: Vec<Option<Matrix>>,
    shapes: Vec<(usize, usize)>,
}

impl Gradients {
    /// Adjoint of `var`; zeros when the loss does not depend on it.
    pub fn wrt(&self, var: Var<'_>) -> Matrix {
        match &self.grads[var.id] {
            Some(g) => g.clone(),
            None => {
                let (r, c) = self.shapes[var.id];
                Matrix::zeros(r, c)
            }
        }
    }

    pub fn take(&mut self, var: Var<'_>) -> Matrix {
        match self.grads[var.id].take() {
            Some(g) => g,
            None => {
                let (r, c) = self.shapes[var.id];
                Matrix::zeros(r, c)
            }
        }
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn leaf(&self, value: Matrix) -> Var<'_> {
        self.push(value, Op::Leaf)
    }

    /// A leaf the caller will never ask a gradient for (inputs, masks).
    pub fn constant(&self, value: Matrix) -> Var<'_> {
        self.leaf(value)
    }

    fn push(&self, value: Matrix, op: Op) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value: Rc::new(value),
            op,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    fn value(&self, id: usize) -> Rc<Matrix> {
        Rc::clone(&self.nodes.borrow()[id].value)
    }

    /// Reverse sweep from a `1 × 1` output.
    pub fn backward(&self, output: Var<'_>) -> Result<Gradients> {
        let nodes = self.nodes.borrow();
        let out_shape = nodes[output.id].value.shape();
        if out_shape != (1, 1) {
            return Err(Error::invalid(format!(
                "backward needs a scalar output, got {out_shape:?}"
            )));
        }
        let mut grads: Vec<Option<Matrix>> = vec![None; nodes.len()];
        grads[output.id] = Some(Matrix::filled(1, 1, 1.0));

        for id in (0..=output.id).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &nodes[id];
            let val = |i: usize| -> &Matrix { &nodes[i].value };
            match &node.op {
                Op::Leaf => {
                    grads[id] = Some(g);
                    continue;
                }
                Op::MatMul(a, b) => {
                    let da = g.matmul_t(val(*b))?;
                    let db = val(*a).t_matmul(&g)?;
                    accumulate(&mut grads, *a, da);
                    accumulate(&mut grads, *b, db);
                }
                Op::MatMulT(a, b) => {
                    let da = g.matmul(val(*b))?;
                    let db = g.t_matmul(val(*a))?;
                    accumulate(&mut grads, *a, da);
                    accumulate(&mut grads, *b, db);
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *b, g.clone());
                    accumulate(&mut grads, *a, g);
                }
                Op::AddRow(a, bias) => {
                    accumulate(&mut grads, *bias, g.sum_rows());
                    accumulate(&mut grads, *a, g);
                }
                Op::Relu(a) => {
                    let x = val(*a);
                    let mut d = g;
                    for (dv, &xv) in d.data_mut().iter_mut().zip(x.data()) {
                        if xv <= 0.0 {
                            *dv = 0.0;
                        }
                    }
                    accumulate(&mut grads, *a, d);
                }
                Op::Sigmoid(a) => {
                    let y = &node.value;
                    let mut d = g;
                    for (dv, &yv) in d.data_mut().iter_mut().zip(y.data()) {
                        *dv *= yv * (1.0 - yv);
                    }
                    accumulate(&mut grads, *a, d);
                }
                Op::SoftmaxRows(a) => {
                    let y = &node.value;
                    let mut d = g;
                    for r in 0..y.rows() {
                        let yr = y.row(r);
                        let dr = d.row_mut(r);
                        let inner: f64 = dr.iter().zip(yr).map(|(a, b)| a * b).sum();
                        for (dv, &yv) in dr.iter_mut().zip(yr) {
                            *dv = yv * (*dv - inner);
                        }
                    }
                    accumulate(&mut grads, *a, d);
                }
                Op::Scale(a, s) => accumulate(&mut grads, *a, g.scale(*s)),
                Op::Mask(a, mask) => accumulate(&mut grads, *a, g.hadamard(mask)?),
                Op::VStack(parts) => {
                    let mut start = 0;
                    for &p in parts {
                        let rows = val(p).rows();
                        accumulate(&mut grads, p, g.slice_rows(start, start + rows));
                        start += rows;
                    }
                }
                Op::HStack(parts) => {
                    let mut start = 0;
                    for &p in parts {
                        let cols = val(p).cols();
                        accumulate(&mut grads, p, g.slice_cols(start, start + cols));
                        start += cols;
                    }
                }
                Op::SliceRows(a, start) => {
                    let src = val(*a);
                    let mut d = Matrix::zeros(src.rows(), src.cols());
                    for r in 0..g.rows() {
                        d.row_mut(start + r).copy_from_slice(g.row(r));
                    }
                    accumulate(&mut grads, *a, d);
                }
                Op::SliceCols(a, start) => {
                    let src = val(*a);
                    let mut d = Matrix::zeros(src.rows(), src.cols());
                    for r in 0..g.rows() {
                        d.row_mut(r)[*start..start + g.cols()].copy_from_slice(g.row(r));
                    }
                    accumulate(&mut grads, *a, d);
                }
                Op::Gather(table, indices) => {
                    let src = val(*table);
                    let mut d = Matrix::zeros(src.rows(), src.cols());
                    for (r, &idx) in indices.iter().enumerate() {
                        // Row 0 is padding and never trained.
                        if idx == 0 {
                            continue;
                        }
                        for (dv, gv) in d.row_mut(idx).iter_mut().zip(g.row(r)) {
                            *dv += gv;
                        }
                    }
                    accumulate(&mut grads, *table, d);
                }
                Op::RepeatRow(a) => accumulate(&mut grads, *a, g.sum_rows()),
                Op::Sum(a) => {
                    let (r, c) = val(*a).shape();
                    accumulate(&mut grads, *a, Matrix::filled(r, c, g.get(0, 0)));
                }
                Op::Bce(p, labels) => {
                    let probs = val(*p);
                    let upstream = g.get(0, 0);
                    let d = probs.data().iter().zip(labels.iter()).map(|(&pv, &y)| {
                        if pv <= PROB_CLAMP || pv >= 1.0 - PROB_CLAMP {
                            0.0
                        } else {
                            upstream * (-y / pv + (1.0 - y) / (1.0 - pv))
                        }
                    });
                    let d = Matrix::new(probs.rows(), probs.cols(), d.collect())?;
                    accumulate(&mut grads, *p, d);
                }
            }
        }

        let shapes = nodes.iter().map(|n| n.value.shape()).collect();
        Ok(Gradients { grads, shapes })
    }
}

fn accumulate(grads: &mut [Option<Matrix>], id: usize, g: Matrix) {
    match &mut grads[id] {
        Some(existing) => {
            for (a, b) in existing.data_mut().iter_mut().zip(g.data()) {
                *a += b;
            }
        }
        slot @ None => *slot = Some(g),
    }
}

impl<'t> Var<'t> {
    pub fn value(&self) -> Rc<Matrix> {
        self.tape.value(self.id)
    }

    pub fn shape(&self) -> (usize, usize) {
        self.tape.nodes.borrow()[self.id].value.shape()
    }

    pub fn rows(&self) -> usize {
        self.shape().0
    }

    pub fn cols(&self) -> usize {
        self.shape().1
    }

    /// The scalar held by a `1 × 1` node.
    pub fn scalar(&self) -> f64 {
        let v = self.value();
        debug_assert_eq!(v.shape(), (1, 1));
        v.get(0, 0)
    }

    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    fn same_tape(&self, other: &Var<'_>) {
        assert!(
            std::ptr::eq(self.tape, other.tape),
            "vars recorded on different tapes"
        );
    }

    pub fn matmul(self, other: Var<'t>) -> Result<Var<'t>> {
        self.same_tape(&other);
        let v = self.value().matmul(&other.value())?;
        Ok(self.tape.push(v, Op::MatMul(self.id, other.id)))
    }

    /// `self · otherᵀ`
    pub fn matmul_t(self, other: Var<'t>) -> Result<Var<'t>> {
        self.same_tape(&other);
        let v = self.value().matmul_t(&other.value())?;
        Ok(self.tape.push(v, Op::MatMulT(self.id, other.id)))
    }

    #[allow(clippy::should_implement_trait)] // fallible, so not `ops::Add`
    pub fn add(self, other: Var<'t>) -> Result<Var<'t>> {
        self.same_tape(&other);
        let v = self.value().add(&other.value())?;
        Ok(self.tape.push(v, Op::Add(self.id, other.id)))
    }

    pub fn add_row(self, bias: Var<'t>) -> Result<Var<'t>> {
        self.same_tape(&bias);
        let v = self.value().add_row(&bias.value())?;
        Ok(self.tape.push(v, Op::AddRow(self.id, bias.id)))
    }

    /// `self · wᵀ + b` for item rows.
    pub fn affine(self, w: Var<'t>, b: Var<'t>) -> Result<Var<'t>> {
        self.matmul_t(w)?.add_row(b)
    }

    pub fn relu(self) -> Var<'t> {
        let v = self.value().relu();
        self.tape.push(v, Op::Relu(self.id))
    }

    pub fn sigmoid(self) -> Var<'t> {
        let v = self.value().sigmoid();
        self.tape.push(v, Op::Sigmoid(self.id))
    }

    pub fn softmax_rows(self) -> Result<Var<'t>> {
        let src = self.value();
        if src.cols() == 0 {
            return Err(Error::Empty("softmax_rows"));
        }
        let mut v = (*src).clone();
        for r in 0..v.rows() {
            softmax_in_place(v.row_mut(r));
        }
        Ok(self.tape.push(v, Op::SoftmaxRows(self.id)))
    }

    pub fn scale(self, s: f64) -> Var<'t> {
        let v = self.value().scale(s);
        self.tape.push(v, Op::Scale(self.id, s))
    }

    /// Elementwise product with a constant matrix (dropout masks).
    pub fn mask(self, mask: Matrix) -> Result<Var<'t>> {
        let v = self.value().hadamard(&mask)?;
        Ok(self.tape.push(v, Op::Mask(self.id, Rc::new(mask))))
    }

    pub fn slice_rows(self, start: usize, end: usize) -> Result<Var<'t>> {
        let src = self.value();
        if start > end || end > src.rows() {
            return Err(Error::invalid(format!(
                "row slice {start}..{end} of {} rows",
                src.rows()
            )));
        }
        let v = src.slice_rows(start, end);
        Ok(self.tape.push(v, Op::SliceRows(self.id, start)))
    }

    pub fn slice_cols(self, start: usize, end: usize) -> Result<Var<'t>> {
        let src = self.value();
        if start > end || end > src.cols() {
            return Err(Error::invalid(format!(
                "column slice {start}..{end} of {} columns",
                src.cols()
            )));
        }
        let v = src.slice_cols(start, end);
        Ok(self.tape.push(v, Op::SliceCols(self.id, start)))
    }

    /// Looks up rows of an embedding table. Index 0 is padding: it yields
    /// a zero row whatever the table holds, and passes no gradient.
    pub fn gather(self, indices: &[usize]) -> Result<Var<'t>> {
        let table = self.value();
        let mut v = Matrix::zeros(indices.len(), table.cols());
        for (r, &idx) in indices.iter().enumerate() {
            if idx >= table.rows() {
                return Err(Error::invalid(format!(
                    "gather index {idx} outside table of {} rows",
                    table.rows()
                )));
            }
            if idx != 0 {
                v.row_mut(r).copy_from_slice(table.row(idx));
            }
        }
        Ok(self.tape.push(v, Op::Gather(self.id, indices.to_vec())))
    }

    /// Broadcasts a single row `times` times.
    pub fn repeat_row(self, times: usize) -> Result<Var<'t>> {
        let src = self.value();
        if src.rows() != 1 {
            return Err(Error::invalid(format!(
                "repeat_row needs one row, got {}",
                src.rows()
            )));
        }
        let mut v = Matrix::zeros(times, src.cols());
        for r in 0..times {
            v.row_mut(r).copy_from_slice(src.row(0));
        }
        Ok(self.tape.push(v, Op::RepeatRow(self.id)))
    }

    pub fn sum(self) -> Var<'t> {
        let v = Matrix::filled(1, 1, self.value().sum());
        self.tape.push(v, Op::Sum(self.id))
    }

    /// Summed binary cross-entropy `-Σ [y ln p + (1-y) ln(1-p)]` against
    /// fixed labels, with probabilities clamped away from 0 and 1.
    pub fn bce(self, labels: &[f64]) -> Result<Var<'t>> {
        let probs = self.value();
        if probs.len() != labels.len() {
            return Err(Error::Shape {
                op: "bce",
                left: probs.shape(),
                right: (1, labels.len()),
            });
        }
        let loss = bce_value(probs.data(), labels);
        Ok(self.tape.push(
            Matrix::filled(1, 1, loss),
            Op::Bce(self.id, Rc::new(labels.to_vec())),
        ))
    }
}

pub fn vstack<'t>(parts: &[Var<'t>]) -> Result<Var<'t>> {
    let tape = parts
        .first()
        .ok_or_else(|| Error::invalid("vstack of nothing"))?
        .tape;
    let values: Vec<Rc<Matrix>> = parts.iter().map(Var::value).collect();
    let refs: Vec<&Matrix> = values.iter().map(|v| v.as_ref()).collect();
    let v = Matrix::vstack(&refs)?;
    Ok(tape.push(v, Op::VStack(parts.iter().map(|p| p.id).collect())))
}

pub fn hstack<'t>(parts: &[Var<'t>]) -> Result<Var<'t>> {
    let tape = parts
        .first()
        .ok_or_else(|| Error::invalid("hstack of nothing"))?
        .tape;
    let values: Vec<Rc<Matrix>> = parts.iter().map(Var::value).collect();
    let refs: Vec<&Matrix> = values.iter().map(|v| v.as_ref()).collect();
    let v = Matrix::hstack(&refs)?;
    Ok(tape.push(v, Op::HStack(parts.iter().map(|p| p.id).collect())))
}

pub(crate) fn bce_value(probs: &[f64], labels: &[f64]) -> f64 {
    probs
        .iter()
        .zip(labels)
        .map(|(&p, &y)| {
            let p = p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
            -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
        })
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{grad_check, GradCheckConfig};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rand_m(rows: usize, cols: usize, seed: u64) -> Matrix {
        Matrix::uniform(rows, cols, 1.0, &mut ChaCha8Rng::seed_from_u64(seed))
    }

    fn check<F>(params: Vec<Matrix>, f: F)
    where
        F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Result<Var<'t>>,
    {
        let report = grad_check(&f, &params, &GradCheckConfig::default()).unwrap();
        assert!(report.passed, "{report:?}");
    }

    #[test]
    fn matmul_and_transposed_grads() {
        check(vec![rand_m(3, 4, 1), rand_m(4, 2, 2)], |_, p| {
            Ok(p[0].matmul(p[1])?.relu().sum())
        });
        check(vec![rand_m(3, 4, 3), rand_m(5, 4, 4)], |_, p| {
            Ok(p[0].matmul_t(p[1])?.sigmoid().sum())
        });
    }

    #[test]
    fn softmax_grad() {
        // weight the outputs so the gradient is not trivially zero
        let w = rand_m(3, 5, 6);
        check(vec![rand_m(3, 5, 5)], move |_, p| {
            Ok(p[0].softmax_rows()?.mask(w.clone())?.sum())
        });
    }

    #[test]
    fn structural_op_grads() {
        check(
            vec![rand_m(2, 3, 7), rand_m(1, 3, 8), rand_m(4, 2, 9)],
            |_, p| {
                let stacked = vstack(&[p[0], p[1]])?;
                let rep = p[1].repeat_row(3)?;
                let both = stacked.add(rep)?.add_row(p[1])?;
                let wide = hstack(&[both.slice_cols(0, 2)?, both.slice_rows(0, 3)?])?;
                let gathered = p[2].gather(&[3, 1, 0])?;
                Ok(wide
                    .slice_cols(1, 3)?
                    .matmul(gathered.slice_rows(0, 2)?)?
                    .scale(0.7)
                    .sum())
            },
        );
    }

    #[test]
    fn bce_grad_and_value() {
        let labels = [1.0, 0.0, 1.0];
        check(vec![rand_m(1, 3, 10)], move |_, p| {
            p[0].sigmoid().bce(&labels)
        });
        let tape = Tape::new();
        let p = tape.leaf(Matrix::row_vector(&[0.5]));
        let loss = p.bce(&[1.0]).unwrap();
        assert!((loss.scalar() - 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn gather_skips_padding_row() {
        let tape = Tape::new();
        let table = tape.leaf(rand_m(4, 2, 11));
        let out = table.gather(&[0, 2, 0, 2]).unwrap().sum();
        let g = tape.backward(out).unwrap().wrt(table);
        assert_eq!(g.row(0), &[0.0, 0.0]);
        assert_eq!(g.row(1), &[0.0, 0.0]);
        assert_eq!(g.row(2), &[2.0, 2.0]);
    }

    #[test]
    fn backward_requires_scalar() {
        let tape = Tape::new();
        let a = tape.leaf(Matrix::zeros(2, 2));
        assert!(tape.backward(a).is_err());
    }

    #[test]
    fn unused_leaf_gets_zero_gradient() {
        let tape = Tape::new();
        let a = tape.leaf(Matrix::filled(1, 2, 3.0));
        let b = tape.leaf(Matrix::filled(2, 2, 1.0));
        let g = tape.backward(a.sum()).unwrap();
        assert_eq!(g.wrt(b), Matrix::zeros(2, 2));
        assert_eq!(g.wrt(a), Matrix::filled(1, 2, 1.0));
    }
}
