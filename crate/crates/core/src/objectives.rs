//! Prediction heads and the item + list multi-task loss.
//!
//! The item head scores the `m` candidate rows of `H_S`; the list head
//! reads only the final (list token) row. Both are one affine layer
//! followed by a sigmoid, and both losses are summed binary cross-entropy.

use rand::Rng;

use crate::autograd::{bce_value, Tape, Var};
use crate::error::{Error, Result};
use crate::params::{next_leaf, Parameters};
use crate::tensor::{sigmoid_scalar, Matrix};

pub const DEFAULT_ALPHA: f64 = 1.0;

#[derive(Debug, Clone, PartialEq)]
pub struct HeadParams {
    /// `1 × d_h`
    pub w: Matrix,
    /// `1 × 1`
    pub b: Matrix,
}

pub struct HeadVars<'t> {
    pub w: Var<'t>,
    pub b: Var<'t>,
}

impl HeadParams {
    pub fn init<R: Rng + ?Sized>(d_h: usize, rng: &mut R) -> Self {
        HeadParams {
            w: Matrix::glorot(1, d_h, rng),
            b: Matrix::zeros(1, 1),
        }
    }

    pub fn new(w: &[f64], b: f64) -> Self {
        HeadParams {
            w: Matrix::row_vector(w),
            b: Matrix::filled(1, 1, b),
        }
    }

    fn logit(&self, row: &[f64]) -> f64 {
        crate::tensor::dot(self.w.data(), row) + self.b.get(0, 0)
    }
}

impl Parameters for HeadParams {
    type Vars<'t> = HeadVars<'t>;

    fn named(&self) -> Vec<(String, &Matrix)> {
        vec![("w".into(), &self.w), ("b".into(), &self.b)]
    }

    fn named_mut(&mut self) -> Vec<(String, &mut Matrix)> {
        vec![("w".into(), &mut self.w), ("b".into(), &mut self.b)]
    }

    fn vars_from<'t>(&self, it: &mut dyn Iterator<Item = Var<'t>>) -> HeadVars<'t> {
        HeadVars {
            w: next_leaf(it),
            b: next_leaf(it),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub alpha: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            alpha: DEFAULT_ALPHA,
        }
    }
}

impl LossWeights {
    pub fn new(alpha: f64) -> Result<Self> {
        if !alpha.is_finite() || alpha < 0.0 {
            return Err(Error::invalid(format!(
                "alpha must be finite and >= 0, got {alpha}"
            )));
        }
        Ok(LossWeights { alpha })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossParts {
    pub total: f64,
    pub item: f64,
    pub list: f64,
}

/// `1` when the list holds at least one click.
pub fn list_label(labels: &[f64]) -> f64 {
    if labels.iter().any(|&y| y > 0.5) {
        1.0
    } else {
        0.0
    }
}

fn check_head(h_s: &Matrix, head: &HeadParams) -> Result<()> {
    if h_s.rows() < 2
        || h_s.cols() != head.w.cols()
        || head.w.rows() != 1
        || head.b.shape() != (1, 1)
    {
        return Err(Error::Shape {
            op: "head",
            left: h_s.shape(),
            right: head.w.shape(),
        });
    }
    Ok(())
}

/// Click probabilities for the candidate rows (all but the last) of `H_S`.
pub fn item_click_probs(h_s: &Matrix, head: &HeadParams) -> Result<Vec<f64>> {
    check_head(h_s, head)?;
    Ok((0..h_s.rows() - 1)
        .map(|r| sigmoid_scalar(head.logit(h_s.row(r))))
        .collect())
}

/// List-level click probability from the last (list token) row of `H_S`.
pub fn list_click_prob(h_s: &Matrix, head: &HeadParams) -> Result<f64> {
    check_head(h_s, head)?;
    Ok(sigmoid_scalar(head.logit(h_s.row(h_s.rows() - 1))))
}

fn check_labels(labels: &[f64]) -> Result<()> {
    match labels.iter().find(|&&y| y != 0.0 && y != 1.0) {
        Some(y) => Err(Error::invalid(format!("label {y} is not 0 or 1"))),
        None => Ok(()),
    }
}

/// `L = L_m + α·L_aux`, both terms negated summed binary cross-entropy.
pub fn multitask_loss(
    probs: &[f64],
    labels: &[f64],
    list_prob: f64,
    list_target: f64,
    weights: LossWeights,
) -> Result<LossParts> {
    if probs.len() != labels.len() {
        return Err(Error::Shape {
            op: "multitask_loss",
            left: (1, probs.len()),
            right: (1, labels.len()),
        });
    }
    check_labels(labels)?;
    check_labels(&[list_target])?;
    if list_target != list_label(labels) {
        return Err(Error::invalid(
            "list label must be 1 exactly when some item label is 1",
        ));
    }
    let item = bce_value(probs, labels);
    let list = bce_value(&[list_prob], &[list_target]);
    Ok(LossParts {
        total: item + weights.alpha * list,
        item,
        list,
    })
}

/// Taped heads: returns `(item probabilities m × 1, list probability 1 × 1)`.
pub fn heads_var<'t>(
    h_s: Var<'t>,
    item_head: &HeadVars<'t>,
    list_head: &HeadVars<'t>,
) -> Result<(Var<'t>, Var<'t>)> {
    let rows = h_s.rows();
    if rows < 2 {
        return Err(Error::invalid(
            "H_S needs at least one candidate row plus the list token",
        ));
    }
    let items = h_s
        .slice_rows(0, rows - 1)?
        .affine(item_head.w, item_head.b)?
        .sigmoid();
    let list = h_s
        .slice_rows(rows - 1, rows)?
        .affine(list_head.w, list_head.b)?
        .sigmoid();
    Ok((items, list))
}

/// Taped multi-task loss for one list; returns `(total, item, list)` nodes.
pub fn multitask_loss_var<'t>(
    item_probs: Var<'t>,
    list_prob: Var<'t>,
    labels: &[f64],
    weights: LossWeights,
) -> Result<(Var<'t>, Var<'t>, Var<'t>)> {
    check_labels(labels)?;
    let item = item_probs.bce(labels)?;
    let list = list_prob.bce(&[list_label(labels)])?;
    let total = if weights.alpha == 0.0 {
        item
    } else {
        item.add(list.scale(weights.alpha))?
    };
    Ok((total, item, list))
}

/// Convenience for tests: evaluate the taped loss on fixed probabilities.
pub fn multitask_loss_taped(
    probs: &[f64],
    labels: &[f64],
    list_prob: f64,
    weights: LossWeights,
) -> Result<f64> {
    let tape = Tape::new();
    let p = tape.constant(Matrix::new(probs.len(), 1, probs.to_vec())?);
    let q = tape.constant(Matrix::filled(1, 1, list_prob));
    Ok(multitask_loss_var(p, q, labels, weights)?.0.scalar())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn hs(rows: &[&[f64]]) -> Matrix {
        Matrix::from_rows(rows)
    }

    #[test]
    fn zero_head_gives_half() {
        let h = hs(&[&[1.0, 2.0], &[-3.0, 0.5], &[9.0, 9.0]]);
        let head = HeadParams::new(&[0.0, 0.0], 0.0);
        assert_eq!(item_click_probs(&h, &head).unwrap(), vec![0.5, 0.5]);
        assert_eq!(list_click_prob(&h, &head).unwrap(), 0.5);
    }

    #[test]
    fn saturation() {
        let h = hs(&[&[1.0], &[2.0]]);
        let head = HeadParams::new(&[0.0], 50.0);
        assert!(item_click_probs(&h, &head).unwrap()[0] >= 1.0 - 1e-20);
        assert!(list_click_prob(&h, &head).unwrap() >= 1.0 - 1e-20);
    }

    #[test]
    fn closed_form_three_quarters() {
        let ln3 = 3f64.ln();
        let h = hs(&[&[ln3, 0.0], &[0.0, ln3]]);
        let item = HeadParams::new(&[1.0, 0.0], 0.0);
        let list = HeadParams::new(&[0.0, 1.0], 0.0);
        assert!((item_click_probs(&h, &item).unwrap()[0] - 0.75).abs() < 1e-15);
        assert!((list_click_prob(&h, &list).unwrap() - 0.75).abs() < 1e-15);
    }

    #[test]
    fn head_excludes_list_row_and_keeps_order() {
        let h = hs(&[&[1.0], &[-1.0], &[100.0]]);
        let p = item_click_probs(&h, &HeadParams::new(&[1.0], 0.0)).unwrap();
        assert_eq!(p.len(), 2);
        assert!(p[0] > 0.5 && p[1] < 0.5);
    }

    #[test]
    fn loss_closed_form() {
        let l = multitask_loss(&[0.5], &[1.0], 0.5, 1.0, LossWeights::default()).unwrap();
        assert!((l.total - 2.0 * 2f64.ln()).abs() < 1e-12);
        let taped = multitask_loss_taped(&[0.5], &[1.0], 0.5, LossWeights::default()).unwrap();
        assert!((taped - l.total).abs() < 1e-15);
    }

    #[test]
    fn alpha_zero_is_item_loss() {
        let probs = [0.2, 0.7, 0.9];
        let labels = [0.0, 1.0, 0.0];
        let w = LossWeights::new(0.0).unwrap();
        let l = multitask_loss(&probs, &labels, 0.3, 1.0, w).unwrap();
        assert_eq!(l.total, l.item);
        assert_eq!(
            multitask_loss_taped(&probs, &labels, 0.3, w).unwrap(),
            l.item
        );
    }

    #[test]
    fn perfect_predictions_are_near_zero() {
        let l = multitask_loss(
            &[1.0, 0.0, 1.0],
            &[1.0, 0.0, 1.0],
            1.0,
            1.0,
            LossWeights::default(),
        )
        .unwrap();
        assert!(l.total < 1e-9 && l.total >= 0.0);
    }

    #[test]
    fn rejects_bad_labels() {
        let w = LossWeights::default();
        assert!(multitask_loss(&[0.5], &[0.5], 0.5, 1.0, w).is_err());
        assert!(multitask_loss(&[0.5], &[1.0], 0.5, 0.0, w).is_err());
        assert!(multitask_loss(&[0.5, 0.1], &[1.0], 0.5, 1.0, w).is_err());
        assert!(LossWeights::new(-1.0).is_err());
    }

    #[test]
    fn alpha_derivative_is_list_loss() {
        let probs = [0.3, 0.6];
        let labels = [0.0, 1.0];
        let at = |a: f64| {
            multitask_loss(&probs, &labels, 0.4, 1.0, LossWeights::new(a).unwrap())
                .unwrap()
                .total
        };
        let h = 1e-4;
        let fd = (at(1.0 + h) - at(1.0 - h)) / (2.0 * h);
        let list = multitask_loss(&probs, &labels, 0.4, 1.0, LossWeights::default())
            .unwrap()
            .list;
        assert!((fd - list).abs() < 1e-9);
    }

    #[test]
    fn negatives_vanish_as_probs_shrink() {
        let w = LossWeights::default();
        let mut prev = f64::INFINITY;
        for eps in [1e-1, 1e-3, 1e-6, 1e-9] {
            let l = multitask_loss(&[eps; 4], &[0.0; 4], eps, 0.0, w)
                .unwrap()
                .item;
            assert!(l < prev);
            prev = l;
        }
        assert!(prev < 1e-8);
    }
}
