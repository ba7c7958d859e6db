//! Feature-level interaction: a shared two-layer MLP over user‖item rows,
//! followed by the learnable list token appended after the candidates.

use rand::Rng;

use crate::autograd::{vstack, Tape, Var};
use crate::dropout::Dropout;
use crate::embedding::FeatureSchema;
use crate::error::{Error, Result};
use crate::params::{next_leaf, Parameters};
use crate::tensor::Matrix;

#[derive(Debug, Clone, PartialEq)]
pub struct FusionParams {
    /// `h × (d_u + d_i)`
    pub w1: Matrix,
    /// `1 × h`
    pub b1: Matrix,
    /// `d × h`
    pub w2: Matrix,
    /// `1 × d`
    pub b2: Matrix,
    /// `1 × d`, appended as the last row of the candidate block.
    pub cls: Matrix,
}

pub struct FusionVars<'t> {
    pub w1: Var<'t>,
    pub b1: Var<'t>,
    pub w2: Var<'t>,
    pub b2: Var<'t>,
    pub cls: Var<'t>,
}

impl FusionParams {
    pub fn init<R: Rng + ?Sized>(input: usize, hidden: usize, out: usize, rng: &mut R) -> Self {
        FusionParams {
            w1: Matrix::glorot(hidden, input, rng),
            b1: Matrix::zeros(1, hidden),
            w2: Matrix::glorot(out, hidden, rng),
            b2: Matrix::zeros(1, out),
            cls: Matrix::uniform(1, out, 0.1, rng),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.w1.cols()
    }

    pub fn hidden_dim(&self) -> usize {
        self.w1.rows()
    }

    pub fn output_dim(&self) -> usize {
        self.w2.rows()
    }

    fn check(&self) -> Result<()> {
        let (h, input) = self.w1.shape();
        let d = self.w2.rows();
        let ok = input > 0
            && self.b1.shape() == (1, h)
            && self.w2.cols() == h
            && self.b2.shape() == (1, d)
            && self.cls.shape() == (1, d);
        if ok {
            Ok(())
        } else {
            Err(Error::invalid(format!(
                "inconsistent fusion parameters: w1 {:?}, b1 {:?}, w2 {:?}, b2 {:?}, cls {:?}",
                self.w1.shape(),
                self.b1.shape(),
                self.w2.shape(),
                self.b2.shape(),
                self.cls.shape()
            )))
        }
    }
}

impl Parameters for FusionParams {
    type Vars<'t> = FusionVars<'t>;

    fn named(&self) -> Vec<(String, &Matrix)> {
        vec![
            ("w1".into(), &self.w1),
            ("b1".into(), &self.b1),
            ("w2".into(), &self.w2),
            ("b2".into(), &self.b2),
            ("cls".into(), &self.cls),
        ]
    }

    fn named_mut(&mut self) -> Vec<(String, &mut Matrix)> {
        vec![
            ("w1".into(), &mut self.w1),
            ("b1".into(), &mut self.b1),
            ("w2".into(), &mut self.w2),
            ("b2".into(), &mut self.b2),
            ("cls".into(), &mut self.cls),
        ]
    }

    fn vars_from<'t>(&self, it: &mut dyn Iterator<Item = Var<'t>>) -> FusionVars<'t> {
        FusionVars {
            w1: next_leaf(it),
            b1: next_leaf(it),
            w2: next_leaf(it),
            b2: next_leaf(it),
            cls: next_leaf(it),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FusedLists {
    /// `n × d`
    pub z_b: Matrix,
    /// `(m + 1) × d`, list token last.
    pub z_s: Matrix,
}

/// Builds the `(n + m) × (d_u + d_i)` input: row `j` is `f_u ‖ f_i(j)`,
/// history rows first, then candidates, order preserved.
pub fn build_x(
    schema: &FeatureSchema,
    user: &[f64],
    history: &[Vec<f64>],
    candidates: &[Vec<f64>],
) -> Result<Matrix> {
    let (du, di) = (schema.user_dim(), schema.item_dim());
    if user.len() != du {
        return Err(Error::invalid(format!(
            "user vector has length {}, schema says {du}",
            user.len()
        )));
    }
    if candidates.is_empty() {
        return Err(Error::invalid("candidate list is empty"));
    }
    let rows = history.len() + candidates.len();
    let mut x = Matrix::zeros(rows, du + di);
    for (r, item) in history.iter().chain(candidates).enumerate() {
        if item.len() != di {
            return Err(Error::invalid(format!(
                "item vector {r} has length {}, schema says {di}",
                item.len()
            )));
        }
        let row = x.row_mut(r);
        row[..du].copy_from_slice(user);
        row[du..].copy_from_slice(item);
    }
    Ok(x)
}

/// Taped form of [`fuse`]; returns `(Z_B, Z_S)`.
pub fn fuse_var<'t>(
    x: Var<'t>,
    n: usize,
    params: &FusionVars<'t>,
    dropout: &mut Dropout<'_>,
) -> Result<(Var<'t>, Var<'t>)> {
    let rows = x.rows();
    if n >= rows {
        return Err(Error::invalid(format!(
            "history length {n} leaves no candidates in {rows} rows"
        )));
    }
    let hidden = x.affine(params.w1, params.b1)?.relu();
    let hidden = dropout.apply(hidden)?;
    let z = hidden.affine(params.w2, params.b2)?;
    let z_b = z.slice_rows(0, n)?;
    let z_s = vstack(&[z.slice_rows(n, rows)?, params.cls])?;
    Ok((z_b, z_s))
}

/// `Z = W2 relu(W1 x + b1) + b2` per row, split into history and
/// candidate blocks with the list token appended to the latter.
pub fn fuse(x: &Matrix, n: usize, params: &FusionParams) -> Result<FusedLists> {
    params.check()?;
    if x.cols() != params.input_dim() {
        return Err(Error::Shape {
            op: "fuse",
            left: x.shape(),
            right: params.w1.shape(),
        });
    }
    let tape = Tape::new();
    let xv = tape.constant(x.clone());
    let (_, vars) = params.bind(&tape);
    let (z_b, z_s) = fuse_var(xv, n, &vars, &mut Dropout::eval())?;
    Ok(FusedLists {
        z_b: (*z_b.value()).clone(),
        z_s: (*z_s.value()).clone(),
    })
}
