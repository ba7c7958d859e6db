//! Item-level interaction: self-attention over the history block and a
//! merged cross-attention whose key/value pool is the projected history
//! followed by the projected candidate block.
//!
//! There is no positional encoding, residual path or normalization, so
//! both layers are permutation-equivariant over their inputs.

use rand::Rng;

use crate::autograd::{hstack, vstack, Tape, Var};
use crate::dropout::Dropout;
use crate::error::{Error, Result};
use crate::params::{next_leaf, Parameters};
use crate::tensor::Matrix;

/// Projection weights for one block, stored `out × in`.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionParams {
    /// History self-attention, each `d_h × d`.
    pub w_q: Matrix,
    pub w_k: Matrix,
    pub w_v: Matrix,
    /// Merged cross-attention query and candidate-side key/value, `d_h × d`.
    pub w_q_cross: Matrix,
    pub w_k_items: Matrix,
    pub w_v_items: Matrix,
    /// History-side key/value of the merged layer, `d_h × d_h`.
    pub w_k_hist: Matrix,
    pub w_v_hist: Matrix,
}

pub struct AttentionVars<'t> {
    pub w_q: Var<'t>,
    pub w_k: Var<'t>,
    pub w_v: Var<'t>,
    pub w_q_cross: Var<'t>,
    pub w_k_items: Var<'t>,
    pub w_v_items: Var<'t>,
    pub w_k_hist: Var<'t>,
    pub w_v_hist: Var<'t>,
}

impl AttentionParams {
    pub fn init<R: Rng + ?Sized>(d: usize, d_h: usize, rng: &mut R) -> Self {
        AttentionParams {
            w_q: Matrix::glorot(d_h, d, rng),
            w_k: Matrix::glorot(d_h, d, rng),
            w_v: Matrix::glorot(d_h, d, rng),
            w_q_cross: Matrix::glorot(d_h, d, rng),
            w_k_items: Matrix::glorot(d_h, d, rng),
            w_v_items: Matrix::glorot(d_h, d, rng),
            w_k_hist: Matrix::glorot(d_h, d_h, rng),
            w_v_hist: Matrix::glorot(d_h, d_h, rng),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.w_q.cols()
    }

    pub fn hidden_dim(&self) -> usize {
        self.w_q.rows()
    }

    fn check(&self) -> Result<()> {
        let (d_h, d) = self.w_q.shape();
        for (name, m) in self.named() {
            let expected = if name.ends_with("hist") {
                (d_h, d_h)
            } else {
                (d_h, d)
            };
            if m.shape() != expected {
                return Err(Error::invalid(format!(
                    "attention weight `{name}` has shape {:?}, expected {expected:?}",
                    m.shape()
                )));
            }
        }
        Ok(())
    }
}

impl Parameters for AttentionParams {
    type Vars<'t> = AttentionVars<'t>;

    fn named(&self) -> Vec<(String, &Matrix)> {
        vec![
            ("w_q".into(), &self.w_q),
            ("w_k".into(), &self.w_k),
            ("w_v".into(), &self.w_v),
            ("w_q_cross".into(), &self.w_q_cross),
            ("w_k_items".into(), &self.w_k_items),
            ("w_v_items".into(), &self.w_v_items),
            ("w_k_hist".into(), &self.w_k_hist),
            ("w_v_hist".into(), &self.w_v_hist),
        ]
    }

    fn named_mut(&mut self) -> Vec<(String, &mut Matrix)> {
        vec![
            ("w_q".into(), &mut self.w_q),
            ("w_k".into(), &mut self.w_k),
            ("w_v".into(), &mut self.w_v),
            ("w_q_cross".into(), &mut self.w_q_cross),
            ("w_k_items".into(), &mut self.w_k_items),
            ("w_v_items".into(), &mut self.w_v_items),
            ("w_k_hist".into(), &mut self.w_k_hist),
            ("w_v_hist".into(), &mut self.w_v_hist),
        ]
    }

    fn vars_from<'t>(&self, it: &mut dyn Iterator<Item = Var<'t>>) -> AttentionVars<'t> {
        AttentionVars {
            w_q: next_leaf(it),
            w_k: next_leaf(it),
            w_v: next_leaf(it),
            w_q_cross: next_leaf(it),
            w_k_items: next_leaf(it),
            w_v_items: next_leaf(it),
            w_k_hist: next_leaf(it),
            w_v_hist: next_leaf(it),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockStack {
    pub heads: usize,
    pub blocks: Vec<AttentionParams>,
}

impl BlockStack {
    pub fn init<R: Rng + ?Sized>(
        blocks: usize,
        heads: usize,
        d: usize,
        d_h: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let stack = BlockStack {
            heads,
            blocks: (0..blocks)
                .map(|_| AttentionParams::init(d, d_h, rng))
                .collect(),
        };
        stack.validate()?;
        Ok(stack)
    }

    pub fn depth(&self) -> usize {
        self.blocks.len()
    }

    pub fn validate(&self) -> Result<()> {
        let first = self
            .blocks
            .first()
            .ok_or_else(|| Error::invalid("block stack needs at least one block"))?;
        if self.heads == 0 {
            return Err(Error::invalid("head count must be at least 1"));
        }
        let (d, d_h) = (first.input_dim(), first.hidden_dim());
        if d_h % self.heads != 0 {
            return Err(Error::invalid(format!(
                "hidden width {d_h} is not divisible by {} heads",
                self.heads
            )));
        }
        if self.blocks.len() > 1 && d != d_h {
            return Err(Error::invalid(format!(
                "stacking {} blocks needs d == d_h, got d={d}, d_h={d_h}",
                self.blocks.len()
            )));
        }
        for b in &self.blocks {
            b.check()?;
            if b.input_dim() != d || b.hidden_dim() != d_h {
                return Err(Error::invalid("blocks disagree on widths"));
            }
        }
        Ok(())
    }
}

impl Parameters for BlockStack {
    type Vars<'t> = Vec<AttentionVars<'t>>;

    fn named(&self) -> Vec<(String, &Matrix)> {
        self.blocks
            .iter()
            .enumerate()
            .flat_map(|(i, b)| {
                b.named()
                    .into_iter()
                    .map(move |(n, m)| (format!("block{i}.{n}"), m))
            })
            .collect()
    }

    fn named_mut(&mut self) -> Vec<(String, &mut Matrix)> {
        self.blocks
            .iter_mut()
            .enumerate()
            .flat_map(|(i, b)| {
                b.named_mut()
                    .into_iter()
                    .map(move |(n, m)| (format!("block{i}.{n}"), m))
            })
            .collect()
    }

    fn vars_from<'t>(&self, it: &mut dyn Iterator<Item = Var<'t>>) -> Vec<AttentionVars<'t>> {
        self.blocks.iter().map(|b| b.vars_from(it)).collect()
    }
}

/// Output of one attention layer plus the per-head weight matrices.
pub struct Attended<'t> {
    pub output: Var<'t>,
    pub weights: Vec<Var<'t>>,
}

/// Scaled dot-product attention split across `heads` column groups.
/// Each head uses `1/√(d_h / heads)` scaling; outputs are concatenated.
pub fn attend<'t>(
    q: Var<'t>,
    k: Var<'t>,
    v: Var<'t>,
    heads: usize,
    dropout: &mut Dropout<'_>,
) -> Result<Attended<'t>> {
    let d_h = q.cols();
    if k.cols() != d_h || v.cols() != d_h || k.rows() != v.rows() {
        return Err(Error::Shape {
            op: "attend",
            left: k.shape(),
            right: v.shape(),
        });
    }
    if heads == 0 || !d_h.is_multiple_of(heads) {
        return Err(Error::invalid(format!(
            "{heads} heads do not divide width {d_h}"
        )));
    }
    let width = d_h / heads;
    let scale = 1.0 / (width as f64).sqrt();
    let mut outputs = Vec::with_capacity(heads);
    let mut weights = Vec::with_capacity(heads);
    for h in 0..heads {
        let (q_h, k_h, v_h) = if heads == 1 {
            (q, k, v)
        } else {
            let cols = h * width..(h + 1) * width;
            (
                q.slice_cols(cols.start, cols.end)?,
                k.slice_cols(cols.start, cols.end)?,
                v.slice_cols(cols.start, cols.end)?,
            )
        };
        let w = q_h.matmul_t(k_h)?.scale(scale).softmax_rows()?;
        weights.push(w);
        let w = dropout.apply(w)?;
        outputs.push(w.matmul(v_h)?);
    }
    let output = if heads == 1 {
        outputs[0]
    } else {
        hstack(&outputs)?
    };
    Ok(Attended { output, weights })
}

/// History self-attention over `Z_B` (`n × d`), giving `H_B` (`n × d_h`).
pub fn history_self_attention_var<'t>(
    z_b: Var<'t>,
    params: &AttentionVars<'t>,
    heads: usize,
    dropout: &mut Dropout<'_>,
) -> Result<Attended<'t>> {
    let v = z_b.matmul_t(params.w_v)?;
    if z_b.rows() == 0 {
        return Ok(Attended {
            output: v,
            weights: Vec::new(),
        });
    }
    let q = z_b.matmul_t(params.w_q)?;
    let k = z_b.matmul_t(params.w_k)?;
    attend(q, k, v, heads, dropout)
}

/// Merged cross-attention: every row of `Z_S` queries the pool
/// `[H_B W_k1ᵀ ; Z_S W_k2ᵀ]` of `n + m + 1` keys in a single softmax.
pub fn merged_cross_attention_var<'t>(
    z_s: Var<'t>,
    h_b: Var<'t>,
    params: &AttentionVars<'t>,
    heads: usize,
    dropout: &mut Dropout<'_>,
) -> Result<Attended<'t>> {
    let q = z_s.matmul_t(params.w_q_cross)?;
    let k_items = z_s.matmul_t(params.w_k_items)?;
    let v_items = z_s.matmul_t(params.w_v_items)?;
    let (k, v) = if h_b.rows() == 0 {
        (k_items, v_items)
    } else {
        let k_hist = h_b.matmul_t(params.w_k_hist)?;
        let v_hist = h_b.matmul_t(params.w_v_hist)?;
        (vstack(&[k_hist, k_items])?, vstack(&[v_hist, v_items])?)
    };
    attend(q, k, v, heads, dropout)
}

/// Runs every block; block `i + 1` consumes `(H_B, H_S)` of block `i`.
pub fn encode_var<'t>(
    mut z_b: Var<'t>,
    mut z_s: Var<'t>,
    blocks: &[AttentionVars<'t>],
    heads: usize,
    dropout: &mut Dropout<'_>,
) -> Result<Var<'t>> {
    if blocks.is_empty() {
        return Err(Error::invalid("block stack needs at least one block"));
    }
    for block in blocks {
        let h_b = history_self_attention_var(z_b, block, heads, dropout)?.output;
        let h_s = merged_cross_attention_var(z_s, h_b, block, heads, dropout)?.output;
        z_b = h_b;
        z_s = h_s;
    }
    Ok(z_s)
}

fn check_input(z: &Matrix, params: &AttentionParams, what: &'static str) -> Result<()> {
    params.check()?;
    if z.cols() != params.input_dim() {
        return Err(Error::Shape {
            op: what,
            left: z.shape(),
            right: params.w_q.shape(),
        });
    }
    Ok(())
}

/// Plain (untaped) history self-attention.
pub fn history_self_attention(
    z_b: &Matrix,
    params: &AttentionParams,
    heads: usize,
) -> Result<Matrix> {
    check_input(z_b, params, "history_self_attention")?;
    let tape = Tape::new();
    let (_, vars) = params.bind(&tape);
    let z = tape.constant(z_b.clone());
    let out = history_self_attention_var(z, &vars, heads, &mut Dropout::eval())?;
    Ok((*out.output.value()).clone())
}

/// Plain merged cross-attention; also returns the per-head weights
/// (`(m + 1) × (n + m + 1)` each).
pub fn merged_cross_attention_with_weights(
    z_s: &Matrix,
    h_b: &Matrix,
    params: &AttentionParams,
    heads: usize,
) -> Result<(Matrix, Vec<Matrix>)> {
    check_input(z_s, params, "merged_cross_attention")?;
    if z_s.rows() < 2 {
        return Err(Error::invalid(
            "candidate block needs at least one item plus the list token",
        ));
    }
    if h_b.cols() != params.hidden_dim() {
        return Err(Error::Shape {
            op: "merged_cross_attention",
            left: h_b.shape(),
            right: params.w_k_hist.shape(),
        });
    }
    let tape = Tape::new();
    let (_, vars) = params.bind(&tape);
    let zs = tape.constant(z_s.clone());
    let hb = tape.constant(h_b.clone());
    let out = merged_cross_attention_var(zs, hb, &vars, heads, &mut Dropout::eval())?;
    Ok((
        (*out.output.value()).clone(),
        out.weights.iter().map(|w| (*w.value()).clone()).collect(),
    ))
}

pub fn merged_cross_attention(
    z_s: &Matrix,
    h_b: &Matrix,
    params: &AttentionParams,
    heads: usize,
) -> Result<Matrix> {
    merged_cross_attention_with_weights(z_s, h_b, params, heads).map(|(out, _)| out)
}

/// Plain evaluation-mode encoder.
pub fn encode(z_b: &Matrix, z_s: &Matrix, stack: &BlockStack) -> Result<Matrix> {
    stack.validate()?;
    check_input(z_s, &stack.blocks[0], "encode")?;
    check_input(z_b, &stack.blocks[0], "encode")?;
    let tape = Tape::new();
    let (_, vars) = stack.bind(&tape);
    let out = encode_var(
        tape.constant(z_b.clone()),
        tape.constant(z_s.clone()),
        &vars,
        stack.heads,
        &mut Dropout::eval(),
    )?;
    Ok((*out.value()).clone())
}
