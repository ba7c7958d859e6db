//! Pointwise initial ranker: an MLP over `f_u ‖ f_i` scoring each
//! candidate in isolation. It orders the lists the re-ranker consumes and
//! is the context-free baseline.

use rand::Rng;

use crate::autograd::{hstack, Tape, Var};
use crate::datasim::{Scorer, SessionRecord};
use crate::dropout::Dropout;
use crate::embedding::{embed_rows, EmbeddingTables, FeatureSchema, Side};
use crate::error::{Error, Result};
use crate::model::{Prediction, RankModel, SessionLoss};
use crate::objectives::LossWeights;
use crate::params::{next_leaf, Parameters};
use crate::tensor::Matrix;

#[derive(Debug, Clone, PartialEq)]
pub struct RankerConfig {
    pub embed_dim: usize,
    pub hidden: usize,
}

impl Default for RankerConfig {
    fn default() -> Self {
        RankerConfig {
            embed_dim: 8,
            hidden: 32,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankerParams {
    pub user_tables: EmbeddingTables,
    pub item_tables: EmbeddingTables,
    /// `h × (d_u + d_i)`
    pub w1: Matrix,
    pub b1: Matrix,
    /// `1 × h`
    pub w2: Matrix,
    pub b2: Matrix,
    user_names: Vec<String>,
    item_names: Vec<String>,
}

pub struct RankerVars<'t> {
    user_tables: Vec<Var<'t>>,
    item_tables: Vec<Var<'t>>,
    w1: Var<'t>,
    b1: Var<'t>,
    w2: Var<'t>,
    b2: Var<'t>,
}

impl Parameters for RankerParams {
    type Vars<'t> = RankerVars<'t>;

    fn named(&self) -> Vec<(String, &Matrix)> {
        let mut out = Vec::new();
        for (n, t) in self.user_names.iter().zip(&self.user_tables.tables) {
            out.push((format!("embed.user.{n}"), t));
        }
        for (n, t) in self.item_names.iter().zip(&self.item_tables.tables) {
            out.push((format!("embed.item.{n}"), t));
        }
        out.push(("mlp.w1".into(), &self.w1));
        out.push(("mlp.b1".into(), &self.b1));
        out.push(("mlp.w2".into(), &self.w2));
        out.push(("mlp.b2".into(), &self.b2));
        out
    }

    fn named_mut(&mut self) -> Vec<(String, &mut Matrix)> {
        let mut out = Vec::new();
        for (n, t) in self.user_names.iter().zip(&mut self.user_tables.tables) {
            out.push((format!("embed.user.{n}"), t));
        }
        for (n, t) in self.item_names.iter().zip(&mut self.item_tables.tables) {
            out.push((format!("embed.item.{n}"), t));
        }
        out.push(("mlp.w1".into(), &mut self.w1));
        out.push(("mlp.b1".into(), &mut self.b1));
        out.push(("mlp.w2".into(), &mut self.w2));
        out.push(("mlp.b2".into(), &mut self.b2));
        out
    }

    fn vars_from<'t>(&self, it: &mut dyn Iterator<Item = Var<'t>>) -> RankerVars<'t> {
        RankerVars {
            user_tables: self
                .user_tables
                .tables
                .iter()
                .map(|_| next_leaf(it))
                .collect(),
            item_tables: self
                .item_tables
                .tables
                .iter()
                .map(|_| next_leaf(it))
                .collect(),
            w1: next_leaf(it),
            b1: next_leaf(it),
            w2: next_leaf(it),
            b2: next_leaf(it),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PointwiseRanker {
    pub schema: FeatureSchema,
    pub config: RankerConfig,
    pub params: RankerParams,
}

impl PointwiseRanker {
    pub fn init<R: Rng + ?Sized>(
        schema: &FeatureSchema,
        config: RankerConfig,
        rng: &mut R,
    ) -> Result<Self> {
        if config.embed_dim == 0 || config.hidden == 0 {
            return Err(Error::invalid("ranker widths must be at least 1"));
        }
        let schema = schema.with_embed_dim(config.embed_dim);
        schema.validate()?;
        let input = schema.user_dim() + schema.item_dim();
        let params = RankerParams {
            user_tables: EmbeddingTables::init(&schema.user_fields, rng),
            item_tables: EmbeddingTables::init(&schema.item_fields, rng),
            w1: Matrix::glorot(config.hidden, input, rng),
            b1: Matrix::zeros(1, config.hidden),
            w2: Matrix::glorot(1, config.hidden, rng),
            b2: Matrix::zeros(1, 1),
            user_names: schema.user_fields.iter().map(|f| f.name.clone()).collect(),
            item_names: schema.item_fields.iter().map(|f| f.name.clone()).collect(),
        };
        Ok(PointwiseRanker {
            schema,
            config,
            params,
        })
    }

    /// Click probabilities, `m × 1`.
    fn forward_var<'t>(
        &self,
        vars: &RankerVars<'t>,
        session: &SessionRecord,
        dropout: &mut Dropout<'_>,
    ) -> Result<Var<'t>> {
        if session.candidates.is_empty() {
            return Err(Error::invalid("session has no candidates"));
        }
        let records: Vec<&[usize]> = session
            .candidates
            .iter()
            .map(|c| c.item.as_slice())
            .collect();
        let items = embed_rows(self.schema.fields(Side::Item), &vars.item_tables, &records)?;
        let x = if self.schema.user_fields.is_empty() {
            items
        } else {
            self.schema.check_values(Side::User, &session.user)?;
            let user = embed_rows(
                self.schema.fields(Side::User),
                &vars.user_tables,
                &[session.user.as_slice()],
            )?;
            hstack(&[user.repeat_row(records.len())?, items])?
        };
        let hidden = dropout.apply(x.affine(vars.w1, vars.b1)?.relu())?;
        Ok(hidden.affine(vars.w2, vars.b2)?.sigmoid())
    }
}

impl RankModel for PointwiseRanker {
    type Params = RankerParams;

    fn params(&self) -> &RankerParams {
        &self.params
    }

    fn params_mut(&mut self) -> &mut RankerParams {
        &mut self.params
    }

    /// Item-level BCE only; `weights` is ignored (no list head).
    fn session_loss<'t>(
        &self,
        vars: &<RankerParams as Parameters>::Vars<'t>,
        session: &SessionRecord,
        _weights: LossWeights,
        dropout: &mut Dropout<'_>,
    ) -> Result<SessionLoss<'t>> {
        let probs = self.forward_var(vars, session, dropout)?;
        let item = probs.bce(&session.labels())?;
        Ok(SessionLoss {
            total: item,
            item,
            list: None,
        })
    }

    fn predict_many(&self, sessions: &[SessionRecord]) -> Result<Vec<Prediction>> {
        let mut out = Vec::with_capacity(sessions.len());
        for chunk in sessions.chunks(256) {
            let tape = Tape::new();
            let (_, vars) = self.params.bind(&tape);
            for s in chunk {
                let p = self.forward_var(&vars, s, &mut Dropout::eval())?;
                out.push(Prediction {
                    item_probs: p.value().data().to_vec(),
                    list_prob: None,
                });
            }
        }
        Ok(out)
    }
}

impl Scorer for PointwiseRanker {
    fn score(&self, session: &SessionRecord) -> Result<Vec<f64>> {
        Ok(self
            .predict_many(std::slice::from_ref(session))?
            .remove(0)
            .item_probs)
    }
}
