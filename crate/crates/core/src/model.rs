//! The full re-ranker: embeddings, fusion MLP, attention blocks and heads.

use rand::Rng;

use crate::attention::{encode_var, AttentionVars, BlockStack};
use crate::autograd::{hstack, Tape, Var};
use crate::datasim::SessionRecord;
use crate::dropout::Dropout;
use crate::embedding::{embed_rows, EmbeddingTables, FeatureSchema, Side};
use crate::error::{Error, Result};
use crate::fusion::{fuse_var, FusionParams, FusionVars};
use crate::objectives::{heads_var, multitask_loss_var, HeadParams, HeadVars, LossWeights};
use crate::params::{next_leaf, Parameters};
use crate::tensor::Matrix;

/// Architecture hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    /// Width of every field embedding.
    pub embed_dim: usize,
    /// Fusion MLP hidden width `h`.
    pub hidden: usize,
    /// Fusion output width `d`.
    pub d: usize,
    /// Attention width `d_h`.
    pub d_h: usize,
    pub blocks: usize,
    pub heads: usize,
    /// History rows fed to the model; shorter histories are left-padded.
    /// Zero disables the history path.
    pub history_len: usize,
    /// Half-width of the uniform embedding init. At 0.01 attention logits
    /// start near 1e-4 and the history-match path barely trains.
    pub embed_init: f64,
}

pub const DEFAULT_EMBED_INIT: f64 = 0.5;

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            embed_dim: 8,
            hidden: 32,
            d: 32,
            d_h: 32,
            blocks: 1,
            heads: 1,
            history_len: 16,
            embed_init: DEFAULT_EMBED_INIT,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("embed_dim", self.embed_dim),
            ("hidden", self.hidden),
            ("d", self.d),
            ("d_h", self.d_h),
            ("blocks", self.blocks),
            ("heads", self.heads),
        ] {
            if v == 0 {
                return Err(Error::invalid(format!("{name} must be at least 1")));
            }
        }
        if !(self.embed_init > 0.0 && self.embed_init.is_finite()) {
            return Err(Error::invalid("embed_init must be positive"));
        }
        if !self.d_h.is_multiple_of(self.heads) {
            return Err(Error::invalid(format!(
                "d_h={} is not divisible by {} heads",
                self.d_h, self.heads
            )));
        }
        if self.blocks > 1 && self.d != self.d_h {
            return Err(Error::invalid(format!(
                "{} blocks need d == d_h, got d={}, d_h={}",
                self.blocks, self.d, self.d_h
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PearParams {
    pub user_tables: EmbeddingTables,
    pub item_tables: EmbeddingTables,
    pub fusion: FusionParams,
    pub stack: BlockStack,
    pub item_head: HeadParams,
    pub list_head: HeadParams,
    /// Table names, in schema order, for checkpoint keys.
    user_names: Vec<String>,
    item_names: Vec<String>,
}

pub struct PearVars<'t> {
    pub user_tables: Vec<Var<'t>>,
    pub item_tables: Vec<Var<'t>>,
    pub fusion: FusionVars<'t>,
    pub blocks: Vec<AttentionVars<'t>>,
    pub item_head: HeadVars<'t>,
    pub list_head: HeadVars<'t>,
}

impl PearParams {
    pub fn init<R: Rng + ?Sized>(
        schema: &FeatureSchema,
        config: &ModelConfig,
        rng: &mut R,
    ) -> Result<Self> {
        config.validate()?;
        let input = schema.user_dim() + schema.item_dim();
        Ok(PearParams {
            user_tables: EmbeddingTables::init_scaled(&schema.user_fields, config.embed_init, rng),
            item_tables: EmbeddingTables::init_scaled(&schema.item_fields, config.embed_init, rng),
            fusion: FusionParams::init(input, config.hidden, config.d, rng),
            stack: BlockStack::init(config.blocks, config.heads, config.d, config.d_h, rng)?,
            item_head: HeadParams::init(config.d_h, rng),
            list_head: HeadParams::init(config.d_h, rng),
            user_names: schema.user_fields.iter().map(|f| f.name.clone()).collect(),
            item_names: schema.item_fields.iter().map(|f| f.name.clone()).collect(),
        })
    }
}

impl Parameters for PearParams {
    type Vars<'t> = PearVars<'t>;

    fn named(&self) -> Vec<(String, &Matrix)> {
        let mut out = Vec::new();
        for (n, t) in self.user_names.iter().zip(&self.user_tables.tables) {
            out.push((format!("embed.user.{n}"), t));
        }
        for (n, t) in self.item_names.iter().zip(&self.item_tables.tables) {
            out.push((format!("embed.item.{n}"), t));
        }
        let groups: [(&str, Vec<(String, &Matrix)>); 4] = [
            ("fusion", self.fusion.named()),
            ("attn", self.stack.named()),
            ("item_head", self.item_head.named()),
            ("list_head", self.list_head.named()),
        ];
        for (prefix, named) in groups {
            out.extend(named.into_iter().map(|(n, m)| (format!("{prefix}.{n}"), m)));
        }
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
        let groups: [(&str, Vec<(String, &mut Matrix)>); 4] = [
            ("fusion", self.fusion.named_mut()),
            ("attn", self.stack.named_mut()),
            ("item_head", self.item_head.named_mut()),
            ("list_head", self.list_head.named_mut()),
        ];
        for (prefix, named) in groups {
            out.extend(named.into_iter().map(|(n, m)| (format!("{prefix}.{n}"), m)));
        }
        out
    }

    fn vars_from<'t>(&self, it: &mut dyn Iterator<Item = Var<'t>>) -> PearVars<'t> {
        PearVars {
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
            fusion: self.fusion.vars_from(it),
            blocks: self.stack.vars_from(it),
            item_head: self.item_head.vars_from(it),
            list_head: self.list_head.vars_from(it),
        }
    }
}

/// Eval-mode outputs for one session, in candidate order.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub item_probs: Vec<f64>,
    /// Probability that the list holds at least one click, when the model
    /// has a list head.
    pub list_prob: Option<f64>,
}

/// Taped per-session loss terms.
pub struct SessionLoss<'t> {
    pub total: Var<'t>,
    pub item: Var<'t>,
    pub list: Option<Var<'t>>,
}

/// What the trainer and evaluator need from a scoring model.
pub trait RankModel: Clone {
    type Params: Parameters;

    fn params(&self) -> &Self::Params;
    fn params_mut(&mut self) -> &mut Self::Params;

    fn session_loss<'t>(
        &self,
        vars: &<Self::Params as Parameters>::Vars<'t>,
        session: &SessionRecord,
        weights: LossWeights,
        dropout: &mut Dropout<'_>,
    ) -> Result<SessionLoss<'t>>;

    fn predict_many(&self, sessions: &[SessionRecord]) -> Result<Vec<Prediction>>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct PearModel {
    pub schema: FeatureSchema,
    pub config: ModelConfig,
    pub params: PearParams,
}

impl PearModel {
    /// Fresh model; every schema field is re-dimensioned to
    /// `config.embed_dim`.
    pub fn init<R: Rng + ?Sized>(
        schema: &FeatureSchema,
        config: ModelConfig,
        rng: &mut R,
    ) -> Result<Self> {
        let schema = schema.with_embed_dim(config.embed_dim);
        schema.validate()?;
        let params = PearParams::init(&schema, &config, rng)?;
        Ok(PearModel {
            schema,
            config,
            params,
        })
    }

    /// The fused `(n + m) × (d_u + d_i)` input for one session.
    fn input<'t>(&self, vars: &PearVars<'t>, session: &SessionRecord) -> Result<Var<'t>> {
        let item_fields = self.schema.fields(Side::Item);
        let history = session.padded_history(self.config.history_len, item_fields.len());
        let records: Vec<&[usize]> = history
            .iter()
            .map(Vec::as_slice)
            .chain(session.candidates.iter().map(|c| c.item.as_slice()))
            .collect();
        let items = embed_rows(item_fields, &vars.item_tables, &records)?;
        let user_fields = self.schema.fields(Side::User);
        if user_fields.is_empty() {
            return Ok(items);
        }
        self.schema.check_values(Side::User, &session.user)?;
        let user = embed_rows(user_fields, &vars.user_tables, &[session.user.as_slice()])?;
        hstack(&[user.repeat_row(records.len())?, items])
    }

    /// `H_S`, `(m + 1) × d_h`, list token last.
    pub fn encode_session<'t>(
        &self,
        vars: &PearVars<'t>,
        session: &SessionRecord,
        dropout: &mut Dropout<'_>,
    ) -> Result<Var<'t>> {
        if session.candidates.is_empty() {
            return Err(Error::invalid("session has no candidates"));
        }
        let x = self.input(vars, session)?;
        let (z_b, z_s) = fuse_var(x, self.config.history_len, &vars.fusion, dropout)?;
        encode_var(z_b, z_s, &vars.blocks, self.config.heads, dropout)
    }

    /// Item probabilities (`m × 1`) and the list probability (`1 × 1`).
    pub fn forward_var<'t>(
        &self,
        vars: &PearVars<'t>,
        session: &SessionRecord,
        dropout: &mut Dropout<'_>,
    ) -> Result<(Var<'t>, Var<'t>)> {
        let h_s = self.encode_session(vars, session, dropout)?;
        heads_var(h_s, &vars.item_head, &vars.list_head)
    }

    pub fn predict(&self, session: &SessionRecord) -> Result<Prediction> {
        Ok(self.predict_many(std::slice::from_ref(session))?.remove(0))
    }

    /// Eval-mode `H_S` as a plain matrix.
    pub fn contextualize(&self, session: &SessionRecord) -> Result<Matrix> {
        let tape = Tape::new();
        let (_, vars) = self.params.bind(&tape);
        let h = self.encode_session(&vars, session, &mut Dropout::eval())?;
        Ok((*h.value()).clone())
    }
}

impl RankModel for PearModel {
    type Params = PearParams;

    fn params(&self) -> &PearParams {
        &self.params
    }

    fn params_mut(&mut self) -> &mut PearParams {
        &mut self.params
    }

    fn session_loss<'t>(
        &self,
        vars: &<PearParams as Parameters>::Vars<'t>,
        session: &SessionRecord,
        weights: LossWeights,
        dropout: &mut Dropout<'_>,
    ) -> Result<SessionLoss<'t>> {
        let (items, list) = self.forward_var(vars, session, dropout)?;
        let (total, item, list) = multitask_loss_var(items, list, &session.labels(), weights)?;
        Ok(SessionLoss {
            total,
            item,
            list: Some(list),
        })
    }

    /// Eval-mode predictions, binding parameters once for all sessions.
    fn predict_many(&self, sessions: &[SessionRecord]) -> Result<Vec<Prediction>> {
        let mut out = Vec::with_capacity(sessions.len());
        for chunk in sessions.chunks(256) {
            let tape = Tape::new();
            let (_, vars) = self.params.bind(&tape);
            for s in chunk {
                let (items, list) = self.forward_var(&vars, s, &mut Dropout::eval())?;
                out.push(Prediction {
                    item_probs: items.value().data().to_vec(),
                    list_prob: Some(list.scalar()),
                });
            }
        }
        Ok(out)
    }
}
