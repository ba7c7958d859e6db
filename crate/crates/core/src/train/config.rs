use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::kv::{join_list, parse_list, KvMap};
use crate::model::{ModelConfig, DEFAULT_EMBED_INIT};
use crate::objectives::DEFAULT_ALPHA;
use crate::ranker::RankerConfig;

/// Learning rates searched by default.
pub const LR_GRID: [f64; 4] = [1e-3, 1e-4, 5e-5, 1e-5];

/// Everything a training run depends on besides the data.
///
/// Config file grammar is [`crate::kv`]; every key matches a field name.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub dropout: f64,
    pub patience: usize,
    pub alpha: f64,
    pub embed_dim: usize,
    pub hidden: usize,
    pub d: usize,
    pub d_h: usize,
    pub blocks: usize,
    pub heads: usize,
    pub history_len: usize,
    /// Embedding init half-width for the re-ranker; the initial ranker
    /// keeps its own.
    pub embed_init: f64,
    pub max_epochs: usize,
    pub seed: u64,
    /// Cutoffs reported by evaluation; the largest drives early stopping.
    pub eval_ks: Vec<usize>,
}

impl Default for TrainConfig {
    /// Desk-scale defaults.
    fn default() -> Self {
        TrainConfig {
            learning_rate: LR_GRID[0],
            batch_size: 64,
            dropout: 0.1,
            patience: 2,
            alpha: DEFAULT_ALPHA,
            embed_dim: 8,
            hidden: 32,
            d: 32,
            d_h: 32,
            blocks: 1,
            heads: 1,
            history_len: 16,
            embed_init: DEFAULT_EMBED_INIT,
            max_epochs: 20,
            seed: 0,
            eval_ks: vec![5, 10],
        }
    }
}

pub const TRAIN_KEYS: &[&str] = &[
    "learning_rate",
    "batch_size",
    "dropout",
    "patience",
    "alpha",
    "embed_dim",
    "hidden",
    "d",
    "d_h",
    "blocks",
    "heads",
    "history_len",
    "embed_init",
    "max_epochs",
    "seed",
    "eval_ks",
];

impl TrainConfig {
    /// Large-scale settings: widths 500, history 128, batch 200.
    pub fn large_scale() -> Self {
        TrainConfig {
            batch_size: 200,
            hidden: 500,
            d: 500,
            d_h: 500,
            history_len: 128,
            eval_ks: vec![20, 30],
            max_epochs: 100,
            ..TrainConfig::default()
        }
    }

    /// Overlays the keys present in `kv` on `self`.
    pub fn apply_kv(&mut self, kv: &KvMap) -> Result<()> {
        kv.check_known(TRAIN_KEYS)?;
        kv.apply("learning_rate", &mut self.learning_rate)?;
        kv.apply("batch_size", &mut self.batch_size)?;
        kv.apply("dropout", &mut self.dropout)?;
        kv.apply("patience", &mut self.patience)?;
        kv.apply("alpha", &mut self.alpha)?;
        kv.apply("embed_dim", &mut self.embed_dim)?;
        kv.apply("hidden", &mut self.hidden)?;
        kv.apply("d", &mut self.d)?;
        kv.apply("d_h", &mut self.d_h)?;
        kv.apply("blocks", &mut self.blocks)?;
        kv.apply("heads", &mut self.heads)?;
        kv.apply("history_len", &mut self.history_len)?;
        kv.apply("embed_init", &mut self.embed_init)?;
        kv.apply("max_epochs", &mut self.max_epochs)?;
        kv.apply("seed", &mut self.seed)?;
        if let Some(ks) = kv.get_str("eval_ks") {
            self.eval_ks = parse_list(ks).map_err(|e| Error::invalid(format!("eval_ks: {e}")))?;
        }
        Ok(())
    }

    pub fn from_kv(kv: &KvMap) -> Result<Self> {
        let mut c = TrainConfig::default();
        c.apply_kv(kv)?;
        Ok(c)
    }

    pub fn to_kv_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "learning_rate = {}", self.learning_rate);
        let _ = writeln!(s, "batch_size = {}", self.batch_size);
        let _ = writeln!(s, "dropout = {}", self.dropout);
        let _ = writeln!(s, "patience = {}", self.patience);
        let _ = writeln!(s, "alpha = {}", self.alpha);
        let _ = writeln!(s, "embed_dim = {}", self.embed_dim);
        let _ = writeln!(s, "hidden = {}", self.hidden);
        let _ = writeln!(s, "d = {}", self.d);
        let _ = writeln!(s, "d_h = {}", self.d_h);
        let _ = writeln!(s, "blocks = {}", self.blocks);
        let _ = writeln!(s, "heads = {}", self.heads);
        let _ = writeln!(s, "history_len = {}", self.history_len);
        let _ = writeln!(s, "embed_init = {}", self.embed_init);
        let _ = writeln!(s, "max_epochs = {}", self.max_epochs);
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "eval_ks = {}", join_list(&self.eval_ks));
        s
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid("learning_rate must be positive"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size must be at least 1"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::invalid("dropout must be in [0, 1)"));
        }
        if self.patience == 0 {
            return Err(Error::invalid("patience must be at least 1"));
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(Error::invalid("alpha must be a finite value >= 0"));
        }
        if self.max_epochs == 0 {
            return Err(Error::invalid("max_epochs must be at least 1"));
        }
        if self.eval_ks.is_empty() || self.eval_ks.contains(&0) {
            return Err(Error::invalid("eval_ks must list cutoffs >= 1"));
        }
        self.model().validate()
    }

    /// Cutoff used for early stopping.
    pub fn stop_k(&self) -> usize {
        self.eval_ks.iter().copied().max().unwrap_or(1)
    }

    pub fn model(&self) -> ModelConfig {
        ModelConfig {
            embed_dim: self.embed_dim,
            hidden: self.hidden,
            d: self.d,
            d_h: self.d_h,
            blocks: self.blocks,
            heads: self.heads,
            history_len: self.history_len,
            embed_init: self.embed_init,
        }
    }

    pub fn ranker(&self) -> RankerConfig {
        RankerConfig {
            embed_dim: self.embed_dim,
            hidden: self.hidden,
        }
    }
}
