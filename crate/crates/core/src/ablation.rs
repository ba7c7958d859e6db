//! Variant comparison: each variant is trained on the same data with the
//! same seeds, and results are summarized as mean ± sample std over seeds.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};

use crate::datasim::{initial_rank, Dataset, SessionRecord};
use crate::error::{Error, Result};
use crate::model::PearModel;
use crate::objectives::LossWeights;
use crate::ranker::PointwiseRanker;
use crate::report::{evaluate, MetricReport};
use crate::train::{stream_rng, streams, train, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Variant {
    Full,
    /// List head trained with weight zero.
    NoAux,
    /// History path removed.
    NoHistory,
    /// The initial ranker's own scores.
    Pointwise,
    /// Full model fed only the last `n` history items.
    History(usize),
}

impl Variant {
    /// The standard set plus a sweep over `lengths`.
    pub fn standard(lengths: &[usize]) -> Vec<Variant> {
        let mut v = vec![
            Variant::Full,
            Variant::NoAux,
            Variant::NoHistory,
            Variant::Pointwise,
        ];
        v.extend(lengths.iter().map(|&n| Variant::History(n)));
        v
    }

    /// The training config this variant runs with, or `None` for the
    /// pointwise baseline.
    pub fn config(self, base: &TrainConfig) -> Option<TrainConfig> {
        let mut c = base.clone();
        match self {
            Variant::Full => {}
            Variant::NoAux => c.alpha = 0.0,
            Variant::NoHistory => c.history_len = 0,
            Variant::Pointwise => return None,
            Variant::History(n) => c.history_len = n,
        }
        Some(c)
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Variant::Full => f.write_str("full"),
            Variant::NoAux => f.write_str("no-aux"),
            Variant::NoHistory => f.write_str("no-history"),
            Variant::Pointwise => f.write_str("pointwise"),
            Variant::History(n) => write!(f, "history={n}"),
        }
    }
}

/// Candidates reordered by `ranker`, for every split.
pub fn rank_splits(ranker: &PointwiseRanker, data: &Dataset) -> Result<Dataset> {
    let rank = |v: &[SessionRecord]| {
        v.iter()
            .map(|s| initial_rank(ranker, s))
            .collect::<Result<Vec<_>>>()
    };
    Ok(Dataset {
        schema: data.schema.clone(),
        train: rank(&data.train)?,
        val: rank(&data.val)?,
        test: rank(&data.test)?,
    })
}

/// Trains the pointwise initial ranker on the raw splits.
pub fn train_ranker(data: &Dataset, config: &TrainConfig) -> Result<PointwiseRanker> {
    let init = PointwiseRanker::init(
        &data.schema,
        config.ranker(),
        &mut stream_rng(config.seed, streams::INIT),
    )?;
    Ok(train(init, config, &data.train, &data.val)?.model)
}

/// Trains one PEAR model on already-ranked splits.
pub fn train_pear(ranked: &Dataset, config: &TrainConfig) -> Result<PearModel> {
    let init = PearModel::init(
        &ranked.schema,
        config.model(),
        &mut stream_rng(config.seed, streams::INIT),
    )?;
    Ok(train(init, config, &ranked.train, &ranked.val)?.model)
}

/// One seed: trains the ranker, ranks every split, then trains and
/// evaluates each variant on the ranked test split. Variants whose
/// effective configs coincide share one training run.
pub fn run_seed(
    data: &Dataset,
    base: &TrainConfig,
    variants: &[Variant],
) -> Result<Vec<MetricReport>> {
    let ranker = train_ranker(data, base)?;
    let ranked = rank_splits(&ranker, data)?;
    let mut cache: Vec<(TrainConfig, MetricReport)> = Vec::new();
    let mut out = Vec::with_capacity(variants.len());
    for &v in variants {
        let name = v.to_string();
        let report = match v.config(base) {
            None => evaluate(
                &name,
                &ranker,
                &ranked.test,
                &base.eval_ks,
                LossWeights::default(),
            )?,
            Some(cfg) => {
                let hit = cache
                    .iter()
                    .find(|(c, _)| *c == cfg)
                    .map(|(_, r)| r.clone());
                let mut r = match hit {
                    Some(r) => r,
                    None => {
                        log::info!("seed {} variant {name}", base.seed);
                        let model = train_pear(&ranked, &cfg)?;
                        let r = evaluate(
                            &name,
                            &model,
                            &ranked.test,
                            &cfg.eval_ks,
                            LossWeights::new(cfg.alpha)?,
                        )?;
                        cache.push((cfg, r.clone()));
                        r
                    }
                };
                r.variant = name;
                r
            }
        };
        out.push(report);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Summary {
    pub mean: f64,
    /// Sample standard deviation; zero for a single seed.
    pub std: f64,
    pub n: usize,
}

impl Summary {
    pub fn of(values: &[f64]) -> Option<Summary> {
        if values.is_empty() {
            return None;
        }
        let n = values.len();
        let mean = values.iter().sum::<f64>() / n as f64;
        let std = if n > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        Some(Summary { mean, std, n })
    }
}

impl fmt::Display for Summary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.n > 1 {
            write!(f, "{:.4}±{:.4}", self.mean, self.std)
        } else {
            write!(f, "{:.4}", self.mean)
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationResult {
    pub variants: Vec<Variant>,
    pub seeds: Vec<u64>,
    /// `runs[s][v]`: seed `s`, variant `v`.
    pub runs: Vec<Vec<MetricReport>>,
}

impl AblationResult {
    /// Per-seed values of `metric` for `variant`, skipping seeds where it
    /// is undefined.
    pub fn values(&self, variant: Variant, metric: &str) -> Vec<f64> {
        let Some(i) = self.variants.iter().position(|&v| v == variant) else {
            return Vec::new();
        };
        self.runs.iter().filter_map(|r| r[i].get(metric)).collect()
    }

    pub fn summary(&self, variant: Variant, metric: &str) -> Option<Summary> {
        Summary::of(&self.values(variant, metric))
    }

    fn metrics(&self) -> Vec<String> {
        let mut keys: Vec<String> = self
            .runs
            .iter()
            .flatten()
            .flat_map(|r| r.values.keys().cloned())
            .filter(|k| k.starts_with("gauc@") || k.starts_with("ndcg@") || k.starts_with("loss"))
            .collect();
        keys.sort();
        keys.dedup();
        keys
    }

    /// One row per variant, one column per metric, cells `mean±std`.
    pub fn render(&self) -> String {
        let metrics = self.metrics();
        let mut rows = vec![std::iter::once("variant".to_string())
            .chain(metrics.iter().cloned())
            .collect::<Vec<_>>()];
        for &v in &self.variants {
            let mut row = vec![v.to_string()];
            for m in &metrics {
                row.push(
                    self.summary(v, m)
                        .map_or_else(|| "-".into(), |s| s.to_string()),
                );
            }
            rows.push(row);
        }
        let widths: Vec<usize> = (0..rows[0].len())
            .map(|c| rows.iter().map(|r| r[c].chars().count()).max().unwrap_or(0))
            .collect();
        let mut out = String::new();
        let _ = writeln!(out, "seeds: {}", crate::kv::join_list(&self.seeds));
        for row in &rows {
            let cells: Vec<String> = row
                .iter()
                .zip(&widths)
                .enumerate()
                .map(|(i, (cell, &w))| {
                    let pad = w - cell.chars().count();
                    if i == 0 {
                        format!("{cell}{}", " ".repeat(pad))
                    } else {
                        format!("{}{cell}", " ".repeat(pad))
                    }
                })
                .collect();
            let _ = writeln!(out, "{}", cells.join("  ").trim_end());
        }
        out
    }

    /// Per-seed values as `seed.variant.metric = value` lines.
    pub fn to_kv_text(&self) -> String {
        let mut flat = BTreeMap::new();
        for (seed, reports) in self.seeds.iter().zip(&self.runs) {
            for r in reports {
                for (k, v) in &r.values {
                    flat.insert(format!("seed{seed}.{}.{k}", r.variant), *v);
                }
            }
        }
        let mut s = String::new();
        for (k, v) in flat {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }
}

/// Runs every variant under every seed. `base.seed` is overridden.
pub fn ablate(
    data: &Dataset,
    base: &TrainConfig,
    variants: &[Variant],
    seeds: &[u64],
) -> Result<AblationResult> {
    if seeds.is_empty() {
        return Err(Error::invalid("ablation needs at least one seed"));
    }
    if variants.is_empty() {
        return Err(Error::invalid("ablation needs at least one variant"));
    }
    base.validate()?;
    let mut runs = Vec::with_capacity(seeds.len());
    for &seed in seeds {
        let cfg = TrainConfig {
            seed,
            ..base.clone()
        };
        runs.push(run_seed(data, &cfg, variants)?);
    }
    Ok(AblationResult {
        variants: variants.to_vec(),
        seeds: seeds.to_vec(),
        runs,
    })
}
