//! Evaluation into a flat metric report, serialized as `key = value` text
//! and rendered as an aligned console table.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::autograd::bce_value;
use crate::datasim::SessionRecord;
use crate::error::{Error, Result};
use crate::kv::KvMap;
use crate::metrics::{gauc_at_k, mean_ndcg_at_k, RankedList};
use crate::model::{Prediction, RankModel};
use crate::objectives::{list_label, LossWeights};

pub const GAUC_DEFINITION: &str =
    "per-list AUC over each list's top-K by score, weighted by truncated length; single-class lists skipped";

#[derive(Debug, Clone, PartialEq, Default)]
pub struct MetricReport {
    pub variant: String,
    /// Metric name to value, e.g. `gauc@5`, `ndcg@10`, `loss.item`,
    /// `skipped.gauc@5`.
    pub values: BTreeMap<String, f64>,
    pub notes: BTreeMap<String, String>,
}

impl MetricReport {
    pub fn new(variant: impl Into<String>) -> Self {
        MetricReport {
            variant: variant.into(),
            ..Default::default()
        }
    }

    pub fn get(&self, key: &str) -> Option<f64> {
        self.values.get(key).copied()
    }

    pub fn gauc(&self, k: usize) -> Option<f64> {
        self.get(&format!("gauc@{k}"))
    }

    pub fn ndcg(&self, k: usize) -> Option<f64> {
        self.get(&format!("ndcg@{k}"))
    }

    /// Flat text; floats use Rust's shortest round-trip form, so parsing
    /// the text back gives identical values.
    pub fn to_kv_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "variant = {}", self.variant);
        for (k, v) in &self.notes {
            let _ = writeln!(s, "note.{k} = {v}");
        }
        for (k, v) in &self.values {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }

    pub fn from_kv_text(text: &str) -> Result<Self> {
        let kv = KvMap::parse(text, "<report>")?;
        let mut r = MetricReport::new(kv.get_str("variant").unwrap_or_default());
        for key in kv.keys() {
            if key == "variant" {
                continue;
            }
            if let Some(note) = key.strip_prefix("note.") {
                r.notes.insert(
                    note.to_string(),
                    kv.get_str(key).unwrap_or_default().to_string(),
                );
            } else {
                let v: f64 = kv
                    .get(key)?
                    .ok_or_else(|| Error::invalid(key.to_string()))?;
                r.values.insert(key.to_string(), v);
            }
        }
        Ok(r)
    }
}

/// Pairs each session's labels with `scores[i]`.
pub fn ranked_lists(sessions: &[SessionRecord], scores: &[Vec<f64>]) -> Result<Vec<RankedList>> {
    if sessions.len() != scores.len() {
        return Err(Error::invalid(format!(
            "{} sessions but {} score vectors",
            sessions.len(),
            scores.len()
        )));
    }
    sessions
        .iter()
        .zip(scores)
        .map(|(s, sc)| {
            RankedList::new(sc.clone(), s.candidates.iter().map(|c| c.clicked).collect())
        })
        .collect()
}

/// gAUC@K and nDCG@K for every `k`, plus skipped-list counts.
pub fn evaluate_scores(
    variant: &str,
    sessions: &[SessionRecord],
    scores: &[Vec<f64>],
    ks: &[usize],
) -> Result<MetricReport> {
    let lists = ranked_lists(sessions, scores)?;
    let mut r = MetricReport::new(variant);
    r.values.insert("sessions".into(), sessions.len() as f64);
    r.notes.insert("gauc".into(), GAUC_DEFINITION.into());
    for &k in ks {
        let g = gauc_at_k(&lists, k)?;
        if let Some(v) = g.value {
            r.values.insert(format!("gauc@{k}"), v);
        }
        r.values
            .insert(format!("skipped.gauc@{k}"), g.skipped as f64);
        let n = mean_ndcg_at_k(&lists, k)?;
        if let Some(v) = n.value {
            r.values.insert(format!("ndcg@{k}"), v);
        }
        r.values
            .insert(format!("skipped.ndcg@{k}"), n.skipped as f64);
    }
    Ok(r)
}

/// Ranking metrics from predictions, plus mean per-session losses.
pub fn evaluate_predictions(
    variant: &str,
    sessions: &[SessionRecord],
    preds: &[Prediction],
    ks: &[usize],
    weights: LossWeights,
) -> Result<MetricReport> {
    let scores: Vec<Vec<f64>> = preds.iter().map(|p| p.item_probs.clone()).collect();
    let mut r = evaluate_scores(variant, sessions, &scores, ks)?;
    if sessions.is_empty() {
        return Ok(r);
    }
    let (mut item, mut list, mut has_list) = (0.0, 0.0, true);
    for (s, p) in sessions.iter().zip(preds) {
        let labels = s.labels();
        item += bce_value(&p.item_probs, &labels);
        match p.list_prob {
            Some(q) => list += bce_value(&[q], &[list_label(&labels)]),
            None => has_list = false,
        }
    }
    let n = sessions.len() as f64;
    r.values.insert("loss.item".into(), item / n);
    if has_list {
        r.values.insert("loss.list".into(), list / n);
        r.values
            .insert("loss".into(), (item + weights.alpha * list) / n);
    } else {
        r.values.insert("loss".into(), item / n);
    }
    Ok(r)
}

/// Eval-mode (dropout off) scoring of `sessions` by `model`.
pub fn evaluate<M: RankModel>(
    variant: &str,
    model: &M,
    sessions: &[SessionRecord],
    ks: &[usize],
    weights: LossWeights,
) -> Result<MetricReport> {
    let preds = model.predict_many(sessions)?;
    evaluate_predictions(variant, sessions, &preds, ks, weights)
}

/// Aligned table: one row per report, one column per metric key present
/// in any report (skipped counts omitted).
pub fn render_table(reports: &[MetricReport]) -> String {
    let mut keys: Vec<&str> = reports
        .iter()
        .flat_map(|r| r.values.keys().map(String::as_str))
        .filter(|k| !k.starts_with("skipped.") && *k != "sessions")
        .collect();
    keys.sort_unstable();
    keys.dedup();
    let mut rows: Vec<Vec<String>> = vec![std::iter::once("variant".to_string())
        .chain(keys.iter().map(|k| k.to_string()))
        .collect()];
    for r in reports {
        let mut row = vec![r.variant.clone()];
        for k in &keys {
            row.push(r.get(k).map_or_else(|| "-".into(), |v| format!("{v:.4}")));
        }
        rows.push(row);
    }
    let widths: Vec<usize> = (0..rows[0].len())
        .map(|c| rows.iter().map(|r| r[c].len()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for row in &rows {
        let cells: Vec<String> = row
            .iter()
            .zip(&widths)
            .enumerate()
            .map(|(i, (cell, w))| {
                if i == 0 {
                    format!("{cell:<w$}")
                } else {
                    format!("{cell:>w$}")
                }
            })
            .collect();
        let _ = writeln!(out, "{}", cells.join("  ").trim_end());
    }
    out
}
