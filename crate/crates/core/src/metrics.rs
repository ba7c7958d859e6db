//! Ranking metrics: per-list AUC, group AUC over top-K truncations, and
//! nDCG@K with binary gains.
//!
//! Lists are ordered by descending score; ties keep the original index
//! order, so every metric is deterministic for tied scores.

use std::cmp::Ordering;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct RankedList {
    pub scores: Vec<f64>,
    pub labels: Vec<bool>,
}

impl RankedList {
    pub fn new(scores: Vec<f64>, labels: Vec<bool>) -> Result<Self> {
        if scores.len() != labels.len() {
            return Err(Error::invalid(format!(
                "{} scores but {} labels",
                scores.len(),
                labels.len()
            )));
        }
        Ok(RankedList { scores, labels })
    }

    /// From 0/1 float labels.
    pub fn from_f64(scores: Vec<f64>, labels: &[f64]) -> Result<Self> {
        if let Some(y) = labels.iter().find(|&&y| y != 0.0 && y != 1.0) {
            return Err(Error::invalid(format!("label {y} is not 0 or 1")));
        }
        Self::new(scores, labels.iter().map(|&y| y == 1.0).collect())
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn positives(&self) -> usize {
        self.labels.iter().filter(|&&l| l).count()
    }

    /// Indices by descending score, ties by ascending index.
    pub fn order(&self) -> Vec<usize> {
        descending_order(&self.scores)
    }

    /// The `k` highest-scored entries, in ranked order.
    pub fn top_k(&self, k: usize) -> RankedList {
        let idx: Vec<usize> = self.order().into_iter().take(k).collect();
        RankedList {
            scores: idx.iter().map(|&i| self.scores[i]).collect(),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
        }
    }
}

/// Numeric order; `-0.0 == 0.0`, NaN sorts by bit pattern.
fn cmp_scores(a: f64, b: f64) -> Ordering {
    a.partial_cmp(&b).unwrap_or_else(|| a.total_cmp(&b))
}

pub fn descending_order(scores: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| match cmp_scores(scores[b], scores[a]) {
        Ordering::Equal => a.cmp(&b),
        o => o,
    });
    idx
}

/// Probability that a random positive outscores a random negative, ties
/// counting one half. `None` when the list lacks either class.
pub fn auc(list: &RankedList) -> Option<f64> {
    let pos = list.positives();
    let neg = list.len() - pos;
    if pos == 0 || neg == 0 {
        return None;
    }
    // Ascending by score; walk tie groups, crediting positives with the
    // negatives strictly below plus half the negatives tied with them.
    let mut idx: Vec<usize> = (0..list.len()).collect();
    idx.sort_by(|&a, &b| cmp_scores(list.scores[a], list.scores[b]));
    let mut wins2: u64 = 0; // twice the win count, to stay integral
    let mut neg_below: u64 = 0;
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        let (mut p, mut n) = (0u64, 0u64);
        while j < idx.len()
            && cmp_scores(list.scores[idx[j]], list.scores[idx[i]]) == Ordering::Equal
        {
            if list.labels[idx[j]] {
                p += 1;
            } else {
                n += 1;
            }
            j += 1;
        }
        wins2 += p * (2 * neg_below + n);
        neg_below += n;
        i = j;
    }
    Some(wins2 as f64 / 2.0 / (pos as f64 * neg as f64))
}

fn discount(rank: usize) -> f64 {
    1.0 / ((rank + 1) as f64).log2()
}

/// nDCG@k with binary gains over the score-sorted order. `Ok(None)` when
/// the list has no positive.
pub fn ndcg_at_k(list: &RankedList, k: usize) -> Result<Option<f64>> {
    if k == 0 {
        return Err(Error::invalid("k must be at least 1"));
    }
    let pos = list.positives();
    if pos == 0 {
        return Ok(None);
    }
    let dcg: f64 = list
        .order()
        .into_iter()
        .take(k)
        .enumerate()
        .filter(|&(_, i)| list.labels[i])
        .map(|(rank, _)| discount(rank + 1))
        .sum();
    let ideal: f64 = (1..=pos.min(k)).map(discount).sum();
    Ok(Some(dcg / ideal))
}

/// Aggregate over many lists with skipped-list accounting.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroupMetric {
    pub value: Option<f64>,
    pub evaluated: usize,
    pub skipped: usize,
}

/// Group AUC: each list truncated to its top-`k` by score, per-list AUC,
/// averaged with weights equal to the truncated length. Lists whose
/// truncation holds a single class are skipped and counted.
pub fn gauc_at_k(lists: &[RankedList], k: usize) -> Result<GroupMetric> {
    if k == 0 {
        return Err(Error::invalid("k must be at least 1"));
    }
    let mut weighted = 0.0;
    let mut weight = 0.0;
    let mut out = GroupMetric {
        value: None,
        evaluated: 0,
        skipped: 0,
    };
    for list in lists {
        let top = list.top_k(k);
        match auc(&top) {
            Some(a) => {
                weighted += a * top.len() as f64;
                weight += top.len() as f64;
                out.evaluated += 1;
            }
            None => out.skipped += 1,
        }
    }
    if out.evaluated > 0 {
        out.value = Some(weighted / weight);
    }
    Ok(out)
}

/// Mean nDCG@k over lists with at least one positive.
pub fn mean_ndcg_at_k(lists: &[RankedList], k: usize) -> Result<GroupMetric> {
    let mut total = 0.0;
    let mut out = GroupMetric {
        value: None,
        evaluated: 0,
        skipped: 0,
    };
    for list in lists {
        match ndcg_at_k(list, k)? {
            Some(v) => {
                total += v;
                out.evaluated += 1;
            }
            None => out.skipped += 1,
        }
    }
    if out.evaluated > 0 {
        out.value = Some(total / out.evaluated as f64);
    }
    Ok(out)
}
