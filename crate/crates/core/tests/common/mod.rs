//! Independent reference implementations shared by the integration tests.
//! Everything here is written with plain loops over `Vec<f64>` so it does
//! not reuse the library kernels it checks.

#![allow(dead_code)]

use pear_core::attention::AttentionParams;
use pear_core::datasim::{Candidate, SessionRecord};
use pear_core::embedding::{FeatureSchema, FieldSpec};
use pear_core::metrics::RankedList;
use pear_core::Matrix;
use rand::Rng;

pub fn rows(m: &Matrix) -> Vec<Vec<f64>> {
    (0..m.rows()).map(|r| m.row(r).to_vec()).collect()
}

/// `a · bᵀ` with `b` stored `out × in`.
pub fn project(a: &[Vec<f64>], w: &Matrix) -> Vec<Vec<f64>> {
    a.iter()
        .map(|row| {
            (0..w.rows())
                .map(|o| (0..w.cols()).map(|i| row[i] * w.get(o, i)).sum())
                .collect()
        })
        .collect()
}

fn softmax(xs: &[f64]) -> Vec<f64> {
    let max = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = xs.iter().map(|x| (x - max).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|x| x / s).collect()
}

/// Multi-head attention with keys and values given as explicit row lists.
/// Returns the concatenated head outputs and the per-head weight rows.
pub fn naive_attention(
    q: &[Vec<f64>],
    k: &[Vec<f64>],
    v: &[Vec<f64>],
    heads: usize,
) -> (Vec<Vec<f64>>, Vec<Vec<Vec<f64>>>) {
    let d_h = q[0].len();
    let w = d_h / heads;
    let scale = 1.0 / (w as f64).sqrt();
    let mut out = vec![vec![0.0; d_h]; q.len()];
    let mut weights = Vec::new();
    for h in 0..heads {
        let cols = h * w..(h + 1) * w;
        let mut hw = Vec::new();
        for (i, qi) in q.iter().enumerate() {
            let logits: Vec<f64> = k
                .iter()
                .map(|kj| cols.clone().map(|c| qi[c] * kj[c]).sum::<f64>() * scale)
                .collect();
            let a = softmax(&logits);
            for c in cols.clone() {
                out[i][c] = a.iter().zip(v).map(|(aj, vj)| aj * vj[c]).sum();
            }
            hw.push(a);
        }
        weights.push(hw);
    }
    (out, weights)
}

/// Merged cross-attention written as one attention over the explicitly
/// concatenated key and value lists `[H_B W_k1ᵀ ; Z_S W_k2ᵀ]`.
pub fn naive_merged(
    z_s: &Matrix,
    h_b: &Matrix,
    p: &AttentionParams,
    heads: usize,
) -> Vec<Vec<f64>> {
    let zs = rows(z_s);
    let hb = rows(h_b);
    let q = project(&zs, &p.w_q_cross);
    let mut k = project(&hb, &p.w_k_hist);
    k.extend(project(&zs, &p.w_k_items));
    let mut v = project(&hb, &p.w_v_hist);
    v.extend(project(&zs, &p.w_v_items));
    naive_attention(&q, &k, &v, heads).0
}

pub fn naive_history(z_b: &Matrix, p: &AttentionParams, heads: usize) -> Vec<Vec<f64>> {
    let zb = rows(z_b);
    let (q, k, v) = (
        project(&zb, &p.w_q),
        project(&zb, &p.w_k),
        project(&zb, &p.w_v),
    );
    naive_attention(&q, &k, &v, heads).0
}

/// AUC by enumerating every (positive, negative) pair; ties count half.
/// Returns `(numerator in half-units, pair count)`.
pub fn brute_auc_parts(scores: &[f64], labels: &[bool]) -> (u64, u64) {
    let (mut halves, mut pairs) = (0u64, 0u64);
    for i in 0..scores.len() {
        for j in 0..scores.len() {
            if labels[i] && !labels[j] {
                pairs += 1;
                halves += if scores[i] > scores[j] {
                    2
                } else if scores[i] == scores[j] {
                    1
                } else {
                    0
                };
            }
        }
    }
    (halves, pairs)
}

pub fn brute_auc(scores: &[f64], labels: &[bool]) -> Option<f64> {
    let (h, p) = brute_auc_parts(scores, labels);
    (p > 0).then(|| h as f64 / (2 * p) as f64)
}

/// Indices of the top-`k` items by score, ties to the lower index, found
/// by repeated selection.
pub fn brute_top_k(scores: &[f64], k: usize) -> Vec<usize> {
    let mut taken = vec![false; scores.len()];
    let mut out = Vec::new();
    for _ in 0..k.min(scores.len()) {
        let mut best: Option<usize> = None;
        for i in 0..scores.len() {
            if !taken[i] && best.is_none_or(|b| scores[i] > scores[b]) {
                best = Some(i);
            }
        }
        let b = best.unwrap();
        taken[b] = true;
        out.push(b);
    }
    out
}

/// Length-weighted mean of per-list AUC over top-`k` truncations.
pub fn brute_gauc(lists: &[RankedList], k: usize) -> Option<f64> {
    let (mut num, mut den) = (0.0, 0.0);
    for l in lists {
        let top = brute_top_k(&l.scores, k);
        let s: Vec<f64> = top.iter().map(|&i| l.scores[i]).collect();
        let y: Vec<bool> = top.iter().map(|&i| l.labels[i]).collect();
        if let Some(a) = brute_auc(&s, &y) {
            num += a * top.len() as f64;
            den += top.len() as f64;
        }
    }
    (den > 0.0).then(|| num / den)
}

pub fn brute_ndcg(scores: &[f64], labels: &[bool], k: usize) -> Option<f64> {
    let top = brute_top_k(scores, k);
    let dcg: f64 = top
        .iter()
        .enumerate()
        .filter(|(_, &i)| labels[i])
        .map(|(r, _)| 1.0 / ((r + 2) as f64).log2())
        .sum();
    let pos = labels.iter().filter(|&&y| y).count().min(k);
    let idcg: f64 = (0..pos).map(|r| 1.0 / ((r + 2) as f64).log2()).sum();
    (idcg > 0.0).then(|| dcg / idcg)
}

pub fn random_list<R: Rng>(rng: &mut R, max_len: usize) -> RankedList {
    let n = rng.gen_range(1..=max_len);
    // coarse scores so ties are common
    let scores = (0..n).map(|_| rng.gen_range(0..5) as f64 / 4.0).collect();
    let labels = (0..n).map(|_| rng.gen_bool(0.4)).collect();
    RankedList::new(scores, labels).unwrap()
}

/// A two-field user side and a two-field item side, all widths `dim`.
pub fn tiny_schema(dim: usize) -> FeatureSchema {
    FeatureSchema::new(
        vec![FieldSpec::new("segment", 3, dim)],
        vec![
            FieldSpec::new("id", 6, dim),
            FieldSpec::new("category", 2, dim),
        ],
    )
    .unwrap()
}

pub fn session(user: usize, history: &[usize], items: &[usize], clicks: &[bool]) -> SessionRecord {
    let item = |id: usize| vec![id, 1 + id % 2];
    SessionRecord {
        user_id: user as u64,
        user: vec![user],
        history: history.iter().map(|&i| item(i)).collect(),
        candidates: items
            .iter()
            .zip(clicks)
            .map(|(&i, &c)| Candidate {
                item: item(i),
                clicked: c,
            })
            .collect(),
    }
}
