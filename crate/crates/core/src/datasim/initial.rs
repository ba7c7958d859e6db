use std::cmp::Ordering;

use super::SessionRecord;
use crate::error::{Error, Result};

/// A pointwise model: one score per candidate, each computed in isolation.
pub trait Scorer {
    fn score(&self, session: &SessionRecord) -> Result<Vec<f64>>;
}

/// Scores every candidate identically.
#[derive(Debug, Clone, Copy, Default)]
pub struct ConstantScorer(pub f64);

impl Scorer for ConstantScorer {
    fn score(&self, session: &SessionRecord) -> Result<Vec<f64>> {
        Ok(vec![self.0; session.candidates.len()])
    }
}

/// Reorders candidates by descending score; ties go to the smaller item id,
/// then to the earlier position. Labels travel with their items.
pub fn initial_rank(scorer: &dyn Scorer, session: &SessionRecord) -> Result<SessionRecord> {
    let scores = scorer.score(session)?;
    if scores.len() != session.candidates.len() {
        return Err(Error::invalid(format!(
            "scorer returned {} scores for {} candidates",
            scores.len(),
            session.candidates.len()
        )));
    }
    if let Some(s) = scores.iter().find(|s| !s.is_finite()) {
        return Err(Error::NonFinite(format!("initial ranker score {s}")));
    }
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| {
        scores[b]
            .partial_cmp(&scores[a])
            .unwrap_or(Ordering::Equal)
            .then_with(|| session.candidates[a].item.cmp(&session.candidates[b].item))
            .then(a.cmp(&b))
    });
    let mut out = session.clone();
    out.candidates = idx.iter().map(|&i| session.candidates[i].clone()).collect();
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasim::{generate, Catalog, SynthConfig};

    struct Planted<'c>(&'c Catalog, f64);

    impl Scorer for Planted<'_> {
        fn score(&self, s: &SessionRecord) -> Result<Vec<f64>> {
            Ok(s.candidates
                .iter()
                .map(|c| self.1 + self.0.quality[c.item[0]])
                .collect())
        }
    }

    fn data() -> crate::datasim::SyntheticData {
        generate(&SynthConfig {
            num_users: 40,
            num_items: 30,
            num_categories: 3,
            m: 6,
            n_max: 4,
            modal_window: 4,
            sessions_per_user: 2,
            ..SynthConfig::default()
        })
        .unwrap()
    }

    #[test]
    fn constant_scorer_gives_item_id_order() {
        let d = data();
        for g in &d.train {
            let r = initial_rank(&ConstantScorer(0.3), &g.record).unwrap();
            let ids: Vec<usize> = r.candidates.iter().map(|c| c.item[0]).collect();
            let mut sorted = ids.clone();
            sorted.sort_unstable();
            assert_eq!(ids, sorted);
        }
    }

    #[test]
    fn planted_scorer_matches_oracle_sort() {
        let d = data();
        for g in &d.test {
            let r = initial_rank(&Planted(&d.catalog, d.config.base_logit), &g.record).unwrap();
            // oracle: sort positions by the generator's recorded context-free logits
            let mut pos: Vec<usize> = (0..g.context_free_logits.len()).collect();
            pos.sort_by(|&a, &b| g.context_free_logits[b].total_cmp(&g.context_free_logits[a]));
            let expect: Vec<usize> = pos
                .iter()
                .map(|&p| g.record.candidates[p].item[0])
                .collect();
            let got: Vec<usize> = r.candidates.iter().map(|c| c.item[0]).collect();
            assert_eq!(got, expect);
        }
    }

    #[test]
    fn reordering_preserves_item_label_multiset() {
        let d = data();
        let scorer = Planted(&d.catalog, 0.0);
        for g in &d.train {
            let r = initial_rank(&scorer, &g.record).unwrap();
            let key = |s: &SessionRecord| {
                let mut v: Vec<_> = s
                    .candidates
                    .iter()
                    .map(|c| (c.item.clone(), c.clicked))
                    .collect();
                v.sort();
                v
            };
            assert_eq!(key(&r), key(&g.record));
            assert_eq!(r.history, g.record.history);
        }
    }

    #[test]
    fn wrong_score_count_rejected() {
        struct Short;
        impl Scorer for Short {
            fn score(&self, _: &SessionRecord) -> Result<Vec<f64>> {
                Ok(vec![1.0])
            }
        }
        let d = data();
        assert!(initial_rank(&Short, &d.train[0].record).is_err());
    }
}
