//! Synthetic clickstreams with planted context effects, the session file
//! format, and initial (pointwise) ordering of candidate lists.

mod format;
mod initial;
mod synth;

pub use format::{
    format_session, load_schema, load_sessions, parse_session, read_sessions, write_schema,
    write_sessions, Dataset, SessionReader, SCHEMA_HEADER, SESSION_HEADER,
};
pub use initial::{initial_rank, ConstantScorer, Scorer};
pub(crate) use synth::stream_seed;
pub use synth::{
    expected_ndcg, generate, item_schema, Catalog, GeneratedSession, SynthConfig, SyntheticData,
};

use crate::embedding::{FeatureSchema, Side};
use crate::error::Result;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Candidate {
    /// One index per item field; field 0 is the item id.
    pub item: Vec<usize>,
    pub clicked: bool,
}

/// One list impression: the user, their clicked history (most recent
/// last) and the displayed candidates with click labels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SessionRecord {
    pub user_id: u64,
    pub user: Vec<usize>,
    pub history: Vec<Vec<usize>>,
    pub candidates: Vec<Candidate>,
}

impl SessionRecord {
    pub fn labels(&self) -> Vec<f64> {
        self.candidates
            .iter()
            .map(|c| if c.clicked { 1.0 } else { 0.0 })
            .collect()
    }

    pub fn clicks(&self) -> usize {
        self.candidates.iter().filter(|c| c.clicked).count()
    }

    /// The last `len` history items, left-padded with all-zero (padding)
    /// items when the history is shorter.
    pub fn padded_history(&self, len: usize, item_fields: usize) -> Vec<Vec<usize>> {
        let take = self.history.len().min(len);
        let mut out = vec![vec![0; item_fields]; len - take];
        out.extend(self.history[self.history.len() - take..].iter().cloned());
        out
    }

    pub fn validate(&self, schema: &FeatureSchema) -> Result<()> {
        schema.check_values(Side::User, &self.user)?;
        for item in &self.history {
            schema.check_values(Side::Item, item)?;
        }
        if self.candidates.is_empty() {
            return Err(crate::error::Error::invalid("session has no candidates"));
        }
        for c in &self.candidates {
            schema.check_values(Side::Item, &c.item)?;
        }
        Ok(())
    }
}
