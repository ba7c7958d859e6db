//! Versioned checkpoint container.
//!
//! Layout: a UTF-8 header, one item per line, ending with a line `---`,
//! followed by every tensor's data as little-endian `f64` in header order.
//!
//! ```text
//! #format=pear-checkpoint/1
//! kind = pear
//! epoch = 7
//! best_metric = 0.6931
//! [schema]
//! user<TAB>segment<TAB>4
//! item<TAB>id<TAB>500
//! [config]
//! learning_rate = 0.001
//! ...
//! [tensors]
//! embed.item.id 501 8
//! ...
//! ---
//! ```

use std::fmt::Write as _;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::datasim::SessionRecord;
use crate::embedding::{FeatureSchema, FieldSpec};
use crate::error::{Error, Result};
use crate::kv::KvMap;
use crate::model::{PearModel, Prediction, RankModel};
use crate::objectives::LossWeights;
use crate::params::Parameters;
use crate::ranker::PointwiseRanker;
use crate::report::{evaluate, MetricReport};
use crate::tensor::Matrix;
use crate::train::TrainConfig;

pub const CHECKPOINT_HEADER: &str = "#format=pear-checkpoint/1";
const END: &str = "---";

// one value per loaded file; boxing buys nothing
#[allow(clippy::large_enum_variant)]
#[derive(Debug, Clone, PartialEq)]
pub enum SavedModel {
    Pear(PearModel),
    Ranker(PointwiseRanker),
}

impl SavedModel {
    pub fn kind(&self) -> &'static str {
        match self {
            SavedModel::Pear(_) => "pear",
            SavedModel::Ranker(_) => "ranker",
        }
    }

    pub fn schema(&self) -> &FeatureSchema {
        match self {
            SavedModel::Pear(m) => &m.schema,
            SavedModel::Ranker(r) => &r.schema,
        }
    }

    fn named(&self) -> Vec<(String, &Matrix)> {
        match self {
            SavedModel::Pear(m) => m.params.named(),
            SavedModel::Ranker(r) => r.params.named(),
        }
    }

    pub fn predict_many(&self, sessions: &[SessionRecord]) -> Result<Vec<Prediction>> {
        match self {
            SavedModel::Pear(m) => m.predict_many(sessions),
            SavedModel::Ranker(r) => r.predict_many(sessions),
        }
    }

    pub fn evaluate(
        &self,
        variant: &str,
        sessions: &[SessionRecord],
        ks: &[usize],
        alpha: f64,
    ) -> Result<MetricReport> {
        let w = LossWeights::new(alpha)?;
        match self {
            SavedModel::Pear(m) => evaluate(variant, m, sessions, ks, w),
            SavedModel::Ranker(r) => evaluate(variant, r, sessions, ks, w),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: SavedModel,
    pub config: TrainConfig,
    pub epoch: usize,
    pub best_metric: Option<f64>,
}

impl Checkpoint {
    /// Fails with a schema mismatch unless `data` has the same fields and
    /// cardinalities, in order.
    pub fn check_schema(&self, data: &FeatureSchema) -> Result<()> {
        let ours = self.model.schema();
        let key = |s: &FeatureSchema| {
            let f = |v: &[FieldSpec]| {
                v.iter()
                    .map(|f| (f.name.clone(), f.cardinality))
                    .collect::<Vec<_>>()
            };
            (f(&s.user_fields), f(&s.item_fields))
        };
        if key(ours) != key(data) {
            return Err(Error::SchemaMismatch(format!(
                "checkpoint fields {:?} differ from data fields {:?}",
                key(ours),
                key(data)
            )));
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut h = String::new();
        let _ = writeln!(h, "{CHECKPOINT_HEADER}");
        let _ = writeln!(h, "kind = {}", self.model.kind());
        let _ = writeln!(h, "epoch = {}", self.epoch);
        match self.best_metric {
            Some(v) => {
                let _ = writeln!(h, "best_metric = {v}");
            }
            None => {
                let _ = writeln!(h, "best_metric = undefined");
            }
        }
        h.push_str("[schema]\n");
        let schema = self.model.schema();
        for (side, fields) in [("user", &schema.user_fields), ("item", &schema.item_fields)] {
            for f in fields {
                let _ = writeln!(h, "{side}\t{}\t{}", f.name, f.cardinality);
            }
        }
        h.push_str("[config]\n");
        h.push_str(&self.config.to_kv_text());
        h.push_str("[tensors]\n");
        let named = self.model.named();
        for (name, m) in &named {
            let _ = writeln!(h, "{name} {} {}", m.rows(), m.cols());
        }
        let _ = writeln!(h, "{END}");
        let mut out = h.into_bytes();
        for (_, m) in &named {
            for v in m.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], source: &Path) -> Result<Self> {
        let err = |line: usize, msg: String| Error::Parse {
            path: source.to_path_buf(),
            line,
            msg,
        };
        let marker = format!("\n{END}\n");
        let split = bytes
            .windows(marker.len())
            .position(|w| w == marker.as_bytes())
            .ok_or_else(|| err(0, format!("no `{END}` line ending the header")))?;
        let header = std::str::from_utf8(&bytes[..split])
            .map_err(|e| err(0, format!("header is not UTF-8: {e}")))?;
        let mut body = &bytes[split + marker.len()..];

        let mut lines = header.lines().enumerate().map(|(i, l)| (i + 1, l));
        match lines.next() {
            Some((_, l)) if l == CHECKPOINT_HEADER => {}
            _ => return Err(err(1, format!("missing header `{CHECKPOINT_HEADER}`"))),
        }
        let mut section = "";
        let (mut meta, mut config, mut user, mut item, mut shapes) = (
            String::new(),
            String::new(),
            Vec::new(),
            Vec::new(),
            Vec::new(),
        );
        for (n, line) in lines {
            if line.starts_with('[') {
                section = line;
                continue;
            }
            match section {
                "" => {
                    meta.push_str(line);
                    meta.push('\n');
                }
                "[config]" => {
                    config.push_str(line);
                    config.push('\n');
                }
                "[schema]" => {
                    let cols: Vec<&str> = line.split('\t').collect();
                    let [side, name, card] = cols[..] else {
                        return Err(err(n, "expected `side<TAB>name<TAB>cardinality`".into()));
                    };
                    let card: usize = card
                        .parse()
                        .map_err(|e| err(n, format!("bad cardinality: {e}")))?;
                    match side {
                        "user" => user.push((name.to_string(), card)),
                        "item" => item.push((name.to_string(), card)),
                        other => return Err(err(n, format!("unknown side `{other}`"))),
                    }
                }
                "[tensors]" => {
                    let cols: Vec<&str> = line.split(' ').collect();
                    let [name, r, c] = cols[..] else {
                        return Err(err(n, "expected `name rows cols`".into()));
                    };
                    let dim = |s: &str| {
                        s.parse::<usize>()
                            .map_err(|e| err(n, format!("bad dimension `{s}`: {e}")))
                    };
                    shapes.push((name.to_string(), dim(r)?, dim(c)?));
                }
                other => return Err(err(n, format!("unknown section `{other}`"))),
            }
        }
        let meta = KvMap::parse(&meta, source)?;
        let config = TrainConfig::from_kv(&KvMap::parse(&config, source)?)?;
        let epoch: usize = meta.get("epoch")?.unwrap_or(0);
        let best_metric = match meta.get_str("best_metric") {
            None | Some("undefined") => None,
            Some(_) => meta.get("best_metric")?,
        };

        let fields = |v: Vec<(String, usize)>| {
            v.into_iter()
                .map(|(n, c)| FieldSpec::new(n, c, config.embed_dim))
                .collect::<Vec<_>>()
        };
        let schema = FeatureSchema::new(fields(user), fields(item))?;
        // weights are overwritten below; the init seed is irrelevant
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut model = match meta.get_str("kind") {
            Some("pear") => SavedModel::Pear(PearModel::init(&schema, config.model(), &mut rng)?),
            Some("ranker") => {
                SavedModel::Ranker(PointwiseRanker::init(&schema, config.ranker(), &mut rng)?)
            }
            other => return Err(err(2, format!("unknown model kind {other:?}"))),
        };

        let expected: Vec<(String, usize, usize)> = model
            .named()
            .into_iter()
            .map(|(n, m)| (n, m.rows(), m.cols()))
            .collect();
        if expected != shapes {
            return Err(Error::invalid(format!(
                "{}: tensor layout does not match a {} model with the stored config",
                source.display(),
                model.kind()
            )));
        }
        let total: usize = shapes.iter().map(|(_, r, c)| r * c).sum();
        if body.len() != total * 8 {
            return Err(Error::invalid(format!(
                "{}: expected {} data bytes, found {}",
                source.display(),
                total * 8,
                body.len()
            )));
        }
        let mut tensors = Vec::with_capacity(shapes.len());
        for (_, r, c) in &shapes {
            let (chunk, rest) = body.split_at(r * c * 8);
            body = rest;
            let data = chunk
                .chunks_exact(8)
                .map(|b| f64::from_le_bytes(b.try_into().expect("chunk of 8")))
                .collect();
            tensors.push(Matrix::new(*r, *c, data)?);
        }
        match &mut model {
            SavedModel::Pear(m) => m.params.load_tensors(tensors)?,
            SavedModel::Ranker(r) => r.params.load_tensors(tensors)?,
        }
        Ok(Checkpoint {
            model,
            config,
            epoch,
            best_metric,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasim::{generate, SynthConfig, SyntheticData};
    use crate::train::{stream_rng, streams};

    fn setup() -> (SyntheticData, TrainConfig) {
        let data = generate(&SynthConfig {
            num_users: 20,
            num_items: 30,
            num_categories: 3,
            n_max: 4,
            modal_window: 4,
            sessions_per_user: 2,
            m: 5,
            ..SynthConfig::default()
        })
        .unwrap();
        let cfg = TrainConfig {
            embed_dim: 3,
            hidden: 4,
            d: 4,
            d_h: 4,
            history_len: 4,
            ..TrainConfig::default()
        };
        (data, cfg)
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let (data, cfg) = setup();
        let records = SyntheticData::records(&data.test);
        let pear =
            PearModel::init(&data.schema, cfg.model(), &mut stream_rng(3, streams::INIT)).unwrap();
        let ranker = PointwiseRanker::init(
            &data.schema,
            cfg.ranker(),
            &mut stream_rng(3, streams::INIT),
        )
        .unwrap();
        for model in [SavedModel::Pear(pear), SavedModel::Ranker(ranker)] {
            let ck = Checkpoint {
                model,
                config: cfg.clone(),
                epoch: 3,
                best_metric: Some(0.1 + 0.2),
            };
            let back = Checkpoint::from_bytes(&ck.to_bytes(), Path::new("mem")).unwrap();
            assert_eq!(back, ck);
            let a = ck.model.predict_many(&records).unwrap();
            let b = back.model.predict_many(&records).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn truncated_or_foreign_files_rejected() {
        let (data, cfg) = setup();
        let pear =
            PearModel::init(&data.schema, cfg.model(), &mut stream_rng(3, streams::INIT)).unwrap();
        let ck = Checkpoint {
            model: SavedModel::Pear(pear),
            config: cfg,
            epoch: 1,
            best_metric: None,
        };
        let bytes = ck.to_bytes();
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 8], Path::new("mem")).is_err());
        assert!(Checkpoint::from_bytes(b"hello\n---\n", Path::new("mem")).is_err());
        let other = FeatureSchema::new(vec![], vec![FieldSpec::new("id", 7, 3)]).unwrap();
        assert!(matches!(
            ck.check_schema(&other),
            Err(Error::SchemaMismatch(_))
        ));
        ck.check_schema(&data.schema).unwrap();
        assert_eq!(
            Checkpoint::from_bytes(&bytes, Path::new("mem"))
                .unwrap()
                .best_metric,
            None
        );
    }
}
