use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::format::{write_schema, write_sessions, Dataset};
use super::{Candidate, SessionRecord};
use crate::embedding::{FeatureSchema, FieldSpec};
use crate::error::{Error, Result};
use crate::kv::KvMap;
use crate::metrics::{ndcg_at_k, RankedList};
use crate::tensor::sigmoid_scalar;

pub const DEFAULT_EMBED_DIM: usize = 8;

/// Click model, per candidate `j` in displayed order:
///
/// ```text
/// logit_j = base_logit + quality_j
///         + theta_hist · [category_j == modal category of recent history]
///         - theta_div  · #(earlier candidates with category_j)
/// ```
///
/// The modal category is taken over the last `modal_window` history items
/// (ties go to the smaller category id). Histories start with `n_max`
/// warm-up clicks drawn with probability `history_affinity` from the
/// user's preferred category, then grow with each simulated session's
/// clicks.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub num_users: usize,
    pub num_items: usize,
    pub num_categories: usize,
    pub m: usize,
    pub n_max: usize,
    pub sessions_per_user: usize,
    pub theta_hist: f64,
    pub theta_div: f64,
    pub base_logit: f64,
    pub quality_std: f64,
    pub history_affinity: f64,
    pub modal_window: usize,
    pub user_segments: usize,
    pub user_regions: usize,
    pub seed: u64,
    pub train_fraction: f64,
    pub val_fraction: f64,
    pub test_fraction: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            num_users: 2000,
            num_items: 500,
            num_categories: 8,
            m: 10,
            n_max: 16,
            sessions_per_user: 4,
            theta_hist: 2.0,
            theta_div: 1.0,
            base_logit: -2.0,
            quality_std: 1.0,
            history_affinity: 0.6,
            modal_window: 16,
            user_segments: 8,
            user_regions: 4,
            seed: 0,
            train_fraction: 0.7,
            val_fraction: 0.15,
            test_fraction: 0.15,
        }
    }
}

const SYNTH_KEYS: &[&str] = &[
    "num_users",
    "num_items",
    "num_categories",
    "m",
    "n_max",
    "sessions_per_user",
    "theta_hist",
    "theta_div",
    "base_logit",
    "quality_std",
    "history_affinity",
    "modal_window",
    "user_segments",
    "user_regions",
    "seed",
    "train_fraction",
    "val_fraction",
    "test_fraction",
];

impl SynthConfig {
    pub fn from_kv(kv: &KvMap) -> Result<Self> {
        kv.check_known(SYNTH_KEYS)?;
        let mut c = SynthConfig::default();
        kv.apply("num_users", &mut c.num_users)?;
        kv.apply("num_items", &mut c.num_items)?;
        kv.apply("num_categories", &mut c.num_categories)?;
        kv.apply("m", &mut c.m)?;
        kv.apply("n_max", &mut c.n_max)?;
        kv.apply("sessions_per_user", &mut c.sessions_per_user)?;
        kv.apply("theta_hist", &mut c.theta_hist)?;
        kv.apply("theta_div", &mut c.theta_div)?;
        kv.apply("base_logit", &mut c.base_logit)?;
        kv.apply("quality_std", &mut c.quality_std)?;
        kv.apply("history_affinity", &mut c.history_affinity)?;
        kv.apply("modal_window", &mut c.modal_window)?;
        kv.apply("user_segments", &mut c.user_segments)?;
        kv.apply("user_regions", &mut c.user_regions)?;
        kv.apply("seed", &mut c.seed)?;
        kv.apply("train_fraction", &mut c.train_fraction)?;
        kv.apply("val_fraction", &mut c.val_fraction)?;
        kv.apply("test_fraction", &mut c.test_fraction)?;
        Ok(c)
    }

    pub fn to_kv_text(&self) -> String {
        format!(
            "num_users = {}\nnum_items = {}\nnum_categories = {}\nm = {}\nn_max = {}\n\
             sessions_per_user = {}\ntheta_hist = {}\ntheta_div = {}\nbase_logit = {}\n\
             quality_std = {}\nhistory_affinity = {}\nmodal_window = {}\nuser_segments = {}\n\
             user_regions = {}\nseed = {}\ntrain_fraction = {}\nval_fraction = {}\ntest_fraction = {}\n",
            self.num_users,
            self.num_items,
            self.num_categories,
            self.m,
            self.n_max,
            self.sessions_per_user,
            self.theta_hist,
            self.theta_div,
            self.base_logit,
            self.quality_std,
            self.history_affinity,
            self.modal_window,
            self.user_segments,
            self.user_regions,
            self.seed,
            self.train_fraction,
            self.val_fraction,
            self.test_fraction,
        )
    }

    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("num_users", self.num_users),
            ("num_items", self.num_items),
            ("num_categories", self.num_categories),
            ("m", self.m),
            ("n_max", self.n_max),
            ("sessions_per_user", self.sessions_per_user),
            ("user_segments", self.user_segments),
            ("user_regions", self.user_regions),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(Error::invalid(format!("{name} must be at least 1")));
            }
        }
        if self.m > self.num_items {
            return Err(Error::invalid("m exceeds the number of items"));
        }
        if self.num_categories > self.num_items {
            return Err(Error::invalid("more categories than items"));
        }
        if !(0.0..=1.0).contains(&self.history_affinity) {
            return Err(Error::invalid("history_affinity must be in [0, 1]"));
        }
        if self.quality_std.is_nan() || self.quality_std < 0.0 {
            return Err(Error::invalid("quality_std must be >= 0"));
        }
        let fr = [self.train_fraction, self.val_fraction, self.test_fraction];
        if fr.iter().any(|f| !(0.0..=1.0).contains(f))
            || (fr.iter().sum::<f64>() - 1.0).abs() > 1e-9
        {
            return Err(Error::invalid(format!(
                "split fractions {fr:?} must be in [0, 1] and sum to 1"
            )));
        }
        let sizes = self.split_sizes();
        for ((name, f), size) in ["train", "val", "test"].iter().zip(fr).zip(sizes) {
            if f > 0.0 && size == 0 {
                return Err(Error::invalid(format!(
                    "{name} split gets no users out of {}",
                    self.num_users
                )));
            }
        }
        Ok(())
    }

    fn split_sizes(&self) -> [usize; 3] {
        let u = self.num_users;
        let train = ((self.train_fraction * u as f64).round() as usize).min(u);
        let val = ((self.val_fraction * u as f64).round() as usize).min(u - train);
        [train, val, u - train - val]
    }
}

/// Build the feature schema implied by a synthetic config.
pub fn item_schema(config: &SynthConfig, embed_dim: usize) -> FeatureSchema {
    FeatureSchema {
        user_fields: vec![
            FieldSpec::new("segment", config.user_segments, embed_dim),
            FieldSpec::new("region", config.user_regions, embed_dim),
        ],
        item_fields: vec![
            FieldSpec::new("item_id", config.num_items, embed_dim),
            FieldSpec::new("category", config.num_categories, embed_dim),
        ],
    }
}

/// Ground truth per item; ids and categories are 1-based.
#[derive(Debug, Clone, PartialEq)]
pub struct Catalog {
    pub category: Vec<usize>,
    pub quality: Vec<f64>,
    by_category: Vec<Vec<usize>>,
}

impl Catalog {
    fn generate(config: &SynthConfig) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(config.seed, u64::MAX));
        let mut category: Vec<usize> = (0..config.num_items)
            .map(|j| j % config.num_categories + 1)
            .collect();
        category.shuffle(&mut rng);
        let normal =
            Normal::new(0.0, config.quality_std).map_err(|e| Error::invalid(e.to_string()))?;
        let quality = (0..config.num_items)
            .map(|_| normal.sample(&mut rng))
            .collect();
        let mut by_category = vec![Vec::new(); config.num_categories + 1];
        for (j, &c) in category.iter().enumerate() {
            by_category[c].push(j + 1);
        }
        // index 0 is unused so both vectors can be indexed by 1-based id
        category.insert(0, 0);
        let mut quality: Vec<f64> = quality;
        quality.insert(0, 0.0);
        Ok(Catalog {
            category,
            quality,
            by_category,
        })
    }

    pub fn item(&self, id: usize) -> Vec<usize> {
        vec![id, self.category[id]]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedSession {
    pub record: SessionRecord,
    /// Planted click probabilities, in displayed order.
    pub click_probs: Vec<f64>,
    /// `base_logit + quality`, the context-free part of each logit.
    pub context_free_logits: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct SyntheticData {
    pub config: SynthConfig,
    pub schema: FeatureSchema,
    pub catalog: Catalog,
    pub train: Vec<GeneratedSession>,
    pub val: Vec<GeneratedSession>,
    pub test: Vec<GeneratedSession>,
}

impl SyntheticData {
    pub fn records(split: &[GeneratedSession]) -> Vec<SessionRecord> {
        split.iter().map(|s| s.record.clone()).collect()
    }

    /// The records alone, as a loaded data directory would hold them.
    pub fn dataset(&self) -> Dataset {
        Dataset {
            schema: self.schema.clone(),
            train: Self::records(&self.train),
            val: Self::records(&self.val),
            test: Self::records(&self.test),
        }
    }

    /// Writes `schema.tsv`, `train.tsv`, `val.tsv`, `test.tsv` and the
    /// generating config to `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_schema(&dir.join("schema.tsv"), &self.schema)?;
        for (name, split) in [
            ("train", &self.train),
            ("val", &self.val),
            ("test", &self.test),
        ] {
            write_sessions(&dir.join(format!("{name}.tsv")), &Self::records(split))?;
        }
        let cfg = dir.join("synth.cfg");
        std::fs::write(&cfg, self.config.to_kv_text()).map_err(|e| Error::io(&cfg, e))
    }
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Independent stream seed for `(seed, stream)`.
pub(crate) fn stream_seed(seed: u64, stream: u64) -> u64 {
    splitmix64(seed ^ splitmix64(stream))
}

fn modal_category(history: &[Vec<usize>], window: usize, num_categories: usize) -> Option<usize> {
    if window == 0 || history.is_empty() {
        return None;
    }
    let mut counts = vec![0usize; num_categories + 1];
    for item in &history[history.len().saturating_sub(window)..] {
        counts[item[1]] += 1;
    }
    let best = *counts.iter().max()?;
    (best > 0).then(|| counts.iter().position(|&c| c == best).unwrap())
}

fn simulate_user(config: &SynthConfig, catalog: &Catalog, user_id: u64) -> Vec<GeneratedSession> {
    let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(config.seed, user_id));
    let user = vec![
        rng.gen_range(1..=config.user_segments),
        rng.gen_range(1..=config.user_regions),
    ];
    let preferred = rng.gen_range(1..=config.num_categories);
    let mut history: Vec<Vec<usize>> = (0..config.n_max)
        .map(|_| {
            let id = if rng.gen::<f64>() < config.history_affinity {
                *catalog.by_category[preferred].choose(&mut rng).unwrap()
            } else {
                rng.gen_range(1..=config.num_items)
            };
            catalog.item(id)
        })
        .collect();

    let mut out = Vec::with_capacity(config.sessions_per_user);
    for _ in 0..config.sessions_per_user {
        let ids = rand::seq::index::sample(&mut rng, config.num_items, config.m);
        let modal = modal_category(&history, config.modal_window, config.num_categories);
        let mut seen = vec![0usize; config.num_categories + 1];
        let mut candidates = Vec::with_capacity(config.m);
        let mut click_probs = Vec::with_capacity(config.m);
        let mut context_free = Vec::with_capacity(config.m);
        for idx in ids.iter() {
            let id = idx + 1;
            let cat = catalog.category[id];
            let free = config.base_logit + catalog.quality[id];
            let hist_bonus = if modal == Some(cat) {
                config.theta_hist
            } else {
                0.0
            };
            let logit = free + hist_bonus - config.theta_div * seen[cat] as f64;
            seen[cat] += 1;
            let p = sigmoid_scalar(logit);
            candidates.push(Candidate {
                item: catalog.item(id),
                clicked: rng.gen::<f64>() < p,
            });
            click_probs.push(p);
            context_free.push(free);
        }
        let record = SessionRecord {
            user_id,
            user: user.clone(),
            history: history.clone(),
            candidates,
        };
        for c in &record.candidates {
            if c.clicked {
                history.push(c.item.clone());
            }
        }
        if history.len() > config.n_max {
            history.drain(..history.len() - config.n_max);
        }
        out.push(GeneratedSession {
            record,
            click_probs,
            context_free_logits: context_free,
        });
    }
    out
}

/// Simulates every user and splits them (not their sessions) into
/// train / validation / test. Pure function of the config.
pub fn generate(config: &SynthConfig) -> Result<SyntheticData> {
    config.validate()?;
    let catalog = Catalog::generate(config)?;
    let mut users: Vec<u64> = (1..=config.num_users as u64).collect();
    users.shuffle(&mut ChaCha8Rng::seed_from_u64(stream_seed(
        config.seed,
        u64::MAX - 1,
    )));
    let [n_train, n_val, _] = config.split_sizes();
    let assign = |ids: &[u64]| {
        let mut ids = ids.to_vec();
        ids.sort_unstable();
        ids.iter()
            .flat_map(|&u| simulate_user(config, &catalog, u))
            .collect::<Vec<_>>()
    };
    let train = assign(&users[..n_train]);
    let val = assign(&users[n_train..n_train + n_val]);
    let test = assign(&users[n_train + n_val..]);
    Ok(SyntheticData {
        config: config.clone(),
        schema: item_schema(config, DEFAULT_EMBED_DIM),
        catalog,
        train,
        val,
        test,
    })
}

/// Exact expected nDCG@k of a fixed ordering when label `j` is an
/// independent Bernoulli(`probs[j]`). Lists where no item is clicked
/// contribute zero (they are undefined and skipped by evaluation), so the
/// result is conditioned on at least one click.
pub fn expected_ndcg(probs: &[f64], order: &[usize], k: usize) -> Result<f64> {
    let m = probs.len();
    if m > 20 {
        return Err(Error::invalid("exact enumeration limited to 20 items"));
    }
    if order.len() != m {
        return Err(Error::invalid("ordering length differs from list length"));
    }
    // scores realising the ordering: earlier position, higher score
    let mut scores = vec![0.0; m];
    for (rank, &i) in order.iter().enumerate() {
        scores[i] = (m - rank) as f64;
    }
    let mut total = 0.0;
    let mut mass = 0.0;
    for mask in 1u32..(1 << m) {
        let mut p = 1.0;
        let mut labels = Vec::with_capacity(m);
        for (j, &pj) in probs.iter().enumerate() {
            let y = mask & (1 << j) != 0;
            p *= if y { pj } else { 1.0 - pj };
            labels.push(y);
        }
        let list = RankedList::new(scores.clone(), labels)?;
        total += p * ndcg_at_k(&list, k)?.unwrap_or(0.0);
        mass += p;
    }
    Ok(if mass > 0.0 { total / mass } else { 0.0 })
}
