//! Command-line front end: data generation, training, evaluation and
//! ablation. Settings layer as defaults, then `--config` file, then flags.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use pear_core::ablation::{ablate, rank_splits, Variant};
use pear_core::checkpoint::{Checkpoint, SavedModel};
use pear_core::datasim::{generate, initial_rank, Dataset, SynthConfig};
use pear_core::kv::{parse_list, KvMap};
use pear_core::model::PearModel;
use pear_core::ranker::PointwiseRanker;
use pear_core::report::render_table;
use pear_core::train::{stream_rng, streams, train, TrainConfig};
use pear_core::{Error, Result};

#[derive(Parser)]
#[command(name = "pear", version, about = "History-aware transformer re-ranker")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a planted click log into a data directory.
    GenData {
        /// Generator settings (key = value); defaults when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train the pointwise initial ranker.
    TrainRanker {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        settings: Settings,
    },
    /// Train the re-ranker on lists ordered by an initial ranker.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        ranker: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        settings: Settings,
    },
    /// Report gAUC@K and nDCG@K of a checkpoint on a split.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Comma-separated cutoffs.
        #[arg(long, default_value = "20,30")]
        k: String,
        #[arg(long, default_value = "test")]
        split: String,
        /// Also report this initial ranker as the baseline row.
        #[arg(long)]
        ranker: Option<PathBuf>,
        /// Write the report as key = value text.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train every variant under several seeds and tabulate mean±std.
    Ablate {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 5)]
        seeds: u64,
        #[arg(long)]
        out: PathBuf,
        /// History lengths for the sweep.
        #[arg(long, default_value = "2,4,8,16")]
        history: String,
        #[command(flatten)]
        settings: Settings,
    },
}

/// Training settings. Every flag overrides the config file.
#[derive(Args)]
struct Settings {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Start from the large-scale presets.
    #[arg(long)]
    large_scale: bool,
    /// Write the per-epoch log here.
    #[arg(long)]
    log: Option<PathBuf>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    dropout: Option<f64>,
    #[arg(long)]
    patience: Option<usize>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    embed_dim: Option<usize>,
    #[arg(long)]
    hidden: Option<usize>,
    #[arg(long)]
    d: Option<usize>,
    #[arg(long)]
    d_h: Option<usize>,
    #[arg(long)]
    blocks: Option<usize>,
    #[arg(long)]
    heads: Option<usize>,
    #[arg(long)]
    history_len: Option<usize>,
    #[arg(long)]
    embed_init: Option<f64>,
    #[arg(long)]
    max_epochs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Comma-separated cutoffs; the largest drives early stopping.
    #[arg(long)]
    eval_ks: Option<String>,
}

impl Settings {
    fn resolve(&self) -> Result<TrainConfig> {
        let mut cfg = if self.large_scale {
            TrainConfig::large_scale()
        } else {
            TrainConfig::default()
        };
        if let Some(path) = &self.config {
            cfg.apply_kv(&KvMap::load(path)?)?;
        }
        let mut kv = KvMap::default();
        macro_rules! flag {
            ($($field:ident),*) => {$(
                if let Some(v) = &self.$field {
                    kv.set(stringify!($field), v);
                }
            )*};
        }
        flag!(
            learning_rate,
            batch_size,
            dropout,
            patience,
            alpha,
            embed_dim,
            hidden,
            d,
            d_h,
            blocks,
            heads,
            history_len,
            embed_init,
            max_epochs,
            seed,
            eval_ks
        );
        cfg.apply_kv(&kv)?;
        cfg.validate()?;
        Ok(cfg)
    }
}

fn write(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn load_ranker(path: &Path, data: &Dataset) -> Result<PointwiseRanker> {
    let ck = Checkpoint::load(path)?;
    ck.check_schema(&data.schema)?;
    match ck.model {
        SavedModel::Ranker(r) => Ok(r),
        SavedModel::Pear(_) => Err(Error::Invalid(format!(
            "{} holds a re-ranker, not an initial ranker",
            path.display()
        ))),
    }
}

fn parse_ks(s: &str) -> Result<Vec<usize>> {
    let ks: Vec<usize> = parse_list(s).map_err(|e| Error::Invalid(format!("--k: {e}")))?;
    if ks.is_empty() || ks.contains(&0) {
        return Err(Error::Invalid("--k needs cutoffs >= 1".into()));
    }
    Ok(ks)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData { config, out, seed } => {
            let mut cfg = match &config {
                Some(p) => SynthConfig::from_kv(&KvMap::load(p)?)?,
                None => SynthConfig::default(),
            };
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let data = generate(&cfg)?;
            data.write(&out)?;
            println!(
                "wrote {} / {} / {} sessions to {}",
                data.train.len(),
                data.val.len(),
                data.test.len(),
                out.display()
            );
        }
        Command::TrainRanker {
            data,
            out,
            settings,
        } => {
            let cfg = settings.resolve()?;
            let ds = Dataset::load(&data, cfg.embed_dim)?;
            let init = PointwiseRanker::init(
                &ds.schema,
                cfg.ranker(),
                &mut stream_rng(cfg.seed, streams::INIT),
            )?;
            let outcome = train(init, &cfg, &ds.train, &ds.val)?;
            if let Some(log) = &settings.log {
                write(log, &outcome.log_text())?;
            }
            Checkpoint {
                model: SavedModel::Ranker(outcome.model),
                config: cfg,
                epoch: outcome.best_epoch,
                best_metric: outcome.best_metric,
            }
            .save(&out)?;
            println!("best epoch {} -> {}", outcome.best_epoch, out.display());
        }
        Command::Train {
            data,
            ranker,
            out,
            settings,
        } => {
            let cfg = settings.resolve()?;
            let ds = Dataset::load(&data, cfg.embed_dim)?;
            let ranker = load_ranker(&ranker, &ds)?;
            let ranked = rank_splits(&ranker, &ds)?;
            let init = PearModel::init(
                &ranked.schema,
                cfg.model(),
                &mut stream_rng(cfg.seed, streams::INIT),
            )?;
            let outcome = train(init, &cfg, &ranked.train, &ranked.val)?;
            if let Some(log) = &settings.log {
                write(log, &outcome.log_text())?;
            }
            Checkpoint {
                model: SavedModel::Pear(outcome.model),
                config: cfg,
                epoch: outcome.best_epoch,
                best_metric: outcome.best_metric,
            }
            .save(&out)?;
            println!("best epoch {} -> {}", outcome.best_epoch, out.display());
        }
        Command::Eval {
            ckpt,
            data,
            k,
            split,
            ranker,
            out,
        } => {
            let ks = parse_ks(&k)?;
            let ck = Checkpoint::load(&ckpt)?;
            let ds = Dataset::load(&data, ck.config.embed_dim)?;
            ck.check_schema(&ds.schema)?;
            let mut sessions = ds.split(&split)?.to_vec();
            let mut reports = Vec::new();
            if let Some(path) = ranker {
                let r = load_ranker(&path, &ds)?;
                sessions = sessions
                    .iter()
                    .map(|s| initial_rank(&r, s))
                    .collect::<Result<_>>()?;
                reports.push(SavedModel::Ranker(r).evaluate(
                    "initial",
                    &sessions,
                    &ks,
                    ck.config.alpha,
                )?);
            }
            reports.push(
                ck.model
                    .evaluate(ck.model.kind(), &sessions, &ks, ck.config.alpha)?,
            );
            print!("{}", render_table(&reports));
            if let Some(path) = out {
                let text: String = reports.iter().map(|r| r.to_kv_text() + "\n").collect();
                write(&path, &text)?;
            }
        }
        Command::Ablate {
            data,
            seeds,
            out,
            history,
            settings,
        } => {
            let cfg = settings.resolve()?;
            let lengths: Vec<usize> =
                parse_list(&history).map_err(|e| Error::Invalid(format!("--history: {e}")))?;
            let ds = Dataset::load(&data, cfg.embed_dim)?;
            let seeds: Vec<u64> = (1..=seeds).collect();
            let result = ablate(&ds, &cfg, &Variant::standard(&lengths), &seeds)?;
            let table = result.render();
            print!("{table}");
            write(&out, &format!("{table}\n{}", result.to_kv_text()))?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => e.exit(),
        Err(e) => {
            // keep usage errors to one line like every other failure
            let msg = e.to_string();
            eprintln!("{}", msg.lines().next().unwrap_or("error: bad arguments"));
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.to_string().replace('\n', " "));
            ExitCode::FAILURE
        }
    }
}
