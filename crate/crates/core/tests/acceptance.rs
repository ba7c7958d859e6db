//! Acceptance run: one PASS/FAIL line per criterion.
//!
//! The directional criteria train the full model on the default planted
//! dataset under five seeds; expect several minutes in release mode.
//! A FAIL line does not fail the process unless `PEAR_ACCEPTANCE_STRICT=1`.

mod common;

use std::process::ExitCode;
use std::time::Instant;

use common::{brute_auc, brute_gauc, brute_ndcg, naive_merged, random_list, session, tiny_schema};
use pear_core::ablation::{ablate, rank_splits, train_ranker, AblationResult, Summary, Variant};
use pear_core::attention::{
    encode, merged_cross_attention, merged_cross_attention_with_weights, AttentionParams,
    BlockStack,
};
use pear_core::autograd::{vstack, Tape, Var};
use pear_core::checkpoint::{Checkpoint, SavedModel};
use pear_core::datasim::{generate, SynthConfig};
use pear_core::dropout::Dropout;
use pear_core::gradcheck::{grad_check, GradCheckConfig};
use pear_core::metrics::{auc, gauc_at_k, ndcg_at_k, RankedList};
use pear_core::model::{ModelConfig, PearModel, RankModel};
use pear_core::objectives::{list_label, multitask_loss, LossWeights};
use pear_core::params::Parameters;
use pear_core::train::{stream_rng, streams, train, TrainConfig};
use pear_core::{Matrix, Result};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SEEDS: [u64; 5] = [1, 2, 3, 4, 5];
const SWEEP: [usize; 4] = [2, 4, 8, 16];

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        pass,
        detail: detail.into(),
    }
}

fn hrtb<F>(f: F) -> F
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Result<Var<'t>>,
{
    f
}

fn gradient_correctness() -> Verdict {
    let start = Instant::now();
    let cfg = ModelConfig {
        embed_dim: 2,
        hidden: 4,
        d: 4,
        d_h: 4,
        blocks: 1,
        heads: 1,
        history_len: 2,
        embed_init: 1.0,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut model = PearModel::init(&tiny_schema(2), cfg, &mut rng).unwrap();
    for (name, m) in model.params_mut().named_mut() {
        if !name.starts_with("embed") {
            *m = Matrix::uniform(m.rows(), m.cols(), 1.0, &mut rng);
        }
    }
    let sessions = [
        session(1, &[2, 5], &[1, 3, 4], &[true, false, false]),
        session(2, &[6], &[2, 5, 6], &[false, true, true]),
    ];
    let f = hrtb(|_, p| {
        let vars = model.params.vars_from(&mut p.iter().copied());
        let mut totals = Vec::new();
        for s in &sessions {
            totals.push(
                model
                    .session_loss(&vars, s, LossWeights::default(), &mut Dropout::eval())?
                    .total,
            );
        }
        Ok(vstack(&totals)?.sum().scale(0.5))
    });
    let r = grad_check(&f, &model.params.tensors(), &GradCheckConfig::default()).unwrap();
    let secs = start.elapsed().as_secs_f64();
    verdict(
        r.max_rel_error < 1e-6 && secs < 10.0,
        format!(
            "max rel error {:.2e} over {} coordinates, {secs:.2} s",
            r.max_rel_error, r.coordinates_checked
        ),
    )
}

struct Instance {
    heads: usize,
    n: usize,
    m: usize,
    params: AttentionParams,
    z_b: Matrix,
    z_s: Matrix,
    h_b: Matrix,
}

fn instances(seed: u64) -> Vec<Instance> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..100)
        .map(|_| {
            let (n, m) = (rng.gen_range(0..=8), rng.gen_range(1..=8));
            let d = rng.gen_range(1..=5);
            let heads = rng.gen_range(1..=2);
            let width = heads * rng.gen_range(1..=3);
            let mut params = AttentionParams::init(d, width, &mut rng);
            for w in [
                &mut params.w_q,
                &mut params.w_k,
                &mut params.w_q_cross,
                &mut params.w_k_items,
            ] {
                *w = Matrix::uniform(w.rows(), w.cols(), 1.5, &mut rng);
            }
            params.w_k_hist = Matrix::uniform(width, width, 1.5, &mut rng);
            Instance {
                heads,
                n,
                m,
                z_b: Matrix::uniform(n, d, 2.0, &mut rng),
                z_s: Matrix::uniform(m + 1, d, 2.0, &mut rng),
                h_b: Matrix::uniform(n, width, 2.0, &mut rng),
                params,
            }
        })
        .collect()
}

fn max_diff(a: &[Vec<f64>], b: &Matrix) -> f64 {
    a.iter()
        .enumerate()
        .flat_map(|(r, row)| {
            row.iter()
                .enumerate()
                .map(move |(c, v)| (v - b.get(r, c)).abs())
        })
        .fold(0.0, f64::max)
}

fn merged_equivalence() -> Verdict {
    let start = Instant::now();
    let worst = instances(2)
        .iter()
        .map(|i| {
            let got = merged_cross_attention(&i.z_s, &i.h_b, &i.params, i.heads).unwrap();
            max_diff(&naive_merged(&i.z_s, &i.h_b, &i.params, i.heads), &got)
        })
        .fold(0.0, f64::max);
    let secs = start.elapsed().as_secs_f64();
    verdict(
        worst < 1e-10 && secs < 5.0,
        format!("100 instances, max abs diff {worst:.2e}, {secs:.2} s"),
    )
}

fn permute_rows(m: &Matrix, perm: &[usize]) -> Matrix {
    let mut out = m.clone();
    for (dst, &src) in perm.iter().enumerate() {
        out.row_mut(dst).copy_from_slice(m.row(src));
    }
    out
}

fn stochasticity_and_equivariance() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (mut row_err, mut equi_err, mut cls_err, mut hist_err) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    for i in instances(3) {
        let (_, weights) =
            merged_cross_attention_with_weights(&i.z_s, &i.h_b, &i.params, i.heads).unwrap();
        for w in &weights {
            for r in 0..w.rows() {
                row_err = row_err.max((w.row(r).iter().sum::<f64>() - 1.0).abs());
            }
        }
        let stack = BlockStack {
            heads: i.heads,
            blocks: vec![i.params.clone()],
        };
        let base = encode(&i.z_b, &i.z_s, &stack).unwrap();
        let mut perm: Vec<usize> = (0..i.m).collect();
        perm.shuffle(&mut rng);
        perm.push(i.m);
        let out = encode(&i.z_b, &permute_rows(&i.z_s, &perm), &stack).unwrap();
        for (dst, &src) in perm.iter().enumerate() {
            for c in 0..base.cols() {
                let e = (out.get(dst, c) - base.get(src, c)).abs();
                if dst == i.m {
                    cls_err = cls_err.max(e);
                } else {
                    equi_err = equi_err.max(e);
                }
            }
        }
        let mut hperm: Vec<usize> = (0..i.n).collect();
        hperm.shuffle(&mut rng);
        let moved = encode(&permute_rows(&i.z_b, &hperm), &i.z_s, &stack).unwrap();
        hist_err = hist_err.max(max_diff(&common::rows(&base), &moved));
    }
    verdict(
        row_err <= 1e-12 && equi_err <= 1e-12 && cls_err <= 1e-12 && hist_err <= 1e-12,
        format!(
            "row-sum err {row_err:.1e}, candidate perm {equi_err:.1e}, list token {cls_err:.1e}, history perm {hist_err:.1e}"
        ),
    )
}

fn metric_oracles() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let lists: Vec<RankedList> = (0..1000).map(|_| random_list(&mut rng, 12)).collect();
    let mut mismatches = 0;
    for l in &lists {
        mismatches += usize::from(auc(l) != brute_auc(&l.scores, &l.labels));
        for k in 1..=12 {
            mismatches +=
                usize::from(ndcg_at_k(l, k).unwrap() != brute_ndcg(&l.scores, &l.labels, k));
        }
    }
    for k in 1..=12 {
        mismatches += usize::from(gauc_at_k(&lists, k).unwrap().value != brute_gauc(&lists, k));
    }
    let rank2 = RankedList::new(vec![0.9, 0.5, 0.1], vec![false, true, false]).unwrap();
    let v = ndcg_at_k(&rank2, 3).unwrap().unwrap();
    let closed = (v - 1.0 / 3f64.log2()).abs() < 1e-15 && (v - 0.63093).abs() < 5e-6;
    verdict(
        mismatches == 0 && closed,
        format!("1000 lists, {mismatches} mismatches; rank-2 single positive nDCG {v:.5}"),
    )
}

fn loss_closed_forms() -> Verdict {
    let l = multitask_loss(&[0.5], &[1.0], 0.5, 1.0, LossWeights::default()).unwrap();
    let two_ln2 = (l.total - 2.0 * 2f64.ln()).abs() < 1e-12 && (l.total - 1.38629).abs() < 5e-6;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut exact = true;
    for _ in 0..1000 {
        let m = rng.gen_range(1..=10);
        let p: Vec<f64> = (0..m).map(|_| rng.gen_range(0.01..0.99)).collect();
        let y: Vec<f64> = (0..m)
            .map(|_| f64::from(u8::from(rng.gen_bool(0.3))))
            .collect();
        let parts = multitask_loss(
            &p,
            &y,
            rng.gen_range(0.01..0.99),
            list_label(&y),
            LossWeights::new(0.0).unwrap(),
        )
        .unwrap();
        exact &= parts.total == parts.item;
    }
    verdict(
        two_ln2 && exact,
        format!(
            "all-0.5 positive case {:.12}; alpha=0 equals item loss exactly: {exact}",
            l.total
        ),
    )
}

fn base_config() -> TrainConfig {
    TrainConfig::default()
}

fn summary(values: &[f64]) -> String {
    Summary::of(values).map_or_else(|| "-".into(), |s| s.to_string())
}

fn fmt_list(values: &[f64]) -> String {
    values
        .iter()
        .map(|v| format!("{v:+.4}"))
        .collect::<Vec<_>>()
        .join(" ")
}

fn table_one(res: &AblationResult) -> Verdict {
    let full = res.values(Variant::Full, "ndcg@5");
    let point = res.values(Variant::Pointwise, "ndcg@5");
    let gains: Vec<f64> = full.iter().zip(&point).map(|(f, p)| f - p).collect();
    let wins = gains.iter().filter(|&&g| g >= 0.01).count();
    verdict(
        gains.len() == SEEDS.len() && wins >= 4,
        format!(
            "nDCG@5 full {} vs pointwise {}; gains {}; {wins}/5 seeds >= +0.01",
            summary(&full),
            summary(&point),
            fmt_list(&gains)
        ),
    )
}

fn table_two(res: &AblationResult) -> Verdict {
    let with = res.values(Variant::Full, "gauc@5");
    let without = res.values(Variant::NoAux, "gauc@5");
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    verdict(
        with.len() == SEEDS.len() && without.len() == SEEDS.len() && mean(&with) >= mean(&without),
        format!(
            "gAUC@5 alpha=1 {} vs alpha=0 {}",
            summary(&with),
            summary(&without)
        ),
    )
}

fn history_sweep(res: &AblationResult) -> Verdict {
    let means: Vec<f64> = SWEEP
        .iter()
        .map(|&n| {
            Summary::of(&res.values(Variant::History(n), "ndcg@5")).map_or(f64::NAN, |s| s.mean)
        })
        .collect();
    let drops: Vec<f64> = means
        .windows(2)
        .map(|w| w[0] - w[1])
        .filter(|&d| d > 0.0 || d.is_nan())
        .collect();
    let pass = means.iter().all(|m| m.is_finite())
        && (drops.is_empty() || (drops.len() == 1 && drops[0] <= 0.002));
    let cells: Vec<String> = SWEEP
        .iter()
        .map(|&n| {
            format!(
                "n={n} {}",
                summary(&res.values(Variant::History(n), "ndcg@5"))
            )
        })
        .collect();
    verdict(
        pass,
        format!("nDCG@5 {}; inversions {}", cells.join(", "), drops.len()),
    )
}

fn null_control(res: &AblationResult) -> Verdict {
    let full = res.values(Variant::Full, "gauc@5");
    let point = res.values(Variant::Pointwise, "gauc@5");
    let gains: Vec<f64> = full.iter().zip(&point).map(|(f, p)| f - p).collect();
    let mean = gains.iter().sum::<f64>() / gains.len() as f64;
    verdict(
        gains.len() == SEEDS.len() && mean.abs() < 0.01,
        format!(
            "gAUC@5 gain {} (mean {mean:+.4}); per seed {}",
            summary(&gains),
            fmt_list(&gains)
        ),
    )
}

fn determinism_and_persistence() -> Verdict {
    let raw = generate(&SynthConfig {
        num_users: 300,
        seed: 10,
        ..SynthConfig::default()
    })
    .unwrap()
    .dataset();
    let cfg = TrainConfig {
        max_epochs: 3,
        seed: 10,
        ..base_config()
    };
    let ranked = rank_splits(&train_ranker(&raw, &cfg).unwrap(), &raw).unwrap();
    let run = || {
        let init = PearModel::init(
            &ranked.schema,
            cfg.model(),
            &mut stream_rng(cfg.seed, streams::INIT),
        )
        .unwrap();
        train(init, &cfg, &ranked.train, &ranked.val).unwrap()
    };
    let (a, b) = (run(), run());
    let logs_equal = a.log_text().as_bytes() == b.log_text().as_bytes();
    let ckpt = Checkpoint {
        model: SavedModel::Pear(a.model),
        config: cfg.clone(),
        epoch: a.best_epoch,
        best_metric: a.best_metric,
    };
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("pear.ckpt");
    ckpt.save(&path).unwrap();
    let loaded = Checkpoint::load(&path).unwrap();
    let before = ckpt
        .model
        .evaluate("full", &ranked.test, &[5, 10], cfg.alpha)
        .unwrap();
    let after = loaded
        .model
        .evaluate("full", &ranked.test, &[5, 10], cfg.alpha)
        .unwrap();
    let preds_equal = ckpt.model.predict_many(&ranked.test).unwrap()
        == loaded.model.predict_many(&ranked.test).unwrap();
    verdict(
        logs_equal && before == after && preds_equal,
        format!(
            "{} epoch log lines identical: {logs_equal}; reloaded evaluation identical: {}",
            a.epochs.len(),
            before == after && preds_equal
        ),
    )
}

fn main() -> ExitCode {
    let mut failed = 0;
    let mut report = |id: usize, name: &str, v: Verdict| {
        println!(
            "{} {id:>2} {name}: {}",
            if v.pass { "PASS" } else { "FAIL" },
            v.detail
        );
        failed += usize::from(!v.pass);
    };
    report(1, "gradient correctness", gradient_correctness());
    report(2, "merged attention equivalence", merged_equivalence());
    report(
        3,
        "attention stochasticity and equivariance",
        stochasticity_and_equivariance(),
    );
    report(4, "metric oracles", metric_oracles());
    report(5, "loss closed forms", loss_closed_forms());

    let base = base_config();
    let planted = generate(&SynthConfig::default()).unwrap().dataset();
    let mut variants = vec![Variant::Full, Variant::NoAux, Variant::Pointwise];
    variants.extend(SWEEP.iter().map(|&n| Variant::History(n)));
    let main_run = ablate(&planted, &base, &variants, &SEEDS).unwrap();
    report(
        6,
        "re-ranking beats the initial ranker",
        table_one(&main_run),
    );
    report(7, "auxiliary list task", table_two(&main_run));
    report(8, "history length sweep", history_sweep(&main_run));

    let null = generate(&SynthConfig {
        theta_hist: 0.0,
        theta_div: 0.0,
        ..SynthConfig::default()
    })
    .unwrap()
    .dataset();
    let null_run = ablate(&null, &base, &[Variant::Full, Variant::Pointwise], &SEEDS).unwrap();
    report(9, "null-effect control", null_control(&null_run));
    report(
        10,
        "determinism and persistence",
        determinism_and_persistence(),
    );

    println!("{} of 10 criteria passed", 10 - failed);
    // red criteria are reported, not fatal, unless strict mode is asked for
    let strict = std::env::var_os("PEAR_ACCEPTANCE_STRICT").is_some_and(|v| v == "1");
    if failed > 0 && strict {
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
