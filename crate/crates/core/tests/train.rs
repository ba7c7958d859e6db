use pear_core::ablation::{rank_splits, train_ranker};
use pear_core::checkpoint::{Checkpoint, SavedModel};
use pear_core::datasim::{generate, Dataset, SynthConfig};
use pear_core::model::{PearModel, RankModel};
use pear_core::objectives::LossWeights;
use pear_core::report::{evaluate, evaluate_scores};
use pear_core::train::{stream_rng, streams, train, validation_gauc, TrainConfig, TrainOutcome};

fn data(users: usize) -> Dataset {
    generate(&SynthConfig {
        num_users: users,
        seed: 3,
        ..SynthConfig::default()
    })
    .unwrap()
    .dataset()
}

fn small() -> TrainConfig {
    TrainConfig {
        hidden: 8,
        d: 8,
        d_h: 8,
        embed_dim: 4,
        history_len: 8,
        max_epochs: 4,
        batch_size: 32,
        seed: 9,
        ..TrainConfig::default()
    }
}

fn fit(ranked: &Dataset, cfg: &TrainConfig) -> TrainOutcome<PearModel> {
    let init = PearModel::init(
        &ranked.schema,
        cfg.model(),
        &mut stream_rng(cfg.seed, streams::INIT),
    )
    .unwrap();
    train(init, cfg, &ranked.train, &ranked.val).unwrap()
}

fn ranked(users: usize, cfg: &TrainConfig) -> Dataset {
    let raw = data(users);
    rank_splits(&train_ranker(&raw, cfg).unwrap(), &raw).unwrap()
}

#[test]
fn reruns_produce_identical_logs_and_parameters() {
    let cfg = small();
    let ds = ranked(150, &cfg);
    let (a, b) = (fit(&ds, &cfg), fit(&ds, &cfg));
    assert!(!a.log_text().is_empty());
    assert_eq!(a.log_text(), b.log_text());
    assert_eq!(a.model, b.model);
    let mut other = cfg.clone();
    other.seed += 1;
    assert_ne!(a.log_text(), fit(&ds, &other).log_text());
}

#[test]
fn returns_the_best_epoch_not_the_last() {
    // a large step size overfits quickly so the validation metric peaks early
    let cfg = TrainConfig {
        learning_rate: 0.05,
        max_epochs: 12,
        dropout: 0.0,
        ..small()
    };
    let ds = ranked(150, &cfg);
    let out = fit(&ds, &cfg);
    let vals: Vec<f64> = out.epochs.iter().map(|e| e.val_metric.unwrap()).collect();
    let peak = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    assert_eq!(out.best_metric, Some(peak));
    assert_eq!(vals[out.best_epoch - 1], peak);
    assert!(out.best_epoch < out.epochs.len(), "{}", out.log_text());
    // stopped exactly `patience` epochs after the best one
    assert_eq!(out.epochs.len(), out.best_epoch + cfg.patience);
    let again = validation_gauc(&out.model, &ds.val, cfg.stop_k()).unwrap();
    assert_eq!(again, Some(peak));
}

#[test]
fn checkpoint_round_trip_preserves_evaluation_exactly() {
    let cfg = small();
    let ds = ranked(120, &cfg);
    let out = fit(&ds, &cfg);
    let ckpt = Checkpoint {
        model: SavedModel::Pear(out.model),
        config: cfg.clone(),
        epoch: out.best_epoch,
        best_metric: out.best_metric,
    };
    let before = ckpt
        .model
        .evaluate("full", &ds.test, &[5, 10, 30], cfg.alpha)
        .unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.ckpt");
    ckpt.save(&path).unwrap();
    let loaded = Checkpoint::load(&path).unwrap();
    assert_eq!(loaded, ckpt);
    let after = loaded
        .model
        .evaluate("full", &ds.test, &[5, 10, 30], cfg.alpha)
        .unwrap();
    assert_eq!(before, after);
    assert_eq!(before.to_kv_text(), after.to_kv_text());
    // saving the loaded checkpoint gives the same bytes
    assert_eq!(std::fs::read(&path).unwrap(), loaded.to_bytes());
}

#[test]
fn ranker_checkpoint_round_trips_and_rejects_foreign_schemas() {
    let cfg = small();
    let raw = data(80);
    let ckpt = Checkpoint {
        model: SavedModel::Ranker(train_ranker(&raw, &cfg).unwrap()),
        config: cfg,
        epoch: 1,
        best_metric: None,
    };
    let back = Checkpoint::from_bytes(&ckpt.to_bytes(), std::path::Path::new("mem")).unwrap();
    assert_eq!(back, ckpt);
    let mut other = raw.schema.clone();
    other.item_fields[0].cardinality += 1;
    assert!(back.check_schema(&raw.schema).is_ok());
    assert!(matches!(
        back.check_schema(&other),
        Err(pear_core::Error::SchemaMismatch(_))
    ));
}

#[test]
fn ranker_order_reproduces_the_baseline_row() {
    let cfg = small();
    let raw = data(150);
    let ranker = train_ranker(&raw, &cfg).unwrap();
    let ranked = rank_splits(&ranker, &raw).unwrap();
    let ks = [1, 5, 10, 30];
    let baseline = evaluate(
        "pointwise",
        &ranker,
        &ranked.test,
        &ks,
        LossWeights::default(),
    )
    .unwrap();
    // the same scores over the unordered candidates
    let raw_eval = evaluate("pointwise", &ranker, &raw.test, &ks, LossWeights::default()).unwrap();
    // scores that only encode the displayed order
    let positional: Vec<Vec<f64>> = ranked
        .test
        .iter()
        .map(|s| (0..s.candidates.len()).map(|i| -(i as f64)).collect())
        .collect();
    let order_only = evaluate_scores("pointwise", &ranked.test, &positional, &ks).unwrap();
    for k in ks {
        assert_eq!(baseline.ndcg(k), raw_eval.ndcg(k));
        assert_eq!(baseline.gauc(k), raw_eval.gauc(k));
        assert_eq!(baseline.ndcg(k), order_only.ndcg(k));
        assert_eq!(baseline.gauc(k), order_only.gauc(k));
    }
    // K beyond the list length is the untruncated metric
    assert_eq!(baseline.ndcg(10), baseline.ndcg(30));
    assert_eq!(baseline.gauc(10), baseline.gauc(30));
}

#[test]
fn zero_alpha_training_loss_is_the_item_loss() {
    let cfg = TrainConfig {
        alpha: 0.0,
        ..small()
    };
    let ds = ranked(100, &cfg);
    let out = fit(&ds, &cfg);
    for e in &out.epochs {
        assert_eq!(e.loss, e.item_loss);
        assert!(e.list_loss.is_some());
    }
    let r = evaluate(
        "no-aux",
        &out.model,
        &ds.test,
        &[5],
        LossWeights::new(0.0).unwrap(),
    )
    .unwrap();
    assert_eq!(r.get("loss"), r.get("loss.item"));
}

#[test]
fn no_history_model_scores_ignore_history() {
    let cfg = TrainConfig {
        history_len: 0,
        max_epochs: 2,
        ..small()
    };
    let ds = ranked(80, &cfg);
    let model = fit(&ds, &cfg).model;
    let mut mutated = ds.test.clone();
    for s in &mut mutated {
        s.history.reverse();
        s.history.truncate(3);
    }
    assert_eq!(
        model.predict_many(&ds.test).unwrap(),
        model.predict_many(&mutated).unwrap()
    );
}
