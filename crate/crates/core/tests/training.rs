mod common;

use std::cell::RefCell;

use ctxsent::data::LabelSchema;
use ctxsent::model::{Checkpoint, EncoderClassifier, InputMode};
use ctxsent::training::*;

use common::fixtures::*;

fn opts(dir: Option<&std::path::Path>) -> TrainOptions {
    TrainOptions {
        input_mode: InputMode::ContextConditioned,
        run_dir: dir.map(|d| d.to_path_buf()),
    }
}

#[test]
fn separable_toy_reaches_near_perfect_validation() {
    let schema = LabelSchema::binary();
    let data = separable_dataset(240, 1);
    let vocab = vocab_for(&data);
    let out = train(
        small_model(&vocab, &schema, 2),
        &vocab,
        &data,
        &schema,
        &fast_train_config(3, 5),
        &opts(None),
    )
    .unwrap();
    let last = out.report.epochs.last().unwrap();
    assert!(out.report.epochs.len() <= 5);
    assert!(out.report.best_f1_macro >= 0.99, "{:?}", out.report.epochs);
    assert!(last.val_f1_macro >= 0.99 || out.report.stop_reason == StopReason::EarlyStop);
}

#[test]
fn seeded_runs_write_identical_checkpoints() {
    let schema = LabelSchema::binary();
    let data = separable_dataset(120, 4);
    let vocab = vocab_for(&data);
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    let reports: Vec<TrainReport> = dirs
        .iter()
        .map(|d| {
            train(
                small_model(&vocab, &schema, 5),
                &vocab,
                &data,
                &schema,
                &fast_train_config(6, 3),
                &opts(Some(d.path())),
            )
            .unwrap()
            .report
        })
        .collect();
    for f in [
        "best.ckpt",
        "final.ckpt",
        "metrics.csv",
        "config.toml",
        "vocab.txt",
    ] {
        let a = std::fs::read(dirs[0].path().join(f)).unwrap();
        let b = std::fs::read(dirs[1].path().join(f)).unwrap();
        assert!(a == b, "{f} differs between identical runs");
    }
    assert_eq!(reports[0].epochs, reports[1].epochs);
}

#[test]
fn different_seed_changes_the_run() {
    let schema = LabelSchema::binary();
    let data = separable_dataset(120, 4);
    let vocab = vocab_for(&data);
    let run = |seed| {
        train(
            small_model(&vocab, &schema, 5),
            &vocab,
            &data,
            &schema,
            &fast_train_config(seed, 1),
            &opts(None),
        )
        .unwrap()
        .report
        .epochs
    };
    assert_ne!(run(1)[0].train_loss, run(2)[0].train_loss);
}

#[test]
fn interrupted_then_resumed_equals_uninterrupted() {
    let schema = LabelSchema::binary();
    let data = separable_dataset(120, 7);
    let vocab = vocab_for(&data);
    let mut cfg = fast_train_config(8, 5);
    cfg.patience = 5;
    cfg.learning_rate = 2e-4;

    let full_dir = tempfile::tempdir().unwrap();
    let full = train(
        small_model(&vocab, &schema, 9),
        &vocab,
        &data,
        &schema,
        &cfg,
        &opts(Some(full_dir.path())),
    )
    .unwrap();

    let part_dir = tempfile::tempdir().unwrap();
    let short = TrainConfig {
        max_epochs: 2,
        ..cfg.clone()
    };
    train(
        small_model(&vocab, &schema, 9),
        &vocab,
        &data,
        &schema,
        &short,
        &opts(Some(part_dir.path())),
    )
    .unwrap();
    let state = Checkpoint::load(&part_dir.path().join("final.ckpt")).unwrap();
    let resumed = resume(
        &state,
        &vocab,
        &data,
        &schema,
        &cfg,
        &opts(Some(part_dir.path())),
    )
    .unwrap();

    assert_eq!(resumed.report.epochs.len(), full.report.epochs.len());
    for (a, b) in resumed.report.epochs.iter().zip(&full.report.epochs) {
        assert!((a.val_f1_macro - b.val_f1_macro).abs() <= 1e-6);
        assert_eq!(a.train_loss.to_bits(), b.train_loss.to_bits());
    }
    assert_eq!(resumed.best, full.best);
    let a = std::fs::read(part_dir.path().join("final.ckpt")).unwrap();
    let b = std::fs::read(full_dir.path().join("final.ckpt")).unwrap();
    assert!(a == b, "final state differs after resume");
}

#[test]
fn resume_from_epoch_zero_is_a_fresh_run() {
    let schema = LabelSchema::binary();
    let data = separable_dataset(80, 2);
    let vocab = vocab_for(&data);
    let cfg = fast_train_config(1, 2);
    let dir = tempfile::tempdir().unwrap();
    let zero = TrainConfig {
        max_epochs: 0,
        ..cfg.clone()
    };
    train(
        small_model(&vocab, &schema, 3),
        &vocab,
        &data,
        &schema,
        &zero,
        &opts(Some(dir.path())),
    )
    .unwrap();
    let state = Checkpoint::load(&dir.path().join("final.ckpt")).unwrap();
    let resumed = resume(&state, &vocab, &data, &schema, &cfg, &opts(None)).unwrap();
    let fresh = train(
        small_model(&vocab, &schema, 3),
        &vocab,
        &data,
        &schema,
        &cfg,
        &opts(None),
    )
    .unwrap();
    assert_eq!(resumed.report.epochs, fresh.report.epochs);
    assert_eq!(resumed.best, fresh.best);
}

#[test]
fn resume_rejects_a_changed_config() {
    let schema = LabelSchema::binary();
    let data = separable_dataset(60, 2);
    let vocab = vocab_for(&data);
    let cfg = fast_train_config(1, 1);
    let dir = tempfile::tempdir().unwrap();
    train(
        small_model(&vocab, &schema, 3),
        &vocab,
        &data,
        &schema,
        &cfg,
        &opts(Some(dir.path())),
    )
    .unwrap();
    let state = Checkpoint::load(&dir.path().join("final.ckpt")).unwrap();
    let other = TrainConfig {
        learning_rate: 5e-4,
        ..cfg.clone()
    };
    assert!(resume(&state, &vocab, &data, &schema, &other, &opts(None)).is_err());
    let best = Checkpoint::load(&dir.path().join("best.ckpt")).unwrap();
    assert!(resume(&best, &vocab, &data, &schema, &cfg, &opts(None)).is_err());
}

/// Replays a fixed macro-F1 sequence and keeps a copy of the model it saw
/// at every epoch.
struct Scripted {
    f1: Vec<f64>,
    seen: RefCell<Vec<EncoderClassifier>>,
}

impl Validator for Scripted {
    fn validate(&mut self, epoch: usize, model: &EncoderClassifier) -> ctxsent::Result<(f64, f64)> {
        self.seen.borrow_mut().push(model.clone());
        Ok((self.f1[epoch - 1], 0.0))
    }
}

fn scripted_run(
    f1: &[f64],
    max_epochs: usize,
    dir: Option<&std::path::Path>,
) -> (TrainOutcome, Vec<EncoderClassifier>) {
    let schema = LabelSchema::binary();
    let data = separable_dataset(40, 5);
    let vocab = vocab_for(&data);
    let mut v = Scripted {
        f1: f1.to_vec(),
        seen: RefCell::new(Vec::new()),
    };
    let cfg = fast_train_config(2, max_epochs);
    let out = train_with_validator(
        small_model(&vocab, &schema, 1),
        &vocab,
        &data,
        &schema,
        &cfg,
        &opts(dir),
        &mut v,
    )
    .unwrap();
    (out, v.seen.into_inner())
}

#[test]
fn patience_walkthrough_returns_best_epoch_model() {
    let dir = tempfile::tempdir().unwrap();
    let (out, seen) = scripted_run(&[0.5, 0.6, 0.58, 0.59, 0.9], 5, Some(dir.path()));
    assert_eq!(out.report.epochs.len(), 4);
    assert_eq!(out.report.best_epoch, 2);
    assert_eq!(out.report.stop_reason, StopReason::EarlyStop);
    assert_eq!(out.best, seen[1]);
    assert_ne!(out.best, seen[3]);
    let best = Checkpoint::load(&dir.path().join("best.ckpt")).unwrap();
    assert_eq!(best.model, seen[1]);
    assert_eq!(best.metadata["epoch"], 2);
}

#[test]
fn monotone_improvement_runs_to_max_epochs() {
    let (out, seen) = scripted_run(&[0.1, 0.2, 0.3, 0.4, 0.5], 5, None);
    assert_eq!(out.report.stop_reason, StopReason::MaxEpochs);
    assert_eq!(out.report.best_epoch, 5);
    assert_eq!(out.best, seen[4]);
}

#[test]
fn ties_keep_the_earliest_epoch() {
    let (out, _) = scripted_run(&[0.7, 0.7, 0.7], 5, None);
    assert_eq!(out.report.best_epoch, 1);
    assert_eq!(out.report.epochs.len(), 3);
}

#[test]
fn exhausted_patience_resumes_to_an_immediate_stop() {
    let dir = tempfile::tempdir().unwrap();
    let (first, _) = scripted_run(&[0.5, 0.4, 0.3], 5, Some(dir.path()));
    assert_eq!(first.report.stop_reason, StopReason::EarlyStop);
    let schema = LabelSchema::binary();
    let data = separable_dataset(40, 5);
    let vocab = vocab_for(&data);
    let state = Checkpoint::load(&dir.path().join("final.ckpt")).unwrap();
    let again = resume(
        &state,
        &vocab,
        &data,
        &schema,
        &fast_train_config(2, 5),
        &opts(None),
    )
    .unwrap();
    assert_eq!(again.report.epochs.len(), 3);
    assert_eq!(again.report.stop_reason, StopReason::EarlyStop);
    assert_eq!(again.best, first.best);
}

#[test]
fn uniform_weights_match_inverse_frequency_on_balanced_data() {
    let schema = LabelSchema::binary();
    let data = separable_dataset(120, 3);
    let vocab = vocab_for(&data);
    let run = |mode| {
        let cfg = TrainConfig {
            class_weight_mode: mode,
            ..fast_train_config(4, 2)
        };
        train(
            small_model(&vocab, &schema, 1),
            &vocab,
            &data,
            &schema,
            &cfg,
            &opts(None),
        )
        .unwrap()
    };
    let a = run(ClassWeightMode::InverseFrequency);
    let b = run(ClassWeightMode::Uniform);
    assert_eq!(a.report.class_weights, vec![1.0, 1.0]);
    assert_eq!(a.report.epochs, b.report.epochs);
    assert_eq!(a.best, b.best);
}

#[test]
fn run_directory_layout() {
    let schema = LabelSchema::binary();
    let data = separable_dataset(60, 3);
    let vocab = vocab_for(&data);
    let dir = tempfile::tempdir().unwrap();
    train(
        small_model(&vocab, &schema, 1),
        &vocab,
        &data,
        &schema,
        &fast_train_config(4, 2),
        &opts(Some(dir.path())),
    )
    .unwrap();
    let csv = std::fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(
        lines.next(),
        Some("epoch,train_loss,val_f1_macro,val_accuracy")
    );
    assert_eq!(lines.count(), 2);
    for f in [
        "config.toml",
        "vocab.txt",
        "train.log",
        "best.ckpt",
        "final.ckpt",
    ] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
}
