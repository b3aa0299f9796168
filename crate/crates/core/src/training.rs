//! Mini-batch training with class-weighted loss, per-epoch validation on
//! macro-F1, patience-based early stopping and resumable run state.

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{
    inverse_frequency_weights, label_counts, stratified_split, LabelSchema, PairExample,
};
use crate::error::{Error, Result};
use crate::metrics::{confusion, evaluate};
use crate::model::{argmax, Checkpoint, EncoderClassifier, InputMode, ModelConfig};
use crate::nn::{AdamW, AdamWConfig, Parameter, Tensor};
use crate::tokenizer::{Encoding, Vocab};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ClassWeightMode {
    #[default]
    InverseFrequency,
    Uniform,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum LrSchedule {
    #[default]
    Constant,
    /// Linear ramp from `lr / warmup_steps` to `lr`, then constant.
    LinearWarmup { warmup_steps: u64 },
}

impl LrSchedule {
    pub fn rate(&self, base: f64, step: u64) -> f64 {
        match *self {
            LrSchedule::Constant => base,
            LrSchedule::LinearWarmup { warmup_steps } if warmup_steps > 0 => {
                base * ((step + 1) as f64 / warmup_steps as f64).min(1.0)
            }
            LrSchedule::LinearWarmup { .. } => base,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub val_fraction: f64,
    pub class_weight_mode: ClassWeightMode,
    /// Drives the validation split, per-epoch shuffles and dropout masks.
    pub seed: u64,
    /// Smallest macro-F1 gain that counts as an improvement.
    pub min_improvement: f64,
    pub optimizer: AdamWConfig,
    pub schedule: LrSchedule,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 2e-5,
            batch_size: 16,
            max_epochs: 5,
            patience: 2,
            val_fraction: 0.15,
            class_weight_mode: ClassWeightMode::InverseFrequency,
            seed: 0,
            min_improvement: 1e-6,
            optimizer: AdamWConfig::default(),
            schedule: LrSchedule::Constant,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            return fail(format!(
                "val_fraction must lie in (0, 1), got {}",
                self.val_fraction
            ));
        }
        if self.patience == 0 {
            return fail("patience must be at least 1".into());
        }
        if self.batch_size == 0 {
            return fail("batch_size must be at least 1".into());
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return fail(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            ));
        }
        Ok(())
    }

    /// Equal in everything a resumed run must share with the original.
    fn resumable_as(&self, other: &TrainConfig) -> bool {
        TrainConfig {
            max_epochs: 0,
            ..self.clone()
        } == TrainConfig {
            max_epochs: 0,
            ..other.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_f1_macro: f64,
    pub val_accuracy: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    MaxEpochs,
    EarlyStop,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_f1_macro: f64,
    pub stop_reason: StopReason,
    pub learning_rate: f64,
    pub class_weights: Vec<f64>,
    pub wall_seconds: f64,
}

/// Patience rule over validation macro-F1. Epochs are 1-based.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EarlyStopping {
    pub patience: usize,
    pub min_improvement: f64,
    pub best_epoch: usize,
    pub best_f1: f64,
    pub bad_epochs: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Observation {
    pub improved: bool,
    pub stop: bool,
}

impl EarlyStopping {
    pub fn new(patience: usize, min_improvement: f64) -> Self {
        EarlyStopping {
            patience,
            min_improvement,
            best_epoch: 0,
            best_f1: 0.0,
            bad_epochs: 0,
        }
    }

    pub fn observe(&mut self, epoch: usize, f1: f64) -> Observation {
        let improved = self.best_epoch == 0 || f1 > self.best_f1 + self.min_improvement;
        if improved {
            self.best_epoch = epoch;
            self.best_f1 = f1;
            self.bad_epochs = 0;
        } else {
            self.bad_epochs += 1;
        }
        Observation {
            improved,
            stop: self.exhausted(),
        }
    }

    pub fn exhausted(&self) -> bool {
        self.bad_epochs >= self.patience
    }
}

/// Scores the model after each epoch. Returns `(macro_f1, accuracy)`.
pub trait Validator {
    fn validate(&mut self, epoch: usize, model: &EncoderClassifier) -> Result<(f64, f64)>;
}

/// Macro-F1 and accuracy on a fixed encoded validation set.
pub struct HoldoutValidator {
    encodings: Vec<Encoding>,
    labels: Vec<usize>,
    classes: Vec<String>,
}

impl HoldoutValidator {
    pub fn new(encodings: Vec<Encoding>, labels: Vec<usize>, schema: &LabelSchema) -> Self {
        HoldoutValidator {
            encodings,
            labels,
            classes: schema.classes.clone(),
        }
    }
}

impl Validator for HoldoutValidator {
    fn validate(&mut self, _epoch: usize, model: &EncoderClassifier) -> Result<(f64, f64)> {
        let preds = predict_labels(model, &self.encodings)?;
        let report = evaluate(
            &confusion(&self.labels, &preds, &self.classes)?,
            "validation",
            "validation",
        )?;
        Ok((report.f1_macro, report.accuracy))
    }
}

/// Argmax labels for pre-encoded pairs, computed in parallel, in input order.
pub fn predict_labels(model: &EncoderClassifier, encodings: &[Encoding]) -> Result<Vec<usize>> {
    encodings
        .par_iter()
        .map(|e| {
            model
                .forward_example(e, None)
                .map(|(logits, _)| argmax(&logits))
        })
        .collect()
}

pub fn encode_examples(
    examples: &[PairExample],
    vocab: &Vocab,
    mode: InputMode,
    max_len: usize,
) -> Result<Vec<Encoding>> {
    examples
        .par_iter()
        .map(|e| mode.encode(vocab, &e.context, &e.text, max_len))
        .collect()
}

#[derive(Debug, Clone, Default)]
pub struct TrainOptions {
    pub input_mode: InputMode,
    /// When set, the run directory receives the config snapshot, vocabulary,
    /// `metrics.csv`, `train.log`, `best.ckpt` and `final.ckpt`.
    pub run_dir: Option<PathBuf>,
}

pub struct TrainOutcome {
    /// Weights from the best validation epoch.
    pub best: EncoderClassifier,
    /// Full state after the last completed epoch; resumable.
    pub state: Checkpoint,
    pub report: TrainReport,
}

#[derive(Serialize, Deserialize)]
struct StateMeta {
    kind: String,
    epoch: usize,
    optimizer_step: u64,
    early_stopping: EarlyStopping,
    history: Vec<EpochRecord>,
    stop_reason: Option<StopReason>,
    train_config: TrainConfig,
}

struct Session {
    model: EncoderClassifier,
    optimizer: AdamW,
    best: EncoderClassifier,
    stopper: EarlyStopping,
    history: Vec<EpochRecord>,
    epoch: usize,
    stop_reason: Option<StopReason>,
}

fn keyed_rng(seed: u64, a: u64, tag: u8) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&a.to_le_bytes());
    key[31] = tag;
    ChaCha8Rng::from_seed(key)
}

const SHUFFLE_TAG: u8 = 1;

struct RunFiles {
    dir: PathBuf,
}

impl RunFiles {
    fn create(
        dir: &Path,
        model: &ModelConfig,
        config: &TrainConfig,
        vocab: &Vocab,
        mode: InputMode,
        schema: &LabelSchema,
    ) -> Result<Self> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        #[derive(Serialize)]
        struct Snapshot<'a> {
            input_mode: InputMode,
            schema: &'a str,
            model: &'a ModelConfig,
            train: &'a TrainConfig,
        }
        let snapshot = toml::to_string(&Snapshot {
            input_mode: mode,
            schema: &schema.name,
            model,
            train: config,
        })
        .map_err(|e| Error::Config(e.to_string()))?;
        let path = dir.join("config.toml");
        fs::write(&path, snapshot).map_err(|e| Error::io(&path, e))?;
        vocab.save(&dir.join("vocab.txt"))?;
        Ok(RunFiles {
            dir: dir.to_path_buf(),
        })
    }

    fn log(&self, line: &str) -> Result<()> {
        let path = self.dir.join("train.log");
        let mut f = fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|e| Error::io(&path, e))?;
        writeln!(f, "{line}").map_err(|e| Error::io(&path, e))
    }

    fn metrics(&self, history: &[EpochRecord]) -> Result<()> {
        let mut csv = String::from("epoch,train_loss,val_f1_macro,val_accuracy\n");
        for r in history {
            let _ = writeln!(
                csv,
                "{},{},{},{}",
                r.epoch, r.train_loss, r.val_f1_macro, r.val_accuracy
            );
        }
        let path = self.dir.join("metrics.csv");
        fs::write(&path, csv).map_err(|e| Error::io(&path, e))
    }
}

struct Context<'a> {
    vocab: &'a Vocab,
    schema: &'a LabelSchema,
    config: &'a TrainConfig,
    mode: InputMode,
    encodings: Vec<Encoding>,
    labels: Vec<usize>,
    class_weights: Vec<f64>,
    files: Option<RunFiles>,
}

impl Context<'_> {
    fn best_checkpoint(&self, s: &Session) -> Checkpoint {
        let mut c = Checkpoint::new(
            s.best.clone(),
            self.mode,
            &self.schema.name,
            &self.vocab.fingerprint(),
        );
        c.metadata = serde_json::json!({
            "kind": "best",
            "epoch": s.stopper.best_epoch,
            "best_f1_macro": s.stopper.best_f1,
            "dropout_seed": self.config.seed,
            "train_config": self.config,
        });
        c
    }

    fn state_checkpoint(&self, s: &Session) -> Result<Checkpoint> {
        let mut c = Checkpoint::new(
            s.model.clone(),
            self.mode,
            &self.schema.name,
            &self.vocab.fingerprint(),
        );
        c.metadata = serde_json::to_value(StateMeta {
            kind: "train_state".into(),
            epoch: s.epoch,
            optimizer_step: s.optimizer.step,
            early_stopping: s.stopper.clone(),
            history: s.history.clone(),
            stop_reason: s.stop_reason,
            train_config: self.config.clone(),
        })?;
        let names: Vec<String> = s
            .model
            .weights
            .named()
            .into_iter()
            .map(|(n, _)| n)
            .collect();
        for (name, m) in names.iter().zip(&s.optimizer.first_moment) {
            c.extra.push((format!("optim.m.{name}"), m.clone()));
        }
        for (name, v) in names.iter().zip(&s.optimizer.second_moment) {
            c.extra.push((format!("optim.v.{name}"), v.clone()));
        }
        for (name, t) in s.best.weights.named() {
            c.extra.push((format!("best.{name}"), t.clone()));
        }
        Ok(c)
    }
}

fn check_compat(model: &EncoderClassifier, vocab: &Vocab, schema: &LabelSchema) -> Result<()> {
    if model.config.n_classes != schema.len() {
        return Err(Error::Config(format!(
            "model has {} classes but schema `{}` has {}",
            model.config.n_classes,
            schema.name,
            schema.len()
        )));
    }
    if vocab.len() > model.config.vocab_size {
        return Err(Error::Config(format!(
            "vocabulary of {} tokens exceeds model vocab_size {}",
            vocab.len(),
            model.config.vocab_size
        )));
    }
    Ok(())
}

fn run_epoch(ctx: &Context<'_>, s: &mut Session, epoch: usize) -> Result<f64> {
    let cfg = ctx.config;
    let mut order: Vec<usize> = (0..ctx.encodings.len()).collect();
    order.shuffle(&mut keyed_rng(cfg.seed, epoch as u64, SHUFFLE_TAG));
    let mut loss_sum = 0.0;
    for chunk in order.chunks(cfg.batch_size) {
        let batch: Vec<Encoding> = chunk.iter().map(|&i| ctx.encodings[i].clone()).collect();
        let labels: Vec<usize> = chunk.iter().map(|&i| ctx.labels[i]).collect();
        let step = s.optimizer.step;
        let diag = |e: Error| Error::Training(format!("epoch {epoch}, step {}: {e}", step + 1));
        let (loss, grads) = s
            .model
            .loss_and_gradients(&batch, &labels, &ctx.class_weights, Some((cfg.seed, step)))
            .map_err(diag)?;
        let names: Vec<String> = s
            .model
            .weights
            .named()
            .into_iter()
            .map(|(n, _)| n)
            .collect();
        let grad_refs: Vec<&Tensor> = grads.named().into_iter().map(|(_, t)| t).collect();
        let mut params: Vec<Parameter<'_>> = names
            .iter()
            .zip(s.model.weights.tensors_mut())
            .zip(grad_refs)
            .map(|((name, value), grad)| Parameter { name, value, grad })
            .collect();
        let lr = cfg.schedule.rate(cfg.learning_rate, step);
        s.optimizer.step(&mut params, lr).map_err(diag)?;
        loss_sum += loss * chunk.len() as f64;
    }
    Ok(loss_sum / ctx.encodings.len() as f64)
}

fn run(ctx: &Context<'_>, mut s: Session, validator: &mut dyn Validator) -> Result<TrainOutcome> {
    let started = Instant::now();
    let cfg = ctx.config;
    if s.stop_reason == Some(StopReason::EarlyStop) || s.stopper.exhausted() {
        s.stop_reason = Some(StopReason::EarlyStop);
    } else {
        s.stop_reason = None;
        while s.epoch < cfg.max_epochs {
            let epoch = s.epoch + 1;
            let train_loss = run_epoch(ctx, &mut s, epoch)?;
            let (f1, acc) = validator.validate(epoch, &s.model)?;
            s.epoch = epoch;
            s.history.push(EpochRecord {
                epoch,
                train_loss,
                val_f1_macro: f1,
                val_accuracy: acc,
            });
            let obs = s.stopper.observe(epoch, f1);
            if obs.improved {
                s.best = s.model.clone();
            }
            let line = format!(
                "epoch {epoch}: train_loss {train_loss:.6} val_f1_macro {f1:.6} val_accuracy {acc:.6}{}",
                if obs.improved { " (best)" } else { "" }
            );
            log::info!("{line}");
            if obs.stop {
                s.stop_reason = Some(StopReason::EarlyStop);
            }
            if let Some(files) = &ctx.files {
                files.log(&line)?;
                files.metrics(&s.history)?;
                if obs.improved {
                    ctx.best_checkpoint(&s).save(&files.dir.join("best.ckpt"))?;
                }
                ctx.state_checkpoint(&s)?
                    .save(&files.dir.join("final.ckpt"))?;
            }
            if obs.stop {
                break;
            }
        }
    }
    let stop_reason = s.stop_reason.unwrap_or(StopReason::MaxEpochs);
    s.stop_reason = Some(stop_reason);
    if let Some(files) = &ctx.files {
        files.log(&format!(
            "stopped: {stop_reason:?} after epoch {}, best epoch {}",
            s.epoch, s.stopper.best_epoch
        ))?;
        files.metrics(&s.history)?;
        ctx.state_checkpoint(&s)?
            .save(&files.dir.join("final.ckpt"))?;
        if s.stopper.best_epoch > 0 {
            ctx.best_checkpoint(&s).save(&files.dir.join("best.ckpt"))?;
        }
    }
    let report = TrainReport {
        epochs: s.history.clone(),
        best_epoch: s.stopper.best_epoch,
        best_f1_macro: if s.stopper.best_epoch > 0 {
            s.stopper.best_f1
        } else {
            0.0
        },
        stop_reason,
        learning_rate: cfg.learning_rate,
        class_weights: ctx.class_weights.clone(),
        wall_seconds: started.elapsed().as_secs_f64(),
    };
    let state = ctx.state_checkpoint(&s)?;
    Ok(TrainOutcome {
        best: s.best,
        state,
        report,
    })
}

fn make_context<'a>(
    vocab: &'a Vocab,
    train_set: &[PairExample],
    schema: &'a LabelSchema,
    config: &'a TrainConfig,
    model: &ModelConfig,
    opts: &TrainOptions,
) -> Result<Context<'a>> {
    if train_set.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let counts = label_counts(train_set, schema);
    let class_weights = match config.class_weight_mode {
        ClassWeightMode::InverseFrequency => inverse_frequency_weights(&counts, schema)?.weights,
        ClassWeightMode::Uniform => vec![1.0; schema.len()],
    };
    let files = opts
        .run_dir
        .as_deref()
        .map(|d| RunFiles::create(d, model, config, vocab, opts.input_mode, schema))
        .transpose()?;
    Ok(Context {
        vocab,
        schema,
        config,
        mode: opts.input_mode,
        encodings: encode_examples(train_set, vocab, opts.input_mode, model.max_len)?,
        labels: train_set.iter().map(|e| e.label).collect(),
        class_weights,
        files,
    })
}

fn fresh_session(model: EncoderClassifier, config: &TrainConfig) -> Session {
    Session {
        best: model.clone(),
        model,
        optimizer: AdamW::new(config.optimizer),
        stopper: EarlyStopping::new(config.patience, config.min_improvement),
        history: Vec::new(),
        epoch: 0,
        stop_reason: None,
    }
}

/// Splits off a stratified validation set (`val_fraction`, `seed`) and trains
/// on the rest. Class weights come from the training side only.
pub fn train(
    model: EncoderClassifier,
    vocab: &Vocab,
    dataset: &[PairExample],
    schema: &LabelSchema,
    config: &TrainConfig,
    opts: &TrainOptions,
) -> Result<TrainOutcome> {
    config.validate()?;
    let (train_set, val_set) = stratified_split(dataset, schema, config.val_fraction, config.seed)?;
    train_on_split(model, vocab, &train_set, &val_set, schema, config, opts)
}

pub fn train_on_split(
    model: EncoderClassifier,
    vocab: &Vocab,
    train_set: &[PairExample],
    val_set: &[PairExample],
    schema: &LabelSchema,
    config: &TrainConfig,
    opts: &TrainOptions,
) -> Result<TrainOutcome> {
    let val = encode_examples(val_set, vocab, opts.input_mode, model.config.max_len)?;
    let mut validator =
        HoldoutValidator::new(val, val_set.iter().map(|e| e.label).collect(), schema);
    train_with_validator(
        model,
        vocab,
        train_set,
        schema,
        config,
        opts,
        &mut validator,
    )
}

/// Trains on all of `train_set`, scoring each epoch with `validator`.
pub fn train_with_validator(
    model: EncoderClassifier,
    vocab: &Vocab,
    train_set: &[PairExample],
    schema: &LabelSchema,
    config: &TrainConfig,
    opts: &TrainOptions,
    validator: &mut dyn Validator,
) -> Result<TrainOutcome> {
    config.validate()?;
    check_compat(&model, vocab, schema)?;
    let ctx = make_context(vocab, train_set, schema, config, &model.config, opts)?;
    run(&ctx, fresh_session(model, config), validator)
}

fn restore_session(
    state: &Checkpoint,
    config: &TrainConfig,
    vocab: &Vocab,
    schema: &LabelSchema,
    mode: InputMode,
) -> Result<Session> {
    let bad = |m: String| Error::Config(format!("cannot resume: {m}"));
    let meta: StateMeta = serde_json::from_value(state.metadata.clone())
        .map_err(|e| bad(format!("checkpoint holds no training state ({e})")))?;
    if meta.kind != "train_state" {
        return Err(bad(format!("checkpoint kind is `{}`", meta.kind)));
    }
    if !meta.train_config.resumable_as(config) {
        return Err(bad(
            "training config differs from the interrupted run".into()
        ));
    }
    if state.schema != schema.name {
        return Err(bad(format!(
            "checkpoint schema `{}` vs `{}`",
            state.schema, schema.name
        )));
    }
    if state.vocab_fingerprint != vocab.fingerprint() {
        return Err(bad("vocabulary fingerprint differs".into()));
    }
    if state.input_mode != mode {
        return Err(bad("input mode differs".into()));
    }
    let model = state.model.clone();
    let names: Vec<String> = model.weights.named().into_iter().map(|(n, _)| n).collect();
    let fetch = |prefix: &str| -> Result<Vec<Tensor>> {
        names
            .iter()
            .map(|n| {
                state
                    .extra_tensor(&format!("{prefix}{n}"))
                    .cloned()
                    .ok_or_else(|| bad(format!("missing `{prefix}{n}`")))
            })
            .collect()
    };
    let mut optimizer = AdamW::new(config.optimizer);
    optimizer.step = meta.optimizer_step;
    if meta.optimizer_step > 0 {
        optimizer.first_moment = fetch("optim.m.")?;
        optimizer.second_moment = fetch("optim.v.")?;
    }
    let mut best = model.clone();
    for (slot, t) in best.weights.tensors_mut().into_iter().zip(fetch("best.")?) {
        *slot = t;
    }
    Ok(Session {
        model,
        optimizer,
        best,
        stopper: meta.early_stopping,
        history: meta.history,
        epoch: meta.epoch,
        stop_reason: meta.stop_reason,
    })
}

/// Continues a run from its state checkpoint (`final.ckpt`). With the same
/// dataset and config (except `max_epochs`) the result equals an
/// uninterrupted run.
pub fn resume(
    state: &Checkpoint,
    vocab: &Vocab,
    dataset: &[PairExample],
    schema: &LabelSchema,
    config: &TrainConfig,
    opts: &TrainOptions,
) -> Result<TrainOutcome> {
    config.validate()?;
    let session = restore_session(state, config, vocab, schema, opts.input_mode)?;
    check_compat(&session.model, vocab, schema)?;
    let (train_set, val_set) = stratified_split(dataset, schema, config.val_fraction, config.seed)?;
    let ctx = make_context(
        vocab,
        &train_set,
        schema,
        config,
        &session.model.config,
        opts,
    )?;
    let val = encode_examples(
        &val_set,
        vocab,
        opts.input_mode,
        session.model.config.max_len,
    )?;
    let mut validator =
        HoldoutValidator::new(val, val_set.iter().map(|e| e.label).collect(), schema);
    run(&ctx, session, &mut validator)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn patience_walk_through() {
        let mut s = EarlyStopping::new(2, 1e-6);
        let stops: Vec<bool> = [0.5, 0.6, 0.58, 0.59]
            .iter()
            .enumerate()
            .map(|(i, &f)| s.observe(i + 1, f).stop)
            .collect();
        assert_eq!(stops, [false, false, false, true]);
        assert_eq!(s.best_epoch, 2);
    }

    #[test]
    fn improvement_must_exceed_tolerance() {
        let mut s = EarlyStopping::new(1, 1e-6);
        s.observe(1, 0.5);
        assert!(!s.observe(2, 0.5 + 5e-7).improved);
        assert_eq!(s.best_epoch, 1);
    }

    #[test]
    fn never_stops_before_patience_plus_one() {
        for patience in 1..5 {
            let mut s = EarlyStopping::new(patience, 1e-6);
            let first_stop = (1..20).find(|&e| s.observe(e, 0.1).stop).unwrap();
            assert_eq!(first_stop, patience + 1);
        }
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        for bad in [
            TrainConfig {
                val_fraction: 1.0,
                ..Default::default()
            },
            TrainConfig {
                patience: 0,
                ..Default::default()
            },
            TrainConfig {
                batch_size: 0,
                ..Default::default()
            },
        ] {
            assert!(bad.validate().is_err());
        }
    }

    #[test]
    fn warmup_schedule() {
        let s = LrSchedule::LinearWarmup { warmup_steps: 4 };
        assert_eq!(s.rate(1.0, 0), 0.25);
        assert_eq!(s.rate(1.0, 3), 1.0);
        assert_eq!(s.rate(1.0, 10), 1.0);
        assert_eq!(LrSchedule::Constant.rate(0.5, 7), 0.5);
    }
}
