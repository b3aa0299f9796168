mod config;

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use toml::Value;

use ctxsent::benchmark::{
    compare, evaluate_adapter, generate_synthetic, load_local_adapter, EvalOptions,
    PredictionCache, Registry, SyntheticSpec, FLIP_GROUP_KEY,
};
use ctxsent::data::{
    class_weights, compute_stats, load_dataset_file, read_records_file, save_dataset_file,
    save_records_file, stratified_split, to_binary, LabelSchema,
};
use ctxsent::labeling::{relabel_dataset, HttpLabelingClient, LabelingClient, SeededMockClient};
use ctxsent::metrics::{render_report, ReportFormat};
use ctxsent::model::{Checkpoint, EncoderClassifier, ModelConfig};
use ctxsent::tokenizer::{train_vocab, Vocab};
use ctxsent::training::{resume, train, TrainOptions};

use config::{Layers, RunConfig};

const EXIT_VALIDATION: u8 = 2;
const EXIT_RUNTIME: u8 = 3;

/// A problem with the user's input rather than with carrying out the work.
#[derive(Debug)]
pub struct Invalid(pub String);

impl std::fmt::Display for Invalid {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Invalid {}

#[derive(Parser)]
#[command(
    name = "ctxsent",
    version,
    about = "Context-conditioned sentiment classification toolkit"
)]
struct Cli {
    /// TOML config file layered over the built-in defaults.
    #[arg(long, global = true, env = "CTXSENT_CONFIG")]
    config: Option<PathBuf>,

    /// Override one config key, e.g. `--set model.d_model=64`. Repeatable;
    /// applied after the config file.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    sets: Vec<String>,

    /// Root seed; required by split, train, synth and `label --mock`.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Label schema (`three-class` or `binary`).
    #[arg(long, global = true)]
    schema: Option<String>,

    /// Log verbosity; repeat for more.
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct OutDir {
    /// Output directory; receives `effective_config.toml` and the command's files.
    #[arg(long, short)]
    out: PathBuf,
}

#[derive(Args)]
struct OptionalOut {
    /// Also write results and `effective_config.toml` to this directory.
    #[arg(long, short)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Class distribution of a labeled dataset.
    Stats {
        data: PathBuf,
        /// `text` or `csv`.
        #[arg(long, default_value = "text")]
        format: String,
        #[command(flatten)]
        out: OptionalOut,
    },
    /// Inverse-frequency class weights N / (K * n_c).
    Weights {
        data: PathBuf,
        #[command(flatten)]
        out: OptionalOut,
    },
    /// Stratified holdout split into `train.jsonl` and `holdout.jsonl`.
    Split {
        data: PathBuf,
        /// Holdout fraction (config `split.fraction`).
        #[arg(long)]
        fraction: Option<f64>,
        #[command(flatten)]
        out: OutDir,
    },
    /// Drop Netral and remap to the binary schema (`binary.jsonl`).
    ToBinary {
        data: PathBuf,
        #[command(flatten)]
        out: OutDir,
    },
    /// Train a classifier; the output directory becomes the run directory.
    Train {
        data: PathBuf,
        /// `context_conditioned` or `context_blind` (config `input_mode`).
        #[arg(long)]
        input_mode: Option<String>,
        /// Config `train.learning_rate`.
        #[arg(long)]
        lr: Option<f64>,
        /// Config `train.max_epochs`.
        #[arg(long)]
        epochs: Option<usize>,
        /// Config `train.batch_size`.
        #[arg(long)]
        batch_size: Option<usize>,
        /// Continue from `<out>/final.ckpt` instead of starting fresh.
        #[arg(long)]
        resume: bool,
        #[command(flatten)]
        out: OutDir,
    },
    /// Evaluate a checkpoint on a labeled dataset.
    Eval {
        checkpoint: PathBuf,
        data: PathBuf,
        /// Vocabulary file; defaults to `vocab.txt` beside the checkpoint.
        #[arg(long)]
        vocab: Option<PathBuf>,
        /// Row label in the report.
        #[arg(long, default_value = "model")]
        name: String,
        #[command(flatten)]
        out: OutDir,
    },
    /// Compare the adapters of a registry file on one dataset.
    Compare {
        registry: PathBuf,
        data: PathBuf,
        /// Prediction cache; defaults to `<out>/prediction_cache.jsonl`.
        #[arg(long)]
        cache: Option<PathBuf>,
        #[command(flatten)]
        out: OutDir,
    },
    /// Label pairs with an LLM endpoint (or the offline mock). Re-running on
    /// the same output directory resumes.
    Label {
        data: PathBuf,
        /// Use the deterministic offline labeler instead of the endpoint.
        #[arg(long)]
        mock: bool,
        #[command(flatten)]
        out: OutDir,
    },
    /// Generate the synthetic context-dependence corpus (`synthetic.jsonl`).
    Synth {
        /// TOML file with a synthetic spec; replaces the config's `[synth]` table.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[command(flatten)]
        out: OutDir,
    },
    /// Classify one pair with a checkpoint.
    Predict {
        checkpoint: PathBuf,
        #[arg(long)]
        context: String,
        #[arg(long)]
        text: String,
        /// Vocabulary file; defaults to `vocab.txt` beside the checkpoint.
        #[arg(long)]
        vocab: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &anyhow::Error) -> u8 {
    for cause in e.chain() {
        if cause.is::<Invalid>() {
            return EXIT_VALIDATION;
        }
        if let Some(err) = cause.downcast_ref::<ctxsent::Error>() {
            return if err.is_validation() {
                EXIT_VALIDATION
            } else {
                EXIT_RUNTIME
            };
        }
    }
    EXIT_RUNTIME
}

fn flag<T: Into<Value>>(flags: &mut Vec<(String, Value)>, key: &str, v: Option<T>) {
    if let Some(v) = v {
        flags.push((key.to_string(), v.into()));
    }
}

fn existing(path: &Path) -> anyhow::Result<&Path> {
    if path.exists() {
        Ok(path)
    } else {
        Err(Invalid(format!("{} does not exist", path.display())).into())
    }
}

fn write(path: &Path, body: impl AsRef<[u8]>) -> anyhow::Result<()> {
    fs::write(path, body).with_context(|| format!("writing {}", path.display()))
}

/// Creates `dir` and records the configuration the command is about to use.
fn prepare_out(dir: &Path, cfg: &RunConfig) -> anyhow::Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    write(&dir.join("effective_config.toml"), cfg.to_toml()?)
}

fn schema_of(cfg: &RunConfig) -> anyhow::Result<LabelSchema> {
    Ok(LabelSchema::builtin(&cfg.schema)?)
}

fn vocab_beside(checkpoint: &Path, given: Option<PathBuf>) -> PathBuf {
    given.unwrap_or_else(|| {
        checkpoint
            .parent()
            .unwrap_or(Path::new("."))
            .join("vocab.txt")
    })
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let mut layers = Layers {
        file: cli.config.clone(),
        sets: cli.sets.clone(),
        flags: Vec::new(),
    };
    let f = &mut layers.flags;
    flag(f, "seed", cli.seed.map(|s| s as i64));
    flag(f, "schema", cli.schema.clone());
    match &cli.command {
        Command::Split { fraction, .. } => flag(f, "split.fraction", *fraction),
        Command::Train {
            input_mode,
            lr,
            epochs,
            batch_size,
            ..
        } => {
            flag(f, "input_mode", input_mode.clone());
            flag(f, "train.learning_rate", *lr);
            flag(f, "train.max_epochs", epochs.map(|v| v as i64));
            flag(f, "train.batch_size", batch_size.map(|v| v as i64));
        }
        _ => {}
    }
    let mut cfg = config::resolve(&layers)?;

    match cli.command {
        Command::Stats { data, format, out } => {
            let schema = schema_of(&cfg)?;
            let dataset = load_dataset_file(existing(&data)?, &schema)?;
            let stats = compute_stats(&dataset, &schema)?;
            match format.as_str() {
                "text" => print!("{}", stats.render_text()),
                "csv" => print!("{}", stats.render_csv()),
                other => {
                    return Err(
                        Invalid(format!("unknown format `{other}`; use text or csv")).into(),
                    )
                }
            }
            if let Some(dir) = out.out {
                prepare_out(&dir, &cfg)?;
                write(&dir.join("stats.txt"), stats.render_text())?;
                write(&dir.join("stats.csv"), stats.render_csv())?;
            }
        }
        Command::Weights { data, out } => {
            let schema = schema_of(&cfg)?;
            let dataset = load_dataset_file(existing(&data)?, &schema)?;
            let weights = class_weights(&compute_stats(&dataset, &schema)?, &schema)?;
            print!("{}", weights.render());
            if let Some(dir) = out.out {
                prepare_out(&dir, &cfg)?;
                write(&dir.join("weights.csv"), weights.render_csv())?;
            }
        }
        Command::Split { data, out, .. } => {
            let seed = cfg.require_seed("split")?;
            let schema = schema_of(&cfg)?;
            let dataset = load_dataset_file(existing(&data)?, &schema)?;
            prepare_out(&out.out, &cfg)?;
            let (train_set, holdout) =
                stratified_split(&dataset, &schema, cfg.split.fraction, seed)?;
            save_dataset_file(&out.out.join("train.jsonl"), &train_set, &schema)?;
            save_dataset_file(&out.out.join("holdout.jsonl"), &holdout, &schema)?;
            println!("train {}  holdout {}", train_set.len(), holdout.len());
        }
        Command::ToBinary { data, out } => {
            let parent = LabelSchema::three_class();
            let dataset = load_dataset_file(existing(&data)?, &parent)?;
            prepare_out(&out.out, &cfg)?;
            let remapped = to_binary(&dataset);
            if let Some(w) = &remapped.warning {
                log::warn!("{w}");
            }
            save_dataset_file(
                &out.out.join("binary.jsonl"),
                &remapped.examples,
                &LabelSchema::binary(),
            )?;
            println!(
                "kept {}  dropped {}",
                remapped.examples.len(),
                remapped.dropped
            );
        }
        Command::Train {
            data,
            resume: resuming,
            out,
            ..
        } => {
            cfg.require_seed("train")?;
            let schema = schema_of(&cfg)?;
            let dataset = load_dataset_file(existing(&data)?, &schema)?;
            prepare_out(&out.out, &cfg)?;
            let opts = TrainOptions {
                input_mode: cfg.input_mode,
                run_dir: Some(out.out.clone()),
            };
            let outcome = if resuming {
                let state = Checkpoint::load(existing(&out.out.join("final.ckpt"))?)?;
                let vocab = Vocab::load(&out.out.join("vocab.txt"))?;
                resume(&state, &vocab, &dataset, &schema, &cfg.train, &opts)?
            } else {
                let vocab = train_vocab(
                    dataset
                        .iter()
                        .flat_map(|e| [e.context.as_str(), e.text.as_str()]),
                    cfg.vocab.size,
                )?;
                let model_cfg = ModelConfig {
                    vocab_size: vocab.len(),
                    n_classes: schema.len(),
                    ..cfg.model.clone()
                };
                train(
                    EncoderClassifier::new(model_cfg)?,
                    &vocab,
                    &dataset,
                    &schema,
                    &cfg.train,
                    &opts,
                )?
            };
            let r = &outcome.report;
            println!(
                "best epoch {}  val macro-F1 {:.4}  epochs run {}  stop {:?}",
                r.best_epoch,
                r.best_f1_macro,
                r.epochs.len(),
                r.stop_reason
            );
        }
        Command::Eval {
            checkpoint,
            data,
            vocab,
            name,
            out,
        } => {
            let ckpt_schema =
                LabelSchema::builtin(&Checkpoint::load(existing(&checkpoint)?)?.schema)?;
            let vocab = vocab_beside(&checkpoint, vocab);
            let adapter = load_local_adapter(&name, &checkpoint, existing(&vocab)?, &ckpt_schema)?;
            let dataset = load_dataset_file(existing(&data)?, &ckpt_schema)?;
            prepare_out(&out.out, &cfg)?;
            let opts = EvalOptions {
                dataset_name: data.display().to_string(),
                max_in_flight: cfg.eval.max_in_flight,
            };
            let eval = evaluate_adapter(&adapter, &dataset, &ckpt_schema, &opts, None)?;
            let reports = [eval.report.clone()];
            for (file, format) in [
                ("report.txt", ReportFormat::Text),
                ("report.md", ReportFormat::Markdown),
            ] {
                write(
                    &out.out.join(file),
                    render_report(&reports, format)?.combined(),
                )?;
            }
            let csv = render_report(&reports, ReportFormat::Csv)?;
            write(&out.out.join("overall.csv"), &csv.overall)?;
            write(&out.out.join("per_class.csv"), &csv.per_class)?;
            print!(
                "{}",
                render_report(&reports, ReportFormat::Text)?.combined()
            );
        }
        Command::Compare {
            registry,
            data,
            cache,
            out,
        } => {
            let reg = Registry::load(existing(&registry)?)?;
            let schema = reg.label_schema()?;
            let dataset = load_dataset_file(existing(&data)?, &schema)?;
            prepare_out(&out.out, &cfg)?;
            let adapters = reg.build(&dataset)?;
            let refs: Vec<_> = adapters.iter().map(|a| a.as_ref()).collect();
            let cache_path = cache.unwrap_or_else(|| out.out.join("prediction_cache.jsonl"));
            let mut pc = PredictionCache::load(&cache_path)?;
            let opts = EvalOptions {
                dataset_name: data.display().to_string(),
                max_in_flight: reg.max_in_flight,
            };
            let result = compare(&refs, &dataset, &schema, &opts, Some(&mut pc));
            pc.save(&cache_path)?;
            let comparison = result?;
            comparison.write_to(&out.out)?;
            print!("{}", comparison.markdown()?);
        }
        Command::Label { data, mock, out } => {
            let schema = schema_of(&cfg)?;
            let input = read_records_file(existing(&data)?)?;
            let labeled_path = out.out.join("labeled.jsonl");
            // A previous run's output is the starting point, so finished
            // pairs are not sent again.
            let records = if labeled_path.exists() {
                let previous = read_records_file(&labeled_path)?;
                let same = previous.len() == input.len()
                    && previous.iter().zip(&input).all(|(a, b)| a.id == b.id);
                if !same {
                    return Err(Invalid(format!(
                        "{} does not hold the same pairs as {}; use a fresh output directory",
                        labeled_path.display(),
                        data.display()
                    ))
                    .into());
                }
                previous
            } else {
                input
            };
            let client: Box<dyn LabelingClient> = if mock {
                Box::new(SeededMockClient::new(
                    cfg.require_seed("label --mock")?,
                    &schema,
                    cfg.labeling.mock_tiers,
                ))
            } else {
                Box::new(HttpLabelingClient::new(cfg.labeling.http.clone(), None)?)
            };
            prepare_out(&out.out, &cfg)?;
            let audit_path = out.out.join("audit.log");
            let mut audit = fs::OpenOptions::new()
                .create(true)
                .append(true)
                .open(&audit_path)
                .with_context(|| format!("opening {}", audit_path.display()))?;
            let outcome = relabel_dataset(
                client.as_ref(),
                &records,
                &schema,
                &cfg.labeling.policy,
                Some(&mut audit),
            )?;
            audit.flush()?;
            save_records_file(&labeled_path, &outcome.records)?;
            write(&out.out.join("labeling_stats.txt"), outcome.stats.render())?;
            write(
                &out.out.join("labeling_stats.toml"),
                toml::to_string(&outcome.stats)?,
            )?;
            print!("{}", outcome.stats.render());
            if let Some(e) = outcome.abort_error() {
                return Err(e.into());
            }
        }
        Command::Synth { spec, out } => {
            let seed = cfg.require_seed("synth")?;
            if let Some(path) = spec {
                let text = fs::read_to_string(existing(&path)?)?;
                cfg.synth = toml::from_str::<SyntheticSpec>(&text)
                    .map_err(|e| Invalid(format!("synthetic spec {}: {e}", path.display())))?;
                cfg.synth.seed = seed;
            }
            prepare_out(&out.out, &cfg)?;
            let data = generate_synthetic(&cfg.synth)?;
            save_dataset_file(
                &out.out.join("synthetic.jsonl"),
                &data,
                &LabelSchema::three_class(),
            )?;
            let flips = data
                .iter()
                .filter(|e| e.extra.contains_key(FLIP_GROUP_KEY))
                .count();
            println!("examples {}  flip-pair members {}", data.len(), flips);
        }
        Command::Predict {
            checkpoint,
            context,
            text,
            vocab,
        } => {
            let ckpt = Checkpoint::load(existing(&checkpoint)?)?;
            let vocab = Vocab::load(existing(&vocab_beside(&checkpoint, vocab))?)?;
            if vocab.fingerprint() != ckpt.vocab_fingerprint {
                return Err(Invalid("vocabulary does not match the checkpoint".into()).into());
            }
            let schema = LabelSchema::builtin(&ckpt.schema)?;
            let p = ckpt
                .model
                .predict(&vocab, ckpt.input_mode, &context, &text)?;
            println!("label {}", schema.classes[p.label]);
            for (c, prob) in schema.classes.iter().zip(&p.probabilities) {
                println!("  {c:<8} {prob:.4}");
            }
        }
    }
    Ok(())
}
