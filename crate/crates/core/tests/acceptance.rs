//! One PASS/FAIL line per acceptance criterion, then a single assertion over
//! all of them. Run with `--nocapture` to see the lines.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

use rand::Rng;

use ctxsent::benchmark::*;
use ctxsent::data::*;
use ctxsent::labeling::*;
use ctxsent::metrics::{confusion, evaluate, render_report, EvalReport, ReportFormat};
use ctxsent::model::{EncoderClassifier, InputMode, ModelConfig};
use ctxsent::tokenizer::train_vocab;
use ctxsent::training::*;
use ctxsent::Error;

use common::fixtures::*;

type Outcome = Result<String, String>;

fn check(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn c1_class_weights() -> Outcome {
    let w = inverse_frequency_weights(&REFERENCE_COUNTS, &LabelSchema::three_class())
        .map_err(|e| e.to_string())?;
    let shown: Vec<String> = w.weights.iter().map(|x| format!("{x:.3}")).collect();
    check(
        shown == ["1.009", "0.604", "2.834"],
        format!("weights {shown:?}"),
    )?;
    Ok(shown.join(" / "))
}

fn c2_dataset_arithmetic() -> Outcome {
    let three = LabelSchema::three_class();
    let stats = stats_from_counts(&REFERENCE_COUNTS, &three).map_err(|e| e.to_string())?;
    let pct: Vec<String> = stats
        .per_class
        .iter()
        .map(|c| format!("{:.1}", c.percentage))
        .collect();
    check(
        pct == ["33.0", "55.2", "11.8"],
        format!("percentages {pct:?}"),
    )?;

    let data = dataset_with_counts(&REFERENCE_COUNTS);
    let binary = to_binary(&data).examples;
    check(
        binary.len() == 14_045,
        format!("binary count {}", binary.len()),
    )?;

    let (_, h3) = stratified_split(&data, &three, 0.15, 42).map_err(|e| e.to_string())?;
    let (_, h2) =
        stratified_split(&binary, &LabelSchema::binary(), 0.15, 42).map_err(|e| e.to_string())?;
    check(
        (h3.len(), h2.len()) == (4_704, 2_107),
        format!("holdouts {} and {}", h3.len(), h2.len()),
    )?;
    Ok(format!(
        "{} %, binary {}, holdouts {} / {}",
        pct.join(" / "),
        binary.len(),
        h3.len(),
        h2.len()
    ))
}

fn c3_gradients() -> Outcome {
    use common::gradcheck::*;
    let probes: [(&str, &dyn Fn(u64) -> f64); 10] = [
        ("matmul", &matmul_error),
        ("linear", &linear_error),
        ("layer_norm", &layer_norm_error),
        ("softmax", &softmax_error),
        ("gelu", &gelu_error),
        ("attention", &|s| attention_error(s, 1, 2, 2, false)),
        ("masked multi-head attention", &|s| {
            attention_error(s, 2, 3, 4, true)
        }),
        ("weighted cross-entropy", &cross_entropy_error),
        ("full model loss", &model_error),
        ("full model loss, other seeds", &|s| model_error(s + 1000)),
    ];
    let mut worst = 0.0f64;
    for (name, probe) in probes {
        let e = (0..20).map(probe).fold(0.0, f64::max);
        check(e < 1e-4, format!("{name}: max relative error {e:.2e}"))?;
        worst = worst.max(e);
    }
    Ok(format!(
        "{} probes x 20 seeds, worst relative error {worst:.2e}",
        probes.len()
    ))
}

fn c4_metric_oracle() -> Outcome {
    let mut g = common::rng(4);
    let mut zero_support = 0;
    for case in 0..1000 {
        let k = g.random_range(2..=4);
        let n = g.random_range(1..=30);
        // Draw from a subset of classes now and then so some have no support.
        let used = if case % 4 == 0 { k - 1 } else { k };
        let golds: Vec<usize> = (0..n).map(|_| g.random_range(0..used)).collect();
        let preds: Vec<usize> = (0..n).map(|_| g.random_range(0..k)).collect();
        let names: Vec<String> = (0..k).map(|c| format!("c{c}")).collect();
        let r = evaluate(&confusion(&golds, &preds, &names).unwrap(), "m", "d")
            .map_err(|e| e.to_string())?;
        let want = common::oracle::reference(&golds, &preds, k);
        let mut diffs = vec![
            r.accuracy - want.accuracy,
            r.f1_macro - want.f1_macro,
            r.f1_weighted - want.f1_weighted,
        ];
        for (c, m) in r.per_class.iter().enumerate() {
            diffs.extend([
                m.precision - want.precision[c],
                m.recall - want.recall[c],
                m.f1 - want.f1[c],
            ]);
            zero_support += usize::from(m.support == 0);
        }
        let worst = diffs.iter().fold(0.0f64, |a, d| a.max(d.abs()));
        check(worst <= 1e-12, format!("case {case}: off by {worst:.2e}"))?;
    }
    check(zero_support > 0, "no zero-support class was exercised")?;

    let names: Vec<String> = ["Negatif", "Netral", "Positif"].map(String::from).to_vec();
    let fixture = evaluate(
        &confusion(&[0, 0, 1, 1, 2, 2], &[0, 1, 1, 1, 2, 0], &names).unwrap(),
        "x",
        "fixture",
    )
    .unwrap();
    let shown = (
        format!("{:.4}", fixture.f1_macro),
        format!("{:.4}", fixture.accuracy),
    );
    check(
        shown == ("0.6556".into(), "0.6667".into()),
        format!("fixture {shown:?}"),
    )?;
    Ok(format!(
        "1000 cases within 1e-12 ({zero_support} zero-support classes), fixture {} / {}",
        shown.0, shown.1
    ))
}

fn c5_context_dependence() -> Outcome {
    let data = generate_synthetic(&SyntheticSpec::default()).map_err(|e| e.to_string())?;
    let schema = synthetic_schema();
    let (train_set, holdout) =
        split_keeping_flip_groups(&data, 0.15, 11).map_err(|e| e.to_string())?;
    let vocab = train_vocab(
        train_set
            .iter()
            .flat_map(|e| [e.context.as_str(), e.text.as_str()]),
        200,
    )
    .map_err(|e| e.to_string())?;
    let run = |mode| -> Result<(f64, Option<f64>), String> {
        let model = EncoderClassifier::new(ModelConfig {
            vocab_size: vocab.len(),
            max_len: 24,
            d_model: 32,
            n_heads: 4,
            n_layers: 2,
            d_ff: 64,
            n_classes: 3,
            dropout: 0.1,
            init_seed: 1,
            ..ModelConfig::default()
        })
        .map_err(|e| e.to_string())?;
        let cfg = TrainConfig {
            learning_rate: 1e-3,
            batch_size: 16,
            max_epochs: 20,
            patience: 4,
            seed: 5,
            ..TrainConfig::default()
        };
        let opts = TrainOptions {
            input_mode: mode,
            run_dir: None,
        };
        let out =
            train(model, &vocab, &train_set, &schema, &cfg, &opts).map_err(|e| e.to_string())?;
        let adapter = LocalModelAdapter::new(mode.as_str(), out.best, vocab.clone(), mode);
        let eval = evaluate_adapter(&adapter, &holdout, &schema, &EvalOptions::default(), None)
            .map_err(|e| e.to_string())?;
        Ok((
            eval.report.f1_macro,
            flip_accuracy(&eval, &holdout).flip_accuracy,
        ))
    };
    let (full, _) = run(InputMode::ContextConditioned)?;
    let (blind, blind_flip) = run(InputMode::ContextBlind)?;
    let blind_flip = blind_flip.ok_or("holdout has no complete flip group")?;
    let detail = format!(
        "conditioned {full:.3}, blind {blind:.3} (flip accuracy {blind_flip:.3}), gap {:.3}",
        full - blind
    );
    check(
        full >= 0.95 && blind <= 0.65 && blind_flip <= 0.55 && full - blind >= 0.30,
        detail.clone(),
    )?;
    Ok(detail)
}

fn fixture_report(
    name: &str,
    acc: f64,
    macro_: f64,
    weighted: f64,
    per_class: [f64; 3],
) -> EvalReport {
    let names: Vec<String> = ["Negatif", "Netral", "Positif"].map(String::from).to_vec();
    let mut r = evaluate(
        &confusion(&[0, 1, 2], &[0, 1, 2], &names).unwrap(),
        name,
        "test",
    )
    .unwrap();
    r.accuracy = acc;
    r.f1_macro = macro_;
    r.f1_weighted = weighted;
    for (m, f) in r.per_class.iter_mut().zip(per_class) {
        m.f1 = f;
    }
    r
}

fn c6_report_fidelity() -> Outcome {
    let reports = [
        fixture_report("Context model", 0.881, 0.856, 0.880, [0.876, 0.902, 0.791]),
        fixture_report("Baseline A", 0.628, 0.487, 0.612, [0.608, 0.716, 0.135]),
        fixture_report("Baseline B", 0.621, 0.486, 0.607, [0.606, 0.706, 0.145]),
        fixture_report("Baseline C", 0.591, 0.501, 0.593, [0.654, 0.637, 0.211]),
    ];
    let md = render_report(&reports, ReportFormat::Markdown).map_err(|e| e.to_string())?;
    let want_overall = [
        "| Context model | **88.1%** | **0.856** | **0.880** |",
        "| Baseline A | 62.8% | 0.487 | 0.612 |",
        "| Baseline B | 62.1% | 0.486 | 0.607 |",
        "| Baseline C | 59.1% | 0.501 | 0.593 |",
    ];
    let want_class = [
        "| Context model | **0.876** | **0.902** | **0.791** |",
        "| Baseline A | 0.608 | 0.716 | 0.135 |",
        "| Baseline B | 0.606 | 0.706 | 0.145 |",
        "| Baseline C | 0.654 | 0.637 | 0.211 |",
    ];
    for row in want_overall {
        check(
            md.overall.lines().any(|l| l == row),
            format!("missing overall row `{row}`"),
        )?;
    }
    for row in want_class {
        check(
            md.per_class.lines().any(|l| l == row),
            format!("missing per-class row `{row}`"),
        )?;
    }
    let csv = render_report(&reports, ReportFormat::Csv).map_err(|e| e.to_string())?;
    check(
        csv.overall.contains("Context model,0.881,0.856,0.880"),
        "csv overall row",
    )?;
    Ok("8 table rows reproduced".into())
}

struct Scripted(Vec<f64>, Vec<EncoderClassifier>);

impl Validator for Scripted {
    fn validate(&mut self, epoch: usize, model: &EncoderClassifier) -> ctxsent::Result<(f64, f64)> {
        self.1.push(model.clone());
        Ok((self.0[epoch - 1], 0.0))
    }
}

fn c7_training_protocol() -> Outcome {
    let schema = LabelSchema::binary();
    let data = separable_dataset(60, 5);
    let vocab = vocab_for(&data);
    let opts = |dir: Option<&std::path::Path>| TrainOptions {
        input_mode: InputMode::ContextConditioned,
        run_dir: dir.map(|d| d.to_path_buf()),
    };
    // (validation macro-F1 by epoch, epochs run, best epoch)
    let cases: [(&[f64], usize, usize); 4] = [
        (&[0.5, 0.6, 0.58, 0.59, 0.9], 4, 2),
        (&[0.1, 0.2, 0.3, 0.4, 0.5], 5, 5),
        (&[0.7, 0.7, 0.7, 0.9, 0.9], 3, 1),
        (&[0.4, 0.3, 0.5, 0.45, 0.44], 5, 3),
    ];
    for (f1, epochs, best) in cases {
        let mut v = Scripted(f1.to_vec(), Vec::new());
        let cfg = fast_train_config(2, 5);
        let out = train_with_validator(
            small_model(&vocab, &schema, 1),
            &vocab,
            &data,
            &schema,
            &cfg,
            &opts(None),
            &mut v,
        )
        .map_err(|e| e.to_string())?;
        let got = (out.report.epochs.len(), out.report.best_epoch);
        check(
            got == (epochs, best),
            format!("{f1:?}: ran/best {got:?}, expected {:?}", (epochs, best)),
        )?;
        check(
            out.best == v.1[best - 1],
            format!("{f1:?}: returned model is not the epoch-{best} model"),
        )?;
    }

    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    for d in &dirs {
        train(
            small_model(&vocab, &schema, 5),
            &vocab,
            &data,
            &schema,
            &fast_train_config(6, 3),
            &opts(Some(d.path())),
        )
        .map_err(|e| e.to_string())?;
    }
    for f in ["best.ckpt", "final.ckpt"] {
        let a = std::fs::read(dirs[0].path().join(f)).unwrap();
        let b = std::fs::read(dirs[1].path().join(f)).unwrap();
        check(a == b, format!("{f} differs between identical seeded runs"))?;
    }
    Ok(format!(
        "{} patience-2 walk-throughs, bit-identical checkpoints",
        cases.len()
    ))
}

fn c8_labeling() -> Outcome {
    let schema = LabelSchema::three_class();
    let tiers = [0.726, 0.268, 0.006];
    let policy = LabelingPolicy {
        backoff_base_ms: 0,
        backoff_max_ms: 0,
        ..LabelingPolicy::default()
    };
    let records = |n: usize| -> Vec<PairRecord> {
        (0..n)
            .map(|i| {
                PairRecord::new(
                    format!("r{i:05}"),
                    format!("Topik {}", i % 7),
                    format!("kalimat {i}"),
                )
            })
            .collect()
    };
    let bytes = |r: &[PairRecord]| {
        let mut out = Vec::new();
        write_records(&mut out, r).unwrap();
        out
    };
    let err = |e: Error| e.to_string();

    let mock = SeededMockClient::new(2024, &schema, tiers);
    let big = relabel_dataset(&mock, &records(1000), &schema, &policy, None).map_err(err)?;
    let pct = big.stats.tier_percentages();
    for ((tier, p), want) in pct.iter().zip(tiers) {
        check(
            (p - want * 100.0).abs() <= 3.0,
            format!("{tier} tier at {p:.1}%"),
        )?;
    }

    let input = records(200);
    let straight = relabel_dataset(&mock, &input, &schema, &policy, None).map_err(err)?;
    let known: Vec<(String, String, Tier)> = straight.records[..80]
        .iter()
        .map(|r| {
            let tier = match r.confidence {
                Confidence::High => Tier::High,
                Confidence::Medium => Tier::Medium,
                _ => Tier::Low,
            };
            (r.id.clone(), r.label.clone().unwrap(), tier)
        })
        .collect();
    let one_shot = LabelingPolicy {
        max_attempts: 1,
        failure_threshold: 1.0,
        ..policy.clone()
    };
    let partial = relabel_dataset(&LookupClient::new(known), &input, &schema, &one_shot, None)
        .map_err(err)?;
    let resumed = relabel_dataset(&mock, &partial.records, &schema, &policy, None).map_err(err)?;
    check(
        resumed.stats.skipped == 80 && resumed.stats.attempted == 120,
        "resume re-attempted labeled pairs",
    )?;
    check(
        bytes(&resumed.records) == bytes(&straight.records),
        "resumed output differs from a straight run",
    )?;

    let flaky = FlakyClient::new(SeededMockClient::new(1, &schema, tiers), 2);
    let mut audit = Vec::new();
    let out =
        relabel_dataset(&flaky, &records(30), &schema, &policy, Some(&mut audit)).map_err(err)?;
    let lines = String::from_utf8(audit).unwrap().lines().count();
    check(
        (out.stats.labeled, out.stats.retries, lines) == (30, 60, 90),
        format!(
            "retry accounting: labeled {}, retries {}, audit lines {lines}",
            out.stats.labeled, out.stats.retries
        ),
    )?;
    let shown: Vec<String> = pct.iter().map(|(_, p)| format!("{p:.1}")).collect();
    Ok(format!(
        "tiers {} %, byte-identical resume, 60 retries over 30 pairs",
        shown.join(" / ")
    ))
}

fn c9_contract_probes() -> Outcome {
    let data = generate_synthetic(&SyntheticSpec {
        examples_per_topic: 40,
        ..SyntheticSpec::default()
    })
    .map_err(|e| e.to_string())?;
    let schema = synthetic_schema();
    let vocab = train_vocab(
        data.iter()
            .flat_map(|e| [e.context.as_str(), e.text.as_str()]),
        200,
    )
    .unwrap();
    let (texts, contexts) = probe_inputs(&data, 30);
    let blind = LocalModelAdapter::new(
        "blind",
        EncoderClassifier::new(ModelConfig {
            vocab_size: vocab.len(),
            max_len: 24,
            d_model: 16,
            n_heads: 2,
            n_layers: 1,
            d_ff: 32,
            n_classes: 3,
            init_seed: 3,
            ..ModelConfig::default()
        })
        .unwrap(),
        vocab,
        InputMode::ContextBlind,
    );
    let free: [&dyn ClassifierAdapter; 2] = [&ConstantAdapter::new("constant", 1), &blind];
    for a in free {
        let report = probe_context_invariance(a, &texts, &contexts).map_err(|e| e.to_string())?;
        check(
            report.passed(),
            format!("{} changed its label with the context", a.name()),
        )?;
    }
    let peeker = FnAdapter::new("peeker", AdapterMode::ContextFree, |c, _| Ok(c.len() % 3));
    let caught = probe_context_invariance(&peeker, &texts, &contexts).map_err(|e| e.to_string())?;
    check(
        !caught.passed(),
        "probe missed an adapter that reads the context",
    )?;

    let opts = EvalOptions::default();
    let a = evaluate_adapter(&ConstantAdapter::new("a", 1), &data, &schema, &opts, None)
        .map_err(|e| e.to_string())?;
    let b = evaluate_adapter(
        &ConstantAdapter::new("b", 1),
        &data[2..],
        &schema,
        &opts,
        None,
    )
    .map_err(|e| e.to_string())?;
    check(
        matches!(
            build_comparison(vec![a, b], &data),
            Err(Error::Comparison(_))
        ),
        "mismatched test sets accepted",
    )?;

    for seed in 0..20 {
        let model = EncoderClassifier::new(ModelConfig {
            vocab_size: 40,
            max_len: 12,
            d_model: 8,
            n_heads: 2,
            n_layers: 2,
            d_ff: 16,
            n_classes: 3,
            init_seed: seed,
            ..ModelConfig::default()
        })
        .unwrap();
        let mut g = common::rng(seed);
        let batch: Vec<_> = (0..5)
            .map(|_| common::random_encoding(&mut g, 40, 12))
            .collect();
        let base = model.forward(&batch).unwrap();
        let padded: Vec<_> = batch.iter().map(|e| e.extend_padding(3)).collect();
        check(
            model.forward(&padded).unwrap() == base,
            format!("seed {seed}: PAD extension changed the logits"),
        )?;
    }
    Ok(format!(
        "{} texts x {} contexts probed, mismatch rejected, PAD invariance over 20 batches",
        texts.len(),
        contexts.len()
    ))
}

#[test]
fn acceptance_criteria() {
    let criteria: [(&str, fn() -> Outcome); 9] = [
        ("class-weight reproduction", c1_class_weights),
        ("dataset arithmetic", c2_dataset_arithmetic),
        ("gradient verification", c3_gradients),
        ("metric-oracle equivalence", c4_metric_oracle),
        ("context-dependence headline", c5_context_dependence),
        ("report fidelity", c6_report_fidelity),
        ("training-protocol conformance", c7_training_protocol),
        ("labeling protocol", c8_labeling),
        ("contract probes", c9_contract_probes),
    ];
    let mut failed = Vec::new();
    for (i, (name, run)) in criteria.into_iter().enumerate() {
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS {}. {name}: {detail} ({secs:.1}s)", i + 1),
            Err(why) => {
                println!("FAIL {}. {name}: {why} ({secs:.1}s)", i + 1);
                failed.push(i + 1);
            }
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
