//! End-to-end acceptance checks. Each criterion prints one PASS/FAIL line to
//! stderr (bypassing the test harness capture) and the test fails if any
//! criterion does.
//!
//! Criteria 6 and 7 train real models and take several minutes each on a
//! single core.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write as _;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::Rng;
use zat_cli::config::ExperimentConfig;
use zat_cli::experiment::{ablate, cell, mean_std, sweep, ModelKind, RunResult, Workspace};
use zat_core::baselines::{CtConfig, CtModel, LstmTagger, LstmTaggerConfig};
use zat_core::crf::{
    brute_force_decode, brute_force_log_partition, log_partition, sequence_score, viterbi_decode, CrfParams, Tag,
    TagSequence,
};
use zat_core::data::{generate_corpus, write_corpus, GeneratorSpec, LabeledSpan, Utterance};
use zat_core::embedding::{CharCnnConfig, EmbeddingMatrix, Vocabulary, PAD_TOKEN, UNK_TOKEN};
use zat_core::encoder::ZatDims;
use zat_core::eval::{error_by_length, error_by_position, span_f1};
use zat_core::numerics::{grad_check, GradCheckOptions, SeededRng};
use zat_core::tagger::{bio_to_spans, merge_slot_predictions, SlotDescription, SlotExample, SlotSpan, ZatConfig, ZatModel};
use zat_core::train::{build_joint_dataset, ExperimentPlan, TrainConfig, Trainable};
use zat_core::{Tape, Tensor};

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn report(number: usize, title: &str, f: impl FnOnce() -> Outcome) -> bool {
    let start = Instant::now();
    let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
        let msg = p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()));
        Err(format!("panicked: {}", msg.unwrap_or_default()))
    });
    let secs = start.elapsed().as_secs_f64();
    let (status, detail) = match &outcome {
        Ok(d) => ("PASS", d),
        Err(d) => ("FAIL", d),
    };
    let line = format!("criterion {number} [{status}] {title} ({secs:.1}s): {detail}\n");
    let _ = std::io::stderr().write_all(line.as_bytes());
    outcome.is_ok()
}

fn repo_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

// ---- 1: gradients -------------------------------------------------------

fn toy_table(dim: usize) -> (Arc<Vocabulary>, EmbeddingMatrix) {
    let mut words = vec![UNK_TOKEN.to_string(), PAD_TOKEN.to_string()];
    words.extend(["book", "table", "in", "paris", "city", "of", "arrival", "cheap"].map(String::from));
    let vocab = Vocabulary::from_words(words).unwrap();
    let mut rng = SeededRng::new(11);
    let data = (0..vocab.len() * dim).map(|_| rng.gen_range(-0.5..0.5)).collect();
    let table = Tensor::new(vec![vocab.len(), dim], data).unwrap();
    (Arc::new(vocab), EmbeddingMatrix { table, trainable: false })
}

fn toy_utterance(id: &str, text: &str, spans: &[(&str, usize, usize)]) -> Utterance {
    Utterance {
        id: id.into(),
        domain: "toy".into(),
        intent: "x".into(),
        tokens: text.split_whitespace().map(String::from).collect(),
        spans: spans.iter().map(|&(s, a, b)| LabeledSpan { slot: s.into(), start: a, end: b }).collect(),
        pos: Vec::new(),
    }
}

fn max_rel_error<M: Trainable>(model: &M, batch: &[&M::Example]) -> f64 {
    let opts = GradCheckOptions { eps: 1e-5, samples_per_tensor: 200, ..Default::default() };
    grad_check(|tape: &mut Tape<'_>, bind| model.loss(tape, bind, batch, &mut SeededRng::new(0)), model.params(), &opts)
        .unwrap()
        .max_rel_error
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let (vocab, table) = toy_table(8);
    // T = 4 sentence tokens, J = 3 description words.
    let utt = Arc::new(toy_utterance("g", "book table in paris", &[("dest", 3, 4)]));
    let slot = Arc::new(SlotDescription::new("dest", "city of arrival").unwrap());
    let example = SlotExample::new(utt, slot).unwrap();
    let batch = [&example];

    let zat_config = ZatConfig {
        dims: ZatDims { lstm_hidden: 6, ff_hidden: 6 },
        char_cnn: Some(CharCnnConfig { char_dim: 4, width: 3, channels: 4 }),
        use_crf: true,
        weft: true,
        dropout_keep: 1.0,
    };
    let zat = ZatModel::new(zat_config, Arc::clone(&vocab), &table, &mut SeededRng::new(1)).unwrap();
    let e_zat = max_rel_error(&zat, &batch);

    let ct = CtModel::new(
        CtConfig { first_hidden: 6, combine: 6, second_hidden: 6, weft: true },
        Arc::clone(&vocab),
        &table,
        &mut SeededRng::new(2),
    )
    .unwrap();
    let e_ct = max_rel_error(&ct, &batch);

    let lstm = LstmTagger::new(
        LstmTaggerConfig { char_dim: 4, char_hidden: 4, word_hidden: 6, dropout_keep: 1.0, weft: true },
        vocab,
        &table,
        vec!["dest".into(), "when".into()],
        &mut SeededRng::new(3),
    )
    .unwrap();
    let sentence = toy_utterance("g", "book table in paris", &[("dest", 3, 4)]);
    let e_lstm = max_rel_error(&lstm, &[&sentence]);

    let elapsed = start.elapsed();
    let detail = format!("max rel error zat {e_zat:.2e}, ct {e_ct:.2e}, lstm {e_lstm:.2e}");
    ensure(e_zat < 1e-4 && e_ct < 1e-4 && e_lstm < 1e-4, detail.clone())?;
    ensure(elapsed < Duration::from_secs(60), format!("{detail}; took {elapsed:?}"))?;
    Ok(detail)
}

// ---- 2, 3: CRF ----------------------------------------------------------

fn random_tensor(shape: &[usize], scale: f64, rng: &mut SeededRng) -> Tensor {
    let n: usize = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-scale..scale)).collect()).unwrap()
}

fn random_crf(rng: &mut SeededRng, masked: bool) -> CrfParams<f64> {
    let mut crf = CrfParams {
        transitions: random_tensor(&[3, 3], 2.0, rng),
        start: random_tensor(&[3], 2.0, rng),
        end: random_tensor(&[3], 2.0, rng),
    };
    if masked {
        crf.apply_mask();
    }
    crf
}

fn criterion_2() -> Outcome {
    let start = Instant::now();
    let mut rng = SeededRng::new(2024);
    let (mut worst_z, mut worst_v) = (0.0f64, 0.0f64);
    for i in 0..1000 {
        let t = rng.gen_range(1..=6);
        let u = random_tensor(&[3, t], 3.0, &mut rng);
        let crf = random_crf(&mut rng, i % 2 == 0);
        let z = log_partition(&u, &crf).unwrap();
        let z_bf = brute_force_log_partition(&u, &crf).unwrap();
        worst_z = worst_z.max((z - z_bf).abs());
        let (path, score) = viterbi_decode(&u, &crf).unwrap();
        let (_, best) = brute_force_decode(&u, &crf).unwrap();
        let achieved = sequence_score(&u, &crf, &path).unwrap();
        worst_v = worst_v.max((score - best).abs()).max((achieved - best).abs());
    }
    let elapsed = start.elapsed();
    let detail = format!("max |logZ diff| {worst_z:.1e}, max |viterbi diff| {worst_v:.1e}");
    ensure(worst_z < 1e-8 && worst_v < 1e-9, detail.clone())?;
    ensure(elapsed < Duration::from_secs(30), format!("{detail}; took {elapsed:?}"))?;
    Ok(detail)
}

fn criterion_3() -> Outcome {
    let mut rng = SeededRng::new(3);
    let mut invalid = 0;
    for _ in 0..10_000 {
        let t = rng.gen_range(1..=15);
        // Emissions strongly favouring I make an unmasked decoder emit O→I or a leading I.
        let mut u = random_tensor(&[3, t], 4.0, &mut rng);
        for c in 0..t {
            u.set(Tag::I.index(), c, u.at(Tag::I.index(), c) + 3.0);
        }
        let crf = random_crf(&mut rng, true);
        let (path, _) = viterbi_decode(&u, &crf).unwrap();
        if !path.is_valid() {
            invalid += 1;
        }
    }
    ensure(invalid == 0, format!("{invalid} invalid sequences"))?;
    Ok("0 invalid sequences in 10000 decodes".into())
}

// ---- 4: merging ---------------------------------------------------------

fn criterion_4() -> Outcome {
    let mut rng = SeededRng::new(4);
    let mut overlaps = 0;
    let mut spans = 0;
    for case in 0..10_000 {
        let len = rng.gen_range(1..=15);
        let slots = rng.gen_range(1..=6);
        let map: BTreeMap<String, TagSequence> = (0..slots)
            .map(|k| {
                let raw = (0..len).map(|_| Tag::ALL[rng.gen_range(0..3)]).collect();
                (format!("slot{k}"), TagSequence::new(raw).repaired())
            })
            .collect();
        let merged = merge_slot_predictions(&format!("u{case}"), &map, &mut rng.fork(case)).unwrap();
        spans += merged.len();
        for (i, a) in merged.iter().enumerate() {
            overlaps += merged[i + 1..].iter().filter(|b| a.overlaps(b)).count();
        }
    }
    ensure(overlaps == 0, format!("{overlaps} overlapping pairs"))?;

    let a = TagSequence::new(vec![Tag::B, Tag::I, Tag::O]);
    let b = TagSequence::new(vec![Tag::O, Tag::B, Tag::I]);
    assert_eq!(bio_to_spans(&a), [(0, 2)]);
    let map = BTreeMap::from([("a".to_string(), a), ("b".to_string(), b)]);
    let wins_a = (0..1000u64)
        .filter(|&s| merge_slot_predictions("u", &map, &mut SeededRng::new(s)).unwrap()[0].slot == "a")
        .count();
    let detail = format!("0 overlaps among {spans} merged spans; conflict split {wins_a}/{}", 1000 - wins_a);
    ensure((440..=560).contains(&wins_a), detail.clone())?;
    Ok(detail)
}

// ---- 5: sampling and splits --------------------------------------------

fn criterion_5() -> Outcome {
    let spec = GeneratorSpec { domains: 10, utterances_per_domain: 2600, ..GeneratorSpec::default() };
    let corpus = generate_corpus(&spec).map_err(|e| e.to_string())?;
    let plan = ExperimentPlan { target: corpus[9].domain.clone(), take: 2000, dev_take: 100, ..ExperimentPlan::default() };
    let joint = build_joint_dataset(&plan, &corpus, &TrainConfig::default(), 1).map_err(|e| e.to_string())?;
    ensure(joint.utterances.len() == 18_000, format!("joint set has {} utterances", joint.utterances.len()))?;

    let mut strata = 0;
    for d in &corpus {
        let mut by_intent: BTreeMap<&str, [usize; 3]> = BTreeMap::new();
        for (k, split) in [&d.train, &d.dev, &d.test].into_iter().enumerate() {
            for u in split {
                by_intent.entry(u.intent.as_str()).or_default()[k] += 1;
            }
        }
        for (intent, counts) in by_intent {
            let n: usize = counts.iter().sum();
            for (k, share) in spec.split.iter().enumerate() {
                let expected = share * n as f64;
                ensure(
                    (counts[k] as f64 - expected).abs() <= 1.0,
                    format!("{}/{intent}: split {k} has {} of {n}", d.domain, counts[k]),
                )?;
            }
            strata += 1;
        }
    }
    Ok(format!("18000 joint utterances from 9 sources; {strata} intent strata within ±1"))
}

// ---- 6, 7: transfer and ablation ----------------------------------------

fn desk_workspace(corpus: &Path) -> Workspace {
    let mut config = ExperimentConfig::load(repo_root().join("configs/desk.toml")).unwrap();
    config.corpus = corpus.to_path_buf();
    config.vectors = None;
    Workspace::load(config).unwrap()
}

fn mean_f1(runs: &[RunResult], model: &str, n: usize) -> f64 {
    cell(runs, model, n).map_or(f64::NAN, |c| c.0)
}

fn criterion_6(corpus: &Path) -> Outcome {
    let start = Instant::now();
    let mut ws = desk_workspace(corpus);
    ws.config.plan.target_sizes = vec![0, 50, 100];
    ws.config.plan.seeds = vec![1, 2, 3];
    let shared = ws.shared_slots().unwrap();
    ensure(shared.len() >= 3, format!("only {} shared slots", shared.len()))?;
    let runs = sweep(&ws, &[ModelKind::Zat, ModelKind::Ct, ModelKind::Lstm]).unwrap();
    let elapsed = start.elapsed();

    let zat50 = mean_f1(&runs, "zat", 50);
    let lstm50 = mean_f1(&runs, "lstm", 50);
    let (ct50, ct100, zat100) = (mean_f1(&runs, "ct", 50), mean_f1(&runs, "ct", 100), mean_f1(&runs, "zat", 100));
    let zero: Vec<f64> = runs.iter().filter(|r| r.model == "zat" && r.n == 0).map(|r| 100.0 * r.shared_f1).collect();
    let zero_shared = mean_std(&zero).0;
    let detail = format!(
        "zat@50 {zat50:.2} vs lstm@50 {lstm50:.2}; zat {zat50:.2}/{zat100:.2} vs ct {ct50:.2}/{ct100:.2} at 50/100; \
         zero-shot shared-slot F1 {zero_shared:.2}; {:.0}s",
        elapsed.as_secs_f64()
    );
    ensure(zat50 - lstm50 >= 5.0, format!("(a) {detail}"))?;
    ensure(zat50 >= ct50 && zat100 >= ct100, format!("(b) {detail}"))?;
    ensure(zero_shared > 20.0, format!("(c) {detail}"))?;
    ensure(elapsed < Duration::from_secs(30 * 60), format!("runtime {detail}"))?;
    Ok(detail)
}

fn criterion_7(corpus: &Path) -> Outcome {
    let mut ws = desk_workspace(corpus);
    ws.config.plan.target_sizes = vec![0, 50];
    ws.config.plan.seeds = vec![1, 2, 3];
    let runs = ablate(&ws).unwrap();
    let mean = |v: &str| mean_std(&runs.iter().filter(|r| r.model == v).map(|r| 100.0 * r.f1).collect::<Vec<_>>()).0;
    let variants: Vec<String> = ["ZAT", "-CRF", "-CHAR", "+WEFT"].iter().map(|v| format!("{v} {:.2}", mean(v))).collect();
    let detail = format!("mean F1 over seeds and sizes: {}", variants.join(", "));
    ensure(runs.len() == 4 * 3 * 2, format!("{} runs; {detail}", runs.len()))?;
    ensure(mean("ZAT") >= mean("-CRF") && mean("ZAT") >= mean("-CHAR"), detail.clone())?;
    Ok(detail)
}

// ---- 8: determinism -----------------------------------------------------

fn cli(args: &[&str]) -> i32 {
    zat_cli::run(std::iter::once("zat").chain(args.iter().copied()))
}

fn criterion_8() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let p = |s: &str| root.join(s).to_str().unwrap().to_string();
    fs::write(root.join("gen.toml"), "domains = 3\nutterances_per_domain = 300\n").unwrap();
    fs::write(
        root.join("exp.toml"),
        "corpus = \"data\"\n[plan]\ntarget = \"deals\"\ntake = 60\ndev_take = 20\ntarget_sizes = [0, 20]\nseeds = [5]\n\
         [train]\nmax_epochs = 2\n[finetune]\nmax_epochs = 2\n\
         [zat.dims]\nlstm_hidden = 8\nff_hidden = 8\n[zat.char_cnn]\nchannels = 8\n\
         [ct]\nfirst_hidden = 8\ncombine = 8\nsecond_hidden = 8\n[lstm]\nword_hidden = 8\n",
    )
    .unwrap();
    let config = p("exp.toml");
    let mut checked = 0;
    for rep in ["a", "b"] {
        ensure(cli(&["gen-data", "--spec", &p("gen.toml"), "--out", &p(&format!("data_{rep}"))]) == 0, "gen-data failed")?;
    }
    fs::rename(root.join("data_a"), root.join("data")).unwrap();
    let commands: Vec<(&str, Vec<String>)> = vec![
        ("base", vec!["train-base".into()]),
        ("ft", vec!["finetune".into(), "--base".into(), p("base_a/model.ckpt"), "--n".into(), "20".into()]),
        ("eval", vec!["eval".into(), "--model".into(), p("ft_a/model.ckpt")]),
        ("lstm", vec!["train-baseline".into(), "--model".into(), "lstm".into(), "--n".into(), "20".into()]),
        ("sweep", vec!["sweep".into(), "--models".into(), "zat,ct".into()]),
    ];
    for (name, args) in &commands {
        for rep in ["a", "b"] {
            let out = p(&format!("{name}_{rep}"));
            let mut full: Vec<&str> = args.iter().map(String::as_str).collect();
            full.extend(["--config", &config, "--out", &out]);
            ensure(cli(&full) == 0, format!("{name} failed"))?;
        }
    }
    let dirs = ["data_b:data"].into_iter().map(String::from).chain(commands.iter().map(|(n, _)| format!("{n}_a:{n}_b")));
    for pair in dirs {
        let (a, b) = pair.split_once(':').unwrap();
        let mut names: Vec<_> = fs::read_dir(root.join(a)).unwrap().map(|e| e.unwrap().file_name()).collect();
        names.sort();
        for name in names {
            let (fa, fb) = (root.join(a).join(&name), root.join(b).join(&name));
            if fa.is_dir() {
                continue;
            }
            ensure(fs::read(&fa).unwrap() == fs::read(&fb).unwrap(), format!("{} differs between reruns", fa.display()))?;
            checked += 1;
        }
    }
    Ok(format!("{checked} output files identical across reruns"))
}

// ---- 9: evaluation ------------------------------------------------------

fn sp(u: &str, slot: &str, start: usize, end: usize) -> SlotSpan {
    SlotSpan { utterance: u.into(), slot: slot.into(), start, end }
}

fn criterion_9() -> Outcome {
    let gold = vec![sp("a", "city", 0, 1), sp("a", "date", 3, 5), sp("b", "city", 2, 3), sp("b", "price", 4, 6)];
    let pred = vec![sp("a", "city", 0, 1), sp("a", "date", 3, 4), sp("b", "price", 4, 6)];
    let r = span_f1(&pred, &gold);
    let (p, rc, f) = (r.precision(), r.recall(), r.f1());
    let detail = format!("P {p:.4} R {rc:.4} F1 {f:.4}");
    ensure((p - 0.6667).abs() < 1e-4 && (rc - 0.5).abs() < 1e-4 && (f - 0.5714).abs() < 1e-4, detail.clone())?;

    let mut rng = SeededRng::new(9);
    for _ in 0..500 {
        let mut random_spans = |n: usize| -> Vec<SlotSpan> {
            (0..n)
                .map(|_| {
                    let s = rng.gen_range(0..8);
                    sp(&format!("u{}", rng.gen_range(0..5)), ["x", "y"][rng.gen_range(0..2)], s, s + rng.gen_range(1..4))
                })
                .collect()
        };
        let (g, pr) = (random_spans(12), random_spans(12));
        let r = span_f1(&pr, &g);
        let by_pos: usize = error_by_position(&pr, &g).values().map(|b| b.missed).sum();
        let by_len: usize = error_by_length(&pr, &g).values().map(|b| b.missed).sum();
        ensure(by_pos == r.micro.fn_ && by_len == r.micro.fn_, "histograms disagree with FN count")?;
        ensure(r.micro.tp + r.micro.fp == pr.len() && r.micro.tp + r.micro.fn_ == g.len(), "counts do not reconcile")?;
    }
    Ok(format!("{detail}; histograms reconcile on 500 random cases"))
}

#[test]
fn acceptance_criteria() {
    let corpus_dir = tempfile::tempdir().unwrap();
    let corpus = corpus_dir.path().to_path_buf();
    let spec = GeneratorSpec::default();
    write_corpus(&corpus, &spec, &generate_corpus(&spec).unwrap()).unwrap();

    let results = [
        report(1, "gradient correctness", criterion_1),
        report(2, "CRF oracle equivalence", criterion_2),
        report(3, "structural validity", criterion_3),
        report(4, "merge properties", criterion_4),
        report(5, "sampling and splits", criterion_5),
        report(6, "directional transfer", || criterion_6(&corpus)),
        report(7, "ablation", || criterion_7(&corpus)),
        report(8, "determinism", criterion_8),
        report(9, "evaluation correctness", criterion_9),
    ];
    let failed: Vec<usize> = results.iter().enumerate().filter(|(_, ok)| !**ok).map(|(i, _)| i + 1).collect();
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
