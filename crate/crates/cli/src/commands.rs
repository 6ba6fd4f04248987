//! One function per subcommand.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use log::info;
use serde::Serialize;
use zat_core::data::{generate_corpus, write_corpus, GeneratorSpec, Utterance};
use zat_core::eval::{error_by_length, error_by_pos_tag, error_by_position, gold_spans, write_attention, Bucket, EvalReport};
use zat_core::tagger::SlotSpan;
use zat_core::train::TrainLog;
use zat_core::{Error, Result};

use crate::config::ExperimentConfig;
use crate::experiment::{self, Model, ModelKind, RunResult, Workspace, ABLATION_VARIANTS};
use crate::manifest::Manifest;
use crate::{Command, Common};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const CHECKPOINT_FILE: &str = "model.ckpt";

pub fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::GenData { spec, seed, out } => gen_data(spec.as_deref(), seed, &out),
        Command::TrainBase { common, model, seed } => train_base(&common, model, seed),
        Command::Finetune { common, base, n, seed } => finetune(&common, &base, n, seed),
        Command::TrainBaseline { common, model, n, seed } => train_baseline(&common, model, n, seed),
        Command::Eval { common, model, split, seed } => eval(&common, &model, &split, seed),
        Command::Predict { common, model, input, seed } => predict(&common, &model, &input, seed),
        Command::Ablate { common } => ablate(&common),
        Command::Analyze { common, model, min_frequency, min_share, seed } => {
            analyze(&common, &model, min_frequency, min_share, seed)
        }
        Command::DumpAttention { common, model, slot, text } => dump_attention(&common, &model, &slot, &text),
        Command::Sweep { common, models } => sweep(&common, &models),
    }
}

fn require(path: &Path) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("{} does not exist", path.display())))
    }
}

/// The config file with command-line overrides applied.
pub fn resolve_config(common: &Common) -> Result<ExperimentConfig> {
    let mut config = match &common.config {
        Some(path) => {
            require(path)?;
            ExperimentConfig::load(path)?
        }
        None => ExperimentConfig::default(),
    };
    if let Some(c) = &common.corpus {
        config.corpus = c.clone();
    }
    if let Some(t) = &common.target {
        config.plan.target = t.clone();
    }
    if let Some(t) = common.take {
        config.plan.take = t;
    }
    if let Some(e) = common.max_epochs {
        config.train.max_epochs = e;
    }
    if let Some(s) = &common.seeds {
        config.plan.seeds = s.clone();
    }
    if let Some(s) = &common.sizes {
        config.plan.target_sizes = s.clone();
    }
    config.validate()?;
    require(&config.corpus)?;
    require(&config.vectors_path())?;
    Ok(config)
}

struct Run {
    ws: Workspace,
    manifest: Manifest,
    out: std::path::PathBuf,
}

impl Run {
    fn start(name: &str, common: &Common) -> Result<Self> {
        let config = resolve_config(common)?;
        let mut manifest = Manifest::new(name, &config)?;
        manifest.seeds = config.plan.seeds.clone();
        manifest.input(&config.corpus)?;
        if config.vectors.is_some() {
            manifest.input(&config.vectors_path())?;
        }
        fs::create_dir_all(&common.out)?;
        let ws = Workspace::load(config)?;
        Ok(Self { ws, manifest, out: common.out.clone() })
    }

    fn seed(&self, seed: Option<u64>) -> u64 {
        seed.unwrap_or(self.ws.config.plan.seeds[0])
    }

    fn write(&mut self, name: &str, contents: impl AsRef<[u8]>) -> Result<()> {
        fs::write(self.out.join(name), contents)?;
        self.manifest.output(name);
        Ok(())
    }

    fn save_model(&mut self, model: &Model, log: &TrainLog) -> Result<()> {
        model.save(&self.out.join(CHECKPOINT_FILE))?;
        self.manifest.output(CHECKPOINT_FILE);
        self.write("train_log.tsv", log.to_tsv())
    }

    fn load_model(&mut self, path: &Path) -> Result<Model> {
        require(path)?;
        self.manifest.input(path)?;
        Model::load(path)
    }

    fn finish(self) -> Result<()> {
        self.manifest.write(&self.out.join(MANIFEST_FILE))?;
        info!("wrote {}", self.out.display());
        Ok(())
    }
}

fn gen_data(spec_path: Option<&Path>, seed: Option<u64>, out: &Path) -> Result<()> {
    let mut spec = match spec_path {
        Some(p) => {
            require(p)?;
            let text = fs::read_to_string(p)?;
            toml::from_str(&text).map_err(|e| Error::InvalidArgument(format!("{}: {}", p.display(), e.message())))?
        }
        None => GeneratorSpec::default(),
    };
    if let Some(s) = seed {
        spec.seed = s;
    }
    let datasets = generate_corpus(&spec)?;
    write_corpus(out, &spec, &datasets)?;
    let mut manifest = Manifest::new("gen-data", &spec)?;
    manifest.seeds = vec![spec.seed];
    if let Some(p) = spec_path {
        manifest.input(p)?;
    }
    let mut files: Vec<String> = fs::read_dir(out)?
        .map(|e| e.map(|e| e.file_name().to_string_lossy().into_owned()))
        .collect::<std::io::Result<_>>()?;
    files.retain(|f| f != MANIFEST_FILE);
    files.sort();
    for f in files {
        manifest.output(f);
    }
    manifest.write(&out.join(MANIFEST_FILE))
}

fn train_base(common: &Common, kind: ModelKind, seed: Option<u64>) -> Result<()> {
    let mut run = Run::start("train-base", common)?;
    let seed = run.seed(seed);
    run.manifest.arg("model", format!("{kind:?}").to_lowercase()).arg("seed", seed);
    let (model, log) = match kind {
        ModelKind::Zat => {
            let (m, log) = run.ws.train_zat_base(&run.ws.config.train, seed)?;
            (Model::Zat(m), log)
        }
        ModelKind::Ct => {
            let (m, log) = run.ws.train_ct_base(seed)?;
            (Model::Ct(m), log)
        }
        ModelKind::Lstm => {
            return Err(Error::InvalidArgument("the BiLSTM tagger has no base stage; use train-baseline".into()))
        }
    };
    run.save_model(&model, &log)?;
    run.finish()
}

fn finetune(common: &Common, base: &Path, n: usize, seed: Option<u64>) -> Result<()> {
    let mut run = Run::start("finetune", common)?;
    let seed = run.seed(seed);
    run.manifest.arg("n", n).arg("seed", seed);
    let base = run.load_model(base)?;
    let (model, log) = match &base {
        Model::Zat(m) => {
            let (m, log) = run.ws.fine_tune(m, n, seed)?;
            (Model::Zat(m), log)
        }
        Model::Ct(m) => {
            let (m, log) = run.ws.fine_tune(m, n, seed)?;
            (Model::Ct(m), log)
        }
        Model::Lstm(_) => return Err(Error::InvalidArgument("only zat and ct checkpoints can be fine-tuned".into())),
    };
    run.save_model(&model, &log)?;
    run.finish()
}

fn train_baseline(common: &Common, kind: ModelKind, n: usize, seed: Option<u64>) -> Result<()> {
    let mut run = Run::start("train-baseline", common)?;
    let seed = run.seed(seed);
    run.manifest.arg("model", format!("{kind:?}").to_lowercase()).arg("n", n).arg("seed", seed);
    let (model, log) = match kind {
        ModelKind::Ct => {
            let (m, log) = run.ws.train_ct_base(seed)?;
            (Model::Ct(m), log)
        }
        ModelKind::Lstm => {
            let (m, log) = run.ws.train_lstm(n, seed)?;
            (Model::Lstm(m), log)
        }
        ModelKind::Zat => return Err(Error::InvalidArgument("baselines are ct and lstm".into())),
    };
    run.save_model(&model, &log)?;
    run.finish()
}

#[derive(Serialize)]
struct Summary<'a> {
    model: &'a str,
    split: &'a str,
    precision: f64,
    recall: f64,
    f1: f64,
    shared_slot_f1: f64,
    report: &'a EvalReport,
}

fn split<'a>(ws: &'a Workspace, name: &str) -> Result<&'a [Utterance]> {
    let t = ws.target()?;
    match name {
        "train" => Ok(&t.train),
        "dev" => Ok(&t.dev),
        "test" => Ok(&t.test),
        other => Err(Error::InvalidArgument(format!("unknown split {other:?}"))),
    }
}

fn spans_jsonl(spans: &[SlotSpan]) -> Result<String> {
    let mut out = String::new();
    for s in spans {
        out.push_str(&serde_json::to_string(s)?);
        out.push('\n');
    }
    Ok(out)
}

fn eval(common: &Common, model: &Path, split_name: &str, seed: Option<u64>) -> Result<()> {
    let mut run = Run::start("eval", common)?;
    let seed = run.seed(seed);
    run.manifest.arg("split", split_name).arg("seed", seed);
    let model = run.load_model(model)?;
    let utterances = split(&run.ws, split_name)?;
    let (report, pred) = run.ws.evaluate(&model, utterances, seed)?;
    let shared = run.ws.shared_slots()?;
    let summary = Summary {
        model: model.kind(),
        split: split_name,
        precision: report.precision(),
        recall: report.recall(),
        f1: report.f1(),
        shared_slot_f1: report.restricted(shared.iter().map(String::as_str)).f1(),
        report: &report,
    };
    info!("{} F1 {:.4}", split_name, summary.f1);
    let summary = serde_json::to_string_pretty(&summary)? + "\n";
    let predictions = spans_jsonl(&pred)?;
    run.write("report.tsv", report.to_tsv())?;
    run.write("summary.json", summary)?;
    run.write("predictions.jsonl", predictions)?;
    run.finish()
}

/// Reads one utterance per non-empty line; ids are `line<N>` (1-based).
pub fn read_raw_utterances(path: &Path) -> Result<Vec<Utterance>> {
    let text = fs::read_to_string(path)?;
    Ok(text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| Utterance {
            id: format!("line{}", i + 1),
            domain: String::new(),
            intent: String::new(),
            tokens: l.split_whitespace().map(str::to_string).collect(),
            spans: Vec::new(),
            pos: Vec::new(),
        })
        .collect())
}

fn predict(common: &Common, model: &Path, input: &Path, seed: Option<u64>) -> Result<()> {
    let mut run = Run::start("predict", common)?;
    let seed = run.seed(seed);
    run.manifest.arg("seed", seed);
    let model = run.load_model(model)?;
    require(input)?;
    run.manifest.input(input)?;
    let utterances = read_raw_utterances(input)?;
    let spans = run.ws.predict_spans(&model, &utterances, seed)?;
    let predictions = spans_jsonl(&spans)?;
    run.write("predictions.jsonl", predictions)?;
    run.finish()
}

fn write_runs(run: &mut Run, name: &str, runs: &[RunResult]) -> Result<()> {
    let sizes = run.ws.config.plan.target_sizes.clone();
    run.write(&format!("{name}.tsv"), experiment::table_tsv(runs, &sizes))?;
    run.write(&format!("{name}_runs.tsv"), experiment::runs_tsv(runs))
}

fn ablate(common: &Common) -> Result<()> {
    let mut run = Run::start("ablate", common)?;
    run.manifest.arg("variants", ABLATION_VARIANTS.join(","));
    let runs = experiment::ablate(&run.ws)?;
    write_runs(&mut run, "ablation", &runs)?;
    run.finish()
}

fn sweep(common: &Common, models: &[ModelKind]) -> Result<()> {
    let mut run = Run::start("sweep", common)?;
    let names: Vec<String> = models.iter().map(|m| format!("{m:?}").to_lowercase()).collect();
    run.manifest.arg("models", names.join(","));
    let runs = experiment::sweep(&run.ws, models)?;
    write_runs(&mut run, "learning_curve", &runs)?;
    run.finish()
}

fn buckets_tsv(key: &str, buckets: &BTreeMap<usize, Bucket>) -> String {
    let mut out = format!("{key}\ttotal\tmissed\terror_rate\n");
    for (k, b) in buckets {
        let _ = writeln!(out, "{k}\t{}\t{}\t{:.6}", b.total, b.missed, b.error_rate());
    }
    out
}

fn analyze(common: &Common, model: &Path, min_frequency: usize, min_share: f64, seed: Option<u64>) -> Result<()> {
    let mut run = Run::start("analyze", common)?;
    let seed = run.seed(seed);
    run.manifest.arg("seed", seed).arg("min_frequency", min_frequency).arg("min_share", min_share);
    let model = run.load_model(model)?;
    let test = run.ws.target()?.test.clone();
    let pred = run.ws.predict_spans(&model, &test, seed)?;
    let gold = gold_spans(&test);
    let position = buckets_tsv("start", &error_by_position(&pred, &gold));
    let length = buckets_tsv("length", &error_by_length(&pred, &gold));
    let mut pos = String::from("pos\terrors\tfrequency\tshare\n");
    for (tag, e) in error_by_pos_tag(&pred, &gold, &test)? {
        if e.frequency >= min_frequency && e.share() >= min_share {
            let _ = writeln!(pos, "{tag}\t{}\t{}\t{:.6}", e.errors, e.frequency, e.share());
        }
    }
    run.write("position.tsv", position)?;
    run.write("length.tsv", length)?;
    run.write("pos.tsv", pos)?;
    run.finish()
}

fn dump_attention(common: &Common, model: &Path, slot: &str, text: &str) -> Result<()> {
    let mut run = Run::start("dump-attention", common)?;
    run.manifest.arg("slot", slot).arg("text", text);
    let Model::Zat(model) = run.load_model(model)? else {
        return Err(Error::InvalidArgument("attention needs a zat checkpoint".into()));
    };
    let description = run
        .ws
        .corpus
        .iter()
        .find_map(|d| d.slot(slot))
        .cloned()
        .ok_or_else(|| Error::InvalidArgument(format!("unknown slot {slot:?}")))?;
    let tokens: Vec<String> = text.split_whitespace().map(str::to_string).collect();
    let a = model.attention(&tokens, &description)?;
    write_attention(run.out.join("attention.tsv"), &tokens, &description.tokens, &a)?;
    run.manifest.output("attention.tsv");
    run.finish()
}
