//! Training and evaluation recipes shared by the commands: base models on
//! the sources, target fine-tuning, baselines, sweeps and ablations.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::sync::Arc;

use log::info;
use serde::{Deserialize, Serialize};
use zat_core::baselines::{CtModel, LstmTagger};
use zat_core::data::{load_corpus, DomainDataset, Utterance, VECTOR_DIM};
use zat_core::embedding::{load_pretrained, EmbeddingMatrix, Vocabulary};
use zat_core::eval::{example_f1, gold_spans, span_f1, tag_all, EvalReport};
use zat_core::numerics::SeededRng;
use zat_core::tagger::{SlotSpan, SlotTagger, ZatConfig, ZatModel};
use zat_core::train::{
    build_joint_dataset, fine_tune, target_dev_examples, target_examples, train_model, unite_catalogs, JointDataset,
    TrainConfig, TrainLog,
};
use zat_core::{Error, Result};

use crate::config::ExperimentConfig;

/// A loaded corpus and embedding table plus the config driving them.
pub struct Workspace {
    pub config: ExperimentConfig,
    pub corpus: Vec<DomainDataset>,
    pub vocab: Arc<Vocabulary>,
    pub embeddings: EmbeddingMatrix,
}

fn init_rng(seed: u64, model: &str) -> SeededRng {
    SeededRng::new(seed).fork_named(&format!("init:{model}"))
}

impl Workspace {
    pub fn load(config: ExperimentConfig) -> Result<Self> {
        config.validate()?;
        let corpus = load_corpus(&config.corpus)?;
        let (vocab, embeddings) = load_pretrained(config.vectors_path(), VECTOR_DIM)?;
        let ws = Self { config, corpus, vocab: Arc::new(vocab), embeddings };
        ws.target()?;
        Ok(ws)
    }

    pub fn target(&self) -> Result<&DomainDataset> {
        let name = &self.config.plan.target;
        self.corpus
            .iter()
            .find(|d| d.domain == *name)
            .ok_or_else(|| Error::InvalidArgument(format!("target domain {name} not in corpus")))
    }

    pub fn joint(&self, seed: u64) -> Result<JointDataset> {
        build_joint_dataset(&self.config.plan, &self.corpus, &self.config.train, seed)
    }

    /// Target slots that some source domain also uses.
    pub fn shared_slots(&self) -> Result<BTreeSet<String>> {
        let sources = self.config.plan.resolved_sources(&self.corpus)?;
        let catalogs = self.corpus.iter().filter(|d| sources.contains(&d.domain)).map(|d| d.catalog.as_slice());
        Ok(zat_core::train::shared_slots(self.target()?, &unite_catalogs(catalogs)))
    }

    pub fn zat_config(&self, train: &TrainConfig) -> ZatConfig {
        train.apply_flags(self.config.zat)
    }

    fn with_seed(config: &TrainConfig, seed: u64) -> TrainConfig {
        TrainConfig { seed, ..config.clone() }
    }

    pub fn train_zat_base(&self, train: &TrainConfig, seed: u64) -> Result<(ZatModel, TrainLog)> {
        let joint = self.joint(seed)?;
        let mut model = ZatModel::new(self.zat_config(train), Arc::clone(&self.vocab), &self.embeddings, &mut init_rng(seed, "zat"))?;
        let dev = joint.dev_examples;
        let log = train_model(&mut model, &joint.examples, &Self::with_seed(train, seed), |m| Ok(example_f1(m, &dev)?.f1()))?;
        Ok((model, log))
    }

    pub fn train_ct_base(&self, seed: u64) -> Result<(CtModel, TrainLog)> {
        let joint = self.joint(seed)?;
        let config = zat_core::baselines::CtConfig { weft: self.config.train.weft, ..self.config.ct };
        let mut model = CtModel::new(config, Arc::clone(&self.vocab), &self.embeddings, &mut init_rng(seed, "ct"))?;
        let dev = joint.dev_examples;
        let log =
            train_model(&mut model, &joint.examples, &Self::with_seed(&self.config.train, seed), |m| Ok(example_f1(m, &dev)?.f1()))?;
        Ok((model, log))
    }

    /// Continues `base` on `n` target utterances; `n = 0` returns it as is.
    pub fn fine_tune<M: SlotTagger + Clone>(&self, base: &M, n: usize, seed: u64) -> Result<(M, TrainLog)> {
        let target = self.target()?;
        let config = Self::with_seed(&self.config.finetune, seed);
        let (_, examples) = target_examples(target, n, &config, seed)?;
        let dev = target_dev_examples(target, &config, seed)?;
        let mut model = base.clone();
        let log = fine_tune(&mut model, &examples, &config, |m| Ok(example_f1(m, &dev)?.f1()))?;
        Ok((model, log))
    }

    /// The closed-tagset tagger trained from scratch on `n` target utterances.
    pub fn train_lstm(&self, n: usize, seed: u64) -> Result<(LstmTagger, TrainLog)> {
        if n == 0 {
            return Err(Error::InvalidArgument("the BiLSTM tagger needs target training data".into()));
        }
        let target = self.target()?;
        let config = Self::with_seed(&self.config.finetune, seed);
        let (sample, _) = target_examples(target, n, &config, seed)?;
        let lstm = zat_core::baselines::LstmTaggerConfig {
            weft: self.config.train.weft,
            dropout_keep: self.config.train.dropout_keep,
            ..self.config.lstm
        };
        let slots = target.catalog.iter().map(|s| s.slot_id.clone()).collect();
        let mut model = LstmTagger::new(lstm, Arc::clone(&self.vocab), &self.embeddings, slots, &mut init_rng(seed, "lstm"))?;
        let dev = &target.dev;
        let gold = gold_spans(dev);
        let log = train_model(&mut model, &sample, &config, |m| Ok(span_f1(&m.tag(dev)?, &gold).f1()))?;
        Ok((model, log))
    }

    /// Merged predictions of every target slot on `utterances`.
    pub fn predict_spans(&self, model: &Model, utterances: &[Utterance], seed: u64) -> Result<Vec<SlotSpan>> {
        let catalog = &self.target()?.catalog;
        let mut rng = SeededRng::new(seed).fork_named("merge");
        match model {
            Model::Zat(m) => tag_all(m, utterances, catalog, &mut rng),
            Model::Ct(m) => tag_all(m, utterances, catalog, &mut rng),
            Model::Lstm(m) => m.tag(utterances),
        }
    }

    pub fn evaluate(&self, model: &Model, utterances: &[Utterance], seed: u64) -> Result<(EvalReport, Vec<SlotSpan>)> {
        let pred = self.predict_spans(model, utterances, seed)?;
        Ok((span_f1(&pred, &gold_spans(utterances)), pred))
    }
}

/// Any trained model a command can load.
#[derive(Clone, Debug)]
pub enum Model {
    Zat(ZatModel),
    Ct(CtModel),
    Lstm(LstmTagger),
}

impl Model {
    pub fn kind(&self) -> &'static str {
        match self {
            Model::Zat(_) => "zat",
            Model::Ct(_) => "ct",
            Model::Lstm(_) => "lstm",
        }
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        match self {
            Model::Zat(m) => m.save(path),
            Model::Ct(m) => m.save(path),
            Model::Lstm(m) => m.save(path),
        }
    }

    /// Dispatches on the kind recorded in the checkpoint.
    pub fn load(path: &std::path::Path) -> Result<Self> {
        #[derive(Deserialize)]
        struct Kind {
            kind: String,
        }
        let (_, meta) = zat_core::ParamSet::load(path)?;
        let kind: Kind = serde_json::from_str(&meta)?;
        match kind.kind.as_str() {
            "zat" => Ok(Model::Zat(ZatModel::load(path)?)),
            "ct" => Ok(Model::Ct(CtModel::load(path)?)),
            "lstm" => Ok(Model::Lstm(LstmTagger::load(path)?)),
            other => Err(Error::Checkpoint(format!("unknown model kind {other}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Zat,
    Ct,
    Lstm,
}

impl std::str::FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "zat" => Ok(Self::Zat),
            "ct" => Ok(Self::Ct),
            "lstm" => Ok(Self::Lstm),
            _ => Err(Error::InvalidArgument(format!("unknown model {s:?}; expected zat, ct or lstm"))),
        }
    }
}

/// One evaluated run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub model: String,
    pub n: usize,
    pub seed: u64,
    pub f1: f64,
    pub shared_f1: f64,
}

fn score(ws: &Workspace, label: &str, model: &Model, n: usize, seed: u64, shared: &BTreeSet<String>) -> Result<RunResult> {
    let (report, _) = ws.evaluate(model, &ws.target()?.test, seed)?;
    let r = RunResult {
        model: label.to_string(),
        n,
        seed,
        f1: report.f1(),
        shared_f1: report.restricted(shared.iter().map(String::as_str)).f1(),
    };
    info!("{label} n={n} seed={seed}: F1 {:.4} (shared {:.4})", r.f1, r.shared_f1);
    Ok(r)
}

/// Fine-tunes each base at every plan size and scores it on the target test set.
fn curve<M: SlotTagger + Clone>(
    ws: &Workspace,
    label: &str,
    base: &M,
    wrap: fn(M) -> Model,
    seed: u64,
    shared: &BTreeSet<String>,
) -> Result<Vec<RunResult>> {
    let mut out = Vec::new();
    for &n in &ws.config.plan.target_sizes {
        let (model, _) = ws.fine_tune(base, n, seed)?;
        out.push(score(ws, label, &wrap(model), n, seed, shared)?);
    }
    Ok(out)
}

/// Learning curves: every requested model at every plan size and seed. The
/// BiLSTM tagger skips `n = 0`.
pub fn sweep(ws: &Workspace, models: &[ModelKind]) -> Result<Vec<RunResult>> {
    let shared = ws.shared_slots()?;
    let mut out = Vec::new();
    for &seed in &ws.config.plan.seeds {
        for kind in models {
            match kind {
                ModelKind::Zat => {
                    let (base, _) = ws.train_zat_base(&ws.config.train, seed)?;
                    out.extend(curve(ws, "zat", &base, Model::Zat, seed, &shared)?);
                }
                ModelKind::Ct => {
                    let (base, _) = ws.train_ct_base(seed)?;
                    out.extend(curve(ws, "ct", &base, Model::Ct, seed, &shared)?);
                }
                ModelKind::Lstm => {
                    for &n in ws.config.plan.target_sizes.iter().filter(|&&n| n > 0) {
                        let (model, _) = ws.train_lstm(n, seed)?;
                        out.push(score(ws, "lstm", &Model::Lstm(model), n, seed, &shared)?);
                    }
                }
            }
        }
    }
    Ok(out)
}

pub const ABLATION_VARIANTS: [&str; 4] = ["ZAT", "-CRF", "-CHAR", "+WEFT"];

/// Base-training switches for an ablation row.
pub fn variant_config(base: &TrainConfig, variant: &str) -> Result<TrainConfig> {
    let mut c = base.clone();
    match variant {
        "ZAT" => {}
        "-CRF" => c.use_crf = false,
        "-CHAR" => c.use_char = false,
        "+WEFT" => c.weft = true,
        other => return Err(Error::InvalidArgument(format!("unknown variant {other}"))),
    }
    Ok(c)
}

/// The four model variants, each trained per seed and fine-tuned at every plan size.
pub fn ablate(ws: &Workspace) -> Result<Vec<RunResult>> {
    let shared = ws.shared_slots()?;
    let mut out = Vec::new();
    for variant in ABLATION_VARIANTS {
        let train = variant_config(&ws.config.train, variant)?;
        for &seed in &ws.config.plan.seeds {
            let (base, _) = ws.train_zat_base(&train, seed)?;
            out.extend(curve(ws, variant, &base, Model::Zat, seed, &shared)?);
        }
    }
    Ok(out)
}

pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// `model n seed f1 shared_f1`, one line per run.
pub fn runs_tsv(runs: &[RunResult]) -> String {
    let mut out = String::from("model\tn\tseed\tf1\tshared_f1\n");
    for r in runs {
        let _ = writeln!(out, "{}\t{}\t{}\t{:.6}\t{:.6}", r.model, r.n, r.seed, r.f1, r.shared_f1);
    }
    out
}

/// Mean F1 (in points) of `model` at size `n` over seeds.
pub fn cell(runs: &[RunResult], model: &str, n: usize) -> Option<(f64, f64)> {
    let xs: Vec<f64> = runs.iter().filter(|r| r.model == model && r.n == n).map(|r| 100.0 * r.f1).collect();
    (!xs.is_empty()).then(|| mean_std(&xs))
}

/// Rows are models in first-seen order, columns plan sizes, cells mean ± std F1.
pub fn table_tsv(runs: &[RunResult], sizes: &[usize]) -> String {
    let mut models: Vec<&str> = Vec::new();
    for r in runs {
        if !models.contains(&r.model.as_str()) {
            models.push(&r.model);
        }
    }
    let mut out = String::from("model");
    for n in sizes {
        let _ = write!(out, "\t{n}");
    }
    out.push('\n');
    for m in models {
        out.push_str(m);
        for &n in sizes {
            match cell(runs, m, n) {
                Some((mean, std)) => {
                    let _ = write!(out, "\t{mean:.2} ± {std:.2}");
                }
                None => out.push_str("\t-"),
            }
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mean_and_sample_std() {
        assert_eq!(mean_std(&[2.0]), (2.0, 0.0));
        let (m, s) = mean_std(&[1.0, 2.0, 3.0]);
        assert!((m - 2.0).abs() < 1e-12 && (s - 1.0).abs() < 1e-12);
    }

    #[test]
    fn table_layout() {
        let run = |model: &str, n, seed, f1| RunResult { model: model.into(), n, seed, f1, shared_f1: f1 };
        let runs = vec![run("ZAT", 0, 1, 0.5), run("ZAT", 0, 2, 0.7), run("-CRF", 0, 1, 0.4)];
        assert_eq!(table_tsv(&runs, &[0, 50]), "model\t0\t50\nZAT\t60.00 ± 14.14\t-\n-CRF\t40.00 ± 0.00\t-\n");
    }

    #[test]
    fn variants_flip_one_switch() {
        let base = TrainConfig::default();
        assert_eq!(variant_config(&base, "ZAT").unwrap(), base);
        assert!(!variant_config(&base, "-CRF").unwrap().use_crf);
        assert!(!variant_config(&base, "-CHAR").unwrap().use_char);
        assert!(variant_config(&base, "+WEFT").unwrap().weft);
        assert!(variant_config(&base, "BoE").is_err());
    }
}
