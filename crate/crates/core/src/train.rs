//! Mini-batch training with Adam, clipping and dev-metric early stopping;
//! joint source datasets and target fine-tuning.

use std::collections::{BTreeSet, HashSet};
use std::fmt::Write as _;

use log::info;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::{stratified_sample, DomainDataset, Utterance};
use crate::error::{Error, Result};
use crate::numerics::{clip_global_norm, AdamConfig, Binding, SeededRng, Var};
use crate::tagger::{build_slot_examples, SlotDescription, SlotExample, ZatConfig};
use crate::{AdamState, ParamSet, Real, Tape};

/// A model with parameters and a differentiable batch loss.
pub trait Trainable: Send + Sync {
    type Example: Sync;

    fn params(&self) -> &ParamSet;
    fn params_mut(&mut self) -> &mut ParamSet;

    /// Mean loss over `batch`, recorded on `tape`. `rng` drives dropout.
    fn loss(&self, tape: &mut Tape<'_>, bind: &Binding, batch: &[&Self::Example], rng: &mut SeededRng) -> Result<Var>;
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub lr: f64,
    pub clip_norm: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
    pub use_crf: bool,
    pub use_char: bool,
    /// Word-embedding fine-tuning.
    pub weft: bool,
    /// Baseline tagger only.
    pub dropout_keep: Real,
    /// Negatives per positive when building slot examples.
    pub neg_ratio: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 32,
            lr: 1e-3,
            clip_norm: 5.0,
            max_epochs: 100,
            patience: 5,
            seed: 0,
            use_crf: true,
            use_char: true,
            weft: false,
            dropout_keep: 0.8,
            neg_ratio: 3,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.patience == 0 {
            return Err(Error::InvalidArgument("batch_size and patience must be at least 1".into()));
        }
        if !(self.lr > 0.0 && self.clip_norm > 0.0) {
            return Err(Error::InvalidArgument("lr and clip_norm must be positive".into()));
        }
        if !(self.dropout_keep > 0.0 && self.dropout_keep <= 1.0) {
            return Err(Error::InvalidArgument(format!("dropout keep {} outside (0, 1]", self.dropout_keep)));
        }
        Ok(())
    }

    /// `base` with this config's CRF, char and WEFT switches applied. A
    /// char CNN dropped from `base` comes back with default sizes.
    pub fn apply_flags(&self, base: ZatConfig) -> ZatConfig {
        let char_cnn = if self.use_char { Some(base.char_cnn.unwrap_or_default()) } else { None };
        ZatConfig { char_cnn, use_crf: self.use_crf, weft: self.weft, ..base }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean batch loss; `NaN` for the pre-training evaluation.
    pub train_loss: f64,
    pub dev_metric: f64,
    pub best: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub records: Vec<EpochRecord>,
}

impl TrainLog {
    pub fn best(&self) -> Option<&EpochRecord> {
        self.records.iter().rev().find(|r| r.best)
    }

    pub fn best_metric(&self) -> f64 {
        self.best().map_or(f64::NEG_INFINITY, |r| r.dev_metric)
    }

    /// `epoch train_loss dev_metric best`, one line per epoch.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("epoch\ttrain_loss\tdev_metric\tbest\n");
        for r in &self.records {
            let _ = writeln!(out, "{}\t{:.6}\t{:.6}\t{}", r.epoch, r.train_loss, r.dev_metric, u8::from(r.best));
        }
        out
    }
}

/// The example order of `epoch`, a function of `(seed, epoch)` only.
pub fn epoch_order(n: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut SeededRng::new(seed).fork_named("epochs").fork(epoch as u64));
    order
}

/// Trains from the model's current parameters and leaves it holding the
/// parameters with the best dev metric. Stops after `patience` epochs
/// without strict improvement.
pub fn train_model<M, F>(model: &mut M, train: &[M::Example], config: &TrainConfig, dev_metric: F) -> Result<TrainLog>
where
    M: Trainable,
    F: FnMut(&M) -> Result<f64>,
{
    run(model, train, config, dev_metric, false)
}

/// Continues training on target data. The starting parameters are scored
/// first and stay the answer unless an epoch beats them; with no target
/// data the model is returned untouched.
pub fn fine_tune<M, F>(model: &mut M, target: &[M::Example], config: &TrainConfig, dev_metric: F) -> Result<TrainLog>
where
    M: Trainable,
    F: FnMut(&M) -> Result<f64>,
{
    if target.is_empty() {
        config.validate()?;
        return Ok(TrainLog::default());
    }
    run(model, target, config, dev_metric, true)
}

fn run<M, F>(model: &mut M, train: &[M::Example], config: &TrainConfig, mut dev_metric: F, score_start: bool) -> Result<TrainLog>
where
    M: Trainable,
    F: FnMut(&M) -> Result<f64>,
{
    config.validate()?;
    if train.is_empty() {
        return Err(Error::InvalidArgument("no training examples".into()));
    }
    let mut adam = AdamState::new(model.params(), AdamConfig { lr: config.lr, ..AdamConfig::default() });
    let mut log = TrainLog::default();
    let mut best_params: Option<ParamSet> = None;
    let mut best = f64::NEG_INFINITY;
    if score_start {
        best = dev_metric(model)?;
        log.records.push(EpochRecord { epoch: 0, train_loss: f64::NAN, dev_metric: best, best: true });
        best_params = Some(model.params().clone());
    }
    let mut stale = 0;
    for epoch in 1..=config.max_epochs {
        let order = epoch_order(train.len(), config.seed, epoch);
        let mut dropout_rng = SeededRng::new(config.seed).fork_named("dropout").fork(epoch as u64);
        let mut total = 0.0;
        let mut batches = 0;
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<&M::Example> = chunk.iter().map(|&i| &train[i]).collect();
            let mut grads = {
                let mut tape = Tape::new();
                let bind = tape.bind(model.params());
                let loss = model.loss(&mut tape, &bind, &batch, &mut dropout_rng)?;
                let value = tape.value(loss).data()[0];
                if !value.is_finite() {
                    return Err(Error::Diverged(format!("loss {value} at epoch {epoch}, batch {batches}")));
                }
                total += value;
                tape.backward(loss)?.params(&bind)
            };
            clip_global_norm(&mut grads, config.clip_norm)?;
            adam.step(model.params_mut(), &grads)?;
            batches += 1;
        }
        let train_loss = total / batches as f64;
        let dev = dev_metric(model)?;
        let improved = dev > best;
        log.records.push(EpochRecord { epoch, train_loss, dev_metric: dev, best: improved });
        info!("epoch {epoch}: loss {train_loss:.4}, dev {dev:.4}{}", if improved { " *" } else { "" });
        if improved {
            best = dev;
            best_params = Some(model.params().clone());
            stale = 0;
        } else {
            stale += 1;
            if stale >= config.patience {
                break;
            }
        }
    }
    if let Some(p) = best_params {
        model.params_mut().copy_values_from(&p)?;
    }
    Ok(log)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentPlan {
    pub target: String,
    /// Empty means every other domain of the corpus.
    pub sources: Vec<String>,
    /// Training utterances drawn from each source.
    pub take: usize,
    /// Dev utterances drawn from each source for early stopping.
    pub dev_take: usize,
    pub target_sizes: Vec<usize>,
    pub seeds: Vec<u64>,
}

impl Default for ExperimentPlan {
    fn default() -> Self {
        Self {
            target: String::new(),
            sources: Vec::new(),
            take: 2000,
            dev_take: 100,
            target_sizes: vec![0, 50, 100, 200],
            seeds: vec![1, 2, 3],
        }
    }
}

impl ExperimentPlan {
    /// Source names, filled from `corpus` when the plan leaves them empty.
    pub fn resolved_sources(&self, corpus: &[DomainDataset]) -> Result<Vec<String>> {
        if !corpus.iter().any(|d| d.domain == self.target) {
            return Err(Error::InvalidArgument(format!("target domain {:?} not in corpus", self.target)));
        }
        let sources: Vec<String> = if self.sources.is_empty() {
            corpus.iter().map(|d| d.domain.clone()).filter(|d| *d != self.target).collect()
        } else {
            self.sources.clone()
        };
        if sources.contains(&self.target) {
            return Err(Error::InvalidArgument(format!("target {} is also a source", self.target)));
        }
        if sources.is_empty() {
            return Err(Error::InvalidArgument("no source domains".into()));
        }
        Ok(sources)
    }
}

/// Source utterances, united catalog, and per-slot examples for base training.
#[derive(Clone, Debug)]
pub struct JointDataset {
    pub utterances: Vec<Utterance>,
    pub dev: Vec<Utterance>,
    pub catalog: Vec<SlotDescription>,
    pub examples: Vec<SlotExample>,
    pub dev_examples: Vec<SlotExample>,
}

fn domain<'a>(corpus: &'a [DomainDataset], name: &str) -> Result<&'a DomainDataset> {
    corpus.iter().find(|d| d.domain == name).ok_or_else(|| Error::InvalidArgument(format!("unknown domain {name}")))
}

/// Catalogs merged by slot id, first description wins.
pub fn unite_catalogs<'a>(catalogs: impl IntoIterator<Item = &'a [SlotDescription]>) -> Vec<SlotDescription> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for c in catalogs {
        for s in c {
            if seen.insert(s.slot_id.clone()) {
                out.push(s.clone());
            }
        }
    }
    out
}

/// `take` stratified training utterances (and `dev_take` dev utterances)
/// from every source, with slot examples built over the united catalog.
pub fn build_joint_dataset(plan: &ExperimentPlan, corpus: &[DomainDataset], config: &TrainConfig, seed: u64) -> Result<JointDataset> {
    let sources = plan.resolved_sources(corpus)?;
    let rng = SeededRng::new(seed).fork_named("joint");
    let mut utterances = Vec::new();
    let mut dev = Vec::new();
    let mut catalogs = Vec::new();
    for name in &sources {
        let d = domain(corpus, name)?;
        if d.train.len() < plan.take {
            return Err(Error::Data(format!("source {name} has {} training utterances, need {}", d.train.len(), plan.take)));
        }
        utterances.extend(stratified_sample(&d.train, plan.take, &rng.fork_named(&format!("train:{name}")))?);
        dev.extend(stratified_sample(&d.dev, plan.dev_take.min(d.dev.len()), &rng.fork_named(&format!("dev:{name}")))?);
        catalogs.push(d.catalog.as_slice());
    }
    let target = domain(corpus, &plan.target)?;
    let target_texts: HashSet<String> = target.all().map(Utterance::text).collect();
    if let Some(u) = utterances.iter().chain(&dev).find(|u| u.domain == plan.target || target_texts.contains(&u.text())) {
        return Err(Error::Data(format!("utterance {} leaks target data into the sources", u.id)));
    }
    let catalog = unite_catalogs(catalogs);
    let examples = build_slot_examples(&utterances, &catalog, &rng.fork_named("examples"), config.neg_ratio)?;
    let dev_examples = build_slot_examples(&dev, &catalog, &rng.fork_named("dev-examples"), config.neg_ratio)?;
    Ok(JointDataset { utterances, dev, catalog, examples, dev_examples })
}

/// Target training sample of size `n` and its slot examples.
pub fn target_examples(target: &DomainDataset, n: usize, config: &TrainConfig, seed: u64) -> Result<(Vec<Utterance>, Vec<SlotExample>)> {
    let rng = SeededRng::new(seed).fork_named("target");
    let sample = stratified_sample(&target.train, n, &rng.fork_named("sample"))?;
    let examples = build_slot_examples(&sample, &target.catalog, &rng.fork_named("examples"), config.neg_ratio)?;
    Ok((sample, examples))
}

/// Target dev slot examples, drawn once per run.
pub fn target_dev_examples(target: &DomainDataset, config: &TrainConfig, seed: u64) -> Result<Vec<SlotExample>> {
    build_slot_examples(&target.dev, &target.catalog, &SeededRng::new(seed).fork_named("target-dev"), config.neg_ratio)
}

/// Slots of the target catalog that also occur in some source catalog.
pub fn shared_slots(target: &DomainDataset, sources: &[SlotDescription]) -> BTreeSet<String> {
    let source_ids: HashSet<&str> = sources.iter().map(|s| s.slot_id.as_str()).collect();
    target.catalog.iter().map(|s| s.slot_id.clone()).filter(|s| source_ids.contains(s.as_str())).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn epoch_order_depends_on_seed_and_epoch_only() {
        assert_eq!(epoch_order(50, 3, 2), epoch_order(50, 3, 2));
        assert_ne!(epoch_order(50, 3, 2), epoch_order(50, 3, 1));
        assert_ne!(epoch_order(50, 3, 2), epoch_order(50, 4, 2));
        let mut o = epoch_order(50, 3, 2);
        o.sort_unstable();
        assert_eq!(o, (0..50).collect::<Vec<_>>());
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        assert!(TrainConfig { batch_size: 0, ..TrainConfig::default() }.validate().is_err());
        assert!(TrainConfig { patience: 0, ..TrainConfig::default() }.validate().is_err());
    }
}
