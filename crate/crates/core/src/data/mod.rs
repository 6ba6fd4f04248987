//! Corpus records, file formats, splits and stratified sampling, plus the
//! synthetic multi-domain generator.

mod generator;
pub mod lexicon;
mod vectors;

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::SeededRng;
use crate::tagger::SlotDescription;

pub use generator::{
    generate_corpus, write_corpus, DomainDef, GeneratorSpec, IntentDef, SlotDef, CATALOG_FILE, VECTORS_FILE,
};
pub use vectors::{render_vectors, VECTOR_DIM};

/// Gold span `[start, end)` for one slot, stored on disk as `[slot, start, end]`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(from = "(String, usize, usize)", into = "(String, usize, usize)")]
pub struct LabeledSpan {
    pub slot: String,
    pub start: usize,
    pub end: usize,
}

impl From<(String, usize, usize)> for LabeledSpan {
    fn from((slot, start, end): (String, usize, usize)) -> Self {
        Self { slot, start, end }
    }
}

impl From<LabeledSpan> for (String, usize, usize) {
    fn from(s: LabeledSpan) -> Self {
        (s.slot, s.start, s.end)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Utterance {
    pub id: String,
    pub domain: String,
    pub intent: String,
    pub tokens: Vec<String>,
    pub spans: Vec<LabeledSpan>,
    #[serde(default)]
    pub pos: Vec<String>,
}

impl Utterance {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn text(&self) -> String {
        self.tokens.join(" ")
    }

    pub fn has_slot(&self, slot: &str) -> bool {
        self.spans.iter().any(|s| s.slot == slot)
    }

    pub fn spans_for<'a>(&'a self, slot: &'a str) -> impl Iterator<Item = &'a LabeledSpan> + 'a {
        self.spans.iter().filter(move |s| s.slot == slot)
    }

    /// Bounds, overlap and POS-length checks.
    pub fn validate(&self) -> Result<()> {
        if self.tokens.is_empty() {
            return Err(Error::Data(format!("utterance {} has no tokens", self.id)));
        }
        if !self.pos.is_empty() && self.pos.len() != self.tokens.len() {
            return Err(Error::Data(format!(
                "utterance {}: {} POS tags for {} tokens",
                self.id,
                self.pos.len(),
                self.tokens.len()
            )));
        }
        let mut sorted: Vec<&LabeledSpan> = self.spans.iter().collect();
        sorted.sort_by_key(|s| (s.start, s.end));
        for s in &sorted {
            if s.start >= s.end || s.end > self.tokens.len() {
                return Err(Error::Data(format!(
                    "utterance {}: span {} [{}, {}) out of bounds for {} tokens",
                    self.id,
                    s.slot,
                    s.start,
                    s.end,
                    self.tokens.len()
                )));
            }
        }
        for w in sorted.windows(2) {
            if w[1].start < w[0].end {
                return Err(Error::OverlappingSpans(format!(
                    "utterance {}: {} [{}, {}) overlaps {} [{}, {})",
                    self.id, w[0].slot, w[0].start, w[0].end, w[1].slot, w[1].start, w[1].end
                )));
            }
        }
        Ok(())
    }
}

/// One domain's slot catalog and splits.
#[derive(Clone, Debug, PartialEq)]
pub struct DomainDataset {
    pub domain: String,
    pub catalog: Vec<SlotDescription>,
    pub train: Vec<Utterance>,
    pub dev: Vec<Utterance>,
    pub test: Vec<Utterance>,
}

impl DomainDataset {
    pub fn slot(&self, id: &str) -> Option<&SlotDescription> {
        self.catalog.iter().find(|s| s.slot_id == id)
    }

    pub fn all(&self) -> impl Iterator<Item = &Utterance> {
        self.train.iter().chain(&self.dev).chain(&self.test)
    }

    pub fn validate(&self) -> Result<()> {
        let slots: HashSet<&str> = self.catalog.iter().map(|s| s.slot_id.as_str()).collect();
        if slots.len() != self.catalog.len() {
            return Err(Error::Data(format!("duplicate slot ids in catalog of {}", self.domain)));
        }
        let mut ids = HashSet::new();
        for u in self.all() {
            u.validate()?;
            if !ids.insert(u.id.as_str()) {
                return Err(Error::Data(format!("utterance id {} appears twice in {}", u.id, self.domain)));
            }
            if let Some(s) = u.spans.iter().find(|s| !slots.contains(s.slot.as_str())) {
                return Err(Error::Data(format!("utterance {} uses slot {} missing from catalog", u.id, s.slot)));
            }
        }
        Ok(())
    }
}

/// Reads one JSON record per line. Blank lines are skipped; errors carry the record's line number.
pub fn load_utterances(path: impl AsRef<Path>) -> Result<Vec<Utterance>> {
    let path = path.as_ref();
    let reader = BufReader::new(fs::File::open(path)?);
    let mut out = Vec::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let err = |message: String| Error::Parse { path: path.to_path_buf(), line: n + 1, message };
        let u: Utterance = serde_json::from_str(&line).map_err(|e| err(e.to_string()))?;
        u.validate().map_err(|e| err(e.to_string()))?;
        out.push(u);
    }
    Ok(out)
}

pub fn save_utterances(path: impl AsRef<Path>, utterances: &[Utterance]) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    for u in utterances {
        serde_json::to_writer(&mut w, u)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// Tab-separated `slot_id, domain, description` rows with a header line.
pub fn save_catalog(path: impl AsRef<Path>, datasets: &[DomainDataset]) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    writeln!(w, "slot_id\tdomain\tdescription")?;
    for d in datasets {
        for s in &d.catalog {
            writeln!(w, "{}\t{}\t{}", s.slot_id, d.domain, s.tokens.join(" "))?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Catalog rows grouped by domain, in file order.
pub fn load_catalog(path: impl AsRef<Path>) -> Result<BTreeMap<String, Vec<SlotDescription>>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)?;
    let mut out: BTreeMap<String, Vec<SlotDescription>> = BTreeMap::new();
    for (n, line) in text.lines().enumerate() {
        if n == 0 || line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: n + 1,
                message: format!("expected 3 tab-separated fields, found {}", fields.len()),
            });
        }
        let slot = SlotDescription::new(fields[0], fields[2]).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: n + 1,
            message: e.to_string(),
        })?;
        out.entry(fields[1].to_string()).or_default().push(slot);
    }
    Ok(out)
}

fn split_path(dir: &Path, domain: &str, split: &str) -> PathBuf {
    dir.join(domain).join(format!("{split}.jsonl"))
}

pub fn save_dataset(dir: impl AsRef<Path>, dataset: &DomainDataset) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir.join(&dataset.domain))?;
    save_utterances(split_path(dir, &dataset.domain, "train"), &dataset.train)?;
    save_utterances(split_path(dir, &dataset.domain, "dev"), &dataset.dev)?;
    save_utterances(split_path(dir, &dataset.domain, "test"), &dataset.test)
}

pub fn load_dataset(dir: impl AsRef<Path>, domain: &str, catalog: Vec<SlotDescription>) -> Result<DomainDataset> {
    let dir = dir.as_ref();
    let d = DomainDataset {
        domain: domain.to_string(),
        catalog,
        train: load_utterances(split_path(dir, domain, "train"))?,
        dev: load_utterances(split_path(dir, domain, "dev"))?,
        test: load_utterances(split_path(dir, domain, "test"))?,
    };
    d.validate()?;
    Ok(d)
}

/// Loads every domain listed in `<dir>/catalog.tsv`, sorted by domain name.
pub fn load_corpus(dir: impl AsRef<Path>) -> Result<Vec<DomainDataset>> {
    let dir = dir.as_ref();
    let catalog = load_catalog(dir.join(CATALOG_FILE))?;
    catalog.into_iter().map(|(domain, slots)| load_dataset(dir, &domain, slots)).collect()
}

/// Apportions `total` among `weights` by the largest-remainder method;
/// ties go to the lower index.
pub fn largest_remainder(weights: &[f64], total: usize) -> Vec<usize> {
    let sum: f64 = weights.iter().sum();
    if weights.is_empty() || sum <= 0.0 {
        return vec![0; weights.len()];
    }
    let exact: Vec<f64> = weights.iter().map(|w| w / sum * total as f64).collect();
    let mut counts: Vec<usize> = exact.iter().map(|e| (e + 1e-9).floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    let frac = |i: usize| exact[i] - counts[i] as f64;
    order.sort_by(|&a, &b| frac(b).partial_cmp(&frac(a)).expect("finite").then(a.cmp(&b)));
    for &i in order.iter().take(total.saturating_sub(assigned)) {
        counts[i] += 1;
    }
    counts
}

fn strata(utterances: &[Utterance]) -> BTreeMap<&str, Vec<usize>> {
    let mut by_intent: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, u) in utterances.iter().enumerate() {
        by_intent.entry(u.intent.as_str()).or_default().push(i);
    }
    by_intent
}

fn permuted(indices: &[usize], rng: &SeededRng, label: &str) -> Vec<usize> {
    let mut v = indices.to_vec();
    v.shuffle(&mut rng.fork_named(label));
    v
}

/// Intent-stratified split. Within each intent the counts follow `ratios`
/// by largest remainder; output keeps input order.
pub fn split_dataset(
    utterances: &[Utterance],
    ratios: [f64; 3],
    rng: &SeededRng,
) -> Result<(Vec<Utterance>, Vec<Utterance>, Vec<Utterance>)> {
    if utterances.is_empty() {
        return Err(Error::InvalidArgument("cannot split an empty dataset".into()));
    }
    if ratios.iter().any(|&r| r < 0.0) || (ratios.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidArgument(format!("split ratios {ratios:?} must be non-negative and sum to 1")));
    }
    let mut assignment = vec![0usize; utterances.len()];
    for (intent, members) in strata(utterances) {
        let counts = largest_remainder(&ratios, members.len());
        let order = permuted(&members, rng, &format!("split:{intent}"));
        let mut k = 0;
        for (part, &c) in counts.iter().enumerate() {
            for &i in &order[k..k + c] {
                assignment[i] = part;
            }
            k += c;
        }
    }
    let mut parts = (Vec::new(), Vec::new(), Vec::new());
    for (u, &a) in utterances.iter().zip(&assignment) {
        match a {
            0 => parts.0.push(u.clone()),
            1 => parts.1.push(u.clone()),
            _ => parts.2.push(u.clone()),
        }
    }
    Ok(parts)
}

/// Intent-proportional subset of size `n`. Each intent contributes a prefix
/// of its own seeded permutation, so larger samples with the same seed
/// contain smaller ones unless largest-remainder rounding shifts a quota down.
pub fn stratified_sample(train: &[Utterance], n: usize, rng: &SeededRng) -> Result<Vec<Utterance>> {
    if n > train.len() {
        return Err(Error::InvalidArgument(format!("cannot sample {n} of {} utterances", train.len())));
    }
    let strata = strata(train);
    let weights: Vec<f64> = strata.values().map(|m| m.len() as f64).collect();
    let quotas = largest_remainder(&weights, n);
    let mut chosen = BTreeSet::new();
    for ((intent, members), q) in strata.iter().zip(quotas) {
        chosen.extend(permuted(members, rng, &format!("sample:{intent}")).into_iter().take(q));
    }
    Ok(chosen.into_iter().map(|i| train[i].clone()).collect())
}
