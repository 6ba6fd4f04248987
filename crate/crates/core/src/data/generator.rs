//! Template-grammar corpus generator.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::Path;

use log::info;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::lexicon::{builtin_domains, builtin_slots, template_pos};
use super::{save_catalog, save_dataset, split_dataset, DomainDataset, LabeledSpan, Utterance};
use crate::error::{Error, Result};
use crate::numerics::SeededRng;
use crate::tagger::SlotDescription;

pub const CATALOG_FILE: &str = "catalog.tsv";
pub const VECTORS_FILE: &str = "vectors.txt";
const MIN_TOKENS: usize = 3;
const MAX_TOKENS: usize = 15;

fn yes() -> bool {
    true
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SlotDef {
    pub id: String,
    pub description: String,
    /// Coarse POS for alphabetic value tokens; tokens with digits or `$` are `NUM`.
    pub pos: String,
    pub values: Vec<String>,
    /// Whether alphabetic value tokens get vectors in the embedding fixture.
    #[serde(default = "yes")]
    pub embedded: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IntentDef {
    pub name: String,
    /// Whitespace-separated tokens; `{slot}` tokens are filled from that slot's pool.
    pub templates: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DomainDef {
    pub name: String,
    pub intents: Vec<IntentDef>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeneratorSpec {
    pub seed: u64,
    /// Number of archetypes to instantiate, taken in order.
    pub domains: usize,
    pub utterances_per_domain: usize,
    pub min_slot_positives: usize,
    pub split: [f64; 3],
    pub slots: Vec<SlotDef>,
    pub archetypes: Vec<DomainDef>,
}

impl Default for GeneratorSpec {
    fn default() -> Self {
        Self {
            seed: 7,
            domains: 5,
            utterances_per_domain: 1000,
            min_slot_positives: 20,
            split: [0.8, 0.1, 0.1],
            slots: builtin_slots(),
            archetypes: builtin_domains(),
        }
    }
}

#[derive(Clone, Debug)]
enum Piece {
    Word(String),
    Slot(usize),
}

struct Template {
    intent: String,
    pieces: Vec<Piece>,
}

impl Template {
    fn slots(&self) -> impl Iterator<Item = usize> + '_ {
        self.pieces.iter().filter_map(|p| match p {
            Piece::Slot(s) => Some(*s),
            Piece::Word(_) => None,
        })
    }
}

pub(crate) fn value_pos<'a>(token: &str, slot_pos: &'a str) -> &'a str {
    if token.chars().any(|c| c.is_ascii_digit() || c == '$') {
        "NUM"
    } else {
        slot_pos
    }
}

pub(crate) fn placeholder(token: &str) -> Option<&str> {
    token.strip_prefix('{').and_then(|t| t.strip_suffix('}'))
}

impl GeneratorSpec {
    fn slot_index(&self) -> BTreeMap<&str, usize> {
        self.slots.iter().enumerate().map(|(i, s)| (s.id.as_str(), i)).collect()
    }

    fn parse_templates(&self, domain: &DomainDef) -> Result<Vec<Template>> {
        let index = self.slot_index();
        let mut out = Vec::new();
        for intent in &domain.intents {
            for text in &intent.templates {
                let mut pieces = Vec::new();
                let (mut lo, mut hi) = (0, 0);
                for tok in text.split_whitespace() {
                    match placeholder(tok) {
                        Some(name) => {
                            let &s = index.get(name).ok_or_else(|| {
                                Error::Data(format!("template {text:?} in {} references unknown slot {name}", domain.name))
                            })?;
                            let lens = self.slots[s].values.iter().map(|v| v.split_whitespace().count());
                            lo += lens.clone().min().unwrap_or(0);
                            hi += lens.max().unwrap_or(0);
                            pieces.push(Piece::Slot(s));
                        }
                        None => {
                            lo += 1;
                            hi += 1;
                            pieces.push(Piece::Word(tok.to_string()));
                        }
                    }
                }
                if lo < MIN_TOKENS || hi > MAX_TOKENS {
                    return Err(Error::Data(format!(
                        "template {text:?} yields {lo}..={hi} tokens, outside {MIN_TOKENS}..={MAX_TOKENS}"
                    )));
                }
                out.push(Template { intent: intent.name.clone(), pieces });
            }
        }
        if out.is_empty() {
            return Err(Error::Data(format!("domain {} has no templates", domain.name)));
        }
        Ok(out)
    }

    fn validate(&self) -> Result<()> {
        if self.domains == 0 || self.domains > self.archetypes.len() {
            return Err(Error::InvalidArgument(format!(
                "domains must be in 1..={}, got {}",
                self.archetypes.len(),
                self.domains
            )));
        }
        if let Some(s) = self.slots.iter().find(|s| s.values.is_empty() || s.description.trim().is_empty()) {
            return Err(Error::Data(format!("slot {} needs values and a description", s.id)));
        }
        if self.slot_index().len() != self.slots.len() {
            return Err(Error::Data("duplicate slot ids in generator spec".into()));
        }
        let mut usage: BTreeMap<usize, usize> = BTreeMap::new();
        for d in &self.archetypes[..self.domains] {
            let used: HashSet<usize> = self.parse_templates(d)?.iter().flat_map(|t| t.slots().collect::<Vec<_>>()).collect();
            for s in used {
                *usage.entry(s).or_default() += 1;
            }
        }
        let shared = usage.values().filter(|&&c| c >= 2).count();
        if self.domains >= 2 && shared < 2 {
            return Err(Error::Data(format!("only {shared} slots are shared across domains; need at least 2")));
        }
        Ok(())
    }
}

fn realize(template: &Template, spec: &GeneratorSpec, domain: &str, rng: &mut SeededRng) -> Utterance {
    let mut tokens = Vec::new();
    let mut pos = Vec::new();
    let mut spans = Vec::new();
    for piece in &template.pieces {
        match piece {
            Piece::Word(w) => {
                pos.push(template_pos(w).to_string());
                tokens.push(w.clone());
            }
            Piece::Slot(s) => {
                let def = &spec.slots[*s];
                let value = &def.values[rng.gen_range(0..def.values.len())];
                let start = tokens.len();
                for tok in value.split_whitespace() {
                    pos.push(value_pos(tok, &def.pos).to_string());
                    tokens.push(tok.to_string());
                }
                spans.push(LabeledSpan { slot: def.id.clone(), start, end: tokens.len() });
            }
        }
    }
    Utterance { id: String::new(), domain: domain.to_string(), intent: template.intent.clone(), tokens, spans, pos }
}

/// Generates the first `spec.domains` archetypes. Utterance texts are unique
/// across the whole corpus and every slot gets at least `min_slot_positives`
/// utterances (topping up beyond the configured size when needed).
pub fn generate_corpus(spec: &GeneratorSpec) -> Result<Vec<DomainDataset>> {
    spec.validate()?;
    let root = SeededRng::new(spec.seed);
    let mut seen: HashSet<String> = HashSet::new();
    let mut out = Vec::new();
    for def in &spec.archetypes[..spec.domains] {
        let templates = spec.parse_templates(def)?;
        let mut rng = root.fork_named(&def.name);
        let mut utterances: Vec<Utterance> = Vec::new();
        let push = |u: Utterance, seen: &mut HashSet<String>, utterances: &mut Vec<Utterance>| {
            if seen.insert(u.text()) {
                utterances.push(u);
                true
            } else {
                false
            }
        };
        let budget = 200 * spec.utterances_per_domain.max(1);
        let mut attempts = 0;
        while utterances.len() < spec.utterances_per_domain {
            if attempts == budget {
                return Err(Error::Data(format!(
                    "domain {} cannot produce {} unique utterances",
                    def.name, spec.utterances_per_domain
                )));
            }
            attempts += 1;
            let t = &templates[rng.gen_range(0..templates.len())];
            let u = realize(t, spec, &def.name, &mut rng);
            push(u, &mut seen, &mut utterances);
        }

        let mut catalog_slots: Vec<usize> = Vec::new();
        for t in &templates {
            for s in t.slots() {
                if !catalog_slots.contains(&s) {
                    catalog_slots.push(s);
                }
            }
        }
        for &s in &catalog_slots {
            let id = &spec.slots[s].id;
            let holders: Vec<&Template> = templates.iter().filter(|t| t.slots().any(|x| x == s)).collect();
            let mut tries = 0;
            while utterances.iter().filter(|u| u.has_slot(id)).count() < spec.min_slot_positives {
                if tries == 10_000 {
                    return Err(Error::Data(format!("slot {id} in {} cannot reach enough positives", def.name)));
                }
                tries += 1;
                let t = holders[rng.gen_range(0..holders.len())];
                let u = realize(t, spec, &def.name, &mut rng);
                push(u, &mut seen, &mut utterances);
            }
        }
        for (i, u) in utterances.iter_mut().enumerate() {
            u.id = format!("{}-{i:05}", def.name);
        }
        let (train, dev, test) = split_dataset(&utterances, spec.split, &rng.fork_named("split"))?;
        let catalog = catalog_slots
            .iter()
            .map(|&s| SlotDescription::new(&spec.slots[s].id, &spec.slots[s].description))
            .collect::<Result<Vec<_>>>()?;
        let dataset = DomainDataset { domain: def.name.clone(), catalog, train, dev, test };
        dataset.validate()?;
        info!("generated {} with {} utterances", def.name, utterances.len());
        out.push(dataset);
    }
    Ok(out)
}

/// Writes per-domain split files, the slot catalog and the matching word vectors.
pub fn write_corpus(dir: impl AsRef<Path>, spec: &GeneratorSpec, datasets: &[DomainDataset]) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    for d in datasets {
        save_dataset(dir, d)?;
    }
    save_catalog(dir.join(CATALOG_FILE), datasets)?;
    fs::write(dir.join(VECTORS_FILE), super::render_vectors(spec))?;
    Ok(())
}
