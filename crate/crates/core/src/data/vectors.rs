//! Deterministic word vectors for the synthetic lexicon.
//!
//! Each slot has a random centroid. Description words and in-vocabulary
//! value words sit near the centroids of the slots they belong to, so a
//! slot description is close to its values. Template words get their own
//! random vectors and take precedence when a word is both.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write;

use rand::Rng;

use super::generator::{placeholder, GeneratorSpec};
use crate::numerics::SeededRng;

pub const VECTOR_DIM: usize = 100;
const VECTOR_SEED: u64 = 0x5eed_0001;
const CENTROID_SCALE: f64 = 0.5;
const NOISE_SCALE: f64 = 0.2;

fn has_digit(w: &str) -> bool {
    w.chars().any(|c| c.is_ascii_digit() || c == '$')
}

/// Renders `word v1 … v100` lines (five decimals) for every word of the
/// spec's templates, descriptions and embedded slot values, sorted by word.
pub fn render_vectors(spec: &GeneratorSpec) -> String {
    let mut rng = SeededRng::new(VECTOR_SEED);
    let mut uniform = |scale: f64| -> Vec<f64> { (0..VECTOR_DIM).map(|_| rng.gen_range(-scale..scale)).collect() };
    let centroids: Vec<Vec<f64>> = spec.slots.iter().map(|_| uniform(CENTROID_SCALE)).collect();

    let mut template_words = BTreeSet::new();
    for d in &spec.archetypes {
        for i in &d.intents {
            for t in &i.templates {
                template_words.extend(t.split_whitespace().filter(|w| placeholder(w).is_none()).map(str::to_string));
            }
        }
    }
    let mut members: BTreeMap<String, BTreeSet<usize>> = BTreeMap::new();
    for (s, def) in spec.slots.iter().enumerate() {
        for w in def.description.split_whitespace() {
            members.entry(w.to_string()).or_default().insert(s);
        }
        if def.embedded {
            for w in def.values.iter().flat_map(|v| v.split_whitespace()).filter(|w| !has_digit(w)) {
                members.entry(w.to_string()).or_default().insert(s);
            }
        }
    }
    let words: BTreeSet<&String> = template_words.iter().chain(members.keys()).collect();

    let mut out = String::new();
    for w in words {
        let v = match members.get(w.as_str()) {
            Some(slots) if !template_words.contains(w.as_str()) => {
                let noise = uniform(NOISE_SCALE);
                (0..VECTOR_DIM)
                    .map(|j| slots.iter().map(|&s| centroids[s][j]).sum::<f64>() / slots.len() as f64 + noise[j])
                    .collect()
            }
            _ => uniform(CENTROID_SCALE),
        };
        out.push_str(w);
        for x in v {
            write!(out, " {x:.5}").expect("string write");
        }
        out.push('\n');
    }
    out
}
