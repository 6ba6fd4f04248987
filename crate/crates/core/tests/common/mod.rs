#![allow(dead_code)]

use std::sync::Arc;

use rand::Rng;
use zat_core::data::{LabeledSpan, Utterance};
use zat_core::embedding::{EmbeddingMatrix, Vocabulary, PAD_TOKEN, UNK_TOKEN};
use zat_core::numerics::SeededRng;
use zat_core::tagger::SlotDescription;
use zat_core::Tensor;

pub const WORDS: [&str; 16] = [
    "book", "a", "table", "for", "two", "at", "noon", "in", "paris", "cheap", "flight", "to", "rome", "party", "size",
    "city",
];

pub fn vocab_and_table(dim: usize, seed: u64) -> (Arc<Vocabulary>, EmbeddingMatrix) {
    let mut words = vec![UNK_TOKEN.to_string(), PAD_TOKEN.to_string()];
    words.extend(WORDS.iter().map(|w| w.to_string()));
    let vocab = Vocabulary::from_words(words).unwrap();
    let mut rng = SeededRng::new(seed);
    let data = (0..vocab.len() * dim).map(|_| rng.gen_range(-0.5..0.5)).collect();
    let table = Tensor::new(vec![vocab.len(), dim], data).unwrap();
    (Arc::new(vocab), EmbeddingMatrix { table, trainable: false })
}

pub fn utterance(id: &str, text: &str, spans: &[(&str, usize, usize)]) -> Utterance {
    Utterance {
        id: id.into(),
        domain: "toy".into(),
        intent: "book".into(),
        tokens: text.split_whitespace().map(str::to_string).collect(),
        spans: spans.iter().map(|&(s, a, b)| LabeledSpan { slot: s.into(), start: a, end: b }).collect(),
        pos: Vec::new(),
    }
}

pub fn toy_utterances() -> Vec<Utterance> {
    vec![
        utterance("u1", "book a table for two in paris", &[("party_size", 4, 5), ("city", 6, 7)]),
        utterance("u2", "cheap flight to rome at noon", &[("city", 3, 4)]),
        utterance("u3", "book a table at noon", &[]),
        utterance("u4", "flight to paris for two", &[("city", 2, 3), ("party_size", 4, 5)]),
    ]
}

pub fn toy_catalog() -> Vec<SlotDescription> {
    vec![SlotDescription::new("city", "city").unwrap(), SlotDescription::new("party_size", "party size").unwrap()]
}
