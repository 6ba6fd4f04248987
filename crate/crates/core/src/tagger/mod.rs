//! Per-slot span tagging: BIO conversion, merging per-slot predictions,
//! training-example construction, and the zero-shot model.

pub(crate) mod zat;

use std::collections::BTreeMap;
use std::sync::Arc;

use log::info;
use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::crf::{Tag, TagSequence};
use crate::data::Utterance;
use crate::error::{Error, Result};
use crate::numerics::SeededRng;
use crate::train::Trainable;

pub use zat::{ZatConfig, ZatModel};

/// A slot and the words describing it.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SlotDescription {
    pub slot_id: String,
    pub tokens: Vec<String>,
}

impl SlotDescription {
    pub fn new(slot_id: &str, description: &str) -> Result<Self> {
        let tokens: Vec<String> = description.split_whitespace().map(str::to_string).collect();
        if slot_id.is_empty() || tokens.is_empty() {
            return Err(Error::InvalidArgument(format!("slot {slot_id:?} needs an id and a non-empty description")));
        }
        Ok(Self { slot_id: slot_id.to_string(), tokens })
    }
}

/// A predicted or gold span `[start, end)` of one slot in one utterance.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SlotSpan {
    pub utterance: String,
    pub slot: String,
    pub start: usize,
    pub end: usize,
}

impl SlotSpan {
    pub fn overlaps(&self, other: &SlotSpan) -> bool {
        self.start < other.end && other.start < self.end
    }
}

/// `B` at each span start, `I` inside, `O` elsewhere.
pub fn spans_to_bio(spans: &[(usize, usize)], len: usize) -> Result<TagSequence> {
    let mut tags = vec![Tag::O; len];
    let mut sorted = spans.to_vec();
    sorted.sort_unstable();
    for (k, &(start, end)) in sorted.iter().enumerate() {
        if start >= end || end > len {
            return Err(Error::InvalidArgument(format!("span [{start}, {end}) invalid for length {len}")));
        }
        if k > 0 && start < sorted[k - 1].1 {
            return Err(Error::OverlappingSpans(format!("[{start}, {end}) overlaps {:?}", sorted[k - 1])));
        }
        tags[start] = Tag::B;
        for t in &mut tags[start + 1..end] {
            *t = Tag::I;
        }
    }
    Ok(TagSequence::new(tags))
}

/// Maximal `B I*` runs as `(start, end)`; an orphan `I` opens a span.
pub fn bio_to_spans(tags: &TagSequence) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let mut open: Option<usize> = None;
    for (t, &tag) in tags.tags().iter().enumerate() {
        match tag {
            Tag::B => {
                if let Some(s) = open.take() {
                    out.push((s, t));
                }
                open = Some(t);
            }
            Tag::I => {
                if open.is_none() {
                    open = Some(t);
                }
            }
            Tag::O => {
                if let Some(s) = open.take() {
                    out.push((s, t));
                }
            }
        }
    }
    if let Some(s) = open {
        out.push((s, tags.len()));
    }
    out
}

/// Unions per-slot spans. Spans of different slots that overlap form
/// connected components; from each component one span, drawn uniformly after
/// sorting by `(start, end, slot)`, survives.
pub fn merge_slot_predictions(
    utterance: &str,
    predictions: &BTreeMap<String, TagSequence>,
    rng: &mut SeededRng,
) -> Result<Vec<SlotSpan>> {
    let mut lens = predictions.values().map(TagSequence::len);
    if let Some(first) = lens.next() {
        if lens.any(|l| l != first) {
            return Err(Error::Shape("per-slot predictions have different lengths".into()));
        }
    }
    let mut spans: Vec<SlotSpan> = predictions
        .iter()
        .flat_map(|(slot, tags)| {
            bio_to_spans(tags).into_iter().map(move |(start, end)| SlotSpan {
                utterance: utterance.to_string(),
                slot: slot.clone(),
                start,
                end,
            })
        })
        .collect();
    spans.sort_by(|a, b| (a.start, a.end, &a.slot).cmp(&(b.start, b.end, &b.slot)));
    let mut out = Vec::new();
    let mut component: Vec<SlotSpan> = Vec::new();
    let mut reach = 0;
    for s in spans {
        if !component.is_empty() && s.start >= reach {
            out.push(resolve(std::mem::take(&mut component), rng));
        }
        reach = if component.is_empty() { s.end } else { reach.max(s.end) };
        component.push(s);
    }
    if !component.is_empty() {
        out.push(resolve(component, rng));
    }
    Ok(out)
}

fn resolve(mut component: Vec<SlotSpan>, rng: &mut SeededRng) -> SlotSpan {
    if component.len() == 1 {
        return component.pop().expect("non-empty");
    }
    let k = rng.gen_range(0..component.len());
    component.swap_remove(k)
}

/// One utterance paired with one slot and that slot's gold tags.
#[derive(Clone, Debug, PartialEq)]
pub struct SlotExample {
    pub utterance: Arc<Utterance>,
    pub slot: Arc<SlotDescription>,
    pub gold: TagSequence,
    pub positive: bool,
}

impl SlotExample {
    pub fn new(utterance: Arc<Utterance>, slot: Arc<SlotDescription>) -> Result<Self> {
        let spans: Vec<(usize, usize)> = utterance.spans_for(&slot.slot_id).map(|s| (s.start, s.end)).collect();
        let gold = spans_to_bio(&spans, utterance.len())?;
        Ok(Self { positive: !spans.is_empty(), utterance, slot, gold })
    }
}

/// Per slot: every utterance holding it is a positive; negatives are drawn
/// without replacement from the rest, `neg_ratio` per positive while they last.
pub fn build_slot_examples(
    utterances: &[Utterance],
    catalog: &[SlotDescription],
    rng: &SeededRng,
    neg_ratio: usize,
) -> Result<Vec<SlotExample>> {
    let shared: Vec<Arc<Utterance>> = utterances.iter().cloned().map(Arc::new).collect();
    let mut out = Vec::new();
    for slot in catalog {
        let slot_arc = Arc::new(slot.clone());
        let (pos, neg): (Vec<&Arc<Utterance>>, Vec<&Arc<Utterance>>) =
            shared.iter().partition(|u| u.has_slot(&slot.slot_id));
        if pos.is_empty() {
            info!("slot {} has no positive utterances; skipped", slot.slot_id);
            continue;
        }
        let k = (neg_ratio * pos.len()).min(neg.len());
        let mut picked = sample(&mut rng.fork_named(&slot.slot_id), neg.len(), k).into_vec();
        picked.sort_unstable();
        for u in pos {
            out.push(SlotExample::new(Arc::clone(u), Arc::clone(&slot_arc))?);
        }
        for i in picked {
            out.push(SlotExample::new(Arc::clone(neg[i]), Arc::clone(&slot_arc))?);
        }
    }
    Ok(out)
}

/// A model that tags one slot at a time from its description.
pub trait SlotTagger: Trainable<Example = SlotExample> {
    /// Decoded tags for each `(tokens, slot)` pair.
    fn predict(&self, inputs: &[(&[String], &SlotDescription)]) -> Result<Vec<TagSequence>>;

    /// All slots of `catalog` on one utterance, merged into disjoint spans.
    fn tag_utterance(&self, utterance: &Utterance, catalog: &[SlotDescription], rng: &mut SeededRng) -> Result<Vec<SlotSpan>> {
        if utterance.is_empty() {
            return Err(Error::InvalidArgument(format!("utterance {} is empty", utterance.id)));
        }
        let inputs: Vec<(&[String], &SlotDescription)> = catalog.iter().map(|s| (utterance.tokens.as_slice(), s)).collect();
        let tags = self.predict(&inputs)?;
        let per_slot = catalog.iter().map(|s| s.slot_id.clone()).zip(tags).collect();
        merge_slot_predictions(&utterance.id, &per_slot, rng)
    }
}
