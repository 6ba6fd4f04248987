//! Exact-match span scoring and error breakdowns.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::Utterance;
use crate::error::{Error, Result};
use crate::tagger::{bio_to_spans, SlotDescription, SlotExample, SlotSpan, SlotTagger, ZatModel};
use crate::Tensor;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

impl Counts {
    pub fn precision(&self) -> f64 {
        ratio(self.tp, self.tp + self.fp)
    }

    pub fn recall(&self) -> f64 {
        ratio(self.tp, self.tp + self.fn_)
    }

    pub fn f1(&self) -> f64 {
        let (p, r) = (self.precision(), self.recall());
        if p + r == 0.0 {
            0.0
        } else {
            2.0 * p * r / (p + r)
        }
    }

    fn add(&mut self, other: Counts) {
        self.tp += other.tp;
        self.fp += other.fp;
        self.fn_ += other.fn_;
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub micro: Counts,
    pub per_slot: BTreeMap<String, Counts>,
}

impl EvalReport {
    pub fn precision(&self) -> f64 {
        self.micro.precision()
    }

    pub fn recall(&self) -> f64 {
        self.micro.recall()
    }

    pub fn f1(&self) -> f64 {
        self.micro.f1()
    }

    /// Micro counts over a subset of slots.
    pub fn restricted<'a>(&self, slots: impl IntoIterator<Item = &'a str>) -> Counts {
        let mut c = Counts::default();
        for s in slots {
            if let Some(x) = self.per_slot.get(s) {
                c.add(*x);
            }
        }
        c
    }

    /// Tab-separated rows `slot precision recall f1 tp fp fn`, micro last.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("slot\tprecision\trecall\tf1\ttp\tfp\tfn\n");
        let rows = self.per_slot.iter().map(|(s, c)| (s.as_str(), c)).chain([("micro", &self.micro)]);
        for (slot, c) in rows {
            let _ = writeln!(
                out,
                "{slot}\t{:.4}\t{:.4}\t{:.4}\t{}\t{}\t{}",
                c.precision(),
                c.recall(),
                c.f1(),
                c.tp,
                c.fp,
                c.fn_
            );
        }
        out
    }
}

type Key<'a> = (&'a str, &'a str, usize, usize);

fn key(s: &SlotSpan) -> Key<'_> {
    (&s.utterance, &s.slot, s.start, s.end)
}

/// Which predictions and gold spans found an exact partner. Each gold span
/// absorbs at most one prediction.
fn match_spans(pred: &[SlotSpan], gold: &[SlotSpan]) -> (Vec<bool>, Vec<bool>) {
    let mut unmatched_gold: HashMap<Key<'_>, Vec<usize>> = HashMap::new();
    for (i, g) in gold.iter().enumerate().rev() {
        unmatched_gold.entry(key(g)).or_default().push(i);
    }
    let mut pred_hit = vec![false; pred.len()];
    let mut gold_hit = vec![false; gold.len()];
    for (i, p) in pred.iter().enumerate() {
        if let Some(g) = unmatched_gold.get_mut(&key(p)).and_then(Vec::pop) {
            pred_hit[i] = true;
            gold_hit[g] = true;
        }
    }
    (pred_hit, gold_hit)
}

/// Exact `(utterance, slot, start, end)` matching.
pub fn span_f1(pred: &[SlotSpan], gold: &[SlotSpan]) -> EvalReport {
    let (pred_hit, gold_hit) = match_spans(pred, gold);
    let mut report = EvalReport::default();
    for (p, hit) in pred.iter().zip(pred_hit) {
        let c = report.per_slot.entry(p.slot.clone()).or_default();
        if hit {
            c.tp += 1;
        } else {
            c.fp += 1;
        }
    }
    for (g, hit) in gold.iter().zip(gold_hit) {
        if !hit {
            report.per_slot.entry(g.slot.clone()).or_default().fn_ += 1;
        }
    }
    for c in report.per_slot.values() {
        report.micro.add(*c);
    }
    report
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Bucket {
    pub total: usize,
    pub missed: usize,
}

impl Bucket {
    pub fn error_rate(&self) -> f64 {
        ratio(self.missed, self.total)
    }
}

fn error_by(pred: &[SlotSpan], gold: &[SlotSpan], bucket: impl Fn(&SlotSpan) -> usize) -> BTreeMap<usize, Bucket> {
    let (_, gold_hit) = match_spans(pred, gold);
    let mut out: BTreeMap<usize, Bucket> = BTreeMap::new();
    for (g, hit) in gold.iter().zip(gold_hit) {
        let b = out.entry(bucket(g)).or_default();
        b.total += 1;
        b.missed += usize::from(!hit);
    }
    out
}

/// Gold spans bucketed by start index; the rate is one minus recall.
pub fn error_by_position(pred: &[SlotSpan], gold: &[SlotSpan]) -> BTreeMap<usize, Bucket> {
    error_by(pred, gold, |s| s.start)
}

/// Gold spans bucketed by token length.
pub fn error_by_length(pred: &[SlotSpan], gold: &[SlotSpan]) -> BTreeMap<usize, Bucket> {
    error_by(pred, gold, |s| s.end - s.start)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PosErrors {
    /// Tokens with this tag inside a false-positive or missed span.
    pub errors: usize,
    /// Occurrences of the tag across the evaluated utterances.
    pub frequency: usize,
}

impl PosErrors {
    pub fn share(&self) -> f64 {
        ratio(self.errors, self.frequency)
    }
}

/// Every token covered by an unmatched prediction or an unmatched gold span
/// counts one error for its POS tag. Tags without errors are omitted.
pub fn error_by_pos_tag(pred: &[SlotSpan], gold: &[SlotSpan], utterances: &[Utterance]) -> Result<BTreeMap<String, PosErrors>> {
    let by_id: HashMap<&str, &Utterance> = utterances.iter().map(|u| (u.id.as_str(), u)).collect();
    let mut frequency: HashMap<&str, usize> = HashMap::new();
    for u in utterances {
        if u.pos.is_empty() && !u.tokens.is_empty() {
            return Err(Error::Data(format!("utterance {} has no POS tags", u.id)));
        }
        for p in &u.pos {
            *frequency.entry(p.as_str()).or_default() += 1;
        }
    }
    let (pred_hit, gold_hit) = match_spans(pred, gold);
    let wrong = pred.iter().zip(pred_hit).chain(gold.iter().zip(gold_hit)).filter(|(_, hit)| !hit);
    let mut out: BTreeMap<String, PosErrors> = BTreeMap::new();
    for (span, _) in wrong {
        let u = by_id
            .get(span.utterance.as_str())
            .ok_or_else(|| Error::Data(format!("span refers to unknown utterance {}", span.utterance)))?;
        let tags = u.pos.get(span.start..span.end).ok_or_else(|| {
            Error::Data(format!("span [{}, {}) outside utterance {}", span.start, span.end, u.id))
        })?;
        for tag in tags {
            let e = out.entry(tag.clone()).or_default();
            e.errors += 1;
            e.frequency = frequency[tag.as_str()];
        }
    }
    Ok(out)
}

/// Gold spans of every utterance.
pub fn gold_spans(utterances: &[Utterance]) -> Vec<SlotSpan> {
    utterances
        .iter()
        .flat_map(|u| {
            u.spans.iter().map(|s| SlotSpan { utterance: u.id.clone(), slot: s.slot.clone(), start: s.start, end: s.end })
        })
        .collect()
}

/// Per-slot tags turned into spans keyed by the example's utterance and slot.
pub fn example_spans(example: &SlotExample, tags: &crate::crf::TagSequence) -> Vec<SlotSpan> {
    bio_to_spans(tags)
        .into_iter()
        .map(|(start, end)| SlotSpan {
            utterance: example.utterance.id.clone(),
            slot: example.slot.slot_id.clone(),
            start,
            end,
        })
        .collect()
}

/// Span F1 over single-slot examples, without merging across slots.
pub fn example_f1<M: SlotTagger + ?Sized>(model: &M, examples: &[SlotExample]) -> Result<EvalReport> {
    let inputs: Vec<(&[String], &SlotDescription)> =
        examples.iter().map(|e| (e.utterance.tokens.as_slice(), e.slot.as_ref())).collect();
    let tags = model.predict(&inputs)?;
    let mut pred = Vec::new();
    let mut gold = Vec::new();
    for (e, t) in examples.iter().zip(&tags) {
        pred.extend(example_spans(e, t));
        gold.extend(example_spans(e, &e.gold));
    }
    Ok(span_f1(&pred, &gold))
}

/// Tags every utterance with every slot of `catalog`, merging per utterance.
pub fn tag_all<M: SlotTagger + ?Sized>(
    model: &M,
    utterances: &[Utterance],
    catalog: &[SlotDescription],
    rng: &mut crate::numerics::SeededRng,
) -> Result<Vec<SlotSpan>> {
    let mut out = Vec::new();
    for u in utterances {
        out.extend(model.tag_utterance(u, catalog, rng)?);
    }
    Ok(out)
}

/// Writes the `T × J` attention matrix as tab-separated text with the
/// description words as header and sentence tokens as row labels.
pub fn write_attention(path: impl AsRef<Path>, tokens: &[String], description: &[String], a: &Tensor) -> Result<()> {
    if a.shape() != [tokens.len(), description.len()] {
        return Err(Error::Shape(format!(
            "attention {:?} for {} tokens and {} description words",
            a.shape(),
            tokens.len(),
            description.len()
        )));
    }
    let mut out = String::new();
    for w in description {
        out.push('\t');
        out.push_str(w);
    }
    out.push('\n');
    for (t, tok) in tokens.iter().enumerate() {
        out.push_str(tok);
        for j in 0..description.len() {
            let _ = write!(out, "\t{:.6}", a.at(t, j));
        }
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

/// Reads a matrix written by [`write_attention`].
pub fn read_attention(path: impl AsRef<Path>) -> Result<(Vec<String>, Vec<String>, Tensor)> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| Error::Data(format!("{} is empty", path.display())))?;
    let description: Vec<String> = header.split('\t').skip(1).map(str::to_string).collect();
    let mut tokens = Vec::new();
    let mut data = Vec::new();
    for (n, line) in lines.enumerate() {
        let mut fields = line.split('\t');
        tokens.push(fields.next().unwrap_or_default().to_string());
        let row = fields
            .map(|f| f.parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::Parse { path: path.to_path_buf(), line: n + 2, message: e.to_string() })?;
        if row.len() != description.len() {
            return Err(Error::Parse { path: path.to_path_buf(), line: n + 2, message: "wrong number of columns".into() });
        }
        data.extend(row);
    }
    let t = Tensor::matrix(tokens.len(), description.len(), data)?;
    Ok((tokens, description, t))
}

/// Attention of `tokens` over `slot`'s description, written to `path`.
pub fn dump_attention(model: &ZatModel, tokens: &[String], slot: &SlotDescription, path: impl AsRef<Path>) -> Result<Tensor> {
    let a = model.attention(tokens, slot)?;
    write_attention(path, tokens, &slot.tokens, &a)?;
    Ok(a)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn span(u: &str, slot: &str, start: usize, end: usize) -> SlotSpan {
        SlotSpan { utterance: u.into(), slot: slot.into(), start, end }
    }

    #[test]
    fn perfect_and_off_by_one() {
        let gold = vec![span("a", "x", 0, 2)];
        let r = span_f1(&gold, &gold);
        assert_eq!((r.precision(), r.recall(), r.f1()), (1.0, 1.0, 1.0));
        let r = span_f1(&[span("a", "x", 0, 1)], &gold);
        assert_eq!((r.micro.tp, r.micro.fp, r.micro.fn_), (0, 1, 1));
        assert_eq!(span_f1(&[], &[]).f1(), 0.0);
    }

    #[test]
    fn duplicate_predictions_match_once() {
        let gold = vec![span("a", "x", 0, 2)];
        let pred = vec![span("a", "x", 0, 2), span("a", "x", 0, 2)];
        let r = span_f1(&pred, &gold);
        assert_eq!((r.micro.tp, r.micro.fp, r.micro.fn_), (1, 1, 0));
    }
}
