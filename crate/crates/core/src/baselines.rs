//! Comparison models: the concept tagger (averaged description, no attention)
//! and a closed-tagset BiLSTM tagger over the target domain's slots.

use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::crf::{greedy_decode, TagSequence, NUM_TAGS};
use crate::data::Utterance;
use crate::embedding::{CharVocabulary, EmbeddingMatrix, Vocabulary};
use crate::encoder::{dropout, BiLstm, Dense};
use crate::error::{Error, Result};
use crate::numerics::{uniform, Binding, ParamId, SeededRng, Var};
use crate::tagger::zat::{slice_cols, Packing};
use crate::tagger::{SlotDescription, SlotExample, SlotSpan, SlotTagger};
use crate::train::Trainable;
use crate::{ParamSet, Real, Tape, Tensor};

const PREDICT_CHUNK: usize = 64;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct CtConfig {
    pub first_hidden: usize,
    pub combine: usize,
    pub second_hidden: usize,
    pub weft: bool,
}

impl Default for CtConfig {
    fn default() -> Self {
        Self { first_hidden: 256, combine: 128, second_hidden: 128, weft: false }
    }
}

#[derive(Serialize, Deserialize)]
struct CtMeta {
    kind: String,
    config: CtConfig,
    word_dim: usize,
    vocab: Vec<String>,
}

/// Concept tagger: the slot is the mean of its description's word vectors,
/// concatenated onto each contextual state and mixed by a tanh layer.
#[derive(Clone, Debug)]
pub struct CtModel {
    pub config: CtConfig,
    vocab: Arc<Vocabulary>,
    params: ParamSet,
    words: ParamId,
    word_dim: usize,
    first: BiLstm,
    combine: Dense,
    second: BiLstm,
    out: Dense,
}

impl CtModel {
    pub fn new(config: CtConfig, vocab: Arc<Vocabulary>, embeddings: &EmbeddingMatrix, rng: &mut SeededRng) -> Result<Self> {
        if embeddings.table.rows() != vocab.len() {
            return Err(Error::Shape(format!(
                "embedding table has {} rows for {} words",
                embeddings.table.rows(),
                vocab.len()
            )));
        }
        let mut params = ParamSet::new();
        let word_dim = embeddings.dim();
        let words = params.add("embed.words", embeddings.table.clone());
        params.set_trainable(words, config.weft);
        let first = BiLstm::new(&mut params, "first", word_dim, config.first_hidden, rng)?;
        let combine = Dense::new(&mut params, "combine", first.output_dim() + word_dim, config.combine, rng)?;
        let second = BiLstm::new(&mut params, "second", config.combine, config.second_hidden, rng)?;
        let out = Dense::new(&mut params, "out", second.output_dim(), NUM_TAGS, rng)?;
        Ok(Self { config, vocab, params, words, word_dim, first, combine, second, out })
    }

    fn lookup(&self, tokens: &[&str]) -> Vec<usize> {
        tokens.iter().map(|t| self.vocab.lookup(t)).collect()
    }

    /// Mean description vector `[word_dim, 1]`.
    fn slot_encoding(&self, tape: &mut Tape<'_>, bind: &Binding, description: &[String]) -> Result<Var> {
        if description.is_empty() {
            return Err(Error::InvalidArgument("empty slot description".into()));
        }
        let idx: Vec<usize> = description.iter().map(|w| self.vocab.lookup(w)).collect();
        let vecs = tape.gather(bind.var(self.words), &idx)?;
        let mean = tape.constant(Tensor::full(&[idx.len(), 1], 1.0 / idx.len() as Real));
        tape.matmul(vecs, mean)
    }

    /// Returns packed scores `[3, ΣT]` and per-example offsets.
    fn forward(
        &self,
        tape: &mut Tape<'_>,
        bind: &Binding,
        inputs: &[(&[String], &[String])],
    ) -> Result<(Var, Vec<usize>, Vec<usize>)> {
        let mut pack = Packing::default();
        let mut ids = Vec::with_capacity(inputs.len());
        for &(sentence, _) in inputs {
            ids.push(pack.add(sentence)?);
        }
        let e = tape.gather(bind.var(self.words), &self.lookup(&pack.tokens()))?;
        let ctx = self.first.encode(tape, bind, e, &pack.lens)?;
        let mut cols = Vec::with_capacity(inputs.len());
        let (mut offsets, mut lens) = (Vec::new(), Vec::new());
        let mut col = 0;
        for (&(_, description), s) in inputs.iter().zip(ids) {
            let t = pack.lens[s];
            let x = tape.slice_cols(ctx, pack.offsets[s], t)?;
            let enc = self.slot_encoding(tape, bind, description)?;
            let ones = tape.constant(Tensor::full(&[1, t], 1.0));
            let tiled = tape.matmul(enc, ones)?;
            cols.push(tape.concat_rows(&[x, tiled])?);
            offsets.push(col);
            lens.push(t);
            col += t;
        }
        let joined = tape.concat_cols(&cols)?;
        let pre = self.combine.affine(tape, bind, joined)?;
        let mixed = tape.tanh(pre);
        let c2 = self.second.encode(tape, bind, mixed, &lens)?;
        Ok((self.out.affine(tape, bind, c2)?, offsets, lens))
    }

    /// The averaged description vector, exposed for inspection.
    pub fn encode_slot(&self, slot: &SlotDescription) -> Result<Tensor> {
        let mut tape = Tape::new();
        let bind = tape.bind(&self.params);
        let v = self.slot_encoding(&mut tape, &bind, &slot.tokens)?;
        Ok(tape.value(v).clone())
    }

    /// Width of the combined per-token representation.
    pub fn combined_dim(&self) -> usize {
        self.config.combine
    }

    pub fn predict_slot(&self, tokens: &[String], slot: &SlotDescription) -> Result<TagSequence> {
        Ok(self.predict(&[(tokens, slot)])?.remove(0))
    }

    fn meta(&self) -> Result<String> {
        let meta =
            CtMeta { kind: "ct".into(), config: self.config, word_dim: self.word_dim, vocab: self.vocab.words().to_vec() };
        Ok(serde_json::to_string(&meta)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.params.save(path, &self.meta()?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let (params, meta) = ParamSet::load(path)?;
        let meta: CtMeta = serde_json::from_str(&meta)?;
        if meta.kind != "ct" {
            return Err(Error::Checkpoint(format!("expected a ct checkpoint, found {}", meta.kind)));
        }
        let vocab = Arc::new(Vocabulary::from_words(meta.vocab)?);
        let emb = EmbeddingMatrix { table: Tensor::zeros(&[vocab.len(), meta.word_dim]), trainable: meta.config.weft };
        let mut model = Self::new(meta.config, vocab, &emb, &mut SeededRng::new(0))?;
        if model.params.signature() != params.signature() {
            return Err(Error::Checkpoint("parameter names or shapes do not match the stored config".into()));
        }
        model.params = params;
        Ok(model)
    }
}

impl Trainable for CtModel {
    type Example = SlotExample;

    fn params(&self) -> &ParamSet {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    fn loss(&self, tape: &mut Tape<'_>, bind: &Binding, batch: &[&SlotExample], _rng: &mut SeededRng) -> Result<Var> {
        if batch.is_empty() {
            return Err(Error::InvalidArgument("empty batch".into()));
        }
        let inputs: Vec<(&[String], &[String])> =
            batch.iter().map(|e| (e.utterance.tokens.as_slice(), e.slot.tokens.as_slice())).collect();
        let (scores, _, _) = self.forward(tape, bind, &inputs)?;
        let targets: Vec<usize> = batch.iter().flat_map(|e| e.gold.indices()).collect();
        let total = tape.softmax_cross_entropy(scores, &targets)?;
        Ok(tape.scale(total, 1.0 / batch.len() as Real))
    }
}

impl SlotTagger for CtModel {
    fn predict(&self, inputs: &[(&[String], &SlotDescription)]) -> Result<Vec<TagSequence>> {
        let mut out = Vec::with_capacity(inputs.len());
        for chunk in inputs.chunks(PREDICT_CHUNK) {
            let pairs: Vec<(&[String], &[String])> = chunk.iter().map(|&(t, s)| (t, s.tokens.as_slice())).collect();
            let mut tape = Tape::new();
            let bind = tape.bind(&self.params);
            let (scores, offsets, lens) = self.forward(&mut tape, &bind, &pairs)?;
            let all = tape.value(scores);
            for k in 0..chunk.len() {
                out.push(greedy_decode(&slice_cols(all, offsets[k], lens[k]))?);
            }
        }
        Ok(out)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LstmTaggerConfig {
    pub char_dim: usize,
    pub char_hidden: usize,
    pub word_hidden: usize,
    pub dropout_keep: Real,
    pub weft: bool,
}

impl Default for LstmTaggerConfig {
    fn default() -> Self {
        Self { char_dim: 16, char_hidden: 25, word_hidden: 100, dropout_keep: 0.8, weft: false }
    }
}

#[derive(Serialize, Deserialize)]
struct LstmMeta {
    kind: String,
    config: LstmTaggerConfig,
    word_dim: usize,
    vocab: Vec<String>,
    slots: Vec<String>,
}

/// BiLSTM tagger over the closed label set `O, B-s, I-s` of one domain.
/// Label 0 is `O`; slot `k` owns `B = 1 + 2k` and `I = 2 + 2k`.
#[derive(Clone, Debug)]
pub struct LstmTagger {
    pub config: LstmTaggerConfig,
    vocab: Arc<Vocabulary>,
    slots: Vec<String>,
    params: ParamSet,
    words: ParamId,
    word_dim: usize,
    chars: ParamId,
    char_lstm: BiLstm,
    word_lstm: BiLstm,
    out: Dense,
}

impl LstmTagger {
    pub fn new(
        config: LstmTaggerConfig,
        vocab: Arc<Vocabulary>,
        embeddings: &EmbeddingMatrix,
        slots: Vec<String>,
        rng: &mut SeededRng,
    ) -> Result<Self> {
        if slots.is_empty() {
            return Err(Error::InvalidArgument("the tagger needs at least one slot".into()));
        }
        if !(config.dropout_keep > 0.0 && config.dropout_keep <= 1.0) {
            return Err(Error::InvalidArgument(format!("dropout keep {} outside (0, 1]", config.dropout_keep)));
        }
        if embeddings.table.rows() != vocab.len() {
            return Err(Error::Shape(format!(
                "embedding table has {} rows for {} words",
                embeddings.table.rows(),
                vocab.len()
            )));
        }
        let mut params = ParamSet::new();
        let word_dim = embeddings.dim();
        let chars = params.add("embed.chars", uniform(&[CharVocabulary::size(), config.char_dim], 0.1, rng)?);
        let words = params.add("embed.words", embeddings.table.clone());
        params.set_trainable(words, config.weft);
        let char_lstm = BiLstm::new(&mut params, "char", config.char_dim, config.char_hidden, rng)?;
        let word_lstm = BiLstm::new(&mut params, "word", char_lstm.output_dim() + word_dim, config.word_hidden, rng)?;
        let out = Dense::new(&mut params, "out", word_lstm.output_dim(), 2 * slots.len() + 1, rng)?;
        Ok(Self { config, vocab, slots, params, words, word_dim, chars, char_lstm, word_lstm, out })
    }

    pub fn slots(&self) -> &[String] {
        &self.slots
    }

    pub fn num_labels(&self) -> usize {
        2 * self.slots.len() + 1
    }

    /// Gold label indices; spans of slots outside the tagset are an error.
    pub fn labels(&self, u: &Utterance) -> Result<Vec<usize>> {
        let mut labels = vec![0; u.len()];
        for s in &u.spans {
            let k = self.slots.iter().position(|x| *x == s.slot).ok_or_else(|| {
                Error::InvalidArgument(format!("slot {} of {} is not in the tagset", s.slot, u.id))
            })?;
            labels[s.start] = 1 + 2 * k;
            for l in &mut labels[s.start + 1..s.end] {
                *l = 2 + 2 * k;
            }
        }
        Ok(labels)
    }

    /// Final forward and backward character states per token, `[2 * char_hidden, n]`.
    fn char_features(&self, tape: &mut Tape<'_>, bind: &Binding, tokens: &[&str]) -> Result<Var> {
        let mut idx = Vec::new();
        let mut lens = Vec::with_capacity(tokens.len());
        for t in tokens {
            let before = idx.len();
            idx.extend(t.chars().map(CharVocabulary::index));
            if idx.len() == before {
                return Err(Error::InvalidArgument("empty token".into()));
            }
            lens.push(idx.len() - before);
        }
        let e = tape.gather(bind.var(self.chars), &idx)?;
        let h = self.char_lstm.encode(tape, bind, e, &lens)?;
        let (mut first, mut last) = (Vec::with_capacity(lens.len()), Vec::with_capacity(lens.len()));
        let mut at = 0;
        for &l in &lens {
            first.push(at);
            last.push(at + l - 1);
            at += l;
        }
        let rows = tape.transpose(h);
        let hidden = self.config.char_hidden;
        let at_last = tape.gather(rows, &last)?;
        let fwd = tape.slice_rows(at_last, 0, hidden)?;
        let at_first = tape.gather(rows, &first)?;
        let bwd = tape.slice_rows(at_first, hidden, hidden)?;
        tape.concat_rows(&[fwd, bwd])
    }

    fn forward(&self, tape: &mut Tape<'_>, bind: &Binding, sentences: &[&[String]], rng: Option<&mut SeededRng>) -> Result<Var> {
        if let Some(s) = sentences.iter().find(|s| s.is_empty()) {
            return Err(Error::InvalidArgument(format!("empty utterance {s:?}")));
        }
        let tokens: Vec<&str> = sentences.iter().flat_map(|s| s.iter().map(String::as_str)).collect();
        let lens: Vec<usize> = sentences.iter().map(|s| s.len()).collect();
        let chars = self.char_features(tape, bind, &tokens)?;
        let idx: Vec<usize> = tokens.iter().map(|t| self.vocab.lookup(t)).collect();
        let words = tape.gather(bind.var(self.words), &idx)?;
        let mut x = tape.concat_rows(&[chars, words])?;
        let keep = self.config.dropout_keep;
        match rng {
            Some(r) => {
                x = dropout(tape, x, keep, r)?;
                let h = self.word_lstm.encode(tape, bind, x, &lens)?;
                let h = dropout(tape, h, keep, r)?;
                self.out.affine(tape, bind, h)
            }
            None => {
                let h = self.word_lstm.encode(tape, bind, x, &lens)?;
                self.out.affine(tape, bind, h)
            }
        }
    }

    /// Per-token argmax labels.
    pub fn predict_labels(&self, sentences: &[&[String]]) -> Result<Vec<Vec<usize>>> {
        let mut out = Vec::with_capacity(sentences.len());
        for chunk in sentences.chunks(PREDICT_CHUNK) {
            let mut tape = Tape::new();
            let bind = tape.bind(&self.params);
            let scores = self.forward(&mut tape, &bind, chunk, None)?;
            let all = tape.value(scores);
            let mut col = 0;
            for s in chunk {
                out.push(
                    (col..col + s.len())
                        .map(|c| {
                            (0..all.rows()).fold(0, |best, r| if all.at(r, c) > all.at(best, c) { r } else { best })
                        })
                        .collect(),
                );
                col += s.len();
            }
        }
        Ok(out)
    }

    /// Spans decoded from the multi-slot labels. An `I-s` not continuing an
    /// `s` span opens one.
    pub fn decode_spans(&self, utterance: &str, labels: &[usize]) -> Vec<SlotSpan> {
        let mut out = Vec::new();
        let mut open: Option<(usize, usize)> = None;
        let close = |open: &mut Option<(usize, usize)>, end: usize, out: &mut Vec<SlotSpan>| {
            if let Some((k, start)) = open.take() {
                out.push(SlotSpan { utterance: utterance.to_string(), slot: self.slots[k].clone(), start, end });
            }
        };
        for (t, &l) in labels.iter().enumerate() {
            if l == 0 {
                close(&mut open, t, &mut out);
                continue;
            }
            let k = (l - 1) / 2;
            let inside = (l - 1) % 2 == 1;
            if !(inside && matches!(open, Some((o, _)) if o == k)) {
                close(&mut open, t, &mut out);
                open = Some((k, t));
            }
        }
        close(&mut open, labels.len(), &mut out);
        out
    }

    pub fn tag(&self, utterances: &[Utterance]) -> Result<Vec<SlotSpan>> {
        let sentences: Vec<&[String]> = utterances.iter().map(|u| u.tokens.as_slice()).collect();
        let labels = self.predict_labels(&sentences)?;
        Ok(utterances.iter().zip(labels).flat_map(|(u, l)| self.decode_spans(&u.id, &l)).collect())
    }

    fn meta(&self) -> Result<String> {
        let meta = LstmMeta {
            kind: "lstm".into(),
            config: self.config,
            word_dim: self.word_dim,
            vocab: self.vocab.words().to_vec(),
            slots: self.slots.clone(),
        };
        Ok(serde_json::to_string(&meta)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.params.save(path, &self.meta()?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let (params, meta) = ParamSet::load(path)?;
        let meta: LstmMeta = serde_json::from_str(&meta)?;
        if meta.kind != "lstm" {
            return Err(Error::Checkpoint(format!("expected an lstm checkpoint, found {}", meta.kind)));
        }
        let vocab = Arc::new(Vocabulary::from_words(meta.vocab)?);
        let emb = EmbeddingMatrix { table: Tensor::zeros(&[vocab.len(), meta.word_dim]), trainable: meta.config.weft };
        let mut model = Self::new(meta.config, vocab, &emb, meta.slots, &mut SeededRng::new(0))?;
        if model.params.signature() != params.signature() {
            return Err(Error::Checkpoint("parameter names or shapes do not match the stored config".into()));
        }
        model.params = params;
        Ok(model)
    }
}

impl Trainable for LstmTagger {
    type Example = Utterance;

    fn params(&self) -> &ParamSet {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    fn loss(&self, tape: &mut Tape<'_>, bind: &Binding, batch: &[&Utterance], rng: &mut SeededRng) -> Result<Var> {
        if batch.is_empty() {
            return Err(Error::InvalidArgument("empty batch".into()));
        }
        let sentences: Vec<&[String]> = batch.iter().map(|u| u.tokens.as_slice()).collect();
        let mut targets = Vec::new();
        for u in batch {
            targets.extend(self.labels(u)?);
        }
        let training = self.config.dropout_keep < 1.0;
        let scores = self.forward(tape, bind, &sentences, training.then_some(rng))?;
        let total = tape.softmax_cross_entropy(scores, &targets)?;
        Ok(tape.scale(total, 1.0 / batch.len() as Real))
    }
}
