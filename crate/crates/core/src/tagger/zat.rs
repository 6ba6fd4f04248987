//! The zero-shot adaptive tagger: shared contextual BiLSTM over sentence and
//! slot description, description attention, conditional BiLSTM, label scores, CRF.

use std::collections::HashMap;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{SlotDescription, SlotExample, SlotTagger};
use crate::train::Trainable;
use crate::crf::{greedy_decode, nll_on_tape, viterbi_decode, CrfParams, TagSequence, NUM_TAGS};
use crate::embedding::{CharCnnConfig, EmbeddingMatrix, TokenEmbedder, Vocabulary};
use crate::encoder::{attend, condition_encode, dropout, BiLstm, FeedForward, ZatDims};
use crate::error::{Error, Result};
use crate::numerics::{uniform, Binding, ParamId, SeededRng, Var};
use crate::{ParamSet, Real, Tape, Tensor};

/// Inputs scored per tape in `predict`; bounds peak memory.
const PREDICT_CHUNK: usize = 64;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ZatConfig {
    pub dims: ZatDims,
    /// `None` drops the character CNN.
    pub char_cnn: Option<CharCnnConfig>,
    /// Without the CRF, labels are trained with per-token cross-entropy and
    /// decoded greedily.
    pub use_crf: bool,
    /// Update the pretrained word vectors.
    pub weft: bool,
    /// Keep probability for dropout on embeddings and contextual states.
    pub dropout_keep: Real,
}

impl Default for ZatConfig {
    fn default() -> Self {
        Self { dims: ZatDims::default(), char_cnn: Some(CharCnnConfig::default()), use_crf: true, weft: false, dropout_keep: 1.0 }
    }
}

#[derive(Serialize, Deserialize)]
struct Meta {
    kind: String,
    config: ZatConfig,
    word_dim: usize,
    vocab: Vec<String>,
}

#[derive(Clone, Copy, Debug)]
struct CrfIds {
    transitions: ParamId,
    start: ParamId,
    end: ParamId,
}

#[derive(Clone, Debug)]
pub struct ZatModel {
    pub config: ZatConfig,
    vocab: Arc<Vocabulary>,
    params: ParamSet,
    embedder: TokenEmbedder,
    context: BiLstm,
    attention: ParamId,
    cond: BiLstm,
    ff: FeedForward,
    crf: Option<CrfIds>,
}

/// Distinct token sequences laid out back to back as packed columns.
#[derive(Default)]
pub(crate) struct Packing<'s> {
    index: HashMap<&'s [String], usize>,
    pub seqs: Vec<&'s [String]>,
    pub offsets: Vec<usize>,
    pub lens: Vec<usize>,
}

impl<'s> Packing<'s> {
    pub fn add(&mut self, seq: &'s [String]) -> Result<usize> {
        if seq.is_empty() {
            return Err(Error::InvalidArgument("empty token sequence".into()));
        }
        if let Some(&i) = self.index.get(seq) {
            return Ok(i);
        }
        let i = self.seqs.len();
        self.offsets.push(self.lens.iter().sum());
        self.lens.push(seq.len());
        self.seqs.push(seq);
        self.index.insert(seq, i);
        Ok(i)
    }

    pub fn tokens(&self) -> Vec<&'s str> {
        self.seqs.iter().flat_map(|s| s.iter().map(String::as_str)).collect()
    }
}

/// Packed emissions `[3, ΣT]` for a batch, with per-example column ranges.
struct Forward {
    emissions: Var,
    offsets: Vec<usize>,
    lens: Vec<usize>,
    attention: Vec<Var>,
}

impl ZatModel {
    pub fn new(config: ZatConfig, vocab: Arc<Vocabulary>, embeddings: &EmbeddingMatrix, rng: &mut SeededRng) -> Result<Self> {
        if embeddings.table.rows() != vocab.len() {
            return Err(Error::Shape(format!(
                "embedding table has {} rows for {} words",
                embeddings.table.rows(),
                vocab.len()
            )));
        }
        if !(config.dropout_keep > 0.0 && config.dropout_keep <= 1.0) {
            return Err(Error::InvalidArgument(format!("dropout keep {} outside (0, 1]", config.dropout_keep)));
        }
        let mut params = ParamSet::new();
        let emb = EmbeddingMatrix { table: embeddings.table.clone(), trainable: config.weft };
        let embedder = TokenEmbedder::new(&mut params, "embed", &emb, config.char_cnn, rng)?;
        let h = config.dims.lstm_hidden;
        let context = BiLstm::new(&mut params, "context", embedder.output_dim(), h, rng)?;
        let d = context.output_dim();
        let scale = (6.0 / (3 * d + 1) as f64).sqrt();
        let attention = params.add("attention.w", uniform(&[3 * d], scale, rng)?);
        let cond = BiLstm::new(&mut params, "cond", d, h, rng)?;
        let ff = FeedForward::new(&mut params, "ff", d, config.dims.ff_hidden, NUM_TAGS, rng)?;
        let crf = config.use_crf.then(|| {
            let p = CrfParams::<Real>::masked();
            CrfIds {
                transitions: params.add("crf.transitions", p.transitions),
                start: params.add("crf.start", p.start),
                end: params.add("crf.end", p.end),
            }
        });
        Ok(Self { config, vocab, params, embedder, context, attention, cond, ff, crf })
    }

    pub fn vocab(&self) -> &Arc<Vocabulary> {
        &self.vocab
    }

    fn forward(
        &self,
        tape: &mut Tape<'_>,
        bind: &Binding,
        inputs: &[(&[String], &[String])],
        mut rng: Option<&mut SeededRng>,
    ) -> Result<Forward> {
        let mut pack = Packing::default();
        let mut pairs = Vec::with_capacity(inputs.len());
        for &(sentence, description) in inputs {
            pairs.push((pack.add(sentence)?, pack.add(description)?));
        }
        let keep = self.config.dropout_keep;
        let mut e = self.embedder.embed(tape, bind, &self.vocab, &pack.tokens())?;
        if let Some(r) = rng.as_deref_mut() {
            e = dropout(tape, e, keep, r)?;
        }
        let mut c = self.context.encode(tape, bind, e, &pack.lens)?;
        if let Some(r) = rng {
            c = dropout(tape, c, keep, r)?;
        }
        let w = bind.var(self.attention);
        let (mut xs, mut gs, mut attention, mut lens, mut offsets) = (vec![], vec![], vec![], vec![], vec![]);
        let mut col = 0;
        for (s, q) in pairs {
            let x = tape.slice_cols(c, pack.offsets[s], pack.lens[s])?;
            let qv = tape.slice_cols(c, pack.offsets[q], pack.lens[q])?;
            let (a, g) = attend(tape, x, qv, w)?;
            xs.push(x);
            gs.push(g);
            attention.push(a);
            offsets.push(col);
            lens.push(pack.lens[s]);
            col += pack.lens[s];
        }
        let x = tape.concat_cols(&xs)?;
        let g = tape.concat_cols(&gs)?;
        let emissions = condition_encode(tape, bind, g, x, &lens, &self.cond, &self.ff)?;
        Ok(Forward { emissions, offsets, lens, attention })
    }

    fn crf_params(&self) -> Option<CrfParams<Real>> {
        self.crf.map(|ids| CrfParams {
            transitions: self.params.get(ids.transitions).clone(),
            start: self.params.get(ids.start).clone(),
            end: self.params.get(ids.end).clone(),
        })
    }

    /// Emission scores `[3, T]` for one sentence and slot.
    pub fn emissions(&self, tokens: &[String], slot: &SlotDescription) -> Result<Tensor> {
        let mut tape = Tape::new();
        let bind = tape.bind(&self.params);
        let f = self.forward(&mut tape, &bind, &[(tokens, &slot.tokens)], None)?;
        Ok(tape.value(f.emissions).clone())
    }

    /// Attention weights `[T, J]` of sentence tokens over description words.
    pub fn attention(&self, tokens: &[String], slot: &SlotDescription) -> Result<Tensor> {
        let mut tape = Tape::new();
        let bind = tape.bind(&self.params);
        let f = self.forward(&mut tape, &bind, &[(tokens, &slot.tokens)], None)?;
        Ok(tape.value(f.attention[0]).clone())
    }

    pub fn predict_slot(&self, tokens: &[String], slot: &SlotDescription) -> Result<TagSequence> {
        Ok(self.predict(&[(tokens, slot)])?.remove(0))
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        Ok(self.params.to_bytes(&self.meta()?))
    }

    fn meta(&self) -> Result<String> {
        let meta = Meta {
            kind: "zat".into(),
            config: self.config,
            word_dim: self.embedder.word_dim,
            vocab: self.vocab.words().to_vec(),
        };
        Ok(serde_json::to_string(&meta)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.params.save(path, &self.meta()?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let (params, meta) = ParamSet::load(path)?;
        Self::from_parts(params, &meta)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (params, meta) = ParamSet::from_bytes(bytes)?;
        Self::from_parts(params, &meta)
    }

    fn from_parts(params: ParamSet, meta: &str) -> Result<Self> {
        let meta: Meta = serde_json::from_str(meta)?;
        if meta.kind != "zat" {
            return Err(Error::Checkpoint(format!("expected a zat checkpoint, found {}", meta.kind)));
        }
        let vocab = Arc::new(Vocabulary::from_words(meta.vocab)?);
        let table = Tensor::zeros(&[vocab.len(), meta.word_dim]);
        let emb = EmbeddingMatrix { table, trainable: meta.config.weft };
        let mut model = Self::new(meta.config, vocab, &emb, &mut SeededRng::new(0))?;
        if model.params.signature() != params.signature() {
            return Err(Error::Checkpoint("parameter names or shapes do not match the stored config".into()));
        }
        model.params = params;
        Ok(model)
    }
}

impl Trainable for ZatModel {
    type Example = SlotExample;

    fn params(&self) -> &ParamSet {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    fn loss(&self, tape: &mut Tape<'_>, bind: &Binding, batch: &[&SlotExample], rng: &mut SeededRng) -> Result<Var> {
        if batch.is_empty() {
            return Err(Error::InvalidArgument("empty batch".into()));
        }
        let inputs: Vec<(&[String], &[String])> =
            batch.iter().map(|e| (e.utterance.tokens.as_slice(), e.slot.tokens.as_slice())).collect();
        let training = self.config.dropout_keep < 1.0;
        let f = self.forward(tape, bind, &inputs, training.then_some(rng))?;
        let total = match self.crf {
            Some(ids) => {
                let (tr, st, en) = (bind.var(ids.transitions), bind.var(ids.start), bind.var(ids.end));
                let mut total: Option<Var> = None;
                for (k, ex) in batch.iter().enumerate() {
                    let u = tape.slice_cols(f.emissions, f.offsets[k], f.lens[k])?;
                    let nll = nll_on_tape(tape, u, tr, st, en, &ex.gold)?;
                    total = Some(match total {
                        Some(t) => tape.add(t, nll)?,
                        None => nll,
                    });
                }
                total.expect("non-empty batch")
            }
            None => {
                let targets: Vec<usize> = batch.iter().flat_map(|e| e.gold.indices()).collect();
                tape.softmax_cross_entropy(f.emissions, &targets)?
            }
        };
        Ok(tape.scale(total, 1.0 / batch.len() as Real))
    }

}

impl SlotTagger for ZatModel {
    fn predict(&self, inputs: &[(&[String], &SlotDescription)]) -> Result<Vec<TagSequence>> {
        let crf = self.crf_params();
        let mut out = Vec::with_capacity(inputs.len());
        for chunk in inputs.chunks(PREDICT_CHUNK) {
            let pairs: Vec<(&[String], &[String])> = chunk.iter().map(|&(t, s)| (t, s.tokens.as_slice())).collect();
            let mut tape = Tape::new();
            let bind = tape.bind(&self.params);
            let f = self.forward(&mut tape, &bind, &pairs, None)?;
            let all = tape.value(f.emissions);
            for k in 0..chunk.len() {
                let u = slice_cols(all, f.offsets[k], f.lens[k]);
                out.push(match &crf {
                    Some(p) => viterbi_decode(&u, p)?.0,
                    None => greedy_decode(&u)?,
                });
            }
        }
        Ok(out)
    }
}

pub(crate) fn slice_cols(t: &Tensor, start: usize, len: usize) -> Tensor {
    let (rows, cols) = (t.rows(), t.cols());
    let mut data = Vec::with_capacity(rows * len);
    for r in 0..rows {
        data.extend_from_slice(&t.data()[r * cols + start..r * cols + start + len]);
    }
    Tensor::matrix(rows, len, data).expect("slice within bounds")
}
