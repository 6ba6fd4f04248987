//! Vocabulary, pretrained word vectors, and the character-CNN + word-vector
//! token representation.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{xavier_uniform, Binding, ParamId, SeededRng, Var};
use crate::{ParamSet, Real, Tape, Tensor};

pub const UNK: usize = 0;
pub const PAD: usize = 1;
pub const UNK_TOKEN: &str = "<unk>";
pub const PAD_TOKEN: &str = "<pad>";

/// Word ↔ index map with `<unk>` and `<pad>` at fixed positions.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocabulary {
    words: Vec<String>,
    #[serde(skip)]
    index: HashMap<String, usize>,
}

impl Default for Vocabulary {
    fn default() -> Self {
        Self::new()
    }
}

impl Vocabulary {
    pub fn new() -> Self {
        let mut v = Self { words: Vec::new(), index: HashMap::new() };
        v.words.push(UNK_TOKEN.to_string());
        v.words.push(PAD_TOKEN.to_string());
        v.rebuild_index();
        v
    }

    /// Rebuilds from a word list whose first two entries are the specials.
    pub fn from_words(words: Vec<String>) -> Result<Self> {
        if words.len() < 2 || words[UNK] != UNK_TOKEN || words[PAD] != PAD_TOKEN {
            return Err(Error::InvalidArgument("vocabulary must start with <unk>, <pad>".into()));
        }
        let mut v = Self { words, index: HashMap::new() };
        v.rebuild_index();
        if v.index.len() != v.words.len() {
            return Err(Error::InvalidArgument("duplicate words in vocabulary".into()));
        }
        Ok(v)
    }

    fn rebuild_index(&mut self) {
        self.index = self.words.iter().enumerate().map(|(i, w)| (w.clone(), i)).collect();
    }

    /// Adds `word` if absent and returns its index.
    pub fn insert(&mut self, word: &str) -> usize {
        if let Some(&i) = self.index.get(word) {
            return i;
        }
        let i = self.words.len();
        self.words.push(word.to_string());
        self.index.insert(word.to_string(), i);
        i
    }

    pub fn lookup(&self, word: &str) -> usize {
        self.index.get(word).copied().unwrap_or(UNK)
    }

    pub fn contains(&self, word: &str) -> bool {
        self.index.contains_key(word)
    }

    pub fn word(&self, i: usize) -> Option<&str> {
        self.words.get(i).map(String::as_str)
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

/// `|V| × dim` word vectors plus whether they are updated during training.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingMatrix {
    pub table: Tensor,
    pub trainable: bool,
}

impl EmbeddingMatrix {
    pub fn dim(&self) -> usize {
        self.table.cols()
    }

    pub fn row(&self, i: usize) -> &[Real] {
        let d = self.dim();
        &self.table.data()[i * d..(i + 1) * d]
    }
}

/// Reads `word v1 … v_dim` lines. `<unk>` becomes the mean of all loaded
/// rows and `<pad>` the zero vector.
pub fn load_pretrained(path: impl AsRef<Path>, dim: usize) -> Result<(Vocabulary, EmbeddingMatrix)> {
    let path = path.as_ref();
    let file = File::open(path)?;
    parse_pretrained(BufReader::new(file), dim, path)
}

pub fn parse_pretrained(reader: impl BufRead, dim: usize, path: &Path) -> Result<(Vocabulary, EmbeddingMatrix)> {
    let parse_err = |line: usize, message: String| Error::Parse { path: path.to_path_buf(), line, message };
    let mut vocab = Vocabulary::new();
    let mut rows: Vec<Real> = vec![0.0; 2 * dim];
    for (n, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = n + 1;
        if line.trim().is_empty() {
            continue;
        }
        let mut fields = line.split_whitespace();
        let word = fields.next().expect("non-empty line");
        let values = fields
            .map(|f| f.parse::<Real>().map_err(|e| parse_err(lineno, format!("bad value {f:?}: {e}"))))
            .collect::<Result<Vec<_>>>()?;
        if values.len() != dim {
            return Err(parse_err(lineno, format!("expected {dim} values, found {}", values.len())));
        }
        if vocab.contains(word) {
            return Err(parse_err(lineno, format!("duplicate word {word:?}")));
        }
        vocab.insert(word);
        rows.extend(values);
    }
    let loaded = vocab.len() - 2;
    if loaded == 0 {
        return Err(parse_err(0, "no word vectors found".into()));
    }
    for j in 0..dim {
        let mean = (0..loaded).map(|i| rows[(i + 2) * dim + j]).sum::<Real>() / loaded as Real;
        rows[UNK * dim + j] = mean;
    }
    let table = Tensor::new(vec![vocab.len(), dim], rows)?;
    Ok((vocab, EmbeddingMatrix { table, trainable: false }))
}

/// Fixed character inventory: pad, unknown, then printable ASCII.
pub struct CharVocabulary;

impl CharVocabulary {
    pub const PAD: usize = 0;
    pub const UNK: usize = 1;
    const FIRST: u32 = 0x21;
    const LAST: u32 = 0x7e;

    pub fn size() -> usize {
        2 + (Self::LAST - Self::FIRST + 1) as usize
    }

    pub fn index(c: char) -> usize {
        let code = c as u32;
        if (Self::FIRST..=Self::LAST).contains(&code) {
            2 + (code - Self::FIRST) as usize
        } else {
            Self::UNK
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct CharCnnConfig {
    pub char_dim: usize,
    pub width: usize,
    pub channels: usize,
}

impl Default for CharCnnConfig {
    fn default() -> Self {
        Self { char_dim: 16, width: 3, channels: 100 }
    }
}

/// Parameter handles for the character CNN.
#[derive(Clone, Debug)]
pub struct CharCnn {
    pub config: CharCnnConfig,
    pub chars: ParamId,
    pub filters: ParamId,
    pub bias: ParamId,
}

impl CharCnn {
    pub fn new(params: &mut ParamSet, prefix: &str, config: CharCnnConfig, rng: &mut SeededRng) -> Result<Self> {
        if config.char_dim == 0 || config.width == 0 || config.channels == 0 {
            return Err(Error::InvalidArgument(format!("char cnn dims must be positive: {config:?}")));
        }
        let chars = params.add(format!("{prefix}.chars"), xavier_uniform(&[CharVocabulary::size(), config.char_dim], rng)?);
        let filters =
            params.add(format!("{prefix}.filters"), xavier_uniform(&[config.channels, config.width * config.char_dim], rng)?);
        let bias = params.add(format!("{prefix}.bias"), Tensor::zeros(&[config.channels]));
        Ok(Self { config, chars, filters, bias })
    }

    /// Embeds each word to a `channels`-vector; returns `[channels, words.len()]`.
    pub fn embed<S: AsRef<str>>(&self, tape: &mut Tape<'_>, bind: &Binding, words: &[S]) -> Result<Var> {
        let width = self.config.width;
        let mut idx = Vec::new();
        let mut starts = Vec::new();
        let mut counts = Vec::with_capacity(words.len());
        for w in words {
            let w = w.as_ref();
            if w.is_empty() {
                return Err(Error::InvalidArgument("cannot embed an empty word".into()));
            }
            let offset = idx.len();
            idx.extend(w.chars().map(CharVocabulary::index));
            while idx.len() - offset < width {
                idx.push(CharVocabulary::PAD);
            }
            let positions = idx.len() - offset - width + 1;
            starts.extend((0..positions).map(|p| offset + p));
            counts.push(positions);
        }
        let x = tape.gather(bind.var(self.chars), &idx)?;
        let win = tape.windows(x, width, &starts)?;
        let conv = tape.matmul(bind.var(self.filters), win)?;
        let conv = tape.add_col_broadcast(conv, bind.var(self.bias))?;
        tape.segment_max_cols(conv, &counts)
    }
}

/// Word vectors, optionally concatenated below a char-CNN encoding.
#[derive(Clone, Debug)]
pub struct TokenEmbedder {
    pub word: ParamId,
    pub word_dim: usize,
    pub char_cnn: Option<CharCnn>,
}

impl TokenEmbedder {
    /// Registers the word table (frozen unless `emb.trainable`) and, if
    /// requested, a fresh char CNN.
    pub fn new(
        params: &mut ParamSet,
        prefix: &str,
        emb: &EmbeddingMatrix,
        char_cnn: Option<CharCnnConfig>,
        rng: &mut SeededRng,
    ) -> Result<Self> {
        let char_cnn = char_cnn.map(|c| CharCnn::new(params, &format!("{prefix}.char"), c, rng)).transpose()?;
        let word = params.add(format!("{prefix}.words"), emb.table.clone());
        params.set_trainable(word, emb.trainable);
        Ok(Self { word, word_dim: emb.dim(), char_cnn })
    }

    pub fn output_dim(&self) -> usize {
        self.word_dim + self.char_cnn.as_ref().map_or(0, |c| c.config.channels)
    }

    /// `[output_dim, tokens.len()]`; column `t` depends only on token `t`.
    pub fn embed<S: AsRef<str>>(
        &self,
        tape: &mut Tape<'_>,
        bind: &Binding,
        vocab: &Vocabulary,
        tokens: &[S],
    ) -> Result<Var> {
        if tokens.is_empty() {
            return Err(Error::InvalidArgument("cannot embed an empty token sequence".into()));
        }
        let idx: Vec<usize> = tokens.iter().map(|t| vocab.lookup(t.as_ref())).collect();
        let words = tape.gather(bind.var(self.word), &idx)?;
        match &self.char_cnn {
            Some(cnn) => {
                let chars = cnn.embed(tape, bind, tokens)?;
                tape.concat_rows(&[chars, words])
            }
            None => Ok(words),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Cursor;

    fn parse(text: &str, dim: usize) -> Result<(Vocabulary, EmbeddingMatrix)> {
        parse_pretrained(Cursor::new(text), dim, Path::new("mem"))
    }

    #[test]
    fn two_words_give_four_entries() {
        let (v, e) = parse("a 1 2\nb 3 5\n", 2).unwrap();
        assert_eq!(v.len(), 4);
        assert_eq!(e.table.shape(), &[4, 2]);
        assert_eq!(e.row(UNK), &[2.0, 3.5]);
        assert_eq!(e.row(PAD), &[0.0, 0.0]);
        assert_eq!(v.lookup("zzz"), UNK);
        assert_eq!(v.lookup("b"), 3);
    }

    #[test]
    fn wrong_length_reports_line() {
        match parse("a 1 2\nb 3\n", 2) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
        assert!(parse("", 2).is_err());
    }

    #[test]
    fn char_vocabulary_is_total() {
        assert_eq!(CharVocabulary::index('a'), CharVocabulary::index('a'));
        assert_ne!(CharVocabulary::index('a'), CharVocabulary::index('A'));
        assert_eq!(CharVocabulary::index('é'), CharVocabulary::UNK);
        assert!(CharVocabulary::index('~') < CharVocabulary::size());
    }

    #[test]
    fn vocabulary_from_words_checks_specials() {
        assert!(Vocabulary::from_words(vec!["x".into()]).is_err());
        let v = Vocabulary::from_words(vec![UNK_TOKEN.into(), PAD_TOKEN.into(), "hi".into()]).unwrap();
        assert_eq!(v.lookup("hi"), 2);
    }
}
