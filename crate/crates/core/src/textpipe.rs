//! Text preprocessing: tokenization, stop-word removal, a frequency-ranked
//! vocabulary fitted per cross-validation fold, and fixed-length
//! vectorization with begin-truncation and begin-padding.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::path::Path;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Characters replaced by a space before splitting.
pub const FILTER_CHARS: &str = "!\"#$%&()*+,-./:;<=>?@[\\]^_`{|}~\t\n";

/// Vocabulary file format written by [`Vocabulary::to_json`].
pub const VOCAB_FORMAT_VERSION: u32 = 1;

/// Display symbol used for the padding id in attribution outputs.
pub const PAD_SYMBOL: &str = "<PAD>";

const ENGLISH_STOPWORDS: &str = include_str!("../data/stopwords_en.txt");

/// Lowercases, replaces the filter characters by spaces and splits on
/// whitespace.
pub fn normalize_and_tokenize(text: &str) -> Vec<String> {
    let cleaned: String = text
        .to_lowercase()
        .chars()
        .map(|c| if FILTER_CHARS.contains(c) { ' ' } else { c })
        .collect();
    cleaned.split_whitespace().map(str::to_owned).collect()
}

/// A frozen stop-word set together with the sha256 of its source text.
#[derive(Debug, Clone)]
pub struct StopwordList {
    words: HashSet<String>,
    checksum: String,
}

impl StopwordList {
    /// The bundled 179-word English list.
    pub fn english() -> Self {
        Self::from_text(ENGLISH_STOPWORDS).expect("bundled list is valid")
    }

    /// Parses one word per line. Blank lines are ignored; entries must be
    /// lowercase and unique.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut words = HashSet::new();
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty()) {
            if line != line.to_lowercase() {
                return Err(Error::Data(format!("stop-word `{line}` is not lowercase")));
            }
            if !words.insert(line.to_owned()) {
                return Err(Error::Data(format!("duplicate stop-word `{line}`")));
            }
        }
        Ok(StopwordList {
            words,
            checksum: sha256_hex(text.as_bytes()),
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }

    pub fn empty() -> Self {
        Self::from_text("").unwrap()
    }

    pub fn contains(&self, word: &str) -> bool {
        self.words.contains(word)
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn checksum(&self) -> &str {
        &self.checksum
    }
}

/// Order-preserving removal of stop-words.
pub fn remove_stopwords(tokens: Vec<String>, list: &StopwordList) -> Vec<String> {
    tokens.into_iter().filter(|t| !list.contains(t)).collect()
}

/// Tokenize and drop stop-words: the full text-to-token path.
pub fn preprocess(text: &str, list: &StopwordList) -> Vec<String> {
    remove_stopwords(normalize_and_tokenize(text), list)
}

/// Identifies the cross-validation split a vocabulary was fitted on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldTag {
    pub fold: usize,
    pub k: usize,
    pub seed: u64,
    pub window_hours: f64,
}

impl fmt::Display for FoldTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "fold {}/{} (seed {}, {}h window)",
            self.fold + 1,
            self.k,
            self.seed,
            self.window_hours
        )
    }
}

/// Word → index map ranked by training-corpus frequency.
///
/// Index 0 is reserved for padding; words occupy `1..=len()` in descending
/// frequency, ties resolved by first occurrence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Vocabulary {
    format_version: u32,
    max_words: usize,
    fitted_on: FoldTag,
    stopword_checksum: String,
    word_to_index: IndexMap<String, usize>,
    #[serde(skip)]
    index_to_word: Vec<String>,
}

impl Vocabulary {
    /// Fits on the training documents of one fold, keeping the
    /// `max_words − 1` most frequent words.
    pub fn fit<D: AsRef<[String]>>(
        docs: &[D],
        max_words: usize,
        fitted_on: FoldTag,
        stopwords: &StopwordList,
    ) -> Self {
        let mut counts: HashMap<&str, (usize, usize)> = HashMap::new();
        let mut order = 0usize;
        for doc in docs {
            for tok in doc.as_ref() {
                let entry = counts.entry(tok.as_str()).or_insert_with(|| {
                    order += 1;
                    (0, order)
                });
                entry.0 += 1;
            }
        }
        if counts.is_empty() {
            log::warn!("fitting a vocabulary on an empty corpus ({fitted_on})");
        }
        let mut ranked: Vec<(&str, usize, usize)> =
            counts.into_iter().map(|(w, (c, first))| (w, c, first)).collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.2.cmp(&b.2)));
        let capacity = max_words.saturating_sub(1);
        let word_to_index: IndexMap<String, usize> = ranked
            .into_iter()
            .take(capacity)
            .enumerate()
            .map(|(i, (w, _, _))| (w.to_owned(), i + 1))
            .collect();
        Self::assemble(max_words, fitted_on, stopwords.checksum().to_owned(), word_to_index)
    }

    fn assemble(
        max_words: usize,
        fitted_on: FoldTag,
        stopword_checksum: String,
        word_to_index: IndexMap<String, usize>,
    ) -> Self {
        let mut index_to_word = vec![PAD_SYMBOL.to_owned(); word_to_index.len() + 1];
        for (w, &i) in &word_to_index {
            index_to_word[i] = w.clone();
        }
        Vocabulary {
            format_version: VOCAB_FORMAT_VERSION,
            max_words,
            fitted_on,
            stopword_checksum,
            word_to_index,
            index_to_word,
        }
    }

    /// Number of indexed words (excluding padding).
    pub fn len(&self) -> usize {
        self.word_to_index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.word_to_index.is_empty()
    }

    /// Rows needed by an embedding table covering this vocabulary.
    pub fn table_rows(&self) -> usize {
        self.len() + 1
    }

    pub fn max_words(&self) -> usize {
        self.max_words
    }

    pub fn fitted_on(&self) -> &FoldTag {
        &self.fitted_on
    }

    pub fn stopword_checksum(&self) -> &str {
        &self.stopword_checksum
    }

    pub fn index_of(&self, word: &str) -> Option<usize> {
        self.word_to_index.get(word).copied()
    }

    /// Word for an index; index 0 yields [`PAD_SYMBOL`].
    pub fn word_of(&self, index: usize) -> Option<&str> {
        self.index_to_word.get(index).map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, usize)> {
        self.word_to_index.iter().map(|(w, &i)| (w.as_str(), i))
    }

    pub fn to_json(&self) -> Vec<u8> {
        let mut out = serde_json::to_vec_pretty(self).expect("vocabulary serializes");
        out.push(b'\n');
        out
    }

    /// sha256 of the canonical JSON encoding.
    pub fn checksum(&self) -> String {
        sha256_hex(&self.to_json())
    }

    pub fn from_json(bytes: &[u8]) -> Result<Self> {
        let raw: Vocabulary = serde_json::from_slice(bytes)?;
        if raw.format_version != VOCAB_FORMAT_VERSION {
            return Err(Error::Version {
                found: raw.format_version,
                supported: VOCAB_FORMAT_VERSION,
            });
        }
        let mut seen = vec![false; raw.word_to_index.len() + 1];
        for &i in raw.word_to_index.values() {
            if i == 0 || i >= seen.len() || std::mem::replace(&mut seen[i], true) {
                return Err(Error::Data(format!("vocabulary index {i} is not in 1..=K or repeats")));
            }
        }
        Ok(Self::assemble(
            raw.max_words,
            raw.fitted_on,
            raw.stopword_checksum,
            raw.word_to_index,
        ))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&bytes)
    }
}

/// Fixed-length id sequence; zeros occupy exactly the first `pad_count`
/// slots.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenSequence {
    pub ids: Vec<usize>,
    pub pad_count: usize,
    pub patient_id: String,
}

impl TokenSequence {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Builds a sequence from already-indexed ids (no zeros expected):
    /// keeps the last `max_len` and left-pads with zeros.
    pub fn from_ids(ids: &[usize], max_len: usize, patient_id: impl Into<String>) -> Self {
        let keep = &ids[ids.len().saturating_sub(max_len)..];
        let pad_count = max_len - keep.len();
        let mut out = vec![0; pad_count];
        out.extend_from_slice(keep);
        TokenSequence {
            ids: out,
            pad_count,
            patient_id: patient_id.into(),
        }
    }
}

/// Maps tokens to ids (dropping out-of-vocabulary words), keeps the last
/// `max_len` ids and left-pads with zeros.
pub fn vectorize(
    tokens: &[String],
    vocab: &Vocabulary,
    max_len: usize,
    patient_id: impl Into<String>,
) -> TokenSequence {
    let ids: Vec<usize> = tokens.iter().filter_map(|t| vocab.index_of(t)).collect();
    TokenSequence::from_ids(&ids, max_len, patient_id)
}

/// Preprocessing bound to one fold's vocabulary.
///
/// Refuses to vectorize for a fold other than the one the vocabulary was
/// fitted on.
#[derive(Debug, Clone)]
pub struct TextPipeline {
    stopwords: StopwordList,
    vocab: Vocabulary,
    max_len: usize,
}

impl TextPipeline {
    pub fn new(stopwords: StopwordList, vocab: Vocabulary, max_len: usize) -> Result<Self> {
        if max_len == 0 {
            return Err(Error::Config("max_len must be at least 1".into()));
        }
        if vocab.stopword_checksum() != stopwords.checksum() {
            return Err(Error::Checksum {
                expected: vocab.stopword_checksum().to_owned(),
                found: stopwords.checksum().to_owned(),
            });
        }
        Ok(TextPipeline {
            stopwords,
            vocab,
            max_len,
        })
    }

    pub fn vocabulary(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn stopwords(&self) -> &StopwordList {
        &self.stopwords
    }

    pub fn max_len(&self) -> usize {
        self.max_len
    }

    pub fn tokens(&self, text: &str) -> Vec<String> {
        preprocess(text, &self.stopwords)
    }

    /// Vectorizes a document belonging to `fold`.
    pub fn vectorize_for(&self, fold: &FoldTag, patient_id: &str, text: &str) -> Result<TokenSequence> {
        if fold != self.vocab.fitted_on() {
            return Err(Error::FoldLeak {
                fitted_on: self.vocab.fitted_on().to_string(),
                requested: fold.to_string(),
            });
        }
        Ok(self.vectorize(patient_id, text))
    }

    /// Vectorizes free text outside any cross-validation context (inference).
    pub fn vectorize(&self, patient_id: &str, text: &str) -> TokenSequence {
        vectorize(&self.tokens(text), &self.vocab, self.max_len, patient_id)
    }
}

pub(crate) fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    digest.iter().map(|b| format!("{b:02x}")).collect()
}
