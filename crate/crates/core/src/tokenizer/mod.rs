//! Word-level and character-BPE tokenization.
//!
//! Text is lowercased and split on whitespace before any subword
//! processing. Special token ids are fixed: PAD=0, CLS=1, SEP=2, UNK=3,
//! MASK=4.

mod bpe;
mod vocab;

pub use bpe::{train_bpe, BpeModel, END_OF_WORD};
pub use vocab::{train_word_vocab, Vocabulary};

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const PAD: usize = 0;
pub const CLS: usize = 1;
pub const SEP: usize = 2;
pub const UNK: usize = 3;
pub const MASK: usize = 4;
pub const SPECIAL_TOKENS: [&str; 5] = ["[PAD]", "[CLS]", "[SEP]", "[UNK]", "[MASK]"];
pub const NUM_SPECIAL: usize = SPECIAL_TOKENS.len();

#[derive(Debug, Error)]
pub enum TokenizerError {
    #[error("empty corpus")]
    EmptyCorpus,
    #[error("vocabulary size {0} too small: need room for 5 special tokens and at least one word")]
    VocabTooSmall(usize),
    #[error("malformed tokenizer file at line {line}: {msg}")]
    Format { line: usize, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Lowercases and splits on whitespace.
pub fn normalize(text: &str) -> Vec<String> {
    text.split_whitespace().map(str::to_lowercase).collect()
}

pub fn is_special(id: usize) -> bool {
    id < NUM_SPECIAL
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TokenizerKind {
    #[default]
    Word,
    Bpe,
}

/// What to train: a word vocabulary capped at `vocab_size`, or a BPE model
/// with `merges` merge operations.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TokenizerConfig {
    pub kind: TokenizerKind,
    pub vocab_size: usize,
    pub merges: usize,
}

impl Default for TokenizerConfig {
    fn default() -> Self {
        Self {
            kind: TokenizerKind::Word,
            vocab_size: 8192,
            merges: 2000,
        }
    }
}

impl TokenizerConfig {
    pub fn train<D, S>(&self, corpus: &[D]) -> Result<Tokenizer, TokenizerError>
    where
        D: AsRef<[S]>,
        S: AsRef<str>,
    {
        Ok(match self.kind {
            TokenizerKind::Word => Tokenizer::Word(train_word_vocab(corpus, self.vocab_size)?),
            TokenizerKind::Bpe => Tokenizer::Bpe(train_bpe(corpus, self.merges)?),
        })
    }
}

/// A trained tokenizer of either kind.
#[derive(Clone, Debug, PartialEq)]
pub enum Tokenizer {
    Word(Vocabulary),
    Bpe(BpeModel),
}

impl Tokenizer {
    pub fn vocab(&self) -> &Vocabulary {
        match self {
            Tokenizer::Word(v) => v,
            Tokenizer::Bpe(b) => b.vocab(),
        }
    }

    /// Token ids for already-normalized words. Never emits PAD, CLS, SEP or
    /// MASK.
    pub fn encode_words<S: AsRef<str>>(&self, words: &[S]) -> Vec<usize> {
        match self {
            Tokenizer::Word(v) => words.iter().map(|w| v.id_or_unk(w.as_ref())).collect(),
            Tokenizer::Bpe(b) => {
                let mut out = Vec::with_capacity(words.len());
                for w in words {
                    b.encode_word_into(w.as_ref(), &mut out);
                }
                out
            }
        }
    }

    pub fn tokenize(&self, text: &str) -> Vec<usize> {
        self.encode_words(&normalize(text))
    }

    pub fn detokenize(&self, ids: &[usize]) -> String {
        match self {
            Tokenizer::Word(v) => ids
                .iter()
                .map(|&i| v.token(i).unwrap_or(SPECIAL_TOKENS[UNK]))
                .collect::<Vec<_>>()
                .join(" "),
            Tokenizer::Bpe(b) => b.detokenize(ids),
        }
    }

    pub fn kind(&self) -> TokenizerKind {
        match self {
            Tokenizer::Word(_) => TokenizerKind::Word,
            Tokenizer::Bpe(_) => TokenizerKind::Bpe,
        }
    }

    pub fn save(&self, path: &Path) -> Result<(), TokenizerError> {
        match self {
            Tokenizer::Word(v) => v.save(path),
            Tokenizer::Bpe(b) => b.save(path),
        }
    }

    pub fn load(path: &Path, kind: TokenizerKind) -> Result<Self, TokenizerError> {
        Ok(match kind {
            TokenizerKind::Word => Tokenizer::Word(Vocabulary::load(path)?),
            TokenizerKind::Bpe => Tokenizer::Bpe(BpeModel::load(path)?),
        })
    }
}

/// Subword tokens emitted per whitespace word.
pub fn fragmentation_ratio<D, S>(corpus: &[D], tokenizer: &Tokenizer) -> Result<f64, TokenizerError>
where
    D: AsRef<[S]>,
    S: AsRef<str>,
{
    let mut words = 0usize;
    let mut tokens = 0usize;
    for doc in corpus {
        let doc = doc.as_ref();
        words += doc.len();
        tokens += tokenizer.encode_words(doc).len();
    }
    if words == 0 {
        return Err(TokenizerError::EmptyCorpus);
    }
    Ok(tokens as f64 / words as f64)
}
