use std::collections::HashMap;
use std::fs;
use std::path::Path;

use super::{TokenizerError, NUM_SPECIAL, SPECIAL_TOKENS, UNK};

/// Bijective token ↔ id map. Ids `0..5` are the special tokens.
#[derive(Clone, Debug, PartialEq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    /// Specials followed by `words` in the given order; duplicates and
    /// special names are skipped.
    pub fn from_tokens<I, S>(words: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut v = Self {
            tokens: Vec::new(),
            index: HashMap::new(),
        };
        for s in SPECIAL_TOKENS {
            v.push(s.to_string());
        }
        for w in words {
            v.push(w.into());
        }
        v
    }

    fn push(&mut self, tok: String) {
        if !self.index.contains_key(&tok) {
            self.index.insert(tok.clone(), self.tokens.len());
            self.tokens.push(tok);
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    /// Id for a word from raw text; special token names map to UNK.
    pub fn id_or_unk(&self, token: &str) -> usize {
        match self.index.get(token) {
            Some(&id) if id >= NUM_SPECIAL => id,
            _ => UNK,
        }
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// One token per line; the line number is the id.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for t in &self.tokens {
            s.push_str(t);
            s.push('\n');
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self, TokenizerError> {
        let lines: Vec<&str> = text.lines().collect();
        for (i, s) in SPECIAL_TOKENS.iter().enumerate() {
            if lines.get(i) != Some(s) {
                return Err(TokenizerError::Format {
                    line: i + 1,
                    msg: format!("expected special token {s}"),
                });
            }
        }
        let v = Self::from_tokens(lines[NUM_SPECIAL..].iter().copied());
        if v.len() != lines.len() {
            return Err(TokenizerError::Format {
                line: 0,
                msg: "duplicate tokens".into(),
            });
        }
        Ok(v)
    }

    pub fn save(&self, path: &Path) -> Result<(), TokenizerError> {
        fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, TokenizerError> {
        Self::from_text(&fs::read_to_string(path)?)
    }
}

/// Keeps the `max_size - 5` most frequent words, ties broken
/// lexicographically.
pub fn train_word_vocab<D, S>(corpus: &[D], max_size: usize) -> Result<Vocabulary, TokenizerError>
where
    D: AsRef<[S]>,
    S: AsRef<str>,
{
    if max_size < NUM_SPECIAL + 1 {
        return Err(TokenizerError::VocabTooSmall(max_size));
    }
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for doc in corpus {
        for w in doc.as_ref() {
            *counts.entry(w.as_ref()).or_default() += 1;
        }
    }
    if counts.is_empty() {
        return Err(TokenizerError::EmptyCorpus);
    }
    let mut ranked: Vec<(&str, usize)> = counts
        .into_iter()
        .filter(|(w, _)| !SPECIAL_TOKENS.contains(w))
        .collect();
    ranked.sort_unstable_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    ranked.truncate(max_size - NUM_SPECIAL);
    Ok(Vocabulary::from_tokens(ranked.into_iter().map(|(w, _)| w)))
}
