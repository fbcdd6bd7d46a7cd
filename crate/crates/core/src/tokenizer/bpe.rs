use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::path::Path;

use super::{TokenizerError, Vocabulary, NUM_SPECIAL, UNK};

/// Appended to the last symbol of every word.
pub const END_OF_WORD: &str = "</w>";

/// Character-level byte-pair merges applied within words.
#[derive(Clone, Debug, PartialEq)]
pub struct BpeModel {
    merges: Vec<(String, String)>,
    ranks: HashMap<(String, String), usize>,
    vocab: Vocabulary,
}

fn initial_symbols(word: &str) -> Vec<String> {
    let chars: Vec<char> = word.chars().collect();
    let n = chars.len();
    chars
        .into_iter()
        .enumerate()
        .map(|(i, c)| {
            if i + 1 == n {
                format!("{c}{END_OF_WORD}")
            } else {
                c.to_string()
            }
        })
        .collect()
}

fn merge_pair(symbols: &mut Vec<String>, left: &str, right: &str) {
    let mut i = 0;
    while i + 1 < symbols.len() {
        if symbols[i] == left && symbols[i + 1] == right {
            let merged = format!("{left}{right}");
            symbols[i] = merged;
            symbols.remove(i + 1);
        }
        i += 1;
    }
}

impl BpeModel {
    fn new(merges: Vec<(String, String)>, base: BTreeSet<String>) -> Self {
        let ranks = merges
            .iter()
            .enumerate()
            .map(|(i, p)| (p.clone(), i))
            .collect();
        let merged = merges.iter().map(|(a, b)| format!("{a}{b}"));
        let vocab = Vocabulary::from_tokens(base.into_iter().chain(merged));
        Self {
            merges,
            ranks,
            vocab,
        }
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn merges(&self) -> &[(String, String)] {
        &self.merges
    }

    /// Applies merges to one word in rank order.
    pub fn segment_word(&self, word: &str) -> Vec<String> {
        let mut symbols = initial_symbols(word);
        loop {
            let best = symbols
                .windows(2)
                .filter_map(|w| self.ranks.get(&(w[0].clone(), w[1].clone())))
                .min()
                .copied();
            let Some(rank) = best else { break };
            let (l, r) = &self.merges[rank];
            merge_pair(&mut symbols, l, r);
        }
        symbols
    }

    pub(crate) fn encode_word_into(&self, word: &str, out: &mut Vec<usize>) {
        for s in self.segment_word(word) {
            out.push(match self.vocab.id(&s) {
                Some(id) if id >= NUM_SPECIAL => id,
                _ => UNK,
            });
        }
    }

    pub fn detokenize(&self, ids: &[usize]) -> String {
        let mut text = String::new();
        for &id in ids {
            text.push_str(self.vocab.token(id).unwrap_or("[UNK]"));
        }
        text.split(END_OF_WORD)
            .filter(|w| !w.is_empty())
            .collect::<Vec<_>>()
            .join(" ")
    }

    /// Vocabulary lines first, then one tab-separated merge per line.
    pub fn to_text(&self) -> String {
        let mut s = self.vocab.to_text();
        for (a, b) in &self.merges {
            s.push_str(a);
            s.push('\t');
            s.push_str(b);
            s.push('\n');
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self, TokenizerError> {
        let mut base = BTreeSet::new();
        let mut merges = Vec::new();
        let mut vocab_lines = Vec::new();
        for (i, line) in text.lines().enumerate() {
            match line.split_once('\t') {
                Some((a, b)) => merges.push((a.to_string(), b.to_string())),
                None if merges.is_empty() => vocab_lines.push(line),
                None => {
                    return Err(TokenizerError::Format {
                        line: i + 1,
                        msg: "vocabulary entry after merges".into(),
                    })
                }
            }
        }
        let vocab = Vocabulary::from_text(&vocab_lines.join("\n"))?;
        let n_base = vocab.len() - NUM_SPECIAL - merges.len();
        for t in &vocab.tokens()[NUM_SPECIAL..NUM_SPECIAL + n_base] {
            base.insert(t.clone());
        }
        let model = Self::new(merges, base);
        if model.vocab != vocab {
            return Err(TokenizerError::Format {
                line: 0,
                msg: "vocabulary does not match merges".into(),
            });
        }
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<(), TokenizerError> {
        fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, TokenizerError> {
        Self::from_text(&fs::read_to_string(path)?)
    }
}

/// Greedy most-frequent-pair merging; ties go to the lexicographically
/// smallest pair.
pub fn train_bpe<D, S>(corpus: &[D], num_merges: usize) -> Result<BpeModel, TokenizerError>
where
    D: AsRef<[S]>,
    S: AsRef<str>,
{
    let mut word_counts: BTreeMap<&str, usize> = BTreeMap::new();
    for doc in corpus {
        for w in doc.as_ref() {
            *word_counts.entry(w.as_ref()).or_default() += 1;
        }
    }
    if word_counts.is_empty() {
        return Err(TokenizerError::EmptyCorpus);
    }
    let mut words: Vec<(Vec<String>, usize)> = word_counts
        .into_iter()
        .map(|(w, c)| (initial_symbols(w), c))
        .collect();
    let base: BTreeSet<String> = words.iter().flat_map(|(s, _)| s.iter().cloned()).collect();

    let mut merges = Vec::with_capacity(num_merges);
    for _ in 0..num_merges {
        let mut pairs: HashMap<(&str, &str), usize> = HashMap::new();
        for (syms, c) in &words {
            for w in syms.windows(2) {
                *pairs.entry((w[0].as_str(), w[1].as_str())).or_default() += c;
            }
        }
        let best = pairs
            .into_iter()
            .max_by(|a, b| a.1.cmp(&b.1).then_with(|| b.0.cmp(&a.0)))
            .map(|((l, r), _)| (l.to_string(), r.to_string()));
        let Some((l, r)) = best else { break };
        for (syms, _) in &mut words {
            merge_pair(syms, &l, &r);
        }
        merges.push((l, r));
    }
    Ok(BpeModel::new(merges, base))
}

#[cfg(test)]
mod tests {
    use super::super::{normalize, Tokenizer};
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn most_frequent_pair_is_merged_first() {
        let m = train_bpe(&[normalize("aaab")], 1).unwrap();
        assert_eq!(m.merges(), &[("a".to_string(), "a".to_string())]);
    }

    #[test]
    fn zero_merges_is_character_level() {
        let m = train_bpe(&[normalize("hello")], 0).unwrap();
        assert_eq!(m.segment_word("hello"), vec!["h", "e", "l", "l", "o</w>"]);
    }

    #[test]
    fn training_is_deterministic() {
        let docs = vec![normalize("low lower lowest newer wider"), normalize("new low")];
        let a = train_bpe(&docs, 12).unwrap();
        let b = train_bpe(&docs, 12).unwrap();
        assert_eq!(a.to_text(), b.to_text());
        assert_eq!(BpeModel::from_text(&a.to_text()).unwrap(), a);
    }

    proptest! {
        #[test]
        fn detokenize_inverts_tokenize(words in prop::collection::vec("[a-e]{1,6}", 1..12), merges in 0usize..20) {
            let docs = vec![words.clone()];
            let t = Tokenizer::Bpe(train_bpe(&docs, merges).unwrap());
            let ids = t.encode_words(&words);
            prop_assert!(!ids.contains(&UNK));
            prop_assert_eq!(t.detokenize(&ids), words.join(" "));
            prop_assert!(ids.len() >= words.len());
        }
    }
}
