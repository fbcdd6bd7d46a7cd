//! Documents, label spaces, synthetic long-tail corpora and JSONL I/O.

mod io;
mod stats;
mod synth;

pub use io::{load_jsonl, parse_jsonl, to_jsonl, write_jsonl, LoadMode, LoadSummary};
pub use stats::{stats, DatasetStats};
pub use synth::{generate_synthetic, keyword, label_code, noise_word, SyntheticSpec};

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("invalid synthetic spec: {field}: {msg}")]
    Config { field: &'static str, msg: String },
    #[error("line {line}: malformed JSON: {msg}")]
    Json { line: usize, msg: String },
    #[error("line {line}: missing field \"{field}\"")]
    MissingField { line: usize, field: &'static str },
    #[error("line {line}: field \"{field}\" has the wrong type")]
    FieldType { line: usize, field: &'static str },
    #[error("duplicate document id \"{0}\"")]
    DuplicateId(String),
    #[error("line {line}: unknown label \"{label}\" outside the training split")]
    UnknownLabel { line: usize, label: String },
    #[error("line {line}: document has no words")]
    EmptyDocument { line: usize },
    #[error("empty dataset")]
    Empty,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One document: normalized words plus gold label ids (sorted, unique).
#[derive(Clone, Debug, PartialEq)]
pub struct Document {
    pub id: String,
    pub words: Vec<String>,
    pub labels: Vec<usize>,
}

impl AsRef<[String]> for Document {
    fn as_ref(&self) -> &[String] {
        &self.words
    }
}

/// Ordered label vocabulary with training-split frequencies.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LabelSpace {
    codes: Vec<String>,
    train_frequency: Vec<usize>,
    #[serde(skip)]
    index: HashMap<String, usize>,
}

impl LabelSpace {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_codes<I, S>(codes: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut s = Self::new();
        for c in codes {
            s.insert(c.into());
        }
        s
    }

    /// Returns the id of `code`, appending it when new.
    pub fn insert(&mut self, code: String) -> usize {
        if let Some(&id) = self.index.get(&code) {
            return id;
        }
        let id = self.codes.len();
        self.index.insert(code.clone(), id);
        self.codes.push(code);
        self.train_frequency.push(0);
        id
    }

    pub fn id(&self, code: &str) -> Option<usize> {
        self.index.get(code).copied()
    }

    pub fn code(&self, id: usize) -> &str {
        &self.codes[id]
    }

    pub fn codes(&self) -> &[String] {
        &self.codes
    }

    pub fn len(&self) -> usize {
        self.codes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.codes.is_empty()
    }

    pub fn train_frequency(&self) -> &[usize] {
        &self.train_frequency
    }

    /// Recomputes per-label document frequencies from a training split.
    pub fn recount(&mut self, train: &[Document]) {
        self.train_frequency = vec![0; self.codes.len()];
        for d in train {
            for &l in &d.labels {
                self.train_frequency[l] += 1;
            }
        }
    }

    /// Label ids ordered by descending training frequency, ties by id.
    pub fn by_frequency(&self) -> Vec<usize> {
        let mut ids: Vec<usize> = (0..self.len()).collect();
        ids.sort_by(|&a, &b| {
            self.train_frequency[b]
                .cmp(&self.train_frequency[a])
                .then(a.cmp(&b))
        });
        ids
    }

    /// Restores the lookup index after deserialization.
    pub fn reindex(&mut self) {
        self.index = self
            .codes
            .iter()
            .enumerate()
            .map(|(i, c)| (c.clone(), i))
            .collect();
        self.train_frequency.resize(self.codes.len(), 0);
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("label space serializes")
    }

    pub fn from_json(s: &str) -> serde_json::Result<Self> {
        let mut ls: Self = serde_json::from_str(s)?;
        ls.reindex();
        Ok(ls)
    }
}

/// Binary indicator vector over a label space.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelVector(pub Vec<bool>);

impl LabelVector {
    pub fn from_ids(ids: &[usize], num_labels: usize) -> Self {
        let mut bits = vec![false; num_labels];
        for &i in ids {
            bits[i] = true;
        }
        Self(bits)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn count(&self) -> usize {
        self.0.iter().filter(|&&b| b).count()
    }

    pub fn ids(&self) -> Vec<usize> {
        self.0
            .iter()
            .enumerate()
            .filter_map(|(i, &b)| b.then_some(i))
            .collect()
    }
}

/// Train/dev/test documents sharing one label space.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub train: Vec<Document>,
    pub dev: Vec<Document>,
    pub test: Vec<Document>,
    pub labels: LabelSpace,
}

/// Restricts the dataset to the `k` most frequent training labels.
///
/// Training documents left without labels are dropped; dev and test
/// documents are kept even when their gold set becomes empty.
pub fn filter_top_labels(data: &Dataset, k: usize) -> Dataset {
    assert!(k >= 1, "top-k filtering needs k >= 1");
    let k = if k > data.labels.len() {
        log::warn!(
            "top-{k} exceeds the label space ({}); clamping",
            data.labels.len()
        );
        data.labels.len()
    } else {
        k
    };
    let kept = &data.labels.by_frequency()[..k];
    let mut remap = vec![None; data.labels.len()];
    let mut labels = LabelSpace::new();
    for (new, &old) in kept.iter().enumerate() {
        remap[old] = Some(new);
        labels.insert(data.labels.code(old).to_string());
    }
    let project = |d: &Document| {
        let mut l: Vec<usize> = d.labels.iter().filter_map(|&x| remap[x]).collect();
        l.sort_unstable();
        Document {
            id: d.id.clone(),
            words: d.words.clone(),
            labels: l,
        }
    };
    let train: Vec<Document> = data
        .train
        .iter()
        .map(project)
        .filter(|d| !d.labels.is_empty())
        .collect();
    labels.recount(&train);
    Dataset {
        dev: data.dev.iter().map(project).collect(),
        test: data.test.iter().map(project).collect(),
        train,
        labels,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn doc(id: &str, labels: &[usize]) -> Document {
        Document {
            id: id.into(),
            words: vec!["w".into()],
            labels: labels.to_vec(),
        }
    }

    fn toy() -> Dataset {
        // counts: a=5, b=3, c=1
        let mut train = Vec::new();
        for i in 0..5 {
            let mut l = vec![0];
            if i < 3 {
                l.push(1);
            }
            if i == 0 {
                l.push(2);
            }
            train.push(doc(&format!("t{i}"), &l));
        }
        train.push(doc("t5", &[2]));
        let mut labels = LabelSpace::from_codes(["a", "b", "c"]);
        labels.recount(&train);
        Dataset {
            train,
            dev: vec![doc("d0", &[2])],
            test: vec![doc("x0", &[0, 2])],
            labels,
        }
    }

    #[test]
    fn top_two_keeps_most_frequent() {
        let mut data = toy();
        // make c strictly rarest
        data.train.pop();
        data.labels.recount(&data.train);
        let f = filter_top_labels(&data, 2);
        assert_eq!(f.labels.codes(), &["a", "b"]);
        assert_eq!(f.dev[0].labels, Vec::<usize>::new());
        assert_eq!(f.test[0].labels, vec![0]);
    }

    #[test]
    fn full_k_is_identity_on_label_space() {
        let data = toy();
        let f = filter_top_labels(&data, 3);
        let mut codes = f.labels.codes().to_vec();
        codes.sort();
        assert_eq!(codes, data.labels.codes());
        assert_eq!(f.train.len(), data.train.len());
    }

    #[test]
    fn oversized_k_clamps() {
        let data = toy();
        assert_eq!(filter_top_labels(&data, 99).labels.len(), 3);
    }

    #[test]
    fn filtering_is_idempotent() {
        let data = toy();
        let once = filter_top_labels(&data, 2);
        assert_eq!(filter_top_labels(&once, 2), once);
    }

    #[test]
    fn empty_train_docs_are_dropped() {
        let data = toy();
        let f = filter_top_labels(&data, 1);
        assert!(f.train.iter().all(|d| d.labels == vec![0]));
        assert_eq!(f.train.len(), 5);
    }

    #[test]
    fn label_space_json_round_trip() {
        let data = toy();
        let back = LabelSpace::from_json(&data.labels.to_json()).unwrap();
        assert_eq!(back, data.labels);
        assert_eq!(back.id("b"), Some(1));
    }
}
