use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{CorpusError, Document};

/// Exact descriptive statistics of a document collection.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub documents: usize,
    pub mean_words: f64,
    pub median_words: f64,
    pub min_words: usize,
    pub max_words: usize,
    pub distinct_labels: usize,
    pub labels_per_doc_mean: f64,
    /// Number of labels whose document frequency falls in each
    /// power-of-two bucket, keyed by the bucket's lower bound.
    pub frequency_histogram: BTreeMap<usize, usize>,
}

pub fn stats(docs: &[Document]) -> Result<DatasetStats, CorpusError> {
    if docs.is_empty() {
        return Err(CorpusError::Empty);
    }
    let mut lens: Vec<usize> = docs.iter().map(|d| d.words.len()).collect();
    lens.sort_unstable();
    let n = lens.len();
    let median = if n % 2 == 1 {
        lens[n / 2] as f64
    } else {
        (lens[n / 2 - 1] + lens[n / 2]) as f64 / 2.0
    };
    let mut freq: BTreeMap<usize, usize> = BTreeMap::new();
    let mut label_total = 0usize;
    for d in docs {
        label_total += d.labels.len();
        for &l in &d.labels {
            *freq.entry(l).or_default() += 1;
        }
    }
    let mut histogram = BTreeMap::new();
    for &c in freq.values() {
        let bucket = 1usize << (usize::BITS - 1 - c.leading_zeros());
        *histogram.entry(bucket).or_default() += 1;
    }
    Ok(DatasetStats {
        documents: n,
        mean_words: lens.iter().sum::<usize>() as f64 / n as f64,
        median_words: median,
        min_words: lens[0],
        max_words: lens[n - 1],
        distinct_labels: freq.len(),
        labels_per_doc_mean: label_total as f64 / n as f64,
        frequency_histogram: histogram,
    })
}
