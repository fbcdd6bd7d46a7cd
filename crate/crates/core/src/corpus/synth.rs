use rand::seq::index::sample;
use rand::Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

use super::{CorpusError, Dataset, Document, LabelSpace};
use crate::rng::{stream, Rng64};

/// Parameters of the synthetic long-tail corpus.
///
/// Label marginals follow a Zipf law over label rank. Each document carries
/// `max(1, Poisson(mean_labels))` labels; for every gold label all of its
/// `keywords_per_label` keywords are placed at uniformly random positions.
/// Every other position is a noise word with probability `noise_rate`, and
/// otherwise a distractor: a keyword of a random label the document does not
/// carry. A single keyword occurrence is therefore weak evidence, while the
/// full keyword set scattered across the document is strong evidence.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    pub num_labels: usize,
    pub zipf_exponent: f64,
    pub train_docs: usize,
    pub dev_docs: usize,
    pub test_docs: usize,
    pub doc_len_mean: usize,
    pub doc_len_min: usize,
    pub doc_len_max: usize,
    pub mean_labels: f64,
    pub keywords_per_label: usize,
    pub noise_rate: f64,
    pub noise_vocab_size: usize,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            num_labels: 200,
            zipf_exponent: 1.2,
            train_docs: 5000,
            dev_docs: 500,
            test_docs: 500,
            doc_len_mean: 1024,
            doc_len_min: 256,
            doc_len_max: 2048,
            mean_labels: 5.0,
            keywords_per_label: 3,
            noise_rate: 0.85,
            noise_vocab_size: 2000,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<(), CorpusError> {
        let positive = [
            ("num_labels", self.num_labels),
            ("train_docs", self.train_docs),
            ("dev_docs", self.dev_docs),
            ("test_docs", self.test_docs),
            ("doc_len_min", self.doc_len_min),
            ("keywords_per_label", self.keywords_per_label),
            ("noise_vocab_size", self.noise_vocab_size),
        ];
        for (field, v) in positive {
            if v == 0 {
                return Err(CorpusError::Config {
                    field,
                    msg: "must be positive".into(),
                });
            }
        }
        if !(self.zipf_exponent > 0.0) {
            return Err(CorpusError::Config {
                field: "zipf_exponent",
                msg: format!("must be > 0, got {}", self.zipf_exponent),
            });
        }
        if !(self.mean_labels > 0.0) || self.mean_labels > self.num_labels as f64 {
            return Err(CorpusError::Config {
                field: "mean_labels",
                msg: format!(
                    "must be in (0, num_labels={}], got {}",
                    self.num_labels, self.mean_labels
                ),
            });
        }
        if !(self.doc_len_min <= self.doc_len_mean && self.doc_len_mean <= self.doc_len_max) {
            return Err(CorpusError::Config {
                field: "doc_len_mean",
                msg: "need doc_len_min <= doc_len_mean <= doc_len_max".into(),
            });
        }
        if !(0.0..=1.0).contains(&self.noise_rate) {
            return Err(CorpusError::Config {
                field: "noise_rate",
                msg: "must lie in [0, 1]".into(),
            });
        }
        Ok(())
    }

    /// Target marginal weight of each label, `rank^-s`, normalized.
    pub fn zipf_weights(&self) -> Vec<f64> {
        let w: Vec<f64> = (1..=self.num_labels)
            .map(|r| (r as f64).powf(-self.zipf_exponent))
            .collect();
        let total: f64 = w.iter().sum();
        w.into_iter().map(|x| x / total).collect()
    }
}

const CONSONANTS: &[u8] = b"bdfgklmnprstvz";
const VOWELS: &[u8] = b"aeiou";

fn syllables(mut i: usize, min: usize) -> String {
    let base = CONSONANTS.len() * VOWELS.len();
    let mut out = String::new();
    let mut n = 0;
    while n < min || i > 0 {
        let s = i % base;
        out.push(CONSONANTS[s / VOWELS.len()] as char);
        out.push(VOWELS[s % VOWELS.len()] as char);
        i /= base;
        n += 1;
    }
    out
}

/// The `i`-th noise word.
pub fn noise_word(i: usize) -> String {
    syllables(i, 2)
}

/// Keyword `j` of label `label`. Keywords never collide with noise words.
pub fn keyword(label: usize, j: usize, per_label: usize) -> String {
    format!("qu{}", syllables(label * per_label + j, 2))
}

pub fn label_code(i: usize) -> String {
    format!("L{i:04}")
}

fn sample_labels(rng: &mut Rng64, weights: &[f64], m: usize) -> Vec<usize> {
    let mut remaining = weights.to_vec();
    let mut chosen = Vec::with_capacity(m);
    for _ in 0..m {
        let total: f64 = remaining.iter().sum();
        let mut u = rng.random::<f64>() * total;
        let mut pick = None;
        for (i, &w) in remaining.iter().enumerate() {
            if w == 0.0 {
                continue;
            }
            pick = Some(i);
            if u < w {
                break;
            }
            u -= w;
        }
        let i = pick.expect("fewer labels than requested");
        remaining[i] = 0.0;
        chosen.push(i);
    }
    chosen.sort_unstable();
    chosen
}

fn generate_doc(
    spec: &SyntheticSpec,
    rng: &mut Rng64,
    weights: &[f64],
    len_dist: &Normal<f64>,
    count_dist: &Poisson<f64>,
    id: String,
) -> Document {
    let k = spec.keywords_per_label;
    let m = (count_dist.sample(rng) as usize).clamp(1, spec.num_labels);
    let labels = sample_labels(rng, weights, m);

    let len = (len_dist.sample(rng).round().max(0.0) as usize)
        .clamp(spec.doc_len_min, spec.doc_len_max)
        .max(m * k);
    let mut words: Vec<Option<String>> = vec![None; len];
    let slots = sample(rng, len, m * k).into_vec();
    for (n, pos) in slots.into_iter().enumerate() {
        let (li, j) = (n / k, n % k);
        words[pos] = Some(keyword(labels[li], j, k));
    }
    let all_gold = labels.len() == spec.num_labels;
    for w in words.iter_mut().filter(|w| w.is_none()) {
        if rng.random::<f64>() < spec.noise_rate {
            *w = Some(noise_word(rng.random_range(0..spec.noise_vocab_size)));
        } else {
            let l = if all_gold {
                labels[rng.random_range(0..labels.len())]
            } else {
                loop {
                    let l = rng.random_range(0..spec.num_labels);
                    if labels.binary_search(&l).is_err() {
                        break l;
                    }
                }
            };
            *w = Some(keyword(l, rng.random_range(0..k), k));
        }
    }
    Document {
        id,
        words: words.into_iter().map(Option::unwrap).collect(),
        labels,
    }
}

/// Generates train/dev/test splits from one seeded stream.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<Dataset, CorpusError> {
    spec.validate()?;
    let mut rng = stream(spec.seed, 0x5EED_C0DE, 0);
    let weights = spec.zipf_weights();
    let spread = ((spec.doc_len_max - spec.doc_len_min) as f64 / 4.0).max(1e-9);
    let len_dist = Normal::new(spec.doc_len_mean as f64, spread).expect("finite spread");
    let count_dist = Poisson::new(spec.mean_labels).expect("positive mean");

    let mut split = |name: &str, n: usize| -> Vec<Document> {
        (0..n)
            .map(|i| {
                generate_doc(
                    spec,
                    &mut rng,
                    &weights,
                    &len_dist,
                    &count_dist,
                    format!("{name}-{i:05}"),
                )
            })
            .collect()
    };
    let train = split("train", spec.train_docs);
    let dev = split("dev", spec.dev_docs);
    let test = split("test", spec.test_docs);

    let mut labels = LabelSpace::from_codes((0..spec.num_labels).map(label_code));
    labels.recount(&train);
    Ok(Dataset {
        train,
        dev,
        test,
        labels,
    })
}
