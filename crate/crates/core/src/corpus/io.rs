use std::collections::HashSet;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::Serialize;
use serde_json::Value;

use super::{CorpusError, Document, LabelSpace};
use crate::tokenizer::normalize;

/// How unknown label strings are treated while loading.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LoadMode {
    /// Unknown labels extend the label space.
    Train,
    /// Unknown labels are an error, or dropped and counted when permissive.
    Eval { permissive: bool },
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct LoadSummary {
    pub documents: usize,
    pub dropped_labels: usize,
}

#[derive(Serialize)]
struct Line<'a> {
    id: &'a str,
    text: String,
    labels: Vec<&'a str>,
}

pub fn to_jsonl(docs: &[Document], labels: &LabelSpace) -> String {
    let mut out = String::new();
    for d in docs {
        let line = Line {
            id: &d.id,
            text: d.words.join(" "),
            labels: d.labels.iter().map(|&l| labels.code(l)).collect(),
        };
        out.push_str(&serde_json::to_string(&line).expect("document serializes"));
        out.push('\n');
    }
    out
}

pub fn write_jsonl(path: &Path, docs: &[Document], labels: &LabelSpace) -> Result<(), CorpusError> {
    let mut f = fs::File::create(path)?;
    f.write_all(to_jsonl(docs, labels).as_bytes())?;
    Ok(())
}

fn field<'v>(obj: &'v Value, line: usize, name: &'static str) -> Result<&'v Value, CorpusError> {
    obj.get(name)
        .ok_or(CorpusError::MissingField { line, field: name })
}

/// Parses JSONL text of `{"id", "text", "labels"}` objects.
pub fn parse_jsonl(
    text: &str,
    labels: &mut LabelSpace,
    mode: LoadMode,
) -> Result<(Vec<Document>, LoadSummary), CorpusError> {
    let mut docs = Vec::new();
    let mut seen = HashSet::new();
    let mut summary = LoadSummary::default();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let obj: Value = serde_json::from_str(raw).map_err(|e| CorpusError::Json {
            line,
            msg: e.to_string(),
        })?;
        if !obj.is_object() {
            return Err(CorpusError::Json {
                line,
                msg: "expected an object".into(),
            });
        }
        let id = field(&obj, line, "id")?
            .as_str()
            .ok_or(CorpusError::FieldType { line, field: "id" })?;
        let body = field(&obj, line, "text")?
            .as_str()
            .ok_or(CorpusError::FieldType { line, field: "text" })?;
        let codes = field(&obj, line, "labels")?
            .as_array()
            .ok_or(CorpusError::FieldType {
                line,
                field: "labels",
            })?;
        if !seen.insert(id.to_string()) {
            return Err(CorpusError::DuplicateId(id.to_string()));
        }
        let words = normalize(body);
        if words.is_empty() {
            return Err(CorpusError::EmptyDocument { line });
        }
        let mut ids = Vec::with_capacity(codes.len());
        for c in codes {
            let c = c.as_str().ok_or(CorpusError::FieldType {
                line,
                field: "labels",
            })?;
            match (labels.id(c), mode) {
                (Some(l), _) => ids.push(l),
                (None, LoadMode::Train) => ids.push(labels.insert(c.to_string())),
                (None, LoadMode::Eval { permissive: true }) => summary.dropped_labels += 1,
                (None, LoadMode::Eval { permissive: false }) => {
                    return Err(CorpusError::UnknownLabel {
                        line,
                        label: c.to_string(),
                    })
                }
            }
        }
        ids.sort_unstable();
        ids.dedup();
        docs.push(Document {
            id: id.to_string(),
            words,
            labels: ids,
        });
    }
    summary.documents = docs.len();
    if summary.dropped_labels > 0 {
        log::warn!(
            "dropped {} unknown label occurrences",
            summary.dropped_labels
        );
    }
    Ok((docs, summary))
}

pub fn load_jsonl(
    path: &Path,
    labels: &mut LabelSpace,
    mode: LoadMode,
) -> Result<(Vec<Document>, LoadSummary), CorpusError> {
    parse_jsonl(&fs::read_to_string(path)?, labels, mode)
}
