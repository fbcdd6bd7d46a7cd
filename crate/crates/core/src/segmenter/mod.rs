//! Splitting long documents into fixed-length segments, encoding each one
//! independently and concatenating the token states back into a
//! document-level matrix.

use std::ops::Range;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::encoder::{Encoder, EncoderError};
use crate::rng::Rng64;
use crate::tensor::{Matrix, ParamStore, Real, Tape, TensorError, Var};
use crate::tokenizer::{CLS, PAD, SEP};

#[derive(Debug, Error)]
pub enum SegmentError {
    #[error("document is empty")]
    EmptyDocument,
    #[error("invalid segmenter config: {0}")]
    Config(String),
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TruncateMode {
    Front,
    Back,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Truncation {
    pub mode: TruncateMode,
    pub limit: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SegmenterConfig {
    /// Real tokens per segment (`c`).
    pub segment_len: usize,
    pub max_doc_len: usize,
    /// Keep CLS/SEP columns in the document matrix.
    pub include_specials: bool,
    /// Optional word-level cut applied before segmentation.
    pub truncation: Option<Truncation>,
}

impl Default for SegmenterConfig {
    fn default() -> Self {
        Self {
            segment_len: 128,
            max_doc_len: 3072,
            include_specials: false,
            truncation: None,
        }
    }
}

impl SegmenterConfig {
    pub fn validate(&self, max_positions: usize) -> Result<(), SegmentError> {
        if self.segment_len == 0 || self.segment_len + 2 > max_positions {
            return Err(SegmentError::Config(format!(
                "segment_len {} must be in 1..={} (encoder max_positions {} minus CLS/SEP)",
                self.segment_len,
                max_positions.saturating_sub(2),
                max_positions
            )));
        }
        if self.max_doc_len < self.segment_len {
            return Err(SegmentError::Config(format!(
                "max_doc_len {} is shorter than one segment ({})",
                self.max_doc_len, self.segment_len
            )));
        }
        if self.truncation.is_some_and(|t| t.limit == 0) {
            return Err(SegmentError::Config("truncation limit must be at least 1".into()));
        }
        Ok(())
    }

    /// Applies the optional truncation, then splits.
    pub fn segments(&self, tokens: &[usize]) -> Result<Vec<Segment>, SegmentError> {
        match self.truncation {
            Some(t) => split(truncate_mode(tokens, t.mode, t.limit), self.segment_len, self.max_doc_len),
            None => split(tokens, self.segment_len, self.max_doc_len),
        }
    }
}

/// One encoder input: `[CLS] real… [SEP] [PAD]…`.
#[derive(Clone, Debug, PartialEq)]
pub struct Segment {
    pub index: usize,
    pub ids: Vec<usize>,
    /// `false` at PAD positions.
    pub mask: Vec<bool>,
    /// Document position of each real token, in order.
    pub positions: Vec<usize>,
}

impl Segment {
    pub fn real_len(&self) -> usize {
        self.positions.len()
    }

    pub fn real_tokens(&self) -> &[usize] {
        &self.ids[1..1 + self.real_len()]
    }
}

/// Keeps the first (`Front`) or last (`Back`) `limit` tokens.
pub fn truncate_mode<T>(doc: &[T], mode: TruncateMode, limit: usize) -> &[T] {
    if limit >= doc.len() {
        return doc;
    }
    match mode {
        TruncateMode::Front => &doc[..limit],
        TruncateMode::Back => &doc[doc.len() - limit..],
    }
}

/// Rounds `max_doc_len` down to a multiple of `c`, warning when it changes.
pub fn effective_max_len(c: usize, max_doc_len: usize) -> usize {
    let rounded = max_doc_len / c * c;
    if rounded != max_doc_len {
        log::warn!("max_doc_len {max_doc_len} is not a multiple of {c}; using {rounded}");
    }
    rounded
}

/// Keeps the first `max_doc_len` tokens and cuts them into consecutive
/// segments of `c` real tokens; only the last one is PAD-filled.
pub fn split(tokens: &[usize], c: usize, max_doc_len: usize) -> Result<Vec<Segment>, SegmentError> {
    if tokens.is_empty() {
        return Err(SegmentError::EmptyDocument);
    }
    if c == 0 {
        return Err(SegmentError::Config("segment length must be positive".into()));
    }
    let limit = effective_max_len(c, max_doc_len);
    if limit == 0 {
        return Err(SegmentError::Config(format!(
            "max_doc_len {max_doc_len} is shorter than one segment ({c})"
        )));
    }
    let kept = &tokens[..tokens.len().min(limit)];
    Ok(kept
        .chunks(c)
        .enumerate()
        .map(|(index, chunk)| {
            let mut ids = Vec::with_capacity(c + 2);
            ids.push(CLS);
            ids.extend_from_slice(chunk);
            ids.push(SEP);
            let mut mask = vec![true; ids.len()];
            ids.resize(c + 2, PAD);
            mask.resize(c + 2, false);
            Segment {
                index,
                ids,
                mask,
                positions: (index * c..index * c + chunk.len()).collect(),
            }
        })
        .collect())
}

/// Document hidden states as tape nodes.
#[derive(Clone, Debug)]
pub struct DocNodes {
    /// `n×d`, one row per kept column (token-major).
    pub h: Var,
    /// One `1×d` CLS row per segment.
    pub cls: Vec<Var>,
    /// Row range of each segment inside `h`.
    pub spans: Vec<Range<usize>>,
}

/// Encodes every segment on `tape` and concatenates the kept rows in
/// document order.
pub fn encode_segments_on_tape<T: Real>(
    tape: &mut Tape<'_, T>,
    encoder: &Encoder,
    segments: &[Segment],
    include_specials: bool,
    mut dropout: Option<&mut Rng64>,
) -> Result<DocNodes, SegmentError> {
    let mut parts = Vec::with_capacity(segments.len());
    let mut cls = Vec::with_capacity(segments.len());
    let mut spans = Vec::with_capacity(segments.len());
    let mut offset = 0;
    for seg in segments {
        let rows = encoder.forward_rows(tape, &seg.ids, &seg.mask, dropout.as_deref_mut())?;
        cls.push(tape.slice_rows(rows, 0, 1)?);
        let (start, len) = if include_specials {
            (0, seg.real_len() + 2)
        } else {
            (1, seg.real_len())
        };
        parts.push(tape.slice_rows(rows, start, len)?);
        spans.push(offset..offset + len);
        offset += len;
    }
    let h = if parts.len() == 1 {
        parts[0]
    } else {
        tape.concat_rows(&parts)?
    };
    Ok(DocNodes { h, cls, spans })
}

/// Concatenated hidden states of one document.
#[derive(Clone, Debug, PartialEq)]
pub struct HiddenStates<T = f32> {
    /// `d×n`.
    pub h: Matrix<T>,
    /// Document token position of each column; `None` for CLS/SEP columns.
    pub positions: Vec<Option<usize>>,
    /// Per-segment CLS vectors.
    pub cls: Vec<Vec<T>>,
    /// Column range of each segment inside `h`.
    pub spans: Vec<Range<usize>>,
}

impl<T: Real> HiddenStates<T> {
    pub fn n(&self) -> usize {
        self.h.cols()
    }

    /// Places the states on a tape as constants.
    pub fn to_nodes(&self, tape: &mut Tape<'_, T>) -> Result<DocNodes, SegmentError> {
        let h = tape.constant(self.h.transpose());
        let cls = self
            .cls
            .iter()
            .map(|v| Matrix::from_vec(1, v.len(), v.clone()).map(|m| tape.constant(m)))
            .collect::<Result<_, _>>()?;
        Ok(DocNodes {
            h,
            cls,
            spans: self.spans.clone(),
        })
    }
}

/// Column provenance for a segment list.
pub fn column_positions(segments: &[Segment], include_specials: bool) -> Vec<Option<usize>> {
    let mut out = Vec::new();
    for seg in segments {
        if include_specials {
            out.push(None);
        }
        out.extend(seg.positions.iter().map(|&p| Some(p)));
        if include_specials {
            out.push(None);
        }
    }
    out
}

/// Segments, encodes (no dropout) and concatenates one document.
pub fn encode_document<T: Real>(
    store: &ParamStore<T>,
    encoder: &Encoder,
    tokens: &[usize],
    config: &SegmenterConfig,
) -> Result<HiddenStates<T>, SegmentError> {
    config.validate(encoder.config().max_positions)?;
    let segments = config.segments(tokens)?;
    let mut tape = Tape::new(store);
    let nodes = encode_segments_on_tape(&mut tape, encoder, &segments, config.include_specials, None)?;
    Ok(HiddenStates {
        h: tape.value(nodes.h).transpose(),
        positions: column_positions(&segments, config.include_specials),
        cls: nodes.cls.iter().map(|&v| tape.value(v).as_slice().to_vec()).collect(),
        spans: nodes.spans,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_lengths() {
        let toks: Vec<usize> = (10..310).collect();
        let segs = split(&toks, 128, 3072).unwrap();
        let lens: Vec<_> = segs.iter().map(Segment::real_len).collect();
        assert_eq!(lens, [128, 128, 44]);
        assert!(segs.iter().all(|s| s.ids.len() == 130));
    }

    #[test]
    fn long_documents_are_cut_to_whole_segments() {
        let toks = vec![7; 5000];
        let segs = split(&toks, 128, 3072).unwrap();
        assert_eq!(segs.len(), 24);
        assert!(segs.iter().all(|s| s.real_len() == 128));
    }

    #[test]
    fn short_document_is_padded() {
        let toks = vec![9; 100];
        let segs = split(&toks, 128, 3072).unwrap();
        assert_eq!(segs.len(), 1);
        let s = &segs[0];
        assert_eq!(s.ids[0], CLS);
        assert_eq!(s.ids[101], SEP);
        assert_eq!(s.ids.iter().filter(|&&i| i == PAD).count(), 28);
        assert_eq!(s.mask.iter().filter(|&&m| !m).count(), 28);
    }

    #[test]
    fn max_len_rounds_down() {
        let toks = vec![9; 1000];
        let segs = split(&toks, 128, 300).unwrap();
        assert_eq!(segs.iter().map(Segment::real_len).sum::<usize>(), 256);
        assert!(split(&toks, 128, 100).is_err());
    }

    #[test]
    fn empty_document_errors() {
        assert!(matches!(split(&[], 8, 64), Err(SegmentError::EmptyDocument)));
    }

    #[test]
    fn truncation_modes() {
        let d: Vec<u32> = (1..=10).collect();
        assert_eq!(truncate_mode(&d, TruncateMode::Front, 3), &[1, 2, 3]);
        assert_eq!(truncate_mode(&d, TruncateMode::Back, 3), &[8, 9, 10]);
        assert_eq!(truncate_mode(&d, TruncateMode::Back, 10), &d[..]);
        assert_eq!(truncate_mode(&d, TruncateMode::Front, 99), &d[..]);
    }

    #[test]
    fn config_rejects_segments_longer_than_positions() {
        let c = SegmenterConfig { segment_len: 128, ..Default::default() };
        assert!(c.validate(130).is_ok());
        assert!(c.validate(129).is_err());
    }
}
