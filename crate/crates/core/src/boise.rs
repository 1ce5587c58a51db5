//! Five-class span labels for a single query and their constrained decoding.
//!
//! The label alphabet does not depend on how many entity types exist: each
//! query marks the spans of exactly one entity type, so the model output is
//! always [`NUM_LABELS`] wide. Conventional fused tagging needs
//! `4 * |E| + 1` classes instead.

use std::fmt;

use crate::error::{Error, Result};

pub const NUM_LABELS: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[repr(u8)]
pub enum BoiseLabel {
    Begin = 0,
    Outside = 1,
    Inside = 2,
    Single = 3,
    End = 4,
}

use BoiseLabel::*;

impl BoiseLabel {
    pub const ALL: [BoiseLabel; NUM_LABELS] = [Begin, Outside, Inside, Single, End];

    pub fn code(self) -> usize {
        self as usize
    }

    pub fn from_code(code: usize) -> Option<Self> {
        Self::ALL.get(code).copied()
    }

    pub fn can_start(self) -> bool {
        matches!(self, Begin | Outside | Single)
    }

    pub fn can_end(self) -> bool {
        matches!(self, Outside | Single | End)
    }

    pub fn symbol(self) -> char {
        match self {
            Begin => 'B',
            Outside => 'O',
            Inside => 'I',
            Single => 'S',
            End => 'E',
        }
    }
}

impl fmt::Display for BoiseLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.symbol())
    }
}

/// Number of classes a conventional tagger fusing entity identity into the
/// labels would need.
pub fn fused_label_count(num_entity_types: usize) -> usize {
    4 * num_entity_types + 1
}

pub fn legal_transition(from: BoiseLabel, to: BoiseLabel) -> bool {
    match from {
        Begin | Inside => matches!(to, Inside | End),
        Outside | Single | End => to.can_start(),
    }
}

/// A label per document token for one query.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct LabelSeq(pub Vec<BoiseLabel>);

impl LabelSeq {
    pub fn outside(len: usize) -> Self {
        LabelSeq(vec![Outside; len])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn labels(&self) -> &[BoiseLabel] {
        &self.0
    }

    /// Checks start, end and adjacent-pair legality.
    pub fn check(&self) -> Result<()> {
        let labels = &self.0;
        let Some(&first) = labels.first() else {
            return Ok(());
        };
        if !first.can_start() {
            return Err(Error::IllegalLabels {
                position: 0,
                detail: format!("sequence cannot start with {first}"),
            });
        }
        for (i, pair) in labels.windows(2).enumerate() {
            if !legal_transition(pair[0], pair[1]) {
                return Err(Error::IllegalLabels {
                    position: i + 1,
                    detail: format!("{} -> {}", pair[0], pair[1]),
                });
            }
        }
        let last = labels[labels.len() - 1];
        if !last.can_end() {
            return Err(Error::IllegalLabels {
                position: labels.len() - 1,
                detail: format!("sequence cannot end with {last}"),
            });
        }
        Ok(())
    }
}

impl fmt::Display for LabelSeq {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, l) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str(" ")?;
            }
            write!(f, "{l}")?;
        }
        Ok(())
    }
}

/// Marks closed-open intervals of one entity type over `seq_len` tokens.
pub fn encode_spans(intervals: &[(usize, usize)], seq_len: usize) -> Result<LabelSeq> {
    let mut labels = vec![Outside; seq_len];
    let mut sorted = intervals.to_vec();
    sorted.sort_unstable();
    let mut prev_end = 0;
    for (k, &(start, end)) in sorted.iter().enumerate() {
        if start >= end || end > seq_len {
            return Err(Error::Span(format!(
                "interval [{start}, {end}) invalid for length {seq_len}"
            )));
        }
        if k > 0 && start < prev_end {
            return Err(Error::Span(format!(
                "interval [{start}, {end}) overlaps the previous interval"
            )));
        }
        prev_end = end;
        if end - start == 1 {
            labels[start] = Single;
        } else {
            labels[start] = Begin;
            labels[start + 1..end - 1].fill(Inside);
            labels[end - 1] = End;
        }
    }
    Ok(LabelSeq(labels))
}

/// Inverse of [`encode_spans`]; intervals come back sorted by start.
pub fn decode_labels(seq: &LabelSeq) -> Result<Vec<(usize, usize)>> {
    seq.check()?;
    let mut out = Vec::new();
    let mut open = None;
    for (i, label) in seq.0.iter().enumerate() {
        match label {
            Single => out.push((i, i + 1)),
            Begin => open = Some(i),
            End => out.push((open.take().expect("checked sequence"), i + 1)),
            Outside | Inside => {}
        }
    }
    Ok(out)
}

/// Sum of emission scores along a label path, accumulated left to right.
pub fn path_score(emissions: &[[f64; NUM_LABELS]], labels: &[BoiseLabel]) -> f64 {
    emissions
        .iter()
        .zip(labels)
        .fold(0.0, |acc, (row, l)| acc + row[l.code()])
}

/// Highest-scoring legal label sequence under hard transition constraints.
///
/// Ties are broken toward the lower label code, first for the final label and
/// then for each predecessor while backtracking.
pub fn viterbi_decode(emissions: &[[f64; NUM_LABELS]]) -> Result<LabelSeq> {
    let n = emissions.len();
    if n == 0 {
        return Err(Error::EmptyEmissions);
    }
    if let Some(t) = emissions.iter().position(|r| r.iter().any(|v| !v.is_finite())) {
        return Err(Error::Invalid(format!(
            "non-finite emission score at position {t}"
        )));
    }

    let mut delta = vec![[f64::NEG_INFINITY; NUM_LABELS]; n];
    let mut back = vec![[0u8; NUM_LABELS]; n];
    for label in BoiseLabel::ALL {
        if label.can_start() {
            delta[0][label.code()] = emissions[0][label.code()];
        }
    }
    for t in 1..n {
        for to in BoiseLabel::ALL {
            let mut best = f64::NEG_INFINITY;
            let mut arg = 0u8;
            for from in BoiseLabel::ALL {
                let prev = delta[t - 1][from.code()];
                if legal_transition(from, to) && prev > best {
                    best = prev;
                    arg = from as u8;
                }
            }
            if best > f64::NEG_INFINITY {
                delta[t][to.code()] = best + emissions[t][to.code()];
                back[t][to.code()] = arg;
            }
        }
    }

    let mut last = Outside;
    let mut best = f64::NEG_INFINITY;
    for label in BoiseLabel::ALL {
        if label.can_end() && delta[n - 1][label.code()] > best {
            best = delta[n - 1][label.code()];
            last = label;
        }
    }
    let mut labels = vec![last; n];
    for t in (1..n).rev() {
        let prev = back[t][labels[t].code()] as usize;
        labels[t - 1] = BoiseLabel::from_code(prev).expect("valid code");
    }
    Ok(LabelSeq(labels))
}
