//! Documents, gold spans and schema-grouped corpora, plus the line-delimited
//! JSON corpus format.
//!
//! A corpus file holds one document per line. Consecutive lines sharing a
//! `schema_id` form one [`CorpusGroup`]; a group's entity types are the sorted
//! union of the entity types of its spans.

use std::collections::{BTreeSet, HashSet};
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Fraction of the median box height below which two vertical centers are
/// considered to be on the same line.
pub const LINE_TOLERANCE: f64 = 0.5;

/// A visible word with its layout box `[x0, y0, x1, y1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Token {
    #[serde(rename = "t")]
    pub text: String,
    #[serde(rename = "b")]
    pub bbox: [f64; 4],
}

impl Token {
    pub fn new(text: impl Into<String>, bbox: [f64; 4]) -> Self {
        Token {
            text: text.into(),
            bbox,
        }
    }

    pub fn x0(&self) -> f64 {
        self.bbox[0]
    }

    pub fn y0(&self) -> f64 {
        self.bbox[1]
    }

    pub fn height(&self) -> f64 {
        self.bbox[3] - self.bbox[1]
    }

    pub fn center(&self) -> (f64, f64) {
        (
            (self.bbox[0] + self.bbox[2]) / 2.0,
            (self.bbox[1] + self.bbox[3]) / 2.0,
        )
    }

    fn box_is_valid(&self) -> bool {
        let [x0, y0, x1, y1] = self.bbox;
        self.bbox.iter().all(|v| v.is_finite() && *v >= 0.0) && x0 <= x1 && y0 <= y1
    }
}

/// A typed closed-open token interval `[start, end)`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct EntitySpan {
    #[serde(rename = "e")]
    pub entity_type: String,
    #[serde(rename = "s")]
    pub start: usize,
    #[serde(rename = "n")]
    pub end: usize,
}

impl EntitySpan {
    pub fn new(entity_type: impl Into<String>, start: usize, end: usize) -> Self {
        EntitySpan {
            entity_type: entity_type.into(),
            start,
            end,
        }
    }

    pub fn len(&self) -> usize {
        self.end.saturating_sub(self.start)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn overlaps(&self, other: &EntitySpan) -> bool {
        self.start < other.end && other.start < self.end
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Document {
    pub doc_id: String,
    pub schema_id: String,
    pub tokens: Vec<Token>,
    pub spans: Vec<EntitySpan>,
}

impl Document {
    /// Index intervals of every span of one entity type, sorted by start.
    pub fn intervals_of(&self, entity_type: &str) -> Vec<(usize, usize)> {
        let mut out: Vec<_> = self
            .spans
            .iter()
            .filter(|s| s.entity_type == entity_type)
            .map(|s| (s.start, s.end))
            .collect();
        out.sort_unstable();
        out
    }

    pub fn entity_types(&self) -> BTreeSet<String> {
        self.spans.iter().map(|s| s.entity_type.clone()).collect()
    }
}

/// Documents sharing one schema together with the schema's entity types.
#[derive(Debug, Clone, PartialEq)]
pub struct CorpusGroup {
    pub schema_id: String,
    pub entity_types: BTreeSet<String>,
    pub documents: Vec<Document>,
}

impl CorpusGroup {
    /// Builds a group whose entity types are the union over its documents.
    pub fn from_documents(schema_id: impl Into<String>, documents: Vec<Document>) -> Self {
        let entity_types = documents.iter().flat_map(|d| d.entity_types()).collect();
        CorpusGroup {
            schema_id: schema_id.into(),
            entity_types,
            documents,
        }
    }

    /// Checks the schema and entity-type linkage of every member document.
    pub fn check(&self) -> Result<()> {
        for doc in &self.documents {
            if doc.schema_id != self.schema_id {
                return Err(Error::Invalid(format!(
                    "document {} has schema {:?}, group has {:?}",
                    doc.doc_id, doc.schema_id, self.schema_id
                )));
            }
            if let Some(span) = doc
                .spans
                .iter()
                .find(|s| !self.entity_types.contains(&s.entity_type))
            {
                return Err(Error::Invalid(format!(
                    "document {} uses entity type {:?} missing from group {:?}",
                    doc.doc_id, span.entity_type, self.schema_id
                )));
            }
        }
        Ok(())
    }
}

/// Orders tokens left-right within lines and lines top-bottom.
///
/// Lines are the connected components of the relation "vertical centers
/// differ by less than `LINE_TOLERANCE` times the median box height".
pub fn serialize_reading_order(tokens: Vec<Token>) -> Vec<Token> {
    if tokens.is_empty() {
        return tokens;
    }
    let tolerance = LINE_TOLERANCE * median_height(&tokens);

    let mut by_center: Vec<usize> = (0..tokens.len()).collect();
    by_center.sort_by(|&a, &b| {
        tokens[a]
            .center()
            .1
            .total_cmp(&tokens[b].center().1)
            .then(a.cmp(&b))
    });

    let mut lines: Vec<Vec<usize>> = Vec::new();
    let mut prev_center = f64::NEG_INFINITY;
    for idx in by_center {
        let cy = tokens[idx].center().1;
        match lines.last_mut() {
            Some(line) if cy - prev_center < tolerance => line.push(idx),
            _ => lines.push(vec![idx]),
        }
        prev_center = cy;
    }

    for line in &mut lines {
        line.sort_by(|&a, &b| {
            let (ta, tb) = (&tokens[a], &tokens[b]);
            ta.x0()
                .total_cmp(&tb.x0())
                .then(ta.y0().total_cmp(&tb.y0()))
                .then(a.cmp(&b))
        });
    }
    let line_key = |line: &Vec<usize>| {
        let top = line.iter().map(|&i| tokens[i].y0()).fold(f64::INFINITY, f64::min);
        let first = line.iter().copied().min().unwrap_or(0);
        (top, first)
    };
    lines.sort_by(|a, b| {
        let (ta, fa) = line_key(a);
        let (tb, fb) = line_key(b);
        ta.total_cmp(&tb).then(fa.cmp(&fb))
    });

    let mut slots: Vec<Option<Token>> = tokens.into_iter().map(Some).collect();
    lines
        .into_iter()
        .flatten()
        .map(|i| slots[i].take().expect("each index appears once"))
        .collect()
}

pub(crate) fn median_height(tokens: &[Token]) -> f64 {
    let mut heights: Vec<f64> = tokens.iter().map(Token::height).collect();
    if heights.is_empty() {
        return 0.0;
    }
    heights.sort_by(f64::total_cmp);
    let n = heights.len();
    if n % 2 == 1 {
        heights[n / 2]
    } else {
        (heights[n / 2 - 1] + heights[n / 2]) / 2.0
    }
}

/// One broken document invariant.
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    BadBox { token: usize },
    EmptyText { token: usize },
    SpanOutOfRange { span: EntitySpan, token_count: usize },
    OverlappingSpans { first: EntitySpan, second: EntitySpan },
    UnknownEntityType { span: EntitySpan },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::BadBox { token } => write!(f, "token {token} has an invalid box"),
            Violation::EmptyText { token } => write!(f, "token {token} has empty text"),
            Violation::SpanOutOfRange { span, token_count } => write!(
                f,
                "span {}[{}, {}) out of range for {token_count} tokens",
                span.entity_type, span.start, span.end
            ),
            Violation::OverlappingSpans { first, second } => write!(
                f,
                "spans {}[{}, {}) and {}[{}, {}) overlap",
                first.entity_type, first.start, first.end, second.entity_type, second.start, second.end
            ),
            Violation::UnknownEntityType { span } => {
                write!(f, "entity type {:?} is not in the group", span.entity_type)
            }
        }
    }
}

/// Lists every broken invariant of `doc`. When `entity_types` is given, spans
/// whose type is outside it are reported too.
pub fn validate_document(doc: &Document, entity_types: Option<&BTreeSet<String>>) -> Vec<Violation> {
    let mut report = Vec::new();
    for (i, tok) in doc.tokens.iter().enumerate() {
        if !tok.box_is_valid() {
            report.push(Violation::BadBox { token: i });
        }
        if tok.text.trim().is_empty() {
            report.push(Violation::EmptyText { token: i });
        }
    }
    let n = doc.tokens.len();
    for span in &doc.spans {
        if span.start >= span.end || span.end > n {
            report.push(Violation::SpanOutOfRange {
                span: span.clone(),
                token_count: n,
            });
        }
        if let Some(types) = entity_types {
            if !types.contains(&span.entity_type) {
                report.push(Violation::UnknownEntityType { span: span.clone() });
            }
        }
    }
    for (i, a) in doc.spans.iter().enumerate() {
        for b in &doc.spans[i + 1..] {
            if a.overlaps(b) {
                report.push(Violation::OverlappingSpans {
                    first: a.clone(),
                    second: b.clone(),
                });
            }
        }
    }
    report
}

/// Writes groups in order, one canonical JSON document per line.
pub fn write_corpus(groups: &[CorpusGroup], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    write_corpus_to(groups, &mut out).map_err(|e| Error::io(path, e))?;
    out.flush().map_err(|e| Error::io(path, e))
}

pub fn write_corpus_to(groups: &[CorpusGroup], out: &mut impl Write) -> std::io::Result<()> {
    for group in groups {
        for doc in &group.documents {
            serde_json::to_writer(&mut *out, doc)?;
            out.write_all(b"\n")?;
        }
    }
    Ok(())
}

pub fn read_corpus(path: impl AsRef<Path>) -> Result<Vec<CorpusGroup>> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_corpus_from(BufReader::new(file)).map_err(|e| match e {
        Error::Io { source, .. } => Error::io(path, source),
        other => other,
    })
}

pub fn read_corpus_from(reader: impl BufRead) -> Result<Vec<CorpusGroup>> {
    let mut groups: Vec<CorpusGroup> = Vec::new();
    let mut seen_ids: HashSet<String> = HashSet::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| Error::io("<corpus>", e))?;
        if line.trim().is_empty() {
            continue;
        }
        let doc = parse_record(&line, line_no)?;
        let starts_group = groups.last().is_none_or(|g| g.schema_id != doc.schema_id);
        if starts_group {
            seen_ids.clear();
            groups.push(CorpusGroup {
                schema_id: doc.schema_id.clone(),
                entity_types: BTreeSet::new(),
                documents: Vec::new(),
            });
        }
        if !seen_ids.insert(doc.doc_id.clone()) {
            return Err(Error::Corpus {
                line: line_no,
                message: format!("duplicate doc_id {:?} in schema {:?}", doc.doc_id, doc.schema_id),
            });
        }
        let group = groups.last_mut().expect("group pushed above");
        group.entity_types.extend(doc.entity_types());
        group.documents.push(doc);
    }
    Ok(groups)
}

fn parse_record(line: &str, line_no: usize) -> Result<Document> {
    let value: serde_json::Value = serde_json::from_str(line).map_err(|e| Error::Corpus {
        line: line_no,
        message: format!("malformed JSON: {e}"),
    })?;
    let obj = value.as_object().ok_or_else(|| Error::Corpus {
        line: line_no,
        message: "record is not an object".into(),
    })?;
    for field in ["doc_id", "schema_id", "tokens", "spans"] {
        if !obj.contains_key(field) {
            return Err(Error::Corpus {
                line: line_no,
                message: format!("missing field \"{field}\""),
            });
        }
    }
    serde_json::from_value(value).map_err(|e| Error::Corpus {
        line: line_no,
        message: format!("bad field: {e}"),
    })
}
