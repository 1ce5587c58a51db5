//! Weakly-labeled corpus mining from HTML pages.
//!
//! A page's host name becomes its schema id, class/id attribute paths become
//! entity types, and visible text is laid out on a fixed monospace grid so the
//! mined documents look like positioned form tokens.

mod html;

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rayon::prelude::*;

pub use html::{parse_html, DomNode, ROOT_TAG, TEXT_TAG};

use crate::corpus::{serialize_reading_order, CorpusGroup, Document, EntitySpan, Token};
use crate::error::{Error, Result};

pub const CHAR_WIDTH: f64 = 8.0;
pub const LINE_HEIGHT: f64 = 16.0;
/// Maximum number of segments in a mined entity path.
pub const MAX_PATH_DEPTH: usize = 3;

const BLOCK_ELEMENTS: &[&str] = &[
    "div", "p", "h1", "h2", "h3", "h4", "h5", "h6", "li", "tr", "table", "section", "br",
];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MinedAnnotation {
    pub entity_type: String,
    pub span: EntitySpan,
}

/// One input page. `doc_id` is usually the file stem.
#[derive(Debug, Clone)]
pub struct Page {
    pub doc_id: String,
    pub url: String,
    pub html: String,
}

struct Layout {
    tokens: Vec<Token>,
    line: usize,
    cursor: f64,
}

impl Layout {
    fn break_line(&mut self) {
        if self.cursor > 0.0 {
            self.line += 1;
            self.cursor = 0.0;
        }
    }

    fn place(&mut self, word: &str) {
        let width = CHAR_WIDTH * word.chars().count() as f64;
        let y0 = self.line as f64 * LINE_HEIGHT;
        let x0 = self.cursor;
        self.tokens
            .push(Token::new(word, [x0, y0, x0 + width, y0 + LINE_HEIGHT]));
        self.cursor = x0 + width + CHAR_WIDTH;
    }

    /// Lays out `node`'s subtree and reports the token range of every element
    /// through `visit` in post-order.
    fn walk(&mut self, node: &DomNode, visit: &mut impl FnMut(&DomNode, usize, usize)) {
        if node.is_text() {
            for word in node.text.split_whitespace() {
                self.place(word);
            }
            return;
        }
        let block = BLOCK_ELEMENTS.contains(&node.tag.as_str());
        if block {
            self.break_line();
        }
        let start = self.tokens.len();
        for child in &node.children {
            self.walk(child, visit);
        }
        if block {
            self.break_line();
        }
        visit(node, start, self.tokens.len());
    }
}

fn layout(root: &DomNode, visit: &mut impl FnMut(&DomNode, usize, usize)) -> Vec<Token> {
    let mut layout = Layout {
        tokens: Vec::new(),
        line: 0,
        cursor: 0.0,
    };
    layout.walk(root, visit);
    layout.tokens
}

/// Visible words with synthetic boxes. Block elements start a new line; words
/// are `CHAR_WIDTH` per character apart from a one-character gap.
pub fn layout_visible_tokens(root: &DomNode) -> Vec<Token> {
    layout(root, &mut |_, _, _| {})
}

/// Innermost attributed elements with visible text, named by the class/id
/// path leading to them.
pub fn derive_entity_annotations(root: &DomNode) -> Vec<MinedAnnotation> {
    let mut ranges = Vec::new();
    layout(root, &mut |_, start, end| ranges.push((start, end)));
    let mut ranges = ranges.into_iter();
    let mut out = Vec::new();
    collect_annotations(root, &mut Vec::new(), &mut ranges, &mut out);
    out.sort_by_key(|a| a.span.start);
    out
}

/// Returns whether `node` or a descendant was annotated. `ranges` yields the
/// post-order token ranges produced by the layout pass.
fn collect_annotations<'a>(
    node: &'a DomNode,
    path: &mut Vec<&'a str>,
    ranges: &mut impl Iterator<Item = (usize, usize)>,
    out: &mut Vec<MinedAnnotation>,
) -> bool {
    if node.is_text() {
        return false;
    }
    let label = node.label();
    if let Some(l) = label {
        path.push(l);
    }
    let mut inner = false;
    for child in &node.children {
        inner |= collect_annotations(child, path, ranges, out);
    }
    let (start, end) = ranges.next().expect("one range per element");
    let emitted = match label {
        Some(_) if !inner && end > start => {
            let tail = &path[path.len().saturating_sub(MAX_PATH_DEPTH)..];
            let entity_type = tail.join("/");
            out.push(MinedAnnotation {
                span: EntitySpan::new(entity_type.clone(), start, end),
                entity_type,
            });
            true
        }
        _ => false,
    };
    if label.is_some() {
        path.pop();
    }
    inner || emitted
}

/// The lowercase host of `url`, without port or path.
pub fn derive_schema_id(url: &str) -> Result<String> {
    let parsed = url::Url::parse(url.trim()).map_err(|e| Error::Url {
        url: url.into(),
        reason: e.to_string(),
    })?;
    parsed
        .host_str()
        .filter(|h| !h.is_empty())
        .map(str::to_ascii_lowercase)
        .ok_or_else(|| Error::Url {
            url: url.into(),
            reason: "no host".into(),
        })
}

/// Mines one page into a document; `None` when it carries no annotation.
pub fn mine_page(page: &Page) -> Result<Option<Document>> {
    let schema_id = derive_schema_id(&page.url)?;
    let root = parse_html(&page.html);
    let tokens = layout_visible_tokens(&root);
    let spans: Vec<EntitySpan> = derive_entity_annotations(&root)
        .into_iter()
        .map(|a| a.span)
        .collect();
    if spans.is_empty() {
        return Ok(None);
    }
    debug_assert_eq!(serialize_reading_order(tokens.clone()), tokens);
    Ok(Some(Document {
        doc_id: page.doc_id.clone(),
        schema_id,
        tokens,
        spans,
    }))
}

/// Mines pages into schema groups sorted by schema id, documents by doc id.
/// Pages that fail are logged and skipped.
pub fn mine_corpus(pages: impl IntoIterator<Item = Page>) -> Vec<CorpusGroup> {
    let pages: Vec<Page> = pages.into_iter().collect();
    let mined: Vec<Option<Document>> = pages
        .par_iter()
        .map(|page| match mine_page(page) {
            Ok(doc) => doc,
            Err(e) => {
                log::warn!("skipping page {}: {e}", page.doc_id);
                None
            }
        })
        .collect();

    let mut by_schema: BTreeMap<String, Vec<Document>> = BTreeMap::new();
    for doc in mined.into_iter().flatten() {
        by_schema.entry(doc.schema_id.clone()).or_default().push(doc);
    }
    by_schema
        .into_iter()
        .map(|(schema, mut docs)| {
            docs.sort_by(|a, b| a.doc_id.cmp(&b.doc_id));
            CorpusGroup::from_documents(schema, docs)
        })
        .collect()
}

/// Reads every `*.html` file in `dir`. The URL comes from a sibling `.url`
/// file or from a leading `<!-- url -->` comment.
pub fn read_page_dir(dir: impl AsRef<Path>) -> Result<Vec<Page>> {
    let dir = dir.as_ref();
    let mut pages = Vec::new();
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut paths: Vec<_> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "html" || x == "htm"))
        .collect();
    paths.sort();
    for path in paths {
        let html = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let doc_id = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        let url_file = path.with_extension("url");
        let url = if url_file.exists() {
            fs::read_to_string(&url_file)
                .map_err(|e| Error::io(&url_file, e))?
                .trim()
                .to_string()
        } else {
            match url_from_comment(&html) {
                Some(url) => url,
                None => {
                    log::warn!("skipping {}: no URL", path.display());
                    continue;
                }
            }
        };
        pages.push(Page { doc_id, url, html });
    }
    Ok(pages)
}

fn url_from_comment(html: &str) -> Option<String> {
    let first = html.lines().next()?.trim();
    let inner = first.strip_prefix("<!--")?.strip_suffix("-->")?.trim();
    let inner = inner.strip_prefix("url:").unwrap_or(inner).trim();
    Some(inner.to_string())
}
