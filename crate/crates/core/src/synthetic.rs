//! Deterministic synthetic benchmark: annotated web pages for mining plus a
//! source and a target form corpus that share entity types but differ in
//! layout and filler vocabulary.
//!
//! Source forms put keys left of values; target forms swap the columns and
//! shift every coordinate. Web pages mix both layouts. Some sites annotate a
//! whole key-value row as the value ("wide" sites), others only the value;
//! the convention is visible in the host name's top-level domain. Wide sites
//! mostly put values first, so on the web the convention correlates with
//! layout, and only the schema separates the two.

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{write_corpus, CorpusGroup, Document, EntitySpan, Token};
use crate::error::{Error, Result};
use crate::miner::Page;

pub const ENTITY_TYPES: [&str; 4] = ["header", "question", "answer", "total"];
pub const SOURCE_SCHEMA: &str = "forms-source";
pub const TARGET_SCHEMA: &str = "forms-target";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayoutStyle {
    /// Key column on the left, value column on the right.
    KeyLeft,
    /// Value column on the left, key column on the right, shifted origin.
    ValueLeft,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub n_source_docs: usize,
    pub n_target_docs: usize,
    pub n_pretrain_pages: usize,
    pub n_domains: usize,
    pub source_layout: LayoutStyle,
    pub target_layout: LayoutStyle,
    /// Fraction of target filler words drawn from a pool the source never
    /// uses. Pages draw from both pools.
    pub vocab_shift: f64,
    /// Fraction of sites that annotate whole rows.
    pub wide_fraction: f64,
    /// Probability that a page of a whole-row site puts values left of keys;
    /// other sites use either order evenly.
    pub wide_value_left: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            n_source_docs: 100,
            n_target_docs: 50,
            n_pretrain_pages: 200,
            n_domains: 25,
            source_layout: LayoutStyle::KeyLeft,
            target_layout: LayoutStyle::ValueLeft,
            vocab_shift: 0.6,
            wide_fraction: 0.6,
            wide_value_left: 0.85,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.source_layout == self.target_layout {
            return Err(Error::Config("source and target layouts must differ".into()));
        }
        if self.n_domains < 20 {
            return Err(Error::Config("at least 20 domains are required".into()));
        }
        if self.n_pretrain_pages < self.n_domains {
            return Err(Error::Config("need at least one page per domain".into()));
        }
        if self.n_source_docs == 0 || self.n_target_docs == 0 {
            return Err(Error::Config(
                "source and target corpora must be non-empty".into(),
            ));
        }
        for (name, v) in [
            ("vocab_shift", self.vocab_shift),
            ("wide_fraction", self.wide_fraction),
            ("wide_value_left", self.wide_value_left),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Config(format!("{name} must lie in [0, 1]")));
            }
        }
        Ok(())
    }
}

const HEADER_WORDS: &[&str] = &[
    "payment",
    "request",
    "quotation",
    "purchase",
    "order",
    "summary",
    "statement",
    "receipt",
    "registration",
    "claim",
    "expense",
    "shipping",
];
const HEADER_WORDS_SHIFTED: &[&str] = &[
    "voucher",
    "requisition",
    "disbursement",
    "ledger",
    "manifest",
    "consignment",
    "reimbursement",
    "transfer",
    "inventory",
    "audit",
];
const KEYS: &[&str] = &[
    "Vendor Name:",
    "Invoice Date:",
    "Account No:",
    "Due Date:",
    "Ship To:",
    "Bill To:",
    "Reference:",
    "Contact:",
    "Phone:",
    "Department:",
    "Approved By:",
    "Terms:",
];
const KEYS_SHIFTED: &[&str] = &[
    "Payee:",
    "Supplier:",
    "Issued On:",
    "Beneficiary:",
    "Cost Center:",
    "Routing No:",
    "Remit To:",
    "Authorized By:",
    "Settlement Date:",
    "Batch No:",
];
const TOTAL_KEYS: &[&str] = &["Total:", "Amount Due:", "Grand Total:", "Balance:"];
const TOTAL_KEYS_SHIFTED: &[&str] = &["Net Payable:", "Sum Due:", "Remittance Total:"];
const FILLER: &[&str] = &[
    "acme",
    "globex",
    "initech",
    "umbrella",
    "stark",
    "wayne",
    "wonka",
    "hooli",
    "vandelay",
    "soylent",
    "cyberdyne",
    "tyrell",
    "massive",
    "dynamic",
    "northwind",
    "contoso",
    "fabrikam",
    "litware",
    "adventure",
    "proseware",
];
const FILLER_SHIFTED: &[&str] = &[
    "zenith", "apex", "orbit", "nimbus", "quartz", "cobalt", "harbor", "summit", "meridian", "beacon",
    "granite", "sterling", "horizon", "pinnacle", "cascade", "ember", "falcon", "juniper", "lumen", "vertex",
];
const FILLER_SUFFIXES: &[&str] = &["ltd", "inc", "corp", "group", "llc", "co"];
const NOISE: &[&str] = &[
    "please",
    "retain",
    "this",
    "copy",
    "for",
    "your",
    "records",
    "thank",
    "you",
    "page",
    "signature",
    "notes",
    "see",
    "attached",
];
const SITE_WORDS: &[&str] = &[
    "alpha", "bravo", "cedar", "delta", "ember", "fjord", "gamma", "hazel", "indigo", "jasper", "kilo",
    "lotus", "maple", "nova", "onyx", "pluto", "quill", "rowan", "sierra", "tango", "umber", "vega",
    "willow", "xenon", "yarrow", "zephyr",
];
const SITE_KINDS: &[&str] = &["billing", "forms", "shop", "portal", "office", "records"];
// Few container names, so that an entity path does not identify its site.
const CONTAINERS: &[&str] = &["form", "details"];
const ROWS: &[&str] = &["row", "field"];
const NAV: &[&str] = &["home", "products", "account", "help", "contact", "login", "cart"];

/// Word pools for one split: base pools mixed with the shifted pools at a
/// per-pool rate.
struct Pools<'a> {
    shift: [f64; 4],
    base: [&'a [&'a str]; 4],
    shifted: [&'a [&'a str]; 4],
}

const POOL_HEADER: usize = 0;
const POOL_KEY: usize = 1;
const POOL_TOTAL: usize = 2;
const POOL_FILLER: usize = 3;

impl<'a> Pools<'a> {
    fn new(shift: [f64; 4]) -> Self {
        Pools {
            shift,
            base: [HEADER_WORDS, KEYS, TOTAL_KEYS, FILLER],
            shifted: [
                HEADER_WORDS_SHIFTED,
                KEYS_SHIFTED,
                TOTAL_KEYS_SHIFTED,
                FILLER_SHIFTED,
            ],
        }
    }

    fn pick(&self, pool: usize, rng: &mut ChaCha8Rng) -> &'a str {
        let from = if rng.gen_bool(self.shift[pool]) {
            self.shifted[pool]
        } else {
            self.base[pool]
        };
        from.choose(rng).copied().unwrap_or("x")
    }

    fn distinct(&self, pool: usize, n: usize, rng: &mut ChaCha8Rng) -> Vec<&'a str> {
        let mut out: Vec<&str> = Vec::with_capacity(n);
        let mut guard = 0;
        while out.len() < n && guard < 200 {
            let w = self.pick(pool, rng);
            if !out.contains(&w) {
                out.push(w);
            }
            guard += 1;
        }
        out
    }
}

/// Logical content shared by forms and pages.
struct FormContent {
    header: Vec<String>,
    rows: Vec<(String, String)>,
    total_key: String,
    amount: String,
    noise: Vec<String>,
}

fn value_text(pools: &Pools<'_>, rng: &mut ChaCha8Rng) -> String {
    match rng.gen_range(0..4) {
        0 => format!(
            "{}-{:02}-{:02}",
            rng.gen_range(2015..2026),
            rng.gen_range(1..13),
            rng.gen_range(1..29)
        ),
        1 => format!(
            "{}{}",
            pools
                .pick(POOL_FILLER, rng)
                .to_uppercase()
                .chars()
                .next()
                .unwrap_or('X'),
            rng.gen_range(1000..99999)
        ),
        2 => format!(
            "{} {}",
            capitalize(pools.pick(POOL_FILLER, rng)),
            FILLER_SUFFIXES.choose(rng).copied().unwrap_or("ltd")
        ),
        _ => capitalize(pools.pick(POOL_FILLER, rng)),
    }
}

fn capitalize(w: &str) -> String {
    let mut c = w.chars();
    match c.next() {
        Some(f) => f.to_uppercase().chain(c).collect(),
        None => String::new(),
    }
}

fn form_content(pools: &Pools<'_>, rng: &mut ChaCha8Rng) -> FormContent {
    let header = pools
        .distinct(POOL_HEADER, rng.gen_range(1..=3), rng)
        .into_iter()
        .map(capitalize)
        .collect();
    let keys = pools.distinct(POOL_KEY, rng.gen_range(3..=5), rng);
    let rows = keys
        .into_iter()
        .map(|k| (k.to_string(), value_text(pools, rng)))
        .collect();
    let amount = format!("${}.{:02}", rng.gen_range(10..10000), rng.gen_range(0..100));
    let noise = if rng.gen_bool(0.5) {
        let n = rng.gen_range(2..=4);
        (0..n)
            .map(|_| NOISE.choose(rng).copied().unwrap_or("notes").to_string())
            .collect()
    } else {
        Vec::new()
    };
    FormContent {
        header,
        rows,
        total_key: pools.pick(POOL_TOTAL, rng).to_string(),
        amount,
        noise,
    }
}

struct FormBuilder {
    tokens: Vec<Token>,
    spans: Vec<EntitySpan>,
    height: f64,
}

impl FormBuilder {
    /// Places `text` word by word starting at `(x, y)`; returns the end x and
    /// the token range.
    fn place(&mut self, text: &str, x: f64, y: f64) -> (f64, usize, usize) {
        let start = self.tokens.len();
        let char_w = self.height * 0.5;
        let mut cursor = x;
        for word in text.split_whitespace() {
            let w = char_w * word.chars().count() as f64;
            self.tokens
                .push(Token::new(word, [cursor, y, cursor + w, y + self.height]));
            cursor += w + char_w;
        }
        (cursor, start, self.tokens.len())
    }

    fn annotate(&mut self, entity: &str, range: (usize, usize)) {
        if range.1 > range.0 {
            self.spans.push(EntitySpan::new(entity, range.0, range.1));
        }
    }
}

fn render_form(
    content: &FormContent,
    layout: LayoutStyle,
    rng: &mut ChaCha8Rng,
) -> (Vec<Token>, Vec<EntitySpan>) {
    let height = rng.gen_range(14.0..18.0f64).round();
    let mut b = FormBuilder {
        tokens: Vec::new(),
        spans: Vec::new(),
        height,
    };
    let (origin_x, origin_y, left_col, right_col) = match layout {
        LayoutStyle::KeyLeft => (
            rng.gen_range(30.0..50.0f64),
            rng.gen_range(20.0..40.0f64),
            0.0,
            220.0,
        ),
        LayoutStyle::ValueLeft => (
            rng.gen_range(110.0..160.0f64),
            rng.gen_range(70.0..110.0f64),
            0.0,
            260.0,
        ),
    };
    let line = height * 2.0;
    let (_, s, e) = b.place(&content.header.join(" "), origin_x.round(), origin_y.round());
    b.annotate("header", (s, e));

    let mut y = origin_y + line * 1.5;
    let rows = content
        .rows
        .iter()
        .map(|(k, v)| (k.as_str(), v.as_str(), "answer"))
        .chain(std::iter::once((
            content.total_key.as_str(),
            content.amount.as_str(),
            "total",
        )));
    for (key, value, value_entity) in rows {
        let (key_x, value_x) = match layout {
            LayoutStyle::KeyLeft => (origin_x + left_col, origin_x + right_col),
            LayoutStyle::ValueLeft => (origin_x + right_col, origin_x + left_col),
        };
        let yr = y.round();
        // Reading order within a line follows x, so place the left column first.
        if key_x < value_x {
            let (_, ks, ke) = b.place(key, key_x.round(), yr);
            let (_, vs, ve) = b.place(value, value_x.round(), yr);
            b.annotate("question", (ks, ke));
            b.annotate(value_entity, (vs, ve));
        } else {
            let (_, vs, ve) = b.place(value, value_x.round(), yr);
            let (_, ks, ke) = b.place(key, key_x.round(), yr);
            b.annotate("question", (ks, ke));
            b.annotate(value_entity, (vs, ve));
        }
        y += line;
    }
    if !content.noise.is_empty() {
        b.place(
            &content.noise.join(" "),
            origin_x.round(),
            (y + line * 0.5).round(),
        );
    }
    b.spans.sort_by_key(|s| s.start);
    (b.tokens, b.spans)
}

fn form_corpus(
    prefix: &str,
    schema: &str,
    n: usize,
    layout: LayoutStyle,
    shift: f64,
    rng: &mut ChaCha8Rng,
) -> CorpusGroup {
    // Only filler words shift; keys and titles are shared with the source.
    let pools = Pools::new([0.0, 0.0, 0.0, shift]);
    let docs = (0..n)
        .map(|i| {
            let content = form_content(&pools, rng);
            let (tokens, spans) = render_form(&content, layout, rng);
            Document {
                doc_id: format!("{prefix}-{i:04}"),
                schema_id: schema.into(),
                tokens,
                spans,
            }
        })
        .collect();
    CorpusGroup::from_documents(schema, docs)
}

#[derive(Debug, Clone)]
struct Site {
    host: String,
    wide: bool,
    container: &'static str,
    row: &'static str,
    table: bool,
}

fn sites(spec: &SyntheticSpec, rng: &mut ChaCha8Rng) -> Vec<Site> {
    let mut names: Vec<(&str, &str)> = SITE_WORDS
        .iter()
        .flat_map(|w| SITE_KINDS.iter().map(move |k| (*w, *k)))
        .collect();
    names.shuffle(rng);
    let n_wide = (spec.wide_fraction * spec.n_domains as f64).round() as usize;
    names
        .into_iter()
        .take(spec.n_domains)
        .enumerate()
        .map(|(i, (word, kind))| {
            let wide = i < n_wide;
            Site {
                host: format!("www.{word}{kind}.{}", if wide { "org" } else { "com" }),
                wide,
                container: CONTAINERS.choose(rng).copied().unwrap_or("form"),
                row: ROWS.choose(rng).copied().unwrap_or("row"),
                table: rng.gen_bool(0.3),
            }
        })
        .collect()
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}

fn render_page(site: &Site, content: &FormContent, value_first: bool, rng: &mut ChaCha8Rng) -> String {
    let mut h = String::new();
    h.push_str("<!DOCTYPE html>\n<html><head><title>");
    h.push_str(&escape(&content.header.join(" ")));
    h.push_str("</title><style>.row{display:flex}</style></head>\n<body>\n");
    if rng.gen_bool(0.7) {
        h.push_str("<ul class=\"nav\">");
        for item in NAV.choose_multiple(rng, 3) {
            h.push_str(&format!("<li>{}</li>", capitalize(item)));
        }
        h.push_str("</ul>\n");
    }
    h.push_str(&format!(
        "<div class=\"{}\">\n<h2 class=\"header\">{}</h2>\n",
        site.container,
        escape(&content.header.join(" "))
    ));
    if site.table {
        h.push_str("<table>\n");
    }
    let rows = content
        .rows
        .iter()
        .map(|(k, v)| (k.as_str(), v.as_str(), "answer"))
        .chain(std::iter::once((
            content.total_key.as_str(),
            content.amount.as_str(),
            "total",
        )));
    for (key, value, entity) in rows {
        let (open, close, cell_open, cell_close) = if site.table {
            ("<tr", "</tr>", "<td", "</td>")
        } else {
            ("<div", "</div>", "<span", "</span>")
        };
        if site.wide {
            let first = if value_first {
                format!("{} <b>{}</b>", escape(value), escape(key))
            } else {
                format!("<b>{}</b> {}", escape(key), escape(value))
            };
            h.push_str(&format!(
                "{open} class=\"{row}\">{cell_open} class=\"{entity}\">{first}{cell_close}{close}\n",
                row = site.row
            ));
        } else {
            let key_cell = format!("{cell_open} class=\"question\">{}{cell_close}", escape(key));
            let value_cell = format!("{cell_open} class=\"{entity}\">{}{cell_close}", escape(value));
            let (a, b) = if value_first {
                (value_cell, key_cell)
            } else {
                (key_cell, value_cell)
            };
            h.push_str(&format!("{open} class=\"{}\">{a} {b}{close}\n", site.row));
        }
    }
    if site.table {
        h.push_str("</table>\n");
    }
    h.push_str("</div>\n");
    if !content.noise.is_empty() {
        h.push_str(&format!("<p>{}</p>\n", escape(&content.noise.join(" "))));
    }
    h.push_str("<script>var x = \"<b>ignored</b>\";</script>\n</body></html>\n");
    h
}

#[derive(Debug, Clone)]
pub struct SyntheticData {
    pub pages: Vec<Page>,
    pub source: CorpusGroup,
    pub target: CorpusGroup,
}

/// Generates the benchmark. Each part uses its own stream derived from the
/// seed, so changing one size leaves the other parts unchanged.
pub fn gen_synthetic(spec: &SyntheticSpec) -> Result<SyntheticData> {
    spec.validate()?;
    let stream = |k: u64| ChaCha8Rng::seed_from_u64(spec.seed.wrapping_mul(0x2545_f491_4f6c_dd1d) ^ k);

    let mut rng = stream(1);
    let sites = sites(spec, &mut rng);
    // Pages draw from both vocabularies and both layouts.
    let pools = Pools::new([0.5; 4]);
    let pages = (0..spec.n_pretrain_pages)
        .map(|i| {
            let site = &sites[i % sites.len()];
            let content = form_content(&pools, &mut rng);
            let value_first = rng.gen_bool(if site.wide { spec.wide_value_left } else { 0.5 });
            Page {
                doc_id: format!("page-{i:04}"),
                url: format!("https://{}/p/{i:04}.html", site.host),
                html: render_page(site, &content, value_first, &mut rng),
            }
        })
        .collect();

    let source = form_corpus(
        "src",
        SOURCE_SCHEMA,
        spec.n_source_docs,
        spec.source_layout,
        0.0,
        &mut stream(2),
    );
    let target = form_corpus(
        "tgt",
        TARGET_SCHEMA,
        spec.n_target_docs,
        spec.target_layout,
        spec.vocab_shift,
        &mut stream(3),
    );
    Ok(SyntheticData {
        pages,
        source,
        target,
    })
}

#[derive(Debug, Clone)]
pub struct SyntheticPaths {
    pub pages_dir: PathBuf,
    pub source: PathBuf,
    pub target: PathBuf,
}

/// Writes pages as `<doc_id>.html` with a leading URL comment, and the two
/// corpora as JSON lines.
pub fn write_synthetic(data: &SyntheticData, dir: impl AsRef<Path>) -> Result<SyntheticPaths> {
    let dir = dir.as_ref();
    let pages_dir = dir.join("pages");
    fs::create_dir_all(&pages_dir).map_err(|e| Error::io(&pages_dir, e))?;
    for page in &data.pages {
        let path = pages_dir.join(format!("{}.html", page.doc_id));
        let body = format!("<!-- url: {} -->\n{}", page.url, page.html);
        fs::write(&path, body).map_err(|e| Error::io(&path, e))?;
    }
    let paths = SyntheticPaths {
        pages_dir,
        source: dir.join("source.jsonl"),
        target: dir.join("target.jsonl"),
    };
    write_corpus(std::slice::from_ref(&data.source), &paths.source)?;
    write_corpus(std::slice::from_ref(&data.target), &paths.target)?;
    Ok(paths)
}
