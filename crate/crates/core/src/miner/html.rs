//! A small tolerant HTML parser producing the element tree the miner needs.
//!
//! Unclosed elements are closed when an ancestor closes or the input ends,
//! stray end tags are ignored, and comments, `script`, `style` and `head`
//! content never reach the tree.

pub const TEXT_TAG: &str = "#text";
pub const ROOT_TAG: &str = "#root";

const VOID_ELEMENTS: &[&str] = &[
    "area", "base", "br", "col", "embed", "hr", "img", "input", "link", "meta", "param", "source", "track",
    "wbr",
];
const RAW_TEXT_ELEMENTS: &[&str] = &["script", "style"];
const DROPPED_ELEMENTS: &[&str] = &["script", "style", "head", "noscript", "template"];

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct DomNode {
    /// Lowercase tag name, or [`TEXT_TAG`] / [`ROOT_TAG`].
    pub tag: String,
    pub class: String,
    pub id: String,
    pub children: Vec<DomNode>,
    /// Text run; only set on text nodes.
    pub text: String,
}

impl DomNode {
    pub fn element(tag: impl Into<String>) -> Self {
        DomNode {
            tag: tag.into(),
            ..Default::default()
        }
    }

    pub fn text_node(text: impl Into<String>) -> Self {
        DomNode {
            tag: TEXT_TAG.into(),
            text: text.into(),
            ..Default::default()
        }
    }

    pub fn is_text(&self) -> bool {
        self.tag == TEXT_TAG
    }

    /// The attribute value naming this element in entity paths: the id when
    /// present, otherwise the first class name.
    pub fn label(&self) -> Option<&str> {
        let id = self.id.trim();
        if !id.is_empty() {
            return Some(id);
        }
        self.class.split_whitespace().next()
    }

    /// Concatenated descendant text, whitespace-normalized.
    pub fn text_content(&self) -> String {
        let mut words = Vec::new();
        self.collect_words(&mut words);
        words.join(" ")
    }

    fn collect_words<'a>(&'a self, out: &mut Vec<&'a str>) {
        if self.is_text() {
            out.extend(self.text.split_whitespace());
        }
        for child in &self.children {
            child.collect_words(out);
        }
    }
}

struct Parser<'a> {
    src: &'a str,
    pos: usize,
    stack: Vec<DomNode>,
}

pub fn parse_html(source: &str) -> DomNode {
    let mut parser = Parser {
        src: source,
        pos: 0,
        stack: vec![DomNode::element(ROOT_TAG)],
    };
    parser.run();
    while parser.stack.len() > 1 {
        parser.close_top();
    }
    parser.stack.pop().expect("root stays on the stack")
}

impl<'a> Parser<'a> {
    fn rest(&self) -> &'a str {
        &self.src[self.pos..]
    }

    fn run(&mut self) {
        while self.pos < self.src.len() {
            let rest = self.rest();
            if let Some(comment) = rest.strip_prefix("<!--") {
                self.pos += comment.find("-->").map_or(rest.len(), |i| i + 7);
            } else if rest.starts_with("<!") || rest.starts_with("<?") {
                self.pos += rest.find('>').map_or(rest.len(), |i| i + 1);
            } else if rest.starts_with("</") && starts_with_name(&rest[2..]) {
                self.end_tag();
            } else if rest.starts_with('<') && starts_with_name(&rest[1..]) {
                self.start_tag();
            } else {
                let skip = if rest.starts_with('<') { 1 } else { 0 };
                let len = rest[skip..].find('<').map_or(rest.len(), |i| i + skip);
                let text = decode_entities(&rest[..len]);
                self.pos += len;
                self.push_text(text);
            }
        }
    }

    fn push_text(&mut self, text: String) {
        if text.is_empty() {
            return;
        }
        let top = self.stack.last_mut().expect("root");
        match top.children.last_mut() {
            Some(last) if last.is_text() => last.text.push_str(&text),
            _ => top.children.push(DomNode::text_node(text)),
        }
    }

    fn close_top(&mut self) {
        let node = self.stack.pop().expect("non-root element");
        if !DROPPED_ELEMENTS.contains(&node.tag.as_str()) {
            self.stack.last_mut().expect("root").children.push(node);
        }
    }

    fn end_tag(&mut self) {
        let rest = self.rest();
        let (name, name_len) = read_name(&rest[2..]);
        self.pos += rest.find('>').map_or(rest.len(), |i| i + 1).max(2 + name_len);
        if let Some(depth) = self.stack.iter().rposition(|n| n.tag == name) {
            if depth > 0 {
                while self.stack.len() > depth {
                    self.close_top();
                }
            }
        }
    }

    fn start_tag(&mut self) {
        let rest = self.rest();
        let (name, name_len) = read_name(&rest[1..]);
        let mut node = DomNode::element(name.clone());
        let mut i = 1 + name_len;
        let mut self_closing = false;
        loop {
            let tail = &rest[i..];
            let trimmed = tail.trim_start();
            i += tail.len() - trimmed.len();
            if trimmed.is_empty() {
                break;
            }
            if trimmed.starts_with('>') {
                i += 1;
                break;
            }
            if trimmed.starts_with("/>") {
                i += 2;
                self_closing = true;
                break;
            }
            if trimmed.starts_with('/') {
                i += 1;
                continue;
            }
            let (attr, consumed) = read_attribute(trimmed);
            i += consumed.max(1);
            if let Some((key, value)) = attr {
                match key.as_str() {
                    "class" => node.class = value,
                    "id" => node.id = value,
                    _ => {}
                }
            }
        }
        self.pos += i;

        if name == "body" {
            if let Some(depth) = self.stack.iter().rposition(|n| n.tag == "head") {
                while self.stack.len() > depth {
                    self.close_top();
                }
            }
        }

        if RAW_TEXT_ELEMENTS.contains(&name.as_str()) && !self_closing {
            let closing = format!("</{name}");
            let rest = self.rest();
            let end = find_ascii_case_insensitive(rest, &closing).unwrap_or(rest.len());
            let after = &rest[end..];
            let tag_end = after.find('>').map_or(after.len(), |j| j + 1);
            self.pos += end + tag_end;
            return;
        }
        if self_closing || VOID_ELEMENTS.contains(&name.as_str()) {
            self.stack.last_mut().expect("root").children.push(node);
        } else {
            self.stack.push(node);
        }
    }
}

fn starts_with_name(s: &str) -> bool {
    s.chars().next().is_some_and(|c| c.is_ascii_alphabetic())
}

fn read_name(s: &str) -> (String, usize) {
    let len = s
        .find(|c: char| !(c.is_ascii_alphanumeric() || c == '-' || c == '_' || c == ':'))
        .unwrap_or(s.len());
    (s[..len].to_ascii_lowercase(), len)
}

fn is_open_quote(c: char) -> bool {
    matches!(c, '"' | '\'' | '\u{201c}' | '\u{201d}' | '\u{2018}' | '\u{2019}')
}

fn closes_quote(open: char, c: char) -> bool {
    match open {
        '"' | '\'' => c == open,
        '\u{201c}' | '\u{201d}' => matches!(c, '\u{201c}' | '\u{201d}'),
        _ => matches!(c, '\u{2018}' | '\u{2019}'),
    }
}

/// Reads `name`, `name=value` or `name="value"`; returns the attribute and
/// the number of bytes consumed. Typographic quotes count as quotes.
fn read_attribute(s: &str) -> (Option<(String, String)>, usize) {
    let name_len = s
        .find(|c: char| c.is_whitespace() || c == '=' || c == '>' || c == '/')
        .unwrap_or(s.len());
    let key = s[..name_len].to_ascii_lowercase();
    let mut i = name_len;
    let after = &s[i..];
    let trimmed = after.trim_start();
    if !trimmed.starts_with('=') {
        return (Some((key, String::new())), i);
    }
    i += after.len() - trimmed.len() + 1;
    let after = &s[i..];
    let value_part = after.trim_start();
    i += after.len() - value_part.len();
    let mut chars = value_part.char_indices();
    let value = match chars.next() {
        Some((_, q)) if is_open_quote(q) => {
            let start = q.len_utf8();
            let end = value_part[start..]
                .char_indices()
                .find(|&(_, c)| closes_quote(q, c))
                .map(|(j, c)| (start + j, start + j + c.len_utf8()));
            match end {
                Some((value_end, consumed)) => {
                    i += consumed;
                    value_part[start..value_end].to_string()
                }
                None => {
                    i += value_part.len();
                    value_part[start..].to_string()
                }
            }
        }
        Some(_) => {
            let end = value_part
                .find(|c: char| c.is_whitespace() || c == '>')
                .unwrap_or(value_part.len());
            i += end;
            value_part[..end].to_string()
        }
        None => String::new(),
    };
    (Some((key, decode_entities(&value))), i)
}

fn find_ascii_case_insensitive(haystack: &str, needle: &str) -> Option<usize> {
    let h = haystack.as_bytes();
    let n = needle.as_bytes();
    if n.len() > h.len() {
        return None;
    }
    (0..=h.len() - n.len()).find(|&i| h[i..i + n.len()].eq_ignore_ascii_case(n))
}

fn decode_entities(s: &str) -> String {
    if !s.contains('&') {
        return s.to_string();
    }
    let mut out = String::with_capacity(s.len());
    let mut rest = s;
    while let Some(amp) = rest.find('&') {
        out.push_str(&rest[..amp]);
        rest = &rest[amp..];
        let decoded = rest[1..].find(';').filter(|&j| j <= 10).and_then(|j| {
            let entity = &rest[1..1 + j];
            let c = match entity {
                "amp" => Some('&'),
                "lt" => Some('<'),
                "gt" => Some('>'),
                "quot" => Some('"'),
                "apos" => Some('\''),
                "nbsp" => Some(' '),
                _ if entity.starts_with("#x") || entity.starts_with("#X") => {
                    u32::from_str_radix(&entity[2..], 16)
                        .ok()
                        .and_then(char::from_u32)
                }
                _ if entity.starts_with('#') => entity[1..].parse().ok().and_then(char::from_u32),
                _ => None,
            };
            c.map(|c| (c, j + 2))
        });
        match decoded {
            Some((c, len)) => {
                out.push(c);
                rest = &rest[len..];
            }
            None => {
                out.push('&');
                rest = &rest[1..];
            }
        }
    }
    out.push_str(rest);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn el(tag: &str, children: Vec<DomNode>) -> DomNode {
        DomNode {
            tag: tag.into(),
            children,
            ..Default::default()
        }
    }

    #[test]
    fn nested_elements() {
        let root = parse_html("<div><span>a</span></div>");
        assert_eq!(
            root,
            el(
                ROOT_TAG,
                vec![el("div", vec![el("span", vec![DomNode::text_node("a")])])]
            )
        );
    }

    #[test]
    fn unclosed_tags_close_at_parent_boundary() {
        assert_eq!(
            parse_html("<div><span>a</div>"),
            parse_html("<div><span>a</span></div>")
        );
    }

    #[test]
    fn invisible_content_is_dropped() {
        let root = parse_html(
            "<html><head><title>t</title><style>p{}</style></head>\
             <body><!-- note --><script>var x = '<p>';</script><p>seen</p></body></html>",
        );
        assert_eq!(root.text_content(), "seen");
    }

    #[test]
    fn unterminated_head_does_not_swallow_body() {
        let root = parse_html("<head><title>t<body><p>x</p>");
        assert_eq!(root.text_content(), "x");
    }

    #[test]
    fn typographic_quotes_delimit_attributes() {
        let root =
            parse_html("<div class=\u{201d}product\u{201d}><span id=\u{201c}name\u{201d}>a</span></div>");
        let div = &root.children[0];
        assert_eq!(div.class, "product");
        assert_eq!(div.children[0].id, "name");
    }

    #[test]
    fn attribute_forms() {
        let root = parse_html("<p id=x class='a b' hidden data-k=\"v\">t</p><br/><i>u</i>");
        let p = &root.children[0];
        assert_eq!((p.id.as_str(), p.class.as_str()), ("x", "a b"));
        assert_eq!(p.label(), Some("x"));
        assert_eq!(root.children[1].tag, "br");
        assert_eq!(root.children[2].tag, "i");
    }

    #[test]
    fn entities_and_stray_markup() {
        let root = parse_html("a &amp; b &#36;5 &bogus; 1 < 2</span>");
        assert_eq!(root.text_content(), "a & b $5 &bogus; 1 < 2");
    }

    #[test]
    fn empty_source_gives_empty_root() {
        assert_eq!(parse_html(""), el(ROOT_TAG, vec![]));
    }
}
