use scraper::node::Node;
use scraper::Html;

const SKIPPED: &[&str] = &["script", "style", "noscript", "template", "head", "svg", "iframe"];

const BLOCKS: &[&str] = &[
    "address",
    "article",
    "aside",
    "blockquote",
    "br",
    "dd",
    "div",
    "dl",
    "dt",
    "fieldset",
    "figcaption",
    "figure",
    "footer",
    "form",
    "h1",
    "h2",
    "h3",
    "h4",
    "h5",
    "h6",
    "header",
    "hr",
    "li",
    "main",
    "nav",
    "ol",
    "p",
    "pre",
    "section",
    "table",
    "tbody",
    "td",
    "th",
    "thead",
    "tr",
    "ul",
    "title",
    "body",
    "html",
];

/// Converts markup to readable text: script and style content is dropped,
/// block elements become line breaks, entities are decoded and runs of
/// whitespace inside a line collapse to one space. Input without any markup
/// is returned unchanged.
pub fn html_to_text(html: &str) -> String {
    if !html.contains('<') && !html.contains('&') {
        return html.to_string();
    }
    let doc = Html::parse_document(html);
    let mut raw = String::new();
    walk(doc.tree.root(), &mut raw);
    raw.lines()
        .map(|line| line.split_whitespace().collect::<Vec<_>>().join(" "))
        .filter(|line| !line.is_empty())
        .collect::<Vec<_>>()
        .join("\n")
}

fn walk(node: ego_tree::NodeRef<'_, Node>, out: &mut String) {
    match node.value() {
        Node::Text(text) => {
            // Newlines inside text nodes are layout, not structure.
            for (i, part) in text.split('\n').enumerate() {
                if i > 0 {
                    out.push(' ');
                }
                out.push_str(part);
            }
        }
        Node::Element(el) => {
            let name = el.name();
            if SKIPPED.contains(&name) {
                return;
            }
            let block = BLOCKS.contains(&name);
            if block {
                out.push('\n');
            }
            for child in node.children() {
                walk(child, out);
            }
            if block {
                out.push('\n');
            }
        }
        Node::Document | Node::Fragment => {
            for child in node.children() {
                walk(child, out);
            }
        }
        _ => {}
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn drops_script_and_breaks_blocks() {
        assert_eq!(html_to_text("<p>a</p><script>x</script><p>b</p>"), "a\nb");
    }

    #[test]
    fn decodes_entities() {
        assert_eq!(html_to_text("&amp;"), "&");
        assert_eq!(html_to_text("<p>Tom &amp; Jerry&nbsp;&lt;3</p>"), "Tom & Jerry <3");
    }

    #[test]
    fn plain_text_unchanged() {
        assert_eq!(html_to_text("just some\nplain text"), "just some\nplain text");
    }

    #[test]
    fn inline_elements_stay_on_line() {
        let html = "<html><head><title>T</title><style>p{}</style></head><body><div>One <b>bold</b>\n word</div><ul><li>x</li><li>y</li></ul></body></html>";
        assert_eq!(html_to_text(html), "One bold word\nx\ny");
    }
}
