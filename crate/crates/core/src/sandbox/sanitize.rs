//! Allow-list filtering of script output.

use std::collections::HashSet;
use std::sync::OnceLock;

use ammonia::Builder;

fn builder() -> &'static Builder<'static> {
    static B: OnceLock<Builder<'static>> = OnceLock::new();
    B.get_or_init(|| {
        let mut b = Builder::default();
        b.add_tags(["audio", "video", "source", "figure", "figcaption", "section", "article", "header", "footer", "nav", "time", "mark"])
            .add_generic_attributes(["class", "title"])
            .add_generic_attribute_prefixes(["data-"])
            .add_tag_attributes("img", ["src", "alt", "width", "height", "loading"])
            .add_tag_attributes("audio", ["src", "controls", "preload"])
            .add_tag_attributes("video", ["src", "controls", "preload", "width", "height", "poster"])
            .add_tag_attributes("source", ["src", "type"])
            .add_tag_attributes("a", ["href", "download"])
            .add_tag_attributes("time", ["datetime"])
            .url_schemes(HashSet::from(["http", "https", "mailto"]));
        b
    })
}

/// Strips everything outside the allow-list: scripts, event handlers,
/// `javascript:` URLs, styles, forms and embedded frames.
pub fn clean(html: &str) -> String {
    builder().clean(html).to_string()
}

/// Escapes text for use inside element content or quoted attributes.
pub fn escape_text(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&#39;"),
            c => out.push(c),
        }
    }
    out
}
