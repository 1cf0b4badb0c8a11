//! Server-rendered pages. Everything that is not produced here is either
//! escaped or passed through the sanitizer before it is embedded.

use std::fmt::Write;

use oppweb_core::sandbox::{escape_text, sanitize_html, FieldError, FieldSpec, FieldType};

pub struct Page<'a> {
    pub node: &'a str,
    pub title: &'a str,
    /// Extra script bundle, present only when the UI is installed.
    pub ui_script: bool,
}

impl Page<'_> {
    pub fn render(&self, body: &str) -> String {
        let script = if self.ui_script { "<script src=\"/static/app.js\" defer></script>" } else { "" };
        format!(
            "<!doctype html>\n<html><head><meta charset=\"utf-8\">\
             <meta name=\"viewport\" content=\"width=device-width, initial-scale=1\">\
             <title>{title} - {node}</title><link rel=\"stylesheet\" href=\"/static/style.css\">{script}</head>\
             <body><header class=\"top\"><a class=\"home\" href=\"/services\">{node}</a> \
             <a href=\"/apps\">apps</a></header><main id=\"main\">{body}</main></body></html>\n",
            title = escape_text(self.title),
            node = escape_text(self.node),
        )
    }
}

/// A fragment produced by a script or stored in the cache.
pub fn fragment(html: &str) -> String {
    sanitize_html(html)
}

pub struct DirectoryEntry {
    pub name: String,
    pub title: String,
    pub description: Option<String>,
    pub icon_url: Option<String>,
    pub count: usize,
    pub url: String,
}

pub fn directory(entries: &[DirectoryEntry]) -> String {
    if entries.is_empty() {
        return "<h1>Services</h1><p class=\"empty\">Nothing has arrived here yet.</p>".into();
    }
    let mut out = String::from("<h1>Services</h1><ul class=\"services\">");
    for e in entries {
        out.push_str("<li class=\"service\">");
        if let Some(icon) = &e.icon_url {
            let _ = write!(out, "<img class=\"icon\" src=\"{}\" alt=\"\">", escape_text(icon));
        }
        let _ = write!(
            out,
            "<a href=\"{}\">{}</a> <span class=\"count\">{}</span>",
            escape_text(&e.url),
            escape_text(&e.title),
            e.count
        );
        if let Some(d) = &e.description {
            let _ = write!(out, "<p class=\"description\">{}</p>", escape_text(d));
        }
        out.push_str("</li>");
    }
    out.push_str("</ul>");
    out
}

/// The form for a `new` or `reply` script. `values` refills text fields
/// after a failed submission.
pub fn form(action: &str, heading: &str, fields: &[FieldSpec], errors: &[FieldError], values: &dyn Fn(&str) -> Option<String>) -> String {
    let mut out = format!("<h1>{}</h1>", escape_text(heading));
    let general: Vec<&FieldError> = errors.iter().filter(|e| !fields.iter().any(|f| f.name == e.field)).collect();
    if !general.is_empty() {
        out.push_str("<ul class=\"errors\">");
        for e in general {
            let _ = write!(out, "<li>{}</li>", escape_text(&e.message));
        }
        out.push_str("</ul>");
    }
    let _ = write!(out, "<form method=\"post\" action=\"{}\" enctype=\"multipart/form-data\">", escape_text(action));
    for f in fields {
        let name = escape_text(&f.name);
        let value = values(&f.name).unwrap_or_else(|| f.value.clone());
        let value = escape_text(&value);
        let required = if f.required { " required" } else { "" };
        if f.field_type == FieldType::Hidden {
            let _ = write!(out, "<input type=\"hidden\" name=\"{name}\" value=\"{value}\">");
            continue;
        }
        let _ = write!(out, "<div class=\"field\" data-field=\"{name}\"><label for=\"f-{name}\">{}</label>", escape_text(&f.label));
        match f.field_type {
            FieldType::Text => {
                let _ = write!(out, "<input type=\"text\" id=\"f-{name}\" name=\"{name}\" value=\"{value}\"{required}>");
            }
            FieldType::Textarea => {
                let _ = write!(out, "<textarea id=\"f-{name}\" name=\"{name}\"{required}>{value}</textarea>");
            }
            FieldType::File => {
                let _ = write!(out, "<input type=\"file\" id=\"f-{name}\" name=\"{name}\"{required}>");
            }
            FieldType::Hidden => unreachable!(),
        }
        for e in errors.iter().filter(|e| e.field == f.name) {
            let _ = write!(out, "<p class=\"error\">{}</p>", escape_text(&e.message));
        }
        out.push_str("</div>");
    }
    out.push_str("<button type=\"submit\">Send</button></form>");
    out
}

pub fn error(status: u16, text: &str) -> String {
    format!("<h1>{status}</h1><p class=\"error\">{}</p><p><a href=\"/services\">Back to services</a></p>", escape_text(text))
}

pub const STYLE: &str = include_str!("../assets/style.css");

pub fn escape(s: &str) -> String {
    escape_text(s)
}
