//! Rendering for messages without a usable script, driven by `contentType`.

use std::time::Instant;

use super::sanitize::{clean, escape_text};
use super::urls;
use crate::message::{ContentType, Message, KEY_CONTENT_TYPE, KEY_DESCRIPTION};
use crate::view::{ExecutionMetrics, RenderedView, ViewKind, ViewSource, ViewSubject};

/// Characters of a text payload shown by the fallback view.
pub const TEXT_PREVIEW_CHARS: usize = 200;

/// Maps the message's content type to a single element:
///
/// | contentType          | element                          |
/// |----------------------|----------------------------------|
/// | audio, video         | media element on the payload     |
/// | image                | thumbnail                        |
/// | text                 | first 200 characters             |
/// | app, other, unknown  | download link                    |
///
/// `description`, when present, becomes the caption.
pub fn render(msg: &Message, kind: ViewKind) -> RenderedView {
    let started = Instant::now();
    let id = msg.id();
    let first = msg.payload().first();
    let ct = msg.meta_text(KEY_CONTENT_TYPE).map(ContentType::parse).unwrap_or(ContentType::Other);
    let mut html = format!("<figure class=\"fallback fallback-{}\">", ct.as_str());
    match (ct, first) {
        (ContentType::Audio | ContentType::Video, Some(p)) => {
            let tag = if ct == ContentType::Audio { "audio" } else { "video" };
            html.push_str(&format!("<{tag} controls src=\"{}\"></{tag}>", urls::payload(&id, &p.name)));
        }
        (ContentType::Image, Some(p)) if kind == ViewKind::Presentation => {
            html.push_str(&format!("<img src=\"{}\" alt=\"{}\">", urls::payload(&id, &p.name), escape_text(&p.name)));
        }
        (ContentType::Image, Some(p)) => {
            html.push_str(&format!("<img src=\"{}\" alt=\"{}\">", urls::thumbnail(&id), escape_text(&p.name)));
        }
        (ContentType::Text, Some(p)) => {
            let text = String::from_utf8_lossy(&p.data);
            let preview: String = text.chars().take(TEXT_PREVIEW_CHARS).collect();
            html.push_str(&format!("<p class=\"text-preview\">{}</p>", escape_text(&preview)));
        }
        (_, Some(p)) => {
            html.push_str(&format!(
                "<a class=\"download\" href=\"{}\" download=\"{}\">{}</a>",
                urls::payload(&id, &p.name),
                escape_text(&p.name),
                escape_text(&p.name)
            ));
        }
        (_, None) => {
            html.push_str(&format!("<a class=\"download\" href=\"{}\">{}</a>", urls::detail(&id), escape_text(msg.service())));
        }
    }
    if let Some(desc) = msg.meta_text(KEY_DESCRIPTION) {
        html.push_str(&format!("<figcaption>{}</figcaption>", escape_text(desc)));
    }
    html.push_str("</figure>");
    let html = clean(&html);
    let metrics = ExecutionMetrics { wall_time_us: started.elapsed().as_micros() as u64, output_bytes: html.len() };
    RenderedView { html, source: ViewSource::Fallback, subject: ViewSubject::Message(id), kind, metrics }
}
