use std::fmt;

use thiserror::Error;

use super::{Message, KEY_CONTENT_TYPE};

/// Metadata keys with framework-defined meaning.
pub const RESERVED_KEYS: [&str; 10] = [
    "appSummary",
    "summary",
    "presentation",
    "new",
    "reply",
    "contentType",
    "description",
    "service",
    "icon",
    "system",
];

/// The five transformation kinds a message can carry.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Debug)]
pub enum ScriptKind {
    AppSummary,
    Summary,
    Presentation,
    New,
    Reply,
}

impl ScriptKind {
    pub const ALL: [ScriptKind; 5] = [
        ScriptKind::AppSummary,
        ScriptKind::Summary,
        ScriptKind::Presentation,
        ScriptKind::New,
        ScriptKind::Reply,
    ];

    /// Metadata key under which the script is stored.
    pub fn key(self) -> &'static str {
        match self {
            ScriptKind::AppSummary => "appSummary",
            ScriptKind::Summary => "summary",
            ScriptKind::Presentation => "presentation",
            ScriptKind::New => "new",
            ScriptKind::Reply => "reply",
        }
    }

    pub fn from_key(key: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.key() == key)
    }
}

impl fmt::Display for ScriptKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.key())
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("transformation source for {0} is empty")]
pub struct EmptyScript(pub ScriptKind);

#[derive(Clone, PartialEq, Eq, Debug)]
pub struct TransformationScript {
    kind: ScriptKind,
    source: String,
}

impl TransformationScript {
    pub fn new(kind: ScriptKind, source: impl Into<String>) -> Result<Self, EmptyScript> {
        let source = source.into();
        if source.trim().is_empty() {
            return Err(EmptyScript(kind));
        }
        Ok(Self { kind, source })
    }

    pub fn kind(&self) -> ScriptKind {
        self.kind
    }

    pub fn source(&self) -> &str {
        &self.source
    }
}

/// Known values of the `contentType` key.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug)]
pub enum ContentType {
    Audio,
    Video,
    Image,
    Text,
    App,
    Other,
}

impl ContentType {
    /// Unknown values map to `Other`.
    pub fn parse(value: &str) -> Self {
        Self::known(value).unwrap_or(ContentType::Other)
    }

    pub fn known(value: &str) -> Option<Self> {
        Some(match value {
            "audio" => ContentType::Audio,
            "video" => ContentType::Video,
            "image" => ContentType::Image,
            "text" => ContentType::Text,
            "app" => ContentType::App,
            "other" => ContentType::Other,
            _ => return None,
        })
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ContentType::Audio => "audio",
            ContentType::Video => "video",
            ContentType::Image => "image",
            ContentType::Text => "text",
            ContentType::App => "app",
            ContentType::Other => "other",
        }
    }
}

#[derive(Clone, PartialEq, Eq, Debug)]
pub enum MetadataWarning {
    /// A key that collides with a reserved key up to ASCII case, e.g.
    /// `ContentType`, and so is most likely a misspelling.
    UnknownReservedKey(String),
    MissingSummaryScript,
    UnknownContentType(String),
}

impl fmt::Display for MetadataWarning {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MetadataWarning::UnknownReservedKey(k) => {
                write!(f, "unknown reserved key {k:?}")
            }
            MetadataWarning::MissingSummaryScript => {
                f.write_str("no summary script; fallback rendering will apply")
            }
            MetadataWarning::UnknownContentType(v) => {
                write!(f, "unknown contentType {v:?}, treated as other")
            }
        }
    }
}

pub(super) fn validate(msg: &Message) -> Vec<MetadataWarning> {
    let mut warnings = Vec::new();
    for key in msg.metadata().keys() {
        let collides = RESERVED_KEYS
            .iter()
            .any(|r| r.eq_ignore_ascii_case(key) && *r != key.as_str());
        if collides {
            warnings.push(MetadataWarning::UnknownReservedKey(key.clone()));
        }
    }
    if msg.script(ScriptKind::Summary).is_none() {
        warnings.push(MetadataWarning::MissingSummaryScript);
    }
    if let Some(ct) = msg.meta(KEY_CONTENT_TYPE) {
        match ct.as_text() {
            Some(v) if ContentType::known(v).is_some() => {}
            Some(v) => warnings.push(MetadataWarning::UnknownContentType(v.to_owned())),
            None => warnings.push(MetadataWarning::UnknownContentType("<non-text>".into())),
        }
    }
    warnings
}

#[cfg(test)]
mod tests {
    use super::*;

    fn with_scripts() -> crate::message::MessageBuilder {
        let mut b = Message::builder("photos");
        for kind in ScriptKind::ALL {
            b = b.script(kind, format!("emit(\"{kind}\");"));
        }
        b
    }

    #[test]
    fn complete_message_has_no_warnings() {
        let m = with_scripts().meta("contentType", "image").build().unwrap();
        assert!(m.validate_metadata().is_empty());
    }

    #[test]
    fn missing_summary_is_reported() {
        let m = Message::builder("photos").meta("contentType", "image").build().unwrap();
        let w = m.validate_metadata();
        assert_eq!(w, vec![MetadataWarning::MissingSummaryScript]);
        assert_eq!(w[0].to_string(), "no summary script; fallback rendering will apply");
    }

    #[test]
    fn unknown_content_type_is_reported() {
        let m = with_scripts().meta("contentType", "hologram").build().unwrap();
        let w = m.validate_metadata();
        assert_eq!(w, vec![MetadataWarning::UnknownContentType("hologram".into())]);
        assert_eq!(w[0].to_string(), "unknown contentType \"hologram\", treated as other");
        assert_eq!(m.content_type(), ContentType::Other);
    }

    #[test]
    fn case_collisions_with_reserved_keys_are_reported() {
        let m = with_scripts().meta("ContentType", "image").meta("myAppKey", "x").build().unwrap();
        assert_eq!(
            m.validate_metadata(),
            vec![MetadataWarning::UnknownReservedKey("ContentType".into())]
        );
    }

    #[test]
    fn script_kinds_roundtrip_through_keys() {
        for kind in ScriptKind::ALL {
            assert_eq!(ScriptKind::from_key(kind.key()), Some(kind));
        }
        assert_eq!(ScriptKind::from_key("Summary"), None);
        assert!(TransformationScript::new(ScriptKind::New, "").is_err());
    }
}
