//! Rendered HTML views produced by transformations or fallback rendering.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::message::MessageId;

#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Debug, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum ViewKind {
    AppSummary,
    Summary,
    Presentation,
}

impl ViewKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ViewKind::AppSummary => "appSummary",
            ViewKind::Summary => "summary",
            ViewKind::Presentation => "presentation",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "appSummary" => Some(ViewKind::AppSummary),
            "summary" => Some(ViewKind::Summary),
            "presentation" => Some(ViewKind::Presentation),
            _ => None,
        }
    }
}

impl fmt::Display for ViewKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum ViewSource {
    Script,
    Fallback,
}

#[derive(Clone, PartialEq, Eq, Debug, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum ViewSubject {
    Message(MessageId),
    Service(String),
}

#[derive(Clone, Copy, PartialEq, Eq, Debug, Default, Serialize, Deserialize)]
pub struct ExecutionMetrics {
    pub wall_time_us: u64,
    pub output_bytes: usize,
}

/// A sanitized HTML fragment.
#[derive(Clone, PartialEq, Eq, Debug, Serialize, Deserialize)]
pub struct RenderedView {
    pub html: String,
    pub source: ViewSource,
    pub subject: ViewSubject,
    pub kind: ViewKind,
    pub metrics: ExecutionMetrics,
}
