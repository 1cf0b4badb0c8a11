//! Portal routes that scripts and fallback views link to.

use crate::message::MessageId;

/// Percent-encodes everything except RFC 3986 unreserved characters.
pub fn encode_component(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for b in s.bytes() {
        match b {
            b'A'..=b'Z' | b'a'..=b'z' | b'0'..=b'9' | b'-' | b'.' | b'_' | b'~' => out.push(b as char),
            _ => out.push_str(&format!("%{b:02X}")),
        }
    }
    out
}

pub fn service(name: &str) -> String {
    format!("/services/{}", encode_component(name))
}

pub fn detail(id: &MessageId) -> String {
    format!("/messages/{id}")
}

pub fn reply(id: &MessageId) -> String {
    format!("/messages/{id}/reply")
}

pub fn thumbnail(id: &MessageId) -> String {
    format!("/messages/{id}/thumbnail")
}

pub fn payload(id: &MessageId, name: &str) -> String {
    format!("/messages/{id}/payload/{}", encode_component(name))
}
