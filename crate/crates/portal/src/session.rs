//! The browser session cookie: a random 128-bit token set on first visit.
//! It only scopes presenter state; it carries no authority.

use axum::http::header::{COOKIE, SET_COOKIE};
use axum::http::{HeaderMap, HeaderValue};
use rand::RngCore;

pub const SESSION_COOKIE: &str = "oppweb_session";

pub(crate) struct Session {
    pub token: String,
    pub fresh: bool,
}

fn valid(token: &str) -> bool {
    token.len() == 32 && token.bytes().all(|b| b.is_ascii_hexdigit())
}

impl Session {
    pub fn from_headers(headers: &HeaderMap) -> Self {
        let existing = headers
            .get_all(COOKIE)
            .iter()
            .filter_map(|v| v.to_str().ok())
            .flat_map(|v| v.split(';'))
            .filter_map(|pair| pair.trim().split_once('='))
            .find(|(k, v)| *k == SESSION_COOKIE && valid(v))
            .map(|(_, v)| v.to_owned());
        match existing {
            Some(token) => Self { token, fresh: false },
            None => {
                let mut bytes = [0u8; 16];
                rand::rngs::OsRng.fill_bytes(&mut bytes);
                Self { token: hex::encode(bytes), fresh: true }
            }
        }
    }

    /// Adds the cookie to a response when the session is new.
    pub fn apply(&self, headers: &mut HeaderMap) {
        if self.fresh {
            let cookie = format!("{SESSION_COOKIE}={}; Path=/; Max-Age=31536000; HttpOnly; SameSite=Lax", self.token);
            headers.append(SET_COOKIE, HeaderValue::from_str(&cookie).expect("ascii cookie"));
        }
    }
}
