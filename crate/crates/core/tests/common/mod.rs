#![allow(dead_code)]

use std::io::Cursor;
use std::sync::Arc;

use image::{ImageBuffer, ImageFormat, Rgb};
use oppweb_core::sandbox::{FormValue, FormValues, Sandbox};
use oppweb_core::{CacheStore, Identity, Message};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const NOW: u64 = 1_700_000_000;

pub fn identity(seed: u64) -> Identity {
    Identity::generate(&mut ChaCha8Rng::seed_from_u64(seed))
}

pub fn sandbox() -> Sandbox {
    Sandbox::default()
}

/// Deterministic test picture.
pub fn png(w: u32, h: u32, shade: u8) -> Vec<u8> {
    let img = ImageBuffer::from_fn(w, h, |x, y| Rgb([(x % 256) as u8, (y % 256) as u8, shade]));
    let mut out = Cursor::new(Vec::new());
    img.write_to(&mut out, ImageFormat::Png).unwrap();
    out.into_inner()
}

pub fn photo_form(name: &str, data: Vec<u8>, caption: &str) -> FormValues {
    let mut f = FormValues::new();
    f.insert("photo".into(), FormValue::File { filename: name.into(), data });
    f.insert("caption".into(), FormValue::Text(caption.into()));
    f
}

/// A fresh node holding exactly `msgs`.
pub fn node_with(msgs: &[Arc<Message>], now: u64) -> CacheStore {
    let cache = CacheStore::in_memory();
    for m in msgs {
        cache.insert((**m).clone(), now).unwrap();
    }
    cache
}

/// Hostile scripts from tests/escape: (name, kind, source).
pub fn escape_corpus() -> Vec<(String, oppweb_core::ScriptKind, String)> {
    let dir = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/escape");
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        let file = path.file_name().unwrap().to_str().unwrap().to_owned();
        let mut parts = file.split('.');
        let name = parts.next().unwrap().to_owned();
        let kind = oppweb_core::ScriptKind::from_key(parts.next().unwrap()).unwrap();
        out.push((name, kind, std::fs::read_to_string(&path).unwrap()));
    }
    out.sort();
    out
}
