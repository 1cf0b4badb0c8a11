//! Eager rendering of per-message views when messages enter the cache.

use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::Duration;

use super::{make_thumbnail, Sandbox};
use crate::cache::{CacheError, CacheEventKind, CacheStore};
use crate::message::{ContentType, MessageId, MetaValue, KEY_ICON};
use crate::view::ViewKind;

/// Renders summary and presentation (script or fallback) for one cached
/// message and stores them, plus a thumbnail for images. Returns false if
/// the message is no longer cached.
pub fn render_message_views(cache: &CacheStore, sandbox: &Sandbox, id: &MessageId, now: u64) -> Result<bool, CacheError> {
    let Ok(msg) = cache.get(id) else {
        return Ok(false);
    };
    if msg.content_type() == ContentType::Image {
        let icon = match msg.meta(KEY_ICON) {
            Some(MetaValue::PayloadRef(name)) => Some(name.as_str()),
            _ => None,
        };
        let thumb = msg.payload().iter().filter(|p| Some(p.name.as_str()) != icon).find_map(|p| make_thumbnail(&p.data));
        if let Some(png) = thumb {
            cache.put_thumbnail(*id, png)?;
        }
    }
    for kind in [ViewKind::Summary, ViewKind::Presentation] {
        let (view, err) = sandbox.view_or_fallback(&msg, kind, now);
        if let Some(err) = err {
            if msg.script(super::view_script(kind)).is_some() {
                tracing::warn!(id = %id, kind = %kind, error = %err, "transformation failed, using fallback");
            }
        }
        if !cache.put_view(*id, view)? {
            return Ok(false);
        }
    }
    Ok(true)
}

/// Background worker that renders views for every inserted message.
pub struct RenderPipeline {
    stop: Arc<AtomicBool>,
    handle: Option<JoinHandle<()>>,
}

impl RenderPipeline {
    /// Subscribes before returning, so every insert after this call is seen.
    /// Messages already in the cache are rendered first.
    pub fn spawn<F>(cache: CacheStore, sandbox: Sandbox, clock: F) -> Self
    where
        F: Fn() -> u64 + Send + 'static,
    {
        let events = cache.subscribe();
        let stop = Arc::new(AtomicBool::new(false));
        let flag = stop.clone();
        let handle = thread::Builder::new()
            .name("render-pipeline".into())
            .spawn(move || {
                for id in cache.ids() {
                    if let Err(e) = render_message_views(&cache, &sandbox, &id, clock()) {
                        tracing::warn!(error = %e, "failed to store views");
                    }
                }
                while !flag.load(Ordering::Relaxed) {
                    match events.recv_timeout(Duration::from_millis(100)) {
                        Ok(Some(ev)) if ev.kind == CacheEventKind::Inserted => {
                            if let Err(e) = render_message_views(&cache, &sandbox, &ev.id, clock()) {
                                tracing::warn!(error = %e, "failed to store views");
                            }
                        }
                        Ok(_) => {}
                        Err(()) => return,
                    }
                }
            })
            .expect("spawn render pipeline");
        Self { stop, handle: Some(handle) }
    }

    pub fn shutdown(mut self) {
        self.stop_and_join();
    }

    fn stop_and_join(&mut self) {
        self.stop.store(true, Ordering::Relaxed);
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }
}

impl Drop for RenderPipeline {
    fn drop(&mut self) {
        self.stop_and_join();
    }
}
