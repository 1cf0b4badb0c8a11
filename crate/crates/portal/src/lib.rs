//! HTTP front end of a node.
//!
//! Every service gets the same two-level model: a landing page built by the
//! service's presenter (or a plain list of summaries) and one detail page per
//! message. Forms declared by `new` and `reply` scripts turn submissions into
//! signed messages. Native applications carried in the cache are offered for
//! download, and `/events` streams cache changes to connected browsers.
//!
//! ```no_run
//! # async fn run() {
//! let cache = oppweb_core::CacheStore::in_memory();
//! let identity = oppweb_core::Identity::generate(&mut rand::rngs::OsRng);
//! let portal = oppweb_portal::Portal::new(cache, identity, Default::default()).unwrap();
//! let listener = tokio::net::TcpListener::bind("127.0.0.1:8080").await.unwrap();
//! axum::serve(listener, portal.router()).await.unwrap();
//! # }
//! ```

mod events;
mod pages;
mod routes;
mod session;

use std::collections::HashSet;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::{SystemTime, UNIX_EPOCH};

use oppweb_core::keys::{verify_message, KeySet, KEYS_SERVICE};
use oppweb_core::message::DEFAULT_TTL;
use oppweb_core::sandbox::{ExecutionBudget, Sandbox, StateStore};
use oppweb_core::{CacheStore, Identity, KeyRecord, Message, MessageId, VerifyOutcome};
use parking_lot::Mutex;
use serde::Serialize;
use tokio::sync::broadcast;

pub use events::{UpdateEvent, UpdateKind};
pub use routes::router;
pub use session::SESSION_COOKIE;

pub type Clock = Arc<dyn Fn() -> u64 + Send + Sync>;

pub fn system_clock() -> Clock {
    Arc::new(|| SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0))
}

#[derive(Clone, Debug)]
pub struct PortalConfig {
    pub node_name: String,
    pub budget: ExecutionBudget,
    /// Lifetime given to messages created through the portal.
    pub ttl: u64,
    /// Events buffered per `/events` subscriber before it is dropped.
    pub event_buffer: usize,
    /// Largest accepted request body.
    pub max_upload: usize,
    /// Optional directory with extra static files, e.g. the UI bundle.
    pub static_dir: Option<PathBuf>,
}

impl Default for PortalConfig {
    fn default() -> Self {
        Self {
            node_name: "oppweb".into(),
            budget: ExecutionBudget::default(),
            ttl: DEFAULT_TTL,
            event_buffer: 256,
            max_upload: 32 << 20,
            static_dir: None,
        }
    }
}

/// Tri-state signature check shown on detail pages.
#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Badge {
    Verified,
    /// No key record for the originator is known here.
    Unverified,
    /// The originator's key is known but the signature is missing or wrong.
    Invalid,
}

impl Badge {
    pub fn as_str(self) -> &'static str {
        match self {
            Badge::Verified => "verified",
            Badge::Unverified => "unverified",
            Badge::Invalid => "invalid",
        }
    }
}

/// Key records found in the cache.
pub fn known_keys(cache: &CacheStore) -> KeySet {
    cache.service_messages(KEYS_SERVICE).iter().filter_map(|m| KeyRecord::from_message(m).ok()).collect()
}

pub fn verify_badge(msg: &Message, keys: &KeySet) -> Badge {
    match verify_message(msg, keys) {
        VerifyOutcome::Verified => Badge::Verified,
        VerifyOutcome::UnknownOriginator => Badge::Unverified,
        VerifyOutcome::BadSignature => Badge::Invalid,
    }
}

#[derive(Debug, thiserror::Error)]
pub enum PortalError {
    #[error("invalid budget: {0}")]
    Budget(String),
    #[error("cannot publish the node key: {0}")]
    Key(String),
}

pub(crate) struct Inner {
    pub cache: CacheStore,
    pub sandbox: Sandbox,
    pub identity: Identity,
    pub config: PortalConfig,
    pub clock: Clock,
    pub states: StateStore,
    pub events: broadcast::Sender<UpdateEvent>,
    /// Ids removed because they expired, answered with 410.
    pub gone: Mutex<HashSet<MessageId>>,
}

/// Shared portal state; cheap to clone.
#[derive(Clone)]
pub struct Portal {
    pub(crate) inner: Arc<Inner>,
}

impl Portal {
    pub fn new(cache: CacheStore, identity: Identity, config: PortalConfig) -> Result<Self, PortalError> {
        Self::with_clock(cache, identity, config, system_clock())
    }

    /// Starts the portal. The node key record is published into the cache
    /// so that content signed here verifies everywhere.
    pub fn with_clock(cache: CacheStore, identity: Identity, config: PortalConfig, clock: Clock) -> Result<Self, PortalError> {
        config.budget.validate().map_err(PortalError::Budget)?;
        let now = clock();
        if known_keys(&cache).get(&identity.fingerprint()).is_none() {
            let record = KeyRecord::to_message(&identity, now, config.ttl.max(DEFAULT_TTL)).map_err(|e| PortalError::Key(e.to_string()))?;
            cache.insert(record, now).map_err(|e| PortalError::Key(e.to_string()))?;
        }
        let (events, _) = broadcast::channel(config.event_buffer.max(1));
        let inner = Arc::new(Inner {
            sandbox: Sandbox::new(config.budget.clone()),
            cache,
            identity,
            config,
            clock,
            states: StateStore::default(),
            events,
            gone: Mutex::new(HashSet::new()),
        });
        events::spawn_bridge(&inner);
        Ok(Self { inner })
    }

    pub fn router(&self) -> axum::Router {
        router(self.clone())
    }

    pub fn cache(&self) -> &CacheStore {
        &self.inner.cache
    }

    pub fn identity(&self) -> &Identity {
        &self.inner.identity
    }

    pub fn now(&self) -> u64 {
        (self.inner.clock)()
    }

    /// Subscribes to cache updates as they are relayed to `/events`.
    pub fn subscribe(&self) -> broadcast::Receiver<UpdateEvent> {
        self.inner.events.subscribe()
    }
}
