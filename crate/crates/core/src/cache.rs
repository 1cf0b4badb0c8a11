//! Content-addressed message cache: the node's locally consistent state.
//!
//! The cache holds the set of live messages, a per-service index ordered by
//! creation time, and the rendered views derived from each message. All
//! mutations are serialized through one writer lock; change events are
//! dispatched while that lock is held, so every subscriber observes
//! mutations in commit order.
//!
//! With a root directory the cache is write-through persistent:
//!
//! ```text
//! <root>/messages/<id>.owm          canonical message encoding
//! <root>/views/<id>.<kind>.json     rendered views
//! <root>/views/<id>.thumb.png       image thumbnails
//! ```

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use crossbeam_channel::{Receiver, RecvTimeoutError, Sender};
use parking_lot::RwLock;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::message::{Message, MessageId};
use crate::sync::SummaryVector;
use crate::view::{RenderedView, ViewKind};

#[derive(Debug, Error)]
pub enum CacheError {
    #[error("message {0} not found")]
    NotFound(MessageId),
    #[error("message of {size} bytes exceeds cache capacity of {capacity} bytes")]
    ExceedsCapacity { size: u64, capacity: u64 },
    #[error("persistence failure at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> CacheError + '_ {
    move |source| CacheError::Io { path: path.to_owned(), source }
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum InsertOutcome {
    New,
    Duplicate,
    RejectedExpired,
    RejectedInvalid,
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum CacheEventKind {
    Inserted,
    RemovedExpired,
    RemovedExplicit,
}

#[derive(Clone, PartialEq, Eq, Debug)]
pub struct CacheEvent {
    pub kind: CacheEventKind,
    pub id: MessageId,
    pub service: String,
}

/// Receiving end of a cache event subscription.
pub struct Subscription {
    rx: Receiver<CacheEvent>,
}

impl Subscription {
    pub fn try_recv(&self) -> Option<CacheEvent> {
        self.rx.try_recv().ok()
    }

    /// Blocks up to `timeout`. Returns `Err(())` once the cache is dropped.
    #[allow(clippy::result_unit_err)]
    pub fn recv_timeout(&self, timeout: Duration) -> Result<Option<CacheEvent>, ()> {
        match self.rx.recv_timeout(timeout) {
            Ok(ev) => Ok(Some(ev)),
            Err(RecvTimeoutError::Timeout) => Ok(None),
            Err(RecvTimeoutError::Disconnected) => Err(()),
        }
    }

    pub fn drain(&self) -> Vec<CacheEvent> {
        self.rx.try_iter().collect()
    }
}

impl Iterator for Subscription {
    type Item = CacheEvent;

    fn next(&mut self) -> Option<CacheEvent> {
        self.rx.recv().ok()
    }
}

/// Digest of the concatenated, sorted ids of all live messages.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct StateDigest([u8; 32]);

impl StateDigest {
    pub fn of_ids<'a>(ids: impl IntoIterator<Item = &'a MessageId>) -> Self {
        let sorted: BTreeSet<&MessageId> = ids.into_iter().collect();
        let mut hasher = Sha256::new();
        for id in sorted {
            hasher.update(id.as_bytes());
        }
        Self(hasher.finalize().into())
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }
}

impl fmt::Display for StateDigest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

impl fmt::Debug for StateDigest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "StateDigest({})", &self.to_hex()[..12])
    }
}

/// What recovery found on disk.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct RecoveryReport {
    pub loaded: usize,
    pub discarded: Vec<PathBuf>,
}

#[derive(Default)]
struct State {
    messages: BTreeMap<MessageId, Arc<Message>>,
    by_service: BTreeMap<String, BTreeSet<(u64, MessageId)>>,
    views: HashMap<(MessageId, ViewKind), RenderedView>,
    thumbnails: HashMap<MessageId, Arc<Vec<u8>>>,
    total_bytes: u64,
}

impl State {
    fn add(&mut self, msg: Arc<Message>) {
        self.total_bytes += msg.encoded_len() as u64;
        self.by_service
            .entry(msg.service().to_owned())
            .or_default()
            .insert((msg.created_at(), msg.id()));
        self.messages.insert(msg.id(), msg);
    }

    fn take(&mut self, id: &MessageId) -> Option<Arc<Message>> {
        let msg = self.messages.remove(id)?;
        self.total_bytes -= msg.encoded_len() as u64;
        if let Some(index) = self.by_service.get_mut(msg.service()) {
            index.remove(&(msg.created_at(), msg.id()));
            if index.is_empty() {
                self.by_service.remove(msg.service());
            }
        }
        for kind in [ViewKind::Summary, ViewKind::Presentation, ViewKind::AppSummary] {
            self.views.remove(&(*id, kind));
        }
        self.thumbnails.remove(id);
        Some(msg)
    }
}

struct Shared {
    state: RwLock<State>,
    subscribers: parking_lot::Mutex<Vec<Sender<CacheEvent>>>,
    root: Option<PathBuf>,
    capacity: Option<u64>,
}

/// Shareable handle to a message cache. Clones refer to the same cache.
#[derive(Clone)]
pub struct CacheStore {
    shared: Arc<Shared>,
}

impl fmt::Debug for CacheStore {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CacheStore")
            .field("messages", &self.len())
            .field("root", &self.shared.root)
            .finish()
    }
}

impl Default for CacheStore {
    fn default() -> Self {
        Self::in_memory()
    }
}

impl CacheStore {
    pub fn in_memory() -> Self {
        Self::with_options(None, None)
    }

    fn with_options(root: Option<PathBuf>, capacity: Option<u64>) -> Self {
        Self {
            shared: Arc::new(Shared {
                state: RwLock::new(State::default()),
                subscribers: parking_lot::Mutex::new(Vec::new()),
                root,
                capacity,
            }),
        }
    }

    /// Opens (or creates) a persistent cache rooted at `root`, recovering
    /// any messages already stored there.
    pub fn open(root: impl Into<PathBuf>) -> Result<(Self, RecoveryReport), CacheError> {
        Self::open_with_capacity(root, None)
    }

    /// Like [`CacheStore::open`] with an optional byte cap. When inserting
    /// past the cap, messages with the oldest `created_at` are evicted.
    pub fn open_with_capacity(
        root: impl Into<PathBuf>,
        capacity: Option<u64>,
    ) -> Result<(Self, RecoveryReport), CacheError> {
        let root = root.into();
        for dir in [root.join("messages"), root.join("views")] {
            fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        }
        let store = Self::with_options(Some(root), capacity);
        let report = store.recover()?;
        Ok((store, report))
    }

    pub fn in_memory_with_capacity(capacity: u64) -> Self {
        Self::with_options(None, Some(capacity))
    }

    pub fn root(&self) -> Option<&Path> {
        self.shared.root.as_deref()
    }

    fn message_path(&self, id: &MessageId) -> Option<PathBuf> {
        self.shared.root.as_ref().map(|r| r.join("messages").join(format!("{id}.owm")))
    }

    fn view_path(&self, id: &MessageId, kind: ViewKind) -> Option<PathBuf> {
        self.shared.root.as_ref().map(|r| r.join("views").join(format!("{id}.{kind}.json")))
    }

    fn thumb_path(&self, id: &MessageId) -> Option<PathBuf> {
        self.shared.root.as_ref().map(|r| r.join("views").join(format!("{id}.thumb.png")))
    }

    fn emit(&self, event: CacheEvent) {
        self.shared.subscribers.lock().retain(|tx| tx.send(event.clone()).is_ok());
    }

    pub fn subscribe(&self) -> Subscription {
        let (tx, rx) = crossbeam_channel::unbounded();
        self.shared.subscribers.lock().push(tx);
        Subscription { rx }
    }

    /// Inserts a message. Messages are identified purely by content id, so
    /// re-inserting the same content is a no-op.
    pub fn insert(&self, msg: Message, now: u64) -> Result<InsertOutcome, CacheError> {
        let mut state = self.shared.state.write();
        if state.messages.contains_key(&msg.id()) {
            return Ok(InsertOutcome::Duplicate);
        }
        if msg.is_expired(now) {
            return Ok(InsertOutcome::RejectedExpired);
        }
        let size = msg.encoded_len() as u64;
        let mut evict = Vec::new();
        if let Some(capacity) = self.shared.capacity {
            if size > capacity {
                return Err(CacheError::ExceedsCapacity { size, capacity });
            }
            let mut total = state.total_bytes + size;
            let mut oldest = state
                .messages
                .values()
                .map(|m| (m.created_at(), m.id(), m.encoded_len() as u64))
                .collect::<Vec<_>>();
            oldest.sort();
            for (_, id, len) in oldest {
                if total <= capacity {
                    break;
                }
                total -= len;
                evict.push(id);
            }
        }
        let encoded = msg.encode_canonical();
        if let Some(path) = self.message_path(&msg.id()) {
            write_atomic(&path, &encoded)?;
        }
        for id in evict {
            self.remove_locked(&mut state, &id, CacheEventKind::RemovedExplicit)?;
        }
        let event = CacheEvent {
            kind: CacheEventKind::Inserted,
            id: msg.id(),
            service: msg.service().to_owned(),
        };
        state.add(Arc::new(msg));
        self.emit(event);
        Ok(InsertOutcome::New)
    }

    /// Decodes and inserts raw bytes received from an untrusted source.
    /// `expected` is the id the sender claimed; a mismatch is invalid.
    pub fn insert_encoded(
        &self,
        bytes: &[u8],
        expected: Option<MessageId>,
        now: u64,
    ) -> Result<(InsertOutcome, Option<MessageId>), CacheError> {
        let Ok(msg) = Message::decode(bytes) else {
            return Ok((InsertOutcome::RejectedInvalid, None));
        };
        let id = msg.id();
        if expected.is_some_and(|e| e != id) {
            return Ok((InsertOutcome::RejectedInvalid, Some(id)));
        }
        Ok((self.insert(msg, now)?, Some(id)))
    }

    fn remove_locked(
        &self,
        state: &mut State,
        id: &MessageId,
        kind: CacheEventKind,
    ) -> Result<bool, CacheError> {
        if !state.messages.contains_key(id) {
            return Ok(false);
        }
        if let Some(path) = self.message_path(id) {
            remove_if_exists(&path)?;
            for view in [ViewKind::Summary, ViewKind::Presentation, ViewKind::AppSummary] {
                remove_if_exists(&self.view_path(id, view).unwrap())?;
            }
            remove_if_exists(&self.thumb_path(id).unwrap())?;
        }
        let msg = state.take(id).expect("checked above");
        self.emit(CacheEvent { kind, id: *id, service: msg.service().to_owned() });
        Ok(true)
    }

    /// Operator removal of a single message.
    pub fn remove(&self, id: &MessageId) -> Result<bool, CacheError> {
        let mut state = self.shared.state.write();
        self.remove_locked(&mut state, id, CacheEventKind::RemovedExplicit)
    }

    /// Removes every message expired at `now`; returns their ids sorted.
    pub fn expire_sweep(&self, now: u64) -> Result<Vec<MessageId>, CacheError> {
        let mut state = self.shared.state.write();
        let expired: Vec<MessageId> = state
            .messages
            .values()
            .filter(|m| m.is_expired(now))
            .map(|m| m.id())
            .collect();
        for id in &expired {
            self.remove_locked(&mut state, id, CacheEventKind::RemovedExpired)?;
        }
        Ok(expired)
    }

    pub fn get(&self, id: &MessageId) -> Result<Arc<Message>, CacheError> {
        self.shared.state.read().messages.get(id).cloned().ok_or(CacheError::NotFound(*id))
    }

    pub fn contains(&self, id: &MessageId) -> bool {
        self.shared.state.read().messages.contains_key(id)
    }

    pub fn len(&self) -> usize {
        self.shared.state.read().messages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn total_bytes(&self) -> u64 {
        self.shared.state.read().total_bytes
    }

    pub fn ids(&self) -> Vec<MessageId> {
        self.shared.state.read().messages.keys().copied().collect()
    }

    /// Snapshot of all messages, ordered by id.
    pub fn messages(&self) -> Vec<Arc<Message>> {
        self.shared.state.read().messages.values().cloned().collect()
    }

    /// Ids of a service's messages, oldest first with id as tie-break.
    pub fn list_service(&self, service: &str) -> Vec<MessageId> {
        self.shared
            .state
            .read()
            .by_service
            .get(service)
            .map(|set| set.iter().map(|(_, id)| *id).collect())
            .unwrap_or_default()
    }

    pub fn service_messages(&self, service: &str) -> Vec<Arc<Message>> {
        let state = self.shared.state.read();
        state
            .by_service
            .get(service)
            .map(|set| set.iter().map(|(_, id)| state.messages[id].clone()).collect())
            .unwrap_or_default()
    }

    /// Service names with message counts, sorted by name.
    pub fn services(&self) -> Vec<(String, usize)> {
        self.shared
            .state
            .read()
            .by_service
            .iter()
            .map(|(name, ids)| (name.clone(), ids.len()))
            .collect()
    }

    /// Live messages as (id, encoded size), ordered by id.
    pub fn summary_vector(&self) -> SummaryVector {
        let state = self.shared.state.read();
        SummaryVector::from_sorted(
            state.messages.values().map(|m| (m.id(), m.encoded_len() as u64)).collect(),
        )
    }

    /// Summary vector omitting messages already expired at `now`.
    pub fn summary_vector_at(&self, now: u64) -> SummaryVector {
        let state = self.shared.state.read();
        SummaryVector::from_sorted(
            state
                .messages
                .values()
                .filter(|m| !m.is_expired(now))
                .map(|m| (m.id(), m.encoded_len() as u64))
                .collect(),
        )
    }

    pub fn state_digest(&self) -> StateDigest {
        StateDigest::of_ids(self.shared.state.read().messages.keys())
    }

    /// Stores a rendered view for a cached message. Views for messages no
    /// longer in the cache are dropped.
    pub fn put_view(&self, id: MessageId, view: RenderedView) -> Result<bool, CacheError> {
        let mut state = self.shared.state.write();
        if !state.messages.contains_key(&id) {
            return Ok(false);
        }
        if let Some(path) = self.view_path(&id, view.kind) {
            let json = serde_json::to_vec(&view).expect("views serialize");
            write_atomic(&path, &json)?;
        }
        state.views.insert((id, view.kind), view);
        Ok(true)
    }

    pub fn view(&self, id: &MessageId, kind: ViewKind) -> Option<RenderedView> {
        self.shared.state.read().views.get(&(*id, kind)).cloned()
    }

    pub fn put_thumbnail(&self, id: MessageId, png: Vec<u8>) -> Result<bool, CacheError> {
        let mut state = self.shared.state.write();
        if !state.messages.contains_key(&id) {
            return Ok(false);
        }
        if let Some(path) = self.thumb_path(&id) {
            write_atomic(&path, &png)?;
        }
        state.thumbnails.insert(id, Arc::new(png));
        Ok(true)
    }

    pub fn thumbnail(&self, id: &MessageId) -> Option<Arc<Vec<u8>>> {
        self.shared.state.read().thumbnails.get(id).cloned()
    }

    /// Rewrites any message file missing from disk. The cache is already
    /// write-through, so this only repairs external damage.
    pub fn persist(&self) -> Result<usize, CacheError> {
        let state = self.shared.state.read();
        let mut written = 0;
        for (id, msg) in &state.messages {
            if let Some(path) = self.message_path(id) {
                if !path.exists() {
                    write_atomic(&path, &msg.encode_canonical())?;
                    written += 1;
                }
            }
        }
        Ok(written)
    }

    /// Reloads state from the root directory. Files that fail to decode or
    /// whose content does not hash to their file name are deleted.
    fn recover(&self) -> Result<RecoveryReport, CacheError> {
        let Some(root) = self.shared.root.clone() else {
            return Ok(RecoveryReport::default());
        };
        let mut report = RecoveryReport::default();
        let mut state = self.shared.state.write();
        *state = State::default();

        let dir = root.join("messages");
        let mut entries: Vec<PathBuf> = fs::read_dir(&dir)
            .map_err(io_err(&dir))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .collect();
        entries.sort();
        for path in entries {
            let claimed = path
                .file_name()
                .and_then(|n| n.to_str())
                .and_then(|n| n.strip_suffix(".owm"))
                .and_then(|n| n.parse::<MessageId>().ok());
            let msg = claimed.and_then(|id| {
                let bytes = fs::read(&path).ok()?;
                Message::decode(&bytes).ok().filter(|m| m.id() == id)
            });
            match msg {
                Some(msg) => {
                    state.add(Arc::new(msg));
                    report.loaded += 1;
                }
                None => {
                    remove_if_exists(&path)?;
                    report.discarded.push(path);
                }
            }
        }

        let vdir = root.join("views");
        for entry in fs::read_dir(&vdir).map_err(io_err(&vdir))?.flatten() {
            let path = entry.path();
            let Some(name) = path.file_name().and_then(|n| n.to_str()).map(str::to_owned) else {
                continue;
            };
            let mut parts = name.splitn(2, '.');
            let id = parts.next().and_then(|s| s.parse::<MessageId>().ok());
            let rest = parts.next().unwrap_or("");
            let keep = match id {
                Some(id) if state.messages.contains_key(&id) => {
                    if rest == "thumb.png" {
                        match fs::read(&path) {
                            Ok(png) => {
                                state.thumbnails.insert(id, Arc::new(png));
                                true
                            }
                            Err(_) => false,
                        }
                    } else if let Some(kind) = rest.strip_suffix(".json").and_then(ViewKind::parse) {
                        let view = fs::read(&path)
                            .ok()
                            .and_then(|b| serde_json::from_slice::<RenderedView>(&b).ok());
                        match view {
                            Some(v) if v.kind == kind => {
                                state.views.insert((id, kind), v);
                                true
                            }
                            _ => false,
                        }
                    } else {
                        false
                    }
                }
                _ => false,
            };
            if !keep {
                remove_if_exists(&path)?;
            }
        }
        Ok(report)
    }
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CacheError> {
    let tmp = path.with_extension("tmp");
    let write = || -> io::Result<()> {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    };
    write().map_err(|e| {
        let _ = fs::remove_file(&tmp);
        CacheError::Io { path: path.to_owned(), source: e }
    })
}

fn remove_if_exists(path: &Path) -> Result<(), CacheError> {
    match fs::remove_file(path) {
        Ok(()) => Ok(()),
        Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(()),
        Err(e) => Err(CacheError::Io { path: path.to_owned(), source: e }),
    }
}

/// The contract an underlying store-carry-forward system must satisfy to
/// host the framework: enumerate content, accept content, and report changes.
pub trait CacheAdapter {
    fn list(&self) -> Vec<MessageId>;
    fn put(&self, msg: Message, now: u64) -> Result<InsertOutcome, CacheError>;
    fn watch(&self) -> Subscription;
}

impl CacheAdapter for CacheStore {
    fn list(&self) -> Vec<MessageId> {
        self.ids()
    }

    fn put(&self, msg: Message, now: u64) -> Result<InsertOutcome, CacheError> {
        self.insert(msg, now)
    }

    fn watch(&self) -> Subscription {
        self.subscribe()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::view::{ExecutionMetrics, ViewSource, ViewSubject};

    fn msg(service: &str, created_at: u64, tag: &str) -> Message {
        Message::builder(service)
            .created_at(created_at)
            .ttl(5400)
            .meta("description", tag)
            .build()
            .unwrap()
    }

    #[test]
    fn insert_then_duplicate() {
        let cache = CacheStore::in_memory();
        let events = cache.subscribe();
        let m = msg("board", 0, "a");
        assert_eq!(cache.insert(m.clone(), 0).unwrap(), InsertOutcome::New);
        assert_eq!(cache.insert(m.clone(), 0).unwrap(), InsertOutcome::Duplicate);
        let got = events.drain();
        assert_eq!(got.len(), 1);
        assert_eq!(got[0].kind, CacheEventKind::Inserted);
        assert_eq!(got[0].id, m.id());
    }

    #[test]
    fn expired_messages_are_rejected() {
        let cache = CacheStore::in_memory();
        let m = msg("board", 0, "a");
        assert_eq!(cache.insert(m, 6000).unwrap(), InsertOutcome::RejectedExpired);
        assert!(cache.is_empty());
    }

    #[test]
    fn mismatched_claimed_id_is_invalid() {
        let cache = CacheStore::in_memory();
        let a = msg("board", 0, "a");
        let b = msg("board", 0, "b");
        let (outcome, _) = cache.insert_encoded(&a.encode_canonical(), Some(b.id()), 0).unwrap();
        assert_eq!(outcome, InsertOutcome::RejectedInvalid);
        let (outcome, _) = cache.insert_encoded(b"garbage", None, 0).unwrap();
        assert_eq!(outcome, InsertOutcome::RejectedInvalid);
        assert!(cache.is_empty());
    }

    #[test]
    fn sweep_removes_only_expired() {
        let cache = CacheStore::in_memory();
        assert!(cache.expire_sweep(0).unwrap().is_empty());
        let old = Message::builder("s").created_at(0).ttl(10).build().unwrap();
        let a = msg("s", 5, "a");
        let b = msg("s", 6, "b");
        for m in [&old, &a, &b] {
            cache.insert(m.clone(), 5).unwrap();
        }
        let events = cache.subscribe();
        assert_eq!(cache.expire_sweep(11).unwrap(), vec![old.id()]);
        assert!(cache.expire_sweep(11).unwrap().is_empty());
        assert_eq!(cache.len(), 2);
        let ev = events.drain();
        assert_eq!(ev.len(), 1);
        assert_eq!(ev[0].kind, CacheEventKind::RemovedExpired);
    }

    #[test]
    fn service_listing_orders_by_time_then_id() {
        let cache = CacheStore::in_memory();
        let a = msg("board", 10, "x");
        let b = msg("board", 10, "y");
        let c = msg("board", 5, "z");
        let p = msg("photos", 1, "p");
        for m in [&a, &b, &c, &p] {
            cache.insert(m.clone(), 10).unwrap();
        }
        let mut same_time = vec![a.id(), b.id()];
        same_time.sort();
        let expected = vec![c.id(), same_time[0], same_time[1]];
        assert_eq!(cache.list_service("board"), expected);
        assert_eq!(cache.services(), vec![("board".to_owned(), 3), ("photos".to_owned(), 1)]);
        assert!(cache.list_service("nothing").is_empty());
    }

    #[test]
    fn get_unknown_is_not_found() {
        let cache = CacheStore::in_memory();
        let m = msg("s", 0, "a");
        assert!(matches!(cache.get(&m.id()), Err(CacheError::NotFound(_))));
    }

    #[test]
    fn summary_vector_is_sorted_with_sizes() {
        let cache = CacheStore::in_memory();
        let ms: Vec<_> = (0..5).map(|i| msg("s", i, &i.to_string())).collect();
        for m in &ms {
            cache.insert(m.clone(), 0).unwrap();
        }
        let sv = cache.summary_vector();
        let mut expected: Vec<_> = ms.iter().map(|m| (m.id(), m.encoded_len() as u64)).collect();
        expected.sort();
        assert_eq!(sv.entries(), expected.as_slice());
    }

    #[test]
    fn digest_depends_only_on_id_set() {
        let a = msg("s", 1, "a");
        let b = msg("s", 2, "b");
        let x = CacheStore::in_memory();
        let y = CacheStore::in_memory();
        x.insert(a.clone(), 0).unwrap();
        x.insert(b.clone(), 0).unwrap();
        y.insert(b, 0).unwrap();
        y.insert(a, 0).unwrap();
        assert_eq!(x.state_digest(), y.state_digest());
        assert_ne!(x.state_digest(), CacheStore::in_memory().state_digest());
    }

    #[test]
    fn capacity_evicts_oldest() {
        let a = msg("s", 1, "a");
        let b = msg("s", 2, "b");
        let c = msg("s", 3, "c");
        let cap = a.encoded_len() as u64 * 2;
        let cache = CacheStore::in_memory_with_capacity(cap);
        for m in [&a, &b, &c] {
            assert_eq!(cache.insert(m.clone(), 3).unwrap(), InsertOutcome::New);
        }
        assert!(!cache.contains(&a.id()));
        assert!(cache.contains(&b.id()) && cache.contains(&c.id()));
        let big = Message::builder("s").payload("x", vec![0; cap as usize]).build().unwrap();
        assert!(matches!(cache.insert(big, 3), Err(CacheError::ExceedsCapacity { .. })));
    }

    fn view(id: MessageId, kind: ViewKind) -> RenderedView {
        RenderedView {
            html: "<p>v</p>".into(),
            source: ViewSource::Script,
            subject: ViewSubject::Message(id),
            kind,
            metrics: ExecutionMetrics::default(),
        }
    }

    #[test]
    fn persist_and_recover_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let ms: Vec<_> = (0..6).map(|i| msg(if i % 2 == 0 { "a" } else { "b" }, i, "m")).collect();
        let digest = {
            let (cache, report) = CacheStore::open(dir.path()).unwrap();
            assert_eq!(report.loaded, 0);
            for m in &ms {
                cache.insert(m.clone(), 0).unwrap();
            }
            cache.put_view(ms[0].id(), view(ms[0].id(), ViewKind::Summary)).unwrap();
            cache.put_thumbnail(ms[1].id(), vec![1, 2, 3]).unwrap();
            cache.remove(&ms[5].id()).unwrap();
            cache.state_digest()
        };
        let (cache, report) = CacheStore::open(dir.path()).unwrap();
        assert_eq!(report.loaded, 5);
        assert!(report.discarded.is_empty());
        assert_eq!(cache.state_digest(), digest);
        assert_eq!(cache.view(&ms[0].id(), ViewKind::Summary).unwrap().html, "<p>v</p>");
        assert_eq!(cache.thumbnail(&ms[1].id()).unwrap().as_slice(), &[1, 2, 3]);
        assert_eq!(cache.list_service("a").len(), 3);
    }

    #[test]
    fn recovery_discards_partial_files() {
        let dir = tempfile::tempdir().unwrap();
        let m = msg("s", 1, "whole");
        let torn = msg("s", 2, "torn");
        let digest = {
            let (cache, _) = CacheStore::open(dir.path()).unwrap();
            cache.insert(m.clone(), 0).unwrap();
            cache.state_digest()
        };
        let bytes = torn.encode_canonical();
        let torn_path = dir.path().join("messages").join(format!("{}.owm", torn.id()));
        fs::write(&torn_path, &bytes[..bytes.len() / 2]).unwrap();
        // right bytes under the wrong name
        let wrong_path = dir.path().join("messages").join(format!("{}.owm", torn.id().to_hex().replace('a', "b")));
        fs::write(&wrong_path, m.encode_canonical()).unwrap();
        fs::write(dir.path().join("messages").join("junk.tmp"), b"x").unwrap();

        let (cache, report) = CacheStore::open(dir.path()).unwrap();
        assert_eq!(report.loaded, 1);
        assert!(report.discarded.len() >= 2);
        assert!(!torn_path.exists());
        assert_eq!(cache.state_digest(), digest);
    }

    #[test]
    fn io_failure_rolls_back_insert() {
        let dir = tempfile::tempdir().unwrap();
        let (cache, _) = CacheStore::open(dir.path()).unwrap();
        let events = cache.subscribe();
        let messages_dir = dir.path().join("messages");
        fs::remove_dir_all(&messages_dir).unwrap();
        fs::write(&messages_dir, b"not a directory").unwrap();
        let m = msg("s", 1, "x");
        assert!(matches!(cache.insert(m.clone(), 0), Err(CacheError::Io { .. })));
        assert!(cache.is_empty());
        assert!(events.drain().is_empty());
        assert!(cache.list_service("s").is_empty());
    }

    #[test]
    fn views_for_unknown_messages_are_dropped() {
        let cache = CacheStore::in_memory();
        let m = msg("s", 1, "x");
        assert!(!cache.put_view(m.id(), view(m.id(), ViewKind::Summary)).unwrap());
        cache.insert(m.clone(), 0).unwrap();
        assert!(cache.put_view(m.id(), view(m.id(), ViewKind::Summary)).unwrap());
        cache.remove(&m.id()).unwrap();
        assert!(cache.view(&m.id(), ViewKind::Summary).is_none());
    }

    #[test]
    fn adapter_reflects_puts_and_events() {
        fn exercise(adapter: &dyn CacheAdapter) {
            let watch = adapter.watch();
            let m = msg("s", 1, "x");
            adapter.put(m.clone(), 0).unwrap();
            assert_eq!(adapter.list(), vec![m.id()]);
            assert_eq!(watch.drain().len(), 1);
        }
        exercise(&CacheStore::in_memory());
    }
}
