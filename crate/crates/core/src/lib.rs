//! Core building blocks of an opportunistic web node.
//!
//! A node stores self-contained [`Message`]s in a content-addressed
//! [`CacheStore`], reconciles its cache with peers through pairwise
//! anti-entropy sessions ([`sync`]), and renders messages to web clients by
//! running the transformation scripts each message carries inside a
//! capability-restricted [`sandbox`].

pub mod apps;
pub mod cache;
pub mod keys;
pub mod message;
pub mod sandbox;
pub mod sync;
pub mod view;

pub use cache::{CacheEvent, CacheEventKind, CacheStore, InsertOutcome, StateDigest};
pub use keys::{Identity, KeyRecord, KeySet, VerifyOutcome};
pub use message::{
    ContentType, Message, MessageBuilder, MessageId, MetaValue, MetadataWarning, PayloadEntry,
    ScriptKind, TransformationScript,
};
pub use view::{RenderedView, ViewKind, ViewSource};
