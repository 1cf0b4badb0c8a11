//! Application bundles: a manifest, one script per transformation kind and
//! an icon, packed into a template message that seeds the service.
//!
//! Manifest format (`manifest.toml`):
//!
//! ```toml
//! service = "board"              # required
//! title = "Board"                # optional, shown in the directory
//! description = "..."            # optional, becomes `description`
//! icon = "icon.png"              # optional file, carried as a payload
//! contentType = "other"          # optional `contentType` of the template
//!
//! [scripts]                      # at least `summary`; file per kind
//! appSummary = "app_summary.rhai"
//! summary = "summary.rhai"
//! presentation = "presentation.rhai"
//! new = "new.rhai"
//! reply = "reply.rhai"
//! ```
//!
//! The template message carries `appTemplate = "1"`; presenters skip it
//! when listing content.

mod demo;

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use serde::Deserialize;
use thiserror::Error;

use crate::keys::Identity;
use crate::message::{
    ContentType, Message, MessageError, MetaValue, ScriptKind, DEFAULT_TTL, KEY_CONTENT_TYPE, KEY_DESCRIPTION,
    KEY_ICON,
};
use crate::sandbox::{DraftRequest, FormValue, FormValues, Sandbox, SandboxError};

/// Metadata key marking a bundle's template message.
pub const KEY_APP_TEMPLATE: &str = "appTemplate";
/// Metadata key holding the human-readable application title.
pub const KEY_TITLE: &str = "title";

pub use demo::{demo_messages, DEMO_COUNT};

#[derive(Clone, Debug, Deserialize, PartialEq, Eq)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub service: String,
    #[serde(default)]
    pub title: Option<String>,
    #[serde(default)]
    pub description: Option<String>,
    #[serde(default)]
    pub icon: Option<String>,
    #[serde(default, rename = "contentType")]
    pub content_type: Option<String>,
    pub scripts: BTreeMap<String, String>,
}

#[derive(Debug, Error)]
pub enum BundleError {
    #[error("manifest: {0}")]
    Manifest(#[from] toml::de::Error),
    #[error("unknown transformation kind {0:?} in manifest")]
    UnknownKind(String),
    #[error("bundle has no summary script")]
    NoSummary,
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{0} is not valid UTF-8")]
    NotUtf8(String),
    #[error("script {0} is empty")]
    EmptyScript(String),
    #[error("unknown contentType {0:?}")]
    ContentType(String),
}

#[derive(Clone, Debug)]
pub struct AppBundle {
    pub manifest: Manifest,
    pub scripts: BTreeMap<ScriptKind, String>,
    pub icon: Option<(String, Vec<u8>)>,
}

impl AppBundle {
    /// Parses a manifest and resolves the files it names through `read`.
    pub fn load<F>(manifest: &str, read: F) -> Result<Self, BundleError>
    where
        F: Fn(&str) -> std::io::Result<Vec<u8>>,
    {
        let manifest: Manifest = toml::from_str(manifest)?;
        if let Some(ct) = &manifest.content_type {
            ContentType::known(ct).ok_or_else(|| BundleError::ContentType(ct.clone()))?;
        }
        let fetch = |file: &str| read(file).map_err(|source| BundleError::Io { path: file.to_owned(), source });
        let mut scripts = BTreeMap::new();
        for (key, file) in &manifest.scripts {
            let kind = ScriptKind::from_key(key).ok_or_else(|| BundleError::UnknownKind(key.clone()))?;
            let source = String::from_utf8(fetch(file)?).map_err(|_| BundleError::NotUtf8(file.clone()))?;
            if source.trim().is_empty() {
                return Err(BundleError::EmptyScript(file.clone()));
            }
            scripts.insert(kind, source);
        }
        if !scripts.contains_key(&ScriptKind::Summary) {
            return Err(BundleError::NoSummary);
        }
        let icon = match &manifest.icon {
            Some(file) => Some((file.clone(), fetch(file)?)),
            None => None,
        };
        Ok(Self { manifest, scripts, icon })
    }

    /// Loads a bundle directory containing `manifest.toml`.
    pub fn from_dir(dir: &Path) -> Result<Self, BundleError> {
        let path = dir.join("manifest.toml");
        let manifest = std::fs::read_to_string(&path)
            .map_err(|source| BundleError::Io { path: path.display().to_string(), source })?;
        Self::load(&manifest, |file| std::fs::read(dir.join(file)))
    }

    pub fn service(&self) -> &str {
        &self.manifest.service
    }

    /// Builds the signed template message that seeds the service.
    pub fn template(&self, identity: &Identity, now: u64, ttl: u64) -> Result<Message, MessageError> {
        let mut b = Message::builder(self.service())
            .originator(identity.fingerprint())
            .created_at(now)
            .ttl(ttl)
            .meta(KEY_APP_TEMPLATE, "1");
        if let Some(title) = &self.manifest.title {
            b = b.meta(KEY_TITLE, title.as_str());
        }
        if let Some(desc) = &self.manifest.description {
            b = b.meta(KEY_DESCRIPTION, desc.as_str());
        }
        if let Some(ct) = &self.manifest.content_type {
            b = b.meta(KEY_CONTENT_TYPE, ct.as_str());
        }
        for (kind, source) in &self.scripts {
            b = b.script(*kind, source.as_str());
        }
        if let Some((name, data)) = &self.icon {
            b = b.payload(name.as_str(), data.clone()).meta(KEY_ICON, MetaValue::PayloadRef(name.clone()));
        }
        Ok(identity.sign(&b.build()?))
    }
}

macro_rules! embedded {
    ($dir:literal, [$($file:literal),*]) => {{
        let read = |name: &str| -> std::io::Result<Vec<u8>> {
            match name {
                $($file => Ok(include_bytes!(concat!("../../apps/", $dir, "/", $file)).to_vec()),)*
                _ => Err(std::io::ErrorKind::NotFound.into()),
            }
        };
        AppBundle::load(include_str!(concat!("../../apps/", $dir, "/manifest.toml")), read)
            .expect(concat!("embedded bundle ", $dir))
    }};
}

pub fn photos() -> AppBundle {
    embedded!("photos", ["app_summary.rhai", "summary.rhai", "presentation.rhai", "new.rhai", "icon.png"])
}

pub fn board() -> AppBundle {
    embedded!("board", ["app_summary.rhai", "summary.rhai", "presentation.rhai", "new.rhai", "reply.rhai", "icon.png"])
}

pub fn peoplefinder() -> AppBundle {
    embedded!(
        "peoplefinder",
        ["app_summary.rhai", "summary.rhai", "presentation.rhai", "new.rhai", "reply.rhai", "icon.png"]
    )
}

/// The three demo bundles.
pub fn builtin() -> Vec<AppBundle> {
    vec![photos(), board(), peoplefinder()]
}

/// Form values from (name, text) pairs.
pub fn text_form<'a>(pairs: impl IntoIterator<Item = (&'a str, &'a str)>) -> FormValues {
    pairs.into_iter().map(|(k, v)| (k.to_owned(), FormValue::Text(v.to_owned()))).collect()
}

/// Builds fixture messages for a bundle by running its own `new` and
/// `reply` scripts, one second apart.
pub struct FixtureBuilder {
    sandbox: Sandbox,
    identity: Identity,
    now: u64,
    ttl: u64,
    template: Arc<Message>,
    messages: Vec<Arc<Message>>,
}

impl FixtureBuilder {
    pub fn new(bundle: &AppBundle, sandbox: Sandbox, identity: Identity, now: u64) -> Self {
        let template = Arc::new(bundle.template(&identity, now, DEFAULT_TTL).expect("bundle template builds"));
        Self { sandbox, identity, now, ttl: DEFAULT_TTL, messages: vec![template.clone()], template }
    }

    pub fn template(&self) -> &Arc<Message> {
        &self.template
    }

    /// All messages so far, template first, oldest first.
    pub fn messages(&self) -> &[Arc<Message>] {
        &self.messages
    }

    fn request<'a>(&'a mut self, source: &'a Arc<Message>, form: &'a FormValues) -> DraftRequest<'a> {
        self.now += 1;
        DraftRequest {
            source,
            service_messages: &self.messages,
            form,
            identity: &self.identity,
            now: self.now,
            ttl: self.ttl,
        }
    }

    pub fn post(&mut self, form: &FormValues) -> Result<Arc<Message>, SandboxError> {
        let template = self.template.clone();
        let sandbox = self.sandbox.clone();
        let msg = Arc::new(sandbox.execute_new(self.request(&template, form))?);
        self.messages.push(msg.clone());
        Ok(msg)
    }

    pub fn reply(&mut self, parent: &Arc<Message>, form: &FormValues) -> Result<Arc<Message>, SandboxError> {
        let sandbox = self.sandbox.clone();
        let msg = Arc::new(sandbox.execute_reply(self.request(parent, form))?);
        self.messages.push(msg.clone());
        Ok(msg)
    }
}
