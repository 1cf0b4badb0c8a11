//! Capability-restricted execution of transformation scripts.
//!
//! Scripts are written in Rhai and run in a fresh engine per execution. The
//! engine has no module loader, no clock and no I/O; the only way a script
//! can observe anything is the host API registered in [`runtime`], which is
//! scoped to the data the script is entitled to see:
//!
//! | function                         | summary / presentation | appSummary | new / reply |
//! |----------------------------------|:-----:|:-----:|:-----:|
//! | `emit(html)`, `escape(v)`, `url_encode(s)`, `now()`, `service()`, `service_url()`, `transformation()` | x | x | x |
//! | `message_id()`, `created_at()`, `originator()`, `get_meta(k)`, `has_meta(k)`, `payload_names()`, `read_payload(n)`, `read_payload_text(n)`, `payload_url(n)`, `thumbnail_url()`, `detail_url()`, `reply_url()` | x | x | x |
//! | `message_ids()`, `message_meta(id, k)`, `message_created_at(id)`, `message_originator(id)`, `message_payload_names(id)`, `message_payload_text(id, n)`, `detail_url(id)`, `reply_url(id)`, `thumbnail_url(id)`, `payload_url(id, n)` | | x | x |
//! | `run_summary(id)`, `run_presentation(id)`, `get_state(k)`, `set_state(k, v)` | | x | |
//! | `param(name)` | x | x | x |
//!
//! Message-scoped functions in presenters refer to the message carrying the
//! presenter. Anything else is a capability error.
//!
//! `new` and `reply` scripts define two functions: `fields()` returns the
//! form description, an array of `#{name, label, type, required}` maps with
//! `type` one of `text`, `textarea`, `file`, `hidden`; `build(form)` gets a
//! map of submitted values (strings, blobs for files) and returns
//! `#{meta: #{..}, payload: #{..}, errors: #{..}}`.

mod draft;
mod fallback;
mod pipeline;
mod runtime;
mod sanitize;
mod thumbnail;
pub mod urls;

use std::collections::{BTreeMap, HashMap};
use std::sync::Arc;
use std::time::{Duration, Instant};

use parking_lot::Mutex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::message::{Message, ScriptKind};
use crate::view::{ExecutionMetrics, RenderedView, ViewKind, ViewSource, ViewSubject};

pub use draft::{FieldError, FieldSpec, FieldType, FormValue, FormValues};
pub use fallback::render as execute_fallback;
pub use pipeline::{render_message_views, RenderPipeline};
pub use sanitize::{clean as sanitize_html, escape_text};
pub use thumbnail::{make_thumbnail, THUMBNAIL_EDGE};

use runtime::{Execution, Runtime};

/// Resource limits for one execution, including nested per-message
/// renders started by a presenter.
#[derive(Clone, PartialEq, Eq, Debug, Serialize, Deserialize)]
pub struct ExecutionBudget {
    #[serde(with = "millis")]
    pub cpu_time: Duration,
    pub memory_bytes: usize,
    pub output_bytes: usize,
}

mod millis {
    use serde::{Deserialize, Deserializer, Serializer};
    use std::time::Duration;

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u64(d.as_millis() as u64)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        u64::deserialize(d).map(Duration::from_millis)
    }
}

impl Default for ExecutionBudget {
    fn default() -> Self {
        Self { cpu_time: Duration::from_secs(2), memory_bytes: 64 << 20, output_bytes: 1 << 20 }
    }
}

impl ExecutionBudget {
    pub fn validate(&self) -> Result<(), String> {
        if self.cpu_time.is_zero() || self.memory_bytes == 0 || self.output_bytes == 0 {
            return Err("sandbox budgets must all be positive".into());
        }
        Ok(())
    }
}

#[derive(Clone, PartialEq, Eq, Debug, Error)]
pub enum SandboxError {
    #[error("message has no {0} transformation")]
    MissingScript(ScriptKind),
    #[error("script does not compile: {0}")]
    Compile(String),
    #[error("script failed: {0}")]
    Runtime(String),
    #[error("cpu budget of {0:?} exhausted")]
    CpuBudget(Duration),
    #[error("memory budget exhausted ({0})")]
    MemoryBudget(String),
    #[error("output exceeds {0} bytes")]
    OutputLimit(usize),
    #[error("capability denied: {0}")]
    CapabilityDenied(String),
    #[error("form has invalid fields: {}", .0.iter().map(|e| e.field.as_str()).collect::<Vec<_>>().join(", "))]
    Validation(Vec<FieldError>),
    #[error("script produced an invalid draft: {0}")]
    InvalidDraft(String),
}

impl SandboxError {
    /// Budget violations, as opposed to script bugs or denied calls.
    pub fn is_budget(&self) -> bool {
        matches!(self, Self::CpuBudget(_) | Self::MemoryBudget(_) | Self::OutputLimit(_))
    }
}

/// Service-scoped key/value state a presenter may keep between runs.
#[derive(Clone, Default, Debug)]
pub struct PresenterState(Arc<Mutex<BTreeMap<String, String>>>);

impl PresenterState {
    pub fn get(&self, key: &str) -> Option<String> {
        self.0.lock().get(key).cloned()
    }

    pub fn set(&self, key: String, value: String) {
        self.0.lock().insert(key, value);
    }

    pub fn snapshot(&self) -> BTreeMap<String, String> {
        self.0.lock().clone()
    }
}

/// Presenter states keyed by (portal session, service). Kept in memory only,
/// so a node restart clears them.
#[derive(Clone, Default)]
pub struct StateStore(Arc<Mutex<HashMap<(String, String), PresenterState>>>);

impl StateStore {
    pub fn get(&self, session: &str, service: &str) -> PresenterState {
        self.0.lock().entry((session.to_owned(), service.to_owned())).or_default().clone()
    }
}

/// Entry point for running transformations.
#[derive(Clone, Debug, Default)]
pub struct Sandbox {
    budget: ExecutionBudget,
}

fn view_script(kind: ViewKind) -> ScriptKind {
    match kind {
        ViewKind::AppSummary => ScriptKind::AppSummary,
        ViewKind::Summary => ScriptKind::Summary,
        ViewKind::Presentation => ScriptKind::Presentation,
    }
}

impl Sandbox {
    pub fn new(budget: ExecutionBudget) -> Self {
        Self { budget }
    }

    pub fn budget(&self) -> &ExecutionBudget {
        &self.budget
    }

    /// Runs the message's own summary or presentation script.
    pub fn execute_view(&self, msg: &Arc<Message>, kind: ViewKind, now: u64) -> Result<RenderedView, SandboxError> {
        if kind == ViewKind::AppSummary {
            return self.execute_app_summary(msg.service(), &[msg.clone()], &PresenterState::default(), &BTreeMap::new(), now);
        }
        let started = Instant::now();
        let html = Runtime::new(&self.budget).render_message(msg, view_script(kind), now)?;
        Ok(view(html, ViewSource::Script, ViewSubject::Message(msg.id()), kind, started))
    }

    pub fn execute_summary(&self, msg: &Arc<Message>, now: u64) -> Result<RenderedView, SandboxError> {
        self.execute_view(msg, ViewKind::Summary, now)
    }

    pub fn execute_presentation(&self, msg: &Arc<Message>, now: u64) -> Result<RenderedView, SandboxError> {
        self.execute_view(msg, ViewKind::Presentation, now)
    }

    /// Script view if it succeeds, fallback otherwise. The error, if any, is
    /// returned alongside for logging.
    pub fn view_or_fallback(&self, msg: &Arc<Message>, kind: ViewKind, now: u64) -> (RenderedView, Option<SandboxError>) {
        match self.execute_view(msg, kind, now) {
            Ok(v) => (v, None),
            Err(e) => (fallback::render(msg, kind), Some(e)),
        }
    }

    /// Picks the presenter for a service: newest `created_at` among messages
    /// carrying one, larger id on ties.
    pub fn select_presenter<'a>(messages: &'a [Arc<Message>]) -> Option<&'a Arc<Message>> {
        messages
            .iter()
            .filter(|m| m.script(ScriptKind::AppSummary).is_some())
            .max_by_key(|m| (m.created_at(), m.id()))
    }

    /// Runs the service presenter over `messages` (all of the same service,
    /// oldest first).
    pub fn execute_app_summary(
        &self,
        service: &str,
        messages: &[Arc<Message>],
        state: &PresenterState,
        params: &BTreeMap<String, String>,
        now: u64,
    ) -> Result<RenderedView, SandboxError> {
        let started = Instant::now();
        let presenter = Self::select_presenter(messages).ok_or(SandboxError::MissingScript(ScriptKind::AppSummary))?;
        let script = presenter.script(ScriptKind::AppSummary).expect("selected for its presenter");
        if let Some(m) = messages.iter().find(|m| m.service() != service) {
            return Err(SandboxError::CapabilityDenied(format!("message {} is not in service {service:?}", m.id())));
        }
        let exec = Execution {
            kind: ScriptKind::AppSummary,
            service: service.to_owned(),
            message: Some(presenter.clone()),
            service_messages: Some(Arc::new(messages.to_vec())),
            state: Some(state.clone()),
            params: params.clone(),
            now,
        };
        let raw = Runtime::new(&self.budget).run_view(&exec, script.source())?;
        let html = sanitize::clean(&raw);
        Ok(view(html, ViewSource::Script, ViewSubject::Service(service.to_owned()), ViewKind::AppSummary, started))
    }

    /// Landing view with fallback: a time-ordered list of per-message
    /// summaries.
    pub fn app_summary_or_fallback(
        &self,
        service: &str,
        messages: &[Arc<Message>],
        state: &PresenterState,
        params: &BTreeMap<String, String>,
        now: u64,
    ) -> (RenderedView, Option<SandboxError>) {
        match self.execute_app_summary(service, messages, state, params, now) {
            Ok(v) => (v, None),
            Err(e) => {
                let started = Instant::now();
                let mut html = String::from("<ul class=\"message-list\">");
                for m in messages {
                    let (v, _) = self.view_or_fallback(m, ViewKind::Summary, now);
                    html.push_str("<li>");
                    html.push_str(&v.html);
                    html.push_str(&format!(" <a class=\"more\" href=\"{}\">details</a></li>", urls::detail(&m.id())));
                }
                html.push_str("</ul>");
                let v = view(html, ViewSource::Fallback, ViewSubject::Service(service.to_owned()), ViewKind::AppSummary, started);
                (v, Some(e))
            }
        }
    }

    /// Describe phase of a `new` or `reply` script: the form to show.
    pub fn describe_form(
        &self,
        kind: ScriptKind,
        source_msg: &Arc<Message>,
        service_messages: &[Arc<Message>],
        now: u64,
    ) -> Result<Vec<FieldSpec>, SandboxError> {
        draft::describe(&self.budget, kind, source_msg, service_messages, now)
    }

    /// Builds, stamps and signs a new message from a service template.
    pub fn execute_new(&self, req: draft::DraftRequest<'_>) -> Result<Message, SandboxError> {
        draft::build(&self.budget, ScriptKind::New, req)
    }

    /// Builds, stamps and signs a reply to `req.source`.
    pub fn execute_reply(&self, req: draft::DraftRequest<'_>) -> Result<Message, SandboxError> {
        draft::build(&self.budget, ScriptKind::Reply, req)
    }
}

pub use draft::DraftRequest;

fn view(html: String, source: ViewSource, subject: ViewSubject, kind: ViewKind, started: Instant) -> RenderedView {
    let metrics = ExecutionMetrics { wall_time_us: started.elapsed().as_micros() as u64, output_bytes: html.len() };
    RenderedView { html, source, subject, kind, metrics }
}
