//! Python bindings: messages, keys, caches, sync sessions, the sandbox and
//! the simulator.
//!
//! ```python
//! import oppweb
//! me = oppweb.Identity.generate(seed=1)
//! msg = oppweb.Message.build("board", scripts={"summary": 'emit("hi");'}, created_at=1000).signed(me)
//! cache = oppweb.CacheStore()
//! cache.insert(msg, now=1000)
//! ```

use std::collections::{BTreeMap, HashMap};
use std::sync::Arc;
use std::time::Duration;

use oppweb_core::keys::{verify_message, KeySet};
use oppweb_core::message::DEFAULT_TTL;
use oppweb_core::sandbox::{ExecutionBudget, PresenterState, Sandbox};
use oppweb_core::sync::{run_local_pair, SessionConfig, SessionReport};
use oppweb_core::{CacheStore, InsertOutcome, KeyRecord, Message, MessageId, MetaValue, ScriptKind, VerifyOutcome, ViewKind, ViewSource};
use pyo3::exceptions::{PyKeyError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyBytes, PyDict};
use rand::SeedableRng;

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn parse_id(id: &str) -> PyResult<MessageId> {
    id.parse().map_err(|_| PyValueError::new_err(format!("not a message id: {id:?}")))
}

#[pyclass(module = "oppweb", frozen)]
#[derive(Clone)]
pub struct Identity {
    inner: oppweb_core::Identity,
}

#[pymethods]
impl Identity {
    /// New key pair; `seed` makes it reproducible.
    #[staticmethod]
    #[pyo3(signature = (seed=None))]
    fn generate(seed: Option<u64>) -> Self {
        let inner = match seed {
            Some(s) => oppweb_core::Identity::generate(&mut rand_chacha::ChaCha8Rng::seed_from_u64(s)),
            None => oppweb_core::Identity::generate(&mut rand::rngs::OsRng),
        };
        Self { inner }
    }

    #[staticmethod]
    fn from_secret(secret: &[u8]) -> PyResult<Self> {
        oppweb_core::Identity::from_secret(secret).map(|inner| Self { inner }).map_err(value_err)
    }

    #[getter]
    fn fingerprint(&self) -> String {
        self.inner.fingerprint()
    }

    fn secret_bytes<'py>(&self, py: Python<'py>) -> Bound<'py, PyBytes> {
        PyBytes::new_bound(py, &self.inner.secret_bytes())
    }

    fn public_key<'py>(&self, py: Python<'py>) -> Bound<'py, PyBytes> {
        PyBytes::new_bound(py, &self.inner.public_key())
    }

    /// The signed key-record message that lets peers verify this identity.
    #[pyo3(signature = (now, ttl=DEFAULT_TTL))]
    fn key_record(&self, now: u64, ttl: u64) -> PyResult<PyMessage> {
        KeyRecord::to_message(&self.inner, now, ttl).map(PyMessage::from).map_err(value_err)
    }

    fn __repr__(&self) -> String {
        format!("Identity({})", self.inner.fingerprint())
    }
}

#[pyclass(name = "Message", module = "oppweb", frozen)]
#[derive(Clone)]
pub struct PyMessage {
    inner: Arc<Message>,
}

impl From<Message> for PyMessage {
    fn from(m: Message) -> Self {
        Self { inner: Arc::new(m) }
    }
}

#[pymethods]
impl PyMessage {
    #[staticmethod]
    #[pyo3(signature = (service, metadata=None, scripts=None, payload=None, created_at=0, ttl=DEFAULT_TTL, originator=None))]
    fn build(
        service: &str,
        metadata: Option<BTreeMap<String, String>>,
        scripts: Option<BTreeMap<String, String>>,
        payload: Option<Vec<(String, Vec<u8>)>>,
        created_at: u64,
        ttl: u64,
        originator: Option<String>,
    ) -> PyResult<Self> {
        let mut b = Message::builder(service).created_at(created_at).ttl(ttl);
        if let Some(o) = originator {
            b = b.originator(o);
        }
        for (k, v) in metadata.unwrap_or_default() {
            b = b.meta(k, v);
        }
        for (k, src) in scripts.unwrap_or_default() {
            let kind = ScriptKind::from_key(&k).ok_or_else(|| PyValueError::new_err(format!("unknown script kind {k:?}")))?;
            b = b.script(kind, src);
        }
        for (name, data) in payload.unwrap_or_default() {
            b = b.payload(name, data);
        }
        b.build().map(Self::from).map_err(value_err)
    }

    #[staticmethod]
    fn decode(data: &[u8]) -> PyResult<Self> {
        Message::decode(data).map(Self::from).map_err(value_err)
    }

    fn encode<'py>(&self, py: Python<'py>) -> Bound<'py, PyBytes> {
        PyBytes::new_bound(py, &self.inner.encode_canonical())
    }

    /// Copy signed by `identity`; the id does not change.
    fn signed(&self, identity: &Identity) -> Self {
        identity.inner.sign(&self.inner).into()
    }

    /// "verified", "unverified" (originator unknown) or "invalid".
    fn verify(&self, key_records: Vec<PyMessage>) -> String {
        let keys: KeySet = key_records.iter().filter_map(|m| KeyRecord::from_message(&m.inner).ok()).collect();
        match verify_message(&self.inner, &keys) {
            VerifyOutcome::Verified => "verified",
            VerifyOutcome::UnknownOriginator => "unverified",
            VerifyOutcome::BadSignature => "invalid",
        }
        .into()
    }

    #[getter]
    fn id(&self) -> String {
        self.inner.id().to_hex()
    }

    #[getter]
    fn service(&self) -> &str {
        self.inner.service()
    }

    #[getter]
    fn originator(&self) -> &str {
        self.inner.originator()
    }

    #[getter]
    fn created_at(&self) -> u64 {
        self.inner.created_at()
    }

    #[getter]
    fn ttl(&self) -> u64 {
        self.inner.ttl_seconds()
    }

    /// Text-valued metadata; byte values come back as `bytes`, payload
    /// references as the referenced name.
    fn metadata<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let d = PyDict::new_bound(py);
        for (k, v) in self.inner.metadata() {
            match v {
                MetaValue::Text(s) | MetaValue::PayloadRef(s) => d.set_item(k, s)?,
                MetaValue::Bytes(b) => d.set_item(k, PyBytes::new_bound(py, b))?,
            }
        }
        Ok(d)
    }

    fn payload_names(&self) -> Vec<String> {
        self.inner.payload().iter().map(|p| p.name.clone()).collect()
    }

    fn payload<'py>(&self, py: Python<'py>, name: &str) -> PyResult<Bound<'py, PyBytes>> {
        let data = self.inner.payload_data(name).ok_or_else(|| PyKeyError::new_err(name.to_owned()))?;
        Ok(PyBytes::new_bound(py, data))
    }

    fn is_expired(&self, now: u64) -> bool {
        self.inner.is_expired(now)
    }

    /// Readable JSON rendering, not the wire format.
    fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.inner.to_debug_json()).unwrap_or_default()
    }

    fn __eq__(&self, other: &Self) -> bool {
        self.inner.id() == other.inner.id()
    }

    fn __hash__(&self) -> u64 {
        u64::from_be_bytes(self.inner.id().as_bytes()[..8].try_into().unwrap())
    }

    fn __repr__(&self) -> String {
        format!("Message({} {})", self.inner.service(), &self.inner.id().to_hex()[..12])
    }
}

#[pyclass(name = "CacheStore", module = "oppweb", frozen)]
#[derive(Clone)]
pub struct PyCacheStore {
    inner: CacheStore,
}

#[pymethods]
impl PyCacheStore {
    /// In-memory cache, or a persistent one rooted at `path`.
    #[new]
    #[pyo3(signature = (path=None))]
    fn new(path: Option<std::path::PathBuf>) -> PyResult<Self> {
        let inner = match path {
            Some(p) => CacheStore::open(p).map_err(|e| PyRuntimeError::new_err(e.to_string()))?.0,
            None => CacheStore::in_memory(),
        };
        Ok(Self { inner })
    }

    /// Returns "new", "duplicate", "expired" or "invalid".
    fn insert(&self, message: &PyMessage, now: u64) -> PyResult<&'static str> {
        let outcome = self.inner.insert(message.inner.as_ref().clone(), now).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
        Ok(match outcome {
            InsertOutcome::New => "new",
            InsertOutcome::Duplicate => "duplicate",
            InsertOutcome::RejectedExpired => "expired",
            InsertOutcome::RejectedInvalid => "invalid",
        })
    }

    fn get(&self, id: &str) -> PyResult<PyMessage> {
        let id = parse_id(id)?;
        self.inner.get(&id).map(|inner| PyMessage { inner }).map_err(|_| PyKeyError::new_err(id.to_hex()))
    }

    fn __contains__(&self, id: &str) -> PyResult<bool> {
        Ok(self.inner.contains(&parse_id(id)?))
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn ids(&self) -> Vec<String> {
        self.inner.ids().iter().map(MessageId::to_hex).collect()
    }

    fn service_ids(&self, service: &str) -> Vec<String> {
        self.inner.list_service(service).iter().map(MessageId::to_hex).collect()
    }

    /// sha256 over the sorted ids, hex encoded.
    fn state_digest(&self) -> String {
        self.inner.state_digest().to_hex()
    }

    /// Removes expired messages and returns their ids.
    fn expire(&self, now: u64) -> PyResult<Vec<String>> {
        let gone = self.inner.expire_sweep(now).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
        Ok(gone.iter().map(MessageId::to_hex).collect())
    }
}

fn report_dict<'py>(py: Python<'py>, r: &SessionReport) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new_bound(py);
    d.set_item("peer", r.peer.clone())?;
    d.set_item("done", r.is_done())?;
    d.set_item("abort_reason", r.abort_reason.clone())?;
    d.set_item("sent", r.sent.iter().map(MessageId::to_hex).collect::<Vec<_>>())?;
    d.set_item("received", r.received.iter().map(MessageId::to_hex).collect::<Vec<_>>())?;
    d.set_item("bytes_sent", r.bytes_sent)?;
    d.set_item("bytes_received", r.bytes_received)?;
    d.set_item("duplicate_data_frames", r.duplicate_data_frames)?;
    Ok(d)
}

/// Runs one anti-entropy session between two caches in this process.
#[pyfunction]
fn sync_pair<'py>(py: Python<'py>, a: &PyCacheStore, b: &PyCacheStore, now: u64) -> PyResult<(Bound<'py, PyDict>, Bound<'py, PyDict>)> {
    let (ra, rb) = py.allow_threads(|| {
        run_local_pair(&a.inner, SessionConfig::new("a"), &b.inner, SessionConfig::new("b"), now, None, None)
    });
    Ok((report_dict(py, &ra)?, report_dict(py, &rb)?))
}

/// Renders one view of a message in the sandbox. Returns (html, source)
/// where source is "script" or "fallback"; script errors raise.
#[pyfunction]
#[pyo3(signature = (message, kind="summary", now=0, cpu_ms=2000))]
fn render(py: Python<'_>, message: &PyMessage, kind: &str, now: u64, cpu_ms: u64) -> PyResult<(String, String)> {
    let sandbox = Sandbox::new(ExecutionBudget { cpu_time: Duration::from_millis(cpu_ms), ..Default::default() });
    let msg = message.inner.clone();
    let view = match kind {
        "appSummary" => py.allow_threads(|| {
            sandbox.execute_app_summary(msg.service(), &[msg.clone()], &PresenterState::default(), &BTreeMap::new(), now)
        }),
        other => {
            let kind = ViewKind::parse(other).ok_or_else(|| PyValueError::new_err(format!("unknown view {other:?}")))?;
            py.allow_threads(|| sandbox.execute_view(&msg, kind, now))
        }
    }
    .map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    let source = match view.source {
        ViewSource::Script => "script",
        ViewSource::Fallback => "fallback",
    };
    Ok((view.html, source.into()))
}

/// The twenty demo messages signed by `identity`.
#[pyfunction]
fn demo_messages(identity: &Identity, now: u64) -> PyResult<Vec<PyMessage>> {
    let msgs = oppweb_core::apps::demo_messages(&Sandbox::default(), &identity.inner, now).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    Ok(msgs.into_iter().map(|inner| PyMessage { inner }).collect())
}

/// Runs a scenario file, sweep included. One dict per sweep point with the
/// mean coverages and per-run numbers.
#[pyfunction]
fn simulate<'py>(py: Python<'py>, scenario: std::path::PathBuf) -> PyResult<Vec<Bound<'py, PyDict>>> {
    let cfg = oppweb_sim::ScenarioConfig::load(&scenario).map_err(value_err)?;
    let reports = py.allow_threads(|| oppweb_sim::run_sweep(&cfg)).map_err(value_err)?;
    let mut out = Vec::new();
    for r in &reports {
        let d = PyDict::new_bound(py);
        d.set_item("name", &r.name)?;
        d.set_item("native_coverage", r.native_coverage())?;
        d.set_item("web_coverage", r.web_coverage())?;
        d.set_item("messages", r.message_count())?;
        let runs: Vec<HashMap<&str, f64>> = r
            .runs
            .iter()
            .map(|run| {
                HashMap::from([
                    ("seed", run.seed as f64),
                    ("native_coverage", run.native_coverage.unwrap_or(f64::NAN)),
                    ("web_coverage", run.web_coverage.unwrap_or(f64::NAN)),
                    ("bytes_transferred", run.bytes_transferred as f64),
                ])
            })
            .collect();
        d.set_item("runs", runs)?;
        out.push(d);
    }
    Ok(out)
}

#[pymodule]
pub fn oppweb(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Identity>()?;
    m.add_class::<PyMessage>()?;
    m.add_class::<PyCacheStore>()?;
    m.add_function(wrap_pyfunction!(sync_pair, m)?)?;
    m.add_function(wrap_pyfunction!(render, m)?)?;
    m.add_function(wrap_pyfunction!(demo_messages, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add("DEFAULT_TTL", DEFAULT_TTL)?;
    Ok(())
}
