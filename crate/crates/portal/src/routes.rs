use std::collections::BTreeMap;
use std::convert::Infallible;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, FromRequest, Multipart, Path, Query, Request, State};
use axum::http::header::{self, HeaderMap, HeaderName, HeaderValue};
use axum::http::StatusCode;
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::response::{IntoResponse, Redirect, Response};
use axum::routing::get;
use axum::{Form, Json, Router};
use futures::stream::{self, Stream, StreamExt};
use oppweb_core::apps::{KEY_APP_TEMPLATE, KEY_TITLE};
use oppweb_core::keys::KEYS_SERVICE;
use oppweb_core::message::{KEY_DESCRIPTION, KEY_ICON};
use oppweb_core::sandbox::{urls, DraftRequest, FieldError, FieldSpec, FormValue, FormValues, SandboxError};
use oppweb_core::{ContentType, InsertOutcome, Message, MessageId, MetaValue, ScriptKind, ViewKind};
use serde_json::json;
use tokio::sync::broadcast::error::RecvError;

use crate::pages::{self, DirectoryEntry, Page};
use crate::session::Session;
use crate::{known_keys, verify_badge, Portal};

const PAGE_CSP: &str = "default-src 'self'; img-src 'self' data:; media-src 'self'; style-src 'self'; script-src 'self'; \
                        object-src 'none'; base-uri 'none'; form-action 'self'; frame-ancestors 'none'";
const PAYLOAD_CSP: &str = "default-src 'none'; img-src 'self'; media-src 'self'; sandbox";

pub fn router(portal: Portal) -> Router {
    let limit = portal.inner.config.max_upload;
    Router::new()
        .route("/", get(|| async { Redirect::to("/services") }))
        .route("/services", get(services))
        .route("/services/{name}", get(service_page))
        .route("/services/{name}/new", get(new_form).post(new_submit))
        .route("/messages/{id}", get(detail))
        .route("/messages/{id}/payload/{name}", get(payload))
        .route("/messages/{id}/raw", get(raw))
        .route("/messages/{id}/thumbnail", get(thumbnail))
        .route("/messages/{id}/reply", get(reply_form).post(reply_submit))
        .route("/events", get(events))
        .route("/apps", get(apps))
        .route("/apps/upload", get(upload_form).post(upload))
        .route("/apps/{id}/download", get(download))
        .route("/static/style.css", get(style))
        .route("/static/{file}", get(static_file))
        .layer(axum::middleware::map_response(security_headers))
        .layer(DefaultBodyLimit::max(limit))
        .with_state(portal)
}

async fn security_headers(mut res: Response) -> Response {
    let h = res.headers_mut();
    h.insert(header::X_CONTENT_TYPE_OPTIONS, HeaderValue::from_static("nosniff"));
    if !h.contains_key(header::CONTENT_SECURITY_POLICY) {
        h.insert(header::CONTENT_SECURITY_POLICY, HeaderValue::from_static(PAGE_CSP));
    }
    res
}

/// Request failures, rendered as small HTML pages.
#[derive(Debug)]
enum Failure {
    NotFound(String),
    Gone,
    BadRequest(String),
    Internal(String),
}

impl IntoResponse for Failure {
    fn into_response(self) -> Response {
        let (status, text) = match self {
            Failure::NotFound(what) => (StatusCode::NOT_FOUND, format!("{what} not found")),
            Failure::Gone => (StatusCode::GONE, "this message has expired".to_owned()),
            Failure::BadRequest(why) => (StatusCode::BAD_REQUEST, why),
            Failure::Internal(why) => (StatusCode::INTERNAL_SERVER_ERROR, why),
        };
        let page = Page { node: "oppweb", title: status.as_str(), ui_script: false };
        (status, html_headers(), page.render(&pages::error(status.as_u16(), &text))).into_response()
    }
}

type Result<T, E = Failure> = std::result::Result<T, E>;

fn html_headers() -> [(HeaderName, &'static str); 1] {
    [(header::CONTENT_TYPE, "text/html; charset=utf-8")]
}

fn wants_json(headers: &HeaderMap) -> bool {
    headers.get(header::ACCEPT).and_then(|v| v.to_str().ok()).is_some_and(|v| v.contains("application/json"))
}

fn is_template(m: &Message) -> bool {
    m.meta_text(KEY_APP_TEMPLATE) == Some("1")
}

fn icon_url(m: &Message) -> Option<String> {
    match m.meta(KEY_ICON)? {
        MetaValue::PayloadRef(name) => Some(urls::payload(&m.id(), name)),
        _ => None,
    }
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> T + Send + 'static) -> Result<T> {
    tokio::task::spawn_blocking(f).await.map_err(|e| Failure::Internal(e.to_string()))
}

impl Portal {
    fn page(&self, title: &str, body: &str) -> String {
        let ui = self.inner.config.static_dir.as_ref().is_some_and(|d| d.join("app.js").is_file());
        Page { node: &self.inner.config.node_name, title, ui_script: ui }.render(body)
    }

    fn respond(&self, session: &Session, status: StatusCode, title: &str, body: &str) -> Response {
        let mut res = (status, html_headers(), self.page(title, body)).into_response();
        session.apply(res.headers_mut());
        res
    }

    fn live_service(&self, service: &str) -> Vec<Arc<Message>> {
        let now = self.now();
        self.inner.cache.service_messages(service).into_iter().filter(|m| !m.is_expired(now)).collect()
    }

    fn lookup(&self, id: &str) -> Result<Arc<Message>> {
        let id: MessageId = id.parse().map_err(|_| Failure::NotFound("message".into()))?;
        match self.inner.cache.get(&id) {
            Ok(m) if m.is_expired(self.now()) => Err(Failure::Gone),
            Ok(m) => Ok(m),
            Err(_) if self.inner.gone.lock().contains(&id) => Err(Failure::Gone),
            Err(_) => Err(Failure::NotFound("message".into())),
        }
    }
}

async fn services(State(p): State<Portal>, headers: HeaderMap) -> Response {
    let mut entries = Vec::new();
    for (name, _) in p.inner.cache.services() {
        if name == KEYS_SERVICE {
            continue;
        }
        let msgs = p.live_service(&name);
        let Some(newest) = msgs.last() else { continue };
        let anchor = msgs.iter().rev().find(|m| is_template(m)).unwrap_or(newest);
        entries.push(DirectoryEntry {
            title: anchor.meta_text(KEY_TITLE).unwrap_or(&name).to_owned(),
            description: anchor.meta_text(KEY_DESCRIPTION).map(str::to_owned),
            icon_url: msgs.iter().rev().find_map(|m| icon_url(m)),
            count: msgs.iter().filter(|m| !is_template(m)).count(),
            url: urls::service(&name),
            name,
        });
    }
    if wants_json(&headers) {
        let list: Vec<_> = entries
            .iter()
            .map(|e| json!({"name": e.name, "title": e.title, "description": e.description, "icon": e.icon_url, "count": e.count, "url": e.url}))
            .collect();
        return Json(list).into_response();
    }
    let session = Session::from_headers(&headers);
    p.respond(&session, StatusCode::OK, "Services", &pages::directory(&entries))
}

async fn service_page(
    State(p): State<Portal>,
    Path(name): Path<String>,
    Query(params): Query<BTreeMap<String, String>>,
    headers: HeaderMap,
) -> Result<Response> {
    let msgs = p.live_service(&name);
    if msgs.is_empty() {
        return Err(Failure::NotFound(format!("service {name:?}")));
    }
    let session = Session::from_headers(&headers);
    let state = p.inner.states.get(&session.token, &name);
    let (sandbox, now, service) = (p.inner.sandbox.clone(), p.now(), name.clone());
    let can_post = msgs.iter().any(|m| m.script(ScriptKind::New).is_some());
    let (view, err) = blocking(move || sandbox.app_summary_or_fallback(&service, &msgs, &state, &params, now)).await?;
    if let Some(err) = err {
        tracing::debug!(service = %name, error = %err, "presenter fell back");
    }
    let html = pages::fragment(&view.html);
    if wants_json(&headers) {
        let mut res = Json(json!({"service": name, "html": html, "source": view.source})).into_response();
        session.apply(res.headers_mut());
        return Ok(res);
    }
    let actions = if can_post {
        format!("<p class=\"actions\"><a class=\"new\" href=\"{}/new\">New</a></p>", urls::service(&name))
    } else {
        String::new()
    };
    let body = format!(
        "<section class=\"service\" data-service=\"{}\">{actions}<div id=\"app-summary\">{html}</div></section>",
        pages::escape(&name)
    );
    Ok(p.respond(&session, StatusCode::OK, &name, &body))
}

async fn detail(State(p): State<Portal>, Path(id): Path<String>, headers: HeaderMap) -> Result<Response> {
    let msg = p.lookup(&id)?;
    let id = msg.id();
    let view = match p.inner.cache.view(&id, ViewKind::Presentation) {
        Some(v) => v,
        None => {
            let (sandbox, now, m) = (p.inner.sandbox.clone(), p.now(), msg.clone());
            let (v, _) = blocking(move || sandbox.view_or_fallback(&m, ViewKind::Presentation, now)).await?;
            // the message may have been swept meanwhile; then the view is simply not kept
            let _ = p.inner.cache.put_view(id, v.clone());
            v
        }
    };
    let badge = verify_badge(&msg, &known_keys(&p.inner.cache));
    let html = pages::fragment(&view.html);
    let session = Session::from_headers(&headers);
    if wants_json(&headers) {
        let mut res = Json(json!({
            "id": id,
            "service": msg.service(),
            "badge": badge,
            "html": html,
            "source": view.source,
            "reply": msg.script(ScriptKind::Reply).is_some().then(|| urls::reply(&id)),
        }))
        .into_response();
        session.apply(res.headers_mut());
        return Ok(res);
    }
    let mut links = String::new();
    if msg.script(ScriptKind::Reply).is_some() {
        links.push_str(&format!("<a class=\"reply\" href=\"{}\">Reply</a>", urls::reply(&id)));
    }
    for entry in msg.payload() {
        links.push_str(&format!(
            "<a class=\"payload\" href=\"{}\">{}</a>",
            urls::payload(&id, &entry.name),
            pages::escape(&entry.name)
        ));
    }
    links.push_str(&format!("<a class=\"raw\" href=\"/messages/{id}/raw\">raw</a>"));
    let body = format!(
        "<article class=\"detail\" data-id=\"{id}\" data-service=\"{service}\">\
         <p class=\"meta\"><span class=\"badge badge-{b}\">{b}</span> \
         <a href=\"{surl}\">{service}</a></p>\
         <div id=\"presentation\">{html}</div><p class=\"actions\">{links}</p></article>",
        b = badge.as_str(),
        service = pages::escape(msg.service()),
        surl = urls::service(msg.service()),
    );
    Ok(p.respond(&session, StatusCode::OK, msg.service(), &body))
}

/// Media type for a payload. Types a browser could execute are served as
/// opaque downloads.
fn payload_type(msg: &Message, name: &str) -> (String, bool) {
    let filename = msg.meta_text("filename");
    let guessed = [Some(name), filename].into_iter().flatten().find_map(|n| mime_guess::from_path(n).first());
    let mime = match guessed {
        Some(m) => m.essence_str().to_owned(),
        None if msg.content_type() == ContentType::Text => "text/plain".to_owned(),
        None => "application/octet-stream".to_owned(),
    };
    let active = matches!(mime.as_str(), "text/html" | "application/xhtml+xml" | "image/svg+xml" | "text/javascript" | "application/javascript" | "text/xml" | "application/xml");
    if active {
        ("application/octet-stream".into(), true)
    } else if mime.starts_with("text/") {
        (format!("{mime}; charset=utf-8"), false)
    } else {
        (mime, false)
    }
}

fn attachment(name: &str) -> String {
    let safe: String = name.chars().filter(|c| c.is_ascii_graphic() && *c != '"' && *c != '\\').collect();
    format!("attachment; filename=\"{}\"", if safe.is_empty() { "download" } else { &safe })
}

async fn payload(State(p): State<Portal>, Path((id, name)): Path<(String, String)>) -> Result<Response> {
    let msg = p.lookup(&id)?;
    let data = msg.payload_data(&name).ok_or_else(|| Failure::NotFound(format!("payload {name:?}")))?;
    let (mime, download) = payload_type(&msg, &name);
    let mut res = (
        [(header::CONTENT_TYPE, mime), (header::CONTENT_SECURITY_POLICY, PAYLOAD_CSP.to_owned())],
        data.to_vec(),
    )
        .into_response();
    if download {
        res.headers_mut().insert(header::CONTENT_DISPOSITION, HeaderValue::from_str(&attachment(&name)).expect("ascii"));
    }
    Ok(res)
}

async fn raw(State(p): State<Portal>, Path(id): Path<String>) -> Result<Response> {
    let msg = p.lookup(&id)?;
    Ok((
        [
            (header::CONTENT_TYPE, "application/octet-stream".to_owned()),
            (header::CONTENT_DISPOSITION, attachment(&format!("{}.owm", msg.id()))),
        ],
        msg.encode_canonical(),
    )
        .into_response())
}

async fn thumbnail(State(p): State<Portal>, Path(id): Path<String>) -> Result<Response> {
    let msg = p.lookup(&id)?;
    let png = p.inner.cache.thumbnail(&msg.id()).ok_or_else(|| Failure::NotFound("thumbnail".into()))?;
    Ok(([(header::CONTENT_TYPE, "image/png")], png.as_ref().clone()).into_response())
}

/// Text values of a submitted form, used to refill it.
fn refill(form: &FormValues) -> impl Fn(&str) -> Option<String> + '_ {
    move |name| match form.get(name) {
        Some(FormValue::Text(t)) => Some(t.clone()),
        _ => None,
    }
}

async fn read_form(req: Request) -> Result<FormValues> {
    let multipart = req
        .headers()
        .get(header::CONTENT_TYPE)
        .and_then(|v| v.to_str().ok())
        .is_some_and(|v| v.starts_with("multipart/form-data"));
    let mut out = FormValues::new();
    if multipart {
        let mut mp = Multipart::from_request(req, &()).await.map_err(|e| Failure::BadRequest(e.body_text()))?;
        while let Some(field) = mp.next_field().await.map_err(|e| Failure::BadRequest(e.body_text()))? {
            let Some(name) = field.name().map(str::to_owned) else { continue };
            let filename = field.file_name().map(str::to_owned);
            let data: Bytes = field.bytes().await.map_err(|e| Failure::BadRequest(e.body_text()))?;
            let value = match filename {
                Some(filename) => FormValue::File { filename, data: data.to_vec() },
                None => FormValue::Text(String::from_utf8_lossy(&data).into_owned()),
            };
            out.insert(name, value);
        }
    } else {
        let Form(pairs): Form<Vec<(String, String)>> =
            Form::from_request(req, &()).await.map_err(|e| Failure::BadRequest(e.body_text()))?;
        for (k, v) in pairs {
            out.insert(k, FormValue::Text(v));
        }
    }
    Ok(out)
}

/// Newest message of the service carrying a `new` script.
fn new_source(msgs: &[Arc<Message>]) -> Option<Arc<Message>> {
    msgs.iter().filter(|m| m.script(ScriptKind::New).is_some()).max_by_key(|m| (m.created_at(), m.id())).cloned()
}

enum DraftKind {
    New(String),
    Reply(Arc<Message>),
}

impl DraftKind {
    fn script(&self) -> ScriptKind {
        match self {
            DraftKind::New(_) => ScriptKind::New,
            DraftKind::Reply(_) => ScriptKind::Reply,
        }
    }

    fn action(&self) -> String {
        match self {
            DraftKind::New(service) => format!("{}/new", urls::service(service)),
            DraftKind::Reply(parent) => urls::reply(&parent.id()),
        }
    }

    fn heading(&self) -> String {
        match self {
            DraftKind::New(service) => format!("New in {service}"),
            DraftKind::Reply(parent) => format!("Reply in {}", parent.service()),
        }
    }

    /// The message whose script runs, plus the service's live messages.
    fn resolve(&self, p: &Portal) -> Result<(Arc<Message>, Vec<Arc<Message>>)> {
        match self {
            DraftKind::New(service) => {
                let msgs = p.live_service(service);
                let source = new_source(&msgs).ok_or_else(|| Failure::NotFound(format!("a form for {service:?}")))?;
                Ok((source, msgs))
            }
            DraftKind::Reply(parent) => {
                if parent.script(ScriptKind::Reply).is_none() {
                    return Err(Failure::NotFound("a reply form for this message".into()));
                }
                Ok((parent.clone(), p.live_service(parent.service())))
            }
        }
    }
}

async fn describe(p: &Portal, kind: &DraftKind) -> Result<Vec<FieldSpec>> {
    let (source, msgs) = kind.resolve(p)?;
    let (sandbox, now, script) = (p.inner.sandbox.clone(), p.now(), kind.script());
    blocking(move || sandbox.describe_form(script, &source, &msgs, now))
        .await?
        .map_err(|e| Failure::Internal(format!("the form script failed: {e}")))
}

async fn show_form(p: Portal, kind: DraftKind, headers: HeaderMap) -> Result<Response> {
    let fields = describe(&p, &kind).await?;
    let session = Session::from_headers(&headers);
    let body = pages::form(&kind.action(), &kind.heading(), &fields, &[], &|_| None);
    Ok(p.respond(&session, StatusCode::OK, &kind.heading(), &body))
}

/// Builds, signs and inserts a draft. Either the complete message enters the
/// cache or nothing does.
async fn submit(p: Portal, kind: DraftKind, req: Request) -> Result<Response> {
    let session = Session::from_headers(req.headers());
    let form = read_form(req).await?;
    let (source, msgs) = kind.resolve(&p)?;
    let (inner, script) = (p.inner.clone(), kind.script());
    let now = p.now();
    let form_copy = form.clone();
    let result = blocking(move || {
        let req = DraftRequest {
            source: &source,
            service_messages: &msgs,
            form: &form_copy,
            identity: &inner.identity,
            now,
            ttl: inner.config.ttl,
        };
        let draft = match script {
            ScriptKind::New => inner.sandbox.execute_new(req),
            _ => inner.sandbox.execute_reply(req),
        }?;
        let id = draft.id();
        match inner.cache.insert(draft, now) {
            Ok(InsertOutcome::New | InsertOutcome::Duplicate) => Ok(id),
            Ok(outcome) => Err(SandboxError::InvalidDraft(format!("the cache refused the message ({outcome:?})"))),
            Err(e) => Err(SandboxError::InvalidDraft(e.to_string())),
        }
    })
    .await?;
    let errors = match result {
        Ok(id) => {
            let mut res = Redirect::to(&urls::detail(&id)).into_response();
            session.apply(res.headers_mut());
            return Ok(res);
        }
        Err(SandboxError::Validation(errors)) => errors,
        Err(SandboxError::InvalidDraft(why)) => vec![FieldError { field: String::new(), message: why }],
        Err(e) => return Err(Failure::Internal(format!("the form script failed: {e}"))),
    };
    let fields = describe(&p, &kind).await?;
    let body = pages::form(&kind.action(), &kind.heading(), &fields, &errors, &refill(&form));
    Ok(p.respond(&session, StatusCode::UNPROCESSABLE_ENTITY, &kind.heading(), &body))
}

async fn new_form(State(p): State<Portal>, Path(name): Path<String>, headers: HeaderMap) -> Result<Response> {
    show_form(p, DraftKind::New(name), headers).await
}

async fn new_submit(State(p): State<Portal>, Path(name): Path<String>, req: Request) -> Result<Response> {
    submit(p, DraftKind::New(name), req).await
}

async fn reply_form(State(p): State<Portal>, Path(id): Path<String>, headers: HeaderMap) -> Result<Response> {
    let parent = p.lookup(&id)?;
    show_form(p, DraftKind::Reply(parent), headers).await
}

async fn reply_submit(State(p): State<Portal>, Path(id): Path<String>, req: Request) -> Result<Response> {
    let parent = p.lookup(&id)?;
    submit(p, DraftKind::Reply(parent), req).await
}

async fn events(State(p): State<Portal>) -> Sse<impl Stream<Item = Result<Event, Infallible>>> {
    let rx = p.subscribe();
    let ready = stream::once(async { Ok(Event::default().event("ready").data("")) });
    let updates = stream::unfold(Some(rx), |rx| async move {
        let mut rx = rx?;
        match rx.recv().await {
            Ok(ev) => {
                let data = serde_json::to_string(&ev).expect("event serializes");
                Some((Ok(Event::default().event(ev.kind.as_str()).id(ev.seq.to_string()).data(data)), Some(rx)))
            }
            Err(RecvError::Lagged(n)) => Some((Ok(Event::default().event("dropped").data(format!("{n} updates missed"))), None)),
            Err(RecvError::Closed) => None,
        }
    });
    Sse::new(ready.chain(updates)).keep_alive(KeepAlive::default())
}

fn app_payload(msg: &Message) -> Option<&oppweb_core::PayloadEntry> {
    let icon = match msg.meta(KEY_ICON) {
        Some(MetaValue::PayloadRef(n)) => Some(n.as_str()),
        _ => None,
    };
    msg.payload().iter().find(|e| Some(e.name.as_str()) != icon)
}

async fn apps(State(p): State<Portal>, headers: HeaderMap) -> Response {
    let now = p.now();
    let mut list: Vec<Arc<Message>> = p
        .inner
        .cache
        .messages()
        .into_iter()
        .filter(|m| m.content_type() == ContentType::App && !m.is_expired(now) && app_payload(m).is_some())
        .collect();
    list.sort_by_key(|m| std::cmp::Reverse((m.created_at(), m.id())));
    if wants_json(&headers) {
        let items: Vec<_> = list
            .iter()
            .map(|m| {
                let file = app_payload(m).expect("filtered");
                json!({
                    "id": m.id(),
                    "service": m.service(),
                    "title": m.meta_text(KEY_TITLE),
                    "description": m.meta_text(KEY_DESCRIPTION),
                    "filename": m.meta_text("filename").unwrap_or(&file.name),
                    "size": file.data.len(),
                    "download": format!("/apps/{}/download", m.id()),
                })
            })
            .collect();
        return Json(items).into_response();
    }
    let mut body = String::from("<h1>Apps</h1><p><a href=\"/apps/upload\">Upload an app</a></p>");
    if list.is_empty() {
        body.push_str("<p class=\"empty\">No applications are available here.</p>");
    } else {
        body.push_str("<ul class=\"apps\">");
        for m in &list {
            let file = app_payload(m).expect("filtered");
            let title = m.meta_text(KEY_TITLE).or(m.meta_text("filename")).unwrap_or(&file.name);
            body.push_str(&format!(
                "<li><a class=\"download\" href=\"/apps/{id}/download\">{}</a> <span class=\"count\">{} bytes</span>",
                pages::escape(title),
                file.data.len(),
                id = m.id()
            ));
            if let Some(d) = m.meta_text(KEY_DESCRIPTION) {
                body.push_str(&format!("<p class=\"description\">{}</p>", pages::escape(d)));
            }
            body.push_str(&format!("<a href=\"{}\">details</a></li>", urls::detail(&m.id())));
        }
        body.push_str("</ul>");
    }
    let session = Session::from_headers(&headers);
    p.respond(&session, StatusCode::OK, "Apps", &body)
}

async fn download(State(p): State<Portal>, Path(id): Path<String>) -> Result<Response> {
    let msg = p.lookup(&id)?;
    if msg.content_type() != ContentType::App {
        return Err(Failure::NotFound("application".into()));
    }
    let file = app_payload(&msg).ok_or_else(|| Failure::NotFound("application payload".into()))?;
    let name = msg.meta_text("filename").unwrap_or(&file.name);
    Ok((
        [
            (header::CONTENT_TYPE, "application/octet-stream".to_owned()),
            (header::CONTENT_DISPOSITION, attachment(name)),
            (header::CONTENT_SECURITY_POLICY, PAYLOAD_CSP.to_owned()),
        ],
        file.data.clone(),
    )
        .into_response())
}

fn upload_fields() -> Vec<FieldSpec> {
    use oppweb_core::sandbox::FieldType::*;
    let field = |name: &str, label: &str, field_type, required| FieldSpec {
        name: name.into(),
        label: label.into(),
        field_type,
        required,
        value: String::new(),
    };
    vec![
        field("service", "Service", Text, true),
        field("title", "Title", Text, false),
        field("description", "Description", Textarea, false),
        field("file", "Application file", File, true),
        field("summary", "Summary script", Textarea, false),
        field("presentation", "Presentation script", Textarea, false),
    ]
}

async fn upload_form(State(p): State<Portal>, headers: HeaderMap) -> Response {
    let session = Session::from_headers(&headers);
    let body = pages::form("/apps/upload", "Upload an app", &upload_fields(), &[], &|_| None);
    p.respond(&session, StatusCode::OK, "Upload", &body)
}

fn build_upload(p: &Portal, form: &FormValues) -> Result<Message, Vec<FieldError>> {
    let text = |k: &str| match form.get(k) {
        Some(FormValue::Text(t)) if !t.trim().is_empty() => Some(t.trim().to_owned()),
        _ => None,
    };
    let mut errors = Vec::new();
    let service = text("service");
    match service.as_deref() {
        None => errors.push(FieldError { field: "service".into(), message: "Service is required".into() }),
        Some(KEYS_SERVICE) => errors.push(FieldError { field: "service".into(), message: "that service is reserved".into() }),
        _ => {}
    }
    let file = match form.get("file") {
        Some(FormValue::File { filename, data }) if !data.is_empty() => Some((filename.clone(), data.clone())),
        _ => {
            errors.push(FieldError { field: "file".into(), message: "Application file is required".into() });
            None
        }
    };
    let (Some(service), Some((filename, data)), true) = (service, file, errors.is_empty()) else {
        return Err(errors);
    };
    let payload_name = filename.rsplit(['/', '\\']).next().filter(|n| !n.is_empty()).unwrap_or("app.bin").to_owned();
    let now = p.now();
    let mut b = Message::builder(service)
        .originator(p.inner.identity.fingerprint())
        .created_at(now)
        .ttl(p.inner.config.ttl)
        .meta("contentType", "app")
        .meta("filename", payload_name.clone())
        .payload(payload_name, data);
    for (key, meta) in [("title", KEY_TITLE), ("description", KEY_DESCRIPTION)] {
        if let Some(v) = text(key) {
            b = b.meta(meta, v);
        }
    }
    for (key, kind) in [("summary", ScriptKind::Summary), ("presentation", ScriptKind::Presentation)] {
        if let Some(src) = text(key) {
            b = b.script(kind, src);
        }
    }
    let msg = b.build().map_err(|e| vec![FieldError { field: String::new(), message: e.to_string() }])?;
    Ok(p.inner.identity.sign(&msg))
}

async fn upload(State(p): State<Portal>, req: Request) -> Result<Response> {
    let session = Session::from_headers(req.headers());
    let form = read_form(req).await?;
    let errors = match build_upload(&p, &form) {
        Ok(msg) => {
            let id = msg.id();
            match p.inner.cache.insert(msg, p.now()) {
                Ok(InsertOutcome::New | InsertOutcome::Duplicate) => {
                    let mut res = Redirect::to(&urls::detail(&id)).into_response();
                    session.apply(res.headers_mut());
                    return Ok(res);
                }
                Ok(outcome) => vec![FieldError { field: String::new(), message: format!("the cache refused the message ({outcome:?})") }],
                Err(e) => return Err(Failure::Internal(e.to_string())),
            }
        }
        Err(errors) => errors,
    };
    let body = pages::form("/apps/upload", "Upload an app", &upload_fields(), &errors, &refill(&form));
    Ok(p.respond(&session, StatusCode::UNPROCESSABLE_ENTITY, "Upload", &body))
}

async fn style() -> Response {
    ([(header::CONTENT_TYPE, "text/css; charset=utf-8")], pages::STYLE).into_response()
}

async fn static_file(State(p): State<Portal>, Path(file): Path<String>) -> Result<Response> {
    let missing = || Failure::NotFound(format!("/static/{file}"));
    let dir = p.inner.config.static_dir.as_ref().ok_or_else(missing)?;
    if file.starts_with('.') || file.contains(['/', '\\']) {
        return Err(missing());
    }
    let data = tokio::fs::read(dir.join(&file)).await.map_err(|_| missing())?;
    let mime = mime_guess::from_path(&file).first_or_octet_stream();
    Ok(([(header::CONTENT_TYPE, mime.essence_str().to_owned())], data).into_response())
}
