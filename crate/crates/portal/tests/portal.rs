use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Duration;

use axum::body::Body;
use axum::http::{header, Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use oppweb_core::apps::{demo_messages, KEY_APP_TEMPLATE};
use oppweb_core::keys::verify_message;
use oppweb_core::sandbox::Sandbox;
use oppweb_core::sync::{run_local_pair, SessionConfig};
use oppweb_core::{CacheStore, Identity, Message, MessageId, ScriptKind, VerifyOutcome};
use oppweb_portal::{known_keys, Portal, PortalConfig, SESSION_COOKIE};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::Value;
use tower::ServiceExt;

const NOW: u64 = 1_700_000_000;

struct Node {
    portal: Portal,
    app: Router,
    clock: Arc<AtomicU64>,
}

fn identity(seed: u64) -> Identity {
    Identity::generate(&mut ChaCha8Rng::seed_from_u64(seed))
}

fn node_with(config: PortalConfig) -> Node {
    let clock = Arc::new(AtomicU64::new(NOW));
    let c = clock.clone();
    let portal = Portal::with_clock(CacheStore::in_memory(), identity(1), config, Arc::new(move || c.load(Ordering::SeqCst))).unwrap();
    Node { app: portal.router(), portal, clock }
}

fn node() -> Node {
    node_with(PortalConfig::default())
}

/// A node holding the demo set, authored by the node's own key.
fn demo_node() -> (Node, Vec<Arc<Message>>) {
    let n = node();
    let msgs = demo_messages(&Sandbox::default(), n.portal.identity(), NOW - 100).unwrap();
    for m in &msgs {
        n.portal.cache().insert((**m).clone(), NOW).unwrap();
    }
    (n, msgs)
}

struct Reply {
    status: StatusCode,
    headers: axum::http::HeaderMap,
    body: Vec<u8>,
}

impl Reply {
    fn text(&self) -> String {
        String::from_utf8_lossy(&self.body).into_owned()
    }

    fn json(&self) -> Value {
        serde_json::from_slice(&self.body).unwrap()
    }

    fn header(&self, name: header::HeaderName) -> &str {
        self.headers.get(name).map(|v| v.to_str().unwrap()).unwrap_or("")
    }
}

async fn send(app: &Router, req: Request<Body>) -> Reply {
    let res = app.clone().oneshot(req).await.unwrap();
    let status = res.status();
    let headers = res.headers().clone();
    let body = res.into_body().collect().await.unwrap().to_bytes().to_vec();
    Reply { status, headers, body }
}

async fn get(app: &Router, uri: &str) -> Reply {
    send(app, Request::get(uri).body(Body::empty()).unwrap()).await
}

async fn get_json(app: &Router, uri: &str) -> Reply {
    send(app, Request::get(uri).header(header::ACCEPT, "application/json").body(Body::empty()).unwrap()).await
}

enum Part<'a> {
    Text(&'a str),
    File(&'a str, Vec<u8>),
}

async fn post(app: &Router, uri: &str, parts: &[(&str, Part<'_>)]) -> Reply {
    let boundary = "----oppweb-test-boundary";
    let mut body = Vec::new();
    for (name, part) in parts {
        body.extend_from_slice(format!("--{boundary}\r\n").as_bytes());
        match part {
            Part::Text(v) => {
                body.extend_from_slice(format!("Content-Disposition: form-data; name=\"{name}\"\r\n\r\n{v}\r\n").as_bytes());
            }
            Part::File(filename, data) => {
                body.extend_from_slice(
                    format!(
                        "Content-Disposition: form-data; name=\"{name}\"; filename=\"{filename}\"\r\n\
                         Content-Type: application/octet-stream\r\n\r\n"
                    )
                    .as_bytes(),
                );
                body.extend_from_slice(data);
                body.extend_from_slice(b"\r\n");
            }
        }
    }
    body.extend_from_slice(format!("--{boundary}--\r\n").as_bytes());
    let req = Request::post(uri)
        .header(header::CONTENT_TYPE, format!("multipart/form-data; boundary={boundary}"))
        .body(Body::from(body))
        .unwrap();
    send(app, req).await
}

fn redirect_id(r: &Reply) -> MessageId {
    assert_eq!(r.status, StatusCode::SEE_OTHER, "{}", r.text());
    r.header(header::LOCATION).strip_prefix("/messages/").unwrap().parse().unwrap()
}

#[tokio::test]
async fn empty_node_has_no_services() {
    let n = node();
    let r = get_json(&n.app, "/services").await;
    assert_eq!(r.status, StatusCode::OK);
    assert_eq!(r.json(), serde_json::json!([]));
    let page = get(&n.app, "/services").await;
    assert!(page.text().contains("Nothing has arrived here yet"));
}

#[tokio::test]
async fn directory_counts_match_the_fixture_set() {
    let (n, msgs) = demo_node();
    // independent count: non-template messages per service, key records aside
    let mut expected: BTreeMap<String, u64> = BTreeMap::new();
    for m in &msgs {
        if m.service() != "keys" && m.meta_text(KEY_APP_TEMPLATE).is_none() {
            *expected.entry(m.service().to_owned()).or_default() += 1;
        }
    }
    assert_eq!(expected.values().sum::<u64>(), 16);
    let list = get_json(&n.app, "/services").await.json();
    let got: BTreeMap<String, u64> =
        list.as_array().unwrap().iter().map(|e| (e["name"].as_str().unwrap().to_owned(), e["count"].as_u64().unwrap())).collect();
    assert_eq!(got, expected);
    for entry in list.as_array().unwrap() {
        let icon = entry["icon"].as_str().expect("bundles ship an icon");
        let r = get(&n.app, icon).await;
        assert_eq!(r.status, StatusCode::OK);
        assert_eq!(r.header(header::CONTENT_TYPE), "image/png");
    }
}

#[tokio::test]
async fn service_page_embeds_the_presenter_view() {
    let (n, _) = demo_node();
    let r = get(&n.app, "/services/board").await;
    assert_eq!(r.status, StatusCode::OK);
    let html = r.text();
    assert!(html.contains("id=\"app-summary\""));
    assert!(html.contains("news") && html.contains("lost") && html.contains("help"), "{html}");
    assert!(html.contains("/services/board/new"));
    assert_eq!(get(&n.app, "/services/nothing-here").await.status, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn photo_detail_links_the_full_resolution_payload() {
    let (n, msgs) = demo_node();
    let photo = msgs.iter().find(|m| m.service() == "photos" && m.payload_data("photo").is_some()).unwrap();
    let r = get(&n.app, &format!("/messages/{}", photo.id())).await;
    assert_eq!(r.status, StatusCode::OK);
    let payload_url = format!("/messages/{}/payload/photo", photo.id());
    assert!(r.text().contains(&payload_url));
    assert!(r.text().contains("badge-verified"));

    let p = get(&n.app, &payload_url).await;
    assert_eq!(p.body, photo.payload_data("photo").unwrap());
    assert_eq!(p.header(header::CONTENT_TYPE), "image/png");
    assert_eq!(p.header(header::X_CONTENT_TYPE_OPTIONS), "nosniff");
    assert!(p.header(header::CONTENT_SECURITY_POLICY).contains("sandbox"));
}

#[tokio::test]
async fn raw_bytes_decode_to_the_same_message() {
    let (n, msgs) = demo_node();
    for m in &msgs {
        let r = get(&n.app, &format!("/messages/{}/raw", m.id())).await;
        assert_eq!(r.status, StatusCode::OK);
        let back = Message::decode(&r.body).unwrap();
        assert_eq!(back, **m);
    }
}

#[tokio::test]
async fn unknown_and_expired_messages() {
    let (n, msgs) = demo_node();
    let missing = "0".repeat(64);
    assert_eq!(get(&n.app, &format!("/messages/{missing}")).await.status, StatusCode::NOT_FOUND);
    assert_eq!(get(&n.app, "/messages/not-an-id").await.status, StatusCode::NOT_FOUND);

    let id = msgs[1].id();
    n.clock.store(msgs[1].expires_at() + 1, Ordering::SeqCst);
    assert_eq!(get(&n.app, &format!("/messages/{id}")).await.status, StatusCode::GONE);
    // still 410 after the sweep removed it
    n.portal.cache().expire_sweep(msgs[1].expires_at() + 1).unwrap();
    tokio::time::sleep(Duration::from_millis(400)).await;
    assert!(!n.portal.cache().contains(&id));
    assert_eq!(get(&n.app, &format!("/messages/{id}")).await.status, StatusCode::GONE);
}

#[tokio::test]
async fn thumbnails_are_served_once_rendered() {
    let (n, msgs) = demo_node();
    let photo = msgs.iter().find(|m| m.payload_data("photo").is_some()).unwrap();
    assert_eq!(get(&n.app, &format!("/messages/{}/thumbnail", photo.id())).await.status, StatusCode::NOT_FOUND);
    oppweb_core::sandbox::render_message_views(n.portal.cache(), &Sandbox::default(), &photo.id(), NOW).unwrap();
    let r = get(&n.app, &format!("/messages/{}/thumbnail", photo.id())).await;
    assert_eq!(r.status, StatusCode::OK);
    assert_eq!(r.header(header::CONTENT_TYPE), "image/png");
}

#[tokio::test]
async fn board_post_appears_on_the_landing_page() {
    let (n, _) = demo_node();
    let form = get(&n.app, "/services/board/new").await;
    assert_eq!(form.status, StatusCode::OK);
    assert!(form.text().contains("name=\"body\""));

    let mut events = n.portal.subscribe();
    let r = post(&n.app, "/services/board/new", &[("topic", Part::Text("market")), ("body", Part::Text("Fresh bread at noon")), ("nick", Part::Text("gus"))]).await;
    let id = redirect_id(&r);
    let msg = n.portal.cache().get(&id).unwrap();
    assert_eq!(msg.service(), "board");
    assert_eq!(verify_message(&msg, &known_keys(n.portal.cache())), VerifyOutcome::Verified);

    let ev = tokio::time::timeout(Duration::from_secs(2), events.recv()).await.unwrap().unwrap();
    assert_eq!(ev.id, id);
    assert_eq!(ev.service, "board");

    let landing = get(&n.app, "/services/board").await.text();
    assert!(landing.contains("market"), "{landing}");
    let detail = get(&n.app, &format!("/messages/{id}")).await.text();
    assert!(detail.contains("Fresh bread at noon"));
}

#[tokio::test]
async fn invalid_form_changes_nothing() {
    let (n, _) = demo_node();
    let before = n.portal.cache().state_digest();
    let r = post(&n.app, "/services/board/new", &[("topic", Part::Text("market")), ("body", Part::Text("  "))]).await;
    assert_eq!(r.status, StatusCode::UNPROCESSABLE_ENTITY);
    let html = r.text();
    assert!(html.contains("class=\"error\""), "{html}");
    // text the user typed is kept
    assert!(html.contains("value=\"market\""));
    assert_eq!(n.portal.cache().state_digest(), before);
}

#[tokio::test]
async fn unknown_service_has_no_form() {
    let (n, _) = demo_node();
    assert_eq!(get(&n.app, "/services/nope/new").await.status, StatusCode::NOT_FOUND);
    let r = post(&n.app, "/services/nope/new", &[("body", Part::Text("x"))]).await;
    assert_eq!(r.status, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn peoplefinder_reply_through_the_portal_carries_every_note() {
    let (n, msgs) = demo_node();
    // the newest aggregate of Maria's record already has two notes
    let last = msgs.iter().filter(|m| m.service() == "peoplefinder").max_by_key(|m| m.created_at()).unwrap();
    let form = get(&n.app, &format!("/messages/{}/reply", last.id())).await;
    assert!(form.text().contains("name=\"note\""));
    n.clock.store(NOW + 5, Ordering::SeqCst);
    let r = post(&n.app, &format!("/messages/{}/reply", last.id()), &[("note", Part::Text("Reunited with family.")), ("author", Part::Text("desk"))]).await;
    let id = redirect_id(&r);
    let agg = n.portal.cache().get(&id).unwrap();
    let notes: Vec<String> = std::str::from_utf8(agg.payload_data("notes.txt").unwrap())
        .unwrap()
        .lines()
        .map(|l| l.splitn(3, '|').nth(2).unwrap().to_owned())
        .collect();
    assert_eq!(notes, ["Seen at the clinic.", "Moved to the east shelter.", "Reunited with family."]);
    assert_eq!(agg.meta_text("record"), last.meta_text("record"));
}

#[tokio::test]
async fn messages_without_reply_script_have_no_reply_form() {
    let (n, msgs) = demo_node();
    let photo = msgs.iter().find(|m| m.service() == "photos").unwrap();
    assert!(photo.script(ScriptKind::Reply).is_none());
    assert_eq!(get(&n.app, &format!("/messages/{}/reply", photo.id())).await.status, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn app_upload_download_roundtrip() {
    let n = node();
    let blob: Vec<u8> = (0..1_048_576u32).map(|i| (i % 251) as u8).collect();
    let r = post(
        &n.app,
        "/apps/upload",
        &[
            ("service", Part::Text("tools")),
            ("title", Part::Text("Mesh chat")),
            ("description", Part::Text("Android build")),
            ("file", Part::File("meshchat.apk", blob.clone())),
        ],
    )
    .await;
    let id = redirect_id(&r);
    let msg = n.portal.cache().get(&id).unwrap();
    assert_eq!(msg.service(), "tools");
    assert_eq!(msg.meta_text("contentType"), Some("app"));

    let list = get_json(&n.app, "/apps").await.json();
    assert_eq!(list[0]["id"], id.to_string());
    assert_eq!(list[0]["filename"], "meshchat.apk");
    let page = get(&n.app, "/apps").await.text();
    assert!(page.contains(&format!("/apps/{id}/download")));

    let d = get(&n.app, &format!("/apps/{id}/download")).await;
    assert_eq!(d.status, StatusCode::OK);
    assert_eq!(d.body, blob);
    assert!(d.header(header::CONTENT_DISPOSITION).contains("meshchat.apk"));

    // the fallback summary of an app is a download link
    let detail = get(&n.app, &format!("/messages/{id}")).await.text();
    assert!(detail.contains("download"));
}

#[tokio::test]
async fn upload_without_a_file_is_rejected() {
    let n = node();
    let before = n.portal.cache().state_digest();
    let r = post(&n.app, "/apps/upload", &[("service", Part::Text("tools"))]).await;
    assert_eq!(r.status, StatusCode::UNPROCESSABLE_ENTITY);
    assert!(r.text().contains("Application file is required"));
    assert_eq!(n.portal.cache().state_digest(), before);
    assert_eq!(get(&n.app, "/apps/00/download").await.status, StatusCode::NOT_FOUND);
}

fn stored(n: &Node, service: &str, summary: &str, presentation: &str, signer: Option<&Identity>) -> MessageId {
    let author = signer.map(|i| i.fingerprint()).unwrap_or_else(|| "nobody".into());
    let m = Message::builder(service)
        .originator(author)
        .created_at(NOW)
        .meta("contentType", "text")
        .meta("description", "<script>alert('d')</script>caption")
        .script(ScriptKind::Summary, summary)
        .script(ScriptKind::Presentation, presentation)
        .payload("body.txt", b"hello".to_vec())
        .build()
        .unwrap();
    let m = match signer {
        Some(id) => id.sign(&m),
        None => m,
    };
    let id = m.id();
    n.portal.cache().insert(m, NOW).unwrap();
    id
}

#[tokio::test]
async fn stored_script_injection_renders_inert() {
    let n = node();
    let corpus = [
        r#"emit("<script>alert(1)</script>ok");"#,
        r#"emit("<img src=x onerror=alert(1)>");"#,
        r#"emit("<a href=\"javascript:alert(1)\">x</a>");"#,
        r#"emit("<iframe src=\"/\"></iframe><object data=x></object>");"#,
        r#"emit("<svg onload=alert(1)><style>*{}</style>");"#,
        r#"emit("<div style=\"background:url(javascript:alert(1))\" onclick=\"alert(1)\">x</div>");"#,
        r#"emit("<form action=\"http://evil\"><input name=a></form><meta http-equiv=refresh content=0>");"#,
    ];
    let mut pages = Vec::new();
    for (i, script) in corpus.iter().enumerate() {
        let service = format!("inj{i}");
        let id = stored(&n, &service, script, script, None);
        pages.push(get(&n.app, &format!("/messages/{id}")).await.text());
        pages.push(get(&n.app, &format!("/services/{service}")).await.text());
    }
    pages.push(get(&n.app, "/services").await.text());
    for page in pages {
        let lower = page.to_lowercase();
        for bad in ["<script>alert", "onerror", "onload", "onclick", "javascript:", "<iframe", "<object", "<svg", "http-equiv", "evil"] {
            assert!(!lower.contains(bad), "{bad} survived in {page}");
        }
    }
}

#[tokio::test]
async fn badges_distinguish_verified_unknown_and_forged() {
    let n = node();
    let own = stored(&n, "notes", r#"emit("a");"#, r#"emit("a");"#, Some(n.portal.identity()));
    let stranger = identity(99);
    let unknown = stored(&n, "notes", r#"emit("b");"#, r#"emit("b");"#, Some(&stranger));
    // claims the node's key but carries somebody else's signature
    let forged = Message::builder("notes")
        .originator(n.portal.identity().fingerprint())
        .created_at(NOW)
        .payload("x", b"forged".to_vec())
        .build()
        .unwrap();
    let forged = stranger.sign(&forged).with_signature(stranger.sign(&forged).signature().unwrap().to_vec());
    let forged_id = forged.id();
    n.portal.cache().insert(forged, NOW).unwrap();

    for (id, badge) in [(own, "verified"), (unknown, "unverified"), (forged_id, "invalid")] {
        let r = get_json(&n.app, &format!("/messages/{id}")).await;
        assert_eq!(r.status, StatusCode::OK);
        assert_eq!(r.json()["badge"], badge);
        assert!(get(&n.app, &format!("/messages/{id}")).await.text().contains(&format!("badge-{badge}")));
    }
}

#[tokio::test]
async fn session_cookie_is_set_once() {
    let n = node();
    let first = get(&n.app, "/services").await;
    let cookie = first.header(header::SET_COOKIE).to_owned();
    assert!(cookie.starts_with(&format!("{SESSION_COOKIE}=")), "{cookie}");
    let token = cookie.split(';').next().unwrap().to_owned();
    assert_eq!(token.len(), SESSION_COOKIE.len() + 1 + 32);
    let again = send(&n.app, Request::get("/services").header(header::COOKIE, &token).body(Body::empty()).unwrap()).await;
    assert!(again.headers.get(header::SET_COOKIE).is_none());
}

#[tokio::test]
async fn style_sheet_and_optional_bundle() {
    let n = node();
    let css = get(&n.app, "/static/style.css").await;
    assert_eq!(css.status, StatusCode::OK);
    assert!(css.header(header::CONTENT_TYPE).starts_with("text/css"));
    assert_eq!(get(&n.app, "/static/app.js").await.status, StatusCode::NOT_FOUND);
    // without the bundle, pages do not reference it
    assert!(!get(&n.app, "/services").await.text().contains("app.js"));

    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("app.js"), "console.log(1)").unwrap();
    let n = node_with(PortalConfig { static_dir: Some(dir.path().to_owned()), ..Default::default() });
    assert!(get(&n.app, "/services").await.text().contains("/static/app.js"));
    assert_eq!(get(&n.app, "/static/app.js").await.body, b"console.log(1)");
    assert_eq!(get(&n.app, "/static/..%2Fsecret").await.status, StatusCode::NOT_FOUND);
}

/// Reads SSE text from a streaming body until `done` says so.
async fn read_events(body: &mut Body, done: impl Fn(&str) -> bool) -> String {
    let mut text = String::new();
    while !done(&text) {
        let frame = tokio::time::timeout(Duration::from_secs(3), body.frame()).await.expect("event in time");
        match frame {
            Some(Ok(f)) => {
                if let Some(data) = f.data_ref() {
                    text.push_str(&String::from_utf8_lossy(data));
                }
            }
            _ => break,
        }
    }
    text
}

#[tokio::test]
async fn event_stream_delivers_inserts_in_commit_order() {
    let (n, _) = demo_node();
    let res = n.app.clone().oneshot(Request::get("/events").body(Body::empty()).unwrap()).await.unwrap();
    assert!(res.headers()[header::CONTENT_TYPE].to_str().unwrap().starts_with("text/event-stream"));
    let mut body = res.into_body();
    read_events(&mut body, |t| t.contains("event: ready")).await;

    let ids: Vec<MessageId> = (0..5)
        .map(|i| {
            let m = Message::builder("feed").created_at(NOW + i).payload("t", vec![i as u8]).build().unwrap();
            let id = m.id();
            n.portal.cache().insert(m, NOW).unwrap();
            id
        })
        .collect();
    let last = ids[4].to_string();
    let text = read_events(&mut body, |t| t.contains(&last)).await;
    let positions: Vec<usize> = ids.iter().map(|id| text.find(&id.to_string()).expect("id streamed")).collect();
    assert!(positions.windows(2).all(|w| w[0] < w[1]), "{text}");
    assert!(text.contains("\"service\":\"feed\""));
}

#[tokio::test]
async fn slow_subscribers_are_dropped_with_a_final_event() {
    let n = node_with(PortalConfig { event_buffer: 2, ..Default::default() });
    let res = n.app.clone().oneshot(Request::get("/events").body(Body::empty()).unwrap()).await.unwrap();
    let mut body = res.into_body();
    for i in 0..20u64 {
        let m = Message::builder("feed").created_at(NOW + i).payload("t", vec![i as u8]).build().unwrap();
        n.portal.cache().insert(m, NOW).unwrap();
    }
    tokio::time::sleep(Duration::from_millis(500)).await;
    let text = read_events(&mut body, |t| t.contains("event: dropped")).await;
    assert!(text.contains("event: dropped"), "{text}");
    // the stream ends after the terminal event
    let rest = tokio::time::timeout(Duration::from_secs(2), body.frame()).await.unwrap();
    assert!(rest.is_none());
}

#[tokio::test]
async fn portal_content_syncs_and_verifies_like_native_content() {
    let (n, _) = demo_node();
    let r = post(&n.app, "/services/board/new", &[("topic", Part::Text("sync")), ("body", Part::Text("hello peers"))]).await;
    let id = redirect_id(&r);
    let peer = CacheStore::in_memory();
    let (a, b) = run_local_pair(n.portal.cache(), SessionConfig::new("portal"), &peer, SessionConfig::new("peer"), NOW, None, None);
    assert!(a.is_done() && b.is_done());
    assert_eq!(peer.state_digest(), n.portal.cache().state_digest());
    let copy = peer.get(&id).unwrap();
    assert_eq!(verify_message(&copy, &known_keys(&peer)), VerifyOutcome::Verified);
    assert_eq!(copy.encode_canonical(), n.portal.cache().get(&id).unwrap().encode_canonical());
}

#[tokio::test]
async fn every_response_carries_nosniff_and_a_policy() {
    let (n, msgs) = demo_node();
    for uri in ["/services".to_owned(), "/services/photos".into(), format!("/messages/{}", msgs[0].id()), "/apps".into(), "/nope".into()] {
        let r = get(&n.app, &uri).await;
        assert_eq!(r.header(header::X_CONTENT_TYPE_OPTIONS), "nosniff", "{uri}");
        assert!(r.header(header::CONTENT_SECURITY_POLICY).contains("default-src"), "{uri}");
    }
}
