mod common;

use std::collections::BTreeMap;
use std::sync::Arc;
use std::time::{Duration, Instant};

use common::*;
use oppweb_core::apps::{self, text_form, FixtureBuilder};
use oppweb_core::message::{KEY_CONTENT_TYPE, KEY_DESCRIPTION};
use oppweb_core::sandbox::{
    execute_fallback, DraftRequest, ExecutionBudget, FormValues, PresenterState, Sandbox, SandboxError,
};
use oppweb_core::{CacheStore, KeyRecord, Message, ScriptKind, ViewKind, ViewSource};
use sha2::{Digest, Sha256};

fn expected(name: &str) -> fn(&SandboxError) -> bool {
    match name {
        "infinite_loop" | "busy_arithmetic" => |e| matches!(e, SandboxError::CpuBudget(_)),
        "deep_recursion" | "string_bomb" | "array_bomb" | "map_bomb" => |e| matches!(e, SandboxError::MemoryBudget(_)),
        "output_flood" => |e| matches!(e, SandboxError::OutputLimit(_)),
        "import_module" | "eval_string" => |e| matches!(e, SandboxError::Compile(_)),
        _ => |e| matches!(e, SandboxError::CapabilityDenied(_)),
    }
}

fn hostile(kind: ScriptKind, source: &str) -> Arc<Message> {
    Arc::new(
        Message::builder("board")
            .created_at(NOW)
            .meta(KEY_DESCRIPTION, "secret-ish")
            .script(kind, source)
            .payload("body", b"hello".to_vec())
            .build()
            .unwrap(),
    )
}

fn run(sb: &Sandbox, msg: &Arc<Message>, kind: ScriptKind, peers: &[Arc<Message>]) -> Result<String, SandboxError> {
    match kind {
        ScriptKind::AppSummary => {
            let mut all = peers.to_vec();
            all.push(msg.clone());
            sb.execute_app_summary("board", &all, &PresenterState::default(), &BTreeMap::new(), NOW).map(|v| v.html)
        }
        _ => sb.execute_summary(msg, NOW).map(|v| v.html),
    }
}

fn tree_digest(dir: &std::path::Path) -> String {
    let mut files: Vec<_> = walk(dir);
    files.sort();
    let mut h = Sha256::new();
    for f in files {
        h.update(f.to_string_lossy().as_bytes());
        h.update(std::fs::read(&f).unwrap());
    }
    hex::encode(h.finalize())
}

fn walk(dir: &std::path::Path) -> Vec<std::path::PathBuf> {
    let mut out = Vec::new();
    for e in std::fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        if p.is_dir() {
            out.extend(walk(&p));
        } else {
            out.push(p);
        }
    }
    out
}

#[test]
fn escape_corpus_only_yields_errors_and_changes_nothing() {
    let corpus = escape_corpus();
    assert!(corpus.len() >= 10);
    let sb = Sandbox::default();
    let tmp = tempfile::tempdir().unwrap();
    let (cache, _) = CacheStore::open(tmp.path()).unwrap();
    let mut board = FixtureBuilder::new(&apps::board(), sb.clone(), identity(5), NOW - 10);
    let post = board.post(&text_form([("topic", "news"), ("body", "benign")])).unwrap();
    cache.insert((*post).clone(), NOW).unwrap();
    cache.insert(KeyRecord::to_message(&identity(5), NOW, 5400).unwrap(), NOW).unwrap();
    let hostile_msgs: Vec<_> = corpus.iter().map(|(_, kind, src)| hostile(*kind, src)).collect();
    for m in &hostile_msgs {
        cache.insert((**m).clone(), NOW).unwrap();
    }
    let before = (tree_digest(tmp.path()), cache.state_digest());

    for ((name, kind, _), msg) in corpus.iter().zip(&hostile_msgs) {
        let started = Instant::now();
        let result = run(&sb, msg, *kind, &[post.clone()]);
        let took = started.elapsed();
        let err = result.expect_err(name);
        assert!(expected(name)(&err), "{name}: unexpected {err:?}");
        assert!(took < sb.budget().cpu_time * 2, "{name} ran for {took:?}");
        // the fallback still renders
        let (view, e) = sb.view_or_fallback(msg, ViewKind::Summary, NOW);
        if *kind == ScriptKind::Summary {
            assert!(e.is_some() && view.source == ViewSource::Fallback, "{name}");
        }
    }

    assert_eq!((tree_digest(tmp.path()), cache.state_digest()), before);
    assert!(!std::path::Path::new("/tmp/oppweb-escaped").exists());
    // and the sandbox keeps working
    let ok = sb.execute_summary(&post, NOW).unwrap();
    assert!(ok.html.contains("benign"));
}

#[test]
fn budgets_are_configurable_and_enforced_quickly() {
    let budget = ExecutionBudget { cpu_time: Duration::from_millis(150), memory_bytes: 1 << 20, output_bytes: 4096 };
    let sb = Sandbox::new(budget.clone());
    let started = Instant::now();
    let err = sb.execute_summary(&hostile(ScriptKind::Summary, "loop {}"), NOW).unwrap_err();
    assert_eq!(err, SandboxError::CpuBudget(budget.cpu_time));
    assert!(started.elapsed() < budget.cpu_time * 2);

    let err = sb.execute_summary(&hostile(ScriptKind::Summary, "let s = \"x\"; s.pad(5000, 'x'); emit(s);"), NOW);
    // 5000 bytes of output against a 4096 byte limit
    let err = err.unwrap_err();
    assert!(matches!(err, SandboxError::OutputLimit(4096)), "{err:?}");
    assert!(sb.execute_summary(&hostile(ScriptKind::Summary, "let s = \"\"; s.pad(4000, 'x'); emit(s);"), NOW).is_ok());

    let err = sb.execute_summary(&hostile(ScriptKind::Summary, "let s = \"\"; s.pad(1000000, 'x');"), NOW).unwrap_err();
    assert!(matches!(err, SandboxError::MemoryBudget(_)), "{err:?}");
    assert!(ExecutionBudget { output_bytes: 0, ..budget }.validate().is_err());
}

#[test]
fn nested_renders_share_the_outer_deadline() {
    let budget = ExecutionBudget { cpu_time: Duration::from_millis(200), ..Default::default() };
    let sb = Sandbox::new(budget);
    let slow = hostile(ScriptKind::Summary, "loop {}");
    let presenter = Arc::new(
        Message::builder("board")
            .created_at(NOW + 1)
            .script(ScriptKind::Summary, "emit(\"p\");")
            .script(ScriptKind::AppSummary, "for id in message_ids() { emit(run_summary(id)); }")
            .build()
            .unwrap(),
    );
    let started = Instant::now();
    let err = sb
        .execute_app_summary("board", &[slow.clone(), slow, presenter], &PresenterState::default(), &BTreeMap::new(), NOW)
        .unwrap_err();
    assert!(matches!(err, SandboxError::CpuBudget(_)), "{err:?}");
    assert!(started.elapsed() < Duration::from_millis(400));
}

#[test]
fn script_errors_in_nested_summaries_fall_back() {
    let broken = hostile(ScriptKind::Summary, "throw \"boom\";");
    let presenter = Arc::new(
        Message::builder("board")
            .created_at(NOW + 1)
            .script(ScriptKind::Summary, "emit(\"p\");")
            .script(ScriptKind::AppSummary, "for id in message_ids() { emit(run_summary(id)); }")
            .build()
            .unwrap(),
    );
    let v = Sandbox::default()
        .execute_app_summary("board", &[broken.clone(), presenter], &PresenterState::default(), &BTreeMap::new(), NOW)
        .unwrap();
    assert!(v.html.contains("fallback"), "{}", v.html);
    assert!(matches!(Sandbox::default().execute_summary(&broken, NOW), Err(SandboxError::Runtime(_))));
}

#[test]
fn fallback_table() {
    let mk = |ct: Option<&str>| {
        let mut b = Message::builder("x").payload("file", b"hello world".to_vec());
        if let Some(ct) = ct {
            b = b.meta(KEY_CONTENT_TYPE, ct);
        }
        b.build().unwrap()
    };
    assert!(execute_fallback(&mk(Some("audio")), ViewKind::Summary).html.contains("<audio"));
    assert!(execute_fallback(&mk(Some("video")), ViewKind::Summary).html.contains("<video"));
    let img = mk(Some("image"));
    assert!(execute_fallback(&img, ViewKind::Summary).html.contains(&format!("/messages/{}/thumbnail", img.id())));
    assert!(execute_fallback(&mk(Some("text")), ViewKind::Summary).html.contains("hello world"));
    for ct in [Some("app"), Some("other"), None] {
        assert!(execute_fallback(&mk(ct), ViewKind::Summary).html.contains("download"), "{ct:?}");
    }
    // no scripts → fallback
    let (v, err) = Sandbox::default().view_or_fallback(&Arc::new(img), ViewKind::Summary, NOW);
    assert_eq!(v.source, ViewSource::Fallback);
    assert_eq!(err, Some(SandboxError::MissingScript(ScriptKind::Summary)));
}

#[test]
fn empty_service_falls_back_to_empty_list() {
    let (v, err) = Sandbox::default().app_summary_or_fallback("none", &[], &PresenterState::default(), &BTreeMap::new(), NOW);
    assert_eq!(v.source, ViewSource::Fallback);
    assert_eq!(v.html, "<ul class=\"message-list\"></ul>");
    assert!(err.is_some());
}

#[test]
fn newest_presenter_wins_with_id_tie_break() {
    let mk = |t: u64, out: &str| {
        Arc::new(
            Message::builder("s")
                .created_at(t)
                .script(ScriptKind::AppSummary, format!("emit(\"{out}\");"))
                .build()
                .unwrap(),
        )
    };
    let (a, b, c) = (mk(1, "old"), mk(5, "new-a"), mk(5, "new-b"));
    let winner = if b.id() > c.id() { "new-a" } else { "new-b" };
    let msgs = vec![a, b, c];
    let v = Sandbox::default().execute_app_summary("s", &msgs, &PresenterState::default(), &BTreeMap::new(), NOW).unwrap();
    assert_eq!(v.html, winner);
}

#[test]
fn presenter_cannot_be_fed_messages_of_another_service() {
    let p = Arc::new(Message::builder("s").script(ScriptKind::AppSummary, "emit(\"x\");").build().unwrap());
    let other = Arc::new(Message::builder("t").build().unwrap());
    let err = Sandbox::default()
        .execute_app_summary("s", &[p, other], &PresenterState::default(), &BTreeMap::new(), NOW)
        .unwrap_err();
    assert!(matches!(err, SandboxError::CapabilityDenied(_)));
}

#[test]
fn stored_markup_is_sanitized() {
    let m = hostile(
        ScriptKind::Summary,
        r#"emit("<p onclick='x()'>hi</p><script>alert(1)</script><a href='javascript:alert(1)'>l</a><img src=x onerror=alert(1)>");"#,
    );
    let html = Sandbox::default().execute_summary(&m, NOW).unwrap().html;
    for bad in ["onclick", "<script", "javascript:", "onerror"] {
        assert!(!html.contains(bad), "{html}");
    }
    assert!(html.contains("<p>hi</p>"));
}

#[test]
fn drafts_missing_required_fields_list_them() {
    let mut fx = FixtureBuilder::new(&apps::peoplefinder(), Sandbox::default(), identity(1), NOW);
    let err = fx.post(&FormValues::new()).unwrap_err();
    match err {
        SandboxError::Validation(f) => {
            let names: Vec<_> = f.iter().map(|e| e.field.as_str()).collect();
            assert_eq!(names, ["name", "status"]);
        }
        other => panic!("{other:?}"),
    }
}

#[test]
fn scripts_cannot_set_framework_keys() {
    let template = Arc::new(
        Message::builder("s")
            .script(ScriptKind::Summary, "emit(\"s\");")
            .script(ScriptKind::New, "fn fields() { [] } fn build(form) { #{ meta: #{ summary: \"emit(1)\" } } }")
            .build()
            .unwrap(),
    );
    let id = identity(1);
    let req = DraftRequest { source: &template, service_messages: &[], form: &FormValues::new(), identity: &id, now: NOW, ttl: 60 };
    assert!(matches!(Sandbox::default().execute_new(req), Err(SandboxError::InvalidDraft(_))));
}

#[test]
fn describe_phase_reports_fields() {
    let t = Arc::new(apps::board().template(&identity(1), NOW, 5400).unwrap());
    let fields = Sandbox::default().describe_form(ScriptKind::New, &t, &[], NOW).unwrap();
    let names: Vec<_> = fields.iter().map(|f| (f.name.as_str(), f.required)).collect();
    assert_eq!(names, [("topic", true), ("body", true), ("nick", false)]);
    assert!(matches!(
        Sandbox::default().describe_form(ScriptKind::Reply, &Arc::new(Message::builder("s").build().unwrap()), &[], NOW),
        Err(SandboxError::MissingScript(ScriptKind::Reply))
    ));
}

#[test]
fn memory_is_counted_across_variables() {
    // each frame holds a value under the per-value cap, together they exceed the budget
    let budget = ExecutionBudget { memory_bytes: 1 << 20, ..Default::default() };
    let src = "fn hold(n) { let s = \"x\"; s.pad(30000, 'x'); if n > 0 { hold(n - 1) + s.len() } else { s.len() } } emit(`${hold(40)}`);";
    let err = Sandbox::new(budget.clone()).execute_summary(&hostile(ScriptKind::Summary, src), NOW).unwrap_err();
    assert!(matches!(err, SandboxError::MemoryBudget(_)), "{err:?}");
    let small = src.replace("hold(40)", "hold(10)");
    assert!(Sandbox::new(budget).execute_summary(&hostile(ScriptKind::Summary, &small), NOW).is_ok());
}

#[test]
fn pipeline_renders_views_and_thumbnails_on_insert() {
    use oppweb_core::sandbox::RenderPipeline;
    let cache = CacheStore::in_memory();
    let sb = Sandbox::default();
    let mut photos = FixtureBuilder::new(&apps::photos(), sb.clone(), identity(2), NOW);
    let early = photos.template().clone();
    cache.insert((*early).clone(), NOW).unwrap();
    let pipeline = RenderPipeline::spawn(cache.clone(), sb.clone(), || NOW);
    let photo = photos.post(&photo_form("a.png", png(600, 300, 9), "wide")).unwrap();
    cache.insert((*photo).clone(), NOW).unwrap();
    let plain = Message::builder("misc").created_at(NOW).meta(KEY_CONTENT_TYPE, "text").payload("t", b"just text".to_vec()).build().unwrap();
    cache.insert(plain.clone(), NOW).unwrap();

    let deadline = Instant::now() + Duration::from_secs(20);
    while cache.view(&plain.id(), ViewKind::Presentation).is_none() || cache.thumbnail(&photo.id()).is_none() {
        assert!(
            Instant::now() < deadline,
            "pipeline did not catch up: {:?} {:?}",
            cache.view(&plain.id(), ViewKind::Presentation).is_some(),
            cache.thumbnail(&photo.id()).is_some()
        );
        std::thread::sleep(Duration::from_millis(20));
    }
    pipeline.shutdown();
    assert!(cache.view(&early.id(), ViewKind::Summary).is_some());
    assert_eq!(cache.view(&photo.id(), ViewKind::Summary).unwrap().source, ViewSource::Script);
    assert_eq!(cache.view(&plain.id(), ViewKind::Summary).unwrap().source, ViewSource::Fallback);
    let thumb = image::load_from_memory(&cache.thumbnail(&photo.id()).unwrap()).unwrap();
    assert_eq!((thumb.width(), thumb.height()), (256, 128));
}
