//! Embedding of the script engine and the host API exposed to scripts.

use std::cell::RefCell;
use std::collections::BTreeMap;
use std::rc::Rc;
use std::sync::Arc;
use std::time::Instant;

use rhai::{Array, Blob, Dynamic, Engine, EvalAltResult, ImmutableString, Map, Scope, AST};

use super::{fallback, sanitize, urls, ExecutionBudget, PresenterState, SandboxError};
use crate::message::{Message, MessageId, MetaValue, ScriptKind};
use crate::view::ViewKind;

type HostResult<T> = Result<T, Box<EvalAltResult>>;

/// What a single script execution may see.
#[derive(Clone)]
pub(crate) struct Execution {
    pub kind: ScriptKind,
    pub service: String,
    /// The message the script belongs to (template or parent for new/reply).
    pub message: Option<Arc<Message>>,
    /// Messages of the same service, oldest first. Presenters and
    /// new/reply scripts only.
    pub service_messages: Option<Arc<Vec<Arc<Message>>>>,
    pub state: Option<PresenterState>,
    pub params: BTreeMap<String, String>,
    pub now: u64,
}

#[derive(Default)]
struct HostCtx {
    output: String,
    host_bytes: usize,
    violation: Option<SandboxError>,
}

pub(crate) struct Runtime<'a> {
    pub budget: &'a ExecutionBudget,
    pub deadline: Instant,
}

fn deny(ctx: &Rc<RefCell<HostCtx>>, what: String) -> Box<EvalAltResult> {
    let err = SandboxError::CapabilityDenied(what.clone());
    ctx.borrow_mut().violation.get_or_insert(err);
    format!("capability denied: {what}").into()
}

#[derive(Default)]
struct Walk {
    visited: usize,
    widest: usize,
}

/// Rough heap footprint of a script value.
fn approx_size(v: &Dynamic, walk: &mut Walk) -> usize {
    const SLOT: usize = 32;
    walk.visited += 1;
    if let Ok(s) = v.as_immutable_string_ref() {
        return SLOT + s.len();
    }
    if let Ok(b) = v.as_blob_ref() {
        return SLOT + b.len();
    }
    if let Ok(a) = v.as_array_ref() {
        return SLOT + a.iter().map(|v| approx_size(v, walk)).sum::<usize>();
    }
    if let Ok(m) = v.as_map_ref() {
        walk.widest = walk.widest.max(m.len());
        return SLOT + m.iter().map(|(k, v)| k.len() + approx_size(v, walk)).sum::<usize>();
    }
    SLOT
}

fn meta_to_dynamic(msg: &Message, key: &str) -> Dynamic {
    match msg.meta(key) {
        None => Dynamic::UNIT,
        Some(MetaValue::Text(s)) => s.clone().into(),
        Some(MetaValue::Bytes(b)) => Dynamic::from_blob(b.clone()),
        Some(MetaValue::PayloadRef(name)) => {
            Dynamic::from_blob(msg.payload_data(name).unwrap_or_default().to_vec())
        }
    }
}

impl<'a> Runtime<'a> {
    pub fn new(budget: &'a ExecutionBudget) -> Self {
        Self { budget, deadline: Instant::now() + budget.cpu_time }
    }

    fn engine(&self, exec: &Execution, ctx: &Rc<RefCell<HostCtx>>) -> Engine {
        let mut engine = Engine::new();
        let deadline = self.deadline;
        engine.on_progress(move |ops| {
            if ops % 128 == 0 && Instant::now() >= deadline {
                Some(Dynamic::from("cpu budget exhausted"))
            } else {
                None
            }
        });
        engine.on_print(|_| {});
        engine.on_debug(|_, _, _| {});
        engine.disable_symbol("eval");
        let per_value = (self.budget.memory_bytes / 32).max(1024);
        engine.set_max_string_size(per_value);
        engine.set_max_array_size(per_value);
        // size checks walk the whole map, so keep maps small enough to check cheaply
        engine.set_max_map_size((per_value / 256).max(64));
        engine.set_max_variables(4096);
        engine.set_max_functions(256);
        engine.set_max_call_levels(48);
        engine.set_max_expr_depths(128, 64);
        self.account_memory(&mut engine, ctx);
        self.register_host_api(&mut engine, exec, ctx);
        engine
    }

    /// Per-value caps alone let a script spread data over many variables or
    /// grow a map in place, so variables are measured on every read.
    /// Each call frame has its own scope; the last measurement per call
    /// level is kept and deeper levels are dropped once a shallower one
    /// reads again.
    #[allow(deprecated)]
    fn account_memory(&self, engine: &mut Engine, ctx: &Rc<RefCell<HostCtx>>) {
        let limit = self.budget.memory_bytes;
        let max_entries = engine.max_map_size();
        let ctx = ctx.clone();
        let frames = RefCell::new(Vec::<usize>::new());
        // measuring costs one step per value visited; spread that cost so a
        // read pays for at most 8 steps, except when the call level changes
        let debt = std::cell::Cell::new(0usize);
        engine.on_var(move |_, _, eval| {
            let level = eval.call_level();
            let mut frames = frames.borrow_mut();
            debt.set(debt.get().saturating_sub(8));
            if debt.get() > 0 && frames.len() == level + 1 {
                return Ok(None);
            }
            let mut walk = Walk::default();
            let here: usize = eval.scope().iter_raw().map(|(_, _, v)| approx_size(v, &mut walk)).sum();
            debt.set(walk.visited);
            let widest = walk.widest;
            frames.resize(level + 1, 0);
            frames[level] = here;
            let used: usize = frames.iter().sum();
            let mut c = ctx.borrow_mut();
            let reason = if widest > max_entries {
                format!("map with {widest} entries")
            } else if used + c.host_bytes > limit {
                format!("about {used} bytes held by variables")
            } else {
                return Ok(None);
            };
            c.violation.get_or_insert(SandboxError::MemoryBudget(reason));
            Err(EvalAltResult::ErrorDataTooLarge("script memory".into(), rhai::Position::NONE).into())
        });
    }

    fn register_host_api(&self, engine: &mut Engine, exec: &Execution, ctx: &Rc<RefCell<HostCtx>>) {
        let output_limit = self.budget.output_bytes;
        let memory_limit = self.budget.memory_bytes;

        // output
        {
            let ctx = ctx.clone();
            engine.register_fn("emit", move |html: ImmutableString| -> HostResult<()> {
                let mut c = ctx.borrow_mut();
                if c.output.len() + html.len() > output_limit {
                    c.violation.get_or_insert(SandboxError::OutputLimit(output_limit));
                    return Err("output limit exceeded".into());
                }
                c.output.push_str(&html);
                Ok(())
            });
        }
        engine.register_fn("escape", |s: ImmutableString| sanitize::escape_text(&s));
        engine.register_fn("escape", |d: Dynamic| sanitize::escape_text(&d.to_string()));
        engine.register_fn("url_encode", |s: ImmutableString| urls::encode_component(&s));
        let now = exec.now as i64;
        engine.register_fn("now", move || now);
        let service = exec.service.clone();
        engine.register_fn("service", move || service.clone());
        let service = exec.service.clone();
        engine.register_fn("service_url", move || urls::service(&service));
        let kind = exec.kind;
        engine.register_fn("transformation", move || kind.key().to_owned());

        // the script's own message
        let own = exec.message.clone();
        let own_guard = {
            let ctx = ctx.clone();
            move |name: &str| -> HostResult<Arc<Message>> {
                own.clone().ok_or_else(|| deny(&ctx, format!("{name} needs a message context")))
            }
        };
        macro_rules! own_fn {
            ($name:literal, |$m:ident $(, $arg:ident : $ty:ty)*| $body:expr) => {{
                let guard = own_guard.clone();
                engine.register_fn($name, move |$($arg: $ty),*| -> HostResult<_> {
                    let $m = guard($name)?;
                    $body
                });
            }};
        }
        own_fn!("message_id", |m| Ok(m.id().to_hex()));
        own_fn!("created_at", |m| Ok(m.created_at() as i64));
        own_fn!("originator", |m| Ok(m.originator().to_owned()));
        own_fn!("get_meta", |m, key: ImmutableString| Ok(meta_to_dynamic(&m, &key)));
        own_fn!("has_meta", |m, key: ImmutableString| Ok(m.meta(&key).is_some()));
        own_fn!("payload_names", |m| {
            Ok(m.payload().iter().map(|p| Dynamic::from(p.name.clone())).collect::<Array>())
        });
        own_fn!("detail_url", |m| Ok(urls::detail(&m.id())));
        own_fn!("reply_url", |m| Ok(urls::reply(&m.id())));
        own_fn!("thumbnail_url", |m| Ok(urls::thumbnail(&m.id())));
        own_fn!("payload_url", |m, name: ImmutableString| Ok(urls::payload(&m.id(), &name)));
        {
            let guard = own_guard.clone();
            let ctx = ctx.clone();
            engine.register_fn("read_payload", move |name: ImmutableString| -> HostResult<Blob> {
                let m = guard("read_payload")?;
                let data = payload_of(&ctx, &m, &name, memory_limit)?;
                Ok(data.to_vec())
            });
        }
        {
            let guard = own_guard.clone();
            let ctx = ctx.clone();
            engine.register_fn("read_payload_text", move |name: ImmutableString| -> HostResult<String> {
                let m = guard("read_payload_text")?;
                let data = payload_of(&ctx, &m, &name, memory_limit)?;
                Ok(String::from_utf8_lossy(data).into_owned())
            });
        }

        // other messages of the same service
        let scope_msgs = exec.service_messages.clone();
        let svc = exec.service.clone();
        let kind_name = exec.kind.key();
        let lookup = {
            let ctx = ctx.clone();
            move |fname: &str, id: &str| -> HostResult<Arc<Message>> {
                let Some(msgs) = &scope_msgs else {
                    return Err(deny(&ctx, format!("{fname} is not available to {kind_name} transformations")));
                };
                let parsed: Option<MessageId> = id.parse().ok();
                parsed
                    .and_then(|id| msgs.iter().find(|m| m.id() == id).cloned())
                    .ok_or_else(|| deny(&ctx, format!("{fname}: message {id:?} is outside service {svc:?}")))
            }
        };
        {
            let msgs = exec.service_messages.clone();
            let ctx2 = ctx.clone();
            let ctx = ctx.clone();
            let list = move || -> HostResult<Array> {
                let Some(msgs) = &msgs else {
                    return Err(deny(&ctx, format!("message_ids is not available to {kind_name} transformations")));
                };
                Ok(msgs.iter().map(|m| Dynamic::from(m.id().to_hex())).collect())
            };
            let list2 = list.clone();
            let own_service = exec.service.clone();
            engine.register_fn("message_ids", list);
            engine.register_fn("message_ids", move |service: ImmutableString| -> HostResult<Array> {
                if service.as_str() != own_service {
                    return Err(deny(&ctx2, format!("message_ids: service {service:?} is not {own_service:?}")));
                }
                list2()
            });
        }
        macro_rules! scoped_fn {
            ($name:literal, |$m:ident $(, $arg:ident : $ty:ty)*| $body:expr) => {{
                let lookup = lookup.clone();
                engine.register_fn($name, move |id: ImmutableString $(, $arg: $ty)*| -> HostResult<_> {
                    let $m = lookup($name, &id)?;
                    $body
                });
            }};
        }
        scoped_fn!("message_meta", |m, key: ImmutableString| Ok(meta_to_dynamic(&m, &key)));
        scoped_fn!("message_created_at", |m| Ok(m.created_at() as i64));
        scoped_fn!("message_originator", |m| Ok(m.originator().to_owned()));
        scoped_fn!("message_payload_names", |m| {
            Ok(m.payload().iter().map(|p| Dynamic::from(p.name.clone())).collect::<Array>())
        });
        scoped_fn!("detail_url", |m| Ok(urls::detail(&m.id())));
        scoped_fn!("reply_url", |m| Ok(urls::reply(&m.id())));
        scoped_fn!("thumbnail_url", |m| Ok(urls::thumbnail(&m.id())));
        scoped_fn!("payload_url", |m, name: ImmutableString| Ok(urls::payload(&m.id(), &name)));
        {
            let lookup = lookup.clone();
            let ctx = ctx.clone();
            engine.register_fn(
                "message_payload_text",
                move |id: ImmutableString, name: ImmutableString| -> HostResult<String> {
                    let m = lookup("message_payload_text", &id)?;
                    let data = payload_of(&ctx, &m, &name, memory_limit)?;
                    Ok(String::from_utf8_lossy(data).into_owned())
                },
            );
        }

        // presenter-only: nested per-message views, state, request parameters
        let presenter = exec.kind == ScriptKind::AppSummary;
        for (fname, view, vk) in [
            ("run_summary", ScriptKind::Summary, ViewKind::Summary),
            ("run_presentation", ScriptKind::Presentation, ViewKind::Presentation),
        ] {
            let lookup = lookup.clone();
            let ctx = ctx.clone();
            let budget = self.budget.clone();
            let deadline = self.deadline;
            let now = exec.now;
            engine.register_fn(fname, move |id: ImmutableString| -> HostResult<String> {
                if !presenter {
                    return Err(deny(&ctx, format!("{fname} is only available to appSummary transformations")));
                }
                let m = lookup(fname, &id)?;
                let rt = Runtime { budget: &budget, deadline };
                match rt.render_message(&m, view, now) {
                    Ok(html) => Ok(html),
                    Err(e @ (SandboxError::CpuBudget(_) | SandboxError::MemoryBudget(_))) => {
                        let msg = e.to_string();
                        ctx.borrow_mut().violation.get_or_insert(e);
                        Err(msg.into())
                    }
                    Err(_) => Ok(fallback::render(&m, vk).html),
                }
            });
        }
        {
            let state = exec.state.clone();
            let ctx = ctx.clone();
            engine.register_fn("get_state", move |key: ImmutableString| -> HostResult<Dynamic> {
                let Some(state) = (if presenter { state.as_ref() } else { None }) else {
                    return Err(deny(&ctx, "get_state is only available to appSummary transformations".into()));
                };
                Ok(state.get(&key).map(Dynamic::from).unwrap_or(Dynamic::UNIT))
            });
        }
        {
            let state = exec.state.clone();
            let ctx = ctx.clone();
            engine.register_fn("set_state", move |key: ImmutableString, value: Dynamic| -> HostResult<()> {
                let Some(state) = (if presenter { state.as_ref() } else { None }) else {
                    return Err(deny(&ctx, "set_state is only available to appSummary transformations".into()));
                };
                let value = value.to_string();
                let mut c = ctx.borrow_mut();
                c.host_bytes += key.len() + value.len();
                if c.host_bytes > memory_limit {
                    c.violation.get_or_insert(SandboxError::MemoryBudget("state too large".into()));
                    return Err("memory budget exhausted".into());
                }
                state.set(key.to_string(), value);
                Ok(())
            });
        }
        {
            let params = exec.params.clone();
            engine.register_fn("param", move |name: ImmutableString| -> Dynamic {
                params.get(name.as_str()).cloned().map(Dynamic::from).unwrap_or(Dynamic::UNIT)
            });
        }
    }

    fn compile(&self, engine: &Engine, source: &str) -> Result<AST, SandboxError> {
        engine.compile(source).map_err(|e| SandboxError::Compile(e.to_string()))
    }

    fn finish<T>(&self, ctx: &Rc<RefCell<HostCtx>>, result: Result<T, Box<EvalAltResult>>) -> Result<T, SandboxError> {
        if let Some(v) = ctx.borrow_mut().violation.take() {
            return Err(v);
        }
        result.map_err(|e| self.map_error(*e))
    }

    fn map_error(&self, err: EvalAltResult) -> SandboxError {
        match err {
            EvalAltResult::ErrorInFunctionCall(_, _, inner, _) => self.map_error(*inner),
            EvalAltResult::ErrorTerminated(..) | EvalAltResult::ErrorTooManyOperations(..) => {
                SandboxError::CpuBudget(self.budget.cpu_time)
            }
            EvalAltResult::ErrorDataTooLarge(what, _) => SandboxError::MemoryBudget(what),
            EvalAltResult::ErrorStackOverflow(_) => SandboxError::MemoryBudget("call stack".into()),
            EvalAltResult::ErrorTooManyVariables(_) => SandboxError::MemoryBudget("variables".into()),
            EvalAltResult::ErrorFunctionNotFound(sig, _) => {
                SandboxError::CapabilityDenied(format!("no host function {sig}"))
            }
            other => SandboxError::Runtime(other.to_string()),
        }
    }

    /// Runs a view script to completion and returns its raw emitted HTML.
    pub fn run_view(&self, exec: &Execution, source: &str) -> Result<String, SandboxError> {
        if Instant::now() >= self.deadline {
            return Err(SandboxError::CpuBudget(self.budget.cpu_time));
        }
        let ctx = Rc::new(RefCell::new(HostCtx::default()));
        let engine = self.engine(exec, &ctx);
        let ast = self.compile(&engine, source)?;
        let result = engine.run_ast_with_scope(&mut Scope::new(), &ast);
        self.finish(&ctx, result)?;
        let out = std::mem::take(&mut ctx.borrow_mut().output);
        Ok(out)
    }

    /// Calls a named function defined by the script.
    pub fn call(&self, exec: &Execution, source: &str, name: &str, args: Vec<Dynamic>) -> Result<Dynamic, SandboxError> {
        let ctx = Rc::new(RefCell::new(HostCtx::default()));
        let engine = self.engine(exec, &ctx);
        let ast = self.compile(&engine, source)?;
        if !ast.iter_functions().any(|f| f.name == name && f.params.len() == args.len()) {
            return Err(SandboxError::Runtime(format!("script does not define {name}()")));
        }
        let result = engine.call_fn::<Dynamic>(&mut Scope::new(), &ast, name, args);
        self.finish(&ctx, result)
    }

    /// Summary or presentation of a message: its own script, sanitized.
    pub fn render_message(&self, msg: &Arc<Message>, kind: ScriptKind, now: u64) -> Result<String, SandboxError> {
        let script = msg.script(kind).ok_or(SandboxError::MissingScript(kind))?;
        let exec = Execution {
            kind,
            service: msg.service().to_owned(),
            message: Some(msg.clone()),
            service_messages: None,
            state: None,
            params: BTreeMap::new(),
            now,
        };
        let raw = self.run_view(&exec, script.source())?;
        Ok(sanitize::clean(&raw))
    }
}

fn payload_of<'m>(
    ctx: &Rc<RefCell<HostCtx>>,
    msg: &'m Message,
    name: &str,
    memory_limit: usize,
) -> HostResult<&'m [u8]> {
    let Some(data) = msg.payload_data(name) else {
        return Err(deny(ctx, format!("no payload named {name:?} in this message")));
    };
    let mut c = ctx.borrow_mut();
    c.host_bytes += data.len();
    if c.host_bytes > memory_limit {
        c.violation.get_or_insert(SandboxError::MemoryBudget("payload reads".into()));
        return Err("memory budget exhausted".into());
    }
    Ok(data)
}

/// Reads a string field out of a script-returned map.
pub(crate) fn map_str(map: &Map, key: &str) -> Option<String> {
    map.get(key).and_then(|v| v.clone().into_string().ok())
}
