//! `new` / `reply` execution: form description, validation, and assembly of
//! signed, self-contained drafts.

use std::collections::BTreeMap;
use std::sync::Arc;

use rhai::{Array, Dynamic, Map};
use serde::Serialize;

use super::runtime::{map_str, Execution, Runtime};
use super::{ExecutionBudget, SandboxError};
use crate::keys::Identity;
use crate::message::{Message, MetaValue, ScriptKind, KEY_ICON, KEY_SERVICE};

#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum FieldType {
    Text,
    Textarea,
    File,
    Hidden,
}

impl FieldType {
    fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "text" => FieldType::Text,
            "textarea" => FieldType::Textarea,
            "file" => FieldType::File,
            "hidden" => FieldType::Hidden,
            _ => return None,
        })
    }
}

/// One form field declared by a script.
#[derive(Clone, PartialEq, Eq, Debug, Serialize)]
pub struct FieldSpec {
    pub name: String,
    pub label: String,
    #[serde(rename = "type")]
    pub field_type: FieldType,
    pub required: bool,
    /// Prefilled value, used for hidden fields.
    pub value: String,
}

#[derive(Clone, PartialEq, Eq, Debug)]
pub enum FormValue {
    Text(String),
    File { filename: String, data: Vec<u8> },
}

impl FormValue {
    fn is_blank(&self) -> bool {
        match self {
            FormValue::Text(s) => s.trim().is_empty(),
            FormValue::File { data, .. } => data.is_empty(),
        }
    }
}

pub type FormValues = BTreeMap<String, FormValue>;

#[derive(Clone, PartialEq, Eq, Debug, Serialize)]
pub struct FieldError {
    pub field: String,
    pub message: String,
}

/// Inputs of a draft build. `source` is the service template for `new` and
/// the parent message for `reply`.
pub struct DraftRequest<'a> {
    pub source: &'a Arc<Message>,
    pub service_messages: &'a [Arc<Message>],
    pub form: &'a FormValues,
    pub identity: &'a Identity,
    pub now: u64,
    pub ttl: u64,
}

fn execution(kind: ScriptKind, source: &Arc<Message>, service_messages: &[Arc<Message>], now: u64) -> Execution {
    Execution {
        kind,
        service: source.service().to_owned(),
        message: Some(source.clone()),
        service_messages: Some(Arc::new(service_messages.to_vec())),
        state: None,
        params: BTreeMap::new(),
        now,
    }
}

pub(crate) fn describe(
    budget: &ExecutionBudget,
    kind: ScriptKind,
    source: &Arc<Message>,
    service_messages: &[Arc<Message>],
    now: u64,
) -> Result<Vec<FieldSpec>, SandboxError> {
    let script = source.script(kind).ok_or(SandboxError::MissingScript(kind))?;
    let exec = execution(kind, source, service_messages, now);
    let out = Runtime::new(budget).call(&exec, script.source(), "fields", vec![])?;
    let fields = out
        .try_cast::<Array>()
        .ok_or_else(|| SandboxError::InvalidDraft("fields() must return an array".into()))?;
    fields
        .into_iter()
        .map(|f| {
            let m = f.try_cast::<Map>().ok_or_else(|| SandboxError::InvalidDraft("field spec must be a map".into()))?;
            let name = map_str(&m, "name").filter(|n| !n.is_empty());
            let name = name.ok_or_else(|| SandboxError::InvalidDraft("field spec without a name".into()))?;
            let ty = map_str(&m, "type").unwrap_or_else(|| "text".into());
            let field_type = FieldType::parse(&ty)
                .ok_or_else(|| SandboxError::InvalidDraft(format!("field {name:?} has unknown type {ty:?}")))?;
            Ok(FieldSpec {
                label: map_str(&m, "label").unwrap_or_else(|| name.clone()),
                required: m.get("required").and_then(|v| v.as_bool().ok()).unwrap_or(false),
                value: map_str(&m, "value").unwrap_or_default(),
                name,
                field_type,
            })
        })
        .collect()
}

fn to_meta(value: Dynamic) -> Option<MetaValue> {
    if value.is_unit() {
        return None;
    }
    if value.is_blob() {
        return Some(MetaValue::Bytes(value.cast()));
    }
    if value.is_map() {
        let m = value.cast::<Map>();
        return map_str(&m, "ref").map(MetaValue::PayloadRef);
    }
    match value.into_string() {
        Ok(s) => Some(MetaValue::Text(s)),
        Err(type_name) => Some(MetaValue::Text(type_name.to_string())),
    }
}

fn to_bytes(value: Dynamic) -> Vec<u8> {
    if value.is_blob() {
        value.cast()
    } else {
        value.to_string().into_bytes()
    }
}

fn sub_map(result: &Map, key: &str) -> Result<Map, SandboxError> {
    match result.get(key) {
        None => Ok(Map::new()),
        Some(v) if v.is_unit() => Ok(Map::new()),
        Some(v) => v
            .clone()
            .try_cast::<Map>()
            .ok_or_else(|| SandboxError::InvalidDraft(format!("build() result field {key:?} must be a map"))),
    }
}

pub(crate) fn build(budget: &ExecutionBudget, kind: ScriptKind, req: DraftRequest<'_>) -> Result<Message, SandboxError> {
    let script = req.source.script(kind).ok_or(SandboxError::MissingScript(kind))?;
    let fields = describe(budget, kind, req.source, req.service_messages, req.now)?;

    let missing: Vec<FieldError> = fields
        .iter()
        .filter(|f| f.required && req.form.get(&f.name).map_or(true, FormValue::is_blank))
        .map(|f| FieldError { field: f.name.clone(), message: format!("{} is required", f.label) })
        .collect();
    if !missing.is_empty() {
        return Err(SandboxError::Validation(missing));
    }

    let mut form = Map::new();
    for f in &fields {
        let value = match (req.form.get(&f.name), f.field_type) {
            (Some(FormValue::Text(s)), _) => Dynamic::from(s.clone()),
            (Some(FormValue::File { filename, data }), _) => {
                form.insert(format!("{}_filename", f.name).into(), Dynamic::from(filename.clone()));
                Dynamic::from_blob(data.clone())
            }
            (None, FieldType::File) => Dynamic::UNIT,
            (None, FieldType::Hidden) => Dynamic::from(f.value.clone()),
            (None, _) => Dynamic::from(String::new()),
        };
        form.insert(f.name.as_str().into(), value);
    }

    let exec = execution(kind, req.source, req.service_messages, req.now);
    let out = Runtime::new(budget).call(&exec, script.source(), "build", vec![Dynamic::from_map(form)])?;
    let result = out
        .try_cast::<Map>()
        .ok_or_else(|| SandboxError::InvalidDraft("build() must return a map".into()))?;

    let errors: Vec<FieldError> = sub_map(&result, "errors")?
        .into_iter()
        .map(|(field, msg)| FieldError { field: field.to_string(), message: msg.to_string() })
        .collect();
    if !errors.is_empty() {
        return Err(SandboxError::Validation(errors));
    }

    let mut builder = Message::builder(req.source.service())
        .originator(req.identity.fingerprint())
        .created_at(req.now)
        .ttl(req.ttl);
    for (name, data) in sub_map(&result, "payload")? {
        builder = builder.payload(name.to_string(), to_bytes(data));
    }
    for (key, value) in sub_map(&result, "meta")? {
        let key = key.to_string();
        if ScriptKind::from_key(&key).is_some() || key == KEY_SERVICE || key == KEY_ICON {
            return Err(SandboxError::InvalidDraft(format!("metadata key {key:?} is set by the framework")));
        }
        if let Some(v) = to_meta(value) {
            builder = builder.meta(key, v);
        }
    }

    // logic travels with the data: copy every transformation and the icon
    for k in ScriptKind::ALL {
        if let Some(s) = req.source.script(k) {
            builder = builder.script(k, s.source());
        }
    }
    match req.source.meta(KEY_ICON) {
        Some(MetaValue::PayloadRef(name)) => {
            let data = req.source.payload_data(name).unwrap_or_default().to_vec();
            let taken = sub_map(&result, "payload")?.contains_key(name.as_str());
            if taken {
                return Err(SandboxError::InvalidDraft(format!("payload name {name:?} is reserved for the icon")));
            }
            builder = builder.payload(name.clone(), data).meta(KEY_ICON, MetaValue::PayloadRef(name.clone()));
        }
        Some(other) => builder = builder.meta(KEY_ICON, other.clone()),
        None => {}
    }

    let draft = builder.build().map_err(|e| SandboxError::InvalidDraft(e.to_string()))?;
    let warnings = draft.validate_metadata();
    if !warnings.is_empty() {
        let text: Vec<String> = warnings.iter().map(|w| w.to_string()).collect();
        return Err(SandboxError::InvalidDraft(text.join("; ")));
    }
    Ok(req.identity.sign(&draft))
}
