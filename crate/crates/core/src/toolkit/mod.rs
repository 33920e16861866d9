//! Tools: typed flat schemas, argument validation, a registry and the
//! closed-outcome executor that feeds results back to the model.

pub mod builtin;
pub mod context;

use std::fmt;
use std::panic::AssertUnwindSafe;
use std::sync::Arc;

use futures::future::BoxFuture;
use futures::FutureExt;
use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};
use thiserror::Error;

pub use context::{
    BusDetector, Decision, ObservationSource, StaticObservation, ToolContext, Tracer,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamType {
    Text,
    Number,
    Integer,
    Boolean,
    TextList,
}

impl ParamType {
    pub const ALL: [ParamType; 5] = [
        ParamType::Text,
        ParamType::Number,
        ParamType::Integer,
        ParamType::Boolean,
        ParamType::TextList,
    ];

    pub fn accepts(self, v: &Value) -> bool {
        match self {
            ParamType::Text => v.is_string(),
            ParamType::Number => v.is_number(),
            ParamType::Integer => {
                v.is_i64()
                    || v.is_u64()
                    || v.as_f64()
                        .is_some_and(|f| f.is_finite() && f.fract() == 0.0)
            }
            ParamType::Boolean => v.is_boolean(),
            ParamType::TextList => v
                .as_array()
                .is_some_and(|items| items.iter().all(Value::is_string)),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ParamType::Text => "text",
            ParamType::Number => "number",
            ParamType::Integer => "integer",
            ParamType::Boolean => "boolean",
            ParamType::TextList => "list-of-text",
        }
    }

    fn json_schema(self) -> Value {
        match self {
            ParamType::Text => json!({"type": "string"}),
            ParamType::Number => json!({"type": "number"}),
            ParamType::Integer => json!({"type": "integer"}),
            ParamType::Boolean => json!({"type": "boolean"}),
            ParamType::TextList => json!({"type": "array", "items": {"type": "string"}}),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSpec {
    #[serde(rename = "type")]
    pub ty: ParamType,
    pub required: bool,
    pub description: String,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SpecError {
    #[error("invalid tool name {0:?}")]
    InvalidName(String),
    #[error("duplicate parameter {0:?}")]
    DuplicateParam(String),
    #[error("tool {0:?} already registered")]
    DuplicateTool(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolSpec {
    pub name: String,
    pub description: String,
    pub parameters: IndexMap<String, ParamSpec>,
}

pub fn valid_tool_name(name: &str) -> bool {
    (1..=64).contains(&name.len())
        && name
            .bytes()
            .all(|b| b.is_ascii_lowercase() || b.is_ascii_digit() || b == b'_')
}

impl ToolSpec {
    pub fn new(name: &str, description: &str) -> Result<Self, SpecError> {
        if !valid_tool_name(name) {
            return Err(SpecError::InvalidName(name.to_string()));
        }
        Ok(Self {
            name: name.to_string(),
            description: description.to_string(),
            parameters: IndexMap::new(),
        })
    }

    pub fn param(
        mut self,
        name: &str,
        ty: ParamType,
        required: bool,
        description: &str,
    ) -> Result<Self, SpecError> {
        if self.parameters.contains_key(name) {
            return Err(SpecError::DuplicateParam(name.to_string()));
        }
        self.parameters.insert(
            name.to_string(),
            ParamSpec {
                ty,
                required,
                description: description.to_string(),
            },
        );
        Ok(self)
    }

    pub fn required(self, name: &str, ty: ParamType, description: &str) -> Self {
        self.param(name, ty, true, description)
            .expect("static tool spec")
    }

    pub fn optional(self, name: &str, ty: ParamType, description: &str) -> Self {
        self.param(name, ty, false, description)
            .expect("static tool spec")
    }

    /// Function-calling shape: name, description, JSON-Schema parameters.
    pub fn to_function_json(&self) -> Value {
        let mut props = Map::new();
        let mut required = Vec::new();
        for (name, p) in &self.parameters {
            let mut schema = p.ty.json_schema();
            schema["description"] = Value::String(p.description.clone());
            props.insert(name.clone(), schema);
            if p.required {
                required.push(Value::String(name.clone()));
            }
        }
        json!({
            "name": self.name,
            "description": self.description,
            "parameters": {
                "type": "object",
                "properties": props,
                "required": required,
            }
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolCall {
    pub id: String,
    pub name: String,
    #[serde(default = "empty_args")]
    pub arguments: Value,
}

fn empty_args() -> Value {
    Value::Object(Map::new())
}

impl ToolCall {
    pub fn new(id: impl Into<String>, name: impl Into<String>, arguments: Value) -> Self {
        Self {
            id: id.into(),
            name: name.into(),
            arguments,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContentPart {
    Text(String),
    ImageRef(String),
}

impl ContentPart {
    pub fn text(s: impl Into<String>) -> Self {
        ContentPart::Text(s.into())
    }

    pub fn as_text(&self) -> Option<&str> {
        match self {
            ContentPart::Text(t) => Some(t),
            ContentPart::ImageRef(_) => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum OutcomeStatus {
    Ok,
    Error,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolOutcome {
    pub tool_call_id: String,
    pub status: OutcomeStatus,
    pub content: Vec<ContentPart>,
}

impl ToolOutcome {
    pub fn ok(id: &str, content: Vec<ContentPart>) -> Self {
        Self {
            tool_call_id: id.to_string(),
            status: OutcomeStatus::Ok,
            content,
        }
    }

    pub fn error(id: &str, msg: impl Into<String>) -> Self {
        Self {
            tool_call_id: id.to_string(),
            status: OutcomeStatus::Error,
            content: vec![ContentPart::Text(msg.into())],
        }
    }

    pub fn is_ok(&self) -> bool {
        self.status == OutcomeStatus::Ok
    }

    /// Text parts joined by newlines.
    pub fn text(&self) -> String {
        self.content
            .iter()
            .filter_map(ContentPart::as_text)
            .collect::<Vec<_>>()
            .join("\n")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "violation", rename_all = "snake_case")]
pub enum Violation {
    NotAnObject,
    Missing { field: String },
    TypeMismatch { field: String, expected: ParamType },
    Unknown { field: String },
}

impl Violation {
    pub fn field(&self) -> Option<&str> {
        match self {
            Violation::NotAnObject => None,
            Violation::Missing { field }
            | Violation::TypeMismatch { field, .. }
            | Violation::Unknown { field } => Some(field),
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::NotAnObject => write!(f, "arguments must be an object"),
            Violation::Missing { field } => write!(f, "missing required {field:?}"),
            Violation::TypeMismatch { field, expected } => {
                write!(f, "type mismatch {field:?}: expected {}", expected.as_str())
            }
            Violation::Unknown { field } => write!(f, "unknown field {field:?}"),
        }
    }
}

/// All violations: per-parameter problems in declaration order, then unknown
/// fields. A null value on an optional field counts as absent.
pub fn validate_args(spec: &ToolSpec, args: &Value) -> Result<(), Vec<Violation>> {
    let Some(map) = args.as_object() else {
        return Err(vec![Violation::NotAnObject]);
    };
    let mut out = Vec::new();
    for (name, p) in &spec.parameters {
        match map.get(name) {
            None | Some(Value::Null) => {
                if p.required {
                    out.push(Violation::Missing {
                        field: name.clone(),
                    });
                }
            }
            Some(v) if !p.ty.accepts(v) => out.push(Violation::TypeMismatch {
                field: name.clone(),
                expected: p.ty,
            }),
            Some(_) => {}
        }
    }
    for key in map.keys() {
        if !spec.parameters.contains_key(key) {
            out.push(Violation::Unknown { field: key.clone() });
        }
    }
    if out.is_empty() {
        Ok(())
    } else {
        Err(out)
    }
}

pub type ToolFuture<'a> = BoxFuture<'a, Result<Vec<ContentPart>, String>>;

pub trait Tool: Send + Sync {
    fn spec(&self) -> &ToolSpec;

    /// Runs with already validated arguments. `Err` becomes an ERROR outcome.
    fn call<'a>(&'a self, args: &'a Map<String, Value>, ctx: &'a ToolContext) -> ToolFuture<'a>;
}

type ToolFn =
    dyn for<'a> Fn(&'a Map<String, Value>, &'a ToolContext) -> ToolFuture<'a> + Send + Sync;

/// Tool backed by a closure.
pub struct FnTool {
    spec: ToolSpec,
    f: Box<ToolFn>,
}

impl FnTool {
    pub fn new<F>(spec: ToolSpec, f: F) -> Arc<Self>
    where
        F: for<'a> Fn(&'a Map<String, Value>, &'a ToolContext) -> ToolFuture<'a>
            + Send
            + Sync
            + 'static,
    {
        Arc::new(Self {
            spec,
            f: Box::new(f),
        })
    }
}

impl Tool for FnTool {
    fn spec(&self) -> &ToolSpec {
        &self.spec
    }

    fn call<'a>(&'a self, args: &'a Map<String, Value>, ctx: &'a ToolContext) -> ToolFuture<'a> {
        (self.f)(args, ctx)
    }
}

#[derive(Clone, Default)]
pub struct ToolRegistry {
    tools: IndexMap<String, Arc<dyn Tool>>,
}

impl ToolRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, tool: Arc<dyn Tool>) -> Result<(), SpecError> {
        let name = tool.spec().name.clone();
        if self.tools.contains_key(&name) {
            return Err(SpecError::DuplicateTool(name));
        }
        self.tools.insert(name, tool);
        Ok(())
    }

    pub fn with(mut self, tool: Arc<dyn Tool>) -> Self {
        self.register(tool).expect("tool names are unique");
        self
    }

    pub fn get(&self, name: &str) -> Option<&Arc<dyn Tool>> {
        self.tools.get(name)
    }

    pub fn names(&self) -> Vec<&str> {
        self.tools.keys().map(String::as_str).collect()
    }

    pub fn specs(&self) -> Vec<ToolSpec> {
        self.tools.values().map(|t| t.spec().clone()).collect()
    }

    pub fn len(&self) -> usize {
        self.tools.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tools.is_empty()
    }
}

/// Never fails: unknown tools, bad arguments, tool errors and panics all
/// become ERROR outcomes.
pub async fn execute(call: &ToolCall, registry: &ToolRegistry, ctx: &ToolContext) -> ToolOutcome {
    let Some(tool) = registry.get(&call.name) else {
        return ToolOutcome::error(&call.id, format!("unknown tool {:?}", call.name));
    };
    if let Err(violations) = validate_args(tool.spec(), &call.arguments) {
        let text = violations
            .iter()
            .map(ToString::to_string)
            .collect::<Vec<_>>()
            .join("; ");
        return ToolOutcome::error(&call.id, format!("invalid arguments: {text}"));
    }
    let args = call.arguments.as_object().expect("validated as object");
    let fut = match std::panic::catch_unwind(AssertUnwindSafe(|| tool.call(args, ctx))) {
        Ok(f) => f,
        Err(_) => return ToolOutcome::error(&call.id, "tool panicked"),
    };
    match AssertUnwindSafe(fut).catch_unwind().await {
        Ok(Ok(content)) => ToolOutcome::ok(&call.id, content),
        Ok(Err(msg)) => ToolOutcome::error(&call.id, msg),
        Err(_) => ToolOutcome::error(&call.id, "tool panicked"),
    }
}

/// Helpers for reading validated arguments.
pub(crate) mod args {
    use serde_json::{Map, Value};

    pub fn text<'a>(a: &'a Map<String, Value>, k: &str) -> Option<&'a str> {
        a.get(k).and_then(Value::as_str)
    }

    pub fn int(a: &Map<String, Value>, k: &str) -> Option<i64> {
        a.get(k)
            .and_then(|v| v.as_i64().or_else(|| v.as_f64().map(|f| f as i64)))
    }

    pub fn number(a: &Map<String, Value>, k: &str) -> Option<f64> {
        a.get(k).and_then(Value::as_f64)
    }

    pub fn text_list(a: &Map<String, Value>, k: &str) -> Vec<String> {
        a.get(k)
            .and_then(Value::as_array)
            .map(|v| {
                v.iter()
                    .filter_map(|s| s.as_str().map(str::to_string))
                    .collect()
            })
            .unwrap_or_default()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn x_spec() -> ToolSpec {
        ToolSpec::new("t", "test")
            .unwrap()
            .required("x", ParamType::Number, "x")
    }

    #[test]
    fn validation_examples() {
        let s = x_spec();
        assert_eq!(validate_args(&s, &json!({"x": 3.5})), Ok(()));
        assert_eq!(
            validate_args(&s, &json!({})),
            Err(vec![Violation::Missing { field: "x".into() }])
        );
        assert_eq!(
            validate_args(&s, &json!({"x": "hi", "y": 1})),
            Err(vec![
                Violation::TypeMismatch {
                    field: "x".into(),
                    expected: ParamType::Number
                },
                Violation::Unknown { field: "y".into() }
            ])
        );
        assert_eq!(
            validate_args(&s, &json!([1])),
            Err(vec![Violation::NotAnObject])
        );
    }

    #[test]
    fn integer_and_list_types() {
        assert!(ParamType::Integer.accepts(&json!(3)));
        assert!(ParamType::Integer.accepts(&json!(3.0)));
        assert!(!ParamType::Integer.accepts(&json!(3.5)));
        assert!(ParamType::TextList.accepts(&json!(["a", "b"])));
        assert!(!ParamType::TextList.accepts(&json!(["a", 1])));
        assert!(!ParamType::Text.accepts(&json!(null)));
    }

    #[test]
    fn optional_null_is_absent() {
        let s = ToolSpec::new("t", "")
            .unwrap()
            .optional("k", ParamType::Integer, "");
        assert_eq!(validate_args(&s, &json!({"k": null})), Ok(()));
    }

    #[test]
    fn spec_names() {
        assert!(ToolSpec::new("get_distance_to_objects", "").is_ok());
        assert!(ToolSpec::new("", "").is_err());
        assert!(ToolSpec::new("Bad", "").is_err());
        assert!(ToolSpec::new(&"a".repeat(65), "").is_err());
        assert!(x_spec().param("x", ParamType::Text, false, "").is_err());
    }

    #[test]
    fn function_json_shape() {
        let s = ToolSpec::new("get_distance_to_objects", "distances")
            .unwrap()
            .required("object_names", ParamType::TextList, "labels")
            .optional("limit", ParamType::Integer, "max lines");
        assert_eq!(
            s.to_function_json(),
            json!({
                "name": "get_distance_to_objects",
                "description": "distances",
                "parameters": {
                    "type": "object",
                    "properties": {
                        "object_names": {"type": "array", "items": {"type": "string"}, "description": "labels"},
                        "limit": {"type": "integer", "description": "max lines"}
                    },
                    "required": ["object_names"]
                }
            })
        );
    }

    #[test]
    fn content_part_json() {
        assert_eq!(
            serde_json::to_value(ContentPart::ImageRef("tractor".into())).unwrap(),
            json!({"image_ref": "tractor"})
        );
        assert_eq!(
            serde_json::to_value(ContentPart::text("hi")).unwrap(),
            json!({"text": "hi"})
        );
    }

    #[tokio::test]
    async fn execute_is_closed() {
        let ctx = ToolContext::new(crate::msgbus::Bus::new(), "t");
        let reg = ToolRegistry::new()
            .with(FnTool::new(x_spec(), |_, _| {
                async { Err("boom".to_string()) }.boxed()
            }))
            .with(FnTool::new(ToolSpec::new("panics", "").unwrap(), |_, _| {
                async { panic!("bad tool") }.boxed()
            }));
        let o = execute(&ToolCall::new("1", "nope", json!({})), &reg, &ctx).await;
        assert_eq!(o.status, OutcomeStatus::Error);
        assert!(o.text().contains("unknown tool"));
        let o = execute(&ToolCall::new("2", "t", json!({"x": "a"})), &reg, &ctx).await;
        assert!(o.text().starts_with("invalid arguments"));
        let o = execute(&ToolCall::new("3", "t", json!({"x": 1})), &reg, &ctx).await;
        assert_eq!(o.text(), "boom");
        let o = execute(&ToolCall::new("4", "panics", json!({})), &reg, &ctx).await;
        assert_eq!(o.text(), "tool panicked");
        assert_eq!(o.tool_call_id, "4");
    }
}
