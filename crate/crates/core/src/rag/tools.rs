use std::collections::BTreeMap;
use std::fmt;
use std::sync::mpsc;
use std::sync::Arc;
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::corpus::KnowledgeDocument;

pub const DEFAULT_TOOL_TIMEOUT: Duration = Duration::from_secs(5);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamKind {
    String,
    Number,
    Bool,
}

impl ParamKind {
    fn accepts(self, value: &str) -> bool {
        match self {
            ParamKind::String => true,
            ParamKind::Number => value.trim().parse::<f64>().is_ok_and(f64::is_finite),
            ParamKind::Bool => matches!(value, "true" | "false"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamSpec {
    pub name: String,
    pub kind: ParamKind,
    pub required: bool,
}

impl ParamSpec {
    pub fn required(name: &str, kind: ParamKind) -> Self {
        Self {
            name: name.to_string(),
            kind,
            required: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolSpec {
    pub name: String,
    pub description: String,
    pub params: Vec<ParamSpec>,
}

pub type ToolHandler =
    Arc<dyn Fn(&BTreeMap<String, String>) -> Result<String, String> + Send + Sync>;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolCall {
    pub name: String,
    pub arguments: BTreeMap<String, String>,
    pub call_id: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ToolStatus {
    Ok,
    Error,
    Timeout,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolResult {
    pub call_id: String,
    pub status: ToolStatus,
    pub payload: String,
}

impl ToolResult {
    pub fn error(call_id: &str, payload: impl Into<String>) -> Self {
        Self {
            call_id: call_id.to_string(),
            status: ToolStatus::Error,
            payload: payload.into(),
        }
    }
}

struct RegisteredTool {
    spec: ToolSpec,
    handler: ToolHandler,
}

/// Declared tools with their parameter schemas and handlers. Handlers may be
/// invoked concurrently and must be reentrant.
#[derive(Clone)]
pub struct ToolRegistry {
    tools: BTreeMap<String, Arc<RegisteredTool>>,
    timeout: Duration,
}

impl fmt::Debug for ToolRegistry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ToolRegistry")
            .field("tools", &self.tools.keys().collect::<Vec<_>>())
            .field("timeout", &self.timeout)
            .finish()
    }
}

impl Default for ToolRegistry {
    fn default() -> Self {
        Self::new()
    }
}

impl ToolRegistry {
    pub fn new() -> Self {
        Self {
            tools: BTreeMap::new(),
            timeout: DEFAULT_TOOL_TIMEOUT,
        }
    }

    pub fn with_timeout(mut self, timeout: Duration) -> Self {
        self.timeout = timeout;
        self
    }

    pub fn timeout(&self) -> Duration {
        self.timeout
    }

    pub fn register(
        &mut self,
        spec: ToolSpec,
        handler: impl Fn(&BTreeMap<String, String>) -> Result<String, String> + Send + Sync + 'static,
    ) {
        let handler: ToolHandler = Arc::new(handler);
        self.tools.insert(
            spec.name.clone(),
            Arc::new(RegisteredTool { spec, handler }),
        );
    }

    pub fn spec(&self, name: &str) -> Option<&ToolSpec> {
        self.tools.get(name).map(|t| &t.spec)
    }

    pub fn specs(&self) -> impl Iterator<Item = &ToolSpec> {
        self.tools.values().map(|t| &t.spec)
    }

    /// Checks argument names and types against the declared parameters.
    pub fn validate(&self, call: &ToolCall) -> Result<(), String> {
        let spec = self
            .spec(&call.name)
            .ok_or_else(|| format!("UnknownTool: {}", call.name))?;
        for key in call.arguments.keys() {
            if !spec.params.iter().any(|p| &p.name == key) {
                return Err(format!("InvalidArguments: unexpected parameter `{key}`"));
            }
        }
        for p in &spec.params {
            match call.arguments.get(&p.name) {
                None if p.required => {
                    return Err(format!("InvalidArguments: missing parameter `{}`", p.name));
                }
                Some(v) if !p.kind.accepts(v) => {
                    return Err(format!(
                        "InvalidArguments: `{}` is not a valid {:?}",
                        p.name, p.kind
                    ));
                }
                _ => {}
            }
        }
        Ok(())
    }

    /// Fixture-backed stand-ins for bench tooling: `lookup_sequence(id)` reads
    /// test steps from `documents`, `signal_metadata(name)` consults a small
    /// signal table, and `trigger_action(action)` acknowledges known bench
    /// actions.
    pub fn fixture(documents: &[KnowledgeDocument]) -> Self {
        let sequences: BTreeMap<String, String> = documents
            .iter()
            .filter_map(|d| {
                let steps = d.sequences.as_ref()?;
                let text = steps
                    .iter()
                    .enumerate()
                    .map(|(i, s)| format!("{}. {s}", i + 1))
                    .collect::<Vec<_>>()
                    .join("\n");
                Some((d.id.clone(), text))
            })
            .collect();
        let mut reg = Self::new();
        reg.register(
            ToolSpec {
                name: "lookup_sequence".into(),
                description: "Return the test steps of a test case by document id.".into(),
                params: vec![ParamSpec::required("id", ParamKind::String)],
            },
            move |args| {
                let id = &args["id"];
                sequences
                    .get(id)
                    .cloned()
                    .ok_or_else(|| format!("no test sequence for `{id}`"))
            },
        );
        reg.register(
            ToolSpec {
                name: "signal_metadata".into(),
                description: "Return bus metadata for a named signal.".into(),
                params: vec![ParamSpec::required("name", ParamKind::String)],
            },
            |args| {
                let name = &args["name"];
                SIGNALS
                    .iter()
                    .find(|(n, ..)| n.eq_ignore_ascii_case(name))
                    .map(|(n, bus, id, unit, range)| {
                        format!("signal={n} bus={bus} frame_id={id} unit={unit} range={range}")
                    })
                    .ok_or_else(|| format!("unknown signal `{name}`"))
            },
        );
        reg.register(
            ToolSpec {
                name: "trigger_action".into(),
                description: "Invoke a procedural bench action.".into(),
                params: vec![ParamSpec::required("action", ParamKind::String)],
            },
            |args| {
                let action = &args["action"];
                if ACTIONS.contains(&action.as_str()) {
                    Ok(format!("action `{action}` acknowledged"))
                } else {
                    Err(format!("unsupported action `{action}`"))
                }
            },
        );
        reg
    }
}

const SIGNALS: &[(&str, &str, &str, &str, &str)] = &[
    ("VehSpd", "CAN1", "0x1A0", "km/h", "0..=320"),
    ("WiperStat", "CAN2", "0x2B4", "enum", "0..=3"),
    ("EngSpd", "CAN1", "0x0C0", "rpm", "0..=8000"),
    ("BattVolt", "CAN3", "0x3F1", "V", "0..=18"),
    ("DoorLockSt", "CAN2", "0x2C8", "enum", "0..=2"),
];

const ACTIONS: &[&str] = &[
    "start_logging",
    "stop_logging",
    "reset_bench",
    "power_cycle_ecu",
    "load_restbus",
];

/// Runs one tool call under the registry's wall-clock timeout. Every failure
/// mode (unknown tool, bad arguments, handler error or panic, timeout) comes
/// back as a [`ToolResult`]; nothing propagates to the caller.
pub fn dispatch_tool(call: &ToolCall, registry: &ToolRegistry) -> ToolResult {
    let Some(tool) = registry.tools.get(&call.name) else {
        return ToolResult::error(&call.call_id, format!("UnknownTool: {}", call.name));
    };
    if let Err(reason) = registry.validate(call) {
        return ToolResult::error(&call.call_id, reason);
    }
    let (tx, rx) = mpsc::sync_channel(1);
    let handler = Arc::clone(&tool.handler);
    let args = call.arguments.clone();
    let spawned = thread::Builder::new()
        .name(format!("tool-{}", call.name))
        .spawn(move || {
            let _ = tx.send(handler(&args));
        });
    if let Err(e) = spawned {
        return ToolResult::error(&call.call_id, format!("could not start handler: {e}"));
    }
    match rx.recv_timeout(registry.timeout) {
        Ok(Ok(payload)) => ToolResult {
            call_id: call.call_id.clone(),
            status: ToolStatus::Ok,
            payload,
        },
        Ok(Err(reason)) => ToolResult::error(&call.call_id, reason),
        Err(mpsc::RecvTimeoutError::Timeout) => {
            tracing::warn!(tool = %call.name, call_id = %call.call_id, "tool timed out");
            ToolResult {
                call_id: call.call_id.clone(),
                status: ToolStatus::Timeout,
                payload: format!("timed out after {} ms", registry.timeout.as_millis()),
            }
        }
        Err(mpsc::RecvTimeoutError::Disconnected) => {
            ToolResult::error(&call.call_id, "handler panicked")
        }
    }
}
