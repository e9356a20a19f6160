use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::client::{ChatClient, ChatMessage, Role};
use super::tools::{dispatch_tool, ToolCall, ToolRegistry, ToolResult};
use super::RagError;
use crate::digest::sha256_hex;

/// One client turn, classified.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Reply {
    Answer(String),
    ToolRequest {
        name: String,
        arguments: BTreeMap<String, String>,
    },
    Malformed {
        name: Option<String>,
        reason: String,
    },
}

/// A reply is a tool request when it is a JSON object with a `tool` key.
/// Argument values must be scalars; they are passed on as strings.
pub fn parse_reply(text: &str) -> Reply {
    let trimmed = text.trim();
    if !trimmed.starts_with('{') {
        return Reply::Answer(text.to_string());
    }
    let Ok(Value::Object(obj)) = serde_json::from_str::<Value>(trimmed) else {
        return Reply::Answer(text.to_string());
    };
    let Some(tool) = obj.get("tool") else {
        return Reply::Answer(text.to_string());
    };
    let name = match tool {
        Value::String(s) if !s.trim().is_empty() => s.clone(),
        _ => {
            return Reply::Malformed {
                name: None,
                reason: "`tool` must be a non-empty string".into(),
            }
        }
    };
    let mut arguments = BTreeMap::new();
    match obj.get("arguments") {
        None | Some(Value::Null) => {}
        Some(Value::Object(args)) => {
            for (k, v) in args {
                let s = match v {
                    Value::String(s) => s.clone(),
                    Value::Number(n) => n.to_string(),
                    Value::Bool(b) => b.to_string(),
                    _ => {
                        return Reply::Malformed {
                            name: Some(name),
                            reason: format!("argument `{k}` is not a scalar"),
                        }
                    }
                };
                arguments.insert(k.clone(), s);
            }
        }
        Some(_) => {
            return Reply::Malformed {
                name: Some(name),
                reason: "`arguments` must be an object".into(),
            }
        }
    }
    Reply::ToolRequest { name, arguments }
}

/// Returns the id on the last `SOURCE: <id>` line, if any.
pub fn parse_attribution(answer: &str) -> Option<String> {
    answer
        .lines()
        .rev()
        .filter_map(|line| line.trim().strip_prefix("SOURCE:"))
        .map(str::trim)
        .find(|id| !id.is_empty())
        .map(str::to_string)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GenerationStatus {
    Completed,
    /// At least one tool request failed validation; it is in the trace with
    /// an error result.
    MalformedToolRequest,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationResult {
    pub answer: String,
    pub attributed_doc_id: Option<String>,
    pub tool_trace: Vec<(ToolCall, ToolResult)>,
    pub prompt_digest: String,
    pub status: GenerationStatus,
}

fn tool_message(call: &ToolCall, result: &ToolResult) -> String {
    let status = serde_json::to_value(result.status)
        .ok()
        .and_then(|v| v.as_str().map(str::to_string))
        .unwrap_or_default();
    format!(
        "TOOL RESULT {} ({}) status={}:\n{}",
        call.call_id, call.name, status, result.payload
    )
}

/// Sends the prompt, services up to `max_depth` tool requests, and parses
/// the final answer. The client is called at most `max_depth + 1` times.
pub fn run_generation(
    client: &dyn ChatClient,
    prompt: &str,
    registry: &ToolRegistry,
    max_depth: usize,
) -> Result<GenerationResult, RagError> {
    let mut messages = vec![ChatMessage::new(Role::User, prompt)];
    let mut trace: Vec<(ToolCall, ToolResult)> = Vec::new();
    let mut status = GenerationStatus::Completed;
    loop {
        let reply = client.complete(&messages)?;
        let (call, result) = match parse_reply(&reply) {
            Reply::Answer(answer) => {
                return Ok(GenerationResult {
                    attributed_doc_id: parse_attribution(&answer),
                    answer,
                    tool_trace: trace,
                    prompt_digest: sha256_hex(prompt.as_bytes()),
                    status,
                });
            }
            _ if trace.len() >= max_depth => return Err(RagError::ToolDepthExceeded { max_depth }),
            Reply::ToolRequest { name, arguments } => {
                let call = ToolCall {
                    name,
                    arguments,
                    call_id: format!("call-{}", trace.len() + 1),
                };
                let result = match registry.validate(&call) {
                    Ok(()) => dispatch_tool(&call, registry),
                    Err(reason) => {
                        status = GenerationStatus::MalformedToolRequest;
                        ToolResult::error(&call.call_id, reason)
                    }
                };
                (call, result)
            }
            Reply::Malformed { name, reason } => {
                status = GenerationStatus::MalformedToolRequest;
                let call = ToolCall {
                    name: name.unwrap_or_default(),
                    arguments: BTreeMap::new(),
                    call_id: format!("call-{}", trace.len() + 1),
                };
                let result =
                    ToolResult::error(&call.call_id, format!("MalformedToolRequest: {reason}"));
                (call, result)
            }
        };
        tracing::debug!(call_id = %call.call_id, tool = %call.name, status = ?result.status, "tool step");
        messages.push(ChatMessage::new(Role::Assistant, reply));
        messages.push(ChatMessage::new(Role::Tool, tool_message(&call, &result)));
        trace.push((call, result));
    }
}
