//! Deterministic scripted backend for tests and network-free runs.
//!
//! A script is an ordered rule list. Each incoming request is answered by
//! the first matching rule that still has uses left; identical requests
//! always take the same path through the rules, so a scripted run is a pure
//! function of (corpus, script, seed). Responses are raw wire text and go
//! through the same parsers as live responses.

use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::subtasks::SubtaskKind;

use super::{Backend, GatewayError, GatewayRequest};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScriptRule {
    /// propose | score | solve | feedback | optimize; omit to match any.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub call: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subtask: Option<SubtaskKind>,
    /// Matches the number of steps on the request path.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path_len: Option<usize>,
    /// Substring match against the last step on the path.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub last_step_contains: Option<String>,
    /// Maximum number of times this rule may answer; omit for unlimited.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub times: Option<usize>,
    pub response: String,
}

impl ScriptRule {
    fn matches(&self, request: &GatewayRequest) -> bool {
        if let Some(call) = &self.call {
            if call != request.call.name() {
                return false;
            }
        }
        if let Some(subtask) = self.subtask {
            if subtask != request.subtask {
                return false;
            }
        }
        if let Some(path_len) = self.path_len {
            if path_len != request.path_steps.len() {
                return false;
            }
        }
        if let Some(needle) = &self.last_step_contains {
            let last = request.path_steps.last().map(|s| s.as_str()).unwrap_or("");
            if !last.contains(needle) {
                return false;
            }
        }
        true
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct Script {
    pub rules: Vec<ScriptRule>,
    /// Model tag recorded in sample provenance.
    #[serde(default = "default_tag")]
    pub model_tag: String,
}

fn default_tag() -> String {
    "scripted".to_string()
}

impl Script {
    pub fn from_json(text: &str) -> Result<Self, GatewayError> {
        serde_json::from_str(text).map_err(|e| GatewayError::Config(format!("script: {e}")))
    }
}

pub struct ScriptedBackend {
    script: Script,
    uses: Mutex<Vec<usize>>,
}

impl ScriptedBackend {
    pub fn new(script: Script) -> Self {
        let uses = Mutex::new(vec![0; script.rules.len()]);
        ScriptedBackend { script, uses }
    }
}

impl Backend for ScriptedBackend {
    fn complete(&self, request: &GatewayRequest) -> Result<String, GatewayError> {
        let mut uses = self.uses.lock().expect("uses lock");
        for (i, rule) in self.script.rules.iter().enumerate() {
            if !rule.matches(request) {
                continue;
            }
            if let Some(times) = rule.times {
                if uses[i] >= times {
                    continue;
                }
            }
            uses[i] += 1;
            return Ok(rule.response.clone());
        }
        Err(GatewayError::ScriptMiss(format!(
            "{} call, subtask {}, path_len {}",
            request.call.name(),
            request.subtask,
            request.path_steps.len()
        )))
    }

    fn model_tag(&self) -> String {
        self.script.model_tag.clone()
    }
}
