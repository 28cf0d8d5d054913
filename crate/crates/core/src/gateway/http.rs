//! Chat-completion HTTP backend.
//!
//! Speaks the standard JSON protocol: a `messages` array plus `model` and
//! `temperature`. The authentication token comes from an environment
//! variable, never from flags or the manifest.

use serde::{Deserialize, Serialize};

use super::{Backend, CallKind, GatewayError, GatewayRequest};

pub const DEFAULT_AUTH_ENV: &str = "COTFORGE_API_TOKEN";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BackendConfig {
    pub endpoint: String,
    pub model: String,
    /// Kept at 0 for reproduction runs.
    pub temperature: f64,
    pub timeout_secs: u64,
    pub retry_budget: usize,
    /// Name of the environment variable holding the bearer token.
    pub auth_env_var: String,
}

impl Default for BackendConfig {
    fn default() -> Self {
        BackendConfig {
            endpoint: String::new(),
            model: String::new(),
            temperature: 0.0,
            timeout_secs: 120,
            retry_budget: 3,
            auth_env_var: DEFAULT_AUTH_ENV.to_string(),
        }
    }
}

#[derive(Serialize)]
struct ChatMessage<'a> {
    role: &'a str,
    content: String,
}

#[derive(Serialize)]
struct ChatRequest<'a> {
    model: &'a str,
    temperature: f64,
    messages: Vec<ChatMessage<'a>>,
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<ChatChoice>,
}

#[derive(Deserialize)]
struct ChatChoice {
    message: ChatResponseMessage,
}

#[derive(Deserialize)]
struct ChatResponseMessage {
    content: String,
}

fn system_prompt(request: &GatewayRequest) -> String {
    let task = match request.subtask {
        crate::subtasks::SubtaskKind::FileLocalization => "file localization",
        crate::subtasks::SubtaskKind::FaultLocalization => "fault localization",
        crate::subtasks::SubtaskKind::PatchGeneration => "patch generation",
    };
    let contract = match &request.call {
        CallKind::Propose { count } => format!(
            "Propose the next reasoning step. Output exactly {count} distinct numbered \
             candidates, one per line, as `1. <step>` through `{count}. <step>`. \
             Output nothing else."
        ),
        CallKind::Score => "Judge how well the reasoning path aligns with the ground truth. \
             Score 0-10, where 10 means the path leads exactly to the ground truth. \
             Respond with a single line `SCORE: <integer>`."
            .to_string(),
        CallKind::Solve => match request.subtask {
            crate::subtasks::SubtaskKind::FileLocalization => {
                "Following the reasoning path, output the repo-relative paths of the files \
                 to modify, one per line, inside a fenced code block."
                    .to_string()
            }
            crate::subtasks::SubtaskKind::FaultLocalization => {
                "Following the reasoning path, output the code elements to modify, one per \
                 line as `<kind> <file> <qualified_name>` where kind is class, method, \
                 function, or global."
                    .to_string()
            }
            crate::subtasks::SubtaskKind::PatchGeneration => {
                "Following the reasoning path, output the edits in strict search-replace \
                 format: the file path on its own line, then `<<<<<<< SEARCH`, the exact \
                 original lines, `=======`, the replacement lines, and `>>>>>>> REPLACE`."
                    .to_string()
            }
        },
        CallKind::Feedback => "Compare the reasoning path against the ground truth. If the path is fully \
             correct respond with the single line `NO_FEEDBACK`. Otherwise respond with \
             `FEEDBACK:` followed by concrete corrective instructions for the latest step."
            .to_string(),
        CallKind::Optimize { .. } => "Rewrite only the flawed reasoning step according to the feedback. Output \
             the replacement step text alone; do not produce any subsequent steps."
            .to_string(),
    };
    format!("You are assisting with repository issue resolution ({task}).\n{contract}")
}

fn user_prompt(request: &GatewayRequest) -> String {
    let mut out = format!("## Issue\n{}\n\n## Context\n{}\n", request.issue_text, request.payload);
    if !request.path_steps.is_empty() {
        out.push_str("\n## Reasoning path so far\n");
        for (i, step) in request.path_steps.iter().enumerate() {
            out.push_str(&format!("{}. {step}\n", i + 1));
        }
    }
    if let Some(gt) = &request.ground_truth_view {
        out.push_str(&format!("\n## Ground truth\n{gt}\n"));
    }
    if let CallKind::Optimize { step, feedback } = &request.call {
        out.push_str(&format!(
            "\n## Step to rewrite\n{step}\n\n## Feedback\n{feedback}\n"
        ));
    }
    out
}

pub struct HttpBackend {
    config: BackendConfig,
    token: String,
    client: reqwest::blocking::Client,
}

impl HttpBackend {
    /// Fails fast when the auth environment variable is missing.
    pub fn new(config: BackendConfig) -> Result<Self, GatewayError> {
        let token = std::env::var(&config.auth_env_var).map_err(|_| {
            GatewayError::Config(format!(
                "auth token environment variable `{}` is not set",
                config.auth_env_var
            ))
        })?;
        let client = reqwest::blocking::Client::builder()
            .timeout(std::time::Duration::from_secs(config.timeout_secs))
            .build()
            .map_err(|e| GatewayError::Config(e.to_string()))?;
        Ok(HttpBackend {
            config,
            token,
            client,
        })
    }

    /// Message array sent for a request; exposed for prompt golden tests.
    pub fn render_messages(request: &GatewayRequest) -> Vec<(String, String)> {
        vec![
            ("system".to_string(), system_prompt(request)),
            ("user".to_string(), user_prompt(request)),
        ]
    }
}

impl Backend for HttpBackend {
    fn complete(&self, request: &GatewayRequest) -> Result<String, GatewayError> {
        let body = ChatRequest {
            model: &self.config.model,
            temperature: self.config.temperature,
            messages: vec![
                ChatMessage {
                    role: "system",
                    content: system_prompt(request),
                },
                ChatMessage {
                    role: "user",
                    content: user_prompt(request),
                },
            ],
        };
        let response = self
            .client
            .post(&self.config.endpoint)
            .bearer_auth(&self.token)
            .json(&body)
            .send()
            .map_err(|e| GatewayError::Transport(e.to_string()))?;
        if !response.status().is_success() {
            return Err(GatewayError::Transport(format!(
                "HTTP {}",
                response.status()
            )));
        }
        let parsed: ChatResponse = response
            .json()
            .map_err(|e| GatewayError::Transport(format!("response body: {e}")))?;
        parsed
            .choices
            .into_iter()
            .next()
            .map(|c| c.message.content)
            .ok_or_else(|| GatewayError::Transport("empty choices array".into()))
    }

    fn model_tag(&self) -> String {
        self.config.model.clone()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::subtasks::SubtaskKind;

    #[test]
    fn missing_auth_env_is_a_config_error() {
        let config = BackendConfig {
            endpoint: "http://localhost:1/v1/chat/completions".into(),
            model: "m".into(),
            auth_env_var: "COTFORGE_TEST_UNSET_TOKEN".into(),
            ..BackendConfig::default()
        };
        assert!(matches!(
            HttpBackend::new(config),
            Err(GatewayError::Config(_))
        ));
    }

    #[test]
    fn score_prompt_carries_ground_truth_and_path() {
        let request = GatewayRequest {
            call: CallKind::Score,
            subtask: SubtaskKind::FileLocalization,
            issue_text: "crash on import".into(),
            payload: "tree".into(),
            ground_truth_view: Some("Modified files:\ncore.py\n".into()),
            path_steps: vec!["inspect the traceback".into()],
        };
        let messages = HttpBackend::render_messages(&request);
        assert_eq!(messages[0].0, "system");
        assert!(messages[0].1.contains("SCORE:"));
        assert!(messages[1].1.contains("## Ground truth"));
        assert!(messages[1].1.contains("1. inspect the traceback"));
    }

    #[test]
    fn solve_prompt_never_contains_ground_truth() {
        let request = GatewayRequest {
            call: CallKind::Solve,
            subtask: SubtaskKind::PatchGeneration,
            issue_text: "i".into(),
            payload: "ctx".into(),
            ground_truth_view: None,
            path_steps: vec!["s".into()],
        };
        let messages = HttpBackend::render_messages(&request);
        assert!(!messages[1].1.contains("## Ground truth"));
        assert!(messages[0].1.contains("SEARCH"));
    }
}
