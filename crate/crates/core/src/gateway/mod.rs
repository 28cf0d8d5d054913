//! Reasoning-model abstraction.
//!
//! A [`Backend`] turns one structured request into raw response text; the
//! [`Gateway`] wrapper owns retries, wire-format parsing, and call
//! recording. Backends: [`http::HttpBackend`] for chat-completion APIs,
//! [`scripted::ScriptedBackend`] for deterministic fixtures, and
//! [`replay::ReplayBackend`] for network-free reconstruction from an event
//! log.
//!
//! Oracle visibility is asymmetric on purpose: score and feedback calls
//! carry a rendered ground-truth view, propose and solve calls never do, so
//! accepted reasoning text cannot quote the oracle verbatim.

pub mod http;
pub mod replay;
pub mod scripted;
pub mod wire;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::subtasks::{CandidateSolution, SubtaskKind};
use crate::validators::GroundTruth;

pub use wire::Feedback;

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("transport: {0}")]
    Transport(String),
    #[error("{call} response malformed ({reason})")]
    Format {
        call: String,
        reason: String,
        raw: String,
    },
    #[error("configuration: {0}")]
    Config(String),
    #[error("scripted backend has no response for {0}")]
    ScriptMiss(String),
    #[error("replay log exhausted or diverged: {0}")]
    ReplayGap(String),
}

impl GatewayError {
    /// Transport and format failures are retried; everything else is
    /// structural and fails fast.
    fn retryable(&self) -> bool {
        matches!(self, GatewayError::Transport(_) | GatewayError::Format { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "call", rename_all = "snake_case")]
pub enum CallKind {
    Propose { count: usize },
    Score,
    Solve,
    Feedback,
    Optimize { step: String, feedback: String },
}

impl CallKind {
    pub fn name(&self) -> &'static str {
        match self {
            CallKind::Propose { .. } => "propose",
            CallKind::Score => "score",
            CallKind::Solve => "solve",
            CallKind::Feedback => "feedback",
            CallKind::Optimize { .. } => "optimize",
        }
    }
}

/// One fully-specified model request. Hashing this is what makes runs
/// replayable and auditable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GatewayRequest {
    #[serde(flatten)]
    pub call: CallKind,
    pub subtask: SubtaskKind,
    pub issue_text: String,
    pub payload: String,
    /// Present exactly for score and feedback calls.
    pub ground_truth_view: Option<String>,
    pub path_steps: Vec<String>,
}

impl GatewayRequest {
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("request serializes");
        let digest = Sha256::digest(&bytes);
        let mut out = String::with_capacity(64);
        for b in digest {
            out.push_str(&format!("{b:02x}"));
        }
        out
    }
}

/// Renders the oracle for scorer/feedback prompts.
pub fn render_ground_truth_view(kind: SubtaskKind, gt: &GroundTruth) -> String {
    match kind {
        SubtaskKind::FileLocalization => {
            let mut out = String::from("Modified files:\n");
            for file in &gt.modified_files {
                out.push_str(file);
                out.push('\n');
            }
            out
        }
        SubtaskKind::FaultLocalization => {
            let mut out = String::from("Modified elements:\n");
            for (kind, file, name) in gt.element_keys() {
                out.push_str(&format!("{kind} {file} {name}\n"));
            }
            out
        }
        SubtaskKind::PatchGeneration => {
            let mut out = String::from("Gold changes:\n");
            for (path, hunks) in &gt.gold_hunks {
                for hunk in hunks {
                    out.push_str(&format!("--- {path}\n"));
                    for line in hunk.pre_lines() {
                        out.push_str(&format!("-{line}\n"));
                    }
                    for line in hunk.post_lines() {
                        out.push_str(&format!("+{line}\n"));
                    }
                }
            }
            out
        }
    }
}

/// A backend turns one request into raw response text.
pub trait Backend: Send + Sync {
    fn complete(&self, request: &GatewayRequest) -> Result<String, GatewayError>;
    /// Identifier recorded in sample provenance.
    fn model_tag(&self) -> String;
}

/// Record of one completed (or failed) backend call.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CallRecord {
    pub call: String,
    pub request_hash: String,
    pub raw_response: String,
    pub ok: bool,
}

/// Retrying, recording front end over a backend.
pub struct Gateway<'a> {
    backend: &'a dyn Backend,
    retry_budget: usize,
    records: std::sync::Mutex<Vec<CallRecord>>,
}

impl<'a> Gateway<'a> {
    pub fn new(backend: &'a dyn Backend) -> Self {
        Gateway {
            backend,
            retry_budget: 3,
            records: std::sync::Mutex::new(Vec::new()),
        }
    }

    pub fn model_tag(&self) -> String {
        self.backend.model_tag()
    }

    /// Drains the records accumulated since the last call; the engine folds
    /// them into its event log.
    pub fn take_records(&self) -> Vec<CallRecord> {
        std::mem::take(&mut self.records.lock().expect("records lock"))
    }

    pub fn call_count(&self) -> usize {
        self.records.lock().expect("records lock").len()
    }

    fn record(&self, request: &GatewayRequest, raw: &str, ok: bool) {
        self.records.lock().expect("records lock").push(CallRecord {
            call: request.call.name().to_string(),
            request_hash: request.hash(),
            raw_response: raw.to_string(),
            ok,
        });
    }

    /// Issues the request with identical-input retries, then parses the raw
    /// response with `parse`.
    fn call<T>(
        &self,
        request: &GatewayRequest,
        parse: impl Fn(&str) -> Result<T, GatewayError>,
    ) -> Result<T, GatewayError> {
        let mut last_err = None;
        for _ in 0..self.retry_budget {
            let raw = match self.backend.complete(request) {
                Ok(raw) => raw,
                Err(e) => {
                    if e.retryable() {
                        last_err = Some(e);
                        continue;
                    }
                    return Err(e);
                }
            };
            match parse(&raw) {
                Ok(value) => {
                    self.record(request, &raw, true);
                    return Ok(value);
                }
                Err(e) => {
                    self.record(request, &raw, false);
                    if !e.retryable() {
                        return Err(e);
                    }
                    last_err = Some(e);
                }
            }
        }
        Err(last_err.expect("at least one attempt"))
    }

    pub fn propose_steps(
        &self,
        mut request: GatewayRequest,
        count: usize,
    ) -> Result<Vec<String>, GatewayError> {
        request.call = CallKind::Propose { count };
        request.ground_truth_view = None;
        self.call(&request, |raw| wire::parse_steps(raw, count))
    }

    pub fn score_path(&self, mut request: GatewayRequest) -> Result<u8, GatewayError> {
        request.call = CallKind::Score;
        debug_assert!(request.ground_truth_view.is_some());
        self.call(&request, wire::parse_score)
    }

    pub fn solve_path(
        &self,
        mut request: GatewayRequest,
    ) -> Result<CandidateSolution, GatewayError> {
        request.call = CallKind::Solve;
        request.ground_truth_view = None;
        let subtask = request.subtask;
        self.call(&request, |raw| wire::parse_solution(subtask, raw))
    }

    pub fn feedback(&self, mut request: GatewayRequest) -> Result<Feedback, GatewayError> {
        request.call = CallKind::Feedback;
        debug_assert!(request.ground_truth_view.is_some());
        self.call(&request, wire::parse_feedback)
    }

    pub fn optimize_step(
        &self,
        mut request: GatewayRequest,
        step: &str,
        feedback: &str,
    ) -> Result<String, GatewayError> {
        request.call = CallKind::Optimize {
            step: step.to_string(),
            feedback: feedback.to_string(),
        };
        self.call(&request, wire::parse_optimized_step)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::{AtomicUsize, Ordering};

    struct FlakyBackend {
        calls: AtomicUsize,
        fail_first: usize,
    }

    impl Backend for FlakyBackend {
        fn complete(&self, _request: &GatewayRequest) -> Result<String, GatewayError> {
            let n = self.calls.fetch_add(1, Ordering::SeqCst);
            if n < self.fail_first {
                Err(GatewayError::Transport("boom".into()))
            } else {
                Ok("SCORE: 7".into())
            }
        }
        fn model_tag(&self) -> String {
            "flaky".into()
        }
    }

    fn score_request() -> GatewayRequest {
        GatewayRequest {
            call: CallKind::Score,
            subtask: SubtaskKind::FileLocalization,
            issue_text: "i".into(),
            payload: "p".into(),
            ground_truth_view: Some("gt".into()),
            path_steps: vec!["s1".into()],
        }
    }

    #[test]
    fn transient_transport_failures_are_retried() {
        let backend = FlakyBackend {
            calls: AtomicUsize::new(0),
            fail_first: 2,
        };
        let gateway = Gateway::new(&backend);
        assert_eq!(gateway.score_path(score_request()).unwrap(), 7);
    }

    #[test]
    fn retry_budget_is_bounded() {
        let backend = FlakyBackend {
            calls: AtomicUsize::new(0),
            fail_first: 10,
        };
        let gateway = Gateway::new(&backend);
        assert!(gateway.score_path(score_request()).is_err());
        assert_eq!(backend.calls.load(Ordering::SeqCst), 3);
    }

    #[test]
    fn request_hash_is_stable_and_input_sensitive() {
        let a = score_request();
        let mut b = score_request();
        assert_eq!(a.hash(), b.hash());
        b.path_steps.push("s2".into());
        assert_ne!(a.hash(), b.hash());
    }

    #[test]
    fn successful_calls_are_recorded() {
        let backend = FlakyBackend {
            calls: AtomicUsize::new(0),
            fail_first: 0,
        };
        let gateway = Gateway::new(&backend);
        gateway.score_path(score_request()).unwrap();
        let records = gateway.take_records();
        assert_eq!(records.len(), 1);
        assert_eq!(records[0].call, "score");
        assert!(records[0].ok);
        assert_eq!(records[0].raw_response, "SCORE: 7");
    }
}
