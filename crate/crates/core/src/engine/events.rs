//! Timestamp-free structured event log for one search.
//!
//! Events serialize to JSONL; a log plus the corpus is enough to replay the
//! search without a network, so nothing non-deterministic (clocks, thread
//! ids) may appear here.

use serde::{Deserialize, Serialize};

use super::SearchStatus;
use crate::gateway::CallRecord;
use crate::subtasks::SubtaskKind;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum Event {
    SearchStart {
        task_id: String,
        subtask: SubtaskKind,
        config_hash: String,
    },
    Selection {
        iteration: usize,
        node: u32,
    },
    Expansion {
        iteration: usize,
        parent: u32,
        children: Vec<u32>,
    },
    GatewayCall {
        iteration: usize,
        #[serde(flatten)]
        record: CallRecord,
    },
    Rejection {
        iteration: usize,
        node: u32,
        accepted: bool,
        category: String,
    },
    Refinement {
        iteration: usize,
        node: u32,
        refined: bool,
        note: String,
    },
    Backprop {
        iteration: usize,
        from: u32,
    },
    IterationFailed {
        iteration: usize,
        reason: String,
    },
    Outcome {
        status: SearchStatus,
        iterations: usize,
    },
}

impl Event {
    /// Gateway call records embedded in a log, in emission order.
    pub fn call_records(events: &[Event]) -> Vec<CallRecord> {
        events
            .iter()
            .filter_map(|e| match e {
                Event::GatewayCall { record, .. } => Some(record.clone()),
                _ => None,
            })
            .collect()
    }
}
