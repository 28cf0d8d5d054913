//! Replay backend: serves recorded responses from an event log, verifying
//! that each incoming request hashes to what was recorded. Any divergence
//! or gap aborts with the first mismatch location.

use std::sync::Mutex;

use super::{Backend, CallRecord, GatewayError, GatewayRequest};

pub struct ReplayBackend {
    records: Vec<CallRecord>,
    cursor: Mutex<usize>,
    model_tag: String,
}

impl ReplayBackend {
    pub fn new(records: Vec<CallRecord>, model_tag: String) -> Self {
        ReplayBackend {
            records,
            cursor: Mutex::new(0),
            model_tag,
        }
    }

    pub fn remaining(&self) -> usize {
        self.records.len() - *self.cursor.lock().expect("cursor lock")
    }
}

impl Backend for ReplayBackend {
    fn complete(&self, request: &GatewayRequest) -> Result<String, GatewayError> {
        let mut cursor = self.cursor.lock().expect("cursor lock");
        let index = *cursor;
        let record = self.records.get(index).ok_or_else(|| {
            GatewayError::ReplayGap(format!(
                "log exhausted at call {index} ({} call expected next)",
                request.call.name()
            ))
        })?;
        let hash = request.hash();
        if record.request_hash != hash {
            return Err(GatewayError::ReplayGap(format!(
                "record {index}: logged {} call with hash {}.., live {} call hashes {}..",
                record.call,
                &record.request_hash[..12],
                request.call.name(),
                &hash[..12]
            )));
        }
        *cursor += 1;
        Ok(record.raw_response.clone())
    }

    fn model_tag(&self) -> String {
        self.model_tag.clone()
    }
}
