//! Dataset serialization, run statistics, and the post-hoc audit.
//!
//! Accepted samples are re-validated against ground truth at emission time;
//! anything that fails lands in a quarantine file next to the dataset
//! instead of silently disappearing. Writers are serialized and flush per
//! record so a crashed run leaves whole lines behind.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{self, BufRead, BufReader, Write as _};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::corpus::{derive_ground_truth, IssueTask};
use crate::engine::{events::Event, validate_solution, SearchStatus};
use crate::subtasks::{CandidateSolution, SubtaskKind};

/// One fine-tuning sample: the prompt, the accepted reasoning path, the
/// validated answer, and enough provenance to reproduce the run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoTSample {
    pub task_id: String,
    pub subtask: SubtaskKind,
    pub prompt: String,
    pub steps: Vec<String>,
    pub final_answer: CandidateSolution,
    pub accepted_at_iteration: usize,
    pub refinement_count: usize,
    pub gateway_model: String,
    pub config_hash: String,
    pub seed: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct QuarantineRecord {
    reason: String,
    sample: CoTSample,
}

pub struct DatasetSink {
    dataset_path: PathBuf,
    dataset: Mutex<File>,
    quarantine: Mutex<File>,
    emitted: Mutex<usize>,
    quarantined: Mutex<usize>,
}

impl DatasetSink {
    pub fn create(dir: &Path) -> io::Result<Self> {
        fs::create_dir_all(dir)?;
        let dataset_path = dir.join("dataset.jsonl");
        Ok(DatasetSink {
            dataset: Mutex::new(File::create(&dataset_path)?),
            quarantine: Mutex::new(File::create(dir.join("quarantine.jsonl"))?),
            dataset_path,
            emitted: Mutex::new(0),
            quarantined: Mutex::new(0),
        })
    }

    pub fn dataset_path(&self) -> &Path {
        &self.dataset_path
    }

    /// Re-validates and writes one sample. Returns whether it entered the
    /// dataset proper (as opposed to quarantine).
    pub fn emit(
        &self,
        sample: &CoTSample,
        task: &IssueTask,
        gt: &crate::validators::GroundTruth,
    ) -> io::Result<bool> {
        let (ok, category) = validate_solution(sample.subtask, &sample.final_answer, task, gt);
        if ok {
            let mut file = self.dataset.lock().expect("dataset lock");
            serde_json::to_writer(&mut *file, sample)?;
            file.write_all(b"\n")?;
            file.flush()?;
            *self.emitted.lock().expect("count lock") += 1;
        } else {
            let record = QuarantineRecord {
                reason: format!("re-validation failed: {category}"),
                sample: sample.clone(),
            };
            let mut file = self.quarantine.lock().expect("quarantine lock");
            serde_json::to_writer(&mut *file, &record)?;
            file.write_all(b"\n")?;
            file.flush()?;
            *self.quarantined.lock().expect("count lock") += 1;
        }
        Ok(ok)
    }

    /// (emitted, quarantined)
    pub fn counts(&self) -> (usize, usize) {
        (
            *self.emitted.lock().expect("count lock"),
            *self.quarantined.lock().expect("count lock"),
        )
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SubtaskStats {
    pub attempted: usize,
    pub accepted: usize,
    pub exhausted: usize,
    pub skipped: usize,
    pub gateway_calls: usize,
    /// accepted-at-iteration histogram, keyed by iteration number.
    pub iteration_histogram: BTreeMap<usize, usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunStats {
    pub per_subtask: BTreeMap<SubtaskKind, SubtaskStats>,
    pub unparseable_lines: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SkipRecord {
    pub task_id: String,
    pub subtask: SubtaskKind,
    pub reason: String,
}

/// Aggregates a run directory's event logs (and skip records) into stats.
pub fn summarize(run_dir: &Path) -> io::Result<RunStats> {
    let mut stats = RunStats::default();
    let events_dir = run_dir.join("events");
    let mut log_paths: Vec<PathBuf> = Vec::new();
    if events_dir.is_dir() {
        for entry in fs::read_dir(&events_dir)? {
            let path = entry?.path();
            if path.extension().is_some_and(|e| e == "jsonl") {
                log_paths.push(path);
            }
        }
    }
    log_paths.sort();
    for path in log_paths {
        let reader = BufReader::new(File::open(&path)?);
        let mut subtask = None;
        let mut log_events = Vec::new();
        for line in reader.lines() {
            let line = line?;
            match serde_json::from_str::<Event>(&line) {
                Ok(event) => log_events.push(event),
                Err(_) => stats.unparseable_lines += 1,
            }
        }
        for event in &log_events {
            if let Event::SearchStart { subtask: s, .. } = event {
                subtask = Some(*s);
            }
        }
        let Some(subtask) = subtask else { continue };
        let entry = stats.per_subtask.entry(subtask).or_default();
        entry.attempted += 1;
        for event in &log_events {
            match event {
                Event::GatewayCall { .. } => entry.gateway_calls += 1,
                Event::Outcome { status, iterations } => match status {
                    SearchStatus::Accepted => {
                        entry.accepted += 1;
                        *entry.iteration_histogram.entry(*iterations).or_default() += 1;
                    }
                    SearchStatus::Exhausted => entry.exhausted += 1,
                },
                _ => {}
            }
        }
    }

    let skipped_path = run_dir.join("skipped.jsonl");
    if skipped_path.is_file() {
        let reader = BufReader::new(File::open(&skipped_path)?);
        for line in reader.lines() {
            match serde_json::from_str::<SkipRecord>(&line?) {
                Ok(record) => {
                    stats.per_subtask.entry(record.subtask).or_default().skipped += 1
                }
                Err(_) => stats.unparseable_lines += 1,
            }
        }
    }
    Ok(stats)
}

impl RunStats {
    pub fn render_table(&self) -> String {
        let mut out = String::from(
            "subtask              attempted  accepted  exhausted  skipped  gateway_calls\n",
        );
        for (subtask, s) in &self.per_subtask {
            out.push_str(&format!(
                "{:<20} {:>9} {:>9} {:>10} {:>8} {:>14}\n",
                subtask.to_string(),
                s.attempted,
                s.accepted,
                s.exhausted,
                s.skipped,
                s.gateway_calls
            ));
        }
        if self.unparseable_lines > 0 {
            out.push_str(&format!("unparseable lines: {}\n", self.unparseable_lines));
        }
        out
    }
}

#[derive(Debug, Default)]
pub struct AuditReport {
    pub records: usize,
    pub passed: usize,
    pub failures: Vec<String>,
}

impl AuditReport {
    pub fn all_passed(&self) -> bool {
        self.records == self.passed
    }
}

/// Re-reads every dataset record, round-trips it through serde, and re-runs
/// the validator against freshly derived ground truth.
pub fn audit(dataset_path: &Path, tasks: &[IssueTask]) -> io::Result<AuditReport> {
    let by_id: BTreeMap<&str, &IssueTask> =
        tasks.iter().map(|t| (t.task_id.as_str(), t)).collect();
    let mut report = AuditReport::default();
    let reader = BufReader::new(File::open(dataset_path)?);
    for (line_no, line) in reader.lines().enumerate() {
        let line = line?;
        report.records += 1;
        let fail = |reason: String| format!("line {}: {reason}", line_no + 1);
        let sample: CoTSample = match serde_json::from_str(&line) {
            Ok(s) => s,
            Err(e) => {
                report.failures.push(fail(format!("unparseable: {e}")));
                continue;
            }
        };
        let round_trip = serde_json::to_string(&sample)
            .ok()
            .and_then(|t| serde_json::from_str::<CoTSample>(&t).ok());
        if round_trip.as_ref() != Some(&sample) {
            report.failures.push(fail("serde round-trip mismatch".into()));
            continue;
        }
        let Some(task) = by_id.get(sample.task_id.as_str()) else {
            report
                .failures
                .push(fail(format!("unknown task `{}`", sample.task_id)));
            continue;
        };
        let gt = match task.derived.clone() {
            Some(gt) => gt,
            None => match derive_ground_truth(task) {
                Ok(gt) => gt,
                Err(e) => {
                    report
                        .failures
                        .push(fail(format!("ground truth underivable: {e}")));
                    continue;
                }
            },
        };
        let (ok, category) = validate_solution(sample.subtask, &sample.final_answer, task, &gt);
        if ok {
            report.passed += 1;
        } else {
            report.failures.push(fail(format!("validation: {category}")));
        }
    }
    Ok(report)
}
