//! The five-phase search loop per (task, subtask):
//! selection, expansion, rejection sampling, refinement, backpropagation.
//!
//! One search owns its tree and runs single-threaded; independent searches
//! run concurrently in the worker pool. The loop terminates on the first
//! oracle acceptance or after the iteration cap.

pub mod events;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::IssueTask;
use crate::emitter::CoTSample;
use crate::gateway::{
    render_ground_truth_view, Backend, CallKind, Feedback, Gateway, GatewayError, GatewayRequest,
};
use crate::search_tree::{NodeId, SearchTree, TreeError};
use crate::subtasks::{
    build_fault_localization_input, build_file_localization_input, build_patch_generation_input,
    normalize_path, CandidateSolution, SubtaskInput, SubtaskKind, DEFAULT_CONTEXT_WINDOW,
    DEFAULT_TREE_BUDGET,
};
use crate::validators::{
    extract_code_elements, validate_fault_localization, validate_file_localization, validate_patch,
    CodeElementRef, ElementKind, GroundTruth,
};

use events::Event;

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("gateway: {0}")]
    Gateway(GatewayError),
    #[error("tree: {0}")]
    Tree(#[from] TreeError),
    #[error("task unusable for {subtask}: {reason}")]
    UnusableTask { subtask: SubtaskKind, reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EngineConfig {
    pub epsilon: f64,
    pub alpha: f64,
    pub branching_b: usize,
    pub max_iterations_t: usize,
    pub max_depth: usize,
    pub refinement_rounds: usize,
    pub seed: u64,
}

impl Default for EngineConfig {
    fn default() -> Self {
        EngineConfig {
            epsilon: 0.5,
            alpha: 0.5,
            branching_b: 3,
            max_iterations_t: 50,
            max_depth: 10,
            refinement_rounds: 1,
            seed: 0,
        }
    }
}

impl EngineConfig {
    pub fn hash(&self) -> String {
        use sha2::{Digest, Sha256};
        let bytes = serde_json::to_vec(self).expect("config serializes");
        let digest = Sha256::digest(&bytes);
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SearchStatus {
    Accepted,
    Exhausted,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TreeStats {
    pub node_count: usize,
    pub max_depth: usize,
    pub refinements: usize,
    pub gateway_calls: usize,
}

#[derive(Debug)]
pub struct SearchOutcome {
    pub status: SearchStatus,
    pub sample: Option<CoTSample>,
    pub iterations_used: usize,
    pub tree_stats: TreeStats,
}

/// Outcome plus the artifacts the run directory persists.
#[derive(Debug)]
pub struct SearchRun {
    pub outcome: SearchOutcome,
    pub events: Vec<Event>,
    pub tree: SearchTree,
}

pub enum IterationResult {
    Accepted {
        node: NodeId,
        solution: CandidateSolution,
    },
    Continue,
    /// Malformed gateway output exhausted its retries before any tree
    /// mutation; the iteration is counted but the tree is untouched.
    Failed(String),
    Saturated,
}

/// Everything an iteration needs about the task, read-only.
pub struct SearchContext<'a> {
    pub task: &'a IssueTask,
    pub gt: &'a GroundTruth,
    pub subtask: SubtaskKind,
    pub input: &'a SubtaskInput,
    pub gt_view: String,
}

impl<'a> SearchContext<'a> {
    fn request(&self, path_steps: Vec<String>, with_gt: bool) -> GatewayRequest {
        GatewayRequest {
            call: CallKind::Solve, // overwritten by the typed gateway method
            subtask: self.subtask,
            issue_text: self.input.issue_text.clone(),
            payload: self.input.payload.clone(),
            ground_truth_view: with_gt.then(|| self.gt_view.clone()),
            path_steps,
        }
    }
}

/// Exact-match dispatch per subtask. Returns the pass flag plus a category
/// string for the event log.
pub fn validate_solution(
    subtask: SubtaskKind,
    solution: &CandidateSolution,
    task: &IssueTask,
    gt: &GroundTruth,
) -> (bool, String) {
    match (subtask, solution) {
        (SubtaskKind::FileLocalization, CandidateSolution::Files { paths }) => {
            let normalized: Result<Vec<String>, _> =
                paths.iter().map(|p| normalize_path(p)).collect();
            match normalized {
                Ok(paths) => {
                    let ok = validate_file_localization(&paths, gt);
                    (ok, if ok { "match" } else { "mismatch" }.to_string())
                }
                Err(e) => (false, format!("bad-path: {e}")),
            }
        }
        (SubtaskKind::FaultLocalization, CandidateSolution::Elements { elements }) => {
            let ok = validate_fault_localization(elements, gt);
            (ok, if ok { "match" } else { "mismatch" }.to_string())
        }
        (SubtaskKind::PatchGeneration, CandidateSolution::Edits { edits }) => {
            let verdict = validate_patch(edits, &task.snapshot, gt);
            let ok = verdict.passed();
            (
                ok,
                match verdict {
                    crate::validators::PatchVerdict::Pass => "match".to_string(),
                    crate::validators::PatchVerdict::ApplyError(e) => format!("apply-error: {e}"),
                    crate::validators::PatchVerdict::Mismatch { file } => {
                        format!("mismatch: {file}")
                    }
                },
            )
        }
        _ => (false, "solution kind does not match subtask".to_string()),
    }
}

/// Builds the prompt input for a subtask, feeding each stage its gold
/// upstream result (gold files into fault localization, gold elements into
/// patch generation).
pub fn build_subtask_input(
    task: &IssueTask,
    gt: &GroundTruth,
    subtask: SubtaskKind,
) -> Result<SubtaskInput, EngineError> {
    let unusable = |reason: String| EngineError::UnusableTask { subtask, reason };
    match subtask {
        SubtaskKind::FileLocalization => {
            build_file_localization_input(task, DEFAULT_TREE_BUDGET)
                .map_err(|e| unusable(e.to_string()))
        }
        SubtaskKind::FaultLocalization => {
            let files: Vec<String> = gt.modified_files.iter().cloned().collect();
            if files.is_empty() {
                return Err(unusable("no modified files in ground truth".into()));
            }
            build_fault_localization_input(task, &files).map_err(|e| unusable(e.to_string()))
        }
        SubtaskKind::PatchGeneration => {
            if gt.normalization_degenerate {
                return Err(unusable(
                    "gold diff is whitespace/comment-only; the oracle would accept the unedited file"
                        .into(),
                ));
            }
            let elements = patch_input_elements(task, gt);
            if elements.is_empty() {
                return Err(unusable("no fault context derivable from gold patch".into()));
            }
            build_patch_generation_input(task, &elements, DEFAULT_CONTEXT_WINDOW)
                .map_err(|e| unusable(e.to_string()))
        }
    }
}

/// Pre-patch-side spans for the gold elements. Element refs in the ground
/// truth carry post-patch spans; the prompt excerpts come from the
/// pre-patch snapshot, so spans are re-resolved there. Files where nothing
/// resolves (e.g. pure additions) fall back to the gold hunks' old-side
/// line ranges.
fn patch_input_elements(task: &IssueTask, gt: &GroundTruth) -> Vec<CodeElementRef> {
    let gold_keys = gt.element_keys();
    let mut out = Vec::new();
    for file in &gt.modified_files {
        let Some(content) = task.snapshot.files.get(file) else {
            continue;
        };
        let pre_elements = extract_code_elements(content, file);
        let mut found_any = false;
        for element in pre_elements {
            if gold_keys.contains(&(
                element.kind,
                element.file.clone(),
                element.qualified_name.clone(),
            )) {
                out.push(element);
                found_any = true;
            }
        }
        if !found_any {
            let len = content.lines().count().max(1);
            if let Some(hunks) = gt.gold_hunks.get(file) {
                for (i, hunk) in hunks.iter().enumerate() {
                    let start = hunk.old_start.max(1).min(len);
                    let end = (hunk.old_start + hunk.old_len.max(1) - 1).min(len);
                    out.push(CodeElementRef {
                        kind: ElementKind::Global,
                        qualified_name: format!("hunk_{i}"),
                        file: file.clone(),
                        span: (start, end.max(start)),
                    });
                }
            }
        }
    }
    out
}

/// One full cycle: selection, expansion with scoring, rejection sampling on
/// the best new child, refinement, backpropagation.
pub fn iterate_once(
    tree: &mut SearchTree,
    iteration: usize,
    ctx: &SearchContext<'_>,
    gateway: &Gateway<'_>,
    config: &EngineConfig,
    events: &mut Vec<Event>,
    stats: &mut TreeStats,
) -> Result<IterationResult, EngineError> {
    let drain = |gw: &Gateway<'_>, events: &mut Vec<Event>| {
        for record in gw.take_records() {
            events.push(Event::GatewayCall { iteration, record });
        }
    };
    // Format errors exhaust their retries inside the gateway; at this level
    // they fail the iteration, while transport-class errors propagate.
    let iteration_failure = |e: GatewayError,
                             gw: &Gateway<'_>,
                             events: &mut Vec<Event>|
     -> Result<IterationResult, EngineError> {
        for record in gw.take_records() {
            events.push(Event::GatewayCall { iteration, record });
        }
        match e {
            GatewayError::Format { .. } => Ok(IterationResult::Failed(e.to_string())),
            other => Err(EngineError::Gateway(other)),
        }
    };

    // Phase 1: selection.
    let leaf = match tree.select_leaf(config.epsilon, config.branching_b, config.max_depth) {
        Ok(leaf) => leaf,
        Err(TreeError::Saturated) => return Ok(IterationResult::Saturated),
        Err(e) => return Err(e.into()),
    };
    events.push(Event::Selection {
        iteration,
        node: leaf.0,
    });

    // Phase 2: expansion. Propose and score before mutating the tree so a
    // malformed response leaves it untouched.
    let leaf_steps = tree.path_steps(leaf)?;
    let slots = config.branching_b - tree.node(leaf)?.children.len();
    let proposals = match gateway.propose_steps(ctx.request(leaf_steps.clone(), false), slots) {
        Ok(p) => p,
        Err(e) => return iteration_failure(e, gateway, events),
    };
    let mut scored = Vec::with_capacity(proposals.len());
    for step in proposals {
        let mut path = leaf_steps.clone();
        path.push(step.clone());
        let reward = match gateway.score_path(ctx.request(path, true)) {
            Ok(r) => r,
            Err(e) => return iteration_failure(e, gateway, events),
        };
        scored.push((step, reward as f64));
    }
    drain(gateway, events);
    let children = tree.expand(leaf, &scored, config.branching_b)?;
    events.push(Event::Expansion {
        iteration,
        parent: leaf.0,
        children: children.iter().map(|c| c.0).collect(),
    });
    stats.node_count = tree.len();

    // Phase 3: rejection sampling on the best-scored new child.
    let best = *children
        .iter()
        .max_by(|&&a, &&b| {
            let qa = tree.node(a).expect("fresh child").q;
            let qb = tree.node(b).expect("fresh child").q;
            qa.partial_cmp(&qb).expect("rewards are finite").then(b.cmp(&a))
        })
        .expect("expansion produced children");
    stats.max_depth = stats.max_depth.max(tree.depth(best)?);

    let mut accepted = None;
    match gateway.solve_path(ctx.request(tree.path_steps(best)?, false)) {
        Ok(solution) => {
            let (ok, category) = validate_solution(ctx.subtask, &solution, ctx.task, ctx.gt);
            events.push(Event::Rejection {
                iteration,
                node: best.0,
                accepted: ok,
                category,
            });
            if ok {
                accepted = Some(solution);
            }
        }
        Err(e @ GatewayError::Format { .. }) => {
            events.push(Event::Rejection {
                iteration,
                node: best.0,
                accepted: false,
                category: format!("solve-error: {e}"),
            });
        }
        Err(e) => return iteration_failure(e, gateway, events),
    }
    drain(gateway, events);

    // Phase 4: refinement, unless already accepted.
    if accepted.is_none() {
        for _ in 0..config.refinement_rounds {
            let feedback = match gateway.feedback(ctx.request(tree.path_steps(best)?, true)) {
                Ok(f) => f,
                Err(e @ GatewayError::Format { .. }) => {
                    events.push(Event::Refinement {
                        iteration,
                        node: best.0,
                        refined: false,
                        note: format!("feedback unusable: {e}"),
                    });
                    break;
                }
                Err(e) => return iteration_failure(e, gateway, events),
            };
            let corrective = match feedback {
                Feedback::NoFeedback => {
                    events.push(Event::Refinement {
                        iteration,
                        node: best.0,
                        refined: false,
                        note: "no feedback".into(),
                    });
                    break;
                }
                Feedback::Corrective(text) => text,
            };
            let current_step = tree.node(best)?.step_text.clone();
            let refined_step = match gateway.optimize_step(
                ctx.request(tree.path_steps(best)?, true),
                &current_step,
                &corrective,
            ) {
                Ok(s) => s,
                Err(e @ GatewayError::Format { .. }) => {
                    events.push(Event::Refinement {
                        iteration,
                        node: best.0,
                        refined: false,
                        note: format!("optimize unusable: {e}"),
                    });
                    break;
                }
                Err(e) => return iteration_failure(e, gateway, events),
            };
            {
                let node = tree.node_mut(best)?;
                node.step_text = refined_step;
                node.refined = true;
                node.feedback_log.push(corrective);
            }
            stats.refinements += 1;
            events.push(Event::Refinement {
                iteration,
                node: best.0,
                refined: true,
                note: "step rewritten".into(),
            });

            // The refined step is re-scored so backpropagation sees its
            // quality, then re-solved and re-validated.
            match gateway.score_path(ctx.request(tree.path_steps(best)?, true)) {
                Ok(reward) => tree.set_reward(best, reward as f64)?,
                Err(GatewayError::Format { .. }) => {}
                Err(e) => return iteration_failure(e, gateway, events),
            }
            match gateway.solve_path(ctx.request(tree.path_steps(best)?, false)) {
                Ok(solution) => {
                    let (ok, category) =
                        validate_solution(ctx.subtask, &solution, ctx.task, ctx.gt);
                    events.push(Event::Rejection {
                        iteration,
                        node: best.0,
                        accepted: ok,
                        category,
                    });
                    if ok {
                        accepted = Some(solution);
                        break;
                    }
                }
                Err(e @ GatewayError::Format { .. }) => {
                    events.push(Event::Rejection {
                        iteration,
                        node: best.0,
                        accepted: false,
                        category: format!("solve-error: {e}"),
                    });
                }
                Err(e) => return iteration_failure(e, gateway, events),
            }
        }
        drain(gateway, events);
    }

    if let Some(solution) = accepted {
        stats.gateway_calls = events
            .iter()
            .filter(|e| matches!(e, Event::GatewayCall { .. }))
            .count();
        return Ok(IterationResult::Accepted {
            node: best,
            solution,
        });
    }

    // Phase 5: backpropagation.
    tree.backpropagate(best, config.alpha)?;
    events.push(Event::Backprop {
        iteration,
        from: best.0,
    });
    Ok(IterationResult::Continue)
}

/// Runs the full search loop for one (task, subtask) pair.
pub fn run_subtask_search(
    task: &IssueTask,
    gt: &GroundTruth,
    subtask: SubtaskKind,
    backend: &dyn Backend,
    config: &EngineConfig,
) -> Result<SearchRun, EngineError> {
    let input = build_subtask_input(task, gt, subtask)?;
    let ctx = SearchContext {
        task,
        gt,
        subtask,
        input: &input,
        gt_view: render_ground_truth_view(subtask, gt),
    };
    let gateway = Gateway::new(backend);
    let mut tree = SearchTree::new(subtask.objective());
    let mut events = vec![Event::SearchStart {
        task_id: task.task_id.clone(),
        subtask,
        config_hash: config.hash(),
    }];
    let mut stats = TreeStats {
        node_count: 1,
        ..TreeStats::default()
    };

    let mut iterations_used = 0;
    let mut accepted: Option<(NodeId, CandidateSolution)> = None;
    for iteration in 1..=config.max_iterations_t {
        iterations_used = iteration;
        match iterate_once(&mut tree, iteration, &ctx, &gateway, config, &mut events, &mut stats)? {
            IterationResult::Accepted { node, solution } => {
                accepted = Some((node, solution));
                break;
            }
            IterationResult::Continue => {}
            IterationResult::Failed(reason) => {
                events.push(Event::IterationFailed { iteration, reason });
            }
            IterationResult::Saturated => {
                events.push(Event::IterationFailed {
                    iteration,
                    reason: "tree saturated".into(),
                });
                iterations_used = iteration - 1;
                break;
            }
        }
    }

    stats.node_count = tree.len();
    stats.gateway_calls = events
        .iter()
        .filter(|e| matches!(e, Event::GatewayCall { .. }))
        .count();

    let (status, sample) = match accepted {
        Some((node, solution)) => {
            let sample = CoTSample {
                task_id: task.task_id.clone(),
                subtask,
                prompt: input.payload.clone(),
                steps: tree.path_steps(node)?,
                final_answer: solution,
                accepted_at_iteration: iterations_used,
                refinement_count: stats.refinements,
                gateway_model: gateway.model_tag(),
                config_hash: config.hash(),
                seed: config.seed,
            };
            (SearchStatus::Accepted, Some(sample))
        }
        None => (SearchStatus::Exhausted, None),
    };
    events.push(Event::Outcome {
        status,
        iterations: iterations_used,
    });

    Ok(SearchRun {
        outcome: SearchOutcome {
            status,
            sample,
            iterations_used,
            tree_stats: stats,
        },
        events,
        tree,
    })
}
