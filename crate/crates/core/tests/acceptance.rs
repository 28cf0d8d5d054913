//! Acceptance suite. One test per criterion; each prints a single
//! `[PASS] ...` line when its checks hold.

use std::collections::BTreeMap;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use cotforge::corpus::diff::{apply_file_diff, change_multisets, make_unified_diff, parse_unified_diff};
use cotforge::corpus::{derive_ground_truth, IssueTask, RepoSnapshot};
use cotforge::emitter::{audit, CoTSample, DatasetSink};
use cotforge::engine::{run_subtask_search, EngineConfig, SearchRun, SearchStatus};
use cotforge::gateway::scripted::{Script, ScriptRule, ScriptedBackend};
use cotforge::gateway::{Backend, CallKind, GatewayError, GatewayRequest};
use cotforge::search_tree::{ucb, NodeId, SearchTree};
use cotforge::subtasks::{CandidateSolution, SubtaskKind};
use cotforge::validators::{
    compute_localization_hits, normalize_source, synthesize_gold_edits, validate_fault_localization,
    validate_file_localization, validate_patch, CodeElementRef, ElementKind, GroundTruth,
};

fn passed(line: &str) {
    println!("[PASS] {line}");
}

// --- shared fixtures ------------------------------------------------------

fn fixture_task() -> IssueTask {
    let snapshot = RepoSnapshot::from_files([
        ("pkg/__init__.py", ""),
        ("pkg/a.py", "def f(x):\n    return x + 1\n"),
        ("pkg/b.py", "def g(x):\n    return x\n"),
    ]);
    IssueTask {
        task_id: "fixture".into(),
        repo_name: "demo".into(),
        issue_text: "f is off by one".into(),
        snapshot,
        gold_diff: "--- a/pkg/a.py\n+++ b/pkg/a.py\n@@ -1,2 +1,2 @@\n def f(x):\n-    return x + 1\n+    return x + 2\n".into(),
        derived: None,
    }
}

/// Twenty deterministic tasks with developer patches of varying shape:
/// value tweaks, added branches, multi-site edits, and comment-bearing
/// regions.
fn golden_corpus() -> Vec<IssueTask> {
    let mut tasks = Vec::new();
    for i in 0..20usize {
        let main = format!("proj/mod_{i}.py");
        let pre = format!(
            "import os\n\n\
             LIMIT = {lim}\n\n\
             def check(value):\n    # guard the limit\n    if value > LIMIT:\n        return False\n    return True\n\n\
             def scale(value):\n    return value * {mul}\n\n\
             class Runner:\n    def run(self, value):\n        total = scale(value)\n        return check(total)\n",
            lim = 10 + i,
            mul = 2 + (i % 3),
        );
        let mut post = pre.replace(
            &format!("return value * {}", 2 + (i % 3)),
            &format!("return value * {}", 3 + (i % 3)),
        );
        if i % 4 == 0 {
            post = post.replace(
                "    if value > LIMIT:\n        return False\n",
                "    if value >= LIMIT:\n        return False\n    if value < 0:\n        return False\n",
            );
        }
        if i % 5 == 0 {
            post = post.replace(
                "        total = scale(value)\n",
                "        total = scale(value) + 1\n",
            );
        }
        let gold_diff = make_unified_diff(
            &format!("a/{main}"),
            &format!("b/{main}"),
            &pre,
            &post,
            3,
        );
        let snapshot = RepoSnapshot::from_files([
            ("proj/__init__.py".to_string(), String::new()),
            (main.clone(), pre),
            (
                "proj/util.py".to_string(),
                "def helper():\n    return 0\n".to_string(),
            ),
        ]);
        tasks.push(IssueTask {
            task_id: format!("golden-{i:02}"),
            repo_name: "golden".into(),
            issue_text: format!("scale factor wrong in mod_{i}"),
            snapshot,
            gold_diff,
            derived: None,
        });
    }
    tasks
}

// --- criterion 1: formula correctness -------------------------------------

/// Independent replay of an operation log on plain vectors.
struct NaiveTree {
    parent: Vec<Option<usize>>,
    children: Vec<Vec<usize>>,
    q: Vec<f64>,
    n: Vec<u64>,
}

impl NaiveTree {
    fn new() -> Self {
        NaiveTree {
            parent: vec![None],
            children: vec![Vec::new()],
            q: vec![0.0],
            n: vec![1],
        }
    }

    fn expand(&mut self, parent: usize, rewards: &[f64]) {
        for &r in rewards {
            let id = self.q.len();
            self.parent.push(Some(parent));
            self.children.push(Vec::new());
            self.q.push(r);
            self.n.push(1);
            self.children[parent].push(id);
        }
    }

    fn backprop(&mut self, from: usize, alpha: f64) {
        let mut path = vec![from];
        let mut cursor = from;
        while let Some(p) = self.parent[cursor] {
            path.push(p);
            cursor = p;
        }
        for &id in &path {
            self.n[id] += 1;
            if !self.children[id].is_empty() {
                let total: f64 = self.children[id].iter().map(|&c| self.n[c] as f64).sum();
                let weighted: f64 = self.children[id]
                    .iter()
                    .map(|&c| self.n[c] as f64 * self.q[c])
                    .sum();
                self.q[id] = alpha * self.q[id] + (1.0 - alpha) * (weighted / total);
            }
        }
    }
}

fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    let scale = a.abs().max(b.abs()).max(1.0);
    (a - b).abs() <= tol * scale
}

#[test]
fn criterion_1_formula_correctness() {
    let start = Instant::now();

    // Worked examples.
    assert!((ucb(4.0, 2, 1, 0.5).unwrap() - (4.0 + 0.5 * 2f64.ln().sqrt())).abs() < 1e-9);
    {
        let mut tree = SearchTree::new("objective");
        tree.node_mut(tree.root_id()).unwrap().q = 4.0;
        let kids = tree
            .expand(tree.root_id(), &[("a".into(), 6.0), ("b".into(), 3.0), ("c".into(), 7.0)], 3)
            .unwrap();
        tree.node_mut(kids[1]).unwrap().n = 2;
        tree.backpropagate(tree.root_id(), 0.5).unwrap();
        assert!((tree.node(tree.root_id()).unwrap().q - 4.375).abs() < 1e-9);
    }

    // ucb against a directly evaluated expression on a sampled grid.
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..1000 {
        let q = rng.gen_range(0.0..=10.0);
        let n_node = rng.gen_range(1..=50u64);
        let n_parent = rng.gen_range(n_node..=200u64);
        let eps = rng.gen_range(0.0..=2.0);
        let expect = q + eps * ((n_parent as f64).ln() / n_node as f64).sqrt();
        assert!(rel_close(ucb(q, n_parent, n_node, eps).unwrap(), expect, 1e-12));
    }

    // 100 randomized trees, same operation log replayed on both structures.
    for seed in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let mut tree = SearchTree::new("objective");
        let mut naive = NaiveTree::new();
        let mut ids: Vec<NodeId> = vec![tree.root_id()];
        while ids.len() < 50 {
            let pick = ids[rng.gen_range(0..ids.len())];
            let free = 3 - tree.node(pick).unwrap().children.len();
            if free == 0 {
                // Keep the walk moving with a backpropagation instead.
                let from = ids[rng.gen_range(0..ids.len())];
                tree.backpropagate(from, 0.5).unwrap();
                naive.backprop(from.0 as usize, 0.5);
                continue;
            }
            let count = rng.gen_range(1..=free.min(50 - ids.len()));
            let steps: Vec<(String, f64)> = (0..count)
                .map(|k| (format!("s{}-{k}", ids.len()), rng.gen_range(0..=10) as f64))
                .collect();
            let new = tree.expand(pick, &steps, 3).unwrap();
            naive.expand(pick.0 as usize, &steps.iter().map(|s| s.1).collect::<Vec<_>>());
            ids.extend(new);
            if rng.gen_bool(0.6) {
                let from = ids[rng.gen_range(0..ids.len())];
                tree.backpropagate(from, 0.5).unwrap();
                naive.backprop(from.0 as usize, 0.5);
            }
        }
        tree.check_invariants().unwrap();
        for node in tree.nodes() {
            let id = node.id.0 as usize;
            assert_eq!(node.n, naive.n[id], "seed {seed} node {id} visit drift");
            assert!(
                rel_close(node.q, naive.q[id], 1e-12),
                "seed {seed} node {id}: {} vs {}",
                node.q,
                naive.q[id]
            );
        }
    }

    let elapsed = start.elapsed();
    assert!(elapsed.as_secs_f64() < 1.0, "took {elapsed:?}");
    passed("formula correctness: ucb and backpropagate match brute force on 100 trees (1e-12), worked examples to 1e-9");
}

// --- criterion 2: engine contract -----------------------------------------

fn rule(call: &str, last: Option<&str>, times: Option<usize>, response: &str) -> ScriptRule {
    ScriptRule {
        call: Some(call.into()),
        subtask: None,
        path_len: None,
        last_step_contains: last.map(|s| s.into()),
        times,
        response: response.into(),
    }
}

fn run_scripted(script: Script) -> SearchRun {
    let task = fixture_task();
    let gt = derive_ground_truth(&task).unwrap();
    let backend = ScriptedBackend::new(script);
    run_subtask_search(
        &task,
        &gt,
        SubtaskKind::FileLocalization,
        &backend,
        &EngineConfig::default(),
    )
    .unwrap()
}

fn fingerprint(run: &SearchRun) -> String {
    let mut out = String::new();
    for event in &run.events {
        out.push_str(&serde_json::to_string(event).unwrap());
        out.push('\n');
    }
    out.push_str(&run.tree.dump());
    if let Some(sample) = &run.outcome.sample {
        out.push_str(&serde_json::to_string(sample).unwrap());
    }
    out
}

#[test]
fn criterion_2_engine_contract() {
    let start = Instant::now();
    let immediate = Script {
        rules: vec![
            rule("propose", None, None, "1. alpha\n2. beta\n3. gamma"),
            rule("score", None, None, "SCORE: 6"),
            rule("solve", None, None, "```\npkg/a.py\n```"),
        ],
        model_tag: "scripted".into(),
    };
    let refine = Script {
        rules: vec![
            rule("propose", None, None, "1. alpha\n2. beta\n3. gamma"),
            rule("score", None, None, "SCORE: 6"),
            rule("solve", Some("focus"), None, "```\npkg/a.py\n```"),
            rule("solve", None, None, "```\npkg/b.py\n```"),
            rule("feedback", None, Some(2), "NO_FEEDBACK"),
            rule("feedback", None, None, "FEEDBACK: look at f in pkg/a.py"),
            rule("optimize", None, None, "focus on pkg/a.py"),
        ],
        model_tag: "scripted".into(),
    };
    let never = Script {
        rules: vec![
            rule("propose", None, None, "1. alpha\n2. beta\n3. gamma"),
            rule("score", None, None, "SCORE: 6"),
            rule("solve", None, None, "```\npkg/b.py\n```"),
            rule("feedback", None, None, "NO_FEEDBACK"),
        ],
        model_tag: "scripted".into(),
    };

    let run = run_scripted(immediate.clone());
    assert_eq!(run.outcome.status, SearchStatus::Accepted);
    assert_eq!(run.outcome.iterations_used, 1);

    let run = run_scripted(refine.clone());
    assert_eq!(run.outcome.status, SearchStatus::Accepted);
    assert!(run.outcome.tree_stats.refinements >= 1);
    assert!(run.tree.nodes().any(|n| n.refined));

    let run = run_scripted(never.clone());
    assert_eq!(run.outcome.status, SearchStatus::Exhausted);
    assert_eq!(run.outcome.iterations_used, 50);
    assert!(run.outcome.tree_stats.node_count <= 1 + 50 * 3);

    for script in [immediate, refine, never] {
        let first = fingerprint(&run_scripted(script.clone()));
        for _ in 0..2 {
            assert_eq!(fingerprint(&run_scripted(script.clone())), first);
        }
    }

    let elapsed = start.elapsed();
    assert!(elapsed.as_secs_f64() < 10.0, "took {elapsed:?}");
    passed("engine contract: accept@1, refine-accept, exhaust@50, node cap, byte-identical across 3 runs");
}

// --- criterion 3: oracle soundness ----------------------------------------

#[test]
fn criterion_3_oracle_soundness() {
    let start = Instant::now();
    let tasks = golden_corpus();
    let derived: Vec<(IssueTask, GroundTruth)> = tasks
        .into_iter()
        .map(|t| {
            let gt = derive_ground_truth(&t).unwrap();
            (t, gt)
        })
        .collect();

    let mut gold_pass = 0;
    for (task, gt) in &derived {
        let edits = synthesize_gold_edits(gt);
        assert!(!edits.is_empty());
        if validate_patch(&edits, &task.snapshot, gt).passed() {
            gold_pass += 1;
        }
    }
    assert_eq!(gold_pass, 20, "gold edits must pass 20/20");

    // 500 single-token mutations of replace blocks. Each is classified as
    // normalization-equivalent or not; the verdict must agree with the
    // classification in both directions.
    let mut rng = ChaCha8Rng::seed_from_u64(33);
    let mut rejected = 0;
    let mut equivalent_accepted = 0;
    for m in 0..500 {
        let (task, gt) = &derived[rng.gen_range(0..derived.len())];
        let mut edits = synthesize_gold_edits(gt);
        let idx = rng.gen_range(0..edits.len());
        let original = edits[idx].replace.clone();

        // Mutations target code tokens; comment-token mutations are
        // normalization-equivalent by construction and exercised separately
        // below.
        let tokens: Vec<(usize, usize)> = token_spans(&original)
            .into_iter()
            .filter(|&(s, _)| {
                let line_start = original[..s].rfind('\n').map(|i| i + 1).unwrap_or(0);
                !original[line_start..s].contains('#')
            })
            .collect();
        let (s, e) = tokens[rng.gen_range(0..tokens.len())];
        let mutated = format!("{}zz{m}{}", &original[..s], &original[e..]);
        edits[idx].replace = mutated.clone();

        let equivalent = normalize_source(&mutated) == normalize_source(&original);
        let verdict = validate_patch(&edits, &task.snapshot, gt);
        if verdict.passed() {
            assert!(
                equivalent,
                "mutation {m} accepted but not normalization-equivalent:\n{original}\n->\n{mutated}"
            );
            equivalent_accepted += 1;
        } else {
            rejected += 1;
        }
    }
    assert!(rejected >= 499, "rejected {rejected}/500");
    assert_eq!(rejected + equivalent_accepted, 500);

    // A comment-only mutation is normalization-equivalent and must pass.
    let (task, gt) = derived
        .iter()
        .find(|(_, gt)| {
            synthesize_gold_edits(gt)
                .iter()
                .any(|e| e.replace.contains("# guard the limit"))
        })
        .expect("a golden hunk carries the comment");
    let mut edits = synthesize_gold_edits(gt);
    for edit in &mut edits {
        edit.replace = edit.replace.replace("# guard the limit", "# bounds check");
    }
    let mutated_equivalent = edits.iter().zip(synthesize_gold_edits(gt)).all(|(m, o)| {
        normalize_source(&m.replace) == normalize_source(&o.replace)
    });
    assert!(mutated_equivalent);
    assert!(validate_patch(&edits, &task.snapshot, gt).passed());

    let elapsed = start.elapsed();
    assert!(elapsed.as_secs_f64() < 30.0, "took {elapsed:?}");
    passed(&format!(
        "oracle soundness: gold edits 20/20, mutations rejected {rejected}/500 with {equivalent_accepted} classified equivalent"
    ));
}

/// Byte spans of alphanumeric token runs.
fn token_spans(text: &str) -> Vec<(usize, usize)> {
    let mut spans = Vec::new();
    let mut start = None;
    for (i, c) in text.char_indices() {
        if c.is_ascii_alphanumeric() || c == '_' {
            if start.is_none() {
                start = Some(i);
            }
        } else if let Some(s) = start.take() {
            spans.push((s, i));
        }
    }
    if let Some(s) = start {
        spans.push((s, text.len()));
    }
    spans
}

// --- criterion 4: normalization properties --------------------------------

fn random_code_like(rng: &mut ChaCha8Rng) -> String {
    let fragments = [
        "def f(x):",
        "return x + 1",
        "value = compute(a, b)",
        "# a trailing comment",
        "s = \"text with # inside\"",
        "s = 'other # text'",
        "if ready:",
        "",
        "   ",
        "\t\tindented()",
        "x = [1, 2,   3]",
        "doc = \"\"\"block # body\"\"\"",
        "total += value   # accumulate",
    ];
    let lines = rng.gen_range(0..30);
    let mut out = String::new();
    for _ in 0..lines {
        let indent = " ".repeat(rng.gen_range(0..8));
        out.push_str(&indent);
        out.push_str(fragments[rng.gen_range(0..fragments.len())]);
        if rng.gen_bool(0.1) {
            out.push_str("   ");
        }
        out.push('\n');
    }
    out
}

#[test]
fn criterion_4_normalization_properties() {
    let mut rng = ChaCha8Rng::seed_from_u64(44);
    for _ in 0..1000 {
        let text = random_code_like(&mut rng);
        let once = normalize_source(&text);
        assert_eq!(normalize_source(&once), once, "not idempotent on:\n{text}");
    }

    let fixture = "url = \"http://example.com#anchor\"  # strip this\n";
    let normalized = normalize_source(fixture);
    assert!(normalized.contains("#anchor"));
    assert!(!normalized.contains("strip this"));

    for (_, gt) in golden_corpus().iter().map(|t| {
        let gt = derive_ground_truth(t).unwrap();
        (t.task_id.clone(), gt)
    }) {
        for (path, content) in &gt.post_patch_files {
            let mut rewritten = String::from("# header comment\n\n");
            for line in content.lines() {
                rewritten.push_str("    ");
                rewritten.push_str(line);
                rewritten.push_str("  \n");
                rewritten.push_str("# interleaved note\n");
            }
            assert_eq!(
                normalize_source(&rewritten),
                normalize_source(content),
                "whitespace/comment rewrite of {path} must compare equal"
            );
        }
    }
    passed("normalization: idempotent on 1000 strings, string-literal hash preserved, ws/comment rewrites equal");
}

// --- criterion 5: exact-match set oracles ---------------------------------

#[test]
fn criterion_5_set_oracles_match_naive_comparison() {
    let files: Vec<String> = (0..10).map(|i| format!("src/f{i}.py")).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(55);

    let naive_eq = |a: &[String], b: &[String]| {
        let mut a: Vec<&String> = a.iter().collect();
        let mut b: Vec<&String> = b.iter().collect();
        a.sort();
        a.dedup();
        b.sort();
        b.dedup();
        a == b
    };

    for trial in 0..1000 {
        let gold: Vec<String> = files
            .iter()
            .filter(|_| rng.gen_bool(0.4))
            .cloned()
            .collect();
        let pred: Vec<String> = if rng.gen_bool(0.5) {
            // Mirror of gold with shuffled order and duplicates.
            let mut p = gold.clone();
            p.extend(gold.iter().rev().filter(|_| rng.gen_bool(0.5)).cloned());
            p
        } else {
            files.iter().filter(|_| rng.gen_bool(0.4)).cloned().collect()
        };

        let gt = GroundTruth {
            modified_files: gold.iter().cloned().collect(),
            elements: gold
                .iter()
                .map(|f| CodeElementRef {
                    kind: ElementKind::Function,
                    qualified_name: format!("fn_{}", &f[5..7]),
                    file: f.clone(),
                    span: (1, 2),
                })
                .collect(),
            post_patch_files: BTreeMap::new(),
            gold_hunks: BTreeMap::new(),
            normalization_degenerate: false,
        };
        let pred_elements: Vec<CodeElementRef> = pred
            .iter()
            .map(|f| CodeElementRef {
                kind: ElementKind::Function,
                qualified_name: format!("fn_{}", &f[5..7]),
                file: f.clone(),
                // Spans differ on purpose: identity must ignore them.
                span: (7, 9),
            })
            .collect();

        let expect = naive_eq(&gold, &pred);
        assert_eq!(
            validate_file_localization(&pred, &gt),
            expect,
            "file oracle disagrees on trial {trial}"
        );
        assert_eq!(
            validate_fault_localization(&pred_elements, &gt),
            expect,
            "fault oracle disagrees on trial {trial}"
        );
    }
    passed("set oracles: file and fault validators agree with naive sorted-list comparison on 1000 pairs");
}

// --- criterion 6: localization metric window ------------------------------

#[test]
fn criterion_6_line_hit_window_grid() {
    let pre: String = (1..=30).map(|i| format!("line{i}\n")).collect();
    let post = pre.replace("line15\n", "LINE15\n");
    let diff = make_unified_diff("a/f.py", "b/f.py", &pre, &post, 3);
    let parsed = parse_unified_diff(&diff).unwrap();
    let gt = GroundTruth {
        modified_files: ["f.py".to_string()].into_iter().collect(),
        elements: Vec::new(),
        post_patch_files: [("f.py".to_string(), post)].into_iter().collect(),
        gold_hunks: [("f.py".to_string(), parsed[0].hunks.clone())]
            .into_iter()
            .collect(),
        normalization_degenerate: false,
    };

    // Gold modified line is 15; sweep predictions across the whole grid.
    for offset in 0..=6usize {
        for line in [15 - offset, 15 + offset] {
            let pred: BTreeMap<String, Vec<usize>> =
                [("f.py".to_string(), vec![line])].into_iter().collect();
            let hit = compute_localization_hits(&[], &[], &pred, &gt).line_hit;
            assert_eq!(hit, offset <= 3, "offset {offset} (line {line})");
        }
    }
    // Wrong file never hits regardless of line number.
    let pred: BTreeMap<String, Vec<usize>> =
        [("g.py".to_string(), vec![15])].into_iter().collect();
    assert!(!compute_localization_hits(&[], &[], &pred, &gt).line_hit);
    passed("metrics: +/-3 line window accepts offset 3 and rejects offset 4 across the fixture grid");
}

// --- criterion 7: diff round-trip -----------------------------------------

fn random_file(rng: &mut ChaCha8Rng, lines: usize) -> Vec<String> {
    (0..lines)
        .map(|i| format!("token_{}_{}", i, rng.gen_range(0..5)))
        .collect()
}

fn multiset(lines: &[String]) -> BTreeMap<&String, usize> {
    let mut out = BTreeMap::new();
    for line in lines {
        *out.entry(line).or_default() += 1;
    }
    out
}

#[test]
fn criterion_7_diff_round_trip() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    for case in 0..50usize {
        let (pre_lines, post_lines): (Vec<String>, Vec<String>) = if case % 10 == 0 {
            // Add-file case.
            let len = rng.gen_range(1..20);
            (Vec::new(), random_file(&mut rng, len))
        } else {
            let len = rng.gen_range(5..40);
            let pre = random_file(&mut rng, len);
            let mut post = pre.clone();
            // Several edits spread over the file to force multiple hunks.
            for _ in 0..rng.gen_range(1..5) {
                if post.is_empty() {
                    break;
                }
                let at = rng.gen_range(0..post.len());
                match rng.gen_range(0..3) {
                    0 => post[at] = format!("edited_{}", rng.gen_range(0..100)),
                    1 => {
                        post.remove(at);
                    }
                    _ => post.insert(at, format!("inserted_{}", rng.gen_range(0..100))),
                }
            }
            (pre, post)
        };
        let pre = pre_lines
            .iter()
            .map(|l| format!("{l}\n"))
            .collect::<String>();
        let post = post_lines
            .iter()
            .map(|l| format!("{l}\n"))
            .collect::<String>();
        if pre == post {
            continue;
        }
        let (old_label, new_label) = if pre.is_empty() {
            ("/dev/null".to_string(), "b/gen.py".to_string())
        } else {
            ("a/gen.py".to_string(), "b/gen.py".to_string())
        };

        let diff = make_unified_diff(&old_label, &new_label, &pre, &post, 3);
        let files = parse_unified_diff(&diff).unwrap();
        assert_eq!(files.len(), 1, "case {case}");
        let applied = apply_file_diff("gen.py", &pre, &files[0]).unwrap();
        assert_eq!(applied, post, "case {case} apply mismatch");

        // pre - removed + added == post, as line multisets.
        let changes = change_multisets(&files);
        let (removed, added) = &changes["gen.py"];
        let mut working = multiset(&pre_lines);
        for line in removed {
            let count = working.get_mut(line).expect("removed line present in pre");
            *count -= 1;
            if *count == 0 {
                working.remove(line);
            }
        }
        for line in added {
            *working.entry(line).or_default() += 1;
        }
        assert_eq!(working, multiset(&post_lines), "case {case} multiset drift");
    }
    passed("diff round-trip: 50 generated diffs (incl. add-file, multi-hunk) apply exactly and preserve line multisets");
}

// --- criterion 8: search-efficiency sanity --------------------------------

const P_STEP: f64 = 0.3;
const Q_REPAIR: f64 = 0.8;

/// World where step correctness and feedback efficacy are Bernoulli draws
/// from a seeded stream. Step text encodes correctness so score, solve,
/// feedback, and optimize stay deterministic given the path.
struct WorldBackend {
    rng: std::sync::Mutex<ChaCha8Rng>,
    counter: std::sync::Mutex<usize>,
}

impl WorldBackend {
    fn new(seed: u64) -> Self {
        WorldBackend {
            rng: std::sync::Mutex::new(ChaCha8Rng::seed_from_u64(seed)),
            counter: std::sync::Mutex::new(0),
        }
    }
}

impl Backend for WorldBackend {
    fn complete(&self, request: &GatewayRequest) -> Result<String, GatewayError> {
        let last_ok = request
            .path_steps
            .last()
            .map(|s| s.ends_with("+ok"))
            .unwrap_or(false);
        match &request.call {
            CallKind::Propose { count } => {
                let mut rng = self.rng.lock().unwrap();
                let mut counter = self.counter.lock().unwrap();
                let mut out = String::new();
                for i in 0..*count {
                    *counter += 1;
                    let tag = if rng.gen::<f64>() < P_STEP { "+ok" } else { "+bad" };
                    out.push_str(&format!("{}. step{}{tag}\n", i + 1, *counter));
                }
                Ok(out)
            }
            CallKind::Score => Ok(if last_ok { "SCORE: 8" } else { "SCORE: 2" }.to_string()),
            CallKind::Solve => Ok(if last_ok {
                "```\npkg/a.py\n```"
            } else {
                "```\npkg/b.py\n```"
            }
            .to_string()),
            CallKind::Feedback => {
                if last_ok {
                    Ok("NO_FEEDBACK".to_string())
                } else {
                    let mut rng = self.rng.lock().unwrap();
                    if rng.gen::<f64>() < Q_REPAIR {
                        Ok("FEEDBACK: the step points at the wrong file".to_string())
                    } else {
                        Ok("NO_FEEDBACK".to_string())
                    }
                }
            }
            CallKind::Optimize { .. } => {
                let mut counter = self.counter.lock().unwrap();
                *counter += 1;
                Ok(format!("repaired step{}+ok", *counter))
            }
        }
    }

    fn model_tag(&self) -> String {
        "world".into()
    }
}

/// Monte Carlo oracle consuming Bernoulli draws in the same order as the
/// engine does against `WorldBackend`: per iteration, b step draws, then one
/// repair draw when no step was correct.
fn oracle_trial(seed: u64, iterations: usize, branching: usize) -> bool {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..iterations {
        let mut any_ok = false;
        for _ in 0..branching {
            if rng.gen::<f64>() < P_STEP {
                any_ok = true;
            }
        }
        if any_ok {
            return true;
        }
        if rng.gen::<f64>() < Q_REPAIR {
            return true;
        }
    }
    false
}

#[test]
fn criterion_8_search_efficiency_sanity() {
    let start = Instant::now();
    let task = fixture_task();
    let gt = derive_ground_truth(&task).unwrap();
    // One iteration keeps the acceptance probability non-degenerate:
    // closed form (1 - 0.7^3) + 0.7^3 * 0.8 = 0.9314 per iteration.
    let config = EngineConfig {
        max_iterations_t: 1,
        ..EngineConfig::default()
    };

    let trials = 200;
    let mut engine_accepts = 0;
    let mut oracle_accepts = 0;
    let mut baseline_accepts = 0;
    let mut baseline_rng = ChaCha8Rng::seed_from_u64(999_999);
    for trial in 0..trials {
        let seed = 10_000 + trial;
        let backend = WorldBackend::new(seed);
        let run = run_subtask_search(&task, &gt, SubtaskKind::FileLocalization, &backend, &config)
            .unwrap();
        if run.outcome.status == SearchStatus::Accepted {
            engine_accepts += 1;
        }
        if oracle_trial(seed, config.max_iterations_t, config.branching_b) {
            oracle_accepts += 1;
        }
        // Single-turn baseline: one step from the same distribution, one
        // solve, no search and no refinement.
        if baseline_rng.gen::<f64>() < P_STEP {
            baseline_accepts += 1;
        }
    }

    let engine_rate = engine_accepts as f64 / trials as f64;
    let oracle_rate = oracle_accepts as f64 / trials as f64;
    let baseline_rate = baseline_accepts as f64 / trials as f64;
    assert!(
        (engine_rate - oracle_rate).abs() <= 0.05,
        "engine {engine_rate} vs oracle {oracle_rate}"
    );
    assert!(
        engine_rate > baseline_rate,
        "engine {engine_rate} must beat baseline {baseline_rate}"
    );
    let closed_form = (1.0 - (1.0 - P_STEP).powi(3)) + (1.0 - P_STEP).powi(3) * Q_REPAIR;
    assert!((oracle_rate - closed_form).abs() <= 0.07);

    let elapsed = start.elapsed();
    assert!(elapsed.as_secs_f64() < 60.0, "took {elapsed:?}");
    passed(&format!(
        "search efficiency: engine {engine_rate:.3} within 5pp of oracle {oracle_rate:.3}, beats baseline {baseline_rate:.3}"
    ));
}

// --- criterion 9: dataset integrity ---------------------------------------

fn solving_script(task: &IssueTask, gt: &GroundTruth) -> Script {
    let files = gt.modified_files.iter().cloned().collect::<Vec<_>>().join("\n");
    let elements = gt
        .element_keys()
        .iter()
        .map(|(k, f, n)| format!("{k} {f} {n}"))
        .collect::<Vec<_>>()
        .join("\n");
    let edits = synthesize_gold_edits(gt)
        .iter()
        .map(|e| {
            format!(
                "{}\n<<<<<<< SEARCH\n{}\n=======\n{}\n>>>>>>> REPLACE",
                e.file, e.search, e.replace
            )
        })
        .collect::<Vec<_>>()
        .join("\n");
    let _ = task;
    let solve_for = |subtask: SubtaskKind, response: String| ScriptRule {
        call: Some("solve".into()),
        subtask: Some(subtask),
        path_len: None,
        last_step_contains: None,
        times: None,
        response,
    };
    Script {
        rules: vec![
            rule("propose", None, None, "1. alpha\n2. beta\n3. gamma"),
            rule("score", None, None, "SCORE: 7"),
            solve_for(SubtaskKind::FileLocalization, format!("```\n{files}\n```")),
            solve_for(SubtaskKind::FaultLocalization, elements),
            solve_for(SubtaskKind::PatchGeneration, edits),
        ],
        model_tag: "golden".into(),
    }
}

#[test]
fn criterion_9_dataset_integrity() {
    let tasks = golden_corpus();
    let dir = tempfile::tempdir().unwrap();
    let sink = DatasetSink::create(dir.path()).unwrap();
    let config = EngineConfig::default();

    let mut expected = 0;
    for task in &tasks {
        let gt = derive_ground_truth(task).unwrap();
        for subtask in SubtaskKind::ALL {
            let backend = ScriptedBackend::new(solving_script(task, &gt));
            let run = run_subtask_search(task, &gt, subtask, &backend, &config).unwrap();
            let sample = run
                .outcome
                .sample
                .unwrap_or_else(|| panic!("{} {subtask} must accept", task.task_id));
            assert!(sink.emit(&sample, task, &gt).unwrap());
            expected += 1;
        }
    }
    assert_eq!(expected, 60);
    assert_eq!(sink.counts(), (60, 0));

    let report = audit(sink.dataset_path(), &tasks).unwrap();
    assert_eq!(report.records, 60);
    assert!(report.all_passed(), "failures: {:?}", report.failures);

    // Every record also byte-round-trips through serde individually.
    let text = std::fs::read_to_string(sink.dataset_path()).unwrap();
    for line in text.lines() {
        let sample: CoTSample = serde_json::from_str(line).unwrap();
        let again = serde_json::to_string(&sample).unwrap();
        let reparsed: CoTSample = serde_json::from_str(&again).unwrap();
        assert_eq!(reparsed, sample);
        match (&sample.subtask, &sample.final_answer) {
            (SubtaskKind::FileLocalization, CandidateSolution::Files { .. })
            | (SubtaskKind::FaultLocalization, CandidateSolution::Elements { .. })
            | (SubtaskKind::PatchGeneration, CandidateSolution::Edits { .. }) => {}
            other => panic!("subtask/answer kind mismatch: {other:?}"),
        }
    }
    passed("dataset integrity: audit re-validates 60/60 records, all round-trip parse-equal");
}
