//! Reasoning-step search tree and the numeric search mechanics.
//!
//! Nodes hold one reasoning step each; the root holds the subtask objective.
//! Selection walks the tree by upper-confidence-bound score, expansion
//! appends scored children, and backpropagation folds child rewards back
//! into ancestors as a visit-weighted convex combination.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Unique identifier of a node within one tree.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct NodeId(pub u32);

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Reward scale used throughout: gateway scores are integers in `0..=10`,
/// backpropagation immediately produces reals in the same closed range.
pub const REWARD_MAX: f64 = 10.0;

#[derive(Debug, Error, PartialEq)]
pub enum TreeError {
    #[error("visit count must be >= 1 (got n_parent={n_parent}, n_node={n_node})")]
    ZeroVisitCount { n_parent: u64, n_node: u64 },
    #[error("reward {0} outside [0, 10]")]
    RewardOutOfRange(f64),
    #[error("node {parent} already has {have} children, cannot add {adding} (fan-out {fan_out})")]
    FanOutExceeded {
        parent: NodeId,
        have: usize,
        adding: usize,
        fan_out: usize,
    },
    #[error("unknown node {0}")]
    MissingNode(NodeId),
    #[error("tree saturated: no expandable node on the greedy path")]
    Saturated,
}

/// One reasoning step plus its search statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReasoningNode {
    pub id: NodeId,
    pub parent: Option<NodeId>,
    pub step_text: String,
    /// Reward value, always in `[0, 10]`.
    pub q: f64,
    /// Visit count; creation counts as the first visit, so `n >= 1`.
    pub n: u64,
    pub children: Vec<NodeId>,
    /// True once the step text was replaced by an optimization pass.
    pub refined: bool,
    pub feedback_log: Vec<String>,
}

/// The search tree: an arena of nodes keyed by id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchTree {
    nodes: BTreeMap<NodeId, ReasoningNode>,
    root_id: NodeId,
    next_id: u32,
}

/// Upper-confidence-bound score: `q + epsilon * sqrt(ln(n_parent) / n_node)`.
///
/// Both visit counts must be at least 1; a zero count signals a bookkeeping
/// bug upstream rather than a value this formula should absorb.
pub fn ucb(q: f64, n_parent: u64, n_node: u64, epsilon: f64) -> Result<f64, TreeError> {
    if n_parent == 0 || n_node == 0 {
        return Err(TreeError::ZeroVisitCount { n_parent, n_node });
    }
    Ok(q + epsilon * ((n_parent as f64).ln() / n_node as f64).sqrt())
}

impl SearchTree {
    /// Builds a tree whose root holds the subtask objective.
    pub fn new(objective: impl Into<String>) -> Self {
        let root_id = NodeId(0);
        let root = ReasoningNode {
            id: root_id,
            parent: None,
            step_text: objective.into(),
            q: 0.0,
            n: 1,
            children: Vec::new(),
            refined: false,
            feedback_log: Vec::new(),
        };
        let mut nodes = BTreeMap::new();
        nodes.insert(root_id, root);
        SearchTree {
            nodes,
            root_id,
            next_id: 1,
        }
    }

    pub fn root_id(&self) -> NodeId {
        self.root_id
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn node(&self, id: NodeId) -> Result<&ReasoningNode, TreeError> {
        self.nodes.get(&id).ok_or(TreeError::MissingNode(id))
    }

    pub fn node_mut(&mut self, id: NodeId) -> Result<&mut ReasoningNode, TreeError> {
        self.nodes.get_mut(&id).ok_or(TreeError::MissingNode(id))
    }

    pub fn nodes(&self) -> impl Iterator<Item = &ReasoningNode> {
        self.nodes.values()
    }

    /// Number of steps from the root (root is depth 0).
    pub fn depth(&self, id: NodeId) -> Result<usize, TreeError> {
        let mut depth = 0;
        let mut cur = self.node(id)?;
        while let Some(parent) = cur.parent {
            depth += 1;
            cur = self.node(parent)?;
        }
        Ok(depth)
    }

    /// Node ids from the root down to `id`, inclusive.
    pub fn path_to(&self, id: NodeId) -> Result<Vec<NodeId>, TreeError> {
        let mut path = vec![id];
        let mut cur = self.node(id)?;
        while let Some(parent) = cur.parent {
            path.push(parent);
            cur = self.node(parent)?;
        }
        path.reverse();
        Ok(path)
    }

    /// Step texts along the path from the root's first child down to `id`.
    /// The root objective itself is not a reasoning step and is excluded.
    pub fn path_steps(&self, id: NodeId) -> Result<Vec<String>, TreeError> {
        Ok(self
            .path_to(id)?
            .into_iter()
            .skip(1)
            .map(|nid| self.nodes[&nid].step_text.clone())
            .collect())
    }

    /// Greedy descent by UCB until an expandable node is reached.
    ///
    /// A node is expandable when it has fewer than `fan_out` children and its
    /// depth is below `max_depth`. Ties between equal-scored children break
    /// toward the smallest node id.
    pub fn select_leaf(
        &self,
        epsilon: f64,
        fan_out: usize,
        max_depth: usize,
    ) -> Result<NodeId, TreeError> {
        let mut current = self.root_id;
        let mut depth = 0;
        loop {
            let node = self.node(current)?;
            if node.children.len() < fan_out && depth < max_depth {
                return Ok(current);
            }
            if node.children.is_empty() {
                // Depth budget exhausted on a leaf.
                return Err(TreeError::Saturated);
            }
            let mut best: Option<(f64, NodeId)> = None;
            for &child_id in &node.children {
                let child = self.node(child_id)?;
                let score = ucb(child.q, node.n, child.n, epsilon)?;
                let better = match best {
                    None => true,
                    Some((best_score, best_id)) => {
                        score > best_score || (score == best_score && child_id < best_id)
                    }
                };
                if better {
                    best = Some((score, child_id));
                }
            }
            current = best.expect("non-empty children").1;
            depth += 1;
        }
    }

    /// Appends one child per `(step_text, reward)` entry, in order, each with
    /// visit count 1. Fails without mutating if the batch would exceed the
    /// fan-out or any reward falls outside the scale.
    pub fn expand(
        &mut self,
        parent: NodeId,
        steps: &[(String, f64)],
        fan_out: usize,
    ) -> Result<Vec<NodeId>, TreeError> {
        let have = self.node(parent)?.children.len();
        if have + steps.len() > fan_out {
            return Err(TreeError::FanOutExceeded {
                parent,
                have,
                adding: steps.len(),
                fan_out,
            });
        }
        for &(_, reward) in steps {
            if !(0.0..=REWARD_MAX).contains(&reward) {
                return Err(TreeError::RewardOutOfRange(reward));
            }
        }
        let mut new_ids = Vec::with_capacity(steps.len());
        for (text, reward) in steps {
            let id = NodeId(self.next_id);
            self.next_id += 1;
            self.nodes.insert(
                id,
                ReasoningNode {
                    id,
                    parent: Some(parent),
                    step_text: text.clone(),
                    q: *reward,
                    n: 1,
                    children: Vec::new(),
                    refined: false,
                    feedback_log: Vec::new(),
                },
            );
            self.nodes
                .get_mut(&parent)
                .expect("parent checked above")
                .children
                .push(id);
            new_ids.push(id);
        }
        Ok(new_ids)
    }

    /// Replaces `q` on a node, e.g. after its step was rewritten and
    /// re-scored.
    pub fn set_reward(&mut self, id: NodeId, q: f64) -> Result<(), TreeError> {
        if !(0.0..=REWARD_MAX).contains(&q) {
            return Err(TreeError::RewardOutOfRange(q));
        }
        self.node_mut(id)?.q = q;
        Ok(())
    }

    /// Bottom-up reward/visit update from `from` to the root.
    ///
    /// Every node on the path gains one visit. Each non-leaf node on the path
    /// then folds in the visit-weighted mean reward of all its current
    /// children: `q <- alpha * q + (1 - alpha) * weighted_mean`. Children are
    /// read after their own update, so the propagation uses fresh values.
    pub fn backpropagate(&mut self, from: NodeId, alpha: f64) -> Result<(), TreeError> {
        let path = self.path_to(from)?;
        for &id in path.iter().rev() {
            let node = self.node(id)?;
            let increment = if node.children.is_empty() {
                None
            } else {
                let mut weight_sum = 0.0;
                let mut weighted = 0.0;
                for &child_id in &node.children {
                    let child = self.node(child_id)?;
                    weight_sum += child.n as f64;
                    weighted += child.n as f64 * child.q;
                }
                Some(weighted / weight_sum)
            };
            let node = self.node_mut(id)?;
            node.n += 1;
            if let Some(inc) = increment {
                node.q = alpha * node.q + (1.0 - alpha) * inc;
            }
        }
        Ok(())
    }

    /// Line-oriented text dump, one node per line in id order:
    /// `id<TAB>parent<TAB>q<TAB>n<TAB>refined<TAB>step text` with tab and
    /// newline characters escaped inside the step text.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        for node in self.nodes.values() {
            let parent = node
                .parent
                .map(|p| p.to_string())
                .unwrap_or_else(|| "-".to_string());
            let text = node
                .step_text
                .replace('\\', "\\\\")
                .replace('\t', "\\t")
                .replace('\n', "\\n");
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\t{}\t{}\n",
                node.id, parent, node.q, node.n, node.refined, text
            ));
        }
        out
    }

    /// Structural well-formedness check: single root, parent/child symmetry,
    /// all nodes reachable, id counter ahead of every allocation.
    pub fn check_invariants(&self) -> Result<(), String> {
        let mut seen = 0usize;
        let mut stack = vec![self.root_id];
        while let Some(id) = stack.pop() {
            seen += 1;
            let node = self.nodes.get(&id).ok_or(format!("dangling node {id}"))?;
            if !(0.0..=REWARD_MAX).contains(&node.q) {
                return Err(format!("node {id} reward {} out of range", node.q));
            }
            if node.n == 0 {
                return Err(format!("node {id} has zero visits"));
            }
            if id.0 >= self.next_id {
                return Err(format!("node {id} not below next_id {}", self.next_id));
            }
            for &child in &node.children {
                let c = self.nodes.get(&child).ok_or(format!("dangling child {child}"))?;
                if c.parent != Some(id) {
                    return Err(format!("child {child} does not point back to {id}"));
                }
                stack.push(child);
            }
        }
        if seen != self.nodes.len() {
            return Err(format!(
                "{} of {} nodes reachable from root",
                seen,
                self.nodes.len()
            ));
        }
        Ok(())
    }
}
