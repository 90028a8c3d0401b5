//! Shared vocabulary: questions, documents, reasoning states, actions,
//! search nodes and trees.
//!
//! A reasoning state is the ordered concatenation of the intermediate
//! results produced so far; appending never mutates earlier entries, and
//! rendering joins the results with a single space. Search trees are
//! arena-backed: nodes are owned by the tree and addressed by [`NodeId`],
//! which doubles as the creation index used for tie-breaking.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mcts::SearchConfig;

/// Separator inserted between intermediate results when a state is rendered.
pub const STATE_SEPARATOR: &str = " ";

#[derive(Debug, Error)]
pub enum DomainError {
    #[error("intermediate result must be non-empty")]
    EmptyResult,
}

/// One retrievable document in a question's private corpus.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    pub title: String,
    pub text: String,
}

/// One benchmark instance together with its private knowledge base.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Question {
    pub id: String,
    pub text: String,
    pub gold_answer: String,
    pub corpus: Vec<Document>,
    pub gold_support_ids: BTreeSet<String>,
}

impl Question {
    /// Looks up a corpus document by id.
    pub fn document(&self, id: &str) -> Option<&Document> {
        self.corpus.iter().find(|d| d.id == id)
    }
}

/// One search step: the sub-question asked and the intermediate result
/// produced from the documents retrieved for it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Action {
    pub sub_question: String,
    pub intermediate_result: String,
    pub retrieved_ids: Vec<String>,
    /// True when the reasoning step reported no usable evidence.
    #[serde(default)]
    pub no_evidence: bool,
}

/// Ordered accumulation of intermediate results. Value semantics: `append`
/// returns a new state and leaves the receiver untouched.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReasoningState {
    results: Vec<String>,
}

impl ReasoningState {
    pub fn new() -> Self {
        Self::default()
    }

    /// Returns a new state with `result` appended.
    pub fn append(&self, result: &str) -> Result<Self, DomainError> {
        if result.is_empty() {
            return Err(DomainError::EmptyResult);
        }
        let mut results = self.results.clone();
        results.push(result.to_owned());
        Ok(Self { results })
    }

    /// Joins the results in insertion order with [`STATE_SEPARATOR`].
    /// The empty state renders as the empty string.
    pub fn render(&self) -> String {
        self.results.join(STATE_SEPARATOR)
    }

    pub fn results(&self) -> &[String] {
        &self.results
    }

    pub fn is_empty(&self) -> bool {
        self.results.is_empty()
    }

    pub fn len(&self) -> usize {
        self.results.len()
    }
}

/// Index of a node within its [`SearchTree`]; also the creation order.
pub type NodeId = usize;

/// One (state, action) pair in the search tree. The stored state is the
/// state *after* applying the node's action; the pair
/// (parent state, action) reconstructs the transition.
#[derive(Debug, Clone)]
pub struct SearchNode {
    pub state: ReasoningState,
    /// Absent only at the root.
    pub action: Option<Action>,
    pub q_value: f64,
    pub visits: u64,
    pub depth: usize,
    pub parent: Option<NodeId>,
    pub children: Vec<NodeId>,
    /// Set once expansion can produce no further children for this node.
    pub exhausted: bool,
}

/// Arena-backed search tree rooted at the empty reasoning state.
#[derive(Debug, Clone)]
pub struct SearchTree {
    pub question_id: String,
    pub seed: u64,
    pub config: SearchConfig,
    nodes: Vec<SearchNode>,
    /// Populated when a run aborted and left a partial tree behind.
    pub error: Option<String>,
}

pub const ROOT: NodeId = 0;

impl SearchTree {
    /// Creates a tree holding only the root. The root counts its own
    /// initial evaluation as one visit so backpropagation means are
    /// well-defined from the first iteration.
    pub fn new(question_id: impl Into<String>, seed: u64, config: SearchConfig) -> Self {
        let root = SearchNode {
            state: ReasoningState::new(),
            action: None,
            q_value: 0.5,
            visits: 1,
            depth: 0,
            parent: None,
            children: Vec::new(),
            exhausted: false,
        };
        Self {
            question_id: question_id.into(),
            seed,
            config,
            nodes: vec![root],
            error: None,
        }
    }

    pub fn node(&self, id: NodeId) -> &SearchNode {
        &self.nodes[id]
    }

    pub fn node_mut(&mut self, id: NodeId) -> &mut SearchNode {
        &mut self.nodes[id]
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn node_ids(&self) -> impl Iterator<Item = NodeId> {
        0..self.nodes.len()
    }

    /// Appends a child created with one initial evaluation (visits = 1).
    pub fn add_child(
        &mut self,
        parent: NodeId,
        action: Action,
        state: ReasoningState,
        q_value: f64,
    ) -> NodeId {
        let depth = self.nodes[parent].depth + 1;
        let id = self.nodes.len();
        self.nodes.push(SearchNode {
            state,
            action: Some(action),
            q_value,
            visits: 1,
            depth,
            parent: Some(parent),
            children: Vec::new(),
            exhausted: false,
        });
        self.nodes[parent].children.push(id);
        id
    }

    /// Root-to-node path of ids, root first.
    pub fn path_to(&self, id: NodeId) -> Vec<NodeId> {
        let mut path = vec![id];
        let mut cur = id;
        while let Some(p) = self.nodes[cur].parent {
            path.push(p);
            cur = p;
        }
        path.reverse();
        path
    }

    /// Sub-questions asked along the root-to-node path, in order.
    pub fn sub_questions_to(&self, id: NodeId) -> Vec<String> {
        self.path_to(id)
            .into_iter()
            .filter_map(|n| self.nodes[n].action.as_ref())
            .map(|a| a.sub_question.clone())
            .collect()
    }

    /// True when every node reaches the root by parent links without
    /// revisiting itself (no cycles, single root).
    pub fn is_acyclic(&self) -> bool {
        for id in self.node_ids() {
            let mut cur = id;
            let mut steps = 0;
            while let Some(p) = self.nodes[cur].parent {
                cur = p;
                steps += 1;
                if steps > self.nodes.len() {
                    return false;
                }
            }
            if cur != ROOT {
                return false;
            }
        }
        true
    }

    pub fn dump(&self) -> TreeDump {
        TreeDump {
            question_id: self.question_id.clone(),
            seed: self.seed,
            config: self.config.clone(),
            nodes: self
                .nodes
                .iter()
                .enumerate()
                .map(|(id, n)| NodeDump {
                    id,
                    parent_id: n.parent,
                    depth: n.depth,
                    sub_question: n.action.as_ref().map(|a| a.sub_question.clone()),
                    intermediate_result: n.action.as_ref().map(|a| a.intermediate_result.clone()),
                    retrieved_ids: n
                        .action
                        .as_ref()
                        .map(|a| a.retrieved_ids.clone())
                        .unwrap_or_default(),
                    q_value: n.q_value,
                    visits: n.visits,
                })
                .collect(),
        }
    }
}

/// Root-to-leaf path selected by the greedy policy, plus the answer
/// generated from the path's final reasoning state.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Trajectory {
    pub node_ids: Vec<NodeId>,
    pub final_answer: String,
}

impl Trajectory {
    /// A trajectory is complete when it reaches the configured depth cap.
    pub fn is_complete(&self, tree: &SearchTree) -> bool {
        self.node_ids
            .last()
            .map(|&id| tree.node(id).depth == tree.config.max_depth)
            .unwrap_or(false)
    }
}

/// Serializable snapshot of a search tree.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeDump {
    pub question_id: String,
    pub seed: u64,
    pub config: SearchConfig,
    pub nodes: Vec<NodeDump>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeDump {
    pub id: usize,
    pub parent_id: Option<usize>,
    pub depth: usize,
    pub sub_question: Option<String>,
    pub intermediate_result: Option<String>,
    pub retrieved_ids: Vec<String>,
    pub q_value: f64,
    pub visits: u64,
}

impl TreeDump {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("tree dump serializes")
    }

    pub fn from_json(raw: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(raw)
    }

    /// DOT rendering with one graph node per tree node, labeled depth/Q/N.
    pub fn to_dot(&self) -> String {
        let mut out = String::from("digraph search_tree {\n");
        out.push_str("  node [shape=box];\n");
        for n in &self.nodes {
            out.push_str(&format!(
                "  n{} [label=\"#{} d={} Q={:.4} N={}\"];\n",
                n.id, n.id, n.depth, n.q_value, n.visits
            ));
        }
        for n in &self.nodes {
            if let Some(parent) = n.parent_id {
                out.push_str(&format!("  n{} -> n{};\n", parent, n.id));
            }
        }
        out.push_str("}\n");
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn action(subq: &str, result: &str) -> Action {
        Action {
            sub_question: subq.to_owned(),
            intermediate_result: result.to_owned(),
            retrieved_ids: vec![],
            no_evidence: false,
        }
    }

    #[test]
    fn append_to_empty_state() {
        let s = ReasoningState::new().append("A is B.").unwrap();
        assert_eq!(s.results(), ["A is B."]);
    }

    #[test]
    fn append_preserves_input_state() {
        let s1 = ReasoningState::new().append("r1").unwrap();
        let s2 = s1.append("r2").unwrap();
        assert_eq!(s1.results(), ["r1"]);
        assert_eq!(s2.results(), ["r1", "r2"]);
        assert_eq!(s2.render(), "r1 r2");
    }

    #[test]
    fn append_empty_result_rejected() {
        let s = ReasoningState::new().append("r1").unwrap();
        assert!(matches!(s.append(""), Err(DomainError::EmptyResult)));
    }

    #[test]
    fn render_empty_state_is_empty_string() {
        assert_eq!(ReasoningState::new().render(), "");
    }

    #[test]
    fn render_single_result_verbatim() {
        let text = "The winner of the 1894-95 FA Cup is Aston Villa.";
        let s = ReasoningState::new().append(text).unwrap();
        assert_eq!(s.render(), text);
    }

    #[test]
    fn render_joins_with_single_space() {
        let s = ReasoningState::new()
            .append("a")
            .unwrap()
            .append("b")
            .unwrap();
        assert_eq!(s.render(), "a b");
    }

    proptest! {
        #[test]
        fn append_render_associativity(
            base in proptest::collection::vec("[a-z]{1,6}", 0..5),
            a in "[a-z]{1,6}",
            b in "[a-z]{1,6}",
        ) {
            let mut s = ReasoningState::new();
            for r in &base {
                s = s.append(r).unwrap();
            }
            let joined = s.append(&a).unwrap().append(&b).unwrap().render();
            let manual = if s.is_empty() {
                format!("{a} {b}")
            } else {
                format!("{} {a} {b}", s.render())
            };
            prop_assert_eq!(joined, manual);
        }
    }

    #[test]
    fn tree_links_and_acyclicity() {
        let mut tree = SearchTree::new("q", 0, SearchConfig::default());
        let s1 = ReasoningState::new().append("r1").unwrap();
        let c1 = tree.add_child(ROOT, action("d1", "r1"), s1.clone(), 0.4);
        let c2 = tree.add_child(ROOT, action("d2", "r2"), s1.append("x").unwrap(), 0.6);
        let g = tree.add_child(c1, action("d3", "r3"), s1.append("r3").unwrap(), 0.7);
        assert_eq!(tree.node(c1).depth, 1);
        assert_eq!(tree.node(g).depth, 2);
        assert_eq!(tree.node(ROOT).children, vec![c1, c2]);
        assert!(tree.is_acyclic());
        assert_eq!(tree.path_to(g), vec![ROOT, c1, g]);
        assert_eq!(tree.sub_questions_to(g), vec!["d1", "d3"]);
    }

    #[test]
    fn dump_round_trips_and_renders_dot() {
        let mut tree = SearchTree::new("q7", 3, SearchConfig::default());
        let s1 = ReasoningState::new().append("r1").unwrap();
        let c1 = tree.add_child(ROOT, action("d1", "r1"), s1.clone(), 0.4);
        tree.add_child(c1, action("d2", "r2"), s1.append("r2").unwrap(), 0.9);

        let dump = tree.dump();
        let json = dump.to_json();
        let back = TreeDump::from_json(&json).unwrap();
        assert_eq!(back, dump);
        assert_eq!(back.to_json(), json);

        let dot = dump.to_dot();
        assert_eq!(dot.matches("label=").count(), 3);
        assert_eq!(dot.matches("->").count(), 2);
    }
}
