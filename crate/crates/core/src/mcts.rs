//! The four-phase search loop: selection, expansion, simulation,
//! backpropagation — plus greedy final-path extraction and Pass@N.
//!
//! Each iteration selects a frontier node by UCT, expands it with freshly
//! decomposed sub-questions (retrieve-then-reason per child), runs one
//! imagined rollout from the first new child, and backpropagates the
//! rollout value. Internal node values are the visit-weighted mean of
//! their children; leaves keep a running mean of their own evaluations.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{BackendError, GenerationRequest, PolicyBackend};
use crate::domain::{Action, NodeId, Question, ReasoningState, SearchTree, Trajectory, ROOT};
use crate::eval::covered_em;
use crate::prompts::{
    parse_decomposition, render_documents, PromptSet, TemplateError, TemplateName,
    NO_EVIDENCE_SENTINEL,
};
use crate::retrieval::{Bm25Index, Bm25Params, IndexError};
use crate::risk::{NodeValuator, RiskError, RiskParams, ValueMode};

#[derive(Debug, Error)]
pub enum SearchError {
    #[error("invalid search config: {0}")]
    InvalidConfig(String),
    #[error("operation violates a precondition: {0}")]
    Precondition(String),
    #[error("expansion produced no parseable sub-question at node {node}")]
    Expansion { node: NodeId },
    #[error(transparent)]
    Index(#[from] IndexError),
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Risk(#[from] RiskError),
    /// The run stopped early; the partial tree carries an error annotation.
    #[error("search aborted: {message}")]
    Aborted {
        message: String,
        partial: Box<SearchTree>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchConfig {
    /// Number of select/expand/simulate/backpropagate loops.
    pub iterations: usize,
    /// UCT exploration weight `w`.
    pub exploration_weight: f64,
    /// Depth cap; trajectories end at this depth.
    pub max_depth: usize,
    /// Per-depth cap on children: entry `d` bounds the children of nodes at
    /// depth `d` (i.e. the nodes living at depth `d + 1`).
    pub width_schedule: Vec<usize>,
    /// Candidate steps sampled per rollout level.
    pub rollout_samples: usize,
    pub temperature: f64,
    /// Documents retrieved per sub-question.
    pub top_k_docs: usize,
    pub value_mode: ValueMode,
    pub seed: u64,
    pub max_tokens: usize,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self {
            iterations: 200,
            exploration_weight: 1.4,
            max_depth: 4,
            width_schedule: vec![5, 4, 3, 2],
            rollout_samples: 2,
            temperature: 0.7,
            top_k_docs: 2,
            value_mode: ValueMode::RiskValue,
            seed: 0,
            max_tokens: 256,
        }
    }
}

impl SearchConfig {
    pub fn validate(&self) -> Result<(), SearchError> {
        if self.iterations == 0 {
            return Err(SearchError::InvalidConfig("iterations must be >= 1".into()));
        }
        if self.max_depth == 0 {
            return Err(SearchError::InvalidConfig("max_depth must be >= 1".into()));
        }
        if self.width_schedule.len() != self.max_depth {
            return Err(SearchError::InvalidConfig(format!(
                "width_schedule has {} entries, expected max_depth = {}",
                self.width_schedule.len(),
                self.max_depth
            )));
        }
        if self.width_schedule.contains(&0) {
            return Err(SearchError::InvalidConfig("all widths must be >= 1".into()));
        }
        if self.rollout_samples == 0 {
            return Err(SearchError::InvalidConfig(
                "rollout_samples must be >= 1".into(),
            ));
        }
        if self.top_k_docs == 0 {
            return Err(SearchError::InvalidConfig("top_k_docs must be >= 1".into()));
        }
        Ok(())
    }

    /// Children cap for a node at `depth`.
    pub fn child_cap(&self, depth: usize) -> usize {
        self.width_schedule.get(depth).copied().unwrap_or(0)
    }
}

/// UCT selection score. Unvisited children score +inf so each child is
/// tried once before any is revisited.
pub fn uct(child_q: f64, child_visits: u64, parent_visits: u64, w: f64) -> f64 {
    if child_visits == 0 {
        return f64::INFINITY;
    }
    child_q + w * ((parent_visits as f64).ln() / child_visits as f64).sqrt()
}

/// Descends from the root by argmax UCT and returns the first node that
/// still accepts children, has nowhere to descend, or sits at the depth
/// cap. Ties break toward the earliest-created child.
pub fn select(tree: &SearchTree, config: &SearchConfig) -> NodeId {
    let mut id = ROOT;
    loop {
        let node = tree.node(id);
        if node.depth == config.max_depth {
            return id;
        }
        let expandable = !node.exhausted && node.children.len() < config.child_cap(node.depth);
        if expandable || node.children.is_empty() {
            return id;
        }
        let parent_visits = node.visits;
        let mut best = node.children[0];
        let mut best_score = f64::NEG_INFINITY;
        for &child in &node.children {
            let c = tree.node(child);
            let score = uct(
                c.q_value,
                c.visits,
                parent_visits,
                config.exploration_weight,
            );
            if score > best_score {
                best_score = score;
                best = child;
            }
        }
        id = best;
    }
}

/// Visit-weighted mean of a node's children, `Σ Q(c)·N(c) / Σ N(c)`.
/// `None` for childless nodes.
pub fn child_weighted_mean(tree: &SearchTree, id: NodeId) -> Option<f64> {
    let children = &tree.node(id).children;
    if children.is_empty() {
        return None;
    }
    let (num, den) = children
        .iter()
        .map(|&c| {
            let child = tree.node(c);
            (child.q_value * child.visits as f64, child.visits as f64)
        })
        .fold((0.0, 0.0), |(n, d), (cn, cd)| (n + cn, d + cd));
    Some(num / den)
}

/// Folds one rollout value into `from`, then updates every ancestor
/// bottom-up: visits increment and the value becomes the visit-weighted
/// mean over the node's children.
///
/// A childless `from` keeps a running mean of its own evaluations. A
/// `from` that already has children stays on the weighted-mean rule — its
/// value is determined by its children, so the rollout value only counts
/// as a visit there.
pub fn backpropagate(tree: &mut SearchTree, from: NodeId, value: f64) {
    if tree.node(from).children.is_empty() {
        let node = tree.node_mut(from);
        node.q_value = (node.q_value * node.visits as f64 + value) / (node.visits as f64 + 1.0);
        node.visits += 1;
    } else {
        let mean = child_weighted_mean(tree, from);
        let node = tree.node_mut(from);
        if let Some(mean) = mean {
            node.q_value = mean;
        }
        node.visits += 1;
    }
    let mut cur = tree.node(from).parent;
    while let Some(id) = cur {
        let mean = child_weighted_mean(tree, id);
        let node = tree.node_mut(id);
        if let Some(mean) = mean {
            node.q_value = mean;
        }
        node.visits += 1;
        cur = node.parent;
    }
}

/// Outcome of enumerating final answers over a finished tree.
#[derive(Debug, Clone)]
pub struct PassOutcome {
    pub trajectory: Trajectory,
    /// Covered EM of the greedy best path's answer.
    pub pass_1: bool,
    /// True when the best path or any complete root-to-cap path answers
    /// correctly.
    pub pass_n: bool,
}

/// Owns one search's collaborators; trees are produced per question.
pub struct Searcher<'a> {
    backend: &'a dyn PolicyBackend,
    prompts: &'a PromptSet,
    config: SearchConfig,
    risk_params: RiskParams,
    bm25: Bm25Params,
}

impl<'a> Searcher<'a> {
    pub fn new(
        backend: &'a dyn PolicyBackend,
        prompts: &'a PromptSet,
        config: SearchConfig,
        risk_params: RiskParams,
        bm25: Bm25Params,
    ) -> Self {
        Self {
            backend,
            prompts,
            config,
            risk_params,
            bm25,
        }
    }

    pub fn config(&self) -> &SearchConfig {
        &self.config
    }

    fn valuator(&self) -> NodeValuator<'_> {
        NodeValuator {
            backend: &self.backend,
            prompts: self.prompts,
            mode: self.config.value_mode,
            params: self.risk_params,
            temperature: self.config.temperature,
            max_tokens: self.config.max_tokens,
        }
    }

    /// Runs the full iteration budget and returns the finished tree.
    pub fn run_search(&self, question: &Question) -> Result<SearchTree, SearchError> {
        self.run_search_traced(question, |_, _| {})
    }

    /// As [`run_search`](Self::run_search), invoking `on_iteration` with the
    /// tree after every completed iteration (1-based).
    pub fn run_search_traced(
        &self,
        question: &Question,
        mut on_iteration: impl FnMut(usize, &SearchTree),
    ) -> Result<SearchTree, SearchError> {
        self.config.validate()?;
        let index = Bm25Index::build(&question.corpus, self.bm25)?;
        let mut tree = SearchTree::new(question.id.clone(), self.config.seed, self.config.clone());
        for iteration in 1..=self.config.iterations {
            let selected = select(&tree, &self.config);
            let rollout_from = if self.is_expandable(&tree, selected) {
                match self.expand(&mut tree, selected, question, &index) {
                    Ok(new_children) if !new_children.is_empty() => new_children[0],
                    Ok(_) => {
                        tree.node_mut(selected).exhausted = true;
                        selected
                    }
                    Err(SearchError::Expansion { .. }) => {
                        tree.node_mut(selected).exhausted = true;
                        selected
                    }
                    Err(err) => return Err(abort(tree, err)),
                }
            } else {
                selected
            };
            let value = match self.simulate(&tree, rollout_from, question, &index) {
                Ok(v) => v,
                Err(err) => return Err(abort(tree, err)),
            };
            backpropagate(&mut tree, rollout_from, value);
            on_iteration(iteration, &tree);
        }
        Ok(tree)
    }

    fn is_expandable(&self, tree: &SearchTree, id: NodeId) -> bool {
        let node = tree.node(id);
        node.depth < self.config.max_depth
            && !node.exhausted
            && node.children.len() < self.config.child_cap(node.depth)
    }

    /// Samples decompositions at the node, deduplicates them against each
    /// other and the node's existing children, and materializes one child
    /// per fresh sub-question (retrieve, reason, value).
    pub fn expand(
        &self,
        tree: &mut SearchTree,
        node_id: NodeId,
        question: &Question,
        index: &Bm25Index,
    ) -> Result<Vec<NodeId>, SearchError> {
        let node = tree.node(node_id);
        if node.depth >= self.config.max_depth {
            return Err(SearchError::Precondition(format!(
                "cannot expand node {node_id} at the depth cap"
            )));
        }
        let cap = self.config.child_cap(node.depth);
        if node.children.len() >= cap {
            return Err(SearchError::Precondition(format!(
                "node {node_id} is already fully expanded"
            )));
        }
        let n_samples = cap - node.children.len();
        let parent_state = node.state.clone();
        let observation = self.observation_for(tree, node_id, question);
        let prompt = self.prompts.render(
            TemplateName::Decompose,
            &[
                ("original question", question.text.as_str()),
                ("reasoning state", parent_state.render().as_str()),
                ("retrieved documents", observation.as_str()),
            ],
        )?;
        let samples = self.backend.generate(
            &GenerationRequest::new(prompt, self.config.temperature)
                .with_samples(n_samples)
                .with_max_tokens(self.config.max_tokens),
        )?;

        let mut seen: Vec<String> = tree
            .node(node_id)
            .children
            .iter()
            .filter_map(|&c| tree.node(c).action.as_ref())
            .map(|a| a.sub_question.clone())
            .collect();
        let mut parsed_any = false;
        let mut new_children = Vec::new();
        let path_sub_questions = tree.sub_questions_to(node_id);
        let valuator = self.valuator();
        for raw in &samples {
            let Ok(decomposition) = parse_decomposition(raw) else {
                continue;
            };
            parsed_any = true;
            let sub_question = decomposition.sub_question;
            if seen.contains(&sub_question) {
                continue;
            }
            seen.push(sub_question.clone());

            let (result, retrieved_ids) = self.reason_step(question, index, &sub_question)?;
            if result.is_empty() {
                continue;
            }
            let state = parent_state
                .append(&result)
                .expect("non-empty result appends");
            let mut sub_questions = path_sub_questions.clone();
            sub_questions.push(sub_question.clone());
            let q_value = valuator.value(question, &state, &sub_questions)?;
            let no_evidence = result == NO_EVIDENCE_SENTINEL;
            let child = tree.add_child(
                node_id,
                Action {
                    sub_question,
                    intermediate_result: result,
                    retrieved_ids,
                    no_evidence,
                },
                state,
                q_value,
            );
            new_children.push(child);
        }
        if !parsed_any {
            return Err(SearchError::Expansion { node: node_id });
        }
        Ok(new_children)
    }

    /// Imagined greedy rollout to the depth cap; never mutates the tree.
    /// At each level, `rollout_samples` candidate steps are drawn and the
    /// highest-valued one advances. Returns the final state's value.
    pub fn simulate(
        &self,
        tree: &SearchTree,
        node_id: NodeId,
        question: &Question,
        index: &Bm25Index,
    ) -> Result<f64, SearchError> {
        let node = tree.node(node_id);
        let valuator = self.valuator();
        let mut sub_questions = tree.sub_questions_to(node_id);
        let mut state = node.state.clone();
        let mut depth = node.depth;
        let mut observation = self.observation_for(tree, node_id, question);
        if depth >= self.config.max_depth {
            return Ok(valuator.value(question, &state, &sub_questions)?);
        }
        let mut last_value = None;
        while depth < self.config.max_depth {
            let prompt = self.prompts.render(
                TemplateName::Decompose,
                &[
                    ("original question", question.text.as_str()),
                    ("reasoning state", state.render().as_str()),
                    ("retrieved documents", observation.as_str()),
                ],
            )?;
            let samples = self.backend.generate(
                &GenerationRequest::new(prompt, self.config.temperature)
                    .with_samples(self.config.rollout_samples)
                    .with_max_tokens(self.config.max_tokens),
            )?;
            let mut candidates: Vec<String> = Vec::new();
            for raw in &samples {
                if let Ok(d) = parse_decomposition(raw) {
                    if !candidates.contains(&d.sub_question) {
                        candidates.push(d.sub_question);
                    }
                }
            }
            let mut best: Option<(f64, ReasoningState, String, Vec<String>)> = None;
            for sub_question in candidates {
                let (result, retrieved_ids) = self.reason_step(question, index, &sub_question)?;
                if result.is_empty() {
                    continue;
                }
                let next_state = state.append(&result).expect("non-empty result appends");
                let mut next_subs = sub_questions.clone();
                next_subs.push(sub_question.clone());
                let value = valuator.value(question, &next_state, &next_subs)?;
                if best.as_ref().map(|(v, ..)| value > *v).unwrap_or(true) {
                    best = Some((value, next_state, sub_question, retrieved_ids));
                }
            }
            match best {
                Some((value, next_state, sub_question, retrieved_ids)) => {
                    state = next_state;
                    sub_questions.push(sub_question);
                    observation = self.render_docs_by_id(question, &retrieved_ids);
                    depth += 1;
                    last_value = Some(value);
                }
                // No candidate survived; the rollout ends on the current state.
                None => break,
            }
        }
        match last_value {
            Some(v) => Ok(v),
            None => Ok(valuator.value(question, &state, &sub_questions)?),
        }
    }

    /// Greedy best path: argmax child value at every level, ties toward
    /// the earliest-created child; the final answer is generated over the
    /// path's last reasoning state.
    pub fn best_path(
        &self,
        tree: &SearchTree,
        question: &Question,
    ) -> Result<Trajectory, SearchError> {
        let mut node_ids = vec![ROOT];
        let mut cur = ROOT;
        while tree.node(cur).depth < self.config.max_depth {
            let children = &tree.node(cur).children;
            if children.is_empty() {
                break;
            }
            let mut best = children[0];
            let mut best_q = f64::NEG_INFINITY;
            for &child in children {
                let q = tree.node(child).q_value;
                if q > best_q {
                    best_q = q;
                    best = child;
                }
            }
            node_ids.push(best);
            cur = best;
        }
        let final_answer = self.generate_final_answer(question, &tree.node(cur).state)?;
        Ok(Trajectory {
            node_ids,
            final_answer,
        })
    }

    /// Pass@1 grades the greedy path's answer; Pass@N additionally accepts
    /// any complete root-to-cap path whose generated answer is correct.
    pub fn pass_at_n(
        &self,
        tree: &SearchTree,
        question: &Question,
    ) -> Result<PassOutcome, SearchError> {
        let trajectory = self.best_path(tree, question)?;
        let pass_1 = covered_em(&trajectory.final_answer, &question.gold_answer)
            .map_err(|e| SearchError::Precondition(e.to_string()))?;
        let mut pass_n = pass_1;
        if !pass_n {
            for id in tree.node_ids() {
                if tree.node(id).depth != self.config.max_depth {
                    continue;
                }
                let answer = self.generate_final_answer(question, &tree.node(id).state)?;
                if covered_em(&answer, &question.gold_answer)
                    .map_err(|e| SearchError::Precondition(e.to_string()))?
                {
                    pass_n = true;
                    break;
                }
            }
        }
        Ok(PassOutcome {
            trajectory,
            pass_1,
            pass_n,
        })
    }

    pub fn generate_final_answer(
        &self,
        question: &Question,
        state: &ReasoningState,
    ) -> Result<String, SearchError> {
        let prompt = self.prompts.render(
            TemplateName::FinalAnswer,
            &[
                ("original question", question.text.as_str()),
                ("reasoning state", state.render().as_str()),
            ],
        )?;
        let out = self.backend.generate(
            &GenerationRequest::new(prompt, self.config.temperature)
                .with_max_tokens(self.config.max_tokens),
        )?;
        Ok(out[0].trim().to_owned())
    }

    /// Retrieve-then-reason for one sub-question: top-k documents, then an
    /// intermediate answer grounded in them.
    fn reason_step(
        &self,
        question: &Question,
        index: &Bm25Index,
        sub_question: &str,
    ) -> Result<(String, Vec<String>), SearchError> {
        let hits = index.search(sub_question, self.config.top_k_docs);
        let retrieved_ids: Vec<String> = hits.into_iter().map(|(id, _)| id).collect();
        let rendered = self.render_docs_by_id(question, &retrieved_ids);
        let prompt = self.prompts.render(
            TemplateName::IntermediateAnswer,
            &[
                ("sub-question", sub_question),
                ("retrieved documents", rendered.as_str()),
            ],
        )?;
        let out = self.backend.generate(
            &GenerationRequest::new(prompt, self.config.temperature)
                .with_max_tokens(self.config.max_tokens),
        )?;
        Ok((out[0].trim().to_owned(), retrieved_ids))
    }

    /// Documents observed by a node: the ones retrieved for its own action.
    /// The root observed nothing.
    fn observation_for(&self, tree: &SearchTree, id: NodeId, question: &Question) -> String {
        let ids = tree
            .node(id)
            .action
            .as_ref()
            .map(|a| a.retrieved_ids.clone())
            .unwrap_or_default();
        self.render_docs_by_id(question, &ids)
    }

    fn render_docs_by_id(&self, question: &Question, ids: &[String]) -> String {
        let docs: Vec<&crate::domain::Document> =
            ids.iter().filter_map(|id| question.document(id)).collect();
        render_documents(&docs)
    }
}

fn abort(mut tree: SearchTree, err: SearchError) -> SearchError {
    let message = err.to_string();
    tree.error = Some(message.clone());
    SearchError::Aborted {
        message,
        partial: Box::new(tree),
    }
}
