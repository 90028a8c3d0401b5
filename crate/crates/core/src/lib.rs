//! Risk-guided Monte Carlo tree search for retrieval-augmented multi-hop
//! question answering.
//!
//! The pipeline interleaves question decomposition with
//! retrieve-then-reason steps. Each step becomes a node in a search tree;
//! UCT balances exploring new decompositions against exploiting promising
//! reasoning states, and node values come from how well a state lets the
//! model reconstruct the original question (low reconstruction risk, high
//! value). The crate ships:
//!
//! - [`domain`]: questions, documents, reasoning states, search trees.
//! - [`retrieval`]: per-question BM25 indexing.
//! - [`prompts`]: the prompt templates plus output parsing.
//! - [`backend`]: the model boundary — an HTTP adapter and a
//!   deterministic synthetic-world mock.
//! - [`risk`]: reconstruction risk and the risk-to-value sigmoid.
//! - [`mcts`]: the search loop, greedy path extraction, Pass@N.
//! - [`eval`]: datasets, metrics, the vanilla-RAG baseline, and the
//!   experiment runner.

pub mod backend;
pub mod domain;
pub mod eval;
pub mod mcts;
pub mod prompts;
pub mod retrieval;
pub mod risk;

pub use backend::{BackendError, GenerationRequest, PolicyBackend, ScoreRequest, ScoreResponse};
pub use domain::{
    Action, Document, Question, ReasoningState, SearchNode, SearchTree, Trajectory, TreeDump,
};
pub use mcts::{SearchConfig, Searcher};
pub use prompts::PromptSet;
pub use retrieval::{Bm25Index, Bm25Params, Retriever};
pub use risk::{RiskParams, ValueMode};
