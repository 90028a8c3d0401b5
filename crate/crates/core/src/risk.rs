//! Node values from question-reconstruction risk.
//!
//! The risk of a reasoning state is the mean negative log-likelihood of
//! the original question tokens conditioned on the state (embedded in the
//! reconstruction prompt). A decreasing sigmoid maps risk to a node value
//! in (0, 1): low risk means the state explains the question well and gets
//! a value near 1.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{BackendError, GenerationRequest, PolicyBackend, ScoreRequest};
use crate::domain::{Question, ReasoningState};
use crate::prompts::{parse_verifier_score, PromptSet, TemplateError, TemplateName};

#[derive(Debug, Error)]
pub enum RiskError {
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Template(#[from] TemplateError),
}

/// Sigmoid shape parameters for the risk-to-value mapping.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RiskParams {
    /// Scaling factor; must be positive.
    pub alpha: f64,
    /// Translation factor: the risk at which the value crosses 0.5.
    pub beta: f64,
    /// Use the increasing sigmoid form `1 - 1/(1 + e^{alpha (risk - beta)})`
    /// instead of the default decreasing form. Off unless you specifically
    /// want values that grow with risk.
    #[serde(default)]
    pub increasing_sigmoid: bool,
}

impl Default for RiskParams {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            beta: 2.0,
            increasing_sigmoid: false,
        }
    }
}

/// How a node's value is produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ValueMode {
    /// Reconstruction-risk value (the default).
    RiskValue,
    /// Constant 0.5; reduces the search to visit-count bookkeeping.
    Uniform,
    /// Ask the model to grade the state 0-10 and rescale.
    LlmVerifier,
}

impl std::str::FromStr for ValueMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "risk_value" => Ok(ValueMode::RiskValue),
            "uniform" => Ok(ValueMode::Uniform),
            "llm_verifier" => Ok(ValueMode::LlmVerifier),
            other => Err(format!("unknown value mode: {other}")),
        }
    }
}

impl std::fmt::Display for ValueMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ValueMode::RiskValue => "risk_value",
            ValueMode::Uniform => "uniform",
            ValueMode::LlmVerifier => "llm_verifier",
        })
    }
}

/// Mean negative log-likelihood of reconstructing the question from the
/// state. The scoring context is the full reconstruction prompt rendered
/// over the state; an empty state falls back to the question text itself.
pub fn compute_risk(
    question: &Question,
    state: &ReasoningState,
    backend: &dyn PolicyBackend,
    prompts: &PromptSet,
) -> Result<f64, RiskError> {
    let rendered_state = state.render();
    let context_state = if rendered_state.is_empty() {
        question.text.as_str()
    } else {
        rendered_state.as_str()
    };
    let context = prompts.render(
        TemplateName::RiskReconstruct,
        &[("reasoning state", context_state)],
    )?;
    let resp = backend.score_sequence(&ScoreRequest {
        context,
        target: question.text.clone(),
    })?;
    Ok(-resp.mean_logprob())
}

/// Maps risk to a value in (0, 1): `1 / (1 + e^{alpha (risk - beta)})`,
/// strictly decreasing in risk with `value(beta) = 0.5`.
pub fn risk_to_value(risk: f64, params: &RiskParams) -> f64 {
    let falling = 1.0 / (1.0 + (params.alpha * (risk - params.beta)).exp());
    if params.increasing_sigmoid {
        1.0 - falling
    } else {
        falling
    }
}

/// Produces node values under a fixed mode and parameter set.
pub struct NodeValuator<'a> {
    pub backend: &'a dyn PolicyBackend,
    pub prompts: &'a PromptSet,
    pub mode: ValueMode,
    pub params: RiskParams,
    /// Sampling temperature for verifier generations.
    pub temperature: f64,
    pub max_tokens: usize,
}

impl NodeValuator<'_> {
    /// Value in [0, 1] for the state reached by a node.
    /// `sub_questions` lists the sub-questions asked along the node's path;
    /// only the verifier mode consults them.
    pub fn value(
        &self,
        question: &Question,
        state: &ReasoningState,
        sub_questions: &[String],
    ) -> Result<f64, RiskError> {
        match self.mode {
            ValueMode::Uniform => Ok(0.5),
            ValueMode::RiskValue => {
                let risk = compute_risk(question, state, self.backend, self.prompts)?;
                Ok(risk_to_value(risk, &self.params))
            }
            ValueMode::LlmVerifier => self.verifier_value(question, state, sub_questions),
        }
    }

    fn verifier_value(
        &self,
        question: &Question,
        state: &ReasoningState,
        sub_questions: &[String],
    ) -> Result<f64, RiskError> {
        let joined = sub_questions.join(" ");
        let rendered = state.render();
        let prompt = self.prompts.render(
            TemplateName::Verifier,
            &[
                ("original question", question.text.as_str()),
                ("sub-questions", joined.as_str()),
                ("reasoning state", rendered.as_str()),
            ],
        )?;
        // One retry on an unparseable grade, then a neutral fallback.
        for _ in 0..2 {
            let req = GenerationRequest::new(prompt.clone(), self.temperature)
                .with_max_tokens(self.max_tokens);
            let out = self.backend.generate(&req)?;
            if let Ok(score) = parse_verifier_score(&out[0]) {
                return Ok(score);
            }
        }
        log::warn!(
            "verifier output unparseable twice for question {}; falling back to 0.5",
            question.id
        );
        Ok(0.5)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::mock::{MockBackend, SyntheticWorld};
    use crate::backend::ScoreResponse;
    use proptest::prelude::*;
    use std::collections::BTreeSet;

    /// Backend returning a fixed logprob vector for any score request.
    struct FixedLogprobs(Vec<f64>);

    impl PolicyBackend for FixedLogprobs {
        fn generate(&self, _req: &GenerationRequest) -> Result<Vec<String>, BackendError> {
            Err(BackendError::Capability("generation".into()))
        }

        fn score_sequence(&self, _req: &ScoreRequest) -> Result<ScoreResponse, BackendError> {
            Ok(ScoreResponse {
                token_logprobs: self.0.clone(),
                token_count: self.0.len(),
            })
        }
    }

    /// Backend with no scoring support at all.
    struct NoScoring;

    impl PolicyBackend for NoScoring {
        fn generate(&self, _req: &GenerationRequest) -> Result<Vec<String>, BackendError> {
            Ok(vec!["ok".into()])
        }

        fn score_sequence(&self, _req: &ScoreRequest) -> Result<ScoreResponse, BackendError> {
            Err(BackendError::Capability("token scoring".into()))
        }
    }

    fn question() -> Question {
        Question {
            id: "q".into(),
            text: "What is the capital of France?".into(),
            gold_answer: "Paris".into(),
            corpus: vec![],
            gold_support_ids: BTreeSet::new(),
        }
    }

    fn state(results: &[&str]) -> ReasoningState {
        let mut s = ReasoningState::new();
        for r in results {
            s = s.append(r).unwrap();
        }
        s
    }

    #[test]
    fn risk_examples_match_hand_arithmetic() {
        let prompts = PromptSet::builtin();
        let q = question();
        let s = state(&["Paris is the capital."]);
        let cases: [(Vec<f64>, f64); 3] = [
            (vec![0.0, 0.0, 0.0], 0.0),
            (vec![-1.0, -2.0, -3.0], 2.0),
            (vec![-0.1; 5], 0.1),
        ];
        for (logprobs, expected) in cases {
            let backend = FixedLogprobs(logprobs);
            let risk = compute_risk(&q, &s, &backend, &prompts).unwrap();
            assert!((risk - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn risk_to_value_examples() {
        let params = RiskParams::default();
        assert!((risk_to_value(2.0, &params) - 0.5).abs() < 1e-12);
        assert!((risk_to_value(4.0, &params) - 1.0 / (1.0 + 2f64.exp())).abs() < 1e-12);
        assert!((risk_to_value(0.0, &params) - 1.0 / (1.0 + (-2f64).exp())).abs() < 1e-12);
    }

    #[test]
    fn increasing_sigmoid_flag_flips_the_mapping() {
        let falling = RiskParams::default();
        let rising = RiskParams {
            increasing_sigmoid: true,
            ..RiskParams::default()
        };
        for risk in [-1.0, 0.0, 2.0, 5.0] {
            let v = risk_to_value(risk, &falling);
            assert!((risk_to_value(risk, &rising) - (1.0 - v)).abs() < 1e-12);
        }
    }

    #[test]
    fn capability_error_propagates() {
        let prompts = PromptSet::builtin();
        let err = compute_risk(&question(), &state(&["r"]), &NoScoring, &prompts).unwrap_err();
        assert!(matches!(
            err,
            RiskError::Backend(BackendError::Capability(_))
        ));
    }

    #[test]
    fn uniform_mode_is_constant() {
        let backend = NoScoring;
        let valuator = NodeValuator {
            backend: &backend,
            prompts: &PromptSet::builtin(),
            mode: ValueMode::Uniform,
            params: RiskParams::default(),
            temperature: 0.7,
            max_tokens: 64,
        };
        let v = valuator
            .value(&question(), &state(&["anything"]), &[])
            .unwrap();
        assert_eq!(v, 0.5);
    }

    #[test]
    fn verifier_grade_of_ten_maps_to_one() {
        struct Ten;
        impl PolicyBackend for Ten {
            fn generate(&self, _req: &GenerationRequest) -> Result<Vec<String>, BackendError> {
                Ok(vec!["10".into()])
            }
            fn score_sequence(&self, _req: &ScoreRequest) -> Result<ScoreResponse, BackendError> {
                Err(BackendError::Capability("scoring".into()))
            }
        }
        let backend = Ten;
        let valuator = NodeValuator {
            backend: &backend,
            prompts: &PromptSet::builtin(),
            mode: ValueMode::LlmVerifier,
            params: RiskParams::default(),
            temperature: 0.7,
            max_tokens: 64,
        };
        let v = valuator
            .value(&question(), &state(&["s"]), &["d1?".into()])
            .unwrap();
        assert_eq!(v, 1.0);
    }

    #[test]
    fn unparseable_verifier_falls_back_to_neutral() {
        struct Chatty;
        impl PolicyBackend for Chatty {
            fn generate(&self, _req: &GenerationRequest) -> Result<Vec<String>, BackendError> {
                Ok(vec!["a very consistent state".into()])
            }
            fn score_sequence(&self, _req: &ScoreRequest) -> Result<ScoreResponse, BackendError> {
                Err(BackendError::Capability("scoring".into()))
            }
        }
        let backend = Chatty;
        let valuator = NodeValuator {
            backend: &backend,
            prompts: &PromptSet::builtin(),
            mode: ValueMode::LlmVerifier,
            params: RiskParams::default(),
            temperature: 0.7,
            max_tokens: 64,
        };
        let v = valuator.value(&question(), &state(&["s"]), &[]).unwrap();
        assert_eq!(v, 0.5);
    }

    #[test]
    fn mock_high_affinity_state_hits_expected_value() {
        let world = SyntheticWorld::generate(2, 1, 0.0, 31);
        let chain = world.chains[0].clone();
        let q = world.questions().remove(0);
        let backend = MockBackend::new(world);
        let prompts = PromptSet::builtin();
        let s = state(&[
            &format!(
                "The {} of {} is {}.",
                chain.relations[0], chain.entities[0], chain.entities[1]
            ),
            &format!(
                "The {} of {} is {}.",
                chain.relations[1], chain.entities[1], chain.entities[2]
            ),
        ]);
        let risk = compute_risk(&q, &s, &backend, &prompts).unwrap();
        assert!((risk - 0.1).abs() < 1e-12);
        let v = risk_to_value(risk, &RiskParams::default());
        assert!((v - 1.0 / (1.0 + (-1.9f64).exp())).abs() < 1e-12);
    }

    #[test]
    fn superset_of_gold_entities_never_scores_lower() {
        let world = SyntheticWorld::generate(3, 1, 0.0, 37);
        let chain = world.chains[0].clone();
        let q = world.questions().remove(0);
        let backend = MockBackend::new(world);
        let prompts = PromptSet::builtin();
        let valuator = NodeValuator {
            backend: &backend,
            prompts: &prompts,
            mode: ValueMode::RiskValue,
            params: RiskParams::default(),
            temperature: 0.7,
            max_tokens: 64,
        };
        let mut prev = f64::NEG_INFINITY;
        let mut s = ReasoningState::new();
        for (i, entity) in chain.entities[1..].iter().enumerate() {
            s = s
                .append(&format!(
                    "The {} of {} is {}.",
                    chain.relations[i], chain.entities[i], entity
                ))
                .unwrap();
            let v = valuator.value(&q, &s, &[]).unwrap();
            assert!(v >= prev);
            prev = v;
        }
    }

    proptest! {
        // Ranges keep |alpha (risk - beta)| <= ~32 so the sigmoid stays
        // strictly inside (0, 1) at f64 precision.
        #[test]
        fn sigmoid_strictly_decreasing_and_bounded(
            risk1 in -8.0f64..7.0,
            delta in 1e-3f64..1.0,
            alpha in 1e-2f64..2.0,
            beta in -8.0f64..8.0,
        ) {
            let params = RiskParams { alpha, beta, increasing_sigmoid: false };
            let risk2 = risk1 + delta;
            let v1 = risk_to_value(risk1, &params);
            let v2 = risk_to_value(risk2, &params);
            prop_assert!(v1 > v2);
            prop_assert!(v1 > 0.0 && v1 < 1.0);
            prop_assert!(v2 > 0.0 && v2 < 1.0);
        }
    }
}
