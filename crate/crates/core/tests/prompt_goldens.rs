//! Golden-file checks: the shipped templates and their rendered forms must
//! stay byte-identical to the frozen copies under `tests/golden/`.

use arise_core::prompts::{parse_decomposition, PromptSet, TemplateName};

fn golden(name: &str) -> String {
    let path = format!("{}/tests/golden/{name}", env!("CARGO_MANIFEST_DIR"));
    std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("missing golden {path}: {e}"))
}

#[test]
fn templates_byte_match_goldens() {
    let set = PromptSet::builtin();
    for name in TemplateName::ALL {
        let expected = golden(&format!("{name}.golden"));
        assert_eq!(set.template(name), expected, "template {name} drifted");
    }
}

#[test]
fn rendered_decompose_matches_golden() {
    let set = PromptSet::builtin();
    let out = set
        .render(
            TemplateName::Decompose,
            &[
                (
                    "original question",
                    "When was the last time Peter Till's team beat winner of 1894-95 FA Cup in SC?",
                ),
                (
                    "reasoning state",
                    "The winner of the 1894-95 FA Cup is Aston Villa.",
                ),
                (
                    "retrieved documents",
                    "1. Peter Till: Peter Till is an English footballer who plays for Birmingham City.",
                ),
            ],
        )
        .unwrap();
    assert_eq!(out, golden("decompose_rendered.golden"));
}

#[test]
fn rendered_intermediate_answer_matches_golden() {
    let set = PromptSet::builtin();
    let out = set
        .render(
            TemplateName::IntermediateAnswer,
            &[
                ("sub-question", "Who was the winner of FA Cup?"),
                (
                    "retrieved documents",
                    "1. FA Cup: The winner of the 1894-95 FA Cup is Aston Villa.",
                ),
            ],
        )
        .unwrap();
    assert_eq!(out, golden("intermediate_answer_rendered.golden"));
}

#[test]
fn rendered_final_answer_matches_golden() {
    let set = PromptSet::builtin();
    let out = set
        .render(
            TemplateName::FinalAnswer,
            &[
                (
                    "original question",
                    "When was the last time Peter Till's team beat winner of 1894-95 FA Cup in SC?",
                ),
                (
                    "reasoning state",
                    "The winner of the 1894-95 FA Cup is Aston Villa. Peter Till's sports team is \
                     Birmingham City. The last time Birmingham City beat Aston Villa was in March 2005.",
                ),
            ],
        )
        .unwrap();
    assert_eq!(out, golden("final_answer_rendered.golden"));
}

#[test]
fn rendered_risk_reconstruct_matches_golden() {
    let set = PromptSet::builtin();
    let out = set
        .render(
            TemplateName::RiskReconstruct,
            &[(
                "reasoning state",
                "Craigslist was founded by Craig Newmark.",
            )],
        )
        .unwrap();
    assert_eq!(out, golden("risk_reconstruct_rendered.golden"));
}

#[test]
fn rendered_verifier_matches_golden() {
    let set = PromptSet::builtin();
    let out = set
        .render(
            TemplateName::Verifier,
            &[
                (
                    "original question",
                    "When was the founder of craigslist born?",
                ),
                ("sub-questions", "Who founded craigslist?"),
                (
                    "reasoning state",
                    "Craigslist was founded by Craig Newmark.",
                ),
            ],
        )
        .unwrap();
    assert_eq!(out, golden("verifier_rendered.golden"));
}

#[test]
fn format_compliant_output_round_trips_through_parse() {
    let raw = "Thought: Find the cup winner first.\nSub-question: Who was the winner of FA Cup?";
    let parsed = parse_decomposition(raw).unwrap();
    assert_eq!(parsed.sub_question, "Who was the winner of FA Cup?");
    assert_eq!(parsed.thought, "Find the cup winner first.");
}

#[test]
fn template_overrides_replace_only_named_files() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("verifier.txt"),
        "Score {reasoning state} now.",
    )
    .unwrap();
    let set = PromptSet::with_overrides(dir.path()).unwrap();
    assert_eq!(
        set.template(TemplateName::Verifier),
        "Score {reasoning state} now."
    );
    assert_eq!(
        set.template(TemplateName::Decompose),
        PromptSet::builtin().template(TemplateName::Decompose)
    );
}
