//! Deterministic synthetic world backend.
//!
//! The world is a set of (subject, relation, object) fact triples plus
//! generated k-hop question chains. Every chain comes with parallel
//! "shadow" chains over the same relations; a corrupted reasoning step
//! swerves onto a shadow chain and stays plausible while no longer
//! leading to the gold answer. All behavior is a pure function of
//! (prompt, world seed, sample index), so identical runs reproduce
//! byte-identical outputs regardless of call order.
//!
//! Scoring follows a fixed affinity rule: the mean token logprob of a
//! question given a context is `high·f + low·(1−f)` where `f` is the
//! fraction of the chain's gold entities present in the context. This
//! makes states that stay on the gold chain strictly easier to
//! reconstruct the question from, which is what the search exploits.

use std::collections::HashSet;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{Document, Question};
use crate::prompts::NO_EVIDENCE_SENTINEL;

use super::{BackendError, GenerationRequest, PolicyBackend, ScoreRequest, ScoreResponse};

/// Shadow chains generated alongside each gold chain.
pub const N_SHADOWS: usize = 4;
/// Unrelated noise facts added to each question's corpus.
const N_NOISE_FACTS: usize = 6;
const N_NOISE_RELATIONS: usize = 3;

/// Default per-token logprob when the context carries every gold entity.
pub const HIGH_AFFINITY_LOGPROB: f64 = -0.1;
/// Default per-token logprob when the context carries none of them.
pub const LOW_AFFINITY_LOGPROB: f64 = -3.0;

#[derive(Debug, Error)]
pub enum WorldFileError {
    #[error("failed to read world file: {0}")]
    Io(#[from] std::io::Error),
    #[error("failed to parse world file: {0}")]
    Parse(#[from] serde_json::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fact {
    pub subject: String,
    pub relation: String,
    pub object: String,
}

/// One generated k-hop question with its gold decomposition and shadows.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HopChain {
    pub id: String,
    pub question: String,
    pub answer: String,
    /// Relation asked at each hop, in order.
    pub relations: Vec<String>,
    /// Gold entities: start plus one object per hop.
    pub entities: Vec<String>,
    /// Shadow entity rows, same layout as `entities`.
    pub shadows: Vec<Vec<String>>,
    pub gold_sub_questions: Vec<String>,
    /// Indices into the world fact table forming this question's corpus.
    pub corpus_fact_idx: Vec<usize>,
    pub gold_fact_idx: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticWorld {
    pub seed: u64,
    pub error_rate: f64,
    pub hops: usize,
    pub facts: Vec<Fact>,
    pub chains: Vec<HopChain>,
}

/// Draws globally unique pseudoword names. Entities are CV-syllable words
/// (no adjacent consonants), relations are CCV-syllable words; neither
/// shape can occur as a substring of the other, which keeps substring
/// matching on answers and contexts unambiguous.
struct NamePool {
    rng: ChaCha8Rng,
    used: HashSet<String>,
}

const ENTITY_SYLLABLES: [&str; 20] = [
    "ba", "ce", "di", "fo", "gu", "ha", "ki", "lo", "mu", "ne", "pa", "qi", "ru", "so", "tu", "vi",
    "wo", "xa", "ye", "zo",
];
const RELATION_SYLLABLES: [&str; 10] = [
    "bla", "cre", "dri", "flo", "gru", "ple", "sta", "tre", "ski", "pro",
];

impl NamePool {
    fn new(seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ 0xA11C_E5EED),
            used: HashSet::new(),
        }
    }

    fn draw(&mut self, syllables: &[&str], count: usize) -> String {
        loop {
            let name: String = (0..count)
                .map(|_| syllables[self.rng.gen_range(0..syllables.len())])
                .collect();
            if self.used.insert(name.clone()) {
                return name;
            }
        }
    }

    fn entity(&mut self) -> String {
        self.draw(&ENTITY_SYLLABLES, 4)
    }

    fn relation(&mut self) -> String {
        self.draw(&RELATION_SYLLABLES, 3)
    }
}

fn doc_id(fact_idx: usize) -> String {
    format!("d{fact_idx:05}")
}

impl SyntheticWorld {
    /// Generates `n_questions` answerable `hops`-hop chains plus shadow
    /// chains and noise facts. Deterministic in `seed`.
    pub fn generate(hops: usize, n_questions: usize, error_rate: f64, seed: u64) -> Self {
        assert!(hops >= 1, "hops must be >= 1");
        let mut pool = NamePool::new(seed);
        // One relation per hop, shared across every chain in the world.
        let relations: Vec<String> = (0..hops).map(|_| pool.relation()).collect();
        let noise_relations: Vec<String> =
            (0..N_NOISE_RELATIONS).map(|_| pool.relation()).collect();
        let mut facts = Vec::new();
        let mut chains = Vec::new();
        for qi in 0..n_questions {
            let entities: Vec<String> = (0..=hops).map(|_| pool.entity()).collect();
            let shadows: Vec<Vec<String>> = (0..N_SHADOWS)
                .map(|_| (0..=hops).map(|_| pool.entity()).collect())
                .collect();
            let mut corpus_fact_idx = Vec::new();
            let mut gold_fact_idx = Vec::new();
            let push_chain_facts =
                |row: &[String], facts: &mut Vec<Fact>, idxs: &mut Vec<usize>| {
                    for i in 0..hops {
                        idxs.push(facts.len());
                        facts.push(Fact {
                            subject: row[i].clone(),
                            relation: relations[i].clone(),
                            object: row[i + 1].clone(),
                        });
                    }
                };
            push_chain_facts(&entities, &mut facts, &mut corpus_fact_idx);
            gold_fact_idx.extend_from_slice(&corpus_fact_idx);
            for shadow in &shadows {
                push_chain_facts(shadow, &mut facts, &mut corpus_fact_idx);
            }
            for n in 0..N_NOISE_FACTS {
                corpus_fact_idx.push(facts.len());
                facts.push(Fact {
                    subject: pool.entity(),
                    relation: noise_relations[n % noise_relations.len()].clone(),
                    object: pool.entity(),
                });
            }

            let mut nested = entities[0].clone();
            for rel in &relations {
                nested = format!("the {rel} of {nested}");
            }
            let question = format!("What is {nested}?");
            let gold_sub_questions = (0..hops)
                .map(|i| format!("What is the {} of {}?", relations[i], entities[i]))
                .collect();
            chains.push(HopChain {
                id: format!("q{qi:03}"),
                question,
                answer: entities[hops].clone(),
                relations: relations.clone(),
                entities,
                shadows,
                gold_sub_questions,
                corpus_fact_idx,
                gold_fact_idx,
            });
        }
        Self {
            seed,
            error_rate,
            hops,
            facts,
            chains,
        }
    }

    pub fn doc(&self, fact_idx: usize) -> Document {
        let f = &self.facts[fact_idx];
        Document {
            id: doc_id(fact_idx),
            title: f.subject.clone(),
            text: format!("The {} of {} is {}.", f.relation, f.subject, f.object),
        }
    }

    /// Materializes one [`Question`] per chain, each with its private
    /// corpus and gold supporting-document ids.
    pub fn questions(&self) -> Vec<Question> {
        self.chains
            .iter()
            .map(|c| Question {
                id: c.id.clone(),
                text: c.question.clone(),
                gold_answer: c.answer.clone(),
                corpus: c.corpus_fact_idx.iter().map(|&i| self.doc(i)).collect(),
                gold_support_ids: c.gold_fact_idx.iter().map(|&i| doc_id(i)).collect(),
            })
            .collect()
    }

    pub fn chain_for_question(&self, text: &str) -> Option<&HopChain> {
        let text = text.trim();
        self.chains.iter().find(|c| c.question == text)
    }

    /// Verifies that every chain (gold and shadow) resolves step by step
    /// through the fact table to its final entity.
    pub fn self_check(&self) -> Result<(), String> {
        for chain in &self.chains {
            if chain.gold_sub_questions.len() != self.hops {
                return Err(format!("{}: wrong decomposition length", chain.id));
            }
            let rows: Vec<&[String]> = std::iter::once(chain.entities.as_slice())
                .chain(chain.shadows.iter().map(|s| s.as_slice()))
                .collect();
            for row in rows {
                let mut cur = &row[0];
                for (i, rel) in chain.relations.iter().enumerate() {
                    let next = chain
                        .corpus_fact_idx
                        .iter()
                        .map(|&fi| &self.facts[fi])
                        .find(|f| &f.subject == cur && &f.relation == rel)
                        .map(|f| &f.object)
                        .ok_or_else(|| format!("{}: hop {i} from {cur} has no fact", chain.id))?;
                    cur = next;
                }
                if cur != row.last().expect("non-empty row") {
                    return Err(format!(
                        "{}: chain does not resolve to its endpoint",
                        chain.id
                    ));
                }
            }
            if chain.entities[self.hops] != chain.answer {
                return Err(format!("{}: answer mismatch", chain.id));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("world serializes")
    }

    pub fn save(&self, path: &Path) -> Result<(), WorldFileError> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, WorldFileError> {
        let raw = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&raw)?)
    }
}

/// Deterministic policy backend over a [`SyntheticWorld`].
pub struct MockBackend {
    world: SyntheticWorld,
    high_logprob: f64,
    low_logprob: f64,
}

// First lines of the builtin templates, used to dispatch prompts.
const DECOMPOSE_HEAD: &str = "Your task is to decompose the original question";
const ANSWER_HEAD: &str =
    "Your task is to answer the following question using provided supporting facts.";
const FINAL_HEAD: &str =
    "Your task is to answer the original question based on the intermediate answers.";
const VERIFIER_HEAD: &str = "Given a question, your task is to determine the consistency score";

impl MockBackend {
    pub fn new(world: SyntheticWorld) -> Self {
        Self {
            world,
            high_logprob: HIGH_AFFINITY_LOGPROB,
            low_logprob: LOW_AFFINITY_LOGPROB,
        }
    }

    pub fn world(&self) -> &SyntheticWorld {
        &self.world
    }

    fn sample_rng(&self, prompt: &str, sample_idx: usize) -> ChaCha8Rng {
        let mut h = fnv1a(prompt.as_bytes());
        h ^= self.world.seed.rotate_left(17);
        h = h.wrapping_add((sample_idx as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        ChaCha8Rng::seed_from_u64(h)
    }

    fn sample(&self, prompt: &str, sample_idx: usize) -> Result<String, BackendError> {
        if prompt.starts_with(DECOMPOSE_HEAD) {
            self.sample_decomposition(prompt, sample_idx)
        } else if prompt.starts_with(ANSWER_HEAD) {
            self.answer_sub_question(prompt)
        } else if prompt.starts_with(FINAL_HEAD) {
            self.final_answer(prompt)
        } else if prompt.starts_with(VERIFIER_HEAD) {
            self.verifier_score(prompt)
        } else {
            Err(BackendError::Protocol(
                "mock backend received an unrecognized prompt".into(),
            ))
        }
    }

    fn sample_decomposition(
        &self,
        prompt: &str,
        sample_idx: usize,
    ) -> Result<String, BackendError> {
        let q = field(prompt, "Original question:")
            .ok_or_else(|| BackendError::Protocol("no original question in prompt".into()))?;
        let Some(chain) = self.world.chain_for_question(q) else {
            // Unknown question: emit text without the expected marker so the
            // caller's parse step rejects the sample.
            return Ok("This question is outside the known world.".into());
        };
        let state_text = field(prompt, "Intermediate answers:").unwrap_or("");
        let steps = parse_fact_sentences(state_text);
        let position = steps.len();
        let hop = position.min(chain.relations.len() - 1);
        let rel = &chain.relations[hop];
        let frontier = steps
            .last()
            .map(|(_, _, o)| o.clone())
            .unwrap_or_else(|| chain.entities[0].clone());

        let mut rng = self.sample_rng(prompt, sample_idx);
        let corrupted = rng.gen::<f64>() < self.world.error_rate;
        let subject = if corrupted {
            let pick = rng.gen_range(0..chain.shadows.len());
            chain.shadows[pick][hop].clone()
        } else {
            frontier
        };
        Ok(format!(
            "Thought: The next fact to find is the {rel} of {subject}.\nSub-question: What is the {rel} of {subject}?"
        ))
    }

    fn answer_sub_question(&self, prompt: &str) -> Result<String, BackendError> {
        let sub_q = field(prompt, "Question:").unwrap_or("");
        let facts_text = field(prompt, "Supporting facts:").unwrap_or("");
        let toks: Vec<&str> = sub_q.split_whitespace().collect();
        if toks.len() == 6
            && toks[0] == "What"
            && toks[1] == "is"
            && toks[2] == "the"
            && toks[4] == "of"
        {
            let rel = toks[3];
            let subject = toks[5].trim_end_matches('?');
            let facts = parse_fact_sentences(facts_text);
            if let Some((r, s, o)) = facts.iter().find(|(r, s, _)| r == rel && s == subject) {
                return Ok(format!("The {r} of {s} is {o}."));
            }
        }
        Ok(NO_EVIDENCE_SENTINEL.into())
    }

    fn final_answer(&self, prompt: &str) -> Result<String, BackendError> {
        let q = field(prompt, "Original question:")
            .ok_or_else(|| BackendError::Protocol("no original question in prompt".into()))?;
        let Some(chain) = self.world.chain_for_question(q) else {
            return Ok("unknown".into());
        };
        let text = field(prompt, "Intermediate answers:").unwrap_or("");
        Ok(resolve_chain(chain, text))
    }

    fn verifier_score(&self, prompt: &str) -> Result<String, BackendError> {
        let q = field(prompt, "Original question:")
            .ok_or_else(|| BackendError::Protocol("no original question in prompt".into()))?;
        let f = self
            .world
            .chain_for_question(q)
            .map(|chain| gold_fraction(chain, prompt))
            .unwrap_or(0.0);
        Ok(format!("{}", (f * 10.0).round() as i64))
    }
}

impl PolicyBackend for MockBackend {
    fn generate(&self, req: &GenerationRequest) -> Result<Vec<String>, BackendError> {
        req.validate()?;
        (0..req.n_samples)
            .map(|i| self.sample(&req.prompt, i))
            .collect()
    }

    fn score_sequence(&self, req: &ScoreRequest) -> Result<ScoreResponse, BackendError> {
        if req.target.is_empty() {
            return Err(BackendError::InvalidArgument("empty score target".into()));
        }
        let f = self
            .world
            .chain_for_question(&req.target)
            .map(|chain| gold_fraction(chain, &req.context))
            .unwrap_or(0.0);
        let logprob = self.high_logprob * f + self.low_logprob * (1.0 - f);
        let token_count = req.target.split_whitespace().count().max(1);
        Ok(ScoreResponse {
            token_logprobs: vec![logprob; token_count],
            token_count,
        })
    }
}

/// Fraction of the chain's gold objects present in `text`.
fn gold_fraction(chain: &HopChain, text: &str) -> f64 {
    let gold = &chain.entities[1..];
    let hits = gold.iter().filter(|e| text.contains(e.as_str())).count();
    hits as f64 / gold.len() as f64
}

/// Follows the chain's relations through whatever fact sentences `text`
/// provides, returning the furthest entity reached.
fn resolve_chain(chain: &HopChain, text: &str) -> String {
    let facts = parse_fact_sentences(text);
    let mut cur = chain.entities[0].clone();
    for rel in &chain.relations {
        match facts.iter().find(|(r, s, _)| r == rel && s == &cur) {
            Some((_, _, o)) => cur = o.clone(),
            None => break,
        }
    }
    cur
}

/// Extracts the value of a `Label:` field anchored at a line start,
/// running to the next blank line.
fn field<'a>(prompt: &'a str, label: &str) -> Option<&'a str> {
    let start = if let Some(rest) = prompt.strip_prefix(label) {
        prompt.len() - rest.len()
    } else {
        let pat = format!("\n{label}");
        prompt.find(&pat)? + pat.len()
    };
    let rest = &prompt[start..];
    let end = rest.find("\n\n").unwrap_or(rest.len());
    Some(rest[..end].trim())
}

/// Scans whitespace tokens for `The <rel> of <subj> is <obj>.` windows and
/// returns the (relation, subject, object) triples found, in order.
fn parse_fact_sentences(text: &str) -> Vec<(String, String, String)> {
    let toks: Vec<&str> = text.split_whitespace().collect();
    let mut out = Vec::new();
    if toks.len() < 6 {
        return out;
    }
    for i in 0..=toks.len() - 6 {
        if toks[i] == "The" && toks[i + 2] == "of" && toks[i + 4] == "is" {
            let obj: String = toks[i + 5]
                .trim_end_matches(|c: char| !c.is_alphanumeric())
                .to_owned();
            out.push((toks[i + 1].to_owned(), toks[i + 3].to_owned(), obj));
        }
    }
    out
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prompts::{parse_decomposition, PromptSet, TemplateName};

    fn decompose_prompt(backend: &MockBackend, chain_idx: usize, state: &str) -> String {
        let chain = &backend.world().chains[chain_idx];
        PromptSet::builtin()
            .render(
                TemplateName::Decompose,
                &[
                    ("original question", chain.question.as_str()),
                    ("reasoning state", state),
                    ("retrieved documents", ""),
                ],
            )
            .unwrap()
    }

    #[test]
    fn generated_worlds_self_check() {
        for seed in 0..5 {
            let world = SyntheticWorld::generate(3, 4, 0.3, seed);
            world.self_check().unwrap();
        }
    }

    #[test]
    fn world_json_round_trips() {
        let world = SyntheticWorld::generate(2, 2, 0.1, 7);
        let back: SyntheticWorld = serde_json::from_str(&world.to_json()).unwrap();
        assert_eq!(back, world);
    }

    #[test]
    fn questions_carry_gold_support_ids() {
        let world = SyntheticWorld::generate(2, 3, 0.0, 1);
        let questions = world.questions();
        assert_eq!(questions.len(), 3);
        for (q, chain) in questions.iter().zip(&world.chains) {
            assert_eq!(q.gold_support_ids.len(), world.hops);
            assert!(q.gold_support_ids.iter().all(|id| q.document(id).is_some()));
            assert_eq!(q.gold_answer, chain.answer);
        }
    }

    #[test]
    fn same_prompt_and_seed_give_identical_outputs() {
        let backend = MockBackend::new(SyntheticWorld::generate(2, 1, 0.5, 11));
        let prompt = decompose_prompt(&backend, 0, "");
        let req = GenerationRequest::new(prompt, 0.7).with_samples(4);
        assert_eq!(
            backend.generate(&req).unwrap(),
            backend.generate(&req).unwrap()
        );
    }

    #[test]
    fn n_samples_controls_output_count() {
        let backend = MockBackend::new(SyntheticWorld::generate(2, 1, 0.0, 3));
        let prompt = decompose_prompt(&backend, 0, "");
        let out = backend
            .generate(&GenerationRequest::new(prompt, 0.7).with_samples(3))
            .unwrap();
        assert_eq!(out.len(), 3);
    }

    #[test]
    fn error_free_decomposition_is_the_gold_first_hop() {
        let backend = MockBackend::new(SyntheticWorld::generate(2, 1, 0.0, 5));
        let prompt = decompose_prompt(&backend, 0, "");
        let out = backend
            .generate(&GenerationRequest::new(prompt, 0.7))
            .unwrap();
        let parsed = parse_decomposition(&out[0]).unwrap();
        assert_eq!(
            parsed.sub_question,
            backend.world().chains[0].gold_sub_questions[0]
        );
    }

    #[test]
    fn decomposition_advances_with_the_state() {
        let world = SyntheticWorld::generate(3, 1, 0.0, 5);
        let chain = world.chains[0].clone();
        let backend = MockBackend::new(world);
        let state = format!(
            "The {} of {} is {}.",
            chain.relations[0], chain.entities[0], chain.entities[1]
        );
        let prompt = decompose_prompt(&backend, 0, &state);
        let out = backend
            .generate(&GenerationRequest::new(prompt, 0.7))
            .unwrap();
        let parsed = parse_decomposition(&out[0]).unwrap();
        assert_eq!(parsed.sub_question, chain.gold_sub_questions[1]);
    }

    #[test]
    fn answer_reads_facts_only_from_provided_documents() {
        let world = SyntheticWorld::generate(2, 1, 0.0, 9);
        let chain = world.chains[0].clone();
        let doc = world.doc(chain.gold_fact_idx[0]);
        let backend = MockBackend::new(world);
        let prompts = PromptSet::builtin();
        let with_doc = prompts
            .render(
                TemplateName::IntermediateAnswer,
                &[
                    ("sub-question", chain.gold_sub_questions[0].as_str()),
                    (
                        "retrieved documents",
                        &format!("1. {}: {}", doc.title, doc.text),
                    ),
                ],
            )
            .unwrap();
        let got = backend
            .generate(&GenerationRequest::new(with_doc, 0.7))
            .unwrap();
        assert_eq!(
            got[0],
            format!(
                "The {} of {} is {}.",
                chain.relations[0], chain.entities[0], chain.entities[1]
            )
        );

        let without_doc = prompts
            .render(
                TemplateName::IntermediateAnswer,
                &[
                    ("sub-question", chain.gold_sub_questions[0].as_str()),
                    ("retrieved documents", ""),
                ],
            )
            .unwrap();
        let got = backend
            .generate(&GenerationRequest::new(without_doc, 0.7))
            .unwrap();
        assert_eq!(got[0], NO_EVIDENCE_SENTINEL);
    }

    #[test]
    fn final_answer_resolves_full_state() {
        let world = SyntheticWorld::generate(2, 1, 0.0, 13);
        let chain = world.chains[0].clone();
        let backend = MockBackend::new(world);
        let state = format!(
            "The {} of {} is {}. The {} of {} is {}.",
            chain.relations[0],
            chain.entities[0],
            chain.entities[1],
            chain.relations[1],
            chain.entities[1],
            chain.entities[2]
        );
        let prompt = PromptSet::builtin()
            .render(
                TemplateName::FinalAnswer,
                &[
                    ("original question", chain.question.as_str()),
                    ("reasoning state", state.as_str()),
                ],
            )
            .unwrap();
        let out = backend
            .generate(&GenerationRequest::new(prompt, 0.7))
            .unwrap();
        assert_eq!(out[0], chain.answer);
    }

    #[test]
    fn scoring_hits_the_affinity_constants() {
        let world = SyntheticWorld::generate(2, 1, 0.0, 17);
        let chain = world.chains[0].clone();
        let backend = MockBackend::new(world);

        let all = format!("{} {}", chain.entities[1], chain.entities[2]);
        let resp = backend
            .score_sequence(&ScoreRequest {
                context: all,
                target: chain.question.clone(),
            })
            .unwrap();
        assert!(resp.token_logprobs.iter().all(|&lp| lp == -0.1));
        assert_eq!(resp.token_count, chain.question.split_whitespace().count());

        let resp = backend
            .score_sequence(&ScoreRequest {
                context: "nothing related".into(),
                target: chain.question.clone(),
            })
            .unwrap();
        assert!(resp.token_logprobs.iter().all(|&lp| lp == -3.0));
    }

    #[test]
    fn scoring_is_monotone_in_gold_entity_coverage() {
        let world = SyntheticWorld::generate(3, 1, 0.0, 19);
        let chain = world.chains[0].clone();
        let backend = MockBackend::new(world);
        let mut context = String::new();
        let mut last = f64::NEG_INFINITY;
        for entity in &chain.entities[1..] {
            context.push_str(entity);
            context.push(' ');
            let resp = backend
                .score_sequence(&ScoreRequest {
                    context: context.clone(),
                    target: chain.question.clone(),
                })
                .unwrap();
            let mean = resp.mean_logprob();
            assert!(mean >= last);
            last = mean;
        }
        assert!((last - HIGH_AFFINITY_LOGPROB).abs() < 1e-12);
    }

    #[test]
    fn empty_score_target_rejected() {
        let backend = MockBackend::new(SyntheticWorld::generate(1, 1, 0.0, 23));
        let err = backend
            .score_sequence(&ScoreRequest {
                context: "c".into(),
                target: String::new(),
            })
            .unwrap_err();
        assert!(matches!(err, BackendError::InvalidArgument(_)));
    }

    #[test]
    fn corruption_rate_respected_at_extremes() {
        let clean = MockBackend::new(SyntheticWorld::generate(2, 1, 0.0, 29));
        let prompt = decompose_prompt(&clean, 0, "");
        let outs = clean
            .generate(&GenerationRequest::new(prompt, 0.7).with_samples(8))
            .unwrap();
        assert!(outs.windows(2).all(|w| w[0] == w[1]));

        let noisy = MockBackend::new(SyntheticWorld::generate(2, 1, 1.0, 29));
        let prompt = decompose_prompt(&noisy, 0, "");
        let outs = noisy
            .generate(&GenerationRequest::new(prompt, 0.7).with_samples(8))
            .unwrap();
        let gold = &noisy.world().chains[0].gold_sub_questions[0];
        for out in &outs {
            let parsed = parse_decomposition(out).unwrap();
            assert_ne!(&parsed.sub_question, gold);
        }
    }
}
