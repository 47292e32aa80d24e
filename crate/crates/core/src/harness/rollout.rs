//! Rollout policies and the loop that drives them against the environment.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::objective::{ContextKey, HistoryHasher, ToyPolicy};
use crate::protocol::tokenizer;
use crate::protocol::{parse_trajectory, validate_format, Action, Observation, Tokenizer, Trajectory};
use crate::retrieval::bm25::analyze;
use crate::retrieval::{CueLevel, RetrievalEnv};

use super::HarnessError;

/// Decision vocabulary of the stochastic policy.
pub const DECISION_VOCAB: usize = 8;
/// Decision that renders a malformed block in whichever slot draws it.
pub const DEFECT_TOKEN: u32 = 7;
/// Scores emitted for decisions `0..7` in the score slot.
pub const SCORE_TABLE: [f64; 7] = [1.0, 3.0, 4.0, 6.0, 8.0, 9.0, 10.0];

const STOPWORDS: [&str; 24] = [
    "a", "an", "and", "are", "by", "did", "do", "does", "for", "how", "in", "is", "of", "on",
    "the", "to", "was", "were", "what", "when", "where", "which", "who", "with",
];

/// One token the policy produced, located in the rollout text.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PolicyToken {
    /// Token index in the trajectory text.
    pub position: usize,
    pub context_key: ContextKey,
    pub token_id: u32,
    pub logprob_old: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rollout {
    pub trajectory: Trajectory,
    pub policy_tokens: Vec<PolicyToken>,
}

/// A scripted step. Strings may contain `{question}` and `{gold}`, replaced
/// by the question text and the first gold alias.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ScriptItem {
    Act(Action),
    /// Emitted verbatim with no environment step.
    Raw(String),
}

/// Replays fixed action templates. Rollout `i` uses template `i mod n`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScriptedPolicy {
    scripts: Vec<Vec<ScriptItem>>,
    tokenizer: Tokenizer,
}

fn render_item(item: &ScriptItem) -> String {
    match item {
        ScriptItem::Act(a) => a.render(),
        ScriptItem::Raw(s) => s.clone(),
    }
}

impl ScriptedPolicy {
    /// Templates must pass the format gate when rendered on their own.
    pub fn new(scripts: Vec<Vec<ScriptItem>>) -> Result<Self, HarnessError> {
        for (i, s) in scripts.iter().enumerate() {
            let text: Vec<String> = s.iter().map(render_item).collect();
            let v = validate_format(&parse_trajectory(&text.join("\n")));
            if !v.compliant {
                return Err(HarnessError::Script(format!(
                    "template {i} is not compliant: {:?}",
                    v.violations
                )));
            }
        }
        Self::unchecked(scripts)
    }

    /// Accepts any templates, including ones that break the protocol.
    pub fn unchecked(scripts: Vec<Vec<ScriptItem>>) -> Result<Self, HarnessError> {
        if scripts.is_empty() {
            return Err(HarnessError::Script("no templates".into()));
        }
        let texts: Vec<String> = scripts.iter().flatten().map(render_item).collect();
        let tokenizer = Tokenizer::from_texts(texts.iter().map(String::as_str));
        Ok(Self { scripts, tokenizer })
    }

    pub fn tokenizer(&self) -> &Tokenizer {
        &self.tokenizer
    }

    pub fn script(&self, rollout: usize) -> &[ScriptItem] {
        &self.scripts[rollout % self.scripts.len()]
    }
}

/// Tabular policy over [`DECISION_VOCAB`] choices at each slot of a fixed
/// Think/Search/Evaluate/Answer grammar.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StochasticPolicy {
    pub policy: ToyPolicy,
    pub decode_temperature: f64,
    pub max_pairs: usize,
    pub max_steps: usize,
}

impl StochasticPolicy {
    pub fn uniform() -> Self {
        Self {
            policy: ToyPolicy::uniform(DECISION_VOCAB),
            decode_temperature: 1.0,
            max_pairs: 3,
            max_steps: 64,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum RolloutPolicy {
    Scripted(ScriptedPolicy),
    Stochastic(StochasticPolicy),
}

/// Mixes integers into one seed (splitmix64 chain).
pub fn derive_seed(parts: &[u64]) -> u64 {
    let mut h: u64 = 0x243f_6a88_85a3_08d3;
    for &p in parts {
        h ^= p;
        h = h.wrapping_add(0x9e37_79b9_7f4a_7c15);
        let mut z = h;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        h = z ^ (z >> 31);
    }
    h
}

struct Writer {
    text: String,
}

impl Writer {
    /// Appends a block on its own line and returns its byte offset.
    fn block(&mut self, s: &str) -> usize {
        if !self.text.is_empty() {
            self.text.push('\n');
        }
        let at = self.text.len();
        self.text.push_str(s);
        at
    }

    fn observe(&mut self, obs: &Observation) {
        if let Some(r) = obs.render() {
            self.block(&r);
        }
    }
}

fn fill(s: &str, question: &str, gold: &str) -> String {
    s.replace("{question}", question).replace("{gold}", gold)
}

fn fill_action(a: &Action, question: &str, gold: &str) -> Action {
    match a {
        Action::Think { text } => Action::think(fill(text, question, gold)),
        Action::Search { query } => Action::search(fill(query, question, gold)),
        Action::Evaluate { assessment, score } => {
            Action::evaluate(fill(assessment, question, gold), *score)
        }
        Action::Answer { text } => Action::answer(fill(text, question, gold)),
    }
}

fn run_scripted(
    p: &ScriptedPolicy,
    env: &RetrievalEnv,
    question: &str,
    gold: &str,
    index: usize,
) -> Rollout {
    let mut w = Writer { text: String::new() };
    let mut state = env.reset();
    let mut tokens = Vec::new();
    let mut hasher = HistoryHasher::default();
    hasher.update(question);
    hasher.update("\u{1f}");
    let mut hashed = 0;
    for item in p.script(index) {
        let (block, action) = match item {
            ScriptItem::Act(a) => {
                let a = fill_action(a, question, gold);
                (a.render(), Some(a))
            }
            ScriptItem::Raw(s) => (fill(s, question, gold), None),
        };
        let at = w.block(&block);
        let base = tokenizer::count(&w.text[..at]);
        for (j, piece) in tokenizer::pieces(&block).iter().enumerate() {
            let upto = at + piece.start;
            hasher.update(&w.text[hashed..upto]);
            hashed = upto;
            tokens.push(PolicyToken {
                position: base + j,
                context_key: hasher.key(),
                token_id: p.tokenizer.id(&block[piece.range()]),
                logprob_old: 0.0,
            });
        }
        if let Some(a) = action {
            let (obs, next) = env.step(state, &a);
            state = next;
            w.observe(&obs);
        }
    }
    Rollout {
        trajectory: parse_trajectory(&w.text).with_query(question),
        policy_tokens: tokens,
    }
}

fn content_terms(text: &str, exclude: &[String]) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for t in analyze(text) {
        if !STOPWORDS.contains(&t.as_str()) && !exclude.contains(&t) && !out.contains(&t) {
            out.push(t);
        }
    }
    out
}

struct Decider<'a> {
    p: &'a StochasticPolicy,
    question: &'a str,
    rng: ChaCha8Rng,
    tokens: Vec<PolicyToken>,
}

impl Decider<'_> {
    /// Draws a decision for `slot` given the text so far. The token is
    /// attributed to the first token of the block about to be written.
    fn decide(&mut self, text: &str, slot: &str) -> u32 {
        let ctx = ContextKey::from_history(&format!("{}\u{1f}{text}\u{1f}{slot}", self.question));
        let tok = self.p.policy.sample(ctx, self.p.decode_temperature, &mut self.rng);
        let lp = self
            .p
            .policy
            .log_prob(ctx, tok)
            .expect("sampled token is in vocabulary");
        self.tokens.push(PolicyToken {
            position: tokenizer::count(text),
            context_key: ctx,
            token_id: tok,
            logprob_old: lp,
        });
        tok
    }
}

fn run_stochastic(p: &StochasticPolicy, env: &RetrievalEnv, question: &str, seed: u64) -> Rollout {
    let mut w = Writer { text: String::new() };
    let mut d = Decider {
        p,
        question,
        rng: ChaCha8Rng::seed_from_u64(seed),
        tokens: Vec::new(),
    };
    let mut state = env.reset();
    let q_terms = content_terms(question, &[]);
    let mut candidates: Vec<String> = Vec::new();
    let mut steps = 0usize;

    w.block(&Action::think(format!("I need to answer: {question}")).render());
    steps += 1;
    let mut pairs = 0;
    'pairs: while pairs < p.max_pairs && steps + 4 <= p.max_steps {
        if pairs > 0 {
            w.block(&Action::think("The evidence is incomplete, so I will search again.").render());
            steps += 1;
        }
        let tok = d.decide(&w.text, "query");
        if tok == DEFECT_TOKEN || q_terms.is_empty() {
            w.block("<tool:search>{\"query\": }</tool>");
            break 'pairs;
        }
        let query = q_terms[tok as usize % q_terms.len()].clone();
        let search = Action::search(query.clone());
        w.block(&search.render());
        steps += 1;
        let (obs, next) = env.step(state, &search);
        state = next;
        w.observe(&obs);
        if let Observation::Retrieved { docs } = &obs {
            candidates.clear();
            for doc in docs {
                for t in content_terms(&format!("{} {}", doc.title, doc.text), &q_terms) {
                    if !candidates.contains(&t) {
                        candidates.push(t);
                    }
                }
            }
        }

        let tok = d.decide(&w.text, "score");
        if tok == DEFECT_TOKEN {
            w.block(&format!(
                "<tool:evaluate>{{\"evaluation\": \"Results for {query} reviewed.\", \"score\": \"ten\"}}</tool>"
            ));
            break 'pairs;
        }
        let eval = Action::evaluate(format!("Results for {query} reviewed."), SCORE_TABLE[tok as usize]);
        w.block(&eval.render());
        steps += 1;
        let (obs, next) = env.step(state, &eval);
        state = next;
        w.observe(&obs);
        pairs += 1;
        if matches!(obs, Observation::FeedbackCue { cue: CueLevel::High, .. }) {
            break;
        }
    }

    w.block(&Action::think("I will answer from the evidence gathered.").render());
    let tok = d.decide(&w.text, "answer");
    let pick = if candidates.is_empty() {
        "unknown".to_string()
    } else {
        candidates[tok as usize % candidates.len()].clone()
    };
    if tok == DEFECT_TOKEN {
        w.block(&format!("Final answer: {pick}"));
    } else {
        w.block(&Action::answer(pick).render());
    }
    Rollout {
        trajectory: parse_trajectory(&w.text).with_query(question),
        policy_tokens: d.tokens,
    }
}

/// Produces one trajectory for `question`. The seed only affects the
/// stochastic policy.
pub fn run_rollout(
    policy: &RolloutPolicy,
    env: &RetrievalEnv,
    question: &str,
    gold: &str,
    index: usize,
    seed: u64,
) -> Rollout {
    match policy {
        RolloutPolicy::Scripted(p) => run_scripted(p, env, question, gold, index),
        RolloutPolicy::Stochastic(p) => run_stochastic(p, env, question, seed),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::synthetic;
    use crate::retrieval::RetrievalConfig;

    fn env() -> (RetrievalEnv, synthetic::SyntheticWorld) {
        let w = synthetic::generate(3, 50, 20);
        let env = RetrievalEnv::from_documents(w.documents.clone(), &RetrievalConfig::default()).unwrap();
        (env, w)
    }

    #[test]
    fn stochastic_rollouts_are_seeded() {
        let (env, w) = env();
        let p = RolloutPolicy::Stochastic(StochasticPolicy::uniform());
        let q = &w.questions[0].question;
        let a = run_rollout(&p, &env, q, "", 0, 11);
        let b = run_rollout(&p, &env, q, "", 0, 11);
        assert_eq!(a, b);
        let differs = (12..40).any(|s| run_rollout(&p, &env, q, "", 0, s) != a);
        assert!(differs);
    }

    #[test]
    fn decision_positions_point_at_blocks() {
        let (env, w) = env();
        let p = RolloutPolicy::Stochastic(StochasticPolicy::uniform());
        for s in 0..50 {
            let r = run_rollout(&p, &env, &w.questions[1].question, "", 0, s);
            let pieces = tokenizer::pieces(&r.trajectory.raw_text);
            assert_eq!(pieces.len(), r.trajectory.token_count);
            let mut last = None;
            for t in &r.policy_tokens {
                assert!(t.position < pieces.len());
                assert!(last < Some(t.position));
                last = Some(t.position);
                let piece = &r.trajectory.raw_text[pieces[t.position].range()];
                assert!(piece == "<" || piece == "Final", "{piece}");
            }
        }
    }

    #[test]
    fn non_defect_rollouts_are_compliant() {
        let (env, w) = env();
        let p = RolloutPolicy::Stochastic(StochasticPolicy::uniform());
        for s in 0..200 {
            let r = run_rollout(&p, &env, &w.questions[2].question, "", 0, s);
            let defect = r.policy_tokens.iter().any(|t| t.token_id == DEFECT_TOKEN);
            let v = validate_format(&r.trajectory);
            assert_eq!(v.compliant, !defect, "{:?}\n{}", v, r.trajectory.raw_text);
        }
    }

    #[test]
    fn scripted_fills_placeholders() {
        let (env, _) = env();
        let script = vec![
            ScriptItem::Act(Action::think("look up {question}")),
            ScriptItem::Act(Action::search("{question}")),
            ScriptItem::Act(Action::evaluate("fine", 8.0)),
            ScriptItem::Act(Action::think("done")),
            ScriptItem::Act(Action::answer("{gold}")),
        ];
        let p = RolloutPolicy::Scripted(ScriptedPolicy::new(vec![script]).unwrap());
        let r = run_rollout(&p, &env, "Who?", "Zed", 0, 0);
        assert_eq!(r.trajectory.answer_text.as_deref(), Some("Zed"));
        assert!(validate_format(&r.trajectory).compliant);
        assert!(r.policy_tokens.iter().all(|t| t.logprob_old == 0.0));
        let first = &r.policy_tokens[3];
        let pieces = tokenizer::pieces(&r.trajectory.raw_text);
        let prefix = &r.trajectory.raw_text[..pieces[first.position].start];
        assert_eq!(first.context_key, ContextKey::from_history(&format!("Who?\u{1f}{prefix}")));
        let bad = vec![vec![ScriptItem::Act(Action::answer("x"))]];
        assert!(ScriptedPolicy::new(bad.clone()).is_err());
        assert!(ScriptedPolicy::unchecked(bad).is_ok());
    }
}
