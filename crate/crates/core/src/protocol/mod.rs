//! Trajectory grammar of the coupled Search→Evaluate protocol.
//!
//! Wire format:
//!
//! ```text
//! <think>reasoning</think>
//! <tool:search>{"query": "..."}</tool>
//! <obs:search>Doc 1 (Title: "..."): ...</obs>
//! <tool:evaluate>{"evaluation": "...", "score": 7}</tool>
//! <obs:evaluate>Score 7/10 (Medium Quality): ...</obs>
//! <answer>final answer</answer>
//! ```

mod parse;
mod segment;
pub mod tokenizer;
mod validate;

use serde::{Deserialize, Serialize};
use std::fmt;
use std::ops::Range;

use crate::retrieval::feedback::CueLevel;

pub use parse::{parse_evaluate_payload, parse_search_payload, parse_trajectory, PayloadError};
pub use segment::{segment_trajectory, Segment, SegmentError};
pub use tokenizer::Tokenizer;
pub use validate::validate_format;

/// Text shown to the agent when a Search is refused for lack of budget.
pub const BUDGET_EXHAUSTED_TEXT: &str = "[search budget exhausted]";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Action {
    Think { text: String },
    Search { query: String },
    Evaluate { assessment: String, score: f64 },
    Answer { text: String },
}

impl Action {
    pub fn think(text: impl Into<String>) -> Self {
        Action::Think { text: text.into() }
    }

    pub fn search(query: impl Into<String>) -> Self {
        Action::Search {
            query: query.into(),
        }
    }

    pub fn evaluate(assessment: impl Into<String>, score: f64) -> Self {
        Action::Evaluate {
            assessment: assessment.into(),
            score,
        }
    }

    pub fn answer(text: impl Into<String>) -> Self {
        Action::Answer { text: text.into() }
    }

    pub fn is_think(&self) -> bool {
        matches!(self, Action::Think { .. })
    }

    pub fn is_tool(&self) -> bool {
        matches!(self, Action::Search { .. } | Action::Evaluate { .. })
    }

    /// Canonical wire form of the action block.
    pub fn render(&self) -> String {
        match self {
            Action::Think { text } => format!("<think>{text}</think>"),
            Action::Search { query } => {
                format!("<tool:search>{{\"query\": {}}}</tool>", json_string(query))
            }
            Action::Evaluate { assessment, score } => format!(
                "<tool:evaluate>{{\"evaluation\": {}, \"score\": {}}}</tool>",
                json_string(assessment),
                crate::retrieval::feedback::format_score(*score)
            ),
            Action::Answer { text } => format!("<answer>{text}</answer>"),
        }
    }
}

fn json_string(s: &str) -> String {
    serde_json::to_string(s).expect("string serialization is infallible")
}

/// One retrieved document as the agent sees it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RetrievedDoc {
    pub rank: usize,
    pub title: String,
    pub text: String,
}

impl RetrievedDoc {
    /// `Doc n (Title: "..."): text`, newlines flattened to spaces.
    pub fn render(&self) -> String {
        format!(
            "Doc {} (Title: \"{}\"): {}",
            self.rank,
            self.title.replace('\n', " "),
            self.text.replace('\n', " ")
        )
    }
}

/// Channel of an observation block (`<obs:search>` / `<obs:evaluate>`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ToolKind {
    Search,
    Evaluate,
}

impl ToolKind {
    pub fn name(self) -> &'static str {
        match self {
            ToolKind::Search => "search",
            ToolKind::Evaluate => "evaluate",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Observation {
    Retrieved {
        docs: Vec<RetrievedDoc>,
    },
    FeedbackCue {
        cue: CueLevel,
        template_text: String,
        /// Score echoed in the `Score N/10 (...)` banner, if present.
        score: Option<f64>,
    },
    /// No observation. `budget_exhausted` marks a refused Search.
    Empty {
        budget_exhausted: bool,
    },
    /// Observation text that is not a canonical rendering.
    Raw {
        channel: ToolKind,
        text: String,
    },
}

impl Observation {
    pub const NONE: Observation = Observation::Empty {
        budget_exhausted: false,
    };

    pub fn feedback(cue: CueLevel, score: Option<f64>) -> Self {
        Observation::FeedbackCue {
            cue,
            template_text: cue.template().to_string(),
            score,
        }
    }

    /// Canonical wire form, or `None` for a plain empty observation.
    pub fn render(&self) -> Option<String> {
        match self {
            Observation::Retrieved { docs } => {
                let body: Vec<String> = docs.iter().map(RetrievedDoc::render).collect();
                Some(format!("<obs:search>{}</obs>", body.join("\n")))
            }
            Observation::FeedbackCue {
                cue,
                template_text,
                score,
            } => {
                let banner = score
                    .map(|s| crate::retrieval::feedback::banner(*cue, s))
                    .unwrap_or_default();
                Some(format!("<obs:evaluate>{banner}{template_text}</obs>"))
            }
            Observation::Empty {
                budget_exhausted: true,
            } => Some(format!("<obs:search>{BUDGET_EXHAUSTED_TEXT}</obs>")),
            Observation::Empty {
                budget_exhausted: false,
            } => None,
            Observation::Raw { channel, text } => {
                Some(format!("<obs:{}>{text}</obs>", channel.name()))
            }
        }
    }
}

/// One action with the observation the environment returned for it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Step {
    pub action: Action,
    pub observation: Observation,
    /// Byte range of the action block within `Trajectory::raw_text`.
    pub span: Range<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Violation {
    MissingThink,
    SearchWithoutEvaluate,
    EvaluateWithoutSearch,
    MalformedToolCall,
    MissingAnswer,
    ScoreOutOfRange,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Violation::MissingThink => "MISSING_THINK",
            Violation::SearchWithoutEvaluate => "SEARCH_WITHOUT_EVALUATE",
            Violation::EvaluateWithoutSearch => "EVALUATE_WITHOUT_SEARCH",
            Violation::MalformedToolCall => "MALFORMED_TOOL_CALL",
            Violation::MissingAnswer => "MISSING_ANSWER",
            Violation::ScoreOutOfRange => "SCORE_OUT_OF_RANGE",
        })
    }
}

/// A tool block that could not be turned into an [`Action`]. The original
/// text is kept so the trajectory still serializes faithfully.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParseDefect {
    /// Number of well-formed steps preceding the block.
    pub step_index: usize,
    pub code: Violation,
    pub raw: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub query: String,
    pub steps: Vec<Step>,
    pub answer_text: Option<String>,
    pub raw_text: String,
    pub token_count: usize,
    pub defects: Vec<ParseDefect>,
}

impl Trajectory {
    pub fn with_query(mut self, query: impl Into<String>) -> Self {
        self.query = query.into();
        self
    }

    pub fn actions(&self) -> impl Iterator<Item = &Action> {
        self.steps.iter().map(|s| &s.action)
    }

    pub fn count_searches(&self) -> usize {
        self.actions()
            .filter(|a| matches!(a, Action::Search { .. }))
            .count()
    }

    pub fn count_evaluates(&self) -> usize {
        self.actions()
            .filter(|a| matches!(a, Action::Evaluate { .. }))
            .count()
    }

    pub fn has_malformed_tool_call(&self) -> bool {
        self.defects
            .iter()
            .any(|d| d.code == Violation::MalformedToolCall)
    }

    /// Observable history `h_t = [x, a_0, o_0, ..., a_{t-1}, o_{t-1}]` as
    /// the first `t` steps.
    pub fn history(&self, t: usize) -> (&str, &[Step]) {
        (&self.query, &self.steps[..t.min(self.steps.len())])
    }

    /// Canonical serialization: blocks joined by newlines, stray text
    /// dropped, malformed tool blocks kept verbatim in place.
    pub fn serialize(&self) -> String {
        let mut blocks: Vec<String> = Vec::new();
        let mut defects = self.defects.iter().peekable();
        for (i, step) in self.steps.iter().enumerate() {
            while let Some(d) = defects.next_if(|d| d.step_index <= i) {
                blocks.push(d.raw.clone());
            }
            blocks.push(step.action.render());
            if let Some(obs) = step.observation.render() {
                blocks.push(obs);
            }
        }
        blocks.extend(defects.map(|d| d.raw.clone()));
        blocks.join("\n")
    }
}

/// Outcome of the format gate.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FormatVerdict {
    pub compliant: bool,
    pub violations: Vec<Violation>,
}

impl FormatVerdict {
    pub fn from_violations(mut violations: Vec<Violation>) -> Self {
        violations.sort();
        violations.dedup();
        Self {
            compliant: violations.is_empty(),
            violations,
        }
    }

    pub fn has(&self, v: Violation) -> bool {
        self.violations.contains(&v)
    }
}
