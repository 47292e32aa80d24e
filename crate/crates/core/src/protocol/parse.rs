use serde_json::{Map, Value};
use thiserror::Error;

use super::tokenizer;
use super::{
    Action, Observation, ParseDefect, RetrievedDoc, Step, ToolKind, Trajectory, Violation,
    BUDGET_EXHAUSTED_TEXT,
};
use crate::retrieval::feedback::{format_score, CueLevel};

const THINK_OPEN: &str = "<think>";
const THINK_CLOSE: &str = "</think>";
const ANSWER_OPEN: &str = "<answer>";
const ANSWER_CLOSE: &str = "</answer>";
const TOOL_PREFIX: &str = "<tool:";
const TOOL_CLOSE: &str = "</tool>";
const OBS_PREFIX: &str = "<obs:";
const OBS_CLOSE: &str = "</obs>";

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PayloadError {
    #[error("payload is not a key-value object: {0}")]
    Syntax(String),
    #[error("missing key {0:?}")]
    MissingKey(&'static str),
    #[error("unexpected key {0:?}")]
    UnexpectedKey(String),
    #[error("key {key:?} must be a {expected}")]
    WrongType {
        key: &'static str,
        expected: &'static str,
    },
    #[error("search query is empty")]
    EmptyQuery,
    #[error("score {0} outside [0, 10]")]
    ScoreOutOfRange(f64),
    #[error("unknown tool {0:?}")]
    UnknownTool(String),
    #[error("tool block is not closed")]
    Unclosed,
}

impl PayloadError {
    fn violation(&self) -> Violation {
        match self {
            PayloadError::ScoreOutOfRange(_) => Violation::ScoreOutOfRange,
            _ => Violation::MalformedToolCall,
        }
    }
}

fn object(payload: &str) -> Result<Map<String, Value>, PayloadError> {
    match serde_json::from_str::<Value>(payload) {
        Ok(Value::Object(m)) => Ok(m),
        Ok(_) => Err(PayloadError::Syntax("not an object".into())),
        Err(e) => Err(PayloadError::Syntax(e.to_string())),
    }
}

fn reject_extra(map: &Map<String, Value>, allowed: &[&str]) -> Result<(), PayloadError> {
    match map.keys().find(|k| !allowed.contains(&k.as_str())) {
        Some(k) => Err(PayloadError::UnexpectedKey(k.clone())),
        None => Ok(()),
    }
}

/// Parses a `{"query": "..."}` payload.
pub fn parse_search_payload(payload: &str) -> Result<Action, PayloadError> {
    let map = object(payload)?;
    reject_extra(&map, &["query"])?;
    let query = match map.get("query") {
        None => return Err(PayloadError::MissingKey("query")),
        Some(Value::String(s)) => s,
        Some(_) => {
            return Err(PayloadError::WrongType {
                key: "query",
                expected: "string",
            })
        }
    };
    if query.trim().is_empty() {
        return Err(PayloadError::EmptyQuery);
    }
    Ok(Action::Search {
        query: query.clone(),
    })
}

/// Parses a `{"evaluation": "...", "score": z}` payload. Scores outside
/// `[0, 10]` are rejected.
pub fn parse_evaluate_payload(payload: &str) -> Result<Action, PayloadError> {
    let map = object(payload)?;
    reject_extra(&map, &["evaluation", "score"])?;
    let assessment = match map.get("evaluation") {
        None => return Err(PayloadError::MissingKey("evaluation")),
        Some(Value::String(s)) => s.clone(),
        Some(_) => {
            return Err(PayloadError::WrongType {
                key: "evaluation",
                expected: "string",
            })
        }
    };
    let score = match map.get("score") {
        None => return Err(PayloadError::MissingKey("score")),
        Some(Value::Number(n)) => n.as_f64().ok_or(PayloadError::WrongType {
            key: "score",
            expected: "number",
        })?,
        Some(_) => {
            return Err(PayloadError::WrongType {
                key: "score",
                expected: "number",
            })
        }
    };
    if !score.is_finite() || !(0.0..=10.0).contains(&score) {
        return Err(PayloadError::ScoreOutOfRange(score));
    }
    Ok(Action::Evaluate { assessment, score })
}

enum Block<'a> {
    Think(&'a str),
    Answer(&'a str),
    Tool {
        name: &'a str,
        payload: &'a str,
    },
    UnclosedTool,
    Obs {
        channel: &'a str,
        body: &'a str,
    },
}

struct Scanner<'a> {
    src: &'a str,
    pos: usize,
}

impl<'a> Scanner<'a> {
    /// Next recognized block as `(start, end, block)`; stray text between
    /// blocks is skipped.
    fn next_block(&mut self) -> Option<(usize, usize, Block<'a>)> {
        while self.pos < self.src.len() {
            let rel = self.src[self.pos..].find('<')?;
            let start = self.pos + rel;
            let rest = &self.src[start..];
            if let Some(b) = self.try_block(start, rest) {
                return Some(b);
            }
            self.pos = start + 1;
        }
        None
    }

    fn try_block(&mut self, start: usize, rest: &'a str) -> Option<(usize, usize, Block<'a>)> {
        let enclosed = |open: &str, close: &str| -> Option<(&'a str, usize)> {
            let body_start = open.len();
            let body_len = rest[body_start..].find(close)?;
            Some((
                &rest[body_start..body_start + body_len],
                body_start + body_len + close.len(),
            ))
        };
        if rest.starts_with(THINK_OPEN) {
            let (body, len) = enclosed(THINK_OPEN, THINK_CLOSE)?;
            self.pos = start + len;
            return Some((start, start + len, Block::Think(body)));
        }
        if rest.starts_with(ANSWER_OPEN) {
            let (body, len) = enclosed(ANSWER_OPEN, ANSWER_CLOSE)?;
            self.pos = start + len;
            return Some((start, start + len, Block::Answer(body)));
        }
        if rest.starts_with(TOOL_PREFIX) {
            let gt = match rest.find('>') {
                Some(gt) => gt,
                None => {
                    self.pos = self.src.len();
                    return Some((start, self.src.len(), Block::UnclosedTool));
                }
            };
            let name = &rest[TOOL_PREFIX.len()..gt];
            return match rest[gt + 1..].find(TOOL_CLOSE) {
                Some(n) => {
                    let len = gt + 1 + n + TOOL_CLOSE.len();
                    self.pos = start + len;
                    let payload = &rest[gt + 1..gt + 1 + n];
                    Some((start, start + len, Block::Tool { name, payload }))
                }
                None => {
                    self.pos = self.src.len();
                    Some((start, self.src.len(), Block::UnclosedTool))
                }
            };
        }
        if rest.starts_with(OBS_PREFIX) {
            let gt = rest.find('>')?;
            let channel = &rest[OBS_PREFIX.len()..gt];
            let n = rest[gt + 1..].find(OBS_CLOSE)?;
            let len = gt + 1 + n + OBS_CLOSE.len();
            self.pos = start + len;
            let body = &rest[gt + 1..gt + 1 + n];
            return Some((start, start + len, Block::Obs { channel, body }));
        }
        None
    }
}

fn parse_docs(body: &str) -> Option<Vec<RetrievedDoc>> {
    if body.is_empty() {
        return Some(Vec::new());
    }
    body.split('\n').map(parse_doc_line).collect()
}

fn parse_doc_line(line: &str) -> Option<RetrievedDoc> {
    let rest = line.strip_prefix("Doc ")?;
    let digits = rest.find(|c: char| !c.is_ascii_digit())?;
    let rank: usize = rest[..digits].parse().ok()?;
    if rank.to_string() != rest[..digits] {
        return None;
    }
    let rest = rest[digits..].strip_prefix(" (Title: \"")?;
    let close = rest.find("\"): ")?;
    let title = &rest[..close];
    let text = &rest[close + 4..];
    Some(RetrievedDoc {
        rank,
        title: title.to_string(),
        text: text.to_string(),
    })
}

fn parse_feedback(body: &str) -> Option<Observation> {
    if let Some(cue) = CueLevel::from_template(body) {
        return Some(Observation::feedback(cue, None));
    }
    let rest = body.strip_prefix("Score ")?;
    let slash = rest.find("/10 (")?;
    let score_text = &rest[..slash];
    let score: f64 = score_text.parse().ok()?;
    if !score.is_finite() || format_score(score) != score_text {
        return None;
    }
    let rest = &rest[slash + 5..];
    let close = rest.find("): ")?;
    let label = &rest[..close];
    let template = &rest[close + 3..];
    let cue = CueLevel::from_template(template)?;
    if cue.quality_label() != label {
        return None;
    }
    Some(Observation::feedback(cue, Some(score)))
}

fn parse_observation(channel: &str, body: &str) -> Option<Observation> {
    let kind = match channel {
        "search" => ToolKind::Search,
        "evaluate" => ToolKind::Evaluate,
        _ => return None,
    };
    let parsed = match kind {
        ToolKind::Search if body == BUDGET_EXHAUSTED_TEXT => Some(Observation::Empty {
            budget_exhausted: true,
        }),
        ToolKind::Search => parse_docs(body).map(|docs| Observation::Retrieved { docs }),
        ToolKind::Evaluate => parse_feedback(body),
    };
    Some(parsed.unwrap_or_else(|| Observation::Raw {
        channel: kind,
        text: body.to_string(),
    }))
}

/// Parses raw rollout text into a [`Trajectory`].
///
/// Never fails: tool blocks whose payload does not parse are kept as
/// [`ParseDefect`]s (`MALFORMED_TOOL_CALL` or `SCORE_OUT_OF_RANGE`) and the
/// rest of the text is still parsed. Text outside recognized blocks is
/// ignored; orphan observation blocks are dropped.
pub fn parse_trajectory(raw: &str) -> Trajectory {
    let mut scanner = Scanner { src: raw, pos: 0 };
    let mut steps: Vec<Step> = Vec::new();
    let mut defects = Vec::new();
    let mut answer_text = None;
    // True while the last block was a tool call that may take an observation.
    let mut awaiting_obs = false;

    while let Some((start, end, block)) = scanner.next_block() {
        let action = match block {
            Block::Obs { channel, body } => {
                if awaiting_obs && between_is_blank(raw, steps.last().map(|s| s.span.end), start) {
                    if let Some(obs) = parse_observation(channel, body) {
                        steps.last_mut().expect("awaiting implies a step").observation = obs;
                    }
                }
                awaiting_obs = false;
                continue;
            }
            Block::Think(t) => Action::think(t),
            Block::Answer(t) => {
                if answer_text.is_none() {
                    answer_text = Some(t.to_string());
                }
                Action::answer(t)
            }
            Block::UnclosedTool => {
                defects.push(defect(steps.len(), &raw[start..end], &PayloadError::Unclosed));
                awaiting_obs = false;
                continue;
            }
            Block::Tool { name, payload } => {
                let parsed = match name {
                    "search" => parse_search_payload(payload),
                    "evaluate" => parse_evaluate_payload(payload),
                    other => Err(PayloadError::UnknownTool(other.to_string())),
                };
                match parsed {
                    Ok(a) => a,
                    Err(e) => {
                        defects.push(defect(steps.len(), &raw[start..end], &e));
                        awaiting_obs = false;
                        continue;
                    }
                }
            }
        };
        awaiting_obs = action.is_tool();
        steps.push(Step {
            action,
            observation: Observation::NONE,
            span: start..end,
        });
    }

    Trajectory {
        query: String::new(),
        steps,
        answer_text,
        raw_text: raw.to_string(),
        token_count: tokenizer::count(raw),
        defects,
    }
}

fn defect(step_index: usize, raw: &str, err: &PayloadError) -> ParseDefect {
    ParseDefect {
        step_index,
        code: err.violation(),
        raw: raw.to_string(),
        reason: err.to_string(),
    }
}

fn between_is_blank(raw: &str, from: Option<usize>, to: usize) -> bool {
    match from {
        Some(f) if f <= to => raw[f..to].trim().is_empty(),
        _ => false,
    }
}
