//! Answer normalization, EM / token F1, the format-gated reward and the
//! tool-parsing failure rate.

use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::io::BufRead;
use thiserror::Error;

use crate::protocol::{validate_format, Trajectory};

#[derive(Debug, Error)]
pub enum RewardError {
    #[error("gold answer needs at least one alias")]
    NoAliases,
    #[error("tool parse failure rate of an empty set is undefined")]
    EmptyBatch,
    #[error("line {line}: {source}")]
    Json {
        line: usize,
        source: serde_json::Error,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Acceptable answer strings for one question.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GoldAnswer {
    aliases: Vec<String>,
}

impl GoldAnswer {
    pub fn new<I, S>(aliases: I) -> Result<Self, RewardError>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let aliases: Vec<String> = aliases.into_iter().map(Into::into).collect();
        if aliases.is_empty() {
            return Err(RewardError::NoAliases);
        }
        Ok(Self { aliases })
    }

    pub fn single(answer: impl Into<String>) -> Self {
        Self {
            aliases: vec![answer.into()],
        }
    }

    pub fn aliases(&self) -> &[String] {
        &self.aliases
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardRecord {
    pub reward: f64,
    pub f1: f64,
    pub em: u8,
    pub format_compliant: bool,
}

/// Lowercase, strip ASCII punctuation, drop the articles a/an/the, collapse
/// whitespace.
pub fn normalize_answer(s: &str) -> String {
    let lowered = s.to_lowercase();
    let no_punct: String = lowered
        .chars()
        .filter(|c| !c.is_ascii_punctuation())
        .collect();
    no_punct
        .split_whitespace()
        .filter(|w| !matches!(*w, "a" | "an" | "the"))
        .collect::<Vec<_>>()
        .join(" ")
}

fn f1_single(pred: &str, gold: &str) -> f64 {
    let p = normalize_answer(pred);
    let g = normalize_answer(gold);
    let p_toks: Vec<&str> = p.split_whitespace().collect();
    let g_toks: Vec<&str> = g.split_whitespace().collect();
    match (p_toks.is_empty(), g_toks.is_empty()) {
        (true, true) => return 1.0,
        (true, false) | (false, true) => return 0.0,
        _ => {}
    }
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for t in &g_toks {
        *counts.entry(t).or_default() += 1;
    }
    let mut common = 0usize;
    for t in &p_toks {
        if let Some(c) = counts.get_mut(t) {
            if *c > 0 {
                *c -= 1;
                common += 1;
            }
        }
    }
    if common == 0 {
        return 0.0;
    }
    let precision = common as f64 / p_toks.len() as f64;
    let recall = common as f64 / g_toks.len() as f64;
    2.0 * precision * recall / (precision + recall)
}

/// Best token-overlap F1 across aliases.
pub fn token_f1(pred: &str, gold: &GoldAnswer) -> f64 {
    gold.aliases
        .iter()
        .map(|g| f1_single(pred, g))
        .fold(0.0, f64::max)
}

pub fn exact_match(pred: &str, gold: &GoldAnswer) -> u8 {
    let p = normalize_answer(pred);
    u8::from(gold.aliases.iter().any(|g| normalize_answer(g) == p))
}

/// F1 of the extracted answer if the trajectory passes the format gate,
/// otherwise zero.
pub fn gated_reward(traj: &Trajectory, gold: &GoldAnswer) -> RewardRecord {
    let compliant = validate_format(traj).compliant;
    let (f1, em) = match &traj.answer_text {
        Some(ans) => (token_f1(ans, gold), exact_match(ans, gold)),
        None => (0.0, 0),
    };
    RewardRecord {
        reward: if compliant { f1 } else { 0.0 },
        f1,
        em,
        format_compliant: compliant,
    }
}

/// Fraction of trajectories with at least one unparsable tool call.
pub fn tool_parse_failure_rate<'a, I>(trajs: I) -> Result<f64, RewardError>
where
    I: IntoIterator<Item = &'a Trajectory>,
{
    let (mut n, mut bad) = (0usize, 0usize);
    for t in trajs {
        n += 1;
        bad += usize::from(t.has_malformed_tool_call());
    }
    if n == 0 {
        return Err(RewardError::EmptyBatch);
    }
    Ok(bad as f64 / n as f64)
}

/// One question of a QA dataset.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QaExample {
    pub id: String,
    pub question: String,
    pub answers: Vec<String>,
}

impl QaExample {
    pub fn gold(&self) -> Result<GoldAnswer, RewardError> {
        GoldAnswer::new(self.answers.iter().cloned())
    }
}

pub(crate) fn read_jsonl<T, R>(reader: R) -> Result<Vec<T>, RewardError>
where
    T: serde::de::DeserializeOwned,
    R: BufRead,
{
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line).map_err(|source| RewardError::Json {
                line: i + 1,
                source,
            })?,
        );
    }
    Ok(out)
}

/// Reads a JSON-lines QA dataset (`{"id", "question", "answers"}`).
pub fn read_dataset<R: BufRead>(reader: R) -> Result<Vec<QaExample>, RewardError> {
    read_jsonl(reader)
}

/// One model output to score. `trajectory` is raw rollout text; when it is
/// absent `prediction` is taken as the bare answer and counts as parsed.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub id: String,
    #[serde(default)]
    pub prediction: Option<String>,
    #[serde(default)]
    pub trajectory: Option<String>,
}

pub fn read_predictions<R: BufRead>(reader: R) -> Result<Vec<PredictionRecord>, RewardError> {
    read_jsonl(reader)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMetrics {
    pub dataset: String,
    pub n: usize,
    pub em: f64,
    pub f1: f64,
    pub tpfr: f64,
    /// Predictions whose id is not in the dataset.
    pub unmatched: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub datasets: Vec<DatasetMetrics>,
    pub macro_em: f64,
    pub macro_f1: f64,
    pub macro_tpfr: f64,
}

/// EM / F1 / TPFR of `preds` against `data`. Questions with no prediction
/// score zero and count as parsed.
pub fn evaluate_predictions(
    name: &str,
    data: &[QaExample],
    preds: &[PredictionRecord],
) -> Result<DatasetMetrics, RewardError> {
    let by_id: HashMap<&str, &PredictionRecord> =
        preds.iter().map(|p| (p.id.as_str(), p)).collect();
    let known: std::collections::HashSet<&str> = data.iter().map(|q| q.id.as_str()).collect();
    let unmatched = preds.iter().filter(|p| !known.contains(p.id.as_str())).count();
    let (mut em, mut f1, mut failures) = (0.0, 0.0, 0usize);
    for q in data {
        let gold = q.gold()?;
        let Some(p) = by_id.get(q.id.as_str()) else {
            continue;
        };
        let answer = match &p.trajectory {
            Some(raw) => {
                let t = crate::protocol::parse_trajectory(raw);
                failures += usize::from(t.has_malformed_tool_call());
                t.answer_text
            }
            None => p.prediction.clone(),
        };
        if let Some(a) = answer {
            em += f64::from(exact_match(&a, &gold));
            f1 += token_f1(&a, &gold);
        }
    }
    let n = data.len();
    let denom = n.max(1) as f64;
    Ok(DatasetMetrics {
        dataset: name.to_string(),
        n,
        em: em / denom,
        f1: f1 / denom,
        tpfr: failures as f64 / denom,
        unmatched,
    })
}

pub fn macro_report(datasets: Vec<DatasetMetrics>) -> MetricsReport {
    let k = datasets.len().max(1) as f64;
    let avg = |f: fn(&DatasetMetrics) -> f64| datasets.iter().map(f).sum::<f64>() / k;
    MetricsReport {
        macro_em: avg(|d| d.em),
        macro_f1: avg(|d| d.f1),
        macro_tpfr: avg(|d| d.tpfr),
        datasets,
    }
}
