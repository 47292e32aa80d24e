//! Simulated retrieval environment: BM25 search, score-to-cue feedback and
//! per-episode Search budget.

pub mod bm25;
pub mod feedback;

use serde::{Deserialize, Serialize};
use std::io::{BufRead, Write};
use std::sync::Arc;
use thiserror::Error;

use crate::protocol::{Action, Observation, RetrievedDoc};
pub use bm25::{Bm25Params, CorpusIndex};
pub use feedback::{cue_template, cue_template_with_score, feedback_cue, CueLevel};

pub const DEFAULT_TOP_K: usize = 3;
pub const DEFAULT_SEARCH_BUDGET: usize = 20;

#[derive(Debug, Error)]
pub enum EnvError {
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("duplicate document id {0:?}")]
    DuplicateId(String),
    #[error("score {0} outside [0, 10]")]
    ScoreOutOfRange(f64),
    #[error("line {line}: {source}")]
    Json {
        line: usize,
        source: serde_json::Error,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    pub title: String,
    pub text: String,
}

/// Reads a JSON-lines corpus (`{"id", "title", "text"}` per line). Blank
/// lines are skipped.
pub fn read_corpus<R: BufRead>(reader: R) -> Result<Vec<Document>, EnvError> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let doc = serde_json::from_str(&line).map_err(|source| EnvError::Json {
            line: i + 1,
            source,
        })?;
        out.push(doc);
    }
    Ok(out)
}

pub fn write_corpus<W: Write>(mut w: W, docs: &[Document]) -> Result<(), EnvError> {
    for d in docs {
        serde_json::to_writer(&mut w, d).map_err(std::io::Error::from)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RetrievalConfig {
    pub bm25: Bm25Params,
    pub top_k: usize,
    pub search_budget: usize,
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        Self {
            bm25: Bm25Params::default(),
            top_k: DEFAULT_TOP_K,
            search_budget: DEFAULT_SEARCH_BUDGET,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EpisodeState {
    pub searches_used: usize,
    pub budget: usize,
    pub awaiting_evaluate: bool,
}

impl EpisodeState {
    pub fn new(budget: usize) -> Self {
        Self {
            searches_used: 0,
            budget,
            awaiting_evaluate: false,
        }
    }

    pub fn budget_left(&self) -> usize {
        self.budget - self.searches_used
    }
}

impl Default for EpisodeState {
    fn default() -> Self {
        Self::new(DEFAULT_SEARCH_BUDGET)
    }
}

/// Shared read-only index plus retrieval settings. Cheap to clone.
#[derive(Debug, Clone)]
pub struct RetrievalEnv {
    index: Arc<CorpusIndex>,
    top_k: usize,
    search_budget: usize,
}

impl RetrievalEnv {
    pub fn new(index: CorpusIndex, top_k: usize, search_budget: usize) -> Self {
        Self {
            index: Arc::new(index),
            top_k: top_k.max(1),
            search_budget,
        }
    }

    pub fn from_documents(docs: Vec<Document>, cfg: &RetrievalConfig) -> Result<Self, EnvError> {
        Ok(Self::new(
            CorpusIndex::build(docs, cfg.bm25)?,
            cfg.top_k,
            cfg.search_budget,
        ))
    }

    pub fn index(&self) -> &CorpusIndex {
        &self.index
    }

    pub fn top_k(&self) -> usize {
        self.top_k
    }

    pub fn reset(&self) -> EpisodeState {
        EpisodeState::new(self.search_budget)
    }

    pub fn retrieve(&self, query: &str) -> Vec<RetrievedDoc> {
        self.index
            .search(query, self.top_k)
            .into_iter()
            .enumerate()
            .map(|(i, (d, _))| RetrievedDoc {
                rank: i + 1,
                title: d.title.clone(),
                text: d.text.clone(),
            })
            .collect()
    }

    pub fn step(&self, state: EpisodeState, action: &Action) -> (Observation, EpisodeState) {
        env_step(state, self, action)
    }
}

/// Environment transition for one action. Protocol violations are not
/// judged here; an Evaluate with an invalid score yields an empty
/// observation.
pub fn env_step(
    state: EpisodeState,
    env: &RetrievalEnv,
    action: &Action,
) -> (Observation, EpisodeState) {
    match action {
        Action::Search { query } => {
            if state.searches_used >= state.budget {
                return (
                    Observation::Empty {
                        budget_exhausted: true,
                    },
                    state,
                );
            }
            let docs = env.retrieve(query);
            let next = EpisodeState {
                searches_used: state.searches_used + 1,
                awaiting_evaluate: true,
                ..state
            };
            (Observation::Retrieved { docs }, next)
        }
        Action::Evaluate { score, .. } => {
            let next = EpisodeState {
                awaiting_evaluate: false,
                ..state
            };
            match feedback_cue(*score) {
                Ok(cue) => (Observation::feedback(cue, Some(*score)), next),
                Err(_) => (Observation::NONE, next),
            }
        }
        Action::Think { .. } | Action::Answer { .. } => (Observation::NONE, state),
    }
}
