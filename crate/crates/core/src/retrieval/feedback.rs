//! Score-to-cue mapping and the canonical feedback templates returned after
//! an `Evaluate` action.

use serde::{Deserialize, Serialize};
use std::fmt;

use super::EnvError;

pub const LOW_TEMPLATE: &str = "The previous Search results are largely irrelevant or unhelpful for answering the question. Do not rely on them. Reformulate the query (e.g., alternative keywords or a different angle) and issue a new Search.";

pub const MID_TEMPLATE: &str = "The previous Search results contain partially useful evidence but may be incomplete or noisy. Use only clearly relevant excerpts. Consider an additional, more targeted Search to fill missing details, resolve remaining subproblems, or verify uncertain information.";

pub const HIGH_TEMPLATE: &str = "The previous Search results are highly relevant and constitute substantive progress toward answering the question (e.g., providing key facts or resolving an important subtask). Use them as primary evidence to construct the answer. Perform another Search only if a specific critical detail is still missing.";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CueLevel {
    Low,
    Mid,
    High,
}

impl CueLevel {
    pub const ALL: [CueLevel; 3] = [CueLevel::Low, CueLevel::Mid, CueLevel::High];

    pub fn template(self) -> &'static str {
        match self {
            CueLevel::Low => LOW_TEMPLATE,
            CueLevel::Mid => MID_TEMPLATE,
            CueLevel::High => HIGH_TEMPLATE,
        }
    }

    /// Quality label used in the score banner.
    pub fn quality_label(self) -> &'static str {
        match self {
            CueLevel::Low => "Low Quality",
            CueLevel::Mid => "Medium Quality",
            CueLevel::High => "High Quality",
        }
    }

    /// Inverse of [`CueLevel::template`]; exact byte comparison.
    pub fn from_template(text: &str) -> Option<CueLevel> {
        CueLevel::ALL.into_iter().find(|c| c.template() == text)
    }
}

impl fmt::Display for CueLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CueLevel::Low => "I_low",
            CueLevel::Mid => "I_mid",
            CueLevel::High => "I_high",
        })
    }
}

/// Maps a self-reported score to its cue: `[0,3]` low, `(3,7]` mid,
/// `(7,10]` high.
pub fn feedback_cue(score: f64) -> Result<CueLevel, EnvError> {
    if !(0.0..=10.0).contains(&score) {
        return Err(EnvError::ScoreOutOfRange(score));
    }
    Ok(if score <= 3.0 {
        CueLevel::Low
    } else if score <= 7.0 {
        CueLevel::Mid
    } else {
        CueLevel::High
    })
}

pub fn cue_template(cue: CueLevel) -> &'static str {
    cue.template()
}

/// Template prefixed with the banner, e.g. `Score 5/10 (Medium Quality): ...`.
pub fn cue_template_with_score(cue: CueLevel, score: f64) -> String {
    format!("{}{}", banner(cue, score), cue.template())
}

pub(crate) fn banner(cue: CueLevel, score: f64) -> String {
    format!("Score {}/10 ({}): ", format_score(score), cue.quality_label())
}

/// Shortest decimal form of a score: `5` for 5.0, `7.5` for 7.5.
pub fn format_score(score: f64) -> String {
    format!("{score}")
}
