use serde::{Deserialize, Serialize};
use std::ops::Range;
use thiserror::Error;

use super::tokenizer::{self, token_boundary};
use super::{validate_format, Action, Trajectory, Violation};

/// Token span covering one Search→Evaluate pair and the reasoning that led
/// to it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    /// 1-based.
    pub index: usize,
    /// Half-open token range within the trajectory text.
    pub start: usize,
    pub end: usize,
    pub score: f64,
}

impl Segment {
    pub fn span(&self) -> Range<usize> {
        self.start..self.end
    }

    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.start == self.end
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SegmentError {
    #[error("trajectory is not format-compliant: {0:?}")]
    NonCompliant(Vec<Violation>),
}

/// Splits a compliant trajectory into one segment per Evaluate.
///
/// Segment `k` runs from the first token after segment `k-1` (token 0 for
/// the first) through the last token of the `k`-th Evaluate block. Tokens
/// after the last Evaluate belong to no segment.
pub fn segment_trajectory(traj: &Trajectory) -> Result<Vec<Segment>, SegmentError> {
    let verdict = validate_format(traj);
    if !verdict.compliant {
        return Err(SegmentError::NonCompliant(verdict.violations));
    }
    let pieces = tokenizer::pieces(&traj.raw_text);
    let mut out = Vec::new();
    let mut start = 0;
    for step in &traj.steps {
        if let Action::Evaluate { score, .. } = step.action {
            let end = token_boundary(&pieces, step.span.end);
            out.push(Segment {
                index: out.len() + 1,
                start,
                end,
                score,
            });
            start = end;
        }
    }
    Ok(out)
}
