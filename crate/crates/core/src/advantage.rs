//! Group-relative advantages and process-calibrated rescaling.
//!
//! Every rollout `i` in a group gets `A_i = (r_i - mean) / (std + eps)`.
//! Within rollout `i`, the self-evaluation scores `z_k` of its segments are
//! standardized to `z~_k`, each segment gets a gain
//! `lambda_k = lambda_base + (lambda_max - lambda_base) * z_k / 10`, and every
//! token of segment `k` receives `A_i * max(delta, 1 + lambda_k * z~_k)`.
//! Tokens outside all segments keep `A_i`.

use serde::{Deserialize, Serialize};
use std::io::Write;
use thiserror::Error;

use crate::protocol::Segment;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AdvantageError {
    #[error("group normalization needs at least 2 rewards, got {0}")]
    GroupTooSmall(usize),
    #[error("score {0} outside [0, 10]")]
    ScoreOutOfRange(f64),
    #[error("invalid PCAR parameters: {0}")]
    InvalidParams(&'static str),
    #[error("segment span {start}..{end} is out of order, overlapping or beyond length {len}")]
    BadSpan { start: usize, end: usize, len: usize },
    #[error("non-finite value in input")]
    NonFinite,
}

/// Which standard deviation the normalizations use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StdKind {
    /// Divide by `n`.
    #[default]
    Population,
    /// Divide by `n - 1` (Bessel); falls back to 0 for a single value.
    Sample,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PcarParams {
    pub lambda_base: f64,
    pub lambda_max: f64,
    pub delta: f64,
    pub eps: f64,
    #[serde(default)]
    pub std_kind: StdKind,
}

impl Default for PcarParams {
    fn default() -> Self {
        Self {
            lambda_base: 0.1,
            lambda_max: 0.5,
            delta: 1e-6,
            eps: 1e-8,
            std_kind: StdKind::Population,
        }
    }
}

impl PcarParams {
    pub fn new(lambda_base: f64, lambda_max: f64) -> Self {
        Self {
            lambda_base,
            lambda_max,
            ..Self::default()
        }
    }

    pub fn with_delta(self, delta: f64) -> Self {
        Self { delta, ..self }
    }

    pub fn validate(&self) -> Result<(), AdvantageError> {
        let all = [self.lambda_base, self.lambda_max, self.delta, self.eps];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(AdvantageError::NonFinite);
        }
        if self.lambda_base < 0.0 {
            return Err(AdvantageError::InvalidParams("lambda_base must be >= 0"));
        }
        if self.lambda_max < self.lambda_base {
            return Err(AdvantageError::InvalidParams("lambda_max must be >= lambda_base"));
        }
        if self.delta <= 0.0 {
            return Err(AdvantageError::InvalidParams("delta must be > 0"));
        }
        if self.eps <= 0.0 {
            return Err(AdvantageError::InvalidParams("eps must be > 0"));
        }
        Ok(())
    }
}

/// Mean and standard deviation. The mean is accumulated relative to the
/// first value, so identical inputs give zero deviations exactly.
pub fn mean_std(values: &[f64], kind: StdKind) -> (f64, f64) {
    let Some(&shift) = values.first() else {
        return (0.0, 0.0);
    };
    let n = values.len() as f64;
    let mean = shift + values.iter().map(|v| v - shift).sum::<f64>() / n;
    let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
    let denom = match kind {
        StdKind::Population => n,
        StdKind::Sample if values.len() > 1 => n - 1.0,
        StdKind::Sample => return (mean, 0.0),
    };
    (mean, (ss / denom).sqrt())
}

/// `(r_i - mean) / (std + eps)` over a group of at least two rewards.
pub fn group_normalize(rewards: &[f64], eps: f64) -> Result<Vec<f64>, AdvantageError> {
    group_normalize_with(rewards, eps, StdKind::Population)
}

pub fn group_normalize_with(
    rewards: &[f64],
    eps: f64,
    kind: StdKind,
) -> Result<Vec<f64>, AdvantageError> {
    if rewards.len() < 2 {
        return Err(AdvantageError::GroupTooSmall(rewards.len()));
    }
    if rewards.iter().any(|r| !r.is_finite()) {
        return Err(AdvantageError::NonFinite);
    }
    let (mean, std) = mean_std(rewards, kind);
    Ok(rewards.iter().map(|r| (r - mean) / (std + eps)).collect())
}

/// Intra-trajectory standardization `(z_k - mean) / (std + eps)`.
pub fn standardize_scores(scores: &[f64], eps: f64) -> Vec<f64> {
    standardize_scores_with(scores, eps, StdKind::Population)
}

pub fn standardize_scores_with(scores: &[f64], eps: f64, kind: StdKind) -> Vec<f64> {
    let (mean, std) = mean_std(scores, kind);
    scores.iter().map(|z| (z - mean) / (std + eps)).collect()
}

/// Score-scaled gain, linear from `lambda_base` at 0 to `lambda_max` at 10.
pub fn lambda_gain(score: f64, params: &PcarParams) -> Result<f64, AdvantageError> {
    if !(0.0..=10.0).contains(&score) {
        return Err(AdvantageError::ScoreOutOfRange(score));
    }
    Ok(params.lambda_base + (params.lambda_max - params.lambda_base) * score / 10.0)
}

/// Clamped advantage multiplier `max(delta, 1 + lambda * z~)`.
pub fn multiplier(lambda: f64, z_tilde: f64, delta: f64) -> f64 {
    (1.0 + lambda * z_tilde).max(delta)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentDiagnostics {
    pub k: usize,
    pub z: f64,
    pub z_tilde: f64,
    pub lambda: f64,
    /// `1 + lambda * z~` before the clamp.
    pub raw_multiplier: f64,
    pub multiplier: f64,
    pub clamped: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibratedAdvantages {
    pub group_advantage: f64,
    /// One entry per token of the trajectory.
    pub tokens: Vec<f64>,
    pub segments: Vec<SegmentDiagnostics>,
}

impl CalibratedAdvantages {
    /// Number of segments whose multiplier hit the clamp floor.
    pub fn clamped_count(&self) -> usize {
        self.segments.iter().filter(|s| s.clamped).count()
    }
}

/// Spreads the group advantage `a` over `len` tokens, rescaling each
/// segment's tokens by its clamped multiplier.
pub fn calibrate(
    a: f64,
    segments: &[Segment],
    len: usize,
    params: &PcarParams,
) -> Result<CalibratedAdvantages, AdvantageError> {
    params.validate()?;
    if !a.is_finite() {
        return Err(AdvantageError::NonFinite);
    }
    let mut prev_end = 0;
    for s in segments {
        if s.start < prev_end || s.start > s.end || s.end > len {
            return Err(AdvantageError::BadSpan {
                start: s.start,
                end: s.end,
                len,
            });
        }
        prev_end = s.end;
    }
    let scores: Vec<f64> = segments.iter().map(|s| s.score).collect();
    let z_tilde = standardize_scores_with(&scores, params.eps, params.std_kind);

    let mut tokens = vec![a; len];
    let mut diags = Vec::with_capacity(segments.len());
    for (s, &zt) in segments.iter().zip(&z_tilde) {
        let lambda = lambda_gain(s.score, params)?;
        let raw = 1.0 + lambda * zt;
        let m = multiplier(lambda, zt, params.delta);
        for t in &mut tokens[s.start..s.end] {
            *t = a * m;
        }
        diags.push(SegmentDiagnostics {
            k: s.index,
            z: s.score,
            z_tilde: zt,
            lambda,
            raw_multiplier: raw,
            multiplier: m,
            clamped: raw <= params.delta,
        });
    }
    Ok(CalibratedAdvantages {
        group_advantage: a,
        tokens,
        segments: diags,
    })
}

/// Spread between the largest and smallest multiplier when `z~` spans
/// `[-1, 1]`: `(1 + lambda_max) / max(delta, 1 - lambda_max)`.
pub fn relative_importance_ratio(params: &PcarParams) -> f64 {
    (1.0 + params.lambda_max) / params.delta.max(1.0 - params.lambda_max)
}

/// One line of the per-segment diagnostics export.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsRecord {
    pub trajectory_id: String,
    pub k: usize,
    pub z: f64,
    pub z_tilde: f64,
    pub lambda: f64,
    pub multiplier: f64,
    pub clamped: bool,
}

impl DiagnosticsRecord {
    pub fn from_segment(trajectory_id: &str, d: &SegmentDiagnostics) -> Self {
        Self {
            trajectory_id: trajectory_id.to_string(),
            k: d.k,
            z: d.z,
            z_tilde: d.z_tilde,
            lambda: d.lambda,
            multiplier: d.multiplier,
            clamped: d.clamped,
        }
    }
}

pub fn write_diagnostics<W: Write>(mut w: W, records: &[DiagnosticsRecord]) -> std::io::Result<()> {
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}
