//! Clipped surrogate with KL regularization and its analytic gradient for
//! the tabular [`ToyPolicy`].
//!
//! For a group of `G` rollouts the objective is
//! `(1/G) * sum_i sum_t [ min(rho * A, clip(rho, 1-eps, 1+eps) * A) - beta * KL_t ]`
//! with `rho = pi(y|h) / pi_old(y|h)` and `KL_t` the exact categorical
//! divergence from the reference policy at the token's context. Groups are
//! averaged.

mod policy;

use serde::{Deserialize, Serialize};
use std::io::{BufRead, Write};
use thiserror::Error;

pub use policy::{ContextKey, HistoryHasher, PolicyGradient, ToyPolicy};

#[derive(Debug, Error)]
pub enum ObjectiveError {
    #[error("vocabulary must be non-empty")]
    EmptyVocabulary,
    #[error("temperature must be positive and finite, got {0}")]
    InvalidTemperature(f64),
    #[error("row has {got} entries, vocabulary has {expected}")]
    RowWidth { expected: usize, got: usize },
    #[error("token {token} outside vocabulary of {vocab}")]
    TokenOutOfRange { token: u32, vocab: usize },
    #[error("non-finite value")]
    NonFinite,
    #[error("batch is empty")]
    EmptyBatch,
    #[error("policies have different vocabularies")]
    VocabularyMismatch,
    #[error("line {line}: {source}")]
    Json {
        line: usize,
        source: serde_json::Error,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveConfig {
    pub clip_eps: f64,
    pub kl_beta: f64,
    /// Divide each rollout's token sum by its length.
    #[serde(default)]
    pub length_normalize: bool,
}

impl Default for ObjectiveConfig {
    fn default() -> Self {
        Self {
            clip_eps: 0.2,
            kl_beta: 0.001,
            length_normalize: false,
        }
    }
}

/// One policy-generated token of the training buffer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TokenRecord {
    pub group_id: u64,
    pub rollout_id: u64,
    pub position: usize,
    pub context_key: ContextKey,
    pub token_id: u32,
    pub logprob_old: f64,
    pub advantage: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutTokens {
    pub rollout_id: u64,
    pub tokens: Vec<TokenRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupBatch {
    pub group_id: u64,
    pub rollouts: Vec<RolloutTokens>,
}

impl GroupBatch {
    pub fn token_count(&self) -> usize {
        self.rollouts.iter().map(|r| r.tokens.len()).sum()
    }

    pub fn records(&self) -> impl Iterator<Item = &TokenRecord> {
        self.rollouts.iter().flat_map(|r| &r.tokens)
    }
}

/// Regroups flat records by `(group_id, rollout_id)`, keeping first-seen
/// order of groups and rollouts.
pub fn group_records(records: &[TokenRecord]) -> Vec<GroupBatch> {
    let mut groups: Vec<GroupBatch> = Vec::new();
    for r in records {
        let g = match groups.iter().position(|g| g.group_id == r.group_id) {
            Some(i) => &mut groups[i],
            None => {
                groups.push(GroupBatch {
                    group_id: r.group_id,
                    rollouts: Vec::new(),
                });
                groups.last_mut().expect("just pushed")
            }
        };
        match g.rollouts.iter_mut().find(|x| x.rollout_id == r.rollout_id) {
            Some(ro) => ro.tokens.push(*r),
            None => g.rollouts.push(RolloutTokens {
                rollout_id: r.rollout_id,
                tokens: vec![*r],
            }),
        }
    }
    groups
}

pub fn write_token_batch<'a, W, I>(mut w: W, records: I) -> std::io::Result<()>
where
    W: Write,
    I: IntoIterator<Item = &'a TokenRecord>,
{
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

/// Reads a JSON-lines token batch. Rejects non-finite log-probabilities or
/// advantages.
pub fn read_token_batch<R: BufRead>(reader: R) -> Result<Vec<TokenRecord>, ObjectiveError> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let r: TokenRecord = serde_json::from_str(&line).map_err(|source| ObjectiveError::Json {
            line: i + 1,
            source,
        })?;
        if !r.logprob_old.is_finite() || !r.advantage.is_finite() {
            return Err(ObjectiveError::NonFinite);
        }
        out.push(r);
    }
    Ok(out)
}

/// `min(rho * A, clip(rho, 1-eps, 1+eps) * A)`.
pub fn clip_term(rho: f64, advantage: f64, eps: f64) -> f64 {
    let clipped = rho.clamp(1.0 - eps, 1.0 + eps);
    (rho * advantage).min(clipped * advantage)
}

/// Whether the unclipped branch is the active one, i.e. the surrogate
/// depends on `rho` at this point. At the band edges the unclipped branch
/// is taken.
pub fn clip_active(rho: f64, advantage: f64, eps: f64) -> bool {
    if advantage > 0.0 {
        rho <= 1.0 + eps
    } else if advantage < 0.0 {
        rho >= 1.0 - eps
    } else {
        false
    }
}

/// Exact `KL(pi(.|ctx) || ref(.|ctx))`.
pub fn kl_term(policy: &ToyPolicy, reference: &ToyPolicy, ctx: ContextKey) -> f64 {
    let lp = policy.log_probs(ctx);
    let lq = reference.log_probs(ctx);
    lp.iter()
        .zip(&lq)
        .map(|(p, q)| {
            let pe = p.exp();
            if pe == 0.0 {
                0.0
            } else {
                pe * (p - q)
            }
        })
        .sum::<f64>()
        .max(0.0)
}

fn check(policy: &ToyPolicy, reference: &ToyPolicy, groups: &[GroupBatch]) -> Result<(), ObjectiveError> {
    if policy.vocab_size() != reference.vocab_size() {
        return Err(ObjectiveError::VocabularyMismatch);
    }
    if groups.is_empty() || groups.iter().all(|g| g.rollouts.is_empty()) {
        return Err(ObjectiveError::EmptyBatch);
    }
    for r in groups.iter().flat_map(GroupBatch::records) {
        if r.token_id as usize >= policy.vocab_size() {
            return Err(ObjectiveError::TokenOutOfRange {
                token: r.token_id,
                vocab: policy.vocab_size(),
            });
        }
        if !r.logprob_old.is_finite() || !r.advantage.is_finite() {
            return Err(ObjectiveError::NonFinite);
        }
    }
    Ok(())
}

fn rollout_weight(group_size: usize, len: usize, cfg: &ObjectiveConfig) -> f64 {
    let mut w = 1.0 / group_size as f64;
    if cfg.length_normalize && len > 0 {
        w /= len as f64;
    }
    w
}

/// Objective value, averaged over groups. Summation order is fixed.
pub fn objective_value(
    policy: &ToyPolicy,
    reference: &ToyPolicy,
    groups: &[GroupBatch],
    cfg: &ObjectiveConfig,
) -> Result<f64, ObjectiveError> {
    check(policy, reference, groups)?;
    let groups: Vec<&GroupBatch> = groups.iter().filter(|g| !g.rollouts.is_empty()).collect();
    let mut total = 0.0;
    for g in &groups {
        let mut gsum = 0.0;
        for ro in &g.rollouts {
            let w = rollout_weight(g.rollouts.len(), ro.tokens.len(), cfg);
            let mut rsum = 0.0;
            for t in &ro.tokens {
                let lp = policy.log_prob(t.context_key, t.token_id)?;
                let rho = (lp - t.logprob_old).exp();
                rsum += clip_term(rho, t.advantage, cfg.clip_eps)
                    - cfg.kl_beta * kl_term(policy, reference, t.context_key);
            }
            gsum += w * rsum;
        }
        total += gsum;
    }
    Ok(total / groups.len() as f64)
}

/// Analytic gradient of [`objective_value`] with respect to the logits.
pub fn objective_gradient(
    policy: &ToyPolicy,
    reference: &ToyPolicy,
    groups: &[GroupBatch],
    cfg: &ObjectiveConfig,
) -> Result<PolicyGradient, ObjectiveError> {
    check(policy, reference, groups)?;
    let groups: Vec<&GroupBatch> = groups.iter().filter(|g| !g.rollouts.is_empty()).collect();
    let n_groups = groups.len() as f64;
    let v = policy.vocab_size();
    let inv_t = 1.0 / policy.temperature();
    let mut grad = PolicyGradient::default();
    for g in &groups {
        for ro in &g.rollouts {
            let w = rollout_weight(g.rollouts.len(), ro.tokens.len(), cfg) / n_groups;
            for t in &ro.tokens {
                let lps = policy.log_probs(t.context_key);
                let probs: Vec<f64> = lps.iter().map(|l| l.exp()).collect();
                let y = t.token_id as usize;
                let rho = (lps[y] - t.logprob_old).exp();
                let row = grad.row_mut(t.context_key, v);
                if clip_active(rho, t.advantage, cfg.clip_eps) {
                    // d(rho * A)/dz_j = rho * A * (1[j=y] - p_j) / T
                    let c = w * rho * t.advantage * inv_t;
                    for (j, p) in probs.iter().enumerate() {
                        row[j] += c * (f64::from(u8::from(j == y)) - p);
                    }
                }
                if cfg.kl_beta != 0.0 {
                    // dKL/dz_j = p_j * ((log p_j - log q_j) - KL) / T
                    let lq = reference.log_probs(t.context_key);
                    let kl: f64 = probs
                        .iter()
                        .zip(lps.iter().zip(&lq))
                        .map(|(p, (lp, lq))| p * (lp - lq))
                        .sum();
                    let c = -w * cfg.kl_beta * inv_t;
                    for j in 0..v {
                        row[j] += c * probs[j] * ((lps[j] - lq[j]) - kl);
                    }
                }
            }
        }
    }
    Ok(grad)
}

/// `theta + step * gradient`.
pub fn ascent_step(
    policy: &ToyPolicy,
    grad: &PolicyGradient,
    step: f64,
) -> Result<ToyPolicy, ObjectiveError> {
    policy.ascent_step(grad, step)
}
