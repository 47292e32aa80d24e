use serde::{Deserialize, Serialize};

use crate::advantage::{calibrate, group_normalize_with, CalibratedAdvantages, DiagnosticsRecord};
use crate::objective::{GroupBatch, RolloutTokens, TokenRecord};
use crate::protocol::{segment_trajectory, Segment};
use crate::retrieval::RetrievalEnv;
use crate::reward::{gated_reward, QaExample, RewardRecord};

use super::rollout::{derive_seed, run_rollout, Rollout, RolloutPolicy};
use super::{HarnessError, RunConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutResult {
    pub rollout_id: u64,
    pub rollout: Rollout,
    pub reward: RewardRecord,
    /// Empty for non-compliant trajectories.
    pub segments: Vec<Segment>,
    pub calibrated: CalibratedAdvantages,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupOutcome {
    pub group_id: u64,
    pub question_id: String,
    pub advantages: Vec<f64>,
    pub rollouts: Vec<RolloutResult>,
    pub batch: GroupBatch,
}

impl GroupOutcome {
    pub fn rewards(&self) -> impl Iterator<Item = f64> + '_ {
        self.rollouts.iter().map(|r| r.reward.reward)
    }

    pub fn diagnostics(&self) -> Vec<DiagnosticsRecord> {
        self.rollouts
            .iter()
            .flat_map(|r| {
                let id = format!("{}#{}", self.question_id, r.rollout_id);
                r.calibrated
                    .segments
                    .iter()
                    .map(move |d| DiagnosticsRecord::from_segment(&id, d))
            })
            .collect()
    }
}

/// Runs `cfg.group_size` rollouts for one question, scores them, and turns
/// them into calibrated token records. Rollout `i` draws from
/// `derive_seed([seed, group_id, i])`.
///
/// Non-compliant rollouts stay in the batch with their group advantage
/// spread uniformly over their tokens.
pub fn run_group(
    policy: &RolloutPolicy,
    env: &RetrievalEnv,
    example: &QaExample,
    group_id: u64,
    seed: u64,
    cfg: &RunConfig,
) -> Result<GroupOutcome, HarnessError> {
    let gold = example.gold()?;
    let first = gold.aliases()[0].clone();
    let mut rollouts = Vec::with_capacity(cfg.group_size);
    let mut rewards = Vec::with_capacity(cfg.group_size);
    for i in 0..cfg.group_size {
        let s = derive_seed(&[seed, group_id, i as u64]);
        let r = run_rollout(policy, env, &example.question, &first, i, s);
        let rec = gated_reward(&r.trajectory, &gold);
        rewards.push(rec.reward);
        rollouts.push((r, rec));
    }
    let advantages = group_normalize_with(&rewards, cfg.pcar.eps, cfg.pcar.std_kind)?;

    let mut results = Vec::with_capacity(rollouts.len());
    let mut batch = GroupBatch {
        group_id,
        rollouts: Vec::new(),
    };
    for (i, ((rollout, reward), &a)) in rollouts.into_iter().zip(&advantages).enumerate() {
        let segments = if reward.format_compliant {
            segment_trajectory(&rollout.trajectory).unwrap_or_default()
        } else {
            Vec::new()
        };
        let used: &[Segment] = if cfg.pcar_enabled { &segments } else { &[] };
        let calibrated = calibrate(a, used, rollout.trajectory.token_count, &cfg.pcar)?;
        let tokens = rollout
            .policy_tokens
            .iter()
            .map(|t| TokenRecord {
                group_id,
                rollout_id: i as u64,
                position: t.position,
                context_key: t.context_key,
                token_id: t.token_id,
                logprob_old: t.logprob_old,
                advantage: calibrated.tokens[t.position],
            })
            .collect();
        batch.rollouts.push(RolloutTokens {
            rollout_id: i as u64,
            tokens,
        });
        results.push(RolloutResult {
            rollout_id: i as u64,
            rollout,
            reward,
            segments,
            calibrated,
        });
    }
    Ok(GroupOutcome {
        group_id,
        question_id: example.id.clone(),
        advantages,
        rollouts: results,
        batch,
    })
}
