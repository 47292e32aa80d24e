use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

use crate::objective::{objective_gradient, objective_value, GroupBatch, ToyPolicy};
use crate::retrieval::RetrievalEnv;
use crate::reward::{tool_parse_failure_rate, QaExample};

use super::group::{run_group, GroupOutcome};
use super::rollout::{derive_seed, RolloutPolicy, StochasticPolicy, DECISION_VOCAB};
use super::{HarnessError, RunConfig};

/// Per-iteration training statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationSummary {
    pub iteration: usize,
    pub mean_reward: f64,
    pub mean_f1: f64,
    pub em_rate: f64,
    pub compliance_rate: f64,
    pub tpfr: f64,
    pub mean_searches: f64,
    /// Segment count per compliant trajectory → number of trajectories.
    pub segment_histogram: BTreeMap<usize, usize>,
    pub segments: usize,
    pub clamped_segments: usize,
    pub clamp_rate: f64,
    pub buffer_tokens: usize,
    pub objective_before: f64,
    pub objective_after: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingRun {
    pub summaries: Vec<IterationSummary>,
    pub policy: ToyPolicy,
    /// Groups of the final iteration.
    pub last_groups: Vec<GroupOutcome>,
}

/// Runs every question of `batch` as one group in parallel; results keep
/// the input order.
pub fn collect_groups(
    policy: &RolloutPolicy,
    env: &RetrievalEnv,
    batch: &[(u64, &QaExample)],
    seed: u64,
    cfg: &RunConfig,
) -> Result<Vec<GroupOutcome>, HarnessError> {
    batch
        .par_iter()
        .map(|(gid, ex)| run_group(policy, env, ex, *gid, seed, cfg))
        .collect()
}

pub fn summarize(iteration: usize, groups: &[GroupOutcome]) -> Result<IterationSummary, HarnessError> {
    let all: Vec<_> = groups.iter().flat_map(|g| &g.rollouts).collect();
    let n = all.len().max(1) as f64;
    let mut hist = BTreeMap::new();
    let (mut segments, mut clamped) = (0, 0);
    for r in &all {
        if r.reward.format_compliant {
            *hist.entry(r.segments.len()).or_insert(0) += 1;
        }
        segments += r.calibrated.segments.len();
        clamped += r.calibrated.clamped_count();
    }
    Ok(IterationSummary {
        iteration,
        mean_reward: all.iter().map(|r| r.reward.reward).sum::<f64>() / n,
        mean_f1: all.iter().map(|r| r.reward.f1).sum::<f64>() / n,
        em_rate: all.iter().map(|r| f64::from(r.reward.em)).sum::<f64>() / n,
        compliance_rate: all.iter().filter(|r| r.reward.format_compliant).count() as f64 / n,
        tpfr: tool_parse_failure_rate(all.iter().map(|r| &r.rollout.trajectory))?,
        mean_searches: all
            .iter()
            .map(|r| r.rollout.trajectory.count_searches() as f64)
            .sum::<f64>()
            / n,
        segment_histogram: hist,
        segments,
        clamped_segments: clamped,
        clamp_rate: if segments == 0 {
            0.0
        } else {
            clamped as f64 / segments as f64
        },
        buffer_tokens: groups.iter().map(|g| g.batch.token_count()).sum(),
        objective_before: 0.0,
        objective_after: 0.0,
    })
}

/// GRPO training of the stochastic toy policy. The reference policy is the
/// initial (uniform) one. Iteration `t` samples with the policy as it
/// stood before the update, then takes `cfg.epochs` gradient-ascent steps.
pub fn run_training(
    cfg: &RunConfig,
    env: &RetrievalEnv,
    dataset: &[QaExample],
) -> Result<TrainingRun, HarnessError> {
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(HarnessError::EmptyDataset);
    }
    let reference = ToyPolicy::uniform(DECISION_VOCAB);
    let mut policy = reference.clone();
    let obj = cfg.objective();
    let mut summaries = Vec::with_capacity(cfg.iterations);
    let mut last_groups = Vec::new();
    for it in 0..cfg.iterations {
        let indices: Vec<usize> = if cfg.batch_size == 0 || cfg.batch_size >= dataset.len() {
            (0..dataset.len()).collect()
        } else {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(&[cfg.seed, it as u64, 0xba7c]));
            let mut v = sample(&mut rng, dataset.len(), cfg.batch_size).into_vec();
            v.sort_unstable();
            v
        };
        let batch: Vec<(u64, &QaExample)> = indices.iter().map(|&i| (i as u64, &dataset[i])).collect();
        let sampler = RolloutPolicy::Stochastic(StochasticPolicy {
            policy: policy.clone(),
            decode_temperature: cfg.rollout_temperature,
            max_pairs: cfg.max_pairs,
            max_steps: cfg.max_steps,
        });
        let groups = collect_groups(&sampler, env, &batch, derive_seed(&[cfg.seed, it as u64]), cfg)?;
        let batches: Vec<GroupBatch> = groups.iter().map(|g| g.batch.clone()).collect();

        let mut summary = summarize(it, &groups)?;
        summary.objective_before = objective_value(&policy, &reference, &batches, &obj)?;
        for _ in 0..cfg.epochs {
            let grad = objective_gradient(&policy, &reference, &batches, &obj)?;
            policy = policy.ascent_step(&grad, cfg.learning_rate)?;
        }
        summary.objective_after = objective_value(&policy, &reference, &batches, &obj)?;
        summaries.push(summary);
        last_groups = groups;
    }
    Ok(TrainingRun {
        summaries,
        policy,
        last_groups,
    })
}

/// Means of every full window of `w` consecutive values.
pub fn moving_average(values: &[f64], w: usize) -> Vec<f64> {
    values
        .windows(w.max(1))
        .map(|win| win.iter().sum::<f64>() / win.len() as f64)
        .collect()
}
