//! Group-relative policy-gradient training loop.
//!
//! Each step draws a batch of questions, samples a group of rollouts per
//! question, scores and filters them, normalizes rewards into group-relative
//! advantages, and ascends the score-function gradient. A KL penalty toward
//! a (periodically replaceable) frozen reference policy enters the loss with
//! a scheduled coefficient, and the maximum generation length follows a step
//! curriculum. Off-policy training reuses one rollout batch across several
//! sharded updates; on-policy is the single-shard special case.

use crate::dataset::Question;
use crate::filters::{self, FilterError, GroupBatch};
use crate::policy::{
    accumulate_grad_logprob, logprob, rollout_entropy_sum, sample, PolicyError, PolicyParams,
};
use crate::rewards::{self, RewardConfig, RewardError};
use crate::seed::{derive_seed, derive_seed_keyed, rng_from};
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Guard against division by zero in advantage normalization.
pub const ADVANTAGE_EPS: f64 = 1e-8;

#[derive(Debug, Error)]
pub enum TrainerError {
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("max-length schedule is empty")]
    EmptySchedule,
    #[error("step {step} outside schedule range 0..={total}")]
    StepOutOfRange { step: usize, total: usize },
    #[error("non-finite gradient at parameter {coordinate}")]
    NonFiniteGradient { coordinate: usize },
    #[error("invalid trainer config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Reward(#[from] RewardError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Filter(#[from] FilterError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KlKind {
    Zero,
    Fixed,
    Cosine,
}

/// KL-penalty coefficient schedule over training steps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KlSchedule {
    pub kind: KlKind,
    pub start: f64,
    pub end: f64,
    pub total_steps: usize,
}

impl KlSchedule {
    pub fn zero(total_steps: usize) -> Self {
        KlSchedule {
            kind: KlKind::Zero,
            start: 0.0,
            end: 0.0,
            total_steps,
        }
    }

    pub fn fixed(value: f64, total_steps: usize) -> Self {
        KlSchedule {
            kind: KlKind::Fixed,
            start: value,
            end: value,
            total_steps,
        }
    }

    /// Cosine decay from `start` to `end` over `total_steps`.
    pub fn cosine(start: f64, end: f64, total_steps: usize) -> Self {
        KlSchedule {
            kind: KlKind::Cosine,
            start,
            end,
            total_steps,
        }
    }
}

/// Coefficient value at a step. Cosine follows
/// `end + (start - end) * (1 + cos(pi * step / total)) / 2`.
pub fn kl_value(schedule: &KlSchedule, step: usize) -> Result<f64, TrainerError> {
    if step > schedule.total_steps {
        return Err(TrainerError::StepOutOfRange {
            step,
            total: schedule.total_steps,
        });
    }
    Ok(match schedule.kind {
        KlKind::Zero => 0.0,
        KlKind::Fixed => schedule.start,
        KlKind::Cosine => {
            let phase = std::f64::consts::PI * step as f64 / schedule.total_steps as f64;
            schedule.end + (schedule.start - schedule.end) * (1.0 + phase.cos()) / 2.0
        }
    })
}

/// Which masking strategies run on each rollout batch.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FiltersEnabled {
    #[serde(default)]
    pub qs: bool,
    #[serde(default)]
    pub rs: bool,
    #[serde(default)]
    pub orm: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainerConfig {
    /// Questions consumed per step.
    pub tbs: usize,
    /// Rollouts sampled per question.
    pub n_rollouts: usize,
    /// Rollout temperature, also used for training log-probabilities.
    pub temperature: f64,
    pub learning_rate: f64,
    /// Questions per gradient update. Equal to `tbs` means on-policy.
    pub mini_batch: usize,
    pub kl: KlSchedule,
    /// `(step, max_context_length)` pairs, sorted, starting at step 0.
    pub max_len_schedule: Vec<(usize, usize)>,
    pub filters: FiltersEnabled,
    pub reward: RewardConfig,
    pub ref_replace_every: Option<usize>,
    pub snapshot_every: Option<usize>,
    /// Optional entropy bonus coefficient; zero disables the term.
    pub entropy_bonus: f64,
    pub total_steps: usize,
    pub seed: u64,
}

impl TrainerConfig {
    pub fn validate(&self) -> Result<(), TrainerError> {
        if self.tbs == 0 || self.n_rollouts == 0 {
            return Err(TrainerError::InvalidConfig(
                "tbs and n_rollouts must be positive".into(),
            ));
        }
        if self.mini_batch == 0 || self.mini_batch > self.tbs {
            return Err(TrainerError::InvalidConfig(format!(
                "mini_batch must be in 1..=tbs, got {} with tbs {}",
                self.mini_batch, self.tbs
            )));
        }
        if !self.tbs.is_multiple_of(self.mini_batch) {
            return Err(TrainerError::InvalidConfig(format!(
                "mini_batch {} must divide tbs {}",
                self.mini_batch, self.tbs
            )));
        }
        if self.temperature <= 0.0 || self.temperature.is_nan() {
            return Err(TrainerError::InvalidConfig(
                "temperature must be positive".into(),
            ));
        }
        if self.max_len_schedule.is_empty() {
            return Err(TrainerError::EmptySchedule);
        }
        if self.max_len_schedule[0].0 != 0 {
            return Err(TrainerError::InvalidConfig(
                "max_len_schedule must start at step 0".into(),
            ));
        }
        if self.max_len_schedule.windows(2).any(|w| w[0].0 >= w[1].0) {
            return Err(TrainerError::InvalidConfig(
                "max_len_schedule must be sorted".into(),
            ));
        }
        if self.max_len_schedule.iter().any(|&(_, len)| len == 0) {
            return Err(TrainerError::InvalidConfig(
                "max lengths must be positive".into(),
            ));
        }
        if self.reward.mode == crate::rewards::RewardMode::Rrl {
            let longest = self
                .max_len_schedule
                .iter()
                .map(|&(_, len)| len)
                .max()
                .unwrap_or(0);
            if self.reward.l_max < longest {
                return Err(TrainerError::InvalidConfig(format!(
                    "length-reward denominator l_max {} is below the scheduled max length {longest}; \
                     truncated rollouts would overflow it",
                    self.reward.l_max
                )));
            }
        }
        Ok(())
    }
}

/// Step-function lookup: the largest schedule entry at or before `step`.
pub fn max_len_at(schedule: &[(usize, usize)], step: usize) -> Result<usize, TrainerError> {
    if schedule.is_empty() {
        return Err(TrainerError::EmptySchedule);
    }
    schedule
        .iter()
        .take_while(|&&(at, _)| at <= step)
        .last()
        .map(|&(_, len)| len)
        .ok_or(TrainerError::InvalidConfig(
            "schedule does not cover step 0".into(),
        ))
}

/// Per-step training diagnostics; one CSV row per step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepReport {
    pub step: usize,
    pub mean_training_reward: f64,
    pub mean_response_length: f64,
    pub completion_ratio: f64,
    pub accuracy_on_train_batch: f64,
    pub kl_coefficient_used: f64,
    pub entropy_estimate: f64,
}

impl StepReport {
    pub const CSV_HEADER: &'static str = "step,reward,length,completion_ratio,accuracy,kl,entropy";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            self.step,
            self.mean_training_reward,
            self.mean_response_length,
            self.completion_ratio,
            self.accuracy_on_train_batch,
            self.kl_coefficient_used,
            self.entropy_estimate
        )
    }

    pub fn from_csv_row(row: &str) -> Option<StepReport> {
        let fields: Vec<&str> = row.split(',').collect();
        if fields.len() != 7 {
            return None;
        }
        Some(StepReport {
            step: fields[0].parse().ok()?,
            mean_training_reward: fields[1].parse().ok()?,
            mean_response_length: fields[2].parse().ok()?,
            completion_ratio: fields[3].parse().ok()?,
            accuracy_on_train_batch: fields[4].parse().ok()?,
            kl_coefficient_used: fields[5].parse().ok()?,
            entropy_estimate: fields[6].parse().ok()?,
        })
    }

    pub fn is_finite(&self) -> bool {
        [
            self.mean_training_reward,
            self.mean_response_length,
            self.completion_ratio,
            self.accuracy_on_train_batch,
            self.kl_coefficient_used,
            self.entropy_estimate,
        ]
        .iter()
        .all(|v| v.is_finite())
    }
}

/// Sets group-relative advantages on unmasked rollouts:
/// `(reward - group mean) / (group std + eps)` with population std over the
/// unmasked subset. Masked rollouts keep advantage zero; a zero-variance
/// group gets all-zero advantages exactly.
pub fn group_advantages(mut group: GroupBatch) -> GroupBatch {
    let unmasked: Vec<usize> = (0..group.rollouts.len())
        .filter(|&i| group.training_mask[i])
        .collect();
    if unmasked.is_empty() {
        return group;
    }
    let rewards: Vec<f64> = unmasked
        .iter()
        .map(|&i| group.rollouts[i].breakdown().total)
        .collect();
    let first = rewards[0];
    if rewards.iter().all(|&r| r == first) {
        for &i in &unmasked {
            group.advantages[i] = 0.0;
        }
        return group;
    }
    let n = rewards.len() as f64;
    let mean = rewards.iter().sum::<f64>() / n;
    let variance = rewards.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / n;
    let std = variance.sqrt();
    for (&i, r) in unmasked.iter().zip(&rewards) {
        group.advantages[i] = (r - mean) / (std + ADVANTAGE_EPS);
    }
    group
}

/// Accumulates the mean update direction over unmasked rollouts:
/// `advantage * grad_logprob`, minus `kl_coef` times the score-function
/// gradient of the sampled KL proxy `mean(logprob - logprob_ref)`, plus an
/// optional entropy-bonus term. Returns a dense vector in the parameter
/// layout; all-masked batches yield a zero direction.
pub fn update_direction(
    params: &PolicyParams,
    reference: &PolicyParams,
    groups: &[GroupBatch],
    temperature: f64,
    kl_coef: f64,
    entropy_coef: f64,
) -> Result<Vec<f64>, TrainerError> {
    let mut direction = vec![0.0; params.flat_len()];
    let mut unmasked: Vec<(&crate::policy::Rollout, f64)> = Vec::new();
    for g in groups {
        for (i, r) in g.rollouts.iter().enumerate() {
            if g.training_mask[i] {
                unmasked.push((r, g.advantages[i]));
            }
        }
    }
    if unmasked.is_empty() {
        return Ok(direction);
    }
    let scale = 1.0 / unmasked.len() as f64;
    for (rollout, advantage) in unmasked {
        let mut weight = advantage;
        if kl_coef != 0.0 || entropy_coef != 0.0 {
            let lp = logprob(params, rollout, temperature);
            if kl_coef != 0.0 {
                let lp_ref = logprob(reference, rollout, temperature);
                weight -= kl_coef * (lp - lp_ref);
            }
            if entropy_coef != 0.0 {
                weight -= entropy_coef * (lp + 1.0);
            }
        }
        accumulate_grad_logprob(params, rollout, temperature, weight * scale, &mut direction);
    }
    if let Some(coordinate) = direction.iter().position(|v| !v.is_finite()) {
        return Err(TrainerError::NonFiniteGradient { coordinate });
    }
    Ok(direction)
}

/// One gradient update over the given groups plus the step diagnostics.
pub fn policy_gradient_step(
    params: &PolicyParams,
    reference: &PolicyParams,
    groups: &[GroupBatch],
    cfg: &TrainerConfig,
    step: usize,
) -> Result<(PolicyParams, StepReport), TrainerError> {
    let kl_coef = kl_value(&cfg.kl, step)?;
    let direction = update_direction(
        params,
        reference,
        groups,
        cfg.temperature,
        kl_coef,
        cfg.entropy_bonus,
    )?;
    let mut new_params = params.clone();
    new_params.add_scaled(&direction, cfg.learning_rate);
    let report = build_report(params, groups, cfg.temperature, step, kl_coef);
    Ok((new_params, report))
}

/// Step diagnostics over every rollout in the batch, masked or not,
/// evaluated under the sampling-time parameters.
fn build_report(
    params: &PolicyParams,
    groups: &[GroupBatch],
    temperature: f64,
    step: usize,
    kl_coef: f64,
) -> StepReport {
    let mut n = 0usize;
    let mut reward_sum = 0.0;
    let mut length_sum = 0.0;
    let mut correct = 0usize;
    let mut entropy_sum = 0.0;
    let mut token_steps = 0usize;
    for g in groups {
        for r in &g.rollouts {
            n += 1;
            reward_sum += r.breakdown().total;
            length_sum += r.token_len() as f64;
            if r.breakdown().correct {
                correct += 1;
            }
            entropy_sum += rollout_entropy_sum(params, r, temperature);
            token_steps += r.token_ids.len();
        }
    }
    let denom = n.max(1) as f64;
    StepReport {
        step,
        mean_training_reward: reward_sum / denom,
        mean_response_length: length_sum / denom,
        completion_ratio: filters::completion_ratio(groups),
        accuracy_on_train_batch: correct as f64 / denom,
        kl_coefficient_used: kl_coef,
        entropy_estimate: if token_steps == 0 {
            0.0
        } else {
            entropy_sum / token_steps as f64
        },
    }
}

/// Incremental training driver. Owns the policy, the frozen reference, and
/// the epoch sampling state; `run_step` advances one full RL step.
pub struct TrainingRun {
    cfg: TrainerConfig,
    dataset: Vec<Question>,
    params: PolicyParams,
    reference: PolicyParams,
    epoch_order: Vec<usize>,
    epoch_pos: usize,
    epoch_index: u64,
    step: usize,
}

impl TrainingRun {
    pub fn new(
        cfg: TrainerConfig,
        dataset: Vec<Question>,
        initial_params: PolicyParams,
    ) -> Result<Self, TrainerError> {
        let reference = initial_params.clone();
        Self::with_reference(cfg, dataset, initial_params, reference)
    }

    /// Starts from an explicit frozen reference distinct from the policy,
    /// as happens when resuming a run whose reference was replaced.
    pub fn with_reference(
        cfg: TrainerConfig,
        dataset: Vec<Question>,
        initial_params: PolicyParams,
        reference: PolicyParams,
    ) -> Result<Self, TrainerError> {
        cfg.validate()?;
        if dataset.is_empty() {
            return Err(TrainerError::EmptyDataset);
        }
        Ok(TrainingRun {
            cfg,
            dataset,
            params: initial_params,
            reference,
            epoch_order: Vec::new(),
            epoch_pos: 0,
            epoch_index: 0,
            step: 0,
        })
    }

    pub fn params(&self) -> &PolicyParams {
        &self.params
    }

    pub fn reference(&self) -> &PolicyParams {
        &self.reference
    }

    pub fn step_index(&self) -> usize {
        self.step
    }

    pub fn config(&self) -> &TrainerConfig {
        &self.cfg
    }

    /// Draws `tbs` questions without replacement within an epoch, reshuffling
    /// (seeded) whenever the epoch is exhausted.
    fn next_questions(&mut self) -> Vec<Question> {
        let mut out = Vec::with_capacity(self.cfg.tbs);
        while out.len() < self.cfg.tbs {
            if self.epoch_pos >= self.epoch_order.len() {
                let mut order: Vec<usize> = (0..self.dataset.len()).collect();
                let mut rng = rng_from(derive_seed(self.cfg.seed, "epoch", &[self.epoch_index]));
                order.shuffle(&mut rng);
                self.epoch_order = order;
                self.epoch_pos = 0;
                self.epoch_index += 1;
            }
            out.push(self.dataset[self.epoch_order[self.epoch_pos]].clone());
            self.epoch_pos += 1;
        }
        out
    }

    /// Samples, scores, filters, and normalizes one batch of groups without
    /// updating parameters. Exposed for diagnostics and tests.
    pub fn sample_groups(&mut self) -> Result<Vec<GroupBatch>, TrainerError> {
        let max_len = max_len_at(&self.cfg.max_len_schedule, self.step)?;
        let questions = self.next_questions();
        let step = self.step;
        let cfg = &self.cfg;
        let params = &self.params;
        let rollouts: Vec<Vec<crate::policy::Rollout>> = questions
            .par_iter()
            .enumerate()
            .map(|(position, q)| {
                (0..cfg.n_rollouts)
                    .map(|i| {
                        let seed = derive_seed_keyed(
                            cfg.seed,
                            "rollout",
                            &q.id,
                            &[step as u64, position as u64, i as u64],
                        );
                        sample(params, q, cfg.temperature, max_len, seed)
                    })
                    .collect::<Result<Vec<_>, _>>()
            })
            .collect::<Result<Vec<_>, _>>()?;
        let mut groups = Vec::with_capacity(questions.len());
        for (q, mut rs) in questions.into_iter().zip(rollouts) {
            for r in &mut rs {
                r.reward = Some(rewards::score(r, &q.truth, &cfg.reward)?);
            }
            let mut g = GroupBatch::new(q, rs)?;
            if cfg.filters.orm {
                g = filters::mask_overlength(g);
            }
            if cfg.filters.qs {
                g = filters::question_select(g);
            }
            if cfg.filters.rs {
                g = filters::response_select(g);
            }
            groups.push(group_advantages(g));
        }
        Ok(groups)
    }

    /// One full RL step: reference replacement when due, rollout batch,
    /// sharded gradient updates, and the step report.
    pub fn run_step(&mut self) -> Result<StepReport, TrainerError> {
        if let Some(every) = self.cfg.ref_replace_every {
            if every > 0 && self.step > 0 && self.step.is_multiple_of(every) {
                self.reference = self.params.clone();
            }
        }
        let groups = self.sample_groups()?;
        let kl_coef = kl_value(&self.cfg.kl, self.step)?;
        let report = build_report(
            &self.params,
            &groups,
            self.cfg.temperature,
            self.step,
            kl_coef,
        );
        for shard in groups.chunks(self.cfg.mini_batch) {
            let direction = update_direction(
                &self.params,
                &self.reference,
                shard,
                self.cfg.temperature,
                kl_coef,
                self.cfg.entropy_bonus,
            )?;
            self.params.add_scaled(&direction, self.cfg.learning_rate);
        }
        self.step += 1;
        Ok(report)
    }
}

/// Runs the configured number of steps and returns the final parameters
/// with one report per step.
pub fn run_training(
    cfg: TrainerConfig,
    dataset: Vec<Question>,
    initial_params: PolicyParams,
) -> Result<(PolicyParams, Vec<StepReport>), TrainerError> {
    let total = cfg.total_steps;
    let mut run = TrainingRun::new(cfg, dataset, initial_params)?;
    let mut reports = Vec::with_capacity(total);
    for _ in 0..total {
        reports.push(run.run_step()?);
    }
    Ok((run.params, reports))
}
