//! Rollout selection and masking strategies.
//!
//! Each strategy inspects a scored rollout group and can only turn training
//! masks off, never on, so applying any subset of filters in any order
//! yields the conjunction of their individual masks. Question selection
//! drops whole groups whose mean correct length does not exceed the mean
//! incorrect length; response selection keeps only the longest-correct /
//! shortest-incorrect pair; overlength masking drops truncated rollouts.

use crate::dataset::Question;
use crate::policy::Rollout;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum FilterError {
    #[error("rollout {index} in group `{group}` has no reward breakdown")]
    Unscored { group: String, index: usize },
}

/// A question with its `n` scored rollouts, per-rollout training masks, and
/// per-rollout advantages. Masked-out rollouts always carry advantage zero.
#[derive(Debug, Clone)]
pub struct GroupBatch {
    pub question: Question,
    pub rollouts: Vec<Rollout>,
    pub training_mask: Vec<bool>,
    pub advantages: Vec<f64>,
}

impl GroupBatch {
    /// Builds a group; every rollout must already be scored.
    pub fn new(question: Question, rollouts: Vec<Rollout>) -> Result<Self, FilterError> {
        for (index, r) in rollouts.iter().enumerate() {
            if r.reward.is_none() {
                return Err(FilterError::Unscored {
                    group: question.id.clone(),
                    index,
                });
            }
        }
        let n = rollouts.len();
        Ok(GroupBatch {
            question,
            rollouts,
            training_mask: vec![true; n],
            advantages: vec![0.0; n],
        })
    }

    /// Mean token length of correct rollouts; absent when none are correct.
    pub fn mean_correct_length(&self) -> Option<f64> {
        mean_length(&self.rollouts, true)
    }

    /// Mean token length of incorrect rollouts; absent when none are
    /// incorrect.
    pub fn mean_incorrect_length(&self) -> Option<f64> {
        mean_length(&self.rollouts, false)
    }

    pub fn unmasked_count(&self) -> usize {
        self.training_mask.iter().filter(|&&m| m).count()
    }

    fn mask_out(&mut self, index: usize) {
        self.training_mask[index] = false;
        self.advantages[index] = 0.0;
    }

    fn mask_all(&mut self) {
        for i in 0..self.training_mask.len() {
            self.mask_out(i);
        }
    }
}

fn mean_length(rollouts: &[Rollout], correct: bool) -> Option<f64> {
    let lengths: Vec<f64> = rollouts
        .iter()
        .filter(|r| r.breakdown().correct == correct)
        .map(|r| r.token_len() as f64)
        .collect();
    if lengths.is_empty() {
        None
    } else {
        Some(lengths.iter().sum::<f64>() / lengths.len() as f64)
    }
}

/// Question selection: the group trains only when the mean correct length
/// strictly exceeds the mean incorrect length. Degenerate groups (all
/// correct or all incorrect) are dropped, since the comparison is undefined.
pub fn question_select(mut group: GroupBatch) -> GroupBatch {
    let keep = match (group.mean_correct_length(), group.mean_incorrect_length()) {
        (Some(lc), Some(lw)) => lc > lw,
        _ => false,
    };
    if !keep {
        group.mask_all();
    }
    group
}

/// Response selection: when the longest correct rollout is longer than the
/// shortest incorrect one, keep exactly that pair and drop the rest;
/// otherwise drop the whole group. The pair's advantage signs come out of
/// group normalization, since the correct member's reward is always higher.
pub fn response_select(mut group: GroupBatch) -> GroupBatch {
    let mut longest_correct: Option<(usize, usize)> = None;
    let mut shortest_incorrect: Option<(usize, usize)> = None;
    for (i, r) in group.rollouts.iter().enumerate() {
        let len = r.token_len();
        if r.breakdown().correct {
            if longest_correct.is_none_or(|(_, best)| len > best) {
                longest_correct = Some((i, len));
            }
        } else if shortest_incorrect.is_none_or(|(_, best)| len < best) {
            shortest_incorrect = Some((i, len));
        }
    }
    match (longest_correct, shortest_incorrect) {
        (Some((ci, clen)), Some((wi, wlen))) if clen > wlen => {
            for i in 0..group.training_mask.len() {
                if i != ci && i != wi {
                    group.mask_out(i);
                }
            }
        }
        _ => group.mask_all(),
    }
    group
}

/// Overlength response masking: truncated rollouts neither contribute
/// gradient nor enter the group's advantage statistics.
pub fn mask_overlength(mut group: GroupBatch) -> GroupBatch {
    for i in 0..group.rollouts.len() {
        if group.rollouts[i].truncated {
            group.mask_out(i);
        }
    }
    group
}

/// Fraction of rollouts across all groups that completed before the context
/// limit. An empty batch counts as fully completed.
pub fn completion_ratio(groups: &[GroupBatch]) -> f64 {
    let mut total = 0usize;
    let mut completed = 0usize;
    for g in groups {
        for r in &g.rollouts {
            total += 1;
            if !r.truncated {
                completed += 1;
            }
        }
    }
    if total == 0 {
        1.0
    } else {
        completed as f64 / total as f64
    }
}
