//! Reward functions over scored rollouts.
//!
//! Four modes: plain outcome reward, outcome gated by a format check, a
//! length-augmented reward (response length over max context length plus a
//! +1/-1 correctness term), and an action-augmented reward (capped keyword
//! count over the cap plus the same correctness term). In every mode a
//! correct response outranks any incorrect one: the auxiliary terms live in
//! [0, 1] while the correctness gap is 2.

use crate::policy::Rollout;
use crate::verifier::{check_format, response_is_correct, CanonicalAnswer, PromptTemplate};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum RewardError {
    #[error("response length {length} exceeds max context length {l_max}; truncation accounting is broken")]
    LengthAccounting { length: usize, l_max: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RewardMode {
    OutcomeOnly,
    OutcomeFormat,
    Rrl,
    Rra,
}

/// How a failed format check feeds into the reward: either it gates the
/// response to the incorrect value, or a passing check adds a bonus on top
/// of the outcome term.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FormatComposition {
    Gate,
    Additive { bonus: f64 },
}

pub const DEFAULT_ACTION_KEYWORDS: [&str; 5] =
    ["however", "but", "wait", "verify", "alternatively"];

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RewardConfig {
    pub mode: RewardMode,
    /// Maximum context window length, the denominator of the length term.
    pub l_max: usize,
    /// Cap on counted reasoning actions.
    pub a_max: usize,
    pub action_keywords: Vec<String>,
    pub format_required: bool,
    pub format_composition: FormatComposition,
    pub template: PromptTemplate,
    /// Reward values for (correct, incorrect) responses.
    pub correctness_values: (f64, f64),
}

impl RewardConfig {
    /// Plain outcome reward: 1 for a correct boxed answer, 0 otherwise.
    pub fn outcome(l_max: usize) -> Self {
        RewardConfig {
            mode: RewardMode::OutcomeOnly,
            l_max,
            a_max: 20,
            action_keywords: DEFAULT_ACTION_KEYWORDS
                .iter()
                .map(|s| s.to_string())
                .collect(),
            format_required: false,
            format_composition: FormatComposition::Gate,
            template: PromptTemplate::chat(),
            correctness_values: (1.0, 0.0),
        }
    }

    /// Outcome reward gated by the tag-structure format check.
    pub fn outcome_format(l_max: usize, template: PromptTemplate) -> Self {
        RewardConfig {
            mode: RewardMode::OutcomeFormat,
            format_required: true,
            template,
            ..Self::outcome(l_max)
        }
    }

    /// Length-augmented reward; correctness becomes +1/-1.
    pub fn rrl(l_max: usize) -> Self {
        RewardConfig {
            mode: RewardMode::Rrl,
            correctness_values: (1.0, -1.0),
            ..Self::outcome(l_max)
        }
    }

    /// Action-augmented reward; correctness becomes +1/-1.
    pub fn rra(l_max: usize, a_max: usize) -> Self {
        RewardConfig {
            mode: RewardMode::Rra,
            a_max,
            correctness_values: (1.0, -1.0),
            ..Self::outcome(l_max)
        }
    }

    fn format_gates(&self) -> bool {
        (self.format_required || self.mode == RewardMode::OutcomeFormat)
            && matches!(self.format_composition, FormatComposition::Gate)
    }

    fn format_bonus(&self) -> f64 {
        match self.format_composition {
            FormatComposition::Additive { bonus }
                if self.format_required || self.mode == RewardMode::OutcomeFormat =>
            {
                bonus
            }
            _ => 0.0,
        }
    }
}

/// All reward components for one response plus the composed total.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown {
    /// Final judged correctness, after any format gate.
    pub correct: bool,
    /// The correctness reward value actually used in the total.
    pub correctness: f64,
    pub format_ok: bool,
    pub length_term: f64,
    pub action_term: f64,
    pub total: f64,
}

/// Judges answer correctness and the format check, applying the gate.
fn judge(text: &str, truth: &CanonicalAnswer, cfg: &RewardConfig) -> (bool, bool) {
    let answer_ok = response_is_correct(text, truth);
    let format_ok = check_format(text, &cfg.template);
    let correct = if cfg.format_gates() {
        answer_ok && format_ok
    } else {
        answer_ok
    };
    (correct, format_ok)
}

/// Outcome (and optionally format-gated) reward.
pub fn score_outcome(
    response: &Rollout,
    truth: &CanonicalAnswer,
    cfg: &RewardConfig,
) -> RewardBreakdown {
    let (correct, format_ok) = judge(&response.text, truth, cfg);
    let correctness = if correct {
        cfg.correctness_values.0
    } else {
        cfg.correctness_values.1
    };
    let total = correctness + if format_ok { cfg.format_bonus() } else { 0.0 };
    RewardBreakdown {
        correct,
        correctness,
        format_ok,
        length_term: 0.0,
        action_term: 0.0,
        total,
    }
}

/// Length-augmented reward: `L_i / L_max` plus the +1/-1 correctness term.
pub fn score_rrl(
    response: &Rollout,
    truth: &CanonicalAnswer,
    cfg: &RewardConfig,
) -> Result<RewardBreakdown, RewardError> {
    let length = response.token_len();
    if length > cfg.l_max {
        return Err(RewardError::LengthAccounting {
            length,
            l_max: cfg.l_max,
        });
    }
    let (correct, format_ok) = judge(&response.text, truth, cfg);
    let correctness = if correct {
        cfg.correctness_values.0
    } else {
        cfg.correctness_values.1
    };
    let length_term = (length as f64 / cfg.l_max as f64).clamp(0.0, 1.0);
    Ok(RewardBreakdown {
        correct,
        correctness,
        format_ok,
        length_term,
        action_term: 0.0,
        total: length_term + correctness,
    })
}

/// Action-augmented reward: `min(A_i, A_max) / A_max` plus the +1/-1
/// correctness term.
pub fn score_rra(
    response: &Rollout,
    truth: &CanonicalAnswer,
    cfg: &RewardConfig,
) -> RewardBreakdown {
    let (correct, format_ok) = judge(&response.text, truth, cfg);
    let correctness = if correct {
        cfg.correctness_values.0
    } else {
        cfg.correctness_values.1
    };
    let actions = count_actions(&response.text, &cfg.action_keywords);
    let action_term = actions.min(cfg.a_max) as f64 / cfg.a_max as f64;
    RewardBreakdown {
        correct,
        correctness,
        format_ok,
        length_term: 0.0,
        action_term,
        total: action_term + correctness,
    }
}

/// Scores a response under the configured mode.
pub fn score(
    response: &Rollout,
    truth: &CanonicalAnswer,
    cfg: &RewardConfig,
) -> Result<RewardBreakdown, RewardError> {
    match cfg.mode {
        RewardMode::OutcomeOnly | RewardMode::OutcomeFormat => {
            Ok(score_outcome(response, truth, cfg))
        }
        RewardMode::Rrl => score_rrl(response, truth, cfg),
        RewardMode::Rra => Ok(score_rra(response, truth, cfg)),
    }
}

/// Case-insensitive whole-word keyword count with punctuation-delimited
/// tokenization. Repeated occurrences count; substring hits (`verification`
/// for `verify`) do not. Multi-word keywords match consecutive words.
pub fn count_actions(text: &str, keywords: &[String]) -> usize {
    let words: Vec<String> = tokenize_words(text);
    let mut count = 0;
    for kw in keywords {
        let kw_words: Vec<String> = tokenize_words(kw);
        if kw_words.is_empty() || kw_words.len() > words.len() {
            continue;
        }
        for start in 0..=(words.len() - kw_words.len()) {
            if words[start..start + kw_words.len()] == kw_words[..] {
                count += 1;
            }
        }
    }
    count
}

fn tokenize_words(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(|w| w.to_lowercase())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::verifier::parse_answer;

    fn truth(s: &str) -> CanonicalAnswer {
        parse_answer(s).unwrap()
    }

    fn text_rollout(text: &str, len: usize) -> Rollout {
        Rollout::from_text("q", text, len, false)
    }

    fn keywords() -> Vec<String> {
        DEFAULT_ACTION_KEYWORDS
            .iter()
            .map(|s| s.to_string())
            .collect()
    }

    #[test]
    fn outcome_examples() {
        let cfg = RewardConfig::outcome(1000);
        let t = truth("3");
        assert_eq!(
            score_outcome(&text_rollout("so \\boxed{3}", 4), &t, &cfg).total,
            1.0
        );
        assert_eq!(
            score_outcome(&text_rollout("no box", 2), &t, &cfg).total,
            0.0
        );
        assert_eq!(
            score_outcome(&text_rollout("\\boxed{2}", 3), &t, &cfg).total,
            0.0
        );
    }

    #[test]
    fn rrl_formula_values() {
        let cfg = RewardConfig::rrl(1000);
        let t = truth("3");
        let b = score_rrl(&text_rollout("\\boxed{3}", 500), &t, &cfg).unwrap();
        assert_eq!(b.total, 1.5);
        assert_eq!(b.length_term, 0.5);
        let b = score_rrl(&text_rollout("wrong", 0), &t, &cfg).unwrap();
        assert_eq!(b.total, -1.0);
    }

    #[test]
    fn rrl_rejects_overlength_accounting() {
        let cfg = RewardConfig::rrl(10);
        let err = score_rrl(&text_rollout("x", 11), &truth("1"), &cfg);
        assert!(matches!(
            err,
            Err(RewardError::LengthAccounting {
                length: 11,
                l_max: 10
            })
        ));
    }

    #[test]
    fn rra_formula_values() {
        let cfg = RewardConfig::rra(1000, 20);
        let t = truth("3");
        let many = format!("{} \\boxed{{3}}", "wait ".repeat(25));
        let b = score_rra(&text_rollout(&many, 60), &t, &cfg);
        assert_eq!(b.action_term, 1.0);
        assert_eq!(b.total, 2.0);
        let some = "wait ".repeat(10);
        let b = score_rra(&text_rollout(&some, 20), &t, &cfg);
        assert_eq!(b.total, 0.5 - 1.0);
    }

    #[test]
    fn action_counting_examples() {
        assert_eq!(count_actions("wait, but verify", &keywords()), 3);
        assert_eq!(count_actions("Wait... wait", &keywords()), 2);
        assert_eq!(count_actions("verification", &keywords()), 0);
        assert_eq!(count_actions("", &keywords()), 0);
        assert_eq!(count_actions("However, HOWEVER!", &keywords()), 2);
    }

    #[test]
    fn multi_word_keywords_match_phrases() {
        let kws = vec!["double check".to_string()];
        assert_eq!(
            count_actions("let me double check this. double-check", &kws),
            2
        );
        assert_eq!(count_actions("double trouble check", &kws), 0);
    }

    #[test]
    fn format_gate_forces_incorrect_value() {
        let t = truth("3");
        let cfg = RewardConfig::outcome_format(1000, PromptTemplate::short());
        let good = "<think>x</think><answer>\\boxed{3}</answer>";
        let bad_format = "\\boxed{3}";
        assert_eq!(score_outcome(&text_rollout(good, 8), &t, &cfg).total, 1.0);
        let b = score_outcome(&text_rollout(bad_format, 3), &t, &cfg);
        assert_eq!(b.total, 0.0);
        assert!(!b.correct);
        assert!(!b.format_ok);
    }

    #[test]
    fn format_bonus_is_additive_when_configured() {
        let t = truth("3");
        let mut cfg = RewardConfig::outcome_format(1000, PromptTemplate::short());
        cfg.format_composition = FormatComposition::Additive { bonus: 0.5 };
        let bad_format = "\\boxed{3}";
        let b = score_outcome(&text_rollout(bad_format, 3), &t, &cfg);
        // Correct answer keeps its value; only the bonus is withheld.
        assert!(b.correct);
        assert_eq!(b.total, 1.0);
        let good = "<think>x</think><answer>\\boxed{3}</answer>";
        assert_eq!(score_outcome(&text_rollout(good, 8), &t, &cfg).total, 1.5);
    }

    #[test]
    fn correct_always_outranks_incorrect_on_length_grid() {
        let l_max = 1000;
        let cfg = RewardConfig::rrl(l_max);
        let t = truth("3");
        let mut correct_totals = Vec::new();
        let mut incorrect_totals = Vec::new();
        for len in (0..=l_max).step_by(100) {
            correct_totals.push(
                score_rrl(&text_rollout("\\boxed{3}", len), &t, &cfg)
                    .unwrap()
                    .total,
            );
            incorrect_totals.push(
                score_rrl(&text_rollout("nope", len), &t, &cfg)
                    .unwrap()
                    .total,
            );
        }
        for c in &correct_totals {
            for w in &incorrect_totals {
                assert!(c > w, "correct {c} must outrank incorrect {w}");
            }
        }
    }

    #[test]
    fn rrl_total_is_monotone_in_length() {
        let cfg = RewardConfig::rrl(64);
        let t = truth("3");
        let mut prev = f64::NEG_INFINITY;
        for len in 0..=64 {
            let total = score_rrl(&text_rollout("nope", len), &t, &cfg)
                .unwrap()
                .total;
            assert!(total > prev);
            prev = total;
        }
    }

    #[test]
    fn rra_cap_engages_exactly_at_a_max() {
        let cfg = RewardConfig::rra(1000, 5);
        let t = truth("3");
        let at_cap = "wait ".repeat(5);
        let over_cap = "wait ".repeat(17);
        let a = score_rra(&text_rollout(&at_cap, 10), &t, &cfg).total;
        let b = score_rra(&text_rollout(&over_cap, 34), &t, &cfg).total;
        assert_eq!(a, b);
    }

    #[test]
    fn totals_stay_in_documented_ranges() {
        let t = truth("3");
        let outcome_cfg = RewardConfig::outcome(100);
        let rrl_cfg = RewardConfig::rrl(100);
        let rra_cfg = RewardConfig::rra(100, 4);
        for text in [
            "\\boxed{3}",
            "wait but \\boxed{2}",
            "verify wait wait however but",
        ] {
            for len in [0, 50, 100] {
                let r = text_rollout(text, len);
                let o = score_outcome(&r, &t, &outcome_cfg).total;
                assert!(o == 0.0 || o == 1.0);
                let l = score_rrl(&r, &t, &rrl_cfg).unwrap().total;
                assert!((-1.0..=2.0).contains(&l));
                let a = score_rra(&r, &t, &rra_cfg).total;
                assert!((-1.0..=2.0).contains(&a));
            }
        }
    }

    #[test]
    fn dispatch_matches_mode() {
        let t = truth("3");
        let r = text_rollout("\\boxed{3}", 50);
        assert_eq!(
            score(&r, &t, &RewardConfig::outcome(100)).unwrap().total,
            1.0
        );
        assert_eq!(score(&r, &t, &RewardConfig::rrl(100)).unwrap().total, 1.5);
        assert_eq!(
            score(&r, &t, &RewardConfig::rra(100, 20)).unwrap().total,
            1.0
        );
    }
}
