//! Property tests for the library's core invariants: verifier round-trips
//! and equivalence, reward shapes, filter mask composition, and softmax
//! health.

use deskrl::filters::{mask_overlength, question_select, response_select, GroupBatch};
use deskrl::policy::{row_entropy, row_probs, PolicyParams, Rollout, Vocab, EOS_TOKEN};
use deskrl::rewards::{score_rra, score_rrl, RewardBreakdown, RewardConfig};
use deskrl::verifier::{answers_equal, extract_boxed, parse_answer};
use proptest::prelude::*;

fn tiny_vocab() -> Vocab {
    Vocab::new(
        ["0", "1", "2", "+", "\\boxed{", "}", "wait", EOS_TOKEN]
            .iter()
            .map(|s| s.to_string())
            .collect(),
    )
    .unwrap()
}

proptest! {
    /// Pretty-printing any canonical rational into a box and re-extracting
    /// it yields an equal answer.
    #[test]
    fn boxed_round_trip_is_identity(num in -1_000_000i64..=1_000_000, den in 1i64..=1_000_000) {
        let original = deskrl::verifier::CanonicalAnswer::fraction(num, den).unwrap();
        let text = format!("first \\boxed{{0}} then the real one \\boxed{{{original}}}");
        let extracted = extract_boxed(&text);
        prop_assert!(extracted.found);
        let answer = extracted.answer.expect("canonical display must re-parse");
        prop_assert!(answers_equal(&answer, &original));
    }

    /// Equality on parsed answers is reflexive, symmetric, and transitive.
    #[test]
    fn answer_equality_is_an_equivalence(
        a in -50i64..=50, b in 1i64..=12, scale in 1i64..=9,
    ) {
        let x = parse_answer(&format!("{a}/{b}")).unwrap();
        let y = parse_answer(&format!("{}/{}", a * scale, b * scale)).unwrap();
        let z = parse_answer(&format!("\\frac{{{a}}}{{{b}}}")).unwrap();
        prop_assert!(answers_equal(&x, &x));
        prop_assert!(answers_equal(&x, &y) == answers_equal(&y, &x));
        if answers_equal(&x, &y) && answers_equal(&y, &z) {
            prop_assert!(answers_equal(&x, &z));
        }
    }

    /// Arbitrary byte soup never panics the extractor or the parser.
    #[test]
    fn extraction_survives_fuzz(bytes in proptest::collection::vec(any::<u8>(), 0..128)) {
        let text = String::from_utf8_lossy(&bytes);
        let result = extract_boxed(&text);
        if result.found {
            let _ = parse_answer(&result.raw_text);
        } else {
            prop_assert!(result.raw_text.is_empty());
        }
    }

    /// Length reward is strictly monotone in length at fixed correctness,
    /// and totals stay in the documented range.
    #[test]
    fn rrl_monotone_on_random_grids(l_max in 10usize..=500, correct in any::<bool>()) {
        let cfg = RewardConfig::rrl(l_max);
        let truth = parse_answer("3").unwrap();
        let text = if correct { "\\boxed{3}" } else { "\\boxed{4}" };
        let mut prev = f64::NEG_INFINITY;
        for len in (0..=l_max).step_by((l_max / 10).max(1)) {
            let r = Rollout::from_text("q", text, len, false);
            let total = score_rrl(&r, &truth, &cfg).unwrap().total;
            prop_assert!(total > prev);
            prop_assert!((-1.0..=2.0).contains(&total));
            prev = total;
        }
    }

    /// Action reward is capped: any count at or past the cap scores alike.
    #[test]
    fn rra_cap_holds(a_max in 1usize..=40, over in 0usize..=60) {
        let cfg = RewardConfig::rra(1000, a_max);
        let truth = parse_answer("3").unwrap();
        let at_cap = "wait ".repeat(a_max);
        let past_cap = "wait ".repeat(a_max + over);
        let a = score_rra(&Rollout::from_text("q", &at_cap, 10, false), &truth, &cfg);
        let b = score_rra(&Rollout::from_text("q", &past_cap, 10, false), &truth, &cfg);
        prop_assert_eq!(a.total, b.total);
    }

    /// Softmax rows are distributions at any temperature and entropy never
    /// drops when temperature rises.
    #[test]
    fn softmax_rows_are_healthy(
        logits in proptest::collection::vec(-6.0f64..6.0, 2..24),
        temperature in 0.05f64..4.0,
    ) {
        let p = row_probs(&logits, temperature);
        prop_assert!(p.iter().all(|&x| (0.0..=1.0).contains(&x)));
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let hotter = row_entropy(&logits, temperature * 1.5);
        let cooler = row_entropy(&logits, temperature);
        prop_assert!(hotter >= cooler - 1e-12);
    }
}

fn scored_rollout(len: usize, correct: bool, truncated: bool) -> Rollout {
    let mut r = Rollout::from_text(
        "q",
        if correct { "\\boxed{1}" } else { "x" },
        len,
        truncated,
    );
    r.reward = Some(RewardBreakdown {
        correct,
        correctness: if correct { 1.0 } else { 0.0 },
        format_ok: true,
        length_term: 0.0,
        action_term: 0.0,
        total: if correct { 1.0 } else { 0.0 },
    });
    r
}

proptest! {
    /// Filters only clear masks, so any application order produces the
    /// conjunction of the individual filter masks.
    #[test]
    fn filter_masks_compose_conjunctively(
        specs in proptest::collection::vec((0usize..40, any::<bool>(), any::<bool>()), 1..10),
        order in 0usize..6,
    ) {
        let question = deskrl::dataset::Question {
            id: "q".to_string(),
            prompt: "1 + 1 = ?".to_string(),
            truth: parse_answer("2").unwrap(),
            source_tag: "prop".to_string(),
            difficulty: None,
        };
        let rollouts: Vec<Rollout> =
            specs.iter().map(|&(len, c, t)| scored_rollout(len, c, t)).collect();
        let base = GroupBatch::new(question, rollouts).unwrap();
        let qs = question_select(base.clone()).training_mask;
        let rs = response_select(base.clone()).training_mask;
        let orm = mask_overlength(base.clone()).training_mask;
        let combined = match order {
            0 => mask_overlength(question_select(response_select(base))),
            1 => mask_overlength(response_select(question_select(base))),
            2 => question_select(mask_overlength(response_select(base))),
            3 => question_select(response_select(mask_overlength(base))),
            4 => response_select(mask_overlength(question_select(base))),
            _ => response_select(question_select(mask_overlength(base))),
        };
        for i in 0..specs.len() {
            prop_assert_eq!(combined.training_mask[i], qs[i] && rs[i] && orm[i]);
            if !combined.training_mask[i] {
                prop_assert_eq!(combined.advantages[i], 0.0);
            }
        }
    }

    /// Sampling determinism: one seed, one trajectory.
    #[test]
    fn sampling_is_seed_deterministic(seed in any::<u64>(), temperature in 0.3f64..2.0) {
        let mut params = PolicyParams::new(tiny_vocab(), 1);
        params.randomize(1.0, 7);
        let q = deskrl::dataset::Question {
            id: "q".to_string(),
            prompt: "1 + 2 = ?".to_string(),
            truth: parse_answer("3").unwrap(),
            source_tag: "prop".to_string(),
            difficulty: None,
        };
        let a = deskrl::policy::sample(&params, &q, temperature, 16, seed).unwrap();
        let b = deskrl::policy::sample(&params, &q, temperature, 16, seed).unwrap();
        prop_assert_eq!(a.token_ids, b.token_ids);
        prop_assert_eq!(a.total_logprob, b.total_logprob);
    }
}
