//! Rule-based answer verification.
//!
//! Extracts the final `\boxed{...}` region from a response, parses it into
//! an exact rational value, and compares it against ground truth. All
//! comparisons are exact integer arithmetic; no floating point is involved
//! anywhere, so `0.5`, `1/2`, and `\frac{2}{4}` are all the same answer.

use num_bigint::BigInt;
use num_integer::Integer;
use serde::{Deserialize, Serialize};
use std::fmt;

/// The shape the answer was written in. Equality ignores this and compares
/// exact rational values only.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AnswerKind {
    Integer,
    Rational,
    Decimal,
}

/// A ground-truth or extracted answer in canonical form.
///
/// The rational value is stored fully reduced with a positive denominator.
/// Decimal answers additionally keep their literal text so they can be
/// printed back exactly, but the stored value is the exact conversion.
#[derive(Debug, Clone)]
pub struct CanonicalAnswer {
    kind: AnswerKind,
    numerator: BigInt,
    denominator: BigInt,
    decimal_repr: Option<String>,
}

impl CanonicalAnswer {
    /// Builds an integer answer.
    pub fn integer<T: Into<BigInt>>(value: T) -> Self {
        CanonicalAnswer {
            kind: AnswerKind::Integer,
            numerator: value.into(),
            denominator: BigInt::from(1),
            decimal_repr: None,
        }
    }

    /// Builds a fraction answer; returns `None` when the denominator is zero.
    /// The result is reduced and sign-normalized; `4/2` collapses to the
    /// integer kind.
    pub fn fraction<T: Into<BigInt>, U: Into<BigInt>>(num: T, den: U) -> Option<Self> {
        let num = num.into();
        let den = den.into();
        if den == BigInt::from(0) {
            return None;
        }
        let (num, den) = reduce(num, den);
        if den == BigInt::from(1) {
            Some(CanonicalAnswer {
                kind: AnswerKind::Integer,
                numerator: num,
                denominator: den,
                decimal_repr: None,
            })
        } else {
            Some(CanonicalAnswer {
                kind: AnswerKind::Rational,
                numerator: num,
                denominator: den,
                decimal_repr: None,
            })
        }
    }

    pub fn kind(&self) -> AnswerKind {
        self.kind
    }

    pub fn numerator(&self) -> &BigInt {
        &self.numerator
    }

    pub fn denominator(&self) -> &BigInt {
        &self.denominator
    }
}

/// Reduces `num/den` to lowest terms with a positive denominator.
fn reduce(num: BigInt, den: BigInt) -> (BigInt, BigInt) {
    debug_assert!(den != BigInt::from(0));
    let (num, den) = if den < BigInt::from(0) {
        (-num, -den)
    } else {
        (num, den)
    };
    let g = num.gcd(&den);
    if g == BigInt::from(0) {
        // num == 0: canonical zero is 0/1.
        (BigInt::from(0), BigInt::from(1))
    } else {
        (num / &g, den / &g)
    }
}

impl PartialEq for CanonicalAnswer {
    fn eq(&self, other: &Self) -> bool {
        // Exact value equality; both sides are stored reduced.
        self.numerator == other.numerator && self.denominator == other.denominator
    }
}

impl Eq for CanonicalAnswer {}

impl fmt::Display for CanonicalAnswer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind {
            AnswerKind::Integer => write!(f, "{}", self.numerator),
            AnswerKind::Rational => write!(f, "{}/{}", self.numerator, self.denominator),
            AnswerKind::Decimal => match &self.decimal_repr {
                Some(repr) => write!(f, "{repr}"),
                None => write!(f, "{}/{}", self.numerator, self.denominator),
            },
        }
    }
}

impl Serialize for CanonicalAnswer {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for CanonicalAnswer {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let raw = String::deserialize(deserializer)?;
        parse_answer(&raw)
            .ok_or_else(|| serde::de::Error::custom(format!("unparseable answer `{raw}`")))
    }
}

/// Result of scanning a response for its final boxed answer.
#[derive(Debug, Clone, PartialEq)]
pub struct ExtractionResult {
    pub found: bool,
    pub raw_text: String,
    pub answer: Option<CanonicalAnswer>,
}

impl ExtractionResult {
    fn not_found() -> Self {
        ExtractionResult {
            found: false,
            raw_text: String::new(),
            answer: None,
        }
    }
}

const BOX_OPEN: &str = "\\boxed{";

/// Returns the contents of the last brace-balanced `\boxed{...}` region.
///
/// Nested braces are tracked, so `\boxed{\frac{1}{2}}` yields the whole
/// fraction. Regions whose braces never balance are skipped; if no region
/// balances, `found` is false.
pub fn extract_boxed(response_text: &str) -> ExtractionResult {
    let bytes = response_text.as_bytes();
    let mut last_region: Option<(usize, usize)> = None;
    let mut search_from = 0;
    while let Some(rel) = find_sub(bytes, BOX_OPEN.as_bytes(), search_from) {
        let content_start = rel + BOX_OPEN.len();
        if let Some(content_end) = balanced_end(bytes, content_start) {
            last_region = Some((content_start, content_end));
        }
        search_from = rel + 1;
    }
    match last_region {
        Some((start, end)) => {
            // Brace positions are ASCII bytes, so the slice boundaries are
            // valid char boundaries.
            let raw = response_text[start..end].to_string();
            let answer = parse_answer(&raw);
            ExtractionResult {
                found: true,
                raw_text: raw,
                answer,
            }
        }
        None => ExtractionResult::not_found(),
    }
}

/// Byte offset of the end of the balanced region opened just before `start`
/// (depth 1 entering), or `None` if braces never balance.
fn balanced_end(bytes: &[u8], start: usize) -> Option<usize> {
    let mut depth = 1usize;
    for (i, &b) in bytes.iter().enumerate().skip(start) {
        match b {
            b'{' => depth += 1,
            b'}' => {
                depth -= 1;
                if depth == 0 {
                    return Some(i);
                }
            }
            _ => {}
        }
    }
    None
}

fn find_sub(haystack: &[u8], needle: &[u8], from: usize) -> Option<usize> {
    if from >= haystack.len() || needle.is_empty() {
        return None;
    }
    haystack[from..]
        .windows(needle.len())
        .position(|w| w == needle)
        .map(|p| p + from)
}

/// Parses boxed contents into a canonical answer.
///
/// The accepted grammar is deliberately small: optionally-signed integers,
/// decimals, `a/b` fractions, and `\frac{a}{b}` fractions. Surrounding
/// whitespace, `$` delimiters, and trailing punctuation are stripped first.
/// Anything else (including division by zero) yields `None`.
pub fn parse_answer(raw_text: &str) -> Option<CanonicalAnswer> {
    let mut s = raw_text.trim();
    while s.starts_with('$') || s.ends_with('$') {
        s = s.trim_start_matches('$').trim_end_matches('$').trim();
    }
    s = s.trim_end_matches(['.', ',', ';', ':', '!', '?']).trim();
    if s.is_empty() {
        return None;
    }
    if let Some(ans) = parse_latex_fraction(s) {
        return Some(ans);
    }
    if let Some((num, den)) = s.split_once('/') {
        let num = parse_integer(num.trim())?;
        let den = parse_integer(den.trim())?;
        return CanonicalAnswer::fraction(num, den);
    }
    if s.contains('.') {
        return parse_decimal(s);
    }
    parse_integer(s).map(CanonicalAnswer::integer)
}

fn parse_integer(s: &str) -> Option<BigInt> {
    let (sign, digits) = split_sign(s)?;
    if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    let value = BigInt::parse_bytes(digits.as_bytes(), 10)?;
    Some(if sign { -value } else { value })
}

fn split_sign(s: &str) -> Option<(bool, &str)> {
    if let Some(rest) = s.strip_prefix('-') {
        Some((true, rest))
    } else if let Some(rest) = s.strip_prefix('+') {
        Some((false, rest))
    } else {
        Some((false, s))
    }
}

fn parse_decimal(s: &str) -> Option<CanonicalAnswer> {
    let (negative, body) = split_sign(s)?;
    let (int_part, frac_part) = body.split_once('.')?;
    if int_part.is_empty() && frac_part.is_empty() {
        return None;
    }
    if !int_part.bytes().all(|b| b.is_ascii_digit())
        || !frac_part.bytes().all(|b| b.is_ascii_digit())
    {
        return None;
    }
    let digits = format!("{int_part}{frac_part}");
    let mut num = BigInt::parse_bytes(digits.as_bytes(), 10)?;
    if negative {
        num = -num;
    }
    let den = BigInt::from(10).pow(frac_part.len() as u32);
    let (num, den) = reduce(num, den);
    Some(CanonicalAnswer {
        kind: AnswerKind::Decimal,
        numerator: num,
        denominator: den,
        decimal_repr: Some(s.to_string()),
    })
}

fn parse_latex_fraction(s: &str) -> Option<CanonicalAnswer> {
    let rest = s.strip_prefix("\\frac")?;
    let (num_raw, rest) = read_braced(rest.trim_start())?;
    let (den_raw, rest) = read_braced(rest.trim_start())?;
    if !rest.trim().is_empty() {
        return None;
    }
    let num = parse_integer(num_raw.trim())?;
    let den = parse_integer(den_raw.trim())?;
    CanonicalAnswer::fraction(num, den)
}

/// Reads one `{...}` group (balanced) from the front of `s`.
fn read_braced(s: &str) -> Option<(&str, &str)> {
    let rest = s.strip_prefix('{')?;
    let end = balanced_end(rest.as_bytes(), 0)?;
    Some((&rest[..end], &rest[end + 1..]))
}

/// Exact equality of two canonical answers.
pub fn answers_equal(a: &CanonicalAnswer, b: &CanonicalAnswer) -> bool {
    a == b
}

/// Convenience: extract, parse, and compare a response against ground truth.
pub fn response_is_correct(response_text: &str, truth: &CanonicalAnswer) -> bool {
    match extract_boxed(response_text).answer {
        Some(ans) => answers_equal(&ans, truth),
        None => false,
    }
}

/// A training/evaluation prompt shape: instruction text plus the tag pairs
/// a well-formed response must contain.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PromptTemplate {
    pub name: String,
    /// Instruction body; `{QUESTION}` is replaced at render time.
    pub body: String,
    /// Tag names whose `<tag>...</tag>` pairs must each appear exactly once,
    /// in this order, without nesting or overlap.
    pub required_tags: Vec<String>,
}

const SHORT_PROMPT: &str = "A conversation between User and Assistant. The user asks a question, and the Assistant solves it. The assistant first thinks about the reasoning process in the mind and then provides the user with the answer. The reasoning process and answer are enclosed within <think> </think> and <answer> </answer> tags, respectively, i.e., <think> reasoning process here </think> <answer> answer here </answer>.\nThe assistant shows the reasoning process in <think> </think> tags, and returns the final answer in <answer> </answer> tags, for example <answer> $\\frac{1}{2}$ </answer>.\nUser: {QUESTION}\nAssistant:\n<think>";

const LONG_PROMPT: &str = "A conversation between User and Assistant. The User asks a question, and the Assistant solves it. The Assistant first engages in an internal reasoning process, akin to a stream of consciousness, before providing the User with the answer. The reasoning process and answer are enclosed within `<think></think>' and `<answer></answer>' tags, respectively. For example:\n\n```\n<think>\nreasoning process here\n</think>\n<answer>\nanswer here\n</answer>\n```\n\nThe reasoning process includes detailed considerations such as analyzing questions, summarizing relevant findings, brainstorming new ideas, verifying the accuracy of current steps, refining any errors, and revisiting previous steps. During this process, the Assistant uses casual, genuine phrases such as: \"Hmm\", \"Wait\", \"Alternatively\", \"double check\", \"I wonder...\", \"But\", \"rethink\", etc., to make the reasoning process coherent, clear, and logically sound, effectively simulating human cognitive processes.\n\nThe Assistant shows the reasoning process within `<think></think>' tags, and ONLY return the FINAL ANSWER within `<answer></answer>' tags. For example: `<answer> $\\frac{1}{2}$ </answer>'.\n\nUser: {QUESTION}\nAssistant:\n<think>\n";

const CHAT_PROMPT: &str = "<|begin_of_sentence|><|User|>{QUESTION}<|Assistant|>";

impl PromptTemplate {
    /// Minimal instruction with the think/answer tag requirement.
    pub fn short() -> Self {
        PromptTemplate {
            name: "short".to_string(),
            body: SHORT_PROMPT.to_string(),
            required_tags: vec!["think".to_string(), "answer".to_string()],
        }
    }

    /// Detailed instruction describing the reasoning process and suggested
    /// phrasing; same think/answer tag requirement as the short form.
    pub fn long() -> Self {
        PromptTemplate {
            name: "long".to_string(),
            body: LONG_PROMPT.to_string(),
            required_tags: vec!["think".to_string(), "answer".to_string()],
        }
    }

    /// Chat-template-only prompting: no instruction text, no required tags;
    /// answers are read from the final boxed region alone.
    pub fn chat() -> Self {
        PromptTemplate {
            name: "chat".to_string(),
            body: CHAT_PROMPT.to_string(),
            required_tags: Vec::new(),
        }
    }

    pub fn by_name(name: &str) -> Option<Self> {
        match name {
            "short" => Some(Self::short()),
            "long" => Some(Self::long()),
            "chat" => Some(Self::chat()),
            _ => None,
        }
    }

    pub fn render(&self, question: &str) -> String {
        self.body.replace("{QUESTION}", question)
    }
}

/// True iff every required tag pair appears exactly once, in order, and the
/// pairs do not nest or overlap.
pub fn check_format(response_text: &str, template: &PromptTemplate) -> bool {
    let mut last_end = 0usize;
    for tag in &template.required_tags {
        let open = format!("<{tag}>");
        let close = format!("</{tag}>");
        if count_occurrences(response_text, &open) != 1
            || count_occurrences(response_text, &close) != 1
        {
            return false;
        }
        let open_at = response_text.find(&open).expect("counted above");
        let close_at = response_text.find(&close).expect("counted above");
        if open_at < last_end || close_at < open_at + open.len() {
            return false;
        }
        last_end = close_at + close.len();
    }
    true
}

fn count_occurrences(haystack: &str, needle: &str) -> usize {
    let mut count = 0;
    let mut from = 0;
    while let Some(at) = haystack[from..].find(needle) {
        count += 1;
        from += at + needle.len();
    }
    count
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parsed(s: &str) -> CanonicalAnswer {
        parse_answer(s).unwrap_or_else(|| panic!("`{s}` should parse"))
    }

    #[test]
    fn extracts_simple_box() {
        let r = extract_boxed("the answer is \\boxed{3}");
        assert!(r.found);
        assert_eq!(r.raw_text, "3");
        assert_eq!(r.answer, Some(CanonicalAnswer::integer(3)));
    }

    #[test]
    fn no_box_yields_not_found() {
        let r = extract_boxed("no box here");
        assert!(!r.found);
        assert!(r.raw_text.is_empty());
        assert!(r.answer.is_none());
    }

    #[test]
    fn last_box_wins() {
        let r = extract_boxed("\\boxed{\\frac{1}{2}} then \\boxed{7}");
        assert_eq!(r.raw_text, "7");
    }

    #[test]
    fn nested_braces_balance() {
        let r = extract_boxed("\\boxed{\\frac{1}{2}}");
        assert_eq!(r.raw_text, "\\frac{1}{2}");
        assert_eq!(r.answer, Some(parsed("1/2")));
    }

    #[test]
    fn unbalanced_final_box_falls_back_to_earlier() {
        let r = extract_boxed("\\boxed{1} and \\boxed{2");
        assert!(r.found);
        assert_eq!(r.raw_text, "1");
    }

    #[test]
    fn never_balancing_is_not_found() {
        assert!(!extract_boxed("\\boxed{{{1}").found);
    }

    #[test]
    fn parses_latex_fraction() {
        let a = parsed("\\frac{1}{2}");
        assert_eq!(a.kind(), AnswerKind::Rational);
        assert_eq!(a, parsed("1/2"));
    }

    #[test]
    fn decimal_equals_fraction() {
        assert!(answers_equal(&parsed("-0.50"), &parsed("-1/2")));
        assert!(answers_equal(&parsed("0.5"), &parsed("\\frac{1}{2}")));
    }

    #[test]
    fn division_by_zero_is_absent() {
        assert!(parse_answer("3/0").is_none());
        assert!(parse_answer("\\frac{1}{0}").is_none());
    }

    #[test]
    fn reduction_happens_at_parse_time() {
        assert_eq!(parsed("2/4"), parsed("1/2"));
        assert_eq!(parsed("4/2"), CanonicalAnswer::integer(2));
        assert_eq!(parsed("4/2").kind(), AnswerKind::Integer);
    }

    #[test]
    fn distinct_integers_differ() {
        assert!(!answers_equal(&parsed("3"), &parsed("2")));
    }

    #[test]
    fn strips_dollars_and_punctuation() {
        assert_eq!(parsed("$\\frac{1}{2}$"), parsed("1/2"));
        assert_eq!(parsed(" 42. "), CanonicalAnswer::integer(42));
        assert_eq!(parsed("-7,"), CanonicalAnswer::integer(-7));
    }

    #[test]
    fn rejects_non_grammar_input() {
        for bad in [
            "x+1",
            "",
            "1/2/3",
            "\\sqrt{2}",
            "1e5",
            "--3",
            "3 4",
            "1.2.3",
        ] {
            assert!(parse_answer(bad).is_none(), "`{bad}` should not parse");
        }
    }

    #[test]
    fn negative_denominator_normalizes() {
        assert_eq!(parsed("1/-2"), parsed("-1/2"));
        assert_eq!(parsed("-1/-2"), parsed("1/2"));
    }

    #[test]
    fn huge_integers_parse_exactly() {
        let a = parsed("123456789012345678901234567890123456789");
        let b = parsed("123456789012345678901234567890123456789");
        assert!(answers_equal(&a, &b));
    }

    #[test]
    fn format_accepts_well_formed_response() {
        let t = PromptTemplate::short();
        assert!(check_format("<think>x</think><answer>3</answer>", &t));
    }

    #[test]
    fn format_rejects_nesting() {
        let t = PromptTemplate::short();
        assert!(!check_format("<think>x<answer>3</answer></think>", &t));
    }

    #[test]
    fn format_rejects_missing_pair() {
        let t = PromptTemplate::short();
        assert!(!check_format("<think>x</think>", &t));
    }

    #[test]
    fn format_rejects_duplicates_and_reversals() {
        let t = PromptTemplate::short();
        assert!(!check_format(
            "<think>a</think><think>b</think><answer>1</answer>",
            &t
        ));
        assert!(!check_format("<answer>1</answer><think>a</think>", &t));
        assert!(!check_format("</think>x<think><answer>1</answer>", &t));
    }

    #[test]
    fn chat_template_has_no_format_requirement() {
        assert!(check_format("anything at all", &PromptTemplate::chat()));
    }

    #[test]
    fn template_render_substitutes_question() {
        let t = PromptTemplate::chat();
        assert_eq!(
            t.render("1 + 1 = ?"),
            "<|begin_of_sentence|><|User|>1 + 1 = ?<|Assistant|>"
        );
    }

    #[test]
    fn display_round_trips_through_parse() {
        for s in ["3", "-17", "1/2", "-3/7", "0.25", "-0.50"] {
            let a = parsed(s);
            let b = parsed(&a.to_string());
            assert!(answers_equal(&a, &b), "round trip failed for `{s}`");
        }
    }
}
