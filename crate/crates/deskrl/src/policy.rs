//! Tiny autoregressive softmax policy with analytic gradients.
//!
//! The policy conditions each next-token distribution on a fixed-length
//! window of preceding tokens (order 1 = bigram). Logits live in a dense
//! table of shape `V^order x V` with a fixed flat layout, so score-function
//! gradients are exact closed-form expressions and every coordinate can be
//! checked against finite differences. An optional per-position bias on the
//! end-of-sequence logit gives the policy a length knob.
//!
//! A question conditions generation through its operand digits, which are
//! injected as the initial context window.

use crate::dataset::{PolicySampler, Question};
use crate::rewards::RewardBreakdown;
use crate::seed::rng_from;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;
use thiserror::Error;

pub const EOS_TOKEN: &str = "<eos>";

#[derive(Debug, Error)]
pub enum PolicyError {
    #[error("invalid vocabulary: {0}")]
    InvalidVocab(String),
    #[error("non-finite logit in row {row} while sampling")]
    NonFiniteLogits { row: usize },
    #[error("snapshot shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("snapshot parse error: {0}")]
    Json(String),
}

/// An ordered token list with dense ids `0..V-1` and exactly one
/// end-of-sequence token.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct Vocab {
    tokens: Vec<String>,
    eos: usize,
}

impl TryFrom<Vec<String>> for Vocab {
    type Error = PolicyError;
    fn try_from(tokens: Vec<String>) -> Result<Self, PolicyError> {
        Vocab::new(tokens)
    }
}

impl From<Vocab> for Vec<String> {
    fn from(v: Vocab) -> Vec<String> {
        v.tokens
    }
}

impl Vocab {
    pub fn new(tokens: Vec<String>) -> Result<Self, PolicyError> {
        if tokens.is_empty() {
            return Err(PolicyError::InvalidVocab("empty token list".into()));
        }
        let mut seen = std::collections::HashSet::new();
        for t in &tokens {
            if !seen.insert(t.clone()) {
                return Err(PolicyError::InvalidVocab(format!("duplicate token `{t}`")));
            }
        }
        let eos_positions: Vec<usize> = tokens
            .iter()
            .enumerate()
            .filter(|(_, t)| t.as_str() == EOS_TOKEN)
            .map(|(i, _)| i)
            .collect();
        if eos_positions.len() != 1 {
            return Err(PolicyError::InvalidVocab(format!(
                "expected exactly one `{EOS_TOKEN}`, found {}",
                eos_positions.len()
            )));
        }
        Ok(Vocab {
            eos: eos_positions[0],
            tokens,
        })
    }

    /// Digits, arithmetic symbols, boxed-answer delimiters, reasoning
    /// keywords, filler words, and the end-of-sequence marker.
    pub fn standard() -> Self {
        let mut tokens: Vec<String> = (0..=9).map(|d| d.to_string()).collect();
        for t in [
            "+",
            "-",
            "=",
            "\\boxed{",
            "}",
            "wait",
            "verify",
            "but",
            "however",
            "alternatively",
            "hmm",
            "so",
            "then",
            "thus",
            EOS_TOKEN,
        ] {
            tokens.push(t.to_string());
        }
        Vocab::new(tokens).expect("standard vocab is valid")
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn eos(&self) -> usize {
        self.eos
    }

    pub fn token(&self, id: usize) -> &str {
        &self.tokens[id]
    }

    pub fn id_of(&self, token: &str) -> Option<usize> {
        self.tokens.iter().position(|t| t == token)
    }

    /// Initial context for a question: its digit characters in prompt order.
    pub fn prompt_context(&self, prompt: &str) -> Vec<usize> {
        prompt
            .chars()
            .filter(|c| c.is_ascii_digit())
            .filter_map(|c| self.id_of(&c.to_string()))
            .collect()
    }

    /// Joins generated tokens back into text. A space separates two tokens
    /// only when both sides are word-like and they are not both digits, so
    /// `\boxed{` `1` `2` `}` renders as `\boxed{12}` while `wait` `wait`
    /// renders as `wait wait`.
    pub fn detokenize(&self, token_ids: &[usize]) -> String {
        let mut out = String::new();
        let mut prev: Option<&str> = None;
        for &id in token_ids {
            if id == self.eos {
                continue;
            }
            let tok = self.token(id);
            if let Some(p) = prev {
                let p_last = p.chars().last().unwrap_or(' ');
                let t_first = tok.chars().next().unwrap_or(' ');
                let both_digits = p_last.is_ascii_digit() && t_first.is_ascii_digit();
                if p_last.is_alphanumeric() && t_first.is_alphanumeric() && !both_digits {
                    out.push(' ');
                }
            }
            out.push_str(tok);
            prev = Some(tok);
        }
        out
    }
}

/// Per-position additive bias on the end-of-sequence logit. Position `p`
/// falls in bucket `min(p / bucket_len, buckets - 1)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LengthBias {
    pub bucket_len: usize,
    pub biases: Vec<f64>,
}

impl LengthBias {
    fn bucket(&self, pos: usize) -> usize {
        (pos / self.bucket_len).min(self.biases.len() - 1)
    }
}

/// The full parameter set of the policy: a dense `V^order x V` logit table
/// plus the optional length bias, in one enumerable flat layout
/// (table row-major, then bias buckets).
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyParams {
    vocab: Vocab,
    context_order: usize,
    logits: Vec<f64>,
    length_bias: Option<LengthBias>,
}

impl PolicyParams {
    /// Zero-initialized table: every row is the uniform distribution.
    /// Panics when the table would not fit in memory; use
    /// [`PolicyParams::table_entries`] to validate sizes first.
    pub fn new(vocab: Vocab, context_order: usize) -> Self {
        let entries = Self::table_entries(&vocab, context_order)
            .expect("logit table too large for this vocabulary and context order");
        let logits = vec![0.0; entries];
        PolicyParams {
            vocab,
            context_order,
            logits,
            length_bias: None,
        }
    }

    /// Number of logit-table entries for a vocabulary and context order,
    /// or `None` when the order is zero or the table exceeds 2^24 entries.
    pub fn table_entries(vocab: &Vocab, context_order: usize) -> Option<usize> {
        if context_order == 0 {
            return None;
        }
        let rows = vocab
            .len()
            .checked_pow(u32::try_from(context_order).ok()?)?;
        let entries = rows.checked_mul(vocab.len())?;
        if entries > 1 << 24 {
            None
        } else {
            Some(entries)
        }
    }

    pub fn with_length_bias(mut self, bucket_len: usize, buckets: usize) -> Self {
        assert!(bucket_len >= 1 && buckets >= 1);
        self.length_bias = Some(LengthBias {
            bucket_len,
            biases: vec![0.0; buckets],
        });
        self
    }

    /// Randomizes every parameter uniformly in `[-scale, scale]`.
    pub fn randomize(&mut self, scale: f64, seed: u64) {
        let mut rng = rng_from(seed);
        for v in &mut self.logits {
            *v = rng.gen_range(-scale..=scale);
        }
        if let Some(lb) = &mut self.length_bias {
            for v in &mut lb.biases {
                *v = rng.gen_range(-scale..=scale);
            }
        }
    }

    pub fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    pub fn context_order(&self) -> usize {
        self.context_order
    }

    pub fn rows(&self) -> usize {
        self.logits.len() / self.vocab.len()
    }

    /// Total number of parameters in the flat layout.
    pub fn flat_len(&self) -> usize {
        self.logits.len() + self.length_bias.as_ref().map_or(0, |lb| lb.biases.len())
    }

    pub fn get_flat(&self, ix: usize) -> f64 {
        if ix < self.logits.len() {
            self.logits[ix]
        } else {
            self.length_bias
                .as_ref()
                .expect("index in bias range")
                .biases[ix - self.logits.len()]
        }
    }

    pub fn set_flat(&mut self, ix: usize, value: f64) {
        if ix < self.logits.len() {
            self.logits[ix] = value;
        } else {
            let base = self.logits.len();
            self.length_bias
                .as_mut()
                .expect("index in bias range")
                .biases[ix - base] = value;
        }
    }

    /// Adds `scale * delta` coordinate-wise. Used by the trainer's update.
    pub fn add_scaled(&mut self, delta: &[f64], scale: f64) {
        assert_eq!(delta.len(), self.flat_len());
        for (i, d) in delta.iter().enumerate().take(self.logits.len()) {
            self.logits[i] += scale * d;
        }
        if let Some(lb) = &mut self.length_bias {
            let base = self.logits.len();
            for (k, b) in lb.biases.iter_mut().enumerate() {
                *b += scale * delta[base + k];
            }
        }
    }

    pub fn all_finite(&self) -> bool {
        self.logits.iter().all(|v| v.is_finite())
            && self
                .length_bias
                .as_ref()
                .is_none_or(|lb| lb.biases.iter().all(|v| v.is_finite()))
    }

    /// Encodes a context window (exactly `order` token ids, most recent
    /// last) into a row index. The most recent token is the low radix digit.
    pub fn row_index(&self, window: &[usize]) -> usize {
        debug_assert_eq!(window.len(), self.context_order);
        let v = self.vocab.len();
        let mut ix = 0usize;
        for &tok in window {
            debug_assert!(tok < v);
            ix = ix * v + tok;
        }
        ix
    }

    fn logits_row(&self, row: usize) -> &[f64] {
        let v = self.vocab.len();
        &self.logits[row * v..(row + 1) * v]
    }

    /// Row logits with the positional end-of-sequence bias applied.
    fn effective_logits(&self, row: usize, pos: usize) -> Vec<f64> {
        let mut z = self.logits_row(row).to_vec();
        if let Some(lb) = &self.length_bias {
            z[self.vocab.eos()] += lb.biases[lb.bucket(pos)];
        }
        z
    }

    /// The initial window for a context, left-padded with end-of-sequence.
    fn initial_window(&self, context: &[usize]) -> Vec<usize> {
        let mut window = vec![self.vocab.eos(); self.context_order];
        for &tok in context {
            push_window(&mut window, tok);
        }
        window
    }

    pub fn save(&self, path: &Path) -> Result<(), PolicyError> {
        let snapshot = Snapshot {
            vocab: self.vocab.tokens.clone(),
            context_order: self.context_order,
            length_bias: self.length_bias.clone(),
            logits: self.logits.clone(),
        };
        let file = File::create(path)?;
        let mut w = BufWriter::new(file);
        serde_json::to_writer(&mut w, &snapshot).map_err(|e| PolicyError::Json(e.to_string()))?;
        use std::io::Write;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, PolicyError> {
        let file = File::open(path)?;
        let snapshot: Snapshot = serde_json::from_reader(BufReader::new(file))
            .map_err(|e| PolicyError::Json(e.to_string()))?;
        let vocab = Vocab::new(snapshot.vocab)?;
        let entries = Self::table_entries(&vocab, snapshot.context_order)
            .ok_or_else(|| PolicyError::ShapeMismatch("invalid context order".into()))?;
        if snapshot.logits.len() != entries {
            return Err(PolicyError::ShapeMismatch(format!(
                "expected {entries} logits, found {}",
                snapshot.logits.len()
            )));
        }
        if let Some(lb) = &snapshot.length_bias {
            if lb.bucket_len < 1 || lb.biases.is_empty() {
                return Err(PolicyError::ShapeMismatch("invalid length bias".into()));
            }
        }
        Ok(PolicyParams {
            vocab,
            context_order: snapshot.context_order,
            logits: snapshot.logits,
            length_bias: snapshot.length_bias,
        })
    }
}

#[derive(Serialize, Deserialize)]
struct Snapshot {
    vocab: Vec<String>,
    context_order: usize,
    #[serde(default)]
    length_bias: Option<LengthBias>,
    logits: Vec<f64>,
}

fn push_window(window: &mut [usize], tok: usize) {
    window.rotate_left(1);
    let last = window.len() - 1;
    window[last] = tok;
}

/// One sampled response.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Rollout {
    pub question_id: String,
    /// Initial context window source tokens (operand digits).
    pub context_tokens: Vec<usize>,
    /// Every sampled token, including the terminal end-of-sequence.
    pub token_ids: Vec<usize>,
    pub text: String,
    pub logprob_per_token: Vec<f64>,
    pub total_logprob: f64,
    pub truncated: bool,
    pub temperature_used: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reward: Option<RewardBreakdown>,
}

impl Rollout {
    /// Response length in policy tokens, excluding the terminal
    /// end-of-sequence.
    pub fn token_len(&self) -> usize {
        if self.truncated {
            self.token_ids.len()
        } else {
            self.token_ids.len().saturating_sub(1)
        }
    }

    pub fn breakdown(&self) -> &RewardBreakdown {
        self.reward.as_ref().expect("rollout must be scored")
    }

    /// A rollout wrapper for externally produced text, so reward scoring
    /// can run on responses that never went through the sampler. The fake
    /// token ids only carry the length; such rollouts must not be replayed
    /// for gradients.
    pub fn from_text(question_id: &str, text: &str, token_len: usize, truncated: bool) -> Self {
        let stored_len = if truncated { token_len } else { token_len + 1 };
        Rollout {
            question_id: question_id.to_string(),
            context_tokens: Vec::new(),
            token_ids: vec![0; stored_len],
            text: text.to_string(),
            logprob_per_token: Vec::new(),
            total_logprob: 0.0,
            truncated,
            temperature_used: 0.0,
            reward: None,
        }
    }
}

fn log_softmax(z: &[f64], temperature: f64) -> Vec<f64> {
    let scaled: Vec<f64> = z.iter().map(|v| v / temperature).collect();
    let max = scaled.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let log_sum = scaled.iter().map(|v| (v - max).exp()).sum::<f64>().ln() + max;
    scaled.iter().map(|v| v - log_sum).collect()
}

/// Softmax probabilities of one logit row at the given temperature.
pub fn row_probs(z: &[f64], temperature: f64) -> Vec<f64> {
    log_softmax(z, temperature)
        .iter()
        .map(|lp| lp.exp())
        .collect()
}

/// Exact entropy (nats) of one logit row at the given temperature.
pub fn row_entropy(z: &[f64], temperature: f64) -> f64 {
    log_softmax(z, temperature)
        .iter()
        .map(|lp| {
            let p = lp.exp();
            if p > 0.0 {
                -p * lp
            } else {
                0.0
            }
        })
        .sum()
}

/// Samples one rollout. Deterministic per seed; generation stops at
/// end-of-sequence or after `max_len` sampled tokens (setting `truncated`).
pub fn sample(
    params: &PolicyParams,
    question: &Question,
    temperature: f64,
    max_len: usize,
    seed: u64,
) -> Result<Rollout, PolicyError> {
    assert!(temperature > 0.0, "temperature must be positive");
    assert!(max_len >= 1, "max_len must be at least 1");
    let mut rng = rng_from(seed);
    let context = params.vocab.prompt_context(&question.prompt);
    let mut window = params.initial_window(&context);
    let mut token_ids = Vec::new();
    let mut logps = Vec::new();
    let mut finished = false;
    for pos in 0..max_len {
        let row = params.row_index(&window);
        let z = params.effective_logits(row, pos);
        if z.iter().any(|v| !v.is_finite()) {
            return Err(PolicyError::NonFiniteLogits { row });
        }
        let log_probs = log_softmax(&z, temperature);
        let u: f64 = rng.gen();
        let mut cumulative = 0.0;
        let mut tok = params.vocab.len() - 1;
        for (j, lp) in log_probs.iter().enumerate() {
            cumulative += lp.exp();
            if u < cumulative {
                tok = j;
                break;
            }
        }
        token_ids.push(tok);
        logps.push(log_probs[tok]);
        if tok == params.vocab.eos() {
            finished = true;
            break;
        }
        push_window(&mut window, tok);
    }
    let total = logps.iter().sum();
    Ok(Rollout {
        question_id: question.id.clone(),
        text: params.vocab.detokenize(&token_ids),
        context_tokens: context,
        token_ids,
        logprob_per_token: logps,
        total_logprob: total,
        truncated: !finished,
        temperature_used: temperature,
        reward: None,
    })
}

/// Walks a rollout's trajectory, invoking `f(row, pos, token)` for each
/// sampled step.
fn replay<F: FnMut(usize, usize, usize)>(params: &PolicyParams, rollout: &Rollout, mut f: F) {
    let mut window = params.initial_window(&rollout.context_tokens);
    for (pos, &tok) in rollout.token_ids.iter().enumerate() {
        let row = params.row_index(&window);
        f(row, pos, tok);
        push_window(&mut window, tok);
    }
}

/// Recomputed log-probability of a rollout under `params`. Uses the same
/// accumulation order as sampling, so it reproduces `total_logprob` exactly
/// when `params` and `temperature` match the sampling run.
pub fn logprob(params: &PolicyParams, rollout: &Rollout, temperature: f64) -> f64 {
    let mut terms = Vec::with_capacity(rollout.token_ids.len());
    replay(params, rollout, |row, pos, tok| {
        let z = params.effective_logits(row, pos);
        terms.push(log_softmax(&z, temperature)[tok]);
    });
    terms.iter().sum()
}

/// Analytic gradient of `logprob` with respect to every parameter, in the
/// flat layout. Each visited row contributes `(indicator - softmax) / T`;
/// rows never visited stay exactly zero.
pub fn grad_logprob(params: &PolicyParams, rollout: &Rollout, temperature: f64) -> Vec<f64> {
    let mut grad = vec![0.0; params.flat_len()];
    accumulate_grad_logprob(params, rollout, temperature, 1.0, &mut grad);
    grad
}

/// Adds `weight * grad_logprob` into `out` without materializing a dense
/// per-rollout gradient. This is the trainer's hot path.
pub fn accumulate_grad_logprob(
    params: &PolicyParams,
    rollout: &Rollout,
    temperature: f64,
    weight: f64,
    out: &mut [f64],
) {
    assert_eq!(out.len(), params.flat_len());
    let v = params.vocab.len();
    let eos = params.vocab.eos();
    let bias_base = params.logits.len();
    replay(params, rollout, |row, pos, tok| {
        let z = params.effective_logits(row, pos);
        let probs = row_probs(&z, temperature);
        let base = row * v;
        for (j, p) in probs.iter().enumerate() {
            let indicator = if j == tok { 1.0 } else { 0.0 };
            out[base + j] += weight * (indicator - p) / temperature;
        }
        if let Some(lb) = &params.length_bias {
            let indicator = if tok == eos { 1.0 } else { 0.0 };
            out[bias_base + lb.bucket(pos)] += weight * (indicator - probs[eos]) / temperature;
        }
    });
}

/// Mean per-token entropy (exact row entropies averaged along sampled
/// trajectories) over `n_rollouts` fresh rollouts from an empty context.
pub fn sequence_entropy(
    params: &PolicyParams,
    temperature: f64,
    horizon: usize,
    n_rollouts: usize,
    seed: u64,
) -> Result<f64, PolicyError> {
    assert!(horizon >= 1 && n_rollouts >= 1);
    let probe = Question {
        id: "entropy-probe".to_string(),
        prompt: String::new(),
        truth: crate::verifier::CanonicalAnswer::integer(0),
        source_tag: "probe".to_string(),
        difficulty: None,
    };
    let mut total = 0.0;
    let mut steps = 0usize;
    for i in 0..n_rollouts {
        let rollout = sample(
            params,
            &probe,
            temperature,
            horizon,
            seed.wrapping_add(i as u64),
        )?;
        total += rollout_entropy_sum(params, &rollout, temperature);
        steps += rollout.token_ids.len();
    }
    Ok(total / steps as f64)
}

/// Sum of exact row entropies along one rollout's trajectory.
pub fn rollout_entropy_sum(params: &PolicyParams, rollout: &Rollout, temperature: f64) -> f64 {
    let mut total = 0.0;
    replay(params, rollout, |row, pos, _| {
        let z = params.effective_logits(row, pos);
        total += row_entropy(&z, temperature);
    });
    total
}

/// Exact KL divergence between the sequence distributions of two policies
/// sharing a vocabulary and context order, from a given starting context,
/// truncated at `horizon` tokens. Computed by dynamic programming over
/// context windows, not by sampling.
pub fn exact_sequence_kl(
    p: &PolicyParams,
    q: &PolicyParams,
    temperature: f64,
    horizon: usize,
    context: &[usize],
) -> f64 {
    assert_eq!(p.vocab, q.vocab, "policies must share a vocabulary");
    assert_eq!(p.context_order, q.context_order);
    let mut memo: HashMap<(usize, usize), f64> = HashMap::new();
    let window = p.initial_window(context);
    kl_from(p, q, temperature, &window, 0, horizon, &mut memo)
}

fn kl_from(
    p: &PolicyParams,
    q: &PolicyParams,
    temperature: f64,
    window: &[usize],
    pos: usize,
    horizon: usize,
    memo: &mut HashMap<(usize, usize), f64>,
) -> f64 {
    if pos >= horizon {
        return 0.0;
    }
    let row = p.row_index(window);
    if let Some(&cached) = memo.get(&(row, pos)) {
        return cached;
    }
    let zp = p.effective_logits(row, pos);
    let zq = q.effective_logits(row, pos);
    let lp = log_softmax(&zp, temperature);
    let lq = log_softmax(&zq, temperature);
    let mut total = 0.0;
    for (tok, (&lpx, &lqx)) in lp.iter().zip(lq.iter()).enumerate() {
        let px = lpx.exp();
        if px == 0.0 {
            continue;
        }
        let mut term = px * (lpx - lqx);
        if tok != p.vocab.eos() {
            let mut next = window.to_vec();
            push_window(&mut next, tok);
            term += px * kl_from(p, q, temperature, &next, pos + 1, horizon, memo);
        }
        total += term;
    }
    memo.insert((row, pos), total);
    total
}

/// A policy plus its sampling settings, usable as a difficulty probe.
pub struct SamplingPolicy<'a> {
    pub params: &'a PolicyParams,
    pub temperature: f64,
    pub max_len: usize,
}

impl PolicySampler for SamplingPolicy<'_> {
    fn sample_response(&self, question: &Question, seed: u64) -> String {
        sample(self.params, question, self.temperature, self.max_len, seed)
            .map(|r| r.text)
            .unwrap_or_default()
    }
}
