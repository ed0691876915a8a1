//! Question curation and storage.
//!
//! Follows three curation principles: keep the sources diverse (a source
//! tag travels with every question), keep only verifiable answers (the
//! answer must parse under the verifier grammar), and keep only questions
//! of useful difficulty (estimated as a probe pass rate, then filtered to
//! an open interval). A synthetic arithmetic generator provides the
//! desk-scale task family.

use crate::seed::{derive_seed_keyed, rng_from};
use crate::verifier::{parse_answer, response_is_correct, CanonicalAnswer};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::HashSet;
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("duplicate question id `{0}`")]
    DuplicateId(String),
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("invalid difficulty thresholds: require 0 <= low < high <= 1, got ({low}, {high})")]
    InvalidThresholds { low: f64, high: f64 },
    #[error("question `{0}` has no difficulty estimate")]
    MissingDifficulty(String),
    #[error("empty magnitude range")]
    EmptyRange,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// A verifiable task instance.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Question {
    pub id: String,
    pub prompt: String,
    #[serde(rename = "answer")]
    pub truth: CanonicalAnswer,
    #[serde(rename = "source")]
    pub source_tag: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub difficulty: Option<f64>,
}

/// An uncurated record as it arrives from a raw source file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RawRecord {
    pub id: String,
    pub prompt: String,
    pub answer: String,
    #[serde(default, rename = "source")]
    pub source_tag: String,
}

/// Bookkeeping for one curation pass. `input_count` always equals
/// `kept + removed_unverifiable + removed_too_easy + removed_too_hard`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CurationReport {
    pub input_count: usize,
    pub removed_unverifiable: usize,
    pub removed_too_easy: usize,
    pub removed_too_hard: usize,
    pub kept: usize,
}

impl CurationReport {
    pub fn balances(&self) -> bool {
        self.input_count
            == self.kept + self.removed_unverifiable + self.removed_too_easy + self.removed_too_hard
    }

    /// Folds a later pass into this report: inputs of `next` are this pass's
    /// kept questions.
    pub fn merge(&self, next: &CurationReport) -> CurationReport {
        CurationReport {
            input_count: self.input_count,
            removed_unverifiable: self.removed_unverifiable + next.removed_unverifiable,
            removed_too_easy: self.removed_too_easy + next.removed_too_easy,
            removed_too_hard: self.removed_too_hard + next.removed_too_hard,
            kept: next.kept,
        }
    }
}

impl fmt::Display for CurationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "in={} kept={} unverifiable={} too_easy={} too_hard={}",
            self.input_count,
            self.kept,
            self.removed_unverifiable,
            self.removed_too_easy,
            self.removed_too_hard
        )
    }
}

/// Anything that can produce a response text for a question. The probe used
/// for difficulty estimation and the trained policy both wear this hat.
pub trait PolicySampler: Sync {
    fn sample_response(&self, question: &Question, seed: u64) -> String;
}

/// Keeps only records whose answer parses under the verifier grammar.
pub fn filter_verifiable(
    records: &[RawRecord],
) -> Result<(Vec<Question>, CurationReport), DatasetError> {
    let mut seen = HashSet::new();
    for r in records {
        if !seen.insert(r.id.as_str()) {
            return Err(DatasetError::DuplicateId(r.id.clone()));
        }
    }
    let mut kept = Vec::new();
    let mut removed = 0usize;
    for r in records {
        match parse_answer(&r.answer) {
            Some(truth) => kept.push(Question {
                id: r.id.clone(),
                prompt: r.prompt.clone(),
                truth,
                source_tag: r.source_tag.clone(),
                difficulty: None,
            }),
            None => removed += 1,
        }
    }
    let report = CurationReport {
        input_count: records.len(),
        removed_unverifiable: removed,
        kept: kept.len(),
        ..CurationReport::default()
    };
    Ok((kept, report))
}

/// Pass rate of `probe` on `q` over `k` rollouts.
///
/// Rollout seeds derive from `(master_seed, q.id, index)` only, so the
/// estimate is independent of evaluation order and worker count.
pub fn estimate_difficulty<S: PolicySampler>(
    q: &Question,
    probe: &S,
    k: usize,
    master_seed: u64,
) -> f64 {
    assert!(k >= 1, "difficulty estimation needs at least one rollout");
    let correct = (0..k)
        .into_par_iter()
        .filter(|&i| {
            let seed = derive_seed_keyed(master_seed, "difficulty", &q.id, &[i as u64]);
            let text = probe.sample_response(q, seed);
            response_is_correct(&text, &q.truth)
        })
        .count();
    correct as f64 / k as f64
}

/// Fills the difficulty field for every question.
pub fn estimate_difficulties<S: PolicySampler>(
    questions: &mut [Question],
    probe: &S,
    k: usize,
    master_seed: u64,
) {
    let rates: Vec<f64> = questions
        .par_iter()
        .map(|q| estimate_difficulty(q, probe, k, master_seed))
        .collect();
    for (q, rate) in questions.iter_mut().zip(rates) {
        q.difficulty = Some(rate);
    }
}

/// Keeps questions whose pass rate lies strictly inside `(low, high)`.
/// The default `(0, 1)` drops exactly the zero-pass-rate and full-pass-rate
/// questions.
pub fn filter_by_difficulty(
    questions: Vec<Question>,
    low: f64,
    high: f64,
) -> Result<(Vec<Question>, CurationReport), DatasetError> {
    if !(0.0..1.0).contains(&low)
        || high > 1.0
        || low >= high
        || !low.is_finite()
        || !high.is_finite()
    {
        return Err(DatasetError::InvalidThresholds { low, high });
    }
    let input_count = questions.len();
    let mut kept = Vec::new();
    let mut too_easy = 0usize;
    let mut too_hard = 0usize;
    for q in questions {
        let rate = q
            .difficulty
            .ok_or_else(|| DatasetError::MissingDifficulty(q.id.clone()))?;
        if rate <= low {
            too_hard += 1;
        } else if rate >= high {
            too_easy += 1;
        } else {
            kept.push(q);
        }
    }
    let report = CurationReport {
        input_count,
        removed_too_easy: too_easy,
        removed_too_hard: too_hard,
        kept: kept.len(),
        ..CurationReport::default()
    };
    Ok((kept, report))
}

/// Which operations the synthetic generator draws from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OpMix {
    Add,
    Sub,
    Mixed,
}

/// Generates `count` arithmetic questions `a (+|-) b = ?` with operands
/// drawn uniformly from `[lo, hi]`. Deterministic per seed.
pub fn gen_arithmetic_tasks(
    count: usize,
    lo: i64,
    hi: i64,
    ops: OpMix,
    seed: u64,
) -> Result<Vec<Question>, DatasetError> {
    if lo > hi {
        return Err(DatasetError::EmptyRange);
    }
    let mut rng = rng_from(seed);
    let mut out = Vec::with_capacity(count);
    for i in 0..count {
        let a: i64 = rng.gen_range(lo..=hi);
        let b: i64 = rng.gen_range(lo..=hi);
        let subtract = match ops {
            OpMix::Add => false,
            OpMix::Sub => true,
            OpMix::Mixed => rng.gen_bool(0.5),
        };
        let (symbol, value) = if subtract { ("-", a - b) } else { ("+", a + b) };
        out.push(Question {
            id: format!("arith-{i:06}"),
            prompt: format!("{a} {symbol} {b} = ?"),
            truth: CanonicalAnswer::integer(value),
            source_tag: "synthetic-arithmetic".to_string(),
            difficulty: None,
        });
    }
    Ok(out)
}

/// Loads uncurated records (one JSON object per line) for the curation
/// pipeline. Answers stay raw strings here; verifiability is decided later.
pub fn load_raw_records(path: &Path) -> Result<Vec<RawRecord>, DatasetError> {
    let file = File::open(path)?;
    let reader = BufReader::new(file);
    let mut out = Vec::new();
    for (ix, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: RawRecord =
            serde_json::from_str(&line).map_err(|e| DatasetError::Malformed {
                line: ix + 1,
                message: e.to_string(),
            })?;
        out.push(record);
    }
    Ok(out)
}

/// Loads a line-delimited dataset; one JSON object per line. Unknown fields
/// are tolerated. Malformed lines (bad JSON, missing fields, unparseable
/// answers) report their 1-based line number.
pub fn load_dataset(path: &Path) -> Result<Vec<Question>, DatasetError> {
    let file = File::open(path)?;
    let reader = BufReader::new(file);
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for (ix, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let q: Question = serde_json::from_str(&line).map_err(|e| DatasetError::Malformed {
            line: ix + 1,
            message: e.to_string(),
        })?;
        if !seen.insert(q.id.clone()) {
            return Err(DatasetError::DuplicateId(q.id));
        }
        out.push(q);
    }
    Ok(out)
}

/// Writes a dataset as line-delimited JSON. `load` after `save` yields the
/// same sequence.
pub fn save_dataset(path: &Path, questions: &[Question]) -> Result<(), DatasetError> {
    let file = File::create(path)?;
    let mut w = BufWriter::new(file);
    for q in questions {
        serde_json::to_writer(&mut w, q).map_err(|e| DatasetError::Malformed {
            line: 0,
            message: e.to_string(),
        })?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}
