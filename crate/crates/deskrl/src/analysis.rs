//! Reasoning-pattern analytics and training curves.
//!
//! Tracks how often responses contain keywords from reasoning categories
//! (verification, reflection, correction), summarizes correct-vs-incorrect
//! response lengths, and exports step reports as a fixed-column CSV.

use crate::policy::Rollout;
use crate::rewards::count_actions;
use crate::trainer::StepReport;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("line {line}: malformed curve row")]
    BadCurveRow { line: usize },
}

/// Keyword categories for reasoning-pattern tracking. Keywords are
/// lowercase; multi-word phrases match consecutive words.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct KeywordTaxonomy {
    pub categories: BTreeMap<String, Vec<String>>,
}

impl KeywordTaxonomy {
    pub fn new(categories: BTreeMap<String, Vec<String>>) -> Self {
        KeywordTaxonomy { categories }
    }

    /// Self-verification, self-reflection, and self-correction categories.
    pub fn standard() -> Self {
        let mut categories = BTreeMap::new();
        categories.insert(
            "self-verification".to_string(),
            vec![
                "verify".to_string(),
                "double check".to_string(),
                "confirm".to_string(),
            ],
        );
        categories.insert(
            "self-reflection".to_string(),
            vec![
                "however".to_string(),
                "reflect".to_string(),
                "wait".to_string(),
            ],
        );
        categories.insert(
            "self-correction".to_string(),
            vec![
                "correct".to_string(),
                "revise".to_string(),
                "adjust".to_string(),
            ],
        );
        KeywordTaxonomy { categories }
    }
}

/// Per-category fraction of responses containing at least one keyword.
pub fn keyword_ratios<S: AsRef<str>>(
    responses: &[S],
    taxonomy: &KeywordTaxonomy,
) -> BTreeMap<String, f64> {
    let mut out = BTreeMap::new();
    for (category, keywords) in &taxonomy.categories {
        let hits = responses
            .iter()
            .filter(|r| count_actions(r.as_ref(), keywords) > 0)
            .count();
        let ratio = if responses.is_empty() {
            0.0
        } else {
            hits as f64 / responses.len() as f64
        };
        out.insert(category.clone(), ratio);
    }
    out
}

/// Accuracy plus mean response lengths split by correctness. A mean is
/// absent when its class is empty.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LengthStats {
    pub accuracy: f64,
    pub mean_length_correct: Option<f64>,
    pub mean_length_incorrect: Option<f64>,
    pub count_correct: usize,
    pub count_incorrect: usize,
}

/// Partitions scored responses by correctness and summarizes lengths.
pub fn length_stats(responses: &[Rollout]) -> LengthStats {
    let mut correct_lengths = Vec::new();
    let mut incorrect_lengths = Vec::new();
    for r in responses {
        let len = r.token_len() as f64;
        if r.breakdown().correct {
            correct_lengths.push(len);
        } else {
            incorrect_lengths.push(len);
        }
    }
    let mean = |v: &[f64]| {
        if v.is_empty() {
            None
        } else {
            Some(v.iter().sum::<f64>() / v.len() as f64)
        }
    };
    let total = correct_lengths.len() + incorrect_lengths.len();
    LengthStats {
        accuracy: if total == 0 {
            0.0
        } else {
            correct_lengths.len() as f64 / total as f64
        },
        mean_length_correct: mean(&correct_lengths),
        mean_length_incorrect: mean(&incorrect_lengths),
        count_correct: correct_lengths.len(),
        count_incorrect: incorrect_lengths.len(),
    }
}

/// Writes step reports as CSV with the fixed column order
/// `step,reward,length,completion_ratio,accuracy,kl,entropy`.
/// Re-exporting the same reports produces byte-identical output.
pub fn curve_export(reports: &[StepReport], path: &Path) -> Result<(), AnalysisError> {
    let file = File::create(path)?;
    let mut w = BufWriter::new(file);
    writeln!(w, "{}", StepReport::CSV_HEADER)?;
    for r in reports {
        writeln!(w, "{}", r.csv_row())?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a curve CSV back into step reports.
pub fn curve_import(path: &Path) -> Result<Vec<StepReport>, AnalysisError> {
    let file = File::open(path)?;
    let reader = BufReader::new(file);
    let mut out = Vec::new();
    for (ix, line) in reader.lines().enumerate() {
        let line = line?;
        if ix == 0 {
            if line != StepReport::CSV_HEADER {
                return Err(AnalysisError::BadCurveRow { line: 1 });
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let report =
            StepReport::from_csv_row(&line).ok_or(AnalysisError::BadCurveRow { line: ix + 1 })?;
        out.push(report);
    }
    Ok(out)
}
