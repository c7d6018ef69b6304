//! Accuracy reports over prediction runs, overall and stratified by
//! language, question difficulty and table difficulty.
//!
//! Entries go through the same extraction, execution and judging as reward
//! scoring, so evaluation and training agree on what "correct" means.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, Language, QuestionDifficulty, TableDifficulty};
use crate::extraction::ResponseText;
use crate::judge::Judge;
use crate::rewards::{evaluate_rollout, reward_stage, RewardStage, ScoringConfig};
use crate::rlmath::Rollout;
use crate::sandbox::Executor;
use crate::Error;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionEntry {
    pub record_id: String,
    pub response: ResponseText,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRun {
    pub model_name: String,
    #[serde(default)]
    pub timestamp: String,
    pub entries: Vec<PredictionEntry>,
}

/// One line of a predictions file; `model` defaults to the caller's choice.
#[derive(Debug, Clone, Deserialize)]
struct PredictionLine {
    record_id: String,
    response: String,
    #[serde(default)]
    model: Option<String>,
}

/// Parse a predictions JSONL file into one run per model, in order of first
/// appearance.
pub fn parse_predictions(text: &str, default_model: &str, timestamp: &str) -> Result<Vec<PredictionRun>, Error> {
    let mut runs: Vec<PredictionRun> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let p: PredictionLine =
            serde_json::from_str(line).map_err(|e| Error::Eval(format!("line {}: {e}", i + 1)))?;
        let model = p.model.unwrap_or_else(|| default_model.to_string());
        let entry = PredictionEntry {
            record_id: p.record_id,
            response: ResponseText::new(p.response),
        };
        match runs.iter_mut().find(|r| r.model_name == model) {
            Some(run) => run.entries.push(entry),
            None => runs.push(PredictionRun {
                model_name: model,
                timestamp: timestamp.to_string(),
                entries: vec![entry],
            }),
        }
    }
    Ok(runs)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub correct: usize,
    pub total: usize,
    pub accuracy: f64,
}

impl Cell {
    fn add(&mut self, correct: bool) {
        self.total += 1;
        self.correct += usize::from(correct);
        self.accuracy = self.correct as f64 / self.total as f64;
    }
}

/// One line of the verdict log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordVerdict {
    pub record_id: String,
    pub correct: bool,
    pub stage: String,
    pub answer: Option<String>,
    pub elapsed_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntryError {
    pub record_id: String,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub model_name: String,
    pub timestamp: String,
    pub overall: Cell,
    pub by_language: BTreeMap<Language, Cell>,
    pub by_question_difficulty: BTreeMap<QuestionDifficulty, Cell>,
    pub by_table_difficulty: BTreeMap<TableDifficulty, Cell>,
    pub verdicts: Vec<RecordVerdict>,
    /// Entries left out of every count.
    pub errors: Vec<EntryError>,
}

/// Score every entry; entries whose record is unknown are reported as
/// errors and excluded from the counts.
pub fn score_run(
    run: &PredictionRun,
    dataset: &Dataset,
    cfg: &ScoringConfig,
    executor: &dyn Executor,
    judge: &Judge,
) -> Result<ScoreReport, Error> {
    if run.entries.is_empty() {
        return Err(Error::Eval("no entries".into()));
    }
    let mut seen = HashSet::new();
    for e in &run.entries {
        if !seen.insert(e.record_id.as_str()) {
            return Err(Error::Eval(format!("duplicate record_id {}", e.record_id)));
        }
    }
    let results: Vec<Result<RecordVerdict, EntryError>> = run
        .entries
        .par_iter()
        .map(|entry| {
            let Some(record) = dataset.get(&entry.record_id) else {
                tracing::warn!(record = %entry.record_id, "prediction for unknown record");
                return Err(EntryError {
                    record_id: entry.record_id.clone(),
                    error: "unknown record".into(),
                });
            };
            let start = Instant::now();
            let rollout = Rollout::new(entry.record_id.clone(), entry.response.clone(), 1);
            let r = evaluate_rollout(rollout, record, cfg, executor, judge);
            let verdict = r.answer.as_ref().map(|_| r.verdict.as_ref().is_some_and(|v| v.correct));
            let stage = reward_stage(r.code.is_some(), r.answer.is_some(), verdict);
            Ok(RecordVerdict {
                record_id: entry.record_id.clone(),
                correct: stage == RewardStage::Correct,
                stage: stage.as_str().to_string(),
                answer: r.answer.map(|a| a.text),
                elapsed_s: start.elapsed().as_secs_f64(),
            })
        })
        .collect();

    let mut report = ScoreReport {
        model_name: run.model_name.clone(),
        timestamp: run.timestamp.clone(),
        overall: Cell::default(),
        by_language: BTreeMap::new(),
        by_question_difficulty: BTreeMap::new(),
        by_table_difficulty: BTreeMap::new(),
        verdicts: Vec::new(),
        errors: Vec::new(),
    };
    for r in results {
        match r {
            Ok(v) => {
                let rec = dataset.get(&v.record_id).expect("scored records exist");
                report.overall.add(v.correct);
                report.by_language.entry(rec.language).or_default().add(v.correct);
                report
                    .by_question_difficulty
                    .entry(rec.question_difficulty)
                    .or_default()
                    .add(v.correct);
                report.by_table_difficulty.entry(rec.table_difficulty).or_default().add(v.correct);
                report.verdicts.push(v);
            }
            Err(e) => report.errors.push(e),
        }
    }
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Json,
    Markdown,
}

impl std::str::FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        match s {
            "json" => Ok(Self::Json),
            "markdown" | "md" => Ok(Self::Markdown),
            other => Err(Error::Config(format!("unknown report format {other}"))),
        }
    }
}

fn pct(cell: Option<&Cell>) -> String {
    match cell {
        Some(c) if c.total > 0 => format!("{:.2}", c.accuracy * 100.0),
        _ => "-".to_string(),
    }
}

/// JSON (array of reports) or a markdown table with one row per model.
pub fn emit_reports(reports: &[ScoreReport], format: ReportFormat) -> String {
    match format {
        ReportFormat::Json => {
            let mut s = serde_json::to_string_pretty(reports).expect("reports serialize");
            s.push('\n');
            s
        }
        ReportFormat::Markdown => {
            let mut s = String::new();
            s.push_str("| Model | Overall | Language: zh | Language: en | Question: easy | Question: medium | Question: hard | Table: simple | Table: medium | Table: complex |\n");
            s.push_str("|---|---|---|---|---|---|---|---|---|---|\n");
            for r in reports {
                let mut cols = vec![r.model_name.replace('|', "\\|"), pct(Some(&r.overall))];
                cols.extend(Language::ALL.iter().map(|l| pct(r.by_language.get(l))));
                cols.extend(QuestionDifficulty::ALL.iter().map(|q| pct(r.by_question_difficulty.get(q))));
                cols.extend(TableDifficulty::ALL.iter().map(|t| pct(r.by_table_difficulty.get(t))));
                let _ = writeln!(s, "| {} |", cols.join(" | "));
            }
            s
        }
    }
}

/// Single-report form: a JSON object, or a one-row markdown table.
pub fn emit_report(report: &ScoreReport, format: ReportFormat) -> String {
    match format {
        ReportFormat::Json => {
            let mut s = serde_json::to_string_pretty(report).expect("report serializes");
            s.push('\n');
            s
        }
        ReportFormat::Markdown => emit_reports(std::slice::from_ref(report), format),
    }
}

/// Verdict log, one JSON object per line.
pub fn verdicts_jsonl(report: &ScoreReport) -> String {
    let mut s = String::new();
    for v in &report.verdicts {
        s.push_str(&serde_json::to_string(v).expect("verdict serializes"));
        s.push('\n');
    }
    s
}
