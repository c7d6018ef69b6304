//! Per-rollout rewards and group scoring.
//!
//! `r_total = r_piece + lambda1 * r_table + lambda2 * r_sim`, where `r_piece`
//! is a staged level (no code, execution failure, wrong answer, correct),
//! `r_table` the F1 of table paths read against the gold paths, and `r_sim`
//! the mean CodeBLEU of an incorrect rollout's code against each correct code
//! of its group.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::codesim::{CodeBleu, PreparedCode};
use crate::dataset::GoldRecord;
use crate::extraction::{extract_code, extract_table_paths, ExtractionConfig, PathSet};
use crate::judge::Judge;
use crate::rlmath::{dynamic_sampling_keep, group_advantages, ClipConfig, Rollout, RolloutGroup};
use crate::sandbox::{parse_answer, ExecLimits, ExecOutcome, Executor};
use crate::Error;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewardConfig {
    pub lambda1: f64,
    pub lambda2: f64,
    pub piecewise_levels: [f64; 4],
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self {
            lambda1: 0.5,
            lambda2: 1.0,
            piecewise_levels: [0.0, 0.5, 1.0, 3.0],
        }
    }
}

impl RewardConfig {
    pub fn validate(&self) -> Result<(), Error> {
        let l = self.piecewise_levels;
        if l.iter().any(|v| !v.is_finite()) || !(l[0] < l[1] && l[1] < l[2] && l[2] < l[3]) {
            return Err(Error::Config(format!("piecewise_levels must be strictly increasing, got {l:?}")));
        }
        if !self.lambda1.is_finite() || !self.lambda2.is_finite() || self.lambda1 < 0.0 || self.lambda2 < 0.0 {
            return Err(Error::Config("lambda1 and lambda2 must be non-negative".into()));
        }
        Ok(())
    }

    pub fn with_lambdas(mut self, lambda1: Option<f64>, lambda2: Option<f64>) -> Self {
        if let Some(l) = lambda1 {
            self.lambda1 = l;
        }
        if let Some(l) = lambda2 {
            self.lambda2 = l;
        }
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardStage {
    FormatError,
    ExecError,
    WrongAnswer,
    Correct,
}

impl RewardStage {
    pub fn level(self, cfg: &RewardConfig) -> f64 {
        cfg.piecewise_levels[self as usize]
    }

    pub fn as_str(self) -> &'static str {
        match self {
            RewardStage::FormatError => "format_error",
            RewardStage::ExecError => "exec_error",
            RewardStage::WrongAnswer => "wrong_answer",
            RewardStage::Correct => "correct",
        }
    }
}

/// How `r_sim` was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SimStatus {
    /// Correct rollouts score 1 by definition.
    Correct,
    /// Mean similarity against the group's correct codes.
    Compared,
    /// No code was extracted; 0 by definition.
    NoCode,
    /// The group had no correct code to compare against; 0.
    NoReference,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub r_piece: f64,
    pub r_table: f64,
    pub r_sim: f64,
    pub r_total: f64,
    pub stage: RewardStage,
    pub sim_status: SimStatus,
}

pub fn reward_stage(has_code: bool, exec_ok: bool, verdict: Option<bool>) -> RewardStage {
    match (has_code, exec_ok, verdict) {
        (false, _, _) => RewardStage::FormatError,
        (true, false, _) => RewardStage::ExecError,
        (true, true, Some(true)) => RewardStage::Correct,
        (true, true, _) => RewardStage::WrongAnswer,
    }
}

pub fn piecewise_reward(has_code: bool, exec_ok: bool, verdict: Option<bool>, cfg: &RewardConfig) -> f64 {
    reward_stage(has_code, exec_ok, verdict).level(cfg)
}

/// F1 of two path sets: 1 when both are empty, 0 when they share nothing.
/// Computed as `2|P∩G| / (|P| + |G|)`, which equals `2PR / (P + R)`.
pub fn table_path_f1(predicted: &PathSet, gold: &PathSet) -> f64 {
    if predicted.is_empty() && gold.is_empty() {
        return 1.0;
    }
    let inter = predicted.intersection_len(gold);
    if inter == 0 {
        return 0.0;
    }
    (2 * inter) as f64 / (predicted.len() + gold.len()) as f64
}

/// `r_sim` for rollout `index`: 1 if correct, 0 without code, otherwise the
/// mean of `sim(code_index, code_k)` over correct rollouts `k` in index order.
pub fn similarity_reward<C, F>(index: usize, codes: &[Option<C>], correct: &[bool], sim: F) -> (f64, SimStatus)
where
    F: Fn(&C, &C) -> f64,
{
    if correct[index] {
        return (1.0, SimStatus::Correct);
    }
    let Some(code) = &codes[index] else {
        return (0.0, SimStatus::NoCode);
    };
    let refs: Vec<&C> = codes
        .iter()
        .zip(correct)
        .filter(|(_, ok)| **ok)
        .filter_map(|(c, _)| c.as_ref())
        .collect();
    if refs.is_empty() {
        return (0.0, SimStatus::NoReference);
    }
    let sum: f64 = refs.iter().map(|r| sim(code, r)).sum();
    (sum / refs.len() as f64, SimStatus::Compared)
}

pub fn total_reward(r_piece: f64, r_table: f64, r_sim: f64, cfg: &RewardConfig) -> f64 {
    r_piece + cfg.lambda1 * r_table + cfg.lambda2 * r_sim
}

/// Everything `score_group` needs besides the executor and judge.
#[derive(Debug, Clone, Default)]
pub struct ScoringConfig {
    pub limits: ExecLimits,
    pub rewards: RewardConfig,
    pub extraction: ExtractionConfig,
    pub codebleu: CodeBleu,
    pub clip: ClipConfig,
}

/// Extraction, execution and judging for one rollout.
pub(crate) fn evaluate_rollout(
    mut rollout: Rollout,
    record: &GoldRecord,
    cfg: &ScoringConfig,
    executor: &dyn Executor,
    judge: &Judge,
) -> Rollout {
    rollout.code = extract_code(&rollout.response);
    let Some(code) = &rollout.code else {
        return rollout;
    };
    let outcome = if code.source.trim().is_empty() {
        ExecOutcome::failure("empty code block")
    } else {
        executor.execute(code, &record.workspace(), &cfg.limits)
    };
    rollout.answer = parse_answer(&outcome);
    rollout.exec = Some(outcome);
    if let Some(answer) = &rollout.answer {
        match judge.judge(answer, &record.gold_answer, &record.question) {
            Ok(v) => rollout.verdict = Some(v),
            Err(e) => {
                tracing::warn!(rollout = %rollout.id, error = %e, "judge failed; counting answer as wrong");
                rollout.error = Some(e.to_string());
            }
        }
    }
    rollout
}

/// Score a group end to end. Extraction, execution and judging run in
/// parallel; the similarity pass starts once every correctness flag is final.
pub fn score_group(
    rollouts: Vec<Rollout>,
    record: &GoldRecord,
    cfg: &ScoringConfig,
    executor: &dyn Executor,
    judge: &Judge,
) -> Result<RolloutGroup, Error> {
    if rollouts.is_empty() {
        return Err(Error::Config("a group needs at least one rollout".into()));
    }
    let mut rollouts: Vec<Rollout> = rollouts
        .into_par_iter()
        .map(|r| evaluate_rollout(r, record, cfg, executor, judge))
        .collect();

    let stages: Vec<RewardStage> = rollouts
        .iter()
        .map(|r| {
            reward_stage(
                r.code.is_some(),
                r.answer.is_some(),
                r.answer.as_ref().map(|_| r.verdict.as_ref().is_some_and(|v| v.correct)),
            )
        })
        .collect();
    let correct: Vec<bool> = stages.iter().map(|s| *s == RewardStage::Correct).collect();

    let prepared: Vec<Option<PreparedCode>> = rollouts
        .par_iter()
        .map(|r| r.code.as_ref().map(|c| PreparedCode::new(&c.source)))
        .collect();
    let sims: Vec<(f64, SimStatus)> = (0..rollouts.len())
        .into_par_iter()
        .map(|i| {
            similarity_reward(i, &prepared, &correct, |a, b| cfg.codebleu.score_prepared(a, &[b]))
        })
        .collect();

    let mut totals = Vec::with_capacity(rollouts.len());
    for (i, r) in rollouts.iter_mut().enumerate() {
        let predicted = r
            .code
            .as_ref()
            .map(|c| extract_table_paths(c, &cfg.extraction))
            .unwrap_or_default();
        let r_table = table_path_f1(&predicted, &record.gold_table_paths);
        let r_piece = stages[i].level(&cfg.rewards);
        let (r_sim, sim_status) = sims[i];
        let r_total = total_reward(r_piece, r_table, r_sim, &cfg.rewards);
        totals.push(r_total);
        r.breakdown = Some(RewardBreakdown {
            r_piece,
            r_table,
            r_sim,
            r_total,
            stage: stages[i],
            sim_status,
        });
    }
    let adv = group_advantages(&totals, cfg.clip.sigma_floor)?;
    let missing_similarity_refs = sims.iter().any(|(_, s)| *s == SimStatus::NoReference);
    Ok(RolloutGroup {
        keep: dynamic_sampling_keep(&correct),
        rollouts,
        rewards: totals,
        correct_flags: correct,
        mu: adv.mu,
        sigma: adv.sigma,
        advantages: adv.advantages,
        missing_similarity_refs,
    })
}
