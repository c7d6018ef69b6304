//! Wire types and the request-scoring entry point shared by the HTTP service
//! and the CLI, so both paths produce the same bytes.

use std::collections::HashSet;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use tabrl_core::dataset::Dataset;
use tabrl_core::judge::Judge;
use tabrl_core::rewards::{score_group, RewardStage, ScoringConfig, SimStatus};
use tabrl_core::rlmath::Rollout;
use tabrl_core::sandbox::{Executor, ProcessExecutor, ScriptedExecutor};
use tabrl_core::Error;

use crate::config::{EngineConfig, ExecutorKind};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutInput {
    pub id: String,
    pub response_text: String,
    pub token_count: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardRequest {
    pub group_id: String,
    pub record_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda1: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda2: Option<f64>,
    pub rollouts: Vec<RolloutInput>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutReward {
    pub id: String,
    pub r_piece: f64,
    pub r_table: f64,
    pub r_sim: f64,
    pub r_total: f64,
    pub advantage: f64,
    pub stage: RewardStage,
    pub sim_status: SimStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardResponse {
    pub group_id: String,
    pub keep: bool,
    pub mu: f64,
    pub sigma: f64,
    pub rollouts: Vec<RolloutReward>,
}

impl RewardResponse {
    /// Canonical serialization: compact JSON, no trailing newline.
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("responses serialize")
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum RequestError {
    #[error("unknown record")]
    UnknownRecord,
    #[error("{0}")]
    Invalid(String),
    #[error("{0}")]
    Internal(String),
}

/// Error body shared by HTTP and CLI output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub group_id: Option<String>,
    pub error: String,
}

/// Immutable after construction; safe to share across request handlers.
pub struct Engine {
    dataset: Dataset,
    scoring: ScoringConfig,
    executor: Arc<dyn Executor>,
    judge: Judge,
}

impl Engine {
    pub fn new(dataset: Dataset, scoring: ScoringConfig, executor: Arc<dyn Executor>, judge: Judge) -> Self {
        Self {
            dataset,
            scoring,
            executor,
            judge,
        }
    }

    /// Validate `cfg`, load its dataset and build the executor and judge.
    pub fn from_config(cfg: &EngineConfig) -> Result<Self, Error> {
        cfg.validate()?;
        let path = cfg
            .dataset
            .as_ref()
            .ok_or_else(|| Error::Config("no dataset configured".into()))?;
        let dataset = Dataset::load(path)?;
        if dataset.is_empty() {
            return Err(Error::Dataset(format!("{} holds no records", path.display())));
        }
        Ok(Self::new(dataset, cfg.scoring()?, build_executor(cfg)?, Judge::new(cfg.judge.clone())))
    }

    pub fn dataset(&self) -> &Dataset {
        &self.dataset
    }

    pub fn scoring(&self) -> &ScoringConfig {
        &self.scoring
    }

    pub fn executor(&self) -> &dyn Executor {
        self.executor.as_ref()
    }

    pub fn judge(&self) -> &Judge {
        &self.judge
    }

    pub fn score_request(&self, req: &RewardRequest) -> Result<RewardResponse, RequestError> {
        if req.rollouts.is_empty() {
            return Err(RequestError::Invalid("rollouts must not be empty".into()));
        }
        let mut ids = HashSet::new();
        for r in &req.rollouts {
            if !ids.insert(r.id.as_str()) {
                return Err(RequestError::Invalid(format!("duplicate rollout id {}", r.id)));
            }
            if r.token_count == 0 {
                return Err(RequestError::Invalid(format!("rollout {}: token_count must be >= 1", r.id)));
            }
        }
        let record = self.dataset.get(&req.record_id).ok_or(RequestError::UnknownRecord)?;
        let mut scoring = self.scoring.clone();
        scoring.rewards = scoring.rewards.with_lambdas(req.lambda1, req.lambda2);
        scoring.rewards.validate().map_err(|e| RequestError::Invalid(e.to_string()))?;
        let rollouts = req
            .rollouts
            .iter()
            .map(|r| Rollout::new(r.id.clone(), r.response_text.clone(), r.token_count))
            .collect();
        let group = score_group(rollouts, record, &scoring, self.executor.as_ref(), &self.judge)
            .map_err(|e| RequestError::Internal(e.to_string()))?;
        let rollouts = group
            .rollouts
            .iter()
            .zip(&group.advantages)
            .map(|(r, &advantage)| {
                let b = r
                    .breakdown
                    .ok_or_else(|| RequestError::Internal(format!("rollout {} left unscored", r.id)))?;
                Ok(RolloutReward {
                    id: r.id.clone(),
                    r_piece: b.r_piece,
                    r_table: b.r_table,
                    r_sim: b.r_sim,
                    r_total: b.r_total,
                    advantage,
                    stage: b.stage,
                    sim_status: b.sim_status,
                    error: r.error.clone(),
                })
            })
            .collect::<Result<Vec<_>, RequestError>>()?;
        Ok(RewardResponse {
            group_id: req.group_id.clone(),
            keep: group.keep,
            mu: group.mu,
            sigma: group.sigma,
            rollouts,
        })
    }
}

pub fn build_executor(cfg: &EngineConfig) -> Result<Arc<dyn Executor>, Error> {
    let sb = &cfg.sandbox;
    Ok(match sb.executor {
        ExecutorKind::Mock => {
            let path = sb
                .mock_script
                .as_ref()
                .ok_or_else(|| Error::Config("mock executor requires sandbox mock_script".into()))?;
            let text = std::fs::read_to_string(path)
                .map_err(|e| Error::Config(format!("mock script {}: {e}", path.display())))?;
            Arc::new(ScriptedExecutor::from_jsonl(&text)?)
        }
        ExecutorKind::Process => {
            let mut ex = ProcessExecutor::new(sb.runner.clone(), sb.max_concurrent);
            if let Some(dir) = &sb.scratch_root {
                ex = ex.with_scratch_root(dir);
            }
            Arc::new(ex)
        }
    })
}
