//! Group-relative advantages, the dynamic-sampling filter and the clipped
//! surrogate term, as pure scalar functions a trainer can call directly.

use serde::{Deserialize, Serialize};

use crate::extraction::{CodeCandidate, ResponseText};
use crate::judge::Verdict;
use crate::rewards::RewardBreakdown;
use crate::sandbox::{ExecOutcome, ParsedAnswer};
use crate::Error;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClipConfig {
    pub eps_low: f64,
    pub eps_high: f64,
    pub sigma_floor: f64,
}

impl Default for ClipConfig {
    fn default() -> Self {
        Self {
            eps_low: 0.2,
            eps_high: 0.28,
            sigma_floor: 1e-6,
        }
    }
}

impl ClipConfig {
    pub fn validate(&self) -> Result<(), Error> {
        if !(self.eps_low > 0.0 && self.eps_low.is_finite()) {
            return Err(Error::Config("eps_low must be positive".into()));
        }
        if !(self.eps_high > 0.0 && self.eps_high.is_finite()) {
            return Err(Error::Config("eps_high must be positive".into()));
        }
        if !(self.sigma_floor >= 0.0 && self.sigma_floor.is_finite()) {
            return Err(Error::Config("sigma_floor must be non-negative".into()));
        }
        Ok(())
    }
}

/// One candidate response and everything derived from it.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Rollout {
    pub id: String,
    pub response: ResponseText,
    /// Response length in policy tokens; at least 1.
    pub token_count: u64,
    pub code: Option<CodeCandidate>,
    pub exec: Option<ExecOutcome>,
    pub answer: Option<ParsedAnswer>,
    pub verdict: Option<Verdict>,
    pub breakdown: Option<RewardBreakdown>,
    /// Infrastructure failure absorbed into this rollout's stage.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl Rollout {
    pub fn new(id: impl Into<String>, response: impl Into<ResponseText>, token_count: u64) -> Self {
        Self {
            id: id.into(),
            response: response.into(),
            token_count: token_count.max(1),
            code: None,
            exec: None,
            answer: None,
            verdict: None,
            breakdown: None,
            error: None,
        }
    }
}

/// A scored group. All per-rollout vectors have the group's length.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RolloutGroup {
    pub rollouts: Vec<Rollout>,
    pub rewards: Vec<f64>,
    pub correct_flags: Vec<bool>,
    pub mu: f64,
    pub sigma: f64,
    pub advantages: Vec<f64>,
    pub keep: bool,
    /// Some incorrect rollout had code but the group had no correct code to
    /// compare against.
    pub missing_similarity_refs: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Advantages {
    pub mu: f64,
    pub sigma: f64,
    pub advantages: Vec<f64>,
}

/// Mean, population standard deviation, and `(r - mu) / max(sigma, floor)`.
/// A constant group or a zero denominator yields all-zero advantages.
pub fn group_advantages(rewards: &[f64], sigma_floor: f64) -> Result<Advantages, Error> {
    if rewards.is_empty() {
        return Err(Error::Math("group_advantages needs at least one reward".into()));
    }
    // Rounding in the mean of equal values must not leak through a tiny floor.
    if rewards.iter().all(|r| *r == rewards[0]) {
        return Ok(Advantages {
            mu: rewards[0],
            sigma: 0.0,
            advantages: vec![0.0; rewards.len()],
        });
    }
    let n = rewards.len() as f64;
    let mu = rewards.iter().sum::<f64>() / n;
    let sigma = (rewards.iter().map(|r| (r - mu) * (r - mu)).sum::<f64>() / n).sqrt();
    let denom = sigma.max(sigma_floor);
    let advantages = if denom > 0.0 {
        rewards.iter().map(|r| (r - mu) / denom).collect()
    } else {
        vec![0.0; rewards.len()]
    };
    Ok(Advantages { mu, sigma, advantages })
}

/// Keep a group only when some but not all rollouts are correct.
pub fn dynamic_sampling_keep(correct_flags: &[bool]) -> bool {
    let k = correct_flags.iter().filter(|c| **c).count();
    k > 0 && k < correct_flags.len()
}

/// `min(r * A, clip(r, 1 - eps_low, 1 + eps_high) * A)`.
pub fn clipped_surrogate_term(ratio: f64, advantage: f64, cfg: &ClipConfig) -> f64 {
    let clipped = ratio.clamp(1.0 - cfg.eps_low, 1.0 + cfg.eps_high);
    (ratio * advantage).min(clipped * advantage)
}

/// Sum of every per-token term over the total token count of the group.
pub fn token_weighted_objective(per_token_terms: &[Vec<f64>]) -> Result<f64, Error> {
    let tokens: usize = per_token_terms.iter().map(Vec::len).sum();
    if tokens == 0 {
        return Err(Error::Math("token_weighted_objective needs at least one token".into()));
    }
    let total: f64 = per_token_terms.iter().flatten().sum();
    Ok(total / tokens as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn advantage_examples() {
        let a = group_advantages(&[3.0, 1.0], 1e-6).unwrap();
        assert_eq!((a.mu, a.sigma), (2.0, 1.0));
        assert_eq!(a.advantages, vec![1.0, -1.0]);
        let a = group_advantages(&[4.5, 4.5, 0.5, 0.5], 1e-6).unwrap();
        assert_eq!(a.advantages, vec![1.0, 1.0, -1.0, -1.0]);
        let a = group_advantages(&[2.0, 2.0, 2.0], 1e-6).unwrap();
        assert_eq!(a.sigma, 0.0);
        assert_eq!(a.advantages, vec![0.0; 3]);
        let a = group_advantages(&[2.0, 2.0], 0.0).unwrap();
        assert_eq!(a.advantages, vec![0.0; 2]);
        assert!(group_advantages(&[], 1e-6).is_err());
        // Equal rewards give exactly zero advantages whatever their magnitude.
        let a = group_advantages(&[37.4; 3], 1e-6).unwrap();
        assert_eq!((a.mu, a.sigma), (37.4, 0.0));
        assert_eq!(a.advantages, vec![0.0; 3]);
    }

    #[test]
    fn keep_examples() {
        assert!(dynamic_sampling_keep(&[true, false, false]));
        assert!(!dynamic_sampling_keep(&[true, true]));
        assert!(!dynamic_sampling_keep(&[false, false]));
        assert!(!dynamic_sampling_keep(&[true]));
    }

    #[test]
    fn keep_matches_brute_force() {
        for g in 1..=6usize {
            for mask in 0u32..(1 << g) {
                let flags: Vec<bool> = (0..g).map(|i| mask >> i & 1 == 1).collect();
                let count = mask.count_ones() as usize;
                assert_eq!(dynamic_sampling_keep(&flags), count >= 1 && count < g);
            }
        }
    }

    #[test]
    fn clip_examples_are_exact() {
        let cfg = ClipConfig::default();
        assert_eq!(clipped_surrogate_term(1.5, 1.0, &cfg), 1.28);
        assert_eq!(clipped_surrogate_term(0.5, -1.0, &cfg), -0.8);
        for a in [-3.0, -1.0, 0.0, 0.5, 2.0] {
            assert_eq!(clipped_surrogate_term(1.0, a, &cfg), a);
        }
    }

    #[test]
    fn objective_examples() {
        assert_eq!(token_weighted_objective(&[vec![1.0, 1.0], vec![1.0, 1.0]]).unwrap(), 1.0);
        assert_eq!(token_weighted_objective(&[vec![2.0], vec![0.0, 0.0, 0.0]]).unwrap(), 0.5);
        assert!(token_weighted_objective(&[vec![], vec![]]).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(ClipConfig::default().validate().is_ok());
        assert!(ClipConfig { eps_low: 0.0, ..Default::default() }.validate().is_err());
        assert!(ClipConfig { eps_high: -1.0, ..Default::default() }.validate().is_err());
    }

    proptest! {
        #[test]
        fn normalized_moments(rewards in prop::collection::vec(-10.0f64..10.0, 2..17)) {
            let a = group_advantages(&rewards, 1e-6).unwrap();
            if a.sigma > 1e-3 {
                let n = rewards.len() as f64;
                let mean = a.advantages.iter().sum::<f64>() / n;
                let std = (a.advantages.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt();
                prop_assert!(close(mean, 0.0, 1e-9));
                prop_assert!(close(std, 1.0, 1e-6));
            }
        }

        #[test]
        fn shift_and_scale_invariance(rewards in prop::collection::vec(0.0f64..5.0, 2..17), shift in -100.0f64..100.0, scale in 0.01f64..100.0) {
            let base = group_advantages(&rewards, 0.0).unwrap();
            let shifted: Vec<f64> = rewards.iter().map(|r| r + shift).collect();
            let s = group_advantages(&shifted, 0.0).unwrap();
            if base.sigma > 1e-3 {
                for (x, y) in base.advantages.iter().zip(&s.advantages) {
                    prop_assert!(close(*x, *y, 1e-9));
                }
                let scaled: Vec<f64> = rewards.iter().map(|r| r * scale).collect();
                let c = group_advantages(&scaled, 0.0).unwrap();
                for (x, y) in base.advantages.iter().zip(&c.advantages) {
                    prop_assert!(close(*x, *y, 1e-9));
                }
            }
        }

        #[test]
        fn clip_sandwich(ratio in 0.01f64..5.0, adv in -5.0f64..5.0) {
            let cfg = ClipConfig::default();
            let t = clipped_surrogate_term(ratio, adv, &cfg);
            let clipped = ratio.clamp(1.0 - cfg.eps_low, 1.0 + cfg.eps_high);
            prop_assert!(t.abs() <= (ratio * adv).abs().max((clipped * adv).abs()));
            if (1.0 - cfg.eps_low..=1.0 + cfg.eps_high).contains(&ratio) {
                prop_assert_eq!(t, ratio * adv);
            }
        }

        #[test]
        fn objective_matches_flat_sum(groups in prop::collection::vec(prop::collection::vec(-3.0f64..3.0, 1..6), 1..6)) {
            let mut flat = Vec::new();
            for g in &groups {
                for t in g {
                    flat.push(*t);
                }
            }
            let expected = flat.iter().sum::<f64>() / flat.len() as f64;
            prop_assert!(close(token_weighted_objective(&groups).unwrap(), expected, 1e-12));
        }

        #[test]
        fn kept_groups_have_a_correct_rollout(flags in prop::collection::vec(any::<bool>(), 1..10)) {
            if dynamic_sampling_keep(&flags) {
                prop_assert!(flags.iter().any(|f| *f));
            }
        }
    }
}
