//! A model-free stand-in for the sampling loop: a scripted policy draws each
//! rollout's outcome class, fixed code templates and mock execution outcomes
//! realize it, and the real scoring pipeline, filter and advantages run on
//! top.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::GoldRecord;
use crate::extraction::{OPEN_FENCE, CLOSE_FENCE};
use crate::judge::{Judge, JudgeConfig};
use crate::rewards::{score_group, ScoringConfig};
use crate::rlmath::{Rollout, RolloutGroup};
use crate::sandbox::{ExecOutcome, ScriptedExecutor};
use crate::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutcomeClass {
    CorrectCode,
    WrongAnswerCode,
    BrokenCode,
    NoCode,
}

impl OutcomeClass {
    pub const ALL: [OutcomeClass; 4] = [Self::CorrectCode, Self::WrongAnswerCode, Self::BrokenCode, Self::NoCode];
}

/// Probabilities of each outcome class, in `OutcomeClass::ALL` order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OutcomeDistribution {
    pub correct_code: f64,
    pub wrong_answer_code: f64,
    pub broken_code: f64,
    pub no_code: f64,
}

impl OutcomeDistribution {
    /// Correct with probability `p`, the rest split evenly.
    pub fn with_correct(p: f64) -> Self {
        let rest = (1.0 - p) / 3.0;
        Self {
            correct_code: p,
            wrong_answer_code: rest,
            broken_code: rest,
            no_code: 1.0 - p - 2.0 * rest,
        }
    }

    fn probs(&self) -> [f64; 4] {
        [self.correct_code, self.wrong_answer_code, self.broken_code, self.no_code]
    }

    pub fn validate(&self) -> Result<(), Error> {
        let p = self.probs();
        if p.iter().any(|x| !(0.0..=1.0).contains(x)) {
            return Err(Error::Config("outcome probabilities must lie in [0, 1]".into()));
        }
        let sum: f64 = p.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("outcome probabilities sum to {sum}, expected 1")));
        }
        Ok(())
    }

    fn sample(&self, rng: &mut impl Rng) -> OutcomeClass {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (class, p) in OutcomeClass::ALL.iter().zip(self.probs()) {
            acc += p;
            if u < acc {
                return *class;
            }
        }
        // Rounding left u above the cumulative sum: last class with mass.
        *OutcomeClass::ALL
            .iter()
            .zip(self.probs())
            .rev()
            .find(|(_, p)| *p > 0.0)
            .map(|(c, _)| c)
            .unwrap_or(&OutcomeClass::NoCode)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptedPolicy {
    pub default: OutcomeDistribution,
    /// Per-record overrides.
    #[serde(default)]
    pub per_record: BTreeMap<String, OutcomeDistribution>,
    pub seed: u64,
}

impl ScriptedPolicy {
    pub fn new(default: OutcomeDistribution, seed: u64) -> Self {
        Self {
            default,
            per_record: BTreeMap::new(),
            seed,
        }
    }

    pub fn validate(&self) -> Result<(), Error> {
        self.default.validate()?;
        self.per_record.values().try_for_each(OutcomeDistribution::validate)
    }

    fn for_record(&self, id: &str) -> &OutcomeDistribution {
        self.per_record.get(id).unwrap_or(&self.default)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub groups_kept: usize,
    /// Fraction of groups discarded by the dynamic-sampling filter.
    pub filter_rate: f64,
    /// Over every rollout of the epoch.
    pub mean_total_reward: f64,
    /// Over rollouts of kept groups; 0 when none was kept.
    pub mean_advantage_abs: f64,
}

/// Code templates for one record. The wrong-answer code differs from the
/// correct code in a single token.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Templates {
    pub correct_code: String,
    pub wrong_answer_code: String,
    pub broken_code: String,
}

impl Templates {
    pub fn for_record(record: &GoldRecord) -> Self {
        let path = record.gold_table_paths.iter().next().unwrap_or("data.csv");
        let body = |agg: &str, col: &str| {
            format!("import pandas as pd\ndf = pd.read_csv(\"{path}\")\nresult = df[{col}].{agg}()\nprint(result)")
        };
        Self {
            correct_code: body("sum", "df.columns[-1]"),
            wrong_answer_code: body("mean", "df.columns[-1]"),
            broken_code: body("sum", "\"__missing__\""),
        }
    }

    pub fn response(&self, class: OutcomeClass) -> String {
        let wrap = |code: &str| format!("Reading the table.\n{OPEN_FENCE}\n{code}\n{CLOSE_FENCE}\n");
        match class {
            OutcomeClass::CorrectCode => wrap(&self.correct_code),
            OutcomeClass::WrongAnswerCode => wrap(&self.wrong_answer_code),
            OutcomeClass::BrokenCode => wrap(&self.broken_code),
            OutcomeClass::NoCode => "The answer cannot be determined without running code.".to_string(),
        }
    }

    /// Register the mock outcome of each template.
    pub fn script(&self, executor: &mut ScriptedExecutor, gold_answer: &str) {
        executor.insert(self.correct_code.clone(), ExecOutcome::success(format!("{gold_answer}\n")));
        executor.insert(self.wrong_answer_code.clone(), ExecOutcome::success("not the answer\n"));
        executor.insert(
            self.broken_code.clone(),
            ExecOutcome::failure("KeyError: '__missing__'\n"),
        );
    }
}

/// Run `epochs` rounds of one group of `g` rollouts per record.
pub fn run_sim(
    policy: &ScriptedPolicy,
    records: &[GoldRecord],
    g: usize,
    epochs: usize,
    cfg: &ScoringConfig,
) -> Result<Vec<EpochStats>, Error> {
    Ok(run_sim_groups(policy, records, g, epochs, cfg)?
        .into_iter()
        .enumerate()
        .map(|(epoch, groups)| epoch_stats(epoch, &groups))
        .collect())
}

/// As `run_sim`, returning the scored groups of every epoch.
pub fn run_sim_groups(
    policy: &ScriptedPolicy,
    records: &[GoldRecord],
    g: usize,
    epochs: usize,
    cfg: &ScoringConfig,
) -> Result<Vec<Vec<RolloutGroup>>, Error> {
    if g < 2 {
        return Err(Error::Config("group size must be at least 2".into()));
    }
    if epochs < 1 {
        return Err(Error::Config("epochs must be at least 1".into()));
    }
    if records.is_empty() {
        return Err(Error::Config("simulation needs at least one record".into()));
    }
    policy.validate()?;
    let templates: Vec<Templates> = records.iter().map(Templates::for_record).collect();
    let mut executor = ScriptedExecutor::new();
    for (t, r) in templates.iter().zip(records) {
        t.script(&mut executor, &r.gold_answer);
    }
    let judge = Judge::new(JudgeConfig::default());
    let mut rng = ChaCha8Rng::seed_from_u64(policy.seed);
    let mut out = Vec::with_capacity(epochs);
    for epoch in 0..epochs {
        // Sampling is sequential so the stream depends only on the seed.
        let draws: Vec<Vec<OutcomeClass>> = records
            .iter()
            .map(|r| {
                let dist = policy.for_record(&r.id);
                (0..g).map(|_| dist.sample(&mut rng)).collect()
            })
            .collect();
        let groups = draws
            .par_iter()
            .enumerate()
            .map(|(ri, classes)| {
                let rollouts = classes
                    .iter()
                    .enumerate()
                    .map(|(i, c)| {
                        Rollout::new(format!("e{epoch}-{}-{i}", records[ri].id), templates[ri].response(*c), 1)
                    })
                    .collect();
                score_group(rollouts, &records[ri], cfg, &executor, &judge)
            })
            .collect::<Result<Vec<_>, _>>()?;
        out.push(groups);
    }
    Ok(out)
}

pub fn epoch_stats(epoch: usize, groups: &[RolloutGroup]) -> EpochStats {
    let kept: Vec<&RolloutGroup> = groups.iter().filter(|g| g.keep).collect();
    let rewards: Vec<f64> = groups.iter().flat_map(|g| g.rewards.iter().copied()).collect();
    let adv: Vec<f64> = kept.iter().flat_map(|g| g.advantages.iter().map(|a| a.abs())).collect();
    let mean = |v: &[f64]| if v.is_empty() { 0.0 } else { v.iter().sum::<f64>() / v.len() as f64 };
    EpochStats {
        epoch,
        groups_kept: kept.len(),
        filter_rate: if groups.is_empty() {
            0.0
        } else {
            1.0 - kept.len() as f64 / groups.len() as f64
        },
        mean_total_reward: mean(&rewards),
        mean_advantage_abs: mean(&adv),
    }
}

/// Stats as CSV with a header row.
pub fn stats_csv(stats: &[EpochStats]) -> Result<String, Error> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for s in stats {
        w.serialize(s).map_err(|e| Error::Io(std::io::Error::other(e)))?;
    }
    if stats.is_empty() {
        w.write_record(["epoch", "groups_kept", "filter_rate", "mean_total_reward", "mean_advantage_abs"])
            .map_err(|e| Error::Io(std::io::Error::other(e)))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(std::io::Error::other(e.to_string())))?;
    Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
}
