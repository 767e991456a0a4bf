//! Task generation, feedback conditions, and experiment sweeps.

pub mod experiment;
pub mod task;

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::adapt::session::{evaluate, mean};
use crate::adapt::{augment, augment_product, FinetuneSet};
use crate::concept::ConceptRef;
use crate::env::Domain;
use crate::error::{DfaError, Result};
use crate::oracle::{UserConfig, UserModel};
use crate::policy::{finetune, init, train_bc, Architecture, PolicyParams, TrainConfig, DEFAULT_HIDDEN};
pub use experiment::{run_experiment, ExperimentConfig, ExperimentSummary, OUTPUT_DIR_ENV};
pub use task::{concept_pool, gen_shift_task, gen_train_task, ShiftKind, TaskSpec, TrainTask};

/// Who decides which concept to augment.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ConditionKind {
    /// No human: a uniformly random concept, or with `full_product` every
    /// combination of every concept's variants.
    NhRandom {
        #[serde(default)]
        full_product: bool,
    },
    /// Human judging from the failed behaviour alone.
    BaselineH { accuracy: f64 },
    /// Human shown the counterfactual demonstration.
    CfH { accuracy: f64 },
    /// Always the true concept.
    OracleFb,
}

impl ConditionKind {
    pub const DEFAULT_BASELINE_ACCURACY: f64 = 0.3;
    pub const DEFAULT_CF_ACCURACY: f64 = 0.8;

    pub fn defaults() -> [ConditionKind; 4] {
        [
            ConditionKind::NhRandom { full_product: false },
            ConditionKind::BaselineH { accuracy: Self::DEFAULT_BASELINE_ACCURACY },
            ConditionKind::CfH { accuracy: Self::DEFAULT_CF_ACCURACY },
            ConditionKind::OracleFb,
        ]
    }

    pub fn name(&self) -> &'static str {
        match self {
            ConditionKind::NhRandom { .. } => "nh_random",
            ConditionKind::BaselineH { .. } => "baseline_h",
            ConditionKind::CfH { .. } => "cf_h",
            ConditionKind::OracleFb => "oracle_fb",
        }
    }

    /// Probability of naming the true concept outright.
    pub fn accuracy(&self) -> f64 {
        match *self {
            ConditionKind::NhRandom { .. } => 0.0,
            ConditionKind::BaselineH { accuracy } | ConditionKind::CfH { accuracy } => accuracy,
            ConditionKind::OracleFb => 1.0,
        }
    }

    /// Name plus accuracy, unique within a sweep.
    pub fn label(&self) -> String {
        match self {
            ConditionKind::BaselineH { accuracy } | ConditionKind::CfH { accuracy } => format!("{}@{accuracy}", self.name()),
            ConditionKind::NhRandom { full_product: true } => "nh_random+product".to_string(),
            _ => self.name().to_string(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let q = self.accuracy();
        if !(0.0..=1.0).contains(&q) {
            return Err(DfaError::InvalidConfig(format!("{} accuracy must lie in [0, 1], got {q}", self.name())));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainSettings {
    pub learning_rate: f64,
    pub epochs: usize,
    pub hidden: usize,
}

impl Default for TrainSettings {
    fn default() -> Self {
        let cfg = TrainConfig::for_domain(Domain::Nav2d, 0);
        Self { learning_rate: cfg.learning_rate, epochs: cfg.epochs, hidden: DEFAULT_HIDDEN }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FinetuneSettings {
    pub learning_rate: f64,
    pub epochs: usize,
}

impl Default for FinetuneSettings {
    fn default() -> Self {
        Self { learning_rate: 3e-3, epochs: TrainConfig::finetuning(Domain::Nav2d, 0).epochs }
    }
}

/// Behaviour-cloned policy for a train task.
pub fn train_base_policy(train: &TrainTask, settings: &TrainSettings) -> Result<PolicyParams> {
    let arch = Architecture::for_domain(train.domain, settings.hidden);
    let mut cfg = TrainConfig::for_domain(train.domain, train.seed);
    cfg.learning_rate = settings.learning_rate;
    cfg.epochs = settings.epochs;
    Ok(train_bc(init(&arch, train.seed)?, &train.demos, &cfg)?.0)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultRecord {
    pub task_id: String,
    pub domain: Domain,
    pub shift: ShiftKind,
    pub condition: ConditionKind,
    pub seed: u64,
    pub run_seed: u64,
    pub pre_success: f64,
    pub post_success: f64,
    pub eval_scenes: usize,
    pub demos_used: usize,
    pub augmented: usize,
    pub augmented_concept: Option<ConceptRef>,
    pub chose_true_concept: bool,
    pub wall_time_ms: u64,
}

impl ResultRecord {
    /// Everything except timing.
    pub fn same_outcome(&self, other: &ResultRecord) -> bool {
        let mut a = self.clone();
        a.wall_time_ms = other.wall_time_ms;
        a == *other
    }

    /// Identity of the sweep cell this record fills.
    pub fn key(&self) -> String {
        format!("{}|{}|{}", self.task_id, self.condition.label(), self.run_seed)
    }
}

/// One feedback condition on one TI task: choose a concept, augment the
/// single demonstration over it, finetune, and evaluate.
pub fn run_condition(
    base: &PolicyParams,
    task: &TaskSpec,
    condition: ConditionKind,
    finetune_settings: &FinetuneSettings,
    run_seed: u64,
) -> Result<ResultRecord> {
    let started = Instant::now();
    condition.validate()?;
    if !task.shift.is_ti() {
        return Err(DfaError::ConditionMismatch(format!("{} needs a task-irrelevant shift, got {}", condition.name(), task.shift)));
    }
    if base.domain() != task.domain {
        return Err(DfaError::DomainMismatch { expected: task.domain.to_string(), got: base.domain().to_string() });
    }
    let pool = concept_pool(task.domain);
    let demo = task.demo()?;
    let mut set = FinetuneSet::new(demo.clone());
    if let ConditionKind::NhRandom { full_product: true } = condition {
        set.extend(augment_product(&demo, &pool, &task.domain.schema())?)?;
        return finish(base, task, condition, finetune_settings, run_seed, set, None, started);
    }
    // Same seed for every condition, so conditions differ only in accuracy.
    let user_cfg = UserConfig { relevance_accuracy: 1.0, identification_accuracy: condition.accuracy(), seed: run_seed };
    let mut user = UserModel::new(task.reward.clone(), task.shifted.clone(), user_cfg)?;
    let chosen = user.behaviour_only_guess(&pool);
    if let Some(concept) = &chosen {
        set.extend(augment(&demo, concept, &task.domain.schema())?)?;
    }
    finish(base, task, condition, finetune_settings, run_seed, set, chosen, started)
}

#[allow(clippy::too_many_arguments)]
fn finish(
    base: &PolicyParams,
    task: &TaskSpec,
    condition: ConditionKind,
    finetune_settings: &FinetuneSettings,
    run_seed: u64,
    set: FinetuneSet,
    chosen: Option<ConceptRef>,
    started: Instant,
) -> Result<ResultRecord> {
    let mut cfg = TrainConfig::finetuning(task.domain, run_seed);
    cfg.learning_rate = finetune_settings.learning_rate;
    cfg.epochs = finetune_settings.epochs;
    let (adapted, _) = finetune(base, &set.trajectories(), &cfg)?;

    let scenes = task.eval_scenes();
    let pre = evaluate(base, &scenes, &task.reward)?;
    let post = evaluate(&adapted, &scenes, &task.reward)?;
    Ok(ResultRecord {
        task_id: task.id.clone(),
        domain: task.domain,
        shift: task.shift,
        condition,
        seed: task.seed,
        run_seed,
        pre_success: mean(&pre),
        post_success: mean(&post),
        eval_scenes: scenes.len(),
        demos_used: 1,
        augmented: set.augmented_count(),
        chose_true_concept: chosen.is_some() && chosen == task.shifted,
        augmented_concept: chosen,
        wall_time_ms: started.elapsed().as_millis() as u64,
    })
}
