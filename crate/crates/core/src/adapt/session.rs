//! The diagnosis-feedback-adaptation loop as an explicit phase machine.
//!
//! [`DfaSession`] is driven either by a simulated user ([`run_dfa`]) or by
//! HTTP requests; both paths go through the same transitions and produce the
//! same [`SessionLog`].

use serde::{Deserialize, Serialize};

use super::{augment, AugmentationSummary, FinetuneSet};
use crate::concept::ConceptEdit;
use crate::counterfactual::{search_min_edit, CounterfactualResult, SearchConfig};
use crate::env::{replay, rollout, Action, ActionTrace, Provenance, SceneDescriptor, Trajectory};
use crate::error::{DfaError, Result};
use crate::harness::TaskSpec;
use crate::oracle::{success, Relevance, RewardSpec, UserModel};
use crate::policy::{finetune, PolicyParams, TrainConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DfaConfig {
    pub max_rounds: usize,
    pub search: SearchConfig,
    pub finetune_learning_rate: f64,
    pub finetune_epochs: usize,
    pub seed: u64,
}

impl DfaConfig {
    pub fn new(seed: u64) -> Self {
        let ft = crate::harness::FinetuneSettings::default();
        Self {
            max_rounds: 3,
            search: SearchConfig::default(),
            finetune_learning_rate: ft.learning_rate,
            finetune_epochs: ft.epochs,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_rounds == 0 {
            return Err(DfaError::InvalidConfig("max_rounds must be at least 1".into()));
        }
        self.search.validate()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    AwaitingVerdict,
    AwaitingDemo,
    AwaitingFeedback,
    Finetuning,
    Evaluated,
    Closed,
}

impl Phase {
    pub fn name(self) -> &'static str {
        match self {
            Phase::AwaitingVerdict => "awaiting_verdict",
            Phase::AwaitingDemo => "awaiting_demo",
            Phase::AwaitingFeedback => "awaiting_feedback",
            Phase::Finetuning => "finetuning",
            Phase::Evaluated => "evaluated",
            Phase::Closed => "closed",
        }
    }

    /// Requests accepted in this phase.
    pub fn allowed(self) -> &'static [&'static str] {
        match self {
            Phase::AwaitingVerdict => &["verdict"],
            Phase::AwaitingDemo => &["demo"],
            Phase::AwaitingFeedback => &["counterfactual", "feedback"],
            Phase::Finetuning => &["eval"],
            Phase::Evaluated => &["eval"],
            Phase::Closed => &[],
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionStatus {
    Running,
    Succeeded,
    BudgetExhausted,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Feedback {
    pub valid: bool,
    pub relevance: Relevance,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FinetuneMetrics {
    pub set_size: usize,
    pub augmented: usize,
    pub epochs: usize,
    pub first_loss: Option<f64>,
    pub last_loss: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    /// Rollout of the finetuned policy on the test scene.
    pub rollout: ActionTrace,
    pub test_success: bool,
    /// Success on each evaluation scene of the intended task.
    pub scene_success: Vec<bool>,
    pub mean: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub index: usize,
    pub rollout: ActionTrace,
    pub verdict: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub demo: Option<ActionTrace>,
    /// No-op actions appended to a short demonstration.
    #[serde(default)]
    pub demo_padding: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub counterfactual: Option<CounterfactualResult>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub feedback: Option<Feedback>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub augmentation: Option<Vec<AugmentationSummary>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub finetune: Option<FinetuneMetrics>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eval: Option<EvalSummary>,
}

impl RoundRecord {
    fn new(index: usize, rollout: &Trajectory) -> Self {
        Self {
            index,
            rollout: rollout.trace(),
            verdict: None,
            demo: None,
            demo_padding: 0,
            counterfactual: None,
            feedback: None,
            augmentation: None,
            finetune: None,
            eval: None,
        }
    }
}

/// Audit trail of one session. A round opens with a rollout shown to the
/// user; rounds that end in finetuning count against the budget.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SessionLog {
    pub task_id: String,
    pub max_rounds: usize,
    /// Mean success of the starting policy on the evaluation scenes.
    pub pre_eval_mean: f64,
    pub rounds: Vec<RoundRecord>,
    pub status: SessionStatus,
}

impl SessionLog {
    /// Rounds that reached finetuning.
    pub fn adaptation_rounds(&self) -> usize {
        self.rounds.iter().filter(|r| r.finetune.is_some()).count()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("log serializes")
    }
}

/// A demonstration as submitted by a client.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DemoSubmission {
    pub actions: Vec<Action>,
    /// Pad a short sequence with no-op actions instead of rejecting it.
    #[serde(default)]
    pub pad_to_horizon: bool,
    /// Accept a demonstration the server judges unsuccessful.
    #[serde(default)]
    pub allow_failing: bool,
}

impl DemoSubmission {
    pub fn exact(actions: Vec<Action>) -> Self {
        Self { actions, pad_to_horizon: false, allow_failing: false }
    }
}

/// Success of `policy` on each scene under `reward`.
pub fn evaluate(policy: &PolicyParams, scenes: &[SceneDescriptor], reward: &RewardSpec) -> Result<Vec<bool>> {
    scenes.iter().map(|s| Ok(success(&rollout(policy, s)?, reward))).collect()
}

pub fn mean(flags: &[bool]) -> f64 {
    if flags.is_empty() {
        return 0.0;
    }
    flags.iter().filter(|&&b| b).count() as f64 / flags.len() as f64
}

/// Work handed to a finetuning worker; independent of the session.
#[derive(Clone, Debug)]
pub struct FinetuneJob {
    pub policy: PolicyParams,
    pub set: FinetuneSet,
    pub config: TrainConfig,
    pub test_scene: SceneDescriptor,
    pub eval_scenes: Vec<SceneDescriptor>,
    pub reward: RewardSpec,
}

#[derive(Clone, Debug)]
pub struct FinetuneOutcome {
    pub policy: PolicyParams,
    pub history: Vec<f64>,
    pub rollout: Trajectory,
    pub eval: EvalSummary,
}

impl FinetuneJob {
    pub fn run(self) -> Result<FinetuneOutcome> {
        let (policy, history) = finetune(&self.policy, &self.set.trajectories(), &self.config)?;
        let rollout = rollout(&policy, &self.test_scene)?;
        let scene_success = evaluate(&policy, &self.eval_scenes, &self.reward)?;
        let eval = EvalSummary {
            rollout: rollout.trace(),
            test_success: success(&rollout, &self.reward),
            mean: mean(&scene_success),
            scene_success,
        };
        Ok(FinetuneOutcome { policy, history, rollout, eval })
    }
}

pub struct DfaSession {
    task: TaskSpec,
    config: DfaConfig,
    policy: PolicyParams,
    phase: Phase,
    log: SessionLog,
    eval_scenes: Vec<SceneDescriptor>,
    rollout: Trajectory,
    demo: Option<Trajectory>,
    counterfactual: Option<CounterfactualResult>,
    job: Option<FinetuneJob>,
    job_taken: bool,
}

impl DfaSession {
    pub fn new(policy: PolicyParams, task: TaskSpec, config: DfaConfig) -> Result<Self> {
        config.validate()?;
        task.validate()?;
        if policy.domain() != task.domain {
            return Err(DfaError::DomainMismatch { expected: task.domain.to_string(), got: policy.domain().to_string() });
        }
        let eval_scenes = task.eval_scenes();
        let pre = evaluate(&policy, &eval_scenes, &task.reward)?;
        let first = rollout(&policy, &task.test_scene)?;
        let log = SessionLog {
            task_id: task.id.clone(),
            max_rounds: config.max_rounds,
            pre_eval_mean: mean(&pre),
            rounds: vec![RoundRecord::new(1, &first)],
            status: SessionStatus::Running,
        };
        Ok(Self {
            task,
            config,
            policy,
            phase: Phase::AwaitingVerdict,
            log,
            eval_scenes,
            rollout: first,
            demo: None,
            counterfactual: None,
            job: None,
            job_taken: false,
        })
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    pub fn log(&self) -> &SessionLog {
        &self.log
    }

    pub fn into_parts(self) -> (PolicyParams, SessionLog) {
        (self.policy, self.log)
    }

    pub fn policy(&self) -> &PolicyParams {
        &self.policy
    }

    pub fn task(&self) -> &TaskSpec {
        &self.task
    }

    pub fn config(&self) -> &DfaConfig {
        &self.config
    }

    /// The rollout currently awaiting (or last given) a verdict.
    pub fn rollout(&self) -> &Trajectory {
        &self.rollout
    }

    pub fn demo(&self) -> Option<&Trajectory> {
        self.demo.as_ref()
    }

    pub fn counterfactual(&self) -> Option<&CounterfactualResult> {
        self.counterfactual.as_ref()
    }

    pub fn eval_scenes(&self) -> &[SceneDescriptor] {
        &self.eval_scenes
    }

    fn expect(&self, phase: Phase) -> Result<()> {
        if self.phase == phase {
            Ok(())
        } else {
            Err(DfaError::PhaseViolation {
                phase: self.phase.name().into(),
                allowed: self.phase.allowed().iter().map(|s| s.to_string()).collect(),
            })
        }
    }

    fn round(&mut self) -> &mut RoundRecord {
        self.log.rounds.last_mut().expect("a session always has a round")
    }

    pub fn submit_verdict(&mut self, succeeded: bool) -> Result<Phase> {
        self.expect(Phase::AwaitingVerdict)?;
        self.round().verdict = Some(succeeded);
        if succeeded {
            self.log.status = SessionStatus::Succeeded;
            self.phase = Phase::Closed;
        } else {
            self.phase = Phase::AwaitingDemo;
        }
        Ok(self.phase)
    }

    /// Replays the demonstration, then searches for a counterfactual. With
    /// none found the session goes straight to finetuning on the demo alone.
    pub fn submit_demo(&mut self, submission: DemoSubmission) -> Result<Phase> {
        self.expect(Phase::AwaitingDemo)?;
        let domain = self.task.domain;
        let horizon = domain.horizon();
        let mut actions = submission.actions;
        let padding = horizon.saturating_sub(actions.len());
        if actions.len() > horizon || (padding > 0 && !submission.pad_to_horizon) {
            return Err(DfaError::LengthMismatch { expected: horizon, got: actions.len() });
        }
        for a in &actions {
            a.validate(domain)?;
        }
        actions.resize(horizon, Action::noop(domain));
        let demo = replay(&self.task.test_scene, &actions, Provenance::HumanDemo)?;
        if !submission.allow_failing && !success(&demo, &self.task.reward) {
            return Err(DfaError::DemoFailsTask(self.task.reward.describe()));
        }
        let result = search_min_edit(&self.policy, &self.task.test_scene, &demo, &domain.schema(), &self.config.search)?;
        let found = result.is_found();
        let round = self.round();
        round.demo = Some(demo.trace());
        round.demo_padding = padding;
        round.counterfactual = Some(result.clone());
        self.demo = Some(demo);
        self.counterfactual = Some(result);
        if found {
            self.phase = Phase::AwaitingFeedback;
        } else {
            self.queue_finetune(None)?;
        }
        Ok(self.phase)
    }

    /// Validity and relevance of the proposed counterfactual. Augmentation
    /// happens only for a valid, task-irrelevant edit.
    pub fn submit_feedback(&mut self, valid: bool, relevance: Relevance) -> Result<Phase> {
        self.expect(Phase::AwaitingFeedback)?;
        self.round().feedback = Some(Feedback { valid, relevance });
        let edit = self.counterfactual.as_ref().and_then(|c| c.edit.clone());
        let augment_with = if valid && relevance == Relevance::Ti { edit } else { None };
        self.queue_finetune(augment_with)?;
        Ok(self.phase)
    }

    fn queue_finetune(&mut self, edit: Option<ConceptEdit>) -> Result<()> {
        let demo = self.demo.clone().expect("demo recorded before finetuning");
        let mut set = FinetuneSet::new(demo.clone());
        let schema = self.task.domain.schema();
        if let Some(edit) = edit {
            let mut summaries = Vec::new();
            for concept in edit.concept_refs() {
                let entries = augment(&demo, &concept, &schema)?;
                let edits = entries.iter().filter_map(|e| e.edit.clone()).collect();
                set.extend(entries)?;
                summaries.push(AugmentationSummary { concept, edits, set_size: set.len() });
            }
            self.round().augmentation = Some(summaries);
        }
        let index = self.log.rounds.len() as u64;
        let mut config = TrainConfig::finetuning(self.task.domain, self.config.seed.wrapping_add(index));
        config.learning_rate = self.config.finetune_learning_rate;
        config.epochs = self.config.finetune_epochs;
        self.job = Some(FinetuneJob {
            policy: self.policy.clone(),
            set,
            config,
            test_scene: self.task.test_scene.clone(),
            eval_scenes: self.eval_scenes.clone(),
            reward: self.task.reward.clone(),
        });
        self.job_taken = false;
        self.phase = Phase::Finetuning;
        Ok(())
    }

    /// The queued finetuning set, if the session is finetuning.
    pub fn pending_set(&self) -> Option<&FinetuneSet> {
        self.job.as_ref().map(|j| &j.set)
    }

    /// Hand the finetuning work to a worker; at most one job is in flight.
    pub fn take_job(&mut self) -> Result<Option<FinetuneJob>> {
        self.expect(Phase::Finetuning)?;
        if self.job_taken {
            return Ok(None);
        }
        self.job_taken = true;
        Ok(self.job.clone())
    }

    pub fn complete_job(&mut self, outcome: FinetuneOutcome) -> Result<Phase> {
        self.expect(Phase::Finetuning)?;
        let set = self.job.take().map(|j| j.set).expect("job queued");
        let metrics = FinetuneMetrics {
            set_size: set.len(),
            augmented: set.augmented_count(),
            epochs: outcome.history.len(),
            first_loss: outcome.history.first().copied(),
            last_loss: outcome.history.last().copied(),
        };
        let round = self.round();
        round.finetune = Some(metrics);
        round.eval = Some(outcome.eval);
        self.policy = outcome.policy;
        self.rollout = outcome.rollout;
        self.phase = Phase::Evaluated;
        Ok(self.phase)
    }

    /// Run the pending job inline.
    pub fn run_job(&mut self) -> Result<Phase> {
        let job = self.take_job()?.ok_or_else(|| DfaError::PhaseViolation {
            phase: "finetuning (job in flight)".into(),
            allowed: vec!["eval".into()],
        })?;
        let outcome = job.run()?;
        self.complete_job(outcome)
    }

    pub fn last_eval(&self) -> Option<&EvalSummary> {
        self.log.rounds.iter().rev().find_map(|r| r.eval.as_ref())
    }

    /// After an evaluation: open the next round on the finetuned policy's
    /// rollout, or close once the round budget is spent.
    pub fn advance(&mut self) -> Result<Phase> {
        self.expect(Phase::Evaluated)?;
        self.demo = None;
        self.counterfactual = None;
        if self.log.adaptation_rounds() >= self.config.max_rounds {
            self.log.status = SessionStatus::BudgetExhausted;
            self.phase = Phase::Closed;
        } else {
            let index = self.log.rounds.len() + 1;
            let record = RoundRecord::new(index, &self.rollout);
            self.log.rounds.push(record);
            self.phase = Phase::AwaitingVerdict;
        }
        Ok(self.phase)
    }
}

/// The full loop with a simulated user answering every query.
pub fn run_dfa(policy: PolicyParams, task: &TaskSpec, user: &mut UserModel, config: &DfaConfig) -> Result<(PolicyParams, SessionLog)> {
    if user.reward != task.reward {
        return Err(DfaError::InvalidConfig("user and task disagree on the reward".into()));
    }
    let mut session = DfaSession::new(policy, task.clone(), config.clone())?;
    loop {
        match session.phase() {
            Phase::AwaitingVerdict => {
                let verdict = user.judge_success(session.rollout());
                session.submit_verdict(verdict)?;
            }
            Phase::AwaitingDemo => {
                let demo = user.provide_demo(&task.test_scene)?;
                session.submit_demo(DemoSubmission::exact(demo.actions()))?;
            }
            Phase::AwaitingFeedback => {
                let edit = session.counterfactual().and_then(|c| c.edit.clone()).expect("found counterfactual");
                let cf = session.counterfactual().and_then(|c| c.replay().transpose()).expect("found counterfactual")?;
                let valid = user.verify_counterfactual(&edit, &cf).given;
                let relevance = user.label_relevance(&edit).given;
                session.submit_feedback(valid, relevance)?;
            }
            Phase::Finetuning => {
                session.run_job()?;
            }
            Phase::Evaluated => {
                session.advance()?;
            }
            Phase::Closed => break,
        }
    }
    Ok(session.into_parts())
}
