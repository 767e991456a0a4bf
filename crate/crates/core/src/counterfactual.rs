//! Minimum-edit counterfactual search: find the smallest concept edit of the
//! test scene under which the policy reproduces the user's demonstration.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::concept::{abstract_scene, edit_distance, edit_scene, enumerate_edits, ConceptEdit, ConceptSchema, EnumerationOrder};
use crate::env::{nav2d, rollout, Action, ActionTrace, Policy, SceneDescriptor, Trajectory};
use crate::error::{DfaError, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchConfig {
    /// Per-step L1 bound on continuous action differences (strict).
    pub action_tolerance: f64,
    pub max_edits: usize,
    pub presence_first: bool,
    /// Candidates rolled out concurrently per batch; 1 is sequential.
    pub parallelism: usize,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self { action_tolerance: nav2d::MAX_STEP / 2.0, max_edits: 2, presence_first: true, parallelism: 1 }
    }
}

impl SearchConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.action_tolerance > 0.0 && self.action_tolerance.is_finite()) {
            return Err(DfaError::InvalidConfig(format!("action tolerance must be positive, got {}", self.action_tolerance)));
        }
        if self.max_edits == 0 {
            return Err(DfaError::InvalidConfig("max_edits must be at least 1".into()));
        }
        if self.parallelism == 0 {
            return Err(DfaError::InvalidConfig("parallelism must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SearchStatus {
    Found,
    None,
}

/// A candidate whose realization or rollout failed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SkippedCandidate {
    pub index: usize,
    pub edit: ConceptEdit,
    pub error: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CounterfactualResult {
    pub status: SearchStatus,
    pub edit: Option<ConceptEdit>,
    pub scene: Option<SceneDescriptor>,
    /// Replayable counterfactual rollout.
    pub trajectory: Option<ActionTrace>,
    /// Directives in the winning edit.
    pub edit_count: usize,
    /// Concept blocks that differ between the test and counterfactual scenes.
    pub block_count: usize,
    /// Candidates considered, in enumeration order, up to and including the winner.
    pub candidates_evaluated: usize,
    pub skipped: Vec<SkippedCandidate>,
}

impl CounterfactualResult {
    pub fn is_found(&self) -> bool {
        self.status == SearchStatus::Found
    }

    /// Re-run the recorded counterfactual rollout.
    pub fn replay(&self) -> Result<Option<Trajectory>> {
        self.trajectory.as_ref().map(ActionTrace::replay).transpose()
    }
}

/// Per-step distances: L1 for displacements, 0/1 mismatch for tokens.
pub fn action_distance(a: &[Action], b: &[Action]) -> Result<Vec<f64>> {
    if a.len() != b.len() {
        return Err(DfaError::LengthMismatch { expected: b.len(), got: a.len() });
    }
    a.iter()
        .zip(b)
        .map(|pair| match pair {
            (Action::Continuous(x), Action::Continuous(y)) => Ok((x[0] - y[0]).abs() + (x[1] - y[1]).abs()),
            (Action::Discrete(x), Action::Discrete(y)) => Ok(if x == y { 0.0 } else { 1.0 }),
            (x, y) => Err(DfaError::MalformedAction(format!("cannot compare {x:?} with {y:?}"))),
        })
        .collect()
}

fn actions_match(cf: &[Action], demo: &[Action], cfg: &SearchConfig) -> bool {
    match action_distance(cf, demo) {
        Ok(d) => match demo.first() {
            Some(Action::Discrete(_)) => d.iter().all(|&x| x == 0.0),
            _ => d.iter().all(|&x| x < cfg.action_tolerance),
        },
        Err(_) => false,
    }
}

/// Every step within tolerance (continuous) or identical (discrete).
pub fn matches(cf: &Trajectory, demo: &Trajectory, cfg: &SearchConfig) -> bool {
    cf.domain() == demo.domain() && actions_match(&cf.actions(), &demo.actions(), cfg)
}

enum Outcome {
    Match(Trajectory),
    Miss,
    Skipped(String),
}

fn evaluate<P: Policy + ?Sized>(
    policy: &P,
    scene: &SceneDescriptor,
    edit: &ConceptEdit,
    schema: &ConceptSchema,
    demo: &[Action],
    cfg: &SearchConfig,
) -> Outcome {
    let result = edit_scene(scene, edit, schema).and_then(|cf| rollout(policy, &cf));
    match result {
        Ok(traj) if actions_match(&traj.actions(), demo, cfg) => Outcome::Match(traj),
        Ok(_) => Outcome::Miss,
        Err(e) => Outcome::Skipped(e.to_string()),
    }
}

fn check_inputs(scene: &SceneDescriptor, demo: &Trajectory, cfg: &SearchConfig) -> Result<()> {
    cfg.validate()?;
    if demo.domain() != scene.domain {
        return Err(DfaError::DomainMismatch { expected: scene.domain.to_string(), got: demo.domain().to_string() });
    }
    if demo.initial != *scene {
        return Err(DfaError::InvalidScene("demonstration does not start at the test scene".into()));
    }
    Ok(())
}

fn finish(
    scene: &SceneDescriptor,
    schema: &ConceptSchema,
    winner: Option<(usize, ConceptEdit, Trajectory)>,
    considered: usize,
    skipped: Vec<SkippedCandidate>,
) -> Result<CounterfactualResult> {
    let Some((index, edit, traj)) = winner else {
        if !skipped.is_empty() && skipped.len() == considered {
            tracing::warn!(skipped = skipped.len(), "every counterfactual candidate failed to evaluate");
        }
        return Ok(CounterfactualResult {
            status: SearchStatus::None,
            edit: None,
            scene: None,
            trajectory: None,
            edit_count: 0,
            block_count: 0,
            candidates_evaluated: considered,
            skipped,
        });
    };
    let block_count = edit_distance(&abstract_scene(scene, schema)?, &abstract_scene(&traj.initial, schema)?)?;
    Ok(CounterfactualResult {
        status: SearchStatus::Found,
        edit_count: edit.cardinality(),
        edit: Some(edit),
        scene: Some(traj.initial.clone()),
        trajectory: Some(traj.with_provenance(crate::env::Provenance::Counterfactual).trace()),
        block_count,
        candidates_evaluated: index + 1,
        skipped,
    })
}

/// First candidate, in enumeration order, whose rollout reproduces `demo`.
///
/// Candidates are evaluated in batches of `cfg.parallelism`; the winner is
/// chosen by enumeration index, so the result does not depend on the width.
pub fn search_min_edit<P: Policy + Sync + ?Sized>(
    policy: &P,
    scene: &SceneDescriptor,
    demo: &Trajectory,
    schema: &ConceptSchema,
    cfg: &SearchConfig,
) -> Result<CounterfactualResult> {
    check_inputs(scene, demo, cfg)?;
    let cv = abstract_scene(scene, schema)?;
    let order = EnumerationOrder { presence_first: cfg.presence_first };
    let candidates = enumerate_edits(&cv, schema, cfg.max_edits, order)?;
    let target = demo.actions();
    let mut skipped = Vec::new();
    for (batch_no, batch) in candidates.chunks(cfg.parallelism).enumerate() {
        let base = batch_no * cfg.parallelism;
        let outcomes: Vec<Outcome> = if cfg.parallelism == 1 {
            batch.iter().map(|e| evaluate(policy, scene, e, schema, &target, cfg)).collect()
        } else {
            batch.par_iter().map(|e| evaluate(policy, scene, e, schema, &target, cfg)).collect()
        };
        for (offset, outcome) in outcomes.into_iter().enumerate() {
            let index = base + offset;
            match outcome {
                Outcome::Match(traj) => {
                    return finish(scene, schema, Some((index, batch[offset].clone(), traj)), index + 1, skipped);
                }
                Outcome::Miss => {}
                Outcome::Skipped(error) => {
                    tracing::debug!(index, %error, "counterfactual candidate skipped");
                    skipped.push(SkippedCandidate { index, edit: batch[offset].clone(), error });
                }
            }
        }
    }
    finish(scene, schema, None, candidates.len(), skipped)
}

/// Exhaustive reference: evaluates every candidate in plain schema order
/// and returns the first satisfier of minimum cardinality.
pub fn brute_force_oracle<P: Policy + ?Sized>(
    policy: &P,
    scene: &SceneDescriptor,
    demo: &Trajectory,
    schema: &ConceptSchema,
    cfg: &SearchConfig,
) -> Result<CounterfactualResult> {
    check_inputs(scene, demo, cfg)?;
    let cv = abstract_scene(scene, schema)?;
    let candidates = enumerate_edits(&cv, schema, cfg.max_edits, EnumerationOrder { presence_first: false })?;
    let target = demo.actions();
    let mut best: Option<(usize, ConceptEdit, Trajectory)> = None;
    let mut skipped = Vec::new();
    for (index, edit) in candidates.iter().enumerate() {
        match evaluate(policy, scene, edit, schema, &target, cfg) {
            Outcome::Match(traj) => {
                if best.as_ref().is_none_or(|(_, e, _)| edit.cardinality() < e.cardinality()) {
                    best = Some((index, edit.clone(), traj));
                }
            }
            Outcome::Miss => {}
            Outcome::Skipped(error) => skipped.push(SkippedCandidate { index, edit: edit.clone(), error }),
        }
    }
    let mut result = finish(scene, schema, best, candidates.len(), skipped)?;
    result.candidates_evaluated = candidates.len();
    Ok(result)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{replay, Domain, Observation, Provenance, Token};

    #[test]
    fn distances_are_l1_or_mismatch() {
        let a = [Action::Continuous([0.1, 0.0])];
        let b = [Action::Continuous([0.0, 0.1])];
        assert!((action_distance(&a, &b).unwrap()[0] - 0.2).abs() < 1e-12);
        let x = [Action::Discrete(Token::Up), Action::Discrete(Token::Left)];
        let y = [Action::Discrete(Token::Up), Action::Discrete(Token::Right)];
        assert_eq!(action_distance(&x, &y).unwrap(), vec![0.0, 1.0]);
        assert!(action_distance(&x, &y[..1]).is_err());
    }

    #[test]
    fn tolerance_is_strict() {
        let scene = nav2d::train_scene("red");
        let zeros = vec![Action::Continuous([0.0, 0.0]); nav2d::HORIZON];
        let mut shifted = zeros.clone();
        shifted[3] = Action::Continuous([0.03, 0.02]);
        let demo = replay(&scene, &zeros, Provenance::HumanDemo).unwrap();
        let cf = replay(&scene, &shifted, Provenance::Rollout).unwrap();
        let cfg = SearchConfig::default();
        assert!(matches(&demo, &demo, &cfg));
        assert!(!matches(&cf, &demo, &cfg));
        shifted[3] = Action::Continuous([0.03, 0.0199]);
        assert!(matches(&replay(&scene, &shifted, Provenance::Rollout).unwrap(), &demo, &cfg));
    }

    #[test]
    fn policy_reading_goal_color_is_explained_by_recolor() {
        // Heads for the goal only when it is red; otherwise idles.
        let policy = |obs: &Observation| -> Result<Action> {
            let v = obs.as_slice();
            let i = (32 * 36 + 32) * 3;
            let red = v[i] > 0.9 && v[i + 1] < 0.1 && v[i + 2] < 0.1;
            Ok(Action::Continuous(if red { [0.05, 0.05] } else { [0.0, 0.0] }))
        };
        let schema = Domain::Nav2d.schema();
        let test = nav2d::train_scene("yellow");
        let red_run = rollout(&policy, &nav2d::train_scene("red")).unwrap();
        let demo = replay(&test, &red_run.actions(), Provenance::HumanDemo).unwrap();
        let cfg = SearchConfig::default();
        let found = search_min_edit(&policy, &test, &demo, &schema, &cfg).unwrap();
        assert!(found.is_found());
        assert_eq!(found.edit_count, 1);
        assert_eq!(found.block_count, 1);
        assert_eq!(found.scene.as_ref().unwrap().object("goal").unwrap().color(), Some("red"));
        let brute = brute_force_oracle(&policy, &test, &demo, &schema, &cfg).unwrap();
        assert_eq!(brute.edit, found.edit);
        assert_eq!(brute.candidates_evaluated, crate::concept::count_edits(&abstract_scene(&test, &schema).unwrap(), &schema, 2));
        let replayed = found.replay().unwrap().unwrap();
        assert!(matches(&replayed, &demo, &cfg));
        let wide = SearchConfig { parallelism: 4, ..cfg };
        assert_eq!(search_min_edit(&policy, &test, &demo, &schema, &wide).unwrap(), found);
    }

    #[test]
    fn demo_must_start_at_test_scene() {
        let policy = |_: &Observation| -> Result<Action> { Ok(Action::Continuous([0.0, 0.0])) };
        let demo = replay(&nav2d::train_scene("red"), &vec![Action::Continuous([0.0, 0.0]); 20], Provenance::HumanDemo).unwrap();
        let err = search_min_edit(&policy, &nav2d::train_scene("blue"), &demo, &Domain::Nav2d.schema(), &SearchConfig::default());
        assert!(err.is_err());
    }
}
