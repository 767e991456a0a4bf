//! Simulated user: judges success, demonstrates, verifies counterfactuals and
//! labels relevance from a ground-truth reward, with configurable noise.

pub mod expert;
pub mod reward;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::concept::{ConceptEdit, ConceptRef};
use crate::env::{SceneDescriptor, Trajectory};
use crate::error::{DfaError, Result};
pub use expert::{expert_actions, expert_demo};
pub use reward::{success, HazardClause, Relevance, RewardSpec};

/// Answer accuracies of a simulated user.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UserConfig {
    /// Probability that verification and relevance answers are correct.
    pub relevance_accuracy: f64,
    /// Probability that a behaviour-only guess names the true concept.
    pub identification_accuracy: f64,
    pub seed: u64,
}

impl UserConfig {
    pub fn oracle(seed: u64) -> Self {
        Self { relevance_accuracy: 1.0, identification_accuracy: 1.0, seed }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("relevance_accuracy", self.relevance_accuracy), ("identification_accuracy", self.identification_accuracy)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(DfaError::InvalidConfig(format!("{name} must lie in [0, 1], got {v}")));
            }
        }
        Ok(())
    }
}

/// A logged answer next to its ground truth.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Answer<T> {
    pub given: T,
    pub truth: T,
}

#[derive(Clone, Debug)]
pub struct UserModel {
    pub reward: RewardSpec,
    /// The concept that actually shifted, if any.
    pub shifted: Option<ConceptRef>,
    pub config: UserConfig,
    rng: ChaCha8Rng,
}

impl UserModel {
    pub fn new(reward: RewardSpec, shifted: Option<ConceptRef>, config: UserConfig) -> Result<Self> {
        config.validate()?;
        reward.validate()?;
        let rng = ChaCha8Rng::seed_from_u64(config.seed);
        Ok(Self { reward, shifted, config, rng })
    }

    fn noisy(&mut self, truth: bool) -> bool {
        if self.rng.gen_bool(self.config.relevance_accuracy) {
            truth
        } else {
            !truth
        }
    }

    /// Noiseless success judgment.
    pub fn judge_success(&self, traj: &Trajectory) -> bool {
        success(traj, &self.reward)
    }

    pub fn provide_demo(&self, scene: &SceneDescriptor) -> Result<Trajectory> {
        expert_demo(scene, &self.reward)
    }

    /// Valid when the counterfactual rollout achieves the intended reward and
    /// the edit names exactly the concept that shifted.
    pub fn verify_counterfactual(&mut self, edit: &ConceptEdit, cf: &Trajectory) -> Answer<bool> {
        let names_shift = match &self.shifted {
            Some(s) => edit.concept_refs().into_iter().eq(std::iter::once(s.clone())),
            None => false,
        };
        let truth = names_shift && success(cf, &self.reward);
        Answer { given: self.noisy(truth), truth }
    }

    /// TR if any slot the edit touches is task-relevant, otherwise TI.
    pub fn label_relevance(&mut self, edit: &ConceptEdit) -> Answer<Relevance> {
        let truth = if edit.concept_refs().iter().any(|c| self.reward.relevance_of(c) == Relevance::Tr) {
            Relevance::Tr
        } else {
            Relevance::Ti
        };
        let correct = self.rng.gen_bool(self.config.relevance_accuracy);
        Answer { given: if correct { truth } else { truth.flipped() }, truth }
    }

    /// Identify the shifted concept from behaviour alone: the true concept
    /// when a uniform draw falls below the identification accuracy,
    /// otherwise a uniform pick from `pool`, which may still be the truth.
    /// Both draws are always made, so runs at equal seeds and different
    /// accuracies are coupled: raising the accuracy only turns wrong picks
    /// into right ones.
    pub fn behaviour_only_guess(&mut self, pool: &[ConceptRef]) -> Option<ConceptRef> {
        let u: f64 = self.rng.gen();
        let pick = (!pool.is_empty()).then(|| self.rng.gen_range(0..pool.len()));
        match &self.shifted {
            Some(truth) if u < self.config.identification_accuracy => Some(truth.clone()),
            _ => pick.map(|i| pool[i].clone()),
        }
    }
}
