use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::concept::ConceptRef;
use crate::env::{nav2d, Domain, SceneDescriptor, Trajectory, WorldState};
use crate::error::{DfaError, Result};

/// Task-irrelevant or task-relevant.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Relevance {
    #[serde(rename = "TI")]
    Ti,
    #[serde(rename = "TR")]
    Tr,
}

impl Relevance {
    pub fn flipped(self) -> Self {
        match self {
            Relevance::Ti => Relevance::Tr,
            Relevance::Tr => Relevance::Ti,
        }
    }
}

impl fmt::Display for Relevance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Relevance::Ti => "TI",
            Relevance::Tr => "TR",
        })
    }
}

/// "ignore the distractor" (TI, no effect on success) or "avoid the red
/// distractor" (TR, any contact with a matching object fails the task).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HazardClause {
    pub object: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub color: Option<String>,
    pub relevance: Relevance,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConceptTag {
    pub concept: ConceptRef,
    pub relevance: Relevance,
}

/// The reward the user actually wants.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RewardSpec {
    pub domain: Domain,
    /// `None` means a goal of any color.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub goal_color: Option<String>,
    #[serde(default)]
    pub hazards: Vec<HazardClause>,
    /// Colors other objects must have, e.g. "using the blue key".
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub required_colors: BTreeMap<String, String>,
    #[serde(default)]
    pub tags: Vec<ConceptTag>,
    pub goal_radius: f64,
}

fn goal_color_ref() -> ConceptRef {
    ConceptRef::Instantiation { object: "goal".into(), concept: "color".into() }
}

impl RewardSpec {
    /// "go to any goal"
    pub fn any_goal(domain: Domain) -> Self {
        Self {
            domain,
            goal_color: None,
            hazards: Vec::new(),
            required_colors: BTreeMap::new(),
            tags: Vec::new(), goal_radius: nav2d::GOAL_RADIUS }
    }

    /// "go to the <color> goal"
    pub fn goal_of_color(domain: Domain, color: &str) -> Self {
        let mut spec = Self::any_goal(domain);
        spec.goal_color = Some(color.to_string());
        spec.tag(goal_color_ref(), Relevance::Tr)
    }

    pub fn tag(mut self, concept: ConceptRef, relevance: Relevance) -> Self {
        self.tags.retain(|t| t.concept != concept);
        self.tags.push(ConceptTag { concept, relevance });
        self
    }

    pub fn with_hazard(mut self, clause: HazardClause) -> Self {
        let presence = ConceptRef::Presence { object: clause.object.clone() };
        let relevance = clause.relevance;
        if clause.color.is_some() && relevance == Relevance::Tr {
            let color = ConceptRef::Instantiation { object: clause.object.clone(), concept: "color".into() };
            self = self.tag(color, Relevance::Tr);
        }
        self.hazards.push(clause);
        self.tag(presence, relevance)
    }

    /// Require `object` to have `color`, e.g. "using the blue key".
    pub fn with_required_color(mut self, object: &str, color: &str) -> Self {
        self.required_colors.insert(object.to_string(), color.to_string());
        self.tag(ConceptRef::Instantiation { object: object.into(), concept: "color".into() }, Relevance::Tr)
    }

    /// Ground-truth relevance of a concept slot; untagged slots are irrelevant.
    pub fn relevance_of(&self, concept: &ConceptRef) -> Relevance {
        self.tags.iter().find(|t| &t.concept == concept).map_or(Relevance::Ti, |t| t.relevance)
    }

    pub fn validate(&self) -> Result<()> {
        if self.goal_color.is_some() && self.relevance_of(&goal_color_ref()) == Relevance::Ti {
            return Err(DfaError::InvalidConfig("a goal color in the predicate cannot be tagged TI".into()));
        }
        for h in self.hazards.iter().filter(|h| h.relevance == Relevance::Tr) {
            if self.relevance_of(&ConceptRef::Presence { object: h.object.clone() }) == Relevance::Ti {
                return Err(DfaError::InvalidConfig(format!("avoided {} cannot be tagged TI", h.object)));
            }
        }
        if self.goal_radius.is_nan() || self.goal_radius <= 0.0 {
            return Err(DfaError::InvalidConfig("goal radius must be positive".into()));
        }
        Ok(())
    }

    pub fn goal_satisfies(&self, color: Option<&str>) -> bool {
        match &self.goal_color {
            None => true,
            Some(c) => color == Some(c.as_str()),
        }
    }

    /// Task prompt, e.g. `go to the yellow goal, avoid the red distractor`.
    pub fn describe(&self) -> String {
        let mut text = match &self.goal_color {
            None => "go to any goal".to_string(),
            Some(c) => format!("go to the {c} goal"),
        };
        for (object, color) in &self.required_colors {
            let verb = if object == "door" { "through" } else { "using" };
            text.push_str(&format!(" {verb} the {color} {object}"));
        }
        for h in &self.hazards {
            let verb = match h.relevance {
                Relevance::Ti => "ignore",
                Relevance::Tr => "avoid",
            };
            match &h.color {
                Some(c) => text.push_str(&format!(", {verb} the {c} {}", h.object)),
                None => text.push_str(&format!(", {verb} the {}", h.object)),
            }
        }
        text
    }
}

/// Cells or points of goals that satisfy `reward` in `scene`.
pub fn satisfying_goals<'s>(scene: &'s SceneDescriptor, reward: &RewardSpec) -> Vec<&'s crate::env::SceneObject> {
    scene.objects.iter().filter(|o| o.name == "goal" && reward.goal_satisfies(o.color())).collect()
}

fn touches_hazard(state: &WorldState, reward: &RewardSpec) -> bool {
    let scene = &state.scene;
    reward.hazards.iter().filter(|h| h.relevance == Relevance::Tr).any(|h| {
        let Some(obj) = scene.object(&h.object) else {
            return false;
        };
        if h.color.as_deref().is_some_and(|c| obj.color() != Some(c)) {
            return false;
        }
        match scene.domain {
            Domain::Nav2d => match (scene.agent.point(), obj.position.point()) {
                (Some(a), Some(p)) => nav2d::footprints_overlap(a, p),
                _ => false,
            },
            Domain::Doorkey => scene.agent.cell().is_some() && scene.agent.cell() == obj.position.cell(),
        }
    })
}

fn at_goal(state: &WorldState, reward: &RewardSpec) -> bool {
    let scene = &state.scene;
    satisfying_goals(scene, reward).iter().any(|g| match scene.domain {
        Domain::Nav2d => match (scene.agent.point(), g.position.point()) {
            (Some(a), Some(p)) => nav2d::distance(a, p) <= reward.goal_radius,
            _ => false,
        },
        Domain::Doorkey => scene.agent.cell().is_some() && scene.agent.cell() == g.position.cell(),
    })
}

/// Navigation: final position within the goal radius of a satisfying goal.
/// Door-key: a satisfying goal cell is occupied at some step. In both, any
/// contact with an avoided hazard fails the task.
pub fn success(traj: &Trajectory, reward: &RewardSpec) -> bool {
    if traj.domain() != reward.domain {
        return false;
    }
    if traj.states().any(|s| touches_hazard(s, reward)) {
        return false;
    }
    let colors_ok = reward
        .required_colors
        .iter()
        .all(|(o, c)| traj.initial.object(o).is_some_and(|obj| obj.color() == Some(c.as_str())));
    if !colors_ok {
        return false;
    }
    match reward.domain {
        Domain::Nav2d => at_goal(&traj.final_state, reward),
        Domain::Doorkey => traj.states().any(|s| at_goal(s, reward)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{replay, Action, Provenance, SceneObject};

    fn nav_traj(goal: &str, actions: Vec<Action>) -> Trajectory {
        replay(&nav2d::train_scene(goal), &actions, Provenance::HumanDemo).unwrap()
    }

    fn diagonal() -> Vec<Action> {
        let mut a = vec![Action::Continuous([0.1, 0.1]); 8];
        a.resize(20, Action::Continuous([0.0, 0.0]));
        a
    }

    #[test]
    fn any_goal_versus_specific_goal() {
        let t = nav_traj("yellow", diagonal());
        assert!(success(&t, &RewardSpec::any_goal(Domain::Nav2d)));
        assert!(success(&t, &RewardSpec::goal_of_color(Domain::Nav2d, "yellow")));
        let blue = nav_traj("blue", diagonal());
        assert!(!success(&blue, &RewardSpec::goal_of_color(Domain::Nav2d, "yellow")));
    }

    #[test]
    fn never_near_goal_fails() {
        let t = nav_traj("red", vec![Action::Continuous([0.0, 0.0]); 20]);
        assert!(!success(&t, &RewardSpec::any_goal(Domain::Nav2d)));
    }

    #[test]
    fn avoided_hazard_contact_fails() {
        let mut scene = nav2d::train_scene("red");
        scene.objects.push(SceneObject::colored("distractor", "blue", (0.5, 0.5).into()));
        let t = replay(&scene, &diagonal(), Provenance::Rollout).unwrap();
        let ignore = RewardSpec::any_goal(Domain::Nav2d).with_hazard(HazardClause {
            object: "distractor".into(),
            color: None,
            relevance: Relevance::Ti,
        });
        assert!(success(&t, &ignore));
        let avoid = RewardSpec::any_goal(Domain::Nav2d).with_hazard(HazardClause {
            object: "distractor".into(),
            color: Some("blue".into()),
            relevance: Relevance::Tr,
        });
        assert!(!success(&t, &avoid));
        avoid.validate().unwrap();
        assert_eq!(avoid.describe(), "go to any goal, avoid the blue distractor");
    }

    #[test]
    fn untagged_concepts_are_irrelevant() {
        let r = RewardSpec::goal_of_color(Domain::Doorkey, "red");
        assert_eq!(r.relevance_of(&goal_color_ref()), Relevance::Tr);
        let key = ConceptRef::Instantiation { object: "key".into(), concept: "color".into() };
        assert_eq!(r.relevance_of(&key), Relevance::Ti);
        let bad = r.tag(goal_color_ref(), Relevance::Ti);
        assert!(bad.validate().is_err());
    }
}
