//! Scripted demonstrators standing in for the user's demonstrations.
//!
//! Navigation: straight-line pursuit of the nearest satisfying goal at an L2
//! speed of one max step, zero actions after arrival. When the straight line
//! would pass an avoided hazard, the agent first visits a waypoint offset
//! perpendicular to the line at `DETOUR_CLEARANCE` from the hazard.
//!
//! Door-key: breadth-first search over (cell, key held, door open), moves
//! tried in token order, never entering an avoided hazard cell; padded with
//! the no-op token.

use std::collections::{HashMap, VecDeque};

use super::reward::{satisfying_goals, success, Relevance, RewardSpec};
use crate::env::{doorkey, nav2d, replay, step, Action, Domain, Provenance, SceneDescriptor, Token, Trajectory, WorldState};
use crate::error::{DfaError, Result};

/// Segment-to-hazard distance below which the navigation expert detours.
pub const DETOUR_TRIGGER: f64 = 0.15;
pub const DETOUR_CLEARANCE: f64 = 0.2;
const ARRIVED: f64 = 1e-9;

fn avoided<'s>(scene: &'s SceneDescriptor, reward: &RewardSpec) -> Vec<&'s crate::env::SceneObject> {
    reward
        .hazards
        .iter()
        .filter(|h| h.relevance == Relevance::Tr)
        .filter_map(|h| {
            scene.object(&h.object).filter(|o| h.color.as_deref().is_none_or(|c| o.color() == Some(c)))
        })
        .collect()
}

pub fn segment_distance(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len2 = dx * dx + dy * dy;
    let t = if len2 == 0.0 { 0.0 } else { (((p.0 - a.0) * dx + (p.1 - a.1) * dy) / len2).clamp(0.0, 1.0) };
    nav2d::distance(p, (a.0 + t * dx, a.1 + t * dy))
}

/// Waypoints from `start` to `goal`, detouring around avoided hazards.
pub fn nav_waypoints(start: (f64, f64), goal: (f64, f64), hazards: &[(f64, f64)]) -> Vec<(f64, f64)> {
    let mut points = vec![goal];
    for &h in hazards {
        if segment_distance(h, start, goal) >= DETOUR_TRIGGER {
            continue;
        }
        let len = nav2d::distance(start, goal).max(1e-12);
        let (ux, uy) = ((goal.0 - start.0) / len, (goal.1 - start.1) / len);
        let inside = |(x, y): (f64, f64)| (0.05..=0.95).contains(&x) && (0.05..=0.95).contains(&y);
        let left = (h.0 - uy * DETOUR_CLEARANCE, h.1 + ux * DETOUR_CLEARANCE);
        let right = (h.0 + uy * DETOUR_CLEARANCE, h.1 - ux * DETOUR_CLEARANCE);
        points.insert(0, if inside(left) { left } else { right });
        break;
    }
    points
}

fn nav_actions(scene: &SceneDescriptor, reward: &RewardSpec) -> Result<Vec<Action>> {
    let start = scene.agent.point().ok_or_else(|| DfaError::InvalidScene("agent needs a point".into()))?;
    let goal = satisfying_goals(scene, reward)
        .into_iter()
        .filter_map(|g| g.position.point())
        .min_by(|a, b| nav2d::distance(start, *a).total_cmp(&nav2d::distance(start, *b)))
        .ok_or(DfaError::NoSatisfyingGoal)?;
    let hazards: Vec<(f64, f64)> = avoided(scene, reward).iter().filter_map(|o| o.position.point()).collect();
    let waypoints = nav_waypoints(start, goal, &hazards);

    let mut pos = start;
    let mut next = 0;
    let mut actions = Vec::with_capacity(nav2d::HORIZON);
    for _ in 0..nav2d::HORIZON {
        while next < waypoints.len() && nav2d::distance(pos, waypoints[next]) <= ARRIVED {
            next += 1;
        }
        let Some(&target) = waypoints.get(next) else {
            actions.push(Action::Continuous([0.0, 0.0]));
            continue;
        };
        let (dx, dy) = (target.0 - pos.0, target.1 - pos.1);
        let dist = (dx * dx + dy * dy).sqrt();
        let d = if dist <= nav2d::MAX_STEP {
            [dx, dy]
        } else {
            [dx / dist * nav2d::MAX_STEP, dy / dist * nav2d::MAX_STEP]
        };
        pos = ((pos.0 + d[0]).clamp(0.0, 1.0), (pos.1 + d[1]).clamp(0.0, 1.0));
        if dist <= nav2d::MAX_STEP {
            // Snap so float drift cannot stall the pursuit.
            pos = target;
        }
        actions.push(Action::Continuous(d));
    }
    Ok(actions)
}

type Key = ((i32, i32), bool, bool);

fn key_of(s: &WorldState) -> Key {
    (doorkey::agent_cell(&s.scene), s.scene.key_held, s.scene.door_open)
}

/// Shortest token plan to a satisfying goal, without padding.
pub fn doorkey_plan(scene: &SceneDescriptor, reward: &RewardSpec) -> Result<Vec<Token>> {
    let goals: Vec<(i32, i32)> =
        satisfying_goals(scene, reward).iter().filter_map(|g| g.position.cell()).collect();
    if goals.is_empty() {
        return Err(DfaError::NoSatisfyingGoal);
    }
    let hazards: Vec<(i32, i32)> = avoided(scene, reward).iter().filter_map(|o| o.position.cell()).collect();
    let start = WorldState { scene: scene.clone(), t: 0 };
    let mut parent: HashMap<Key, (Key, Token)> = HashMap::new();
    let mut queue = VecDeque::from([start.clone()]);
    let root = key_of(&start);
    let mut seen = std::collections::HashSet::from([root]);
    while let Some(state) = queue.pop_front() {
        let here = key_of(&state);
        if goals.contains(&here.0) {
            let mut plan = Vec::new();
            let mut k = here;
            while k != root {
                let (prev, tok) = parent[&k];
                plan.push(tok);
                k = prev;
            }
            plan.reverse();
            return Ok(plan);
        }
        for tok in Token::ALL {
            let (next, _) = step(&state, &Action::Discrete(tok));
            let k = key_of(&next);
            if hazards.contains(&k.0) || !seen.insert(k) {
                continue;
            }
            parent.insert(k, (here, tok));
            queue.push_back(next);
        }
    }
    Err(DfaError::NoPlan("no path reaches a satisfying goal".into()))
}

fn doorkey_actions(scene: &SceneDescriptor, reward: &RewardSpec) -> Result<Vec<Action>> {
    let plan = doorkey_plan(scene, reward)?;
    if plan.len() > doorkey::HORIZON {
        return Err(DfaError::NoPlan(format!("plan needs {} steps", plan.len())));
    }
    let mut actions: Vec<Action> = plan.into_iter().map(Action::Discrete).collect();
    actions.resize(doorkey::HORIZON, Action::Discrete(doorkey::NOOP));
    Ok(actions)
}

pub fn expert_actions(scene: &SceneDescriptor, reward: &RewardSpec) -> Result<Vec<Action>> {
    if scene.domain != reward.domain {
        return Err(DfaError::DomainMismatch { expected: reward.domain.to_string(), got: scene.domain.to_string() });
    }
    match scene.domain {
        Domain::Nav2d => nav_actions(scene, reward),
        Domain::Doorkey => doorkey_actions(scene, reward),
    }
}

/// Expert demonstration; errors if the result would not satisfy `reward`.
pub fn expert_demo(scene: &SceneDescriptor, reward: &RewardSpec) -> Result<Trajectory> {
    let traj = replay(scene, &expert_actions(scene, reward)?, Provenance::HumanDemo)?;
    if !success(&traj, reward) {
        return Err(DfaError::NoPlan(format!("scripted demo misses the task in {}", scene.to_json())));
    }
    Ok(traj)
}

#[cfg(test)]
mod tests {
    use super::super::reward::HazardClause;
    use super::*;
    use crate::env::SceneObject;

    #[test]
    fn nav_demo_runs_the_diagonal_then_stops() {
        let reward = RewardSpec::any_goal(Domain::Nav2d);
        let demo = expert_demo(&nav2d::train_scene("red"), &reward).unwrap();
        let step = 0.1 / 2f64.sqrt();
        for a in &demo.actions()[..11] {
            let Action::Continuous([dx, dy]) = a else { panic!() };
            assert!((dx - step).abs() < 1e-12 && (dy - step).abs() < 1e-12);
        }
        let Action::Continuous([dx, _]) = demo.actions()[11] else { panic!() };
        assert!(dx > 0.0 && dx < step);
        assert!(demo.actions()[12..].iter().all(|a| *a == Action::Continuous([0.0, 0.0])));
        let (x, y) = demo.final_state.scene.agent.point().unwrap();
        assert!(nav2d::distance((x, y), nav2d::TRAIN_GOAL) < 1e-9);
    }

    #[test]
    fn nav_demo_detours_around_avoided_distractor() {
        let mut scene = nav2d::train_scene("red");
        scene.objects.push(SceneObject::colored("distractor", "blue", (0.5, 0.5).into()));
        let reward = RewardSpec::any_goal(Domain::Nav2d).with_hazard(HazardClause {
            object: "distractor".into(),
            color: Some("blue".into()),
            relevance: Relevance::Tr,
        });
        let demo = expert_demo(&scene, &reward).unwrap();
        assert!(success(&demo, &reward));
    }

    #[test]
    fn doorkey_plan_uses_pickup_and_use_once() {
        let scene = doorkey::train_scene("red", "green", "blue");
        let plan = doorkey_plan(&scene, &RewardSpec::any_goal(Domain::Doorkey)).unwrap();
        assert_eq!(plan.iter().filter(|t| **t == Token::Pickup).count(), 1);
        assert_eq!(plan.iter().filter(|t| **t == Token::Use).count(), 1);
        let demo = expert_demo(&scene, &RewardSpec::any_goal(Domain::Doorkey)).unwrap();
        assert_eq!(demo.len(), 35);
        assert_eq!(demo.provenance, Provenance::HumanDemo);
    }

    #[test]
    fn missing_goal_is_an_error() {
        let scene = nav2d::train_scene("red");
        let reward = RewardSpec::goal_of_color(Domain::Nav2d, "blue");
        assert!(matches!(expert_actions(&scene, &reward), Err(DfaError::NoSatisfyingGoal)));
    }
}
