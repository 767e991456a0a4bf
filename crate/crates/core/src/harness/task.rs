//! Train tasks, the five test-time shifts, and evaluation scenes.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::concept::{abstract_scene, edit_distance, ConceptRef};
use crate::env::{doorkey, nav2d, Domain, Position, SceneDescriptor, SceneObject, Trajectory, COLORS, LAVA_COLORS};
use crate::error::{DfaError, Result};
use crate::oracle::expert::{doorkey_plan, segment_distance, DETOUR_TRIGGER};
use crate::oracle::{expert_demo, HazardClause, Relevance, RewardSpec};

pub const TRAIN_DEMOS: usize = 10;
pub const EVAL_SCENES: usize = 10;
/// Half-width of the start jitter applied to all but the first navigation demo.
pub const NAV_START_JITTER: f64 = 0.04;

/// Spawn spots at least 0.25 from the start-goal diagonal.
pub const NAV_OFF_PATH: [(f64, f64); 6] = [(0.3, 0.7), (0.7, 0.3), (0.2, 0.6), (0.6, 0.2), (0.4, 0.8), (0.8, 0.4)];
/// Spawn spots on the start-goal diagonal.
pub const NAV_ON_PATH: [(f64, f64); 5] = [(0.3, 0.3), (0.4, 0.4), (0.5, 0.5), (0.6, 0.6), (0.7, 0.7)];

/// Alternative locations used by the door-key "other" shift.
pub const DOORKEY_MOVES: [(&str, doorkey::Cell); 3] = [("key", (3, 3)), ("door", (4, 6)), ("goal", (7, 2))];

// Independent random streams per purpose, so adding draws to one never
// perturbs another.
const STREAM_TRAIN: u64 = 1;
const STREAM_SHIFT: u64 = 2;
const STREAM_EVAL: u64 = 3;

pub(crate) fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShiftKind {
    ConceptTi,
    ConceptTr,
    DistractorTi,
    DistractorTr,
    Other,
}

impl ShiftKind {
    pub const ALL: [ShiftKind; 5] =
        [ShiftKind::ConceptTi, ShiftKind::ConceptTr, ShiftKind::DistractorTi, ShiftKind::DistractorTr, ShiftKind::Other];

    pub fn name(self) -> &'static str {
        match self {
            ShiftKind::ConceptTi => "concept_ti",
            ShiftKind::ConceptTr => "concept_tr",
            ShiftKind::DistractorTi => "distractor_ti",
            ShiftKind::DistractorTr => "distractor_tr",
            ShiftKind::Other => "other",
        }
    }

    /// Shifts whose changed concept does not matter to the intended reward.
    pub fn is_ti(self) -> bool {
        matches!(self, ShiftKind::ConceptTi | ShiftKind::DistractorTi)
    }

    pub fn allowed() -> Vec<&'static str> {
        ShiftKind::ALL.iter().map(|s| s.name()).collect()
    }
}

impl fmt::Display for ShiftKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ShiftKind {
    type Err = DfaError;

    fn from_str(s: &str) -> Result<Self> {
        ShiftKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| DfaError::InvalidConfig(format!("unknown shift {s:?}; allowed: {}", ShiftKind::allowed().join(", "))))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainTask {
    pub domain: Domain,
    pub seed: u64,
    pub scene: SceneDescriptor,
    pub reward: RewardSpec,
    pub demos: Vec<Trajectory>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub id: String,
    pub domain: Domain,
    pub seed: u64,
    pub shift: ShiftKind,
    pub train_scene: SceneDescriptor,
    pub test_scene: SceneDescriptor,
    /// The concept slot that changed; none for "other" shifts.
    pub shifted: Option<ConceptRef>,
    pub reward: RewardSpec,
}

fn color_ref(object: &str) -> ConceptRef {
    ConceptRef::Instantiation { object: object.into(), concept: "color".into() }
}

fn set_color(scene: &mut SceneDescriptor, object: &str, color: &str) {
    if let Some(o) = scene.object_mut(object) {
        o.concepts.insert("color".into(), color.into());
    }
}

fn other_color<R: Rng>(rng: &mut R, palette: &[&'static str], avoid: &[&str]) -> &'static str {
    let options: Vec<&'static str> = palette.iter().copied().filter(|c| !avoid.contains(c)).collect();
    options[rng.gen_range(0..options.len())]
}

/// Train scene plus ten expert demonstrations. Navigation demos after the
/// first start from a jittered agent position; door-key demos after the
/// first start from a random free cell of the left room.
pub fn gen_train_task(domain: Domain, seed: u64) -> Result<TrainTask> {
    let mut rng = stream(seed, STREAM_TRAIN);
    let scene = match domain {
        Domain::Nav2d => nav2d::train_scene(COLORS[rng.gen_range(0..COLORS.len())]),
        Domain::Doorkey => {
            let mut colors = COLORS;
            colors.shuffle(&mut rng);
            doorkey::train_scene(colors[0], colors[1], colors[2])
        }
    };
    let reward = RewardSpec::any_goal(domain);
    let mut demos = Vec::with_capacity(TRAIN_DEMOS);
    for i in 0..TRAIN_DEMOS {
        let mut start = scene.clone();
        if i > 0 {
            start.agent = match domain {
                Domain::Nav2d => {
                    let (x, y) = nav2d::AGENT_START;
                    let j = NAV_START_JITTER;
                    (x + rng.gen_range(-j..=j), y + rng.gen_range(-j..=j)).into()
                }
                Domain::Doorkey => loop {
                    let cell = Position::from((rng.gen_range(1..doorkey::WALL_COL), rng.gen_range(1..doorkey::GRID - 1)));
                    if doorkey::placement_free(&start, crate::env::AGENT, cell) {
                        break cell;
                    }
                },
            };
        }
        demos.push(expert_demo(&start, &reward)?);
    }
    Ok(TrainTask { domain, seed, scene, reward, demos })
}

/// Cells the canonical door-key plan walks through, including the start.
fn doorkey_path(scene: &SceneDescriptor, reward: &RewardSpec) -> Result<Vec<doorkey::Cell>> {
    let demo = expert_demo(scene, reward)?;
    let mut cells = Vec::new();
    for s in demo.states() {
        let c = doorkey::agent_cell(&s.scene);
        if !cells.contains(&c) {
            cells.push(c);
        }
    }
    Ok(cells)
}

fn floor_cells() -> impl Iterator<Item = doorkey::Cell> {
    (0..doorkey::GRID).flat_map(|r| (0..doorkey::GRID).map(move |c| (c, r))).filter(|&c| doorkey::is_floor(c))
}

/// Spawn position for a distractor, on the agent's way (`in_way`) or clear of it.
fn distractor_spot<R: Rng>(rng: &mut R, train: &TrainTask, in_way: bool) -> Result<Position> {
    let scene = &train.scene;
    match train.domain {
        Domain::Nav2d => {
            let spots: &[(f64, f64)] = if in_way { &NAV_ON_PATH } else { &NAV_OFF_PATH };
            Ok(spots[rng.gen_range(0..spots.len())].into())
        }
        Domain::Doorkey => {
            let path = doorkey_path(scene, &train.reward)?;
            let fixed: Vec<doorkey::Cell> = ["key", "door", "goal"].iter().filter_map(|o| doorkey::cell_of(scene, o)).collect();
            let candidates: Vec<doorkey::Cell> = if in_way {
                path.iter()
                    .copied()
                    .filter(|c| doorkey::is_floor(*c) && !fixed.contains(c) && *c != doorkey::agent_cell(scene))
                    .filter(|&c| {
                        // The task must stay solvable around the hazard.
                        let mut s = scene.clone();
                        s.objects.push(SceneObject::colored("lava", LAVA_COLORS[0], c.into()));
                        let avoid = RewardSpec::any_goal(Domain::Doorkey).with_hazard(HazardClause {
                            object: "lava".into(),
                            color: None,
                            relevance: Relevance::Tr,
                        });
                        doorkey_plan(&s, &avoid).is_ok_and(|p| p.len() <= doorkey::HORIZON)
                    })
                    .collect()
            } else {
                floor_cells()
                    .filter(|c| !path.contains(c) && doorkey::placement_free(scene, "lava", (*c).into()))
                    .filter(|c| path.iter().all(|p| !doorkey::adjacent(*p, *c)))
                    .collect()
            };
            if candidates.is_empty() {
                return Err(DfaError::InvalidScene("no cell available for a distractor".into()));
            }
            Ok(candidates[rng.gen_range(0..candidates.len())].into())
        }
    }
}

/// One test task of the requested shift, derived from `train`.
pub fn gen_shift_task(train: &TrainTask, shift: ShiftKind, seed: u64) -> Result<TaskSpec> {
    let mut rng = stream(seed, STREAM_SHIFT);
    let domain = train.domain;
    let mut test = train.scene.clone();
    let goal_color = train.scene.object("goal").and_then(|g| g.color()).unwrap_or("red").to_string();
    let (shifted, reward) = match shift {
        ShiftKind::ConceptTi | ShiftKind::ConceptTr => {
            let object = match (domain, shift) {
                (Domain::Nav2d, _) => "goal",
                (Domain::Doorkey, _) => ["key", "door", "goal"][rng.gen_range(0..3)],
            };
            let old = train.scene.object(object).and_then(|o| o.color()).unwrap_or_default().to_string();
            let new = other_color(&mut rng, &COLORS, &[old.as_str()]);
            set_color(&mut test, object, new);
            let reward = match (shift, object) {
                (ShiftKind::ConceptTi, _) => RewardSpec::any_goal(domain),
                (_, "goal") => RewardSpec::goal_of_color(domain, new),
                (_, other) => RewardSpec::any_goal(domain).with_required_color(other, new),
            };
            (Some(color_ref(object)), reward)
        }
        ShiftKind::DistractorTi | ShiftKind::DistractorTr => {
            let in_way = shift == ShiftKind::DistractorTr;
            let (name, color) = match domain {
                Domain::Nav2d => ("distractor", other_color(&mut rng, &COLORS, &[goal_color.as_str()])),
                Domain::Doorkey => ("lava", LAVA_COLORS[rng.gen_range(0..LAVA_COLORS.len())]),
            };
            let spot = distractor_spot(&mut rng, train, in_way)?;
            test.objects.push(SceneObject::colored(name, color, spot));
            test.sort_objects(&domain.schema());
            let clause = HazardClause {
                object: name.into(),
                color: in_way.then(|| color.to_string()),
                relevance: if in_way { Relevance::Tr } else { Relevance::Ti },
            };
            (Some(ConceptRef::Presence { object: name.into() }), RewardSpec::any_goal(domain).with_hazard(clause))
        }
        ShiftKind::Other => {
            let (object, target): (&str, Position) = match domain {
                Domain::Nav2d => ("goal", nav2d::OTHER_GOAL.into()),
                Domain::Doorkey => {
                    let (o, c) = DOORKEY_MOVES[rng.gen_range(0..DOORKEY_MOVES.len())];
                    (o, c.into())
                }
            };
            if let Some(o) = test.object_mut(object) {
                o.position = target;
            }
            (None, RewardSpec::goal_of_color(domain, &goal_color))
        }
    };
    let task = TaskSpec {
        id: format!("{domain}-{shift}-{seed}"),
        domain,
        seed,
        shift,
        train_scene: train.scene.clone(),
        test_scene: test,
        shifted,
        reward,
    };
    task.validate()?;
    Ok(task)
}

impl TaskSpec {
    /// Checks that the scene delta is the one the shift kind promises.
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(DfaError::InvalidScene(format!("{}: {msg}", self.id)));
        self.train_scene.validate()?;
        self.test_scene.validate()?;
        self.reward.validate()?;
        if self.train_scene.domain != self.domain || self.test_scene.domain != self.domain || self.reward.domain != self.domain {
            return bad("domain disagreement".into());
        }
        let schema = self.domain.schema();
        let (a, b) = (abstract_scene(&self.train_scene, &schema)?, abstract_scene(&self.test_scene, &schema)?);
        let distance = edit_distance(&a, &b)?;
        let positions_equal = self.train_scene.agent == self.test_scene.agent
            && self.train_scene.objects.iter().all(|o| self.test_scene.object(&o.name).is_some_and(|t| t.position == o.position));
        match self.shift {
            ShiftKind::ConceptTi | ShiftKind::ConceptTr => {
                let ok = distance == 1
                    && positions_equal
                    && self.train_scene.objects.len() == self.test_scene.objects.len()
                    && matches!(self.shifted, Some(ConceptRef::Instantiation { .. }));
                if !ok {
                    return bad("concept shift must change exactly one concept block".into());
                }
            }
            ShiftKind::DistractorTi | ShiftKind::DistractorTr => {
                let added: Vec<&SceneObject> =
                    self.test_scene.objects.iter().filter(|o| self.train_scene.object(&o.name).is_none()).collect();
                let ok = added.len() == 1
                    && positions_equal
                    && self.test_scene.objects.len() == self.train_scene.objects.len() + 1
                    && self.train_scene.objects.iter().all(|o| self.test_scene.object(&o.name) == Some(o))
                    && self.shifted == Some(ConceptRef::Presence { object: added[0].name.clone() });
                if !ok {
                    return bad("distractor shift must spawn exactly one object".into());
                }
            }
            ShiftKind::Other => {
                let moved = self
                    .train_scene
                    .objects
                    .iter()
                    .filter(|o| self.test_scene.object(&o.name).is_some_and(|t| t.position != o.position))
                    .count();
                let ok = distance == 0
                    && moved == 1
                    && self.train_scene.agent == self.test_scene.agent
                    && self.shifted.is_none();
                if !ok {
                    return bad("other shift must move exactly one object".into());
                }
            }
        }
        Ok(())
    }

    /// Ten scenes sampled from the intended task: geometry fixed, the
    /// changed object's reward-irrelevant color drawn uniformly. Tasks
    /// without such a concept evaluate on the test scene itself.
    pub fn eval_scenes(&self) -> Vec<SceneDescriptor> {
        let mut rng = stream(self.seed, STREAM_EVAL);
        let resample = match &self.shifted {
            Some(c) if self.shift.is_ti() => Some(c.object().to_string()),
            _ => None,
        };
        (0..EVAL_SCENES)
            .map(|_| {
                let mut scene = self.test_scene.clone();
                if let Some(object) = &resample {
                    let palette: Vec<&str> = match (self.domain, object.as_str()) {
                        (Domain::Doorkey, "lava") => LAVA_COLORS.to_vec(),
                        (Domain::Nav2d, "distractor") => {
                            let goal = self.test_scene.object("goal").and_then(|g| g.color()).unwrap_or_default();
                            COLORS.iter().copied().filter(|c| *c != goal).collect()
                        }
                        _ => COLORS.to_vec(),
                    };
                    set_color(&mut scene, object, palette[rng.gen_range(0..palette.len())]);
                }
                scene
            })
            .collect()
    }

    /// Expert demonstration of the intended task from the test scene.
    pub fn demo(&self) -> Result<Trajectory> {
        expert_demo(&self.test_scene, &self.reward)
    }
}

/// Concept slots a condition may choose to augment: the presence of each
/// spawnable object and every concept of each fixed object.
pub fn concept_pool(domain: Domain) -> Vec<ConceptRef> {
    let schema = domain.schema();
    let mut pool = Vec::new();
    for spec in schema.objects.iter().filter(|o| !o.concepts.is_empty()) {
        if spec.spawnable {
            pool.push(ConceptRef::Presence { object: spec.name.clone() });
        } else {
            pool.extend(
                spec.concepts
                    .iter()
                    .map(|c| ConceptRef::Instantiation { object: spec.name.clone(), concept: c.name.clone() }),
            );
        }
    }
    pool
}

/// Segment distance from a navigation distractor to the start-goal line.
pub fn nav_clearance(task: &TaskSpec, object: &str) -> Option<f64> {
    let p = task.test_scene.object(object)?.position.point()?;
    let a = task.test_scene.agent.point()?;
    let g = task.test_scene.object("goal")?.position.point()?;
    Some(segment_distance(p, a, g))
}

/// True when a navigation distractor lies within the expert's detour trigger.
pub fn nav_in_way(task: &TaskSpec, object: &str) -> bool {
    nav_clearance(task, object).is_some_and(|d| d < DETOUR_TRIGGER)
}
