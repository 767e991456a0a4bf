//! Deterministic simulators for the continuous navigation and door-key domains.

pub mod doorkey;
pub mod nav2d;
pub mod render;
pub mod trajectory;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::concept::{ConceptSchema, ConceptSpec, ObjectSpec};
use crate::error::{DfaError, Result};

pub use render::{render, Observation, OBS_CHANNELS, OBS_HEIGHT, OBS_LEN, OBS_WIDTH};
pub use trajectory::{ActionTrace, Provenance, Step, Trajectory};

pub const AGENT: &str = "agent";
pub const COLORS: [&str; 4] = ["red", "green", "blue", "yellow"];
pub const LAVA_COLORS: [&str; 2] = ["orange", "pink"];

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Domain {
    Nav2d,
    Doorkey,
}

impl Domain {
    pub const ALL: [Domain; 2] = [Domain::Nav2d, Domain::Doorkey];

    pub fn horizon(self) -> usize {
        match self {
            Domain::Nav2d => nav2d::HORIZON,
            Domain::Doorkey => doorkey::HORIZON,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Domain::Nav2d => "nav2d",
            Domain::Doorkey => "doorkey",
        }
    }

    /// Number of policy outputs: a 2-vector for navigation, 6 tokens for door-key.
    pub fn action_dim(self) -> usize {
        match self {
            Domain::Nav2d => 2,
            Domain::Doorkey => Token::ALL.len(),
        }
    }

    pub fn schema(self) -> ConceptSchema {
        let color = |values: &[&str]| ConceptSpec {
            name: "color".into(),
            instantiations: values.iter().map(|s| s.to_string()).collect(),
        };
        let object = |name: &str, values: Option<&[&str]>, spawnable: bool| ObjectSpec {
            name: name.into(),
            concepts: values.map(|v| vec![color(v)]).unwrap_or_default(),
            removable: values.is_some(),
            spawnable,
        };
        let objects = match self {
            Domain::Nav2d => vec![
                object(AGENT, None, false),
                object("goal", Some(&COLORS), false),
                object("distractor", Some(&COLORS), true),
            ],
            Domain::Doorkey => vec![
                object(AGENT, None, false),
                object("key", Some(&COLORS), false),
                object("door", Some(&COLORS), false),
                object("goal", Some(&COLORS), false),
                object("lava", Some(&LAVA_COLORS), true),
            ],
        };
        ConceptSchema::new(objects).expect("built-in schemas are valid")
    }
}

impl fmt::Display for Domain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Domain {
    type Err = DfaError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "nav2d" => Ok(Domain::Nav2d),
            "doorkey" => Ok(Domain::Doorkey),
            other => Err(DfaError::InvalidConfig(format!("unknown domain {other:?} (allowed: nav2d, doorkey)"))),
        }
    }
}

/// Continuous point in the unit square (navigation) or an integer grid cell (door-key).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Position {
    Point { x: f64, y: f64 },
    Cell { col: i32, row: i32 },
}

impl Position {
    pub fn point(self) -> Option<(f64, f64)> {
        match self {
            Position::Point { x, y } => Some((x, y)),
            Position::Cell { .. } => None,
        }
    }

    pub fn cell(self) -> Option<(i32, i32)> {
        match self {
            Position::Cell { col, row } => Some((col, row)),
            Position::Point { .. } => None,
        }
    }
}

impl From<(f64, f64)> for Position {
    fn from((x, y): (f64, f64)) -> Self {
        Position::Point { x, y }
    }
}

impl From<(i32, i32)> for Position {
    fn from((col, row): (i32, i32)) -> Self {
        Position::Cell { col, row }
    }
}

impl fmt::Display for Position {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Position::Point { x, y } => write!(f, "({x:.3}, {y:.3})"),
            Position::Cell { col, row } => write!(f, "[{col}, {row}]"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneObject {
    pub name: String,
    pub concepts: BTreeMap<String, String>,
    pub position: Position,
}

impl SceneObject {
    pub fn colored(name: &str, color: &str, position: Position) -> Self {
        Self {
            name: name.to_string(),
            concepts: BTreeMap::from([("color".to_string(), color.to_string())]),
            position,
        }
    }

    pub fn color(&self) -> Option<&str> {
        self.concepts.get("color").map(String::as_str)
    }
}

/// Ground-truth parametric scene. Objects are kept in schema order; absent
/// objects are simply not listed. The agent is always white and has no concepts.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneDescriptor {
    pub domain: Domain,
    pub agent: Position,
    pub objects: Vec<SceneObject>,
    #[serde(default)]
    pub door_open: bool,
    #[serde(default)]
    pub key_held: bool,
}

impl SceneDescriptor {
    pub fn object(&self, name: &str) -> Option<&SceneObject> {
        self.objects.iter().find(|o| o.name == name)
    }

    pub fn object_mut(&mut self, name: &str) -> Option<&mut SceneObject> {
        self.objects.iter_mut().find(|o| o.name == name)
    }

    pub fn remove_object(&mut self, name: &str) -> Option<SceneObject> {
        let idx = self.objects.iter().position(|o| o.name == name)?;
        Some(self.objects.remove(idx))
    }

    pub fn sort_objects(&mut self, schema: &ConceptSchema) {
        self.objects.sort_by_key(|o| schema.object_index(&o.name).unwrap_or(usize::MAX));
    }

    pub fn validate(&self) -> Result<()> {
        let schema = self.domain.schema();
        let mut last = 0;
        for obj in &self.objects {
            let idx = schema.object_index(&obj.name)?;
            if idx == 0 {
                return Err(DfaError::InvalidScene("the agent is not listed among objects".into()));
            }
            if idx <= last {
                return Err(DfaError::InvalidScene(format!("object {} duplicated or out of schema order", obj.name)));
            }
            last = idx;
            for cspec in &schema.objects[idx].concepts {
                let value = obj.concepts.get(&cspec.name).ok_or_else(|| {
                    DfaError::InvalidScene(format!("{} lacks concept {}", obj.name, cspec.name))
                })?;
                schema.instantiation_index(&obj.name, &cspec.name, value)?;
            }
        }
        match self.domain {
            Domain::Nav2d => nav2d::validate(self),
            Domain::Doorkey => doorkey::validate(self),
        }
    }

    /// Canonical JSON.
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("scene serializes")
    }
}

/// Runtime state: the scene with its runtime flags plus the time index.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WorldState {
    pub scene: SceneDescriptor,
    pub t: usize,
}

impl WorldState {
    pub fn digest(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("state serializes");
        hex::encode(&Sha256::digest(&bytes)[..16])
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Token {
    Up,
    Down,
    Left,
    Right,
    Pickup,
    Use,
}

impl Token {
    pub const ALL: [Token; 6] = [Token::Up, Token::Down, Token::Left, Token::Right, Token::Pickup, Token::Use];

    pub fn index(self) -> usize {
        Token::ALL.iter().position(|&t| t == self).expect("token listed")
    }

    pub fn from_index(i: usize) -> Option<Token> {
        Token::ALL.get(i).copied()
    }
}

/// A continuous displacement `[dx, dy]` or a discrete token.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Action {
    Continuous([f64; 2]),
    Discrete(Token),
}

impl Action {
    pub fn validate(&self, domain: Domain) -> Result<()> {
        match (domain, self) {
            (Domain::Nav2d, Action::Continuous(v)) => {
                if v.iter().all(|c| c.is_finite()) {
                    Ok(())
                } else {
                    Err(DfaError::MalformedAction(format!("non-finite displacement {v:?}")))
                }
            }
            (Domain::Doorkey, Action::Discrete(_)) => Ok(()),
            (d, a) => Err(DfaError::MalformedAction(format!("{a:?} is not a {d} action"))),
        }
    }

    /// Zero displacement for navigation; the padding token for door-key.
    pub fn noop(domain: Domain) -> Action {
        match domain {
            Domain::Nav2d => Action::Continuous([0.0, 0.0]),
            Domain::Doorkey => Action::Discrete(doorkey::NOOP),
        }
    }
}

pub fn reset(scene: &SceneDescriptor) -> Result<(WorldState, Observation)> {
    scene.validate()?;
    let state = WorldState { scene: scene.clone(), t: 0 };
    let obs = render(&state);
    Ok((state, obs))
}

/// One transition. Illegal moves are no-ops; the action must match the domain.
pub fn step(state: &WorldState, action: &Action) -> (WorldState, Observation) {
    let mut next = state.clone();
    match (state.scene.domain, action) {
        (Domain::Nav2d, Action::Continuous(d)) => nav2d::apply(&mut next.scene, *d),
        (Domain::Doorkey, Action::Discrete(tok)) => doorkey::apply(&mut next.scene, *tok),
        _ => {}
    }
    next.t += 1;
    let obs = render(&next);
    (next, obs)
}

/// Black-box policy: observation in, action out.
pub trait Policy {
    fn act(&self, obs: &Observation) -> Result<Action>;
}

impl<F> Policy for F
where
    F: Fn(&Observation) -> Result<Action>,
{
    fn act(&self, obs: &Observation) -> Result<Action> {
        self(obs)
    }
}

/// Run `policy` from `scene` for exactly the domain horizon.
pub fn rollout<P: Policy + ?Sized>(policy: &P, scene: &SceneDescriptor) -> Result<Trajectory> {
    let (mut state, mut obs) = reset(scene)?;
    let horizon = scene.domain.horizon();
    let mut steps = Vec::with_capacity(horizon);
    for _ in 0..horizon {
        let action = policy.act(&obs)?;
        action.validate(scene.domain)?;
        let (next, next_obs) = step(&state, &action);
        steps.push(Step { state, observation: obs, action });
        state = next;
        obs = next_obs;
    }
    Ok(Trajectory {
        provenance: Provenance::Rollout,
        initial: scene.clone(),
        steps,
        final_state: state,
    })
}

/// Replay a fixed action sequence from `scene`.
pub fn replay(scene: &SceneDescriptor, actions: &[Action], provenance: Provenance) -> Result<Trajectory> {
    let horizon = scene.domain.horizon();
    if actions.len() != horizon {
        return Err(DfaError::LengthMismatch { expected: horizon, got: actions.len() });
    }
    let (mut state, mut obs) = reset(scene)?;
    let mut steps = Vec::with_capacity(horizon);
    for action in actions {
        action.validate(scene.domain)?;
        let (next, next_obs) = step(&state, action);
        steps.push(Step { state, observation: obs, action: *action });
        state = next;
        obs = next_obs;
    }
    Ok(Trajectory { provenance, initial: scene.clone(), steps, final_state: state })
}

/// Domain-specific default spawn location for `object`.
pub fn default_placement(scene: &SceneDescriptor, object: &str) -> Result<Position> {
    match scene.domain {
        Domain::Nav2d => nav2d::default_placement(scene, object),
        Domain::Doorkey => doorkey::default_placement(scene, object),
    }
}

/// Error if `object` placed at `pos` would overlap another solid footprint.
pub fn check_placement(scene: &SceneDescriptor, object: &str, pos: Position) -> Result<()> {
    let ok = match scene.domain {
        Domain::Nav2d => nav2d::placement_free(scene, object, pos),
        Domain::Doorkey => doorkey::placement_free(scene, object, pos),
    };
    if ok {
        Ok(())
    } else {
        Err(DfaError::PlacementCollision { object: object.to_string(), position: pos.to_string() })
    }
}
