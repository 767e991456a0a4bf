//! Door-key gridworld: 9×9 cells with a border wall and a vertical wall at
//! column 4 split by a locked door. The agent picks up the key in the left
//! chamber, unlocks the door, and walks to the goal in the right chamber.
//!
//! Moves are cardinal and blocked by walls, a closed door, and the key while
//! it lies on the floor. `pickup` takes a 4-adjacent key; `use` opens a
//! 4-adjacent door when the key is held. Removing the door leaves the wall
//! column solid.

use super::{Position, SceneDescriptor, SceneObject, Token, AGENT};
use crate::error::{DfaError, Result};

pub const HORIZON: usize = 35;
pub const GRID: i32 = 9;
pub const WALL_COL: i32 = 4;
pub const CELL_PX: usize = 4;

pub const AGENT_START: (i32, i32) = (1, 1);
pub const KEY_CELL: (i32, i32) = (2, 5);
pub const DOOR_CELL: (i32, i32) = (4, 2);
pub const GOAL_CELL: (i32, i32) = (6, 6);

/// Padding action once the task is done; `pickup` is a no-op with the key held.
pub const NOOP: Token = Token::Pickup;

pub type Cell = (i32, i32);

pub fn train_scene(key: &str, door: &str, goal: &str) -> SceneDescriptor {
    SceneDescriptor {
        domain: super::Domain::Doorkey,
        agent: AGENT_START.into(),
        objects: vec![
            SceneObject::colored("key", key, KEY_CELL.into()),
            SceneObject::colored("door", door, DOOR_CELL.into()),
            SceneObject::colored("goal", goal, GOAL_CELL.into()),
        ],
        door_open: false,
        key_held: false,
    }
}

pub fn cell_of(scene: &SceneDescriptor, name: &str) -> Option<Cell> {
    scene.object(name).and_then(|o| o.position.cell())
}

pub fn agent_cell(scene: &SceneDescriptor) -> Cell {
    scene.agent.cell().expect("door-key agent sits on a cell")
}

pub fn in_grid((c, r): Cell) -> bool {
    (0..GRID).contains(&c) && (0..GRID).contains(&r)
}

fn interior((c, r): Cell) -> bool {
    (1..GRID - 1).contains(&c) && (1..GRID - 1).contains(&r)
}

pub fn is_wall(scene: &SceneDescriptor, cell: Cell) -> bool {
    if !interior(cell) {
        return true;
    }
    cell.0 == WALL_COL && cell_of(scene, "door") != Some(cell)
}

/// Interior cell off the wall column.
pub fn is_floor(cell: Cell) -> bool {
    interior(cell) && cell.0 != WALL_COL
}

pub fn adjacent(a: Cell, b: Cell) -> bool {
    (a.0 - b.0).abs() + (a.1 - b.1).abs() == 1
}

pub fn passable(scene: &SceneDescriptor, cell: Cell) -> bool {
    if !in_grid(cell) || is_wall(scene, cell) {
        return false;
    }
    if cell_of(scene, "door") == Some(cell) && !scene.door_open {
        return false;
    }
    if cell_of(scene, "key") == Some(cell) && !scene.key_held {
        return false;
    }
    true
}

pub fn delta(token: Token) -> Option<(i32, i32)> {
    match token {
        Token::Up => Some((0, -1)),
        Token::Down => Some((0, 1)),
        Token::Left => Some((-1, 0)),
        Token::Right => Some((1, 0)),
        Token::Pickup | Token::Use => None,
    }
}

pub(crate) fn apply(scene: &mut SceneDescriptor, token: Token) {
    let here = agent_cell(scene);
    match token {
        Token::Pickup => {
            if !scene.key_held && cell_of(scene, "key").is_some_and(|k| adjacent(here, k)) {
                scene.key_held = true;
            }
        }
        Token::Use => {
            if scene.key_held && !scene.door_open && cell_of(scene, "door").is_some_and(|d| adjacent(here, d)) {
                scene.door_open = true;
            }
        }
        mv => {
            let (dc, dr) = delta(mv).expect("movement token");
            let target = (here.0 + dc, here.1 + dr);
            if passable(scene, target) {
                scene.agent = target.into();
            }
        }
    }
}

fn cell(p: Position, what: &str) -> Result<Cell> {
    p.cell()
        .filter(|&c| in_grid(c))
        .ok_or_else(|| DfaError::InvalidScene(format!("{what} needs a grid cell, got {p}")))
}

pub fn validate(scene: &SceneDescriptor) -> Result<()> {
    let agent = cell(scene.agent, AGENT)?;
    if !is_floor(agent) && cell_of(scene, "door") != Some(agent) {
        return Err(DfaError::InvalidScene(format!("agent on a wall at {agent:?}")));
    }
    let mut seen: Vec<Cell> = Vec::new();
    for obj in &scene.objects {
        let c = cell(obj.position, &obj.name)?;
        let ok = if obj.name == "door" { c.0 == WALL_COL && interior(c) } else { is_floor(c) };
        if !ok {
            return Err(DfaError::InvalidScene(format!("{} cannot sit at {c:?}", obj.name)));
        }
        if seen.contains(&c) {
            return Err(DfaError::InvalidScene(format!("two objects share {c:?}")));
        }
        seen.push(c);
    }
    Ok(())
}

pub fn placement_free(scene: &SceneDescriptor, object: &str, pos: Position) -> bool {
    let Some(c) = pos.cell() else {
        return false;
    };
    let shape_ok = if object == "door" { c.0 == WALL_COL && interior(c) } else { is_floor(c) };
    shape_ok
        && scene.agent.cell() != Some(c)
        && scene.objects.iter().filter(|o| o.name != object).all(|o| o.position.cell() != Some(c))
}

/// First free cell in row-major order.
pub fn default_placement(scene: &SceneDescriptor, object: &str) -> Result<Position> {
    (0..GRID)
        .flat_map(|r| (0..GRID).map(move |c| Position::Cell { col: c, row: r }))
        .find(|&p| placement_free(scene, object, p))
        .ok_or_else(|| DfaError::PlacementCollision { object: object.into(), position: "no free cell".into() })
}
