//! Continuous 2D navigation in the unit square. `y` grows downwards, so the
//! top-left corner is `(0, 0)` and the bottom-right corner is `(1, 1)`.

use super::{Position, SceneDescriptor, SceneObject, AGENT};
use crate::error::{DfaError, Result};

pub const HORIZON: usize = 20;
pub const AGENT_START: (f64, f64) = (0.1, 0.1);
pub const TRAIN_GOAL: (f64, f64) = (0.9, 0.9);
/// Goal location used by the "other" shift (bottom-left corner).
pub const OTHER_GOAL: (f64, f64) = (0.1, 0.9);
pub const GOAL_RADIUS: f64 = 0.05;
/// Per-component bound on a single displacement.
pub const MAX_STEP: f64 = 0.1;
/// Every object is drawn as a square of this many pixels per side, placed
/// at sub-pixel precision and anti-aliased by area coverage.
pub const FOOTPRINT_PX: f64 = 4.0;
const RASTER: f64 = 36.0;

/// Default spawn candidates, already in row-major order.
pub const SPAWN_CANDIDATES: [(f64, f64); 9] = [
    (0.3, 0.3),
    (0.5, 0.3),
    (0.7, 0.3),
    (0.3, 0.5),
    (0.5, 0.5),
    (0.7, 0.5),
    (0.3, 0.7),
    (0.5, 0.7),
    (0.7, 0.7),
];

pub fn train_scene(goal_color: &str) -> SceneDescriptor {
    SceneDescriptor {
        domain: super::Domain::Nav2d,
        agent: AGENT_START.into(),
        objects: vec![SceneObject::colored("goal", goal_color, TRAIN_GOAL.into())],
        door_open: false,
        key_held: false,
    }
}

/// Top-left corner, in pixel units, of the square centred on `(x, y)`. The
/// square is shifted inward at the borders so it always lies in the raster.
pub fn square_origin(x: f64, y: f64) -> (f64, f64) {
    let half = FOOTPRINT_PX / 2.0;
    let to_px = |v: f64| (v * RASTER).clamp(half, RASTER - half) - half;
    (to_px(x), to_px(y))
}

/// Pixels touched by the square centred on `(x, y)`, with covered area in `(0, 1]`.
pub fn coverage(x: f64, y: f64) -> Vec<(usize, usize, f64)> {
    let (x0, y0) = square_origin(x, y);
    let span = |lo: f64| {
        let first = lo.floor() as usize;
        let last = ((lo + FOOTPRINT_PX).ceil() as usize).min(RASTER as usize);
        (first..last)
            .map(move |i| (i, ((i + 1) as f64).min(lo + FOOTPRINT_PX) - (i as f64).max(lo)))
            .filter(|&(_, len)| len > 0.0)
    };
    span(y0).flat_map(|(row, hy)| span(x0).map(move |(col, hx)| (col, row, hx * hy))).collect()
}

/// True when the two squares share a region of positive area.
pub fn footprints_overlap(a: (f64, f64), b: (f64, f64)) -> bool {
    let (ax, ay) = square_origin(a.0, a.1);
    let (bx, by) = square_origin(b.0, b.1);
    (ax - bx).abs() < FOOTPRINT_PX && (ay - by).abs() < FOOTPRINT_PX
}

fn in_bounds((x, y): (f64, f64)) -> bool {
    (0.0..=1.0).contains(&x) && (0.0..=1.0).contains(&y)
}

fn point(p: Position, what: &str) -> Result<(f64, f64)> {
    p.point()
        .filter(|&xy| in_bounds(xy))
        .ok_or_else(|| DfaError::InvalidScene(format!("{what} needs a point inside the unit square, got {p}")))
}

pub fn validate(scene: &SceneDescriptor) -> Result<()> {
    point(scene.agent, AGENT)?;
    if scene.door_open || scene.key_held {
        return Err(DfaError::InvalidScene("navigation scenes have no door or key flags".into()));
    }
    let points: Vec<(f64, f64)> =
        scene.objects.iter().map(|o| point(o.position, &o.name)).collect::<Result<_>>()?;
    for i in 0..points.len() {
        for j in i + 1..points.len() {
            if footprints_overlap(points[i], points[j]) {
                return Err(DfaError::InvalidScene(format!(
                    "{} and {} overlap",
                    scene.objects[i].name, scene.objects[j].name
                )));
            }
        }
    }
    Ok(())
}

pub fn placement_free(scene: &SceneDescriptor, object: &str, pos: Position) -> bool {
    let Some(p) = pos.point().filter(|&p| in_bounds(p)) else {
        return false;
    };
    let agent_clear = scene.agent.point().is_none_or(|a| !footprints_overlap(a, p));
    agent_clear
        && scene
            .objects
            .iter()
            .filter(|o| o.name != object)
            .filter_map(|o| o.position.point())
            .all(|q| !footprints_overlap(p, q))
}

pub fn default_placement(scene: &SceneDescriptor, object: &str) -> Result<Position> {
    SPAWN_CANDIDATES
        .iter()
        .map(|&c| Position::from(c))
        .find(|&c| placement_free(scene, object, c))
        .ok_or_else(|| DfaError::PlacementCollision {
            object: object.to_string(),
            position: "every default candidate".into(),
        })
}

/// Clip each component to `[-MAX_STEP, MAX_STEP]`.
pub fn clip(d: [f64; 2]) -> [f64; 2] {
    [d[0].clamp(-MAX_STEP, MAX_STEP), d[1].clamp(-MAX_STEP, MAX_STEP)]
}

pub(crate) fn apply(scene: &mut SceneDescriptor, d: [f64; 2]) {
    let [dx, dy] = clip(d);
    if let Position::Point { x, y } = scene.agent {
        scene.agent = Position::Point { x: (x + dx).clamp(0.0, 1.0), y: (y + dy).clamp(0.0, 1.0) };
    }
}

pub fn distance(a: (f64, f64), b: (f64, f64)) -> f64 {
    ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt()
}

#[cfg(test)]
mod tests {
    use super::super::{reset, step, Action};
    use super::*;

    fn agent_after(start: (f64, f64), d: [f64; 2]) -> (f64, f64) {
        let mut scene = train_scene("red");
        scene.agent = start.into();
        let (s0, _) = reset(&scene).unwrap();
        let (s1, _) = step(&s0, &Action::Continuous(d));
        s1.scene.agent.point().unwrap()
    }

    #[test]
    fn additive_dynamics() {
        let (x, y) = agent_after((0.5, 0.5), [0.1, 0.0]);
        assert!((x - 0.6).abs() < 1e-12 && (y - 0.5).abs() < 1e-12);
    }

    #[test]
    fn oversized_action_is_clipped() {
        let (x, y) = agent_after((0.5, 0.5), [0.3, 0.0]);
        assert!((x - 0.6).abs() < 1e-12 && (y - 0.5).abs() < 1e-12);
    }

    #[test]
    fn position_clamped_to_square() {
        let (x, y) = agent_after((0.95, 0.02), [0.1, -0.1]);
        assert_eq!((x, y), (1.0, 0.0));
    }

    #[test]
    fn overlapping_objects_invalid() {
        let mut scene = train_scene("red");
        scene.objects.push(SceneObject::colored("distractor", "blue", (0.88, 0.9).into()));
        assert!(validate(&scene).is_err());
    }

    #[test]
    fn coverage_sums_to_square_area() {
        for (x, y) in [(0.1, 0.1), (0.517, 0.333), (0.0, 1.0), (0.9, 0.9)] {
            let total: f64 = coverage(x, y).iter().map(|c| c.2).sum();
            assert!((total - 16.0).abs() < 1e-9, "{x},{y}: {total}");
        }
        assert_eq!(coverage(0.5, 0.5).len(), 16);
        assert_eq!(coverage(0.51, 0.5).len(), 20);
    }

    #[test]
    fn default_spawn_skips_occupied() {
        let mut scene = train_scene("red");
        scene.agent = (0.3, 0.3).into();
        assert_eq!(default_placement(&scene, "distractor").unwrap(), Position::from(SPAWN_CANDIDATES[1]));
    }
}
