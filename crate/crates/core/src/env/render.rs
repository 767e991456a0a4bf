//! Rasterizer shared by both domains. Output is 36×36 RGB in row-major,
//! channel-last layout, normalized from 8-bit values.

use super::{doorkey, nav2d, Domain, Position, SceneDescriptor, WorldState};
use crate::error::{DfaError, Result};

pub const OBS_HEIGHT: usize = 36;
pub const OBS_WIDTH: usize = 36;
pub const OBS_CHANNELS: usize = 3;
pub const OBS_LEN: usize = OBS_HEIGHT * OBS_WIDTH * OBS_CHANNELS;

pub const BACKGROUND: [u8; 3] = [0, 0, 0];
pub const AGENT_RGB: [u8; 3] = [255, 255, 255];
pub const WALL_RGB: [u8; 3] = [128, 128, 128];

/// Named palette for concept colors.
pub fn palette(color: &str) -> Option<[u8; 3]> {
    Some(match color {
        "red" => [255, 0, 0],
        "green" => [0, 255, 0],
        "blue" => [0, 0, 255],
        "yellow" => [255, 255, 0],
        "orange" => [255, 128, 0],
        "pink" => [255, 105, 180],
        _ => return None,
    })
}

/// Normalized RGB raster the policy consumes.
#[derive(Clone, Debug, PartialEq)]
pub struct Observation(Vec<f32>);

impl Observation {
    pub fn new(values: Vec<f32>) -> Result<Self> {
        if values.len() != OBS_LEN {
            return Err(DfaError::ShapeMismatch { expected: OBS_LEN, got: values.len() });
        }
        if let Some(v) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(DfaError::InvalidScene(format!("observation value {v} outside [0, 1]")));
        }
        Ok(Self(values))
    }

    pub fn from_rgb8(bytes: &[u8]) -> Result<Self> {
        if bytes.len() != OBS_LEN {
            return Err(DfaError::ShapeMismatch { expected: OBS_LEN, got: bytes.len() });
        }
        Ok(Self(bytes.iter().map(|&b| b as f32 / 255.0).collect()))
    }

    pub fn to_rgb8(&self) -> Vec<u8> {
        self.0.iter().map(|&v| (v * 255.0).round() as u8).collect()
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn to_png(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        {
            let mut enc = png::Encoder::new(&mut out, OBS_WIDTH as u32, OBS_HEIGHT as u32);
            enc.set_color(png::ColorType::Rgb);
            enc.set_depth(png::BitDepth::Eight);
            let mut writer = enc.write_header().map_err(|e| DfaError::Image(e.to_string()))?;
            writer.write_image_data(&self.to_rgb8()).map_err(|e| DfaError::Image(e.to_string()))?;
        }
        Ok(out)
    }

    pub fn from_png(bytes: &[u8]) -> Result<Self> {
        let decoder = png::Decoder::new(std::io::Cursor::new(bytes));
        let mut reader = decoder.read_info().map_err(|e| DfaError::Image(e.to_string()))?;
        let size = reader.output_buffer_size().ok_or_else(|| DfaError::Image("image too large".into()))?;
        let mut buf = vec![0; size];
        let info = reader.next_frame(&mut buf).map_err(|e| DfaError::Image(e.to_string()))?;
        if info.color_type != png::ColorType::Rgb || info.bit_depth != png::BitDepth::Eight {
            return Err(DfaError::Image(format!("expected 8-bit RGB, got {:?}/{:?}", info.color_type, info.bit_depth)));
        }
        if info.width as usize != OBS_WIDTH || info.height as usize != OBS_HEIGHT {
            return Err(DfaError::ShapeMismatch {
                expected: OBS_LEN,
                got: info.width as usize * info.height as usize * OBS_CHANNELS,
            });
        }
        Self::from_rgb8(&buf[..info.buffer_size()])
    }
}

/// Pixels `(col, row)` touched by one drawn shape, with coverage in `(0, 1]`.
type Shape = Vec<(usize, usize, f64)>;

fn square(x0: usize, y0: usize, side: usize) -> Shape {
    (y0..y0 + side).flat_map(|y| (x0..x0 + side).map(move |x| (x, y, 1.0))).collect()
}

fn cell_origin((c, r): doorkey::Cell) -> (usize, usize) {
    (c as usize * doorkey::CELL_PX, r as usize * doorkey::CELL_PX)
}

fn nav_square(pos: Position) -> Shape {
    let (x, y) = pos.point().expect("navigation positions are points");
    nav2d::coverage(x, y)
}

fn shape(scene: &SceneDescriptor, object: &str) -> Shape {
    let Some(obj) = scene.object(object) else {
        return Vec::new();
    };
    match scene.domain {
        Domain::Nav2d => nav_square(obj.position),
        Domain::Doorkey => {
            let cell = obj.position.cell().expect("door-key positions are cells");
            let (x0, y0) = cell_origin(cell);
            let side = doorkey::CELL_PX;
            match object {
                "key" if scene.key_held => Vec::new(),
                // A 2×4 vertical bar in the middle of the cell.
                "key" => (y0..y0 + side).flat_map(|y| (x0 + 1..x0 + 3).map(move |x| (x, y, 1.0))).collect(),
                "door" if scene.door_open => square(x0, y0, side)
                    .into_iter()
                    .filter(|&(x, y, _)| x == x0 || y == y0 || x == x0 + side - 1 || y == y0 + side - 1)
                    .collect(),
                _ => square(x0, y0, side),
            }
        }
    }
}

/// Pixels `(col, row)` covered by `object`; empty when absent or held.
pub fn footprint(scene: &SceneDescriptor, object: &str) -> Vec<(usize, usize)> {
    shape(scene, object).into_iter().map(|(x, y, _)| (x, y)).collect()
}

fn agent_shape(scene: &SceneDescriptor) -> Shape {
    match scene.domain {
        Domain::Nav2d => nav_square(scene.agent),
        Domain::Doorkey => {
            let (x0, y0) = cell_origin(doorkey::agent_cell(scene));
            square(x0, y0, doorkey::CELL_PX)
        }
    }
}

/// 8-bit raster of `scene`.
pub fn render_rgb8(scene: &SceneDescriptor) -> Vec<u8> {
    let mut img = vec![0f64; OBS_LEN];
    // Shapes are composited in order with their coverage as opacity.
    let mut paint = |pixels: &[(usize, usize, f64)], rgb: [u8; 3]| {
        for &(x, y, a) in pixels {
            let i = (y * OBS_WIDTH + x) * OBS_CHANNELS;
            for (v, &c) in img[i..i + 3].iter_mut().zip(&rgb) {
                *v = a * c as f64 + (1.0 - a) * *v;
            }
        }
    };
    if scene.domain == Domain::Doorkey {
        for r in 0..doorkey::GRID {
            for c in 0..doorkey::GRID {
                if doorkey::is_wall(scene, (c, r)) {
                    let (x0, y0) = cell_origin((c, r));
                    paint(&square(x0, y0, doorkey::CELL_PX), WALL_RGB);
                }
            }
        }
    }
    for obj in &scene.objects {
        let rgb = obj.color().and_then(palette).unwrap_or(AGENT_RGB);
        paint(&shape(scene, &obj.name), rgb);
    }
    paint(&agent_shape(scene), AGENT_RGB);
    img.into_iter().map(|v| v.round().clamp(0.0, 255.0) as u8).collect()
}

pub fn render(state: &WorldState) -> Observation {
    Observation::from_rgb8(&render_rgb8(&state.scene)).expect("renderer emits a full raster")
}

#[cfg(test)]
mod tests {
    use super::super::{reset, SceneObject};
    use super::*;

    fn pixel(img: &[u8], x: usize, y: usize) -> [u8; 3] {
        let i = (y * OBS_WIDTH + x) * 3;
        [img[i], img[i + 1], img[i + 2]]
    }

    #[test]
    fn agent_only_scene_has_one_white_square() {
        let mut scene = nav2d::train_scene("red");
        scene.objects.clear();
        scene.agent = (0.5, 0.5).into();
        let img = render_rgb8(&scene);
        let lit: Vec<_> = (0..OBS_HEIGHT * OBS_WIDTH).filter(|p| img[p * 3..p * 3 + 3] != BACKGROUND).collect();
        assert_eq!(lit.len(), 16);
        assert!(lit.iter().all(|p| img[p * 3..p * 3 + 3] == AGENT_RGB));

        // Off the pixel grid the square is anti-aliased but stays gray-level white.
        scene.agent = (0.1, 0.1).into();
        let img = render_rgb8(&scene);
        let lit: Vec<_> = (0..OBS_HEIGHT * OBS_WIDTH).filter(|p| img[p * 3..p * 3 + 3] != BACKGROUND).collect();
        assert_eq!(lit.len(), 25);
        assert!(lit.iter().all(|p| img[p * 3] == img[p * 3 + 1] && img[p * 3] == img[p * 3 + 2]));
        let mass: f64 = lit.iter().map(|p| img[p * 3] as f64 / 255.0).sum();
        assert!((mass - 16.0).abs() < 0.05);
    }

    #[test]
    fn train_scene_places_agent_top_left_goal_bottom_right() {
        let scene = nav2d::train_scene("red");
        let (_, obs) = reset(&scene).unwrap();
        let img = obs.to_rgb8();
        assert_eq!(pixel(&img, 3, 3), AGENT_RGB);
        assert_eq!(pixel(&img, 32, 32), palette("red").unwrap());
        assert_eq!(pixel(&img, 20, 20), BACKGROUND);
    }

    #[test]
    fn recolor_touches_only_the_footprint() {
        let mut scene = nav2d::train_scene("red");
        scene.objects.push(SceneObject::colored("distractor", "blue", (0.5, 0.3).into()));
        let before = render_rgb8(&scene);
        scene.object_mut("goal").unwrap().concepts.insert("color".into(), "yellow".into());
        let after = render_rgb8(&scene);
        let fp = footprint(&scene, "goal");
        for y in 0..OBS_HEIGHT {
            for x in 0..OBS_WIDTH {
                if !fp.contains(&(x, y)) {
                    assert_eq!(pixel(&before, x, y), pixel(&after, x, y));
                }
            }
        }
        assert!(fp.iter().any(|&(x, y)| pixel(&before, x, y) != pixel(&after, x, y)));
    }

    #[test]
    fn doorkey_grid_is_four_pixels_per_cell() {
        let scene = doorkey::train_scene("red", "green", "blue");
        let img = render_rgb8(&scene);
        let count = |rgb: [u8; 3]| (0..OBS_HEIGHT * OBS_WIDTH).filter(|p| img[p * 3..p * 3 + 3] == rgb).count();
        // 32 border cells plus 6 wall-column cells (one interior slot is the door).
        assert_eq!(count(WALL_RGB), (32 + 6) * 16);
        assert_eq!(count(palette("green").unwrap()), 16);
        assert_eq!(count(palette("blue").unwrap()), 16);
        assert_eq!(count(palette("red").unwrap()), 8);
        assert_eq!(count(AGENT_RGB), 16);
    }

    #[test]
    fn open_door_is_outline() {
        let mut scene = doorkey::train_scene("red", "green", "blue");
        scene.door_open = true;
        assert_eq!(footprint(&scene, "door").len(), 12);
    }

    #[test]
    fn png_round_trip_is_exact() {
        let (_, obs) = reset(&doorkey::train_scene("yellow", "red", "green")).unwrap();
        let bytes = obs.to_png().unwrap();
        assert_eq!(Observation::from_png(&bytes).unwrap(), obs);
    }

    #[test]
    fn observation_shape_is_checked() {
        assert!(matches!(Observation::new(vec![0.0; 10]), Err(DfaError::ShapeMismatch { .. })));
        assert!(Observation::new(vec![2.0; OBS_LEN]).is_err());
    }
}
