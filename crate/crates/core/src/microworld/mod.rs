//! A deterministic top-down physics micro-world.
//!
//! Geometry lives on a 1 cm lattice: object poses, obstacle rectangles and
//! room bounds are integer centimetres, so collision tests are exact and
//! trajectories reproduce bit for bit. The camera looks straight down from a
//! fixed height above the agent and renders an orthographic RGB+D view.
//!
//! Pushing moves an object only when the applied force reaches its minimal
//! moving force; the object then slides along one of eight planar directions
//! until its displacement budget is used up or it touches a wall, an obstacle
//! or another object.

mod generate;
pub mod scenefile;
mod shapes;

pub use generate::{generate_scene, stream_seed, SceneGenerator, ScenePreset, Split, SplitRole, HELD_OUT_SHAPES};
pub use shapes::{Footprint, ShapeKind};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::imaging::{BinaryMask, DepthMap, Image3};

/// Quantised force magnitudes `f^0, f^1, f^2` in newtons.
pub const FORCES: [f32; 3] = [5.0, 30.0, 200.0];

/// Planar push directions on the lattice, counter-clockwise from +x.
pub const DIRECTIONS: [(i32, i32); 8] = [
    (1, 0),
    (1, 1),
    (0, 1),
    (-1, 1),
    (-1, 0),
    (-1, -1),
    (0, -1),
    (1, -1),
];

pub const WALL_HEIGHT: f32 = 0.95;
pub const CAMERA_HEIGHT: f32 = 1.0;
pub const DEFAULT_REACH: f32 = 1.5;

/// Displacement law `delta = GAIN * (f - f_min) / m`, clamped.
pub const PUSH_GAIN: f32 = 0.02;
pub const MIN_DISPLACEMENT_M: f32 = 0.20;
pub const MAX_DISPLACEMENT_M: f32 = 0.45;

pub const FLOOR_COLOR: [f32; 3] = [0.50, 0.395, 0.325];
pub const WALL_COLOR: [f32; 3] = [0.315, 0.385, 0.45];
pub const COUNTER_COLOR: [f32; 3] = [0.475, 0.385, 0.55];

/// Mass buckets: light `< 0.5 kg`, medium `0.5..2 kg`, heavy `>= 2 kg`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum MassClass {
    Light = 0,
    Medium = 1,
    Heavy = 2,
}

impl MassClass {
    pub fn of_mass(kg: f32) -> MassClass {
        if kg < 0.5 {
            MassClass::Light
        } else if kg < 2.0 {
            MassClass::Medium
        } else {
            MassClass::Heavy
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> MassClass {
        match i {
            0 => MassClass::Light,
            1 => MassClass::Medium,
            _ => MassClass::Heavy,
        }
    }

    pub fn name(self) -> &'static str {
        ["light", "medium", "heavy"][self.index()]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectSpec {
    pub shape: ShapeKind,
    /// Footprint centre on the lattice (cm).
    pub x_cm: i32,
    pub y_cm: i32,
    /// Quarter turns.
    pub rotation: u8,
    pub size_cm: i32,
    pub height_m: f32,
    pub color: [f32; 3],
    /// 0 renders flat colour.
    pub texture_seed: u32,
    pub mass_kg: f32,
    /// Smallest force that moves the object; infinite for static objects.
    pub min_force: f32,
    pub is_static: bool,
}

impl ObjectSpec {
    pub fn footprint(&self) -> Footprint {
        Footprint::build(self.shape, self.size_cm, self.rotation, self.height_m)
    }

    pub fn mass_class(&self) -> MassClass {
        MassClass::of_mass(self.mass_kg)
    }

    /// Force bucket actually needed to move the object (may differ from the
    /// mass bucket, see the generator).
    pub fn force_class(&self) -> Option<usize> {
        FORCES.iter().position(|&f| f >= self.min_force)
    }
}

/// Static axis-aligned block, `[x0, x1) x [y0, y1)` in cm.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Obstacle {
    pub x0: i32,
    pub y0: i32,
    pub x1: i32,
    pub y1: i32,
    pub height_m: f32,
}

impl Obstacle {
    #[inline]
    pub fn contains(&self, x: i32, y: i32) -> bool {
        x >= self.x0 && x < self.x1 && y >= self.y0 && y < self.y1
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgentPose {
    pub x_cm: i32,
    pub y_cm: i32,
    pub camera_height_m: f32,
    pub reach_m: f32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    /// Room interior is `[0, width) x [0, depth)` in cm; everything else is wall.
    pub room_w_cm: i32,
    pub room_d_cm: i32,
    pub obstacles: Vec<Obstacle>,
    pub floor_texture: u32,
    pub objects: Vec<ObjectSpec>,
    pub spawn: AgentPose,
    pub lighting_jitter: f32,
    pub pixel_noise: f32,
}

/// Camera resolution and field of view.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RenderConfig {
    pub resolution: usize,
    /// Side length of the square view in meters.
    pub view_m: f32,
}

impl Default for RenderConfig {
    fn default() -> Self {
        Self {
            resolution: 300,
            view_m: 3.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Surface {
    Floor,
    Wall,
    Obstacle(usize),
    Object(usize),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct InteractionRequest {
    /// Pixel at input resolution.
    pub row: usize,
    pub col: usize,
    pub force_class: usize,
    pub direction: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ForceOutcome {
    pub moved: bool,
    pub object: Option<usize>,
    /// Lattice steps actually travelled.
    pub steps: i32,
}

impl ForceOutcome {
    fn still(object: Option<usize>) -> Self {
        Self {
            moved: false,
            object,
            steps: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GroundTruthInstance {
    pub object: usize,
    /// Visible pixels at input resolution.
    pub mask: BinaryMask,
    /// `(row0, col0, row1, col1)`, inclusive.
    pub bbox: (usize, usize, usize, usize),
    pub mass_class: MassClass,
    pub reachable: bool,
    /// Pixels within reach; `reachable` iff at least 10.
    pub pixels_in_reach: usize,
}

pub const MIN_REACHABLE_PIXELS: usize = 10;

#[derive(Clone, Debug)]
pub struct WorldState {
    pub scene: SceneSpec,
    pub render: RenderConfig,
    footprints: Vec<Footprint>,
    /// Lattice origin (min corner) of each footprint.
    origins: Vec<(i32, i32)>,
    rng: ChaCha8Rng,
}

impl PartialEq for WorldState {
    fn eq(&self, other: &Self) -> bool {
        self.scene == other.scene && self.origins == other.origins && self.render == other.render
    }
}

fn texture_factor(seed: u32, i: i32, j: i32) -> f32 {
    if seed == 0 {
        return 1.0;
    }
    let orient = seed % 4;
    let period = 6 + (seed / 4 % 9) as i32;
    let t = match orient {
        0 => i,
        1 => j,
        2 => i + j,
        _ => i - j,
    };
    if t.rem_euclid(2 * period) < period {
        1.04
    } else {
        0.96
    }
}

/// Large floor tiles with a small per-tile brightness offset.
fn floor_factor(seed: u32, x: i32, y: i32) -> f32 {
    if seed == 0 {
        return 1.0;
    }
    let (tx, ty) = (x.div_euclid(100), y.div_euclid(100));
    let mut h = (seed as u64) ^ 0x9E37_79B9_7F4A_7C15;
    h ^= (tx as i64 as u64).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    h ^= (ty as i64 as u64).wrapping_mul(0x94D0_49BB_1331_11EB);
    h = (h ^ (h >> 31)).wrapping_mul(0xD6E8_FEB8_6659_FD93);
    h ^= h >> 29;
    0.97 + 0.06 * ((h % 1000) as f32 / 999.0)
}

impl WorldState {
    pub fn new(scene: SceneSpec, render: RenderConfig, noise_seed: u64) -> Self {
        let footprints: Vec<Footprint> = scene.objects.iter().map(|o| o.footprint()).collect();
        let origins = scene
            .objects
            .iter()
            .zip(&footprints)
            .map(|(o, f)| (o.x_cm - f.nx / 2, o.y_cm - f.ny / 2))
            .collect();
        Self {
            scene,
            render,
            footprints,
            origins,
            rng: ChaCha8Rng::seed_from_u64(noise_seed),
        }
    }

    pub fn footprint(&self, object: usize) -> &Footprint {
        &self.footprints[object]
    }

    pub fn origin(&self, object: usize) -> (i32, i32) {
        self.origins[object]
    }

    /// Current pose of each object with the scene's initial values replaced.
    pub fn current_scene(&self) -> SceneSpec {
        let mut s = self.scene.clone();
        for (o, (f, &(ox, oy))) in s.objects.iter_mut().zip(self.footprints.iter().zip(&self.origins)) {
            o.x_cm = ox + f.nx / 2;
            o.y_cm = oy + f.ny / 2;
        }
        s
    }

    #[inline]
    fn in_room(&self, x: i32, y: i32) -> bool {
        x >= 0 && y >= 0 && x < self.scene.room_w_cm && y < self.scene.room_d_cm
    }

    /// Top surface at a lattice cell and its height.
    pub fn surface_at(&self, x: i32, y: i32) -> (Surface, f32) {
        for (i, (f, &(ox, oy))) in self.footprints.iter().zip(&self.origins).enumerate() {
            let h = f.at(x - ox, y - oy);
            if h > 0.0 {
                return (Surface::Object(i), h);
            }
        }
        for (k, ob) in self.scene.obstacles.iter().enumerate() {
            if ob.contains(x, y) {
                return (Surface::Obstacle(k), ob.height_m);
            }
        }
        if self.in_room(x, y) {
            (Surface::Floor, 0.0)
        } else {
            (Surface::Wall, WALL_HEIGHT)
        }
    }

    /// Lattice cell seen by a pixel at input resolution.
    pub fn pixel_cell(&self, pose: &AgentPose, row: usize, col: usize) -> (i32, i32) {
        let res = self.render.resolution as f64;
        let mpp = self.render.view_m as f64 / res;
        let x = pose.x_cm as f64 / 100.0 + (col as f64 + 0.5 - res / 2.0) * mpp;
        let y = pose.y_cm as f64 / 100.0 + (row as f64 + 0.5 - res / 2.0) * mpp;
        ((x * 100.0).floor() as i32, (y * 100.0).floor() as i32)
    }

    /// Straight-line distance from the camera to the centre of a lattice cell
    /// at the given surface height.
    pub fn distance_from_camera(pose: &AgentPose, x: i32, y: i32, h: f32) -> f32 {
        let dx = (x as f32 + 0.5 - pose.x_cm as f32) / 100.0;
        let dy = (y as f32 + 0.5 - pose.y_cm as f32) / 100.0;
        let dz = pose.camera_height_m - h;
        (dx * dx + dy * dy + dz * dz).sqrt()
    }

    fn surface_color(&self, surface: Surface, x: i32, y: i32) -> [f32; 3] {
        match surface {
            Surface::Floor => {
                let f = floor_factor(self.scene.floor_texture, x, y);
                FLOOR_COLOR.map(|c| c * f)
            }
            Surface::Wall => WALL_COLOR,
            Surface::Obstacle(_) => COUNTER_COLOR,
            Surface::Object(i) => {
                let o = &self.scene.objects[i];
                let (ox, oy) = self.origins[i];
                let f = texture_factor(o.texture_seed, x - ox, y - oy);
                o.color.map(|c| (c * f).min(1.0))
            }
        }
    }

    /// Render the view from `pose`. With `noise`, a global brightness factor
    /// and per-pixel Gaussian noise are applied to RGB (depth stays exact).
    pub fn render(&mut self, pose: &AgentPose, noise: bool) -> (Image3, DepthMap) {
        let res = self.render.resolution;
        let mut rgb = Image3::new(res, res);
        let mut depth = DepthMap::new(res, res);
        for r in 0..res {
            for c in 0..res {
                let (x, y) = self.pixel_cell(pose, r, c);
                let (s, h) = self.surface_at(x, y);
                rgb.set(r, c, self.surface_color(s, x, y));
                depth.data[r * res + c] = (pose.camera_height_m - h).max(0.0);
            }
        }
        if noise {
            let amp = self.scene.lighting_jitter;
            let gain = 1.0 + if amp > 0.0 { self.rng.random_range(-amp..=amp) } else { 0.0 };
            let sigma = self.scene.pixel_noise;
            if sigma > 0.0 {
                let n = Normal::new(0.0f32, sigma).expect("finite sigma");
                for v in &mut rgb.data {
                    *v = (*v * gain + n.sample(&mut self.rng)).clamp(0.0, 1.0);
                }
            } else {
                for v in &mut rgb.data {
                    *v = (*v * gain).clamp(0.0, 1.0);
                }
            }
        }
        (rgb, depth)
    }

    /// Per-pixel visible surface at input resolution.
    pub fn surface_map(&self, pose: &AgentPose) -> Vec<Surface> {
        let res = self.render.resolution;
        let mut out = Vec::with_capacity(res * res);
        for r in 0..res {
            for c in 0..res {
                let (x, y) = self.pixel_cell(pose, r, c);
                out.push(self.surface_at(x, y).0);
            }
        }
        out
    }

    /// Whether object `i` fits with its origin at `(ox, oy)`.
    fn fits(&self, i: usize, ox: i32, oy: i32) -> bool {
        let f = &self.footprints[i];
        let (x0, y0, x1, y1) = (ox, oy, ox + f.nx, oy + f.ny);
        let inside = x0 >= 0 && y0 >= 0 && x1 <= self.scene.room_w_cm && y1 <= self.scene.room_d_cm;
        let overlaps = |ax0: i32, ay0: i32, ax1: i32, ay1: i32| ax0 < x1 && ax1 > x0 && ay0 < y1 && ay1 > y0;
        let blockers: Vec<usize> = (0..self.footprints.len())
            .filter(|&j| j != i)
            .filter(|&j| {
                let (bx, by) = self.origins[j];
                let g = &self.footprints[j];
                overlaps(bx, by, bx + g.nx, by + g.ny)
            })
            .collect();
        let obstacles: Vec<&Obstacle> = self
            .scene
            .obstacles
            .iter()
            .filter(|o| overlaps(o.x0, o.y0, o.x1, o.y1))
            .collect();
        if inside && blockers.is_empty() && obstacles.is_empty() {
            return true;
        }
        for (ci, cj) in f.cells() {
            let (x, y) = (ox + ci, oy + cj);
            if !self.in_room(x, y) || obstacles.iter().any(|o| o.contains(x, y)) {
                return false;
            }
            for &j in &blockers {
                let (bx, by) = self.origins[j];
                if self.footprints[j].at(x - bx, y - by) > 0.0 {
                    return false;
                }
            }
        }
        true
    }

    /// Displacement in lattice steps for a force on object `i`.
    fn push_steps(&self, i: usize, force: f32, direction: usize) -> i32 {
        let o = &self.scene.objects[i];
        let delta = (PUSH_GAIN * (force - o.min_force) / o.mass_kg).clamp(MIN_DISPLACEMENT_M, MAX_DISPLACEMENT_M);
        let (dx, dy) = DIRECTIONS[direction % 8];
        let step_len = ((dx * dx + dy * dy) as f32).sqrt() / 100.0;
        (delta / step_len).round() as i32
    }

    /// Push whatever the ray through the pixel hits first.
    pub fn apply_force(&mut self, pose: &AgentPose, req: InteractionRequest) -> ForceOutcome {
        let res = self.render.resolution;
        if req.row >= res || req.col >= res || req.force_class >= FORCES.len() {
            return ForceOutcome::still(None);
        }
        let (x, y) = self.pixel_cell(pose, req.row, req.col);
        let (surface, h) = self.surface_at(x, y);
        let Surface::Object(i) = surface else {
            return ForceOutcome::still(None);
        };
        if Self::distance_from_camera(pose, x, y, h) > pose.reach_m {
            return ForceOutcome::still(Some(i));
        }
        let o = &self.scene.objects[i];
        let force = FORCES[req.force_class];
        if o.is_static || force < o.min_force {
            return ForceOutcome::still(Some(i));
        }
        let steps = self.push_steps(i, force, req.direction);
        let (dx, dy) = DIRECTIONS[req.direction % 8];
        let (mut ox, mut oy) = self.origins[i];
        let mut taken = 0;
        for _ in 0..steps {
            if !self.fits(i, ox + dx, oy + dy) {
                break;
            }
            ox += dx;
            oy += dy;
            taken += 1;
        }
        self.origins[i] = (ox, oy);
        ForceOutcome {
            moved: taken > 0,
            object: Some(i),
            steps: taken,
        }
    }

    /// Visible movable objects with their masks and the reach rule applied.
    pub fn ground_truth(&self, pose: &AgentPose) -> Vec<GroundTruthInstance> {
        let res = self.render.resolution;
        let n = self.scene.objects.len();
        let mut masks: Vec<Option<BinaryMask>> = vec![None; n];
        let mut in_reach = vec![0usize; n];
        for r in 0..res {
            for c in 0..res {
                let (x, y) = self.pixel_cell(pose, r, c);
                if let (Surface::Object(i), h) = self.surface_at(x, y) {
                    if self.scene.objects[i].is_static {
                        continue;
                    }
                    masks[i]
                        .get_or_insert_with(|| BinaryMask::empty(res, res))
                        .set(r, c, true);
                    if Self::distance_from_camera(pose, x, y, h) <= pose.reach_m {
                        in_reach[i] += 1;
                    }
                }
            }
        }
        masks
            .into_iter()
            .enumerate()
            .filter_map(|(i, m)| {
                let mask = m?;
                let bbox = mask.bbox()?;
                Some(GroundTruthInstance {
                    object: i,
                    mask,
                    bbox,
                    mass_class: self.scene.objects[i].mass_class(),
                    reachable: in_reach[i] >= MIN_REACHABLE_PIXELS,
                    pixels_in_reach: in_reach[i],
                })
            })
            .collect()
    }

    /// Check the non-penetration invariant.
    pub fn is_consistent(&self) -> bool {
        (0..self.footprints.len()).all(|i| {
            let (ox, oy) = self.origins[i];
            self.scene.objects[i].is_static || self.fits(i, ox, oy)
        }) && self.scene.objects.iter().enumerate().filter(|(_, o)| o.is_static).all(|(i, _)| {
            let (ox, oy) = self.origins[i];
            self.fits(i, ox, oy)
        })
    }

    /// Move an object directly, bypassing physics. Returns false (and leaves
    /// the state unchanged) if the new pose would overlap anything.
    pub fn place_object(&mut self, i: usize, x_cm: i32, y_cm: i32) -> bool {
        let f = &self.footprints[i];
        let (ox, oy) = (x_cm - f.nx / 2, y_cm - f.ny / 2);
        if self.fits(i, ox, oy) {
            self.origins[i] = (ox, oy);
            true
        } else {
            false
        }
    }
}
