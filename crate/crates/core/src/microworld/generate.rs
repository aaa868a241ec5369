use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{
    AgentPose, Footprint, MassClass, ObjectSpec, Obstacle, SceneSpec, ShapeKind, CAMERA_HEIGHT, DEFAULT_REACH, FORCES,
};

/// Categories reserved for NovelShapes test scenes.
pub const HELD_OUT_SHAPES: [ShapeKind; 2] = [ShapeKind::Ring, ShapeKind::Tee];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Split {
    NovelLayouts,
    NovelShapes,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SplitRole {
    Train,
    Test,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ScenePreset {
    Full,
    /// One large movable box within reach, nothing else.
    Trivial,
}

impl std::str::FromStr for Split {
    type Err = crate::Error;
    fn from_str(s: &str) -> crate::Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "novellayouts" | "novel_layouts" | "layouts" => Ok(Split::NovelLayouts),
            "novelshapes" | "novel_shapes" | "shapes" => Ok(Split::NovelShapes),
            _ => Err(crate::Error::InvalidArgument(format!("unknown split {s:?}"))),
        }
    }
}

impl std::str::FromStr for SplitRole {
    type Err = crate::Error;
    fn from_str(s: &str) -> crate::Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "train" => Ok(SplitRole::Train),
            "test" => Ok(SplitRole::Test),
            _ => Err(crate::Error::InvalidArgument(format!("unknown role {s:?}"))),
        }
    }
}

impl std::str::FromStr for ScenePreset {
    type Err = crate::Error;
    fn from_str(s: &str) -> crate::Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "full" => Ok(ScenePreset::Full),
            "trivial" => Ok(ScenePreset::Trivial),
            _ => Err(crate::Error::InvalidArgument(format!("unknown scene preset {s:?}"))),
        }
    }
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::NovelLayouts => "novel_layouts",
            Split::NovelShapes => "novel_shapes",
        }
    }
}

impl ScenePreset {
    pub fn name(self) -> &'static str {
        match self {
            ScenePreset::Full => "full",
            ScenePreset::Trivial => "trivial",
        }
    }
}

pub(crate) fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derive an independent stream seed from a list of tags.
pub fn stream_seed(parts: &[u64]) -> u64 {
    parts.iter().fold(0x5EED_u64, |acc, &p| mix64(acc ^ mix64(p)))
}

#[derive(Clone, Debug)]
pub struct SceneGenerator {
    pub preset: ScenePreset,
    pub lighting_jitter: f32,
    pub pixel_noise: f32,
    /// Probability that an object's colour follows its mass bucket's hue family.
    pub material_hue_prob: f64,
    /// Probability of shifting the minimal moving force one bucket.
    pub bucket_noise: f64,
    pub reach_m: f32,
}

impl Default for SceneGenerator {
    fn default() -> Self {
        Self {
            preset: ScenePreset::Full,
            lighting_jitter: 0.02,
            pixel_noise: 0.006,
            material_hue_prob: 0.8,
            bucket_noise: 0.05,
            reach_m: DEFAULT_REACH,
        }
    }
}

struct Bucket {
    mass: (f32, f32),
    size_cm: (i32, i32),
    height: (f32, f32),
    hue: (f32, f32),
}

const BUCKETS: [Bucket; 3] = [
    Bucket {
        mass: (0.15, 0.49),
        size_cm: (25, 45),
        height: (0.10, 0.25),
        hue: (0.11, 0.17),
    },
    Bucket {
        mass: (0.5, 1.99),
        size_cm: (30, 55),
        height: (0.20, 0.40),
        hue: (0.27, 0.42),
    },
    Bucket {
        mass: (2.0, 10.0),
        size_cm: (35, 65),
        height: (0.30, 0.55),
        hue: (0.55, 0.68),
    },
];

/// Hue ranges outside every bucket family.
const OFF_FAMILY_HUES: [(f32, f32); 2] = [(0.96, 1.0), (0.80, 0.90)];

const STATIC_COLOR: [f32; 3] = [0.40, 0.264, 0.20];
const GAP_CM: i32 = 4;
const SPAWN_MARGIN_CM: i32 = 50;

fn hsv(h: f32, s: f32, v: f32) -> [f32; 3] {
    crate::imaging::color::pixel_hsv_to_rgb([h.rem_euclid(1.0), s, v])
}

fn log_uniform(rng: &mut ChaCha8Rng, lo: f32, hi: f32) -> f32 {
    (rng.random_range(lo.ln()..hi.ln())).exp()
}

struct Placed {
    x0: i32,
    y0: i32,
    x1: i32,
    y1: i32,
}

impl Placed {
    fn of(x: i32, y: i32, f: &Footprint) -> Placed {
        let (x0, y0) = (x - f.nx / 2, y - f.ny / 2);
        Placed {
            x0,
            y0,
            x1: x0 + f.nx,
            y1: y0 + f.ny,
        }
    }

    fn clear_of(&self, o: &Placed) -> bool {
        self.x1 + GAP_CM <= o.x0 || o.x1 + GAP_CM <= self.x0 || self.y1 + GAP_CM <= o.y0 || o.y1 + GAP_CM <= self.y0
    }
}

impl SceneGenerator {
    pub fn with_preset(preset: ScenePreset) -> Self {
        Self {
            preset,
            ..Self::default()
        }
    }

    pub fn generate(&self, seed: u64, split: Split, role: SplitRole) -> SceneSpec {
        let split_tag = match split {
            Split::NovelLayouts => 1,
            Split::NovelShapes => 2,
        };
        let role_tag = match role {
            SplitRole::Train => 10,
            SplitRole::Test => 20,
        };
        let preset_tag = match self.preset {
            ScenePreset::Full => 100,
            ScenePreset::Trivial => 200,
        };
        for attempt in 0u64.. {
            let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(&[seed, split_tag, role_tag, preset_tag, attempt]));
            if let Some(s) = self.try_generate(&mut rng, split, role) {
                return s;
            }
        }
        unreachable!()
    }

    fn shapes_for(&self, split: Split, role: SplitRole, count: usize, rng: &mut ChaCha8Rng) -> Vec<ShapeKind> {
        let regular: Vec<ShapeKind> = ShapeKind::ALL
            .into_iter()
            .filter(|k| !HELD_OUT_SHAPES.contains(k))
            .collect();
        match (split, role) {
            (Split::NovelShapes, SplitRole::Train) => {
                (0..count).map(|_| regular[rng.random_range(0..regular.len())]).collect()
            }
            (Split::NovelShapes, SplitRole::Test) => {
                let held = count / 2 + 1;
                let mut v: Vec<ShapeKind> = (0..count)
                    .map(|i| {
                        if i < held {
                            HELD_OUT_SHAPES[rng.random_range(0..HELD_OUT_SHAPES.len())]
                        } else {
                            regular[rng.random_range(0..regular.len())]
                        }
                    })
                    .collect();
                v.shuffle(rng);
                v
            }
            (Split::NovelLayouts, _) => (0..count)
                .map(|_| ShapeKind::ALL[rng.random_range(0..ShapeKind::ALL.len())])
                .collect(),
        }
    }

    fn movable(&self, rng: &mut ChaCha8Rng, shape: ShapeKind) -> ObjectSpec {
        let b = rng.random_range(0..3usize);
        let bucket = &BUCKETS[b];
        let mass_kg = log_uniform(rng, bucket.mass.0, bucket.mass.1);
        debug_assert_eq!(MassClass::of_mass(mass_kg).index(), b);
        let mut fb = b;
        if rng.random_bool(self.bucket_noise) {
            fb = match b {
                0 => 1,
                2 => 1,
                _ => {
                    if rng.random_bool(0.5) {
                        0
                    } else {
                        2
                    }
                }
            };
        }
        let lo = if fb == 0 { 0.0 } else { FORCES[fb - 1] };
        let hi = FORCES[fb];
        // (lo, hi]: step just past lo so the weaker force never suffices
        let min_force = rng.random_range(lo + 0.05 * (hi - lo)..=hi);
        let hue = if rng.random_bool(self.material_hue_prob) {
            rng.random_range(bucket.hue.0..bucket.hue.1)
        } else {
            let (a, z) = OFF_FAMILY_HUES[rng.random_range(0..OFF_FAMILY_HUES.len())];
            rng.random_range(a..z)
        };
        let color = hsv(hue, rng.random_range(0.55..0.85), rng.random_range(0.65..0.95));
        let textured = rng.random_bool(0.5);
        ObjectSpec {
            shape,
            x_cm: 0,
            y_cm: 0,
            rotation: rng.random_range(0..4u8),
            size_cm: rng.random_range(bucket.size_cm.0..=bucket.size_cm.1),
            height_m: rng.random_range(bucket.height.0..bucket.height.1),
            color,
            texture_seed: if textured { rng.random_range(1..u32::MAX) } else { 0 },
            mass_kg,
            min_force,
            is_static: false,
        }
    }

    fn try_generate(&self, rng: &mut ChaCha8Rng, split: Split, role: SplitRole) -> Option<SceneSpec> {
        let room_w_cm = rng.random_range(260..=420);
        let room_d_cm = rng.random_range(260..=420);
        let spawn = AgentPose {
            x_cm: rng.random_range(SPAWN_MARGIN_CM..room_w_cm - SPAWN_MARGIN_CM),
            y_cm: rng.random_range(SPAWN_MARGIN_CM..room_d_cm - SPAWN_MARGIN_CM),
            camera_height_m: CAMERA_HEIGHT,
            reach_m: self.reach_m,
        };
        let floor_texture = if rng.random_bool(0.7) { rng.random_range(1..u32::MAX) } else { 0 };
        let mut obstacles = Vec::new();
        let mut placed: Vec<Placed> = Vec::new();
        let mut objects = Vec::new();

        if self.preset == ScenePreset::Trivial {
            let mut o = self.movable(rng, ShapeKind::Box);
            o.size_cm = rng.random_range(50..=60);
            o.rotation = 0;
            let f = o.footprint();
            let (x, y) = self.near_agent(rng, &spawn, 40, 60);
            let p = Placed::of(x, y, &f);
            if p.x0 < 0 || p.y0 < 0 || p.x1 > room_w_cm || p.y1 > room_d_cm {
                return None;
            }
            o.x_cm = x;
            o.y_cm = y;
            objects.push(o);
            return Some(SceneSpec {
                room_w_cm,
                room_d_cm,
                obstacles,
                floor_texture,
                objects,
                spawn,
                lighting_jitter: self.lighting_jitter,
                pixel_noise: self.pixel_noise,
            });
        }

        let spawn_zone = Placed {
            x0: spawn.x_cm - 20,
            y0: spawn.y_cm - 20,
            x1: spawn.x_cm + 20,
            y1: spawn.y_cm + 20,
        };
        // counters along walls
        for _ in 0..rng.random_range(0..=2) {
            let depth = rng.random_range(45..=60);
            let len = rng.random_range(80..=160);
            let side = rng.random_range(0..4);
            let ob = match side {
                0 => {
                    let x0 = rng.random_range(0..=(room_w_cm - len).max(0));
                    Obstacle { x0, y0: 0, x1: x0 + len, y1: depth, height_m: 0.9 }
                }
                1 => {
                    let x0 = rng.random_range(0..=(room_w_cm - len).max(0));
                    Obstacle { x0, y0: room_d_cm - depth, x1: x0 + len, y1: room_d_cm, height_m: 0.9 }
                }
                2 => {
                    let y0 = rng.random_range(0..=(room_d_cm - len).max(0));
                    Obstacle { x0: 0, y0, x1: depth, y1: y0 + len, height_m: 0.9 }
                }
                _ => {
                    let y0 = rng.random_range(0..=(room_d_cm - len).max(0));
                    Obstacle { x0: room_w_cm - depth, y0, x1: room_w_cm, y1: y0 + len, height_m: 0.9 }
                }
            };
            let p = Placed { x0: ob.x0, y0: ob.y0, x1: ob.x1, y1: ob.y1 };
            if p.clear_of(&spawn_zone) && placed.iter().all(|q| p.clear_of(q)) {
                placed.push(p);
                obstacles.push(ob);
            }
        }

        let n_movable = rng.random_range(2..=5usize);
        let shapes = self.shapes_for(split, role, n_movable, rng);
        for (k, &shape) in shapes.iter().enumerate() {
            let mut o = self.movable(rng, shape);
            let f = o.footprint();
            let mut ok = false;
            for _ in 0..60 {
                let (x, y) = if k == 0 {
                    self.near_agent(rng, &spawn, 60, 80)
                } else {
                    (
                        rng.random_range(0..room_w_cm),
                        rng.random_range(0..room_d_cm),
                    )
                };
                let p = Placed::of(x, y, &f);
                if p.x0 < 0 || p.y0 < 0 || p.x1 > room_w_cm || p.y1 > room_d_cm {
                    continue;
                }
                if !p.clear_of(&spawn_zone) && k > 0 {
                    continue;
                }
                if placed.iter().all(|q| p.clear_of(q)) {
                    o.x_cm = x;
                    o.y_cm = y;
                    placed.push(p);
                    ok = true;
                    break;
                }
            }
            if ok {
                objects.push(o);
            } else if k == 0 {
                return None;
            }
        }
        if objects.len() < 2 {
            return None;
        }
        if (split, role) == (Split::NovelShapes, SplitRole::Test) {
            let held = objects.iter().filter(|o| HELD_OUT_SHAPES.contains(&o.shape)).count();
            if 2 * held <= objects.len() {
                return None;
            }
        }

        if rng.random_bool(0.5) {
            let shape = [ShapeKind::Box, ShapeKind::Disc, ShapeKind::Bar][rng.random_range(0..3)];
            let mut o = ObjectSpec {
                shape,
                x_cm: 0,
                y_cm: 0,
                rotation: rng.random_range(0..4u8),
                size_cm: rng.random_range(60..=90),
                height_m: rng.random_range(0.6..0.8),
                color: STATIC_COLOR,
                texture_seed: 0,
                mass_kg: rng.random_range(40.0..80.0),
                min_force: f32::INFINITY,
                is_static: true,
            };
            let f = o.footprint();
            for _ in 0..40 {
                let (x, y) = (rng.random_range(0..room_w_cm), rng.random_range(0..room_d_cm));
                let p = Placed::of(x, y, &f);
                if p.x0 < 0 || p.y0 < 0 || p.x1 > room_w_cm || p.y1 > room_d_cm {
                    continue;
                }
                if p.clear_of(&spawn_zone) && placed.iter().all(|q| p.clear_of(q)) {
                    o.x_cm = x;
                    o.y_cm = y;
                    placed.push(p);
                    objects.push(o);
                    break;
                }
            }
        }

        Some(SceneSpec {
            room_w_cm,
            room_d_cm,
            obstacles,
            floor_texture,
            objects,
            spawn,
            lighting_jitter: self.lighting_jitter,
            pixel_noise: self.pixel_noise,
        })
    }

    fn near_agent(&self, rng: &mut ChaCha8Rng, spawn: &AgentPose, lo_cm: i32, hi_cm: i32) -> (i32, i32) {
        let a = rng.random_range(0.0..std::f32::consts::TAU);
        let d = rng.random_range(lo_cm as f32..=hi_cm as f32);
        (
            spawn.x_cm + (d * a.cos()).round() as i32,
            spawn.y_cm + (d * a.sin()).round() as i32,
        )
    }
}

/// Scene from the default generator with the full preset.
pub fn generate_scene(seed: u64, split: Split, role: SplitRole) -> SceneSpec {
    SceneGenerator::default().generate(seed, split, role)
}
