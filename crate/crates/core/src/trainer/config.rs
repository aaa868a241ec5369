use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::membank::DEFAULT_CAPACITY;
use crate::microworld::{ScenePreset, Split, DEFAULT_REACH};
use crate::predictor::ModelConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OracleMode {
    None,
    Interactions,
    Masks,
    Both,
}

impl OracleMode {
    pub fn interactions(self) -> bool {
        matches!(self, OracleMode::Interactions | OracleMode::Both)
    }

    pub fn masks(self) -> bool {
        matches!(self, OracleMode::Masks | OracleMode::Both)
    }

    pub fn name(self) -> &'static str {
        match self {
            OracleMode::None => "none",
            OracleMode::Interactions => "oracle_interactions",
            OracleMode::Masks => "oracle_masks",
            OracleMode::Both => "both",
        }
    }
}

impl FromStr for OracleMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "none" => OracleMode::None,
            "oracle_interactions" | "interactions" => OracleMode::Interactions,
            "oracle_masks" | "masks" => OracleMode::Masks,
            "both" => OracleMode::Both,
            _ => return Err(Error::Config(format!("unknown oracle mode {s:?}"))),
        })
    }
}

/// Schedule of one training phase.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PhaseConfig {
    /// Locations visited in this phase, excluding the initial fill.
    pub locations: usize,
    pub greedy: usize,
    pub random: usize,
    pub k_start: usize,
    pub k_end: usize,
}

impl PhaseConfig {
    /// Number of add-then-train cycles.
    pub fn cycles(&self, cycle_locations: usize) -> usize {
        self.locations.div_ceil(cycle_locations)
    }

    /// Gradient batches after cycle `c`, linear from `k_start` to `k_end`.
    pub fn k_at(&self, c: usize, cycles: usize) -> usize {
        if cycles <= 1 {
            return self.k_start;
        }
        let t = c as f64 / (cycles - 1) as f64;
        (self.k_start as f64 + t * (self.k_end as f64 - self.k_start as f64)).round() as usize
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub seed: u64,
    pub model: ModelConfig,
    pub scene_preset: ScenePreset,
    pub split: Split,
    pub view_m: f32,
    pub initial_fill: usize,
    pub cycle_locations: usize,
    pub batch_size: usize,
    pub segmentation: PhaseConfig,
    pub joint: PhaseConfig,
    pub lr: f64,
    pub weight_decay: f64,
    pub theta: f64,
    pub bank_capacity: usize,
    pub oracle: OracleMode,
    pub reach_m: f32,
    pub superpixels: bool,
    pub prioritized: bool,
    pub noise: bool,
    /// Rollout worker threads; 0 picks `cores - 1` (at least one).
    pub jobs: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::large()
    }
}

impl TrainConfig {
    /// Full schedule: 3000-location fill, ~65k locations, K 15 to 45, then a
    /// joint phase with K 15 to 35.
    pub fn large() -> Self {
        Self {
            seed: 0,
            model: ModelConfig::default(),
            scene_preset: ScenePreset::Full,
            split: Split::NovelLayouts,
            view_m: 3.0,
            initial_fill: 3000,
            cycle_locations: 70,
            batch_size: 64,
            segmentation: PhaseConfig {
                locations: 62_000,
                greedy: 10,
                random: 10,
                k_start: 15,
                k_end: 45,
            },
            joint: PhaseConfig {
                locations: 30_000,
                greedy: 5,
                random: 5,
                k_start: 15,
                k_end: 35,
            },
            lr: 5e-4,
            weight_decay: 1e-4,
            theta: 0.0,
            bank_capacity: DEFAULT_CAPACITY,
            oracle: OracleMode::None,
            reach_m: DEFAULT_REACH,
            superpixels: true,
            prioritized: true,
            noise: true,
            jobs: 0,
        }
    }

    /// Small model at 96x96 with a schedule sized for a CPU.
    pub fn desk() -> Self {
        Self {
            model: ModelConfig::desk(),
            initial_fill: 400,
            cycle_locations: 40,
            batch_size: 32,
            segmentation: PhaseConfig {
                locations: 2400,
                greedy: 10,
                random: 10,
                k_start: 5,
                k_end: 15,
            },
            joint: PhaseConfig {
                locations: 1200,
                greedy: 5,
                random: 5,
                k_start: 5,
                k_end: 12,
            },
            lr: 1e-3,
            ..Self::large()
        }
    }

    /// A few cycles on the tiny model; for tests.
    pub fn smoke() -> Self {
        Self {
            model: ModelConfig {
                input_res: 48,
                output_res: 16,
                ..ModelConfig::tiny()
            },
            initial_fill: 6,
            cycle_locations: 4,
            batch_size: 4,
            segmentation: PhaseConfig {
                locations: 8,
                greedy: 3,
                random: 2,
                k_start: 1,
                k_end: 2,
            },
            joint: PhaseConfig {
                locations: 4,
                greedy: 2,
                random: 1,
                k_start: 1,
                k_end: 1,
            },
            bank_capacity: 100,
            jobs: 1,
            ..Self::large()
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "large" => Ok(Self::large()),
            "desk" => Ok(Self::desk()),
            "smoke" => Ok(Self::smoke()),
            _ => Err(Error::Config(format!("unknown preset {name:?} (large, desk, smoke)"))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        let bad = |m: &str| Err(Error::Config(m.into()));
        if self.cycle_locations == 0 || self.batch_size == 0 {
            return bad("cycle_locations and batch_size must be positive");
        }
        if self.bank_capacity == 0 {
            return bad("bank_capacity must be positive");
        }
        if self.initial_fill == 0 && self.segmentation.locations + self.joint.locations > 0 {
            return bad("initial_fill must be positive");
        }
        if !(self.reach_m > 0.0) {
            return bad("reach_m must be positive");
        }
        if !(self.view_m > 0.0 && self.view_m.is_finite()) {
            return bad("view_m must be positive");
        }
        if !(self.lr >= 0.0 && self.weight_decay >= 0.0) {
            return bad("lr and weight_decay must be non-negative");
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k}={v}");
        };
        kv("seed", self.seed.to_string());
        for tok in self.model.to_text().split_whitespace() {
            if let Some((k, v)) = tok.split_once('=') {
                kv(&format!("model.{k}"), v.to_string());
            }
        }
        kv("scene_preset", self.scene_preset.name().into());
        kv("split", self.split.name().into());
        kv("view_m", self.view_m.to_string());
        kv("initial_fill", self.initial_fill.to_string());
        kv("cycle_locations", self.cycle_locations.to_string());
        kv("batch_size", self.batch_size.to_string());
        for (name, p) in [("segmentation", &self.segmentation), ("joint", &self.joint)] {
            kv(&format!("{name}.locations"), p.locations.to_string());
            kv(&format!("{name}.greedy"), p.greedy.to_string());
            kv(&format!("{name}.random"), p.random.to_string());
            kv(&format!("{name}.k_start"), p.k_start.to_string());
            kv(&format!("{name}.k_end"), p.k_end.to_string());
        }
        kv("lr", self.lr.to_string());
        kv("weight_decay", self.weight_decay.to_string());
        kv("theta", self.theta.to_string());
        kv("bank_capacity", self.bank_capacity.to_string());
        kv("oracle", self.oracle.name().into());
        kv("reach_m", self.reach_m.to_string());
        kv("superpixels", self.superpixels.to_string());
        kv("prioritized", self.prioritized.to_string());
        kv("noise", self.noise.to_string());
        kv("jobs", self.jobs.to_string());
        s
    }

    /// Apply one `key=value` override.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn p<T: FromStr>(key: &str, v: &str) -> Result<T> {
            v.trim().parse().map_err(|_| Error::Config(format!("bad value {v:?} for {key}")))
        }
        let v = value.trim();
        if key == "preset" {
            let keep_seed = self.seed;
            *self = Self::preset(v)?;
            self.seed = keep_seed;
            return Ok(());
        }
        if key == "model" {
            self.model = match v {
                "default" => ModelConfig::default(),
                "desk" => ModelConfig::desk(),
                "tiny" => ModelConfig::tiny(),
                _ => return Err(Error::Config(format!("unknown model preset {v:?}"))),
            };
            return Ok(());
        }
        if let Some(mk) = key.strip_prefix("model.") {
            return self.model.set_field(mk, v);
        }
        if let Some((ph, field)) = key.split_once('.') {
            let pc = match ph {
                "segmentation" => &mut self.segmentation,
                "joint" => &mut self.joint,
                _ => return Err(Error::Config(format!("unknown key {key:?}"))),
            };
            match field {
                "locations" => pc.locations = p(key, v)?,
                "greedy" => pc.greedy = p(key, v)?,
                "random" => pc.random = p(key, v)?,
                "k_start" => pc.k_start = p(key, v)?,
                "k_end" => pc.k_end = p(key, v)?,
                _ => return Err(Error::Config(format!("unknown key {key:?}"))),
            }
            return Ok(());
        }
        match key {
            "seed" => self.seed = p(key, v)?,
            "scene_preset" => self.scene_preset = v.parse().map_err(|_| Error::Config(format!("bad scene preset {v:?}")))?,
            "split" => self.split = v.parse().map_err(|_| Error::Config(format!("bad split {v:?}")))?,
            "view_m" => self.view_m = p(key, v)?,
            "initial_fill" => self.initial_fill = p(key, v)?,
            "cycle_locations" => self.cycle_locations = p(key, v)?,
            "batch_size" => self.batch_size = p(key, v)?,
            "lr" => self.lr = p(key, v)?,
            "weight_decay" => self.weight_decay = p(key, v)?,
            "theta" => self.theta = p(key, v)?,
            "bank_capacity" => self.bank_capacity = p(key, v)?,
            "oracle" => self.oracle = v.parse()?,
            "reach_m" => self.reach_m = p(key, v)?,
            "superpixels" => self.superpixels = p(key, v)?,
            "prioritized" => self.prioritized = p(key, v)?,
            "noise" => self.noise = p(key, v)?,
            "jobs" => self.jobs = p(key, v)?,
            _ => return Err(Error::Config(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    /// Parse `key=value` lines on top of `base`. `preset=` lines reset
    /// everything before them.
    pub fn parse_onto(mut base: Self, text: &str) -> Result<Self> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key=value, got {line:?}", i + 1)))?;
            base.set(k.trim(), v).map_err(|e| Error::Config(format!("line {}: {e}", i + 1)))?;
        }
        base.validate()?;
        Ok(base)
    }

    pub fn from_text(text: &str) -> Result<Self> {
        Self::parse_onto(Self::large(), text)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }
}
