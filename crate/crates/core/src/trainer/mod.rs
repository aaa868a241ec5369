//! The interaction-driven training loop.
//!
//! A run fills the bank from an initial batch of locations, then alternates
//! between visiting `cycle_locations` new locations and taking `K` gradient
//! steps on batches drawn from the bank, with `K` annealed linearly over the
//! phase. The segmentation phase leaves the force head without gradient; the
//! joint phase trains all three heads. Each location is a freshly generated
//! training scene seen from its spawn pose.
//!
//! Rollouts run on a parameter snapshot taken at the start of each cycle and
//! draw every random number from a stream keyed by the location index, so
//! results do not depend on the number of worker threads.

mod config;
mod rollout;

pub use config::{OracleMode, PhaseConfig, TrainConfig};
pub use rollout::{escalate, run_location, Escalation, LocationConfig, LocationResult, Probe};

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::headgrads::{head_gradients, ImageTargets};
use crate::membank::{self, Bank, StoredFrame};
use crate::microworld::{stream_seed, AgentPose, RenderConfig, SceneGenerator, SceneSpec, SplitRole, WorldState};
use crate::predictor::{checkpoint, make_input, Adam, AdamConfig, HeadMaps, Model};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

const TAG_MODEL: u64 = 1;
const TAG_SCENE: u64 = 2;
const TAG_NOISE: u64 = 3;
const TAG_ROLLOUT: u64 = 4;
const TAG_SAMPLE: u64 = 5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Fill,
    Segmentation,
    Joint,
}

/// One line of the metrics log.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CycleMetrics {
    pub phase: Phase,
    pub cycle: usize,
    pub locations: u64,
    pub step: u64,
    pub bank_size: usize,
    pub k: usize,
    pub mean_priority: f64,
    pub interactions: usize,
    pub success_rate: f64,
    pub greedy_success_rate: f64,
    pub grad_norm_s: f64,
    pub grad_norm_m: f64,
    pub grad_norm_e: f64,
    pub mean_score: f64,
}

#[derive(Default)]
struct StepStats {
    gs: f64,
    gm: f64,
    ge: f64,
    score: f64,
    n: usize,
}

fn norm2(g: &HeadMaps) -> (f64, f64, f64) {
    let sq = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>();
    (
        sq(&g.s.data),
        g.m.iter().map(|p| sq(&p.data)).sum(),
        g.e.iter().map(|p| sq(&p.data)).sum(),
    )
}

/// The scene and pose visited at training location `index`.
pub fn training_location(config: &TrainConfig, index: u64) -> (SceneSpec, AgentPose) {
    let generator = SceneGenerator::with_preset(config.scene_preset);
    let scene = generator.generate(stream_seed(&[config.seed, TAG_SCENE, index]), config.split, SplitRole::Train);
    let pose = AgentPose {
        reach_m: config.reach_m,
        ..scene.spawn.clone()
    };
    (scene, pose)
}

pub struct Trainer {
    pub config: TrainConfig,
    pub model: Model<f32>,
    pub adam: Adam<f32>,
    pub bank: Bank,
    pub step: u64,
    pub locations: u64,
    pub metrics: Vec<CycleMetrics>,
    sample_rng: ChaCha8Rng,
    pool: rayon::ThreadPool,
}

impl Trainer {
    pub fn new(config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let model = Model::new(config.model.clone(), stream_seed(&[config.seed, TAG_MODEL]))?;
        let adam = Adam::new(
            AdamConfig {
                lr: config.lr,
                weight_decay: config.weight_decay,
                ..AdamConfig::default()
            },
            &model.params,
        );
        let jobs = if config.jobs == 0 {
            std::thread::available_parallelism().map_or(1, |n| n.get().saturating_sub(1).max(1))
        } else {
            config.jobs
        };
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build()
            .map_err(|e| Error::Config(format!("cannot start {jobs} workers: {e}")))?;
        Ok(Self {
            bank: Bank::new(config.bank_capacity),
            sample_rng: ChaCha8Rng::seed_from_u64(stream_seed(&[config.seed, TAG_SAMPLE])),
            model,
            adam,
            step: 0,
            locations: 0,
            metrics: Vec::new(),
            pool,
            config,
        })
    }

    fn location_config(&self, phase: &PhaseConfig) -> LocationConfig {
        LocationConfig {
            greedy: phase.greedy,
            random: phase.random,
            theta: self.config.theta,
            oracle: self.config.oracle,
            superpixels: self.config.superpixels,
            noise: self.config.noise,
        }
    }

    /// Visit `count` new locations with the current parameters and add them
    /// to the bank in location order.
    fn collect(&mut self, count: usize, lc: LocationConfig) -> Result<(usize, usize, usize, usize)> {
        let start = self.locations;
        let snapshot = &self.model;
        let cfg = &self.config;
        let render = RenderConfig {
            resolution: cfg.model.input_res,
            view_m: cfg.view_m,
        };
        let results: Vec<Result<LocationResult>> = self.pool.install(|| {
            (start..start + count as u64)
                .into_par_iter()
                .map(|i| {
                    let (scene, pose) = training_location(cfg, i);
                    let mut world = WorldState::new(scene, render, stream_seed(&[cfg.seed, TAG_NOISE, i]));
                    let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(&[cfg.seed, TAG_ROLLOUT, i]));
                    run_location(&mut world, &pose, snapshot, &lc, &mut rng)
                })
                .collect()
        });
        let (mut total, mut ok, mut greedy, mut greedy_ok) = (0, 0, 0, 0);
        for r in results {
            let r = r?;
            total += r.records.len();
            ok += r.records.iter().filter(|x| x.feedback.is_success()).count();
            greedy += r.greedy_count;
            greedy_ok += r.records[..r.greedy_count].iter().filter(|x| x.feedback.is_success()).count();
            self.bank.insert(StoredFrame::new(&r.rgb, &r.depth), r.records);
        }
        self.locations += count as u64;
        Ok((total, ok, greedy, greedy_ok))
    }

    /// `k` gradient steps on prioritized (or uniform) batches.
    fn train_batches(&mut self, k: usize, with_force: bool) -> Result<StepStats> {
        let mut st = StepStats::default();
        let res = self.config.model.output_res;
        for _ in 0..k {
            let n = self.config.batch_size.min(self.bank.len());
            if n == 0 {
                break;
            }
            let ids = self.bank.sample(n, self.config.prioritized, &mut self.sample_rng)?;
            let frames: Vec<_> = ids
                .iter()
                .map(|&id| {
                    let e = self.bank.get(id).expect("sampled entry is present");
                    (e.frame.rgb(), e.frame.depth())
                })
                .collect();
            let refs: Vec<_> = frames.iter().map(|(a, b)| (a, b)).collect();
            let x = make_input::<f32>(&refs)?;
            let (out, tape) = self.model.forward_train(&x)?;
            let mut grads = Vec::with_capacity(n);
            for (b, &id) in ids.iter().enumerate() {
                let maps = out.maps(b);
                let entry = self.bank.get(id).expect("sampled entry is present");
                let targets = ImageTargets::from_records(res, &entry.records)?;
                let g = head_gradients(&maps, &targets, with_force)?;
                let masks: Vec<_> = entry.masks().collect();
                let score = membank::score(&masks, &maps.e);
                self.bank.update_priority(id, score)?;
                let (a, m, e) = norm2(&g);
                st.gs += a.sqrt();
                st.gm += m.sqrt();
                st.ge += e.sqrt();
                st.score += score;
                st.n += 1;
                grads.push(g);
            }
            let g = self.model.backward(&tape, &grads)?;
            self.adam.step(&mut self.model.params, &g.params);
            self.step += 1;
        }
        Ok(st)
    }

    fn record(&mut self, phase: Phase, cycle: usize, k: usize, counts: (usize, usize, usize, usize), st: StepStats) -> CycleMetrics {
        let (total, ok, greedy, greedy_ok) = counts;
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        let per = |v: f64| if st.n == 0 { 0.0 } else { v / st.n as f64 };
        let m = CycleMetrics {
            phase,
            cycle,
            locations: self.locations,
            step: self.step,
            bank_size: self.bank.len(),
            k,
            mean_priority: self.bank.stats().mean_priority(),
            interactions: total,
            success_rate: ratio(ok, total),
            greedy_success_rate: ratio(greedy_ok, greedy),
            grad_norm_s: per(st.gs),
            grad_norm_m: per(st.gm),
            grad_norm_e: per(st.ge),
            mean_score: per(st.score),
        };
        self.metrics.push(m.clone());
        m
    }

    fn run_phase<F: FnMut(&CycleMetrics)>(&mut self, phase: Phase, pc: PhaseConfig, on_cycle: &mut F) -> Result<()> {
        let cycles = pc.cycles(self.config.cycle_locations);
        let lc = self.location_config(&pc);
        let mut remaining = pc.locations;
        for c in 0..cycles {
            let count = remaining.min(self.config.cycle_locations);
            remaining -= count;
            let counts = self.collect(count, lc)?;
            let k = pc.k_at(c, cycles);
            let st = self.train_batches(k, phase == Phase::Joint)?;
            let m = self.record(phase, c, k, counts, st);
            on_cycle(&m);
        }
        Ok(())
    }

    /// Run the whole schedule, calling `on_cycle` after every cycle.
    pub fn run_with<F: FnMut(&CycleMetrics)>(&mut self, out_dir: Option<&Path>, mut on_cycle: F) -> Result<()> {
        let out = out_dir.map(Path::to_path_buf);
        if let Some(dir) = &out {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            let echo = format!("# version {VERSION}\n{}", self.config.to_text());
            let p = dir.join("config.txt");
            std::fs::write(&p, echo).map_err(|e| Error::io(&p, e))?;
        }
        let fill = self.location_config(&self.config.segmentation);
        let counts = self.collect(self.config.initial_fill, fill)?;
        let m = self.record(Phase::Fill, 0, 0, counts, StepStats::default());
        on_cycle(&m);
        let seg = self.config.segmentation;
        self.run_phase(Phase::Segmentation, seg, &mut on_cycle)?;
        if let Some(dir) = &out {
            self.save_checkpoint(&dir.join("segmentation.ckpt"))?;
        }
        let joint = self.config.joint;
        self.run_phase(Phase::Joint, joint, &mut on_cycle)?;
        if let Some(dir) = &out {
            self.save_checkpoint(&dir.join("final.ckpt"))?;
            self.bank.stats().save(&dir.join("bank_stats.txt"))?;
            self.write_metrics(&dir.join("metrics.jsonl"))?;
        }
        Ok(())
    }

    pub fn run(&mut self, out_dir: Option<&Path>) -> Result<()> {
        self.run_with(out_dir, |m| {
            log::info!(
                "{:?} cycle {} step {} bank {} success {:.3} greedy {:.3} score {:.3}",
                m.phase,
                m.cycle,
                m.step,
                m.bank_size,
                m.success_rate,
                m.greedy_success_rate,
                m.mean_score
            )
        })
    }

    pub fn save_checkpoint(&self, path: &Path) -> Result<()> {
        checkpoint::save(path, &self.model, Some(&self.adam), self.step)
    }

    pub fn metrics_jsonl(&self) -> String {
        let mut s = String::new();
        for m in &self.metrics {
            s.push_str(&serde_json::to_string(m).expect("metrics serialize"));
            s.push('\n');
        }
        s
    }

    pub fn write_metrics(&self, path: &Path) -> Result<()> {
        let f = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(f);
        w.write_all(self.metrics_jsonl().as_bytes()).map_err(|e| Error::io(path, e))?;
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// Train from `config`, writing artifacts to `out_dir`. Returns the trainer
/// for inspection.
pub fn train(config: TrainConfig, out_dir: Option<&Path>) -> Result<Trainer> {
    let mut t = Trainer::new(config)?;
    t.run(out_dir)?;
    Ok(t)
}

/// Paths of the artifacts a run leaves in its output directory.
pub fn artifact_paths(dir: &Path) -> [PathBuf; 5] {
    ["config.txt", "segmentation.ckpt", "final.ckpt", "bank_stats.txt", "metrics.jsonl"].map(|f| dir.join(f))
}

#[cfg(test)]
mod tests;
