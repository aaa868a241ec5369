use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use interactseg::eval::{self, EvalConfig, ImageEval};
use interactseg::imaging::io::{load_depth, load_rgb, mask_to_image, save_depth, save_rgb};
use interactseg::imaging::SuperpixelParams;
use interactseg::membank::BankStats;
use interactseg::microworld::{
    scenefile, InteractionRequest, RenderConfig, SceneGenerator, ScenePreset, SceneSpec, Split, SplitRole, WorldState,
};
use interactseg::predictor::{checkpoint, make_input, Model};
use interactseg::selfsup::{self, POOL};
use interactseg::trainer::{Trainer, TrainConfig, VERSION};

/// Environment variable holding the master seed.
const SEED_ENV: &str = "INTERACTSEG_SEED";
const SCENE_EXT: &str = "scene";

#[derive(Parser)]
#[command(name = "interactseg", version, about = "Learn objects and relative mass by pushing things in a micro-world")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Write generated scene files (and optionally their rendered views).
    GenScenes(GenArgs),
    /// Run the interaction training loop.
    Train(TrainArgs),
    /// Score a checkpoint on a set of scenes.
    Eval(EvalArgs),
    /// Proposals for one RGB+D pair.
    Infer(InferArgs),
    /// Push once in a scene and dump the self-supervision masks.
    SelfsupDebug(DebugArgs),
    /// Summarize a bank snapshot written by `train`.
    BankStats { file: PathBuf },
}

#[derive(Args)]
struct GenArgs {
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long, default_value_t = 50)]
    count: usize,
    #[arg(long, default_value = "full")]
    preset: ScenePreset,
    #[arg(long, default_value = "novel_layouts")]
    split: Split,
    #[arg(long, default_value = "test")]
    role: SplitRole,
    #[arg(long, env = SEED_ENV, default_value_t = 0)]
    seed: u64,
    /// Also write `<name>.rgb.png` and `<name>.depth.png` at this resolution.
    #[arg(long)]
    render: Option<usize>,
}

#[derive(Args)]
struct TrainArgs {
    /// key=value file applied on top of the preset.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value = "desk")]
    preset: String,
    #[arg(long)]
    out_dir: PathBuf,
    /// Extra `key=value` overrides, applied after the file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[arg(long, env = SEED_ENV)]
    seed: Option<u64>,
    #[arg(long)]
    jobs: Option<usize>,
    /// Single-threaded rollouts.
    #[arg(long)]
    deterministic: bool,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    ckpt: PathBuf,
    /// Directory of scene files; generated test scenes otherwise.
    #[arg(long)]
    scenes: Option<PathBuf>,
    #[arg(long, default_value_t = 50)]
    generate: usize,
    #[arg(long, default_value = "full")]
    preset: ScenePreset,
    #[arg(long, default_value = "novel_layouts")]
    split: Split,
    #[arg(long, env = SEED_ENV, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = interactseg::actsel::DEFAULT_THETA, allow_hyphen_values = true)]
    theta: f64,
    #[arg(long, default_value_t = 10)]
    proposals: usize,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    panels_dir: Option<PathBuf>,
    /// Also report the random-proposal baseline.
    #[arg(long)]
    baseline: bool,
}

#[derive(Args)]
struct InferArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    rgb: PathBuf,
    #[arg(long)]
    depth: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long, default_value_t = interactseg::actsel::DEFAULT_THETA, allow_hyphen_values = true)]
    theta: f64,
    #[arg(long, default_value_t = 10)]
    proposals: usize,
}

#[derive(Args)]
struct DebugArgs {
    #[arg(long)]
    scene: PathBuf,
    /// Interaction cell at output resolution.
    #[arg(long)]
    row: usize,
    #[arg(long)]
    col: usize,
    #[arg(long, default_value_t = 2)]
    force: usize,
    #[arg(long, default_value_t = 0)]
    direction: usize,
    #[arg(long, default_value_t = 300)]
    resolution: usize,
    #[arg(long)]
    no_noise: bool,
    #[arg(long)]
    out_dir: PathBuf,
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))
}

fn load_model(path: &Path) -> Result<Model<f32>> {
    Ok(checkpoint::load(path).with_context(|| format!("cannot load checkpoint {}", path.display()))?.model)
}

fn gen_scenes(a: GenArgs) -> Result<()> {
    create_dir(&a.out_dir)?;
    let g = SceneGenerator::with_preset(a.preset);
    let scenes: Vec<SceneSpec> = match a.role {
        SplitRole::Test => eval::test_scenes(a.preset, a.split, a.count, a.seed),
        SplitRole::Train => (0..a.count as u64)
            .map(|i| g.generate(interactseg::microworld::stream_seed(&[a.seed, i]), a.split, a.role))
            .collect(),
    };
    for (i, s) in scenes.iter().enumerate() {
        let name = format!("{i:04}");
        scenefile::save(s, &a.out_dir.join(format!("{name}.{SCENE_EXT}")))?;
        if let Some(res) = a.render {
            let render = RenderConfig { resolution: res, view_m: 3.0 };
            let mut w = WorldState::new(s.clone(), render, interactseg::microworld::stream_seed(&[a.seed, i as u64]));
            let (rgb, depth) = w.render(&s.spawn, true);
            save_rgb(&rgb, &a.out_dir.join(format!("{name}.rgb.png")))?;
            save_depth(&depth, &a.out_dir.join(format!("{name}.depth.png")))?;
        }
    }
    println!("wrote {} scenes to {}", scenes.len(), a.out_dir.display());
    Ok(())
}

/// Preset, then file, then environment, then flags.
fn train_config(a: &TrainArgs) -> Result<TrainConfig> {
    let mut c = TrainConfig::preset(&a.preset)?;
    if let Some(p) = &a.config {
        let text = fs::read_to_string(p).with_context(|| format!("cannot read config file {}", p.display()))?;
        c = TrainConfig::parse_onto(c, &text).with_context(|| format!("in config file {}", p.display()))?;
    }
    for kv in &a.overrides {
        let (k, v) = kv.split_once('=').with_context(|| format!("override {kv:?} is not key=value"))?;
        c.set(k.trim(), v)?;
    }
    if let Some(s) = a.seed {
        c.seed = s;
    }
    if let Some(j) = a.jobs {
        c.jobs = j;
    }
    if a.deterministic {
        c.jobs = 1;
    }
    c.validate()?;
    Ok(c)
}

fn train(a: TrainArgs) -> Result<()> {
    let c = train_config(&a)?;
    let mut t = Trainer::new(c)?;
    t.run(Some(&a.out_dir))?;
    println!(
        "trained {} steps over {} locations; artifacts in {}",
        t.step,
        t.locations,
        a.out_dir.display()
    );
    Ok(())
}

fn load_scene_dir(dir: &Path) -> Result<Vec<SceneSpec>> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .with_context(|| format!("cannot read scene directory {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == SCENE_EXT))
        .collect();
    paths.sort();
    if paths.is_empty() {
        bail!("no .{SCENE_EXT} files in {}", dir.display());
    }
    paths.iter().map(|p| Ok(scenefile::load(p)?)).collect()
}

fn run_eval(a: EvalArgs) -> Result<()> {
    let model = load_model(&a.ckpt)?;
    let scenes = match &a.scenes {
        Some(d) => load_scene_dir(d)?,
        None => eval::test_scenes(a.preset, a.split, a.generate, a.seed),
    };
    let cfg = EvalConfig {
        theta: a.theta,
        max_proposals: a.proposals,
        seed: a.seed,
        ..EvalConfig::default()
    };
    let detected = eval::detect(&model, &scenes, &cfg)?;
    let images: Vec<ImageEval> = detected.iter().map(|d| d.2.clone()).collect();
    let report = eval::MetricsReport::from_images(&images);
    let mut text = format!(
        "# version {VERSION}\n# checkpoint {}\n# seed {} theta {} proposals {}\n\n{}",
        a.ckpt.display(),
        a.seed,
        a.theta,
        a.proposals,
        report.to_text()
    );
    if a.baseline {
        let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
        let b = eval::random_baseline(&scenes, model.config.input_res, &cfg, &mut rng)?;
        text.push_str(&format!("\nrandom proposals\n{}", b.to_text()));
    }
    if let Some(parent) = a.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    fs::write(&a.out, &text).with_context(|| format!("cannot write {}", a.out.display()))?;
    if let Some(dir) = &a.panels_dir {
        create_dir(dir)?;
        for (i, (obs, maps, img)) in detected.iter().enumerate() {
            save_rgb(&eval::render_panel(&obs.rgb, maps, img), &dir.join(format!("{i:04}.png")))?;
        }
    }
    print!("{}", report.to_text());
    Ok(())
}

fn infer(a: InferArgs) -> Result<()> {
    let model = load_model(&a.ckpt)?;
    let rgb = load_rgb(&a.rgb)?;
    let depth = load_depth(&a.depth)?;
    let res = model.config.input_res;
    if rgb.height != res || rgb.width != res || depth.height != res || depth.width != res {
        bail!(
            "the checkpoint expects {res}x{res} inputs, got rgb {}x{} and depth {}x{}",
            rgb.height,
            rgb.width,
            depth.height,
            depth.width
        );
    }
    let maps = model.forward_eval(&make_input::<f32>(&[(&rgb, &depth)])?)?.maps(0);
    let cfg = EvalConfig {
        theta: a.theta,
        max_proposals: a.proposals,
        ..EvalConfig::default()
    };
    let dets = eval::proposals(&maps, &cfg);
    create_dir(&a.out_dir)?;
    let mut listing = String::from("# rank confidence mass_class area bbox(row0,col0,row1,col1) at output resolution\n");
    for (k, d) in dets.iter().enumerate() {
        listing.push_str(&format!(
            "proposal rank={k} confidence={:.6} mass={} area={} bbox={},{},{},{}\n",
            d.confidence,
            d.mass_class,
            d.mask.area(),
            d.bbox.0,
            d.bbox.1,
            d.bbox.2,
            d.bbox.3
        ));
        save_rgb(&mask_to_image(&d.mask), &a.out_dir.join(format!("mask_{k:02}.png")))?;
    }
    fs::write(a.out_dir.join("proposals.txt"), listing)?;
    let img = ImageEval {
        detections: dets,
        gts: vec![],
    };
    save_rgb(&eval::render_panel(&rgb, &maps, &img), &a.out_dir.join("panel.png"))?;
    println!("{} proposals; panel and listing in {}", img.detections.len(), a.out_dir.display());
    Ok(())
}

fn selfsup_debug(a: DebugArgs) -> Result<()> {
    let scene = scenefile::load(&a.scene)?;
    if a.resolution % POOL != 0 {
        bail!("resolution must be a multiple of {POOL}");
    }
    let out_res = a.resolution / POOL;
    if a.row >= out_res || a.col >= out_res {
        bail!("cell ({}, {}) outside the {out_res}x{out_res} output grid", a.row, a.col);
    }
    let render = RenderConfig {
        resolution: a.resolution,
        view_m: 3.0,
    };
    let pose = scene.spawn.clone();
    let mut world = WorldState::new(scene, render, 0);
    let noise = !a.no_noise;
    let (before, _) = world.render(&pose, noise);
    let outcome = world.apply_force(
        &pose,
        InteractionRequest {
            row: a.row * POOL + POOL / 2,
            col: a.col * POOL + POOL / 2,
            force_class: a.force,
            direction: a.direction,
        },
    );
    let (after, _) = world.render(&pose, noise);
    let sup = selfsup::supervise(&before, &after, (a.row, a.col), SuperpixelParams::scaled_for(a.resolution))?;
    create_dir(&a.out_dir)?;
    save_rgb(&before, &a.out_dir.join("before.png"))?;
    save_rgb(&after, &a.out_dir.join("after.png"))?;
    save_rgb(&mask_to_image(&sup.b), &a.out_dir.join("change.png"))?;
    save_rgb(&mask_to_image(&sup.b_plus), &a.out_dir.join("aligned.png"))?;
    let summary = format!(
        "moved {} object {:?} steps {}\nchange cells {} aligned cells {}\nsuccess mass {:.4} successful {}\n",
        outcome.moved,
        outcome.object,
        outcome.steps,
        sup.b.area(),
        sup.b_plus.area(),
        selfsup::success_mass(&sup.b_plus, a.row, a.col),
        sup.successful
    );
    fs::write(a.out_dir.join("summary.txt"), &summary)?;
    print!("{summary}");
    Ok(())
}

fn bank_stats(file: &Path) -> Result<()> {
    let s = BankStats::load(file)?;
    print!("{}", s.summary());
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.cmd {
        Cmd::GenScenes(a) => gen_scenes(a),
        Cmd::Train(a) => train(a),
        Cmd::Eval(a) => run_eval(a),
        Cmd::Infer(a) => infer(a),
        Cmd::SelfsupDebug(a) => selfsup_debug(a),
        Cmd::BankStats { file } => bank_stats(&file),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
