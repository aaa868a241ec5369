use super::*;
use crate::headgrads::Feedback;
use crate::microworld::{ObjectSpec, Obstacle, ShapeKind, CAMERA_HEIGHT, DEFAULT_REACH, FORCES};
use crate::predictor::ModelConfig;
use proptest::prelude::*;

/// 150 px over 1.5 m: one pixel per lattice cell, centred on the agent.
const RENDER: RenderConfig = RenderConfig {
    resolution: 150,
    view_m: 1.5,
};

fn min_force_for(class: usize) -> f32 {
    [3.0, 20.0, 100.0][class]
}

fn box_scene(class: usize, walled: bool) -> (SceneSpec, AgentPose) {
    let pose = AgentPose {
        x_cm: 200,
        y_cm: 200,
        camera_height_m: CAMERA_HEIGHT,
        reach_m: DEFAULT_REACH,
    };
    let obj = ObjectSpec {
        shape: ShapeKind::Box,
        x_cm: 200,
        y_cm: 200,
        rotation: 0,
        size_cm: 30,
        height_m: 0.3,
        color: [0.85, 0.7, 0.2],
        texture_seed: 0,
        mass_kg: 1.0,
        min_force: min_force_for(class),
        is_static: false,
    };
    assert_eq!(obj.force_class(), Some(class));
    // flush against the +x side of the box
    let obstacles = if walled {
        vec![Obstacle {
            x0: 215,
            y0: 150,
            x1: 240,
            y1: 250,
            height_m: 0.5,
        }]
    } else {
        vec![]
    };
    let scene = SceneSpec {
        room_w_cm: 400,
        room_d_cm: 400,
        obstacles,
        floor_texture: 0,
        objects: vec![obj],
        spawn: pose.clone(),
        lighting_jitter: 0.02,
        pixel_noise: 0.006,
    };
    (scene, pose)
}

fn box_world(class: usize, walled: bool) -> (WorldState, AgentPose) {
    let (scene, pose) = box_scene(class, walled);
    (WorldState::new(scene, RENDER, 3), pose)
}

fn expected(class: usize, r: usize, walled: bool) -> (Feedback, Vec<usize>) {
    let mut steps = vec![];
    if r > 0 {
        steps.push((r - 1, Feedback::TooLarge));
    }
    steps.push((r, Feedback::Correct));
    if r < 2 {
        steps.push((2, Feedback::TooSmall));
    }
    let mut applied = vec![];
    for (f, fb) in steps {
        applied.push(f);
        if !walled && FORCES[f] >= min_force_for(class) {
            return (fb, applied);
        }
    }
    (Feedback::Unsuccessful, applied)
}

#[test]
fn escalation_truth_table() {
    let mut seen = std::collections::HashSet::new();
    for walled in [false, true] {
        for class in 0..3 {
            for r in 0..3 {
                let (mut world, pose) = box_world(class, walled);
                let (before, _) = world.render(&pose, false);
                let mut probe = Probe {
                    world: &mut world,
                    pose: &pose,
                    labels: None,
                    noise: false,
                };
                let esc = escalate(&mut probe, before, (25, 25), r, 0).unwrap();
                let (fb, applied) = expected(class, r, walled);
                assert_eq!(esc.feedback, fb, "class {class} r {r} walled {walled}");
                assert_eq!(esc.applied, applied, "class {class} r {r} walled {walled}");
                assert_eq!(esc.b_plus.is_some(), fb.is_success());
                assert_eq!(esc.moving_force, fb.is_success().then(|| *applied.last().unwrap()));
                if let Some(b) = &esc.b_plus {
                    assert!(b.get(25, 25));
                }
                seen.insert(fb.name());
            }
        }
    }
    assert_eq!(seen.len(), 4);
}

#[test]
fn escalation_with_superpixels_still_succeeds() {
    let (mut world, pose) = box_world(1, false);
    let (before, _) = world.render(&pose, false);
    let labels = crate::imaging::felzenszwalb(&before, crate::imaging::SuperpixelParams::scaled_for(150));
    let mut probe = Probe {
        world: &mut world,
        pose: &pose,
        labels: Some(&labels),
        noise: true,
    };
    let esc = escalate(&mut probe, before, (25, 25), 1, 4).unwrap();
    assert_eq!(esc.feedback, Feedback::Correct);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]
    #[test]
    fn zero_prediction_never_too_large(class in 0usize..3, dir in 0usize..8, walled in any::<bool>()) {
        let (mut world, pose) = box_world(class, walled);
        let (before, _) = world.render(&pose, false);
        let mut probe = Probe { world: &mut world, pose: &pose, labels: None, noise: false };
        let esc = escalate(&mut probe, before, (25, 25), 0, dir).unwrap();
        prop_assert_ne!(esc.feedback, Feedback::TooLarge);
        prop_assert_eq!(esc.applied[0], 0);
    }

    #[test]
    fn k_schedule_is_monotone_with_fixed_ends(a in 0usize..50, b in 0usize..50, cycles in 1usize..40) {
        let p = PhaseConfig { locations: 0, greedy: 0, random: 0, k_start: a, k_end: b };
        prop_assert_eq!(p.k_at(0, cycles), a);
        if cycles > 1 {
            prop_assert_eq!(p.k_at(cycles - 1, cycles), b);
        }
        for c in 1..cycles {
            let (x, y) = (p.k_at(c - 1, cycles), p.k_at(c, cycles));
            let ordered = if a <= b { x <= y } else { x >= y };
            prop_assert!(ordered);
        }
    }
}

#[test]
fn large_schedule_cycles() {
    let c = TrainConfig::large();
    let n = c.segmentation.cycles(c.cycle_locations);
    assert_eq!(n, 886);
    assert_eq!(c.segmentation.k_at(0, n), 15);
    assert_eq!(c.segmentation.k_at(n - 1, n), 45);
    assert_eq!(c.joint.k_at(0, 2), 15);
    assert_eq!(c.joint.k_at(1, 2), 35);
}

#[test]
fn config_roundtrip_and_overrides() {
    for name in ["large", "desk", "smoke"] {
        let c = TrainConfig::preset(name).unwrap();
        assert_eq!(TrainConfig::parse_onto(TrainConfig::large(), &c.to_text()).unwrap(), c);
    }
    let c = TrainConfig::from_text("preset=desk\n# comment\nseed=9\nmodel.trunk=32 # inline\njoint.k_end=3\noracle=both\n").unwrap();
    assert_eq!(c.seed, 9);
    assert_eq!(c.model.trunk, 32);
    assert_eq!(c.model.input_res, ModelConfig::desk().input_res);
    assert_eq!(c.joint.k_end, 3);
    assert_eq!(c.oracle, OracleMode::Both);
    assert!(TrainConfig::from_text("bogus=1").is_err());
    assert!(TrainConfig::from_text("lr=fast").is_err());
    assert!(TrainConfig::from_text("no equals sign").is_err());
    assert!(TrainConfig::from_text("model.input_res=97").is_err());
    assert!(TrainConfig::from_text("batch_size=0").is_err());
    assert!(TrainConfig::from_text("phase3.k_end=1").is_err());
}

fn tiny_model(res: usize) -> Model<f32> {
    Model::new(
        ModelConfig {
            input_res: res,
            output_res: res / 3,
            ..ModelConfig::tiny()
        },
        5,
    )
    .unwrap()
}

fn location(oracle: OracleMode, reach: f32) -> LocationResult {
    let (scene, _) = box_scene(0, false);
    let render = RenderConfig {
        resolution: 48,
        view_m: 1.5,
    };
    let mut world = WorldState::new(scene, render, 1);
    let pose = AgentPose {
        reach_m: reach,
        ..world.scene.spawn.clone()
    };
    let cfg = LocationConfig {
        greedy: 3,
        random: 4,
        theta: -1e9,
        oracle,
        superpixels: true,
        noise: true,
    };
    let model = tiny_model(48);
    run_location(&mut world, &pose, &model, &cfg, &mut ChaCha8Rng::seed_from_u64(2)).unwrap()
}

#[test]
fn nothing_reachable_gives_only_failures() {
    let r = location(OracleMode::None, 0.05);
    assert_eq!(r.records.len(), 7);
    assert!(r.records.iter().all(|x| x.feedback == Feedback::Unsuccessful && x.mask.is_none()));
}

#[test]
fn oracle_modes() {
    let (scene, pose) = box_scene(0, false);
    let render = RenderConfig {
        resolution: 48,
        view_m: 1.5,
    };
    let world = WorldState::new(scene, render, 1);
    let gt = world.ground_truth(&pose);
    assert_eq!(gt.len(), 1);
    let truth = gt[0].mask.downsample_majority(3).unwrap();

    let r = location(OracleMode::Both, DEFAULT_REACH);
    // at most one greedy action per object, and the box is always covered
    let on_box: Vec<_> = r.records[..r.greedy_count].iter().filter(|x| truth.get(x.point.0, x.point.1)).collect();
    assert_eq!(on_box.len(), 1);
    assert_eq!(on_box[0].feedback, Feedback::Correct);
    for rec in &r.records {
        if let Some(m) = &rec.mask {
            if truth.get(rec.point.0, rec.point.1) {
                assert_eq!(m, &truth);
            }
        }
    }

    let plain = location(OracleMode::None, DEFAULT_REACH);
    assert_eq!(plain.greedy_count, 3);
    assert_eq!(plain.records.len(), 7);
}

fn smoke() -> TrainConfig {
    TrainConfig::smoke()
}

#[test]
fn smoke_run_writes_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let t = train(smoke(), Some(dir.path())).unwrap();
    for p in artifact_paths(dir.path()) {
        assert!(p.exists(), "{} missing", p.display());
    }
    let c = smoke();
    let seg = c.segmentation.cycles(c.cycle_locations);
    let joint = c.joint.cycles(c.cycle_locations);
    assert_eq!(t.metrics.len(), 1 + seg + joint);
    assert_eq!(t.locations as usize, c.initial_fill + c.segmentation.locations + c.joint.locations);
    let k: usize = t.metrics.iter().map(|m| m.k).sum();
    assert_eq!(t.step as usize, k);
    assert_eq!(t.bank.len(), t.locations as usize);
    let lines = std::fs::read_to_string(dir.path().join("metrics.jsonl")).unwrap();
    assert_eq!(lines.lines().count(), t.metrics.len());
    let first: serde_json::Value = serde_json::from_str(lines.lines().next().unwrap()).unwrap();
    assert_eq!(first["phase"], "fill");
    let echoed = std::fs::read_to_string(dir.path().join("config.txt")).unwrap();
    assert_eq!(TrainConfig::from_text(&echoed).unwrap(), c);
    let ck = checkpoint::load(&dir.path().join("final.ckpt")).unwrap();
    assert_eq!(ck.step, t.step);
    let stats = membank::BankStats::load(&dir.path().join("bank_stats.txt")).unwrap();
    assert_eq!(stats.entries.len(), t.bank.len());
}

#[test]
fn smoke_run_is_deterministic_across_thread_counts() {
    let a = train(smoke(), None).unwrap();
    let b = train(TrainConfig { jobs: 3, ..smoke() }, None).unwrap();
    assert_eq!(
        checkpoint::to_bytes(&a.model, Some(&a.adam), a.step),
        checkpoint::to_bytes(&b.model, Some(&b.adam), b.step)
    );
    assert_eq!(a.metrics_jsonl(), b.metrics_jsonl());
    assert_eq!(a.bank.stats(), b.bank.stats());
    let c = train(TrainConfig { seed: 1, ..smoke() }, None).unwrap();
    assert_ne!(a.metrics_jsonl(), c.metrics_jsonl());
}
