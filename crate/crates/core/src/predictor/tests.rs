use super::*;
use rand::Rng;

fn random_input<T: Real>(cfg: &ModelConfig, n: usize, seed: u64) -> Tensor<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut t = Tensor::zeros(INPUT_CHANNELS, n, cfg.input_res, cfg.input_res);
    t.data.iter_mut().for_each(|v| *v = T::lit(rng.random_range(0.0..1.0)));
    t
}

fn random_maps(cfg: &ModelConfig, rng: &mut ChaCha8Rng) -> HeadMaps {
    let mut g = HeadMaps::zeros(cfg.output_res, cfg.force_classes, cfg.embed_dim);
    for grid in std::iter::once(&mut g.s).chain(g.m.iter_mut()).chain(g.e.iter_mut()) {
        grid.data.iter_mut().for_each(|v| *v = rng.random_range(-1.0..1.0));
    }
    g
}

/// Perturb batch-norm statistics and affine parameters away from identity.
fn randomize_bn(model: &mut Model<f64>, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for (name, vals) in model.params.names.iter().zip(model.params.values.iter_mut()) {
        if name.ends_with(".gamma") {
            vals.iter_mut().for_each(|v| *v = rng.random_range(0.5..1.5));
        } else if name.ends_with(".beta") || name.ends_with(".bias") {
            vals.iter_mut().for_each(|v| *v = rng.random_range(-0.3..0.3));
        }
    }
    for (name, vals) in model.buffers.names.iter().zip(model.buffers.values.iter_mut()) {
        if name.ends_with("running_mean") {
            vals.iter_mut().for_each(|v| *v = rng.random_range(-0.5..0.5));
        } else {
            vals.iter_mut().for_each(|v| *v = rng.random_range(0.5..2.0));
        }
    }
}

fn objective(out: &ForwardOut<f64>, g: &[HeadMaps]) -> f64 {
    g.iter()
        .enumerate()
        .map(|(n, gm)| {
            let maps = out.maps(n);
            let planes = std::iter::once((&maps.s, &gm.s))
                .chain(maps.m.iter().zip(&gm.m))
                .chain(maps.e.iter().zip(&gm.e));
            planes
                .map(|(a, b)| a.data.iter().zip(&b.data).map(|(x, y)| x * y).sum::<f64>())
                .sum::<f64>()
        })
        .sum()
}

#[test]
fn default_shapes_and_parameter_count() {
    let model = Model::<f32>::new(ModelConfig::default(), 0).unwrap();
    let count = model.param_count();
    assert_eq!(count, 1_412_436);
    assert!((1_190_000..=1_610_000).contains(&count));
    let x = random_input::<f32>(&model.config, 1, 1);
    let out = model.forward_eval(&x).unwrap();
    assert_eq!((out.s.c, out.s.h, out.s.w), (1, 100, 100));
    assert_eq!((out.m.c, out.m.h, out.m.w), (3, 100, 100));
    assert_eq!((out.e.c, out.e.h, out.e.w), (16, 100, 100));
    assert!(out.is_finite());
}

#[test]
fn presets_validate() {
    for cfg in [ModelConfig::default(), ModelConfig::desk(), ModelConfig::tiny()] {
        cfg.validate().unwrap();
        assert_eq!(ModelConfig::from_text(&cfg.to_text()).unwrap(), cfg);
    }
    let bad = ModelConfig {
        output_res: 33,
        ..ModelConfig::desk()
    };
    assert!(bad.validate().is_err());
    assert!(Model::<f32>::new(bad, 0).is_err());
}

#[test]
fn wrong_input_shape_is_error() {
    let model = Model::<f32>::new(ModelConfig::tiny(), 0).unwrap();
    let x = Tensor::<f32>::zeros(4, 1, 33, 33);
    assert!(matches!(model.forward_eval(&x), Err(Error::Shape(_))));
}

#[test]
fn eval_is_deterministic() {
    let model = Model::<f32>::new(ModelConfig::desk(), 5).unwrap();
    let x = random_input::<f32>(&model.config, 2, 2);
    assert_eq!(model.forward_eval(&x).unwrap(), model.forward_eval(&x).unwrap());
    // batch composition does not matter in eval mode
    let x0 = Tensor {
        n: 1,
        data: (0..4).flat_map(|c| x.channel(c)[..96 * 96].to_vec()).collect(),
        ..x.clone()
    };
    let a = model.forward_eval(&x).unwrap().maps(0);
    let b = model.forward_eval(&x0).unwrap().maps(0);
    assert_eq!(a, b);
}

#[test]
fn zero_injection_gives_zero_gradients() {
    let mut model = Model::<f64>::new(ModelConfig::tiny(), 1).unwrap();
    let x = random_input::<f64>(&model.config, 2, 3);
    let (_, tape) = model.forward_train(&x).unwrap();
    let cfg = model.config.clone();
    let g = vec![HeadMaps::zeros(cfg.output_res, 3, cfg.embed_dim); 2];
    let grads = model.backward(&tape, &g).unwrap();
    assert_eq!(grads.params.norm(), 0.0);
    assert!(grads.input.data.iter().all(|&v| v == 0.0));
}

#[test]
fn train_mode_updates_running_stats() {
    let mut model = Model::<f32>::new(ModelConfig::tiny(), 1).unwrap();
    let before = model.buffers.clone();
    let x = random_input::<f32>(&model.config, 2, 3);
    model.forward_train(&x).unwrap();
    assert_ne!(model.buffers, before);
    let frozen = model.buffers.clone();
    model.forward_frozen(&x).unwrap();
    model.forward_eval(&x).unwrap();
    assert_eq!(model.buffers, frozen);
}

/// Central differences of `<g, f(theta)>` along random unit parameter directions.
fn fd_check(model: &Model<f64>, x: &Tensor<f64>, g: &[HeadMaps], directions: usize, seed: u64) -> f64 {
    let (_, tape) = model.forward_frozen(x).unwrap();
    let grads = model.backward(&tape, g).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let eps = 1e-4;
    let mut worst = 0.0f64;
    for _ in 0..directions {
        let mut v = model.params.zeros_like();
        v.values.iter_mut().for_each(|t| t.iter_mut().for_each(|x| *x = rng.random_range(-1.0..1.0)));
        let norm = v.norm();
        v.values.iter_mut().for_each(|t| t.iter_mut().for_each(|x| *x /= norm));
        let shifted = |sign: f64| {
            let mut m = model.clone();
            for (p, d) in m.params.values.iter_mut().zip(&v.values) {
                p.iter_mut().zip(d).for_each(|(a, b)| *a += sign * eps * b);
            }
            objective(&m.forward_eval(x).unwrap(), g)
        };
        let fd = (shifted(1.0) - shifted(-1.0)) / (2.0 * eps);
        // backward returns the descent direction
        let an = -grads.params.dot(&v);
        let rel = (fd - an).abs() / fd.abs().max(an.abs()).max(1e-12);
        worst = worst.max(rel);
    }
    worst
}

#[test]
fn finite_differences_tiny_frozen() {
    let mut model = Model::<f64>::new(ModelConfig::tiny(), 11).unwrap();
    randomize_bn(&mut model, 12);
    let x = random_input::<f64>(&model.config, 2, 13);
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let g: Vec<HeadMaps> = (0..2).map(|_| random_maps(&model.config, &mut rng)).collect();
    let worst = fd_check(&model, &x, &g, 10, 15);
    assert!(worst < 1e-3, "{worst}");
}

#[test]
fn input_gradient_matches_finite_differences() {
    let mut model = Model::<f64>::new(ModelConfig::tiny(), 21).unwrap();
    randomize_bn(&mut model, 22);
    let x = random_input::<f64>(&model.config, 1, 23);
    let mut rng = ChaCha8Rng::seed_from_u64(24);
    let g = vec![random_maps(&model.config, &mut rng)];
    let (_, tape) = model.forward_frozen(&x).unwrap();
    let grads = model.backward(&tape, &g).unwrap();
    let eps = 1e-4;
    for _ in 0..5 {
        let mut v = x.clone();
        v.data.iter_mut().for_each(|d| *d = rng.random_range(-1.0..1.0));
        let at = |s: f64| {
            let mut xx = x.clone();
            xx.data.iter_mut().zip(&v.data).for_each(|(a, b)| *a += s * eps * b);
            objective(&model.forward_eval(&xx).unwrap(), &g)
        };
        let fd = (at(1.0) - at(-1.0)) / (2.0 * eps);
        let an: f64 = -grads.input.data.iter().zip(&v.data).map(|(a, b)| a * b).sum::<f64>();
        assert!((fd - an).abs() / fd.abs().max(1e-12) < 1e-3, "{fd} vs {an}");
    }
}

/// Batch statistics couple the images in a batch; check that path too.
#[test]
fn finite_differences_batch_statistics() {
    let model = Model::<f64>::new(ModelConfig::tiny(), 31).unwrap();
    let x = random_input::<f64>(&model.config, 2, 32);
    let mut rng = ChaCha8Rng::seed_from_u64(33);
    let g: Vec<HeadMaps> = (0..2).map(|_| random_maps(&model.config, &mut rng)).collect();
    let mut m0 = model.clone();
    let (_, tape) = m0.forward_train(&x).unwrap();
    let grads = m0.backward(&tape, &g).unwrap();
    let eps = 1e-5;
    for _ in 0..5 {
        let mut v = model.params.zeros_like();
        v.values.iter_mut().for_each(|t| t.iter_mut().for_each(|x| *x = rng.random_range(-1.0..1.0)));
        let at = |s: f64| {
            let mut m = model.clone();
            for (p, d) in m.params.values.iter_mut().zip(&v.values) {
                p.iter_mut().zip(d).for_each(|(a, b)| *a += s * eps * b);
            }
            let (out, _) = m.forward_train(&x).unwrap();
            objective(&out, &g)
        };
        let fd = (at(1.0) - at(-1.0)) / (2.0 * eps);
        let an = -grads.params.dot(&v);
        assert!((fd - an).abs() / fd.abs().max(an.abs()) < 1e-3, "{fd} vs {an}");
    }
}

/// Output cell (r, c) sees input pixels within a box of at most 137 pixels
/// around its 3x3 preimage.
#[test]
fn receptive_field_is_bounded() {
    let model = Model::<f32>::new(ModelConfig::default(), 41).unwrap();
    let x = random_input::<f32>(&model.config, 1, 42);
    let (_, tape) = model.forward_frozen(&x).unwrap();
    let (r, c) = (50usize, 50usize);
    let mut g = HeadMaps::zeros(100, 3, 16);
    g.s.set(r, c, 1.0);
    g.m[1].set(r, c, 1.0);
    g.e[7].set(r, c, 1.0);
    let grads = model.backward(&tape, &[g]).unwrap();
    let (mut y0, mut y1, mut x0, mut x1) = (usize::MAX, 0, usize::MAX, 0);
    for ch in 0..4 {
        for yy in 0..300 {
            for xx in 0..300 {
                if grads.input.at(ch, 0, yy, xx) != 0.0 {
                    y0 = y0.min(yy);
                    y1 = y1.max(yy);
                    x0 = x0.min(xx);
                    x1 = x1.max(xx);
                }
            }
        }
    }
    assert!(y1 >= y0, "no gradient reached the input");
    assert!(y1 - y0 + 1 <= 137 && x1 - x0 + 1 <= 137, "{y0}..{y1} x {x0}..{x1}");
    // the box contains the preimage
    assert!(y0 <= 3 * r && y1 >= 3 * r + 2 && x0 <= 3 * c && x1 >= 3 * c + 2);

    // eval mode: perturbing a pixel outside the box leaves the cell unchanged
    let before = model.forward_eval(&x).unwrap().maps(0);
    let mut xp = x.clone();
    let far = (3 * r + 2 + 137).min(299);
    for ch in 0..4 {
        let i = xp.idx(ch, 0, far, 3 * c);
        xp.data[i] += 0.5;
    }
    let after = model.forward_eval(&xp).unwrap().maps(0);
    assert_eq!(before.s.get(r, c), after.s.get(r, c));
    assert_eq!(before.embedding(r, c), after.embedding(r, c));
    assert_ne!(before, after);
}

#[test]
fn desk_preset_is_fast_enough_to_train() {
    let model = Model::<f32>::new(ModelConfig::desk(), 0).unwrap();
    assert!(model.param_count() < 400_000);
    let x = random_input::<f32>(&model.config, 1, 0);
    let out = model.forward_eval(&x).unwrap();
    assert_eq!((out.s.h, out.e.c), (32, 16));
}
