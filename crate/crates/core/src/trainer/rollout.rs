use rand::Rng;

use super::config::OracleMode;
use crate::actsel::{random_actions, select_actions};
use crate::error::Result;
use crate::headgrads::{Feedback, InteractionRecord};
use crate::imaging::{felzenszwalb, BinaryMask, DepthMap, Image3, LabelMap, SuperpixelParams};
use crate::microworld::{AgentPose, InteractionRequest, Surface, WorldState, DIRECTIONS};
use crate::predictor::{make_input, Model};
use crate::selfsup::{self, POOL};

/// Result of probing one point with up to three pushes.
#[derive(Clone, Debug, PartialEq)]
pub struct Escalation {
    pub feedback: Feedback,
    /// Force classes applied, in order.
    pub applied: Vec<usize>,
    pub moving_force: Option<usize>,
    /// Supervision mask of the first step that registered a change.
    pub b_plus: Option<BinaryMask>,
    /// View after the last push; the next interaction starts from it.
    pub last_frame: Image3,
}

/// Everything one push-and-look step needs from its surroundings.
pub struct Probe<'a> {
    pub world: &'a mut WorldState,
    pub pose: &'a AgentPose,
    /// Superpixels of the first frame; `None` disables alignment.
    pub labels: Option<&'a LabelMap>,
    pub noise: bool,
}

/// Push at `point` (output resolution) with predicted class `r`: `f^{r-1}`
/// first when `r > 0`, then `f^r`, then `f^2`, stopping at the first change.
/// One direction is used for all steps.
pub fn escalate(probe: &mut Probe, before: Image3, point: (usize, usize), r: usize, direction: usize) -> Result<Escalation> {
    assert!(r < 3, "force class {r} out of range");
    let mut steps: Vec<(usize, Feedback)> = Vec::with_capacity(3);
    if r > 0 {
        steps.push((r - 1, Feedback::TooLarge));
    }
    steps.push((r, Feedback::Correct));
    if r < 2 {
        steps.push((2, Feedback::TooSmall));
    }
    let pixel = (point.0 * POOL + POOL / 2, point.1 * POOL + POOL / 2);
    let mut frame = before;
    let mut applied = Vec::new();
    for (force, verdict) in steps {
        applied.push(force);
        probe.world.apply_force(
            probe.pose,
            InteractionRequest {
                row: pixel.0,
                col: pixel.1,
                force_class: force,
                direction,
            },
        );
        let (after, _) = probe.world.render(probe.pose, probe.noise);
        let sup = selfsup::supervise_with_labels(&frame, &after, point, probe.labels)?;
        frame = after;
        if sup.successful {
            return Ok(Escalation {
                feedback: verdict,
                applied,
                moving_force: Some(force),
                b_plus: Some(sup.b_plus),
                last_frame: frame,
            });
        }
    }
    Ok(Escalation {
        feedback: Feedback::Unsuccessful,
        applied,
        moving_force: None,
        b_plus: None,
        last_frame: frame,
    })
}

/// Per-location knobs.
#[derive(Clone, Copy, Debug)]
pub struct LocationConfig {
    pub greedy: usize,
    pub random: usize,
    pub theta: f64,
    pub oracle: OracleMode,
    pub superpixels: bool,
    pub noise: bool,
}

#[derive(Clone, Debug)]
pub struct LocationResult {
    pub rgb: Image3,
    pub depth: DepthMap,
    pub records: Vec<InteractionRecord>,
    /// How many records came from the greedy selection (with oracle edits).
    pub greedy_count: usize,
}

/// Output cell closest to the centroid of `mask` among cells whose centre
/// pixel lies on `object` and within reach.
fn oracle_point(world: &WorldState, pose: &AgentPose, surf: &[Surface], object: usize, mask: &BinaryMask) -> Option<(usize, usize)> {
    let res = world.render.resolution;
    let (mut sr, mut sc, mut n) = (0.0, 0.0, 0.0);
    for r in 0..res {
        for c in 0..res {
            if mask.get(r, c) {
                sr += r as f64;
                sc += c as f64;
                n += 1.0;
            }
        }
    }
    if n == 0.0 {
        return None;
    }
    let (cr, cc) = (sr / n, sc / n);
    let out = res / POOL;
    let mut best: Option<((usize, usize), f64)> = None;
    for r in 0..out {
        for c in 0..out {
            let (pr, pc) = (r * POOL + POOL / 2, c * POOL + POOL / 2);
            if surf[pr * res + pc] != Surface::Object(object) {
                continue;
            }
            let (x, y) = world.pixel_cell(pose, pr, pc);
            let h = world.surface_at(x, y).1;
            if WorldState::distance_from_camera(pose, x, y, h) > pose.reach_m {
                continue;
            }
            let d = (pr as f64 - cr).powi(2) + (pc as f64 - cc).powi(2);
            if best.is_none_or(|(_, bd)| d < bd) {
                best = Some(((r, c), d));
            }
        }
    }
    best.map(|b| b.0)
}

/// One location: observe, choose actions, escalate each in turn, and collect
/// the records for the bank.
pub fn run_location<R: Rng>(
    world: &mut WorldState,
    pose: &AgentPose,
    model: &Model<f32>,
    cfg: &LocationConfig,
    rng: &mut R,
) -> Result<LocationResult> {
    let res = world.render.resolution;
    let out_res = res / POOL;
    let (rgb, depth) = world.render(pose, cfg.noise);
    let x = make_input::<f32>(&[(&rgb, &depth)])?;
    let maps = model.forward_eval(&x)?.maps(0);

    let mut actions: Vec<((usize, usize), usize)> = select_actions(&maps, cfg.greedy, cfg.theta)
        .into_iter()
        .map(|p| (p.point, p.force_class))
        .collect();

    let need_gt = cfg.oracle != OracleMode::None;
    let surf = if need_gt { world.surface_map(pose) } else { Vec::new() };
    let gt = if need_gt { world.ground_truth(pose) } else { Vec::new() };
    // reachable ground-truth instance under the centre pixel of cell `p`,
    // if that pixel is itself within reach
    let object_at = |p: (usize, usize)| -> Option<usize> {
        let (pr, pc) = (p.0 * POOL + POOL / 2, p.1 * POOL + POOL / 2);
        let Surface::Object(i) = surf[pr * res + pc] else { return None };
        let (x, y) = world.pixel_cell(pose, pr, pc);
        let h = world.surface_at(x, y).1;
        if WorldState::distance_from_camera(pose, x, y, h) > pose.reach_m {
            return None;
        }
        gt.iter().position(|g| g.object == i && g.reachable)
    };

    if cfg.oracle.interactions() {
        let mut covered = vec![false; gt.len()];
        actions.retain(|&(p, _)| match object_at(p) {
            Some(g) if covered[g] => false,
            Some(g) => {
                covered[g] = true;
                true
            }
            None => true,
        });
        for (g, inst) in gt.iter().enumerate() {
            if inst.reachable && !covered[g] {
                if let Some(p) = oracle_point(world, pose, &surf, inst.object, &inst.mask) {
                    actions.push((p, maps.force_class(p.0, p.1)));
                }
            }
        }
    }
    let greedy_count = actions.len();
    actions.extend(random_actions(cfg.random, out_res, rng));
    let hit: Vec<Option<usize>> = if cfg.oracle.masks() {
        actions.iter().map(|&(p, _)| object_at(p)).collect()
    } else {
        vec![None; actions.len()]
    };

    let labels = cfg.superpixels.then(|| felzenszwalb(&rgb, SuperpixelParams::scaled_for(res)));
    let mut frame = rgb.clone();
    let mut records = Vec::with_capacity(actions.len());
    for (&(point, r), &obj) in actions.iter().zip(&hit) {
        let direction = rng.random_range(0..DIRECTIONS.len());
        let mut probe = Probe {
            world,
            pose,
            labels: labels.as_ref(),
            noise: cfg.noise,
        };
        let esc = escalate(&mut probe, frame, point, r, direction)?;
        frame = esc.last_frame;
        let mut mask = esc.b_plus;
        if cfg.oracle.masks() && mask.is_some() {
            // ground truth of the first frame, the one stored in the bank
            mask = Some(match obj {
                Some(g) => gt[g].mask.downsample_majority(POOL)?,
                None => BinaryMask::empty(out_res, out_res),
            });
        }
        records.push(InteractionRecord {
            point,
            force_class: r,
            feedback: esc.feedback,
            moving_force: esc.moving_force,
            mask,
        });
    }
    Ok(LocationResult {
        rgb,
        depth,
        records,
        greedy_count,
    })
}
