//! Class-agnostic COCO-style AP, mass accuracy and qualitative panels.
//!
//! Everything is compared at output resolution: ground-truth masks are
//! majority-downsampled and boxes are the tight boxes of the masks. Only
//! reachable movable objects count as ground truth. Proposals are ranked by
//! the sigmoid of their seed's interaction score.

use rand::Rng;
use rayon::prelude::*;

use crate::actsel::select_actions;
use crate::error::Result;
use crate::imaging::panel::{self, Panel};
use crate::imaging::{BinaryMask, DepthMap, Image3};
use crate::microworld::{stream_seed, RenderConfig, SceneGenerator, ScenePreset, SceneSpec, Split, SplitRole, WorldState};
use crate::predictor::{make_input, HeadMaps, Model};
use crate::selfsup::POOL;

/// Inclusive `(row0, col0, row1, col1)`.
pub type BBox = (usize, usize, usize, usize);

pub const IOU_THRESHOLDS: [f64; 10] = [0.5, 0.55, 0.6, 0.65, 0.7, 0.75, 0.8, 0.85, 0.9, 0.95];
const RECALL_POINTS: usize = 101;

#[derive(Clone, Debug, PartialEq)]
pub struct Detection {
    pub mask: BinaryMask,
    pub bbox: BBox,
    pub confidence: f64,
    pub mass_class: usize,
}

impl Detection {
    /// `None` for an empty mask.
    pub fn from_mask(mask: BinaryMask, confidence: f64, mass_class: usize) -> Option<Self> {
        let bbox = mask.bbox()?;
        Some(Self {
            mask,
            bbox,
            confidence,
            mass_class,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GtInstance {
    pub mask: BinaryMask,
    pub bbox: BBox,
    pub mass_class: usize,
}

/// Detections and ground truth of one image.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ImageEval {
    pub detections: Vec<Detection>,
    pub gts: Vec<GtInstance>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Kind {
    BBox,
    Mask,
}

pub fn mask_iou(a: &BinaryMask, b: &BinaryMask) -> f64 {
    let inter = a.intersection_count(b);
    let union = a.area() + b.area() - inter;
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

/// IoU of inclusive cell boxes, counting cells.
pub fn bbox_iou(a: BBox, b: BBox) -> f64 {
    let area = |b: BBox| ((b.2 + 1 - b.0) * (b.3 + 1 - b.1)) as f64;
    let (r0, c0) = (a.0.max(b.0), a.1.max(b.1));
    let (r1, c1) = (a.2.min(b.2), a.3.min(b.3));
    let inter = if r0 > r1 || c0 > c1 {
        0.0
    } else {
        ((r1 + 1 - r0) * (c1 + 1 - c0)) as f64
    };
    inter / (area(a) + area(b) - inter)
}

fn iou(d: &Detection, g: &GtInstance, kind: Kind) -> f64 {
    match kind {
        Kind::BBox => bbox_iou(d.bbox, g.bbox),
        Kind::Mask => mask_iou(&d.mask, &g.mask),
    }
}

/// Detection order within an image: descending confidence, stable.
fn ranked(img: &ImageEval) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..img.detections.len()).collect();
    idx.sort_by(|&a, &b| img.detections[b].confidence.total_cmp(&img.detections[a].confidence));
    idx
}

/// Greedy one-to-one matching in confidence order; each detection takes the
/// unmatched ground truth of highest IoU at or above `thr`. Returns the
/// matched ground-truth index for each detection.
pub fn match_image(img: &ImageEval, thr: f64, kind: Kind) -> Vec<Option<usize>> {
    let mut taken = vec![false; img.gts.len()];
    let mut out = vec![None; img.detections.len()];
    for d in ranked(img) {
        let mut best: Option<(usize, f64)> = None;
        for (g, gt) in img.gts.iter().enumerate() {
            if taken[g] {
                continue;
            }
            let v = iou(&img.detections[d], gt, kind);
            if v >= thr && best.is_none_or(|(_, b)| v > b) {
                best = Some((g, v));
            }
        }
        if let Some((g, _)) = best {
            taken[g] = true;
            out[d] = Some(g);
        }
    }
    out
}

/// 101-point interpolated AP from (confidence, is_tp) pairs and the number
/// of ground-truth instances.
pub fn ap_from_matches(mut scored: Vec<(f64, bool)>, n_gt: usize) -> f64 {
    if n_gt == 0 {
        return 0.0;
    }
    scored.sort_by(|a, b| b.0.total_cmp(&a.0));
    let mut tp = 0usize;
    let mut recall = Vec::with_capacity(scored.len());
    let mut precision = Vec::with_capacity(scored.len());
    for (i, &(_, hit)) in scored.iter().enumerate() {
        tp += hit as usize;
        recall.push(tp as f64 / n_gt as f64);
        precision.push(tp as f64 / (i + 1) as f64);
    }
    for i in (1..precision.len()).rev() {
        precision[i - 1] = precision[i - 1].max(precision[i]);
    }
    let mut sum = 0.0;
    for k in 0..RECALL_POINTS {
        let r = k as f64 / (RECALL_POINTS - 1) as f64;
        let i = recall.partition_point(|&x| x < r);
        if i < precision.len() {
            sum += precision[i];
        }
    }
    sum / RECALL_POINTS as f64
}

fn scored(images: &[ImageEval], thr: f64, kind: Kind, with_mass: bool) -> (Vec<(f64, bool)>, usize) {
    let mut s = Vec::new();
    let mut n_gt = 0;
    for img in images {
        n_gt += img.gts.len();
        for (d, m) in match_image(img, thr, kind).into_iter().enumerate() {
            let det = &img.detections[d];
            let hit = m.is_some_and(|g| !with_mass || img.gts[g].mass_class == det.mass_class);
            s.push((det.confidence, hit));
        }
    }
    (s, n_gt)
}

/// Dataset-level AP at one IoU threshold. 0 when there is no ground truth.
pub fn average_precision(images: &[ImageEval], thr: f64, kind: Kind) -> f64 {
    let (s, n) = scored(images, thr, kind, false);
    ap_from_matches(s, n)
}

/// AP averaged over IoU 0.5:0.05:0.95.
pub fn coco_ap(images: &[ImageEval], kind: Kind) -> f64 {
    IOU_THRESHOLDS.iter().map(|&t| average_precision(images, t, kind)).sum::<f64>() / IOU_THRESHOLDS.len() as f64
}

#[derive(Clone, Debug, PartialEq)]
pub struct MassMetrics {
    /// Mean of the diagonal over ground-truth classes that occur.
    pub accuracy: f64,
    /// Rows are ground truth, row-normalized; absent classes stay zero.
    pub confusion: [[f64; 3]; 3],
    pub counts: [[usize; 3]; 3],
    pub matched: usize,
    /// Box AP@0.5 where a match only counts with the right mass class.
    pub ap50_mass_bbox: f64,
}

pub fn mass_metrics(images: &[ImageEval]) -> MassMetrics {
    let mut counts = [[0usize; 3]; 3];
    for img in images {
        for (d, m) in match_image(img, 0.5, Kind::BBox).into_iter().enumerate() {
            if let Some(g) = m {
                counts[img.gts[g].mass_class.min(2)][img.detections[d].mass_class.min(2)] += 1;
            }
        }
    }
    let mut confusion = [[0.0; 3]; 3];
    let (mut diag, mut present) = (0.0, 0);
    for (row, c) in confusion.iter_mut().zip(&counts) {
        let n: usize = c.iter().sum();
        if n == 0 {
            continue;
        }
        for (x, &k) in row.iter_mut().zip(c) {
            *x = k as f64 / n as f64;
        }
        present += 1;
    }
    for (k, row) in confusion.iter().enumerate() {
        diag += row[k];
    }
    let (s, n) = scored(images, 0.5, Kind::BBox, true);
    MassMetrics {
        accuracy: if present == 0 { 0.0 } else { diag / present as f64 },
        confusion,
        counts,
        matched: counts.iter().flatten().sum(),
        ap50_mass_bbox: ap_from_matches(s, n),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsReport {
    pub images: usize,
    pub gt_instances: usize,
    pub detections: usize,
    pub bbox_ap50: f64,
    pub bbox_ap: f64,
    pub mask_ap50: f64,
    pub mask_ap: f64,
    pub mass: MassMetrics,
}

impl MetricsReport {
    pub fn from_images(images: &[ImageEval]) -> Self {
        Self {
            images: images.len(),
            gt_instances: images.iter().map(|i| i.gts.len()).sum(),
            detections: images.iter().map(|i| i.detections.len()).sum(),
            bbox_ap50: average_precision(images, 0.5, Kind::BBox),
            bbox_ap: coco_ap(images, Kind::BBox),
            mask_ap50: average_precision(images, 0.5, Kind::Mask),
            mask_ap: coco_ap(images, Kind::Mask),
            mass: mass_metrics(images),
        }
    }

    pub fn to_text(&self) -> String {
        let m = &self.mass;
        let mut s = format!(
            "images {}  ground truth {}  detections {}\n\n\
             segmentation and detection (%)\n\
             {:>10} {:>10} {:>10} {:>10}\n\
             {:>10} {:>10} {:>10} {:>10}\n\
             {:>10.2} {:>10.2} {:>10.2} {:>10.2}\n\n\
             relative mass (%)\n\
             {:>12} {:>18}\n\
             {:>12.2} {:>18.2}\n\
             matched detections {}\n\n\
             confusion (rows ground truth, columns predicted)\n\
             {:>8} {:>8} {:>8} {:>8}\n",
            self.images,
            self.gt_instances,
            self.detections,
            "bbox",
            "bbox",
            "mask",
            "mask",
            "AP",
            "AP@0.5",
            "AP",
            "AP@0.5",
            100.0 * self.bbox_ap,
            100.0 * self.bbox_ap50,
            100.0 * self.mask_ap,
            100.0 * self.mask_ap50,
            "mean acc",
            "mass&bbox AP@0.5",
            100.0 * m.accuracy,
            100.0 * m.ap50_mass_bbox,
            m.matched,
            "",
            "light",
            "medium",
            "heavy",
        );
        for (k, name) in ["light", "medium", "heavy"].iter().enumerate() {
            s.push_str(&format!(
                "{:>8} {:>8.2} {:>8.2} {:>8.2}   ({} {} {})\n",
                name, m.confusion[k][0], m.confusion[k][1], m.confusion[k][2], m.counts[k][0], m.counts[k][1], m.counts[k][2]
            ));
        }
        s
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EvalConfig {
    pub theta: f64,
    /// Proposals per image.
    pub max_proposals: usize,
    pub view_m: f32,
    pub noise: bool,
    /// Seeds the render noise of every scene.
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            theta: crate::actsel::DEFAULT_THETA,
            max_proposals: 10,
            view_m: 3.0,
            noise: true,
            seed: 0,
        }
    }
}

/// Held-out scenes `0..n` of a split.
pub fn test_scenes(preset: ScenePreset, split: Split, n: usize, seed: u64) -> Vec<SceneSpec> {
    let g = SceneGenerator::with_preset(preset);
    (0..n as u64).map(|i| g.generate(stream_seed(&[seed, i]), split, SplitRole::Test)).collect()
}

/// One test observation with its ground truth at output resolution.
#[derive(Clone, Debug)]
pub struct Observation {
    pub rgb: Image3,
    pub depth: DepthMap,
    pub gts: Vec<GtInstance>,
}

pub fn observe(scene: &SceneSpec, index: usize, resolution: usize, cfg: &EvalConfig) -> Result<Observation> {
    let render = RenderConfig {
        resolution,
        view_m: cfg.view_m,
    };
    let mut world = WorldState::new(scene.clone(), render, stream_seed(&[cfg.seed, index as u64]));
    let pose = scene.spawn.clone();
    let (rgb, depth) = world.render(&pose, cfg.noise);
    let mut gts = Vec::new();
    for g in world.ground_truth(&pose) {
        if !g.reachable {
            continue;
        }
        let mask = g.mask.downsample_majority(POOL)?;
        if let Some(bbox) = mask.bbox() {
            gts.push(GtInstance {
                mask,
                bbox,
                mass_class: g.mass_class.index(),
            });
        }
    }
    Ok(Observation { rgb, depth, gts })
}

pub fn proposals(maps: &HeadMaps, cfg: &EvalConfig) -> Vec<Detection> {
    select_actions(maps, cfg.max_proposals, cfg.theta)
        .into_iter()
        .filter_map(|p| Detection::from_mask(p.mask, p.confidence, p.force_class))
        .collect()
}

fn observations(scenes: &[SceneSpec], resolution: usize, cfg: &EvalConfig) -> Result<Vec<Observation>> {
    scenes.par_iter().enumerate().map(|(i, s)| observe(s, i, resolution, cfg)).collect()
}

/// Per-image detections of `model` over `scenes`, with the head maps.
pub fn detect(model: &Model<f32>, scenes: &[SceneSpec], cfg: &EvalConfig) -> Result<Vec<(Observation, HeadMaps, ImageEval)>> {
    let obs = observations(scenes, model.config.input_res, cfg)?;
    obs.into_par_iter()
        .map(|o| {
            let x = make_input::<f32>(&[(&o.rgb, &o.depth)])?;
            let maps = model.forward_eval(&x)?.maps(0);
            let img = ImageEval {
                detections: proposals(&maps, cfg),
                gts: o.gts.clone(),
            };
            Ok((o, maps, img))
        })
        .collect()
}

pub fn evaluate(model: &Model<f32>, scenes: &[SceneSpec], cfg: &EvalConfig) -> Result<MetricsReport> {
    let images: Vec<ImageEval> = detect(model, scenes, cfg)?.into_iter().map(|t| t.2).collect();
    Ok(MetricsReport::from_images(&images))
}

/// `n` random rectangles per image with random confidences and classes;
/// sides uniform in `1..=res/2`.
pub fn random_proposals<R: Rng>(res: usize, n: usize, rng: &mut R) -> Vec<Detection> {
    (0..n)
        .map(|_| {
            let h = rng.random_range(1..=res / 2);
            let w = rng.random_range(1..=res / 2);
            let r0 = rng.random_range(0..=res - h);
            let c0 = rng.random_range(0..=res - w);
            let mut mask = BinaryMask::empty(res, res);
            for r in r0..r0 + h {
                for c in c0..c0 + w {
                    mask.set(r, c, true);
                }
            }
            Detection::from_mask(mask, rng.random_range(0.0..1.0), rng.random_range(0..3)).expect("non-empty")
        })
        .collect()
}

pub fn random_baseline<R: Rng>(scenes: &[SceneSpec], resolution: usize, cfg: &EvalConfig, rng: &mut R) -> Result<MetricsReport> {
    let obs = observations(scenes, resolution, cfg)?;
    let images: Vec<ImageEval> = obs
        .into_iter()
        .map(|o| ImageEval {
            detections: random_proposals(resolution / POOL, cfg.max_proposals, rng),
            gts: o.gts,
        })
        .collect();
    Ok(MetricsReport::from_images(&images))
}

/// Ground truth fed back as proposals; every AP is 1.
pub fn oracle_images(images: &[ImageEval]) -> Vec<ImageEval> {
    images
        .iter()
        .map(|img| ImageEval {
            detections: img
                .gts
                .iter()
                .map(|g| Detection {
                    mask: g.mask.clone(),
                    bbox: g.bbox,
                    confidence: 1.0,
                    mass_class: g.mass_class,
                })
                .collect(),
            gts: img.gts.clone(),
        })
        .collect()
}

/// Input, score heatmap, mass map, predicted instances, ground truth.
pub fn render_panel(rgb: &Image3, maps: &HeadMaps, img: &ImageEval) -> Image3 {
    let res = maps.res();
    let factor = rgb.height / res.max(1);
    let classes: Vec<usize> = (0..res * res).map(|p| maps.force_class(p / res, p % res)).collect();
    let pred: Vec<BinaryMask> = img.detections.iter().map(|d| d.mask.clone()).collect();
    let gt: Vec<BinaryMask> = img.gts.iter().map(|g| g.mask.clone()).collect();
    let mut p = Panel::new();
    p.push(rgb.clone())
        .push(panel::upsample(&panel::score_heatmap(&maps.s), factor))
        .push(panel::upsample(&panel::mass_colormap(&classes, &maps.s), factor))
        .push(panel::overlay(rgb, &pred, &[], factor))
        .push(panel::overlay(rgb, &gt, &[], factor));
    p.compose()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rect(res: usize, r0: usize, c0: usize, r1: usize, c1: usize) -> BinaryMask {
        let mut m = BinaryMask::empty(res, res);
        for r in r0..=r1 {
            for c in c0..=c1 {
                m.set(r, c, true);
            }
        }
        m
    }

    fn gt(mask: BinaryMask, class: usize) -> GtInstance {
        GtInstance {
            bbox: mask.bbox().unwrap(),
            mask,
            mass_class: class,
        }
    }

    fn det(mask: BinaryMask, conf: f64, class: usize) -> Detection {
        Detection::from_mask(mask, conf, class).unwrap()
    }

    #[test]
    fn iou_examples() {
        let a = rect(8, 0, 0, 1, 1);
        assert_eq!(mask_iou(&a, &a), 1.0);
        assert_eq!(mask_iou(&a, &rect(8, 4, 4, 5, 5)), 0.0);
        let b = rect(8, 0, 1, 1, 2);
        assert!((mask_iou(&a, &b) - 2.0 / 6.0).abs() < 1e-12);
        assert!((bbox_iou((0, 0, 1, 1), (0, 1, 1, 2)) - 2.0 / 6.0).abs() < 1e-12);
        assert_eq!(bbox_iou((0, 0, 1, 1), (3, 3, 4, 4)), 0.0);
    }

    #[test]
    fn perfect_and_empty() {
        let img = ImageEval {
            detections: vec![det(rect(10, 0, 0, 3, 3), 0.2, 0), det(rect(10, 5, 5, 9, 8), 0.7, 1)],
            gts: vec![gt(rect(10, 0, 0, 3, 3), 0), gt(rect(10, 5, 5, 9, 8), 1)],
        };
        let r = MetricsReport::from_images(&[img.clone()]);
        assert_eq!((r.bbox_ap50, r.bbox_ap, r.mask_ap50, r.mask_ap), (1.0, 1.0, 1.0, 1.0));
        assert_eq!(r.mass.accuracy, 1.0);
        assert_eq!(r.mass.ap50_mass_bbox, 1.0);
        let empty = ImageEval {
            detections: vec![],
            gts: img.gts.clone(),
        };
        assert_eq!(average_precision(&[empty], 0.5, Kind::Mask), 0.0);
        let oracle = oracle_images(&[img]);
        assert_eq!(coco_ap(&oracle, Kind::Mask), 1.0);
    }

    #[test]
    fn hand_pr_example() {
        // 1 GT of 10 cells; a 0.9 detection at IoU 0.6 and a 0.8 one at IoU 0.2
        let g = rect(10, 0, 0, 1, 4);
        let d1 = rect(10, 0, 0, 1, 2); // 6/10
        let d2 = rect(10, 1, 0, 1, 1); // 2/10
        assert!((mask_iou(&d1, &g) - 0.6).abs() < 1e-12);
        assert!((mask_iou(&d2, &g) - 0.2).abs() < 1e-12);
        let img = ImageEval {
            detections: vec![det(d2, 0.8, 0), det(d1, 0.9, 0)],
            gts: vec![gt(g, 0)],
        };
        assert_eq!(match_image(&img, 0.5, Kind::Mask), vec![None, Some(0)]);
        assert_eq!(average_precision(&[img.clone()], 0.5, Kind::Mask), 1.0);
        // swapping confidences puts the false positive first: precision 0.5 at recall 1
        let mut swapped = img;
        swapped.detections[0].confidence = 0.95;
        assert_eq!(average_precision(&[swapped], 0.5, Kind::Mask), 0.5);
    }

    #[test]
    fn ap_interpolation_by_hand() {
        // tp fp tp with 3 GT: recall 1/3, 1/3, 2/3; precision envelope 1, 2/3, 2/3
        let ap = ap_from_matches(vec![(0.9, true), (0.8, false), (0.7, true)], 3);
        // recall points 0..=0.33 (34 of them) at 1, 0.34..=0.66 (33) at 2/3, rest 0
        let want = (34.0 + 33.0 * 2.0 / 3.0) / 101.0;
        assert!((ap - want).abs() < 1e-12, "{ap} vs {want}");
    }

    #[test]
    fn mass_confusion_by_hand() {
        let img = ImageEval {
            detections: vec![det(rect(12, 0, 0, 2, 2), 0.9, 1), det(rect(12, 6, 6, 9, 9), 0.5, 2)],
            gts: vec![gt(rect(12, 0, 0, 2, 2), 0), gt(rect(12, 6, 6, 9, 9), 2)],
        };
        let m = mass_metrics(&[img]);
        assert_eq!(m.confusion[0], [0.0, 1.0, 0.0]);
        assert_eq!(m.confusion[1], [0.0, 0.0, 0.0]);
        assert_eq!(m.confusion[2], [0.0, 0.0, 1.0]);
        assert_eq!(m.accuracy, 0.5);
        assert_eq!(m.matched, 2);
        // only the heavy box counts: recall 1/2 at precision 1/2
        assert!((m.ap50_mass_bbox - 51.0 * 0.5 / 101.0).abs() < 1e-12);
    }

    #[test]
    fn random_classes_are_at_chance() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let images: Vec<ImageEval> = (0..600)
            .map(|_| {
                let g = rng.random_range(0..3);
                ImageEval {
                    detections: vec![det(rect(6, 1, 1, 3, 3), 0.5, rng.random_range(0..3))],
                    gts: vec![gt(rect(6, 1, 1, 3, 3), g)],
                }
            })
            .collect();
        let m = mass_metrics(&images);
        assert_eq!(m.matched, 600);
        assert!((m.accuracy - 1.0 / 3.0).abs() < 0.05, "{}", m.accuracy);
        for row in m.confusion {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn random_proposals_fit() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for d in random_proposals(32, 200, &mut rng) {
            assert!(d.bbox.2 < 32 && d.bbox.3 < 32);
            assert_eq!(d.mask.area(), (d.bbox.2 + 1 - d.bbox.0) * (d.bbox.3 + 1 - d.bbox.1));
            assert!((0.0..=1.0).contains(&d.confidence));
        }
    }

    #[test]
    fn evaluation_is_deterministic_and_passive() {
        let scenes = test_scenes(ScenePreset::Full, Split::NovelLayouts, 3, 0);
        let model = Model::new(crate::predictor::ModelConfig { input_res: 48, output_res: 16, ..crate::predictor::ModelConfig::tiny() }, 1).unwrap();
        let cfg = EvalConfig::default();
        let a = evaluate(&model, &scenes, &cfg).unwrap();
        assert_eq!(a, evaluate(&model, &scenes, &cfg).unwrap());
        let d = detect(&model, &scenes, &cfg).unwrap();
        let p = render_panel(&d[0].0.rgb, &d[0].1, &d[0].2);
        assert_eq!(p.height, 48);
        assert!(a.to_text().contains("confusion"));
    }

    fn arb_image() -> impl Strategy<Value = ImageEval> {
        let boxes = proptest::collection::vec((0usize..8, 0usize..8, 1usize..4, 1usize..4, 0.0f64..1.0), 0..6);
        (boxes.clone(), boxes).prop_map(|(d, g)| {
            let mk = |&(r, c, h, w, _): &(usize, usize, usize, usize, f64)| rect(12, r, c, r + h - 1, c + w - 1);
            ImageEval {
                detections: d.iter().map(|b| det(mk(b), b.4, 0)).collect(),
                gts: g.iter().map(|b| gt(mk(b), 0)).collect(),
            }
        })
    }

    proptest! {
        #[test]
        fn ap_bounded_and_fp_removal_monotone(img in arb_image(), thr in 0.1f64..0.9) {
            let ap = average_precision(&[img.clone()], thr, Kind::Mask);
            prop_assert!((0.0..=1.0).contains(&ap));
            let m = match_image(&img, thr, Kind::Mask);
            let mut seen = std::collections::HashSet::new();
            for g in m.iter().flatten() {
                prop_assert!(seen.insert(*g));
            }
            if let Some(fp) = m.iter().position(|x| x.is_none()) {
                let mut fewer = img.clone();
                fewer.detections.remove(fp);
                prop_assert!(average_precision(&[fewer], thr, Kind::Mask) >= ap - 1e-12);
            }
        }
    }
}
