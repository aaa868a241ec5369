//! Closed-form gradients for the three heads.
//!
//! No loss value is ever computed. Every function here returns an ascent
//! direction on the corresponding head output; [`crate::predictor::Model::backward`]
//! negates it. Pixels without interaction-derived targets always receive an
//! exact zero.

use crate::error::{Error, Result};
use crate::imaging::{convolve5, gaussian_kernel5, BinaryMask, Grid};
use crate::predictor::HeadMaps;

/// Force-head gradients are damped relative to the other two heads.
pub const FORCE_GRAD_SCALE: f64 = 0.1;
/// Distance scale of the embedding gradient; on- and off-mask terms balance near `d = 1`.
pub const EMBED_SCALE: f64 = 1.5;

/// Outcome of the force escalation for one interaction, relative to the
/// predicted class `r`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Feedback {
    Correct,
    TooSmall,
    TooLarge,
    Unsuccessful,
}

impl Feedback {
    pub fn name(self) -> &'static str {
        match self {
            Feedback::Correct => "correct",
            Feedback::TooSmall => "too_small",
            Feedback::TooLarge => "too_large",
            Feedback::Unsuccessful => "unsuccessful",
        }
    }

    pub fn is_success(self) -> bool {
        self != Feedback::Unsuccessful
    }
}

impl std::str::FromStr for Feedback {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "correct" => Feedback::Correct,
            "too_small" => Feedback::TooSmall,
            "too_large" => Feedback::TooLarge,
            "unsuccessful" => Feedback::Unsuccessful,
            _ => return Err(Error::InvalidArgument(format!("unknown feedback {s:?}"))),
        })
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn impulses(res: usize, points: &[(usize, usize)]) -> Grid {
    let mut g = Grid::zeros(res, res);
    for &(r, c) in points {
        g.add(r, c, 1.0);
    }
    convolve5(&g, &gaussian_kernel5())
}

/// Smoothed foreground and background maps from interaction points.
pub fn build_fg_bg(res: usize, successful: &[(usize, usize)], unsuccessful: &[(usize, usize)]) -> (Grid, Grid) {
    (impulses(res, successful), impulses(res, unsuccessful))
}

/// Focal-style pull towards `+inf` where `fg` and `-inf` where `bg`.
pub fn score_grad(s: &Grid, fg: &Grid, bg: &Grid) -> Result<Grid> {
    if !s.same_shape(fg) || !s.same_shape(bg) {
        return Err(Error::Shape("score and target maps differ in shape".into()));
    }
    let data = s
        .data
        .iter()
        .zip(fg.data.iter().zip(&bg.data))
        .map(|(&s, (&f, &b))| {
            let mut g = 0.0;
            if f != 0.0 {
                g += f * sigmoid(-s) * (-0.5 * s.max(0.0).powi(2)).exp();
            }
            if b != 0.0 {
                g -= b * sigmoid(s) * (-0.5 * s.min(0.0).powi(2)).exp();
            }
            g
        })
        .collect();
    Ok(Grid {
        height: s.height,
        width: s.width,
        data,
    })
}

/// Zero-mean, unit-L1 target column for one successful interaction with
/// predicted class `r`, before smoothing.
pub fn force_target_column(feedback: Feedback, r: usize) -> Result<[f64; 3]> {
    if r > 2 {
        return Err(Error::InvalidArgument(format!("force class {r} out of range")));
    }
    let support: [bool; 3] = match feedback {
        Feedback::Correct => [0, 1, 2].map(|k| k == r),
        Feedback::TooSmall if r < 2 => [0, 1, 2].map(|k| k > r),
        Feedback::TooLarge if r > 0 => [0, 1, 2].map(|k| k < r),
        _ => {
            return Err(Error::InvalidArgument(format!(
                "no force target for feedback {} with class {r}",
                feedback.name()
            )))
        }
    };
    // Centring k ones among three entries and scaling to unit L1 gives
    // +1/(2k) on the support and -1/(2(3-k)) off it; both are exact in binary.
    let k = support.iter().filter(|&&b| b).count() as f64;
    Ok(support.map(|b| if b { 0.5 / k } else { -0.5 / (3.0 - k) }))
}

/// Per-class force target planes. Records at the same cell add up.
pub fn build_force_targets(res: usize, records: &[((usize, usize), Feedback, usize)]) -> Result<Vec<Grid>> {
    let mut raw = vec![Grid::zeros(res, res); 3];
    for &((row, col), fb, r) in records {
        let column = force_target_column(fb, r)?;
        for (k, v) in column.iter().enumerate() {
            raw[k].add(row, col, *v);
        }
    }
    let k = gaussian_kernel5();
    Ok(raw.iter().map(|g| convolve5(g, &k)).collect())
}

pub fn force_grad(m: &[Grid], ft: &[Grid]) -> Result<Vec<Grid>> {
    if m.len() != ft.len() || m.iter().zip(ft).any(|(a, b)| !a.same_shape(b)) {
        return Err(Error::Shape("force logits and targets differ in shape".into()));
    }
    Ok(m.iter()
        .zip(ft)
        .map(|(m, t)| Grid {
            height: m.height,
            width: m.width,
            data: m
                .data
                .iter()
                .zip(&t.data)
                .map(|(&m, &t)| {
                    let g = if t > 0.0 {
                        t * sigmoid(-m) * (-0.5 * m.max(0.0).powi(2)).exp()
                    } else if t < 0.0 {
                        t * sigmoid(m) * (-0.5 * m.min(0.0).powi(2)).exp()
                    } else {
                        0.0
                    };
                    FORCE_GRAD_SCALE * g
                })
                .collect(),
        })
        .collect())
}

/// Mean embedding over a non-empty mask.
pub fn mask_mean(e: &[Grid], mask: &BinaryMask) -> Option<Vec<f64>> {
    let area = mask.area();
    if area == 0 {
        return None;
    }
    Some(
        e.iter()
            .map(|g| g.data.iter().zip(&mask.data).filter(|(_, &on)| on).map(|(v, _)| v).sum::<f64>() / area as f64)
            .collect(),
    )
}

/// Squared L2 distance of every cell's embedding to `centre`.
pub fn distances_to(e: &[Grid], centre: &[f64]) -> Grid {
    let (h, w) = (e[0].height, e[0].width);
    let mut d = Grid::zeros(h, w);
    for (g, &c) in e.iter().zip(centre) {
        for (acc, &v) in d.data.iter_mut().zip(&g.data) {
            *acc += (v - c) * (v - c);
        }
    }
    d
}

/// Ascent direction on a squared distance `d`.
pub fn distance_grad(d: f64, on_mask: bool) -> f64 {
    if on_mask {
        -EMBED_SCALE * d / (1.0 + d)
    } else {
        (-(d / EMBED_SCALE).powi(4)).exp()
    }
}

/// Backward of the squared norm with each component derivative `2 x_i`
/// clamped to `[-1, 1]`.
pub fn huber_square_backward(x: f64) -> f64 {
    (2.0 * x).clamp(-1.0, 1.0)
}

/// Embedding gradient summed over masks, each weighted by `1 / area`. The
/// mask mean is held constant. Empty masks contribute nothing.
pub fn embed_grad(e: &[Grid], masks: &[BinaryMask]) -> Result<Vec<Grid>> {
    let Some(first) = e.first() else {
        return Err(Error::Shape("empty embedding field".into()));
    };
    let (h, w) = (first.height, first.width);
    if e.iter().any(|g| (g.height, g.width) != (h, w)) || masks.iter().any(|m| (m.height, m.width) != (h, w)) {
        return Err(Error::Shape("embedding planes and masks differ in shape".into()));
    }
    let mut out = vec![Grid::zeros(h, w); e.len()];
    for mask in masks {
        let Some(mean) = mask_mean(e, mask) else { continue };
        let d = distances_to(e, &mean);
        let inv_area = 1.0 / mask.area() as f64;
        for p in 0..h * w {
            let gd = distance_grad(d.data[p], mask.data[p]) * inv_area;
            if gd == 0.0 {
                continue;
            }
            for (o, (g, &c)) in out.iter_mut().zip(e.iter().zip(&mean)) {
                o.data[p] += gd * huber_square_backward(g.data[p] - c);
            }
        }
    }
    Ok(out)
}

/// Everything needed to form head gradients for one stored image.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageTargets {
    pub fg: Grid,
    pub bg: Grid,
    pub ft: Vec<Grid>,
    pub masks: Vec<BinaryMask>,
}

/// One interaction: where (output resolution), the predicted force class,
/// what the escalation reported, the force that first produced a change, and
/// the supervision mask of a successful interaction.
#[derive(Clone, Debug, PartialEq)]
pub struct InteractionRecord {
    pub point: (usize, usize),
    pub force_class: usize,
    pub feedback: Feedback,
    pub moving_force: Option<usize>,
    pub mask: Option<BinaryMask>,
}

impl ImageTargets {
    pub fn from_records(res: usize, records: &[InteractionRecord]) -> Result<Self> {
        let ok: Vec<_> = records.iter().filter(|r| r.feedback.is_success()).collect();
        let succ: Vec<_> = ok.iter().map(|r| r.point).collect();
        let fail: Vec<_> = records.iter().filter(|r| !r.feedback.is_success()).map(|r| r.point).collect();
        let (fg, bg) = build_fg_bg(res, &succ, &fail);
        let force: Vec<_> = ok.iter().map(|r| (r.point, r.feedback, r.force_class)).collect();
        let ft = build_force_targets(res, &force)?;
        let masks = ok.iter().filter_map(|r| r.mask.clone()).collect();
        Ok(Self { fg, bg, ft, masks })
    }
}

/// Ascent gradients on all three heads. With `with_force` unset the force
/// head receives zero.
pub fn head_gradients(maps: &HeadMaps, targets: &ImageTargets, with_force: bool) -> Result<HeadMaps> {
    let s = score_grad(&maps.s, &targets.fg, &targets.bg)?;
    let m = if with_force {
        force_grad(&maps.m, &targets.ft)?
    } else {
        vec![Grid::zeros(maps.res(), maps.res()); maps.m.len()]
    };
    let e = embed_grad(&maps.e, &targets.masks)?;
    Ok(HeadMaps { s, m, e })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol * b.abs().max(1e-300)
    }

    #[test]
    fn fg_bg_impulses() {
        let (fg, bg) = build_fg_bg(20, &[], &[]);
        assert_eq!(fg.sum() + bg.sum(), 0.0);
        let (fg, _) = build_fg_bg(20, &[(10, 10)], &[]);
        assert_eq!(fg.get(10, 10), 1.0);
        assert!(close(fg.get(11, 10), (-1.0f64).exp(), 1e-15));
        assert_eq!(fg.get(13, 10), 0.0);
        let (fg, bg) = build_fg_bg(20, &[(10, 10), (10, 11)], &[(10, 10)]);
        assert!(close(fg.get(10, 10), 1.0 + (-1.0f64).exp(), 1e-15));
        assert!(close(fg.get(10, 11), 1.0 + (-1.0f64).exp(), 1e-15));
        assert_eq!(bg.get(10, 10), 1.0);
    }

    #[test]
    fn score_examples() {
        let one = |s: f64, f: f64, b: f64| {
            let g = |v| Grid::from_vec(1, 1, vec![v]).unwrap();
            score_grad(&g(s), &g(f), &g(b)).unwrap().data[0]
        };
        assert_eq!(one(0.3, 0.0, 0.0), 0.0);
        assert_eq!(one(0.0, 1.0, 0.0), 0.5);
        assert!(close(one(2.0, 1.0, 0.0), 0.119_202_922 * 0.135_335_283, 1e-8));
        assert!(one(1.0, 1.0, 0.0) > one(3.0, 1.0, 0.0));
        assert!(one(3.0, 1.0, 0.0) > one(5.0, 1.0, 0.0));
        assert!(one(5.0, 1.0, 0.0) > 0.0);
        assert_eq!(one(0.0, 0.0, 1.0), -0.5);
    }

    #[test]
    fn force_columns() {
        let c = force_target_column(Feedback::Correct, 1).unwrap();
        assert_eq!(c, [-0.25, 0.5, -0.25]);
        assert_eq!(force_target_column(Feedback::TooSmall, 0).unwrap(), [-0.5, 0.25, 0.25]);
        assert_eq!(force_target_column(Feedback::TooLarge, 2).unwrap(), [0.25, 0.25, -0.5]);
        assert!(force_target_column(Feedback::TooSmall, 2).is_err());
        assert!(force_target_column(Feedback::TooLarge, 0).is_err());
        assert!(force_target_column(Feedback::Unsuccessful, 1).is_err());
    }

    #[test]
    fn force_examples() {
        let g = |v| vec![Grid::from_vec(1, 1, vec![v]).unwrap()];
        assert_eq!(force_grad(&g(1.0), &g(0.0)).unwrap()[0].data[0], 0.0);
        assert!(close(force_grad(&g(0.0), &g(0.5)).unwrap()[0].data[0], 0.025, 1e-15));
        let v = force_grad(&g(-3.0), &g(-0.25)).unwrap()[0].data[0];
        assert!(close(v, -0.025 * 0.047_425_873 * 0.011_108_997, 1e-7), "{v}");
    }

    #[test]
    fn embed_examples() {
        assert!(close(distance_grad(1.0, false), (-16.0f64 / 81.0).exp(), 1e-15));
        assert!((distance_grad(1.0, false) - 0.8206).abs() < 5e-4);
        assert_eq!(distance_grad(1.0, true), -0.75);
        assert!(distance_grad(4.0, false) < 1e-21);
        assert_eq!(distance_grad(0.0, true), 0.0);

        // a mask whose pixels all share the mean gets no gradient on the mask
        let e = vec![Grid::from_vec(1, 3, vec![0.0, 0.0, 2.0]).unwrap()];
        let mask = BinaryMask {
            height: 1,
            width: 3,
            data: vec![true, true, false],
        };
        let g = embed_grad(&e, &[mask]).unwrap();
        assert_eq!(&g[0].data[..2], &[0.0, 0.0]);
        // off mask at d = 4: pushed away, clamped component derivative 1
        assert!(close(g[0].data[2], distance_grad(4.0, false) * 0.5, 1e-12));
        assert_eq!(embed_grad(&e, &[]).unwrap()[0].data, vec![0.0; 3]);
    }

    #[test]
    fn inverse_area_weighting() {
        // one off-mask pixel at a fixed distance from a constant mask of area `w`
        let off = |w: usize| {
            let mut v = vec![0.0; w];
            v.push(0.8);
            let e = vec![Grid::from_vec(1, w + 1, v).unwrap()];
            let m = BinaryMask {
                height: 1,
                width: w + 1,
                data: (0..=w).map(|i| i < w).collect(),
            };
            embed_grad(&e, &[m]).unwrap()[0].data[w]
        };
        assert!(off(4) > 0.0);
        assert!(close(off(4), 2.0 * off(8), 1e-15));
    }

    #[test]
    fn zero_outside_targets() {
        let res = 12;
        let rec = InteractionRecord {
            point: (3, 3),
            feedback: Feedback::Correct,
            force_class: 1,
            moving_force: Some(1),
            mask: None,
        };
        let t = ImageTargets::from_records(res, &[rec]).unwrap();
        let mut maps = HeadMaps::zeros(res, 3, 4);
        maps.s.data.iter_mut().enumerate().for_each(|(i, v)| *v = (i as f64).sin());
        let g = head_gradients(&maps, &t, true).unwrap();
        for r in 0..res {
            for c in 0..res {
                if r.abs_diff(3) > 2 || c.abs_diff(3) > 2 {
                    assert_eq!(g.s.get(r, c), 0.0);
                    assert!(g.m.iter().all(|p| p.get(r, c) == 0.0));
                }
            }
        }
        assert!(g.e.iter().all(|p| p.data.iter().all(|&v| v == 0.0)));
        let g = head_gradients(&maps, &t, false).unwrap();
        assert!(g.m.iter().all(|p| p.data.iter().all(|&v| v == 0.0)));
    }

    proptest! {
        #[test]
        fn distance_grad_signs(d in 0.0f64..100.0) {
            prop_assert!(distance_grad(d, false) >= 0.0);
            prop_assert!(distance_grad(d, true) <= 0.0);
        }

        #[test]
        fn columns_are_normalised(fb in 0usize..3, r in 0usize..3) {
            let fb = [Feedback::Correct, Feedback::TooSmall, Feedback::TooLarge][fb];
            if let Ok(c) = force_target_column(fb, r) {
                prop_assert!(c.iter().sum::<f64>().abs() < 1e-15);
                prop_assert!((c.iter().map(|v| v.abs()).sum::<f64>() - 1.0).abs() < 1e-15);
            }
        }
    }
}
