//! Side-by-side qualitative panels: input, interaction-score heatmap, mass
//! colormap, predicted instances, ground truth and self-supervised targets.

use super::{BinaryMask, Grid, Image3};

const GAP: usize = 4;

/// Distinct overlay colours, cycled per instance.
pub const PALETTE: [[f32; 3]; 8] = [
    [0.95, 0.25, 0.25],
    [0.25, 0.85, 0.30],
    [0.25, 0.45, 0.95],
    [0.95, 0.85, 0.20],
    [0.85, 0.30, 0.90],
    [0.20, 0.90, 0.90],
    [0.95, 0.55, 0.15],
    [0.60, 0.60, 0.60],
];

/// Mass class colours: light, medium, heavy.
pub const MASS_COLORS: [[f32; 3]; 3] = [[0.9, 0.1, 0.1], [0.1, 0.85, 0.1], [0.15, 0.25, 0.95]];

#[derive(Default)]
pub struct Panel {
    tiles: Vec<Image3>,
}

impl Panel {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, tile: Image3) -> &mut Self {
        self.tiles.push(tile);
        self
    }

    pub fn compose(&self) -> Image3 {
        let h = self.tiles.iter().map(|t| t.height).max().unwrap_or(0);
        let w: usize = self.tiles.iter().map(|t| t.width).sum::<usize>()
            + GAP * self.tiles.len().saturating_sub(1);
        let mut out = Image3::filled(h, w, [1.0, 1.0, 1.0]);
        let mut x0 = 0;
        for t in &self.tiles {
            for r in 0..t.height {
                for c in 0..t.width {
                    out.set(r, x0 + c, t.get(r, c));
                }
            }
            x0 += t.width + GAP;
        }
        out
    }
}

pub fn upsample(img: &Image3, factor: usize) -> Image3 {
    let mut out = Image3::new(img.height * factor, img.width * factor);
    for r in 0..out.height {
        for c in 0..out.width {
            out.set(r, c, img.get(r / factor, c / factor));
        }
    }
    out
}

fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Brighter green for higher interaction score.
pub fn score_heatmap(scores: &Grid) -> Image3 {
    let mut img = Image3::new(scores.height, scores.width);
    for (i, &s) in scores.data.iter().enumerate() {
        let p = logistic(s) as f32;
        img.data[i * 3..i * 3 + 3].copy_from_slice(&[0.05, p, 0.05]);
    }
    img
}

/// Per-pixel argmax mass class, dimmed by the interaction score.
pub fn mass_colormap(classes: &[usize], scores: &Grid) -> Image3 {
    let mut img = Image3::new(scores.height, scores.width);
    for (i, (&k, &s)) in classes.iter().zip(&scores.data).enumerate() {
        let a = (0.25 + 0.75 * logistic(s)) as f32;
        let col = MASS_COLORS[k.min(2)];
        img.data[i * 3..i * 3 + 3].copy_from_slice(&[col[0] * a, col[1] * a, col[2] * a]);
    }
    img
}

/// Blend masks onto `base` (masks at `base` resolution divided by `factor`)
/// and draw the given points as small squares.
pub fn overlay(base: &Image3, masks: &[BinaryMask], points: &[(usize, usize)], factor: usize) -> Image3 {
    let mut out = base.clone();
    for (k, m) in masks.iter().enumerate() {
        let col = PALETTE[k % PALETTE.len()];
        for r in 0..out.height {
            for c in 0..out.width {
                let (mr, mc) = (r / factor, c / factor);
                if mr < m.height && mc < m.width && m.get(mr, mc) {
                    let px = out.get(r, c);
                    out.set(
                        r,
                        c,
                        [
                            0.45 * px[0] + 0.55 * col[0],
                            0.45 * px[1] + 0.55 * col[1],
                            0.45 * px[2] + 0.55 * col[2],
                        ],
                    );
                }
            }
        }
    }
    for (k, &(pr, pc)) in points.iter().enumerate() {
        let col = PALETTE[k % PALETTE.len()];
        let (cr, cc) = (pr * factor + factor / 2, pc * factor + factor / 2);
        let rad = (factor as isize).max(2);
        for dr in -rad..=rad {
            for dc in -rad..=rad {
                let (r, c) = (cr as isize + dr, cc as isize + dc);
                if r >= 0 && c >= 0 && (r as usize) < out.height && (c as usize) < out.width {
                    let edge = dr.abs() == rad || dc.abs() == rad;
                    out.set(r as usize, c as usize, if edge { [0.0, 0.0, 0.0] } else { col });
                }
            }
        }
    }
    out
}
