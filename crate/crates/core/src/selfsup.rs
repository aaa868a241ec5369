//! Turning a before/after pair into a (noisy) training signal.
//!
//! The change mask `B` marks output cells whose pooled HSV difference has
//! squared norm above [`CHANGE_THRESHOLD`]. Superpixels of the before image
//! then snap `B` to image structure: a superpixel joins `B+` when at least a
//! quarter of it is covered. An interaction counts as successful when the
//! Gaussian-weighted mass of `B+` around the interaction point reaches
//! [`SUCCESS_THRESHOLD`].

use crate::error::{Error, Result};
use crate::imaging::{
    felzenszwalb, gaussian_kernel5, hsv_diff, mean_pool, rgb_to_hsv, BinaryMask, Image3, LabelMap, SuperpixelParams,
};

pub const POOL: usize = 3;
pub const CHANGE_THRESHOLD: f32 = 0.01;
pub const SUCCESS_THRESHOLD: f64 = 1.5;

#[derive(Clone, Debug, PartialEq)]
pub struct SupervisionResult {
    pub b: BinaryMask,
    pub b_plus: BinaryMask,
    pub successful: bool,
}

/// Thresholded, pooled HSV change between two frames.
pub fn change_mask(before: &Image3, after: &Image3) -> Result<BinaryMask> {
    before.check_shape(after)?;
    let j = hsv_diff(&rgb_to_hsv(after), &rgb_to_hsv(before))?;
    let pooled = mean_pool(&j, POOL)?;
    Ok(BinaryMask {
        height: pooled.height,
        width: pooled.width,
        data: pooled
            .data
            .chunks_exact(3)
            .map(|p| p[0] * p[0] + p[1] * p[1] + p[2] * p[2] > CHANGE_THRESHOLD)
            .collect(),
    })
}

/// Snap `b` (output resolution) to precomputed superpixels (input resolution).
pub fn align_with_labels(b: &BinaryMask, labels: &LabelMap) -> Result<BinaryMask> {
    if b.height * POOL != labels.height || b.width * POOL != labels.width {
        return Err(Error::Shape(format!(
            "mask {}x{} does not match labels {}x{}",
            b.height, b.width, labels.height, labels.width
        )));
    }
    let up = b.upsample(POOL);
    let sizes = labels.sizes();
    let mut covered = vec![0usize; labels.count];
    for (&l, &on) in labels.labels.iter().zip(&up.data) {
        if on {
            covered[l as usize] += 1;
        }
    }
    // covered / size >= 1/4, in integers
    let keep: Vec<bool> = covered
        .iter()
        .zip(&sizes)
        .map(|(&c, &s)| c > 0 && 4 * c >= s)
        .collect();
    let union = BinaryMask {
        height: labels.height,
        width: labels.width,
        data: labels.labels.iter().map(|&l| keep[l as usize]).collect(),
    };
    union.downsample_majority(POOL)
}

pub fn align_superpixels(b: &BinaryMask, before: &Image3, params: SuperpixelParams) -> Result<BinaryMask> {
    align_with_labels(b, &felzenszwalb(before, params))
}

/// Gaussian-weighted 5x5 sum of `b_plus` around `(row, col)`.
pub fn success_mass(b_plus: &BinaryMask, row: usize, col: usize) -> f64 {
    let k = gaussian_kernel5();
    let mut s = 0.0;
    for du in -2isize..=2 {
        for dv in -2isize..=2 {
            let (r, c) = (row as isize + du, col as isize + dv);
            if r < 0 || c < 0 || r as usize >= b_plus.height || c as usize >= b_plus.width {
                continue;
            }
            if b_plus.get(r as usize, c as usize) {
                s += k.get((du + 2) as usize, (dv + 2) as usize);
            }
        }
    }
    s
}

pub fn success_test(b_plus: &BinaryMask, row: usize, col: usize) -> bool {
    success_mass(b_plus, row, col) >= SUCCESS_THRESHOLD
}

/// `labels = None` disables superpixel snapping (`B+ = B`).
pub fn supervise_with_labels(
    before: &Image3,
    after: &Image3,
    point: (usize, usize),
    labels: Option<&LabelMap>,
) -> Result<SupervisionResult> {
    let b = change_mask(before, after)?;
    if point.0 >= b.height || point.1 >= b.width {
        return Err(Error::InvalidArgument(format!(
            "point {point:?} outside {}x{}",
            b.height, b.width
        )));
    }
    let b_plus = match labels {
        Some(l) => align_with_labels(&b, l)?,
        None => b.clone(),
    };
    let successful = success_test(&b_plus, point.0, point.1);
    Ok(SupervisionResult { b, b_plus, successful })
}

pub fn supervise(before: &Image3, after: &Image3, point: (usize, usize), params: SuperpixelParams) -> Result<SupervisionResult> {
    let labels = felzenszwalb(before, params);
    supervise_with_labels(before, after, point, Some(&labels))
}
