use super::Image3;
use crate::error::Result;

/// Hexcone HSV of a single pixel; hue in `[0, 1)`.
#[inline]
pub(crate) fn pixel_rgb_to_hsv([r, g, b]: [f32; 3]) -> [f32; 3] {
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let chroma = max - min;
    let v = max;
    let s = if max > 0.0 { chroma / max } else { 0.0 };
    let h = if chroma <= 0.0 {
        0.0
    } else if max == r {
        ((g - b) / chroma).rem_euclid(6.0) / 6.0
    } else if max == g {
        ((b - r) / chroma + 2.0) / 6.0
    } else {
        ((r - g) / chroma + 4.0) / 6.0
    };
    // rem_euclid can land exactly on 1.0 for tiny negative inputs.
    let h = if h >= 1.0 { 0.0 } else { h };
    [h, s, v]
}

#[inline]
pub(crate) fn pixel_hsv_to_rgb([h, s, v]: [f32; 3]) -> [f32; 3] {
    let h6 = (h.rem_euclid(1.0)) * 6.0;
    let sector = h6.floor();
    let f = h6 - sector;
    let p = v * (1.0 - s);
    let q = v * (1.0 - s * f);
    let t = v * (1.0 - s * (1.0 - f));
    match sector as i32 {
        0 => [v, t, p],
        1 => [q, v, p],
        2 => [p, v, t],
        3 => [p, q, v],
        4 => [t, p, v],
        _ => [v, p, q],
    }
}

pub fn rgb_to_hsv(img: &Image3) -> Image3 {
    let mut out = Image3::new(img.height, img.width);
    for (src, dst) in img.data.chunks_exact(3).zip(out.data.chunks_exact_mut(3)) {
        dst.copy_from_slice(&pixel_rgb_to_hsv([src[0], src[1], src[2]]));
    }
    out
}

pub fn hsv_to_rgb(img: &Image3) -> Image3 {
    let mut out = Image3::new(img.height, img.width);
    for (src, dst) in img.data.chunks_exact(3).zip(out.data.chunks_exact_mut(3)) {
        dst.copy_from_slice(&pixel_hsv_to_rgb([src[0], src[1], src[2]]));
    }
    out
}

/// Signed difference `a - b` of two HSV images. Saturation and value are
/// subtracted directly; hue takes the shorter way around the colour circle,
/// so its magnitude never exceeds 0.5.
pub fn hsv_diff(a: &Image3, b: &Image3) -> Result<Image3> {
    a.check_shape(b)?;
    let mut out = Image3::new(a.height, a.width);
    for ((pa, pb), d) in a
        .data
        .chunks_exact(3)
        .zip(b.data.chunks_exact(3))
        .zip(out.data.chunks_exact_mut(3))
    {
        let mut dh = pa[0] - pb[0];
        if dh > 0.5 {
            dh -= 1.0;
        } else if dh < -0.5 {
            dh += 1.0;
        }
        d[0] = dh;
        d[1] = pa[1] - pb[1];
        d[2] = pa[2] - pb[2];
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one(px: [f32; 3]) -> Image3 {
        Image3::filled(1, 1, px)
    }

    #[test]
    fn primaries_and_gray() {
        assert_eq!(rgb_to_hsv(&one([1.0, 0.0, 0.0])).get(0, 0), [0.0, 1.0, 1.0]);
        assert_eq!(rgb_to_hsv(&one([0.5, 0.5, 0.5])).get(0, 0), [0.0, 0.0, 0.5]);
        // green: max = g, (b - r)/chroma + 2 = 2, /6 = 1/3
        let [h, s, v] = rgb_to_hsv(&one([0.0, 1.0, 0.0])).get(0, 0);
        assert!((h - 1.0 / 3.0).abs() < 1e-7);
        assert_eq!((s, v), (1.0, 1.0));
        let [h, _, _] = rgb_to_hsv(&one([0.0, 0.0, 1.0])).get(0, 0);
        assert!((h - 2.0 / 3.0).abs() < 1e-7);
    }

    #[test]
    fn black_is_zero() {
        assert_eq!(rgb_to_hsv(&one([0.0, 0.0, 0.0])).get(0, 0), [0.0, 0.0, 0.0]);
    }

    #[test]
    fn hsv_roundtrip() {
        for &px in &[[0.2, 0.7, 0.4], [0.9, 0.1, 0.5], [0.3, 0.3, 0.8], [1.0, 0.99, 0.0]] {
            let back = hsv_to_rgb(&rgb_to_hsv(&one(px))).get(0, 0);
            for i in 0..3 {
                assert!((back[i] - px[i]).abs() < 1e-6, "{px:?} -> {back:?}");
            }
        }
    }

    #[test]
    fn diff_identity_is_zero() {
        let a = rgb_to_hsv(&one([0.3, 0.6, 0.2]));
        assert_eq!(hsv_diff(&a, &a).unwrap().get(0, 0), [0.0, 0.0, 0.0]);
    }

    #[test]
    fn diff_hue_wraps() {
        let d = hsv_diff(&one([0.95, 0.5, 0.5]), &one([0.05, 0.5, 0.5])).unwrap();
        let dh = d.get(0, 0)[0];
        assert!((dh.abs() - 0.10).abs() < 1e-6, "{dh}");
        // 0.95 -> 0.05 going forward is the short arc, so a - b is negative
        assert!(dh < 0.0);
    }

    #[test]
    fn diff_value_componentwise() {
        let d = hsv_diff(&one([0.2, 0.4, 0.8]), &one([0.2, 0.4, 0.6])).unwrap();
        let [dh, ds, dv] = d.get(0, 0);
        assert_eq!((dh, ds), (0.0, 0.0));
        assert!((dv - 0.2).abs() < 1e-6);
    }

    #[test]
    fn diff_shape_mismatch() {
        assert!(hsv_diff(&Image3::new(2, 2), &Image3::new(2, 3)).is_err());
    }
}
