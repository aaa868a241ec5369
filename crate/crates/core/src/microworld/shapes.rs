use serde::{Deserialize, Serialize};

/// Footprint categories. Objects never rotate during simulation; the quarter
/// turn chosen at generation time is baked into the footprint.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ShapeKind {
    Box,
    Disc,
    Ell,
    Tee,
    Ring,
    Bar,
    Wedge,
    Cross,
}

impl ShapeKind {
    pub const ALL: [ShapeKind; 8] = [
        ShapeKind::Box,
        ShapeKind::Disc,
        ShapeKind::Ell,
        ShapeKind::Tee,
        ShapeKind::Ring,
        ShapeKind::Bar,
        ShapeKind::Wedge,
        ShapeKind::Cross,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ShapeKind::Box => "box",
            ShapeKind::Disc => "disc",
            ShapeKind::Ell => "ell",
            ShapeKind::Tee => "tee",
            ShapeKind::Ring => "ring",
            ShapeKind::Bar => "bar",
            ShapeKind::Wedge => "wedge",
            ShapeKind::Cross => "cross",
        }
    }

    pub fn from_name(s: &str) -> Option<ShapeKind> {
        ShapeKind::ALL.into_iter().find(|k| k.name() == s)
    }

    /// Membership in the unit square `[0,1)^2` (before aspect scaling).
    fn contains(self, u: f32, v: f32) -> bool {
        const T: f32 = 1.0 / 3.0;
        match self {
            ShapeKind::Box | ShapeKind::Bar => true,
            ShapeKind::Disc => (u - 0.5).powi(2) + (v - 0.5).powi(2) <= 0.25,
            ShapeKind::Ell => !(u >= 0.5 && v >= 0.5),
            ShapeKind::Tee => v < T || (u >= T && u < 2.0 * T),
            ShapeKind::Ring => {
                let r2 = (u - 0.5).powi(2) + (v - 0.5).powi(2);
                (0.0625..=0.25).contains(&r2)
            }
            ShapeKind::Wedge => v <= u,
            ShapeKind::Cross => (u >= T && u < 2.0 * T) || (v >= T && v < 2.0 * T),
        }
    }

    /// Relative surface height at `(u, v)`; only the wedge is sloped.
    fn relief(self, u: f32, _v: f32) -> f32 {
        match self {
            ShapeKind::Wedge => 0.4 + 0.6 * u,
            _ => 1.0,
        }
    }

    /// Width/height aspect of the footprint before rotation.
    fn aspect(self) -> f32 {
        match self {
            ShapeKind::Bar => 1.0 / 3.0,
            _ => 1.0,
        }
    }
}

/// Rasterised footprint on the 1 cm lattice, in object-local cells.
#[derive(Clone, Debug, PartialEq)]
pub struct Footprint {
    /// Extent along world x (cells).
    pub nx: i32,
    /// Extent along world y (cells).
    pub ny: i32,
    /// Surface height per cell in meters; 0 marks an empty cell.
    pub heights: Vec<f32>,
}

impl Footprint {
    pub fn build(shape: ShapeKind, size_cm: i32, rotation: u8, height_m: f32) -> Footprint {
        let size_cm = size_cm.max(2);
        let minor = ((size_cm as f32 * shape.aspect()).round() as i32).max(2);
        // unrotated: u along a (size), v along b (minor)
        let (a, b) = (size_cm, minor);
        let (nx, ny) = if rotation % 2 == 0 { (a, b) } else { (b, a) };
        let mut heights = vec![0.0f32; (nx * ny) as usize];
        for j in 0..ny {
            for i in 0..nx {
                // map world-aligned cell back into the unrotated frame
                let (ia, ib) = match rotation % 4 {
                    0 => (i, j),
                    1 => (j, nx - 1 - i),
                    2 => (nx - 1 - i, ny - 1 - j),
                    _ => (ny - 1 - j, i),
                };
                let u = (ia as f32 + 0.5) / a as f32;
                let v = (ib as f32 + 0.5) / b as f32;
                if shape.contains(u, v) {
                    heights[(j * nx + i) as usize] = height_m * shape.relief(u, v);
                }
            }
        }
        Footprint { nx, ny, heights }
    }

    /// Height at a local cell, 0 when outside.
    #[inline]
    pub fn at(&self, i: i32, j: i32) -> f32 {
        if i < 0 || j < 0 || i >= self.nx || j >= self.ny {
            0.0
        } else {
            self.heights[(j * self.nx + i) as usize]
        }
    }

    pub fn area(&self) -> usize {
        self.heights.iter().filter(|&&h| h > 0.0).count()
    }

    /// Offsets of occupied cells relative to the footprint origin.
    pub fn cells(&self) -> impl Iterator<Item = (i32, i32)> + '_ {
        (0..self.ny).flat_map(move |j| {
            (0..self.nx).filter_map(move |i| (self.at(i, j) > 0.0).then_some((i, j)))
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_roundtrip() {
        for k in ShapeKind::ALL {
            assert_eq!(ShapeKind::from_name(k.name()), Some(k));
        }
        assert_eq!(ShapeKind::from_name("blob"), None);
    }

    #[test]
    fn box_is_full_and_ring_has_hole() {
        let b = Footprint::build(ShapeKind::Box, 40, 0, 0.3);
        assert_eq!(b.area(), 1600);
        let r = Footprint::build(ShapeKind::Ring, 40, 0, 0.3);
        assert!(r.at(20, 20) == 0.0 && r.at(20, 2) > 0.0);
    }

    #[test]
    fn rotation_preserves_area() {
        for k in ShapeKind::ALL {
            let a0 = Footprint::build(k, 37, 0, 0.2).area();
            for rot in 1..4 {
                assert_eq!(Footprint::build(k, 37, rot, 0.2).area(), a0, "{k:?} rot {rot}");
            }
        }
    }

    #[test]
    fn bar_rotates_extent() {
        let f0 = Footprint::build(ShapeKind::Bar, 60, 0, 0.2);
        let f1 = Footprint::build(ShapeKind::Bar, 60, 1, 0.2);
        assert_eq!((f0.nx, f0.ny), (60, 20));
        assert_eq!((f1.nx, f1.ny), (20, 60));
    }

    #[test]
    fn wedge_slopes() {
        let w = Footprint::build(ShapeKind::Wedge, 50, 0, 0.5);
        assert!(w.at(49, 0) > w.at(5, 0));
        assert!(w.at(49, 0) <= 0.5 + 1e-6);
    }
}
