//! Image containers and the low-level vision routines shared by the
//! simulator, the self-supervision module and the evaluation code.
//!
//! Colour images are stored interleaved (`[r, g, b, r, g, b, ...]`) in row
//! major order; scalar maps ([`Grid`], [`BinaryMask`], [`LabelMap`]) are row
//! major with one value per cell.

pub(crate) mod color;
mod filter;
pub mod io;
pub mod panel;
mod superpixel;

pub use color::{hsv_diff, hsv_to_rgb, rgb_to_hsv};
pub use filter::{convolve5, gaussian_kernel5, mean_pool, mean_pool_grid};
pub use superpixel::{felzenszwalb, SuperpixelParams};

use crate::error::{Error, Result};

/// Three-channel image with values in `[0, 1]`. Used for both RGB and HSV
/// data; the HSV variant keeps hue scaled to `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Image3 {
    pub height: usize,
    pub width: usize,
    pub data: Vec<f32>,
}

pub type ImageRgb = Image3;
pub type ImageHsv = Image3;

impl Image3 {
    pub fn new(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            data: vec![0.0; height * width * 3],
        }
    }

    pub fn filled(height: usize, width: usize, rgb: [f32; 3]) -> Self {
        let mut data = Vec::with_capacity(height * width * 3);
        for _ in 0..height * width {
            data.extend_from_slice(&rgb);
        }
        Self {
            height,
            width,
            data,
        }
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> [f32; 3] {
        let i = (row * self.width + col) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, px: [f32; 3]) {
        let i = (row * self.width + col) * 3;
        self.data[i..i + 3].copy_from_slice(&px);
    }

    pub fn same_shape(&self, other: &Image3) -> bool {
        self.height == other.height && self.width == other.width
    }

    pub(crate) fn check_shape(&self, other: &Image3) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(Error::Shape(format!(
                "{}x{} vs {}x{}",
                self.height, self.width, other.height, other.width
            )))
        }
    }
}

/// Per-pixel depth in meters.
#[derive(Clone, Debug, PartialEq)]
pub struct DepthMap {
    pub height: usize,
    pub width: usize,
    pub data: Vec<f32>,
}

impl DepthMap {
    pub fn new(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            data: vec![0.0; height * width],
        }
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f32 {
        self.data[row * self.width + col]
    }
}

/// Real-valued scalar map, e.g. interaction scores or target maps.
#[derive(Clone, Debug, PartialEq)]
pub struct Grid {
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl Grid {
    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            data: vec![0.0; height * width],
        }
    }

    pub fn from_vec(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::Shape(format!(
                "grid {height}x{width} needs {} values, got {}",
                height * width,
                data.len()
            )));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.width + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, v: f64) {
        self.data[row * self.width + col] = v;
    }

    #[inline]
    pub fn add(&mut self, row: usize, col: usize, v: f64) {
        self.data[row * self.width + col] += v;
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn same_shape(&self, other: &Grid) -> bool {
        self.height == other.height && self.width == other.width
    }
}

/// Boolean map such as the change mask or an instance mask.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct BinaryMask {
    pub height: usize,
    pub width: usize,
    pub data: Vec<bool>,
}

impl BinaryMask {
    pub fn empty(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            data: vec![false; height * width],
        }
    }

    pub fn full(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            data: vec![true; height * width],
        }
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> bool {
        self.data[row * self.width + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, v: bool) {
        self.data[row * self.width + col] = v;
    }

    pub fn area(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.data.iter().any(|&b| b)
    }

    pub fn same_shape(&self, other: &BinaryMask) -> bool {
        self.height == other.height && self.width == other.width
    }

    pub fn union(&self, other: &BinaryMask) -> BinaryMask {
        assert!(self.same_shape(other));
        BinaryMask {
            height: self.height,
            width: self.width,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| a || b)
                .collect(),
        }
    }

    pub fn intersection_count(&self, other: &BinaryMask) -> usize {
        self.data
            .iter()
            .zip(&other.data)
            .filter(|(&a, &b)| a && b)
            .count()
    }

    /// Tight `(row0, col0, row1, col1)` box, inclusive ends.
    pub fn bbox(&self) -> Option<(usize, usize, usize, usize)> {
        let mut bb: Option<(usize, usize, usize, usize)> = None;
        for r in 0..self.height {
            for c in 0..self.width {
                if self.get(r, c) {
                    bb = Some(match bb {
                        None => (r, c, r, c),
                        Some((r0, c0, r1, c1)) => (r0.min(r), c0.min(c), r1.max(r), c1.max(c)),
                    });
                }
            }
        }
        bb
    }

    /// Nearest-neighbour upsampling by an integer factor.
    pub fn upsample(&self, factor: usize) -> BinaryMask {
        let (h, w) = (self.height * factor, self.width * factor);
        let mut out = BinaryMask::empty(h, w);
        for r in 0..h {
            for c in 0..w {
                out.data[r * w + c] = self.get(r / factor, c / factor);
            }
        }
        out
    }

    /// Downsampling by majority vote: a cell is set when more than half of its
    /// `factor x factor` block is set.
    pub fn downsample_majority(&self, factor: usize) -> Result<BinaryMask> {
        if self.height % factor != 0 || self.width % factor != 0 {
            return Err(Error::Shape(format!(
                "{}x{} not divisible by {factor}",
                self.height, self.width
            )));
        }
        let (h, w) = (self.height / factor, self.width / factor);
        let need = factor * factor / 2 + 1;
        let mut out = BinaryMask::empty(h, w);
        for r in 0..h {
            for c in 0..w {
                let mut n = 0;
                for dr in 0..factor {
                    for dc in 0..factor {
                        n += self.get(r * factor + dr, c * factor + dc) as usize;
                    }
                }
                out.set(r, c, n >= need);
            }
        }
        Ok(out)
    }
}

/// Superpixel labelling: every pixel carries an id in `0..count`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelMap {
    pub height: usize,
    pub width: usize,
    pub labels: Vec<u32>,
    pub count: usize,
}

impl LabelMap {
    #[inline]
    pub fn get(&self, row: usize, col: usize) -> u32 {
        self.labels[row * self.width + col]
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0usize; self.count];
        for &l in &self.labels {
            sizes[l as usize] += 1;
        }
        sizes
    }
}
