//! Graph-based superpixels (Felzenszwalb & Huttenlocher).
//!
//! Pixels are nodes of an 8-connected grid graph whose edge weights are RGB
//! distances on the 0..255 scale after Gaussian presmoothing. Edges are
//! visited in non-decreasing weight order and two components merge when the
//! edge is no heavier than either component's `Int(C) + k / |C|`. A second
//! pass merges every component smaller than `min_size` into a neighbour.

use super::{Image3, LabelMap};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SuperpixelParams {
    pub k: f32,
    pub sigma: f32,
    pub min_size: usize,
}

impl Default for SuperpixelParams {
    fn default() -> Self {
        Self {
            k: 300.0,
            sigma: 0.8,
            min_size: 60,
        }
    }
}

impl SuperpixelParams {
    /// Keeps `min_size` proportional to image area relative to 300x300.
    pub fn scaled_for(side: usize) -> Self {
        let mut p = Self::default();
        let ratio = (side * side) as f64 / (300.0 * 300.0);
        p.min_size = ((p.min_size as f64 * ratio).round() as usize).max(1);
        p
    }
}

struct DisjointSet {
    parent: Vec<u32>,
    size: Vec<u32>,
    /// `Int(C) + k/|C|`, maintained at the root.
    thresh: Vec<f32>,
}

impl DisjointSet {
    fn new(n: usize, k: f32) -> Self {
        Self {
            parent: (0..n as u32).collect(),
            size: vec![1; n],
            thresh: vec![k; n],
        }
    }

    fn find(&mut self, mut x: u32) -> u32 {
        let mut root = x;
        while self.parent[root as usize] != root {
            root = self.parent[root as usize];
        }
        while self.parent[x as usize] != root {
            let next = self.parent[x as usize];
            self.parent[x as usize] = root;
            x = next;
        }
        root
    }

    /// Unite two roots; returns the surviving root.
    fn join(&mut self, a: u32, b: u32) -> u32 {
        let (big, small) = if self.size[a as usize] >= self.size[b as usize] {
            (a, b)
        } else {
            (b, a)
        };
        self.parent[small as usize] = big;
        self.size[big as usize] += self.size[small as usize];
        big
    }
}

fn gaussian_taps(sigma: f32) -> Vec<f32> {
    let sigma = sigma.max(0.01);
    let len = (sigma * 4.0).ceil() as usize + 1;
    let mut taps: Vec<f32> = (0..len)
        .map(|i| (-0.5 * (i as f32 / sigma).powi(2)).exp())
        .collect();
    let sum = taps[0] + 2.0 * taps[1..].iter().sum::<f32>();
    for t in &mut taps {
        *t /= sum;
    }
    taps
}

/// Separable smoothing with clamped borders; returns one plane per channel on
/// the 0..255 scale.
fn smooth_planes(img: &Image3, sigma: f32) -> [Vec<f32>; 3] {
    let (h, w) = (img.height, img.width);
    let taps = gaussian_taps(sigma);
    let mut planes: [Vec<f32>; 3] = Default::default();
    for (ch, plane) in planes.iter_mut().enumerate() {
        let src: Vec<f32> = (0..h * w).map(|i| img.data[i * 3 + ch] * 255.0).collect();
        let mut tmp = vec![0.0f32; h * w];
        for r in 0..h {
            for c in 0..w {
                let mut acc = taps[0] * src[r * w + c];
                for (j, &t) in taps.iter().enumerate().skip(1) {
                    let lo = c.saturating_sub(j);
                    let hi = (c + j).min(w - 1);
                    acc += t * (src[r * w + lo] + src[r * w + hi]);
                }
                tmp[r * w + c] = acc;
            }
        }
        let mut out = vec![0.0f32; h * w];
        for r in 0..h {
            for c in 0..w {
                let mut acc = taps[0] * tmp[r * w + c];
                for (j, &t) in taps.iter().enumerate().skip(1) {
                    let lo = r.saturating_sub(j);
                    let hi = (r + j).min(h - 1);
                    acc += t * (tmp[lo * w + c] + tmp[hi * w + c]);
                }
                out[r * w + c] = acc;
            }
        }
        *plane = out;
    }
    planes
}

pub fn felzenszwalb(img: &Image3, params: SuperpixelParams) -> LabelMap {
    let (h, w) = (img.height, img.width);
    let n = h * w;
    if n == 0 {
        return LabelMap {
            height: h,
            width: w,
            labels: Vec::new(),
            count: 0,
        };
    }
    let planes = smooth_planes(img, params.sigma);
    let dist = |a: usize, b: usize| -> f32 {
        let mut s = 0.0;
        for p in &planes {
            let d = p[a] - p[b];
            s += d * d;
        }
        s.sqrt()
    };

    let mut edges: Vec<(f32, u32, u32)> = Vec::with_capacity(n * 4);
    for r in 0..h {
        for c in 0..w {
            let a = r * w + c;
            if c + 1 < w {
                edges.push((dist(a, a + 1), a as u32, (a + 1) as u32));
            }
            if r + 1 < h {
                edges.push((dist(a, a + w), a as u32, (a + w) as u32));
                if c + 1 < w {
                    edges.push((dist(a, a + w + 1), a as u32, (a + w + 1) as u32));
                }
                if c > 0 {
                    edges.push((dist(a, a + w - 1), a as u32, (a + w - 1) as u32));
                }
            }
        }
    }
    // Stable sort keeps ties in construction order, so the result is a pure
    // function of the input.
    edges.sort_by(|x, y| x.0.total_cmp(&y.0));

    let mut ds = DisjointSet::new(n, params.k);
    for &(wt, a, b) in &edges {
        let ra = ds.find(a);
        let rb = ds.find(b);
        if ra == rb {
            continue;
        }
        if wt <= ds.thresh[ra as usize] && wt <= ds.thresh[rb as usize] {
            let root = ds.join(ra, rb);
            ds.thresh[root as usize] = wt + params.k / ds.size[root as usize] as f32;
        }
    }
    for &(_, a, b) in &edges {
        let ra = ds.find(a);
        let rb = ds.find(b);
        if ra != rb
            && ((ds.size[ra as usize] as usize) < params.min_size
                || (ds.size[rb as usize] as usize) < params.min_size)
        {
            ds.join(ra, rb);
        }
    }

    // Relabel roots in row-major order of first appearance.
    let mut remap = vec![u32::MAX; n];
    let mut labels = vec![0u32; n];
    let mut count = 0u32;
    for i in 0..n {
        let root = ds.find(i as u32) as usize;
        if remap[root] == u32::MAX {
            remap[root] = count;
            count += 1;
        }
        labels[i] = remap[root];
    }
    LabelMap {
        height: h,
        width: w,
        labels,
        count: count as usize,
    }
}
