use super::{Grid, Image3};
use crate::error::{Error, Result};

/// Block-average each channel over `factor x factor` tiles.
pub fn mean_pool(img: &Image3, factor: usize) -> Result<Image3> {
    check_divisible(img.height, img.width, factor)?;
    let (h, w) = (img.height / factor, img.width / factor);
    let mut out = Image3::new(h, w);
    let inv = 1.0 / (factor * factor) as f64;
    for r in 0..h {
        for c in 0..w {
            let mut acc = [0.0f64; 3];
            for dr in 0..factor {
                for dc in 0..factor {
                    let px = img.get(r * factor + dr, c * factor + dc);
                    for k in 0..3 {
                        acc[k] += px[k] as f64;
                    }
                }
            }
            out.set(
                r,
                c,
                [(acc[0] * inv) as f32, (acc[1] * inv) as f32, (acc[2] * inv) as f32],
            );
        }
    }
    Ok(out)
}

pub fn mean_pool_grid(grid: &Grid, factor: usize) -> Result<Grid> {
    check_divisible(grid.height, grid.width, factor)?;
    let (h, w) = (grid.height / factor, grid.width / factor);
    let mut out = Grid::zeros(h, w);
    let inv = 1.0 / (factor * factor) as f64;
    for r in 0..h {
        for c in 0..w {
            let mut acc = 0.0;
            for dr in 0..factor {
                for dc in 0..factor {
                    acc += grid.get(r * factor + dr, c * factor + dc);
                }
            }
            out.set(r, c, acc * inv);
        }
    }
    Ok(out)
}

fn check_divisible(h: usize, w: usize, factor: usize) -> Result<()> {
    if factor == 0 || h % factor != 0 || w % factor != 0 {
        return Err(Error::Shape(format!("{h}x{w} not divisible by {factor}")));
    }
    Ok(())
}

/// The unnormalised 5x5 kernel `exp(-u^2 - v^2)` for `u, v` in `-2..=2`.
pub fn gaussian_kernel5() -> Grid {
    let mut k = Grid::zeros(5, 5);
    for u in -2i32..=2 {
        for v in -2i32..=2 {
            k.set((u + 2) as usize, (v + 2) as usize, (-(u * u + v * v) as f64).exp());
        }
    }
    k
}

/// Same-size 2D correlation with a 5x5 kernel and zero padding. For the
/// symmetric Gaussian kernel this equals convolution.
pub fn convolve5(grid: &Grid, kernel: &Grid) -> Grid {
    assert_eq!((kernel.height, kernel.width), (5, 5), "kernel must be 5x5");
    let (h, w) = (grid.height as isize, grid.width as isize);
    let mut out = Grid::zeros(grid.height, grid.width);
    // Scatter only the nonzero cells; target maps are sparse.
    for r in 0..h {
        for c in 0..w {
            let v = grid.data[(r * w + c) as usize];
            if v == 0.0 {
                continue;
            }
            for du in -2isize..=2 {
                let rr = r + du;
                if rr < 0 || rr >= h {
                    continue;
                }
                for dv in -2isize..=2 {
                    let cc = c + dv;
                    if cc < 0 || cc >= w {
                        continue;
                    }
                    // correlation: out[p] = sum_q k[q - p + 2] * in[q]
                    let kv = kernel.get((2 - du) as usize, (2 - dv) as usize);
                    out.data[(rr * w + cc) as usize] += kv * v;
                }
            }
        }
    }
    out
}
