//! Convolution, transposed convolution and batch normalisation with
//! hand-written reverse passes, all on `(C, N, H, W)` tensors.

use rand::Rng;

use super::tensor::{gemm, Mat, Real, Tensor};

pub const BN_MOMENTUM: f64 = 0.1;
pub const BN_EPS: f64 = 1e-5;

/// Named flat tensors. Used for trainable parameters, their gradients,
/// optimizer moments and batch-norm running statistics.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamSet<T> {
    pub names: Vec<String>,
    pub shapes: Vec<Vec<usize>>,
    pub values: Vec<Vec<T>>,
}

impl<T: Real> Default for ParamSet<T> {
    fn default() -> Self {
        Self {
            names: Vec::new(),
            shapes: Vec::new(),
            values: Vec::new(),
        }
    }
}

impl<T: Real> ParamSet<T> {
    pub fn add(&mut self, name: String, shape: Vec<usize>, values: Vec<T>) -> usize {
        debug_assert_eq!(shape.iter().product::<usize>(), values.len());
        self.names.push(name);
        self.shapes.push(shape);
        self.values.push(values);
        self.values.len() - 1
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            names: self.names.clone(),
            shapes: self.shapes.clone(),
            values: self.values.iter().map(|v| vec![T::zero(); v.len()]).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn scalar_count(&self) -> usize {
        self.values.iter().map(|v| v.len()).sum()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn cast<U: Real>(&self) -> ParamSet<U> {
        ParamSet {
            names: self.names.clone(),
            shapes: self.shapes.clone(),
            values: self
                .values
                .iter()
                .map(|v| v.iter().map(|x| U::from(*x).unwrap()).collect())
                .collect(),
        }
    }

    /// Sum of `<self, other>` over all tensors, in f64.
    pub fn dot(&self, other: &ParamSet<T>) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a.iter().zip(b).map(|(x, y)| x.to_f64().unwrap() * y.to_f64().unwrap()).sum::<f64>())
            .sum()
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }
}

fn he_uniform<T: Real, R: Rng>(rng: &mut R, fan_in: usize, n: usize) -> Vec<T> {
    let bound = (6.0 / fan_in as f64).sqrt();
    (0..n).map(|_| T::lit(rng.random_range(-bound..bound))).collect()
}

#[derive(Clone, Debug)]
pub struct Conv2d {
    pub w: usize,
    pub b: Option<usize>,
    pub cin: usize,
    pub cout: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Real, R: Rng>(
        params: &mut ParamSet<T>,
        rng: &mut R,
        name: &str,
        cin: usize,
        cout: usize,
        k: usize,
        stride: usize,
        pad: usize,
        bias: bool,
    ) -> Self {
        let fan_in = cin * k * k;
        let w = params.add(
            format!("{name}.weight"),
            vec![cout, cin, k, k],
            he_uniform(rng, fan_in, cout * fan_in),
        );
        let b = bias.then(|| params.add(format!("{name}.bias"), vec![cout], vec![T::zero(); cout]));
        Self {
            w,
            b,
            cin,
            cout,
            k,
            stride,
            pad,
        }
    }

    pub fn out_size(&self, h: usize, w: usize) -> (usize, usize) {
        (
            (h + 2 * self.pad - self.k) / self.stride + 1,
            (w + 2 * self.pad - self.k) / self.stride + 1,
        )
    }

    fn is_pointwise(&self) -> bool {
        self.k == 1 && self.stride == 1 && self.pad == 0
    }

    fn im2col<T: Real>(&self, x: &Tensor<T>, oh: usize, ow: usize) -> Vec<T> {
        let (k, s, p) = (self.k, self.stride as isize, self.pad as isize);
        let cols = x.n * oh * ow;
        let mut col = vec![T::zero(); self.cin * k * k * cols];
        for ci in 0..self.cin {
            for ky in 0..k {
                for kx in 0..k {
                    let row = (ci * k + ky) * k + kx;
                    let dst = &mut col[row * cols..(row + 1) * cols];
                    for n in 0..x.n {
                        for oy in 0..oh {
                            let iy = oy as isize * s + ky as isize - p;
                            if iy < 0 || iy >= x.h as isize {
                                continue;
                            }
                            let src = &x.data[x.idx(ci, n, iy as usize, 0)..][..x.w];
                            let d = &mut dst[(n * oh + oy) * ow..][..ow];
                            for (ox, dv) in d.iter_mut().enumerate() {
                                let ix = ox as isize * s + kx as isize - p;
                                if ix >= 0 && ix < x.w as isize {
                                    *dv = src[ix as usize];
                                }
                            }
                        }
                    }
                }
            }
        }
        col
    }

    fn col2im<T: Real>(&self, col: &[T], n: usize, h: usize, w: usize, oh: usize, ow: usize) -> Tensor<T> {
        let (k, s, p) = (self.k, self.stride as isize, self.pad as isize);
        let cols = n * oh * ow;
        let mut dx = Tensor::zeros(self.cin, n, h, w);
        for ci in 0..self.cin {
            for ky in 0..k {
                for kx in 0..k {
                    let row = (ci * k + ky) * k + kx;
                    let src = &col[row * cols..(row + 1) * cols];
                    for b in 0..n {
                        for oy in 0..oh {
                            let iy = oy as isize * s + ky as isize - p;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            let base = dx.idx(ci, b, iy as usize, 0);
                            let srow = &src[(b * oh + oy) * ow..][..ow];
                            for (ox, &sv) in srow.iter().enumerate() {
                                let ix = ox as isize * s + kx as isize - p;
                                if ix >= 0 && ix < w as isize {
                                    dx.data[base + ix as usize] += sv;
                                }
                            }
                        }
                    }
                }
            }
        }
        dx
    }

    pub fn forward<T: Real>(&self, params: &ParamSet<T>, x: &Tensor<T>) -> Tensor<T> {
        assert_eq!(x.c, self.cin, "conv input channels");
        let (oh, ow) = self.out_size(x.h, x.w);
        let mut y = Tensor::zeros(self.cout, x.n, oh, ow);
        let p = y.plane();
        let kk = self.cin * self.k * self.k;
        let wv = &params.values[self.w];
        if self.is_pointwise() {
            gemm(T::one(), Mat::new(wv, self.cout, kk), Mat::new(&x.data, kk, p), T::zero(), &mut y.data);
        } else {
            let col = self.im2col(x, oh, ow);
            gemm(T::one(), Mat::new(wv, self.cout, kk), Mat::new(&col, kk, p), T::zero(), &mut y.data);
        }
        if let Some(b) = self.b {
            for (co, &bv) in params.values[b].iter().enumerate() {
                y.data[co * p..(co + 1) * p].iter_mut().for_each(|v| *v += bv);
            }
        }
        y
    }

    /// Accumulates parameter gradients into `grads` and returns `dL/dx`.
    pub fn backward<T: Real>(
        &self,
        params: &ParamSet<T>,
        grads: &mut ParamSet<T>,
        x: &Tensor<T>,
        dy: &Tensor<T>,
    ) -> Tensor<T> {
        let (oh, ow) = (dy.h, dy.w);
        let p = dy.plane();
        let kk = self.cin * self.k * self.k;
        let wv = &params.values[self.w];
        if let Some(b) = self.b {
            for (co, g) in grads.values[b].iter_mut().enumerate() {
                *g += dy.data[co * p..(co + 1) * p].iter().copied().sum::<T>();
            }
        }
        if self.is_pointwise() {
            gemm(
                T::one(),
                Mat::new(&dy.data, self.cout, p),
                Mat::new(&x.data, kk, p).t(),
                T::one(),
                &mut grads.values[self.w],
            );
            let mut dx = Tensor::zeros(self.cin, x.n, x.h, x.w);
            gemm(T::one(), Mat::new(wv, self.cout, kk).t(), Mat::new(&dy.data, self.cout, p), T::zero(), &mut dx.data);
            dx
        } else {
            let col = self.im2col(x, oh, ow);
            gemm(
                T::one(),
                Mat::new(&dy.data, self.cout, p),
                Mat::new(&col, kk, p).t(),
                T::one(),
                &mut grads.values[self.w],
            );
            let mut dcol = col;
            gemm(T::one(), Mat::new(wv, self.cout, kk).t(), Mat::new(&dy.data, self.cout, p), T::zero(), &mut dcol);
            self.col2im(&dcol, x.n, x.h, x.w, oh, ow)
        }
    }
}

/// 2x2 transposed convolution with stride 2 (non-overlapping), cropped to a
/// requested output size.
#[derive(Clone, Debug)]
pub struct ConvTranspose2x2 {
    pub w: usize,
    pub cin: usize,
    pub cout: usize,
}

impl ConvTranspose2x2 {
    pub fn new<T: Real, R: Rng>(params: &mut ParamSet<T>, rng: &mut R, name: &str, cin: usize, cout: usize) -> Self {
        let w = params.add(
            format!("{name}.weight"),
            vec![cin, cout, 2, 2],
            he_uniform(rng, cin, cin * cout * 4),
        );
        Self { w, cin, cout }
    }

    pub fn forward<T: Real>(&self, params: &ParamSet<T>, x: &Tensor<T>, oh: usize, ow: usize) -> Tensor<T> {
        assert_eq!(x.c, self.cin, "transposed conv input channels");
        assert!(oh <= 2 * x.h && ow <= 2 * x.w);
        let p = x.plane();
        let rows = self.cout * 4;
        let mut yp = vec![T::zero(); rows * p];
        gemm(
            T::one(),
            Mat::new(&params.values[self.w], self.cin, rows).t(),
            Mat::new(&x.data, self.cin, p),
            T::zero(),
            &mut yp,
        );
        let mut y = Tensor::zeros(self.cout, x.n, oh, ow);
        for co in 0..self.cout {
            for a in 0..2 {
                for b in 0..2 {
                    let src = &yp[((co * 2 + a) * 2 + b) * p..][..p];
                    for n in 0..x.n {
                        for i in 0..x.h {
                            let yy = 2 * i + a;
                            if yy >= oh {
                                continue;
                            }
                            for j in 0..x.w {
                                let xx = 2 * j + b;
                                if xx < ow {
                                    let d = y.idx(co, n, yy, xx);
                                    y.data[d] = src[(n * x.h + i) * x.w + j];
                                }
                            }
                        }
                    }
                }
            }
        }
        y
    }

    pub fn backward<T: Real>(
        &self,
        params: &ParamSet<T>,
        grads: &mut ParamSet<T>,
        x: &Tensor<T>,
        dy: &Tensor<T>,
    ) -> Tensor<T> {
        let p = x.plane();
        let rows = self.cout * 4;
        let mut dyp = vec![T::zero(); rows * p];
        for co in 0..self.cout {
            for a in 0..2 {
                for b in 0..2 {
                    let dst = &mut dyp[((co * 2 + a) * 2 + b) * p..][..p];
                    for n in 0..x.n {
                        for i in 0..x.h {
                            let yy = 2 * i + a;
                            if yy >= dy.h {
                                continue;
                            }
                            for j in 0..x.w {
                                let xx = 2 * j + b;
                                if xx < dy.w {
                                    dst[(n * x.h + i) * x.w + j] = dy.at(co, n, yy, xx);
                                }
                            }
                        }
                    }
                }
            }
        }
        gemm(
            T::one(),
            Mat::new(&x.data, self.cin, p),
            Mat::new(&dyp, rows, p).t(),
            T::one(),
            &mut grads.values[self.w],
        );
        let mut dx = Tensor::zeros(self.cin, x.n, x.h, x.w);
        gemm(
            T::one(),
            Mat::new(&params.values[self.w], self.cin, rows),
            Mat::new(&dyp, rows, p),
            T::zero(),
            &mut dx.data,
        );
        dx
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics; running statistics are updated.
    Train,
    /// Running statistics, no tape.
    Eval,
    /// Running statistics with a tape, for gradient checks.
    Frozen,
}

#[derive(Clone, Debug)]
pub struct BatchNorm {
    pub gamma: usize,
    pub beta: usize,
    pub mean: usize,
    pub var: usize,
    pub c: usize,
}

#[derive(Clone, Debug)]
pub struct BnCache<T> {
    xhat: Vec<T>,
    inv_std: Vec<T>,
    batch_stats: bool,
}

/// Batch mean and unbiased variance of one normalisation layer, applied to
/// the running statistics after a training forward pass.
pub type BnStats = (BatchNorm, Vec<f64>, Vec<f64>);

impl BatchNorm {
    pub fn new<T: Real>(params: &mut ParamSet<T>, buffers: &mut ParamSet<T>, name: &str, c: usize) -> Self {
        Self {
            gamma: params.add(format!("{name}.gamma"), vec![c], vec![T::one(); c]),
            beta: params.add(format!("{name}.beta"), vec![c], vec![T::zero(); c]),
            mean: buffers.add(format!("{name}.running_mean"), vec![c], vec![T::zero(); c]),
            var: buffers.add(format!("{name}.running_var"), vec![c], vec![T::one(); c]),
            c,
        }
    }

    pub fn forward<T: Real>(
        &self,
        params: &ParamSet<T>,
        buffers: &ParamSet<T>,
        x: &mut Tensor<T>,
        mode: Mode,
    ) -> (BnCache<T>, Option<(Vec<f64>, Vec<f64>)>) {
        assert_eq!(x.c, self.c);
        let p = x.plane();
        let eps = BN_EPS;
        let mut inv_std = Vec::with_capacity(self.c);
        let mut stats = None;
        let keep_xhat = mode != Mode::Eval;
        let mut xhat = if keep_xhat { vec![T::zero(); x.data.len()] } else { Vec::new() };
        let (mut means, mut vars) = (Vec::new(), Vec::new());
        for ch in 0..self.c {
            let seg = &mut x.data[ch * p..(ch + 1) * p];
            let (mean, var) = if mode == Mode::Train {
                let m = seg.iter().map(|v| v.to_f64().unwrap()).sum::<f64>() / p as f64;
                let v = seg.iter().map(|v| (v.to_f64().unwrap() - m).powi(2)).sum::<f64>() / p as f64;
                means.push(m);
                vars.push(if p > 1 { v * p as f64 / (p - 1) as f64 } else { v });
                (m, v)
            } else {
                (
                    buffers.values[self.mean][ch].to_f64().unwrap(),
                    buffers.values[self.var][ch].to_f64().unwrap(),
                )
            };
            let inv = T::lit(1.0 / (var + eps).sqrt());
            let m = T::lit(mean);
            let g = params.values[self.gamma][ch];
            let b = params.values[self.beta][ch];
            for (i, v) in seg.iter_mut().enumerate() {
                let h = (*v - m) * inv;
                if keep_xhat {
                    xhat[ch * p + i] = h;
                }
                *v = g * h + b;
            }
            inv_std.push(inv);
        }
        if mode == Mode::Train {
            stats = Some((means, vars));
        }
        (
            BnCache {
                xhat,
                inv_std,
                batch_stats: mode == Mode::Train,
            },
            stats,
        )
    }

    pub fn update_running<T: Real>(&self, buffers: &mut ParamSet<T>, mean: &[f64], var: &[f64]) {
        for ch in 0..self.c {
            let rm = &mut buffers.values[self.mean][ch];
            *rm = T::lit((1.0 - BN_MOMENTUM) * rm.to_f64().unwrap() + BN_MOMENTUM * mean[ch]);
            let rv = &mut buffers.values[self.var][ch];
            *rv = T::lit((1.0 - BN_MOMENTUM) * rv.to_f64().unwrap() + BN_MOMENTUM * var[ch]);
        }
    }

    /// In-place: `dy` becomes `dL/dx`.
    pub fn backward<T: Real>(&self, params: &ParamSet<T>, grads: &mut ParamSet<T>, cache: &BnCache<T>, dy: &mut Tensor<T>) {
        let p = dy.plane();
        let m = T::from(p).unwrap();
        for ch in 0..self.c {
            let seg = &mut dy.data[ch * p..(ch + 1) * p];
            let xh = &cache.xhat[ch * p..(ch + 1) * p];
            let dbeta: T = seg.iter().copied().sum();
            let dgamma: T = seg.iter().zip(xh).map(|(&d, &h)| d * h).sum();
            grads.values[self.gamma][ch] += dgamma;
            grads.values[self.beta][ch] += dbeta;
            let g = params.values[self.gamma][ch];
            let inv = cache.inv_std[ch];
            if cache.batch_stats {
                let scale = g * inv / m;
                for (d, &h) in seg.iter_mut().zip(xh) {
                    *d = scale * (m * *d - dbeta - h * dgamma);
                }
            } else {
                let scale = g * inv;
                seg.iter_mut().for_each(|d| *d *= scale);
            }
        }
    }
}

/// Convolution followed by batch normalisation and ReLU.
#[derive(Clone, Debug)]
pub struct ConvBnRelu {
    pub conv: Conv2d,
    pub bn: BatchNorm,
}

#[derive(Clone, Debug)]
pub struct UnitCache<T> {
    pub x: Tensor<T>,
    bn: BnCache<T>,
    /// Output after ReLU.
    y: Tensor<T>,
}

impl ConvBnRelu {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Real, R: Rng>(
        params: &mut ParamSet<T>,
        buffers: &mut ParamSet<T>,
        rng: &mut R,
        name: &str,
        cin: usize,
        cout: usize,
        k: usize,
        stride: usize,
        pad: usize,
    ) -> Self {
        Self {
            conv: Conv2d::new(params, rng, name, cin, cout, k, stride, pad, false),
            bn: BatchNorm::new(params, buffers, &format!("{name}.bn"), cout),
        }
    }

    pub fn forward<T: Real>(
        &self,
        params: &ParamSet<T>,
        buffers: &ParamSet<T>,
        x: Tensor<T>,
        mode: Mode,
        stats: &mut Vec<BnStats>,
    ) -> (Tensor<T>, Option<UnitCache<T>>) {
        let mut y = self.conv.forward(params, &x);
        let (bn, st) = self.bn.forward(params, buffers, &mut y, mode);
        if let Some((m, v)) = st {
            stats.push((self.bn.clone(), m, v));
        }
        relu_inplace(&mut y);
        let cache = (mode != Mode::Eval).then(|| UnitCache { x, bn, y: y.clone() });
        (y, cache)
    }

    pub fn backward<T: Real>(
        &self,
        params: &ParamSet<T>,
        grads: &mut ParamSet<T>,
        cache: &UnitCache<T>,
        mut dy: Tensor<T>,
    ) -> Tensor<T> {
        for (d, &y) in dy.data.iter_mut().zip(&cache.y.data) {
            if y <= T::zero() {
                *d = T::zero();
            }
        }
        self.bn.backward(params, grads, &cache.bn, &mut dy);
        self.conv.backward(params, grads, &cache.x, &dy)
    }
}

/// Transposed convolution followed by batch normalisation and ReLU.
#[derive(Clone, Debug)]
pub struct UpBnRelu {
    pub up: ConvTranspose2x2,
    pub bn: BatchNorm,
}

impl UpBnRelu {
    pub fn new<T: Real, R: Rng>(
        params: &mut ParamSet<T>,
        buffers: &mut ParamSet<T>,
        rng: &mut R,
        name: &str,
        cin: usize,
        cout: usize,
    ) -> Self {
        Self {
            up: ConvTranspose2x2::new(params, rng, name, cin, cout),
            bn: BatchNorm::new(params, buffers, &format!("{name}.bn"), cout),
        }
    }

    #[allow(clippy::too_many_arguments)]
    pub fn forward<T: Real>(
        &self,
        params: &ParamSet<T>,
        buffers: &ParamSet<T>,
        x: Tensor<T>,
        oh: usize,
        ow: usize,
        mode: Mode,
        stats: &mut Vec<BnStats>,
    ) -> (Tensor<T>, Option<UnitCache<T>>) {
        let mut y = self.up.forward(params, &x, oh, ow);
        let (bn, st) = self.bn.forward(params, buffers, &mut y, mode);
        if let Some((m, v)) = st {
            stats.push((self.bn.clone(), m, v));
        }
        relu_inplace(&mut y);
        let cache = (mode != Mode::Eval).then(|| UnitCache { x, bn, y: y.clone() });
        (y, cache)
    }

    pub fn backward<T: Real>(
        &self,
        params: &ParamSet<T>,
        grads: &mut ParamSet<T>,
        cache: &UnitCache<T>,
        mut dy: Tensor<T>,
    ) -> Tensor<T> {
        for (d, &y) in dy.data.iter_mut().zip(&cache.y.data) {
            if y <= T::zero() {
                *d = T::zero();
            }
        }
        self.bn.backward(params, grads, &cache.bn, &mut dy);
        self.up.backward(params, grads, &cache.x, &dy)
    }
}

fn relu_inplace<T: Real>(t: &mut Tensor<T>) {
    for v in &mut t.data {
        if *v < T::zero() {
            *v = T::zero();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_tensor(rng: &mut ChaCha8Rng, c: usize, n: usize, h: usize, w: usize) -> Tensor<f64> {
        let mut t = Tensor::zeros(c, n, h, w);
        t.data.iter_mut().for_each(|v| *v = rng.random_range(-1.0..1.0));
        t
    }

    /// Direct (loop) convolution as an oracle for the im2col path.
    fn naive_conv(conv: &Conv2d, params: &ParamSet<f64>, x: &Tensor<f64>) -> Tensor<f64> {
        let (oh, ow) = conv.out_size(x.h, x.w);
        let mut y = Tensor::zeros(conv.cout, x.n, oh, ow);
        let w = &params.values[conv.w];
        for co in 0..conv.cout {
            for n in 0..x.n {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut s = conv.b.map_or(0.0, |b| params.values[b][co]);
                        for ci in 0..conv.cin {
                            for ky in 0..conv.k {
                                for kx in 0..conv.k {
                                    let iy = (oy * conv.stride + ky) as isize - conv.pad as isize;
                                    let ix = (ox * conv.stride + kx) as isize - conv.pad as isize;
                                    if iy >= 0 && ix >= 0 && (iy as usize) < x.h && (ix as usize) < x.w {
                                        s += w[((co * conv.cin + ci) * conv.k + ky) * conv.k + kx]
                                            * x.at(ci, n, iy as usize, ix as usize);
                                    }
                                }
                            }
                        }
                        let d = y.idx(co, n, oy, ox);
                        y.data[d] = s;
                    }
                }
            }
        }
        y
    }

    #[test]
    fn conv_matches_naive() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for (k, s, p) in [(3, 1, 1), (3, 2, 1), (5, 3, 1), (1, 1, 0)] {
            let mut params = ParamSet::default();
            let conv = Conv2d::new(&mut params, &mut rng, "c", 3, 4, k, s, p, true);
            params.values[conv.b.unwrap()].iter_mut().for_each(|v| *v = 0.3);
            let x = random_tensor(&mut rng, 3, 2, 11, 9);
            let y = conv.forward(&params, &x);
            let want = naive_conv(&conv, &params, &x);
            assert!(y.same_dims(&want));
            for (a, b) in y.data.iter().zip(&want.data) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    /// `<dy, f(x)>` is linear in x, so the input gradient must reproduce it.
    #[test]
    fn conv_backward_is_adjoint() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for (k, s, p) in [(3, 1, 1), (3, 2, 1), (5, 3, 1), (1, 1, 0)] {
            let mut params = ParamSet::default();
            let conv = Conv2d::new(&mut params, &mut rng, "c", 2, 3, k, s, p, false);
            let x = random_tensor(&mut rng, 2, 2, 10, 7);
            let y = conv.forward(&params, &x);
            let dy = random_tensor(&mut rng, y.c, y.n, y.h, y.w);
            let mut grads = params.zeros_like();
            let dx = conv.backward(&params, &mut grads, &x, &dy);
            let lhs: f64 = dy.data.iter().zip(&y.data).map(|(a, b)| a * b).sum();
            let rhs: f64 = dx.data.iter().zip(&x.data).map(|(a, b)| a * b).sum();
            assert!((lhs - rhs).abs() < 1e-10);
            // and linear in w as well
            let gw: f64 = grads.values[conv.w].iter().zip(&params.values[conv.w]).map(|(a, b)| a * b).sum();
            assert!((lhs - gw).abs() < 1e-10);
        }
    }

    #[test]
    fn transposed_conv_adjoint_and_crop() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut params = ParamSet::default();
        let up = ConvTranspose2x2::new(&mut params, &mut rng, "u", 3, 2);
        let x = random_tensor(&mut rng, 3, 2, 4, 5);
        for (oh, ow) in [(8, 10), (7, 9)] {
            let y = up.forward(&params, &x, oh, ow);
            assert_eq!((y.h, y.w), (oh, ow));
            let dy = random_tensor(&mut rng, y.c, y.n, y.h, y.w);
            let mut grads = params.zeros_like();
            let dx = up.backward(&params, &mut grads, &x, &dy);
            let lhs: f64 = dy.data.iter().zip(&y.data).map(|(a, b)| a * b).sum();
            let rhs: f64 = dx.data.iter().zip(&x.data).map(|(a, b)| a * b).sum();
            assert!((lhs - rhs).abs() < 1e-10);
            let gw: f64 = grads.values[up.w].iter().zip(&params.values[up.w]).map(|(a, b)| a * b).sum();
            assert!((lhs - gw).abs() < 1e-10);
        }
        // each output pixel has exactly one source pixel
        let y = up.forward(&params, &x, 8, 10);
        let w = &params.values[up.w];
        let want = (0..3).map(|ci| w[((ci * 2 + 1) * 2 + 1) * 2] * x.at(ci, 1, 2, 3)).sum::<f64>();
        assert!((y.at(1, 1, 5, 6) - want).abs() < 1e-12);
    }

    #[test]
    fn batchnorm_train_normalises() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut params = ParamSet::default();
        let mut buffers = ParamSet::default();
        let bn = BatchNorm::new(&mut params, &mut buffers, "bn", 2);
        let mut x = random_tensor(&mut rng, 2, 3, 4, 4);
        x.data.iter_mut().for_each(|v| *v = *v * 3.0 + 1.0);
        let (_, stats) = bn.forward(&params, &buffers, &mut x, Mode::Train);
        for ch in 0..2 {
            let seg = x.channel(ch);
            let m: f64 = seg.iter().sum::<f64>() / seg.len() as f64;
            let v: f64 = seg.iter().map(|a| (a - m).powi(2)).sum::<f64>() / seg.len() as f64;
            assert!(m.abs() < 1e-12);
            assert!((v - 1.0).abs() < 1e-3);
        }
        let (mean, var) = stats.unwrap();
        bn.update_running(&mut buffers, &mean, &var);
        assert!((buffers.values[bn.mean][0] - 0.1 * mean[0]).abs() < 1e-12);
    }

    /// Finite-difference check of the batch-statistics backward pass.
    #[test]
    fn batchnorm_train_backward() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut params = ParamSet::default();
        let mut buffers = ParamSet::default();
        let bn = BatchNorm::new(&mut params, &mut buffers, "bn", 2);
        params.values[bn.gamma] = vec![1.5, 0.7];
        params.values[bn.beta] = vec![0.2, -0.1];
        let x = random_tensor(&mut rng, 2, 2, 3, 3);
        let g = random_tensor(&mut rng, 2, 2, 3, 3);
        let f = |x: &Tensor<f64>| {
            let mut y = x.clone();
            bn.forward(&params, &buffers, &mut y, Mode::Train);
            y.data.iter().zip(&g.data).map(|(a, b)| a * b).sum::<f64>()
        };
        let mut y = x.clone();
        let (cache, _) = bn.forward(&params, &buffers, &mut y, Mode::Train);
        let mut dx = g.clone();
        let mut grads = params.zeros_like();
        bn.backward(&params, &mut grads, &cache, &mut dx);
        let eps = 1e-6;
        for i in 0..x.data.len() {
            let mut xp = x.clone();
            xp.data[i] += eps;
            let mut xm = x.clone();
            xm.data[i] -= eps;
            let fd = (f(&xp) - f(&xm)) / (2.0 * eps);
            assert!((fd - dx.data[i]).abs() < 1e-6, "{i}: {fd} vs {}", dx.data[i]);
        }
    }
}
