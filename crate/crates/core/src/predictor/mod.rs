//! The UNet-style predictor: a strided stem, three residual downsampling
//! blocks, three transposed-convolution decoders with lateral connections,
//! coordinate channels, a pointwise trunk and three pointwise heads
//! (interaction score, force logits, embedding).
//!
//! Block layout (input `c_in`, output `c_out`):
//!
//! ```text
//! u -> 3x3 c_in->c_out -> 1x1 c_out->c_in -> (+ u) -> 3x3/2 c_in->c_out
//! ```
//!
//! so the residual joins the block input with the input of its last
//! convolution, and that last convolution carries the stride.
//!
//! Reverse mode takes *ascent* directions on the three outputs and returns
//! descent gradients for the optimizer, i.e. `J^T (-g)`.

mod adam;
pub mod checkpoint;
mod layers;
mod tensor;

pub use adam::{Adam, AdamConfig};
pub use layers::{BatchNorm, Conv2d, ConvBnRelu, ConvTranspose2x2, Mode, ParamSet, UpBnRelu, BN_EPS, BN_MOMENTUM};
pub use tensor::{gemm, Mat, Real, Tensor};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::{DepthMap, Grid, Image3};
use layers::{BnStats, UnitCache};

/// Depth is divided by this before entering the network.
pub const DEPTH_SCALE_M: f32 = 5.0;
pub const INPUT_CHANNELS: usize = 4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub input_res: usize,
    pub output_res: usize,
    pub stem: usize,
    pub blocks: [usize; 3],
    /// Channels of the last decoder.
    pub decoder_out: usize,
    pub trunk: usize,
    pub embed_dim: usize,
    pub force_classes: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            input_res: 300,
            output_res: 100,
            stem: 32,
            blocks: [64, 128, 256],
            decoder_out: 64,
            trunk: 128,
            embed_dim: 16,
            force_classes: 3,
        }
    }
}

impl ModelConfig {
    /// Reduced network for single-machine experiments.
    pub fn desk() -> Self {
        Self {
            input_res: 96,
            output_res: 32,
            stem: 16,
            blocks: [32, 64, 128],
            decoder_out: 32,
            trunk: 64,
            embed_dim: 16,
            force_classes: 3,
        }
    }

    /// Small enough for finite-difference checks.
    pub fn tiny() -> Self {
        Self {
            input_res: 30,
            output_res: 10,
            stem: 4,
            blocks: [6, 8, 8],
            decoder_out: 5,
            trunk: 6,
            embed_dim: 16,
            force_classes: 3,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_res != 3 * self.output_res {
            return Err(Error::Config(format!(
                "input resolution {} must be 3x output resolution {}",
                self.input_res, self.output_res
            )));
        }
        if self.force_classes != 3 {
            return Err(Error::Config("force classes must be 3".into()));
        }
        if self.output_res < 4 || self.embed_dim == 0 {
            return Err(Error::Config("output resolution or embedding dim too small".into()));
        }
        Ok(())
    }

    pub fn head_channels(&self) -> usize {
        1 + self.force_classes + self.embed_dim
    }

    /// Stable text echo, embedded in checkpoints.
    pub fn to_text(&self) -> String {
        format!(
            "input_res={} output_res={} stem={} blocks={},{},{} decoder_out={} trunk={} embed_dim={} force_classes={}",
            self.input_res,
            self.output_res,
            self.stem,
            self.blocks[0],
            self.blocks[1],
            self.blocks[2],
            self.decoder_out,
            self.trunk,
            self.embed_dim,
            self.force_classes
        )
    }

    /// Set one field by its text-echo name, without validating.
    pub fn set_field(&mut self, k: &str, v: &str) -> Result<()> {
        let bad = || Error::Config(format!("bad model config field {k}={v}"));
        let num = |v: &str| v.parse::<usize>().map_err(|_| bad());
        match k {
            "input_res" => self.input_res = num(v)?,
            "output_res" => self.output_res = num(v)?,
            "stem" => self.stem = num(v)?,
            "blocks" => {
                let parts: Vec<usize> = v.split(',').map(num).collect::<Result<_>>()?;
                if parts.len() != 3 {
                    return Err(bad());
                }
                self.blocks = [parts[0], parts[1], parts[2]];
            }
            "decoder_out" => self.decoder_out = num(v)?,
            "trunk" => self.trunk = num(v)?,
            "embed_dim" => self.embed_dim = num(v)?,
            "force_classes" => self.force_classes = num(v)?,
            _ => return Err(bad()),
        }
        Ok(())
    }

    pub fn from_text(s: &str) -> Result<Self> {
        let mut c = ModelConfig::default();
        for tok in s.split_whitespace() {
            let (k, v) = tok
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("bad model config field {tok}")))?;
            c.set_field(k, v)?;
        }
        c.validate()?;
        Ok(c)
    }
}

/// Per-image head outputs (or gradients with respect to them), in f64.
#[derive(Clone, Debug, PartialEq)]
pub struct HeadMaps {
    pub s: Grid,
    pub m: Vec<Grid>,
    pub e: Vec<Grid>,
}

impl HeadMaps {
    pub fn zeros(res: usize, force_classes: usize, embed_dim: usize) -> Self {
        Self {
            s: Grid::zeros(res, res),
            m: vec![Grid::zeros(res, res); force_classes],
            e: vec![Grid::zeros(res, res); embed_dim],
        }
    }

    pub fn res(&self) -> usize {
        self.s.height
    }

    /// Embedding vector at a cell.
    pub fn embedding(&self, row: usize, col: usize) -> Vec<f64> {
        self.e.iter().map(|g| g.get(row, col)).collect()
    }

    /// Arg-max force class at a cell (first maximum on ties).
    pub fn force_class(&self, row: usize, col: usize) -> usize {
        let mut best = 0;
        for k in 1..self.m.len() {
            if self.m[k].get(row, col) > self.m[best].get(row, col) {
                best = k;
            }
        }
        best
    }

    pub fn is_finite(&self) -> bool {
        self.s.data.iter().chain(self.m.iter().flat_map(|g| &g.data)).chain(self.e.iter().flat_map(|g| &g.data)).all(|v| v.is_finite())
    }
}

/// Batched head outputs, `(C, N, H, W)`.
#[derive(Clone, Debug, PartialEq)]
pub struct ForwardOut<T> {
    pub s: Tensor<T>,
    pub m: Tensor<T>,
    pub e: Tensor<T>,
}

fn plane_to_grid<T: Real>(t: &Tensor<T>, c: usize, n: usize) -> Grid {
    let hw = t.h * t.w;
    let start = t.idx(c, n, 0, 0);
    Grid {
        height: t.h,
        width: t.w,
        data: t.data[start..start + hw].iter().map(|v| v.to_f64().unwrap()).collect(),
    }
}

impl<T: Real> ForwardOut<T> {
    pub fn batch(&self) -> usize {
        self.s.n
    }

    pub fn maps(&self, n: usize) -> HeadMaps {
        HeadMaps {
            s: plane_to_grid(&self.s, 0, n),
            m: (0..self.m.c).map(|c| plane_to_grid(&self.m, c, n)).collect(),
            e: (0..self.e.c).map(|c| plane_to_grid(&self.e, c, n)).collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.s.is_finite() && self.m.is_finite() && self.e.is_finite()
    }
}

/// Stack images into a network input: RGB in `[0,1]` and depth / 5 m.
pub fn make_input<T: Real>(frames: &[(&Image3, &DepthMap)]) -> Result<Tensor<T>> {
    let (h, w) = (frames[0].0.height, frames[0].0.width);
    let n = frames.len();
    let mut t = Tensor::zeros(INPUT_CHANNELS, n, h, w);
    for (b, (rgb, depth)) in frames.iter().enumerate() {
        if rgb.height != h || rgb.width != w || depth.height != h || depth.width != w {
            return Err(Error::Shape(format!(
                "frame {b}: rgb {}x{}, depth {}x{}, expected {h}x{w}",
                rgb.height, rgb.width, depth.height, depth.width
            )));
        }
        for y in 0..h {
            for x in 0..w {
                let px = rgb.get(y, x);
                for (c, &v) in px.iter().enumerate() {
                    let i = t.idx(c, b, y, x);
                    t.data[i] = T::lit(v as f64);
                }
                let i = t.idx(3, b, y, x);
                t.data[i] = T::lit((depth.data[y * w + x] / DEPTH_SCALE_M) as f64);
            }
        }
    }
    Ok(t)
}

#[derive(Clone, Debug)]
struct Block {
    a: ConvBnRelu,
    b: ConvBnRelu,
    c: ConvBnRelu,
}

#[derive(Clone, Debug)]
pub struct Model<T> {
    pub config: ModelConfig,
    pub params: ParamSet<T>,
    /// Batch-norm running statistics.
    pub buffers: ParamSet<T>,
    stem: ConvBnRelu,
    blocks: Vec<Block>,
    ups: Vec<UpBnRelu>,
    fuse: Vec<ConvBnRelu>,
    trunk: ConvBnRelu,
    head: Conv2d,
}

/// Activations retained by a forward pass for the reverse pass.
pub struct Tape<T> {
    n: usize,
    stem: UnitCache<T>,
    blocks: Vec<[UnitCache<T>; 3]>,
    ups: Vec<UnitCache<T>>,
    fuse: Vec<UnitCache<T>>,
    trunk: UnitCache<T>,
    head_in: Tensor<T>,
}

impl<T> Tape<T> {
    pub fn batch(&self) -> usize {
        self.n
    }
}

/// Output of the reverse pass.
pub struct Gradients<T> {
    /// Descent gradients, laid out like [`Model::params`].
    pub params: ParamSet<T>,
    /// Gradient of `-<g, outputs>` with respect to the network input.
    pub input: Tensor<T>,
}

impl<T: Real> Model<T> {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = ParamSet::default();
        let mut bufs = ParamSet::default();
        let stem = ConvBnRelu::new(&mut p, &mut bufs, &mut rng, "stem", INPUT_CHANNELS, config.stem, 5, 3, 1);
        let mut chans = vec![config.stem];
        chans.extend_from_slice(&config.blocks);
        let mut blocks = Vec::new();
        for i in 0..3 {
            let (cin, cout) = (chans[i], chans[i + 1]);
            blocks.push(Block {
                a: ConvBnRelu::new(&mut p, &mut bufs, &mut rng, &format!("enc{i}.a"), cin, cout, 3, 1, 1),
                b: ConvBnRelu::new(&mut p, &mut bufs, &mut rng, &format!("enc{i}.b"), cout, cin, 1, 1, 0),
                c: ConvBnRelu::new(&mut p, &mut bufs, &mut rng, &format!("enc{i}.c"), cin, cout, 3, 2, 1),
            });
        }
        let mut ups = Vec::new();
        let mut fuse = Vec::new();
        for i in 0..3 {
            let (cin, cout) = (chans[i], chans[i + 1]);
            let out = if i == 0 { config.decoder_out } else { cin };
            ups.push(UpBnRelu::new(&mut p, &mut bufs, &mut rng, &format!("up{i}"), cout, cin));
            fuse.push(ConvBnRelu::new(&mut p, &mut bufs, &mut rng, &format!("fuse{i}"), 2 * cin, out, 3, 1, 1));
        }
        let trunk = ConvBnRelu::new(&mut p, &mut bufs, &mut rng, "trunk", config.decoder_out + 2, config.trunk, 1, 1, 0);
        let head = Conv2d::new(&mut p, &mut rng, "head", config.trunk, config.head_channels(), 1, 1, 0, true);
        Ok(Self {
            config,
            params: p,
            buffers: bufs,
            stem,
            blocks,
            ups,
            fuse,
            trunk,
            head,
        })
    }

    pub fn param_count(&self) -> usize {
        self.params.scalar_count()
    }

    /// Same architecture and values in another scalar type.
    pub fn cast<U: Real>(&self) -> Model<U> {
        Model {
            config: self.config.clone(),
            params: self.params.cast(),
            buffers: self.buffers.cast(),
            stem: self.stem.clone(),
            blocks: self.blocks.clone(),
            ups: self.ups.clone(),
            fuse: self.fuse.clone(),
            trunk: self.trunk.clone(),
            head: self.head.clone(),
        }
    }

    fn coords(&self, n: usize, h: usize, w: usize) -> Tensor<T> {
        let mut t = Tensor::zeros(2, n, h, w);
        let lin = |i: usize, len: usize| if len > 1 { -1.0 + 2.0 * i as f64 / (len - 1) as f64 } else { 0.0 };
        for b in 0..n {
            for y in 0..h {
                for x in 0..w {
                    let i0 = t.idx(0, b, y, x);
                    t.data[i0] = T::lit(lin(x, w));
                    let i1 = t.idx(1, b, y, x);
                    t.data[i1] = T::lit(lin(y, h));
                }
            }
        }
        t
    }

    fn run(&self, x: &Tensor<T>, mode: Mode, stats: &mut Vec<BnStats>) -> Result<(ForwardOut<T>, Option<Tape<T>>)> {
        let cfg = &self.config;
        if x.c != INPUT_CHANNELS || x.h != cfg.input_res || x.w != cfg.input_res {
            return Err(Error::Shape(format!(
                "input {}x{}x{} does not match {}x{res}x{res}",
                x.c,
                x.h,
                x.w,
                INPUT_CHANNELS,
                res = cfg.input_res
            )));
        }
        let (p, b) = (&self.params, &self.buffers);
        let keep = mode != Mode::Eval;
        let (u0, stem_c) = self.stem.forward(p, b, x.clone(), mode, stats);
        let mut skips = vec![u0];
        let mut block_c = Vec::new();
        for blk in &self.blocks {
            let u = skips.last().unwrap().clone();
            let (a, ca) = blk.a.forward(p, b, u.clone(), mode, stats);
            let (mut r, cb) = blk.b.forward(p, b, a, mode, stats);
            for (rv, &uv) in r.data.iter_mut().zip(&u.data) {
                *rv += uv;
            }
            let (y, cc) = blk.c.forward(p, b, r, mode, stats);
            skips.push(y);
            if keep {
                block_c.push([ca.unwrap(), cb.unwrap(), cc.unwrap()]);
            }
        }
        let mut d = skips.pop().unwrap();
        let mut up_c = Vec::new();
        let mut fuse_c = Vec::new();
        for i in (0..3).rev() {
            let skip = &skips[i];
            let (t, cu) = self.ups[i].forward(p, b, d, skip.h, skip.w, mode, stats);
            let cat = Tensor::concat(&[&t, skip]);
            let (next, cf) = self.fuse[i].forward(p, b, cat, mode, stats);
            d = next;
            if keep {
                up_c.push(cu.unwrap());
                fuse_c.push(cf.unwrap());
            }
        }
        if d.h != cfg.output_res {
            return Err(Error::Shape(format!("decoder produced {}x{}", d.h, d.w)));
        }
        let z = Tensor::concat(&[&d, &self.coords(d.n, d.h, d.w)]);
        let (h, trunk_c) = self.trunk.forward(p, b, z, mode, stats);
        let out = self.head.forward(p, &h);
        let parts = out.split(&[1, cfg.force_classes, cfg.embed_dim]);
        let mut it = parts.into_iter();
        let fwd = ForwardOut {
            s: it.next().unwrap(),
            m: it.next().unwrap(),
            e: it.next().unwrap(),
        };
        let tape = keep.then(|| {
            // decoders were pushed in reverse level order
            up_c.reverse();
            fuse_c.reverse();
            Tape {
                n: x.n,
                stem: stem_c.unwrap(),
                blocks: block_c,
                ups: up_c,
                fuse: fuse_c,
                trunk: trunk_c.unwrap(),
                head_in: h,
            }
        });
        Ok((fwd, tape))
    }

    /// Running statistics, no retained activations. Pure in `(params, x)`.
    pub fn forward_eval(&self, x: &Tensor<T>) -> Result<ForwardOut<T>> {
        Ok(self.run(x, Mode::Eval, &mut Vec::new())?.0)
    }

    /// Batch statistics; updates the running statistics and keeps a tape.
    pub fn forward_train(&mut self, x: &Tensor<T>) -> Result<(ForwardOut<T>, Tape<T>)> {
        let mut stats = Vec::new();
        let (out, tape) = self.run(x, Mode::Train, &mut stats)?;
        for (bn, m, v) in &stats {
            bn.update_running(&mut self.buffers, m, v);
        }
        Ok((out, tape.unwrap()))
    }

    /// Running statistics with a tape.
    pub fn forward_frozen(&self, x: &Tensor<T>) -> Result<(ForwardOut<T>, Tape<T>)> {
        let (out, tape) = self.run(x, Mode::Frozen, &mut Vec::new())?;
        Ok((out, tape.unwrap()))
    }

    /// Reverse pass from ascent directions `g` (one [`HeadMaps`] per image).
    pub fn backward(&self, tape: &Tape<T>, g: &[HeadMaps]) -> Result<Gradients<T>> {
        let cfg = &self.config;
        if g.len() != tape.n {
            return Err(Error::Shape(format!("{} gradient maps for batch of {}", g.len(), tape.n)));
        }
        let res = cfg.output_res;
        let hc = cfg.head_channels();
        let mut dout = Tensor::zeros(hc, tape.n, res, res);
        for (n, gm) in g.iter().enumerate() {
            if gm.res() != res || gm.m.len() != cfg.force_classes || gm.e.len() != cfg.embed_dim {
                return Err(Error::Shape(format!("gradient maps for image {n} have wrong shape")));
            }
            let planes = std::iter::once(&gm.s).chain(&gm.m).chain(&gm.e);
            for (c, grid) in planes.enumerate() {
                let start = dout.idx(c, n, 0, 0);
                for (d, &v) in dout.data[start..start + res * res].iter_mut().zip(&grid.data) {
                    *d = T::lit(-v);
                }
            }
        }
        let p = &self.params;
        let mut grads = p.zeros_like();
        let dh = self.head.backward(p, &mut grads, &tape.head_in, &dout);
        let dz = self.trunk.backward(p, &mut grads, &tape.trunk, dh);
        let mut dd = dz.split(&[cfg.decoder_out, 2]).swap_remove(0);
        let mut dskips: Vec<Option<Tensor<T>>> = vec![None; 3];
        for i in 0..3 {
            let dcat = self.fuse[i].backward(p, &mut grads, &tape.fuse[i], dd);
            let cin = self.ups[i].up.cout;
            let mut parts = dcat.split(&[cin, cin]);
            dskips[i] = parts.pop();
            let dt = parts.pop().unwrap();
            dd = self.ups[i].backward(p, &mut grads, &tape.ups[i], dt);
        }
        // dd is now the gradient at the deepest block output
        for i in (0..3).rev() {
            let blk = &self.blocks[i];
            let caches = &tape.blocks[i];
            let dr = blk.c.backward(p, &mut grads, &caches[2], dd);
            let da = blk.b.backward(p, &mut grads, &caches[1], dr.clone());
            let mut du = blk.a.backward(p, &mut grads, &caches[0], da);
            let dskip = dskips[i].take().unwrap();
            for ((v, &r), &s) in du.data.iter_mut().zip(&dr.data).zip(&dskip.data) {
                *v += r + s;
            }
            dd = du;
        }
        let input = self.stem.backward(p, &mut grads, &tape.stem, dd);
        Ok(Gradients { params: grads, input })
    }

    /// Eval-mode forward of one RGB+D frame, returned as f64 maps.
    pub fn predict(&self, rgb: &Image3, depth: &DepthMap) -> Result<HeadMaps> {
        let x = make_input::<T>(&[(rgb, depth)])?;
        Ok(self.forward_eval(&x)?.maps(0))
    }
}

#[cfg(test)]
mod tests;
