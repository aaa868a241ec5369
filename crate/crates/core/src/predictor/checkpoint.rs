//! Binary checkpoint format, all integers little-endian:
//!
//! ```text
//! magic   "SSIA"
//! u32     format version (1)
//! u32     length of the model config echo, then that many UTF-8 bytes
//! u64     training step counter
//! u64     optimizer step counter (0 when no optimizer state is stored)
//! f64 x5  optimizer lr, weight_decay, beta1, beta2, eps
//! u32     tensor count
//! per tensor:
//!   u32   name length, then the UTF-8 name
//!   u32   rank, then rank x u32 dimensions
//!   f32   values (product of the dimensions)
//! ```
//!
//! Tensor names carry a prefix: `param/`, `buffer/` (batch-norm running
//! statistics), `adam_m/` and `adam_v/`.

use std::path::Path;

use super::adam::{Adam, AdamConfig};
use super::layers::ParamSet;
use super::{Model, ModelConfig};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"SSIA";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub model: Model<f32>,
    pub adam: Option<Adam<f32>>,
    pub step: u64,
}

fn put_set(out: &mut Vec<u8>, prefix: &str, set: &ParamSet<f32>) {
    for ((name, shape), vals) in set.names.iter().zip(&set.shapes).zip(&set.values) {
        let full = format!("{prefix}/{name}");
        out.extend_from_slice(&(full.len() as u32).to_le_bytes());
        out.extend_from_slice(full.as_bytes());
        out.extend_from_slice(&(shape.len() as u32).to_le_bytes());
        for &d in shape {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in vals {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
}

pub fn to_bytes(model: &Model<f32>, adam: Option<&Adam<f32>>, step: u64) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    let cfg = model.config.to_text();
    out.extend_from_slice(&(cfg.len() as u32).to_le_bytes());
    out.extend_from_slice(cfg.as_bytes());
    out.extend_from_slice(&step.to_le_bytes());
    out.extend_from_slice(&adam.map_or(0, |a| a.t).to_le_bytes());
    let ac = adam.map_or(AdamConfig::default(), |a| a.config);
    for v in [ac.lr, ac.weight_decay, ac.beta1, ac.beta2, ac.eps] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    let count = model.params.len() + model.buffers.len() + adam.map_or(0, |a| a.m.len() + a.v.len());
    out.extend_from_slice(&(count as u32).to_le_bytes());
    put_set(&mut out, "param", &model.params);
    put_set(&mut out, "buffer", &model.buffers);
    if let Some(a) = adam {
        put_set(&mut out, "adam_m", &a.m);
        put_set(&mut out, "adam_v", &a.v);
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::CheckpointTruncated(format!("while reading {what} at byte {}", self.pos)));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn f64(&mut self, what: &str) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn string(&mut self, what: &str) -> Result<String> {
        let n = self.u32(what)? as usize;
        let bytes = self.take(n, what)?;
        String::from_utf8(bytes.to_vec()).map_err(|_| Error::CheckpointTruncated(format!("{what} is not UTF-8")))
    }
}

pub fn from_bytes(buf: &[u8], path: &Path) -> Result<Checkpoint> {
    let mut r = Reader { buf, pos: 0 };
    if r.take(4, "magic")? != MAGIC {
        return Err(Error::malformed(path, "not a checkpoint (bad magic)"));
    }
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(Error::CheckpointVersion {
            found: version,
            expected: VERSION,
        });
    }
    let cfg_text = r.string("config")?;
    let config = ModelConfig::from_text(&cfg_text)?;
    let step = r.u64("step")?;
    let adam_t = r.u64("optimizer step")?;
    let mut ac = [0.0f64; 5];
    for v in &mut ac {
        *v = r.f64("optimizer config")?;
    }
    let mut model = Model::<f32>::new(config, 0)?;
    let mut adam = Adam::new(
        AdamConfig {
            lr: ac[0],
            weight_decay: ac[1],
            beta1: ac[2],
            beta2: ac[3],
            eps: ac[4],
        },
        &model.params,
    );
    adam.t = adam_t;
    let count = r.u32("tensor count")? as usize;
    let mut seen_adam = false;
    let expected = model.params.len() + model.buffers.len();
    let mut filled = 0usize;
    for _ in 0..count {
        let name = r.string("tensor name")?;
        let rank = r.u32("rank")? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u32("dimension")? as usize);
        }
        let n: usize = shape.iter().product();
        let raw = r.take(n * 4, &name)?;
        let vals: Vec<f32> = raw.chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().unwrap())).collect();
        let (prefix, rest) = name
            .split_once('/')
            .ok_or_else(|| Error::malformed(path, format!("tensor name {name:?} has no prefix")))?;
        let set = match prefix {
            "param" => &mut model.params,
            "buffer" => &mut model.buffers,
            "adam_m" => {
                seen_adam = true;
                &mut adam.m
            }
            "adam_v" => {
                seen_adam = true;
                &mut adam.v
            }
            _ => return Err(Error::malformed(path, format!("unknown tensor prefix {prefix:?}"))),
        };
        let idx = set
            .index_of(rest)
            .ok_or_else(|| Error::malformed(path, format!("unexpected tensor {name:?}")))?;
        if set.shapes[idx] != shape {
            return Err(Error::malformed(
                path,
                format!("tensor {name:?} has shape {shape:?}, expected {:?}", set.shapes[idx]),
            ));
        }
        set.values[idx] = vals;
        if prefix == "param" || prefix == "buffer" {
            filled += 1;
        }
    }
    if filled != expected {
        return Err(Error::malformed(path, format!("{filled} of {expected} model tensors present")));
    }
    if r.pos != buf.len() {
        return Err(Error::malformed(path, "trailing bytes"));
    }
    Ok(Checkpoint {
        model,
        adam: seen_adam.then_some(adam),
        step,
    })
}

pub fn save(path: &Path, model: &Model<f32>, adam: Option<&Adam<f32>>, step: u64) -> Result<()> {
    std::fs::write(path, to_bytes(model, adam, step)).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes, path)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fixture() -> (Model<f32>, Adam<f32>) {
        let model = Model::<f32>::new(ModelConfig::tiny(), 3).unwrap();
        let mut adam = Adam::new(AdamConfig::default(), &model.params);
        let mut p = model.params.clone();
        let mut g = model.params.zeros_like();
        g.values.iter_mut().enumerate().for_each(|(k, v)| v.iter_mut().for_each(|x| *x = 0.01 * k as f32));
        adam.step(&mut p, &g);
        let model = Model { params: p, ..model };
        (model, adam)
    }

    #[test]
    fn roundtrip_is_bit_identical() {
        let (model, adam) = fixture();
        let bytes = to_bytes(&model, Some(&adam), 17);
        let ck = from_bytes(&bytes, Path::new("mem")).unwrap();
        assert_eq!(ck.step, 17);
        assert_eq!(ck.model.config, model.config);
        assert_eq!(ck.model.params, model.params);
        assert_eq!(ck.model.buffers, model.buffers);
        assert_eq!(ck.adam.as_ref(), Some(&adam));
        assert_eq!(to_bytes(&ck.model, ck.adam.as_ref(), ck.step), bytes);

        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.ckpt");
        save(&p, &model, None, 2).unwrap();
        let ck = load(&p).unwrap();
        assert!(ck.adam.is_none());
        assert_eq!(ck.model.params, model.params);
    }

    #[test]
    fn version_mismatch_is_reported() {
        let (model, _) = fixture();
        let mut bytes = to_bytes(&model, None, 0);
        bytes[4..8].copy_from_slice(&2u32.to_le_bytes());
        assert!(matches!(
            from_bytes(&bytes, Path::new("m")),
            Err(Error::CheckpointVersion { found: 2, expected: 1 })
        ));
    }

    #[test]
    fn truncation_is_reported() {
        let (model, adam) = fixture();
        let bytes = to_bytes(&model, Some(&adam), 0);
        for cut in [3, 10, 40, bytes.len() / 2, bytes.len() - 1] {
            let r = from_bytes(&bytes[..cut], Path::new("m"));
            assert!(
                matches!(r, Err(Error::CheckpointTruncated(_)) | Err(Error::Malformed { .. })),
                "cut {cut}"
            );
        }
        assert!(matches!(from_bytes(&bytes[..bytes.len() - 1], Path::new("m")), Err(Error::CheckpointTruncated(_))));
    }

    #[test]
    fn bad_magic() {
        assert!(matches!(from_bytes(b"NOPE0000", Path::new("m")), Err(Error::Malformed { .. })));
    }
}
