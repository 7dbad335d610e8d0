//! Flat key → tensor archive.
//!
//! Layout (little-endian): magic `TFRCKPT1`, `u32` version, `u32` entry
//! count, then per entry `u32` key length, UTF-8 key, `u32` rank, rank × `u64`
//! dims and the values as `f32`.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use super::optim::AdamW;
use super::param::{scoped, Module};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"TFRCKPT1";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Checkpoint {
    entries: BTreeMap<String, (Vec<usize>, Vec<f32>)>,
}

impl Checkpoint {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, key: impl Into<String>, shape: Vec<usize>, values: &[f64]) {
        self.entries.insert(key.into(), (shape, values.iter().map(|&v| v as f32).collect()));
    }

    pub fn get(&self, key: &str) -> Option<(&[usize], &[f32])> {
        self.entries.get(key).map(|(s, v)| (s.as_slice(), v.as_slice()))
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Store every parameter of `module` under `prefix`.
    pub fn add_module(&mut self, prefix: &str, module: &dyn Module) {
        module.visit_params(&mut |name, p| {
            self.insert(scoped(prefix, name), p.shape().to_vec(), &p.value);
        });
    }

    /// Overwrite the parameters of `module` from entries under `prefix`.
    pub fn load_module(&self, prefix: &str, module: &mut dyn Module) -> Result<()> {
        let mut failure = None;
        module.visit_params_mut(&mut |name, p| {
            if failure.is_some() {
                return;
            }
            let key = scoped(prefix, name);
            match self.entries.get(&key) {
                Some((shape, values)) if shape.as_slice() == p.shape() => {
                    for (d, s) in p.value.iter_mut().zip(values) {
                        *d = f64::from(*s);
                    }
                }
                Some((shape, _)) => {
                    failure =
                        Some(Error::shape(format!("{key}: checkpoint shape {shape:?} does not match {:?}", p.shape())))
                }
                None => failure = Some(Error::Format(format!("checkpoint lacks {key}"))),
            }
        });
        failure.map_or(Ok(()), Err)
    }

    pub fn add_optimizer(&mut self, prefix: &str, opt: &AdamW) {
        let (step, lr, m, v) = opt.state();
        self.insert(scoped(prefix, "step"), vec![1], &[step as f64]);
        self.insert(scoped(prefix, "lr"), vec![1], &[lr]);
        for (i, (a, b)) in m.iter().zip(v).enumerate() {
            self.insert(scoped(prefix, &format!("m.{i}")), vec![a.len()], a);
            self.insert(scoped(prefix, &format!("v.{i}")), vec![b.len()], b);
        }
    }

    pub fn load_optimizer(&self, prefix: &str, opt: &mut AdamW) -> Result<()> {
        let scalar = |name: &str| -> Result<f64> {
            let key = scoped(prefix, name);
            self.get(&key)
                .and_then(|(_, v)| v.first())
                .map(|v| f64::from(*v))
                .ok_or_else(|| Error::Format(format!("checkpoint lacks {key}")))
        };
        let step = scalar("step")? as u64;
        let lr = scalar("lr")?;
        let (mut m, mut v) = (Vec::new(), Vec::new());
        for i in 0.. {
            match (self.get(&scoped(prefix, &format!("m.{i}"))), self.get(&scoped(prefix, &format!("v.{i}")))) {
                (Some((_, a)), Some((_, b))) => {
                    m.push(a.iter().map(|x| f64::from(*x)).collect());
                    v.push(b.iter().map(|x| f64::from(*x)).collect());
                }
                _ => break,
            }
        }
        opt.restore(step, lr, m, v)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        for (key, (shape, values)) in &self.entries {
            out.extend_from_slice(&(key.len() as u32).to_le_bytes());
            out.extend_from_slice(key.as_bytes());
            out.extend_from_slice(&(shape.len() as u32).to_le_bytes());
            for d in shape {
                out.extend_from_slice(&(*d as u64).to_le_bytes());
            }
            for v in values {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Cursor { bytes, pos: 0 };
        if r.take(8)? != CHECKPOINT_MAGIC {
            return Err(Error::Format("not a checkpoint (bad magic)".into()));
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Unsupported(format!("checkpoint version {version}")));
        }
        let count = r.u32()?;
        let mut entries = BTreeMap::new();
        for _ in 0..count {
            let len = r.u32()? as usize;
            let key = String::from_utf8(r.take(len)?.to_vec())
                .map_err(|_| Error::Format("checkpoint key is not UTF-8".into()))?;
            let rank = r.u32()? as usize;
            let shape: Vec<usize> = (0..rank).map(|_| r.u64().map(|d| d as usize)).collect::<Result<_>>()?;
            let n = shape
                .iter()
                .try_fold(1usize, |acc, d| acc.checked_mul(*d))
                .ok_or_else(|| Error::Format(format!("{key}: shape overflows")))?;
            let raw = r.take(n.checked_mul(4).ok_or_else(|| Error::Format("entry too large".into()))?)?;
            let values = raw.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
            entries.insert(key, (shape, values));
        }
        if r.pos != bytes.len() {
            return Err(Error::Format("trailing bytes after checkpoint".into()));
        }
        Ok(Self { entries })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|e| *e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Format("checkpoint is truncated".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn u64(&mut self) -> Result<u64> {
        let b = self.take(8)?;
        let mut a = [0u8; 8];
        a.copy_from_slice(b);
        Ok(u64::from_le_bytes(a))
    }
}
