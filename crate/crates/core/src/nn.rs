//! Parameter storage, weight initialization, optimizers, and the checkpoint
//! file format.
//!
//! Parameters live in a flat name → tensor map. The checkpoint format mirrors
//! that map directly: a small binary archive of named f64 tensors (see
//! [`ParamStore::save`]), documented in the README.

use crate::graph::{Arr, Grads};
use crate::{Error, Result};
use indexmap::IndexMap;
use ndarray::IxDyn;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

#[derive(Clone, Default)]
pub struct ParamStore {
    map: IndexMap<String, Arr>,
}

const CKPT_MAGIC: &[u8; 4] = b"RGBT";
const CKPT_VERSION: u32 = 1;

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Arr) {
        let name = name.into();
        assert!(
            !self.map.contains_key(&name),
            "parameter `{name}` registered twice"
        );
        self.map.insert(name, value);
    }

    pub fn get(&self, name: &str) -> Option<&Arr> {
        self.map.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Arr> {
        self.map.get_mut(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.map.contains_key(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.map.keys().map(|s| s.as_str())
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.map.values().map(|a| a.len()).sum()
    }

    /// Write the store as a flat binary archive:
    /// magic `RGBT`, version u32, entry count u32, then per entry
    /// name length u32 + UTF-8 name, ndim u32, each dim u32, and the tensor
    /// as little-endian f64 in row-major order.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        f.write_all(CKPT_MAGIC)?;
        f.write_all(&CKPT_VERSION.to_le_bytes())?;
        f.write_all(&(self.map.len() as u32).to_le_bytes())?;
        for (name, arr) in &self.map {
            f.write_all(&(name.len() as u32).to_le_bytes())?;
            f.write_all(name.as_bytes())?;
            f.write_all(&(arr.ndim() as u32).to_le_bytes())?;
            for &d in arr.shape() {
                f.write_all(&(d as u32).to_le_bytes())?;
            }
            for &v in arr.iter() {
                f.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let mut f = std::io::BufReader::new(std::fs::File::open(path.as_ref())?);
        let mut magic = [0u8; 4];
        f.read_exact(&mut magic)?;
        if &magic != CKPT_MAGIC {
            return Err(Error::Checkpoint("bad magic; not a checkpoint file".into()));
        }
        let version = read_u32(&mut f)?;
        if version != CKPT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let count = read_u32(&mut f)? as usize;
        let mut map = IndexMap::with_capacity(count);
        for _ in 0..count {
            let name_len = read_u32(&mut f)? as usize;
            let mut name_buf = vec![0u8; name_len];
            f.read_exact(&mut name_buf)?;
            let name = String::from_utf8(name_buf)
                .map_err(|_| Error::Checkpoint("non-UTF-8 parameter name".into()))?;
            let ndim = read_u32(&mut f)? as usize;
            let mut dims = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                dims.push(read_u32(&mut f)? as usize);
            }
            let total: usize = dims.iter().product();
            let mut data = vec![0f64; total];
            let mut buf = [0u8; 8];
            for slot in data.iter_mut() {
                f.read_exact(&mut buf)?;
                *slot = f64::from_le_bytes(buf);
            }
            let arr = Arr::from_shape_vec(IxDyn(&dims), data)
                .map_err(|e| Error::Checkpoint(format!("bad tensor shape for `{name}`: {e}")))?;
            map.insert(name, arr);
        }
        Ok(ParamStore { map })
    }
}

fn read_u32(f: &mut impl Read) -> Result<u32> {
    let mut buf = [0u8; 4];
    f.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

/// He-style normal init scaled by fan-in; the default for conv and linear
/// weights feeding ReLUs.
pub fn he_normal(rng: &mut impl Rng, shape: &[usize], fan_in: usize) -> Arr {
    let std = (2.0 / fan_in.max(1) as f64).sqrt();
    let dist = Normal::new(0.0, std).unwrap();
    Arr::from_shape_simple_fn(IxDyn(shape), || dist.sample(rng))
}

/// Xavier-style init for sigmoid/tanh layers.
pub fn xavier_normal(rng: &mut impl Rng, shape: &[usize], fan_in: usize, fan_out: usize) -> Arr {
    let std = (2.0 / (fan_in + fan_out).max(1) as f64).sqrt();
    let dist = Normal::new(0.0, std).unwrap();
    Arr::from_shape_simple_fn(IxDyn(shape), || dist.sample(rng))
}

pub fn zeros(shape: &[usize]) -> Arr {
    Arr::zeros(IxDyn(shape))
}

/// SGD with momentum and decoupled-from-nothing classic L2 weight decay.
/// Only parameters that received a gradient are touched, so passing a graph
/// that only contains the classifier head trains just the head.
pub struct Sgd {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    velocity: HashMap<String, Arr>,
}

impl Sgd {
    pub fn new(lr: f64, momentum: f64, weight_decay: f64) -> Self {
        Sgd {
            lr,
            momentum,
            weight_decay,
            velocity: HashMap::new(),
        }
    }

    pub fn step(&mut self, store: &mut ParamStore, grads: &Grads) {
        for (name, g) in &grads.params {
            let p = match store.get_mut(name) {
                Some(p) => p,
                None => continue,
            };
            let v = self
                .velocity
                .entry(name.clone())
                .or_insert_with(|| Arr::zeros(p.raw_dim()));
            ndarray::Zip::from(&mut *v).and(g).and(&*p).for_each(|vv, &gv, &pv| {
                *vv = self.momentum * *vv + gv + self.weight_decay * pv;
            });
            ndarray::Zip::from(p).and(&*v).for_each(|pv, &vv| {
                *pv -= self.lr * vv;
            });
        }
    }
}

/// Adagrad, used for attention-network training.
pub struct Adagrad {
    pub lr: f64,
    pub eps: f64,
    accum: HashMap<String, Arr>,
}

impl Adagrad {
    pub fn new(lr: f64) -> Self {
        Adagrad {
            lr,
            eps: 1e-10,
            accum: HashMap::new(),
        }
    }

    pub fn step(&mut self, store: &mut ParamStore, grads: &Grads) {
        for (name, g) in &grads.params {
            let p = match store.get_mut(name) {
                Some(p) => p,
                None => continue,
            };
            let acc = self
                .accum
                .entry(name.clone())
                .or_insert_with(|| Arr::zeros(p.raw_dim()));
            ndarray::Zip::from(&mut *acc).and(g).for_each(|a, &gv| {
                *a += gv * gv;
            });
            ndarray::Zip::from(p).and(&*acc).and(g).for_each(|pv, &a, &gv| {
                *pv -= self.lr * gv / (a.sqrt() + self.eps);
            });
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn checkpoint_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut store = ParamStore::new();
        store.insert("a.w", he_normal(&mut rng, &[4, 3, 3, 3], 27));
        store.insert("a.b", zeros(&[4]));
        store.insert("scalarish", Arr::from_elem(IxDyn(&[1]), 0.25));

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ckpt.rgbt");
        store.save(&path).unwrap();
        let loaded = ParamStore::load(&path).unwrap();

        assert_eq!(loaded.len(), store.len());
        for name in store.names() {
            assert_eq!(loaded.get(name).unwrap(), store.get(name).unwrap());
        }
    }

    #[test]
    fn load_rejects_garbage() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("junk.bin");
        std::fs::write(&path, b"definitely not a checkpoint").unwrap();
        assert!(ParamStore::load(&path).is_err());
    }
}
