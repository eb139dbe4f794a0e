//! Binary checkpoint layout (all integers u32 little-endian):
//!
//! ```text
//! "DRNC" version count
//! repeat count times:
//!     name_len name(UTF-8) rank extent[rank] value[prod(extent)] (f32 LE, row-major)
//! ```

use std::path::Path;

use indexmap::IndexMap;

use crate::numerics::{ParamStore, Tensor};
use crate::{Error, Result};

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"DRNC";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Named tensors in insertion order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Checkpoint {
    pub tensors: IndexMap<String, Tensor<f32>>,
}

impl Checkpoint {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: &str, t: Tensor<f32>) {
        self.tensors.insert(name.to_string(), t);
    }

    pub fn get(&self, name: &str) -> Result<&Tensor<f32>> {
        self.tensors
            .get(name)
            .ok_or_else(|| Error::Checkpoint(format!("missing tensor {name:?}")))
    }

    /// Every entry of the store, trainable or not.
    pub fn from_store(store: &ParamStore<f32>) -> Self {
        let mut c = Self::new();
        for (_, name, p) in store.iter() {
            c.insert(name, p.value.clone());
        }
        c
    }

    /// Overwrites every store entry from the checkpoint; shapes must match.
    pub fn restore_store(&self, store: &mut ParamStore<f32>) -> Result<()> {
        for id in store.ids().collect::<Vec<_>>() {
            let name = store.name(id).to_string();
            let t = self.get(&name)?;
            if t.shape() != store.value(id).shape() {
                return Err(Error::Checkpoint(format!(
                    "{name}: stored shape {:?}, model expects {:?}",
                    t.shape(),
                    store.value(id).shape()
                )));
            }
            *store.value_mut(id) = t.clone();
        }
        Ok(())
    }

    pub fn scalar(&self, name: &str) -> Result<f32> {
        let t = self.get(name)?;
        match t.data() {
            [v] => Ok(*v),
            _ => Err(Error::Checkpoint(format!("{name} is not a scalar"))),
        }
    }

    pub fn insert_scalar(&mut self, name: &str, v: f32) {
        self.insert(name, Tensor::from_vec(&[1], vec![v]).expect("scalar"));
    }

    /// Stores the 64 bits verbatim as two `f32` bit patterns (low word first).
    pub fn insert_u64(&mut self, name: &str, v: u64) {
        let words = vec![f32::from_bits(v as u32), f32::from_bits((v >> 32) as u32)];
        self.insert(name, Tensor::from_vec(&[2], words).expect("two words"));
    }

    pub fn get_u64(&self, name: &str) -> Result<u64> {
        match self.get(name)?.data() {
            [lo, hi] => Ok(lo.to_bits() as u64 | (hi.to_bits() as u64) << 32),
            _ => Err(Error::Checkpoint(format!("{name} is not a packed 64-bit value"))),
        }
    }

    pub fn insert_f64(&mut self, name: &str, v: f64) {
        self.insert_u64(name, v.to_bits());
    }

    pub fn get_f64(&self, name: &str) -> Result<f64> {
        self.get_u64(name).map(f64::from_bits)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut b = Vec::new();
        b.extend_from_slice(&CHECKPOINT_MAGIC);
        b.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        b.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for (name, t) in &self.tensors {
            b.extend_from_slice(&(name.len() as u32).to_le_bytes());
            b.extend_from_slice(name.as_bytes());
            b.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
            for &e in t.shape() {
                b.extend_from_slice(&(e as u32).to_le_bytes());
            }
            for v in t.data() {
                b.extend_from_slice(&v.to_le_bytes());
            }
        }
        b
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != CHECKPOINT_MAGIC {
            return Err(Error::Checkpoint("bad magic bytes".into()));
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported version {version}, expected {CHECKPOINT_VERSION}"
            )));
        }
        let count = r.u32()?;
        let mut c = Self::new();
        for _ in 0..count {
            let len = r.u32()? as usize;
            let name = std::str::from_utf8(r.take(len)?)
                .map_err(|_| Error::Checkpoint("tensor name is not UTF-8".into()))?
                .to_string();
            let rank = r.u32()? as usize;
            let shape = (0..rank).map(|_| r.u32().map(|e| e as usize)).collect::<Result<Vec<_>>>()?;
            let n: usize = shape.iter().product();
            let raw = r.take(n.checked_mul(4).ok_or_else(|| Error::Checkpoint("tensor too large".into()))?)?;
            let data = raw
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
                .collect();
            let t = Tensor::from_vec(&shape, data).map_err(|e| Error::Checkpoint(format!("{name}: {e}")))?;
            if c.tensors.insert(name.clone(), t).is_some() {
                return Err(Error::Checkpoint(format!("duplicate tensor {name:?}")));
            }
        }
        if r.pos != bytes.len() {
            return Err(Error::Checkpoint("trailing bytes after last tensor".into()));
        }
        Ok(c)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Checkpoint("truncated file".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    std::fs::write(path, ckpt.to_bytes())?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes =
        std::fs::read(path).map_err(|e| Error::Checkpoint(format!("cannot read {}: {e}", path.display())))?;
    Checkpoint::from_bytes(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{DrNet, NetConfig, TaskKind};

    fn sample() -> Checkpoint {
        let mut c = Checkpoint::new();
        c.insert("a.weight", Tensor::from_vec(&[2, 3], vec![1.5, -0.0, f32::MIN_POSITIVE, 3.0, 1e-30, -7.25]).unwrap());
        c.insert_scalar("meta.epoch", 4.0);
        c
    }

    #[test]
    fn byte_layout() {
        let b = sample().to_bytes();
        assert_eq!(&b[..4], b"DRNC");
        assert_eq!(u32::from_le_bytes(b[4..8].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(b[8..12].try_into().unwrap()), 2);
        assert_eq!(u32::from_le_bytes(b[12..16].try_into().unwrap()), 8);
        assert_eq!(&b[16..24], b"a.weight");
        assert_eq!(u32::from_le_bytes(b[24..28].try_into().unwrap()), 2);
        assert_eq!(f32::from_le_bytes(b[36..40].try_into().unwrap()), 1.5);
        assert_eq!(b.len(), 12 + (4 + 8 + 4 + 8 + 24) + (4 + 10 + 4 + 4 + 4));
    }

    #[test]
    fn round_trip_is_bitwise() {
        let c = sample();
        let back = Checkpoint::from_bytes(&c.to_bytes()).unwrap();
        for ((n1, t1), (n2, t2)) in c.tensors.iter().zip(&back.tensors) {
            assert_eq!(n1, n2);
            assert_eq!(t1.shape(), t2.shape());
            assert!(t1.data().iter().zip(t2.data()).all(|(a, b)| a.to_bits() == b.to_bits()));
        }
    }

    #[test]
    fn packed_values_survive_serialization() {
        let mut c = Checkpoint::new();
        for (i, v) in [0u64, 1, u64::MAX, 0x7FF8_0000_0000_0001, 0xFFC0_0001_7F80_0001].into_iter().enumerate() {
            c.insert_u64(&format!("u{i}"), v);
        }
        c.insert_f64("f", -0.123456789012345);
        let back = Checkpoint::from_bytes(&c.to_bytes()).unwrap();
        assert_eq!(back.get_u64("u2").unwrap(), u64::MAX);
        assert_eq!(back.get_u64("u3").unwrap(), 0x7FF8_0000_0000_0001);
        assert_eq!(back.get_u64("u4").unwrap(), 0xFFC0_0001_7F80_0001);
        assert_eq!(back.get_f64("f").unwrap(), -0.123456789012345);
    }

    #[test]
    fn model_round_trip_through_file() {
        let net = DrNet::<f32>::new(NetConfig::tiny(TaskKind::Classification, 3, 0), 5).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        save_checkpoint(&path, &Checkpoint::from_store(&net.store)).unwrap();
        let mut other = DrNet::<f32>::new(NetConfig::tiny(TaskKind::Classification, 3, 0), 6).unwrap();
        load_checkpoint(&path).unwrap().restore_store(&mut other.store).unwrap();
        for (id, _, p) in net.store.iter() {
            assert_eq!(p.value, *other.store.value(id));
        }
    }

    #[test]
    fn corrupt_files_are_rejected() {
        let good = sample().to_bytes();
        let mut bad = good.clone();
        bad[0] = b'X';
        assert!(matches!(Checkpoint::from_bytes(&bad), Err(Error::Checkpoint(m)) if m.contains("magic")));
        let mut bad = good.clone();
        bad[4] = 2;
        assert!(matches!(Checkpoint::from_bytes(&bad), Err(Error::Checkpoint(m)) if m.contains("version")));
        for cut in [3, 11, 20, good.len() - 1] {
            assert!(matches!(Checkpoint::from_bytes(&good[..cut]), Err(Error::Checkpoint(_))));
        }
        let mut long = good.clone();
        long.push(0);
        assert!(Checkpoint::from_bytes(&long).is_err());
    }

    #[test]
    fn restore_checks_names_and_shapes() {
        let mut store = ParamStore::<f32>::new();
        store.insert("a.weight", Tensor::zeros(&[3, 2]), true).unwrap();
        assert!(sample().restore_store(&mut store).is_err());
        let mut store = ParamStore::<f32>::new();
        store.insert("b", Tensor::zeros(&[1]), true).unwrap();
        assert!(sample().restore_store(&mut store).is_err());
    }
}
