//! Binary parameter files: magic `ASEMM`, u32 version, u32 tensor count,
//! then per tensor (u32 name length, name bytes, u8 dtype tag, u32 rank,
//! u64 extents, little-endian values), then an FNV-1a 64 checksum of all
//! preceding bytes.

use std::path::Path;

use crate::error::{Error, Result};
use crate::numerics::rng::fnv1a64;
use crate::numerics::{ParamStore, Tensor};
use crate::scalar::{DType, Scalar};

pub const MAGIC: &[u8; 5] = b"ASEMM";
pub const VERSION: u32 = 1;

pub fn to_bytes<T: Scalar>(store: &ParamStore<T>) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(store.len() as u32).to_le_bytes());
    for (name, t) in store.iter() {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(T::DTYPE.tag());
        out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
        for &e in t.shape() {
            out.extend_from_slice(&(e as u64).to_le_bytes());
        }
        for &v in t.data() {
            v.write_le(&mut out);
        }
    }
    let sum = fnv1a64(&out);
    out.extend_from_slice(&sum.to_le_bytes());
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Checkpoint(format!("truncated while reading {what}")))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }
}

pub fn from_bytes<T: Scalar>(bytes: &[u8]) -> Result<ParamStore<T>> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(MAGIC.len(), "magic")? != MAGIC {
        return Err(Error::Checkpoint("not a checkpoint (bad magic)".into()));
    }
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported checkpoint version {version}")));
    }
    if bytes.len() < 8 {
        return Err(Error::Checkpoint("truncated checkpoint".into()));
    }
    let body = &bytes[..bytes.len() - 8];
    let stored = u64::from_le_bytes(bytes[bytes.len() - 8..].try_into().expect("8 bytes"));
    let count = r.u32("tensor count")?;
    let mut store = ParamStore::new();
    for i in 0..count {
        let len = r.u32("name length")? as usize;
        let name = std::str::from_utf8(r.take(len, "name")?)
            .map_err(|_| Error::Checkpoint(format!("tensor {i} has a non-UTF-8 name")))?
            .to_string();
        let tag = r.take(1, "dtype")?[0];
        let dtype = DType::from_tag(tag).ok_or_else(|| Error::Checkpoint(format!("{name}: unknown dtype tag {tag}")))?;
        if dtype != T::DTYPE {
            return Err(Error::Checkpoint(format!("{name}: stored as {dtype:?}, expected {:?}", T::DTYPE)));
        }
        let rank = r.u32("rank")? as usize;
        if rank > 8 {
            return Err(Error::Checkpoint(format!("{name}: implausible rank {rank}")));
        }
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u64("extent")? as usize);
        }
        let n = shape.iter().try_fold(1usize, |a, &e| a.checked_mul(e));
        let n = n.ok_or_else(|| Error::Checkpoint(format!("{name}: extents overflow")))?;
        let raw = r.take(n.checked_mul(dtype.size()).unwrap_or(usize::MAX), &name)?;
        let data: Vec<T> = raw.chunks(dtype.size()).map(T::read_le).collect();
        store.insert(name, Tensor::new(shape, data)?);
    }
    if r.pos != body.len() {
        return Err(Error::Checkpoint("trailing bytes after last tensor".into()));
    }
    if fnv1a64(body) != stored {
        return Err(Error::Checkpoint("checksum mismatch".into()));
    }
    Ok(store)
}

pub fn save_params<T: Scalar>(store: &ParamStore<T>, path: &Path) -> Result<()> {
    std::fs::write(path, to_bytes(store)).map_err(|e| Error::io(path, e))
}

pub fn load_params<T: Scalar>(path: &Path) -> Result<ParamStore<T>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes).map_err(|e| match e {
        Error::Checkpoint(m) => Error::Checkpoint(format!("{}: {m}", path.display())),
        other => other,
    })
}

/// Loads values into an existing store whose names and shapes must match.
pub fn load_params_into<T: Scalar>(store: &mut ParamStore<T>, path: &Path) -> Result<()> {
    let loaded: ParamStore<T> = load_params(path)?;
    for (name, t) in store.iter() {
        let l = loaded
            .get(name)
            .map_err(|_| Error::Checkpoint(format!("{}: missing tensor {name}", path.display())))?;
        if l.shape() != t.shape() {
            return Err(Error::Checkpoint(format!(
                "{}: tensor {name} has shape {:?}, model expects {:?}",
                path.display(),
                l.shape(),
                t.shape()
            )));
        }
    }
    if let Some(extra) = loaded.names().find(|n| !store.contains(n)) {
        return Err(Error::Checkpoint(format!("{}: unexpected tensor {extra}", path.display())));
    }
    for (name, t) in loaded.iter() {
        *store.get_mut(name)? = t.clone();
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store() -> ParamStore<f32> {
        let mut s = ParamStore::new();
        s.insert("a", Tensor::from_f64(&[2, 3], &[1.0, -2.5, 3.25, f64::MIN_POSITIVE, 0.1, -0.0]).unwrap());
        s.insert("b.tau", Tensor::from_f64(&[1], &[0.07f64.ln()]).unwrap());
        s
    }

    #[test]
    fn bitwise_round_trip() {
        let s = store();
        let back: ParamStore<f32> = from_bytes(&to_bytes(&s)).unwrap();
        for (name, t) in s.iter() {
            let b = back.get(name).unwrap();
            assert_eq!(t.shape(), b.shape());
            let bits = |x: &Tensor<f32>| x.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(t), bits(b));
        }
    }

    #[test]
    fn corrupt_header_rejected() {
        let mut bytes = to_bytes(&store());
        bytes[5] ^= 0xff;
        assert!(matches!(from_bytes::<f32>(&bytes), Err(Error::Checkpoint(m)) if m.contains("version")));
        let mut bytes = to_bytes(&store());
        bytes[0] = b'X';
        assert!(from_bytes::<f32>(&bytes).is_err());
    }

    #[test]
    fn payload_and_truncation_rejected() {
        let good = to_bytes(&store());
        let mut flipped = good.clone();
        flipped[40] ^= 1;
        assert!(from_bytes::<f32>(&flipped).is_err());
        assert!(from_bytes::<f32>(&good[..good.len() - 11]).is_err());
        assert!(from_bytes::<f64>(&good).is_err());
    }
}
