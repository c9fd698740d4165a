//! Binary parameter container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic    8 bytes  "TXCKPT01"
//! version  u32
//! count    u32
//! count × { name_len u32, name utf-8, rank u32, dims u64 × rank }
//! payload  f64 × Σ numel, tensors in table order
//! crc32    u32 over every preceding byte
//! ```

use alloc::string::String;
use alloc::vec::Vec;

use crate::autograd::ParamStore;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"TXCKPT01";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum CheckpointError {
    #[error("not a checkpoint (bad magic bytes)")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    UnsupportedVersion(u32),
    #[error("checkpoint truncated")]
    Truncated,
    #[error("checkpoint checksum mismatch (stored {stored:#010x}, computed {computed:#010x})")]
    ChecksumMismatch { stored: u32, computed: u32 },
    #[error("checkpoint tensor name is not utf-8")]
    BadName,
    #[error("tensor {0} missing from checkpoint")]
    Missing(String),
    #[error("tensor {name} has shape {found:?} in checkpoint, expected {expected:?}")]
    ShapeChanged { name: String, expected: Vec<usize>, found: Vec<usize> },
}

pub fn encode<'a>(tensors: impl IntoIterator<Item = (&'a str, &'a Tensor)>) -> Vec<u8> {
    let tensors: Vec<_> = tensors.into_iter().collect();
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for (name, t) in &tensors {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
    }
    for (_, t) in &tensors {
        for x in t.data() {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        let end = self.pos.checked_add(n).ok_or(CheckpointError::Truncated)?;
        let s = self.buf.get(self.pos..end).ok_or(CheckpointError::Truncated)?;
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

pub fn decode(bytes: &[u8]) -> Result<Vec<(String, Tensor)>, CheckpointError> {
    if bytes.len() < MAGIC.len() {
        return Err(CheckpointError::Truncated);
    }
    if &bytes[..8] != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    if bytes.len() < 8 + 4 + 4 + 4 {
        return Err(CheckpointError::Truncated);
    }
    let (body, trailer) = bytes.split_at(bytes.len() - 4);
    let mut r = Reader { buf: body, pos: 8 };
    let version = r.u32()?;
    if version != VERSION {
        return Err(CheckpointError::UnsupportedVersion(version));
    }
    let stored = u32::from_le_bytes(trailer.try_into().expect("4 bytes"));
    let computed = crc32fast::hash(body);
    if stored != computed {
        return Err(CheckpointError::ChecksumMismatch { stored, computed });
    }
    let count = r.u32()? as usize;
    let mut table = Vec::new();
    for _ in 0..count {
        let len = r.u32()? as usize;
        let name = core::str::from_utf8(r.take(len)?).map_err(|_| CheckpointError::BadName)?;
        let rank = r.u32()? as usize;
        let mut shape = Vec::with_capacity(rank.min(8));
        for _ in 0..rank {
            shape.push(r.u64()? as usize);
        }
        table.push((String::from(name), shape));
    }
    let mut out = Vec::with_capacity(table.len());
    for (name, shape) in table {
        let n: usize = shape.iter().product();
        let raw = r.take(n.checked_mul(8).ok_or(CheckpointError::Truncated)?)?;
        let data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
        out.push((name, Tensor::new(shape, data).expect("length matches shape")));
    }
    if r.pos != body.len() {
        return Err(CheckpointError::Truncated);
    }
    Ok(out)
}

pub fn encode_store(store: &ParamStore) -> Vec<u8> {
    encode(store.iter().map(|(_, n, t)| (n, t)))
}

/// Overwrites every tensor of `store` from `bytes`. Names and shapes must
/// match; extra tensors in the checkpoint are ignored.
pub fn load_into(store: &mut ParamStore, bytes: &[u8]) -> Result<(), CheckpointError> {
    let decoded = decode(bytes)?;
    let map: alloc::collections::BTreeMap<_, _> = decoded.into_iter().collect();
    let ids: Vec<_> = store.ids().collect();
    for id in &ids {
        let name = store.name(*id);
        let t = map.get(name).ok_or_else(|| CheckpointError::Missing(name.into()))?;
        if t.shape() != store.get(*id).shape() {
            return Err(CheckpointError::ShapeChanged {
                name: name.into(),
                expected: store.get(*id).shape().to_vec(),
                found: t.shape().to_vec(),
            });
        }
    }
    for id in ids {
        let t = map[store.name(id)].clone();
        *store.get_mut(id) = t;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn sample() -> ParamStore {
        let mut s = ParamStore::new();
        s.add("a", Tensor::matrix(2, 2, vec![1.0, -2.5, 3.25, f64::MIN_POSITIVE]).unwrap());
        s.add("b.bias", Tensor::row_vector(vec![0.1, 0.2, 0.3]));
        s
    }

    #[test]
    fn round_trip_is_exact() {
        let s = sample();
        let bytes = encode_store(&s);
        let mut other = sample();
        other.get_mut(other.id("a").unwrap()).data_mut()[0] = 99.0;
        load_into(&mut other, &bytes).unwrap();
        assert_eq!(other, s);
        assert_eq!(encode_store(&other), bytes);
    }

    #[test]
    fn corruption_is_detected() {
        let bytes = encode_store(&sample());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert_eq!(decode(&bad), Err(CheckpointError::BadMagic));
        let mut bad = bytes.clone();
        let n = bad.len();
        bad[n - 10] ^= 0x40;
        assert!(matches!(decode(&bad), Err(CheckpointError::ChecksumMismatch { .. })));
        assert_eq!(decode(&bytes[..bytes.len() - 20]).unwrap_err(), CheckpointError::ChecksumMismatch {
            stored: u32::from_le_bytes(bytes[bytes.len() - 24..bytes.len() - 20].try_into().unwrap()),
            computed: crc32fast::hash(&bytes[..bytes.len() - 24]),
        });
        assert_eq!(decode(&bytes[..10]), Err(CheckpointError::Truncated));
        let mut v2 = bytes.clone();
        v2[8] = 2;
        assert_eq!(decode(&v2), Err(CheckpointError::UnsupportedVersion(2)));
    }

    #[test]
    fn shape_change_is_rejected() {
        let bytes = encode_store(&sample());
        let mut s = ParamStore::new();
        s.add("a", Tensor::zeros(1, 4));
        s.add("b.bias", Tensor::zeros(1, 3));
        assert!(matches!(load_into(&mut s, &bytes), Err(CheckpointError::ShapeChanged { .. })));
    }
}
