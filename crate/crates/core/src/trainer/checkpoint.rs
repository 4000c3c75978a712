//! Binary checkpoint format.
//!
//! ```text
//! "RCOD"  u32 version
//! repeated: u32 name_len, name (utf-8), u8 dtype (0 = f32), u8 ndim,
//!           u32 dims[ndim], f32 payload[∏dims]
//! u32 CRC-32 of every preceding byte
//! ```
//!
//! All integers and floats are little-endian. Loading verifies the CRC before
//! parsing any entry, so a corrupt file never yields a partial result.

use std::path::Path;

use serde::{de::DeserializeOwned, Serialize};

use crate::numerics::{ParamStore, Tensor};
use crate::{Error, Result};

pub const MAGIC: &[u8; 4] = b"RCOD";
pub const VERSION: u32 = 1;
const DTYPE_F32: u8 = 0;
const META_KEY: &str = "meta.json";

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum CheckpointError {
    #[error("not a checkpoint: bad magic bytes")]
    BadMagic,
    #[error("unsupported checkpoint version {found} (expected {VERSION})")]
    Version { found: u32 },
    #[error("checkpoint CRC mismatch: stored {stored:#010x}, computed {computed:#010x}")]
    Crc { stored: u32, computed: u32 },
    #[error("checkpoint truncated at byte {offset}")]
    Truncated { offset: usize },
    #[error("malformed checkpoint entry at byte {offset}: {msg}")]
    Malformed { offset: usize, msg: String },
}

/// Serializes a store (entries in name order).
pub fn encode(store: &ParamStore<f32>) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(8 + store.numel() * 4);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    for (name, t) in store.iter() {
        if t.ndim() > u8::MAX as usize {
            return Err(Error::Dimension(format!("`{name}` has too many dimensions")));
        }
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(DTYPE_F32);
        out.push(t.ndim() as u8);
        for &d in t.shape() {
            let d = u32::try_from(d).map_err(|_| Error::Dimension(format!("`{name}` dimension {d} too large")))?;
            out.extend_from_slice(&d.to_le_bytes());
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or(CheckpointError::Truncated { offset: self.pos })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u8(&mut self) -> Result<u8, CheckpointError> {
        Ok(self.take(1)?[0])
    }
}

/// Parses and verifies a serialized store.
pub fn decode(bytes: &[u8]) -> Result<ParamStore<f32>> {
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(CheckpointError::BadMagic.into());
    }
    if bytes.len() < 12 {
        return Err(CheckpointError::Truncated { offset: bytes.len() }.into());
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
    if version != VERSION {
        return Err(CheckpointError::Version { found: version }.into());
    }
    let body_end = bytes.len() - 4;
    let stored = u32::from_le_bytes(bytes[body_end..].try_into().expect("4 bytes"));
    let computed = crc32fast::hash(&bytes[..body_end]);
    if stored != computed {
        return Err(CheckpointError::Crc { stored, computed }.into());
    }
    let mut r = Reader {
        bytes: &bytes[..body_end],
        pos: 8,
    };
    let mut store = ParamStore::new();
    while r.pos < body_end {
        let start = r.pos;
        let malformed = |msg: String| CheckpointError::Malformed { offset: start, msg };
        let len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(len)?)
            .map_err(|_| malformed("name is not utf-8".into()))?
            .to_string();
        let dtype = r.u8()?;
        if dtype != DTYPE_F32 {
            return Err(malformed(format!("unknown dtype tag {dtype}")).into());
        }
        let ndim = r.u8()? as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(r.u32()? as usize);
        }
        let n = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .filter(|&n| n > 0)
            .ok_or_else(|| malformed(format!("bad shape {shape:?}")))?;
        let raw = r.take(n.checked_mul(4).ok_or_else(|| malformed("size overflow".into()))?)?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        if store.contains(&name) {
            return Err(malformed(format!("duplicate entry `{name}`")).into());
        }
        store.insert(name, Tensor::new(shape, data)?);
    }
    Ok(store)
}

pub fn save(store: &ParamStore<f32>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode(store)?).map_err(|e| Error::io(path, e))
}

pub fn load(path: impl AsRef<Path>) -> Result<ParamStore<f32>> {
    let path = path.as_ref();
    decode(&std::fs::read(path).map_err(|e| Error::io(path, e))?)
}

/// Stores a JSON document as a 1-D tensor of byte values.
pub fn put_meta<M: Serialize>(store: &mut ParamStore<f32>, meta: &M) -> Result<()> {
    let bytes = serde_json::to_vec(meta)?;
    store.insert(
        META_KEY,
        Tensor::new([bytes.len()], bytes.into_iter().map(f32::from).collect())?,
    );
    Ok(())
}

pub fn get_meta<M: DeserializeOwned>(store: &ParamStore<f32>) -> Result<M> {
    let t = store.get(META_KEY).map_err(|_| Error::Contract("checkpoint has no metadata".into()))?;
    let bytes: Vec<u8> = t
        .data()
        .iter()
        .map(|&v| {
            if (0.0..=255.0).contains(&v) && v.fract() == 0.0 {
                Ok(v as u8)
            } else {
                Err(Error::Contract("checkpoint metadata is not a byte string".into()))
            }
        })
        .collect::<Result<_>>()?;
    Ok(serde_json::from_slice(&bytes)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng_from_seed;

    fn random_store(seed: u64) -> ParamStore<f32> {
        let mut rng = rng_from_seed(seed);
        let mut s = ParamStore::new();
        s.insert("a.w", Tensor::randn([3, 4, 5], 1.0, &mut rng));
        s.insert("a.b", Tensor::randn([5], 1.0, &mut rng));
        s.insert("scalar", Tensor::scalar(f32::MIN_POSITIVE));
        s.insert("odd", Tensor::new([2], vec![-0.0, f32::MAX]).unwrap());
        s
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let s = random_store(1);
        let back = decode(&encode(&s).unwrap()).unwrap();
        assert_eq!(back.len(), s.len());
        for (k, v) in s.iter() {
            let w = back.get(k).unwrap();
            assert_eq!(v.shape(), w.shape());
            let bits = |t: &Tensor<f32>| t.data().iter().map(|x| x.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(v), bits(w));
        }
    }

    #[test]
    fn layout_matches_format() {
        let mut s = ParamStore::new();
        s.insert("x", Tensor::new([2], vec![1.0f32, -2.0]).unwrap());
        let b = encode(&s).unwrap();
        let mut expect = b"RCOD".to_vec();
        expect.extend(1u32.to_le_bytes());
        expect.extend(1u32.to_le_bytes());
        expect.push(b'x');
        expect.extend([0u8, 1]);
        expect.extend(2u32.to_le_bytes());
        expect.extend(1.0f32.to_le_bytes());
        expect.extend((-2.0f32).to_le_bytes());
        let crc = crc32fast::hash(&expect);
        expect.extend(crc.to_le_bytes());
        assert_eq!(b, expect);
    }

    #[test]
    fn corruption_is_detected() {
        let b = encode(&random_store(2)).unwrap();
        for pos in [20, b.len() / 2, b.len() - 5] {
            let mut bad = b.clone();
            bad[pos] ^= 0x40;
            assert!(matches!(decode(&bad), Err(Error::Checkpoint(CheckpointError::Crc { .. }))));
        }
        let mut magic = b.clone();
        magic[0] = b'X';
        assert!(matches!(decode(&magic), Err(Error::Checkpoint(CheckpointError::BadMagic))));
        let mut ver = b.clone();
        ver[4..8].copy_from_slice(&7u32.to_le_bytes());
        let n = ver.len();
        let crc = crc32fast::hash(&ver[..n - 4]);
        ver[n - 4..].copy_from_slice(&crc.to_le_bytes());
        assert!(matches!(
            decode(&ver),
            Err(Error::Checkpoint(CheckpointError::Version { found: 7 }))
        ));
        // A truncated body with a recomputed CRC still fails to parse.
        let mut cut = b[..b.len() - 10].to_vec();
        let crc = crc32fast::hash(&cut);
        cut.extend(crc.to_le_bytes());
        assert!(matches!(decode(&cut), Err(Error::Checkpoint(CheckpointError::Truncated { .. }))));
    }

    #[test]
    fn metadata_round_trip() {
        let mut s = ParamStore::new();
        let meta = serde_json::json!({"kind": "student", "bounds": [0.012345678901234567, 0.99]});
        put_meta(&mut s, &meta).unwrap();
        let back: serde_json::Value = get_meta(&decode(&encode(&s).unwrap()).unwrap()).unwrap();
        assert_eq!(back, meta);
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.ckpt");
        let s = random_store(3);
        save(&s, &p).unwrap();
        assert_eq!(load(&p).unwrap(), s);
        assert!(matches!(load(dir.path().join("missing")), Err(Error::Io { .. })));
    }
}
