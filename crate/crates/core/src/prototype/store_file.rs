//! Binary prototype store.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic        "DPMP"
//! version      u16
//! dimension    u32
//! count        u32
//! prov_len     u32, then prov_len bytes of UTF-8 (extractor identifier)
//! count × {
//!     class_id  u32
//!     k_support u16
//!     name_len  u16, then name_len bytes of UTF-8 (0 = unnamed)
//!     vector    dimension × f64
//! }
//! crc32        u32 over every preceding byte
//! ```

use std::path::Path;

use super::{ClassId, Prototype, PrototypeStore};
use crate::error::{Error, Result};
use crate::io::{atomic_write, ByteReader};

pub const STORE_MAGIC: [u8; 4] = *b"DPMP";
pub const STORE_VERSION: u16 = 1;

pub(crate) fn encode_store(store: &PrototypeStore) -> Vec<u8> {
    let d = store.dimension;
    let mut buf = Vec::with_capacity(32 + store.len() * (16 + 8 * d));
    buf.extend_from_slice(&STORE_MAGIC);
    buf.extend_from_slice(&STORE_VERSION.to_le_bytes());
    buf.extend_from_slice(&(d as u32).to_le_bytes());
    buf.extend_from_slice(&(store.len() as u32).to_le_bytes());
    buf.extend_from_slice(&(store.provenance.len() as u32).to_le_bytes());
    buf.extend_from_slice(store.provenance.as_bytes());
    for p in &store.prototypes {
        let name = p.name.as_deref().unwrap_or("");
        buf.extend_from_slice(&p.class_id.0.to_le_bytes());
        buf.extend_from_slice(&p.k_support.to_le_bytes());
        buf.extend_from_slice(&(name.len() as u16).to_le_bytes());
        buf.extend_from_slice(name.as_bytes());
        for v in &p.vector {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    let crc = crc32fast::hash(&buf);
    buf.extend_from_slice(&crc.to_le_bytes());
    buf
}

pub(crate) fn decode_store(bytes: &[u8]) -> Result<PrototypeStore> {
    if bytes.len() < 4 {
        return Err(Error::Corrupt(format!("store truncated to {} bytes", bytes.len())));
    }
    if bytes[..4] != STORE_MAGIC {
        return Err(Error::BadMagic {
            expected: STORE_MAGIC,
            found: bytes[..4].to_vec(),
        });
    }
    let mut r = ByteReader::new(&bytes[4..]);
    let version = r.u16()?;
    if version != STORE_VERSION {
        return Err(Error::VersionMismatch {
            expected: STORE_VERSION,
            found: version,
        });
    }
    if bytes.len() < 10 {
        return Err(Error::Corrupt("store truncated before checksum".into()));
    }
    let (body, trailer) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(trailer.try_into().unwrap());
    let actual = crc32fast::hash(body);
    if stored != actual {
        return Err(Error::Corrupt(format!(
            "checksum mismatch: stored {stored:#010x}, computed {actual:#010x}"
        )));
    }

    let mut r = ByteReader::new(&body[6..]);
    let dimension = r.u32()? as usize;
    let count = r.u32()? as usize;
    let prov_len = r.u32()? as usize;
    let provenance = r.utf8(prov_len)?;
    let mut store = PrototypeStore::new(dimension, provenance);
    for _ in 0..count {
        let class_id = ClassId(r.u32()?);
        let k_support = r.u16()?;
        let name_len = r.u16()? as usize;
        let name = r.utf8(name_len)?;
        let vector = (0..dimension).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
        let name = (!name.is_empty()).then_some(name);
        store
            .insert(Prototype::from_parts(class_id, name, vector, k_support))
            .map_err(|e| Error::Corrupt(format!("invalid store entry: {e}")))?;
    }
    if r.remaining() != 0 {
        return Err(Error::Corrupt(format!("{} trailing bytes after last class", r.remaining())));
    }
    Ok(store)
}

pub fn save_store(store: &PrototypeStore, path: impl AsRef<Path>) -> Result<()> {
    atomic_write(path.as_ref(), &encode_store(store))
}

pub fn load_store(path: impl AsRef<Path>) -> Result<PrototypeStore> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_store(&bytes)
}
