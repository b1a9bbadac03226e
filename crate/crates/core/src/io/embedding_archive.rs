//! `DPME` embedding archives: a flat little-endian matrix plus a JSON sidecar.
//!
//! ```text
//! magic    "DPME"
//! version  u16
//! dim      u32
//! count    u64
//! dtype    u8     (0 = f32, 1 = f64)
//! payload  count × dim values of dtype
//! crc32    u32 over every preceding byte
//! ```
//!
//! The sidecar lives at `<archive>.json` and carries the extractor id, the crop
//! policy and one key per record. Values are always promoted to `f64` on read.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{atomic_write, read_file, ByteReader};
use crate::error::{Error, Result};

pub const ARCHIVE_MAGIC: [u8; 4] = *b"DPME";
pub const ARCHIVE_VERSION: u16 = 1;
pub(crate) const HEADER_LEN: usize = 19;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dtype {
    F32,
    F64,
}

impl Dtype {
    pub fn tag(self) -> u8 {
        match self {
            Dtype::F32 => 0,
            Dtype::F64 => 1,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(Dtype::F32),
            1 => Some(Dtype::F64),
            _ => None,
        }
    }

    pub fn width(self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::F64 => 8,
        }
    }
}

/// Identifies what a record embeds: a support crop or a scene proposal crop.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(from = "RawKey", into = "RawKey")]
pub enum RecordKey {
    Support { class_id: u32, support_index: u32 },
    Proposal {
        scene_id: u32,
        image_id: u32,
        proposal_index: u32,
    },
}

#[derive(Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SupportKey {
    class_id: u32,
    support_index: u32,
}

#[derive(Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ProposalKey {
    scene_id: u32,
    image_id: u32,
    proposal_index: u32,
}

#[derive(Clone, Copy, Serialize, Deserialize)]
#[serde(untagged)]
enum RawKey {
    Support(SupportKey),
    Proposal(ProposalKey),
}

impl From<RawKey> for RecordKey {
    fn from(raw: RawKey) -> Self {
        match raw {
            RawKey::Support(k) => RecordKey::Support {
                class_id: k.class_id,
                support_index: k.support_index,
            },
            RawKey::Proposal(k) => RecordKey::Proposal {
                scene_id: k.scene_id,
                image_id: k.image_id,
                proposal_index: k.proposal_index,
            },
        }
    }
}

impl From<RecordKey> for RawKey {
    fn from(key: RecordKey) -> Self {
        match key {
            RecordKey::Support {
                class_id,
                support_index,
            } => RawKey::Support(SupportKey {
                class_id,
                support_index,
            }),
            RecordKey::Proposal {
                scene_id,
                image_id,
                proposal_index,
            } => RawKey::Proposal(ProposalKey {
                scene_id,
                image_id,
                proposal_index,
            }),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingArchive {
    pub extractor: String,
    pub crop_policy: String,
    pub dtype: Dtype,
    pub dim: usize,
    pub keys: Vec<RecordKey>,
    pub records: Vec<Vec<f64>>,
}

impl EmbeddingArchive {
    pub fn new(extractor: impl Into<String>, crop_policy: impl Into<String>, dtype: Dtype, dim: usize) -> Self {
        Self {
            extractor: extractor.into(),
            crop_policy: crop_policy.into(),
            dtype,
            dim,
            keys: Vec::new(),
            records: Vec::new(),
        }
    }

    pub fn push(&mut self, key: RecordKey, values: Vec<f64>) -> Result<()> {
        if values.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                actual: values.len(),
            });
        }
        self.keys.push(key);
        self.records.push(values);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&RecordKey, &[f64])> {
        self.keys.iter().zip(self.records.iter().map(Vec::as_slice))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub(crate) struct Sidecar {
    pub extractor: String,
    pub crop_policy: String,
    pub dtype: Dtype,
    pub promoted_on_read: Dtype,
    pub keys: Vec<RecordKey>,
}

pub(crate) struct Header {
    pub version: u16,
    pub dim: u32,
    pub count: u64,
    pub dtype_tag: u8,
}

pub fn sidecar_path(archive: &Path) -> PathBuf {
    let mut name = archive.as_os_str().to_owned();
    name.push(".json");
    PathBuf::from(name)
}

pub(crate) fn parse_header(bytes: &[u8]) -> Result<Header> {
    if bytes.len() < 4 {
        return Err(Error::Corrupt(format!("archive truncated to {} bytes", bytes.len())));
    }
    if bytes[..4] != ARCHIVE_MAGIC {
        return Err(Error::BadMagic {
            expected: ARCHIVE_MAGIC,
            found: bytes[..4].to_vec(),
        });
    }
    let mut r = ByteReader::new(&bytes[4..]);
    Ok(Header {
        version: r.u16()?,
        dim: r.u32()?,
        count: r.u64()?,
        dtype_tag: r.u8()?,
    })
}

/// Expected total file size for a header, including the checksum trailer.
pub(crate) fn expected_len(dim: u32, count: u64, dtype: Dtype) -> Option<u64> {
    (dim as u64)
        .checked_mul(count)?
        .checked_mul(dtype.width() as u64)?
        .checked_add(HEADER_LEN as u64 + 4)
}

fn encode(archive: &EmbeddingArchive) -> Vec<u8> {
    let width = archive.dtype.width();
    let mut buf = Vec::with_capacity(HEADER_LEN + 4 + archive.len() * archive.dim * width);
    buf.extend_from_slice(&ARCHIVE_MAGIC);
    buf.extend_from_slice(&ARCHIVE_VERSION.to_le_bytes());
    buf.extend_from_slice(&(archive.dim as u32).to_le_bytes());
    buf.extend_from_slice(&(archive.len() as u64).to_le_bytes());
    buf.push(archive.dtype.tag());
    for record in &archive.records {
        for &v in record {
            match archive.dtype {
                Dtype::F32 => buf.extend_from_slice(&(v as f32).to_le_bytes()),
                Dtype::F64 => buf.extend_from_slice(&v.to_le_bytes()),
            }
        }
    }
    let crc = crc32fast::hash(&buf);
    buf.extend_from_slice(&crc.to_le_bytes());
    buf
}

pub(crate) fn decode(bytes: &[u8], sidecar: Sidecar) -> Result<EmbeddingArchive> {
    let header = parse_header(bytes)?;
    if header.version != ARCHIVE_VERSION {
        return Err(Error::VersionMismatch {
            expected: ARCHIVE_VERSION,
            found: header.version,
        });
    }
    let dtype = Dtype::from_tag(header.dtype_tag)
        .ok_or_else(|| Error::Corrupt(format!("unknown dtype tag {}", header.dtype_tag)))?;
    let expected = expected_len(header.dim, header.count, dtype)
        .ok_or_else(|| Error::Corrupt("header dimensions overflow".into()))?;
    if bytes.len() as u64 != expected {
        return Err(Error::Corrupt(format!(
            "archive is {} bytes but header (dim {}, count {}, {:?}) implies {expected}",
            bytes.len(),
            header.dim,
            header.count,
            dtype
        )));
    }
    let (body, trailer) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(trailer.try_into().unwrap());
    if stored != crc32fast::hash(body) {
        return Err(Error::Corrupt("archive checksum mismatch".into()));
    }
    if sidecar.dtype != dtype {
        return Err(Error::SchemaViolation {
            record: 0,
            message: format!("sidecar declares {:?} but archive header says {:?}", sidecar.dtype, dtype),
        });
    }
    check_keys(&sidecar.keys, header.count)?;

    let dim = header.dim as usize;
    let mut r = ByteReader::new(&body[HEADER_LEN..]);
    let mut records = Vec::with_capacity(header.count as usize);
    for i in 0..header.count as usize {
        let row = (0..dim)
            .map(|_| match dtype {
                Dtype::F32 => r.f32().map(f64::from),
                Dtype::F64 => r.f64(),
            })
            .collect::<Result<Vec<f64>>>()?;
        if let Some(j) = row.iter().position(|v| !v.is_finite()) {
            return Err(Error::SchemaViolation {
                record: i,
                message: format!("non-finite value at component {j}"),
            });
        }
        records.push(row);
    }
    Ok(EmbeddingArchive {
        extractor: sidecar.extractor,
        crop_policy: sidecar.crop_policy,
        dtype,
        dim,
        keys: sidecar.keys,
        records,
    })
}

pub(crate) fn check_keys(keys: &[RecordKey], count: u64) -> Result<()> {
    if keys.len() as u64 != count {
        return Err(Error::SchemaViolation {
            record: keys.len().min(count as usize),
            message: format!("sidecar has {} keys for {count} records", keys.len()),
        });
    }
    let mut seen = HashSet::with_capacity(keys.len());
    for (i, k) in keys.iter().enumerate() {
        if !seen.insert(k) {
            return Err(Error::SchemaViolation {
                record: i,
                message: format!("duplicate key {k:?}"),
            });
        }
    }
    Ok(())
}

pub(crate) fn read_sidecar(path: &Path) -> Result<Sidecar> {
    let side = sidecar_path(path);
    let bytes = read_file(&side)?;
    serde_json::from_slice(&bytes).map_err(|e| Error::SchemaViolation {
        record: 0,
        message: format!("{}: {e}", side.display()),
    })
}

pub fn write_embedding_archive(path: impl AsRef<Path>, archive: &EmbeddingArchive) -> Result<()> {
    let path = path.as_ref();
    if let Some(r) = archive.records.iter().position(|r| r.len() != archive.dim) {
        return Err(Error::SchemaViolation {
            record: r,
            message: format!("record has {} values, archive dim is {}", archive.records[r].len(), archive.dim),
        });
    }
    check_keys(&archive.keys, archive.records.len() as u64)?;
    let sidecar = Sidecar {
        extractor: archive.extractor.clone(),
        crop_policy: archive.crop_policy.clone(),
        dtype: archive.dtype,
        promoted_on_read: Dtype::F64,
        keys: archive.keys.clone(),
    };
    let json = serde_json::to_vec_pretty(&sidecar).expect("sidecar serializes");
    atomic_write(path, &encode(archive))?;
    atomic_write(&sidecar_path(path), &json)
}

pub fn read_embedding_archive(path: impl AsRef<Path>) -> Result<EmbeddingArchive> {
    let path = path.as_ref();
    let bytes = read_file(path)?;
    // header problems outrank a missing sidecar
    parse_header(&bytes)?;
    let sidecar = read_sidecar(path)?;
    decode(&bytes, sidecar)
}
