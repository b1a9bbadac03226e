//! Format validation that collects every violation instead of stopping at the first.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::path::Path;

use serde::Serialize;

use super::embedding_archive::{expected_len, parse_header, read_sidecar, Dtype, Sidecar, ARCHIVE_MAGIC, ARCHIVE_VERSION, HEADER_LEN};
use super::proposals::parse_line;
use super::results::canonical_cmp;
use super::{read_file, BopDetection, GroundTruth, RetainedEntry};
use crate::error::{Error, Result};
use crate::pipeline::PipelineConfig;
use crate::prototype::STORE_MAGIC;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum FileKind {
    EmbeddingArchive,
    PrototypeStore,
    ProposalArchive,
    BopResults,
    GroundTruth,
    RetainedIndices,
    Sidecar,
    RunConfig,
    Unknown,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ViolationKind {
    UnknownFormat,
    BadMagic,
    VersionMismatch,
    DtypeMismatch,
    LengthMismatch,
    Checksum,
    Sidecar,
    Schema,
    Ordering,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Violation {
    pub kind: ViolationKind,
    pub location: String,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?} at {}: {}", self.kind, self.location, self.message)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ValidationReport {
    pub kind: FileKind,
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }
}

struct Collector(Vec<Violation>);

impl Collector {
    fn push(&mut self, kind: ViolationKind, location: impl Into<String>, message: impl Into<String>) {
        self.0.push(Violation {
            kind,
            location: location.into(),
            message: message.into(),
        });
    }
}

/// Detects the file's format and checks it. Only I/O failures are errors.
pub fn validate(path: impl AsRef<Path>) -> Result<ValidationReport> {
    let path = path.as_ref();
    let bytes = read_file(path)?;
    let mut c = Collector(Vec::new());
    let kind = detect_kind(path, &bytes);
    match kind {
        FileKind::EmbeddingArchive => check_archive(path, &bytes, &mut c)?,
        FileKind::PrototypeStore => check_store(&bytes, &mut c),
        FileKind::ProposalArchive => check_proposals(&bytes, &mut c),
        FileKind::BopResults => check_results(&bytes, &mut c),
        FileKind::GroundTruth => check_ground_truth(&bytes, &mut c),
        FileKind::RetainedIndices => check_json::<Vec<RetainedEntry>>(&bytes, &mut c),
        FileKind::Sidecar => check_json::<Sidecar>(&bytes, &mut c),
        FileKind::RunConfig => check_config(&bytes, &mut c),
        FileKind::Unknown => c.push(ViolationKind::UnknownFormat, "file", "unrecognized file format"),
    }
    Ok(ValidationReport { kind, violations: c.0 })
}

fn detect_kind(path: &Path, bytes: &[u8]) -> FileKind {
    if bytes.starts_with(&ARCHIVE_MAGIC) {
        return FileKind::EmbeddingArchive;
    }
    if bytes.starts_with(&STORE_MAGIC) {
        return FileKind::PrototypeStore;
    }
    let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("");
    match ext {
        "toml" => return FileKind::RunConfig,
        "jsonl" | "ndjson" => return FileKind::ProposalArchive,
        _ => {}
    }
    let Ok(value) = serde_json::from_slice::<serde_json::Value>(bytes) else {
        return if ext == "json" { FileKind::BopResults } else { FileKind::Unknown };
    };
    match &value {
        serde_json::Value::Array(items) => match items.first() {
            Some(first) if first.get("proposal_indices").is_some() => FileKind::RetainedIndices,
            _ => FileKind::BopResults,
        },
        serde_json::Value::Object(map) if map.contains_key("annotations") => FileKind::GroundTruth,
        serde_json::Value::Object(map) if map.contains_key("keys") && map.contains_key("extractor") => FileKind::Sidecar,
        _ => FileKind::Unknown,
    }
}

fn check_archive(path: &Path, bytes: &[u8], c: &mut Collector) -> Result<()> {
    let header = match parse_header(bytes) {
        Ok(h) => h,
        Err(e) => {
            c.push(ViolationKind::LengthMismatch, "header", e.to_string());
            return Ok(());
        }
    };
    if header.version != ARCHIVE_VERSION {
        c.push(
            ViolationKind::VersionMismatch,
            "header.version",
            format!("version {} (expected {ARCHIVE_VERSION})", header.version),
        );
    }
    let Some(declared) = Dtype::from_tag(header.dtype_tag) else {
        c.push(ViolationKind::Schema, "header.dtype", format!("unknown dtype tag {}", header.dtype_tag));
        return Ok(());
    };

    // the dtype the payload length actually supports, when it differs from the header
    let fits = |d: Dtype| expected_len(header.dim, header.count, d) == Some(bytes.len() as u64);
    let mut payload_dtype = Some(declared);
    if !fits(declared) {
        let other = match declared {
            Dtype::F32 => Dtype::F64,
            Dtype::F64 => Dtype::F32,
        };
        if header.count > 0 && header.dim > 0 && fits(other) {
            c.push(
                ViolationKind::DtypeMismatch,
                "header.dtype",
                format!("header declares {declared:?} but payload size matches {other:?}"),
            );
            payload_dtype = Some(other);
        } else {
            c.push(
                ViolationKind::LengthMismatch,
                "payload",
                format!(
                    "file is {} bytes; header (dim {}, count {}, {declared:?}) implies {}",
                    bytes.len(),
                    header.dim,
                    header.count,
                    expected_len(header.dim, header.count, declared).map_or("overflow".into(), |n| n.to_string())
                ),
            );
            payload_dtype = None;
        }
    } else {
        let (body, trailer) = bytes.split_at(bytes.len() - 4);
        let stored = u32::from_le_bytes(trailer.try_into().unwrap());
        let actual = crc32fast::hash(body);
        if stored != actual {
            c.push(
                ViolationKind::Checksum,
                "trailer",
                format!("stored crc {stored:#010x}, computed {actual:#010x}"),
            );
        }
        let width = declared.width();
        let dim = header.dim as usize;
        for (i, chunk) in body[HEADER_LEN..].chunks_exact(width * dim.max(1)).enumerate().take(header.count as usize) {
            let bad = chunk.chunks_exact(width).position(|v| match declared {
                Dtype::F32 => !f32::from_le_bytes(v.try_into().unwrap()).is_finite(),
                Dtype::F64 => !f64::from_le_bytes(v.try_into().unwrap()).is_finite(),
            });
            if let Some(j) = bad {
                c.push(ViolationKind::Schema, format!("record {i}"), format!("non-finite value at component {j}"));
            }
        }
    }

    match read_sidecar(path) {
        Err(Error::Io { path, source }) => {
            c.push(ViolationKind::Sidecar, path.display().to_string(), source.to_string());
        }
        Err(e) => c.push(ViolationKind::Sidecar, "sidecar", e.to_string()),
        Ok(side) => {
            if let Some(actual) = payload_dtype {
                if side.dtype != actual {
                    c.push(
                        ViolationKind::DtypeMismatch,
                        "sidecar.dtype",
                        format!("sidecar declares {:?}, archive payload is {actual:?}", side.dtype),
                    );
                }
            }
            if side.keys.len() as u64 != header.count {
                c.push(
                    ViolationKind::Sidecar,
                    "sidecar.keys",
                    format!("{} keys for {} records", side.keys.len(), header.count),
                );
            }
            let mut seen = HashSet::new();
            for (i, k) in side.keys.iter().enumerate() {
                if !seen.insert(k) {
                    c.push(ViolationKind::Sidecar, format!("sidecar.keys[{i}]"), format!("duplicate key {k:?}"));
                }
            }
        }
    }
    Ok(())
}

fn check_store(bytes: &[u8], c: &mut Collector) {
    if let Err(e) = crate::prototype::store_file::decode_store(bytes) {
        let kind = match e {
            Error::BadMagic { .. } => ViolationKind::BadMagic,
            Error::VersionMismatch { .. } => ViolationKind::VersionMismatch,
            Error::Corrupt(ref m) if m.contains("checksum") => ViolationKind::Checksum,
            Error::Corrupt(_) => ViolationKind::LengthMismatch,
            _ => ViolationKind::Schema,
        };
        c.push(kind, "store", e.to_string());
    }
}

fn check_proposals(bytes: &[u8], c: &mut Collector) {
    let Ok(text) = std::str::from_utf8(bytes) else {
        c.push(ViolationKind::Schema, "file", "not valid UTF-8");
        return;
    };
    let mut sizes: BTreeMap<(u32, u32), (u32, u32, usize)> = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let loc = format!("line {}", i + 1);
        match parse_line(line) {
            Err(m) => c.push(ViolationKind::Schema, loc, m),
            Ok(rec) => {
                let first = sizes
                    .entry((rec.scene_id, rec.image_id))
                    .or_insert((rec.width, rec.height, i + 1));
                if (first.0, first.1) != (rec.width, rec.height) {
                    c.push(
                        ViolationKind::Schema,
                        loc,
                        format!(
                            "image size {}x{} conflicts with {}x{} on line {}",
                            rec.width, rec.height, first.0, first.1, first.2
                        ),
                    );
                }
            }
        }
    }
}

fn check_results(bytes: &[u8], c: &mut Collector) {
    let records: Vec<BopDetection> = match serde_json::from_slice(bytes) {
        Ok(r) => r,
        Err(e) => {
            c.push(ViolationKind::Schema, format!("line {}, column {}", e.line(), e.column()), e.to_string());
            return;
        }
    };
    for (i, r) in records.iter().enumerate() {
        if let Err(m) = r.check() {
            c.push(ViolationKind::Schema, format!("record {i}"), m);
        }
    }
    if let Some(i) = records
        .windows(2)
        .position(|w| canonical_cmp(&w[0], &w[1]) == std::cmp::Ordering::Greater)
    {
        c.push(
            ViolationKind::Ordering,
            format!("record {}", i + 1),
            "results not sorted by (scene_id, image_id, descending score)",
        );
    }
}

fn check_ground_truth(bytes: &[u8], c: &mut Collector) {
    match serde_json::from_slice::<GroundTruth>(bytes) {
        Err(e) => c.push(ViolationKind::Schema, format!("line {}, column {}", e.line(), e.column()), e.to_string()),
        Ok(gt) => {
            for (i, m) in gt.problems() {
                c.push(ViolationKind::Schema, format!("annotation {i}"), m);
            }
        }
    }
}

fn check_json<T: serde::de::DeserializeOwned>(bytes: &[u8], c: &mut Collector) {
    if let Err(e) = serde_json::from_slice::<T>(bytes) {
        c.push(ViolationKind::Schema, format!("line {}, column {}", e.line(), e.column()), e.to_string());
    }
}

fn check_config(bytes: &[u8], c: &mut Collector) {
    let Ok(text) = std::str::from_utf8(bytes) else {
        c.push(ViolationKind::Schema, "file", "not valid UTF-8");
        return;
    };
    match toml::from_str::<PipelineConfig>(text) {
        Err(e) => c.push(ViolationKind::Schema, "config", e.to_string()),
        Ok(cfg) => {
            if let Err(e) = cfg.validate() {
                c.push(ViolationKind::Schema, "config", e.to_string());
            }
        }
    }
}
