//! Readers and writers for every interchange format the engine touches.
//!
//! All binary payloads are little-endian. Every writer goes through
//! [`atomic_write`], so a crashed run never leaves a half-written file at the
//! destination path.

mod config;
mod embedding_archive;
mod ground_truth;
mod proposals;
mod results;
mod validate;

use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

pub use config::{read_config, render_config, write_config};
pub use embedding_archive::{
    read_embedding_archive, sidecar_path, write_embedding_archive, Dtype, EmbeddingArchive, RecordKey,
    ARCHIVE_MAGIC, ARCHIVE_VERSION,
};
pub use ground_truth::{read_ground_truth, write_ground_truth, Category, GroundTruth, GroundTruthAnnotation, ImageInfo};
pub use proposals::{
    attach_embeddings, read_proposals, read_retained, write_proposals, write_retained, ProposalRecord, RetainedEntry,
};
pub use results::{read_results, results_from_runs, write_results, BopDetection};
pub use validate::{validate, FileKind, ValidationReport, Violation, ViolationKind};

/// Writes `bytes` to a temp file next to `path`, then renames it into place.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(tmp.path(), e))?;
    tmp.as_file().sync_all().map_err(|e| Error::io(tmp.path(), e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

pub(crate) fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

/// Bounds-checked little-endian cursor.
pub(crate) struct ByteReader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    pub(crate) fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    pub(crate) fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    pub(crate) fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.remaining() < n {
            return Err(Error::Corrupt(format!(
                "unexpected end of data at byte {} (wanted {n}, have {})",
                self.pos,
                self.remaining()
            )));
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take(N)?.try_into().unwrap())
    }

    pub(crate) fn u8(&mut self) -> Result<u8> {
        Ok(self.array::<1>()?[0])
    }

    pub(crate) fn u16(&mut self) -> Result<u16> {
        self.array().map(u16::from_le_bytes)
    }

    pub(crate) fn u32(&mut self) -> Result<u32> {
        self.array().map(u32::from_le_bytes)
    }

    pub(crate) fn u64(&mut self) -> Result<u64> {
        self.array().map(u64::from_le_bytes)
    }

    pub(crate) fn f32(&mut self) -> Result<f32> {
        self.array().map(f32::from_le_bytes)
    }

    pub(crate) fn f64(&mut self) -> Result<f64> {
        self.array().map(f64::from_le_bytes)
    }

    pub(crate) fn utf8(&mut self, len: usize) -> Result<String> {
        let bytes = self.take(len)?;
        String::from_utf8(bytes.to_vec()).map_err(|e| Error::Corrupt(format!("invalid UTF-8: {e}")))
    }
}
