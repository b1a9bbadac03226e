//! JSON-lines proposal archives and the retained-index file handed back to the embedder.
//!
//! One object per line. A proposal's index is its 0-based position among the
//! records of the same `(scene_id, image_id)`, in file order.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{atomic_write, read_file, EmbeddingArchive, RecordKey};
use crate::embedding::Embedding;
use crate::error::{Error, Result};
use crate::geometry::{BinaryMask, MaskProposal};
use crate::pipeline::ProposalBatch;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProposalRecord {
    pub scene_id: u32,
    pub image_id: u32,
    pub width: u32,
    pub height: u32,
    pub rle: Vec<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generator_iou: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stability: Option<f64>,
}

impl ProposalRecord {
    /// Converts to a domain proposal. Missing generator scores count as 1.0.
    pub fn to_proposal(&self) -> Result<MaskProposal> {
        for (name, v) in [("generator_iou", self.generator_iou), ("stability", self.stability)] {
            if let Some(v) = v {
                if !(0.0..=1.0).contains(&v) {
                    return Err(Error::InvalidConfig(format!("{name} = {v} outside [0, 1]")));
                }
            }
        }
        let mask = BinaryMask::from_runs(self.width, self.height, self.rle.clone())?;
        MaskProposal::new(mask, self.generator_iou.unwrap_or(1.0), self.stability.unwrap_or(1.0))
    }
}

pub(crate) fn parse_line(line: &str) -> std::result::Result<ProposalRecord, String> {
    let rec: ProposalRecord = serde_json::from_str(line).map_err(|e| e.to_string())?;
    rec.to_proposal().map_err(|e| e.to_string())?;
    Ok(rec)
}

/// Reads a proposal archive into per-image batches sorted by `(scene_id, image_id)`.
pub fn read_proposals(path: impl AsRef<Path>) -> Result<Vec<ProposalBatch>> {
    let path = path.as_ref();
    let bytes = read_file(path)?;
    let text = std::str::from_utf8(&bytes).map_err(|e| Error::Corrupt(format!("{}: {e}", path.display())))?;
    let mut batches: BTreeMap<(u32, u32), ProposalBatch> = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let schema = |message: String| Error::SchemaViolation { record: i + 1, message };
        let rec: ProposalRecord = serde_json::from_str(line).map_err(|e| schema(e.to_string()))?;
        let proposal = rec.to_proposal().map_err(|e| schema(e.to_string()))?;
        let batch = batches
            .entry((rec.scene_id, rec.image_id))
            .or_insert_with(|| ProposalBatch::new(rec.scene_id, rec.image_id, rec.width, rec.height));
        if (batch.width, batch.height) != (rec.width, rec.height) {
            return Err(schema(format!(
                "image size {}x{} conflicts with earlier {}x{}",
                rec.width, rec.height, batch.width, batch.height
            )));
        }
        batch.proposals.push(proposal);
    }
    Ok(batches.into_values().collect())
}

pub fn write_proposals(path: impl AsRef<Path>, batches: &[ProposalBatch]) -> Result<()> {
    let mut out = String::new();
    for b in batches {
        for p in &b.proposals {
            let rec = ProposalRecord {
                scene_id: b.scene_id,
                image_id: b.image_id,
                width: b.width,
                height: b.height,
                rle: p.mask().runs().to_vec(),
                generator_iou: Some(p.generator_iou()),
                stability: Some(p.stability()),
            };
            out.push_str(&serde_json::to_string(&rec).expect("record serializes"));
            out.push('\n');
        }
    }
    atomic_write(path.as_ref(), out.as_bytes())
}

/// Places proposal embeddings from an archive onto their batches.
pub fn attach_embeddings(batches: &mut [ProposalBatch], archive: &EmbeddingArchive) -> Result<()> {
    let index: BTreeMap<(u32, u32), usize> = batches
        .iter()
        .enumerate()
        .map(|(i, b)| ((b.scene_id, b.image_id), i))
        .collect();
    for (record, (key, values)) in archive.iter().enumerate() {
        let RecordKey::Proposal {
            scene_id,
            image_id,
            proposal_index,
        } = *key
        else {
            return Err(Error::SchemaViolation {
                record,
                message: "support key in a proposal embedding archive".into(),
            });
        };
        let batch = index
            .get(&(scene_id, image_id))
            .map(|&i| &mut batches[i])
            .ok_or(Error::UnknownImage { scene_id, image_id })?;
        let idx = proposal_index as usize;
        if idx >= batch.proposals.len() {
            return Err(Error::SchemaViolation {
                record,
                message: format!(
                    "proposal_index {idx} but image (scene {scene_id}, image {image_id}) has {} proposals",
                    batch.proposals.len()
                ),
            });
        }
        let e = Embedding::new(values.to_vec()).map_err(|e| Error::SchemaViolation {
            record,
            message: e.to_string(),
        })?;
        batch.embeddings.insert(idx, e);
    }
    Ok(())
}

/// Retained proposal indices for one image, as written by `filter-proposals`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RetainedEntry {
    pub scene_id: u32,
    pub image_id: u32,
    pub proposal_indices: Vec<usize>,
}

pub fn write_retained(path: impl AsRef<Path>, entries: &[RetainedEntry]) -> Result<()> {
    let json = serde_json::to_vec_pretty(entries).expect("retained entries serialize");
    atomic_write(path.as_ref(), &json)
}

pub fn read_retained(path: impl AsRef<Path>) -> Result<Vec<RetainedEntry>> {
    let path = path.as_ref();
    let bytes = read_file(path)?;
    serde_json::from_slice(&bytes).map_err(|e| Error::SchemaViolation {
        record: 0,
        message: format!("{}: {e}", path.display()),
    })
}
