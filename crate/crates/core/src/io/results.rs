//! BOP 2D detection result files: a single JSON array of detections.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{atomic_write, read_file};
use crate::error::{Error, Result};
use crate::geometry::BoundingBox;
use crate::pipeline::DetectionRun;
use crate::prototype::ClassId;

/// Written when matching time was not recorded.
pub const UNKNOWN_TIME: f64 = -1.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BopDetection {
    pub scene_id: u32,
    pub image_id: u32,
    pub category_id: u32,
    pub bbox: [u32; 4],
    pub score: f64,
    pub time: f64,
}

impl BopDetection {
    pub fn class_id(&self) -> ClassId {
        ClassId(self.category_id)
    }

    pub fn bounding_box(&self) -> Result<BoundingBox> {
        let [x, y, w, h] = self.bbox;
        BoundingBox::new(x, y, w, h)
    }

    pub(crate) fn check(&self) -> std::result::Result<(), String> {
        if !self.score.is_finite() {
            return Err(format!("non-finite score {}", self.score));
        }
        if !self.time.is_finite() {
            return Err(format!("non-finite time {}", self.time));
        }
        self.bounding_box().map(|_| ()).map_err(|e| e.to_string())
    }
}

/// Canonical result order: scene, image, then descending score.
pub(crate) fn canonical_cmp(a: &BopDetection, b: &BopDetection) -> std::cmp::Ordering {
    (a.scene_id, a.image_id)
        .cmp(&(b.scene_id, b.image_id))
        .then(b.score.total_cmp(&a.score))
}

/// Flattens detection runs into canonical BOP order. Within a run, equal scores keep detection order.
pub fn results_from_runs(runs: &[DetectionRun]) -> Vec<BopDetection> {
    let mut out: Vec<BopDetection> = runs
        .iter()
        .flat_map(|run| {
            run.detections.iter().map(move |d| BopDetection {
                scene_id: run.scene_id,
                image_id: run.image_id,
                category_id: d.class_id.0,
                bbox: d.bbox.to_array(),
                score: d.score,
                time: run.elapsed_secs.unwrap_or(UNKNOWN_TIME),
            })
        })
        .collect();
    out.sort_by(canonical_cmp);
    out
}

pub fn write_results(path: impl AsRef<Path>, results: &[BopDetection]) -> Result<()> {
    let mut sorted = results.to_vec();
    sorted.sort_by(canonical_cmp);
    let json = serde_json::to_vec(&sorted).expect("results serialize");
    atomic_write(path.as_ref(), &json)
}

/// Reads a result file in file order. Ordering is not enforced here; `validate` reports it.
pub fn read_results(path: impl AsRef<Path>) -> Result<Vec<BopDetection>> {
    let path = path.as_ref();
    let bytes = read_file(path)?;
    let records: Vec<BopDetection> = serde_json::from_slice(&bytes).map_err(|e| Error::SchemaViolation {
        record: 0,
        message: format!("{}: {e}", path.display()),
    })?;
    for (i, r) in records.iter().enumerate() {
        r.check().map_err(|message| Error::SchemaViolation { record: i, message })?;
    }
    Ok(records)
}
