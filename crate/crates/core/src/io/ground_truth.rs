//! Local ground-truth file, COCO-flavoured:
//!
//! ```json
//! {
//!   "categories":  [{"id": 1, "name": "bracket"}],
//!   "images":      [{"scene_id": 1, "image_id": 0, "width": 640, "height": 480}],
//!   "annotations": [{"scene_id": 1, "image_id": 0, "category_id": 1, "bbox": [x, y, w, h], "ignore": false}]
//! }
//! ```
//!
//! `categories` and `images` may be omitted; they are then derived from the annotations.

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{atomic_write, read_file};
use crate::error::{Error, Result};
use crate::geometry::BoundingBox;
use crate::prototype::ClassId;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Category {
    pub id: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImageInfo {
    pub scene_id: u32,
    pub image_id: u32,
    pub width: u32,
    pub height: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroundTruthAnnotation {
    pub scene_id: u32,
    pub image_id: u32,
    pub category_id: u32,
    pub bbox: [u32; 4],
    #[serde(default)]
    pub ignore: bool,
}

impl GroundTruthAnnotation {
    pub fn class_id(&self) -> ClassId {
        ClassId(self.category_id)
    }

    pub fn bounding_box(&self) -> Result<BoundingBox> {
        let [x, y, w, h] = self.bbox;
        BoundingBox::new(x, y, w, h)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroundTruth {
    #[serde(default)]
    pub categories: Vec<Category>,
    #[serde(default)]
    pub images: Vec<ImageInfo>,
    pub annotations: Vec<GroundTruthAnnotation>,
}

impl GroundTruth {
    /// Registered classes: listed categories plus any class used by an annotation.
    pub fn class_ids(&self) -> BTreeSet<ClassId> {
        self.categories
            .iter()
            .map(|c| ClassId(c.id))
            .chain(self.annotations.iter().map(GroundTruthAnnotation::class_id))
            .collect()
    }

    /// Evaluated images: listed images plus any image carrying an annotation.
    pub fn image_keys(&self) -> BTreeSet<(u32, u32)> {
        self.images
            .iter()
            .map(|i| (i.scene_id, i.image_id))
            .chain(self.annotations.iter().map(|a| (a.scene_id, a.image_id)))
            .collect()
    }

    /// Every structural problem, as `(annotation index, message)`.
    pub fn problems(&self) -> Vec<(usize, String)> {
        let mut out = Vec::new();
        let mut seen = BTreeSet::new();
        for img in &self.images {
            if !seen.insert((img.scene_id, img.image_id)) {
                out.push((0, format!("duplicate image (scene {}, image {})", img.scene_id, img.image_id)));
            }
        }
        for (i, a) in self.annotations.iter().enumerate() {
            let b = match a.bounding_box() {
                Ok(b) => b,
                Err(e) => {
                    out.push((i, e.to_string()));
                    continue;
                }
            };
            if let Some(img) = self
                .images
                .iter()
                .find(|im| im.scene_id == a.scene_id && im.image_id == a.image_id)
            {
                if !b.fits_within(img.width, img.height) {
                    out.push((i, format!("bbox {:?} exceeds image {}x{}", a.bbox, img.width, img.height)));
                }
            }
        }
        out
    }
}

pub fn read_ground_truth(path: impl AsRef<Path>) -> Result<GroundTruth> {
    let path = path.as_ref();
    let bytes = read_file(path)?;
    let gt: GroundTruth = serde_json::from_slice(&bytes).map_err(|e| Error::SchemaViolation {
        record: 0,
        message: format!("{}: {e}", path.display()),
    })?;
    if let Some((record, message)) = gt.problems().into_iter().next() {
        return Err(Error::SchemaViolation { record, message });
    }
    Ok(gt)
}

pub fn write_ground_truth(path: impl AsRef<Path>, gt: &GroundTruth) -> Result<()> {
    let json = serde_json::to_vec_pretty(gt).expect("ground truth serializes");
    atomic_write(path.as_ref(), &json)
}
