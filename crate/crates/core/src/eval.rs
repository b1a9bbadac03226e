//! Local AP evaluator following the COCO protocol that BOP adopts for 2D detection.
//!
//! AP is computed per class and IoU threshold with 101-point interpolation,
//! then averaged over classes that have at least one non-ignored ground truth,
//! then over the ten thresholds 0.50:0.05:0.95. There is no per-image
//! detection cap and no area ranges.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::geometry::{box_iou, BoundingBox};
use crate::io::{BopDetection, GroundTruth};
use crate::prototype::ClassId;

pub const NUM_IOU_THRESHOLDS: usize = 10;
pub const NUM_RECALL_POINTS: usize = 101;

/// 0.50, 0.55, ..., 0.95.
pub fn iou_thresholds() -> [f64; NUM_IOU_THRESHOLDS] {
    std::array::from_fn(|i| (50 + 5 * i) as f64 / 100.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum MatchLabel {
    TruePositive,
    FalsePositive,
    /// Matched an ignore-flagged ground truth; excluded from the PR curve.
    Ignored,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GtBox {
    pub bbox: BoundingBox,
    pub ignore: bool,
}

/// Greedy matching of one image's same-class detections, already sorted by
/// descending score. Each detection takes the unmatched ground truth with the
/// highest IoU at or above `iou_threshold`, preferring non-ignored boxes.
pub fn match_detections(dets: &[BoundingBox], gts: &[GtBox], iou_threshold: f64) -> Vec<MatchLabel> {
    // non-ignored first, stable
    let mut order: Vec<usize> = (0..gts.len()).collect();
    order.sort_by_key(|&g| gts[g].ignore);
    let mut taken = vec![false; gts.len()];

    dets.iter()
        .map(|det| {
            let mut best: Option<usize> = None;
            let mut best_iou = iou_threshold.min(1.0 - 1e-10);
            for &g in &order {
                if taken[g] {
                    continue;
                }
                if let Some(b) = best {
                    if !gts[b].ignore && gts[g].ignore {
                        break;
                    }
                }
                let iou = box_iou(det, &gts[g].bbox);
                if iou < best_iou {
                    continue;
                }
                best_iou = iou;
                best = Some(g);
            }
            match best {
                None => MatchLabel::FalsePositive,
                Some(g) => {
                    taken[g] = true;
                    if gts[g].ignore {
                        MatchLabel::Ignored
                    } else {
                        MatchLabel::TruePositive
                    }
                }
            }
        })
        .collect()
}

/// 101-point interpolated AP for labels in descending score order. `None` when `n_gt == 0`.
pub fn average_precision(labels: &[MatchLabel], n_gt: usize) -> Option<f64> {
    if n_gt == 0 {
        return None;
    }
    let mut recall = Vec::with_capacity(labels.len());
    let mut precision = Vec::with_capacity(labels.len());
    let (mut tp, mut fp) = (0usize, 0usize);
    for label in labels {
        match label {
            MatchLabel::TruePositive => tp += 1,
            MatchLabel::FalsePositive => fp += 1,
            MatchLabel::Ignored => continue,
        }
        recall.push(tp as f64 / n_gt as f64);
        precision.push(tp as f64 / (tp + fp) as f64);
    }
    for i in (1..precision.len()).rev() {
        if precision[i] > precision[i - 1] {
            precision[i - 1] = precision[i];
        }
    }
    let mut total = 0.0;
    for r in 0..NUM_RECALL_POINTS {
        let target = r as f64 / (NUM_RECALL_POINTS - 1) as f64;
        let idx = recall.partition_point(|&rc| rc < target);
        if idx < precision.len() {
            total += precision[idx];
        }
    }
    Some(total / NUM_RECALL_POINTS as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ApReport {
    /// Mean over thresholds, for classes with at least one ground truth.
    pub per_class_ap: BTreeMap<ClassId, f64>,
    /// Keyed by threshold formatted with two decimals ("0.50" ... "0.95").
    pub per_threshold_ap: BTreeMap<String, f64>,
    pub mean_ap: f64,
    /// AP at each threshold, per class.
    pub per_class_threshold_ap: BTreeMap<ClassId, Vec<f64>>,
    pub num_ground_truth: BTreeMap<ClassId, usize>,
    pub num_detections: usize,
}

impl ApReport {
    /// CSV with one row per class plus a final `mean` row; columns are AP@each threshold and the mean.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("class_id");
        for t in iou_thresholds() {
            let _ = write!(out, ",ap_{t:.2}");
        }
        out.push_str(",mean_ap\n");
        for (class, aps) in &self.per_class_threshold_ap {
            let _ = write!(out, "{class}");
            for ap in aps {
                let _ = write!(out, ",{ap}");
            }
            let _ = writeln!(out, ",{}", self.per_class_ap[class]);
        }
        out.push_str("mean");
        for ap in self.per_threshold_ap.values() {
            let _ = write!(out, ",{ap}");
        }
        let _ = writeln!(out, ",{}", self.mean_ap);
        out
    }

    /// Fixed-width table for terminals.
    pub fn to_table(&self) -> String {
        let mut out = format!("{:>8}", "class");
        for t in iou_thresholds() {
            let _ = write!(out, " {:>6}", format!("{t:.2}"));
        }
        let _ = writeln!(out, " {:>7}", "AP");
        for (class, aps) in &self.per_class_threshold_ap {
            let _ = write!(out, "{class:>8}");
            for ap in aps {
                let _ = write!(out, " {:>6.3}", ap);
            }
            let _ = writeln!(out, " {:>7.4}", self.per_class_ap[class]);
        }
        let _ = write!(out, "{:>8}", "mean");
        for ap in self.per_threshold_ap.values() {
            let _ = write!(out, " {:>6.3}", ap);
        }
        let _ = writeln!(out, " {:>7.4}", self.mean_ap);
        out
    }
}

/// Evaluates detections (in file order) against ground truth.
pub fn evaluate(dets: &[BopDetection], gt: &GroundTruth) -> Result<ApReport> {
    let prepared = PreparedEvaluation::new(dets, gt)?;
    let per_class = prepared
        .classes()
        .into_iter()
        .map(|c| (c, prepared.class_threshold_ap(c)))
        .collect();
    Ok(prepared.finish(per_class))
}

/// Validated, indexed inputs. Classes are independent, so callers may compute
/// [`class_threshold_ap`](Self::class_threshold_ap) concurrently and hand the
/// results to [`finish`](Self::finish).
#[derive(Debug)]
pub struct PreparedEvaluation<'a> {
    dets: &'a [BopDetection],
    det_boxes: Vec<BoundingBox>,
    // (class, scene, image) -> ground truth boxes
    gt_index: HashMap<(ClassId, u32, u32), Vec<GtBox>>,
    n_gt: BTreeMap<ClassId, usize>,
    // detections per class, by descending score with file order on ties
    by_class: BTreeMap<ClassId, Vec<usize>>,
}

impl<'a> PreparedEvaluation<'a> {
    pub fn new(dets: &'a [BopDetection], gt: &GroundTruth) -> Result<Self> {
        let classes = gt.class_ids();
        let images = gt.image_keys();

        let mut det_boxes = Vec::with_capacity(dets.len());
        for d in dets {
            if !classes.contains(&d.class_id()) {
                return Err(Error::UnknownClass(d.category_id));
            }
            if !images.contains(&(d.scene_id, d.image_id)) {
                return Err(Error::UnknownImage {
                    scene_id: d.scene_id,
                    image_id: d.image_id,
                });
            }
            if !d.score.is_finite() {
                return Err(Error::SchemaViolation {
                    record: det_boxes.len(),
                    message: format!("non-finite score {}", d.score),
                });
            }
            det_boxes.push(d.bounding_box()?);
        }

        let mut gt_index: HashMap<(ClassId, u32, u32), Vec<GtBox>> = HashMap::new();
        let mut n_gt: BTreeMap<ClassId, usize> = classes.iter().map(|&c| (c, 0)).collect();
        for a in &gt.annotations {
            gt_index
                .entry((a.class_id(), a.scene_id, a.image_id))
                .or_default()
                .push(GtBox {
                    bbox: a.bounding_box()?,
                    ignore: a.ignore,
                });
            if !a.ignore {
                *n_gt.get_mut(&a.class_id()).unwrap() += 1;
            }
        }

        let mut by_class: BTreeMap<ClassId, Vec<usize>> = BTreeMap::new();
        for (i, d) in dets.iter().enumerate() {
            by_class.entry(d.class_id()).or_default().push(i);
        }
        for idxs in by_class.values_mut() {
            idxs.sort_by(|&a, &b| dets[b].score.total_cmp(&dets[a].score).then(a.cmp(&b)));
        }
        Ok(Self {
            dets,
            det_boxes,
            gt_index,
            n_gt,
            by_class,
        })
    }

    /// Classes with at least one non-ignored ground truth box; the only ones that get an AP.
    pub fn classes(&self) -> Vec<ClassId> {
        self.n_gt.iter().filter(|&(_, &n)| n > 0).map(|(&c, _)| c).collect()
    }

    /// AP of one class at each IoU threshold.
    pub fn class_threshold_ap(&self, class: ClassId) -> Vec<f64> {
        let count = self.n_gt.get(&class).copied().unwrap_or(0);
        let order = self.by_class.get(&class).map(Vec::as_slice).unwrap_or(&[]);
        iou_thresholds()
            .iter()
            .map(|&t| {
                let labels = class_labels(self.dets, &self.det_boxes, order, class, &self.gt_index, t);
                average_precision(&labels, count).unwrap_or(0.0)
            })
            .collect()
    }

    pub fn finish(self, per_class_threshold_ap: BTreeMap<ClassId, Vec<f64>>) -> ApReport {
        let thresholds = iou_thresholds();
        let per_class_ap = per_class_threshold_ap
            .iter()
            .map(|(&c, aps)| (c, aps.iter().sum::<f64>() / aps.len() as f64))
            .collect();
        let n_classes = per_class_threshold_ap.len();
        let per_threshold: Vec<f64> = (0..NUM_IOU_THRESHOLDS)
            .map(|t| {
                if n_classes == 0 {
                    0.0
                } else {
                    per_class_threshold_ap.values().map(|aps| aps[t]).sum::<f64>() / n_classes as f64
                }
            })
            .collect();
        let mean_ap = per_threshold.iter().sum::<f64>() / NUM_IOU_THRESHOLDS as f64;
        let per_threshold_ap = thresholds
            .iter()
            .zip(&per_threshold)
            .map(|(t, ap)| (format!("{t:.2}"), *ap))
            .collect();

        ApReport {
            per_class_ap,
            per_threshold_ap,
            mean_ap,
            per_class_threshold_ap,
            num_ground_truth: self.n_gt.into_iter().filter(|&(_, n)| n > 0).collect(),
            num_detections: self.dets.len(),
        }
    }
}

/// Labels for one class at one threshold, in global score order.
fn class_labels(
    dets: &[BopDetection],
    det_boxes: &[BoundingBox],
    order: &[usize],
    class: ClassId,
    gt_index: &HashMap<(ClassId, u32, u32), Vec<GtBox>>,
    threshold: f64,
) -> Vec<MatchLabel> {
    // split the global order per image; matching is independent between images
    let mut per_image: BTreeMap<(u32, u32), Vec<usize>> = BTreeMap::new();
    for (pos, &i) in order.iter().enumerate() {
        per_image.entry((dets[i].scene_id, dets[i].image_id)).or_default().push(pos);
    }
    let mut labels = vec![MatchLabel::FalsePositive; order.len()];
    for ((scene, image), positions) in per_image {
        let boxes: Vec<BoundingBox> = positions.iter().map(|&p| det_boxes[order[p]]).collect();
        let gts = gt_index.get(&(class, scene, image)).map(Vec::as_slice).unwrap_or(&[]);
        for (p, label) in positions.into_iter().zip(match_detections(&boxes, gts, threshold)) {
            labels[p] = label;
        }
    }
    labels
}
