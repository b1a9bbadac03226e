//! Per-image detection: proposal filtering, prototype matching, score gating
//! and class-wise suppression.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::embedding::{cosine_scores, l2_normalize, Embedding, ScoreBreakdown};
use crate::error::{Error, Result};
use crate::geometry::{box_iou, mask_iou, nms, nms_with, BoundingBox, MaskProposal};
use crate::prototype::{ClassId, PrototypeStore};

/// Overlap measure used by proposal-stage NMS.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProposalOverlap {
    #[default]
    Box,
    Mask,
}

/// Thresholds for one detection run. Defaults follow the reference configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Proposals smaller than this fraction of the image area are dropped.
    pub min_area_ratio: f64,
    /// Floor on the generator's predicted IoU.
    pub generator_iou_floor: f64,
    /// Floor on the generator's stability score.
    pub stability_floor: f64,
    /// Proposal NMS threshold.
    pub theta_nms: f64,
    pub proposal_overlap: ProposalOverlap,
    /// Filter threshold on `s_max + p_max`.
    pub tau: f64,
    pub classwise_nms_iou: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            min_area_ratio: 0.0005,
            generator_iou_floor: 0.60,
            stability_floor: 0.85,
            theta_nms: 0.75,
            proposal_overlap: ProposalOverlap::Box,
            tau: 0.4,
            classwise_nms_iou: 0.5,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("min_area_ratio", self.min_area_ratio),
            ("generator_iou_floor", self.generator_iou_floor),
            ("stability_floor", self.stability_floor),
            ("theta_nms", self.theta_nms),
            ("classwise_nms_iou", self.classwise_nms_iou),
        ];
        for (name, v) in fields {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::InvalidConfig(format!("{name} = {v} is outside [0, 1]")));
            }
        }
        // S_filter spans (-1, 2), so tau is only required to be a number
        if !self.tau.is_finite() {
            return Err(Error::InvalidConfig(format!("tau = {} is not finite", self.tau)));
        }
        Ok(())
    }
}

/// All proposals of one scene image, with optional crop embeddings keyed by proposal index.
#[derive(Debug, Clone, PartialEq)]
pub struct ProposalBatch {
    pub scene_id: u32,
    pub image_id: u32,
    pub width: u32,
    pub height: u32,
    pub proposals: Vec<MaskProposal>,
    pub embeddings: BTreeMap<usize, Embedding>,
}

impl ProposalBatch {
    pub fn new(scene_id: u32, image_id: u32, width: u32, height: u32) -> Self {
        Self {
            scene_id,
            image_id,
            width,
            height,
            proposals: Vec::new(),
            embeddings: BTreeMap::new(),
        }
    }

    pub fn check(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::InvalidConfig(format!(
                "image (scene {}, image {}) has zero size",
                self.scene_id, self.image_id
            )));
        }
        for (i, p) in self.proposals.iter().enumerate() {
            if p.mask().width() != self.width || p.mask().height() != self.height {
                return Err(Error::SchemaViolation {
                    record: i,
                    message: format!(
                        "mask is {}x{} but image is {}x{}",
                        p.mask().width(),
                        p.mask().height(),
                        self.width,
                        self.height
                    ),
                });
            }
        }
        if let Some((&i, _)) = self.embeddings.range(self.proposals.len()..).next() {
            return Err(Error::SchemaViolation {
                record: i,
                message: format!("embedding for proposal {i} but batch has {} proposals", self.proposals.len()),
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub bbox: BoundingBox,
    pub class_id: ClassId,
    /// `s_max + p_max + s_mc`.
    pub score: f64,
    pub proposal_index: usize,
    pub scores: ScoreBreakdown,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectionRun {
    pub scene_id: u32,
    pub image_id: u32,
    pub detections: Vec<Detection>,
    /// Engine-side matching time, when recorded.
    pub elapsed_secs: Option<f64>,
}

/// Area, score and NMS filtering of raw proposals. Returns retained indices in ascending order.
pub fn filter_proposals(batch: &ProposalBatch, cfg: &PipelineConfig) -> Vec<usize> {
    let image_area = batch.width as f64 * batch.height as f64;
    // the ratio is a short decimal; allow for its binary rounding so area == ratio*W*H is kept
    let min_area = cfg.min_area_ratio * image_area * (1.0 - 1e-12);

    let survivors: Vec<usize> = batch
        .proposals
        .iter()
        .enumerate()
        .filter(|(_, p)| p.area_px() as f64 >= min_area)
        .filter(|(_, p)| p.generator_iou() >= cfg.generator_iou_floor && p.stability() >= cfg.stability_floor)
        .map(|(i, _)| i)
        .collect();

    let scores: Vec<f64> = survivors
        .iter()
        .map(|&i| batch.proposals[i].generator_iou())
        .collect();
    let kept = match cfg.proposal_overlap {
        ProposalOverlap::Box => {
            let items: Vec<(BoundingBox, f64)> = survivors
                .iter()
                .zip(&scores)
                .map(|(&i, &s)| (batch.proposals[i].bbox(), s))
                .collect();
            nms(&items, cfg.theta_nms)
        }
        ProposalOverlap::Mask => nms_with(&scores, cfg.theta_nms, |a, b| {
            mask_iou(batch.proposals[survivors[a]].mask(), batch.proposals[survivors[b]].mask()).unwrap_or(0.0)
        }),
    };
    let mut retained: Vec<usize> = kept.into_iter().map(|k| survivors[k]).collect();
    retained.sort_unstable();
    retained
}

/// Scores every retained proposal against the prototypes, gates on `tau`, and
/// applies class-wise NMS. Output is sorted by score descending, ties by proposal index.
pub fn identify(
    batch: &ProposalBatch,
    retained: &[usize],
    store: &PrototypeStore,
    cfg: &PipelineConfig,
) -> Result<Vec<Detection>> {
    let mut candidates = Vec::new();
    for &idx in retained {
        let proposal = batch.proposals.get(idx).ok_or(Error::SchemaViolation {
            record: idx,
            message: format!("retained index {idx} out of range"),
        })?;
        let embedding = batch.embeddings.get(&idx).ok_or(Error::MissingEmbeddings {
            scene_id: batch.scene_id,
            image_id: batch.image_id,
            proposal_index: idx,
        })?;
        if embedding.dim() != store.dimension() {
            return Err(Error::DimensionMismatch {
                expected: store.dimension(),
                actual: embedding.dim(),
            });
        }
        let z = l2_normalize(embedding)?;
        let row = cosine_scores(&z, store.prototypes())?;
        let scores = row.breakdown();
        if scores.s_filter < cfg.tau {
            continue;
        }
        candidates.push(Detection {
            bbox: proposal.bbox(),
            class_id: row.predicted_class(),
            score: scores.s_final,
            proposal_index: idx,
            scores,
        });
    }
    Ok(classwise_nms(candidates, cfg.classwise_nms_iou))
}

/// Greedy NMS run independently inside each class.
pub fn classwise_nms(candidates: Vec<Detection>, threshold: f64) -> Vec<Detection> {
    let mut by_class: BTreeMap<ClassId, Vec<Detection>> = BTreeMap::new();
    for d in candidates {
        by_class.entry(d.class_id).or_default().push(d);
    }
    let mut out = Vec::new();
    for (_, group) in by_class {
        let items: Vec<(BoundingBox, f64)> = group.iter().map(|d| (d.bbox, d.score)).collect();
        let keep = nms(&items, threshold);
        let mut group: Vec<Option<Detection>> = group.into_iter().map(Some).collect();
        out.extend(keep.into_iter().map(|k| group[k].take().unwrap()));
    }
    out.sort_by(|a, b| {
        b.score
            .total_cmp(&a.score)
            .then(a.proposal_index.cmp(&b.proposal_index))
    });
    out
}

pub fn detect(batch: &ProposalBatch, store: &PrototypeStore, cfg: &PipelineConfig) -> Result<DetectionRun> {
    cfg.validate()?;
    batch.check()?;
    let retained = filter_proposals(batch, cfg);
    let detections = identify(batch, &retained, store, cfg)?;
    Ok(DetectionRun {
        scene_id: batch.scene_id,
        image_id: batch.image_id,
        detections,
        elapsed_secs: None,
    })
}

/// Overlap helper used by tests and diagnostics.
pub fn max_pairwise_iou(dets: &[Detection]) -> f64 {
    let mut worst: f64 = 0.0;
    for (i, a) in dets.iter().enumerate() {
        for b in &dets[i + 1..] {
            if a.class_id == b.class_id {
                worst = worst.max(box_iou(&a.bbox, &b.bbox));
            }
        }
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{rle_encode, Bitmap};
    use crate::prototype::{build_store, SupportSet};

    // e^0.6 / (e^0.6 + 2), computed with mpmath
    const P_MAX_082: f64 = 0.476_730_027_388_039_7;

    fn box_proposal(w: u32, h: u32, b: BoundingBox, iou: f64, stab: f64) -> MaskProposal {
        let mut bm = Bitmap::new(w, h);
        bm.fill_box(&b);
        MaskProposal::new(rle_encode(&bm), iou, stab).unwrap()
    }

    fn pixel_proposal(w: u32, h: u32, n: u32) -> MaskProposal {
        let mut bm = Bitmap::new(w, h);
        for i in 0..n {
            bm.set(0, i * 2, true);
        }
        MaskProposal::new(rle_encode(&bm), 0.9, 0.9).unwrap()
    }

    fn bb(x: u32, y: u32, w: u32, h: u32) -> BoundingBox {
        BoundingBox::new(x, y, w, h).unwrap()
    }

    fn axis_store(n: usize) -> PrototypeStore {
        let supports: Vec<SupportSet> = (0..n)
            .map(|c| {
                let mut v = vec![0.0; n];
                v[c] = 1.0;
                SupportSet::new(ClassId(c as u32 + 1), vec![Embedding::new(v).unwrap()])
            })
            .collect();
        build_store(&supports, "test").unwrap()
    }

    #[test]
    fn defaults_match_reference_configuration() {
        let c = PipelineConfig::default();
        assert_eq!(c.min_area_ratio, 0.0005);
        assert_eq!(c.generator_iou_floor, 0.60);
        assert_eq!(c.stability_floor, 0.85);
        assert_eq!(c.theta_nms, 0.75);
        assert_eq!(c.tau, 0.4);
        assert_eq!(c.classwise_nms_iou, 0.5);
        assert!(c.validate().is_ok());
    }

    #[test]
    fn out_of_range_threshold_rejected() {
        let c = PipelineConfig { theta_nms: 1.5, ..Default::default() };
        assert!(matches!(c.validate(), Err(Error::InvalidConfig(_))));
        let c = PipelineConfig { tau: f64::NAN, ..Default::default() };
        assert!(matches!(c.validate(), Err(Error::InvalidConfig(_))));
        assert!(PipelineConfig { tau: 1.5, ..Default::default() }.validate().is_ok());
    }

    #[test]
    fn area_boundary_inclusive() {
        let mut batch = ProposalBatch::new(1, 1, 100, 100);
        batch.proposals.push(pixel_proposal(100, 100, 5));
        batch.proposals.push(pixel_proposal(100, 100, 4));
        assert_eq!(filter_proposals(&batch, &PipelineConfig::default()), vec![0]);
    }

    #[test]
    fn generator_iou_floor() {
        let mut batch = ProposalBatch::new(1, 1, 50, 50);
        batch.proposals.push(box_proposal(50, 50, bb(0, 0, 10, 10), 0.59, 0.95));
        batch.proposals.push(box_proposal(50, 50, bb(20, 20, 10, 10), 0.60, 0.95));
        batch.proposals.push(box_proposal(50, 50, bb(30, 0, 10, 10), 0.90, 0.84));
        assert_eq!(filter_proposals(&batch, &PipelineConfig::default()), vec![1]);
    }

    #[test]
    fn stacked_boxes_collapse() {
        let mut batch = ProposalBatch::new(1, 1, 50, 50);
        for s in [0.8, 0.95, 0.9] {
            batch.proposals.push(box_proposal(50, 50, bb(5, 5, 10, 10), s, 0.95));
        }
        assert_eq!(filter_proposals(&batch, &PipelineConfig::default()), vec![1]);
    }

    #[test]
    fn mask_overlap_mode_distinguishes_interleaved_masks() {
        // two checkerboard halves share a bbox but no pixels
        let (mut a, mut b) = (Bitmap::new(8, 8), Bitmap::new(8, 8));
        for r in 0..8 {
            for c in 0..8 {
                if (r + c) % 2 == 0 { a.set(r, c, true) } else { b.set(r, c, true) }
            }
        }
        let mut batch = ProposalBatch::new(1, 1, 8, 8);
        batch.proposals.push(MaskProposal::new(rle_encode(&a), 0.9, 0.9).unwrap());
        batch.proposals.push(MaskProposal::new(rle_encode(&b), 0.8, 0.9).unwrap());
        let boxed = PipelineConfig::default();
        let masked = PipelineConfig { proposal_overlap: ProposalOverlap::Mask, ..Default::default() };
        assert_eq!(filter_proposals(&batch, &boxed), vec![0]);
        assert_eq!(filter_proposals(&batch, &masked), vec![0, 1]);
    }

    // prototypes chosen so the similarity row is exactly (0.8, 0.2, 0.2)
    fn row_store() -> (PrototypeStore, Embedding) {
        let mut store = PrototypeStore::new(3, "test");
        for (id, v) in [(1, [0.8, 0.0, 0.0]), (2, [0.2, 0.0, 0.0]), (3, [0.2, 0.0, 0.0])] {
            store.insert(crate::prototype::Prototype::from_parts(ClassId(id), None, v.to_vec(), 1)).unwrap();
        }
        (store, Embedding::new(vec![2.0, 0.0, 0.0]).unwrap())
    }

    #[test]
    fn single_proposal_scores_compose() {
        let (store, e) = row_store();
        let mut batch = ProposalBatch::new(1, 1, 20, 20);
        batch.proposals.push(box_proposal(20, 20, bb(2, 2, 5, 5), 0.9, 0.9));
        batch.embeddings.insert(0, e);
        let dets = identify(&batch, &[0], &store, &PipelineConfig::default()).unwrap();
        assert_eq!(dets.len(), 1);
        assert_eq!(dets[0].class_id, ClassId(1));
        assert!((dets[0].score - (1.2 + P_MAX_082)).abs() < 1e-12);
        let s = dets[0].scores;
        assert!((dets[0].score - (s.s_max + s.p_max + s.s_mc)).abs() < 1e-12);
    }

    #[test]
    fn below_tau_dropped() {
        // single class with prototype (-0.61, 0): s_max = -0.61, p_max = 1, S_filter = 0.39
        let mut store = PrototypeStore::new(2, "t");
        store
            .insert(crate::prototype::Prototype::from_parts(ClassId(1), None, vec![-0.61, 0.0], 1))
            .unwrap();
        let mut batch = ProposalBatch::new(1, 1, 20, 20);
        batch.proposals.push(box_proposal(20, 20, bb(2, 2, 5, 5), 0.9, 0.9));
        batch.embeddings.insert(0, Embedding::new(vec![1.0, 0.0]).unwrap());
        assert!(identify(&batch, &[0], &store, &PipelineConfig::default()).unwrap().is_empty());
        let low = PipelineConfig { tau: 0.39, ..Default::default() };
        assert_eq!(identify(&batch, &[0], &store, &low).unwrap().len(), 1);
    }

    #[test]
    fn classwise_scope() {
        let mk = |class: u32, score: f64, idx: usize| Detection {
            bbox: bb(0, 0, 10, 10),
            class_id: ClassId(class),
            score,
            proposal_index: idx,
            scores: ScoreBreakdown { s_max: 0.0, p_max: 0.0, s_filter: 0.0, s_mc: 0.0, s_final: score },
        };
        let same = classwise_nms(vec![mk(1, 1.6, 0), mk(1, 1.5, 1)], 0.5);
        assert_eq!(same.len(), 1);
        assert_eq!(same[0].score, 1.6);
        let diff = classwise_nms(vec![mk(1, 1.6, 0), mk(2, 1.5, 1)], 0.5);
        assert_eq!(diff.len(), 2);
    }

    #[test]
    fn missing_embedding_named() {
        let store = axis_store(2);
        let mut batch = ProposalBatch::new(4, 9, 20, 20);
        batch.proposals.push(box_proposal(20, 20, bb(2, 2, 5, 5), 0.9, 0.9));
        let err = detect(&batch, &store, &PipelineConfig::default()).unwrap_err();
        assert!(matches!(err, Error::MissingEmbeddings { scene_id: 4, image_id: 9, proposal_index: 0 }));
    }

    #[test]
    fn wrong_embedding_dimension() {
        let store = axis_store(2);
        let mut batch = ProposalBatch::new(1, 1, 20, 20);
        batch.proposals.push(box_proposal(20, 20, bb(2, 2, 5, 5), 0.9, 0.9));
        batch.embeddings.insert(0, Embedding::new(vec![1.0, 0.0, 0.0]).unwrap());
        assert!(matches!(
            detect(&batch, &store, &PipelineConfig::default()),
            Err(Error::DimensionMismatch { expected: 2, actual: 3 })
        ));
    }

    #[test]
    fn empty_batch_gives_empty_run() {
        let run = detect(&ProposalBatch::new(1, 2, 10, 10), &axis_store(2), &PipelineConfig::default()).unwrap();
        assert!(run.detections.is_empty());
        assert_eq!((run.scene_id, run.image_id), (1, 2));
    }
}
