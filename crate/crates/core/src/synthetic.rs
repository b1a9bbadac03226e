//! Synthetic benchmark with known ground truth.
//!
//! Classes are well-separated unit vectors in embedding space. Planted objects
//! carry their class centre plus Gaussian noise; distractor proposals carry
//! random directions. Every proposal is a filled rectangle placed in its own
//! grid cell, so planted objects never overlap each other or the distractors.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::embedding::Embedding;
use crate::error::Result;
use crate::geometry::{rle_encode, Bitmap, BoundingBox, MaskProposal};
use crate::io::{
    write_embedding_archive, write_ground_truth, write_proposals, Category, Dtype, EmbeddingArchive, GroundTruth,
    GroundTruthAnnotation, ImageInfo, RecordKey,
};
use crate::pipeline::ProposalBatch;
use crate::prototype::{ClassId, SupportSet};

pub const EXTRACTOR_ID: &str = "synthetic-gaussian-clusters";
pub const CROP_POLICY: &str = "synthetic";

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticConfig {
    pub seed: u64,
    pub dim: usize,
    pub num_classes: usize,
    pub supports_per_class: usize,
    pub num_scenes: usize,
    pub noise_sigma: f64,
    /// Distractors per scene as a fraction of planted objects (rounded up).
    pub distractor_fraction: f64,
    pub image_width: u32,
    pub image_height: u32,
    pub grid_cols: u32,
    pub grid_rows: u32,
    pub max_objects_per_scene: usize,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            dim: 64,
            num_classes: 5,
            supports_per_class: 10,
            num_scenes: 20,
            noise_sigma: 0.05,
            distractor_fraction: 0.3,
            image_width: 640,
            image_height: 480,
            grid_cols: 4,
            grid_rows: 3,
            max_objects_per_scene: 6,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticBenchmark {
    pub centers: Vec<Vec<f64>>,
    pub supports: Vec<SupportSet>,
    /// One batch per scene, with an embedding for every proposal.
    pub batches: Vec<ProposalBatch>,
    pub ground_truth: GroundTruth,
    /// `(scene index, proposal index)` of every distractor.
    pub distractors: Vec<(usize, usize)>,
}

impl SyntheticBenchmark {
    pub fn class_ids(&self) -> Vec<ClassId> {
        self.supports.iter().map(|s| s.class_id).collect()
    }

    pub fn support_archive(&self) -> EmbeddingArchive {
        let mut a = EmbeddingArchive::new(EXTRACTOR_ID, CROP_POLICY, Dtype::F32, self.dim());
        for s in &self.supports {
            for (k, e) in s.embeddings.iter().enumerate() {
                let key = RecordKey::Support {
                    class_id: s.class_id.0,
                    support_index: k as u32,
                };
                a.push(key, e.values().to_vec()).expect("dimension matches");
            }
        }
        a
    }

    pub fn proposal_archive(&self) -> EmbeddingArchive {
        let mut a = EmbeddingArchive::new(EXTRACTOR_ID, CROP_POLICY, Dtype::F32, self.dim());
        for b in &self.batches {
            for (&idx, e) in &b.embeddings {
                let key = RecordKey::Proposal {
                    scene_id: b.scene_id,
                    image_id: b.image_id,
                    proposal_index: idx as u32,
                };
                a.push(key, e.values().to_vec()).expect("dimension matches");
            }
        }
        a
    }

    pub fn dim(&self) -> usize {
        self.centers.first().map_or(0, Vec::len)
    }

    /// Writes `supports.dpme`, `proposals.jsonl`, `proposal_embeddings.dpme` and `gt.json` into `dir`.
    pub fn write_to_dir(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        write_embedding_archive(dir.join("supports.dpme"), &self.support_archive())?;
        write_proposals(dir.join("proposals.jsonl"), &self.batches)?;
        write_embedding_archive(dir.join("proposal_embeddings.dpme"), &self.proposal_archive())?;
        write_ground_truth(dir.join("gt.json"), &self.ground_truth)
    }
}

fn unit(v: Vec<f64>) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / n).collect()
}

/// Rounds through f32 so archives written as f32 read back bit-identical.
fn f32_exact(v: Vec<f64>) -> Embedding {
    Embedding::new(v.into_iter().map(|x| x as f32 as f64).collect()).expect("finite")
}

/// Gram-Schmidt over Gaussian draws: mutually orthogonal unit centres.
fn orthonormal_centers(rng: &mut ChaCha8Rng, n: usize, dim: usize) -> Vec<Vec<f64>> {
    assert!(n <= dim, "cannot place {n} orthogonal centres in {dim} dimensions");
    let mut out: Vec<Vec<f64>> = Vec::with_capacity(n);
    while out.len() < n {
        let mut v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
        for c in &out {
            let proj: f64 = v.iter().zip(c).map(|(a, b)| a * b).sum();
            v.iter_mut().zip(c).for_each(|(a, b)| *a -= proj * b);
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-6 {
            out.push(unit(v));
        }
    }
    out
}

fn noisy(rng: &mut ChaCha8Rng, center: &[f64], noise: &Normal<f64>) -> Embedding {
    f32_exact(center.iter().map(|c| c + noise.sample(rng)).collect())
}

fn random_box_in_cell(rng: &mut ChaCha8Rng, cfg: &SyntheticConfig, cell: u32) -> BoundingBox {
    let cw = cfg.image_width / cfg.grid_cols;
    let ch = cfg.image_height / cfg.grid_rows;
    let (cx, cy) = ((cell % cfg.grid_cols) * cw, (cell / cfg.grid_cols) * ch);
    let w = rng.random_range(cw / 4..=cw - 4);
    let h = rng.random_range(ch / 4..=ch - 4);
    let x = cx + rng.random_range(0..=cw - w);
    let y = cy + rng.random_range(0..=ch - h);
    BoundingBox::new(x, y, w, h).expect("non-empty")
}

fn rect_proposal(cfg: &SyntheticConfig, b: &BoundingBox, generator_iou: f64, stability: f64) -> MaskProposal {
    let mut bm = Bitmap::new(cfg.image_width, cfg.image_height);
    bm.fill_box(b);
    MaskProposal::new(rle_encode(&bm), generator_iou, stability).expect("non-empty mask")
}

pub fn generate(cfg: &SyntheticConfig) -> SyntheticBenchmark {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let noise = Normal::new(0.0, cfg.noise_sigma).expect("valid sigma");
    let centers = orthonormal_centers(&mut rng, cfg.num_classes, cfg.dim);
    let class_id = |c: usize| ClassId(c as u32 + 1);

    let supports = centers
        .iter()
        .enumerate()
        .map(|(c, center)| {
            let embeddings = (0..cfg.supports_per_class).map(|_| noisy(&mut rng, center, &noise)).collect();
            let mut s = SupportSet::new(class_id(c), embeddings);
            s.name = Some(format!("obj_{:06}", c + 1));
            s
        })
        .collect::<Vec<_>>();

    let cells = (cfg.grid_cols * cfg.grid_rows) as usize;
    let mut batches = Vec::with_capacity(cfg.num_scenes);
    let mut images = Vec::new();
    let mut annotations = Vec::new();
    let mut distractors = Vec::new();
    for scene in 0..cfg.num_scenes {
        let scene_id = scene as u32 + 1;
        let n_objects = rng.random_range(1..=cfg.max_objects_per_scene);
        let n_distractors = (n_objects as f64 * cfg.distractor_fraction).ceil() as usize;
        assert!(n_objects + n_distractors <= cells, "grid too small for scene contents");
        let mut free: Vec<u32> = (0..cells as u32).collect();
        free.shuffle(&mut rng);

        let mut batch = ProposalBatch::new(scene_id, 0, cfg.image_width, cfg.image_height);
        let mut kinds: Vec<Option<usize>> = (0..n_objects)
            .map(|_| Some(rng.random_range(0..cfg.num_classes)))
            .chain(std::iter::repeat_n(None, n_distractors))
            .collect();
        kinds.shuffle(&mut rng);

        for (kind, cell) in kinds.into_iter().zip(free) {
            let b = random_box_in_cell(&mut rng, cfg, cell);
            let idx = batch.proposals.len();
            match kind {
                Some(c) => {
                    let (q, s) = (rng.random_range(0.85..=1.0), rng.random_range(0.90..=1.0));
                    batch.proposals.push(rect_proposal(cfg, &b, q, s));
                    batch.embeddings.insert(idx, noisy(&mut rng, &centers[c], &noise));
                    annotations.push(GroundTruthAnnotation {
                        scene_id,
                        image_id: 0,
                        category_id: class_id(c).0,
                        bbox: b.to_array(),
                        ignore: false,
                    });
                }
                None => {
                    let (q, s) = (rng.random_range(0.60..=1.0), rng.random_range(0.85..=1.0));
                    batch.proposals.push(rect_proposal(cfg, &b, q, s));
                    let dir: Vec<f64> = (0..cfg.dim).map(|_| StandardNormal.sample(&mut rng)).collect();
                    batch.embeddings.insert(idx, f32_exact(unit(dir)));
                    distractors.push((scene, idx));
                }
            }
        }
        images.push(ImageInfo {
            scene_id,
            image_id: 0,
            width: cfg.image_width,
            height: cfg.image_height,
        });
        batches.push(batch);
    }

    let categories = (0..cfg.num_classes)
        .map(|c| Category {
            id: class_id(c).0,
            name: Some(format!("obj_{:06}", c + 1)),
        })
        .collect();
    SyntheticBenchmark {
        centers,
        supports,
        batches,
        ground_truth: GroundTruth {
            categories,
            images,
            annotations,
        },
        distractors,
    }
}
