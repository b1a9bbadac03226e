//! Independent reference implementations used as test oracles.
//!
//! None of these call into the library paths they check.
#![allow(dead_code)]

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

// ---------------------------------------------------------------------------
// boxes

/// (x, y, w, h) as plain integers.
pub type RawBox = (u32, u32, u32, u32);

pub fn ref_iou(a: RawBox, b: RawBox) -> f64 {
    let ix = (a.0 + a.2).min(b.0 + b.2) as i64 - a.0.max(b.0) as i64;
    let iy = (a.1 + a.3).min(b.1 + b.3) as i64 - a.1.max(b.1) as i64;
    if ix <= 0 || iy <= 0 {
        return 0.0;
    }
    let inter = (ix * iy) as f64;
    let union = (a.2 * a.3) as f64 + (b.2 * b.3) as f64 - inter;
    inter / union
}

pub fn random_box(rng: &mut ChaCha8Rng, extent: u32) -> RawBox {
    let w = rng.random_range(1..=extent / 2);
    let h = rng.random_range(1..=extent / 2);
    (rng.random_range(0..=extent - w), rng.random_range(0..=extent - h), w, h)
}

/// Greedy NMS characterised by its fixed point: in score order (ties by
/// index), an item belongs to the kept set iff it overlaps no earlier kept item
/// above the threshold. Enumerates every subset and returns the unique one
/// satisfying that condition, listed in score order.
pub fn brute_force_nms(items: &[(RawBox, f64)], threshold: f64) -> Vec<usize> {
    let n = items.len();
    assert!(n <= 12, "subset enumeration is exponential");
    let mut order: Vec<usize> = (0..n).collect();
    // insertion sort to stay independent of the library's sort call
    for i in 1..n {
        let mut j = i;
        while j > 0 {
            let (a, b) = (order[j - 1], order[j]);
            let before = items[b].1 > items[a].1 || (items[b].1 == items[a].1 && b < a);
            if !before {
                break;
            }
            order.swap(j - 1, j);
            j -= 1;
        }
    }
    let mut found: Option<Vec<usize>> = None;
    for mask in 0u32..(1 << n) {
        let inside = |i: usize| mask & (1 << i) != 0;
        let consistent = order.iter().enumerate().all(|(pos, &i)| {
            let clear = order[..pos]
                .iter()
                .filter(|&&j| inside(j))
                .all(|&j| ref_iou(items[i].0, items[j].0) <= threshold);
            inside(i) == clear
        });
        if consistent {
            assert!(found.is_none(), "greedy fixed point must be unique");
            found = Some(order.iter().copied().filter(|&i| inside(i)).collect());
        }
    }
    found.expect("a greedy fixed point always exists")
}

// ---------------------------------------------------------------------------
// score math in double-double arithmetic

#[derive(Clone, Copy, Debug)]
pub struct Dd {
    pub hi: f64,
    pub lo: f64,
}

impl Dd {
    pub fn from(x: f64) -> Self {
        Dd { hi: x, lo: 0.0 }
    }

    pub fn to_f64(self) -> f64 {
        self.hi + self.lo
    }

    fn two_sum(a: f64, b: f64) -> Dd {
        let s = a + b;
        let bb = s - a;
        let err = (a - (s - bb)) + (b - bb);
        Dd { hi: s, lo: err }
    }

    pub fn add(self, o: Dd) -> Dd {
        let s = Self::two_sum(self.hi, o.hi);
        let lo = s.lo + self.lo + o.lo;
        Self::two_sum(s.hi, lo)
    }

    pub fn sub(self, o: Dd) -> Dd {
        self.add(Dd { hi: -o.hi, lo: -o.lo })
    }

    pub fn mul_f64(self, b: f64) -> Dd {
        let p = self.hi * b;
        let err = self.hi.mul_add(b, -p);
        Self::two_sum(p, err + self.lo * b)
    }

    pub fn mul(self, o: Dd) -> Dd {
        let p = self.hi * o.hi;
        let err = self.hi.mul_add(o.hi, -p);
        Self::two_sum(p, err + self.hi * o.lo + self.lo * o.hi)
    }

    pub fn div(self, o: Dd) -> Dd {
        let q1 = self.hi / o.hi;
        let r = self.sub(o.mul_f64(q1));
        let q2 = r.hi / o.hi;
        let r = r.sub(o.mul_f64(q2));
        let q3 = r.hi / o.hi;
        Self::two_sum(q1, q2).add(Dd::from(q3))
    }

    /// exp via argument reduction by ln 2 and a Taylor series, all in double-double.
    pub fn exp(self) -> Dd {
        const LN2: Dd = Dd { hi: std::f64::consts::LN_2, lo: 2.319_046_813_846_299_6e-17 };
        let k = (self.hi / LN2.hi).round();
        let r = self.sub(LN2.mul_f64(k));
        // r is in [-0.35, 0.35]; 30 terms is far beyond double-double precision
        let mut term = Dd::from(1.0);
        let mut sum = Dd::from(1.0);
        for n in 1..30 {
            term = term.mul(r).div(Dd::from(n as f64));
            sum = sum.add(term);
        }
        sum.mul_f64(2f64.powi(k as i32))
    }
}

pub fn dd_dot(a: &[f64], b: &[f64]) -> Dd {
    a.iter().zip(b).fold(Dd::from(0.0), |acc, (x, y)| acc.add(Dd::from(*x).mul_f64(*y)))
}

pub fn dd_sum(v: &[f64]) -> Dd {
    v.iter().fold(Dd::from(0.0), |acc, x| acc.add(Dd::from(*x)))
}

/// Reference scores for one similarity row: (s_max, p_max, s_filter, s_mc, s_final, argmax).
pub fn reference_scores(scores: &[f64]) -> (f64, f64, f64, f64, f64, usize) {
    let mut arg = 0;
    for (i, &s) in scores.iter().enumerate() {
        if s > scores[arg] {
            arg = i;
        }
    }
    let s_max = Dd::from(scores[arg]);
    // plain (unshifted) softmax, evaluated in double-double
    let num = s_max.exp();
    let den = scores.iter().fold(Dd::from(0.0), |acc, &s| acc.add(Dd::from(s).exp()));
    let p_max = num.div(den);
    let mean = dd_sum(scores).div(Dd::from(scores.len() as f64));
    let s_mc = s_max.sub(mean);
    let s_filter = s_max.add(p_max);
    let s_final = s_filter.add(s_mc);
    (
        s_max.to_f64(),
        p_max.to_f64(),
        s_filter.to_f64(),
        s_mc.to_f64(),
        s_final.to_f64(),
        arg,
    )
}

// ---------------------------------------------------------------------------
// COCO-protocol evaluator, structured after pycocotools' evaluateImg/accumulate

#[derive(Clone, Debug)]
pub struct RefDet {
    pub scene: u32,
    pub image: u32,
    pub class: u32,
    pub bbox: RawBox,
    pub score: f64,
}

#[derive(Clone, Debug)]
pub struct RefGt {
    pub scene: u32,
    pub image: u32,
    pub class: u32,
    pub bbox: RawBox,
    pub ignore: bool,
}

struct ImgEval {
    dt_scores: Vec<f64>,
    dt_order: Vec<usize>,
    // per threshold
    dt_matched: Vec<Vec<bool>>,
    dt_ignored: Vec<Vec<bool>>,
    n_gt: usize,
}

fn evaluate_img(dets: &[(usize, &RefDet)], gts: &[&RefGt], thresholds: &[f64]) -> ImgEval {
    let mut g_ix: Vec<usize> = (0..gts.len()).collect();
    g_ix.sort_by_key(|&g| gts[g].ignore as u8);
    let gts: Vec<&RefGt> = g_ix.iter().map(|&g| gts[g]).collect();

    let mut d_ix: Vec<usize> = (0..dets.len()).collect();
    // stable: equal scores keep input (file) order
    d_ix.sort_by(|&a, &b| dets[b].1.score.partial_cmp(&dets[a].1.score).unwrap());
    let dets: Vec<(usize, &RefDet)> = d_ix.iter().map(|&d| dets[d]).collect();

    let ious: Vec<Vec<f64>> = dets
        .iter()
        .map(|(_, d)| gts.iter().map(|g| ref_iou(d.bbox, g.bbox)).collect())
        .collect();

    let mut dt_matched = vec![vec![false; dets.len()]; thresholds.len()];
    let mut dt_ignored = vec![vec![false; dets.len()]; thresholds.len()];
    for (ti, &t) in thresholds.iter().enumerate() {
        let mut gt_taken = vec![false; gts.len()];
        for di in 0..dets.len() {
            let mut iou = t.min(1.0 - 1e-10);
            let mut m: isize = -1;
            for gi in 0..gts.len() {
                if gt_taken[gi] {
                    continue;
                }
                if m > -1 && !gts[m as usize].ignore && gts[gi].ignore {
                    break;
                }
                if ious[di][gi] < iou {
                    continue;
                }
                iou = ious[di][gi];
                m = gi as isize;
            }
            if m == -1 {
                continue;
            }
            dt_ignored[ti][di] = gts[m as usize].ignore;
            dt_matched[ti][di] = true;
            gt_taken[m as usize] = true;
        }
    }
    ImgEval {
        dt_scores: dets.iter().map(|(_, d)| d.score).collect(),
        dt_order: dets.iter().map(|(i, _)| *i).collect(),
        dt_matched,
        dt_ignored,
        n_gt: gts.iter().filter(|g| !g.ignore).count(),
    }
}

/// Returns (mean AP, per-threshold AP, per-class mean AP).
pub fn reference_evaluate(dets: &[RefDet], gts: &[RefGt]) -> (f64, Vec<f64>, BTreeMap<u32, f64>) {
    // nearest doubles to the decimal grids, so exact-boundary IoUs compare the same way
    let thresholds: Vec<f64> = [50.0, 55.0, 60.0, 65.0, 70.0, 75.0, 80.0, 85.0, 90.0, 95.0].iter().map(|t| t / 100.0).collect();
    let rec_thrs: Vec<f64> = (0..=100).map(|i| i as f64 / 100.0).collect();

    let mut classes: Vec<u32> = gts.iter().map(|g| g.class).collect();
    classes.sort();
    classes.dedup();
    let mut images: Vec<(u32, u32)> = gts.iter().map(|g| (g.scene, g.image)).collect();
    images.extend(dets.iter().map(|d| (d.scene, d.image)));
    images.sort();
    images.dedup();

    let mut per_class_t: BTreeMap<u32, Vec<f64>> = BTreeMap::new();
    for &c in &classes {
        let mut evals = Vec::new();
        for &(s, i) in &images {
            let d: Vec<(usize, &RefDet)> = dets
                .iter()
                .enumerate()
                .filter(|(_, d)| d.class == c && d.scene == s && d.image == i)
                .collect();
            let g: Vec<&RefGt> = gts.iter().filter(|g| g.class == c && g.scene == s && g.image == i).collect();
            if d.is_empty() && g.is_empty() {
                continue;
            }
            evals.push(evaluate_img(&d, &g, &thresholds));
        }
        let n_gt: usize = evals.iter().map(|e| e.n_gt).sum();
        if n_gt == 0 {
            continue;
        }
        // concatenate per image, then a stable sort on -score; ties fall back to file order
        let mut flat: Vec<(f64, usize, usize, usize)> = Vec::new(); // (score, file idx, eval, pos)
        for (ei, e) in evals.iter().enumerate() {
            for (pos, (&s, &fi)) in e.dt_scores.iter().zip(&e.dt_order).enumerate() {
                flat.push((s, fi, ei, pos));
            }
        }
        flat.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));

        let mut aps = Vec::new();
        for ti in 0..thresholds.len() {
            let mut tps = Vec::new();
            let mut fps = Vec::new();
            let (mut tp, mut fp) = (0.0, 0.0);
            for &(_, _, ei, pos) in &flat {
                if evals[ei].dt_ignored[ti][pos] {
                    continue;
                }
                if evals[ei].dt_matched[ti][pos] {
                    tp += 1.0;
                } else {
                    fp += 1.0;
                }
                tps.push(tp);
                fps.push(fp);
            }
            let rc: Vec<f64> = tps.iter().map(|t| t / n_gt as f64).collect();
            let mut pr: Vec<f64> = tps.iter().zip(&fps).map(|(t, f)| t / (t + f)).collect();
            for i in (1..pr.len()).rev() {
                if pr[i] > pr[i - 1] {
                    pr[i - 1] = pr[i];
                }
            }
            let mut q = vec![0.0; rec_thrs.len()];
            for (ri, &r) in rec_thrs.iter().enumerate() {
                // searchsorted(side="left")
                let mut lo = 0;
                let mut hi = rc.len();
                while lo < hi {
                    let mid = (lo + hi) / 2;
                    if rc[mid] < r {
                        lo = mid + 1;
                    } else {
                        hi = mid;
                    }
                }
                if lo < pr.len() {
                    q[ri] = pr[lo];
                }
            }
            aps.push(q.iter().sum::<f64>() / q.len() as f64);
        }
        per_class_t.insert(c, aps);
    }
    if per_class_t.is_empty() {
        return (0.0, vec![0.0; 10], BTreeMap::new());
    }
    let per_t: Vec<f64> = (0..10)
        .map(|t| per_class_t.values().map(|a| a[t]).sum::<f64>() / per_class_t.len() as f64)
        .collect();
    let per_class = per_class_t
        .iter()
        .map(|(&c, a)| (c, a.iter().sum::<f64>() / a.len() as f64))
        .collect();
    (per_t.iter().sum::<f64>() / 10.0, per_t, per_class)
}

/// Random GT/detection fixture: a few images, a few classes, detections that
/// jitter real boxes, duplicate them, or land at random. Scores are distinct.
pub fn random_eval_fixture(rng: &mut ChaCha8Rng) -> (Vec<RefDet>, Vec<RefGt>) {
    let n_images = rng.random_range(1..=4);
    let n_classes = rng.random_range(1..=4);
    let mut gts = Vec::new();
    let mut dets = Vec::new();
    for img in 0..n_images {
        for _ in 0..rng.random_range(0..=6) {
            gts.push(RefGt {
                scene: 1,
                image: img,
                class: rng.random_range(1..=n_classes),
                bbox: random_box(rng, 200),
                ignore: rng.random_bool(0.1),
            });
        }
    }
    for g in gts.clone() {
        for _ in 0..rng.random_range(0..=2) {
            let j = |v: u32, r: &mut ChaCha8Rng| (v as i64 + r.random_range(-6..=6)).max(0) as u32;
            let (x, y) = (j(g.bbox.0, rng), j(g.bbox.1, rng));
            let w = j(g.bbox.2, rng).max(1);
            let h = j(g.bbox.3, rng).max(1);
            let class = if rng.random_bool(0.85) { g.class } else { rng.random_range(1..=n_classes) };
            dets.push(RefDet { scene: 1, image: g.image, class, bbox: (x, y, w, h), score: rng.random() });
        }
    }
    for _ in 0..rng.random_range(0..=5) {
        dets.push(RefDet {
            scene: 1,
            image: rng.random_range(0..n_images),
            class: rng.random_range(1..=n_classes),
            bbox: random_box(rng, 200),
            score: rng.random(),
        });
    }
    (dets, gts)
}

// ---------------------------------------------------------------------------
// adapters to library types

use protomatch::io::{BopDetection, Category, GroundTruth, GroundTruthAnnotation, ImageInfo};

pub fn to_library(dets: &[RefDet], gts: &[RefGt]) -> (Vec<BopDetection>, GroundTruth) {
    let mut images: Vec<(u32, u32)> = gts.iter().map(|g| (g.scene, g.image)).collect();
    images.extend(dets.iter().map(|d| (d.scene, d.image)));
    images.sort();
    images.dedup();
    let mut classes: Vec<u32> = gts.iter().map(|g| g.class).chain(dets.iter().map(|d| d.class)).collect();
    classes.sort();
    classes.dedup();
    let bop = dets
        .iter()
        .map(|d| BopDetection {
            scene_id: d.scene,
            image_id: d.image,
            category_id: d.class,
            bbox: [d.bbox.0, d.bbox.1, d.bbox.2, d.bbox.3],
            score: d.score,
            time: -1.0,
        })
        .collect();
    let gt = GroundTruth {
        categories: classes.into_iter().map(|id| Category { id, name: None }).collect(),
        images: images
            .into_iter()
            .map(|(scene_id, image_id)| ImageInfo { scene_id, image_id, width: 1000, height: 1000 })
            .collect(),
        annotations: gts
            .iter()
            .map(|g| GroundTruthAnnotation {
                scene_id: g.scene,
                image_id: g.image,
                category_id: g.class,
                bbox: [g.bbox.0, g.bbox.1, g.bbox.2, g.bbox.3],
                ignore: g.ignore,
            })
            .collect(),
    };
    (bop, gt)
}
