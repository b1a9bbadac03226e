use super::bbox::{box_iou, BoundingBox};

/// Greedy non-maximum suppression over boxes.
///
/// Items are visited by descending score, equal scores by ascending input
/// index. An item is kept iff its IoU with every already-kept item is at most
/// `threshold`. Returns kept indices in keep order.
pub fn nms(items: &[(BoundingBox, f64)], threshold: f64) -> Vec<usize> {
    let scores: Vec<f64> = items.iter().map(|(_, s)| *s).collect();
    nms_with(&scores, threshold, |i, j| box_iou(&items[i].0, &items[j].0))
}

/// Greedy NMS with a caller-supplied pairwise overlap measure.
pub fn nms_with<F>(scores: &[f64], threshold: f64, overlap: F) -> Vec<usize>
where
    F: Fn(usize, usize) -> f64,
{
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));

    let mut kept: Vec<usize> = Vec::new();
    for idx in order {
        if kept.iter().all(|&k| overlap(k, idx) <= threshold) {
            kept.push(idx);
        }
    }
    kept
}
