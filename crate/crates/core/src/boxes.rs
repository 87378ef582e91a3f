//! Axis-aligned boxes in center format, intersection-over-union, greedy
//! non-maximum suppression, and one-to-one box matching.
//!
//! All routines are deterministic: float comparisons use total ordering and
//! ties fall back to index order, so the same inputs always produce the same
//! selections.

use alloc::vec::Vec;

/// Axis-aligned box: center `(cx, cy)`, full width and height, pixel units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoxF {
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
}

impl BoxF {
    pub fn new(cx: f64, cy: f64, w: f64, h: f64) -> Self {
        BoxF { cx, cy, w, h }
    }

    pub fn from_corners(x0: f64, y0: f64, x1: f64, y1: f64) -> Self {
        BoxF {
            cx: 0.5 * (x0 + x1),
            cy: 0.5 * (y0 + y1),
            w: x1 - x0,
            h: y1 - y0,
        }
    }

    pub fn x0(&self) -> f64 {
        self.cx - 0.5 * self.w
    }

    pub fn y0(&self) -> f64 {
        self.cy - 0.5 * self.h
    }

    pub fn x1(&self) -> f64 {
        self.cx + 0.5 * self.w
    }

    pub fn y1(&self) -> f64 {
        self.cy + 0.5 * self.h
    }

    pub fn area(&self) -> f64 {
        self.w.max(0.0) * self.h.max(0.0)
    }

    /// Intersection over union; degenerate boxes yield 0.
    pub fn iou(&self, other: &BoxF) -> f64 {
        let ix = (self.x1().min(other.x1()) - self.x0().max(other.x0())).max(0.0);
        let iy = (self.y1().min(other.y1()) - self.y0().max(other.y0())).max(0.0);
        let inter = ix * iy;
        let union = self.area() + other.area() - inter;
        if union <= 0.0 {
            0.0
        } else {
            inter / union
        }
    }
}

/// Greedy non-maximum suppression. Returns indices into `scored`, highest
/// score first; a box is dropped when its IoU with an already kept box
/// exceeds `iou_threshold`.
pub fn nms(scored: &[(BoxF, f64)], iou_threshold: f64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scored.len()).collect();
    order.sort_by(|&a, &b| {
        scored[b].1.total_cmp(&scored[a].1).then_with(|| a.cmp(&b))
    });
    let mut kept: Vec<usize> = Vec::new();
    for &i in &order {
        let suppressed = kept
            .iter()
            .any(|&k| scored[k].0.iou(&scored[i].0) > iou_threshold);
        if !suppressed {
            kept.push(i);
        }
    }
    kept
}

/// Greedy one-to-one matching between predictions and ground truths: pairs
/// with IoU at or above `iou_threshold`, best IoU first, each side used at
/// most once. Returns `(pred_index, gt_index)` pairs.
pub fn match_boxes(preds: &[BoxF], gts: &[BoxF], iou_threshold: f64) -> Vec<(usize, usize)> {
    let mut candidates: Vec<(f64, usize, usize)> = Vec::new();
    for (pi, p) in preds.iter().enumerate() {
        for (gi, g) in gts.iter().enumerate() {
            let iou = p.iou(g);
            if iou >= iou_threshold {
                candidates.push((iou, pi, gi));
            }
        }
    }
    candidates.sort_by(|a, b| {
        b.0.total_cmp(&a.0)
            .then_with(|| a.1.cmp(&b.1))
            .then_with(|| a.2.cmp(&b.2))
    });
    let mut used_pred = alloc::vec![false; preds.len()];
    let mut used_gt = alloc::vec![false; gts.len()];
    let mut pairs = Vec::new();
    for (_, pi, gi) in candidates {
        if !used_pred[pi] && !used_gt[gi] {
            used_pred[pi] = true;
            used_gt[gi] = true;
            pairs.push((pi, gi));
        }
    }
    pairs.sort_by_key(|&(pi, _)| pi);
    pairs
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn iou_of_identical_boxes_is_one() {
        let b = BoxF::new(10.0, 10.0, 4.0, 6.0);
        assert_eq!(b.iou(&b), 1.0);
    }

    #[test]
    fn iou_of_disjoint_boxes_is_zero() {
        let a = BoxF::new(0.0, 0.0, 2.0, 2.0);
        let b = BoxF::new(10.0, 10.0, 2.0, 2.0);
        assert_eq!(a.iou(&b), 0.0);
    }

    #[test]
    fn iou_of_half_overlapping_boxes() {
        // Two 2x2 boxes sharing a 1x2 strip: inter 2, union 6.
        let a = BoxF::from_corners(0.0, 0.0, 2.0, 2.0);
        let b = BoxF::from_corners(1.0, 0.0, 3.0, 2.0);
        assert!((a.iou(&b) - 2.0 / 6.0).abs() < 1e-12);
    }

    #[test]
    fn degenerate_boxes_have_zero_iou() {
        let a = BoxF::new(1.0, 1.0, 0.0, 5.0);
        let b = BoxF::new(1.0, 1.0, 5.0, 5.0);
        assert_eq!(a.iou(&b), 0.0);
        assert_eq!(a.iou(&a), 0.0);
    }

    #[test]
    fn nms_keeps_best_of_overlapping_cluster_plus_isolated() {
        let far = BoxF::new(50.0, 50.0, 4.0, 4.0);
        let base = BoxF::new(10.0, 10.0, 4.0, 4.0);
        let nudged = BoxF::new(10.5, 10.0, 4.0, 4.0);
        let kept = nms(&[(base, 0.7), (nudged, 0.9), (far, 0.5)], 0.5);
        assert_eq!(kept, alloc::vec![1, 2]);
    }

    #[test]
    fn nms_tie_breaks_by_index() {
        let a = BoxF::new(10.0, 10.0, 4.0, 4.0);
        let kept = nms(&[(a, 0.8), (a, 0.8)], 0.5);
        assert_eq!(kept, alloc::vec![0]);
    }

    #[test]
    fn matching_is_one_to_one_and_prefers_higher_iou() {
        let gt = [
            BoxF::new(10.0, 10.0, 8.0, 4.0),
            BoxF::new(30.0, 10.0, 8.0, 4.0),
        ];
        let preds = [
            BoxF::new(10.5, 10.0, 8.0, 4.0), // good match for gt 0
            BoxF::new(11.5, 10.0, 8.0, 4.0), // worse match for gt 0
            BoxF::new(30.0, 10.0, 8.0, 4.0), // exact match for gt 1
        ];
        let pairs = match_boxes(&preds, &gt, 0.5);
        assert_eq!(pairs, alloc::vec![(0, 0), (2, 1)]);
    }

    #[test]
    fn matching_respects_threshold() {
        let gt = [BoxF::new(10.0, 10.0, 4.0, 4.0)];
        let preds = [BoxF::new(14.0, 10.0, 4.0, 4.0)]; // IoU well below 0.5
        assert!(match_boxes(&preds, &gt, 0.5).is_empty());
    }
}
