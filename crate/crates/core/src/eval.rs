//! COCO-style mAP, checkpoint-to-checkpoint inconsistency, and the
//! confidence/IoU regression statistic.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::assign::GroundTruth;
use crate::error::{Error, Result};
use crate::geom::{self, BBox};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub bbox: BBox,
    pub class_id: usize,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageDetections {
    pub image_id: u64,
    pub detections: Vec<Detection>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageGroundTruth {
    pub image_id: u64,
    pub gts: Vec<GroundTruth>,
}

/// IoU thresholds 0.50, 0.55, ..., 0.95.
pub fn coco_iou_thresholds() -> Vec<f64> {
    (0..10).map(|k| (50 + 5 * k) as f64 / 100.0).collect()
}

/// Per-image detection cap applied per class.
pub const DEFAULT_MAX_DETS: usize = 100;

/// Greedy score-ordered matching. Each detection, highest score first (lower
/// index on ties), takes the unmatched same-class GT with the highest IoU
/// at or above `iou_thr`. Output is in processing order.
pub fn match_greedy(dets: &[Detection], gts: &[GroundTruth], iou_thr: f64) -> Vec<(usize, Option<usize>)> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| dets[b].score.total_cmp(&dets[a].score).then(a.cmp(&b)));
    let mut taken = vec![false; gts.len()];
    order
        .into_iter()
        .map(|d| {
            let det = &dets[d];
            let mut best: Option<(usize, f64)> = None;
            for (g, gt) in gts.iter().enumerate() {
                if taken[g] || gt.class_id != det.class_id {
                    continue;
                }
                let v = geom::iou(&det.bbox, &gt.bbox);
                if v >= iou_thr && best.is_none_or(|(_, bv)| v > bv) {
                    best = Some((g, v));
                }
            }
            if let Some((g, _)) = best {
                taken[g] = true;
            }
            (d, best.map(|(g, _)| g))
        })
        .collect()
}

/// 101-point interpolated AP from `(score, is_true_positive)` flags.
///
/// With no ground truth the AP is 1 if there are also no detections and 0
/// otherwise; callers computing a class mean skip such classes.
pub fn average_precision(flags: &[(f64, bool)], n_gt: usize) -> f64 {
    if n_gt == 0 {
        return if flags.is_empty() { 1.0 } else { 0.0 };
    }
    let mut sorted = flags.to_vec();
    // stable: equal scores keep their input order
    sorted.sort_by(|a, b| b.0.total_cmp(&a.0));
    let mut tp = 0usize;
    let mut precision = Vec::with_capacity(sorted.len());
    let mut recall = Vec::with_capacity(sorted.len());
    for (k, &(_, hit)) in sorted.iter().enumerate() {
        if hit {
            tp += 1;
        }
        precision.push(tp as f64 / (k + 1) as f64);
        recall.push(tp as f64 / n_gt as f64);
    }
    // precision envelope
    for k in (0..precision.len().saturating_sub(1)).rev() {
        precision[k] = precision[k].max(precision[k + 1]);
    }
    let mut total = 0.0;
    let mut idx = 0;
    for r in 0..=100 {
        let thr = r as f64 / 100.0;
        while idx < recall.len() && recall[idx] < thr {
            idx += 1;
        }
        if idx == recall.len() {
            break;
        }
        total += precision[idx];
    }
    total / 101.0
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalResult {
    /// Keyed by the threshold formatted with two decimals ("0.50", ...).
    pub ap_per_iou_threshold: BTreeMap<String, f64>,
    pub map_50_95: f64,
    pub per_class_ap: BTreeMap<usize, f64>,
}

/// Mean AP over IoU thresholds 0.50:0.05:0.95 and over classes that have at
/// least one ground truth.
pub fn map_50_95(preds: &[ImageDetections], gts: &[ImageGroundTruth]) -> Result<EvalResult> {
    map_with(preds, gts, DEFAULT_MAX_DETS)
}

pub fn map_with(preds: &[ImageDetections], gts: &[ImageGroundTruth], max_dets: usize) -> Result<EvalResult> {
    let mut images: BTreeMap<u64, (Vec<Detection>, Vec<GroundTruth>)> = BTreeMap::new();
    for img in gts {
        images.entry(img.image_id).or_default().1.extend(img.gts.iter().copied());
    }
    for img in preds {
        for d in &img.detections {
            if !(0.0..=1.0).contains(&d.score) {
                return Err(Error::invalid(format!("detection score {} outside [0, 1]", d.score)));
            }
        }
        images.entry(img.image_id).or_default().0.extend(img.detections.iter().copied());
    }
    let classes: BTreeSet<usize> = images
        .values()
        .flat_map(|(_, g)| g.iter().map(|g| g.class_id))
        .collect();
    if classes.is_empty() {
        return Err(Error::Undefined("no ground truth in any image".into()));
    }
    let thresholds = coco_iou_thresholds();
    // ap[class][threshold]
    let mut ap: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    for &c in &classes {
        let mut per_thr = Vec::with_capacity(thresholds.len());
        for &thr in &thresholds {
            let mut flags = Vec::new();
            let mut n_gt = 0;
            for (dets, g) in images.values() {
                let g: Vec<GroundTruth> = g.iter().copied().filter(|g| g.class_id == c).collect();
                let mut d: Vec<Detection> = dets.iter().copied().filter(|d| d.class_id == c).collect();
                // stable sort keeps input order on equal scores
                d.sort_by(|a, b| b.score.total_cmp(&a.score));
                d.truncate(max_dets);
                n_gt += g.len();
                flags.extend(match_greedy(&d, &g, thr).into_iter().map(|(i, m)| (d[i].score, m.is_some())));
            }
            per_thr.push(average_precision(&flags, n_gt));
        }
        ap.insert(c, per_thr);
    }
    let n_cls = classes.len() as f64;
    let ap_per_iou_threshold = thresholds
        .iter()
        .enumerate()
        .map(|(t, thr)| (format!("{thr:.2}"), ap.values().map(|v| v[t]).sum::<f64>() / n_cls))
        .collect();
    let per_class_ap: BTreeMap<usize, f64> = ap
        .iter()
        .map(|(&c, v)| (c, v.iter().sum::<f64>() / v.len() as f64))
        .collect();
    let map = per_class_ap.values().sum::<f64>() / n_cls;
    Ok(EvalResult {
        ap_per_iou_threshold,
        map_50_95: map,
        per_class_ap,
    })
}

/// Default score at which previous-checkpoint detections become ground truth.
pub const DEFAULT_GT_CUTOFF: f64 = 0.4;

/// `1 - mAP` of `current` evaluated against `previous` detections with score
/// at or above `gt_cutoff` promoted to ground truth. When the promoted set is
/// empty the pair is consistent iff `current` has no detections either.
pub fn pair_inconsistency(previous: &[ImageDetections], current: &[ImageDetections], gt_cutoff: f64) -> Result<f64> {
    let gts: Vec<ImageGroundTruth> = previous
        .iter()
        .map(|img| ImageGroundTruth {
            image_id: img.image_id,
            gts: img
                .detections
                .iter()
                .filter(|d| d.score >= gt_cutoff)
                .map(|d| GroundTruth {
                    bbox: d.bbox,
                    class_id: d.class_id,
                })
                .collect(),
        })
        .collect();
    match map_50_95(current, &gts) {
        Ok(r) => Ok(1.0 - r.map_50_95),
        Err(Error::Undefined(_)) => {
            let any = current.iter().any(|i| !i.detections.is_empty());
            Ok(if any { 1.0 } else { 0.0 })
        }
        Err(e) => Err(e),
    }
}

/// Accumulated `1 - mAP` over consecutive checkpoint pairs.
pub fn inconsistency(checkpoints: &[Vec<ImageDetections>], gt_cutoff: f64) -> Result<f64> {
    if checkpoints.len() < 2 {
        return Err(Error::domain(format!(
            "inconsistency needs at least 2 checkpoints, got {}",
            checkpoints.len()
        )));
    }
    checkpoints
        .windows(2)
        .map(|w| pair_inconsistency(&w[0], &w[1], gt_cutoff))
        .sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Regression {
    pub slope: f64,
    pub intercept: f64,
    pub std_error: f64,
}

/// Ordinary least squares of IoU on confidence; `std_error = sqrt(SSR / (n - 2))`.
pub fn confidence_iou_regression(pairs: &[(f64, f64)]) -> Result<Regression> {
    if pairs.len() < 3 {
        return Err(Error::domain(format!("need at least 3 pairs, got {}", pairs.len())));
    }
    let n = pairs.len() as f64;
    let mx = pairs.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pairs.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pairs.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::Degenerate("confidence is constant".into()));
    }
    let sxy: f64 = pairs.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ssr: f64 = pairs
        .iter()
        .map(|p| (p.1 - (intercept + slope * p.0)).powi(2))
        .sum();
    Ok(Regression {
        slope,
        intercept,
        std_error: (ssr / (n - 2.0)).sqrt(),
    })
}

/// Pairs each detection's confidence with its best IoU against same-class GTs.
pub fn confidence_iou_pairs(dets: &[Detection], gts: &[GroundTruth]) -> Vec<(f64, f64)> {
    dets.iter()
        .map(|d| {
            let best = gts
                .iter()
                .filter(|g| g.class_id == d.class_id)
                .map(|g| geom::iou(&d.bbox, &g.bbox))
                .fold(0.0, f64::max);
            (d.score, best)
        })
        .collect()
}
