//! Independent reference implementations used as test oracles. They share
//! no code with the library beyond its data types.

#![allow(dead_code)]

use pseudolab::assign::GroundTruth;
use pseudolab::eval::{Detection, ImageDetections, ImageGroundTruth};
use pseudolab::pyramid::{FeatureLevel, FeaturePyramid, LevelShape, OffsetField, OffsetLevel};
use pseudolab::BBox;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn bb(x1: f64, y1: f64, x2: f64, y2: f64) -> BBox {
    BBox::new(x1, y1, x2, y2).unwrap()
}

/// IoU by counting unit cells of an integer grid.
pub fn raster_iou(a: [i32; 4], b: [i32; 4]) -> f64 {
    let inside = |r: [i32; 4], x: i32, y: i32| x >= r[0] && x < r[2] && y >= r[1] && y < r[3];
    let (mut inter, mut union) = (0u32, 0u32);
    for y in 0..64 {
        for x in 0..64 {
            let (ia, ib) = (inside(a, x, y), inside(b, x, y));
            inter += (ia && ib) as u32;
            union += (ia || ib) as u32;
        }
    }
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

pub fn random_int_box<R: Rng>(r: &mut R, max: i32) -> [i32; 4] {
    let (a, b) = (r.random_range(0..=max), r.random_range(0..=max));
    let (c, d) = (r.random_range(0..=max), r.random_range(0..=max));
    [a.min(b), c.min(d), a.max(b), c.max(d)]
}

fn plain_iou(a: &BBox, b: &BBox) -> f64 {
    let iw = (a.x2().min(b.x2()) - a.x1().max(b.x1())).max(0.0);
    let ih = (a.y2().min(b.y2()) - a.y1().max(b.y1())).max(0.0);
    let inter = iw * ih;
    let union = a.width() * a.height() + b.width() * b.height() - inter;
    if union > 0.0 {
        inter / union
    } else {
        0.0
    }
}

/// 101-point interpolated AP by direct enumeration: for each recall level,
/// the best precision among all cut-offs reaching that recall.
fn reference_ap(mut ranked: Vec<(f64, usize, bool)>, n_gt: usize) -> f64 {
    if n_gt == 0 {
        return if ranked.is_empty() { 1.0 } else { 0.0 };
    }
    // score descending, then input position
    ranked.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
    let mut points = Vec::new();
    let mut tp = 0.0;
    for (k, &(_, _, hit)) in ranked.iter().enumerate() {
        if hit {
            tp += 1.0;
        }
        points.push((tp / n_gt as f64, tp / (k + 1) as f64));
    }
    let mut sum = 0.0;
    for r in 0..=100 {
        let level = r as f64 / 100.0;
        let best = points
            .iter()
            .filter(|(rec, _)| *rec >= level)
            .map(|&(_, p)| p)
            .fold(0.0, f64::max);
        sum += best;
    }
    sum / 101.0
}

/// COCO-style mAP@[.50:.95] coded straight from the definition.
pub fn reference_map(preds: &[ImageDetections], gts: &[ImageGroundTruth]) -> Option<f64> {
    let mut ids: Vec<u64> = gts.iter().map(|g| g.image_id).chain(preds.iter().map(|p| p.image_id)).collect();
    ids.sort();
    ids.dedup();
    let dets_of = |id: u64| -> Vec<Detection> {
        preds
            .iter()
            .filter(|p| p.image_id == id)
            .flat_map(|p| p.detections.iter().copied())
            .collect()
    };
    let gts_of = |id: u64| -> Vec<GroundTruth> {
        gts.iter()
            .filter(|g| g.image_id == id)
            .flat_map(|g| g.gts.iter().copied())
            .collect()
    };
    let mut classes: Vec<usize> = gts.iter().flat_map(|g| g.gts.iter().map(|x| x.class_id)).collect();
    classes.sort();
    classes.dedup();
    if classes.is_empty() {
        return None;
    }
    let mut class_sum = 0.0;
    for &c in &classes {
        let mut thr_sum = 0.0;
        for t in 0..10 {
            let thr = (50 + 5 * t) as f64 / 100.0;
            let mut ranked = Vec::new();
            let mut n_gt = 0;
            let mut position = 0;
            for &id in &ids {
                let g: Vec<GroundTruth> = gts_of(id).into_iter().filter(|g| g.class_id == c).collect();
                n_gt += g.len();
                let mut d: Vec<(usize, Detection)> =
                    dets_of(id).into_iter().filter(|d| d.class_id == c).enumerate().collect();
                d.sort_by(|a, b| b.1.score.partial_cmp(&a.1.score).unwrap().then(a.0.cmp(&b.0)));
                d.truncate(100);
                let mut taken = vec![false; g.len()];
                for (_, det) in d {
                    let mut best: Option<(usize, f64)> = None;
                    for (gi, gt) in g.iter().enumerate() {
                        if taken[gi] {
                            continue;
                        }
                        let v = plain_iou(&det.bbox, &gt.bbox);
                        if v >= thr && best.is_none_or(|(_, bv)| v > bv) {
                            best = Some((gi, v));
                        }
                    }
                    if let Some((gi, _)) = best {
                        taken[gi] = true;
                    }
                    ranked.push((det.score, position, best.is_some()));
                    position += 1;
                }
            }
            thr_sum += reference_ap(ranked, n_gt);
        }
        class_sum += thr_sum / 10.0;
    }
    Some(class_sum / classes.len() as f64)
}

/// Random micro-dataset: up to `max_images` images, up to `max_boxes` GTs
/// each, up to `max_classes` classes. Detections are jittered GTs plus
/// random false positives with distinct scores.
pub fn micro_dataset<R: Rng>(
    r: &mut R,
    max_images: usize,
    max_boxes: usize,
    max_classes: usize,
) -> (Vec<ImageDetections>, Vec<ImageGroundTruth>) {
    let n_img = r.random_range(1..=max_images);
    let n_cls = r.random_range(1..=max_classes);
    let mut preds = Vec::new();
    let mut gts = Vec::new();
    for id in 0..n_img as u64 {
        let n_gt = r.random_range(0..=max_boxes);
        let mut g = Vec::new();
        let mut d = Vec::new();
        for _ in 0..n_gt {
            let x = r.random_range(0.0..80.0);
            let y = r.random_range(0.0..80.0);
            let w = r.random_range(5.0..30.0);
            let h = r.random_range(5.0..30.0);
            let class_id = r.random_range(0..n_cls);
            g.push(GroundTruth { bbox: bb(x, y, x + w, y + h), class_id });
            if r.random_bool(0.8) {
                let jx = r.random_range(-4.0..4.0);
                let jy = r.random_range(-4.0..4.0);
                d.push(Detection {
                    bbox: bb(x + jx, y + jy, x + w + jx, y + h + jy),
                    class_id: if r.random_bool(0.9) { class_id } else { r.random_range(0..n_cls) },
                    score: r.random_range(0.0..1.0),
                });
            }
        }
        for _ in 0..r.random_range(0..=3) {
            let x = r.random_range(0.0..80.0);
            let y = r.random_range(0.0..80.0);
            d.push(Detection {
                bbox: bb(x, y, x + r.random_range(5.0..30.0), y + r.random_range(5.0..30.0)),
                class_id: r.random_range(0..n_cls),
                score: r.random_range(0.0..1.0),
            });
        }
        gts.push(ImageGroundTruth { image_id: id, gts: g });
        preds.push(ImageDetections { image_id: id, detections: d });
    }
    (preds, gts)
}

/// Random dyadic pyramid with `channels` channels and values in [-5, 5].
pub fn random_pyramid<R: Rng>(r: &mut R, channels: usize) -> FeaturePyramid {
    let n_levels = r.random_range(1..=3);
    let (mut h, mut w) = (r.random_range(1..=9), r.random_range(1..=9));
    let mut stride = 8;
    let mut levels = Vec::new();
    for _ in 0..n_levels {
        let data = (0..channels * h * w).map(|_| r.random_range(-5.0..5.0)).collect();
        levels.push(FeatureLevel { shape: LevelShape { stride, height: h, width: w }, data });
        h = h.div_ceil(2);
        w = w.div_ceil(2);
        stride *= 2;
    }
    FeaturePyramid::new(channels, levels).unwrap()
}

/// Random offsets; `in_plane` and `cross` toggle the (d0, d1) and d2 parts.
pub fn random_offsets<R: Rng>(r: &mut R, p: &FeaturePyramid, in_plane: bool, cross: bool) -> OffsetField {
    OffsetField {
        levels: p
            .levels()
            .iter()
            .map(|l| {
                let (h, w) = (l.shape.height, l.shape.width);
                let mut o = OffsetLevel::zeros(h, w);
                for i in 0..h {
                    for j in 0..w {
                        let d0 = if in_plane { r.random_range(-3.0..3.0) } else { 0.0 };
                        let d1 = if in_plane { r.random_range(-3.0..3.0) } else { 0.0 };
                        let d2 = if cross { r.random_range(-2.5..2.5) } else { 0.0 };
                        o.set(i, j, (d0, d1, d2));
                    }
                }
                o
            })
            .collect(),
    }
}

fn sample_grid(get: &dyn Fn(usize, usize) -> f64, h: usize, w: usize, y: f64, x: f64) -> f64 {
    let y = y.max(0.0).min((h - 1) as f64);
    let x = x.max(0.0).min((w - 1) as f64);
    let (iy, ix) = (y.floor(), x.floor());
    let (dy, dx) = (y - iy, x - ix);
    let (iy, ix) = (iy as usize, ix as usize);
    let at = |a: usize, b: usize| get(a.min(h - 1), b.min(w - 1));
    at(iy, ix) * (1.0 - dy) * (1.0 - dx)
        + at(iy, ix + 1) * (1.0 - dy) * dx
        + at(iy + 1, ix) * dy * (1.0 - dx)
        + at(iy + 1, ix + 1) * dy * dx
}

/// Value of the two-step resampling at one output cell, evaluated directly
/// from the definitions without materialising intermediate pyramids.
pub fn reference_fam3d(p: &FeaturePyramid, d: &OffsetField, l: usize, c: usize, i: usize, j: usize) -> f64 {
    let shape = |k: usize| (p.levels()[k].shape.height, p.levels()[k].shape.width);
    // first step at an integer cell of level k
    let step1 = |k: usize, a: usize, b: usize| -> f64 {
        let (h, w) = shape(k);
        let (d0, d1, _) = d.levels[k].at(a, b);
        sample_grid(&|y, x| p.get(k, c, y, x), h, w, a as f64 + d0, b as f64 + d1)
    };
    let (_, _, d2) = d.levels[l].at(i, j);
    let last = (p.levels().len() - 1) as f64;
    let t = (l as f64 + d2).max(0.0).min(last);
    let (h, w) = shape(l);
    let read = |k: usize| {
        let (th, tw) = shape(k);
        let y = i as f64 * th as f64 / h as f64;
        let x = j as f64 * tw as f64 / w as f64;
        sample_grid(&|a, b| step1(k, a, b), th, tw, y, x)
    };
    let lo = t.floor();
    let frac = t - lo;
    if frac == 0.0 {
        read(lo as usize)
    } else {
        (1.0 - frac) * read(lo as usize) + frac * read(lo as usize + 1)
    }
}

/// Closed-form focal loss.
pub fn focal_closed_form(p: f64, target: bool, gamma: f64, alpha: f64) -> f64 {
    let (pt, at) = if target { (p, alpha) } else { (1.0 - p, 1.0 - alpha) };
    -at * (1.0 - pt).powf(gamma) * pt.ln()
}
