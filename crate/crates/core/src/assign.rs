//! Label assignment: static IoU thresholds, ATSS and cost-based adaptive
//! assignment (ASA), plus the A-IOU robustness experiment.

use std::collections::BTreeSet;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{self, BBox, NoiseModel};
use crate::losses::{self, ClsCost, CostParams, FocalParams};
use crate::pyramid::Anchor;
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub bbox: BBox,
    pub class_id: usize,
}

/// Per-anchor prediction; class probabilities are independent sigmoids.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub class_probs: Vec<f64>,
    pub bbox: BBox,
}

impl Prediction {
    pub fn validate(&self) -> Result<()> {
        if self.class_probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::invalid("class probabilities must lie in [0, 1]"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "state", rename_all = "snake_case")]
pub enum AnchorState {
    Positive {
        gt: usize,
        #[serde(skip_serializing_if = "Option::is_none")]
        cost: Option<f64>,
    },
    Negative,
    Ignore,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssignmentResult {
    pub anchors: Vec<AnchorState>,
}

impl AssignmentResult {
    fn all_negative(n: usize) -> Self {
        Self {
            anchors: vec![AnchorState::Negative; n],
        }
    }

    pub fn positives_of(&self, gt: usize) -> BTreeSet<usize> {
        self.anchors
            .iter()
            .enumerate()
            .filter_map(|(i, s)| match s {
                AnchorState::Positive { gt: g, .. } if *g == gt => Some(i),
                _ => None,
            })
            .collect()
    }

    pub fn num_positive(&self) -> usize {
        self.anchors
            .iter()
            .filter(|s| matches!(s, AnchorState::Positive { .. }))
            .count()
    }
}

/// Anchors, their predictions and the ground truths to assign.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub anchors: Vec<Anchor>,
    pub predictions: Vec<Prediction>,
    pub gts: Vec<GroundTruth>,
}

impl Scene {
    pub fn validate(&self) -> Result<()> {
        if !self.predictions.is_empty() && self.predictions.len() != self.anchors.len() {
            return Err(Error::domain(format!(
                "{} anchors but {} predictions",
                self.anchors.len(),
                self.predictions.len()
            )));
        }
        for p in &self.predictions {
            p.validate()?;
        }
        Ok(())
    }

    pub fn with_gts(&self, gts: Vec<GroundTruth>) -> Scene {
        Scene {
            anchors: self.anchors.clone(),
            predictions: self.predictions.clone(),
            gts,
        }
    }
}

fn anchor_boxes(anchors: &[Anchor]) -> Vec<BBox> {
    anchors.iter().map(|a| a.bbox).collect()
}

/// Static IoU thresholds with low-quality-match rescue: anchors at or above
/// `pos_thr` go positive to their best GT, below `neg_thr` negative, the rest
/// are ignored; then every GT claims its single best-overlapping anchor.
pub fn assign_iou(anchors: &[Anchor], gts: &[GroundTruth], pos_thr: f64, neg_thr: f64) -> Result<AssignmentResult> {
    if !(0.0 <= neg_thr && neg_thr <= pos_thr && pos_thr <= 1.0) {
        return Err(Error::invalid(format!(
            "thresholds need 0 <= neg ({neg_thr}) <= pos ({pos_thr}) <= 1"
        )));
    }
    if gts.is_empty() {
        return Ok(AssignmentResult::all_negative(anchors.len()));
    }
    let n = gts.len();
    let ious: Vec<f64> = anchors
        .iter()
        .flat_map(|a| gts.iter().map(|g| geom::iou(&a.bbox, &g.bbox)))
        .collect();
    let mut states: Vec<AnchorState> = ious
        .chunks_exact(n)
        .map(|row| {
            let (best, max) = argmax_first(row.iter().copied());
            if max >= pos_thr {
                AnchorState::Positive { gt: best, cost: None }
            } else if max < neg_thr {
                AnchorState::Negative
            } else {
                AnchorState::Ignore
            }
        })
        .collect();
    if anchors.is_empty() {
        return Ok(AssignmentResult { anchors: states });
    }
    // Reverse order so that a lower GT index wins a shared best anchor.
    for j in (0..n).rev() {
        let (i, v) = argmax_first(ious.iter().skip(j).step_by(n).copied());
        if v > 0.0 {
            states[i] = AnchorState::Positive { gt: j, cost: None };
        }
    }
    Ok(AssignmentResult { anchors: states })
}

/// First index of the maximum.
fn argmax_first(v: impl Iterator<Item = f64>) -> (usize, f64) {
    v.enumerate()
        .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, x)| if x > bv { (i, x) } else { (bi, bv) })
}

/// Adaptive training sample selection. For each GT the `topk_per_level`
/// anchors closest to its center on every level become candidates; a
/// candidate is positive when its IoU reaches the mean plus the (population)
/// standard deviation of the candidate IoUs and its center lies inside the GT.
pub fn assign_atss(anchors: &[Anchor], gts: &[GroundTruth], topk_per_level: usize) -> Result<AssignmentResult> {
    if topk_per_level == 0 {
        return Err(Error::invalid("ATSS topk_per_level must be >= 1"));
    }
    if gts.is_empty() {
        return Ok(AssignmentResult::all_negative(anchors.len()));
    }
    let n_levels = anchors.iter().map(|a| a.level + 1).max().unwrap_or(0);
    let mut by_level: Vec<Vec<usize>> = vec![Vec::new(); n_levels];
    for (i, a) in anchors.iter().enumerate() {
        by_level[a.level].push(i);
    }

    // best (iou, gt) claim per anchor
    let mut claims: Vec<Option<(f64, usize)>> = vec![None; anchors.len()];
    for (j, gt) in gts.iter().enumerate() {
        let mut candidates = Vec::new();
        for level in &by_level {
            let mut ranked: Vec<(f64, usize)> = level
                .iter()
                .map(|&i| (geom::center_distance(&anchors[i].bbox, &gt.bbox), i))
                .collect();
            let by_distance = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
            let k = topk_per_level.min(ranked.len());
            if k < ranked.len() {
                ranked.select_nth_unstable_by(k, by_distance);
                ranked.truncate(k);
            }
            ranked.sort_by(by_distance);
            candidates.extend(ranked.into_iter().map(|(_, i)| i));
        }
        let cand_ious: Vec<f64> = candidates
            .iter()
            .map(|&i| geom::iou(&anchors[i].bbox, &gt.bbox))
            .collect();
        let n = cand_ious.len() as f64;
        let mean = cand_ious.iter().sum::<f64>() / n;
        let var = cand_ious.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let thr = mean + var.sqrt();
        for (&i, &v) in candidates.iter().zip(&cand_ious) {
            let (cx, cy) = anchors[i].bbox.center();
            if v >= thr && gt.bbox.contains_point(cx, cy) {
                // strictly greater keeps the lower GT index on ties
                if claims[i].is_none_or(|(best, _)| v > best) {
                    claims[i] = Some((v, j));
                }
            }
        }
    }
    Ok(AssignmentResult {
        anchors: claims
            .into_iter()
            .map(|c| match c {
                Some((_, gt)) => AnchorState::Positive { gt, cost: None },
                None => AnchorState::Negative,
            })
            .collect(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AsaParams {
    pub cost: CostParams,
    pub focal: FocalParams,
    pub k: usize,
    pub cls: ClsCost,
}

impl Default for AsaParams {
    fn default() -> Self {
        Self {
            cost: CostParams::default(),
            focal: FocalParams::default(),
            k: 13,
            cls: ClsCost::Focal,
        }
    }
}

/// Cost-based assignment: each GT nominates its `k` lowest-cost anchors and an
/// anchor nominated by several GTs goes to the cheapest one. A GT that loses a
/// nominee is not compensated with its next candidate.
pub fn assign_asa(
    anchors: &[Anchor],
    predictions: &[Prediction],
    gts: &[GroundTruth],
    params: &AsaParams,
) -> Result<AssignmentResult> {
    if params.k == 0 {
        return Err(Error::invalid("ASA k must be >= 1"));
    }
    if predictions.len() != anchors.len() {
        return Err(Error::domain(format!(
            "{} anchors but {} predictions",
            anchors.len(),
            predictions.len()
        )));
    }
    if gts.is_empty() {
        return Ok(AssignmentResult::all_negative(anchors.len()));
    }
    let cost = losses::cost_matrix(
        &anchor_boxes(anchors),
        predictions,
        gts,
        &params.cost,
        &params.focal,
        params.cls,
    )?;
    let k = params.k.min(anchors.len());
    let mut best: Vec<Option<(f64, usize)>> = vec![None; anchors.len()];
    let mut order: Vec<usize> = (0..anchors.len()).collect();
    for j in 0..gts.len() {
        let by_cost = |a: &usize, b: &usize| cost.get(*a, j).total_cmp(&cost.get(*b, j)).then(a.cmp(b));
        if k < order.len() {
            order.select_nth_unstable_by(k, by_cost);
        }
        for &i in &order[..k] {
            let c = cost.get(i, j);
            if best[i].is_none_or(|(bc, _)| c < bc) {
                best[i] = Some((c, j));
            }
        }
    }
    Ok(AssignmentResult {
        anchors: best
            .into_iter()
            .map(|b| match b {
                Some((c, gt)) => AnchorState::Positive { gt, cost: Some(c) },
                None => AnchorState::Negative,
            })
            .collect(),
    })
}

/// Jaccard index of the positive sets for one GT; 1 when both are empty.
pub fn assignment_aiou(a: &AssignmentResult, b: &AssignmentResult, gt_index: usize, n_gts: usize) -> Result<f64> {
    if gt_index >= n_gts {
        return Err(Error::domain(format!("GT index {gt_index} out of range ({n_gts} GTs)")));
    }
    if a.anchors.len() != b.anchors.len() {
        return Err(Error::domain("assignments cover different anchor lists"));
    }
    let sa = a.positives_of(gt_index);
    let sb = b.positives_of(gt_index);
    let union = sa.union(&sb).count();
    if union == 0 {
        return Ok(1.0);
    }
    Ok(sa.intersection(&sb).count() as f64 / union as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Assigner {
    Iou { pos_thr: f64, neg_thr: f64 },
    Atss { topk_per_level: usize },
    Asa(AsaParams),
}

impl Assigner {
    pub fn iou_default() -> Self {
        Assigner::Iou { pos_thr: 0.5, neg_thr: 0.4 }
    }

    pub fn atss_default() -> Self {
        Assigner::Atss { topk_per_level: 9 }
    }

    pub fn asa_default() -> Self {
        Assigner::Asa(AsaParams::default())
    }

    pub fn name(&self) -> &'static str {
        match self {
            Assigner::Iou { .. } => "iou",
            Assigner::Atss { .. } => "atss",
            Assigner::Asa(_) => "asa",
        }
    }

    pub fn assign(&self, scene: &Scene) -> Result<AssignmentResult> {
        self.assign_parts(&scene.anchors, &scene.predictions, &scene.gts)
    }

    pub fn assign_parts(&self, anchors: &[Anchor], predictions: &[Prediction], gts: &[GroundTruth]) -> Result<AssignmentResult> {
        match *self {
            Assigner::Iou { pos_thr, neg_thr } => assign_iou(anchors, gts, pos_thr, neg_thr),
            Assigner::Atss { topk_per_level } => assign_atss(anchors, gts, topk_per_level),
            Assigner::Asa(ref p) => assign_asa(anchors, predictions, gts, p),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AiouRow {
    pub rho: f64,
    pub mean_aiou: f64,
    pub std_aiou: f64,
    pub trials: usize,
}

/// Per-trial A-IOU (averaged over GTs) for one noise level. Trial `t` draws
/// its noise from the stream `(seed, rho_index, t)`.
pub fn aiou_trials(
    scene: &Scene,
    assigner: &Assigner,
    rho_index: usize,
    rho: f64,
    trials: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    let clean = assigner.assign(scene)?;
    (0..trials)
        .into_par_iter()
        .map(|t| {
            if scene.gts.is_empty() {
                return Ok(1.0);
            }
            let mut noise = NoiseModel::with_rng(rho, seed::rng(seed, &[rho_index as u64, t as u64]))?;
            let noisy_gts: Vec<GroundTruth> = scene
                .gts
                .iter()
                .map(|g| GroundTruth {
                    bbox: noise.perturb(&g.bbox),
                    class_id: g.class_id,
                })
                .collect();
            let noisy = assigner.assign_parts(&scene.anchors, &scene.predictions, &noisy_gts)?;
            let n = scene.gts.len();
            let mut sum = 0.0;
            for g in 0..n {
                sum += assignment_aiou(&clean, &noisy, g, n)?;
            }
            Ok(sum / n as f64)
        })
        .collect()
}

fn summarize(rho: f64, samples: &[f64]) -> AiouRow {
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let var = samples.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    AiouRow {
        rho,
        mean_aiou: mean,
        std_aiou: var.sqrt(),
        trials: samples.len(),
    }
}

/// Mean and standard deviation of A-IOU over `trials` noisy copies of the
/// scene's GTs, for each noise ratio.
pub fn aiou_experiment(scene: &Scene, assigner: &Assigner, rhos: &[f64], trials: usize, seed: u64) -> Result<Vec<AiouRow>> {
    if trials == 0 {
        return Err(Error::invalid("need at least one trial"));
    }
    scene.validate()?;
    rhos.iter()
        .enumerate()
        .map(|(ri, &rho)| Ok(summarize(rho, &aiou_trials(scene, assigner, ri, rho, trials, seed)?)))
        .collect()
}

/// Pools per-trial A-IOU across a suite of scenes; scene `s` uses the seed
/// derived from `(seed, s)`.
pub fn aiou_suite(scenes: &[Scene], assigner: &Assigner, rhos: &[f64], trials: usize, seed: u64) -> Result<Vec<AiouRow>> {
    if trials == 0 {
        return Err(Error::invalid("need at least one trial"));
    }
    rhos.iter()
        .enumerate()
        .map(|(ri, &rho)| {
            let per_scene: Vec<Vec<f64>> = scenes
                .par_iter()
                .enumerate()
                .map(|(s, scene)| aiou_trials(scene, assigner, ri, rho, trials, seed::derive(seed, &[s as u64])))
                .collect::<Result<_>>()?;
            let pooled: Vec<f64> = per_scene.into_iter().flatten().collect();
            Ok(summarize(rho, &pooled))
        })
        .collect()
}
