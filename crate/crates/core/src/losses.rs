//! Loss kernels and the assignment cost matrix.

use serde::{Deserialize, Serialize};

use crate::assign::{GroundTruth, Prediction};
use crate::error::{Error, Result};
use crate::geom::{self, BBox};

/// Probability clamp keeping every logarithm finite.
pub const PROB_EPS: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FocalParams {
    pub gamma: f64,
    pub alpha: f64,
}

impl Default for FocalParams {
    fn default() -> Self {
        Self { gamma: 2.0, alpha: 0.25 }
    }
}

impl FocalParams {
    pub fn validate(&self) -> Result<()> {
        if !self.gamma.is_finite() || self.gamma < 0.0 {
            return Err(Error::invalid(format!("focal gamma {} must be >= 0", self.gamma)));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::invalid(format!("focal alpha {} outside [0, 1]", self.alpha)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostParams {
    pub lambda_reg: f64,
    pub lambda_dist: f64,
}

impl Default for CostParams {
    fn default() -> Self {
        Self {
            lambda_reg: 2.0,
            lambda_dist: 0.001,
        }
    }
}

impl CostParams {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("lambda_reg", self.lambda_reg), ("lambda_dist", self.lambda_dist)] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::invalid(format!("{name} = {v} must be finite and >= 0")));
            }
        }
        Ok(())
    }
}

/// Which classification loss enters the matching cost.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClsCost {
    #[default]
    Focal,
    /// Quality focal loss with the prediction/GT IoU as the soft target.
    QualityFocal,
}

fn clamp_prob(p: f64) -> f64 {
    p.clamp(PROB_EPS, 1.0 - PROB_EPS)
}

/// `-alpha_t (1 - p_t)^gamma ln(p_t)`.
pub fn focal_loss(p: f64, target: bool, fp: &FocalParams) -> f64 {
    let p = clamp_prob(p);
    let (p_t, alpha_t) = if target {
        (p, fp.alpha)
    } else {
        (1.0 - p, 1.0 - fp.alpha)
    };
    -alpha_t * (1.0 - p_t).powf(fp.gamma) * p_t.ln()
}

/// Derivative of [`focal_loss`] with respect to `p` (inside the clamp range).
pub fn focal_loss_grad(p: f64, target: bool, fp: &FocalParams) -> f64 {
    let p = clamp_prob(p);
    let g = fp.gamma;
    if target {
        // d/dp [-a (1-p)^g ln p]
        let q = 1.0 - p;
        let dmod = if g == 0.0 { 0.0 } else { g * q.powf(g - 1.0) };
        fp.alpha * (dmod * p.ln() - q.powf(g) / p)
    } else {
        // d/dp [-(1-a) p^g ln(1-p)]
        let q = 1.0 - p;
        let dmod = if g == 0.0 { 0.0 } else { g * p.powf(g - 1.0) };
        -(1.0 - fp.alpha) * (dmod * q.ln() - p.powf(g) / q)
    }
}

/// `|quality - p|^gamma * BCE(p, quality)`.
pub fn quality_focal_loss(p: f64, quality: f64, fp: &FocalParams) -> f64 {
    let p = clamp_prob(p);
    let bce = -(quality * p.ln() + (1.0 - quality) * (1.0 - p).ln());
    (quality - p).abs().powf(fp.gamma) * bce
}

/// `1 - GIoU`.
pub fn giou_loss(pred: &BBox, target: &BBox) -> Result<f64> {
    Ok(1.0 - geom::giou(pred, target)?)
}

/// Dense `anchors x gts` matrix, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct CostMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl CostMatrix {
    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }
}

/// Matching cost between every anchor's prediction and every ground truth:
/// classification loss on the GT class, plus `lambda_reg` times the GIoU loss
/// of the predicted box, plus `lambda_dist` times the anchor-to-GT center distance.
pub fn cost_matrix(
    anchors: &[BBox],
    predictions: &[Prediction],
    gts: &[GroundTruth],
    cp: &CostParams,
    fp: &FocalParams,
    cls: ClsCost,
) -> Result<CostMatrix> {
    cp.validate()?;
    fp.validate()?;
    if anchors.len() != predictions.len() {
        return Err(Error::domain(format!(
            "{} anchors but {} predictions",
            anchors.len(),
            predictions.len()
        )));
    }
    for (j, gt) in gts.iter().enumerate() {
        if let Some((i, _)) = predictions
            .iter()
            .enumerate()
            .find(|(_, p)| gt.class_id >= p.class_probs.len())
        {
            return Err(Error::domain(format!(
                "GT {j} has class {} but prediction {i} has only {} classes",
                gt.class_id,
                predictions[i].class_probs.len()
            )));
        }
    }
    let mut data = Vec::with_capacity(anchors.len() * gts.len());
    let mut focal_by_class = Vec::new();
    for (anchor, pred) in anchors.iter().zip(predictions) {
        if cls == ClsCost::Focal {
            focal_by_class.clear();
            focal_by_class.extend(pred.class_probs.iter().map(|&p| focal_loss(p, true, fp)));
        }
        for gt in gts {
            let p = pred.class_probs[gt.class_id];
            let l_cls = match cls {
                ClsCost::Focal => focal_by_class[gt.class_id],
                ClsCost::QualityFocal => {
                    quality_focal_loss(p, geom::iou(&pred.bbox, &gt.bbox), fp)
                }
            };
            let l_reg = giou_loss(&pred.bbox, &gt.bbox)?;
            let c_dist = geom::center_distance(anchor, &gt.bbox);
            data.push(l_cls + cp.lambda_reg * l_reg + cp.lambda_dist * c_dist);
        }
    }
    Ok(CostMatrix {
        rows: anchors.len(),
        cols: gts.len(),
        data,
    })
}

/// Supervised plus `lambda_u`-weighted unsupervised loss.
pub fn combined_loss(sup_cls: f64, sup_reg: f64, unsup_cls: f64, unsup_reg: f64, lambda_u: f64) -> f64 {
    (sup_cls + sup_reg) + lambda_u * (unsup_cls + unsup_reg)
}
