//! Synthetic assignment scenes.
//!
//! Each scene tiles a three-level anchor pyramid over a 256x256 image and
//! places random ground-truth boxes on it. Predictions imitate a trained
//! detector: anchors overlapping a GT regress most of the way onto it and
//! score its class in proportion to the overlap.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::assign::{GroundTruth, Prediction, Scene};
use crate::error::{Error, Result};
use crate::geom::{self, BBox};
use crate::pyramid::{generate_anchors, PyramidSpec};
use crate::seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneConfig {
    pub image_size: f64,
    pub first_stride: u32,
    pub n_levels: usize,
    pub anchor_scale: f64,
    pub boxes_per_scene: usize,
    pub n_classes: usize,
    pub min_box: f64,
    pub max_box: f64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            image_size: 256.0,
            first_stride: 8,
            n_levels: 3,
            anchor_scale: 4.0,
            boxes_per_scene: 10,
            n_classes: 3,
            min_box: 24.0,
            max_box: 128.0,
        }
    }
}

const BACKGROUND_PROB: f64 = 0.02;

fn lerp_box(a: &BBox, b: &BBox, t: f64) -> Result<BBox> {
    let (a, b) = (a.to_array(), b.to_array());
    let c: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x + (y - x) * t).collect();
    BBox::new(c[0], c[1], c[2], c[3])
}

/// One scene; the same `(config, seed)` always yields the same scene.
pub fn scene(config: &SceneConfig, seed: u64) -> Result<Scene> {
    if config.boxes_per_scene == 0 || config.n_classes == 0 {
        return Err(Error::invalid("scene needs boxes and classes"));
    }
    if !(0.0 < config.min_box && config.min_box < config.max_box && config.max_box < config.image_size) {
        return Err(Error::invalid("box size range must fit inside the image"));
    }
    let spec = PyramidSpec::for_image(
        config.image_size as usize,
        config.image_size as usize,
        config.first_stride,
        config.n_levels,
        vec![config.anchor_scale],
        vec![1.0],
    )?;
    let anchors = generate_anchors(&spec)?;
    let mut rng = seed::rng(seed, &[]);
    let mut gts = Vec::with_capacity(config.boxes_per_scene);
    for _ in 0..config.boxes_per_scene {
        let w = rng.random_range(config.min_box..config.max_box);
        let h = rng.random_range(config.min_box..config.max_box);
        let x1 = rng.random_range(0.0..config.image_size - w);
        let y1 = rng.random_range(0.0..config.image_size - h);
        gts.push(GroundTruth {
            bbox: BBox::new(x1, y1, x1 + w, y1 + h)?,
            class_id: rng.random_range(0..config.n_classes),
        });
    }
    let predictions = anchors
        .iter()
        .map(|a| {
            let best = gts
                .iter()
                .map(|g| (geom::iou(&a.bbox, &g.bbox), g))
                .max_by(|x, y| x.0.total_cmp(&y.0));
            let mut class_probs = vec![BACKGROUND_PROB; config.n_classes];
            let bbox = match best {
                Some((overlap, g)) if overlap > 0.1 => {
                    class_probs[g.class_id] = 0.1 + 0.8 * overlap;
                    lerp_box(&a.bbox, &g.bbox, 0.8)?
                }
                _ => a.bbox,
            };
            Ok(Prediction { class_probs, bbox })
        })
        .collect::<Result<_>>()?;
    Ok(Scene {
        anchors,
        predictions,
        gts,
    })
}

/// `n` scenes; scene `s` is generated from the seed derived from `(seed, s)`.
pub fn scene_suite(n: usize, config: &SceneConfig, seed: u64) -> Result<Vec<Scene>> {
    (0..n).map(|s| scene(config, seed::derive(seed, &[s as u64]))).collect()
}
