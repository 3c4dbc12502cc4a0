//! File formats: JSON inputs and outputs, CSV tables and the simulator's
//! TOML configuration.
//!
//! Parsing goes through plain data structs first so that a well-formed file
//! holding an invalid value (an inverted box, a probability above 1) reports
//! an invariant violation rather than a syntax error.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::assign::{AiouRow, AssignmentResult, GroundTruth, Prediction, Scene};
use crate::error::{Error, Result};
use crate::eval::{Detection, EvalResult, ImageDetections, ImageGroundTruth};
use crate::fmt::sig6;
use crate::geom::BBox;
use crate::gmm::{EmConfig, ThresholdConfig, ThresholdDecision, ThresholdRule};
use crate::pyramid::{Anchor, FeatureLevel, FeaturePyramid, LevelShape, OffsetField, OffsetLevel};
use crate::sim::{RunConfig, RunMetrics, Schedule, SkillPoint, SummaryRow, TeacherSkill, WorldConfig};

fn bbox(a: [f64; 4]) -> Result<BBox> {
    BBox::new(a[0], a[1], a[2], a[3])
}

fn to_pretty<T: Serialize>(v: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(v)?;
    s.push('\n');
    Ok(s)
}

#[derive(Deserialize, Serialize)]
#[serde(untagged)]
enum AnchorDto {
    Plain([f64; 4]),
    Leveled { bbox: [f64; 4], level: usize },
}

#[derive(Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
struct PredictionDto {
    probs: Vec<f64>,
    bbox: [f64; 4],
}

#[derive(Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
struct GtDto {
    bbox: [f64; 4],
    class: usize,
}

#[derive(Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
struct SceneDto {
    anchors: Vec<AnchorDto>,
    #[serde(default)]
    predictions: Vec<PredictionDto>,
    #[serde(default)]
    gts: Vec<GtDto>,
}

/// Scene JSON: `{anchors, predictions:[{probs, bbox}], gts:[{bbox, class}]}`.
/// An anchor is either a bare box (level 0) or `{bbox, level}`.
pub fn parse_scene(text: &str) -> Result<Scene> {
    let dto: SceneDto = serde_json::from_str(text)?;
    let anchors = dto
        .anchors
        .into_iter()
        .map(|a| match a {
            AnchorDto::Plain(b) => Ok(Anchor::free(bbox(b)?, 0)),
            AnchorDto::Leveled { bbox: b, level } => Ok(Anchor::free(bbox(b)?, level)),
        })
        .collect::<Result<_>>()?;
    let predictions = dto
        .predictions
        .into_iter()
        .map(|p| {
            Ok(Prediction {
                class_probs: p.probs,
                bbox: bbox(p.bbox)?,
            })
        })
        .collect::<Result<_>>()?;
    let gts = dto
        .gts
        .into_iter()
        .map(|g| {
            Ok(GroundTruth {
                bbox: bbox(g.bbox)?,
                class_id: g.class,
            })
        })
        .collect::<Result<_>>()?;
    let scene = Scene {
        anchors,
        predictions,
        gts,
    };
    scene.validate()?;
    Ok(scene)
}

pub fn scene_to_json(scene: &Scene) -> Result<String> {
    let dto = SceneDto {
        anchors: scene
            .anchors
            .iter()
            .map(|a| AnchorDto::Leveled {
                bbox: a.bbox.to_array(),
                level: a.level,
            })
            .collect(),
        predictions: scene
            .predictions
            .iter()
            .map(|p| PredictionDto {
                probs: p.class_probs.clone(),
                bbox: p.bbox.to_array(),
            })
            .collect(),
        gts: scene
            .gts
            .iter()
            .map(|g| GtDto {
                bbox: g.bbox.to_array(),
                class: g.class_id,
            })
            .collect(),
    };
    to_pretty(&dto)
}

/// `{anchors:[{state, gt?, cost?}]}`.
pub fn assignment_to_json(r: &AssignmentResult) -> Result<String> {
    to_pretty(r)
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ScoresDto {
    classes: BTreeMap<String, Vec<f64>>,
}

fn class_key(k: &str) -> Result<usize> {
    k.parse()
        .map_err(|_| Error::Config(format!("class key {k:?} is not a non-negative integer")))
}

/// `{classes:{"<id>":[s,...]}}`.
pub fn parse_scores(text: &str) -> Result<BTreeMap<usize, Vec<f64>>> {
    let dto: ScoresDto = serde_json::from_str(text)?;
    let mut out = BTreeMap::new();
    for (k, v) in dto.classes {
        if let Some(s) = v.iter().find(|s| !(0.0..=1.0).contains(*s)) {
            return Err(Error::invalid(format!("class {k}: score {s} outside [0, 1]")));
        }
        out.insert(class_key(&k)?, v);
    }
    Ok(out)
}

#[derive(Serialize)]
struct ThresholdsDto<'a> {
    classes: BTreeMap<String, &'a ThresholdDecision>,
}

/// `{classes:{"<id>":{tau, source}}}`.
pub fn thresholds_to_json(t: &BTreeMap<usize, ThresholdDecision>) -> Result<String> {
    to_pretty(&ThresholdsDto {
        classes: t.iter().map(|(k, v)| (k.to_string(), v)).collect(),
    })
}

#[derive(Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
struct DetDto {
    bbox: [f64; 4],
    class: usize,
    score: f64,
}

#[derive(Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
struct PredImageDto {
    id: u64,
    dets: Vec<DetDto>,
}

#[derive(Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
struct PredsDto {
    images: Vec<PredImageDto>,
}

#[derive(Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
struct GtImageDto {
    id: u64,
    gts: Vec<GtDto>,
}

#[derive(Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
struct GtsDto {
    images: Vec<GtImageDto>,
}

/// `{images:[{id, dets:[{bbox, class, score}]}]}`.
pub fn parse_predictions(text: &str) -> Result<Vec<ImageDetections>> {
    let dto: PredsDto = serde_json::from_str(text)?;
    dto.images
        .into_iter()
        .map(|img| {
            let detections = img
                .dets
                .into_iter()
                .map(|d| {
                    if !(0.0..=1.0).contains(&d.score) {
                        return Err(Error::invalid(format!("score {} outside [0, 1]", d.score)));
                    }
                    Ok(Detection {
                        bbox: bbox(d.bbox)?,
                        class_id: d.class,
                        score: d.score,
                    })
                })
                .collect::<Result<_>>()?;
            Ok(ImageDetections {
                image_id: img.id,
                detections,
            })
        })
        .collect()
}

pub fn predictions_to_json(preds: &[ImageDetections]) -> Result<String> {
    to_pretty(&PredsDto {
        images: preds
            .iter()
            .map(|img| PredImageDto {
                id: img.image_id,
                dets: img
                    .detections
                    .iter()
                    .map(|d| DetDto {
                        bbox: d.bbox.to_array(),
                        class: d.class_id,
                        score: d.score,
                    })
                    .collect(),
            })
            .collect(),
    })
}

/// `{images:[{id, gts:[{bbox, class}]}]}`.
pub fn parse_ground_truth(text: &str) -> Result<Vec<ImageGroundTruth>> {
    let dto: GtsDto = serde_json::from_str(text)?;
    dto.images
        .into_iter()
        .map(|img| {
            let gts = img
                .gts
                .into_iter()
                .map(|g| {
                    Ok(GroundTruth {
                        bbox: bbox(g.bbox)?,
                        class_id: g.class,
                    })
                })
                .collect::<Result<_>>()?;
            Ok(ImageGroundTruth { image_id: img.id, gts })
        })
        .collect()
}

pub fn ground_truth_to_json(gts: &[ImageGroundTruth]) -> Result<String> {
    to_pretty(&GtsDto {
        images: gts
            .iter()
            .map(|img| GtImageDto {
                id: img.image_id,
                gts: img
                    .gts
                    .iter()
                    .map(|g| GtDto {
                        bbox: g.bbox.to_array(),
                        class: g.class_id,
                    })
                    .collect(),
            })
            .collect(),
    })
}

pub fn eval_to_json(r: &EvalResult) -> Result<String> {
    to_pretty(r)
}

#[derive(Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
struct PyramidLevelDto {
    stride: u32,
    h: usize,
    w: usize,
    data: Vec<Vec<f64>>,
}

#[derive(Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
struct PyramidDto {
    channels: usize,
    levels: Vec<PyramidLevelDto>,
}

/// `{channels, levels:[{stride, h, w, data:[[...], ...]}]}`, one row-major
/// array per channel.
pub fn parse_pyramid(text: &str) -> Result<FeaturePyramid> {
    let dto: PyramidDto = serde_json::from_str(text)?;
    let levels = dto
        .levels
        .into_iter()
        .enumerate()
        .map(|(l, lvl)| {
            if lvl.data.len() != dto.channels {
                return Err(Error::invalid(format!(
                    "level {l} has {} channel arrays, expected {}",
                    lvl.data.len(),
                    dto.channels
                )));
            }
            Ok(FeatureLevel {
                shape: LevelShape {
                    stride: lvl.stride,
                    height: lvl.h,
                    width: lvl.w,
                },
                data: lvl.data.concat(),
            })
        })
        .collect::<Result<_>>()?;
    FeaturePyramid::new(dto.channels, levels)
}

pub fn pyramid_to_json(p: &FeaturePyramid) -> Result<String> {
    let levels = p
        .levels()
        .iter()
        .map(|l| {
            let n = l.shape.height * l.shape.width;
            PyramidLevelDto {
                stride: l.shape.stride,
                h: l.shape.height,
                w: l.shape.width,
                data: l.data.chunks(n.max(1)).map(<[f64]>::to_vec).collect(),
            }
        })
        .collect();
    to_pretty(&PyramidDto {
        channels: p.channels(),
        levels,
    })
}

#[derive(Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
struct OffsetLevelDto {
    h: usize,
    w: usize,
    data: [Vec<f64>; 3],
}

#[derive(Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
struct OffsetsDto {
    levels: Vec<OffsetLevelDto>,
}

/// `{levels:[{h, w, data:[[d0...], [d1...], [d2...]]}]}`: row, column and
/// level offsets, each row-major.
pub fn parse_offsets(text: &str) -> Result<OffsetField> {
    let dto: OffsetsDto = serde_json::from_str(text)?;
    let levels = dto
        .levels
        .into_iter()
        .enumerate()
        .map(|(l, lvl)| {
            let n = lvl.h * lvl.w;
            if lvl.data.iter().any(|p| p.len() != n) {
                return Err(Error::invalid(format!("offset level {l}: every plane needs {n} values")));
            }
            if lvl.data.iter().flatten().any(|v| !v.is_finite()) {
                return Err(Error::invalid(format!("offset level {l} has non-finite values")));
            }
            Ok(OffsetLevel {
                height: lvl.h,
                width: lvl.w,
                data: lvl.data.concat(),
            })
        })
        .collect::<Result<_>>()?;
    Ok(OffsetField { levels })
}

pub fn offsets_to_json(d: &OffsetField) -> Result<String> {
    let levels = d
        .levels
        .iter()
        .map(|l| {
            let n = l.height * l.width;
            OffsetLevelDto {
                h: l.height,
                w: l.width,
                data: [
                    l.data[..n].to_vec(),
                    l.data[n..2 * n].to_vec(),
                    l.data[2 * n..].to_vec(),
                ],
            }
        })
        .collect();
    to_pretty(&OffsetsDto { levels })
}

/// `assigner,rho,mean_aiou,std_aiou`.
pub fn aiou_csv(rows: &[(String, AiouRow)]) -> String {
    let mut s = String::from("assigner,rho,mean_aiou,std_aiou\n");
    for (name, r) in rows {
        let _ = writeln!(s, "{},{},{},{}", name, sig6(r.rho), sig6(r.mean_aiou), sig6(r.std_aiou));
    }
    s
}

/// One assigner's table: `rho,mean_aiou,std_aiou,trials`.
pub fn aiou_table_csv(rows: &[AiouRow]) -> String {
    let mut s = String::from("rho,mean_aiou,std_aiou,trials\n");
    for r in rows {
        let _ = writeln!(s, "{},{},{},{}", sig6(r.rho), sig6(r.mean_aiou), sig6(r.std_aiou), r.trials);
    }
    s
}

/// `step,class_id,tau,pseudo_per_image,inconsistency_cum`, one row per step
/// and class.
pub fn run_csv(m: &RunMetrics) -> String {
    let mut s = String::from("step,class_id,tau,pseudo_per_image,inconsistency_cum\n");
    for st in &m.steps {
        for (c, tau) in st.tau.iter().enumerate() {
            let _ = writeln!(
                s,
                "{},{},{},{},{}",
                st.step,
                c,
                sig6(*tau),
                sig6(st.pseudo_per_image),
                sig6(st.inconsistency_cum)
            );
        }
    }
    s
}

pub fn summary_csv(rows: &[SummaryRow], runs: &[RunMetrics]) -> String {
    let mut s = String::from("schedule,mean_pseudo_per_image,cv_pseudo_per_image,final_inconsistency,inconsistency_defined\n");
    for (r, m) in rows.iter().zip(runs) {
        let _ = writeln!(
            s,
            "{},{},{},{},{}",
            r.schedule,
            sig6(r.mean_pseudo_per_image),
            sig6(r.cv_pseudo_per_image),
            sig6(r.final_inconsistency),
            m.inconsistency_defined
        );
    }
    s
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct WorldDto {
    n_images: Option<usize>,
    boxes_per_image: Option<usize>,
    n_classes: Option<usize>,
    image_size: Option<[f64; 2]>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SkillDto {
    pos_score_mean: Option<[f64; 2]>,
    pos_score_std: Option<[f64; 2]>,
    neg_rate: Option<[f64; 2]>,
    bbox_noise_rho: Option<[f64; 2]>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RunDto {
    steps: Option<usize>,
    checkpoint_every: Option<usize>,
    gt_cutoff: Option<f64>,
    ema_params: Option<usize>,
    ema_momentum: Option<f64>,
}

#[derive(Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
enum ScheduleDto {
    Fixed {
        tau: f64,
    },
    Gmm {
        capacity: Option<usize>,
        rule: Option<ThresholdRule>,
        fallback_tau: Option<f64>,
        max_iters: Option<usize>,
        tol: Option<f64>,
        var_floor: Option<f64>,
    },
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SimDto {
    run: Option<RunDto>,
    world: Option<WorldDto>,
    skill: Option<SkillDto>,
    schedule: BTreeMap<String, ScheduleDto>,
}

/// A parsed simulator configuration. Schedules are ordered by name.
#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub world: WorldConfig,
    pub skill: TeacherSkill,
    pub run: RunConfig,
    pub schedules: Vec<(String, Schedule)>,
}

impl SimConfig {
    /// Seeds the world and the teacher stream from one base seed.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.world.seed = seed;
        self.run.seed = seed;
        self
    }
}

/// Parses the simulator's TOML configuration. Every key except the
/// schedules has a default; skill entries are `[start, end]` pairs.
///
/// ```toml
/// [run]
/// steps = 500
/// checkpoint_every = 50
///
/// [world]
/// n_images = 32
/// boxes_per_image = 5
/// n_classes = 3
/// image_size = [256, 256]
///
/// [skill]
/// pos_score_mean = [0.3, 0.9]
/// pos_score_std = [0.05, 0.05]
/// neg_rate = [6, 2]
/// bbox_noise_rho = [0.15, 0.05]
///
/// [schedule.fixed]
/// kind = "fixed"
/// tau = 0.4
///
/// [schedule.gmm]
/// kind = "gmm"
/// capacity = 200
/// rule = "crossing"
/// ```
pub fn parse_sim_config(text: &str) -> Result<SimConfig> {
    let dto: SimDto = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
    let dw = WorldConfig::default();
    let world = match dto.world {
        None => dw,
        Some(w) => {
            let [image_width, image_height] = w.image_size.unwrap_or([dw.image_width, dw.image_height]);
            WorldConfig {
                n_images: w.n_images.unwrap_or(dw.n_images),
                boxes_per_image: w.boxes_per_image.unwrap_or(dw.boxes_per_image),
                n_classes: w.n_classes.unwrap_or(dw.n_classes),
                image_width,
                image_height,
                seed: 0,
            }
        }
    };
    world.validate()?;
    let ds = TeacherSkill::default();
    let skill = match dto.skill {
        None => ds,
        Some(s) => {
            let pair = |v: Option<[f64; 2]>, a: f64, b: f64| v.unwrap_or([a, b]);
            let m = pair(s.pos_score_mean, ds.start.pos_score_mean, ds.end.pos_score_mean);
            let sd = pair(s.pos_score_std, ds.start.pos_score_std, ds.end.pos_score_std);
            let nr = pair(s.neg_rate, ds.start.neg_rate, ds.end.neg_rate);
            let rho = pair(s.bbox_noise_rho, ds.start.bbox_noise_rho, ds.end.bbox_noise_rho);
            let point = |k: usize| SkillPoint {
                pos_score_mean: m[k],
                pos_score_std: sd[k],
                neg_rate: nr[k],
                bbox_noise_rho: rho[k],
            };
            TeacherSkill {
                start: point(0),
                end: point(1),
            }
        }
    };
    skill.validate()?;
    let dr = RunConfig::default();
    let run = match dto.run {
        None => dr,
        Some(r) => RunConfig {
            steps: r.steps.unwrap_or(dr.steps),
            checkpoint_every: r.checkpoint_every.unwrap_or(dr.checkpoint_every),
            seed: 0,
            gt_cutoff: r.gt_cutoff.unwrap_or(dr.gt_cutoff),
            ema_params: r.ema_params.unwrap_or(dr.ema_params),
            ema_momentum: r.ema_momentum.unwrap_or(dr.ema_momentum),
        },
    };
    if dto.schedule.is_empty() {
        return Err(Error::Config("at least one [schedule.NAME] section is required".into()));
    }
    let de = EmConfig::default();
    let dt = ThresholdConfig::default();
    let schedules = dto
        .schedule
        .into_iter()
        .map(|(name, s)| {
            let schedule = match s {
                ScheduleDto::Fixed { tau } => Schedule::Fixed { tau },
                ScheduleDto::Gmm {
                    capacity,
                    rule,
                    fallback_tau,
                    max_iters,
                    tol,
                    var_floor,
                } => Schedule::Gmm {
                    capacity: capacity.unwrap_or(200),
                    threshold: ThresholdConfig {
                        em: EmConfig {
                            max_iters: max_iters.unwrap_or(de.max_iters),
                            tol: tol.unwrap_or(de.tol),
                            var_floor: var_floor.unwrap_or(de.var_floor),
                        },
                        fallback_tau: fallback_tau.unwrap_or(dt.fallback_tau),
                        rule: rule.unwrap_or(dt.rule),
                    },
                },
            };
            (name, schedule)
        })
        .collect();
    Ok(SimConfig {
        world,
        skill,
        run,
        schedules,
    })
}
