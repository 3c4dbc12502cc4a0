//! Seeded mean-teacher dynamics.
//!
//! A synthetic teacher emits detections over a fixed image set; its
//! confidence, false-positive rate and box noise follow a [`TeacherSkill`]
//! schedule. Pseudo-labels are selected per step by a fixed or GMM-derived
//! threshold, and consecutive checkpoints feed the inconsistency metric.
//! Every random draw comes from a stream keyed by `(seed, purpose, step,
//! image)`, so runs are reproducible regardless of thread count.

use rand::Rng;
use rand_distr::{Distribution, Normal, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::assign::GroundTruth;
use crate::error::{Error, Result};
use crate::eval::{self, Detection, ImageDetections};
use crate::geom::{BBox, NoiseModel};
use crate::gmm::{self, ScoreBank, ThresholdConfig, ThresholdSource};
use crate::seed;

const WORLD_STREAM: u64 = 0x5752_4c44;
const TEACHER_STREAM: u64 = 0x5445_4143;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorldConfig {
    pub n_images: usize,
    pub boxes_per_image: usize,
    pub n_classes: usize,
    pub image_width: f64,
    pub image_height: f64,
    #[serde(default)]
    pub seed: u64,
}

impl Default for WorldConfig {
    fn default() -> Self {
        Self {
            n_images: 32,
            boxes_per_image: 5,
            n_classes: 3,
            image_width: 256.0,
            image_height: 256.0,
            seed: 0,
        }
    }
}

impl WorldConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_images == 0 || self.boxes_per_image == 0 || self.n_classes == 0 {
            return Err(Error::invalid("world counts must be positive"));
        }
        if !(self.image_width > 0.0 && self.image_height > 0.0) {
            return Err(Error::invalid("image size must be positive"));
        }
        Ok(())
    }
}

/// The unlabeled image set with its hidden true boxes.
#[derive(Debug, Clone, PartialEq)]
pub struct World {
    pub config: WorldConfig,
    pub images: Vec<Vec<GroundTruth>>,
}

fn random_box<R: Rng>(rng: &mut R, w: f64, h: f64, min_frac: f64, max_frac: f64) -> BBox {
    let bw = w * rng.random_range(min_frac..max_frac);
    let bh = h * rng.random_range(min_frac..max_frac);
    let x1 = rng.random_range(0.0..(w - bw));
    let y1 = rng.random_range(0.0..(h - bh));
    BBox::new(x1, y1, x1 + bw, y1 + bh).expect("box inside the image")
}

impl World {
    pub fn generate(config: WorldConfig) -> Result<Self> {
        config.validate()?;
        let images = (0..config.n_images)
            .map(|i| {
                let mut rng = seed::rng(config.seed, &[WORLD_STREAM, i as u64]);
                (0..config.boxes_per_image)
                    .map(|_| GroundTruth {
                        bbox: random_box(&mut rng, config.image_width, config.image_height, 0.1, 0.4),
                        class_id: rng.random_range(0..config.n_classes),
                    })
                    .collect()
            })
            .collect();
        Ok(Self { config, images })
    }
}

/// Teacher behaviour at one step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SkillPoint {
    pub pos_score_mean: f64,
    pub pos_score_std: f64,
    /// Expected false detections per image.
    pub neg_rate: f64,
    pub bbox_noise_rho: f64,
}

impl SkillPoint {
    pub fn validate(&self) -> Result<()> {
        let finite = [self.pos_score_mean, self.pos_score_std, self.neg_rate, self.bbox_noise_rho]
            .iter()
            .all(|v| v.is_finite());
        if !finite {
            return Err(Error::invalid("skill values must be finite"));
        }
        if !(self.pos_score_mean > 0.0 && self.pos_score_mean < 1.0) {
            return Err(Error::invalid(format!(
                "pos_score_mean {} outside (0, 1)",
                self.pos_score_mean
            )));
        }
        if self.pos_score_std < 0.0 || self.neg_rate < 0.0 || self.bbox_noise_rho < 0.0 {
            return Err(Error::invalid("skill spreads and rates must be >= 0"));
        }
        Ok(())
    }
}

/// Linear interpolation from `start` (step 0) to `end` (last step).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TeacherSkill {
    pub start: SkillPoint,
    pub end: SkillPoint,
}

impl Default for TeacherSkill {
    fn default() -> Self {
        Self {
            start: SkillPoint {
                pos_score_mean: 0.3,
                pos_score_std: 0.05,
                neg_rate: 6.0,
                bbox_noise_rho: 0.15,
            },
            end: SkillPoint {
                pos_score_mean: 0.9,
                pos_score_std: 0.05,
                neg_rate: 2.0,
                bbox_noise_rho: 0.05,
            },
        }
    }
}

impl TeacherSkill {
    pub fn constant(p: SkillPoint) -> Self {
        Self { start: p, end: p }
    }

    pub fn at(&self, step: usize, total_steps: usize) -> SkillPoint {
        let t = if total_steps <= 1 {
            0.0
        } else {
            step as f64 / (total_steps - 1) as f64
        };
        let lerp = |a: f64, b: f64| a + (b - a) * t;
        SkillPoint {
            pos_score_mean: lerp(self.start.pos_score_mean, self.end.pos_score_mean),
            pos_score_std: lerp(self.start.pos_score_std, self.end.pos_score_std),
            neg_rate: lerp(self.start.neg_rate, self.end.neg_rate),
            bbox_noise_rho: lerp(self.start.bbox_noise_rho, self.end.bbox_noise_rho),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.start.validate()?;
        self.end.validate()
    }
}

/// Teacher and student parameter vectors with the teacher's EMA momentum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmaState {
    pub teacher: Vec<f64>,
    pub student: Vec<f64>,
    pub momentum: f64,
}

/// `teacher <- m * teacher + (1 - m) * student`.
pub fn ema_update(state: &EmaState) -> Result<EmaState> {
    if state.teacher.len() != state.student.len() {
        return Err(Error::domain(format!(
            "teacher has {} parameters, student {}",
            state.teacher.len(),
            state.student.len()
        )));
    }
    let m = state.momentum;
    if !(0.0..=1.0).contains(&m) {
        return Err(Error::invalid(format!("momentum {m} outside [0, 1]")));
    }
    Ok(EmaState {
        teacher: state
            .teacher
            .iter()
            .zip(&state.student)
            .map(|(t, s)| m * t + (1.0 - m) * s)
            .collect(),
        student: state.student.clone(),
        momentum: m,
    })
}

/// Teacher detections for every image at step `step`.
///
/// Each true box is emitted with Gaussian coordinate noise and a clamped
/// Gaussian score; Poisson-many false boxes are added with scores centered
/// at half the true-box mean.
pub fn teacher_emit(world: &World, skill: &SkillPoint, step: usize, seed: u64) -> Result<Vec<ImageDetections>> {
    skill.validate()?;
    let pos = Normal::new(skill.pos_score_mean, skill.pos_score_std)
        .map_err(|e| Error::invalid(e.to_string()))?;
    let neg = Normal::new(0.5 * skill.pos_score_mean, skill.pos_score_std)
        .map_err(|e| Error::invalid(e.to_string()))?;
    let poisson = if skill.neg_rate > 0.0 {
        Some(Poisson::new(skill.neg_rate).map_err(|e| Error::invalid(e.to_string()))?)
    } else {
        None
    };
    let cfg = &world.config;
    world
        .images
        .par_iter()
        .enumerate()
        .map(|(i, gts)| {
            let path = [TEACHER_STREAM, step as u64, i as u64];
            let mut rng = seed::rng(seed, &path);
            let mut noise = NoiseModel::with_rng(skill.bbox_noise_rho, seed::rng(seed, &[path[0], path[1], path[2], 1]))?;
            let mut detections: Vec<Detection> = gts
                .iter()
                .map(|g| Detection {
                    bbox: noise.perturb(&g.bbox),
                    class_id: g.class_id,
                    score: pos.sample(&mut rng).clamp(0.0, 1.0),
                })
                .collect();
            let n_false = poisson.map_or(0, |p| p.sample(&mut rng) as usize);
            for _ in 0..n_false {
                let bbox = random_box(&mut rng, cfg.image_width, cfg.image_height, 0.05, 0.4);
                let class_id = rng.random_range(0..cfg.n_classes);
                let score = neg.sample(&mut rng).clamp(0.0, 1.0);
                detections.push(Detection { bbox, class_id, score });
            }
            Ok(ImageDetections {
                image_id: i as u64,
                detections,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Schedule {
    Fixed { tau: f64 },
    Gmm {
        capacity: usize,
        #[serde(flatten)]
        threshold: ThresholdConfig,
    },
}

impl Schedule {
    pub fn gmm_default() -> Self {
        Schedule::Gmm {
            capacity: 200,
            threshold: ThresholdConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub steps: usize,
    pub checkpoint_every: usize,
    #[serde(default)]
    pub seed: u64,
    /// Score at which recorded pseudo-labels become ground truth for the next
    /// checkpoint comparison. Recorded sets are already thresholded, so 0
    /// promotes all of them.
    #[serde(default)]
    pub gt_cutoff: f64,
    #[serde(default = "default_ema_len")]
    pub ema_params: usize,
    #[serde(default = "default_momentum")]
    pub ema_momentum: f64,
}

fn default_ema_len() -> usize {
    8
}

fn default_momentum() -> f64 {
    0.9995
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            steps: 500,
            checkpoint_every: 50,
            seed: 0,
            gt_cutoff: 0.0,
            ema_params: default_ema_len(),
            ema_momentum: default_momentum(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepRecord {
    pub step: usize,
    pub tau: Vec<f64>,
    pub source: Vec<ThresholdSource>,
    pub pseudo_per_image: f64,
    pub inconsistency_cum: f64,
    /// Mean absolute teacher/student parameter gap after the EMA update.
    pub teacher_lag: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunMetrics {
    pub schedule: String,
    pub steps: Vec<StepRecord>,
    pub checkpoints: usize,
    /// False when fewer than two checkpoints were taken; the inconsistency
    /// is then reported as 0.
    pub inconsistency_defined: bool,
    pub final_inconsistency: f64,
}

impl RunMetrics {
    pub fn pseudo_counts(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.pseudo_per_image).collect()
    }

    /// Per-step threshold averaged over classes.
    pub fn mean_tau(&self) -> Vec<f64> {
        self.steps
            .iter()
            .map(|s| s.tau.iter().sum::<f64>() / s.tau.len() as f64)
            .collect()
    }
}

/// Runs one threshold schedule over `run.steps` teacher steps.
pub fn run_schedule(world: &World, skill: &TeacherSkill, name: &str, schedule: &Schedule, run: &RunConfig) -> Result<RunMetrics> {
    if run.checkpoint_every == 0 || run.steps < run.checkpoint_every {
        return Err(Error::invalid(format!(
            "need steps ({}) >= checkpoint_every ({}) >= 1",
            run.steps, run.checkpoint_every
        )));
    }
    skill.validate()?;
    let n_classes = world.config.n_classes;
    let n_images = world.images.len() as f64;
    let mut bank = match schedule {
        Schedule::Gmm { capacity, .. } => Some(ScoreBank::new(*capacity)),
        Schedule::Fixed { tau } => {
            if !(0.0..=1.0).contains(tau) {
                return Err(Error::invalid(format!("fixed threshold {tau} outside [0, 1]")));
            }
            None
        }
    };
    let mut ema = EmaState {
        teacher: vec![0.0; run.ema_params],
        student: vec![0.0; run.ema_params],
        momentum: run.ema_momentum,
    };
    let mut previous: Option<Vec<ImageDetections>> = None;
    let mut checkpoints = 0;
    let mut cum = 0.0;
    let mut steps = Vec::with_capacity(run.steps);

    for step in 0..run.steps {
        let point = skill.at(step, run.steps);
        let dets = teacher_emit(world, &point, step, run.seed)?;
        let (tau, source) = match (schedule, bank.as_mut()) {
            (Schedule::Fixed { tau }, _) => (vec![*tau; n_classes], vec![ThresholdSource::Fallback; n_classes]),
            (Schedule::Gmm { threshold, .. }, Some(bank)) => {
                for img in &dets {
                    for c in 0..n_classes {
                        let scores: Vec<f64> = img
                            .detections
                            .iter()
                            .filter(|d| d.class_id == c)
                            .map(|d| d.score)
                            .collect();
                        bank.push(c, &scores)?;
                    }
                }
                let decisions: Vec<_> = (0..n_classes)
                    .into_par_iter()
                    .map(|c| gmm::threshold_for_scores(&bank.scores(c), threshold))
                    .collect::<Result<_>>()?;
                decisions.iter().map(|d| (d.tau, d.source)).unzip()
            }
            (Schedule::Gmm { .. }, None) => unreachable!("bank exists for GMM schedules"),
        };
        let filtered: Vec<ImageDetections> = dets
            .into_iter()
            .map(|img| ImageDetections {
                image_id: img.image_id,
                detections: img
                    .detections
                    .into_iter()
                    .filter(|d| d.score >= tau[d.class_id])
                    .collect(),
            })
            .collect();
        let kept: usize = filtered.iter().map(|i| i.detections.len()).sum();

        if (step + 1) % run.checkpoint_every == 0 {
            checkpoints += 1;
            if let Some(prev) = &previous {
                cum += eval::pair_inconsistency(prev, &filtered, run.gt_cutoff)?;
            }
            previous = Some(filtered);
        }

        // the student follows the teacher's skill progress
        let progress = point.pos_score_mean;
        ema.student = (0..run.ema_params).map(|k| progress * (1.0 + k as f64 / run.ema_params as f64)).collect();
        ema = ema_update(&ema)?;
        let teacher_lag = if run.ema_params == 0 {
            0.0
        } else {
            ema.teacher
                .iter()
                .zip(&ema.student)
                .map(|(t, s)| (t - s).abs())
                .sum::<f64>()
                / run.ema_params as f64
        };

        steps.push(StepRecord {
            step,
            tau,
            source,
            pseudo_per_image: kept as f64 / n_images,
            inconsistency_cum: cum,
            teacher_lag,
        });
    }
    Ok(RunMetrics {
        schedule: name.to_string(),
        steps,
        checkpoints,
        inconsistency_defined: checkpoints >= 2,
        final_inconsistency: cum,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    pub schedule: String,
    pub mean_pseudo_per_image: f64,
    pub cv_pseudo_per_image: f64,
    pub final_inconsistency: f64,
}

/// Mean and coefficient of variation (population std over mean; 0 when the
/// mean is 0).
pub fn mean_cv(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (0.0, 0.0);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    let cv = if mean == 0.0 { 0.0 } else { var.sqrt() / mean };
    (mean, cv)
}

impl SummaryRow {
    pub fn from_run(m: &RunMetrics) -> Self {
        let (mean, cv) = mean_cv(&m.pseudo_counts());
        Self {
            schedule: m.schedule.clone(),
            mean_pseudo_per_image: mean,
            cv_pseudo_per_image: cv,
            final_inconsistency: m.final_inconsistency,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Comparison {
    pub runs: Vec<RunMetrics>,
    pub summary: Vec<SummaryRow>,
}

/// Runs every schedule over the same teacher stream.
pub fn compare_schedules(world: &World, skill: &TeacherSkill, schedules: &[(String, Schedule)], run: &RunConfig) -> Result<Comparison> {
    if schedules.len() < 2 {
        return Err(Error::invalid("compare needs at least two schedules"));
    }
    let runs: Vec<RunMetrics> = schedules
        .par_iter()
        .map(|(name, s)| run_schedule(world, skill, name, s, run))
        .collect::<Result<_>>()?;
    let summary = runs.iter().map(SummaryRow::from_run).collect();
    Ok(Comparison { runs, summary })
}
