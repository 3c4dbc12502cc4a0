//! Command-line interface. Every command reads its inputs from files, writes
//! one output (stdout unless `--output` is given) and is deterministic given
//! its inputs, flags and `--seed`.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};

use crate::assign::{self, AsaParams, Assigner, Scene};
use crate::error::{Error, Result};
use crate::eval;
use crate::gmm::{self, ThresholdConfig, ThresholdRule};
use crate::io;
use crate::losses::{ClsCost, CostParams, FocalParams};
use crate::pyramid;
use crate::sim::{self, SummaryRow, World};
use crate::synth::{self, SceneConfig};

/// Environment variable capping worker threads (0 or unset: all cores).
pub const THREADS_ENV: &str = "PSEUDOLAB_THREADS";

#[derive(Debug, Parser)]
#[command(name = "pseudolab", version, about = "Pseudo-label quality experiments for semi-supervised detection")]
pub struct Cli {
    /// Base seed for every random stream.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,

    /// Output file (a directory for `simulate`). Defaults to stdout.
    #[arg(long, short, global = true)]
    pub output: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum AssignerKind {
    Iou,
    Atss,
    Asa,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ClsCostArg {
    Focal,
    Qfl,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum RuleArg {
    Argmax,
    Crossing,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ResampleMode {
    /// In-plane then cross-level.
    Full,
    Inplane,
    Scale,
}

#[derive(Debug, clap::Args)]
pub struct AssignerArgs {
    /// Candidates per GT for ASA.
    #[arg(long, default_value_t = 13)]
    pub k: usize,
    #[arg(long, default_value_t = 2.0)]
    pub lambda_reg: f64,
    #[arg(long, default_value_t = 0.001)]
    pub lambda_dist: f64,
    /// Classification term of the ASA cost.
    #[arg(long, value_enum, default_value_t = ClsCostArg::Focal)]
    pub cls_cost: ClsCostArg,
    /// IoU assigner positive threshold.
    #[arg(long, default_value_t = 0.5)]
    pub pos_thr: f64,
    /// IoU assigner negative threshold.
    #[arg(long, default_value_t = 0.4)]
    pub neg_thr: f64,
    /// ATSS candidates per pyramid level.
    #[arg(long, default_value_t = 9)]
    pub topk: usize,
}

impl AssignerArgs {
    fn build(&self, kind: AssignerKind) -> Assigner {
        match kind {
            AssignerKind::Iou => Assigner::Iou {
                pos_thr: self.pos_thr,
                neg_thr: self.neg_thr,
            },
            AssignerKind::Atss => Assigner::Atss {
                topk_per_level: self.topk,
            },
            AssignerKind::Asa => Assigner::Asa(AsaParams {
                cost: CostParams {
                    lambda_reg: self.lambda_reg,
                    lambda_dist: self.lambda_dist,
                },
                focal: FocalParams::default(),
                k: self.k,
                cls: match self.cls_cost {
                    ClsCostArg::Focal => ClsCost::Focal,
                    ClsCostArg::Qfl => ClsCost::QualityFocal,
                },
            }),
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Label every anchor of a scene as positive, negative or ignored.
    Assign {
        /// Scene JSON: {anchors, predictions, gts}.
        scene: PathBuf,
        #[arg(long, value_enum, default_value_t = AssignerKind::Asa)]
        assigner: AssignerKind,
        #[command(flatten)]
        params: AssignerArgs,
    },
    /// Assignment stability (A-IOU) under Gaussian box noise, as CSV.
    Aiou {
        /// Scene JSON. Mutually exclusive with --synthetic.
        #[arg(required_unless_present = "synthetic", conflicts_with = "synthetic")]
        scene: Option<PathBuf>,
        /// Use this many generated scenes instead of a scene file.
        #[arg(long)]
        synthetic: Option<usize>,
        /// Boxes per generated scene.
        #[arg(long, default_value_t = 10)]
        boxes: usize,
        #[arg(long, value_delimiter = ',', default_value = "0.1,0.2,0.3,0.4,0.5")]
        rhos: Vec<f64>,
        #[arg(long, default_value_t = 100)]
        trials: usize,
        #[arg(long, value_enum, value_delimiter = ',', default_value = "iou,atss,asa")]
        assigners: Vec<AssignerKind>,
        #[command(flatten)]
        params: AssignerArgs,
    },
    /// Per-class adaptive score thresholds from a two-component GMM.
    Gmm {
        /// Scores JSON: {classes: {"<id>": [s, ...]}}.
        scores: PathBuf,
        /// Threshold used when a class cannot be fitted.
        #[arg(long, default_value_t = 0.4)]
        fallback: f64,
        #[arg(long, value_enum, default_value_t = RuleArg::Argmax)]
        rule: RuleArg,
    },
    /// COCO-style mAP@[.50:.95] of predictions against ground truth.
    Eval {
        /// Predictions JSON: {images: [{id, dets: [{bbox, class, score}]}]}.
        preds: PathBuf,
        /// Ground truth JSON: {images: [{id, gts: [{bbox, class}]}]}.
        gts: PathBuf,
        #[arg(long, default_value_t = eval::DEFAULT_MAX_DETS)]
        max_dets: usize,
    },
    /// Run threshold schedules through the synthetic mean-teacher simulator.
    /// Writes run_<schedule>.csv files and summary.csv into --output.
    Simulate {
        /// TOML configuration with [run], [world], [skill] and [schedule.NAME].
        config: PathBuf,
    },
    /// Resample a feature pyramid with per-cell offsets.
    #[command(name = "fam3d-demo")]
    Fam3dDemo {
        /// Pyramid JSON: {channels, levels: [{stride, h, w, data}]}.
        pyramid: PathBuf,
        /// Offsets JSON: {levels: [{h, w, data: [d0, d1, d2]}]}.
        offsets: PathBuf,
        #[arg(long, value_enum, default_value_t = ResampleMode::Full)]
        mode: ResampleMode,
    },
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))
}

fn emit(output: Option<&Path>, text: &str) -> Result<()> {
    match output {
        Some(p) => fs::write(p, text).map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", p.display())))),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

/// Reads `PSEUDOLAB_THREADS`; `None` means let the pool decide.
pub fn threads_from_env() -> Result<Option<usize>> {
    match std::env::var(THREADS_ENV) {
        Err(_) => Ok(None),
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(0) => Ok(None),
            Ok(n) => Ok(Some(n)),
            Err(_) => Err(Error::Config(format!("{THREADS_ENV}={v:?} is not a non-negative integer"))),
        },
    }
}

pub fn run(cli: &Cli) -> Result<()> {
    let out = cli.output.as_deref();
    match &cli.command {
        Command::Assign {
            scene,
            assigner,
            params,
        } => {
            let scene = io::parse_scene(&read(scene)?)?;
            let result = params.build(*assigner).assign(&scene)?;
            emit(out, &io::assignment_to_json(&result)?)
        }
        Command::Aiou {
            scene,
            synthetic,
            boxes,
            rhos,
            trials,
            assigners,
            params,
        } => {
            if let Some(r) = rhos.iter().find(|r| !(r.is_finite() && **r >= 0.0)) {
                return Err(Error::invalid(format!("noise ratio {r} must be finite and >= 0")));
            }
            let scenes: Vec<Scene> = match (scene, synthetic) {
                (Some(path), _) => vec![io::parse_scene(&read(path)?)?],
                (None, Some(n)) => synth::scene_suite(
                    *n,
                    &SceneConfig {
                        boxes_per_scene: *boxes,
                        ..SceneConfig::default()
                    },
                    cli.seed,
                )?,
                (None, None) => unreachable!("clap requires a scene source"),
            };
            let mut rows = Vec::new();
            for kind in assigners {
                let a = params.build(*kind);
                let table = if scenes.len() == 1 {
                    assign::aiou_experiment(&scenes[0], &a, rhos, *trials, cli.seed)?
                } else {
                    assign::aiou_suite(&scenes, &a, rhos, *trials, cli.seed)?
                };
                rows.extend(table.into_iter().map(|r| (a.name().to_string(), r)));
            }
            emit(out, &io::aiou_csv(&rows))
        }
        Command::Gmm {
            scores,
            fallback,
            rule,
        } => {
            if !(0.0..=1.0).contains(fallback) {
                return Err(Error::invalid(format!("fallback threshold {fallback} outside [0, 1]")));
            }
            let classes = io::parse_scores(&read(scores)?)?;
            let cfg = ThresholdConfig {
                fallback_tau: *fallback,
                rule: match rule {
                    RuleArg::Argmax => ThresholdRule::Argmax,
                    RuleArg::Crossing => ThresholdRule::Crossing,
                },
                ..ThresholdConfig::default()
            };
            let decisions = classes
                .iter()
                .map(|(c, s)| Ok((*c, gmm::threshold_for_scores(s, &cfg)?)))
                .collect::<Result<BTreeMap<_, _>>>()?;
            emit(out, &io::thresholds_to_json(&decisions)?)
        }
        Command::Eval { preds, gts, max_dets } => {
            let preds = io::parse_predictions(&read(preds)?)?;
            let gts = io::parse_ground_truth(&read(gts)?)?;
            let r = eval::map_with(&preds, &gts, *max_dets)?;
            emit(out, &io::eval_to_json(&r)?)
        }
        Command::Simulate { config } => {
            let dir = out.ok_or_else(|| Error::Config("simulate needs --output DIR".into()))?;
            let cfg = io::parse_sim_config(&read(config)?)?.with_seed(cli.seed);
            let world = World::generate(cfg.world)?;
            let runs = if cfg.schedules.len() == 1 {
                let (name, s) = &cfg.schedules[0];
                vec![sim::run_schedule(&world, &cfg.skill, name, s, &cfg.run)?]
            } else {
                sim::compare_schedules(&world, &cfg.skill, &cfg.schedules, &cfg.run)?.runs
            };
            fs::create_dir_all(dir)?;
            for m in &runs {
                fs::write(dir.join(format!("run_{}.csv", m.schedule)), io::run_csv(m))?;
            }
            let summary: Vec<SummaryRow> = runs.iter().map(SummaryRow::from_run).collect();
            fs::write(dir.join("summary.csv"), io::summary_csv(&summary, &runs))?;
            Ok(())
        }
        Command::Fam3dDemo {
            pyramid: p,
            offsets,
            mode,
        } => {
            let p = io::parse_pyramid(&read(p)?)?;
            let d = io::parse_offsets(&read(offsets)?)?;
            let r = match mode {
                ResampleMode::Full => pyramid::fam3d(&p, &d)?,
                ResampleMode::Inplane => pyramid::resample_inplane(&p, &d)?,
                ResampleMode::Scale => pyramid::resample_scale(&p, &d)?,
            };
            emit(out, &io::pyramid_to_json(&r)?)
        }
    }
}
