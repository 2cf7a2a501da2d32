//! Experiment orchestration shared by the CLI and the examples: ablation
//! grids, the analytic stub task, and run echoes.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::adapter::AdapterVariant;
use crate::checkpoint::load_checkpoint;
use crate::config::{AblationModel, ExperimentConfig};
use crate::error::{Error, Result};
use crate::guidance::GuidanceMode;
use crate::metrics::{seam_discontinuity, DriftReport};
use crate::model::FlowDit;
use crate::rollout::{evaluation_scene, plan, rollout, sample_options};
use crate::tensor::{Rng, Tensor};
use crate::window::{sample, Denoiser, Strategy, WeightScheme, WindowCtx};

/// Writes the fully resolved configuration next to a run's outputs.
pub fn write_run_echo(dir: &Path, cfg: &ExperimentConfig) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
    let path = dir.join("run.json");
    fs::write(&path, cfg.to_json()).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

/// Denoiser that pulls every window toward the ground truth plus a
/// per-window offset of alternating sign, so neighbouring windows disagree
/// on their overlap by `2·offset`.
pub struct StubDenoiser<'a> {
    pub truth: &'a Tensor,
    pub offset: f64,
}

impl Denoiser for StubDenoiser<'_> {
    fn velocity(&mut self, z: &Tensor, ctx: &WindowCtx<'_>) -> Result<Tensor> {
        let target = self.truth.narrow0(ctx.start, ctx.end - ctx.start)?;
        let bias = if ctx.index % 2 == 0 { self.offset } else { -self.offset };
        // Exact rectified-flow velocity toward `target + bias`.
        z.zip_map(&target, |zv, x| (zv - (x + bias)) / ctx.t)
    }
}

pub const STUB_OFFSET: f64 = 0.1;

/// Ground-truth frames for the stub task: the evaluation scene's video.
pub fn stub_truth(cfg: &ExperimentConfig, seed: u64) -> Result<Tensor> {
    Ok(evaluation_scene(cfg, seed as usize % cfg.data.scenes, cfg.window.total)?.video)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GridRow {
    pub variant: AdapterVariant,
    pub guidance: GuidanceMode,
    pub scheme: WeightScheme,
    pub strategy: Strategy,
    pub seeds: usize,
    pub drift: f64,
    pub ciede: f64,
    pub sync_r: f64,
    pub seam: f64,
}

pub const GRID_CSV_HEADER: &str = "variant,guidance,scheme,strategy,seeds,drift,ciede,sync_r,seam";

impl GridRow {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{}",
            self.variant.name(),
            self.guidance.name(),
            self.scheme.name(),
            self.strategy.name(),
            self.seeds,
            self.drift,
            self.ciede,
            self.sync_r,
            self.seam
        )
    }
}

pub fn grid_csv(rows: &[GridRow]) -> String {
    let mut s = String::from(GRID_CSV_HEADER);
    s.push('\n');
    for r in rows {
        s.push_str(&r.csv_row());
        s.push('\n');
    }
    s
}

/// Cells of the configured grid in a fixed order.
pub fn grid_cells(cfg: &ExperimentConfig) -> Vec<(AdapterVariant, GuidanceMode, WeightScheme, Strategy)> {
    let a = &cfg.ablation;
    let mut cells = Vec::new();
    for &v in &a.adapter_variants {
        for &g in &a.guidance_modes {
            for &s in &a.schemes {
                for &st in &a.strategies {
                    cells.push((v, g, s, st));
                }
            }
        }
    }
    cells
}

/// Checkpoint of an adapter variant: `<root>/<variant>/checkpoint`, as written by
/// `lff train --variant <variant> --out <root>/<variant>`.
pub fn variant_dir(root: &Path, variant: AdapterVariant) -> PathBuf {
    root.join(variant.name()).join("checkpoint")
}

/// Loads one checkpoint per configured adapter variant.
pub fn load_variants(cfg: &ExperimentConfig, root: &Path) -> Result<Vec<(AdapterVariant, FlowDit)>> {
    cfg.ablation
        .adapter_variants
        .iter()
        .map(|&v| {
            let dir = variant_dir(root, v);
            if !dir.join(crate::checkpoint::MANIFEST).is_file() {
                return Err(Error::MissingCheckpoint {
                    variant: v.name().to_string(),
                    path: dir,
                });
            }
            let (model, _) = load_checkpoint(&dir)?;
            if model.adapter.variant != v {
                return Err(Error::Config(format!(
                    "checkpoint in {} was trained as `{}`, expected `{}`",
                    dir.display(),
                    model.adapter.variant.name(),
                    v.name()
                )));
            }
            Ok((v, model))
        })
        .collect()
}

fn cell_config(cfg: &ExperimentConfig, g: GuidanceMode, s: WeightScheme, st: Strategy) -> ExperimentConfig {
    let mut c = cfg.clone();
    c.guidance.mode = g;
    c.window.scheme = s;
    c.window.strategy = st;
    c
}

/// Runs every cell over `cfg.eval.seeds` seeds and averages the metrics.
///
/// `checkpoints` is required for trained models and ignored by the stub.
pub fn ablation_grid(cfg: &ExperimentConfig, checkpoints: Option<&Path>) -> Result<Vec<GridRow>> {
    let models = match cfg.ablation.model {
        AblationModel::Trained => {
            let root = checkpoints.ok_or_else(|| Error::Config("trained ablation needs a checkpoint directory".into()))?;
            load_variants(cfg, root)?
        }
        AblationModel::Stub => Vec::new(),
    };
    let mut rows = Vec::new();
    for (variant, g, scheme, strategy) in grid_cells(cfg) {
        let c = cell_config(cfg, g, scheme, strategy);
        let p = plan(&c)?;
        let (mut drift, mut ciede, mut sync_r, mut seam) = (0.0, 0.0, 0.0, 0.0);
        for seed in 0..c.eval.seeds as u64 {
            let scene = evaluation_scene(&c, seed as usize % c.data.scenes, c.window.total)?;
            let frames = match c.ablation.model {
                AblationModel::Trained => {
                    let model = &models.iter().find(|(v, _)| *v == variant).expect("loaded above").1;
                    rollout(&c, model, &scene, c.seed.wrapping_add(10_000 + seed))?
                }
                AblationModel::Stub => {
                    let mut den = StubDenoiser {
                        truth: &scene.video,
                        offset: STUB_OFFSET,
                    };
                    let z = Rng::new(c.seed.wrapping_add(10_000 + seed)).gauss(scene.video.shape().to_vec());
                    sample(strategy, &mut den, &z, &p, &sample_options(&c))?
                }
            };
            let report = DriftReport::build(&frames, &scene.audio, &scene.lip_mask, c.clip_len(), serde_json::Value::Null)?;
            drift += report.final_drift();
            ciede += report.final_clip().ciede;
            sync_r += report.records.iter().map(|r| r.sync_r).sum::<f64>() / report.records.len() as f64;
            seam += seam_discontinuity(&frames, &scene.video, &p)?;
        }
        let n = c.eval.seeds as f64;
        rows.push(GridRow {
            variant,
            guidance: g,
            scheme,
            strategy,
            seeds: c.eval.seeds,
            drift: drift / n,
            ciede: ciede / n,
            sync_r: sync_r / n,
            seam: seam / n,
        });
    }
    Ok(rows)
}
