//! Flow-matching training on synthetic scenes.

use crate::adapter::{build_audio_context, ContextualAudio};
use crate::config::ExperimentConfig;
use crate::data::{generate_scene, SceneConfig, SyntheticScene};
use crate::error::{Error, Result};
use crate::flow::{flow_forward, loss_branch, loss_weights, velocity_target, LossBranch};
use crate::model::{assemble_conditioning, Branch, ConditioningPack, DitInput, FlowDit};
use crate::params::Bound;
use crate::tensor::{adam_step, AdamState, Rng, Tensor};

/// One logged optimizer step.
#[derive(Clone, Debug, PartialEq)]
pub struct LossRecord {
    pub step: u64,
    pub loss: f64,
    pub branch: LossBranch,
    pub q: f64,
    pub t: f64,
}

pub const LOSS_CSV_HEADER: &str = "step,loss,branch,q,t";

impl LossRecord {
    pub fn csv_row(&self) -> String {
        format!("{},{:e},{},{},{}", self.step, self.loss, self.branch.name(), self.q, self.t)
    }
}

#[derive(Clone, Debug)]
pub struct TrainState {
    pub model: FlowDit,
    pub adam: AdamState,
    pub step: u64,
    pub rng: Rng,
    /// Mean training loss over all steps so far.
    pub mean_loss: f64,
}

#[derive(Clone, Debug)]
pub struct TrainReport {
    pub records: Vec<LossRecord>,
    pub initial_val_mse: f64,
    pub final_val_mse: f64,
}

/// A scene with its audio context precomputed over the whole track.
#[derive(Clone, Debug)]
pub struct PreparedScene {
    pub scene: SyntheticScene,
    pub audio: ContextualAudio,
}

struct Example {
    x0: Tensor,
    noise: Tensor,
    t: f64,
    audio: ContextualAudio,
    pack: ConditioningPack,
}

impl Example {
    fn draw(cfg: &ExperimentConfig, scenes: &[PreparedScene], rng: &mut Rng, t: Option<f64>) -> Result<(usize, Self)> {
        let f = cfg.data.window_frames;
        let idx = rng.below(scenes.len());
        let s = &scenes[idx];
        let offset = rng.below(s.scene.frames() - f + 1);
        let t = t.unwrap_or_else(|| rng.uniform());
        let x0 = cfg.model.encode(&s.scene.video.narrow0(offset, f)?);
        let noise = rng.gauss(x0.shape().to_vec());
        Ok((
            idx,
            Example {
                pack: assemble_conditioning(&cfg.model.encode(&s.scene.reference_frame), f, &cfg.model)?,
                audio: s.audio.slice(offset, f)?,
                x0,
                noise,
                t,
            },
        ))
    }

    fn input<'a>(&'a self, z_t: &'a Tensor, branch: Branch) -> DitInput<'a> {
        DitInput {
            z_t,
            pack: &self.pack,
            t: self.t,
            audio: &self.audio,
            branch,
        }
    }
}

/// Generates `cfg.data.scenes` scenes from streams forked off `cfg.seed`.
pub fn make_scenes(cfg: &ExperimentConfig) -> Result<Vec<SyntheticScene>> {
    let sc = SceneConfig {
        channels: cfg.model.channels,
        ..SceneConfig::new(cfg.data.scene_frames, cfg.model.height, cfg.model.width, cfg.data.audio_dim)
    };
    (0..cfg.data.scenes)
        .map(|i| generate_scene(&mut Rng::new(cfg.seed).fork(1000 + i as u64), &sc))
        .collect()
}

pub fn prepare(scenes: &[SyntheticScene], k: usize) -> Result<Vec<PreparedScene>> {
    scenes
        .iter()
        .map(|s| {
            Ok(PreparedScene {
                audio: build_audio_context(&s.audio, k)?,
                scene: s.clone(),
            })
        })
        .collect()
}

/// Fixed held-out draws with stratified timesteps.
pub struct ValidationSet {
    examples: Vec<Example>,
}

impl ValidationSet {
    pub fn new(cfg: &ExperimentConfig, scenes: &[PreparedScene]) -> Result<Self> {
        let mut rng = Rng::new(cfg.seed).fork(7);
        let n = cfg.train.val_samples;
        let examples = (0..n)
            .map(|i| Example::draw(cfg, scenes, &mut rng, Some((i as f64 + 0.5) / n as f64)).map(|e| e.1))
            .collect::<Result<_>>()?;
        Ok(ValidationSet { examples })
    }

    /// Plain velocity MSE of the full-condition branch.
    pub fn mse(&self, model: &FlowDit) -> Result<f64> {
        let mut total = 0.0;
        for ex in &self.examples {
            let z_t = flow_forward(&ex.x0, &ex.noise, ex.t)?;
            let v = model.velocity(&ex.input(&z_t, Branch::Full))?;
            let target = velocity_target(&ex.x0, &ex.noise)?;
            total += v.sub(&target)?.map(|d| d * d).mean();
        }
        Ok(total / self.examples.len() as f64)
    }
}

fn check_scenes(cfg: &ExperimentConfig, scenes: &[SyntheticScene]) -> Result<()> {
    if scenes.is_empty() {
        return Err(Error::Config("training needs at least one scene".into()));
    }
    let m = &cfg.model;
    for s in scenes {
        let shape = s.video.shape();
        if shape[1..] != [m.channels, m.height, m.width] || s.audio.dim() != cfg.data.audio_dim {
            return Err(Error::Config(format!(
                "scene video {:?} with audio dim {} does not match the model",
                shape,
                s.audio.dim()
            )));
        }
        if s.frames() < cfg.data.window_frames {
            return Err(Error::Config(format!(
                "scene of {} frames is shorter than the {}-frame training window",
                s.frames(),
                cfg.data.window_frames
            )));
        }
    }
    Ok(())
}

pub fn init_state(cfg: &ExperimentConfig) -> TrainState {
    let rng = Rng::new(cfg.seed);
    let model = FlowDit::init(&cfg.model, &cfg.adapter, cfg.data.audio_dim, &mut rng.fork(1));
    TrainState {
        model,
        adam: AdamState::default(),
        step: 0,
        rng: rng.fork(2),
        mean_loss: 0.0,
    }
}

/// One optimizer step; returns its log record.
pub fn train_step(cfg: &ExperimentConfig, scenes: &[PreparedScene], state: &mut TrainState) -> Result<LossRecord> {
    let rng = &mut state.rng;
    let (idx, ex) = Example::draw(cfg, scenes, rng, None)?;
    let q = rng.uniform();
    let u = rng.uniform();
    let branch = if u < cfg.train.p_drop {
        Branch::NoAudio
    } else if u < cfg.train.p_drop + cfg.train.p_drop_refined {
        Branch::NoRefined
    } else {
        Branch::Full
    };
    let lb = loss_branch(q)?;
    let scene = &scenes[idx].scene;
    let shape = ex.x0.shape();
    let weights = loss_weights(lb, &scene.face_mask, &scene.lip_mask, shape[0], shape[1])?;
    let z_t = flow_forward(&ex.x0, &ex.noise, ex.t)?;
    let target = velocity_target(&ex.x0, &ex.noise)?;

    let tape = state.model.tape();
    let p = Bound::new(&tape, &state.model.params);
    let loss = state.model.loss(&p, &ex.input(&z_t, branch), &target, &weights)?;
    let value = loss.value().item()?;
    let step = state.step + 1;
    if !value.is_finite() || value > cfg.train.divergence_threshold {
        return Err(Error::Divergence { step, loss: value });
    }
    let grads = p.present_grads(&tape.backward(loss)?);
    adam_step(&mut state.model.params, &grads, &mut state.adam, &cfg.train.adam)?;
    state.step = step;
    state.mean_loss += (value - state.mean_loss) / step as f64;
    Ok(LossRecord {
        step,
        loss: value,
        branch: lb,
        q,
        t: ex.t,
    })
}

/// Trains from a fresh initialization for `cfg.train.steps` steps.
pub fn train_loop(cfg: &ExperimentConfig, scenes: &[SyntheticScene]) -> Result<(TrainState, TrainReport)> {
    train_loop_with(cfg, scenes, |_| {})
}

pub fn train_loop_with(
    cfg: &ExperimentConfig,
    scenes: &[SyntheticScene],
    mut on_step: impl FnMut(&LossRecord),
) -> Result<(TrainState, TrainReport)> {
    check_scenes(cfg, scenes)?;
    let prepared = prepare(scenes, cfg.adapter.context)?;
    let val = ValidationSet::new(cfg, &prepared)?;
    let mut state = init_state(cfg);
    let initial_val_mse = val.mse(&state.model)?;
    let mut records = Vec::with_capacity(cfg.train.steps as usize);
    for _ in 0..cfg.train.steps {
        let rec = train_step(cfg, &prepared, &mut state)?;
        on_step(&rec);
        records.push(rec);
    }
    let final_val_mse = val.mse(&state.model)?;
    Ok((
        state,
        TrainReport {
            records,
            initial_val_mse,
            final_val_mse,
        },
    ))
}
