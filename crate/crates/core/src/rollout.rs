//! Long rollouts of a trained model over an evaluation scene.

use crate::adapter::{build_audio_context, ContextualAudio};
use crate::config::ExperimentConfig;
use crate::data::{generate_scene, SceneConfig, SyntheticScene};
use crate::error::{Error, Result};
use crate::guidance::{guided_velocity, GuidanceConfig};
use crate::model::{assemble_conditioning, with_known_frames, Branch, DitInput, FlowDit};
use crate::tensor::{Rng, Tensor};
use crate::window::{make_plan, sample, Denoiser, SampleOptions, WindowCtx, WindowPlan};

/// Feeds windows of a long sequence through a model with guidance.
pub struct ModelDenoiser<'a> {
    pub model: &'a FlowDit,
    /// Context over the whole sequence.
    pub audio: &'a ContextualAudio,
    /// Reference frame in model space.
    pub reference_frame: &'a Tensor,
    pub guidance: GuidanceConfig,
}

impl Denoiser for ModelDenoiser<'_> {
    fn velocity(&mut self, z: &Tensor, ctx: &WindowCtx<'_>) -> Result<Tensor> {
        let len = ctx.end - ctx.start;
        let pack = match ctx.known {
            Some(known) => with_known_frames(self.reference_frame, known, len, &self.model.model)?,
            None => assemble_conditioning(self.reference_frame, len, &self.model.model)?,
        };
        let audio = self.audio.slice(ctx.start, len)?;
        let input = DitInput {
            z_t: z,
            pack: &pack,
            t: ctx.t,
            audio: &audio,
            branch: Branch::Full,
        };
        guided_velocity(self.model, &input, &self.guidance)
    }
}

/// Scene `index` of the training set regenerated at `frames` frames; its
/// first `data.scene_frames` frames equal the training scene.
pub fn evaluation_scene(cfg: &ExperimentConfig, index: usize, frames: usize) -> Result<SyntheticScene> {
    let sc = SceneConfig {
        channels: cfg.model.channels,
        ..SceneConfig::new(frames, cfg.model.height, cfg.model.width, cfg.data.audio_dim)
    };
    generate_scene(&mut Rng::new(cfg.seed).fork(1000 + index as u64), &sc)
}

pub fn sample_options(cfg: &ExperimentConfig) -> SampleOptions {
    SampleOptions {
        steps: cfg.sampler.steps,
        scheme: cfg.window.scheme,
        buffer: cfg.window.buffer,
        skip_first_step_fusion: cfg.window.skip_first_step_fusion,
    }
}

pub fn plan(cfg: &ExperimentConfig) -> Result<WindowPlan> {
    make_plan(cfg.window.total, cfg.window.length, cfg.window.overlap)
}

/// Generates `cfg.window.total` frames for `scene`, starting from noise
/// drawn with `noise_seed`. Sampling runs in model space; the result is
/// decoded back to frame values.
pub fn rollout(cfg: &ExperimentConfig, model: &FlowDit, scene: &SyntheticScene, noise_seed: u64) -> Result<Tensor> {
    let plan = plan(cfg)?;
    if scene.frames() != plan.total {
        return Err(Error::Config(format!(
            "audio of {} frames for a plan over {}",
            scene.frames(),
            plan.total
        )));
    }
    let audio = build_audio_context(&scene.audio, model.adapter.context)?;
    let reference_frame = model.model.encode(&scene.reference_frame);
    let mut den = ModelDenoiser {
        model,
        audio: &audio,
        reference_frame: &reference_frame,
        guidance: cfg.guidance,
    };
    let z_init = Rng::new(noise_seed).gauss(model.latent_shape(plan.total).to_vec());
    let z = sample(cfg.window.strategy, &mut den, &z_init, &plan, &sample_options(cfg))?;
    Ok(model.model.decode(&z))
}
