//! Walks through the audio adapter on a small random model: how the
//! refined audio tokens react to the timestep, to the latents, and to each
//! ablation variant.
//!
//! `cargo run --example adapter_walkthrough`

use lff::adapter::{adapter_forward, build_audio_context, timestep_embed, AdapterShape, AdapterVariant};
use lff::config::{AdapterConfig, ModelConfig};
use lff::data::RawAudioFeatures;
use lff::model::FlowDit;
use lff::params::Bound;
use lff::tensor::{GradTape, Rng, Tensor};

fn refined(model: &FlowDit, variant: AdapterVariant, audio: &Tensor, latents: &Tensor, t: f64) -> lff::Result<Tensor> {
    let tape = GradTape::new();
    let p = Bound::new(&tape, &model.params);
    let te = timestep_embed(&p, t)?;
    let shape = AdapterShape {
        tokens_per_frame: model.model.tokens_per_frame(),
        heads: model.model.heads,
        ln_eps: model.model.ln_eps,
    };
    let out = adapter_forward(&p, variant, &te, tape.constant(audio.clone()), tape.constant(latents.clone()), shape)?;
    Ok((*out.value()).clone())
}

fn main() -> lff::Result<()> {
    let model_cfg = ModelConfig { dim: 16, blocks: 1, height: 8, width: 8, ..ModelConfig::default() };
    let mut rng = Rng::new(11);
    let frames = 4;
    let raw = RawAudioFeatures::new(rng.gauss([frames, 3]))?;
    let latents = rng.gauss([frames * model_cfg.tokens_per_frame(), model_cfg.dim]);
    let moved = latents.add(&rng.gauss(latents.shape().to_vec()).scale(0.2))?;

    println!("variant            |a(0.2) - a(0.8)|  |a(z) - a(z')|");
    for variant in AdapterVariant::ALL {
        let adapter = AdapterConfig { variant, ..AdapterConfig::default() };
        let model = FlowDit::init(&model_cfg, &adapter, 3, &mut Rng::new(5));
        let audio = build_audio_context(&raw, adapter.context)?.values;
        let early = refined(&model, variant, &audio, &latents, 0.2)?;
        let late = refined(&model, variant, &audio, &latents, 0.8)?;
        let other = refined(&model, variant, &audio, &moved, 0.2)?;
        println!(
            "{:18} {:16.4}  {:14.4}",
            variant.name(),
            early.max_abs_diff(&late)?,
            early.max_abs_diff(&other)?
        );
    }
    Ok(())
}
