//! Evaluates the three condition branches of an untrained model on one
//! window and combines them with native guidance and with CFG.
//!
//! `cargo run --example guidance_branches`

use lff::adapter::build_audio_context;
use lff::config::ExperimentConfig;
use lff::data::{generate_scene, SceneConfig};
use lff::guidance::{cfg_combine, evaluate_branches, native_combine};
use lff::model::{assemble_conditioning, Branch, DitInput, FlowDit};
use lff::tensor::{Rng, Tensor};

fn rms(t: &Tensor) -> f64 {
    t.map(|v| v * v).mean().sqrt()
}

fn main() -> lff::Result<()> {
    let mut cfg = ExperimentConfig::default();
    cfg.model.dim = 32;
    cfg.model.blocks = 2;
    let frames = 8;
    let scene = generate_scene(&mut Rng::new(2), &SceneConfig::new(frames, 16, 16, cfg.data.audio_dim))?;
    let model = FlowDit::init(&cfg.model, &cfg.adapter, cfg.data.audio_dim, &mut Rng::new(3));
    let audio = build_audio_context(&scene.audio, cfg.adapter.context)?;
    let pack = assemble_conditioning(&cfg.model.encode(&scene.reference_frame), frames, &cfg.model)?;
    let z = Rng::new(4).gauss(model.latent_shape(frames).to_vec());
    let input = DitInput { z_t: &z, pack: &pack, t: 0.7, audio: &audio, branch: Branch::Full };

    let b = evaluate_branches(&model, &input)?;
    println!("audio direction   rms {:.4}", rms(&b.d_full.sub(&b.d_no_audio)?));
    println!("refined direction rms {:.4}", rms(&b.d_full.sub(&b.d_no_refined)?));
    let g = cfg.guidance;
    for (alpha, beta) in [(0.0, 0.0), (g.alpha, 0.0), (0.0, g.beta), (g.alpha, g.beta)] {
        let v = native_combine(&b, alpha, beta)?;
        println!("native alpha {alpha:3.1} beta {beta:3.1}: shift from d_full {:.4}", rms(&v.sub(&b.d_full)?));
    }
    let v = cfg_combine(&b.d_full, &b.d_no_audio, g.cfg_scale)?;
    println!("cfg scale {:.1}: shift from d_full {:.4}", g.cfg_scale, rms(&v.sub(&b.d_full)?));
    Ok(())
}
