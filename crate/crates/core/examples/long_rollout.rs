//! Trains the adapter and no-adapter variants (or loads them from a cache
//! directory), rolls both out over a long sequence and compares drift.
//!
//! `cargo run --release --example long_rollout -- [cache_dir] [seeds] [frames] [steps]`

use std::path::PathBuf;
use std::time::Instant;

use lff::adapter::AdapterVariant;
use lff::checkpoint::{load_checkpoint, save_checkpoint};
use lff::config::ExperimentConfig;
use lff::guidance::GuidanceConfig;
use lff::metrics::DriftReport;
use lff::model::FlowDit;
use lff::rollout::{evaluation_scene, rollout};
use lff::train::{make_scenes, train_loop};

fn model_for(cfg: &ExperimentConfig, variant: AdapterVariant, cache: &PathBuf) -> lff::Result<FlowDit> {
    let dir = cache.join(variant.name());
    if let Ok((m, _)) = load_checkpoint(&dir) {
        return Ok(m);
    }
    let mut cfg = cfg.clone();
    cfg.adapter.variant = variant;
    let scenes = make_scenes(&cfg)?;
    let (state, report) = train_loop(&cfg, &scenes)?;
    println!(
        "{:>5}: validation mse {:.4} -> {:.4}",
        variant.name(),
        report.initial_val_mse,
        report.final_val_mse
    );
    save_checkpoint(&dir, &state.model, state.step)?;
    Ok(state.model)
}

fn main() -> lff::Result<()> {
    let mut args = std::env::args().skip(1);
    let cache = PathBuf::from(args.next().unwrap_or_else(|| "target/lff-models".into()));
    let seeds: u64 = args.next().map_or(3, |s| s.parse().expect("seed count"));
    let mut cfg = ExperimentConfig::default();
    cfg.guidance = GuidanceConfig::off();
    if let Some(frames) = args.next() {
        cfg.window.total = frames.parse().expect("frame count");
    }
    if let Some(steps) = args.next() {
        cfg.sampler.steps = steps.parse().expect("sampler steps");
    }
    let models = [AdapterVariant::Full, AdapterVariant::Off].map(|v| (v, model_for(&cfg, v, &cache)));
    println!("seed  variant  final_drift  final_ciede");
    for seed in 0..seeds {
        let scene = evaluation_scene(&cfg, seed as usize % cfg.data.scenes, cfg.window.total)?;
        for (variant, model) in &models {
            let model = model.as_ref().map_err(|e| lff::Error::Config(e.to_string()))?;
            let start = Instant::now();
            let frames = rollout(&cfg, model, &scene, 10_000 + seed)?;
            let report = DriftReport::build(&frames, &scene.audio, &scene.lip_mask, cfg.clip_len(), serde_json::Value::Null)?;
            println!(
                "{seed:4}  {:>7}  {:11.5}  {:11.4}  ({:.1}s)",
                variant.name(),
                report.final_drift(),
                report.final_clip().ciede,
                start.elapsed().as_secs_f64()
            );
        }
        let truth = DriftReport::build(&scene.video, &scene.audio, &scene.lip_mask, cfg.clip_len(), serde_json::Value::Null)?;
        println!("{seed:4}  {:>7}  {:11.5}  {:11.4}", "truth", truth.final_drift(), truth.final_clip().ciede);
    }
    Ok(())
}
