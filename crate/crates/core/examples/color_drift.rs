//! Color drift on a scene whose later frames are progressively tinted:
//! per-clip latent statistics, CIEDE2000 against the first clip, and the
//! sync proxy.
//!
//! `cargo run --example color_drift -- [tint_per_clip]`

use lff::data::{generate_scene, SceneConfig};
use lff::metrics::{ciede2000, DriftReport};
use lff::tensor::Rng;

fn main() -> lff::Result<()> {
    let tint: f64 = std::env::args().nth(1).map_or(0.02, |s| s.parse().expect("tint"));
    println!("white vs light gray: {:.3}", ciede2000([1.0, 1.0, 1.0], [0.9, 0.9, 0.9])?);
    println!("red vs orange:       {:.3}", ciede2000([0.8, 0.1, 0.1], [0.8, 0.4, 0.1])?);

    let (frames, clip) = (96, 16);
    let scene = generate_scene(&mut Rng::new(9), &SceneConfig::new(frames, 16, 16, 8))?;
    let mut video = scene.video.clone();
    let plane = 16 * 16;
    for (f, frame) in video.data_mut().chunks_exact_mut(3 * plane).enumerate() {
        let shift = tint * (f / clip) as f64;
        frame[..plane].iter_mut().for_each(|v| *v = (*v + shift).min(1.0));
        frame[2 * plane..].iter_mut().for_each(|v| *v = (*v - shift).max(0.0));
    }
    let report = DriftReport::build(&video, &scene.audio, &scene.lip_mask, clip, serde_json::Value::Null)?;
    print!("{}", report.to_csv());
    println!("final drift {:.4}", report.final_drift());
    Ok(())
}
