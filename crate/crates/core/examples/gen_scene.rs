//! Generates one synthetic talking-face scene, saves it and writes a few
//! frames as images.
//!
//! `cargo run --example gen_scene -- [out_dir] [frames]`

use std::path::PathBuf;

use lff::data::{region_means, save_scene, write_frame_image, generate_scene, SceneConfig};
use lff::metrics::sync_proxy;
use lff::tensor::Rng;

fn main() -> lff::Result<()> {
    let mut args = std::env::args().skip(1);
    let out = PathBuf::from(args.next().unwrap_or_else(|| "out/scene".into()));
    let frames: usize = args.next().map_or(32, |s| s.parse().expect("frame count"));
    let scene = generate_scene(&mut Rng::new(7), &SceneConfig::new(frames, 16, 16, 8))?;
    save_scene(&out, &scene)?;

    for f in [0, frames / 2, frames - 1] {
        write_frame_image(out.join(format!("frame_{f:04}.ppm")), &scene.video.narrow0(f, 1)?.reshape([3, 16, 16])?)?;
    }
    let amp = scene.audio.amplitude();
    let lips = region_means(&scene.video, &scene.lip_mask)?;
    println!("frame  amplitude  lip mean");
    for f in (0..frames).step_by(4) {
        println!("{f:5}  {:9.3}  {:8.3}", amp[f], lips[f]);
    }
    println!(
        "face {} px, lip {} px, sync {:.3}; saved to {}",
        scene.face_mask.sum(),
        scene.lip_mask.sum(),
        sync_proxy(&scene.audio, &scene.video, &scene.lip_mask)?,
        out.display()
    );
    Ok(())
}
