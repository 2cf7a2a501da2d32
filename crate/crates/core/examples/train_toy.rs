//! Trains the toy model on the default configuration and prints the loss
//! curve every 100 steps.
//!
//! `cargo run --release --example train_toy -- [steps]`

use std::time::Instant;

use lff::config::ExperimentConfig;
use lff::train::{make_scenes, train_loop_with};

fn main() -> lff::Result<()> {
    let mut cfg = ExperimentConfig::default();
    if let Some(steps) = std::env::args().nth(1) {
        cfg.train.steps = steps.parse().expect("step count");
    }
    let scenes = make_scenes(&cfg)?;
    let start = Instant::now();
    let (state, report) = train_loop_with(&cfg, &scenes, |r| {
        if r.step % 100 == 0 {
            println!("step {:5}  loss {:.5}  {:.1}s", r.step, r.loss, start.elapsed().as_secs_f64());
        }
    })?;
    println!(
        "validation mse {:.5} -> {:.5} after {} steps ({:.1}s, mean loss {:.5})",
        report.initial_val_mse,
        report.final_val_mse,
        state.step,
        start.elapsed().as_secs_f64(),
        state.mean_loss
    );
    Ok(())
}
