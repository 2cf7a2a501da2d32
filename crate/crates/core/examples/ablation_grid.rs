//! Runs the ablation grid on the stub denoiser over every weighting scheme
//! and both window strategies, and prints the comparison table.
//!
//! `cargo run --example ablation_grid`

use lff::config::{AblationModel, ExperimentConfig};
use lff::harness::{ablation_grid, grid_csv};
use lff::window::{Strategy, WeightScheme};

fn main() -> lff::Result<()> {
    let mut cfg = ExperimentConfig::default();
    cfg.ablation.model = AblationModel::Stub;
    cfg.ablation.schemes = WeightScheme::ALL.to_vec();
    cfg.ablation.strategies = vec![Strategy::Dwsw, Strategy::PlainWindow, Strategy::MotionFrame];
    cfg.window.total = 64;
    cfg.sampler.steps = 10;
    cfg.eval.seeds = 2;
    print!("{}", grid_csv(&ablation_grid(&cfg, None)?));
    Ok(())
}
