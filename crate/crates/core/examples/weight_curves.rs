//! Prints the overlap weight curves and the window plan, then samples the
//! stub task with each scheme and reports the seam discontinuity.
//!
//! `cargo run --example weight_curves -- [overlap]`

use lff::config::ExperimentConfig;
use lff::harness::{stub_truth, StubDenoiser, STUB_OFFSET};
use lff::metrics::seam_discontinuity;
use lff::tensor::Rng;
use lff::window::{dwsw_sample, make_plan, weight_curve, SampleOptions, WeightScheme};

fn main() -> lff::Result<()> {
    let m: usize = std::env::args().nth(1).map_or(6, |s| s.parse().expect("overlap"));
    for scheme in WeightScheme::ALL {
        let w = weight_curve(scheme, m)?.weights;
        let shown: Vec<String> = w.iter().map(|v| format!("{v:.3}")).collect();
        println!("{:12} [{}]", scheme.name(), shown.join(", "));
    }

    let mut cfg = ExperimentConfig::default();
    cfg.window.total = 64;
    cfg.window.overlap = m;
    let plan = make_plan(cfg.window.total, cfg.window.length, m)?;
    println!("plan over {} frames: {:?}", plan.total, plan.windows);

    let truth = stub_truth(&cfg, 0)?;
    let z = Rng::new(1).gauss(truth.shape().to_vec());
    for scheme in WeightScheme::ALL {
        let mut den = StubDenoiser { truth: &truth, offset: STUB_OFFSET };
        let opts = SampleOptions { steps: 10, scheme, ..SampleOptions::default() };
        let out = dwsw_sample(&mut den, &z, &plan, &opts)?;
        println!("{:12} seam discontinuity {:.4}", scheme.name(), seam_discontinuity(&out, &truth, &plan)?);
    }
    Ok(())
}
