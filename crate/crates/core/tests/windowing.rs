use lff::tensor::{Rng, Tensor};
use lff::window::{
    dwsw_sample, euler_step, log_weights, make_plan, sample, weight_curve, BufferMode, SampleOptions, Strategy,
    WeightScheme, WindowCtx,
};
use lff::{Error, Result};
use proptest::prelude::*;

/// Direct evaluation of the weight recipe, kept apart from the library code.
fn oracle_log_weights(m: usize) -> Vec<f64> {
    let e = 1.0f64.exp();
    let raw: Vec<f64> = (0..m).map(|i| (1.0 + (i as f64 / (m - 1) as f64) * (e - 1.0)).ln()).collect();
    let (lo, hi) = (raw[0], raw[m - 1]);
    raw.iter().map(|w| (w - lo) / (hi - lo)).collect()
}

#[test]
fn plan_hand_case() {
    assert_eq!(make_plan(8, 4, 2).unwrap().windows, vec![(0, 4), (2, 6), (4, 8)]);
    assert_eq!(make_plan(10, 16, 4).unwrap().windows, vec![(0, 10)]);
    assert!(matches!(make_plan(8, 4, 4), Err(Error::Config(_))));
    assert!(matches!(make_plan(8, 4, 1), Err(Error::Config(_))));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn plans_cover_and_end_at_total((m, extra, total) in (2usize..12, 1usize..24, 1usize..300)) {
        let l = m + extra;
        let plan = make_plan(total, l, m).unwrap();
        let mut hit = vec![0usize; total];
        for &(s, e) in &plan.windows {
            prop_assert!(s < e && e <= total);
            prop_assert!(e - s <= l);
            hit[s..e].iter_mut().for_each(|h| *h += 1);
        }
        prop_assert!(hit.iter().all(|&h| h > 0));
        prop_assert_eq!(plan.windows.last().unwrap().1, total);
        for w in plan.windows.windows(2) {
            prop_assert_eq!(w[1].0 - w[0].0, l - m);
        }
    }
}

#[test]
fn log_curve_matches_direct_evaluation() {
    let w = log_weights(3).unwrap().weights;
    assert!((w[1] - 0.620114507).abs() < 1e-9, "{w:?}");
    for m in 2..=64 {
        let w = log_weights(m).unwrap().weights;
        assert_eq!(w[0], 0.0);
        assert_eq!(w[m - 1], 1.0);
        assert!(w.windows(2).all(|p| p[1] > p[0]), "m = {m}");
        for (a, b) in w.iter().zip(oracle_log_weights(m)) {
            assert!((a - b).abs() <= 1e-12, "m = {m}");
        }
    }
}

#[test]
fn comparison_schemes() {
    assert_eq!(weight_curve(WeightScheme::Fixed, 3).unwrap().weights, vec![0.5; 3]);
    assert_eq!(weight_curve(WeightScheme::Uniform, 3).unwrap().weights, vec![0.0, 0.5, 1.0]);
    assert_eq!(
        weight_curve(WeightScheme::Logarithmic, 5).unwrap().weights,
        log_weights(5).unwrap().weights
    );
}

#[test]
fn euler_two_half_steps_equal_one_full_step() {
    let mut rng = Rng::new(8);
    for _ in 0..100 {
        let (z, v) = (rng.gauss([6]), rng.gauss([6]));
        let (t0, t2) = (0.5 + 0.5 * rng.uniform(), 0.5 * rng.uniform());
        let t1 = 0.5 * (t0 + t2);
        let one = euler_step(&z, &v, t0, t2).unwrap();
        let two = euler_step(&euler_step(&z, &v, t0, t1).unwrap(), &v, t1, t2).unwrap();
        assert!(one.max_abs_diff(&two).unwrap() <= 1e-12);
    }
}

/// Target frame value the agreeing stub lands on at time `t`.
fn target(frame: usize, t: f64) -> f64 {
    (0.3 * frame as f64).cos() * (1.0 - t)
}

fn agreeing_stub(steps: usize) -> impl FnMut(&Tensor, &WindowCtx<'_>) -> Result<Tensor> {
    let dt = 1.0 / steps as f64;
    move |z, ctx| {
        let stride = z.numel() / z.shape()[0];
        let mut v = z.clone();
        for (i, x) in v.data_mut().iter_mut().enumerate() {
            *x = (*x - target(ctx.start + i / stride, ctx.t - dt)) / dt;
        }
        Ok(v)
    }
}

#[test]
fn identical_window_outputs_fuse_to_the_single_window_result() {
    let steps = 9;
    let z = Rng::new(1).gauss([20, 3]);
    let single = dwsw_sample(&mut agreeing_stub(steps), &z, &make_plan(20, 20, 2).unwrap(), &SampleOptions { steps, ..Default::default() }).unwrap();
    for scheme in WeightScheme::ALL {
        for (l, m) in [(6, 2), (8, 3), (7, 5)] {
            let opts = SampleOptions { steps, scheme, ..Default::default() };
            let out = dwsw_sample(&mut agreeing_stub(steps), &z, &make_plan(20, l, m).unwrap(), &opts).unwrap();
            assert!(out.max_abs_diff(&single).unwrap() <= 1e-12, "{scheme:?} l={l} m={m}");
        }
    }
}

#[test]
fn snapshot_buffer_fuses_latent_free_velocities_exactly() {
    let mut stub = |z: &Tensor, ctx: &WindowCtx<'_>| -> Result<Tensor> {
        let mut v = z.clone();
        for (i, x) in v.data_mut().iter_mut().enumerate() {
            *x = target(ctx.start + i, ctx.t) + 1.0;
        }
        Ok(v)
    };
    let z = Rng::new(2).gauss([15, 1]);
    let opts = SampleOptions { steps: 6, buffer: BufferMode::Double, ..Default::default() };
    let single = dwsw_sample(&mut stub, &z, &make_plan(15, 15, 2).unwrap(), &opts).unwrap();
    let out = dwsw_sample(&mut stub, &z, &make_plan(15, 6, 3).unwrap(), &opts).unwrap();
    assert!(out.max_abs_diff(&single).unwrap() <= 1e-12);
}

/// Window `i` lands on the constant `i + 1` in a single step.
fn constant_stub(z: &Tensor, ctx: &WindowCtx<'_>) -> Result<Tensor> {
    let c = (ctx.index + 1) as f64;
    Ok(z.map(|v| (v - c) / ctx.t))
}

#[test]
fn fusion_is_skipped_for_the_first_window_and_first_step() {
    let plan = make_plan(6, 4, 3).unwrap();
    let z = Tensor::zeros([6, 1]);
    let base = SampleOptions { steps: 1, ..Default::default() };
    let out = dwsw_sample(&mut constant_stub, &z, &plan, &base).unwrap();
    assert_eq!(out.data(), &[1.0, 2.0, 3.0, 3.0, 3.0, 3.0]);

    // Without the first-step skip each overlap of three frames is blended
    // with weights [0, w, 1].
    let w = log_weights(3).unwrap().weights[1];
    let out = dwsw_sample(&mut constant_stub, &z, &plan, &SampleOptions { skip_first_step_fusion: false, ..base }).unwrap();
    let want = [1.0, 1.0, 1.0 + w, 2.0 + w, 3.0, 3.0];
    for (got, want) in out.data().iter().zip(want) {
        assert!((got - want).abs() < 1e-15, "{:?}", out.data());
    }
}

#[test]
fn fusion_trace_over_two_steps() {
    // Records (step, window, fused-frame values before the window writes).
    let plan = make_plan(5, 3, 2).unwrap();
    let mut calls = Vec::new();
    let mut stub = |z: &Tensor, ctx: &WindowCtx<'_>| -> Result<Tensor> {
        calls.push((ctx.step, ctx.index, ctx.start, ctx.end, ctx.t));
        Ok(z.map(|_| 0.0))
    };
    let opts = SampleOptions { steps: 2, ..Default::default() };
    let z = Tensor::ones([5, 1]);
    let out = dwsw_sample(&mut stub, &z, &plan, &opts).unwrap();
    assert_eq!(
        calls,
        vec![
            (2, 0, 0, 3, 1.0),
            (2, 1, 1, 4, 1.0),
            (2, 2, 2, 5, 1.0),
            (1, 0, 0, 3, 0.5),
            (1, 1, 1, 4, 0.5),
            (1, 2, 2, 5, 0.5),
        ]
    );
    // Zero velocity leaves the latents unchanged whatever the fusion does.
    assert_eq!(out, z);
}

#[test]
fn plain_window_overwrites_the_overlap() {
    let plan = make_plan(6, 4, 3).unwrap();
    let z = Tensor::zeros([6, 1]);
    let opts = SampleOptions { steps: 2, skip_first_step_fusion: false, ..Default::default() };
    let out = sample(Strategy::PlainWindow, &mut constant_stub, &z, &plan, &opts).unwrap();
    assert_eq!(out.data(), &[1.0, 2.0, 3.0, 3.0, 3.0, 3.0]);
}

#[test]
fn motion_frames_pass_the_previous_tail_as_known_frames() {
    let plan = make_plan(7, 4, 2).unwrap();
    let mut seen = Vec::new();
    let mut stub = |z: &Tensor, ctx: &WindowCtx<'_>| -> Result<Tensor> {
        if ctx.step == 1 {
            seen.push((ctx.index, ctx.known.map(|k| k.data().to_vec())));
        }
        constant_stub(z, ctx)
    };
    let z = Tensor::zeros([7, 1]);
    let out = sample(Strategy::MotionFrame, &mut stub, &z, &plan, &SampleOptions { steps: 3, ..Default::default() }).unwrap();
    assert_eq!(out.data(), &[1.0, 1.0, 1.0, 1.0, 2.0, 2.0, 3.0]);
    assert_eq!(seen, vec![(0, None), (1, Some(vec![1.0, 1.0])), (2, Some(vec![2.0, 2.0]))]);
}

#[test]
fn windows_run_in_order_within_each_step() {
    let plan = make_plan(12, 5, 2).unwrap();
    let mut order = Vec::new();
    let mut stub = |z: &Tensor, ctx: &WindowCtx<'_>| -> Result<Tensor> {
        order.push((ctx.step, ctx.index));
        Ok(z.clone())
    };
    dwsw_sample(&mut stub, &Tensor::zeros([12, 1]), &plan, &SampleOptions { steps: 4, ..Default::default() }).unwrap();
    let n = plan.windows.len();
    let want: Vec<_> = (1..=4).rev().flat_map(|k| (0..n).map(move |i| (k, i))).collect();
    assert_eq!(order, want);
}

#[test]
fn mismatched_latents_are_rejected() {
    let plan = make_plan(8, 4, 2).unwrap();
    let err = dwsw_sample(&mut constant_stub, &Tensor::zeros([7, 1]), &plan, &SampleOptions::default());
    assert!(matches!(err, Err(Error::Config(_))));
}
