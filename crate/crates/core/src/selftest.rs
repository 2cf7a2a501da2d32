//! The invariant suite behind `lff selftest`.
//!
//! Every check is small and seeded so the whole suite runs in about a minute.

use crate::adapter::{adapter_forward, build_audio_context, timestep_embed, AdapterShape, AdapterVariant, TimestepEmbeds};
use crate::config::{AblationModel, ExperimentConfig};
use crate::data::tnsr::{decode, encode};
use crate::data::{generate_scene, Dtype, RawAudioFeatures, SceneConfig};
use crate::error::Result;
use crate::flow::{flow_forward, loss_branch, velocity_target, LossBranch};
use crate::gradcheck::{model_suite, op_suite, tiny_config};
use crate::guidance::{cfg_combine, native_combine, BranchSet};
use crate::harness::{ablation_grid, StubDenoiser, STUB_OFFSET};
use crate::metrics::ciede::delta_e00;
use crate::metrics::{frame_ciede, latent_drift, seam_discontinuity};
use crate::model::{assemble_conditioning, Branch, DitInput, FlowDit};
use crate::params::{Bound, ParamMap};
use crate::tensor::{GradTape, Rng, Tensor};
use crate::train::{init_state, make_scenes, prepare, train_step};
use crate::window::{
    dwsw_sample, euler_step, BufferMode, log_weights, make_plan, sample, weight_curve, SampleOptions, Strategy, WeightScheme,
    WindowCtx,
};

pub struct Outcome {
    pub name: &'static str,
    pub result: std::result::Result<(), String>,
}

type Check = std::result::Result<(), String>;

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Check {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn lift<T>(r: Result<T>) -> std::result::Result<T, String> {
    r.map_err(|e| e.to_string())
}

/// Runs every check; the order is stable.
pub fn run_all(seed: u64) -> Vec<Outcome> {
    let checks: Vec<(&'static str, fn(u64) -> Check)> = vec![
        ("tensor.op_gradients", op_gradients),
        ("tensor.model_gradients", model_gradients),
        ("tensor.linearity", linearity),
        ("tensor.purity", purity),
        ("tensor.tnsr_round_trip", tnsr_round_trip),
        ("data.scene_masks", scene_masks),
        ("data.regeneration", regeneration),
        ("adapter.collapse", adapter_collapse),
        ("adapter.latent_sensitivity", latent_sensitivity),
        ("adapter.modulation_rows", modulation_rows),
        ("flow.algebra", flow_algebra),
        ("flow.branch_frequencies", branch_frequencies),
        ("dit.deterministic", dit_deterministic),
        ("dit.conditioning_isolation", conditioning_isolation),
        ("guidance.affine", guidance_affine),
        ("guidance.cfg_reduction", cfg_reduction),
        ("guidance.arithmetic", guidance_arithmetic),
        ("window.plan_coverage", plan_coverage),
        ("window.weight_schemes", weight_schemes),
        ("window.convex_fusion", convex_fusion),
        ("window.sequential_order", sequential_order),
        ("window.fusion_skip", fusion_skip),
        ("window.euler_halves", euler_halves),
        ("metrics.ciede_reference", ciede_reference),
        ("metrics.self_distance", self_distance),
        ("metrics.channel_permutation", channel_permutation),
        ("metrics.seam_log_vs_fixed", seam_log_vs_fixed),
        ("harness.config_round_trip", config_round_trip),
        ("harness.zero_lr", zero_lr),
        ("harness.train_determinism", train_determinism),
        ("harness.grid_cardinality", grid_cardinality),
    ];
    checks
        .into_iter()
        .map(|(name, f)| Outcome { name, result: f(seed) })
        .collect()
}

fn op_gradients(seed: u64) -> Check {
    for r in lift(op_suite(seed))? {
        ensure(r.rel_err <= 1e-5, || format!("{}: {:.2e} at {}", r.name, r.rel_err, r.worst))?;
    }
    Ok(())
}

fn model_gradients(seed: u64) -> Check {
    for r in lift(model_suite(seed, AdapterVariant::Full))? {
        ensure(r.rel_err <= 1e-5, || format!("{}: {:.2e} at {}", r.name, r.rel_err, r.worst))?;
    }
    Ok(())
}

fn linearity(seed: u64) -> Check {
    let x = Rng::new(seed).gauss([3, 4]);
    let grad = |which: u8| -> Result<Tensor> {
        let tape = GradTape::new();
        let v = tape.param(x.clone());
        let f = v.gelu().sum();
        let g = v.mul(v)?.silu().sum();
        let out = match which {
            0 => f,
            1 => g,
            _ => f.add(g)?,
        };
        Ok(tape.backward(out)?.get_or_zeros(v))
    };
    let sum = lift(grad(0).and_then(|a| a.add(&grad(1)?)))?;
    let both = lift(grad(2))?;
    let d = lift(both.max_abs_diff(&sum))?;
    ensure(d < 1e-12, || format!("max diff {d:e}"))
}

fn purity(seed: u64) -> Check {
    let mut rng = Rng::new(seed);
    let (a, b) = (rng.gauss([4, 3]), rng.gauss([3, 2]));
    let (a0, b0) = (a.clone(), b.clone());
    let run = || -> Result<Tensor> {
        let tape = GradTape::new();
        let y = tape.constant(a.clone()).matmul(tape.constant(b.clone()))?.layer_norm(None, None, 1e-6)?;
        Ok((*y.value()).clone())
    };
    let (y1, y2) = (lift(run())?, lift(run())?);
    ensure(y1.data() == y2.data() && a == a0 && b == b0, || "outputs differ or inputs changed".into())
}

fn tnsr_round_trip(seed: u64) -> Check {
    let t = Rng::new(seed).gauss([2, 3, 4]);
    let (back, dtype) = lift(encode(&t, Dtype::F64).and_then(|b| decode(&b)))?;
    ensure(back == t && dtype == Dtype::F64, || "f64 round trip changed the tensor".into())?;
    let s = Tensor::scalar(1.5);
    let bytes = lift(encode(&s, Dtype::F64))?;
    let (back, _) = lift(decode(&bytes))?;
    ensure(back == s, || "scalar round trip".into())
}

fn toy_scene(seed: u64, frames: usize) -> Result<crate::data::SyntheticScene> {
    generate_scene(&mut Rng::new(seed), &SceneConfig::new(frames, 16, 16, 4))
}

fn scene_masks(seed: u64) -> Check {
    let s = lift(toy_scene(seed, 12))?;
    let binary = |m: &Tensor| m.data().iter().all(|&v| v == 0.0 || v == 1.0);
    ensure(binary(&s.face_mask) && binary(&s.lip_mask), || "masks are not binary".into())?;
    let subset = s.lip_mask.data().iter().zip(s.face_mask.data()).all(|(l, f)| *l <= *f);
    ensure(subset, || "lip mask leaves the face".into())?;
    ensure(s.frames() == s.audio.frames(), || format!("{} frames vs {} audio frames", s.frames(), s.audio.frames()))
}

fn regeneration(seed: u64) -> Check {
    ensure(lift(toy_scene(seed, 8))? == lift(toy_scene(seed, 8))?, || "same seed, different scene".into())
}

fn tiny_model(seed: u64, variant: AdapterVariant) -> FlowDit {
    let (m, mut a) = tiny_config();
    a.variant = variant;
    FlowDit::init(&m, &a, 2, &mut Rng::new(seed))
}

fn tiny_shape() -> AdapterShape {
    let (m, _) = tiny_config();
    AdapterShape {
        tokens_per_frame: m.tokens_per_frame(),
        heads: 1,
        ln_eps: m.ln_eps,
    }
}

fn randomize(params: &mut ParamMap, rng: &mut Rng) {
    for t in params.values_mut() {
        *t = rng.gauss(t.shape().to_vec()).scale(0.5);
    }
}

/// Adapter output for explicit latents and timestep.
fn adapter_out(params: &ParamMap, variant: AdapterVariant, audio: &Tensor, latents: &Tensor, t: f64) -> Result<Tensor> {
    let tape = GradTape::new();
    let p = Bound::new(&tape, params);
    let te = timestep_embed(&p, t)?;
    let out = adapter_forward(&p, variant, &te, tape.constant(audio.clone()), tape.constant(latents.clone()), tiny_shape())?;
    Ok((*out.value()).clone())
}

fn adapter_inputs(rng: &mut Rng) -> (Tensor, Tensor) {
    let frames = 3;
    let audio = rng.gauss([frames, 3 * 2]);
    let latents = rng.gauss([frames * tiny_shape().tokens_per_frame, 8]);
    (audio, latents)
}

fn adapter_collapse(seed: u64) -> Check {
    let mut rng = Rng::new(seed);
    let mut params = tiny_model(seed, AdapterVariant::Full).params;
    randomize(&mut params, &mut rng);
    // e ≡ 0 through fc2, e0 ≡ 0 through proj, and r = 0 gives ē ≡ 0.
    for name in ["time.fc2.w", "time.fc2.b", "time.proj.w", "time.proj.b", "adapter.r"] {
        let t = params.get_mut(name).ok_or_else(|| format!("missing {name}"))?;
        *t = Tensor::zeros(t.shape().to_vec());
    }
    let (audio, latents) = adapter_inputs(&mut rng);
    let a = lift(adapter_out(&params, AdapterVariant::Full, &audio, &latents, 0.1))?;
    let b = lift(adapter_out(&params, AdapterVariant::Full, &audio, &latents, 0.9))?;
    let d = lift(a.max_abs_diff(&b))?;
    ensure(d <= 1e-12, || format!("t=0.1 vs t=0.9 differ by {d:e}"))
}

fn latent_sensitivity(seed: u64) -> Check {
    let mut rng = Rng::new(seed);
    let mut params = tiny_model(seed, AdapterVariant::Full).params;
    randomize(&mut params, &mut rng);
    let (audio, latents) = adapter_inputs(&mut rng);
    let moved = latents.add(&rng.gauss(latents.shape().to_vec()).scale(0.1)).expect("same shape");
    let a = lift(adapter_out(&params, AdapterVariant::Full, &audio, &latents, 0.5))?;
    let b = lift(adapter_out(&params, AdapterVariant::Full, &audio, &moved, 0.5))?;
    let d = lift(a.max_abs_diff(&b))?;
    ensure(d > 1e-6, || format!("perturbed latents moved the output by only {d:e}"))
}

fn modulation_rows(seed: u64) -> Check {
    let mut rng = Rng::new(seed);
    let mut params = tiny_model(seed, AdapterVariant::Full).params;
    randomize(&mut params, &mut rng);
    let (audio, latents) = adapter_inputs(&mut rng);
    let tape = GradTape::new();
    let p = Bound::new(&tape, &params);
    let e = tape.param(rng.gauss([1, 8]));
    let e0 = tape.param(rng.gauss([6, 8]));
    let out = lift(adapter_forward(
        &p,
        AdapterVariant::Full,
        &TimestepEmbeds { e, e0 },
        tape.constant(audio),
        tape.constant(latents),
        tiny_shape(),
    ))?;
    let proj = rng.gauss(out.shape());
    let loss = lift(out.mul(tape.constant(proj)).map(|v| v.sum()))?;
    let g = lift(tape.backward(loss))?.get_or_zeros(e0);
    for (i, row) in g.data().chunks(8).enumerate() {
        ensure(row.iter().any(|v| v.abs() > 1e-12), || format!("modulation row {i} is unused"))?;
    }
    Ok(())
}

fn flow_algebra(seed: u64) -> Check {
    let mut rng = Rng::new(seed);
    for _ in 0..1000 {
        let (x0, noise, t) = (rng.gauss([5]), rng.gauss([5]), rng.uniform());
        let xt = lift(flow_forward(&x0, &noise, t))?;
        let v = lift(velocity_target(&x0, &noise))?;
        for ((x, z), vv) in x0.data().iter().zip(xt.data()).zip(v.data()) {
            ensure((z - t * vv - x).abs() <= 1e-12, || format!("t={t}: {} vs {x}", z - t * vv))?;
        }
    }
    Ok(())
}

fn branch_frequencies(seed: u64) -> Check {
    let mut rng = Rng::new(seed);
    let n = 100_000;
    let mut counts = [0usize; 3];
    for _ in 0..n {
        match lift(loss_branch(rng.uniform()))? {
            LossBranch::Combined => counts[0] += 1,
            LossBranch::Face => counts[1] += 1,
            LossBranch::Lip => counts[2] += 1,
        }
    }
    for (c, want) in counts.iter().zip([0.4, 0.1, 0.5]) {
        let f = *c as f64 / n as f64;
        ensure((f - want).abs() <= 0.01, || format!("frequency {f} vs {want}"))?;
    }
    Ok(())
}

struct DitFixture {
    model: FlowDit,
    z: Tensor,
    pack: crate::model::ConditioningPack,
    audio: crate::adapter::ContextualAudio,
}

fn dit_fixture(seed: u64) -> Result<DitFixture> {
    let mut rng = Rng::new(seed);
    let mut model = tiny_model(seed, AdapterVariant::Full);
    randomize(&mut model.params, &mut rng);
    let frames = 3;
    let raw = RawAudioFeatures::new(rng.gauss([frames, 2]))?;
    let audio = build_audio_context(&raw, model.adapter.context)?;
    let pack = assemble_conditioning(&rng.gauss([3, 8, 8]), frames, &model.model)?;
    let z = rng.gauss(model.latent_shape(frames).to_vec());
    Ok(DitFixture { model, z, pack, audio })
}

impl DitFixture {
    fn velocity(&self, audio: &crate::adapter::ContextualAudio, branch: Branch) -> Result<Tensor> {
        self.model.velocity(&DitInput {
            z_t: &self.z,
            pack: &self.pack,
            t: 0.4,
            audio,
            branch,
        })
    }
}

fn dit_deterministic(seed: u64) -> Check {
    let f = lift(dit_fixture(seed))?;
    let a = lift(f.velocity(&f.audio, Branch::Full))?;
    let b = lift(f.velocity(&f.audio, Branch::Full))?;
    ensure(a.data() == b.data(), || "two evaluations differ".into())
}

fn conditioning_isolation(seed: u64) -> Check {
    let f = lift(dit_fixture(seed))?;
    let mut other = f.audio.clone();
    other.values = Rng::new(seed + 1).gauss(other.values.shape().to_vec());
    let a = lift(f.velocity(&f.audio, Branch::NoAudio))?;
    let b = lift(f.velocity(&other, Branch::NoAudio))?;
    ensure(a.data() == b.data(), || "null-audio branch reads the audio stream".into())?;
    let c = lift(f.velocity(&f.audio, Branch::NoRefined))?;
    let d = lift(f.velocity(&other, Branch::NoRefined))?;
    ensure(c.data() == d.data(), || "branch without refined audio reads the audio stream".into())?;
    let e = lift(f.velocity(&f.audio, Branch::Full))?;
    let g = lift(f.velocity(&other, Branch::Full))?;
    ensure(e.data() != g.data(), || "full branch ignores audio".into())
}

fn branches(rng: &mut Rng) -> BranchSet {
    BranchSet {
        d_full: rng.gauss([6]),
        d_no_audio: rng.gauss([6]),
        d_no_refined: rng.gauss([6]),
    }
}

fn guidance_affine(seed: u64) -> Check {
    let mut rng = Rng::new(seed);
    for _ in 0..100 {
        let b = branches(&mut rng);
        let (alpha, beta) = (rng.uniform() * 8.0, rng.uniform() * 8.0);
        let g = lift(native_combine(&b, alpha, beta))?;
        for i in 0..6 {
            let (f, a, r) = (b.d_full.data()[i], b.d_no_audio.data()[i], b.d_no_refined.data()[i]);
            let lhs = g.data()[i] - f;
            let rhs = alpha * (f - a) + beta * (f - r);
            ensure((lhs - rhs).abs() <= 1e-12, || format!("{lhs} vs {rhs}"))?;
        }
        let same = BranchSet {
            d_no_audio: b.d_full.clone(),
            d_no_refined: b.d_full.clone(),
            d_full: b.d_full.clone(),
        };
        let d = lift(lift(native_combine(&same, alpha, beta))?.max_abs_diff(&b.d_full))?;
        ensure(d <= 1e-12, || format!("equal branches moved by {d:e}"))?;
        let id = lift(native_combine(&b, 0.0, 0.0))?;
        ensure(id.data() == b.d_full.data(), || "α=β=0 is not the identity".into())?;
    }
    Ok(())
}

fn cfg_reduction(seed: u64) -> Check {
    let mut rng = Rng::new(seed);
    for _ in 0..100 {
        let b = branches(&mut rng);
        let s = rng.uniform() * 8.0;
        let via_cfg = lift(cfg_combine(&b.d_full, &b.d_no_audio, 1.0 + s))?;
        let via_native = lift(native_combine(&b, s, 0.0))?;
        let d = lift(via_cfg.max_abs_diff(&via_native))?;
        ensure(d <= 1e-12, || format!("s={s}: {d:e}"))?;
    }
    Ok(())
}

fn guidance_arithmetic(_: u64) -> Check {
    let b = BranchSet {
        d_full: Tensor::scalar(1.0),
        d_no_audio: Tensor::scalar(0.0),
        d_no_refined: Tensor::scalar(0.0),
    };
    let v = lift(lift(native_combine(&b, 4.5, 3.0))?.item())?;
    ensure(v == 8.5, || format!("got {v}"))
}

fn plan_coverage(seed: u64) -> Check {
    let mut rng = Rng::new(seed);
    for _ in 0..1000 {
        let m = 2 + rng.below(10);
        let l = m + 1 + rng.below(20);
        let total = 1 + rng.below(200);
        let plan = lift(make_plan(total, l, m))?;
        let mut covered = vec![false; total];
        for &(s, e) in &plan.windows {
            covered[s..e].iter_mut().for_each(|c| *c = true);
        }
        ensure(covered.iter().all(|&c| c), || format!("gap in ({total},{l},{m})"))?;
        ensure(plan.windows.last().map(|w| w.1) == Some(total), || format!("({total},{l},{m}) does not end at L"))?;
        ensure(
            plan.windows.windows(2).all(|w| w[1].0 - w[0].0 == l - m),
            || format!("({total},{l},{m}) stride differs from l−m"),
        )?;
    }
    Ok(())
}

fn weight_schemes(_: u64) -> Check {
    let w = lift(log_weights(3))?.weights;
    let direct = (1.0 + 0.5 * (std::f64::consts::E - 1.0)).ln();
    ensure(w[0] == 0.0 && w[2] == 1.0 && (w[1] - direct).abs() <= 1e-9, || format!("{w:?}"))?;
    for m in 2..=64 {
        let w = lift(log_weights(m))?.weights;
        ensure(w[0] == 0.0 && w[m - 1] == 1.0, || format!("m={m}: endpoints"))?;
        ensure(w.windows(2).all(|p| p[1] > p[0]), || format!("m={m}: not increasing"))?;
    }
    let fixed = lift(weight_curve(WeightScheme::Fixed, 4))?.weights;
    let uniform = lift(weight_curve(WeightScheme::Uniform, 4))?.weights;
    ensure(fixed == vec![0.5; 4], || format!("fixed {fixed:?}"))?;
    ensure(uniform == vec![0.0, 1.0 / 3.0, 2.0 / 3.0, 1.0], || format!("uniform {uniform:?}"))
}

fn global_target(frame: usize, t: f64) -> f64 {
    (frame as f64 * 0.7 + t).sin()
}

/// Steps every frame onto a target that depends only on its global index
/// and the next time, so all windows produce identical outputs.
fn agreeing(z: &Tensor, ctx: &WindowCtx<'_>, steps: usize) -> Result<Tensor> {
    let stride = z.numel() / z.shape()[0];
    let dt = 1.0 / steps as f64;
    let mut v = z.clone();
    for (i, x) in v.data_mut().iter_mut().enumerate() {
        *x = (*x - global_target(ctx.start + i / stride, ctx.t - dt)) / dt;
    }
    Ok(v)
}

/// Velocity that ignores the latents.
fn latent_free(z: &Tensor, ctx: &WindowCtx<'_>) -> Result<Tensor> {
    let stride = z.numel() / z.shape()[0];
    let mut v = z.clone();
    for (i, x) in v.data_mut().iter_mut().enumerate() {
        *x = global_target(ctx.start + i / stride, ctx.t);
    }
    Ok(v)
}

fn convex_fusion(seed: u64) -> Check {
    let z = Rng::new(seed).gauss([12, 2]);
    let steps = 7;
    let single_plan = lift(make_plan(12, 12, 2))?;
    let plan = lift(make_plan(12, 5, 2))?;
    for scheme in WeightScheme::ALL {
        let opts = SampleOptions { steps, scheme, ..SampleOptions::default() };
        let mut den = |z: &Tensor, ctx: &WindowCtx<'_>| agreeing(z, ctx, steps);
        let single = lift(dwsw_sample(&mut den, &z, &single_plan, &opts))?;
        let out = lift(dwsw_sample(&mut den, &z, &plan, &opts))?;
        let d = lift(out.max_abs_diff(&single))?;
        ensure(d <= 1e-12, || format!("{} shared: {d:e}", scheme.name()))?;

        let opts = SampleOptions { buffer: BufferMode::Double, ..opts };
        let single = lift(dwsw_sample(&mut latent_free, &z, &single_plan, &opts))?;
        let out = lift(dwsw_sample(&mut latent_free, &z, &plan, &opts))?;
        let d = lift(out.max_abs_diff(&single))?;
        ensure(d <= 1e-12, || format!("{} double: {d:e}", scheme.name()))?;
    }
    Ok(())
}

fn sequential_order(seed: u64) -> Check {
    let z = Rng::new(seed).gauss([10, 1]);
    let plan = lift(make_plan(10, 4, 2))?;
    let mut seen = Vec::new();
    let mut den = |z: &Tensor, ctx: &WindowCtx<'_>| -> Result<Tensor> {
        seen.push((ctx.step, ctx.index));
        Ok(z.scale(0.0))
    };
    lift(dwsw_sample(&mut den, &z, &plan, &SampleOptions { steps: 3, ..SampleOptions::default() }))?;
    let want: Vec<(usize, usize)> = (1..=3).rev().flat_map(|k| (0..plan.windows.len()).map(move |i| (k, i))).collect();
    ensure(seen == want, || format!("evaluation order {seen:?}"))
}

/// A denoiser whose output makes fusion observable: window `i` predicts
/// velocity `z − (i + 1)` so one Euler step to `t = 0` lands on `i + 1`.
fn fusion_skip(_: u64) -> Check {
    let plan = lift(make_plan(6, 4, 2))?;
    let mut den = |z: &Tensor, ctx: &WindowCtx<'_>| -> Result<Tensor> {
        let target = (ctx.index + 1) as f64;
        Ok(z.map(|v| (v - target) / ctx.t))
    };
    let z = Tensor::zeros([6, 1]);
    let opts = SampleOptions { steps: 1, ..SampleOptions::default() };
    // With the first-step skip, the single step never fuses.
    let out = lift(dwsw_sample(&mut den, &z, &plan, &opts))?;
    ensure(out.data() == [1.0, 1.0, 2.0, 2.0, 2.0, 2.0], || format!("skipped: {:?}", out.data()))?;
    let out = lift(dwsw_sample(&mut den, &z, &plan, &SampleOptions { skip_first_step_fusion: false, ..opts }))?;
    ensure(out.data() == [1.0, 1.0, 1.0, 2.0, 2.0, 2.0], || format!("fused: {:?}", out.data()))
}

fn euler_halves(seed: u64) -> Check {
    let mut rng = Rng::new(seed);
    let (z, v) = (rng.gauss([8]), rng.gauss([8]));
    let full = lift(euler_step(&z, &v, 0.8, 0.2))?;
    let half = lift(euler_step(&lift(euler_step(&z, &v, 0.8, 0.5))?, &v, 0.5, 0.2))?;
    let d = lift(full.max_abs_diff(&half))?;
    ensure(d <= 1e-12, || format!("{d:e}"))
}

fn ciede_reference(_: u64) -> Check {
    let pairs = [
        ([50.0, 2.6772, -79.7751], [50.0, 0.0, -82.7485], 2.0425),
        ([50.0, 0.0, 0.0], [50.0, -1.0, 2.0], 2.3669),
        ([50.0, 2.5, 0.0], [73.0, 25.0, -18.0], 27.1492),
        ([60.2574, -34.0099, 36.2677], [60.4626, -34.1751, 39.4387], 1.2644),
    ];
    for (a, b, want) in pairs {
        let got = delta_e00(a, b);
        ensure((got - want).abs() < 5e-5, || format!("{a:?} vs {b:?}: {got} != {want}"))?;
        ensure(delta_e00(a, b) == delta_e00(b, a), || "asymmetric".into())?;
    }
    Ok(())
}

fn self_distance(seed: u64) -> Check {
    let f = Rng::new(seed).gauss([3, 4, 4]).map(|v| (0.5 + 0.2 * v).clamp(0.0, 1.0));
    let d = lift(frame_ciede(&f, &f))?;
    ensure(d == 0.0, || format!("{d}"))
}

fn channel_permutation(seed: u64) -> Check {
    let x = Rng::new(seed).gauss([8, 3, 2, 2]);
    let mut p = x.clone();
    for (f, chunk) in p.data_mut().chunks_mut(12).enumerate() {
        let src = &x.data()[f * 12..(f + 1) * 12];
        chunk[..4].copy_from_slice(&src[8..]);
        chunk[4..8].copy_from_slice(&src[..4]);
        chunk[8..].copy_from_slice(&src[4..8]);
    }
    let a = lift(latent_drift(&x, 4))?;
    let b = lift(latent_drift(&p, 4))?;
    let close = a.iter().zip(&b).all(|(u, v)| {
        (u.mean_shift - v.mean_shift).abs() < 1e-12 && (u.std_shift - v.std_shift).abs() < 1e-12
    });
    ensure(close, || "drift changed under channel permutation".into())
}

fn seam_log_vs_fixed(seed: u64) -> Check {
    let truth = lift(toy_scene(seed, 40))?.video;
    let plan = lift(make_plan(40, 16, 4))?;
    let z = Rng::new(seed).gauss(truth.shape().to_vec());
    let seam = |scheme| -> Result<f64> {
        let mut den = StubDenoiser { truth: &truth, offset: STUB_OFFSET };
        let opts = SampleOptions { steps: 10, scheme, ..SampleOptions::default() };
        seam_discontinuity(&dwsw_sample(&mut den, &z, &plan, &opts)?, &truth, &plan)
    };
    let (log, fixed) = (lift(seam(WeightScheme::Logarithmic))?, lift(seam(WeightScheme::Fixed))?);
    ensure(log <= fixed, || format!("logarithmic {log} > fixed {fixed}"))
}

fn config_round_trip(_: u64) -> Check {
    let cfg = ExperimentConfig::default();
    cfg.validate().map_err(|e| format!("{e:?}"))?;
    let back = lift(ExperimentConfig::from_json(&cfg.to_json()))?;
    ensure(back == cfg, || "run.json does not reproduce the config".into())
}

fn small_training_config(seed: u64) -> ExperimentConfig {
    let (model, adapter) = tiny_config();
    let mut cfg = ExperimentConfig { seed, model, adapter, ..ExperimentConfig::default() };
    cfg.data.scenes = 2;
    cfg.data.scene_frames = 6;
    cfg.data.window_frames = 3;
    cfg.data.audio_dim = 2;
    cfg.train.steps = 3;
    cfg
}

fn zero_lr(seed: u64) -> Check {
    let mut cfg = small_training_config(seed);
    cfg.train.adam.lr = 0.0;
    let scenes = lift(make_scenes(&cfg).and_then(|s| prepare(&s, cfg.adapter.context)))?;
    let mut state = init_state(&cfg);
    let before = state.model.params.clone();
    for _ in 0..3 {
        lift(train_step(&cfg, &scenes, &mut state))?;
    }
    ensure(state.model.params == before, || "parameters moved with lr = 0".into())
}

fn train_determinism(seed: u64) -> Check {
    let cfg = small_training_config(seed);
    let scenes = lift(make_scenes(&cfg).and_then(|s| prepare(&s, cfg.adapter.context)))?;
    let run = || -> Result<Vec<u64>> {
        let mut state = init_state(&cfg);
        (0..3).map(|_| train_step(&cfg, &scenes, &mut state).map(|r| r.loss.to_bits())).collect()
    };
    ensure(lift(run())? == lift(run())?, || "loss curves differ".into())
}

fn grid_cardinality(seed: u64) -> Check {
    let mut cfg = ExperimentConfig { seed, ..ExperimentConfig::default() };
    cfg.ablation.model = AblationModel::Stub;
    cfg.window.total = 24;
    cfg.window.length = 8;
    cfg.window.overlap = 2;
    cfg.sampler.steps = 3;
    cfg.eval.clip_len = Some(8);
    let rows = lift(ablation_grid(&cfg, None))?;
    ensure(rows.len() == 6, || format!("{} rows", rows.len()))?;
    let again = lift(ablation_grid(&cfg, None))?;
    ensure(rows == again, || "grid is not deterministic".into())?;
    cfg.ablation.schemes = WeightScheme::ALL.to_vec();
    cfg.ablation.strategies = vec![Strategy::Dwsw, Strategy::PlainWindow];
    let rows = lift(ablation_grid(&cfg, None))?;
    ensure(rows.len() == 2 * 3 * 3 * 2, || format!("{} rows", rows.len()))?;
    let z = Rng::new(seed).gauss([24, 1]);
    let mut den = |z: &Tensor, _: &WindowCtx<'_>| -> Result<Tensor> { Ok(z.scale(0.5)) };
    lift(sample(Strategy::MotionFrame, &mut den, &z, &lift(make_plan(24, 8, 2))?, &SampleOptions::default()))?;
    Ok(())
}
