//! Central finite differences, used as an independent check on tape gradients.

use std::collections::BTreeMap;

use crate::adapter::{adapter_forward, build_audio_context, timestep_embed, AdapterShape, AdapterVariant};
use crate::config::{AdapterConfig, ModelConfig};
use crate::data::RawAudioFeatures;
use crate::error::Result;
use crate::model::{assemble_conditioning, Branch, DitInput, FlowDit};
use crate::params::{Bound, ParamMap};
use crate::tensor::{GradTape, KeyMask, Rng, Tensor, Var};

pub const DEFAULT_STEP: f64 = 1e-6;

/// Central-difference gradient of `f` at `x`.
pub fn numeric_gradient(x: &Tensor, step: f64, f: impl Fn(&Tensor) -> Result<f64>) -> Result<Tensor> {
    let mut probe = x.clone();
    let mut out = Tensor::zeros(x.shape().to_vec());
    for i in 0..x.numel() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + step;
        let up = f(&probe)?;
        probe.data_mut()[i] = orig - step;
        let down = f(&probe)?;
        probe.data_mut()[i] = orig;
        out.data_mut()[i] = (up - down) / (2.0 * step);
    }
    Ok(out)
}

/// Central-difference gradients with respect to every named tensor.
pub fn numeric_gradients(
    params: &BTreeMap<String, Tensor>,
    step: f64,
    f: impl Fn(&BTreeMap<String, Tensor>) -> Result<f64>,
) -> Result<BTreeMap<String, Tensor>> {
    let mut probe = params.clone();
    let mut out = BTreeMap::new();
    for name in params.keys() {
        let mut g = Tensor::zeros(params[name].shape().to_vec());
        for i in 0..g.numel() {
            let orig = probe[name].data()[i];
            probe.get_mut(name).expect("present").data_mut()[i] = orig + step;
            let up = f(&probe)?;
            probe.get_mut(name).expect("present").data_mut()[i] = orig - step;
            let down = f(&probe)?;
            probe.get_mut(name).expect("present").data_mut()[i] = orig;
            g.data_mut()[i] = (up - down) / (2.0 * step);
        }
        out.insert(name.clone(), g);
    }
    Ok(out)
}

/// Gradient norms below this are compared on an absolute scale, since a
/// structurally zero gradient leaves only finite-difference rounding noise.
pub const NORM_FLOOR: f64 = 1e-3;

/// `‖a − b‖ / max(‖a‖, ‖b‖, NORM_FLOOR)`.
pub fn relative_error(a: &Tensor, b: &Tensor) -> f64 {
    let norm = |t: &[f64]| t.iter().map(|v| v * v).sum::<f64>().sqrt();
    let diff: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt();
    diff / norm(a.data()).max(norm(b.data())).max(NORM_FLOOR)
}

/// Worst relative error across named tensors, with the offending name.
pub fn worst_relative_error(
    analytic: &BTreeMap<String, Tensor>,
    numeric: &BTreeMap<String, Tensor>,
) -> (String, f64) {
    numeric
        .iter()
        .map(|(name, n)| {
            let err = analytic
                .get(name)
                .map_or(f64::INFINITY, |a| relative_error(a, n));
            (name.clone(), err)
        })
        .fold((String::new(), 0.0), |acc, x| if x.1 > acc.1 { x } else { acc })
}

/// Outcome of one gradient comparison.
#[derive(Clone, Debug, PartialEq)]
pub struct CheckResult {
    pub name: String,
    /// Worst norm-wise relative error over all inputs.
    pub rel_err: f64,
    /// Input whose gradient was worst.
    pub worst: String,
}

/// Compares tape gradients of `sum(build(inputs) ⊙ R)` for a fixed random
/// `R` against central differences, for every input.
pub fn check_op<F>(name: &str, inputs: Vec<Tensor>, rng: &mut Rng, build: F) -> Result<CheckResult>
where
    F: for<'t> Fn(&'t GradTape, &[Var<'t>]) -> Result<Var<'t>>,
{
    let probe_tape = GradTape::new();
    let vars: Vec<Var<'_>> = inputs.iter().map(|t| probe_tape.constant(t.clone())).collect();
    let out_shape = build(&probe_tape, &vars)?.shape();
    let proj = rng.gauss(out_shape);

    let scalar = |tape: &GradTape, vars: &[Var<'_>]| -> Result<f64> {
        let out = build(tape, vars)?;
        Ok(out.value().mul(&proj)?.sum())
    };

    let tape = GradTape::new();
    let vars: Vec<Var<'_>> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let out = build(&tape, &vars)?;
    let loss = out.mul(tape.constant(proj.clone()))?.sum();
    let grads = tape.backward(loss)?;

    let mut analytic = BTreeMap::new();
    let mut named = BTreeMap::new();
    for (i, (v, t)) in vars.iter().zip(&inputs).enumerate() {
        analytic.insert(format!("input{i}"), grads.get_or_zeros(*v));
        named.insert(format!("input{i}"), t.clone());
    }
    let numeric = numeric_gradients(&named, DEFAULT_STEP, |probe| {
        let tape = GradTape::new();
        let vars: Vec<Var<'_>> = probe.values().map(|t| tape.constant(t.clone())).collect();
        scalar(&tape, &vars)
    })?;
    let (worst, rel_err) = worst_relative_error(&analytic, &numeric);
    Ok(CheckResult {
        name: name.to_string(),
        rel_err,
        worst,
    })
}

/// Every differentiable tape op on random inputs of each supported rank.
pub fn op_suite(seed: u64) -> Result<Vec<CheckResult>> {
    let mut rng = Rng::new(seed);
    let mut data = Rng::new(seed).fork(1);
    let mut g = |shape: &[usize]| data.gauss(shape.to_vec());
    let mut out = Vec::new();
    let mut push = |r: Result<CheckResult>| -> Result<()> {
        out.push(r?);
        Ok(())
    };
    let mask = KeyMask::ranges(vec![(0, 2), (1, 4), (3, 5)]);

    push(check_op("matmul", vec![g(&[3, 4]), g(&[4, 2])], &mut rng, |_, v| v[0].matmul(v[1])))?;
    for shape in [vec![5], vec![2, 3], vec![2, 2, 3]] {
        let r = shape.len();
        push(check_op(&format!("add/rank{r}"), vec![g(&shape), g(&shape)], &mut rng, |_, v| v[0].add(v[1])))?;
        push(check_op(&format!("sub/rank{r}"), vec![g(&shape), g(&shape)], &mut rng, |_, v| v[0].sub(v[1])))?;
        push(check_op(&format!("mul/rank{r}"), vec![g(&shape), g(&shape)], &mut rng, |_, v| v[0].mul(v[1])))?;
        push(check_op(&format!("scale/rank{r}"), vec![g(&shape)], &mut rng, |_, v| Ok(v[0].scale(-1.7))))?;
        push(check_op(&format!("add_scalar/rank{r}"), vec![g(&shape)], &mut rng, |_, v| Ok(v[0].add_scalar(0.3))))?;
        push(check_op(&format!("gelu/rank{r}"), vec![g(&shape)], &mut rng, |_, v| Ok(v[0].gelu())))?;
        push(check_op(&format!("silu/rank{r}"), vec![g(&shape)], &mut rng, |_, v| Ok(v[0].silu())))?;
        let d = *shape.last().expect("rank >= 1");
        push(check_op(&format!("layer_norm/rank{r}"), vec![g(&shape), g(&[d]), g(&[d])], &mut rng, |_, v| {
            v[0].layer_norm(Some(v[1]), Some(v[2]), 1e-6)
        }))?;
        push(check_op(&format!("layer_norm_plain/rank{r}"), vec![g(&shape)], &mut rng, |_, v| {
            v[0].layer_norm(None, None, 1e-6)
        }))?;
        push(check_op(&format!("add_row/rank{r}"), vec![g(&shape), g(&[d])], &mut rng, |_, v| v[0].add_row(v[1])))?;
        push(check_op(&format!("mul_row/rank{r}"), vec![g(&shape), g(&[d])], &mut rng, |_, v| v[0].mul_row(v[1])))?;
        push(check_op(&format!("sum/rank{r}"), vec![g(&shape)], &mut rng, |_, v| Ok(v[0].sum())))?;
        push(check_op(&format!("mean/rank{r}"), vec![g(&shape)], &mut rng, |_, v| Ok(v[0].mean())))?;
    }
    push(check_op("add_tiled", vec![g(&[6, 3]), g(&[2, 3])], &mut rng, |_, v| v[0].add_tiled(v[1])))?;
    push(check_op("reshape", vec![g(&[2, 6])], &mut rng, |_, v| v[0].reshape([3, 4])?.mul(v[0].reshape([3, 4])?)))?;
    push(check_op("rows", vec![g(&[5, 3])], &mut rng, |_, v| v[0].rows(1, 3)))?;
    push(check_op("concat_rows", vec![g(&[2, 3]), g(&[1, 3])], &mut rng, |t, v| t.concat_rows(&[v[0], v[1], v[0]])))?;
    push(check_op("concat_cols", vec![g(&[2, 3]), g(&[2, 1])], &mut rng, |t, v| t.concat_cols(&[v[0], v[1], v[0]])))?;
    push(check_op("attention/1head", vec![g(&[3, 4]), g(&[5, 4]), g(&[5, 4])], &mut rng, |_, v| {
        v[0].attention(v[1], v[2], 1, &KeyMask::Full)
    }))?;
    push(check_op("attention/2heads", vec![g(&[3, 4]), g(&[5, 4]), g(&[5, 6])], &mut rng, |_, v| {
        v[0].attention(v[1], v[2], 2, &KeyMask::Full)
    }))?;
    push(check_op("attention/masked", vec![g(&[3, 4]), g(&[5, 4]), g(&[5, 4])], &mut rng, move |_, v| {
        v[0].attention(v[1], v[2], 1, &mask)
    }))?;
    let w = std::rc::Rc::new(g(&[3, 4]).map(f64::abs));
    push(check_op("weighted_sq_err", vec![g(&[3, 4]), g(&[3, 4])], &mut rng, move |_, v| {
        v[0].weighted_sq_err(v[1], w.clone())
    }))?;
    Ok(out)
}

/// Small model geometry used by the full-model gradient checks.
pub fn tiny_config() -> (ModelConfig, AdapterConfig) {
    let model = ModelConfig {
        dim: 8,
        blocks: 1,
        heads: 1,
        patch: 2,
        channels: 3,
        height: 8,
        width: 8,
        ffn_mult: 2,
        text_tokens: 2,
        ..ModelConfig::default()
    };
    let adapter = AdapterConfig {
        context: 1,
        blocks: 2,
        variant: AdapterVariant::Full,
    };
    (model, adapter)
}

fn compare_params(
    name: &str,
    params: &ParamMap,
    loss: impl for<'t> Fn(&Bound<'t>) -> Result<Var<'t>>,
) -> Result<CheckResult> {
    let tape = GradTape::new();
    let p = Bound::new(&tape, params);
    let l = loss(&p)?;
    let analytic = p.grads(&tape.backward(l)?);
    let numeric = numeric_gradients(params, DEFAULT_STEP, |probe| {
        let tape = GradTape::new();
        let p = Bound::new(&tape, probe);
        loss(&p)?.value().item()
    })?;
    let (worst, rel_err) = worst_relative_error(&analytic, &numeric);
    Ok(CheckResult {
        name: name.to_string(),
        rel_err,
        worst,
    })
}

/// All parameters of the adapter (with the timestep pathway) and of the
/// whole model, for the given adapter variant.
pub fn model_suite(seed: u64, variant: AdapterVariant) -> Result<Vec<CheckResult>> {
    let (model_cfg, mut adapter_cfg) = tiny_config();
    adapter_cfg.variant = variant;
    let mut rng = Rng::new(seed);
    let audio_dim = 2;
    let frames = 2;
    let dit = FlowDit::init(&model_cfg, &adapter_cfg, audio_dim, &mut rng.fork(1));
    let mut params = dit.params.clone();
    // Nonzero values everywhere so no gradient path is trivially dead.
    for (name, t) in params.iter_mut() {
        if name.ends_with(".b") || name.ends_with(".r") || name.ends_with("null_audio") {
            *t = rng.gauss(t.shape().to_vec()).scale(0.1);
        }
    }
    let raw = RawAudioFeatures::new(rng.gauss([frames, audio_dim]))?;
    let audio = build_audio_context(&raw, adapter_cfg.context)?;
    let per = model_cfg.tokens_per_frame();
    let latents = rng.gauss([frames * per, model_cfg.dim]);
    let proj = rng.gauss([frames, model_cfg.dim]);
    let shape = AdapterShape {
        tokens_per_frame: per,
        heads: 1,
        ln_eps: model_cfg.ln_eps,
    };

    let adapter_params: ParamMap = params
        .iter()
        .filter(|(k, _)| k.starts_with("adapter.") || k.starts_with("time."))
        .map(|(k, v)| (k.clone(), v.clone()))
        .collect();
    let mut out = vec![compare_params(&format!("adapter_forward/{}", variant.name()), &adapter_params, |p| {
        let tape = p.tape();
        let te = timestep_embed(p, 0.37)?;
        let a = adapter_forward(p, variant, &te, tape.constant(audio.values.clone()), tape.constant(latents.clone()), shape)?;
        Ok(a.mul(tape.constant(proj.clone()))?.sum())
    })?];

    let z = rng.gauss(dit.latent_shape(frames).to_vec());
    let target = rng.gauss(dit.latent_shape(frames).to_vec());
    let weights = rng.gauss(dit.latent_shape(frames).to_vec()).map(f64::abs);
    let pack = assemble_conditioning(&rng.gauss([3, 8, 8]), frames, &model_cfg)?;
    let dit = FlowDit { params: params.clone(), ..dit };
    for branch in [Branch::Full, Branch::NoAudio, Branch::NoRefined] {
        let input = DitInput {
            z_t: &z,
            pack: &pack,
            t: 0.63,
            audio: &audio,
            branch,
        };
        out.push(compare_params(&format!("dit_forward/{}/{branch:?}", variant.name()), &params, |p| {
            dit.loss(p, &input, &target, &weights)
        })?);
    }
    Ok(out)
}
