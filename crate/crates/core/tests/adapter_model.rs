use lff::adapter::{
    adapter_forward, build_audio_context, timestep_embed, AdapterShape, AdapterVariant, TimestepEmbeds,
};
use lff::config::{AdapterConfig, ModelConfig};
use lff::data::RawAudioFeatures;
use lff::gradcheck::tiny_config;
use lff::model::{assemble_conditioning, patchify, unpatchify, with_known_frames, Branch, DitInput, FlowDit};
use lff::params::{Bound, ParamMap};
use lff::tensor::{GradTape, Rng, Tensor};
use lff::Error;

type Mat = Vec<Vec<f64>>;

fn mat(t: &Tensor) -> Mat {
    let (r, c) = t.dims2().unwrap();
    (0..r).map(|i| t.data()[i * c..(i + 1) * c].to_vec()).collect()
}

fn vecp(p: &ParamMap, name: &str) -> Vec<f64> {
    p[name].data().to_vec()
}

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (0.797_884_560_802_865_4 * (x + 0.044715 * x.powi(3))).tanh())
}

fn silu(x: f64) -> f64 {
    x / (1.0 + (-x).exp())
}

fn linear(x: &Mat, p: &ParamMap, prefix: &str) -> Mat {
    let w = mat(&p[&format!("{prefix}.w")]);
    let b = vecp(p, &format!("{prefix}.b"));
    x.iter()
        .map(|row| (0..b.len()).map(|j| b[j] + row.iter().enumerate().map(|(i, v)| v * w[i][j]).sum::<f64>()).collect())
        .collect()
}

fn mlp(x: &Mat, p: &ParamMap, prefix: &str) -> Mat {
    let h: Mat = linear(x, p, &format!("{prefix}.fc1")).into_iter().map(|r| r.into_iter().map(gelu).collect()).collect();
    linear(&h, p, &format!("{prefix}.fc2"))
}

fn ln(x: &Mat, p: &ParamMap, prefix: &str, eps: f64) -> Mat {
    let (g, b) = (vecp(p, &format!("{prefix}.g")), vecp(p, &format!("{prefix}.b")));
    x.iter()
        .map(|r| {
            let n = r.len() as f64;
            let mu = r.iter().sum::<f64>() / n;
            let var = r.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / n;
            r.iter().enumerate().map(|(j, v)| (v - mu) / (var + eps).sqrt() * g[j] + b[j]).collect()
        })
        .collect()
}

fn zip(a: &Mat, b: &Mat, f: impl Fn(f64, f64) -> f64) -> Mat {
    a.iter().zip(b).map(|(x, y)| x.iter().zip(y).map(|(u, v)| f(*u, *v)).collect()).collect()
}

fn rowwise(a: &Mat, row: &[f64], f: impl Fn(f64, f64) -> f64) -> Mat {
    a.iter().map(|x| x.iter().zip(row).map(|(u, v)| f(*u, *v)).collect()).collect()
}

/// Frame-local cross-attention: query `i` sees latent rows `i·per .. (i+1)·per`.
fn attend(x: &Mat, lat: &Mat, p: &ParamMap, prefix: &str, per: usize) -> Mat {
    let q = linear(x, p, &format!("{prefix}.q"));
    let k = linear(lat, p, &format!("{prefix}.k"));
    let v = linear(lat, p, &format!("{prefix}.v"));
    let d = q[0].len() as f64;
    let out: Mat = q
        .iter()
        .enumerate()
        .map(|(i, qi)| {
            let keys = i * per..(i + 1) * per;
            let s: Vec<f64> = keys.clone().map(|j| qi.iter().zip(&k[j]).map(|(a, b)| a * b).sum::<f64>() / d.sqrt()).collect();
            let m = s.iter().cloned().fold(f64::MIN, f64::max);
            let w: Vec<f64> = s.iter().map(|x| (x - m).exp()).collect();
            let z: f64 = w.iter().sum();
            (0..v[0].len()).map(|c| keys.clone().zip(&w).map(|(j, wj)| wj / z * v[j][c]).sum()).collect()
        })
        .collect();
    linear(&out, p, &format!("{prefix}.o"))
}

fn oracle_adapter(p: &ParamMap, e: &[f64], e0: &Mat, audio: &Mat, lat: &Mat, per: usize, eps: f64) -> Mat {
    let mut x = audio.clone();
    let mut b = 0;
    while p.contains_key(&format!("adapter.{b}.in.fc1.w")) {
        let pre = format!("adapter.{b}");
        let lambda = ln(&mlp(&x, p, &format!("{pre}.in")), p, &format!("{pre}.ln_lambda"), eps);
        let inner = rowwise(&rowwise(&lambda, &e0[1], |v, s| v * (1.0 + s)), &e0[0], |v, s| v + s);
        let gamma = zip(&rowwise(&inner, &e0[2], |v, g| v * g), &lambda, |a, b| a + b);
        let n = ln(&gamma, p, &format!("{pre}.ln_gamma"), eps);
        let prime = zip(&attend(&n, lat, p, &format!("{pre}.attn"), per), &n, |a, b| a + b);
        let np = ln(&prime, p, &format!("{pre}.ln_prime"), eps);
        let mod_in = rowwise(&rowwise(&np, &e0[4], |v, s| v * (1.0 + s)), &e0[3], |v, s| v + s);
        let eta = mlp(&mod_in, p, &format!("{pre}.eta"));
        x = zip(&prime, &rowwise(&eta, &e0[5], |v, g| v * g), |a, b| a + b);
        b += 1;
    }
    let r = mat(&p["adapter.r"]);
    let ebar: Vec<Vec<f64>> = r.iter().map(|ri| ri.iter().zip(e).map(|(a, b)| a + b).collect()).collect();
    let out_in = rowwise(&rowwise(&x, &ebar[1], |v, s| v * (1.0 + s)), &ebar[0], |v, s| v + s);
    mlp(&out_in, p, "adapter.out")
}

fn d2_setup(seed: u64) -> (ParamMap, AdapterShape) {
    let model = ModelConfig { dim: 2, ..tiny_config().0 };
    let adapter = AdapterConfig { context: 1, blocks: 2, variant: AdapterVariant::Full };
    let mut rng = Rng::new(seed);
    let mut params = FlowDit::init(&model, &adapter, 2, &mut rng.fork(1)).params;
    for t in params.values_mut() {
        *t = rng.gauss(t.shape().to_vec()).scale(0.7);
    }
    (params, AdapterShape { tokens_per_frame: 2, heads: 1, ln_eps: 1e-6 })
}

#[test]
fn adapter_matches_a_scalar_reference_at_width_two() {
    for seed in 0..5 {
        let (params, shape) = d2_setup(seed);
        let mut rng = Rng::new(100 + seed);
        let (e, e0) = (rng.gauss([1, 2]), rng.gauss([6, 2]));
        let audio = rng.gauss([3, 6]);
        let lat = rng.gauss([6, 2]);
        let tape = GradTape::new();
        let p = Bound::new(&tape, &params);
        let te = TimestepEmbeds { e: tape.constant(e.clone()), e0: tape.constant(e0.clone()) };
        let got = adapter_forward(&p, AdapterVariant::Full, &te, tape.constant(audio.clone()), tape.constant(lat.clone()), shape).unwrap();
        let want = oracle_adapter(&params, e.data(), &mat(&e0), &mat(&audio), &mat(&lat), 2, 1e-6);
        for (g, w) in got.value().data().iter().zip(want.concat()) {
            assert!((g - w).abs() <= 1e-12, "seed {seed}: {g} vs {w}");
        }
    }
}

#[test]
fn timestep_embedding_matches_a_scalar_reference() {
    let (params, _) = d2_setup(3);
    let t = 0.37;
    let tape = GradTape::new();
    let te = timestep_embed(&Bound::new(&tape, &params), t).unwrap();
    let (e, e0) = te.values();
    // dim 2: one frequency of 1, so the features are [cos 1000t, sin 1000t].
    let s = vec![vec![(1000.0 * t).cos(), (1000.0 * t).sin()]];
    let h: Mat = linear(&s, &params, "time.fc1").into_iter().map(|r| r.into_iter().map(silu).collect()).collect();
    let want_e = linear(&h, &params, "time.fc2");
    let se: Mat = want_e.iter().map(|r| r.iter().map(|v| silu(*v)).collect()).collect();
    let want_e0 = linear(&se, &params, "time.proj").concat();
    assert!(e.data().iter().zip(&want_e[0]).all(|(a, b)| (a - b).abs() < 1e-12));
    assert_eq!(e0.shape(), &[6, 2]);
    assert!(e0.data().iter().zip(&want_e0).all(|(a, b)| (a - b).abs() < 1e-12));
}

#[test]
fn zero_modulation_makes_the_adapter_timestep_invariant() {
    let (mut params, shape) = d2_setup(4);
    for name in ["time.fc2.w", "time.fc2.b", "time.proj.w", "time.proj.b", "adapter.r"] {
        let t = params.get_mut(name).unwrap();
        *t = Tensor::zeros(t.shape().to_vec());
    }
    let mut rng = Rng::new(9);
    let (audio, lat) = (rng.gauss([3, 6]), rng.gauss([6, 2]));
    let at = |t: f64| {
        let tape = GradTape::new();
        let p = Bound::new(&tape, &params);
        let te = timestep_embed(&p, t).unwrap();
        let out = adapter_forward(&p, AdapterVariant::Full, &te, tape.constant(audio.clone()), tape.constant(lat.clone()), shape).unwrap();
        (*out.value()).clone()
    };
    assert!(at(0.1).max_abs_diff(&at(0.9)).unwrap() <= 1e-12);
}

#[test]
fn refined_audio_depends_on_the_latents() {
    let (params, shape) = d2_setup(5);
    let mut rng = Rng::new(10);
    let (audio, lat) = (rng.gauss([3, 6]), rng.gauss([6, 2]));
    let run = |lat: &Tensor| {
        let tape = GradTape::new();
        let p = Bound::new(&tape, &params);
        let te = timestep_embed(&p, 0.5).unwrap();
        let out = adapter_forward(&p, AdapterVariant::Full, &te, tape.constant(audio.clone()), tape.param(lat.clone()), shape).unwrap();
        (*out.value()).clone()
    };
    let mut moved = lat.clone();
    moved.data_mut()[0] += 0.1;
    assert!(run(&lat).max_abs_diff(&run(&moved)).unwrap() > 1e-6);
    // Only frame 0 owns latent row 0, so frames 1 and 2 stay put.
    let (a, b) = (run(&lat), run(&moved));
    assert_eq!(a.data()[2..], b.data()[2..]);
}

#[test]
fn adapter_shape_errors() {
    let (params, shape) = d2_setup(6);
    let tape = GradTape::new();
    let p = Bound::new(&tape, &params);
    let te = timestep_embed(&p, 0.5).unwrap();
    let err = adapter_forward(&p, AdapterVariant::Full, &te, tape.constant(Tensor::zeros([3, 6])), tape.constant(Tensor::zeros([5, 2])), shape);
    assert!(matches!(err, Err(Error::Dimension { .. })));
    assert!(matches!(timestep_embed(&p, f64::NAN), Err(Error::Domain(_))));
}

#[test]
fn audio_context_hand_case() {
    let a = RawAudioFeatures::new(Tensor::new([3, 1], vec![1.0, 2.0, 3.0]).unwrap()).unwrap();
    let c = build_audio_context(&a, 1).unwrap();
    assert_eq!(c.values.data(), &[1.0, 1.0, 2.0, 1.0, 2.0, 3.0, 2.0, 3.0, 3.0]);
    assert!(matches!(build_audio_context(&a, 3), Err(Error::Config(_))));
}

struct Fixture {
    model: FlowDit,
    z: Tensor,
    pack: lff::model::ConditioningPack,
    audio: lff::adapter::ContextualAudio,
}

fn fixture(variant: AdapterVariant) -> Fixture {
    let (m, mut a) = tiny_config();
    a.variant = variant;
    let mut rng = Rng::new(21);
    let mut model = FlowDit::init(&m, &a, 2, &mut rng.fork(1));
    for t in model.params.values_mut() {
        *t = rng.gauss(t.shape().to_vec()).scale(0.4);
    }
    let audio = build_audio_context(&RawAudioFeatures::new(rng.gauss([3, 2])).unwrap(), 1).unwrap();
    let pack = assemble_conditioning(&rng.gauss([3, 8, 8]), 3, &m).unwrap();
    let z = rng.gauss(model.latent_shape(3).to_vec());
    Fixture { model, z, pack, audio }
}

impl Fixture {
    fn run(&self, audio: &lff::adapter::ContextualAudio, branch: Branch) -> Tensor {
        self.model
            .velocity(&DitInput { z_t: &self.z, pack: &self.pack, t: 0.3, audio, branch })
            .unwrap()
    }
}

#[test]
fn null_branches_ignore_the_audio_stream() {
    for variant in AdapterVariant::ALL {
        let f = fixture(variant);
        let mut other = f.audio.clone();
        other.values = Rng::new(99).gauss(other.values.shape().to_vec());
        assert_eq!(f.run(&f.audio, Branch::NoAudio), f.run(&other, Branch::NoAudio), "{variant:?}");
        assert_eq!(f.run(&f.audio, Branch::NoRefined), f.run(&other, Branch::NoRefined), "{variant:?}");
        assert_ne!(f.run(&f.audio, Branch::Full), f.run(&other, Branch::Full), "{variant:?}");
    }
}

#[test]
fn forward_is_deterministic_and_shaped_like_the_latents() {
    let f = fixture(AdapterVariant::Full);
    let a = f.run(&f.audio, Branch::Full);
    assert_eq!(a.shape(), f.z.shape());
    assert_eq!(a, f.run(&f.audio, Branch::Full));
}

#[test]
fn patchify_round_trips() {
    let x = Rng::new(1).gauss([3, 2, 8, 4]);
    let tokens = patchify(&x, 2).unwrap();
    assert_eq!(tokens.shape(), &[3 * 4 * 2, 2 * 4]);
    assert_eq!(unpatchify(&tokens, [3, 2, 8, 4], 2).unwrap(), x);
}

#[test]
fn conditioning_marks_only_the_first_frame_as_known() {
    let (m, _) = tiny_config();
    let reference = Rng::new(2).gauss([3, 8, 8]);
    let pack = assemble_conditioning(&reference, 4, &m).unwrap();
    assert_eq!(pack.temporal_mask.shape(), &[4, 1, 8, 8]);
    let per = 64;
    assert!(pack.temporal_mask.data()[..per].iter().all(|&v| v == 1.0));
    assert!(pack.temporal_mask.data()[per..].iter().all(|&v| v == 0.0));
    assert_eq!(&pack.reference_latent.data()[..3 * per], reference.data());
    assert!(pack.reference_latent.data()[3 * per..].iter().all(|&v| v == 0.0));

    let known = Rng::new(3).gauss([2, 3, 8, 8]);
    let pack = with_known_frames(&reference, &known, 4, &m).unwrap();
    assert!(pack.temporal_mask.data()[..2 * per].iter().all(|&v| v == 1.0));
    assert_eq!(&pack.reference_latent.data()[..2 * 3 * per], known.data());
}
