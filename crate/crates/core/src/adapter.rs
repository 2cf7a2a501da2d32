//! Audio context windows, timestep embeddings and the timestep-aware audio
//! adapter that turns per-frame audio into refined audio tokens.
//!
//! Parameter names used here (all under the `time.` and `adapter.` prefixes):
//!
//! | name | shape |
//! |------|-------|
//! | `time.fc1`, `time.fc2` | sinusoid → D → D |
//! | `time.proj` | D → 6D |
//! | `adapter.{b}.in` | MLP, `(2k+1)d` (block 0) or D → D |
//! | `adapter.{b}.ln_lambda`, `ln_gamma`, `ln_prime` | layer norms |
//! | `adapter.{b}.attn.{q,k,v,o}` | D → D |
//! | `adapter.{b}.eta` | MLP D → D |
//! | `adapter.out` | MLP D → D |
//! | `adapter.r` | 2 × D |
//! | `adapter.null_audio` | 1 × d |

use serde::{Deserialize, Serialize};

use crate::config::AdapterConfig;
use crate::data::RawAudioFeatures;
use crate::error::{Error, Result};
use crate::params::{Bound, ParamInit};
use crate::tensor::{Activation, KeyMask, Tensor, Var};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdapterVariant {
    #[default]
    Full,
    /// Audio context projected by a plain MLP and injected directly.
    Off,
    /// Adapter blocks without timestep modulation.
    NoModulation,
    /// Timestep embeddings replaced by learnable random vectors.
    RandomModulation,
    /// Adapter blocks without the latent cross-attention.
    NoCrossAttn,
}

impl AdapterVariant {
    pub fn name(self) -> &'static str {
        match self {
            AdapterVariant::Full => "full",
            AdapterVariant::Off => "off",
            AdapterVariant::NoModulation => "no_modulation",
            AdapterVariant::RandomModulation => "random_modulation",
            AdapterVariant::NoCrossAttn => "no_cross_attn",
        }
    }

    pub const ALL: [AdapterVariant; 5] = [
        AdapterVariant::Full,
        AdapterVariant::Off,
        AdapterVariant::NoModulation,
        AdapterVariant::RandomModulation,
        AdapterVariant::NoCrossAttn,
    ];
}

/// Audio features with `2k + 1` neighbouring frames concatenated per row.
#[derive(Clone, Debug, PartialEq)]
pub struct ContextualAudio {
    pub values: Tensor,
    pub k: usize,
    pub d: usize,
}

impl ContextualAudio {
    pub fn frames(&self) -> usize {
        self.values.shape()[0]
    }

    pub fn width(&self) -> usize {
        (2 * self.k + 1) * self.d
    }

    pub fn slice(&self, start: usize, len: usize) -> Result<Self> {
        Ok(ContextualAudio {
            values: self.values.narrow0(start, len)?,
            k: self.k,
            d: self.d,
        })
    }
}

/// Row `i` becomes `a[i-k] ‖ … ‖ a[i+k]`, replicating the edge frames.
pub fn build_audio_context(a: &RawAudioFeatures, k: usize) -> Result<ContextualAudio> {
    let (f, d) = (a.frames(), a.dim());
    if k >= f {
        return Err(Error::Config(format!(
            "audio context radius {k} needs more than {f} frames"
        )));
    }
    let src = a.values.data();
    let mut data = Vec::with_capacity(f * (2 * k + 1) * d);
    for i in 0..f {
        for j in 0..=2 * k {
            let idx = (i + j).saturating_sub(k).min(f - 1);
            data.extend_from_slice(&src[idx * d..(idx + 1) * d]);
        }
    }
    Ok(ContextualAudio {
        values: Tensor::new([f, (2 * k + 1) * d], data)?,
        k,
        d,
    })
}

/// `[cos(1000 t ω_i) …, sin(1000 t ω_i) …]` with `ω_i = 10000^(-i/half)`.
pub fn sinusoidal(t: f64, dim: usize) -> Tensor {
    let half = dim / 2;
    let mut out = vec![0.0; dim];
    for i in 0..half {
        let freq = (-(10000f64.ln()) * i as f64 / half as f64).exp();
        let arg = 1000.0 * t * freq;
        out[i] = arg.cos();
        out[half + i] = arg.sin();
    }
    Tensor::new([1, dim], out).expect("dim values")
}

/// Overall embedding `e` (1×D) and its six modulation rows `e0` (6×D).
#[derive(Clone, Copy, Debug)]
pub struct TimestepEmbeds<'t> {
    pub e: Var<'t>,
    pub e0: Var<'t>,
}

impl TimestepEmbeds<'_> {
    pub fn values(&self) -> (Tensor, Tensor) {
        ((*self.e.value()).clone(), (*self.e0.value()).clone())
    }
}

pub fn init_timestep(init: &mut ParamInit<'_>, dim: usize) {
    init.linear("time.fc1", dim, dim);
    init.linear("time.fc2", dim, dim);
    init.linear("time.proj", dim, 6 * dim);
}

pub fn timestep_embed<'t>(p: &Bound<'t>, t: f64) -> Result<TimestepEmbeds<'t>> {
    if !t.is_finite() {
        return Err(Error::Domain(format!("timestep must be finite, got {t}")));
    }
    let w = p.get("time.fc1.w")?;
    let dim = w.shape()[0];
    let x = p.tape().constant(sinusoidal(t, dim));
    let h = p.linear(x, "time.fc1")?.silu();
    let e = p.linear(h, "time.fc2")?;
    let e0 = p.linear(e.silu(), "time.proj")?.reshape([6, dim])?;
    Ok(TimestepEmbeds { e, e0 })
}

/// Both rows equal to `e`, plus the learnable shift `r`.
pub fn repeat_shift<'t>(e: Var<'t>, r: Var<'t>) -> Result<Var<'t>> {
    let (es, rs) = (e.shape(), r.shape());
    if es.len() != 2 || es[0] != 1 || rs.len() != 2 || rs[0] != 2 || rs[1] != es[1] {
        return Err(Error::shapes("repeat_shift", &es, &rs));
    }
    e.tape().concat_rows(&[e, e])?.add(r)
}

pub fn init_adapter(init: &mut ParamInit<'_>, cfg: &AdapterConfig, audio_dim: usize, dim: usize) {
    let width = (2 * cfg.context + 1) * audio_dim;
    init.zeros("adapter.null_audio", [1, audio_dim]);
    if cfg.variant == AdapterVariant::Off {
        init.mlp("adapter.direct", width, dim, dim);
        return;
    }
    for b in 0..cfg.blocks {
        let p = format!("adapter.{b}");
        init.mlp(&format!("{p}.in"), if b == 0 { width } else { dim }, dim, dim);
        for ln in ["ln_lambda", "ln_gamma", "ln_prime"] {
            init.layer_norm(&format!("{p}.{ln}"), dim);
        }
        if cfg.variant != AdapterVariant::NoCrossAttn {
            for proj in ["q", "k", "v", "o"] {
                init.linear(&format!("{p}.attn.{proj}"), dim, dim);
            }
        }
        init.mlp(&format!("{p}.eta"), dim, dim, dim);
    }
    init.mlp("adapter.out", dim, dim, dim);
    init.zeros("adapter.r", [2, dim]);
    if cfg.variant == AdapterVariant::RandomModulation {
        init.normal("adapter.rand_e", [1, dim], 0.5);
        init.normal("adapter.rand_e0", [6, dim], 0.5);
    }
}

/// Cross-attention with separate query/key/value/output projections.
pub fn cross_attention<'t>(
    p: &Bound<'t>,
    prefix: &str,
    x: Var<'t>,
    ctx: Var<'t>,
    heads: usize,
    mask: &KeyMask,
) -> Result<Var<'t>> {
    let q = p.linear(x, &format!("{prefix}.q"))?;
    let k = p.linear(ctx, &format!("{prefix}.k"))?;
    let v = p.linear(ctx, &format!("{prefix}.v"))?;
    let a = q.attention(k, v, heads, mask)?;
    p.linear(a, &format!("{prefix}.o"))
}

/// `x ⊙ (1 + scale) + shift`, rows broadcast over tokens.
pub fn modulate<'t>(x: Var<'t>, shift: Var<'t>, scale: Var<'t>) -> Result<Var<'t>> {
    x.mul_row(scale.add_scalar(1.0))?.add_row(shift)
}

/// Key ranges giving query row `i` the `per_query` consecutive keys it owns.
pub fn block_mask(queries: usize, per_query: usize) -> KeyMask {
    KeyMask::ranges((0..queries).map(|i| (i * per_query, (i + 1) * per_query)).collect())
}

/// Geometry shared by every adapter call.
#[derive(Clone, Copy, Debug)]
pub struct AdapterShape {
    /// Latent tokens belonging to each audio frame.
    pub tokens_per_frame: usize,
    pub heads: usize,
    pub ln_eps: f64,
}

/// Refined audio tokens, one per audio frame.
///
/// `audio` is `[F × (2k+1)d]`, `latents` is `[F·P × D]` with the `P` tokens of
/// frame `f` at rows `f·P .. (f+1)·P`; audio token `f` attends to those rows.
pub fn adapter_forward<'t>(
    p: &Bound<'t>,
    variant: AdapterVariant,
    te: &TimestepEmbeds<'t>,
    audio: Var<'t>,
    latents: Var<'t>,
    shape: AdapterShape,
) -> Result<Var<'t>> {
    let (frames, _) = audio.value().dims2()?;
    let (n, d_lat) = latents.value().dims2()?;
    if variant == AdapterVariant::Off {
        return p.mlp(audio, "adapter.direct", Activation::Gelu);
    }
    let dim = p.get("adapter.out.fc1.w")?.shape()[0];
    if d_lat != dim || n != frames * shape.tokens_per_frame {
        return Err(Error::dim(
            "adapter_forward",
            format!(
                "latents {:?} vs {frames} audio frames × {} tokens of width {dim}",
                [n, d_lat],
                shape.tokens_per_frame
            ),
        ));
    }
    let (e, e0) = match variant {
        AdapterVariant::RandomModulation => (p.get("adapter.rand_e")?, p.get("adapter.rand_e0")?),
        _ => (te.e, te.e0),
    };
    let modulated = variant != AdapterVariant::NoModulation;
    let m: Vec<Var<'t>> = (0..6).map(|i| e0.row(i)).collect::<Result<_>>()?;
    let mask = block_mask(frames, shape.tokens_per_frame);
    let eps = shape.ln_eps;

    let mut x = audio;
    let mut b = 0;
    while p.has(&format!("adapter.{b}.in.fc1.w")) {
        let pre = format!("adapter.{b}");
        let h = p.mlp(x, &format!("{pre}.in"), Activation::Gelu)?;
        let lambda = p.layer_norm(h, &format!("{pre}.ln_lambda"), eps)?;
        let gamma = if modulated {
            modulate(lambda, m[0], m[1])?.mul_row(m[2])?.add(lambda)?
        } else {
            lambda
        };
        let normed = p.layer_norm(gamma, &format!("{pre}.ln_gamma"), eps)?;
        let prime = if variant == AdapterVariant::NoCrossAttn {
            normed
        } else {
            cross_attention(p, &format!("{pre}.attn"), normed, latents, shape.heads, &mask)?.add(normed)?
        };
        let np = p.layer_norm(prime, &format!("{pre}.ln_prime"), eps)?;
        let eta_in = if modulated { modulate(np, m[3], m[4])? } else { np };
        let eta = p.mlp(eta_in, &format!("{pre}.eta"), Activation::Gelu)?;
        x = if modulated {
            prime.add(eta.mul_row(m[5])?)?
        } else {
            prime.add(eta)?
        };
        b += 1;
    }
    if b == 0 {
        return Err(Error::UnknownParam("adapter.0.in.fc1.w".into()));
    }
    let out_in = if modulated {
        let ebar = repeat_shift(e, p.get("adapter.r")?)?;
        modulate(x, ebar.row(0)?, ebar.row(1)?)?
    } else {
        x
    };
    p.mlp(out_in, "adapter.out", Activation::Gelu)
}

/// The learned null audio token tiled to `frames` rows of context width.
pub fn null_audio<'t>(p: &Bound<'t>, frames: usize, k: usize) -> Result<Var<'t>> {
    let tok = p.get("adapter.null_audio")?;
    let row = p.tape().concat_cols(&vec![tok; 2 * k + 1])?;
    p.tape().concat_rows(&vec![row; frames])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::ParamMap;
    use crate::tensor::{GradTape, Rng};

    #[test]
    fn context_of_radius_zero_is_identity() {
        let a = RawAudioFeatures::new(Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap()).unwrap();
        assert_eq!(build_audio_context(&a, 0).unwrap().values, a.values);
    }

    #[test]
    fn context_replicates_edges() {
        let a = RawAudioFeatures::new(Tensor::from_rows(&[vec![1.0], vec![2.0], vec![3.0]]).unwrap()).unwrap();
        let c = build_audio_context(&a, 1).unwrap();
        let want = Tensor::from_rows(&[vec![1.0, 1.0, 2.0], vec![1.0, 2.0, 3.0], vec![2.0, 3.0, 3.0]]).unwrap();
        assert_eq!(c.values, want);
    }

    #[test]
    fn context_width_and_radius_limit() {
        let a = RawAudioFeatures::new(Tensor::ones([5, 3])).unwrap();
        assert_eq!(build_audio_context(&a, 2).unwrap().values.shape(), &[5, 15]);
        assert!(matches!(build_audio_context(&a, 5), Err(Error::Config(_))));
    }

    #[test]
    fn repeat_shift_by_hand() {
        let tape = GradTape::new();
        let e = tape.constant(Tensor::from_rows(&[vec![1.0, 2.0]]).unwrap());
        let r = tape.constant(Tensor::from_rows(&[vec![0.5, 0.0], vec![0.0, -1.0]]).unwrap());
        let out = repeat_shift(e, r).unwrap();
        assert_eq!(*out.value(), Tensor::from_rows(&[vec![1.5, 2.0], vec![1.0, 1.0]]).unwrap());
        let bad = tape.constant(Tensor::zeros([3, 2]));
        assert!(repeat_shift(e, bad).is_err());
    }

    fn time_params(dim: usize, seed: u64) -> ParamMap {
        let mut rng = Rng::new(seed);
        let mut init = ParamInit::new(&mut rng);
        init_timestep(&mut init, dim);
        init.map
    }

    #[test]
    fn timestep_embeds_have_six_rows_and_separate_times() {
        for dim in [8, 16, 32] {
            let params = time_params(dim, dim as u64);
            let tape = GradTape::new();
            let p = Bound::new(&tape, &params);
            let te = timestep_embed(&p, 0.3).unwrap();
            assert_eq!(te.e.shape(), vec![1, dim]);
            assert_eq!(te.e0.shape(), vec![6, dim]);
            let again = timestep_embed(&p, 0.3).unwrap();
            assert_eq!(te.values(), again.values());
        }
        let params = time_params(16, 1);
        let mut rng = Rng::new(2);
        let tape = GradTape::new();
        let p = Bound::new(&tape, &params);
        for _ in 0..100 {
            let (t1, t2) = (rng.uniform(), rng.uniform());
            let a = timestep_embed(&p, t1).unwrap().values();
            let b = timestep_embed(&p, t2).unwrap().values();
            assert_ne!(a.0, b.0);
        }
    }
}
