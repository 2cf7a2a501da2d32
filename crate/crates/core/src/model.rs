//! The toy diffusion transformer and its conditioning inputs.
//!
//! Latents are `[F × C × H × W]`. The noisy latent, the reference latent and
//! the temporal mask are stacked on the channel axis, cut into `p × p`
//! patches and embedded as `F·P` tokens of width D, where `P` is the number
//! of patches per frame. Each block runs modulated self-attention, the
//! audio and image cross-attentions, a text cross-attention and a modulated
//! feed-forward layer.

use std::rc::Rc;

use crate::adapter::{
    self, adapter_forward, cross_attention, modulate, null_audio, repeat_shift, timestep_embed,
    AdapterShape, ContextualAudio,
};
use crate::config::{AdapterConfig, ModelConfig};
use crate::error::{Error, Result};
use crate::params::{Bound, ParamInit, ParamMap};
use crate::tensor::{Activation, GradTape, KeyMask, Rng, Tensor, Var};

/// Reference pathway inputs for one window.
#[derive(Clone, Debug, PartialEq)]
pub struct ConditioningPack {
    pub reference_frame: Tensor,
    /// Known frames in place, zeros elsewhere.
    pub reference_latent: Tensor,
    /// Ones on known frames, zeros elsewhere.
    pub temporal_mask: Tensor,
}

impl ConditioningPack {
    pub fn frames(&self) -> usize {
        self.reference_latent.shape()[0]
    }
}

fn check_frame(frame: &Tensor, model: &ModelConfig) -> Result<()> {
    let want = [model.channels, model.height, model.width];
    if frame.shape() != want {
        return Err(Error::Config(format!(
            "frame shape {:?} does not match the model's {want:?}",
            frame.shape()
        )));
    }
    Ok(())
}

/// Reference frame at frame 0, zero-filled frames after it.
pub fn assemble_conditioning(reference_frame: &Tensor, frames: usize, model: &ModelConfig) -> Result<ConditioningPack> {
    let known = reference_frame.reshape([1, model.channels, model.height, model.width]);
    check_frame(reference_frame, model)?;
    with_known_frames(reference_frame, &known?, frames, model)
}

/// Like [`assemble_conditioning`] but with several known leading frames, as
/// used when a clip continues from the tail of the previous one.
pub fn with_known_frames(
    reference_frame: &Tensor,
    known: &Tensor,
    frames: usize,
    model: &ModelConfig,
) -> Result<ConditioningPack> {
    check_frame(reference_frame, model)?;
    let n = known.shape()[0];
    if known.shape()[1..] != [model.channels, model.height, model.width] || n > frames || frames == 0 {
        return Err(Error::Config(format!(
            "{n} known frames of shape {:?} for a {frames}-frame window",
            known.shape()
        )));
    }
    let (c, h, w) = (model.channels, model.height, model.width);
    let mut reference_latent = Tensor::zeros([frames, c, h, w]);
    reference_latent.assign0(0, known)?;
    let mut temporal_mask = Tensor::zeros([frames, 1, h, w]);
    temporal_mask.assign0(0, &Tensor::ones([n, 1, h, w]))?;
    Ok(ConditioningPack {
        reference_frame: reference_frame.clone(),
        reference_latent,
        temporal_mask,
    })
}

/// `[F × C × H × W]` → `[F·(H/p)·(W/p) × C·p²]`, frame-major, then patch
/// row, patch column; within a token: channel, then dy, then dx.
pub fn patchify(x: &Tensor, p: usize) -> Result<Tensor> {
    let [f, c, h, w] = dims4(x, "patchify")?;
    if p == 0 || h % p != 0 || w % p != 0 {
        return Err(Error::dim("patchify", format!("patch {p} does not tile {h}x{w}")));
    }
    let (ph, pw) = (h / p, w / p);
    let width = c * p * p;
    let mut out = vec![0.0; f * ph * pw * width];
    let src = x.data();
    for fi in 0..f {
        for py in 0..ph {
            for px in 0..pw {
                let tok = (fi * ph + py) * pw + px;
                for ci in 0..c {
                    for dy in 0..p {
                        let row = ((fi * c + ci) * h + py * p + dy) * w + px * p;
                        let dst = tok * width + (ci * p + dy) * p;
                        out[dst..dst + p].copy_from_slice(&src[row..row + p]);
                    }
                }
            }
        }
    }
    Tensor::new([f * ph * pw, width], out)
}

/// Inverse of [`patchify`].
pub fn unpatchify(tokens: &Tensor, shape: [usize; 4], p: usize) -> Result<Tensor> {
    let [f, c, h, w] = shape;
    let (ph, pw) = (h / p, w / p);
    let width = c * p * p;
    if tokens.shape() != [f * ph * pw, width] || h % p != 0 || w % p != 0 {
        return Err(Error::shapes("unpatchify", tokens.shape(), &shape));
    }
    let mut out = vec![0.0; f * c * h * w];
    let src = tokens.data();
    for fi in 0..f {
        for py in 0..ph {
            for px in 0..pw {
                let tok = (fi * ph + py) * pw + px;
                for ci in 0..c {
                    for dy in 0..p {
                        let row = ((fi * c + ci) * h + py * p + dy) * w + px * p;
                        let s = tok * width + (ci * p + dy) * p;
                        out[row..row + p].copy_from_slice(&src[s..s + p]);
                    }
                }
            }
        }
    }
    Tensor::new(shape.to_vec(), out)
}

fn dims4(x: &Tensor, op: &'static str) -> Result<[usize; 4]> {
    match *x.shape() {
        [a, b, c, d] => Ok([a, b, c, d]),
        ref s => Err(Error::dim(op, format!("expected [F, C, H, W], got {s:?}"))),
    }
}

/// Stacks rank-4 tensors with equal frame and spatial sizes on the channel axis.
pub fn concat_channels(parts: &[&Tensor]) -> Result<Tensor> {
    let first = dims4(parts[0], "concat_channels")?;
    let (f, hw) = (first[0], first[2] * first[3]);
    let mut channels = 0;
    for t in parts {
        let d = dims4(t, "concat_channels")?;
        if d[0] != f || d[2] != first[2] || d[3] != first[3] {
            return Err(Error::shapes("concat_channels", parts[0].shape(), t.shape()));
        }
        channels += d[1];
    }
    let mut data = Vec::with_capacity(f * channels * hw);
    for fi in 0..f {
        for t in parts {
            let stride = t.shape()[1] * hw;
            data.extend_from_slice(&t.data()[fi * stride..(fi + 1) * stride]);
        }
    }
    Tensor::new([f, channels, first[2], first[3]], data)
}

/// Sinusoidal encoding of frame positions, one row per token.
fn frame_positions(frames: usize, tokens_per_frame: usize, dim: usize) -> Tensor {
    let half = dim / 2;
    let mut out = Vec::with_capacity(frames * tokens_per_frame * dim);
    for f in 0..frames {
        let mut row = vec![0.0; dim];
        for i in 0..half {
            let arg = f as f64 * (-(10000f64.ln()) * i as f64 / half as f64).exp();
            row[i] = arg.sin();
            row[half + i] = arg.cos();
        }
        for _ in 0..tokens_per_frame {
            out.extend_from_slice(&row);
        }
    }
    Tensor::new([frames * tokens_per_frame, dim], out).expect("sized")
}

/// Which condition branch a forward pass evaluates.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Branch {
    /// Audio through the adapter, injected into every block.
    Full,
    /// The learned null audio token through the adapter.
    NoAudio,
    /// No refined-audio injection at all.
    NoRefined,
}

/// Inputs to one forward pass over a window.
#[derive(Clone, Copy, Debug)]
pub struct DitInput<'a> {
    pub z_t: &'a Tensor,
    pub pack: &'a ConditioningPack,
    pub t: f64,
    pub audio: &'a ContextualAudio,
    pub branch: Branch,
}

/// Model hyperparameters together with named parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowDit {
    pub model: ModelConfig,
    pub adapter: AdapterConfig,
    pub audio_dim: usize,
    pub params: ParamMap,
}

impl FlowDit {
    pub fn init(model: &ModelConfig, adapter: &AdapterConfig, audio_dim: usize, rng: &mut Rng) -> Self {
        let d = model.dim;
        let pp = model.patch * model.patch;
        let tokens = model.tokens_per_frame();
        let mut init = ParamInit::new(rng);
        adapter::init_timestep(&mut init, d);
        adapter::init_adapter(&mut init, adapter, audio_dim, d);
        init.linear("embed.patch", (2 * model.channels + 1) * pp, d);
        init.normal("embed.pos", [tokens, d], 0.1);
        init.mlp("image.enc", model.channels * pp, d, d);
        init.normal("image.pos", [tokens, d], 0.1);
        init.normal("text.tokens", [model.text_tokens, d], 0.5);
        let inv = 1.0 / (d as f64).sqrt();
        for b in 0..model.blocks {
            let pre = format!("blocks.{b}");
            init.normal(format!("{pre}.mod"), [6, d], inv);
            for group in ["attn", "audio_attn", "image_attn", "text_attn"] {
                for proj in ["q", "k", "v", "o"] {
                    init.linear(&format!("{pre}.{group}.{proj}"), d, d);
                }
            }
            init.layer_norm(&format!("{pre}.norm_cross"), d);
            init.layer_norm(&format!("{pre}.norm_text"), d);
            init.mlp(&format!("{pre}.ffn"), d, model.ffn_mult * d, d);
        }
        init.normal("head.mod", [2, d], inv);
        init.linear_scaled("head.proj", d, model.channels * pp, 0.1);
        FlowDit {
            model: model.clone(),
            adapter: adapter.clone(),
            audio_dim,
            params: init.map,
        }
    }

    pub fn tape(&self) -> GradTape {
        GradTape::with_precision(self.model.precision)
    }

    /// Channels entering the patch embedding: noisy, reference and mask.
    pub fn input_channels(&self) -> usize {
        2 * self.model.channels + 1
    }

    pub fn latent_shape(&self, frames: usize) -> [usize; 4] {
        [frames, self.model.channels, self.model.height, self.model.width]
    }

    fn check_input(&self, input: &DitInput<'_>) -> Result<usize> {
        let [f, c, h, w] = dims4(input.z_t, "dit_forward")?;
        if [c, h, w] != [self.model.channels, self.model.height, self.model.width] {
            return Err(Error::Config(format!(
                "latent shape {:?} does not match the model",
                input.z_t.shape()
            )));
        }
        if input.pack.reference_latent.shape() != input.z_t.shape() || input.pack.temporal_mask.shape() != [f, 1, h, w] {
            return Err(Error::dim(
                "dit_forward",
                format!(
                    "conditioning {:?} / mask {:?} vs latent {:?}",
                    input.pack.reference_latent.shape(),
                    input.pack.temporal_mask.shape(),
                    input.z_t.shape()
                ),
            ));
        }
        if input.branch != Branch::NoRefined
            && (input.audio.frames() != f || input.audio.d != self.audio_dim || input.audio.k != self.adapter.context)
        {
            return Err(Error::dim(
                "dit_forward",
                format!(
                    "audio of {} frames, k={}, d={} for {f} latent frames (model k={}, d={})",
                    input.audio.frames(),
                    input.audio.k,
                    input.audio.d,
                    self.adapter.context,
                    self.audio_dim
                ),
            ));
        }
        Ok(f)
    }

    /// Embedded reference-image tokens `[P × D]`.
    pub fn image_tokens<'t>(&self, p: &Bound<'t>, reference_frame: &Tensor) -> Result<Var<'t>> {
        let m = &self.model;
        let frame = reference_frame.reshape([1, m.channels, m.height, m.width])?;
        let patches = p.tape().constant(patchify(&frame, m.patch)?);
        p.mlp(patches, "image.enc", Activation::Gelu)?
            .add_tiled(p.get("image.pos")?)
    }

    /// Audio and image cross-attention terms of one block, summed.
    pub fn injection<'t>(
        &self,
        p: &Bound<'t>,
        block: usize,
        x: Var<'t>,
        audio: Option<(Var<'t>, &KeyMask)>,
        image: Var<'t>,
    ) -> Result<Var<'t>> {
        let pre = format!("blocks.{block}");
        let heads = self.model.heads;
        let img = cross_attention(p, &format!("{pre}.image_attn"), x, image, heads, &KeyMask::Full)?;
        match audio {
            Some((a, mask)) => cross_attention(p, &format!("{pre}.audio_attn"), x, a, heads, mask)?.add(img),
            None => Ok(img),
        }
    }

    /// Frame `f` tokens see audio frames within `audio_radius` of `f`.
    pub fn audio_mask(&self, frames: usize) -> KeyMask {
        let per = self.model.tokens_per_frame();
        let r = self.model.audio_radius;
        KeyMask::ranges(
            (0..frames * per)
                .map(|n| {
                    let f = n / per;
                    (f.saturating_sub(r), (f + r + 1).min(frames))
                })
                .collect(),
        )
    }

    /// Velocity tokens `[F·P × C·p²]`.
    pub fn forward<'t>(&self, p: &Bound<'t>, input: &DitInput<'_>) -> Result<Var<'t>> {
        let frames = self.check_input(input)?;
        let m = &self.model;
        let tape = p.tape();
        let eps = m.ln_eps;
        let per = m.tokens_per_frame();

        let stacked = concat_channels(&[input.z_t, &input.pack.reference_latent, &input.pack.temporal_mask])?;
        let patches = tape.constant(patchify(&stacked, m.patch)?);
        let mut x = p
            .linear(patches, "embed.patch")?
            .add_tiled(p.get("embed.pos")?)?
            .add(tape.constant(frame_positions(frames, per, m.dim)))?;

        let te = timestep_embed(p, input.t)?;
        let image = self.image_tokens(p, &input.pack.reference_frame)?;
        let text = p.get("text.tokens")?;
        let refined = match input.branch {
            Branch::NoRefined => None,
            branch => {
                let audio = match branch {
                    Branch::Full => tape.constant(input.audio.values.clone()),
                    _ => null_audio(p, frames, self.adapter.context)?,
                };
                let shape = AdapterShape {
                    tokens_per_frame: per,
                    heads: m.heads,
                    ln_eps: eps,
                };
                Some(adapter_forward(p, self.adapter.variant, &te, audio, x, shape)?)
            }
        };
        let audio_mask = self.audio_mask(frames);

        for b in 0..m.blocks {
            let pre = format!("blocks.{b}");
            let md = te.e0.add(p.get(&format!("{pre}.mod"))?)?;
            let r: Vec<Var<'t>> = (0..6).map(|i| md.row(i)).collect::<Result<_>>()?;

            let h = modulate(x.layer_norm(None, None, eps)?, r[0], r[1])?;
            let sa = cross_attention(p, &format!("{pre}.attn"), h, h, m.heads, &KeyMask::Full)?;
            x = x.add(sa.mul_row(r[2])?)?;

            let n = p.layer_norm(x, &format!("{pre}.norm_cross"), eps)?;
            x = x.add(self.injection(p, b, n, refined.map(|a| (a, &audio_mask)), image)?)?;

            let nt = p.layer_norm(x, &format!("{pre}.norm_text"), eps)?;
            x = x.add(cross_attention(p, &format!("{pre}.text_attn"), nt, text, m.heads, &KeyMask::Full)?)?;

            let h2 = modulate(x.layer_norm(None, None, eps)?, r[3], r[4])?;
            x = x.add(p.mlp(h2, &format!("{pre}.ffn"), Activation::Gelu)?.mul_row(r[5])?)?;

            if !x.value().all_finite() {
                return Err(Error::Numeric(format!("dit block {b}")));
            }
        }

        let hm = repeat_shift(te.e, p.get("head.mod")?)?;
        let out = modulate(x.layer_norm(None, None, eps)?, hm.row(0)?, hm.row(1)?)?;
        let v = p.linear(out, "head.proj")?;
        if !v.value().all_finite() {
            return Err(Error::Numeric("dit output head".into()));
        }
        Ok(v)
    }

    /// Velocity field `[F × C × H × W]` for one input.
    pub fn velocity(&self, input: &DitInput<'_>) -> Result<Tensor> {
        let tape = self.tape();
        let p = Bound::new(&tape, &self.params);
        let v = self.forward(&p, input)?;
        unpatchify(&v.value(), self.latent_shape(input.z_t.shape()[0]), self.model.patch)
    }

    /// Weighted mean squared velocity error in token space, on a tape.
    pub fn loss<'t>(&self, p: &Bound<'t>, input: &DitInput<'_>, target: &Tensor, weights: &Tensor) -> Result<Var<'t>> {
        let v = self.forward(p, input)?;
        let tgt = p.tape().constant(patchify(target, self.model.patch)?);
        v.weighted_sq_err(tgt, Rc::new(patchify(weights, self.model.patch)?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adapter::build_audio_context;
    use crate::data::RawAudioFeatures;

    fn small() -> (ModelConfig, AdapterConfig) {
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
            blocks: 1,
            ..AdapterConfig::default()
        };
        (model, adapter)
    }

    #[test]
    fn patchify_round_trips() {
        let mut rng = Rng::new(3);
        let x = rng.gauss([2, 3, 8, 4]);
        let t = patchify(&x, 2).unwrap();
        assert_eq!(t.shape(), &[2 * 4 * 2, 12]);
        assert_eq!(unpatchify(&t, [2, 3, 8, 4], 2).unwrap(), x);
        assert!(patchify(&x, 3).is_err());
    }

    #[test]
    fn conditioning_marks_only_the_first_frame() {
        let (model, _) = small();
        let frame = Tensor::full([3, 8, 8], 0.7);
        let pack = assemble_conditioning(&frame, 4, &model).unwrap();
        let mask = pack.temporal_mask.data();
        assert!(mask[..64].iter().all(|&v| v == 1.0));
        assert!(mask[64..].iter().all(|&v| v == 0.0));
        assert!(pack.reference_latent.data()[192..].iter().all(|&v| v == 0.0));
        assert_eq!(pack.reference_latent.narrow0(0, 1).unwrap().into_data(), frame.clone().into_data());
        assert!(matches!(
            assemble_conditioning(&Tensor::zeros([3, 4, 4]), 4, &model),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn zero_params_give_the_output_bias() {
        let (model, adapter) = small();
        let mut rng = Rng::new(1);
        let mut dit = FlowDit::init(&model, &adapter, 2, &mut rng);
        assert_eq!(dit.input_channels(), 7);
        for t in dit.params.values_mut() {
            t.data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
        let bias: Vec<f64> = (0..12).map(|i| i as f64 * 0.1 - 0.3).collect();
        dit.params.insert("head.proj.b".into(), Tensor::new([12], bias.clone()).unwrap());
        let audio = RawAudioFeatures::new(rng.gauss([3, 2])).unwrap();
        let ctx = build_audio_context(&audio, 1).unwrap();
        let z = rng.gauss([3, 3, 8, 8]);
        let pack = assemble_conditioning(&rng.gauss([3, 8, 8]), 3, &model).unwrap();
        let input = DitInput {
            z_t: &z,
            pack: &pack,
            t: 0.4,
            audio: &ctx,
            branch: Branch::Full,
        };
        let tape = dit.tape();
        let p = Bound::new(&tape, &dit.params);
        let v = dit.forward(&p, &input).unwrap().value();
        for row in v.data().chunks(12) {
            assert_eq!(row, bias.as_slice());
        }
    }
}
