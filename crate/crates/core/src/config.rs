//! Experiment configuration: one JSON document, every default in one place.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::adapter::AdapterVariant;
use crate::error::{Error, Result};
use crate::guidance::{GuidanceConfig, GuidanceMode};
use crate::tensor::{AdamConfig, Precision, Tensor};
use crate::window::{BufferMode, Strategy, WeightScheme};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Token width D.
    pub dim: usize,
    pub blocks: usize,
    pub heads: usize,
    /// Square patch side in latent pixels.
    pub patch: usize,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    /// Hidden width of each feed-forward layer as a multiple of `dim`.
    pub ffn_mult: usize,
    pub text_tokens: usize,
    /// Latent frame `f` attends to audio frames `f - r ..= f + r`.
    pub audio_radius: usize,
    pub ln_eps: f64,
    pub precision: Precision,
    /// Frames enter the model as `(x - latent_shift) * latent_scale`.
    pub latent_shift: f64,
    pub latent_scale: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            dim: 64,
            blocks: 4,
            heads: 1,
            patch: 4,
            channels: 3,
            height: 16,
            width: 16,
            ffn_mult: 2,
            text_tokens: 4,
            audio_radius: 1,
            ln_eps: 1e-6,
            precision: Precision::F64,
            latent_shift: 0.5,
            latent_scale: 2.0,
        }
    }
}

impl ModelConfig {
    pub fn tokens_per_frame(&self) -> usize {
        (self.height / self.patch) * (self.width / self.patch)
    }

    /// Frame values to model space.
    pub fn encode(&self, x: &Tensor) -> Tensor {
        let (shift, scale) = (self.latent_shift, self.latent_scale);
        x.map(|v| (v - shift) * scale)
    }

    /// Model space back to frame values.
    pub fn decode(&self, z: &Tensor) -> Tensor {
        let (shift, scale) = (self.latent_shift, self.latent_scale);
        z.map(|v| v / scale + shift)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdapterConfig {
    /// Audio context radius k; each frame sees `2k + 1` frames.
    pub context: usize,
    pub blocks: usize,
    pub variant: AdapterVariant,
}

impl Default for AdapterConfig {
    fn default() -> Self {
        AdapterConfig {
            context: 2,
            blocks: 2,
            variant: AdapterVariant::Full,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub scenes: usize,
    pub scene_frames: usize,
    /// Frames per training window.
    pub window_frames: usize,
    pub audio_dim: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            scenes: 8,
            scene_frames: 64,
            window_frames: 16,
            audio_dim: 8,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub steps: u64,
    pub adam: AdamConfig,
    /// Probability of swapping in the null audio token.
    pub p_drop: f64,
    /// Probability of skipping the refined-audio injection.
    pub p_drop_refined: f64,
    pub divergence_threshold: f64,
    pub val_samples: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: 2000,
            adam: AdamConfig {
                lr: 2e-3,
                ..AdamConfig::default()
            },
            p_drop: 0.1,
            p_drop_refined: 0.1,
            divergence_threshold: 1e6,
            val_samples: 16,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WindowConfig {
    /// Total latent frames L of a long rollout.
    pub total: usize,
    pub length: usize,
    pub overlap: usize,
    pub scheme: WeightScheme,
    pub strategy: Strategy,
    pub buffer: BufferMode,
    /// Keep the fusion skip on the first (t = T) step.
    pub skip_first_step_fusion: bool,
}

impl Default for WindowConfig {
    fn default() -> Self {
        WindowConfig {
            total: 256,
            length: 16,
            overlap: 4,
            scheme: WeightScheme::Logarithmic,
            strategy: Strategy::Dwsw,
            buffer: BufferMode::Shared,
            skip_first_step_fusion: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerConfig {
    pub steps: usize,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig { steps: 50 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Clip granularity for drift reports; `None` means the window length.
    pub clip_len: Option<usize>,
    /// Number of evaluation seeds per ablation cell.
    pub seeds: usize,
    pub dump_frames: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            clip_len: None,
            seeds: 1,
            dump_frames: false,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationModel {
    /// Checkpoints produced by `train`, one per adapter variant.
    #[default]
    Trained,
    /// An analytic denoiser that needs no checkpoint.
    Stub,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationConfig {
    pub model: AblationModel,
    pub adapter_variants: Vec<AdapterVariant>,
    pub guidance_modes: Vec<GuidanceMode>,
    pub schemes: Vec<WeightScheme>,
    pub strategies: Vec<Strategy>,
}

impl Default for AblationConfig {
    fn default() -> Self {
        AblationConfig {
            model: AblationModel::Trained,
            adapter_variants: vec![AdapterVariant::Full, AdapterVariant::Off],
            guidance_modes: vec![GuidanceMode::Native, GuidanceMode::Cfg, GuidanceMode::Off],
            schemes: vec![WeightScheme::Logarithmic],
            strategies: vec![Strategy::Dwsw],
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub model: ModelConfig,
    pub adapter: AdapterConfig,
    pub data: DataConfig,
    pub train: TrainConfig,
    pub guidance: GuidanceConfig,
    pub window: WindowConfig,
    pub sampler: SamplerConfig,
    pub eval: EvalConfig,
    pub ablation: AblationConfig,
}

/// One failed check, addressed by its dotted JSON path.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FieldError {
    pub field: String,
    pub message: String,
}

impl std::fmt::Display for FieldError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

struct Checks(Vec<FieldError>);

impl Checks {
    fn require(&mut self, ok: bool, field: &str, message: impl Into<String>) {
        if !ok {
            self.0.push(FieldError {
                field: field.to_string(),
                message: message.into(),
            });
        }
    }

    fn unit(&mut self, v: f64, field: &str) {
        self.require((0.0..=1.0).contains(&v), field, format!("must lie in [0, 1], got {v}"));
    }

    fn non_negative(&mut self, v: f64, field: &str) {
        self.require(v.is_finite() && v >= 0.0, field, format!("must be finite and >= 0, got {v}"));
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::io(format!("reading config {}", path.display()), e))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Applies `LFF_SEED` when it is set to an integer.
    pub fn apply_env(&mut self) -> Result<()> {
        if let Ok(v) = std::env::var("LFF_SEED") {
            self.seed = v
                .trim()
                .parse()
                .map_err(|_| Error::Config(format!("LFF_SEED is not an unsigned integer: {v:?}")))?;
        }
        Ok(())
    }

    pub fn clip_len(&self) -> usize {
        self.eval.clip_len.unwrap_or(self.window.length)
    }

    /// Every check that applies, collected rather than stopping at the first.
    pub fn validate(&self) -> std::result::Result<(), Vec<FieldError>> {
        let mut c = Checks(Vec::new());
        let m = &self.model;
        c.require(m.dim > 0, "model.dim", "must be positive");
        c.require(m.dim % 2 == 0, "model.dim", "must be even for sinusoidal features");
        c.require(m.blocks > 0, "model.blocks", "must be positive");
        c.require(
            m.heads > 0 && m.dim % m.heads.max(1) == 0,
            "model.heads",
            format!("must be positive and divide model.dim = {}", m.dim),
        );
        c.require(m.patch > 0, "model.patch", "must be positive");
        c.require(
            m.patch > 0 && m.height % m.patch == 0 && m.width % m.patch == 0,
            "model.patch",
            format!("must divide height {} and width {}", m.height, m.width),
        );
        c.require(
            m.channels == 1 || m.channels == 3,
            "model.channels",
            format!("must be 1 or 3, got {}", m.channels),
        );
        c.require(m.height >= 8, "model.height", "must be at least 8");
        c.require(m.width >= 8, "model.width", "must be at least 8");
        c.require(m.ffn_mult > 0, "model.ffn_mult", "must be positive");
        c.require(m.text_tokens > 0, "model.text_tokens", "must be positive");
        c.require(m.ln_eps > 0.0 && m.ln_eps.is_finite(), "model.ln_eps", "must be positive");
        c.require(m.latent_shift.is_finite(), "model.latent_shift", "must be finite");
        c.require(
            m.latent_scale > 0.0 && m.latent_scale.is_finite(),
            "model.latent_scale",
            "must be positive",
        );

        let a = &self.adapter;
        c.require(a.blocks > 0, "adapter.blocks", "must be positive");
        c.require(
            a.context < self.data.window_frames,
            "adapter.context",
            format!("must be below data.window_frames = {}", self.data.window_frames),
        );

        let d = &self.data;
        c.require(d.scenes > 0, "data.scenes", "must be positive");
        c.require(d.audio_dim > 0, "data.audio_dim", "must be positive");
        c.require(d.window_frames > 0, "data.window_frames", "must be positive");
        c.require(
            d.window_frames <= d.scene_frames,
            "data.window_frames",
            format!("must not exceed data.scene_frames = {}", d.scene_frames),
        );

        let t = &self.train;
        c.non_negative(t.adam.lr, "train.adam.lr");
        c.require((0.0..1.0).contains(&t.adam.beta1), "train.adam.beta1", "must lie in [0, 1)");
        c.require((0.0..1.0).contains(&t.adam.beta2), "train.adam.beta2", "must lie in [0, 1)");
        c.require(t.adam.eps > 0.0, "train.adam.eps", "must be positive");
        c.unit(t.p_drop, "train.p_drop");
        c.unit(t.p_drop_refined, "train.p_drop_refined");
        c.require(
            t.p_drop + t.p_drop_refined <= 1.0,
            "train.p_drop_refined",
            "train.p_drop + train.p_drop_refined must not exceed 1",
        );
        c.require(t.divergence_threshold > 0.0, "train.divergence_threshold", "must be positive");
        c.require(t.val_samples > 0, "train.val_samples", "must be positive");

        let g = &self.guidance;
        c.non_negative(g.alpha, "guidance.alpha");
        c.non_negative(g.beta, "guidance.beta");
        c.require(g.cfg_scale.is_finite(), "guidance.cfg_scale", "must be finite");

        let w = &self.window;
        c.require(w.total > 0, "window.total", "must be positive");
        c.require(w.overlap >= 2, "window.overlap", "must be at least 2");
        c.require(
            w.overlap < w.length,
            "window.overlap",
            format!("must be below window.length = {}", w.length),
        );
        c.require(
            a.context < w.total,
            "adapter.context",
            format!("must be below window.total = {}", w.total),
        );
        c.require(self.sampler.steps > 0, "sampler.steps", "must be positive");
        c.require(self.clip_len() > 0, "eval.clip_len", "must be positive");
        c.require(self.eval.seeds > 0, "eval.seeds", "must be positive");
        c.require(
            !self.ablation.adapter_variants.is_empty(),
            "ablation.adapter_variants",
            "must not be empty",
        );
        c.require(!self.ablation.guidance_modes.is_empty(), "ablation.guidance_modes", "must not be empty");
        c.require(!self.ablation.schemes.is_empty(), "ablation.schemes", "must not be empty");
        c.require(!self.ablation.strategies.is_empty(), "ablation.strategies", "must not be empty");

        if c.0.is_empty() {
            Ok(())
        } else {
            Err(c.0)
        }
    }
}
