//! Combining condition branches into one guided velocity.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Branch, DitInput, FlowDit};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GuidanceMode {
    /// Three branches: full, null audio, no refined-audio injection.
    #[default]
    Native,
    /// Conditional and null-audio branches.
    Cfg,
    /// The full branch alone.
    Off,
}

impl GuidanceMode {
    pub fn name(self) -> &'static str {
        match self {
            GuidanceMode::Native => "native",
            GuidanceMode::Cfg => "cfg",
            GuidanceMode::Off => "off",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GuidanceConfig {
    pub mode: GuidanceMode,
    pub alpha: f64,
    pub beta: f64,
    pub cfg_scale: f64,
}

impl Default for GuidanceConfig {
    fn default() -> Self {
        GuidanceConfig {
            mode: GuidanceMode::Native,
            alpha: 4.5,
            beta: 3.0,
            cfg_scale: 5.5,
        }
    }
}

impl GuidanceConfig {
    pub fn off() -> Self {
        GuidanceConfig {
            mode: GuidanceMode::Off,
            ..Self::default()
        }
    }

    pub fn with_mode(self, mode: GuidanceMode) -> Self {
        GuidanceConfig { mode, ..self }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BranchSet {
    pub d_full: Tensor,
    pub d_no_audio: Tensor,
    pub d_no_refined: Tensor,
}

/// `(1 + α + β)·d_full − α·d_no_audio − β·d_no_refined`.
pub fn native_combine(b: &BranchSet, alpha: f64, beta: f64) -> Result<Tensor> {
    let s = b.d_full.shape();
    for other in [&b.d_no_audio, &b.d_no_refined] {
        if other.shape() != s {
            return Err(Error::shapes("guidance_combine", s, other.shape()));
        }
    }
    let c = 1.0 + alpha + beta;
    let data = b
        .d_full
        .data()
        .iter()
        .zip(b.d_no_audio.data())
        .zip(b.d_no_refined.data())
        .map(|((f, a), r)| c * f - alpha * a - beta * r)
        .collect();
    Tensor::new(s.to_vec(), data)
}

pub fn guidance_combine(b: &BranchSet, cfg: &GuidanceConfig) -> Result<Tensor> {
    if cfg.mode != GuidanceMode::Native {
        return Err(Error::Config(format!(
            "guidance_combine needs native mode, got {}",
            cfg.mode.name()
        )));
    }
    native_combine(b, cfg.alpha, cfg.beta)
}

/// `d_uncond + scale·(d_cond − d_uncond)`.
pub fn cfg_combine(d_cond: &Tensor, d_uncond: &Tensor, scale: f64) -> Result<Tensor> {
    d_cond.zip_map(d_uncond, |c, u| u + scale * (c - u))
}

/// Evaluates the three branches used by native guidance.
pub fn evaluate_branches(model: &FlowDit, input: &DitInput<'_>) -> Result<BranchSet> {
    let run = |branch| model.velocity(&DitInput { branch, ..*input });
    Ok(BranchSet {
        d_full: run(Branch::Full)?,
        d_no_audio: run(Branch::NoAudio)?,
        d_no_refined: run(Branch::NoRefined)?,
    })
}

/// Velocity after applying the configured guidance; `input.branch` is ignored.
pub fn guided_velocity(model: &FlowDit, input: &DitInput<'_>, cfg: &GuidanceConfig) -> Result<Tensor> {
    let run = |branch| model.velocity(&DitInput { branch, ..*input });
    match cfg.mode {
        GuidanceMode::Off => run(Branch::Full),
        GuidanceMode::Cfg => cfg_combine(&run(Branch::Full)?, &run(Branch::NoAudio)?, cfg.cfg_scale),
        GuidanceMode::Native => guidance_combine(&evaluate_branches(model, input)?, cfg),
    }
}
