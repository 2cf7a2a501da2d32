//! Long-sequence sampling over overlapping windows with weighted fusion of
//! the overlaps, plus the motion-frame and hard-overwrite baselines.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightScheme {
    /// Log-shaped ramp from 0 to 1.
    #[default]
    Logarithmic,
    /// Every overlap frame weighted 0.5.
    Fixed,
    /// Evenly spaced ramp from 0 to 1.
    Uniform,
}

impl WeightScheme {
    pub fn name(self) -> &'static str {
        match self {
            WeightScheme::Logarithmic => "logarithmic",
            WeightScheme::Fixed => "fixed",
            WeightScheme::Uniform => "uniform",
        }
    }

    pub const ALL: [WeightScheme; 3] = [WeightScheme::Logarithmic, WeightScheme::Fixed, WeightScheme::Uniform];
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    #[default]
    Dwsw,
    /// Sliding windows whose overlap is overwritten by the newer window.
    PlainWindow,
    /// Sequential clips, each seeded with the tail of the previous one.
    MotionFrame,
}

impl Strategy {
    pub fn name(self) -> &'static str {
        match self {
            Strategy::Dwsw => "dwsw",
            Strategy::PlainWindow => "plain_window",
            Strategy::MotionFrame => "motion_frame",
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BufferMode {
    /// Windows read the latent buffer as updated by earlier windows of the
    /// same step.
    #[default]
    Shared,
    /// Windows read a snapshot taken at the start of each step.
    Double,
}

#[derive(Clone, Debug, PartialEq)]
pub struct WeightCurve {
    pub weights: Vec<f64>,
    pub scheme: WeightScheme,
}

fn check_overlap(m: usize) -> Result<()> {
    if m < 2 {
        return Err(Error::Config(format!("overlap must be at least 2, got {m}")));
    }
    Ok(())
}

fn linspace(m: usize) -> impl Iterator<Item = f64> {
    (0..m).map(move |i| i as f64 / (m - 1) as f64)
}

/// `log1p(u·(e − 1))` on `m` evenly spaced `u ∈ [0, 1]`, min-max normalized.
pub fn log_weights(m: usize) -> Result<WeightCurve> {
    check_overlap(m)?;
    let raw: Vec<f64> = linspace(m).map(|u| (u * (std::f64::consts::E - 1.0)).ln_1p()).collect();
    let (lo, hi) = (raw[0], raw[m - 1]);
    Ok(WeightCurve {
        weights: raw.iter().map(|w| (w - lo) / (hi - lo)).collect(),
        scheme: WeightScheme::Logarithmic,
    })
}

pub fn weight_curve(scheme: WeightScheme, m: usize) -> Result<WeightCurve> {
    check_overlap(m)?;
    match scheme {
        WeightScheme::Logarithmic => log_weights(m),
        WeightScheme::Fixed => Ok(WeightCurve {
            weights: vec![0.5; m],
            scheme,
        }),
        WeightScheme::Uniform => Ok(WeightCurve {
            weights: linspace(m).collect(),
            scheme,
        }),
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct WindowPlan {
    pub total: usize,
    pub length: usize,
    pub overlap: usize,
    /// Half-open `(start, end)` frame ranges in processing order.
    pub windows: Vec<(usize, usize)>,
}

/// Windows of `length` frames advancing by `length − overlap`; the last one
/// is cut at `total`.
pub fn make_plan(total: usize, length: usize, overlap: usize) -> Result<WindowPlan> {
    if total == 0 {
        return Err(Error::Config("window plan needs at least one frame".into()));
    }
    check_overlap(overlap)?;
    if overlap >= length {
        return Err(Error::Config(format!(
            "overlap {overlap} must be below the window length {length}"
        )));
    }
    let mut windows = Vec::new();
    let (mut s, mut e) = (0, length.min(total));
    loop {
        windows.push((s, e));
        if e >= total {
            break;
        }
        s += length - overlap;
        e = (s + length).min(total);
    }
    Ok(WindowPlan {
        total,
        length,
        overlap,
        windows,
    })
}

/// `z − (t − t_next)·v`.
pub fn euler_step(z: &Tensor, v: &Tensor, t: f64, t_next: f64) -> Result<Tensor> {
    if !(t_next < t) {
        return Err(Error::Domain(format!("euler step needs t_next < t, got {t_next} >= {t}")));
    }
    let dt = t - t_next;
    z.zip_map(v, |a, b| a - dt * b)
}

/// What the sampler tells a denoiser about the current evaluation.
#[derive(Clone, Copy, Debug)]
pub struct WindowCtx<'a> {
    pub index: usize,
    pub start: usize,
    pub end: usize,
    /// Step counter running from `T` down to 1.
    pub step: usize,
    pub t: f64,
    /// Already generated leading frames of this window, if any.
    pub known: Option<&'a Tensor>,
}

/// Predicts a velocity for one window of latents.
pub trait Denoiser {
    fn velocity(&mut self, z: &Tensor, ctx: &WindowCtx<'_>) -> Result<Tensor>;
}

impl<F> Denoiser for F
where
    F: FnMut(&Tensor, &WindowCtx<'_>) -> Result<Tensor>,
{
    fn velocity(&mut self, z: &Tensor, ctx: &WindowCtx<'_>) -> Result<Tensor> {
        self(z, ctx)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SampleOptions {
    pub steps: usize,
    pub scheme: WeightScheme,
    pub buffer: BufferMode,
    pub skip_first_step_fusion: bool,
}

impl Default for SampleOptions {
    fn default() -> Self {
        SampleOptions {
            steps: 50,
            scheme: WeightScheme::Logarithmic,
            buffer: BufferMode::Shared,
            skip_first_step_fusion: true,
        }
    }
}

fn check_len(z: &Tensor, plan: &WindowPlan) -> Result<()> {
    if z.shape().first() != Some(&plan.total) {
        return Err(Error::Config(format!(
            "latents of shape {:?} for a plan over {} frames",
            z.shape(),
            plan.total
        )));
    }
    Ok(())
}

/// Overwrites frames `s .. s+m` of `out` (a window starting at `s`) with
/// `w·out + (1 − w)·prev`, where `prev` holds the same global frames.
fn fuse(out: &mut Tensor, prev: &Tensor, weights: &[f64]) {
    let stride = out.numel() / out.shape()[0];
    for (j, &w) in weights.iter().enumerate() {
        let cur = &mut out.data_mut()[j * stride..(j + 1) * stride];
        let old = &prev.data()[j * stride..(j + 1) * stride];
        cur.iter_mut().zip(old).for_each(|(c, p)| *c = w * *c + (1.0 - w) * p);
    }
}

fn windowed(den: &mut dyn Denoiser, z_init: &Tensor, plan: &WindowPlan, opts: &SampleOptions, weights: &[f64]) -> Result<Tensor> {
    check_len(z_init, plan)?;
    let steps = opts.steps;
    if steps == 0 {
        return Err(Error::Config("sampler needs at least one step".into()));
    }
    let m = plan.overlap;
    let mut z = z_init.clone();
    for k in (1..=steps).rev() {
        let (t, t_next) = (k as f64 / steps as f64, (k - 1) as f64 / steps as f64);
        let snapshot = (opts.buffer == BufferMode::Double).then(|| z.clone());
        for (index, &(s, e)) in plan.windows.iter().enumerate() {
            let input = snapshot.as_ref().unwrap_or(&z).narrow0(s, e - s)?;
            let ctx = WindowCtx {
                index,
                start: s,
                end: e,
                step: k,
                t,
                known: None,
            };
            let v = den.velocity(&input, &ctx)?;
            let mut out = euler_step(&input, &v, t, t_next)?;
            let skip = s == 0 || (k == steps && opts.skip_first_step_fusion);
            if !skip {
                // The previous window ended at s + m, so the buffer already
                // holds its output for frames s .. s+m.
                fuse(&mut out, &z.narrow0(s, m)?, weights);
            }
            z.assign0(s, &out)?;
        }
    }
    Ok(z)
}

/// Denoises `z_init` (pure noise over the whole plan) from t = 1 to 0.
pub fn dwsw_sample(den: &mut dyn Denoiser, z_init: &Tensor, plan: &WindowPlan, opts: &SampleOptions) -> Result<Tensor> {
    let curve = weight_curve(opts.scheme, plan.overlap)?;
    windowed(den, z_init, plan, opts, &curve.weights)
}

fn motion_frame(den: &mut dyn Denoiser, z_init: &Tensor, plan: &WindowPlan, opts: &SampleOptions) -> Result<Tensor> {
    check_len(z_init, plan)?;
    let steps = opts.steps;
    let m = plan.overlap;
    let mut out = z_init.clone();
    for (index, &(s, e)) in plan.windows.iter().enumerate() {
        let known = if index == 0 { None } else { Some(out.narrow0(s, m)?) };
        let mut clip = z_init.narrow0(s, e - s)?;
        for k in (1..=steps).rev() {
            let (t, t_next) = (k as f64 / steps as f64, (k - 1) as f64 / steps as f64);
            let ctx = WindowCtx {
                index,
                start: s,
                end: e,
                step: k,
                t,
                known: known.as_ref(),
            };
            let v = den.velocity(&clip, &ctx)?;
            clip = euler_step(&clip, &v, t, t_next)?;
        }
        match known {
            None => out.assign0(s, &clip)?,
            Some(_) => out.assign0(s + m, &clip.narrow0(m, e - s - m)?)?,
        }
    }
    Ok(out)
}

/// Runs any strategy; `PlainWindow` ignores `opts.scheme`.
pub fn sample(
    strategy: Strategy,
    den: &mut dyn Denoiser,
    z_init: &Tensor,
    plan: &WindowPlan,
    opts: &SampleOptions,
) -> Result<Tensor> {
    match strategy {
        Strategy::Dwsw => dwsw_sample(den, z_init, plan, opts),
        Strategy::PlainWindow => windowed(den, z_init, plan, opts, &vec![1.0; plan.overlap]),
        Strategy::MotionFrame => motion_frame(den, z_init, plan, opts),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn log_curve_small_cases() {
        assert_eq!(log_weights(2).unwrap().weights, vec![0.0, 1.0]);
        let w = log_weights(3).unwrap().weights;
        let mid = (1.0 + (std::f64::consts::E - 1.0) / 2.0).ln();
        assert!((w[1] - mid).abs() < 1e-15);
        assert!(matches!(log_weights(1), Err(Error::Config(_))));
    }

    #[test]
    fn other_schemes() {
        assert_eq!(weight_curve(WeightScheme::Fixed, 3).unwrap().weights, vec![0.5; 3]);
        assert_eq!(weight_curve(WeightScheme::Uniform, 3).unwrap().weights, vec![0.0, 0.5, 1.0]);
    }

    #[test]
    fn plans_by_hand() {
        assert_eq!(make_plan(8, 4, 2).unwrap().windows, vec![(0, 4), (2, 6), (4, 8)]);
        assert_eq!(make_plan(9, 4, 2).unwrap().windows, vec![(0, 4), (2, 6), (4, 8), (6, 9)]);
        assert_eq!(make_plan(5, 8, 2).unwrap().windows, vec![(0, 5)]);
        assert!(make_plan(8, 4, 4).is_err());
        assert!(make_plan(8, 4, 1).is_err());
    }

    #[test]
    fn euler_cases() {
        let z = Tensor::new([2], vec![1.0, 2.0]).unwrap();
        assert_eq!(euler_step(&z, &Tensor::zeros([2]), 1.0, 0.5).unwrap(), z);
        assert!(euler_step(&z, &z, 0.5, 0.5).is_err());
        let v = Tensor::new([2], vec![0.3, -0.7]).unwrap();
        let once = euler_step(&z, &v, 1.0, 0.0).unwrap();
        let twice = euler_step(&euler_step(&z, &v, 1.0, 0.5).unwrap(), &v, 0.5, 0.0).unwrap();
        assert!(once.max_abs_diff(&twice).unwrap() < 1e-15);
    }
}
