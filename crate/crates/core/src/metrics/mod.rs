//! Drift, color and synchronization statistics over generated latents.

pub mod ciede;

use serde::Serialize;

pub use ciede::{ciede2000, delta_e00, srgb_to_lab};

use crate::data::{region_means, RawAudioFeatures};
use crate::error::{Error, Result};
use crate::tensor::Tensor;
use crate::window::WindowPlan;

/// Mean and standard-deviation shift of one clip relative to clip 0.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ClipDrift {
    pub clip: usize,
    pub mean_shift: f64,
    pub std_shift: f64,
}

fn clips(frames: &Tensor, clip_len: usize) -> Result<usize> {
    let f = *frames.shape().first().ok_or_else(|| Error::dim("latent_drift", "scalar input"))?;
    let n = if clip_len == 0 { 0 } else { f / clip_len };
    if n < 2 {
        return Err(Error::Config(format!(
            "{f} frames hold {n} whole clips of {clip_len}; drift needs at least 2"
        )));
    }
    Ok(n)
}

/// Per-clip `|mean_i − mean_0|` and `|std_i − std_0|` over all elements;
/// a trailing partial clip is dropped.
pub fn latent_drift(frames: &Tensor, clip_len: usize) -> Result<Vec<ClipDrift>> {
    let n = clips(frames, clip_len)?;
    let stats: Vec<(f64, f64)> = (0..n)
        .map(|i| {
            let c = frames.narrow0(i * clip_len, clip_len)?;
            Ok((c.mean(), c.variance().sqrt()))
        })
        .collect::<Result<_>>()?;
    let (m0, s0) = stats[0];
    Ok(stats
        .iter()
        .enumerate()
        .map(|(clip, &(m, s))| ClipDrift {
            clip,
            mean_shift: (m - m0).abs(),
            std_shift: (s - s0).abs(),
        })
        .collect())
}

fn frame_pixels(f: &Tensor) -> Result<(usize, usize)> {
    match *f.shape() {
        [c @ (1 | 3), h, w] => Ok((c, h * w)),
        ref s => Err(Error::dim("frame_ciede", format!("expected [1|3, H, W], got {s:?}"))),
    }
}

/// Mean CIEDE2000 over pixels of two `[C × H × W]` frames; one channel is
/// read as gray.
pub fn frame_ciede(a: &Tensor, b: &Tensor) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(Error::shapes("frame_ciede", a.shape(), b.shape()));
    }
    let (c, hw) = frame_pixels(a)?;
    let px = |t: &Tensor, i: usize| -> [f64; 3] {
        let d = t.data();
        if c == 1 {
            [d[i]; 3]
        } else {
            [d[i], d[hw + i], d[2 * hw + i]]
        }
    };
    let mut total = 0.0;
    for i in 0..hw {
        total += ciede2000(px(a, i), px(b, i))?;
    }
    Ok(total / hw as f64)
}

/// Pearson correlation; `None` when either side is constant.
pub fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len().min(y.len());
    let constant = |v: &[f64]| v[..n].iter().all(|&a| a == v[0]);
    if n == 0 || constant(x) || constant(y) {
        return None;
    }
    let n = n as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    (sxx > 0.0 && syy > 0.0).then(|| sxy / (sxx * syy).sqrt())
}

/// Correlation between the audio amplitude and the mean intensity inside
/// the lip mask, frame by frame.
pub fn sync_proxy(audio: &RawAudioFeatures, frames: &Tensor, lip_mask: &Tensor) -> Result<f64> {
    let f = frames.shape().first().copied().unwrap_or(0);
    if audio.frames() != f {
        return Err(Error::dim(
            "sync_proxy",
            format!("{} audio frames vs {f} video frames", audio.frames()),
        ));
    }
    if lip_mask.sum() == 0.0 {
        return Err(Error::Validation("lip mask is empty".into()));
    }
    let lips = region_means(frames, lip_mask)?;
    pearson(&audio.amplitude(), &lips).ok_or(Error::UndefinedCorrelation("zero variance in audio or lip intensity"))
}

/// Mean frame of frames `start .. start+len`.
pub fn mean_frame(frames: &Tensor, start: usize, len: usize) -> Result<Tensor> {
    let clip = frames.narrow0(start, len)?;
    let stride = clip.numel() / len.max(1);
    let mut out = vec![0.0; stride];
    for fr in clip.data().chunks_exact(stride) {
        out.iter_mut().zip(fr).for_each(|(o, v)| *o += v / len as f64);
    }
    Tensor::new(frames.shape()[1..].to_vec(), out)
}

/// One row of a drift report.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ClipRecord {
    pub clip: usize,
    pub mean_shift: f64,
    pub std_shift: f64,
    /// CIEDE2000 between this clip's mean frame and clip 0's, both clamped
    /// to `[0, 1]`.
    pub ciede: f64,
    /// Sync proxy within the clip; 0 when undefined.
    pub sync_r: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DriftReport {
    pub records: Vec<ClipRecord>,
    pub config: serde_json::Value,
}

pub const DRIFT_CSV_HEADER: &str = "clip,mean_shift,std_shift,ciede,sync_r";

impl DriftReport {
    pub fn build(
        frames: &Tensor,
        audio: &RawAudioFeatures,
        lip_mask: &Tensor,
        clip_len: usize,
        config: serde_json::Value,
    ) -> Result<Self> {
        let drift = latent_drift(frames, clip_len)?;
        let clamp = |t: Tensor| t.map(|v| v.clamp(0.0, 1.0));
        let first = clamp(mean_frame(frames, 0, clip_len)?);
        let mut records = Vec::with_capacity(drift.len());
        for d in drift {
            let start = d.clip * clip_len;
            let ciede = frame_ciede(&first, &clamp(mean_frame(frames, start, clip_len)?))?;
            let sync_r = match sync_proxy(
                &audio.slice(start, clip_len)?,
                &frames.narrow0(start, clip_len)?,
                lip_mask,
            ) {
                Ok(r) => r,
                Err(Error::UndefinedCorrelation(_)) => 0.0,
                Err(e) => return Err(e),
            };
            records.push(ClipRecord {
                clip: d.clip,
                mean_shift: d.mean_shift,
                std_shift: d.std_shift,
                ciede,
                sync_r,
            });
        }
        Ok(DriftReport { records, config })
    }

    pub fn final_clip(&self) -> &ClipRecord {
        self.records.last().expect("at least two clips")
    }

    /// Final-clip drift as one number: mean shift plus std shift.
    pub fn final_drift(&self) -> f64 {
        let r = self.final_clip();
        r.mean_shift + r.std_shift
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from(DRIFT_CSV_HEADER);
        s.push('\n');
        for r in &self.records {
            s.push_str(&format!("{},{},{},{},{}\n", r.clip, r.mean_shift, r.std_shift, r.ciede, r.sync_r));
        }
        s
    }
}

/// Largest RMS excess of an adjacent-frame jump around the fusion seams,
/// measured against the same jump in `reference`.
///
/// For every window after the first, the frame transitions entering,
/// inside and leaving its overlap with the previous window are checked.
pub fn seam_discontinuity(frames: &Tensor, reference: &Tensor, plan: &WindowPlan) -> Result<f64> {
    if frames.shape() != reference.shape() {
        return Err(Error::shapes("seam_discontinuity", frames.shape(), reference.shape()));
    }
    let total = frames.shape()[0];
    let stride = frames.numel() / total.max(1);
    let jump = |t: &Tensor, j: usize| -> Vec<f64> {
        let d = t.data();
        (0..stride).map(|i| d[(j + 1) * stride + i] - d[j * stride + i]).collect()
    };
    let mut worst: f64 = 0.0;
    for &(s, _) in plan.windows.iter().skip(1) {
        let lo = s.saturating_sub(1);
        let hi = (s + plan.overlap).min(total - 1);
        for j in lo..hi {
            let (g, r) = (jump(frames, j), jump(reference, j));
            let rms = (g.iter().zip(&r).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / stride as f64).sqrt();
            worst = worst.max(rms);
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn drift_of_stationary_and_ramped_sequences() {
        let base = Tensor::new([4, 1, 1, 2], vec![0.1, 0.3, 0.1, 0.3, 0.1, 0.3, 0.1, 0.3]).unwrap();
        assert!(latent_drift(&base, 1).unwrap().iter().all(|d| d.mean_shift == 0.0 && d.std_shift == 0.0));
        let mut ramp = base.clone();
        for (i, v) in ramp.data_mut().iter_mut().enumerate() {
            *v += 0.1 * (i / 2) as f64;
        }
        for d in latent_drift(&ramp, 1).unwrap() {
            assert!((d.mean_shift - 0.1 * d.clip as f64).abs() < 1e-12);
            assert!(d.std_shift < 1e-12);
        }
        assert!(matches!(latent_drift(&base, 3), Err(Error::Config(_))));
    }

    #[test]
    fn constant_frames_have_undefined_sync() {
        let audio = RawAudioFeatures::new(Tensor::new([3, 1], vec![0.1, 0.5, 0.2]).unwrap()).unwrap();
        let frames = Tensor::full([3, 1, 2, 2], 0.4);
        let lip = Tensor::ones([2, 2]);
        assert!(matches!(sync_proxy(&audio, &frames, &lip), Err(Error::UndefinedCorrelation(_))));
    }

    #[test]
    fn frame_against_itself_is_zero() {
        let f = Tensor::new([3, 1, 2], vec![0.1, 0.9, 0.5, 0.2, 0.7, 0.3]).unwrap();
        assert_eq!(frame_ciede(&f, &f).unwrap(), 0.0);
    }
}
