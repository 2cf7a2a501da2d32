//! Synthetic talking-face scenes.
//!
//! Each scene is a per-seed identity (background texture plus a face
//! rectangle) whose mouth rectangle brightens linearly with the audio
//! amplitude of the same frame. A faint stripe pattern drifts slowly across
//! the background so consecutive frames are not trivially equal.

use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::tnsr::{read_tensor, write_tensor};
use crate::error::{Error, Result};
use crate::tensor::{Rng, Tensor};

/// Per-channel brightening of the mouth at full amplitude.
const MOUTH_GAIN: [f64; 3] = [0.45, 0.25, 0.25];
const STRIPE_AMPLITUDE: f64 = 0.06;
/// Frames per stripe phase cycle.
const STRIPE_PERIOD: f64 = 32.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneConfig {
    pub frames: usize,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub audio_dim: usize,
    /// Multiplies the amplitude envelope; 0 gives a silent track.
    pub amplitude_scale: f64,
}

impl SceneConfig {
    pub fn new(frames: usize, height: usize, width: usize, audio_dim: usize) -> Self {
        SceneConfig {
            frames,
            channels: 3,
            height,
            width,
            audio_dim,
            amplitude_scale: 1.0,
        }
    }
}

/// Raw per-frame audio features; column 0 is the amplitude.
#[derive(Clone, Debug, PartialEq)]
pub struct RawAudioFeatures {
    pub values: Tensor,
}

impl RawAudioFeatures {
    pub fn new(values: Tensor) -> Result<Self> {
        let (f, d) = values.dims2()?;
        if f == 0 || d == 0 {
            return Err(Error::Validation(format!("audio features must be non-empty, got [{f}, {d}]")));
        }
        if !values.all_finite() {
            return Err(Error::Validation("audio features must be finite".into()));
        }
        Ok(RawAudioFeatures { values })
    }

    pub fn frames(&self) -> usize {
        self.values.shape()[0]
    }

    pub fn dim(&self) -> usize {
        self.values.shape()[1]
    }

    pub fn amplitude(&self) -> Vec<f64> {
        let d = self.dim();
        self.values.data().iter().step_by(d).copied().collect()
    }

    pub fn slice(&self, start: usize, len: usize) -> Result<Self> {
        Ok(RawAudioFeatures {
            values: self.values.narrow0(start, len)?,
        })
    }
}

/// Axis-aligned pixel rectangle `[top, bottom) × [left, right)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Rect {
    pub top: usize,
    pub bottom: usize,
    pub left: usize,
    pub right: usize,
}

impl Rect {
    pub fn contains(&self, y: usize, x: usize) -> bool {
        (self.top..self.bottom).contains(&y) && (self.left..self.right).contains(&x)
    }

    fn mask(&self, h: usize, w: usize) -> Tensor {
        let data = (0..h * w)
            .map(|i| f64::from(u8::from(self.contains(i / w, i % w))))
            .collect();
        Tensor::new([h, w], data).expect("h*w values")
    }
}

/// Face and lip rectangles for a frame size.
pub fn layout(height: usize, width: usize) -> Result<(Rect, Rect)> {
    if height < 8 || width < 8 {
        return Err(Error::Config(format!(
            "scene of {height}x{width} cannot contain face and lip regions (minimum 8x8)"
        )));
    }
    let face = Rect {
        top: height / 4,
        bottom: height / 4 + height / 2,
        left: width / 4,
        right: width / 4 + width / 2,
    };
    let (fh, fw) = (face.bottom - face.top, face.right - face.left);
    let lip = Rect {
        top: face.top + (5 * fh) / 8,
        bottom: face.top + (7 * fh) / 8,
        left: face.left + fw / 4,
        right: face.left + (3 * fw) / 4,
    };
    if lip.top >= lip.bottom || lip.left >= lip.right {
        return Err(Error::Config(format!("lip region is empty at {height}x{width}")));
    }
    Ok((face, lip))
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticScene {
    pub seed: u64,
    pub reference_frame: Tensor,
    pub video: Tensor,
    pub audio: RawAudioFeatures,
    pub face_mask: Tensor,
    pub lip_mask: Tensor,
}

impl SyntheticScene {
    pub fn frames(&self) -> usize {
        self.video.shape()[0]
    }
}

struct Identity {
    background: Vec<f64>,
    skin: Vec<f64>,
    texture: [(f64, f64, f64); 2],
    stripe_phase: f64,
}

fn identity(rng: &mut Rng, channels: usize) -> Identity {
    let mut color = |lo: f64, hi: f64| -> Vec<f64> {
        (0..channels).map(|_| lo + (hi - lo) * rng.uniform()).collect()
    };
    let background = color(0.2, 0.8);
    let skin = color(0.35, 0.75);
    let mut wave = || {
        (
            0.5 + 1.5 * rng.uniform(),
            0.5 + 1.5 * rng.uniform(),
            2.0 * PI * rng.uniform(),
        )
    };
    let texture = [wave(), wave()];
    let stripe_phase = 2.0 * PI * rng.uniform();
    Identity {
        background,
        skin,
        texture,
        stripe_phase,
    }
}

fn amplitude_track(rng: &mut Rng, frames: usize, scale: f64) -> Vec<f64> {
    let waves: Vec<(f64, f64, f64)> = [1.0, 0.6, 0.3]
        .into_iter()
        .map(|w| (w, 1.0 / 12.0 + (1.0 / 4.0 - 1.0 / 12.0) * rng.uniform(), 2.0 * PI * rng.uniform()))
        .collect();
    (0..frames)
        .map(|i| {
            let s: f64 = waves
                .iter()
                .map(|(w, f, p)| w * (2.0 * PI * f * i as f64 + p).sin())
                .sum();
            scale * (0.5 + 0.5 * (1.5 * s).tanh())
        })
        .collect()
}

/// Generates one scene. Draws from `rng` in a fixed order: identity, then
/// amplitude envelope, then harmonic phases.
pub fn generate_scene(rng: &mut Rng, cfg: &SceneConfig) -> Result<SyntheticScene> {
    let SceneConfig {
        frames,
        channels,
        height: h,
        width: w,
        audio_dim,
        amplitude_scale,
    } = *cfg;
    if frames == 0 {
        return Err(Error::Config("scene needs at least one frame".into()));
    }
    if !matches!(channels, 1 | 3) {
        return Err(Error::Config(format!("scene channels must be 1 or 3, got {channels}")));
    }
    if audio_dim == 0 {
        return Err(Error::Config("audio_dim must be positive".into()));
    }
    if !(0.0..=1.0).contains(&amplitude_scale) {
        return Err(Error::Config(format!("amplitude_scale must lie in [0, 1], got {amplitude_scale}")));
    }
    let (face, lip) = layout(h, w)?;
    let seed = rng.seed();
    let id = identity(rng, channels);
    let amplitude = amplitude_track(rng, frames, amplitude_scale);
    let pitch = 0.05 + 0.1 * rng.uniform();
    let phases: Vec<f64> = (0..audio_dim).map(|_| 2.0 * PI * rng.uniform()).collect();

    let plane = h * w;
    let mut video = Tensor::zeros([frames, channels, h, w]);
    for (f, frame) in video.data_mut().chunks_exact_mut(channels * plane).enumerate() {
        let shift = 2.0 * PI * f as f64 / STRIPE_PERIOD;
        for y in 0..h {
            for x in 0..w {
                let (yf, xf) = (y as f64 / h as f64, x as f64 / w as f64);
                let tex: f64 = id
                    .texture
                    .iter()
                    .map(|(fy, fx, p)| 0.05 * (2.0 * PI * (fy * yf + fx * xf) + p).sin())
                    .sum();
                for c in 0..channels {
                    let v = if lip.contains(y, x) {
                        0.5 * id.skin[c] + MOUTH_GAIN[c % 3] * amplitude[f]
                    } else if face.contains(y, x) {
                        id.skin[c] + 0.5 * tex
                    } else {
                        let stripe = STRIPE_AMPLITUDE
                            * (2.0 * PI * (xf + yf) * 2.0 - shift + id.stripe_phase).sin();
                        id.background[c] + tex + stripe
                    };
                    frame[c * plane + y * w + x] = v.clamp(0.0, 1.0);
                }
            }
        }
    }

    let mut audio = Tensor::zeros([frames, audio_dim]);
    for (i, row) in audio.data_mut().chunks_exact_mut(audio_dim).enumerate() {
        row[0] = amplitude[i];
        for (j, v) in row.iter_mut().enumerate().skip(1) {
            *v = amplitude[i] * (2.0 * PI * pitch * j as f64 * i as f64 + phases[j]).sin();
        }
    }

    Ok(SyntheticScene {
        seed,
        reference_frame: video.narrow0(0, 1)?.reshape([channels, h, w])?,
        video,
        audio: RawAudioFeatures::new(audio)?,
        face_mask: face.mask(h, w),
        lip_mask: lip.mask(h, w),
    })
}

/// Mean of each frame's pixels inside `mask` (averaged over channels).
pub fn region_means(video: &Tensor, mask: &Tensor) -> Result<Vec<f64>> {
    let [f, c, h, w] = video.shape() else {
        return Err(Error::dim("region_means", format!("expected [F, C, H, W], got {:?}", video.shape())));
    };
    if mask.shape() != [*h, *w] {
        return Err(Error::shapes("region_means", mask.shape(), &[*h, *w]));
    }
    let count = mask.sum();
    if count == 0.0 {
        return Err(Error::Validation("mask selects no pixels".into()));
    }
    let plane = h * w;
    Ok(video
        .data()
        .chunks_exact(c * plane)
        .take(*f)
        .map(|frame| {
            frame
                .chunks_exact(plane)
                .map(|p| p.iter().zip(mask.data()).map(|(v, m)| v * m).sum::<f64>())
                .sum::<f64>()
                / (count * *c as f64)
        })
        .collect())
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SceneManifest {
    pub seed: u64,
    pub frames: usize,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub audio_dim: usize,
    pub files: SceneFiles,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SceneFiles {
    pub reference: PathBuf,
    pub video: PathBuf,
    pub audio: PathBuf,
    pub face_mask: PathBuf,
    pub lip_mask: PathBuf,
}

/// Writes a scene as TNSR tensors plus `scene.json` into `dir`.
pub fn save_scene(dir: &Path, scene: &SyntheticScene) -> Result<SceneManifest> {
    fs::create_dir_all(dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
    let files = SceneFiles {
        reference: "reference.tnsr".into(),
        video: "video.tnsr".into(),
        audio: "audio.tnsr".into(),
        face_mask: "face_mask.tnsr".into(),
        lip_mask: "lip_mask.tnsr".into(),
    };
    write_tensor(dir.join(&files.reference), &scene.reference_frame)?;
    write_tensor(dir.join(&files.video), &scene.video)?;
    write_tensor(dir.join(&files.audio), &scene.audio.values)?;
    write_tensor(dir.join(&files.face_mask), &scene.face_mask)?;
    write_tensor(dir.join(&files.lip_mask), &scene.lip_mask)?;
    let [frames, channels, height, width] = *scene.video.shape() else {
        unreachable!("scene video is rank 4")
    };
    let manifest = SceneManifest {
        seed: scene.seed,
        frames,
        channels,
        height,
        width,
        audio_dim: scene.audio.dim(),
        files,
    };
    let json = serde_json::to_string_pretty(&manifest)?;
    fs::write(dir.join("scene.json"), json).map_err(|e| Error::io("writing scene.json", e))?;
    Ok(manifest)
}

pub fn load_scene(dir: &Path) -> Result<SyntheticScene> {
    let path = dir.join("scene.json");
    let text = fs::read_to_string(&path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    let m: SceneManifest = serde_json::from_str(&text)?;
    Ok(SyntheticScene {
        seed: m.seed,
        reference_frame: read_tensor(dir.join(&m.files.reference))?,
        video: read_tensor(dir.join(&m.files.video))?,
        audio: RawAudioFeatures::new(read_tensor(dir.join(&m.files.audio))?)?,
        face_mask: read_tensor(dir.join(&m.files.face_mask))?,
        lip_mask: read_tensor(dir.join(&m.files.lip_mask))?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pearson(a: &[f64], b: &[f64]) -> f64 {
        let n = a.len() as f64;
        let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
        let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
        let va: f64 = a.iter().map(|x| (x - ma) * (x - ma)).sum();
        let vb: f64 = b.iter().map(|y| (y - mb) * (y - mb)).sum();
        cov / (va * vb).sqrt()
    }

    #[test]
    fn mouth_tracks_amplitude() {
        let scene = generate_scene(&mut Rng::new(5), &SceneConfig::new(200, 16, 16, 8)).unwrap();
        let means = region_means(&scene.video, &scene.lip_mask).unwrap();
        let amp = scene.audio.amplitude();
        assert!(pearson(&amp, &means) >= 0.99);
        // strictly increasing: sort by amplitude, means follow
        let mut pairs: Vec<_> = amp.iter().zip(&means).collect();
        pairs.sort_by(|a, b| a.0.total_cmp(b.0));
        for w in pairs.windows(2) {
            if w[1].0 > w[0].0 {
                assert!(w[1].1 > w[0].1);
            }
        }
    }

    #[test]
    fn silent_scene_has_static_mouth() {
        let cfg = SceneConfig {
            amplitude_scale: 0.0,
            ..SceneConfig::new(12, 16, 16, 4)
        };
        let scene = generate_scene(&mut Rng::new(2), &cfg).unwrap();
        let means = region_means(&scene.video, &scene.lip_mask).unwrap();
        assert!(means.iter().all(|&m| m == means[0]));
    }

    #[test]
    fn structure_invariants() {
        let scene = generate_scene(&mut Rng::new(9), &SceneConfig::new(6, 8, 10, 3)).unwrap();
        assert_eq!(scene.video.narrow0(0, 1).unwrap().data(), scene.reference_frame.data());
        assert_eq!(scene.audio.frames(), scene.frames());
        for (l, f) in scene.lip_mask.data().iter().zip(scene.face_mask.data()) {
            assert!(*l == 0.0 || *l == 1.0);
            assert!(*l <= *f);
        }
        assert!(scene.lip_mask.sum() > 0.0);
    }

    #[test]
    fn deterministic_per_seed() {
        let cfg = SceneConfig::new(10, 16, 16, 4);
        let a = generate_scene(&mut Rng::new(4), &cfg).unwrap();
        let b = generate_scene(&mut Rng::new(4), &cfg).unwrap();
        assert_eq!(a, b);
        let c = generate_scene(&mut Rng::new(5), &cfg).unwrap();
        assert_ne!(a.video, c.video);
    }

    #[test]
    fn too_small_is_config_error() {
        let err = generate_scene(&mut Rng::new(1), &SceneConfig::new(4, 7, 16, 2)).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }
}
