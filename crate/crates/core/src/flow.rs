//! Rectified-flow interpolation, its velocity target and the masked loss.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// `(1 − t)·x0 + t·noise`.
pub fn flow_forward(x0: &Tensor, noise: &Tensor, t: f64) -> Result<Tensor> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::Domain(format!("flow time must lie in [0, 1], got {t}")));
    }
    x0.zip_map(noise, |a, n| (1.0 - t) * a + t * n)
}

/// `noise − x0`, the time derivative of [`flow_forward`].
pub fn velocity_target(x0: &Tensor, noise: &Tensor) -> Result<Tensor> {
    noise.sub(x0)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossBranch {
    /// Whole frame, with face and lip regions up-weighted.
    Combined,
    Face,
    Lip,
}

impl LossBranch {
    pub fn name(self) -> &'static str {
        match self {
            LossBranch::Combined => "combined",
            LossBranch::Face => "face",
            LossBranch::Lip => "lip",
        }
    }
}

/// Branch picked by the uniform draw `q`.
pub fn loss_branch(q: f64) -> Result<LossBranch> {
    match q {
        q if !(0.0..=1.0).contains(&q) => Err(Error::Domain(format!("q must lie in [0, 1], got {q}"))),
        q if q >= 0.5 => Ok(LossBranch::Lip),
        q if q >= 0.4 => Ok(LossBranch::Face),
        _ => Ok(LossBranch::Combined),
    }
}

fn check_binary(mask: &Tensor, name: &str) -> Result<()> {
    if mask.data().iter().any(|&v| v != 0.0 && v != 1.0) {
        return Err(Error::Validation(format!("{name} must be binary")));
    }
    Ok(())
}

/// Per-element squared weights for `[F × C × H × W]` latents.
///
/// The mask multiplies the residual before it is squared, so a pixel with
/// weight `w` contributes `w²` times its squared error.
pub fn loss_weights(
    branch: LossBranch,
    face: &Tensor,
    lip: &Tensor,
    frames: usize,
    channels: usize,
) -> Result<Tensor> {
    if face.shape() != lip.shape() || face.rank() != 2 {
        return Err(Error::shapes("loss_weights", face.shape(), lip.shape()));
    }
    check_binary(face, "face mask")?;
    check_binary(lip, "lip mask")?;
    let plane = face.zip_map(lip, |f, l| {
        let w = match branch {
            LossBranch::Combined => 1.0 + f + l,
            LossBranch::Face => f,
            LossBranch::Lip => l,
        };
        w * w
    })?;
    let mut shape = vec![frames, channels];
    shape.extend_from_slice(face.shape());
    let data = plane.data().repeat(frames * channels);
    Tensor::new(shape, data)
}

/// Mean over all elements of `((v_pred − v_target) ⊙ M)²` for the branch
/// selected by `q`.
pub fn masked_loss(v_pred: &Tensor, v_target: &Tensor, face: &Tensor, lip: &Tensor, q: f64) -> Result<f64> {
    if v_pred.shape() != v_target.shape() || v_pred.rank() != 4 {
        return Err(Error::shapes("masked_loss", v_pred.shape(), v_target.shape()));
    }
    let s = v_pred.shape();
    if s[2..] != *face.shape() {
        return Err(Error::shapes("masked_loss", s, face.shape()));
    }
    let w = loss_weights(loss_branch(q)?, face, lip, s[0], s[1])?;
    let n = v_pred.numel().max(1) as f64;
    Ok(v_pred
        .data()
        .iter()
        .zip(v_target.data())
        .zip(w.data())
        .map(|((a, b), w)| w * (a - b) * (a - b))
        .sum::<f64>()
        / n)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Rng;

    #[test]
    fn endpoints_and_midpoint() {
        let mut rng = Rng::new(4);
        let (x0, n) = (rng.gauss([2, 3]), rng.gauss([2, 3]));
        assert_eq!(flow_forward(&x0, &n, 0.0).unwrap(), x0);
        assert_eq!(flow_forward(&x0, &n, 1.0).unwrap(), n);
        let mid = flow_forward(&x0, &n, 0.5).unwrap();
        let avg = x0.zip_map(&n, |a, b| (a + b) / 2.0).unwrap();
        assert!(mid.max_abs_diff(&avg).unwrap() < 1e-15);
        assert!(matches!(flow_forward(&x0, &n, 1.5), Err(Error::Domain(_))));
    }

    #[test]
    fn velocity_cases() {
        let mut rng = Rng::new(5);
        let x = rng.gauss([4]);
        assert!(velocity_target(&x, &x).unwrap().data().iter().all(|&v| v == 0.0));
        assert_eq!(velocity_target(&Tensor::zeros([4]), &x).unwrap(), x);
        assert!(velocity_target(&x, &Tensor::zeros([5])).is_err());
    }

    #[test]
    fn branch_thresholds() {
        assert_eq!(loss_branch(0.1).unwrap(), LossBranch::Combined);
        assert_eq!(loss_branch(0.4).unwrap(), LossBranch::Face);
        assert_eq!(loss_branch(0.45).unwrap(), LossBranch::Face);
        assert_eq!(loss_branch(0.5).unwrap(), LossBranch::Lip);
        assert_eq!(loss_branch(0.7).unwrap(), LossBranch::Lip);
        assert!(loss_branch(-0.1).is_err());
    }

    #[test]
    fn masked_loss_cases() {
        let mut rng = Rng::new(6);
        let (a, b) = (rng.gauss([2, 3, 4, 4]), rng.gauss([2, 3, 4, 4]));
        let zero = Tensor::zeros([4, 4]);
        let one = Tensor::ones([4, 4]);
        assert_eq!(masked_loss(&a, &b, &zero, &one, 0.45).unwrap(), 0.0);
        let mse = a.sub(&b).unwrap().map(|v| v * v).mean();
        let all = masked_loss(&a, &b, &one, &one, 0.1).unwrap();
        assert!((all - 9.0 * mse).abs() < 1e-12);
        assert!((masked_loss(&a, &b, &one, &one, 0.9).unwrap() - mse).abs() < 1e-12);
        let bad = Tensor::full([4, 4], 0.5);
        assert!(matches!(masked_loss(&a, &b, &bad, &one, 0.1), Err(Error::Validation(_))));
    }
}
