use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment estimates per named parameter.
#[derive(Clone, Debug, Default)]
pub struct AdamState {
    pub step: u64,
    pub m: BTreeMap<String, Tensor>,
    pub v: BTreeMap<String, Tensor>,
}

/// One bias-corrected Adam update applied in place.
///
/// Every gradient is checked for finiteness before any parameter moves, so a
/// rejected step leaves `params` and `state` untouched. Parameters without a
/// gradient entry keep their values and moments.
pub fn adam_step(
    params: &mut BTreeMap<String, Tensor>,
    grads: &BTreeMap<String, Tensor>,
    state: &mut AdamState,
    cfg: &AdamConfig,
) -> Result<()> {
    for (name, g) in grads {
        let p = params
            .get(name)
            .ok_or_else(|| Error::UnknownParam(name.clone()))?;
        if p.shape() != g.shape() {
            return Err(Error::shapes("adam_step", p.shape(), g.shape()));
        }
        if !g.all_finite() {
            return Err(Error::NonFiniteGradient(name.clone()));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    for (name, g) in grads {
        let p = params.get_mut(name).expect("checked above");
        let m = state
            .m
            .entry(name.clone())
            .or_insert_with(|| Tensor::zeros(g.shape().to_vec()));
        let v = state
            .v
            .entry(name.clone())
            .or_insert_with(|| Tensor::zeros(g.shape().to_vec()));
        for (((pi, &gi), mi), vi) in p
            .data_mut()
            .iter_mut()
            .zip(g.data())
            .zip(m.data_mut())
            .zip(v.data_mut())
        {
            *mi = cfg.beta1 * *mi + (1.0 - cfg.beta1) * gi;
            *vi = cfg.beta2 * *vi + (1.0 - cfg.beta2) * gi * gi;
            let mhat = *mi / bc1;
            let vhat = *vi / bc2;
            *pi -= cfg.lr * mhat / (vhat.sqrt() + cfg.eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(p: f64, g: f64) -> (BTreeMap<String, Tensor>, BTreeMap<String, Tensor>) {
        let mut params = BTreeMap::new();
        params.insert("w".to_string(), Tensor::scalar(p));
        let mut grads = BTreeMap::new();
        grads.insert("w".to_string(), Tensor::scalar(g));
        (params, grads)
    }

    #[test]
    fn zero_gradient_leaves_params_and_decays_moments() {
        let cfg = AdamConfig::default();
        let (mut params, zero) = single(2.0, 0.0);
        let mut state = AdamState::default();
        adam_step(&mut params, &zero, &mut state, &cfg).unwrap();
        assert_eq!(params["w"].item().unwrap(), 2.0);

        let (mut params, grads) = single(1.5, 0.3);
        let mut state = AdamState::default();
        adam_step(&mut params, &grads, &mut state, &cfg).unwrap();
        let (m0, v0) = (state.m["w"].item().unwrap(), state.v["w"].item().unwrap());
        adam_step(&mut params, &zero, &mut state, &cfg).unwrap();
        assert_eq!(state.m["w"].item().unwrap(), 0.9 * m0);
        assert_eq!(state.v["w"].item().unwrap(), 0.999 * v0);
    }

    #[test]
    fn first_step_moves_by_lr() {
        for g in [1e-3, 0.5, -40.0] {
            let (mut params, grads) = single(0.0, g);
            let cfg = AdamConfig { lr: 0.01, ..AdamConfig::default() };
            adam_step(&mut params, &grads, &mut AdamState::default(), &cfg).unwrap();
            let step = params["w"].item().unwrap();
            assert!((step.abs() - 0.01).abs() < 1e-6, "g={g}: {step}");
            assert_eq!(step.signum(), -g.signum());
        }
    }

    #[test]
    fn non_finite_gradient_names_parameter() {
        let (mut params, grads) = single(1.0, f64::NAN);
        let err = adam_step(&mut params, &grads, &mut AdamState::default(), &AdamConfig::default())
            .unwrap_err();
        assert!(err.to_string().contains("`w`"));
        assert_eq!(params["w"].item().unwrap(), 1.0);
    }

    #[test]
    fn zero_lr_is_bit_exact_noop() {
        let (mut params, grads) = single(-0.123456789, 3.0);
        let cfg = AdamConfig { lr: 0.0, ..AdamConfig::default() };
        let mut state = AdamState::default();
        for _ in 0..5 {
            adam_step(&mut params, &grads, &mut state, &cfg).unwrap();
        }
        assert_eq!(params["w"].item().unwrap().to_bits(), (-0.123456789f64).to_bits());
    }
}
