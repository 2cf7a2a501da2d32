use lff::flow::{flow_forward, loss_branch, loss_weights, masked_loss, velocity_target, LossBranch};
use lff::guidance::{cfg_combine, guidance_combine, native_combine, BranchSet, GuidanceConfig, GuidanceMode};
use lff::tensor::{Rng, Tensor};
use lff::Error;
use proptest::prelude::*;

fn vec_tensor(n: usize) -> impl Strategy<Value = Tensor> {
    prop::collection::vec(-5.0f64..5.0, n).prop_map(move |d| Tensor::new([n], d).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn clean_sample_is_recovered_from_the_velocity(x0 in vec_tensor(7), noise in vec_tensor(7), t in 0.0f64..=1.0) {
        let xt = flow_forward(&x0, &noise, t).unwrap();
        let v = velocity_target(&x0, &noise).unwrap();
        for ((x, z), v) in x0.data().iter().zip(xt.data()).zip(v.data()) {
            prop_assert!((z - t * v - x).abs() <= 1e-12);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn native_guidance_is_an_affine_amplification(
        f in vec_tensor(5), a in vec_tensor(5), r in vec_tensor(5), alpha in 0.0f64..10.0, beta in 0.0f64..10.0
    ) {
        let b = BranchSet { d_full: f.clone(), d_no_audio: a.clone(), d_no_refined: r.clone() };
        let g = native_combine(&b, alpha, beta).unwrap();
        for i in 0..5 {
            let (fv, av, rv) = (f.data()[i], a.data()[i], r.data()[i]);
            prop_assert!((g.data()[i] - fv - (alpha * (fv - av) + beta * (fv - rv))).abs() <= 1e-12);
        }
        // Coefficients sum to one, so equal branches are a fixed point.
        let same = BranchSet { d_full: f.clone(), d_no_audio: f.clone(), d_no_refined: f.clone() };
        prop_assert!(native_combine(&same, alpha, beta).unwrap().max_abs_diff(&f).unwrap() <= 1e-12);
    }

    #[test]
    fn cfg_is_native_guidance_without_the_refined_term(
        c in vec_tensor(4), u in vec_tensor(4), junk in vec_tensor(4), s in 0.0f64..10.0
    ) {
        let b = BranchSet { d_full: c.clone(), d_no_audio: u.clone(), d_no_refined: junk };
        let native = native_combine(&b, s, 0.0).unwrap();
        let cfg = cfg_combine(&c, &u, 1.0 + s).unwrap();
        prop_assert!(native.max_abs_diff(&cfg).unwrap() <= 1e-12);
    }
}

#[test]
fn zero_strength_is_the_identity_bit_for_bit() {
    let mut rng = Rng::new(1);
    let b = BranchSet {
        d_full: rng.gauss([3, 4]),
        d_no_audio: rng.gauss([3, 4]),
        d_no_refined: rng.gauss([3, 4]),
    };
    let cfg = GuidanceConfig { alpha: 0.0, beta: 0.0, ..GuidanceConfig::default() };
    assert_eq!(guidance_combine(&b, &cfg).unwrap().data(), b.d_full.data());
}

#[test]
fn default_strengths_on_unit_branches() {
    let b = BranchSet {
        d_full: Tensor::scalar(1.0),
        d_no_audio: Tensor::scalar(0.0),
        d_no_refined: Tensor::scalar(0.0),
    };
    let cfg = GuidanceConfig::default();
    assert_eq!((cfg.alpha, cfg.beta), (4.5, 3.0));
    assert_eq!(guidance_combine(&b, &cfg).unwrap().item().unwrap(), 8.5);
}

#[test]
fn guidance_errors() {
    let b = BranchSet {
        d_full: Tensor::zeros([2]),
        d_no_audio: Tensor::zeros([3]),
        d_no_refined: Tensor::zeros([2]),
    };
    assert!(matches!(native_combine(&b, 1.0, 1.0), Err(Error::Dimension { .. })));
    let ok = BranchSet { d_no_audio: Tensor::zeros([2]), ..b };
    let cfg = GuidanceConfig::default().with_mode(GuidanceMode::Cfg);
    assert!(matches!(guidance_combine(&ok, &cfg), Err(Error::Config(_))));
}

#[test]
fn branch_frequencies_over_many_draws() {
    let mut rng = Rng::new(17);
    let n = 100_000;
    let mut counts = [0usize; 3];
    for _ in 0..n {
        counts[match loss_branch(rng.uniform()).unwrap() {
            LossBranch::Combined => 0,
            LossBranch::Face => 1,
            LossBranch::Lip => 2,
        }] += 1;
    }
    for (c, p) in counts.iter().zip([0.4, 0.1, 0.5]) {
        assert!((*c as f64 / n as f64 - p).abs() <= 0.01, "{counts:?}");
    }
}

#[test]
fn branch_thresholds() {
    assert_eq!(loss_branch(0.5).unwrap(), LossBranch::Lip);
    assert_eq!(loss_branch(0.4).unwrap(), LossBranch::Face);
    assert_eq!(loss_branch(0.3999).unwrap(), LossBranch::Combined);
    assert!(matches!(loss_branch(1.5), Err(Error::Domain(_))));
    assert!(matches!(flow_forward(&Tensor::zeros([1]), &Tensor::zeros([1]), -0.1), Err(Error::Domain(_))));
}

#[test]
fn masked_loss_hand_cases() {
    let face = Tensor::ones([2, 2]);
    let lip = Tensor::ones([2, 2]);
    let pred = Tensor::ones([1, 1, 2, 2]);
    let target = Tensor::zeros([1, 1, 2, 2]);
    // Combined weight 1 + 1 + 1 = 3 multiplies the residual, giving 9.
    assert_eq!(masked_loss(&pred, &target, &face, &lip, 0.1).unwrap(), 9.0);
    assert_eq!(masked_loss(&pred, &target, &face, &lip, 0.45).unwrap(), 1.0);
    assert_eq!(masked_loss(&pred, &target, &face, &lip, 0.9).unwrap(), 1.0);
    let none = Tensor::zeros([2, 2]);
    assert_eq!(masked_loss(&pred, &target, &none, &none, 0.1).unwrap(), 1.0);
    assert_eq!(masked_loss(&pred, &target, &none, &none, 0.9).unwrap(), 0.0);
    let bad = Tensor::full([2, 2], 0.5);
    assert!(matches!(loss_weights(LossBranch::Face, &bad, &none, 1, 1), Err(Error::Validation(_))));
}
