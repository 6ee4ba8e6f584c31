use num_complex::Complex64;
use proptest::prelude::*;
use robust_smoother::delay::{pade_coefficients, pade_delay, pade_delay_with, DelayModel, Realization, MAX_PADE_ORDER};
use robust_smoother::error::Error;

#[test]
fn second_order_coefficients_by_hand() {
    // [2/2] Padé of e^{-sδ}: (s² − 6s/δ + 12/δ²) / (s² + 6s/δ + 12/δ²)
    let d = 3.1e-6;
    let c = pade_coefficients(2, d);
    for (got, want) in c.iter().zip([12.0 / (d * d), 6.0 / d, 1.0]) {
        assert!((got - want).abs() <= 1e-12 * want);
    }
}

#[test]
fn first_order_transfer_function() {
    // (1 − sδ/2) / (1 + sδ/2)
    let d = 0.2;
    let m = pade_delay(1, d).unwrap();
    for w in [0.0, 0.3, 4.0, 70.0] {
        let s = Complex64::new(0.0, w);
        let want = (1.0 - s * d / 2.0) / (1.0 + s * d / 2.0);
        assert!((m.frequency_response(w)[(0, 0)] - want).norm() < 1e-13);
    }
}

#[test]
fn printed_realization_is_all_pass_with_unit_dc_gain() {
    let m = DelayModel::printed_phase_example();
    assert!(m.is_stable());
    assert!(m.all_pass_deviation(1e9) < 1e-8);
    assert!((m.dc_gain()[(0, 0)] - 1.0).abs() < 1e-2);
}

#[test]
fn realizations_share_markov_parameters() {
    let b = pade_delay_with(3, 1e-3, Realization::Balanced).unwrap();
    let c = pade_delay_with(3, 1e-3, Realization::Companion).unwrap();
    for (x, y) in b.markov_parameters(6).iter().zip(c.markov_parameters(6)) {
        assert!((x - &y).norm() <= 1e-9 * y.norm().max(1.0));
    }
}

#[test]
fn bad_inputs() {
    assert!(matches!(pade_delay(0, 1e-3), Err(Error::Unsupported(_))));
    assert!(matches!(pade_delay(MAX_PADE_ORDER + 1, 1e-3), Err(Error::Unsupported(_))));
    assert!(matches!(pade_delay(2, -1.0), Err(Error::Domain(_))));
    assert!(matches!(pade_delay(2, f64::NAN), Err(Error::Domain(_))));
}

#[test]
fn replicated_delay_is_block_diagonal() {
    let m = pade_delay(2, 1e-3).unwrap().replicate(3);
    assert_eq!((m.state_dim(), m.signal_dim()), (6, 3));
    let g = m.dc_gain();
    assert!((g - robust_smoother::numkernel::Mat::identity(3, 3)).norm() < 1e-12);
}

proptest! {
    #[test]
    fn pade_is_stable_all_pass_unit_dc(order in 1usize..=MAX_PADE_ORDER, log_delta in -7.0f64..0.0) {
        let delta = 10f64.powf(log_delta);
        let m = pade_delay(order, delta).unwrap();
        prop_assert!(m.is_stable());
        prop_assert!(m.all_pass_deviation(1e2 / delta) < 1e-8);
        prop_assert!((m.dc_gain()[(0, 0)] - 1.0).abs() < 1e-10);
    }

    #[test]
    fn phase_matches_delay_at_low_frequency(order in 1usize..=MAX_PADE_ORDER, log_delta in -7.0f64..0.0) {
        let delta = 10f64.powf(log_delta);
        let m = pade_delay(order, delta).unwrap();
        let w = 0.05 / delta;
        let want = Complex64::new(0.0, -w * delta).exp();
        prop_assert!((m.frequency_response(w)[(0, 0)] - want).norm() < 1e-4);
    }
}
