mod common;

use common::*;
use proptest::prelude::*;
use robust_smoother::delay::DelayModel;
use robust_smoother::error::Error;
use robust_smoother::model::{CompactPlant, PhaseParams, UncertainPlant};
use robust_smoother::synthesis::{
    assemble_multipliers, default_lambda, feasible, minimize_bound, synthesize, ControlQuadratic, ScalingPoint, SearchOptions,
    SynthesisOptions,
};

fn phase() -> CompactPlant {
    CompactPlant::from_plant(&UncertainPlant::phase_tracking(&PhaseParams::default()), &DelayModel::printed_phase_example()).unwrap()
}

#[test]
fn nominal_scalar_plant_matches_closed_form() {
    let p = PhaseParams { gamma: 0.0, ..PhaseParams::default() };
    let c = CompactPlant::from_plant(&UncertainPlant::phase_tracking(&p), &DelayModel::none(1)).unwrap();
    assert!(c.nominal);
    let d = 1.0 / (2.0 * p.alpha * p.beta);
    for tau in [1e-2, 1.0, 1e3, 1e12] {
        let s = synthesize(&c, &ScalingPoint::new(tau, vec![]), &SynthesisOptions::default()).unwrap();
        let y = scalar_filter_variance(p.lambda, p.kappa, d, tau);
        assert!((s.y[(0, 0)] - y).abs() <= 1e-10 * y, "tau {tau}: {} vs {y}", s.y[(0, 0)]);
        assert!(s.x.norm() <= 1e-14);
        assert!((s.vtau - 0.5 * y).abs() <= 1e-10 * y);
        assert!((s.bc[(0, 0)] - y / (d * d)).abs() <= 1e-9 * y / (d * d));
        assert!((s.ac[(0, 0)] - (-p.lambda - y / (d * d))).abs() <= 1e-9 * s.ac[(0, 0)].abs());
    }
}

#[test]
fn printed_point_certificates() {
    let c = phase();
    let s = synthesize(&c, &ScalingPoint::printed_phase_example(), &SynthesisOptions::default()).unwrap();
    assert!(s.residual_y <= 1e-8 && s.residual_x <= 1e-8);
    assert!(s.rho_yx < s.point.tau);
    assert!(robust_smoother::numkernel::is_positive_definite(&s.y));
    assert!((s.vtau - 0.1301).abs() < 5e-4, "{}", s.vtau);
    assert!(s.gain_consistency(&c).unwrap() < 1e-10);
}

#[test]
fn additive_control_quadratic_has_no_solution_at_printed_point() {
    let opts = SynthesisOptions { control_quadratic: ControlQuadratic::Additive, ..Default::default() };
    let r = synthesize(&phase(), &ScalingPoint::printed_phase_example(), &opts);
    assert!(matches!(r, Err(Error::NoStabilizingSolution { .. })), "{r:?}");
}

#[test]
fn infeasible_multipliers_are_rejected() {
    let r = synthesize(&phase(), &ScalingPoint::new(1.13e-6, vec![1.0, 0.6, 0.5, 0.5]), &SynthesisOptions::default());
    assert!(matches!(r, Err(Error::Infeasible(_))));
    let r = synthesize(&phase(), &ScalingPoint::new(-1.0, vec![0.5, 0.2, 0.1, 0.1]), &SynthesisOptions::default());
    assert!(matches!(r, Err(Error::Domain(_))));
}

#[test]
fn default_multipliers_are_feasible() {
    let c = phase();
    let l = default_lambda(&c);
    assert!(feasible(&c, &l).margin > 0.0);
}

fn small_search(seed: u64) -> SearchOptions {
    SearchOptions { starts: 3, seed, tau_grid: 5, golden_iters: 6, inner_iters: 40, polish_iters: 150, ..Default::default() }
}

#[test]
fn search_is_deterministic_and_improves_on_start() {
    let c = phase();
    let init = ScalingPoint::printed_phase_example();
    let a = minimize_bound(&c, &init, &SynthesisOptions::default(), &small_search(3)).unwrap();
    let b = minimize_bound(&c, &init, &SynthesisOptions::default(), &small_search(3)).unwrap();
    assert_eq!(a.best.point, b.best.point);
    assert_eq!(a.best.vtau.to_bits(), b.best.vtau.to_bits());
    assert_eq!(a.start_values, b.start_values);
    assert!(a.best.vtau < 0.1301);
    assert!(feasible(&c, &a.best.point.lambda).feasible);
}

#[test]
fn empty_box_is_infeasible() {
    let so = SearchOptions { lambda_min: 0.6, ..small_search(0) };
    let r = minimize_bound(&phase(), &ScalingPoint::printed_phase_example(), &SynthesisOptions::default(), &so);
    assert!(matches!(r, Err(Error::Infeasible(_))), "{:?}", r.map(|s| s.best.point));
}

fn feasible_lambda() -> impl Strategy<Value = Vec<f64>> {
    (0.05f64..0.95, 0.01f64..0.45, 0.001f64..0.05, 0.001f64..0.05).prop_map(|(a, b, c, d)| vec![a, b, c, d])
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn cost_bound_is_similarity_invariant(seed in any::<u64>(), lambda in feasible_lambda(), log_tau in -6.3f64..-5.5) {
        let c = phase();
        let point = ScalingPoint::new(10f64.powf(log_tau), lambda);
        let Ok(base) = synthesize(&c, &point, &SynthesisOptions::default()) else { return Ok(()) };
        let mut r = rng(seed);
        let t = Mat::identity(3, 3) + random_matrix(3, 3, &mut r) * 0.3;
        let ct = c.transformed(&t).unwrap();
        let moved = synthesize(&ct, &point, &SynthesisOptions::default()).unwrap();
        prop_assert!((moved.vtau - base.vtau).abs() <= 1e-6 * base.vtau, "{} vs {}", moved.vtau, base.vtau);
    }

    #[test]
    fn stored_gain_matches_recomputation(lambda in feasible_lambda(), log_tau in -6.3f64..-5.5) {
        let c = phase();
        if let Ok(s) = synthesize(&c, &ScalingPoint::new(10f64.powf(log_tau), lambda), &SynthesisOptions::default()) {
            prop_assert!(s.gain_consistency(&c).unwrap() < 1e-10);
            prop_assert!(s.vtau >= 0.0);
            prop_assert!(s.rho_yx < s.point.tau);
        }
    }

    #[test]
    fn feasibility_is_a_bound_on_jtmj(l in prop::collection::vec(0.0f64..1.2, 4)) {
        let c = phase();
        let m = assemble_multipliers(&c, &l).unwrap().m;
        let jmj = c.j.transpose() * m * &c.j;
        let top = jmj.symmetric_eigenvalues().max();
        let f = feasible(&c, &l);
        if (top - 1.0).abs() > 1e-9 && l.iter().all(|v| *v > 1e-9) {
            prop_assert_eq!(f.feasible, top < 1.0);
        }
    }
}
