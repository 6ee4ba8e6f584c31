mod common;

use common::*;
use proptest::prelude::*;
use rand::Rng;
use robust_smoother::numkernel::{self, RiccatiProblem};

fn care_instance(seed: u64) -> (Mat, Mat, Mat) {
    let mut r = rng(seed);
    let a = random_hurwitz(4, 0.1, &mut r);
    let b = random_matrix(4, 2, &mut r);
    let c = random_matrix(3, 4, &mut r);
    let q = c.transpose() * &c + Mat::identity(4, 4) * 0.1;
    (a, q, -(&b * b.transpose()))
}

#[test]
fn care_matches_sign_function_oracle() {
    for seed in 0..50 {
        let (a, q, s) = care_instance(seed);
        let sol = numkernel::solve_care(&RiccatiProblem::new(a.clone(), q.clone(), s.clone()).unwrap()).unwrap();
        let oracle = care_sign_oracle(&a, &q, &s);
        assert!(rel(&sol.x, &oracle) <= 1e-8, "seed {seed}: {:e}", rel(&sol.x, &oracle));
        assert!(sol.stabilizing);
        assert!(numkernel::is_hurwitz(&(&a + &s * &sol.x)));
    }
}

#[test]
fn care_indefinite_quadratic_term() {
    // a game-type S with both signs still has a stabilizing solution when weak
    for seed in 100..120 {
        let (a, q, s) = care_instance(seed);
        let mut r = rng(seed + 1000);
        let e = random_matrix(4, 1, &mut r) * 0.1;
        let s = s + &e * e.transpose();
        let sol = numkernel::solve_care(&RiccatiProblem::new(a.clone(), q.clone(), s.clone()).unwrap()).unwrap();
        assert!(rel(&sol.x, &care_sign_oracle(&a, &q, &s)) <= 1e-8, "seed {seed}");
    }
}

#[test]
fn scalar_care_closed_form() {
    // 2aX + sX² + q = 0 with s < 0 → X = (−a − √(a² − sq)) / s
    for (a, s, q) in [(-1.0, -1.0, 1.0), (3.0, -2.0, 0.5), (0.0, -4.0, 9.0), (-1e3, -1e-2, 1e4)] {
        let sol = numkernel::solve_care(&RiccatiProblem::new(Mat::from_element(1, 1, a), Mat::from_element(1, 1, q), Mat::from_element(1, 1, s)).unwrap()).unwrap();
        let x: f64 = (-a - (a * a - s * q).sqrt()) / s;
        assert!((sol.x[(0, 0)] - x).abs() <= 1e-12 * x.abs().max(1.0), "{a} {s} {q}");
    }
}

#[test]
fn care_on_imaginary_axis_is_reported() {
    // 2·0·X + X² + 1 = 0 has no real solution
    let p = RiccatiProblem::new(Mat::zeros(1, 1), Mat::identity(1, 1), Mat::identity(1, 1)).unwrap();
    assert!(matches!(
        numkernel::solve_care(&p),
        Err(robust_smoother::error::Error::NoStabilizingSolution { .. })
    ));
}

#[test]
fn lyapunov_matches_kronecker_oracle() {
    for seed in 0..50 {
        let mut r = rng(500 + seed);
        let a = random_hurwitz(5, 0.1, &mut r);
        let b = random_matrix(5, 3, &mut r);
        let w = &b * b.transpose();
        let sol = numkernel::solve_lyapunov(&a, &w).unwrap();
        let oracle = lyapunov_kron_oracle(&a, &w);
        assert!(rel(&sol.p, &oracle) <= 1e-10, "seed {seed}: {:e}", rel(&sol.p, &oracle));
    }
}

#[test]
fn lyapunov_rejects_unstable() {
    let a = Mat::from_row_slice(2, 2, &[0.1, 1.0, 0.0, -1.0]);
    assert!(matches!(
        numkernel::solve_lyapunov(&a, &Mat::identity(2, 2)),
        Err(robust_smoother::error::Error::NotHurwitz { .. })
    ));
}

#[test]
fn expm_semigroup_and_taylor() {
    for seed in 0..50 {
        let mut r = rng(900 + seed);
        let a = random_matrix(4, 4, &mut r) * 2.0;
        let (s, t) = (r.random_range(0.0..1.0), r.random_range(0.0..1.0));
        let lhs = numkernel::expm(&a, s + t);
        let rhs = numkernel::expm(&a, s) * numkernel::expm(&a, t);
        assert!(rel(&lhs, &rhs) <= 1e-8, "seed {seed}");
        assert!(rel(&numkernel::expm(&a, t), &expm_taylor(&a, t)) <= 1e-10, "seed {seed}");
    }
}

#[test]
fn expm_of_rotation_generator() {
    let a = Mat::from_row_slice(2, 2, &[0.0, -1.0, 1.0, 0.0]);
    let e = numkernel::expm(&a, std::f64::consts::FRAC_PI_2);
    assert!(rel(&e, &Mat::from_row_slice(2, 2, &[0.0, -1.0, 1.0, 0.0])) < 1e-14);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn care_solution_is_symmetric_with_small_residual(seed in any::<u64>()) {
        let (a, q, s) = care_instance(seed);
        let sol = numkernel::solve_care(&RiccatiProblem::new(a, q, s).unwrap()).unwrap();
        prop_assert!((&sol.x - sol.x.transpose()).norm() <= 1e-12 * sol.x.norm());
        prop_assert!(sol.residual <= 1e-8 * (1.0 + sol.x.norm().powi(2)));
        prop_assert!(numkernel::min_symmetric_eigenvalue(&sol.x) >= -1e-12);
    }

    #[test]
    fn lyapunov_covariance_is_psd(seed in any::<u64>(), n in 1usize..7) {
        let mut r = rng(seed);
        let a = random_hurwitz(n, 0.05, &mut r);
        let b = random_matrix(n, 2, &mut r);
        let sol = numkernel::solve_lyapunov(&a, &(&b * b.transpose())).unwrap();
        prop_assert!((&sol.p - sol.p.transpose()).norm() <= 1e-12 * sol.p.norm().max(1e-300));
        prop_assert!(numkernel::min_symmetric_eigenvalue(&sol.p) >= -1e-10 * sol.p.norm());
    }

    #[test]
    fn spectral_radius_bounds_every_eigenvalue(seed in any::<u64>()) {
        let mut r = rng(seed);
        let m = random_matrix(5, 5, &mut r);
        let rho = numkernel::spectral_radius(&m);
        for z in m.complex_eigenvalues().iter() {
            prop_assert!(z.norm() <= rho * (1.0 + 1e-10));
        }
    }
}
