//! Independent reference computations shared by the integration tests.
#![allow(dead_code)]

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type Mat = DMatrix<f64>;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_matrix(r: usize, c: usize, rng: &mut ChaCha8Rng) -> Mat {
    Mat::from_fn(r, c, |_, _| rng.random_range(-1.0..1.0))
}

/// Random matrix shifted left so every eigenvalue has real part ≤ −margin.
pub fn random_hurwitz(n: usize, margin: f64, rng: &mut ChaCha8Rng) -> Mat {
    let a = random_matrix(n, n, rng);
    let top = a.complex_eigenvalues().iter().map(|z| z.re).fold(f64::NEG_INFINITY, f64::max);
    a - Mat::identity(n, n) * (top + margin)
}

/// Stabilizing solution of `XA + AᵀX + XSX + Q = 0` from the matrix sign of
/// the Hamiltonian `[[A, S], [−Q, −Aᵀ]]`.
pub fn care_sign_oracle(a: &Mat, q: &Mat, s: &Mat) -> Mat {
    let n = a.nrows();
    let mut h = Mat::zeros(2 * n, 2 * n);
    h.view_mut((0, 0), (n, n)).copy_from(a);
    h.view_mut((0, n), (n, n)).copy_from(s);
    h.view_mut((n, 0), (n, n)).copy_from(&(-q));
    h.view_mut((n, n), (n, n)).copy_from(&(-a.transpose()));
    let mut z = h;
    for _ in 0..100 {
        let inv = z.clone().try_inverse().expect("Hamiltonian iterate is singular");
        let c = z.determinant().abs().powf(-1.0 / (2 * n) as f64);
        let next = (&z * c + inv / c) * 0.5;
        let change = (&next - &z).norm() / next.norm();
        z = next;
        if change < 1e-15 {
            break;
        }
    }
    let w11 = z.view((0, 0), (n, n)).clone_owned() + Mat::identity(n, n);
    let w12 = z.view((0, n), (n, n)).clone_owned();
    let w21 = z.view((n, 0), (n, n)).clone_owned();
    let w22 = z.view((n, n), (n, n)).clone_owned() + Mat::identity(n, n);
    let mut lhs = Mat::zeros(2 * n, n);
    lhs.view_mut((0, 0), (n, n)).copy_from(&w12);
    lhs.view_mut((n, 0), (n, n)).copy_from(&w22);
    let mut rhs = Mat::zeros(2 * n, n);
    rhs.view_mut((0, 0), (n, n)).copy_from(&(-w11));
    rhs.view_mut((n, 0), (n, n)).copy_from(&(-w21));
    let x = lhs.svd(true, true).solve(&rhs, 1e-14).expect("least squares");
    (&x + x.transpose()) * 0.5
}

/// `AP + PAᵀ + W = 0` through the Kronecker system `(I⊗A + A⊗I) vec P = −vec W`.
pub fn lyapunov_kron_oracle(a: &Mat, w: &Mat) -> Mat {
    let n = a.nrows();
    let eye = Mat::identity(n, n);
    let k = eye.kronecker(a) + a.kronecker(&eye);
    let rhs = -Mat::from_column_slice(n * n, 1, w.as_slice());
    let v = k.lu().solve(&rhs).expect("Kronecker system is singular");
    Mat::from_column_slice(n, n, v.as_slice())
}

/// `e^{At}` by a 30-term Taylor series with scaling and squaring.
pub fn expm_taylor(a: &Mat, t: f64) -> Mat {
    let n = a.nrows();
    let at = a * t;
    let norm = at.norm();
    let squarings = if norm > 0.5 { (norm / 0.5).log2().ceil() as i32 } else { 0 };
    let scaled = at / 2f64.powi(squarings);
    let mut term = Mat::identity(n, n);
    let mut sum = term.clone();
    for k in 1..30 {
        term = &term * &scaled / k as f64;
        sum += &term;
    }
    for _ in 0..squarings {
        sum = &sum * &sum;
    }
    sum
}

pub fn rel(a: &Mat, b: &Mat) -> f64 {
    (a - b).norm() / b.norm().max(1e-300)
}

/// Stationary variance of the scalar filter for `dφ = −λφ dt + √κ dV`,
/// `dy = φ dt + d dW`, with the quadratic weight reduced by `1/τ`:
/// the positive root of `−2λY − (1/d² − 1/τ)Y² + κ = 0`.
pub fn scalar_filter_variance(lambda: f64, kappa: f64, d: f64, tau: f64) -> f64 {
    let s = 1.0 / (d * d) - 1.0 / tau;
    (-lambda + (lambda * lambda + kappa * s).sqrt()) / s
}
