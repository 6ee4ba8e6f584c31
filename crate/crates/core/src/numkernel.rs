//! Dense numerical kernels: continuous algebraic Riccati equations with a
//! sign-indefinite quadratic term, Lyapunov equations, the matrix exponential
//! and spectral radius.
//!
//! Everything here works on small dense `DMatrix<f64>` (tens of states at most).

use nalgebra::{linalg::Schur, Complex, DMatrix, SymmetricEigen, QR};

use crate::error::{Error, Result};

pub type Mat = DMatrix<f64>;

const SCHUR_MAX_ITER: usize = 10_000;

/// Continuous algebraic Riccati equation in the generic form
///
/// ```text
/// X A + Aᵀ X + X S X + Q = 0
/// ```
///
/// `S` may be sign-indefinite. Both the filter-type and control-type equations
/// of the synthesis are cast into this form by the caller.
#[derive(Debug, Clone)]
pub struct RiccatiProblem {
    pub a: Mat,
    pub q: Mat,
    pub s: Mat,
}

#[derive(Debug, Clone)]
pub struct CareSolution {
    pub x: Mat,
    /// Frobenius norm of `X A + Aᵀ X + X S X + Q`.
    pub residual: f64,
    /// `residual` divided by the sum of the Frobenius norms of the four terms.
    pub relative_residual: f64,
    /// All eigenvalues of `A + S X` lie in the open left half plane.
    pub stabilizing: bool,
}

#[derive(Debug, Clone)]
pub struct LyapunovSolution {
    pub p: Mat,
    /// Frobenius norm of `A P + P Aᵀ + W`.
    pub residual: f64,
}

impl RiccatiProblem {
    pub fn new(a: Mat, q: Mat, s: Mat) -> Result<Self> {
        let n = a.nrows();
        if !a.is_square() {
            return Err(Error::dim("Riccati A", "square", format!("{}x{}", a.nrows(), a.ncols())));
        }
        for (name, m) in [("Riccati Q", &q), ("Riccati S", &s)] {
            if m.shape() != (n, n) {
                return Err(Error::dim(name, format!("{n}x{n}"), format!("{}x{}", m.nrows(), m.ncols())));
            }
            let asym = (m - m.transpose()).norm();
            if asym > 1e-12 * (1.0 + m.norm()) {
                return Err(Error::Domain(format!("{name} is not symmetric (asymmetry {asym:e})")));
            }
        }
        Ok(Self { a, q, s })
    }

    pub fn residual_matrix(&self, x: &Mat) -> Mat {
        x * &self.a + self.a.transpose() * x + x * &self.s * x + &self.q
    }

    fn residual_scale(&self, x: &Mat) -> f64 {
        let xa = (x * &self.a).norm();
        xa * 2.0 + (x * &self.s * x).norm() + self.q.norm()
    }

    fn hamiltonian(&self) -> Mat {
        let n = self.a.nrows();
        let mut h = Mat::zeros(2 * n, 2 * n);
        h.view_mut((0, 0), (n, n)).copy_from(&self.a);
        h.view_mut((0, n), (n, n)).copy_from(&self.s);
        h.view_mut((n, 0), (n, n)).copy_from(&(-&self.q));
        h.view_mut((n, n), (n, n)).copy_from(&(-self.a.transpose()));
        h
    }
}

/// Solve `X A + Aᵀ X + X S X + Q = 0` for the stabilizing solution.
///
/// The stable invariant subspace of the Hamiltonian `[[A, S], [-Q, -Aᵀ]]` is
/// extracted from an ordered real Schur form, then refined by Newton–Kleinman
/// steps while the residual keeps dropping.
pub fn solve_care(prob: &RiccatiProblem) -> Result<CareSolution> {
    let n = prob.a.nrows();
    if n == 0 {
        return Ok(CareSolution {
            x: Mat::zeros(0, 0),
            residual: 0.0,
            relative_residual: 0.0,
            stabilizing: true,
        });
    }
    let h = prob.hamiltonian();
    let hnorm = h.norm();
    let (z, t) = real_schur(&h)?;
    let (z, t) = order_schur(z, t, |re, _| re < 0.0)?;

    let eigs = quasi_triangular_eigenvalues(&t);
    let axis_tol = 1e-11 * hnorm.max(f64::MIN_POSITIVE);
    let near_axis: Vec<(f64, f64)> = eigs
        .iter()
        .filter(|c| c.re.abs() <= axis_tol)
        .map(|c| (c.re, c.im))
        .collect();
    let stable = eigs.iter().filter(|c| c.re < 0.0).count();
    if !near_axis.is_empty() || stable != n {
        let offending = if near_axis.is_empty() {
            eigs.iter().map(|c| (c.re, c.im)).collect()
        } else {
            near_axis
        };
        return Err(Error::NoStabilizingSolution { eigenvalues: offending });
    }

    let u1 = z.view((0, 0), (n, n)).clone_owned();
    let u2 = z.view((n, 0), (n, n)).clone_owned();
    // X U1 = U2  <=>  U1ᵀ Xᵀ = U2ᵀ
    let xt = u1
        .transpose()
        .lu()
        .solve(&u2.transpose())
        .ok_or_else(|| Error::Numerical("stable Hamiltonian subspace has a singular upper block".into()))?;
    let mut x = symmetrize(&xt.transpose());

    let mut res = prob.residual_matrix(&x).norm();
    for _ in 0..8 {
        if res <= 1e-14 * prob.residual_scale(&x) {
            break;
        }
        let closed = &prob.a + &prob.s * &x;
        let r = symmetrize(&prob.residual_matrix(&x));
        // (A + S X)ᵀ D + D (A + S X) + R(X) = 0
        let Ok(step) = solve_lyapunov(&closed.transpose(), &r) else {
            break;
        };
        let candidate = symmetrize(&(&x + &step.p));
        let cres = prob.residual_matrix(&candidate).norm();
        if !(cres < res) {
            break;
        }
        x = candidate;
        res = cres;
    }

    let closed = &prob.a + &prob.s * &x;
    let stabilizing = max_real_eigenvalue(&closed) < 0.0;
    let scale = prob.residual_scale(&x);
    Ok(CareSolution {
        relative_residual: if scale > 0.0 { res / scale } else { res },
        x,
        residual: res,
        stabilizing,
    })
}

/// Solve `A P + P Aᵀ + W = 0` for Hurwitz `A`.
///
/// Schur-based: `A = Z T Zᵀ`, then the quasi-triangular equation is solved one
/// diagonal block column at a time.
pub fn solve_lyapunov(a: &Mat, w: &Mat) -> Result<LyapunovSolution> {
    let n = a.nrows();
    if !a.is_square() || w.shape() != (n, n) {
        return Err(Error::dim(
            "Lyapunov operands",
            format!("{n}x{n}"),
            format!("A {:?}, W {:?}", a.shape(), w.shape()),
        ));
    }
    if n == 0 {
        return Ok(LyapunovSolution { p: Mat::zeros(0, 0), residual: 0.0 });
    }
    let (z, t) = real_schur(a)?;
    let max_real = quasi_triangular_eigenvalues(&t)
        .iter()
        .map(|c| c.re)
        .fold(f64::NEG_INFINITY, f64::max);
    if max_real >= 0.0 {
        return Err(Error::NotHurwitz { max_real });
    }

    let c = -(z.transpose() * w * &z);
    let blocks = schur_blocks(&t);
    let mut y = Mat::zeros(n, n);
    for (bi, &(start, size)) in blocks.iter().enumerate().rev() {
        let mut rhs = c.columns(start, size).clone_owned();
        for &(ks, kz) in &blocks[bi + 1..] {
            let tjk = t.view((start, ks), (size, kz));
            rhs -= y.columns(ks, kz) * tjk.transpose();
        }
        let tjj = t.view((start, start), (size, size)).clone_owned();
        // (I_b ⊗ T + T_jj ⊗ I_n) vec(Y_j) = vec(rhs)
        let dim = n * size;
        let mut k = Mat::zeros(dim, dim);
        for bc in 0..size {
            k.view_mut((bc * n, bc * n), (n, n)).add_assign(&t);
            for br in 0..size {
                let v = tjj[(br, bc)];
                for i in 0..n {
                    k[(br * n + i, bc * n + i)] += v;
                }
            }
        }
        let rhs_vec = nalgebra::DVector::from_column_slice(rhs.as_slice());
        let sol = k
            .lu()
            .solve(&rhs_vec)
            .ok_or_else(|| Error::Numerical("singular Lyapunov block system".into()))?;
        y.columns_mut(start, size).copy_from_slice(sol.as_slice());
    }
    let p = symmetrize(&(&z * y * z.transpose()));
    let residual = (a * &p + &p * a.transpose() + w).norm();
    Ok(LyapunovSolution { p, residual })
}

/// Matrix exponential `e^{A t}` (scaling and squaring with Padé approximants).
pub fn expm(a: &Mat, t: f64) -> Mat {
    if t == 0.0 || a.nrows() == 0 {
        return Mat::identity(a.nrows(), a.ncols());
    }
    (a * t).exp()
}

/// Largest eigenvalue modulus.
pub fn spectral_radius(m: &Mat) -> f64 {
    eigenvalues(m).iter().map(|c| c.norm()).fold(0.0, f64::max)
}

pub fn eigenvalues(m: &Mat) -> Vec<Complex<f64>> {
    if m.nrows() == 0 {
        return Vec::new();
    }
    match real_schur(&balance(m)) {
        Ok((_, t)) => quasi_triangular_eigenvalues(&t),
        Err(_) => vec![Complex::new(f64::NAN, f64::NAN); m.nrows()],
    }
}

/// Diagonal similarity `D⁻¹ M D` with power-of-two scalings that equalize row and
/// column norms (Parlett–Reinsch). Eigenvalues are unchanged.
pub fn balance(m: &Mat) -> Mat {
    let n = m.nrows();
    let mut b = m.clone();
    let mut converged = false;
    let mut sweeps = 0;
    while !converged && sweeps < 100 {
        converged = true;
        sweeps += 1;
        for i in 0..n {
            let mut c = 0.0;
            let mut r = 0.0;
            for j in 0..n {
                if j != i {
                    c += b[(j, i)].abs();
                    r += b[(i, j)].abs();
                }
            }
            if c == 0.0 || r == 0.0 {
                continue;
            }
            let total = c + r;
            let mut f = 1.0;
            let (mut cc, mut rr) = (c, r);
            while cc < rr / 2.0 {
                cc *= 2.0;
                rr /= 2.0;
                f *= 2.0;
            }
            while cc >= rr * 2.0 {
                cc /= 2.0;
                rr *= 2.0;
                f /= 2.0;
            }
            if (cc + rr) < 0.95 * total {
                converged = false;
                for j in 0..n {
                    b[(i, j)] /= f;
                    b[(j, i)] *= f;
                }
            }
        }
    }
    b
}

pub fn max_real_eigenvalue(m: &Mat) -> f64 {
    eigenvalues(m).iter().map(|c| c.re).fold(f64::NEG_INFINITY, f64::max)
}

pub fn is_hurwitz(m: &Mat) -> bool {
    max_real_eigenvalue(m) < 0.0
}

pub fn symmetrize(m: &Mat) -> Mat {
    (m + m.transpose()) * 0.5
}

/// Smallest eigenvalue of the symmetric part of `m` (`+inf` for an empty matrix).
pub fn min_symmetric_eigenvalue(m: &Mat) -> f64 {
    if m.nrows() == 0 {
        return f64::INFINITY;
    }
    SymmetricEigen::new(symmetrize(m))
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

pub fn is_positive_definite(m: &Mat) -> bool {
    m.nrows() == 0 || symmetrize(m).cholesky().is_some()
}

pub(crate) fn real_schur(m: &Mat) -> Result<(Mat, Mat)> {
    let schur = Schur::try_new(m.clone(), f64::EPSILON, SCHUR_MAX_ITER)
        .ok_or_else(|| Error::Numerical("real Schur decomposition did not converge".into()))?;
    let (z, mut t) = schur.unpack();
    let n = t.nrows();
    for j in 0..n {
        for i in (j + 2)..n {
            t[(i, j)] = 0.0;
        }
    }
    Ok((z, t))
}

/// Diagonal blocks `(start, size)` of a real quasi-triangular matrix.
fn schur_blocks(t: &Mat) -> Vec<(usize, usize)> {
    let n = t.nrows();
    let mut blocks = Vec::new();
    let mut i = 0;
    while i < n {
        if i + 1 < n && t[(i + 1, i)] != 0.0 {
            blocks.push((i, 2));
            i += 2;
        } else {
            blocks.push((i, 1));
            i += 1;
        }
    }
    blocks
}

fn block_eigenvalues(t: &Mat, start: usize, size: usize) -> [Complex<f64>; 2] {
    if size == 1 {
        let v = Complex::new(t[(start, start)], 0.0);
        return [v, v];
    }
    let (a, b) = (t[(start, start)], t[(start, start + 1)]);
    let (c, d) = (t[(start + 1, start)], t[(start + 1, start + 1)]);
    let half_tr = 0.5 * (a + d);
    let disc = 0.25 * (a - d) * (a - d) + b * c;
    if disc >= 0.0 {
        let r = disc.sqrt();
        [Complex::new(half_tr + r, 0.0), Complex::new(half_tr - r, 0.0)]
    } else {
        let r = (-disc).sqrt();
        [Complex::new(half_tr, r), Complex::new(half_tr, -r)]
    }
}

fn quasi_triangular_eigenvalues(t: &Mat) -> Vec<Complex<f64>> {
    let mut out = Vec::with_capacity(t.nrows());
    for (start, size) in schur_blocks(t) {
        let e = block_eigenvalues(t, start, size);
        out.extend_from_slice(&e[..size]);
    }
    out
}

fn rotate(z: &mut Mat, t: &mut Mat, k: usize, q: &Mat) {
    let m = q.nrows();
    let n = t.nrows();
    let rows = q.transpose() * t.view((k, 0), (m, n));
    t.view_mut((k, 0), (m, n)).copy_from(&rows);
    let cols = t.view((0, k), (n, m)) * q;
    t.view_mut((0, k), (n, m)).copy_from(&cols);
    let zc = z.view((0, k), (z.nrows(), m)) * q;
    z.view_mut((0, k), (z.nrows(), m)).copy_from(&zc);
}

/// Split 2x2 diagonal blocks that carry real eigenvalues into two 1x1 blocks.
fn split_real_pairs(z: &mut Mat, t: &mut Mat) {
    let mut i = 0;
    while i + 1 < t.nrows() {
        if t[(i + 1, i)] == 0.0 {
            i += 1;
            continue;
        }
        let [l1, _] = block_eigenvalues(t, i, 2);
        if l1.im != 0.0 {
            i += 2;
            continue;
        }
        let (a, b, c, d) = (t[(i, i)], t[(i, i + 1)], t[(i + 1, i)], t[(i + 1, i + 1)]);
        let lam = l1.re;
        let (v0, v1) = if (a - lam).abs() + b.abs() >= (d - lam).abs() + c.abs() {
            (b, lam - a)
        } else {
            (lam - d, c)
        };
        let r = v0.hypot(v1);
        if r > 0.0 {
            let (cs, sn) = (v0 / r, v1 / r);
            let g = Mat::from_row_slice(2, 2, &[cs, -sn, sn, cs]);
            rotate(z, t, i, &g);
        }
        t[(i + 1, i)] = 0.0;
        i += 1;
    }
}

/// Swap the adjacent diagonal blocks starting at `k` (sizes `p` then `q`).
fn swap_blocks(z: &mut Mat, t: &mut Mat, k: usize, p: usize, q: usize) -> Result<()> {
    let a11 = t.view((k, k), (p, p)).clone_owned();
    let a12 = t.view((k, k + p), (p, q)).clone_owned();
    let a22 = t.view((k + p, k + p), (q, q)).clone_owned();
    // A11 X - X A22 = -A12  via  (I_q ⊗ A11 - A22ᵀ ⊗ I_p) vec X = -vec A12
    let dim = p * q;
    let mut sys = Mat::zeros(dim, dim);
    for bc in 0..q {
        sys.view_mut((bc * p, bc * p), (p, p)).add_assign(&a11);
        for br in 0..q {
            let v = a22[(bc, br)];
            for i in 0..p {
                sys[(br * p + i, bc * p + i)] -= v;
            }
        }
    }
    let rhs = nalgebra::DVector::from_iterator(dim, (-&a12).iter().copied());
    let xv = sys
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::Numerical("Schur block swap: blocks share eigenvalues".into()))?;
    let x = Mat::from_column_slice(p, q, xv.as_slice());

    let m = p + q;
    let mut basis = Mat::zeros(m, m);
    basis.view_mut((0, 0), (p, q)).copy_from(&x);
    basis.view_mut((p, 0), (q, q)).fill_with_identity();
    basis.view_mut((0, q), (p, p)).fill_with_identity();
    let qm = QR::new(basis).q();
    rotate(z, t, k, &qm);
    for j in 0..q {
        for i in q..m {
            t[(k + i, k + j)] = 0.0;
        }
    }
    Ok(())
}

/// Reorder a real Schur form so that eigenvalues accepted by `select(re, im)`
/// lead the diagonal. Returns the updated `(Z, T)` with `M = Z T Zᵀ` preserved.
pub(crate) fn order_schur(
    mut z: Mat,
    mut t: Mat,
    select: impl Fn(f64, f64) -> bool,
) -> Result<(Mat, Mat)> {
    split_real_pairs(&mut z, &mut t);
    let n = t.nrows();
    let mut guard = 0usize;
    loop {
        let blocks = schur_blocks(&t);
        let chosen: Vec<bool> = blocks
            .iter()
            .map(|&(s, sz)| {
                let e = block_eigenvalues(&t, s, sz)[0];
                select(e.re, e.im)
            })
            .collect();
        let Some(i) = (0..blocks.len().saturating_sub(1)).find(|&i| !chosen[i] && chosen[i + 1]) else {
            break;
        };
        let (k, p) = blocks[i];
        let q = blocks[i + 1].1;
        swap_blocks(&mut z, &mut t, k, p, q)?;
        guard += 1;
        if guard > n * n + 10 {
            return Err(Error::Numerical("Schur reordering did not terminate".into()));
        }
    }
    Ok((z, t))
}

trait AddAssignView {
    fn add_assign(&mut self, other: &Mat);
}

impl AddAssignView for nalgebra::DMatrixViewMut<'_, f64> {
    fn add_assign(&mut self, other: &Mat) {
        for j in 0..other.ncols() {
            for i in 0..other.nrows() {
                self[(i, j)] += other[(i, j)];
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(r: usize, c: usize, v: &[f64]) -> Mat {
        Mat::from_row_slice(r, c, v)
    }

    #[test]
    fn scalar_care_positive_root() {
        let p = RiccatiProblem::new(m(1, 1, &[0.0]), m(1, 1, &[1.0]), m(1, 1, &[-1.0])).unwrap();
        let s = solve_care(&p).unwrap();
        assert!((s.x[(0, 0)] - 1.0).abs() < 1e-12);
        assert!(s.stabilizing);
    }

    #[test]
    fn scalar_care_linear_case() {
        let (a, q) = (3.0, 2.0);
        let p = RiccatiProblem::new(m(1, 1, &[-a]), m(1, 1, &[q]), m(1, 1, &[0.0])).unwrap();
        let s = solve_care(&p).unwrap();
        assert!((s.x[(0, 0)] - q / (2.0 * a)).abs() < 1e-12);
    }

    #[test]
    fn care_without_stabilizing_solution_reports_eigenvalues() {
        // X*0 + 0*X + X*1*X + 1 = 0 has no real solution; Hamiltonian eigenvalues ±i.
        let p = RiccatiProblem::new(m(1, 1, &[0.0]), m(1, 1, &[1.0]), m(1, 1, &[1.0])).unwrap();
        match solve_care(&p) {
            Err(Error::NoStabilizingSolution { eigenvalues }) => assert!(!eigenvalues.is_empty()),
            other => panic!("expected infeasibility, got {other:?}"),
        }
    }

    #[test]
    fn asymmetric_quadratic_term_rejected() {
        let r = RiccatiProblem::new(Mat::zeros(2, 2), Mat::identity(2, 2), m(2, 2, &[0.0, 1.0, 0.0, 0.0]));
        assert!(matches!(r, Err(Error::Domain(_))));
    }

    #[test]
    fn lyapunov_scalar_and_zero() {
        let s = solve_lyapunov(&m(1, 1, &[-1.0]), &m(1, 1, &[2.0])).unwrap();
        assert!((s.p[(0, 0)] - 1.0).abs() < 1e-14);
        let a = m(2, 2, &[-1.0, 3.0, 0.0, -2.0]);
        let z = solve_lyapunov(&a, &Mat::zeros(2, 2)).unwrap();
        assert_eq!(z.p.norm(), 0.0);
    }

    #[test]
    fn lyapunov_rejects_unstable() {
        let r = solve_lyapunov(&m(1, 1, &[0.5]), &m(1, 1, &[1.0]));
        assert!(matches!(r, Err(Error::NotHurwitz { .. })));
    }

    #[test]
    fn lyapunov_complex_pair() {
        let a = m(3, 3, &[-1.0, 5.0, 0.3, -5.0, -1.0, 0.2, 0.0, 0.0, -0.5]);
        let w = Mat::identity(3, 3);
        let s = solve_lyapunov(&a, &w).unwrap();
        assert!(s.residual < 1e-12, "{}", s.residual);
        assert!(min_symmetric_eigenvalue(&s.p) > 0.0);
    }

    #[test]
    fn expm_identity_and_diagonal() {
        let a = m(2, 2, &[0.3, 1.0, -2.0, 0.1]);
        assert_eq!(expm(&a, 0.0), Mat::identity(2, 2));
        let d = expm(&m(2, 2, &[-1.0, 0.0, 0.0, -2.0]), 1.0);
        assert!((d[(0, 0)] - (-1.0f64).exp()).abs() < 1e-14);
        assert!((d[(1, 1)] - (-2.0f64).exp()).abs() < 1e-14);
        assert!(d[(0, 1)].abs() < 1e-16 && d[(1, 0)].abs() < 1e-16);
    }

    #[test]
    fn spectral_radius_cases() {
        assert!((spectral_radius(&Mat::identity(3, 3)) - 1.0).abs() < 1e-15);
        assert_eq!(spectral_radius(&m(2, 2, &[0.0, 1.0, 0.0, 0.0])), 0.0);
        // companion matrix of (x-2)(x+0.5) = x² - 1.5x - 1
        let c = m(2, 2, &[1.5, 1.0, 1.0, 0.0]);
        assert!((spectral_radius(&c) - 2.0).abs() < 1e-13);
    }

    #[test]
    fn ordered_schur_puts_stable_first() {
        let a = m(4, 4, &[1.0, 2.0, 0.0, 1.0, -3.0, 0.5, 1.0, 0.0, 0.0, 1.0, -2.0, 4.0, 1.0, 0.0, -4.0, -1.0]);
        let (z, t) = real_schur(&a).unwrap();
        let (z, t) = order_schur(z, t, |re, _| re < 0.0).unwrap();
        assert!((&z * &t * z.transpose() - &a).norm() < 1e-12);
        let eigs = quasi_triangular_eigenvalues(&t);
        let first_unstable = eigs.iter().position(|c| c.re >= 0.0).unwrap_or(eigs.len());
        assert!(eigs[first_unstable..].iter().all(|c| c.re >= 0.0));
        assert!(eigs[..first_unstable].iter().all(|c| c.re < 0.0));
    }
}
