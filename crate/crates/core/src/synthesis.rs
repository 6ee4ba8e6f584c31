//! IQC multipliers, the two scaled Riccati equations, estimator gains and the
//! guaranteed cost bound, plus the search over the scaling point `(τ̄, λ)`.

use argmin::core::{CostFunction, Error as ArgminError, Executor, State};
use argmin::solver::neldermead::NelderMead;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{ser_f64_lossless, ser_mat};
use crate::model::CompactPlant;
use crate::numkernel::{self, Mat, RiccatiProblem};

/// Relative Riccati residual accepted for an emitted solution.
pub const RESIDUAL_TOL: f64 = 1e-8;

/// Margin demanded of `M(λ)⁻¹ − JJᵀ` by the optimizer.
pub const FEASIBILITY_SLACK: f64 = 1e-9;

/// Cost assigned to points where the synthesis breaks down.
const PENALTY: f64 = 1e12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingPoint {
    pub tau: f64,
    pub lambda: Vec<f64>,
}

impl ScalingPoint {
    pub fn new(tau: f64, lambda: Vec<f64>) -> Self {
        ScalingPoint { tau, lambda }
    }

    /// The optimum reported for the homodyne example.
    pub fn printed_phase_example() -> Self {
        ScalingPoint::new(1.13e-6, vec![0.9727, 0.4831, 0.0015, 0.0014])
    }
}

/// Which output the cost weights penalize.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TargetOutput {
    /// `C_p0`, the undelayed output.
    #[default]
    Printed,
    /// `C_a`, the delay-model output.
    Delayed,
}

/// Sign of the quadratic term `(1/τ̄) X B̃₁M⁻¹B̃₁ᵀ X` in the control-type equation.
///
/// With `Additive` the homodyne example has no real solution at its reported
/// optimum (the scalar discriminant is negative); `Subtractive` has a
/// stabilizing solution there and reproduces the reported estimator matrices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ControlQuadratic {
    #[default]
    Subtractive,
    Additive,
}

impl ControlQuadratic {
    fn sign(self) -> f64 {
        match self {
            ControlQuadratic::Subtractive => -1.0,
            ControlQuadratic::Additive => 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthesisOptions {
    pub target: TargetOutput,
    pub control_quadratic: ControlQuadratic,
    pub residual_tol: f64,
    pub slack: f64,
}

impl Default for SynthesisOptions {
    fn default() -> Self {
        SynthesisOptions {
            target: TargetOutput::Printed,
            control_quadratic: ControlQuadratic::Subtractive,
            residual_tol: RESIDUAL_TOL,
            slack: 0.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct MultiplierPair {
    pub m: Mat,
    pub n: Mat,
    pub m_parts: Vec<Mat>,
    pub n_parts: Vec<Mat>,
}

/// `M(λ) = Σ λ_i M_i`, `N(λ) = Σ λ_i N_i` over four IQC families, in order:
/// one per uncertainty channel, then for each nonlinearity the difference
/// constraint `(μ−μ̃)² ≤ β²(ν−ν̃)²`, the plant constraint `μ² ≤ β²ν²` and the
/// estimator-copy constraint `μ̃² ≤ β²ν̃²`.
///
/// A nominal compact plant has no scalings and `M = I`.
pub fn assemble_multipliers(compact: &CompactPlant, lambda: &[f64]) -> Result<MultiplierPair> {
    let d = &compact.dims;
    if lambda.len() != d.k_tilde {
        return Err(Error::dim("lambda", d.k_tilde, lambda.len()));
    }
    if compact.nominal {
        return Ok(MultiplierPair {
            m: Mat::identity(d.q, d.q),
            n: Mat::zeros(0, 0),
            m_parts: vec![],
            n_parts: vec![],
        });
    }
    let (rm, rn) = (d.r + 2 * d.g, d.h + 2 * d.g);
    let mut m_parts = Vec::with_capacity(d.k_tilde);
    let mut n_parts = Vec::with_capacity(d.k_tilde);

    let (mut ro, mut ho) = (0, 0);
    for s in 0..d.k {
        let mut ms = Mat::zeros(rm, rm);
        ms.view_mut((ro, ro), (d.r_s[s], d.r_s[s])).fill_with_identity();
        let mut ns = Mat::zeros(rn, rn);
        ns.view_mut((ho, ho), (d.h_s[s], d.h_s[s])).fill_with_identity();
        ro += d.r_s[s];
        ho += d.h_s[s];
        m_parts.push(ms);
        n_parts.push(ns);
    }
    let rank_one = |dim: usize, a: Option<usize>, b: Option<usize>, scale: f64| {
        let mut v = Mat::zeros(dim, 1);
        if let Some(a) = a {
            v[(a, 0)] = 1.0;
        }
        if let Some(b) = b {
            v[(b, 0)] = -1.0;
        }
        &v * v.transpose() * scale
    };
    let beta2: Vec<f64> = compact.lipschitz.iter().map(|b| b * b).collect();
    for i in 0..d.g {
        let (mu, mut_) = (d.r + i, d.r + d.g + i);
        let (nu, nut) = (d.h + i, d.h + d.g + i);
        m_parts.push(rank_one(rm, Some(mu), Some(mut_), 1.0));
        n_parts.push(rank_one(rn, Some(nu), Some(nut), beta2[i]));
    }
    for i in 0..d.g {
        m_parts.push(rank_one(rm, Some(d.r + i), None, 1.0));
        n_parts.push(rank_one(rn, Some(d.h + i), None, beta2[i]));
    }
    for i in 0..d.g {
        m_parts.push(rank_one(rm, Some(d.r + d.g + i), None, 1.0));
        n_parts.push(rank_one(rn, Some(d.h + d.g + i), None, beta2[i]));
    }

    let mut m = Mat::zeros(rm, rm);
    let mut n = Mat::zeros(rn, rn);
    for (i, &l) in lambda.iter().enumerate() {
        m += &m_parts[i] * l;
        n += &n_parts[i] * l;
    }
    Ok(MultiplierPair { m, n, m_parts, n_parts })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Feasibility {
    pub feasible: bool,
    /// `λ_min(M⁻¹ − JJᵀ)`; `-inf` when `M` is not positive definite.
    #[serde(serialize_with = "ser_f64_lossless")]
    pub margin: f64,
}

/// `λ ≥ 0`, `M(λ) ≻ 0` and `M(λ)⁻¹ ⪰ JJᵀ`.
pub fn feasible(compact: &CompactPlant, lambda: &[f64]) -> Feasibility {
    let infeasible = Feasibility { feasible: false, margin: f64::NEG_INFINITY };
    if lambda.len() != compact.dims.k_tilde || lambda.iter().any(|l| !(*l >= 0.0)) {
        return infeasible;
    }
    let Ok(mp) = assemble_multipliers(compact, lambda) else {
        return infeasible;
    };
    let Some(chol) = mp.m.clone().cholesky() else {
        return infeasible;
    };
    let gap = chol.inverse() - &compact.j * compact.j.transpose();
    let margin = numkernel::min_symmetric_eigenvalue(&gap);
    Feasibility { feasible: margin >= 0.0, margin }
}

/// Quantities shared by both Riccati equations at one scaling point.
#[derive(Debug, Clone)]
pub struct ScaledWeights {
    pub m: Mat,
    pub n: Mat,
    pub m_inv: Mat,
    /// `E_λ = D̃₂₁ M⁻¹ D̃₂₁ᵀ`
    pub e: Mat,
    pub e_inv: Mat,
    pub r: Mat,
    pub g: Mat,
    pub g_inv: Mat,
    pub gamma: Mat,
    pub margin: f64,
}

pub fn scaled_weights(compact: &CompactPlant, point: &ScalingPoint, opts: &SynthesisOptions) -> Result<ScaledWeights> {
    let tau = point.tau;
    if !(tau > 0.0) || !tau.is_finite() {
        return Err(Error::Domain(format!("tau must be positive and finite, got {tau}")));
    }
    let f = feasible(compact, &point.lambda);
    if !f.feasible || (!compact.nominal && f.margin < opts.slack) {
        return Err(Error::Infeasible(format!(
            "scaling point violates M(λ)⁻¹ ⪰ JJᵀ (margin {:e}, required {:e})",
            f.margin, opts.slack
        )));
    }
    let mp = assemble_multipliers(compact, &point.lambda)?;
    let m_inv = mp.m.clone().cholesky().expect("checked positive definite").inverse();
    let e = numkernel::symmetrize(&(&compact.d21t * &m_inv * compact.d21t.transpose()));
    let e_inv = e
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Infeasible("E_λ is not positive definite".into()))?
        .inverse();

    let d = &compact.dims;
    let target = match opts.target {
        TargetOutput::Printed => &compact.cp0,
        TargetOutput::Delayed => &compact.ca,
    };
    let r = numkernel::symmetrize(&(target.transpose() * target + compact.c1t.transpose() * &mp.n * &compact.c1t * tau));
    let mut g = &compact.d12t.transpose() * &mp.n * &compact.d12t * tau;
    for i in 0..d.m {
        g[(i, i)] += 1.0;
    }
    let g = numkernel::symmetrize(&g);
    let g_inv = g
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Infeasible("G is not positive definite".into()))?
        .inverse();
    let mut gamma = compact.c1t.transpose() * &mp.n * &compact.d12t * tau;
    gamma.view_mut((0, 0), (d.n, d.m)).sub_assign_from(&target.transpose());
    Ok(ScaledWeights { m: mp.m, n: mp.n, m_inv, e, e_inv, r, g, g_inv, gamma, margin: f.margin })
}

trait SubAssignFrom {
    fn sub_assign_from(&mut self, other: &Mat);
}

impl SubAssignFrom for nalgebra::DMatrixViewMut<'_, f64> {
    fn sub_assign_from(&mut self, other: &Mat) {
        for j in 0..other.ncols() {
            for i in 0..other.nrows() {
                self[(i, j)] -= other[(i, j)];
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct RiccatiOutcome {
    pub solution: Mat,
    pub relative_residual: f64,
}

fn check_residual(name: &str, sol: &numkernel::CareSolution, tol: f64) -> Result<()> {
    if !(sol.relative_residual <= tol) {
        return Err(Error::Numerical(format!(
            "{name} Riccati residual {:e} exceeds {tol:e}",
            sol.relative_residual
        )));
    }
    Ok(())
}

/// The filter-type equation
///
/// ```text
/// Ã Y + Y Ãᵀ − Y (C̃₂ᵀE⁻¹C̃₂ − R/τ̄) Y + B̃₁(M⁻¹ − M⁻¹D̃₂₁ᵀE⁻¹D̃₂₁M⁻¹)B̃₁ᵀ = 0,
/// Ã = A_p − B̃₁M⁻¹D̃₂₁ᵀE⁻¹C̃₂.
/// ```
///
/// `r_scale` multiplies the `R/τ̄` term; `1` is the synthesis equation and `0`
/// the plain Kalman filter equation for the scaled noise.
pub fn filter_riccati_scaled(
    compact: &CompactPlant,
    point: &ScalingPoint,
    w: &ScaledWeights,
    r_scale: f64,
    tol: f64,
) -> Result<RiccatiOutcome> {
    let b1mi = &compact.b1t * &w.m_inv;
    let cross = &b1mi * compact.d21t.transpose() * &w.e_inv;
    let a_shift = &compact.ap - &cross * &compact.c2t;
    let q = numkernel::symmetrize(&(&b1mi * compact.b1t.transpose() - &cross * &compact.d21t * b1mi.transpose()));
    let quad = compact.c2t.transpose() * &w.e_inv * &compact.c2t - &w.r * (r_scale / point.tau);
    let prob = RiccatiProblem::new(a_shift.transpose(), q, numkernel::symmetrize(&(-quad)))?;
    let sol = numkernel::solve_care(&prob)?;
    check_residual("filter", &sol, tol)?;
    if !numkernel::is_positive_definite(&sol.x) {
        return Err(Error::Infeasible(format!(
            "filter Riccati solution is not positive definite (λ_min = {:e})",
            numkernel::min_symmetric_eigenvalue(&sol.x)
        )));
    }
    Ok(RiccatiOutcome { solution: sol.x, relative_residual: sol.relative_residual })
}

pub fn filter_riccati(compact: &CompactPlant, point: &ScalingPoint, w: &ScaledWeights, tol: f64) -> Result<RiccatiOutcome> {
    filter_riccati_scaled(compact, point, w, 1.0, tol)
}

/// The control-type equation
/// `X A_p + A_pᵀ X ∓ (1/τ̄) X B̃₁M⁻¹B̃₁ᵀ X + R − Γ G⁻¹ Γᵀ = 0`.
pub fn control_riccati(
    compact: &CompactPlant,
    point: &ScalingPoint,
    w: &ScaledWeights,
    form: ControlQuadratic,
    tol: f64,
) -> Result<RiccatiOutcome> {
    let s = &compact.b1t * &w.m_inv * compact.b1t.transpose() * (form.sign() / point.tau);
    let q = &w.r - &w.gamma * &w.g_inv * w.gamma.transpose();
    let prob = RiccatiProblem::new(compact.ap.clone(), numkernel::symmetrize(&q), numkernel::symmetrize(&s))?;
    let sol = numkernel::solve_care(&prob)?;
    check_residual("control", &sol, tol)?;
    let x = sol.x;
    let floor = -1e-10 * x.norm().max(f64::MIN_POSITIVE);
    let min_eig = numkernel::min_symmetric_eigenvalue(&x);
    if min_eig < floor {
        return Err(Error::Infeasible(format!(
            "control Riccati solution is not positive semidefinite (λ_min = {min_eig:e})"
        )));
    }
    Ok(RiccatiOutcome { solution: x, relative_residual: sol.relative_residual })
}

#[derive(Debug, Clone, Serialize)]
pub struct SynthesisSolution {
    pub point: ScalingPoint,
    #[serde(serialize_with = "ser_mat")]
    pub y: Mat,
    #[serde(serialize_with = "ser_mat")]
    pub x: Mat,
    #[serde(serialize_with = "ser_mat")]
    pub ac: Mat,
    #[serde(serialize_with = "ser_mat")]
    pub bc: Mat,
    #[serde(serialize_with = "ser_mat")]
    pub cc: Mat,
    pub vtau: f64,
    pub rho_yx: f64,
    pub residual_y: f64,
    pub residual_x: f64,
    pub feasibility_margin: f64,
    #[serde(serialize_with = "ser_mat")]
    pub m: Mat,
    #[serde(serialize_with = "ser_mat")]
    pub n: Mat,
    #[serde(serialize_with = "ser_mat")]
    pub e: Mat,
    /// Rows of `bc` belonging to the plant states; the rest are smoother rows.
    pub n_bar: usize,
}

impl SynthesisSolution {
    /// Filter block of `B̃_c`.
    pub fn filter_gain(&self) -> Mat {
        self.bc.rows(0, self.n_bar).clone_owned()
    }

    /// Smoother block of `B̃_c` (delay-state rows).
    pub fn smoother_gain(&self) -> Mat {
        self.bc.rows(self.n_bar, self.bc.nrows() - self.n_bar).clone_owned()
    }

    /// Recompute `B̃_c` from the stored `Y` and report the largest relative deviation.
    pub fn gain_consistency(&self, compact: &CompactPlant) -> Result<f64> {
        let w = scaled_weights(compact, &self.point, &SynthesisOptions { slack: 0.0, ..Default::default() })?;
        let bc = (&self.y * compact.c2t.transpose() + &compact.b1t * &w.m_inv * compact.d21t.transpose()) * &w.e_inv;
        Ok((&bc - &self.bc).norm() / self.bc.norm().max(f64::MIN_POSITIVE))
    }
}

fn coupling_inverse(y: &Mat, x: &Mat, tau: f64) -> Result<(Mat, f64)> {
    let yx = y * x;
    let rho = numkernel::spectral_radius(&yx);
    if !(rho < tau) {
        return Err(Error::Coupling { rho, tau });
    }
    let n = y.nrows();
    let z = (Mat::identity(n, n) - yx / tau)
        .try_inverse()
        .ok_or_else(|| Error::Numerical("I − YX/τ̄ is singular".into()))?;
    Ok((z, rho))
}

/// Estimator matrices `A_c`, `B̃_c`, `C̃_c` from `Y`, `X`.
pub fn compute_gains(compact: &CompactPlant, point: &ScalingPoint, w: &ScaledWeights, y: &Mat, x: &Mat) -> Result<(Mat, Mat, Mat, f64)> {
    let (z, rho) = coupling_inverse(y, x, point.tau)?;
    let tau = point.tau;
    let bc = (y * compact.c2t.transpose() + &compact.b1t * &w.m_inv * compact.d21t.transpose()) * &w.e_inv;
    let ggt = &w.gamma * &w.g_inv * w.gamma.transpose();
    let ac = &compact.ap + y * &w.r / tau - &bc * &compact.c2t - y * ggt * &z / tau;
    let cc = -(&w.g_inv * w.gamma.transpose() * &z);
    Ok((ac, bc, cc, rho))
}

/// `V = ½ tr[Y R + B̃_c (C̃₂Y + D̃₂₁M⁻¹B̃₁ᵀ) X (I − YX/τ̄)⁻¹]`.
pub fn cost_bound(compact: &CompactPlant, point: &ScalingPoint, w: &ScaledWeights, y: &Mat, x: &Mat) -> Result<f64> {
    let (z, _) = coupling_inverse(y, x, point.tau)?;
    let left = (y * compact.c2t.transpose() + &compact.b1t * &w.m_inv * compact.d21t.transpose()) * &w.e_inv;
    let right = &compact.c2t * y + &compact.d21t * &w.m_inv * compact.b1t.transpose();
    Ok(0.5 * (y * &w.r + left * right * x * z).trace())
}

/// Full synthesis at one scaling point, with every certificate checked.
pub fn synthesize(compact: &CompactPlant, point: &ScalingPoint, opts: &SynthesisOptions) -> Result<SynthesisSolution> {
    let w = scaled_weights(compact, point, opts)?;
    let y = filter_riccati(compact, point, &w, opts.residual_tol)?;
    let x = control_riccati(compact, point, &w, opts.control_quadratic, opts.residual_tol)?;
    let (ac, bc, cc, rho) = compute_gains(compact, point, &w, &y.solution, &x.solution)?;
    let vtau = cost_bound(compact, point, &w, &y.solution, &x.solution)?;
    if !vtau.is_finite() {
        return Err(Error::Numerical(format!("cost bound is not finite ({vtau})")));
    }
    Ok(SynthesisSolution {
        point: point.clone(),
        y: y.solution,
        x: x.solution,
        ac,
        bc,
        cc,
        vtau,
        rho_yx: rho,
        residual_y: y.relative_residual,
        residual_x: x.relative_residual,
        feasibility_margin: w.margin,
        m: w.m,
        n: w.n,
        e: w.e,
        n_bar: compact.dims.n_bar,
    })
}

/// Equal multipliers scaled to half the feasibility boundary.
pub fn default_lambda(compact: &CompactPlant) -> Vec<f64> {
    let k = compact.dims.k_tilde;
    let ones = vec![1.0; k];
    let Ok(mp) = assemble_multipliers(compact, &ones) else {
        return ones;
    };
    let jmj = numkernel::symmetrize(&(compact.j.transpose() * &mp.m * &compact.j));
    let top = -numkernel::min_symmetric_eigenvalue(&(-jmj));
    if top > 0.0 {
        vec![0.5 / top; k]
    } else {
        ones
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SearchOptions {
    pub starts: usize,
    pub seed: u64,
    /// Box each `λ_i` is drawn from and confined to. The lower edge keeps
    /// `M(λ)` well conditioned.
    pub lambda_min: f64,
    pub lambda_max: f64,
    /// Half-width of the initial `log₁₀ τ̄` bracket around the start.
    pub tau_decades: f64,
    pub tau_grid: usize,
    pub golden_iters: usize,
    pub inner_iters: u64,
    pub polish_iters: u64,
}

impl Default for SearchOptions {
    fn default() -> Self {
        SearchOptions {
            starts: 8,
            seed: 0,
            lambda_min: 1e-8,
            lambda_max: 1.0,
            tau_decades: 2.0,
            tau_grid: 17,
            golden_iters: 30,
            inner_iters: 300,
            polish_iters: 3000,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct TraceEntry {
    pub start: usize,
    pub stage: &'static str,
    pub tau: f64,
    pub lambda: Vec<f64>,
    pub vtau: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct SearchResult {
    pub best: SynthesisSolution,
    pub start_values: Vec<Option<f64>>,
    pub evaluations: usize,
    pub trace: Vec<TraceEntry>,
}

struct Objective<'a> {
    compact: &'a CompactPlant,
    opts: SynthesisOptions,
    lambda_min: f64,
    lambda_max: f64,
}

/// Relative step back from the feasibility boundary after radial scaling.
const RADIAL_BACKOFF: f64 = 1e-7;

impl Objective<'_> {
    /// Map `ln λ` into the feasible set: clamp to the box, then scale radially
    /// so that `JᵀM(λ)J ⪯ I` (equivalently `M(λ)⁻¹ ⪰ JJᵀ`) holds with a margin.
    fn project(&self, theta: &[f64]) -> Vec<f64> {
        let raw: Vec<f64> = theta
            .iter()
            .map(|t| t.exp().clamp(self.lambda_min, self.lambda_max))
            .collect();
        if self.compact.nominal || raw.is_empty() {
            return raw;
        }
        let Ok(mp) = assemble_multipliers(self.compact, &raw) else {
            return raw;
        };
        let jmj = numkernel::symmetrize(&(self.compact.j.transpose() * &mp.m * &self.compact.j));
        let top = -numkernel::min_symmetric_eigenvalue(&(-jmj));
        let scale = if top > 0.0 { (1.0 - RADIAL_BACKOFF) / top } else { 1.0 };
        if scale >= 1.0 {
            raw
        } else {
            raw.iter().map(|l| l * scale).collect()
        }
    }

    fn value(&self, tau: f64, lambda: &[f64]) -> f64 {
        let floor = self.lambda_min * (1.0 - 1e-3);
        if lambda.iter().any(|l| !(*l >= floor && *l <= self.lambda_max)) {
            return PENALTY;
        }
        let point = ScalingPoint::new(tau, lambda.to_vec());
        match synthesize(self.compact, &point, &self.opts) {
            Ok(s) if s.vtau >= 0.0 => s.vtau,
            _ => PENALTY,
        }
    }
}

/// Floor applied before taking logarithms of `λ`.
const LOG_FLOOR: f64 = 1e-300;

fn to_log(lambda: &[f64]) -> Vec<f64> {
    lambda.iter().map(|l| l.max(LOG_FLOOR).ln()).collect()
}

/// `ln λ` only, at fixed `τ̄`.
struct LambdaCost<'a> {
    obj: &'a Objective<'a>,
    tau: f64,
}

impl CostFunction for LambdaCost<'_> {
    type Param = Vec<f64>;
    type Output = f64;
    fn cost(&self, p: &Vec<f64>) -> std::result::Result<f64, ArgminError> {
        Ok(self.obj.value(self.tau, &self.obj.project(p)))
    }
}

/// `[log₁₀ τ̄, ln λ…]` jointly.
struct JointCost<'a> {
    obj: &'a Objective<'a>,
}

impl CostFunction for JointCost<'_> {
    type Param = Vec<f64>;
    type Output = f64;
    fn cost(&self, p: &Vec<f64>) -> std::result::Result<f64, ArgminError> {
        Ok(self.obj.value(10f64.powf(p[0]), &self.obj.project(&p[1..])))
    }
}

fn simplex_around(x: &[f64], steps: &[f64]) -> Vec<Vec<f64>> {
    let mut out = vec![x.to_vec()];
    for i in 0..x.len() {
        let mut v = x.to_vec();
        v[i] += steps[i];
        out.push(v);
    }
    out
}

fn nelder_mead<C>(cost: C, simplex: Vec<Vec<f64>>, iters: u64) -> Option<(Vec<f64>, f64)>
where
    C: CostFunction<Param = Vec<f64>, Output = f64>,
{
    let solver = NelderMead::new(simplex).with_sd_tolerance(1e-14).ok()?;
    let res = Executor::new(cost, solver).configure(|s| s.max_iters(iters)).run().ok()?;
    let st = res.state();
    Some((st.get_best_param()?.clone(), st.get_best_cost()))
}

/// Log-space steps that shrink `λ` when it sits at the top of the box.
fn log_steps(theta: &[f64], size: f64, max: f64) -> Vec<f64> {
    let top = max.ln();
    theta.iter().map(|&t| if t + size <= top { size } else { -size }).collect()
}

type StartOutcome = (Option<(f64, Vec<f64>, f64)>, usize, Vec<TraceEntry>);

fn run_start(obj: &Objective, start: usize, init: &ScalingPoint, so: &SearchOptions) -> StartOutcome {
    let mut trace = Vec::new();
    let mut evals = 0usize;
    let k = init.lambda.len();
    let record = |stage: &'static str, tau: f64, lam: &[f64], v: f64, trace: &mut Vec<TraceEntry>| {
        trace.push(TraceEntry { start, stage, tau, lambda: lam.to_vec(), vtau: v });
    };

    // λ search at fixed τ̄, in ln λ
    let inner = |tau: f64, theta: &[f64], evals: &mut usize| -> (Vec<f64>, f64) {
        let base = obj.value(tau, &obj.project(theta));
        *evals += 1;
        if k == 0 {
            return (vec![], base);
        }
        let steps = log_steps(theta, 0.5, obj.lambda_max);
        *evals += so.inner_iters as usize;
        match nelder_mead(LambdaCost { obj, tau }, simplex_around(theta, &steps), so.inner_iters) {
            Some((p, v)) if v < base => (p, v),
            _ => (theta.to_vec(), base),
        }
    };

    // coarse log-τ̄ scan, warm-starting λ along the way
    let c = init.tau.log10();
    let lo = c - so.tau_decades;
    let hi = c + so.tau_decades;
    let grid = so.tau_grid.max(3);
    let mut theta = to_log(&init.lambda);
    let mut scan = Vec::with_capacity(grid);
    for i in 0..grid {
        let lt = lo + (hi - lo) * i as f64 / (grid - 1) as f64;
        let (t, v) = inner(10f64.powf(lt), &theta, &mut evals);
        if v < PENALTY {
            theta = t.clone();
        }
        scan.push((lt, t, v));
    }
    let (ibest, _) = scan
        .iter()
        .enumerate()
        .min_by(|a, b| a.1 .2.total_cmp(&b.1 .2))
        .expect("non-empty grid");
    if !(scan[ibest].2 < PENALTY) {
        return (None, evals, trace);
    }
    record("scan", 10f64.powf(scan[ibest].0), &obj.project(&scan[ibest].1), scan[ibest].2, &mut trace);

    // golden section on log τ̄ between the scan neighbours
    let (mut a, mut b) = (scan[ibest.saturating_sub(1)].0, scan[(ibest + 1).min(grid - 1)].0);
    let phi = 0.5 * (5f64.sqrt() - 1.0);
    let mut best = (scan[ibest].0, scan[ibest].1.clone(), scan[ibest].2);
    let eval_at = |lt: f64, evals: &mut usize, best: &mut (f64, Vec<f64>, f64)| -> f64 {
        let (t, v) = inner(10f64.powf(lt), &best.1.clone(), evals);
        if v < best.2 {
            *best = (lt, t, v);
        }
        v
    };
    let mut x1 = b - phi * (b - a);
    let mut x2 = a + phi * (b - a);
    let mut f1 = eval_at(x1, &mut evals, &mut best);
    let mut f2 = eval_at(x2, &mut evals, &mut best);
    for _ in 0..so.golden_iters {
        if f1 <= f2 {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - phi * (b - a);
            f1 = eval_at(x1, &mut evals, &mut best);
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + phi * (b - a);
            f2 = eval_at(x2, &mut evals, &mut best);
        }
    }
    record("golden", 10f64.powf(best.0), &obj.project(&best.1), best.2, &mut trace);

    // joint polish, restarted until it stalls
    let mut p: Vec<f64> = std::iter::once(best.0).chain(best.1.iter().copied()).collect();
    let mut v = best.2;
    for _ in 0..8 {
        let mut steps = vec![0.05];
        steps.extend(log_steps(&p[1..], 0.2, obj.lambda_max));
        evals += so.polish_iters as usize;
        match nelder_mead(JointCost { obj }, simplex_around(&p, &steps), so.polish_iters) {
            Some((q, w)) if w < v => {
                let gain = (v - w) / v.abs().max(f64::MIN_POSITIVE);
                p = q;
                v = w;
                if gain < 1e-12 {
                    break;
                }
            }
            _ => break,
        }
    }
    let lambda = obj.project(&p[1..]);
    record("polish", 10f64.powf(p[0]), &lambda, v, &mut trace);
    (Some((10f64.powf(p[0]), lambda, v)), evals, trace)
}

/// Minimize the cost bound over `(τ̄, λ)`.
///
/// Start 0 is `init`; the others draw `λ` uniformly from the box (keeping only
/// feasible draws) with the same `τ̄`. Each start runs a log-τ̄ scan and golden
/// section with a Nelder–Mead search over `λ` inside, then a joint polish. The
/// best start wins; ties go to the lexicographically smaller `λ`.
pub fn minimize_bound(compact: &CompactPlant, init: &ScalingPoint, opts: &SynthesisOptions, so: &SearchOptions) -> Result<SearchResult> {
    let obj = Objective {
        compact,
        opts: SynthesisOptions { slack: opts.slack.max(FEASIBILITY_SLACK), ..*opts },
        lambda_min: so.lambda_min,
        lambda_max: so.lambda_max,
    };
    if init.lambda.len() != compact.dims.k_tilde {
        return Err(Error::dim("lambda", compact.dims.k_tilde, init.lambda.len()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(so.seed);
    let mut starts = vec![init.clone()];
    let mut tries = 0;
    while starts.len() < so.starts.max(1) && tries < 10_000 * so.starts.max(1) {
        tries += 1;
        let lam: Vec<f64> = (0..compact.dims.k_tilde).map(|_| so.lambda_min + rng.random::<f64>() * (so.lambda_max - so.lambda_min)).collect();
        if compact.nominal || feasible(compact, &lam).margin >= obj.opts.slack {
            starts.push(ScalingPoint::new(init.tau, lam));
        }
        if compact.dims.k_tilde == 0 {
            break;
        }
    }

    let runs: Vec<_> = starts
        .par_iter()
        .enumerate()
        .map(|(i, s)| run_start(&obj, i, s, so))
        .collect();

    let mut evaluations = 0;
    let mut trace = Vec::new();
    let mut start_values = Vec::new();
    let mut best: Option<(f64, Vec<f64>, f64)> = None;
    for (res, ev, tr) in runs {
        evaluations += ev;
        trace.extend(tr);
        start_values.push(res.as_ref().map(|r| r.2));
        if let Some(r) = res {
            let better = match &best {
                None => true,
                Some(b) => r.2 < b.2 || (r.2 == b.2 && r.1.partial_cmp(&b.1) == Some(std::cmp::Ordering::Less)),
            };
            if better {
                best = Some(r);
            }
        }
    }
    let (tau, lambda, _) = best.ok_or_else(|| Error::Infeasible("no feasible scaling point found within the search budget".into()))?;
    let best = synthesize(compact, &ScalingPoint::new(tau, lambda), &obj.opts)?;
    Ok(SearchResult { best, start_values, evaluations, trace })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::delay::DelayModel;
    use crate::model::{PhaseParams, UncertainPlant};

    fn phase() -> CompactPlant {
        CompactPlant::from_plant(&UncertainPlant::phase_tracking(&PhaseParams::default()), &DelayModel::printed_phase_example()).unwrap()
    }

    #[test]
    fn printed_multiplier_structure() {
        let c = phase();
        let mp = assemble_multipliers(&c, &[0.9727, 0.4831, 0.0015, 0.0014]).unwrap();
        let m = Mat::from_row_slice(3, 3, &[0.9727, 0.0, 0.0, 0.0, 0.4846, -0.4831, 0.0, -0.4831, 0.4845]);
        assert!((&mp.m - &m).norm() < 1e-15);
        assert!((&mp.n - &m).norm() < 1e-15);
    }

    #[test]
    fn wrong_lambda_length() {
        assert!(matches!(assemble_multipliers(&phase(), &[1.0; 3]), Err(Error::Dimension { .. })));
    }

    #[test]
    fn printed_point_is_feasible() {
        let c = phase();
        assert!(feasible(&c, &ScalingPoint::printed_phase_example().lambda).feasible);
        assert!(!feasible(&c, &[1.0; 4]).feasible);
        assert!(!feasible(&c, &[0.5, 0.0, 0.0, 0.0]).feasible);
        assert!(!feasible(&c, &[0.5, 0.1, -0.1, 0.1]).feasible);
    }

    #[test]
    fn printed_point_synthesizes() {
        let c = phase();
        let s = synthesize(&c, &ScalingPoint::printed_phase_example(), &SynthesisOptions::default()).unwrap();
        assert!(s.residual_y <= RESIDUAL_TOL && s.residual_x <= RESIDUAL_TOL);
        assert!(s.rho_yx < s.point.tau);
        assert!(s.gain_consistency(&c).unwrap() < 1e-10);
        assert_eq!(s.filter_gain().nrows(), 1);
        assert_eq!(s.smoother_gain().nrows(), 2);
        assert!((s.bc[(0, 0)] / 4.45e5 - 1.0).abs() < 0.01, "{}", s.bc);
        assert!((s.vtau - 0.135).abs() < 0.01, "{}", s.vtau);
    }

    #[test]
    fn coupling_violation_reports_rho() {
        let y = Mat::identity(2, 2);
        let x = Mat::identity(2, 2) * 3.0;
        match coupling_inverse(&y, &x, 2.0) {
            Err(Error::Coupling { rho, tau }) => assert_eq!((rho, tau), (3.0, 2.0)),
            other => panic!("{other:?}"),
        }
    }
}
