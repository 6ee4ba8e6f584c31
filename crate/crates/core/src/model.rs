//! Uncertain plant, delay augmentation and the compact synthesis form.
//!
//! Index conventions used throughout the crate:
//! - uncertainty channels `s = 1..k` carry `ξ_s ∈ ℝ^{r_s}` / `ζ_s ∈ ℝ^{h_s}`;
//! - nonlinearities `i = 1..g` carry scalar `μ_i = ψ_i(ν_i)`;
//! - the compact input `ξ̃ = [ξ_1..ξ_k, μ_1..μ_g, μ̃_1..μ̃_g]`,
//!   output `ζ̃ = [ζ_1..ζ_k, ν_1..ν_g, ν̃_1..ν̃_g]`.

use std::fmt;
use std::sync::Arc;

use nalgebra::SVD;
use serde::{Deserialize, Serialize};

use crate::delay::DelayModel;
use crate::error::{Error, Result};
use crate::numkernel::{self, Mat};

/// Default lower bound `d₀` for `D̄₂₁ D̄₂₁ᵀ ⪰ d₀ I`.
pub const DEFAULT_D0: f64 = 1e-10;

/// Residual above which a least-squares `J` is rejected.
pub const J_RESIDUAL_TOL: f64 = 1e-8;

#[derive(Debug, Clone)]
pub struct UncertainPlant {
    pub a: Mat,
    /// Noise input gain, `n̄ × q`.
    pub b1: Mat,
    /// `B̄_{1i}`, one `n̄ × 1` column per nonlinearity.
    pub nl_in: Vec<Mat>,
    /// `B_{1s}`, one `n̄ × r_s` block per uncertainty channel.
    pub unc_in: Vec<Mat>,
    /// Estimated output `w = C₀ x`.
    pub c0: Mat,
    /// `C_{1s}`, `h_s × n̄`.
    pub unc_out: Vec<Mat>,
    /// `C̄_{1i}`, `1 × n̄`.
    pub nl_out: Vec<Mat>,
    pub c2: Mat,
    pub d21: Mat,
    /// `D_{21,s}`, `l × r_s`.
    pub unc_meas: Vec<Mat>,
    /// `D̄_{21,i}`, `l × 1`.
    pub nl_meas: Vec<Mat>,
    /// Lipschitz constants `β_i` of the nonlinearities.
    pub lipschitz: Vec<f64>,
    /// Initial-condition weights `S_s` of the uncertainty IQCs. They only shape
    /// finite-horizon transients and do not enter the infinite-horizon synthesis.
    pub iqc_weights: Vec<Mat>,
}

/// Physical parameters of the adaptive homodyne phase-tracking loop.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhaseParams {
    /// Mean-reversion rate of the phase (rad/s).
    pub lambda: f64,
    /// Phase diffusion intensity (rad/s).
    pub kappa: f64,
    /// Coherent amplitude |α| (1/s).
    pub alpha: f64,
    /// Slope of the sine at the operating point.
    pub beta: f64,
    /// Sector half-width.
    pub gamma: f64,
}

impl Default for PhaseParams {
    fn default() -> Self {
        PhaseParams { lambda: 9.14e3, kappa: 40000.0, alpha: 1162.0, beta: 1.0, gamma: 0.4 }
    }
}

fn scalar(v: f64) -> Mat {
    Mat::from_element(1, 1, v)
}

impl UncertainPlant {
    pub fn state_dim(&self) -> usize {
        self.a.nrows()
    }
    pub fn noise_dim(&self) -> usize {
        self.b1.ncols()
    }
    pub fn output_dim(&self) -> usize {
        self.c0.nrows()
    }
    pub fn meas_dim(&self) -> usize {
        self.c2.nrows()
    }
    pub fn nonlinearity_count(&self) -> usize {
        self.nl_in.len()
    }
    pub fn channel_count(&self) -> usize {
        self.unc_in.len()
    }

    /// Linearized homodyne loop with a sector-bounded measurement nonlinearity.
    ///
    /// `ν = 2αγ φ`, the nonlinearity enters the normalized measurement through
    /// `1/(2αβ)`, and the process noise is routed through an uncertainty channel
    /// whose output is identically zero. With `γ = 0` the sector collapses and
    /// the nominal plant (no channels, no nonlinearities) is returned.
    pub fn phase_tracking(p: &PhaseParams) -> Self {
        let sqk = p.kappa.sqrt();
        let d = 1.0 / (2.0 * p.alpha * p.beta);
        let mut plant = UncertainPlant {
            a: scalar(-p.lambda),
            b1: Mat::from_row_slice(1, 2, &[sqk, 0.0]),
            nl_in: vec![],
            unc_in: vec![],
            c0: scalar(1.0),
            unc_out: vec![],
            nl_out: vec![],
            c2: scalar(1.0),
            d21: Mat::from_row_slice(1, 2, &[0.0, d]),
            unc_meas: vec![],
            nl_meas: vec![],
            lipschitz: vec![],
            iqc_weights: vec![],
        };
        if p.gamma > 0.0 {
            plant.nl_in = vec![scalar(0.0)];
            plant.unc_in = vec![scalar(sqk)];
            plant.unc_out = vec![scalar(0.0)];
            plant.nl_out = vec![scalar(2.0 * p.alpha * p.gamma)];
            plant.unc_meas = vec![scalar(0.0)];
            plant.nl_meas = vec![scalar(d)];
            plant.lipschitz = vec![1.0];
            plant.iqc_weights = vec![scalar(1.0)];
        }
        plant
    }

    /// Dimension and definiteness audit. An empty list means the plant is well formed.
    pub fn validate(&self) -> Vec<String> {
        let mut v = Vec::new();
        let n = self.a.nrows();
        let q = self.b1.ncols();
        let m = self.c0.nrows();
        let l = self.c2.nrows();
        let mut shape = |name: String, mat: &Mat, rows: Option<usize>, cols: Option<usize>| {
            if let Some(r) = rows {
                if mat.nrows() != r {
                    v.push(format!("{name}: expected {r} rows, got {}", mat.nrows()));
                }
            }
            if let Some(c) = cols {
                if mat.ncols() != c {
                    v.push(format!("{name}: expected {c} columns, got {}", mat.ncols()));
                }
            }
        };
        shape("A".into(), &self.a, Some(n), Some(n));
        shape("B1".into(), &self.b1, Some(n), None);
        shape("C0".into(), &self.c0, None, Some(n));
        shape("C2".into(), &self.c2, None, Some(n));
        shape("D21".into(), &self.d21, Some(l), Some(q));
        for (s, b) in self.unc_in.iter().enumerate() {
            shape(format!("B1_{}", s + 1), b, Some(n), None);
        }
        for (s, c) in self.unc_out.iter().enumerate() {
            shape(format!("C1_{}", s + 1), c, None, Some(n));
        }
        for (s, d) in self.unc_meas.iter().enumerate() {
            let r = self.unc_in.get(s).map(|b| b.ncols());
            shape(format!("D21_{}", s + 1), d, Some(l), r);
        }
        for (i, b) in self.nl_in.iter().enumerate() {
            shape(format!("Bbar1_{}", i + 1), b, Some(n), Some(1));
        }
        for (i, c) in self.nl_out.iter().enumerate() {
            shape(format!("Cbar1_{}", i + 1), c, Some(1), Some(n));
        }
        for (i, d) in self.nl_meas.iter().enumerate() {
            shape(format!("Dbar21_{}", i + 1), d, Some(l), Some(1));
        }
        for (s, w) in self.iqc_weights.iter().enumerate() {
            shape(format!("S_{}", s + 1), w, Some(n), Some(n));
        }
        let _ = m;

        let k = self.unc_in.len();
        for (name, len) in [
            ("C1 (uncertainty outputs)", self.unc_out.len()),
            ("D21_s (uncertainty feedthrough)", self.unc_meas.len()),
            ("S (IQC weights)", self.iqc_weights.len()),
        ] {
            if len != k {
                v.push(format!("{name}: expected {k} channel blocks, got {len}"));
            }
        }
        let g = self.nl_in.len();
        for (name, len) in [
            ("Cbar1 (nonlinearity outputs)", self.nl_out.len()),
            ("Dbar21 (nonlinearity feedthrough)", self.nl_meas.len()),
            ("beta (Lipschitz constants)", self.lipschitz.len()),
        ] {
            if len != g {
                v.push(format!("{name}: expected {g} entries, got {len}"));
            }
        }
        for (i, b) in self.lipschitz.iter().enumerate() {
            if !(*b > 0.0) || !b.is_finite() {
                v.push(format!("beta_{} must be positive, got {b}", i + 1));
            }
        }
        for (s, w) in self.iqc_weights.iter().enumerate() {
            if !w.is_square() {
                continue;
            }
            if (w - w.transpose()).norm() > 1e-12 * (1.0 + w.norm()) {
                v.push(format!("S_{} not symmetric", s + 1));
            } else if !numkernel::is_positive_definite(w) {
                v.push(format!("S_{} not positive definite", s + 1));
            }
        }
        v
    }

    pub fn ensure_valid(&self) -> Result<()> {
        let v = self.validate();
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(format!("plant is malformed: {}", v.join("; "))))
        }
    }
}

/// A scalar nonlinearity `μ = ψ(ν)` tagged with its Lipschitz constant.
#[derive(Clone)]
pub struct Nonlinearity {
    pub name: String,
    pub lipschitz: f64,
    psi: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
}

impl fmt::Debug for Nonlinearity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Nonlinearity")
            .field("name", &self.name)
            .field("lipschitz", &self.lipschitz)
            .finish()
    }
}

impl Nonlinearity {
    pub fn new(name: impl Into<String>, lipschitz: f64, psi: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        Nonlinearity { name: name.into(), lipschitz, psi: Arc::new(psi) }
    }

    /// `ψ(ν) = sin(ν/s) − ν/s`: the homodyne sine deviation seen through the
    /// input scaling `s = 2αγ`. Its slope lies in `[-2/s, 0]`.
    pub fn homodyne_deviation(scale: f64) -> Self {
        Nonlinearity::new("sin(nu/s) - nu/s", 2.0 / scale, move |nu| {
            let x = nu / scale;
            x.sin() - x
        })
    }

    pub fn eval(&self, nu: f64) -> f64 {
        (self.psi)(nu)
    }
}

#[derive(Debug, Clone, Default)]
pub struct NonlinearityBank {
    pub items: Vec<Nonlinearity>,
}

impl NonlinearityBank {
    pub fn new(items: Vec<Nonlinearity>) -> Self {
        NonlinearityBank { items }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Checks `ψ_i(0) = 0` and the Lipschitz bound on a `points × points` grid
    /// of pairs in `[-range, range]`. Returns the violations found.
    pub fn audit(&self, range: f64, points: usize, tol: f64) -> Vec<String> {
        let mut out = Vec::new();
        let grid: Vec<f64> = (0..points)
            .map(|i| -range + 2.0 * range * i as f64 / (points.max(2) - 1) as f64)
            .collect();
        for (i, nl) in self.items.iter().enumerate() {
            let at_zero = nl.eval(0.0);
            if at_zero != 0.0 {
                out.push(format!("psi_{}(0) = {at_zero:e}, expected 0", i + 1));
            }
            let vals: Vec<f64> = grid.iter().map(|&x| nl.eval(x)).collect();
            let mut worst = 0.0f64;
            for a in 0..grid.len() {
                for b in (a + 1)..grid.len() {
                    let excess = (vals[a] - vals[b]).abs() - nl.lipschitz * (grid[a] - grid[b]).abs();
                    worst = worst.max(excess);
                }
            }
            if worst > tol {
                out.push(format!(
                    "psi_{} exceeds Lipschitz bound {} by {worst:e}",
                    i + 1,
                    nl.lipschitz
                ));
            }
        }
        out
    }
}

/// The plant with the delay states appended: `x_p = [x; x_a]`.
#[derive(Debug, Clone)]
pub struct AugmentedPlant {
    pub ap: Mat,
    pub bp1: Mat,
    pub nl_in: Vec<Mat>,
    pub unc_in: Vec<Mat>,
    pub cp0: Mat,
    pub unc_out: Vec<Mat>,
    pub nl_out: Vec<Mat>,
    pub cp2: Mat,
    pub d21: Mat,
    pub unc_meas: Vec<Mat>,
    pub nl_meas: Vec<Mat>,
    /// Delayed-output row block `[J_a C₀, H_a]`.
    pub ca: Mat,
    pub n_bar: usize,
    pub n_a: usize,
    pub lipschitz: Vec<f64>,
    pub delay: DelayModel,
}

fn pad_rows(m: &Mat, extra: usize) -> Mat {
    let mut out = Mat::zeros(m.nrows() + extra, m.ncols());
    out.view_mut((0, 0), m.shape()).copy_from(m);
    out
}

fn pad_cols(m: &Mat, extra: usize) -> Mat {
    let mut out = Mat::zeros(m.nrows(), m.ncols() + extra);
    out.view_mut((0, 0), m.shape()).copy_from(m);
    out
}

pub fn augment_with_delay(plant: &UncertainPlant, delay: &DelayModel) -> Result<AugmentedPlant> {
    plant.ensure_valid()?;
    let nb = plant.state_dim();
    let na = delay.state_dim();
    let m = plant.output_dim();
    if delay.ga.ncols() != m || delay.ja.shape() != (m, m) || delay.ha.nrows() != m || delay.ga.nrows() != na {
        return Err(Error::dim(
            "delay input/output vs C0",
            format!("G_a {na}x{m}, H_a {m}x{na}, J_a {m}x{m}"),
            format!("G_a {:?}, H_a {:?}, J_a {:?}", delay.ga.shape(), delay.ha.shape(), delay.ja.shape()),
        ));
    }
    let n = nb + na;
    let mut ap = Mat::zeros(n, n);
    ap.view_mut((0, 0), (nb, nb)).copy_from(&plant.a);
    if na > 0 {
        ap.view_mut((nb, 0), (na, nb)).copy_from(&(&delay.ga * &plant.c0));
        ap.view_mut((nb, nb), (na, na)).copy_from(&delay.fa);
    }
    let mut ca = Mat::zeros(m, n);
    ca.view_mut((0, 0), (m, nb)).copy_from(&(&delay.ja * &plant.c0));
    if na > 0 {
        ca.view_mut((0, nb), (m, na)).copy_from(&delay.ha);
    }
    Ok(AugmentedPlant {
        ap,
        bp1: pad_rows(&plant.b1, na),
        nl_in: plant.nl_in.iter().map(|b| pad_rows(b, na)).collect(),
        unc_in: plant.unc_in.iter().map(|b| pad_rows(b, na)).collect(),
        cp0: pad_cols(&plant.c0, na),
        unc_out: plant.unc_out.iter().map(|c| pad_cols(c, na)).collect(),
        nl_out: plant.nl_out.iter().map(|c| pad_cols(c, na)).collect(),
        cp2: pad_cols(&plant.c2, na),
        d21: plant.d21.clone(),
        unc_meas: plant.unc_meas.clone(),
        nl_meas: plant.nl_meas.clone(),
        ca,
        n_bar: nb,
        n_a: na,
        lipschitz: plant.lipschitz.clone(),
        delay: delay.clone(),
    })
}

/// Dimensions of the compact form.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CompactDims {
    pub n: usize,
    pub n_bar: usize,
    pub n_a: usize,
    pub m: usize,
    pub l: usize,
    pub q: usize,
    pub g: usize,
    pub k: usize,
    pub r_s: Vec<usize>,
    pub h_s: Vec<usize>,
    pub r: usize,
    pub h: usize,
    /// `h + 2g`
    pub p: usize,
    /// `k + 3g`, the number of IQC scalings.
    pub k_tilde: usize,
}

/// Compact uncertain system in which the estimator acts as a controller:
///
/// ```text
/// dx_p = (A_p x_p + B̃₁ ξ̃) dt + B_p1 dW
/// ζ̃    = C̃₁ x_p + D̃₁₂ ũ
/// dỹ   = (C̃₂ x_p + D̃₂₁ ξ̃) dt + D̄₂₁ dW
/// ```
#[derive(Debug, Clone)]
pub struct CompactPlant {
    pub ap: Mat,
    /// Noise gain padded with `g` zero columns: `n × (q+g)`.
    pub bp1: Mat,
    pub b1t: Mat,
    pub c1t: Mat,
    pub d12t: Mat,
    pub c2t: Mat,
    pub d21t: Mat,
    pub d21bar: Mat,
    pub j: Mat,
    pub j21: Mat,
    pub cp0: Mat,
    pub ca: Mat,
    pub lipschitz: Vec<f64>,
    pub dims: CompactDims,
    /// No uncertainty channels and no nonlinearities: `ξ̃` is the noise itself
    /// and the multiplier is fixed to the identity.
    pub nominal: bool,
    /// `‖[B_p1; D̄₂₁] − [B̃₁; D̃₂₁] J‖_F`.
    pub assumption1_residual: f64,
    /// `λ_min(D̄₂₁ D̄₂₁ᵀ)`.
    pub assumption2_margin: f64,
}

fn vstack(blocks: &[&Mat], cols: usize) -> Mat {
    let rows: usize = blocks.iter().map(|b| b.nrows()).sum();
    let mut out = Mat::zeros(rows, cols);
    let mut r = 0;
    for b in blocks {
        out.view_mut((r, 0), (b.nrows(), b.ncols())).copy_from(b);
        r += b.nrows();
    }
    out
}

fn hstack(blocks: &[&Mat], rows: usize) -> Mat {
    let cols: usize = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = Mat::zeros(rows, cols);
    let mut c = 0;
    for b in blocks {
        out.view_mut((0, c), (b.nrows(), b.ncols())).copy_from(b);
        c += b.ncols();
    }
    out
}

/// Assemble the compact form. `j21` defaults to `I_g`; `d0` is the Assumption 2 floor.
pub fn build_compact(aug: &AugmentedPlant, j21: Option<&Mat>, d0: f64) -> Result<CompactPlant> {
    let n = aug.ap.nrows();
    let g = aug.nl_in.len();
    let k = aug.unc_in.len();
    let m = aug.cp0.nrows();
    let l = aug.cp2.nrows();
    let q = aug.bp1.ncols();
    let r_s: Vec<usize> = aug.unc_in.iter().map(|b| b.ncols()).collect();
    let h_s: Vec<usize> = aug.unc_out.iter().map(|c| c.nrows()).collect();
    let r: usize = r_s.iter().sum();
    let h: usize = h_s.iter().sum();
    let dims = CompactDims {
        n,
        n_bar: aug.n_bar,
        n_a: aug.n_a,
        m,
        l,
        q,
        g,
        k,
        r_s,
        h_s,
        r,
        h,
        p: h + 2 * g,
        k_tilde: k + 3 * g,
    };

    let j21 = match j21 {
        Some(j) => j.clone(),
        None => Mat::identity(g, g),
    };
    if j21.shape() != (g, g) {
        return Err(Error::dim("J21", format!("{g}x{g}"), format!("{}x{}", j21.nrows(), j21.ncols())));
    }
    if g > 0 && !numkernel::is_positive_definite(&j21) {
        return Err(Error::Domain("J21 must be positive definite".into()));
    }

    let nominal = r + 2 * g == 0;
    let (bp1, b1t, c1t, d12t, c2t, d21t, d21bar) = if nominal {
        (
            aug.bp1.clone(),
            aug.bp1.clone(),
            Mat::zeros(0, n),
            Mat::zeros(0, m),
            aug.cp2.clone(),
            aug.d21.clone(),
            aug.d21.clone(),
        )
    } else {
        let zero_ng = Mat::zeros(n, g);
        let mut b1_blocks: Vec<&Mat> = aug.unc_in.iter().collect();
        b1_blocks.extend(aug.nl_in.iter());
        b1_blocks.push(&zero_ng);
        let b1t = hstack(&b1_blocks, n);

        let zero_gn = Mat::zeros(g, n);
        let mut c1_blocks: Vec<&Mat> = aug.unc_out.iter().collect();
        c1_blocks.extend(aug.nl_out.iter());
        c1_blocks.push(&zero_gn);
        let c1t = vstack(&c1_blocks, n);

        let mut d12t = Mat::zeros(h + 2 * g, m + g);
        d12t.view_mut((h + g, m), (g, g)).fill_with_identity();

        let c2t = vstack(&[&aug.cp2, &Mat::zeros(g, n)], n);

        let mut d21t = Mat::zeros(l + g, r + 2 * g);
        let mut col = 0;
        for d in aug.unc_meas.iter().chain(aug.nl_meas.iter()) {
            d21t.view_mut((0, col), (l, d.ncols())).copy_from(d);
            col += d.ncols();
        }
        d21t.view_mut((l, r + g), (g, g)).fill_with_identity();

        let mut d21bar = Mat::zeros(l + g, q + g);
        d21bar.view_mut((0, 0), (l, q)).copy_from(&aug.d21);
        d21bar.view_mut((l, q), (g, g)).copy_from(&j21);

        (pad_cols(&aug.bp1, g), b1t, c1t, d12t, c2t, d21t, d21bar)
    };

    let lhs = vstack(&[&b1t, &d21t], b1t.ncols());
    let rhs = vstack(&[&bp1, &d21bar], bp1.ncols());
    let identity_fits = lhs.ncols() == rhs.ncols() && (&lhs - &rhs).norm() <= 1e-12 * (1.0 + rhs.norm());
    let j = if identity_fits {
        Mat::identity(lhs.ncols(), rhs.ncols())
    } else {
        SVD::new(lhs.clone(), true, true)
            .solve(&rhs, 1e-14 * lhs.norm().max(1.0))
            .map_err(|e| Error::Numerical(format!("least-squares J: {e}")))?
    };
    let assumption1_residual = (&lhs * &j - &rhs).norm();
    if assumption1_residual > J_RESIDUAL_TOL * rhs.norm().max(1.0) {
        return Err(Error::Infeasible(format!(
            "no J with [B_p1; D̄21] = [B̃1; D̃21] J (least-squares residual {assumption1_residual:e})"
        )));
    }

    let assumption2_margin = numkernel::min_symmetric_eigenvalue(&(&d21bar * d21bar.transpose()));
    if !(assumption2_margin >= d0) {
        return Err(Error::Infeasible(format!(
            "measurement noise channel is singular: λ_min(D̄21 D̄21ᵀ) = {assumption2_margin:e} < d0 = {d0:e}"
        )));
    }

    Ok(CompactPlant {
        ap: aug.ap.clone(),
        bp1,
        b1t,
        c1t,
        d12t,
        c2t,
        d21t,
        d21bar,
        j,
        j21,
        cp0: aug.cp0.clone(),
        ca: aug.ca.clone(),
        lipschitz: aug.lipschitz.clone(),
        dims,
        nominal,
        assumption1_residual,
        assumption2_margin,
    })
}

impl CompactPlant {
    /// Build plant → augmentation → compact form with default `J₂₁` and `d₀`.
    pub fn from_plant(plant: &UncertainPlant, delay: &DelayModel) -> Result<Self> {
        let aug = augment_with_delay(plant, delay)?;
        build_compact(&aug, None, DEFAULT_D0)
    }

    /// Apply the state similarity `x_p ↦ T⁻¹ x_p` to every state-facing matrix.
    pub fn transformed(&self, t: &Mat) -> Result<Self> {
        let ti = t
            .clone()
            .try_inverse()
            .ok_or_else(|| Error::Domain("similarity transform is singular".into()))?;
        let mut out = self.clone();
        out.ap = &ti * &self.ap * t;
        out.bp1 = &ti * &self.bp1;
        out.b1t = &ti * &self.b1t;
        out.c1t = &self.c1t * t;
        out.c2t = &self.c2t * t;
        out.cp0 = &self.cp0 * t;
        out.ca = &self.ca * t;
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::delay::pade_delay;

    fn phase_compact() -> CompactPlant {
        let plant = UncertainPlant::phase_tracking(&PhaseParams::default());
        CompactPlant::from_plant(&plant, &DelayModel::printed_phase_example()).unwrap()
    }

    #[test]
    fn phase_plant_is_valid() {
        let plant = UncertainPlant::phase_tracking(&PhaseParams::default());
        assert!(plant.validate().is_empty(), "{:?}", plant.validate());
        assert_eq!(plant.a[(0, 0)], -9.14e3);
        assert_eq!(plant.nl_in[0][(0, 0)], 0.0);
    }

    #[test]
    fn zero_iqc_weight_is_reported() {
        let mut plant = UncertainPlant::phase_tracking(&PhaseParams::default());
        plant.iqc_weights[0] = Mat::zeros(1, 1);
        let v = plant.validate();
        assert_eq!(v, vec!["S_1 not positive definite".to_string()]);
    }

    #[test]
    fn wrong_c2_width_is_reported() {
        let mut plant = UncertainPlant::phase_tracking(&PhaseParams::default());
        plant.c2 = Mat::from_row_slice(1, 2, &[1.0, 0.0]);
        let v = plant.validate();
        assert!(v.iter().any(|s| s.starts_with("C2")), "{v:?}");
    }

    #[test]
    fn nonpositive_lipschitz_is_reported() {
        let mut plant = UncertainPlant::phase_tracking(&PhaseParams::default());
        plant.lipschitz[0] = 0.0;
        assert!(plant.validate().iter().any(|s| s.contains("beta_1")));
    }

    #[test]
    fn printed_augmented_matrix() {
        let plant = UncertainPlant::phase_tracking(&PhaseParams::default());
        let aug = augment_with_delay(&plant, &DelayModel::printed_phase_example()).unwrap();
        let expected = Mat::from_row_slice(
            3,
            3,
            &[-9.14e3, 0.0, 0.0, 2048.0, -1.94e6, -1.19e6, 0.0, 1.048e6, 0.0],
        );
        assert_eq!(aug.ap, expected);
        assert_eq!(aug.cp0, Mat::from_row_slice(1, 3, &[1.0, 0.0, 0.0]));
        assert_eq!(aug.cp2, Mat::from_row_slice(1, 3, &[1.0, 0.0, 0.0]));
        assert_eq!(aug.nl_out[0], Mat::from_row_slice(1, 3, &[929.6, 0.0, 0.0]));
        assert_eq!(aug.bp1, Mat::from_row_slice(3, 2, &[200.0, 0.0, 0.0, 0.0, 0.0, 0.0]));
        assert_eq!(aug.d21, plant.d21);
    }

    #[test]
    fn empty_delay_leaves_plant_unchanged() {
        let plant = UncertainPlant::phase_tracking(&PhaseParams::default());
        let aug = augment_with_delay(&plant, &DelayModel::none(1)).unwrap();
        assert_eq!(aug.ap, plant.a);
        assert_eq!(aug.ca, plant.c0);
    }

    #[test]
    fn mismatched_delay_width_is_rejected() {
        let plant = UncertainPlant::phase_tracking(&PhaseParams::default());
        let d = pade_delay(2, 3.1e-6).unwrap().replicate(2);
        assert!(matches!(augment_with_delay(&plant, &d), Err(Error::Dimension { .. })));
    }

    #[test]
    fn printed_compact_matrices() {
        let c = phase_compact();
        let b1 = Mat::from_row_slice(3, 3, &[200.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        assert_eq!(c.b1t, b1);
        assert_eq!(c.c1t.row(1).clone_owned(), Mat::from_row_slice(1, 3, &[929.6, 0.0, 0.0]));
        assert_eq!(c.c1t.row(2).iter().map(|v| v.abs()).sum::<f64>(), 0.0);
        assert_eq!(c.d12t, Mat::from_row_slice(3, 2, &[0.0, 0.0, 0.0, 0.0, 0.0, 1.0]));
        assert_eq!(c.c2t, Mat::from_row_slice(2, 3, &[1.0, 0.0, 0.0, 0.0, 0.0, 0.0]));
        let d = 1.0 / (2.0 * 1162.0);
        let d21 = Mat::from_row_slice(2, 3, &[0.0, d, 0.0, 0.0, 0.0, 1.0]);
        assert_eq!(c.d21bar, d21);
        assert_eq!(c.d21t, d21);
        assert!((d - 4e-4).abs() < 0.31e-4); // printed to one significant digit
        assert_eq!(c.dims.k_tilde, 4);
        assert_eq!((c.dims.h, c.dims.r, c.dims.p), (1, 1, 3));
        assert_eq!(c.j, Mat::identity(3, 3));
        assert_eq!(c.assumption1_residual, 0.0);
    }

    #[test]
    fn nominal_plant_degenerates() {
        let p = PhaseParams { gamma: 0.0, ..PhaseParams::default() };
        let plant = UncertainPlant::phase_tracking(&p);
        let c = CompactPlant::from_plant(&plant, &pade_delay(1, 3.1e-6).unwrap()).unwrap();
        assert!(c.nominal);
        assert_eq!(c.dims.k_tilde, 0);
        assert_eq!(c.c1t.nrows(), 0);
        assert_eq!(c.b1t, c.bp1);
    }

    #[test]
    fn singular_noise_channel_names_d0() {
        let mut plant = UncertainPlant::phase_tracking(&PhaseParams::default());
        plant.d21 = Mat::zeros(1, 2);
        plant.nl_meas[0] = Mat::zeros(1, 1);
        let aug = augment_with_delay(&plant, &DelayModel::printed_phase_example()).unwrap();
        match build_compact(&aug, None, DEFAULT_D0) {
            Err(Error::Infeasible(msg)) => assert!(msg.contains("d0"), "{msg}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn homodyne_deviation_passes_audit() {
        let bank = NonlinearityBank::new(vec![Nonlinearity::homodyne_deviation(929.6)]);
        assert!(bank.audit(3000.0, 201, 1e-12).is_empty());
        let bad = NonlinearityBank::new(vec![Nonlinearity::new("3x", 1.0, |x| 3.0 * x)]);
        assert_eq!(bad.audit(1.0, 11, 1e-12).len(), 1);
        let shifted = NonlinearityBank::new(vec![Nonlinearity::new("x+1", 1.0, |x| x + 1.0)]);
        assert!(shifted.audit(1.0, 11, 1e-12)[0].contains("(0)"));
    }
}
