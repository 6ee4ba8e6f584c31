//! Uncertain closed loop of plant and estimator, its stationary covariance,
//! and the fixed-lag smoothing error covariance.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::io::{fmt_f64, ser_f64_lossless, ser_mat};
use crate::model::CompactPlant;
use crate::numkernel::{self, Mat};
use crate::synthesis::SynthesisSolution;

#[derive(Debug, Clone, Serialize)]
pub struct ClosedLoopModel {
    #[serde(serialize_with = "ser_mat")]
    pub abold: Mat,
    #[serde(serialize_with = "ser_mat")]
    pub bbold: Mat,
    #[serde(serialize_with = "ser_mat")]
    pub delta: Mat,
    /// Plant-state (and estimator-state) dimension.
    pub n: usize,
    /// `C_p0`, the estimated output.
    #[serde(serialize_with = "ser_mat")]
    pub cp0: Mat,
    /// `C_a`, the smoothed-output selector applied to the estimator state.
    #[serde(serialize_with = "ser_mat")]
    pub ca: Mat,
    /// Leading `m` rows of `C̃_c`, the filter output.
    #[serde(serialize_with = "ser_mat")]
    pub filter_out: Mat,
}

/// `Δ = diag(Δ₁ I, Δ₂ I, Δ₂ I)` over the uncertainty, plant-nonlinearity and
/// estimator-copy channels.
pub fn structured_delta(compact: &CompactPlant, delta1: f64, delta2: f64) -> Mat {
    let d = &compact.dims;
    if compact.nominal {
        return Mat::zeros(0, 0);
    }
    let mut out = Mat::zeros(d.r + 2 * d.g, d.h + 2 * d.g);
    let (mut ro, mut ho) = (0, 0);
    for s in 0..d.k {
        for i in 0..d.r_s[s].min(d.h_s[s]) {
            out[(ro + i, ho + i)] = delta1;
        }
        ro += d.r_s[s];
        ho += d.h_s[s];
    }
    for i in 0..2 * d.g {
        out[(d.r + i, d.h + i)] = delta2;
    }
    out
}

/// Closed loop `dX = 𝐀 X dt + 𝐁 dW` with `ξ̃ = Δ ζ̃`.
///
/// With `fictitious_noise` the estimator is driven by the full `D̄₂₁` including
/// the `J₂₁` block; without it that block is zeroed.
pub fn build_closed_loop_with(
    compact: &CompactPlant,
    sol: &SynthesisSolution,
    delta: &Mat,
    fictitious_noise: bool,
) -> Result<ClosedLoopModel> {
    build_closed_loop_from(compact, &sol.ac, &sol.bc, &sol.cc, delta, fictitious_noise)
}

/// As [`build_closed_loop_with`] for estimator matrices from any source.
pub fn build_closed_loop_from(
    compact: &CompactPlant,
    ac: &Mat,
    bc: &Mat,
    cc: &Mat,
    delta: &Mat,
    fictitious_noise: bool,
) -> Result<ClosedLoopModel> {
    let d = &compact.dims;
    if ac.shape() != (d.n, d.n) || bc.shape() != (d.n, compact.c2t.nrows()) || cc.shape() != (compact.d12t.ncols().max(d.m), d.n) {
        return Err(Error::dim(
            "estimator matrices",
            format!("A_c {n}x{n}, B_c {n}x{}, C_c {}x{n}", compact.c2t.nrows(), compact.d12t.ncols().max(d.m), n = d.n),
            format!("A_c {:?}, B_c {:?}, C_c {:?}", ac.shape(), bc.shape(), cc.shape()),
        ));
    }
    let n = d.n;
    let zero_delta = compact.nominal;
    if !zero_delta {
        let expected = (d.r + 2 * d.g, d.h + 2 * d.g);
        if delta.shape() != expected {
            return Err(Error::dim("Delta", format!("{}x{}", expected.0, expected.1), format!("{}x{}", delta.nrows(), delta.ncols())));
        }
        let norm = delta.clone().svd(false, false).singular_values.max();
        if !(norm <= 1.0 + 1e-12) {
            return Err(Error::Domain(format!("Delta lies outside the unit ball (spectral norm {norm})")));
        }
    }

    let mut abold = Mat::zeros(2 * n, 2 * n);
    let bc_c2 = bc * &compact.c2t;
    if zero_delta {
        abold.view_mut((0, 0), (n, n)).copy_from(&compact.ap);
        abold.view_mut((n, 0), (n, n)).copy_from(&bc_c2);
        abold.view_mut((n, n), (n, n)).copy_from(ac);
    } else {
        let b1d = &compact.b1t * delta;
        let bcd = bc * &compact.d21t * delta;
        abold.view_mut((0, 0), (n, n)).copy_from(&(&compact.ap + &b1d * &compact.c1t));
        abold.view_mut((0, n), (n, n)).copy_from(&(&b1d * &compact.d12t * cc));
        abold.view_mut((n, 0), (n, n)).copy_from(&(&bc_c2 + &bcd * &compact.c1t));
        abold.view_mut((n, n), (n, n)).copy_from(&(ac + &bcd * &compact.d12t * cc));
    }

    let mut d21bar = compact.d21bar.clone();
    if !fictitious_noise && !compact.nominal {
        d21bar.view_mut((d.l, d.q), (d.g, d.g)).fill(0.0);
    }
    let w = compact.bp1.ncols();
    let mut bbold = Mat::zeros(2 * n, w);
    bbold.view_mut((0, 0), (n, w)).copy_from(&compact.bp1);
    bbold.view_mut((n, 0), (n, w)).copy_from(&(bc * &d21bar));

    Ok(ClosedLoopModel {
        abold,
        bbold,
        delta: delta.clone(),
        n,
        cp0: compact.cp0.clone(),
        ca: compact.ca.clone(),
        filter_out: cc.rows(0, d.m).clone_owned(),
    })
}

pub fn build_closed_loop(compact: &CompactPlant, sol: &SynthesisSolution, delta: &Mat) -> Result<ClosedLoopModel> {
    build_closed_loop_with(compact, sol, delta, true)
}

#[derive(Debug, Clone, Serialize)]
pub struct CovarianceReport {
    #[serde(serialize_with = "ser_mat")]
    pub p: Mat,
    #[serde(serialize_with = "ser_mat")]
    pub phi: Mat,
    #[serde(serialize_with = "ser_mat")]
    pub psa: Mat,
    #[serde(serialize_with = "ser_mat")]
    pub pf: Mat,
    pub lag: f64,
    pub lyapunov_residual: f64,
}

impl CovarianceReport {
    /// `Psa[0,0]`, the scalar figure for single-output plants.
    pub fn psa_scalar(&self) -> f64 {
        self.psa[(0, 0)]
    }
    pub fn pf_scalar(&self) -> f64 {
        self.pf[(0, 0)]
    }
}

/// Stationary covariance `𝐀P + P𝐀ᵀ + 𝐁𝐁ᵀ = 0` and, with `L = [C_p0, 0]`,
/// `R = [0, C_a]`, `Φ = e^{𝐀δ}`:
///
/// ```text
/// Psa = L P Lᵀ − R Φ P Lᵀ − (R Φ P Lᵀ)ᵀ + R P Rᵀ
/// Pf  = (L − F) P (L − F)ᵀ,   F = [0, C̃_c(1:m, :)]
/// ```
pub fn smoothed_error_covariance(cl: &ClosedLoopModel, lag: f64) -> Result<CovarianceReport> {
    if !(lag >= 0.0) {
        return Err(Error::Domain(format!("lag must be nonnegative, got {lag}")));
    }
    let n = cl.n;
    let bbt = &cl.bbold * cl.bbold.transpose();
    let lyap = numkernel::solve_lyapunov(&cl.abold, &bbt)?;
    let p = lyap.p;
    let phi = numkernel::expm(&cl.abold, lag);

    let m = cl.cp0.nrows();
    let mut l = Mat::zeros(m, 2 * n);
    l.view_mut((0, 0), (m, n)).copy_from(&cl.cp0);
    let mut r = Mat::zeros(m, 2 * n);
    r.view_mut((0, n), (m, n)).copy_from(&cl.ca);
    let mut f = Mat::zeros(m, 2 * n);
    f.view_mut((0, n), (m, n)).copy_from(&cl.filter_out);

    let cross = &r * &phi * &p * l.transpose();
    let psa = numkernel::symmetrize(&(&l * &p * l.transpose() - &cross - cross.transpose() + &r * &p * r.transpose()));
    let lf = &l - &f;
    let pf = numkernel::symmetrize(&(&lf * &p * lf.transpose()));
    Ok(CovarianceReport { p, phi, psa, pf, lag, lyapunov_residual: lyap.residual })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SweepRow {
    pub delta2: f64,
    #[serde(serialize_with = "ser_f64_lossless")]
    pub psa: f64,
    #[serde(serialize_with = "ser_f64_lossless")]
    pub pf: f64,
    pub hurwitz: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepOptions {
    pub lag: f64,
    pub fictitious_noise: bool,
    pub delta1: f64,
}

/// Evenly spaced grid from 0 down to −1 with `points` entries.
pub fn default_grid(points: usize) -> Vec<f64> {
    if points <= 1 {
        return vec![0.0];
    }
    (0..points).map(|i| -(i as f64) / (points - 1) as f64).collect()
}

/// Scalar covariances over a grid of `Δ₂ ∈ [−1, 0]`, sorted by `Δ₂`.
///
/// Points where the loop is not Hurwitz are kept with `hurwitz = false` and NaN
/// covariances.
pub fn delta_sweep(compact: &CompactPlant, sol: &SynthesisSolution, grid: &[f64], opts: &SweepOptions) -> Result<Vec<SweepRow>> {
    if let Some(bad) = grid.iter().find(|v| !(**v >= -1.0 && **v <= 0.0)) {
        return Err(Error::Domain(format!("sweep point {bad} lies outside [-1, 0]")));
    }
    let mut rows = grid
        .par_iter()
        .map(|&d2| {
            let delta = structured_delta(compact, opts.delta1, d2);
            let cl = build_closed_loop_with(compact, sol, &delta, opts.fictitious_noise)?;
            match smoothed_error_covariance(&cl, opts.lag) {
                Ok(rep) => Ok(SweepRow { delta2: d2, psa: rep.psa_scalar(), pf: rep.pf_scalar(), hurwitz: true }),
                Err(Error::NotHurwitz { .. }) => Ok(SweepRow { delta2: d2, psa: f64::NAN, pf: f64::NAN, hurwitz: false }),
                Err(e) => Err(e),
            }
        })
        .collect::<Result<Vec<_>>>()?;
    rows.sort_by(|a, b| a.delta2.total_cmp(&b.delta2));
    Ok(rows)
}

/// Shape checks on a sweep sorted by `Δ₂`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SweepProperties {
    /// Both columns grow (within `tol`, relative) as `|Δ₂|` grows.
    pub monotone: bool,
    /// `psa ≤ pf` at every point.
    pub smoother_dominates: bool,
    /// Every row is Hurwitz, including `Δ₂ = −1` when present.
    pub all_hurwitz: bool,
    /// Largest relative decrease of either column as `|Δ₂|` grows.
    pub worst_monotonicity_violation: f64,
}

pub fn sweep_properties(rows: &[SweepRow], tol: f64) -> SweepProperties {
    let mut by_mag: Vec<&SweepRow> = rows.iter().collect();
    by_mag.sort_by(|a, b| a.delta2.abs().total_cmp(&b.delta2.abs()));
    let mut worst = 0.0f64;
    for w in by_mag.windows(2) {
        for (a, b) in [(w[0].psa, w[1].psa), (w[0].pf, w[1].pf)] {
            worst = worst.max((a - b) / a.abs().max(f64::MIN_POSITIVE));
        }
    }
    SweepProperties {
        monotone: !(worst > tol),
        smoother_dominates: rows.iter().all(|r| r.psa <= r.pf),
        all_hurwitz: rows.iter().all(|r| r.hurwitz),
        worst_monotonicity_violation: worst,
    }
}

/// `delta2,psa,pf,hurwitz` with a leading `#` comment line.
pub fn sweep_csv(rows: &[SweepRow], opts: &SweepOptions) -> String {
    let mut out = format!(
        "# lag={} fictitious_noise={} delta1={} filter_output=Cc_row1 estimator_includes_delay_states=true\n",
        fmt_f64(opts.lag),
        opts.fictitious_noise,
        fmt_f64(opts.delta1)
    );
    out.push_str("delta2,psa,pf,hurwitz\n");
    for r in rows {
        out.push_str(&format!("{},{},{},{}\n", fmt_f64(r.delta2), fmt_f64(r.psa), fmt_f64(r.pf), r.hurwitz));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::delay::DelayModel;
    use crate::model::{PhaseParams, UncertainPlant};
    use crate::synthesis::{synthesize, ScalingPoint, SynthesisOptions};

    fn setup() -> (CompactPlant, SynthesisSolution) {
        let c = CompactPlant::from_plant(&UncertainPlant::phase_tracking(&PhaseParams::default()), &DelayModel::printed_phase_example()).unwrap();
        let s = synthesize(&c, &ScalingPoint::printed_phase_example(), &SynthesisOptions::default()).unwrap();
        (c, s)
    }

    #[test]
    fn zero_delta_is_block_lower_triangular() {
        let (c, s) = setup();
        let cl = build_closed_loop(&c, &s, &structured_delta(&c, 0.0, 0.0)).unwrap();
        assert_eq!(cl.abold.view((0, 3), (3, 3)).norm(), 0.0);
        assert_eq!(cl.abold.view((0, 0), (3, 3)).clone_owned(), c.ap);
        assert_eq!(cl.abold.view((3, 3), (3, 3)).clone_owned(), s.ac);
    }

    #[test]
    fn delta_outside_unit_ball_is_rejected() {
        let (c, s) = setup();
        let bad = structured_delta(&c, 0.0, -1.5);
        assert!(matches!(build_closed_loop(&c, &s, &bad), Err(Error::Domain(_))));
    }

    #[test]
    fn top_right_block_vanishes_on_example() {
        // D̃₁₂ only reaches the ν̃ row, and B̃₁ has no μ̃ column.
        let (c, s) = setup();
        let cl = build_closed_loop(&c, &s, &structured_delta(&c, 0.7, -0.9)).unwrap();
        assert_eq!(cl.abold.view((0, 3), (3, 3)).norm(), 0.0);
    }

    #[test]
    fn worst_case_loop_is_hurwitz() {
        let (c, s) = setup();
        let cl = build_closed_loop(&c, &s, &structured_delta(&c, 0.0, -1.0)).unwrap();
        assert!(numkernel::is_hurwitz(&cl.abold));
    }

    #[test]
    fn smoother_beats_filter_at_nominal() {
        let (c, s) = setup();
        let cl = build_closed_loop(&c, &s, &structured_delta(&c, 0.0, 0.0)).unwrap();
        let rep = smoothed_error_covariance(&cl, 3.1e-6).unwrap();
        assert!(rep.psa_scalar() < rep.pf_scalar());
        assert!(rep.psa_scalar() > 0.0);
    }

    #[test]
    fn sweep_rejects_points_outside_range() {
        let (c, s) = setup();
        let o = SweepOptions { lag: 3.1e-6, fictitious_noise: true, delta1: 0.0 };
        assert!(delta_sweep(&c, &s, &[0.5], &o).is_err());
        assert_eq!(delta_sweep(&c, &s, &[0.0], &o).unwrap().len(), 1);
    }

    #[test]
    fn csv_layout() {
        let rows = [SweepRow { delta2: -1.0, psa: 0.5, pf: 0.75, hurwitz: true }];
        let o = SweepOptions { lag: 0.0, fictitious_noise: true, delta1: 0.0 };
        let csv = sweep_csv(&rows, &o);
        let lines: Vec<&str> = csv.lines().collect();
        assert!(lines[0].starts_with('#'));
        assert_eq!(lines[1], "delta2,psa,pf,hurwitz");
        assert_eq!(lines[2], "-1.0000000000000000e0,5.0000000000000000e-1,7.5000000000000000e-1,true");
    }
}
