//! Finite-dimensional state-space approximations of a pure delay `e^{-sδ}`.

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::numkernel::{self, Mat};

/// Number of frequency points used by [`delay_response_error`] and the all-pass check.
pub const RESPONSE_GRID: usize = 257;

pub const MAX_PADE_ORDER: usize = 6;

/// `ẋ_a = F_a x_a + G_a w`, `w_a = H_a x_a + J_a w`.
#[derive(Debug, Clone, Serialize)]
pub struct DelayModel {
    #[serde(serialize_with = "crate::io::ser_mat")]
    pub fa: Mat,
    #[serde(serialize_with = "crate::io::ser_mat")]
    pub ga: Mat,
    #[serde(serialize_with = "crate::io::ser_mat")]
    pub ha: Mat,
    #[serde(serialize_with = "crate::io::ser_mat")]
    pub ja: Mat,
    pub delta: f64,
    pub order: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Realization {
    /// Controller canonical form with diagonal state scaling so that the
    /// subdiagonal and first-row entries have comparable magnitudes, and input
    /// and output gains of equal norm.
    #[default]
    Balanced,
    /// Plain controller canonical form (unit subdiagonal, `G_a = e₁`).
    Companion,
}

/// Monic denominator coefficients `[a_0, a_1, …, a_{N-1}, 1]` of the `[N/N]`
/// Padé approximant of `e^{-sδ}`; the numerator is the denominator evaluated at `-s`.
pub fn pade_coefficients(order: usize, delta: f64) -> Vec<f64> {
    // c_k = (2N-k)! N! / ((2N)! k! (N-k)!) δ^k, then divide through by c_N.
    let n = order;
    let fact = |k: usize| (1..=k).fold(1.0f64, |acc, i| acc * i as f64);
    let c: Vec<f64> = (0..=n)
        .map(|k| fact(2 * n - k) * fact(n) / (fact(2 * n) * fact(k) * fact(n - k)) * delta.powi(k as i32))
        .collect();
    c.iter().map(|ck| ck / c[n]).collect()
}

/// State-space realization of the `[order/order]` Padé approximant of `e^{-sδ}`.
pub fn pade_delay(order: usize, delta: f64) -> Result<DelayModel> {
    pade_delay_with(order, delta, Realization::Balanced)
}

pub fn pade_delay_with(order: usize, delta: f64, realization: Realization) -> Result<DelayModel> {
    if !(delta > 0.0) || !delta.is_finite() {
        return Err(Error::Domain(format!("delay must be positive, got {delta}")));
    }
    if !(1..=MAX_PADE_ORDER).contains(&order) {
        return Err(Error::Unsupported(format!(
            "Padé order {order} (supported 1..={MAX_PADE_ORDER})"
        )));
    }
    let n = order;
    let a = pade_coefficients(n, delta);
    let sign_n = if n % 2 == 0 { 1.0 } else { -1.0 };

    let mut fa = Mat::zeros(n, n);
    for j in 0..n {
        fa[(0, j)] = -a[n - 1 - j];
    }
    for i in 1..n {
        fa[(i, i - 1)] = 1.0;
    }
    let mut ga = Mat::zeros(n, 1);
    ga[(0, 0)] = 1.0;
    // strictly proper remainder of den(-s)/den(s) - (-1)^N
    let mut ha = Mat::zeros(1, n);
    for j in 0..n {
        let k = n - 1 - j;
        let sign_k = if k % 2 == 0 { 1.0 } else { -1.0 };
        ha[(0, j)] = (sign_k - sign_n) * a[k];
    }
    let ja = Mat::from_element(1, 1, sign_n);

    if realization == Realization::Balanced {
        let omega = a[0].powf(1.0 / n as f64);
        let scale: Vec<f64> = (0..n).map(|j| omega.powi(-(j as i32))).collect();
        for i in 0..n {
            for j in 0..n {
                fa[(i, j)] *= scale[j] / scale[i];
            }
        }
        for j in 0..n {
            ha[(0, j)] *= scale[j];
        }
        let g = ha.norm().sqrt();
        if g > 0.0 {
            ga *= g;
            ha /= g;
        }
    }

    Ok(DelayModel { fa, ga, ha, ja, delta, order })
}

impl DelayModel {
    /// Zero-state delay model (`n_a = 0`): passes `w` straight through.
    pub fn none(m: usize) -> Self {
        DelayModel {
            fa: Mat::zeros(0, 0),
            ga: Mat::zeros(0, m),
            ha: Mat::zeros(m, 0),
            ja: Mat::identity(m, m),
            delta: 0.0,
            order: 0,
        }
    }

    /// The second-order 3.1 µs delay exactly as printed for the phase-tracking
    /// example (`G_a C_0 = 2048` with `C_0 = 1`). `H_a` is chosen so the
    /// realization stays all-pass for the printed `F_a`.
    pub fn printed_phase_example() -> Self {
        let a1 = 1.94e6;
        let g = 2048.0;
        DelayModel {
            fa: Mat::from_row_slice(2, 2, &[-a1, -1.19e6, 1.048e6, 0.0]),
            ga: Mat::from_row_slice(2, 1, &[g, 0.0]),
            ha: Mat::from_row_slice(1, 2, &[-2.0 * a1 / g, 0.0]),
            ja: Mat::from_element(1, 1, 1.0),
            delta: 3.1e-6,
            order: 2,
        }
    }

    /// Apply the same scalar delay independently to each of `m` channels.
    pub fn replicate(&self, m: usize) -> Self {
        let eye = Mat::identity(m, m);
        DelayModel {
            fa: eye.kronecker(&self.fa),
            ga: eye.kronecker(&self.ga),
            ha: eye.kronecker(&self.ha),
            ja: eye.kronecker(&self.ja),
            delta: self.delta,
            order: self.order,
        }
    }

    pub fn state_dim(&self) -> usize {
        self.fa.nrows()
    }

    pub fn signal_dim(&self) -> usize {
        self.ja.nrows()
    }

    /// `J_a + H_a (jω I - F_a)⁻¹ G_a`.
    pub fn frequency_response(&self, omega: f64) -> DMatrix<Complex64> {
        let na = self.state_dim();
        let ja = self.ja.map(|v| Complex64::new(v, 0.0));
        if na == 0 {
            return ja;
        }
        let mut sys = self.fa.map(|v| Complex64::new(-v, 0.0));
        for i in 0..na {
            sys[(i, i)] += Complex64::new(0.0, omega);
        }
        let ga = self.ga.map(|v| Complex64::new(v, 0.0));
        let ha = self.ha.map(|v| Complex64::new(v, 0.0));
        match sys.lu().solve(&ga) {
            Some(x) => ja + ha * x,
            None => DMatrix::from_element(self.signal_dim(), self.signal_dim(), Complex64::new(f64::NAN, f64::NAN)),
        }
    }

    /// `H_a (-F_a)⁻¹ G_a + J_a`.
    pub fn dc_gain(&self) -> Mat {
        if self.state_dim() == 0 {
            return self.ja.clone();
        }
        match (-&self.fa).lu().solve(&self.ga) {
            Some(x) => &self.ha * x + &self.ja,
            None => Mat::from_element(self.signal_dim(), self.signal_dim(), f64::NAN),
        }
    }

    /// `[J_a, H_a G_a, H_a F_a G_a, …]`, `count` entries.
    pub fn markov_parameters(&self, count: usize) -> Vec<Mat> {
        let mut out = Vec::with_capacity(count);
        if count == 0 {
            return out;
        }
        out.push(self.ja.clone());
        let mut fk_g = self.ga.clone();
        for _ in 1..count {
            out.push(&self.ha * &fk_g);
            fk_g = &self.fa * fk_g;
        }
        out
    }

    pub fn is_stable(&self) -> bool {
        self.state_dim() == 0 || numkernel::is_hurwitz(&self.fa)
    }

    /// Largest deviation of `|H(jω)|` from 1 on a grid over `[0, omega_max]`.
    pub fn all_pass_deviation(&self, omega_max: f64) -> f64 {
        frequency_grid(omega_max)
            .map(|w| {
                let h = self.frequency_response(w);
                (h[(0, 0)].norm() - 1.0).abs()
            })
            .fold(0.0, f64::max)
    }
}

fn frequency_grid(omega_max: f64) -> impl Iterator<Item = f64> {
    (0..RESPONSE_GRID).map(move |i| omega_max * i as f64 / (RESPONSE_GRID - 1) as f64)
}

/// Maximum of `|H(jω) − e^{-jωδ}|` over a uniform grid on `[0, omega_max]`
/// (the exact delay has unit magnitude, so this is also the relative error).
pub fn delay_response_error(model: &DelayModel, omega_max: f64) -> f64 {
    frequency_grid(omega_max)
        .map(|w| {
            let h = model.frequency_response(w)[(0, 0)];
            (h - Complex64::from_polar(1.0, -w * model.delta)).norm()
        })
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    const DELTA: f64 = 3.1e-6;

    #[test]
    fn rejects_bad_inputs() {
        assert!(matches!(pade_delay(2, 0.0), Err(Error::Domain(_))));
        assert!(matches!(pade_delay(2, -1e-6), Err(Error::Domain(_))));
        assert!(matches!(pade_delay(0, DELTA), Err(Error::Unsupported(_))));
        assert!(matches!(pade_delay(7, DELTA), Err(Error::Unsupported(_))));
    }

    #[test]
    fn second_order_denominator() {
        let a = pade_coefficients(2, DELTA);
        assert!((a[1] - 6.0 / DELTA).abs() / a[1] < 1e-14);
        assert!((a[0] - 12.0 / (DELTA * DELTA)).abs() / a[0] < 1e-14);
        assert!((a[1] - 1.9355e6).abs() / a[1] < 1e-4);
        assert!((a[0] - 1.2487e12).abs() / a[0] < 1e-4);
    }

    #[test]
    fn every_order_is_stable_unit_dc_all_pass() {
        for order in 1..=MAX_PADE_ORDER {
            for r in [Realization::Balanced, Realization::Companion] {
                let d = pade_delay_with(order, DELTA, r).unwrap();
                assert!(d.is_stable(), "order {order} {r:?} eig {:?}", numkernel::eigenvalues(&d.fa));
                assert!((d.dc_gain()[(0, 0)] - 1.0).abs() < 1e-9, "order {order}");
                assert!(d.all_pass_deviation(1e7) < 1e-8, "order {order} {r:?}");
            }
        }
    }

    #[test]
    fn phase_lag_at_10khz() {
        let d = pade_delay(2, DELTA).unwrap();
        let w = 2.0 * std::f64::consts::PI * 1e4;
        let lag = -d.frequency_response(w)[(0, 0)].arg();
        // analytic phase of (1 - x + x²/12·…) / (…): 2·atan(ωδ/2 / (1 - (ωδ)²/12))
        let x = w * DELTA;
        let analytic = 2.0 * (0.5 * x / (1.0 - x * x / 12.0)).atan();
        assert!((lag - analytic).abs() < 1e-12);
        assert!((lag - x).abs() / x < 0.01);
    }

    #[test]
    fn response_error_behaviour() {
        let d2 = pade_delay(2, DELTA).unwrap();
        let d4 = pade_delay(4, DELTA).unwrap();
        assert!(delay_response_error(&d2, 1e-3) < 1e-12);
        let w = 2.0 * std::f64::consts::PI * 1e4;
        let e2 = delay_response_error(&d2, w);
        assert!(e2 < 1e-3);
        assert!(delay_response_error(&d4, w) <= e2);
    }

    #[test]
    fn realizations_share_markov_parameters() {
        for order in 1..=4 {
            let a = pade_delay_with(order, DELTA, Realization::Balanced).unwrap();
            let b = pade_delay_with(order, DELTA, Realization::Companion).unwrap();
            for (ma, mb) in a.markov_parameters(2 * order + 1).iter().zip(b.markov_parameters(2 * order + 1)) {
                let scale = mb.norm().max(1e-300);
                assert!((ma - &mb).norm() / scale < 1e-9);
            }
        }
    }

    #[test]
    fn printed_realization_matches_printed_entries() {
        let d = DelayModel::printed_phase_example();
        assert!(d.is_stable());
        assert!((d.dc_gain()[(0, 0)] - 1.0).abs() < 1e-12);
        assert!(d.all_pass_deviation(1e7) < 1e-8);
        // 1.19e6 × 1.048e6 ≈ 12/δ²
        let prod = 1.19e6 * 1.048e6;
        assert!((prod - 12.0 / (DELTA * DELTA)).abs() / prod < 2e-3);
    }

    #[test]
    fn empty_and_replicated() {
        let e = DelayModel::none(2);
        assert_eq!(e.state_dim(), 0);
        assert_eq!(e.dc_gain(), Mat::identity(2, 2));
        let r = pade_delay(2, DELTA).unwrap().replicate(2);
        assert_eq!(r.state_dim(), 4);
        assert!((r.dc_gain() - Mat::identity(2, 2)).norm() < 1e-9);
    }
}
