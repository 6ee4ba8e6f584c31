//! Published figures for the homodyne phase-tracking example and helpers to
//! compare computed matrices against them.

use serde::Serialize;

use crate::model::CompactPlant;
use crate::numkernel::Mat;
use crate::synthesis::feasible;

pub const TAU: f64 = 1.13e-6;
pub const LAMBDA: [f64; 4] = [0.9727, 0.4831, 0.0015, 0.0014];
pub const COST_BOUND: f64 = 0.15;
pub const SMOOTHER_COVARIANCE: f64 = 0.0605;
pub const NGCF_COVARIANCE: f64 = 0.1031;
pub const DELAY: f64 = 3.1e-6;

pub fn ap() -> Mat {
    Mat::from_row_slice(3, 3, &[-9.14e3, 0.0, 0.0, 2048.0, -1.94e6, -1.19e6, 0.0, 1.048e6, 0.0])
}

pub fn ac() -> Mat {
    Mat::from_row_slice(
        3,
        3,
        &[-4.58e5, -0.09, -7.14, 1.93e3, -1.93e6, -1.19e6, -550.1, 1.0486e6, -0.01],
    )
}

pub fn bc() -> Mat {
    Mat::from_row_slice(3, 2, &[4.45e5, -190.97, 120.98, -0.052, 545.41, -0.233])
}

pub fn cc() -> Mat {
    Mat::from_row_slice(2, 3, &[1.02, 4.21e-7, 3.23e-5, 944.68, 3.9e-4, 0.0299])
}

/// The closed-form constraint list on `λ` for the example (`J = I`).
pub fn closed_form_feasible(l: &[f64]) -> bool {
    let [l1, l2, l3, l4] = [l[0], l[1], l[2], l[3]];
    l1 > 0.0
        && l2 > 0.0
        && l3 > 0.0
        && l4 > 0.0
        && l1 <= 1.0
        && l2 + l3 <= 1.0
        && l2 + l4 <= 1.0
        && (1.0 - l2 - l3) * (1.0 - l2 - l4) - l2 * l2 >= 0.0
}

#[derive(Debug, Clone, Serialize)]
pub struct GridAgreement {
    pub points: usize,
    pub feasible_points: usize,
    pub disagreements: Vec<Vec<f64>>,
}

/// Compare [`feasible`] with [`closed_form_feasible`] on the tensor grid `axis⁴`.
pub fn feasibility_grid_agreement(compact: &CompactPlant, axis: &[f64]) -> GridAgreement {
    let mut out = GridAgreement { points: 0, feasible_points: 0, disagreements: Vec::new() };
    for &a in axis {
        for &b in axis {
            for &c in axis {
                for &d in axis {
                    let l = [a, b, c, d];
                    let expected = closed_form_feasible(&l);
                    out.points += 1;
                    out.feasible_points += expected as usize;
                    if feasible(compact, &l).feasible != expected {
                        out.disagreements.push(l.to_vec());
                    }
                }
            }
        }
    }
    out
}

/// Ten values per axis, offset from the polytope's faces.
pub fn default_grid_axis() -> Vec<f64> {
    (0..10).map(|j| 0.037 + 0.1 * j as f64).collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct EntryCheck {
    pub row: usize,
    pub col: usize,
    pub computed: f64,
    pub printed: f64,
    pub rel_error: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct MatrixComparison {
    pub name: String,
    /// Entries whose printed magnitude exceeds `floor_fraction · ‖printed‖_F`.
    pub checked: Vec<EntryCheck>,
    pub skipped: usize,
    pub max_rel_error: f64,
    pub pass: bool,
}

/// Entrywise relative comparison on the entries that are significant in the printed matrix.
pub fn compare_entries(name: &str, computed: &Mat, printed: &Mat, rel_tol: f64, floor_fraction: f64) -> MatrixComparison {
    let floor = floor_fraction * printed.norm();
    let mut checked = Vec::new();
    let mut skipped = 0;
    let shape_ok = computed.shape() == printed.shape();
    if shape_ok {
        for i in 0..printed.nrows() {
            for j in 0..printed.ncols() {
                let p = printed[(i, j)];
                if p.abs() <= floor {
                    skipped += 1;
                    continue;
                }
                let c = computed[(i, j)];
                let rel = (c - p).abs() / p.abs();
                checked.push(EntryCheck { row: i, col: j, computed: c, printed: p, rel_error: rel, pass: rel <= rel_tol });
            }
        }
    }
    let max_rel_error = checked.iter().map(|e| e.rel_error).fold(0.0, f64::max);
    MatrixComparison {
        name: name.into(),
        pass: shape_ok && checked.iter().all(|e| e.pass),
        checked,
        skipped,
        max_rel_error,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn printed_point_satisfies_constraint_list() {
        assert!(closed_form_feasible(&LAMBDA));
        assert!(!closed_form_feasible(&[1.0; 4]));
    }

    #[test]
    fn comparison_skips_small_entries() {
        let p = Mat::from_row_slice(1, 3, &[100.0, 1e-4, -50.0]);
        let c = Mat::from_row_slice(1, 3, &[103.0, 7.0, -49.0]);
        let r = compare_entries("x", &c, &p, 0.05, 1e-3);
        assert_eq!((r.checked.len(), r.skipped), (2, 1));
        assert!(r.pass);
        assert!((r.max_rel_error - 0.03).abs() < 1e-12);
        assert!(!compare_entries("x", &c, &p, 0.01, 1e-3).pass);
    }
}
