//! The multiplier feasibility set of the homodyne example: the eigenvalue test
//! used by the synthesis against the closed-form constraint list.

use robust_smoother::delay::DelayModel;
use robust_smoother::model::{CompactPlant, PhaseParams, UncertainPlant};
use robust_smoother::reference::{default_grid_axis, feasibility_grid_agreement};
use robust_smoother::synthesis::{assemble_multipliers, feasible};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let compact = CompactPlant::from_plant(&UncertainPlant::phase_tracking(&PhaseParams::default()), &DelayModel::printed_phase_example())?;
    let lambda = [0.9727, 0.4831, 0.0015, 0.0014];
    println!("M(lambda) = {}", assemble_multipliers(&compact, &lambda)?.m);
    println!("margin {:.4e}", feasible(&compact, &lambda).margin);

    let g = feasibility_grid_agreement(&compact, &default_grid_axis());
    println!("{} grid points, {} feasible, {} disagreements", g.points, g.feasible_points, g.disagreements.len());
    for l2 in [0.3, 0.49, 0.5, 0.51] {
        println!("lambda = (1, {l2}, 1e-6, 1e-6): {}", feasible(&compact, &[1.0, l2, 1e-6, 1e-6]).feasible);
    }
    Ok(())
}
