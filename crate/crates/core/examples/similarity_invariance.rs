//! The cost bound and the smoothing covariance depend only on the input-output
//! behaviour of the delay model, not on its state coordinates.

use robust_smoother::covariance::{build_closed_loop, smoothed_error_covariance, structured_delta};
use robust_smoother::delay::{pade_delay_with, DelayModel, Realization};
use robust_smoother::model::{CompactPlant, PhaseParams, UncertainPlant};
use robust_smoother::synthesis::{synthesize, ScalingPoint, SynthesisOptions};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let plant = UncertainPlant::phase_tracking(&PhaseParams::default());
    let point = ScalingPoint::printed_phase_example();
    let models = [
        ("printed", DelayModel::printed_phase_example()),
        ("balanced", pade_delay_with(2, 3.1e-6, Realization::Balanced)?),
        ("companion", pade_delay_with(2, 3.1e-6, Realization::Companion)?),
    ];
    for (name, delay) in models {
        let compact = CompactPlant::from_plant(&plant, &delay)?;
        let sol = synthesize(&compact, &point, &SynthesisOptions::default())?;
        let cl = build_closed_loop(&compact, &sol, &structured_delta(&compact, 0.0, -1.0))?;
        let rep = smoothed_error_covariance(&cl, 3.1e-6)?;
        println!("{name:>9}: V = {:.6}, Psa(-1) = {:.6}, Pf(-1) = {:.6}, B_c[0,0] = {:.4e}", sol.vtau, rep.psa_scalar(), rep.pf_scalar(), sol.bc[(0, 0)]);
    }
    Ok(())
}
