//! Minimize the guaranteed cost bound for the homodyne phase-tracking loop
//! and print the resulting filter and smoother gains.

use std::time::Instant;

use robust_smoother::delay::DelayModel;
use robust_smoother::model::{CompactPlant, PhaseParams, UncertainPlant};
use robust_smoother::synthesis::{minimize_bound, ScalingPoint, SearchOptions, SynthesisOptions};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let plant = UncertainPlant::phase_tracking(&PhaseParams::default());
    let compact = CompactPlant::from_plant(&plant, &DelayModel::printed_phase_example())?;

    let start = Instant::now();
    let found = minimize_bound(
        &compact,
        &ScalingPoint::printed_phase_example(),
        &SynthesisOptions::default(),
        &SearchOptions::default(),
    )?;
    let s = &found.best;
    println!("V = {:.4} at tau = {:.4e}, lambda = {:?}", s.vtau, s.point.tau, s.point.lambda);
    println!("starts: {:?}", found.start_values);
    println!("{} evaluations in {:.2?}", found.evaluations, start.elapsed());
    println!("rho(YX) = {:.3e}", s.rho_yx);
    println!("filter gain {}", s.filter_gain());
    println!("smoother gain {}", s.smoother_gain());
    println!("Cc {}", s.cc);
    Ok(())
}
