//! Smoothed and filtered error covariances of the uncertain closed loop as the
//! nonlinearity gain runs over [-1, 0], with and without the fictitious noise
//! channel driving the estimator.

use robust_smoother::covariance::{default_grid, delta_sweep, sweep_properties, SweepOptions};
use robust_smoother::delay::DelayModel;
use robust_smoother::model::{CompactPlant, PhaseParams, UncertainPlant};
use robust_smoother::synthesis::{synthesize, ScalingPoint, SynthesisOptions};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let compact = CompactPlant::from_plant(&UncertainPlant::phase_tracking(&PhaseParams::default()), &DelayModel::printed_phase_example())?;
    let sol = synthesize(&compact, &ScalingPoint::printed_phase_example(), &SynthesisOptions::default())?;

    for fictitious_noise in [true, false] {
        let opts = SweepOptions { lag: 3.1e-6, fictitious_noise, delta1: 0.0 };
        let rows = delta_sweep(&compact, &sol, &default_grid(11), &opts)?;
        println!("fictitious noise {fictitious_noise}");
        println!("{:>7} {:>9} {:>9}", "delta2", "psa", "pf");
        for r in &rows {
            println!("{:>7.2} {:>9.5} {:>9.5}", r.delta2, r.psa, r.pf);
        }
        println!("{:?}\n", sweep_properties(&rows, 1e-9));
    }
    Ok(())
}
