//! Monte Carlo error covariance of the homodyne loop with the estimator
//! synthesized at the reported scaling point.
//!
//! `cargo run --release --example monte_carlo -- [runs] [seed]`

use std::time::Instant;

use robust_smoother::delay::DelayModel;
use robust_smoother::model::{CompactPlant, PhaseParams, UncertainPlant};
use robust_smoother::sim::{monte_carlo_both, EstimatorGains, SimConfig};
use robust_smoother::synthesis::{synthesize, ScalingPoint, SynthesisOptions};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let runs = args.next().map(|s| s.parse()).transpose()?.unwrap_or(2000);
    let seed = args.next().map(|s| s.parse()).transpose()?.unwrap_or(42);

    let params = PhaseParams::default();
    let compact = CompactPlant::from_plant(&UncertainPlant::phase_tracking(&params), &DelayModel::printed_phase_example())?;
    let sol = synthesize(&compact, &ScalingPoint::printed_phase_example(), &SynthesisOptions::default())?;
    let gains = EstimatorGains::from_solution(&sol, &compact)?;

    let cfg = SimConfig { runs, master_seed: seed, ..SimConfig::with_params(&params) };
    let start = Instant::now();
    let (filter, smoother) = monte_carlo_both(&cfg, &gains)?;
    println!("{runs} runs of {} steps in {:.1?}", cfg.steps(), start.elapsed());
    for r in [&filter, &smoother] {
        println!(
            "{:?}: {:.4} ± {:.4} (divergent {}, sector exits in {} runs)",
            r.estimator, r.error_covariance, r.standard_error, r.divergent_runs, r.runs_with_sector_exits
        );
    }
    println!("ratio {:.3}", filter.error_covariance / smoother.error_covariance);
    Ok(())
}
