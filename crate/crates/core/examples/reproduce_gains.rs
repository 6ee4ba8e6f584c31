//! Estimator matrices at the reported scaling point, in the printed delay
//! coordinates, against the published values.

use std::time::Instant;

use robust_smoother::cli::Certificates;
use robust_smoother::delay::DelayModel;
use robust_smoother::model::{CompactPlant, PhaseParams, UncertainPlant};
use robust_smoother::reference::{self, compare_entries};
use robust_smoother::synthesis::{synthesize, ScalingPoint, SynthesisOptions};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let start = Instant::now();
    let compact = CompactPlant::from_plant(&UncertainPlant::phase_tracking(&PhaseParams::default()), &DelayModel::printed_phase_example())?;
    let sol = synthesize(&compact, &ScalingPoint::printed_phase_example(), &SynthesisOptions::default())?;
    let elapsed = start.elapsed();

    for (name, got, want) in [("A_c", &sol.ac, reference::ac()), ("B_c", &sol.bc, reference::bc()), ("C_c", &sol.cc, reference::cc())] {
        let c = compare_entries(name, got, &want, 0.05, 1e-3);
        for e in &c.checked {
            println!("  {name}[{},{}] {:>12.5e} vs {:>12.5e}", e.row, e.col, e.computed, e.printed);
        }
        println!("{name}: max rel error {:.2e} on {} entries ({} skipped) -> {}", c.max_rel_error, c.checked.len(), c.skipped, if c.pass { "ok" } else { "MISMATCH" });
    }
    let max_real = robust_smoother::numkernel::max_real_eigenvalue(&sol.ac).max(robust_smoother::numkernel::max_real_eigenvalue(&compact.ap));
    println!("{:#?}", Certificates::of(&sol, max_real));
    println!("V = {:.4} (published {}), synthesized in {elapsed:.2?}", sol.vtau, reference::COST_BOUND);
    Ok(())
}
