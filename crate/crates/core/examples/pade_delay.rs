//! Padé realizations of a pure delay: coefficients, frequency response, and
//! the printed realization for the homodyne example.
//!
//! `cargo run --example pade_delay -- [order] [delta]`

use robust_smoother::delay::{delay_response_error, pade_coefficients, pade_delay_with, DelayModel, Realization};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let order: usize = args.next().map(|s| s.parse()).transpose()?.unwrap_or(2);
    let delta: f64 = args.next().map(|s| s.parse()).transpose()?.unwrap_or(3.1e-6);

    println!("denominator coefficients (monic): {:?}", pade_coefficients(order, delta));
    for r in [Realization::Balanced, Realization::Companion] {
        let m = pade_delay_with(order, delta, r)?;
        println!("\n{r:?}\nF_a = {}G_a = {}H_a = {}J_a = {}", m.fa, m.ga, m.ha, m.ja);
        println!("dc gain {:.3e}, all-pass deviation {:.3e}", m.dc_gain()[(0, 0)], m.all_pass_deviation(1e3 / delta));
    }

    let m = pade_delay_with(order, delta, Realization::Balanced)?;
    println!("\nphase error against e^(-s delta):");
    for k in [0.1, 0.5, 1.0, 2.0] {
        println!("  omega <= {k:>4} / delta: {:.3e}", delay_response_error(&m, k / delta));
    }

    let p = DelayModel::printed_phase_example();
    println!("\nprinted realization: F_a = {}all-pass deviation {:.3e}", p.fa, p.all_pass_deviation(1e3 / p.delta));
    Ok(())
}
